use kanforge::baselines::forest::{best_split, fit_tree};
use kanforge::baselines::{train_forest, ForestConfig};
use kanforge::dataset::{split, Normalizer};
use kanforge::prune::{prune, PruneConfig};
use kanforge::spline::{linspace, SplineGrid};
use kanforge::symbolic::{fit_affine, Primitive};
use kanforge::KanModel;
use proptest::prelude::*;

/// Cox-de Boor recursion straight from the knot vector.
fn cox_de_boor(knots: &[f64], i: usize, k: usize, x: f64) -> f64 {
    if k == 0 {
        return if knots[i] <= x && x < knots[i + 1] { 1.0 } else { 0.0 };
    }
    let left = (x - knots[i]) / (knots[i + k] - knots[i]) * cox_de_boor(knots, i, k - 1, x);
    let right =
        (knots[i + k + 1] - x) / (knots[i + k + 1] - knots[i + 1]) * cox_de_boor(knots, i + 1, k - 1, x);
    left + right
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn basis_is_a_partition_of_unity(g in 1usize..12, k in 1usize..5, t in 0.0f64..1.0) {
        let grid = SplineGrid::symmetric(g, k).unwrap();
        let (lo, hi) = grid.domain();
        let x = lo + t * (hi - lo);
        let b = grid.basis(x).unwrap();
        prop_assert_eq!(b.len(), g + k);
        prop_assert!(b.iter().all(|&v| v >= -1e-15));
        prop_assert!((b.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn basis_matches_cox_de_boor(g in 1usize..10, k in 0usize..5, t in 0.0f64..0.999) {
        let grid = SplineGrid::uniform(g, k, -2.0, 3.0).unwrap();
        let x = -2.0 + t * 5.0;
        let b = grid.basis(x).unwrap();
        for (i, v) in b.iter().enumerate() {
            let oracle = cox_de_boor(grid.knots(), i, k, x);
            prop_assert!((v - oracle).abs() <= 1e-12, "B_{} = {} vs {}", i, v, oracle);
        }
    }

    #[test]
    fn normalizer_round_trips(raw in proptest::collection::vec(-100.0f64..100.0, 5)) {
        let norm = Normalizer::pump();
        let back = norm.from_unit(&norm.to_unit(&raw).unwrap()).unwrap();
        for (a, b) in raw.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        let sym = norm.to_symmetric(&raw).unwrap();
        let unit = norm.to_unit(&raw).unwrap();
        for (s, u) in sym.iter().zip(&unit) {
            prop_assert!((s - (2.0 * u - 1.0)).abs() <= 1e-12);
        }
    }

    #[test]
    fn split_partitions_the_indices(n in 2usize..300, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let n_train = (n as f64 * frac).round() as usize;
        prop_assume!(n_train > 0 && n_train < n);
        let s = split(n, frac, seed).unwrap();
        prop_assert_eq!(s.train.len(), n_train);
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split(n, frac, seed).unwrap(), s);
    }

    #[test]
    fn best_split_matches_exhaustive_search(
        rows in proptest::collection::vec((0u8..6, 0u8..6, -5.0f64..5.0), 2..20)
    ) {
        let xs: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0 as f64, r.1 as f64]).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let idx: Vec<usize> = (0..xs.len()).collect();
        let sse = |ids: &[usize]| {
            if ids.is_empty() {
                return 0.0;
            }
            let m = ids.iter().map(|&i| ys[i]).sum::<f64>() / ids.len() as f64;
            ids.iter().map(|&i| (ys[i] - m).powi(2)).sum::<f64>()
        };
        let parent = sse(&idx);
        let mut best = 0.0f64;
        for f in 0..2 {
            for t in 0..6 {
                let th = t as f64 + 0.5;
                let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| xs[i][f] <= th);
                if l.is_empty() || r.is_empty() {
                    continue;
                }
                best = best.max(parent - sse(&l) - sse(&r));
            }
        }
        match best_split(&xs, &ys, &idx) {
            Some(s) => {
                prop_assert!((s.gain - best).abs() <= 1e-9 * parent.max(1.0), "gain {} vs {}", s.gain, best);
                let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| xs[i][s.feature] <= s.threshold);
                prop_assert!((parent - sse(&l) - sse(&r) - s.gain).abs() <= 1e-9 * parent.max(1.0));
            }
            None => prop_assert!(best <= 1e-9 * parent.max(1.0)),
        }
    }

    #[test]
    fn tree_depth_is_bounded(
        rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 2..80),
        depth in 0usize..12,
    ) {
        let ys: Vec<f64> = rows.iter().map(|r| r[0] * 3.0 + r[1].sin() - r[2] * r[3]).collect();
        let idx: Vec<usize> = (0..rows.len()).collect();
        let tree = fit_tree(&rows, &ys, &idx, depth).unwrap();
        prop_assert!(tree.depth() <= depth);
    }

    #[test]
    fn forest_predicts_mean_of_its_trees(
        rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 5..40),
        seed in 0u64..1000,
    ) {
        let ys: Vec<f64> = rows.iter().map(|r| r[0] - 2.0 * r[1] * r[2]).collect();
        let cfg = ForestConfig { n_trees: 7, seed, ..ForestConfig::default() };
        let forest = train_forest(&rows, &ys, &cfg).unwrap();
        prop_assert_eq!(forest.trees.len(), 7);
        for x in rows.iter().take(5) {
            let mean = forest.trees.iter().map(|t| t.predict(x)).sum::<f64>() / 7.0;
            prop_assert!((forest.predict(x).unwrap() - mean).abs() <= 1e-12);
            prop_assert!(forest.trees.iter().all(|t| t.depth() <= 10));
        }
    }

    #[test]
    fn pruning_never_grows_and_respects_the_guard(theta in 1e-6f64..10.0, seed in 0u64..50) {
        let model = KanModel::new(&[3, 4, 3, 1], 3, 3, seed).unwrap();
        let xs: Vec<Vec<f64>> = linspace(-1.0, 1.0, 15).iter().map(|&t| vec![t, -t, t * t]).collect();
        let (pruned, report) = prune(&model, &xs, &PruneConfig { theta }).unwrap();
        prop_assert_eq!(pruned.widths(), &report.widths_after[..]);
        prop_assert_eq!(report.widths_after[0], 3);
        prop_assert_eq!(*report.widths_after.last().unwrap(), 1);
        for (a, b) in report.widths_after.iter().zip(&report.widths_before) {
            prop_assert!(a >= &1 && a <= b);
        }
        let (twice, _) = prune(&pruned, &xs, &PruneConfig { theta: theta * 2.0 }).unwrap();
        for (a, b) in twice.widths().iter().zip(pruned.widths()) {
            prop_assert!(a <= b);
        }
    }
}

fn draw(p: Primitive, rng: &mut impl rand::Rng) -> (f64, f64, f64, f64) {
    let (a_lo, a_hi, b_lo, b_hi) = match p {
        Primitive::LogShifted => (0.3, 0.7, 0.0, 0.3),
        Primitive::Sin => (2.0, 3.0, -0.5, 0.5),
        _ => (1.0, 2.5, -0.5, 0.5),
    };
    let c = rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    (rng.random_range(a_lo..a_hi), rng.random_range(b_lo..b_hi), c, rng.random_range(-1.0..1.0))
}

proptest! {
    // Each case checks all primitives, so every primitive sees 20 draws.
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn fit_affine_recovers_each_primitive(seed in any::<u64>()) {
        let mut rng = kanforge::rng::seeded(seed);
        let xs = linspace(-1.0, 1.0, 101);
        for p in Primitive::ALL {
            let (a, b, c, d) = draw(p, &mut rng);
            let ys: Vec<f64> = xs.iter().map(|&x| c * p.apply(a * x + b) + d).collect();
            let (wrap, r2) = fit_affine(p, &xs, &ys).unwrap();
            prop_assert!(r2 >= 0.999, "{}(a={}, b={}) r2 {}", p, a, b, r2);
            let err = xs.iter().zip(&ys).map(|(&x, &y)| (wrap.eval(x) - y).abs()).fold(0.0, f64::max);
            let span = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - ys.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!(err <= 0.05 * span.max(1e-9));
        }
    }
}
