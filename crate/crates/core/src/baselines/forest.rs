//! Bagged regression trees with squared-error splits.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{KanError, Result};
use crate::rng;

const BOOTSTRAP_STREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes stored flat; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Number of splits on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { feature, .. } => Some(*feature),
                TreeNode::Leaf { .. } => None,
            })
            .max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Reduction of the summed squared error.
    pub gain: f64,
}

/// Best squared-error split of the samples `idx`, scanning every feature and
/// every midpoint between consecutive distinct values. Ties keep the first
/// candidate in (feature, threshold) order. `None` when nothing reduces the
/// error.
pub fn best_split(xs: &[Vec<f64>], ys: &[f64], idx: &[usize]) -> Option<Split> {
    if idx.len() < 2 {
        return None;
    }
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| ys[i]).sum::<f64>() / n;
    let total_sum: f64 = idx.iter().map(|&i| ys[i] - mean).sum();
    let total_sq: f64 = idx.iter().map(|&i| (ys[i] - mean) * (ys[i] - mean)).sum();
    let parent_sse = total_sq - total_sum * total_sum / n;
    let features = xs[idx[0]].len();

    let mut best: Option<Split> = None;
    let mut order = idx.to_vec();
    for f in 0..features {
        order.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]));
        let mut sum = 0.0;
        let mut sq = 0.0;
        for k in 0..order.len() - 1 {
            let y = ys[order[k]] - mean;
            sum += y;
            sq += y * y;
            let here = xs[order[k]][f];
            let next = xs[order[k + 1]][f];
            if here == next {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = n - nl;
            let left = sq - sum * sum / nl;
            let rsum = total_sum - sum;
            let right = (total_sq - sq) - rsum * rsum / nr;
            let gain = parent_sse - left - right;
            if gain > 1e-12 * parent_sse.max(f64::MIN_POSITIVE) && best.is_none_or(|b| gain > b.gain) {
                best = Some(Split {
                    feature: f,
                    threshold: here + (next - here) / 2.0,
                    gain,
                });
            }
        }
    }
    best
}

fn grow(
    xs: &[Vec<f64>],
    ys: &[f64],
    idx: &[usize],
    depth: usize,
    max_depth: usize,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let at = nodes.len();
    let mean = idx.iter().map(|&i| ys[i]).sum::<f64>() / idx.len() as f64;
    nodes.push(TreeNode::Leaf { value: mean });
    if depth >= max_depth {
        return at;
    }
    let Some(split) = best_split(xs, ys, idx) else {
        return at;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| xs[i][split.feature] <= split.threshold);
    let left = grow(xs, ys, &l, depth + 1, max_depth, nodes);
    let right = grow(xs, ys, &r, depth + 1, max_depth, nodes);
    nodes[at] = TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    at
}

/// Fits one tree on the rows listed in `idx` (repeats allowed).
pub fn fit_tree(xs: &[Vec<f64>], ys: &[f64], idx: &[usize], max_depth: usize) -> Result<RegressionTree> {
    if idx.is_empty() {
        return Err(KanError::InvalidInput("cannot fit a tree on no samples".into()));
    }
    let mut nodes = Vec::new();
    grow(xs, ys, idx, 0, max_depth, &mut nodes);
    Ok(RegressionTree { nodes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 10,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
}

impl ForestModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(KanError::shape("forest input", self.n_features, x.len()));
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(KanError::Schema("forest without trees".into()));
        }
        for t in &self.trees {
            if t.nodes.is_empty() {
                return Err(KanError::Schema("tree without nodes".into()));
            }
            for node in &t.nodes {
                if let TreeNode::Split { feature, left, right, .. } = *node {
                    if feature >= self.n_features || left >= t.nodes.len() || right >= t.nodes.len() {
                        return Err(KanError::Schema("tree node out of range".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Trains `cfg.n_trees` trees. Tree `t` draws its bootstrap sample from
/// seed `cfg.seed + t`.
pub fn train_forest(xs: &[Vec<f64>], ys: &[f64], cfg: &ForestConfig) -> Result<ForestModel> {
    if xs.len() != ys.len() {
        return Err(KanError::shape("forest targets", xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(KanError::InvalidInput(format!(
            "forest needs at least 2 samples, got {}",
            xs.len()
        )));
    }
    if cfg.n_trees == 0 {
        return Err(KanError::InvalidArgument("forest needs at least one tree".into()));
    }
    let n_features = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != n_features) {
        return Err(KanError::shape("forest input", n_features, bad.len()));
    }
    let n = xs.len();
    let trees = (0..cfg.n_trees)
        .map(|t| {
            let idx: Vec<usize> = if cfg.bootstrap {
                let mut rng = rng::stream(cfg.seed.wrapping_add(t as u64), BOOTSTRAP_STREAM);
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree(xs, ys, &idx, cfg.max_depth)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        config: cfg.clone(),
        n_features,
        trees,
    })
}
