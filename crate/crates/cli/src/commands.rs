use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use kanforge::baselines::ForestConfig;
use kanforge::checkpoint::{write_json, Checkpoint, TIMESTAMP_KEY};
use kanforge::compare::{run_compare, CompareConfig};
use kanforge::dataset::{generate_synthetic, mse, split, Normalizer, PumpDataset, Samples, Scaling, SplitIndices};
use kanforge::prune::{prune, PruneConfig};
use kanforge::symbolic::extract_formula;
use kanforge::training::{predict_all, train, KanArch, TrainConfig};
use kanforge::viz;
use kanforge::{KanModel, Target, TrainTrace};
use serde_json::Value;

use crate::{
    Cli, Command, CompareArgs, DataArgs, GenArgs, PlotSplinesArgs, PlotTraceArgs, PruneArgs, RefineArgs,
    SymbolifyArgs, TrainArgs,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<kanforge::KanError> for CliError {
    fn from(e: kanforge::KanError) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn run(cli: Cli) -> CliResult {
    let seed = cli.seed;
    match cli.command {
        Command::Gen(a) => gen(a, seed),
        Command::Train(a) => cmd_train(a, seed),
        Command::Prune(a) => cmd_prune(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Symbolify(a) => cmd_symbolify(a),
        Command::Compare(a) => cmd_compare(a, seed),
        Command::PlotSplines(a) => cmd_plot_splines(a),
        Command::PlotTrace(a) => cmd_plot_trace(a),
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn require_file(path: &Path, what: &str) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} file not found: {}", path.display())))
    }
}

fn load_data(path: &Path) -> CliResult<PumpDataset> {
    require_file(path, "data")?;
    Ok(PumpDataset::load_csv(path)?)
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    require_file(path, "model")?;
    Ok(Checkpoint::load(path)?)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(CliError::Runtime)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn parse_target(s: &str) -> CliResult<Target> {
    s.parse().map_err(|e: kanforge::KanError| usage(e.to_string()))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| usage(format!("bad {what} `{s}`"))))
        .collect()
}

/// Split and target recorded in a checkpoint's metadata.
struct DataContext {
    target: Target,
    split: SplitIndices,
}

fn context_from_meta(ckpt: &Checkpoint, ds: &PumpDataset) -> CliResult<DataContext> {
    let meta = &ckpt.metadata;
    let target = meta
        .get("target")
        .and_then(Value::as_str)
        .ok_or_else(|| CliError::Runtime(anyhow!("checkpoint metadata lacks `target`")))?;
    let target = target.parse::<Target>().map_err(|e| CliError::Runtime(e.into()))?;
    let split_seed = meta
        .get("split_seed")
        .and_then(Value::as_u64)
        .ok_or_else(|| CliError::Runtime(anyhow!("checkpoint metadata lacks `split_seed`")))?;
    let fraction = meta
        .get("train_fraction")
        .and_then(Value::as_f64)
        .ok_or_else(|| CliError::Runtime(anyhow!("checkpoint metadata lacks `train_fraction`")))?;
    Ok(DataContext {
        target,
        split: split(ds.len(), fraction, split_seed)?,
    })
}

fn samples(ds: &PumpDataset, idx: &[usize], target: Target) -> CliResult<Samples> {
    Ok(ds.select(idx, target, &Normalizer::pump(), Scaling::Symmetric)?)
}

fn stage_mse(model: &KanModel, set: &Samples) -> CliResult<f64> {
    if set.is_empty() {
        return Ok(f64::NAN);
    }
    Ok(mse(&predict_all(model, &set.xs)?, &set.ys)?)
}

/// Copies the data context forward and stamps stage metrics.
fn derived_checkpoint(model: &KanModel, parent: &Checkpoint, stage: &str, train_mse: f64, test_mse: f64) -> Checkpoint {
    let mut ckpt = Checkpoint::kan(model);
    ckpt.metadata = parent.metadata.clone();
    ckpt.metadata.insert(TIMESTAMP_KEY.into(), Value::from(now_unix()));
    ckpt.with_meta("stage", stage)
        .with_meta("train_mse", train_mse)
        .with_meta("test_mse", test_mse)
}

fn gen(a: GenArgs, seed: u64) -> CliResult {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let noise = parse_list::<f64>(&a.noise, "noise")?;
    let [p, f] = noise[..] else {
        return Err(usage(format!("--noise needs two values `pressure,flow`, got `{}`", a.noise)));
    };
    if !(p >= 0.0 && f >= 0.0) {
        return Err(usage("noise sigmas must be non-negative"));
    }
    let ds = generate_synthetic(a.n, (p, f), seed)?;
    let comment = format!("synthetic pump data: seed={seed} n={} noise={p},{f}", a.n);
    write_text(&a.out, &ds.to_csv(Some(&comment)))?;
    println!("wrote {} rows to {}", a.n, a.out.display());
    Ok(())
}

fn split_for(data: &DataArgs, n: usize, seed: u64) -> CliResult<(u64, SplitIndices)> {
    if !(data.train_fraction > 0.0 && data.train_fraction < 1.0) {
        return Err(usage("--train-fraction must lie in (0, 1)"));
    }
    let split_seed = data.split_seed.unwrap_or(seed);
    Ok((split_seed, split(n, data.train_fraction, split_seed)?))
}

fn cmd_train(a: TrainArgs, seed: u64) -> CliResult {
    let target = parse_target(&a.target)?;
    let mut arch = KanArch::reference(target);
    arch.seed = seed;
    if let Some(w) = &a.width {
        arch.widths = parse_list(w, "width")?;
    }
    if let Some(g) = a.grid {
        arch.grid = g;
    }
    if let Some(k) = a.k {
        arch.degree = k;
    }
    if arch.widths.first() != Some(&5) || arch.widths.last() != Some(&1) {
        return Err(usage(format!("--width must start with 5 and end with 1, got {:?}", arch.widths)));
    }
    if !(a.lambda >= 0.0) {
        return Err(usage("--lambda must be non-negative"));
    }
    if a.max_iters == 0 {
        return Err(usage("--max-iters must be at least 1"));
    }
    let ds = load_data(&a.data.data)?;
    let (split_seed, sp) = split_for(&a.data, ds.len(), seed)?;
    let train_set = samples(&ds, &sp.train, target)?;
    let test_set = samples(&ds, &sp.test, target)?;

    let cfg = TrainConfig {
        max_iters: a.max_iters,
        lambda_sparsity: a.lambda,
        lambda_entropy: a.lambda,
        seed,
        ..TrainConfig::default()
    };
    let model = arch.build().map_err(|e| usage(e.to_string()))?;
    let out = train(&model, &train_set.xs, &train_set.ys, &cfg)?;
    let model = out.model.with_normalizer(Normalizer::pump());
    let train_mse = stage_mse(&model, &train_set)?;
    let test_mse = stage_mse(&model, &test_set)?;

    let ckpt = Checkpoint::kan(&model)
        .with_meta("stage", "sparse")
        .with_meta("target", target.name())
        .with_meta("data", a.data.data.display().to_string())
        .with_meta("split_seed", split_seed)
        .with_meta("train_fraction", a.data.train_fraction)
        .with_meta("lambda", a.lambda)
        .with_meta("max_iters", a.max_iters)
        .with_meta("train_mse", train_mse)
        .with_meta("test_mse", test_mse)
        .with_meta(TIMESTAMP_KEY, now_unix());
    ckpt.save(&a.out)?;
    let trace_path = a.trace.unwrap_or_else(|| with_suffix(&a.out, ".trace.csv"));
    write_text(&trace_path, &out.trace.to_csv())?;
    println!(
        "trained {:?} G={} k={} ({:?}, {} iterations): train mse {train_mse:.6e}, test mse {test_mse:.6e}",
        model.widths(),
        model.grid_intervals(),
        model.degree(),
        out.termination,
        out.trace.records.len().saturating_sub(1),
    );
    Ok(())
}

fn cmd_prune(a: PruneArgs) -> CliResult {
    if !(a.theta > 0.0) {
        return Err(usage("--theta must be positive"));
    }
    let ckpt = load_checkpoint(&a.model)?;
    let model = ckpt.kan_model()?;
    let ds = load_data(&a.data)?;
    let ctx = context_from_meta(&ckpt, &ds)?;
    let train_set = samples(&ds, &ctx.split.train, ctx.target)?;
    let test_set = samples(&ds, &ctx.split.test, ctx.target)?;
    let (pruned, report) = prune(&model, &train_set.xs, &PruneConfig { theta: a.theta })?;
    let train_mse = stage_mse(&pruned, &train_set)?;
    let test_mse = stage_mse(&pruned, &test_set)?;
    derived_checkpoint(&pruned, &ckpt, "pruned", train_mse, test_mse)
        .with_meta("theta", a.theta)
        .save(&a.out)?;
    let report_path = a.report.unwrap_or_else(|| with_suffix(&a.out, ".prune.json"));
    write_json(&report_path, &report)?;
    for h in &report.hidden {
        if h.guard_applied {
            println!("layer {}: every node below theta, kept the strongest one", h.layer);
        }
    }
    println!(
        "pruned {:?} -> {:?}: train mse {train_mse:.6e}, test mse {test_mse:.6e}",
        report.widths_before, report.widths_after
    );
    Ok(())
}

fn cmd_refine(a: RefineArgs) -> CliResult {
    if a.max_iters == 0 {
        return Err(usage("--max-iters must be at least 1"));
    }
    let ckpt = load_checkpoint(&a.model)?;
    let model = ckpt.kan_model()?;
    let ds = load_data(&a.data)?;
    let ctx = context_from_meta(&ckpt, &ds)?;
    let train_set = samples(&ds, &ctx.split.train, ctx.target)?;
    let test_set = samples(&ds, &ctx.split.test, ctx.target)?;
    let seed = model.seed();
    let cfg = TrainConfig {
        max_iters: a.max_iters,
        seed,
        ..TrainConfig::default()
    }
    .unregularized();
    let out = train(&model, &train_set.xs, &train_set.ys, &cfg)?;
    let refined = out.model;
    let train_mse = stage_mse(&refined, &train_set)?;
    let test_mse = stage_mse(&refined, &test_set)?;
    derived_checkpoint(&refined, &ckpt, "refined", train_mse, test_mse).save(&a.out)?;
    let trace_path = a.trace.unwrap_or_else(|| with_suffix(&a.out, ".trace.csv"));
    write_text(&trace_path, &out.trace.to_csv())?;
    println!("refined {:?}: train mse {train_mse:.6e}, test mse {test_mse:.6e}", refined.widths());
    Ok(())
}

fn cmd_symbolify(a: SymbolifyArgs) -> CliResult {
    let ckpt = load_checkpoint(&a.model)?;
    let model = ckpt.kan_model()?;
    let ds = load_data(&a.data)?;
    let ctx = context_from_meta(&ckpt, &ds)?;
    let train_set = samples(&ds, &ctx.split.train, ctx.target)?;
    let formula = extract_formula(&model, &train_set.xs)?;
    let formula = if a.unit_inputs {
        formula.in_unit_inputs()
    } else {
        formula
    };
    let infix = formula.to_infix();
    write_text(&with_suffix(&a.out, ".txt"), &format!("{infix}\n"))?;
    let mut json = formula.to_json();
    json["inputs"] = Value::from(if a.unit_inputs { "unit" } else { "symmetric" });
    write_json(with_suffix(&a.out, ".json"), &json)?;

    println!("{:<6} {:<4} {:<4} {:<14} {:>12}", "layer", "in", "out", "primitive", "r2");
    for e in &formula.edges {
        println!(
            "{:<6} {:<4} {:<4} {:<14} {:>12.8}",
            e.layer,
            e.input,
            e.output,
            e.best.primitive.name(),
            e.r2
        );
    }
    println!("formula: {infix}");
    println!("fidelity mse {:.6e}", formula.fidelity_mse);
    if formula.low_fidelity {
        println!("warning: at least one edge fits poorly; formula is low fidelity");
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs, seed: u64) -> CliResult {
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        return Err(usage("--train-fraction must lie in (0, 1)"));
    }
    let ds = load_data(&a.data)?;
    let mut cfg = CompareConfig {
        split_seed: seed,
        train_fraction: a.train_fraction,
        forest: ForestConfig {
            seed,
            ..ForestConfig::default()
        },
        ..CompareConfig::default()
    };
    cfg.kan.sparse.seed = seed;
    cfg.kan.refine.seed = seed;
    cfg.mlp.seed = seed;
    let mut report = run_compare(&ds, &cfg)?;
    report
        .metadata
        .insert("data".into(), Value::from(a.data.display().to_string()));
    report.metadata.insert(TIMESTAMP_KEY.into(), Value::from(now_unix()));
    write_json(&a.out, &report)?;
    print!("{}", report.to_table());
    println!("test rows: {:?}", report.rows[0].test_indices);
    Ok(())
}

fn cmd_plot_splines(a: PlotSplinesArgs) -> CliResult {
    let ckpt = load_checkpoint(&a.model)?;
    let model = ckpt.kan_model()?;
    let stats = match &a.data {
        Some(path) => {
            let ds = load_data(path)?;
            let ctx = context_from_meta(&ckpt, &ds)?;
            let train_set = samples(&ds, &ctx.split.train, ctx.target)?;
            Some(model.activation_stats(&train_set.xs)?)
        }
        None => None,
    };
    fs::create_dir_all(&a.out)
        .with_context(|| format!("cannot create {}", a.out.display()))
        .map_err(CliError::Runtime)?;
    for l in 0..model.layers().len() {
        let path = a.out.join(format!("layer{l}.svg"));
        write_text(&path, &viz::layer_splines_svg(&model, l)?)?;
        println!("wrote {}", path.display());
    }
    let path = a.out.join("network.svg");
    write_text(&path, &viz::network_svg(&model, stats.as_deref())?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_plot_trace(a: PlotTraceArgs) -> CliResult {
    require_file(&a.trace, "trace")?;
    let text = fs::read_to_string(&a.trace)
        .with_context(|| format!("cannot read {}", a.trace.display()))
        .map_err(CliError::Runtime)?;
    let trace = TrainTrace::from_csv(&text)?;
    write_text(&a.out, &viz::trace_svg(&trace, &a.title)?)?;
    println!("wrote {}", a.out.display());
    Ok(())
}
