//! Command-line surface of the `modens` binary.
//!
//! Every command resolves its configuration (defaults, then `--config`,
//! then `--set KEY=VALUE`, then dedicated flags), writes its outputs under
//! `--out` and finishes with a `<command>.manifest` that `--config` can
//! replay. With `--threads 1` outputs are reproduced byte for byte.

pub mod config;
pub mod experiments;
pub mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::bayesopt::{run_bo, BOConfig, BOTrace};
use crate::data::manifest::{read_key_values, DatasetManifest};
use crate::data::synth::toy_grid;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{fisher_combine, mean_sd, paired_t_test_one_tailed};
use crate::exec::{configure_threads, Execution};
use crate::training::Strategy;

pub use config::RunConfig;
use experiments::{gamma_cell, run_calibration, run_replicate, run_toy, toy_data, toy_prediction_grid, ReplicateRecord};
use output::{json_lines, write_atomic, Cell, RunManifest, Table};

#[derive(Debug, Parser)]
#[command(name = "modens", version, about = "Diversity-regularized deep ensembles: training, evaluation and batch BO")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// `key = value` file (a previous run manifest works).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "R")]
    pub replicates: Option<usize>,
    /// Repeatable: deep-ens, deep-ens-at, neg-corr, mod, mod-in, mod-r, mod-adv.
    #[arg(long = "strategy", global = true, value_name = "NAME")]
    pub strategies: Vec<String>,
    /// Comma-separated γ values.
    #[arg(long, global = true, value_name = "LIST")]
    pub gamma_grid: Option<String>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// 1 runs the sequential reference path; 0 uses every core.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Any other configuration key, e.g. `--set max_epochs=50`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on the 1-D toy problem and dump dense-grid predictions.
    Toy,
    /// Replicated split / γ selection / train / evaluate on datasets.
    TrainEval {
        /// Dataset manifest; repeatable.
        #[arg(long = "dataset", value_name = "PATH")]
        datasets: Vec<PathBuf>,
    },
    /// Paired one-tailed tests between strategies, Fisher-combined.
    Compare {
        /// `<dataset>.replicates.jsonl` file; repeatable.
        #[arg(long = "input", value_name = "PATH")]
        inputs: Vec<PathBuf>,
    },
    /// In-distribution test NLL for each fixed γ.
    GammaSweep {
        #[arg(long = "dataset", value_name = "PATH")]
        datasets: Vec<PathBuf>,
    },
    /// Batch UCB optimization over a finite pool.
    Bo {
        /// Pool manifest; the synthetic 1-D grid when omitted.
        #[arg(long, value_name = "PATH")]
        pool: Option<PathBuf>,
    },
    /// Calibration curves on in-distribution and OOD test rows.
    Calibrate {
        #[arg(long = "dataset", value_name = "PATH")]
        datasets: Vec<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Toy => "toy",
            Command::TrainEval { .. } => "train-eval",
            Command::Compare { .. } => "compare",
            Command::GammaSweep { .. } => "gamma-sweep",
            Command::Bo { .. } => "bo",
            Command::Calibrate { .. } => "calibrate",
        }
    }
}

/// Layers defaults, config file, `--set` pairs and flags.
pub fn resolve_config(command: &Command, common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::defaults(command.name());
    if let Some(path) = &common.config {
        cfg.apply(&read_key_values(path)?)?;
    }
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(r) = common.replicates {
        cfg.replicates = r;
    }
    if !common.strategies.is_empty() {
        cfg.strategies = common
            .strategies
            .iter()
            .map(|s| config::parse_strategies(s))
            .collect::<Result<Vec<_>>>()?
            .concat();
    }
    if let Some(g) = &common.gamma_grid {
        cfg.gamma_grid = config::parse_list("gamma_grid", g)?;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    match command {
        Command::TrainEval { datasets } | Command::GammaSweep { datasets } | Command::Calibrate { datasets } => {
            if !datasets.is_empty() {
                cfg.datasets = datasets.clone();
            }
        }
        Command::Compare { inputs } => {
            if !inputs.is_empty() {
                cfg.inputs = inputs.clone();
            }
        }
        Command::Bo { pool } => {
            if pool.is_some() {
                cfg.pool = pool.clone();
            }
        }
        Command::Toy => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses arguments, runs the command and returns the files it wrote.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let cfg = resolve_config(&cli.command, &cli.common)?;
    execute(cli.command.name(), &cfg)
}

/// Runs a named command on a resolved configuration. The manifest is
/// written even when some units fail; those come back as [`Error::Partial`].
pub fn execute(command: &str, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    if cfg.threads > 0 {
        configure_threads(cfg.threads);
    }
    let exec = Execution::from_threads(cfg.threads);
    let start = Instant::now();
    let out = match command {
        "toy" => cmd_toy(cfg, exec)?,
        "train-eval" => cmd_train_eval(cfg, exec)?,
        "compare" => cmd_compare(cfg)?,
        "gamma-sweep" => cmd_gamma_sweep(cfg, exec)?,
        "bo" => cmd_bo(cfg, exec)?,
        "calibrate" => cmd_calibrate(cfg, exec)?,
        other => return Err(Error::Config(format!("unknown command {other:?}"))),
    };
    let manifest = RunManifest {
        command: command.into(),
        config: cfg.entries(),
        seed: cfg.seed,
        dataset_ids: out.dataset_ids,
        artifact_version: env!("CARGO_PKG_VERSION").into(),
        duration_seconds: start.elapsed().as_secs_f64(),
    };
    let mut files = out.files;
    files.push(manifest.write(&cfg.out)?);
    if out.failures.is_empty() {
        Ok(files)
    } else {
        Err(Error::Partial(out.failures))
    }
}

/// Files written, dataset identifiers and failed units.
struct CommandOutput {
    files: Vec<PathBuf>,
    dataset_ids: Vec<String>,
    failures: Vec<String>,
}

fn write(out: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let p = out.join(name);
    write_atomic(&p, contents)?;
    files.push(p);
    Ok(())
}

fn load_manifests(paths: &[PathBuf]) -> Result<Vec<(DatasetManifest, Dataset)>> {
    if paths.is_empty() {
        return Err(Error::Config("no dataset manifest given (use --dataset PATH)".into()));
    }
    paths
        .iter()
        .map(|p| {
            let m = DatasetManifest::from_file(p)?;
            let d = m.load()?;
            Ok((m, d))
        })
        .collect()
}

/// Cartesian product of strategies and replicate seeds.
fn units(cfg: &RunConfig) -> Vec<(Strategy, u64)> {
    cfg.strategies
        .iter()
        .flat_map(|&s| cfg.replicate_seeds().into_iter().map(move |seed| (s, seed)))
        .collect()
}

fn collect_failures<T>(results: Vec<(String, Result<T>)>, failures: &mut Vec<String>) -> Vec<T> {
    results
        .into_iter()
        .filter_map(|(label, r)| match r {
            Ok(v) => Some(v),
            Err(e) => {
                log::error!("{label}: {e}");
                failures.push(format!("{label}: {e}"));
                None
            }
        })
        .collect()
}

fn finish(files: Vec<PathBuf>, dataset_ids: Vec<String>, failures: Vec<String>) -> Result<CommandOutput> {
    Ok(CommandOutput {
        files,
        dataset_ids,
        failures,
    })
}

fn cmd_toy(cfg: &RunConfig, exec: Execution) -> Result<CommandOutput> {
    let mut files = Vec::new();
    let mut failures = Vec::new();
    let seeds = cfg.replicate_seeds();
    let data: Vec<_> = seeds
        .iter()
        .map(|&s| toy_data(&cfg.toy, s))
        .collect::<Result<_>>()?;
    let work = units(cfg);
    let results = exec.map(&work, |&(strategy, seed)| {
        let idx = (seed - cfg.seed) as usize;
        let label = format!("{strategy} seed {seed}");
        (label, run_toy(&data[idx], &cfg.train_config(strategy, seed), &cfg.gamma_grid, exec).map(|r| (strategy, seed, r)))
    });
    let runs = collect_failures(results, &mut failures);
    let m = cfg.train.ensemble_size;
    let mut header = vec!["x".to_string()];
    header.extend((0..m).map(|i| format!("mu_{i}")));
    header.extend(["mu_bar", "sigma2_eps", "sigma2_mod", "lower95", "upper95"].map(String::from));
    for (strategy, seed, run) in &runs {
        if *seed != cfg.seed {
            continue;
        }
        let rows = toy_prediction_grid(&run.ensemble, &data[0].scaling, &cfg.toy)?;
        let mut t = Table::new(&header);
        for r in rows {
            t.row(r.into_iter().map(Cell::from).collect());
        }
        write(&cfg.out, &format!("toy.{strategy}.csv"), t.as_str(), &mut files)?;
    }
    let summaries: Vec<_> = runs.iter().map(|(_, _, r)| r.summary.clone()).collect();
    write(&cfg.out, "toy.summary.jsonl", &json_lines(&summaries)?, &mut files)?;
    finish(files, vec!["synth-1d".into()], failures)
}

#[derive(serde::Serialize)]
struct SummaryRecord {
    strategy: String,
    replicates: usize,
    nll_in_mean: f64,
    nll_in_sd: f64,
    nll_ood_mean: f64,
    nll_ood_sd: f64,
    rmse_in_mean: f64,
    rmse_in_sd: f64,
    rmse_ood_mean: f64,
    rmse_ood_sd: f64,
}

fn summarize(strategy: Strategy, recs: &[&ReplicateRecord]) -> SummaryRecord {
    let col = |f: fn(&ReplicateRecord) -> f64| mean_sd(&recs.iter().map(|r| f(r)).collect::<Vec<_>>());
    let (a, b) = col(|r| r.nll_in);
    let (c, d) = col(|r| r.nll_ood);
    let (e, f) = col(|r| r.rmse_in);
    let (g, h) = col(|r| r.rmse_ood);
    SummaryRecord {
        strategy: strategy.name().into(),
        replicates: recs.len(),
        nll_in_mean: a,
        nll_in_sd: b,
        nll_ood_mean: c,
        nll_ood_sd: d,
        rmse_in_mean: e,
        rmse_in_sd: f,
        rmse_ood_mean: g,
        rmse_ood_sd: h,
    }
}

fn cmd_train_eval(cfg: &RunConfig, exec: Execution) -> Result<CommandOutput> {
    let mut files = Vec::new();
    let mut failures = Vec::new();
    let sets = load_manifests(&cfg.datasets)?;
    for (m, data) in &sets {
        let work = units(cfg);
        let results = exec.map(&work, |&(strategy, seed)| {
            let label = format!("{} {strategy} seed {seed}", m.name);
            (label, run_replicate(data, &m.split, &cfg.train_config(strategy, seed), &cfg.gamma_grid, exec))
        });
        let recs = collect_failures(results, &mut failures);
        write(&cfg.out, &format!("{}.replicates.jsonl", m.name), &json_lines(&recs)?, &mut files)?;
        let summary: Vec<SummaryRecord> = cfg
            .strategies
            .iter()
            .map(|&s| (s, recs.iter().filter(|r| r.strategy == s.name()).collect::<Vec<_>>()))
            .filter(|(_, rs)| !rs.is_empty())
            .map(|(s, rs)| summarize(s, &rs))
            .collect();
        write(&cfg.out, &format!("{}.summary.jsonl", m.name), &json_lines(&summary)?, &mut files)?;
    }
    let ids = sets.iter().map(|(m, _)| m.name.clone()).collect();
    finish(files, ids, failures)
}

/// Reads a replicate file; the dataset name is the file name up to
/// `.replicates.jsonl`.
pub fn read_replicates(path: &Path) -> Result<(String, Vec<ReplicateRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let recs = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<ReplicateRecord>(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let name = file
        .strip_suffix(".replicates.jsonl")
        .or_else(|| file.strip_suffix(".jsonl"))
        .unwrap_or(&file)
        .to_string();
    Ok((name, recs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub metric: &'static str,
    pub strategy_a: String,
    pub strategy_b: String,
    /// A dataset name, or `combined` for the Fisher row.
    pub dataset: String,
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// For every ordered pair of strategies and each metric: per-dataset tests of
/// `a < b` over shared seeds and their Fisher combination.
pub fn compare_records(datasets: &[(String, Vec<ReplicateRecord>)]) -> Result<Vec<ComparisonRow>> {
    let mut strategies: Vec<String> = datasets
        .iter()
        .flat_map(|(_, rs)| rs.iter().map(|r| r.strategy.clone()))
        .collect();
    strategies.sort();
    strategies.dedup();
    if strategies.len() < 2 {
        return Err(Error::Config("comparison needs records from at least 2 strategies".into()));
    }
    let metrics: [(&'static str, fn(&ReplicateRecord) -> f64); 4] = [
        ("nll_in", |r| r.nll_in),
        ("nll_ood", |r| r.nll_ood),
        ("rmse_in", |r| r.rmse_in),
        ("rmse_ood", |r| r.rmse_ood),
    ];
    let by_seed = |recs: &[ReplicateRecord], s: &str| -> Result<BTreeMap<u64, ReplicateRecord>> {
        let mut m = BTreeMap::new();
        for r in recs.iter().filter(|r| r.strategy == s) {
            if m.insert(r.seed, r.clone()).is_some() {
                return Err(Error::Config(format!("duplicate seed {} for strategy {s}", r.seed)));
            }
        }
        Ok(m)
    };
    let mut rows = Vec::new();
    for (metric, get) in metrics {
        for a in &strategies {
            for b in &strategies {
                if a == b {
                    continue;
                }
                let mut ps = Vec::new();
                for (name, recs) in datasets {
                    let (ra, rb) = (by_seed(recs, a)?, by_seed(recs, b)?);
                    if ra.is_empty() || rb.is_empty() {
                        continue;
                    }
                    if !ra.keys().eq(rb.keys()) {
                        return Err(Error::Config(format!("{name}: strategies {a} and {b} have different seed sets")));
                    }
                    let xa: Vec<f64> = ra.values().map(get).collect();
                    let xb: Vec<f64> = rb.values().map(get).collect();
                    if xa.iter().chain(&xb).any(|v| !v.is_finite()) {
                        continue;
                    }
                    let t = paired_t_test_one_tailed(&xa, &xb)?;
                    ps.push(t.p_value);
                    rows.push(ComparisonRow {
                        metric,
                        strategy_a: a.clone(),
                        strategy_b: b.clone(),
                        dataset: name.clone(),
                        statistic: t.statistic,
                        p_value: t.p_value,
                        n: t.n,
                    });
                }
                if !ps.is_empty() {
                    let f = fisher_combine(&ps)?;
                    rows.push(ComparisonRow {
                        metric,
                        strategy_a: a.clone(),
                        strategy_b: b.clone(),
                        dataset: "combined".into(),
                        statistic: f.statistic,
                        p_value: f.p_value,
                        n: f.n,
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn cmd_compare(cfg: &RunConfig) -> Result<CommandOutput> {
    if cfg.inputs.is_empty() {
        return Err(Error::Config("compare needs at least one --input replicate file".into()));
    }
    let datasets = cfg.inputs.iter().map(|p| read_replicates(p)).collect::<Result<Vec<_>>>()?;
    let rows = compare_records(&datasets)?;
    let mut t = Table::new(&["metric", "strategy_a", "strategy_b", "dataset", "statistic", "p_value", "n"]);
    for r in rows {
        t.row(vec![
            r.metric.into(),
            r.strategy_a.into(),
            r.strategy_b.into(),
            r.dataset.into(),
            r.statistic.into(),
            r.p_value.into(),
            r.n.into(),
        ]);
    }
    let mut files = Vec::new();
    write(&cfg.out, "compare.csv", t.as_str(), &mut files)?;
    finish(files, datasets.into_iter().map(|(n, _)| n).collect(), Vec::new())
}

fn cmd_gamma_sweep(cfg: &RunConfig, exec: Execution) -> Result<CommandOutput> {
    let mut files = Vec::new();
    let mut failures = Vec::new();
    let sets = load_manifests(&cfg.datasets)?;
    let mut grid = cfg.gamma_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let seeds = cfg.replicate_seeds();
    for (m, data) in &sets {
        for &strategy in &cfg.strategies {
            let cells: Vec<(f64, u64)> = grid.iter().flat_map(|&g| seeds.iter().map(move |&s| (g, s))).collect();
            let results = exec.map(&cells, |&(gamma, seed)| {
                let tc = crate::training::TrainConfig {
                    gamma,
                    ..cfg.train_config(strategy, seed)
                };
                let label = format!("{} {strategy} gamma {gamma} seed {seed}", m.name);
                (label, gamma_cell(data, &m.split, &tc).map(|nll| (gamma, nll)))
            });
            let done = collect_failures(results, &mut failures);
            let mut t = Table::new(&["gamma", "mean_nll", "sd_nll", "replicates"]);
            for &g in &grid {
                let v: Vec<f64> = done.iter().filter(|(gg, _)| *gg == g).map(|(_, n)| *n).collect();
                if v.is_empty() {
                    continue;
                }
                let (mean, sd) = mean_sd(&v);
                t.row(vec![g.into(), mean.into(), sd.into(), v.len().into()]);
            }
            write(&cfg.out, &format!("{}.{strategy}.gamma_sweep.csv", m.name), t.as_str(), &mut files)?;
        }
    }
    let ids = sets.iter().map(|(m, _)| m.name.clone()).collect();
    finish(files, ids, failures)
}

/// Pool for `bo`: a manifest's dataset, or the noise-free toy grid.
pub fn load_pool(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.pool {
        Some(p) => DatasetManifest::from_file(p)?.load(),
        None => {
            let mut d = toy_grid(cfg.bo.pool_size, cfg.toy.domain)?;
            d.name = format!("synth-1d-pool-{}", cfg.bo.pool_size);
            Ok(d)
        }
    }
}

pub fn bo_config(cfg: &RunConfig, strategy: Strategy) -> BOConfig {
    BOConfig {
        rounds: cfg.bo.rounds,
        batch_per_round: cfg.bo.batch_per_round,
        beta: cfg.bo.beta,
        gamma_grid: cfg.gamma_grid.clone(),
        val_fraction: cfg.bo.val_fraction,
        initial_size: cfg.bo.initial_size,
        initial_quantile: cfg.bo.initial_quantile,
        train: cfg.train_config(strategy, 0),
    }
}

fn trace_table(trace: &BOTrace) -> Table {
    let mut t = Table::new(&["round", "acquired", "incumbent", "regret", "gamma"]);
    for r in &trace.rounds {
        let acq = r.acquired.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
        t.row(vec![r.round.into(), acq.into(), r.incumbent.into(), r.regret.into(), r.gamma.into()]);
    }
    t
}

fn cmd_bo(cfg: &RunConfig, exec: Execution) -> Result<CommandOutput> {
    let mut files = Vec::new();
    let mut failures = Vec::new();
    let pool = load_pool(cfg)?;
    let work = units(cfg);
    let results = exec.map(&work, |&(strategy, seed)| {
        let label = format!("{strategy} seed {seed}");
        (label, run_bo(&pool, &bo_config(cfg, strategy), seed, exec).map(|t| (strategy, seed, t)))
    });
    let traces = collect_failures(results, &mut failures);
    for (strategy, seed, trace) in &traces {
        write(&cfg.out, &format!("bo.{strategy}.seed{seed}.csv"), trace_table(trace).as_str(), &mut files)?;
    }
    let mut agg = Table::new(&["strategy", "round", "mean_regret", "sd_regret", "seeds"]);
    for &strategy in &cfg.strategies {
        let mine: Vec<&BOTrace> = traces.iter().filter(|(s, _, _)| *s == strategy).map(|(_, _, t)| t).collect();
        if mine.is_empty() {
            continue;
        }
        for round in 1..=cfg.bo.rounds {
            let v: Vec<f64> = mine.iter().map(|t| t.rounds[round - 1].regret).collect();
            let (mean, sd) = mean_sd(&v);
            agg.row(vec![strategy.name().into(), round.into(), mean.into(), sd.into(), v.len().into()]);
        }
    }
    write(&cfg.out, "bo.aggregate.csv", agg.as_str(), &mut files)?;
    finish(files, vec![pool.name.clone()], failures)
}

fn cmd_calibrate(cfg: &RunConfig, exec: Execution) -> Result<CommandOutput> {
    let mut files = Vec::new();
    let mut failures = Vec::new();
    let sets = load_manifests(&cfg.datasets)?;
    for (m, data) in &sets {
        let results = exec.map(&cfg.strategies, |&strategy| {
            let label = format!("{} {strategy} seed {}", m.name, cfg.seed);
            let tc = cfg.train_config(strategy, cfg.seed);
            (label, run_calibration(data, &m.split, &tc, &cfg.gamma_grid, &cfg.levels, exec).map(|c| (strategy, c)))
        });
        let done = collect_failures(results, &mut failures);
        let mut t = Table::new(&["strategy", "split", "expected", "observed"]);
        for (strategy, c) in &done {
            let splits = std::iter::once(("in", &c.in_dist)).chain(c.ood.as_ref().map(|o| ("ood", o)));
            for (split, curve) in splits {
                for (e, o) in curve.expected_levels.iter().zip(&curve.observed_frequencies) {
                    t.row(vec![strategy.name().into(), split.into(), (*e).into(), (*o).into()]);
                }
            }
        }
        write(&cfg.out, &format!("{}.calibration.csv", m.name), t.as_str(), &mut files)?;
    }
    let ids = sets.iter().map(|(m, _)| m.name.clone()).collect();
    finish(files, ids, failures)
}
