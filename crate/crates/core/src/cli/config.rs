//! Resolved run configuration: defaults, then a config file, then flags.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::network::OptimizerKind;
use crate::training::{Strategy, TrainConfig};

/// Keys written into run manifests that are not configuration.
pub const MANIFEST_ONLY_KEYS: [&str; 4] = ["command", "artifact_version", "duration_seconds", "dataset_ids"];

#[derive(Debug, Clone, PartialEq)]
pub struct ToySettings {
    pub domain: (f64, f64),
    pub regions: Vec<(f64, f64)>,
    /// Intervals of the held-out OOD grid.
    pub ood_regions: Vec<(f64, f64)>,
    pub n_per_region: usize,
    pub val_per_region: usize,
    pub test_per_region: usize,
    pub noise_std: f64,
    pub grid_points: usize,
}

impl Default for ToySettings {
    fn default() -> Self {
        ToySettings {
            domain: (-0.5, 1.0),
            regions: vec![(0.0, 0.25), (0.55, 0.8)],
            ood_regions: vec![(-0.5, -0.1), (0.3, 0.5)],
            n_per_region: 100,
            val_per_region: 25,
            test_per_region: 50,
            noise_std: crate::data::synth::DEFAULT_NOISE_STD,
            grid_points: 301,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoSettings {
    pub rounds: usize,
    pub batch_per_round: usize,
    pub beta: f64,
    pub initial_size: usize,
    pub initial_quantile: f64,
    pub val_fraction: f64,
    /// Grid size of the synthetic pool used when no pool manifest is given.
    pub pool_size: usize,
}

impl Default for BoSettings {
    fn default() -> Self {
        BoSettings {
            rounds: 30,
            batch_per_round: 10,
            beta: 1.0,
            initial_size: 200,
            initial_quantile: 0.9,
            val_fraction: 0.1,
            pool_size: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub replicates: usize,
    pub strategies: Vec<Strategy>,
    pub gamma_grid: Vec<f64>,
    /// 0 uses every core; 1 is the sequential reference path.
    pub threads: usize,
    pub out: PathBuf,
    pub datasets: Vec<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub pool: Option<PathBuf>,
    pub levels: Vec<f64>,
    pub train: TrainConfig,
    pub toy: ToySettings,
    pub bo: BoSettings,
}

impl RunConfig {
    /// Defaults for one command.
    pub fn defaults(command: &str) -> Self {
        let mut c = RunConfig {
            seed: 0,
            replicates: 10,
            strategies: vec![Strategy::DeepEns, Strategy::Mod],
            gamma_grid: vec![0.0, 5.0, 10.0, 20.0, 40.0, 80.0],
            threads: 0,
            out: PathBuf::from("out"),
            datasets: Vec::new(),
            inputs: Vec::new(),
            pool: None,
            levels: crate::eval::default_levels(),
            train: TrainConfig::default(),
            toy: ToySettings::default(),
            bo: BoSettings::default(),
        };
        match command {
            "toy" => {
                c.replicates = 1;
                c.gamma_grid = vec![1.0, 3.0, 10.0];
                c.train.max_epochs = 400;
                c.train.patience = 400;
                c.train.batch_size = 16;
            }
            "bo" => {
                c.replicates = 20;
            }
            _ => {}
        }
        c
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "replicates" => self.replicates = parse(key, v)?,
            "strategies" | "strategy" => self.strategies = parse_strategies(v)?,
            "gamma_grid" => self.gamma_grid = parse_list(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "datasets" => self.datasets = split_paths(v),
            "inputs" => self.inputs = split_paths(v),
            "pool" => self.pool = (!v.is_empty()).then(|| PathBuf::from(v)),
            "levels" => self.levels = parse_list(key, v)?,
            "ensemble_size" => self.train.ensemble_size = parse(key, v)?,
            "hidden_width" => self.train.hidden_width = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "l2" => self.train.l2 = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "max_epochs" => self.train.max_epochs = parse(key, v)?,
            "patience" => self.train.patience = parse(key, v)?,
            "k" => self.train.k = parse(key, v)?,
            "delta" => self.train.delta = parse(key, v)?,
            "alpha_adv" => self.train.alpha_adv = parse(key, v)?,
            "optimizer" => {
                self.train.optimizer = match v {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(Error::Config(format!("optimizer must be adam or sgd, got {v:?}"))),
                }
            }
            "toy_domain" => self.toy.domain = parse_interval(key, v)?,
            "toy_regions" => self.toy.regions = parse_intervals(key, v)?,
            "toy_ood_regions" => self.toy.ood_regions = parse_intervals(key, v)?,
            "toy_n_per_region" => self.toy.n_per_region = parse(key, v)?,
            "toy_val_per_region" => self.toy.val_per_region = parse(key, v)?,
            "toy_test_per_region" => self.toy.test_per_region = parse(key, v)?,
            "toy_noise_std" => self.toy.noise_std = parse(key, v)?,
            "toy_grid_points" => self.toy.grid_points = parse(key, v)?,
            "bo_rounds" => self.bo.rounds = parse(key, v)?,
            "bo_batch" => self.bo.batch_per_round = parse(key, v)?,
            "bo_beta" => self.bo.beta = parse(key, v)?,
            "bo_initial_size" => self.bo.initial_size = parse(key, v)?,
            "bo_initial_quantile" => self.bo.initial_quantile = parse(key, v)?,
            "bo_val_fraction" => self.bo.val_fraction = parse(key, v)?,
            "bo_pool_size" => self.bo.pool_size = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a parsed config file, skipping manifest bookkeeping keys.
    pub fn apply(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in kv {
            if !MANIFEST_ONLY_KEYS.contains(&k.as_str()) {
                self.set(k, v)?;
            }
        }
        Ok(())
    }

    /// Every key with a value that [`RunConfig::set`] parses back exactly.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let join_f = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let join_p = |xs: &[PathBuf]| xs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
        let iv = |(a, b): (f64, f64)| format!("{a}:{b}");
        let ivs = |xs: &[(f64, f64)]| xs.iter().map(|&x| iv(x)).collect::<Vec<_>>().join(",");
        vec![
            ("seed", self.seed.to_string()),
            ("replicates", self.replicates.to_string()),
            ("strategies", self.strategies.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")),
            ("gamma_grid", join_f(&self.gamma_grid)),
            ("threads", self.threads.to_string()),
            ("out", self.out.display().to_string()),
            ("datasets", join_p(&self.datasets)),
            ("inputs", join_p(&self.inputs)),
            ("pool", self.pool.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("levels", join_f(&self.levels)),
            ("ensemble_size", t.ensemble_size.to_string()),
            ("hidden_width", t.hidden_width.to_string()),
            ("lr", t.lr.to_string()),
            ("l2", t.l2.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("max_epochs", t.max_epochs.to_string()),
            ("patience", t.patience.to_string()),
            ("k", t.k.to_string()),
            ("delta", t.delta.to_string()),
            ("alpha_adv", t.alpha_adv.to_string()),
            (
                "optimizer",
                match t.optimizer {
                    OptimizerKind::Adam => "adam".into(),
                    OptimizerKind::Sgd => "sgd".into(),
                },
            ),
            ("toy_domain", iv(self.toy.domain)),
            ("toy_regions", ivs(&self.toy.regions)),
            ("toy_ood_regions", ivs(&self.toy.ood_regions)),
            ("toy_n_per_region", self.toy.n_per_region.to_string()),
            ("toy_val_per_region", self.toy.val_per_region.to_string()),
            ("toy_test_per_region", self.toy.test_per_region.to_string()),
            ("toy_noise_std", self.toy.noise_std.to_string()),
            ("toy_grid_points", self.toy.grid_points.to_string()),
            ("bo_rounds", self.bo.rounds.to_string()),
            ("bo_batch", self.bo.batch_per_round.to_string()),
            ("bo_beta", self.bo.beta.to_string()),
            ("bo_initial_size", self.bo.initial_size.to_string()),
            ("bo_initial_quantile", self.bo.initial_quantile.to_string()),
            ("bo_val_fraction", self.bo.val_fraction.to_string()),
            ("bo_pool_size", self.bo.pool_size.to_string()),
        ]
    }

    /// Training configuration for one strategy and seed.
    pub fn train_config(&self, strategy: Strategy, seed: u64) -> TrainConfig {
        TrainConfig {
            strategy,
            seed,
            ..self.train.clone()
        }
    }

    /// Replicate seeds `seed, seed + 1, ...`.
    pub fn replicate_seeds(&self) -> Vec<u64> {
        (0..self.replicates as u64).map(|r| self.seed + r).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        if self.gamma_grid.is_empty() || self.gamma_grid.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::Config(format!("gamma grid {:?} must be nonempty and nonnegative", self.gamma_grid)));
        }
        for s in &self.strategies {
            self.train_config(*s, 0).validate()?;
        }
        Ok(())
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

pub fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse::<f64>(key, s))
        .collect()
}

pub fn parse_strategies(v: &str) -> Result<Vec<Strategy>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}

fn split_paths(v: &str) -> Vec<PathBuf> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
}

fn parse_interval(key: &str, v: &str) -> Result<(f64, f64)> {
    let (a, b) = v
        .rsplit_once(':')
        .ok_or_else(|| Error::Config(format!("{key}: expected lo:hi, got {v:?}")))?;
    let (a, b) = (parse::<f64>(key, a.trim())?, parse::<f64>(key, b.trim())?);
    if !(a <= b) {
        return Err(Error::Config(format!("{key}: interval {v:?} is reversed")));
    }
    Ok((a, b))
}

fn parse_intervals(key: &str, v: &str) -> Result<Vec<(f64, f64)>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse_interval(key, s)).collect()
}
