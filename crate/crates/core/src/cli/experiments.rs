//! Experiment drivers shared by the commands and the acceptance suite.

use serde::{Deserialize, Serialize};

use super::config::ToySettings;
use crate::data::split::{split_ood, split_train_val_test, SplitSpec};
use crate::data::synth::{synth_1d, toy_grid};
use crate::data::{apply_scaling, fit_scaling, Dataset, ScalingInfo};
use crate::ensemble::Ensemble;
use crate::error::Result;
use crate::eval::{calibration_curve, dataset_metrics, CalibrationCurve};
use crate::exec::Execution;
use crate::rng::{derive_seed, Purpose};
use crate::training::{fit_strategy, train_ensemble, GammaSelection, Strategy, TrainConfig};

/// Scaled splits for one replicate.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub ood: Dataset,
    pub scaling: ScalingInfo,
}

/// OOD split, then a seeded train/validation/test split of the
/// in-distribution rows; scaling is fit on the training rows.
pub fn prepare_split(data: &Dataset, spec: &SplitSpec, seed: u64) -> Result<PreparedSplit> {
    let (ind, ood) = split_ood(data, spec.ood_rule)?;
    let (train, val, test) = split_train_val_test(&ind, spec.sizes, seed)?;
    let scaling = fit_scaling(&train)?;
    Ok(PreparedSplit {
        train: apply_scaling(&scaling, &train),
        val: apply_scaling(&scaling, &val),
        test: apply_scaling(&scaling, &test),
        ood: apply_scaling(&scaling, &ood),
        scaling,
    })
}

/// One row of a replicate file. Metrics are in training-scaled target
/// units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub strategy: String,
    pub gamma: f64,
    pub seed: u64,
    pub nll_in: f64,
    pub nll_ood: f64,
    pub rmse_in: f64,
    pub rmse_ood: f64,
}

pub fn evaluate_fit(split: &PreparedSplit, fit: &GammaSelection, strategy: Strategy, seed: u64) -> Result<ReplicateRecord> {
    let inm = dataset_metrics(&fit.ensemble, &split.test)?;
    let oodm = if split.ood.is_empty() {
        None
    } else {
        Some(dataset_metrics(&fit.ensemble, &split.ood)?)
    };
    Ok(ReplicateRecord {
        strategy: strategy.name().into(),
        gamma: fit.gamma,
        seed,
        nll_in: inm.nll,
        nll_ood: oodm.map_or(f64::NAN, |m| m.nll),
        rmse_in: inm.rmse,
        rmse_ood: oodm.map_or(f64::NAN, |m| m.rmse),
    })
}

/// Split, select γ, train and evaluate one replicate.
pub fn run_replicate(data: &Dataset, spec: &SplitSpec, config: &TrainConfig, grid: &[f64], exec: Execution) -> Result<ReplicateRecord> {
    let split = prepare_split(data, spec, config.seed)?;
    let fit = fit_strategy(&split.train, &split.val, config, grid, exec)?;
    evaluate_fit(&split, &fit, config.strategy, config.seed)
}

/// In-distribution test NLL at a fixed γ.
pub fn gamma_cell(data: &Dataset, spec: &SplitSpec, config: &TrainConfig) -> Result<f64> {
    let split = prepare_split(data, spec, config.seed)?;
    let (ens, _) = train_ensemble(&split.train, &split.val, config)?;
    Ok(dataset_metrics(&ens, &split.test)?.nll)
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub in_dist: CalibrationCurve,
    pub ood: Option<CalibrationCurve>,
    pub gamma: f64,
}

pub fn run_calibration(
    data: &Dataset,
    spec: &SplitSpec,
    config: &TrainConfig,
    grid: &[f64],
    levels: &[f64],
    exec: Execution,
) -> Result<CalibrationResult> {
    let split = prepare_split(data, spec, config.seed)?;
    let fit = fit_strategy(&split.train, &split.val, config, grid, exec)?;
    let ood = if split.ood.is_empty() {
        None
    } else {
        Some(calibration_curve(&fit.ensemble, &split.ood, levels)?)
    };
    Ok(CalibrationResult {
        in_dist: calibration_curve(&fit.ensemble, &split.test, levels)?,
        ood,
        gamma: fit.gamma,
    })
}

/// Scaled toy splits for one seed; every strategy sees the same data.
pub struct ToyData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Evenly spaced points across the OOD intervals.
    pub ood_grid: Vec<Vec<f64>>,
    pub scaling: ScalingInfo,
}

pub fn toy_data(settings: &ToySettings, seed: u64) -> Result<ToyData> {
    let gen = |n, index| {
        synth_1d(
            n,
            &settings.regions,
            settings.noise_std,
            derive_seed(seed, Purpose::DataGeneration, index),
            settings.domain,
        )
    };
    let train = gen(settings.n_per_region, 0)?;
    let val = gen(settings.val_per_region, 1)?;
    let test = gen(settings.test_per_region, 2)?;
    let scaling = fit_scaling(&train)?;
    let mut ood_grid = Vec::new();
    for &(a, b) in &settings.ood_regions {
        let g = toy_grid(50, (a, b.max(a + f64::EPSILON)))?;
        ood_grid.extend(g.features.iter().map(|x| scaling.scale_features(x)));
    }
    Ok(ToyData {
        train: apply_scaling(&scaling, &train),
        val: apply_scaling(&scaling, &val),
        test: apply_scaling(&scaling, &test),
        ood_grid,
        scaling,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySummary {
    pub strategy: String,
    pub seed: u64,
    pub gamma: f64,
    /// Mean of `σ_mod` over the OOD grid, in scaled target units.
    pub ood_sigma_mod: f64,
    /// In-region test NLL, in scaled target units.
    pub nll_in: f64,
}

pub struct ToyRun {
    pub summary: ToySummary,
    pub ensemble: Ensemble,
}

pub fn run_toy(data: &ToyData, config: &TrainConfig, grid: &[f64], exec: Execution) -> Result<ToyRun> {
    let fit = fit_strategy(&data.train, &data.val, config, grid, exec)?;
    let mut s = 0.0;
    for x in &data.ood_grid {
        s += fit.ensemble.sigma2_mod(x)?.sqrt();
    }
    let nll_in = dataset_metrics(&fit.ensemble, &data.test)?.nll;
    Ok(ToyRun {
        summary: ToySummary {
            strategy: config.strategy.name().into(),
            seed: config.seed,
            gamma: fit.gamma,
            ood_sigma_mod: s / data.ood_grid.len().max(1) as f64,
            nll_in,
        },
        ensemble: fit.ensemble,
    })
}

/// Dense-grid prediction rows in original units: x, per-member means,
/// `μ̄`, `σ²_eps`, `σ²_mod` and the 95% central interval.
pub fn toy_prediction_grid(ensemble: &Ensemble, scaling: &ScalingInfo, settings: &ToySettings) -> Result<Vec<Vec<f64>>> {
    let z = crate::eval::normal_quantile(0.975);
    let grid = toy_grid(settings.grid_points, settings.domain)?;
    grid.features
        .iter()
        .map(|x| {
            let xs = scaling.scale_features(x);
            let mus = ensemble.member_means(&xs)?;
            let p = ensemble.predict(&xs)?;
            let mut row = vec![x[0]];
            row.extend(mus.iter().map(|&m| scaling.unscale_target(m)));
            let mu_bar = scaling.unscale_target(p.mu_bar);
            let eps = scaling.unscale_variance(p.sigma2_eps);
            let modv = scaling.unscale_variance(p.sigma2_mod);
            let sd = scaling.unscale_variance(p.sigma2_bar).sqrt();
            row.extend([mu_bar, eps, modv, mu_bar - z * sd, mu_bar + z * sd]);
            Ok(row)
        })
        .collect()
}
