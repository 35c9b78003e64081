//! Minibatch training of the ensemble under every regularization strategy.
//!
//! Each step minimizes, per member `m`,
//!
//! ```text
//! (1/|B|) Σ_b NLL_m(x_b, y_b)  +  s · γ · P
//! ```
//!
//! where `P` is the penalty evaluated on the step's augmented batch and
//! `s = −1` for the diversity penalties (the ensemble is rewarded for model
//! variance off the data) and `s = +1` for negative correlation. All members
//! are updated against the same pre-step parameters.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{
    adversarial_variance_step, fgsm_from_gradient, knn_weights, sample_training, sample_uniform_box,
    sample_uniform_discrete, AugmentBatch, BoxBounds,
};
use crate::data::dna::CanonicalKmers;
use crate::data::{Dataset, FeatureKind};
use crate::ensemble::{mod_variance_gradient, Ensemble};
use crate::error::{Error, Result};
use crate::eval::mean_ensemble_nll;
use crate::exec::Execution;
use crate::network::{
    self, apply_optimizer_step, backward_into, forward, gaussian_nll, gaussian_nll_partials, ForwardCache,
    HeadConfig, NetworkGradient, OptimizerKind, OptimizerState, Upstream,
};
use crate::rng::{stream, Purpose, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Strategy {
    DeepEns,
    DeepEnsAt,
    NegCorr,
    Mod,
    ModIn,
    ModR,
    ModAdv,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::DeepEns,
        Strategy::DeepEnsAt,
        Strategy::NegCorr,
        Strategy::Mod,
        Strategy::ModIn,
        Strategy::ModR,
        Strategy::ModAdv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::DeepEns => "deep-ens",
            Strategy::DeepEnsAt => "deep-ens-at",
            Strategy::NegCorr => "neg-corr",
            Strategy::Mod => "mod",
            Strategy::ModIn => "mod-in",
            Strategy::ModR => "mod-r",
            Strategy::ModAdv => "mod-adv",
        }
    }

    /// Whether the strategy has a γ-weighted penalty to tune.
    pub fn uses_gamma(self) -> bool {
        !matches!(self, Strategy::DeepEns | Strategy::DeepEnsAt)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Strategy::ALL
            .iter()
            .copied()
            .find(|st| st.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub gamma: f64,
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Neighbours for the MOD-R weights.
    pub k: usize,
    /// Adversarial-training step size (deep-ens-at).
    pub delta: f64,
    /// Variance-descent step size (mod-adv).
    pub alpha_adv: f64,
    pub ensemble_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub hidden_width: usize,
    pub heads: HeadConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: Strategy::DeepEns,
            gamma: 0.0,
            lr: 0.01,
            l2: 1e-4,
            batch_size: 32,
            max_epochs: 30,
            patience: 10,
            k: 5,
            delta: 0.1,
            alpha_adv: 1.0,
            ensemble_size: 4,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            hidden_width: 50,
            heads: HeadConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be finite and >= 0, got {}", self.gamma));
        }
        if !(self.lr > 0.0) || !(self.l2 >= 0.0) {
            return bad(format!("need lr > 0 and l2 >= 0 (lr={}, l2={})", self.lr, self.l2));
        }
        if self.batch_size == 0 || self.ensemble_size < 2 || self.hidden_width == 0 {
            return bad("batch_size >= 1, ensemble_size >= 2 and hidden_width >= 1 are required".into());
        }
        match self.strategy {
            Strategy::DeepEnsAt if !(self.delta > 0.0) => bad(format!("deep-ens-at needs delta > 0, got {}", self.delta)),
            Strategy::ModR if self.k == 0 => bad("mod-r needs k >= 1".into()),
            Strategy::ModAdv if !(self.alpha_adv >= 0.0) => bad(format!("mod-adv needs alpha_adv >= 0, got {}", self.alpha_adv)),
            _ => self.heads.validate(),
        }
    }
}

/// Where augmented inputs come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentSource {
    UniformBox,
    UniformKmers,
    TrainingRows,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weighting {
    Unit,
    Knn { k: usize },
}

/// Functional form of the γ-weighted penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyForm {
    /// Weighted mean of `σ²_mod` over augmented points; subtracted.
    Diversity,
    /// Negative-correlation sum over the training minibatch; added.
    NegCorr,
}

impl PenaltyForm {
    pub fn objective_sign(self) -> f64 {
        match self {
            PenaltyForm::Diversity => -1.0,
            PenaltyForm::NegCorr => 1.0,
        }
    }
}

/// The per-step recipe a strategy resolves to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyPlan {
    None,
    Adversarial {
        delta: f64,
    },
    NegCorr,
    Diversity {
        source: AugmentSource,
        weighting: Weighting,
        variance_step: Option<f64>,
    },
}

impl PenaltyPlan {
    pub fn for_config(config: &TrainConfig, kind: FeatureKind) -> Result<Self> {
        let uniform = match kind {
            FeatureKind::Continuous => AugmentSource::UniformBox,
            FeatureKind::DnaOneHot => AugmentSource::UniformKmers,
        };
        Ok(match config.strategy {
            Strategy::DeepEns => PenaltyPlan::None,
            Strategy::DeepEnsAt => PenaltyPlan::Adversarial { delta: config.delta },
            Strategy::NegCorr => PenaltyPlan::NegCorr,
            Strategy::Mod => PenaltyPlan::Diversity {
                source: uniform,
                weighting: Weighting::Unit,
                variance_step: None,
            },
            Strategy::ModIn => PenaltyPlan::Diversity {
                source: AugmentSource::TrainingRows,
                weighting: Weighting::Unit,
                variance_step: None,
            },
            Strategy::ModR => PenaltyPlan::Diversity {
                source: uniform,
                weighting: Weighting::Knn { k: config.k },
                variance_step: None,
            },
            Strategy::ModAdv => {
                if kind != FeatureKind::Continuous {
                    return Err(Error::Config("mod-adv applies to continuous features only".into()));
                }
                PenaltyPlan::Diversity {
                    source: uniform,
                    weighting: Weighting::Unit,
                    variance_step: Some(config.alpha_adv),
                }
            }
        })
    }
}

/// Penalty value and its partials with respect to each member's mean at
/// each penalty point (`mean_grads[m][b]`).
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyTerm {
    pub form: PenaltyForm,
    pub value: f64,
    pub mean_grads: Vec<Vec<f64>>,
}

/// Evaluates the penalty from member means at each point
/// (`means[b][m]`) and per-point weights.
pub fn penalty_from_means(form: PenaltyForm, means: &[Vec<f64>], weights: &[f64]) -> Result<PenaltyTerm> {
    if means.is_empty() || means.len() != weights.len() {
        return Err(Error::contract("penalty needs a nonempty batch with one weight per point"));
    }
    let m = means[0].len();
    let inv_b = 1.0 / means.len() as f64;
    let mut value = 0.0;
    let mut mean_grads = vec![vec![0.0; means.len()]; m];
    for (b, (mus, &w)) in means.iter().zip(weights).enumerate() {
        let mu_bar = mus.iter().sum::<f64>() / m as f64;
        let dvar = mod_variance_gradient(mus)?;
        match form {
            PenaltyForm::Diversity => {
                let var = mus.iter().map(|u| (u - mu_bar) * (u - mu_bar)).sum::<f64>() / m as f64;
                value += inv_b * w * var;
                for (g, d) in mean_grads.iter_mut().zip(&dvar) {
                    g[b] = inv_b * w * d;
                }
            }
            PenaltyForm::NegCorr => {
                let dev: Vec<f64> = mus.iter().map(|u| u - mu_bar).collect();
                let mut s = 0.0;
                for i in 0..m {
                    let others: f64 = (0..m).filter(|&j| j != i).map(|j| dev[j]).sum();
                    s += dev[i] * others;
                }
                value += inv_b * w * s;
                // s = −M·σ²_mod, so ∂s/∂μ_m = −M·∂σ²_mod/∂μ_m = −2(μ_m − μ̄).
                for (g, d) in mean_grads.iter_mut().zip(&dvar) {
                    g[b] = -inv_b * w * m as f64 * d;
                }
            }
        }
    }
    Ok(PenaltyTerm { form, value, mean_grads })
}

pub fn penalty_term(form: PenaltyForm, ensemble: &Ensemble, batch: &AugmentBatch) -> Result<PenaltyTerm> {
    let means = batch
        .points
        .iter()
        .map(|x| ensemble.member_means(x))
        .collect::<Result<Vec<_>>>()?;
    penalty_from_means(form, &means, &batch.weights)
}

/// Shared inputs to every step of one training run.
pub struct StepContext<'a> {
    pub config: &'a TrainConfig,
    pub plan: PenaltyPlan,
    pub bounds: &'a BoxBounds,
    /// Full training features, for MOD-in sampling.
    pub train_features: &'a [Vec<f64>],
}

/// Builds the augmented batch for one step (diversity strategies only).
pub fn sample_augment_batch(
    ctx: &StepContext<'_>,
    ensemble: &Ensemble,
    minibatch: &[Vec<f64>],
    rng: &mut StreamRng,
) -> Result<Option<AugmentBatch>> {
    let PenaltyPlan::Diversity {
        source,
        weighting,
        variance_step,
    } = ctx.plan
    else {
        return Ok(None);
    };
    let n = minibatch.len();
    let mut points = match source {
        AugmentSource::UniformBox => sample_uniform_box(ctx.bounds, n, rng)?,
        AugmentSource::UniformKmers => sample_uniform_discrete(CanonicalKmers::shared(), n, rng)?,
        AugmentSource::TrainingRows => sample_training(ctx.train_features, n, rng)?,
    };
    if let Some(alpha) = variance_step {
        points = adversarial_variance_step(ensemble, &points, alpha, ctx.bounds)?;
    }
    let weights = match weighting {
        Weighting::Unit => vec![1.0; n],
        Weighting::Knn { k } => knn_weights(&points, minibatch, k.min(n))?,
    };
    Ok(Some(AugmentBatch { points, weights }))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    /// Mean member NLL on the clean minibatch.
    pub nll: f64,
    pub penalty: f64,
}

/// Per-member gradients of the step objective at the current parameters,
/// with the step's penalty points already drawn.
pub fn objective_gradients(
    ctx: &StepContext<'_>,
    ensemble: &Ensemble,
    xs: &[Vec<f64>],
    ys: &[f64],
    augment: Option<&AugmentBatch>,
) -> Result<(Vec<NetworkGradient>, StepStats)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::contract("minibatch must be nonempty with one target per row"));
    }
    let inv_b = 1.0 / xs.len() as f64;
    let gamma = ctx.config.gamma;
    let m_count = ensemble.size();
    let mut grads: Vec<NetworkGradient> = ensemble.members().iter().map(|m| m.zeros_like()).collect();
    let mut nll_total = 0.0;

    for (member, grad) in ensemble.members().iter().zip(grads.iter_mut()) {
        for (x, &y) in xs.iter().zip(ys) {
            let (pred, cache) = forward(member, x)?;
            nll_total += gaussian_nll(&pred, y)?;
            let up = gaussian_nll_partials(&pred, y);
            backward_into(member, &cache, Upstream::new(inv_b * up.d_mu, inv_b * up.d_sigma2), grad)?;
            if let PenaltyPlan::Adversarial { delta } = ctx.plan {
                let gx = network::input_gradient_cached(member, &cache, up);
                let x_adv = fgsm_from_gradient(x, &gx, delta, ctx.bounds);
                let (pa, ca) = forward(member, &x_adv)?;
                let ua = gaussian_nll_partials(&pa, y);
                backward_into(member, &ca, Upstream::new(inv_b * ua.d_mu, inv_b * ua.d_sigma2), grad)?;
            }
        }
    }
    let mut stats = StepStats {
        nll: nll_total / (xs.len() * m_count) as f64,
        penalty: 0.0,
    };

    let penalty_points: Option<(PenaltyForm, &[Vec<f64>], Vec<f64>)> = match (ctx.plan, augment) {
        (PenaltyPlan::NegCorr, _) => Some((PenaltyForm::NegCorr, xs, vec![1.0; xs.len()])),
        (PenaltyPlan::Diversity { .. }, Some(batch)) => Some((PenaltyForm::Diversity, &batch.points, batch.weights.clone())),
        (PenaltyPlan::Diversity { .. }, None) if gamma > 0.0 => {
            return Err(Error::contract("diversity strategies need an augmented batch"))
        }
        _ => None,
    };
    if let (Some((form, points, weights)), true) = (penalty_points, gamma > 0.0) {
        let passes: Vec<Vec<(f64, ForwardCache)>> = ensemble
            .members()
            .iter()
            .map(|member| {
                points
                    .iter()
                    .map(|x| forward(member, x).map(|(p, c)| (p.mu, c)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let means: Vec<Vec<f64>> = (0..points.len())
            .map(|b| passes.iter().map(|mp| mp[b].0).collect())
            .collect();
        let term = penalty_from_means(form, &means, &weights)?;
        stats.penalty = term.value;
        let scale = form.objective_sign() * gamma;
        for (m, (member, grad)) in ensemble.members().iter().zip(grads.iter_mut()).enumerate() {
            for (b, (_, cache)) in passes[m].iter().enumerate() {
                backward_into(member, cache, Upstream::new(scale * term.mean_grads[m][b], 0.0), grad)?;
            }
        }
    }
    Ok((grads, stats))
}

/// One synchronous update of every member.
pub fn train_step(
    ctx: &StepContext<'_>,
    ensemble: &mut Ensemble,
    states: &mut [OptimizerState],
    xs: &[Vec<f64>],
    ys: &[f64],
    rng: &mut StreamRng,
) -> Result<StepStats> {
    let augment = if ctx.config.gamma > 0.0 {
        sample_augment_batch(ctx, ensemble, xs, rng)?
    } else {
        None
    };
    let (grads, stats) = objective_gradients(ctx, ensemble, xs, ys, augment.as_ref())?;
    if !stats.nll.is_finite() || !stats.penalty.is_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            reason: format!("non-finite loss (nll={}, penalty={})", stats.nll, stats.penalty),
        });
    }
    let cfg = ctx.config;
    for ((member, grad), state) in ensemble.members_mut().iter_mut().zip(&grads).zip(states.iter_mut()) {
        apply_optimizer_step(member, grad, state, cfg.lr, cfg.l2, cfg.optimizer)?;
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_train_nll: f64,
    pub initial_val_nll: f64,
    /// Ensemble NLL on the training split after each epoch.
    pub train_nll: Vec<f64>,
    pub val_nll: Vec<f64>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_nll: f64,
}

fn with_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Divergence { reason, .. } => Error::Divergence { epoch, reason },
        other => other,
    }
}

/// Trains a fresh ensemble with early stopping on validation NLL and
/// returns the parameters of the best validation epoch.
///
/// Training stops once `patience` consecutive epochs pass without a new best
/// validation NLL, or after `max_epochs`.
pub fn train_ensemble(train: &Dataset, val: &Dataset, config: &TrainConfig) -> Result<(Ensemble, TrainReport)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset("training and validation splits must be nonempty".into()));
    }
    let plan = PenaltyPlan::for_config(config, train.kind)?;
    train_ensemble_with_plan(train, val, config, plan)
}

/// [`train_ensemble`] with an explicit penalty recipe.
pub fn train_ensemble_with_plan(
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    plan: PenaltyPlan,
) -> Result<(Ensemble, TrainReport)> {
    let mut ensemble = Ensemble::init(config.ensemble_size, train.dim(), config.hidden_width, config.heads, config.seed)?;
    let mut states: Vec<OptimizerState> = ensemble.members().iter().map(OptimizerState::new).collect();
    let ctx = StepContext {
        config,
        plan,
        bounds: &train.bounds,
        train_features: &train.features,
    };
    let mut order_rng = stream(config.seed, Purpose::MinibatchOrder, 0);
    let mut aug_rng = stream(config.seed, Purpose::Augmentation, 0);

    let initial_train_nll = mean_ensemble_nll(&ensemble, train)?;
    let initial_val_nll = mean_ensemble_nll(&ensemble, val)?;
    let mut report = TrainReport {
        initial_train_nll,
        initial_val_nll,
        train_nll: Vec::new(),
        val_nll: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
        best_val_nll: initial_val_nll,
    };
    let mut best = ensemble.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut xs = Vec::with_capacity(config.batch_size);
    let mut ys = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(config.batch_size) {
            xs.clear();
            ys.clear();
            xs.extend(chunk.iter().map(|&i| train.features[i].clone()));
            ys.extend(chunk.iter().map(|&i| train.targets[i]));
            train_step(&ctx, &mut ensemble, &mut states, &xs, &ys, &mut aug_rng).map_err(|e| with_epoch(e, epoch))?;
        }
        let val_nll = mean_ensemble_nll(&ensemble, val)?;
        let train_nll = mean_ensemble_nll(&ensemble, train)?;
        if !val_nll.is_finite() || !train_nll.is_finite() {
            return Err(Error::Divergence {
                epoch,
                reason: "non-finite ensemble NLL".into(),
            });
        }
        report.train_nll.push(train_nll);
        report.val_nll.push(val_nll);
        report.stopped_epoch = epoch;
        if epoch == 1 || val_nll < report.best_val_nll {
            report.best_val_nll = val_nll;
            report.best_epoch = epoch;
            best.clone_from(&ensemble);
        } else if epoch - report.best_epoch >= config.patience {
            break;
        }
    }
    Ok((best, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaOutcome {
    pub gamma: f64,
    pub val_nll: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GammaSelection {
    pub gamma: f64,
    pub table: Vec<GammaOutcome>,
    pub ensemble: Ensemble,
    pub report: TrainReport,
}

/// Trains one ensemble per γ and keeps the one with the lowest validation
/// NLL; exact ties go to the larger γ. Failed candidates are reported in the
/// table and skipped.
pub fn select_gamma(
    train: &Dataset,
    val: &Dataset,
    base: &TrainConfig,
    grid: &[f64],
    exec: Execution,
) -> Result<GammaSelection> {
    if grid.is_empty() {
        return Err(Error::Config("gamma grid is empty".into()));
    }
    let runs = exec.map(grid, |&gamma| {
        let cfg = TrainConfig { gamma, ..base.clone() };
        train_ensemble(train, val, &cfg)
    });
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, Ensemble, TrainReport)> = None;
    for (&gamma, run) in grid.iter().zip(runs) {
        match run {
            Ok((ens, report)) => {
                table.push(GammaOutcome {
                    gamma,
                    val_nll: Some(report.best_val_nll),
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some((g, _, r)) => {
                        report.best_val_nll < r.best_val_nll || (report.best_val_nll == r.best_val_nll && gamma > *g)
                    }
                };
                if better {
                    best = Some((gamma, ens, report));
                }
            }
            Err(e) => table.push(GammaOutcome {
                gamma,
                val_nll: None,
                error: Some(e.to_string()),
            }),
        }
    }
    match best {
        Some((gamma, ensemble, report)) => Ok(GammaSelection {
            gamma,
            table,
            ensemble,
            report,
        }),
        None => Err(Error::AllGammasFailed(grid.to_vec())),
    }
}

/// [`select_gamma`] for strategies with a penalty; a single γ = 0 run for
/// the others.
pub fn fit_strategy(train: &Dataset, val: &Dataset, base: &TrainConfig, grid: &[f64], exec: Execution) -> Result<GammaSelection> {
    if base.strategy.uses_gamma() {
        select_gamma(train, val, base, grid, exec)
    } else {
        select_gamma(train, val, base, &[0.0], exec)
    }
}
