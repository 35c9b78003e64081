//! One-hidden-layer heteroskedastic regressor.
//!
//! The network maps `x ∈ R^D` through a ReLU layer of width `H` into two
//! scalar heads: a mean head and a variance head. Both heads are squashed
//! through a sigmoid into a configured range so that the predicted variance
//! is bounded away from zero and the Gaussian NLL stays finite. Reverse-mode
//! gradients for this fixed topology are written out by hand.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output transformation of the mean head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MeanHead {
    /// `lo + (hi - lo) * sigmoid(a)`.
    Sigmoid { lo: f64, hi: f64 },
    /// Identity, for targets that are not scaled into a fixed range.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub mean: MeanHead,
    pub sigma2_min: f64,
    pub sigma2_max: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            mean: MeanHead::Sigmoid { lo: 0.0, hi: 1.0 },
            sigma2_min: 1e-6,
            sigma2_max: 1.0,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2_min > 0.0 && self.sigma2_max > self.sigma2_min && self.sigma2_max.is_finite()) {
            return Err(Error::contract(format!(
                "variance range [{}, {}] must satisfy 0 < min < max < inf",
                self.sigma2_min, self.sigma2_max
            )));
        }
        if let MeanHead::Sigmoid { lo, hi } = self.mean {
            if !(hi > lo && lo.is_finite() && hi.is_finite()) {
                return Err(Error::contract(format!("mean range [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }
}

/// Parameters of one ensemble member, stored flat.
///
/// Layout: hidden weights (`H×D`, row-major), hidden bias (`H`), mean-head
/// weights (`H`), mean-head bias, variance-head weights (`H`), variance-head
/// bias. The same type doubles as a gradient container
/// ([`NetworkGradient`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    input_dim: usize,
    hidden: usize,
    heads: HeadConfig,
    values: Vec<f64>,
}

/// Partial derivatives of a scalar objective, shape-identical to the
/// parameters they belong to.
pub type NetworkGradient = NetworkParams;

impl NetworkParams {
    pub fn len_for(input_dim: usize, hidden: usize) -> usize {
        hidden * input_dim + 3 * hidden + 2
    }

    pub fn zeros(input_dim: usize, hidden: usize, heads: HeadConfig) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::contract(format!(
                "network dimensions must be positive (D={input_dim}, H={hidden})"
            )));
        }
        heads.validate()?;
        Ok(NetworkParams {
            input_dim,
            hidden,
            heads,
            values: vec![0.0; Self::len_for(input_dim, hidden)],
        })
    }

    /// Glorot-uniform weights per layer; hidden biases share the hidden-layer
    /// range so ReLU kinks spread across the input box, head biases start at zero.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, heads: HeadConfig, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(input_dim, hidden, heads)?;
        let hidden_limit = (6.0 / (input_dim + hidden) as f64).sqrt();
        let head_limit = (6.0 / (hidden + 1) as f64).sqrt();
        for w in p.hidden_weights_mut() {
            *w = rng.random_range(-hidden_limit..=hidden_limit);
        }
        for b in p.hidden_bias_mut() {
            *b = rng.random_range(-hidden_limit..=hidden_limit);
        }
        for w in p.mean_weights_mut() {
            *w = rng.random_range(-head_limit..=head_limit);
        }
        for w in p.var_weights_mut() {
            *w = rng.random_range(-head_limit..=head_limit);
        }
        Ok(p)
    }

    /// Builds parameters from a flat vector in the documented layout.
    pub fn from_values(input_dim: usize, hidden: usize, heads: HeadConfig, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(input_dim, hidden, heads)?;
        if values.len() != p.values.len() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                p.values.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("parameters must be finite"));
        }
        p.values = values;
        Ok(p)
    }

    /// A zero container with the same shape.
    pub fn zeros_like(&self) -> Self {
        NetworkParams {
            input_dim: self.input_dim,
            hidden: self.hidden,
            heads: self.heads,
            values: vec![0.0; self.values.len()],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn heads(&self) -> &HeadConfig {
        &self.heads
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim && self.hidden == other.hidden
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn off_hidden_bias(&self) -> usize {
        self.hidden * self.input_dim
    }
    fn off_mean_weights(&self) -> usize {
        self.off_hidden_bias() + self.hidden
    }
    fn off_mean_bias(&self) -> usize {
        self.off_mean_weights() + self.hidden
    }
    fn off_var_weights(&self) -> usize {
        self.off_mean_bias() + 1
    }
    fn off_var_bias(&self) -> usize {
        self.off_var_weights() + self.hidden
    }

    pub fn hidden_weights(&self) -> &[f64] {
        &self.values[..self.off_hidden_bias()]
    }
    pub fn hidden_weights_mut(&mut self) -> &mut [f64] {
        let end = self.off_hidden_bias();
        &mut self.values[..end]
    }
    pub fn hidden_bias(&self) -> &[f64] {
        &self.values[self.off_hidden_bias()..self.off_mean_weights()]
    }
    pub fn hidden_bias_mut(&mut self) -> &mut [f64] {
        let (a, b) = (self.off_hidden_bias(), self.off_mean_weights());
        &mut self.values[a..b]
    }
    pub fn mean_weights(&self) -> &[f64] {
        &self.values[self.off_mean_weights()..self.off_mean_bias()]
    }
    pub fn mean_weights_mut(&mut self) -> &mut [f64] {
        let (a, b) = (self.off_mean_weights(), self.off_mean_bias());
        &mut self.values[a..b]
    }
    pub fn mean_bias(&self) -> f64 {
        self.values[self.off_mean_bias()]
    }
    pub fn set_mean_bias(&mut self, v: f64) {
        let i = self.off_mean_bias();
        self.values[i] = v;
    }
    pub fn var_weights(&self) -> &[f64] {
        &self.values[self.off_var_weights()..self.off_var_bias()]
    }
    pub fn var_weights_mut(&mut self) -> &mut [f64] {
        let (a, b) = (self.off_var_weights(), self.off_var_bias());
        &mut self.values[a..b]
    }
    pub fn var_bias(&self) -> f64 {
        self.values[self.off_var_bias()]
    }
    pub fn set_var_bias(&mut self, v: f64) {
        let i = self.off_var_bias();
        self.values[i] = v;
    }

    /// Whether flat index `i` is a weight (subject to L2) rather than a bias.
    pub fn is_weight(&self, i: usize) -> bool {
        let hw = self.off_hidden_bias();
        (i < hw)
            || (self.off_mean_weights()..self.off_mean_bias()).contains(&i)
            || (self.off_var_weights()..self.off_var_bias()).contains(&i)
    }

    /// Indices of parameters that only influence the variance head.
    pub fn variance_head_indices(&self) -> std::ops::Range<usize> {
        self.off_var_weights()..self.values.len()
    }

    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }
}

/// Mean and variance of a member's Gaussian prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveParams {
    pub mu: f64,
    pub sigma2: f64,
}

/// Intermediate values of a forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    pre_hidden: Vec<f64>,
    hidden: Vec<f64>,
    mean_logit: f64,
    var_logit: f64,
}

impl ForwardCache {
    pub fn pre_activations(&self) -> &[f64] {
        &self.pre_hidden
    }
}

/// Upstream derivatives of a scalar objective with respect to the two heads.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Upstream {
    pub d_mu: f64,
    pub d_sigma2: f64,
}

impl Upstream {
    pub fn new(d_mu: f64, d_sigma2: f64) -> Self {
        Upstream { d_mu, d_sigma2 }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn mean_transform(heads: &HeadConfig, a: f64) -> (f64, f64) {
    match heads.mean {
        MeanHead::Sigmoid { lo, hi } => {
            let s = sigmoid(a);
            (lo + (hi - lo) * s, (hi - lo) * s * (1.0 - s))
        }
        MeanHead::Linear => (a, 1.0),
    }
}

fn var_transform(heads: &HeadConfig, v: f64) -> (f64, f64) {
    let s = sigmoid(v);
    let span = heads.sigma2_max - heads.sigma2_min;
    (heads.sigma2_min + span * s, span * s * (1.0 - s))
}

fn check_input(params: &NetworkParams, x: &[f64]) -> Result<()> {
    if x.len() != params.input_dim {
        return Err(Error::contract(format!(
            "input has {} coordinates, network expects {}",
            x.len(),
            params.input_dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("input contains non-finite values"));
    }
    Ok(())
}

/// Predictive mean and variance, without keeping the cache.
pub fn predict(params: &NetworkParams, x: &[f64]) -> Result<PredictiveParams> {
    check_input(params, x)?;
    let d = params.input_dim;
    let w = params.hidden_weights();
    let b = params.hidden_bias();
    let mw = params.mean_weights();
    let vw = params.var_weights();
    // same summation order as `forward`, so both agree bit for bit
    let mut a = 0.0;
    let mut v = 0.0;
    for j in 0..params.hidden {
        let row = &w[j * d..(j + 1) * d];
        let z = b[j] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
        if z > 0.0 {
            a += mw[j] * z;
            v += vw[j] * z;
        }
    }
    Ok(PredictiveParams {
        mu: mean_transform(&params.heads, params.mean_bias() + a).0,
        sigma2: var_transform(&params.heads, params.var_bias() + v).0,
    })
}

pub fn forward(params: &NetworkParams, x: &[f64]) -> Result<(PredictiveParams, ForwardCache)> {
    check_input(params, x)?;
    let d = params.input_dim;
    let h = params.hidden;
    let w = params.hidden_weights();
    let b = params.hidden_bias();
    let mut pre_hidden = Vec::with_capacity(h);
    let mut hidden = Vec::with_capacity(h);
    for j in 0..h {
        let row = &w[j * d..(j + 1) * d];
        let z = b[j] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
        pre_hidden.push(z);
        hidden.push(z.max(0.0));
    }
    let mean_logit = params.mean_bias() + dot(params.mean_weights(), &hidden);
    let var_logit = params.var_bias() + dot(params.var_weights(), &hidden);
    let pred = PredictiveParams {
        mu: mean_transform(&params.heads, mean_logit).0,
        sigma2: var_transform(&params.heads, var_logit).0,
    };
    Ok((
        pred,
        ForwardCache {
            input: x.to_vec(),
            pre_hidden,
            hidden,
            mean_logit,
            var_logit,
        },
    ))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `0.5 ln(2π σ²) + (y - μ)² / (2σ²)`.
pub fn gaussian_nll(pred: &PredictiveParams, y: f64) -> Result<f64> {
    if !(pred.sigma2 > 0.0) {
        return Err(Error::contract(format!("variance must be positive, got {}", pred.sigma2)));
    }
    let r = y - pred.mu;
    Ok(0.5 * (2.0 * std::f64::consts::PI * pred.sigma2).ln() + r * r / (2.0 * pred.sigma2))
}

/// Partials of [`gaussian_nll`] with respect to `mu` and `sigma2`.
pub fn gaussian_nll_partials(pred: &PredictiveParams, y: f64) -> Upstream {
    let r = y - pred.mu;
    let s2 = pred.sigma2;
    Upstream {
        d_mu: -r / s2,
        d_sigma2: 0.5 / s2 - r * r / (2.0 * s2 * s2),
    }
}

fn check_cache(params: &NetworkParams, cache: &ForwardCache) -> Result<()> {
    if cache.input.len() != params.input_dim || cache.pre_hidden.len() != params.hidden {
        return Err(Error::contract("forward cache does not match network shape"));
    }
    Ok(())
}

/// Gradient of `d_mu·mu + d_sigma2·sigma2` with respect to every parameter.
pub fn backward(params: &NetworkParams, cache: &ForwardCache, upstream: Upstream) -> Result<NetworkGradient> {
    let mut grad = params.zeros_like();
    backward_into(params, cache, upstream, &mut grad)?;
    Ok(grad)
}

/// Accumulating form of [`backward`]: adds the gradient into `grad`.
pub fn backward_into(
    params: &NetworkParams,
    cache: &ForwardCache,
    upstream: Upstream,
    grad: &mut NetworkGradient,
) -> Result<()> {
    check_cache(params, cache)?;
    if !params.same_shape(grad) {
        return Err(Error::contract("gradient buffer does not match network shape"));
    }
    let d = params.input_dim;
    let h = params.hidden;
    let g_mean = upstream.d_mu * mean_transform(&params.heads, cache.mean_logit).1;
    let g_var = upstream.d_sigma2 * var_transform(&params.heads, cache.var_logit).1;

    let (off_hb, off_mw, off_mb, off_vw, off_vb) = (
        params.off_hidden_bias(),
        params.off_mean_weights(),
        params.off_mean_bias(),
        params.off_var_weights(),
        params.off_var_bias(),
    );
    let mw = params.mean_weights();
    let vw = params.var_weights();
    let gv = &mut grad.values;
    for j in 0..h {
        let hj = cache.hidden[j];
        gv[off_mw + j] += g_mean * hj;
        gv[off_vw + j] += g_var * hj;
        if cache.pre_hidden[j] > 0.0 {
            let gz = g_mean * mw[j] + g_var * vw[j];
            gv[off_hb + j] += gz;
            let row = &mut gv[j * d..(j + 1) * d];
            for (g, xi) in row.iter_mut().zip(&cache.input) {
                *g += gz * xi;
            }
        }
    }
    gv[off_mb] += g_mean;
    gv[off_vb] += g_var;
    Ok(())
}

/// Gradient of `d_mu·mu + d_sigma2·sigma2` with respect to the input.
pub fn input_gradient(params: &NetworkParams, x: &[f64], upstream: Upstream) -> Result<Vec<f64>> {
    let (_, cache) = forward(params, x)?;
    Ok(input_gradient_cached(params, &cache, upstream))
}

pub(crate) fn input_gradient_cached(params: &NetworkParams, cache: &ForwardCache, upstream: Upstream) -> Vec<f64> {
    let d = params.input_dim;
    let g_mean = upstream.d_mu * mean_transform(&params.heads, cache.mean_logit).1;
    let g_var = upstream.d_sigma2 * var_transform(&params.heads, cache.var_logit).1;
    let w = params.hidden_weights();
    let mw = params.mean_weights();
    let vw = params.var_weights();
    let mut gx = vec![0.0; d];
    for j in 0..params.hidden {
        if cache.pre_hidden[j] > 0.0 {
            let gz = g_mean * mw[j] + g_var * vw[j];
            for (g, wi) in gx.iter_mut().zip(&w[j * d..(j + 1) * d]) {
                *g += gz * wi;
            }
        }
    }
    gx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(params: &NetworkParams) -> Self {
        OptimizerState {
            first_moment: vec![0.0; params.values.len()],
            second_moment: vec![0.0; params.values.len()],
            step_count: 0,
        }
    }
}

/// One optimizer update, returning new parameters and state.
///
/// The effective gradient is `grad + l2·params` on weights (biases are not
/// decayed). Adam uses the usual bias-corrected moments.
pub fn optimizer_step(
    params: &NetworkParams,
    grad: &NetworkGradient,
    state: &OptimizerState,
    lr: f64,
    l2: f64,
    kind: OptimizerKind,
) -> Result<(NetworkParams, OptimizerState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    apply_optimizer_step(&mut p, grad, &mut s, lr, l2, kind)?;
    Ok((p, s))
}

/// In-place form of [`optimizer_step`]. On error nothing is modified.
pub fn apply_optimizer_step(
    params: &mut NetworkParams,
    grad: &NetworkGradient,
    state: &mut OptimizerState,
    lr: f64,
    l2: f64,
    kind: OptimizerKind,
) -> Result<()> {
    if !(lr > 0.0) || !(l2 >= 0.0) {
        return Err(Error::contract(format!("need lr > 0 and l2 >= 0 (lr={lr}, l2={l2})")));
    }
    if !params.same_shape(grad) || state.first_moment.len() != params.values.len() {
        return Err(Error::contract("gradient or optimizer state shape mismatch"));
    }
    if let Some(i) = grad.values.iter().position(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            epoch: 0,
            reason: format!("non-finite gradient at parameter {i}"),
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.values.len() {
        let mut g = grad.values[i];
        if l2 > 0.0 && params.is_weight(i) {
            g += l2 * params.values[i];
        }
        match kind {
            OptimizerKind::Sgd => params.values[i] -= lr * g,
            OptimizerKind::Adam => {
                let m = ADAM_BETA1 * state.first_moment[i] + (1.0 - ADAM_BETA1) * g;
                let v = ADAM_BETA2 * state.second_moment[i] + (1.0 - ADAM_BETA2) * g * g;
                state.first_moment[i] = m;
                state.second_moment[i] = v;
                params.values[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
            }
        }
    }
    Ok(())
}
