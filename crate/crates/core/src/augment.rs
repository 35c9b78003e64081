//! Augmented inputs for the diversity regularizers and adversarial training.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::dna::CanonicalKmers;
use crate::ensemble::{mod_variance_gradient, Ensemble};
use crate::error::{Error, Result};
use crate::network::{self, forward, gaussian_nll_partials, NetworkParams, Upstream};

/// Axis-aligned input box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::contract("box bounds need matching, nonempty lower/upper"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::contract("box bounds need finite lower[i] <= upper[i]"));
        }
        Ok(BoxBounds { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        BoxBounds {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| l <= v && v <= u)
    }

    pub fn clip(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }
}

/// Augmented points with their penalty weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentBatch {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl AugmentBatch {
    pub fn unweighted(points: Vec<Vec<f64>>) -> Self {
        let weights = vec![1.0; points.len()];
        AugmentBatch { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn sample_uniform_box<R: Rng + ?Sized>(bounds: &BoxBounds, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::contract("sample size must be at least 1"));
    }
    Ok((0..n)
        .map(|_| {
            bounds
                .lower
                .iter()
                .zip(&bounds.upper)
                .map(|(&l, &u)| if l == u { l } else { rng.random_range(l..u) })
                .collect()
        })
        .collect())
}

/// Uniform draws from the canonical 8-mer universe, one-hot encoded.
pub fn sample_uniform_discrete<R: Rng + ?Sized>(universe: &CanonicalKmers, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::contract("sample size must be at least 1"));
    }
    let seqs = universe.sequences();
    Ok((0..n)
        .map(|_| crate::data::dna::encode_bytes(&seqs[rng.random_range(0..seqs.len())]))
        .collect())
}

/// Rows drawn uniformly with replacement from the training features.
pub fn sample_training<R: Rng + ?Sized>(features: &[Vec<f64>], n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if features.is_empty() {
        return Err(Error::contract("cannot sample from an empty training set"));
    }
    Ok((0..n).map(|_| features[rng.random_range(0..features.len())].clone()).collect())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Distance-based weights for augmented points.
///
/// Each augmented point scores the sum of squared distances to its `k`
/// nearest minibatch members; scores are divided by the largest one. If
/// every score is zero the weights fall back to 1.
pub fn knn_weights(augmented: &[Vec<f64>], minibatch: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    if augmented.is_empty() {
        return Err(Error::contract("no augmented points to weight"));
    }
    if k == 0 || k > minibatch.len() {
        return Err(Error::contract(format!(
            "k = {k} must lie in 1..={} (minibatch size)",
            minibatch.len()
        )));
    }
    let mut dists = vec![0.0; minibatch.len()];
    let sums: Vec<f64> = augmented
        .iter()
        .map(|a| {
            for (d, b) in dists.iter_mut().zip(minibatch) {
                *d = squared_distance(a, b);
            }
            if k < dists.len() {
                dists.select_nth_unstable_by(k - 1, |x, y| x.total_cmp(y));
            }
            dists[..k].iter().sum()
        })
        .collect();
    let max = sums.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(vec![1.0; sums.len()]);
    }
    Ok(sums.iter().map(|s| s / max).collect())
}

/// Gradient of `σ²_mod` with respect to the input at `x`.
pub fn mod_variance_input_gradient(ensemble: &Ensemble, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let passes = ensemble
        .members()
        .iter()
        .map(|m| forward(m, x))
        .collect::<Result<Vec<_>>>()?;
    let mus: Vec<f64> = passes.iter().map(|(p, _)| p.mu).collect();
    let dvar = mod_variance_gradient(&mus)?;
    let mut grad = vec![0.0; x.len()];
    for ((member, (_, cache)), g) in ensemble.members().iter().zip(&passes).zip(dvar) {
        let gx = network::input_gradient_cached(member, cache, Upstream::new(g, 0.0));
        for (a, b) in grad.iter_mut().zip(gx) {
            *a += b;
        }
    }
    let mean = mus.iter().sum::<f64>() / mus.len() as f64;
    let var = mus.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / mus.len() as f64;
    Ok((var, grad))
}

/// One descent step on `σ²_mod` per point, clipped back into `bounds`.
pub fn adversarial_variance_step(
    ensemble: &Ensemble,
    points: &[Vec<f64>],
    alpha_adv: f64,
    bounds: &BoxBounds,
) -> Result<Vec<Vec<f64>>> {
    if !(alpha_adv >= 0.0) {
        return Err(Error::contract(format!("alpha_adv must be nonnegative, got {alpha_adv}")));
    }
    points
        .iter()
        .map(|x| {
            let (_, grad) = mod_variance_input_gradient(ensemble, x)?;
            if grad.iter().any(|g| !g.is_finite()) {
                log::warn!("non-finite variance gradient; augmented point left in place");
                return Ok(x.clone());
            }
            let mut moved: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - alpha_adv * gi).collect();
            bounds.clip(&mut moved);
            Ok(moved)
        })
        .collect()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Fast-gradient-sign example `x + δ·sign(∂NLL/∂x)`, clipped into `bounds`.
/// The label is carried over unchanged by the caller.
pub fn adversarial_training_example(
    member: &NetworkParams,
    x: &[f64],
    y: f64,
    delta: f64,
    bounds: &BoxBounds,
) -> Result<Vec<f64>> {
    if !(delta >= 0.0) {
        return Err(Error::contract(format!("delta must be nonnegative, got {delta}")));
    }
    let (pred, cache) = forward(member, x)?;
    let grad = network::input_gradient_cached(member, &cache, gaussian_nll_partials(&pred, y));
    Ok(fgsm_from_gradient(x, &grad, delta, bounds))
}

pub(crate) fn fgsm_from_gradient(x: &[f64], grad: &[f64], delta: f64, bounds: &BoxBounds) -> Vec<f64> {
    let mut out: Vec<f64> = x.iter().zip(grad).map(|(xi, gi)| xi + delta * sign(*gi)).collect();
    bounds.clip(&mut out);
    out
}

/// Largest KL divergence from any point mass to `pmf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMassKl {
    pub value: f64,
    /// Set when some entry is zero and the divergence is unbounded.
    pub unbounded: bool,
}

/// `max_x KL(δ_x ‖ q) = −ln min_x q(x)`.
pub fn worst_case_pointmass_kl(pmf: &[f64]) -> Result<PointMassKl> {
    if pmf.is_empty() || pmf.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::contract("pmf entries must be nonnegative"));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("pmf sums to {total}, not 1")));
    }
    let min = pmf.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        return Ok(PointMassKl {
            value: f64::INFINITY,
            unbounded: true,
        });
    }
    Ok(PointMassKl {
        value: -min.ln(),
        unbounded: false,
    })
}
