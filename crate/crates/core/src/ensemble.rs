//! Ensemble aggregation into a single Gaussian predictive distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{self, gaussian_nll, HeadConfig, NetworkParams, PredictiveParams};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    members: Vec<NetworkParams>,
}

/// Mixture of member predictions collapsed to one Gaussian.
///
/// `sigma2_eps` is the mean predicted noise, `sigma2_mod` the population
/// variance of member means, and `sigma2_bar` their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub mu_bar: f64,
    pub sigma2_eps: f64,
    pub sigma2_mod: f64,
    pub sigma2_bar: f64,
}

impl Ensemble {
    pub fn new(members: Vec<NetworkParams>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::contract(format!("an ensemble needs at least 2 members, got {}", members.len())));
        }
        let first = &members[0];
        if members.iter().any(|m| !m.same_shape(first) || m.heads() != first.heads()) {
            return Err(Error::contract("ensemble members must share one architecture"));
        }
        Ok(Ensemble { members })
    }

    /// Independently initialized members, member `m` seeded from
    /// `(seed, MemberInit, m)`.
    pub fn init(size: usize, input_dim: usize, hidden: usize, heads: HeadConfig, seed: u64) -> Result<Self> {
        let members = (0..size)
            .map(|m| {
                let mut rng = stream(seed, Purpose::MemberInit, m as u64);
                NetworkParams::init(input_dim, hidden, heads, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(members)
    }

    pub fn members(&self) -> &[NetworkParams] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [NetworkParams] {
        &mut self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    pub fn member_predictions(&self, x: &[f64]) -> Result<Vec<PredictiveParams>> {
        self.members.iter().map(|m| network::predict(m, x)).collect()
    }

    pub fn member_means(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.members.iter().map(|m| network::predict(m, x).map(|p| p.mu)).collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<EnsemblePrediction> {
        aggregate(&self.member_predictions(x)?)
    }

    pub fn sigma2_mod(&self, x: &[f64]) -> Result<f64> {
        Ok(population_variance(&self.member_means(x)?))
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Deviations from the mean, computed about the first element so that equal
/// inputs give exact zeros.
fn deviations(xs: &[f64]) -> Vec<f64> {
    let shifted: Vec<f64> = xs.iter().map(|x| x - xs[0]).collect();
    let m = mean(&shifted);
    shifted.iter().map(|d| d - m).collect()
}

fn population_variance(xs: &[f64]) -> f64 {
    deviations(xs).iter().map(|d| d * d).sum::<f64>() / xs.len() as f64
}

pub fn aggregate(member_preds: &[PredictiveParams]) -> Result<EnsemblePrediction> {
    if member_preds.len() < 2 {
        return Err(Error::contract(format!(
            "aggregation needs at least 2 member predictions, got {}",
            member_preds.len()
        )));
    }
    let mus: Vec<f64> = member_preds.iter().map(|p| p.mu).collect();
    let mu_bar = mean(&mus);
    let sigma2_eps = member_preds.iter().map(|p| p.sigma2).sum::<f64>() / member_preds.len() as f64;
    let sigma2_mod = population_variance(&mus);
    Ok(EnsemblePrediction {
        mu_bar,
        sigma2_eps,
        sigma2_mod,
        sigma2_bar: sigma2_eps + sigma2_mod,
    })
}

/// Gaussian NLL of `y` under `N(mu_bar, sigma2_bar)`.
pub fn ensemble_nll(pred: &EnsemblePrediction, y: f64) -> Result<f64> {
    gaussian_nll(
        &PredictiveParams {
            mu: pred.mu_bar,
            sigma2: pred.sigma2_bar,
        },
        y,
    )
}

/// `∂σ²_mod/∂μ_m = (2/M)(μ_m − μ̄)`.
pub fn mod_variance_gradient(member_mus: &[f64]) -> Result<Vec<f64>> {
    let m = member_mus.len();
    if m < 2 {
        return Err(Error::contract(format!("need at least 2 member means, got {m}")));
    }
    let scale = 2.0 / m as f64;
    Ok(deviations(member_mus).iter().map(|d| scale * d).collect())
}
