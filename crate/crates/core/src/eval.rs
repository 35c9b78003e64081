//! Metrics and significance statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::data::Dataset;
use crate::ensemble::{ensemble_nll, Ensemble};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub nll: f64,
    pub rmse: f64,
    pub n: usize,
}

pub fn mean_ensemble_nll(ensemble: &Ensemble, data: &Dataset) -> Result<f64> {
    dataset_metrics(ensemble, data).map(|m| m.nll)
}

/// Mean ensemble NLL and RMSE of the ensemble mean, in the dataset's units.
pub fn dataset_metrics(ensemble: &Ensemble, data: &Dataset) -> Result<DatasetMetrics> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("{} (metrics)", data.name)));
    }
    let mut nll = 0.0;
    let mut sq = 0.0;
    for (x, &y) in data.features.iter().zip(&data.targets) {
        let p = ensemble.predict(x)?;
        nll += ensemble_nll(&p, y)?;
        sq += (p.mu_bar - y) * (p.mu_bar - y);
    }
    let n = data.len() as f64;
    Ok(DatasetMetrics {
        nll: nll / n,
        rmse: (sq / n).sqrt(),
        n: data.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub expected_levels: Vec<f64>,
    pub observed_frequencies: Vec<f64>,
}

/// 0.05, 0.10, ..., 0.95.
pub fn default_levels() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// Coverage of central intervals `μ ± z·σ` for predictions given as
/// `(mu, sigma2)` pairs.
pub fn calibration_from_predictions(preds: &[(f64, f64)], targets: &[f64], levels: &[f64]) -> Result<CalibrationCurve> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::contract("calibration needs one nonempty prediction per target"));
    }
    if let Some(p) = levels.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::contract(format!("calibration level {p} must lie in (0, 1)")));
    }
    // |y − μ|/σ per row, compared against each z
    let scores: Vec<f64> = preds
        .iter()
        .zip(targets)
        .map(|(&(mu, s2), &y)| (y - mu).abs() / s2.sqrt())
        .collect();
    let n = scores.len() as f64;
    let observed_frequencies = levels
        .iter()
        .map(|&p| {
            let z = normal_quantile(0.5 * (1.0 + p));
            scores.iter().filter(|&&s| s <= z).count() as f64 / n
        })
        .collect();
    Ok(CalibrationCurve {
        expected_levels: levels.to_vec(),
        observed_frequencies,
    })
}

pub fn calibration_curve(ensemble: &Ensemble, data: &Dataset, levels: &[f64]) -> Result<CalibrationCurve> {
    let preds = data
        .features
        .iter()
        .map(|x| ensemble.predict(x).map(|p| (p.mu_bar, p.sigma2_bar)))
        .collect::<Result<Vec<_>>>()?;
    calibration_from_predictions(&preds, &data.targets, levels)
}

/// Standard-normal quantile (Wichura's AS241, about 1e-16 relative).
pub fn normal_quantile(p: f64) -> f64 {
    if p.is_nan() || p <= 0.0 {
        return if p == 0.0 { f64::NEG_INFINITY } else { f64::NAN };
    }
    if p >= 1.0 {
        return if p == 1.0 { f64::INFINITY } else { f64::NAN };
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((r * 2509.0809287301226727 + 33430.575583588128105) * r + 67265.770927008700853) * r
                + 45921.953931549871457)
                * r
                + 13731.693765509461125)
                * r
                + 1971.5909503065514427)
                * r
                + 133.14166789178437745)
                * r
                + 3.387132872796366608)
            / (((((((r * 5226.495278852545925 + 28729.085735721942674) * r + 39307.89580009271061) * r
                + 21213.794301586595867)
                * r
                + 5394.1960214247511077)
                * r
                + 687.1870074920579083)
                * r
                + 42.313330701600911252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        (((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r + 0.24178072517745061177) * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// `global_max − max(acquired)`.
pub fn simple_regret(acquired: &[f64], global_max: f64) -> Result<f64> {
    let best = acquired
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| Error::contract("simple regret needs at least one acquired target"))?;
    Ok(global_max - best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    /// Set when the p-value came from a degenerate input (zero variance, or
    /// a zero p-value fed to Fisher's method).
    pub degenerate: bool,
}

/// Lower-tail probability of Student's t with `dof` degrees of freedom.
pub fn student_t_cdf(t: f64, dof: f64) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::contract(format!("Student-t with dof {dof}: {e}")))?;
    Ok(dist.cdf(t))
}

/// Upper-tail probability of the chi-square distribution.
pub fn chi_square_sf(x: f64, dof: f64) -> Result<f64> {
    let dist = ChiSquared::new(dof).map_err(|e| Error::contract(format!("chi-square with dof {dof}: {e}")))?;
    Ok(dist.sf(x))
}

/// Paired test of the alternative `mean(a) < mean(b)`; small p favours it.
pub fn paired_t_test_one_tailed(a: &[f64], b: &[f64]) -> Result<StatResult> {
    let n = a.len();
    if n < 2 || n != b.len() {
        return Err(Error::contract(format!("paired t-test needs equal lengths >= 2 (got {} and {})", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        let (statistic, p_value) = if mean < 0.0 {
            (f64::NEG_INFINITY, 0.0)
        } else if mean > 0.0 {
            (f64::INFINITY, 1.0)
        } else {
            (0.0, 0.5)
        };
        return Ok(StatResult {
            statistic,
            p_value,
            n,
            degenerate: true,
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    Ok(StatResult {
        statistic: t,
        p_value: student_t_cdf(t, (n - 1) as f64)?.clamp(0.0, 1.0),
        n,
        degenerate: false,
    })
}

/// Fisher's method: `X = −2 Σ ln p` against chi-square with `2k` dof.
pub fn fisher_combine(p_values: &[f64]) -> Result<StatResult> {
    if p_values.is_empty() {
        return Err(Error::contract("fisher_combine needs at least one p-value"));
    }
    if let Some(p) = p_values.iter().find(|&&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::contract(format!("p-value {p} outside [0, 1]")));
    }
    let n = p_values.len();
    if p_values.contains(&0.0) {
        return Ok(StatResult {
            statistic: f64::INFINITY,
            p_value: 0.0,
            n,
            degenerate: true,
        });
    }
    let x = -2.0 * p_values.iter().map(|p| p.ln()).sum::<f64>();
    Ok(StatResult {
        statistic: x,
        p_value: chi_square_sf(x, 2.0 * n as f64)?.clamp(0.0, 1.0),
        n,
        degenerate: false,
    })
}

/// Mean and sample standard deviation (divisor n−1; 0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
