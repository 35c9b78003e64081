//! Dataset construction, scaling and splitting.

pub mod delimited;
pub mod dna;
pub mod manifest;
pub mod split;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::augment::BoxBounds;
use crate::error::{Error, Result};

pub use delimited::load_delimited;
pub use split::{split_ood, split_train_val_test, OodRule, SplitSizes, SplitSpec};
pub use synth::{synth_1d, toy_function};

/// How augmentation should draw inputs from the feature space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FeatureKind {
    #[default]
    Continuous,
    /// One-hot encoded 8-mers; the feature space is the canonical universe.
    DnaOneHot,
}

/// Feature matrix with targets.
///
/// `bounds` is the input domain. When `bounds_declared` is set, the domain
/// was given by the generator (synthetic data, one-hot encodings) and
/// feature scaling maps it onto the unit box; otherwise it is the observed
/// range of the rows and scaling is fit on the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub bounds: BoxBounds,
    pub bounds_declared: bool,
    pub kind: FeatureKind,
    pub scaling: Option<ScalingInfo>,
    /// Per-row labels carried through splits (DNA sequences).
    pub tags: Option<Vec<String>>,
}

impl Dataset {
    /// Rows with observed bounds. Rejects empty, ragged or non-finite input.
    pub fn from_rows(name: impl Into<String>, features: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        let name = name.into();
        validate_rows(&name, &features, &targets)?;
        let bounds = observed_bounds(&features)?;
        Ok(Dataset {
            name,
            features,
            targets,
            bounds,
            bounds_declared: false,
            kind: FeatureKind::Continuous,
            scaling: None,
            tags: None,
        })
    }

    /// Rows inside a declared domain.
    pub fn with_domain(
        name: impl Into<String>,
        features: Vec<Vec<f64>>,
        targets: Vec<f64>,
        domain: BoxBounds,
    ) -> Result<Self> {
        let name = name.into();
        validate_rows(&name, &features, &targets)?;
        if features[0].len() != domain.dim() {
            return Err(Error::contract("domain dimension does not match features"));
        }
        Ok(Dataset {
            name,
            features,
            targets,
            bounds: domain,
            bounds_declared: true,
            kind: FeatureKind::Continuous,
            scaling: None,
            tags: None,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// Rows at `indices`, in that order. Domain, scaling and kind are kept.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            bounds: self.bounds.clone(),
            bounds_declared: self.bounds_declared,
            kind: self.kind,
            scaling: self.scaling.clone(),
            tags: self.tags.as_ref().map(|t| indices.iter().map(|&i| t[i].clone()).collect()),
        }
    }

    pub fn concat(&self, other: &Dataset) -> Dataset {
        let mut out = self.clone();
        out.features.extend(other.features.iter().cloned());
        out.targets.extend(other.targets.iter().copied());
        if let (Some(a), Some(b)) = (out.tags.as_mut(), other.tags.as_ref()) {
            a.extend(b.iter().cloned());
        }
        out
    }
}

fn validate_rows(name: &str, features: &[Vec<f64>], targets: &[f64]) -> Result<()> {
    if features.is_empty() {
        return Err(Error::EmptyDataset(name.to_string()));
    }
    if features.len() != targets.len() {
        return Err(Error::contract(format!(
            "{name}: {} feature rows but {} targets",
            features.len(),
            targets.len()
        )));
    }
    let d = features[0].len();
    if d == 0 {
        return Err(Error::contract(format!("{name}: rows have no features")));
    }
    for (i, row) in features.iter().enumerate() {
        if row.len() != d {
            return Err(Error::contract(format!("{name}: row {i} has {} features, expected {d}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) || !targets[i].is_finite() {
            return Err(Error::contract(format!("{name}: row {i} has non-finite values")));
        }
    }
    Ok(())
}

fn observed_bounds(features: &[Vec<f64>]) -> Result<BoxBounds> {
    let d = features[0].len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for row in features {
        for (j, v) in row.iter().enumerate() {
            lo[j] = lo[j].min(*v);
            hi[j] = hi[j].max(*v);
        }
    }
    BoxBounds::new(lo, hi)
}

/// Min-max statistics. Columns with `max == min` map to 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingInfo {
    pub feature_min: Vec<f64>,
    pub feature_max: Vec<f64>,
    pub target_min: f64,
    pub target_max: f64,
}

fn scale_value(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.5
    }
}

impl ScalingInfo {
    pub fn scale_features(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.feature_min.iter().zip(&self.feature_max))
            .map(|(v, (lo, hi))| scale_value(*v, *lo, *hi))
            .collect()
    }

    pub fn unscale_features(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.feature_min.iter().zip(&self.feature_max))
            .map(|(v, (lo, hi))| if hi > lo { lo + v * (hi - lo) } else { *lo })
            .collect()
    }

    pub fn scale_target(&self, y: f64) -> f64 {
        scale_value(y, self.target_min, self.target_max)
    }

    pub fn target_span(&self) -> f64 {
        if self.target_max > self.target_min {
            self.target_max - self.target_min
        } else {
            1.0
        }
    }

    pub fn unscale_target(&self, y: f64) -> f64 {
        if self.target_max > self.target_min {
            self.target_min + y * self.target_span()
        } else {
            self.target_min
        }
    }

    pub fn unscale_variance(&self, s2: f64) -> f64 {
        s2 * self.target_span() * self.target_span()
    }
}

/// Fits min-max scaling on the training rows. Feature statistics come from
/// the declared domain when there is one.
pub fn fit_scaling(train: &Dataset) -> Result<ScalingInfo> {
    if train.is_empty() {
        return Err(Error::EmptyDataset(format!("{} (scaling fit)", train.name)));
    }
    let (feature_min, feature_max) = if train.bounds_declared {
        (train.bounds.lower().to_vec(), train.bounds.upper().to_vec())
    } else {
        let b = observed_bounds(&train.features)?;
        (b.lower().to_vec(), b.upper().to_vec())
    };
    let target_min = train.targets.iter().copied().fold(f64::INFINITY, f64::min);
    let target_max = train.targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ScalingInfo {
        feature_min,
        feature_max,
        target_min,
        target_max,
    })
}

/// Scales features and targets. Values outside the training range are kept
/// as-is (an OOD target may land above 1); the dataset's sampling domain
/// becomes the unit box.
pub fn apply_scaling(info: &ScalingInfo, data: &Dataset) -> Dataset {
    Dataset {
        name: data.name.clone(),
        features: data.features.iter().map(|x| info.scale_features(x)).collect(),
        targets: data.targets.iter().map(|&y| info.scale_target(y)).collect(),
        bounds: BoxBounds::unit(data.dim()),
        bounds_declared: true,
        kind: data.kind,
        scaling: Some(info.clone()),
        tags: data.tags.clone(),
    }
}
