//! OOD and train/validation/test splitting.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dna::gc_content;
use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OodRule {
    /// The `⌈q·n⌉` rows with the largest targets.
    TopYFraction(f64),
    /// Rows whose GC content exceeds the threshold (DNA data only).
    GcContent(f64),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitSizes {
    Fractions { train: f64, val: f64 },
    Counts { train: usize, val: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ood_rule: OodRule,
    pub sizes: SplitSizes,
    pub seed: u64,
}

/// Separates out-of-distribution rows; both parts keep the original row order.
pub fn split_ood(data: &Dataset, rule: OodRule) -> Result<(Dataset, Dataset)> {
    let n = data.len();
    let mut is_ood = vec![false; n];
    match rule {
        OodRule::None => return Ok((data.clone(), data.select(&[]))),
        OodRule::TopYFraction(q) => {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::Split(format!("OOD fraction {q} must lie in (0, 1)")));
            }
            let k = ((q * n as f64) - 1e-9).ceil() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            // stable: equal targets keep row order
            order.sort_by(|&a, &b| data.targets[b].total_cmp(&data.targets[a]));
            for &i in order.iter().take(k) {
                is_ood[i] = true;
            }
        }
        OodRule::GcContent(t) => {
            let tags = data
                .tags
                .as_ref()
                .ok_or_else(|| Error::Split("GC-content rule needs DNA sequences".into()))?;
            for (flag, seq) in is_ood.iter_mut().zip(tags) {
                *flag = gc_content(seq)? > t;
            }
        }
    }
    let (ood, ind): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_ood[i]);
    if ood.is_empty() || ind.is_empty() {
        return Err(Error::Split(format!(
            "rule {rule:?} leaves {} in-distribution and {} OOD rows",
            ind.len(),
            ood.len()
        )));
    }
    Ok((data.select(&ind), data.select(&ood)))
}

fn resolve_sizes(n: usize, sizes: SplitSizes) -> Result<(usize, usize)> {
    let (train, val) = match sizes {
        SplitSizes::Fractions { train, val } => {
            if !(train > 0.0 && val > 0.0 && train + val < 1.0 + 1e-12) {
                return Err(Error::Split(format!("fractions train={train} val={val} are infeasible")));
            }
            ((train * n as f64).round() as usize, (val * n as f64).round() as usize)
        }
        SplitSizes::Counts { train, val } => (train, val),
    };
    if train == 0 || val == 0 || train + val > n {
        return Err(Error::Split(format!("cannot carve train={train}, val={val} from {n} rows")));
    }
    Ok((train, val))
}

/// Seeded shuffle followed by contiguous train / validation / test slices.
pub fn split_train_val_test(data: &Dataset, sizes: SplitSizes, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let n = data.len();
    let (n_train, n_val) = resolve_sizes(n, sizes)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, Purpose::Split, 0));
    Ok((
        data.select(&idx[..n_train]),
        data.select(&idx[n_train..n_train + n_val]),
        data.select(&idx[n_train + n_val..]),
    ))
}
