//! Stratified bootstrap estimates of a statistic's spread.
//!
//! Sampling contract, per iteration `t`:
//!
//! 1. Seed a `ChaCha8Rng` with `seed_from_u64(seed)` and select stream `t`.
//! 2. Visit strata in ascending key order. For a stratum with `s` member
//!    indices (in data order), draw `k = ceil(fraction * s)` of them without
//!    replacement by a partial Fisher-Yates shuffle: for `i in 0..k`, pick
//!    `j = rng.gen_range(i..s)` and swap positions `i` and `j`; the first `k`
//!    entries are the sample.
//! 3. The subset handed to the statistic is the concatenation of the stratum
//!    samples in that order.
//!
//! Because every iteration owns its stream, iterations can be evaluated in any
//! order or on any number of threads with identical results.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::RatedPairRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrataKey {
    RatingValue,
    Language,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub iterations: usize,
    pub fraction: f64,
    pub seed: u64,
    pub strata: StrataKey,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            fraction: 0.8,
            seed: 0,
            strata: StrataKey::RatingValue,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Precondition("bootstrap needs at least one iteration".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Precondition(format!(
                "bootstrap fraction must lie in (0, 1], got {}",
                self.fraction
            )));
        }
        Ok(())
    }
}

/// Records that can be assigned to a stratum.
pub trait Stratified {
    /// `None` when the record carries no value for `key`.
    fn stratum(&self, key: StrataKey) -> Option<String>;
}

impl Stratified for RatedPairRecord {
    fn stratum(&self, key: StrataKey) -> Option<String> {
        match key {
            StrataKey::RatingValue => Some(format!("{}", self.rating)),
            StrataKey::Language => Some(self.language.clone()),
            StrataKey::None => Some(String::new()),
        }
    }
}

/// Partitions record indices by stratum; each list keeps data order.
pub fn stratify<R: Stratified>(data: &[R], key: StrataKey) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, record) in data.iter().enumerate() {
        let s = record.stratum(key).ok_or_else(|| {
            Error::Data(format!("record {i} has no value for stratum key {key:?}"))
        })?;
        strata.entry(s).or_default().push(i);
    }
    Ok(strata)
}

/// `ceil(fraction * size)`, clamped to `[1, size]`.
///
/// The small slack absorbs products such as `0.7 * 10 = 7.000000000000001`.
pub fn stratum_sample_size(fraction: f64, size: usize) -> usize {
    let k = (fraction * size as f64 - 1e-9).ceil() as usize;
    k.clamp(1, size)
}

/// Draws the subset for one iteration following the module-level contract.
pub fn draw_subset(
    strata: &BTreeMap<String, Vec<usize>>,
    fraction: f64,
    seed: u64,
    iteration: u64,
) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    let mut out = Vec::new();
    for members in strata.values() {
        let mut pool = members.clone();
        let k = stratum_sample_size(fraction, pool.len());
        for i in 0..k {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        out.extend_from_slice(&pool[..k]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub mean: f64,
    /// Population standard deviation over iterations.
    pub std: f64,
    pub iterations: usize,
}

/// Mean and population standard deviation with Neumaier-compensated sums,
/// reduced in index order.
pub fn summarize(values: &[f64]) -> Result<(f64, f64)> {
    let Some(&first) = values.first() else {
        return Err(Error::Precondition("no values to summarize".into()));
    };
    if values.iter().all(|&v| v == first) {
        return Ok((first, 0.0));
    }
    let n = values.len() as f64;
    let mean = neumaier_sum(values.iter().copied()) / n;
    let var = neumaier_sum(values.iter().map(|v| (v - mean) * (v - mean))) / n;
    Ok((mean, var.sqrt()))
}

fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Evaluates `statistic` on `cfg.iterations` stratified subsets.
///
/// Iterations run on the current rayon pool; results do not depend on its
/// size.
pub fn bootstrap_std<R, F>(data: &[R], statistic: F, cfg: &BootstrapConfig) -> Result<BootstrapSummary>
where
    R: Stratified + Sync,
    F: Fn(&[&R]) -> Result<f64> + Sync,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Precondition("bootstrap over empty data".into()));
    }
    let strata = stratify(data, cfg.strata)?;
    let values = (0..cfg.iterations)
        .into_par_iter()
        .map(|t| {
            let subset: Vec<&R> = draw_subset(&strata, cfg.fraction, cfg.seed, t as u64)
                .into_iter()
                .map(|i| &data[i])
                .collect();
            statistic(&subset).map_err(|e| Error::Statistic {
                iteration: t,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, std) = summarize(&values)?;
    Ok(BootstrapSummary {
        mean,
        std,
        iterations: cfg.iterations,
    })
}
