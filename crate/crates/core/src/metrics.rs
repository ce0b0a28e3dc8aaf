//! Inequality metrics and bootstrap standard errors for bucket heights.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StateId;
use crate::segment::{segment, Bucket, BucketScheme, Observation};

pub const DEFAULT_REPLICATES: usize = 500;

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Sum {
    sum: f64,
    compensation: f64,
}

impl Sum {
    fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for Sum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Sum::default();
        for v in iter {
            s.add(v);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GiniMethod {
    /// Pairwise double sum, O(n^2).
    Naive,
    /// Rank-weighted single pass after sorting, O(n log n).
    #[default]
    Sorted,
}

impl FromStr for GiniMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "naive" => Ok(GiniMethod::Naive),
            "sorted" => Ok(GiniMethod::Sorted),
            other => Err(format!("unknown Gini method `{other}`")),
        }
    }
}

impl fmt::Display for GiniMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GiniMethod::Naive => "naive",
            GiniMethod::Sorted => "sorted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GiniResult {
    pub g: f64,
    pub n: usize,
    pub method: GiniMethod,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GiniOptions {
    /// Accept negative incomes; the coefficient may then exceed 1.
    pub allow_negative: bool,
}

/// Validated inputs: weights default to 1.
fn prepare<'a>(
    x: &'a [f64],
    w: Option<&'a [f64]>,
    options: GiniOptions,
) -> Result<Vec<(f64, f64)>> {
    if let Some(w) = w {
        if w.len() != x.len() {
            return Err(Error::Numeric(format!(
                "{} incomes but {} weights",
                x.len(),
                w.len()
            )));
        }
        if let Some(&bad) = w.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Numeric(format!("invalid weight {bad}")));
        }
    }
    if !options.allow_negative {
        if let Some(&neg) = x.iter().find(|v| **v < 0.0) {
            return Err(Error::NegativeIncome(neg));
        }
    }
    let pairs: Vec<(f64, f64)> = match w {
        Some(w) => x.iter().copied().zip(w.iter().copied()).collect(),
        None => x.iter().map(|&v| (v, 1.0)).collect(),
    };
    let total_weight: Sum = pairs.iter().map(|p| p.1).collect();
    if pairs.is_empty() || total_weight.value() <= 0.0 {
        return Err(Error::ZeroWeight);
    }
    Ok(pairs)
}

fn weighted_total(pairs: &[(f64, f64)]) -> (f64, f64) {
    let w: Sum = pairs.iter().map(|p| p.1).collect();
    let wx: Sum = pairs.iter().map(|p| p.0 * p.1).collect();
    (w.value(), wx.value())
}

/// Mean absolute difference over twice the mean, as an explicit double sum.
/// Weighted pairs contribute `w_i * w_j`.
pub fn gini_naive(x: &[f64], w: Option<&[f64]>, options: GiniOptions) -> Result<GiniResult> {
    let pairs = prepare(x, w, options)?;
    let (total_w, total_wx) = weighted_total(&pairs);
    if total_wx == 0.0 {
        return Err(Error::ZeroMean);
    }
    let mut diff = Sum::default();
    for &(xi, wi) in &pairs {
        for &(xj, wj) in &pairs {
            diff.add(wi * wj * (xi - xj).abs());
        }
    }
    Ok(GiniResult {
        g: diff.value() / (2.0 * total_w * total_wx),
        n: pairs.len(),
        method: GiniMethod::Naive,
    })
}

/// Same coefficient from one pass over the sorted incomes: each income enters
/// with weight `C_{j-1} + C_j - W`, where `C` is cumulative weight.
pub fn gini_sorted(x: &[f64], w: Option<&[f64]>, options: GiniOptions) -> Result<GiniResult> {
    let mut pairs = prepare(x, w, options)?;
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (total_w, total_wx) = weighted_total(&pairs);
    if total_wx == 0.0 {
        return Err(Error::ZeroMean);
    }
    let mut before = Sum::default();
    let mut half = Sum::default();
    for &(xi, wi) in &pairs {
        let below = before.value();
        before.add(wi);
        let through = before.value();
        half.add(wi * xi * ((below - total_w) + through));
    }
    Ok(GiniResult {
        g: half.value() / (total_w * total_wx),
        n: pairs.len(),
        method: GiniMethod::Sorted,
    })
}

pub fn gini(x: &[f64], w: Option<&[f64]>, method: GiniMethod, options: GiniOptions) -> Result<GiniResult> {
    match method {
        GiniMethod::Naive => gini_naive(x, w, options),
        GiniMethod::Sorted => gini_sorted(x, w, options),
    }
}

/// Vertices of the Lorenz polyline: cumulative population share against
/// cumulative income share, from (0, 0) to (1, 1).
pub fn lorenz_points(x: &[f64], w: Option<&[f64]>) -> Result<Vec<(f64, f64)>> {
    let mut pairs = prepare(x, w, GiniOptions::default())?;
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (total_w, total_wx) = weighted_total(&pairs);
    if total_wx <= 0.0 {
        return Err(Error::ZeroMean);
    }
    let mut points = Vec::with_capacity(pairs.len() + 1);
    points.push((0.0, 0.0));
    let mut cw = Sum::default();
    let mut cwx = Sum::default();
    let last = pairs.len() - 1;
    for (i, &(xi, wi)) in pairs.iter().enumerate() {
        cw.add(wi);
        cwx.add(wi * xi);
        if i == last {
            points.push((1.0, 1.0));
        } else {
            points.push((cw.value() / total_w, cwx.value() / total_wx));
        }
    }
    Ok(points)
}

/// Bucket heights with bootstrap standard errors for one state-year frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapEstimate {
    pub buckets: Vec<Bucket>,
    pub replicates: usize,
    pub seed: u64,
}

/// Resamples households with replacement (uniform draws, weights carried),
/// re-runs rank/trim/bucket on each replicate and reports the sample standard
/// deviation of each height. Replicate `i` draws from stream `i` of the seed,
/// so the result does not depend on scheduling.
pub fn bootstrap_se(
    observations: &[Observation],
    scheme: BucketScheme,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapEstimate> {
    if replicates < 2 {
        return Err(Error::Usage(format!(
            "bootstrap needs at least 2 replicates, got {replicates}"
        )));
    }
    if observations.is_empty() {
        return Err(Error::ZeroWeight);
    }
    let point = segment(observations, scheme)?;
    let n = observations.len();

    let draws: Vec<Vec<Option<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let sample: Vec<Observation> = (0..n)
                .map(|_| observations[rng.random_range(0..n)])
                .collect();
            // all-zero-weight replicates are possible with zero-weight households
            match segment(&sample, scheme) {
                Ok(s) => s.buckets.iter().map(|b| b.height).collect(),
                Err(_) => vec![None; point.buckets.len()],
            }
        })
        .collect();

    let buckets = point
        .buckets
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let heights: Vec<f64> = draws.iter().filter_map(|d| d[j]).collect();
            Bucket {
                se: sample_sd(&heights),
                ..*b
            }
        })
        .collect();
    Ok(BootstrapEstimate {
        buckets,
        replicates,
        seed,
    })
}

fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Some((ss / (n - 1.0)).sqrt())
}

/// Standard errors for every (state, year, k) of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BootstrapReport {
    pub replicates: usize,
    pub seed: u64,
    pub cells: BTreeMap<(StateId, i32), Vec<Bucket>>,
}

impl BootstrapReport {
    pub fn se(&self, state: StateId, year: i32, k: u8) -> Option<f64> {
        self.cells
            .get(&(state, year))?
            .iter()
            .find(|b| b.k == k)?
            .se
    }
}
