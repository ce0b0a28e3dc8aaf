//! Weighted percentile ranks, 5-95 trimming and percentile-band buckets.
//!
//! A household's rank is its cumulative share of weight after a stable
//! ascending sort by adjusted income. Bucket `k` holds the households whose
//! rank lies in `[(k-1)/100, k/100]`; its height is the largest income in the
//! band.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRIM_LOW: f64 = 0.05;
pub const TRIM_HIGH: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub income: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranked {
    pub income: f64,
    pub weight: f64,
    pub rank: f64,
}

/// Households in ascending income order with their cumulative-weight ranks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedFrame {
    pub entries: Vec<Ranked>,
}

impl RankedFrame {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Income of the first household whose rank reaches `q`.
    pub fn quantile(&self, q: f64) -> Option<f64> {
        let i = self.entries.partition_point(|e| e.rank < q);
        self.entries.get(i).map(|e| e.income)
    }

    pub fn median(&self) -> Option<f64> {
        self.quantile(0.5)
    }
}

/// Stable ascending sort by income, then running weight share.
pub fn percentile_ranks(observations: &[Observation]) -> Result<RankedFrame> {
    let mut sorted = observations.to_vec();
    sorted.sort_by(|a, b| a.income.total_cmp(&b.income));

    let total: f64 = sorted.iter().map(|o| o.weight).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeight);
    }
    let mut cumulative = 0.0;
    let entries = sorted
        .into_iter()
        .map(|o| {
            cumulative += o.weight;
            Ranked {
                income: o.income,
                weight: o.weight,
                rank: cumulative / total,
            }
        })
        .collect();
    Ok(RankedFrame { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrimReport {
    pub removed_low: usize,
    pub removed_high: usize,
}

impl TrimReport {
    pub fn removed(&self) -> usize {
        self.removed_low + self.removed_high
    }
}

/// Keeps households with `0.05 <= rank <= 0.95`. Ranks are not recomputed.
pub fn trim(frame: &RankedFrame) -> (RankedFrame, TrimReport) {
    let mut report = TrimReport::default();
    let entries = frame
        .entries
        .iter()
        .filter(|e| {
            if e.rank < TRIM_LOW {
                report.removed_low += 1;
                false
            } else if e.rank > TRIM_HIGH {
                report.removed_high += 1;
                false
            } else {
                true
            }
        })
        .copied()
        .collect();
    (RankedFrame { entries }, report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BucketScheme {
    /// 5, 15, ..., 45, 50, 55, ..., 95
    #[default]
    Decile,
    /// 5, 6, ..., 95
    Percentile,
}

impl BucketScheme {
    pub fn ks(self) -> Vec<u8> {
        match self {
            BucketScheme::Decile => (5..=45)
                .step_by(10)
                .chain(std::iter::once(50))
                .chain((55..=95).step_by(10))
                .collect(),
            BucketScheme::Percentile => (5..=95).collect(),
        }
    }
}

impl fmt::Display for BucketScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BucketScheme::Decile => "decile",
            BucketScheme::Percentile => "percentile",
        })
    }
}

impl FromStr for BucketScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "decile" => Ok(BucketScheme::Decile),
            "percentile" => Ok(BucketScheme::Percentile),
            other => Err(format!("unknown bucket scheme `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bucket {
    pub k: u8,
    /// `None` only when this and every earlier bucket were empty.
    pub height: Option<f64>,
    pub n: usize,
    /// Height copied from the previous bucket because this band was empty.
    pub carried: bool,
    pub se: Option<f64>,
}

/// Index range of the households whose rank lies in `[lo, hi]`.
fn band(frame: &RankedFrame, lo: f64, hi: f64) -> std::ops::Range<usize> {
    let start = frame.entries.partition_point(|e| e.rank < lo);
    let end = frame.entries.partition_point(|e| e.rank <= hi);
    start..end.max(start)
}

/// Empty bands carry the height at `k - 1`: the richest household ranked
/// between the lowest band's floor and this band, so every scheme agrees
/// with the percentile grid at shared `k`.
pub fn build_buckets(frame: &RankedFrame, scheme: BucketScheme) -> Vec<Bucket> {
    let ks = scheme.ks();
    let floor = ks.first().map_or(0.0, |&k| f64::from(k - 1) / 100.0);
    let floor_start = frame.entries.partition_point(|e| e.rank < floor);
    ks.into_iter()
        .map(|k| {
            let lo = f64::from(k - 1) / 100.0;
            let hi = f64::from(k) / 100.0;
            let range = band(frame, lo, hi);
            let n = range.len();
            if n > 0 {
                // sorted ascending, so the band maximum is its last entry
                Bucket {
                    k,
                    height: Some(frame.entries[range.end - 1].income),
                    n,
                    carried: false,
                    se: None,
                }
            } else {
                let previous = (range.start > floor_start)
                    .then(|| frame.entries[range.start - 1].income);
                Bucket {
                    k,
                    height: previous,
                    n: 0,
                    carried: previous.is_some(),
                    se: None,
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmented {
    pub buckets: Vec<Bucket>,
    pub trim: TrimReport,
    /// Households remaining after trimming.
    pub kept: usize,
}

/// Rank, trim, bucket.
///
/// Bands are taken from the full ranked frame: ranks are never recomputed
/// after trimming, and band 5 spans [0.04, 0.05], which the trim would
/// otherwise empty.
pub fn segment(observations: &[Observation], scheme: BucketScheme) -> Result<Segmented> {
    let ranked = percentile_ranks(observations)?;
    let (trimmed, trim) = trim(&ranked);
    Ok(Segmented {
        buckets: build_buckets(&ranked, scheme),
        trim,
        kept: trimmed.len(),
    })
}
