//! Age standardization of state-year frames.
//!
//! Every frame is brought to a common householder-age distribution, either by
//! rescaling weights bin by bin or by drawing a new sample whose bins follow
//! the target shares. Incomes are never modified.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Sex, StateId, SubpopulationFilter};
use crate::segment::Observation;

/// Interior bin boundaries: <20, 20-24, ..., 80-84, 85+.
pub fn default_edges() -> Vec<u8> {
    (20..=85).step_by(5).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjustedHousehold {
    pub income: f64,
    pub weight: f64,
    pub age: u8,
    pub sex: Sex,
    pub black: bool,
    pub hispanic: bool,
    pub edu_years: u8,
}

impl AdjustedHousehold {
    pub fn observation(&self) -> Observation {
        Observation {
            income: self.income,
            weight: self.weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AgeMode {
    #[default]
    Reweight,
    Resample,
}

impl FromStr for AgeMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reweight" => Ok(AgeMode::Reweight),
            "resample" => Ok(AgeMode::Resample),
            other => Err(format!("unknown age mode `{other}`")),
        }
    }
}

impl fmt::Display for AgeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgeMode::Reweight => "reweight",
            AgeMode::Resample => "resample",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Raw,
    AgeStandardized {
        mode: AgeMode,
        #[serde(skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedFrame {
    pub state: StateId,
    pub year: i32,
    pub households: Vec<AdjustedHousehold>,
    pub provenance: Provenance,
}

impl AdjustedFrame {
    pub fn total_weight(&self) -> f64 {
        self.households.iter().map(|h| h.weight).sum()
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.households.iter().map(|h| h.observation()).collect()
    }

    pub fn filtered(&self, filter: &SubpopulationFilter) -> AdjustedFrame {
        AdjustedFrame {
            households: self
                .households
                .iter()
                .filter(|h| filter.matches(h.sex, h.black, h.hispanic, h.edu_years))
                .copied()
                .collect(),
            ..self.clone()
        }
    }
}

/// Target share per age bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeTarget {
    pub edges: Vec<u8>,
    pub shares: Vec<f64>,
}

impl AgeTarget {
    pub fn new(edges: Vec<u8>, shares: Vec<f64>) -> Result<Self> {
        if shares.len() != edges.len() + 1 {
            return Err(Error::Numeric(format!(
                "{} edges need {} shares, got {}",
                edges.len(),
                edges.len() + 1,
                shares.len()
            )));
        }
        if !edges.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Numeric("age bin edges must increase".into()));
        }
        let sum: f64 = shares.iter().sum();
        if shares.iter().any(|s| !(*s >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Numeric(format!(
                "age target shares must be nonnegative and sum to 1 (sum {sum})"
            )));
        }
        Ok(AgeTarget { edges, shares })
    }

    pub fn bins(&self) -> usize {
        self.shares.len()
    }

    pub fn bin_of(&self, age: u8) -> usize {
        bin_of(&self.edges, age)
    }

    pub fn label(&self, bin: usize) -> String {
        bin_label(&self.edges, bin)
    }

    /// Weighted share of each bin in `households`.
    pub fn observed_shares(&self, households: &[AdjustedHousehold]) -> Vec<f64> {
        let totals = bin_totals(&self.edges, households);
        let total: f64 = totals.iter().sum();
        totals.iter().map(|t| t / total).collect()
    }
}

fn bin_of(edges: &[u8], age: u8) -> usize {
    edges.partition_point(|&e| e <= age)
}

fn bin_label(edges: &[u8], bin: usize) -> String {
    match (bin.checked_sub(1).map(|i| edges[i]), edges.get(bin)) {
        (None, Some(hi)) => format!("<{hi}"),
        (Some(lo), Some(hi)) => format!("{lo}-{}", hi - 1),
        (Some(lo), None) => format!("{lo}+"),
        (None, None) => "all".to_string(),
    }
}

fn bin_totals(edges: &[u8], households: &[AdjustedHousehold]) -> Vec<f64> {
    let mut totals = vec![0.0; edges.len() + 1];
    for h in households {
        totals[bin_of(edges, h.age)] += h.weight;
    }
    totals
}

/// Pooled weighted age distribution over every frame.
pub fn build_target<'a>(
    frames: impl IntoIterator<Item = &'a AdjustedFrame>,
    edges: Vec<u8>,
) -> Result<AgeTarget> {
    let mut totals = vec![0.0; edges.len() + 1];
    let mut seen = false;
    for frame in frames {
        seen = true;
        for (t, v) in totals.iter_mut().zip(bin_totals(&edges, &frame.households)) {
            *t += v;
        }
    }
    let total: f64 = totals.iter().sum();
    if !seen || !(total > 0.0) {
        return Err(Error::Numeric(
            "cannot build an age target from empty data".into(),
        ));
    }
    let mut shares: Vec<f64> = totals.iter().map(|t| t / total).collect();
    // renormalize away the last bits of rounding so shares sum to 1 within 1e-12
    let sum: f64 = shares.iter().sum();
    shares.iter_mut().for_each(|s| *s /= sum);
    AgeTarget::new(edges, shares)
}

/// Stream id for one state-year so resampling is schedule independent.
fn stream_id(state: StateId, year: i32) -> u64 {
    (u64::from(state.fips()) << 32) | u64::from(year as u32)
}

pub fn standardize(
    frame: &AdjustedFrame,
    target: &AgeTarget,
    mode: AgeMode,
    seed: Option<u64>,
) -> Result<AdjustedFrame> {
    if mode == AgeMode::Resample && seed.is_none() {
        return Err(Error::MissingSeed);
    }
    let totals = bin_totals(&target.edges, &frame.households);
    let empty: Vec<String> = (0..target.bins())
        .filter(|&b| target.shares[b] > 0.0 && !(totals[b] > 0.0))
        .map(|b| target.label(b))
        .collect();
    if !empty.is_empty() {
        return Err(Error::EmptyAgeBins {
            state: frame.state.code().to_string(),
            year: frame.year,
            bins: empty,
        });
    }
    let total: f64 = totals.iter().sum();

    let households = match mode {
        AgeMode::Reweight => {
            let multipliers: Vec<f64> = totals
                .iter()
                .zip(&target.shares)
                .map(|(&t, &share)| if t > 0.0 { share * total / t } else { 0.0 })
                .collect();
            frame
                .households
                .iter()
                .map(|h| AdjustedHousehold {
                    weight: h.weight * multipliers[target.bin_of(h.age)],
                    ..*h
                })
                .collect()
        }
        AgeMode::Resample => {
            let seed = seed.expect("checked above");
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); target.bins()];
            for (i, h) in frame.households.iter().enumerate() {
                members[target.bin_of(h.age)].push(i);
            }
            let bin_dist = WeightedIndex::new(&target.shares)
                .map_err(|e| Error::Numeric(format!("age target: {e}")))?;
            let within: Vec<Option<WeightedIndex<f64>>> = members
                .iter()
                .map(|idx| WeightedIndex::new(idx.iter().map(|&i| frame.households[i].weight)).ok())
                .collect();

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream_id(frame.state, frame.year));
            let n = frame.households.len();
            let weight = total / n as f64;
            (0..n)
                .map(|_| {
                    let bin = bin_dist.sample(&mut rng);
                    let pick = within[bin]
                        .as_ref()
                        .expect("bins with positive target share have positive weight")
                        .sample(&mut rng);
                    AdjustedHousehold {
                        weight,
                        ..frame.households[members[bin][pick]]
                    }
                })
                .collect()
        }
    };

    Ok(AdjustedFrame {
        state: frame.state,
        year: frame.year,
        households,
        provenance: Provenance::AgeStandardized { mode, seed },
    })
}

/// Frames keyed by (state, year).
pub type FrameMap = BTreeMap<(StateId, i32), AdjustedFrame>;
