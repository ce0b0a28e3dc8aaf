//! Keyframe assembly and the JSON contract consumed by the explorer.
//!
//! A keyframe is one year of the chart: one slice per state, placed on the
//! x-axis by its benchmark, drawn with a width proportional to its population
//! and a stack of percentile blocks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::agestd::AgeMode;
use crate::error::{Error, Result};
use crate::metrics::BootstrapReport;
use crate::model::{StateId, SubpopulationFilter, Variant};
use crate::segment::{Bucket, BucketScheme};

pub const BUNDLE_SCHEMA_VERSION: &str = "1.0.0";
pub const BUNDLE_SCHEMA: &str = include_str!("../schema/keyframe-bundle.schema.json");
pub const MANIFEST_SCHEMA_VERSION: &str = "1.0.0";

/// Significant digits for exported dollar amounts.
pub const DOLLAR_DIGITS: usize = 6;

pub type CellMap<T> = BTreeMap<(StateId, i32), T>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkMode {
    /// Distance of the state median to the reference-year national median.
    #[default]
    Position,
    /// Rank of the state median within the year.
    Ranking,
}

impl FromStr for BenchmarkMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "position" => Ok(BenchmarkMode::Position),
            "ranking" => Ok(BenchmarkMode::Ranking),
            other => Err(format!("unknown benchmark mode `{other}`")),
        }
    }
}

impl fmt::Display for BenchmarkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchmarkMode::Position => "position",
            BenchmarkMode::Ranking => "ranking",
        })
    }
}

/// Median minus the reference median, per cell.
pub fn benchmark_positions(medians: &CellMap<f64>, reference: f64) -> CellMap<f64> {
    medians
        .iter()
        .map(|(&cell, &median)| (cell, median - reference))
        .collect()
}

/// Competition ranks within `year`: 1 is the lowest median, tied states share
/// a rank and the next rank skips.
pub fn rank_states(medians: &CellMap<f64>, year: i32) -> BTreeMap<StateId, u32> {
    let values: Vec<(StateId, f64)> = medians
        .iter()
        .filter(|((_, y), _)| *y == year)
        .map(|(&(s, _), &m)| (s, m))
        .collect();
    values
        .iter()
        .map(|&(state, m)| {
            let below = values.iter().filter(|&&(_, other)| other < m).count();
            (state, below as u32 + 1)
        })
        .collect()
}

/// Years in which `a` and `b` swap order relative to the last year they differed.
pub fn rank_crossings(
    ranks: &CellMap<u32>,
    a: StateId,
    b: StateId,
) -> Vec<i32> {
    let years: BTreeSet<i32> = ranks.keys().map(|&(_, y)| y).collect();
    let mut previous: Option<std::cmp::Ordering> = None;
    let mut out = Vec::new();
    for year in years {
        let (Some(ra), Some(rb)) = (ranks.get(&(a, year)), ranks.get(&(b, year))) else {
            continue;
        };
        let order = ra.cmp(rb);
        if order.is_eq() {
            continue;
        }
        if previous.is_some_and(|p| p != order) {
            out.push(year);
        }
        previous = Some(order);
    }
    out
}

/// Population total over the smallest state total of the same year.
pub fn thickness(totals: &BTreeMap<StateId, f64>, year: i32) -> Result<BTreeMap<StateId, f64>> {
    if let Some((state, _)) = totals.iter().find(|(_, t)| !(**t > 0.0)) {
        return Err(Error::ZeroPopulation {
            state: state.code().to_string(),
            year,
        });
    }
    let min = totals.values().copied().fold(f64::INFINITY, f64::min);
    Ok(totals.iter().map(|(&s, &t)| (s, t / min)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockOut {
    pub k: u8,
    pub height: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    pub carried: bool,
    pub n: usize,
}

impl From<&Bucket> for BlockOut {
    fn from(b: &Bucket) -> Self {
        BlockOut {
            k: b.k,
            height: b.height,
            se: b.se,
            carried: b.carried,
            n: b.n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub state: StateId,
    pub benchmark: f64,
    pub rank: u32,
    pub thickness: f64,
    pub n_households: usize,
    pub buckets: Vec<BlockOut>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub year: i32,
    pub reference_median: f64,
    pub slices: Vec<Slice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapMeta {
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeflatorMeta {
    pub cpi_reference_year: i32,
    pub rpp_observed_from: Option<i32>,
    pub rpp_backcast: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub variant: Variant,
    pub filter_name: String,
    pub filter: SubpopulationFilter,
    pub scheme: BucketScheme,
    pub benchmark_mode: BenchmarkMode,
    pub reference_year: i32,
    pub age_mode: AgeMode,
    pub age_seed: Option<u64>,
    pub bootstrap: Option<BootstrapMeta>,
    pub deflators: DeflatorMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeBundle {
    pub schema_version: String,
    pub metadata: BundleMetadata,
    pub years: BTreeMap<i32, Keyframe>,
}

/// Per-cell inputs to [`assemble`], all on the same (state, year) grid.
#[derive(Debug, Clone, Default)]
pub struct AssembleInputs<'a> {
    pub buckets: CellMap<Vec<Bucket>>,
    pub positions: CellMap<f64>,
    pub ranks: CellMap<u32>,
    pub thickness: CellMap<f64>,
    pub households: CellMap<usize>,
    /// National median of the reference year, repeated per keyframe.
    pub reference_median: f64,
    pub bootstrap: Option<&'a BootstrapReport>,
}

fn grid_gaps<T>(name: &str, map: &CellMap<T>, grid: &BTreeSet<(StateId, i32)>, out: &mut Vec<String>) {
    for cell in grid {
        if !map.contains_key(cell) {
            out.push(format!("{} {} ({name})", cell.0, cell.1));
        }
    }
}

pub fn assemble(inputs: &AssembleInputs<'_>, metadata: BundleMetadata) -> Result<KeyframeBundle> {
    let mut grid: BTreeSet<(StateId, i32)> = BTreeSet::new();
    grid.extend(inputs.buckets.keys());
    grid.extend(inputs.positions.keys());
    grid.extend(inputs.ranks.keys());
    grid.extend(inputs.thickness.keys());
    grid.extend(inputs.households.keys());

    let mut gaps = Vec::new();
    grid_gaps("buckets", &inputs.buckets, &grid, &mut gaps);
    grid_gaps("benchmark", &inputs.positions, &grid, &mut gaps);
    grid_gaps("rank", &inputs.ranks, &grid, &mut gaps);
    grid_gaps("thickness", &inputs.thickness, &grid, &mut gaps);
    grid_gaps("households", &inputs.households, &grid, &mut gaps);
    let states: BTreeSet<StateId> = grid.iter().map(|&(s, _)| s).collect();
    let years: BTreeSet<i32> = grid.iter().map(|&(_, y)| y).collect();
    for &y in &years {
        for &s in &states {
            if !grid.contains(&(s, y)) {
                gaps.push(format!("{s} {y} (state absent this year)"));
            }
        }
    }
    if let Some(report) = inputs.bootstrap {
        if !report.cells.is_empty() {
            grid_gaps("bootstrap", &report.cells, &grid, &mut gaps);
        }
    }
    if !gaps.is_empty() {
        return Err(Error::GridMismatch { cells: gaps });
    }

    let mut frames = BTreeMap::new();
    for &year in &years {
        let mut slices: Vec<Slice> = states
            .iter()
            .map(|&state| {
                let cell = (state, year);
                let se_for = |k: u8| {
                    inputs
                        .bootstrap
                        .and_then(|r| r.se(state, year, k))
                };
                Slice {
                    state,
                    benchmark: inputs.positions[&cell],
                    rank: inputs.ranks[&cell],
                    thickness: inputs.thickness[&cell],
                    n_households: inputs.households[&cell],
                    buckets: inputs.buckets[&cell]
                        .iter()
                        .map(|b| BlockOut {
                            se: b.se.or_else(|| se_for(b.k)),
                            ..BlockOut::from(b)
                        })
                        .collect(),
                }
            })
            .collect();
        match metadata.benchmark_mode {
            BenchmarkMode::Position => slices.sort_by(|a, b| {
                a.benchmark
                    .total_cmp(&b.benchmark)
                    .then(a.state.cmp(&b.state))
            }),
            BenchmarkMode::Ranking => {
                slices.sort_by(|a, b| a.rank.cmp(&b.rank).then(a.state.cmp(&b.state)))
            }
        }
        frames.insert(
            year,
            Keyframe {
                year,
                reference_median: inputs.reference_median,
                slices,
            },
        );
    }

    Ok(KeyframeBundle {
        schema_version: BUNDLE_SCHEMA_VERSION.to_string(),
        metadata,
        years: frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// Dollar amounts rounded to six significant digits.
    Export,
    /// Every value at full precision.
    Full,
}

/// Rounds to `digits` significant digits through decimal formatting, so the
/// result prints with at most that many digits.
pub fn round_significant(value: f64, digits: usize) -> f64 {
    if value == 0.0 || !value.is_finite() {
        return value;
    }
    format!("{value:.*e}", digits.saturating_sub(1))
        .parse()
        .expect("formatted float parses")
}

fn dollars(value: f64, precision: Precision) -> Value {
    let v = match precision {
        Precision::Export => round_significant(value, DOLLAR_DIGITS),
        Precision::Full => value,
    };
    // -0.0 would print as "-0.0"
    json!(if v == 0.0 { 0.0 } else { v })
}

fn opt_dollars(value: Option<f64>, precision: Precision) -> Value {
    value.map_or(Value::Null, |v| dollars(v, precision))
}

impl KeyframeBundle {
    pub fn to_value(&self, precision: Precision) -> Result<Value> {
        let mut years = Map::new();
        for (year, frame) in &self.years {
            let slices: Vec<Value> = frame
                .slices
                .iter()
                .map(|s| {
                    let buckets: Vec<Value> = s
                        .buckets
                        .iter()
                        .map(|b| {
                            let mut m = Map::new();
                            m.insert("k".into(), json!(b.k));
                            m.insert("height".into(), opt_dollars(b.height, precision));
                            if let Some(se) = b.se {
                                m.insert("se".into(), dollars(se, precision));
                            }
                            m.insert("carried".into(), json!(b.carried));
                            m.insert("n".into(), json!(b.n));
                            Value::Object(m)
                        })
                        .collect();
                    json!({
                        "state": s.state.code(),
                        "fips": s.state.fips(),
                        "benchmark": dollars(s.benchmark, precision),
                        "rank": s.rank,
                        "thickness": s.thickness,
                        "n_households": s.n_households,
                        "buckets": buckets,
                    })
                })
                .collect();
            years.insert(
                year.to_string(),
                json!({
                    "year": year,
                    "reference_median": dollars(frame.reference_median, precision),
                    "slices": slices,
                }),
            );
        }
        Ok(json!({
            "schema_version": self.schema_version,
            "metadata": serde_json::to_value(&self.metadata)?,
            "years": years,
        }))
    }

    /// Deterministic text: sorted keys, two-space indent, trailing newline.
    pub fn to_json(&self, precision: Precision) -> Result<String> {
        let mut text = serde_json::to_string_pretty(&self.to_value(precision)?)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        validate_bundle(&value)?;
        let schema_version = value["schema_version"].as_str().unwrap_or_default().to_string();
        let metadata: BundleMetadata = serde_json::from_value(value["metadata"].clone())?;
        let mut years = BTreeMap::new();
        for (key, frame) in value["years"].as_object().into_iter().flatten() {
            let year: i32 = key
                .parse()
                .map_err(|_| Error::Schema(format!("year key `{key}`")))?;
            let kf: Keyframe = serde_json::from_value(frame.clone())?;
            years.insert(year, kf);
        }
        Ok(KeyframeBundle {
            schema_version,
            metadata,
            years,
        })
    }

    /// Rows `state,year,k,height,se` for one keyframe, in slice order.
    pub fn keyframe_csv(&self, year: i32) -> Option<String> {
        let frame = self.years.get(&year)?;
        let mut out = String::from("state,year,k,height,se\n");
        for s in &frame.slices {
            for b in &s.buckets {
                let fmt = |v: Option<f64>| {
                    v.map(|v| round_significant(v, DOLLAR_DIGITS).to_string())
                        .unwrap_or_default()
                };
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    s.state.code(),
                    year,
                    b.k,
                    fmt(b.height),
                    fmt(b.se)
                ));
            }
        }
        Some(out)
    }
}

fn schema_err(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

fn require<'a>(v: &'a Value, key: &str, at: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| schema_err(format!("{at}: missing `{key}`")))
}

fn number(v: &Value, key: &str, at: &str) -> Result<f64> {
    require(v, key, at)?
        .as_f64()
        .ok_or_else(|| schema_err(format!("{at}.{key}: expected number")))
}

/// Structural and semantic checks matching `schema/keyframe-bundle.schema.json`,
/// plus the cross-field invariants a JSON Schema cannot express.
pub fn validate_bundle(value: &Value) -> Result<()> {
    let version = require(value, "schema_version", "bundle")?
        .as_str()
        .ok_or_else(|| schema_err("schema_version must be a string"))?;
    if version.split('.').next() != BUNDLE_SCHEMA_VERSION.split('.').next() {
        return Err(schema_err(format!(
            "unsupported schema_version {version}"
        )));
    }
    let meta = require(value, "metadata", "bundle")?;
    for key in [
        "variant",
        "filter_name",
        "filter",
        "scheme",
        "benchmark_mode",
        "reference_year",
        "age_mode",
        "deflators",
    ] {
        require(meta, key, "metadata")?;
    }
    let mode = meta["benchmark_mode"].as_str().unwrap_or_default();
    let years = require(value, "years", "bundle")?
        .as_object()
        .ok_or_else(|| schema_err("years must be an object"))?;
    if years.is_empty() {
        return Err(schema_err("bundle has no years"));
    }

    let mut state_set: Option<BTreeSet<String>> = None;
    for (key, frame) in years {
        let at = format!("years.{key}");
        let year = require(frame, "year", &at)?
            .as_i64()
            .ok_or_else(|| schema_err(format!("{at}.year: expected integer")))?;
        if key != &year.to_string() {
            return Err(schema_err(format!("{at}: key does not match year {year}")));
        }
        number(frame, "reference_median", &at)?;
        let slices = require(frame, "slices", &at)?
            .as_array()
            .ok_or_else(|| schema_err(format!("{at}.slices: expected array")))?;
        if slices.is_empty() {
            return Err(schema_err(format!("{at}: no slices")));
        }

        let mut states = BTreeSet::new();
        let mut min_thickness = f64::INFINITY;
        let mut previous: Option<(f64, f64)> = None;
        for (i, slice) in slices.iter().enumerate() {
            let at = format!("{at}.slices[{i}]");
            let state = require(slice, "state", &at)?
                .as_str()
                .ok_or_else(|| schema_err(format!("{at}.state: expected string")))?;
            if StateId::from_code(state).is_none() {
                return Err(schema_err(format!("{at}: unknown state {state}")));
            }
            if !states.insert(state.to_string()) {
                return Err(schema_err(format!("{at}: duplicate state {state}")));
            }
            let benchmark = number(slice, "benchmark", &at)?;
            let rank = number(slice, "rank", &at)?;
            if rank < 1.0 {
                return Err(schema_err(format!("{at}: rank below 1")));
            }
            let thickness = number(slice, "thickness", &at)?;
            if thickness < 1.0 {
                return Err(schema_err(format!("{at}: thickness {thickness} below 1")));
            }
            min_thickness = min_thickness.min(thickness);
            number(slice, "n_households", &at)?;

            let sort_key = if mode == "ranking" { rank } else { benchmark };
            if let Some((prev, _)) = previous {
                if sort_key < prev {
                    return Err(schema_err(format!("{at}: slices not sorted by {mode}")));
                }
            }
            previous = Some((sort_key, 0.0));

            let buckets = require(slice, "buckets", &at)?
                .as_array()
                .ok_or_else(|| schema_err(format!("{at}.buckets: expected array")))?;
            let mut last_k = 0u64;
            let mut last_height = f64::NEG_INFINITY;
            for (j, b) in buckets.iter().enumerate() {
                let at = format!("{at}.buckets[{j}]");
                let k = require(b, "k", &at)?
                    .as_u64()
                    .ok_or_else(|| schema_err(format!("{at}.k: expected integer")))?;
                if k <= last_k || !(5..=95).contains(&k) {
                    return Err(schema_err(format!("{at}: k {k} out of order or range")));
                }
                last_k = k;
                match require(b, "height", &at)? {
                    Value::Null => {}
                    h => {
                        let h = h
                            .as_f64()
                            .ok_or_else(|| schema_err(format!("{at}.height: expected number")))?;
                        if h < last_height {
                            return Err(schema_err(format!("{at}: height decreases")));
                        }
                        last_height = h;
                    }
                }
                if let Some(se) = b.get("se") {
                    if !se.as_f64().is_some_and(|v| v >= 0.0) {
                        return Err(schema_err(format!("{at}.se: expected nonnegative number")));
                    }
                }
                require(b, "carried", &at)?
                    .as_bool()
                    .ok_or_else(|| schema_err(format!("{at}.carried: expected boolean")))?;
                number(b, "n", &at)?;
            }
        }
        if min_thickness != 1.0 {
            return Err(schema_err(format!(
                "{at}: minimum thickness is {min_thickness}, expected 1"
            )));
        }
        match &state_set {
            None => state_set = Some(states),
            Some(first) if *first != states => {
                return Err(schema_err(format!("{at}: state set differs from other years")))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub variant: Variant,
    pub filter: String,
    pub file: String,
    pub first_year: i32,
    pub last_year: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: String,
    pub bundle_schema_version: String,
    pub bundles: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(mut bundles: Vec<ManifestEntry>) -> Self {
        bundles.sort_by(|a, b| (a.variant, &a.filter).cmp(&(b.variant, &b.filter)));
        Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION.to_string(),
            bundle_schema_version: BUNDLE_SCHEMA_VERSION.to_string(),
            bundles,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string_pretty(&value)? + "\n")
    }
}

/// File name for one (variant, filter) bundle.
pub fn bundle_file_name(variant: Variant, filter: &str) -> String {
    format!("{}__{}.json", variant.name().to_ascii_lowercase(), filter)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(code: &str) -> StateId {
        StateId::from_code(code).unwrap()
    }

    #[test]
    fn positions_are_differences() {
        let medians: CellMap<f64> = [((st("CA"), 2019), 50000.0), ((st("DC"), 2019), 30000.0)].into();
        let p = benchmark_positions(&medians, 50000.0);
        assert_eq!(p[&(st("CA"), 2019)], 0.0);
        assert_eq!(p[&(st("DC"), 2019)], -20000.0);
    }

    #[test]
    fn competition_ranks() {
        let m: CellMap<f64> = [
            ((st("AL"), 2000), 10.0),
            ((st("CA"), 2000), 20.0),
            ((st("DC"), 2000), 30.0),
        ]
        .into();
        let r = rank_states(&m, 2000);
        assert_eq!(r.values().copied().collect::<Vec<_>>(), vec![1, 2, 3]);

        let m: CellMap<f64> = [
            ((st("AL"), 2000), 10.0),
            ((st("CA"), 2000), 10.0),
            ((st("DC"), 2000), 30.0),
        ]
        .into();
        let r = rank_states(&m, 2000);
        assert_eq!(r.values().copied().collect::<Vec<_>>(), vec![1, 1, 3]);
    }

    #[test]
    fn crossings() {
        let (ca, dc) = (st("CA"), st("DC"));
        let ranks: CellMap<u32> = [
            ((ca, 1976), 1),
            ((dc, 1976), 2),
            ((ca, 1998), 2),
            ((dc, 1998), 1),
            ((ca, 2019), 1),
            ((dc, 2019), 2),
        ]
        .into();
        assert_eq!(rank_crossings(&ranks, ca, dc), vec![1998, 2019]);
    }

    #[test]
    fn thickness_normalizes_by_smallest() {
        let t = thickness(&[(st("AL"), 100.0), (st("CA"), 300.0)].into(), 2000).unwrap();
        assert_eq!(t[&st("AL")], 1.0);
        assert_eq!(t[&st("CA")], 3.0);
        let single = thickness(&[(st("WY"), 123.4)].into(), 2000).unwrap();
        assert_eq!(single[&st("WY")], 1.0);
        assert!(matches!(
            thickness(&[(st("WY"), 0.0)].into(), 2000),
            Err(Error::ZeroPopulation { .. })
        ));
    }

    #[test]
    fn significant_digits() {
        assert_eq!(round_significant(123456.789, 6), 123457.0);
        assert_eq!(round_significant(-20000.4, 6), -20000.4);
        assert_eq!(round_significant(0.000123456789, 6), 0.000123457);
        assert_eq!(round_significant(0.0, 6), 0.0);
    }

    #[test]
    fn schema_document_parses() {
        let v: Value = serde_json::from_str(BUNDLE_SCHEMA).unwrap();
        assert_eq!(v["properties"]["schema_version"]["const"], BUNDLE_SCHEMA_VERSION);
    }
}
