//! End-to-end run: ingest, deflate, standardize, segment, export.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agestd::{self, AdjustedFrame, AdjustedHousehold, AgeMode, AgeTarget, FrameMap, Provenance};
use crate::deflate::{self, adjust_income, CellSource, DeflatorSet};
use crate::error::{Error, Result};
use crate::ingest::{self, ExtractSpec, RejectionReport};
use crate::layout::{
    self, AssembleInputs, BenchmarkMode, BootstrapMeta, BundleMetadata, CellMap, DeflatorMeta,
    KeyframeBundle, Manifest, ManifestEntry, Precision,
};
use crate::metrics::{bootstrap_se, BootstrapReport};
use crate::model::{HouseholdRecord, StateId, SubpopulationFilter, Variant, YearRange};
use crate::segment::{build_buckets, percentile_ranks, BucketScheme, Observation};

pub const BUNDLE_DIR: &str = "bundles";
pub const FULL_PRECISION_DIR: &str = "full";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const DEFLATORS_FILE: &str = "deflators.json";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";

/// Everything that determines a run's output. Echoed to `run_config.json`.
/// Missing fields deserialize to their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Data directory or extract spec file.
    pub input: PathBuf,
    pub output: PathBuf,
    /// Precomputed deflators; computed from the input tables when absent.
    pub deflators: Option<PathBuf>,
    /// Overrides the extract spec's year range.
    pub years: Option<YearRange>,
    pub variants: Vec<Variant>,
    pub filters: Vec<String>,
    pub scheme: BucketScheme,
    pub benchmark: BenchmarkMode,
    pub reference_year: i32,
    pub age_mode: AgeMode,
    pub age_seed: Option<u64>,
    pub age_edges: Vec<u8>,
    pub bootstrap: Option<BootstrapMeta>,
    pub backcast: bool,
    pub full_precision: bool,
    /// Worker threads; never affects output.
    #[serde(skip)]
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::new("", "")
    }
}

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        RunConfig {
            input: input.into(),
            output: output.into(),
            deflators: None,
            years: None,
            variants: Variant::ALL.to_vec(),
            filters: SubpopulationFilter::named()
                .into_iter()
                .map(|(name, _)| name.to_string())
                .collect(),
            scheme: BucketScheme::default(),
            benchmark: BenchmarkMode::default(),
            reference_year: deflate::REFERENCE_YEAR,
            age_mode: AgeMode::default(),
            age_seed: None,
            age_edges: agestd::default_edges(),
            bootstrap: None,
            backcast: true,
            full_precision: false,
            jobs: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn resolved_filters(&self) -> Result<Vec<(String, SubpopulationFilter)>> {
        let mut seen = BTreeSet::new();
        self.filters
            .iter()
            .filter(|name| seen.insert(name.as_str()))
            .map(|name| {
                SubpopulationFilter::by_name(name)
                    .map(|f| (name.clone(), f))
                    .ok_or_else(|| Error::Usage(format!("unknown filter `{name}`")))
            })
            .collect()
    }

    fn check(&self) -> Result<()> {
        if self.variants.is_empty() || self.filters.is_empty() {
            return Err(Error::Usage("at least one variant and one filter".into()));
        }
        if self.age_mode == AgeMode::Resample && self.age_seed.is_none() {
            return Err(Error::MissingSeed);
        }
        if let Some(b) = &self.bootstrap {
            if b.replicates < 2 {
                return Err(Error::Usage(format!(
                    "bootstrap needs at least 2 replicates, got {}",
                    b.replicates
                )));
            }
        }
        if self.jobs == Some(0) {
            return Err(Error::Usage("--jobs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Resolves a data directory or spec file to an extract spec.
pub fn resolve_spec(input: &Path) -> Result<ExtractSpec> {
    if input.is_dir() {
        ExtractSpec::for_dir(input)
    } else if input.exists() {
        ExtractSpec::from_file(input)
    } else {
        Err(Error::io(
            input,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ))
    }
}

fn household(record: &HouseholdRecord, income: f64) -> AdjustedHousehold {
    AdjustedHousehold {
        income,
        weight: record.weight,
        age: record.age,
        sex: record.sex,
        black: record.black,
        hispanic: record.hispanic,
        edu_years: record.edu_years,
    }
}

fn frames_from<F>(records: &[HouseholdRecord], keep: impl Fn(&HouseholdRecord) -> bool, income: F) -> Result<FrameMap>
where
    F: Fn(&HouseholdRecord) -> Result<f64>,
{
    let mut frames = FrameMap::new();
    for r in records.iter().filter(|r| keep(r)) {
        let h = household(r, income(r)?);
        frames
            .entry((r.state, r.year))
            .or_insert_with(|| AdjustedFrame {
                state: r.state,
                year: r.year,
                households: Vec::new(),
                provenance: Provenance::Raw,
            })
            .households
            .push(h);
    }
    Ok(frames)
}

/// Pooled age distribution of every household in range.
pub fn age_target(records: &[HouseholdRecord], years: YearRange, edges: Vec<u8>) -> Result<AgeTarget> {
    let frames = frames_from(records, |r| years.contains(r.year), |_| Ok(0.0))?;
    agestd::build_target(frames.values(), edges)
}

/// Age-standardized adjusted-income frames for one variant. Parity variants
/// cover only years with parity for every state.
pub fn variant_frames(
    records: &[HouseholdRecord],
    deflators: &DeflatorSet,
    variant: Variant,
    years: YearRange,
    target: &AgeTarget,
    mode: AgeMode,
    seed: Option<u64>,
) -> Result<FrameMap> {
    let states: Vec<StateId> = records
        .iter()
        .map(|r| r.state)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let allowed: BTreeSet<i32> = if variant.uses_rpp() {
        deflators.rpp_years(&states, years).into_iter().collect()
    } else {
        years.iter().collect()
    };
    let raw = frames_from(
        records,
        |r| allowed.contains(&r.year),
        |r| adjust_income(r, deflators, variant),
    )?;
    let out: Vec<((StateId, i32), AdjustedFrame)> = raw
        .par_iter()
        .map(|(&cell, frame)| Ok((cell, agestd::standardize(frame, target, mode, seed)?)))
        .collect::<Result<_>>()?;
    Ok(out.into_iter().collect())
}

/// Seed for one (state, year) cell, spread with splitmix64 so neighbouring
/// cells get unrelated streams.
pub fn cell_seed(seed: u64, state: StateId, year: i32) -> u64 {
    let mut z = seed
        ^ (u64::from(state.fips()) << 32 | u64::from(year as u32)).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct CellStats {
    median: f64,
    total: f64,
    n: usize,
    buckets: Vec<crate::segment::Bucket>,
    observations: Vec<Observation>,
}

/// Keyframe bundle for one (variant, filter) from standardized frames.
pub fn build_bundle(
    frames: &FrameMap,
    filter: &SubpopulationFilter,
    metadata: BundleMetadata,
) -> Result<KeyframeBundle> {
    let scheme = metadata.scheme;
    let stats: Vec<((StateId, i32), Option<CellStats>)> = frames
        .par_iter()
        .map(|(&cell, frame)| {
            let f = frame.filtered(filter);
            let observations = f.observations();
            let total = f.total_weight();
            if f.households.is_empty() || !(total > 0.0) {
                return Ok((cell, None));
            }
            let ranked = percentile_ranks(&observations)?;
            let median = ranked.median().ok_or(Error::ZeroWeight)?;
            Ok((
                cell,
                Some(CellStats {
                    median,
                    total,
                    n: f.households.len(),
                    buckets: build_buckets(&ranked, scheme),
                    observations,
                }),
            ))
        })
        .collect::<Result<_>>()?;

    let empty: Vec<String> = stats
        .iter()
        .filter(|(_, s)| s.is_none())
        .map(|((s, y), _)| format!("{s} {y} (no households in filter {})", metadata.filter_name))
        .collect();
    if !empty.is_empty() {
        return Err(Error::GridMismatch { cells: empty });
    }
    let stats: BTreeMap<(StateId, i32), CellStats> = stats
        .into_iter()
        .filter_map(|(cell, s)| s.map(|s| (cell, s)))
        .collect();

    let reference_year = metadata.reference_year;
    let pooled: Vec<Observation> = stats
        .iter()
        .filter(|((_, y), _)| *y == reference_year)
        .flat_map(|(_, s)| s.observations.iter().copied())
        .collect();
    if pooled.is_empty() {
        return Err(Error::MissingReference(reference_year));
    }
    let reference = percentile_ranks(&pooled)?
        .median()
        .ok_or(Error::MissingReference(reference_year))?;

    let medians: CellMap<f64> = stats.iter().map(|(&c, s)| (c, s.median)).collect();
    let years: BTreeSet<i32> = stats.keys().map(|&(_, y)| y).collect();
    let mut ranks = CellMap::new();
    let mut thickness = CellMap::new();
    for &year in &years {
        for (state, r) in layout::rank_states(&medians, year) {
            ranks.insert((state, year), r);
        }
        let totals: BTreeMap<StateId, f64> = stats
            .iter()
            .filter(|((_, y), _)| *y == year)
            .map(|(&(s, _), st)| (s, st.total))
            .collect();
        for (state, t) in layout::thickness(&totals, year)? {
            thickness.insert((state, year), t);
        }
    }

    let bootstrap = match &metadata.bootstrap {
        None => None,
        Some(b) => {
            let cells: Vec<((StateId, i32), Vec<crate::segment::Bucket>)> = stats
                .par_iter()
                .map(|(&(state, year), s)| {
                    let seed = cell_seed(b.seed, state, year);
                    let est = bootstrap_se(&s.observations, scheme, b.replicates, seed)?;
                    Ok(((state, year), est.buckets))
                })
                .collect::<Result<_>>()?;
            Some(BootstrapReport {
                replicates: b.replicates,
                seed: b.seed,
                cells: cells.into_iter().collect(),
            })
        }
    };

    let inputs = AssembleInputs {
        positions: layout::benchmark_positions(&medians, reference),
        buckets: stats.iter().map(|(&c, s)| (c, s.buckets.clone())).collect(),
        ranks,
        thickness,
        households: stats.iter().map(|(&c, s)| (c, s.n)).collect(),
        reference_median: reference,
        bootstrap: bootstrap.as_ref(),
    };
    layout::assemble(&inputs, metadata)
}

fn deflator_meta(deflators: &DeflatorSet, variant: Variant) -> DeflatorMeta {
    let observed_from = deflators
        .rpp
        .iter()
        .filter(|(_, c)| c.source == CellSource::Observed)
        .map(|(&(_, y), _)| y)
        .min();
    DeflatorMeta {
        cpi_reference_year: deflators.reference_year,
        rpp_observed_from: if variant.uses_rpp() { observed_from } else { None },
        rpp_backcast: variant.uses_rpp() && deflators.model.is_some(),
    }
}

/// All bundles for `config`, in (variant, filter) order.
pub fn compute_bundles(
    records: &[HouseholdRecord],
    deflators: &DeflatorSet,
    years: YearRange,
    config: &RunConfig,
) -> Result<Vec<(Variant, String, KeyframeBundle)>> {
    config.check()?;
    let filters = config.resolved_filters()?;
    let target = age_target(records, years, config.age_edges.clone())?;
    let mut out = Vec::new();
    let mut variants = config.variants.clone();
    variants.sort();
    variants.dedup();
    for variant in variants {
        let frames = variant_frames(
            records,
            deflators,
            variant,
            years,
            &target,
            config.age_mode,
            config.age_seed,
        )?;
        if frames.is_empty() {
            return Err(Error::Numeric(format!("no households for variant {variant}")));
        }
        let bundles: Vec<(String, KeyframeBundle)> = filters
            .par_iter()
            .map(|(name, filter)| {
                let metadata = BundleMetadata {
                    variant,
                    filter_name: name.clone(),
                    filter: *filter,
                    scheme: config.scheme,
                    benchmark_mode: config.benchmark,
                    reference_year: config.reference_year,
                    age_mode: config.age_mode,
                    age_seed: config.age_seed,
                    bootstrap: config.bootstrap.clone(),
                    deflators: deflator_meta(deflators, variant),
                };
                Ok((name.clone(), build_bundle(&frames, filter, metadata)?))
            })
            .collect::<Result<_>>()?;
        out.extend(bundles.into_iter().map(|(name, b)| (variant, name, b)));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub ingest: RejectionReport,
    pub years: YearRange,
}

fn in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Usage(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Loads inputs, computes every bundle and writes them under `config.output`.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.check()?;
    let mut spec = resolve_spec(&config.input)?;
    if let Some(years) = config.years {
        spec.years = years;
    }
    let years = spec.years;
    let microdata = ingest::load_microdata(&spec)?;
    if microdata.report.rejected_total() > 0 {
        log::warn!(
            "rejected {} of {} rows: {:?}",
            microdata.report.rejected_total(),
            microdata.report.rows,
            microdata.report.rejected
        );
    }
    let deflators = match &config.deflators {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            DeflatorSet::from_json(&text)?
        }
        None => {
            let prices = ingest::load_price_tables(&spec)?;
            deflate::build_deflators(&prices, years, config.backcast)?
        }
    };

    let bundles = in_pool(config.jobs, || {
        compute_bundles(&microdata.records, &deflators, years, config)
    })??;

    let bundle_dir = config.output.join(BUNDLE_DIR);
    fs::create_dir_all(&bundle_dir).map_err(|e| Error::io(&bundle_dir, e))?;
    let mut entries = Vec::new();
    for (variant, filter, bundle) in &bundles {
        let file = layout::bundle_file_name(*variant, filter);
        ingest::write_text(&bundle_dir.join(&file), &bundle.to_json(Precision::Export)?)?;
        if config.full_precision {
            let dir = config.output.join(FULL_PRECISION_DIR);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            ingest::write_text(&dir.join(&file), &bundle.to_json(Precision::Full)?)?;
        }
        let first = bundle.years.keys().next().copied().unwrap_or(years.first);
        let last = bundle.years.keys().next_back().copied().unwrap_or(years.last);
        entries.push(ManifestEntry {
            variant: *variant,
            filter: filter.clone(),
            file: format!("{BUNDLE_DIR}/{file}"),
            first_year: first,
            last_year: last,
        });
    }
    let manifest = Manifest::new(entries);
    ingest::write_text(&config.output.join(MANIFEST_FILE), &manifest.to_json()?)?;
    ingest::write_text(
        &config.output.join(RUN_CONFIG_FILE),
        &(serde_json::to_string_pretty(config)? + "\n"),
    )?;
    ingest::write_text(&config.output.join(DEFLATORS_FILE), &deflators.to_json()?)?;
    ingest::write_text(
        &config.output.join(INGEST_REPORT_FILE),
        &(serde_json::to_string_pretty(&microdata.report)? + "\n"),
    )?;
    Ok(RunSummary {
        manifest,
        ingest: microdata.report,
        years,
    })
}

/// Fit summary written by the `backcast` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackcastReport {
    pub model: deflate::BackcastModel,
    pub backcast_cells: usize,
    pub observed_cells: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery: Option<Recovery>,
}

/// Absolute differences between the fit and the generating truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub alpha: f64,
    pub beta_rent: f64,
    pub beta_rent_lead: f64,
    pub beta_rpp_lead: f64,
    pub max_fixed_effect: f64,
    pub max_parity: f64,
}

pub fn backcast_report(
    model: &deflate::BackcastModel,
    deflators: &DeflatorSet,
    truth: Option<&ingest::SynthTruth>,
) -> BackcastReport {
    let count = |src| deflators.rpp.values().filter(|c| c.source == src).count();
    let recovery = truth.map(|t| {
        let (alpha, fes) = t.normalized();
        let rpp = t.rpp_map();
        let max_fixed_effect = fes
            .iter()
            .filter_map(|(s, fe)| model.fixed_effect(*s).map(|m| (m - fe).abs()))
            .fold(0.0, f64::max);
        let max_parity = deflators
            .rpp
            .iter()
            .filter(|(_, c)| c.source == CellSource::Backcast)
            .filter_map(|(k, c)| rpp.get(k).map(|v| (c.value - v).abs()))
            .fold(0.0, f64::max);
        Recovery {
            alpha: (model.alpha - alpha).abs(),
            beta_rent: (model.beta_rent - t.rpp_model.beta_rent).abs(),
            beta_rent_lead: (model.beta_rent_lead - t.rpp_model.beta_rent_lead).abs(),
            beta_rpp_lead: (model.beta_rpp_lead - t.rpp_model.beta_rpp_lead).abs(),
            max_fixed_effect,
            max_parity,
        }
    });
    BackcastReport {
        model: model.clone(),
        backcast_cells: count(CellSource::Backcast),
        observed_cells: count(CellSource::Observed),
        recovery,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_seeds_differ() {
        let ca = StateId::from_code("CA").unwrap();
        let dc = StateId::from_code("DC").unwrap();
        let a = cell_seed(7, ca, 1990);
        assert_ne!(a, cell_seed(7, ca, 1991));
        assert_ne!(a, cell_seed(7, dc, 1990));
        assert_ne!(a, cell_seed(8, ca, 1990));
        assert_eq!(a, cell_seed(7, ca, 1990));
    }

    #[test]
    fn config_checks() {
        let mut c = RunConfig::new("in", "out");
        c.age_mode = AgeMode::Resample;
        assert!(matches!(c.check(), Err(Error::MissingSeed)));
        c.age_seed = Some(1);
        assert!(c.check().is_ok());
        c.filters = vec!["nope".into()];
        assert!(matches!(c.resolved_filters(), Err(Error::Usage(_))));
        c.filters.clear();
        assert!(matches!(c.check(), Err(Error::Usage(_))));
    }

    #[test]
    fn jobs_not_echoed() {
        let mut c = RunConfig::new("in", "out");
        c.jobs = Some(8);
        let text = serde_json::to_string(&c).unwrap();
        assert!(!text.contains("jobs"));
    }
}
