use std::fs;
use std::path::Path;

use incomevis_core::agestd::AgeMode;
use incomevis_core::deflate::{CellSource, DeflatorSet};
use incomevis_core::ingest::{self, SynthConfig};
use incomevis_core::layout::{self, BenchmarkMode, BootstrapMeta, CellMap, KeyframeBundle};
use incomevis_core::pipeline::{self, RunConfig};
use incomevis_core::{StateId, Variant, YearRange};

fn st(code: &str) -> StateId {
    StateId::from_code(code).unwrap()
}

fn demo(dir: &Path, years: YearRange) {
    let config = SynthConfig::demo(SynthConfig::DEMO_SEED, 6, years, SynthConfig::DEFAULT_HOUSEHOLDS);
    ingest::write_dataset(&ingest::generate_synthetic(&config).unwrap(), dir).unwrap();
}

fn config(data: &Path, out: &Path, variants: &[Variant]) -> RunConfig {
    RunConfig {
        variants: variants.to_vec(),
        filters: vec!["all".into()],
        ..RunConfig::new(data, out)
    }
}

fn load(out: &Path, name: &str) -> KeyframeBundle {
    let text = fs::read_to_string(out.join(pipeline::BUNDLE_DIR).join(name)).unwrap();
    KeyframeBundle::from_json(&text).unwrap()
}

fn ranks(bundle: &KeyframeBundle) -> CellMap<u32> {
    bundle
        .years
        .iter()
        .flat_map(|(&y, kf)| kf.slices.iter().map(move |s| ((s.state, y), s.rank)))
        .collect()
}

#[test]
fn ca_and_dc_swap_ranks_before_2000() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    demo(&data, YearRange::default());
    pipeline::run(&config(&data, &out, &[Variant::Rhh])).unwrap();
    let bundle = load(&out, "rhh__all.json");
    let r = ranks(&bundle);
    let crossings = layout::rank_crossings(&r, st("CA"), st("DC"));
    assert!(crossings.iter().any(|&y| y < 2000), "{crossings:?}");
    assert!(r[&(st("CA"), 1998)] > r[&(st("DC"), 1998)]);
    assert!(r[&(st("CA"), 2019)] < r[&(st("DC"), 2019)]);
}

#[test]
fn observed_only_parity_limits_rpp_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    demo(&data, YearRange::new(2000, 2019));
    let mut cfg = config(&data, &out, &[Variant::Rhh, Variant::Rhhrpp]);
    cfg.backcast = false;
    let summary = pipeline::run(&cfg).unwrap();

    let rpp = load(&out, "rhhrpp__all.json");
    assert_eq!(rpp.years.keys().copied().collect::<Vec<_>>(), (2008..=2019).collect::<Vec<_>>());
    assert!(!rpp.metadata.deflators.rpp_backcast);
    let cpi_only = load(&out, "rhh__all.json");
    assert_eq!(cpi_only.years.len(), 20);

    let entry = summary
        .manifest
        .bundles
        .iter()
        .find(|e| e.variant == Variant::Rhhrpp)
        .unwrap();
    assert_eq!((entry.first_year, entry.last_year), (2008, 2019));

    let deflators =
        DeflatorSet::from_json(&fs::read_to_string(out.join(pipeline::DEFLATORS_FILE)).unwrap()).unwrap();
    assert!(deflators.model.is_none());
    assert!(deflators
        .rpp
        .iter()
        .all(|(&(_, y), c)| y >= 2008 && c.source == CellSource::Observed));
}

#[test]
fn backcast_covers_early_years() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    demo(&data, YearRange::new(2000, 2019));
    pipeline::run(&config(&data, &out, &[Variant::Erhhrpp])).unwrap();
    let bundle = load(&out, "erhhrpp__all.json");
    assert_eq!(bundle.years.len(), 20);
    assert_eq!(bundle.metadata.deflators.rpp_observed_from, Some(2008));
}

#[test]
fn resample_mode_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    demo(&data, YearRange::new(2008, 2019));
    let run = |name: &str, seed: u64| {
        let out = tmp.path().join(name);
        let mut cfg = config(&data, &out, &[Variant::Erhh]);
        cfg.age_mode = AgeMode::Resample;
        cfg.age_seed = Some(seed);
        pipeline::run(&cfg).unwrap();
        fs::read(out.join("bundles/erhh__all.json")).unwrap()
    };
    assert_eq!(run("a", 7), run("b", 7));
    assert_ne!(run("a", 7), run("c", 8));
}

#[test]
fn bootstrap_se_exported_and_schedule_free() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    demo(&data, YearRange::new(2008, 2019));
    let run = |name: &str, jobs: usize| {
        let out = tmp.path().join(name);
        let mut cfg = config(&data, &out, &[Variant::Rhh]);
        cfg.bootstrap = Some(BootstrapMeta {
            replicates: 40,
            seed: 3,
        });
        cfg.jobs = Some(jobs);
        pipeline::run(&cfg).unwrap();
        fs::read_to_string(out.join("bundles/rhh__all.json")).unwrap()
    };
    let one = run("one", 1);
    assert_eq!(one, run("four", 4));
    let bundle = KeyframeBundle::from_json(&one).unwrap();
    assert_eq!(bundle.metadata.bootstrap.as_ref().unwrap().replicates, 40);
    let slice = &bundle.years[&2019].slices[0];
    assert!(slice.buckets.iter().all(|b| b.se.is_some_and(|se| se >= 0.0)));
}

#[test]
fn ranking_mode_orders_slices_by_rank() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    demo(&data, YearRange::new(2008, 2019));
    let mut cfg = config(&data, &out, &[Variant::Rhh]);
    cfg.benchmark = BenchmarkMode::Ranking;
    cfg.full_precision = true;
    pipeline::run(&cfg).unwrap();
    let bundle = load(&out, "rhh__all.json");
    for kf in bundle.years.values() {
        let r: Vec<u32> = kf.slices.iter().map(|s| s.rank).collect();
        assert!(r.windows(2).all(|w| w[0] <= w[1]), "{r:?}");
    }
    assert!(out.join(pipeline::FULL_PRECISION_DIR).join("rhh__all.json").exists());
}

#[test]
fn reference_year_outside_range_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    demo(&data, YearRange::new(2008, 2019));
    let mut cfg = config(&data, &out, &[Variant::Rhh]);
    cfg.years = Some(YearRange::new(2008, 2018));
    let err = pipeline::run(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[test]
fn demo_fixed_effects_rank_high_cost_states_first() {
    let years = YearRange::default();
    let config = SynthConfig::demo(SynthConfig::DEMO_SEED, 6, years, 20);
    let data = ingest::generate_synthetic(&config).unwrap();
    let set = incomevis_core::deflate::build_deflators(&data.prices, years, true).unwrap();
    let model = set.model.unwrap();
    let mut fe: Vec<(f64, &str)> = model
        .fixed_effects
        .iter()
        .map(|(s, v)| (*v, s.code()))
        .collect();
    fe.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut top: Vec<&str> = fe[..3].iter().map(|x| x.1).collect();
    top.sort();
    assert_eq!(top, ["CA", "DC", "NY"]);
}
