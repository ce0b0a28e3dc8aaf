//! Byte-level snapshot of a small hand-built bundle.
//!
//! Set `UPDATE_GOLDEN=1` to rewrite the files after a deliberate format change.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use incomevis_core::agestd::AgeMode;
use incomevis_core::layout::{
    self, AssembleInputs, BenchmarkMode, BundleMetadata, CellMap, DeflatorMeta, KeyframeBundle,
    Precision,
};
use incomevis_core::segment::{self, BucketScheme, Observation};
use incomevis_core::{StateId, SubpopulationFilter, Variant};

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check_golden(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e}; rerun with UPDATE_GOLDEN=1", path.display()));
    assert_eq!(actual, expected, "{} is out of date", path.display());
}

fn cell(incomes: &[f64], weight: f64) -> Vec<Observation> {
    incomes
        .iter()
        .map(|&income| Observation { income, weight })
        .collect()
}

fn bundle() -> KeyframeBundle {
    let ca = StateId::from_code("CA").unwrap();
    let dc = StateId::from_code("DC").unwrap();
    let cells: BTreeMap<(StateId, i32), Vec<Observation>> = [
        ((ca, 1976), cell(&[4000.0, 9000.0, 15_500.5, 21_000.0, 38_250.25, 61_000.0], 1500.0)),
        ((dc, 1976), cell(&[-800.0, 7000.0, 19_999.99, 44_000.0], 120.0)),
        ((ca, 2019), cell(&[12_000.0, 30_000.0, 58_123.456, 91_000.0, 240_000.0], 2100.0)),
        ((dc, 2019), cell(&[9000.0, 52_000.0, 83_333.33, 150_000.0, 410_000.0], 95.5)),
    ]
    .into();

    let mut inputs = AssembleInputs {
        reference_median: 41_500.0,
        ..AssembleInputs::default()
    };
    let mut medians: CellMap<f64> = BTreeMap::new();
    let mut totals: BTreeMap<i32, BTreeMap<StateId, f64>> = BTreeMap::new();
    for (&key, obs) in &cells {
        let ranked = segment::percentile_ranks(obs).unwrap();
        medians.insert(key, ranked.median().unwrap());
        let seg = segment::segment(obs, BucketScheme::Decile).unwrap();
        inputs.buckets.insert(key, seg.buckets);
        inputs.households.insert(key, obs.len());
        totals
            .entry(key.1)
            .or_default()
            .insert(key.0, obs.iter().map(|o| o.weight).sum());
    }
    inputs.positions = layout::benchmark_positions(&medians, inputs.reference_median);
    for (&year, by_state) in &totals {
        for (state, rank) in layout::rank_states(&medians, year) {
            inputs.ranks.insert((state, year), rank);
        }
        for (state, t) in layout::thickness(by_state, year).unwrap() {
            inputs.thickness.insert((state, year), t);
        }
    }

    let metadata = BundleMetadata {
        variant: Variant::Erhh,
        filter_name: "all".into(),
        filter: SubpopulationFilter::ALL,
        scheme: BucketScheme::Decile,
        benchmark_mode: BenchmarkMode::Position,
        reference_year: 2019,
        age_mode: AgeMode::Reweight,
        age_seed: None,
        bootstrap: None,
        deflators: DeflatorMeta {
            cpi_reference_year: 2019,
            rpp_observed_from: None,
            rpp_backcast: false,
        },
    };
    layout::assemble(&inputs, metadata).unwrap()
}

#[test]
fn bundle_json_matches_golden() {
    let json = bundle().to_json(Precision::Export).unwrap();
    check_golden("small_bundle.json", &json);
}

#[test]
fn full_precision_keeps_cents() {
    let json = bundle().to_json(Precision::Full).unwrap();
    assert!(json.contains("58123.456"));
    let export = bundle().to_json(Precision::Export).unwrap();
    assert!(!export.contains("58123.456"));
    assert!(export.contains("58123.5"));
}

#[test]
fn keyframe_csv_matches_golden() {
    let b = bundle();
    check_golden("small_keyframe_1976.csv", &b.keyframe_csv(1976).unwrap());
    assert!(b.keyframe_csv(1990).is_none());
}

#[test]
fn golden_round_trips() {
    let text = fs::read_to_string(golden_path("small_bundle.json")).unwrap();
    let parsed = KeyframeBundle::from_json(&text).unwrap();
    assert_eq!(parsed.to_json(Precision::Export).unwrap(), text);
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    layout::validate_bundle(&value).unwrap();
}

#[test]
fn golden_satisfies_schema_document() {
    let schema: serde_json::Value = serde_json::from_str(layout::BUNDLE_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let text = fs::read_to_string(golden_path("small_bundle.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    // a negative thickness must be caught by the schema itself
    let mut bad = value.clone();
    bad["years"]["1976"]["slices"][0]["thickness"] = serde_json::json!(0.5);
    assert!(!validator.is_valid(&bad));
}
