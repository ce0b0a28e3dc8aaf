use std::fs;

use incomevis_core::ingest::{self, ExtractSpec, SynthConfig};
use incomevis_core::YearRange;
use proptest::prelude::*;

fn dataset_dir() -> (tempfile::TempDir, ExtractSpec, String) {
    let tmp = tempfile::tempdir().unwrap();
    let config = SynthConfig::demo(5, 5, YearRange::new(2006, 2019), 30);
    ingest::write_dataset(&ingest::generate_synthetic(&config).unwrap(), tmp.path()).unwrap();
    let spec = ExtractSpec::for_dir(tmp.path()).unwrap();
    let text = fs::read_to_string(&spec.microdata).unwrap();
    (tmp, spec, text)
}

#[test]
fn synthetic_rows_all_accepted() {
    let (_tmp, spec, text) = dataset_dir();
    let data = ingest::load_microdata(&spec).unwrap();
    assert_eq!(data.report.rows, text.lines().count() - 1);
    assert_eq!(data.report.accepted, data.records.len());
    assert_eq!(data.report.rejected_total(), 0);
    // survey year on disk, income year in memory
    assert!(data.records.iter().all(|r| (2006..=2019).contains(&r.year)));
}

#[test]
fn price_tables_cover_observed_window() {
    let (_tmp, spec, _) = dataset_dir();
    let prices = ingest::load_price_tables(&spec).unwrap();
    assert_eq!(prices.rpp_observed_from, 2008);
    assert_eq!(prices.rpp.len(), 5 * 12);
    assert_eq!(prices.cpi.len(), 14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Every data row is either accepted or counted under a rejection reason.
    #[test]
    fn rows_are_accounted_for(corrupt in prop::collection::btree_set(1usize..400, 0..40), kind in 0u8..4) {
        let (_tmp, spec, text) = dataset_dir();
        let lines: Vec<String> = text
            .lines()
            .enumerate()
            .map(|(i, line)| {
                if !corrupt.contains(&i) {
                    return line.to_string();
                }
                let mut f: Vec<String> = line.split(',').map(str::to_string).collect();
                match kind {
                    0 => f[4] = "0".into(),     // no members
                    1 => f[3] = "-1".into(),    // negative weight
                    2 => f[2] = "n/a".into(),   // unparseable income
                    _ => f[5] = "140".into(),   // impossible age
                }
                f.join(",")
            })
            .collect();
        fs::write(&spec.microdata, lines.join("\n") + "\n").unwrap();
        let data = ingest::load_microdata(&spec).unwrap();
        let r = &data.report;
        prop_assert_eq!(r.rows, lines.len() - 1);
        prop_assert_eq!(r.accepted + r.rejected_total(), r.rows);
        prop_assert_eq!(r.rejected_total(), corrupt.iter().filter(|&&i| i < lines.len()).count());
        prop_assert_eq!(r.accepted, data.records.len());
    }
}
