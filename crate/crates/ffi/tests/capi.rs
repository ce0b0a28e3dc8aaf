use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use incomevis_core::ingest::{generate_synthetic, write_dataset, SynthConfig};
use incomevis_core::model::YearRange;
use incomevis_ffi::*;

fn last_error() -> String {
    let p = ivz_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn gini_matches_known_value() {
    let x = [1.0, 2.0, 3.0];
    let mut g = 0.0;
    let status = unsafe { ivz_gini(x.as_ptr(), ptr::null(), 3, IvzGiniMethod::Naive, false, &mut g) };
    assert_eq!(status, IvzStatus::Ok);
    assert!((g - 2.0 / 9.0).abs() < 1e-15);
    assert!(ivz_last_error().is_null());
}

#[test]
fn errors_map_to_status_codes() {
    let mut g = 0.0;
    let zeros = [0.0, 0.0];
    let s = unsafe { ivz_gini(zeros.as_ptr(), ptr::null(), 2, IvzGiniMethod::Sorted, false, &mut g) };
    assert_eq!(s, IvzStatus::NumericError);
    assert!(last_error().contains("zero-mean"));

    let neg = [-1.0, 2.0];
    let s = unsafe { ivz_gini(neg.as_ptr(), ptr::null(), 2, IvzGiniMethod::Sorted, false, &mut g) };
    assert_eq!(s, IvzStatus::DataError);

    let s = unsafe { ivz_gini(ptr::null(), ptr::null(), 2, IvzGiniMethod::Sorted, false, &mut g) };
    assert_eq!(s, IvzStatus::NullArgument);
    assert_eq!(last_error(), "x is null");

    let x = [1.0];
    let s = unsafe { ivz_gini(x.as_ptr(), ptr::null(), 1, IvzGiniMethod::Sorted, false, ptr::null_mut()) };
    assert_eq!(s, IvzStatus::NullArgument);
}

#[test]
fn lorenz_handle() {
    let x = [1.0, 1.0, 1.0, 1.0];
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(ivz_lorenz_new(x.as_ptr(), ptr::null(), 4, &mut h), IvzStatus::Ok);
        assert_eq!(ivz_lorenz_len(h), 5);
        let (mut p, mut l) = (0.0, 0.0);
        assert_eq!(ivz_lorenz_get(h, 2, &mut p, &mut l), IvzStatus::Ok);
        assert_eq!((p, l), (0.5, 0.5));
        assert_eq!(ivz_lorenz_get(h, 5, &mut p, &mut l), IvzStatus::OutOfRange);
        ivz_lorenz_free(h);
        assert_eq!(ivz_lorenz_len(ptr::null()), 0);
        ivz_lorenz_free(ptr::null_mut());
    }
}

#[test]
fn segment_handle_with_bootstrap() {
    let x: Vec<f64> = (1..=400).map(f64::from).collect();
    let mut h = ptr::null_mut();
    unsafe {
        let s = ivz_segment_new(x.as_ptr(), ptr::null(), x.len(), IvzScheme::Decile, 20, 9, &mut h);
        assert_eq!(s, IvzStatus::Ok);
        assert_eq!(ivz_segment_len(h), 11);
        let mut b = std::mem::zeroed::<IvzBucket>();
        assert_eq!(ivz_segment_get(h, 5, &mut b), IvzStatus::Ok);
        assert_eq!(b.k, 50);
        assert!(b.has_height && b.has_se && b.se > 0.0);
        let (mut lo, mut hi) = (0, 0);
        assert_eq!(ivz_segment_trimmed(h, &mut lo, &mut hi), IvzStatus::Ok);
        assert_eq!((lo, hi), (19, 20));
        ivz_segment_free(h);

        let s = ivz_segment_new(x.as_ptr(), ptr::null(), x.len(), IvzScheme::Decile, 1, 9, &mut h);
        assert_eq!(s, IvzStatus::InvalidArgument);
    }
}

fn small_dataset(dir: &Path) {
    let cfg = SynthConfig::demo(3, 3, YearRange::new(2005, 2019), 500);
    write_dataset(&generate_synthetic(&cfg).unwrap(), dir).unwrap();
}

#[test]
fn pipeline_and_bundle_handles() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    small_dataset(data.path());
    let config = CString::new(format!(
        r#"{{"input": {:?}, "output": {:?}, "variants": ["RHH"], "filters": ["all"]}}"#,
        data.path(),
        out.path()
    ))
    .unwrap();
    let mut manifest = ptr::null_mut();
    unsafe {
        let s = ivz_pipeline_run(config.as_ptr(), 2, &mut manifest);
        assert_eq!(s, IvzStatus::Ok, "{}", last_error());
        let text = CStr::from_ptr(manifest).to_str().unwrap().to_owned();
        ivz_string_free(manifest);
        assert!(text.contains("bundles/rhh__all.json"));

        let path = CString::new(out.path().join("bundles/rhh__all.json").to_str().unwrap()).unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(ivz_bundle_load(path.as_ptr(), &mut h), IvzStatus::Ok);
        assert_eq!(ivz_bundle_year_count(h), 15);
        let mut year = 0;
        assert_eq!(ivz_bundle_year(h, 0, &mut year), IvzStatus::Ok);
        assert_eq!(year, 2005);
        let mut csv = ptr::null_mut();
        assert_eq!(ivz_bundle_keyframe_csv(h, 2019, &mut csv), IvzStatus::Ok);
        let rows = CStr::from_ptr(csv).to_str().unwrap().lines().count();
        ivz_string_free(csv);
        assert_eq!(rows, 1 + 3 * 11);
        assert_eq!(ivz_bundle_keyframe_csv(h, 1900, &mut csv), IvzStatus::OutOfRange);
        ivz_bundle_free(h);
    }
}

#[test]
fn pipeline_rejects_bad_config() {
    let mut manifest = ptr::null_mut();
    let bad = CString::new(r#"{"input": "/nonexistent", "output": "/tmp/x", "age_mode": "resample"}"#).unwrap();
    let s = unsafe { ivz_pipeline_run(bad.as_ptr(), 0, &mut manifest) };
    assert_eq!(s, IvzStatus::InvalidArgument);
    assert!(manifest.is_null());

    let missing = CString::new(r#"{"input": "/nonexistent/data", "output": "/tmp/x"}"#).unwrap();
    let s = unsafe { ivz_pipeline_run(missing.as_ptr(), 0, &mut manifest) };
    assert_eq!(s, IvzStatus::DataError);
    assert!(last_error().contains("/nonexistent/data"));
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn have(tool: &str) -> bool {
    Command::new(tool).arg("--version").output().is_ok()
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let include = crate_dir().join("include");
    assert!(include.join("incomevis.h").exists());
    for (tool, lang) in [("cc", "c"), ("c++", "c++")] {
        if !have(tool) {
            eprintln!("skipping {lang} header check: {tool} not found");
            continue;
        }
        let status = Command::new(tool)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg("-I")
            .arg(&include)
            .arg(crate_dir().join("tests/smoke.c"))
            .status()
            .unwrap();
        assert!(status.success(), "{lang} header check failed");
    }
}

#[test]
fn c_program_links_and_runs() {
    // target/<profile>/deps/<test binary> -> target/<profile>/libincomevis_ffi.a
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().and_then(Path::parent).unwrap().join("libincomevis_ffi.a");
    if !have("cc") || !lib.exists() {
        eprintln!("skipping C link check: cc or {} missing", lib.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let bin = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("incomevis 0.1.0 ok"));
}
