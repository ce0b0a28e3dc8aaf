//! C ABI over `incomevis-core`.
//!
//! Every fallible call returns an [`IvzStatus`]. On failure the message is
//! kept per thread and read with [`ivz_last_error`]. Handles are opaque and
//! owned by the caller until passed to their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use incomevis_core::error::Error;
use incomevis_core::layout::KeyframeBundle;
use incomevis_core::metrics::{self, GiniMethod, GiniOptions};
use incomevis_core::pipeline::{self, RunConfig};
use incomevis_core::segment::{self, Bucket, BucketScheme, Observation};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvzStatus {
    Ok = 0,
    NullArgument = 1,
    /// Bad argument or configuration.
    InvalidArgument = 2,
    /// Input data rejected.
    DataError = 3,
    /// Numerically undefined or ill-conditioned result.
    NumericError = 4,
    OutOfRange = 5,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvzGiniMethod {
    Sorted = 0,
    Naive = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvzScheme {
    Decile = 0,
    Percentile = 1,
}

/// One block of a segmented distribution.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvzBucket {
    pub k: u8,
    pub has_height: bool,
    pub height: f64,
    pub carried: bool,
    pub n: usize,
    pub has_se: bool,
    pub se: f64,
}

pub struct IvzLorenz {
    points: Vec<(f64, f64)>,
}

pub struct IvzSegments {
    buckets: Vec<Bucket>,
    removed_low: usize,
    removed_high: usize,
}

pub struct IvzBundle {
    bundle: KeyframeBundle,
    years: Vec<i32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Null(&'static str),
    Range(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn set_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IvzStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IvzStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            IvzStatus::NullArgument
        }
        Ok(Err(Failure::Range(msg))) => {
            set_error(msg);
            IvzStatus::OutOfRange
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            match e.exit_code() {
                2 => IvzStatus::InvalidArgument,
                4 => IvzStatus::NumericError,
                _ => IvzStatus::DataError,
            }
        }
        Err(_) => {
            set_error("internal panic".into());
            IvzStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null only when `n` is 0, otherwise point to `n` readable values.
unsafe fn slice<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null("handle"))
}

unsafe fn string(p: *const c_char, what: &'static str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::Core(Error::Usage(format!("{what} is not UTF-8"))))
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

fn observations(x: &[f64], w: Option<&[f64]>) -> Vec<Observation> {
    x.iter()
        .enumerate()
        .map(|(i, &income)| Observation {
            income,
            weight: w.map_or(1.0, |w| w[i]),
        })
        .collect()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ivz_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn ivz_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ivz_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Gini coefficient of `x`, optionally weighted by `w` (null for equal weights).
///
/// # Safety
/// `x` and a non-null `w` must each point to `n` readable doubles; `result`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivz_gini(
    x: *const f64,
    w: *const f64,
    n: usize,
    method: IvzGiniMethod,
    allow_negative: bool,
    result: *mut f64,
) -> IvzStatus {
    guard(|| {
        let x = slice(x, n, "x")?;
        let w = if w.is_null() { None } else { Some(slice(w, n, "w")?) };
        let result = out(result, "result")?;
        let method = match method {
            IvzGiniMethod::Sorted => GiniMethod::Sorted,
            IvzGiniMethod::Naive => GiniMethod::Naive,
        };
        *result = metrics::gini(x, w, method, GiniOptions { allow_negative })?.g;
        Ok(())
    })
}

/// Lorenz curve points of `x` weighted by `w` (null for equal weights).
///
/// # Safety
/// As for [`ivz_gini`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivz_lorenz_new(
    x: *const f64,
    w: *const f64,
    n: usize,
    out_handle: *mut *mut IvzLorenz,
) -> IvzStatus {
    guard(|| {
        let x = slice(x, n, "x")?;
        let w = if w.is_null() { None } else { Some(slice(w, n, "w")?) };
        let slot = out(out_handle, "out")?;
        let points = metrics::lorenz_points(x, w)?;
        *slot = Box::into_raw(Box::new(IvzLorenz { points }));
        Ok(())
    })
}

/// Number of points, including the origin. Zero for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ivz_lorenz_len(h: *const IvzLorenz) -> usize {
    h.as_ref().map_or(0, |h| h.points.len())
}

/// # Safety
/// `h` must be a live handle; `p` and `l` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivz_lorenz_get(
    h: *const IvzLorenz,
    i: usize,
    p: *mut f64,
    l: *mut f64,
) -> IvzStatus {
    guard(|| {
        let h = handle(h)?;
        let &(pp, ll) = h
            .points
            .get(i)
            .ok_or_else(|| Failure::Range(format!("point {i} of {}", h.points.len())))?;
        *out(p, "p")? = pp;
        *out(l, "l")? = ll;
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ivz_lorenz_free(h: *mut IvzLorenz) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Ranks, trims and buckets one distribution. With `replicates` of 2 or
/// more, each block also carries a bootstrap standard error drawn from
/// `seed`; 0 skips the bootstrap.
///
/// # Safety
/// `x` and a non-null `w` must each point to `n` readable doubles; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivz_segment_new(
    x: *const f64,
    w: *const f64,
    n: usize,
    scheme: IvzScheme,
    replicates: usize,
    seed: u64,
    out_handle: *mut *mut IvzSegments,
) -> IvzStatus {
    guard(|| {
        let x = slice(x, n, "x")?;
        let w = if w.is_null() { None } else { Some(slice(w, n, "w")?) };
        let slot = out(out_handle, "out")?;
        let scheme = match scheme {
            IvzScheme::Decile => BucketScheme::Decile,
            IvzScheme::Percentile => BucketScheme::Percentile,
        };
        let obs = observations(x, w);
        let seg = segment::segment(&obs, scheme)?;
        let buckets = if replicates == 0 {
            seg.buckets
        } else {
            metrics::bootstrap_se(&obs, scheme, replicates, seed)?.buckets
        };
        *slot = Box::into_raw(Box::new(IvzSegments {
            buckets,
            removed_low: seg.trim.removed_low,
            removed_high: seg.trim.removed_high,
        }));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ivz_segment_len(h: *const IvzSegments) -> usize {
    h.as_ref().map_or(0, |h| h.buckets.len())
}

/// # Safety
/// `h` must be a live handle; `bucket` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivz_segment_get(
    h: *const IvzSegments,
    i: usize,
    bucket: *mut IvzBucket,
) -> IvzStatus {
    guard(|| {
        let h = handle(h)?;
        let b = h
            .buckets
            .get(i)
            .ok_or_else(|| Failure::Range(format!("bucket {i} of {}", h.buckets.len())))?;
        *out(bucket, "bucket")? = IvzBucket {
            k: b.k,
            has_height: b.height.is_some(),
            height: b.height.unwrap_or(f64::NAN),
            carried: b.carried,
            n: b.n,
            has_se: b.se.is_some(),
            se: b.se.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Households dropped below the 5th and above the 95th percentile.
///
/// # Safety
/// `h` must be a live handle; `low` and `high` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivz_segment_trimmed(
    h: *const IvzSegments,
    low: *mut usize,
    high: *mut usize,
) -> IvzStatus {
    guard(|| {
        let h = handle(h)?;
        *out(low, "low")? = h.removed_low;
        *out(high, "high")? = h.removed_high;
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ivz_segment_free(h: *mut IvzSegments) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Runs the pipeline from a JSON run configuration (only `input` and
/// `output` are required) and returns the manifest as a JSON string, to be
/// released with [`ivz_string_free`]. `jobs` of 0 uses every core.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `manifest` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivz_pipeline_run(
    config_json: *const c_char,
    jobs: usize,
    manifest: *mut *mut c_char,
) -> IvzStatus {
    guard(|| {
        let text = string(config_json, "config_json")?;
        let slot = out(manifest, "manifest")?;
        let mut config = RunConfig::from_json(&text)?;
        config.jobs = (jobs > 0).then_some(jobs);
        let summary = pipeline::run(&config)?;
        *slot = c_string(summary.manifest.to_json()?);
        Ok(())
    })
}

/// Loads and validates a keyframe bundle file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivz_bundle_load(path: *const c_char, out_handle: *mut *mut IvzBundle) -> IvzStatus {
    guard(|| {
        let path = string(path, "path")?;
        let slot = out(out_handle, "out")?;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(Path::new(&path), e))?;
        let bundle = KeyframeBundle::from_json(&text)?;
        let years = bundle.years.keys().copied().collect();
        *slot = Box::into_raw(Box::new(IvzBundle { bundle, years }));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ivz_bundle_year_count(h: *const IvzBundle) -> usize {
    h.as_ref().map_or(0, |h| h.years.len())
}

/// Year of keyframe `i`, in ascending order.
///
/// # Safety
/// `h` must be a live handle; `year` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivz_bundle_year(h: *const IvzBundle, i: usize, year: *mut i32) -> IvzStatus {
    guard(|| {
        let h = handle(h)?;
        let y = h
            .years
            .get(i)
            .ok_or_else(|| Failure::Range(format!("year index {i} of {}", h.years.len())))?;
        *out(year, "year")? = *y;
        Ok(())
    })
}

/// The keyframe for `year` as CSV rows `state,year,k,height,se`, to be
/// released with [`ivz_string_free`].
///
/// # Safety
/// `h` must be a live handle; `csv` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivz_bundle_keyframe_csv(
    h: *const IvzBundle,
    year: i32,
    csv: *mut *mut c_char,
) -> IvzStatus {
    guard(|| {
        let h = handle(h)?;
        let slot = out(csv, "csv")?;
        let text = h
            .bundle
            .keyframe_csv(year)
            .ok_or_else(|| Failure::Range(format!("no keyframe for {year}")))?;
        *slot = c_string(text);
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ivz_bundle_free(h: *mut IvzBundle) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}
