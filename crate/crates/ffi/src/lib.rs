//! C ABI over the nowcast toolkit.
//!
//! Conventions:
//! - Fallible functions return an `NcStatus`. After a failure,
//!   `nc_last_error` describes it until the next call on the same thread.
//! - Rasters are caller-owned, row-major `height * width` buffers. Class
//!   maps are class-major `n_classes * height * width` bytes holding 0/1.
//! - Rainfall is in mm per 5-minute accumulation; `NaN` marks missing cells.
//! - Handles are opaque and released with their `_free` function, which
//!   accepts NULL.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nowcast::grid::{threshold_classes, ClassMap, ClassScheme, GridFrame, GridSpec, NormStats, ProbMap, Variable};
use nowcast::metrics::{ClassCounts, ConfusionCounts};
use nowcast::nn::{load_checkpoint, Tensor, UNet};
use nowcast::optflow::{advect_values, estimate_flow, of_forecast, Boundary, FlowConfig};
use nowcast::{Error, ErrorCategory};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcStatus {
    Ok = 0,
    NullPointer = 1,
    Panic = 2,
    /// The requested score has an empty denominator.
    Undefined = 3,
    Contract = 10,
    Domain = 11,
    Ingestion = 12,
    Shape = 13,
    NonFinite = 14,
    Divergence = 15,
    Empty = 16,
    Config = 17,
    Format = 18,
    Io = 19,
}

impl From<ErrorCategory> for NcStatus {
    fn from(c: ErrorCategory) -> Self {
        match c {
            ErrorCategory::Contract => NcStatus::Contract,
            ErrorCategory::Domain => NcStatus::Domain,
            ErrorCategory::Ingestion => NcStatus::Ingestion,
            ErrorCategory::Shape => NcStatus::Shape,
            ErrorCategory::NonFinite => NcStatus::NonFinite,
            ErrorCategory::Divergence => NcStatus::Divergence,
            ErrorCategory::Empty => NcStatus::Empty,
            ErrorCategory::Config => NcStatus::Config,
            ErrorCategory::Format => NcStatus::Format,
            ErrorCategory::Io => NcStatus::Io,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcMetric {
    F1 = 0,
    ThreatScore = 1,
    Bias = 2,
    Precision = 3,
    Recall = 4,
}

/// Optical-flow solver settings; see `nc_flow_config_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NcFlowConfig {
    pub alpha: f64,
    pub max_iters: u32,
    pub tol: f64,
    pub cfl_max: f64,
    pub multi_pair: bool,
}

impl From<NcFlowConfig> for FlowConfig {
    fn from(c: NcFlowConfig) -> Self {
        FlowConfig {
            alpha: c.alpha,
            max_iters: c.max_iters as usize,
            tol: c.tol,
            cfl_max: c.cfl_max,
            multi_pair: c.multi_pair,
        }
    }
}

/// Confusion counts accumulated over any number of maps.
pub struct NcCounts {
    inner: ConfusionCounts,
}

/// A trained network loaded from a checkpoint file.
pub struct NcModel {
    net: UNet<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Null(&'static str),
    Undefined,
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type FfiResult = Result<(), Failure>;

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> FfiResult) -> NcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NcStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            NcStatus::NullPointer
        }
        Ok(Err(Failure::Undefined)) => {
            set_error("score undefined: empty denominator");
            NcStatus::Undefined
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            e.category().into()
        }
        Err(_) => {
            set_error("internal panic");
            NcStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

fn dims(height: usize, width: usize) -> Result<usize, Failure> {
    match height.checked_mul(width) {
        Some(n) if n > 0 => Ok(n),
        _ => Err(Error::Shape(format!("invalid grid {height}x{width}")).into()),
    }
}

fn crf_frame(values: &[f32], height: usize, width: usize) -> Result<GridFrame, Failure> {
    Ok(GridFrame::new(GridSpec::pixels(height, width), Variable::Crf, 0, values.to_vec())?)
}

fn write_labels(map: &ClassMap, out: &mut [u8]) {
    out.copy_from_slice(map.labels());
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread (empty if none). Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn nc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Number of rain classes of the default scheme.
#[no_mangle]
pub extern "C" fn nc_class_count() -> usize {
    ClassScheme::default().n_classes()
}

/// Writes the class cutoffs in mm per 5 minutes into `out[0..n]`.
///
/// # Safety
/// `out` must point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nc_class_cutoffs(out: *mut f64, n: usize) -> NcStatus {
    guard(|| {
        let cutoffs = ClassScheme::default().cutoffs();
        if n != cutoffs.len() {
            return Err(Error::Shape(format!("expected room for {} cutoffs, got {n}", cutoffs.len())).into());
        }
        slice_mut(out, n, "out")?.copy_from_slice(&cutoffs);
        Ok(())
    })
}

/// Thresholds a rainfall raster into class-major labels. Missing cells get
/// label 0 and, when `out_valid` is not NULL, validity 0.
///
/// # Safety
/// `values` holds `height * width` floats, `out_labels` has room for
/// `nc_class_count() * height * width` bytes and `out_valid`, if given,
/// for `height * width` bytes.
#[no_mangle]
pub unsafe extern "C" fn nc_threshold_classes(
    values: *const f32,
    height: usize,
    width: usize,
    out_labels: *mut u8,
    out_valid: *mut u8,
) -> NcStatus {
    guard(|| {
        let n = dims(height, width)?;
        let scheme = ClassScheme::default();
        let frame = crf_frame(slice(values, n, "values")?, height, width)?;
        let map = threshold_classes(&frame, &scheme)?;
        write_labels(&map, slice_mut(out_labels, scheme.n_classes() * n, "out_labels")?);
        if !out_valid.is_null() {
            let valid = slice_mut(out_valid, n, "out_valid")?;
            for (o, &v) in valid.iter_mut().zip(map.valid()) {
                *o = v as u8;
            }
        }
        Ok(())
    })
}

/// Persistence forecast: the last observed rainfall, thresholded.
///
/// # Safety
/// As for `nc_threshold_classes`.
#[no_mangle]
pub unsafe extern "C" fn nc_persistence_forecast(
    last_frame: *const f32,
    height: usize,
    width: usize,
    out_labels: *mut u8,
) -> NcStatus {
    nc_threshold_classes(last_frame, height, width, out_labels, std::ptr::null_mut())
}

#[no_mangle]
pub extern "C" fn nc_flow_config_default() -> NcFlowConfig {
    let d = FlowConfig::default();
    NcFlowConfig {
        alpha: d.alpha,
        max_iters: d.max_iters as u32,
        tol: d.tol,
        cfl_max: d.cfl_max,
        multi_pair: d.multi_pair,
    }
}

unsafe fn flow_config(cfg: *const NcFlowConfig) -> Result<FlowConfig, Failure> {
    let cfg: FlowConfig = if cfg.is_null() { FlowConfig::default() } else { (*cfg).into() };
    cfg.validate()?;
    Ok(cfg)
}

/// Estimates the flow (pixels per frame) carrying `prev` onto `next`.
/// `cfg` may be NULL for the defaults.
///
/// # Safety
/// `prev`, `next` hold `height * width` floats; `out_u`, `out_v` have room
/// for as many doubles.
#[no_mangle]
pub unsafe extern "C" fn nc_estimate_flow(
    prev: *const f32,
    next: *const f32,
    height: usize,
    width: usize,
    cfg: *const NcFlowConfig,
    out_u: *mut f64,
    out_v: *mut f64,
) -> NcStatus {
    guard(|| {
        let n = dims(height, width)?;
        let cfg = flow_config(cfg)?;
        let spec = GridSpec::pixels(height, width);
        let frame = |p: *const f32, what| -> Result<GridFrame, Failure> {
            Ok(GridFrame::new(spec, Variable::Crf, 0, slice(p, n, what)?.to_vec())?)
        };
        let flow = estimate_flow(&frame(prev, "prev")?, &frame(next, "next")?, &cfg)?;
        slice_mut(out_u, n, "out_u")?.copy_from_slice(&flow.u);
        slice_mut(out_v, n, "out_v")?.copy_from_slice(&flow.v);
        Ok(())
    })
}

/// Semi-Lagrangian advection of `values` by the flow `(u, v)` over
/// `dt_steps` frames, with zero inflow at the edges.
///
/// # Safety
/// Every buffer holds `height * width` doubles.
#[no_mangle]
pub unsafe extern "C" fn nc_advect(
    values: *const f64,
    u: *const f64,
    v: *const f64,
    height: usize,
    width: usize,
    dt_steps: f64,
    cfl_max: f64,
    out: *mut f64,
) -> NcStatus {
    guard(|| {
        let n = dims(height, width)?;
        if !(cfl_max > 0.0 && cfl_max.is_finite()) || !dt_steps.is_finite() {
            return Err(Error::Config("cfl_max must be positive and dt_steps finite".into()).into());
        }
        let flow =
            nowcast::optflow::FlowField::new(height, width, slice(u, n, "u")?.to_vec(), slice(v, n, "v")?.to_vec())?;
        let values = slice(values, n, "values")?;
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("advected values must be finite".into()).into());
        }
        let moved = advect_values(values, &flow, dt_steps, cfl_max, Boundary::Zero);
        slice_mut(out, n, "out")?.copy_from_slice(&moved);
        Ok(())
    })
}

/// Optical-flow forecast `lead_steps` frames ahead from `n_frames`
/// consecutive rainfall rasters (oldest first). `max_crf` is the
/// normalization maximum used for the flow estimate.
///
/// # Safety
/// `frames` holds `n_frames * height * width` floats and `out_labels` has
/// room for `nc_class_count() * height * width` bytes.
#[no_mangle]
pub unsafe extern "C" fn nc_of_forecast(
    frames: *const f32,
    n_frames: usize,
    height: usize,
    width: usize,
    max_crf: f64,
    lead_steps: usize,
    cfg: *const NcFlowConfig,
    out_labels: *mut u8,
) -> NcStatus {
    guard(|| {
        let n = dims(height, width)?;
        let cfg = flow_config(cfg)?;
        let stats = NormStats::new(max_crf, 0.0, 1.0, 0.0, 1.0)?;
        let all = slice(frames, n_frames * n, "frames")?;
        let frames: Vec<GridFrame> = all.chunks(n).map(|c| crf_frame(c, height, width)).collect::<Result<_, _>>()?;
        let scheme = ClassScheme::default();
        let forecast = of_forecast(&frames, &stats, &cfg, lead_steps, &scheme)?;
        write_labels(&forecast.classes, slice_mut(out_labels, scheme.n_classes() * n, "out_labels")?);
        Ok(())
    })
}

/// New zeroed counts for `n_classes` classes; NULL if `n_classes` is 0.
#[no_mangle]
pub extern "C" fn nc_counts_new(n_classes: usize) -> *mut NcCounts {
    if n_classes == 0 {
        set_error("n_classes must be positive");
        return std::ptr::null_mut();
    }
    Box::into_raw(Box::new(NcCounts { inner: ConfusionCounts::new(n_classes) }))
}

/// # Safety
/// `counts` is NULL or came from `nc_counts_new` and is not used again.
#[no_mangle]
pub unsafe extern "C" fn nc_counts_free(counts: *mut NcCounts) {
    if !counts.is_null() {
        drop(Box::from_raw(counts));
    }
}

/// Adds one prediction/target pair. `probs` are class-major probabilities
/// (thresholded at 0.5), `labels` class-major 0/1 targets and `valid`
/// (NULL for all valid) the target mask.
///
/// # Safety
/// `counts` is a live handle; `probs` and `labels` hold
/// `n_classes * height * width` values, `valid` `height * width` bytes.
#[no_mangle]
pub unsafe extern "C" fn nc_counts_accumulate(
    counts: *mut NcCounts,
    probs: *const f32,
    labels: *const u8,
    valid: *const u8,
    height: usize,
    width: usize,
) -> NcStatus {
    guard(|| {
        let counts = counts.as_mut().ok_or(Failure::Null("counts"))?;
        let n = dims(height, width)?;
        let m = counts.inner.n_classes();
        let pred = ProbMap::new(m, height, width, slice(probs, m * n, "probs")?.to_vec())?;
        let mask =
            if valid.is_null() { vec![true; n] } else { slice(valid, n, "valid")?.iter().map(|&v| v != 0).collect() };
        let target = ClassMap::new(m, height, width, slice(labels, m * n, "labels")?.to_vec(), mask)?;
        counts.inner.accumulate(&pred, &target)?;
        Ok(())
    })
}

/// Raw counts of 0-based `class`. Any output pointer may be NULL.
///
/// # Safety
/// `counts` is a live handle; non-NULL outputs are writable.
#[no_mangle]
pub unsafe extern "C" fn nc_counts_get(
    counts: *const NcCounts,
    class: usize,
    tp: *mut u64,
    fp: *mut u64,
    fn_: *mut u64,
    tn: *mut u64,
) -> NcStatus {
    guard(|| {
        let c = class_counts(counts, class)?;
        for (ptr, value) in [(tp, c.tp), (fp, c.fp), (fn_, c.fn_), (tn, c.tn)] {
            if !ptr.is_null() {
                *ptr = value;
            }
        }
        Ok(())
    })
}

unsafe fn class_counts(counts: *const NcCounts, class: usize) -> Result<ClassCounts, Failure> {
    let counts = counts.as_ref().ok_or(Failure::Null("counts"))?;
    if class >= counts.inner.n_classes() {
        return Err(Error::Domain(format!("class {class} out of range")).into());
    }
    Ok(*counts.inner.class(class))
}

/// Score of 0-based `class`. Returns `NC_STATUS_UNDEFINED` (and leaves
/// `out` untouched) when the score's denominator is empty.
///
/// # Safety
/// `counts` is a live handle and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nc_counts_score(
    counts: *const NcCounts,
    class: usize,
    metric: NcMetric,
    out: *mut f64,
) -> NcStatus {
    guard(|| {
        let c = class_counts(counts, class)?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let value = match metric {
            NcMetric::F1 => c.f1(),
            NcMetric::ThreatScore => c.threat_score(),
            NcMetric::Bias => c.bias(),
            NcMetric::Precision => c.precision(),
            NcMetric::Recall => c.recall(),
        };
        *out = value.ok_or(Failure::Undefined)?;
        Ok(())
    })
}

/// Loads a `PNC1` checkpoint into `*out`.
///
/// # Safety
/// `path` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nc_model_load(path: *const c_char, out: *mut *mut NcModel) -> NcStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| Error::Config("path is not UTF-8".into()))?;
        let ck = load_checkpoint(Path::new(path))?;
        *out = Box::into_raw(Box::new(NcModel { net: ck.net }));
        Ok(())
    })
}

/// # Safety
/// `model` is NULL or came from `nc_model_load` and is not used again.
#[no_mangle]
pub unsafe extern "C" fn nc_model_free(model: *mut NcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input channel and class counts of a model. Either output may be NULL.
///
/// # Safety
/// `model` is a live handle; non-NULL outputs are writable.
#[no_mangle]
pub unsafe extern "C" fn nc_model_shape(
    model: *const NcModel,
    in_channels: *mut usize,
    n_classes: *mut usize,
) -> NcStatus {
    guard(|| {
        let model = model.as_ref().ok_or(Failure::Null("model"))?;
        if !in_channels.is_null() {
            *in_channels = model.net.config().in_channels;
        }
        if !n_classes.is_null() {
            *n_classes = model.net.config().n_classes;
        }
        Ok(())
    })
}

/// Class probabilities for a batch of normalized inputs laid out as
/// `[batch][channel][row][col]`; writes `[batch][class][row][col]`.
///
/// # Safety
/// `model` is a live handle, `input` holds
/// `batch * in_channels * height * width` floats and `out_probs` has room
/// for `batch * n_classes * height * width`.
#[no_mangle]
pub unsafe extern "C" fn nc_model_predict(
    model: *const NcModel,
    input: *const f32,
    batch: usize,
    height: usize,
    width: usize,
    out_probs: *mut f32,
) -> NcStatus {
    guard(|| {
        let model = model.as_ref().ok_or(Failure::Null("model"))?;
        let n = dims(height, width)?;
        if batch == 0 {
            return Err(Error::Empty("batch is empty".into()).into());
        }
        let cfg = model.net.config();
        let x = Tensor::from_f32(
            [batch, cfg.in_channels, height, width],
            slice(input, batch * cfg.in_channels * n, "input")?,
        )?;
        let p = model.net.predict(&x)?;
        slice_mut(out_probs, batch * cfg.n_classes * n, "out_probs")?.copy_from_slice(p.data());
        Ok(())
    })
}
