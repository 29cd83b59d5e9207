//! C ABI for `uqdepth`.
//!
//! Every fallible function returns a `UqdStatus` code; on failure the
//! message is available from [`uqd_last_error`] on the same thread. Models
//! are opaque handles created by `uqd_model_load*` and released with
//! [`uqd_model_free`]. Arrays are caller-owned, row-major `double` buffers;
//! images are planar `3 × H × W` with values in `[0, 1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use uqdepth::autodiff::Array;
use uqdepth::metrics::{self, Log10Mode, ThresholdRule};
use uqdepth::model::{load_checkpoint, read_checkpoint, DepthNet};
use uqdepth::uq::{self, FlipSet, Method, SampleSet, UqConfig};
use uqdepth::{Error, Mask};

/// Status codes. Values 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UqdStatus {
    Ok = 0,
    /// Null pointer, zero size or an unknown enum value.
    InvalidArgument = 1,
    /// Configuration, contract, shape or empty-mask error.
    Config = 2,
    /// File could not be read, or its contents are corrupt.
    Io = 3,
    /// Non-finite values or a domain violation.
    Numerical = 4,
    /// A Rust panic was caught at the boundary.
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UqdMethod {
    Baseline = 0,
    Lc = 1,
    Gnll = 2,
    Mcd = 3,
    Se = 4,
    Tta = 5,
}

/// `UqdMethod` values follow the canonical method order.
fn method_of(code: i32) -> Result<Method, Fail> {
    usize::try_from(code)
        .ok()
        .and_then(|i| Method::ALL.get(i).copied())
        .ok_or_else(|| invalid(&format!("unknown method code {code}")))
}

/// Opaque model handle.
pub struct UqdModel {
    net: DepthNet,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UqdModelInfo {
    pub input_height: u32,
    pub input_width: u32,
    /// Input sides must be multiples of this.
    pub size_multiple: u32,
    pub num_heads: u32,
    pub out_channels: u32,
    pub param_count: u64,
    pub dropout_rate: f64,
    pub max_depth: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UqdPredictOptions {
    /// A `UqdMethod` value.
    pub method: i32,
    /// MC dropout sample count.
    pub samples: u32,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub base_seed: u64,
    pub variance_floor: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UqdDepthMetrics {
    pub rmse: f64,
    pub absrel: f64,
    pub log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

/// Undefined ratios are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UqdUncertaintyMetrics {
    pub p_acc_cer: f64,
    pub p_unc_ina: f64,
    pub pavpu: f64,
    pub n_ac: u64,
    pub n_au: u64,
    pub n_ic: u64,
    pub n_iu: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> UqdStatus {
    match e.exit_code() {
        3 => UqdStatus::Io,
        4 => UqdStatus::Numerical,
        _ => UqdStatus::Config,
    }
}

struct Fail(UqdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(UqdStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> UqdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            UqdStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            UqdStatus::Internal
        }
    }
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() || len == 0 {
        return Err(invalid(&format!("{what} is null or empty")));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or valid for `len` writes.
unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() || len == 0 {
        return Err(invalid(&format!("{what} is null or empty")));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn mask_from(h: usize, w: usize, m: &[u8]) -> Result<Mask, Fail> {
    Ok(Mask::new(h, w, m.iter().map(|&v| v != 0).collect())?)
}

fn map_from(h: usize, w: usize, d: &[f64]) -> Result<Array, Fail> {
    Ok(Array::new(vec![h, w], d.to_vec())?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uqd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn uqd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uqd_model_load(path: *const c_char, out: *mut *mut UqdModel) -> UqdStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(invalid("path or out is null"));
        }
        let p = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let net = load_checkpoint(Path::new(p))?;
        *out = Box::into_raw(Box::new(UqdModel { net }));
        Ok(())
    })
}

/// Loads a checkpoint from memory.
///
/// # Safety
/// `data` must be valid for `len` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uqd_model_load_bytes(data: *const u8, len: usize, out: *mut *mut UqdModel) -> UqdStatus {
    guard(|| {
        let bytes = input(data, len, "data")?;
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let net = read_checkpoint(bytes, Path::new("<memory>"))?;
        *out = Box::into_raw(Box::new(UqdModel { net }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from `uqd_model_load*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uqd_model_free(model: *mut UqdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uqd_model_info(model: *const UqdModel, out: *mut UqdModelInfo) -> UqdStatus {
    guard(|| {
        let (Some(m), false) = (model.as_ref(), out.is_null()) else {
            return Err(invalid("model or out is null"));
        };
        let c = m.net.config();
        *out = UqdModelInfo {
            input_height: c.input_size.0 as u32,
            input_width: c.input_size.1 as u32,
            size_multiple: c.downsample_factor() as u32,
            num_heads: c.num_heads as u32,
            out_channels: c.head_out_channels as u32,
            param_count: m.net.param_count() as u64,
            dropout_rate: c.dropout_rate,
            max_depth: c.max_depth,
        };
        Ok(())
    })
}

/// Defaults for `method`: 10 samples, both flips, seed 0, floor 1e-6.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uqd_predict_options_default(method: i32, out: *mut UqdPredictOptions) -> UqdStatus {
    guard(|| {
        method_of(method)?;
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let d = UqConfig::default();
        *out = UqdPredictOptions {
            method,
            samples: d.samples as u32,
            flip_horizontal: d.flips.horizontal,
            flip_vertical: d.flips.vertical,
            base_seed: d.base_seed,
            variance_floor: uqdepth::losses::LossConfig::default().variance_floor,
        };
        Ok(())
    })
}

/// Predicts depth and, when the method has one, uncertainty for a
/// `3 × height × width` image. `uncertainty_out` may be null; for the
/// baseline it is filled with NaN. `sample_count_out` may be null.
///
/// # Safety
/// `image` must hold `3·height·width` doubles; `depth_out` and a non-null
/// `uncertainty_out` must hold `height·width`.
#[no_mangle]
pub unsafe extern "C" fn uqd_predict(
    model: *const UqdModel,
    options: *const UqdPredictOptions,
    image: *const f64,
    height: usize,
    width: usize,
    depth_out: *mut f64,
    uncertainty_out: *mut f64,
    sample_count_out: *mut u32,
) -> UqdStatus {
    guard(|| {
        let (Some(m), Some(o)) = (model.as_ref(), options.as_ref()) else {
            return Err(invalid("model or options is null"));
        };
        let n = height * width;
        let img = input(image, 3 * n, "image")?;
        let depth = output(depth_out, n, "depth_out")?;
        let cfg = UqConfig {
            method: method_of(o.method)?,
            samples: o.samples as usize,
            heads: m.net.config().num_heads,
            flips: FlipSet {
                horizontal: o.flip_horizontal,
                vertical: o.flip_vertical,
            },
            base_seed: o.base_seed,
        };
        let arr = Array::new(vec![3, height, width], img.to_vec())?;
        let p = uq::predict(&m.net, &arr, &cfg, o.variance_floor)?;
        depth.copy_from_slice(p.depth.data());
        if !uncertainty_out.is_null() {
            let u = slice::from_raw_parts_mut(uncertainty_out, n);
            match &p.uncertainty {
                Some(a) => u.copy_from_slice(a.data()),
                None => u.fill(f64::NAN),
            }
        }
        if !sample_count_out.is_null() {
            *sample_count_out = p.sample_count as u32;
        }
        Ok(())
    })
}

/// Depth metrics over pixels where `mask` is non-zero. `log10_mode` is 0
/// for mean absolute and 1 for root mean squared log10 error.
///
/// # Safety
/// `pred`, `gt` and `mask` must hold `height·width` elements.
#[no_mangle]
pub unsafe extern "C" fn uqd_depth_metrics(
    pred: *const f64,
    gt: *const f64,
    mask: *const u8,
    height: usize,
    width: usize,
    log10_mode: i32,
    out: *mut UqdDepthMetrics,
) -> UqdStatus {
    guard(|| {
        let n = height * width;
        let (p, g, k) = (input(pred, n, "pred")?, input(gt, n, "gt")?, input(mask, n, "mask")?);
        let mode = match log10_mode {
            0 => Log10Mode::Mae,
            1 => Log10Mode::Rmse,
            _ => return Err(invalid("log10_mode must be 0 or 1")),
        };
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let d = metrics::depth_metrics(&map_from(height, width, p)?, &map_from(height, width, g)?, &mask_from(height, width, k)?, mode)?;
        *out = UqdDepthMetrics {
            rmse: d.rmse,
            absrel: d.absrel,
            log10: d.log10,
            delta1: d.delta1,
            delta2: d.delta2,
            delta3: d.delta3,
        };
        Ok(())
    })
}

/// Uncertainty quality of one image: accuracy is the δ₁ test and the
/// threshold is the median uncertainty over valid pixels.
///
/// # Safety
/// `pred`, `gt`, `uncertainty` and `mask` must hold `height·width` elements.
#[no_mangle]
pub unsafe extern "C" fn uqd_uncertainty_metrics(
    pred: *const f64,
    gt: *const f64,
    uncertainty: *const f64,
    mask: *const u8,
    height: usize,
    width: usize,
    out: *mut UqdUncertaintyMetrics,
) -> UqdStatus {
    guard(|| {
        let n = height * width;
        let (p, g) = (input(pred, n, "pred")?, input(gt, n, "gt")?);
        let (u, k) = (input(uncertainty, n, "uncertainty")?, input(mask, n, "mask")?);
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let valid = mask_from(height, width, k)?;
        let acc = metrics::delta_map(&map_from(height, width, p)?, &map_from(height, width, g)?, &valid, 1)?;
        let m = metrics::uncertainty_metrics(&acc, &map_from(height, width, u)?, &valid, ThresholdRule::Median)?;
        let c = m.counts;
        *out = UqdUncertaintyMetrics {
            p_acc_cer: m.p_acc_cer.unwrap_or(f64::NAN),
            p_unc_ina: m.p_unc_ina.unwrap_or(f64::NAN),
            pavpu: m.pavpu.unwrap_or(f64::NAN),
            n_ac: c.n_ac as u64,
            n_au: c.n_au as u64,
            n_ic: c.n_ic as u64,
            n_iu: c.n_iu as u64,
        };
        Ok(())
    })
}

/// Per-element mean and unbiased variance of `count` samples of `len`
/// values each, stored back to back.
///
/// # Safety
/// `samples` must hold `count·len` doubles; both outputs must hold `len`.
#[no_mangle]
pub unsafe extern "C" fn uqd_aggregate(
    samples: *const f64,
    count: usize,
    len: usize,
    mean_out: *mut f64,
    variance_out: *mut f64,
) -> UqdStatus {
    guard(|| {
        let s = input(samples, count * len, "samples")?;
        let mean = output(mean_out, len, "mean_out")?;
        let var = output(variance_out, len, "variance_out")?;
        let set = SampleSet::new(s.chunks_exact(len).map(|c| Array::new(vec![len], c.to_vec())).collect::<Result<_, _>>()?)?;
        let (mu, s2) = uq::aggregate(&set)?;
        mean.copy_from_slice(mu.data());
        var.copy_from_slice(s2.data());
        Ok(())
    })
}
