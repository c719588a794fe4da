//! C interface to physfuse.
//!
//! Every fallible function returns a [`PfStatus`]; on failure the message is
//! available from [`pf_last_error`] on the same thread. Handles are opaque and
//! must be released with their `*_free` function.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use physfuse::dataset::sample_mask;
use physfuse::dsp::{design_butterworth, FilterKind, IirFilter};
use physfuse::metrics::{accuracy, balanced_accuracy, macro_f1, t_confidence_interval, ConfusionCounts};
use physfuse::model::{load_model, Mode, SingleModalityModel};
use physfuse::nn::receptive_field;
use physfuse::rng::{stream, Stream};
use physfuse::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Load = 4,
    ConfigMismatch = 5,
    Numeric = 6,
    DegenerateSignal = 7,
    UnsupportedRate = 8,
    Panic = 9,
}

impl From<&Error> for PfStatus {
    fn from(e: &Error) -> Self {
        match e.root() {
            Error::Io { .. } => PfStatus::Io,
            Error::Load { .. } => PfStatus::Load,
            Error::ConfigMismatch { .. } => PfStatus::ConfigMismatch,
            Error::Numeric(_) => PfStatus::Numeric,
            Error::DegenerateSignal(_) => PfStatus::DegenerateSignal,
            Error::UnsupportedRate(_) => PfStatus::UnsupportedRate,
            _ => PfStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PfStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PfStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            let status = PfStatus::from(&e);
            set_error(e.to_string());
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PfStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if n == 0 {
        Ok(&[])
    } else if p.is_null() {
        Err(Fail::Null(what))
    } else {
        Ok(slice::from_raw_parts(p, n))
    }
}

unsafe fn output<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn pf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Receptive field in samples of a convolution stack.
#[no_mangle]
pub unsafe extern "C" fn pf_receptive_field(
    kernels: *const usize,
    strides: *const usize,
    layers: usize,
    out: *mut usize,
) -> PfStatus {
    guard(|| {
        let k = input(kernels, layers, "kernels")?;
        let s = input(strides, layers, "strides")?;
        *output(out, "out")? = receptive_field(k, s)?;
        Ok(())
    })
}

/// Butterworth filter as cascaded second-order sections.
pub struct PfFilter(IirFilter);

fn design(kind: FilterKind, order: usize, fs: f64, out: *mut *mut PfFilter) -> PfStatus {
    guard(|| {
        let out = unsafe { output(out, "out")? };
        let f = design_butterworth(kind, order, fs)?;
        *out = Box::into_raw(Box::new(PfFilter(f)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pf_filter_lowpass(order: usize, cutoff_hz: f64, fs: f64, out: *mut *mut PfFilter) -> PfStatus {
    design(FilterKind::Lowpass { cutoff_hz }, order, fs, out)
}

/// `order` is the prototype order; the filter has `order` sections.
#[no_mangle]
pub unsafe extern "C" fn pf_filter_bandpass(
    order: usize,
    low_hz: f64,
    high_hz: f64,
    fs: f64,
    out: *mut *mut PfFilter,
) -> PfStatus {
    design(FilterKind::Bandpass { low_hz, high_hz }, order, fs, out)
}

#[no_mangle]
pub unsafe extern "C" fn pf_filter_free(filter: *mut PfFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

/// Number of second-order sections; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pf_filter_section_count(filter: *const PfFilter) -> usize {
    filter.as_ref().map_or(0, |f| f.0.sections.len())
}

/// Writes `(b0, b1, b2, a1, a2)` per section into `coeffs`, which must hold
/// `5 * pf_filter_section_count(filter)` values.
#[no_mangle]
pub unsafe extern "C" fn pf_filter_sections(filter: *const PfFilter, coeffs: *mut f64, capacity: usize) -> PfStatus {
    guard(|| {
        let f = &filter.as_ref().ok_or(Fail::Null("filter"))?.0;
        let need = 5 * f.sections.len();
        if capacity < need {
            return Err(Error::Contract(format!("coefficient buffer holds {capacity}, needs {need}")).into());
        }
        if coeffs.is_null() {
            return Err(Fail::Null("coeffs"));
        }
        let dst = slice::from_raw_parts_mut(coeffs, need);
        for (chunk, s) in dst.chunks_mut(5).zip(&f.sections) {
            chunk.copy_from_slice(&[s.b0, s.b1, s.b2, s.a1, s.a2]);
        }
        Ok(())
    })
}

/// Filters `n` samples from `x` into `y`, zero initial state. `y` may equal `x`.
#[no_mangle]
pub unsafe extern "C" fn pf_filter_apply(filter: *const PfFilter, x: *const f64, n: usize, y: *mut f64) -> PfStatus {
    guard(|| {
        let f = &filter.as_ref().ok_or(Fail::Null("filter"))?.0;
        let out = f.filter_samples(input(x, n, "x")?);
        if n > 0 {
            if y.is_null() {
                return Err(Fail::Null("y"));
            }
            slice::from_raw_parts_mut(y, n).copy_from_slice(&out);
        }
        Ok(())
    })
}

/// `|H(e^{jω})|` at `freq_hz`.
#[no_mangle]
pub unsafe extern "C" fn pf_filter_magnitude(filter: *const PfFilter, freq_hz: f64, out: *mut f64) -> PfStatus {
    guard(|| {
        let f = &filter.as_ref().ok_or(Fail::Null("filter"))?.0;
        *output(out, "out")? = f.magnitude(freq_hz);
        Ok(())
    })
}

/// Fine-tuned single-modality classifier, evaluated in single precision.
pub struct PfModel(SingleModalityModel<f32>);

/// Loads a fine-tuned checkpoint written by `physfuse finetune` or `evaluate`.
#[no_mangle]
pub unsafe extern "C" fn pf_model_load(path: *const c_char, out: *mut *mut PfModel) -> PfStatus {
    guard(|| {
        let out = output(out, "out")?;
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::Contract("path is not valid UTF-8".into()))?;
        let (model, _) = load_model::<f32>(Path::new(path), None)?;
        if model.mode != Mode::Finetune {
            return Err(Error::Contract(format!("{path} is a pre-training checkpoint, not a classifier")).into());
        }
        *out = Box::into_raw(Box::new(PfModel(model)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pf_model_free(model: *mut PfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input channels; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pf_model_channels(model: *const PfModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.channels())
}

/// Samples per channel in one segment; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pf_model_segment_len(model: *const PfModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config.segment_len)
}

/// Emotion logit for one normalized segment, channel-major, of
/// `channels * segment_len` samples.
#[no_mangle]
pub unsafe extern "C" fn pf_model_classify(
    model: *const PfModel,
    samples: *const f32,
    n: usize,
    logit: *mut f32,
) -> PfStatus {
    guard(|| {
        let m = &model.as_ref().ok_or(Fail::Null("model"))?.0;
        let x = input(samples, n, "samples")?;
        let out = output(logit, "logit")?;
        *out = m.predict(x)?.0;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PfMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub balanced_accuracy: f64,
}

/// Binary metrics of logits (threshold 0) against 0/1 labels.
#[no_mangle]
pub unsafe extern "C" fn pf_metrics(labels: *const u8, logits: *const f64, n: usize, out: *mut PfMetrics) -> PfStatus {
    guard(|| {
        let c = ConfusionCounts::from_logits(input(labels, n, "labels")?, input(logits, n, "logits")?)?;
        *output(out, "out")? = PfMetrics {
            accuracy: accuracy(&c)?,
            macro_f1: macro_f1(&c)?,
            balanced_accuracy: balanced_accuracy(&c)?,
        };
        Ok(())
    })
}

/// Student-t confidence interval of the mean.
#[no_mangle]
pub unsafe extern "C" fn pf_t_confidence_interval(
    values: *const f64,
    n: usize,
    level: f64,
    mean: *mut f64,
    half_width: *mut f64,
) -> PfStatus {
    guard(|| {
        let (m, h) = t_confidence_interval(input(values, n, "values")?, level)?;
        *output(mean, "mean")? = m;
        *output(half_width, "half_width")? = h;
        Ok(())
    })
}

/// Draws a span mask of `len` positions into `mask` (1 = masked).
#[no_mangle]
pub unsafe extern "C" fn pf_sample_mask(
    len: usize,
    span_length: usize,
    mask_ratio: f64,
    seed: u64,
    mask: *mut u8,
) -> PfStatus {
    guard(|| {
        let plan = sample_mask(len, span_length, mask_ratio, &mut stream(seed, Stream::Mask, &[]))?;
        if len > 0 {
            if mask.is_null() {
                return Err(Fail::Null("mask"));
            }
            for (d, &m) in slice::from_raw_parts_mut(mask, len).iter_mut().zip(&plan.mask) {
                *d = u8::from(m);
            }
        }
        Ok(())
    })
}
