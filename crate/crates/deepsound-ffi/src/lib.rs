//! C ABI over the core pipeline: opaque handles for waveforms and clip
//! descriptors, status codes with a thread-local error message, and JSON
//! strings for structured results. Every function is panic-safe; pointers
//! returned as `char*` are owned by the caller and released with
//! [`ds_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use libc::{c_char, c_double, c_float, size_t};

use deepsound::audio::{read_wav, write_wav, Waveform};
use deepsound::cot::{cot_total_score, parse_cot_detail};
use deepsound::detect::{judge, JudgeMode, VideoDescriptor};
use deepsound::edit::remove_voice;
use deepsound::pipeline::{run_pipeline, BackendRegistry, PipelineConfig, Strategy};

/// Call outcome. Every fallible function returns one of these; anything but
/// `DS_OK` leaves a message readable via `ds_last_error`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsStatus {
    DsOk = 0,
    DsErrArgument = 1,
    DsErrParse = 2,
    DsErrIo = 3,
    DsErrBackend = 4,
    DsErrInternal = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|cell| {
        *cell.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(status: DsStatus, message: impl AsRef<str>) -> DsStatus {
    set_error(message.as_ref());
    status
}

/// Runs `body` with panics converted to `DsErrInternal`.
fn guarded(body: impl FnOnce() -> DsStatus) -> DsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(DsStatus::DsErrInternal, "internal panic"),
    }
}

/// Borrows a NUL-terminated UTF-8 string.
///
/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn borrow_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, DsStatus> {
    if ptr.is_null() {
        return Err(fail(DsStatus::DsErrArgument, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(DsStatus::DsErrArgument, format!("{what} is not UTF-8")))
}

fn give_string(s: String, out: *mut *mut c_char) -> DsStatus {
    if out.is_null() {
        return fail(DsStatus::DsErrArgument, "output pointer is null");
    }
    match CString::new(s.replace('\0', " ")) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            DsStatus::DsOk
        }
        Err(_) => fail(DsStatus::DsErrInternal, "string conversion failed"),
    }
}

/// Opaque audio buffer handle.
pub struct DsWaveform {
    inner: Waveform,
}

/// Opaque clip descriptor handle.
pub struct DsVideoDescriptor {
    inner: VideoDescriptor,
}

/// Library version as a static string; never freed by the caller.
#[no_mangle]
pub extern "C" fn ds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread; never freed by the
/// caller.
#[no_mangle]
pub extern "C" fn ds_last_error() -> *const c_char {
    LAST_ERROR.with(|cell| cell.borrow().as_ptr())
}

/// Releases a string returned through a `char **` out-parameter.
///
/// # Safety
/// `s` must be null or a pointer previously returned by this library.
#[no_mangle]
pub unsafe extern "C" fn ds_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a waveform handle from interleaved mono samples.
///
/// # Safety
/// `samples` must point to `len` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_waveform_from_samples(
    samples: *const c_float,
    len: size_t,
    sample_rate: u32,
    out: *mut *mut DsWaveform,
) -> DsStatus {
    guarded(|| {
        if samples.is_null() && len > 0 {
            return fail(DsStatus::DsErrArgument, "samples pointer is null");
        }
        if out.is_null() {
            return fail(DsStatus::DsErrArgument, "output pointer is null");
        }
        if sample_rate == 0 {
            return fail(DsStatus::DsErrArgument, "sample rate is zero");
        }
        let data: Vec<f32> = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(samples, len).to_vec()
        };
        if data.iter().any(|s| !s.is_finite()) {
            return fail(DsStatus::DsErrArgument, "samples contain non-finite values");
        }
        let handle = Box::new(DsWaveform {
            inner: Waveform::new(data, sample_rate),
        });
        *out = Box::into_raw(handle);
        DsStatus::DsOk
    })
}

/// Reads a WAV file into a canonical-rate waveform handle.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_waveform_read_wav(
    path: *const c_char,
    out: *mut *mut DsWaveform,
) -> DsStatus {
    guarded(|| {
        let path = match borrow_str(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out.is_null() {
            return fail(DsStatus::DsErrArgument, "output pointer is null");
        }
        match read_wav(Path::new(path)) {
            Ok(w) => {
                *out = Box::into_raw(Box::new(DsWaveform { inner: w }));
                DsStatus::DsOk
            }
            Err(e) => fail(DsStatus::DsErrIo, e.to_string()),
        }
    })
}

/// Writes a waveform handle to a mono float WAV file.
///
/// # Safety
/// `w` must be a live waveform handle; `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn ds_waveform_write_wav(
    w: *const DsWaveform,
    path: *const c_char,
) -> DsStatus {
    guarded(|| {
        let Some(w) = w.as_ref() else {
            return fail(DsStatus::DsErrArgument, "waveform handle is null");
        };
        let path = match borrow_str(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match write_wav(Path::new(path), &w.inner) {
            Ok(()) => DsStatus::DsOk,
            Err(e) => fail(DsStatus::DsErrIo, e.to_string()),
        }
    })
}

/// Sample count, or 0 for a null handle.
///
/// # Safety
/// `w` must be null or a live waveform handle.
#[no_mangle]
pub unsafe extern "C" fn ds_waveform_len(w: *const DsWaveform) -> size_t {
    w.as_ref().map_or(0, |w| w.inner.len())
}

/// Sample rate in Hz, or 0 for a null handle.
///
/// # Safety
/// `w` must be null or a live waveform handle.
#[no_mangle]
pub unsafe extern "C" fn ds_waveform_sample_rate(w: *const DsWaveform) -> u32 {
    w.as_ref().map_or(0, |w| w.inner.sample_rate())
}

/// Copies samples into a caller buffer of capacity `cap`.
///
/// # Safety
/// `w` must be a live handle; `buf` must hold `cap` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ds_waveform_copy_samples(
    w: *const DsWaveform,
    buf: *mut c_float,
    cap: size_t,
) -> DsStatus {
    guarded(|| {
        let Some(w) = w.as_ref() else {
            return fail(DsStatus::DsErrArgument, "waveform handle is null");
        };
        if buf.is_null() {
            return fail(DsStatus::DsErrArgument, "buffer pointer is null");
        }
        if cap < w.inner.len() {
            return fail(
                DsStatus::DsErrArgument,
                format!("buffer holds {cap}, need {}", w.inner.len()),
            );
        }
        std::ptr::copy_nonoverlapping(w.inner.samples().as_ptr(), buf, w.inner.len());
        DsStatus::DsOk
    })
}

/// Releases a waveform handle.
///
/// # Safety
/// `w` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ds_waveform_free(w: *mut DsWaveform) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Parses and validates a clip descriptor from JSON.
///
/// # Safety
/// `json` must be a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_descriptor_from_json(
    json: *const c_char,
    out: *mut *mut DsVideoDescriptor,
) -> DsStatus {
    guarded(|| {
        let json = match borrow_str(json, "descriptor JSON") {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out.is_null() {
            return fail(DsStatus::DsErrArgument, "output pointer is null");
        }
        match VideoDescriptor::from_json(json) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(DsVideoDescriptor { inner: d }));
                DsStatus::DsOk
            }
            Err(e) => fail(DsStatus::DsErrParse, e.to_string()),
        }
    })
}

/// Releases a descriptor handle.
///
/// # Safety
/// `d` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ds_descriptor_free(d: *mut DsVideoDescriptor) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Judges whether `audio` carries a voice-over for `video`; `mode` is
/// `"QA"` or `"CoT"`. On success `*out_json` holds the verdict as JSON.
///
/// # Safety
/// Handles must be live; `mode` a valid string; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ds_judge(
    video: *const DsVideoDescriptor,
    audio: *const DsWaveform,
    mode: *const c_char,
    out_json: *mut *mut c_char,
) -> DsStatus {
    guarded(|| {
        let Some(video) = video.as_ref() else {
            return fail(DsStatus::DsErrArgument, "descriptor handle is null");
        };
        let Some(audio) = audio.as_ref() else {
            return fail(DsStatus::DsErrArgument, "waveform handle is null");
        };
        let mode: JudgeMode = match borrow_str(mode, "mode") {
            Ok(s) => match s.parse() {
                Ok(m) => m,
                Err(e) => return fail(DsStatus::DsErrArgument, e),
            },
            Err(status) => return status,
        };
        match judge(&video.inner, &audio.inner, mode) {
            Ok(verdict) => match serde_json::to_string_pretty(&verdict) {
                Ok(json) => give_string(json, out_json),
                Err(e) => fail(DsStatus::DsErrInternal, e.to_string()),
            },
            Err(e) => fail(DsStatus::DsErrArgument, e.to_string()),
        }
    })
}

/// Attenuates voice-band energy inside the given segments; `segments` holds
/// `n_segments` (start, end) second pairs, flattened. On success `*out` is a
/// new waveform handle and `*attenuation_db` the in-band attenuation
/// achieved.
///
/// # Safety
/// `w` must be live; `segments` must hold `2*n_segments` doubles; `out` and
/// `attenuation_db` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_remove_voice(
    w: *const DsWaveform,
    segments: *const c_double,
    n_segments: size_t,
    out: *mut *mut DsWaveform,
    attenuation_db: *mut c_double,
) -> DsStatus {
    guarded(|| {
        let Some(w) = w.as_ref() else {
            return fail(DsStatus::DsErrArgument, "waveform handle is null");
        };
        if segments.is_null() && n_segments > 0 {
            return fail(DsStatus::DsErrArgument, "segments pointer is null");
        }
        if out.is_null() {
            return fail(DsStatus::DsErrArgument, "output pointer is null");
        }
        let pairs: Vec<(f64, f64)> = (0..n_segments)
            .map(|i| {
                (
                    *segments.add(2 * i),
                    *segments.add(2 * i + 1),
                )
            })
            .collect();
        match remove_voice(&w.inner, &pairs) {
            Ok(result) => {
                if !attenuation_db.is_null() {
                    *attenuation_db = result.attenuation_db;
                }
                *out = Box::into_raw(Box::new(DsWaveform {
                    inner: result.audio,
                }));
                DsStatus::DsOk
            }
            Err(e) => fail(DsStatus::DsErrArgument, e.to_string()),
        }
    })
}

/// Validates a judgment document against the tag grammar.
///
/// # Safety
/// `text` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ds_cot_validate(text: *const c_char) -> DsStatus {
    guarded(|| {
        let text = match borrow_str(text, "document") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match parse_cot_detail(text) {
            Ok(_) => DsStatus::DsOk,
            Err(e) => fail(DsStatus::DsErrParse, e.to_string()),
        }
    })
}

/// Scores a candidate document against a gold document (lower is better;
/// equal documents score 0).
///
/// # Safety
/// `candidate` and `gold` must be valid strings; `out_score` writable.
#[no_mangle]
pub unsafe extern "C" fn ds_cot_total_score(
    candidate: *const c_char,
    gold: *const c_char,
    out_score: *mut c_double,
) -> DsStatus {
    guarded(|| {
        let candidate = match borrow_str(candidate, "candidate") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let gold_text = match borrow_str(gold, "gold") {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out_score.is_null() {
            return fail(DsStatus::DsErrArgument, "output pointer is null");
        }
        let gold_doc = match parse_cot_detail(gold_text) {
            Ok(d) => d,
            Err(e) => return fail(DsStatus::DsErrParse, format!("gold document: {e}")),
        };
        let scores = cot_total_score(candidate, &gold_doc, &[]);
        *out_score = scores.total;
        DsStatus::DsOk
    })
}

/// Runs the full pipeline with the built-in generation backend, writing
/// artifacts under `out_dir` and returning the run manifest as JSON.
/// `strategy` is one of the snake_case strategy names; `mode` is `"QA"` or
/// `"CoT"`.
///
/// # Safety
/// `video` must be live; string arguments valid; `out_manifest_json`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ds_run_pipeline(
    video: *const DsVideoDescriptor,
    instruction: *const c_char,
    strategy: *const c_char,
    mode: *const c_char,
    seed: u64,
    out_dir: *const c_char,
    out_manifest_json: *mut *mut c_char,
) -> DsStatus {
    guarded(|| {
        let Some(video) = video.as_ref() else {
            return fail(DsStatus::DsErrArgument, "descriptor handle is null");
        };
        let instruction = match borrow_str(instruction, "instruction") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let strategy: Strategy = match borrow_str(strategy, "strategy") {
            Ok(s) => match s.parse() {
                Ok(v) => v,
                Err(e) => return fail(DsStatus::DsErrArgument, e),
            },
            Err(status) => return status,
        };
        let mode: JudgeMode = match borrow_str(mode, "mode") {
            Ok(s) => match s.parse() {
                Ok(v) => v,
                Err(e) => return fail(DsStatus::DsErrArgument, e),
            },
            Err(status) => return status,
        };
        let out_dir = match borrow_str(out_dir, "output directory") {
            Ok(s) => s,
            Err(status) => return status,
        };

        let mut config = PipelineConfig::new(strategy);
        config.detector_mode = mode;
        config.seed = seed;
        let registry = BackendRegistry::default();
        match run_pipeline(
            &video.inner,
            instruction,
            &config,
            Path::new(out_dir),
            &registry,
        ) {
            Ok(manifest) => match serde_json::to_string_pretty(&manifest) {
                Ok(json) => give_string(json, out_manifest_json),
                Err(e) => fail(DsStatus::DsErrInternal, e.to_string()),
            },
            Err(e) => {
                use deepsound::pipeline::PipelineError as PE;
                let status = match &e {
                    PE::Step { .. } => DsStatus::DsErrBackend,
                    PE::Io(_) | PE::Json(_) => DsStatus::DsErrIo,
                    _ => DsStatus::DsErrArgument,
                };
                fail(status, e.to_string())
            }
        }
    })
}
