//! C ABI for the speech continuation/editing engine. Handles are opaque,
//! every call returns a status code, and the most recent failure message
//! is retrievable per thread. The generated header lands in
//! `include/semtts.h` when the crate is built.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use semtts::error::Error;
use semtts::pipeline::{self, ContextSpec, EditRequest};

/// Status codes returned by every function in this interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemttsStatus {
    /// Success.
    SemttsOk = 0,
    /// A required pointer argument was null.
    SemttsNullArgument = 1,
    /// A string argument was not valid UTF-8.
    SemttsInvalidUtf8 = 2,
    /// The request was malformed (bad symbols, lengths, or ranges).
    SemttsBadRequest = 3,
    /// Checkpoint files were missing, corrupt, or mutually inconsistent.
    SemttsBadCheckpoint = 4,
    /// Audio input could not be read or did not match the engine's rate.
    SemttsBadAudio = 5,
    /// Filesystem failure.
    SemttsIoError = 6,
    /// Any other internal failure; see the error message.
    SemttsInternal = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let clean: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap());
}

fn status_of(err: &Error) -> SemttsStatus {
    match err {
        Error::Request(_) | Error::Token(_) | Error::Config(_) => SemttsStatus::SemttsBadRequest,
        Error::Checkpoint(_) | Error::Tokenizer(_) | Error::Schedule(_) => {
            SemttsStatus::SemttsBadCheckpoint
        }
        Error::Audio(_) => SemttsStatus::SemttsBadAudio,
        Error::Io(_) | Error::Manifest { .. } => SemttsStatus::SemttsIoError,
        _ => SemttsStatus::SemttsInternal,
    }
}

fn fail(err: Error) -> SemttsStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

/// Opaque handle to a loaded engine (token model, vocoder, tokenizer).
pub struct SemttsEngine {
    ckpt_dir: PathBuf,
    sample_rate: u32,
}

unsafe fn cstr<'a>(p: *const c_char) -> Result<&'a str, SemttsStatus> {
    if p.is_null() {
        set_error("null string argument");
        return Err(SemttsStatus::SemttsNullArgument);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        SemttsStatus::SemttsInvalidUtf8
    })
}

fn guard(f: impl FnOnce() -> SemttsStatus) -> SemttsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            SemttsStatus::SemttsInternal
        }
    }
}

/// Copy the current thread's most recent error message into `buf`
/// (NUL-terminated, truncated to `len`). Returns the full message length
/// in bytes, excluding the terminator. Safe to call with `buf == NULL`
/// or `len == 0` to query the needed size.
#[no_mangle]
pub unsafe extern "C" fn semtts_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Open an engine from a checkpoint directory containing the token model,
/// vocoder, and tokenizer. On success writes a handle to `out`.
#[no_mangle]
pub unsafe extern "C" fn semtts_engine_open(
    ckpt_dir: *const c_char,
    out: *mut *mut SemttsEngine,
) -> SemttsStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output argument");
            return SemttsStatus::SemttsNullArgument;
        }
        let dir = match cstr(ckpt_dir) {
            Ok(s) => PathBuf::from(s),
            Err(status) => return status,
        };
        // Validate everything up front so `open` fails fast on bad or
        // mismatched checkpoints.
        let t2v = match pipeline::load_txt2vec(&dir) {
            Ok(v) => v,
            Err(e) => return fail(e),
        };
        let v2w = match pipeline::load_vec2wav(&dir) {
            Ok(v) => v,
            Err(e) => return fail(e),
        };
        if t2v.audio != v2w.audio {
            set_error("token model and vocoder were trained with different audio settings");
            return SemttsStatus::SemttsBadCheckpoint;
        }
        let sample_rate = t2v.audio.sample_rate;
        *out = Box::into_raw(Box::new(SemttsEngine {
            ckpt_dir: dir,
            sample_rate,
        }));
        SemttsStatus::SemttsOk
    })
}

/// Release an engine handle. `engine` may be null.
#[no_mangle]
pub unsafe extern "C" fn semtts_engine_free(engine: *mut SemttsEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Output sample rate of the engine, in Hz.
#[no_mangle]
pub unsafe extern "C" fn semtts_engine_sample_rate(
    engine: *const SemttsEngine,
    out: *mut u32,
) -> SemttsStatus {
    guard(|| {
        if engine.is_null() || out.is_null() {
            set_error("null argument");
            return SemttsStatus::SemttsNullArgument;
        }
        *out = (*engine).sample_rate;
        SemttsStatus::SemttsOk
    })
}

unsafe fn context_from_parts(
    audio: *const c_char,
    phonemes: *const c_char,
    durations: *const usize,
    n: usize,
) -> Result<Option<ContextSpec>, SemttsStatus> {
    if audio.is_null() {
        return Ok(None);
    }
    let audio = PathBuf::from(cstr(audio)?);
    let symbols: Vec<String> = cstr(phonemes)?
        .split_whitespace()
        .map(str::to_string)
        .collect();
    if durations.is_null() {
        set_error("null durations for a non-null context");
        return Err(SemttsStatus::SemttsNullArgument);
    }
    let durations = std::slice::from_raw_parts(durations, n).to_vec();
    if symbols.len() != durations.len() {
        set_error("context phoneme count does not match duration count");
        return Err(SemttsStatus::SemttsBadRequest);
    }
    Ok(Some(ContextSpec {
        audio,
        phonemes: symbols,
        durations,
    }))
}

fn give_samples(
    samples: Vec<f64>,
    out_samples: *mut *mut f64,
    out_len: *mut usize,
) -> SemttsStatus {
    let mut boxed = samples.into_boxed_slice();
    unsafe {
        *out_len = boxed.len();
        *out_samples = boxed.as_mut_ptr();
    }
    std::mem::forget(boxed);
    SemttsStatus::SemttsOk
}

/// Free a sample buffer returned by a synthesis call.
#[no_mangle]
pub unsafe extern "C" fn semtts_samples_free(samples: *mut f64, len: usize) {
    if !samples.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(samples, len)));
    }
}

/// Generate speech for `text` (space-separated phoneme symbols) spliced
/// between up to two aligned audio contexts; passing a null context-B
/// audio path yields continuation. On success the caller owns the sample
/// buffer and must release it with `semtts_samples_free`. `out_wav` may
/// be null; when set, the waveform is also written there as a WAV file.
#[no_mangle]
pub unsafe extern "C" fn semtts_engine_edit(
    engine: *const SemttsEngine,
    context_a_wav: *const c_char,
    phonemes_a: *const c_char,
    durations_a: *const usize,
    n_a: usize,
    context_b_wav: *const c_char,
    phonemes_b: *const c_char,
    durations_b: *const usize,
    n_b: usize,
    text: *const c_char,
    seed: u64,
    out_wav: *const c_char,
    out_samples: *mut *mut f64,
    out_len: *mut usize,
) -> SemttsStatus {
    guard(|| {
        if engine.is_null() || out_samples.is_null() || out_len.is_null() {
            set_error("null argument");
            return SemttsStatus::SemttsNullArgument;
        }
        let ctx_a = match context_from_parts(context_a_wav, phonemes_a, durations_a, n_a) {
            Ok(c) => c,
            Err(status) => return status,
        };
        let ctx_b = match context_from_parts(context_b_wav, phonemes_b, durations_b, n_b) {
            Ok(c) => c,
            Err(status) => return status,
        };
        let target: Vec<String> = match cstr(text) {
            Ok(s) => s.split_whitespace().map(str::to_string).collect(),
            Err(status) => return status,
        };
        let output = if out_wav.is_null() {
            None
        } else {
            match cstr(out_wav) {
                Ok(s) => Some(PathBuf::from(s)),
                Err(status) => return status,
            }
        };
        let req = EditRequest {
            context_a: ctx_a,
            context_b: ctx_b,
            target_phonemes: target,
            output,
            seed,
        };
        match pipeline::run_edit(&(*engine).ckpt_dir, &req) {
            Ok(out) => give_samples(out.samples, out_samples, out_len),
            Err(e) => fail(e),
        }
    })
}

/// Tokenize `input_wav` and vocode it back in the same voice. Buffer
/// ownership is as in `semtts_engine_edit`.
#[no_mangle]
pub unsafe extern "C" fn semtts_engine_resynth(
    engine: *const SemttsEngine,
    input_wav: *const c_char,
    out_wav: *const c_char,
    out_samples: *mut *mut f64,
    out_len: *mut usize,
) -> SemttsStatus {
    guard(|| {
        if engine.is_null() || out_samples.is_null() || out_len.is_null() {
            set_error("null argument");
            return SemttsStatus::SemttsNullArgument;
        }
        let input = match cstr(input_wav) {
            Ok(s) => PathBuf::from(s),
            Err(status) => return status,
        };
        let output = if out_wav.is_null() {
            None
        } else {
            match cstr(out_wav) {
                Ok(s) => Some(PathBuf::from(s)),
                Err(status) => return status,
            }
        };
        match pipeline::run_resynth(
            &(*engine).ckpt_dir,
            &input,
            output.as_deref().map(Path::new),
        ) {
            Ok(out) => give_samples(out.samples, out_samples, out_len),
            Err(e) => fail(e),
        }
    })
}

/// Static version string of the library.
#[no_mangle]
pub extern "C" fn semtts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
