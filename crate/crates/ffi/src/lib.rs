//! C ABI over the constrainlab models, decoders and metrics.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns a
//! [`ClabStatus`]; on failure `clab_last_error_message` describes the error
//! for the calling thread. Token sequences are `uint32_t` arrays; outputs are
//! written into caller buffers, and a buffer that is too small yields
//! `CLAB_STATUS_BUFFER_TOO_SMALL` with the required length stored in the
//! length out-parameter.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use constrainlab::corpus::TruncationLevel;
use constrainlab::decoding::{self, DecodeConfig, Hypothesis, SampleSet};
use constrainlab::metrics::{self, EvalPair};
use constrainlab::models::{load_model, AnyModel, ConditionalLM};
use constrainlab::{Error, TokenId};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClabStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    Io = 3,
    Format = 4,
    TokenOutOfRange = 5,
    EnumerationGuard = 6,
    /// The metric is undefined for this input (e.g. sequence shorter than n).
    Undefined = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Other = 10,
}

/// A loaded model file.
pub struct ClabModel {
    inner: AnyModel,
}

/// Samples drawn by `clab_sample`.
pub struct ClabSampleSet {
    inner: SampleSet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> ClabStatus {
    match e {
        Error::Io { .. } => ClabStatus::Io,
        Error::Format { .. } | Error::Encoding { .. } => ClabStatus::Format,
        Error::TokenOutOfRange { .. } => ClabStatus::TokenOutOfRange,
        Error::EnumerationGuard { .. } => ClabStatus::EnumerationGuard,
        Error::Metric(_) => ClabStatus::Undefined,
        Error::InvalidArgument(_) | Error::TruncationLevel(_) | Error::InvalidWord(_) => ClabStatus::InvalidArgument,
        _ => ClabStatus::Other,
    }
}

struct Fail(ClabStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: ClabStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ClabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ClabStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&msg);
            ClabStatus::Panic
        }
    }
}

unsafe fn tokens<'a>(ptr: *const u32, len: usize) -> Result<&'a [TokenId], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return fail(ClabStatus::NullPointer, "null token array with nonzero length");
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn out<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    ptr.as_mut().ok_or_else(|| Fail(ClabStatus::NullPointer, format!("null {what}")))
}

unsafe fn model<'a>(m: *const ClabModel) -> Result<&'a AnyModel, Fail> {
    m.as_ref()
        .map(|m| &m.inner)
        .ok_or_else(|| Fail(ClabStatus::NullPointer, "null model".into()))
}

/// Copies a hypothesis into caller buffers.
unsafe fn write_tokens(
    src: &[TokenId],
    logprob: f64,
    buf: *mut u32,
    cap: usize,
    out_len: *mut usize,
    out_logprob: *mut f64,
) -> Result<(), Fail> {
    *out(out_len, "length pointer")? = src.len();
    if let Some(lp) = out_logprob.as_mut() {
        *lp = logprob;
    }
    if src.len() > cap {
        return fail(
            ClabStatus::BufferTooSmall,
            format!("need {} tokens, buffer holds {cap}", src.len()),
        );
    }
    if !src.is_empty() {
        if buf.is_null() {
            return fail(ClabStatus::NullPointer, "null token buffer");
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn clab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn clab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model file written by `constrainlab fit`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_model` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn clab_model_load(path: *const c_char, out_model: *mut *mut ClabModel) -> ClabStatus {
    guard(|| {
        let slot = out(out_model, "model out-pointer")?;
        *slot = ptr::null_mut();
        if path.is_null() {
            return fail(ClabStatus::NullPointer, "null path");
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(ClabStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let inner = load_model(Path::new(path))?;
        *slot = Box::into_raw(Box::new(ClabModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `m` must come from `clab_model_load` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn clab_model_free(m: *mut ClabModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live model handle and `out_size` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn clab_model_vocab_size(m: *const ClabModel, out_size: *mut usize) -> ClabStatus {
    guard(|| {
        *out(out_size, "size pointer")? = model(m)?.vocab_size();
        Ok(())
    })
}

/// Next-token probabilities given a source and a target prefix. `out_probs`
/// must hold `vocab_size` doubles.
///
/// # Safety
/// Arrays must be valid for their stated lengths.
#[no_mangle]
pub unsafe extern "C" fn clab_next_dist(
    m: *const ClabModel,
    source: *const u32,
    source_len: usize,
    prefix: *const u32,
    prefix_len: usize,
    out_probs: *mut f64,
    out_cap: usize,
) -> ClabStatus {
    guard(|| {
        let m = model(m)?;
        let v = m.vocab_size();
        if out_cap < v {
            return fail(ClabStatus::BufferTooSmall, format!("need {v} doubles, buffer holds {out_cap}"));
        }
        if out_probs.is_null() {
            return fail(ClabStatus::NullPointer, "null probability buffer");
        }
        let probs = m.next_dist(tokens(source, source_len)?, tokens(prefix, prefix_len)?)?;
        ptr::copy_nonoverlapping(probs.as_ptr(), out_probs, v);
        Ok(())
    })
}

unsafe fn emit(h: &Hypothesis, buf: *mut u32, cap: usize, out_len: *mut usize, out_logprob: *mut f64) -> Result<(), Fail> {
    write_tokens(&h.tokens, h.logprob, buf, cap, out_len, out_logprob)
}

/// Greedy decoding. The output keeps its trailing EOS when it terminated.
///
/// # Safety
/// Arrays must be valid for their stated lengths; `out_len` must be valid.
/// `out_logprob` may be null.
#[no_mangle]
pub unsafe extern "C" fn clab_greedy(
    m: *const ClabModel,
    source: *const u32,
    source_len: usize,
    max_len: usize,
    out_tokens: *mut u32,
    out_cap: usize,
    out_len: *mut usize,
    out_logprob: *mut f64,
) -> ClabStatus {
    guard(|| {
        let h = decoding::greedy(model(m)?, tokens(source, source_len)?, max_len)?;
        emit(&h, out_tokens, out_cap, out_len, out_logprob)
    })
}

/// Best hypothesis of beam search with `beam_size` hypotheses.
///
/// # Safety
/// As for `clab_greedy`.
#[no_mangle]
pub unsafe extern "C" fn clab_beam_search(
    m: *const ClabModel,
    source: *const u32,
    source_len: usize,
    beam_size: usize,
    max_len: usize,
    out_tokens: *mut u32,
    out_cap: usize,
    out_len: *mut usize,
    out_logprob: *mut f64,
) -> ClabStatus {
    guard(|| {
        let cfg = DecodeConfig::new(beam_size, max_len)?;
        let best = decoding::beam_search(model(m)?, tokens(source, source_len)?, cfg)?;
        emit(&best[0], out_tokens, out_cap, out_len, out_logprob)
    })
}

/// Draws `n` ancestral samples; sample `i` depends only on `(seed, i)`.
///
/// # Safety
/// `source` must be valid for `source_len`; `out_set` must be valid.
#[no_mangle]
pub unsafe extern "C" fn clab_sample(
    m: *const ClabModel,
    source: *const u32,
    source_len: usize,
    n: usize,
    seed: u64,
    max_len: usize,
    out_set: *mut *mut ClabSampleSet,
) -> ClabStatus {
    guard(|| {
        let slot = out(out_set, "sample set out-pointer")?;
        *slot = ptr::null_mut();
        let inner = decoding::ancestral_sample(model(m)?, tokens(source, source_len)?, n, seed, max_len)?;
        *slot = Box::into_raw(Box::new(ClabSampleSet { inner }));
        Ok(())
    })
}

/// # Safety
/// `s` must come from `clab_sample` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn clab_sample_set_free(s: *mut ClabSampleSet) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

unsafe fn samples<'a>(s: *const ClabSampleSet) -> Result<&'a SampleSet, Fail> {
    s.as_ref()
        .map(|s| &s.inner)
        .ok_or_else(|| Fail(ClabStatus::NullPointer, "null sample set".into()))
}

/// # Safety
/// `s` must be a live sample set and `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn clab_sample_set_len(s: *const ClabSampleSet, out_len: *mut usize) -> ClabStatus {
    guard(|| {
        *out(out_len, "length pointer")? = samples(s)?.samples.len();
        Ok(())
    })
}

/// Copies sample `index` (tokens and log-probability) into caller buffers.
///
/// # Safety
/// As for `clab_greedy`.
#[no_mangle]
pub unsafe extern "C" fn clab_sample_set_get(
    s: *const ClabSampleSet,
    index: usize,
    out_tokens: *mut u32,
    out_cap: usize,
    out_len: *mut usize,
    out_logprob: *mut f64,
) -> ClabStatus {
    guard(|| {
        let set = samples(s)?;
        let sample = set
            .samples
            .get(index)
            .ok_or_else(|| Fail(ClabStatus::InvalidArgument, format!("sample {index} of {}", set.samples.len())))?;
        write_tokens(&sample.tokens, sample.logprob, out_tokens, out_cap, out_len, out_logprob)
    })
}

/// Monte-Carlo sequence entropy in nats.
///
/// # Safety
/// `s` must be a live sample set and `out_value` valid.
#[no_mangle]
pub unsafe extern "C" fn clab_entropy_estimate(s: *const ClabSampleSet, out_value: *mut f64) -> ClabStatus {
    guard(|| {
        *out(out_value, "value pointer")? = metrics::entropy_estimate(samples(s)?)?;
        Ok(())
    })
}

/// Total probability of the distinct sampled strings.
///
/// # Safety
/// `s` must be a live sample set and `out_value` valid.
#[no_mangle]
pub unsafe extern "C" fn clab_mass_coverage(s: *const ClabSampleSet, out_value: *mut f64) -> ClabStatus {
    guard(|| {
        *out(out_value, "value pointer")? = metrics::mass_coverage(samples(s)?)?;
        Ok(())
    })
}

/// # Safety
/// `s` must be a live sample set and `out_value` valid.
#[no_mangle]
pub unsafe extern "C" fn clab_unique_count(s: *const ClabSampleSet, out_value: *mut usize) -> ClabStatus {
    guard(|| {
        *out(out_value, "value pointer")? = metrics::unique_count(samples(s)?)?;
        Ok(())
    })
}

/// Micro-averaged length ratio from per-pair lengths.
///
/// # Safety
/// Both arrays must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn clab_length_ratio(
    hyp_lens: *const usize,
    ref_lens: *const usize,
    n: usize,
    out_value: *mut f64,
) -> ClabStatus {
    guard(|| {
        if n > 0 && (hyp_lens.is_null() || ref_lens.is_null()) {
            return fail(ClabStatus::NullPointer, "null length array");
        }
        let (h, r) = if n == 0 {
            (&[][..], &[][..])
        } else {
            (slice::from_raw_parts(hyp_lens, n), slice::from_raw_parts(ref_lens, n))
        };
        // lengths stand in for sequences of unit tokens
        let hv: Vec<Vec<()>> = h.iter().map(|&l| vec![(); l]).collect();
        let rv: Vec<Vec<()>> = r.iter().map(|&l| vec![(); l]).collect();
        *out(out_value, "value pointer")? = metrics::length_ratio(hv.iter().zip(&rv).map(|(h, r)| EvalPair {
            hypothesis: h.as_slice(),
            reference: r.as_slice(),
        }))?;
        Ok(())
    })
}

/// Distinct n-grams over n-gram positions. Returns `CLAB_STATUS_UNDEFINED`
/// when the sequence is shorter than `n`.
///
/// # Safety
/// `seq` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn clab_unique_ngram_fraction(seq: *const u32, len: usize, n: usize, out_value: *mut f64) -> ClabStatus {
    guard(|| {
        let v = metrics::unique_ngram_fraction(tokens(seq, len)?, n)?;
        match v {
            Some(f) => {
                *out(out_value, "value pointer")? = f;
                Ok(())
            }
            None => fail(ClabStatus::Undefined, format!("sequence of {len} tokens has no {n}-grams")),
        }
    })
}

unsafe fn split<'a>(flat: *const u32, offsets: *const usize, n: usize) -> Result<Vec<&'a [TokenId]>, Fail> {
    if offsets.is_null() {
        return fail(ClabStatus::NullPointer, "null offsets");
    }
    let off = slice::from_raw_parts(offsets, n + 1);
    if off[0] != 0 || off.windows(2).any(|w| w[0] > w[1]) {
        return fail(ClabStatus::InvalidArgument, "offsets must start at 0 and be non-decreasing");
    }
    let all = tokens(flat, off[n])?;
    Ok(off.windows(2).map(|w| &all[w[0]..w[1]]).collect())
}

/// Corpus BLEU. Sentence `i` of each side spans
/// `tokens[offsets[i]..offsets[i+1]]`; both offset arrays hold `n + 1` entries.
///
/// # Safety
/// Arrays must be valid for the lengths implied by the offsets.
#[no_mangle]
pub unsafe extern "C" fn clab_bleu(
    hyp_tokens: *const u32,
    hyp_offsets: *const usize,
    ref_tokens: *const u32,
    ref_offsets: *const usize,
    n: usize,
    out_value: *mut f64,
) -> ClabStatus {
    guard(|| {
        let h = split(hyp_tokens, hyp_offsets, n)?;
        let r = split(ref_tokens, ref_offsets, n)?;
        *out(out_value, "value pointer")? = metrics::bleu(&h, &r)?;
        Ok(())
    })
}

/// Number of words kept when a sentence of `n_words` words is truncated to
/// level `s` (percent).
///
/// # Safety
/// `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn clab_truncate_len(n_words: usize, s: u32, out_value: *mut usize) -> ClabStatus {
    guard(|| {
        *out(out_value, "value pointer")? = TruncationLevel::new(s)?.kept_words(n_words);
        Ok(())
    })
}
