//! C interface to `oem-core`.
//!
//! Objects are opaque handles created by `oem_*_new`/`load`/`fit` calls and
//! released with the matching `oem_*_free`. Every fallible call returns an
//! [`OemStatus`]; on failure [`oem_last_error_message`] describes the error.
//! Panics are caught at the boundary and reported as
//! [`OemStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::Array2;
use oem_core::corpus::{self, generate_synthetic, load_uci_bag_of_words, Corpus, Document, SyntheticSpec};
use oem_core::eval::perplexity;
use oem_core::harness::{fit, ExperimentConfig};
use oem_core::lda::ModelParams;
use oem_core::special::{digamma, inv_digamma};
use oem_core::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OemStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad sizes, ids or parameters that are not valid distributions.
    InvalidArgument = 2,
    Io = 3,
    /// Malformed corpus, model or JSON text.
    Parse = 4,
    /// Experiment configuration the method does not support.
    Config = 5,
    /// Non-finite values or a solver that did not converge.
    Numerical = 6,
    Panic = 7,
}

/// A bag-of-words corpus.
pub struct OemCorpus(Corpus);

/// LDA parameters: `K` topics over `V` words and the Dirichlet prior `α`.
pub struct OemModel(ModelParams);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: OemStatus,
    message: String,
}

impl Failure {
    fn new(status: OemStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

fn status_of(e: &Error) -> OemStatus {
    match e {
        Error::InvalidArgument(_)
        | Error::ShapeMismatch { .. }
        | Error::EmptyDocument
        | Error::StateSpaceTooLarge(_)
        | Error::Degenerate(_) => OemStatus::InvalidArgument,
        Error::Parse { .. } | Error::Json(_) => OemStatus::Parse,
        Error::Io { .. } => OemStatus::Io,
        Error::Config(_) | Error::Unspecified(_) => OemStatus::Config,
        Error::NoConvergence { .. } | Error::NonFinite(_) => OemStatus::Numerical,
        Error::Minibatch { source, .. } => status_of(source),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::new(status_of(&e), e.to_string())
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, recording its error or panic for [`oem_last_error_message`].
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> OemStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            OemStatus::Ok
        }
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            OemStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(OemStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(OemStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(OemStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(OemStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(OemStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message of the last failed call on this thread, or null after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn oem_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn oem_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Digamma function; NaN outside its domain.
#[no_mangle]
pub extern "C" fn oem_digamma(x: f64) -> f64 {
    digamma(x)
}

/// Inverse of the digamma function.
#[no_mangle]
pub extern "C" fn oem_inv_digamma(y: f64) -> f64 {
    inv_digamma(y)
}

/// Loads a UCI bag-of-words corpus.
///
/// # Safety
/// `docword` and `vocab` must be NUL-terminated strings and `out` a valid
/// pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn oem_corpus_load_uci(
    docword: *const c_char,
    vocab: *const c_char,
    out: *mut *mut OemCorpus,
) -> OemStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let docword = PathBuf::from(str_arg(docword, "docword")?);
        let vocab = PathBuf::from(str_arg(vocab, "vocab")?);
        *out = boxed(OemCorpus(load_uci_bag_of_words(&docword, &vocab)?));
        Ok(())
    })
}

/// Builds a corpus from concatenated token ids. Document `d` holds the next
/// `doc_lengths[d]` entries of `word_ids`; every id must be below
/// `vocab_size`.
///
/// # Safety
/// `word_ids` must point to `sum(doc_lengths)` values, `doc_lengths` to
/// `n_docs` values and `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn oem_corpus_new(
    word_ids: *const usize,
    doc_lengths: *const usize,
    n_docs: usize,
    vocab_size: usize,
    out: *mut *mut OemCorpus,
) -> OemStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let lengths = slice_arg(doc_lengths, n_docs, "doc_lengths")?;
        let total = lengths
            .iter()
            .try_fold(0usize, |acc, &n| acc.checked_add(n))
            .ok_or_else(|| Failure::new(OemStatus::InvalidArgument, "document lengths overflow"))?;
        let ids = slice_arg(word_ids, total, "word_ids")?;
        let mut docs = Vec::with_capacity(n_docs);
        let mut start = 0;
        for &n in lengths {
            docs.push(Document::new(ids[start..start + n].to_vec()));
            start += n;
        }
        *out = boxed(OemCorpus(Corpus::with_anonymous_vocab(docs, vocab_size)?));
        Ok(())
    })
}

/// Samples a synthetic corpus from a spec such as `k=5,v=100,d=2000,len=40`.
/// When `out_truth` is not null it receives the generating model.
///
/// # Safety
/// `spec` must be a NUL-terminated string, `out` valid for writes and
/// `out_truth` either null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn oem_corpus_generate(
    spec: *const c_char,
    seed: u64,
    out: *mut *mut OemCorpus,
    out_truth: *mut *mut OemModel,
) -> OemStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let spec = SyntheticSpec::parse(str_arg(spec, "spec")?)?;
        let (corpus, truth) = generate_synthetic(&spec, seed)?;
        if let Some(t) = out_truth.as_mut() {
            *t = boxed(OemModel(truth));
        }
        *out = boxed(OemCorpus(corpus));
        Ok(())
    })
}

/// Splits off `n_test` documents chosen by `seed`.
///
/// # Safety
/// `corpus` must be a live handle; `out_train` and `out_test` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn oem_corpus_split(
    corpus: *const OemCorpus,
    n_test: usize,
    seed: u64,
    out_train: *mut *mut OemCorpus,
    out_test: *mut *mut OemCorpus,
) -> OemStatus {
    guard(|| {
        let corpus = ref_arg(corpus, "corpus")?;
        let out_train = out_arg(out_train, "out_train")?;
        let out_test = out_arg(out_test, "out_test")?;
        let (train, test) = corpus::split(&corpus.0, n_test, seed)?;
        *out_train = boxed(OemCorpus(train));
        *out_test = boxed(OemCorpus(test));
        Ok(())
    })
}

/// Number of documents; 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oem_corpus_num_docs(corpus: *const OemCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// Vocabulary size; 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oem_corpus_vocab_size(corpus: *const OemCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.vocab_size())
}

/// Total number of tokens; 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oem_corpus_num_tokens(corpus: *const OemCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.num_tokens())
}

/// # Safety
/// `corpus` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oem_corpus_free(corpus: *mut OemCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Trains one pass over `corpus` with the experiment configuration given as
/// JSON (the same format as the command line tool; its `corpus`, `seeds`
/// and `out` fields are ignored).
///
/// # Safety
/// `corpus` must be a live handle, `config_json` a NUL-terminated string and
/// `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn oem_fit(
    corpus: *const OemCorpus,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut OemModel,
) -> OemStatus {
    guard(|| {
        let corpus = ref_arg(corpus, "corpus")?;
        let out = out_arg(out, "out")?;
        let config = ExperimentConfig::from_json_str(str_arg(config_json, "config_json")?)?;
        let fitted = fit(&config, corpus.0.documents(), corpus.0.vocab_size(), seed, |_| Ok(()))?;
        *out = boxed(OemModel(fitted.model));
        Ok(())
    })
}

/// Builds a model from a row-major `k × v` topic matrix and `k` prior
/// weights.
///
/// # Safety
/// `beta` must point to `k * v` values, `alpha` to `k` values and `out`
/// must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn oem_model_new(
    beta: *const f64,
    alpha: *const f64,
    k: usize,
    v: usize,
    out: *mut *mut OemModel,
) -> OemStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let len = k
            .checked_mul(v)
            .ok_or_else(|| Failure::new(OemStatus::InvalidArgument, "k * v overflows"))?;
        let beta = Array2::from_shape_vec((k, v), slice_arg(beta, len, "beta")?.to_vec())
            .map_err(|e| Failure::new(OemStatus::InvalidArgument, e.to_string()))?;
        let alpha = slice_arg(alpha, k, "alpha")?.to_vec();
        *out = boxed(OemModel(ModelParams::new(beta, alpha)?));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn oem_model_load(path: *const c_char, out: *mut *mut OemModel) -> OemStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        *out = boxed(OemModel(ModelParams::load(&path)?));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn oem_model_save(model: *const OemModel, path: *const c_char) -> OemStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        model.0.save(&path)?;
        Ok(())
    })
}

/// Number of topics; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oem_model_num_topics(model: *const OemModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.k())
}

/// Vocabulary size; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oem_model_vocab_size(model: *const OemModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.v())
}

/// Copies the row-major `K × V` topic matrix into `out`, which must hold
/// exactly `len = K * V` values.
///
/// # Safety
/// `model` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn oem_model_copy_beta(model: *const OemModel, out: *mut f64, len: usize) -> OemStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        copy_out(model.0.beta().iter().copied(), model.0.k() * model.0.v(), out, len)
    })
}

/// Copies the `K` prior weights into `out`, which must hold exactly
/// `len = K` values.
///
/// # Safety
/// `model` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn oem_model_copy_alpha(model: *const OemModel, out: *mut f64, len: usize) -> OemStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        copy_out(model.0.alpha().iter().copied(), model.0.k(), out, len)
    })
}

unsafe fn copy_out(values: impl Iterator<Item = f64>, want: usize, out: *mut f64, len: usize) -> Result<(), Failure> {
    if len != want {
        return Err(Failure::new(
            OemStatus::InvalidArgument,
            format!("buffer holds {len} values, need {want}"),
        ));
    }
    if out.is_null() {
        return Err(Failure::new(OemStatus::NullPointer, "out is null"));
    }
    let dst = std::slice::from_raw_parts_mut(out, len);
    for (d, v) in dst.iter_mut().zip(values) {
        *d = v;
    }
    Ok(())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oem_model_free(model: *mut OemModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Mean held-out log-perplexity of `corpus` under `model`, estimated with
/// the left-to-right particle method.
///
/// # Safety
/// `model` and `corpus` must be live handles and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn oem_log_perplexity(
    model: *const OemModel,
    corpus: *const OemCorpus,
    particles: usize,
    seed: u64,
    out: *mut f64,
) -> OemStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let corpus = ref_arg(corpus, "corpus")?;
        let out = out_arg(out, "out")?;
        if model.0.v() != corpus.0.vocab_size() {
            return Err(Failure::new(
                OemStatus::InvalidArgument,
                format!("model has {} words, corpus {}", model.0.v(), corpus.0.vocab_size()),
            ));
        }
        *out = perplexity(&corpus.0, &model.0.local(), particles, seed)?.mean_log_perplexity;
        Ok(())
    })
}
