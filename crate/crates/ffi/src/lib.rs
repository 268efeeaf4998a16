//! C ABI over the `hetmerge` library.
//!
//! Models and evaluation sets are exposed as opaque handles created by a
//! `*_load` or `*_merge` function and released with the matching `*_free`.
//! Every fallible function returns an [`HmStatus`]; on failure a message
//! for the calling thread is available from [`hm_last_error`]. Panics never
//! cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hetmerge::evalsim::{self, EvalSet, Evaluator};
use hetmerge::neurallm::{NeuralLM, NUM_LAYERS};
use hetmerge::ngram::NGramModel;
use hetmerge::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    IncompatibleModels = 5,
    SimplexViolation = 6,
    MergeOverflow = 7,
    EmptyInput = 8,
    Internal = 9,
    Panic = 10,
}

/// Opaque n-gram model.
pub struct HmNGram(NGramModel);

/// Opaque neural LM.
pub struct HmNeural(NeuralLM);

/// Opaque evaluation set with fixed rescoring weights.
pub struct HmEvalSet(Evaluator);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(HmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => HmStatus::Io,
            Error::Parse(_) => HmStatus::Parse,
            Error::IncompatibleModels(_) | Error::ShapeError(_) => HmStatus::IncompatibleModels,
            Error::SimplexViolation(_) => HmStatus::SimplexViolation,
            Error::MergeOverflow => HmStatus::MergeOverflow,
            Error::EmptySentence | Error::EmptyReference | Error::InsufficientData(_) => HmStatus::EmptyInput,
            Error::InvalidCoefficient(_) | Error::Config(_) | Error::InvalidPopulation(_) => HmStatus::InvalidArgument,
            _ => HmStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure(HmStatus::Io, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HmStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> HmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HmStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Failure(HmStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message describing the last failure on this thread, or NULL after a
/// success. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn hm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of layers in every neural LM (rows of the θ matrix).
#[no_mangle]
pub extern "C" fn hm_neural_num_layers() -> usize {
    NUM_LAYERS
}

/// Loads an n-gram model written by the library.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hm_ngram_load(path: *const c_char, out: *mut *mut HmNGram) -> HmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = NGramModel::read(BufReader::new(File::open(path_arg(path)?)?))?;
        *out = Box::into_raw(Box::new(HmNGram(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hm_ngram_save(model: *const HmNGram, path: *const c_char) -> HmStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        m.0.write(BufWriter::new(File::create(path_arg(path)?)?))?;
        Ok(())
    })
}

/// Releases a handle; NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hm_ngram_free(model: *mut HmNGram) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Natural-log probability of a token sequence (end-of-sentence included).
///
/// # Safety
/// `tokens` must point to `len` ids; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hm_ngram_score(
    model: *const HmNGram,
    tokens: *const u32,
    len: usize,
    out: *mut f64,
) -> HmStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let t = slice_arg(tokens, len, "tokens")?;
        if let Some(&bad) = t.iter().find(|&&x| x as usize >= m.0.vocab_size()) {
            return Err(Failure(HmStatus::InvalidArgument, format!("token {bad} outside the vocabulary")));
        }
        *out_arg(out, "out")? = m.0.score_sentence(t);
        Ok(())
    })
}

/// Weighted merge `Σ φ_i · counts_i` of `n` compatible models.
///
/// # Safety
/// `models` must hold `n` live handles and `phi` `n` weights.
#[no_mangle]
pub unsafe extern "C" fn hm_ngram_merge(
    models: *const *const HmNGram,
    n: usize,
    phi: *const f64,
    out: *mut *mut HmNGram,
) -> HmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let handles = slice_arg(models, n, "models")?;
        let refs = handles.iter().map(|&h| ref_arg(h, "model").map(|m| &m.0)).collect::<Result<Vec<_>, _>>()?;
        let phi = slice_arg(phi, n, "phi")?;
        let merged = NGramModel::merge(&refs, phi, &[])?;
        *out = Box::into_raw(Box::new(HmNGram(merged)));
        Ok(())
    })
}

/// Loads a neural LM written by the library.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hm_neural_load(path: *const c_char, out: *mut *mut HmNeural) -> HmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = NeuralLM::read(File::open(path_arg(path)?)?)?;
        *out = Box::into_raw(Box::new(HmNeural(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hm_neural_save(model: *const HmNeural, path: *const c_char) -> HmStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        m.0.write(BufWriter::new(File::create(path_arg(path)?)?))?;
        Ok(())
    })
}

/// Releases a handle; NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hm_neural_free(model: *mut HmNeural) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Natural-log probability of a token sequence (end-of-sentence included).
///
/// # Safety
/// `tokens` must point to `len` ids; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hm_neural_score(
    model: *const HmNeural,
    tokens: *const u32,
    len: usize,
    out: *mut f64,
) -> HmStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let t = slice_arg(tokens, len, "tokens")?;
        if let Some(&bad) = t.iter().find(|&&x| x as usize >= m.0.dims().vocab) {
            return Err(Failure(HmStatus::InvalidArgument, format!("token {bad} outside the vocabulary")));
        }
        *out_arg(out, "out")? = m.0.score_sentence(t);
        Ok(())
    })
}

/// Per-layer merge: `theta` is a row-major `hm_neural_num_layers() × n`
/// matrix whose rows each lie on the simplex.
///
/// # Safety
/// `models` must hold `n` live handles and `theta` `layers · n` weights.
#[no_mangle]
pub unsafe extern "C" fn hm_neural_merge(
    models: *const *const HmNeural,
    n: usize,
    theta: *const f64,
    out: *mut *mut HmNeural,
) -> HmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let handles = slice_arg(models, n, "models")?;
        let refs = handles.iter().map(|&h| ref_arg(h, "model").map(|m| &m.0)).collect::<Result<Vec<_>, _>>()?;
        let flat = slice_arg(theta, NUM_LAYERS * n, "theta")?;
        let rows: Vec<Vec<f64>> = if n == 0 { Vec::new() } else { flat.chunks(n).map(<[f64]>::to_vec).collect() };
        let merged = NeuralLM::merge(&refs, &rows, &[])?;
        *out = Box::into_raw(Box::new(HmNeural(merged)));
        Ok(())
    })
}

/// Loads an N-best evaluation set and fixes its rescoring weights.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hm_evalset_load(
    path: *const c_char,
    beta_ngram: f64,
    beta_neural: f64,
    out: *mut *mut HmEvalSet,
) -> HmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if !beta_ngram.is_finite() || !beta_neural.is_finite() {
            return Err(Failure(HmStatus::InvalidArgument, "rescoring weights must be finite".into()));
        }
        let set = EvalSet::read(BufReader::new(File::open(path_arg(path)?)?))?;
        *out = Box::into_raw(Box::new(HmEvalSet(Evaluator::new(set, beta_ngram, beta_neural))));
        Ok(())
    })
}

/// Releases a handle; NULL is ignored.
///
/// # Safety
/// `set` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hm_evalset_free(set: *mut HmEvalSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of items (reference sentences) in the set.
///
/// # Safety
/// `set` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hm_evalset_len(set: *const HmEvalSet, out: *mut usize) -> HmStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(set, "set")?.0.eval_set().len();
        Ok(())
    })
}

/// Corpus CER of the pair after N-best rescoring.
///
/// # Safety
/// All handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hm_evaluate_pair(
    set: *const HmEvalSet,
    ngram: *const HmNGram,
    neural: *const HmNeural,
    out: *mut f64,
) -> HmStatus {
    guard(|| {
        let s = ref_arg(set, "set")?;
        let ng = ref_arg(ngram, "ngram")?;
        let nn = ref_arg(neural, "neural")?;
        if ng.0.vocab_size() != nn.0.dims().vocab {
            return Err(Failure(HmStatus::IncompatibleModels, "n-gram and neural vocabularies differ".into()));
        }
        let v = ng.0.vocab_size();
        let oov = s.0.eval_set().items.iter().any(|it| {
            it.reference.iter().chain(it.candidates.iter().flat_map(|c| c.hypothesis.iter())).any(|&t| t as usize >= v)
        });
        if oov {
            return Err(Failure(
                HmStatus::IncompatibleModels,
                "evaluation set uses tokens outside the model vocabulary".into(),
            ));
        }
        *out_arg(out, "out")? = s.0.evaluate(&ng.0, &nn.0);
        Ok(())
    })
}

/// Character error rate `levenshtein(hyp, ref) / len(ref)`.
///
/// # Safety
/// `hyp` and `reference` must point to the given numbers of ids.
#[no_mangle]
pub unsafe extern "C" fn hm_cer(
    hyp: *const u32,
    hyp_len: usize,
    reference: *const u32,
    ref_len: usize,
    out: *mut f64,
) -> HmStatus {
    guard(|| {
        let h = slice_arg(hyp, hyp_len, "hyp")?;
        let r = slice_arg(reference, ref_len, "reference")?;
        *out_arg(out, "out")? = evalsim::cer(h, r)?;
        Ok(())
    })
}
