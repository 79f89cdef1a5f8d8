//! C ABI for the glossing pipeline.
//!
//! Conventions, shared by every function here:
//!
//! - Handles (`GlosspipeCorpus`, `GlosspipeModel`) are opaque; create them
//!   with the `_open` functions and release them with the matching `_free`.
//! - Every fallible function returns a [`GlosspipeStatus`] and writes its
//!   result through an out-pointer, which is left untouched on failure.
//! - Strings cross the boundary as NUL-terminated UTF-8. Strings returned
//!   through out-pointers are owned by the caller and must be released with
//!   [`glosspipe_string_free`]; `const char *` return values are borrowed
//!   and must not be freed.
//! - After a failure, [`glosspipe_last_error_message`] returns a
//!   human-readable description, valid on the calling thread until the next
//!   failing call.
//!
//! The corresponding header is generated into `include/glosspipe.h` by the
//! build script.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use glosspipe::corpus::{parse_corpus, surface_to_words, words_to_surface, Corpus, CorpusFormat};
use glosspipe::error::Error;
use glosspipe::evaluation::{align_glosses, token_accuracy, tokenize_gloss};
use glosspipe::neural::TaggerModel;
use glosspipe::prompting::extract_gloss;

/// Result of a C-ABI call. `GLOSSPIPE_STATUS_OK` is zero; every other value
/// is an error and leaves a message for [`glosspipe_last_error_message`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlosspipeStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArg = 1,
    /// A string argument was not valid UTF-8.
    Utf8 = 2,
    /// A file could not be read or written.
    Io = 3,
    /// A file or string had the wrong format.
    Parse = 4,
    /// The arguments were structurally invalid (bad format name, empty
    /// input, mismatched shapes).
    Invalid = 5,
    /// An unexpected internal failure.
    Internal = 6,
}

/// Opaque handle to a parsed corpus.
pub struct GlosspipeCorpus(Corpus);

/// Opaque handle to a trained tagger checkpoint.
pub struct GlosspipeModel(TaggerModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

/// Records `message` for [`glosspipe_last_error_message`] and passes
/// `status` through.
fn fail(status: GlosspipeStatus, message: impl Into<String>) -> GlosspipeStatus {
    let mut bytes = message.into().into_bytes();
    bytes.retain(|&b| b != 0);
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(bytes).expect("NUL bytes were removed");
    });
    status
}

fn fail_error(e: &Error) -> GlosspipeStatus {
    let status = match e {
        Error::Io { .. } => GlosspipeStatus::Io,
        Error::Parse { .. } | Error::Json(_) => GlosspipeStatus::Parse,
        Error::Argument(_) | Error::Config(_) | Error::Data(_) | Error::Alignment { .. } => {
            GlosspipeStatus::Invalid
        }
        _ => GlosspipeStatus::Internal,
    };
    fail(status, e.to_string())
}

/// Borrows a required `*const c_char` argument as UTF-8.
///
/// # Safety
///
/// `pointer`, when non-NULL, must point to a NUL-terminated buffer that
/// stays valid for the duration of the call.
unsafe fn str_arg<'a>(pointer: *const c_char, name: &str) -> Result<&'a str, GlosspipeStatus> {
    if pointer.is_null() {
        return Err(fail(GlosspipeStatus::NullArg, format!("{name} is NULL")));
    }
    CStr::from_ptr(pointer)
        .to_str()
        .map_err(|e| fail(GlosspipeStatus::Utf8, format!("{name} is not UTF-8: {e}")))
}

/// Hands `value` to the caller through `out` as an owned C string.
///
/// # Safety
///
/// `out` must be NULL or a valid location to write a pointer to.
unsafe fn write_string_out(value: String, out: *mut *mut c_char) -> GlosspipeStatus {
    if out.is_null() {
        return fail(GlosspipeStatus::NullArg, "out pointer is NULL");
    }
    match CString::new(value) {
        Ok(s) => {
            *out = s.into_raw();
            GlosspipeStatus::Ok
        }
        Err(_) => fail(
            GlosspipeStatus::Internal,
            "result contains an interior NUL byte",
        ),
    }
}

/// Runs `body`, converting a panic into `GLOSSPIPE_STATUS_INTERNAL` instead
/// of unwinding across the C boundary.
fn guarded(body: impl FnOnce() -> GlosspipeStatus) -> GlosspipeStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            fail(GlosspipeStatus::Internal, format!("internal panic: {message}"))
        }
    }
}

/// Library version as a static string. Never free the result.
#[no_mangle]
pub extern "C" fn glosspipe_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message describing the most recent failure on this thread, or an empty
/// string if nothing failed yet. Borrowed: do not free, and do not use it
/// after the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn glosspipe_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parses a corpus file into a new handle.
///
/// `format` selects the parser: `"jsonl"` or `"flat-igt"`. On success,
/// writes the handle to `out_corpus`; release it with
/// [`glosspipe_corpus_free`].
///
/// # Safety
///
/// `path` and `format` must be NULL or NUL-terminated strings valid for the
/// call; `out_corpus` must be a valid location to write a pointer to.
#[no_mangle]
pub unsafe extern "C" fn glosspipe_corpus_open(
    path: *const c_char,
    format: *const c_char,
    out_corpus: *mut *mut GlosspipeCorpus,
) -> GlosspipeStatus {
    guarded(|| {
        let path = match str_arg(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let format = match str_arg(format, "format") {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out_corpus.is_null() {
            return fail(GlosspipeStatus::NullArg, "out_corpus is NULL");
        }
        let format = match format {
            "jsonl" => CorpusFormat::Jsonl,
            "flat-igt" => CorpusFormat::FlatIgt,
            other => {
                return fail(
                    GlosspipeStatus::Invalid,
                    format!("unknown corpus format {other:?}; use \"jsonl\" or \"flat-igt\""),
                )
            }
        };
        match parse_corpus(path, format) {
            Ok(corpus) => {
                *out_corpus = Box::into_raw(Box::new(GlosspipeCorpus(corpus)));
                GlosspipeStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Writes the number of sentences in the corpus to `out_count`.
///
/// # Safety
///
/// `corpus` must be a live handle from [`glosspipe_corpus_open`] (or NULL);
/// `out_count` must be a valid location to write to.
#[no_mangle]
pub unsafe extern "C" fn glosspipe_corpus_sentence_count(
    corpus: *const GlosspipeCorpus,
    out_count: *mut usize,
) -> GlosspipeStatus {
    guarded(|| {
        if corpus.is_null() {
            return fail(GlosspipeStatus::NullArg, "corpus is NULL");
        }
        if out_count.is_null() {
            return fail(GlosspipeStatus::NullArg, "out_count is NULL");
        }
        *out_count = (*corpus).0.len();
        GlosspipeStatus::Ok
    })
}

/// Writes the number of distinct documents in the corpus to `out_count`.
///
/// # Safety
///
/// Same requirements as [`glosspipe_corpus_sentence_count`].
#[no_mangle]
pub unsafe extern "C" fn glosspipe_corpus_document_count(
    corpus: *const GlosspipeCorpus,
    out_count: *mut usize,
) -> GlosspipeStatus {
    guarded(|| {
        if corpus.is_null() {
            return fail(GlosspipeStatus::NullArg, "corpus is NULL");
        }
        if out_count.is_null() {
            return fail(GlosspipeStatus::NullArg, "out_count is NULL");
        }
        *out_count = (*corpus).0.documents().len();
        GlosspipeStatus::Ok
    })
}

/// Releases a corpus handle. NULL is a no-op.
///
/// # Safety
///
/// `corpus` must be NULL or a handle from [`glosspipe_corpus_open`] that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn glosspipe_corpus_free(corpus: *mut GlosspipeCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Loads a trained tagger checkpoint into a new handle. Release it with
/// [`glosspipe_model_free`].
///
/// # Safety
///
/// `path` must be NULL or a NUL-terminated string valid for the call;
/// `out_model` must be a valid location to write a pointer to.
#[no_mangle]
pub unsafe extern "C" fn glosspipe_model_open(
    path: *const c_char,
    out_model: *mut *mut GlosspipeModel,
) -> GlosspipeStatus {
    guarded(|| {
        let path = match str_arg(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out_model.is_null() {
            return fail(GlosspipeStatus::NullArg, "out_model is NULL");
        }
        match TaggerModel::load(path) {
            Ok(model) => {
                *out_model = Box::into_raw(Box::new(GlosspipeModel(model)));
                GlosspipeStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Glosses one segmented sentence (words separated by spaces, morphemes by
/// hyphens) and writes the gloss surface, in the same shape, to
/// `out_gloss`. Free the result with [`glosspipe_string_free`].
///
/// # Safety
///
/// `model` must be a live handle from [`glosspipe_model_open`] (or NULL);
/// `segmented` must be NULL or a NUL-terminated string valid for the call;
/// `out_gloss` must be a valid location to write a pointer to.
#[no_mangle]
pub unsafe extern "C" fn glosspipe_model_gloss(
    model: *const GlosspipeModel,
    segmented: *const c_char,
    out_gloss: *mut *mut c_char,
) -> GlosspipeStatus {
    guarded(|| {
        if model.is_null() {
            return fail(GlosspipeStatus::NullArg, "model is NULL");
        }
        let segmented = match str_arg(segmented, "segmented") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let words = match surface_to_words(segmented, "segmented argument") {
            Ok(words) => words,
            Err(e) => return fail_error(&e),
        };
        match (*model).0.gloss(&words) {
            Ok(gloss) => write_string_out(words_to_surface(&gloss), out_gloss),
            Err(e) => fail_error(&e),
        }
    })
}

/// Releases a model handle. NULL is a no-op.
///
/// # Safety
///
/// `model` must be NULL or a handle from [`glosspipe_model_open`] that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn glosspipe_model_free(model: *mut GlosspipeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Extracts the gloss from a raw model response: the text between the first
/// two `###` markers, trimmed, or the input unchanged when fewer than two
/// markers are present. Free the result with [`glosspipe_string_free`].
///
/// # Safety
///
/// `raw` must be NULL or a NUL-terminated string valid for the call;
/// `out_gloss` must be a valid location to write a pointer to.
#[no_mangle]
pub unsafe extern "C" fn glosspipe_extract_gloss(
    raw: *const c_char,
    out_gloss: *mut *mut c_char,
) -> GlosspipeStatus {
    guarded(|| {
        let raw = match str_arg(raw, "raw") {
            Ok(s) => s,
            Err(status) => return status,
        };
        write_string_out(extract_gloss(raw), out_gloss)
    })
}

/// Scores a predicted gloss surface against a gold gloss surface and writes
/// the token-level accuracy (0 to 1) to `out_accuracy`. Tokens align
/// word-by-word and morpheme-by-morpheme against the gold shape; missing or
/// extra predicted tokens count as wrong. An empty gold surface is invalid.
///
/// # Safety
///
/// `predicted` and `gold` must be NULL or NUL-terminated strings valid for
/// the call; `out_accuracy` must be a valid location to write to.
#[no_mangle]
pub unsafe extern "C" fn glosspipe_token_accuracy(
    predicted: *const c_char,
    gold: *const c_char,
    out_accuracy: *mut f64,
) -> GlosspipeStatus {
    guarded(|| {
        let predicted = match str_arg(predicted, "predicted") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let gold = match str_arg(gold, "gold") {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out_accuracy.is_null() {
            return fail(GlosspipeStatus::NullArg, "out_accuracy is NULL");
        }
        let aligned = align_glosses(&tokenize_gloss(predicted), &tokenize_gloss(gold));
        match token_accuracy(&[aligned]) {
            Ok(accuracy) => {
                *out_accuracy = accuracy.accuracy;
                GlosspipeStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Releases a string produced by this library. NULL is a no-op.
///
/// # Safety
///
/// `s` must be NULL or a string returned through an out-pointer of this
/// library that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn glosspipe_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    use glosspipe::corpus::{document_split, generate_synthetic_corpus, write_jsonl, SyntheticSpec};
    use glosspipe::neural::{train_tagger, TaggerConfig};

    fn c(text: &str) -> CString {
        CString::new(text).unwrap()
    }

    /// Reads and frees an out-string produced by the library.
    unsafe fn take_string(pointer: *mut c_char) -> String {
        assert!(!pointer.is_null());
        let value = CStr::from_ptr(pointer).to_str().unwrap().to_string();
        glosspipe_string_free(pointer);
        value
    }

    fn last_error() -> String {
        unsafe {
            CStr::from_ptr(glosspipe_last_error_message())
                .to_str()
                .unwrap()
                .to_string()
        }
    }

    fn fixture_corpus_file(dir: &std::path::Path) -> std::path::PathBuf {
        let spec = SyntheticSpec {
            sentence_count: 40,
            document_count: 4,
            ..SyntheticSpec::default()
        };
        let (corpus, _) = generate_synthetic_corpus(&spec, 42).unwrap();
        let path = dir.join("corpus.jsonl");
        write_jsonl(&corpus, &path).unwrap();
        path
    }

    #[test]
    fn version_matches_the_package() {
        let version = unsafe { CStr::from_ptr(glosspipe_version()) };
        assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn corpus_round_trip_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = c(fixture_corpus_file(dir.path()).to_str().unwrap());
        let format = c("jsonl");
        let mut corpus: *mut GlosspipeCorpus = ptr::null_mut();
        unsafe {
            assert_eq!(
                glosspipe_corpus_open(path.as_ptr(), format.as_ptr(), &mut corpus),
                GlosspipeStatus::Ok
            );
            let mut sentences = 0usize;
            let mut documents = 0usize;
            assert_eq!(
                glosspipe_corpus_sentence_count(corpus, &mut sentences),
                GlosspipeStatus::Ok
            );
            assert_eq!(
                glosspipe_corpus_document_count(corpus, &mut documents),
                GlosspipeStatus::Ok
            );
            assert_eq!(sentences, 40);
            assert_eq!(documents, 4);
            glosspipe_corpus_free(corpus);
        }
    }

    #[test]
    fn missing_file_reports_io_with_a_message() {
        let path = c("/definitely/not/here.jsonl");
        let format = c("jsonl");
        let mut corpus: *mut GlosspipeCorpus = ptr::null_mut();
        let status =
            unsafe { glosspipe_corpus_open(path.as_ptr(), format.as_ptr(), &mut corpus) };
        assert_eq!(status, GlosspipeStatus::Io);
        assert!(corpus.is_null(), "out pointer must stay untouched on failure");
        assert!(
            last_error().contains("/definitely/not/here.jsonl"),
            "message should name the path: {}",
            last_error()
        );
    }

    #[test]
    fn bad_arguments_report_null_utf8_and_invalid() {
        let path = c("x.jsonl");
        let format = c("jsonl");
        let mut corpus: *mut GlosspipeCorpus = ptr::null_mut();
        unsafe {
            assert_eq!(
                glosspipe_corpus_open(ptr::null(), format.as_ptr(), &mut corpus),
                GlosspipeStatus::NullArg
            );
            assert_eq!(
                glosspipe_corpus_open(path.as_ptr(), format.as_ptr(), ptr::null_mut()),
                GlosspipeStatus::NullArg
            );

            let invalid_utf8 = CString::new(vec![0xffu8, 0xfe]).unwrap();
            assert_eq!(
                glosspipe_corpus_open(invalid_utf8.as_ptr(), format.as_ptr(), &mut corpus),
                GlosspipeStatus::Utf8
            );

            let bad_format = c("parquet");
            assert_eq!(
                glosspipe_corpus_open(path.as_ptr(), bad_format.as_ptr(), &mut corpus),
                GlosspipeStatus::Invalid
            );
            assert!(last_error().contains("parquet"), "{}", last_error());

            assert_eq!(
                glosspipe_corpus_sentence_count(ptr::null(), &mut 0usize),
                GlosspipeStatus::NullArg
            );
            glosspipe_corpus_free(ptr::null_mut());
            glosspipe_model_free(ptr::null_mut());
            glosspipe_string_free(ptr::null_mut());
        }
    }

    #[test]
    fn model_open_gloss_and_free() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            sentence_count: 40,
            document_count: 4,
            ..SyntheticSpec::default()
        };
        let (corpus, _) = generate_synthetic_corpus(&spec, 42).unwrap();
        let (train, test) = document_split(&corpus, 0.25, 13).unwrap();
        let config = TaggerConfig {
            char_embed_dim: 12,
            hidden_dim: 8,
            lstm_layers: 1,
            max_epochs: 4,
            patience: 3,
            ..TaggerConfig::default()
        };
        let outcome = train_tagger(&train, &config).unwrap();
        let checkpoint = dir.path().join("tagger.json");
        outcome.model.save(&checkpoint).unwrap();

        let probe = test.sentences()[0].clone();
        let expected = words_to_surface(&outcome.model.gloss(&probe.source_words).unwrap());

        let path = c(checkpoint.to_str().unwrap());
        let mut model: *mut GlosspipeModel = ptr::null_mut();
        unsafe {
            assert_eq!(
                glosspipe_model_open(path.as_ptr(), &mut model),
                GlosspipeStatus::Ok
            );
            let segmented = c(&probe.source_surface());
            let mut gloss: *mut c_char = ptr::null_mut();
            assert_eq!(
                glosspipe_model_gloss(model, segmented.as_ptr(), &mut gloss),
                GlosspipeStatus::Ok
            );
            assert_eq!(take_string(gloss), expected);

            let empty = c("");
            let mut out: *mut c_char = ptr::null_mut();
            assert_eq!(
                glosspipe_model_gloss(model, empty.as_ptr(), &mut out),
                GlosspipeStatus::Parse
            );
            assert!(out.is_null(), "out pointer must stay untouched on failure");
            glosspipe_model_free(model);
        }
    }

    #[test]
    fn extract_gloss_crosses_the_boundary() {
        unsafe {
            let wrapped = c("thinking...\n###horse-ABL two###\ndone");
            let mut out: *mut c_char = ptr::null_mut();
            assert_eq!(
                glosspipe_extract_gloss(wrapped.as_ptr(), &mut out),
                GlosspipeStatus::Ok
            );
            assert_eq!(take_string(out), "horse-ABL two");

            let plain = c("no markers");
            let mut out: *mut c_char = ptr::null_mut();
            assert_eq!(
                glosspipe_extract_gloss(plain.as_ptr(), &mut out),
                GlosspipeStatus::Ok
            );
            assert_eq!(take_string(out), "no markers");
        }
    }

    #[test]
    fn token_accuracy_scores_against_gold_shape() {
        unsafe {
            let predicted = c("horse-ABL two big");
            let gold = c("horse-ABL two small");
            let mut accuracy = f64::NAN;
            assert_eq!(
                glosspipe_token_accuracy(predicted.as_ptr(), gold.as_ptr(), &mut accuracy),
                GlosspipeStatus::Ok
            );
            assert_eq!(accuracy, 0.75);

            let empty = c("");
            assert_eq!(
                glosspipe_token_accuracy(predicted.as_ptr(), empty.as_ptr(), &mut accuracy),
                GlosspipeStatus::Invalid
            );
        }
    }
}
