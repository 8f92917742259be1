//! C ABI for botgraph.
//!
//! Objects are opaque handles created by `bg_*_load`/`bg_*_read`/`bg_train`
//! and released with the matching `bg_*_free`. Every fallible call returns a
//! status code (`BG_OK` on success); the message of the last failure on the
//! calling thread is available from `bg_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use botgraph::config::parse_train_config;
use botgraph::eval::{evaluate_run, metrics, ConfusionMatrix};
use botgraph::features::fallback_store;
use botgraph::graph::{build_graph, cosine_similarity, SimilarityGraph};
use botgraph::ingest::{load_dataset, read_embeddings, write_embeddings, Dataset, DatasetFormat, EmbeddingStore};
use botgraph::linalg::Matrix;
use botgraph::sage::{load_model, predict, save_model, train, Model, TrainConfig};
use botgraph::Error;

/// Success.
pub const BG_OK: i32 = 0;
/// A required pointer argument was null.
pub const BG_ERR_NULL: i32 = -1;
/// A string argument was not valid UTF-8.
pub const BG_ERR_UTF8: i32 = -2;
/// An output buffer was too small.
pub const BG_ERR_BUFFER: i32 = -3;
/// A Rust panic was caught at the boundary.
pub const BG_ERR_PANIC: i32 = -4;
/// Invalid configuration.
pub const BG_ERR_CONFIG: i32 = 2;
/// Training produced a non-finite loss.
pub const BG_ERR_DIVERGED: i32 = 3;
/// Model or dimension mismatch.
pub const BG_ERR_MISMATCH: i32 = 4;
/// File could not be read or written.
pub const BG_ERR_IO: i32 = 5;
/// Malformed input file.
pub const BG_ERR_FORMAT: i32 = 6;
/// Invalid or missing data.
pub const BG_ERR_DATA: i32 = 7;
/// Profile counts absent where required.
pub const BG_ERR_METADATA: i32 = 8;
/// Labels or masks unusable for the requested computation.
pub const BG_ERR_LABELS: i32 = 9;

pub struct BgDataset(Dataset);
pub struct BgEmbeddings(EmbeddingStore);
pub struct BgModel(Model);
pub struct BgGraph(SimilarityGraph);

/// Classification metrics with bot as the positive class.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BgMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Non-zero when a zero denominator forced a metric to 0.
    pub degenerate: i32,
}

impl From<botgraph::eval::Metrics> for BgMetrics {
    fn from(m: botgraph::eval::Metrics) -> Self {
        BgMetrics {
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            degenerate: m.degenerate as i32,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Lib(Error),
    Ffi(i32, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult = Result<(), Failure>;

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> FfiResult) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BG_OK,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            e.exit_code()
        }
        Ok(Err(Failure::Ffi(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            BG_ERR_PANIC
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Ffi(BG_ERR_NULL, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Ffi(BG_ERR_UTF8, format!("`{what}` is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn bg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a dataset. `format` is `jsonl`, `cresci-csv` or `pan-xml-dir`.
///
/// # Safety
/// `path` and `format` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_dataset_load(path: *const c_char, format: *const c_char, out: *mut *mut BgDataset) -> i32 {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let format: DatasetFormat = str_arg(format, "format")?.parse()?;
        let out = out_arg(out, "out")?;
        let ds = load_dataset(&path, format)?;
        *out = Box::into_raw(Box::new(BgDataset(ds)));
        Ok(())
    })
}

/// Number of users; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn bg_dataset_len(ds: *const BgDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `ds` must be null or a handle from `bg_dataset_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bg_dataset_free(ds: *mut BgDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Reads an RGBE embedding file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_embeddings_read(path: *const c_char, out: *mut *mut BgEmbeddings) -> i32 {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(BgEmbeddings(read_embeddings(&path)?)));
        Ok(())
    })
}

/// Hashing-featurizer embeddings for every user of `ds`.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_embeddings_fallback(
    ds: *const BgDataset,
    dim: usize,
    seed: u64,
    out: *mut *mut BgEmbeddings,
) -> i32 {
    guard(|| {
        let ds = ref_arg(ds, "ds")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(BgEmbeddings(fallback_store(&ds.0, dim, seed)?)));
        Ok(())
    })
}

/// Writes embeddings as RGBE.
///
/// # Safety
/// `emb` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bg_embeddings_write(emb: *const BgEmbeddings, path: *const c_char) -> i32 {
    guard(|| {
        let emb = ref_arg(emb, "emb")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        write_embeddings(&emb.0, &path)?;
        Ok(())
    })
}

/// Embedding width; 0 for a null handle.
///
/// # Safety
/// `emb` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bg_embeddings_dim(emb: *const BgEmbeddings) -> usize {
    emb.as_ref().map_or(0, |e| e.0.dim())
}

/// # Safety
/// `emb` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bg_embeddings_free(emb: *mut BgEmbeddings) {
    if !emb.is_null() {
        drop(Box::from_raw(emb));
    }
}

/// Trains a model. `config_toml` holds training settings as bare TOML keys
/// (e.g. `"epochs = 50\ntau = 0.8"`); null means defaults. When
/// `test_metrics` is non-null it receives the test-split metrics.
///
/// # Safety
/// Handles must be live; `config_toml` null or NUL-terminated; `out` writable;
/// `test_metrics` null or writable.
#[no_mangle]
pub unsafe extern "C" fn bg_train(
    ds: *const BgDataset,
    emb: *const BgEmbeddings,
    config_toml: *const c_char,
    out: *mut *mut BgModel,
    test_metrics: *mut BgMetrics,
) -> i32 {
    guard(|| {
        let ds = ref_arg(ds, "ds")?;
        let emb = ref_arg(emb, "emb")?;
        let cfg = if config_toml.is_null() {
            TrainConfig::default()
        } else {
            parse_train_config(str_arg(config_toml, "config_toml")?)?
        };
        let out = out_arg(out, "out")?;
        let run = train(&ds.0, &emb.0, &cfg)?;
        if let Some(m) = test_metrics.as_mut() {
            *m = evaluate_run(&run)?.metrics.into();
        }
        *out = Box::into_raw(Box::new(BgModel(run.model)));
        Ok(())
    })
}

/// Bot probability and predicted label (0 human, 1 bot) per user, in
/// dataset order. Both buffers must hold `len == bg_dataset_len(ds)` items;
/// either may be null.
///
/// # Safety
/// Handles must be live; non-null buffers must have room for `len` items.
#[no_mangle]
pub unsafe extern "C" fn bg_predict(
    model: *const BgModel,
    ds: *const BgDataset,
    emb: *const BgEmbeddings,
    probabilities: *mut f64,
    labels: *mut u8,
    len: usize,
) -> i32 {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let ds = ref_arg(ds, "ds")?;
        let emb = ref_arg(emb, "emb")?;
        if len != ds.0.len() {
            return Err(Failure::Ffi(
                BG_ERR_BUFFER,
                format!("buffers hold {len} items, dataset has {} users", ds.0.len()),
            ));
        }
        let preds = predict(&model.0, &ds.0, &emb.0)?;
        for (i, p) in preds.iter().enumerate() {
            if !probabilities.is_null() {
                *probabilities.add(i) = p.bot_probability;
            }
            if !labels.is_null() {
                *labels.add(i) = p.label.into();
            }
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bg_model_save(model: *const BgModel, path: *const c_char) -> i32 {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        save_model(&model.0, &path)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_model_load(path: *const c_char, out: *mut *mut BgModel) -> i32 {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(BgModel(load_model(&path)?)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bg_model_free(model: *mut BgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Cosine similarity of two vectors of length `len`; 0 if either is zero.
///
/// # Safety
/// `a` and `b` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_cosine_similarity(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> i32 {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(null("a/b"));
        }
        let out = out_arg(out, "out")?;
        let (a, b) = (std::slice::from_raw_parts(a, len), std::slice::from_raw_parts(b, len));
        *out = cosine_similarity(a, b)?;
        Ok(())
    })
}

/// Thresholded cosine graph over a row-major `rows × cols` matrix.
///
/// # Safety
/// `features` must point to `rows * cols` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_graph_build(
    features: *const f64,
    rows: usize,
    cols: usize,
    tau: f64,
    out: *mut *mut BgGraph,
) -> i32 {
    guard(|| {
        if features.is_null() {
            return Err(null("features"));
        }
        let out = out_arg(out, "out")?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure::Ffi(BG_ERR_DATA, "rows * cols overflows".into()))?;
        let data = std::slice::from_raw_parts(features, len).to_vec();
        let g = build_graph(&Matrix::from_vec(rows, cols, data)?, tau)?;
        *out = Box::into_raw(Box::new(BgGraph(g)));
        Ok(())
    })
}

/// Number of undirected edges; 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bg_graph_edge_count(g: *const BgGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.edge_count())
}

/// Writes edges as `(i, j)` pairs with `i < j`, ascending, into `pairs`
/// (`2 * bg_graph_edge_count(g)` entries). `capacity` counts entries.
///
/// # Safety
/// `g` must be a live handle; `pairs` must have room for `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn bg_graph_edges(g: *const BgGraph, pairs: *mut usize, capacity: usize) -> i32 {
    guard(|| {
        let g = ref_arg(g, "g")?;
        if pairs.is_null() {
            return Err(null("pairs"));
        }
        let edges = g.0.edges();
        if capacity < 2 * edges.len() {
            return Err(Failure::Ffi(
                BG_ERR_BUFFER,
                format!("need {} entries, buffer holds {capacity}", 2 * edges.len()),
            ));
        }
        for (k, (i, j)) in edges.into_iter().enumerate() {
            *pairs.add(2 * k) = i;
            *pairs.add(2 * k + 1) = j;
        }
        Ok(())
    })
}

/// # Safety
/// `g` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bg_graph_free(g: *mut BgGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Accuracy, precision, recall and F1 from confusion counts.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_metrics(tp: u64, fp: u64, fn_: u64, tn: u64, out: *mut BgMetrics) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        let c = ConfusionMatrix {
            tp: tp as usize,
            fp: fp as usize,
            fn_: fn_ as usize,
            tn: tn as usize,
        };
        if c.total() == 0 {
            return Err(Error::Data("confusion matrix is empty".into()).into());
        }
        *out = metrics(&c).into();
        Ok(())
    })
}
