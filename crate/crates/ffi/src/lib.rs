//! C ABI over the `oodbench` core.
//!
//! Objects cross the boundary as opaque handles created by `ood_*_new`,
//! `ood_*_load` or `ood_*_generate` and released by the matching `_free`.
//! Every fallible function returns an [`OodStatus`]; on failure the message
//! is available from [`ood_last_error`] on the same thread. Panics are
//! caught and reported as `OOD_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use oodbench::analysis::{self, DeltaOutcome, Sign};
use oodbench::datagen::{self, Dataset, GridSpec};
use oodbench::neuralcore::{read_checkpoint, write_checkpoint, NetworkSpec, ParamStore};
use oodbench::splits::{sample_combination_ladder, CombinationLadder, Fraction};
use oodbench::{config, seeds, training, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OodStatus {
    Ok = 0,
    InvalidArgument = 1,
    Format = 2,
    Consistency = 3,
    Capacity = 4,
    Shape = 5,
    State = 6,
    Numeric = 7,
    Coverage = 8,
    UndefinedCorrelation = 9,
    TrainingFailure = 10,
    SearchFailure = 11,
    Plan = 12,
    Config = 13,
    Io = 14,
    NullPointer = 15,
    BufferTooSmall = 16,
    Panic = 17,
}

impl From<&Error> for OodStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) => OodStatus::InvalidArgument,
            Error::Format { .. } | Error::Json(_) => OodStatus::Format,
            Error::Consistency(_) => OodStatus::Consistency,
            Error::Capacity { .. } => OodStatus::Capacity,
            Error::Shape { .. } => OodStatus::Shape,
            Error::State(_) => OodStatus::State,
            Error::Numeric(_) => OodStatus::Numeric,
            Error::Coverage { .. } => OodStatus::Coverage,
            Error::UndefinedCorrelation(_) => OodStatus::UndefinedCorrelation,
            Error::TrainingFailure { .. } => OodStatus::TrainingFailure,
            Error::SearchFailure { .. } => OodStatus::SearchFailure,
            Error::Plan(_) => OodStatus::Plan,
            Error::Config { .. } => OodStatus::Config,
            Error::Io(_) => OodStatus::Io,
        }
    }
}

struct Failure(OodStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OodStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            OodStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside oodbench");
            OodStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(OodStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(OodStatus::InvalidArgument, msg.into())
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread (empty after success).
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ood_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ood_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- datasets ----

/// Procedural dataset parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OodGridSpec {
    pub num_categories: usize,
    pub num_conditions: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub glyph_size: usize,
    pub canvas_size: usize,
    pub samples_per_combination: usize,
    pub noise_std: f64,
}

impl From<&GridSpec> for OodGridSpec {
    fn from(g: &GridSpec) -> Self {
        OodGridSpec {
            num_categories: g.num_categories,
            num_conditions: g.num_conditions,
            grid_rows: g.cell_grid.0,
            grid_cols: g.cell_grid.1,
            glyph_size: g.glyph_size,
            canvas_size: g.canvas_size,
            samples_per_combination: g.samples_per_combination,
            noise_std: g.noise_std,
        }
    }
}

impl From<&OodGridSpec> for GridSpec {
    fn from(g: &OodGridSpec) -> Self {
        GridSpec {
            num_categories: g.num_categories,
            num_conditions: g.num_conditions,
            cell_grid: (g.grid_rows, g.grid_cols),
            glyph_size: g.glyph_size,
            canvas_size: g.canvas_size,
            samples_per_combination: g.samples_per_combination,
            noise_std: g.noise_std,
        }
    }
}

/// Opaque labeled image collection.
pub struct OodDataset(Dataset);

/// Fills `out` with the default grid parameters.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ood_grid_spec_default(out_spec: *mut OodGridSpec) -> OodStatus {
    guard(|| {
        *out(out_spec, "out_spec")? = (&GridSpec::default()).into();
        Ok(())
    })
}

/// # Safety
/// `spec` must be null or valid for reads; `out_dataset` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ood_dataset_generate(
    spec: *const OodGridSpec,
    seed: u64,
    out_dataset: *mut *mut OodDataset,
) -> OodStatus {
    guard(|| {
        let g: GridSpec = deref(spec, "spec")?.into();
        let slot = out(out_dataset, "out_dataset")?;
        let ds = datagen::generate_grid_positions(&g, seed)?;
        *slot = Box::into_raw(Box::new(OodDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `dir` must be null or a NUL-terminated string; `out_dataset` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ood_dataset_load(dir: *const c_char, out_dataset: *mut *mut OodDataset) -> OodStatus {
    guard(|| {
        let d = PathBuf::from(string(dir, "dir")?);
        let slot = out(out_dataset, "out_dataset")?;
        *slot = Box::into_raw(Box::new(OodDataset(datagen::load_dataset(&d)?)));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a live handle; `dir` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ood_dataset_save(dataset: *const OodDataset, dir: *const c_char) -> OodStatus {
    guard(|| {
        let ds = deref(dataset, "dataset")?;
        let d = PathBuf::from(string(dir, "dir")?);
        datagen::save_dataset(&ds.0, &d)?;
        Ok(())
    })
}

/// Item count, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ood_dataset_len(dataset: *const OodDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// Dimensions: categories, conditions, image height and width.
///
/// # Safety
/// `dataset` must be null or a live handle; outputs null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ood_dataset_shape(
    dataset: *const OodDataset,
    num_categories: *mut usize,
    num_conditions: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> OodStatus {
    guard(|| {
        let d = &deref(dataset, "dataset")?.0;
        *out(num_categories, "num_categories")? = d.num_categories;
        *out(num_conditions, "num_conditions")? = d.num_conditions;
        *out(height, "height")? = d.height;
        *out(width, "width")? = d.width;
        Ok(())
    })
}

/// Copies item `index`'s pixel bytes (`height * width`) and labels.
///
/// # Safety
/// `pixels` must be valid for `capacity` bytes; other pointers null or valid.
#[no_mangle]
pub unsafe extern "C" fn ood_dataset_item(
    dataset: *const OodDataset,
    index: usize,
    pixels: *mut u8,
    capacity: usize,
    category: *mut usize,
    condition: *mut usize,
) -> OodStatus {
    guard(|| {
        let d = &deref(dataset, "dataset")?.0;
        let item = d
            .items
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} out of range ({} items)", d.len())))?;
        if capacity < item.bytes.len() {
            return Err(Failure(
                OodStatus::BufferTooSmall,
                format!("need {} bytes, got {capacity}", item.bytes.len()),
            ));
        }
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        ptr::copy_nonoverlapping(item.bytes.as_ptr(), pixels, item.bytes.len());
        *out(category, "category")? = item.category;
        *out(condition, "condition")? = item.condition;
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ood_dataset_free(dataset: *mut OodDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

// ---- combination ladders ----

/// Opaque nested sequence of InD combination sets.
pub struct OodLadder(CombinationLadder);

/// # Safety
/// `degrees` must be valid for `num_degrees` reads; `out_ladder` null or valid.
#[no_mangle]
pub unsafe extern "C" fn ood_ladder_sample(
    num_categories: usize,
    num_conditions: usize,
    degrees: *const usize,
    num_degrees: usize,
    seed: u64,
    out_ladder: *mut *mut OodLadder,
) -> OodStatus {
    guard(|| {
        let deg = slice(degrees, num_degrees, "degrees")?;
        let slot = out(out_ladder, "out_ladder")?;
        let l = sample_combination_ladder(num_categories, num_conditions, deg, seed)?;
        *slot = Box::into_raw(Box::new(OodLadder(l)));
        Ok(())
    })
}

/// # Safety
/// `ladder` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ood_ladder_num_levels(ladder: *const OodLadder) -> usize {
    ladder.as_ref().map_or(0, |l| l.0.levels.len())
}

/// Writes level `level`'s `(category, condition)` pairs as a flat array of
/// `2 * count` values. With `pairs == NULL` only `count` is written.
///
/// # Safety
/// `pairs` must be null or valid for `capacity` writes; `count` valid.
#[no_mangle]
pub unsafe extern "C" fn ood_ladder_level_pairs(
    ladder: *const OodLadder,
    level: usize,
    pairs: *mut usize,
    capacity: usize,
    count: *mut usize,
) -> OodStatus {
    guard(|| {
        let l = &deref(ladder, "ladder")?.0;
        let lvl = l
            .levels
            .get(level)
            .ok_or_else(|| invalid(format!("level {level} out of range")))?;
        let n = lvl.combos.pairs.len();
        *out(count, "count")? = n;
        if pairs.is_null() {
            return Ok(());
        }
        if capacity < 2 * n {
            return Err(Failure(
                OodStatus::BufferTooSmall,
                format!("need {} slots, got {capacity}", 2 * n),
            ));
        }
        for (i, &(c, k)) in lvl.combos.pairs.iter().enumerate() {
            *pairs.add(2 * i) = c;
            *pairs.add(2 * i + 1) = k;
        }
        Ok(())
    })
}

/// # Safety
/// `ladder` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ood_ladder_free(ladder: *mut OodLadder) {
    if !ladder.is_null() {
        drop(Box::from_raw(ladder));
    }
}

// ---- scores and statistics ----

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OodNeuronScore {
    pub preferred_category: usize,
    pub selectivity: f64,
    pub invariance: f64,
    pub si: f64,
    pub degenerate: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OodSiSummary {
    pub summary: f64,
    pub p80: f64,
    pub top_count: usize,
}

/// Scores a normalized `num_categories x num_conditions` block (row-major).
///
/// # Safety
/// `cells` must be valid for `num_categories * num_conditions` reads.
#[no_mangle]
pub unsafe extern "C" fn ood_score_cells(
    cells: *const f64,
    num_categories: usize,
    num_conditions: usize,
    degenerate: bool,
    out_score: *mut OodNeuronScore,
) -> OodStatus {
    guard(|| {
        if num_categories == 0 || num_conditions == 0 {
            return Err(invalid("empty activity block"));
        }
        let c = slice(cells, num_categories * num_conditions, "cells")?;
        let s = analysis::score_cells(c, num_categories, num_conditions, degenerate);
        *out(out_score, "out_score")? = OodNeuronScore {
            preferred_category: s.preferred_category,
            selectivity: s.selectivity,
            invariance: s.invariance,
            si: s.si,
            degenerate: s.degenerate,
        };
        Ok(())
    })
}

/// # Safety
/// `si` must be valid for `n` reads.
#[no_mangle]
pub unsafe extern "C" fn ood_layer_si_summary(
    si: *const f64,
    n: usize,
    top_fraction: f64,
    out_summary: *mut OodSiSummary,
) -> OodStatus {
    guard(|| {
        let s = analysis::layer_si_summary(slice(si, n, "si")?, top_fraction)?;
        *out(out_summary, "out_summary")? = OodSiSummary {
            summary: s.summary,
            p80: s.p80,
            top_count: s.top_count,
        };
        Ok(())
    })
}

/// Mean and 95% confidence half-width.
///
/// # Safety
/// `values` must be valid for `n` reads; outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ood_mean_ci95(values: *const f64, n: usize, mean: *mut f64, half_width: *mut f64) -> OodStatus {
    guard(|| {
        let (m, h) = analysis::mean_ci95(slice(values, n, "values")?)?;
        *out(mean, "mean")? = m;
        *out(half_width, "half_width")? = h;
        Ok(())
    })
}

/// # Safety
/// `xs` and `ys` must be valid for `n` reads; `r` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ood_pearson(xs: *const f64, ys: *const f64, n: usize, r: *mut f64) -> OodStatus {
    guard(|| {
        let v = analysis::pearson(slice(xs, n, "xs")?, slice(ys, n, "ys")?)?;
        *out(r, "r")? = v;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OodFraction {
    pub numerator: u64,
    pub denominator: u64,
}

impl From<Fraction> for OodFraction {
    fn from(f: Fraction) -> Self {
        OodFraction {
            numerator: f.numerator,
            denominator: f.denominator,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OodFrequencyTable {
    pub p_acc_up: OodFraction,
    pub p_si_up: OodFraction,
    pub p_acc_up_given_si_up: OodFraction,
    pub p_acc_up_given_si_down: OodFraction,
}

/// Frequency table from per-case improvement flags (nonzero = "+").
///
/// # Safety
/// `acc_up` and `si_up` must be valid for `n` reads.
#[no_mangle]
pub unsafe extern "C" fn ood_delta_frequency_table(
    acc_up: *const u8,
    si_up: *const u8,
    n: usize,
    out_table: *mut OodFrequencyTable,
) -> OodStatus {
    guard(|| {
        let sign = |v: u8| if v != 0 { Sign::Plus } else { Sign::Minus };
        let outcomes: Vec<DeltaOutcome> = slice(acc_up, n, "acc_up")?
            .iter()
            .zip(slice(si_up, n, "si_up")?)
            .map(|(&a, &s)| DeltaOutcome {
                acc: sign(a),
                si: sign(s),
            })
            .collect();
        let t = analysis::delta_frequency_table(&outcomes)?;
        *out(out_table, "out_table")? = OodFrequencyTable {
            p_acc_up: t.p_acc_up.into(),
            p_si_up: t.p_si_up.into(),
            p_acc_up_given_si_up: t.p_acc_up_given_si_up.into(),
            p_acc_up_given_si_down: t.p_acc_up_given_si_down.into(),
        };
        Ok(())
    })
}

// ---- models ----

/// Opaque trained network: architecture plus 32-bit parameters.
pub struct OodModel {
    spec: NetworkSpec,
    params: ParamStore<f32>,
}

/// Trains on the split described by a JSON run configuration.
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `out_model` null or valid.
#[no_mangle]
pub unsafe extern "C" fn ood_model_train(config_json: *const c_char, out_model: *mut *mut OodModel) -> OodStatus {
    guard(|| {
        let text = string(config_json, "config_json")?;
        let slot = out(out_model, "out_model")?;
        let cfg = config::parse_config(&text)?;
        let ds = cfg.data.load()?;
        let split = oodbench::experiment::seeded_split(
            &ds,
            &cfg.split.degrees,
            cfg.split.sizes,
            cfg.split.level,
            cfg.split.seed,
        )?;
        let spec = cfg.network_for(&ds)?;
        let outcome = training::train(&cfg.train, &split, &spec)?;
        *slot = Box::into_raw(Box::new(OodModel {
            spec: outcome.spec,
            params: outcome.params,
        }));
        Ok(())
    })
}

/// Loads a checkpoint for the network described by `network_json`.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out_model` null or valid.
#[no_mangle]
pub unsafe extern "C" fn ood_model_load(
    network_json: *const c_char,
    checkpoint_path: *const c_char,
    out_model: *mut *mut OodModel,
) -> OodStatus {
    guard(|| {
        let spec: NetworkSpec =
            serde_json::from_str(&string(network_json, "network_json")?).map_err(|e| invalid(e.to_string()))?;
        let path = string(checkpoint_path, "checkpoint_path")?;
        let slot = out(out_model, "out_model")?;
        let bytes = std::fs::read(&path).map_err(Error::from)?;
        let params = read_checkpoint(&bytes, &spec, &path)?;
        *slot = Box::into_raw(Box::new(OodModel { spec, params }));
        Ok(())
    })
}

/// Writes the model's checkpoint to `path`.
///
/// # Safety
/// `model` must be null or live; `path` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ood_model_save(model: *const OodModel, path: *const c_char) -> OodStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let p = string(path, "path")?;
        std::fs::write(p, write_checkpoint(&m.params)).map_err(Error::from)?;
        Ok(())
    })
}

/// Hex SHA-256 of the model's checkpoint bytes (65 bytes with NUL).
///
/// # Safety
/// `buf` must be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn ood_model_checkpoint_sha256(
    model: *const OodModel,
    buf: *mut c_char,
    capacity: usize,
) -> OodStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let hex = seeds::sha256_hex(&write_checkpoint(&m.params));
        if capacity < hex.len() + 1 {
            return Err(Failure(
                OodStatus::BufferTooSmall,
                format!("need {} bytes, got {capacity}", hex.len() + 1),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(hex.as_ptr().cast(), buf, hex.len());
        *buf.add(hex.len()) = 0;
        Ok(())
    })
}

/// Accuracy on `dataset` in eval mode.
///
/// # Safety
/// Handles must be null or live; `accuracy` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ood_model_evaluate(
    model: *const OodModel,
    dataset: *const OodDataset,
    accuracy: *mut f64,
) -> OodStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let d = &deref(dataset, "dataset")?.0;
        *out(accuracy, "accuracy")? = training::evaluate(&m.params, &m.spec, d)?;
        Ok(())
    })
}

/// Predicted class per item; `labels` must hold `ood_dataset_len` entries.
///
/// # Safety
/// `labels` must be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn ood_model_predict(
    model: *const OodModel,
    dataset: *const OodDataset,
    labels: *mut usize,
    capacity: usize,
) -> OodStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let d = &deref(dataset, "dataset")?.0;
        if capacity < d.len() {
            return Err(Failure(
                OodStatus::BufferTooSmall,
                format!("need {} slots, got {capacity}", d.len()),
            ));
        }
        if labels.is_null() && !d.is_empty() {
            return Err(null("labels"));
        }
        for (i, p) in training::predict(&m.params, &m.spec, d)?.into_iter().enumerate() {
            *labels.add(i) = p;
        }
        Ok(())
    })
}

/// Layer SI summary of the probe layer over `dataset`.
///
/// # Safety
/// Handles must be null or live; `out_summary` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ood_model_si_summary(
    model: *const OodModel,
    dataset: *const OodDataset,
    out_summary: *mut OodSiSummary,
) -> OodStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let d = &deref(dataset, "dataset")?.0;
        let r = analysis::si_report(&m.params, &m.spec, d, "full_grid")?;
        *out(out_summary, "out_summary")? = OodSiSummary {
            summary: r.summary.summary,
            p80: r.summary.p80,
            top_count: r.summary.top_count,
        };
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ood_model_free(model: *mut OodModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
