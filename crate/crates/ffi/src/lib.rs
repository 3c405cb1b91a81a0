//! C interface to `coteach`.
//!
//! Every function returns a [`CtStatus`]. On failure the message is kept per
//! thread and can be read with [`ct_last_error_message`]. Objects are opaque
//! handles released with their `_free` function. Sizes and indices are
//! `size_t`.
//!
//! Safety contract for every `unsafe` entry point: pointer arguments are
//! either NULL (reported as `CT_STATUS_NULL_POINTER`) or valid for the
//! number of elements the function documents, handles come from the
//! matching constructor and are freed at most once, and enum arguments hold
//! one of the declared values.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use coteach::harness::{run_experiment, ExperimentConfig, RunSummary};
use coteach::metrics::total_variation;
use coteach::nn::{DenseNet, Matrix};
use coteach::noise::{corrupt_labels, NoiseKind, TransitionMatrix};
use coteach::selection::{
    lambda_schedule, select_disagreement, select_small_loss, ScheduleKind, ScheduleParams,
};
use coteach::CoteachError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Input = 3,
    Format = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtNoiseKind {
    Symmetric = 0,
    Pair = 1,
    Identity = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtScheduleKind {
    ConstantFloor = 0,
    SlowDecrease = 1,
}

/// Summary of one training run. Values that do not apply (for example the
/// second network of a single-network strategy) are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtRunSummary {
    pub epochs: usize,
    pub empirical_noise_rate: f64,
    pub final_test_acc_1: f64,
    pub mean_acc_1: f64,
    pub max_acc_1: f64,
    pub mean_acc_2: f64,
    pub max_acc_2: f64,
    pub peak_acc_1: f64,
    pub mean_tv_last_quarter: f64,
    pub mean_purity: f64,
}

pub struct CtTransitionMatrix(TransitionMatrix);

pub struct CtNet(DenseNet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &CoteachError) -> CtStatus {
    match e {
        CoteachError::Config(_) => CtStatus::Config,
        CoteachError::Input(_) => CtStatus::Input,
        CoteachError::Format { .. } => CtStatus::Format,
        CoteachError::Numerical(_) => CtStatus::Numerical,
        CoteachError::Io { .. } => CtStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(CoteachError),
}

impl From<CoteachError> for Failure {
    fn from(e: CoteachError) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CtStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CtStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CtStatus::Panic
        }
    }
}

unsafe fn nonnull<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: caller guarantees a non-null pointer refers to a live T
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

unsafe fn nonnull_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: as above, and the caller holds no other reference to it
    unsafe { p.as_mut() }.ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: caller guarantees `len` readable elements at `p`
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: caller guarantees `len` writable elements at `p`
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

unsafe fn c_path(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: caller passes a NUL-terminated string
    let s = unsafe { CStr::from_ptr(p) };
    let s = s
        .to_str()
        .map_err(|_| CoteachError::Input(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Message for the last failed call on this thread, or NULL after a
/// success. Valid until the next `ct_` call on the same thread.
#[no_mangle]
pub extern "C" fn ct_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn ct_transition_matrix_build(
    kind: CtNoiseKind,
    tau: f64,
    num_classes: usize,
    out: *mut *mut CtTransitionMatrix,
) -> CtStatus {
    guard(|| {
        let out = nonnull_mut(out, "out")?;
        let kind = match kind {
            CtNoiseKind::Symmetric => NoiseKind::Symmetric,
            CtNoiseKind::Pair => NoiseKind::Pair,
            CtNoiseKind::Identity => NoiseKind::Identity,
        };
        let q = TransitionMatrix::build(kind, tau, num_classes)?;
        *out = Box::into_raw(Box::new(CtTransitionMatrix(q)));
        Ok(())
    })
}

/// Copies a row-major `num_classes * num_classes` matrix.
#[no_mangle]
pub unsafe extern "C" fn ct_transition_matrix_from_rows(
    values: *const f64,
    num_classes: usize,
    out: *mut *mut CtTransitionMatrix,
) -> CtStatus {
    guard(|| {
        let out = nonnull_mut(out, "out")?;
        let values = slice(values, num_classes * num_classes, "values")?;
        let rows: Vec<Vec<f64>> = values.chunks(num_classes.max(1)).map(<[f64]>::to_vec).collect();
        *out = Box::into_raw(Box::new(CtTransitionMatrix(TransitionMatrix::from_rows(&rows)?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ct_transition_matrix_num_classes(
    q: *const CtTransitionMatrix,
    out: *mut usize,
) -> CtStatus {
    guard(|| {
        *nonnull_mut(out, "out")? = nonnull(q, "matrix")?.0.num_classes();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ct_transition_matrix_get(
    q: *const CtTransitionMatrix,
    row: usize,
    col: usize,
    out: *mut f64,
) -> CtStatus {
    guard(|| {
        let q = &nonnull(q, "matrix")?.0;
        let c = q.num_classes();
        if row >= c || col >= c {
            return Err(CoteachError::Input(format!("({row}, {col}) outside a {c}x{c} matrix")).into());
        }
        *nonnull_mut(out, "out")? = q.get(row, col);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ct_transition_matrix_free(q: *mut CtTransitionMatrix) {
    if !q.is_null() {
        // SAFETY: `q` came from Box::into_raw in this crate and is freed once
        drop(unsafe { Box::from_raw(q) });
    }
}

/// Writes `n` corrupted labels to `noisy`.
#[no_mangle]
pub unsafe extern "C" fn ct_corrupt_labels(
    q: *const CtTransitionMatrix,
    clean: *const usize,
    n: usize,
    seed: u64,
    noisy: *mut usize,
) -> CtStatus {
    guard(|| {
        let q = &nonnull(q, "matrix")?.0;
        let clean = slice(clean, n, "clean")?;
        let dst = slice_mut(noisy, n, "noisy")?;
        dst.copy_from_slice(&corrupt_labels(clean, q, seed)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ct_lambda_schedule(
    epoch: usize,
    tau: f64,
    e_k: usize,
    e_max: usize,
    kind: CtScheduleKind,
    out: *mut f64,
) -> CtStatus {
    guard(|| {
        let p = ScheduleParams {
            tau,
            e_k,
            e_max,
            kind: match kind {
                CtScheduleKind::ConstantFloor => ScheduleKind::ConstantFloor,
                CtScheduleKind::SlowDecrease => ScheduleKind::SlowDecrease,
            },
        };
        p.validate()?;
        *nonnull_mut(out, "out")? = lambda_schedule(epoch, &p);
        Ok(())
    })
}

/// `selected` must hold `n` entries; `*selected_len` receives the count used.
#[no_mangle]
pub unsafe extern "C" fn ct_select_small_loss(
    losses: *const f64,
    n: usize,
    keep_fraction: f64,
    selected: *mut usize,
    selected_len: *mut usize,
) -> CtStatus {
    guard(|| {
        let losses = slice(losses, n, "losses")?;
        let len = nonnull_mut(selected_len, "selected_len")?;
        let s = select_small_loss(losses, keep_fraction)?;
        slice_mut(selected, s.len(), "selected")?.copy_from_slice(s.as_slice());
        *len = s.len();
        Ok(())
    })
}

/// `selected` must hold `n` entries; `*selected_len` receives the count used.
#[no_mangle]
pub unsafe extern "C" fn ct_select_disagreement(
    preds1: *const usize,
    preds2: *const usize,
    n: usize,
    selected: *mut usize,
    selected_len: *mut usize,
) -> CtStatus {
    guard(|| {
        let a = slice(preds1, n, "preds1")?;
        let b = slice(preds2, n, "preds2")?;
        let len = nonnull_mut(selected_len, "selected_len")?;
        let s = select_disagreement(a, b)?;
        slice_mut(selected, s.len(), "selected")?.copy_from_slice(s.as_slice());
        *len = s.len();
        Ok(())
    })
}

/// Mean total variation between two row-major `rows * cols` probability tables.
#[no_mangle]
pub unsafe extern "C" fn ct_total_variation(
    probs1: *const f64,
    probs2: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> CtStatus {
    guard(|| {
        let a = Matrix::from_vec(rows, cols, slice(probs1, rows * cols, "probs1")?.to_vec())?;
        let b = Matrix::from_vec(rows, cols, slice(probs2, rows * cols, "probs2")?.to_vec())?;
        *nonnull_mut(out, "out")? = total_variation(&a, &b)?;
        Ok(())
    })
}

/// Glorot-initialized ReLU MLP; `sizes` lists input, hidden and output widths.
#[no_mangle]
pub unsafe extern "C" fn ct_net_new(
    sizes: *const usize,
    num_sizes: usize,
    seed: u64,
    out: *mut *mut CtNet,
) -> CtStatus {
    guard(|| {
        let out = nonnull_mut(out, "out")?;
        let net = DenseNet::glorot(slice(sizes, num_sizes, "sizes")?, seed)?;
        *out = Box::into_raw(Box::new(CtNet(net)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ct_net_dims(net: *const CtNet, input_dim: *mut usize, num_classes: *mut usize) -> CtStatus {
    guard(|| {
        let net = &nonnull(net, "net")?.0;
        *nonnull_mut(input_dim, "input_dim")? = net.input_dim();
        *nonnull_mut(num_classes, "num_classes")? = net.num_classes();
        Ok(())
    })
}

/// Softmax outputs for `rows` inputs; `probs` holds `rows * num_classes`.
#[no_mangle]
pub unsafe extern "C" fn ct_net_forward(
    net: *const CtNet,
    features: *const f64,
    rows: usize,
    probs: *mut f64,
) -> CtStatus {
    guard(|| {
        let net = &nonnull(net, "net")?.0;
        let d = net.input_dim();
        let x = Matrix::from_vec(rows, d, slice(features, rows * d, "features")?.to_vec())?;
        let p = net.forward(&x)?;
        slice_mut(probs, rows * net.num_classes(), "probs")?.copy_from_slice(p.as_slice());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ct_net_predict(
    net: *const CtNet,
    features: *const f64,
    rows: usize,
    preds: *mut usize,
) -> CtStatus {
    guard(|| {
        let net = &nonnull(net, "net")?.0;
        let d = net.input_dim();
        let x = Matrix::from_vec(rows, d, slice(features, rows * d, "features")?.to_vec())?;
        slice_mut(preds, rows, "preds")?.copy_from_slice(&net.predict(&x)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ct_net_free(net: *mut CtNet) {
    if !net.is_null() {
        // SAFETY: `net` came from Box::into_raw in this crate and is freed once
        drop(unsafe { Box::from_raw(net) });
    }
}

fn flatten(s: &RunSummary) -> CtRunSummary {
    let v = |x: Option<f64>| x.unwrap_or(f64::NAN);
    CtRunSummary {
        epochs: s.epochs,
        empirical_noise_rate: s.empirical_noise_rate,
        final_test_acc_1: v(s.final_test_acc_1),
        mean_acc_1: v(s.mean_acc_1),
        max_acc_1: v(s.max_acc_1),
        mean_acc_2: v(s.mean_acc_2),
        max_acc_2: v(s.max_acc_2),
        peak_acc_1: v(s.peak_acc_1),
        mean_tv_last_quarter: v(s.mean_tv_last_quarter),
        mean_purity: v(s.mean_purity),
    }
}

/// Runs a JSON experiment config. `out_dir` may be NULL to use the
/// config's `output_dir`. `summary` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn ct_experiment_run(
    config_path: *const c_char,
    out_dir: *const c_char,
    summary: *mut CtRunSummary,
) -> CtStatus {
    guard(|| {
        let cfg = ExperimentConfig::load(&c_path(config_path, "config_path")?)?;
        let out = if out_dir.is_null() {
            cfg.output_dir.clone()
        } else {
            c_path(out_dir, "out_dir")?
        };
        let s = run_experiment(&cfg, &out)?;
        if !summary.is_null() {
            // SAFETY: non-null and caller-provided for writing
            unsafe { *summary = flatten(&s) };
        }
        Ok(())
    })
}
