//! C ABI for transferlab.
//!
//! Every object crosses the boundary as an opaque handle owned by the
//! caller and released with the matching `*_free`. Every fallible call
//! returns a [`TlStatus`]; on failure the message is available from
//! [`tl_last_error_message`] on the same thread. Matrices are row-major
//! with one sample per row.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use transferlab::linalg::{self, SolvePolicy};
use transferlab::ntk::{self, GramBundle};
use transferlab::shallow::{self, ShallowNet, TrainConfig};
use transferlab::tasks::{self, TaskDataset, TaskPairSpec};
use transferlab::trace::DeviationRef;
use transferlab::{Error, Vector};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NearSingular = 4,
    Diverged = 5,
    Io = 6,
    Format = 7,
    Panic = 99,
}

/// A validated dataset.
pub struct TlTask(TaskDataset);

/// NTK Gram matrices and the quantities derived from them for one pair.
pub struct TlGramBundle(GramBundle);

/// A two-layer ReLU network.
pub struct TlShallowNet(ShallowNet);

/// Scalar summary of a bundle.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TlBundleSummary {
    pub n_source: usize,
    pub n_target: usize,
    pub lambda_p: f64,
    pub lambda_q: f64,
    pub similarity_l2: f64,
    pub similarity_quadform: f64,
    pub theorem2_bound: f64,
    pub scratch_bound: f64,
    pub jitter_used: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TlStatus {
    match e {
        Error::InvalidInput(_) | Error::Config { .. } | Error::NotOrthogonal { .. } | Error::NotSymmetric { .. } => {
            TlStatus::InvalidArgument
        }
        Error::DimensionMismatch { .. } | Error::MemoryBudget { .. } => TlStatus::DimensionMismatch,
        Error::NearSingular { .. } => TlStatus::NearSingular,
        Error::Diverged { .. } => TlStatus::Diverged,
        Error::Io(_) | Error::NoManifest(_) => TlStatus::Io,
        Error::Format(_) | Error::Json(_) | Error::Integrity { .. } => TlStatus::Format,
    }
}

struct Fail(TlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TlStatus::NullPointer, format!("{what} is null"))
}

fn bad(msg: impl Into<String>) -> Fail {
    Fail(TlStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TlStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TlStatus::Panic
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Fail> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| bad(format!("{what} is not valid UTF-8")))
}

fn checked_len(a: usize, b: usize) -> Result<usize, Fail> {
    a.checked_mul(b).ok_or_else(|| bad("size overflows"))
}

fn write_out(out: &mut [f64], values: impl ExactSizeIterator<Item = f64>, what: &'static str) -> Result<(), Fail> {
    if out.len() != values.len() {
        return Err(Error::DimensionMismatch {
            what,
            expected: values.len(),
            found: out.len(),
        }
        .into());
    }
    for (o, v) in out.iter_mut().zip(values) {
        *o = v;
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null if it succeeded.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn tl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Build a task from `n x d` row-major inputs and `n` labels. Rows must be
/// unit-norm and labels in [-1, 1].
///
/// # Safety
/// `inputs` must point to `n * d` doubles, `labels` to `n`, `out` to a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn tl_task_from_arrays(
    inputs: *const f64,
    labels: *const f64,
    n: usize,
    d: usize,
    seed: u64,
    out: *mut *mut TlTask,
) -> TlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let x = slice(inputs, checked_len(n, d)?, "inputs")?;
        let y = slice(labels, n, "labels")?;
        let task = TaskDataset::new(
            "ffi",
            seed,
            linalg::from_row_major(n, d, x)?,
            Vector::from_column_slice(y),
        )?;
        *out = Box::into_raw(Box::new(TlTask(task)));
        Ok(())
    })
}

/// Parse a task from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string, `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn tl_task_from_json(json: *const c_char, out: *mut *mut TlTask) -> TlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let task = TaskDataset::from_json_str(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(TlTask(task)));
        Ok(())
    })
}

/// Generate a (source, target) pair from a JSON pair spec with fields
/// `n_source, n_target, d, input_overlap, source_labels, target_labels, seed`.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string; both out pointers must be
/// writable handle slots.
#[no_mangle]
pub unsafe extern "C" fn tl_task_pair_from_spec(
    spec_json: *const c_char,
    out_source: *mut *mut TlTask,
    out_target: *mut *mut TlTask,
) -> TlStatus {
    guard(|| {
        if out_source.is_null() || out_target.is_null() {
            return Err(null("out"));
        }
        let spec: TaskPairSpec =
            serde_json::from_str(str_arg(spec_json, "spec_json")?).map_err(Error::from)?;
        let (p, q) = tasks::make_task_pair(&spec)?;
        *out_source = Box::into_raw(Box::new(TlTask(p)));
        *out_target = Box::into_raw(Box::new(TlTask(q)));
        Ok(())
    })
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `task` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tl_task_n(task: *const TlTask) -> usize {
    task.as_ref().map_or(0, |t| t.0.n())
}

/// Input dimension, or 0 for a null handle.
///
/// # Safety
/// `task` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tl_task_d(task: *const TlTask) -> usize {
    task.as_ref().map_or(0, |t| t.0.d())
}

/// Copy the labels into `out` (length must equal n).
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tl_task_labels(task: *const TlTask, out: *mut f64, len: usize) -> TlStatus {
    guard(|| {
        let t = handle(task, "task")?;
        write_out(slice_mut(out, len, "out")?, t.0.labels().iter().copied(), "labels")
    })
}

/// # Safety
/// `task` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tl_task_free(task: *mut TlTask) {
    if !task.is_null() {
        drop(Box::from_raw(task));
    }
}

/// Exact infinite-width Gram matrix between `na x d` and `nb x d` inputs,
/// written row-major into `out` (`na * nb` doubles).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn tl_gram_exact(
    xa: *const f64,
    na: usize,
    xb: *const f64,
    nb: usize,
    d: usize,
    out: *mut f64,
) -> TlStatus {
    guard(|| {
        let a = linalg::from_row_major(na, d, slice(xa, checked_len(na, d)?, "xa")?)?;
        let b = linalg::from_row_major(nb, d, slice(xb, checked_len(nb, d)?, "xb")?)?;
        let g = ntk::gram_exact(&a, &b)?;
        let dst = slice_mut(out, checked_len(na, nb)?, "out")?;
        write_out(dst, linalg::to_row_major(&g.values).into_iter(), "gram")
    })
}

/// Build the Gram bundle for (source, target). With `allow_near_singular`
/// zero, a near-singular Gram matrix is reported as `NearSingular`.
///
/// # Safety
/// Handles must be live; `out` must be a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn tl_bundle_build(
    source: *const TlTask,
    target: *const TlTask,
    allow_near_singular: i32,
    out: *mut *mut TlGramBundle,
) -> TlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = handle(source, "source")?;
        let q = handle(target, "target")?;
        let policy = if allow_near_singular != 0 {
            SolvePolicy::permissive()
        } else {
            SolvePolicy::default()
        };
        let b = GramBundle::build(&p.0, &q.0, policy)?;
        *out = Box::into_raw(Box::new(TlGramBundle(b)));
        Ok(())
    })
}

/// # Safety
/// `bundle` must be live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tl_bundle_summary(bundle: *const TlGramBundle, out: *mut TlBundleSummary) -> TlStatus {
    guard(|| {
        let b = &handle(bundle, "bundle")?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = TlBundleSummary {
            n_source: b.y_source.len(),
            n_target: b.y_target.len(),
            lambda_p: b.lambda_p,
            lambda_q: b.lambda_q,
            similarity_l2: b.similarity_l2,
            similarity_quadform: b.similarity_quadform,
            theorem2_bound: ntk::theorem2_bound(b),
            scratch_bound: ntk::scratch_bound(b),
            jitter_used: b.jitter_used,
        };
        Ok(())
    })
}

/// Transformed labels `H_PQ^T H_P^{-1} y_P` (length n_target).
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tl_bundle_transformed_labels(
    bundle: *const TlGramBundle,
    out: *mut f64,
    len: usize,
) -> TlStatus {
    guard(|| {
        let b = &handle(bundle, "bundle")?.0;
        write_out(slice_mut(out, len, "out")?, b.y_transformed.iter().copied(), "transformed labels")
    })
}

/// # Safety
/// `bundle` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tl_bundle_free(bundle: *mut TlGramBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Seeded two-layer network of width `m` with first-layer scale `kappa`.
///
/// # Safety
/// `out` must be a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn tl_net_init(d: usize, m: usize, kappa: f64, seed: u64, out: *mut *mut TlShallowNet) -> TlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let net = shallow::init_net(d, m, kappa, seed)?;
        *out = Box::into_raw(Box::new(TlShallowNet(net)));
        Ok(())
    })
}

/// Network outputs on the task's inputs (length n).
///
/// # Safety
/// Handles must be live; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tl_net_forward(
    net: *const TlShallowNet,
    task: *const TlTask,
    out: *mut f64,
    len: usize,
) -> TlStatus {
    guard(|| {
        let net = &handle(net, "net")?.0;
        let task = &handle(task, "task")?.0;
        let u = net.forward(task.inputs())?;
        write_out(slice_mut(out, len, "out")?, u.iter().copied(), "outputs")
    })
}

/// Run `steps` full-batch gradient-descent steps in place. The final
/// residual norm is stored in `final_residual` when it is non-null.
///
/// # Safety
/// `net` must be a live handle owned by the caller; `task` live.
#[no_mangle]
pub unsafe extern "C" fn tl_net_train(
    net: *mut TlShallowNet,
    task: *const TlTask,
    eta: f64,
    steps: usize,
    final_residual: *mut f64,
) -> TlStatus {
    guard(|| {
        let slot = net.as_mut().ok_or_else(|| null("net"))?;
        let task = &handle(task, "task")?.0;
        if !(eta > 0.0) {
            return Err(bad(format!("eta = {eta} must be positive")));
        }
        let cfg = TrainConfig::new(eta, steps).record_every(steps.max(1));
        let (trained, trace) = shallow::train_gd(&slot.0, task, &cfg, DeviationRef::Init)?;
        slot.0 = trained;
        if let Some(r) = final_residual.as_mut() {
            *r = trace.records.last().map_or(f64::NAN, |rec| rec.residual_norm);
        }
        Ok(())
    })
}

/// Write a binary checkpoint.
///
/// # Safety
/// `net` must be live; `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn tl_net_save(net: *const TlShallowNet, path: *const c_char) -> TlStatus {
    guard(|| {
        let net = &handle(net, "net")?.0;
        shallow::write_checkpoint(net, Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Read a binary checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn tl_net_load(path: *const c_char, out: *mut *mut TlShallowNet) -> TlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let net = shallow::read_checkpoint(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(TlShallowNet(net)));
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tl_net_free(net: *mut TlShallowNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}
