//! C ABI for the sortnet fusion kernels.
//!
//! Conventions:
//! - Tensors cross the boundary as opaque `SortnetTensor` handles created by
//!   [`sortnet_tensor_new`] and released by [`sortnet_tensor_free`].
//! - Every fallible call returns a [`SortnetStatus`]; `SORTNET_STATUS_OK` is 0.
//!   On failure, [`sortnet_last_error_message`] returns a thread-local,
//!   NUL-terminated description that stays valid until the next failing call
//!   on the same thread.
//! - Output parameters are written only on `SORTNET_STATUS_OK`.
//! - No call panics across the boundary; internal panics are caught and
//!   reported as `SORTNET_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use sortnet::fusion::{
    fuse_scalars, sort_fuse, surface_value, FusionSpec, ProdInputGate, ProdWrapper, SurfaceKind,
};
use sortnet::netbuild::shrink_kernel;
use sortnet::tape::Tape;
use sortnet::{Error, Tensor};

/// Result of every fallible call in this interface.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SortnetStatus {
    /// The call succeeded and all output parameters are valid.
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// An argument was outside its documented domain.
    InvalidArgument = 2,
    /// Tensor shapes (or a shape/data-length pair) disagree.
    ShapeMismatch = 3,
    /// The math rejected the values (negative input to the sqrt wrapper,
    /// non-finite intermediate, ...).
    Numeric = 4,
    /// An unexpected internal failure; see the last error message.
    Internal = 5,
}

/// How the product term is post-processed.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SortnetWrapper {
    /// Use the raw elementwise product.
    Identity = 0,
    /// Use `sqrt(product + eps)`; `wrapper_eps` must be positive.
    SqrtEps = 1,
}

/// Whether the product's inputs are relu-gated first.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SortnetGate {
    /// Feed both inputs to the product unchanged.
    None = 0,
    /// Clamp both inputs at zero before multiplying (required for the sqrt
    /// wrapper on signed data).
    ReluBoth = 1,
}

/// Which fusion terms combine the two responses, mirroring the library's
/// fusion spec. The active terms are summed: `sum` adds `f1 + f2`, `max`
/// adds `max(f1, f2)`, `prod` adds the (optionally wrapped and gated)
/// elementwise product. At least one term must be enabled.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SortnetFusionSpec {
    pub use_sum: bool,
    pub use_max: bool,
    pub use_prod: bool,
    pub wrapper: SortnetWrapper,
    /// Epsilon inside the sqrt wrapper; read only when `wrapper` is SqrtEps.
    pub wrapper_eps: f64,
    pub gate: SortnetGate,
}

/// Opaque tensor handle (shape plus f64 data, row-major).
pub struct SortnetTensor {
    inner: Tensor,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: SortnetStatus, msg: &str) -> SortnetStatus {
    set_last_error(msg);
    status
}

fn fail_with(e: Error) -> SortnetStatus {
    let status = match &e {
        Error::ShapeMismatch { .. } | Error::DataLength { .. } => SortnetStatus::ShapeMismatch,
        Error::NegativeInput { .. }
        | Error::NonFiniteLoss { .. }
        | Error::NonFiniteGradient { .. }
        | Error::DivergedLoss { .. } => SortnetStatus::Numeric,
        _ => SortnetStatus::InvalidArgument,
    };
    fail(status, &e.to_string())
}

/// Runs an FFI body, converting panics into `SORTNET_STATUS_INTERNAL`.
fn guarded<F: FnOnce() -> SortnetStatus>(f: F) -> SortnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(SortnetStatus::Internal, "internal panic"),
    }
}

fn spec_from_c(spec: &SortnetFusionSpec) -> Result<FusionSpec, SortnetStatus> {
    let wrapper = match spec.wrapper {
        SortnetWrapper::Identity => ProdWrapper::Identity,
        SortnetWrapper::SqrtEps => {
            if !(spec.wrapper_eps > 0.0) || !spec.wrapper_eps.is_finite() {
                return Err(fail(
                    SortnetStatus::InvalidArgument,
                    "wrapper_eps must be positive and finite for the sqrt wrapper",
                ));
            }
            ProdWrapper::SqrtEps(spec.wrapper_eps)
        }
    };
    let gate = match spec.gate {
        SortnetGate::None => ProdInputGate::None,
        SortnetGate::ReluBoth => ProdInputGate::ReluBoth,
    };
    Ok(FusionSpec::new(
        spec.use_sum,
        spec.use_max,
        spec.use_prod,
        wrapper,
        gate,
    ))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sortnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Description of the last failure on this thread (empty string if none).
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sortnet_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a tensor from `rank` dimensions and `data_len` row-major values;
/// `data_len` must equal the product of the dimensions. A rank of 0 makes a
/// scalar (pass `data_len` 1); `shape` may be NULL only when `rank` is 0.
/// On success writes a handle the caller must release with
/// `sortnet_tensor_free`.
///
/// # Safety
/// `shape` must point to `rank` readable values, `data` to `data_len`.
#[no_mangle]
pub unsafe extern "C" fn sortnet_tensor_new(
    rank: usize,
    shape: *const usize,
    data: *const f64,
    data_len: usize,
    out: *mut *mut SortnetTensor,
) -> SortnetStatus {
    guarded(|| {
        if out.is_null() || data.is_null() || (shape.is_null() && rank > 0) {
            return fail(SortnetStatus::NullPointer, "tensor_new: NULL argument");
        }
        let shape = if rank == 0 {
            Vec::new()
        } else {
            unsafe { std::slice::from_raw_parts(shape, rank) }.to_vec()
        };
        let data = unsafe { std::slice::from_raw_parts(data, data_len) }.to_vec();
        match Tensor::new(shape, data) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(SortnetTensor { inner })) };
                SortnetStatus::Ok
            }
            Err(e) => fail_with(e),
        }
    })
}

/// Releases a tensor handle. NULL is a no-op.
///
/// # Safety
/// `t` must be a handle from this library that has not been freed already.
#[no_mangle]
pub unsafe extern "C" fn sortnet_tensor_free(t: *mut SortnetTensor) {
    if !t.is_null() {
        drop(unsafe { Box::from_raw(t) });
    }
}

/// Writes the tensor's rank.
///
/// # Safety
/// `t` must be a live handle; `out_rank` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sortnet_tensor_rank(
    t: *const SortnetTensor,
    out_rank: *mut usize,
) -> SortnetStatus {
    guarded(|| {
        if t.is_null() || out_rank.is_null() {
            return fail(SortnetStatus::NullPointer, "tensor_rank: NULL argument");
        }
        unsafe { *out_rank = (*t).inner.shape().len() };
        SortnetStatus::Ok
    })
}

/// Copies the tensor's dimensions into `out_shape` (`capacity` must be at
/// least the rank).
///
/// # Safety
/// `t` must be a live handle; `out_shape` must have room for `capacity`.
#[no_mangle]
pub unsafe extern "C" fn sortnet_tensor_shape(
    t: *const SortnetTensor,
    out_shape: *mut usize,
    capacity: usize,
) -> SortnetStatus {
    guarded(|| {
        if t.is_null() || out_shape.is_null() {
            return fail(SortnetStatus::NullPointer, "tensor_shape: NULL argument");
        }
        let shape = unsafe { (*t).inner.shape() };
        if capacity < shape.len() {
            return fail(
                SortnetStatus::InvalidArgument,
                "tensor_shape: capacity below rank",
            );
        }
        for (i, &d) in shape.iter().enumerate() {
            unsafe { *out_shape.add(i) = d };
        }
        SortnetStatus::Ok
    })
}

/// Writes the element count.
///
/// # Safety
/// `t` must be a live handle; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sortnet_tensor_len(
    t: *const SortnetTensor,
    out_len: *mut usize,
) -> SortnetStatus {
    guarded(|| {
        if t.is_null() || out_len.is_null() {
            return fail(SortnetStatus::NullPointer, "tensor_len: NULL argument");
        }
        unsafe { *out_len = (*t).inner.len() };
        SortnetStatus::Ok
    })
}

/// Copies the row-major element values into `out_data` (`capacity` must be
/// at least the element count).
///
/// # Safety
/// `t` must be a live handle; `out_data` must have room for `capacity`.
#[no_mangle]
pub unsafe extern "C" fn sortnet_tensor_copy_data(
    t: *const SortnetTensor,
    out_data: *mut f64,
    capacity: usize,
) -> SortnetStatus {
    guarded(|| {
        if t.is_null() || out_data.is_null() {
            return fail(SortnetStatus::NullPointer, "tensor_copy_data: NULL argument");
        }
        let data = unsafe { (*t).inner.data() };
        if capacity < data.len() {
            return fail(
                SortnetStatus::InvalidArgument,
                "tensor_copy_data: capacity below element count",
            );
        }
        unsafe { std::ptr::copy_nonoverlapping(data.as_ptr(), out_data, data.len()) };
        SortnetStatus::Ok
    })
}

fn run_fuse(
    f1: &Tensor,
    f2: &Tensor,
    spec: &FusionSpec,
) -> Result<Tensor, Error> {
    let mut tape = Tape::new();
    let a = tape.input(f1.clone());
    let b = tape.input(f2.clone());
    let out = sort_fuse(&mut tape, a, b, spec)?;
    Ok(tape.value(out).clone())
}

/// Fuses two equal-shape responses with the given spec and writes a new
/// tensor handle holding the combined response.
///
/// # Safety
/// `f1`, `f2` must be live handles; `spec` and `out` must be readable and
/// writable respectively.
#[no_mangle]
pub unsafe extern "C" fn sortnet_fuse(
    f1: *const SortnetTensor,
    f2: *const SortnetTensor,
    spec: *const SortnetFusionSpec,
    out: *mut *mut SortnetTensor,
) -> SortnetStatus {
    guarded(|| {
        if f1.is_null() || f2.is_null() || spec.is_null() || out.is_null() {
            return fail(SortnetStatus::NullPointer, "fuse: NULL argument");
        }
        let spec = match spec_from_c(unsafe { &*spec }) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match run_fuse(unsafe { &(*f1).inner }, unsafe { &(*f2).inner }, &spec) {
            Ok(t) => {
                unsafe { *out = Box::into_raw(Box::new(SortnetTensor { inner: t })) };
                SortnetStatus::Ok
            }
            Err(e) => fail_with(e),
        }
    })
}

/// Reverse-mode gradients of the fused response contracted against an
/// upstream sensitivity: for loss `L = sum(upstream * fuse(f1, f2))`, writes
/// `dL/df1` and `dL/df2` as new tensor handles. With the plain sum+product
/// spec this realizes the cross-branch law `dL/df1 = upstream * (1 + f2)`.
///
/// # Safety
/// All tensor arguments must be live handles of equal shape; both out
/// pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sortnet_fuse_backward(
    f1: *const SortnetTensor,
    f2: *const SortnetTensor,
    spec: *const SortnetFusionSpec,
    upstream: *const SortnetTensor,
    out_grad_f1: *mut *mut SortnetTensor,
    out_grad_f2: *mut *mut SortnetTensor,
) -> SortnetStatus {
    guarded(|| {
        if f1.is_null()
            || f2.is_null()
            || spec.is_null()
            || upstream.is_null()
            || out_grad_f1.is_null()
            || out_grad_f2.is_null()
        {
            return fail(SortnetStatus::NullPointer, "fuse_backward: NULL argument");
        }
        let spec = match spec_from_c(unsafe { &*spec }) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let body = || -> Result<(Tensor, Tensor), Error> {
            let mut tape = Tape::new();
            let a = tape.input(unsafe { (*f1).inner.clone() });
            let b = tape.input(unsafe { (*f2).inner.clone() });
            let u = tape.input(unsafe { (*upstream).inner.clone() });
            let fused = sort_fuse(&mut tape, a, b, &spec)?;
            let weighted = tape.ew_mul(u, fused)?;
            let loss = tape.sum(weighted);
            tape.backward(loss)?;
            Ok((tape.grad_or_zeros(a), tape.grad_or_zeros(b)))
        };
        match body() {
            Ok((ga, gb)) => {
                unsafe {
                    *out_grad_f1 = Box::into_raw(Box::new(SortnetTensor { inner: ga }));
                    *out_grad_f2 = Box::into_raw(Box::new(SortnetTensor { inner: gb }));
                }
                SortnetStatus::Ok
            }
            Err(e) => fail_with(e),
        }
    })
}

/// Residual merge `x + fx + sqrt(relu(x) * relu(fx) + eps)` as a new tensor
/// handle; `eps` must be positive.
///
/// # Safety
/// `x`, `fx` must be live handles of equal shape; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sortnet_residual_fuse(
    x: *const SortnetTensor,
    fx: *const SortnetTensor,
    eps: f64,
    out: *mut *mut SortnetTensor,
) -> SortnetStatus {
    guarded(|| {
        if x.is_null() || fx.is_null() || out.is_null() {
            return fail(SortnetStatus::NullPointer, "residual_fuse: NULL argument");
        }
        if !(eps > 0.0) || !eps.is_finite() {
            return fail(
                SortnetStatus::InvalidArgument,
                "residual_fuse: eps must be positive and finite",
            );
        }
        let spec = FusionSpec::residual_sort(eps);
        match run_fuse(unsafe { &(*x).inner }, unsafe { &(*fx).inner }, &spec) {
            Ok(t) => {
                unsafe { *out = Box::into_raw(Box::new(SortnetTensor { inner: t })) };
                SortnetStatus::Ok
            }
            Err(e) => fail_with(e),
        }
    })
}

/// Scalar fusion convenience: writes `fuse(f1, f2)` for 0-dimensional inputs.
///
/// # Safety
/// `spec` must be readable; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sortnet_fuse_scalars(
    f1: f64,
    f2: f64,
    spec: *const SortnetFusionSpec,
    out: *mut f64,
) -> SortnetStatus {
    guarded(|| {
        if spec.is_null() || out.is_null() {
            return fail(SortnetStatus::NullPointer, "fuse_scalars: NULL argument");
        }
        let spec = match spec_from_c(unsafe { &*spec }) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match fuse_scalars(f1, f2, &spec) {
            Ok(v) => {
                unsafe { *out = v };
                SortnetStatus::Ok
            }
            Err(e) => fail_with(e),
        }
    })
}

/// Kernel size of each conv in a two-conv branch cascade replacing one
/// k-by-k conv: `floor((k + 1) / 2)`. `k` must be odd and at least 3.
///
/// # Safety
/// `out_k` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sortnet_shrink_kernel(k: usize, out_k: *mut usize) -> SortnetStatus {
    guarded(|| {
        if out_k.is_null() {
            return fail(SortnetStatus::NullPointer, "shrink_kernel: NULL argument");
        }
        match shrink_kernel(k) {
            Ok(v) => {
                unsafe { *out_k = v };
                SortnetStatus::Ok
            }
            Err(e) => fail_with(e),
        }
    })
}

/// Which response surface `sortnet_surface_value` samples.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SortnetSurfaceKind {
    /// `relu(x) + relu(y)` — the first-order response.
    FirstOrder = 0,
    /// `relu(x) + relu(y) + relu(x)*relu(y)` — with the second-order term.
    SecondOrder = 1,
}

/// Scalar response surface value at `(x, y)`; total and panic-free.
#[no_mangle]
pub extern "C" fn sortnet_surface_value(kind: SortnetSurfaceKind, x: f64, y: f64) -> f64 {
    let kind = match kind {
        SortnetSurfaceKind::FirstOrder => SurfaceKind::FirstOrder,
        SortnetSurfaceKind::SecondOrder => SurfaceKind::SecondOrder,
    };
    surface_value(kind, x, y)
}
