//! C ABI over `vla-core`.
//!
//! Memories live behind an opaque [`VlaHead`] handle. Every fallible call
//! returns a [`VlaStatus`]; the message of the most recent failure on the
//! calling thread is available through [`vla_last_error`]. Vectors are
//! contiguous `double` arrays of length `d_h`, matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vla_core::diagnostics::jacobian_sigma;
use vla_core::kernels::{sm_update_in_place, HeadConfig, KernelKind, Key, Memory, PenaltyDirection, WriteRecord};
use vla_core::linalg::Matrix;
use vla_core::Error;

/// Result code of every fallible call. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VlaStatus {
    Ok = 0,
    NullPointer = 1,
    DimensionMismatch = 2,
    InvalidArgument = 3,
    NonFinite = 4,
    Degenerate = 5,
    Numerical = 6,
    Unsupported = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VlaKernel {
    Vla = 0,
    Linear = 1,
    DeltaNet = 2,
    Softmax = 3,
}

/// Direction of the rank-one penalty update.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VlaPenaltyDirection {
    UnitKey = 0,
    ScaledKey = 1,
    Projected = 2,
    ProjectedScaled = 3,
    Zero = 4,
}

/// Head configuration. Obtain defaults from [`vla_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VlaConfig {
    pub d_h: usize,
    pub lambda0: f64,
    pub epsilon: f64,
    /// 0 disables the identity refresh.
    pub refresh_period: usize,
    pub refresh_eta: f64,
    pub normalize_alpha: bool,
    /// One of [`VlaPenaltyDirection`].
    pub penalty_direction: u32,
    pub projection_seed: u64,
    pub delta_beta: f64,
}

/// Per-write statistics.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct VlaWriteStats {
    pub residual_norm: f64,
    /// `k̂ᵀ α̂`; 1 for kernels without a penalty.
    pub alignment: f64,
    /// Sherman-Morrison denominator; 1 for kernels without a penalty.
    pub delta: f64,
    pub update_norm: f64,
}

/// Opaque memory handle.
pub struct VlaHead {
    inner: Box<dyn Memory>,
    cfg: HeadConfig,
    kind: KernelKind,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> VlaStatus {
    match err {
        Error::DimensionMismatch { .. } => VlaStatus::DimensionMismatch,
        Error::NonFinite(_) => VlaStatus::NonFinite,
        Error::DegenerateGeometry { .. } => VlaStatus::Degenerate,
        Error::NoConvergence { .. } | Error::IllConditioned { .. } => VlaStatus::Numerical,
        Error::Infeasible(_) => VlaStatus::Unsupported,
        _ => VlaStatus::InvalidArgument,
    }
}

struct Fail(VlaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(VlaStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VlaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VlaStatus::Ok,
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
            VlaStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn stats_of(rec: &WriteRecord) -> VlaWriteStats {
    VlaWriteStats {
        residual_norm: rec.residual_norm(),
        alignment: rec.alignment(),
        delta: rec.delta,
        update_norm: rec.update_norm,
    }
}

unsafe fn head<'a>(h: *const VlaHead) -> Result<&'a VlaHead, Fail> {
    h.as_ref().ok_or_else(|| null("head"))
}

unsafe fn head_mut<'a>(h: *mut VlaHead) -> Result<&'a mut VlaHead, Fail> {
    h.as_mut().ok_or_else(|| null("head"))
}

fn kernel_kind(k: u32) -> Result<KernelKind, Fail> {
    Ok(match k {
        k if k == VlaKernel::Vla as u32 => KernelKind::Vla,
        k if k == VlaKernel::Linear as u32 => KernelKind::Linear,
        k if k == VlaKernel::DeltaNet as u32 => KernelKind::DeltaNet,
        k if k == VlaKernel::Softmax as u32 => KernelKind::Softmax,
        other => return Err(Fail(VlaStatus::InvalidArgument, format!("unknown kernel {other}"))),
    })
}

fn penalty_direction(p: u32) -> Result<PenaltyDirection, Fail> {
    PenaltyDirection::ALL
        .get(p as usize)
        .copied()
        .ok_or_else(|| Fail(VlaStatus::InvalidArgument, format!("unknown penalty direction {p}")))
}

fn penalty_code(p: PenaltyDirection) -> u32 {
    let code = match p {
        PenaltyDirection::UnitKey => VlaPenaltyDirection::UnitKey,
        PenaltyDirection::ScaledKey => VlaPenaltyDirection::ScaledKey,
        PenaltyDirection::Projected => VlaPenaltyDirection::Projected,
        PenaltyDirection::ProjectedScaled => VlaPenaltyDirection::ProjectedScaled,
        PenaltyDirection::Zero => VlaPenaltyDirection::Zero,
    };
    code as u32
}

impl From<HeadConfig> for VlaConfig {
    fn from(c: HeadConfig) -> Self {
        Self {
            d_h: c.d_h,
            lambda0: c.lambda0,
            epsilon: c.epsilon,
            refresh_period: c.refresh_period,
            refresh_eta: c.refresh_eta,
            normalize_alpha: c.normalize_alpha,
            penalty_direction: penalty_code(c.u_mode),
            projection_seed: c.projection_seed,
            delta_beta: c.delta_beta,
        }
    }
}

fn head_config(c: &VlaConfig) -> Result<HeadConfig, Fail> {
    Ok(HeadConfig {
        d_h: c.d_h,
        lambda0: c.lambda0,
        epsilon: c.epsilon,
        refresh_period: c.refresh_period,
        refresh_eta: c.refresh_eta,
        normalize_alpha: c.normalize_alpha,
        u_mode: penalty_direction(c.penalty_direction)?,
        projection_seed: c.projection_seed,
        delta_beta: c.delta_beta,
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vla_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of the calling thread into `buf`,
/// truncating to `len - 1` bytes plus a NUL. Returns the full message length
/// without the NUL, so a caller can size the buffer. `buf` may be null.
///
/// # Safety
/// `buf` must be null or valid for `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn vla_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Fills `out` with the default head configuration.
///
/// # Safety
/// `out` must be null or point to a writable `VlaConfig`.
#[no_mangle]
pub unsafe extern "C" fn vla_config_default(out: *mut VlaConfig) -> VlaStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = HeadConfig::default().into();
        Ok(())
    })
}

/// Creates a memory of kind `kernel`, one of [`VlaKernel`]; a null `cfg`
/// selects the defaults. On success `*out` owns a handle that must be released
/// with [`vla_head_free`]; on failure `*out` is set to null.
///
/// # Safety
/// `cfg` must be null or point to a valid `VlaConfig`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vla_head_new(kernel: u32, cfg: *const VlaConfig, out: *mut *mut VlaHead) -> VlaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg: HeadConfig = match cfg.as_ref() {
            Some(c) => head_config(c)?,
            None => HeadConfig::default(),
        };
        let kind = kernel_kind(kernel)?;
        let inner = kind.build(&cfg)?;
        *out = Box::into_raw(Box::new(VlaHead { inner, cfg, kind }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `h` must be null or a handle from [`vla_head_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vla_head_free(h: *mut VlaHead) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Head dimension, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vla_head_dim(h: *const VlaHead) -> usize {
    h.as_ref().map_or(0, |h| h.cfg.d_h)
}

/// Discards all stored associations.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vla_head_reset(h: *mut VlaHead) -> VlaStatus {
    guard(|| {
        let h = head_mut(h)?;
        h.inner = h.kind.build(&h.cfg)?;
        Ok(())
    })
}

/// Stores `v` under key `k`, both of length `len`. With `feature_key` the key
/// is taken as already feature-mapped. `stats` may be null.
///
/// # Safety
/// `h` must be a live handle; `k` and `v` valid for `len` reads; `stats`
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn vla_head_write(
    h: *mut VlaHead,
    k: *const f64,
    v: *const f64,
    len: usize,
    feature_key: bool,
    stats: *mut VlaWriteStats,
) -> VlaStatus {
    guard(|| {
        let h = head_mut(h)?;
        let (k, v) = (slice(k, len, "k")?, slice(v, len, "v")?);
        let key = if feature_key { Key::Feature(k) } else { Key::Raw(k) };
        let rec = h.inner.write(key, v)?;
        if let Some(s) = stats.as_mut() {
            *s = stats_of(&rec);
        }
        Ok(())
    })
}

/// Reads the memory at query `q` into `out`, both of length `len`.
///
/// # Safety
/// `h` must be a live handle; `q` valid for `len` reads; `out` for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn vla_head_read(
    h: *const VlaHead,
    q: *const f64,
    len: usize,
    feature_query: bool,
    out: *mut f64,
) -> VlaStatus {
    guard(|| {
        let h = head(h)?;
        let q = slice(q, len, "q")?;
        let out = slice_mut(out, len, "out")?;
        let key = if feature_query { Key::Feature(q) } else { Key::Raw(q) };
        out.copy_from_slice(&h.inner.read(key)?);
        Ok(())
    })
}

/// One token: write `(k, v)` then read at `q`, all raw and of length `len`.
///
/// # Safety
/// As for [`vla_head_write`] and [`vla_head_read`].
#[no_mangle]
pub unsafe extern "C" fn vla_head_step(
    h: *mut VlaHead,
    k: *const f64,
    v: *const f64,
    q: *const f64,
    len: usize,
    out: *mut f64,
    stats: *mut VlaWriteStats,
) -> VlaStatus {
    guard(|| {
        let h = head_mut(h)?;
        let (k, v, q) = (slice(k, len, "k")?, slice(v, len, "v")?, slice(q, len, "q")?);
        let out = slice_mut(out, len, "out")?;
        let rec = h.inner.write(Key::Raw(k), v)?;
        out.copy_from_slice(&h.inner.read(Key::Raw(q))?);
        if let Some(s) = stats.as_mut() {
            *s = stats_of(&rec);
        }
        Ok(())
    })
}

/// Copies the `d_h × d_h` recurrent state, row-major (value by key), into
/// `out`. Kernels without a recurrent state report `Unsupported`.
///
/// # Safety
/// `h` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn vla_head_state(h: *const VlaHead, out: *mut f64, len: usize) -> VlaStatus {
    guard(|| {
        let h = head(h)?;
        let s = h
            .inner
            .state()
            .ok_or_else(|| Fail(VlaStatus::Unsupported, format!("{} has no recurrent state", h.kind)))?;
        copy_matrix(s, out, len)
    })
}

/// Copies the penalty inverse `A`, row-major. VLA only.
///
/// # Safety
/// `h` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn vla_head_penalty_inverse(h: *const VlaHead, out: *mut f64, len: usize) -> VlaStatus {
    guard(|| {
        let h = head(h)?;
        let a = h
            .inner
            .penalty_inverse()
            .ok_or_else(|| Fail(VlaStatus::Unsupported, format!("{} has no penalty inverse", h.kind)))?;
        copy_matrix(a, out, len)
    })
}

unsafe fn copy_matrix(m: &Matrix, out: *mut f64, len: usize) -> Result<(), Fail> {
    let src = m.as_slice();
    if len != src.len() {
        return Err(Error::DimensionMismatch { expected: src.len(), found: len }.into());
    }
    slice_mut(out, len, "out")?.copy_from_slice(src);
    Ok(())
}

/// Spectral norm of `I - α̂ k̂ᵀ` for unit vectors with `k̂ᵀ α̂ = c`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vla_jacobian_sigma(c: f64, out: *mut f64) -> VlaStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = jacobian_sigma(c)?;
        Ok(())
    })
}

/// In-place rank-one inverse update `A ← A - (Au)(Au)ᵀ / δ` of the
/// row-major `d × d` matrix `a`, with `δ = max(1 + uᵀAu, epsilon)`. `delta`
/// receives `δ` and may be null.
///
/// # Safety
/// `a` must be valid for `d * d` reads and writes, `u` for `d` reads.
#[no_mangle]
pub unsafe extern "C" fn vla_sm_update(a: *mut f64, d: usize, u: *const f64, epsilon: f64, delta: *mut f64) -> VlaStatus {
    guard(|| {
        let n = d.checked_mul(d).ok_or_else(|| Fail(VlaStatus::InvalidArgument, "d * d overflows".into()))?;
        let a = slice_mut(a, n, "a")?;
        let u = slice(u, d, "u")?;
        let mut m = Matrix::from_row_major(d, d, a.to_vec())?;
        let dl = sm_update_in_place(&mut m, u, epsilon)?;
        a.copy_from_slice(m.as_slice());
        if let Some(out) = delta.as_mut() {
            *out = dl;
        }
        Ok(())
    })
}
