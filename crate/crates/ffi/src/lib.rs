//! C ABI over the velab mixture oracle, trained tokenizers and flow sampler.
//!
//! Every handle is opaque and owned by the caller once returned; release it
//! with the matching `*_free`. Functions return a [`VelabStatus`]; on failure
//! `velab_last_error` describes the most recent error on the calling thread.
//! Point buffers are row-major `n×2` arrays of `double`.
//!
//! No function unwinds across the boundary: panics become
//! [`VelabStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use velab::checkpoint::Checkpoint;
use velab::flow::{self, FlowNetwork, SamplerConfig};
use velab::mixture::{BranchPerturbation, MixtureModel};
use velab::rng::{streams, RngStream};
use velab::tokenizer::TokenizerModel;
use velab::{Error, Matrix};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numerical = 5,
    Panic = 6,
}

/// A Gaussian mixture with a closed-form density.
pub struct VelabMixture(MixtureModel);

/// A trained tokenizer (encoder and decoder).
pub struct VelabTokenizer(TokenizerModel);

/// A trained flow velocity network.
pub struct VelabFlow(FlowNetwork);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    // interior NULs would truncate the message; replace them
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> VelabStatus {
    match e {
        Error::Io { .. } => VelabStatus::Io,
        Error::Format { .. } | Error::Json(_) => VelabStatus::Format,
        Error::Numerical(_) | Error::NonFiniteGradient { .. } | Error::Diverged { .. } => {
            VelabStatus::Numerical
        }
        _ => VelabStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic for `velab_last_error`.
fn guard(f: impl FnOnce() -> Result<(), (VelabStatus, String)>) -> VelabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VelabStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            VelabStatus::Panic
        }
    }
}

fn lib(e: Error) -> (VelabStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (VelabStatus, String) {
    (VelabStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (VelabStatus, String) {
    (VelabStatus::InvalidArgument, msg.into())
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, (VelabStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn points_in<'a>(xy: *const f64, n: usize) -> Result<&'a [f64], (VelabStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if xy.is_null() {
        return Err(null("input buffer"));
    }
    let len = n.checked_mul(2).ok_or_else(|| invalid("n too large"))?;
    Ok(std::slice::from_raw_parts(xy, len))
}

unsafe fn buffer_out<'a>(
    out: *mut f64,
    len: usize,
) -> Result<&'a mut [f64], (VelabStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if out.is_null() {
        return Err(null("output buffer"));
    }
    Ok(std::slice::from_raw_parts_mut(out, len))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), (VelabStatus, String)> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, (VelabStatus, String)> {
    Checkpoint::load(path).map_err(lib)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn velab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn velab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds the fractal mixture with default branch perturbation.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn velab_mixture_fractal(
    depth: u32,
    segs_per_branch: u32,
    seed: u64,
    out: *mut *mut VelabMixture,
) -> VelabStatus {
    guard(|| {
        let m = MixtureModel::fractal(depth, segs_per_branch, seed, BranchPerturbation::default())
            .map_err(lib)?;
        store(out, VelabMixture(m))
    })
}

/// Loads a mixture written by `velab build-data`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn velab_mixture_load(
    path: *const c_char,
    out: *mut *mut VelabMixture,
) -> VelabStatus {
    guard(|| {
        let m = MixtureModel::load(path_arg(path)?).map_err(lib)?;
        store(out, VelabMixture(m))
    })
}

/// # Safety
/// `m` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn velab_mixture_free(m: *mut VelabMixture) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of components, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn velab_mixture_len(m: *const VelabMixture) -> usize {
    m.as_ref().map_or(0, |m| m.0.len())
}

/// Draws `n` points into `out_xy` (capacity `2n`).
///
/// # Safety
/// `m` must be a live handle and `out_xy` must hold `2n` doubles.
#[no_mangle]
pub unsafe extern "C" fn velab_mixture_sample(
    m: *const VelabMixture,
    n: usize,
    seed: u64,
    out_xy: *mut f64,
) -> VelabStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("mixture"))?;
        let out = buffer_out(
            out_xy,
            n.checked_mul(2).ok_or_else(|| invalid("n too large"))?,
        )?;
        let mut rng = RngStream::new(seed, streams::DATA);
        m.0.sampler().fill(out, &mut rng);
        Ok(())
    })
}

/// Log-density of the mixture convolved with N(0, noise_sigma² I) at `n` points.
///
/// # Safety
/// `m` must be a live handle, `xy` must hold `2n` doubles, `out` must hold `n`.
#[no_mangle]
pub unsafe extern "C" fn velab_mixture_log_density(
    m: *const VelabMixture,
    noise_sigma: f64,
    xy: *const f64,
    n: usize,
    out: *mut f64,
) -> VelabStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("mixture"))?;
        let pts = points_in(xy, n)?;
        let out = buffer_out(out, n)?;
        let noisy = m.0.at_noise(noise_sigma).map_err(lib)?;
        for (o, p) in out.iter_mut().zip(pts.chunks_exact(2)) {
            *o = noisy.log_density([p[0], p[1]]);
        }
        Ok(())
    })
}

/// Score (gradient of the log-density) of the noised mixture at `n` points.
///
/// # Safety
/// `m` must be a live handle, `xy` and `out_xy` must hold `2n` doubles.
#[no_mangle]
pub unsafe extern "C" fn velab_mixture_score(
    m: *const VelabMixture,
    noise_sigma: f64,
    xy: *const f64,
    n: usize,
    out_xy: *mut f64,
) -> VelabStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("mixture"))?;
        let pts = points_in(xy, n)?;
        let out = buffer_out(out_xy, 2 * n)?;
        let noisy = m.0.at_noise(noise_sigma).map_err(lib)?;
        for (o, p) in out.chunks_exact_mut(2).zip(pts.chunks_exact(2)) {
            o.copy_from_slice(&noisy.score([p[0], p[1]]));
        }
        Ok(())
    })
}

/// Loads a tokenizer checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn velab_tokenizer_load(
    path: *const c_char,
    out: *mut *mut VelabTokenizer,
) -> VelabStatus {
    guard(|| {
        let ck = load_checkpoint(path_arg(path)?)?;
        let model = TokenizerModel::from_checkpoint(&ck).map_err(lib)?;
        store(out, VelabTokenizer(model))
    })
}

/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn velab_tokenizer_free(t: *mut VelabTokenizer) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Encodes `n` points into posterior means and clamped log-variances.
///
/// # Safety
/// `t` must be a live handle; `xy`, `out_mu` and `out_log_var` must hold `2n` doubles.
#[no_mangle]
pub unsafe extern "C" fn velab_tokenizer_encode(
    t: *const VelabTokenizer,
    xy: *const f64,
    n: usize,
    out_mu: *mut f64,
    out_log_var: *mut f64,
) -> VelabStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("tokenizer"))?;
        let x = Matrix::from_vec(n, 2, points_in(xy, n)?.to_vec()).map_err(lib)?;
        let mu_out = buffer_out(out_mu, 2 * n)?;
        let lv_out = buffer_out(out_log_var, 2 * n)?;
        if n == 0 {
            return Ok(());
        }
        let enc = t.0.encode(&x).map_err(lib)?;
        mu_out.copy_from_slice(enc.mu.as_slice());
        lv_out.copy_from_slice(enc.log_var.as_slice());
        Ok(())
    })
}

/// Decodes `n` latents.
///
/// # Safety
/// `t` must be a live handle; `z` and `out_xy` must hold `2n` doubles.
#[no_mangle]
pub unsafe extern "C" fn velab_tokenizer_decode(
    t: *const VelabTokenizer,
    z: *const f64,
    n: usize,
    out_xy: *mut f64,
) -> VelabStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("tokenizer"))?;
        let zm = Matrix::from_vec(n, 2, points_in(z, n)?.to_vec()).map_err(lib)?;
        let out = buffer_out(out_xy, 2 * n)?;
        if n == 0 {
            return Ok(());
        }
        out.copy_from_slice(t.0.decode(&zm).map_err(lib)?.as_slice());
        Ok(())
    })
}

/// Loads a flow checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn velab_flow_load(
    path: *const c_char,
    out: *mut *mut VelabFlow,
) -> VelabStatus {
    guard(|| {
        let ck = load_checkpoint(path_arg(path)?)?;
        let f = FlowNetwork::from_checkpoint(&ck).map_err(lib)?;
        store(out, VelabFlow(f))
    })
}

/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn velab_flow_free(f: *mut VelabFlow) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Euler-samples `n` latents with `steps` uniform steps from N(0, I) noise,
/// then decodes them with `tokenizer` unless it is null.
///
/// # Safety
/// `f` must be a live handle, `tokenizer` null or live, `out_xy` must hold `2n` doubles.
#[no_mangle]
pub unsafe extern "C" fn velab_flow_sample(
    f: *const VelabFlow,
    tokenizer: *const VelabTokenizer,
    n: usize,
    steps: usize,
    seed: u64,
    out_xy: *mut f64,
) -> VelabStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(|| null("flow"))?;
        let out = buffer_out(
            out_xy,
            n.checked_mul(2).ok_or_else(|| invalid("n too large"))?,
        )?;
        let cfg = SamplerConfig { steps };
        cfg.validate().map_err(lib)?;
        if n == 0 {
            return Ok(());
        }
        let mut rng = RngStream::new(seed, streams::BASE_NOISE);
        let z = flow::euler_sample(&f.0, n, cfg, &mut rng).map_err(lib)?;
        let x = match tokenizer.as_ref() {
            Some(t) => t.0.decode(&z).map_err(lib)?,
            None => z,
        };
        out.copy_from_slice(x.as_slice());
        Ok(())
    })
}
