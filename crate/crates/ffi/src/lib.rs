//! C interface to the slf-lab learner.
//!
//! Every function returns an [`SlfStatus`]. On failure a description is kept
//! per thread and can be read with [`slf_last_error_message`]. Learners are
//! opaque handles created by [`slf_learner_new`] and released with
//! [`slf_learner_free`]. Pixel indices are 1-based and row-major, as in the
//! Rust library.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DVector;
use slf_lab::data::{derive_shadowing, MeasurementRecord};
use slf_lab::eval::{nmse, predict_link};
use slf_lab::kernel::KernelConfig;
use slf_lab::propagation::{build_weight_matrix, window_weight, PathLossParams, WindowKind, WindowModel};
use slf_lab::scenario::{link_index, GridSpec};
use slf_lab::solver::{alt_min_step, baseline_step, online_step, BatchProblem, Hyperparams, SolverState};
use slf_lab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InputError = 3,
    NumericalError = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlfWindowKind {
    Normalized = 0,
    InverseArea = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlfAlgorithm {
    Online = 0,
    Baseline = 1,
    AltMin = 2,
}

/// Grid, window and solver settings of a learner.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SlfLearnerConfig {
    pub px: usize,
    pub py: usize,
    pub pixel_size: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub algorithm: SlfAlgorithm,
    pub window: SlfWindowKind,
    pub eta: f64,
    pub nu: f64,
    pub sigma: f64,
    pub lam1: f64,
    pub lam2: f64,
    pub lam3: f64,
    pub eps: f64,
    pub radius: f64,
    pub inner_iters: usize,
    pub inner_tol: f64,
    pub seed: u64,
}

/// Opaque learner handle.
pub struct SlfLearner {
    grid: GridSpec,
    window: WindowModel,
    kernel: KernelConfig,
    hp: Hyperparams,
    algorithm: SlfAlgorithm,
    state: SolverState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: SlfStatus, message: impl Into<String>) -> SlfStatus {
    set_error(message.into());
    status
}

fn from_error(e: Error) -> SlfStatus {
    let status = match e.exit_code() {
        2 => SlfStatus::InvalidArgument,
        4 => SlfStatus::NumericalError,
        _ => SlfStatus::InputError,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), SlfStatus>) -> SlfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SlfStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(SlfStatus::Panic, "internal panic"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, SlfStatus>;
}

impl<T> OrStatus<T> for slf_lab::Result<T> {
    fn or_status(self) -> Result<T, SlfStatus> {
        self.map_err(from_error)
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, SlfStatus> {
    p.as_mut()
        .ok_or_else(|| fail(SlfStatus::NullPointer, format!("{name} is null")))
}

unsafe fn in_slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], SlfStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(SlfStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn window_model(kind: SlfWindowKind, eta: f64, nu: f64) -> slf_lab::Result<WindowModel> {
    let kind = match kind {
        SlfWindowKind::Normalized => WindowKind::NormalizedElliptical,
        SlfWindowKind::InverseArea => WindowKind::InverseAreaElliptical,
    };
    WindowModel::new(kind, eta, nu)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn slf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Triangular index of the link between pixels `i` and `j` (either order).
///
/// # Safety
/// `out` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn slf_link_index(i: usize, j: usize, pixels: usize, out: *mut u64) -> SlfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = link_index(i, j, pixels).or_status()?.m;
        Ok(())
    })
}

/// Window weight for link length `phi1` and pixel detour `phi2`.
///
/// # Safety
/// `out` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn slf_window_weight(
    kind: SlfWindowKind,
    eta: f64,
    nu: f64,
    phi1: f64,
    phi2: f64,
    out: *mut f64,
) -> SlfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let model = window_model(kind, eta, nu).or_status()?;
        *out = window_weight(&model, phi1, phi2).or_status()?;
        Ok(())
    })
}

/// Shadowing (dB) left after removing free-space loss from a measurement.
///
/// # Safety
/// `out` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn slf_derive_shadowing(
    rx_power_dbm: f64,
    distance_m: f64,
    p_tx_dbm: f64,
    pl0: f64,
    d0: f64,
    delta: f64,
    out: *mut f64,
) -> SlfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let params = PathLossParams {
            pl0,
            d0,
            delta,
            noise_std: 0.0,
        };
        params.validate().or_status()?;
        let rec = MeasurementRecord {
            i: 1,
            j: 2,
            distance: distance_m,
            rx_power: Some(rx_power_dbm),
            shadow: None,
        };
        *out = derive_shadowing(&rec, &params, p_tx_dbm).or_status()?;
        Ok(())
    })
}

/// `|estimate - truth|^2 / |truth|^2` over `len` entries.
///
/// # Safety
/// `estimate` and `truth` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn slf_nmse(estimate: *const f64, truth: *const f64, len: usize, out: *mut f64) -> SlfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let e = DVector::from_column_slice(in_slice(estimate, len, "estimate")?);
        let t = DVector::from_column_slice(in_slice(truth, len, "truth")?);
        *out = nmse(&e, &t).or_status()?;
        Ok(())
    })
}

/// Fills `out` with the default settings (a 20x15 grid of 1 m pixels).
///
/// # Safety
/// `out` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn slf_learner_config_default(out: *mut SlfLearnerConfig) -> SlfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let hp = Hyperparams::default();
        let w = WindowModel::default();
        let k = KernelConfig::default();
        *out = SlfLearnerConfig {
            px: 20,
            py: 15,
            pixel_size: 1.0,
            origin_x: 0.5,
            origin_y: 0.5,
            algorithm: SlfAlgorithm::Online,
            window: SlfWindowKind::Normalized,
            eta: w.eta,
            nu: w.nu,
            sigma: k.sigma,
            lam1: hp.lam1,
            lam2: hp.lam2,
            lam3: hp.lam3,
            eps: hp.eps,
            radius: hp.radius,
            inner_iters: hp.inner_iters,
            inner_tol: hp.inner_tol,
            seed: hp.seed,
        };
        Ok(())
    })
}

/// Creates a learner. On success `*out` owns a handle that must be released
/// with `slf_learner_free`.
///
/// # Safety
/// `config` must point to a valid config; `out` to writable memory.
#[no_mangle]
pub unsafe extern "C" fn slf_learner_new(config: *const SlfLearnerConfig, out: *mut *mut SlfLearner) -> SlfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let c = *config
            .as_ref()
            .ok_or_else(|| fail(SlfStatus::NullPointer, "config is null"))?;
        let grid = GridSpec::new(c.px, c.py, c.pixel_size, [c.origin_x, c.origin_y]).or_status()?;
        let hp = Hyperparams {
            lam1: c.lam1,
            lam2: c.lam2,
            lam3: c.lam3,
            eps: c.eps,
            radius: c.radius,
            inner_iters: c.inner_iters,
            inner_tol: c.inner_tol,
            seed: c.seed,
        };
        hp.validate().or_status()?;
        let learner = SlfLearner {
            grid,
            window: window_model(c.window, c.eta, c.nu).or_status()?,
            kernel: KernelConfig::new(c.sigma).or_status()?,
            hp,
            algorithm: c.algorithm,
            state: SolverState::new(grid.pixel_count()),
        };
        *out = Box::into_raw(Box::new(learner));
        Ok(())
    })
}

/// Releases a learner; null is ignored.
///
/// # Safety
/// `learner` must come from `slf_learner_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn slf_learner_free(learner: *mut SlfLearner) {
    if !learner.is_null() {
        drop(Box::from_raw(learner));
    }
}

/// Processes one batch of `len` shadowing measurements on links `(i[k], j[k])`.
///
/// # Safety
/// `learner` must be a live handle; the arrays must hold `len` entries.
#[no_mangle]
pub unsafe extern "C" fn slf_learner_step(
    learner: *mut SlfLearner,
    i: *const usize,
    j: *const usize,
    shadow_db: *const f64,
    len: usize,
) -> SlfStatus {
    guard(|| {
        let l = out_ref(learner, "learner")?;
        if len == 0 {
            return Err(fail(SlfStatus::InvalidArgument, "batch is empty"));
        }
        let (i, j, s) = (
            in_slice(i, len, "i")?,
            in_slice(j, len, "j")?,
            in_slice(shadow_db, len, "shadow_db")?,
        );
        let p = l.grid.pixel_count();
        let links = i
            .iter()
            .zip(j)
            .map(|(&a, &b)| link_index(a, b, p))
            .collect::<slf_lab::Result<Vec<_>>>()
            .or_status()?;
        let w = build_weight_matrix(&l.grid, &l.window, &links).or_status()?;
        let batch =
            BatchProblem::new(&l.grid, DVector::from_column_slice(s), &w, &l.kernel, l.hp.radius).or_status()?;
        let step = match l.algorithm {
            SlfAlgorithm::Online => online_step,
            SlfAlgorithm::Baseline => baseline_step,
            SlfAlgorithm::AltMin => alt_min_step,
        };
        step(&mut l.state, &batch, &l.hp).or_status()
    })
}

/// Number of pixels of the learner's grid.
///
/// # Safety
/// `learner` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn slf_learner_pixels(learner: *const SlfLearner, out: *mut usize) -> SlfStatus {
    guard(|| {
        let l = learner
            .as_ref()
            .ok_or_else(|| fail(SlfStatus::NullPointer, "learner is null"))?;
        *out_ref(out, "out")? = l.grid.pixel_count();
        Ok(())
    })
}

/// Number of batches processed so far.
///
/// # Safety
/// `learner` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn slf_learner_batches(learner: *const SlfLearner, out: *mut usize) -> SlfStatus {
    guard(|| {
        let l = learner
            .as_ref()
            .ok_or_else(|| fail(SlfStatus::NullPointer, "learner is null"))?;
        *out_ref(out, "out")? = l.state.t;
        Ok(())
    })
}

/// Copies the current field estimate into `buf` (`len` must cover all pixels).
///
/// # Safety
/// `learner` must be a live handle; `buf` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn slf_learner_field(learner: *const SlfLearner, buf: *mut f64, len: usize) -> SlfStatus {
    guard(|| {
        let l = learner
            .as_ref()
            .ok_or_else(|| fail(SlfStatus::NullPointer, "learner is null"))?;
        let p = l.state.f.len();
        if len < p {
            return Err(fail(
                SlfStatus::BufferTooSmall,
                format!("buffer holds {len} values, need {p}"),
            ));
        }
        if buf.is_null() {
            return Err(fail(SlfStatus::NullPointer, "buf is null"));
        }
        std::slice::from_raw_parts_mut(buf, p).copy_from_slice(l.state.f.as_slice());
        Ok(())
    })
}

/// Predicted shadowing (dB) between two arbitrary points.
///
/// # Safety
/// `learner` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn slf_learner_predict_shadow(
    learner: *const SlfLearner,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    out: *mut f64,
) -> SlfStatus {
    guard(|| {
        let l = learner
            .as_ref()
            .ok_or_else(|| fail(SlfStatus::NullPointer, "learner is null"))?;
        let out = out_ref(out, "out")?;
        let params = PathLossParams::default();
        let pred = predict_link(&l.state.f, &l.grid, &l.window, &params, [x1, y1], [x2, y2]).or_status()?;
        *out = pred.shadow_db;
        Ok(())
    })
}
