//! Online alternating solver, its exact-minimization reference and the
//! fixed-window baseline.
//!
//! The state keeps only `P x P` / `P` accumulators for the field problem plus
//! per-batch records (coefficients and the window rows they induce), which are
//! needed for cost auditing and window-error evaluation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{derived_rng, RngPurpose};
use crate::error::{Error, Result};
use crate::kernel::{
    ak_matrix, build_kernel_matrix, materialize_aalpha, AlphaVector, FeatureSet, KernelConfig, KernelMatrix,
};
use crate::optimize::{
    fb_step_f, pg_step_alpha, solve_ball_ridge, AlphaObjective, BallConstraint, ProductConstraint, SlfObjective,
};
use crate::propagation::WeightMatrix;
use crate::scenario::{GridSpec, LinkId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lam1: f64,
    pub lam2: f64,
    pub lam3: f64,
    pub eps: f64,
    pub radius: f64,
    pub inner_iters: usize,
    pub inner_tol: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lam1: 4e-4,
            lam2: 1e-5,
            lam3: 2.2e-4,
            eps: 0.05,
            radius: 0.0,
            inner_iters: 5,
            inner_tol: 1e-6,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lam1", self.lam1), ("lam2", self.lam2), ("lam3", self.lam3)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(name, "must be a nonnegative real"));
            }
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::param("eps", "must lie in (0, 1)"));
        }
        if !(self.radius >= 0.0) || !self.radius.is_finite() {
            return Err(Error::param("radius", "must be a nonnegative real"));
        }
        if self.inner_iters == 0 {
            return Err(Error::param("inner_iters", "must be at least 1"));
        }
        if !(self.inner_tol >= 0.0) {
            return Err(Error::param("inner_tol", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Regularization of the reference-coefficient solve, relative to `trace(K)/MP`.
pub const REFERENCE_REG: f64 = 1e-8;
const REFINEMENT_PASSES: usize = 4;
const CG_TOL: f64 = 1e-10;

/// Tolerance of the exact subproblem solves (relative iterate change).
pub const EXACT_TOL: f64 = 1e-10;
const EXACT_MAX_ITERS: usize = 1_000_000;

/// One measurement batch with everything the steps need.
#[derive(Debug, Clone)]
pub struct BatchProblem {
    pub s_hat: DVector<f64>,
    pub kernel: KernelMatrix,
    pub constraint: ProductConstraint,
    pub features: FeatureSet,
    pub link_ids: Vec<LinkId>,
    /// Physical-model window rows, `M x P`.
    pub model_rows: DMatrix<f64>,
}

impl BatchProblem {
    /// Assembles a batch: features, kernel matrix and the constraint set
    /// centered on the kernel representation of the model rows.
    pub fn new(
        grid: &GridSpec,
        s_hat: DVector<f64>,
        model_w: &WeightMatrix,
        kernel_cfg: &KernelConfig,
        radius: f64,
    ) -> Result<Self> {
        let m = model_w.rows();
        if s_hat.len() != m {
            return Err(Error::dim("batch measurements", m, s_hat.len()));
        }
        if m == 0 {
            return Err(Error::EmptySource("batch"));
        }
        if model_w.cols() != grid.pixel_count() {
            return Err(Error::dim("model rows", grid.pixel_count(), model_w.cols()));
        }
        let features = FeatureSet::build(grid, &model_w.link_ids);
        let kernel = build_kernel_matrix(&features, kernel_cfg);
        let constraint = build_constraint(&model_w.values, &kernel, radius)?;
        Ok(BatchProblem {
            s_hat,
            kernel,
            constraint,
            features,
            link_ids: model_w.link_ids.clone(),
            model_rows: model_w.values.clone(),
        })
    }

    pub fn links(&self) -> usize {
        self.model_rows.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.model_rows.ncols()
    }

    fn check(&self, state: &SolverState) -> Result<()> {
        let (m, p) = (self.links(), self.pixels());
        if p != state.f.len() {
            return Err(Error::dim("batch pixels", state.f.len(), p));
        }
        if self.s_hat.len() != m {
            return Err(Error::dim("batch measurements", m, self.s_hat.len()));
        }
        if self.kernel.dim() != m * p {
            return Err(Error::dim("kernel size", m * p, self.kernel.dim()));
        }
        if self.constraint.balls.len() != m || self.constraint.block_len() != p {
            return Err(Error::dim(
                "constraint size",
                m * p,
                self.constraint.balls.len() * self.constraint.block_len(),
            ));
        }
        Ok(())
    }
}

/// Solves `(K^2 + reg I) x = rhs` by conjugate gradients.
fn cg_normal(k: &KernelMatrix, rhs: &DVector<f64>, reg: f64) -> Result<DVector<f64>> {
    let n = rhs.len();
    let rhs_norm = rhs.norm();
    let mut x = DVector::zeros(n);
    if rhs_norm == 0.0 {
        return Ok(x);
    }
    let apply = |v: &DVector<f64>| -> Result<DVector<f64>> {
        let kv = k.mul_vec(v)?;
        Ok(k.mul_vec(&kv)? + v * reg)
    };
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    for _ in 0..(2 * n + 100) {
        if rr.sqrt() <= CG_TOL * rhs_norm {
            return Ok(x);
        }
        let ap = apply(&p)?;
        let denom = p.dot(&ap);
        if !(denom > 0.0) {
            break;
        }
        let step = rr / denom;
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &ap, 1.0);
        let rr_next = r.norm_squared();
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
    }
    if rr.sqrt() <= CG_TOL * rhs_norm {
        Ok(x)
    } else {
        Err(Error::IllConditioned {
            residual: rr.sqrt() / rhs_norm,
        })
    }
}

/// Coefficients whose kernel expansion reproduces the stacked model rows:
/// a regularized least-squares solve refined by iterated Tikhonov passes.
pub fn reference_coefficients(k: &KernelMatrix, model_rows: &DMatrix<f64>) -> Result<AlphaVector> {
    let (m, p) = (model_rows.nrows(), model_rows.ncols());
    if k.dim() != m * p {
        return Err(Error::dim("kernel size", m * p, k.dim()));
    }
    let w = DVector::from_fn(m * p, |q, _| model_rows[(q / p, q % p)]);
    let reg = REFERENCE_REG * k.trace() / (m * p) as f64;
    let w_norm = w.norm();
    let mut alpha = DVector::zeros(m * p);
    for _ in 0..REFINEMENT_PASSES {
        let resid = &w - k.mul_vec(&alpha)?;
        if resid.norm() <= f64::EPSILON * w_norm {
            break;
        }
        alpha += cg_normal(k, &k.mul_vec(&resid)?, reg)?;
    }
    AlphaVector::new(alpha, p)
}

/// Product of balls of radius `r` centered on the blocks of the reference
/// coefficients.
pub fn build_constraint(model_rows: &DMatrix<f64>, k: &KernelMatrix, radius: f64) -> Result<ProductConstraint> {
    let alpha_ref = reference_coefficients(k, model_rows)?;
    let balls = (0..alpha_ref.num_blocks())
        .map(|j| BallConstraint::new(DVector::from_column_slice(alpha_ref.block(j)), radius))
        .collect::<Result<Vec<_>>>()?;
    ProductConstraint::new(balls)
}

/// What a processed batch leaves behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub link_ids: Vec<LinkId>,
    pub s_hat: DVector<f64>,
    pub alpha: AlphaVector,
    /// Window rows actually committed, `M x P`.
    pub rows: DMatrix<f64>,
}

/// Counts of sub-objective increases observed across single steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DescentAudit {
    pub f_steps: u64,
    pub f_violations: u64,
    pub alpha_steps: u64,
    pub alpha_violations: u64,
    /// Largest relative increase seen.
    pub worst_increase: f64,
    /// Exact solves that hit the iteration cap.
    pub unconverged: u64,
}

pub const AUDIT_TOL: f64 = 1e-12;

impl DescentAudit {
    fn record(&mut self, before: f64, after: f64, is_f: bool) {
        let scale = before.abs().max(1.0);
        let rel = (after - before) / scale;
        let bad = rel > AUDIT_TOL;
        if is_f {
            self.f_steps += 1;
            self.f_violations += u64::from(bad);
        } else {
            self.alpha_steps += 1;
            self.alpha_violations += u64::from(bad);
        }
        if rel > self.worst_increase {
            self.worst_increase = rel;
        }
    }

    pub fn violations(&self) -> u64 {
        self.f_violations + self.alpha_violations
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    pub abar: DMatrix<f64>,
    pub b: DVector<f64>,
    pub f: DVector<f64>,
    pub t: usize,
    /// Sum of squared measurement norms over processed batches.
    pub s_sq: f64,
    /// Sum of squared coefficient norms over processed batches.
    pub alpha_sq: f64,
    pub records: Vec<BatchRecord>,
    pub objective_trace: Vec<f64>,
    pub audit: DescentAudit,
}

impl SolverState {
    pub fn new(pixels: usize) -> Self {
        SolverState {
            abar: DMatrix::zeros(pixels, pixels),
            b: DVector::zeros(pixels),
            f: DVector::zeros(pixels),
            t: 0,
            s_sq: 0.0,
            alpha_sq: 0.0,
            records: Vec::new(),
            objective_trace: Vec::new(),
            audit: DescentAudit::default(),
        }
    }

    pub fn pixels(&self) -> usize {
        self.f.len()
    }

    pub fn alphas(&self) -> impl Iterator<Item = &AlphaVector> {
        self.records.iter().map(|r| &r.alpha)
    }

    fn commit(
        &mut self,
        batch: &BatchProblem,
        alpha: AlphaVector,
        rows: DMatrix<f64>,
        f: DVector<f64>,
        hp: &Hyperparams,
    ) -> Result<()> {
        self.abar += rows.tr_mul(&rows);
        self.b += rows.tr_mul(&batch.s_hat);
        self.s_sq += batch.s_hat.norm_squared();
        self.alpha_sq += alpha.values.norm_squared();
        self.t += 1;
        self.f = f;
        self.records.push(BatchRecord {
            link_ids: batch.link_ids.clone(),
            s_hat: batch.s_hat.clone(),
            alpha,
            rows,
        });
        let cost = surrogate_cost(self, &self.f, hp)?;
        self.objective_trace.push(cost);
        Ok(())
    }
}

/// Field objective including a batch that is not committed yet.
fn provisional<'a>(
    t: usize,
    abar: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    s_sq: f64,
    hp: &Hyperparams,
) -> SlfObjective<'a> {
    SlfObjective {
        abar,
        b,
        s_sq,
        t: t + 1,
        lam1: hp.lam1,
        lam2: hp.lam2,
    }
}

/// `(1/t) sum_tau [ |s_tau - A_alpha_tau f|^2 / 2 + lam3 |alpha_tau|^2 ] + lam1 |f|_1 + lam2 |f|^2 / 2`,
/// evaluated through the accumulators.
pub fn surrogate_cost(state: &SolverState, f: &DVector<f64>, hp: &Hyperparams) -> Result<f64> {
    if state.t == 0 {
        return Err(Error::NoBatches);
    }
    if f.len() != state.pixels() {
        return Err(Error::dim("surrogate field", state.pixels(), f.len()));
    }
    let obj = SlfObjective {
        abar: &state.abar,
        b: &state.b,
        s_sq: state.s_sq,
        t: state.t,
        lam1: hp.lam1,
        lam2: hp.lam2,
    };
    Ok(obj.value(f) + hp.lam3 * state.alpha_sq / state.t as f64)
}

fn rel_change(old: &DVector<f64>, new: &DVector<f64>) -> f64 {
    let diff = (new - old).norm();
    if diff == 0.0 {
        return 0.0;
    }
    diff / old.norm().max(new.norm())
}

fn ensure_finite(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence(format!("non-finite {what}")))
    }
}

/// Minimizes the coefficient sub-objective over the constraint set by
/// projected gradient until the relative iterate change drops below `tol`.
/// Returns the minimizer, its value and whether the tolerance was met.
pub fn solve_alpha(
    obj: &AlphaObjective<'_>,
    start: AlphaVector,
    eps: f64,
    tol: f64,
) -> Result<(AlphaVector, f64, bool)> {
    let mu = obj.max_step(eps);
    let mut alpha = start;
    for _ in 0..EXACT_MAX_ITERS {
        let next = pg_step_alpha(&alpha, obj, mu, mu)?;
        ensure_finite(&next.values, "coefficients")?;
        let change = rel_change(&alpha.values, &next.values);
        alpha = next;
        if change <= tol {
            let v = obj.value(&alpha);
            return Ok((alpha, v, true));
        }
    }
    let v = obj.value(&alpha);
    Ok((alpha, v, false))
}

/// Exact coefficient minimization: the dual Newton solve where it applies,
/// followed by projected-gradient iterations to [`EXACT_TOL`]. With a
/// `warm` point, the better of it and the Newton solution seeds the
/// iterations, so the result never exceeds the warm point's value.
pub fn minimize_alpha(
    obj: &AlphaObjective<'_>,
    warm: Option<AlphaVector>,
    eps: f64,
) -> Result<(AlphaVector, f64, bool)> {
    let exact = solve_ball_ridge(obj, 1e-14);
    let start = match (exact, warm) {
        (Some(e), Some(w)) => {
            if obj.value(&e) <= obj.value(&w) {
                e
            } else {
                w
            }
        }
        (Some(e), None) => e,
        (None, Some(w)) => w,
        (None, None) => obj.constraint.center(),
    };
    solve_alpha(obj, start, eps, EXACT_TOL)
}

/// Minimizes the field objective by forward-backward iterations until the
/// relative iterate change drops below `tol`.
pub fn solve_f(obj: &SlfObjective<'_>, start: DVector<f64>, eps: f64, tol: f64) -> Result<(DVector<f64>, bool)> {
    let gamma = obj.max_step(eps);
    let mut f = start;
    for _ in 0..EXACT_MAX_ITERS {
        let next = fb_step_f(&f, obj, gamma, gamma)?;
        ensure_finite(&next, "field")?;
        let change = rel_change(&f, &next);
        f = next;
        if change <= tol {
            return Ok((f, true));
        }
    }
    Ok((f, false))
}

/// One outer iteration of the online algorithm.
pub fn online_step(state: &mut SolverState, batch: &BatchProblem, hp: &Hyperparams) -> Result<()> {
    hp.validate()?;
    batch.check(state)?;
    let m = batch.links();
    let mut rng = derived_rng(hp.seed, RngPurpose::AlphaInit, state.t + 1);
    let mut alpha = batch.constraint.sample(&mut rng);
    let mut f = state.f.clone();
    let s_sq = state.s_sq + batch.s_hat.norm_squared();
    let mut rows = materialize_aalpha(&alpha, &batch.kernel)?;
    for _ in 0..hp.inner_iters {
        let ak = ak_matrix(&f, &batch.kernel, m)?;
        let a_obj = AlphaObjective {
            ak: &ak,
            s_hat: &batch.s_hat,
            lam3: hp.lam3,
            constraint: &batch.constraint,
        };
        let mu = a_obj.max_step(hp.eps);
        let before = a_obj.value(&alpha);
        let next_alpha = pg_step_alpha(&alpha, &a_obj, mu, mu)?;
        ensure_finite(&next_alpha.values, "coefficients")?;
        state.audit.record(before, a_obj.value(&next_alpha), false);
        alpha = next_alpha;

        rows = materialize_aalpha(&alpha, &batch.kernel)?;
        let abar = &state.abar + rows.tr_mul(&rows);
        let b = &state.b + rows.tr_mul(&batch.s_hat);
        let f_obj = provisional(state.t, &abar, &b, s_sq, hp);
        let gamma = f_obj.max_step(hp.eps);
        let before = f_obj.value(&f);
        let next_f = fb_step_f(&f, &f_obj, gamma, gamma)?;
        ensure_finite(&next_f, "field")?;
        state.audit.record(before, f_obj.value(&next_f), true);
        let change = rel_change(&f, &next_f);
        f = next_f;
        if change < hp.inner_tol {
            break;
        }
    }
    state.commit(batch, alpha, rows, f, hp)
}

/// One outer iteration with the window rows pinned to the physical model;
/// only the field is updated.
pub fn baseline_step(state: &mut SolverState, batch: &BatchProblem, hp: &Hyperparams) -> Result<()> {
    hp.validate()?;
    batch.check(state)?;
    let rows = batch.model_rows.clone();
    let abar = &state.abar + rows.tr_mul(&rows);
    let b = &state.b + rows.tr_mul(&batch.s_hat);
    let s_sq = state.s_sq + batch.s_hat.norm_squared();
    let mut f = state.f.clone();
    {
        let f_obj = provisional(state.t, &abar, &b, s_sq, hp);
        let gamma = f_obj.max_step(hp.eps);
        for _ in 0..hp.inner_iters {
            let before = f_obj.value(&f);
            let next_f = fb_step_f(&f, &f_obj, gamma, gamma)?;
            ensure_finite(&next_f, "field")?;
            state.audit.record(before, f_obj.value(&next_f), true);
            let change = rel_change(&f, &next_f);
            f = next_f;
            if change < hp.inner_tol {
                break;
            }
        }
    }
    let alpha = batch.constraint.center();
    state.commit(batch, alpha, rows, f, hp)
}

/// One outer iteration of the exact alternating reference: the coefficient
/// problem is solved at the previous field, then the field problem is solved
/// on the updated surrogate.
pub fn alt_min_step(state: &mut SolverState, batch: &BatchProblem, hp: &Hyperparams) -> Result<()> {
    hp.validate()?;
    batch.check(state)?;
    let ak = ak_matrix(&state.f, &batch.kernel, batch.links())?;
    let a_obj = AlphaObjective {
        ak: &ak,
        s_hat: &batch.s_hat,
        lam3: hp.lam3,
        constraint: &batch.constraint,
    };
    let (alpha, _, ok) = minimize_alpha(&a_obj, Some(batch.constraint.center()), hp.eps)?;
    state.audit.unconverged += u64::from(!ok);
    let rows = materialize_aalpha(&alpha, &batch.kernel)?;
    let abar = &state.abar + rows.tr_mul(&rows);
    let b = &state.b + rows.tr_mul(&batch.s_hat);
    let s_sq = state.s_sq + batch.s_hat.norm_squared();
    let f_obj = provisional(state.t, &abar, &b, s_sq, hp);
    let (f, ok) = solve_f(&f_obj, state.f.clone(), hp.eps, EXACT_TOL)?;
    state.audit.unconverged += u64::from(!ok);
    state.commit(batch, alpha, rows, f, hp)
}

/// `(1/t) sum_tau min_{alpha in C_tau} k_tau(alpha; f) + lam1 |f|_1 + lam2 |f|^2 / 2`.
///
/// Each inner minimization goes through [`minimize_alpha`]; with `warm` set,
/// batch `tau` also considers the stored coefficients `alpha_tau`.
pub fn empirical_cost(
    batches: &[BatchProblem],
    f: &DVector<f64>,
    hp: &Hyperparams,
    warm: Option<&SolverState>,
) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::NoBatches);
    }
    if let Some(state) = warm {
        if state.records.len() != batches.len() {
            return Err(Error::dim("stored coefficients", batches.len(), state.records.len()));
        }
    }
    let mut total = 0.0;
    for (tau, batch) in batches.iter().enumerate() {
        if batch.pixels() != f.len() {
            return Err(Error::dim("batch pixels", f.len(), batch.pixels()));
        }
        let ak = ak_matrix(f, &batch.kernel, batch.links())?;
        let obj = AlphaObjective {
            ak: &ak,
            s_hat: &batch.s_hat,
            lam3: hp.lam3,
            constraint: &batch.constraint,
        };
        let start = warm.map(|state| state.records[tau].alpha.clone());
        let (_, value, _) = minimize_alpha(&obj, start, hp.eps)?;
        total += value;
    }
    Ok(total / batches.len() as f64 + hp.lam1 * f.lp_norm(1) + 0.5 * hp.lam2 * f.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::apply_aalpha;
    use crate::propagation::{build_weight_matrix, WindowModel};
    use crate::scenario::{link_index, GridSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_batch(rows: DMatrix<f64>, s: DVector<f64>, radius: f64) -> BatchProblem {
        let (m, p) = (rows.nrows(), rows.ncols());
        let kernel = KernelMatrix::identity(m * p);
        let constraint = build_constraint(&rows, &kernel, radius).unwrap();
        let links: Vec<LinkId> = (0..m).map(|n| link_index(1, 2 + n, m + 2).unwrap()).collect();
        let grid = GridSpec::new(m + 2, 1, 1.0, [0.0, 0.0]).unwrap();
        BatchProblem {
            s_hat: s,
            kernel,
            constraint,
            features: FeatureSet::build(&grid, &links),
            link_ids: links,
            model_rows: rows,
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, m: usize, p: usize, radius: f64) -> BatchProblem {
        let rows = DMatrix::from_fn(m, p, |_, _| rng.random::<f64>());
        let s = DVector::from_fn(m, |_, _| 2.0 * rng.random::<f64>());
        identity_batch(rows, s, radius)
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        let bad = Hyperparams {
            eps: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = Hyperparams {
            inner_iters: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = Hyperparams {
            lam2: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn surrogate_examples() {
        let state = SolverState::new(3);
        assert!(matches!(
            surrogate_cost(&state, &DVector::zeros(3), &Hyperparams::default()),
            Err(Error::NoBatches)
        ));

        let hp = Hyperparams {
            lam1: 0.0,
            lam2: 0.0,
            lam3: 0.0,
            ..Default::default()
        };
        let rows = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, 1.0]);
        let f = DVector::from_vec(vec![0.5, 1.0, 0.25]);
        let s = &rows * &f;
        let batch = identity_batch(rows, s.clone(), 0.0);
        let mut state = SolverState::new(3);
        state
            .commit(
                &batch,
                batch.constraint.center(),
                batch.model_rows.clone(),
                f.clone(),
                &hp,
            )
            .unwrap();
        assert!(surrogate_cost(&state, &f, &hp).unwrap().abs() < 1e-14);
        let zero = surrogate_cost(&state, &DVector::zeros(3), &hp).unwrap();
        assert!((zero - 0.5 * s.norm_squared()).abs() < 1e-14);
    }

    #[test]
    fn surrogate_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let hp = Hyperparams {
            lam1: 0.01,
            lam2: 0.02,
            lam3: 0.03,
            radius: 0.2,
            ..Default::default()
        };
        let mut state = SolverState::new(5);
        let mut batches = Vec::new();
        for _ in 0..6 {
            let batch = random_batch(&mut rng, 3, 5, hp.radius);
            online_step(&mut state, &batch, &hp).unwrap();
            batches.push(batch);
        }
        for _ in 0..20 {
            let f = DVector::from_fn(5, |_, _| rng.random::<f64>() * 2.0 - 0.5);
            let mut direct = 0.0;
            for (rec, batch) in state.records.iter().zip(&batches) {
                let pred = apply_aalpha(&rec.alpha, &batch.kernel, &f).unwrap();
                direct += 0.5 * (&batch.s_hat - pred).norm_squared() + hp.lam3 * rec.alpha.values.norm_squared();
            }
            direct = direct / 6.0 + hp.lam1 * f.lp_norm(1) + 0.5 * hp.lam2 * f.norm_squared();
            let acc = surrogate_cost(&state, &f, &hp).unwrap();
            assert!((acc - direct).abs() <= 1e-10 * direct.abs(), "{acc} vs {direct}");
        }
    }

    #[test]
    fn constraint_centers_reproduce_rows() {
        let rows = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let c = build_constraint(&rows, &KernelMatrix::identity(4), 0.0).unwrap();
        assert!((c.center().values - DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0])).amax() < 1e-12);
        assert!(c.balls.iter().all(|b| b.radius == 0.0));

        let grid = GridSpec::new(6, 5, 1.0, [0.5, 0.5]).unwrap();
        let links: Vec<LinkId> = [(1, 30), (3, 17), (6, 25)]
            .iter()
            .map(|&(i, j)| link_index(i, j, 30).unwrap())
            .collect();
        let w = build_weight_matrix(&grid, &WindowModel::default(), &links).unwrap();
        let feats = FeatureSet::build(&grid, &links);
        for sigma in [1e-4, 0.05] {
            let k = build_kernel_matrix(&feats, &KernelConfig::new(sigma).unwrap());
            let alpha = reference_coefficients(&k, &w.values).unwrap();
            let back = materialize_aalpha(&alpha, &k).unwrap();
            assert!((back - &w.values).amax() < 1e-6, "sigma {sigma}");
        }
        // wide kernel: targets inside the range of K are still reproduced
        let k = build_kernel_matrix(&feats, &KernelConfig::new(0.3).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a0 = AlphaVector::new(DVector::from_fn(90, |_, _| rng.random::<f64>()), 30).unwrap();
        let target = materialize_aalpha(&a0, &k).unwrap();
        let alpha = reference_coefficients(&k, &target).unwrap();
        assert!((materialize_aalpha(&alpha, &k).unwrap() - &target).amax() < 1e-6);
    }

    #[test]
    fn online_step_is_deterministic() {
        let hp = Hyperparams {
            radius: 0.3,
            lam1: 0.01,
            ..Default::default()
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut state = SolverState::new(6);
            for _ in 0..8 {
                let b = random_batch(&mut rng, 3, 6, hp.radius);
                online_step(&mut state, &b, &hp).unwrap();
            }
            state
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_radius_online_matches_baseline() {
        let hp = Hyperparams {
            radius: 0.0,
            lam1: 0.01,
            lam2: 0.001,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batches: Vec<_> = (0..30).map(|_| random_batch(&mut rng, 3, 7, 0.0)).collect();
        let mut on = SolverState::new(7);
        let mut base = SolverState::new(7);
        for b in &batches {
            online_step(&mut on, b, &hp).unwrap();
            baseline_step(&mut base, b, &hp).unwrap();
            assert!((&on.f - &base.f).amax() < 1e-8);
        }
        assert_eq!(on.audit.violations(), 0);
        assert_eq!(base.audit.violations(), 0);
    }

    #[test]
    fn accumulators_stay_symmetric_psd() {
        let hp = Hyperparams {
            radius: 0.5,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut state = SolverState::new(6);
        for _ in 0..10 {
            let b = random_batch(&mut rng, 4, 6, hp.radius);
            online_step(&mut state, &b, &hp).unwrap();
            let sym = (&state.abar - state.abar.transpose()).amax();
            assert!(sym <= 1e-12 * state.abar.amax());
            let min = state.abar.clone().symmetric_eigenvalues().min();
            assert!(min >= -1e-10 * state.abar.amax());
        }
    }

    #[test]
    fn alt_min_scalar_closed_form() {
        // one pixel, one link: w is a scalar coefficient with K = [1]
        let (lam2, lam3, r) = (0.1, 0.05, 0.5);
        let hp = Hyperparams {
            lam1: 0.0,
            lam2,
            lam3,
            radius: r,
            ..Default::default()
        };
        let rows = DMatrix::from_element(1, 1, 1.0);
        let s = 3.0;
        let batch = identity_batch(rows, DVector::from_element(1, s), r);
        let mut state = SolverState::new(1);
        state.f = DVector::from_element(1, 2.0);
        alt_min_step(&mut state, &batch, &hp).unwrap();
        // alpha-step: minimize (s - f a)^2/2 + lam3 a^2 over |a - 1| <= r
        let f0 = 2.0;
        let a_free = f0 * s / (f0 * f0 + 2.0 * lam3);
        let a = a_free.clamp(1.0 - r, 1.0 + r);
        // f-step: minimize (s - a f)^2/2 + lam2 f^2/2 with t = 1
        let f = a * s / (a * a + lam2);
        assert!((state.records[0].alpha.values[0] - a).abs() < 1e-10);
        assert!((state.f[0] - f).abs() < 1e-8 * f.abs());
    }

    #[test]
    fn surrogate_dominates_empirical_cost() {
        let hp = Hyperparams {
            lam1: 0.01,
            lam2: 0.05,
            lam3: 0.02,
            radius: 0.3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut state = SolverState::new(5);
        let mut batches = Vec::new();
        for _ in 0..8 {
            let b = random_batch(&mut rng, 2, 5, hp.radius);
            online_step(&mut state, &b, &hp).unwrap();
            batches.push(b);
            let sur = surrogate_cost(&state, &state.f, &hp).unwrap();
            let emp = empirical_cost(&batches, &state.f, &hp, Some(&state)).unwrap();
            assert!(sur >= emp - 1e-9, "{sur} < {emp}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_batch(&mut rng, 2, 4, 0.1);
        let mut state = SolverState::new(5);
        assert!(matches!(
            online_step(&mut state, &b, &Hyperparams::default()),
            Err(Error::Dimension { .. })
        ));
    }
}
