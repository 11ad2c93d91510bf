//! Proximal and projection primitives plus the two single-step updates the
//! solvers alternate over.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::AlphaVector;

/// Entrywise `sign(x) * max(|x| - lam, 0)`; `|x| == lam` maps to zero.
pub fn soft_threshold(x: &DVector<f64>, lam: f64) -> DVector<f64> {
    x.map(|v| {
        if v > lam {
            v - lam
        } else if v < -lam {
            v + lam
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallConstraint {
    pub center: DVector<f64>,
    pub radius: f64,
}

impl BallConstraint {
    pub fn new(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::param("radius", "must be a nonnegative real"));
        }
        if !center.iter().all(|v| v.is_finite()) {
            return Err(Error::param("center", "must be finite"));
        }
        Ok(BallConstraint { center, radius })
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        dist(x, self.center.as_slice()) <= self.radius + tol
    }
}

fn dist(x: &[f64], a: &[f64]) -> f64 {
    x.iter().zip(a).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

fn project_slice(x: &[f64], ball: &BallConstraint) -> Vec<f64> {
    let a = ball.center.as_slice();
    let norm = dist(x, a);
    if norm <= ball.radius {
        return x.to_vec();
    }
    // norm > radius >= 0, so the division is safe
    let scale = ball.radius / norm;
    x.iter().zip(a).map(|(u, c)| scale * (u - c) + c).collect()
}

pub fn project_ball(x: &DVector<f64>, ball: &BallConstraint) -> Result<DVector<f64>> {
    if x.len() != ball.center.len() {
        return Err(Error::dim("ball projection", ball.center.len(), x.len()));
    }
    Ok(DVector::from_vec(project_slice(x.as_slice(), ball)))
}

/// Cartesian product of equally sized balls, one per coefficient block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductConstraint {
    pub balls: Vec<BallConstraint>,
}

impl ProductConstraint {
    pub fn new(balls: Vec<BallConstraint>) -> Result<Self> {
        let Some(first) = balls.first() else {
            return Err(Error::param("constraint", "needs at least one ball"));
        };
        let len = first.center.len();
        if let Some(bad) = balls.iter().find(|b| b.center.len() != len) {
            return Err(Error::dim("constraint block length", len, bad.center.len()));
        }
        Ok(ProductConstraint { balls })
    }

    pub fn block_len(&self) -> usize {
        self.balls[0].center.len()
    }

    pub fn contains(&self, alpha: &AlphaVector, tol: f64) -> bool {
        self.balls
            .iter()
            .enumerate()
            .all(|(j, b)| b.contains(alpha.block(j), tol))
    }

    /// Stacked ball centers.
    pub fn center(&self) -> AlphaVector {
        let values = DVector::from_iterator(
            self.balls.len() * self.block_len(),
            self.balls.iter().flat_map(|b| b.center.iter().copied()),
        );
        AlphaVector {
            values,
            block_len: self.block_len(),
        }
    }

    /// A point drawn uniformly from the product set.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AlphaVector {
        let p = self.block_len();
        let mut values = Vec::with_capacity(self.balls.len() * p);
        for ball in &self.balls {
            let dir: Vec<f64> = (0..p)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let u: f64 = rng.random();
            let rad = ball.radius * u.powf(1.0 / p as f64);
            let scale = if norm > 0.0 { rad / norm } else { 0.0 };
            values.extend(dir.iter().zip(ball.center.iter()).map(|(d, c)| c + scale * d));
        }
        AlphaVector {
            values: DVector::from_vec(values),
            block_len: p,
        }
    }
}

pub fn project_product(alpha: &AlphaVector, c: &ProductConstraint) -> Result<AlphaVector> {
    if alpha.block_len != c.block_len() || alpha.num_blocks() != c.balls.len() {
        return Err(Error::dim(
            "product projection",
            c.balls.len() * c.block_len(),
            alpha.values.len(),
        ));
    }
    let mut values = Vec::with_capacity(alpha.values.len());
    for (j, ball) in c.balls.iter().enumerate() {
        values.extend(project_slice(alpha.block(j), ball));
    }
    Ok(AlphaVector {
        values: DVector::from_vec(values),
        block_len: alpha.block_len,
    })
}

pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
    fn trace(&self) -> f64;
}

impl SymmetricOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self * x
    }

    fn trace(&self) -> f64 {
        self.diagonal().sum()
    }
}

pub const SPECTRAL_TOL: f64 = 1e-9;
pub const SPECTRAL_MAX_ITER: usize = 5000;

/// Largest eigenvalue of a symmetric PSD operator by power iteration.
///
/// Stops once the Rayleigh quotient changes by less than `tol` relative.
/// If `max_iter` is reached first the trace is returned, which bounds the
/// largest eigenvalue from above.
pub fn spectral_norm(op: &dyn SymmetricOperator, tol: f64, max_iter: usize) -> f64 {
    let n = op.dim();
    if n == 0 {
        return 0.0;
    }
    // fixed positive start vector keeps results reproducible
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x = DVector::from_fn(n, |_, _| 0.5 + rng.random::<f64>());
    x /= x.norm();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let y = op.apply(&x);
        let next = x.dot(&y);
        let norm = y.norm();
        if norm == 0.0 || !norm.is_finite() {
            return if norm == 0.0 { 0.0 } else { op.trace() };
        }
        x = y / norm;
        if (next - lambda).abs() <= tol * next.abs() {
            return next.max(0.0);
        }
        lambda = next;
    }
    op.trace()
}

fn check_step(step: f64, bound: f64) -> Result<()> {
    if !(step > 0.0) || step > bound * (1.0 + 1e-12) {
        return Err(Error::StepTooLarge { step, bound });
    }
    Ok(())
}

/// The smooth-plus-l1 surrogate in the field, written through its accumulators:
/// `(1/t)(f'Af/2 - b'f + s2/2) + lam1 |f|_1 + lam2 |f|^2 / 2 + offset`.
#[derive(Debug, Clone, Copy)]
pub struct SlfObjective<'a> {
    pub abar: &'a DMatrix<f64>,
    pub b: &'a DVector<f64>,
    /// Sum of squared measurement norms.
    pub s_sq: f64,
    pub t: usize,
    pub lam1: f64,
    pub lam2: f64,
}

impl SlfObjective<'_> {
    pub fn smooth_value(&self, f: &DVector<f64>) -> f64 {
        let t = self.t as f64;
        let af = self.abar * f;
        (0.5 * f.dot(&af) - self.b.dot(f) + 0.5 * self.s_sq) / t + 0.5 * self.lam2 * f.norm_squared()
    }

    pub fn value(&self, f: &DVector<f64>) -> f64 {
        self.smooth_value(f) + self.lam1 * f.lp_norm(1)
    }

    pub fn gradient(&self, f: &DVector<f64>) -> DVector<f64> {
        let t = self.t as f64;
        (self.abar * f - self.b) / t + f * self.lam2
    }

    pub fn lipschitz(&self) -> f64 {
        spectral_norm(self.abar, SPECTRAL_TOL, SPECTRAL_MAX_ITER) / self.t as f64 + self.lam2
    }

    /// Largest admissible forward-backward step `(1 - eps) / L_g`.
    pub fn max_step(&self, eps: f64) -> f64 {
        (1.0 - eps) / self.lipschitz()
    }
}

/// One forward-backward step on the field.
pub fn fb_step_f(f: &DVector<f64>, obj: &SlfObjective<'_>, gamma: f64, gamma_max: f64) -> Result<DVector<f64>> {
    if obj.t == 0 {
        return Err(Error::NoBatches);
    }
    if f.len() != obj.b.len() || obj.abar.nrows() != f.len() {
        return Err(Error::dim("field step", obj.b.len(), f.len()));
    }
    check_step(gamma, gamma_max)?;
    let forward = f - obj.gradient(f) * gamma;
    Ok(soft_threshold(&forward, gamma * obj.lam1))
}

/// The constrained ridge problem in the coefficients:
/// `|s - AK alpha|^2 / 2 + lam3 |alpha|^2` over the product of balls.
#[derive(Debug, Clone, Copy)]
pub struct AlphaObjective<'a> {
    pub ak: &'a DMatrix<f64>,
    pub s_hat: &'a DVector<f64>,
    pub lam3: f64,
    pub constraint: &'a ProductConstraint,
}

impl AlphaObjective<'_> {
    pub fn value(&self, alpha: &AlphaVector) -> f64 {
        let r = self.ak * &alpha.values - self.s_hat;
        0.5 * r.norm_squared() + self.lam3 * alpha.values.norm_squared()
    }

    pub fn gradient(&self, alpha: &AlphaVector) -> DVector<f64> {
        let r = self.ak * &alpha.values - self.s_hat;
        self.ak.tr_mul(&r) + &alpha.values * (2.0 * self.lam3)
    }

    /// `||AK' AK|| + 2 lam3`, computed on the small `M x M` Gram matrix.
    pub fn lipschitz(&self) -> f64 {
        let gram = self.ak * self.ak.transpose();
        spectral_norm(&gram, SPECTRAL_TOL, SPECTRAL_MAX_ITER) + 2.0 * self.lam3
    }

    pub fn max_step(&self, eps: f64) -> f64 {
        (1.0 - eps) / self.lipschitz()
    }
}

/// One projected-gradient step on the coefficients.
pub fn pg_step_alpha(alpha: &AlphaVector, obj: &AlphaObjective<'_>, mu: f64, mu_max: f64) -> Result<AlphaVector> {
    if alpha.values.len() != obj.ak.ncols() {
        return Err(Error::dim("coefficient step", obj.ak.ncols(), alpha.values.len()));
    }
    if obj.s_hat.len() != obj.ak.nrows() {
        return Err(Error::dim("measurement length", obj.ak.nrows(), obj.s_hat.len()));
    }
    check_step(mu, mu_max)?;
    let moved = AlphaVector {
        values: &alpha.values - obj.gradient(alpha) * mu,
        block_len: alpha.block_len,
    };
    project_product(&moved, obj.constraint)
}

/// Shifted inverse `(diag(d) + U'U)^{-1}` applied through the `M x M`
/// capacitance matrix `I + U diag(d)^{-1} U'`.
struct ShiftedGram<'a> {
    u: &'a DMatrix<f64>,
    d: DVector<f64>,
    cap: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl<'a> ShiftedGram<'a> {
    fn new(u: &'a DMatrix<f64>, d: DVector<f64>) -> Option<Self> {
        let mut ud = u.clone();
        for (c, mut col) in ud.column_iter_mut().enumerate() {
            col /= d[c];
        }
        let cap = DMatrix::identity(u.nrows(), u.nrows()) + &ud * u.transpose();
        Some(ShiftedGram {
            u,
            d,
            cap: cap.cholesky()?,
        })
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let y = rhs.component_div(&self.d);
        let z = self.cap.solve(&(self.u * &y));
        y - self.u.tr_mul(&z).component_div(&self.d)
    }
}

/// Exact minimizer of an [`AlphaObjective`] with `lam3 > 0`.
///
/// Maximizes the concave dual over one multiplier per ball with a projected
/// Newton method; each dual evaluation solves the shifted normal equations
/// through [`ShiftedGram`]. The result is projected onto the constraint set.
/// Returns `None` when the instance is outside the method's scope
/// (`lam3 == 0` or mixed zero/positive radii).
pub fn solve_ball_ridge(obj: &AlphaObjective<'_>, tol: f64) -> Option<AlphaVector> {
    let c = obj.constraint;
    let (m, p) = (c.balls.len(), c.block_len());
    let center = c.center();
    if c.balls.iter().all(|b| b.radius == 0.0) {
        return Some(center);
    }
    if obj.lam3 <= 0.0 || c.balls.iter().any(|b| b.radius == 0.0) {
        return None;
    }
    let u = obj.ak;
    let n = m * p;
    let us = u.tr_mul(obj.s_hat);
    let r2: Vec<f64> = c.balls.iter().map(|b| b.radius * b.radius).collect();

    struct Eval<'g> {
        alpha: DVector<f64>,
        value: f64,
        grad: DVector<f64>,
        gram: ShiftedGram<'g>,
        dev: DVector<f64>,
    }
    let eval = |nu: &DVector<f64>| -> Option<Eval<'_>> {
        let d = DVector::from_fn(n, |q, _| 2.0 * obj.lam3 + nu[q / p]);
        let rhs = DVector::from_fn(n, |q, _| us[q] + nu[q / p] * center.values[q]);
        let gram = ShiftedGram::new(u, d)?;
        let alpha = gram.solve(&rhs);
        let dev = &alpha - &center.values;
        let grad = DVector::from_fn(m, |j, _| 0.5 * (dev.rows(j * p, p).norm_squared() - r2[j]));
        let resid = obj.s_hat - u * &alpha;
        let value = 0.5 * resid.norm_squared() + obj.lam3 * alpha.norm_squared() + nu.dot(&grad);
        Some(Eval {
            alpha,
            value,
            grad,
            gram,
            dev,
        })
    };
    let proj_grad = |nu: &DVector<f64>, g: &DVector<f64>| -> f64 {
        (0..m)
            .map(|j| if nu[j] > 0.0 { g[j].abs() } else { g[j].max(0.0) })
            .fold(0.0, f64::max)
    };
    let scale = r2.iter().copied().fold(0.0, f64::max);

    let mut nu = DVector::zeros(m);
    let mut cur = eval(&nu)?;
    for _ in 0..200 {
        if proj_grad(&nu, &cur.grad) <= tol * scale {
            break;
        }
        // free multipliers: positive ones, or zero ones the gradient would raise
        let free: Vec<usize> = (0..m).filter(|&j| nu[j] > 0.0 || cur.grad[j] > 0.0).collect();
        let mut step = DVector::zeros(m);
        if !free.is_empty() {
            let k = free.len();
            let mut g = DMatrix::zeros(n, k);
            for (col, &j) in free.iter().enumerate() {
                for q in 0..p {
                    g[(j * p + q, col)] = cur.dev[j * p + q];
                }
            }
            let sol = DMatrix::from_columns(
                &(0..k)
                    .map(|col| cur.gram.solve(&g.column(col).into_owned()))
                    .collect::<Vec<_>>(),
            );
            // the dual Hessian on the free set is -G' A^{-1} G
            let mut h = g.tr_mul(&sol);
            let ridge = 1e-14 * h.diagonal().amax().max(f64::MIN_POSITIVE);
            for i in 0..k {
                h[(i, i)] += ridge;
            }
            let rhs = DVector::from_fn(k, |i, _| cur.grad[free[i]]);
            let dir = match h.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => rhs,
            };
            for (i, &j) in free.iter().enumerate() {
                step[j] = dir[i];
            }
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = (&nu + &step * t).map(|x| x.max(0.0));
            if let Some(next) = eval(&trial) {
                let gain = cur.grad.dot(&(&trial - &nu));
                // near the optimum dual values stall in floating point; a
                // shrinking projected gradient is accepted instead
                let improves = next.value >= cur.value + 1e-4 * gain
                    || proj_grad(&trial, &next.grad) <= 0.5 * proj_grad(&nu, &cur.grad);
                if improves || (&trial - &nu).amax() == 0.0 {
                    accepted = Some((trial, next));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, next)) => {
                let moved = (&trial - &nu).amax();
                nu = trial;
                cur = next;
                if moved == 0.0 {
                    break;
                }
            }
            None => break,
        }
    }
    let alpha = AlphaVector {
        values: cur.alpha,
        block_len: p,
    };
    project_product(&alpha, c).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn soft_threshold_examples() {
        assert!((soft_threshold(&v(&[1.2]), 0.5)[0] - 0.7).abs() < 1e-15);
        assert_eq!(soft_threshold(&v(&[-0.3]), 0.5)[0], 0.0);
        assert_eq!(soft_threshold(&v(&[0.5, -0.5]), 0.5), v(&[0.0, 0.0]));
        let x = v(&[1.0, -2.0, 0.0, 3.5]);
        assert_eq!(soft_threshold(&x, 0.0), x);
    }

    #[test]
    fn ball_examples() {
        let ball = BallConstraint::new(v(&[0.0, 0.0]), 1.0).unwrap();
        let p = project_ball(&v(&[3.0, 4.0]), &ball).unwrap();
        assert!((p - v(&[0.6, 0.8])).amax() < 1e-15);
        let inside = v(&[0.1, -0.2]);
        assert_eq!(project_ball(&inside, &ball).unwrap(), inside);
        let center = BallConstraint::new(v(&[1.0, 2.0]), 0.0).unwrap();
        assert_eq!(project_ball(&v(&[1.0, 2.0]), &center).unwrap(), v(&[1.0, 2.0]));
        assert_eq!(project_ball(&v(&[5.0, -2.0]), &center).unwrap(), v(&[1.0, 2.0]));
        assert!(BallConstraint::new(v(&[0.0]), -1.0).is_err());
    }

    #[test]
    fn product_projection_is_separable() {
        let c = ProductConstraint::new(vec![
            BallConstraint::new(v(&[0.0, 0.0]), 1.0).unwrap(),
            BallConstraint::new(v(&[5.0, 5.0]), 1.0).unwrap(),
        ])
        .unwrap();
        let inside = AlphaVector::new(v(&[0.5, 0.0, 5.0, 5.5]), 2).unwrap();
        assert_eq!(project_product(&inside, &c).unwrap(), inside);
        let one_out = AlphaVector::new(v(&[0.5, 0.0, 5.0, 9.0]), 2).unwrap();
        let p = project_product(&one_out, &c).unwrap();
        assert_eq!(p.block(0), &[0.5, 0.0]);
        assert_eq!(p.block(1), &[5.0, 6.0]);
        assert!(project_product(&AlphaVector::zeros(3, 2), &c).is_err());
        assert!(ProductConstraint::new(vec![]).is_err());
    }

    #[test]
    fn spectral_examples() {
        for n in [1, 3, 10] {
            let id = DMatrix::<f64>::identity(n, n);
            assert!((spectral_norm(&id, 1e-12, 100) - 1.0).abs() < 1e-12);
        }
        let d = DMatrix::from_diagonal(&v(&[1.0, 3.0]));
        assert!((spectral_norm(&d, 1e-12, 10_000) - 3.0).abs() < 1e-9);
        assert_eq!(spectral_norm(&DMatrix::<f64>::zeros(4, 4), 1e-9, 100), 0.0);
    }

    #[test]
    fn spectral_fallback_is_trace() {
        let d = DMatrix::from_diagonal(&v(&[1.0, 0.999, 2.0]));
        assert_eq!(spectral_norm(&d, 1e-15, 1), d.trace());
    }

    #[test]
    fn spectral_norm_against_dense_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let b = DMatrix::from_fn(20, 20, |_, _| rng.random::<f64>() - 0.5);
            let a = &b * b.transpose();
            let exact = a.clone().symmetric_eigenvalues().max();
            let est = spectral_norm(&a, 1e-12, 100_000);
            assert!((est - exact).abs() <= 1e-4 * exact, "{est} vs {exact}");
        }
    }

    #[test]
    fn fb_step_scalar_converges_to_closed_form() {
        let abar = DMatrix::from_element(1, 1, 2.0);
        let b = v(&[2.0]);
        let obj = SlfObjective {
            abar: &abar,
            b: &b,
            s_sq: 0.0,
            t: 1,
            lam1: 0.0,
            lam2: 0.0,
        };
        let bound = obj.max_step(0.05);
        assert!((bound - 0.475).abs() < 1e-9);
        let mut f = v(&[0.0]);
        f = fb_step_f(&f, &obj, 0.4, bound).unwrap();
        assert!((f[0] - 0.8).abs() < 1e-15);
        for _ in 0..200 {
            f = fb_step_f(&f, &obj, 0.4, bound).unwrap();
        }
        assert!((f[0] - 1.0).abs() < 1e-12);
        assert!(matches!(
            fb_step_f(&f, &obj, 0.6, bound),
            Err(Error::StepTooLarge { .. })
        ));
        assert!(fb_step_f(&f, &obj, 0.0, bound).is_err());
    }

    #[test]
    fn fb_step_zero_gradient_is_fixed_point() {
        let abar = DMatrix::zeros(3, 3);
        let b = DVector::zeros(3);
        let obj = SlfObjective {
            abar: &abar,
            b: &b,
            s_sq: 0.0,
            t: 2,
            lam1: 0.0,
            lam2: 0.0,
        };
        let f = v(&[0.3, -1.0, 2.0]);
        assert_eq!(fb_step_f(&f, &obj, 1.0, 1.0).unwrap(), f);
    }

    #[test]
    fn pg_step_shrinks_without_data() {
        let ak = DMatrix::zeros(1, 2);
        let s = v(&[0.0]);
        let c = ProductConstraint::new(vec![BallConstraint::new(v(&[0.0, 0.0]), 0.5).unwrap()]).unwrap();
        let obj = AlphaObjective {
            ak: &ak,
            s_hat: &s,
            lam3: 0.25,
            constraint: &c,
        };
        let mu = 0.5;
        let bound = obj.max_step(0.05);
        assert!(mu <= bound);
        let a = AlphaVector::new(v(&[0.3, 0.4]), 2).unwrap();
        let next = pg_step_alpha(&a, &obj, mu, bound).unwrap();
        // (1 - 2 mu lam3) = 0.75, already inside the ball
        assert!((next.values - v(&[0.225, 0.3])).amax() < 1e-15);
        let far = AlphaVector::new(v(&[3.0, 4.0]), 2).unwrap();
        let next = pg_step_alpha(&far, &obj, mu, bound).unwrap();
        assert!((next.values - v(&[0.3, 0.4])).amax() < 1e-15);
    }

    #[test]
    fn pg_step_fixed_point_at_unconstrained_minimizer() {
        let ak = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let s = v(&[2.0, 3.0]);
        let lam3 = 0.5;
        // minimizer of |s - A a|^2/2 + lam3 |a|^2: (A'A + 2 lam3 I) a = A' s
        let star = v(&[4.0 / 5.0, 3.0 / 2.0]);
        let c = ProductConstraint::new(vec![BallConstraint::new(star.clone(), 10.0).unwrap()]).unwrap();
        let obj = AlphaObjective {
            ak: &ak,
            s_hat: &s,
            lam3,
            constraint: &c,
        };
        let a = AlphaVector::new(star.clone(), 2).unwrap();
        let bound = obj.max_step(0.05);
        let next = pg_step_alpha(&a, &obj, bound, bound).unwrap();
        assert!((next.values - star).amax() < 1e-14);
    }

    #[test]
    fn sampled_points_are_feasible() {
        let c = ProductConstraint::new(vec![
            BallConstraint::new(v(&[1.0, 1.0, 1.0]), 0.3).unwrap(),
            BallConstraint::new(v(&[0.0, 2.0, 0.0]), 0.0).unwrap(),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a = c.sample(&mut rng);
            assert!(c.contains(&a, 1e-12));
        }
    }

    #[test]
    fn exact_ball_ridge_matches_projected_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..40 {
            let (m, p) = (1 + case % 3, 2 + case % 5);
            let ak = DMatrix::from_fn(m, m * p, |_, _| rng.random::<f64>() - 0.3);
            let s = DVector::from_fn(m, |_, _| 3.0 * rng.random::<f64>());
            let radius = [0.05, 0.3, 2.0, 50.0][case % 4];
            let balls = (0..m)
                .map(|_| BallConstraint::new(DVector::from_fn(p, |_, _| rng.random::<f64>()), radius).unwrap())
                .collect();
            let c = ProductConstraint::new(balls).unwrap();
            let obj = AlphaObjective {
                ak: &ak,
                s_hat: &s,
                lam3: 0.2,
                constraint: &c,
            };
            let exact = solve_ball_ridge(&obj, 1e-14).unwrap();
            assert!(c.contains(&exact, 1e-12));
            let mu = obj.max_step(0.05);
            let mut a = c.center();
            for _ in 0..200_000 {
                let next = pg_step_alpha(&a, &obj, mu, mu).unwrap();
                let done = (&next.values - &a.values).norm() <= 1e-14 * a.values.norm().max(1.0);
                a = next;
                if done {
                    break;
                }
            }
            let gap = (&exact.values - &a.values).norm() / a.values.norm().max(1e-12);
            assert!(gap < 1e-7, "case {case}: {gap}");
            let (ve, vp) = (obj.value(&exact), obj.value(&a));
            assert!(
                ve <= vp + 1e-12 * vp.abs().max(1.0),
                "case {case}: {ve} vs {vp} gap {gap}"
            );
        }
    }

    #[test]
    fn exact_ball_ridge_scope() {
        let ak = DMatrix::from_element(1, 2, 1.0);
        let s = v(&[1.0]);
        let zero = ProductConstraint::new(vec![BallConstraint::new(v(&[0.5, 0.5]), 0.0).unwrap()]).unwrap();
        let obj = AlphaObjective {
            ak: &ak,
            s_hat: &s,
            lam3: 0.0,
            constraint: &zero,
        };
        assert_eq!(solve_ball_ridge(&obj, 1e-12).unwrap().values, v(&[0.5, 0.5]));
        let open = ProductConstraint::new(vec![BallConstraint::new(v(&[0.5, 0.5]), 1.0).unwrap()]).unwrap();
        let obj = AlphaObjective {
            ak: &ak,
            s_hat: &s,
            lam3: 0.0,
            constraint: &open,
        };
        assert!(solve_ball_ridge(&obj, 1e-12).is_none());
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0..10.0f64, n)
    }

    proptest! {
        #[test]
        fn projection_idempotent_and_nonexpansive(
            x in vec_strategy(5), y in vec_strategy(5), c in vec_strategy(5), r in 0.0..5.0f64
        ) {
            let ball = BallConstraint::new(v(&c), r).unwrap();
            let px = project_ball(&v(&x), &ball).unwrap();
            let py = project_ball(&v(&y), &ball).unwrap();
            let ppx = project_ball(&px, &ball).unwrap();
            prop_assert!((&ppx - &px).amax() <= 1e-12 * (1.0 + px.amax()));
            prop_assert!((&px - &py).norm() <= (v(&x) - v(&y)).norm() + 1e-12);
            prop_assert!(ball.contains(px.as_slice(), 1e-9));
        }

        #[test]
        fn soft_threshold_is_the_l1_prox(
            x in vec_strategy(6), lam in 0.0..3.0f64, seed in any::<u64>()
        ) {
            let x = v(&x);
            let u = soft_threshold(&x, lam);
            let obj = |z: &DVector<f64>| lam * z.lp_norm(1) + 0.5 * (z - &x).norm_squared();
            let best = obj(&u);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..50 {
                let d = DVector::from_fn(6, |_, _| (rng.random::<f64>() - 0.5) * 2e-3);
                prop_assert!(obj(&(&u + d)) >= best - 1e-15);
            }
        }
    }
}
