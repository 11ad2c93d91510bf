//! RBF parametrization of the window function.
//!
//! For a batch of `M` links over `P` pixels, feature `q = m*P + p` (0-based)
//! is `[c_m, d_{m,p}]`: the direct length of link `m` and the detour through
//! pixel `p`. Coefficient vectors use the same ordering, so block `m` of a
//! length-`MP` vector belongs to link `m`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{phi1, phi2, GridSpec, LinkId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub sigma: f64,
    /// Rescale both feature coordinates to zero mean and unit variance per batch.
    pub standardize: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            sigma: 1e-4,
            standardize: false,
        }
    }
}

impl KernelConfig {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::param("sigma", "must be positive"));
        }
        Ok(KernelConfig {
            sigma,
            standardize: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub links: usize,
    pub pixels: usize,
    /// Direct link lengths, one per link.
    pub c: Vec<f64>,
    /// Detour lengths indexed by `m*P + p`.
    pub d: Vec<f64>,
}

impl FeatureSet {
    pub fn build(grid: &GridSpec, links: &[LinkId]) -> Self {
        let coords = grid.coords();
        let pixels = coords.len();
        let mut c = Vec::with_capacity(links.len());
        let mut d = Vec::with_capacity(links.len() * pixels);
        for l in links {
            let (xi, xj) = (coords[l.i - 1], coords[l.j - 1]);
            c.push(phi1(xi, xj));
            d.extend(coords.iter().map(|&xp| phi2(xi, xj, xp)));
        }
        FeatureSet {
            links: links.len(),
            pixels,
            c,
            d,
        }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn phi(&self, q: usize) -> [f64; 2] {
        [self.c[q / self.pixels], self.d[q]]
    }

    fn points(&self, standardize: bool) -> Vec<[f64; 2]> {
        let mut pts: Vec<[f64; 2]> = (0..self.len()).map(|q| self.phi(q)).collect();
        if standardize && !pts.is_empty() {
            for axis in 0..2 {
                let n = pts.len() as f64;
                let mean = pts.iter().map(|p| p[axis]).sum::<f64>() / n;
                let var = pts.iter().map(|p| (p[axis] - mean).powi(2)).sum::<f64>() / n;
                let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
                for p in &mut pts {
                    p[axis] = (p[axis] - mean) / scale;
                }
            }
        }
        pts
    }
}

pub fn rbf(a: [f64; 2], b: [f64; 2], sigma: f64) -> f64 {
    let sq = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    (-sq / (2.0 * sigma * sigma)).exp()
}

/// Symmetric kernel matrix in compressed-row form.
///
/// Entries that evaluate to exactly `0.0` in double precision are not stored,
/// so every product below equals the dense product bit for bit. With small
/// widths almost all off-diagonal entries underflow and the matrix is sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

// exp(-x) is exactly zero in f64 for x above ~745.2
const UNDERFLOW_EXPONENT: f64 = 746.0;

pub fn build_kernel_matrix(features: &FeatureSet, cfg: &KernelConfig) -> KernelMatrix {
    let pts = features.points(cfg.standardize);
    let n = pts.len();
    let sigma = cfg.sigma;
    let cutoff = sigma * (2.0 * UNDERFLOW_EXPONENT).sqrt();
    // sweep over the detour coordinate, which separates features best
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pts[a][1].total_cmp(&pts[b][1]).then(a.cmp(&b)));
    let sorted_d: Vec<f64> = order.iter().map(|&q| pts[q][1]).collect();
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|q| {
            let dq = pts[q][1];
            let lo = sorted_d.partition_point(|&v| v < dq - cutoff);
            let mut row = Vec::new();
            let mut r = lo;
            while r < n && sorted_d[r] <= dq + cutoff {
                let q2 = order[r];
                let v = rbf(pts[q], pts[q2], sigma);
                if v != 0.0 {
                    row.push((q2, v));
                }
                r += 1;
            }
            row.sort_unstable_by_key(|e| e.0);
            row
        })
        .collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let nnz: usize = rows.iter().map(Vec::len).sum();
    let mut cols = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    for row in rows {
        for (c, v) in row {
            cols.push(c);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    KernelMatrix {
        dim: n,
        row_ptr,
        cols,
        vals,
    }
}

impl KernelMatrix {
    pub fn identity(n: usize) -> Self {
        KernelMatrix {
            dim: n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    /// Wraps a dense symmetric matrix, dropping exact zeros.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "kernel matrix must be square");
        let n = m.nrows();
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let v = m[(r, c)];
                if v != 0.0 {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        KernelMatrix {
            dim: n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|r| self.get(r, r)).sum()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[span.clone()].binary_search(&c) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                out[(r, c)] = v;
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim {
            return Err(Error::dim("kernel product", self.dim, x.len()));
        }
        Ok(DVector::from_fn(self.dim, |r, _| {
            let mut acc = 0.0;
            for (c, v) in self.row(r) {
                acc += v * x[c];
            }
            acc
        }))
    }
}

/// Coefficients of the kernel expansion, `M` blocks of length `P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaVector {
    pub values: DVector<f64>,
    pub block_len: usize,
}

impl AlphaVector {
    pub fn new(values: DVector<f64>, block_len: usize) -> Result<Self> {
        if block_len == 0 || !values.len().is_multiple_of(block_len) {
            return Err(Error::dim("coefficient blocks", block_len, values.len()));
        }
        Ok(AlphaVector { values, block_len })
    }

    pub fn zeros(blocks: usize, block_len: usize) -> Self {
        AlphaVector {
            values: DVector::zeros(blocks * block_len),
            block_len,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.values.len() / self.block_len
    }

    pub fn block(&self, j: usize) -> &[f64] {
        &self.values.as_slice()[j * self.block_len..(j + 1) * self.block_len]
    }
}

fn check_dims(k: &KernelMatrix, alpha: &AlphaVector, f_len: Option<usize>) -> Result<()> {
    if alpha.values.len() != k.dim() {
        return Err(Error::dim("coefficient length", k.dim(), alpha.values.len()));
    }
    if let Some(p) = f_len {
        if p != alpha.block_len {
            return Err(Error::dim("field length", alpha.block_len, p));
        }
    }
    Ok(())
}

/// Window rows in the original space: `K alpha`.
pub fn alpha_to_w(k: &KernelMatrix, alpha: &AlphaVector) -> Result<DVector<f64>> {
    check_dims(k, alpha, None)?;
    k.mul_vec(&alpha.values)
}

/// `A_f K`, the `M x MP` operator of the coefficient subproblem. Row `n`
/// is `sum_p f_p K[nP + p, :]`.
pub fn ak_matrix(f: &DVector<f64>, k: &KernelMatrix, links: usize) -> Result<DMatrix<f64>> {
    let p = f.len();
    if p == 0 || links * p != k.dim() {
        return Err(Error::dim("field length", k.dim() / links.max(1), p));
    }
    let mut out = DMatrix::zeros(links, k.dim());
    for n in 0..links {
        for (pix, &fp) in f.iter().enumerate() {
            if fp == 0.0 {
                continue;
            }
            for (c, v) in k.row(n * p + pix) {
                out[(n, c)] += fp * v;
            }
        }
    }
    Ok(out)
}

/// `(I_M ⊗ f^T) K alpha`, evaluated through the `A_f K` operator.
pub fn apply_af(f: &DVector<f64>, k: &KernelMatrix, alpha: &AlphaVector) -> Result<DVector<f64>> {
    check_dims(k, alpha, Some(f.len()))?;
    let ak = ak_matrix(f, k, alpha.num_blocks())?;
    Ok(&ak * &alpha.values)
}

/// `M x P` matrix whose row `n` is block `n` of `K alpha`.
pub fn materialize_aalpha(alpha: &AlphaVector, k: &KernelMatrix) -> Result<DMatrix<f64>> {
    let w = alpha_to_w(k, alpha)?;
    let p = alpha.block_len;
    Ok(DMatrix::from_fn(alpha.num_blocks(), p, |n, c| w[n * p + c]))
}

/// `A_alpha f`: inner products of each window block with the field.
pub fn apply_aalpha(alpha: &AlphaVector, k: &KernelMatrix, f: &DVector<f64>) -> Result<DVector<f64>> {
    check_dims(k, alpha, Some(f.len()))?;
    let w = alpha_to_w(k, alpha)?;
    let p = alpha.block_len;
    Ok(DVector::from_fn(alpha.num_blocks(), |n, _| {
        (0..p).map(|c| w[n * p + c] * f[c]).sum()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::link_index;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(rng: &mut ChaCha8Rng, links: usize, pixels: usize) -> FeatureSet {
        let c: Vec<f64> = (0..links).map(|_| rng.random_range(1.0..5.0)).collect();
        let d = (0..links * pixels)
            .map(|q| c[q / pixels] + rng.random_range(0.0..2.0))
            .collect();
        FeatureSet { links, pixels, c, d }
    }

    #[test]
    fn rbf_examples() {
        let x = [1.5, -2.0];
        assert_eq!(rbf(x, x, 0.3), 1.0);
        let sigma: f64 = 0.7;
        let b = [1.5 + sigma * 2f64.sqrt(), -2.0];
        assert!((rbf(x, b, sigma) - (-1f64).exp()).abs() < 1e-12);
        let far = [4.0, 3.0];
        let mut prev = 0.0;
        for s in [0.5, 1.0, 5.0, 50.0, 500.0] {
            let v = rbf(x, far, s);
            assert!(v > prev);
            prev = v;
        }
        assert!(prev > 0.999);
    }

    #[test]
    fn single_feature_kernel() {
        let fs = FeatureSet {
            links: 1,
            pixels: 1,
            c: vec![2.0],
            d: vec![2.0],
        };
        let k = build_kernel_matrix(&fs, &KernelConfig::new(1.0).unwrap());
        assert_eq!(k.to_dense(), DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn sparse_build_matches_dense_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for sigma in [1e-4, 0.05, 0.5, 3.0] {
            let fs = random_features(&mut rng, 3, 7);
            let k = build_kernel_matrix(&fs, &KernelConfig::new(sigma).unwrap()).to_dense();
            for a in 0..fs.len() {
                for b in 0..fs.len() {
                    assert_eq!(k[(a, b)], rbf(fs.phi(a), fs.phi(b), sigma));
                }
            }
        }
    }

    #[test]
    fn duplicated_features_duplicate_rows() {
        let fs = FeatureSet {
            links: 1,
            pixels: 3,
            c: vec![2.0],
            d: vec![2.0, 2.5, 2.0],
        };
        let k = build_kernel_matrix(&fs, &KernelConfig::new(0.4).unwrap()).to_dense();
        assert_eq!(k.row(0), k.row(2));
        assert_eq!(k.column(0), k.column(2));
    }

    #[test]
    fn kernel_is_symmetric_psd_unit_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let fs = random_features(&mut rng, 4, 6);
            let k = build_kernel_matrix(&fs, &KernelConfig::new(0.8).unwrap()).to_dense();
            assert_eq!(k, k.transpose());
            assert!(k.diagonal().iter().all(|&v| v == 1.0));
            assert!(k.iter().all(|&v| v > 0.0 && v <= 1.0));
            let min = k.symmetric_eigenvalues().min();
            assert!(min >= -1e-10, "min eigenvalue {min}");
        }
    }

    #[test]
    fn tiny_width_gives_near_identity() {
        let grid = GridSpec::new(4, 3, 1.0, [0.5, 0.5]).unwrap();
        let links = [link_index(1, 12, 12).unwrap(), link_index(2, 7, 12).unwrap()];
        let fs = FeatureSet::build(&grid, &links);
        // jitter detours so every feature is distinct
        let mut fs = fs;
        for (q, d) in fs.d.iter_mut().enumerate() {
            *d += 1e-2 * q as f64;
        }
        let k = build_kernel_matrix(&fs, &KernelConfig::new(1e-4).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let alpha = AlphaVector::new(DVector::from_fn(k.dim(), |_, _| rng.random()), 12).unwrap();
        let w = alpha_to_w(&k, &alpha).unwrap();
        assert!((w - &alpha.values).amax() < 1e-6);
    }

    #[test]
    fn identity_kernel_examples() {
        let k = KernelMatrix::identity(4);
        let alpha = AlphaVector::new(DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]), 2).unwrap();
        assert_eq!(alpha_to_w(&k, &alpha).unwrap(), alpha.values);
        let f = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(apply_af(&f, &k, &alpha).unwrap().as_slice(), &[1.0, 2.0]);
        assert_eq!(apply_aalpha(&alpha, &k, &f).unwrap().as_slice(), &[1.0, 2.0]);
        let a = materialize_aalpha(&alpha, &k).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        assert_eq!(apply_af(&DVector::zeros(2), &k, &alpha).unwrap(), DVector::zeros(2));
        let zero = AlphaVector::zeros(2, 2);
        assert_eq!(alpha_to_w(&k, &zero).unwrap(), DVector::zeros(4));
    }

    #[test]
    fn single_link_aalpha_is_window_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fs = random_features(&mut rng, 1, 5);
        let k = build_kernel_matrix(&fs, &KernelConfig::new(0.6).unwrap());
        let alpha = AlphaVector::new(DVector::from_fn(5, |_, _| rng.random()), 5).unwrap();
        let a = materialize_aalpha(&alpha, &k).unwrap();
        let w = alpha_to_w(&k, &alpha).unwrap();
        assert_eq!(a.nrows(), 1);
        assert_eq!(a.row(0).transpose(), w);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let k = KernelMatrix::identity(4);
        let alpha = AlphaVector::zeros(2, 2);
        assert!(apply_af(&DVector::zeros(3), &k, &alpha).is_err());
        assert!(alpha_to_w(&KernelMatrix::identity(6), &alpha).is_err());
        assert!(AlphaVector::new(DVector::zeros(5), 2).is_err());
    }

    #[test]
    fn alpha_to_w_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fs = random_features(&mut rng, 2, 4);
        let k = build_kernel_matrix(&fs, &KernelConfig::new(0.9).unwrap());
        let a = AlphaVector::new(DVector::from_fn(8, |_, _| rng.random()), 4).unwrap();
        let b = AlphaVector::new(DVector::from_fn(8, |_, _| rng.random()), 4).unwrap();
        let sum = AlphaVector::new(&a.values * 2.0 + &b.values, 4).unwrap();
        let lhs = alpha_to_w(&k, &sum).unwrap();
        let rhs = alpha_to_w(&k, &a).unwrap() * 2.0 + alpha_to_w(&k, &b).unwrap();
        assert!((lhs - rhs).amax() < 1e-12);
    }
}
