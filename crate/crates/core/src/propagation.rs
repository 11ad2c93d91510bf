//! Physical window models, weight matrices and the synthetic forward model.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{phi1, phi2, GridSpec, LinkId, Point};

pub const DEFAULT_ETA: f64 = 0.1499;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    NormalizedElliptical,
    InverseAreaElliptical,
}

impl std::str::FromStr for WindowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized_elliptical" | "normalized" => Ok(WindowKind::NormalizedElliptical),
            "inverse_area_elliptical" | "inverse_area" => Ok(WindowKind::InverseAreaElliptical),
            other => Err(Error::Config(format!("unknown window model {other:?}"))),
        }
    }
}

/// Anything that assigns a weight to pixel `p` for a link from its two
/// distances `phi1` (direct length) and `phi2` (detour through `p`).
pub trait WindowFunction: Sync {
    fn weight(&self, phi1: f64, phi2: f64) -> Result<f64>;

    /// Weights vanish whenever `phi2 - phi1` exceeds this margin.
    fn support_margin(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowModel {
    pub kind: WindowKind,
    pub eta: f64,
    pub nu: f64,
}

impl Default for WindowModel {
    fn default() -> Self {
        WindowModel {
            kind: WindowKind::NormalizedElliptical,
            eta: DEFAULT_ETA,
            nu: DEFAULT_ETA / 4.0,
        }
    }
}

impl WindowModel {
    pub fn new(kind: WindowKind, eta: f64, nu: f64) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::param("eta", "must be positive"));
        }
        if kind == WindowKind::InverseAreaElliptical && !(nu > 0.0) {
            return Err(Error::param("nu", "must be positive for the inverse-area model"));
        }
        Ok(WindowModel { kind, eta, nu })
    }

    pub fn normalized(eta: f64) -> Result<Self> {
        Self::new(WindowKind::NormalizedElliptical, eta, DEFAULT_ETA / 4.0)
    }
}

/// `4 / (pi * phi2 * sqrt(phi2^2 - phi1^2))`, the inverse ellipse area.
pub fn gamma(phi1: f64, phi2: f64) -> f64 {
    4.0 / (std::f64::consts::PI * phi2 * (phi2 * phi2 - phi1 * phi1).sqrt())
}

pub fn window_weight(model: &WindowModel, phi1: f64, phi2: f64) -> Result<f64> {
    if phi2 > phi1 + model.eta / 2.0 {
        return Ok(0.0);
    }
    if phi1 <= 0.0 {
        return Err(Error::CoincidentEndpoints);
    }
    Ok(match model.kind {
        WindowKind::NormalizedElliptical => 1.0 / phi1.sqrt(),
        // Gamma decreases in phi2, so clamping phi2 from below applies the cap
        // and keeps the weight finite on the line of sight.
        WindowKind::InverseAreaElliptical => {
            let cap = gamma(phi1, phi1 + model.nu);
            gamma(phi1, phi2.max(phi1 + model.nu)).min(cap)
        }
    })
}

impl WindowFunction for WindowModel {
    fn weight(&self, phi1: f64, phi2: f64) -> Result<f64> {
        window_weight(self, phi1, phi2)
    }

    fn support_margin(&self) -> f64 {
        self.eta / 2.0
    }
}

/// A window that deviates from a physical model by extra weight on a thin
/// band just outside the model's ellipse: pixels with
/// `eta/2 < phi2 - phi1 <= eta/2 + band` receive `gain / sqrt(phi1)`.
/// Used as synthetic ground truth for model-mismatch experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbedWindow {
    pub base: WindowModel,
    pub band: f64,
    pub gain: f64,
}

impl PerturbedWindow {
    /// Extra weight this window adds on top of its base model.
    pub fn extra(&self, phi1: f64, phi2: f64) -> f64 {
        let excess = phi2 - phi1;
        let edge = self.base.eta / 2.0;
        if excess > edge && excess <= edge + self.band && phi1 > 0.0 {
            self.gain / phi1.sqrt()
        } else {
            0.0
        }
    }
}

impl WindowFunction for PerturbedWindow {
    fn weight(&self, phi1: f64, phi2: f64) -> Result<f64> {
        Ok(window_weight(&self.base, phi1, phi2)? + self.extra(phi1, phi2))
    }

    fn support_margin(&self) -> f64 {
        self.base.eta / 2.0 + self.band
    }
}

/// Dense `M x P` weights, one row per link.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub values: DMatrix<f64>,
    pub link_ids: Vec<LinkId>,
}

impl WeightMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    /// Sub-matrix holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> WeightMatrix {
        WeightMatrix {
            values: self.values.select_rows(rows),
            link_ids: rows.iter().map(|&r| self.link_ids[r]).collect(),
        }
    }
}

/// Row-sparse weights keeping only entries inside the window support.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseWeightMatrix {
    pub cols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub link_ids: Vec<LinkId>,
}

impl SparseWeightMatrix {
    pub fn to_dense(&self) -> WeightMatrix {
        let mut values = DMatrix::zeros(self.rows.len(), self.cols);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                values[(r, c)] = v;
            }
        }
        WeightMatrix {
            values,
            link_ids: self.link_ids.clone(),
        }
    }
}

fn weight_row(coords: &[Point], window: &dyn WindowFunction, link: &LinkId) -> Result<Vec<(usize, f64)>> {
    let xi = coords[link.i - 1];
    let xj = coords[link.j - 1];
    let direct = phi1(xi, xj);
    let margin = window.support_margin();
    let mut row = Vec::new();
    for (p, &xp) in coords.iter().enumerate() {
        let detour = phi2(xi, xj, xp);
        if detour > direct + margin {
            continue;
        }
        let w = window.weight(direct, detour)?;
        if w != 0.0 {
            row.push((p, w));
        }
    }
    Ok(row)
}

fn check_links(grid: &GridSpec, links: &[LinkId]) -> Result<()> {
    for l in links {
        grid.check_pixel(l.i)?;
        grid.check_pixel(l.j)?;
        if l.i == l.j {
            return Err(Error::SelfLink(l.i));
        }
    }
    Ok(())
}

pub fn build_sparse_weight_matrix(
    grid: &GridSpec,
    window: &dyn WindowFunction,
    links: &[LinkId],
) -> Result<SparseWeightMatrix> {
    check_links(grid, links)?;
    let coords = grid.coords();
    let rows = links
        .par_iter()
        .map(|l| weight_row(&coords, window, l))
        .collect::<Result<Vec<_>>>()?;
    Ok(SparseWeightMatrix {
        cols: grid.pixel_count(),
        rows,
        link_ids: links.to_vec(),
    })
}

pub fn build_weight_matrix(grid: &GridSpec, window: &dyn WindowFunction, links: &[LinkId]) -> Result<WeightMatrix> {
    Ok(build_sparse_weight_matrix(grid, window, links)?.to_dense())
}

fn check_field(cols: usize, f: &DVector<f64>) -> Result<()> {
    if f.len() != cols {
        return Err(Error::dim("shadowing synthesis", cols, f.len()));
    }
    Ok(())
}

/// `s = W f`, summed in column order so dense and sparse storage agree bit for bit.
pub fn synth_shadowing(w: &WeightMatrix, f: &DVector<f64>) -> Result<DVector<f64>> {
    check_field(w.cols(), f)?;
    Ok(DVector::from_fn(w.rows(), |r, _| {
        let mut acc = 0.0;
        for c in 0..w.cols() {
            let v = w.values[(r, c)];
            if v != 0.0 {
                acc += v * f[c];
            }
        }
        acc
    }))
}

pub fn synth_shadowing_sparse(w: &SparseWeightMatrix, f: &DVector<f64>) -> Result<DVector<f64>> {
    check_field(w.cols, f)?;
    Ok(DVector::from_iterator(
        w.rows.len(),
        w.rows.iter().map(|row| {
            let mut acc = 0.0;
            for &(c, v) in row {
                acc += v * f[c];
            }
            acc
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossParams {
    pub pl0: f64,
    pub d0: f64,
    pub delta: f64,
    pub noise_std: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        PathLossParams {
            pl0: 75.0,
            d0: 1.0,
            delta: 2.9,
            noise_std: 0.0,
        }
    }
}

impl PathLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d0 > 0.0) {
            return Err(Error::param("d0", "must be positive"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::param("delta", "must be positive"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::param("noise_std", "must be nonnegative"));
        }
        Ok(())
    }

    /// Distance-dependent part `pl0 + 10 delta log10(d / d0)`.
    pub fn free_space(&self, distance: f64) -> Result<f64> {
        if !(distance > 0.0) {
            return Err(Error::param("distance", format!("must be positive, got {distance}")));
        }
        Ok(self.pl0 + 10.0 * self.delta * (distance / self.d0).log10())
    }
}

pub fn synth_pathloss<R: Rng + ?Sized>(
    params: &PathLossParams,
    distance: f64,
    shadow: f64,
    rng: &mut R,
) -> Result<f64> {
    let base = params.free_space(distance)?;
    let noise = if params.noise_std > 0.0 {
        Normal::new(0.0, params.noise_std)
            .map_err(|e| Error::param("noise_std", e.to_string()))?
            .sample(rng)
    } else {
        0.0
    };
    Ok(base + shadow + noise)
}

/// One row of the synthetic measurement CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRow {
    pub t: usize,
    pub i: usize,
    pub j: usize,
    pub shadow_db: f64,
    pub pathloss_db: f64,
    pub distance_m: f64,
}

pub fn write_measurements(path: &Path, rows: &[MeasurementRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "t,i,j,shadow_db,pathloss_db,distance_m").map_err(io)?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t, r.i, r.j, r.shadow_db, r.pathloss_db, r.distance_m
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_madrid_scenario, link_index};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normalized(eta: f64) -> WindowModel {
        WindowModel::normalized(eta).unwrap()
    }

    #[test]
    fn normalized_weight_examples() {
        let m = normalized(0.15);
        assert!((window_weight(&m, 4.0, 4.05).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(window_weight(&m, 4.0, 4.10).unwrap(), 0.0);
    }

    #[test]
    fn gamma_example() {
        assert!((gamma(3.0, 5.0) - 0.063662).abs() < 1e-6);
    }

    #[test]
    fn coincident_endpoints_rejected() {
        let m = normalized(0.15);
        assert!(matches!(window_weight(&m, 0.0, 0.0), Err(Error::CoincidentEndpoints)));
    }

    #[test]
    fn inverse_area_is_finite_and_nonincreasing() {
        let m = WindowModel::new(WindowKind::InverseAreaElliptical, 0.5, 0.05).unwrap();
        let phi1 = 3.0;
        let mut prev = f64::INFINITY;
        for k in 0..=100 {
            let p2 = phi1 + 0.25 * k as f64 / 100.0;
            let w = window_weight(&m, phi1, p2).unwrap();
            assert!(w.is_finite() && w > 0.0);
            assert!(w <= prev);
            prev = w;
        }
        assert_eq!(window_weight(&m, phi1, phi1 + 0.26).unwrap(), 0.0);
        // on the line of sight the cap applies
        assert_eq!(window_weight(&m, phi1, phi1).unwrap(), gamma(phi1, phi1 + 0.05));
    }

    #[test]
    fn two_pixel_map_with_wide_ellipse() {
        let grid = GridSpec::new(2, 1, 1.0, [0.0, 0.0]).unwrap();
        let link = link_index(1, 2, 2).unwrap();
        let w = build_weight_matrix(&grid, &normalized(1e6), &[link]).unwrap();
        assert_eq!(w.values[(0, 0)], 1.0);
        assert_eq!(w.values[(0, 1)], 1.0);
    }

    // Straight-line evaluator used as an independent oracle.
    fn naive_matrix(grid: &GridSpec, eta: f64, links: &[LinkId]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(links.len(), grid.pixel_count());
        for (r, l) in links.iter().enumerate() {
            let (ax, ay) = (grid.coord(l.i)[0], grid.coord(l.i)[1]);
            let (bx, by) = (grid.coord(l.j)[0], grid.coord(l.j)[1]);
            let d = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
            for p in 1..=grid.pixel_count() {
                let [x, y] = grid.coord(p);
                let d2 = ((x - ax).powi(2) + (y - ay).powi(2)).sqrt() + ((x - bx).powi(2) + (y - by).powi(2)).sqrt();
                out[(r, p - 1)] = if d2 > d + eta / 2.0 { 0.0 } else { 1.0 / d.sqrt() };
            }
        }
        out
    }

    fn desk_links(p: usize, count: usize, seed: u64) -> Vec<LinkId> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| loop {
                let i = rng.random_range(1..=p);
                let j = rng.random_range(1..=p);
                if i != j {
                    break link_index(i, j, p).unwrap();
                }
            })
            .collect()
    }

    #[test]
    fn desk_matrix_matches_naive_evaluator() {
        let grid = GridSpec::new(20, 15, 1.0, [0.5, 0.5]).unwrap();
        let links = desk_links(300, 200, 7);
        let w = build_weight_matrix(&grid, &normalized(0.15), &links).unwrap();
        assert_eq!(w.values, naive_matrix(&grid, 0.15, &links));
    }

    #[test]
    fn support_confined_to_ellipse() {
        let grid = GridSpec::new(20, 15, 1.0, [0.5, 0.5]).unwrap();
        let links = desk_links(300, 50, 3);
        let w = build_weight_matrix(&grid, &normalized(0.15), &links).unwrap();
        for (r, l) in links.iter().enumerate() {
            let (xi, xj) = (grid.coord(l.i), grid.coord(l.j));
            for p in 0..300 {
                if w.values[(r, p)] != 0.0 {
                    assert!(phi2(xi, xj, grid.coord(p + 1)) <= phi1(xi, xj) + 0.075);
                }
            }
        }
    }

    #[test]
    fn row_extraction_consistency() {
        let grid = GridSpec::new(20, 15, 1.0, [0.5, 0.5]).unwrap();
        let links = desk_links(300, 40, 11);
        let all = build_weight_matrix(&grid, &normalized(0.15), &links).unwrap();
        let pick = [3usize, 17, 0, 39];
        let sub: Vec<LinkId> = pick.iter().map(|&k| links[k]).collect();
        let direct = build_weight_matrix(&grid, &normalized(0.15), &sub).unwrap();
        assert_eq!(all.select_rows(&pick), direct);
    }

    #[test]
    fn shadowing_examples() {
        let w = WeightMatrix {
            values: DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            link_ids: vec![link_index(1, 2, 2).unwrap()],
        };
        let s = synth_shadowing(&w, &DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert_eq!(s[0], 11.0);
        assert_eq!(synth_shadowing(&w, &DVector::zeros(2)).unwrap()[0], 0.0);
        assert!(synth_shadowing(&w, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn madrid_batch_shadowing_nonnegative_and_sparse_agrees() {
        let s = build_madrid_scenario();
        let links = desk_links(s.pixel_count(), 120, 5);
        let model = WindowModel::default();
        let sparse = build_sparse_weight_matrix(&s.grid, &model, &links).unwrap();
        let dense = sparse.to_dense();
        let f = DVector::from_vec(s.slf.clone());
        let a = synth_shadowing(&dense, &f).unwrap();
        let b = synth_shadowing_sparse(&sparse, &f).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn shadowing_is_linear() {
        let grid = GridSpec::new(20, 15, 1.0, [0.5, 0.5]).unwrap();
        let links = desk_links(300, 30, 2);
        let w = build_weight_matrix(&grid, &normalized(0.15), &links).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f1 = DVector::from_fn(300, |_, _| rng.random::<f64>());
        let f2 = DVector::from_fn(300, |_, _| rng.random::<f64>());
        let lhs = synth_shadowing(&w, &(&f1 + &f2)).unwrap();
        let rhs = synth_shadowing(&w, &f1).unwrap() + synth_shadowing(&w, &f2).unwrap();
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn pathloss_examples() {
        let p = PathLossParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((synth_pathloss(&p, 10.0, 0.0, &mut rng).unwrap() - 104.0).abs() < 1e-12);
        assert_eq!(synth_pathloss(&p, 1.0, 0.0, &mut rng).unwrap(), 75.0);
        assert!(synth_pathloss(&p, 0.0, 0.0, &mut rng).is_err());
        let a = synth_pathloss(&p, 7.0, 2.0, &mut rng).unwrap();
        let b = synth_pathloss(&p, 7.0, 2.0, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noisy_pathloss_is_seeded() {
        let p = PathLossParams {
            noise_std: 2.0,
            ..Default::default()
        };
        let a = synth_pathloss(&p, 7.0, 2.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = synth_pathloss(&p, 7.0, 2.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perturbed_window_adds_band() {
        let base = normalized(0.2);
        let pw = PerturbedWindow {
            base,
            band: 0.1,
            gain: 0.5,
        };
        assert_eq!(pw.weight(4.0, 4.05).unwrap(), 0.5);
        assert_eq!(pw.weight(4.0, 4.15).unwrap(), 0.25);
        assert_eq!(pw.weight(4.0, 4.25).unwrap(), 0.0);
    }
}
