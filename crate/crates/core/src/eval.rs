//! Metrics, experiment orchestration and artifact export.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    derived_rng, nearest_pixel, road_links, sample_batch, split_with, MeasurementRecord, RngPurpose, StreamConfig,
};
use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::propagation::{
    build_sparse_weight_matrix, synth_shadowing_sparse, window_weight, PathLossParams, PerturbedWindow,
    SparseWeightMatrix, WeightMatrix, WindowFunction, WindowModel,
};
use crate::scenario::{phi1, phi2, GridSpec, LinkId, Point, Scenario};
use crate::solver::{alt_min_step, baseline_step, online_step, BatchProblem, DescentAudit, Hyperparams, SolverState};

pub const REPORT_VERSION: u32 = 1;

/// `|estimate - truth|^2 / |truth|^2`.
pub fn nmse(estimate: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::dim("nmse", truth.len(), estimate.len()));
    }
    let den = truth.norm_squared();
    if den == 0.0 {
        return Err(Error::NmseUndefined);
    }
    Ok((estimate - truth).norm_squared() / den)
}

fn row_error(rows: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    (rows - truth).norm_squared()
}

/// Window error over a fixed horizon of batches. Batches already processed
/// contribute their committed rows; later ones contribute the model rows.
pub fn eval_w_nmse(state: &SolverState, truth: &[DMatrix<f64>], model: &[DMatrix<f64>]) -> Result<f64> {
    if truth.len() != model.len() || truth.len() < state.t {
        return Err(Error::dim("window horizon", state.t.max(model.len()), truth.len()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (tau, (tr, md)) in truth.iter().zip(model).enumerate() {
        let rows = state.records.get(tau).map_or(md, |r| &r.rows);
        if rows.shape() != tr.shape() {
            return Err(Error::dim("window rows", tr.len(), rows.len()));
        }
        num += row_error(rows, tr);
        den += tr.norm_squared();
    }
    if den == 0.0 {
        return Err(Error::NmseUndefined);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Online,
    Baseline,
    AltMin,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "online" => Ok(Algorithm::Online),
            "baseline" => Ok(Algorithm::Baseline),
            "altmin" => Ok(Algorithm::AltMin),
            other => Err(Error::Config(format!(
                "unknown algorithm {other:?} (expected online, baseline or altmin)"
            ))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Online => "online",
            Algorithm::Baseline => "baseline",
            Algorithm::AltMin => "altmin",
        })
    }
}

/// Everything that determines an experiment's output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub hp: Hyperparams,
    pub stream: StreamConfig,
    pub kernel: KernelConfig,
    pub window: WindowModel,
    /// Width of the extra band of the perturbed ground-truth window; zero
    /// means the ground truth is the model itself.
    pub truth_band: f64,
    /// Largest row deviation of the perturbed window over acquirable links.
    pub truth_delta: f64,
    /// Standard deviation of additive Gaussian noise on synthetic shadowing (dB).
    pub noise_std: f64,
    /// Fraction of acquirable links reserved for shadowing evaluation.
    pub holdout_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithm: Algorithm::Online,
            hp: Hyperparams::default(),
            stream: StreamConfig::default(),
            kernel: KernelConfig::default(),
            window: WindowModel::default(),
            truth_band: 0.0,
            truth_delta: 0.1,
            noise_std: 0.0,
            holdout_fraction: 0.1,
        }
    }
}

impl ExperimentConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.hp.seed = seed;
        self.stream.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.stream.validate()?;
        if !(self.truth_band >= 0.0) || !(self.truth_delta >= 0.0) {
            return Err(Error::param(
                "truth_band",
                "perturbation parameters must be nonnegative",
            ));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::param("noise_std", "must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::param("holdout_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// A synthetic map with its acquirable-link pool and evaluation set.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub scenario: Scenario,
    pub truth: Option<PerturbedWindow>,
    pub train_links: Vec<LinkId>,
    pub eval_links: Vec<LinkId>,
    /// True when `eval_links` are excluded from training.
    pub held_out: bool,
    eval_model: SparseWeightMatrix,
    eval_truth_s: DVector<f64>,
}

/// Ingested measurements on a grid.
#[derive(Debug, Clone)]
pub struct DatasetSource {
    pub grid: GridSpec,
    pub train: Vec<MeasurementRecord>,
    pub test: Vec<MeasurementRecord>,
    test_model: Option<SparseWeightMatrix>,
    test_s: DVector<f64>,
}

#[derive(Debug, Clone)]
pub enum Source {
    Synthetic(SyntheticSource),
    Dataset(DatasetSource),
}

/// Gain making the largest band-weight row norm over `links` equal `delta`.
fn calibrate_gain(grid: &GridSpec, model: &WindowModel, band: f64, delta: f64, links: &[LinkId]) -> f64 {
    let unit = PerturbedWindow {
        base: *model,
        band,
        gain: 1.0,
    };
    let coords = grid.coords();
    let worst = links
        .par_iter()
        .map(|l| {
            let (xi, xj) = (coords[l.i - 1], coords[l.j - 1]);
            let d = phi1(xi, xj);
            coords
                .iter()
                .map(|&xp| unit.extra(d, phi2(xi, xj, xp)).powi(2))
                .sum::<f64>()
        })
        .reduce(|| 0.0, f64::max)
        .sqrt();
    if worst > 0.0 {
        delta / worst
    } else {
        0.0
    }
}

impl Source {
    /// Synthetic source over road-to-road links. A fraction of them is held
    /// out for shadowing evaluation; with no holdout all road links are used
    /// for evaluation (in-sample).
    pub fn synthetic(scenario: Scenario, cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        if !scenario.has_ground_truth() {
            return Err(Error::param("scenario", "synthetic runs need a ground-truth field"));
        }
        let links = road_links(&scenario);
        if links.is_empty() {
            return Err(Error::EmptySource("road links"));
        }
        let truth = (cfg.truth_band > 0.0 && cfg.truth_delta > 0.0).then(|| PerturbedWindow {
            base: cfg.window,
            band: cfg.truth_band,
            gain: calibrate_gain(&scenario.grid, &cfg.window, cfg.truth_band, cfg.truth_delta, &links),
        });
        let (train_links, eval_links, held_out) = if cfg.holdout_fraction > 0.0 {
            let mut rng = derived_rng(cfg.stream.seed, RngPurpose::Holdout, 0);
            let (train, test) = split_with(&links, 1.0 - cfg.holdout_fraction, &mut rng)?;
            if train.is_empty() || test.is_empty() {
                return Err(Error::param(
                    "holdout_fraction",
                    "leaves an empty train or evaluation set",
                ));
            }
            (train, test, true)
        } else {
            (links.clone(), links, false)
        };
        let grid = scenario.grid;
        let f_true = DVector::from_column_slice(&scenario.slf);
        let eval_model = build_sparse_weight_matrix(&grid, &cfg.window, &eval_links)?;
        let eval_truth_s = match &truth {
            Some(tw) => synth_shadowing_sparse(&build_sparse_weight_matrix(&grid, tw, &eval_links)?, &f_true)?,
            None => synth_shadowing_sparse(&eval_model, &f_true)?,
        };
        Ok(Source::Synthetic(SyntheticSource {
            scenario,
            truth,
            train_links,
            eval_links,
            held_out,
            eval_model,
            eval_truth_s,
        }))
    }

    /// Dataset source; records must carry shadowing values.
    pub fn dataset(
        grid: GridSpec,
        train: Vec<MeasurementRecord>,
        test: Vec<MeasurementRecord>,
        window: &WindowModel,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptySource("training records"));
        }
        let p = grid.pixel_count();
        for r in train.iter().chain(&test) {
            r.link(p)?;
            if r.shadow.is_none() {
                return Err(Error::param("shadow", "dataset records need shadowing values"));
            }
        }
        let (test_model, test_s) = if test.is_empty() {
            (None, DVector::zeros(0))
        } else {
            let links = test.iter().map(|r| r.link(p)).collect::<Result<Vec<_>>>()?;
            let s = DVector::from_iterator(test.len(), test.iter().map(|r| r.shadow.unwrap_or(0.0)));
            (Some(build_sparse_weight_matrix(&grid, window, &links)?), s)
        };
        Ok(Source::Dataset(DatasetSource {
            grid,
            train,
            test,
            test_model,
            test_s,
        }))
    }

    pub fn grid(&self) -> &GridSpec {
        match self {
            Source::Synthetic(s) => &s.scenario.grid,
            Source::Dataset(d) => &d.grid,
        }
    }

    fn pool_len(&self) -> usize {
        match self {
            Source::Synthetic(s) => s.train_links.len(),
            Source::Dataset(d) => d.train.len(),
        }
    }

    fn nmse_s_mode(&self) -> &'static str {
        match self {
            Source::Synthetic(s) if s.held_out => "held-out",
            Source::Synthetic(_) => "in-sample",
            Source::Dataset(d) if d.test.is_empty() => "none",
            Source::Dataset(_) => "test-set",
        }
    }
}

/// One row of the learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub t: usize,
    pub cost: f64,
    pub nmse_f: Option<f64>,
    pub nmse_s: Option<f64>,
    pub nmse_w: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: u32,
    pub config_echo: ExperimentConfig,
    pub per_t: Vec<CurveRow>,
    pub nmse_s_mode: String,
    pub eval_links: usize,
    pub audit: DescentAudit,
    pub runtime_s: f64,
    pub final_f: Vec<f64>,
}

impl ExperimentReport {
    pub fn last(&self) -> Option<&CurveRow> {
        self.per_t.last()
    }
}

struct Generated {
    model: WeightMatrix,
    truth: Option<WeightMatrix>,
    s_hat: DVector<f64>,
}

/// Saved progress of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub state: SolverState,
    pub curve: Vec<CurveRow>,
    /// Committed-row window error per processed batch.
    pub learned_err: Vec<f64>,
}

/// A running experiment; batches are generated on demand from the seed, so
/// the run can stop and resume at any `t`.
pub struct Experiment<'a> {
    source: &'a Source,
    cfg: ExperimentConfig,
    progress: Progress,
    model_err: Vec<f64>,
    truth_sq: f64,
    started: Instant,
}

impl<'a> Experiment<'a> {
    pub fn new(source: &'a Source, cfg: ExperimentConfig) -> Result<Self> {
        let state = SolverState::new(source.grid().pixel_count());
        Self::resume(
            source,
            cfg,
            Progress {
                state,
                curve: Vec::new(),
                learned_err: Vec::new(),
            },
        )
    }

    pub fn resume(source: &'a Source, cfg: ExperimentConfig, progress: Progress) -> Result<Self> {
        cfg.validate()?;
        let t = progress.state.t;
        if progress.state.pixels() != source.grid().pixel_count() {
            return Err(Error::GridMismatch(format!(
                "state has {} pixels, source grid has {}",
                progress.state.pixels(),
                source.grid().pixel_count()
            )));
        }
        if progress.curve.len() != t || progress.learned_err.len() != t || t > cfg.stream.t_max {
            return Err(Error::Config(
                "checkpoint progress is inconsistent with its state".into(),
            ));
        }
        let mut exp = Experiment {
            source,
            cfg,
            progress,
            model_err: Vec::new(),
            truth_sq: 0.0,
            started: Instant::now(),
        };
        if let Source::Synthetic(_) = source {
            let mut model_err = Vec::with_capacity(cfg.stream.t_max);
            let mut truth_sq = 0.0;
            for t in 1..=cfg.stream.t_max {
                let g = exp.generate(t)?;
                let truth = g.truth.as_ref().map_or(&g.model.values, |w| &w.values);
                model_err.push(row_error(&g.model.values, truth));
                truth_sq += truth.norm_squared();
            }
            exp.model_err = model_err;
            exp.truth_sq = truth_sq;
        }
        Ok(exp)
    }

    pub fn state(&self) -> &SolverState {
        &self.progress.state
    }

    pub fn progress(&self) -> &Progress {
        &self.progress
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn done(&self) -> bool {
        self.progress.state.t >= self.cfg.stream.t_max
    }

    fn generate(&self, t: usize) -> Result<Generated> {
        let idx = sample_batch(self.source.pool_len(), &self.cfg.stream, t)?;
        let grid = self.source.grid();
        match self.source {
            Source::Synthetic(s) => {
                let links: Vec<LinkId> = idx.iter().map(|&k| s.train_links[k]).collect();
                let model = build_sparse_weight_matrix(grid, &self.cfg.window, &links)?;
                let truth = match &s.truth {
                    Some(tw) => Some(build_sparse_weight_matrix(grid, tw as &dyn WindowFunction, &links)?),
                    None => None,
                };
                let f_true = DVector::from_column_slice(&s.scenario.slf);
                let mut s_hat = synth_shadowing_sparse(truth.as_ref().unwrap_or(&model), &f_true)?;
                if self.cfg.noise_std > 0.0 {
                    let normal =
                        Normal::new(0.0, self.cfg.noise_std).map_err(|e| Error::param("noise_std", e.to_string()))?;
                    let mut rng = derived_rng(self.cfg.stream.seed, RngPurpose::Noise, t);
                    for v in s_hat.iter_mut() {
                        *v += normal.sample(&mut rng);
                    }
                }
                Ok(Generated {
                    model: model.to_dense(),
                    truth: truth.map(|w| w.to_dense()),
                    s_hat,
                })
            }
            Source::Dataset(d) => {
                let p = grid.pixel_count();
                let links = idx.iter().map(|&k| d.train[k].link(p)).collect::<Result<Vec<_>>>()?;
                let s_hat = DVector::from_iterator(idx.len(), idx.iter().map(|&k| d.train[k].shadow.unwrap_or(0.0)));
                let model = build_sparse_weight_matrix(grid, &self.cfg.window, &links)?.to_dense();
                Ok(Generated {
                    model,
                    truth: None,
                    s_hat,
                })
            }
        }
    }

    /// Processes the next batch and records its learning-curve row.
    pub fn step(&mut self) -> Result<CurveRow> {
        if self.done() {
            return Err(Error::Config("experiment already reached t_max".into()));
        }
        let t = self.progress.state.t + 1;
        let g = self.generate(t)?;
        let batch = BatchProblem::new(
            self.source.grid(),
            g.s_hat,
            &g.model,
            &self.cfg.kernel,
            self.cfg.hp.radius,
        )?;
        let state = &mut self.progress.state;
        match self.cfg.algorithm {
            Algorithm::Online => online_step(state, &batch, &self.cfg.hp)?,
            Algorithm::Baseline => baseline_step(state, &batch, &self.cfg.hp)?,
            Algorithm::AltMin => alt_min_step(state, &batch, &self.cfg.hp)?,
        }
        let rows = &state.records[t - 1].rows;
        let truth = g.truth.as_ref().map_or(&g.model.values, |w| &w.values);
        self.progress.learned_err.push(row_error(rows, truth));
        let row = self.metrics(t)?;
        self.progress.curve.push(row);
        Ok(row)
    }

    fn metrics(&self, t: usize) -> Result<CurveRow> {
        let state = &self.progress.state;
        let cost = *state.objective_trace.last().ok_or(Error::NoBatches)?;
        let f = &state.f;
        let (nmse_f, nmse_s, nmse_w) = match self.source {
            Source::Synthetic(s) => {
                let f_true = DVector::from_column_slice(&s.scenario.slf);
                let pred = synth_shadowing_sparse(&s.eval_model, f)?;
                // one pass in batch order, so equal per-batch errors give equal sums
                let learned = &self.progress.learned_err;
                let num: f64 = (0..self.model_err.len())
                    .map(|k| if k < t { learned[k] } else { self.model_err[k] })
                    .sum();
                let w = if self.truth_sq > 0.0 {
                    Some(num / self.truth_sq)
                } else {
                    None
                };
                (Some(nmse(f, &f_true)?), Some(nmse(&pred, &s.eval_truth_s)?), w)
            }
            Source::Dataset(d) => {
                let s = match &d.test_model {
                    Some(w) => nmse(&synth_shadowing_sparse(w, f)?, &d.test_s).ok(),
                    None => None,
                };
                (None, s, None)
            }
        };
        Ok(CurveRow {
            t,
            cost,
            nmse_f,
            nmse_s,
            nmse_w,
        })
    }

    /// Runs until `t_max` or until `stop_after` batches have been processed.
    pub fn run(&mut self, stop_after: Option<usize>) -> Result<()> {
        let limit = stop_after.unwrap_or(usize::MAX).min(self.cfg.stream.t_max);
        while self.progress.state.t < limit {
            self.step()?;
        }
        Ok(())
    }

    pub fn report(&self) -> ExperimentReport {
        let eval_links = match self.source {
            Source::Synthetic(s) => s.eval_links.len(),
            Source::Dataset(d) => d.test.len(),
        };
        ExperimentReport {
            version: REPORT_VERSION,
            config_echo: self.cfg,
            per_t: self.progress.curve.clone(),
            nmse_s_mode: self.source.nmse_s_mode().to_string(),
            eval_links,
            audit: self.progress.state.audit.clone(),
            runtime_s: self.started.elapsed().as_secs_f64(),
            final_f: self.progress.state.f.iter().copied().collect(),
        }
    }

    pub fn into_progress(self) -> Progress {
        self.progress
    }
}

pub fn run_experiment(source: &Source, cfg: ExperimentConfig) -> Result<ExperimentReport> {
    let mut exp = Experiment::new(source, cfg)?;
    exp.run(None)?;
    Ok(exp.report())
}

/// One independent run per radius, executed in parallel.
pub fn radius_sweep(source: &Source, cfg: ExperimentConfig, radii: &[f64]) -> Result<Vec<ExperimentReport>> {
    radii
        .par_iter()
        .map(|&r| {
            let mut arm = cfg;
            arm.hp.radius = r;
            run_experiment(source, arm)
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_learning_curve(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut out = String::from("t,cost,nmse_f,nmse_s,nmse_w\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.t,
            r.cost,
            fmt_opt(r.nmse_f),
            fmt_opt(r.nmse_s),
            fmt_opt(r.nmse_w)
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Predicted shadowing and path loss of an arbitrary link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkPrediction {
    pub distance_m: f64,
    pub shadow_db: f64,
    pub pathloss_db: f64,
}

/// Predicts the link between two arbitrary points from a learned field.
pub fn predict_link(
    f: &DVector<f64>,
    grid: &GridSpec,
    window: &WindowModel,
    params: &PathLossParams,
    a: Point,
    b: Point,
) -> Result<LinkPrediction> {
    if f.len() != grid.pixel_count() {
        return Err(Error::dim("predict_link", grid.pixel_count(), f.len()));
    }
    let d = phi1(a, b);
    if d == 0.0 {
        return Err(Error::SelfLink(nearest_pixel(grid, a[0], a[1], 0).unwrap_or(0)));
    }
    let mut shadow = 0.0;
    for (xp, fp) in grid.coords().into_iter().zip(f.iter()) {
        shadow += window_weight(window, d, phi2(a, b, xp))? * fp;
    }
    Ok(LinkPrediction {
        distance_m: d,
        shadow_db: shadow,
        pathloss_db: params.free_space(d)? + shadow,
    })
}

/// NMSE of predicted against measured shadowing on pixel-indexed records.
pub fn shadowing_nmse(
    f: &DVector<f64>,
    grid: &GridSpec,
    window: &WindowModel,
    records: &[MeasurementRecord],
) -> Result<f64> {
    let p = grid.pixel_count();
    let links = records.iter().map(|r| r.link(p)).collect::<Result<Vec<_>>>()?;
    let measured = records
        .iter()
        .map(|r| {
            r.shadow
                .ok_or_else(|| Error::param("shadow", "record has no shadowing value"))
        })
        .collect::<Result<Vec<_>>>()?;
    let w = build_sparse_weight_matrix(grid, window, &links)?;
    nmse(&synth_shadowing_sparse(&w, f)?, &DVector::from_vec(measured))
}

pub fn write_report(path: &Path, report: &ExperimentReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the field as an ASCII graymap, one image row per grid row.
pub fn export_slf_map(f: &DVector<f64>, grid: &GridSpec, path: &Path) -> Result<()> {
    if f.len() != grid.pixel_count() {
        return Err(Error::dim("map export", grid.pixel_count(), f.len()));
    }
    let mut out = Vec::new();
    let io = |e| Error::io(path, e);
    writeln!(out, "P2\n{} {}\n255", grid.px, grid.py).map_err(io)?;
    for row in 0..grid.py {
        let line: Vec<String> = (0..grid.px)
            .map(|col| quantize(f[row * grid.px + col]).to_string())
            .collect();
        writeln!(out, "{}", line.join(" ")).map_err(io)?;
    }
    std::fs::write(path, out).map_err(io)
}

fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Reads back an ASCII graymap as `(width, height, values)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: &str| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: message.to_string(),
    };
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err(bad("missing P2 magic"));
    }
    let mut num = || -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| bad("truncated image"))?
            .parse()
            .map_err(|_| bad("non-numeric token"))
    };
    let (w, h, maxval) = (num()?, num()?, num()?);
    let mut values = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        let v = num()?;
        if v > maxval {
            return Err(bad("value above maxval"));
        }
        values.push(v as u16);
    }
    Ok((w, h, values))
}
