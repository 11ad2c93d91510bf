//! Run configuration: a `key = value` text format with command-line
//! overrides. Defaults depend on the source: synthetic scenarios start from
//! the synthetic-experiment parameters, ingested datasets from the V2V ones.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::ExperimentConfig;
use crate::propagation::{PathLossParams, WindowKind, WindowModel};
use crate::scenario::{manhattan_grid, GridSpec};

/// Wavelength of the 5.89 GHz V2V band, in meters.
pub const V2V_ETA: f64 = 299_792_458.0 / 5.89e9;

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Builtin(String),
    ScenarioFile(PathBuf),
    /// Raw received-power CSV.
    Ingestion(PathBuf),
    /// Derived-shadowing CSV.
    Shadowing(PathBuf),
}

impl SourceSpec {
    pub fn is_dataset(&self) -> bool {
        matches!(self, SourceSpec::Ingestion(_) | SourceSpec::Shadowing(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: SourceSpec,
    pub experiment: ExperimentConfig,
    pub path_loss: PathLossParams,
    pub p_tx: f64,
    /// Training share of an ingested dataset; the rest is the test set.
    pub train_fraction: f64,
    pub radii: Vec<f64>,
    pub out: PathBuf,
    pub stop_after: Option<usize>,
    /// Grid for dataset sources.
    pub grid: GridSpec,
}

const SOURCE_KEYS: [&str; 4] = ["scenario", "scenario_file", "dataset", "shadowing"];

/// A `key = value` assignment with its origin, for error messages.
#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub key: String,
    pub value: String,
    pub origin: String,
}

impl Setting {
    pub fn new(key: &str, value: &str, origin: &str) -> Self {
        Setting {
            key: key.to_string(),
            value: value.to_string(),
            origin: origin.to_string(),
        }
    }
}

/// Splits config text into settings; `#` starts a comment.
pub fn parse_settings(text: &str, source: &str) -> Result<Vec<Setting>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("{source}:{}: expected key = value", n + 1)));
        };
        out.push(Setting::new(k.trim(), v.trim(), &format!("{source}:{}", n + 1)));
    }
    Ok(out)
}

pub fn read_settings(path: &Path) -> Result<Vec<Setting>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_settings(&text, &path.display().to_string())
}

fn num<T: std::str::FromStr>(s: &Setting) -> Result<T> {
    s.value
        .parse()
        .map_err(|_| Error::Config(format!("{}: invalid value {:?} for key {}", s.origin, s.value, s.key)))
}

fn boolean(s: &Setting) -> Result<bool> {
    match s.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{}: invalid boolean {:?} for key {}",
            s.origin, s.value, s.key
        ))),
    }
}

impl RunConfig {
    /// Resolves settings in order; later settings win.
    pub fn resolve(settings: &[Setting]) -> Result<Self> {
        let sources: Vec<&Setting> = settings
            .iter()
            .filter(|s| SOURCE_KEYS.contains(&s.key.as_str()))
            .collect();
        let source = match sources.as_slice() {
            [] => {
                return Err(Error::Config(
                    "no source given: set one of scenario, scenario_file, dataset or shadowing".into(),
                ))
            }
            [s] => match s.key.as_str() {
                "scenario" => SourceSpec::Builtin(s.value.clone()),
                "scenario_file" => SourceSpec::ScenarioFile(PathBuf::from(&s.value)),
                "dataset" => SourceSpec::Ingestion(PathBuf::from(&s.value)),
                _ => SourceSpec::Shadowing(PathBuf::from(&s.value)),
            },
            many => {
                let names: Vec<String> = many.iter().map(|s| format!("{} ({})", s.key, s.origin)).collect();
                return Err(Error::Config(format!("conflicting sources: {}", names.join(", "))));
            }
        };
        let mut cfg = RunConfig::defaults(source);
        let mut kind = cfg.experiment.window.kind;
        let mut eta = cfg.experiment.window.eta;
        let mut nu: Option<f64> = None;
        let (mut px, mut py, mut size, mut ox, mut oy) = (
            cfg.grid.px,
            cfg.grid.py,
            cfg.grid.pixel_size,
            cfg.grid.origin[0],
            cfg.grid.origin[1],
        );
        for s in settings {
            let e = &mut cfg.experiment;
            match s.key.as_str() {
                k if SOURCE_KEYS.contains(&k) => {}
                "algorithm" => e.algorithm = s.value.parse()?,
                "radius" => {
                    cfg.radii = s
                        .value
                        .split(',')
                        .map(|v| Setting::new(&s.key, v.trim(), &s.origin))
                        .map(|v| num::<f64>(&v))
                        .collect::<Result<_>>()?;
                }
                "seed" => *e = e.with_seed(num(s)?),
                "m" => e.stream.m = num(s)?,
                "t_max" => e.stream.t_max = num(s)?,
                "replacement" => e.stream.replacement = boolean(s)?,
                "lam1" => e.hp.lam1 = num(s)?,
                "lam2" => e.hp.lam2 = num(s)?,
                "lam3" => e.hp.lam3 = num(s)?,
                "eps" => e.hp.eps = num(s)?,
                "inner_iters" => e.hp.inner_iters = num(s)?,
                "inner_tol" => e.hp.inner_tol = num(s)?,
                "sigma" => e.kernel.sigma = num(s)?,
                "standardize" => e.kernel.standardize = boolean(s)?,
                "window" => kind = s.value.parse::<WindowKind>()?,
                "eta" => eta = num(s)?,
                "nu" => nu = Some(num(s)?),
                "truth_band" => e.truth_band = num(s)?,
                "truth_delta" => e.truth_delta = num(s)?,
                "noise_std" => {
                    e.noise_std = num(s)?;
                    cfg.path_loss.noise_std = e.noise_std;
                }
                "holdout_fraction" => e.holdout_fraction = num(s)?,
                "pl0" => cfg.path_loss.pl0 = num(s)?,
                "d0" => cfg.path_loss.d0 = num(s)?,
                "delta" => cfg.path_loss.delta = num(s)?,
                "p_tx" => cfg.p_tx = num(s)?,
                "train_fraction" => cfg.train_fraction = num(s)?,
                "out" => cfg.out = PathBuf::from(&s.value),
                "stop_after" => cfg.stop_after = Some(num(s)?),
                "grid_px" => px = num(s)?,
                "grid_py" => py = num(s)?,
                "pixel_size" => size = num(s)?,
                "origin_x" => ox = num(s)?,
                "origin_y" => oy = num(s)?,
                other => {
                    return Err(Error::Config(format!("{}: unknown key {other:?}", s.origin)));
                }
            }
        }
        cfg.experiment.window =
            WindowModel::new(kind, eta, nu.unwrap_or(eta / 4.0)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.grid = GridSpec::new(px, py, size, [ox, oy]).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn defaults(source: SourceSpec) -> Self {
        let mut experiment = ExperimentConfig::default();
        let mut train_fraction = 1.0;
        if source.is_dataset() {
            experiment.hp.lam1 = 6e-4;
            experiment.hp.lam2 = 1e-5;
            experiment.hp.lam3 = 6.1e-4;
            experiment.stream.m = 60;
            experiment.stream.t_max = 200;
            experiment.window = WindowModel::normalized(V2V_ETA).expect("positive wavelength");
            experiment.window.nu = V2V_ETA / 4.0;
            train_fraction = 0.5;
        }
        RunConfig {
            source,
            experiment,
            path_loss: PathLossParams::default(),
            p_tx: 12.0,
            train_fraction,
            radii: vec![0.0],
            out: PathBuf::from("out"),
            stop_after: None,
            grid: manhattan_grid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.experiment.validate().map_err(wrap)?;
        self.path_loss.validate().map_err(wrap)?;
        if self.radii.is_empty() {
            return Err(Error::Config("radius list is empty".into()));
        }
        if let Some(r) = self.radii.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
            return Err(Error::Config(format!("radius {r} must be a nonnegative real")));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1]".into()));
        }
        if self.stop_after == Some(0) {
            return Err(Error::Config("stop_after must be at least 1".into()));
        }
        Ok(())
    }

    /// The experiment configuration of one sweep arm.
    pub fn arm(&self, radius: f64) -> ExperimentConfig {
        let mut e = self.experiment;
        e.hp.radius = radius;
        e
    }

    /// Fully resolved configuration as `key = value` text.
    pub fn echo(&self) -> String {
        let e = &self.experiment;
        let mut out = String::new();
        let (key, val) = match &self.source {
            SourceSpec::Builtin(n) => ("scenario", n.clone()),
            SourceSpec::ScenarioFile(p) => ("scenario_file", p.display().to_string()),
            SourceSpec::Ingestion(p) => ("dataset", p.display().to_string()),
            SourceSpec::Shadowing(p) => ("shadowing", p.display().to_string()),
        };
        let radii: Vec<String> = self.radii.iter().map(f64::to_string).collect();
        let kind = match e.window.kind {
            WindowKind::NormalizedElliptical => "normalized_elliptical",
            WindowKind::InverseAreaElliptical => "inverse_area_elliptical",
        };
        let pairs: Vec<(&str, String)> = vec![
            (key, val),
            ("algorithm", e.algorithm.to_string()),
            ("radius", radii.join(",")),
            ("seed", e.hp.seed.to_string()),
            ("m", e.stream.m.to_string()),
            ("t_max", e.stream.t_max.to_string()),
            ("replacement", e.stream.replacement.to_string()),
            ("lam1", e.hp.lam1.to_string()),
            ("lam2", e.hp.lam2.to_string()),
            ("lam3", e.hp.lam3.to_string()),
            ("eps", e.hp.eps.to_string()),
            ("inner_iters", e.hp.inner_iters.to_string()),
            ("inner_tol", e.hp.inner_tol.to_string()),
            ("sigma", e.kernel.sigma.to_string()),
            ("standardize", e.kernel.standardize.to_string()),
            ("window", kind.to_string()),
            ("eta", e.window.eta.to_string()),
            ("nu", e.window.nu.to_string()),
            ("truth_band", e.truth_band.to_string()),
            ("truth_delta", e.truth_delta.to_string()),
            ("noise_std", e.noise_std.to_string()),
            ("holdout_fraction", e.holdout_fraction.to_string()),
            ("pl0", self.path_loss.pl0.to_string()),
            ("d0", self.path_loss.d0.to_string()),
            ("delta", self.path_loss.delta.to_string()),
            ("p_tx", self.p_tx.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("out", self.out.display().to_string()),
            ("grid_px", self.grid.px.to_string()),
            ("grid_py", self.grid.py.to_string()),
            ("pixel_size", self.grid.pixel_size.to_string()),
            ("origin_x", self.grid.origin[0].to_string()),
            ("origin_y", self.grid.origin[1].to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        if let Some(s) = self.stop_after {
            let _ = writeln!(out, "stop_after = {s}");
        }
        out
    }
}
