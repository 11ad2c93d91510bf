use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rayon::prelude::*;

use slf_lab::checkpoint::Checkpoint;
use slf_lab::config::{read_settings, RunConfig, Setting, SourceSpec};
use slf_lab::data::{
    derive_shadowing, ingest, read_ingestion_csv, read_shadowing_csv, road_links, sample_batch, split_train_test,
    write_shadowing_csv, MeasurementRecord,
};
use slf_lab::data::{derived_rng, RngPurpose};
use slf_lab::eval::{
    export_slf_map, predict_link, shadowing_nmse, write_learning_curve, write_report, Experiment, Source,
};
use slf_lab::propagation::{
    build_sparse_weight_matrix, synth_pathloss, synth_shadowing_sparse, write_measurements, MeasurementRow,
    WindowFunction,
};
use slf_lab::scenario::{builtin, link_count, phi1, Scenario};
use slf_lab::{Error, Result};

#[derive(Parser)]
#[command(name = "slf-lab", version, about = "Online any-to-any path-loss map learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a scenario file and a synthetic measurement stream.
    Generate(Common),
    /// Run the learner (one arm per radius).
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint (single radius only).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a test set or query a single link.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Shadowing CSV (i,j,distance_m,shadow_db) or raw ingestion CSV.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Link endpoints "x1,y1,x2,y2" in meters.
        #[arg(long, allow_hyphen_values = true)]
        query: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    radius: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any configuration key, as KEY=VALUE.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut settings = match &self.config {
            Some(p) => read_settings(p)?,
            None => Vec::new(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            settings.push(Setting::new(k.trim(), v.trim(), "--set"));
        }
        if let Some(a) = &self.algorithm {
            settings.push(Setting::new("algorithm", a, "--algorithm"));
        }
        if !self.radius.is_empty() {
            let list: Vec<String> = self.radius.iter().map(f64::to_string).collect();
            settings.push(Setting::new("radius", &list.join(","), "--radius"));
        }
        if let Some(s) = self.seed {
            settings.push(Setting::new("seed", &s.to_string(), "--seed"));
        }
        if let Some(o) = &self.out {
            settings.push(Setting::new("out", &o.display().to_string(), "--out"));
        }
        RunConfig::resolve(&settings)
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_scenario(spec: &SourceSpec) -> Result<Scenario> {
    match spec {
        SourceSpec::Builtin(name) => {
            builtin(name).ok_or_else(|| Error::Config(format!("unknown builtin scenario {name:?}")))
        }
        SourceSpec::ScenarioFile(path) => Scenario::read(path),
        _ => Err(Error::Config(
            "this command needs a scenario or scenario_file source".into(),
        )),
    }
}

fn load_records(cfg: &RunConfig) -> Result<Vec<MeasurementRecord>> {
    match &cfg.source {
        SourceSpec::Ingestion(path) => {
            let raw = read_ingestion_csv(path)?;
            let ing = ingest(&raw, &cfg.grid, &cfg.path_loss, cfg.p_tx)?;
            if ing.dropped_same_pixel > 0 {
                eprintln!(
                    "dropped {} records with both endpoints in one pixel",
                    ing.dropped_same_pixel
                );
            }
            Ok(ing.records)
        }
        SourceSpec::Shadowing(path) => read_shadowing_csv(path),
        _ => unreachable!("dataset source"),
    }
}

fn build_source(cfg: &RunConfig) -> Result<(Source, Option<Vec<f64>>)> {
    if cfg.source.is_dataset() {
        let records = load_records(cfg)?;
        let (train, test) = if cfg.train_fraction < 1.0 {
            split_train_test(&records, cfg.train_fraction, cfg.experiment.stream.seed)?
        } else {
            (records, Vec::new())
        };
        Ok((Source::dataset(cfg.grid, train, test, &cfg.experiment.window)?, None))
    } else {
        let scenario = load_scenario(&cfg.source)?;
        let field = scenario.slf.clone();
        Ok((Source::synthetic(scenario, &cfg.experiment)?, Some(field)))
    }
}

fn cmd_generate(common: &Common) -> Result<()> {
    let cfg = common.resolve()?;
    let scenario = load_scenario(&cfg.source)?;
    let source = Source::synthetic(scenario.clone(), &cfg.experiment)?;
    let Source::Synthetic(syn) = &source else {
        unreachable!()
    };
    let grid = scenario.grid;
    let p = grid.pixel_count();
    let p_tx = scenario.road_pixels().len();
    let t_all = link_count(p);
    let t_tx = scenario.road_link_count();
    let stream = cfg.experiment.stream;
    let samples = stream.total_draws();
    println!("P = {p}");
    println!("P_tx = {p_tx}");
    println!("T = {t_all}");
    println!("T_tx = {t_tx}");
    println!(
        "stream = {samples} samples ({:.2}% of T_tx, {:.2}% of T)",
        100.0 * samples as f64 / t_tx as f64,
        100.0 * samples as f64 / t_all as f64
    );

    create_dir(&cfg.out)?;
    scenario.write(&cfg.out.join("scenario.txt"))?;
    let pool = road_links(&scenario);
    let window: &dyn WindowFunction = match &syn.truth {
        Some(tw) => tw,
        None => &cfg.experiment.window,
    };
    let f = DVector::from_column_slice(&scenario.slf);
    let coords = grid.coords();
    let mut rows = Vec::with_capacity(samples as usize);
    let mut records = Vec::with_capacity(samples as usize);
    for t in 1..=stream.t_max {
        let links: Vec<_> = sample_batch(pool.len(), &stream, t)?
            .into_iter()
            .map(|k| pool[k])
            .collect();
        let s = synth_shadowing_sparse(&build_sparse_weight_matrix(&grid, window, &links)?, &f)?;
        let mut rng = derived_rng(stream.seed, RngPurpose::Noise, t);
        for (l, &shadow) in links.iter().zip(s.iter()) {
            let d = phi1(coords[l.i - 1], coords[l.j - 1]);
            let pl = synth_pathloss(&cfg.path_loss, d, shadow, &mut rng)?;
            let mut rec = MeasurementRecord {
                i: l.i,
                j: l.j,
                distance: d,
                rx_power: Some(cfg.p_tx - pl),
                shadow: None,
            };
            rec.shadow = Some(derive_shadowing(&rec, &cfg.path_loss, cfg.p_tx)?);
            rows.push(MeasurementRow {
                t,
                i: l.i,
                j: l.j,
                shadow_db: shadow,
                pathloss_db: pl,
                distance_m: d,
            });
            records.push(rec);
        }
    }
    write_measurements(&cfg.out.join("measurements.csv"), &rows)?;
    write_shadowing_csv(&cfg.out.join("shadowing.csv"), &records)?;
    std::fs::write(cfg.out.join("config.txt"), cfg.echo()).map_err(|e| Error::io(&cfg.out, e))?;
    println!("wrote {}", cfg.out.display());
    Ok(())
}

fn arm_dir(out: &Path, radius: f64) -> PathBuf {
    out.join(format!("r{radius}"))
}

fn run_arm(
    cfg: &RunConfig,
    source: &Source,
    field: &Option<Vec<f64>>,
    radius: f64,
    resume: Option<&Path>,
) -> Result<String> {
    let arm = cfg.arm(radius);
    let grid = *source.grid();
    let mut exp = match resume {
        Some(path) => {
            let cp = Checkpoint::load(path)?;
            cp.check_compatible(&arm, &grid)?;
            Experiment::resume(source, arm, cp.progress)?
        }
        None => Experiment::new(source, arm)?,
    };
    exp.run(cfg.stop_after)?;
    let dir = arm_dir(&cfg.out, radius);
    create_dir(&dir)?;
    let report = exp.report();
    write_learning_curve(&dir.join("learning_curve.csv"), &report.per_t)?;
    write_report(&dir.join("report.json"), &report)?;
    export_slf_map(&exp.state().f, &grid, &dir.join("slf_map.pgm"))?;
    let mut echo = cfg.clone();
    echo.radii = vec![radius];
    std::fs::write(dir.join("config.txt"), echo.echo()).map_err(|e| Error::io(&dir, e))?;
    let mut cp = Checkpoint::new(arm, grid, exp.into_progress());
    cp.path_loss = cfg.path_loss;
    cp.p_tx = cfg.p_tx;
    cp.reference_field = field.clone();
    cp.save(&dir.join("checkpoint.json"))?;

    let mut line = format!("r = {radius}: t = {}", cp.progress.state.t);
    if let Some(last) = report.last() {
        line += &format!(", cost = {:.6e}", last.cost);
        for (name, v) in [
            ("nmse_f", last.nmse_f),
            ("nmse_s", last.nmse_s),
            ("nmse_w", last.nmse_w),
        ] {
            if let Some(v) = v {
                line += &format!(", {name} = {v:.6e}");
            }
        }
    }
    let audit = &report.audit;
    if audit.violations() > 0 {
        line += &format!(", descent violations = {}", audit.violations());
    }
    Ok(format!("{line} -> {}", dir.display()))
}

fn cmd_train(common: &Common, resume: Option<&Path>) -> Result<()> {
    let cfg = common.resolve()?;
    if resume.is_some() && cfg.radii.len() != 1 {
        return Err(Error::Config("--resume needs exactly one radius".into()));
    }
    let (source, field) = build_source(&cfg)?;
    create_dir(&cfg.out)?;
    let lines: Vec<String> = cfg
        .radii
        .par_iter()
        .map(|&r| run_arm(&cfg, &source, &field, r, resume))
        .collect::<Result<_>>()?;
    for l in lines {
        println!("{l}");
    }
    Ok(())
}

fn parse_query(q: &str) -> Result<([f64; 2], [f64; 2])> {
    let v: Vec<f64> = q
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("--query expects \"x1,y1,x2,y2\", got {q:?}")))?;
    match v.as_slice() {
        [x1, y1, x2, y2] if v.iter().all(|x| x.is_finite()) => Ok(([*x1, *y1], [*x2, *y2])),
        _ => Err(Error::Config(format!("--query expects four finite numbers, got {q:?}"))),
    }
}

fn load_test_set(path: &Path, cp: &Checkpoint) -> Result<Vec<MeasurementRecord>> {
    let records = match read_shadowing_csv(path) {
        Ok(r) => r,
        Err(Error::Parse { line: 1, .. }) => {
            let raw = read_ingestion_csv(path)?;
            if raw.is_empty() {
                return Ok(Vec::new());
            }
            ingest(&raw, &cp.grid, &cp.path_loss, cp.p_tx)?.records
        }
        Err(e) => return Err(e),
    };
    let p = cp.grid.pixel_count();
    if let Some(r) = records.iter().find(|r| r.j > p) {
        return Err(Error::GridMismatch(format!(
            "test set references pixel {} but the checkpoint grid has {p} pixels",
            r.j
        )));
    }
    Ok(records)
}

fn cmd_eval(checkpoint: &Path, test: Option<&Path>, query: Option<&str>, out: Option<&Path>) -> Result<()> {
    let cp = Checkpoint::load(checkpoint)?;
    let f = &cp.progress.state.f;
    let window = &cp.config.window;
    let mut summary = serde_json::Map::new();
    summary.insert("t".into(), cp.progress.state.t.into());
    if let Some(reference) = &cp.reference_field {
        let truth = DVector::from_column_slice(reference);
        let v = slf_lab::eval::nmse(f, &truth)?;
        println!("nmse_f = {v:.6e}");
        summary.insert("nmse_f".into(), v.into());
    }
    if let Some(path) = test {
        let records = load_test_set(path, &cp)?;
        if records.is_empty() {
            println!("test set is empty; metrics omitted");
        } else {
            let v = shadowing_nmse(f, &cp.grid, window, &records)?;
            println!("nmse_s = {v:.6e} ({} test links)", records.len());
            summary.insert("nmse_s".into(), v.into());
            summary.insert("test_links".into(), records.len().into());
        }
    }
    if let Some(q) = query {
        let (a, b) = parse_query(q)?;
        let pred = predict_link(f, &cp.grid, window, &cp.path_loss, a, b)?;
        println!("distance_m = {}", pred.distance_m);
        println!("shadow_db = {}", pred.shadow_db);
        println!("pathloss_db = {}", pred.pathloss_db);
        summary.insert("query".into(), serde_json::to_value(pred)?);
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        let path = dir.join("eval.json");
        let text = serde_json::to_string_pretty(&serde_json::Value::Object(summary))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("SLF_LAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("SLF_LAB_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Generate(c) => cmd_generate(c),
        Command::Train { common, resume } => cmd_train(common, resume.as_deref()),
        Command::Eval {
            checkpoint,
            test,
            query,
            out,
        } => cmd_eval(checkpoint, test.as_deref(), query.as_deref(), out.as_deref()),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
