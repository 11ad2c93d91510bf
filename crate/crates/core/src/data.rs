//! Measurement streams: seeded batch sampling, ingestion of received-power
//! datasets, shadowing derivation and train/test splitting.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::PathLossParams;
use crate::scenario::{link_index, phi1, GridSpec, LinkId, Point, Scenario};

/// Independent random streams used by a run. Each `(seed, purpose, t)`
/// triple gets its own generator, so any batch can be regenerated without
/// replaying earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngPurpose {
    Batches = 1,
    AlphaInit = 2,
    Noise = 3,
    Split = 4,
    Holdout = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derived_rng(seed: u64, purpose: RngPurpose, t: usize) -> ChaCha8Rng {
    let key = splitmix(splitmix(splitmix(seed) ^ purpose as u64) ^ t as u64);
    ChaCha8Rng::seed_from_u64(key)
}

/// One link observation on the grid. Exactly one of `rx_power` / `shadow`
/// is set for ingested data; synthetic records carry the shadow directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub rx_power: Option<f64>,
    pub shadow: Option<f64>,
}

impl MeasurementRecord {
    pub fn link(&self, pixels: usize) -> Result<LinkId> {
        link_index(self.i, self.j, pixels)
    }
}

/// Shadowing left after removing free-space loss from the measured path loss.
pub fn derive_shadowing(record: &MeasurementRecord, params: &PathLossParams, p_tx: f64) -> Result<f64> {
    let rx = record
        .rx_power
        .ok_or_else(|| Error::param("rx_power", "record carries no received power"))?;
    let pl = p_tx - rx;
    Ok(pl - params.free_space(record.distance)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub m: usize,
    pub t_max: usize,
    pub seed: u64,
    pub replacement: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            m: 120,
            t_max: 200,
            seed: 0,
            replacement: true,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::param("m", "batch size must be at least 1"));
        }
        if self.t_max == 0 {
            return Err(Error::param("t_max", "must be at least 1"));
        }
        Ok(())
    }

    pub fn total_draws(&self) -> u64 {
        self.m as u64 * self.t_max as u64
    }
}

/// All links between two road pixels, in increasing link-index order.
pub fn road_links(scenario: &Scenario) -> Vec<LinkId> {
    let roads = scenario.road_pixels();
    let p = scenario.pixel_count();
    let mut links = Vec::with_capacity(roads.len() * roads.len().saturating_sub(1) / 2);
    for (a, &j) in roads.iter().enumerate() {
        for &i in &roads[..a] {
            links.push(link_index(i, j, p).expect("road pixels are distinct and in range"));
        }
    }
    links
}

/// Indices into a source of size `source_len` for batch `t` (1-based).
pub fn sample_batch(source_len: usize, cfg: &StreamConfig, t: usize) -> Result<Vec<usize>> {
    cfg.validate()?;
    if source_len == 0 {
        return Err(Error::EmptySource("measurement source"));
    }
    if cfg.replacement {
        let mut rng = derived_rng(cfg.seed, RngPurpose::Batches, t);
        return Ok((0..cfg.m).map(|_| rng.random_range(0..source_len)).collect());
    }
    // without replacement: consecutive slices of per-epoch permutations
    let start = (t - 1) * cfg.m;
    let mut out = Vec::with_capacity(cfg.m);
    let mut epoch = usize::MAX;
    let mut perm: Vec<usize> = Vec::new();
    for k in start..start + cfg.m {
        let e = k / source_len;
        if e != epoch {
            epoch = e;
            perm = (0..source_len).collect();
            perm.shuffle(&mut derived_rng(cfg.seed, RngPurpose::Batches, e));
        }
        out.push(perm[k % source_len]);
    }
    Ok(out)
}

/// The whole stream: `t_max` batches of `m` indices.
pub fn sample_batches(source_len: usize, cfg: &StreamConfig) -> Result<Vec<Vec<usize>>> {
    (1..=cfg.t_max).map(|t| sample_batch(source_len, cfg, t)).collect()
}

/// A raw ingestion row with planar coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub tx_x: f64,
    pub tx_y: f64,
    pub rx_x: f64,
    pub rx_y: f64,
    pub rx_power_dbm: f64,
}

fn axis_index(v: f64, origin: f64, size: f64, count: usize) -> Option<usize> {
    let u = (v - origin) / size;
    if !(u >= -0.5 && u <= count as f64 - 0.5) {
        return None;
    }
    // nearest center; exact midpoints go to the lower index
    Some(((u - 0.5).ceil().max(0.0)) as usize)
}

/// Nearest pixel center (1-based) for a coordinate.
pub fn nearest_pixel(grid: &GridSpec, x: f64, y: f64, record: usize) -> Result<usize> {
    let col = axis_index(x, grid.origin[0], grid.pixel_size, grid.px);
    let row = axis_index(y, grid.origin[1], grid.pixel_size, grid.py);
    match (col, row) {
        (Some(c), Some(r)) => Ok(r * grid.px + c + 1),
        _ => Err(Error::OutOfGrid { record, x, y }),
    }
}

/// Maps both endpoints of a raw record to pixels; `distance` is the raw
/// Euclidean distance between the endpoints.
pub fn assign_to_grid(raw: &RawRecord, grid: &GridSpec, record: usize) -> Result<MeasurementRecord> {
    let a = nearest_pixel(grid, raw.tx_x, raw.tx_y, record)?;
    let b = nearest_pixel(grid, raw.rx_x, raw.rx_y, record)?;
    let tx: Point = [raw.tx_x, raw.tx_y];
    let rx: Point = [raw.rx_x, raw.rx_y];
    Ok(MeasurementRecord {
        i: a.min(b),
        j: a.max(b),
        distance: phi1(tx, rx),
        rx_power: Some(raw.rx_power_dbm),
        shadow: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    /// Records with derived shadowing, in file order.
    pub records: Vec<MeasurementRecord>,
    /// Records whose endpoints fell into the same pixel.
    pub dropped_same_pixel: usize,
}

pub fn ingest(raw: &[RawRecord], grid: &GridSpec, params: &PathLossParams, p_tx: f64) -> Result<Ingested> {
    params.validate()?;
    let mut records = Vec::with_capacity(raw.len());
    let mut dropped = 0;
    for (n, r) in raw.iter().enumerate() {
        let mut rec = assign_to_grid(r, grid, n + 1)?;
        if rec.i == rec.j {
            dropped += 1;
            continue;
        }
        rec.shadow = Some(derive_shadowing(&rec, params, p_tx)?);
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::EmptySource("ingested dataset"));
    }
    Ok(Ingested {
        records,
        dropped_same_pixel: dropped,
    })
}

const INGEST_HEADER: [&str; 5] = ["tx_x", "tx_y", "rx_x", "rx_y", "rx_power_dbm"];
const SHADOW_HEADER: [&str; 4] = ["i", "j", "distance_m", "shadow_db"];

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("expected header {}, found {}", header.join(","), found.join(",")),
        });
    }
    Ok(rdr)
}

fn parse_fields<T: std::str::FromStr>(path: &Path, record: &csv::StringRecord, width: usize) -> Result<Vec<T>> {
    let line = record.position().map_or(0, |p| p.line() as usize);
    let err = |message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    if record.len() != width {
        return Err(err(format!("expected {width} fields, found {}", record.len())));
    }
    record
        .iter()
        .map(|s| s.parse::<T>().map_err(|_| err(format!("cannot parse {s:?}"))))
        .collect()
}

pub fn read_ingestion_csv(path: &Path) -> Result<Vec<RawRecord>> {
    let mut rdr = open_csv(path, &INGEST_HEADER)?;
    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line,
                    message: e.to_string(),
                });
            }
        }
        let v: Vec<f64> = parse_fields(path, &rec, 5)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: rec.position().map_or(0, |p| p.line() as usize),
                message: "non-finite value".into(),
            });
        }
        out.push(RawRecord {
            tx_x: v[0],
            tx_y: v[1],
            rx_x: v[2],
            rx_y: v[3],
            rx_power_dbm: v[4],
        });
    }
    Ok(out)
}

pub fn write_shadowing_csv(path: &Path, records: &[MeasurementRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SHADOW_HEADER)?;
    for r in records {
        let shadow = r
            .shadow
            .ok_or_else(|| Error::param("shadow", "record has no shadowing value"))?;
        w.write_record([
            r.i.to_string(),
            r.j.to_string(),
            r.distance.to_string(),
            shadow.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_shadowing_csv(path: &Path) -> Result<Vec<MeasurementRecord>> {
    let mut rdr = open_csv(path, &SHADOW_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let ij: Vec<usize> =
            parse_fields(path, &csv::StringRecord::from(vec![&rec[0], &rec[1]]), 2).map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line,
                message: "pixel indices must be positive integers".into(),
            })?;
        let vals: Vec<f64> =
            parse_fields(path, &csv::StringRecord::from(vec![&rec[2], &rec[3]]), 2).map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line,
                message: "distance and shadow must be reals".into(),
            })?;
        if ij[0] == ij[1] || !(vals[0] > 0.0) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                message: "links need distinct pixels and positive distance".into(),
            });
        }
        out.push(MeasurementRecord {
            i: ij[0].min(ij[1]),
            j: ij[0].max(ij[1]),
            distance: vals[0],
            rx_power: None,
            shadow: Some(vals[1]),
        });
    }
    Ok(out)
}

/// Uniform random split without replacement. The training part has
/// `floor(fraction * D)` elements; both parts keep the original order.
pub fn split_train_test<T: Clone>(data: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if data.is_empty() {
        return Err(Error::EmptySource("dataset"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param("fraction", "must lie in (0, 1]"));
    }
    split_with(data, fraction, &mut derived_rng(seed, RngPurpose::Split, 0))
}

pub(crate) fn split_with<T: Clone, R: Rng>(data: &[T], fraction: f64, rng: &mut R) -> Result<(Vec<T>, Vec<T>)> {
    let n_train = (fraction * data.len() as f64).floor() as usize;
    let mut perm: Vec<usize> = (0..data.len()).collect();
    perm.shuffle(rng);
    let mut in_train = vec![false; data.len()];
    for &k in &perm[..n_train] {
        in_train[k] = true;
    }
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(data.len() - n_train);
    for (k, item) in data.iter().enumerate() {
        if in_train[k] {
            train.push(item.clone());
        } else {
            test.push(item.clone());
        }
    }
    Ok((train, test))
}
