//! Map geometry, ground-truth spatial loss fields and link indexing.
//!
//! Pixels are numbered `1..=P` in row-major order (row varies slowest). The
//! center of pixel `(col, row)` sits at `origin + pixel_size * (col - 1, row - 1)`.
//! Links are unordered pixel pairs; `(i, j)` with `i < j` maps to the dense
//! triangular index `m = (j - 1)(j - 2)/2 + i`, which enumerates `1..=P(P-1)/2`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

const MADRID_FIXTURE: &str = include_str!("../fixtures/madrid.scenario");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub px: usize,
    pub py: usize,
    pub pixel_size: f64,
    pub origin: Point,
}

impl GridSpec {
    pub fn new(px: usize, py: usize, pixel_size: f64, origin: Point) -> Result<Self> {
        if px == 0 || py == 0 {
            return Err(Error::param("grid", "pixel counts must be positive"));
        }
        if !(pixel_size > 0.0) || !pixel_size.is_finite() {
            return Err(Error::param("pixel_size", "must be a positive real"));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::param("origin", "must be finite"));
        }
        Ok(GridSpec {
            px,
            py,
            pixel_size,
            origin,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.px * self.py
    }

    /// Center of pixel `p` (1-based).
    pub fn coord(&self, p: usize) -> Point {
        let k = p - 1;
        let col = (k % self.px) as f64;
        let row = (k / self.px) as f64;
        [
            self.origin[0] + self.pixel_size * col,
            self.origin[1] + self.pixel_size * row,
        ]
    }

    /// Centers of all pixels, indexed by `p - 1`.
    pub fn coords(&self) -> Vec<Point> {
        (1..=self.pixel_count()).map(|p| self.coord(p)).collect()
    }

    pub fn check_pixel(&self, p: usize) -> Result<()> {
        let count = self.pixel_count();
        if p == 0 || p > count {
            return Err(Error::PixelOutOfRange { index: p, count });
        }
        Ok(())
    }

    pub fn link_count(&self) -> u64 {
        link_count(self.pixel_count())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub grid: GridSpec,
    pub slf: Vec<f64>,
    pub road_mask: Vec<bool>,
}

impl Scenario {
    pub fn new(grid: GridSpec, slf: Vec<f64>, road_mask: Vec<bool>) -> Result<Self> {
        let p = grid.pixel_count();
        if slf.len() != p {
            return Err(Error::dim("scenario slf", p, slf.len()));
        }
        if road_mask.len() != p {
            return Err(Error::dim("scenario road mask", p, road_mask.len()));
        }
        if !slf.iter().all(|v| v.is_finite()) {
            return Err(Error::param("slf", "entries must be finite"));
        }
        Ok(Scenario { grid, slf, road_mask })
    }

    /// A scenario with an empty (all-zero) field where every pixel is admissible.
    /// Used for datasets that carry no ground truth.
    pub fn bare(grid: GridSpec) -> Self {
        let p = grid.pixel_count();
        Scenario {
            grid,
            slf: vec![0.0; p],
            road_mask: vec![true; p],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.grid.pixel_count()
    }

    /// 1-based indices of road pixels, ascending.
    pub fn road_pixels(&self) -> Vec<usize> {
        self.road_mask
            .iter()
            .enumerate()
            .filter_map(|(k, &r)| r.then_some(k + 1))
            .collect()
    }

    pub fn road_count(&self) -> usize {
        self.road_mask.iter().filter(|&&r| r).count()
    }

    /// Number of links with both endpoints on road pixels.
    pub fn road_link_count(&self) -> u64 {
        link_count(self.road_count())
    }

    pub fn has_ground_truth(&self) -> bool {
        self.slf.iter().any(|&v| v != 0.0)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.pixel_count() * 8 + 64);
        out.push_str("# slf-lab scenario v1\n");
        let _ = writeln!(out, "px {}", self.grid.px);
        let _ = writeln!(out, "py {}", self.grid.py);
        let _ = writeln!(out, "pixel_size {}", self.grid.pixel_size);
        let _ = writeln!(out, "origin {} {}", self.grid.origin[0], self.grid.origin[1]);
        for (v, r) in self.slf.iter().zip(&self.road_mask) {
            let _ = writeln!(out, "{} {}", v, u8::from(*r));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses the scenario text format: header keys `px`, `py`, `pixel_size`,
    /// `origin`, then one `slf_value road_flag` line per pixel. `#` starts a
    /// comment line.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: source.to_string(),
            line,
            message,
        };
        let mut px = None;
        let mut py = None;
        let mut size = None;
        let mut origin = None;
        let mut slf = Vec::new();
        let mut road = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| perr(line_no, format!("invalid number {s:?}")))
            };
            match fields[0] {
                "px" | "py" => {
                    let v = fields
                        .get(1)
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or_else(|| perr(line_no, format!("{} needs a positive integer", fields[0])))?;
                    if fields[0] == "px" {
                        px = Some(v);
                    } else {
                        py = Some(v);
                    }
                }
                "pixel_size" => {
                    let s = fields.get(1).ok_or_else(|| perr(line_no, "missing value".into()))?;
                    size = Some(num(s)?);
                }
                "origin" => {
                    if fields.len() != 3 {
                        return Err(perr(line_no, "origin needs two coordinates".into()));
                    }
                    origin = Some([num(fields[1])?, num(fields[2])?]);
                }
                _ => {
                    if fields.len() != 2 {
                        return Err(perr(line_no, "expected `slf_value road_flag`".into()));
                    }
                    slf.push(num(fields[0])?);
                    road.push(match fields[1] {
                        "1" | "true" => true,
                        "0" | "false" => false,
                        other => return Err(perr(line_no, format!("invalid road flag {other:?}"))),
                    });
                }
            }
        }
        let missing = |key: &str| perr(0, format!("missing header key {key}"));
        let grid = GridSpec::new(
            px.ok_or_else(|| missing("px"))?,
            py.ok_or_else(|| missing("py"))?,
            size.ok_or_else(|| missing("pixel_size"))?,
            origin.ok_or_else(|| missing("origin"))?,
        )?;
        Scenario::new(grid, slf, road)
    }
}

/// Canonical link between two distinct pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkId {
    pub i: usize,
    pub j: usize,
    pub m: u64,
}

pub fn link_count(pixels: usize) -> u64 {
    let p = pixels as u64;
    p * p.saturating_sub(1) / 2
}

/// Maps the unordered pair `{i, j}` of 1-based pixel indices to its link.
pub fn link_index(i: usize, j: usize, pixels: usize) -> Result<LinkId> {
    for idx in [i, j] {
        if idx == 0 || idx > pixels {
            return Err(Error::PixelOutOfRange {
                index: idx,
                count: pixels,
            });
        }
    }
    if i == j {
        return Err(Error::SelfLink(i));
    }
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    let (iu, ju) = (i as u64, j as u64);
    Ok(LinkId {
        i,
        j,
        m: (ju - 1) * (ju - 2) / 2 + iu,
    })
}

/// Inverse of [`link_index`].
pub fn link_from_index(m: u64, pixels: usize) -> Result<LinkId> {
    let count = link_count(pixels);
    if m == 0 || m > count {
        return Err(Error::LinkOutOfRange { index: m, count });
    }
    // j is the smallest integer with j(j-1)/2 >= m
    let mut j = ((1.0 + (1.0 + 8.0 * m as f64).sqrt()) / 2.0).ceil() as u64;
    while j > 2 && (j - 1) * (j - 2) / 2 >= m {
        j -= 1;
    }
    while j * (j - 1) / 2 < m {
        j += 1;
    }
    let i = m - (j - 1) * (j - 2) / 2;
    Ok(LinkId {
        i: i as usize,
        j: j as usize,
        m,
    })
}

/// Length of the direct path between two points.
pub fn phi1(xi: Point, xj: Point) -> f64 {
    (xi[0] - xj[0]).hypot(xi[1] - xj[1])
}

/// Length of the path from `xi` to `xj` through `xp`.
pub fn phi2(xi: Point, xj: Point, xp: Point) -> f64 {
    (xp[0] - xi[0]).hypot(xp[1] - xi[1]) + (xp[0] - xj[0]).hypot(xp[1] - xj[1])
}

/// The 56x39 Madrid-grid scenario shipped as a fixture.
pub fn build_madrid_scenario() -> Scenario {
    Scenario::parse(MADRID_FIXTURE, "fixtures/madrid.scenario").expect("bundled fixture is valid")
}

/// Rectangle `(col0, row0, width, height, slf)` in 0-based pixel units.
type Block = (usize, usize, usize, usize, f64);

const DESK_BLOCKS: [Block; 6] = [
    (1, 1, 5, 6, 1.0),
    (8, 1, 5, 6, 1.0),
    (14, 1, 5, 6, 0.1),
    (1, 8, 5, 6, 1.0),
    (8, 8, 5, 6, 1.0),
    (14, 8, 5, 6, 1.0),
];

/// Rasterizes axis-aligned blocks onto an all-road grid, clipping at the edges.
pub fn rasterize_blocks(grid: GridSpec, blocks: &[Block]) -> Scenario {
    let mut slf = vec![0.0; grid.pixel_count()];
    let mut road = vec![true; grid.pixel_count()];
    for &(c0, r0, w, h, v) in blocks {
        for row in r0..(r0 + h).min(grid.py) {
            for col in c0..(c0 + w).min(grid.px) {
                let k = row * grid.px + col;
                slf[k] = v;
                road[k] = false;
            }
        }
    }
    Scenario {
        grid,
        slf,
        road_mask: road,
    }
}

/// A 20x15 city-block map with 1 m pixels for fast experiments.
pub fn build_desk_scenario() -> Scenario {
    let grid = GridSpec::new(20, 15, 1.0, [0.5, 0.5]).expect("static grid");
    rasterize_blocks(grid, &DESK_BLOCKS)
}

/// The 30x22 grid of 6 m pixels used for ingested V2V datasets.
pub fn manhattan_grid() -> GridSpec {
    GridSpec::new(30, 22, 6.0, [3.0, 3.0]).expect("static grid")
}

pub fn builtin(name: &str) -> Option<Scenario> {
    match name {
        "madrid" => Some(build_madrid_scenario()),
        "desk20x15" | "desk" => Some(build_desk_scenario()),
        _ => None,
    }
}
