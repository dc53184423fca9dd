//! Log-odds occupancy grid shared by both SLAM backends and the merger, plus
//! its on-disk (PGM + metadata) and wire (binary body) forms.

use crate::geometry::Pose2;
use crate::world::LaserScan;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const LOG_ODDS_MIN: f32 = -4.0;
pub const LOG_ODDS_MAX: f32 = 4.0;
pub const LOG_ODDS_HIT: f32 = 0.85;
pub const LOG_ODDS_MISS: f32 = -0.4;
pub const OCCUPIED_THRESHOLD: f32 = 0.85;
pub const FREE_THRESHOLD: f32 = -0.85;
/// Log-odds assigned to imported ternary cells.
const IMPORTED_EVIDENCE: f32 = 2.0;

pub const PGM_OCCUPIED: u8 = 0;
pub const PGM_FREE: u8 = 254;
pub const PGM_UNKNOWN: u8 = 205;

const BODY_MAGIC: &[u8; 4] = b"OGRD";
const BODY_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellClass {
    Occupied,
    Free,
    Unknown,
}

pub fn classify(log_odds: f32) -> CellClass {
    if log_odds > OCCUPIED_THRESHOLD {
        CellClass::Occupied
    } else if log_odds < FREE_THRESHOLD {
        CellClass::Free
    } else {
        CellClass::Unknown
    }
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error("malformed map metadata: {0}")]
    Meta(String),
    #[error("malformed map body: {0}")]
    Body(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    resolution: f64,
    width: usize,
    height: usize,
    /// World pose of the outer corner of cell (0, 0).
    origin: Pose2,
    cells: Vec<f32>,
}

thread_local! {
    static STAMPS: RefCell<(Vec<u32>, u32)> = const { RefCell::new((Vec::new(), 0)) };
}

impl OccupancyGrid {
    pub fn new(resolution: f64, width: usize, height: usize, origin: Pose2) -> Self {
        assert!(resolution > 0.0 && width > 0 && height > 0);
        Self {
            resolution,
            width,
            height,
            origin,
            cells: vec![0.0; width * height],
        }
    }

    /// A `size`×`size` grid whose center cell is centered on `center`.
    pub fn centered(center: [f64; 2], resolution: f64, size: usize) -> Self {
        let half = (size / 2) as f64 * resolution + 0.5 * resolution;
        Self::new(resolution, size, size, Pose2::new(center[0] - half, center[1] - half, 0.0))
    }

    pub fn from_cells(resolution: f64, width: usize, height: usize, origin: Pose2, cells: Vec<f32>) -> Option<Self> {
        (resolution > 0.0 && width > 0 && height > 0 && cells.len() == width * height).then(|| Self {
            resolution,
            width,
            height,
            origin,
            cells: cells.into_iter().map(|c| c.clamp(LOG_ODDS_MIN, LOG_ODDS_MAX)).collect(),
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn origin(&self) -> Pose2 {
        self.origin
    }
    pub fn cells(&self) -> &[f32] {
        &self.cells
    }
    pub fn cells_mut(&mut self) -> &mut [f32] {
        &mut self.cells
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.cells[self.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        let k = self.index(i, j);
        self.cells[k] = v.clamp(LOG_ODDS_MIN, LOG_ODDS_MAX);
    }

    pub fn class_at(&self, i: usize, j: usize) -> CellClass {
        classify(self.get(i, j))
    }

    /// Fractional cell coordinates of a world point.
    pub fn world_to_grid(&self, p: [f64; 2]) -> [f64; 2] {
        let l = self.origin.inverse_transform_point(p);
        [l[0] / self.resolution, l[1] / self.resolution]
    }

    pub fn world_to_cell_i(&self, p: [f64; 2]) -> (i64, i64) {
        let g = self.world_to_grid(p);
        (g[0].floor() as i64, g[1].floor() as i64)
    }

    pub fn world_to_cell(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let (i, j) = self.world_to_cell_i(p);
        self.in_bounds(i, j).then_some((i as usize, j as usize))
    }

    pub fn in_bounds(&self, i: i64, j: i64) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        self.origin
            .transform_point([(i as f64 + 0.5) * self.resolution, (j as f64 + 0.5) * self.resolution])
    }

    /// World-frame corners of the grid extent.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let w = self.width as f64 * self.resolution;
        let h = self.height as f64 * self.resolution;
        [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]].map(|c| self.origin.transform_point(c))
    }

    pub fn class_counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for v in &self.cells {
            match classify(*v) {
                CellClass::Occupied => c.0 += 1,
                CellClass::Free => c.1 += 1,
                CellClass::Unknown => c.2 += 1,
            }
        }
        c
    }

    pub fn ternary(&self) -> Vec<CellClass> {
        self.cells.iter().map(|v| classify(*v)).collect()
    }

    /// Grow by doubling until every listed world point falls inside.
    pub fn ensure_contains(&mut self, points: impl IntoIterator<Item = [f64; 2]>) {
        let (mut lo_i, mut lo_j, mut hi_i, mut hi_j) = (0i64, 0i64, self.width as i64 - 1, self.height as i64 - 1);
        for p in points {
            let (i, j) = self.world_to_cell_i(p);
            lo_i = lo_i.min(i);
            lo_j = lo_j.min(j);
            hi_i = hi_i.max(i);
            hi_j = hi_j.max(j);
        }
        if lo_i >= 0 && lo_j >= 0 && hi_i < self.width as i64 && hi_j < self.height as i64 {
            return;
        }
        let (mut w, mut h) = (self.width as i64, self.height as i64);
        let (mut shift_i, mut shift_j) = (0i64, 0i64);
        while lo_i + shift_i < 0 || hi_i + shift_i >= w {
            if lo_i + shift_i < 0 {
                shift_i += w;
            }
            w *= 2;
        }
        while lo_j + shift_j < 0 || hi_j + shift_j >= h {
            if lo_j + shift_j < 0 {
                shift_j += h;
            }
            h *= 2;
        }
        let (w, h) = (w as usize, h as usize);
        let mut cells = vec![0.0f32; w * h];
        for j in 0..self.height {
            let dst = (j + shift_j as usize) * w + shift_i as usize;
            cells[dst..dst + self.width].copy_from_slice(&self.cells[j * self.width..(j + 1) * self.width]);
        }
        self.origin = self.origin.compose(&Pose2::new(
            -(shift_i as f64) * self.resolution,
            -(shift_j as f64) * self.resolution,
            0.0,
        ));
        self.width = w;
        self.height = h;
        self.cells = cells;
    }

    /// Ray-trace one scan taken from `pose`: every cell on a beam is a miss, the
    /// endpoint cell a hit. Each cell is updated at most once per scan and a hit
    /// takes precedence over misses. Beams without a return are ignored.
    pub fn integrate_scan(&mut self, pose: &Pose2, scan: &LaserScan) {
        let endpoints: Vec<[f64; 2]> = scan.points().iter().map(|p| pose.transform_point(*p)).collect();
        if endpoints.is_empty() {
            return;
        }
        self.ensure_contains(endpoints.iter().copied().chain(std::iter::once([pose.x, pose.y])));
        let start = self.world_to_cell_i([pose.x, pose.y]);
        let n = self.cells.len();
        STAMPS.with(|s| {
            let mut s = s.borrow_mut();
            let (stamps, gen) = &mut *s;
            if stamps.len() < n || *gen >= u32::MAX - 2 {
                *stamps = vec![0; n.max(stamps.len())];
                *gen = 0;
            }
            *gen += 2;
            let hit_mark = *gen;
            let miss_mark = *gen - 1;
            let mut hits = Vec::with_capacity(endpoints.len());
            for e in &endpoints {
                let (i, j) = self.world_to_cell_i(*e);
                let k = self.index(i as usize, j as usize);
                if stamps[k] != hit_mark {
                    stamps[k] = hit_mark;
                    hits.push(k);
                }
            }
            let mut misses = Vec::new();
            for e in &endpoints {
                let end = self.world_to_cell_i(*e);
                for (i, j) in LineCells::new(start, end) {
                    if (i, j) == end {
                        break;
                    }
                    let k = self.index(i as usize, j as usize);
                    if stamps[k] != hit_mark && stamps[k] != miss_mark {
                        stamps[k] = miss_mark;
                        misses.push(k);
                    }
                }
            }
            for k in misses {
                self.cells[k] = (self.cells[k] + LOG_ODDS_MISS).clamp(LOG_ODDS_MIN, LOG_ODDS_MAX);
            }
            for k in hits {
                self.cells[k] = (self.cells[k] + LOG_ODDS_HIT).clamp(LOG_ODDS_MIN, LOG_ODDS_MAX);
            }
        });
    }

    /// Euclidean distance (m) from each cell center to the nearest cell whose
    /// log-odds exceed `min_log_odds`; `None` when there is no such cell.
    pub fn distance_field(&self, min_log_odds: f32) -> Option<DistanceField> {
        let occ: Vec<bool> = self.cells.iter().map(|v| *v > min_log_odds).collect();
        if !occ.iter().any(|o| *o) {
            return None;
        }
        let d2 = squared_edt(&occ, self.width, self.height);
        Some(DistanceField {
            width: self.width,
            height: self.height,
            dist: d2.into_iter().map(|v| (v.sqrt() * self.resolution) as f32).collect(),
        })
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<(), GridError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.pgm_bytes())?;
        f.flush()?;
        Ok(())
    }

    /// P5 image, one byte per cell, top row first.
    pub fn pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.cells.len());
        for j in (0..self.height).rev() {
            for i in 0..self.width {
                out.push(match self.class_at(i, j) {
                    CellClass::Occupied => PGM_OCCUPIED,
                    CellClass::Free => PGM_FREE,
                    CellClass::Unknown => PGM_UNKNOWN,
                });
            }
        }
        out
    }

    pub fn metadata_text(&self, image_name: &str) -> String {
        format!(
            "image: {image_name}\nresolution: {}\norigin: {} {} {}\noccupied_thresh: {}\nfree_thresh: {}\nwidth: {}\nheight: {}\n",
            self.resolution, self.origin.x, self.origin.y, self.origin.theta, OCCUPIED_THRESHOLD, FREE_THRESHOLD, self.width, self.height
        )
    }

    pub fn to_body(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(53 + 4 * self.cells.len());
        out.extend_from_slice(BODY_MAGIC);
        out.push(BODY_VERSION);
        out.extend_from_slice(&(self.width as u32).to_be_bytes());
        out.extend_from_slice(&(self.height as u32).to_be_bytes());
        for v in [self.resolution, self.origin.x, self.origin.y, self.origin.theta] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        for c in &self.cells {
            out.extend_from_slice(&c.to_be_bytes());
        }
        out
    }

    pub fn from_body(bytes: &[u8]) -> Result<Self, GridError> {
        let err = |m: &str| GridError::Body(m.to_string());
        if bytes.len() < 45 || &bytes[..4] != BODY_MAGIC {
            return Err(err("bad magic or short header"));
        }
        if bytes[4] != BODY_VERSION {
            return Err(err("unsupported version"));
        }
        let u32_at = |o: usize| u32::from_be_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_be_bytes(bytes[o..o + 8].try_into().unwrap());
        let (w, h) = (u32_at(5), u32_at(9));
        let res = f64_at(13);
        let origin = Pose2::new(f64_at(21), f64_at(29), f64_at(37));
        let body = &bytes[45..];
        if w.checked_mul(h).and_then(|n| n.checked_mul(4)) != Some(body.len()) {
            return Err(err("cell count does not match dimensions"));
        }
        let cells = body.chunks_exact(4).map(|c| f32::from_be_bytes(c.try_into().unwrap())).collect();
        Self::from_cells(res, w, h, origin, cells).ok_or_else(|| err("invalid dimensions"))
    }
}

/// Files written by [`export_map`].
#[derive(Debug, Clone)]
pub struct ExportedMap {
    pub image: PathBuf,
    pub metadata: PathBuf,
}

/// Write `<stem>.pgm` and its `<stem>.yaml` sidecar next to each other.
pub fn export_map(grid: &OccupancyGrid, stem: impl AsRef<Path>) -> Result<ExportedMap, GridError> {
    let stem = stem.as_ref();
    let image = stem.with_extension("pgm");
    let metadata = stem.with_extension("yaml");
    grid.write_pgm(&image)?;
    let name = image.file_name().and_then(|n| n.to_str()).unwrap_or("map.pgm");
    std::fs::write(&metadata, grid.metadata_text(name))?;
    Ok(ExportedMap { image, metadata })
}

/// Read an exported map back; accepts either the `.pgm` or `.yaml` path (or the stem).
pub fn import_map(path: impl AsRef<Path>) -> Result<OccupancyGrid, GridError> {
    let path = path.as_ref();
    let meta_path = path.with_extension("yaml");
    let meta = std::fs::read_to_string(&meta_path)?;
    let mut resolution = None;
    let mut origin = None;
    let mut image = None;
    for line in meta.lines() {
        let Some((k, v)) = line.split_once(':') else { continue };
        let v = v.trim();
        match k.trim() {
            "resolution" => resolution = v.parse::<f64>().ok(),
            "origin" => {
                let p: Vec<f64> = v.split_whitespace().filter_map(|t| t.parse().ok()).collect();
                if p.len() == 3 {
                    origin = Some(Pose2::new(p[0], p[1], p[2]));
                }
            }
            "image" => image = Some(v.to_string()),
            _ => {}
        }
    }
    let resolution = resolution.ok_or_else(|| GridError::Meta("missing resolution".into()))?;
    let origin = origin.ok_or_else(|| GridError::Meta("missing origin".into()))?;
    let img_path = match image {
        Some(name) => meta_path.with_file_name(name),
        None => path.with_extension("pgm"),
    };
    let bytes = std::fs::read(img_path)?;
    let (w, h, data) = parse_pgm(&bytes)?;
    let mut cells = vec![0.0f32; w * h];
    for (row, line) in data.chunks_exact(w).enumerate() {
        let j = h - 1 - row;
        for (i, px) in line.iter().enumerate() {
            cells[j * w + i] = match *px {
                PGM_OCCUPIED => IMPORTED_EVIDENCE,
                PGM_FREE => -IMPORTED_EVIDENCE,
                PGM_UNKNOWN => 0.0,
                other if other < 100 => IMPORTED_EVIDENCE,
                other if other > 230 => -IMPORTED_EVIDENCE,
                _ => 0.0,
            };
        }
    }
    OccupancyGrid::from_cells(resolution, w, h, origin, cells).ok_or_else(|| GridError::Meta("bad resolution".into()))
}

fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, &[u8]), GridError> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(GridError::Pgm("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(GridError::Pgm(format!("expected P5, found {}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| GridError::Pgm(e.to_string()));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval > 255 || w == 0 || h == 0 {
        return Err(GridError::Pgm("unsupported dimensions or depth".into()));
    }
    let data = bytes
        .get(pos..pos + w * h)
        .ok_or_else(|| GridError::Pgm("truncated pixel data".into()))?;
    Ok((w, h, data))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub width: usize,
    pub height: usize,
    dist: Vec<f32>,
}

impl DistanceField {
    pub fn at(&self, i: usize, j: usize) -> f32 {
        self.dist[j * self.width + i]
    }
}

/// Exact squared Euclidean distance transform (in cells²) to the nearest `true` cell.
pub fn squared_edt(seeds: &[bool], width: usize, height: usize) -> Vec<f64> {
    const INF: f64 = 1e20;
    let mut g = vec![0.0f64; width * height];
    let mut f = vec![0.0f64; width.max(height)];
    let mut out = vec![0.0f64; width.max(height)];
    let mut v = vec![0usize; width.max(height)];
    let mut z = vec![0.0f64; width.max(height) + 1];
    // columns
    for i in 0..width {
        for j in 0..height {
            f[j] = if seeds[j * width + i] { 0.0 } else { INF };
        }
        edt_1d(&f[..height], &mut out[..height], &mut v, &mut z);
        for j in 0..height {
            g[j * width + i] = out[j];
        }
    }
    // rows
    for j in 0..height {
        f[..width].copy_from_slice(&g[j * width..(j + 1) * width]);
        edt_1d(&f[..width], &mut out[..width], &mut v, &mut z);
        g[j * width..(j + 1) * width].copy_from_slice(&out[..width]);
    }
    g
}

/// Lower envelope of parabolas (Felzenszwalb & Huttenlocher).
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
            }
            break;
        }
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dd = q as f64 - p as f64;
        *dq = dd * dd + f[p];
    }
}

/// Integer grid cells on the segment between two cells, endpoints included (Bresenham).
pub struct LineCells {
    x: i64,
    y: i64,
    end: (i64, i64),
    dx: i64,
    dy: i64,
    sx: i64,
    sy: i64,
    err: i64,
    done: bool,
}

impl LineCells {
    pub fn new(start: (i64, i64), end: (i64, i64)) -> Self {
        let dx = (end.0 - start.0).abs();
        let dy = -(end.1 - start.1).abs();
        Self {
            x: start.0,
            y: start.1,
            end,
            dx,
            dy,
            sx: if start.0 < end.0 { 1 } else { -1 },
            sy: if start.1 < end.1 { 1 } else { -1 },
            err: dx + dy,
            done: false,
        }
    }
}

impl Iterator for LineCells {
    type Item = (i64, i64);

    fn next(&mut self) -> Option<(i64, i64)> {
        if self.done {
            return None;
        }
        let cur = (self.x, self.y);
        if cur == self.end {
            self.done = true;
            return Some(cur);
        }
        let e2 = 2 * self.err;
        if e2 >= self.dy {
            self.err += self.dy;
            self.x += self.sx;
        }
        if e2 <= self.dx {
            self.err += self.dx;
            self.y += self.sy;
        }
        Some(cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_edt(seeds: &[bool], w: usize, h: usize) -> Vec<f64> {
        (0..w * h)
            .map(|k| {
                let (i, j) = ((k % w) as f64, (k / w) as f64);
                (0..w * h)
                    .filter(|s| seeds[*s])
                    .map(|s| {
                        let (a, b) = ((s % w) as f64, (s / w) as f64);
                        (a - i).powi(2) + (b - j).powi(2)
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn classify_thresholds() {
        assert_eq!(classify(0.0), CellClass::Unknown);
        assert_eq!(classify(0.85), CellClass::Unknown);
        assert_eq!(classify(0.86), CellClass::Occupied);
        assert_eq!(classify(-0.86), CellClass::Free);
    }

    #[test]
    fn centered_grid_puts_point_at_cell_center() {
        let g = OccupancyGrid::centered([1.0, -2.0], 0.05, 64);
        let (i, j) = g.world_to_cell([1.0, -2.0]).unwrap();
        let c = g.cell_center(i, j);
        assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn growth_preserves_content_and_world_positions() {
        let mut g = OccupancyGrid::centered([0.0, 0.0], 0.1, 10);
        let (i, j) = g.world_to_cell([0.23, -0.31]).unwrap();
        g.set(i, j, 3.0);
        g.ensure_contains([[-3.0, 2.5], [0.0, 0.0]]);
        assert!(g.width() >= 40 && g.height() >= 10);
        let (i2, j2) = g.world_to_cell([0.23, -0.31]).unwrap();
        assert_eq!(g.get(i2, j2), 3.0);
        assert!(g.world_to_cell([-3.0, 2.5]).is_some());
        assert_eq!(g.cells().iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn line_cells_cover_endpoints() {
        let c: Vec<_> = LineCells::new((0, 0), (5, 2)).collect();
        assert_eq!(c.first(), Some(&(0, 0)));
        assert_eq!(c.last(), Some(&(5, 2)));
        assert_eq!(c.len(), 6);
        assert_eq!(LineCells::new((3, 3), (3, 3)).count(), 1);
    }

    #[test]
    fn empty_scan_leaves_grid_unknown() {
        let mut g = OccupancyGrid::centered([0.0, 0.0], 0.05, 32);
        let scan = LaserScan {
            timestamp: 0.0,
            angle_min: 0.0,
            angle_increment: 0.1,
            range_min: 0.1,
            range_max: 5.0,
            ranges: vec![LaserScan::NO_RETURN; 10],
        };
        g.integrate_scan(&Pose2::IDENTITY, &scan);
        assert_eq!(g.class_counts(), (0, 0, 32 * 32));
    }

    #[test]
    fn pgm_export_of_unknown_grid() {
        let g = OccupancyGrid::new(0.05, 10, 10, Pose2::IDENTITY);
        let bytes = g.pgm_bytes();
        let header = b"P5\n10 10\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len() - header.len(), 100);
        assert!(bytes[header.len()..].iter().all(|b| *b == 205));
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = OccupancyGrid::new(0.05, 7, 5, Pose2::new(-1.0, 2.0, 0.0));
        g.set(0, 0, 3.0);
        g.set(6, 4, -2.0);
        g.set(3, 2, 0.5);
        g.set(2, 4, 1.0);
        let files = export_map(&g, dir.path().join("m")).unwrap();
        let back = import_map(&files.image).unwrap();
        assert_eq!(back.ternary(), g.ternary());
        assert_eq!(back.origin(), g.origin());
        assert_eq!((back.width(), back.height()), (7, 5));
        // top row of the image is the highest j
        let raw = std::fs::read(&files.image).unwrap();
        let px = &raw[raw.len() - 35..];
        assert_eq!(px[2], PGM_OCCUPIED); // (2, 4)
        assert_eq!(px[6], PGM_FREE); // (6, 4)
        assert_eq!(px[28], PGM_OCCUPIED); // (0, 0)
    }

    #[test]
    fn body_rejects_garbage() {
        let g = OccupancyGrid::new(0.05, 3, 2, Pose2::IDENTITY);
        let mut b = g.to_body();
        assert_eq!(OccupancyGrid::from_body(&b).unwrap(), g);
        b.pop();
        assert!(OccupancyGrid::from_body(&b).is_err());
        assert!(OccupancyGrid::from_body(b"nope").is_err());
    }

    proptest! {
        #[test]
        fn edt_matches_brute_force(seeds in proptest::collection::vec(proptest::bool::weighted(0.08), 12 * 9)) {
            prop_assume!(seeds.iter().any(|s| *s));
            let fast = squared_edt(&seeds, 12, 9);
            let slow = brute_edt(&seeds, 12, 9);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn body_round_trip(vals in proptest::collection::vec(-4.0f32..4.0, 6 * 4), x in -5.0..5.0f64, th in -3.0..3.0f64) {
            let g = OccupancyGrid::from_cells(0.07, 6, 4, Pose2::new(x, -x, th), vals).unwrap();
            prop_assert_eq!(OccupancyGrid::from_body(&g.to_body()).unwrap(), g);
        }

        #[test]
        fn integration_keeps_log_odds_bounded(ranges in proptest::collection::vec(0.2..3.0f64, 36), reps in 1usize..20) {
            let scan = LaserScan {
                timestamp: 0.0,
                angle_min: -std::f64::consts::PI,
                angle_increment: std::f64::consts::TAU / 36.0,
                range_min: 0.1,
                range_max: 5.0,
                ranges,
            };
            let mut g = OccupancyGrid::centered([0.0, 0.0], 0.05, 16);
            for _ in 0..reps {
                g.integrate_scan(&Pose2::new(0.01, 0.02, 0.3), &scan);
            }
            prop_assert!(g.cells().iter().all(|v| (LOG_ODDS_MIN..=LOG_ODDS_MAX).contains(v)));
        }
    }
}
