//! Corner keypoints on occupancy grids with rotation-normalized ring descriptors.

use crate::grid::{CellClass, OccupancyGrid};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Gaussian blur of the occupied-cell image, in cells
    pub smoothing_sigma: f64,
    /// Gaussian weight of the structure-tensor window, in cells
    pub window_sigma: f64,
    /// minimum smaller eigenvalue of the structure tensor
    pub response_min: f64,
    pub nms_radius: usize,
    /// disc used for the keypoint orientation, in cells
    pub orientation_radius: f64,
    pub rings: usize,
    pub ring_step: f64,
    /// angular samples per ring; also the rotation resolution of matching
    pub sectors: usize,
    /// samples both descriptors must observe for a comparison to count
    pub min_overlap: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            smoothing_sigma: 1.0,
            window_sigma: 1.5,
            response_min: 0.0015,
            nms_radius: 3,
            orientation_radius: 8.0,
            rings: 20,
            ring_step: 2.0,
            sectors: 72,
            min_overlap: 0.1,
        }
    }
}

impl FeatureConfig {
    pub fn descriptor_len(&self) -> usize {
        self.rings * self.sectors
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapFeature {
    /// world (map-frame) position of the keypoint cell center
    pub position: [f64; 2],
    pub orientation: f64,
    pub descriptor: Vec<f64>,
}

/// Dense f64 image in cell coordinates, row-major like the grid.
#[derive(Debug, Clone)]
pub(crate) struct Image {
    pub w: usize,
    pub h: usize,
    pub v: Vec<f64>,
}

impl Image {
    fn at(&self, i: i64, j: i64) -> f64 {
        if i < 0 || j < 0 || i as usize >= self.w || j as usize >= self.h {
            0.0
        } else {
            self.v[j as usize * self.w + i as usize]
        }
    }

    /// Bilinear sample at fractional cell coordinates (cell centers at integers).
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (i, j) = (x0 as i64, y0 as i64);
        (self.at(i, j) * (1.0 - fx) + self.at(i + 1, j) * fx) * (1.0 - fy)
            + (self.at(i, j + 1) * (1.0 - fx) + self.at(i + 1, j + 1) * fx) * fy
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur; zero outside the image.
fn blur(img: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (img.w, img.h);
    let mut tmp = vec![0.0; w * h];
    for j in 0..h {
        for i in 0..w {
            tmp[j * w + i] = (-r..=r).map(|d| k[(d + r) as usize] * img.at(i as i64 + d, j as i64)).sum();
        }
    }
    let tmp = Image { w, h, v: tmp };
    let mut out = vec![0.0; w * h];
    for j in 0..h {
        for i in 0..w {
            out[j * w + i] = (-r..=r).map(|d| k[(d + r) as usize] * tmp.at(i as i64, j as i64 + d)).sum();
        }
    }
    Image { w, h, v: out }
}

pub(crate) fn occupied_image(grid: &OccupancyGrid) -> Image {
    Image {
        w: grid.width(),
        h: grid.height(),
        v: grid.ternary().iter().map(|c| (*c == CellClass::Occupied) as u8 as f64).collect(),
    }
}

/// Smaller eigenvalue of the windowed structure tensor at every cell.
pub(crate) fn corner_response(smooth: &Image, window_sigma: f64) -> Image {
    let (w, h) = (smooth.w, smooth.h);
    let mut xx = Image { w, h, v: vec![0.0; w * h] };
    let mut yy = xx.clone();
    let mut xy = xx.clone();
    for j in 0..h as i64 {
        for i in 0..w as i64 {
            let gx = 0.5 * (smooth.at(i + 1, j) - smooth.at(i - 1, j));
            let gy = 0.5 * (smooth.at(i, j + 1) - smooth.at(i, j - 1));
            let k = j as usize * w + i as usize;
            xx.v[k] = gx * gx;
            yy.v[k] = gy * gy;
            xy.v[k] = gx * gy;
        }
    }
    let (a, c, b) = (blur(&xx, window_sigma), blur(&yy, window_sigma), blur(&xy, window_sigma));
    let v = (0..w * h)
        .map(|k| {
            let (a, b, c) = (a.v[k], b.v[k], c.v[k]);
            let l = 0.5 * (a + c) - (0.25 * (a - c) * (a - c) + b * b).sqrt();
            // blur order differs between transposed grids; drop the last-ulp noise
            (l * 1e9).round() * 1e-9
        })
        .collect();
    Image { w, h, v }
}

fn near_class(cls: &[CellClass], w: usize, h: usize, i: usize, j: usize, r: i64, want: CellClass) -> bool {
    (-r..=r).any(|dj| {
        (-r..=r).any(|di| {
            let (x, y) = (i as i64 + di, j as i64 + dj);
            x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && cls[y as usize * w + x as usize] == want
        })
    })
}

/// Keypoint orientation: direction from the keypoint to the occupancy centroid
/// of the surrounding disc.
fn orientation(smooth: &Image, ci: f64, cj: f64, radius: f64) -> Option<f64> {
    let r = radius.ceil() as i64;
    let (mut mx, mut my, mut m0) = (0.0, 0.0, 0.0);
    for dj in -r..=r {
        for di in -r..=r {
            let (dx, dy) = (di as f64, dj as f64);
            if dx * dx + dy * dy > radius * radius {
                continue;
            }
            let v = smooth.at(ci as i64 + di, cj as i64 + dj);
            mx += v * dx;
            my += v * dy;
            m0 += v;
        }
    }
    // a centroid this close to the keypoint has no stable direction
    (m0 > 0.0 && (mx * mx + my * my).sqrt() > 0.25 * m0).then(|| my.atan2(mx))
}

/// Polar occupancy samples (ring-major, counter-clockwise from the grid x
/// axis); NaN where the map is unobserved.
fn descriptor(smooth: &Image, known: &Image, ci: f64, cj: f64, cfg: &FeatureConfig) -> Vec<f64> {
    let mut d = Vec::with_capacity(cfg.descriptor_len());
    for ring in 0..cfg.rings {
        let r = (ring + 1) as f64 * cfg.ring_step;
        for s in 0..cfg.sectors {
            let a = TAU * s as f64 / cfg.sectors as f64;
            // snap away trig rounding so that quarter-turned grids sample identical points
            let snap = |v: f64| (v * 1e6).round() * 1e-6;
            let (x, y) = (snap(ci + r * a.cos()), snap(cj + r * a.sin()));
            d.push(if known.sample(x, y) >= 0.5 { smooth.sample(x, y) } else { f64::NAN });
        }
    }
    d
}

pub fn extract_features(grid: &OccupancyGrid, cfg: &FeatureConfig) -> Vec<MapFeature> {
    let cls = grid.ternary();
    if !cls.contains(&CellClass::Occupied) {
        return Vec::new();
    }
    let (w, h) = (grid.width(), grid.height());
    let smooth = blur(&occupied_image(grid), cfg.smoothing_sigma);
    let resp = corner_response(&smooth, cfg.window_sigma);
    let known = Image {
        w,
        h,
        v: cls.iter().map(|c| (*c != CellClass::Unknown) as u8 as f64).collect(),
    };
    let nr = cfg.nms_radius as i64;
    let mut out = Vec::new();
    for j in 0..h {
        for i in 0..w {
            let v = resp.v[j * w + i];
            if v < cfg.response_min {
                continue;
            }
            // no larger neighbour in the window; exact ties keep both so that grid
            // rotations by quarter turns select the same cells
            let is_max = (-nr..=nr).all(|dj| {
                (-nr..=nr).all(|di| {
                    let (x, y) = (i as i64 + di, j as i64 + dj);
                    if (di, dj) == (0, 0) || x < 0 || y < 0 || x as usize >= w || y as usize >= h {
                        return true;
                    }
                    let u = resp.v[y as usize * w + x as usize];
                    u <= v
                })
            });
            if !is_max || !near_class(&cls, w, h, i, j, 1, CellClass::Occupied) || !near_class(&cls, w, h, i, j, 2, CellClass::Free) {
                continue;
            }
            let (ci, cj) = (i as f64, j as f64);
            let Some(theta) = orientation(&smooth, ci, cj, cfg.orientation_radius) else {
                continue;
            };
            let descriptor = descriptor(&smooth, &known, ci, cj, cfg);
            let p = grid.cell_center(i, j);
            let o = grid.origin().theta;
            out.push(MapFeature {
                position: p,
                orientation: crate::geometry::wrap_angle(theta + o),
                descriptor,
            });
        }
    }
    out
}

/// RMS difference over samples observed in both, minimized over circular
/// shifts of `b`; `(distance, shift)` where the shift is in sectors. Pairs
/// sharing too few observed samples get `f64::INFINITY`.
pub fn descriptor_distance(a: &[f64], b: &[f64], cfg: &FeatureConfig) -> (f64, usize) {
    let n = cfg.sectors;
    let mut best = (f64::INFINITY, 0);
    let need = cfg.min_overlap * a.len() as f64;
    for shift in 0..n {
        let (mut sum, mut cnt) = (0.0, 0usize);
        for ring in 0..cfg.rings {
            let (ra, rb) = (&a[ring * n..(ring + 1) * n], &b[ring * n..(ring + 1) * n]);
            for s in 0..n {
                let (x, y) = (ra[(s + shift) % n], rb[s]);
                if !(x.is_nan() || y.is_nan()) {
                    sum += (x - y) * (x - y);
                    cnt += 1;
                }
            }
        }
        if cnt as f64 >= need && cnt > 0 {
            let d = (sum / cnt as f64).sqrt();
            if d < best.0 {
                best = (d, shift);
            }
        }
    }
    best
}

/// Mutual nearest neighbours passing the ratio test, as (index in a, index in b).
pub fn match_features(a: &[MapFeature], b: &[MapFeature], ratio: f64, cfg: &FeatureConfig) -> Vec<(usize, usize)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let d: Vec<Vec<f64>> = crate::par::map_slice(a, |fa| {
        b.iter()
            .map(|fb| descriptor_distance(&fa.descriptor, &fb.descriptor, cfg).0)
            .collect()
    });
    let best_b: Vec<usize> = d
        .iter()
        .map(|row| (0..row.len()).min_by(|x, y| row[*x].total_cmp(&row[*y])).unwrap())
        .collect();
    let best_a: Vec<usize> = (0..b.len())
        .map(|jb| (0..a.len()).min_by(|x, y| d[*x][jb].total_cmp(&d[*y][jb])).unwrap())
        .collect();
    let second = |vals: &mut dyn Iterator<Item = f64>, skip: usize| {
        vals.enumerate()
            .filter(|(k, _)| *k != skip)
            .map(|(_, v)| v)
            .fold(f64::INFINITY, f64::min)
    };
    let mut out = Vec::new();
    for (ia, &jb) in best_b.iter().enumerate() {
        if best_a[jb] != ia || !d[ia][jb].is_finite() {
            continue;
        }
        let d1 = d[ia][jb];
        let s_row = second(&mut d[ia].iter().copied(), jb);
        let s_col = second(&mut d.iter().map(|r| r[jb]), ia);
        if d1 < ratio * s_row && d1 < ratio * s_col {
            out.push((ia, jb));
        }
    }
    out
}
