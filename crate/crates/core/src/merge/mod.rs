//! Merging n occupancy grids with unknown relative poses into one map.

pub mod features;
pub mod transform;

pub use features::{extract_features, match_features, FeatureConfig, MapFeature};
pub use transform::{estimate_from_features, procrustes, MapTransform};

use crate::geometry::Pose2;
use crate::grid::{CellClass, OccupancyGrid, LOG_ODDS_MAX, LOG_ODDS_MIN};
use crate::par;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MergeError {
    #[error("no maps to merge")]
    NoMaps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Composite {
    /// sum of log-odds per cell, clamped
    #[default]
    LogOdds,
    /// occupied in any input wins, then free, then unknown
    TernaryPriority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    pub features: FeatureConfig,
    pub ratio: f64,
    pub inlier_cells: f64,
    pub ransac_iterations: usize,
    /// stop sampling once this fraction of matches are inliers
    pub early_exit: f64,
    pub min_confidence: f64,
    pub min_inliers: usize,
    pub seed: u64,
    pub composite: Composite,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            ratio: 0.8,
            inlier_cells: 3.0,
            ransac_iterations: 500,
            early_exit: 0.9,
            min_confidence: 0.5,
            min_inliers: 10,
            seed: 7,
            composite: Composite::LogOdds,
        }
    }
}

/// Transform mapping `b`'s frame into `a`'s, or `None` when the maps do not
/// share enough structure.
pub fn estimate_transform(a: &OccupancyGrid, b: &OccupancyGrid, cfg: &MergeConfig) -> Option<MapTransform> {
    let fa = extract_features(a, &cfg.features);
    let fb = extract_features(b, &cfg.features);
    estimate_from_features(&fa, &fb, a.resolution(), cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutput {
    pub grid: OccupancyGrid,
    /// per input: its transform into the anchor frame, `None` if excluded
    pub transforms: Vec<Option<MapTransform>>,
    pub excluded: Vec<usize>,
}

pub fn merge_maps(grids: &[OccupancyGrid], cfg: &MergeConfig) -> Result<MergeOutput, MergeError> {
    if grids.is_empty() {
        return Err(MergeError::NoMaps);
    }
    let feats = par::map_slice(grids, |g| extract_features(g, &cfg.features));
    let res = grids[0].resolution();
    let mut cache: HashMap<(usize, usize), Option<MapTransform>> = HashMap::new();
    let mut pair = |a: usize, b: usize| {
        *cache
            .entry((a, b))
            .or_insert_with(|| estimate_from_features(&feats[a], &feats[b], res, cfg))
    };
    let mut transforms: Vec<Option<MapTransform>> = vec![None; grids.len()];
    transforms[0] = Some(MapTransform::IDENTITY);
    loop {
        let mut progress = false;
        for i in 1..grids.len() {
            if transforms[i].is_some() {
                continue;
            }
            if let Some(t) = pair(0, i) {
                transforms[i] = Some(t);
                progress = true;
                continue;
            }
            // through any map that is already placed
            for j in 1..grids.len() {
                let Some(tj) = transforms[j] else { continue };
                if j == i {
                    continue;
                }
                if let Some(t) = pair(j, i) {
                    transforms[i] = Some(MapTransform {
                        transform: tj.transform.compose(&t.transform),
                        inlier_count: t.inlier_count,
                        confidence: tj.confidence.min(t.confidence),
                    });
                    progress = true;
                    break;
                }
            }
        }
        if !progress {
            break;
        }
    }
    let placed: Vec<(&OccupancyGrid, Pose2)> = grids
        .iter()
        .zip(&transforms)
        .filter_map(|(g, t)| t.map(|t| (g, t.transform)))
        .collect();
    let grid = composite(&grids[0], &placed, cfg.composite);
    let excluded = (0..grids.len()).filter(|k| transforms[*k].is_none()).collect();
    Ok(MergeOutput {
        grid,
        transforms,
        excluded,
    })
}

/// Cell-wise composite on the anchor's lattice, grown to cover every placed map.
pub fn composite(anchor: &OccupancyGrid, placed: &[(&OccupancyGrid, Pose2)], mode: Composite) -> OccupancyGrid {
    let res = anchor.resolution();
    let (mut lo, mut hi) = ([i64::MAX; 2], [i64::MIN; 2]);
    for (g, t) in placed {
        for c in g.corners() {
            let q = anchor.world_to_grid(t.transform_point(c));
            for k in 0..2 {
                lo[k] = lo[k].min((q[k] + 1e-6).floor() as i64);
                hi[k] = hi[k].max((q[k] - 1e-6).ceil() as i64);
            }
        }
    }
    let (w, h) = ((hi[0] - lo[0]) as usize, (hi[1] - lo[1]) as usize);
    let origin = anchor.origin().compose(&Pose2::new(lo[0] as f64 * res, lo[1] as f64 * res, 0.0));
    let mut out = OccupancyGrid::new(res, w, h, origin);
    let inverse: Vec<Pose2> = placed.iter().map(|(_, t)| t.inverse()).collect();
    let rows = par::map_range(h, |j| {
        let mut row = vec![0.0f32; w];
        let mut vals = Vec::with_capacity(placed.len());
        for (i, cell) in row.iter_mut().enumerate() {
            let c = out.cell_center(i, j);
            vals.clear();
            for ((g, _), inv) in placed.iter().zip(&inverse) {
                if let Some((gi, gj)) = g.world_to_cell(inv.transform_point(c)) {
                    vals.push(g.get(gi, gj));
                }
            }
            *cell = match mode {
                Composite::LogOdds => {
                    // fixed summation order keeps the result independent of input order
                    vals.sort_by(f32::total_cmp);
                    vals.iter().sum::<f32>().clamp(LOG_ODDS_MIN, LOG_ODDS_MAX)
                }
                Composite::TernaryPriority => {
                    let occ = vals.iter().copied().filter(|v| crate::grid::classify(*v) == CellClass::Occupied);
                    let free = vals.iter().copied().filter(|v| crate::grid::classify(*v) == CellClass::Free);
                    let weak = vals.iter().copied().reduce(|a, b| if (b.abs(), b) > (a.abs(), a) { b } else { a });
                    occ.reduce(f32::max).or_else(|| free.reduce(f32::min)).or(weak).unwrap_or(0.0)
                }
            };
        }
        row
    });
    for (j, row) in rows.into_iter().enumerate() {
        let k = out.index(0, j);
        out.cells_mut()[k..k + w].copy_from_slice(&row);
    }
    out
}
