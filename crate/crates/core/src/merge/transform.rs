//! Robust SE(2) alignment between two feature sets.

use super::features::{match_features, MapFeature};
use super::MergeConfig;
use crate::geometry::{wrap_angle, Pose2};
use crate::world::{derive_seed, SimRng};
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapTransform {
    /// maps frame B into frame A: p_a = transform ∘ p_b
    pub transform: Pose2,
    pub inlier_count: usize,
    /// inliers / matched pairs
    pub confidence: f64,
}

impl MapTransform {
    pub const IDENTITY: MapTransform = MapTransform {
        transform: Pose2::IDENTITY,
        inlier_count: 0,
        confidence: 1.0,
    };
}

type Pair = ([f64; 2], [f64; 2]);

fn two_point(p: &Pair, q: &Pair) -> Option<Pose2> {
    let (a1, b1) = p;
    let (a2, b2) = q;
    let da = [a2[0] - a1[0], a2[1] - a1[1]];
    let db = [b2[0] - b1[0], b2[1] - b1[1]];
    let (la, lb) = (da[0].hypot(da[1]), db[0].hypot(db[1]));
    if la < 1e-9 || lb < 1e-9 {
        return None;
    }
    let theta = wrap_angle(da[1].atan2(da[0]) - db[1].atan2(db[0]));
    let (s, c) = theta.sin_cos();
    let mb = [0.5 * (b1[0] + b2[0]), 0.5 * (b1[1] + b2[1])];
    let ma = [0.5 * (a1[0] + a2[0]), 0.5 * (a1[1] + a2[1])];
    Some(Pose2::new(ma[0] - (c * mb[0] - s * mb[1]), ma[1] - (s * mb[0] + c * mb[1]), theta))
}

fn inliers(t: &Pose2, pairs: &[Pair], thresh: f64) -> Vec<usize> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, (a, b))| {
            let p = t.transform_point(*b);
            (p[0] - a[0]).hypot(p[1] - a[1]) <= thresh
        })
        .map(|(k, _)| k)
        .collect()
}

/// Least-squares rigid fit of b onto a.
pub fn procrustes(pairs: &[Pair]) -> Option<Pose2> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let (mut ca, mut cb) = ([0.0; 2], [0.0; 2]);
    for (a, b) in pairs {
        for k in 0..2 {
            ca[k] += a[k] / n;
            cb[k] += b[k] / n;
        }
    }
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (a, b) in pairs {
        let (ax, ay, bx, by) = (a[0] - ca[0], a[1] - ca[1], b[0] - cb[0], b[1] - cb[1]);
        sxx += bx * ax + by * ay;
        sxy += bx * ay - by * ax;
    }
    if sxx == 0.0 && sxy == 0.0 {
        return None;
    }
    let theta = sxy.atan2(sxx);
    let (s, c) = theta.sin_cos();
    Some(Pose2::new(ca[0] - (c * cb[0] - s * cb[1]), ca[1] - (s * cb[0] + c * cb[1]), theta))
}

/// RANSAC over two-point hypotheses on matched features. `cell` is the
/// resolution that scales the inlier threshold.
pub fn estimate_from_features(fa: &[MapFeature], fb: &[MapFeature], cell: f64, cfg: &MergeConfig) -> Option<MapTransform> {
    let matches = match_features(fa, fb, cfg.ratio, &cfg.features);
    if matches.len() < 2 {
        return None;
    }
    let pairs: Vec<Pair> = matches.iter().map(|&(i, j)| (fa[i].position, fb[j].position)).collect();
    let thresh = cfg.inlier_cells * cell;
    let n = pairs.len();
    let mut rng = SimRng::seed_from_u64(derive_seed(&[cfg.seed, n as u64, fa.len() as u64, fb.len() as u64]));
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..cfg.ransac_iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (p, q) = (&pairs[i], &pairs[j]);
        let la = (q.0[0] - p.0[0]).hypot(q.0[1] - p.0[1]);
        let lb = (q.1[0] - p.1[0]).hypot(q.1[1] - p.1[1]);
        // rigid motions preserve distances; short baselines give unstable rotations
        if (la - lb).abs() > thresh || la < 2.0 * thresh {
            continue;
        }
        let Some(t) = two_point(p, q) else { continue };
        let inl = inliers(&t, &pairs, thresh);
        if inl.len() > best.len() {
            best = inl;
            if best.len() as f64 >= cfg.early_exit * n as f64 {
                break;
            }
        }
    }
    if best.len() < 2 {
        return None;
    }
    let mut t = procrustes(&best.iter().map(|&k| pairs[k]).collect::<Vec<_>>())?;
    for _ in 0..3 {
        let inl = inliers(&t, &pairs, thresh);
        if inl.len() < 2 || inl == best {
            break;
        }
        best = inl;
        t = procrustes(&best.iter().map(|&k| pairs[k]).collect::<Vec<_>>())?;
    }
    let confidence = best.len() as f64 / n as f64;
    (confidence >= cfg.min_confidence && best.len() >= cfg.min_inliers).then_some(MapTransform {
        transform: t,
        inlier_count: best.len(),
        confidence,
    })
}
