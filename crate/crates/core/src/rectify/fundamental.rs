//! Fundamental matrix estimation: Hartley-normalized 8-point solver inside a
//! seeded RANSAC loop, scored by Sampson distance.
//!
//! Convention: `x_r^T F x_l = 0` for a match `(x_l, x_r)`.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Match, RectifyError};

/// Rank-2 fundamental matrix with unit Frobenius norm.
///
/// The sign is fixed so that the entry of largest magnitude (first in
/// row-major order on ties) is positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

impl FundamentalMatrix {
    /// Projects `m` onto rank 2 and normalizes it.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, RectifyError> {
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(RectifyError::Numerical("svd of F failed".into())),
        };
        let mut s = svd.singular_values;
        // nalgebra sorts singular values in descending order
        s[2] = 0.0;
        let f = u * Matrix3::from_diagonal(&s) * v_t;
        Self::normalized(f)
    }

    fn normalized(f: Matrix3<f64>) -> Result<Self, RectifyError> {
        let norm = f.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(RectifyError::Numerical("degenerate fundamental matrix".into()));
        }
        let mut f = f / norm;
        let mut best = 0usize;
        for i in 0..9 {
            let (r, c) = (i / 3, i % 3);
            let (br, bc) = (best / 3, best % 3);
            if f[(r, c)].abs() > f[(br, bc)].abs() + 1e-12 {
                best = i;
            }
        }
        if f[(best / 3, best % 3)] < 0.0 {
            f = -f;
        }
        Ok(Self(f))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        super::rows_of(&self.0)
    }

    /// Algebraic residual `x_r^T F x_l`.
    pub fn algebraic(&self, m: &Match) -> f64 {
        let (l, r) = m.homogeneous();
        r.dot(&(self.0 * l))
    }

    /// Sampson distance in pixels (square root of the first-order geometric
    /// error).
    pub fn sampson(&self, m: &Match) -> f64 {
        sampson_distance(&self.0, m)
    }
}

pub(crate) fn sampson_distance(f: &Matrix3<f64>, m: &Match) -> f64 {
    let (l, r) = m.homogeneous();
    let fl = f * l;
    let ftr = f.transpose() * r;
    let num = r.dot(&fl);
    let den = fl.x * fl.x + fl.y * fl.y + ftr.x * ftr.x + ftr.y * ftr.y;
    if den <= 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num * num / den).sqrt()
}

/// Similarity that moves the centroid to the origin and scales the mean
/// distance from it to sqrt(2).
fn hartley_normalization(points: impl Iterator<Item = (f64, f64)> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points
        .map(|(x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Normalized 8-point algorithm over all given matches (at least 8).
pub fn eight_point(matches: &[Match]) -> Result<FundamentalMatrix, RectifyError> {
    if matches.len() < 8 {
        return Err(RectifyError::NotEnoughMatches(matches.len()));
    }
    let t_l = hartley_normalization(matches.iter().map(|m| (m.xl, m.yl)));
    let t_r = hartley_normalization(matches.iter().map(|m| (m.xr, m.yr)));

    // pad to at least 9 rows so the SVD exposes the full right null space
    let rows = matches.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, m) in matches.iter().enumerate() {
        let l = t_l * Vector3::new(m.xl, m.yl, 1.0);
        let r = t_r * Vector3::new(m.xr, m.yr, 1.0);
        let (x, y) = (l.x / l.z, l.y / l.z);
        let (xp, yp) = (r.x / r.z, r.y / r.z);
        let row = [xp * x, xp * y, xp, yp * x, yp * y, yp, x, y, 1.0];
        for (j, v) in row.into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| RectifyError::Numerical("svd of design matrix failed".into()))?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let f_row = v_t.row(min_idx);
    let f_norm = Matrix3::from_fn(|r, c| f_row[3 * r + c]);
    let f_norm = FundamentalMatrix::from_matrix(f_norm)?;
    FundamentalMatrix::from_matrix(t_r.transpose() * f_norm.0 * t_l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier threshold on the Sampson distance, pixels.
    pub threshold: f64,
    pub max_iters: usize,
    /// Success probability used for the adaptive iteration bound.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            max_iters: 2000,
            confidence: 0.999,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacOutcome {
    pub fundamental: FundamentalMatrix,
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

impl RansacOutcome {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn classify(f: &FundamentalMatrix, matches: &[Match], threshold: f64) -> Vec<bool> {
    matches.iter().map(|m| f.sampson(m) <= threshold).collect()
}

fn required_iterations(inlier_ratio: f64, confidence: f64) -> f64 {
    let p_good = inlier_ratio.powi(8);
    if p_good >= 1.0 {
        return 1.0;
    }
    if p_good <= 0.0 {
        return f64::INFINITY;
    }
    ((1.0 - confidence).ln() / (1.0 - p_good).ln()).ceil()
}

/// Seeded RANSAC over minimal 8-point samples, followed by refits on the
/// consensus set until it stops changing. Returned inlier flags are those of
/// the final refit.
pub fn estimate_fundamental_ransac(
    matches: &[Match],
    cfg: &RansacConfig,
) -> Result<RansacOutcome, RectifyError> {
    let n = matches.len();
    if n < 8 {
        return Err(RectifyError::NotEnoughMatches(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, f64, Vec<bool>)> = None;
    let mut limit = cfg.max_iters.max(1) as f64;
    let mut iterations = 0usize;
    let mut subset = Vec::with_capacity(8);

    while (iterations as f64) < limit && iterations < cfg.max_iters.max(1) {
        iterations += 1;
        subset.clear();
        subset.extend(sample(&mut rng, n, 8).into_iter().map(|i| matches[i]));
        let Ok(f) = eight_point(&subset) else {
            continue;
        };
        let flags = classify(&f, matches, cfg.threshold);
        let count = flags.iter().filter(|&&b| b).count();
        let residual: f64 = matches
            .iter()
            .zip(&flags)
            .filter(|(_, &b)| b)
            .map(|(m, _)| f.sampson(m))
            .sum();
        let better = match &best {
            None => true,
            Some((c, r, _)) => count > *c || (count == *c && residual < *r),
        };
        if better {
            limit = limit.min(required_iterations(count as f64 / n as f64, cfg.confidence));
            best = Some((count, residual, flags));
        }
    }

    let (_, _, mut flags) = best.ok_or(RectifyError::EstimationFailed { consensus: 0 })?;
    let mut fundamental = None;
    for _ in 0..10 {
        let consensus: Vec<Match> = matches
            .iter()
            .zip(&flags)
            .filter(|(_, &b)| b)
            .map(|(m, _)| *m)
            .collect();
        if consensus.len() < 8 {
            return Err(RectifyError::EstimationFailed {
                consensus: consensus.len(),
            });
        }
        let f = eight_point(&consensus)?;
        let next = classify(&f, matches, cfg.threshold);
        let stable = next == flags;
        flags = next;
        fundamental = Some(f);
        if stable {
            break;
        }
    }
    let fundamental = fundamental.expect("refit loop runs at least once");
    let consensus = flags.iter().filter(|&&b| b).count();
    if consensus < 8 {
        return Err(RectifyError::EstimationFailed { consensus });
    }
    Ok(RansacOutcome {
        fundamental,
        inliers: flags,
        iterations,
    })
}
