//! Horizontal shift normalization and the common valid crop of two
//! rectified views.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{rows_of, Match, RectifyError};

/// Integer pixel rectangle, `x0..x0 + width` by `y0..y0 + height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x0: i64,
    pub y0: i64,
    pub width: usize,
    pub height: usize,
}

impl CropRect {
    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerticalStats {
    pub max: f64,
    pub mean: f64,
}

/// Rectifying transforms plus the crop, shift and residual statistics.
///
/// Matrices serialize as row-major nested arrays. The right view is moved by
/// `-shift` along x after `h_right`, so every inlier disparity
/// `x_l' - x_r'` grows by `shift` and the smallest one becomes zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectificationResult {
    pub h_left: [[f64; 3]; 3],
    pub h_right: [[f64; 3]; 3],
    pub crop: CropRect,
    pub shift: f64,
    pub inliers: usize,
    pub vertical_disparity: VerticalStats,
    /// Inlier disparity range after the shift.
    pub min_disparity: f64,
    pub max_disparity: f64,
}

impl RectificationResult {
    pub fn left_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.h_left[r][c])
    }

    pub fn right_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.h_right[r][c])
    }

    /// Maps a match into rectified coordinates, shift included.
    pub fn transform(&self, m: &Match) -> Match {
        let (xl, yl) = apply(&self.left_matrix(), m.xl, m.yl);
        let (xr, yr) = apply(&self.right_matrix(), m.xr, m.yr);
        Match::new(xl, yl, xr - self.shift, yr)
    }
}

pub(crate) fn apply(h: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let p = h * Vector3::new(x, y, 1.0);
    (p.x / p.z, p.y / p.z)
}

type Polygon = Vec<(f64, f64)>;

fn signed_area(p: &Polygon) -> f64 {
    let n = p.len();
    (0..n)
        .map(|i| {
            let (a, b) = (p[i], p[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        / 2.0
}

/// Image of the pixel-centre rectangle under `h` with `dx` added to x, as a
/// counter-clockwise quad. Fails if the image crosses the line at infinity.
fn footprint(h: &Matrix3<f64>, dx: f64, width: usize, height: usize) -> Result<Polygon, RectifyError> {
    let (w, hh) = ((width - 1) as f64, (height - 1) as f64);
    let corners = [(0.0, 0.0), (w, 0.0), (w, hh), (0.0, hh)];
    let weights: Vec<f64> = corners
        .iter()
        .map(|&(x, y)| (h * Vector3::new(x, y, 1.0)).z)
        .collect();
    let positive = weights.iter().all(|&v| v > 0.0);
    let negative = weights.iter().all(|&v| v < 0.0);
    if !(positive || negative) {
        return Err(RectifyError::Degenerate(
            "homography sends part of the image to infinity".into(),
        ));
    }
    let mut poly: Polygon = corners
        .iter()
        .map(|&(x, y)| {
            let (u, v) = apply(h, x, y);
            (u + dx, v)
        })
        .collect();
    if signed_area(&poly) < 0.0 {
        poly.reverse();
    }
    Ok(poly)
}

/// Sutherland-Hodgman clip of `subject` by the convex counter-clockwise
/// `clip` polygon.
fn clip_convex(subject: &Polygon, clip: &Polygon) -> Polygon {
    let mut out = subject.clone();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % n]);
        let side = |p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    let t = sp / (sp - sc);
                    out.push((prev.0 + t * (cur.0 - prev.0), prev.1 + t * (cur.1 - prev.1)));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                let t = sp / (sp - sc);
                out.push((prev.0 + t * (cur.0 - prev.0), prev.1 + t * (cur.1 - prev.1)));
            }
        }
    }
    out
}

/// Horizontal extent of a convex polygon at height `y`, if the line meets it.
fn span_at(poly: &Polygon, y: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (ymin, ymax) = (a.1.min(b.1), a.1.max(b.1));
        if y < ymin - 1e-9 || y > ymax + 1e-9 {
            continue;
        }
        if (b.1 - a.1).abs() < 1e-12 {
            lo = lo.min(a.0.min(b.0));
            hi = hi.max(a.0.max(b.0));
        } else {
            let t = ((y - a.1) / (b.1 - a.1)).clamp(0.0, 1.0);
            let x = a.0 + t * (b.0 - a.0);
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

const SNAP: f64 = 1e-7;

/// Largest integer-aligned rectangle of pixel centres inside the convex
/// polygon. The left boundary of a convex set is convex in y and the right
/// one concave, so the binding constraints of a row range sit at its ends.
fn largest_rectangle(poly: &Polygon) -> Option<CropRect> {
    if poly.len() < 3 {
        return None;
    }
    let ymin = poly.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let ymax = poly.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let y_lo = (ymin - SNAP).ceil() as i64;
    let y_hi = (ymax + SNAP).floor() as i64;
    if y_hi < y_lo {
        return None;
    }
    let spans: Vec<Option<(f64, f64)>> = (y_lo..=y_hi).map(|y| span_at(poly, y as f64)).collect();
    let mut best: Option<CropRect> = None;
    for (i, si) in spans.iter().enumerate() {
        let Some((li, ri)) = si else { continue };
        for (j, sj) in spans.iter().enumerate().skip(i) {
            let Some((lj, rj)) = sj else { continue };
            let x0 = (li.max(*lj) - SNAP).ceil() as i64;
            let x1 = (ri.min(*rj) + SNAP).floor() as i64;
            if x1 < x0 {
                continue;
            }
            let rect = CropRect {
                x0,
                y0: y_lo + i as i64,
                width: (x1 - x0 + 1) as usize,
                height: j - i + 1,
            };
            if best.is_none_or(|b| rect.area() > b.area()) {
                best = Some(rect);
            }
        }
    }
    best
}

/// Shifts the right view so the smallest inlier disparity is zero and finds
/// the largest crop valid in both rectified views and the `width x height`
/// output canvas.
pub fn normalize_shift_and_crop(
    h_left: &Matrix3<f64>,
    h_right: &Matrix3<f64>,
    inliers: &[Match],
    width: usize,
    height: usize,
) -> Result<RectificationResult, RectifyError> {
    if inliers.is_empty() {
        return Err(RectifyError::NotEnoughMatches(0));
    }
    if width == 0 || height == 0 {
        return Err(RectifyError::CropFailure);
    }
    let mut disparities = Vec::with_capacity(inliers.len());
    let mut vmax = 0f64;
    let mut vsum = 0f64;
    for m in inliers {
        let (xl, yl) = apply(h_left, m.xl, m.yl);
        let (xr, yr) = apply(h_right, m.xr, m.yr);
        disparities.push(xl - xr);
        let dv = (yl - yr).abs();
        vmax = vmax.max(dv);
        vsum += dv;
    }
    let min_d = disparities.iter().copied().fold(f64::INFINITY, f64::min);
    let max_d = disparities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shift = -min_d;

    let left = footprint(h_left, 0.0, width, height)?;
    let right = footprint(h_right, -shift, width, height)?;
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    let canvas: Polygon = vec![(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let region = clip_convex(&clip_convex(&left, &right), &canvas);
    let crop = largest_rectangle(&region).ok_or(RectifyError::CropFailure)?;

    Ok(RectificationResult {
        h_left: rows_of(h_left),
        h_right: rows_of(h_right),
        crop,
        shift,
        inliers: inliers.len(),
        vertical_disparity: VerticalStats {
            max: vmax,
            mean: vsum / inliers.len() as f64,
        },
        min_disparity: min_d + shift,
        max_disparity: max_d + shift,
    })
}
