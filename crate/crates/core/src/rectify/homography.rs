//! Uncalibrated (Hartley) rectification from a fundamental matrix.
//!
//! The right homography sends the right epipole to infinity along the x
//! axis; the left one is the matching transform, fixed up to an x-affinity
//! that is chosen by least squares to minimize horizontal disparity over
//! the matches.

use nalgebra::{Matrix3, Vector3};

use super::{FundamentalMatrix, Match, RectifyError};

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Left and right epipoles: `F e_l = 0` and `e_r^T F = 0`, unit length.
pub fn epipoles(f: &FundamentalMatrix) -> Result<(Vector3<f64>, Vector3<f64>), RectifyError> {
    let svd = f.matrix().svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(RectifyError::Numerical("svd of F failed".into())),
    };
    let e_l = v_t.row(2).transpose().normalize();
    let e_r = u.column(2).normalize();
    Ok((e_l, e_r))
}

fn finite_point(e: &Vector3<f64>) -> Option<(f64, f64)> {
    if e.z.abs() <= 1e-12 * (e.x.abs() + e.y.abs()) {
        None
    } else {
        Some((e.x / e.z, e.y / e.z))
    }
}

fn check_outside(e: &Vector3<f64>, width: usize, height: usize, which: &str) -> Result<(), RectifyError> {
    if let Some((x, y)) = finite_point(e) {
        if x >= 0.0 && y >= 0.0 && x <= width as f64 && y <= height as f64 {
            return Err(RectifyError::Degenerate(format!(
                "{which} epipole ({x:.1}, {y:.1}) lies inside the {width}x{height} image"
            )));
        }
    }
    Ok(())
}

fn translation(tx: f64, ty: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0)
}

/// Scales `h` so its bottom-right entry is 1, or, when that entry vanishes,
/// so that points near `center` have positive homogeneous weight.
pub(crate) fn canonical(h: Matrix3<f64>, center: (f64, f64)) -> Matrix3<f64> {
    if h[(2, 2)].abs() > 1e-12 {
        return h / h[(2, 2)];
    }
    let w = h[(2, 0)] * center.0 + h[(2, 1)] * center.1 + h[(2, 2)];
    if w < 0.0 {
        -h
    } else {
        h
    }
}

/// Right-image homography mapping `e_r` to the point at infinity on the x
/// axis, conjugated by the image-centre translation so that the image stays
/// roughly in place.
fn right_homography(e_r: &Vector3<f64>, width: usize, height: usize) -> Matrix3<f64> {
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let t = translation(-cx, -cy);
    let e = t * e_r;
    let (ex, ey, finite) = match finite_point(&e) {
        Some((x, y)) => (x, y, true),
        None => (e.x, e.y, false),
    };
    // rotate by at most 90 degrees so the epipole lands on the x axis
    let theta = if ex == 0.0 {
        std::f64::consts::FRAC_PI_2 * ey.signum()
    } else {
        (ey / ex).atan()
    };
    let (s, c) = theta.sin_cos();
    let rot = Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
    let g = if finite {
        let f = c * ex + s * ey;
        Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0 / f, 0.0, 1.0)
    } else {
        Matrix3::identity()
    };
    translation(cx, cy) * g * rot * t
}

fn apply(h: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let p = h * Vector3::new(x, y, 1.0);
    (p.x / p.z, p.y / p.z)
}

/// Computes `(H_l, H_r)` from `F` and inlier matches.
pub fn compute_rectifying_homographies(
    f: &FundamentalMatrix,
    inliers: &[Match],
    width: usize,
    height: usize,
) -> Result<(Matrix3<f64>, Matrix3<f64>), RectifyError> {
    if inliers.len() < 8 {
        return Err(RectifyError::NotEnoughMatches(inliers.len()));
    }
    let (e_l, e_r) = epipoles(f)?;
    check_outside(&e_l, width, height, "left")?;
    check_outside(&e_r, width, height, "right")?;
    let center = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);

    let h_r = right_homography(&e_r, width, height);

    // F = [e_r]_x M for M = [e_r]_x F + e_r v^T; pick a v that keeps M
    // well conditioned
    let base = skew(&e_r) * f.matrix();
    let m = [
        Vector3::new(1.0, 1.0, 1.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
        Vector3::new(0.0, 0.0, 1.0),
    ]
    .iter()
    .map(|v| base + e_r * v.transpose())
    .max_by(|a, b| {
        a.determinant()
            .abs()
            .partial_cmp(&b.determinant().abs())
            .unwrap_or(std::cmp::Ordering::Equal)
    })
    .expect("candidate list is non-empty");
    if m.determinant().abs() < 1e-12 {
        return Err(RectifyError::Degenerate("cannot factor F into [e]_x M".into()));
    }
    let h0 = h_r * m;

    // least squares for x_r' ~ a x_l' + b y_l' + c
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for mt in inliers {
        let (xl, yl) = apply(&h0, mt.xl, mt.yl);
        let (xr, _) = apply(&h_r, mt.xr, mt.yr);
        let row = Vector3::new(xl, yl, 1.0);
        ata += row * row.transpose();
        atb += row * xr;
    }
    let abc = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| RectifyError::Degenerate("matches do not constrain the left transform".into()))?;
    let h_a = Matrix3::new(abc.x, abc.y, abc.z, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
    let h_l = h_a * h0;

    Ok((canonical(h_l, center), canonical(h_r, center)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rectify::synthetic::TwoViewScene;
    use crate::rectify::{estimate_fundamental_ransac, RansacConfig};

    fn vertical_residual(h_l: &Matrix3<f64>, h_r: &Matrix3<f64>, m: &[Match]) -> f64 {
        m.iter()
            .map(|mt| (apply(h_l, mt.xl, mt.yl).1 - apply(h_r, mt.xr, mt.yr).1).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn rotated_scene_rectifies() {
        for seed in 0..5 {
            let scene = TwoViewScene::rotated(seed);
            let m = scene.matches(60, seed);
            let f = FundamentalMatrix::from_matrix(scene.fundamental()).unwrap();
            let (h_l, h_r) = compute_rectifying_homographies(&f, &m, scene.width, scene.height).unwrap();
            let res = vertical_residual(&h_l, &h_r, &m);
            assert!(res < 0.1, "seed {seed}: residual {res}");
            // independent points not used in the fit also line up
            let fresh = scene.matches(20, seed + 100);
            assert!(vertical_residual(&h_l, &h_r, &fresh) < 0.1);
        }
    }

    #[test]
    fn rectified_pair_is_near_identity() {
        let scene = TwoViewScene::rectified(2);
        let m = scene.matches(50, 1);
        let out = estimate_fundamental_ransac(&m, &RansacConfig::default()).unwrap();
        let (h_l, h_r) = compute_rectifying_homographies(&out.fundamental, &m, 640, 480).unwrap();
        assert!((h_r - Matrix3::identity()).abs().max() < 1e-9, "{h_r}");
        // left transform is identity up to an x-affinity close to a shift
        assert!(h_l[(1, 0)].abs() < 1e-9 && (h_l[(1, 1)] - 1.0).abs() < 1e-9);
        assert!(h_l[(2, 0)].abs() < 1e-9 && h_l[(2, 1)].abs() < 1e-9);
        for mt in &m {
            assert!((apply(&h_l, mt.xl, mt.yl).1 - mt.yl).abs() < 1e-6);
            assert!((apply(&h_r, mt.xr, mt.yr).1 - mt.yr).abs() < 1e-6);
        }
    }

    #[test]
    fn epipole_in_image_is_degenerate() {
        // pure forward motion: epipole at the principal point
        let e = Vector3::new(320.0, 240.0, 1.0);
        let f = FundamentalMatrix::from_matrix(skew(&e)).unwrap();
        let m: Vec<Match> = (0..10)
            .map(|i| Match::new(10.0 + i as f64, 20.0, 12.0 + i as f64, 20.0))
            .collect();
        assert!(matches!(
            compute_rectifying_homographies(&f, &m, 640, 480),
            Err(RectifyError::Degenerate(_))
        ));
    }
}
