//! Synthetic two-view scenes with known geometry, for tests and demos.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Match, MatchSet};

/// A pinhole stereo rig: left camera `K [I | 0]`, right camera `K [R | t]`.
#[derive(Debug, Clone)]
pub struct TwoViewScene {
    pub width: usize,
    pub height: usize,
    pub k: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    seed: u64,
}

impl TwoViewScene {
    fn base(seed: u64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            width: 640,
            height: 480,
            k: Matrix3::new(500.0, 0.0, 320.0, 0.0, 500.0, 240.0, 0.0, 0.0, 1.0),
            rotation,
            translation,
            seed,
        }
    }

    /// Right camera slightly rotated and offset, mostly horizontal baseline;
    /// both epipoles lie far outside the image.
    pub fn rotated(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let roll = rng.gen_range(-0.03..0.03);
        let pitch = rng.gen_range(-0.02..0.02);
        let yaw = rng.gen_range(-0.04..0.04);
        let rotation = *Rotation3::from_euler_angles(roll, pitch, yaw).matrix();
        let translation = Vector3::new(
            -1.0,
            rng.gen_range(-0.06..0.06),
            rng.gen_range(-0.03..0.03),
        );
        Self::base(seed, rotation, translation)
    }

    /// An already rectified rig: identity rotation, pure x baseline.
    pub fn rectified(seed: u64) -> Self {
        Self::base(seed, Matrix3::identity(), Vector3::new(-1.0, 0.0, 0.0))
    }

    /// Ground-truth `F` with `x_r^T F x_l = 0`.
    pub fn fundamental(&self) -> Matrix3<f64> {
        let k_inv = self.k.try_inverse().expect("K is invertible");
        let t = self.translation;
        let tx = Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0);
        k_inv.transpose() * tx * self.rotation * k_inv
    }

    fn in_bounds(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    fn project(&self, p: Vector3<f64>) -> (f64, f64) {
        let q = self.k * p;
        (q.x / q.z, q.y / q.z)
    }

    /// `n` noiseless matches of random scene points at depths 4..12.
    pub fn matches(&self, n: usize, seed: u64) -> Vec<Match> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(1_000_003) ^ seed);
        let k_inv = self.k.try_inverse().expect("K is invertible");
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let u = rng.gen_range(20.0..(self.width as f64 - 20.0));
            let v = rng.gen_range(20.0..(self.height as f64 - 20.0));
            let z = rng.gen_range(4.0..12.0);
            let p = k_inv * Vector3::new(u, v, 1.0) * z;
            let pr = self.rotation * p + self.translation;
            if pr.z <= 0.0 {
                continue;
            }
            let (xr, yr) = self.project(pr);
            if !self.in_bounds(xr, yr) {
                continue;
            }
            let (xl, yl) = self.project(p);
            out.push(Match::new(xl, yl, xr, yr));
        }
        out
    }

    /// Noiseless matches where a `fraction` of the right points is moved far
    /// off its epipolar line (Sampson distance under the true F above 20 px).
    /// Returns the matches and the outlier flags.
    pub fn matches_with_outliers(&self, n: usize, fraction: f64, seed: u64) -> (Vec<Match>, Vec<bool>) {
        let mut matches = self.matches(n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xbad));
        let n_bad = (n as f64 * fraction).round() as usize;
        let idx = rand::seq::index::sample(&mut rng, n, n_bad).into_vec();
        let f = self.fundamental();
        let mut flags = vec![false; n];
        for i in idx {
            let m = matches[i];
            loop {
                let dx = rng.gen_range(30.0..150.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let dy = rng.gen_range(30.0..150.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let cand = Match::new(m.xl, m.yl, m.xr + dx, m.yr + dy);
                if self.in_bounds(cand.xr, cand.yr)
                    && super::fundamental::sampson_distance(&f, &cand) > 20.0
                {
                    matches[i] = cand;
                    break;
                }
            }
            flags[i] = true;
        }
        (matches, flags)
    }

    pub fn match_set(&self, matches: Vec<Match>) -> MatchSet {
        MatchSet::new(matches, self.width, self.height).expect("synthetic matches are in bounds")
    }
}
