//! Horizontal forward splatting with a disparity z-buffer.

use serde::{Deserialize, Serialize};

use crate::types::{DisparityMap, Frame, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplatMode {
    /// Each source pixel lands on `round(x - d)` (half rounds up).
    #[default]
    Nearest,
    /// Each source pixel spreads over `floor(x - d)` and the next column with
    /// linear weights; zero-weight contributions are dropped.
    Bilinear,
}

impl std::str::FromStr for SplatMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "bilinear" => Ok(Self::Bilinear),
            other => Err(format!("unknown splat mode '{other}' (nearest|bilinear)")),
        }
    }
}

/// The front-most contributor seen so far at a target pixel.
#[derive(Clone, Copy)]
struct Winner {
    disparity: f32,
    source_x: usize,
}

impl Winner {
    /// Larger disparity wins; equal disparities keep the smaller source x.
    #[inline]
    fn beaten_by(&self, disparity: f32, source_x: usize) -> bool {
        disparity > self.disparity || (disparity == self.disparity && source_x < self.source_x)
    }
}

/// Output of splatting a single frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatFrame {
    pub warped: Frame,
    /// 1 where no source contributed, before any morphological cleanup.
    pub holes: Mask,
    /// Total splat weight received per target pixel.
    pub weight: Vec<f32>,
}

/// Splats `left` to the virtual right view: source column `x` with
/// disparity `d` targets `x - d`. Targets outside the row are dropped.
pub fn forward_splat(left: &Frame, disparity: &DisparityMap, mode: SplatMode) -> SplatFrame {
    assert_eq!(
        left.dims(),
        disparity.dims(),
        "frame and disparity dimensions differ"
    );
    let (h, w) = left.dims();
    let mut warped = Frame::filled(h, w, [0.0; 3]);
    let mut holes = Mask::ones(h, w);
    let mut weight = vec![0f32; h * w];
    let mut winners: Vec<Option<Winner>> = vec![None; w];

    for y in 0..h {
        winners.iter_mut().for_each(|s| *s = None);
        let row_weight = &mut weight[y * w..(y + 1) * w];
        for x in 0..w {
            let d = disparity.get(y, x);
            let target = x as f64 - d as f64;
            let mut contribute = |tx: i64, wgt: f32| {
                if wgt <= 0.0 || tx < 0 || tx >= w as i64 {
                    return;
                }
                let tx = tx as usize;
                row_weight[tx] += wgt;
                let replace = match winners[tx] {
                    None => true,
                    Some(cur) => cur.beaten_by(d, x),
                };
                if replace {
                    winners[tx] = Some(Winner {
                        disparity: d,
                        source_x: x,
                    });
                }
            };
            match mode {
                SplatMode::Nearest => contribute((target + 0.5).floor() as i64, 1.0),
                SplatMode::Bilinear => {
                    let base = target.floor();
                    let frac = (target - base) as f32;
                    contribute(base as i64, 1.0 - frac);
                    contribute(base as i64 + 1, frac);
                }
            }
        }
        for (tx, slot) in winners.iter().enumerate() {
            if let Some(win) = slot {
                warped.set_pixel(y, tx, left.pixel(y, win.source_x));
                holes.set(y, tx, false);
            }
        }
    }
    SplatFrame {
        warped,
        holes,
        weight,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_row(w: usize) -> Frame {
        let data = (0..w)
            .flat_map(|x| {
                let v = x as f32 / w as f32;
                [v, v * 0.5, 1.0 - v]
            })
            .collect();
        Frame::new(1, w, data).unwrap()
    }

    /// Hand-executed enumeration of integer-disparity destinations.
    fn enumerate_row(left: &Frame, d: &[usize]) -> (Vec<Option<usize>>, Vec<bool>) {
        let w = d.len();
        let mut src: Vec<Option<usize>> = vec![None; w];
        for x in 0..w {
            if d[x] > x {
                continue;
            }
            let t = x - d[x];
            match src[t] {
                Some(s) if d[s] >= d[x] => {}
                _ => src[t] = Some(x),
            }
        }
        let _ = left;
        let holes = src.iter().map(|s| s.is_none()).collect();
        (src, holes)
    }

    #[test]
    fn zero_disparity_is_identity() {
        let left = ramp_row(8);
        let disp = DisparityMap::uniform(1, 8, 0.0).unwrap();
        for mode in [SplatMode::Nearest, SplatMode::Bilinear] {
            let out = forward_splat(&left, &disp, mode);
            assert_eq!(out.warped, left);
            assert_eq!(out.holes.count(), 0);
        }
    }

    #[test]
    fn uniform_shift_by_three() {
        let left = ramp_row(8);
        let disp = DisparityMap::uniform(1, 8, 3.0).unwrap();
        let out = forward_splat(&left, &disp, SplatMode::Nearest);
        for x in 0..=4 {
            assert_eq!(out.warped.pixel(0, x), left.pixel(0, x + 3));
            assert!(!out.holes.get(0, x));
        }
        for x in 5..8 {
            assert!(out.holes.get(0, x));
            assert_eq!(out.warped.pixel(0, x), [0.0; 3]);
        }
    }

    #[test]
    fn two_layer_band() {
        let left = ramp_row(8);
        let d = [4usize, 4, 4, 4, 0, 0, 0, 0];
        let disp =
            DisparityMap::new(1, 8, d.iter().map(|&v| v as f32).collect()).unwrap();
        let out = forward_splat(&left, &disp, SplatMode::Nearest);
        let (src, holes) = enumerate_row(&left, &d);
        assert_eq!(
            out.holes.data(),
            &holes.iter().map(|&b| b as u8).collect::<Vec<_>>()[..]
        );
        assert_eq!(out.holes.count(), 4);
        for (t, s) in src.iter().enumerate() {
            if let Some(s) = s {
                assert_eq!(out.warped.pixel(0, t), left.pixel(0, *s));
            }
        }
    }

    #[test]
    fn near_layer_overwrites_far() {
        // near block at x = 4..6 (d = 3) lands on 1..3 over the far layer
        let left = ramp_row(10);
        let d = [0usize, 0, 0, 0, 3, 3, 3, 0, 0, 0];
        let disp = DisparityMap::new(1, 10, d.iter().map(|&v| v as f32).collect()).unwrap();
        let out = forward_splat(&left, &disp, SplatMode::Nearest);
        let (src, _) = enumerate_row(&left, &d);
        assert_eq!(src[1], Some(4));
        assert_eq!(out.warped.pixel(0, 1), left.pixel(0, 4));
        assert_eq!(out.warped.pixel(0, 3), left.pixel(0, 6));
        // the far layer's hidden columns 4..6 are holes
        assert_eq!(&out.holes.data()[4..7], &[1, 1, 1]);
    }

    #[test]
    fn ties_prefer_smaller_source() {
        // x=2,d=0.6 -> 1.4 -> 1 ; x=1,d=0.0 -> 1 ; x=2 wins by disparity.
        // x=3,d=1.6 -> 1.4 -> 1 ; larger disparity wins again.
        let left = ramp_row(4);
        let disp = DisparityMap::new(1, 4, vec![0.0, 0.0, 0.6, 1.6]).unwrap();
        let out = forward_splat(&left, &disp, SplatMode::Nearest);
        assert_eq!(out.warped.pixel(0, 1), left.pixel(0, 3));

        let disp = DisparityMap::new(1, 4, vec![0.0, 1.0, 2.0, 0.0]).unwrap();
        let out = forward_splat(&left, &disp, SplatMode::Nearest);
        // x=1 and x=2 both target 0 with disparities 1 and 2
        assert_eq!(out.warped.pixel(0, 0), left.pixel(0, 2));
    }

    #[test]
    fn bilinear_integer_matches_nearest() {
        let left = ramp_row(9);
        let d: Vec<f32> = vec![0.0, 0.0, 2.0, 2.0, 2.0, 1.0, 0.0, 0.0, 0.0];
        let disp = DisparityMap::new(1, 9, d).unwrap();
        let a = forward_splat(&left, &disp, SplatMode::Nearest);
        let b = forward_splat(&left, &disp, SplatMode::Bilinear);
        assert_eq!(a.warped, b.warped);
        assert_eq!(a.holes, b.holes);
    }

    #[test]
    fn bilinear_spreads_fractional_shift() {
        let left = ramp_row(6);
        let disp = DisparityMap::uniform(1, 6, 0.5).unwrap();
        let out = forward_splat(&left, &disp, SplatMode::Bilinear);
        // every column receives half from two neighbours, except the last
        assert_eq!(out.holes.count(), 0);
        assert!((out.weight[0] - 1.0).abs() < 1e-6);
        assert!((out.weight[5] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn mask_matches_zero_weight() {
        let left = ramp_row(12);
        let disp = DisparityMap::new(
            1,
            12,
            vec![0.0, 0.3, 2.7, 2.7, 4.2, 4.2, 1.1, 0.0, 0.0, 5.5, 5.5, 0.2],
        )
        .unwrap();
        for mode in [SplatMode::Nearest, SplatMode::Bilinear] {
            let out = forward_splat(&left, &disp, mode);
            for x in 0..12 {
                assert_eq!(out.holes.get(0, x), out.weight[x] == 0.0);
            }
        }
    }
}
