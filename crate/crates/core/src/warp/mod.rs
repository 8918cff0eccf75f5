//! Depth to disparity conversion, forward splatting to the right view and
//! disocclusion masks.

mod morphology;
mod splat;

pub use morphology::{close_mask, dilate, erode};
pub use splat::{forward_splat, SplatFrame, SplatMode};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{DepthMap, DisparityField, DisparityMap, DisocclusionMask, Mask, TypeError, VideoClip};

#[derive(Debug, Error, PartialEq)]
pub enum WarpError {
    #[error("invalid warp config: {0}")]
    Config(String),
    #[error("{frames} frames but {depths} depth maps")]
    CountMismatch { frames: usize, depths: usize },
    #[error("frame {index}: image is {image_h}x{image_w} but depth is {depth_h}x{depth_w}")]
    SizeMismatch {
        index: usize,
        image_h: usize,
        image_w: usize,
        depth_h: usize,
        depth_w: usize,
    },
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// How inverse depth is normalized into `[0, D_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// One min/max over every frame of the clip.
    #[default]
    ClipGlobal,
    PerFrame,
}

impl std::str::FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clip-global" | "global" => Ok(Self::ClipGlobal),
            "per-frame" => Ok(Self::PerFrame),
            other => Err(format!(
                "unknown normalization '{other}' (clip-global|per-frame)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpConfig {
    pub max_disparity: f32,
    pub splat_mode: SplatMode,
    pub closing_kernel: usize,
    pub normalization: Normalization,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            max_disparity: 0.0,
            splat_mode: SplatMode::Nearest,
            closing_kernel: 11,
            normalization: Normalization::ClipGlobal,
        }
    }
}

impl WarpConfig {
    pub fn with_max_disparity(max_disparity: f32) -> Self {
        Self {
            max_disparity,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), WarpError> {
        if !(self.max_disparity.is_finite() && self.max_disparity >= 0.0) {
            return Err(WarpError::Config(format!(
                "max disparity must be finite and >= 0, got {}",
                self.max_disparity
            )));
        }
        if self.closing_kernel == 0 || self.closing_kernel % 2 == 0 {
            return Err(WarpError::Config(format!(
                "closing kernel must be odd and >= 1, got {}",
                self.closing_kernel
            )));
        }
        Ok(())
    }
}

/// Inverse-depth range used to normalize disparities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseDepthRange {
    pub min: f64,
    pub max: f64,
}

impl InverseDepthRange {
    pub fn of(depth: &DepthMap) -> Self {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &d in depth.data() {
            let i = 1.0 / d as f64;
            min = min.min(i);
            max = max.max(i);
        }
        Self { min, max }
    }

    pub fn union(self, other: Self) -> Self {
        Self {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }
}

/// `d = D_max * (i - i_min) / (i_max - i_min)` with `i = 1 / depth` over
/// this frame's own range. Constant depth maps to `D_max` everywhere.
pub fn depth_to_disparity(depth: &DepthMap, max_disparity: f32) -> DisparityMap {
    depth_to_disparity_in_range(depth, max_disparity, InverseDepthRange::of(depth))
}

/// Same as [`depth_to_disparity`] with an externally supplied inverse-depth
/// range, e.g. one shared across a clip.
pub fn depth_to_disparity_in_range(
    depth: &DepthMap,
    max_disparity: f32,
    range: InverseDepthRange,
) -> DisparityMap {
    let dmax = max_disparity.max(0.0) as f64;
    let span = range.max - range.min;
    let data = depth
        .data()
        .iter()
        .map(|&d| {
            if span <= 0.0 {
                return dmax as f32;
            }
            let t = ((1.0 / d as f64) - range.min) / span;
            (dmax * t).clamp(0.0, dmax) as f32
        })
        .collect();
    DisparityMap::new(depth.height(), depth.width(), data)
        .expect("normalized disparities are finite and non-negative")
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    /// The warped right view; hole pixels hold 0.
    pub warped: VideoClip,
    /// Disocclusion masks after closing.
    pub mask: DisocclusionMask,
    pub disparity: DisparityField,
}

impl WarpResult {
    pub fn masked_pixels(&self) -> usize {
        self.mask.iter().map(Mask::count).sum()
    }

    pub fn masked_fraction(&self) -> f64 {
        let (h, w) = self.warped.dims();
        let total = h * w * self.mask.len();
        if total == 0 {
            0.0
        } else {
            self.masked_pixels() as f64 / total as f64
        }
    }
}

/// Warps every frame: disparity conversion, splatting, then mask closing.
pub fn warp_clip(left: &VideoClip, depth: &[DepthMap], cfg: &WarpConfig) -> Result<WarpResult, WarpError> {
    cfg.validate()?;
    if left.len() != depth.len() {
        return Err(WarpError::CountMismatch {
            frames: left.len(),
            depths: depth.len(),
        });
    }
    for (index, (f, d)) in left.frames().iter().zip(depth).enumerate() {
        if f.dims() != d.dims() {
            return Err(WarpError::SizeMismatch {
                index,
                image_h: f.height(),
                image_w: f.width(),
                depth_h: d.height(),
                depth_w: d.width(),
            });
        }
    }
    let global = depth
        .iter()
        .map(InverseDepthRange::of)
        .reduce(InverseDepthRange::union)
        .expect("clip has at least one frame");

    let per_frame: Vec<_> = left
        .frames()
        .par_iter()
        .zip(depth.par_iter())
        .map(|(frame, d)| {
            let range = match cfg.normalization {
                Normalization::ClipGlobal => global,
                Normalization::PerFrame => InverseDepthRange::of(d),
            };
            let disp = depth_to_disparity_in_range(d, cfg.max_disparity, range);
            let splat = forward_splat(frame, &disp, cfg.splat_mode);
            let mask = close_mask(&splat.holes, cfg.closing_kernel);
            (splat.warped, mask, disp)
        })
        .collect();

    let mut frames = Vec::with_capacity(per_frame.len());
    let mut mask = Vec::with_capacity(per_frame.len());
    let mut disparity = Vec::with_capacity(per_frame.len());
    for (f, m, d) in per_frame {
        frames.push(f);
        mask.push(m);
        disparity.push(d);
    }
    Ok(WarpResult {
        warped: VideoClip::new(frames, left.fps())?,
        mask,
        disparity,
    })
}
