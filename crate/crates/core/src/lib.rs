//! Monocular-to-stereo video conversion toolkit.
//!
//! The pipeline warps a left-eye clip to a virtual right camera using
//! per-frame depth, marks disocclusions, and hands the warped clip to a
//! pluggable refiner. Supporting modules cover stereo rectification of
//! training pairs, reference attention kernels, diffusion numerics and
//! image quality metrics.

pub mod attention;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod rectify;
pub mod refine;
pub mod types;
pub mod warp;

pub use types::{DepthMap, DisparityField, DisparityMap, DisocclusionMask, Frame, Mask, VideoClip};
