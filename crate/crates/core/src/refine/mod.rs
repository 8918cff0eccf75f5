//! Diffusion numerics and the single-pass refinement stage.
//!
//! The refinement model is a one-step diffusion predictor: with a zero
//! initial latent at the last timestep the `v` target reduces to `-z`, so
//! the right view is `decode(-v)` from a single backend call. The VAE is
//! replaced by a [`LatentCodec`], and concrete refiners plug in through
//! [`Refiner`].

mod codec;
mod conditioning;
mod refiner;

pub use codec::{codec_by_name, IdentityCodec, LatentCodec, LatentGrid, PatchifyCodec, CODEC_NAMES, LATENT_CHANNELS};
pub use conditioning::{
    assemble_conditioning, downsample_mask, ConditioningParts, ConditioningTensor, CONDITIONING_CHANNELS,
    INITIAL_CHANNELS, LEFT_CHANNELS, MASK_CHANNEL, WARPED_CHANNELS,
};
pub use refiner::{
    farplane_fill, predict_single_step, EchoBackend, FarPlaneRefiner, PassthroughRefiner, Refiner, RefinerBackend,
    RefinerRegistry, SingleStepRefiner, FILL_GRAY,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Mask, TypeError, VideoClip};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{height}x{width} is not divisible by the codec factor {factor}")]
    Divisibility { height: usize, width: usize, factor: usize },
    #[error("backend failed: {0}")]
    Backend(String),
    #[error("unknown {kind} '{name}' (known: {known})")]
    UnknownName {
        kind: &'static str,
        name: String,
        known: String,
    },
    #[error("perceptual loss failed: {0}")]
    Perceptual(String),
    #[error(transparent)]
    Type(#[from] TypeError),
}

pub(crate) fn check_inputs(left: &VideoClip, warped: &VideoClip, mask: &[Mask]) -> Result<(), RefineError> {
    if left.len() != warped.len() || left.dims() != warped.dims() {
        return Err(RefineError::Shape(format!(
            "left clip is {} frames of {:?}, warped is {} frames of {:?}",
            left.len(),
            left.dims(),
            warped.len(),
            warped.dims()
        )));
    }
    if mask.len() != left.len() || mask.iter().any(|m| m.dims() != left.dims()) {
        return Err(RefineError::Shape(format!(
            "{} masks do not match {} frames of {:?}",
            mask.len(),
            left.len(),
            left.dims()
        )));
    }
    Ok(())
}

/// `ᾱ_T` below this counts as the feed-forward regime (`z_T ≈ 0`).
pub const FEED_FORWARD_ALPHA_BAR: f64 = 1e-4;

/// Noise schedule; timesteps are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn timesteps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Whether the last step leaves essentially no signal.
    pub fn is_feed_forward_regime(&self) -> bool {
        self.alpha_bar(self.timesteps()) < FEED_FORWARD_ALPHA_BAR
    }

    fn check_t(&self, t: usize) -> Result<f64, RefineError> {
        if t == 0 || t > self.timesteps() {
            return Err(RefineError::Schedule(format!(
                "timestep {t} outside 1..={}",
                self.timesteps()
            )));
        }
        Ok(self.alpha_bar(t))
    }
}

/// Linear `β` from `beta_start` to `beta_end` over `timesteps` steps.
pub fn make_schedule(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule, RefineError> {
    if timesteps == 0 {
        return Err(RefineError::Schedule("need at least one timestep".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(RefineError::Schedule(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let beta: Vec<f64> = (0..timesteps)
        .map(|i| {
            if timesteps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(timesteps);
    let mut acc = 1.0;
    for b in &beta {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    if alpha_bar.windows(2).any(|w| w[1] >= w[0]) || acc <= 0.0 {
        return Err(RefineError::Schedule("cumulative product underflows".into()));
    }
    Ok(DiffusionSchedule { beta, alpha_bar })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    #[serde(rename = "T")]
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<DiffusionSchedule, RefineError> {
        make_schedule(self.timesteps, self.beta_start, self.beta_end)
    }
}

/// `sqrt(ᾱ) z + sqrt(1 - ᾱ) eps` for an explicit `ᾱ`.
pub fn forward_diffuse_with(z: &LatentGrid, eps: &LatentGrid, alpha_bar: f64) -> Result<LatentGrid, RefineError> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    z.zip_map(eps, |z, e| (a * z as f64 + b * e as f64) as f32)
}

pub fn forward_diffuse(
    z: &LatentGrid,
    eps: &LatentGrid,
    t: usize,
    schedule: &DiffusionSchedule,
) -> Result<LatentGrid, RefineError> {
    forward_diffuse_with(z, eps, schedule.check_t(t)?)
}

/// `sqrt(ᾱ) eps - sqrt(1 - ᾱ) z` for an explicit `ᾱ`.
pub fn v_target_with(z: &LatentGrid, eps: &LatentGrid, alpha_bar: f64) -> Result<LatentGrid, RefineError> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    z.zip_map(eps, |z, e| (a * e as f64 - b * z as f64) as f32)
}

pub fn v_target(z: &LatentGrid, eps: &LatentGrid, t: usize, schedule: &DiffusionSchedule) -> Result<LatentGrid, RefineError> {
    v_target_with(z, eps, schedule.check_t(t)?)
}

/// Mean squared error between `-z_gt` and the predicted `v`.
pub fn loss_latent(z_gt: &LatentGrid, v_hat: &LatentGrid) -> Result<f64, RefineError> {
    z_gt.check_same_shape(v_hat)?;
    let n = z_gt.data().len().max(1) as f64;
    Ok(z_gt
        .data()
        .iter()
        .zip(v_hat.data())
        .map(|(&z, &v)| {
            let d = -(z as f64) - v as f64;
            d * d
        })
        .sum::<f64>()
        / n)
}

/// A learned perceptual distance; none ships with the crate.
pub trait PerceptualLoss: Send + Sync {
    fn distance(&self, a: &VideoClip, b: &VideoClip) -> Result<f64, RefineError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImageLoss {
    pub l1: f64,
    pub perceptual: f64,
    pub perceptual_absent: bool,
}

impl ImageLoss {
    pub fn total(&self) -> f64 {
        self.l1 + self.perceptual
    }
}

pub fn loss_image(
    gt: &VideoClip,
    predicted: &VideoClip,
    perceptual: Option<&dyn PerceptualLoss>,
) -> Result<ImageLoss, RefineError> {
    if gt.len() != predicted.len() || gt.dims() != predicted.dims() {
        return Err(RefineError::Shape("image loss inputs differ in shape".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in gt.frames().iter().zip(predicted.frames()) {
        for (&x, &y) in a.data().iter().zip(b.data()) {
            sum += (x as f64 - y as f64).abs();
        }
        count += a.data().len();
    }
    let (perceptual, absent) = match perceptual {
        Some(p) => (p.distance(gt, predicted)?, false),
        None => (0.0, true),
    };
    Ok(ImageLoss {
        l1: sum / count.max(1) as f64,
        perceptual,
        perceptual_absent: absent,
    })
}

/// Latent loss plus the image-space terms.
pub fn total_loss(latent: f64, image: &ImageLoss) -> f64 {
    latent + image.total()
}
