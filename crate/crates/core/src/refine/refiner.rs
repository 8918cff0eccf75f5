//! Refiner interface, the single-pass prediction contract, and built-in
//! refiners.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::types::{Frame, Mask, VideoClip};

use super::codec::{LatentCodec, LatentGrid, LATENT_CHANNELS};
use super::conditioning::{assemble_conditioning, ConditioningTensor, WARPED_CHANNELS};
use super::RefineError;

/// The network behind single-pass refinement: given the 13-channel input
/// (zero initial latent) and timestep `t`, predicts `v`.
pub trait RefinerBackend: Send + Sync {
    fn predict_v(&self, input: &ConditioningTensor, t: usize) -> Result<LatentGrid, RefineError>;
}

/// `decode(-v)` from one backend evaluation at `t = timesteps`.
pub fn predict_single_step(
    cond: &ConditioningTensor,
    backend: &dyn RefinerBackend,
    codec: &dyn LatentCodec,
    timesteps: usize,
    fps: f64,
) -> Result<VideoClip, RefineError> {
    let v = backend
        .predict_v(cond, timesteps)
        .map_err(|e| RefineError::Backend(format!("single-step prediction: {e}")))?;
    let expected = (cond.n, cond.h, cond.w, LATENT_CHANNELS);
    if v.shape() != expected {
        return Err(RefineError::Backend(format!(
            "backend returned shape {:?}, expected {expected:?}",
            v.shape()
        )));
    }
    codec.decode(&v.map(|x| -x), fps)
}

/// Produces the right view from the left view, the warped view and the
/// disocclusion masks. Output has the input dimensions.
pub trait Refiner: Send + Sync {
    fn name(&self) -> &str;

    fn refine(&self, left: &VideoClip, warped: &VideoClip, mask: &[Mask]) -> Result<VideoClip, RefineError>;
}

/// Returns the warped view untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassthroughRefiner;

impl Refiner for PassthroughRefiner {
    fn name(&self) -> &str {
        "passthrough"
    }

    fn refine(&self, left: &VideoClip, warped: &VideoClip, mask: &[Mask]) -> Result<VideoClip, RefineError> {
        super::check_inputs(left, warped, mask)?;
        Ok(warped.clone())
    }
}

/// Fills each hole from the background side: the nearest visible pixel to
/// the right in the same row, else the nearest to the left, else mid gray.
#[derive(Debug, Clone, Copy, Default)]
pub struct FarPlaneRefiner;

pub const FILL_GRAY: f32 = 0.5;

pub fn farplane_fill(frame: &Frame, mask: &Mask) -> Frame {
    let (h, w) = frame.dims();
    let mut out = frame.clone();
    let mut right = vec![None; w];
    for y in 0..h {
        let mut next = None;
        for x in (0..w).rev() {
            if !mask.get(y, x) {
                next = Some(x);
            }
            right[x] = next;
        }
        let mut prev = None;
        for x in 0..w {
            if !mask.get(y, x) {
                prev = Some(x);
                continue;
            }
            let rgb = match right[x].or(prev) {
                Some(src) => frame.pixel(y, src),
                None => [FILL_GRAY; 3],
            };
            out.set_pixel(y, x, rgb);
        }
    }
    out
}

impl Refiner for FarPlaneRefiner {
    fn name(&self) -> &str {
        "farplane"
    }

    fn refine(&self, left: &VideoClip, warped: &VideoClip, mask: &[Mask]) -> Result<VideoClip, RefineError> {
        super::check_inputs(left, warped, mask)?;
        let frames = warped
            .frames()
            .iter()
            .zip(mask)
            .map(|(f, m)| farplane_fill(f, m))
            .collect();
        Ok(VideoClip::new(frames, warped.fps())?)
    }
}

/// Backend that predicts `v = -E(warped)`, read back from the conditioning.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoBackend;

impl RefinerBackend for EchoBackend {
    fn predict_v(&self, input: &ConditioningTensor, _t: usize) -> Result<LatentGrid, RefineError> {
        Ok(input.block(WARPED_CHANNELS).map(|v| -v))
    }
}

/// Conditioning assembly followed by [`predict_single_step`].
pub struct SingleStepRefiner {
    name: String,
    backend: Arc<dyn RefinerBackend>,
    codec: Arc<dyn LatentCodec>,
    timesteps: usize,
}

impl SingleStepRefiner {
    pub fn new(
        name: impl Into<String>,
        backend: Arc<dyn RefinerBackend>,
        codec: Arc<dyn LatentCodec>,
        timesteps: usize,
    ) -> Self {
        Self {
            name: name.into(),
            backend,
            codec,
            timesteps,
        }
    }
}

impl Refiner for SingleStepRefiner {
    fn name(&self) -> &str {
        &self.name
    }

    fn refine(&self, left: &VideoClip, warped: &VideoClip, mask: &[Mask]) -> Result<VideoClip, RefineError> {
        let cond = assemble_conditioning(left, warped, mask, self.codec.as_ref())?;
        predict_single_step(&cond, self.backend.as_ref(), self.codec.as_ref(), self.timesteps, warped.fps())
    }
}

/// Refiners selectable by name.
#[derive(Clone, Default)]
pub struct RefinerRegistry {
    entries: BTreeMap<String, Arc<dyn Refiner>>,
}

impl RefinerRegistry {
    /// `farplane`, `passthrough`, and `echo` (single-step plumbing through
    /// `codec`).
    pub fn with_builtins(codec: Arc<dyn LatentCodec>, timesteps: usize) -> Self {
        let mut r = Self::default();
        r.register(Arc::new(FarPlaneRefiner));
        r.register(Arc::new(PassthroughRefiner));
        r.register(Arc::new(SingleStepRefiner::new("echo", Arc::new(EchoBackend), codec, timesteps)));
        r
    }

    pub fn register(&mut self, refiner: Arc<dyn Refiner>) {
        self.entries.insert(refiner.name().to_string(), refiner);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Refiner>, RefineError> {
        self.entries.get(name).cloned().ok_or_else(|| RefineError::UnknownName {
            kind: "refiner",
            name: name.to_string(),
            known: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}
