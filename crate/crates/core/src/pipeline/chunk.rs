//! Autoregressive processing of long clips in overlapping windows.

use serde::Serialize;

use crate::refine::Refiner;
use crate::types::{Mask, VideoClip};

use super::PipelineError;

/// Frames `start..end`; the first `carryover` of them were produced by the
/// previous window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChunkWindow {
    pub start: usize,
    pub end: usize,
    pub carryover: usize,
}

impl ChunkWindow {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn new_frames(&self) -> usize {
        self.len() - self.carryover
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChunkPlan {
    pub chunk_length: usize,
    pub overlap: usize,
    pub windows: Vec<ChunkWindow>,
}

impl ChunkPlan {
    pub fn total_frames(&self) -> usize {
        self.windows.last().map_or(0, |w| w.end)
    }
}

/// Windows of `chunk_length` frames advancing by `chunk_length - overlap`;
/// the last one is cut at the final frame. A clip shorter than one window
/// is a single window.
pub fn plan_chunks(total_frames: usize, chunk_length: usize, overlap: usize) -> Result<ChunkPlan, PipelineError> {
    if total_frames == 0 || chunk_length == 0 {
        return Err(PipelineError::Config(format!(
            "chunking needs at least one frame and a positive chunk length (got {total_frames} frames, length {chunk_length})"
        )));
    }
    if overlap >= chunk_length {
        return Err(PipelineError::Config(format!(
            "chunk overlap {overlap} must be smaller than the chunk length {chunk_length}"
        )));
    }
    let step = chunk_length - overlap;
    let mut windows = vec![ChunkWindow {
        start: 0,
        end: chunk_length.min(total_frames),
        carryover: 0,
    }];
    while let Some(last) = windows.last().copied().filter(|w| w.end < total_frames) {
        let start = last.start + step;
        windows.push(ChunkWindow {
            start,
            end: (start + chunk_length).min(total_frames),
            carryover: overlap,
        });
    }
    Ok(ChunkPlan {
        chunk_length,
        overlap,
        windows,
    })
}

/// Runs `refiner` window by window. Each window's leading carryover frames
/// are replaced by frames already generated, with their masks cleared.
pub fn run_chunked(
    left: &VideoClip,
    warped: &VideoClip,
    mask: &[Mask],
    plan: &ChunkPlan,
    refiner: &dyn Refiner,
) -> Result<VideoClip, PipelineError> {
    if plan.total_frames() != left.len() || warped.len() != left.len() || mask.len() != left.len() {
        return Err(PipelineError::Config(format!(
            "chunk plan covers {} frames but inputs have {} / {} / {}",
            plan.total_frames(),
            left.len(),
            warped.len(),
            mask.len()
        )));
    }
    let (h, w) = left.dims();
    let mut output: Vec<crate::types::Frame> = Vec::with_capacity(left.len());
    for (i, win) in plan.windows.iter().enumerate() {
        let window_left = left.slice(win.start, win.end).map_err(PipelineError::internal("chunk"))?;
        let mut frames = warped.frames()[win.start..win.end].to_vec();
        let mut masks = mask[win.start..win.end].to_vec();
        for k in 0..win.carryover {
            frames[k] = output[win.start + k].clone();
            masks[k] = Mask::zeros(h, w);
        }
        let window_warped = VideoClip::new(frames, warped.fps()).map_err(PipelineError::internal("chunk"))?;
        let refined = refiner
            .refine(&window_left, &window_warped, &masks)
            .map_err(|e| PipelineError::Stage {
                stage: "refine",
                message: format!("window {i} (frames {}..{}): {e}", win.start, win.end),
            })?;
        if refined.len() != win.len() || refined.dims() != (h, w) {
            return Err(PipelineError::Stage {
                stage: "refine",
                message: format!("window {i}: refiner changed the clip shape"),
            });
        }
        output.extend(refined.into_frames().into_iter().skip(win.carryover));
    }
    VideoClip::new(output, left.fps()).map_err(PipelineError::internal("chunk"))
}
