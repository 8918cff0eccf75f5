//! The 13-channel model input: initial latent, encoded left view, encoded
//! warped view, and the disocclusion mask at latent resolution.

use std::ops::Range;

use crate::types::{Mask, VideoClip};

use super::codec::{LatentCodec, LatentGrid, LATENT_CHANNELS};
use super::RefineError;

pub const CONDITIONING_CHANNELS: usize = 3 * LATENT_CHANNELS + 1;
pub const INITIAL_CHANNELS: Range<usize> = 0..4;
pub const LEFT_CHANNELS: Range<usize> = 4..8;
pub const WARPED_CHANNELS: Range<usize> = 8..12;
pub const MASK_CHANNEL: usize = 12;

/// Channel-last `n x h x w x 13` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningTensor {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    data: Vec<f32>,
}

/// The pieces a [`ConditioningTensor`] is made of.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningParts {
    pub initial: LatentGrid,
    pub left: LatentGrid,
    pub warped: LatentGrid,
    /// One mask per frame at latent resolution.
    pub mask: Vec<Mask>,
}

impl ConditioningTensor {
    pub fn channels(&self) -> usize {
        CONDITIONING_CHANNELS
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Concatenates the parts in the fixed channel order.
    pub fn from_parts(parts: &ConditioningParts) -> Result<Self, RefineError> {
        let (n, h, w, _) = parts.initial.shape();
        for g in [&parts.initial, &parts.left, &parts.warped] {
            if g.shape() != (n, h, w, LATENT_CHANNELS) {
                return Err(RefineError::Shape(format!(
                    "conditioning block {:?}, expected {:?}",
                    g.shape(),
                    (n, h, w, LATENT_CHANNELS)
                )));
            }
        }
        if parts.mask.len() != n || parts.mask.iter().any(|m| m.dims() != (h, w)) {
            return Err(RefineError::Shape("mask frames do not match the latent grid".into()));
        }
        let mut data = Vec::with_capacity(n * h * w * CONDITIONING_CHANNELS);
        for f in 0..n {
            let mask = parts.mask[f].data();
            for p in 0..h * w {
                for g in [&parts.initial, &parts.left, &parts.warped] {
                    data.extend_from_slice(&g.frame(f)[p * LATENT_CHANNELS..(p + 1) * LATENT_CHANNELS]);
                }
                data.push(mask[p] as f32);
            }
        }
        Ok(Self { n, h, w, data })
    }

    /// Channels `range` of every position as a latent grid.
    pub fn block(&self, range: Range<usize>) -> LatentGrid {
        let c = range.len();
        let data = self
            .data
            .chunks_exact(CONDITIONING_CHANNELS)
            .flat_map(|p| p[range.clone()].iter().copied())
            .collect();
        LatentGrid::new(self.n, self.h, self.w, c, data).expect("block of a valid tensor")
    }

    pub fn disassemble(&self) -> ConditioningParts {
        let hw = self.h * self.w;
        let mask = (0..self.n)
            .map(|f| {
                let data = self.data[f * hw * CONDITIONING_CHANNELS..(f + 1) * hw * CONDITIONING_CHANNELS]
                    .chunks_exact(CONDITIONING_CHANNELS)
                    .map(|p| p[MASK_CHANNEL] as u8)
                    .collect();
                Mask::new(self.h, self.w, data).expect("mask channel holds 0/1")
            })
            .collect();
        ConditioningParts {
            initial: self.block(INITIAL_CHANNELS),
            left: self.block(LEFT_CHANNELS),
            warped: self.block(WARPED_CHANNELS),
            mask,
        }
    }
}

/// Area-averages `factor x factor` blocks and sets a cell when at least half
/// of its pixels are masked.
pub fn downsample_mask(mask: &Mask, factor: usize) -> Mask {
    let (h, w) = (mask.height() / factor, mask.width() / factor);
    let mut out = Mask::zeros(h, w);
    let area = factor * factor;
    for by in 0..h {
        for bx in 0..w {
            let mut count = 0;
            for y in by * factor..(by + 1) * factor {
                for x in bx * factor..(bx + 1) * factor {
                    count += mask.get(y, x) as usize;
                }
            }
            out.set(by, bx, 2 * count >= area);
        }
    }
    out
}

/// Encodes both clips, resizes the mask to latent resolution and stacks
/// everything behind an all-zero initial latent.
pub fn assemble_conditioning(
    left: &VideoClip,
    warped: &VideoClip,
    mask: &[Mask],
    codec: &dyn LatentCodec,
) -> Result<ConditioningTensor, RefineError> {
    super::check_inputs(left, warped, mask)?;
    let left_z = codec.encode(left)?;
    let warped_z = codec.encode(warped)?;
    let f = codec.factor();
    let (n, h, w, _) = left_z.shape();
    ConditioningTensor::from_parts(&ConditioningParts {
        initial: LatentGrid::zeros(n, h, w, LATENT_CHANNELS),
        left: left_z,
        warped: warped_z,
        mask: mask.iter().map(|m| downsample_mask(m, f)).collect(),
    })
}
