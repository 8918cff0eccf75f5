//! Latent grids and the encode/decode pair standing in for the VAE.

use std::sync::Arc;

use crate::types::{Frame, VideoClip};

use super::RefineError;

/// Channels per latent position.
pub const LATENT_CHANNELS: usize = 4;

/// `n x h x w x c` latent array, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    data: Vec<f32>,
}

impl LatentGrid {
    pub fn new(n: usize, h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self, RefineError> {
        if data.len() != n * h * w * c {
            return Err(RefineError::Shape(format!(
                "{} values for a {n}x{h}x{w}x{c} latent grid",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(RefineError::Shape(format!("non-finite latent value at index {i}")));
        }
        Ok(Self { n, h, w, c, data })
    }

    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![0.0; n * h * w * c],
        }
    }

    pub fn filled(n: usize, h: usize, w: usize, c: usize, value: f32) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![value; n * h * w * c],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.h, self.w, self.c)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let len = self.frame_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub(crate) fn from_frames(h: usize, w: usize, c: usize, frames: Vec<Vec<f32>>) -> Self {
        let n = frames.len();
        Self {
            n,
            h,
            w,
            c,
            data: frames.concat(),
        }
    }

    pub(crate) fn check_same_shape(&self, other: &LatentGrid) -> Result<(), RefineError> {
        if self.shape() != other.shape() {
            return Err(RefineError::Shape(format!(
                "latent shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// Elementwise combination of two same-shaped grids.
    pub(crate) fn zip_map(&self, other: &LatentGrid, f: impl Fn(f32, f32) -> f32) -> Result<LatentGrid, RefineError> {
        self.check_same_shape(other)?;
        Ok(LatentGrid {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> LatentGrid {
        LatentGrid {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Image-to-latent mapping with a spatial reduction `factor` and
/// [`LATENT_CHANNELS`] channels.
pub trait LatentCodec: Send + Sync {
    fn name(&self) -> &'static str;

    fn factor(&self) -> usize;

    /// Encodes one frame whose sides are multiples of [`factor`](Self::factor).
    fn encode_frame(&self, frame: &Frame) -> Vec<f32>;

    /// Decodes an `h x w` latent frame; values are clamped to `[0, 1]`.
    fn decode_frame(&self, latent: &[f32], h: usize, w: usize) -> Frame;

    fn check_dims(&self, height: usize, width: usize) -> Result<(), RefineError> {
        let f = self.factor();
        if height % f != 0 || width % f != 0 {
            return Err(RefineError::Divisibility {
                height,
                width,
                factor: f,
            });
        }
        Ok(())
    }

    fn encode(&self, clip: &VideoClip) -> Result<LatentGrid, RefineError> {
        let (height, width) = clip.dims();
        self.check_dims(height, width)?;
        let f = self.factor();
        let frames = clip.frames().iter().map(|fr| self.encode_frame(fr)).collect();
        Ok(LatentGrid::from_frames(height / f, width / f, LATENT_CHANNELS, frames))
    }

    fn decode(&self, latent: &LatentGrid, fps: f64) -> Result<VideoClip, RefineError> {
        if latent.c != LATENT_CHANNELS {
            return Err(RefineError::Shape(format!(
                "codec expects {LATENT_CHANNELS} latent channels, got {}",
                latent.c
            )));
        }
        let frames = (0..latent.n)
            .map(|i| self.decode_frame(latent.frame(i), latent.h, latent.w))
            .collect();
        Ok(VideoClip::new(frames, fps)?)
    }
}

/// `f = 1`: RGB copied into channels 0..3, channel 3 is zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl LatentCodec for IdentityCodec {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn factor(&self) -> usize {
        1
    }

    fn encode_frame(&self, frame: &Frame) -> Vec<f32> {
        frame
            .data()
            .chunks_exact(3)
            .flat_map(|p| [p[0], p[1], p[2], 0.0])
            .collect()
    }

    fn decode_frame(&self, latent: &[f32], h: usize, w: usize) -> Frame {
        let data = latent
            .chunks_exact(LATENT_CHANNELS)
            .flat_map(|z| [z[0], z[1], z[2]])
            .collect();
        Frame::from_clamped(h, w, data).expect("latent frame size matches")
    }
}

/// `f = 8`: per 8x8 block the mean of each colour channel plus the Rec.601
/// luminance of those means; decoding repeats each block's colour.
#[derive(Debug, Clone, Copy, Default)]
pub struct PatchifyCodec;

const PATCH: usize = 8;

pub(crate) fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

impl LatentCodec for PatchifyCodec {
    fn name(&self) -> &'static str {
        "patchify8"
    }

    fn factor(&self) -> usize {
        PATCH
    }

    fn encode_frame(&self, frame: &Frame) -> Vec<f32> {
        let (h, w) = (frame.height() / PATCH, frame.width() / PATCH);
        let mut out = Vec::with_capacity(h * w * LATENT_CHANNELS);
        let area = (PATCH * PATCH) as f64;
        for by in 0..h {
            for bx in 0..w {
                let mut sum = [0.0f64; 3];
                for y in by * PATCH..(by + 1) * PATCH {
                    for x in bx * PATCH..(bx + 1) * PATCH {
                        let p = frame.pixel(y, x);
                        for c in 0..3 {
                            sum[c] += p[c] as f64;
                        }
                    }
                }
                let [r, g, b] = sum.map(|s| (s / area) as f32);
                out.extend_from_slice(&[r, g, b, luma(r, g, b)]);
            }
        }
        out
    }

    fn decode_frame(&self, latent: &[f32], h: usize, w: usize) -> Frame {
        let (height, width) = (h * PATCH, w * PATCH);
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                let z = &latent[((y / PATCH) * w + x / PATCH) * LATENT_CHANNELS..];
                data.extend_from_slice(&z[..3]);
            }
        }
        Frame::from_clamped(height, width, data).expect("latent frame size matches")
    }
}

pub const CODEC_NAMES: [&str; 2] = ["identity", "patchify8"];

pub fn codec_by_name(name: &str) -> Result<Arc<dyn LatentCodec>, RefineError> {
    match name {
        "identity" => Ok(Arc::new(IdentityCodec)),
        "patchify8" => Ok(Arc::new(PatchifyCodec)),
        _ => Err(RefineError::UnknownName {
            kind: "codec",
            name: name.to_string(),
            known: CODEC_NAMES.join(", "),
        }),
    }
}
