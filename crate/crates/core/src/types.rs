//! Image-domain value types shared by every stage.
//!
//! All types are plain owned buffers in row-major order. Frames hold three
//! interleaved channels with values in `[0, 1]`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("buffer length {got} does not match {height}x{width}x{channels}")]
    Length {
        height: usize,
        width: usize,
        channels: usize,
        got: usize,
    },
    #[error("value {value} at index {index} is outside [0, 1] or not finite")]
    OutOfRange { index: usize, value: f32 },
    #[error("depth value {value} at pixel {index} must be finite and positive")]
    InvalidDepth { index: usize, value: f32 },
    #[error("disparity value {value} at pixel {index} must be finite and non-negative")]
    InvalidDisparity { index: usize, value: f32 },
    #[error("mask value {value} at pixel {index} is not 0 or 1")]
    InvalidMask { index: usize, value: u8 },
    #[error("clip must contain at least one frame")]
    EmptyClip,
    #[error("frame {index} is {got_h}x{got_w}, expected {want_h}x{want_w}")]
    FrameSize {
        index: usize,
        want_h: usize,
        want_w: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("fps must be finite and positive, got {0}")]
    Fps(f64),
}

fn check_len(height: usize, width: usize, channels: usize, got: usize) -> Result<(), TypeError> {
    if height * width * channels != got {
        return Err(TypeError::Length {
            height,
            width,
            channels,
            got,
        });
    }
    Ok(())
}

/// One RGB frame, `height * width * 3` values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self, TypeError> {
        check_len(height, width, Self::CHANNELS, data.len())?;
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(TypeError::OutOfRange { index, value });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds a frame, clamping every value into `[0, 1]`. NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self, TypeError> {
        check_len(height, width, Self::CHANNELS, data.len())?;
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&value.map(|v| v.clamp(0.0, 1.0)));
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Sets a pixel, clamping into `[0, 1]`.
    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        for c in 0..3 {
            self.data[i + c] = if rgb[c].is_nan() {
                0.0
            } else {
                rgb[c].clamp(0.0, 1.0)
            };
        }
    }

    /// Copies the `h x w` window whose top-left corner is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Frame {
        let mut data = Vec::with_capacity(h * w * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Frame {
            height: h,
            width: w,
            data,
        }
    }
}

/// An ordered stack of equally sized frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<Frame>,
    fps: f64,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>, fps: f64) -> Result<Self, TypeError> {
        let first = frames.first().ok_or(TypeError::EmptyClip)?;
        let (want_h, want_w) = first.dims();
        for (index, f) in frames.iter().enumerate() {
            if f.dims() != (want_h, want_w) {
                return Err(TypeError::FrameSize {
                    index,
                    want_h,
                    want_w,
                    got_h: f.height,
                    got_w: f.width,
                });
            }
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(TypeError::Fps(fps));
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Always false; a clip holds at least one frame.
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    /// Frames `[start, end)` as a new clip with the same frame rate.
    pub fn slice(&self, start: usize, end: usize) -> Result<VideoClip, TypeError> {
        VideoClip::new(self.frames[start..end].to_vec(), self.fps)
    }
}

/// Per-pixel depth, arbitrary scale, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self, TypeError> {
        check_len(height, width, 1, data.len())?;
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(TypeError::InvalidDepth { index, value });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Horizontal disparity in pixels for a single frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl DisparityMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self, TypeError> {
        check_len(height, width, 1, data.len())?;
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(TypeError::InvalidDisparity { index, value });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn uniform(height: usize, width: usize, value: f32) -> Result<Self, TypeError> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }
}

/// Disparities for every frame of a clip.
pub type DisparityField = Vec<DisparityMap>;

/// Binary per-pixel mask, 1 marks a disoccluded (hole) pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self, TypeError> {
        check_len(height, width, 1, data.len())?;
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(TypeError::InvalidMask { index, value });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Mask {
        let mut data = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            let start = y * self.width + x0;
            data.extend_from_slice(&self.data[start..start + w]);
        }
        Mask {
            height: h,
            width: w,
            data,
        }
    }
}

/// Per-frame disocclusion masks of a clip.
pub type DisocclusionMask = Vec<Mask>;
