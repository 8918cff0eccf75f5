//! A small two-layer test scene: a textured far wall and a textured block
//! drifting across it.

use std::path::Path;

use crate::io::{write_clip_dir, write_depth_dir, IoError};
use crate::types::{DepthMap, Frame, VideoClip};

pub const FAR_DEPTH: f32 = 10.0;
pub const NEAR_DEPTH: f32 = 2.0;
/// Darkest channel value used in the scene, so pure black never appears.
pub const MIN_INTENSITY: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneSize {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for SceneSize {
    fn default() -> Self {
        Self {
            frames: 16,
            height: 64,
            width: 96,
        }
    }
}

fn texture(y: usize, x: usize, near: bool) -> [f32; 3] {
    let band = |v: usize, period: usize| ((v % period) as f32 / period as f32) * 0.6;
    if near {
        let checker = ((y / 4 + x / 4) % 2) as f32 * 0.3;
        [0.5 + checker, 0.3 + band(y, 7) * 0.5, 0.2 + band(x, 5) * 0.5]
    } else {
        [0.2 + band(x + 2 * y, 13), 0.35 + band(3 * x + y, 11) * 0.5, 0.6 + band(y, 9) * 0.5]
    }
}

/// Left-view frames and depth maps. The block is a third of the frame wide
/// and moves two pixels right per frame.
pub fn synthetic_scene(size: SceneSize) -> (VideoClip, Vec<DepthMap>) {
    let SceneSize { frames, height, width } = size;
    let (bw, bh) = (width / 3, height / 2);
    let y0 = height / 4;
    let mut clip = Vec::with_capacity(frames);
    let mut depth = Vec::with_capacity(frames);
    for f in 0..frames {
        let x0 = (width / 6 + 2 * f) % (width - bw).max(1);
        let mut data = Vec::with_capacity(height * width * 3);
        let mut d = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let near = (y0..y0 + bh).contains(&y) && (x0..x0 + bw).contains(&x);
                data.extend(texture(y, x, near).map(|v| v.max(MIN_INTENSITY)));
                d.push(if near { NEAR_DEPTH } else { FAR_DEPTH });
            }
        }
        clip.push(Frame::new(height, width, data).expect("texture values lie in [0, 1]"));
        depth.push(DepthMap::new(height, width, d).expect("depths are positive"));
    }
    (
        VideoClip::new(clip, 8.0).expect("frames share one size"),
        depth,
    )
}

/// Writes `left/%06d.png` and `depth/%06d.pfm` under `dir`.
pub fn write_synthetic_scene(dir: &Path, size: SceneSize) -> Result<(), IoError> {
    let (clip, depth) = synthetic_scene(size);
    write_clip_dir(&clip, &dir.join("left"))?;
    write_depth_dir(&depth, &dir.join("depth"))
}
