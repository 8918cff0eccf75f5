//! Stereo output layouts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::io::write_clip_dir;
use crate::types::{Frame, VideoClip};

use super::PipelineError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    /// Right view only.
    #[default]
    Frames,
    /// Left and right side by side, `2W` wide.
    Sbs,
    /// Red from the left view, green and blue from the right.
    Anaglyph,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "frames" => Ok(Self::Frames),
            "sbs" => Ok(Self::Sbs),
            "anaglyph" => Ok(Self::Anaglyph),
            _ => Err(format!("unknown output format '{s}' (expected frames, sbs or anaglyph)")),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Frames => "frames",
            Self::Sbs => "sbs",
            Self::Anaglyph => "anaglyph",
        })
    }
}

fn side_by_side(l: &Frame, r: &Frame) -> Frame {
    let (h, w) = l.dims();
    let mut data = Vec::with_capacity(h * w * 6);
    for y in 0..h {
        data.extend_from_slice(&l.data()[y * w * 3..(y + 1) * w * 3]);
        data.extend_from_slice(&r.data()[y * w * 3..(y + 1) * w * 3]);
    }
    Frame::new(h, 2 * w, data).expect("halves are valid frames")
}

fn anaglyph(l: &Frame, r: &Frame) -> Frame {
    let data = l
        .data()
        .chunks_exact(3)
        .zip(r.data().chunks_exact(3))
        .flat_map(|(a, b)| [a[0], b[1], b[2]])
        .collect();
    Frame::new(l.height(), l.width(), data).expect("channels come from valid frames")
}

/// The frames that [`pack_stereo`] writes.
pub fn compose_stereo(left: &VideoClip, right: &VideoClip, format: OutputFormat) -> Result<VideoClip, PipelineError> {
    if left.len() != right.len() || left.dims() != right.dims() {
        return Err(PipelineError::Stage {
            stage: "pack",
            message: format!(
                "left is {} frames of {:?}, right is {} frames of {:?}",
                left.len(),
                left.dims(),
                right.len(),
                right.dims()
            ),
        });
    }
    let combine: fn(&Frame, &Frame) -> Frame = match format {
        OutputFormat::Frames => return Ok(right.clone()),
        OutputFormat::Sbs => side_by_side,
        OutputFormat::Anaglyph => anaglyph,
    };
    let frames = left.frames().iter().zip(right.frames()).map(|(l, r)| combine(l, r)).collect();
    VideoClip::new(frames, left.fps()).map_err(PipelineError::internal("pack"))
}

/// Writes the stereo result as numbered PNGs under `dir`.
pub fn pack_stereo(
    left: &VideoClip,
    right: &VideoClip,
    format: OutputFormat,
    dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    let clip = compose_stereo(left, right, format)?;
    write_clip_dir(&clip, dir).map_err(|e| PipelineError::Output {
        stage: "pack",
        source: e,
    })
}
