//! Overlapping tiles with linear-ramp blend weights, blended in latent
//! space.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::refine::{LatentCodec, LatentGrid, RefineError, Refiner, LATENT_CHANNELS};
use crate::types::{Mask, VideoClip};

use super::PipelineError;

/// Tile extent and overlap in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileConfig {
    pub height: usize,
    pub width: usize,
    pub overlap_y: usize,
    pub overlap_x: usize,
}

/// Tiles along one axis with their normalized weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisTiles {
    pub starts: Vec<usize>,
    pub size: usize,
    /// `weights[i][k]` for pixel `starts[i] + k`.
    pub weights: Vec<Vec<f64>>,
}

fn axis_starts(length: usize, size: usize, overlap: usize) -> Vec<usize> {
    let step = size - overlap;
    let mut starts = vec![0];
    while let Some(&last) = starts.last().filter(|&&s| s + size < length) {
        starts.push((last + step).min(length - size));
    }
    starts
}

/// Ramp `min(1, (x - start + 1) / (o_l + 1), (end - x) / (o_r + 1))` where
/// `o_l`, `o_r` are the overlaps with the neighbouring tiles, normalized so
/// the weights at each pixel sum to one.
fn plan_axis(length: usize, size: usize, overlap: usize) -> AxisTiles {
    let starts = axis_starts(length, size, overlap);
    let mut raw: Vec<Vec<f64>> = starts
        .iter()
        .enumerate()
        .map(|(i, &start)| {
            let end = start + size;
            let o_left = if i > 0 { starts[i - 1] + size - start } else { 0 };
            let o_right = starts.get(i + 1).map_or(0, |&next| end - next);
            (start..end)
                .map(|x| {
                    let up = (x - start + 1) as f64 / (o_left + 1) as f64;
                    let down = (end - x) as f64 / (o_right + 1) as f64;
                    up.min(down).min(1.0)
                })
                .collect()
        })
        .collect();
    let mut sums = vec![0.0; length];
    for (i, &start) in starts.iter().enumerate() {
        for (k, w) in raw[i].iter().enumerate() {
            sums[start + k] += w;
        }
    }
    for (i, &start) in starts.iter().enumerate() {
        for (k, w) in raw[i].iter_mut().enumerate() {
            *w /= sums[start + k];
        }
    }
    AxisTiles {
        starts,
        size,
        weights: raw,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TileRect {
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TilePlan {
    pub height: usize,
    pub width: usize,
    pub rows: AxisTiles,
    pub cols: AxisTiles,
}

impl TilePlan {
    /// Row-major over tile rows, then tile columns.
    pub fn tiles(&self) -> Vec<TileRect> {
        self.rows
            .starts
            .iter()
            .flat_map(|&y0| {
                self.cols.starts.iter().map(move |&x0| TileRect {
                    y0,
                    x0,
                    height: self.rows.size,
                    width: self.cols.size,
                })
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.rows.starts.len() * self.cols.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Blend weight of tile `index` at tile-local `(y, x)`.
    pub fn weight(&self, index: usize, y: usize, x: usize) -> f64 {
        let n_cols = self.cols.starts.len();
        self.rows.weights[index / n_cols][y] * self.cols.weights[index % n_cols][x]
    }

    /// Per-pixel weights of one tile, row-major.
    pub fn weight_map(&self, index: usize) -> Vec<f64> {
        (0..self.rows.size)
            .flat_map(|y| (0..self.cols.size).map(move |x| (y, x)))
            .map(|(y, x)| self.weight(index, y, x))
            .collect()
    }

    /// Sum of tile weights at every pixel, row-major.
    pub fn weight_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.height * self.width];
        for (i, t) in self.tiles().iter().enumerate() {
            for y in 0..t.height {
                for x in 0..t.width {
                    sums[(t.y0 + y) * self.width + t.x0 + x] += self.weight(i, y, x);
                }
            }
        }
        sums
    }
}

pub fn plan_tiles(
    height: usize,
    width: usize,
    tile_h: usize,
    tile_w: usize,
    overlap_y: usize,
    overlap_x: usize,
) -> Result<TilePlan, PipelineError> {
    if tile_h == 0 || tile_w == 0 || tile_h > height || tile_w > width {
        return Err(PipelineError::Config(format!(
            "tile {tile_h}x{tile_w} must be non-empty and fit in the {height}x{width} frame"
        )));
    }
    if overlap_y >= tile_h || overlap_x >= tile_w {
        return Err(PipelineError::Config(format!(
            "tile overlap {overlap_y}x{overlap_x} must be smaller than the tile {tile_h}x{tile_w}"
        )));
    }
    Ok(TilePlan {
        height,
        width,
        rows: plan_axis(height, tile_h, overlap_y),
        cols: plan_axis(width, tile_w, overlap_x),
    })
}

/// Blends per-tile latents into a full grid: at each position the value is
/// `ref + sum_i w_i (v_i - ref)` with `ref` the first covering tile, so
/// identical tile values come back bit for bit.
pub fn blend_tiles(plan: &TilePlan, tiles: &[LatentGrid]) -> Result<LatentGrid, PipelineError> {
    let rects = plan.tiles();
    if tiles.len() != rects.len() {
        return Err(PipelineError::Config(format!(
            "{} tile latents for a plan of {} tiles",
            tiles.len(),
            rects.len()
        )));
    }
    let n = tiles.first().map_or(0, |t| t.n);
    let c = LATENT_CHANNELS;
    for t in tiles {
        if t.shape() != (n, plan.rows.size, plan.cols.size, c) {
            return Err(PipelineError::Config(format!(
                "tile latent {:?} does not match the plan's tile size",
                t.shape()
            )));
        }
    }
    let (h, w) = (plan.height, plan.width);
    let mut reference: Vec<Option<usize>> = vec![None; h * w];
    for (i, r) in rects.iter().enumerate() {
        for y in r.y0..r.y0 + r.height {
            for x in r.x0..r.x0 + r.width {
                reference[y * w + x].get_or_insert(i);
            }
        }
    }
    let mut out = vec![0.0f32; n * h * w * c];
    let mut acc = vec![0.0f64; h * w * c];
    for f in 0..n {
        for (p, r) in reference.iter().enumerate() {
            let (i, rect) = (r.expect("tiles cover the frame"), rects[r.unwrap()]);
            let local = ((p / w - rect.y0) * rect.width + p % w - rect.x0) * c;
            for ch in 0..c {
                acc[p * c + ch] = tiles[i].frame(f)[local + ch] as f64;
            }
        }
        let base = acc.clone();
        for (i, rect) in rects.iter().enumerate() {
            let tile = tiles[i].frame(f);
            for y in 0..rect.height {
                for x in 0..rect.width {
                    let wgt = plan.weight(i, y, x);
                    let p = (rect.y0 + y) * w + rect.x0 + x;
                    for ch in 0..c {
                        let v = tile[(y * rect.width + x) * c + ch] as f64;
                        acc[p * c + ch] += wgt * (v - base[p * c + ch]);
                    }
                }
            }
        }
        for (o, a) in out[f * h * w * c..(f + 1) * h * w * c].iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    }
    LatentGrid::new(n, h, w, c, out).map_err(PipelineError::internal("tile blend"))
}

fn crop_clip(clip: &VideoClip, r: &TileRect) -> VideoClip {
    let frames = clip
        .frames()
        .iter()
        .map(|f| f.crop(r.y0, r.x0, r.height, r.width))
        .collect();
    VideoClip::new(frames, clip.fps()).expect("crop of a valid clip")
}

/// Refines each tile independently, encodes the tile outputs, blends them in
/// latent space and decodes the frame once.
pub fn run_tiled(
    left: &VideoClip,
    warped: &VideoClip,
    mask: &[Mask],
    tiles: &TileConfig,
    refiner: &dyn Refiner,
    codec: &dyn LatentCodec,
) -> Result<VideoClip, PipelineError> {
    let (h, w) = left.dims();
    let f = codec.factor();
    let dims = [h, w, tiles.height, tiles.width, tiles.overlap_y, tiles.overlap_x];
    if dims.iter().any(|d| d % f != 0) {
        return Err(PipelineError::Config(format!(
            "frame {h}x{w}, tile {}x{} and overlap {}x{} must be multiples of the codec factor {f}",
            tiles.height, tiles.width, tiles.overlap_y, tiles.overlap_x
        )));
    }
    let plan = plan_tiles(
        h / f,
        w / f,
        tiles.height / f,
        tiles.width / f,
        tiles.overlap_y / f,
        tiles.overlap_x / f,
    )?;
    let latents = plan
        .tiles()
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let px = TileRect {
                y0: r.y0 * f,
                x0: r.x0 * f,
                height: r.height * f,
                width: r.width * f,
            };
            let masks: Vec<Mask> = mask.iter().map(|m| m.crop(px.y0, px.x0, px.height, px.width)).collect();
            let refined = refiner
                .refine(&crop_clip(left, &px), &crop_clip(warped, &px), &masks)
                .map_err(|e| PipelineError::Stage {
                    stage: "refine",
                    message: format!("tile {i} at ({}, {}): {e}", px.y0, px.x0),
                })?;
            if refined.dims() != (px.height, px.width) || refined.len() != left.len() {
                return Err(PipelineError::Stage {
                    stage: "refine",
                    message: format!("tile {i}: refiner changed the tile shape"),
                });
            }
            codec.encode(&refined).map_err(PipelineError::internal("encode"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let blended = blend_tiles(&plan, &latents)?;
    codec.decode(&blended, left.fps()).map_err(PipelineError::internal("decode"))
}

/// A refiner that runs another one tile by tile.
pub struct TiledRefiner {
    inner: Arc<dyn Refiner>,
    codec: Arc<dyn LatentCodec>,
    tiles: TileConfig,
}

impl TiledRefiner {
    pub fn new(inner: Arc<dyn Refiner>, codec: Arc<dyn LatentCodec>, tiles: TileConfig) -> Self {
        Self { inner, codec, tiles }
    }
}

impl Refiner for TiledRefiner {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn refine(&self, left: &VideoClip, warped: &VideoClip, mask: &[Mask]) -> Result<VideoClip, RefineError> {
        run_tiled(left, warped, mask, &self.tiles, self.inner.as_ref(), self.codec.as_ref())
            .map_err(|e| RefineError::Backend(e.to_string()))
    }
}
