//! End-to-end conversion: load the left view and depth, warp, refine in
//! chunks (and optionally tiles), then write the stereo output and a run
//! manifest.

mod chunk;
mod pack;
pub mod synth;
mod tile;

pub use chunk::{plan_chunks, run_chunked, ChunkPlan, ChunkWindow};
pub use pack::{compose_stereo, pack_stereo, OutputFormat};
pub use tile::{blend_tiles, plan_tiles, run_tiled, AxisTiles, TileConfig, TilePlan, TileRect, TiledRefiner};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_clip_dir, read_depth_dir, IoError};
use crate::refine::{codec_by_name, DiffusionConfig, Refiner, RefinerRegistry};
use crate::warp::{warp_clip, Normalization, SplatMode, WarpConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Input {
        stage: &'static str,
        #[source]
        source: IoError,
    },
    #[error("{stage}: {message}")]
    InvalidInput { stage: &'static str, message: String },
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("{stage}: {source}")]
    Output {
        stage: &'static str,
        #[source]
        source: IoError,
    },
}

impl PipelineError {
    /// 2 for bad configuration or inputs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Input { .. } | PipelineError::InvalidInput { .. } => 2,
            PipelineError::Stage { .. } | PipelineError::Output { .. } => 1,
        }
    }

    pub(crate) fn internal<E: fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
        move |e| PipelineError::Stage {
            stage,
            message: e.to_string(),
        }
    }
}

/// `HxW`, e.g. `64x96`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Size2 {
    pub height: usize,
    pub width: usize,
}

impl FromStr for Size2 {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected HxW, got '{s}'"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("expected HxW, got '{s}'"));
        Ok(Self {
            height: parse(h)?,
            width: parse(w)?,
        })
    }
}

impl TryFrom<String> for Size2 {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Size2> for String {
    fn from(s: Size2) -> String {
        s.to_string()
    }
}

impl fmt::Display for Size2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// Everything `convert` needs. A JSON config file uses the same keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub left: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Defaults to `<out>/manifest.json`.
    pub manifest: Option<PathBuf>,
    pub max_disparity: f32,
    pub splat: SplatMode,
    pub closing_kernel: usize,
    pub normalization: Normalization,
    pub refiner: String,
    pub codec: String,
    pub chunk_len: usize,
    pub chunk_overlap: usize,
    pub tile: Option<Size2>,
    pub tile_overlap: Size2,
    pub format: OutputFormat,
    pub seed: u64,
    pub fps: f64,
    pub diffusion: DiffusionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            left: None,
            depth: None,
            out: None,
            manifest: None,
            max_disparity: 16.0,
            splat: SplatMode::Nearest,
            closing_kernel: 11,
            normalization: Normalization::ClipGlobal,
            refiner: "farplane".into(),
            codec: "identity".into(),
            chunk_len: 16,
            chunk_overlap: 7,
            tile: None,
            tile_overlap: Size2 { height: 0, width: 0 },
            format: OutputFormat::Frames,
            seed: 0,
            fps: 8.0,
            diffusion: DiffusionConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Input {
            stage: "config",
            source: IoError::Io {
                path: path.to_path_buf(),
                source,
            },
        })?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn warp_config(&self) -> WarpConfig {
        WarpConfig {
            max_disparity: self.max_disparity,
            splat_mode: self.splat,
            closing_kernel: self.closing_kernel,
            normalization: self.normalization,
        }
    }

    pub fn tile_config(&self) -> Option<TileConfig> {
        self.tile.map(|t| TileConfig {
            height: t.height,
            width: t.width,
            overlap_y: self.tile_overlap.height,
            overlap_x: self.tile_overlap.width,
        })
    }

    pub fn manifest_path(&self) -> Option<PathBuf> {
        self.manifest
            .clone()
            .or_else(|| self.out.as_ref().map(|o| o.join("manifest.json")))
    }

    fn required(&self) -> Result<(&Path, &Path, &Path), PipelineError> {
        Ok((
            required(&self.left, "left")?,
            required(&self.depth, "depth")?,
            required(&self.out, "out")?,
        ))
    }

    /// Builds the refiner named in the config, tiled when a tile size is set.
    pub fn build_refiner(&self) -> Result<Arc<dyn Refiner>, PipelineError> {
        let codec = codec_by_name(&self.codec).map_err(|e| PipelineError::Config(e.to_string()))?;
        let schedule = self
            .diffusion
            .schedule()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let registry = RefinerRegistry::with_builtins(codec.clone(), schedule.timesteps());
        let base = registry
            .get(&self.refiner)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(match self.tile_config() {
            Some(t) => Arc::new(TiledRefiner::new(base, codec, t)),
            None => base,
        })
    }
}

fn required<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, PipelineError> {
    p.as_deref()
        .ok_or_else(|| PipelineError::Config(format!("missing required setting '{name}'")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskStats {
    pub masked_pixels: usize,
    pub total_pixels: usize,
    pub masked_fraction: f64,
    pub per_frame: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub config: PipelineConfig,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub chunks: ChunkPlan,
    pub tiles: usize,
    pub mask: MaskStats,
    pub outputs: Vec<String>,
    pub timings: Vec<StageTiming>,
}

struct Timer {
    timings: Vec<StageTiming>,
    start: Instant,
}

impl Timer {
    fn new() -> Self {
        Self {
            timings: Vec::new(),
            start: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage,
            seconds: (now - self.start).as_secs_f64(),
        });
        self.start = now;
    }
}

/// Runs the full conversion and writes the output directory and manifest.
pub fn convert(cfg: &PipelineConfig) -> Result<Manifest, PipelineError> {
    let (left_dir, depth_dir, out_dir) = cfg.required()?;
    let refiner = cfg.build_refiner()?;
    let warp_cfg = cfg.warp_config();
    warp_cfg.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut timer = Timer::new();

    let left = read_clip_dir(left_dir, cfg.fps).map_err(|source| PipelineError::Input { stage: "load", source })?;
    let depth = read_depth_dir(depth_dir, left.len()).map_err(|source| PipelineError::Input { stage: "load", source })?;
    let (height, width) = left.dims();
    let mut tiles = 1;
    if let Some(t) = cfg.tile_config() {
        let codec = codec_by_name(&cfg.codec).map_err(|e| PipelineError::Config(e.to_string()))?;
        let f = codec.factor();
        if [height, width, t.height, t.width, t.overlap_y, t.overlap_x].iter().any(|d| d % f != 0) {
            return Err(PipelineError::Config(format!(
                "frame {height}x{width}, tile {}x{} and overlap {}x{} must be multiples of the codec factor {f}",
                t.height, t.width, t.overlap_y, t.overlap_x
            )));
        }
        tiles = plan_tiles(height, width, t.height, t.width, t.overlap_y, t.overlap_x)?.len();
    }
    let plan = plan_chunks(left.len(), cfg.chunk_len, cfg.chunk_overlap)?;
    timer.lap("load");

    let warped = warp_clip(&left, &depth, &warp_cfg).map_err(|e| PipelineError::InvalidInput {
        stage: "warp",
        message: e.to_string(),
    })?;
    let per_frame: Vec<usize> = warped.mask.iter().map(|m| m.count()).collect();
    let mask = MaskStats {
        masked_pixels: warped.masked_pixels(),
        total_pixels: left.len() * height * width,
        masked_fraction: warped.masked_fraction(),
        per_frame,
    };
    timer.lap("warp");

    let right = run_chunked(&left, &warped.warped, &warped.mask, &plan, refiner.as_ref())?;
    timer.lap("refine");

    let written = pack_stereo(&left, &right, cfg.format, out_dir)?;
    timer.lap("pack");

    let outputs = written
        .iter()
        .map(|p| {
            p.strip_prefix(out_dir)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    let manifest = Manifest {
        config: cfg.clone(),
        frames: left.len(),
        height,
        width,
        chunks: plan,
        tiles,
        mask,
        outputs,
        timings: timer.timings,
    };
    if let Some(path) = cfg.manifest_path() {
        let json = serde_json::to_string_pretty(&manifest).map_err(PipelineError::internal("manifest"))?;
        fs::write(&path, json + "\n").map_err(|source| PipelineError::Output {
            stage: "manifest",
            source: IoError::Io { path, source },
        })?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{write_clip_dir, write_depth_dir};
    use crate::pipeline::synth::{synthetic_scene, SceneSize};
    use tempfile::tempdir;

    #[test]
    fn size_parsing() {
        assert_eq!("64x96".parse::<Size2>().unwrap(), Size2 { height: 64, width: 96 });
        assert!("64".parse::<Size2>().is_err());
        assert!("ax3".parse::<Size2>().is_err());
        let cfg: PipelineConfig = serde_json::from_str(r#"{"tile": "32x48", "diffusion": {"T": 10, "beta_start": 0.01, "beta_end": 0.5}}"#).unwrap();
        assert_eq!(cfg.tile, Some(Size2 { height: 32, width: 48 }));
        assert_eq!(cfg.diffusion.timesteps, 10);
        assert_eq!(cfg.chunk_len, 16);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus": 1}"#).is_err());
    }

    fn scene_dirs(size: SceneSize) -> tempfile::TempDir {
        let dir = tempdir().unwrap();
        let (clip, depth) = synthetic_scene(size);
        write_clip_dir(&clip, &dir.path().join("left")).unwrap();
        write_depth_dir(&depth, &dir.path().join("depth")).unwrap();
        dir
    }

    fn config_for(dir: &Path) -> PipelineConfig {
        PipelineConfig {
            left: Some(dir.join("left")),
            depth: Some(dir.join("depth")),
            out: Some(dir.join("out")),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn zero_disparity_is_identity() {
        let dir = scene_dirs(SceneSize { frames: 3, height: 16, width: 24 });
        let cfg = PipelineConfig {
            max_disparity: 0.0,
            ..config_for(dir.path())
        };
        let m = convert(&cfg).unwrap();
        assert_eq!(m.mask.masked_pixels, 0);
        for i in 0..3 {
            let name = format!("{i:06}.png");
            assert_eq!(
                fs::read(dir.path().join("left").join(&name)).unwrap(),
                fs::read(dir.path().join("out").join(&name)).unwrap()
            );
        }
        assert!(dir.path().join("out/manifest.json").exists());
    }

    #[test]
    fn error_codes() {
        let dir = scene_dirs(SceneSize { frames: 3, height: 16, width: 24 });
        fs::remove_file(dir.path().join("depth/000002.pfm")).unwrap();
        let err = convert(&config_for(dir.path())).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("000002.pfm"), "{err}");

        let bad = PipelineConfig {
            refiner: "unet".into(),
            ..config_for(dir.path())
        };
        assert_eq!(convert(&bad).unwrap_err().exit_code(), 2);
        assert_eq!(convert(&PipelineConfig::default()).unwrap_err().exit_code(), 2);
        let tiles = PipelineConfig {
            codec: "patchify8".into(),
            tile: Some(Size2 { height: 12, width: 16 }),
            ..config_for(dir.path())
        };
        assert_eq!(convert(&tiles).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn tiled_chunked_run_fills_holes() {
        let dir = scene_dirs(SceneSize { frames: 5, height: 32, width: 48 });
        let cfg = PipelineConfig {
            max_disparity: 6.0,
            chunk_len: 3,
            chunk_overlap: 1,
            tile: Some(Size2 { height: 16, width: 32 }),
            tile_overlap: Size2 { height: 8, width: 16 },
            format: OutputFormat::Sbs,
            ..config_for(dir.path())
        };
        let m = convert(&cfg).unwrap();
        // rows start at 0, 8, 16; columns at 0, 16
        assert_eq!(m.tiles, 6);
        assert_eq!(m.chunks.windows.len(), 2);
        assert!(m.mask.masked_fraction > 0.0);
        let out = read_clip_dir(&dir.path().join("out"), 8.0).unwrap();
        assert_eq!(out.dims(), (32, 96));
        assert!(out.frames().iter().all(|f| f.data().chunks(3).all(|p| p != [0.0; 3])));
    }
}
