use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use stereoconv::attention::{attend, gradient_check, predicted_cost, random_instance, Pattern};
use stereoconv::io::{read_clip_dir, read_mask_dir, IoError};
use stereoconv::metrics::{dataset_aggregate, evaluate, MetricReport, Region};
use stereoconv::pipeline::synth::{write_synthetic_scene, SceneSize};
use stereoconv::pipeline::{convert, OutputFormat, PipelineConfig, Size2};
use stereoconv::rectify::{read_matches_csv, rectify_matches, MatchSet, RectifyConfig, RectifyError};
use stereoconv::warp::{Normalization, SplatMode};

#[derive(Parser)]
#[command(name = "stereoconv", version, about = "Monocular-to-stereo video conversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a left-view frame directory plus depth maps into a stereo output.
    Convert(ConvertArgs),
    /// Estimate rectification for a stereo pair from a match CSV.
    Rectify(RectifyArgs),
    /// PSNR and MS-SSIM between reference and predicted clips.
    Metrics(MetricsArgs),
    /// Check attention cost counts and gradients on random instances.
    AttnCheck(AttnCheckArgs),
    /// Write a small synthetic scene (left frames and depth).
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConvertArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    left: Option<PathBuf>,
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    max_disparity: Option<f32>,
    /// nearest or bilinear
    #[arg(long)]
    splat: Option<SplatMode>,
    #[arg(long)]
    closing_kernel: Option<usize>,
    /// clip-global or per-frame
    #[arg(long)]
    normalization: Option<Normalization>,
    #[arg(long)]
    refiner: Option<String>,
    #[arg(long)]
    codec: Option<String>,
    #[arg(long)]
    chunk_len: Option<usize>,
    #[arg(long)]
    chunk_overlap: Option<usize>,
    /// Tile size as HxW, in pixels.
    #[arg(long)]
    tile: Option<Size2>,
    #[arg(long)]
    tile_overlap: Option<Size2>,
    /// frames, sbs or anaglyph
    #[arg(long)]
    format: Option<OutputFormat>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fps: Option<f64>,
}

#[derive(Args)]
struct RectifyArgs {
    /// CSV with header xl,yl,xr,yr.
    #[arg(long)]
    matches: PathBuf,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = stereoconv::rectify::DEFAULT_VERTICAL_LIMIT)]
    vertical_limit: f64,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// A frame directory, or a directory of per-video frame directories.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    predicted: PathBuf,
    /// Mask PGMs laid out like `reference`; needed for inside/outside.
    #[arg(long)]
    masks: Option<PathBuf>,
    /// full, inside or outside; repeatable.
    #[arg(long, default_value = "full")]
    region: Vec<Region>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttnCheckArgs {
    /// Largest N, h and w to sweep.
    #[arg(long, default_value_t = 3)]
    max_size: usize,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 0.3)]
    mask_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 96)]
    width: usize,
}

struct Failure {
    code: u8,
    message: String,
}

fn input_error(e: impl Display) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

fn internal_error(e: impl Display) -> Failure {
    Failure {
        code: 1,
        message: e.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Convert(a) => run_convert(a),
        Command::Rectify(a) => run_rectify(a),
        Command::Metrics(a) => run_metrics(a),
        Command::AttnCheck(a) => run_attn_check(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run_convert(a: ConvertArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(path) => PipelineConfig::from_json_file(path).map_err(input_error)?,
        None => PipelineConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = a.$field { cfg.$field = v.into(); }
        )*};
    }
    set!(left, depth, out, manifest, tile);
    set!(
        max_disparity, splat, closing_kernel, normalization, refiner, codec, chunk_len, chunk_overlap,
        tile_overlap, format, seed, fps
    );
    let manifest = convert(&cfg).map_err(|e| Failure {
        code: e.exit_code() as u8,
        message: e.to_string(),
    })?;
    println!(
        "wrote {} frames to {} ({:.2}% masked)",
        manifest.outputs.len(),
        cfg.out.as_deref().unwrap_or(Path::new(".")).display(),
        manifest.mask.masked_fraction * 100.0
    );
    Ok(())
}

fn run_rectify(a: RectifyArgs) -> Result<(), Failure> {
    let matches = read_matches_csv(&a.matches).map_err(input_error)?;
    let set = MatchSet::new(matches, a.width, a.height).map_err(input_error)?;
    let mut cfg = RectifyConfig::default();
    cfg.ransac.threshold = a.threshold;
    cfg.ransac.max_iters = a.max_iters;
    cfg.ransac.seed = a.seed;
    cfg.vertical_limit = a.vertical_limit;
    let report = rectify_matches(&set, &cfg).map_err(|e| match e {
        RectifyError::NotEnoughMatches(_) | RectifyError::OutOfBounds { .. } => input_error(e),
        e => internal_error(e),
    })?;
    let json = serde_json::to_string_pretty(&report).map_err(internal_error)?;
    emit(a.out.as_deref(), (json + "\n").as_bytes())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| internal_error(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(bytes).map_err(internal_error),
    }
}

fn csv_bytes<R: Serialize>(rows: &[R]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(internal_error)?;
    }
    w.into_inner().map_err(internal_error)
}

/// `(video_id, subpath)` pairs: every subdirectory, or the directory itself.
fn videos(reference: &Path) -> Result<Vec<(String, PathBuf)>, Failure> {
    let entries = fs::read_dir(reference).map_err(|e| input_error(format!("{}: {e}", reference.display())))?;
    let mut subdirs: Vec<String> = entries
        .filter_map(Result::ok)
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        let id = reference
            .file_name()
            .map_or_else(|| "video".into(), |n| n.to_string_lossy().into_owned());
        return Ok(vec![(id, PathBuf::new())]);
    }
    Ok(subdirs.into_iter().map(|s| (s.clone(), PathBuf::from(s))).collect())
}

#[derive(Serialize)]
struct MetricRow<'a> {
    video_id: &'a str,
    region: Region,
    psnr_db: f64,
    ms_ssim: f64,
}

fn run_metrics(a: MetricsArgs) -> Result<(), Failure> {
    let io_err = |e: IoError| input_error(e);
    let mut reports: Vec<MetricReport> = Vec::new();
    let list = videos(&a.reference)?;
    for (id, sub) in &list {
        let reference = read_clip_dir(&a.reference.join(sub), 8.0).map_err(io_err)?;
        let predicted = read_clip_dir(&a.predicted.join(sub), 8.0).map_err(io_err)?;
        let masks = match &a.masks {
            Some(dir) => Some(read_mask_dir(&dir.join(sub), reference.len()).map_err(io_err)?),
            None => None,
        };
        for &region in &a.region {
            let report = evaluate(id, &reference, &predicted, masks.as_deref(), region).map_err(input_error)?;
            reports.push(report);
        }
    }
    let mut rows: Vec<MetricRow> = reports
        .iter()
        .map(|r| MetricRow {
            video_id: &r.video_id,
            region: r.region,
            psnr_db: r.psnr_db,
            ms_ssim: r.ms_ssim,
        })
        .collect();
    let mut means = Vec::new();
    if list.len() > 1 {
        for &region in &a.region {
            let of_region: Vec<MetricReport> = reports.iter().filter(|r| r.region == region).cloned().collect();
            means.push(dataset_aggregate(&of_region).map_err(internal_error)?);
        }
    }
    rows.extend(means.iter().map(|r| MetricRow {
        video_id: &r.video_id,
        region: r.region,
        psnr_db: r.psnr_db,
        ms_ssim: r.ms_ssim,
    }));
    emit(a.out.as_deref(), &csv_bytes(&rows)?)
}

#[derive(Serialize)]
struct AttnRow {
    pattern: &'static str,
    #[serde(rename = "N")]
    n: usize,
    h: usize,
    w: usize,
    masked_fraction: f64,
    predicted_cost: u64,
    measured_cost: u64,
    max_grad_rel_err: f64,
}

/// Finite-difference tolerance for a passing row.
const GRAD_TOLERANCE: f64 = 1e-4;

fn run_attn_check(a: AttnCheckArgs) -> Result<(), Failure> {
    if a.max_size == 0 || a.channels == 0 || !(0.0..=1.0).contains(&a.mask_fraction) {
        return Err(input_error("max-size and channels must be positive, mask-fraction in [0, 1]"));
    }
    let mut rows = Vec::new();
    let mut failures = 0;
    let sizes = 1..=a.max_size;
    for n in sizes.clone() {
        for h in sizes.clone() {
            for w in sizes.clone() {
                let seed = a.seed ^ ((n * 10_000 + h * 100 + w) as u64);
                let inst = random_instance(seed, n, h, w, a.channels, a.mask_fraction);
                for pattern in Pattern::ALL {
                    let mask = (pattern == Pattern::MaskedFull).then_some(&inst.mask);
                    let masked = mask.map_or(0, |m| m.count());
                    let (_, cost) = attend(&inst.x, &inst.params, pattern, mask).map_err(internal_error)?;
                    let err = gradient_check(&inst.x, &inst.params, pattern, mask, &inst.upstream, a.step)
                        .map_err(internal_error)?;
                    let predicted = predicted_cost(pattern, n, h, w, masked);
                    if predicted != cost.qk_dot_products || !(err < GRAD_TOLERANCE) {
                        failures += 1;
                    }
                    rows.push(AttnRow {
                        pattern: pattern.name(),
                        n,
                        h,
                        w,
                        masked_fraction: masked as f64 / (n * h * w) as f64,
                        predicted_cost: predicted,
                        measured_cost: cost.qk_dot_products,
                        max_grad_rel_err: err,
                    });
                }
            }
        }
    }
    emit(a.out.as_deref(), &csv_bytes(&rows)?)?;
    if failures > 0 {
        return Err(internal_error(format!(
            "{failures} of {} rows failed the cost or gradient check",
            rows.len()
        )));
    }
    Ok(())
}

fn run_synth(a: SynthArgs) -> Result<(), Failure> {
    if a.frames == 0 || a.height < 4 || a.width < 6 {
        return Err(input_error("synthetic scene needs at least 1 frame of 4x6 pixels"));
    }
    let size = SceneSize {
        frames: a.frames,
        height: a.height,
        width: a.width,
    };
    write_synthetic_scene(&a.out, size).map_err(internal_error)?;
    println!("wrote {} frames to {}", a.frames, a.out.display());
    Ok(())
}
