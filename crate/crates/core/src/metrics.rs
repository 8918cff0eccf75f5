//! PSNR and MS-SSIM over video clips, with region masking by white fill.
//!
//! Metrics run on `[0, 1]` floats. PSNR is computed over every pixel and
//! channel of the clip; MS-SSIM is the mean of per-frame scores on Rec.601
//! luma.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Frame, Mask, VideoClip};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{height}x{width} frames are smaller than the {WINDOW}x{WINDOW} window")]
    TooSmall { height: usize, width: usize },
    #[error("cannot aggregate an empty report list")]
    Empty,
    #[error("cannot aggregate reports over different regions ({0} and {1})")]
    MixedRegions(Region, Region),
    #[error("unknown region '{0}' (expected full, inside or outside)")]
    UnknownRegion(String),
}

/// PSNR reported for identical inputs and used for them in averages.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Psnr {
    /// `PSNR_CAP_DB` when `infinite`.
    pub db: f64,
    pub infinite: bool,
}

fn check_same(a: &VideoClip, b: &VideoClip) -> Result<(), MetricsError> {
    if a.len() != b.len() || a.dims() != b.dims() {
        return Err(MetricsError::Shape(format!(
            "{} frames of {:?} vs {} frames of {:?}",
            a.len(),
            a.dims(),
            b.len(),
            b.dims()
        )));
    }
    Ok(())
}

pub fn psnr(a: &VideoClip, b: &VideoClip) -> Result<Psnr, MetricsError> {
    check_same(a, b)?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (fa, fb) in a.frames().iter().zip(b.frames()) {
        for (&x, &y) in fa.data().iter().zip(fb.data()) {
            let d = x as f64 - y as f64;
            sum += d * d;
        }
        count += fa.data().len();
    }
    let mse = sum / count.max(1) as f64;
    Ok(if mse == 0.0 {
        Psnr {
            db: PSNR_CAP_DB,
            infinite: true,
        }
    } else {
        Psnr {
            db: 10.0 * (1.0 / mse).log10(),
            infinite: false,
        }
    })
}

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;
pub const SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MsSsim {
    pub score: f64,
    pub scales: usize,
    /// Fewer than five scales fit the frame size.
    pub reduced: bool,
}

/// Number of dyadic scales whose smallest level still holds one window.
pub fn scale_count(height: usize, width: usize) -> usize {
    let side = height.min(width);
    (1..=SCALE_WEIGHTS.len())
        .take_while(|&k| side >= WINDOW << (k - 1))
        .last()
        .unwrap_or(0)
}

struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn luma(frame: &Frame) -> Self {
        let data = frame
            .data()
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect();
        Self {
            h: frame.height(),
            w: frame.width(),
            data,
        }
    }

    fn downsample(&self) -> Self {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let at = |dy: usize, dx: usize| self.data[(2 * y + dy) * self.w + 2 * x + dx];
                data.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0);
            }
        }
        Self { h, w, data }
    }

    fn product(&self, other: &Plane) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        }
    }

    /// Valid-mode separable filtering with the normalized Gaussian window.
    fn filter(&self, kernel: &[f64]) -> Plane {
        let k = kernel.len();
        let (oh, ow) = (self.h + 1 - k, self.w + 1 - k);
        let mut rows = vec![0.0; self.h * ow];
        for y in 0..self.h {
            let src = &self.data[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                rows[y * ow + x] = kernel.iter().zip(&src[x..x + k]).map(|(g, v)| g * v).sum();
            }
        }
        let mut data = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                data[y * ow + x] = (0..k).map(|i| kernel[i] * rows[(y + i) * ow + x]).sum();
            }
        }
        Plane { h: oh, w: ow, data }
    }
}

pub fn gaussian_window() -> Vec<f64> {
    let c = (WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Mean luminance term and mean contrast-structure term at one scale.
fn ssim_terms(x: &Plane, y: &Plane, kernel: &[f64]) -> (f64, f64) {
    let (mx, my) = (x.filter(kernel), y.filter(kernel));
    let (sxx, syy, sxy) = (
        x.product(x).filter(kernel),
        y.product(y).filter(kernel),
        x.product(y).filter(kernel),
    );
    let n = mx.data.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.data.len() {
        let (ux, uy) = (mx.data[i], my.data[i]);
        let vx = sxx.data[i] - ux * ux;
        let vy = syy.data[i] - uy * uy;
        let cov = sxy.data[i] - ux * uy;
        let c = (2.0 * cov + C2) / (vx + vy + C2);
        let l = (2.0 * ux * uy + C1) / (ux * ux + uy * uy + C1);
        cs += c;
        ssim += l * c;
    }
    (ssim / n, cs / n)
}

fn frame_ms_ssim(a: &Frame, b: &Frame, scales: usize, kernel: &[f64]) -> f64 {
    let weights = &SCALE_WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    let (mut x, mut y) = (Plane::luma(a), Plane::luma(b));
    let mut score = 1.0;
    for (j, w) in weights.iter().enumerate() {
        let (ssim, cs) = ssim_terms(&x, &y, kernel);
        let term = if j + 1 == scales { ssim } else { cs };
        score *= term.max(0.0).powf(w / total);
        if j + 1 < scales {
            x = x.downsample();
            y = y.downsample();
        }
    }
    score
}

/// Multi-scale SSIM, averaged over frames. Frames too small for five scales
/// use as many as fit, with the weights renormalized.
pub fn ms_ssim(a: &VideoClip, b: &VideoClip) -> Result<MsSsim, MetricsError> {
    check_same(a, b)?;
    let (height, width) = a.dims();
    let scales = scale_count(height, width);
    if scales == 0 {
        return Err(MetricsError::TooSmall { height, width });
    }
    let kernel = gaussian_window();
    let sum: f64 = a
        .frames()
        .iter()
        .zip(b.frames())
        .map(|(fa, fb)| frame_ms_ssim(fa, fb, scales, &kernel))
        .sum();
    Ok(MsSsim {
        score: sum / a.len() as f64,
        scales,
        reduced: scales < SCALE_WEIGHTS.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Full,
    /// Disoccluded pixels only.
    Inside,
    /// Visible pixels only.
    Outside,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Full, Region::Inside, Region::Outside];

    pub fn name(&self) -> &'static str {
        match self {
            Region::Full => "full",
            Region::Inside => "inside",
            Region::Outside => "outside",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Region::Full),
            "inside" | "inside_mask" => Ok(Region::Inside),
            "outside" | "outside_mask" => Ok(Region::Outside),
            _ => Err(MetricsError::UnknownRegion(s.to_string())),
        }
    }
}

/// Copy of `clip` with every pixel outside `region` set to white.
pub fn white_fill(clip: &VideoClip, mask: &[Mask], region: Region) -> Result<VideoClip, MetricsError> {
    if mask.len() != clip.len() || mask.iter().any(|m| m.dims() != clip.dims()) {
        return Err(MetricsError::Shape(format!(
            "{} masks for {} frames of {:?}",
            mask.len(),
            clip.len(),
            clip.dims()
        )));
    }
    if region == Region::Full {
        return Ok(clip.clone());
    }
    let keep_masked = region == Region::Inside;
    let frames = clip
        .frames()
        .iter()
        .zip(mask)
        .map(|(f, m)| {
            let mut data = f.data().to_vec();
            for (px, &bit) in data.chunks_exact_mut(3).zip(m.data()) {
                if (bit == 1) != keep_masked {
                    px.fill(1.0);
                }
            }
            Frame::new(f.height(), f.width(), data).expect("white fill keeps values in range")
        })
        .collect();
    Ok(VideoClip::new(frames, clip.fps()).expect("same frame layout"))
}

/// Evaluates `metric` after white-filling both clips outside `region`.
pub fn masked_metric<T>(
    a: &VideoClip,
    b: &VideoClip,
    mask: &[Mask],
    region: Region,
    metric: impl Fn(&VideoClip, &VideoClip) -> Result<T, MetricsError>,
) -> Result<T, MetricsError> {
    check_same(a, b)?;
    metric(&white_fill(a, mask, region)?, &white_fill(b, mask, region)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub video_id: String,
    pub region: Region,
    /// Capped at [`PSNR_CAP_DB`] for identical inputs.
    pub psnr_db: f64,
    pub psnr_infinite: bool,
    /// How many infinite PSNRs entered `psnr_db` at the cap.
    pub psnr_capped: usize,
    pub ms_ssim: f64,
    pub ms_ssim_scales: usize,
}

/// Both metrics for one video over `region`. `mask` is required unless the
/// region is [`Region::Full`].
pub fn evaluate(
    video_id: &str,
    reference: &VideoClip,
    predicted: &VideoClip,
    mask: Option<&[Mask]>,
    region: Region,
) -> Result<MetricReport, MetricsError> {
    let full = vec![Mask::zeros(reference.dims().0, reference.dims().1); reference.len()];
    let mask = match (mask, region) {
        (Some(m), _) => m,
        (None, Region::Full) => &full,
        (None, _) => return Err(MetricsError::Shape(format!("region {region} needs a mask"))),
    };
    let p = masked_metric(reference, predicted, mask, region, psnr)?;
    let s = masked_metric(reference, predicted, mask, region, ms_ssim)?;
    Ok(MetricReport {
        video_id: video_id.to_string(),
        region,
        psnr_db: p.db,
        psnr_infinite: p.infinite,
        psnr_capped: p.infinite as usize,
        ms_ssim: s.score,
        ms_ssim_scales: s.scales,
    })
}

/// Dataset mean over reports of one region. The id is kept when all reports
/// share it and is `mean` otherwise.
pub fn dataset_aggregate(reports: &[MetricReport]) -> Result<MetricReport, MetricsError> {
    let first = reports.first().ok_or(MetricsError::Empty)?;
    if let Some(r) = reports.iter().find(|r| r.region != first.region) {
        return Err(MetricsError::MixedRegions(first.region, r.region));
    }
    let n = reports.len() as f64;
    let same_id = reports.iter().all(|r| r.video_id == first.video_id);
    Ok(MetricReport {
        video_id: if same_id { first.video_id.clone() } else { "mean".into() },
        region: first.region,
        psnr_db: reports.iter().map(|r| r.psnr_db).sum::<f64>() / n,
        psnr_infinite: reports.iter().all(|r| r.psnr_infinite),
        psnr_capped: reports.iter().map(|r| r.psnr_capped).sum(),
        ms_ssim: reports.iter().map(|r| r.ms_ssim).sum::<f64>() / n,
        ms_ssim_scales: reports.iter().map(|r| r.ms_ssim_scales).min().unwrap_or(0),
    })
}
