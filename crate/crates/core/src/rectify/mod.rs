//! Stereo preprocessing for training pairs: fundamental matrix from point
//! matches, rectifying homographies, crop, horizontal shift normalization
//! and a residual vertical disparity filter.
//!
//! Matches are ingested from CSV files (`xl,yl,xr,yr`); feature matching
//! itself happens upstream.

mod crop;
mod fundamental;
mod homography;
pub mod synthetic;

pub use crop::{normalize_shift_and_crop, CropRect, RectificationResult, VerticalStats};
pub use fundamental::{
    eight_point, estimate_fundamental_ransac, FundamentalMatrix, RansacConfig, RansacOutcome,
};
pub use homography::{compute_rectifying_homographies, epipoles};

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RectifyError {
    #[error("need at least 8 matches, got {0}")]
    NotEnoughMatches(usize),
    #[error("RANSAC consensus set has {consensus} matches, need at least 8")]
    EstimationFailed { consensus: usize },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("no valid crop: the rectified views do not overlap inside the frame")]
    CropFailure,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("match {index} ({x:.2}, {y:.2}) lies outside the {width}x{height} frame")]
    OutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("{path}: {reason}")]
    Csv { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One correspondence between the left and right image, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub xl: f64,
    pub yl: f64,
    pub xr: f64,
    pub yr: f64,
}

impl Match {
    pub fn new(xl: f64, yl: f64, xr: f64, yr: f64) -> Self {
        Self { xl, yl, xr, yr }
    }

    pub(crate) fn homogeneous(&self) -> (Vector3<f64>, Vector3<f64>) {
        (
            Vector3::new(self.xl, self.yl, 1.0),
            Vector3::new(self.xr, self.yr, 1.0),
        )
    }

    pub fn disparity(&self) -> f64 {
        self.xl - self.xr
    }
}

/// Matches between two frames of size `width x height`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    matches: Vec<Match>,
    width: usize,
    height: usize,
}

impl MatchSet {
    pub fn new(matches: Vec<Match>, width: usize, height: usize) -> Result<Self, RectifyError> {
        let inside = |x: f64, y: f64| {
            x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0 && x <= width as f64 && y <= height as f64
        };
        for (index, m) in matches.iter().enumerate() {
            for (x, y) in [(m.xl, m.yl), (m.xr, m.yr)] {
                if !inside(x, y) {
                    return Err(RectifyError::OutOfBounds {
                        index,
                        x,
                        y,
                        width,
                        height,
                    });
                }
            }
        }
        Ok(Self {
            matches,
            width,
            height,
        })
    }

    pub fn matches(&self) -> &[Match] {
        &self.matches
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

pub(crate) fn rows_of(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

/// Reads a match CSV with header `xl,yl,xr,yr`.
pub fn read_matches_csv(path: &Path) -> Result<Vec<Match>, RectifyError> {
    let csv_err = |reason: String| RectifyError::Csv {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => RectifyError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => csv_err(format!("{other:?}")),
        })?;
    let headers = reader.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["xl", "yl", "xr", "yr"] {
        return Err(csv_err(format!(
            "expected header 'xl,yl,xr,yr', found '{}'",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    reader
        .deserialize::<Match>()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| csv_err(format!("row {}: {e}", i + 1))))
        .collect()
}

pub fn write_matches_csv(path: &Path, matches: &[Match]) -> Result<(), RectifyError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| RectifyError::Csv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    for m in matches {
        writer.serialize(m).map_err(|e| RectifyError::Csv {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    }
    writer.flush().map_err(|source| RectifyError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Default bound on residual vertical disparity, pixels.
pub const DEFAULT_VERTICAL_LIMIT: f64 = 2.0;

/// Accepts a clip unless the worst inlier's vertical disparity exceeds
/// `limit` pixels.
pub fn vertical_disparity_filter(result: &RectificationResult, limit: f64) -> bool {
    result.vertical_disparity.max <= limit
}

/// `k` frame indices evenly spread over `0..clip_length`, deduplicated.
pub fn sample_frames_uniform(clip_length: usize, k: usize) -> Vec<usize> {
    if clip_length == 0 || k == 0 {
        return Vec::new();
    }
    if k == 1 {
        return vec![0];
    }
    let last = (clip_length - 1) as f64;
    let mut out: Vec<usize> = (0..k)
        .map(|i| (i as f64 * last / (k - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectifyConfig {
    pub ransac: RansacConfig,
    pub vertical_limit: f64,
}

impl Default for RectifyConfig {
    fn default() -> Self {
        Self {
            ransac: RansacConfig::default(),
            vertical_limit: DEFAULT_VERTICAL_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RectifyReport {
    pub fundamental: [[f64; 3]; 3],
    pub ransac_iterations: usize,
    #[serde(flatten)]
    pub result: RectificationResult,
    pub vertical_limit: f64,
    pub accepted: bool,
}

/// Full preprocessing of one clip's matches: RANSAC, rectification, shift
/// and crop, then the vertical disparity filter.
pub fn rectify_matches(set: &MatchSet, cfg: &RectifyConfig) -> Result<RectifyReport, RectifyError> {
    let ransac = estimate_fundamental_ransac(set.matches(), &cfg.ransac)?;
    let inliers: Vec<Match> = set
        .matches()
        .iter()
        .zip(&ransac.inliers)
        .filter(|(_, &b)| b)
        .map(|(m, _)| *m)
        .collect();
    let (h_l, h_r) =
        compute_rectifying_homographies(&ransac.fundamental, &inliers, set.width(), set.height())?;
    let result = normalize_shift_and_crop(&h_l, &h_r, &inliers, set.width(), set.height())?;
    let accepted = vertical_disparity_filter(&result, cfg.vertical_limit);
    Ok(RectifyReport {
        fundamental: ransac.fundamental.to_rows(),
        ransac_iterations: ransac.iterations,
        result,
        vertical_limit: cfg.vertical_limit,
        accepted,
    })
}
