//! File formats: 8-bit RGB PNG frames, grayscale PFM float maps and binary
//! PGM masks. Clips live in directories of `%06d`-numbered files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{ColorType, ImageReader, RgbImage};
use thiserror::Error;

use crate::types::{DepthMap, DisparityMap, Frame, Mask, TypeError, VideoClip};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: TypeError,
    },
    #[error("{path}: no frames found (expected 000000.{ext})")]
    EmptyDirectory { path: PathBuf, ext: &'static str },
}

impl IoError {
    pub fn path(&self) -> &Path {
        match self {
            IoError::Io { path, .. }
            | IoError::Format { path, .. }
            | IoError::Invalid { path, .. }
            | IoError::EmptyDirectory { path, .. } => path,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn invalid(path: &Path) -> impl FnOnce(TypeError) -> IoError + '_ {
    move |source| IoError::Invalid {
        path: path.to_path_buf(),
        source,
    }
}

/// Canonical float to 8-bit quantization: round half up of `v * 255`,
/// clamped to `[0, 255]`.
#[inline]
pub fn quantize(v: f32) -> u8 {
    let q = (v as f64 * 255.0 + 0.5).floor();
    q.clamp(0.0, 255.0) as u8
}

#[inline]
pub fn dequantize(v: u8) -> f32 {
    v as f32 / 255.0
}

pub fn read_frame_png(path: &Path) -> Result<Frame, IoError> {
    let reader = ImageReader::open(path)
        .map_err(io_err(path))?
        .with_guessed_format()
        .map_err(io_err(path))?;
    let img = reader
        .decode()
        .map_err(|e| format_err(path, format!("cannot decode PNG: {e}")))?;
    if img.color() != ColorType::Rgb8 {
        return Err(format_err(
            path,
            format!("expected 8-bit RGB PNG, found {:?}", img.color()),
        ));
    }
    let rgb = img.into_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(dequantize).collect();
    Frame::new(h as usize, w as usize, data).map_err(invalid(path))
}

pub fn write_frame_png(frame: &Frame, path: &Path) -> Result<(), IoError> {
    let bytes: Vec<u8> = frame.data().iter().map(|&v| quantize(v)).collect();
    write_rgb_png(frame.width(), frame.height(), bytes, path)
}

pub(crate) fn write_rgb_png(
    width: usize,
    height: usize,
    bytes: Vec<u8>,
    path: &Path,
) -> Result<(), IoError> {
    let img = RgbImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| format_err(path, "buffer size does not match dimensions"))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(source) => IoError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => format_err(path, other.to_string()),
        })
}

/// Byte order of the samples in a PFM file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

/// Reads a grayscale PFM, returning `(height, width, data)` with rows in
/// top-to-bottom order.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f32>), IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut cursor = 0usize;
    let mut token = || -> Result<String, IoError> {
        while cursor < bytes.len() && bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        let start = cursor;
        while cursor < bytes.len() && !bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        if start == cursor {
            return Err(format_err(path, "truncated PFM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..cursor]).into_owned())
    };
    let magic = token()?;
    if magic != "Pf" {
        return Err(format_err(
            path,
            format!("expected grayscale PFM magic 'Pf', found '{magic}'"),
        ));
    }
    let width: usize = token()?
        .parse()
        .map_err(|_| format_err(path, "bad PFM width"))?;
    let height: usize = token()?
        .parse()
        .map_err(|_| format_err(path, "bad PFM height"))?;
    let scale: f64 = token()?
        .parse()
        .map_err(|_| format_err(path, "bad PFM scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err(path, "PFM scale must be non-zero"));
    }
    let endian = if scale < 0.0 { Endian::Little } else { Endian::Big };
    // exactly one whitespace byte separates the header from the raster
    cursor += 1;
    let need = width * height * 4;
    let raster = bytes
        .get(cursor..cursor + need)
        .ok_or_else(|| format_err(path, format!("expected {need} bytes of raster data")))?;
    let mut data = vec![0f32; width * height];
    for (i, chunk) in raster.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = match endian {
            Endian::Little => f32::from_le_bytes(b),
            Endian::Big => f32::from_be_bytes(b),
        };
        // file rows run bottom to top
        let (row, col) = (i / width, i % width);
        data[(height - 1 - row) * width + col] = v;
    }
    Ok((height, width, data))
}

pub fn write_pfm(
    path: &Path,
    height: usize,
    width: usize,
    data: &[f32],
    endian: Endian,
) -> Result<(), IoError> {
    if data.len() != height * width {
        return Err(format_err(path, "buffer size does not match dimensions"));
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let scale = match endian {
        Endian::Little => "-1.0",
        Endian::Big => "1.0",
    };
    write!(out, "Pf\n{width} {height}\n{scale}\n").map_err(io_err(path))?;
    for row in (0..height).rev() {
        for &v in &data[row * width..(row + 1) * width] {
            let b = match endian {
                Endian::Little => v.to_le_bytes(),
                Endian::Big => v.to_be_bytes(),
            };
            out.write_all(&b).map_err(io_err(path))?;
        }
    }
    out.flush().map_err(io_err(path))
}

pub fn read_depth_pfm(path: &Path) -> Result<DepthMap, IoError> {
    let (h, w, data) = read_pfm(path)?;
    DepthMap::new(h, w, data).map_err(invalid(path))
}

pub fn write_depth_pfm(depth: &DepthMap, path: &Path, endian: Endian) -> Result<(), IoError> {
    write_pfm(path, depth.height(), depth.width(), depth.data(), endian)
}

pub fn read_disparity_pfm(path: &Path) -> Result<DisparityMap, IoError> {
    let (h, w, data) = read_pfm(path)?;
    DisparityMap::new(h, w, data).map_err(invalid(path))
}

pub fn write_disparity_pfm(disp: &DisparityMap, path: &Path) -> Result<(), IoError> {
    write_pfm(path, disp.height(), disp.width(), disp.data(), Endian::Little)
}

/// Writes a binary P5 PGM with 0 -> 0 and 1 -> 255.
pub fn write_mask_pgm(mask: &Mask, path: &Path) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    write!(out, "P5\n{} {}\n255\n", mask.width(), mask.height()).map_err(io_err(path))?;
    let bytes: Vec<u8> = mask.data().iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    out.write_all(&bytes).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

/// Reads a binary P5 PGM (maxval 255); samples `>= 128` become 1.
pub fn read_mask_pgm(path: &Path) -> Result<Mask, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut cursor = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while cursor < bytes.len() && bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        if cursor < bytes.len() && bytes[cursor] == b'#' {
            while cursor < bytes.len() && bytes[cursor] != b'\n' {
                cursor += 1;
            }
            continue;
        }
        let start = cursor;
        while cursor < bytes.len() && !bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        if start == cursor {
            return Err(format_err(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..cursor]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format_err(path, format!("expected P5 PGM, found '{}'", fields[0])));
    }
    let parse = |s: &str, what: &str| -> Result<usize, IoError> {
        s.parse()
            .map_err(|_| format_err(path, format!("bad PGM {what}")))
    };
    let width = parse(&fields[1], "width")?;
    let height = parse(&fields[2], "height")?;
    let maxval = parse(&fields[3], "maxval")?;
    if maxval != 255 {
        return Err(format_err(path, format!("expected maxval 255, found {maxval}")));
    }
    cursor += 1;
    let raster = bytes
        .get(cursor..cursor + width * height)
        .ok_or_else(|| format_err(path, "truncated PGM raster"))?;
    let data = raster.iter().map(|&v| (v >= 128) as u8).collect();
    Mask::new(height, width, data).map_err(invalid(path))
}

pub fn numbered_path(dir: &Path, index: usize, ext: &str) -> PathBuf {
    dir.join(format!("{index:06}.{ext}"))
}

/// Counts consecutive `%06d.<ext>` files starting at index 0.
pub fn count_numbered(dir: &Path, ext: &str) -> usize {
    (0..).take_while(|&i| numbered_path(dir, i, ext).is_file()).count()
}

fn ensure_dir(dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn read_clip_dir(dir: &Path, fps: f64) -> Result<VideoClip, IoError> {
    if !dir.is_dir() {
        return Err(IoError::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "directory not found"),
        });
    }
    let n = count_numbered(dir, "png");
    if n == 0 {
        return Err(IoError::EmptyDirectory {
            path: dir.to_path_buf(),
            ext: "png",
        });
    }
    let frames = (0..n)
        .map(|i| read_frame_png(&numbered_path(dir, i, "png")))
        .collect::<Result<Vec<_>, _>>()?;
    VideoClip::new(frames, fps).map_err(invalid(dir))
}

pub fn write_clip_dir(clip: &VideoClip, dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    ensure_dir(dir)?;
    clip.frames()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let p = numbered_path(dir, i, "png");
            write_frame_png(f, &p).map(|_| p)
        })
        .collect()
}

/// Reads exactly `count` depth maps `000000.pfm ..` from `dir`.
pub fn read_depth_dir(dir: &Path, count: usize) -> Result<Vec<DepthMap>, IoError> {
    (0..count)
        .map(|i| read_depth_pfm(&numbered_path(dir, i, "pfm")))
        .collect()
}

pub fn write_depth_dir(depths: &[DepthMap], dir: &Path) -> Result<(), IoError> {
    ensure_dir(dir)?;
    for (i, d) in depths.iter().enumerate() {
        write_depth_pfm(d, &numbered_path(dir, i, "pfm"), Endian::Little)?;
    }
    Ok(())
}

pub fn read_mask_dir(dir: &Path, count: usize) -> Result<Vec<Mask>, IoError> {
    (0..count)
        .map(|i| read_mask_pgm(&numbered_path(dir, i, "pgm")))
        .collect()
}

pub fn write_mask_dir(masks: &[Mask], dir: &Path) -> Result<(), IoError> {
    ensure_dir(dir)?;
    for (i, m) in masks.iter().enumerate() {
        write_mask_pgm(m, &numbered_path(dir, i, "pgm"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn write_png(path: &Path, w: u32, h: u32, value: u8) {
        RgbImage::from_pixel(w, h, image::Rgb([value; 3]))
            .save(path)
            .unwrap();
    }

    #[test]
    fn png_black_white_and_mid() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.png");
        write_png(&p, 2, 2, 0);
        assert!(read_frame_png(&p).unwrap().data().iter().all(|&v| v == 0.0));
        write_png(&p, 2, 2, 255);
        assert!(read_frame_png(&p).unwrap().data().iter().all(|&v| v == 1.0));
        write_png(&p, 1, 1, 128);
        let f = read_frame_png(&p).unwrap();
        assert!((f.data()[0] - 128.0 / 255.0).abs() < 1e-7);
        assert!((f.data()[0] - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn png_rejects_non_rgb() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("gray.png");
        image::GrayImage::from_pixel(2, 2, image::Luma([7])).save(&p).unwrap();
        let err = read_frame_png(&p).unwrap_err();
        assert!(matches!(err, IoError::Format { .. }), "{err}");
        assert!(err.to_string().contains("gray.png"));

        let p16 = dir.path().join("deep.png");
        image::ImageBuffer::<image::Rgb<u16>, _>::from_pixel(2, 2, image::Rgb([9u16; 3]))
            .save(&p16)
            .unwrap();
        assert!(matches!(read_frame_png(&p16), Err(IoError::Format { .. })));

        let missing = dir.path().join("nope.png");
        assert!(matches!(read_frame_png(&missing), Err(IoError::Io { .. })));
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.0), 0);
    }

    #[test]
    fn pfm_constant_and_endianness() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        write_pfm(&p, 4, 4, &[1.0; 16], Endian::Little).unwrap();
        let d = read_depth_pfm(&p).unwrap();
        assert!(d.data().iter().all(|&v| v == 1.0));

        let data: Vec<f32> = (0..12).map(|i| 0.25 + i as f32 * 1.37).collect();
        let le = dir.path().join("le.pfm");
        let be = dir.path().join("be.pfm");
        write_pfm(&le, 3, 4, &data, Endian::Little).unwrap();
        write_pfm(&be, 3, 4, &data, Endian::Big).unwrap();
        assert_ne!(fs::read(&le).unwrap(), fs::read(&be).unwrap());
        let a = read_depth_pfm(&le).unwrap();
        let b = read_depth_pfm(&be).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.data(), &data[..]);
    }

    #[test]
    fn pfm_rows_are_stored_bottom_up() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("rows.pfm");
        // two rows: top = 1.0, bottom = 2.0
        write_pfm(&p, 2, 1, &[1.0, 2.0], Endian::Little).unwrap();
        let bytes = fs::read(&p).unwrap();
        let raster = &bytes[bytes.len() - 8..];
        assert_eq!(f32::from_le_bytes(raster[0..4].try_into().unwrap()), 2.0);
    }

    #[test]
    fn pfm_depth_validation_reports_pixel() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.pfm");
        write_pfm(&p, 1, 3, &[1.0, -2.0, 1.0], Endian::Little).unwrap();
        match read_depth_pfm(&p) {
            Err(IoError::Invalid {
                source: TypeError::InvalidDepth { index, .. },
                ..
            }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
        write_pfm(&p, 1, 1, &[f32::NAN], Endian::Big).unwrap();
        assert!(read_depth_pfm(&p).is_err());
    }

    #[test]
    fn pgm_threshold_and_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        fs::write(&p, b"P5\n2 1\n255\n\x7f\x80").unwrap();
        assert_eq!(read_mask_pgm(&p).unwrap().data(), &[0, 1]);

        let zero = Mask::zeros(3, 5);
        write_mask_pgm(&zero, &p).unwrap();
        assert_eq!(read_mask_pgm(&p).unwrap(), zero);

        let checker: Vec<u8> = (0..35).map(|i| ((i / 7 + i % 7) % 2) as u8).collect();
        let m = Mask::new(5, 7, checker).unwrap();
        write_mask_pgm(&m, &p).unwrap();
        assert_eq!(read_mask_pgm(&p).unwrap(), m);
    }

    #[test]
    fn pgm_header_comments() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        fs::write(&p, b"P5\n# made by hand\n1 1\n255\n\xff").unwrap();
        assert_eq!(read_mask_pgm(&p).unwrap().data(), &[1]);
    }

    #[test]
    fn clip_directory_round_trip() {
        let dir = tempdir().unwrap();
        let frames: Vec<Frame> = (0..3)
            .map(|i| Frame::filled(2, 3, [i as f32 / 255.0, 0.5, 1.0]))
            .collect();
        let clip = VideoClip::new(frames, 8.0).unwrap();
        let paths = write_clip_dir(&clip, dir.path()).unwrap();
        assert_eq!(paths[2].file_name().unwrap(), "000002.png");
        let back = read_clip_dir(dir.path(), 8.0).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in clip.frames().iter().zip(back.frames()) {
            let qa: Vec<u8> = a.data().iter().map(|&v| quantize(v)).collect();
            let qb: Vec<u8> = b.data().iter().map(|&v| quantize(v)).collect();
            assert_eq!(qa, qb);
        }
    }

    proptest! {
        #[test]
        fn pfm_round_trip_is_bit_exact(
            h in 1usize..6, w in 1usize..6,
            seed in proptest::collection::vec(-1.0e6f32..1.0e6, 36),
            big in any::<bool>(),
        ) {
            let dir = tempdir().unwrap();
            let p = dir.path().join("x.pfm");
            let data = &seed[..h * w];
            let endian = if big { Endian::Big } else { Endian::Little };
            write_pfm(&p, h, w, data, endian).unwrap();
            let (rh, rw, back) = read_pfm(&p).unwrap();
            prop_assert_eq!((rh, rw), (h, w));
            prop_assert!(back.iter().zip(data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn png_round_trip_after_quantization(bytes in proptest::collection::vec(any::<u8>(), 18)) {
            let dir = tempdir().unwrap();
            let p = dir.path().join("x.png");
            let f = Frame::new(2, 3, bytes.iter().map(|&b| dequantize(b)).collect()).unwrap();
            write_frame_png(&f, &p).unwrap();
            let back = read_frame_png(&p).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
