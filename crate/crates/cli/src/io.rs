//! On-disk formats.
//!
//! - Grayscale PFM (`Pf`), written little-endian with a negative scale and
//!   rows stored bottom-up. Invalid pixels are written as NaN.
//! - 16-bit grayscale PNG depth, `depth_m = raw * scale_mm_per_unit / 1000`
//!   with raw 0 meaning "no depth".
//! - 8-bit (or any) PNG intensity frames, converted to luma in `[0, 1]`.
//! - JSON focus-distance sidecars: `{"distances": [..], "frames": [..]}`.

use std::fs;
use std::path::{Path, PathBuf};

use focusfuse_core::{DepthMap, DepthUnit, FocalStack, Image, ScaleMap, UncertaintyMap};
use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Raw single-channel float raster in top-down row order.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

fn is_space(b: u8) -> bool {
    b.is_ascii_whitespace()
}

/// Parses a PFM byte buffer. Errors carry the byte offset of the problem.
pub fn parse_pfm(bytes: &[u8]) -> std::result::Result<Raster, (usize, String)> {
    match bytes.get(..2) {
        Some(b"Pf") => {}
        Some(b"PF") => return Err((0, "expected 1 channel, found 3 (PF header)".into())),
        _ => return Err((0, "missing Pf magic".into())),
    }
    let mut pos = 2;
    let mut token = |what: &str| -> std::result::Result<(usize, String), (usize, String)> {
        let start_ws = pos;
        while pos < bytes.len() && is_space(bytes[pos]) {
            pos += 1;
        }
        if pos == start_ws {
            return Err((pos, format!("expected whitespace before {what}")));
        }
        let start = pos;
        while pos < bytes.len() && !is_space(bytes[pos]) {
            pos += 1;
        }
        if start == pos {
            return Err((start, format!("missing {what}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| (start, format!("{what} is not ASCII")))?;
        Ok((start, text.to_string()))
    };
    let (at, w) = token("width")?;
    let width: usize = w.parse().map_err(|_| (at, format!("bad width {w:?}")))?;
    let (at, h) = token("height")?;
    let height: usize = h.parse().map_err(|_| (at, format!("bad height {h:?}")))?;
    let (at, s) = token("scale")?;
    let scale: f64 = s.parse().map_err(|_| (at, format!("bad scale {s:?}")))?;
    if width == 0 || height == 0 {
        return Err((at, format!("empty raster {width}x{height}")));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err((at, "scale must be a non-zero number".into()));
    }
    let after_scale = at + s.len();
    if after_scale >= bytes.len() || !is_space(bytes[after_scale]) {
        return Err((after_scale, "expected a single whitespace byte after scale".into()));
    }
    let data_start = after_scale + 1;
    let expected = width * height * 4;
    let payload = &bytes[data_start..];
    if payload.len() < expected {
        return Err((
            bytes.len(),
            format!("truncated payload: need {expected} bytes, have {}", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err((data_start + expected, "trailing bytes after payload".into()));
    }
    let little = scale < 0.0;
    let mut data = vec![0.0f32; width * height];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        // File rows run bottom-up.
        let (row, col) = (k / width, k % width);
        data[(height - 1 - row) * width + col] = v;
    }
    Ok(Raster {
        width,
        height,
        data,
    })
}

pub fn encode_pfm(raster: &Raster) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", raster.width, raster.height).into_bytes();
    out.reserve(raster.data.len() * 4);
    for row in (0..raster.height).rev() {
        for v in &raster.data[row * raster.width..(row + 1) * raster.width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_pfm_raster(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse_pfm(&bytes).map_err(|(offset, msg)| CliError::format(path, offset, msg))
}

pub fn write_pfm_raster(raster: &Raster, path: &Path) -> Result<()> {
    fs::write(path, encode_pfm(raster)).map_err(|e| CliError::io(path, e))
}

/// Reads a PFM as a depth map; NaN, infinite and (for positive units)
/// non-positive entries become invalid.
pub fn read_pfm(path: &Path, unit: DepthUnit) -> Result<DepthMap> {
    let r = read_pfm_raster(path)?;
    Ok(DepthMap::new(
        r.width,
        r.height,
        r.data.iter().map(|v| *v as f64).collect(),
        unit,
    )?)
}

fn masked_raster(width: usize, height: usize, values: &[f64], valid: impl Fn(usize) -> bool) -> Raster {
    Raster {
        width,
        height,
        data: values
            .iter()
            .enumerate()
            .map(|(i, v)| if valid(i) { *v as f32 } else { f32::NAN })
            .collect(),
    }
}

pub fn write_pfm(map: &DepthMap, path: &Path) -> Result<()> {
    write_pfm_raster(
        &masked_raster(map.width(), map.height(), map.values(), |i| map.is_valid(i)),
        path,
    )
}

pub fn write_scale_pfm(map: &ScaleMap, path: &Path) -> Result<()> {
    write_pfm_raster(
        &masked_raster(map.width(), map.height(), map.values(), |i| map.is_valid(i)),
        path,
    )
}

pub fn read_scale_pfm(path: &Path) -> Result<ScaleMap> {
    let r = read_pfm_raster(path)?;
    let n = r.data.len();
    Ok(ScaleMap::new(
        r.width,
        r.height,
        r.data.iter().map(|v| *v as f64).collect(),
        vec![true; n],
    )?)
}

pub fn write_uncertainty_pfm(map: &UncertaintyMap, path: &Path) -> Result<()> {
    write_pfm_raster(&masked_raster(map.width(), map.height(), map.values(), |_| true), path)
}

pub fn read_uncertainty_pfm(path: &Path) -> Result<UncertaintyMap> {
    let r = read_pfm_raster(path)?;
    UncertaintyMap::new(r.width, r.height, r.data.iter().map(|v| *v as f64).collect())
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Reads 16-bit depth; `raw * scale_mm_per_unit / 1000` meters, raw 0 invalid.
pub fn read_png16(path: &Path, scale_mm_per_unit: f64) -> Result<DepthMap> {
    let img = image::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let image::DynamicImage::ImageLuma16(buf) = img else {
        return Err(CliError::format(
            path,
            0,
            format!("expected 16-bit single-channel PNG, found {:?}", img.color()),
        ));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let raw: Vec<u16> = buf.into_raw();
    let values = raw
        .iter()
        .map(|r| *r as f64 * scale_mm_per_unit / 1000.0)
        .collect();
    let valid = raw.iter().map(|r| *r != 0).collect();
    Ok(DepthMap::with_validity(w, h, values, valid, DepthUnit::Meters)?)
}

/// Writes 16-bit depth, rounding to the nearest unit. Invalid pixels and
/// depths that round to zero are stored as 0; large depths saturate.
pub fn write_png16(map: &DepthMap, path: &Path, scale_mm_per_unit: f64) -> Result<()> {
    if !(scale_mm_per_unit > 0.0) {
        return Err(CliError::Config("png16 scale must be > 0".into()));
    }
    let raw: Vec<u16> = (0..map.len())
        .map(|i| {
            if map.is_valid(i) {
                (map.value(i) * 1000.0 / scale_mm_per_unit).round().clamp(0.0, u16::MAX as f64) as u16
            } else {
                0
            }
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width() as u32, map.height() as u32, raw).expect("buffer size");
    buf.save(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Loads any PNG as luma in `[0, 1]`.
pub fn read_intensity(path: &Path) -> Result<Image> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm")) {
        let r = read_pfm_raster(path)?;
        return Ok(Image::new(r.width, r.height, r.data.iter().map(|v| *v as f64).collect())?);
    }
    let img = image::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let luma = img.to_luma32f();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    Ok(Image::new(w, h, luma.into_raw().into_iter().map(|v| v as f64).collect())?)
}

/// Writes an intensity frame as 8-bit grayscale PNG.
pub fn write_intensity_png(image: &Image, path: &Path) -> Result<()> {
    let raw: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(image.width() as u32, image.height() as u32, raw).expect("buffer size");
    buf.save(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn write_intensity_pfm(image: &Image, path: &Path) -> Result<()> {
    write_pfm_raster(
        &Raster {
            width: image.width(),
            height: image.height(),
            data: image.data().iter().map(|v| *v as f32).collect(),
        },
        path,
    )
}

/// Loads metric depth from `.pfm` or 16-bit `.png`.
pub fn read_depth(path: &Path, png_scale_mm: f64) -> Result<DepthMap> {
    match extension(path).as_deref() {
        Some("pfm") => read_pfm(path, DepthUnit::Meters),
        Some("png") => read_png16(path, png_scale_mm),
        _ => Err(CliError::Data(format!(
            "{}: unsupported depth format (use .pfm or .png)",
            path.display()
        ))),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

/// Focus-distance sidecar stored next to stack frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSidecar {
    /// Meters, ascending.
    pub distances: Vec<f64>,
    /// Frame file names relative to the sidecar; defaults to the sorted
    /// image files of the directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<String>>,
}

pub const SIDECAR_NAME: &str = "distances.json";

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, byte_offset(&text, e.line(), e.column()), e.to_string()))
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    text.split_inclusive('\n').take(line - 1).map(str::len).sum::<usize>() + column.saturating_sub(1)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Sorted image files (`.png`, `.pfm`) in `dir`, excluding hidden files.
pub fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| extension(p).is_some_and(|e| exts.contains(&e.as_str())))
        .filter(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads a real focal stack: frames plus the `distances.json` sidecar.
pub fn read_stack(dir: &Path) -> Result<FocalStack> {
    let sidecar: StackSidecar = read_json(&dir.join(SIDECAR_NAME))?;
    let frames = match &sidecar.frames {
        Some(names) => names.iter().map(|n| dir.join(n)).collect(),
        None => list_files(dir, &["png", "pfm"])?,
    };
    if frames.len() != sidecar.distances.len() {
        return Err(CliError::Data(format!(
            "{}: {} frames but {} distances",
            dir.display(),
            frames.len(),
            sidecar.distances.len()
        )));
    }
    let images = frames
        .iter()
        .map(|p| read_intensity(p))
        .collect::<Result<Vec<_>>>()?;
    FocalStack::new(images, sidecar.distances)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

/// Writes frames and sidecar; `pfm` keeps full precision, otherwise 8-bit PNG.
pub fn write_stack(stack: &FocalStack, dir: &Path, pfm: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut names = Vec::with_capacity(stack.len());
    for (k, frame) in stack.frames().iter().enumerate() {
        let name = format!("frame_{k:02}.{}", if pfm { "pfm" } else { "png" });
        let path = dir.join(&name);
        if pfm {
            write_intensity_pfm(frame, &path)?;
        } else {
            write_intensity_png(frame, &path)?;
        }
        names.push(name);
    }
    write_json(
        &StackSidecar {
            distances: stack.distances().to_vec(),
            frames: Some(names),
        },
        &dir.join(SIDECAR_NAME),
    )
}
