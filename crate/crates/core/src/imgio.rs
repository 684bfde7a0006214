//! PNG input/output and atomic file writes.
//!
//! Color images are 8-bit RGB mapped linearly to [0, 1]. Depth maps are
//! 16-bit grayscale PNGs scaled by a per-image factor recorded in a JSON
//! sidecar next to the file, so depth round-trips at ~1e-5 relative
//! precision. All writes go through a temp file plus rename.

use crate::{io_err, Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Floating-point RGB image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f64; 3]>,
}

impl ImageF {
    pub fn new(width: u32, height: u32) -> Self {
        ImageF {
            width,
            height,
            pixels: vec![[0.0; 3]; (width * height) as usize],
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f64; 3] {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, c: [f64; 3]) {
        self.pixels[(y * self.width + x) as usize] = c;
    }
}

/// Write `bytes` atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Data(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("cannot serialize {}: {e}", path.display())))?;
    body.push('\n');
    atomic_write(path, body.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let body = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&body)
        .map_err(|e| Error::Data(format!("{} is not valid JSON: {e}", path.display())))
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write an 8-bit RGB PNG.
pub fn write_png(path: &Path, img: &ImageF) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width, img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            let c = img.pixel(x, y);
            buf.put_pixel(x, y, image::Rgb([quantize8(c[0]), quantize8(c[1]), quantize8(c[2])]));
        }
    }
    let mut bytes = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::Data(format!("cannot encode {}: {e}", path.display())))?;
    atomic_write(path, &bytes)
}

/// Read an 8-bit PNG into linear [0, 1] values. Alpha, if present, is
/// composited over black by dropping it.
pub fn read_png(path: &Path) -> Result<ImageF> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("cannot read image {}: {e}", path.display())))?
        .to_rgb8();
    let (width, height) = img.dimensions();
    let mut out = ImageF::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let p = img.get_pixel(x, y);
            out.set_pixel(
                x,
                y,
                [
                    p[0] as f64 / 255.0,
                    p[1] as f64 / 255.0,
                    p[2] as f64 / 255.0,
                ],
            );
        }
    }
    Ok(out)
}

/// Sidecar metadata for a 16-bit depth PNG.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepthSidecar {
    /// Depth value corresponding to the full 16-bit range.
    pub scale: f64,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write a depth map as 16-bit grayscale PNG plus its scale sidecar.
pub fn write_depth_png(path: &Path, width: u32, height: u32, depth: &[f64]) -> Result<()> {
    if depth.len() != (width * height) as usize {
        return Err(Error::Domain(format!(
            "{} depth values for a {width}x{height} map",
            depth.len()
        )));
    }
    let max = depth.iter().cloned().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { max } else { 1.0 };
    let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let d = depth[(y * width + x) as usize];
            let q = ((d / scale).clamp(0.0, 1.0) * 65535.0).round() as u16;
            buf.put_pixel(x, y, image::Luma([q]));
        }
    }
    let mut bytes = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::Data(format!("cannot encode {}: {e}", path.display())))?;
    atomic_write(path, &bytes)?;
    write_json(&sidecar_path(path), &DepthSidecar { scale })
}

/// Read a 16-bit depth PNG and rescale by its sidecar factor.
pub fn read_depth_png(path: &Path) -> Result<(u32, u32, Vec<f64>)> {
    let sidecar: DepthSidecar = read_json(&sidecar_path(path))?;
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("cannot read depth map {}: {e}", path.display())))?
        .to_luma16();
    let (width, height) = img.dimensions();
    let depth = img
        .pixels()
        .map(|p| p[0] as f64 / 65535.0 * sidecar.scale)
        .collect();
    Ok((width, height, depth))
}
