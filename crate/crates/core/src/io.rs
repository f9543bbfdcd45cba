//! File formats at the library boundary: camera JSON, PFM depth, PNG color and masks.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{ColorImage, DepthMap, Mask};
use crate::splat::Camera;

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| not_found_or_io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn not_found_or_io(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::NotFound(path.display().to_string())
    } else {
        Error::io(path, e)
    }
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    read_json(path)
}

pub fn save_cameras(cams: &[Camera], path: impl AsRef<Path>) -> Result<()> {
    write_json(cams, path)
}

/// Single-channel little-endian PFM, rows stored bottom to top.
pub fn write_pfm(depth: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (depth.width(), depth.height());
    let mut buf = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for x in 0..w {
            buf.extend((*depth.get(x, y) as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| not_found_or_io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = Vec::new();
    while header.len() < 3 {
        let mut line = String::new();
        if r.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(Error::Validation(format!("{}: truncated PFM header", path.display())));
        }
        header.extend(line.split_whitespace().map(str::to_string));
    }
    let bad = || Error::Validation(format!("{}: malformed PFM header", path.display()));
    if header[0] != "Pf" {
        return Err(bad());
    }
    let w: usize = header[1].parse().map_err(|_| bad())?;
    let h: usize = header[2].parse().map_err(|_| bad())?;
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let scale: f64 = line.trim().parse().map_err(|_| bad())?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * w * h {
        return Err(bad());
    }
    let mut depth = DepthMap::filled(w, h, 0.0);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().expect("chunk of 4");
        let v = if scale < 0.0 { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (x, row) = (i % w, i / w);
        *depth.get_mut(x, h - 1 - row) = v as f64;
    }
    Ok(depth)
}

pub fn linear_to_srgb(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn save_color_png(img: &ColorImage, path: impl AsRef<Path>) -> Result<()> {
    let out = RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let c = img.get(x as usize, y as usize);
        Rgb(c.map(|v| (linear_to_srgb(v) * 255.0).round() as u8))
    });
    out.save(path.as_ref())?;
    Ok(())
}

pub fn save_mask_png(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let out = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if *mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    out.save(path.as_ref())?;
    Ok(())
}

pub fn load_mask_png(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::NotFound(path.display().to_string()));
    }
    let img = image::open(path)?.to_luma8();
    Ok(Mask::from_fn(img.width() as usize, img.height() as usize, |x, y| {
        img.get_pixel(x as u32, y as u32)[0] > 127
    }))
}

/// Writes `rows` as CSV with the given header line.
pub fn write_csv(header: &str, rows: &[Vec<f64>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    writeln!(buf, "{header}").expect("write to Vec");
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(buf, "{}", cells.join(",")).expect("write to Vec");
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
