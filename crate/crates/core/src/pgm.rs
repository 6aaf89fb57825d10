//! Binary PGM ("P5") reading and writing for images and label maps.
//!
//! Intensities are `sample / maxval`; 16-bit samples are big-endian.
//! Label maps are written with maxval 65535 and labels stored verbatim.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Image, LabelMap};

struct Raster {
    height: usize,
    width: usize,
    maxval: u32,
    samples: Vec<u32>,
}

fn next_token(data: &[u8], pos: &mut usize) -> Result<u32> {
    loop {
        match data.get(*pos) {
            Some(b'#') => {
                while let Some(&b) = data.get(*pos) {
                    *pos += 1;
                    if b == b'\n' || b == b'\r' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::format("PGM", "truncated header")),
        }
    }
    let start = *pos;
    while data.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("PGM", "expected a decimal number in header"));
    }
    std::str::from_utf8(&data[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format("PGM", "header number out of range"))
}

fn decode(data: &[u8]) -> Result<Raster> {
    if data.len() < 2 || &data[..2] != b"P5" {
        return Err(Error::format("PGM", "missing P5 magic"));
    }
    let mut pos = 2;
    let width = next_token(data, &mut pos)? as usize;
    let height = next_token(data, &mut pos)? as usize;
    let maxval = next_token(data, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(Error::format("PGM", "zero-sized raster"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format("PGM", format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    match data.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format("PGM", "missing header terminator")),
    }
    let bytes_per_sample = if maxval < 256 { 1 } else { 2 };
    let n = width * height;
    let body = &data[pos..];
    if body.len() < n * bytes_per_sample {
        return Err(Error::format(
            "PGM",
            format!("raster has {} bytes, expected {}", body.len(), n * bytes_per_sample),
        ));
    }
    let samples = if bytes_per_sample == 1 {
        body[..n].iter().map(|&b| u32::from(b)).collect()
    } else {
        body[..2 * n]
            .chunks_exact(2)
            .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
            .collect()
    };
    Ok(Raster {
        height,
        width,
        maxval,
        samples,
    })
}

fn encode(height: usize, width: usize, maxval: u32, samples: impl Iterator<Item = u32>) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    if maxval < 256 {
        out.extend(samples.map(|s| s as u8));
    } else {
        for s in samples {
            out.extend_from_slice(&(s as u16).to_be_bytes());
        }
    }
    out
}

pub fn decode_image(data: &[u8]) -> Result<Image> {
    let raster = decode(data)?;
    let scale = f64::from(raster.maxval);
    Image::new(
        raster.height,
        raster.width,
        raster.samples.iter().map(|&s| f64::from(s) / scale).collect(),
    )
}

/// 16-bit encoding; intensities are clamped to `[0, 1]` and rounded.
pub fn encode_image(image: &Image) -> Vec<u8> {
    encode(
        image.height(),
        image.width(),
        65535,
        image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u32),
    )
}

pub fn decode_labels(data: &[u8]) -> Result<LabelMap> {
    let raster = decode(data)?;
    LabelMap::new(raster.height, raster.width, raster.samples)
}

pub fn encode_labels(labels: &LabelMap) -> Result<Vec<u8>> {
    if labels.max_label() > 65535 {
        return Err(Error::invalid(format!(
            "label {} does not fit a 16-bit PGM",
            labels.max_label()
        )));
    }
    Ok(encode(
        labels.height(),
        labels.width(),
        65535,
        labels.labels().iter().copied(),
    ))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::with_path(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::with_path(path, e))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    decode_image(&read_bytes(path.as_ref())?)
}

pub fn write_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    write_bytes(path.as_ref(), &encode_image(image))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    decode_labels(&read_bytes(path.as_ref())?)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    write_bytes(path.as_ref(), &encode_labels(labels)?)
}
