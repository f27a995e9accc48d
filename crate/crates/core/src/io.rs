//! File formats: 8-bit PNG, binary/ASCII PGM and PPM, and the dense flow
//! binary.
//!
//! Intensities are divided by the format's maximum value on load and
//! quantized with `round(v * 255)` on save, so loading and re-saving 8-bit
//! data reproduces it exactly.
//!
//! Flow files start with a 16-byte header: the 8-byte magic `MSBFLOW1`, then
//! height and width as little-endian `u32`. The body is `height * width`
//! pairs of little-endian `f32` `(dx, dy)` in row-major order.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::FlowField;
use crate::image::{Image, Raster};

/// Upper bound on decoded pixels; larger headers are rejected before
/// allocating.
pub const MAX_PIXELS: usize = 1 << 26;

pub const FLOW_MAGIC: &[u8; 8] = b"MSBFLOW1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Pgm,
    Ppm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "png" => Some(Self::Png),
            "pgm" => Some(Self::Pgm),
            "ppm" => Some(Self::Ppm),
            "pnm" => Some(Self::Ppm),
            _ => None,
        }
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    match ImageFormat::from_path(path) {
        Some(ImageFormat::Png) => decode_png(&bytes),
        Some(_) => decode_pnm(&bytes),
        None => decode_image(&bytes),
    }
}

/// Writes by extension. PGM requires 1 channel and PPM 3; PNG takes either.
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let bytes = match ImageFormat::from_path(path) {
        Some(ImageFormat::Png) => encode_png(image)?,
        Some(ImageFormat::Pgm) if image.channels() != 1 => {
            return Err(Error::ChannelMismatch {
                expected: 1,
                found: image.channels(),
            })
        }
        Some(ImageFormat::Ppm) if image.channels() != 3 => {
            return Err(Error::ChannelMismatch {
                expected: 3,
                found: image.channels(),
            })
        }
        Some(_) => encode_pnm(image),
        None => {
            return Err(Error::InvalidParameter(format!(
                "unsupported image extension: {}",
                path.display()
            )))
        }
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Sniffs PNG or PNM from the leading bytes.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else if bytes.first() == Some(&b'P') {
        decode_pnm(bytes)
    } else {
        Err(Error::Decode("unrecognized image format".into()))
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut reader = image::ImageReader::with_format(Cursor::new(bytes), image::ImageFormat::Png);
    let mut limits = image::Limits::default();
    limits.max_image_width = Some(1 << 16);
    limits.max_image_height = Some(1 << 16);
    limits.max_alloc = Some((MAX_PIXELS * 8) as u64);
    reader.limits(limits);
    let dynamic = reader.decode().map_err(|e| Error::Decode(e.to_string()))?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    let gray = !dynamic.color().has_color();
    let sixteen = dynamic.color().bytes_per_pixel() / dynamic.color().channel_count() > 1;
    let data: Vec<f64> = match (gray, sixteen) {
        (true, false) => dynamic.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        (true, true) => dynamic.to_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        (false, false) => dynamic.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        (false, true) => dynamic.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
    };
    Image::new(h, w, if gray { 1 } else { 3 }, data)
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let raw: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    let (w, h) = (image.width() as u32, image.height() as u32);
    let mut out = Cursor::new(Vec::new());
    let res = if image.channels() == 1 {
        image::GrayImage::from_raw(w, h, raw)
            .ok_or_else(|| Error::Decode("buffer size".into()))?
            .write_to(&mut out, image::ImageFormat::Png)
    } else {
        image::RgbImage::from_raw(w, h, raw)
            .ok_or_else(|| Error::Decode("buffer size".into()))?
            .write_to(&mut out, image::ImageFormat::Png)
    };
    res.map_err(|e| Error::Decode(e.to_string()))?;
    Ok(out.into_inner())
}

struct PnmHeader {
    magic: u8,
    width: usize,
    height: usize,
    maxval: usize,
    /// Offset of the first raster byte (binary) or first sample token (ASCII).
    body: usize,
}

fn skip_space_and_comments(bytes: &[u8], mut i: usize) -> usize {
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' && bytes[i] != b'\r' {
                i += 1;
            }
        } else {
            return i;
        }
    }
}

fn read_uint(bytes: &[u8], i: usize) -> Result<(usize, usize)> {
    let i = skip_space_and_comments(bytes, i);
    let start = i;
    let mut j = i;
    let mut v: usize = 0;
    while j < bytes.len() && bytes[j].is_ascii_digit() {
        v = v
            .checked_mul(10)
            .and_then(|v| v.checked_add((bytes[j] - b'0') as usize))
            .ok_or_else(|| Error::Decode("integer overflow in PNM header".into()))?;
        j += 1;
    }
    if j == start {
        return Err(Error::Decode(format!("expected integer at byte {start}")));
    }
    Ok((v, j))
}

fn parse_pnm_header(bytes: &[u8]) -> Result<PnmHeader> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'2' | b'3' | b'5' | b'6') {
        return Err(Error::Decode("not a P2/P3/P5/P6 file".into()));
    }
    let magic = bytes[1];
    let (width, i) = read_uint(bytes, 2)?;
    let (height, i) = read_uint(bytes, i)?;
    let (maxval, i) = read_uint(bytes, i)?;
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage);
    }
    if !(1..=65535).contains(&maxval) {
        return Err(Error::Decode(format!("maxval {maxval} out of range")));
    }
    if width.checked_mul(height).is_none_or(|n| n > MAX_PIXELS) {
        return Err(Error::Decode("image too large".into()));
    }
    let body = match magic {
        b'5' | b'6' => {
            // Exactly one whitespace byte separates the header from the raster.
            if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
                return Err(Error::Decode("missing whitespace after maxval".into()));
            }
            i + 1
        }
        _ => i,
    };
    Ok(PnmHeader {
        magic,
        width,
        height,
        maxval,
        body,
    })
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let h = parse_pnm_header(bytes)?;
    let channels = if matches!(h.magic, b'3' | b'6') { 3 } else { 1 };
    let n = h.width * h.height * channels;
    let scale = 1.0 / h.maxval as f64;
    let mut data = Vec::with_capacity(n);
    match h.magic {
        b'5' | b'6' => {
            let bps = if h.maxval > 255 { 2 } else { 1 };
            let raster = &bytes[h.body..];
            if raster.len() < n * bps {
                return Err(Error::Decode(format!(
                    "raster truncated: need {} bytes, have {}",
                    n * bps,
                    raster.len()
                )));
            }
            for k in 0..n {
                let v = if bps == 1 {
                    raster[k] as usize
                } else {
                    ((raster[2 * k] as usize) << 8) | raster[2 * k + 1] as usize
                };
                if v > h.maxval {
                    return Err(Error::Decode(format!("sample {v} exceeds maxval {}", h.maxval)));
                }
                data.push(v as f64 * scale);
            }
        }
        _ => {
            let mut i = h.body;
            for _ in 0..n {
                let (v, j) = read_uint(bytes, i)?;
                if v > h.maxval {
                    return Err(Error::Decode(format!("sample {v} exceeds maxval {}", h.maxval)));
                }
                data.push(v as f64 * scale);
                i = j;
            }
        }
    }
    Image::new(h.height, h.width, channels, data)
}

/// Binary P5 (1 channel) or P6 (3 channels), maxval 255.
pub fn encode_pnm(image: &Image) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    out
}

pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + flow.data().len() * 4);
    out.extend_from_slice(FLOW_MAGIC);
    out.extend_from_slice(&(flow.height() as u32).to_le_bytes());
    out.extend_from_slice(&(flow.width() as u32).to_le_bytes());
    for &v in flow.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 16 || &bytes[..8] != FLOW_MAGIC {
        return Err(Error::Decode("missing flow magic".into()));
    }
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let n = height
        .checked_mul(width)
        .filter(|&n| n <= MAX_PIXELS)
        .ok_or_else(|| Error::Decode("flow too large".into()))?;
    let body = &bytes[16..];
    if body.len() != n * 8 {
        return Err(Error::Decode(format!(
            "flow body is {} bytes, expected {}",
            body.len(),
            n * 8
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FlowField::new(height, width, data).map_err(|e| Error::Decode(e.to_string()))
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    std::fs::write(path, encode_flow(flow))?;
    Ok(())
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_flow(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_pgm_with_comments() {
        let src = b"P2\n# comment\n3 1\n# another\n255\n0 128 255\n";
        let img = decode_pnm(src).unwrap();
        assert_eq!(img.dims(), (1, 3));
        assert_eq!(img.data(), &[0.0, 128.0 / 255.0, 1.0]);
    }

    #[test]
    fn binary_ppm_round_trip_is_exact() {
        let raw: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 13 % 256) as u8).collect();
        let mut bytes = b"P6\n3 2\n255\n".to_vec();
        bytes.extend(&raw);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(encode_pnm(&img), bytes);
    }

    #[test]
    fn sixteen_bit_pgm() {
        let bytes = [b"P5 1 1 65535\n".as_slice(), &[0x80, 0x00]].concat();
        let img = decode_pnm(&bytes).unwrap();
        assert!((img.data()[0] - 32768.0 / 65535.0).abs() < 1e-15);
    }

    #[test]
    fn truncated_raster() {
        assert!(decode_pnm(b"P5 4 4 255\n\x00\x01").is_err());
        assert!(decode_pnm(b"P5 99999999 99999999 255\n").is_err());
        assert!(decode_pnm(b"P7 1 1 255\n\x00").is_err());
    }

    #[test]
    fn png_round_trip_is_exact() {
        let raw: Vec<u8> = (0..5 * 4 * 3).map(|i| (i * 37 % 256) as u8).collect();
        let img = Image::new(4, 5, 3, raw.iter().map(|&v| v as f64 / 255.0).collect()).unwrap();
        let bytes = encode_png(&img).unwrap();
        let back = decode_png(&bytes).unwrap();
        assert_eq!(back, img);
        let gray = img.channel(1);
        assert_eq!(decode_image(&encode_png(&gray).unwrap()).unwrap(), gray);
    }

    #[test]
    fn flow_header_layout() {
        let flow = FlowField::uniform(2, 3, 1.5, -0.25);
        let bytes = encode_flow(&flow);
        assert_eq!(bytes.len(), 16 + 2 * 3 * 8);
        assert_eq!(&bytes[..8], FLOW_MAGIC);
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(decode_flow(&bytes).unwrap(), flow);
        assert!(decode_flow(&bytes[..bytes.len() - 1]).is_err());
    }
}
