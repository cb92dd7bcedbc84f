//! PNG codecs for bounded maps. Scalars and colors in `[0, 1]` use 16-bit
//! samples (`round(v · 65535)`); normals are stored as `(n + 1) / 2` and
//! renormalized on decode; masks are 1-bit grayscale.

use std::io::Cursor;

use nalgebra::Vector3;
use png::{BitDepth, ColorType, Decoder, Encoder, Limits, Transformations};

use super::{check_dims, IoError};
use crate::color::Rgb;
use crate::image::Image;

const FULL: f64 = 65535.0;
/// Decoded image buffers above this size are refused.
const DECODE_LIMIT_BYTES: usize = 1 << 30;

fn png_err(e: impl std::fmt::Display) -> IoError {
    IoError::Png(e.to_string())
}

fn write_png(width: usize, height: usize, color: ColorType, depth: BitDepth, data: &[u8]) -> Result<Vec<u8>, IoError> {
    check_dims(width, height)?;
    let mut out = Vec::new();
    {
        let mut enc = Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(data).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

/// Raw decoded samples. Sixteen-bit samples are big-endian pairs.
struct Raw {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    line_size: usize,
    data: Vec<u8>,
}

fn read_png(bytes: &[u8]) -> Result<Raw, IoError> {
    if !bytes.starts_with(&[0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n']) {
        return Err(IoError::BadMagic { format: "PNG" });
    }
    let mut dec = Decoder::new_with_limits(Cursor::new(bytes), Limits { bytes: DECODE_LIMIT_BYTES });
    dec.set_transformations(Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| IoError::Png("image too large".into()))?;
    let mut data = vec![0u8; size];
    let info = reader.next_frame(&mut data).map_err(png_err)?;
    let (width, height) = (info.width as usize, info.height as usize);
    check_dims(width, height)?;
    Ok(Raw {
        width,
        height,
        color: info.color_type,
        depth: info.bit_depth,
        line_size: info.line_size,
        data,
    })
}

impl Raw {
    fn channels(&self) -> usize {
        match self.color {
            ColorType::Grayscale | ColorType::Indexed => 1,
            ColorType::GrayscaleAlpha => 2,
            ColorType::Rgb => 3,
            ColorType::Rgba => 4,
        }
    }

    /// Sample `c` of pixel `(x, y)` scaled to `[0, 1]`.
    fn sample(&self, x: usize, y: usize, c: usize) -> f64 {
        let row = &self.data[y * self.line_size..(y + 1) * self.line_size];
        let i = x * self.channels() + c;
        match self.depth {
            BitDepth::Sixteen => u16::from_be_bytes([row[2 * i], row[2 * i + 1]]) as f64 / FULL,
            BitDepth::Eight => row[i] as f64 / 255.0,
            low => {
                let bits = low as usize;
                let byte = row[i * bits / 8];
                let shift = 8 - bits - (i * bits) % 8;
                let max = (1u32 << bits) - 1;
                ((byte >> shift) as u32 & max) as f64 / max as f64
            }
        }
    }

    fn expect(&self, colors: &[ColorType], depths: &[BitDepth], what: &str) -> Result<(), IoError> {
        if colors.contains(&self.color) && depths.contains(&self.depth) {
            Ok(())
        } else {
            Err(IoError::Unsupported(format!(
                "{what} needs {colors:?} at {depths:?}, found {:?} {:?}",
                self.color, self.depth
            )))
        }
    }
}

fn quantize(v: f64, what: &str) -> Result<u16, IoError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(IoError::Value(format!("{what} sample {v} outside [0, 1]")));
    }
    Ok((v * FULL).round() as u16)
}

fn encode16<T>(image: &Image<T>, color: ColorType, what: &str, samples: impl Fn(&T) -> Vec<f64>) -> Result<Vec<u8>, IoError> {
    let mut data = Vec::new();
    for p in image.pixels() {
        for v in samples(p) {
            data.extend_from_slice(&quantize(v, what)?.to_be_bytes());
        }
    }
    write_png(image.width(), image.height(), color, BitDepth::Sixteen, &data)
}

pub fn encode_gray16(image: &Image<f64>) -> Result<Vec<u8>, IoError> {
    encode16(image, ColorType::Grayscale, "scalar", |&v| vec![v])
}

pub fn decode_gray16(bytes: &[u8]) -> Result<Image<f64>, IoError> {
    let raw = read_png(bytes)?;
    raw.expect(&[ColorType::Grayscale], &[BitDepth::Sixteen], "scalar map")?;
    Ok(Image::from_fn(raw.width, raw.height, |x, y| raw.sample(x, y, 0)))
}

pub fn encode_rgb16(image: &Image<Rgb>) -> Result<Vec<u8>, IoError> {
    encode16(image, ColorType::Rgb, "color", |c| c.to_array().to_vec())
}

pub fn decode_rgb16(bytes: &[u8]) -> Result<Image<Rgb>, IoError> {
    let raw = read_png(bytes)?;
    raw.expect(&[ColorType::Rgb], &[BitDepth::Sixteen], "color map")?;
    Ok(Image::from_fn(raw.width, raw.height, |x, y| {
        Rgb::new(raw.sample(x, y, 0), raw.sample(x, y, 1), raw.sample(x, y, 2))
    }))
}

/// Normals must be unit length within `1e-3` and are stored as `(n + 1) / 2`.
pub fn encode_normals(image: &Image<Vector3<f64>>) -> Result<Vec<u8>, IoError> {
    for n in image.pixels() {
        let len = n.norm();
        if !len.is_finite() || (len - 1.0).abs() > 1e-3 {
            return Err(IoError::Value(format!("normal {n:?} is not unit length")));
        }
    }
    encode16(image, ColorType::Rgb, "normal", |n| {
        n.iter().map(|c| ((c + 1.0) * 0.5).clamp(0.0, 1.0)).collect()
    })
}

pub fn decode_normals(bytes: &[u8]) -> Result<Image<Vector3<f64>>, IoError> {
    let raw = read_png(bytes)?;
    raw.expect(&[ColorType::Rgb], &[BitDepth::Sixteen], "normal map")?;
    let mut pixels = Vec::with_capacity(raw.width * raw.height);
    for y in 0..raw.height {
        for x in 0..raw.width {
            let v = Vector3::from_fn(|c, _| 2.0 * raw.sample(x, y, c) - 1.0);
            let len = v.norm();
            if len < 0.5 {
                return Err(IoError::Corrupt(format!("normal at ({x}, {y}) has length {len}")));
            }
            pixels.push(v / len);
        }
    }
    Ok(Image::from_vec(raw.width, raw.height, pixels).expect("one pixel per sample"))
}

pub fn encode_mask(mask: &Image<bool>) -> Result<Vec<u8>, IoError> {
    let (w, h) = mask.dims();
    let stride = w.div_ceil(8);
    let mut data = vec![0u8; stride * h];
    for (x, y, &m) in mask.enumerate() {
        if m {
            data[y * stride + x / 8] |= 0x80 >> (x % 8);
        }
    }
    write_png(w, h, ColorType::Grayscale, BitDepth::One, &data)
}

/// Accepts grayscale at any bit depth; nonzero samples are foreground.
pub fn decode_mask(bytes: &[u8]) -> Result<Image<bool>, IoError> {
    let raw = read_png(bytes)?;
    raw.expect(
        &[ColorType::Grayscale],
        &[BitDepth::One, BitDepth::Two, BitDepth::Four, BitDepth::Eight, BitDepth::Sixteen],
        "mask",
    )?;
    Ok(Image::from_fn(raw.width, raw.height, |x, y| raw.sample(x, y, 0) > 0.0))
}

pub fn encode_srgb8(image: &Image<[u8; 3]>) -> Result<Vec<u8>, IoError> {
    let data: Vec<u8> = image.pixels().iter().flatten().copied().collect();
    write_png(image.width(), image.height(), ColorType::Rgb, BitDepth::Eight, &data)
}

/// Reads an 8- or 16-bit gray, RGB or RGBA PNG as display values in
/// `[0, 1]`. Alpha is ignored.
pub fn decode_display(bytes: &[u8]) -> Result<Image<Rgb>, IoError> {
    let raw = read_png(bytes)?;
    raw.expect(
        &[ColorType::Grayscale, ColorType::GrayscaleAlpha, ColorType::Rgb, ColorType::Rgba],
        &[BitDepth::Eight, BitDepth::Sixteen],
        "image",
    )?;
    let gray = raw.channels() < 3;
    Ok(Image::from_fn(raw.width, raw.height, |x, y| {
        if gray {
            Rgb::splat(raw.sample(x, y, 0))
        } else {
            Rgb::new(raw.sample(x, y, 0), raw.sample(x, y, 1), raw.sample(x, y, 2))
        }
    }))
}
