//! Portable Float Map. `PF` holds three channels, `Pf` one; the scale
//! line's sign gives the byte order (negative is little-endian) and rows are
//! stored bottom to top.

use super::{check_dims, IoError};
use crate::color::Rgb;
use crate::image::Image;

/// Decoded PFM payload with rows reordered top to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Pfm {
    pub fn into_rgb(self) -> Result<Image<Rgb>, IoError> {
        if self.channels != 3 {
            return Err(IoError::Unsupported("expected a 3-channel PF file".into()));
        }
        let pixels = self
            .data
            .chunks_exact(3)
            .map(|c| Rgb::new(c[0] as f64, c[1] as f64, c[2] as f64))
            .collect();
        Ok(Image::from_vec(self.width, self.height, pixels).expect("length checked on decode"))
    }

    pub fn into_gray(self) -> Result<Image<f64>, IoError> {
        if self.channels != 1 {
            return Err(IoError::Unsupported("expected a 1-channel Pf file".into()));
        }
        let pixels = self.data.into_iter().map(f64::from).collect();
        Ok(Image::from_vec(self.width, self.height, pixels).expect("length checked on decode"))
    }
}

/// Splits off the next whitespace-delimited token and the single
/// whitespace byte that terminates it.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str, IoError> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
        if *pos - start > 64 {
            return Err(IoError::BadHeader("header token too long".into()));
        }
    }
    if *pos >= bytes.len() {
        return Err(IoError::BadHeader("header ends early".into()));
    }
    let tok = std::str::from_utf8(&bytes[start..*pos]).map_err(|_| IoError::BadHeader("non-ASCII header".into()))?;
    *pos += 1;
    Ok(tok)
}

pub fn decode(bytes: &[u8]) -> Result<Pfm, IoError> {
    let channels = match bytes.get(..2) {
        Some(b"PF") => 3,
        Some(b"Pf") => 1,
        _ => return Err(IoError::BadMagic { format: "PFM" }),
    };
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(IoError::BadMagic { format: "PFM" });
    }
    let mut pos = 3;
    let parse_dim = |t: &str| {
        t.parse::<usize>()
            .map_err(|_| IoError::BadHeader(format!("bad dimension `{t}`")))
    };
    let width = parse_dim(token(bytes, &mut pos)?)?;
    let height = parse_dim(token(bytes, &mut pos)?)?;
    check_dims(width, height)?;
    let scale_tok = token(bytes, &mut pos)?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| IoError::BadHeader(format!("bad scale `{scale_tok}`")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(IoError::BadHeader(format!("bad scale `{scale_tok}`")));
    }
    let little = scale < 0.0;
    let count = width * height * channels;
    let needed = count * 4;
    let payload = &bytes[pos..];
    if payload.len() < needed {
        return Err(IoError::Truncated {
            needed,
            found: payload.len(),
        });
    }
    let row_len = width * channels;
    let mut data = vec![0f32; count];
    for (file_row, chunk) in payload[..needed].chunks_exact(row_len * 4).enumerate() {
        let row = height - 1 - file_row;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let raw = [b[0], b[1], b[2], b[3]];
            data[row * row_len + i] = if little {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
        }
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

/// Encodes little-endian with scale `-1.0`. `data` is top to bottom.
pub fn encode(width: usize, height: usize, channels: usize, data: &[f32]) -> Result<Vec<u8>, IoError> {
    check_dims(width, height)?;
    let magic = match channels {
        3 => "PF",
        1 => "Pf",
        _ => return Err(IoError::Unsupported(format!("{channels} channels"))),
    };
    if data.len() != width * height * channels {
        return Err(IoError::Value("buffer length does not match dimensions".into()));
    }
    let mut out = format!("{magic}\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(data.len() * 4);
    let row_len = width * channels;
    for row in (0..height).rev() {
        for v in &data[row * row_len..(row + 1) * row_len] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn encode_rgb(image: &Image<Rgb>) -> Result<Vec<u8>, IoError> {
    let data: Vec<f32> = image
        .pixels()
        .iter()
        .flat_map(|c| [c.r as f32, c.g as f32, c.b as f32])
        .collect();
    encode(image.width(), image.height(), 3, &data)
}

pub fn encode_gray(image: &Image<f64>) -> Result<Vec<u8>, IoError> {
    let data: Vec<f32> = image.pixels().iter().map(|&v| v as f32).collect();
    encode(image.width(), image.height(), 1, &data)
}
