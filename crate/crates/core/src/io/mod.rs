//! File formats: PFM and Radiance RGBE for HDR data, 16-bit PNG for
//! bounded maps, 1-bit PNG for masks, and JSON manifests for bundle and
//! OLAT directories. Byte layouts are described in `docs/formats.md`.
//!
//! Decoders take untrusted bytes and report every malformation as an
//! [`IoError`]; they do not panic.

pub mod bundle;
pub mod olat;
pub mod pfm;
pub mod png16;
pub mod rgbe;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::color::Rgb;
use crate::envlight::{EnvError, EnvMap};
use crate::image::Image;

/// Largest width or height any decoder accepts.
pub const MAX_DIMENSION: usize = 1 << 15;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a {format} file")]
    BadMagic { format: &'static str },
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("truncated data: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("corrupt data: {0}")]
    Corrupt(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("value cannot be encoded: {0}")]
    Value(String),
    #[error("dimensions {width}x{height} are not allowed here")]
    Dimensions { width: usize, height: usize },
    #[error("png: {0}")]
    Png(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error(transparent)]
    Env(#[from] EnvError),
}

impl IoError {
    /// True for malformed or inconsistent data, false for filesystem errors.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, IoError::Io { .. })
    }
}

pub(crate) fn check_dims(width: usize, height: usize) -> Result<(), IoError> {
    if width == 0 || height == 0 || width > MAX_DIMENSION || height > MAX_DIMENSION {
        return Err(IoError::Dimensions { width, height });
    }
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            IoError::MissingFile(path.to_path_buf())
        } else {
            IoError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, bytes).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn create_dir(path: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdrFormat {
    Pfm,
    Rgbe,
}

impl HdrFormat {
    pub fn from_path(path: &Path) -> Result<Self, IoError> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "pfm" => Ok(HdrFormat::Pfm),
            Some(e) if e == "hdr" || e == "rgbe" || e == "pic" => Ok(HdrFormat::Rgbe),
            _ => Err(IoError::Unsupported(format!(
                "{}: expected a .pfm or .hdr extension",
                path.display()
            ))),
        }
    }
}

/// Decodes an RGB image from PFM or Radiance bytes, detected by magic.
pub fn decode_hdr(bytes: &[u8]) -> Result<Image<Rgb>, IoError> {
    if bytes.starts_with(b"PF") || bytes.starts_with(b"Pf") {
        pfm::decode(bytes)?.into_rgb()
    } else if bytes.starts_with(b"#?") {
        rgbe::decode(bytes)
    } else {
        Err(IoError::BadMagic { format: "PFM or Radiance" })
    }
}

pub fn read_hdr(path: &Path) -> Result<Image<Rgb>, IoError> {
    decode_hdr(&read_file(path)?)
}

/// Writes PFM or Radiance RGBE depending on the file extension.
pub fn write_hdr(path: &Path, image: &Image<Rgb>) -> Result<(), IoError> {
    let bytes = match HdrFormat::from_path(path)? {
        HdrFormat::Pfm => pfm::encode_rgb(image)?,
        HdrFormat::Rgbe => rgbe::encode(image)?,
    };
    write_file(path, &bytes)
}

pub fn read_env(path: &Path) -> Result<EnvMap, IoError> {
    Ok(EnvMap::new(read_hdr(path)?)?)
}

pub fn write_env(path: &Path, env: &EnvMap) -> Result<(), IoError> {
    write_hdr(path, env.texels())
}

/// Display encoding used for reference previews: `clamp(ln(1 + x), 0, 1)`
/// per channel, then the sRGB transfer curve, then 8 bits.
pub fn tonemap_srgb8(image: &Image<Rgb>) -> Image<[u8; 3]> {
    fn encode(x: f64) -> u8 {
        let v = if x.is_nan() { 0.0 } else { x.max(0.0).ln_1p().min(1.0) };
        let s = if v <= 0.003_130_8 {
            12.92 * v
        } else {
            1.055 * v.powf(1.0 / 2.4) - 0.055
        };
        (s * 255.0).round().clamp(0.0, 255.0) as u8
    }
    image.map(|c| [encode(c.r), encode(c.g), encode(c.b)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tonemap_endpoints() {
        let img = Image::from_vec(
            4,
            1,
            vec![
                Rgb::BLACK,
                Rgb::splat(std::f64::consts::E - 1.0),
                Rgb::splat(100.0),
                Rgb::new(-1.0, f64::NAN, 0.001),
            ],
        )
        .unwrap();
        let t = tonemap_srgb8(&img);
        assert_eq!(*t.get(0, 0), [0, 0, 0]);
        assert_eq!(*t.get(1, 0), [255, 255, 255]);
        assert_eq!(*t.get(2, 0), [255, 255, 255]);
        // ln(1.001) ≈ 9.995e-4 is on the linear toe: 12.92 × that × 255 ≈ 3.29.
        assert_eq!(*t.get(3, 0), [0, 0, 3]);
    }

    #[test]
    fn format_detection() {
        assert_eq!(HdrFormat::from_path(Path::new("a/b.PFM")).unwrap(), HdrFormat::Pfm);
        assert_eq!(HdrFormat::from_path(Path::new("x.hdr")).unwrap(), HdrFormat::Rgbe);
        assert!(HdrFormat::from_path(Path::new("x.exr")).is_err());
        assert!(matches!(decode_hdr(b"GIF89a"), Err(IoError::BadMagic { .. })));
        assert!(matches!(decode_hdr(b""), Err(IoError::BadMagic { .. })));
    }
}
