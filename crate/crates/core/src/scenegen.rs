//! Deterministic synthetic scenes with analytic ground truth.
//!
//! Scenes live on the square `[-1, 1]²` seen by an orthographic camera
//! looking down `-Z`. Pixel `(x, y)` maps to `u = 2(x + ½)/res − 1`,
//! `v = 1 − 2(y + ½)/res`, so `+v` is up in the image.
//!
//! Procedural noise hashes integer lattice coordinates and only uses
//! additions and multiplications, so textures come out identical on every
//! platform.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::Rgb;
use crate::envlight::EnvMap;
use crate::image::Image;
use crate::renderer::IntrinsicBundle;

pub const MIN_RESOLUTION: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("resolution {0} is below the minimum of {MIN_RESOLUTION}")]
    Resolution(usize),
    #[error("{map} paint has a value outside {range}")]
    Range { map: &'static str, range: &'static str },
    #[error("invalid paint parameter: {0}")]
    Paint(&'static str),
    #[error("invalid heightfield parameter: {0}")]
    Heightfield(&'static str),
    #[error("could not parse scene document: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Sphere,
    Heightfield,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

/// How a material channel is painted over the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Paint<T> {
    Constant { value: T },
    Checker { a: T, b: T, cells: usize },
    Gradient { from: T, to: T, axis: Axis },
    Noise { a: T, b: T, scale: f64 },
}

impl<T: Copy> Paint<T> {
    fn endpoints(&self) -> Vec<T> {
        match self {
            Paint::Constant { value } => vec![*value],
            Paint::Checker { a, b, .. } | Paint::Noise { a, b, .. } => vec![*a, *b],
            Paint::Gradient { from, to, .. } => vec![*from, *to],
        }
    }

    fn check(&self) -> Result<(), SceneError> {
        match self {
            Paint::Checker { cells: 0, .. } => Err(SceneError::Paint("checker needs at least one cell")),
            Paint::Noise { scale, .. } if !(scale.is_finite() && *scale > 0.0) => {
                Err(SceneError::Paint("noise scale must be positive"))
            }
            _ => Ok(()),
        }
    }
}

trait Blend: Copy {
    fn blend(self, other: Self, t: f64) -> Self;
}

impl Blend for f64 {
    fn blend(self, other: f64, t: f64) -> f64 {
        self + (other - self) * t
    }
}

impl Blend for Rgb {
    fn blend(self, other: Rgb, t: f64) -> Rgb {
        self.lerp(other, t)
    }
}

fn paint<T: Blend>(p: &Paint<T>, s: f64, t: f64, seed: u64) -> T {
    match *p {
        Paint::Constant { value } => value,
        Paint::Checker { a, b, cells } => {
            let cx = (s * cells as f64) as usize;
            let cy = (t * cells as f64) as usize;
            if (cx + cy) % 2 == 0 {
                a
            } else {
                b
            }
        }
        Paint::Gradient { from, to, axis } => from.blend(to, if axis == Axis::X { s } else { t }),
        Paint::Noise { a, b, scale } => a.blend(b, value_noise(s * scale, t * scale, seed).0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeightfieldParams {
    /// Peak-to-peak height of the surface in `[-1, 1]²` units.
    pub amplitude: f64,
    /// Noise lattice cells across the image.
    pub frequency: f64,
    pub octaves: u32,
}

impl Default for HeightfieldParams {
    fn default() -> Self {
        HeightfieldParams {
            amplitude: 0.4,
            frequency: 3.0,
            octaves: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub resolution: usize,
    pub seed: u64,
    pub albedo: Paint<Rgb>,
    pub roughness: Paint<f64>,
    pub f0: Paint<f64>,
    #[serde(default)]
    pub heightfield: HeightfieldParams,
}

impl SceneSpec {
    /// Uniform gray sphere, the default test subject.
    pub fn sphere(resolution: usize, albedo: f64, roughness: f64, f0: f64) -> Self {
        SceneSpec {
            kind: SceneKind::Sphere,
            resolution,
            seed: 0,
            albedo: Paint::Constant {
                value: Rgb::splat(albedo),
            },
            roughness: Paint::Constant { value: roughness },
            f0: Paint::Constant { value: f0 },
            heightfield: HeightfieldParams::default(),
        }
    }

    pub fn heightfield(resolution: usize, seed: u64) -> Self {
        SceneSpec {
            kind: SceneKind::Heightfield,
            resolution,
            seed,
            albedo: Paint::Noise {
                a: Rgb::new(0.2, 0.3, 0.6),
                b: Rgb::new(0.9, 0.7, 0.4),
                scale: 5.0,
            },
            roughness: Paint::Gradient {
                from: 0.2,
                to: 0.8,
                axis: Axis::X,
            },
            f0: Paint::Constant { value: 0.04 },
            heightfield: HeightfieldParams::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, SceneError> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene specs always serialize")
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.resolution < MIN_RESOLUTION {
            return Err(SceneError::Resolution(self.resolution));
        }
        self.albedo.check()?;
        self.roughness.check()?;
        self.f0.check()?;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !self.albedo.endpoints().iter().all(|c| c.to_array().into_iter().all(unit)) {
            return Err(SceneError::Range {
                map: "albedo",
                range: "[0, 1]",
            });
        }
        if !self.roughness.endpoints().iter().all(|&r| r > 0.0 && r <= 1.0) {
            return Err(SceneError::Range {
                map: "roughness",
                range: "(0, 1]",
            });
        }
        if !self.f0.endpoints().into_iter().all(unit) {
            return Err(SceneError::Range {
                map: "f0",
                range: "[0, 1]",
            });
        }
        let hf = &self.heightfield;
        if !(hf.amplitude.is_finite() && hf.amplitude >= 0.0) {
            return Err(SceneError::Heightfield("amplitude must be finite and non-negative"));
        }
        if !(hf.frequency.is_finite() && hf.frequency > 0.0) {
            return Err(SceneError::Heightfield("frequency must be positive"));
        }
        if hf.octaves == 0 || hf.octaves > 8 {
            return Err(SceneError::Heightfield("octaves must be in 1..=8"));
        }
        Ok(())
    }
}

// Per-map seed salts so the albedo and height noise are decorrelated.
const SALT_ALBEDO: u64 = 0x9e37_79b9_7f4a_7c15;
const SALT_ROUGHNESS: u64 = 0xc2b2_ae3d_27d4_eb4f;
const SALT_F0: u64 = 0x1656_67b1_9e37_79f9;
const SALT_HEIGHT: u64 = 0x27d4_eb2f_1656_67c5;

pub fn generate(spec: &SceneSpec) -> Result<IntrinsicBundle, SceneError> {
    spec.validate()?;
    let res = spec.resolution;
    let coord = |i: usize| (i as f64 + 0.5) / res as f64;
    let geometry = Image::par_from_fn(res, res, |x, y| {
        let u = 2.0 * coord(x) - 1.0;
        let v = 1.0 - 2.0 * coord(y);
        match spec.kind {
            SceneKind::Sphere => {
                let r2 = u * u + v * v;
                if r2 < 1.0 {
                    (Vector3::new(u, v, (1.0 - r2).sqrt()), true)
                } else {
                    (Vector3::z(), false)
                }
            }
            SceneKind::Heightfield => {
                let (_, du, dv) = height(&spec.heightfield, u, v, spec.seed ^ SALT_HEIGHT);
                (Vector3::new(-du, -dv, 1.0).normalize(), true)
            }
        }
    });
    let normal = geometry.map(|g| g.0);
    let mask = geometry.map(|g| g.1);
    let albedo = Image::par_from_fn(res, res, |x, y| {
        paint(&spec.albedo, coord(x), coord(y), spec.seed ^ SALT_ALBEDO)
    });
    let roughness = Image::par_from_fn(res, res, |x, y| {
        paint(&spec.roughness, coord(x), coord(y), spec.seed ^ SALT_ROUGHNESS)
    });
    let f0 = Image::par_from_fn(res, res, |x, y| paint(&spec.f0, coord(x), coord(y), spec.seed ^ SALT_F0));
    Ok(IntrinsicBundle::new(normal, albedo, roughness, f0, mask).expect("maps share one resolution"))
}

/// Height `z = f(u, v)` and its partial derivatives. Octaves double the
/// frequency and halve the amplitude.
fn height(p: &HeightfieldParams, u: f64, v: f64, seed: u64) -> (f64, f64, f64) {
    let mut z = 0.0;
    let mut du = 0.0;
    let mut dv = 0.0;
    let mut freq = p.frequency * 0.5;
    let mut amp = p.amplitude;
    // Shift so the domain [-1, 1] starts at lattice origin.
    for octave in 0..p.octaves {
        let (n, nx, ny) = value_noise((u + 1.0) * freq, (v + 1.0) * freq, seed.wrapping_add(octave as u64));
        z += amp * n;
        du += amp * freq * nx;
        dv += amp * freq * ny;
        freq *= 2.0;
        amp *= 0.5;
    }
    (z, du, dv)
}

fn hash2(ix: i64, iy: i64, seed: u64) -> f64 {
    // SplitMix64 finalizer over the packed lattice coordinates.
    let mut h = seed
        .wrapping_add((ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add((iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f));
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> (f64, f64) {
    let t2 = t * t;
    (
        t * t2 * (t * (t * 6.0 - 15.0) + 10.0),
        30.0 * t2 * (t - 1.0) * (t - 1.0),
    )
}

/// Value noise in `[0, 1)` with its gradient.
pub fn value_noise(x: f64, y: f64, seed: u64) -> (f64, f64, f64) {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (x - fx, y - fy);
    let a = hash2(ix, iy, seed);
    let b = hash2(ix + 1, iy, seed);
    let c = hash2(ix, iy + 1, seed);
    let d = hash2(ix + 1, iy + 1, seed);
    let (sx, dsx) = fade(tx);
    let (sy, dsy) = fade(ty);
    let k = a - b - c + d;
    let value = a + (b - a) * sx + (c - a) * sy + k * sx * sy;
    let gx = dsx * ((b - a) + k * sy);
    let gy = dsy * ((c - a) + k * sx);
    (value, gx, gy)
}

/// Procedural outdoor sky: a blue gradient above a dim ground, plus a
/// bright sun whose position follows `seed`.
pub fn sky_env(height: usize, seed: u64) -> EnvMap {
    let az = hash2(seed as i64, 1, 0x5eed) * std::f64::consts::TAU;
    let el = 0.2 + 0.9 * hash2(seed as i64, 2, 0x5eed);
    let sun = Vector3::new(el.cos() * az.sin(), el.sin(), -el.cos() * az.cos());
    EnvMap::from_fn(height, |d| {
        let y = d.y();
        let base = if y >= 0.0 {
            Rgb::new(0.35, 0.5, 0.9).lerp(Rgb::new(0.9, 0.95, 1.0), 1.0 - y)
        } else {
            Rgb::new(0.25, 0.2, 0.15) * (1.0 + y * 0.5)
        };
        let s = d.as_vector().dot(&sun).max(0.0);
        let glow = s.powi(64) * 30.0 + s.powi(8) * 0.8;
        base + Rgb::new(1.0, 0.9, 0.7) * glow
    })
    .expect("sky radiance is finite and non-negative")
}
