//! Lambertian diffuse plus Cook-Torrance specular reflectance.
//!
//! The microfacet terms are fixed as:
//!
//! * `D`: GGX / Trowbridge-Reitz, with the roughness `α` used directly as the
//!   distribution width (no perceptual squaring).
//! * `G`: separable Smith with the Schlick-GGX `G1(x) = x / (x(1 - k) + k)`,
//!   `k = α / 2`.
//! * `F`: Schlick, `f0 + (1 - f0)(1 - ⟨v·h⟩)^5`, with a scalar `f0`.
//!
//! All dot products are clamped to `[0, 1]`. The specular denominator
//! `4⟨n·l⟩⟨n·v⟩` is floored at [`SPECULAR_DENOM_FLOOR`].

use std::f64::consts::{FRAC_1_PI, PI};

use nalgebra::Vector3;
use thiserror::Error;

use crate::color::Rgb;

/// Lower bound applied to roughness when a [`Material`] is built.
pub const ROUGHNESS_FLOOR: f64 = 1e-3;

/// Floor on `4⟨n·l⟩⟨n·v⟩`.
pub const SPECULAR_DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrdfError {
    #[error("roughness must be in (0, 1], got {0}")]
    Roughness(f64),
    #[error("fresnel reflectivity f0 must be in [0, 1], got {0}")]
    Fresnel(f64),
    #[error("albedo components must be in [0, 1], got ({}, {}, {})", .0.r, .0.g, .0.b)]
    Albedo(Rgb),
    #[error("cannot normalize a zero-length or non-finite vector")]
    DegenerateDirection,
}

/// Unit 3-vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction(Vector3<f64>);

impl Direction {
    pub const UP: Direction = Direction(Vector3::new(0.0, 1.0, 0.0));
    /// The orthographic camera looks down `-Z`, so the view vector is `+Z`.
    pub const VIEW: Direction = Direction(Vector3::new(0.0, 0.0, 1.0));

    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, BrdfError> {
        Self::normalize(Vector3::new(x, y, z))
    }

    pub fn normalize(v: Vector3<f64>) -> Result<Self, BrdfError> {
        let norm = v.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(BrdfError::DegenerateDirection);
        }
        Ok(Direction(v / norm))
    }

    /// Wraps a vector the caller already knows to be unit length.
    pub(crate) fn from_unit(v: Vector3<f64>) -> Self {
        Direction(v)
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        self.0.dot(&other.0)
    }

    /// Dot product clamped to `[0, 1]`.
    pub fn cdot(&self, other: &Direction) -> f64 {
        clamp01(self.dot(other))
    }

    /// Mirror reflection of `self` about `normal`.
    pub fn reflect(&self, normal: &Direction) -> Direction {
        let n = normal.0;
        Direction(2.0 * self.0.dot(&n) * n - self.0)
    }
}

impl From<Direction> for Vector3<f64> {
    fn from(d: Direction) -> Self {
        d.0
    }
}

/// Surface reflectance parameters for one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    albedo: Rgb,
    roughness: f64,
    f0: f64,
}

impl Material {
    /// Validates ranges and applies the roughness floor.
    pub fn new(albedo: Rgb, roughness: f64, f0: f64) -> Result<Self, BrdfError> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(in_unit(albedo.r) && in_unit(albedo.g) && in_unit(albedo.b)) {
            return Err(BrdfError::Albedo(albedo));
        }
        if !(roughness > 0.0 && roughness <= 1.0) {
            return Err(BrdfError::Roughness(roughness));
        }
        if !in_unit(f0) {
            return Err(BrdfError::Fresnel(f0));
        }
        Ok(Material {
            albedo,
            roughness: roughness.max(ROUGHNESS_FLOOR),
            f0,
        })
    }

    pub fn albedo(&self) -> Rgb {
        self.albedo
    }

    pub fn roughness(&self) -> f64 {
        self.roughness
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }
}

#[inline]
pub(crate) fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

fn check_roughness(roughness: f64) -> Result<(), BrdfError> {
    if roughness > 0.0 && roughness.is_finite() {
        Ok(())
    } else {
        Err(BrdfError::Roughness(roughness))
    }
}

/// Lambertian term `σ / π`.
pub fn eval_diffuse(material: &Material) -> Rgb {
    material.albedo * FRAC_1_PI
}

/// GGX normal distribution `α² / (π ((n·h)²(α² - 1) + 1)²)`.
pub fn ggx_distribution(n: &Direction, h: &Direction, roughness: f64) -> Result<f64, BrdfError> {
    check_roughness(roughness)?;
    Ok(ggx_d(n.cdot(h), roughness * roughness))
}

/// Separable Smith shadowing-masking `G1(⟨n·v⟩) G1(⟨n·l⟩)`.
pub fn smith_geometry(
    n: &Direction,
    v: &Direction,
    l: &Direction,
    roughness: f64,
) -> Result<f64, BrdfError> {
    check_roughness(roughness)?;
    let k = 0.5 * roughness;
    Ok(smith_g1(n.cdot(v), k) * smith_g1(n.cdot(l), k))
}

/// Schlick's Fresnel approximation.
pub fn schlick_fresnel(v: &Direction, h: &Direction, f0: f64) -> f64 {
    schlick(v.cdot(h), f0)
}

/// Cook-Torrance specular lobe `D G F / (4⟨n·l⟩⟨n·v⟩)`. Zero when either
/// `v` or `l` lies in the lower hemisphere of `n`.
///
/// Evaluated so that swapping `v` and `l` gives a bit-identical result.
pub fn eval_specular(n: &Direction, v: &Direction, l: &Direction, material: &Material) -> f64 {
    let n_dot_l = n.dot(l);
    let n_dot_v = n.dot(v);
    if n_dot_l <= 0.0 || n_dot_v <= 0.0 {
        return 0.0;
    }
    let sum = v.0 + l.0;
    let len2 = sum.norm_squared();
    if len2 <= f64::MIN_POSITIVE {
        return 0.0;
    }
    let n_dot_h = n.0.dot(&sum) / len2.sqrt();
    let v_dot_h = half_angle_cos(v.dot(l));
    let lobe = SpecularLobe::new(material.roughness, material.f0);
    lobe.eval(clamp01(n_dot_l), clamp01(n_dot_v), clamp01(n_dot_h), v_dot_h)
}

/// Full BRDF `f_d + f_s`; the scalar specular is added to every channel.
pub fn eval_brdf(n: &Direction, v: &Direction, l: &Direction, material: &Material) -> Rgb {
    let spec = eval_specular(n, v, l, material);
    eval_diffuse(material) + Rgb::splat(spec)
}

/// `⟨v·h⟩` for `h = normalize(v + l)`, written in terms of `v·l` only so the
/// value is symmetric in `v` and `l`.
#[inline]
pub(crate) fn half_angle_cos(v_dot_l: f64) -> f64 {
    clamp01((0.5 * (1.0 + v_dot_l)).max(0.0).sqrt())
}

#[inline]
pub(crate) fn ggx_d(n_dot_h: f64, alpha2: f64) -> f64 {
    let t = n_dot_h * n_dot_h * (alpha2 - 1.0) + 1.0;
    alpha2 / (PI * t * t)
}

#[inline]
pub(crate) fn smith_g1(x: f64, k: f64) -> f64 {
    x / (x * (1.0 - k) + k)
}

#[inline]
pub(crate) fn schlick(v_dot_h: f64, f0: f64) -> f64 {
    let m = 1.0 - v_dot_h;
    let m2 = m * m;
    f0 + (1.0 - f0) * (m2 * m2 * m)
}

/// Per-surface-point constants of the specular lobe, hoisted out of the
/// per-light loop by the renderer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SpecularLobe {
    alpha2: f64,
    k: f64,
    f0: f64,
}

impl SpecularLobe {
    pub(crate) fn new(roughness: f64, f0: f64) -> Self {
        let alpha = roughness.max(ROUGHNESS_FLOOR);
        SpecularLobe {
            alpha2: alpha * alpha,
            k: 0.5 * alpha,
            f0,
        }
    }

    /// All cosines already clamped to `[0, 1]`.
    #[inline]
    pub(crate) fn eval(&self, n_dot_l: f64, n_dot_v: f64, n_dot_h: f64, v_dot_h: f64) -> f64 {
        if n_dot_l <= 0.0 || n_dot_v <= 0.0 {
            return 0.0;
        }
        let d = ggx_d(n_dot_h, self.alpha2);
        let g = smith_g1(n_dot_v, self.k) * smith_g1(n_dot_l, self.k);
        let f = schlick(v_dot_h, self.f0);
        d * g * f / (4.0 * (n_dot_l * n_dot_v)).max(SPECULAR_DENOM_FLOOR)
    }
}
