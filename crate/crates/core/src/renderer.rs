//! Forward image formation under distant lighting.
//!
//! Every foreground pixel sees the full environment through a texel sum
//! `Σ f(v, l) E(l) ⟨n·l⟩ ω(l)`; there is no visibility term, so the result
//! is unshadowed local illumination. The camera is orthographic with one
//! view vector shared by all pixels. Background pixels are exactly zero.

use std::f64::consts::FRAC_1_PI;

use nalgebra::Vector3;
use thiserror::Error;

use crate::brdf::{clamp01, half_angle_cos, Direction, SpecularLobe};
use crate::color::Rgb;
use crate::envlight::{dir_from_angles, solid_angles, EnvMap};
use crate::image::Image;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("bundle map `{map}` is {got:?}, expected {expected:?}")]
    ResolutionMismatch {
        map: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("texel stride must be at least 1")]
    Stride,
}

/// Per-pixel surface attributes: normal, albedo, roughness, Fresnel
/// reflectivity and foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct IntrinsicBundle {
    pub normal: Image<Vector3<f64>>,
    pub albedo: Image<Rgb>,
    pub roughness: Image<f64>,
    pub f0: Image<f64>,
    pub mask: Image<bool>,
}

impl IntrinsicBundle {
    pub fn new(
        normal: Image<Vector3<f64>>,
        albedo: Image<Rgb>,
        roughness: Image<f64>,
        f0: Image<f64>,
        mask: Image<bool>,
    ) -> Result<Self, RenderError> {
        let bundle = IntrinsicBundle {
            normal,
            albedo,
            roughness,
            f0,
            mask,
        };
        bundle.check_resolution()?;
        Ok(bundle)
    }

    pub fn width(&self) -> usize {
        self.normal.width()
    }

    pub fn height(&self) -> usize {
        self.normal.height()
    }

    pub fn check_resolution(&self) -> Result<(), RenderError> {
        let expected = self.normal.dims();
        let dims = [
            ("albedo", self.albedo.dims()),
            ("roughness", self.roughness.dims()),
            ("f0", self.f0.dims()),
            ("mask", self.mask.dims()),
        ];
        for (map, got) in dims {
            if got != expected {
                return Err(RenderError::ResolutionMismatch { map, expected, got });
            }
        }
        Ok(())
    }
}

/// Diffuse, specular and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub diffuse: Image<Rgb>,
    pub specular: Image<Rgb>,
    pub pbr: Image<Rgb>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Merge `stride × stride` blocks of environment texels into a single
    /// light before rendering. Only meant for previews; 1 disables it.
    pub texel_stride: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { texel_stride: 1 }
    }
}

/// Distant lights as (direction, radiance × solid angle) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LightSamples {
    dirs: Vec<Vector3<f64>>,
    weights: Vec<Rgb>,
}

impl LightSamples {
    /// One light per environment texel center, weighted by `E ω`. Texels
    /// with zero energy are skipped; they would add exact zeros.
    pub fn from_env(env: &EnvMap) -> Self {
        Self::from_env_strided(env, 1).expect("stride 1 is valid")
    }

    pub fn from_env_strided(env: &EnvMap, stride: usize) -> Result<Self, RenderError> {
        if stride == 0 {
            return Err(RenderError::Stride);
        }
        let (h, w) = (env.height(), env.width());
        let table = solid_angles(h, w);
        let mut dirs = Vec::new();
        let mut weights = Vec::new();
        for by in (0..h).step_by(stride) {
            for bx in (0..w).step_by(stride) {
                let mut energy = Rgb::BLACK;
                let mut centroid = Vector3::zeros();
                for row in by..(by + stride).min(h) {
                    let omega = table.weight(row);
                    let theta = (row as f64 + 0.5) * std::f64::consts::PI / h as f64;
                    for col in bx..(bx + stride).min(w) {
                        let phi = (col as f64 + 0.5) * std::f64::consts::TAU / w as f64;
                        energy += env.texel(row, col) * omega;
                        centroid += dir_from_angles(theta, phi) * omega;
                    }
                }
                if energy == Rgb::BLACK {
                    continue;
                }
                dirs.push(centroid.normalize());
                weights.push(energy);
            }
        }
        Ok(LightSamples { dirs, weights })
    }

    /// A single directional light.
    pub fn directional(dir: &Direction, weight: Rgb) -> Self {
        LightSamples {
            dirs: vec![*dir.as_vector()],
            weights: vec![weight],
        }
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }
}

/// View-dependent quantities of each light, shared by every pixel.
struct PreparedLights<'a> {
    lights: &'a LightSamples,
    half: Vec<Vector3<f64>>,
    v_dot_h: Vec<f64>,
}

impl<'a> PreparedLights<'a> {
    fn new(lights: &'a LightSamples, view: &Direction) -> Self {
        let v = view.as_vector();
        let mut half = Vec::with_capacity(lights.len());
        let mut v_dot_h = Vec::with_capacity(lights.len());
        for l in &lights.dirs {
            let sum = v + l;
            let len = sum.norm();
            half.push(if len > 0.0 { sum / len } else { Vector3::zeros() });
            v_dot_h.push(half_angle_cos(v.dot(l)));
        }
        PreparedLights {
            lights,
            half,
            v_dot_h,
        }
    }

    /// Returns (diffuse, specular) radiance at one surface point.
    fn shade(&self, n: &Vector3<f64>, albedo: Rgb, roughness: f64, f0: f64, n_dot_v: f64) -> (Rgb, Rgb) {
        let lobe = SpecularLobe::new(roughness, f0);
        let mut irradiance = Rgb::BLACK;
        let mut specular = Rgb::BLACK;
        for (i, l) in self.lights.dirs.iter().enumerate() {
            let n_dot_l = n.dot(l);
            if n_dot_l <= 0.0 {
                continue;
            }
            let n_dot_l = clamp01(n_dot_l);
            let w = self.lights.weights[i] * n_dot_l;
            irradiance += w;
            if n_dot_v > 0.0 {
                let n_dot_h = clamp01(n.dot(&self.half[i]));
                specular += w * lobe.eval(n_dot_l, n_dot_v, n_dot_h, self.v_dot_h[i]);
            }
        }
        (albedo * FRAC_1_PI * irradiance, specular)
    }
}

/// Renders a bundle under an arbitrary set of distant lights.
pub fn render_lights(
    bundle: &IntrinsicBundle,
    lights: &LightSamples,
    view: &Direction,
) -> Result<RenderOutput, RenderError> {
    bundle.check_resolution()?;
    let prepared = PreparedLights::new(lights, view);
    let v = view.as_vector();
    let (w, h) = bundle.normal.dims();
    let shaded = Image::par_from_fn(w, h, |x, y| {
        if !*bundle.mask.get(x, y) {
            return (Rgb::BLACK, Rgb::BLACK);
        }
        let n = bundle.normal.get(x, y);
        prepared.shade(
            n,
            *bundle.albedo.get(x, y),
            *bundle.roughness.get(x, y),
            *bundle.f0.get(x, y),
            clamp01(n.dot(v)),
        )
    });
    let diffuse = shaded.map(|p| p.0);
    let specular = shaded.map(|p| p.1);
    let pbr = shaded.map(|p| p.0 + p.1);
    Ok(RenderOutput {
        diffuse,
        specular,
        pbr,
    })
}

pub fn render_pbr_with(
    bundle: &IntrinsicBundle,
    env: &EnvMap,
    view: &Direction,
    options: &RenderOptions,
) -> Result<RenderOutput, RenderError> {
    let lights = LightSamples::from_env_strided(env, options.texel_stride)?;
    render_lights(bundle, &lights, view)
}

/// Diffuse, specular and PBR renders; `pbr` is the exact per-pixel sum.
pub fn render_pbr(
    bundle: &IntrinsicBundle,
    env: &EnvMap,
    view: &Direction,
) -> Result<RenderOutput, RenderError> {
    render_pbr_with(bundle, env, view, &RenderOptions::default())
}

/// `(σ/π) Σ E(l) ⟨n·l⟩ ω(l)`.
pub fn render_diffuse(bundle: &IntrinsicBundle, env: &EnvMap) -> Result<Image<Rgb>, RenderError> {
    bundle.check_resolution()?;
    let lights = LightSamples::from_env(env);
    let (w, h) = bundle.normal.dims();
    Ok(Image::par_from_fn(w, h, |x, y| {
        if !*bundle.mask.get(x, y) {
            return Rgb::BLACK;
        }
        let n = bundle.normal.get(x, y);
        let mut irradiance = Rgb::BLACK;
        for (l, wgt) in lights.dirs.iter().zip(&lights.weights) {
            let n_dot_l = n.dot(l);
            if n_dot_l > 0.0 {
                irradiance += *wgt * clamp01(n_dot_l);
            }
        }
        *bundle.albedo.get(x, y) * FRAC_1_PI * irradiance
    }))
}

/// `Σ f_s(v, l) E(l) ⟨n·l⟩ ω(l)`.
pub fn render_specular(
    bundle: &IntrinsicBundle,
    env: &EnvMap,
    view: &Direction,
) -> Result<Image<Rgb>, RenderError> {
    Ok(render_pbr(bundle, env, view)?.specular)
}

/// Re-renders the surface attributes under a target environment.
pub fn relight(
    bundle: &IntrinsicBundle,
    env_tgt: &EnvMap,
    view: &Direction,
) -> Result<Image<Rgb>, RenderError> {
    Ok(render_pbr(bundle, env_tgt, view)?.pbr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brdf::{eval_brdf, Material};
    use crate::envlight::{texel_to_dir, DEFAULT_ENV_HEIGHT};

    fn sphere(res: usize, albedo: Rgb, roughness: f64, f0: f64) -> IntrinsicBundle {
        let normal = Image::from_fn(res, res, |x, y| {
            let u = 2.0 * (x as f64 + 0.5) / res as f64 - 1.0;
            let v = 1.0 - 2.0 * (y as f64 + 0.5) / res as f64;
            let r2 = u * u + v * v;
            if r2 < 1.0 {
                Vector3::new(u, v, (1.0 - r2).sqrt())
            } else {
                Vector3::zeros()
            }
        });
        let mask = normal.map(|n| n.norm_squared() > 0.0);
        IntrinsicBundle::new(
            normal,
            Image::filled(res, res, albedo),
            Image::filled(res, res, roughness),
            Image::filled(res, res, f0),
            mask,
        )
        .unwrap()
    }

    fn sky(height: usize) -> EnvMap {
        EnvMap::from_fn(height, |d| {
            let sun = Vector3::new(-0.4, 0.6, 0.7).normalize();
            let s = d.as_vector().dot(&sun).max(0.0).powi(6);
            Rgb::new(0.3 + 4.0 * s, 0.35 + 3.0 * s, 0.45 + 0.3 * d.y().max(0.0))
        })
        .unwrap()
    }

    #[test]
    fn furnace_diffuse() {
        let b = sphere(32, Rgb::splat(0.5), 0.5, 0.0);
        let env = EnvMap::uniform(DEFAULT_ENV_HEIGHT, Rgb::WHITE);
        let img = render_diffuse(&b, &env).unwrap();
        for (x, y, c) in img.enumerate() {
            if *b.mask.get(x, y) {
                assert!((c.g - 0.5).abs() <= 0.005, "{c:?}");
            } else {
                assert_eq!(*c, Rgb::BLACK);
            }
        }
    }

    #[test]
    fn black_env_is_black() {
        let b = sphere(16, Rgb::splat(0.8), 0.3, 0.5);
        let env = EnvMap::uniform(8, Rgb::BLACK);
        let out = render_pbr(&b, &env, &Direction::VIEW).unwrap();
        assert!(out.pbr.pixels().iter().all(|c| *c == Rgb::BLACK));
        assert!(relight(&b, &env, &Direction::VIEW)
            .unwrap()
            .pixels()
            .iter()
            .all(|c| *c == Rgb::BLACK));
    }

    #[test]
    fn upper_hemisphere_constant_env() {
        // n = +Z sees the z > 0 half of the sphere. Quadrature oracle at one
        // pixel: Σ_{texels} E ⟨n·l⟩ ω computed independently.
        let env = EnvMap::from_fn(32, |d| {
            if d.z() > 0.0 {
                Rgb::splat(2.0)
            } else {
                Rgb::BLACK
            }
        })
        .unwrap();
        let b = IntrinsicBundle::new(
            Image::filled(1, 1, Vector3::new(0.0, 0.0, 1.0)),
            Image::filled(1, 1, Rgb::splat(0.4)),
            Image::filled(1, 1, 0.5),
            Image::filled(1, 1, 0.0),
            Image::filled(1, 1, true),
        )
        .unwrap();
        let got = render_diffuse(&b, &env).unwrap().get(0, 0).r;
        let table = solid_angles(32, 64);
        let mut sum = 0.0;
        for row in 0..32 {
            for col in 0..64 {
                let l = texel_to_dir(row, col, 32, 64).unwrap();
                sum += env.texel(row, col).r * l.z().max(0.0) * table.weight(row);
            }
        }
        assert!((got - 0.4 / std::f64::consts::PI * sum).abs() < 1e-12);
        assert!((got - 0.4 * 2.0).abs() < 0.01 * 0.8);
    }

    #[test]
    fn pbr_is_sum_of_parts() {
        let b = sphere(24, Rgb::new(0.7, 0.4, 0.2), 0.3, 0.04);
        let out = render_pbr(&b, &sky(16), &Direction::VIEW).unwrap();
        for ((d, s), p) in out
            .diffuse
            .pixels()
            .iter()
            .zip(out.specular.pixels())
            .zip(out.pbr.pixels())
        {
            assert_eq!(*d + *s, *p);
            assert!(p.r >= d.r && p.g >= d.g && p.b >= d.b);
        }
        let zero = sphere(24, Rgb::BLACK, 0.3, 0.0);
        let env = EnvMap::uniform(16, Rgb::WHITE);
        let out = render_pbr(&zero, &env, &Direction::VIEW).unwrap();
        // f0 = 0 still leaves Schlick's grazing term; σ = 0 removes diffuse.
        assert!(out.diffuse.pixels().iter().all(|c| *c == Rgb::BLACK));
    }

    #[test]
    fn specular_residue_with_zero_f0_is_small_at_normal_view() {
        // Single-pixel quadrature oracle: n = v, f0 = 0, uniform unit env.
        // ⟨v·h⟩ ≥ cos 45° on the upper hemisphere, so F ≤ (1 - 0.7071)^5.
        let b = IntrinsicBundle::new(
            Image::filled(1, 1, Vector3::new(0.0, 0.0, 1.0)),
            Image::filled(1, 1, Rgb::splat(0.5)),
            Image::filled(1, 1, 0.5),
            Image::filled(1, 1, 0.0),
            Image::filled(1, 1, true),
        )
        .unwrap();
        let env = EnvMap::uniform(32, Rgb::WHITE);
        let s = render_specular(&b, &env, &Direction::VIEW).unwrap();
        let bound = (1.0 - 0.5f64.sqrt()).powi(5);
        assert!(s.get(0, 0).r > 0.0);
        assert!(s.get(0, 0).r <= bound);
    }

    #[test]
    fn glossy_highlight_follows_reflection() {
        let b = sphere(33, Rgb::BLACK, 1e-3, 1.0);
        let (row, col) = (12, 40);
        let env = EnvMap::delta(32, row, col, Rgb::splat(1000.0)).unwrap();
        let light = texel_to_dir(row, col, 32, 64).unwrap();
        let spec = render_specular(&b, &env, &Direction::VIEW).unwrap();
        let (bx, by, _) = spec
            .enumerate()
            .max_by(|a, b| a.2.r.total_cmp(&b.2.r))
            .unwrap();
        // Oracle: the pixel whose mirror direction reflect(v, n) best
        // matches the light.
        let (ox, oy, _) = b
            .normal
            .enumerate()
            .filter(|(x, y, _)| *b.mask.get(*x, *y))
            .map(|(x, y, n)| {
                let n = Direction::normalize(*n).unwrap();
                (x, y, Direction::VIEW.reflect(&n).dot(&light))
            })
            .max_by(|a, b| a.2.total_cmp(&b.2))
            .unwrap();
        let dist = ((bx as f64 - ox as f64).powi(2) + (by as f64 - oy as f64).powi(2)).sqrt();
        assert!(dist <= 1.5, "highlight at ({bx},{by}), oracle ({ox},{oy})");
        let lit = spec.pixels().iter().filter(|c| c.r > 1e-3 * spec.get(bx, by).r).count();
        assert!(lit < 40, "highlight spread over {lit} pixels");
    }

    #[test]
    fn directional_light_matches_brdf() {
        let b = sphere(9, Rgb::new(0.6, 0.5, 0.4), 0.4, 0.3);
        let l = Direction::new(0.3, 0.4, 0.8).unwrap();
        let out = render_lights(&b, &LightSamples::directional(&l, Rgb::splat(2.0)), &Direction::VIEW)
            .unwrap();
        for (x, y, n) in b.normal.enumerate() {
            if !*b.mask.get(x, y) {
                continue;
            }
            let n = Direction::normalize(*n).unwrap();
            let m = Material::new(*b.albedo.get(x, y), 0.4, 0.3).unwrap();
            let expect = eval_brdf(&n, &Direction::VIEW, &l, &m) * (2.0 * n.cdot(&l));
            let got = out.pbr.get(x, y);
            assert!((expect.r - got.r).abs() <= 1e-12 * expect.r.max(1.0));
        }
    }

    #[test]
    fn linear_in_environment() {
        let b = sphere(20, Rgb::new(0.7, 0.4, 0.2), 0.35, 0.1);
        let e1 = sky(16);
        let e2 = EnvMap::from_fn(16, |d| Rgb::new(d.x().abs(), 0.2, (-d.y()).max(0.0))).unwrap();
        let v = Direction::VIEW;
        let sum = relight(&b, &e1.add(&e2), &v).unwrap();
        let a = relight(&b, &e1, &v).unwrap();
        let c = relight(&b, &e2, &v).unwrap();
        for ((s, x), y) in sum.pixels().iter().zip(a.pixels()).zip(c.pixels()) {
            let e = *x + *y;
            for (g, w) in s.to_array().into_iter().zip(e.to_array()) {
                assert!((g - w).abs() <= 1e-6 * w.abs().max(1e-12));
            }
        }
        let doubled = relight(&b, &e1.scaled(2.0), &v).unwrap();
        for (d, x) in doubled.pixels().iter().zip(a.pixels()) {
            assert_eq!(*d, *x * 2.0);
        }
    }

    #[test]
    fn mirrored_env_mirrors_render() {
        let res = 24;
        let b = sphere(res, Rgb::new(0.6, 0.5, 0.4), 0.3, 0.2);
        let env = sky(16);
        let (w, h) = (env.width(), env.height());
        let mirrored = EnvMap::new(Image::from_fn(w, h, |x, y| env.texel(y, w - 1 - x))).unwrap();
        let a = relight(&b, &env, &Direction::VIEW).unwrap();
        let m = relight(&b, &mirrored, &Direction::VIEW).unwrap();
        for y in 0..res {
            for x in 0..res {
                let p = a.get(x, y);
                let q = m.get(res - 1 - x, y);
                for (u, v) in p.to_array().into_iter().zip(q.to_array()) {
                    assert!((u - v).abs() <= 1e-5 * u.abs().max(1e-9));
                }
            }
        }
    }

    #[test]
    fn stride_preview_conserves_energy() {
        let env = sky(16);
        let full = LightSamples::from_env(&env);
        let coarse = LightSamples::from_env_strided(&env, 4).unwrap();
        assert!(coarse.len() < full.len());
        let total = |s: &LightSamples| s.weights.iter().fold(Rgb::BLACK, |a, w| a + *w);
        assert!((total(&full).r - total(&coarse).r).abs() < 1e-9);
        assert!(LightSamples::from_env_strided(&env, 0).is_err());
    }

    #[test]
    fn resolution_mismatch_is_reported() {
        let b = IntrinsicBundle::new(
            Image::filled(4, 4, Vector3::z()),
            Image::filled(4, 4, Rgb::WHITE),
            Image::filled(4, 3, 0.5),
            Image::filled(4, 4, 0.0),
            Image::filled(4, 4, true),
        );
        assert!(matches!(
            b,
            Err(RenderError::ResolutionMismatch { map: "roughness", .. })
        ));
    }
}
