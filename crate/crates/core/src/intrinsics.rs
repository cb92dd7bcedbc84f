//! Albedo recovery by shading division and intrinsic-bundle validation.

use thiserror::Error;

use crate::color::Rgb;
use crate::image::Image;
use crate::renderer::IntrinsicBundle;

pub const DEFAULT_SHADING_EPS: f64 = 1e-3;
pub const ALBEDO_MAX: f64 = 1.0;
pub const NORMAL_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntrinsicsError {
    #[error("render is {render:?} but shading is {shading:?}")]
    ResolutionMismatch {
        render: (usize, usize),
        shading: (usize, usize),
    },
    #[error("eps must be positive and finite")]
    Eps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlbedoEstimate {
    pub albedo: Image<Rgb>,
    /// Pixels where some channel of the shading fell below `eps`, or the
    /// quotient was not finite.
    pub flagged: Image<bool>,
}

/// `π · render / max(shading, eps)` per channel, clamped to `[0, 1]`.
pub fn recover_albedo(
    diffuse_render: &Image<Rgb>,
    shading: &Image<Rgb>,
    eps: f64,
) -> Result<AlbedoEstimate, IntrinsicsError> {
    if !diffuse_render.same_dims(shading) {
        return Err(IntrinsicsError::ResolutionMismatch {
            render: diffuse_render.dims(),
            shading: shading.dims(),
        });
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(IntrinsicsError::Eps);
    }
    let (w, h) = diffuse_render.dims();
    let per_pixel = Image::par_from_fn(w, h, |x, y| {
        let r = diffuse_render.get(x, y).to_array();
        let s = shading.get(x, y).to_array();
        let mut flagged = false;
        let mut out = [0.0; 3];
        for c in 0..3 {
            // NaN shading fails this comparison and is flagged too.
            if !(s[c] >= eps) {
                flagged = true;
            }
            let q = std::f64::consts::PI * r[c] / s[c].max(eps);
            if q.is_finite() {
                out[c] = q.clamp(0.0, ALBEDO_MAX);
            } else {
                flagged = true;
            }
        }
        (Rgb::from_array(out), flagged)
    });
    Ok(AlbedoEstimate {
        albedo: per_pixel.map(|p| p.0),
        flagged: per_pixel.map(|p| p.1),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    /// Pixel with the largest violation, if any.
    pub worst: Option<(usize, usize)>,
    /// Size of the largest violation; 0 when the check passes.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub checks: Vec<Check>,
}

impl Diagnostics {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Distance of `v` from `[lo, hi]` (or `(lo, hi]` when `open_lo`); NaN
/// counts as infinitely far.
fn range_violation(v: f64, lo: f64, hi: f64, open_lo: bool) -> f64 {
    if v.is_nan() {
        return f64::INFINITY;
    }
    if v > hi {
        v - hi
    } else if v < lo || (open_lo && v == lo) {
        // An open bound at `lo` itself still has to register.
        (lo - v).max(f64::MIN_POSITIVE)
    } else {
        0.0
    }
}

fn scan<T>(name: &'static str, img: &Image<T>, mask: &Image<bool>, f: impl Fn(&T) -> f64) -> Check {
    let mut worst = None;
    let mut magnitude = 0.0;
    for (x, y, v) in img.enumerate() {
        if !*mask.get(x, y) {
            continue;
        }
        let m = f(v);
        if m > magnitude {
            magnitude = m;
            worst = Some((x, y));
        }
    }
    Check {
        name,
        pass: worst.is_none(),
        worst,
        magnitude,
    }
}

/// Checks every foreground pixel: unit normals, attribute ranges and
/// finiteness. Never fails; each finding is reported as a check.
pub fn validate_bundle(bundle: &IntrinsicBundle) -> Diagnostics {
    if let Err(crate::renderer::RenderError::ResolutionMismatch { expected, got, .. }) = bundle.check_resolution() {
        return Diagnostics {
            checks: vec![Check {
                name: "resolution",
                pass: false,
                worst: None,
                magnitude: (expected.0 as f64 - got.0 as f64).abs() + (expected.1 as f64 - got.1 as f64).abs(),
            }],
        };
    }
    let mask = &bundle.mask;
    let resolution = Check {
        name: "resolution",
        pass: true,
        worst: None,
        magnitude: 0.0,
    };
    let unit = scan("unit_normals", &bundle.normal, mask, |n| {
        let dev = (n.norm() - 1.0).abs();
        if dev.is_nan() {
            f64::INFINITY
        } else if dev > NORMAL_TOLERANCE {
            dev
        } else {
            0.0
        }
    });
    let albedo = scan("albedo_range", &bundle.albedo, mask, |c| {
        c.to_array()
            .into_iter()
            .map(|v| range_violation(v, 0.0, 1.0, false))
            .fold(0.0, f64::max)
    });
    let roughness = scan("roughness_range", &bundle.roughness, mask, |&r| {
        range_violation(r, 0.0, 1.0, true)
    });
    let f0 = scan("f0_range", &bundle.f0, mask, |&f| range_violation(f, 0.0, 1.0, false));
    let finite = {
        let normals = scan("finite", &bundle.normal, mask, |n| {
            if n.iter().all(|v| v.is_finite()) { 0.0 } else { 1.0 }
        });
        let albedo = scan("finite", &bundle.albedo, mask, |c| if c.is_finite() { 0.0 } else { 1.0 });
        let rough = scan("finite", &bundle.roughness, mask, |r| if r.is_finite() { 0.0 } else { 1.0 });
        let f0 = scan("finite", &bundle.f0, mask, |f| if f.is_finite() { 0.0 } else { 1.0 });
        [normals, albedo, rough, f0]
            .into_iter()
            .find(|c| !c.pass)
            .unwrap_or(Check {
                name: "finite",
                pass: true,
                worst: None,
                magnitude: 0.0,
            })
    };
    Diagnostics {
        checks: vec![resolution, unit, albedo, roughness, f0, finite],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlight::{convolve_phong, diffuse_shading, EnvMap};
    use crate::renderer::render_diffuse;
    use crate::scenegen::{generate, SceneSpec};
    use proptest::prelude::*;

    #[test]
    fn furnace_round_trip() {
        let bundle = generate(&SceneSpec::sphere(32, 0.5, 0.5, 0.0)).unwrap();
        let env = EnvMap::uniform(32, Rgb::WHITE);
        let render = render_diffuse(&bundle, &env).unwrap();
        let conv = convolve_phong(&env, &[1], 64, 128).unwrap();
        let shading = diffuse_shading(&conv, &bundle.normal).unwrap();
        let est = recover_albedo(&render, &shading, DEFAULT_SHADING_EPS).unwrap();
        for (x, y, a) in est.albedo.enumerate() {
            if *bundle.mask.get(x, y) {
                assert!((a.g - 0.5).abs() <= 1e-3, "{a:?}");
                assert!(!est.flagged.get(x, y));
            }
        }
    }

    #[test]
    fn dark_shading_is_flagged_and_finite() {
        let render = Image::from_fn(3, 1, |x, _| Rgb::splat(x as f64));
        let shading = Image::from_vec(
            3,
            1,
            vec![Rgb::BLACK, Rgb::splat(1e-9), Rgb::new(1.0, f64::NAN, 0.0)],
        )
        .unwrap();
        let est = recover_albedo(&render, &shading, DEFAULT_SHADING_EPS).unwrap();
        assert!(est.flagged.pixels().iter().all(|&f| f));
        for a in est.albedo.pixels() {
            assert!(a.is_finite());
            assert!(a.min_component() >= 0.0 && a.max_component() <= ALBEDO_MAX);
        }
    }

    #[test]
    fn errors() {
        let a = Image::filled(2, 2, Rgb::WHITE);
        let b = Image::filled(2, 3, Rgb::WHITE);
        assert!(matches!(
            recover_albedo(&a, &b, 1e-3),
            Err(IntrinsicsError::ResolutionMismatch { .. })
        ));
        assert_eq!(recover_albedo(&a, &a, 0.0), Err(IntrinsicsError::Eps));
    }

    #[test]
    fn generated_bundles_validate() {
        for spec in [SceneSpec::sphere(32, 0.5, 0.5, 0.04), SceneSpec::heightfield(32, 9)] {
            let d = validate_bundle(&generate(&spec).unwrap());
            assert!(d.all_pass(), "{d:?}");
        }
    }

    #[test]
    fn broken_bundles_are_reported() {
        let mut b = generate(&SceneSpec::sphere(32, 0.5, 0.5, 0.04)).unwrap();
        b.normal = b.normal.map(|n| n * 2.0);
        let d = validate_bundle(&b);
        let c = d.get("unit_normals").unwrap();
        assert!(!c.pass);
        assert!((c.magnitude - 1.0).abs() < 1e-12);

        let mut b = generate(&SceneSpec::sphere(32, 0.5, 0.5, 0.04)).unwrap();
        b.roughness.set(16, 16, 0.0);
        let d = validate_bundle(&b);
        let c = d.get("roughness_range").unwrap();
        assert!(!c.pass);
        assert_eq!(c.worst, Some((16, 16)));
        assert!(d.get("albedo_range").unwrap().pass);

        // Background pixels are ignored.
        let mut b = generate(&SceneSpec::sphere(32, 0.5, 0.5, 0.04)).unwrap();
        b.f0.set(0, 0, f64::NAN);
        assert!(validate_bundle(&b).all_pass());
        b.f0.set(16, 16, f64::NAN);
        let d = validate_bundle(&b);
        assert!(!d.get("f0_range").unwrap().pass);
        assert!(!d.get("finite").unwrap().pass);

        b.mask = Image::filled(3, 3, true);
        assert!(!validate_bundle(&b).get("resolution").unwrap().pass);
    }

    proptest! {
        #[test]
        fn homogeneous_in_common_scale(
            r in prop::collection::vec(0.0f64..4.0, 12),
            s in prop::collection::vec(0.0f64..4.0, 12),
            k in -20i32..20,
            c in 0.01f64..100.0,
        ) {
            let to_img = |v: &[f64]| Image::from_fn(2, 2, |x, y| {
                let i = 3 * (y * 2 + x);
                Rgb::new(v[i], v[i + 1], v[i + 2])
            });
            let (ri, si) = (to_img(&r), to_img(&s));
            let base = recover_albedo(&ri, &si, 1e-3).unwrap();
            // Powers of two scale without rounding, so the result is exact.
            let p = 2f64.powi(k);
            let scaled = recover_albedo(&ri.map(|v| *v * p), &si.map(|v| *v * p), 1e-3 * p).unwrap();
            prop_assert_eq!(&base.albedo, &scaled.albedo);
            let scaled = recover_albedo(&ri.map(|v| *v * c), &si.map(|v| *v * c), 1e-3 * c).unwrap();
            for (a, b) in base.albedo.pixels().iter().zip(scaled.albedo.pixels()) {
                for (u, v) in a.to_array().into_iter().zip(b.to_array()) {
                    prop_assert!((u - v).abs() <= 1e-12);
                }
            }
        }
    }
}
