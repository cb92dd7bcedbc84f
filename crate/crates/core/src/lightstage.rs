//! Synthetic light stage: a rig of distant point lights, one-light-at-a-time
//! (OLAT) image stacks, environment-to-rig projection and photometric stereo.
//!
//! OLAT images are stored per unit of rig weight: image `i` is the scene lit
//! by light `i` alone with radiance·steradian `light_weight` in every
//! channel. The default weight is 1, so a composite is `Σ w_i ⊙ image_i`.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::brdf::{clamp01, Direction};
use crate::color::Rgb;
use crate::envlight::{dir_from_angles, solid_angles, EnvMap};
use crate::image::Image;
use crate::renderer::{render_lights, IntrinsicBundle, LightSamples, RenderError};

pub const DEFAULT_RIG_SIZE: usize = 137;
pub const DEFAULT_SHADOW_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LightStageError {
    #[error("a rig needs at least 3 lights, got {0}")]
    TooFewLights(usize),
    #[error("expected {expected} entries, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("OLAT images differ in resolution")]
    Resolution,
    #[error("light weight must be positive and finite")]
    LightWeight,
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LightRig {
    directions: Vec<Direction>,
}

impl LightRig {
    pub fn from_directions(directions: Vec<Direction>) -> Result<Self, LightStageError> {
        if directions.len() < 3 {
            return Err(LightStageError::TooFewLights(directions.len()));
        }
        Ok(LightRig { directions })
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn count(&self) -> usize {
        self.directions.len()
    }

    /// Index of the light closest in angle to `d`; ties go to the lower index.
    pub fn nearest(&self, d: &Vector3<f64>) -> usize {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, l) in self.directions.iter().enumerate() {
            let dot = l.as_vector().dot(d);
            if dot > best_dot {
                best_dot = dot;
                best = i;
            }
        }
        best
    }
}

/// Spherical Fibonacci rig around the +Y axis. Seed 0 is the canonical
/// layout; other seeds spin it by a random azimuth.
///
/// Heights are offset by 0.45 of a cell instead of the usual half. The
/// centered lattice is symmetric under a half turn, which makes the
/// three-light rig coplanar.
pub fn make_rig(count: usize, seed: u64) -> Result<LightRig, LightStageError> {
    if count < 3 {
        return Err(LightStageError::TooFewLights(count));
    }
    let offset = if seed == 0 {
        0.0
    } else {
        ChaCha8Rng::seed_from_u64(seed).random_range(0.0..std::f64::consts::TAU)
    };
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let directions = (0..count)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.45) / count as f64;
            let theta = y.clamp(-1.0, 1.0).acos();
            let phi = (i as f64 * golden + offset).rem_euclid(std::f64::consts::TAU);
            Direction::normalize(dir_from_angles(theta, phi)).expect("unit by construction")
        })
        .collect();
    LightRig::from_directions(directions)
}

/// Per-light radiance·steradian.
#[derive(Debug, Clone, PartialEq)]
pub struct RigWeights {
    pub weights: Vec<Rgb>,
}

impl RigWeights {
    pub fn one_hot(count: usize, index: usize, value: Rgb) -> Self {
        let mut weights = vec![Rgb::BLACK; count];
        weights[index] = value;
        RigWeights { weights }
    }

    pub fn total(&self) -> Rgb {
        self.weights.iter().fold(Rgb::BLACK, |a, w| a + *w)
    }

    pub fn add(&self, other: &RigWeights) -> RigWeights {
        RigWeights {
            weights: self
                .weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| *a + *b)
                .collect(),
        }
    }
}

/// Bins every texel's `E ω` into the nearest rig light.
pub fn project_env_to_rig(env: &EnvMap, rig: &LightRig) -> RigWeights {
    let (h, w) = (env.height(), env.width());
    let table = solid_angles(h, w);
    let mut weights = vec![Rgb::BLACK; rig.count()];
    for row in 0..h {
        let theta = (row as f64 + 0.5) * std::f64::consts::PI / h as f64;
        for col in 0..w {
            let phi = (col as f64 + 0.5) * std::f64::consts::TAU / w as f64;
            let i = rig.nearest(&dir_from_angles(theta, phi));
            weights[i] += env.texel(row, col) * table.weight(row);
        }
    }
    RigWeights { weights }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OlatComponent {
    Diffuse,
    Pbr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlatStack {
    rig: LightRig,
    images: Vec<Image<Rgb>>,
    light_weight: f64,
}

impl OlatStack {
    pub fn new(rig: LightRig, images: Vec<Image<Rgb>>, light_weight: f64) -> Result<Self, LightStageError> {
        if images.len() != rig.count() {
            return Err(LightStageError::CountMismatch {
                expected: rig.count(),
                got: images.len(),
            });
        }
        if !(light_weight.is_finite() && light_weight > 0.0) {
            return Err(LightStageError::LightWeight);
        }
        if images.windows(2).any(|p| !p[0].same_dims(&p[1])) {
            return Err(LightStageError::Resolution);
        }
        Ok(OlatStack {
            rig,
            images,
            light_weight,
        })
    }

    pub fn rig(&self) -> &LightRig {
        &self.rig
    }

    pub fn images(&self) -> &[Image<Rgb>] {
        &self.images
    }

    pub fn light_weight(&self) -> f64 {
        self.light_weight
    }

    pub fn dims(&self) -> (usize, usize) {
        self.images[0].dims()
    }
}

/// Renders one image per rig light at unit weight.
pub fn render_olat(
    bundle: &IntrinsicBundle,
    rig: &LightRig,
    view: &Direction,
    component: OlatComponent,
) -> Result<OlatStack, LightStageError> {
    let images = rig
        .directions()
        .iter()
        .map(|d| {
            let out = render_lights(bundle, &LightSamples::directional(d, Rgb::WHITE), view)?;
            Ok(match component {
                OlatComponent::Diffuse => out.diffuse,
                OlatComponent::Pbr => out.pbr,
            })
        })
        .collect::<Result<Vec<_>, LightStageError>>()?;
    OlatStack::new(rig.clone(), images, 1.0)
}

/// `Σ_i (w_i / light_weight) ⊙ image_i`, summed in light order.
pub fn composite(stack: &OlatStack, weights: &RigWeights) -> Result<Image<Rgb>, LightStageError> {
    if weights.weights.len() != stack.rig.count() {
        return Err(LightStageError::CountMismatch {
            expected: stack.rig.count(),
            got: weights.weights.len(),
        });
    }
    let scale: Vec<Rgb> = weights
        .weights
        .iter()
        .map(|w| *w / stack.light_weight)
        .collect();
    let (w, h) = stack.dims();
    Ok(Image::par_from_fn(w, h, |x, y| {
        let mut acc = Rgb::BLACK;
        for (img, s) in stack.images.iter().zip(&scale) {
            acc += *s * *img.get(x, y);
        }
        acc
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StereoResult {
    /// Unit normals on valid pixels, zero elsewhere.
    pub normal: Image<Vector3<f64>>,
    /// Per-channel fit of `m = ρ ⟨n·l⟩` in stack units.
    pub rho: Image<Rgb>,
    /// Lambertian albedo `σ = π ρ / light_weight`.
    pub albedo: Image<Rgb>,
    pub valid: Image<bool>,
    /// RMS luminance residual over the lights used.
    pub residual: Image<f64>,
}

/// Least-squares photometric stereo. Lights whose luminance measurement is
/// at or below `shadow_threshold` are dropped; pixels with fewer than three
/// remaining lights or a singular light matrix are marked invalid.
pub fn photometric_stereo(stack: &OlatStack, shadow_threshold: f64) -> StereoResult {
    let (w, h) = stack.dims();
    let lights: Vec<Vector3<f64>> = stack.rig.directions().iter().map(|d| *d.as_vector()).collect();
    let fits = Image::par_from_fn(w, h, |x, y| {
        let samples: Vec<(usize, Rgb)> = stack
            .images
            .iter()
            .enumerate()
            .map(|(i, img)| (i, *img.get(x, y)))
            .filter(|(_, m)| m.luminance() > shadow_threshold)
            .collect();
        if samples.len() < 3 {
            return None;
        }
        let mut ata = Matrix3::zeros();
        let mut atb = Vector3::zeros();
        for (i, m) in &samples {
            let l = &lights[*i];
            ata += l * l.transpose();
            atb += l * m.luminance();
        }
        let eig = ata.symmetric_eigen().eigenvalues;
        if eig.min() <= 1e-10 * eig.max().max(f64::MIN_POSITIVE) {
            return None;
        }
        let g = ata.cholesky()?.solve(&atb);
        let len = g.norm();
        if !(len > 0.0 && len.is_finite()) {
            return None;
        }
        let n = g / len;
        let mut num = Rgb::BLACK;
        let mut den = 0.0;
        let mut sq = 0.0;
        for (i, m) in &samples {
            let s = clamp01(n.dot(&lights[*i]));
            num += *m * s;
            den += s * s;
            let r = m.luminance() - g.dot(&lights[*i]);
            sq += r * r;
        }
        let rho = if den > 0.0 { num / den } else { Rgb::BLACK };
        Some((n, rho.map(|c| c.max(0.0)), (sq / samples.len() as f64).sqrt()))
    });
    let scale = std::f64::consts::PI / stack.light_weight;
    StereoResult {
        normal: fits.map(|f| f.map_or(Vector3::zeros(), |f| f.0)),
        rho: fits.map(|f| f.map_or(Rgb::BLACK, |f| f.1)),
        albedo: fits.map(|f| f.map_or(Rgb::BLACK, |f| f.1 * scale)),
        valid: fits.map(|f| f.is_some()),
        residual: fits.map(|f| f.map_or(0.0, |f| f.2)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlight::texel_to_dir;
    use proptest::prelude::*;

    #[test]
    fn rig_is_spread_and_deterministic() {
        let rig = make_rig(137, 0).unwrap();
        assert_eq!(rig.count(), 137);
        let mut min_angle = f64::INFINITY;
        for (i, a) in rig.directions().iter().enumerate() {
            assert!((a.as_vector().norm() - 1.0).abs() < 1e-12);
            for b in &rig.directions()[i + 1..] {
                min_angle = min_angle.min(a.dot(b).clamp(-1.0, 1.0).acos());
            }
        }
        assert!(min_angle.to_degrees() > 10.0, "{}", min_angle.to_degrees());
        assert_eq!(rig, make_rig(137, 0).unwrap());
        assert_eq!(make_rig(50, 9).unwrap(), make_rig(50, 9).unwrap());
        assert_ne!(make_rig(50, 9).unwrap(), make_rig(50, 0).unwrap());
        assert!(matches!(make_rig(2, 0), Err(LightStageError::TooFewLights(2))));
    }

    #[test]
    fn three_light_rig_has_full_rank() {
        let rig = make_rig(3, 0).unwrap();
        let m = Matrix3::from_columns(&[
            *rig.directions()[0].as_vector(),
            *rig.directions()[1].as_vector(),
            *rig.directions()[2].as_vector(),
        ]);
        assert!(m.determinant().abs() > 0.01, "{}", m.determinant());
    }

    #[test]
    fn uniform_env_bins_evenly() {
        let rig = make_rig(137, 0).unwrap();
        let weights = project_env_to_rig(&EnvMap::uniform(32, Rgb::WHITE), &rig);
        let mean = 4.0 * std::f64::consts::PI / 137.0;
        // Oracle: count texels per Voronoi cell independently.
        let mut counts = vec![0.0; 137];
        let table = solid_angles(32, 64);
        for row in 0..32 {
            for col in 0..64 {
                let d = texel_to_dir(row, col, 32, 64).unwrap();
                let best = (0..137)
                    .max_by(|&a, &b| {
                        rig.directions()[a]
                            .dot(&d)
                            .total_cmp(&rig.directions()[b].dot(&d))
                            .then(b.cmp(&a))
                    })
                    .unwrap();
                counts[best] += table.weight(row);
            }
        }
        for (w, c) in weights.weights.iter().zip(&counts) {
            assert!((w.r - c).abs() < 1e-12);
            assert!((w.r - mean).abs() <= 0.2 * mean, "{} vs {mean}", w.r);
        }
        assert!((weights.total().g - 4.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn single_texel_env_hits_one_light() {
        let rig = make_rig(137, 0).unwrap();
        let env = EnvMap::delta(32, 5, 17, Rgb::splat(3.0)).unwrap();
        let weights = project_env_to_rig(&env, &rig);
        let lit: Vec<usize> = (0..137).filter(|&i| weights.weights[i] != Rgb::BLACK).collect();
        assert_eq!(lit.len(), 1);
        let d = texel_to_dir(5, 17, 32, 64).unwrap();
        assert_eq!(lit[0], rig.nearest(d.as_vector()));
        assert_eq!(weights.weights[lit[0]], env.total_energy());
    }

    fn tiny_stack() -> OlatStack {
        let rig = make_rig(4, 0).unwrap();
        let images = (0..4)
            .map(|i| Image::from_fn(3, 2, |x, y| Rgb::new(i as f64, x as f64 * 0.5, y as f64 + 0.25)))
            .collect();
        OlatStack::new(rig, images, 1.0).unwrap()
    }

    #[test]
    fn composite_one_hot_and_mismatch() {
        let stack = tiny_stack();
        let w = RigWeights::one_hot(4, 2, Rgb::new(2.0, 3.0, 4.0));
        let img = composite(&stack, &w).unwrap();
        for (a, b) in img.pixels().iter().zip(stack.images()[2].pixels()) {
            assert_eq!(*a, Rgb::new(2.0, 3.0, 4.0) * *b);
        }
        let short = RigWeights { weights: vec![Rgb::WHITE; 3] };
        assert!(matches!(
            composite(&stack, &short),
            Err(LightStageError::CountMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn stack_validation() {
        let rig = make_rig(3, 0).unwrap();
        let img = Image::filled(2, 2, Rgb::BLACK);
        assert!(OlatStack::new(rig.clone(), vec![img.clone(); 2], 1.0).is_err());
        assert!(OlatStack::new(rig.clone(), vec![img.clone(); 3], 0.0).is_err());
        let odd = vec![img.clone(), img.clone(), Image::filled(3, 2, Rgb::BLACK)];
        assert_eq!(OlatStack::new(rig, odd, 1.0), Err(LightStageError::Resolution));
    }

    #[test]
    fn hand_solved_stereo() {
        let rig = LightRig::from_directions(vec![
            Direction::new(1.0, 0.0, 0.0).unwrap(),
            Direction::new(0.0, 1.0, 0.0).unwrap(),
            Direction::new(0.0, 0.0, 1.0).unwrap(),
        ])
        .unwrap();
        let images = [0.2, 0.3, 0.6]
            .iter()
            .map(|&m| Image::filled(1, 1, Rgb::splat(m)))
            .collect();
        let stack = OlatStack::new(rig, images, 1.0).unwrap();
        let out = photometric_stereo(&stack, DEFAULT_SHADOW_THRESHOLD);
        assert!(out.valid.get(0, 0));
        let n = out.normal.get(0, 0);
        let expect = Vector3::new(2.0, 3.0, 6.0) / 7.0;
        assert!((n - expect).norm() < 1e-15);
        assert!((out.rho.get(0, 0).g - 0.7).abs() < 1e-15);
        assert!(*out.residual.get(0, 0) < 1e-15);
    }

    #[test]
    fn dark_and_degenerate_pixels_are_invalid() {
        let rig = make_rig(6, 0).unwrap();
        let images = (0..6)
            .map(|i| Image::from_fn(2, 1, |x, _| if x == 0 || i > 1 { Rgb::BLACK } else { Rgb::WHITE }))
            .collect();
        let stack = OlatStack::new(rig, images, 1.0).unwrap();
        let out = photometric_stereo(&stack, DEFAULT_SHADOW_THRESHOLD);
        assert!(!out.valid.get(0, 0));
        // Only two lit lights on the second pixel.
        assert!(!out.valid.get(1, 0));
        assert_eq!(*out.albedo.get(0, 0), Rgb::BLACK);
    }

    proptest! {
        #[test]
        fn composite_is_linear_in_weights(
            a in prop::collection::vec(0.0f64..10.0, 4),
            b in prop::collection::vec(0.0f64..10.0, 4),
        ) {
            let stack = tiny_stack();
            let wa = RigWeights { weights: a.iter().map(|&v| Rgb::splat(v)).collect() };
            let wb = RigWeights { weights: b.iter().map(|&v| Rgb::new(v, 0.5 * v, 0.0)).collect() };
            let sum = composite(&stack, &wa.add(&wb)).unwrap();
            let ca = composite(&stack, &wa).unwrap();
            let cb = composite(&stack, &wb).unwrap();
            for ((s, x), y) in sum.pixels().iter().zip(ca.pixels()).zip(cb.pixels()) {
                let e = *x + *y;
                for (u, v) in s.to_array().into_iter().zip(e.to_array()) {
                    prop_assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
                }
            }
        }

        #[test]
        fn projection_conserves_energy(seed in 0u64..1000, h in 2usize..12) {
            let rig = make_rig(3 + (seed as usize % 40), seed).unwrap();
            let env = EnvMap::from_fn(h, |d| Rgb::new(d.x().abs(), (seed % 7) as f64, d.y().max(0.0))).unwrap();
            let total = project_env_to_rig(&env, &rig).total();
            let expect = env.total_energy();
            for (u, v) in total.to_array().into_iter().zip(expect.to_array()) {
                prop_assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }
}
