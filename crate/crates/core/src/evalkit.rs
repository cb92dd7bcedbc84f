//! Reconstruction losses, the weighted relighting objective, image metrics
//! and the `ln(1 + x)` dynamic-range codec.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::color::Rgb;
use crate::image::Image;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("the mask selects no pixels")]
    EmptyRegion,
    #[error("images are empty")]
    EmptyImage,
    #[error("missing loss term `{0}`")]
    MissingTerm(&'static str),
    #[error("unknown loss term `{0}`")]
    UnknownTerm(String),
    #[error("negative input {0} to the log codec")]
    Negative(f64),
}

fn check_shape<T, U>(a: &Image<T>, b: &Image<U>) -> Result<(), EvalError> {
    if !a.same_dims(b) {
        return Err(EvalError::Shape(a.dims(), b.dims()));
    }
    if a.is_empty() {
        return Err(EvalError::EmptyImage);
    }
    Ok(())
}

fn abs_diff(a: Rgb, b: Rgb) -> f64 {
    (a.r - b.r).abs() + (a.g - b.g).abs() + (a.b - b.b).abs()
}

/// Mean absolute difference over all channels. With a mask, only pixels
/// where the mask is `true` (the hidden region) are averaged, as in masked
/// autoencoder training.
pub fn l1(x: &Image<Rgb>, y: &Image<Rgb>, mask: Option<&Image<bool>>) -> Result<f64, EvalError> {
    check_shape(x, y)?;
    match mask {
        None => Ok(x.pixels().iter().zip(y.pixels()).map(|(a, b)| abs_diff(*a, *b)).sum::<f64>()
            / (3 * x.len()) as f64),
        Some(m) => {
            check_shape(x, m)?;
            let mut sum = 0.0;
            let mut n = 0usize;
            for ((a, b), &keep) in x.pixels().iter().zip(y.pixels()).zip(m.pixels()) {
                if keep {
                    sum += abs_diff(*a, *b);
                    n += 1;
                }
            }
            if n == 0 {
                return Err(EvalError::EmptyRegion);
            }
            Ok(sum / (3 * n) as f64)
        }
    }
}

/// `mean |x ⊙ S − y ⊙ S|`, with `S` the specular render used as a weight.
pub fn specular_weighted_l1(x: &Image<Rgb>, y: &Image<Rgb>, spec: &Image<Rgb>) -> Result<f64, EvalError> {
    check_shape(x, y)?;
    check_shape(x, spec)?;
    let sum: f64 = x
        .pixels()
        .iter()
        .zip(y.pixels())
        .zip(spec.pixels())
        .map(|((a, b), s)| abs_diff(*a * *s, *b * *s))
        .sum();
    Ok(sum / (3 * x.len()) as f64)
}

pub fn mae(x: &Image<Rgb>, y: &Image<Rgb>) -> Result<f64, EvalError> {
    l1(x, y, None)
}

pub fn mse(x: &Image<Rgb>, y: &Image<Rgb>) -> Result<f64, EvalError> {
    check_shape(x, y)?;
    let sum: f64 = x
        .pixels()
        .iter()
        .zip(y.pixels())
        .map(|(a, b)| {
            let d = *a - *b;
            d.r * d.r + d.g * d.g + d.b * d.b
        })
        .sum();
    Ok(sum / (3 * x.len()) as f64)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM of the Rec. 709 luminance with an 11×11 Gaussian window
/// (σ = 1.5), `K1 = 0.01`, `K2 = 0.03` and dynamic range 1. Only windows
/// that fit inside the image are used; images smaller than the window use a
/// single window of the largest odd size that fits.
pub fn ssim(x: &Image<Rgb>, y: &Image<Rgb>) -> Result<f64, EvalError> {
    check_shape(x, y)?;
    let (w, h) = x.dims();
    let mut size = SSIM_WINDOW.min(w).min(h);
    if size % 2 == 0 {
        size -= 1;
    }
    let g = gaussian(size);
    let lx = x.map(|c| c.luminance());
    let ly = y.map(|c| c.luminance());
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - size {
        for x0 in 0..=w - size {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..size {
                for i in 0..size {
                    let wt = g[i] * g[j];
                    let a = *lx.get(x0 + i, y0 + j);
                    let b = *ly.get(x0 + i, y0 + j);
                    mx += wt * a;
                    my += wt * b;
                    sxx += wt * (a * a);
                    syy += wt * (b * b);
                    sxy += wt * (a * b);
                }
            }
            // Grouped so that swapping x and y gives bit-identical results.
            let mean_sq = mx * mx + my * my;
            let var_sum = (sxx + syy) - mean_sq;
            let cov = sxy - mx * my;
            total += ((2.0 * (mx * my) + c1) * (2.0 * cov + c2)) / ((mean_sq + c1) * (var_sum + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn log_encode(x: f64) -> Result<f64, EvalError> {
    if x < 0.0 || x.is_nan() {
        return Err(EvalError::Negative(x));
    }
    Ok(x.ln_1p())
}

pub fn log_decode(y: f64) -> Result<f64, EvalError> {
    if y < 0.0 || y.is_nan() {
        return Err(EvalError::Negative(y));
    }
    Ok(y.exp_m1())
}

pub fn log_encode_image(img: &Image<Rgb>) -> Result<Image<Rgb>, EvalError> {
    let mut out = Vec::with_capacity(img.len());
    for c in img.pixels() {
        out.push(Rgb::new(log_encode(c.r)?, log_encode(c.g)?, log_encode(c.b)?));
    }
    Ok(Image::from_vec(img.width(), img.height(), out).expect("same length"))
}

pub fn log_decode_image(img: &Image<Rgb>) -> Result<Image<Rgb>, EvalError> {
    let mut out = Vec::with_capacity(img.len());
    for c in img.pixels() {
        out.push(Rgb::new(log_decode(c.r)?, log_decode(c.g)?, log_decode(c.b)?));
    }
    Ok(Image::from_vec(img.width(), img.height(), out).expect("same length"))
}

/// Terms of the relighting objective and their weights. Perceptual and
/// adversarial terms come from trained networks and are passed in as
/// precomputed scalars.
pub const LOSS_WEIGHTS: [(&str, f64); 13] = [
    ("normal", 10.0),
    ("src_hdri", 10.0),
    ("src_diff", 0.2),
    ("albedo", 0.2),
    ("pbr", 0.2),
    ("neural", 0.2),
    ("vgg_src_diff", 1.0),
    ("vgg_albedo", 1.0),
    ("vgg_pbr", 1.0),
    ("vgg_neural", 1.0),
    ("adv_pbr", 1.0),
    ("adv_neural", 1.0),
    ("spec_neural", 0.2),
];

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// `(name, weight, value)` in the canonical term order.
    pub terms: Vec<(&'static str, f64, f64)>,
    pub total: f64,
}

/// Weighted sum of all 13 named terms. Every term is required.
pub fn composite_loss(terms: &BTreeMap<String, f64>) -> Result<LossReport, EvalError> {
    if let Some(unknown) = terms.keys().find(|k| !LOSS_WEIGHTS.iter().any(|(n, _)| n == k)) {
        return Err(EvalError::UnknownTerm(unknown.clone()));
    }
    let mut out = Vec::with_capacity(LOSS_WEIGHTS.len());
    // Neumaier summation: the five 0.2 weights otherwise drift the
    // all-ones total off 27 by one ulp.
    let mut total = 0.0f64;
    let mut carry = 0.0;
    for (name, weight) in LOSS_WEIGHTS {
        let value = *terms.get(name).ok_or(EvalError::MissingTerm(name))?;
        let x = weight * value;
        let t = total + x;
        carry += if total.abs() >= x.abs() {
            (total - t) + x
        } else {
            (x - t) + total
        };
        total = t;
        out.push((name, weight, value));
    }
    Ok(LossReport {
        terms: out,
        total: total + carry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(v: f64) -> Image<Rgb> {
        Image::filled(16, 16, Rgb::splat(v))
    }

    fn ramp(seed: f64) -> Image<Rgb> {
        Image::from_fn(24, 20, |x, y| {
            Rgb::new(
                ((x as f64 * 0.37 + seed).sin() + 1.0) * 0.5,
                (y as f64 / 20.0) * seed.cos().abs(),
                ((x * y) as f64 * 0.01 + seed) % 1.0,
            )
        })
    }

    fn terms(v: impl Fn(&str) -> f64) -> BTreeMap<String, f64> {
        LOSS_WEIGHTS.iter().map(|(n, _)| (n.to_string(), v(n))).collect()
    }

    #[test]
    fn l1_examples() {
        let a = ramp(0.3);
        assert_eq!(l1(&a, &a, None).unwrap(), 0.0);
        assert_eq!(l1(&constant(0.0), &constant(0.5), None).unwrap(), 0.5);
        // Differences only in the right half, mask covers the left half.
        let x = constant(0.0);
        let y = Image::from_fn(16, 16, |x, _| Rgb::splat(if x >= 8 { 1.0 } else { 0.0 }));
        let left = Image::from_fn(16, 16, |x, _| x < 8);
        assert_eq!(l1(&x, &y, Some(&left)).unwrap(), 0.0);
        assert_eq!(l1(&x, &y, Some(&left.map(|m| !m))).unwrap(), 1.0);
        assert_eq!(
            l1(&x, &y, Some(&Image::filled(16, 16, false))),
            Err(EvalError::EmptyRegion)
        );
        assert!(matches!(l1(&x, &ramp(0.1), None), Err(EvalError::Shape(..))));
    }

    #[test]
    fn specular_weighting() {
        let (x, y) = (ramp(0.2), ramp(1.3));
        let zero = Image::filled(24, 20, Rgb::BLACK);
        assert_eq!(specular_weighted_l1(&x, &y, &zero).unwrap(), 0.0);
        assert!(specular_weighted_l1(&x, &y, &constant(1.0)).is_err());
        let ones = Image::filled(24, 20, Rgb::WHITE);
        assert_eq!(specular_weighted_l1(&x, &y, &ones).unwrap(), l1(&x, &y, None).unwrap());
        let quarter = Image::filled(24, 20, Rgb::splat(0.25));
        assert_eq!(
            specular_weighted_l1(&x, &y, &quarter).unwrap(),
            0.25 * l1(&x, &y, None).unwrap()
        );
    }

    #[test]
    fn metrics() {
        assert_eq!(mse(&constant(0.0), &constant(0.5)).unwrap(), 0.25);
        let (a, b) = (ramp(0.4), ramp(2.0));
        assert_eq!(mae(&a, &b).unwrap(), l1(&a, &b, None).unwrap());
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let s = ssim(&a, &b).unwrap();
        assert!((-1.0..1.0).contains(&s));
        assert_eq!(s, ssim(&b, &a).unwrap());
        let tiny = Image::filled(3, 5, Rgb::splat(0.2));
        assert_eq!(ssim(&tiny, &tiny).unwrap(), 1.0);
    }

    #[test]
    fn ssim_matches_hand_computation_on_one_window() {
        // 11×11 images: the single valid window covers everything, so SSIM is
        // the closed form over the Gaussian-weighted moments.
        let a = Image::from_fn(11, 11, |x, y| Rgb::splat((x + 2 * y) as f64 / 40.0));
        let b = Image::from_fn(11, 11, |x, _| Rgb::splat(x as f64 / 20.0));
        let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
        let norm: f64 = g.iter().sum::<f64>().powi(2);
        let mut m = [0.0; 5];
        for y in 0..11 {
            for x in 0..11 {
                let w = g[x] * g[y] / norm;
                let (p, q) = ((x + 2 * y) as f64 / 40.0, x as f64 / 20.0);
                m[0] += w * p;
                m[1] += w * q;
                m[2] += w * p * p;
                m[3] += w * q * q;
                m[4] += w * p * q;
            }
        }
        let (c1, c2) = (1e-4, 9e-4);
        let vx = m[2] - m[0] * m[0];
        let vy = m[3] - m[1] * m[1];
        let cov = m[4] - m[0] * m[1];
        let expect = ((2.0 * m[0] * m[1] + c1) * (2.0 * cov + c2))
            / ((m[0] * m[0] + m[1] * m[1] + c1) * (vx + vy + c2));
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn log_codec() {
        assert_eq!(log_encode(0.0).unwrap(), 0.0);
        assert!((log_encode(std::f64::consts::E - 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(log_encode(-1e-9).is_err());
        assert!(log_decode(-0.5).is_err());
        let img = ramp(0.7).map(|c| *c * 100.0);
        let back = log_decode_image(&log_encode_image(&img).unwrap()).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a.r - b.r).abs() <= 1e-12 * a.r.max(1e-300));
        }
    }

    #[test]
    fn loss_weights() {
        assert_eq!(composite_loss(&terms(|_| 1.0)).unwrap().total, 27.0);
        assert_eq!(composite_loss(&terms(|_| 0.0)).unwrap().total, 0.0);
        for (name, weight) in LOSS_WEIGHTS {
            let probe = composite_loss(&terms(|n| if n == name { 1.0 } else { 0.0 })).unwrap();
            assert_eq!(probe.total, weight, "{name}");
        }
        let mut missing = terms(|_| 1.0);
        missing.remove("adv_pbr");
        assert_eq!(composite_loss(&missing), Err(EvalError::MissingTerm("adv_pbr")));
        let mut extra = terms(|_| 1.0);
        extra.insert("lpips".into(), 1.0);
        assert!(matches!(composite_loss(&extra), Err(EvalError::UnknownTerm(_))));
    }

    proptest! {
        #[test]
        fn log_round_trip(x in 0.0f64..1e4) {
            let back = log_decode(log_encode(x).unwrap()).unwrap();
            prop_assert!((back - x).abs() <= 1e-6 * x.max(1e-300));
        }

        #[test]
        fn symmetric_metrics(s1 in 0.0f64..10.0, s2 in 0.0f64..10.0) {
            let (a, b) = (ramp(s1), ramp(s2));
            prop_assert_eq!(l1(&a, &b, None).unwrap(), l1(&b, &a, None).unwrap());
            prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
            let s = ssim(&a, &b).unwrap();
            prop_assert_eq!(s, ssim(&b, &a).unwrap());
            prop_assert!((-1.0..=1.0).contains(&s));
        }

        #[test]
        fn loss_is_linear(values in prop::collection::vec(0.0f64..5.0, 13), k in 0usize..13, bump in 0.0f64..3.0) {
            let base: BTreeMap<String, f64> = LOSS_WEIGHTS.iter().zip(&values).map(|((n, _), v)| (n.to_string(), *v)).collect();
            let mut bumped = base.clone();
            *bumped.get_mut(LOSS_WEIGHTS[k].0).unwrap() += bump;
            let d = composite_loss(&bumped).unwrap().total - composite_loss(&base).unwrap().total;
            prop_assert!((d - LOSS_WEIGHTS[k].1 * bump).abs() <= 1e-9);
        }
    }
}
