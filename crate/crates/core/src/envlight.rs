//! Equirectangular environment maps, solid-angle quadrature and Phong-lobe
//! pre-convolution.
//!
//! Texel layout (shared with the renderer, the light stage and the viewer):
//!
//! ```text
//!   col:   0                  W/4                 W/2                3W/4               W
//!          +-------------------+-------------------+-------------------+-------------------+
//! row 0    |                          +Y  (θ = 0, north pole)                              |
//!          |                                                                               |
//! row H/2  |  -Z  (φ = 0)     |  +X  (φ = π/2)    |  +Z  (φ = π)      |  -X  (φ = 3π/2)    |
//!          |                                                                               |
//! row H-1  |                          -Y  (θ = π, south pole)                              |
//!          +-------------------------------------------------------------------------------+
//! ```
//!
//! Texel `(row, col)` has its center at colatitude `θ = (row + ½)·π/H` and
//! longitude `φ = (col + ½)·2π/W`, and maps to
//! `d = (sin θ sin φ, cos θ, -sin θ cos φ)`.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::brdf::Direction;
use crate::color::Rgb;
use crate::image::Image;

pub const DEFAULT_ENV_HEIGHT: usize = 32;
pub const DEFAULT_ENV_WIDTH: usize = 64;
pub const DEFAULT_CONVOLVED_HEIGHT: usize = 64;
pub const DEFAULT_CONVOLVED_WIDTH: usize = 128;
pub const DEFAULT_PHONG_EXPONENTS: [u32; 4] = [1, 16, 32, 64];

/// Tag written into bundle manifests so consumers can check they share the
/// texel convention above.
pub const ENV_CONVENTION: &str = "equirect-yup-col0-negz-v1";

/// Sub-cells per axis when integrating sharp Phong lobes over an input
/// texel, which is treated as a constant-radiance patch.
pub const LOBE_SUBCELLS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("environment map must have width = 2 * height, got {width}x{height}")]
    Aspect { width: usize, height: usize },
    #[error("environment map is empty")]
    Empty,
    #[error("texel ({x}, {y}) is negative or non-finite")]
    BadTexel { x: usize, y: usize },
    #[error("texel index ({row}, {col}) out of range for {height}x{width}")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid Phong exponent list {0:?}: must be non-empty positive integers")]
    Exponents(Vec<u32>),
    #[error("convolved map has no p = 1 lobe")]
    MissingDiffuseLobe,
    #[error("downsample factor {factor} does not divide {width}x{height}")]
    Downsample {
        factor: usize,
        width: usize,
        height: usize,
    },
}

/// Equirectangular HDR radiance map, linear RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvMap {
    texels: Image<Rgb>,
}

impl EnvMap {
    pub fn new(texels: Image<Rgb>) -> Result<Self, EnvError> {
        let (w, h) = texels.dims();
        if h == 0 {
            return Err(EnvError::Empty);
        }
        if w != 2 * h {
            return Err(EnvError::Aspect {
                width: w,
                height: h,
            });
        }
        if let Some((x, y, _)) = texels
            .enumerate()
            .find(|(_, _, c)| !(c.is_finite() && c.min_component() >= 0.0))
        {
            return Err(EnvError::BadTexel { x, y });
        }
        Ok(EnvMap { texels })
    }

    pub fn uniform(height: usize, value: Rgb) -> Self {
        EnvMap::new(Image::filled(2 * height, height, value)).expect("uniform env is valid")
    }

    /// Evaluates `f` at every texel-center direction.
    pub fn from_fn(height: usize, f: impl Fn(&Direction) -> Rgb) -> Result<Self, EnvError> {
        let width = 2 * height;
        EnvMap::new(Image::from_fn(width, height, |col, row| {
            f(&texel_center(row, col, height, width))
        }))
    }

    /// All-black map except for one texel whose radiance is `value`.
    pub fn delta(height: usize, row: usize, col: usize, value: Rgb) -> Result<Self, EnvError> {
        let width = 2 * height;
        if row >= height || col >= width {
            return Err(EnvError::IndexOutOfRange {
                row,
                col,
                height,
                width,
            });
        }
        let mut texels = Image::filled(width, height, Rgb::BLACK);
        texels.set(col, row, value);
        EnvMap::new(texels)
    }

    pub fn height(&self) -> usize {
        self.texels.height()
    }

    pub fn width(&self) -> usize {
        self.texels.width()
    }

    pub fn texels(&self) -> &Image<Rgb> {
        &self.texels
    }

    pub fn texel(&self, row: usize, col: usize) -> Rgb {
        *self.texels.get(col, row)
    }

    pub fn into_image(self) -> Image<Rgb> {
        self.texels
    }

    pub fn scaled(&self, s: f64) -> EnvMap {
        EnvMap {
            texels: self.texels.map(|c| *c * s),
        }
    }

    /// Texelwise sum. Panics on resolution mismatch.
    pub fn add(&self, other: &EnvMap) -> EnvMap {
        assert!(self.texels.same_dims(&other.texels), "env resolution mismatch");
        let pixels = self
            .texels
            .pixels()
            .iter()
            .zip(other.texels.pixels())
            .map(|(a, b)| *a + *b)
            .collect();
        EnvMap {
            texels: Image::from_vec(self.width(), self.height(), pixels).unwrap(),
        }
    }

    /// `Σ E(l) ω(l)` over all texels.
    pub fn total_energy(&self) -> Rgb {
        let table = solid_angles(self.height(), self.width());
        let mut total = Rgb::BLACK;
        for (_, row, c) in self.texels.enumerate() {
            total += *c * table.weight(row);
        }
        total
    }

    /// Area-weighted box downsample by an integer factor. Energy `Σ E ω` is
    /// preserved.
    pub fn downsample(&self, factor: usize) -> Result<EnvMap, EnvError> {
        let (w, h) = self.texels.dims();
        if factor == 0 || w % factor != 0 || h % factor != 0 {
            return Err(EnvError::Downsample {
                factor,
                width: w,
                height: h,
            });
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let fine = solid_angles(h, w);
        let (cw, ch) = (w / factor, h / factor);
        let coarse = solid_angles(ch, cw);
        let texels = Image::from_fn(cw, ch, |cx, cy| {
            let mut acc = Rgb::BLACK;
            for y in cy * factor..(cy + 1) * factor {
                for x in cx * factor..(cx + 1) * factor {
                    acc += *self.texels.get(x, y) * fine.weight(y);
                }
            }
            acc / coarse.weight(cy)
        });
        EnvMap::new(texels)
    }
}

fn texel_angles(row: usize, col: usize, height: usize, width: usize) -> (f64, f64) {
    let theta = (row as f64 + 0.5) * PI / height as f64;
    let phi = (col as f64 + 0.5) * TAU / width as f64;
    (theta, phi)
}

pub(crate) fn dir_from_angles(theta: f64, phi: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(st * sp, ct, -st * cp)
}

fn texel_center(row: usize, col: usize, height: usize, width: usize) -> Direction {
    let (theta, phi) = texel_angles(row, col, height, width);
    Direction::from_unit(dir_from_angles(theta, phi))
}

/// Center direction of texel `(row, col)`.
pub fn texel_to_dir(
    row: usize,
    col: usize,
    height: usize,
    width: usize,
) -> Result<Direction, EnvError> {
    if row >= height || col >= width {
        return Err(EnvError::IndexOutOfRange {
            row,
            col,
            height,
            width,
        });
    }
    Ok(texel_center(row, col, height, width))
}

/// Colatitude in `[0, π]` and longitude in `[0, 2π)` of a direction.
pub(crate) fn dir_angles(d: &Vector3<f64>) -> (f64, f64) {
    let theta = d.y.clamp(-1.0, 1.0).acos();
    let phi = d.x.atan2(-d.z).rem_euclid(TAU);
    (theta, phi)
}

/// Texel containing `d`.
pub fn dir_to_texel(d: &Direction, height: usize, width: usize) -> (usize, usize) {
    let (theta, phi) = dir_angles(d.as_vector());
    let row = ((theta / PI * height as f64).floor() as usize).min(height - 1);
    let col = ((phi / TAU * width as f64).floor() as usize) % width;
    (row, col)
}

/// Solid angle of every texel, tabulated per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SolidAngleTable {
    width: usize,
    rows: Vec<f64>,
}

impl SolidAngleTable {
    /// Solid angle in steradians of a single texel in `row`.
    pub fn weight(&self, row: usize) -> f64 {
        self.rows[row]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    /// Sum over all texels; `4π` up to rounding.
    pub fn total(&self) -> f64 {
        self.rows.iter().sum::<f64>() * self.width as f64
    }
}

/// Exact band solid angle `(2π/W)(cos θ_top − cos θ_bottom)` per texel.
pub fn solid_angles(height: usize, width: usize) -> SolidAngleTable {
    let rows = (0..height)
        // Mirror the upper half so the table is exactly pole-symmetric.
        .map(|row| band_solid_angle(row.min(height - 1 - row) as f64, 1.0, height, width))
        .collect();
    SolidAngleTable { width, rows }
}

/// Solid angle of one texel-wide longitude cell spanning rows
/// `[row_start, row_start + span)` (fractional rows allowed).
fn band_solid_angle(row_start: f64, span: f64, height: usize, width: usize) -> f64 {
    let dtheta = span * PI / height as f64;
    let center = (row_start + 0.5 * span) * PI / height as f64;
    // cos(a) - cos(b) = 2 sin((a+b)/2) sin((b-a)/2)
    TAU / width as f64 * 2.0 * center.sin() * (0.5 * dtheta).sin()
}

/// Stack of Phong-lobe convolved environment maps, one per exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolvedEnvMap {
    exponents: Vec<u32>,
    maps: Vec<Image<Rgb>>,
}

impl ConvolvedEnvMap {
    pub fn new(exponents: Vec<u32>, maps: Vec<Image<Rgb>>) -> Result<Self, EnvError> {
        if exponents.is_empty() || exponents.contains(&0) || exponents.len() != maps.len() {
            return Err(EnvError::Exponents(exponents));
        }
        Ok(ConvolvedEnvMap { exponents, maps })
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn maps(&self) -> &[Image<Rgb>] {
        &self.maps
    }

    pub fn map(&self, exponent: u32) -> Option<&Image<Rgb>> {
        self.exponents
            .iter()
            .position(|&p| p == exponent)
            .map(|i| &self.maps[i])
    }

    pub fn height(&self) -> usize {
        self.maps[0].height()
    }

    pub fn width(&self) -> usize {
        self.maps[0].width()
    }

    /// Rotates every lobe map about +Y.
    pub fn rotate(&self, yaw: f64) -> ConvolvedEnvMap {
        ConvolvedEnvMap {
            exponents: self.exponents.clone(),
            maps: self.maps.iter().map(|m| rotate_equirect(m, yaw)).collect(),
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `E^p(l') = ∫ E(l) ⟨l'·l⟩^p dl` for every exponent, evaluated at the
/// texel centers of an `out_height × out_width` equirectangular grid.
///
/// The lobes are not normalized: a uniform unit environment yields
/// `2π / (p + 1)`. The lobe weight between an output texel and an input
/// texel depends only on their rows and an integer longitude offset, and the
/// sum over input texels starts at the column aligned with the output
/// texel, so rotating the input by whole texels rotates the result
/// bit-exactly.
pub fn convolve_phong(
    env: &EnvMap,
    exponents: &[u32],
    out_height: usize,
    out_width: usize,
) -> Result<ConvolvedEnvMap, EnvError> {
    if exponents.is_empty() || exponents.contains(&0) {
        return Err(EnvError::Exponents(exponents.to_vec()));
    }
    if out_height == 0 {
        return Err(EnvError::Empty);
    }
    if out_width != 2 * out_height {
        return Err(EnvError::Aspect {
            width: out_width,
            height: out_height,
        });
    }
    let (h, w) = (env.height(), env.width());
    let kernel = LobeKernel::build(h, w, out_height, out_width, exponents);
    let n_exp = exponents.len();

    // rows × cols × exponents, computed per output texel.
    let texels: Vec<Vec<Rgb>> = (0..out_height * out_width)
        .into_par_iter()
        .map(|idx| {
            let (r, c) = (idx / out_width, idx % out_width);
            let mut acc = vec![Rgb::BLACK; n_exp];
            let start = c * w / out_width;
            for i in 0..h {
                let row = env.texels.row(i);
                for t in 0..w {
                    let j = (start + t) % w;
                    let e = row[j];
                    let q = kernel.offset_index(j, c);
                    for (p, a) in acc.iter_mut().enumerate() {
                        *a += e * kernel.weight(p, r, i, q);
                    }
                }
            }
            acc
        })
        .collect();

    let maps = (0..n_exp)
        .map(|p| {
            let pixels = texels.iter().map(|t| t[p]).collect();
            Image::from_vec(out_width, out_height, pixels).unwrap()
        })
        .collect();
    ConvolvedEnvMap::new(exponents.to_vec(), maps)
}

/// Tabulated `∫_texel ⟨l'·l⟩^p dl` indexed by (exponent, output row, input
/// row, longitude offset class).
struct LobeKernel {
    in_width: usize,
    out_width: usize,
    in_height: usize,
    out_height: usize,
    gcd: usize,
    classes: usize,
    table: Vec<f64>,
}

/// Sub-cells per axis used to integrate a lobe of exponent `p` over one
/// input texel. Low exponents vary slowly across a texel and use its center
/// only, the same quadrature the renderer uses; sharper lobes are
/// integrated over `LOBE_SUBCELLS²` sub-cells.
pub fn lobe_subcells(p: u32) -> usize {
    if p <= 4 {
        1
    } else {
        LOBE_SUBCELLS
    }
}

/// Sub-cell rows `(cos θ, sin θ, solid angle)` and `cos Δφ` per longitude
/// offset class and sub-column.
struct SubGrid {
    k: usize,
    sub_rows: Vec<(f64, f64, f64)>,
    cos_dphi: Vec<f64>,
}

impl SubGrid {
    fn new(k: usize, in_height: usize, in_width: usize, out_width: usize, classes: usize, g: usize) -> Self {
        let denom = (2 * k * in_width * out_width) as i64;
        let table = solid_angles(in_height, in_width);
        let sub_rows = (0..in_height * k)
            .map(|s| {
                let start = s as f64 / k as f64;
                let span = 1.0 / k as f64;
                let theta = (start + 0.5 * span) * PI / in_height as f64;
                let omega = if k == 1 {
                    table.weight(s)
                } else {
                    band_solid_angle(start, span, in_height, in_width) / k as f64
                };
                (theta.cos(), theta.sin(), omega)
            })
            .collect();
        let cos_dphi = (0..classes)
            .flat_map(|q| {
                let d = (q * g) as i64;
                (0..k).map(move |b| {
                    let n = 2 * k as i64 * d + (2 * b as i64 + 1) * out_width as i64 - (k * in_width) as i64;
                    (TAU * n.rem_euclid(denom) as f64 / denom as f64).cos()
                })
            })
            .collect();
        SubGrid { k, sub_rows, cos_dphi }
    }
}

impl LobeKernel {
    fn build(
        in_height: usize,
        in_width: usize,
        out_height: usize,
        out_width: usize,
        exponents: &[u32],
    ) -> Self {
        let g = gcd(in_width, out_width);
        let classes = in_width / g * out_width;
        let n_exp = exponents.len();
        let grids: Vec<SubGrid> = exponents
            .iter()
            .map(|&p| SubGrid::new(lobe_subcells(p), in_height, in_width, out_width, classes, g))
            .collect();

        let per_row = n_exp * in_height * classes;
        let table: Vec<f64> = (0..out_height)
            .into_par_iter()
            .flat_map_iter(|r| {
                let theta_o = (r as f64 + 0.5) * PI / out_height as f64;
                let (so, co) = theta_o.sin_cos();
                let mut block = vec![0.0; per_row];
                for (p, (&e, grid)) in exponents.iter().zip(&grids).enumerate() {
                    let k = grid.k;
                    for i in 0..in_height {
                        for q in 0..classes {
                            let mut sum = 0.0;
                            for a in 0..k {
                                let (ct, st, omega) = grid.sub_rows[i * k + a];
                                for b in 0..k {
                                    let dot = co * ct + so * st * grid.cos_dphi[q * k + b];
                                    if dot > 0.0 {
                                        sum += omega * dot.powi(e as i32);
                                    }
                                }
                            }
                            block[(p * in_height + i) * classes + q] = sum;
                        }
                    }
                }
                block
            })
            .collect();

        LobeKernel {
            in_width,
            out_width,
            in_height,
            out_height,
            gcd: g,
            classes,
            table,
        }
    }

    #[inline]
    fn offset_index(&self, in_col: usize, out_col: usize) -> usize {
        let period = (self.in_width * self.out_width) as i64;
        let d = (in_col * self.out_width) as i64 - (out_col * self.in_width) as i64;
        d.rem_euclid(period) as usize / self.gcd
    }

    #[inline]
    fn weight(&self, exp_idx: usize, out_row: usize, in_row: usize, class: usize) -> f64 {
        debug_assert!(out_row < self.out_height);
        let per_row = self.table.len() / self.out_height;
        self.table[out_row * per_row + (exp_idx * self.in_height + in_row) * self.classes + class]
    }
}

/// Bilinear lookup in an equirectangular grid with longitude wrap and pole
/// clamp. Texel-center directions return the stored value exactly.
pub fn sample_equirect(map: &Image<Rgb>, d: &Vector3<f64>) -> Rgb {
    let (w, h) = map.dims();
    let (theta, phi) = dir_angles(d);
    let u = phi / TAU * w as f64 - 0.5;
    let v = theta / PI * h as f64 - 0.5;
    let (x0, fx) = split_coord(u);
    let (y0, fy) = split_coord(v);
    let xa = x0.rem_euclid(w as i64) as usize;
    let xb = (x0 + 1).rem_euclid(w as i64) as usize;
    let ya = y0.clamp(0, h as i64 - 1) as usize;
    let yb = (y0 + 1).clamp(0, h as i64 - 1) as usize;
    let top = lerp_rgb(*map.get(xa, ya), *map.get(xb, ya), fx);
    let bottom = lerp_rgb(*map.get(xa, yb), *map.get(xb, yb), fx);
    lerp_rgb(top, bottom, fy)
}

/// Integer part and fraction, snapping fractions within 1e-9 of a texel
/// center so center lookups are exact.
fn split_coord(u: f64) -> (i64, f64) {
    const SNAP: f64 = 1e-9;
    let r = u.round();
    if (u - r).abs() <= SNAP {
        return (r as i64, 0.0);
    }
    let f = u.floor();
    (f as i64, u - f)
}

#[inline]
fn lerp_rgb(a: Rgb, b: Rgb, t: f64) -> Rgb {
    if t == 0.0 {
        a
    } else {
        a * (1.0 - t) + b * t
    }
}

/// Radiance arriving from direction `d`.
pub fn sample_env(env: &EnvMap, d: &Direction) -> Rgb {
    sample_equirect(&env.texels, d.as_vector())
}

/// Rotates an equirectangular grid about +Y by `yaw` radians (content moves
/// toward increasing longitude). Whole-texel yaws are exact column rolls;
/// other yaws resample bilinearly along each row.
pub fn rotate_equirect(map: &Image<Rgb>, yaw: f64) -> Image<Rgb> {
    let (w, h) = map.dims();
    let shift = yaw / TAU * w as f64;
    let whole = shift.round();
    if (shift - whole).abs() <= 1e-9 * w as f64 {
        let k = (whole as i64).rem_euclid(w as i64) as usize;
        return Image::from_fn(w, h, |x, y| *map.get((x + w - k) % w, y));
    }
    Image::from_fn(w, h, |x, y| {
        let u = x as f64 - shift;
        let f = u.floor();
        let t = u - f;
        let xa = (f as i64).rem_euclid(w as i64) as usize;
        let xb = (f as i64 + 1).rem_euclid(w as i64) as usize;
        lerp_rgb(*map.get(xa, y), *map.get(xb, y), t)
    })
}

pub fn rotate_env(env: &EnvMap, yaw: f64) -> EnvMap {
    EnvMap {
        texels: rotate_equirect(&env.texels, yaw),
    }
}

/// Looks up the `p = 1` lobe at each normal. Zero-length normals (background
/// pixels) shade to black.
pub fn diffuse_shading(
    conv: &ConvolvedEnvMap,
    normals: &Image<Vector3<f64>>,
) -> Result<Image<Rgb>, EnvError> {
    let lobe = conv.map(1).ok_or(EnvError::MissingDiffuseLobe)?;
    Ok(Image::par_from_fn(normals.width(), normals.height(), |x, y| {
        let n = normals.get(x, y);
        if n.norm_squared() > 0.0 {
            sample_equirect(lobe, n)
        } else {
            Rgb::BLACK
        }
    }))
}
