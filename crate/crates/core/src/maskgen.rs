//! Corruption masks for masked-image pre-training: overlapping rectangular
//! patches, outpainting frames and free-form brush strokes.
//!
//! Every generator is a pure function of its dimensions, parameters and
//! seed. Randomness comes from a ChaCha stream seeded per call, so masks are
//! identical across platforms and thread counts. In a mask grid `true`
//! means masked (hidden) and `false` means visible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::Rgb;
use crate::image::Image;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("mask dimensions must be non-zero, got {height}x{width}")]
    Empty { height: usize, width: usize },
    #[error("invalid {0} range")]
    Range(&'static str),
    #[error("no pixel count of a {pixels}-pixel mask has a ratio in [{lo}, {hi}]")]
    Unreachable { lo: f64, hi: f64, pixels: usize },
    #[error("margins leave no visible window")]
    DegenerateWindow,
    #[error("image is {image:?} but mask is {mask:?}")]
    Mismatch {
        image: (usize, usize),
        mask: (usize, usize),
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Patch,
    Outpaint,
    Freeform,
}

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub min: f64,
    pub max: f64,
}

impl Span {
    pub const fn new(min: f64, max: f64) -> Self {
        Span { min, max }
    }

    fn check(&self, what: &'static str, lo: f64, hi: f64) -> Result<(), MaskError> {
        if self.min.is_finite() && self.max.is_finite() && lo <= self.min && self.min <= self.max && self.max <= hi {
            Ok(())
        } else {
            Err(MaskError::Range(what))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    grid: Image<bool>,
    kind: MaskKind,
    seed: u64,
    ratio: f64,
}

impl Mask {
    pub fn new(grid: Image<bool>, kind: MaskKind, seed: u64) -> Self {
        let masked = grid.pixels().iter().filter(|&&m| m).count();
        let ratio = if grid.is_empty() {
            0.0
        } else {
            masked as f64 / grid.len() as f64
        };
        Mask {
            grid,
            kind,
            seed,
            ratio,
        }
    }

    pub fn grid(&self) -> &Image<bool> {
        &self.grid
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Masked pixels over total pixels.
    pub fn measured_ratio(&self) -> f64 {
        self.ratio
    }

    pub fn masked_count(&self) -> usize {
        self.grid.pixels().iter().filter(|&&m| m).count()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokeParams {
    /// Inclusive stroke count range.
    pub count: (usize, usize),
    /// Inclusive polyline vertex count range, at least 1.
    pub vertices: (usize, usize),
    /// Brush diameter as a fraction of the smaller image side.
    pub width: Span,
    /// Segment length as a fraction of the smaller image side.
    pub segment: Span,
    /// Maximum heading change per vertex, radians.
    pub jitter: f64,
}

impl Default for StrokeParams {
    fn default() -> Self {
        StrokeParams {
            count: (1, 8),
            vertices: (2, 6),
            width: Span::new(0.02, 0.08),
            segment: Span::new(0.1, 0.4),
            jitter: std::f64::consts::FRAC_PI_2,
        }
    }
}

impl StrokeParams {
    fn check(&self) -> Result<(), MaskError> {
        if self.count.0 > self.count.1 {
            return Err(MaskError::Range("stroke count"));
        }
        if self.vertices.0 == 0 || self.vertices.0 > self.vertices.1 {
            return Err(MaskError::Range("stroke vertices"));
        }
        self.width.check("stroke width", 0.0, f64::MAX)?;
        self.segment.check("stroke segment", 0.0, f64::MAX)?;
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(MaskError::Range("stroke jitter"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPolicy {
    /// Relative weights of patch, outpaint and free-form masks.
    pub weights: [f64; 3],
    /// Patch side as a fraction of the smaller image side.
    pub patch_size: Span,
    pub patch_ratio: Span,
    /// Per-side outpaint margin as a fraction of that axis.
    pub outpaint_margin: Span,
    pub strokes: StrokeParams,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        MaskPolicy {
            weights: [1.0, 1.0, 1.0],
            patch_size: Span::new(0.04, 0.25),
            patch_ratio: Span::new(0.4, 0.8),
            outpaint_margin: Span::new(0.1, 0.4),
            strokes: StrokeParams::default(),
        }
    }
}

fn check_dims(h: usize, w: usize) -> Result<(), MaskError> {
    if h == 0 || w == 0 {
        Err(MaskError::Empty { height: h, width: w })
    } else {
        Ok(())
    }
}

/// Smallest and largest masked-pixel counts whose ratio lies in `[lo, hi]`.
fn count_window(lo: f64, hi: f64, n: usize) -> Result<(usize, usize), MaskError> {
    let ratio = |c: usize| c as f64 / n as f64;
    let unreachable = MaskError::Unreachable { lo, hi, pixels: n };
    if lo > 1.0 {
        return Err(unreachable);
    }
    let mut lo_c = ((lo * n as f64).ceil().max(0.0) as usize).min(n);
    while lo_c > 0 && ratio(lo_c - 1) >= lo {
        lo_c -= 1;
    }
    while lo_c <= n && ratio(lo_c) < lo {
        lo_c += 1;
    }
    let mut hi_c = ((hi.min(1.0) * n as f64).floor().max(0.0) as usize).min(n);
    while hi_c < n && ratio(hi_c + 1) <= hi {
        hi_c += 1;
    }
    while ratio(hi_c) > hi {
        if hi_c == 0 {
            return Err(unreachable);
        }
        hi_c -= 1;
    }
    if lo_c > hi_c {
        return Err(unreachable);
    }
    Ok((lo_c, hi_c))
}

/// Overlapping axis-aligned rectangles. Rectangles are added until the
/// masked ratio reaches `ratio.min`; the last one is clipped in row-major
/// order if it would push the ratio past `ratio.max`.
pub fn gen_patch(h: usize, w: usize, size: Span, ratio: Span, seed: u64) -> Result<Mask, MaskError> {
    check_dims(h, w)?;
    size.check("patch size", f64::MIN_POSITIVE, 1.0)?;
    if !(ratio.min.is_finite() && ratio.max.is_finite() && ratio.min >= 0.0 && ratio.min <= ratio.max) {
        return Err(MaskError::Range("patch ratio"));
    }
    let n = h * w;
    let (lo_c, hi_c) = count_window(ratio.min, ratio.max, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = Image::filled(w, h, false);
    let mut count = 0;
    let side = h.min(w) as f64;
    let mut attempts = 0usize;
    while count < lo_c {
        attempts += 1;
        let (ph, pw) = if attempts > 100_000 {
            // Fallback for near-total coverage: sweep what is left.
            (h, w)
        } else {
            let ph = ((size.sample(&mut rng) * side).round() as usize).clamp(1, h);
            let pw = ((size.sample(&mut rng) * side).round() as usize).clamp(1, w);
            (ph, pw)
        };
        let y0 = rng.random_range(0..=h - ph);
        let x0 = rng.random_range(0..=w - pw);
        'rect: for y in y0..y0 + ph {
            for x in x0..x0 + pw {
                if count == hi_c {
                    break 'rect;
                }
                let m = grid.get_mut(x, y);
                if !*m {
                    *m = true;
                    count += 1;
                }
            }
        }
    }
    Ok(Mask::new(grid, MaskKind::Patch, seed))
}

/// Everything outside an axis-aligned visible window is masked. Each of the
/// four margins is drawn independently from `margin` as a fraction of its
/// axis and rounded to whole pixels.
pub fn gen_outpaint(h: usize, w: usize, margin: Span, seed: u64) -> Result<Mask, MaskError> {
    check_dims(h, w)?;
    margin.check("outpaint margin", 0.0, 1.0)?;
    if 2.0 * margin.max >= 1.0 {
        return Err(MaskError::DegenerateWindow);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = |dim: usize| (margin.sample(&mut rng) * dim as f64).round() as usize;
    let (top, bottom, left, right) = (px(h), px(h), px(w), px(w));
    if top + bottom >= h || left + right >= w {
        return Err(MaskError::DegenerateWindow);
    }
    let grid = Image::from_fn(w, h, |x, y| y < top || y >= h - bottom || x < left || x >= w - right);
    Ok(Mask::new(grid, MaskKind::Outpaint, seed))
}

/// Marks every pixel whose center lies within `width / 2` of the polyline
/// through `points` (pixel units, `x` right, `y` down).
pub fn rasterize_stroke(grid: &mut Image<bool>, points: &[(f64, f64)], width: f64) {
    let r = 0.5 * width;
    let (w, h) = grid.dims();
    let segments: Vec<((f64, f64), (f64, f64))> = match points {
        [] => return,
        [p] => vec![(*p, *p)],
        _ => points.windows(2).map(|s| (s[0], s[1])).collect(),
    };
    for (a, b) in segments {
        let x_lo = (a.0.min(b.0) - r).floor().max(0.0) as usize;
        let y_lo = (a.1.min(b.1) - r).floor().max(0.0) as usize;
        let x_hi = ((a.0.max(b.0) + r).ceil().max(0.0) as usize).min(w);
        let y_hi = ((a.1.max(b.1) + r).ceil().max(0.0) as usize).min(h);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = if len2 > 0.0 {
                    (((cx - a.0) * dx + (cy - a.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (ex, ey) = (cx - a.0 - t * dx, cy - a.1 - t * dy);
                if ex * ex + ey * ey <= r * r {
                    grid.set(x, y, true);
                }
            }
        }
    }
}

/// Union of random polyline strokes drawn with a round brush. Each stroke
/// starts at a uniform point with a uniform heading; the heading turns by
/// up to `jitter` at every vertex.
pub fn gen_freeform(h: usize, w: usize, params: &StrokeParams, seed: u64) -> Result<Mask, MaskError> {
    check_dims(h, w)?;
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = h.min(w) as f64;
    let mut grid = Image::filled(w, h, false);
    let strokes = rng.random_range(params.count.0..=params.count.1);
    for _ in 0..strokes {
        let vertices = rng.random_range(params.vertices.0..=params.vertices.1);
        let width = params.width.sample(&mut rng) * side;
        let mut p = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
        let mut points = vec![p];
        for _ in 1..vertices {
            if params.jitter > 0.0 {
                heading += rng.random_range(-params.jitter..=params.jitter);
            }
            let len = params.segment.sample(&mut rng) * side;
            p = (p.0 + len * heading.cos(), p.1 + len * heading.sin());
            points.push(p);
        }
        rasterize_stroke(&mut grid, &points, width);
    }
    Ok(Mask::new(grid, MaskKind::Freeform, seed))
}

/// Picks a mask kind by the policy weights, then calls its generator with
/// the same seed. The kind is drawn from a separate ChaCha stream.
pub fn sample_mask(policy: &MaskPolicy, h: usize, w: usize, seed: u64) -> Result<Mask, MaskError> {
    let weights = policy.weights;
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || total <= 0.0 {
        return Err(MaskError::Range("kind weights"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut pick = rng.random_range(0.0..total);
    let mut kind = MaskKind::Freeform;
    for (k, wt) in [MaskKind::Patch, MaskKind::Outpaint, MaskKind::Freeform].into_iter().zip(weights) {
        if wt > 0.0 && pick < wt {
            kind = k;
            break;
        }
        pick -= wt;
    }
    match kind {
        MaskKind::Patch => gen_patch(h, w, policy.patch_size, policy.patch_ratio, seed),
        MaskKind::Outpaint => gen_outpaint(h, w, policy.outpaint_margin, seed),
        MaskKind::Freeform => gen_freeform(h, w, &policy.strokes, seed),
    }
}

/// Replaces masked pixels with `fill`.
pub fn apply_mask(image: &Image<Rgb>, mask: &Mask, fill: Rgb) -> Result<Image<Rgb>, MaskError> {
    if !image.same_dims(mask.grid()) {
        return Err(MaskError::Mismatch {
            image: image.dims(),
            mask: mask.grid().dims(),
        });
    }
    Ok(Image::from_fn(image.width(), image.height(), |x, y| {
        if *mask.grid().get(x, y) {
            fill
        } else {
            *image.get(x, y)
        }
    }))
}
