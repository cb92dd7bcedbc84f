//! Radiance RGBE (`.hdr`). Reads flat and run-length encoded scanlines in
//! the standard `-Y H +X W` orientation; writes run-length encoded files.
//! Quantization keeps each texel within 1/256 of its brightest channel.

use super::{check_dims, IoError};
use crate::color::Rgb;
use crate::image::Image;

const MAX_HEADER: usize = 1 << 16;
/// Shortest run worth emitting as a repeat packet.
const MIN_RUN: usize = 4;

fn decode_pixel(p: [u8; 4]) -> Rgb {
    if p[3] == 0 {
        return Rgb::BLACK;
    }
    let scale = 2f64.powi(p[3] as i32 - 136);
    Rgb::new(
        (p[0] as f64 + 0.5) * scale,
        (p[1] as f64 + 0.5) * scale,
        (p[2] as f64 + 0.5) * scale,
    )
}

/// `(mantissa, exponent)` with `v = mantissa · 2^exponent`, mantissa in
/// `[0.5, 1)`, for finite positive `v`.
fn frexp(v: f64) -> (f64, i32) {
    let mut e = v.log2().floor() as i32 + 1;
    let mut m = v / 2f64.powi(e);
    if m >= 1.0 {
        m /= 2.0;
        e += 1;
    } else if m < 0.5 {
        m *= 2.0;
        e -= 1;
    }
    (m, e)
}

fn encode_pixel(c: Rgb) -> Result<[u8; 4], IoError> {
    if !c.is_finite() {
        return Err(IoError::Value(format!("non-finite texel {c:?}")));
    }
    let c = c.map(|v| v.max(0.0));
    let v = c.max_component();
    if v < 1e-38 {
        return Ok([0; 4]);
    }
    let (m, e) = frexp(v);
    if e > 127 {
        return Err(IoError::Value(format!("texel {v} exceeds the RGBE range")));
    }
    if e < -127 {
        return Ok([0; 4]);
    }
    let scale = m * 256.0 / v;
    let q = |x: f64| ((x * scale) as u32).min(255) as u8;
    Ok([q(c.r), q(c.g), q(c.b), (e + 128) as u8])
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let rest = self.bytes.len() - self.pos;
        if rest < n {
            return Err(IoError::Truncated { needed: n, found: rest });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn peek(&self, n: usize) -> Option<&'a [u8]> {
        self.bytes.get(self.pos..self.pos + n)
    }
}

fn parse_header(bytes: &[u8]) -> Result<(usize, usize, usize), IoError> {
    if !bytes.starts_with(b"#?") {
        return Err(IoError::BadMagic { format: "Radiance" });
    }
    let limit = bytes.len().min(MAX_HEADER);
    let end = bytes[..limit]
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| IoError::BadHeader("no blank line ends the header".into()))?;
    let header = String::from_utf8_lossy(&bytes[..end]);
    let mut lines = header.lines();
    let magic = lines.next().unwrap_or_default();
    if !(magic.starts_with("#?RADIANCE") || magic.starts_with("#?RGBE")) {
        return Err(IoError::BadMagic { format: "Radiance" });
    }
    for line in lines {
        if let Some(fmt) = line.strip_prefix("FORMAT=") {
            if fmt.trim() != "32-bit_rle_rgbe" {
                return Err(IoError::Unsupported(format!("pixel format {}", fmt.trim())));
            }
        }
    }
    let res_start = end + 2;
    let res_len = bytes[res_start..]
        .iter()
        .take(128)
        .position(|&b| b == b'\n')
        .ok_or_else(|| IoError::BadHeader("missing resolution line".into()))?;
    let res = String::from_utf8_lossy(&bytes[res_start..res_start + res_len]);
    let fields: Vec<&str> = res.split_whitespace().collect();
    let (height, width) = match fields.as_slice() {
        ["-Y", h, "+X", w] => {
            let parse = |t: &str| {
                t.parse::<usize>()
                    .map_err(|_| IoError::BadHeader(format!("bad resolution line `{res}`")))
            };
            (parse(h)?, parse(w)?)
        }
        [a, _, b, _] if a.len() == 2 && b.len() == 2 => {
            return Err(IoError::Unsupported(format!("scanline orientation `{res}`")));
        }
        _ => return Err(IoError::BadHeader(format!("bad resolution line `{res}`"))),
    };
    check_dims(width, height)?;
    Ok((width, height, res_start + res_len + 1))
}

fn read_rle_scanline(cur: &mut Cursor, width: usize, out: &mut [[u8; 4]]) -> Result<(), IoError> {
    for ch in 0..4 {
        let mut x = 0;
        while x < width {
            let count = cur.take(1)?[0] as usize;
            if count > 128 {
                let run = count - 128;
                if x + run > width {
                    return Err(IoError::Corrupt("run overflows scanline".into()));
                }
                let v = cur.take(1)?[0];
                for px in &mut out[x..x + run] {
                    px[ch] = v;
                }
                x += run;
            } else {
                if count == 0 || x + count > width {
                    return Err(IoError::Corrupt("bad literal packet".into()));
                }
                for (px, &v) in out[x..x + count].iter_mut().zip(cur.take(count)?) {
                    px[ch] = v;
                }
                x += count;
            }
        }
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<Image<Rgb>, IoError> {
    let (width, height, start) = parse_header(bytes)?;
    let mut cur = Cursor { bytes, pos: start };
    // Allocation grows with the data actually present, not the header claim.
    let mut pixels = Vec::with_capacity((width * height).min(bytes.len()));
    let mut line = vec![[0u8; 4]; width];
    for _ in 0..height {
        let rle = (8..0x8000).contains(&width)
            && cur
                .peek(4)
                .is_some_and(|p| p[0] == 2 && p[1] == 2 && p[2] & 0x80 == 0);
        if rle {
            let p = cur.take(4)?;
            if ((p[2] as usize) << 8 | p[3] as usize) != width {
                return Err(IoError::Corrupt("scanline width mismatch".into()));
            }
            read_rle_scanline(&mut cur, width, &mut line)?;
        } else {
            if cur.peek(3) == Some(&[1, 1, 1]) {
                return Err(IoError::Unsupported("old-style run-length encoding".into()));
            }
            for (px, raw) in line.iter_mut().zip(cur.take(width * 4)?.chunks_exact(4)) {
                *px = [raw[0], raw[1], raw[2], raw[3]];
            }
        }
        pixels.extend(line.iter().map(|&p| decode_pixel(p)));
    }
    Ok(Image::from_vec(width, height, pixels).expect("one pixel per texel"))
}

fn write_rle_channel(out: &mut Vec<u8>, data: &[u8]) {
    let n = data.len();
    let mut i = 0;
    while i < n {
        // Find the next run of at least MIN_RUN equal bytes.
        let mut run_start = i;
        let mut run_len = 0;
        while run_start < n {
            run_len = 1;
            while run_start + run_len < n && run_len < 127 && data[run_start + run_len] == data[run_start] {
                run_len += 1;
            }
            if run_len >= MIN_RUN {
                break;
            }
            run_start += run_len;
        }
        if run_start >= n {
            run_len = 0;
        }
        while i < run_start.min(n) {
            let chunk = (run_start.min(n) - i).min(128);
            out.push(chunk as u8);
            out.extend_from_slice(&data[i..i + chunk]);
            i += chunk;
        }
        if run_len >= MIN_RUN {
            out.push(128 + run_len as u8);
            out.push(data[run_start]);
            i = run_start + run_len;
        }
    }
}

pub fn encode(image: &Image<Rgb>) -> Result<Vec<u8>, IoError> {
    let (width, height) = image.dims();
    check_dims(width, height)?;
    let mut out = format!("#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y {height} +X {width}\n").into_bytes();
    let rle = (8..0x8000).contains(&width);
    let mut channels = vec![vec![0u8; width]; 4];
    for y in 0..height {
        let row = image.row(y);
        if rle {
            for (x, c) in row.iter().enumerate() {
                let p = encode_pixel(*c)?;
                for ch in 0..4 {
                    channels[ch][x] = p[ch];
                }
            }
            out.extend_from_slice(&[2, 2, (width >> 8) as u8, (width & 0xff) as u8]);
            for ch in &channels {
                write_rle_channel(&mut out, ch);
            }
        } else {
            for c in row {
                out.extend_from_slice(&encode_pixel(*c)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image<Rgb> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| {
            // Log-uniform magnitudes over twelve decades, with flat runs.
            let e = rng.random_range(-6.0..6.0f64);
            let base = 10f64.powf(e);
            Rgb::new(
                base * rng.random_range(0.0..1.0),
                base * rng.random_range(0.0..1.0),
                base * rng.random_range(0.0..1.0),
            )
        })
    }

    fn check_bound(src: &Image<Rgb>, back: &Image<Rgb>) {
        for (a, b) in src.pixels().iter().zip(back.pixels()) {
            let m = a.max_component();
            for (x, y) in a.to_array().iter().zip(b.to_array()) {
                assert!((x - y).abs() <= 0.01 * m, "{a:?} -> {b:?}");
            }
            // The brightest channel alone is within 1/256.
            assert!((b.max_component() - m).abs() <= m / 256.0 + 1e-300);
        }
    }

    #[test]
    fn round_trip_within_bound() {
        for (w, h) in [(64, 32), (5, 3), (300, 2)] {
            let img = random_image(w, h, w as u64);
            let back = decode(&encode(&img).unwrap()).unwrap();
            assert_eq!(back.dims(), (w, h));
            check_bound(&img, &back);
        }
    }

    #[test]
    fn flat_images_compress_and_reencode_stably() {
        let img = Image::filled(64, 32, Rgb::new(1.0, 0.5, 0.25));
        let bytes = encode(&img).unwrap();
        assert!(bytes.len() < 64 * 32);
        let back = decode(&bytes).unwrap();
        assert_eq!(*back.get(3, 3), Rgb::new(1.0 + 1.0 / 256.0, 0.5 + 1.0 / 256.0, 0.25 + 1.0 / 256.0));
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn flat_scanlines_decode() {
        let mut bytes = b"#?RGBE\n\n-Y 1 +X 2\n".to_vec();
        bytes.extend_from_slice(&[128, 64, 0, 129, 0, 0, 0, 0]);
        let img = decode(&bytes).unwrap();
        assert_eq!(*img.get(0, 0), Rgb::new(128.5 / 128.0, 64.5 / 128.0, 0.5 / 128.0));
        assert_eq!(*img.get(1, 0), Rgb::BLACK);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(decode(b"P6"), Err(IoError::BadMagic { .. })));
        assert!(matches!(decode(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n"), Err(IoError::BadHeader(_))));
        assert!(matches!(
            decode(b"#?RADIANCE\nFORMAT=32-bit_rle_xyze\n\n-Y 1 +X 1\n\0\0\0\0"),
            Err(IoError::Unsupported(_))
        ));
        assert!(matches!(decode(b"#?RADIANCE\n\n+Y 1 +X 1\n\0\0\0\0"), Err(IoError::Unsupported(_))));
        assert!(matches!(decode(b"#?RADIANCE\n\n-Y a +X 1\n"), Err(IoError::BadHeader(_))));
        assert!(matches!(decode(b"#?RADIANCE\n\n-Y 2 +X 2\n\0\0\0\0"), Err(IoError::Truncated { .. })));
        let old = b"#?RADIANCE\n\n-Y 1 +X 2\n\x01\x01\x01\x05";
        assert!(matches!(decode(old), Err(IoError::Unsupported(_))));
    }

    #[test]
    fn corrupt_runs_are_rejected() {
        let mut bytes = b"#?RADIANCE\n\n-Y 1 +X 8\n".to_vec();
        bytes.extend_from_slice(&[2, 2, 0, 8, 128 + 9, 1]);
        assert!(matches!(decode(&bytes), Err(IoError::Corrupt(_))));
        let mut bytes = b"#?RADIANCE\n\n-Y 1 +X 8\n".to_vec();
        bytes.extend_from_slice(&[2, 2, 0, 9]);
        assert!(matches!(decode(&bytes), Err(IoError::Corrupt(_))));
    }

    #[test]
    fn encoder_rejects_non_finite() {
        let img = Image::filled(2, 1, Rgb::new(f64::INFINITY, 0.0, 0.0));
        assert!(matches!(encode(&img), Err(IoError::Value(_))));
    }

    proptest! {
        #[test]
        fn never_panics(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
            let _ = decode(&bytes);
        }

        #[test]
        fn never_panics_on_corrupted_payload(
            w in 1usize..40, h in 1usize..6,
            tail in prop::collection::vec(any::<u8>(), 0..1024),
        ) {
            let mut bytes = format!("#?RADIANCE\n\n-Y {h} +X {w}\n").into_bytes();
            bytes.extend(tail);
            let _ = decode(&bytes);
        }

        #[test]
        fn rle_round_trip(seed in any::<u64>(), w in 8usize..140) {
            let mut img = random_image(w, 2, seed);
            // Force some long runs.
            for x in 0..w / 2 {
                img.set(x, 1, Rgb::splat(3.0));
            }
            let bytes = encode(&img).unwrap();
            let back = decode(&bytes).unwrap();
            check_bound(&img, &back);
            prop_assert_eq!(encode(&back).unwrap(), bytes);
        }
    }
}
