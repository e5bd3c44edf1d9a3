//! Procedurally drawn digits and year strings.
//!
//! Used by tests, the acceptance smokes and demos where no scanned corpus is
//! available. Digits are stroke skeletons in a unit box, perturbed per
//! sample (slant, point jitter, stroke width, ink and paper colour) and
//! rasterised with anti-aliased distance-to-segment coverage.
//!
//! Glyphs ([`glyph`]) are drawn one digit per image, like a cleaned isolated
//! digit collection. "Real" strings ([`real_string`]) are drawn directly in
//! one pass on a shared paper, so they differ in process from composed
//! synthetic strings.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{CorpusManifest, DigitGlyph, GlyphBank, Origin, Split, StringSample};
use crate::error::Result;
use crate::label::YearLabel;

type Stroke = Vec<(f32, f32)>;

fn arc(cx: f32, cy: f32, rx: f32, ry: f32, from_deg: f32, to_deg: f32) -> Stroke {
    let steps = (((to_deg - from_deg).abs() / 15.0).ceil() as usize).max(2);
    (0..=steps)
        .map(|i| {
            let a = (from_deg + (to_deg - from_deg) * i as f32 / steps as f32).to_radians();
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Skeleton of a digit in the unit box, y pointing down.
fn skeleton(digit: u8) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.38, 0.48, 0.0, 360.0)],
        1 => vec![vec![(0.28, 0.22), (0.55, 0.0), (0.55, 1.0)]],
        2 => {
            let mut s = arc(0.5, 0.3, 0.35, 0.28, 190.0, 400.0);
            s.extend([(0.1, 1.0), (0.92, 1.0)]);
            vec![s]
        }
        3 => vec![arc(0.5, 0.27, 0.33, 0.25, 200.0, 450.0), arc(0.5, 0.74, 0.38, 0.26, 270.0, 510.0)],
        4 => vec![vec![(0.7, 1.0), (0.7, 0.0), (0.08, 0.68), (0.92, 0.68)]],
        5 => {
            let mut s = vec![(0.85, 0.0), (0.25, 0.0)];
            s.extend(arc(0.48, 0.68, 0.37, 0.3, 220.0, 500.0));
            vec![s]
        }
        6 => {
            let mut s = vec![(0.72, 0.0), (0.3, 0.35)];
            s.extend(arc(0.5, 0.72, 0.35, 0.27, 180.0, 540.0));
            vec![s]
        }
        7 => vec![vec![(0.08, 0.0), (0.92, 0.0), (0.4, 1.0)]],
        8 => vec![arc(0.5, 0.26, 0.3, 0.24, 0.0, 360.0), arc(0.5, 0.73, 0.36, 0.27, 0.0, 360.0)],
        9 => vec![arc(0.5, 0.3, 0.35, 0.28, 0.0, 360.0), vec![(0.85, 0.3), (0.7, 1.0)]],
        _ => panic!("digit out of range: {digit}"),
    }
}

/// Per-sample handwriting parameters.
#[derive(Debug, Clone, Copy)]
struct Hand {
    slant: f32,
    thickness: f32,
    jitter: f32,
    ink: [f32; 3],
}

impl Hand {
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            slant: rng.random_range(-0.25..0.15),
            thickness: rng.random_range(2.0..4.0),
            jitter: rng.random_range(0.01..0.035),
            ink: [rng.random_range(15.0..70.0), rng.random_range(10.0..50.0), rng.random_range(10.0..45.0)],
        }
    }
}

fn paper<R: Rng + ?Sized>(rng: &mut R) -> [f32; 3] {
    [rng.random_range(215.0..245.0), rng.random_range(200.0..232.0), rng.random_range(165.0..212.0)]
}

/// Anti-aliased coverage buffer.
struct Coverage {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Coverage {
    fn new(w: usize, h: usize) -> Self {
        Self { w, h, data: vec![0.0; w * h] }
    }

    fn segment(&mut self, a: (f32, f32), b: (f32, f32), thickness: f32) {
        let r = thickness / 2.0 + 1.0;
        let x0 = (a.0.min(b.0) - r).floor().max(0.0) as usize;
        let x1 = ((a.0.max(b.0) + r).ceil() as usize).min(self.w);
        let y0 = (a.1.min(b.1) - r).floor().max(0.0) as usize;
        let y1 = ((a.1.max(b.1) + r).ceil() as usize).min(self.h);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = (dx * dx + dy * dy).max(1e-6);
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                let t = (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0);
                let (qx, qy) = (a.0 + t * dx - px, a.1 + t * dy - py);
                let c = (thickness / 2.0 + 0.5 - (qx * qx + qy * qy).sqrt()).clamp(0.0, 1.0);
                let cell = &mut self.data[y * self.w + x];
                *cell = cell.max(c);
            }
        }
    }

    /// Draws `digit` into the box at `(x, y)` of size `bw × bh` pixels.
    fn digit<R: Rng + ?Sized>(&mut self, digit: u8, hand: &Hand, (x, y, bw, bh): (f32, f32, f32, f32), rng: &mut R) {
        let jitter = Normal::new(0.0f32, hand.jitter).expect("positive std");
        for stroke in skeleton(digit) {
            let pts: Vec<(f32, f32)> = stroke
                .iter()
                .map(|&(u, v)| {
                    let (u, v) = (u + jitter.sample(rng), v + jitter.sample(rng));
                    let u = u + hand.slant * (0.5 - v);
                    (x + u * bw, y + v * bh)
                })
                .collect();
            for w in pts.windows(2) {
                self.segment(w[0], w[1], hand.thickness);
            }
        }
    }

    fn render<R: Rng + ?Sized>(&self, paper: [f32; 3], ink: [f32; 3], noise_std: f32, rng: &mut R) -> RgbImage {
        let noise = Normal::new(0.0f32, noise_std.max(1e-6)).expect("positive std");
        RgbImage::from_fn(self.w as u32, self.h as u32, |x, y| {
            let c = self.data[y as usize * self.w + x as usize];
            let n = noise.sample(rng);
            Rgb(std::array::from_fn(|k| (paper[k] * (1.0 - c) + ink[k] * c + n).round().clamp(0.0, 255.0) as u8))
        })
    }
}

/// One isolated digit on its own small paper patch.
pub fn glyph<R: Rng + ?Sized>(digit: u8, rng: &mut R) -> RgbImage {
    let hand = Hand::sample(rng);
    let h = rng.random_range(48.0f32..68.0);
    let w = h * rng.random_range(0.5..0.72);
    let margin = 6.0;
    let mut cov = Coverage::new((w + 2.0 * margin) as usize, (h + 2.0 * margin) as usize);
    cov.digit(digit, &hand, (margin, margin, w, h), rng);
    let paper = paper(rng);
    cov.render(paper, hand.ink, 2.5, rng)
}

/// A bank of `per_digit` procedurally drawn glyphs for each digit.
pub fn glyph_bank(per_digit: usize, seed: u64) -> GlyphBank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let glyphs = (0..10u8).flat_map(|d| (0..per_digit).map(move |i| (d, i))).map(|(d, i)| {
        DigitGlyph::new(glyph(d, &mut rng), d, format!("fixture/{d}/{i}")).expect("fixture glyphs are valid")
    });
    GlyphBank::from_glyphs(glyphs.collect::<Vec<_>>()).expect("every digit drawn")
}

/// A 175×95 year string written in one hand on one sheet, digits sometimes
/// touching.
pub fn real_string<R: Rng + ?Sized>(label: YearLabel, rng: &mut R) -> RgbImage {
    let (cw, ch) = (175usize, 95usize);
    let hand = Hand::sample(rng);
    let bh = rng.random_range(52.0f32..72.0);
    let bw = bh * rng.random_range(0.45..0.62);
    let gaps: Vec<f32> = (0..3).map(|_| rng.random_range(-4.0..8.0)).collect();
    let total = 4.0 * bw + gaps.iter().sum::<f32>();
    let scale = ((cw as f32 - 8.0) / total).min(1.0);
    let (bw, bh) = (bw * scale, bh * scale);
    let mut x = rng.random_range(4.0..(cw as f32 - total * scale - 4.0).max(4.01));
    let base = (ch as f32 - bh) / 2.0;
    let mut cov = Coverage::new(cw, ch);
    for (i, d) in label.digits().into_iter().enumerate() {
        let y = (base + rng.random_range(-4.0..4.0)).clamp(1.0, ch as f32 - bh - 1.0);
        cov.digit(d, &hand, (x, y, bw, bh), rng);
        x += bw + gaps.get(i).map_or(0.0, |g| g * scale);
    }
    let paper = paper(rng);
    cov.render(paper, hand.ink, 4.0, rng)
}

/// Real train and test strings with the counts listed in `manifest`.
pub fn real_corpus(manifest: &CorpusManifest, seed: u64) -> Result<Vec<StringSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for row in &manifest.rows {
        for (split, n) in [(Split::Train, row.real), (Split::Test, row.test)] {
            for i in 0..n {
                let img = real_string(row.label, &mut rng);
                let id = format!("fixture/{}/{}/{i}", split.dir_name(), row.label);
                out.push(StringSample::new(img, row.label, Origin::Real, split, id)?);
            }
        }
    }
    Ok(out)
}
