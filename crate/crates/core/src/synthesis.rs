//! Synthetic year strings composed from isolated digit glyphs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    decode_all, hash_sample, is_image_file, require_dir, save_png, sorted_entries, CorpusManifest, DigitGlyph,
    GlyphBank, LoadReport, ManifestRow, Origin, Split, StringSample,
};
use crate::error::{Error, Result};
use crate::label::YearLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    /// Mean border colour of the four source glyphs.
    Border,
    /// A fixed colour, e.g. `[255, 255, 255]` for plain concatenation.
    Flat([u8; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub canvas_height: u32,
    pub canvas_width: u32,
    pub per_class_target: usize,
    pub rng_seed: u64,
    /// Inclusive range of horizontal gaps between neighbouring glyphs, pixels.
    pub spacing_jitter: (i32, i32),
    /// Inclusive range of vertical offsets from the centre line, pixels.
    pub vertical_jitter: (i32, i32),
    /// Glyph height as a fraction of the canvas height.
    pub glyph_height: (f32, f32),
    pub background: Background,
    /// Standard deviation of the additive pixel noise on the background.
    pub noise_std: f32,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            canvas_height: 95,
            canvas_width: 175,
            per_class_target: 1000,
            rng_seed: 0,
            spacing_jitter: (0, 6),
            vertical_jitter: (-5, 5),
            glyph_height: (0.7, 0.9),
            background: Background::Border,
            noise_std: 3.0,
        }
    }
}

impl SynthesisConfig {
    /// Plain left-to-right concatenation on white, no jitter or noise.
    pub fn plain() -> Self {
        Self {
            spacing_jitter: (0, 0),
            vertical_jitter: (0, 0),
            glyph_height: (0.8, 0.8),
            background: Background::Flat([255; 3]),
            noise_std: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthesis: {m}")));
        if self.canvas_height < 8 || self.canvas_width < 8 {
            return bad("canvas must be at least 8x8 pixels");
        }
        if self.spacing_jitter.0 > self.spacing_jitter.1 || self.vertical_jitter.0 > self.vertical_jitter.1 {
            return bad("jitter ranges must have min <= max");
        }
        let (lo, hi) = self.glyph_height;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("glyph_height must satisfy 0 < min <= max <= 1");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be a non-negative number");
        }
        Ok(())
    }
}

fn border_mean(img: &RgbImage) -> [f32; 3] {
    let (w, h) = img.dimensions();
    let mut sum = [0f64; 3];
    let mut n = 0f64;
    for (x, y, p) in img.enumerate_pixels() {
        if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
            for c in 0..3 {
                sum[c] += p[c] as f64;
            }
            n += 1.0;
        }
    }
    sum.map(|s| (s / n) as f32)
}

struct Placement {
    x: i64,
    y: i64,
    w: u32,
    h: u32,
}

const MAX_PLACEMENT_ATTEMPTS: usize = 16;

fn place<R: Rng + ?Sized>(glyphs: &[&DigitGlyph; 4], config: &SynthesisConfig, rng: &mut R) -> Vec<Placement> {
    let ch = config.canvas_height as f32;
    let avail = config.canvas_width as i64;
    for attempt in 0..=MAX_PLACEMENT_ATTEMPTS {
        let fallback = attempt == MAX_PLACEMENT_ATTEMPTS;
        let mut sizes: Vec<(f32, f32)> = glyphs
            .iter()
            .map(|g| {
                let frac = if fallback { config.glyph_height.0 } else { rng.random_range(config.glyph_height.0..=config.glyph_height.1) };
                let h = frac * ch;
                (h * g.image.width() as f32 / g.image.height() as f32, h)
            })
            .collect();
        let gaps: Vec<i64> = (0..3)
            .map(|_| if fallback { 0 } else { rng.random_range(config.spacing_jitter.0..=config.spacing_jitter.1) as i64 })
            .collect();
        let gap_sum: i64 = gaps.iter().sum();
        let glyph_sum: f32 = sizes.iter().map(|s| s.0).sum();
        let room = (avail - gap_sum) as f32;
        if room < 8.0 {
            continue;
        }
        if glyph_sum > room {
            let k = room / glyph_sum;
            sizes.iter_mut().for_each(|s| *s = (s.0 * k, s.1 * k));
        }
        let dims: Vec<(u32, u32)> = sizes.iter().map(|&(w, h)| ((w.floor() as u32).max(1), (h.round() as u32).max(1))).collect();
        let total = dims.iter().map(|d| d.0 as i64).sum::<i64>() + gap_sum;
        if total > avail {
            continue;
        }
        let mut x = if fallback { (avail - total) / 2 } else { rng.random_range(0..=avail - total) };
        let mut out = Vec::with_capacity(4);
        for (i, &(w, h)) in dims.iter().enumerate() {
            let dy = if fallback { 0 } else { rng.random_range(config.vertical_jitter.0..=config.vertical_jitter.1) as i64 };
            let y = ((config.canvas_height as i64 - h as i64) / 2 + dy).clamp(0, (config.canvas_height - h) as i64);
            out.push(Placement { x, y, w, h });
            x += w as i64 + gaps.get(i).copied().unwrap_or(0);
        }
        return out;
    }
    unreachable!("fallback placement always fits")
}

/// Renders four glyphs left to right onto one canvas.
///
/// Each glyph's own paper colour is divided out before it is multiplied onto
/// the canvas, so glyph rectangles do not show as patches.
pub fn compose_string<R: Rng + ?Sized>(
    glyphs: [&DigitGlyph; 4],
    config: &SynthesisConfig,
    rng: &mut R,
    source_id: impl Into<String>,
) -> Result<StringSample> {
    config.validate()?;
    let text: String = glyphs.iter().map(|g| char::from(b'0' + g.label)).collect();
    let label: YearLabel = text.parse()?;
    let placements = place(&glyphs, config, rng);

    let papers: Vec<[f32; 3]> = glyphs.iter().map(|g| border_mean(&g.image)).collect();
    let bg = match config.background {
        Background::Border => {
            let mut m = [0f32; 3];
            for p in &papers {
                (0..3).for_each(|c| m[c] += p[c] / 4.0);
            }
            m
        }
        Background::Flat(c) => c.map(f32::from),
    };
    let noise = Normal::new(0.0f32, config.noise_std).expect("validated noise_std");
    let mut canvas = vec![[0f32; 3]; (config.canvas_width * config.canvas_height) as usize];
    for px in canvas.iter_mut() {
        for c in 0..3 {
            px[c] = if config.noise_std > 0.0 { bg[c] + noise.sample(rng) } else { bg[c] };
        }
    }

    for ((g, p), paper) in glyphs.iter().zip(&placements).zip(&papers) {
        let scaled = imageops::resize(&g.image, p.w, p.h, FilterType::Triangle);
        for (gx, gy, px) in scaled.enumerate_pixels() {
            let (cx, cy) = (p.x + gx as i64, p.y + gy as i64);
            if cx < 0 || cy < 0 || cx >= config.canvas_width as i64 || cy >= config.canvas_height as i64 {
                continue;
            }
            let dst = &mut canvas[(cy as u32 * config.canvas_width + cx as u32) as usize];
            for c in 0..3 {
                let factor = (px[c] as f32 / paper[c].max(1.0)).min(1.0);
                dst[c] *= factor;
            }
        }
    }

    let image = RgbImage::from_fn(config.canvas_width, config.canvas_height, |x, y| {
        let px = canvas[(y * config.canvas_width + x) as usize];
        Rgb(px.map(|v| v.round().clamp(0.0, 255.0) as u8))
    });
    StringSample::new(image, label, Origin::Synthetic, Split::Train, source_id)
}

/// Per-class generator: every class owns its own ChaCha stream under the
/// run seed, so classes can be produced in any order or in parallel.
pub fn class_rng(seed: u64, label: YearLabel) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label.index() as u64);
    rng
}

/// Draws one glyph per digit position, uniformly from that digit's pool.
pub fn draw_glyphs<'a, R: Rng + ?Sized>(bank: &'a GlyphBank, label: YearLabel, rng: &mut R) -> [&'a DigitGlyph; 4] {
    label.digits().map(|d| {
        let pool = bank.pool(d);
        &pool[rng.random_range(0..pool.len())]
    })
}

/// Counts for this corpus: the real training strings actually present, and
/// synthetic strings making up the difference to the per-class target.
pub fn plan_synthesis(real: &[StringSample], manifest: &CorpusManifest, config: &SynthesisConfig) -> Result<CorpusManifest> {
    config.validate()?;
    manifest.validate()?;
    let mut observed = BTreeMap::<YearLabel, usize>::new();
    for s in real.iter().filter(|s| s.origin == Origin::Real && s.split == Split::Train) {
        *observed.entry(s.label).or_default() += 1;
    }
    let target = config.per_class_target;
    let mut rows = Vec::with_capacity(manifest.rows.len());
    for row in &manifest.rows {
        let n = observed.get(&row.label).copied().unwrap_or(0);
        if n > target {
            return Err(Error::Config(format!(
                "per_class_target {target} is below the {n} real training samples of class {}",
                row.label
            )));
        }
        rows.push(ManifestRow { label: row.label, synthetic: target - n, real: n, test: row.test });
    }
    let plan = CorpusManifest { rows };
    plan.validate()?;
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisSummary {
    pub manifest: CorpusManifest,
    /// SHA-256 over every class's sample digest, in class order.
    pub corpus_hash: String,
}

/// Generates every synthetic sample in `plan`, handing each to `sink`
/// together with its per-class counter. Classes run in parallel; samples
/// within a class arrive in counter order.
pub fn generate_synthetic<F>(bank: &GlyphBank, plan: &CorpusManifest, config: &SynthesisConfig, sink: F) -> Result<SynthesisSummary>
where
    F: Fn(usize, StringSample) -> Result<()> + Sync,
{
    config.validate()?;
    let digests: Vec<Vec<u8>> = plan
        .rows
        .par_iter()
        .map(|row| {
            let mut rng = class_rng(config.rng_seed, row.label);
            let mut h = Sha256::new();
            for k in 0..row.synthetic {
                let glyphs = draw_glyphs(bank, row.label, &mut rng);
                let sample = compose_string(glyphs, config, &mut rng, format!("synthetic/{}/{k:05}", row.label))?;
                hash_sample(&mut h, &sample);
                sink(k, sample)?;
            }
            Ok(h.finalize().to_vec())
        })
        .collect::<Result<_>>()?;
    let mut h = Sha256::new();
    digests.iter().for_each(|d| h.update(d));
    Ok(SynthesisSummary { manifest: plan.clone(), corpus_hash: hex::encode(h.finalize()) })
}

/// The balanced training set in memory: the real training strings followed
/// by generated ones, class by class.
pub fn build_training_set(
    bank: &GlyphBank,
    real: &[StringSample],
    manifest: &CorpusManifest,
    config: &SynthesisConfig,
) -> Result<(Vec<StringSample>, SynthesisSummary)> {
    let plan = plan_synthesis(real, manifest, config)?;
    let classes = plan.labels();
    let generated = std::sync::Mutex::new(BTreeMap::<(YearLabel, usize), StringSample>::new());
    let summary = generate_synthetic(bank, &plan, config, |k, s| {
        generated.lock().expect("no panics while holding the lock").insert((s.label, k), s);
        Ok(())
    })?;
    let mut out: Vec<StringSample> = real
        .iter()
        .filter(|s| s.origin == Origin::Real && s.split == Split::Train && classes.contains(&s.label))
        .cloned()
        .collect();
    out.extend(generated.into_inner().expect("lock not poisoned").into_values());
    Ok((out, summary))
}

/// Streams the synthetic corpus to `<out>/synthetic/<year>/<counter>.png`.
pub fn write_synthetic(bank: &GlyphBank, plan: &CorpusManifest, config: &SynthesisConfig, out: &Path) -> Result<SynthesisSummary> {
    for row in &plan.rows {
        let dir = out.join("synthetic").join(row.label.text());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    generate_synthetic(bank, plan, config, |k, s| {
        let path = out.join("synthetic").join(s.label.text()).join(format!("{k:05}.png"));
        save_png(&s.image, &path)
    })
}

/// Reads a tree written by [`write_synthetic`] (the directory that holds
/// the per-year folders).
pub fn load_synthetic(root: &Path) -> Result<(Vec<StringSample>, LoadReport)> {
    require_dir(root)?;
    let mut report = LoadReport::default();
    let mut jobs = Vec::new();
    for dir in sorted_entries(root)? {
        if !dir.is_dir() {
            continue;
        }
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let Ok(label) = name.parse::<YearLabel>() else {
            report.skip(&dir, "not a year class in 1890-1920");
            continue;
        };
        jobs.extend(sorted_entries(&dir)?.into_iter().filter(|p| is_image_file(p)).map(|p| (label, p)));
    }
    let labels: Vec<YearLabel> = jobs.iter().map(|(l, _)| *l).collect();
    let decoded = decode_all(jobs.into_iter().map(|(_, p)| p).collect());
    let mut out = Vec::with_capacity(decoded.len());
    for (label, (path, r)) in labels.into_iter().zip(decoded) {
        match r {
            Ok(img) => out.push(StringSample::new(img, label, Origin::Synthetic, Split::Train, path.display().to_string())?),
            Err(e) => report.skip(&path, e),
        }
    }
    Ok((out, report))
}
