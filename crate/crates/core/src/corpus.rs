//! String crops, isolated digit glyphs and the per-class count manifest.
//!
//! On disk, strings live under `<root>/{train,test}/<year>/*` and glyphs
//! under `<root>/<digit>/*`; labels come from the directory names.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::label::YearLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// A cleaned isolated digit image.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitGlyph {
    pub image: RgbImage,
    pub label: u8,
    pub source_id: String,
}

impl DigitGlyph {
    pub fn new(image: RgbImage, label: u8, source_id: impl Into<String>) -> Result<Self> {
        let source_id = source_id.into();
        if label > 9 {
            return Err(Error::InvalidSample(format!("{source_id}: digit label {label}")));
        }
        if image.width() == 0 || image.height() == 0 {
            return Err(Error::InvalidSample(format!("{source_id}: empty glyph image")));
        }
        Ok(Self { image, label, source_id })
    }
}

/// A 4-digit string image with its year label.
#[derive(Debug, Clone, PartialEq)]
pub struct StringSample {
    pub image: RgbImage,
    pub label: YearLabel,
    pub origin: Origin,
    pub split: Split,
    pub source_id: String,
}

impl StringSample {
    /// Synthetic samples are training material only; asking for a synthetic
    /// test sample is an error.
    pub fn new(image: RgbImage, label: YearLabel, origin: Origin, split: Split, source_id: impl Into<String>) -> Result<Self> {
        let source_id = source_id.into();
        if origin == Origin::Synthetic && split == Split::Test {
            return Err(Error::InvalidSample(format!("{source_id}: synthetic sample tagged as test")));
        }
        if image.width() == 0 || image.height() == 0 {
            return Err(Error::InvalidSample(format!("{source_id}: empty image")));
        }
        Ok(Self { image, label, origin, split, source_id })
    }
}

/// Glyphs grouped by digit. Every digit 0–9 has at least one glyph.
#[derive(Debug, Clone)]
pub struct GlyphBank {
    by_digit: [Vec<DigitGlyph>; 10],
}

impl GlyphBank {
    pub fn from_glyphs(glyphs: impl IntoIterator<Item = DigitGlyph>) -> Result<Self> {
        let mut by_digit: [Vec<DigitGlyph>; 10] = Default::default();
        for g in glyphs {
            by_digit[g.label as usize].push(g);
        }
        if let Some(d) = by_digit.iter().position(Vec::is_empty) {
            return Err(Error::MissingDigit(d as u8));
        }
        Ok(Self { by_digit })
    }

    pub fn pool(&self, digit: u8) -> &[DigitGlyph] {
        &self.by_digit[digit as usize]
    }

    pub fn len(&self) -> usize {
        self.by_digit.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &DigitGlyph> {
        self.by_digit.iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

/// Files that were found but not loaded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub skipped: Vec<SkippedFile>,
}

impl LoadReport {
    pub(crate) fn skip(&mut self, path: &Path, reason: impl Into<String>) {
        let reason = reason.into();
        log::warn!("skipping {}: {reason}", path.display());
        self.skipped.push(SkippedFile { path: path.to_path_buf(), reason });
    }
}

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

pub(crate) fn is_image_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

pub(crate) fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn decode(path: &Path) -> std::result::Result<RgbImage, String> {
    let img = image::open(path).map_err(|e| e.to_string())?.to_rgb8();
    if img.width() == 0 || img.height() == 0 {
        return Err("empty image".into());
    }
    Ok(img)
}

/// Decodes files in parallel; results come back in input order.
pub(crate) fn decode_all(paths: Vec<PathBuf>) -> Vec<(PathBuf, std::result::Result<RgbImage, String>)> {
    paths
        .into_par_iter()
        .map(|p| {
            let r = decode(&p);
            (p, r)
        })
        .collect()
}

pub(crate) fn require_dir(root: &Path) -> Result<()> {
    if !root.is_dir() {
        return Err(Error::MissingPath(root.to_path_buf()));
    }
    Ok(())
}

/// Reads `<root>/<digit>/*` image files. Undecodable files are skipped and
/// listed in the returned report.
pub fn load_glyph_bank(root: &Path) -> Result<(GlyphBank, LoadReport)> {
    require_dir(root)?;
    let mut report = LoadReport::default();
    let mut jobs = Vec::new();
    for dir in sorted_entries(root)? {
        if !dir.is_dir() {
            continue;
        }
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let digit = match name.parse::<u8>() {
            Ok(d) if d <= 9 && name.len() == 1 => d,
            _ => {
                report.skip(&dir, "directory name is not a digit 0-9");
                continue;
            }
        };
        jobs.extend(sorted_entries(&dir)?.into_iter().filter(|p| is_image_file(p)).map(|p| (digit, p)));
    }
    let digits: Vec<u8> = jobs.iter().map(|(d, _)| *d).collect();
    let decoded = decode_all(jobs.into_iter().map(|(_, p)| p).collect());
    let mut glyphs = Vec::with_capacity(decoded.len());
    for (digit, (path, result)) in digits.into_iter().zip(decoded) {
        match result {
            Ok(img) => glyphs.push(DigitGlyph::new(img, digit, path.display().to_string())?),
            Err(e) => report.skip(&path, e),
        }
    }
    if glyphs.is_empty() {
        return Err(Error::NoGlyphs(root.to_path_buf()));
    }
    Ok((GlyphBank::from_glyphs(glyphs)?, report))
}

/// Reads every string image under `<root>/{train,test}/<year>/`, sorted by
/// path. Year directories outside 1890–1920 are skipped with a warning.
/// A missing split directory is treated as empty.
pub fn scan_string_corpus(root: &Path) -> Result<(Vec<StringSample>, LoadReport)> {
    require_dir(root)?;
    let mut report = LoadReport::default();
    let mut jobs = Vec::new();
    for split in [Split::Test, Split::Train] {
        let split_dir = root.join(split.dir_name());
        if !split_dir.is_dir() {
            continue;
        }
        for dir in sorted_entries(&split_dir)? {
            if !dir.is_dir() {
                continue;
            }
            let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let Ok(label) = name.parse::<YearLabel>() else {
                report.skip(&dir, "not a year class in 1890-1920");
                continue;
            };
            jobs.extend(sorted_entries(&dir)?.into_iter().filter(|p| is_image_file(p)).map(|p| (label, split, p)));
        }
    }
    let meta: Vec<(YearLabel, Split)> = jobs.iter().map(|(l, s, _)| (*l, *s)).collect();
    let decoded = decode_all(jobs.into_iter().map(|(_, _, p)| p).collect());
    let mut samples = Vec::with_capacity(decoded.len());
    for ((label, split), (path, result)) in meta.into_iter().zip(decoded) {
        match result {
            Ok(img) => samples.push(StringSample::new(img, label, Origin::Real, split, path.display().to_string())?),
            Err(e) => report.skip(&path, e),
        }
    }
    Ok((samples, report))
}

/// Loads the real string corpus and checks its per-class counts against
/// `manifest`. Classes that the manifest does not list are dropped.
pub fn load_string_corpus(root: &Path, manifest: &CorpusManifest) -> Result<(Vec<StringSample>, LoadReport)> {
    manifest.validate()?;
    let (mut samples, mut report) = scan_string_corpus(root)?;
    let listed: BTreeMap<YearLabel, &ManifestRow> = manifest.rows.iter().map(|r| (r.label, r)).collect();
    let mut dropped = BTreeMap::<YearLabel, usize>::new();
    samples.retain(|s| {
        let keep = listed.contains_key(&s.label);
        if !keep {
            *dropped.entry(s.label).or_default() += 1;
        }
        keep
    });
    for (label, n) in dropped {
        report.skip(&root.join(label.text()), format!("class {label} not in manifest ({n} files)"));
    }
    let counts = count_by_class(&samples);
    let mut diff = String::new();
    for row in &manifest.rows {
        let (real, test) = counts.get(&row.label).copied().unwrap_or((0, 0));
        if real != row.real || test != row.test {
            let _ = writeln!(
                diff,
                "  {}: real train {real} (manifest {}), test {test} (manifest {})",
                row.label, row.real, row.test
            );
        }
    }
    if !diff.is_empty() {
        return Err(Error::ManifestMismatch(diff));
    }
    Ok((samples, report))
}

/// `(real train, test)` counts per class.
pub fn count_by_class(samples: &[StringSample]) -> BTreeMap<YearLabel, (usize, usize)> {
    let mut out = BTreeMap::new();
    for s in samples {
        let e: &mut (usize, usize) = out.entry(s.label).or_default();
        match (s.origin, s.split) {
            (Origin::Real, Split::Train) => e.0 += 1,
            (_, Split::Test) => e.1 += 1,
            _ => {}
        }
    }
    out
}

pub(crate) fn hash_sample(h: &mut Sha256, s: &StringSample) {
    h.update(s.label.year().to_le_bytes());
    h.update([s.origin as u8, s.split as u8]);
    h.update(s.image.width().to_le_bytes());
    h.update(s.image.height().to_le_bytes());
    h.update(s.image.as_raw());
}

/// Content hash over labels, tags and pixels, in order.
pub fn corpus_hash(samples: &[StringSample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        hash_sample(&mut h, s);
    }
    hex::encode(h.finalize())
}

/// Writes samples as PNG files under `<root>/<split>/<year>/<nnnnn>.png`,
/// numbering files per class and split in input order.
pub fn write_string_tree(root: &Path, samples: &[StringSample]) -> Result<()> {
    let mut counters = BTreeMap::<(Split, YearLabel), usize>::new();
    for s in samples {
        let n = counters.entry((s.split, s.label)).or_default();
        let dir = root.join(s.split.dir_name()).join(s.label.text());
        if *n == 0 {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        save_png(&s.image, &dir.join(format!("{:05}.png", *n)))?;
        *n += 1;
    }
    Ok(())
}

/// Writes glyphs as `<root>/<digit>/<nnnnn>.png`.
pub fn write_glyph_tree(root: &Path, bank: &GlyphBank) -> Result<()> {
    for d in 0..10u8 {
        let dir = root.join(d.to_string());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, g) in bank.pool(d).iter().enumerate() {
            save_png(&g.image, &dir.join(format!("{i:05}.png")))?;
        }
    }
    Ok(())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub label: YearLabel,
    pub synthetic: usize,
    pub real: usize,
    pub test: usize,
}

/// Per-class synthetic / real-train / test counts. Every class reaches the
/// same training total (`synthetic + real`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub rows: Vec<ManifestRow>,
}

const REFERENCE_REAL: [usize; 31] = [
    0, 0, 0, 0, 0, 125, 154, 154, 175, 167, 206, 239, 235, 236, 219, 191, 170, 176, 156, 137, 138, 117, 104, 90, 91, 75,
    45, 38, 17, 19, 0,
];
const REFERENCE_TEST: [usize; 31] = [
    15, 15, 15, 15, 15, 100, 100, 100, 100, 100, 100, 100, 100, 100, 100, 100, 100, 100, 100, 100, 100, 100, 100, 100,
    100, 100, 100, 100, 100, 100, 76,
];
pub const MANIFEST_HEADER: &str = "label,synthetic,real,test";

impl CorpusManifest {
    /// The reference per-class protocol: 1000 training strings per year,
    /// real crops topped up with synthetic ones, plus the real test split.
    pub fn reference() -> Self {
        let rows = YearLabel::all()
            .map(|label| {
                let i = label.index();
                ManifestRow { label, synthetic: 1000 - REFERENCE_REAL[i], real: REFERENCE_REAL[i], test: REFERENCE_TEST[i] }
            })
            .collect();
        Self { rows }
    }

    /// Builds a manifest that tops each class up to `target` training samples.
    pub fn from_counts(counts: &BTreeMap<YearLabel, (usize, usize)>, target: usize) -> Result<Self> {
        let mut rows = Vec::with_capacity(counts.len());
        for (&label, &(real, test)) in counts {
            if real > target {
                return Err(Error::InvalidManifest(format!(
                    "class {label} has {real} real samples, more than the per-class target {target}"
                )));
            }
            rows.push(ManifestRow { label, synthetic: target - real, real, test });
        }
        let m = Self { rows };
        m.validate()?;
        Ok(m)
    }

    /// Keeps only the listed classes.
    pub fn restrict(&self, classes: &[YearLabel]) -> Self {
        Self { rows: self.rows.iter().filter(|r| classes.contains(&r.label)).copied().collect() }
    }

    pub fn row(&self, label: YearLabel) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn labels(&self) -> Vec<YearLabel> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn per_class_target(&self) -> Option<usize> {
        self.rows.first().map(|r| r.synthetic + r.real)
    }

    /// `(synthetic, real, test)` column sums.
    pub fn totals(&self) -> (usize, usize, usize) {
        self.rows.iter().fold((0, 0, 0), |(s, r, t), row| (s + row.synthetic, r + row.real, t + row.test))
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::InvalidManifest("no classes".into()));
        }
        if let Some(w) = self.rows.windows(2).find(|w| w[0].label >= w[1].label) {
            return Err(Error::InvalidManifest(format!(
                "classes must be unique and ascending ({} before {})",
                w[0].label, w[1].label
            )));
        }
        let target = self.per_class_target().expect("non-empty");
        if let Some(r) = self.rows.iter().find(|r| r.synthetic + r.real != target) {
            return Err(Error::InvalidManifest(format!(
                "class {} trains on {} samples, other classes on {target}",
                r.label,
                r.synthetic + r.real
            )));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        self.validate()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::InvalidManifest(e.to_string());
        w.write_record(MANIFEST_HEADER.split(',')).map_err(io)?;
        for r in &self.rows {
            w.write_record([r.label.text(), r.synthetic.to_string(), r.real.to_string(), r.test.to_string()])
                .map_err(io)?;
        }
        let (s, r, t) = self.totals();
        w.write_record(["TOTAL".to_string(), s.to_string(), r.to_string(), t.to_string()]).map_err(io)?;
        let bytes = w.into_inner().map_err(|e| Error::InvalidManifest(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("ascii"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidManifest(msg);
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header: Vec<String> =
            reader.headers().map_err(|e| bad(e.to_string()))?.iter().map(|h| h.trim().to_string()).collect();
        if header.join(",") != MANIFEST_HEADER {
            return Err(bad(format!("expected header `{MANIFEST_HEADER}`, found `{}`", header.join(","))));
        }
        let mut rows = Vec::new();
        let mut stored_totals = None;
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if stored_totals.is_some() {
                return Err(bad("rows after the TOTAL row".into()));
            }
            let num = |i: usize| -> Result<usize> {
                rec.get(i)
                    .and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| bad(format!("row {}: column {} is not a count", line + 2, i + 1)))
            };
            let counts = (num(1)?, num(2)?, num(3)?);
            if rec.get(0).map(str::trim) == Some("TOTAL") {
                stored_totals = Some(counts);
            } else {
                let label = rec.get(0).unwrap_or_default().parse()?;
                rows.push(ManifestRow { label, synthetic: counts.0, real: counts.1, test: counts.2 });
            }
        }
        let m = Self { rows };
        m.validate()?;
        match stored_totals {
            None => Err(bad("missing TOTAL row".into())),
            Some(t) if t != m.totals() => {
                Err(bad(format!("TOTAL row {t:?} does not equal the column sums {:?}", m.totals())))
            }
            Some(_) => Ok(m),
        }
    }
}

pub fn write_manifest(manifest: &CorpusManifest, path: &Path) -> Result<()> {
    let text = manifest.to_csv()?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<CorpusManifest> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CorpusManifest::from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_rows_and_totals() {
        let m = CorpusManifest::reference();
        m.validate().unwrap();
        assert_eq!(m.totals(), (27526, 3474, 2651));
        let r = m.row("1895".parse().unwrap()).unwrap();
        assert_eq!((r.synthetic, r.real, r.test), (875, 125, 100));
        let r = m.row("1890".parse().unwrap()).unwrap();
        assert_eq!((r.synthetic, r.real, r.test), (1000, 0, 15));
        let r = m.row("1918".parse().unwrap()).unwrap();
        assert_eq!(r.synthetic, 983);
    }

    #[test]
    fn csv_has_fixed_header_and_total_row() {
        let text = CorpusManifest::reference().to_csv().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "label,synthetic,real,test");
        assert_eq!(lines[1], "1890,1000,0,15");
        assert_eq!(*lines.last().unwrap(), "TOTAL,27526,3474,2651");
        assert_eq!(lines.len(), 33);
    }

    #[test]
    fn unbalanced_manifest_is_refused() {
        let mut m = CorpusManifest::reference();
        m.rows[3].synthetic -= 1;
        assert!(matches!(m.to_csv(), Err(Error::InvalidManifest(_))));
    }

    #[test]
    fn tampered_total_is_rejected() {
        let text = CorpusManifest::reference().to_csv().unwrap().replace("TOTAL,27526", "TOTAL,27527");
        assert!(CorpusManifest::from_csv(&text).is_err());
    }

    #[test]
    fn synthetic_test_sample_is_rejected() {
        let img = RgbImage::new(4, 4);
        let label = "1900".parse().unwrap();
        assert!(StringSample::new(img.clone(), label, Origin::Synthetic, Split::Test, "x").is_err());
        assert!(StringSample::new(img, label, Origin::Real, Split::Test, "x").is_ok());
    }
}
