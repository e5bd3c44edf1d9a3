//! The three recognizers and their decoding rules.
//!
//! * `specific_task`: VGG-16 trunk, shared dense bottleneck, four 10-way
//!   heads (one per digit position) fused by a product of maxima.
//! * `crnn`: convolutional frame extractor, two bidirectional GRU pairs and
//!   a per-frame 11-way softmax (10 digits + blank) read by greedy CTC.
//! * `vgg16_native`: VGG-16 trunk with the classic dense head over the 31
//!   year classes.

mod bundle;
mod nets;

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use bundle::{LabelMap, ModelBundle, SCHEMA_VERSION};
pub use nets::{crnn_features, vgg16_features, BatchLoss, CrnnNet, Network, NativeNet, Output, SpecificTaskNet};

use crate::corpus::StringSample;
use crate::error::{Error, Result};
use crate::label::{YearLabel, NUM_CLASSES};

/// Index of the CTC blank in the CRNN alphabet; digits occupy 0–9.
pub const BLANK: usize = 10;
pub const CRNN_CLASSES: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchId {
    SpecificTask,
    Crnn,
    Vgg16Native,
}

impl ArchId {
    pub const ALL: [ArchId; 3] = [ArchId::SpecificTask, ArchId::Crnn, ArchId::Vgg16Native];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchId::SpecificTask => "specific_task",
            ArchId::Crnn => "crnn",
            ArchId::Vgg16Native => "vgg16_native",
        }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchId::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}` (expected specific_task, crnn or vgg16_native)")))
    }
}

/// Architecture hyper-parameters. `width_divisor` shrinks every channel and
/// dense width by the same factor for fast smoke runs; 1 is the full model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub arch: ArchId,
    pub width_divisor: usize,
    pub batch_norm: bool,
    pub input_height: usize,
    pub input_width: usize,
    pub bottleneck_units: usize,
    pub gru_units: usize,
    pub dense_units: usize,
}

impl ArchSpec {
    pub fn new(arch: ArchId) -> Self {
        Self {
            arch,
            width_divisor: 1,
            batch_norm: arch == ArchId::SpecificTask,
            input_height: 96,
            input_width: 176,
            bottleneck_units: 512,
            gru_units: 128,
            dense_units: 4096,
        }
    }

    pub fn with_width_divisor(mut self, divisor: usize) -> Self {
        self.width_divisor = divisor.max(1);
        self
    }

    pub fn scaled(&self, width: usize) -> usize {
        (width / self.width_divisor).max(1)
    }
}

/// A probability distribution over the ten digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DigitDistribution {
    probs: [f64; 10],
}

impl DigitDistribution {
    pub fn new(probs: [f64; 10]) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidSample(format!("not a distribution (sum {sum})")));
        }
        Ok(Self { probs })
    }

    /// Softmax of `logits`.
    pub fn from_logits(logits: &[f64; 10]) -> Self {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e = logits.map(|l| (l - m).exp());
        let z: f64 = e.iter().sum();
        Self { probs: e.map(|v| v / z) }
    }

    /// Renormalises single-precision network output.
    pub(crate) fn from_f32(row: &[f32]) -> Self {
        let mut probs = [0f64; 10];
        probs.iter_mut().zip(row).for_each(|(p, &v)| *p = v.max(0.0) as f64);
        let z: f64 = probs.iter().sum();
        Self { probs: probs.map(|p| p / z) }
    }

    pub fn probs(&self) -> &[f64; 10] {
        &self.probs
    }

    /// Most probable digit; ties go to the lower digit.
    pub fn argmax(&self) -> u8 {
        argmax(&self.probs) as u8
    }

    pub fn max(&self) -> f64 {
        self.probs[self.argmax() as usize]
    }
}

fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// One decoded string.
#[derive(Debug, Clone, PartialEq)]
pub struct StringPrediction {
    pub text: String,
    /// Specific-task only.
    pub per_position: Option<[DigitDistribution; 4]>,
    /// Specific-task: product of the per-position maxima. CRNN: probability
    /// of the greedy frame path. Native: the top class probability.
    pub confidence: f64,
    /// CRNN only: `T × 11` per-frame distributions.
    pub frame_probs: Option<Array2<f32>>,
    /// Native only: distribution over the 31 year classes.
    pub class_probs: Option<Vec<f64>>,
}

impl AsRef<str> for StringPrediction {
    fn as_ref(&self) -> &str {
        &self.text
    }
}

/// Reads each position's most probable digit; the confidence is the
/// product of the four maxima.
pub fn fuse_positions(per_position: [DigitDistribution; 4]) -> StringPrediction {
    let text = per_position.iter().map(|d| char::from(b'0' + d.argmax())).collect();
    let confidence = per_position.iter().map(DigitDistribution::max).product();
    StringPrediction { text, per_position: Some(per_position), confidence, frame_probs: None, class_probs: None }
}

/// Collapses runs of equal symbols, then drops blanks.
pub fn ctc_collapse(path: &[usize]) -> String {
    let mut out = String::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != BLANK {
            out.push(char::from(b'0' + s as u8));
        }
        prev = Some(s);
    }
    out
}

/// Greedy transcription of `T × 11` frame distributions.
pub fn ctc_greedy_decode(frame_probs: &ArrayView2<'_, f32>) -> String {
    ctc_collapse(&best_path(frame_probs))
}

fn best_path(frame_probs: &ArrayView2<'_, f32>) -> Vec<usize> {
    frame_probs.outer_iter().map(|row| argmax(row.as_slice().expect("contiguous frame"))).collect()
}

pub(crate) fn crnn_prediction(frames: Array2<f32>) -> StringPrediction {
    let path = best_path(&frames.view());
    let confidence = path.iter().enumerate().map(|(t, &s)| frames[[t, s]] as f64).product();
    StringPrediction { text: ctc_collapse(&path), per_position: None, confidence, frame_probs: Some(frames), class_probs: None }
}

pub(crate) fn native_prediction(row: &[f32]) -> StringPrediction {
    let z: f64 = row.iter().map(|&p| p as f64).sum();
    let probs: Vec<f64> = row.iter().map(|&p| p as f64 / z).collect();
    let k = argmax(&probs);
    let text = YearLabel::from_index(k).expect("31 outputs").text();
    StringPrediction { text, per_position: None, confidence: probs[k], frame_probs: None, class_probs: Some(probs) }
}

impl Output {
    /// Decodes every row of a batch output.
    pub fn decode(&self) -> Vec<StringPrediction> {
        match self {
            Output::Positions(p) => p
                .outer_iter()
                .map(|sample| {
                    let d: [DigitDistribution; 4] =
                        std::array::from_fn(|i| DigitDistribution::from_f32(sample.row(i).as_slice().expect("contiguous")));
                    fuse_positions(d)
                })
                .collect(),
            Output::Frames(f) => f.outer_iter().map(|s| crnn_prediction(s.to_owned())).collect(),
            Output::Classes(c) => c.outer_iter().map(|r| native_prediction(r.as_slice().expect("contiguous"))).collect(),
        }
    }
}

/// Training target for one label, in the encoding each architecture uses.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Four one-hot 10-vectors.
    Positions([[f32; 10]; 4]),
    /// Digit indices for CTC.
    Sequence(Vec<usize>),
    /// One-hot over the 31 year classes.
    Class([f32; NUM_CLASSES]),
}

impl Target {
    pub fn for_label(arch: ArchId, label: YearLabel) -> Self {
        match arch {
            ArchId::SpecificTask => Target::Positions(label.digits().map(|d| {
                let mut v = [0.0; 10];
                v[d as usize] = 1.0;
                v
            })),
            ArchId::Crnn => Target::Sequence(label.digits().iter().map(|&d| d as usize).collect()),
            ArchId::Vgg16Native => {
                let mut v = [0.0; NUM_CLASSES];
                v[label.index()] = 1.0;
                Target::Class(v)
            }
        }
    }

    /// Hot indices of one-hot targets, or the sequence itself.
    pub fn indices(&self) -> Vec<usize> {
        match self {
            Target::Positions(p) => p.iter().map(|v| argmax(v)).collect(),
            Target::Sequence(s) => s.clone(),
            Target::Class(v) => vec![argmax(v)],
        }
    }
}

const PREDICT_BATCH: usize = 16;

/// Decodes raw images. An image that cannot be preprocessed yields an error
/// in its slot; the rest of the batch is unaffected.
pub fn predict_images(bundle: &ModelBundle, images: &[&RgbImage]) -> Vec<Result<StringPrediction>> {
    let mut out: Vec<Option<Result<StringPrediction>>> = (0..images.len()).map(|_| None).collect();
    let inputs: Vec<(usize, Result<ndarray::Array3<f32>>)> =
        images.iter().enumerate().map(|(i, img)| (i, bundle.preprocess.apply(img))).collect();
    let mut ready = Vec::new();
    for (i, r) in inputs {
        match r {
            Ok(x) => ready.push((i, x)),
            Err(e) => out[i] = Some(Err(e)),
        }
    }
    for chunk in ready.chunks(PREDICT_BATCH) {
        let views: Vec<_> = chunk.iter().map(|(_, x)| x.view()).collect();
        let batch = ndarray::stack(Axis(0), &views).expect("equal input shapes");
        let decoded = bundle.network.forward(&batch).decode();
        for ((i, _), p) in chunk.iter().zip(decoded) {
            out[*i] = Some(Ok(p));
        }
    }
    out.into_iter().map(|o| o.expect("every slot filled")).collect()
}

/// One prediction per sample, in order.
pub fn predict(bundle: &ModelBundle, samples: &[StringSample]) -> Vec<Result<StringPrediction>> {
    let images: Vec<&RgbImage> = samples.iter().map(|s| &s.image).collect();
    predict_images(bundle, &images)
}

pub fn build_specific_task() -> ModelBundle {
    ModelBundle::build(ArchSpec::new(ArchId::SpecificTask), 0)
}

pub fn build_crnn() -> ModelBundle {
    ModelBundle::build(ArchSpec::new(ArchId::Crnn), 0)
}

pub fn build_vgg16_native() -> ModelBundle {
    ModelBundle::build(ArchSpec::new(ArchId::Vgg16Native), 0)
}
