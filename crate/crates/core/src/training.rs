//! Mini-batch training with validation-loss early stopping.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use hdsr_nn::{apply_l2, ctc_min_frames, Adadelta, Adam, NnError, Optimizer, Parameters};
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{corpus_hash, StringSample};
use crate::error::{Error, Result};
use crate::label::YearLabel;
use crate::models::{ArchId, ModelBundle, Network, Output, Target};
use crate::preprocess::PreprocessContract;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CategoricalCrossentropy,
    Ctc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    Dropout { rate: f32 },
    L2 { coefficient: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Adadelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: ArchId,
    pub batch_size: usize,
    pub loss: LossKind,
    pub regularizer: Regularizer,
    pub optimizer: OptimizerKind,
    pub learning_rate: f32,
    pub batch_norm: bool,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping;
    /// `None` trains for `max_epochs`.
    pub patience: Option<usize>,
    pub validation_fraction: f64,
    pub rng_seed: u64,
    /// Number of leading trunk convolutions kept fixed.
    #[serde(default)]
    pub freeze_trunk_convs: usize,
}

/// The reference per-architecture training setup.
pub fn default_config(arch: ArchId) -> TrainConfig {
    let (batch_size, loss, regularizer, optimizer, learning_rate, batch_norm) = match arch {
        ArchId::SpecificTask => {
            (32, LossKind::CategoricalCrossentropy, Regularizer::Dropout { rate: 0.25 }, OptimizerKind::Adam, 1e-3, true)
        }
        ArchId::Crnn => (128, LossKind::Ctc, Regularizer::Dropout { rate: 0.25 }, OptimizerKind::Adadelta, 1e-3, false),
        ArchId::Vgg16Native => {
            (32, LossKind::CategoricalCrossentropy, Regularizer::L2 { coefficient: 5e-4 }, OptimizerKind::Adam, 1e-5, false)
        }
    };
    TrainConfig {
        arch,
        batch_size,
        loss,
        regularizer,
        optimizer,
        learning_rate,
        batch_norm,
        max_epochs: 100,
        patience: Some(10),
        validation_fraction: 0.1,
        rng_seed: 0,
        freeze_trunk_convs: 0,
    }
}

/// [`default_config`] looked up by architecture name.
pub fn default_config_named(arch: &str) -> Result<TrainConfig> {
    Ok(default_config(arch.parse()?))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return bad(format!("validation_fraction {} must lie in (0, 0.5)", self.validation_fraction));
        }
        if self.patience == Some(0) {
            return bad("patience must be at least 1 (omit it to disable early stopping)".into());
        }
        match self.regularizer {
            Regularizer::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                return bad(format!("dropout rate {rate} outside [0, 1)"))
            }
            Regularizer::L2 { coefficient } if !(coefficient >= 0.0 && coefficient.is_finite()) => {
                return bad(format!("L2 coefficient {coefficient} must be non-negative"))
            }
            _ => {}
        }
        let expected = if self.arch == ArchId::Crnn { LossKind::Ctc } else { LossKind::CategoricalCrossentropy };
        if self.loss != expected {
            return bad(format!("{} is trained with {expected:?}, not {:?}", self.arch, self.loss));
        }
        Ok(())
    }

    pub fn dropout_rate(&self) -> f32 {
        match self.regularizer {
            Regularizer::Dropout { rate } => rate,
            Regularizer::L2 { .. } => 0.0,
        }
    }

    pub fn l2_coefficient(&self) -> f32 {
        match self.regularizer {
            Regularizer::L2 { coefficient } => coefficient,
            Regularizer::Dropout { .. } => 0.0,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(self.learning_rate)),
            OptimizerKind::Adadelta => Optimizer::Adadelta(Adadelta::new(self.learning_rate)),
        }
    }
}

/// Training target for `label` in the encoding `arch` learns from.
pub fn targets_for(arch: ArchId, label: YearLabel) -> Target {
    Target::for_label(arch, label)
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: Option<usize>,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopper {
    pub fn new(patience: Option<usize>) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, epoch: 0 }
    }

    /// Records the next epoch's loss. Only a strict decrease counts as an
    /// improvement.
    pub fn observe(&mut self, loss: f64) -> StopDecision {
        self.epoch += 1;
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = self.epoch;
        }
        let stop = self.patience.is_some_and(|p| self.epoch - self.best_epoch >= p);
        StopDecision { improved, stop }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Stratified split: about `fraction` of each class goes to validation,
/// always leaving at least one training sample per class. Returns sorted
/// `(train, validation)` indices.
pub fn split_validation(labels: &[YearLabel], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class = BTreeMap::<YearLabel, Vec<usize>>::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(*l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_class {
        idx.shuffle(&mut rng);
        let k = ((idx.len() as f64 * fraction).round() as usize).min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss including any weight penalty.
    pub loss: f64,
    /// Exact-string accuracy on training batches, in training mode.
    pub accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub improved: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunRecord {
    pub arch: ArchId,
    pub epochs: Vec<EpochLog>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    pub wall_time_secs: f64,
    pub config_hash: String,
    pub corpus_hash: String,
    pub train_size: usize,
    /// Source ids of the samples held out for validation.
    pub validation_ids: Vec<String>,
}

impl TrainRunRecord {
    /// `train_log.jsonl` (one epoch per line) and `train_summary.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut log = String::new();
        for e in &self.epochs {
            let _ = writeln!(log, "{}", serde_json::to_string(e)?);
        }
        let path = dir.join("train_log.jsonl");
        fs::write(&path, log).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("train_summary.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Best-validation weights, final-epoch weights and the run log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelBundle,
    pub last: ModelBundle,
    pub record: TrainRunRecord,
}

/// A configured training run with an optional per-epoch callback.
pub struct Trainer<'a> {
    config: TrainConfig,
    on_epoch: Option<Box<dyn FnMut(&EpochLog) + 'a>>,
}

const EVAL_BATCH: usize = 64;

fn exact_matches(output: &Output, labels: &[YearLabel]) -> usize {
    output.decode().iter().zip(labels).filter(|(p, l)| p.text == l.text()).count()
}

fn batch_inputs(
    preprocess: &PreprocessContract,
    arch: ArchId,
    corpus: &[StringSample],
    idx: &[usize],
) -> Result<(ndarray::Array4<f32>, Vec<Target>, Vec<YearLabel>)> {
    let images: Vec<&RgbImage> = idx.iter().map(|&i| &corpus[i].image).collect();
    let labels: Vec<YearLabel> = idx.iter().map(|&i| corpus[i].label).collect();
    let targets = labels.iter().map(|&l| targets_for(arch, l)).collect();
    Ok((preprocess.batch(&images)?, targets, labels))
}

/// Mean loss and exact-match accuracy in inference mode.
fn evaluate_split(bundle: &ModelBundle, corpus: &[StringSample], idx: &[usize]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0;
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, targets, labels) = batch_inputs(&bundle.preprocess, bundle.arch(), corpus, chunk)?;
        let out = bundle.network.eval_loss(&x, &targets)?;
        loss += out.loss as f64 * chunk.len() as f64;
        correct += exact_matches(&out.output, &labels);
    }
    let n = idx.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig) -> Self {
        Self { config, on_epoch: None }
    }

    pub fn on_epoch(mut self, f: impl FnMut(&EpochLog) + 'a) -> Self {
        self.on_epoch = Some(Box::new(f));
        self
    }

    fn check_inputs(&self, bundle: &ModelBundle, corpus: &[StringSample]) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if bundle.arch() != c.arch {
            return Err(Error::Config(format!("config is for {}, bundle is {}", c.arch, bundle.arch())));
        }
        if bundle.spec.batch_norm != c.batch_norm {
            return Err(Error::Config(format!(
                "config batch_norm = {} but the {} bundle was built with batch_norm = {}",
                c.batch_norm,
                bundle.arch(),
                bundle.spec.batch_norm
            )));
        }
        if let Network::Crnn(net) = &bundle.network {
            let frames = net.frames(&bundle.spec);
            for s in corpus {
                let target = targets_for(ArchId::Crnn, s.label).indices();
                let needed = ctc_min_frames(&target);
                if needed > frames {
                    return Err(Error::CtcInfeasible {
                        sample: s.source_id.clone(),
                        source: NnError::CtcInfeasible { frames, needed },
                    });
                }
            }
        }
        Ok(())
    }

    pub fn run(mut self, mut bundle: ModelBundle, corpus: &[StringSample]) -> Result<TrainOutcome> {
        self.check_inputs(&bundle, corpus)?;
        let config = self.config.clone();
        let started = Instant::now();
        let labels: Vec<YearLabel> = corpus.iter().map(|s| s.label).collect();
        let (train_idx, val_idx) = split_validation(&labels, config.validation_fraction, config.rng_seed);
        if val_idx.is_empty() {
            return Err(Error::Config(format!(
                "validation split of {} samples is empty; the corpus is too small",
                corpus.len()
            )));
        }

        let mut preprocess = PreprocessContract { mean: [0.0; 3], std: [1.0; 3], ..bundle.preprocess.clone() };
        preprocess.fit(train_idx.iter().map(|&i| &corpus[i].image))?;
        bundle.preprocess = preprocess;
        bundle.train_config_hash = Some(config.hash());
        if config.freeze_trunk_convs > 0 {
            bundle.freeze_trunk(config.freeze_trunk_convs);
        }

        let mut optimizer = config.optimizer();
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(2);
        let mut stopper = EarlyStopper::new(config.patience);
        let mut best_network = bundle.network.clone();
        let mut order = train_idx.clone();
        let mut epochs = Vec::new();
        let mut stop_reason = StopReason::MaxEpochs;
        let dropout = config.dropout_rate();
        let l2 = config.l2_coefficient();

        let record = |epochs: &Vec<EpochLog>, stopper: &EarlyStopper, reason| TrainRunRecord {
            arch: config.arch,
            epochs: epochs.clone(),
            stopped_epoch: epochs.len(),
            best_epoch: stopper.best_epoch(),
            best_val_loss: stopper.best_loss(),
            stop_reason: reason,
            wall_time_secs: started.elapsed().as_secs_f64(),
            config_hash: config.hash(),
            corpus_hash: corpus_hash(corpus),
            train_size: train_idx.len(),
            validation_ids: val_idx.iter().map(|&i| corpus[i].source_id.clone()).collect(),
        };

        for epoch in 1..=config.max_epochs {
            let epoch_start = Instant::now();
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0f64;
            let mut correct = 0;
            for chunk in order.chunks(config.batch_size) {
                let (x, targets, labels) = batch_inputs(&bundle.preprocess, config.arch, corpus, chunk)?;
                bundle.network.zero_grad();
                let out = bundle.network.train_batch(&x, &targets, dropout, &mut rng)?;
                let mut params = bundle.network.named_params_mut();
                let penalty = if l2 > 0.0 { apply_l2(&mut params, l2) } else { 0.0 };
                let loss = out.loss + penalty;
                if !loss.is_finite() {
                    drop(params);
                    return Err(Error::Diverged { epoch, record: Box::new(record(&epochs, &stopper, StopReason::MaxEpochs)) });
                }
                optimizer.step(&mut params);
                loss_sum += loss as f64 * chunk.len() as f64;
                correct += exact_matches(&out.output, &labels);
            }
            let (val_loss, val_accuracy) = evaluate_split(&bundle, corpus, &val_idx)?;
            if !val_loss.is_finite() {
                return Err(Error::Diverged { epoch, record: Box::new(record(&epochs, &stopper, StopReason::MaxEpochs)) });
            }
            let decision = stopper.observe(val_loss);
            if decision.improved {
                best_network = bundle.network.clone();
            }
            let log = EpochLog {
                epoch,
                loss: loss_sum / order.len() as f64,
                accuracy: correct as f64 / order.len() as f64,
                val_loss,
                val_accuracy,
                improved: decision.improved,
                seconds: epoch_start.elapsed().as_secs_f64(),
            };
            if let Some(cb) = self.on_epoch.as_mut() {
                cb(&log);
            }
            epochs.push(log);
            if decision.stop {
                stop_reason = StopReason::EarlyStop;
                break;
            }
        }

        let record = record(&epochs, &stopper, stop_reason);
        let last = bundle.clone();
        bundle.network = best_network;
        Ok(TrainOutcome { best: bundle, last, record })
    }
}

/// Trains `bundle` on `corpus` and returns the best-validation weights.
pub fn train(bundle: ModelBundle, corpus: &[StringSample], config: &TrainConfig) -> Result<(ModelBundle, TrainRunRecord)> {
    let out = Trainer::new(config.clone()).run(bundle, corpus)?;
    Ok((out.best, out.record))
}
