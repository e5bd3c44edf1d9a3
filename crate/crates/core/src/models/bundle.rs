use std::fs;
use std::path::Path;

use hdsr_nn::io::{load_matching, load_params, save_params};
use hdsr_nn::{Layer, Parameters};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nets::Network;
use super::{ArchId, ArchSpec, BLANK};
use crate::error::{Error, Result};
use crate::label::{FIRST_YEAR, NUM_CLASSES};
use crate::preprocess::PreprocessContract;

pub const SCHEMA_VERSION: u32 = 1;
const METADATA_FILE: &str = "metadata.json";
const WEIGHTS_FILE: &str = "weights.safetensors";

/// How network outputs map to labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelMap {
    /// Output `i` is year `first_year + i`.
    Years { first_year: u16, classes: usize },
    /// Outputs are digits 0–9, optionally followed by a CTC blank.
    Digits { blank: Option<usize> },
}

impl LabelMap {
    pub fn for_arch(arch: ArchId) -> Self {
        match arch {
            ArchId::SpecificTask => LabelMap::Digits { blank: None },
            ArchId::Crnn => LabelMap::Digits { blank: Some(BLANK) },
            ArchId::Vgg16Native => LabelMap::Years { first_year: FIRST_YEAR, classes: NUM_CLASSES },
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    schema_version: u32,
    arch: ArchId,
    spec: ArchSpec,
    preprocess: PreprocessContract,
    label_map: LabelMap,
    train_config_hash: Option<String>,
}

/// A recognizer together with everything needed to run it.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub spec: ArchSpec,
    pub network: Network,
    pub preprocess: PreprocessContract,
    pub label_map: LabelMap,
    pub train_config_hash: Option<String>,
}

impl ModelBundle {
    /// Randomly initialised model; weights are a function of `seed`.
    pub fn build(spec: ArchSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let network = Network::new(&spec, &mut rng);
        let label_map = LabelMap::for_arch(spec.arch);
        Self { spec, network, preprocess: PreprocessContract::default(), label_map, train_config_hash: None }
    }

    pub fn arch(&self) -> ArchId {
        self.spec.arch
    }

    /// Writes `metadata.json` and `weights.safetensors` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = Metadata {
            schema_version: SCHEMA_VERSION,
            arch: self.spec.arch,
            spec: self.spec.clone(),
            preprocess: self.preprocess.clone(),
            label_map: self.label_map.clone(),
            train_config_hash: self.train_config_hash.clone(),
        };
        let meta_path = dir.join(METADATA_FILE);
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&meta_path, e))?;
        let bytes = save_params(&self.network.named_params(), None)?;
        let weights = dir.join(WEIGHTS_FILE);
        fs::write(&weights, bytes).map_err(|e| Error::io(&weights, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(METADATA_FILE);
        if !meta_path.is_file() {
            return Err(Error::MissingPath(meta_path));
        }
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let raw: serde_json::Value = serde_json::from_str(&text)?;
        let found = raw.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != SCHEMA_VERSION {
            return Err(Error::Schema { found, expected: SCHEMA_VERSION });
        }
        let meta: Metadata =
            serde_json::from_value(raw).map_err(|e| Error::Bundle(format!("{}: {e}", meta_path.display())))?;
        if meta.arch != meta.spec.arch {
            return Err(Error::Bundle(format!("metadata arch {} disagrees with spec {}", meta.arch, meta.spec.arch)));
        }
        meta.preprocess.validate()?;
        let mut bundle = Self::build(meta.spec, 0);
        bundle.preprocess = meta.preprocess;
        bundle.label_map = meta.label_map;
        bundle.train_config_hash = meta.train_config_hash;
        let weights = dir.join(WEIGHTS_FILE);
        let bytes = fs::read(&weights).map_err(|e| Error::io(&weights, e))?;
        load_params(&bytes, &mut bundle.network.named_params_mut())
            .map_err(|e| Error::Bundle(format!("{}: {e}", weights.display())))?;
        Ok(bundle)
    }

    /// Copies convolution and batch-norm tensors from a safetensors file
    /// that uses torchvision's `features.N.*` names (e.g. an exported
    /// `vgg16_bn` for the specific-task model). Returns the tensor count.
    pub fn load_pretrained_trunk(&mut self, bytes: &[u8]) -> Result<usize> {
        if self.spec.arch == ArchId::Crnn {
            return Err(Error::Config("the CRNN conv stack has no VGG-16 counterpart to load".into()));
        }
        let loaded = load_matching(bytes, &mut self.network.named_params_mut(), |name| {
            name.starts_with("features.").then(|| name.to_string())
        })?;
        if loaded == 0 {
            return Err(Error::Bundle("no `features.*` tensors in the pre-trained weight file".into()));
        }
        Ok(loaded)
    }

    /// Freezes the first `convs` convolutions of the trunk together with the
    /// batch-norm layers that follow them.
    pub fn freeze_trunk(&mut self, convs: usize) {
        let mut seen = 0;
        let mut frozen = false;
        for layer in &mut self.network.features_mut().layers {
            match layer {
                Layer::Conv(c) => {
                    seen += 1;
                    frozen = seen <= convs;
                    c.weight.frozen = frozen;
                    c.bias.frozen = frozen;
                }
                Layer::BatchNorm(b) => {
                    b.gamma.frozen = frozen;
                    b.beta.frozen = frozen;
                }
                _ => {}
            }
        }
    }
}
