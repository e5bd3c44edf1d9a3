//! Config layering (built-in defaults < config file < flags) and errors.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use hdsr::{ArchId, SynthesisConfig, TrainConfig};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Global;

#[derive(Debug)]
pub enum CliError {
    /// Bad input, configuration or paths: exit code 2.
    User(String),
    /// Anything else: exit code 1.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<hdsr::Error> for CliError {
    fn from(e: hdsr::Error) -> Self {
        if e.is_user_error() {
            CliError::User(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Internal(format!("{}: {e}", path.display()))
}

/// Module seeds derived from the master seed.
#[derive(Debug, Clone, Copy)]
pub enum SeedStream {
    Synthesis = 1,
    Init = 2,
    Training = 3,
    Fixture = 4,
}

/// Kept below 2^63 so derived seeds fit TOML integers.
pub fn sub_seed(master: u64, stream: SeedStream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream as u64);
    rng.next_u64() >> 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    /// Divides every conv and dense width; 1 is the full architecture.
    pub width_divisor: usize,
    /// Initialisation seed.
    pub init_seed: u64,
    /// Optional safetensors file with torchvision-named trunk weights.
    pub pretrained: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileLayers {
    synthesis: Option<toml::Table>,
    training: Option<toml::Table>,
    model: Option<toml::Table>,
}

fn read_layers(path: Option<&Path>) -> CliResult<FileLayers> {
    let Some(path) = path else { return Ok(FileLayers::default()) };
    let text = fs::read_to_string(path).map_err(|e| CliError::User(format!("config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::User(format!("config {}: {e}", path.display())))
}

/// Serialises `base`, overlays the keys of `layer`, and reads it back.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, layer: Option<toml::Table>, what: &str) -> CliResult<T> {
    let mut table = toml::Table::try_from(base).map_err(|e| CliError::Internal(format!("{what}: {e}")))?;
    if let Some(layer) = layer {
        table.extend(layer);
    }
    toml::Value::Table(table).try_into().map_err(|e| CliError::User(format!("[{what}] in config: {e}")))
}

fn seed_for(global: &Global, stream: SeedStream) -> u64 {
    sub_seed(global.seed.unwrap_or(0), stream)
}

pub struct Resolved {
    pub synthesis: SynthesisConfig,
    pub training: TrainConfig,
    pub model: ModelSettings,
}

/// Resolves the three configuration tables. `--seed` beats seeds in the
/// config file, which beat the seeds derived from the default master seed 0.
pub fn resolve(global: &Global) -> CliResult<Resolved> {
    let layers = read_layers(global.config.as_deref())?;
    let explicit = global.seed.is_some();

    let mut synthesis_base = SynthesisConfig::default();
    synthesis_base.rng_seed = seed_for(global, SeedStream::Synthesis);
    let mut synthesis = overlay(&synthesis_base, layers.synthesis, "synthesis")?;

    let training_base = TrainConfig { rng_seed: seed_for(global, SeedStream::Training), ..hdsr::default_config(global.arch) };
    let training_layer = layers.training.map(|mut t| {
        t.remove("arch");
        t
    });
    let mut training = overlay(&training_base, training_layer, "training")?;
    training.arch = global.arch;

    let model_base = ModelSettings { width_divisor: 1, init_seed: seed_for(global, SeedStream::Init), pretrained: None };
    let mut model = overlay(&model_base, layers.model, "model")?;

    if explicit {
        synthesis.rng_seed = seed_for(global, SeedStream::Synthesis);
        training.rng_seed = seed_for(global, SeedStream::Training);
        model.init_seed = seed_for(global, SeedStream::Init);
    }
    synthesis.validate()?;
    Ok(Resolved { synthesis, training, model })
}

pub fn fixture_seed(global: &Global) -> u64 {
    seed_for(global, SeedStream::Fixture)
}

/// Creates `dir`, refusing to reuse a non-empty one unless forced.
pub fn prepare_out(dir: &Path, force: bool, owned: &[&str]) -> CliResult {
    let occupied = fs::read_dir(dir).map(|mut it| it.next().is_some()).unwrap_or(false);
    if occupied {
        if !force {
            return Err(CliError::User(format!("{} is not empty; pass --force to overwrite", dir.display())));
        }
        for name in owned {
            let p = dir.join(name);
            if p.is_dir() {
                fs::remove_dir_all(&p).map_err(|e| io_err(&p, e))?;
            } else if p.exists() {
                fs::remove_file(&p).map_err(|e| io_err(&p, e))?;
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn default_arch_dir(arch: ArchId) -> PathBuf {
    PathBuf::from("runs").join(arch.as_str())
}
