//! Recognition of handwritten 4-digit year strings (1890–1920) without
//! character segmentation.
//!
//! The crate covers the whole pipeline: loading string crops and isolated
//! digit glyphs ([`corpus`]), topping every class up with glyph-composed
//! strings ([`synthesis`]), three recognizers sharing a VGG-16 style trunk
//! ([`models`]), the training loop with early stopping ([`training`]) and
//! edit-distance based scoring ([`metrics`]).

pub mod corpus;
pub mod error;
pub mod fixture;
pub mod label;
pub mod metrics;
pub mod models;
pub mod preprocess;
pub mod synthesis;
pub mod training;

pub use corpus::{CorpusManifest, DigitGlyph, GlyphBank, Origin, Split, StringSample};
pub use error::{Error, Result};
pub use label::YearLabel;
pub use metrics::{anld, evaluate, levenshtein, nld, EvalReport, NldRecord};
pub use models::{ArchId, DigitDistribution, ModelBundle, StringPrediction};
pub use preprocess::PreprocessContract;
pub use synthesis::SynthesisConfig;
pub use training::{default_config, train, TrainConfig, TrainRunRecord};
