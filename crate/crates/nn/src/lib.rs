//! Minimal CPU neural-network building blocks with explicit backward passes.
//!
//! Every layer exposes an inference `forward(&self, ..)` that is safe to share
//! across threads, and a training `forward_train` that records what its
//! `backward` needs. Gradients accumulate into [`Param::grad`] until
//! [`Parameters::zero_grad`] is called.

pub mod activation;
pub mod conv;
pub mod gru;
pub mod io;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod optim;
pub mod param;
pub mod pool;
pub mod sequential;

pub use activation::{log_softmax, relu, relu_backward, softmax, Dropout};
pub use conv::Conv2d;
pub use gru::{BiGru, BiGruCache, Gru, GruCache, Merge};
pub use linear::{Init, Linear};
pub use loss::{ctc_loss, ctc_min_frames, softmax_cross_entropy};
pub use norm::BatchNorm2d;
pub use optim::{apply_l2, Adadelta, Adam, Optimizer};
pub use param::{Param, Parameters, Role};
pub use pool::MaxPool2d;
pub use sequential::{Layer, Sequential, Tape};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("CTC target needs at least {needed} frames, sequence has {frames}")]
    CtcInfeasible { frames: usize, needed: usize },
    #[error("label {label} is the blank symbol or outside {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("tensor `{0}` missing from weight file")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("weight file: {0}")]
    Format(String),
}
