use ndarray::{ArrayD, IxDyn};

/// What a tensor is used for. Optimizers only touch `Kernel` and `Bias`;
/// L2 penalties only apply to `Kernel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Kernel,
    Bias,
    /// Persisted state that is not learned by gradient descent
    /// (batch-norm running statistics).
    Buffer,
}

/// A named tensor owned by a layer, together with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
    pub role: Role,
    pub frozen: bool,
}

impl Param {
    pub fn new(value: ArrayD<f32>, role: Role) -> Self {
        let grad = match role {
            Role::Buffer => ArrayD::zeros(IxDyn(&[0])),
            _ => ArrayD::zeros(value.raw_dim()),
        };
        Self {
            value,
            grad,
            role,
            frozen: false,
        }
    }

    pub fn zeros(shape: &[usize], role: Role) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)), role)
    }

    pub fn is_trainable(&self) -> bool {
        self.role != Role::Buffer && !self.frozen
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that owns parameters. Names are stable and hierarchical
/// (`features.0.weight`) so they can be persisted and re-loaded.
pub trait Parameters {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>);

    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut out);
        out
    }

    fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            if p.role != Role::Buffer {
                p.zero_grad();
            }
        }
    }

    fn num_trainable(&self) -> usize {
        self.named_params()
            .iter()
            .filter(|(_, p)| p.role != Role::Buffer)
            .map(|(_, p)| p.len())
            .sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
