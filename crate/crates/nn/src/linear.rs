use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayD, ArrayView2, Axis, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::param::{join, Param, Parameters, Role};

/// Weight initialisation scheme for dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// He normal, for layers followed by ReLU.
    He,
    /// Glorot uniform, for output layers.
    Glorot,
}

/// Fully connected layer, weight stored as `(out, in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, init: Init, rng: &mut R) -> Self {
        let data: Vec<f32> = match init {
            Init::He => {
                let d = Normal::new(0.0, (2.0 / input as f32).sqrt()).expect("finite std");
                (0..input * output).map(|_| d.sample(rng)).collect()
            }
            Init::Glorot => {
                let lim = (6.0 / (input + output) as f32).sqrt();
                let d = Uniform::new_inclusive(-lim, lim).expect("finite bounds");
                (0..input * output).map(|_| d.sample(rng)).collect()
            }
        };
        let weight = ArrayD::from_shape_vec(IxDyn(&[output, input]), data).expect("shape");
        Self {
            weight: Param::new(weight, Role::Kernel),
            bias: Param::zeros(&[output], Role::Bias),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f32> {
        self.weight
            .value
            .view()
            .into_dimensionality()
            .expect("2-D linear weight")
    }

    /// `x`: `(N, in)` → `(N, out)`.
    pub fn forward(&self, x: &ArrayView2<'_, f32>) -> Array2<f32> {
        let bias = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-D bias");
        let mut y = Array2::<f32>::zeros((x.nrows(), self.output_dim()));
        for mut row in y.outer_iter_mut() {
            row.assign(&bias);
        }
        general_mat_mul(1.0, x, &self.weight_matrix().t(), 1.0, &mut y);
        y
    }

    pub fn backward(&mut self, x: &ArrayView2<'_, f32>, dy: &ArrayView2<'_, f32>) -> Array2<f32> {
        if !self.weight.frozen {
            let mut gw = self
                .weight
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix2>()
                .expect("2-D grad");
            general_mat_mul(1.0, &dy.t(), x, 1.0, &mut gw);
            let db = dy.sum_axis(Axis(0));
            for (g, d) in self.bias.grad.iter_mut().zip(db.iter()) {
                *g += d;
            }
        }
        dy.dot(&self.weight_matrix())
    }
}

impl Parameters for Linear {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}
