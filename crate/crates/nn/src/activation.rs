use ndarray::{Array, Array2, ArrayView2, Axis, Dimension};
use rand::Rng;

pub fn relu<D: Dimension>(x: &Array<f32, D>) -> Array<f32, D> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient of ReLU given its *output*.
pub fn relu_backward<D: Dimension>(y: &Array<f32, D>, dy: &Array<f32, D>) -> Array<f32, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |g, &out| {
        if out <= 0.0 {
            *g = 0.0
        }
    });
    dx
}

/// Row-wise numerically stable softmax.
pub fn softmax(logits: &ArrayView2<'_, f32>) -> Array2<f32> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-wise log-softmax, computed in f64 for the normaliser.
pub fn log_softmax(logits: &ArrayView2<'_, f32>) -> Array2<f32> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max as f64 + row.iter().map(|&v| ((v - max) as f64).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| (v as f64 - lse) as f32);
    }
    out
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - rate)` so the
/// inference path is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f32,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Self { rate }
    }

    /// Returns the dropped activations and the scaling mask to reuse in backward.
    pub fn forward_train<D: Dimension, R: Rng + ?Sized>(
        &self,
        x: &Array<f32, D>,
        rng: &mut R,
    ) -> (Array<f32, D>, Array<f32, D>) {
        if self.rate == 0.0 {
            return (x.clone(), Array::ones(x.raw_dim()));
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask = x.map(|_| if rng.random::<f32>() < keep { scale } else { 0.0 });
        (x * &mask, mask)
    }

    pub fn backward<D: Dimension>(mask: &Array<f32, D>, dy: &Array<f32, D>) -> Array<f32, D> {
        dy * mask
    }
}
