use ndarray::{Array1, Array4, ArrayD, Axis, IxDyn, Zip};

use crate::param::{join, Param, Parameters, Role};

/// Per-channel batch normalisation over `(N, C, H, W)`.
///
/// Parameter names follow torchvision: `weight`, `bias`, `running_mean`,
/// `running_var`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f32,
    pub eps: f32,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Array4<f32>,
    inv_std: Array1<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            // scale is excluded from L2 like a bias
            gamma: Param::new(ArrayD::ones(IxDyn(&[channels])), Role::Bias),
            beta: Param::zeros(&[channels], Role::Bias),
            running_mean: Param::zeros(&[channels], Role::Buffer),
            running_var: Param::new(ArrayD::ones(IxDyn(&[channels])), Role::Buffer),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Inference path using the running statistics.
    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        let mut y = x.clone();
        for (c, mut chan) in y.axis_iter_mut(Axis(1)).enumerate() {
            let inv = 1.0 / (self.running_var.value[[c]] + self.eps).sqrt();
            let scale = self.gamma.value[[c]] * inv;
            let shift = self.beta.value[[c]] - self.running_mean.value[[c]] * scale;
            chan.mapv_inplace(|v| v * scale + shift);
        }
        y
    }

    /// Training path: normalises with batch statistics and updates the running ones.
    pub fn forward_train(&mut self, x: &Array4<f32>) -> (Array4<f32>, BatchNormCache) {
        let (n, c, h, w) = x.dim();
        let m = (n * h * w) as f32;
        let mut xhat = Array4::<f32>::zeros((n, c, h, w));
        let mut inv_std = Array1::<f32>::zeros(c);
        let mut y = Array4::<f32>::zeros((n, c, h, w));
        for ch in 0..c {
            let xc = x.index_axis(Axis(1), ch);
            let mean = xc.sum() / m;
            let var = xc.fold(0.0f32, |acc, &v| acc + (v - mean) * (v - mean)) / m;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = inv;
            let g = self.gamma.value[[ch]];
            let b = self.beta.value[[ch]];
            Zip::from(xhat.index_axis_mut(Axis(1), ch))
                .and(y.index_axis_mut(Axis(1), ch))
                .and(&xc)
                .for_each(|xh, yy, &v| {
                    *xh = (v - mean) * inv;
                    *yy = g * *xh + b;
                });
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            let mom = self.momentum;
            self.running_mean.value[[ch]] = (1.0 - mom) * self.running_mean.value[[ch]] + mom * mean;
            self.running_var.value[[ch]] = (1.0 - mom) * self.running_var.value[[ch]] + mom * unbiased;
        }
        (y, BatchNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &BatchNormCache, dy: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = dy.dim();
        let m = (n * h * w) as f32;
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        for ch in 0..c {
            let dyc = dy.index_axis(Axis(1), ch);
            let xh = cache.xhat.index_axis(Axis(1), ch);
            let sum_dy = dyc.sum();
            let sum_dy_xh = Zip::from(&dyc).and(&xh).fold(0.0f32, |acc, &a, &b| acc + a * b);
            if !self.gamma.frozen {
                self.gamma.grad[[ch]] += sum_dy_xh;
                self.beta.grad[[ch]] += sum_dy;
            }
            let k = self.gamma.value[[ch]] * cache.inv_std[ch] / m;
            Zip::from(dx.index_axis_mut(Axis(1), ch))
                .and(&dyc)
                .and(&xh)
                .for_each(|d, &g, &xv| *d = k * (m * g - sum_dy - xv * sum_dy_xh));
        }
        dx
    }
}

impl Parameters for BatchNorm2d {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.gamma));
        out.push((join(prefix, "bias"), &self.beta));
        out.push((join(prefix, "running_mean"), &self.running_mean));
        out.push((join(prefix, "running_var"), &self.running_var));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.gamma));
        out.push((join(prefix, "bias"), &mut self.beta));
        out.push((join(prefix, "running_mean"), &mut self.running_mean));
        out.push((join(prefix, "running_var"), &mut self.running_var));
    }
}
