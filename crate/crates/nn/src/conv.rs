use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, ArrayView3, ArrayViewMut3, Axis, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::param::{join, Param, Parameters, Role};

/// Square-kernel 2-D convolution, stride 1, "same" zero padding.
///
/// Weights are stored as `(out, in, k, k)`, which is also the layout used by
/// torchvision checkpoints, so pre-trained trunks can be loaded verbatim.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
}

impl Conv2d {
    /// He-normal initialised convolution (fan-in, ReLU gain).
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut R) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd for same padding");
        let fan_in = (in_channels * kernel * kernel) as f32;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
        let shape = [out_channels, in_channels, kernel, kernel];
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| normal.sample(rng)).collect();
        let weight = ndarray::ArrayD::from_shape_vec(IxDyn(&shape), data).expect("shape");
        Self {
            weight: Param::new(weight, Role::Kernel),
            bias: Param::zeros(&[out_channels], Role::Bias),
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f32> {
        let k = self.in_channels * self.kernel * self.kernel;
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_channels, k))
            .expect("contiguous conv weight")
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let weight = self.weight_matrix();
        let bias = self.bias.value.as_slice().expect("contiguous bias");
        let mut out = Array4::<f32>::zeros((n, self.out_channels, h, w));
        let mut col = Array2::<f32>::zeros((c * self.kernel * self.kernel, h * w));
        for (xi, mut yi) in x.outer_iter().zip(out.outer_iter_mut()) {
            im2col(xi, self.kernel, &mut col);
            let mut y2 = yi
                .view_mut()
                .into_shape_with_order((self.out_channels, h * w))
                .expect("contiguous output");
            for (mut row, &b) in y2.outer_iter_mut().zip(bias) {
                row.fill(b);
            }
            general_mat_mul(1.0, &weight, &col, 1.0, &mut y2);
        }
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Array4<f32>, dy: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        let kk = c * self.kernel * self.kernel;
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        let mut col = Array2::<f32>::zeros((kk, h * w));
        let mut dcol = Array2::<f32>::zeros((kk, h * w));
        let mut dweight = Array2::<f32>::zeros((self.out_channels, kk));
        let mut dbias = vec![0.0f32; self.out_channels];
        let weight = self.weight_matrix().to_owned();
        for ((xi, dyi), dxi) in x.outer_iter().zip(dy.outer_iter()).zip(dx.outer_iter_mut()) {
            let dy2 = dyi
                .into_shape_with_order((self.out_channels, h * w))
                .expect("contiguous grad");
            for (acc, row) in dbias.iter_mut().zip(dy2.outer_iter()) {
                *acc += row.sum();
            }
            if !self.weight.frozen {
                im2col(xi, self.kernel, &mut col);
                general_mat_mul(1.0, &dy2, &col.t(), 1.0, &mut dweight);
            }
            general_mat_mul(1.0, &weight.t(), &dy2, 0.0, &mut dcol);
            col2im(&dcol, self.kernel, dxi);
        }
        if !self.weight.frozen {
            let mut gw = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((self.out_channels, kk))
                .expect("contiguous grad");
            gw += &dweight;
        }
        for (g, d) in self.bias.grad.iter_mut().zip(dbias) {
            *g += d;
        }
        dx
    }
}

impl Parameters for Conv2d {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

/// Unfolds `(C, H, W)` into `(C*k*k, H*W)` patches with zero padding `k/2`.
fn im2col(x: ArrayView3<'_, f32>, k: usize, col: &mut Array2<f32>) {
    let (c, h, w) = x.dim();
    let pad = k / 2;
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let dst = col.as_slice_mut().expect("standard layout");
    let plane = h * w;
    for ci in 0..c {
        let chan = &src[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let out_row = &mut dst[row * plane..(row + 1) * plane];
                // valid output columns for this kx: 0 <= ox + kx - pad < w
                let ox_lo = pad.saturating_sub(kx);
                let ox_hi = (w + pad).saturating_sub(kx).min(w);
                for oy in 0..h {
                    let seg = &mut out_row[oy * w..(oy + 1) * w];
                    let iy = oy as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize || ox_lo >= ox_hi {
                        seg.fill(0.0);
                        continue;
                    }
                    let iy = iy as usize;
                    seg[..ox_lo].fill(0.0);
                    seg[ox_hi..].fill(0.0);
                    let ix_lo = ox_lo + kx - pad;
                    let len = ox_hi - ox_lo;
                    seg[ox_lo..ox_hi].copy_from_slice(&chan[iy * w + ix_lo..iy * w + ix_lo + len]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back into `(C, H, W)`.
fn col2im(col: &Array2<f32>, k: usize, mut dx: ArrayViewMut3<'_, f32>) {
    let (_, h, w) = dx.dim();
    let pad = k / 2;
    let src = col.as_slice().expect("standard layout");
    let plane = h * w;
    for (ci, mut chan) in dx.axis_iter_mut(Axis(0)).enumerate() {
        let chan = chan.as_slice_mut().expect("standard layout");
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let in_row = &src[row * plane..(row + 1) * plane];
                let ox_lo = pad.saturating_sub(kx);
                let ox_hi = (w + pad).saturating_sub(kx).min(w);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    let ix_lo = ox_lo + kx - pad;
                    let len = ox_hi - ox_lo;
                    let dst = &mut chan[iy * w + ix_lo..iy * w + ix_lo + len];
                    for (d, s) in dst.iter_mut().zip(&in_row[oy * w + ox_lo..oy * w + ox_hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution used as a reference.
    fn naive_conv(conv: &Conv2d, x: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        let k = conv.kernel as isize;
        let pad = k / 2;
        let wt = conv.weight.value.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let mut out = Array4::zeros((n, conv.out_channels, h, w));
        for b in 0..n {
            for o in 0..conv.out_channels {
                for y in 0..h as isize {
                    for xx in 0..w as isize {
                        let mut acc = conv.bias.value[[o]];
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = y + ky - pad;
                                    let ix = xx + kx - pad;
                                    if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                                        acc += wt[[o, ci, ky as usize, kx as usize]]
                                            * x[[b, ci, iy as usize, ix as usize]];
                                    }
                                }
                            }
                        }
                        out[[b, o, y as usize, xx as usize]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::new(3, 4, 3, &mut rng);
        conv.bias.value.iter_mut().enumerate().for_each(|(i, b)| *b = i as f32 * 0.1);
        let x = Array4::from_shape_fn((2, 3, 5, 7), |(a, b, c, d)| ((a * 7 + b * 5 + c * 3 + d) % 11) as f32 / 11.0 - 0.4);
        let fast = conv.forward(&x);
        let slow = naive_conv(&conv, &x);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), g> == <x, col2im(g)> for arbitrary x, g
        let x = Array3::from_shape_fn((2, 4, 5), |(a, b, c)| (a as f32 - b as f32 * 0.3 + c as f32 * 0.7).sin());
        let g = Array2::from_shape_fn((2 * 9, 20), |(a, b)| ((a * 31 + b * 17) % 13) as f32 / 13.0 - 0.5);
        let mut col = Array2::zeros((18, 20));
        im2col(x.view(), 3, &mut col);
        let lhs: f32 = col.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let mut back = Array3::zeros((2, 4, 5));
        col2im(&g, 3, back.view_mut());
        let rhs: f32 = x.iter().zip(back.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }
}
