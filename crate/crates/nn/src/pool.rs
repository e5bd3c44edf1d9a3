use ndarray::Array4;

/// Non-overlapping max pooling with window == stride. Trailing rows or
/// columns that do not fill a window are dropped (floor semantics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub kh: usize,
    pub kw: usize,
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_dim: (usize, usize, usize, usize),
    /// Flat index into the input plane of each output's winner.
    argmax: Vec<u32>,
}

impl MaxPool2d {
    pub fn new(kh: usize, kw: usize) -> Self {
        assert!(kh > 0 && kw > 0);
        Self { kh, kw }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h / self.kh, w / self.kw)
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        self.run(x, None)
    }

    pub fn forward_train(&self, x: &Array4<f32>) -> (Array4<f32>, PoolCache) {
        let mut argmax = Vec::new();
        let y = self.run(x, Some(&mut argmax));
        (
            y,
            PoolCache {
                input_dim: x.dim(),
                argmax,
            },
        )
    }

    fn run(&self, x: &Array4<f32>, mut argmax: Option<&mut Vec<u32>>) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = self.output_hw(h, w);
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let mut out = Array4::<f32>::zeros((n, c, oh, ow));
        let dst = out.as_slice_mut().expect("standard layout");
        if let Some(a) = argmax.as_deref_mut() {
            a.reserve(n * c * oh * ow);
        }
        let plane = h * w;
        for (p, chunk) in dst.chunks_mut(oh * ow).enumerate() {
            let chan = &src[p * plane..(p + 1) * plane];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dy in 0..self.kh {
                        let row = (oy * self.kh + dy) * w;
                        for dx in 0..self.kw {
                            let idx = row + ox * self.kw + dx;
                            let v = chan[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    chunk[oy * ow + ox] = best;
                    if let Some(a) = argmax.as_deref_mut() {
                        a.push(best_idx as u32);
                    }
                }
            }
        }
        out
    }

    pub fn backward(&self, cache: &PoolCache, dy: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = cache.input_dim;
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        let dst = dx.as_slice_mut().expect("standard layout");
        let dy = dy.as_standard_layout();
        let g = dy.as_slice().expect("standard layout");
        let per_plane = g.len() / (n * c).max(1);
        let plane = h * w;
        for (i, (&grad, &idx)) in g.iter().zip(&cache.argmax).enumerate() {
            let p = i / per_plane;
            dst[p * plane + idx as usize] += grad;
        }
        dx
    }
}
