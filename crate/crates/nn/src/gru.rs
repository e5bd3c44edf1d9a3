use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayD, ArrayView2, Axis, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::param::{join, Param, Parameters, Role};

/// Gated recurrent unit over time-major sequences `(T, N, input)`.
///
/// Gate order in the stacked weights is reset, update, candidate:
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct Gru {
    pub weight_ih: Param,
    pub weight_hh: Param,
    pub bias_ih: Param,
    pub bias_hh: Param,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    input: Array3<f32>,
    /// Hidden state entering each step, `(T, N, H)`.
    h_prev: Array3<f32>,
    r: Array3<f32>,
    z: Array3<f32>,
    n: Array3<f32>,
    /// `W_hn h + b_hn` per step, needed for the reset-gate gradient.
    hn: Array3<f32>,
}

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

impl Gru {
    /// Uniform(±1/√hidden) initialisation for every tensor.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden as f32).sqrt();
        let dist = Uniform::new_inclusive(-k, k).expect("finite bounds");
        let mut make = |shape: &[usize], role| {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|_| dist.sample(rng)).collect();
            Param::new(ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape"), role)
        };
        Self {
            weight_ih: make(&[3 * hidden, input], Role::Kernel),
            weight_hh: make(&[3 * hidden, hidden], Role::Kernel),
            bias_ih: make(&[3 * hidden], Role::Bias),
            bias_hh: make(&[3 * hidden], Role::Bias),
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn w_ih(&self) -> ArrayView2<'_, f32> {
        self.weight_ih.value.view().into_dimensionality().expect("2-D")
    }

    fn w_hh(&self) -> ArrayView2<'_, f32> {
        self.weight_hh.value.view().into_dimensionality().expect("2-D")
    }

    /// Input projections for all steps at once: `(T, N, 3H)`.
    fn project_inputs(&self, x: &Array3<f32>) -> Array3<f32> {
        let (t, n, i) = x.dim();
        let x = x.as_standard_layout();
        let x2 = x.view().into_shape_with_order((t * n, i)).expect("contiguous input");
        let mut gx = x2.dot(&self.w_ih().t());
        gx += &self.bias_ih.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-D");
        gx.into_shape_with_order((t, n, 3 * self.hidden)).expect("reshape")
    }

    pub fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        self.run(x, None)
    }

    pub fn forward_train(&self, x: &Array3<f32>) -> (Array3<f32>, GruCache) {
        let (t, n, _) = x.dim();
        let h = self.hidden;
        let mut cache = GruCache {
            input: x.clone(),
            h_prev: Array3::zeros((t, n, h)),
            r: Array3::zeros((t, n, h)),
            z: Array3::zeros((t, n, h)),
            n: Array3::zeros((t, n, h)),
            hn: Array3::zeros((t, n, h)),
        };
        let y = self.run(x, Some(&mut cache));
        (y, cache)
    }

    fn run(&self, x: &Array3<f32>, mut cache: Option<&mut GruCache>) -> Array3<f32> {
        let (t_len, n, _) = x.dim();
        let h = self.hidden;
        let gx = self.project_inputs(x);
        let w_hh = self.w_hh();
        let b_hh = self.bias_hh.value.as_slice().expect("contiguous bias");
        let mut out = Array3::<f32>::zeros((t_len, n, h));
        let mut state = Array2::<f32>::zeros((n, h));
        let mut gh = Array2::<f32>::zeros((n, 3 * h));
        for t in 0..t_len {
            general_mat_mul(1.0, &state, &w_hh.t(), 0.0, &mut gh);
            let gxt = gx.index_axis(Axis(0), t);
            let mut next = Array2::<f32>::zeros((n, h));
            for b in 0..n {
                for j in 0..h {
                    let r = sigmoid(gxt[[b, j]] + gh[[b, j]] + b_hh[j]);
                    let z = sigmoid(gxt[[b, h + j]] + gh[[b, h + j]] + b_hh[h + j]);
                    let hn = gh[[b, 2 * h + j]] + b_hh[2 * h + j];
                    let cand = (gxt[[b, 2 * h + j]] + r * hn).tanh();
                    next[[b, j]] = (1.0 - z) * cand + z * state[[b, j]];
                    if let Some(c) = cache.as_deref_mut() {
                        c.r[[t, b, j]] = r;
                        c.z[[t, b, j]] = z;
                        c.n[[t, b, j]] = cand;
                        c.hn[[t, b, j]] = hn;
                        c.h_prev[[t, b, j]] = state[[b, j]];
                    }
                }
            }
            out.index_axis_mut(Axis(0), t).assign(&next);
            state = next;
        }
        out
    }

    /// Back-propagation through time. `dy` is the gradient with respect to
    /// every output step; returns the gradient with respect to the input.
    pub fn backward(&mut self, cache: &GruCache, dy: &Array3<f32>) -> Array3<f32> {
        let (t_len, n, input) = cache.input.dim();
        let h = self.hidden;
        let w_hh = self.w_hh().to_owned();
        let mut dgx_all = Array3::<f32>::zeros((t_len, n, 3 * h));
        let mut dw_hh = Array2::<f32>::zeros((3 * h, h));
        let mut db_hh = vec![0.0f32; 3 * h];
        let mut dh_next = Array2::<f32>::zeros((n, h));
        let mut dgh = Array2::<f32>::zeros((n, 3 * h));
        for t in (0..t_len).rev() {
            let mut dh = dy.index_axis(Axis(0), t).to_owned();
            dh += &dh_next;
            let mut dh_prev = Array2::<f32>::zeros((n, h));
            {
                let mut dgx = dgx_all.index_axis_mut(Axis(0), t);
                for b in 0..n {
                    for j in 0..h {
                        let g = dh[[b, j]];
                        let r = cache.r[[t, b, j]];
                        let z = cache.z[[t, b, j]];
                        let cand = cache.n[[t, b, j]];
                        let hp = cache.h_prev[[t, b, j]];
                        let dn = g * (1.0 - z) * (1.0 - cand * cand);
                        let dz = g * (hp - cand) * z * (1.0 - z);
                        let dr = dn * cache.hn[[t, b, j]] * r * (1.0 - r);
                        dh_prev[[b, j]] = g * z;
                        dgx[[b, j]] = dr;
                        dgx[[b, h + j]] = dz;
                        dgx[[b, 2 * h + j]] = dn;
                        dgh[[b, j]] = dr;
                        dgh[[b, h + j]] = dz;
                        dgh[[b, 2 * h + j]] = dn * r;
                    }
                }
            }
            let hp = cache.h_prev.index_axis(Axis(0), t);
            general_mat_mul(1.0, &dgh.t(), &hp, 1.0, &mut dw_hh);
            for (acc, col) in db_hh.iter_mut().zip(dgh.axis_iter(Axis(1))) {
                *acc += col.sum();
            }
            general_mat_mul(1.0, &dgh, &w_hh, 1.0, &mut dh_prev);
            dh_next = dh_prev;
        }
        let dgx2 = dgx_all
            .view()
            .into_shape_with_order((t_len * n, 3 * h))
            .expect("contiguous");
        let x2 = cache
            .input
            .view()
            .into_shape_with_order((t_len * n, input))
            .expect("contiguous");
        if !self.weight_ih.frozen {
            let mut gw = self.weight_ih.grad.view_mut().into_dimensionality::<ndarray::Ix2>().expect("2-D");
            general_mat_mul(1.0, &dgx2.t(), &x2, 1.0, &mut gw);
            let mut gwh = self.weight_hh.grad.view_mut().into_dimensionality::<ndarray::Ix2>().expect("2-D");
            gwh += &dw_hh;
            let dbi = dgx2.sum_axis(Axis(0));
            for (g, d) in self.bias_ih.grad.iter_mut().zip(dbi.iter()) {
                *g += d;
            }
            for (g, d) in self.bias_hh.grad.iter_mut().zip(db_hh) {
                *g += d;
            }
        }
        let dx = dgx2.dot(&self.w_ih());
        dx.into_shape_with_order((t_len, n, input)).expect("reshape")
    }
}

impl Parameters for Gru {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight_ih"), &self.weight_ih));
        out.push((join(prefix, "weight_hh"), &self.weight_hh));
        out.push((join(prefix, "bias_ih"), &self.bias_ih));
        out.push((join(prefix, "bias_hh"), &self.bias_hh));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight_ih"), &mut self.weight_ih));
        out.push((join(prefix, "weight_hh"), &mut self.weight_hh));
        out.push((join(prefix, "bias_ih"), &mut self.bias_ih));
        out.push((join(prefix, "bias_hh"), &mut self.bias_hh));
    }
}

/// How the two directions of a [`BiGru`] are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Merge {
    /// Element-wise sum, output width `H`.
    Sum,
    /// Feature concatenation `[forward, backward]`, output width `2H`.
    Concat,
}

/// A pair of GRUs reading the sequence left-to-right and right-to-left.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub forward: Gru,
    pub backward: Gru,
    pub merge: Merge,
}

#[derive(Debug, Clone)]
pub struct BiGruCache {
    fwd: GruCache,
    bwd: GruCache,
}

fn reverse_time(x: &Array3<f32>) -> Array3<f32> {
    x.slice(s![..;-1, .., ..]).as_standard_layout().into_owned()
}

impl BiGru {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, merge: Merge, rng: &mut R) -> Self {
        Self {
            forward: Gru::new(input, hidden, rng),
            backward: Gru::new(input, hidden, rng),
            merge,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.merge {
            Merge::Sum => self.forward.hidden(),
            Merge::Concat => 2 * self.forward.hidden(),
        }
    }

    fn combine(&self, f: Array3<f32>, b_rev: Array3<f32>) -> Array3<f32> {
        let b = reverse_time(&b_rev);
        match self.merge {
            Merge::Sum => f + b,
            Merge::Concat => ndarray::concatenate(Axis(2), &[f.view(), b.view()]).expect("same T, N"),
        }
    }

    pub fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let f = self.forward.forward(x);
        let b = self.backward.forward(&reverse_time(x));
        self.combine(f, b)
    }

    pub fn forward_train(&self, x: &Array3<f32>) -> (Array3<f32>, BiGruCache) {
        let (f, fwd) = self.forward.forward_train(x);
        let (b, bwd) = self.backward.forward_train(&reverse_time(x));
        (self.combine(f, b), BiGruCache { fwd, bwd })
    }

    pub fn backward(&mut self, cache: &BiGruCache, dy: &Array3<f32>) -> Array3<f32> {
        let h = self.forward.hidden();
        let (df, db) = match self.merge {
            Merge::Sum => (dy.clone(), dy.clone()),
            Merge::Concat => (
                dy.slice(s![.., .., ..h]).to_owned(),
                dy.slice(s![.., .., h..]).to_owned(),
            ),
        };
        let dx_f = self.forward.backward(&cache.fwd, &df);
        let dx_b = self.backward.backward(&cache.bwd, &reverse_time(&db));
        dx_f + reverse_time(&dx_b)
    }
}

impl Parameters for BiGru {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.forward.visit(&join(prefix, "forward"), out);
        self.backward.visit(&join(prefix, "backward"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.forward.visit_mut(&join(prefix, "forward"), out);
        self.backward.visit_mut(&join(prefix, "backward"), out);
    }
}
