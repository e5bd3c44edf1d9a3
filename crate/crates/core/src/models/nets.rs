use hdsr_nn::{
    ctc_loss, relu, relu_backward, softmax, softmax_cross_entropy, BatchNorm2d, BiGru, Conv2d, Dropout, Init, Layer,
    Linear, MaxPool2d, Merge, Param, Parameters, Sequential,
};
use ndarray::{s, Array2, Array3, Array4, Axis};
use rand::Rng;

use super::{ArchId, ArchSpec, Target, BLANK, CRNN_CLASSES};
use crate::error::{Error, Result};
use crate::label::NUM_CLASSES;

/// VGG-16 convolution layout; `0` marks a 2×2 max-pool.
const VGG16_CFG: [usize; 18] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];

fn conv_block(layers: &mut Vec<Layer>, cin: usize, cout: usize, bn: bool, rng: &mut impl Rng) {
    layers.push(Layer::Conv(Conv2d::new(cin, cout, 3, rng)));
    if bn {
        layers.push(Layer::BatchNorm(BatchNorm2d::new(cout)));
    }
    layers.push(Layer::Relu);
}

/// The 13-convolution VGG-16 trunk. Layer indices follow torchvision's
/// `vgg16` / `vgg16_bn` `features` module so pre-trained weights map by name.
pub fn vgg16_features(spec: &ArchSpec, rng: &mut impl Rng) -> Sequential {
    let mut layers = Vec::new();
    let mut cin = 3;
    for c in VGG16_CFG {
        if c == 0 {
            layers.push(Layer::MaxPool(MaxPool2d::new(2, 2)));
        } else {
            let cout = spec.scaled(c);
            conv_block(&mut layers, cin, cout, spec.batch_norm, rng);
            cin = cout;
        }
    }
    Sequential::new(layers)
}

/// Five conv blocks that halve the height five times but the width only
/// twice, so a 96×176 input becomes 3 rows × 44 frames.
pub fn crnn_features(spec: &ArchSpec, rng: &mut impl Rng) -> Sequential {
    let blocks: [(usize, usize, (usize, usize)); 5] =
        [(64, 1, (2, 2)), (128, 1, (2, 2)), (256, 2, (2, 1)), (512, 2, (2, 1)), (512, 1, (2, 1))];
    let mut layers = Vec::new();
    let mut cin = 3;
    for (c, n, (kh, kw)) in blocks {
        let cout = spec.scaled(c);
        for _ in 0..n {
            conv_block(&mut layers, cin, cout, spec.batch_norm, rng);
            cin = cout;
        }
        layers.push(Layer::MaxPool(MaxPool2d::new(kh, kw)));
    }
    Sequential::new(layers)
}

fn flatten(a: Array4<f32>) -> Array2<f32> {
    let (n, c, h, w) = a.dim();
    a.as_standard_layout().into_owned().into_shape_with_order((n, c * h * w)).expect("contiguous")
}

fn contiguous<D: ndarray::Dimension>(a: ndarray::Array<f32, D>) -> ndarray::Array<f32, D> {
    if a.is_standard_layout() { a } else { a.as_standard_layout().into_owned() }
}

fn unflatten(a: Array2<f32>, shape: (usize, usize, usize, usize)) -> Array4<f32> {
    a.as_standard_layout().into_owned().into_shape_with_order(shape).expect("contiguous")
}

fn dropout_train(rate: f32, x: &Array2<f32>, rng: &mut impl Rng) -> (Array2<f32>, Array2<f32>) {
    Dropout::new(rate).forward_train(x, rng)
}

/// Batch output of a network, already normalised to probabilities.
#[derive(Debug, Clone)]
pub enum Output {
    /// `(N, 4, 10)` per-position digit distributions.
    Positions(Array3<f32>),
    /// `(N, T, 11)` per-frame distributions, blank last.
    Frames(Array3<f32>),
    /// `(N, 31)` year-class distributions.
    Classes(Array2<f32>),
}

/// Mean data loss of one batch and the probabilities it was computed from.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f32,
    pub output: Output,
}

#[derive(Debug, Clone)]
pub struct SpecificTaskNet {
    pub features: Sequential,
    pub bottleneck: Linear,
    pub heads: Vec<Linear>,
}

fn position_targets(targets: &[Target]) -> Vec<Vec<usize>> {
    targets.iter().map(Target::indices).collect()
}

/// Sum over the four heads of each head's mean cross-entropy.
fn positions_loss(logits: &[Array2<f32>], targets: &[Vec<usize>]) -> (f32, Vec<Array2<f32>>) {
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(4);
    for (h, l) in logits.iter().enumerate() {
        let t: Vec<usize> = targets.iter().map(|t| t[h]).collect();
        let (lh, g) = softmax_cross_entropy(&l.view(), &t);
        loss += lh;
        grads.push(g);
    }
    (loss, grads)
}

fn stack_positions(logits: &[Array2<f32>]) -> Array3<f32> {
    let probs: Vec<Array2<f32>> = logits.iter().map(|l| softmax(&l.view())).collect();
    let views: Vec<_> = probs.iter().map(|p| p.view()).collect();
    ndarray::stack(Axis(1), &views).expect("equal batch sizes")
}

impl SpecificTaskNet {
    pub fn new(spec: &ArchSpec, rng: &mut impl Rng) -> Self {
        let features = vgg16_features(spec, rng);
        let (c, h, w) = features.output_shape(3, spec.input_height, spec.input_width);
        let units = spec.scaled(spec.bottleneck_units);
        let bottleneck = Linear::new(c * h * w, units, Init::He, rng);
        let heads = (0..4).map(|_| Linear::new(units, 10, Init::Glorot, rng)).collect();
        Self { features, bottleneck, heads }
    }

    fn logits(&self, x: &Array4<f32>) -> Vec<Array2<f32>> {
        let flat = flatten(self.features.forward(x));
        let hidden = relu(&self.bottleneck.forward(&flat.view()));
        self.heads.iter().map(|h| h.forward(&hidden.view())).collect()
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array3<f32> {
        stack_positions(&self.logits(x))
    }

    fn eval_loss(&self, x: &Array4<f32>, targets: &[Target]) -> BatchLoss {
        let logits = self.logits(x);
        let (loss, _) = positions_loss(&logits, &position_targets(targets));
        BatchLoss { loss, output: Output::Positions(stack_positions(&logits)) }
    }

    fn train_batch(&mut self, x: &Array4<f32>, targets: &[Target], dropout: f32, rng: &mut impl Rng) -> BatchLoss {
        let (feat, tape) = self.features.forward_train(x);
        let shape = feat.dim();
        let flat = flatten(feat);
        let hidden = relu(&self.bottleneck.forward(&flat.view()));
        let (dropped, mask) = dropout_train(dropout, &hidden, rng);
        let logits: Vec<Array2<f32>> = self.heads.iter().map(|h| h.forward(&dropped.view())).collect();
        let (loss, grads) = positions_loss(&logits, &position_targets(targets));

        let mut d_dropped = Array2::<f32>::zeros(dropped.raw_dim());
        for (head, g) in self.heads.iter_mut().zip(&grads) {
            d_dropped += &head.backward(&dropped.view(), &g.view());
        }
        let d_hidden = relu_backward(&hidden, &Dropout::backward(&mask, &d_dropped));
        let d_flat = self.bottleneck.backward(&flat.view(), &d_hidden.view());
        self.features.backward(tape, unflatten(d_flat, shape));
        BatchLoss { loss, output: Output::Positions(stack_positions(&logits)) }
    }
}

impl Parameters for SpecificTaskNet {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.features.visit(&join(prefix, "features"), out);
        self.bottleneck.visit(&join(prefix, "bottleneck"), out);
        for (i, h) in self.heads.iter().enumerate() {
            h.visit(&join(prefix, &format!("heads.{i}")), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.features.visit_mut(&join(prefix, "features"), out);
        self.bottleneck.visit_mut(&join(prefix, "bottleneck"), out);
        for (i, h) in self.heads.iter_mut().enumerate() {
            h.visit_mut(&join(prefix, &format!("heads.{i}")), out);
        }
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone)]
pub struct CrnnNet {
    pub features: Sequential,
    pub rnn1: BiGru,
    pub rnn2: BiGru,
    pub classifier: Linear,
}

/// `(N, C, H, T)` feature maps → `(T, N, C·H)` frame sequence.
fn to_sequence(feat: Array4<f32>) -> Array3<f32> {
    let (n, c, h, t) = feat.dim();
    feat.permuted_axes([3, 0, 1, 2]).as_standard_layout().into_owned().into_shape_with_order((t, n, c * h)).expect("contiguous")
}

fn from_sequence(seq: Array3<f32>, (n, c, h, t): (usize, usize, usize, usize)) -> Array4<f32> {
    contiguous(seq).into_shape_with_order((t, n, c, h)).expect("contiguous").permuted_axes([1, 2, 3, 0]).as_standard_layout().into_owned()
}

/// `(T·N, C)` rows back to `(N, T, C)` per-frame softmax.
fn frame_probs(logits: &Array2<f32>, t: usize, n: usize) -> Array3<f32> {
    let c = logits.ncols();
    softmax(&logits.view())
        .into_shape_with_order((t, n, c))
        .expect("contiguous")
        .permuted_axes([1, 0, 2])
        .as_standard_layout()
        .into_owned()
}

impl CrnnNet {
    pub fn new(spec: &ArchSpec, rng: &mut impl Rng) -> Self {
        let features = crnn_features(spec, rng);
        let (c, h, _) = features.output_shape(3, spec.input_height, spec.input_width);
        let units = spec.scaled(spec.gru_units);
        let rnn1 = BiGru::new(c * h, units, Merge::Sum, rng);
        let rnn2 = BiGru::new(rnn1.output_dim(), units, Merge::Concat, rng);
        let classifier = Linear::new(rnn2.output_dim(), CRNN_CLASSES, Init::Glorot, rng);
        Self { features, rnn1, rnn2, classifier }
    }

    /// `(T·N, 11)` logits, time-major.
    fn logits(&self, x: &Array4<f32>) -> (Array2<f32>, usize, usize) {
        let seq = to_sequence(self.features.forward(x));
        let (t, n, _) = seq.dim();
        let h2 = self.rnn2.forward(&self.rnn1.forward(&seq));
        let width = h2.dim().2;
        let flat = contiguous(h2).into_shape_with_order((t * n, width)).expect("contiguous");
        (self.classifier.forward(&flat.view()), t, n)
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array3<f32> {
        let (logits, t, n) = self.logits(x);
        frame_probs(&logits, t, n)
    }

    /// Mean CTC loss and its gradient with respect to the `(T·N, 11)` logits.
    fn ctc(logits: &Array2<f32>, t: usize, n: usize, targets: &[Target]) -> Result<(f32, Array2<f32>)> {
        let view = logits.view().into_shape_with_order((t, n, CRNN_CLASSES)).expect("contiguous");
        let mut grad = Array3::<f32>::zeros((t, n, CRNN_CLASSES));
        let mut total = 0.0f64;
        for (i, target) in targets.iter().enumerate() {
            let (l, g) = ctc_loss(&view.slice(s![.., i, ..]), &target.indices(), BLANK)?;
            total += l as f64;
            grad.slice_mut(s![.., i, ..]).assign(&(g / n as f32));
        }
        Ok(((total / n as f64) as f32, grad.into_shape_with_order((t * n, CRNN_CLASSES)).expect("contiguous")))
    }

    fn eval_loss(&self, x: &Array4<f32>, targets: &[Target]) -> Result<BatchLoss> {
        let (logits, t, n) = self.logits(x);
        let (loss, _) = Self::ctc(&logits, t, n, targets)?;
        Ok(BatchLoss { loss, output: Output::Frames(frame_probs(&logits, t, n)) })
    }

    fn train_batch(&mut self, x: &Array4<f32>, targets: &[Target], dropout: f32, rng: &mut impl Rng) -> Result<BatchLoss> {
        let (feat, tape) = self.features.forward_train(x);
        let shape = feat.dim();
        let seq = to_sequence(feat);
        let (t, n, _) = seq.dim();
        let (h1, c1) = self.rnn1.forward_train(&seq);
        let (h2, c2) = self.rnn2.forward_train(&h1);
        let width = h2.dim().2;
        let flat = contiguous(h2).into_shape_with_order((t * n, width)).expect("contiguous");
        let (dropped, mask) = dropout_train(dropout, &flat, rng);
        let logits = self.classifier.forward(&dropped.view());
        let (loss, grad) = Self::ctc(&logits, t, n, targets)?;

        let d_dropped = self.classifier.backward(&dropped.view(), &grad.view());
        let d_h2 = contiguous(Dropout::backward(&mask, &d_dropped)).into_shape_with_order((t, n, width)).expect("contiguous");
        let d_h1 = self.rnn2.backward(&c2, &d_h2);
        let d_seq = self.rnn1.backward(&c1, &d_h1);
        self.features.backward(tape, from_sequence(d_seq, shape));
        Ok(BatchLoss { loss, output: Output::Frames(frame_probs(&logits, t, n)) })
    }

    /// Number of frames the recurrent stage sees for the given input size.
    pub fn frames(&self, spec: &ArchSpec) -> usize {
        self.features.output_shape(3, spec.input_height, spec.input_width).2
    }
}

impl Parameters for CrnnNet {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.features.visit(&join(prefix, "features"), out);
        self.rnn1.visit(&join(prefix, "rnn1"), out);
        self.rnn2.visit(&join(prefix, "rnn2"), out);
        self.classifier.visit(&join(prefix, "classifier"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.features.visit_mut(&join(prefix, "features"), out);
        self.rnn1.visit_mut(&join(prefix, "rnn1"), out);
        self.rnn2.visit_mut(&join(prefix, "rnn2"), out);
        self.classifier.visit_mut(&join(prefix, "classifier"), out);
    }
}

#[derive(Debug, Clone)]
pub struct NativeNet {
    pub features: Sequential,
    pub fc1: Linear,
    pub fc2: Linear,
    pub classifier: Linear,
}

impl NativeNet {
    pub fn new(spec: &ArchSpec, rng: &mut impl Rng) -> Self {
        let features = vgg16_features(spec, rng);
        let (c, h, w) = features.output_shape(3, spec.input_height, spec.input_width);
        let units = spec.scaled(spec.dense_units);
        Self {
            features,
            fc1: Linear::new(c * h * w, units, Init::He, rng),
            fc2: Linear::new(units, units, Init::He, rng),
            classifier: Linear::new(units, NUM_CLASSES, Init::Glorot, rng),
        }
    }

    fn logits(&self, x: &Array4<f32>) -> Array2<f32> {
        let flat = flatten(self.features.forward(x));
        let a1 = relu(&self.fc1.forward(&flat.view()));
        let a2 = relu(&self.fc2.forward(&a1.view()));
        self.classifier.forward(&a2.view())
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array2<f32> {
        softmax(&self.logits(x).view())
    }

    fn eval_loss(&self, x: &Array4<f32>, targets: &[Target]) -> BatchLoss {
        let logits = self.logits(x);
        let t: Vec<usize> = targets.iter().map(|t| t.indices()[0]).collect();
        let (loss, _) = softmax_cross_entropy(&logits.view(), &t);
        BatchLoss { loss, output: Output::Classes(softmax(&logits.view())) }
    }

    fn train_batch(&mut self, x: &Array4<f32>, targets: &[Target], dropout: f32, rng: &mut impl Rng) -> BatchLoss {
        let (feat, tape) = self.features.forward_train(x);
        let shape = feat.dim();
        let flat = flatten(feat);
        let a1 = relu(&self.fc1.forward(&flat.view()));
        let (d1, m1) = dropout_train(dropout, &a1, rng);
        let a2 = relu(&self.fc2.forward(&d1.view()));
        let (d2, m2) = dropout_train(dropout, &a2, rng);
        let logits = self.classifier.forward(&d2.view());
        let t: Vec<usize> = targets.iter().map(|t| t.indices()[0]).collect();
        let (loss, g) = softmax_cross_entropy(&logits.view(), &t);

        let g2 = self.classifier.backward(&d2.view(), &g.view());
        let g2 = relu_backward(&a2, &Dropout::backward(&m2, &g2));
        let g1 = self.fc2.backward(&d1.view(), &g2.view());
        let g1 = relu_backward(&a1, &Dropout::backward(&m1, &g1));
        let g0 = self.fc1.backward(&flat.view(), &g1.view());
        self.features.backward(tape, unflatten(g0, shape));
        BatchLoss { loss, output: Output::Classes(softmax(&logits.view())) }
    }
}

impl Parameters for NativeNet {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.features.visit(&join(prefix, "features"), out);
        self.fc1.visit(&join(prefix, "fc1"), out);
        self.fc2.visit(&join(prefix, "fc2"), out);
        self.classifier.visit(&join(prefix, "classifier"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.features.visit_mut(&join(prefix, "features"), out);
        self.fc1.visit_mut(&join(prefix, "fc1"), out);
        self.fc2.visit_mut(&join(prefix, "fc2"), out);
        self.classifier.visit_mut(&join(prefix, "classifier"), out);
    }
}

/// Any of the three recognizers.
#[derive(Debug, Clone)]
pub enum Network {
    SpecificTask(SpecificTaskNet),
    Crnn(CrnnNet),
    Vgg16Native(NativeNet),
}

impl Network {
    pub fn new(spec: &ArchSpec, rng: &mut impl Rng) -> Self {
        match spec.arch {
            ArchId::SpecificTask => Network::SpecificTask(SpecificTaskNet::new(spec, rng)),
            ArchId::Crnn => Network::Crnn(CrnnNet::new(spec, rng)),
            ArchId::Vgg16Native => Network::Vgg16Native(NativeNet::new(spec, rng)),
        }
    }

    pub fn arch(&self) -> ArchId {
        match self {
            Network::SpecificTask(_) => ArchId::SpecificTask,
            Network::Crnn(_) => ArchId::Crnn,
            Network::Vgg16Native(_) => ArchId::Vgg16Native,
        }
    }

    /// Inference on an `(N, 3, H, W)` preprocessed batch.
    pub fn forward(&self, x: &Array4<f32>) -> Output {
        match self {
            Network::SpecificTask(n) => Output::Positions(n.forward(x)),
            Network::Crnn(n) => Output::Frames(n.forward(x)),
            Network::Vgg16Native(n) => Output::Classes(n.forward(x)),
        }
    }

    /// Inference-mode loss, no gradients.
    pub fn eval_loss(&self, x: &Array4<f32>, targets: &[Target]) -> Result<BatchLoss> {
        Ok(match self {
            Network::SpecificTask(n) => n.eval_loss(x, targets),
            Network::Crnn(n) => n.eval_loss(x, targets)?,
            Network::Vgg16Native(n) => n.eval_loss(x, targets),
        })
    }

    /// Training-mode forward and backward pass. Gradients accumulate into
    /// the parameters; the caller zeroes them and steps the optimizer.
    pub fn train_batch(&mut self, x: &Array4<f32>, targets: &[Target], dropout: f32, rng: &mut impl Rng) -> Result<BatchLoss> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        Ok(match self {
            Network::SpecificTask(n) => n.train_batch(x, targets, dropout, rng),
            Network::Crnn(n) => n.train_batch(x, targets, dropout, rng)?,
            Network::Vgg16Native(n) => n.train_batch(x, targets, dropout, rng),
        })
    }

    pub fn features_mut(&mut self) -> &mut Sequential {
        match self {
            Network::SpecificTask(n) => &mut n.features,
            Network::Crnn(n) => &mut n.features,
            Network::Vgg16Native(n) => &mut n.features,
        }
    }
}

impl Parameters for Network {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        match self {
            Network::SpecificTask(n) => n.visit(prefix, out),
            Network::Crnn(n) => n.visit(prefix, out),
            Network::Vgg16Native(n) => n.visit(prefix, out),
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        match self {
            Network::SpecificTask(n) => n.visit_mut(prefix, out),
            Network::Crnn(n) => n.visit_mut(prefix, out),
            Network::Vgg16Native(n) => n.visit_mut(prefix, out),
        }
    }
}
