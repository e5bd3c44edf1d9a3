//! Finite-difference checks of every hand-written backward pass, plus a
//! brute-force path enumeration oracle for the CTC loss.

use hdsr_nn::*;
use ndarray::{Array2, Array3, Array4, ArrayD, Dimension};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f32 = 1e-2;


fn random_like<D: Dimension>(shape: D, rng: &mut ChaCha8Rng) -> ndarray::Array<f32, D> {
    ndarray::Array::from_shape_simple_fn(shape, || rng.random_range(-1.0f32..1.0))
}

fn close(analytic: f32, numeric: f32) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= 2e-2 * analytic.abs().max(numeric.abs()) + 2e-3
}

/// Checks `d/dθ Σ f(θ) ⊙ probe` at `samples` random coordinates of `value`.
fn check_coords(
    label: &str,
    value: &mut ArrayD<f32>,
    analytic: &ArrayD<f32>,
    samples: usize,
    eps: f32,
    rng: &mut ChaCha8Rng,
    mut objective: impl FnMut(&ArrayD<f32>) -> f32,
) {
    let n = value.len();
    for _ in 0..samples {
        let i = rng.random_range(0..n);
        let orig = value.as_slice().unwrap()[i];
        value.as_slice_mut().unwrap()[i] = orig + eps;
        let plus = objective(value);
        value.as_slice_mut().unwrap()[i] = orig - eps;
        let minus = objective(value);
        value.as_slice_mut().unwrap()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.as_slice().unwrap()[i];
        assert!(close(a, numeric), "{label}[{i}]: analytic {a} vs numeric {numeric}");
    }
}

fn dot<D: Dimension>(a: &ndarray::Array<f32, D>, b: &ndarray::Array<f32, D>) -> f32 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn check_stack(mut net: Sequential, mut rng: ChaCha8Rng, eps: f32) {
    let x = random_like(ndarray::Dim([2, 2, 4, 5]), &mut rng);
    let (y, tape) = net.forward_train(&x);
    let probe = random_like(y.raw_dim(), &mut rng);
    net.zero_grad();
    let dx = net.backward(tape, probe.clone());

    let objective = |net: &mut Sequential, x: &Array4<f32>| {
        let mut copy = net.clone();
        let (y, _) = copy.forward_train(x);
        dot(&y, &probe)
    };

    let mut xd = x.clone().into_dyn();
    let dxd = dx.into_dyn();
    check_coords("input", &mut xd, &dxd, 20, eps, &mut rng.clone(), |v| {
        objective(&mut net.clone(), &v.clone().into_dimensionality().unwrap())
    });

    let names: Vec<String> = net.named_params().into_iter().filter(|(_, p)| p.role != Role::Buffer).map(|(n, _)| n).collect();
    for name in names {
        let snapshot = net.clone();
        let (grad, mut value) = {
            let params = snapshot.named_params();
            let p = params.iter().find(|(n, _)| *n == name).unwrap().1;
            (p.grad.clone(), p.value.clone())
        };
        let mut local = rng.clone();
        check_coords(&name, &mut value, &grad, 6, eps, &mut local, |v| {
            let mut trial = snapshot.clone();
            for (n, p) in trial.named_params_mut() {
                if n == name {
                    p.value = v.clone();
                }
            }
            objective(&mut trial, &x)
        });
    }
}

#[test]
fn conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = Sequential::new(vec![Layer::Conv(Conv2d::new(2, 3, 3, &mut rng))]);
    check_stack(net, rng, EPS);
}

#[test]
fn batchnorm_gradients() {
    let rng = ChaCha8Rng::seed_from_u64(12);
    let net = Sequential::new(vec![Layer::BatchNorm(BatchNorm2d::new(2))]);
    check_stack(net, rng, EPS);
}

#[test]
fn relu_pool_gradients() {
    let rng = ChaCha8Rng::seed_from_u64(13);
    let net = Sequential::new(vec![Layer::Relu, Layer::MaxPool(MaxPool2d::new(2, 2))]);
    check_stack(net, rng, EPS);
}

#[test]
fn conv_bn_relu_pool_stack_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Sequential::new(vec![
        Layer::Conv(Conv2d::new(2, 3, 3, &mut rng)),
        Layer::BatchNorm(BatchNorm2d::new(3)),
        Layer::Relu,
        Layer::MaxPool(MaxPool2d::new(2, 1)),
        Layer::Conv(Conv2d::new(3, 2, 3, &mut rng)),
    ]);
    // small step: ReLU and max-pool kinks sit close together after BN
    check_stack(net, rng, 1e-3);
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut layer = Linear::new(4, 3, Init::Glorot, &mut rng);
    let x = random_like(ndarray::Dim([5, 4]), &mut rng);
    let probe = random_like(ndarray::Dim([5, 3]), &mut rng);
    let dx = layer.backward(&x.view(), &probe.view());
    let mut xd = x.clone().into_dyn();
    check_coords("x", &mut xd, &dx.into_dyn(), 10, EPS, &mut rng, |v| {
        let v: Array2<f32> = v.clone().into_dimensionality().unwrap();
        dot(&layer.forward(&v.view()), &probe)
    });
    let grad = layer.weight.grad.clone();
    let mut w = layer.weight.value.clone();
    let mut rng2 = ChaCha8Rng::seed_from_u64(6);
    check_coords("w", &mut w, &grad, 10, EPS, &mut rng2, |v| {
        let mut l = layer.clone();
        l.weight.value = v.clone();
        dot(&l.forward(&x.view()), &probe)
    });
}

fn check_bigru(merge: Merge) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut gru = BiGru::new(3, 4, merge, &mut rng);
    let x = random_like(ndarray::Dim([6, 2, 3]), &mut rng);
    let (y, cache) = gru.forward_train(&x);
    assert_eq!(y, gru.forward(&x), "train and inference paths agree");
    let probe = random_like(y.raw_dim(), &mut rng);
    gru.zero_grad();
    let dx = gru.backward(&cache, &probe);
    let mut xd = x.clone().into_dyn();
    check_coords("x", &mut xd, &dx.into_dyn(), 15, EPS, &mut rng, |v| {
        let v: Array3<f32> = v.clone().into_dimensionality().unwrap();
        dot(&gru.forward(&v), &probe)
    });
    let names: Vec<String> = gru.named_params().into_iter().map(|(n, _)| n).collect();
    for name in names {
        let (grad, mut value) = {
            let params = gru.named_params();
            let p = params.iter().find(|(n, _)| *n == name).unwrap().1;
            (p.grad.clone(), p.value.clone())
        };
        check_coords(&name, &mut value, &grad, 6, EPS, &mut rng, |v| {
            let mut trial = gru.clone();
            for (n, p) in trial.named_params_mut() {
                if n == name {
                    p.value = v.clone();
                }
            }
            dot(&trial.forward(&x), &probe)
        });
    }
}

#[test]
fn bigru_sum_merge_gradients() {
    check_bigru(Merge::Sum);
}

#[test]
fn bigru_concat_merge_gradients() {
    check_bigru(Merge::Concat);
}

#[test]
fn ctc_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logits = random_like(ndarray::Dim([7, 4]), &mut rng) * 2.0;
    let target = [0usize, 2, 2];
    let (_, grad) = ctc_loss(&logits.view(), &target, 3).unwrap();
    let mut v = logits.clone().into_dyn();
    check_coords("logits", &mut v, &grad.into_dyn(), 28, EPS, &mut rng, |v| {
        let l: Array2<f32> = v.clone().into_dimensionality().unwrap();
        ctc_loss(&l.view(), &target, 3).unwrap().0
    });
}

fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != blank {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

/// Sums the probability of every length-T path that collapses to `target`.
fn brute_force_nll(logits: &Array2<f32>, target: &[usize], blank: usize) -> f64 {
    let (t, c) = logits.dim();
    let probs = softmax(&logits.view());
    let mut total = 0.0f64;
    let mut path = vec![0usize; t];
    for code in 0..c.pow(t as u32) {
        let mut k = code;
        for slot in path.iter_mut() {
            *slot = k % c;
            k /= c;
        }
        if collapse(&path, blank) == target {
            total += path.iter().enumerate().map(|(i, &s)| probs[[i, s]] as f64).product::<f64>();
        }
    }
    -total.ln()
}

#[test]
fn ctc_loss_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let targets: [&[usize]; 6] = [&[], &[0], &[1, 1], &[0, 1, 0], &[2, 2, 2], &[0, 1]];
    for trial in 0..30 {
        let t = rng.random_range(3..=6);
        let logits = random_like(ndarray::Dim([t, 4]), &mut rng) * 3.0;
        let target = targets[trial % targets.len()];
        let expected = brute_force_nll(&logits, target, 3);
        match ctc_loss(&logits.view(), target, 3) {
            Ok((loss, _)) => assert!(
                (loss as f64 - expected).abs() < 1e-4 * expected.abs().max(1.0),
                "T={t} target={target:?}: {loss} vs {expected}"
            ),
            Err(NnError::CtcInfeasible { .. }) => assert!(expected.is_infinite()),
            Err(e) => panic!("{e}"),
        }
    }
}
