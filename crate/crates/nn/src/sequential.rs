use ndarray::Array4;

use crate::activation::{relu, relu_backward};
use crate::conv::Conv2d;
use crate::norm::{BatchNorm2d, BatchNormCache};
use crate::param::{join, Param, Parameters};
use crate::pool::{MaxPool2d, PoolCache};

/// One stage of a convolutional stack.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm2d),
    Relu,
    MaxPool(MaxPool2d),
}

#[derive(Debug)]
enum Cache {
    Input(Array4<f32>),
    Output(Array4<f32>),
    Norm(BatchNormCache),
    Pool(PoolCache),
}

/// Recorded intermediate state of a training forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    caches: Vec<Cache>,
}

/// A feed-forward chain of [`Layer`]s over `(N, C, H, W)` tensors.
///
/// Layer `i` owns parameters named `{prefix}.{i}.*`, mirroring how
/// `torch.nn.Sequential` numbers its children.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(c) => c.forward(&cur),
                Layer::BatchNorm(b) => b.forward(&cur),
                Layer::Relu => relu(&cur),
                Layer::MaxPool(p) => p.forward(&cur),
            };
        }
        cur
    }

    pub fn forward_train(&mut self, x: &Array4<f32>) -> (Array4<f32>, Tape) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = match layer {
                Layer::Conv(c) => {
                    let y = c.forward(&cur);
                    caches.push(Cache::Input(cur));
                    y
                }
                Layer::BatchNorm(b) => {
                    let (y, cache) = b.forward_train(&cur);
                    caches.push(Cache::Norm(cache));
                    y
                }
                Layer::Relu => {
                    let y = relu(&cur);
                    caches.push(Cache::Output(y.clone()));
                    y
                }
                Layer::MaxPool(p) => {
                    let (y, cache) = p.forward_train(&cur);
                    caches.push(Cache::Pool(cache));
                    y
                }
            };
        }
        (cur, Tape { caches })
    }

    /// Back-propagates through the recorded tape, accumulating parameter
    /// gradients, and returns the gradient with respect to the input.
    pub fn backward(&mut self, tape: Tape, dy: Array4<f32>) -> Array4<f32> {
        let mut grad = dy;
        for (layer, cache) in self.layers.iter_mut().zip(tape.caches).rev() {
            grad = match (layer, cache) {
                (Layer::Conv(c), Cache::Input(x)) => c.backward(&x, &grad),
                (Layer::BatchNorm(b), Cache::Norm(cache)) => b.backward(&cache, &grad),
                (Layer::Relu, Cache::Output(y)) => relu_backward(&y, &grad),
                (Layer::MaxPool(p), Cache::Pool(cache)) => p.backward(&cache, &grad),
                _ => unreachable!("tape does not match layer stack"),
            };
        }
        grad
    }

    /// Output `(C, H, W)` for a given input `(C, H, W)`.
    pub fn output_shape(&self, c: usize, h: usize, w: usize) -> (usize, usize, usize) {
        self.layers.iter().fold((c, h, w), |(c, h, w), layer| match layer {
            Layer::Conv(conv) => (conv.out_channels(), h, w),
            Layer::MaxPool(p) => {
                let (oh, ow) = p.output_hw(h, w);
                (c, oh, ow)
            }
            _ => (c, h, w),
        })
    }

    pub fn conv_layers_mut(&mut self) -> impl Iterator<Item = &mut Conv2d> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }
}

impl Parameters for Sequential {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for (i, layer) in self.layers.iter().enumerate() {
            let name = join(prefix, &i.to_string());
            match layer {
                Layer::Conv(c) => c.visit(&name, out),
                Layer::BatchNorm(b) => b.visit(&name, out),
                _ => {}
            }
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let name = join(prefix, &i.to_string());
            match layer {
                Layer::Conv(c) => c.visit_mut(&name, out),
                Layer::BatchNorm(b) => b.visit_mut(&name, out),
                _ => {}
            }
        }
    }
}
