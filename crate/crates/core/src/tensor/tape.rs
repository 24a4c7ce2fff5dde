//! Reverse-mode differentiation over a linear record of operations.

use crate::error::{Error, Result};

use super::ops;
use super::{ConvSpec, LinearSpec, Scalar, Shape, Tensor};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize },
    MaxPool { x: Var, indices: Vec<usize> },
    GlobalAvg { x: Var },
    GlobalMax { x: Var, indices: Vec<usize> },
    Upsample { x: Var, scale: usize },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Sigmoid { x: Var },
    Relu { x: Var },
    ScaleChannels { x: Var, w: Var },
    PixelShuffle { x: Var, r: usize },
    PixelUnshuffle { x: Var, r: usize },
    Slice { x: Var, start: usize },
    Broadcast { x: Var },
    Crop { x: Var },
    Sum { x: Var },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records a forward computation so it can be differentiated afterwards.
///
/// One tape per forward pass; values are never mutated once recorded.
#[derive(Debug, Clone, Default)]
pub struct GradTape<T = f64> {
    nodes: Vec<Node<T>>,
}

/// Tape handles for a convolution's parameters.
#[derive(Debug, Clone, Copy)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Option<Var>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvVars {
    pub fn bind<T: Scalar>(tape: &mut GradTape<T>, spec: &ConvSpec<T>) -> Self {
        ConvVars {
            weight: tape.leaf(spec.weight.clone()),
            bias: spec.bias.as_ref().map(|b| tape.leaf(b.clone())),
            stride: spec.stride,
            padding: spec.padding,
        }
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> {
        std::iter::once(self.weight).chain(self.bias)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl LinearVars {
    pub fn bind<T: Scalar>(tape: &mut GradTape<T>, spec: &LinearSpec<T>) -> Self {
        LinearVars {
            weight: tape.leaf(spec.weight.clone()),
            bias: spec.bias.as_ref().map(|b| tape.leaf(b.clone())),
        }
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> {
        std::iter::once(self.weight).chain(self.bias)
    }
}

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        GradTape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn conv2d(&mut self, x: Var, conv: &ConvVars) -> Result<Var> {
        let out = ops::conv2d_raw(
            self.value(x),
            self.value(conv.weight),
            conv.bias.map(|b| self.value(b)),
            conv.stride,
            conv.padding,
        )?;
        Ok(self.push(
            out,
            Op::Conv { x, w: conv.weight, b: conv.bias, stride: conv.stride, padding: conv.padding },
        ))
    }

    /// Batched linear map over `(n, in, 1, 1)` features.
    pub fn linear(&mut self, x: Var, lin: &LinearVars) -> Result<Var> {
        let out = ops::linear_batch(self.value(x), self.value(lin.weight), lin.bias.map(|b| self.value(b)))?;
        Ok(self.push(out, Op::Conv { x, w: lin.weight, b: lin.bias, stride: 1, padding: 0 }))
    }

    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let (out, indices) = ops::max_pool2d_with_indices(self.value(x), kernel, stride, padding)?;
        Ok(self.push(out, Op::MaxPool { x, indices }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.value(x))?;
        Ok(self.push(out, Op::GlobalAvg { x }))
    }

    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let (out, indices) = ops::global_max_pool_with_indices(self.value(x))?;
        Ok(self.push(out, Op::GlobalMax { x, indices }))
    }

    pub fn interpolate_nearest(&mut self, x: Var, scale: usize) -> Result<Var> {
        let out = ops::interpolate_nearest(self.value(x), scale)?;
        Ok(self.push(out, Op::Upsample { x, scale }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = ops::scale(self.value(x), factor);
        self.push(out, Op::Scale { x, factor })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu { x })
    }

    /// Channel scaling by `(n, c, 1, 1)` weights.
    pub fn scale_channels(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = ops::scale_channels(self.value(x), self.value(w))?;
        Ok(self.push(out, Op::ScaleChannels { x, w }))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let out = ops::pixel_shuffle(self.value(x), r)?;
        Ok(self.push(out, Op::PixelShuffle { x, r }))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let out = ops::pixel_unshuffle(self.value(x), r)?;
        Ok(self.push(out, Op::PixelUnshuffle { x, r }))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = ops::slice_channels(self.value(x), start, len)?;
        Ok(self.push(out, Op::Slice { x, start }))
    }

    pub fn broadcast_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let out = ops::broadcast_spatial(self.value(x), h, w)?;
        Ok(self.push(out, Op::Broadcast { x }))
    }

    pub fn crop_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let out = ops::crop_spatial(self.value(x), h, w)?;
        Ok(self.push(out, Op::Crop { x }))
    }

    /// Sum of all elements as a `(1, 1, 1, 1)` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::full([1, 1, 1, 1], s), Op::Sum { x })
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::contract(format!("backward needs a scalar loss, got shape {ls}")));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(ls));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[id] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, d: Tensor<T>| {
            let slot = &mut grads[v.0];
            *slot = Some(match slot.take() {
                Some(prev) => ops::add(&prev, &d).expect("gradient shapes agree"),
                None => d,
            });
        };
        match op {
            Op::Leaf => {}
            Op::Conv { x, w, b, stride, padding } => {
                let (gx, gw, gb) = ops::conv2d_backward(self.value(*x), self.value(*w), *stride, *padding, g);
                acc(*x, gx);
                acc(*w, gw);
                if let Some(b) = b {
                    let gb = gb.reshape(self.shape(*b)).expect("bias gradient length");
                    acc(*b, gb);
                }
            }
            Op::MaxPool { x, indices } | Op::GlobalMax { x, indices } => {
                acc(*x, ops::scatter_backward(self.shape(*x), indices, g));
            }
            Op::GlobalAvg { x } => acc(*x, ops::global_avg_pool_backward(self.shape(*x), g)),
            Op::Upsample { x, scale } => {
                acc(*x, ops::interpolate_nearest_backward(self.shape(*x), *scale, g));
            }
            Op::Add { a, b } => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul { a, b } => {
                acc(*a, ops::mul(g, self.value(*b)).unwrap());
                acc(*b, ops::mul(g, self.value(*a)).unwrap());
            }
            Op::Scale { x, factor } => acc(*x, ops::scale(g, *factor)),
            Op::Sigmoid { x } => {
                let d = Tensor::from_vec(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(out.data())
                        .map(|(&gv, &s)| gv * s * (T::one() - s))
                        .collect(),
                )
                .unwrap();
                acc(*x, d);
            }
            Op::Relu { x } => {
                let d = Tensor::from_vec(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                        .collect(),
                )
                .unwrap();
                acc(*x, d);
            }
            Op::ScaleChannels { x, w } => {
                let (gx, gw) = ops::scale_channels_backward(self.value(*x), self.value(*w), g);
                acc(*x, gx);
                acc(*w, gw);
            }
            Op::PixelShuffle { x, r } => acc(*x, ops::pixel_unshuffle(g, *r).unwrap()),
            Op::PixelUnshuffle { x, r } => acc(*x, ops::pixel_shuffle(g, *r).unwrap()),
            Op::Slice { x, start } => acc(*x, ops::slice_channels_backward(self.shape(*x), *start, g)),
            Op::Broadcast { x } => acc(*x, ops::spatial_sum(g)),
            Op::Crop { x } => acc(*x, ops::crop_spatial_backward(self.shape(*x), g)),
            Op::Sum { x } => {
                let gv = g.data()[0];
                acc(*x, Tensor::full(self.shape(*x), gv));
            }
        }
    }
}

/// Result of [`GradTape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T = f64> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, tape: &GradTape<T>, v: Var) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }
}
