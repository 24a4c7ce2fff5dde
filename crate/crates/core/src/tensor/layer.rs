use rand::Rng;

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Deterministic weight initialisation: uniform in `±1/sqrt(fan_in)` for both
/// weights and biases, drawn from the caller's RNG in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamInit {
    Uniform,
    Zeros,
}

/// A 2-D convolution layer. Weight is `(out, in, k, k)`, bias `(out, 1, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec<T = f64> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> ConvSpec<T> {
    /// Stride-1 convolution with "same" padding `(k - 1) / 2`.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        bias: bool,
        init: ParamInit,
        rng: &mut R,
    ) -> Self {
        let shape = [out_channels, in_channels, kernel, kernel];
        let bshape = [out_channels, 1, 1, 1];
        let (weight, bias) = match init {
            ParamInit::Zeros => (Tensor::zeros(shape), bias.then(|| Tensor::zeros(bshape))),
            ParamInit::Uniform => {
                let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
                let w = Tensor::uniform(shape, -bound, bound, rng);
                let b = bias.then(|| Tensor::uniform(bshape, -bound, bound, rng));
                (w, b)
            }
        };
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: (kernel - 1) / 2,
            weight,
            bias,
        }
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, bias: bool) -> Self {
        Self::new(
            in_channels,
            out_channels,
            kernel,
            bias,
            ParamInit::Zeros,
            &mut rand::rngs::mock::StepRng::new(0, 0),
        )
    }

    pub fn from_parts(weight: Tensor<T>, bias: Option<Tensor<T>>, stride: usize, padding: usize) -> Result<Self> {
        let ws = weight.shape();
        if ws.h != ws.w || ws.h == 0 {
            return Err(Error::config(format!("convolution kernel must be square and non-empty, got {ws}")));
        }
        if let Some(b) = &bias {
            if b.numel() != ws.n {
                return Err(Error::config(format!(
                    "bias of length {} for {} output channels",
                    b.numel(),
                    ws.n
                )));
            }
        }
        if stride == 0 {
            return Err(Error::config("convolution stride must be >= 1"));
        }
        Ok(ConvSpec {
            in_channels: ws.c,
            out_channels: ws.n,
            kernel: ws.h,
            stride,
            padding,
            weight,
            bias,
        })
    }

    pub fn bias_enabled(&self) -> bool {
        self.bias.is_some()
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
            + if self.bias_enabled() { self.out_channels } else { 0 }
    }
}

/// A fully connected layer. Weight is stored as `(out, in, 1, 1)` so that the
/// batched form is a 1x1 convolution over `(n, in, 1, 1)` feature tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSpec<T = f64> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> LinearSpec<T> {
    pub fn new<R: Rng + ?Sized>(
        in_features: usize,
        out_features: usize,
        bias: bool,
        init: ParamInit,
        rng: &mut R,
    ) -> Self {
        let conv = ConvSpec::new(in_features, out_features, 1, bias, init, rng);
        LinearSpec {
            in_features,
            out_features,
            weight: conv.weight,
            bias: conv.bias,
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        let conv = ConvSpec::from_parts(weight, bias, 1, 0)?;
        if conv.kernel != 1 {
            return Err(Error::config("linear weight must be shaped (out, in, 1, 1)"));
        }
        Ok(LinearSpec {
            in_features: conv.in_channels,
            out_features: conv.out_channels,
            weight: conv.weight,
            bias: conv.bias,
        })
    }

    pub fn bias_enabled(&self) -> bool {
        self.bias.is_some()
    }

    pub fn param_count(&self) -> usize {
        self.out_features * self.in_features + if self.bias_enabled() { self.out_features } else { 0 }
    }
}
