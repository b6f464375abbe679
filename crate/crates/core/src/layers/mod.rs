//! Differentiable layers.
//!
//! All spatial layers take either a single sample `[C, H, W]` or a batch
//! `[N, C, H, W]` and return the same rank they were given. Each layer
//! caches what it needs during `forward`; `backward` consumes the gradient
//! of a scalar loss with respect to the layer output and returns the
//! gradient with respect to its input, writing parameter gradients into the
//! layer's [`Param`]s.

mod activation;
mod batchnorm;
mod concat;
mod conv;
mod dense;
mod dropout;
mod pool;
mod softmax;

pub use activation::{maxout, MaxoutLayer, MaxoutSpec, ReluLayer};
pub use batchnorm::BatchNormLayer;
pub use concat::{concat_channels, split_channels};
pub use conv::ConvLayer;
pub(crate) use conv::im2col;
pub use dense::DenseLayer;
pub use dropout::DropoutLayer;
pub use pool::PoolLayer;
pub use softmax::{softmax, ChannelSoftmax};

use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Train or inference behaviour for batch-norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Infer,
}

/// A learnable tensor (or a persistent buffer such as a running mean)
/// together with its gradient and freeze state.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Buffers (running statistics) are serialized but never optimized.
    pub learnable: bool,
    /// Frozen parameters still receive gradients but the optimizer skips them.
    pub frozen: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros_like(&value);
        Self { name: name.into(), value, grad, learnable: true, frozen: false }
    }

    pub fn buffer(name: impl Into<String>, value: Tensor) -> Self {
        Self { learnable: false, ..Self::new(name, value) }
    }

    pub fn trainable(&self) -> bool {
        self.learnable && !self.frozen
    }
}

/// Kernel initialisation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Init {
    /// Zero-mean normal, std = sqrt(2 / fan_in).
    #[default]
    He,
    /// Zero-mean normal with a fixed std.
    Normal(f64),
}

impl Init {
    pub fn std(self, fan_in: usize) -> f64 {
        match self {
            Init::He => (2.0 / fan_in.max(1) as f64).sqrt(),
            Init::Normal(std) => std,
        }
    }
}

/// Splits a `[C,H,W]` or `[N,C,H,W]` shape into `(n, c, h, w, batched)`.
pub(crate) fn spatial_dims(shape: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w, false)),
        [n, c, h, w] => Ok((n, c, h, w, true)),
        _ => Err(shape_err!("expected [C,H,W] or [N,C,H,W], got {shape:?}")),
    }
}

pub(crate) fn spatial_shape(n: usize, c: usize, h: usize, w: usize, batched: bool) -> Vec<usize> {
    if batched {
        vec![n, c, h, w]
    } else {
        vec![c, h, w]
    }
}

pub(crate) fn no_cache(layer: &str) -> Error {
    Error::State(format!("{layer}: backward called without a cached forward pass"))
}

/// Flattens `[N, C, H, W]` to `[N, C*H*W]`, and any lower-rank input to a vector.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    cached_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output_shape(&self, shape: &[usize]) -> Vec<usize> {
        if shape.len() == 4 {
            vec![shape[0], shape[1..].iter().product()]
        } else {
            vec![shape.iter().product()]
        }
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        self.cached_shape = Some(input.shape().to_vec());
        input.clone().reshape(&self.output_shape(input.shape()))
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let shape = self.cached_shape.as_ref().ok_or_else(|| no_cache("flatten"))?;
        grad_out.clone().reshape(shape)
    }
}

/// The layer kinds a model graph is assembled from.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(ConvLayer),
    BatchNorm(BatchNormLayer),
    Relu(ReluLayer),
    Maxout(MaxoutLayer),
    Dropout(DropoutLayer),
    Pool(PoolLayer),
    ChannelSoftmax(ChannelSoftmax),
    Flatten(Flatten),
    Dense(DenseLayer),
}

impl Layer {
    pub fn forward(&mut self, input: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.forward(input),
            Layer::BatchNorm(l) => l.forward(input, mode),
            Layer::Relu(l) => l.forward(input),
            Layer::Maxout(l) => l.forward(input),
            Layer::Dropout(l) => l.forward(input, mode, rng),
            Layer::Pool(l) => l.forward(input),
            Layer::ChannelSoftmax(l) => l.forward(input),
            Layer::Flatten(l) => l.forward(input),
            Layer::Dense(l) => l.forward(input),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.backward(grad_out),
            Layer::BatchNorm(l) => l.backward(grad_out),
            Layer::Relu(l) => l.backward(grad_out),
            Layer::Maxout(l) => l.backward(grad_out),
            Layer::Dropout(l) => l.backward(grad_out),
            Layer::Pool(l) => l.backward(grad_out),
            Layer::ChannelSoftmax(l) => l.backward(grad_out),
            Layer::Flatten(l) => l.backward(grad_out),
            Layer::Dense(l) => l.backward(grad_out),
        }
    }

    /// Shape propagation without touching data.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv(l) => l.output_shape(input),
            Layer::Pool(l) => l.output_shape(input),
            Layer::Maxout(l) => l.output_shape(input),
            Layer::Dense(l) => l.output_shape(input),
            Layer::Flatten(l) => Ok(l.output_shape(input)),
            Layer::BatchNorm(l) => l.output_shape(input),
            Layer::Relu(_) | Layer::Dropout(_) | Layer::ChannelSoftmax(_) => Ok(input.to_vec()),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta, &l.running_mean, &l.running_var],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => {
                vec![&mut l.gamma, &mut l.beta, &mut l.running_mean, &mut l.running_var]
            }
            _ => Vec::new(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Layer::Conv(l) => format!("conv{k}x{k}({}->{})", l.in_planes(), l.out_maps(), k = l.kernel()),
            Layer::BatchNorm(l) => format!("batchnorm({})", l.channels()),
            Layer::Relu(_) => "relu".into(),
            Layer::Maxout(l) => format!("maxout(k={})", l.spec().group),
            Layer::Dropout(l) => format!("dropout(keep={})", l.keep_prob()),
            Layer::Pool(l) => format!("maxpool(p={},s={})", l.pool(), l.stride()),
            Layer::ChannelSoftmax(_) => "softmax(channels)".into(),
            Layer::Flatten(_) => "flatten".into(),
            Layer::Dense(l) => format!("dense({}->{})", l.features(), l.units()),
        }
    }
}
