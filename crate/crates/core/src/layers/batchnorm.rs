use super::{no_cache, spatial_dims, Mode, Param};
use crate::error::{param_err, shape_err, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Per-channel batch normalization of `[N, C, H, W]` feature maps.
///
/// Train mode standardizes each channel by the statistics of the current
/// batch (over `N`, `H` and `W`), then applies the learned scale and shift,
/// and folds the batch statistics into exponential running averages. Infer
/// mode uses the running averages instead.
#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    channels: usize,
    pub epsilon: f64,
    pub momentum: f64,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    shape: Vec<usize>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNormLayer {
    pub fn new(channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(param_err!("batchnorm needs at least one channel"));
        }
        Ok(Self {
            channels,
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
            gamma: Param::new("gamma", Tensor::new(&[channels], 1.0)?),
            beta: Param::new("beta", Tensor::zeros(&[channels])?),
            running_mean: Param::buffer("running_mean", Tensor::zeros(&[channels])?),
            running_var: Param::buffer("running_var", Tensor::new(&[channels], 1.0)?),
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (_, c, _, _, _) = spatial_dims(input)?;
        if c != self.channels {
            return Err(shape_err!("batchnorm over {} channels got {c}", self.channels));
        }
        Ok(input.to_vec())
    }

    /// Standardized activations from the last forward pass, before the
    /// learned scale and shift.
    pub fn normalized(&self) -> Option<Tensor> {
        let cache = self.cache.as_ref()?;
        Tensor::from_vec(&cache.shape, cache.xhat.clone()).ok()
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        self.output_shape(input.shape())?;
        let (n, c, h, w, _) = spatial_dims(input.shape())?;
        let hw = h * w;
        let count = n * hw;
        let x = input.data();

        let (mean, var) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(param_err!(
                        "batchnorm in train mode needs at least 2 values per channel, got {count}"
                    ));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        let plane = &x[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                        mean[ch] += plane.iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for s in 0..n {
                    for ch in 0..c {
                        let plane = &x[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                        var[ch] += plane.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                let m = self.momentum;
                for ch in 0..c {
                    let rm = &mut self.running_mean.value.data_mut()[ch];
                    *rm = m * *rm + (1.0 - m) * mean[ch];
                    let rv = &mut self.running_var.value.data_mut()[ch];
                    *rv = m * *rv + (1.0 - m) * var[ch];
                }
                (mean, var)
            }
            Mode::Infer => (self.running_mean.value.data().to_vec(), self.running_var.value.data().to_vec()),
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for s in 0..n {
            for ch in 0..c {
                let range = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                for i in range {
                    xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                    out[i] = gamma[ch] * xhat[i] + beta[ch];
                }
            }
        }
        self.cache = Some(Cache { shape: input.shape().to_vec(), xhat, inv_std, mode });
        Tensor::from_vec(input.shape(), out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| no_cache("batchnorm"))?;
        if grad_out.shape() != cache.shape.as_slice() {
            return Err(shape_err!("batchnorm gradient {:?} vs {:?}", grad_out.shape(), cache.shape));
        }
        let (n, c, h, w, _) = spatial_dims(&cache.shape)?;
        let hw = h * w;
        let count = (n * hw) as f64;
        let g = grad_out.data();
        let gamma = self.gamma.value.data();

        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for s in 0..n {
            for ch in 0..c {
                for i in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                    sum_g[ch] += g[i];
                    sum_gx[ch] += g[i] * cache.xhat[i];
                }
            }
        }
        let mut grad_in = vec![0.0; g.len()];
        for s in 0..n {
            for ch in 0..c {
                let scale = gamma[ch] * cache.inv_std[ch];
                for i in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                    grad_in[i] = match cache.mode {
                        Mode::Train => {
                            scale * (g[i] - sum_g[ch] / count - cache.xhat[i] * sum_gx[ch] / count)
                        }
                        Mode::Infer => scale * g[i],
                    };
                }
            }
        }
        self.gamma.grad = Tensor::from_vec(&[c], sum_gx)?;
        self.beta.grad = Tensor::from_vec(&[c], sum_g)?;
        Tensor::from_vec(&cache.shape, grad_in)
    }
}
