use super::{no_cache, spatial_dims, spatial_shape};
use crate::error::{param_err, shape_err, Result};
use crate::tensor::Tensor;

/// Max-pooling over `p x p` windows at stride `s`.
///
/// Output extent is `floor((S - p) / s) + 1`. Ties inside a window go to the
/// first maximal element in row-major order, and the backward pass routes
/// the whole gradient to that element.
#[derive(Debug, Clone)]
pub struct PoolLayer {
    pool: usize,
    stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl PoolLayer {
    pub fn new(pool: usize, stride: usize) -> Result<Self> {
        if pool == 0 || stride == 0 {
            return Err(param_err!("pool size and stride must be positive, got p={pool} s={stride}"));
        }
        Ok(Self { pool, stride, cache: None })
    }

    pub fn pool(&self) -> usize {
        self.pool
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn output_extent(&self, extent: usize) -> Result<usize> {
        if extent < self.pool {
            return Err(shape_err!("maxpool p={} needs extent >= p, got {extent}", self.pool));
        }
        Ok((extent - self.pool) / self.stride + 1)
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (n, c, h, w, batched) = spatial_dims(input)?;
        Ok(spatial_shape(n, c, self.output_extent(h)?, self.output_extent(w)?, batched))
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let (n, c, h, w, _) = spatial_dims(input.shape())?;
        let (oh, ow) = (self.output_extent(h)?, self.output_extent(w)?);
        let x = input.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let (y0, x0) = (y * self.stride, xx * self.stride);
                    let mut best = base + y0 * w + x0;
                    for py in 0..self.pool {
                        for px in 0..self.pool {
                            let idx = base + (y0 + py) * w + x0 + px;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        self.cache = Some((input.shape().to_vec(), argmax));
        Tensor::from_vec(&out_shape, out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (shape, argmax) = self.cache.as_ref().ok_or_else(|| no_cache("maxpool"))?;
        if grad_out.len() != argmax.len() {
            return Err(shape_err!("maxpool gradient has {} values, expected {}", grad_out.len(), argmax.len()));
        }
        let mut grad_in = Tensor::zeros(shape)?;
        let gi = grad_in.data_mut();
        for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
            gi[idx] += g;
        }
        Ok(grad_in)
    }
}
