use super::{no_cache, spatial_dims, spatial_shape};
use crate::error::{param_err, shape_err, Result};
use crate::tensor::Tensor;

/// `f(z) = max(0, z)`; the subgradient at zero is taken as zero.
#[derive(Debug, Clone, Default)]
pub struct ReluLayer {
    cached_input: Option<Tensor>,
}

impl ReluLayer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        self.cached_input = Some(input.clone());
        Ok(input.map(|z| z.max(0.0)))
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.cached_input.as_ref().ok_or_else(|| no_cache("relu"))?;
        if input.shape() != grad_out.shape() {
            return Err(shape_err!("relu gradient {:?} vs input {:?}", grad_out.shape(), input.shape()));
        }
        let data = input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&z, &g)| if z > 0.0 { g } else { 0.0 })
            .collect();
        Tensor::from_vec(input.shape(), data)
    }
}

/// Group size of a max-out unit: `k` adjacent channels collapse to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxoutSpec {
    pub group: usize,
}

impl Default for MaxoutSpec {
    fn default() -> Self {
        Self { group: 2 }
    }
}

/// Max over adjacent channel groups at each spatial position.
pub fn maxout(input: &Tensor, spec: MaxoutSpec) -> Result<Tensor> {
    MaxoutLayer::new(spec)?.forward(input)
}

#[derive(Debug, Clone)]
pub struct MaxoutLayer {
    spec: MaxoutSpec,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxoutLayer {
    pub fn new(spec: MaxoutSpec) -> Result<Self> {
        if spec.group == 0 {
            return Err(param_err!("maxout group size must be positive"));
        }
        Ok(Self { spec, cache: None })
    }

    pub fn spec(&self) -> MaxoutSpec {
        self.spec
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (n, c, h, w, batched) = spatial_dims(input)?;
        if c % self.spec.group != 0 {
            return Err(shape_err!("maxout group {} does not divide {c} channels", self.spec.group));
        }
        Ok(spatial_shape(n, c / self.spec.group, h, w, batched))
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let (n, c, h, w, _) = spatial_dims(input.shape())?;
        let k = self.spec.group;
        let hw = h * w;
        let x = input.data();
        let mut out = Vec::with_capacity(n * c / k * hw);
        let mut argmax = Vec::with_capacity(out.capacity());
        for s in 0..n {
            for g in 0..c / k {
                for pos in 0..hw {
                    let mut best = (s * c + g * k) * hw + pos;
                    for j in 1..k {
                        let idx = (s * c + g * k + j) * hw + pos;
                        if x[idx] > x[best] {
                            best = idx;
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
        let (shape, argmax) = self.cache.as_ref().ok_or_else(|| no_cache("maxout"))?;
        if grad_out.len() != argmax.len() {
            return Err(shape_err!("maxout gradient has {} values, expected {}", grad_out.len(), argmax.len()));
        }
        let mut grad_in = Tensor::zeros(shape)?;
        for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
            grad_in.data_mut()[idx] += g;
        }
        Ok(grad_in)
    }
}
