use super::{no_cache, Init, Param};
use crate::error::{param_err, shape_err, Result};
use crate::linalg::gemm;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Fully connected layer `a w + b` over `[N, F]` (or `[F]`) inputs.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    features: usize,
    units: usize,
    /// `[features, units]`
    pub weight: Param,
    /// `[units]`
    pub bias: Param,
    cached_input: Option<Tensor>,
}

impl DenseLayer {
    pub fn new(features: usize, units: usize) -> Result<Self> {
        if features == 0 || units == 0 {
            return Err(param_err!("dense layer needs positive sizes, got {features}->{units}"));
        }
        Ok(Self {
            features,
            units,
            weight: Param::new("weight", Tensor::zeros(&[features, units])?),
            bias: Param::new("bias", Tensor::zeros(&[units])?),
            cached_input: None,
        })
    }

    pub fn init(&mut self, rng: &mut Rng, init: Init, bias: f64) -> Result<()> {
        self.weight.value = Tensor::zeros(&[self.features, self.units])?.gaussian_fill(rng, init.std(self.features))?;
        self.bias.value.fill(bias);
        Ok(())
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn units(&self) -> usize {
        self.units
    }

    fn rows(&self, shape: &[usize]) -> Result<usize> {
        match *shape {
            [f] if f == self.features => Ok(1),
            [n, f] if f == self.features => Ok(n),
            _ => Err(shape_err!("dense layer expects {} features, got {shape:?}", self.features)),
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let n = self.rows(input)?;
        Ok(if input.len() == 1 { vec![self.units] } else { vec![n, self.units] })
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let n = self.rows(input.shape())?;
        let mut out: Vec<f64> = (0..n).flat_map(|_| self.bias.value.data().iter().copied()).collect();
        gemm(n, self.features, self.units, input.data(), false, self.weight.value.data(), false, 1.0, &mut out);
        self.cached_input = Some(input.clone());
        Tensor::from_vec(&out_shape, out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.cached_input.as_ref().ok_or_else(|| no_cache("dense"))?;
        let n = self.rows(input.shape())?;
        if grad_out.len() != n * self.units {
            return Err(shape_err!("dense gradient {:?} for {n} rows of {} units", grad_out.shape(), self.units));
        }
        let (f, u) = (self.features, self.units);
        gemm(f, n, u, input.data(), true, grad_out.data(), false, 0.0, self.weight.grad.data_mut());
        let gb = self.bias.grad.data_mut();
        gb.fill(0.0);
        for row in grad_out.data().chunks(u) {
            gb.iter_mut().zip(row).for_each(|(b, g)| *b += g);
        }
        let mut grad_in = vec![0.0; n * f];
        gemm(n, u, f, grad_out.data(), false, self.weight.value.data(), true, 0.0, &mut grad_in);
        Tensor::from_vec(input.shape(), grad_in)
    }
}
