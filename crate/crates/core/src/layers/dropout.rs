use super::{no_cache, Mode};
use crate::error::{param_err, shape_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Inverted dropout.
///
/// In train mode each activation is kept with probability `keep_prob` and
/// scaled by `1 / keep_prob`, so inference is the identity map and the
/// expected output matches in both modes.
#[derive(Debug, Clone)]
pub struct DropoutLayer {
    keep_prob: f64,
    mask: Option<Tensor>,
}

impl DropoutLayer {
    pub fn new(keep_prob: f64) -> Result<Self> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(param_err!("dropout keep probability must lie in (0, 1], got {keep_prob}"));
        }
        Ok(Self { keep_prob, mask: None })
    }

    /// Built from a drop rate, i.e. the fraction of activations zeroed.
    pub fn from_rate(rate: f64) -> Result<Self> {
        Self::new(1.0 - rate)
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    /// `{0, 1}` mask from the last train-mode forward.
    pub fn mask(&self) -> Option<&Tensor> {
        self.mask.as_ref()
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        if mode == Mode::Infer || self.keep_prob == 1.0 {
            self.mask = Some(Tensor::new(input.shape(), 1.0)?);
            return Ok(input.clone());
        }
        let p = self.keep_prob;
        let mut mask = Tensor::zeros(input.shape())?;
        for m in mask.data_mut() {
            *m = if rng.bernoulli(p) { 1.0 } else { 0.0 };
        }
        let out = input.data().iter().zip(mask.data()).map(|(&x, &m)| x * m / p).collect();
        self.mask = Some(mask);
        Tensor::from_vec(input.shape(), out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mask = self.mask.as_ref().ok_or_else(|| no_cache("dropout"))?;
        if mask.shape() != grad_out.shape() {
            return Err(shape_err!("dropout gradient {:?} vs mask {:?}", grad_out.shape(), mask.shape()));
        }
        let p = self.keep_prob;
        let data = grad_out.data().iter().zip(mask.data()).map(|(&g, &m)| g * m / p).collect();
        Tensor::from_vec(grad_out.shape(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::gradcheck::check_layer_gradients;
    use crate::layers::Layer;

    #[test]
    fn keep_all_is_identity() {
        let mut rng = Rng::new(1);
        let x = Tensor::zeros(&[10]).unwrap().gaussian_fill(&mut rng, 1.0).unwrap();
        let mut d = DropoutLayer::new(1.0).unwrap();
        assert_eq!(d.forward(&x, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(d.forward(&x, Mode::Infer, &mut rng).unwrap(), x);
    }

    #[test]
    fn invalid_probability() {
        assert!(matches!(DropoutLayer::new(0.0), Err(Error::Parameter(_))));
        assert!(matches!(DropoutLayer::new(1.5), Err(Error::Parameter(_))));
    }

    #[test]
    fn expectation_matches_inference() {
        let mut rng = Rng::new(99);
        let mut d = DropoutLayer::new(0.5).unwrap();
        let ones = Tensor::new(&[100_000], 1.0).unwrap();
        let y = d.forward(&ones, Mode::Train, &mut rng).unwrap();
        let mean = y.sum() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn masked_positions_get_zero_gradient() {
        let mut rng = Rng::new(5);
        let mut d = DropoutLayer::new(0.5).unwrap();
        let x = Tensor::new(&[64], 2.0).unwrap();
        d.forward(&x, Mode::Train, &mut rng).unwrap();
        let g = d.backward(&Tensor::new(&[64], 1.0).unwrap()).unwrap();
        let mask = d.mask().unwrap();
        assert!(mask.data().iter().any(|&m| m == 0.0));
        for (&m, &gi) in mask.data().iter().zip(g.data()) {
            assert_eq!(gi, if m == 0.0 { 0.0 } else { 2.0 });
        }
    }

    #[test]
    fn finite_differences_with_fixed_mask() {
        let mut rng = Rng::new(8);
        let x = Tensor::zeros(&[2, 2, 3, 3]).unwrap().gaussian_fill(&mut rng, 1.0).unwrap();
        let mut layer = Layer::Dropout(DropoutLayer::new(0.6).unwrap());
        let report = check_layer_gradients(&mut layer, &x, &mut rng).unwrap();
        assert!(report.worst() < 1e-4);
    }
}
