//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used here, so the numeric gradients are an
//! independent oracle for every hand-written backward pass.

use crate::error::Result;
use crate::layers::{Layer, Mode};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error with a floor of `1e-2` on the denominator, so entries with
/// tiny magnitude are judged on absolute error instead of amplified noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Central difference of `f` at `x`, one coordinate at a time.
pub fn numeric_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, step: f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros_like(x);
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub input: f64,
    /// `(parameter name, max relative error)` for each learnable parameter.
    pub params: Vec<(String, f64)>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.params.iter().map(|(_, e)| *e).fold(self.input, f64::max)
    }
}

/// Compares a layer's backward pass against finite differences of the
/// scalar loss `sum(r * layer(x))` for a random fixed projection `r`.
///
/// Every forward evaluation replays the same random stream, so dropout masks
/// stay fixed across probes.
pub fn check_layer_gradients(layer: &mut Layer, x: &Tensor, rng: &mut Rng) -> Result<GradReport> {
    let stream = rng.fork();
    let y = layer.forward(x, Mode::Train, &mut stream.clone())?;
    let projection = Tensor::zeros(y.shape())?.gaussian_fill(rng, 1.0)?;
    let grad_in = layer.backward(&projection)?;

    let template = layer.clone();
    let loss_at = |l: &mut Layer, input: &Tensor| -> f64 {
        let out = l.forward(input, Mode::Train, &mut stream.clone()).expect("forward during gradcheck");
        dot(&out, &projection)
    };

    let numeric_in = numeric_grad(|xp| loss_at(&mut template.clone(), xp), x, DEFAULT_STEP);
    let mut report = GradReport { input: max_relative_error(&grad_in, &numeric_in), params: Vec::new() };

    let n_params = layer.params().len();
    for idx in 0..n_params {
        let (name, analytic, value, learnable) = {
            let p = layer.params()[idx];
            (p.name.clone(), p.grad.clone(), p.value.clone(), p.learnable)
        };
        if !learnable {
            continue;
        }
        let numeric = numeric_grad(
            |v| {
                let mut probe = template.clone();
                probe.params_mut()[idx].value = v.clone();
                loss_at(&mut probe, x)
            },
            &value,
            DEFAULT_STEP,
        );
        report.params.push((name, max_relative_error(&analytic, &numeric)));
    }
    Ok(report)
}
