use super::{no_cache, spatial_dims};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Row-wise softmax over the last axis of `[K]` or `[N, K]` logits,
/// stabilized by subtracting the row maximum.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let k = *logits.shape().last().expect("tensor rank >= 1");
    if logits.rank() > 2 || k < 2 {
        return Err(shape_err!("softmax expects [K] or [N, K] with K >= 2, got {:?}", logits.shape()));
    }
    let mut out = logits.clone();
    out.data_mut().chunks_mut(k).for_each(softmax_in_place);
    Ok(out)
}

/// Softmax across channels at every spatial position of `[N, C, H, W]` maps.
#[derive(Debug, Clone, Default)]
pub struct ChannelSoftmax {
    cached_output: Option<Tensor>,
}

impl ChannelSoftmax {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (n, c, h, w, _) = spatial_dims(input.shape())?;
        let hw = h * w;
        let mut out = input.clone();
        let data = out.data_mut();
        let mut column = vec![0.0; c];
        for s in 0..n {
            for pos in 0..hw {
                for ch in 0..c {
                    column[ch] = data[(s * c + ch) * hw + pos];
                }
                softmax_in_place(&mut column);
                for ch in 0..c {
                    data[(s * c + ch) * hw + pos] = column[ch];
                }
            }
        }
        self.cached_output = Some(out.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let p = self.cached_output.as_ref().ok_or_else(|| no_cache("softmax"))?;
        if p.shape() != grad_out.shape() {
            return Err(shape_err!("softmax gradient {:?} vs {:?}", grad_out.shape(), p.shape()));
        }
        let (n, c, h, w, _) = spatial_dims(p.shape())?;
        let hw = h * w;
        let (pd, gd) = (p.data(), grad_out.data());
        let mut grad_in = vec![0.0; pd.len()];
        for s in 0..n {
            for pos in 0..hw {
                let idx = |ch: usize| (s * c + ch) * hw + pos;
                let dot: f64 = (0..c).map(|ch| pd[idx(ch)] * gd[idx(ch)]).sum();
                for ch in 0..c {
                    grad_in[idx(ch)] = pd[idx(ch)] * (gd[idx(ch)] - dot);
                }
            }
        }
        Tensor::from_vec(p.shape(), grad_in)
    }
}
