use super::{spatial_dims, spatial_shape};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Stacks `[C_i, H, W]` (or `[N, C_i, H, W]`) tensors along the channel
/// axis, in order. A single input is returned unchanged.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| shape_err!("concat of zero tensors"))?;
    let (n, _, h, w, batched) = spatial_dims(first.shape())?;
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let (pn, pc, ph, pw, pb) = spatial_dims(p.shape())?;
        if (pn, ph, pw, pb) != (n, h, w, batched) {
            return Err(shape_err!("concat of {:?} with {:?}", first.shape(), p.shape()));
        }
        channels.push(pc);
    }
    let total: usize = channels.iter().sum();
    let hw = h * w;
    let mut data = Vec::with_capacity(n * total * hw);
    for s in 0..n {
        for (p, &c) in parts.iter().zip(&channels) {
            data.extend_from_slice(&p.data()[s * c * hw..(s + 1) * c * hw]);
        }
    }
    Tensor::from_vec(&spatial_shape(n, total, h, w, batched), data)
}

/// Inverse of [`concat_channels`]: splits the channel axis into the given counts.
pub fn split_channels(t: &Tensor, counts: &[usize]) -> Result<Vec<Tensor>> {
    let (n, c, h, w, batched) = spatial_dims(t.shape())?;
    if counts.iter().sum::<usize>() != c || counts.contains(&0) {
        return Err(shape_err!("cannot split {c} channels into {counts:?}"));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(counts.len());
    let mut offset = 0;
    for &count in counts {
        let mut data = Vec::with_capacity(n * count * hw);
        for s in 0..n {
            let start = (s * c + offset) * hw;
            data.extend_from_slice(&t.data()[start..start + count * hw]);
        }
        out.push(Tensor::from_vec(&spatial_shape(n, count, h, w, batched), data)?);
        offset += count;
    }
    Ok(out)
}
