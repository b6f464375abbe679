//! Whole-slice inference.
//!
//! Every pixel's big patch is standardized per plane, which is an affine
//! map of the raw window: `x' = (x - m) / s`. The first convolution of
//! each first-half path is therefore recovered from a single dense
//! correlation of the raw slice, `(F (*) x - m * sum F) / s` per modality,
//! and only the layers after it run per pixel.

use super::{run, NexusModel, BIG_PATCH, MODALITIES, SMALL_PATCH};
use crate::data::{standardize_planes, PLANE_VAR_FLOOR};
use crate::error::{shape_err, Result};
use crate::layers::{concat_channels, im2col, softmax, Layer, Mode};
use crate::linalg::gemm;
use crate::rng::Rng;
use crate::tensor::Tensor;

const PAD: usize = BIG_PATCH / 2;
const SMALL_OFFSET: usize = (BIG_PATCH - SMALL_PATCH) / 2;

/// Dense first-layer correlation of one path, `[MODALITIES][maps][rows*cols]`.
#[derive(Debug, Clone)]
struct PathResponse {
    kernel: usize,
    maps: usize,
    cols: usize,
    data: Vec<f64>,
    /// `[maps][MODALITIES]` kernel sums.
    kernel_sums: Vec<f64>,
    bias: Vec<f64>,
}

/// One slice prepared for per-pixel inference.
#[derive(Debug, Clone)]
pub struct SliceContext {
    height: usize,
    width: usize,
    /// Zero-padded planes, `[MODALITIES][H + 32][W + 32]`.
    padded: Vec<f64>,
    responses: Vec<Option<PathResponse>>,
}

impl SliceContext {
    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn padded_width(&self) -> usize {
        self.width + 2 * PAD
    }

    fn window(&self, center: (usize, usize), offset: usize, size: usize, out: &mut [f64]) {
        let (hp, wp) = (self.height + 2 * PAD, self.padded_width());
        for m in 0..MODALITIES {
            for r in 0..size {
                let src = m * hp * wp + (center.0 + offset + r) * wp + center.1 + offset;
                out[(m * size + r) * size..(m * size + r + 1) * size].copy_from_slice(&self.padded[src..src + size]);
            }
        }
    }
}

impl NexusModel {
    /// Pads one slice (`MODALITIES` planes of `height x width`) and runs the
    /// dense first-layer correlations.
    pub fn slice_context(&self, planes: &[&[f32]], height: usize, width: usize) -> Result<SliceContext> {
        if planes.len() != MODALITIES || planes.iter().any(|p| p.len() != height * width) {
            return Err(shape_err!("slice context needs {MODALITIES} planes of {height}x{width}"));
        }
        let (hp, wp) = (height + 2 * PAD, width + 2 * PAD);
        let mut padded = vec![0.0; MODALITIES * hp * wp];
        for (m, plane) in planes.iter().enumerate() {
            for y in 0..height {
                let dst = m * hp * wp + (y + PAD) * wp + PAD;
                for (d, &s) in padded[dst..dst + width].iter_mut().zip(&plane[y * width..(y + 1) * width]) {
                    *d = f64::from(s);
                }
            }
        }
        let responses = self
            .first
            .paths
            .iter()
            .map(|path| match path.first() {
                Some(Layer::Conv(conv)) if conv.in_planes() == MODALITIES => {
                    let (k, maps) = (conv.kernel(), conv.out_maps());
                    let (rows, cols) = (hp - k + 1, wp - k + 1);
                    let w = conv.weight.value.data();
                    let mut data = vec![0.0; MODALITIES * maps * rows * cols];
                    let mut kernel_sums = vec![0.0; maps * MODALITIES];
                    for m in 0..MODALITIES {
                        let mut wm = Vec::with_capacity(maps * k * k);
                        for a in 0..maps {
                            let taps = &w[(a * MODALITIES + m) * k * k..(a * MODALITIES + m + 1) * k * k];
                            kernel_sums[a * MODALITIES + m] = taps.iter().sum();
                            wm.extend_from_slice(taps);
                        }
                        let col = im2col(&padded[m * hp * wp..(m + 1) * hp * wp], 1, hp, wp, k);
                        let dst = &mut data[m * maps * rows * cols..(m + 1) * maps * rows * cols];
                        gemm(maps, k * k, rows * cols, &wm, false, &col, false, 0.0, dst);
                    }
                    Some(PathResponse { kernel: k, maps, cols, data, kernel_sums, bias: conv.bias.value.data().to_vec() })
                }
                _ => None,
            })
            .collect();
        Ok(SliceContext { height, width, padded, responses })
    }

    /// Inference-mode class probabilities `[N, 5]` for pixels of a prepared
    /// slice; equal, up to rounding, to [`NexusModel::forward`] on the
    /// extracted patch pairs.
    pub fn infer_centers(&mut self, ctx: &SliceContext, centers: &[(usize, usize)]) -> Result<Tensor> {
        let feats = self.infer_features(ctx, centers)?;
        softmax(&self.head_logits(&feats, Mode::Infer, &mut Rng::new(0))?)
    }

    /// Inference-mode features `[N, 1152]` for pixels of a prepared slice.
    pub fn infer_features(&mut self, ctx: &SliceContext, centers: &[(usize, usize)]) -> Result<Tensor> {
        if let Some(c) = centers.iter().find(|c| c.0 >= ctx.height || c.1 >= ctx.width) {
            return Err(crate::Error::Bounds(format!("pixel {c:?} outside {}x{}", ctx.height, ctx.width)));
        }
        let n = centers.len();
        let plane = BIG_PATCH * BIG_PATCH;
        let mut big = vec![0.0; n * MODALITIES * plane];
        // Per-pixel, per-modality window mean and inverse spread.
        let mut stats = vec![(0.0, 0.0); n * MODALITIES];
        for (s, &c) in centers.iter().enumerate() {
            let dst = &mut big[s * MODALITIES * plane..(s + 1) * MODALITIES * plane];
            ctx.window(c, 0, BIG_PATCH, dst);
            for (m, p) in dst.chunks(plane).enumerate() {
                let mean = p.iter().sum::<f64>() / plane as f64;
                let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64;
                stats[s * MODALITIES + m] = if var < PLANE_VAR_FLOOR { (mean, 0.0) } else { (mean, 1.0 / var.sqrt()) };
            }
        }
        let mut rng = Rng::new(0);
        let mut big_tensor = None;
        let mut outs = Vec::with_capacity(self.first.paths.len());
        for (path, response) in self.first.paths.iter_mut().zip(&ctx.responses) {
            let out = match response {
                Some(r) => {
                    let o = BIG_PATCH - r.kernel + 1;
                    let rc = r.data.len() / (MODALITIES * r.maps);
                    let mut first = vec![0.0; n * r.maps * o * o];
                    for (s, &(cy, cx)) in centers.iter().enumerate() {
                        for a in 0..r.maps {
                            let dst = &mut first[(s * r.maps + a) * o * o..(s * r.maps + a + 1) * o * o];
                            dst.fill(r.bias[a]);
                            for m in 0..MODALITIES {
                                let (mean, inv) = stats[s * MODALITIES + m];
                                if inv == 0.0 {
                                    continue;
                                }
                                let shift = mean * r.kernel_sums[a * MODALITIES + m];
                                let src = &r.data[(m * r.maps + a) * rc..(m * r.maps + a + 1) * rc];
                                for i in 0..o {
                                    let row = &src[(cy + i) * r.cols + cx..(cy + i) * r.cols + cx + o];
                                    for (d, v) in dst[i * o..(i + 1) * o].iter_mut().zip(row) {
                                        *d += (v - shift) * inv;
                                    }
                                }
                            }
                        }
                    }
                    let t = Tensor::from_vec(&[n, r.maps, o, o], first)?;
                    run(&mut path[1..], &t, Mode::Infer, &mut rng)?
                }
                None => {
                    let t = match &big_tensor {
                        Some(t) => t,
                        None => {
                            let mut std = big.clone();
                            standardize_planes(&mut std, plane);
                            big_tensor.insert(Tensor::from_vec(&[n, MODALITIES, BIG_PATCH, BIG_PATCH], std)?)
                        }
                    };
                    run(path, t, Mode::Infer, &mut rng)?
                }
            };
            outs.push(out);
        }
        let merged = concat_channels(&outs.iter().collect::<Vec<_>>())?;
        let maps = run(&mut self.first.merge, &merged, Mode::Infer, &mut rng)?;

        let splane = SMALL_PATCH * SMALL_PATCH;
        let mut small = vec![0.0; n * MODALITIES * splane];
        for (s, &c) in centers.iter().enumerate() {
            let dst = &mut small[s * MODALITIES * splane..(s + 1) * MODALITIES * splane];
            ctx.window(c, SMALL_OFFSET, SMALL_PATCH, dst);
        }
        standardize_planes(&mut small, splane);
        let small = Tensor::from_vec(&[n, MODALITIES, SMALL_PATCH, SMALL_PATCH], small)?;
        let stacked = concat_channels(&[&maps, &small])?;
        self.second.forward(&stacked, Mode::Infer, &mut rng)
    }
}
