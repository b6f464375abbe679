use rayon::prelude::*;

use super::{no_cache, spatial_dims, spatial_shape, Init, Param};
use crate::error::{param_err, shape_err, Result};
use crate::linalg::gemm;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Samples per work unit when a batch is split across threads. Fixed so the
/// order of the parameter-gradient reduction never depends on thread count.
const CHUNK: usize = 8;

/// Valid (unpadded) 2-D cross-correlation with stride 1.
///
/// `O_a = b_a + sum_r F_ar (*) I_r`; an `S x S` input yields `(S-k+1)^2`.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    in_planes: usize,
    out_maps: usize,
    kernel: usize,
    /// `[out_maps, in_planes, k, k]`
    pub weight: Param,
    /// `[out_maps]`
    pub bias: Param,
    /// When false, `backward` skips the input gradient and returns zeros.
    /// Set on layers that read the network input directly.
    pub propagate: bool,
    cached_input: Option<Tensor>,
}

impl ConvLayer {
    /// Zero-initialised layer. Kernel size must be odd.
    pub fn new(in_planes: usize, out_maps: usize, kernel: usize) -> Result<Self> {
        if in_planes == 0 || out_maps == 0 {
            return Err(param_err!("conv needs positive plane counts, got {in_planes}->{out_maps}"));
        }
        if kernel == 0 || kernel % 2 == 0 {
            return Err(param_err!("conv kernel must be odd and positive, got {kernel}"));
        }
        Ok(Self {
            in_planes,
            out_maps,
            kernel,
            weight: Param::new("weight", Tensor::zeros(&[out_maps, in_planes, kernel, kernel])?),
            bias: Param::new("bias", Tensor::zeros(&[out_maps])?),
            propagate: true,
            cached_input: None,
        })
    }

    pub fn with_weights(weight: Tensor, bias: Tensor) -> Result<Self> {
        let &[out, inp, k, k2] = weight.shape() else {
            return Err(shape_err!("conv weight must be rank 4, got {:?}", weight.shape()));
        };
        if k != k2 {
            return Err(shape_err!("conv kernel must be square, got {k}x{k2}"));
        }
        if bias.shape() != [out] {
            return Err(shape_err!("conv bias {:?} for {out} maps", bias.shape()));
        }
        let mut layer = Self::new(inp, out, k)?;
        layer.weight = Param::new("weight", weight);
        layer.bias = Param::new("bias", bias);
        Ok(layer)
    }

    pub fn init(&mut self, rng: &mut Rng, init: Init, bias: f64) -> Result<()> {
        let fan_in = self.in_planes * self.kernel * self.kernel;
        self.weight.value = Tensor::zeros(self.weight.value.shape())?.gaussian_fill(rng, init.std(fan_in))?;
        self.bias.value.fill(bias);
        Ok(())
    }

    pub fn in_planes(&self) -> usize {
        self.in_planes
    }

    pub fn out_maps(&self) -> usize {
        self.out_maps
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (n, c, h, w, batched) = spatial_dims(input)?;
        if c != self.in_planes {
            return Err(shape_err!("conv expects {} planes, got {c}", self.in_planes));
        }
        if h < self.kernel || w < self.kernel {
            return Err(shape_err!("conv{k}x{k} needs spatial extent >= {k}, got {h}x{w}", k = self.kernel));
        }
        Ok(spatial_shape(n, self.out_maps, h - self.kernel + 1, w - self.kernel + 1, batched))
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let (n, c, h, w, _) = spatial_dims(input.shape())?;
        let (k, oc) = (self.kernel, self.out_maps);
        let (oh, ow) = (h - k + 1, w - k + 1);
        let (in_len, out_len) = (c * h * w, oc * oh * ow);
        let weight = self.weight.value.data();
        let bias = self.bias.value.data();
        let mut out = vec![0.0; n * out_len];
        out.par_chunks_mut(out_len).enumerate().for_each(|(s, dst)| {
            let cols = im2col(&input.data()[s * in_len..(s + 1) * in_len], c, h, w, k);
            for (o, plane) in dst.chunks_mut(oh * ow).enumerate() {
                plane.fill(bias[o]);
            }
            gemm(oc, c * k * k, oh * ow, weight, false, &cols, false, 1.0, dst);
        });
        self.cached_input = Some(input.clone());
        Tensor::from_vec(&out_shape, out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.cached_input.as_ref().ok_or_else(|| no_cache("conv"))?;
        let expected = self.output_shape(input.shape())?;
        if grad_out.shape() != expected.as_slice() {
            return Err(shape_err!("conv gradient {:?}, forward produced {expected:?}", grad_out.shape()));
        }
        let (n, c, h, w, _) = spatial_dims(input.shape())?;
        let (k, oc) = (self.kernel, self.out_maps);
        let (oh, ow) = (h - k + 1, w - k + 1);
        let (in_len, out_len, ckk) = (c * h * w, oc * oh * ow, c * k * k);
        let weight = self.weight.value.data();
        let propagate = self.propagate;

        let mut grad_in = vec![0.0; n * in_len];
        let partials: Vec<(Vec<f64>, Vec<f64>)> = grad_in
            .par_chunks_mut(in_len * CHUNK)
            .enumerate()
            .map(|(chunk, gin)| {
                let mut gw = vec![0.0; oc * ckk];
                let mut gb = vec![0.0; oc];
                let mut gcols = vec![0.0; ckk * oh * ow];
                for (i, gin_s) in gin.chunks_mut(in_len).enumerate() {
                    let s = chunk * CHUNK + i;
                    let x = &input.data()[s * in_len..(s + 1) * in_len];
                    let g = &grad_out.data()[s * out_len..(s + 1) * out_len];
                    let cols = im2col(x, c, h, w, k);
                    gemm(oc, oh * ow, ckk, g, false, &cols, true, 1.0, &mut gw);
                    for (o, plane) in g.chunks(oh * ow).enumerate() {
                        gb[o] += plane.iter().sum::<f64>();
                    }
                    if propagate {
                        gemm(ckk, oc, oh * ow, weight, true, g, false, 0.0, &mut gcols);
                        col2im(&gcols, c, h, w, k, gin_s);
                    }
                }
                (gw, gb)
            })
            .collect();

        let gw = self.weight.grad.data_mut();
        gw.fill(0.0);
        let gb = self.bias.grad.data_mut();
        gb.fill(0.0);
        for (pw, pb) in &partials {
            gw.iter_mut().zip(pw).for_each(|(a, b)| *a += b);
            gb.iter_mut().zip(pb).for_each(|(a, b)| *a += b);
        }
        Tensor::from_vec(input.shape(), grad_in)
    }
}

/// `[c*k*k, oh*ow]` patch matrix of one `[c, h, w]` sample.
pub(crate) fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut cols = vec![0.0; c * k * k * oh * ow];
    let mut row = 0;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let src = &plane[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                    dst[y * ow..(y + 1) * ow].copy_from_slice(src);
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto the image.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, out: &mut [f64]) {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut row = 0;
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let dst = &mut plane[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                    for (d, s) in dst.iter_mut().zip(&src[y * ow..(y + 1) * ow]) {
                        *d += s;
                    }
                }
                row += 1;
            }
        }
    }
}
