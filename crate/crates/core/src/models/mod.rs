//! The nexus models: two CNNs in cascade, the first reading a 33x33
//! four-modality patch and emitting a 5x15x15 class-probability map, the
//! second reading that map stacked on the co-centric 15x15 patch (nine
//! planes) and emitting class probabilities for the centre pixel.

mod arch;
mod dims;
mod infer;

pub use arch::*;
pub use dims::{DimContract, Edge};
pub use infer::SliceContext;

use sha2::{Digest, Sha256};

use crate::error::{param_err, shape_err, Error, Result};
use crate::layers::{
    concat_channels, softmax, split_channels, BatchNormLayer, ChannelSoftmax, ConvLayer, DenseLayer,
    DropoutLayer, Flatten, Init, Layer, Mode, Param, PoolLayer, ReluLayer,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Knobs that shape a model beyond its layer table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Maps produced by every hidden convolution.
    pub hidden_maps: usize,
    /// Drop rates (fraction of activations zeroed) after convolutions in
    /// the first half, the second half, and before the output layer.
    pub drop_first: f64,
    pub drop_second: f64,
    pub drop_head: f64,
    pub init: Init,
    /// Std of the output layer's initial weights; small so a fresh model
    /// predicts close to uniform.
    pub head_init_std: f64,
    /// Bias of layers feeding a softmax; every other bias starts at zero.
    pub softmax_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_maps: 64,
            drop_first: 0.5,
            drop_second: 0.4,
            drop_head: 0.3,
            init: Init::He,
            head_init_std: 0.01,
            softmax_bias: 0.2,
        }
    }
}

impl ModelConfig {
    /// Canonical `key=value` lines; the checkpoint digest is taken over these.
    pub fn to_kv(&self) -> String {
        let init = match self.init {
            Init::He => "he".to_string(),
            Init::Normal(std) => format!("normal:{std:?}"),
        };
        format!(
            "hidden_maps={}\ndrop_first={:?}\ndrop_second={:?}\ndrop_head={:?}\ninit={init}\nhead_init_std={:?}\nsoftmax_bias={:?}\n",
            self.hidden_maps, self.drop_first, self.drop_second, self.drop_head, self.head_init_std, self.softmax_bias
        )
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>().map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")))
        };
        match key {
            "hidden_maps" => {
                self.hidden_maps =
                    value.parse().map_err(|_| Error::Config(format!("hidden_maps: bad value {value:?}")))?
            }
            "drop_first" => self.drop_first = num(value)?,
            "drop_second" => self.drop_second = num(value)?,
            "drop_head" => self.drop_head = num(value)?,
            "head_init_std" => self.head_init_std = num(value)?,
            "softmax_bias" => self.softmax_bias = num(value)?,
            "init" => {
                self.init = match value.split_once(':') {
                    None if value == "he" => Init::He,
                    Some(("normal", std)) => Init::Normal(num(std)?),
                    _ => return Err(Error::Config(format!("init: expected `he` or `normal:<std>`, got {value:?}"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("malformed line {line:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.hidden_maps == 0 {
            return Err(param_err!("hidden_maps must be positive"));
        }
        for rate in [self.drop_first, self.drop_second, self.drop_head] {
            if !(0.0..1.0).contains(&rate) {
                return Err(param_err!("drop rate must lie in [0, 1), got {rate}"));
            }
        }
        if !(self.head_init_std > 0.0) {
            return Err(param_err!("head_init_std must be positive"));
        }
        Ok(())
    }
}

/// Parallel paths, channel-concatenated, followed by a merge sequence.
#[derive(Debug, Clone)]
struct Half {
    prefix: &'static str,
    paths: Vec<Vec<Layer>>,
    merge: Vec<Layer>,
    path_channels: Vec<usize>,
}

fn run(layers: &mut [Layer], x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
    let mut cur = x.clone();
    for layer in layers.iter_mut() {
        cur = layer.forward(&cur, mode, rng)?;
    }
    Ok(cur)
}

fn run_back(layers: &mut [Layer], g: &Tensor) -> Result<Tensor> {
    let mut cur = g.clone();
    for layer in layers.iter_mut().rev() {
        cur = layer.backward(&cur)?;
    }
    Ok(cur)
}

impl Half {
    fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        let outs = self.paths.iter_mut().map(|p| run(p, x, mode, rng)).collect::<Result<Vec<_>>>()?;
        self.path_channels = outs.iter().map(|t| t.shape()[t.rank() - 3]).collect();
        let merged = concat_channels(&outs.iter().collect::<Vec<_>>())?;
        run(&mut self.merge, &merged, mode, rng)
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let merged = run_back(&mut self.merge, g)?;
        let parts = split_channels(&merged, &self.path_channels)?;
        let mut total: Option<Tensor> = None;
        for (path, part) in self.paths.iter_mut().zip(&parts) {
            let gi = run_back(path, part)?;
            match total.as_mut() {
                None => total = Some(gi),
                Some(t) => t.add_scaled(&gi, 1.0)?,
            }
        }
        total.ok_or_else(|| Error::State("half without paths".into()))
    }

    fn trace(&self, input: &[usize], contract: &mut DimContract) -> Result<Vec<usize>> {
        let mut outs = Vec::new();
        for (pi, path) in self.paths.iter().enumerate() {
            let mut shape = input.to_vec();
            for (li, layer) in path.iter().enumerate() {
                let name = format!("{}.p{pi}.{li}.{}", self.prefix, layer.describe());
                shape = layer.output_shape(&shape).map_err(|e| shape_err!("at edge {name}: {e}"))?;
                contract.push(name, &shape);
            }
            outs.push(shape);
        }
        let (h, w) = (outs[0][1], outs[0][2]);
        if let Some(bad) = outs.iter().find(|s| (s[1], s[2]) != (h, w)) {
            return Err(shape_err!("at edge {}.concat: paths end at {:?} and {:?}", self.prefix, outs[0], bad));
        }
        let mut shape = vec![outs.iter().map(|s| s[0]).sum(), h, w];
        contract.push(format!("{}.concat", self.prefix), &shape);
        for (li, layer) in self.merge.iter().enumerate() {
            let name = format!("{}.merge.{li}.{}", self.prefix, layer.describe());
            shape = layer.output_shape(&shape).map_err(|e| shape_err!("at edge {name}: {e}"))?;
            contract.push(name, &shape);
        }
        Ok(shape)
    }

    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.paths.iter().flatten().chain(&self.merge)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.paths.iter_mut().flatten().chain(self.merge.iter_mut())
    }
}

fn build_path(
    stages: &[Stage],
    in_planes: usize,
    cfg: &ModelConfig,
    drop: f64,
    reads_input: bool,
    rng: &mut Rng,
) -> Result<(Vec<Layer>, usize)> {
    let mut layers = Vec::new();
    let mut planes = in_planes;
    for (i, stage) in stages.iter().enumerate() {
        match *stage {
            Stage::Conv { kernel, width } => {
                let maps = match width {
                    Width::Hidden => cfg.hidden_maps,
                    Width::Fixed(m) => m,
                };
                let mut conv = ConvLayer::new(planes, maps, kernel)?;
                conv.init(rng, cfg.init, 0.0)?;
                conv.propagate = !(reads_input && i == 0);
                layers.push(Layer::Conv(conv));
                layers.push(Layer::BatchNorm(BatchNormLayer::new(maps)?));
                layers.push(Layer::Relu(ReluLayer::new()));
                layers.push(Layer::Dropout(DropoutLayer::from_rate(drop)?));
                planes = maps;
            }
            Stage::Pool { size, stride } => layers.push(Layer::Pool(PoolLayer::new(size, stride)?)),
        }
    }
    Ok((layers, planes))
}

/// A nexus network with its parameter registry.
///
/// Parameters are enumerated in a fixed order (first half, second half,
/// output layer); the output layer's weight and bias come last.
#[derive(Debug, Clone)]
pub struct NexusModel {
    spec: ArchSpec,
    config: ModelConfig,
    first: Half,
    second: Half,
    head_dropout: DropoutLayer,
    head: DenseLayer,
}

impl NexusModel {
    /// Builds one of the reference architectures and verifies its
    /// dimensional contract.
    pub fn build(arch: Architecture, config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let model = Self::from_spec(arch.spec(), config, rng)?;
        model.check_dims()?;
        Ok(model)
    }

    /// Builds from an arbitrary layer table without checking the contract.
    pub fn from_spec(spec: ArchSpec, config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let build_half = |half: &HalfSpec, prefix: &'static str, planes: usize, drop: f64, reads_input: bool, rng: &mut Rng| {
            if half.paths.is_empty() {
                return Err(param_err!("{prefix} half has no paths"));
            }
            let mut paths = Vec::new();
            let mut out = 0;
            for stages in &half.paths {
                let (layers, maps) = build_path(stages, planes, config, drop, reads_input, rng)?;
                paths.push(layers);
                out += maps;
            }
            Ok((Half { prefix, paths, merge: Vec::new(), path_channels: Vec::new() }, out))
        };

        let (mut first, first_maps) = build_half(&spec.first, "first", MODALITIES, config.drop_first, true, rng)?;
        let mut project = ConvLayer::new(first_maps, CLASSES, 1)?;
        project.init(rng, config.init, config.softmax_bias)?;
        first.merge = vec![Layer::Conv(project), Layer::ChannelSoftmax(ChannelSoftmax::new())];

        let (mut second, _) = build_half(&spec.second, "second", SECOND_HALF_PLANES, config.drop_second, false, rng)?;
        second.merge = vec![Layer::Flatten(Flatten::new())];

        let mut head = DenseLayer::new(FEATURES, CLASSES)?;
        head.init(rng, Init::Normal(config.head_init_std), config.softmax_bias)?;
        head.weight.name = "output.weight".into();
        head.bias.name = "output.bias".into();

        let mut model = Self {
            spec,
            config: config.clone(),
            first,
            second,
            head_dropout: DropoutLayer::from_rate(config.drop_head)?,
            head,
        };
        model.name_params();
        Ok(model)
    }

    fn name_params(&mut self) {
        for half in [&mut self.first, &mut self.second] {
            let prefix = half.prefix;
            for (pi, path) in half.paths.iter_mut().enumerate() {
                for (li, layer) in path.iter_mut().enumerate() {
                    for p in layer.params_mut() {
                        let leaf = p.name.rsplit('.').next().unwrap_or_default().to_string();
                        p.name = format!("{prefix}.p{pi}.{li}.{leaf}");
                    }
                }
            }
            for (li, layer) in half.merge.iter_mut().enumerate() {
                for p in layer.params_mut() {
                    let leaf = p.name.rsplit('.').next().unwrap_or_default().to_string();
                    p.name = format!("{prefix}.merge.{li}.{leaf}");
                }
            }
        }
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// SHA-256 over the architecture name, layer table, and model config.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.spec.name.as_bytes());
        h.update(format!("{:?}", self.spec).as_bytes());
        h.update(self.config.to_kv().as_bytes());
        h.finalize().into()
    }

    /// Symbolic shape propagation through every edge of the graph.
    pub fn check_dims(&self) -> Result<DimContract> {
        let mut c = DimContract::default();
        let big = [MODALITIES, BIG_PATCH, BIG_PATCH];
        c.push("input.big", &big);
        let first = self.first.trace(&big, &mut c)?;
        let want = [CLASSES, SMALL_PATCH, SMALL_PATCH];
        if first != want {
            return Err(shape_err!("at edge first.out: expected {want:?}, got {first:?}\n{c}"));
        }
        c.push("first.out", &first);
        let small = [MODALITIES, SMALL_PATCH, SMALL_PATCH];
        c.push("input.small", &small);
        let stacked = [first[0] + MODALITIES, SMALL_PATCH, SMALL_PATCH];
        c.push("nexus.concat", &stacked);
        let feats = self.second.trace(&stacked, &mut c)?;
        if feats != [FEATURES] {
            return Err(shape_err!("at edge second.out: expected [{FEATURES}] features, got {feats:?}\n{c}"));
        }
        c.push("features", &feats);
        let logits = self.head.output_shape(&feats)?;
        c.push("output.dense", &logits);
        c.push("output.softmax", &logits);
        Ok(c)
    }

    fn check_inputs(big: &Tensor, small: &Tensor) -> Result<()> {
        let ok = |t: &Tensor, e: usize| match t.shape() {
            [c, h, w] => (*c, *h, *w) == (MODALITIES, e, e),
            [_, c, h, w] => (*c, *h, *w) == (MODALITIES, e, e),
            _ => false,
        };
        if !ok(big, BIG_PATCH) || !ok(small, SMALL_PATCH) || big.rank() != small.rank()
            || (big.rank() == 4 && big.shape()[0] != small.shape()[0])
        {
            return Err(shape_err!(
                "expected patches [N,]4x33x33 and [N,]4x15x15, got {:?} and {:?}",
                big.shape(),
                small.shape()
            ));
        }
        Ok(())
    }

    /// First half only: per-position class probabilities, `[N,]5x15x15`.
    pub fn first_half(&mut self, big: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        self.first.forward(big, mode, rng)
    }

    /// Everything up to the output layer: `[N,]1152` features.
    pub fn features(&mut self, big: &Tensor, small: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        Self::check_inputs(big, small)?;
        let maps = self.first.forward(big, mode, rng)?;
        let stacked = concat_channels(&[&maps, small])?;
        self.second.forward(&stacked, mode, rng)
    }

    /// Output layer (dropout + dense) on precomputed features.
    pub fn head_logits(&mut self, features: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        let dropped = self.head_dropout.forward(features, mode, rng)?;
        self.head.forward(&dropped)
    }

    pub fn forward_logits(&mut self, big: &Tensor, small: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        let feats = self.features(big, small, mode, rng)?;
        self.head_logits(&feats, mode, rng)
    }

    /// Class probabilities `[N,]5` for the centre pixel of each patch pair.
    pub fn forward(&mut self, big: &Tensor, small: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        softmax(&self.forward_logits(big, small, mode, rng)?)
    }

    /// Backpropagates only through the output layer.
    pub fn head_backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let g = self.head.backward(grad_logits)?;
        self.head_dropout.backward(&g)
    }

    /// Backpropagates a logit gradient through the whole cascade, writing
    /// every parameter's `grad`. Gradients flow into the first half through
    /// the concatenation.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<()> {
        let g_feats = self.head_backward(grad_logits)?;
        let g_stacked = self.second.backward(&g_feats)?;
        let parts = split_channels(&g_stacked, &[CLASSES, MODALITIES])?;
        self.first.backward(&parts[0])?;
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> =
            self.first.layers().chain(self.second.layers()).flat_map(|l| l.params()).collect();
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> =
            self.first.layers_mut().chain(self.second.layers_mut()).flat_map(|l| l.params_mut()).collect();
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Number of trailing registry entries that belong to the output layer.
    pub const OUTPUT_PARAMS: usize = 2;

    pub fn is_output_param(&self, index: usize) -> bool {
        index + Self::OUTPUT_PARAMS >= self.params().len()
    }

    /// Freezes everything except the output layer.
    pub fn freeze_all_but_output(&mut self) {
        let n = self.params().len();
        for (i, p) in self.params_mut().into_iter().enumerate() {
            p.frozen = i + Self::OUTPUT_PARAMS < n;
        }
    }

    pub fn unfreeze(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.frozen = false);
    }

    /// True when every registry entry before the output layer is
    /// bit-identical in `other`.
    pub fn same_body(&self, other: &NexusModel) -> bool {
        let (a, b) = (self.params(), other.params());
        self.digest() == other.digest()
            && a.len() == b.len()
            && a.iter().zip(&b).take(a.len() - Self::OUTPUT_PARAMS).all(|(p, q)| p.value == q.value)
    }

    pub fn learnable_count(&self) -> usize {
        self.params().iter().filter(|p| p.learnable).map(|p| p.value.len()).sum()
    }
}

/// Builds and dimension-checks a reference architecture.
pub fn build_model(arch: Architecture, config: &ModelConfig, rng: &mut Rng) -> Result<NexusModel> {
    NexusModel::build(arch, config, rng)
}

pub fn check_dims(model: &NexusModel) -> Result<DimContract> {
    model.check_dims()
}
