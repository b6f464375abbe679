//! Runtime invariant checks behind the `check` command.

use crate::data::{extract_patch_pair, generate_phantom, LabelMap, PhantomSpec, TumorSpec, VolumeSet};
use crate::error::Result;
use crate::eval::{evaluate, morph_cleanup, Region};
use crate::gradcheck::{check_layer_gradients, max_relative_error, numeric_grad, DEFAULT_STEP};
use crate::layers::{
    softmax, BatchNormLayer, ConvLayer, DenseLayer, DropoutLayer, Init, Layer, MaxoutLayer, MaxoutSpec, Mode,
    PoolLayer, ReluLayer,
};
use crate::loss::{nll_loss, LossConfig};
use crate::models::{Architecture, ModelConfig, NexusModel, BIG_PATCH, CLASSES, FEATURES, MODALITIES, SMALL_PATCH};
use crate::optim::{Momentum, Optimizer};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Gradient checks pass below this relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    fn from_result(name: impl Into<String>, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, e.to_string()),
        }
    }
}

fn arch_check(arch: Architecture) -> Result<(bool, String)> {
    let cfg = ModelConfig { hidden_maps: 4, ..ModelConfig::default() };
    let mut rng = Rng::new(1);
    let mut model = NexusModel::build(arch, &cfg, &mut rng)?;
    let contract = model.check_dims()?;
    let big = Tensor::zeros(&[2, MODALITIES, BIG_PATCH, BIG_PATCH])?.gaussian_fill(&mut rng, 1.0)?;
    let small = Tensor::zeros(&[2, MODALITIES, SMALL_PATCH, SMALL_PATCH])?.gaussian_fill(&mut rng, 1.0)?;
    let feats = model.features(&big, &small, Mode::Infer, &mut rng)?;
    let probs = model.forward(&big, &small, Mode::Infer, &mut rng)?;
    let worst = probs.data().chunks(CLASSES).map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    let ok = feats.shape() == [2, FEATURES] && worst < 1e-9;
    Ok((ok, format!("{} edges, {} features, |sum-1| {worst:.1e}", contract.edges.len(), feats.shape()[1])))
}

fn layer_cases(rng: &mut Rng) -> Result<Vec<(&'static str, Layer, Tensor)>> {
    let mut conv = ConvLayer::new(2, 3, 3)?;
    conv.init(rng, Init::Normal(0.5), 0.1)?;
    let mut dense = DenseLayer::new(6, 3)?;
    dense.init(rng, Init::Normal(0.5), 0.1)?;
    let mut bn = BatchNormLayer::new(2)?;
    bn.gamma.value = Tensor::zeros(&[2])?.gaussian_fill(rng, 1.0)?;
    let x4 = |rng: &mut Rng, c: usize, s: usize| Tensor::zeros(&[2, c, s, s])?.gaussian_fill(rng, 1.0);
    Ok(vec![
        ("conv", Layer::Conv(conv), x4(rng, 2, 5)?),
        ("pool", Layer::Pool(PoolLayer::new(2, 1)?), x4(rng, 2, 4)?),
        ("relu", Layer::Relu(ReluLayer::new()), x4(rng, 2, 3)?),
        ("maxout", Layer::Maxout(MaxoutLayer::new(MaxoutSpec::default())?), x4(rng, 4, 3)?),
        ("batchnorm", Layer::BatchNorm(bn), x4(rng, 2, 3)?),
        ("dropout", Layer::Dropout(DropoutLayer::new(0.7)?), x4(rng, 2, 3)?),
        ("dense", Layer::Dense(dense), Tensor::zeros(&[3, 6])?.gaussian_fill(rng, 1.0)?),
    ])
}

fn softmax_nll_check(rng: &mut Rng) -> Result<(bool, String)> {
    let logits = Tensor::zeros(&[4, CLASSES])?.gaussian_fill(rng, 1.0)?;
    let targets = [0, 2, 4, 1];
    let cfg = LossConfig::second_phase();
    let analytic = nll_loss(&softmax(&logits)?, &targets, &cfg)?.grad_logits;
    let numeric = numeric_grad(
        |l| nll_loss(&softmax(l).expect("softmax"), &targets, &cfg).expect("nll").loss,
        &logits,
        DEFAULT_STEP,
    );
    let err = max_relative_error(&analytic, &numeric);
    Ok((err < GRAD_TOLERANCE, format!("max relative error {err:.1e}")))
}

fn metric_check(rng: &mut Rng) -> Result<(bool, String)> {
    for case in 0..50 {
        let a: Vec<u8> = (0..256).map(|_| rng.below(CLASSES) as u8).collect();
        let b: Vec<u8> = (0..256).map(|_| rng.below(CLASSES) as u8).collect();
        let pred = LabelMap::new([1, 16, 16], a.clone())?;
        let truth = LabelMap::new([1, 16, 16], b.clone())?;
        let report = evaluate(&pred, &truth)?;
        for region in Region::ALL {
            let members = region.labels();
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for i in 0..256 {
                let (p, g) = (members.contains(&a[i]), members.contains(&b[i]));
                tp += u64::from(p && g);
                fp += u64::from(p && !g);
                fn_ += u64::from(!p && g);
            }
            let s = report.region(region);
            let dice = if tp + fp + fn_ == 0 { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
            if (s.dice - dice).abs() > 1e-12 {
                return Ok((false, format!("case {case} {region}: dice {} vs {dice}", s.dice)));
            }
        }
    }
    Ok((true, "50 random label-map pairs".into()))
}

fn morphology_check() -> Result<(bool, String)> {
    let map = |f: &dyn Fn(usize, usize) -> u8| LabelMap::new([1, 20, 20], (0..400).map(|i| f(i / 20, i % 20)).collect());
    let dot = map(&|y, x| u8::from((y, x) == (10, 10)))?;
    let dot_ok = morph_cleanup(&dot).labels().iter().all(|&l| l == 0);
    let block = map(&|y, x| u8::from((5..15).contains(&y) && (5..15).contains(&x)) * 2)?;
    let block_ok = morph_cleanup(&block) == block;
    let holed = map(&|y, x| u8::from((5..15).contains(&y) && (5..15).contains(&x) && (y, x) != (9, 9)) * 2)?;
    let hole_ok = morph_cleanup(&holed) == block;
    Ok((dot_ok && block_ok && hole_ok, format!("isolated {dot_ok}, block {block_ok}, hole {hole_ok}")))
}

fn nesterov_check() -> Result<(bool, String)> {
    let (lr, mu) = (0.1, 0.9);
    let mut opt = Optimizer::new(Momentum::Nesterov, mu, lr)?;
    let mut params = [Tensor::scalar(1.0)];
    let (mut theta, mut v) = (1.0f64, 0.0f64);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        crate::optim::sgd_step(&mut params, &mut opt, |p| vec![p[0].map(|t| 2.0 * t)])?;
        v = mu * v - lr * 2.0 * (theta + mu * v);
        theta += v;
        worst = worst.max((params[0].data()[0] - theta).abs());
    }
    Ok((worst < 1e-12, format!("max deviation {worst:.1e} over 50 steps")))
}

fn volume_check() -> Result<(bool, String)> {
    let spec = PhantomSpec { dims: [3, 20, 20], tumor: TumorSpec::Random, noise_std: 10.0 };
    let set = generate_phantom(4, &spec)?;
    let mut bytes = Vec::new();
    set.write_to(&mut bytes)?;
    let back = VolumeSet::read_from(&mut &bytes[..])?;
    let pair = extract_patch_pair(&back, (1, 0, 19))?;
    let standardized = pair.big.data().chunks(BIG_PATCH * BIG_PATCH).all(|p| {
        let n = p.len() as f64;
        let m = p.iter().sum::<f64>() / n;
        let v = p.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        m.abs() < 1e-6 && ((v - 1.0).abs() < 1e-6 || p.iter().all(|&x| x == 0.0))
    });
    Ok((back == set && standardized, format!("round trip {}, patch planes standardized {standardized}", back == set)))
}

fn weights_check(rng: &mut Rng) -> Result<(bool, String)> {
    let probs = softmax(&Tensor::zeros(&[6, CLASSES])?.gaussian_fill(rng, 1.0)?)?;
    let targets = [0, 1, 2, 3, 4, 0];
    let ones = LossConfig::with_weights((0..CLASSES).map(|c| (c, 1.0)))?;
    let a = nll_loss(&probs, &targets, &ones)?.loss;
    let b = nll_loss(&probs, &targets, &LossConfig::uniform())?.loss;
    let w = LossConfig::second_phase();
    let ok = a == b && w.weight(0) == 8.0 && w.weight(2) == 2.0 && [1, 3, 4].iter().all(|&c| w.weight(c) == 1.0);
    Ok((ok, format!("all-ones {a} vs unweighted {b}")))
}

/// Runs every check; never fails as a whole, each entry carries its verdict.
pub fn run_all() -> Vec<Check> {
    let mut out = Vec::new();
    for arch in Architecture::ALL {
        out.push(Check::from_result(format!("dims.{}", arch.name()), arch_check(arch)));
    }
    let mut rng = Rng::new(2024);
    match layer_cases(&mut rng) {
        Ok(cases) => {
            for (name, mut layer, x) in cases {
                let r = check_layer_gradients(&mut layer, &x, &mut rng)
                    .map(|rep| (rep.worst() < GRAD_TOLERANCE, format!("max relative error {:.1e}", rep.worst())));
                out.push(Check::from_result(format!("grad.{name}"), r));
            }
        }
        Err(e) => out.push(Check::new("grad.setup", false, e.to_string())),
    }
    out.push(Check::from_result("grad.softmax_nll", softmax_nll_check(&mut rng)));
    out.push(Check::from_result("metrics.oracle", metric_check(&mut rng)));
    out.push(Check::from_result("morphology", morphology_check()));
    out.push(Check::from_result("optim.nesterov", nesterov_check()));
    out.push(Check::from_result("data.volume_and_patch", volume_check()));
    out.push(Check::from_result("loss.weights", weights_check(&mut rng)));
    out
}
