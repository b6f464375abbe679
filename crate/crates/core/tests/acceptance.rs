//! Acceptance criteria 1-11, one PASS/FAIL line each. Every reference
//! value is computed here, independently of the library code under test.

use std::process::ExitCode;
use std::time::Instant;

use nexus_core::data::{generate_phantom, preprocess_volume, LabelMap, NormScope, PhantomSpec, TumorSpec, VolumeSet};
use nexus_core::eval::{evaluate, morph_cleanup, segment_volume, segment_volume_heads, Region, SegReport};
use nexus_core::layers::{
    softmax, BatchNormLayer, ConvLayer, DenseLayer, DropoutLayer, Init, Layer, MaxoutLayer, MaxoutSpec, Mode, PoolLayer,
    ReluLayer,
};
use nexus_core::loss::{nll_loss, LossConfig};
use nexus_core::models::{Architecture, ModelConfig, NexusModel, BIG_PATCH, CLASSES, FEATURES, MODALITIES, SMALL_PATCH};
use nexus_core::optim::{Momentum, Optimizer};
use nexus_core::train::{
    load_checkpoint, split_volumes, train, train_phase1, train_phase2, write_checkpoint, RunHooks, TrainConfig,
    STREAM_INIT,
};
use nexus_core::{Rng, Tensor};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("1 paper numbers not reproducible at desk scale", c1_statement),
        ("2 gradient suite", c2_gradients),
        ("3 dimension contract", c3_dimensions),
        ("4 metric oracle", c4_metrics),
        ("5 optimizer", c5_optimizer),
        ("6 dropout / batch-norm statistics", c6_statistics),
        ("7 two-phase freeze and weights", c7_freeze),
        ("8 end-to-end desk-scale learning", c8_desk),
        ("9 two-phase specificity direction", c9_direction),
        ("10 morphology exactness", c10_morphology),
        ("11 determinism", c11_determinism),
    ];
    // `cargo test --test acceptance -- 8 9` runs a subset.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {name}: {d} [{secs:.1}s]");
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn c1_statement() -> Outcome {
    Ok("the published BRATS dice scores (0.87/0.89/0.92) and the 5-10 minute segmentation time need the real \
        data and full-scale training; criteria 2-11 are property-based substitutes"
        .into())
}

// ---------------------------------------------------------------- 2

const STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn projected(layer: &mut Layer, x: &Tensor, r: &[f64]) -> f64 {
    let y = layer.forward(x, Mode::Train, &mut Rng::new(0)).unwrap();
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Worst relative error of the layer's input and parameter gradients
/// against central differences of `sum(r * layer(x))`.
fn layer_error(layer: &Layer, x: &Tensor, rng: &mut Rng) -> f64 {
    let mut l = layer.clone();
    let y = l.forward(x, Mode::Train, &mut Rng::new(0)).unwrap();
    let r: Vec<f64> = (0..y.len()).map(|_| rng.normal()).collect();
    let gx = l.backward(&Tensor::from_vec(y.shape(), r.clone()).unwrap()).unwrap();
    let mut worst = 0.0f64;
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + STEP;
        let plus = projected(&mut layer.clone(), &xp, &r);
        xp.data_mut()[i] = orig - STEP;
        let minus = projected(&mut layer.clone(), &xp, &r);
        xp.data_mut()[i] = orig;
        worst = worst.max(rel_err(gx.data()[i], (plus - minus) / (2.0 * STEP)));
    }
    let grads: Vec<(bool, Tensor)> = l.params().iter().map(|p| (p.learnable, p.grad.clone())).collect();
    for (k, (learnable, g)) in grads.into_iter().enumerate() {
        if !learnable {
            continue;
        }
        for i in 0..g.len() {
            let probe = |delta: f64| {
                let mut c = layer.clone();
                c.params_mut()[k].value.data_mut()[i] += delta;
                projected(&mut c, x, &r)
            };
            worst = worst.max(rel_err(g.data()[i], (probe(STEP) - probe(-STEP)) / (2.0 * STEP)));
        }
    }
    worst
}

fn softmax_nll_error(rng: &mut Rng) -> f64 {
    let b = 1 + rng.below(4);
    let logits = randn(rng, &[b, CLASSES]);
    let targets: Vec<usize> = (0..b).map(|_| rng.below(CLASSES)).collect();
    let cfg = LossConfig::with_weights((0..CLASSES).map(|c| (c, 0.5 + rng.uniform() * 8.0))).unwrap();
    let loss = |l: &Tensor| nll_loss(&softmax(l).unwrap(), &targets, &cfg).unwrap().loss;
    let analytic = nll_loss(&softmax(&logits).unwrap(), &targets, &cfg).unwrap().grad_logits;
    let mut worst = 0.0f64;
    let mut lp = logits.clone();
    for i in 0..logits.len() {
        let orig = lp.data()[i];
        lp.data_mut()[i] = orig + STEP;
        let plus = loss(&lp);
        lp.data_mut()[i] = orig - STEP;
        let minus = loss(&lp);
        lp.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic.data()[i], (plus - minus) / (2.0 * STEP)));
    }
    worst
}

fn c2_gradients() -> Outcome {
    const INSTANCES: usize = 20;
    let mut rng = Rng::new(20);
    let mut lines = Vec::new();
    let mut ok = true;
    let kinds = ["conv", "pool", "relu", "maxout", "batchnorm", "dense", "softmax+nll"];
    for kind in kinds {
        let mut worst = 0.0f64;
        for _ in 0..INSTANCES {
            let err = if kind == "softmax+nll" {
                softmax_nll_error(&mut rng)
            } else {
                let (layer, x) = random_layer(kind, &mut rng);
                layer_error(&layer, &x, &mut rng)
            };
            worst = worst.max(err);
        }
        ok &= worst < GRAD_TOL;
        lines.push(format!("{kind} {worst:.1e}"));
    }
    ensure(ok, format!("{INSTANCES} instances each, worst relative error: {}", lines.join(", ")))
}

fn random_layer(kind: &str, rng: &mut Rng) -> (Layer, Tensor) {
    let batch = 1 + rng.below(2);
    match kind {
        "conv" => {
            let (cin, cout, k) = (1 + rng.below(3), 1 + rng.below(3), 1 + 2 * rng.below(3));
            let mut c = ConvLayer::new(cin, cout, k).unwrap();
            c.init(rng, Init::Normal(0.5), 0.1).unwrap();
            let s = k + rng.below(3);
            (Layer::Conv(c), randn(rng, &[batch, cin, s, s]))
        }
        "pool" => {
            let (p, stride) = (2 + rng.below(2), 1 + rng.below(2));
            let s = p + rng.below(3);
            let c = 1 + rng.below(2);
            (Layer::Pool(PoolLayer::new(p, stride).unwrap()), randn(rng, &[batch, c, s, s]))
        }
        "relu" => (Layer::Relu(ReluLayer::new()), randn(rng, &[batch, 2, 3, 3])),
        "maxout" => {
            let group = 2 + rng.below(2);
            let m = MaxoutLayer::new(MaxoutSpec { group }).unwrap();
            let c = group * (1 + rng.below(2));
            (Layer::Maxout(m), randn(rng, &[batch, c, 3, 3]))
        }
        "batchnorm" => {
            let c = 1 + rng.below(3);
            let mut bn = BatchNormLayer::new(c).unwrap();
            bn.gamma.value = randn(rng, &[c]);
            bn.beta.value = randn(rng, &[c]);
            let (n, s) = (2 + rng.below(2), 2 + rng.below(2));
            (Layer::BatchNorm(bn), randn(rng, &[n, c, s, 2]))
        }
        "dense" => {
            let (f, u) = (1 + rng.below(6), 1 + rng.below(5));
            let mut d = DenseLayer::new(f, u).unwrap();
            d.init(rng, Init::Normal(0.5), 0.1).unwrap();
            (Layer::Dense(d), randn(rng, &[batch + 1, f]))
        }
        _ => unreachable!(),
    }
}

// ---------------------------------------------------------------- 3

fn c3_dimensions() -> Outcome {
    let mut rng = Rng::new(3);
    let mut notes = Vec::new();
    let mut ok = true;
    for arch in Architecture::ALL {
        let mut model = NexusModel::build(arch, &ModelConfig::default(), &mut rng).map_err(|e| e.to_string())?;
        let dims_ok = model.check_dims().is_ok();
        let big = randn(&mut rng, &[1, MODALITIES, BIG_PATCH, BIG_PATCH]);
        let small = randn(&mut rng, &[1, MODALITIES, SMALL_PATCH, SMALL_PATCH]);
        let feats = model.features(&big, &small, Mode::Infer, &mut rng).map_err(|e| e.to_string())?;
        let probs = model.forward(&big, &small, Mode::Infer, &mut rng).map_err(|e| e.to_string())?;
        let sum_err = (probs.data().iter().sum::<f64>() - 1.0).abs();
        let this = dims_ok && feats.shape() == [1, FEATURES] && probs.shape() == [1, CLASSES] && sum_err < 1e-9;
        ok &= this;
        notes.push(format!("{} {} features |sum-1|={sum_err:.0e}", arch.name(), feats.len()));
    }
    ensure(ok, notes.join(", "))
}

// ---------------------------------------------------------------- 4

fn c4_metrics() -> Outcome {
    let mut rng = Rng::new(4);
    let sets: [(Region, &[u8]); 3] =
        [(Region::Complete, &[1, 2, 3, 4]), (Region::Core, &[1, 3, 4]), (Region::Enhancing, &[4])];
    let mut worst = 0.0f64;
    let mut monotone = true;
    for _ in 0..1000 {
        let a: Vec<u8> = (0..1024).map(|_| rng.below(CLASSES) as u8).collect();
        let b: Vec<u8> = (0..1024).map(|_| rng.below(CLASSES) as u8).collect();
        let pred = LabelMap::new([1, 32, 32], a.clone()).unwrap();
        let truth = LabelMap::new([1, 32, 32], b.clone()).unwrap();
        let report = evaluate(&pred, &truth).map_err(|e| e.to_string())?;
        let mut sizes = Vec::new();
        for (region, members) in sets {
            let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
            for y in 0..32 {
                for x in 0..32 {
                    let p = members.contains(&a[y * 32 + x]);
                    let g = members.contains(&b[y * 32 + x]);
                    match (p, g) {
                        (true, true) => tp += 1.0,
                        (true, false) => fp += 1.0,
                        (false, true) => fn_ += 1.0,
                        (false, false) => tn += 1.0,
                    }
                }
            }
            let dice = if tp + fp + fn_ == 0.0 { 1.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
            let sens = if tp + fn_ == 0.0 { 1.0 } else { tp / (tp + fn_) };
            let spec = if tn + fp == 0.0 { 1.0 } else { tn / (tn + fp) };
            let s = report.region(region);
            for (got, want) in [(s.dice, dice), (s.sensitivity, sens), (s.specificity, spec)] {
                worst = worst.max((got - want).abs());
            }
            sizes.push((tp + fp, tp + fn_));
        }
        monotone &= sizes.windows(2).all(|w| w[1].0 <= w[0].0 && w[1].1 <= w[0].1);
    }
    ensure(worst <= 1e-12 && monotone, format!("1000 pairs, max deviation {worst:.1e}, nested regions {monotone}"))
}

// ---------------------------------------------------------------- 5

/// Library trajectory of `f = a theta^2 / 2` from `theta = 1`.
fn library_trajectory(mode: Momentum, a: f64, mu: f64, lr: f64, steps: usize) -> Vec<f64> {
    let mut opt = Optimizer::new(mode, mu, lr).unwrap();
    let mut params = [nexus_core::layers::Param::new("theta", Tensor::scalar(1.0))];
    (0..steps)
        .map(|_| {
            opt.step_with(&mut params, |p| {
                p[0].grad = p[0].value.map(|t| a * t);
                Ok(())
            })
            .unwrap();
            params[0].value.data()[0]
        })
        .collect()
}

fn steps_to_converge(traj: &[f64]) -> Option<usize> {
    traj.iter().position(|t| t.abs() < 1e-3).map(|i| i + 1)
}

fn c5_optimizer() -> Outcome {
    let (a, mu, lr, steps) = (1.0, 0.9, 0.1, 400);
    let nesterov = library_trajectory(Momentum::Nesterov, a, mu, lr, steps);
    let classical = library_trajectory(Momentum::Classical, a, mu, lr, steps);
    let (mut theta, mut v, mut worst) = (1.0f64, 0.0f64, 0.0f64);
    for got in &nesterov {
        v = mu * v - lr * a * (theta + mu * v);
        theta += v;
        worst = worst.max((got - theta).abs());
    }
    let (mut theta_c, mut v_c, mut worst_c) = (1.0f64, 0.0f64, 0.0f64);
    for got in &classical {
        v_c = mu * v_c - lr * a * theta_c;
        theta_c += v_c;
        worst_c = worst_c.max((got - theta_c).abs());
    }
    let (n, c) = (steps_to_converge(&nesterov), steps_to_converge(&classical));
    let faster = matches!((n, c), (Some(n), Some(c)) if n <= c);
    ensure(
        worst <= 1e-12 && worst_c <= 1e-12 && faster,
        format!("nesterov deviation {worst:.1e}, classical {worst_c:.1e}; |theta|<1e-3 after {n:?} vs {c:?} steps"),
    )
}

// ---------------------------------------------------------------- 6

fn c6_statistics() -> Outcome {
    const TRIALS: usize = 100_000;
    let mut rng = Rng::new(6);
    let x = Tensor::from_vec(&[1, 8], (0..8).map(|i| 0.5 + i as f64 * 0.25).collect()).unwrap();
    let mut drop = DropoutLayer::from_rate(0.5).map_err(|e| e.to_string())?;
    let infer = drop.forward(&x, Mode::Infer, &mut rng).unwrap();
    let mut sum = vec![0.0; 8];
    for _ in 0..TRIALS {
        let y = drop.forward(&x, Mode::Train, &mut rng).unwrap();
        for (s, v) in sum.iter_mut().zip(y.data()) {
            *s += v;
        }
    }
    let drop_dev = sum
        .iter()
        .zip(infer.data())
        .map(|(s, i)| (s / TRIALS as f64 - i).abs() / i.abs())
        .fold(0.0, f64::max);

    let (n, c, hw) = (32, 3, 16);
    let data: Vec<f64> =
        (0..n * c * hw).map(|i| 5.0 * rng.normal() + [3.0, -7.0, 100.0][(i / hw) % c]).collect();
    let input = Tensor::from_vec(&[n, c, 4, 4], data).unwrap();
    let mut bn = BatchNormLayer::new(c).unwrap();
    bn.forward(&input, Mode::Train).unwrap();
    let xhat = bn.normalized().ok_or("no normalized activations cached")?;
    let mut bn_dev = 0.0f64;
    for ch in 0..c {
        let vals: Vec<f64> =
            (0..n).flat_map(|b| xhat.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw].to_vec()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
        bn_dev = bn_dev.max(m.abs()).max((var - 1.0).abs());
    }
    ensure(
        drop_dev <= 0.02 && bn_dev <= 1e-6,
        format!("dropout mean deviation {:.3}% over {TRIALS} trials, batch-norm (mean, var) deviation {bn_dev:.1e}", drop_dev * 100.0),
    )
}

// ---------------------------------------------------------------- 7

fn small_set(seeds: std::ops::Range<u64>, dims: [usize; 3]) -> Vec<VolumeSet> {
    let spec = PhantomSpec { dims, tumor: TumorSpec::Random, noise_std: 25.0 };
    seeds.map(|s| preprocess_volume(&generate_phantom(s, &spec).unwrap(), NormScope::Slice)).collect()
}

fn tiny_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        phase1_patches: 400,
        phase1_epochs: 2,
        phase2_patches: 200,
        phase2_epochs: 2,
        val_patches: 60,
        batch_size: 32,
        seed,
        ..TrainConfig::default()
    };
    cfg.model.hidden_maps = 2;
    cfg
}

fn c7_freeze() -> Outcome {
    let vols = small_set(70..73, [2, 28, 28]);
    let cfg = tiny_config(7);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut model = NexusModel::build(Architecture::Ln, &cfg.model, &mut Rng::derive(cfg.seed, STREAM_INIT)).unwrap();
    let mut hooks = RunHooks { checkpoint_dir: Some(dir.path().to_path_buf()), on_epoch: None };
    train(&mut model, &vols[..2], &vols[2..], &cfg, &mut hooks).map_err(|e| e.to_string())?;
    let phase1 = load_checkpoint(dir.path().join(format!("phase1-epoch{:03}.nxck", cfg.phase1_epochs - 1)))
        .map_err(|e| e.to_string())?;
    let (before, after) = (phase1.params(), model.params());
    let out_from = after.len() - NexusModel::OUTPUT_PARAMS;
    let body_same = before[..out_from].iter().zip(&after[..out_from]).all(|(a, b)| {
        a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let head_moved = before[out_from..].iter().zip(&after[out_from..]).any(|(a, b)| a.value != b.value);

    let mut rng = Rng::new(77);
    let probs = softmax(&randn(&mut rng, &[40, CLASSES])).unwrap();
    let targets: Vec<usize> = (0..40).map(|i| i % CLASSES).collect();
    let weight = [8.0, 1.0, 2.0, 1.0, 1.0];
    let oracle = -targets.iter().enumerate().map(|(i, &y)| weight[y] * probs.data()[i * CLASSES + y].ln()).sum::<f64>()
        / targets.len() as f64;
    let weighted = nll_loss(&probs, &targets, &cfg.phase2_loss().unwrap()).unwrap().loss;
    let plain = -targets.iter().enumerate().map(|(i, &y)| probs.data()[i * CLASSES + y].ln()).sum::<f64>() / 40.0;
    let ones = LossConfig::with_weights((0..CLASSES).map(|c| (c, 1.0))).unwrap();
    let ones_loss = nll_loss(&probs, &targets, &ones).unwrap().loss;
    let unweighted = nll_loss(&probs, &targets, &LossConfig::uniform()).unwrap().loss;
    let weights_ok = (weighted - oracle).abs() <= 1e-12 * oracle.abs() && ones_loss == unweighted
        && (unweighted - plain).abs() <= 1e-12 * plain.abs();
    ensure(
        body_same && head_moved && weights_ok,
        format!(
            "body bit-identical {body_same}, output layer moved {head_moved}, weighted loss {weighted:.12} vs oracle \
             {oracle:.12}, all-ones {ones_loss} vs unweighted {unweighted}"
        ),
    )
}

// ---------------------------------------------------------------- 8 and 9

const DESK_DIMS: [usize; 3] = [16, 64, 64];
const DESK_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct DeskRun {
    seconds: f64,
    phase1: Vec<SegReport>,
    two_phase: Vec<SegReport>,
}

/// LN on phantoms 100-107 (6 fit, 2 validation), scored on 108-109
/// after post-processing, with and without the second phase.
fn desk_run(seed: u64, vols: &[VolumeSet]) -> Result<DeskRun, String> {
    let t = Instant::now();
    let (fit, val) = split_volumes(8, 0.2, seed).map_err(|e| e.to_string())?;
    let fit: Vec<_> = fit.iter().map(|&i| vols[i].clone()).collect();
    let val: Vec<_> = val.iter().map(|&i| vols[i].clone()).collect();
    let mut cfg = TrainConfig { desk_scale: 0.05, phase1_epochs: 3, phase2_epochs: 2, seed, ..TrainConfig::default() };
    cfg.model.hidden_maps = 8;
    let mut model = NexusModel::build(Architecture::Ln, &cfg.model, &mut Rng::derive(seed, STREAM_INIT)).unwrap();
    let mut hooks = RunHooks::default();
    train_phase1(&mut model, &fit, &val, &cfg, &mut hooks).map_err(|e| e.to_string())?;
    let phase1 = model.clone();
    train_phase2(&mut model, &fit, &val, &cfg, &mut hooks).map_err(|e| e.to_string())?;
    let mut run = DeskRun { seconds: 0.0, phase1: Vec::new(), two_phase: Vec::new() };
    for v in &vols[8..] {
        let truth = v.labels.as_ref().unwrap();
        let maps = segment_volume_heads(&[&phase1, &model], v).map_err(|e| e.to_string())?;
        run.phase1.push(evaluate(&morph_cleanup(&maps[0]), truth).unwrap());
        run.two_phase.push(evaluate(&morph_cleanup(&maps[1]), truth).unwrap());
    }
    run.seconds = t.elapsed().as_secs_f64();
    Ok(run)
}

fn desk_volumes() -> Vec<VolumeSet> {
    small_set(100..110, DESK_DIMS)
}

static DESK: std::sync::OnceLock<Result<Vec<DeskRun>, String>> = std::sync::OnceLock::new();

fn desk_runs() -> Result<&'static Vec<DeskRun>, String> {
    DESK.get_or_init(|| {
        let vols = desk_volumes();
        DESK_SEEDS.iter().map(|&s| desk_run(s, &vols)).collect()
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn c8_desk() -> Outcome {
    let run = &desk_runs()?[0];
    let scores: Vec<_> = run.two_phase.iter().map(|r| r.region(Region::Complete)).collect();
    let ok = scores.iter().all(|s| s.dice >= 0.80 && s.specificity >= 0.90) && run.seconds <= 1800.0;
    let text: Vec<String> =
        scores.iter().map(|s| format!("dice {:.3} specificity {:.4}", s.dice, s.specificity)).collect();
    ensure(ok, format!("held-out complete tumor: {}; train + segment {:.0}s on this machine", text.join(" / "), run.seconds))
}

fn mean_specificity(reports: &[SegReport]) -> f64 {
    reports.iter().map(|r| r.region(Region::Complete).specificity).sum::<f64>() / reports.len() as f64
}

fn c9_direction() -> Outcome {
    let runs = desk_runs()?;
    let mut wins = 0;
    let mut text = Vec::new();
    for (seed, run) in DESK_SEEDS.iter().zip(runs) {
        let (p1, p2) = (mean_specificity(&run.phase1), mean_specificity(&run.two_phase));
        wins += usize::from(p1 <= p2);
        text.push(format!("seed {seed}: {p1:.4} -> {p2:.4}"));
    }
    ensure(wins >= 4, format!("{wins}/5 repetitions with phase-1 <= two-phase specificity ({})", text.join(", ")))
}

// ---------------------------------------------------------------- 10

fn c10_morphology() -> Outcome {
    let mut rng = Rng::new(10);
    let (h, w) = (48, 48);
    for case in 0..200 {
        let mut input = vec![0u8; h * w];
        let mut expected = vec![0u8; h * w];
        // Up to four 10x10 blocks on a 12-pixel grid of cells, so blocks
        // never touch; some cells get an isolated pixel instead.
        for cell in 0..16 {
            let (cy, cx) = (cell / 4 * 12, cell % 4 * 12);
            match rng.below(3) {
                0 => {
                    let label = 1 + rng.below(4) as u8;
                    let hole = (1 + rng.below(8), 1 + rng.below(8));
                    let with_hole = rng.bernoulli(0.5);
                    for y in 0..10 {
                        for x in 0..10 {
                            let i = (cy + y) * w + cx + x;
                            expected[i] = label;
                            input[i] = if with_hole && (y, x) == hole { 0 } else { label };
                        }
                    }
                }
                1 => input[(cy + 2 + rng.below(8)) * w + cx + 2 + rng.below(8)] = 1 + rng.below(4) as u8,
                _ => {}
            }
        }
        let out = morph_cleanup(&LabelMap::new([1, h, w], input).unwrap());
        if out.labels() != expected.as_slice() {
            let diff: Vec<(usize, usize, u8, u8)> = (0..h * w)
                .filter(|&i| out.labels()[i] != expected[i])
                .map(|i| (i / w, i % w, out.labels()[i], expected[i]))
                .collect();
            return Err(format!("case {case} differs from the direct construction at {diff:?}"));
        }
    }
    Ok("200 random scenes of blocks, holed blocks and isolated pixels reproduced exactly".into())
}

// ---------------------------------------------------------------- 11

fn c11_determinism() -> Outcome {
    let vols = small_set(110..113, [2, 28, 28]);
    let artifacts = || -> Result<(Vec<u8>, Vec<u8>, Vec<u8>), String> {
        let cfg = tiny_config(11);
        let mut model = NexusModel::build(Architecture::Tpn, &cfg.model, &mut Rng::derive(cfg.seed, STREAM_INIT)).unwrap();
        train(&mut model, &vols[..2], &vols[2..], &cfg, &mut RunHooks::default()).map_err(|e| e.to_string())?;
        let mut ckpt = Vec::new();
        write_checkpoint(&model, &mut ckpt).map_err(|e| e.to_string())?;
        let seg = segment_volume(&model, &vols[2]).map_err(|e| e.to_string())?;
        let mut labels = Vec::new();
        VolumeSet { modalities: Vec::new(), labels: Some(seg.clone()) }.write_to(&mut labels).unwrap();
        let mut report = Vec::new();
        evaluate(&seg, vols[2].labels.as_ref().unwrap()).unwrap().write_csv(&mut report).unwrap();
        Ok((ckpt, labels, report))
    };
    let (a, b) = (artifacts()?, artifacts()?);
    ensure(
        a == b,
        format!(
            "checkpoint {} bytes identical {}, label map identical {}, report CSV identical {}",
            a.0.len(),
            a.0 == b.0,
            a.1 == b.1,
            a.2 == b.2
        ),
    )
}
