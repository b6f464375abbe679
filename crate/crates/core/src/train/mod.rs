//! Two-phase training: all layers on class-balanced patches, then the
//! output layer alone under class-weighted loss.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, load_into, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{split_volumes, TrainConfig};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{fill_pair, sample_sites, stratified_shuffle, stratified_shuffle_by, SamplerMode, SamplerSpec, Site, VolumeSet};
use crate::error::{Error, Result};
use crate::layers::{softmax, Mode, Param};
use crate::loss::{nll_loss, LossConfig};
use crate::models::{NexusModel, BIG_PATCH, MODALITIES, SMALL_PATCH};
use crate::optim::Optimizer;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Seed streams derived from the run seed.
const STREAM_PHASE1_SITES: u64 = 1;
const STREAM_VAL_SITES: u64 = 2;
const STREAM_PHASE2_SITES: u64 = 3;
const STREAM_PHASE1_RUN: u64 = 11;
const STREAM_PHASE2_RUN: u64 = 12;
/// Stream for model initialization, reserved so callers can share the seed.
pub const STREAM_INIT: u64 = 0;

/// Inference batch for validation and feature extraction.
const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub phase: u8,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// CSV with header `phase,epoch,train_loss,val_loss,lr,seconds`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["phase", "epoch", "train_loss", "val_loss", "lr", "seconds"])?;
        for r in &self.records {
            out.write_record([
                r.phase.to_string(),
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                r.lr.to_string(),
                format!("{:.3}", r.seconds),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Where and how a run reports progress.
#[derive(Default)]
pub struct RunHooks<'a> {
    /// Directory receiving `phase{p}-epoch{e}.nxck` after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    pub on_epoch: Option<Box<dyn FnMut(&EpochRecord) + 'a>>,
}

impl RunHooks<'_> {
    fn epoch_done(&mut self, model: &NexusModel, record: &EpochRecord) -> Result<()> {
        if let Some(dir) = &self.checkpoint_dir {
            save_checkpoint(model, checkpoint_path(dir, record.phase, record.epoch))?;
        }
        if let Some(f) = self.on_epoch.as_mut() {
            f(record);
        }
        Ok(())
    }
}

pub fn checkpoint_path(dir: &Path, phase: u8, epoch: usize) -> PathBuf {
    dir.join(format!("phase{phase}-epoch{epoch:03}.nxck"))
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    Rng::derive(seed, stream).next_u64()
}

/// Standardized `[N,4,33,33]`, `[N,4,15,15]` inputs and targets for sites.
pub fn site_batch(vols: &[VolumeSet], sites: &[Site]) -> Result<(Tensor, Tensor, Vec<usize>)> {
    let bs = MODALITIES * BIG_PATCH * BIG_PATCH;
    let ss = MODALITIES * SMALL_PATCH * SMALL_PATCH;
    let mut big = vec![0.0; sites.len() * bs];
    let mut small = vec![0.0; sites.len() * ss];
    for ((s, b), sm) in sites.iter().zip(big.chunks_mut(bs)).zip(small.chunks_mut(ss)) {
        fill_pair(&vols[s.volume], s.center, b, sm);
    }
    let n = sites.len();
    Ok((
        Tensor::from_vec(&[n, MODALITIES, BIG_PATCH, BIG_PATCH], big)?,
        Tensor::from_vec(&[n, MODALITIES, SMALL_PATCH, SMALL_PATCH], small)?,
        sites.iter().map(|s| s.label as usize).collect(),
    ))
}

fn check_labeled(vols: &[VolumeSet], what: &str) -> Result<()> {
    if vols.is_empty() {
        return Err(Error::Config(format!("no {what} volumes")));
    }
    if let Some(i) = vols.iter().position(|v| v.labels.is_none()) {
        return Err(Error::Config(format!("{what} volume {i} has no labels")));
    }
    Ok(())
}

fn finite(loss: f64, phase: u8, epoch: usize, batch: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numeric(format!("phase {phase} epoch {epoch} batch {batch}: loss is {loss}")))
    }
}

fn check_params(model: &NexusModel, phase: u8, epoch: usize) -> Result<()> {
    match model.params().iter().find(|p| p.value.data().iter().any(|v| !v.is_finite())) {
        Some(p) => Err(Error::Numeric(format!("phase {phase} epoch {epoch}: parameter {} is not finite", p.name))),
        None => Ok(()),
    }
}

fn val_sites(val: &[VolumeSet], cfg: &TrainConfig) -> Result<Vec<Site>> {
    let spec = SamplerSpec {
        mode: SamplerMode::Balanced,
        count: cfg.val_count(),
        seed: stream_seed(cfg.seed, STREAM_VAL_SITES),
    };
    Ok(sample_sites(val, &spec)?.sites)
}

/// Inference-mode features `[N, 1152]` for every site.
fn site_features(model: &mut NexusModel, vols: &[VolumeSet], sites: &[Site]) -> Result<Tensor> {
    let mut parts = Vec::new();
    let mut rng = Rng::new(0);
    for chunk in sites.chunks(EVAL_BATCH) {
        let (big, small, _) = site_batch(vols, chunk)?;
        parts.push(model.features(&big, &small, Mode::Infer, &mut rng)?);
    }
    let mut data = Vec::new();
    for p in parts {
        data.extend(p.into_data());
    }
    let n = sites.len();
    Tensor::from_vec(&[n, data.len() / n.max(1)], data)
}

fn mean_head_loss(model: &mut NexusModel, feats: &Tensor, targets: &[usize], loss: &LossConfig) -> Result<f64> {
    let mut rng = Rng::new(0);
    let probs = softmax(&model.head_logits(feats, Mode::Infer, &mut rng)?)?;
    Ok(nll_loss(&probs, targets, loss)?.loss)
}

/// Phase 1: every parameter trained on balanced patches with uniform loss.
/// Returns one record per epoch; epochs are numbered from 0 in the global
/// learning-rate schedule.
pub fn train_phase1(
    model: &mut NexusModel,
    train: &[VolumeSet],
    val: &[VolumeSet],
    cfg: &TrainConfig,
    hooks: &mut RunHooks,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    check_labeled(train, "training")?;
    check_labeled(val, "validation")?;
    model.unfreeze();
    let spec = SamplerSpec {
        mode: SamplerMode::Balanced,
        count: cfg.phase1_count(),
        seed: stream_seed(cfg.seed, STREAM_PHASE1_SITES),
    };
    let mut sites = sample_sites(train, &spec)?.sites;
    let val_sites = val_sites(val, cfg)?;
    let loss_cfg = LossConfig::uniform();
    let schedule = cfg.schedule();
    let mut opt = Optimizer::new(cfg.momentum_mode, cfg.momentum, cfg.lr_start)?;
    let mut rng = Rng::derive(cfg.seed, STREAM_PHASE1_RUN);
    let mut records = Vec::new();
    for epoch in 0..cfg.phase1_epochs {
        let start = Instant::now();
        opt.lr = schedule.rate(epoch);
        stratified_shuffle(&mut sites, &mut rng);
        let mut total = 0.0;
        for (b, chunk) in sites.chunks(cfg.batch_size).enumerate() {
            let (big, small, targets) = site_batch(train, chunk)?;
            opt.look_ahead(&mut model.params_mut())?;
            let probs = model.forward(&big, &small, Mode::Train, &mut rng)?;
            let out = nll_loss(&probs, &targets, &loss_cfg)?;
            total += finite(out.loss, 1, epoch, b)? * chunk.len() as f64;
            model.backward(&out.grad_logits)?;
            opt.apply(&mut model.params_mut())?;
        }
        let mut val_total = 0.0;
        for chunk in val_sites.chunks(EVAL_BATCH) {
            let (big, small, targets) = site_batch(val, chunk)?;
            let probs = model.forward(&big, &small, Mode::Infer, &mut Rng::new(0))?;
            val_total += nll_loss(&probs, &targets, &loss_cfg)?.loss * chunk.len() as f64;
        }
        let record = EpochRecord {
            phase: 1,
            epoch,
            train_loss: total / sites.len() as f64,
            val_loss: val_total / val_sites.len() as f64,
            lr: opt.lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        finite(record.val_loss, 1, epoch, 0)?;
        check_params(model, 1, epoch)?;
        hooks.epoch_done(model, &record)?;
        records.push(record);
    }
    Ok(records)
}

/// Phase 2: body frozen (run in inference mode, its features computed
/// once), output layer trained on balanced patches under the class weights.
pub fn train_phase2(
    model: &mut NexusModel,
    train: &[VolumeSet],
    val: &[VolumeSet],
    cfg: &TrainConfig,
    hooks: &mut RunHooks,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    check_labeled(train, "training")?;
    check_labeled(val, "validation")?;
    model.freeze_all_but_output();
    let spec = SamplerSpec {
        mode: SamplerMode::Balanced,
        count: cfg.phase2_count(),
        seed: stream_seed(cfg.seed, STREAM_PHASE2_SITES),
    };
    let sites = sample_sites(train, &spec)?.sites;
    let vsites = val_sites(val, cfg)?;
    let loss_cfg = cfg.phase2_loss()?;
    let schedule = cfg.schedule();

    let val_feats = site_features(model, val, &vsites)?;
    let val_targets: Vec<usize> = vsites.iter().map(|s| s.label as usize).collect();
    let feats = site_features(model, train, &sites)?;
    let width = feats.shape()[1];
    // (row in `feats`, label)
    let mut order: Vec<(usize, u8)> = sites.iter().enumerate().map(|(i, s)| (i, s.label)).collect();

    let mut opt = Optimizer::new(cfg.momentum_mode, cfg.momentum, cfg.lr_start)?;
    let mut rng = Rng::derive(cfg.seed, STREAM_PHASE2_RUN);
    let mut records = Vec::new();
    for epoch in 0..cfg.phase2_epochs {
        let start = Instant::now();
        opt.lr = schedule.rate(cfg.phase1_epochs + epoch);
        stratified_shuffle_by(&mut order, |o| o.1, &mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut data = Vec::with_capacity(chunk.len() * width);
            for &(row, _) in chunk {
                data.extend_from_slice(&feats.data()[row * width..(row + 1) * width]);
            }
            let batch = Tensor::from_vec(&[chunk.len(), width], data)?;
            let targets: Vec<usize> = chunk.iter().map(|o| o.1 as usize).collect();
            opt.look_ahead(&mut output_params(model))?;
            let probs = softmax(&model.head_logits(&batch, Mode::Train, &mut rng)?)?;
            let out = nll_loss(&probs, &targets, &loss_cfg)?;
            total += finite(out.loss, 2, epoch, b)? * chunk.len() as f64;
            model.head_backward(&out.grad_logits)?;
            opt.apply(&mut output_params(model))?;
        }
        let record = EpochRecord {
            phase: 2,
            epoch,
            train_loss: total / order.len() as f64,
            val_loss: mean_head_loss(model, &val_feats, &val_targets, &loss_cfg)?,
            lr: opt.lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        finite(record.val_loss, 2, epoch, 0)?;
        check_params(model, 2, epoch)?;
        hooks.epoch_done(model, &record)?;
        records.push(record);
    }
    Ok(records)
}

fn output_params(model: &mut NexusModel) -> Vec<&mut Param> {
    let mut all = model.params_mut();
    let n = all.len();
    all.split_off(n - NexusModel::OUTPUT_PARAMS)
}

/// Both phases in order.
pub fn train(
    model: &mut NexusModel,
    train_vols: &[VolumeSet],
    val_vols: &[VolumeSet],
    cfg: &TrainConfig,
    hooks: &mut RunHooks,
) -> Result<TrainLog> {
    let mut records = train_phase1(model, train_vols, val_vols, cfg, hooks)?;
    records.extend(train_phase2(model, train_vols, val_vols, cfg, hooks)?);
    Ok(TrainLog { records })
}
