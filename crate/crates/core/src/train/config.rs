use std::path::Path;

use crate::error::{param_err, Error, Result};
use crate::loss::LossConfig;
use crate::models::{ModelConfig, CLASSES};
use crate::optim::{LrSchedule, Momentum};

/// Everything a two-phase run needs besides the data and the architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub phase1_patches: usize,
    pub phase1_epochs: usize,
    pub phase2_patches: usize,
    pub phase2_epochs: usize,
    /// Phase-2 loss weights per class.
    pub class_weights: [f64; CLASSES],
    pub batch_size: usize,
    pub momentum_mode: Momentum,
    pub momentum: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Epochs over which the rate decays from `lr_start` to `lr_end`; 0
    /// means the configured epochs of both phases. Reduced runs keep the
    /// full-length schedule and cover its beginning.
    pub lr_decay_epochs: usize,
    /// Validation patches drawn (balanced) from the held-out volumes.
    pub val_patches: usize,
    /// Fraction of volumes held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
    /// Multiplies every patch count.
    pub desk_scale: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase1_patches: 200_000,
            phase1_epochs: 20,
            phase2_patches: 30_000,
            phase2_epochs: 5,
            class_weights: [8.0, 1.0, 2.0, 1.0, 1.0],
            batch_size: 128,
            momentum_mode: Momentum::Nesterov,
            momentum: 0.9,
            lr_start: 0.01,
            lr_end: 1e-6,
            lr_decay_epochs: 25,
            val_patches: 2_000,
            val_fraction: 0.2,
            seed: 1,
            desk_scale: 1.0,
            model: ModelConfig::default(),
        }
    }
}

fn scaled(count: usize, scale: f64) -> usize {
    ((count as f64 * scale).round() as usize).max(1)
}

impl TrainConfig {
    pub fn phase1_count(&self) -> usize {
        scaled(self.phase1_patches, self.desk_scale)
    }

    pub fn phase2_count(&self) -> usize {
        scaled(self.phase2_patches, self.desk_scale)
    }

    pub fn val_count(&self) -> usize {
        scaled(self.val_patches, self.desk_scale)
    }

    pub fn schedule(&self) -> LrSchedule {
        let epochs = match self.lr_decay_epochs {
            0 => self.phase1_epochs + self.phase2_epochs,
            n => n,
        };
        LrSchedule { start: self.lr_start, end: self.lr_end, epochs }
    }

    pub fn phase2_loss(&self) -> Result<LossConfig> {
        LossConfig::with_weights(self.class_weights.iter().copied().enumerate())
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("phase1_patches", self.phase1_patches),
            ("phase1_epochs", self.phase1_epochs),
            ("phase2_patches", self.phase2_patches),
            ("phase2_epochs", self.phase2_epochs),
            ("batch_size", self.batch_size),
            ("val_patches", self.val_patches),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if !(self.desk_scale > 0.0 && self.desk_scale.is_finite()) {
            return Err(Error::Config(format!("desk_scale must be positive, got {}", self.desk_scale)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        self.phase2_loss().map_err(|e| Error::Config(e.to_string()))?;
        self.schedule().validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "phase1_patches" => self.phase1_patches = parse(key, value)?,
            "phase1_epochs" => self.phase1_epochs = parse(key, value)?,
            "phase2_patches" => self.phase2_patches = parse(key, value)?,
            "phase2_epochs" => self.phase2_epochs = parse(key, value)?,
            "class_weights" => {
                let parts: Vec<f64> = value.split(',').map(|v| parse(key, v.trim())).collect::<Result<_>>()?;
                self.class_weights = parts
                    .try_into()
                    .map_err(|_| Error::Config(format!("class_weights needs {CLASSES} values, got {value:?}")))?;
            }
            "batch_size" => self.batch_size = parse(key, value)?,
            "momentum_mode" => {
                self.momentum_mode = match value {
                    "plain" => Momentum::Plain,
                    "classical" => Momentum::Classical,
                    "nesterov" => Momentum::Nesterov,
                    _ => return Err(Error::Config(format!("momentum_mode: expected plain, classical or nesterov, got {value:?}"))),
                }
            }
            "momentum" => self.momentum = parse(key, value)?,
            "lr_start" => self.lr_start = parse(key, value)?,
            "lr_end" => self.lr_end = parse(key, value)?,
            "lr_decay_epochs" => self.lr_decay_epochs = parse(key, value)?,
            "val_patches" => self.val_patches = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "desk_scale" => self.desk_scale = parse(key, value)?,
            _ => self.model.set(key, value)?,
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&std::fs::read_to_string(path)?)
    }

    /// Every key with its current value, model keys last.
    pub fn to_kv(&self) -> String {
        let mode = match self.momentum_mode {
            Momentum::Plain => "plain",
            Momentum::Classical => "classical",
            Momentum::Nesterov => "nesterov",
        };
        let weights: Vec<String> = self.class_weights.iter().map(|w| format!("{w:?}")).collect();
        format!(
            "phase1_patches={}\nphase1_epochs={}\nphase2_patches={}\nphase2_epochs={}\nclass_weights={}\n\
             batch_size={}\nmomentum_mode={mode}\nmomentum={:?}\nlr_start={:?}\nlr_end={:?}\nlr_decay_epochs={}\n\
             val_patches={}\nval_fraction={:?}\nseed={}\ndesk_scale={:?}\n{}",
            self.phase1_patches,
            self.phase1_epochs,
            self.phase2_patches,
            self.phase2_epochs,
            weights.join(","),
            self.batch_size,
            self.momentum,
            self.lr_start,
            self.lr_end,
            self.lr_decay_epochs,
            self.val_patches,
            self.val_fraction,
            self.seed,
            self.desk_scale,
            self.model.to_kv()
        )
    }
}

/// Seeded split of `n` volumes into training and validation indices.
/// Holds out `round(n * fraction)` volumes, at least one when `n >= 2`
/// and the fraction is positive.
pub fn split_volumes(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(param_err!("no volumes to split"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    crate::rng::Rng::new(seed).shuffle(&mut idx);
    let mut held = (n as f64 * fraction).round() as usize;
    if fraction > 0.0 && n >= 2 {
        held = held.clamp(1, n - 1);
    }
    let val = idx.split_off(n - held);
    idx.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    Ok((idx, val))
}
