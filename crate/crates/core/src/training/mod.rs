//! Desk-scale training: MAE loss, Adam with a step schedule, dihedral
//! augmentation and synthetic structured noise.

mod adam;
mod augment;
mod data;
mod loss;
mod noise;

pub use adam::{adam_step, scheduled_lr, AdamHyper, AdamState};
pub use augment::{augment, flip_horizontal, rot90, Dihedral};
pub use data::{procedural_image, synthetic_pairs, PairSource};
pub use loss::mae_loss;
pub use noise::{synth_noise, synth_pair, NoiseModel};

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim, MetricReport};
use crate::network::{denoise_image, ModelWeights};
use crate::params::Parameters;
use crate::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// The learning rate halves after every `halve_every` iterations.
    pub halve_every: usize,
    pub patch_size: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            learning_rate: 1e-3,
            halve_every: 500,
            patch_size: 32,
            batch_size: 4,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("invalid training config: {m}")));
        if self.halve_every == 0 || self.patch_size == 0 {
            return bad("halve_every and patch_size must be positive");
        }
        if self.batch_size == 0 || self.batch_size > u16::MAX as usize {
            return bad("batch_size must be in 1..=65535");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "halve_every = {}", self.halve_every);
        let _ = writeln!(s, "patch_size = {}", self.patch_size);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "augment = {}", self.augment);
        s
    }

    /// Applies one `key = value` setting; `false` for foreign keys.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        fn parse<V: std::str::FromStr>(v: &str) -> std::result::Result<V, String>
        where
            V::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| format!("`{v}`: {e}"))
        }
        match key {
            "iterations" => self.iterations = parse(value)?,
            "learning_rate" => self.learning_rate = parse(value)?,
            "halve_every" => self.halve_every = parse(value)?,
            "patch_size" => self.patch_size = parse(value)?,
            "batch_size" => self.batch_size = parse(value)?,
            "seed" => self.seed = parse(value)?,
            "augment" => self.augment = parse(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
}

impl LogEntry {
    /// `iteration<TAB>lr<TAB>loss`
    pub fn line(&self) -> String {
        format!("{}\t{:e}\t{:.9e}", self.iteration, self.lr, self.loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Weights after the last completed iteration.
    pub weights: ModelWeights<T>,
    pub log: Vec<LogEntry>,
    /// Set when training stopped early on a non-finite loss or gradient.
    pub aborted: Option<String>,
}

/// Generator for batch slot `slot` of iteration `iteration`: the global
/// seed picks the key, `(iteration, slot)` the stream.
pub fn slot_rng(seed: u64, iteration: usize, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 16) | slot as u64);
    rng
}

/// Mean MAE over one batch and the matching averaged gradient.
pub fn batch_gradient<T: Scalar>(
    w: &ModelWeights<T>,
    batch: &[(Tensor<T>, Tensor<T>)],
) -> Result<(f64, ModelWeights<T>)> {
    let mut grads = w.zeros_like();
    let mut loss = 0.0;
    let inv = T::one() / T::of(batch.len() as f64);
    for (clean, noisy) in batch {
        let (pred, cache) = w.forward_cached(noisy)?;
        let (l, g) = mae_loss(&pred, clean)?;
        loss += l.to_f64_lossless();
        w.backward(&cache, &g.scale(inv), &mut grads)?;
    }
    Ok((loss / batch.len() as f64, grads))
}

/// Trains `weights` on patches from `source`. `on_step` sees every log entry
/// as it is produced. Runs are bitwise reproducible for a fixed seed.
pub fn train<T: Scalar>(
    weights: ModelWeights<T>,
    cfg: &TrainConfig,
    source: &PairSource<T>,
    mut on_step: impl FnMut(&LogEntry),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    source.check_patch_size(cfg.patch_size)?;
    let channels = weights.config.input_channels;
    if source.channels() != channels {
        return Err(Error::Invalid(format!(
            "model expects {channels} channels but the training images have {}",
            source.channels()
        )));
    }
    let align = weights.config.alignment();
    if cfg.patch_size % align != 0 {
        return Err(Error::Invalid(format!(
            "patch size {} is not a multiple of the model alignment {align}",
            cfg.patch_size
        )));
    }
    let mut w = weights;
    let hyper = AdamHyper {
        lr: cfg.learning_rate,
        ..AdamHyper::default()
    };
    let mut state = AdamState::new(&w, hyper);
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch = (0..cfg.batch_size)
            .map(|slot| source.sample(cfg.patch_size, cfg.augment, &mut slot_rng(cfg.seed, it, slot)))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = batch_gradient(&w, &batch)?;
        let lr = scheduled_lr(cfg.learning_rate, cfg.halve_every, it);
        if !loss.is_finite() {
            return Ok(TrainOutcome {
                weights: w,
                log,
                aborted: Some(format!("non-finite loss at iteration {it}")),
            });
        }
        state.hyper.lr = lr;
        let mut next = w.clone();
        if let Err(e) = adam_step(&mut next, &grads, &mut state) {
            return Ok(TrainOutcome {
                weights: w,
                log,
                aborted: Some(format!("iteration {it}: {e}")),
            });
        }
        if let Some((name, _)) = next.named_tensors().into_iter().find(|(_, t)| !t.is_finite()) {
            return Ok(TrainOutcome {
                weights: w,
                log,
                aborted: Some(format!("iteration {it}: update made `{name}` non-finite")),
            });
        }
        w = next;
        let entry = LogEntry { iteration: it, lr, loss };
        on_step(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome {
        weights: w,
        log,
        aborted: None,
    })
}

/// Metrics of the noisy inputs and of the denoised outputs against the
/// clean references.
pub fn evaluate<T: Scalar>(
    w: &ModelWeights<T>,
    pairs: &[(Tensor<T>, Tensor<T>)],
    peak: f64,
) -> Result<(MetricReport, MetricReport)> {
    let mut noisy = Vec::with_capacity(pairs.len());
    let mut denoised = Vec::with_capacity(pairs.len());
    for (clean, input) in pairs {
        let out = denoise_image(input, w)?;
        noisy.push((psnr(input, clean, peak)?, ssim(input, clean, peak)?));
        denoised.push((psnr(&out, clean, peak)?, ssim(&out, clean, peak)?));
    }
    Ok((MetricReport::new(noisy), MetricReport::new(denoised)))
}
