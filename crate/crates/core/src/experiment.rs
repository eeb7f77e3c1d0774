//! End-to-end toy experiments shared by the CLI and the acceptance suite:
//! build the data, train, evaluate on held-out pairs, sweep SPA levels.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::io::{load_pair_directory, RunConfig};
use crate::metrics::MetricReport;
use crate::network::ModelWeights;
use crate::training::{evaluate, synthetic_pairs, train, LogEntry, PairSource, TrainOutcome};
use crate::Tensor;

/// Number and side length of the held-out pairs used by `ablate`.
pub const HELDOUT_COUNT: usize = 32;
pub const HELDOUT_SIZE: usize = 64;

/// Full-scale SIDD validation PSNR (dB) reported for SPA levels 0 to 4,
/// printed next to desk-scale ablation results for context.
pub const FULL_SCALE_LEVEL_PSNR: [f64; 5] = [39.24, 39.33, 39.47, 39.55, 39.57];

/// Sub-seeds for independent consumers of one run seed. They use ChaCha
/// streams far above the ones taken by per-slot batch generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedUse {
    Init,
    Pool,
    Heldout,
}

pub fn derive_seed(seed: u64, purpose: SeedUse) -> u64 {
    let stream = u64::MAX
        - match purpose {
            SeedUse::Init => 0,
            SeedUse::Pool => 1,
            SeedUse::Heldout => 2,
        };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

pub fn training_source(run: &RunConfig) -> Result<PairSource<f32>> {
    match &run.data.data_dir {
        Some(dir) => Ok(PairSource::Pairs(load_pair_directory(dir)?)),
        None => PairSource::synthetic(
            run.model.input_channels,
            run.data.pool_images,
            run.data.image_size,
            run.data.noise,
            derive_seed(run.train.seed, SeedUse::Pool),
        ),
    }
}

pub fn heldout_pairs(run: &RunConfig, count: usize, size: usize) -> Result<Vec<(Tensor<f32>, Tensor<f32>)>> {
    synthetic_pairs(
        run.model.input_channels,
        count,
        size,
        &run.data.noise,
        derive_seed(run.train.seed, SeedUse::Heldout),
    )
}

/// Initializes and trains the model described by `run`.
pub fn run_training(run: &RunConfig, on_step: impl FnMut(&LogEntry)) -> Result<TrainOutcome<f32>> {
    let weights = ModelWeights::init(&run.model, derive_seed(run.train.seed, SeedUse::Init))?;
    train(weights, &run.train, &training_source(run)?, on_step)
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub level: usize,
    pub noisy: MetricReport,
    pub denoised: MetricReport,
    pub weights: ModelWeights<f32>,
    pub log: Vec<LogEntry>,
    pub aborted: Option<String>,
}

/// Trains one model per SPA level with identical seeds, data and budget and
/// evaluates each on the same held-out pairs.
pub fn ablate(
    run: &RunConfig,
    levels: &[usize],
    heldout: &[(Tensor<f32>, Tensor<f32>)],
    mut progress: impl FnMut(usize, &LogEntry),
) -> Result<Vec<AblationRow>> {
    levels
        .iter()
        .map(|&level| {
            let mut cfg = run.clone();
            cfg.model.spa_level = level;
            let out = run_training(&cfg, |e| progress(level, e))?;
            let (noisy, denoised) = evaluate(&out.weights, heldout, 1.0)?;
            Ok(AblationRow {
                level,
                noisy,
                denoised,
                weights: out.weights,
                log: out.log,
                aborted: out.aborted,
            })
        })
        .collect()
}
