//! Glue between a [`RunConfig`] and the pipeline: seeded dataset splits,
//! classical baselines at activity scale, network/trainer configuration and
//! split-level scoring.

use std::sync::Arc;

use serde::Serialize;

use crate::analysis::ImageMetrics;
use crate::autodiff::{AdamWConfig, CosineSchedule, Tensor};
use crate::error::{invalid, Result};
use crate::grid::ImageGrid;
use crate::io::manifest::LoadedPair;
use crate::io::RunConfig;
use crate::net::{FourierPet, LossWeights, NetConfig, NetInput, TrainConfig, TrainingPair};
use crate::projector::{build_parallel_projector, Sinogram, SystemMatrix};
use crate::recon::{mlem, osem};
use crate::simulator::{make_phantom, simulate_counts, Acquisition, DegradationConfig, Phantom, PhantomKind};

/// `phantom_kind` value that cycles through every phantom family.
pub const MIXED: &str = "mixed";

/// Offset between the phantom seeds of the training and test splits.
pub const TEST_SEED_OFFSET: u64 = 1 << 20;

const NOISE_SEED_OFFSET: u64 = 1 << 40;

/// One simulated phantom with its paired acquisitions.
#[derive(Clone, Debug)]
pub struct Sample {
    pub phantom: Phantom,
    pub degradation: DegradationConfig,
    pub acquisition: Acquisition,
}

impl From<LoadedPair> for Sample {
    fn from(pair: LoadedPair) -> Self {
        Self {
            degradation: pair.manifest.degradation,
            phantom: pair.phantom,
            acquisition: pair.acquisition,
        }
    }
}

impl Sample {
    /// Expected low-dose counts per unit line integral of activity.
    pub fn low_scale(&self) -> f64 {
        self.acquisition.count_scale * self.degradation.dose_fraction
    }

    pub fn net_input(&self, a: &Arc<SystemMatrix>) -> Result<NetInput> {
        NetInput::new(a.clone(), &self.acquisition.y_low, self.low_scale())
    }

    pub fn training_pair(&self, a: &Arc<SystemMatrix>) -> Result<TrainingPair> {
        Ok(TrainingPair {
            input: self.net_input(a)?,
            truth: Tensor::from_image(&self.phantom.activity),
        })
    }
}

pub fn phantom_kinds(name: &str) -> Result<Vec<PhantomKind>> {
    if name == MIXED {
        Ok(PhantomKind::ALL.to_vec())
    } else {
        Ok(vec![name.parse()?])
    }
}

pub fn projector(cfg: &RunConfig) -> Result<SystemMatrix> {
    build_parallel_projector((cfg.width, cfg.height), cfg.n_angles, cfg.n_bins)
}

pub fn degradation(cfg: &RunConfig, seed: u64) -> DegradationConfig {
    DegradationConfig {
        dose_fraction: cfg.dose_fraction,
        ac_bias_strength: cfg.ac_bias_strength,
        ac_bias_scale: cfg.ac_bias_scale,
        full_count_mean: cfg.full_count_mean,
        seed,
    }
}

/// `n` samples with phantom seeds `base + i`, where `base` mixes the config
/// seed with `offset`. Phantom families cycle when `phantom_kind` is
/// `mixed`.
pub fn simulate_split(a: &SystemMatrix, cfg: &RunConfig, n: usize, offset: u64) -> Result<Vec<Sample>> {
    let kinds = phantom_kinds(&cfg.phantom_kind)?;
    let base = cfg.seed.wrapping_mul(1 << 24).wrapping_add(offset);
    (0..n)
        .map(|i| {
            let seed = base.wrapping_add(i as u64);
            let phantom = make_phantom(kinds[i % kinds.len()], (cfg.width, cfg.height), seed)?;
            let degradation = degradation(cfg, seed.wrapping_add(NOISE_SEED_OFFSET));
            let acquisition = simulate_counts(a, &phantom, &degradation)?;
            Ok(Sample {
                phantom,
                degradation,
                acquisition,
            })
        })
        .collect()
}

pub fn train_split(a: &SystemMatrix, cfg: &RunConfig) -> Result<Vec<Sample>> {
    simulate_split(a, cfg, cfg.n_train, 0)
}

pub fn test_split(a: &SystemMatrix, cfg: &RunConfig) -> Result<Vec<Sample>> {
    simulate_split(a, cfg, cfg.n_test, TEST_SEED_OFFSET)
}

fn rescale(img: ImageGrid, scale: f64) -> Result<ImageGrid> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(invalid(format!("count scale must be positive, got {scale}")));
    }
    img.map(|v| v / scale)
}

/// OSEM image divided by `scale`, i.e. in activity units.
pub fn osem_image(a: &SystemMatrix, y: &Sinogram, scale: f64, cfg: &RunConfig) -> Result<ImageGrid> {
    rescale(osem(a, y, cfg.osem_epochs, cfg.osem_subsets, None)?, scale)
}

pub fn mlem_image(a: &SystemMatrix, y: &Sinogram, scale: f64, cfg: &RunConfig) -> Result<ImageGrid> {
    rescale(mlem(a, y, cfg.mlem_iters, None)?, scale)
}

pub fn net_config(cfg: &RunConfig) -> Result<NetConfig> {
    let net = NetConfig {
        stages: cfg.stages,
        depth: cfg.depth,
        channels: cfg.channels,
        rho: cfg.rho,
        apcm_mode: cfg.apcm_mode.parse()?,
        share_mu: cfg.share_mu,
        ..NetConfig::default()
    };
    net.validate()?;
    Ok(net)
}

pub fn loss_weights(cfg: &RunConfig) -> LossWeights {
    LossWeights {
        smooth_l1: cfg.loss_smooth_l1,
        ssim: cfg.loss_ssim,
        freq: cfg.loss_freq,
        smooth_l1_delta: cfg.smooth_l1_delta,
    }
}

pub fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        loss: loss_weights(cfg),
        optimizer: AdamWConfig {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            schedule: CosineSchedule {
                lr_start: cfg.lr_start,
                lr_end: cfg.lr_end,
                total_steps: 1,
            },
        },
        seed: cfg.seed,
    }
}

/// Mean metrics over a split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SplitScore {
    pub psnr: f64,
    pub ssim: f64,
    pub rmse: f64,
    pub n: usize,
}

impl SplitScore {
    pub fn is_finite(&self) -> bool {
        self.psnr.is_finite() && self.ssim.is_finite() && self.rmse.is_finite()
    }
}

/// Scores `images[i]` against the truth of `samples[i]`.
pub fn score(images: &[ImageGrid], samples: &[Sample]) -> Result<(SplitScore, Vec<ImageMetrics>)> {
    if images.len() != samples.len() || images.is_empty() {
        return Err(invalid(format!(
            "{} images for {} samples",
            images.len(),
            samples.len()
        )));
    }
    let per: Vec<ImageMetrics> = images
        .iter()
        .zip(samples)
        .map(|(img, s)| ImageMetrics::compute(img, &s.phantom.activity))
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let mean = |f: fn(&ImageMetrics) -> f64| per.iter().map(f).sum::<f64>() / n;
    let score = SplitScore {
        psnr: mean(|m| m.psnr),
        ssim: mean(|m| m.ssim),
        rmse: mean(|m| m.rmse),
        n: per.len(),
    };
    Ok((score, per))
}

pub fn osem_images(a: &SystemMatrix, samples: &[Sample], cfg: &RunConfig) -> Result<Vec<ImageGrid>> {
    samples
        .iter()
        .map(|s| osem_image(a, &s.acquisition.y_low, s.low_scale(), cfg))
        .collect()
}

pub fn network_images(model: &FourierPet, a: &Arc<SystemMatrix>, samples: &[Sample]) -> Result<Vec<ImageGrid>> {
    samples
        .iter()
        .map(|s| Ok(model.reconstruct(&s.net_input(a)?)?.image))
        .collect()
}
