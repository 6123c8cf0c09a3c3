use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{AdamW, AdamWConfig, Graph, Tensor};
use crate::error::{invalid, Result};

use super::loss::{composite_loss, LossTerms, LossWeights};
use super::model::{FourierPet, NetInput};

/// One supervised example: measurement-side input and target activity.
#[derive(Clone)]
pub struct TrainingPair {
    pub input: NetInput,
    pub truth: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossWeights,
    /// `schedule.total_steps` is overwritten with the actual step count.
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            loss: LossWeights::default(),
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub smooth_l1: f64,
    pub one_minus_ssim: f64,
    pub freq_l1: f64,
    pub lr: f64,
    /// Dual step sizes after this update.
    pub mu: Vec<f64>,
    /// Batch-mean `|x - z|_2` per stage.
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_residuals: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub optimizer: AdamW,
}

/// Evaluates the loss of the current parameters on one pair without
/// touching gradients.
pub fn evaluate_loss(model: &FourierPet, pair: &TrainingPair, weights: &LossWeights) -> LossTerms {
    let mut g = Graph::inference();
    let trace = model.forward(&mut g, &pair.input);
    let gt = g.constant(pair.truth.clone());
    composite_loss(&mut g, trace.output, gt, weights).1
}

/// AdamW with cosine decay over `epochs` passes of shuffled mini-batches.
/// `on_step` sees every optimizer step; the run is deterministic in
/// `cfg.seed`.
pub fn train(
    model: &mut FourierPet,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainReport> {
    if pairs.is_empty() {
        return Err(invalid("training needs at least one pair"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(invalid("epochs and batch_size must be positive"));
    }
    let dims = pairs[0].input.image_dims();
    if let Some(bad) = pairs.iter().find(|p| p.input.image_dims() != dims) {
        return Err(crate::error::shape_mismatch(
            format!("image {}x{}", dims.0, dims.1),
            format!("image {}x{}", bad.input.image_dims().0, bad.input.image_dims().1),
        ));
    }
    let batches_per_epoch = pairs.len().div_ceil(cfg.batch_size);
    let mut opt_cfg = cfg.optimizer;
    opt_cfg.schedule.total_steps = cfg.epochs * batches_per_epoch;
    let mut opt = AdamW::new(opt_cfg, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let stages = model.config.stages;
    let mut steps = Vec::new();
    let mut epochs = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_resid = vec![0.0; stages];
        for batch in order.chunks(cfg.batch_size) {
            model.params.zero_grad();
            let mut terms = LossTerms::default();
            let mut resid = vec![0.0; stages];
            let share = 1.0 / batch.len() as f64;
            for &i in batch {
                let pair = &pairs[i];
                let mut g = Graph::new();
                let trace = model.forward(&mut g, &pair.input);
                let gt = g.constant(pair.truth.clone());
                let (loss, t) = composite_loss(&mut g, trace.output, gt, &cfg.loss);
                let scaled = g.scale(loss, share);
                g.backward(scaled)?;
                model.params.accumulate(&g);
                terms.total += t.total * share;
                terms.smooth_l1 += t.smooth_l1 * share;
                terms.ssim += t.ssim * share;
                terms.freq += t.freq * share;
                for (r, v) in resid.iter_mut().zip(&trace.residuals) {
                    *r += v * share;
                }
            }
            let lr = opt.current_lr();
            opt.step(&mut model.params)?;
            let rec = StepRecord {
                step: steps.len(),
                epoch,
                loss: terms.total,
                smooth_l1: terms.smooth_l1,
                one_minus_ssim: terms.ssim,
                freq_l1: terms.freq,
                lr,
                mu: model.mu_values(),
                residuals: resid.clone(),
            };
            on_step(&rec);
            epoch_loss += terms.total * batch.len() as f64;
            for (e, r) in epoch_resid.iter_mut().zip(&resid) {
                *e += r * batch.len() as f64;
            }
            steps.push(rec);
        }
        let n = pairs.len() as f64;
        epochs.push(EpochRecord {
            epoch,
            mean_loss: epoch_loss / n,
            mean_residuals: epoch_resid.iter().map(|r| r / n).collect(),
            mu: model.mu_values(),
        });
    }
    Ok(TrainReport {
        steps,
        epochs,
        optimizer: opt,
    })
}
