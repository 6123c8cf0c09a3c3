//! Training sweeps over one design axis: stage count, block depth, loss
//! composition or APCM band targeting. Every variant is trained from the same
//! seed on the same split and scored on the same held-out split.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::analysis::report::fmt_metric;
use crate::analysis::Table;
use crate::error::{invalid, Error, Result};
use crate::io::RunConfig;
use crate::net::{train, FourierPet, TrainingPair};
use crate::projector::SystemMatrix;
use crate::study::{self, Sample, SplitScore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    Stages,
    Depth,
    Loss,
    ApcmMode,
}

impl Sweep {
    pub fn name(self) -> &'static str {
        match self {
            Sweep::Stages => "K",
            Sweep::Depth => "N",
            Sweep::Loss => "loss",
            Sweep::ApcmMode => "apcm-mode",
        }
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" | "stages" => Ok(Sweep::Stages),
            "N" | "n" | "depth" => Ok(Sweep::Depth),
            "loss" => Ok(Sweep::Loss),
            "apcm-mode" | "apcm_mode" => Ok(Sweep::ApcmMode),
            _ => Err(invalid(format!("unknown sweep `{s}` (expected K, N, loss or apcm-mode)"))),
        }
    }
}

/// One configuration of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: String,
    pub config: RunConfig,
}

/// The variants of `sweep`, derived from `base`. The loss sweep keeps the
/// base weights of the enabled terms and zeroes the others.
pub fn variants(sweep: Sweep, base: &RunConfig) -> Result<Vec<Variant>> {
    let with = |label: String, f: &dyn Fn(&mut RunConfig)| {
        let mut config = base.clone();
        f(&mut config);
        Variant { label, config }
    };
    let out = match sweep {
        Sweep::Stages => base
            .ablate_k()?
            .into_iter()
            .map(|k| with(format!("K={k}"), &|c| c.stages = k))
            .collect(),
        Sweep::Depth => base
            .ablate_n()?
            .into_iter()
            .map(|n| with(format!("N={n}"), &|c| c.depth = n))
            .collect(),
        Sweep::Loss => [
            ("smooth_l1", false, false),
            ("smooth_l1+freq", false, true),
            ("smooth_l1+ssim", true, false),
            ("smooth_l1+ssim+freq", true, true),
        ]
        .into_iter()
        .map(|(label, ssim, freq)| {
            with(label.to_string(), &|c| {
                if !ssim {
                    c.loss_ssim = 0.0;
                }
                if !freq {
                    c.loss_freq = 0.0;
                }
            })
        })
        .collect(),
        Sweep::ApcmMode => ["targeted", "full_band"]
            .into_iter()
            .map(|m| with(m.to_string(), &|c| c.apcm_mode = m.to_string()))
            .collect(),
    };
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub parameters: usize,
    pub final_loss: f64,
    pub score: SplitScore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub sweep: Sweep,
    pub rows: Vec<AblationRow>,
    /// OSEM on the same test split, for reference.
    pub baseline: SplitScore,
}

impl AblationResult {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&[self.sweep.name(), "params", "final_loss", "psnr_db", "ssim", "rmse"]);
        let mut push = |label: &str, params: String, loss: String, s: &SplitScore| {
            t.push(vec![
                label.to_string(),
                params,
                loss,
                fmt_metric(s.psnr),
                fmt_metric(s.ssim),
                fmt_metric(s.rmse),
            ]);
        };
        for r in &self.rows {
            push(&r.label, r.parameters.to_string(), fmt_metric(r.final_loss), &r.score);
        }
        push("osem", "-".into(), "-".into(), &self.baseline);
        t
    }

    pub fn all_finite(&self) -> bool {
        self.baseline.is_finite() && self.rows.iter().all(|r| r.score.is_finite() && r.final_loss.is_finite())
    }
}

/// Trains and scores every variant of `sweep`. `progress` receives one
/// line per finished variant.
pub fn run(
    a: &Arc<SystemMatrix>,
    base: &RunConfig,
    sweep: Sweep,
    train_samples: &[Sample],
    test_samples: &[Sample],
    mut progress: impl FnMut(&str),
) -> Result<AblationResult> {
    let pairs: Vec<TrainingPair> = train_samples
        .iter()
        .map(|s| s.training_pair(a))
        .collect::<Result<_>>()?;
    let baseline = study::score(&study::osem_images(a, test_samples, base)?, test_samples)?.0;
    let mut rows = Vec::new();
    for v in variants(sweep, base)? {
        let mut model = FourierPet::new(study::net_config(&v.config)?, v.config.seed)?;
        let report = train(&mut model, &pairs, &study::train_config(&v.config), |_| {})?;
        let score = study::score(&study::network_images(&model, a, test_samples)?, test_samples)?.0;
        let final_loss = report.epochs.last().map_or(f64::NAN, |e| e.mean_loss);
        progress(&format!(
            "{sweep} {}: psnr {:.3} dB, final loss {:.5}",
            v.label, score.psnr, final_loss
        ));
        rows.push(AblationRow {
            label: v.label,
            parameters: model.params.total_size(),
            final_loss,
            score,
        });
    }
    Ok(AblationResult { sweep, rows, baseline })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_variants_zero_disabled_terms() {
        let base = RunConfig::default();
        let v = variants(Sweep::Loss, &base).unwrap();
        assert_eq!(v.len(), 4);
        let w: Vec<_> = v
            .iter()
            .map(|v| (v.config.loss_smooth_l1, v.config.loss_ssim, v.config.loss_freq))
            .collect();
        assert_eq!(w[0], (0.5, 0.0, 0.0));
        assert_eq!(w[1], (0.5, 0.0, 0.01));
        assert_eq!(w[2], (0.5, 0.3, 0.0));
        assert_eq!(w[3], (0.5, 0.3, 0.01));
    }

    #[test]
    fn sweep_names_round_trip() {
        for s in [Sweep::Stages, Sweep::Depth, Sweep::Loss, Sweep::ApcmMode] {
            assert_eq!(s.name().parse::<Sweep>().unwrap(), s);
        }
        assert!("width".parse::<Sweep>().is_err());
        let base = RunConfig {
            ablate_k_values: "1,4".into(),
            ..RunConfig::default()
        };
        let k: Vec<_> = variants(Sweep::Stages, &base).unwrap().iter().map(|v| v.config.stages).collect();
        assert_eq!(k, vec![1, 4]);
    }

    #[test]
    fn tiny_apcm_sweep_runs() {
        let cfg = RunConfig {
            phantom_kind: "hot_spheres".into(),
            stages: 1,
            depth: 1,
            channels: 4,
            epochs: 1,
            batch_size: 2,
            n_train: 2,
            n_test: 1,
            ..RunConfig::default()
        };
        let a = Arc::new(study::projector(&cfg).unwrap());
        let train_s = study::train_split(&a, &cfg).unwrap();
        let test_s = study::test_split(&a, &cfg).unwrap();
        let mut lines = Vec::new();
        let r = run(&a, &cfg, Sweep::ApcmMode, &train_s, &test_s, |l| lines.push(l.to_string())).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(lines.len(), 2);
        assert!(r.all_finite());
        assert!(r.rows[1].parameters > r.rows[0].parameters);
        assert_eq!(r.table().rows.len(), 3);
    }
}
