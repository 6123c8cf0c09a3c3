//! The unrolled spectral reconstruction network: K splitting stages, each a
//! learned x-update (spatial-spectral consistency), a learned z-update
//! (amplitude-phase correction in wavelet sub-bands) and a dual update with a
//! learnable step.

mod apcm;
mod loss;
mod model;
mod scm;
mod train;

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

pub use loss::{composite_loss, LossTerms, LossWeights};
pub use model::{FourierPet, ForwardTrace, NetInput, Reconstruction};
pub use train::{evaluate_loss, train, EpochRecord, StepRecord, TrainConfig, TrainReport, TrainingPair};

/// Which sub-bands receive the feed-forward corrections.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApcmMode {
    /// Amplitude FFN on LL only, phase FFN on HH only.
    Targeted,
    /// Both FFNs on every sub-band.
    FullBand,
}

impl ApcmMode {
    pub fn name(self) -> &'static str {
        match self {
            ApcmMode::Targeted => "targeted",
            ApcmMode::FullBand => "full_band",
        }
    }
}

impl fmt::Display for ApcmMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ApcmMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "targeted" => Ok(ApcmMode::Targeted),
            "full_band" | "full-band" => Ok(ApcmMode::FullBand),
            _ => Err(invalid(format!("unknown apcm mode `{s}` (expected targeted or full_band)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub stages: usize,
    pub depth: usize,
    pub channels: usize,
    /// Penalty weight of the splitting; enters the x-update preconditioner.
    pub rho: f64,
    /// Prior weights of the amplitude and phase terms. They have no runtime
    /// role: the learned z-update realizes both priors implicitly.
    pub lambda_a: f64,
    pub lambda_p: f64,
    pub apcm_mode: ApcmMode,
    pub share_mu: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            stages: 3,
            depth: 2,
            channels: 16,
            rho: 0.1,
            lambda_a: 1.0,
            lambda_p: 1.0,
            apcm_mode: ApcmMode::Targeted,
            share_mu: false,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.depth == 0 || self.channels == 0 {
            return Err(invalid("stages, depth and channels must be positive"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(invalid(format!("rho must be positive, got {}", self.rho)));
        }
        Ok(())
    }

    /// Compact `key=value;...` description stored in checkpoints.
    pub fn to_metadata(&self) -> String {
        format!(
            "stages={};depth={};channels={};rho={:?};lambda_a={:?};lambda_p={:?};apcm_mode={};share_mu={}",
            self.stages,
            self.depth,
            self.channels,
            self.rho,
            self.lambda_a,
            self.lambda_p,
            self.apcm_mode,
            self.share_mu
        )
    }

    pub fn from_metadata(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for item in text.split(';').filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad checkpoint metadata `{item}`")))?;
            let num = |v: &str| -> Result<f64> {
                v.parse().map_err(|_| Error::Format(format!("bad value for {k}: `{v}`")))
            };
            let int = |v: &str| -> Result<usize> {
                v.parse().map_err(|_| Error::Format(format!("bad value for {k}: `{v}`")))
            };
            match k {
                "stages" => cfg.stages = int(v)?,
                "depth" => cfg.depth = int(v)?,
                "channels" => cfg.channels = int(v)?,
                "rho" => cfg.rho = num(v)?,
                "lambda_a" => cfg.lambda_a = num(v)?,
                "lambda_p" => cfg.lambda_p = num(v)?,
                "apcm_mode" => cfg.apcm_mode = v.parse()?,
                "share_mu" => {
                    cfg.share_mu = v
                        .parse()
                        .map_err(|_| Error::Format(format!("bad value for share_mu: `{v}`")))?
                }
                _ => return Err(Error::Format(format!("unknown checkpoint metadata key `{k}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests;
