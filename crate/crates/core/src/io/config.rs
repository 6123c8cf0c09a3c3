//! Flat run configuration read from `key = value` files. Unknown keys are
//! rejected so that typos do not silently fall back to defaults.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::keyvalue;

macro_rules! run_config {
    ($($field:ident : $ty:ty = $default:expr),* $(,)?) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $(pub $field: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($field: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            /// Sets one field from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($field) => self.$field = keyvalue::parse_value(key, value)?,)*
                    _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            pub fn pairs(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), self.$field.to_string())),*]
            }
        }
    };
}

run_config! {
    width: usize = 32,
    height: usize = 32,
    n_angles: usize = 32,
    n_bins: usize = 32,
    phantom_kind: String = "mixed".to_string(),
    dose_fraction: f64 = 0.1,
    ac_bias_strength: f64 = 0.3,
    ac_bias_scale: f64 = 8.0,
    full_count_mean: f64 = 50.0,
    seed: u64 = 0,
    mlem_iters: usize = 50,
    osem_subsets: usize = 8,
    osem_epochs: usize = 4,
    stages: usize = 3,
    depth: usize = 2,
    channels: usize = 16,
    rho: f64 = 0.1,
    apcm_mode: String = "targeted".to_string(),
    share_mu: bool = false,
    loss_smooth_l1: f64 = 0.5,
    loss_ssim: f64 = 0.3,
    loss_freq: f64 = 0.01,
    smooth_l1_delta: f64 = 1.0,
    lr_start: f64 = 1e-3,
    lr_end: f64 = 1e-5,
    beta1: f64 = 0.9,
    beta2: f64 = 0.999,
    weight_decay: f64 = 0.01,
    adam_eps: f64 = 1e-8,
    epochs: usize = 30,
    batch_size: usize = 4,
    n_train: usize = 64,
    n_test: usize = 16,
    n_radial_bands: usize = 8,
    ablate_k_values: String = "1,2,3".to_string(),
    ablate_n_values: String = "1,2,3".to_string(),
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in keyvalue::parse(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        keyvalue::render(&self.pairs())
    }

    pub fn ablate_k(&self) -> Result<Vec<usize>> {
        keyvalue::parse_list("ablate_k_values", &self.ablate_k_values)
    }

    pub fn ablate_n(&self) -> Result<Vec<usize>> {
        keyvalue::parse_list("ablate_n_values", &self.ablate_n_values)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("height", self.height),
            ("n_angles", self.n_angles),
            ("n_bins", self.n_bins),
            ("osem_subsets", self.osem_subsets),
            ("stages", self.stages),
            ("depth", self.depth),
            ("channels", self.channels),
            ("batch_size", self.batch_size),
            ("n_radial_bands", self.n_radial_bands),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{k}` must be positive")));
            }
        }
        if !(self.dose_fraction > 0.0 && self.dose_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "`dose_fraction` must lie in (0, 1], got {}",
                self.dose_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.ac_bias_strength) {
            return Err(Error::Config(format!(
                "`ac_bias_strength` must lie in [0, 1), got {}",
                self.ac_bias_strength
            )));
        }
        if self.osem_subsets > self.n_angles {
            return Err(Error::Config(format!(
                "`osem_subsets` ({}) exceeds `n_angles` ({})",
                self.osem_subsets, self.n_angles
            )));
        }
        self.ablate_k()?;
        self.ablate_n()?;
        Ok(())
    }
}
