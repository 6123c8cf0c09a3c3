use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{invalid, shape_mismatch, Result};
use crate::grid::ImageGrid;
use crate::projector::{Sinogram, SystemMatrix};

use super::{apcm, scm, NetConfig};

/// Parameter allocation with a seeded generator; names are stable so
/// checkpoints and mode comparisons can address tensors directly.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    /// 1x1 conv `ci -> co` with fan-in scaled uniform weights and zero bias.
    pub fn pointwise(&mut self, name: &str, co: usize, ci: usize) {
        let w = self.uniform(&[co, ci], 1.0 / (ci as f64).sqrt());
        self.store.add(format!("{name}.weight"), w);
        self.store.add(format!("{name}.bias"), Tensor::zeros(&[co]));
    }

    /// 1x1 conv without bias, for layers followed by a normalization.
    pub fn pointwise_unbiased(&mut self, name: &str, co: usize, ci: usize) {
        let w = self.uniform(&[co, ci], 1.0 / (ci as f64).sqrt());
        self.store.add(format!("{name}.weight"), w);
    }

    /// 1x1 conv whose output starts at exactly zero.
    pub fn zero_pointwise(&mut self, name: &str, co: usize, ci: usize) {
        self.store.add(format!("{name}.weight"), Tensor::zeros(&[co, ci]));
        self.store.add(format!("{name}.bias"), Tensor::zeros(&[co]));
    }

    pub fn depthwise(&mut self, name: &str, c: usize, k: usize) {
        let w = self.uniform(&[c, k, k], 1.0 / k as f64);
        self.store.add(format!("{name}.weight"), w);
        self.store.add(format!("{name}.bias"), Tensor::zeros(&[c]));
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) {
        self.store.add(name.to_string(), Tensor::full(shape, value));
    }
}

/// Graph construction against a parameter store.
pub(crate) struct Fwd<'a> {
    pub g: &'a mut Graph,
    pub store: &'a ParamStore,
}

impl Fwd<'_> {
    pub fn p(&mut self, name: &str) -> Var {
        let id = self
            .store
            .id(name)
            .unwrap_or_else(|| panic!("parameter `{name}` was never allocated"));
        self.g.param(self.store, id)
    }

    pub fn pointwise(&mut self, x: Var, name: &str) -> Var {
        let w = self.p(&format!("{name}.weight"));
        let b = self.p(&format!("{name}.bias"));
        self.g.conv2d_pointwise(x, w, Some(b))
    }

    pub fn pointwise_unbiased(&mut self, x: Var, name: &str) -> Var {
        let w = self.p(&format!("{name}.weight"));
        self.g.conv2d_pointwise(x, w, None)
    }

    pub fn depthwise(&mut self, x: Var, name: &str, dilation: usize) -> Var {
        let w = self.p(&format!("{name}.weight"));
        let b = self.p(&format!("{name}.bias"));
        self.g.conv2d_depthwise(x, w, dilation, Some(b))
    }

    /// Two-layer residual feed-forward block `h + W2 gelu(W1 h)`.
    pub fn ffn(&mut self, h: Var, name: &str) -> Var {
        let a = self.pointwise(h, &format!("{name}.in"));
        let a = self.g.gelu(a);
        let b = self.pointwise(a, &format!("{name}.out"));
        self.g.add(h, b)
    }

    /// `[C, H, W]` real tensor as a `[2, C, H, W]` complex one.
    pub fn complexify(&mut self, x: Var) -> Var {
        let s = self.g.shape(x).to_vec();
        let mut s4 = vec![1];
        s4.extend_from_slice(&s);
        let re = self.g.reshape(x, &s4);
        let im = self.g.constant(Tensor::zeros(&s4));
        self.g.concat(&[re, im], 0)
    }

    /// Real part of a `[2, C, H, W]` tensor as `[C, H, W]`.
    pub fn real_part(&mut self, x: Var) -> Var {
        let s = self.g.shape(x)[1..].to_vec();
        let re = self.g.narrow(x, 0, 0, 1);
        self.g.reshape(re, &s)
    }

    pub fn imag_part(&mut self, x: Var) -> Var {
        let s = self.g.shape(x)[1..].to_vec();
        let im = self.g.narrow(x, 0, 1, 1);
        self.g.reshape(im, &s)
    }
}

pub(crate) fn ffn_init(init: &mut Init, name: &str, c: usize) {
    init.pointwise(&format!("{name}.in"), 2 * c, c);
    init.zero_pointwise(&format!("{name}.out"), c, 2 * c);
}

/// Measurement-side quantities for one sinogram.
#[derive(Clone)]
pub struct NetInput {
    pub a: Arc<SystemMatrix>,
    /// Backprojection of the dose-normalized counts, `A^T (y / scale)`.
    pub backprojection: Tensor,
    /// `A^T (y / scale) / A^T A 1`, exact for flat activity: the network's
    /// starting image.
    pub normalized: Tensor,
    /// Diagonal of `A^T A 1`, the separable majorizer of the normal operator.
    pub normal_diag: Tensor,
}

impl NetInput {
    /// `count_scale` converts activity to expected counts (dose fraction
    /// times full-dose scale).
    pub fn new(a: Arc<SystemMatrix>, y: &Sinogram, count_scale: f64) -> Result<Self> {
        if (y.n_angles, y.n_bins) != (a.n_angles(), a.n_bins()) {
            return Err(shape_mismatch(
                format!("sinogram {}", a.sinogram_shape()),
                format!("sinogram {}", y.shape_string()),
            ));
        }
        y.ensure_nonnegative()?;
        if !(count_scale > 0.0 && count_scale.is_finite()) {
            return Err(invalid(format!("count scale must be positive, got {count_scale}")));
        }
        let (w, h) = a.image_dims();
        let scaled: Vec<f64> = y.counts.iter().map(|c| c / count_scale).collect();
        let mut bp = vec![0.0; a.n_pixels()];
        a.backproject_raw(&scaled, &mut bp);
        let mut a1 = vec![0.0; a.n_rays()];
        a.forward_raw(&vec![1.0; a.n_pixels()], &mut a1);
        let mut diag = vec![0.0; a.n_pixels()];
        a.backproject_raw(&a1, &mut diag);
        let normalized = bp
            .iter()
            .zip(&diag)
            .map(|(b, d)| if *d > 0.0 { b / d } else { 0.0 })
            .collect();
        Ok(Self {
            backprojection: Tensor::new(vec![1, h, w], bp)?,
            normalized: Tensor::new(vec![1, h, w], normalized)?,
            normal_diag: Tensor::new(vec![1, h, w], diag)?,
            a,
        })
    }

    pub fn image_dims(&self) -> (usize, usize) {
        self.a.image_dims()
    }
}

/// Graph handles of one splitting stage.
#[derive(Clone, Copy, Debug)]
pub struct StageVars {
    pub x: Var,
    pub z: Var,
    pub u_prev: Var,
    pub u: Var,
    pub mu: Var,
}

pub struct ForwardTrace {
    pub output: Var,
    pub start: Var,
    pub stages: Vec<StageVars>,
    /// `|x - z|_2` after each stage.
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub image: ImageGrid,
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierPet {
    pub config: NetConfig,
    pub params: ParamStore,
}

impl FourierPet {
    /// Freshly initialized network: every correction path starts at zero, so
    /// the network returns its starting image until trained.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        if config.share_mu {
            init.constant("mu", &[1], 1.0);
        }
        for k in 0..config.stages {
            scm::init(&mut init, &config, k);
            apcm::init(&mut init, &config, k);
            if !config.share_mu {
                init.constant(&format!("stage{k}.mu"), &[1], 1.0);
            }
        }
        Ok(Self { config, params: store })
    }

    /// Wraps a loaded parameter table after checking it has exactly the
    /// tensors this configuration allocates.
    pub fn from_params(config: NetConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        for (_, p) in reference.params.iter() {
            let loaded = params
                .by_name(&p.name)
                .ok_or_else(|| invalid(format!("checkpoint lacks parameter `{}`", p.name)))?;
            if loaded.value.shape() != p.value.shape() {
                return Err(shape_mismatch(
                    format!("{} {:?}", p.name, p.value.shape()),
                    format!("{:?}", loaded.value.shape()),
                ));
            }
        }
        if params.len() != reference.params.len() {
            return Err(invalid(format!(
                "checkpoint has {} parameters, configuration expects {}",
                params.len(),
                reference.params.len()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn mu_name(&self, stage: usize) -> String {
        if self.config.share_mu {
            "mu".into()
        } else {
            format!("stage{stage}.mu")
        }
    }

    pub fn mu_values(&self) -> Vec<f64> {
        let names: Vec<String> = if self.config.share_mu {
            vec!["mu".into()]
        } else {
            (0..self.config.stages).map(|k| self.mu_name(k)).collect()
        };
        names
            .iter()
            .map(|n| self.params.by_name(n).unwrap().value.data()[0])
            .collect()
    }

    pub fn forward(&self, g: &mut Graph, input: &NetInput) -> ForwardTrace {
        let mut f = Fwd { g, store: &self.params };
        let b = f.g.constant(input.normalized.clone());
        let bp = f.g.constant(input.backprojection.clone());
        let precond = f.g.constant(Tensor::new(
            input.normal_diag.shape().to_vec(),
            input
                .normal_diag
                .data()
                .iter()
                .map(|d| 1.0 / (d + self.config.rho))
                .collect(),
        )
        .unwrap());
        let mut z = b;
        let mut u = f.g.constant(Tensor::zeros(input.normalized.shape()));
        let mut stages = Vec::with_capacity(self.config.stages);
        let mut residuals = Vec::with_capacity(self.config.stages);
        for k in 0..self.config.stages {
            let r = f.g.sub(z, u);
            let x = scm::forward(&mut f, &self.config, k, &input.a, b, bp, precond, r);
            let v = f.g.add(x, u);
            let z_next = apcm::forward(&mut f, &self.config, k, v);
            let mu = f.p(&self.mu_name(k));
            let gap = f.g.sub(x, z_next);
            let step = f.g.mul_scalar(gap, mu);
            let u_next = f.g.add(u, step);
            residuals.push(f.g.data(gap).iter().map(|d| d * d).sum::<f64>().sqrt());
            stages.push(StageVars {
                x,
                z: z_next,
                u_prev: u,
                u: u_next,
                mu,
            });
            z = z_next;
            u = u_next;
        }
        ForwardTrace {
            output: stages.last().map(|s| s.x).unwrap_or(b),
            start: b,
            stages,
            residuals,
        }
    }

    pub fn reconstruct(&self, input: &NetInput) -> Result<Reconstruction> {
        let mut g = Graph::inference();
        let trace = self.forward(&mut g, input);
        Ok(Reconstruction {
            image: g.value(trace.output).to_image()?,
            residuals: trace.residuals,
        })
    }
}
