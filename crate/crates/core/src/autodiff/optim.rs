use std::f64::consts::PI;

use crate::error::{invalid, Result};

use super::params::ParamStore;

/// Cosine annealing from `lr_start` at step 0 to `lr_end` at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub lr_start: f64,
    pub lr_end: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return self.lr_start;
        }
        let t = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.lr_end + 0.5 * (self.lr_start - self.lr_end) * (1.0 + (PI * t).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: CosineSchedule,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            schedule: CosineSchedule {
                lr_start: 1e-3,
                lr_end: 1e-5,
                total_steps: 1000,
            },
        }
    }
}

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: usize,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.config.schedule.lr(self.step)
    }

    /// Applies one update from the accumulated gradients.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if !store.grads_populated() {
            return Err(invalid("optimizer step before any backward pass"));
        }
        if self.m.len() != store.len() {
            return Err(invalid("optimizer state does not match the parameter set"));
        }
        let c = self.config;
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.requires_grad {
                continue;
            }
            for (((x, &g), m), v) in p.value.data_mut().iter_mut().zip(&p.grad).zip(m).zip(v) {
                *x *= 1.0 - lr * c.weight_decay;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};

    #[test]
    fn schedule_endpoints_and_monotone() {
        let s = CosineSchedule {
            lr_start: 1e-3,
            lr_end: 1e-5,
            total_steps: 100,
        };
        assert!((s.lr(0) - 1e-3).abs() < 1e-18);
        assert!((s.lr(100) - 1e-5).abs() < 1e-18);
        for t in 0..100 {
            assert!(s.lr(t + 1) <= s.lr(t));
        }
    }

    fn scalar_store(x: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("x", Tensor::scalar(x));
        store
    }

    fn set_grad(store: &mut ParamStore, g: f64) {
        // Route through a graph so the store sees a real backward pass.
        let id = store.id("x").unwrap();
        let mut graph = Graph::new();
        let x = graph.param(store, id);
        let y = graph.scale(x, g);
        graph.backward(y).unwrap();
        store.zero_grad();
        store.accumulate(&graph);
    }

    #[test]
    fn step_requires_gradients() {
        let mut store = scalar_store(1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &store);
        assert!(opt.step(&mut store).is_err());
    }

    #[test]
    fn zero_grad_without_decay_is_stationary() {
        let mut store = scalar_store(0.7);
        let mut cfg = AdamWConfig::default();
        cfg.weight_decay = 0.0;
        let mut opt = AdamW::new(cfg, &store);
        for _ in 0..5 {
            set_grad(&mut store, 0.0);
            opt.step(&mut store).unwrap();
        }
        assert_eq!(store.by_name("x").unwrap().value.data()[0], 0.7);
    }

    #[test]
    fn matches_hand_recurrence() {
        let mut cfg = AdamWConfig::default();
        cfg.schedule.total_steps = 10;
        cfg.weight_decay = 0.01;
        let mut store = scalar_store(0.5);
        let mut opt = AdamW::new(cfg, &store);
        let (mut x, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            set_grad(&mut store, 1.0);
            opt.step(&mut store).unwrap();
            let lr = cfg.schedule.lr(t - 1);
            x -= lr * 0.01 * x;
            m = 0.9 * m + 0.1;
            v = 0.999 * v + 0.001;
            let mh = m / (1.0 - 0.9f64.powi(t as i32));
            let vh = v / (1.0 - 0.999f64.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + 1e-8);
            let got = store.by_name("x").unwrap().value.data()[0];
            assert!((got - x).abs() < 1e-15, "step {t}: {got} vs {x}");
        }
    }
}
