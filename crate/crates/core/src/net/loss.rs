//! Training objective: weighted SmoothL1, SSIM and Fourier L1 terms.

use crate::autodiff::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub smooth_l1: f64,
    pub ssim: f64,
    pub freq: f64,
    pub smooth_l1_delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            smooth_l1: 0.5,
            ssim: 0.3,
            freq: 0.01,
            smooth_l1_delta: 1.0,
        }
    }
}

/// Unweighted term values of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub smooth_l1: f64,
    /// `1 - SSIM`.
    pub ssim: f64,
    pub freq: f64,
    pub total: f64,
}

/// `w1 SmoothL1 + w2 (1 - SSIM) + w3 mean|F(out) - F(gt)|`, the last
/// averaged over real and imaginary parts of every frequency. Terms with
/// zero weight are not built.
pub fn composite_loss(g: &mut Graph, out: Var, gt: Var, w: &LossWeights) -> (Var, LossTerms) {
    assert_eq!(g.shape(out), g.shape(gt), "loss: output and target shapes differ");
    let mut terms = LossTerms::default();
    let mut parts = Vec::new();
    if w.smooth_l1 != 0.0 {
        let l = g.smooth_l1(out, gt, w.smooth_l1_delta);
        terms.smooth_l1 = g.data(l)[0];
        parts.push(g.scale(l, w.smooth_l1));
    }
    if w.ssim != 0.0 {
        let s = g.ssim(out, gt);
        let one_minus = g.scale(s, -1.0);
        let one_minus = g.add_scalar(one_minus, 1.0);
        terms.ssim = g.data(one_minus)[0];
        parts.push(g.scale(one_minus, w.ssim));
    }
    if w.freq != 0.0 {
        let spec = |g: &mut Graph, x: Var| {
            let mut s = vec![1];
            s.extend_from_slice(g.shape(x));
            let re = g.reshape(x, &s);
            let im = g.constant(Tensor::zeros(&s));
            let c = g.concat(&[re, im], 0);
            g.fft2(c)
        };
        let fo = spec(g, out);
        let ft = spec(g, gt);
        let l = g.l1(fo, ft);
        terms.freq = g.data(l)[0];
        parts.push(g.scale(l, w.freq));
    }
    let total = match parts.split_first() {
        None => g.constant(Tensor::scalar(0.0)),
        Some((&first, rest)) => rest.iter().fold(first, |acc, &p| g.add(acc, p)),
    };
    terms.total = g.data(total)[0];
    (total, terms)
}
