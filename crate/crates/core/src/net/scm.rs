//! x-update: a learned surrogate for solving the penalized normal equation
//! `(A^T A + rho I) x = A^T y + rho r`, with `r = z - u`.
//!
//! Inputs are the normalized backprojection, `r`, and the preconditioned
//! normal-equation residual at `r`. A dual 3x3 / 5x5 separable-conv stem
//! feeds `depth` spectral state-space blocks; a zero-initialized head adds
//! the correction to `r`.

use std::sync::Arc;

use crate::autodiff::{Tensor, Var};
use crate::projector::SystemMatrix;

use super::model::{Fwd, Init};
use super::NetConfig;

const STEM_INPUTS: usize = 3;

pub(crate) fn init(init: &mut Init, cfg: &NetConfig, k: usize) {
    let c = cfg.channels;
    let p = format!("stage{k}.scm");
    init.depthwise(&format!("{p}.stem3.dw"), STEM_INPUTS, 3);
    init.pointwise(&format!("{p}.stem3.pw"), c, STEM_INPUTS);
    init.depthwise(&format!("{p}.stem5.dw"), STEM_INPUTS, 5);
    init.pointwise(&format!("{p}.stem5.pw"), c, STEM_INPUTS);
    init.pointwise(&format!("{p}.fuse"), c, 2 * c);
    for n in 0..cfg.depth {
        let b = format!("{p}.block{n}");
        // a = sigmoid(0) = 1/2; gamma = 0 and d = 1 make the scan the identity.
        init.constant(&format!("{b}.ssd.a_logit"), &[c], 0.0);
        init.constant(&format!("{b}.ssd.b"), &[c], 1.0);
        init.constant(&format!("{b}.ssd.c"), &[c], 1.0);
        init.constant(&format!("{b}.ssd.d"), &[c], 1.0);
        init.constant(&format!("{b}.ssd.gamma"), &[1], 0.0);
        init.pointwise(&format!("{b}.mix.in"), c, c);
        init.zero_pointwise(&format!("{b}.mix.out"), c, c);
    }
    init.zero_pointwise(&format!("{p}.head"), 1, c);
}

/// One spectral state-space block: `s = Re ifft2(scan(fft2 x))`, followed
/// by a residual channel mixer. Returns the block output and final state.
pub(crate) fn ssfno_block(f: &mut Fwd, name: &str, x: Var, h: Var) -> (Var, Var) {
    let shape = f.g.shape(x).to_vec();
    let (c, hh, ww) = (shape[0], shape[1], shape[2]);
    let len = hh * ww;
    let cx = f.complexify(x);
    let spec = f.g.fft2(cx);
    let tokens = f.g.reshape(spec, &[2, c, len]);
    let a_logit = f.p(&format!("{name}.ssd.a_logit"));
    let a = f.g.sigmoid(a_logit);
    let b = f.p(&format!("{name}.ssd.b"));
    let cc = f.p(&format!("{name}.ssd.c"));
    let d = f.p(&format!("{name}.ssd.d"));
    let gamma = f.p(&format!("{name}.ssd.gamma"));
    let scanned = f.g.ssd_scan(tokens, h, a, b, cc, d, gamma);
    let out_tokens = f.g.narrow(scanned, 2, 0, len);
    let h_next = f.g.narrow(scanned, 2, len, 1);
    let h_next = f.g.reshape(h_next, &[2, c]);
    let out_spec = f.g.reshape(out_tokens, &[2, c, hh, ww]);
    let back = f.g.ifft2(out_spec);
    let s = f.real_part(back);
    let m = f.pointwise(s, &format!("{name}.mix.in"));
    let m = f.g.gelu(m);
    let m = f.pointwise(m, &format!("{name}.mix.out"));
    (f.g.add(s, m), h_next)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward(
    f: &mut Fwd,
    cfg: &NetConfig,
    k: usize,
    a: &Arc<SystemMatrix>,
    b: Var,
    backprojection: Var,
    precond: Var,
    r: Var,
) -> Var {
    let p = format!("stage{k}.scm");
    let ar = f.g.project(r, a);
    let atar = f.g.backproject(ar, a);
    let resid = f.g.sub(backprojection, atar);
    let dc = f.g.mul(resid, precond);

    let feats = f.g.concat(&[b, r, dc], 0);
    let s3 = f.depthwise(feats, &format!("{p}.stem3.dw"), 1);
    let s3 = f.pointwise(s3, &format!("{p}.stem3.pw"));
    let s5 = f.depthwise(feats, &format!("{p}.stem5.dw"), 1);
    let s5 = f.pointwise(s5, &format!("{p}.stem5.pw"));
    let both = f.g.concat(&[s3, s5], 0);
    let fused = f.pointwise(both, &format!("{p}.fuse"));
    let mut x = f.g.gelu(fused);
    // The recurrent state starts from zero at every stage.
    let mut h = f.g.constant(Tensor::zeros(&[2, cfg.channels]));
    for n in 0..cfg.depth {
        let (next, h_next) = ssfno_block(f, &format!("{p}.block{n}"), x, h);
        x = next;
        h = h_next;
    }
    let head = f.pointwise(x, &format!("{p}.head"));
    f.g.add(r, head)
}
