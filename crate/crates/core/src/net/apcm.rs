//! z-update: amplitude-phase correction in Haar sub-bands.
//!
//! Each band is enriched with dilated depthwise context (rates 1, 2, 4) and
//! moved to the Fourier domain. The amplitude branch applies a gated
//! multiplicative correction per band; the phase branch works on
//! `(cos, sin)` encodings, mixes all four bands through a 1x1 fusion conv,
//! and decodes through the unit circle and `atan2`. Bands are recombined,
//! inverted and synthesized back to an image.

use crate::autodiff::Var;
use crate::spectral::BandId;

use super::model::{ffn_init, Fwd, Init};
use super::{ApcmMode, NetConfig};

const DILATIONS: [usize; 3] = [1, 2, 4];
/// Band itself plus one context map per dilation.
const FEATURES: usize = 1 + DILATIONS.len();
const NORM_EPS: f64 = 1e-5;

pub(crate) fn amplitude_ffn_active(mode: ApcmMode, band: BandId) -> bool {
    mode == ApcmMode::FullBand || band == BandId::LL
}

pub(crate) fn phase_ffn_active(mode: ApcmMode, band: BandId) -> bool {
    mode == ApcmMode::FullBand || band == BandId::HH
}

fn band_prefix(k: usize, band: BandId) -> String {
    format!("stage{k}.apcm.{}", band.name().to_lowercase())
}

pub(crate) fn init(init: &mut Init, cfg: &NetConfig, k: usize) {
    let c = cfg.channels;
    for band in BandId::ALL {
        let p = band_prefix(k, band);
        for d in DILATIONS {
            init.depthwise(&format!("{p}.dil{d}"), 1, 3);
        }
        init.pointwise_unbiased(&format!("{p}.amp.lift"), c, FEATURES);
        init.constant(&format!("{p}.amp.norm.scale"), &[c], 1.0);
        init.constant(&format!("{p}.amp.norm.shift"), &[c], 0.0);
        if amplitude_ffn_active(cfg.apcm_mode, band) {
            ffn_init(init, &format!("{p}.amp.ffn"), c);
        }
        init.zero_pointwise(&format!("{p}.amp.head"), 1, c);
        init.constant(&format!("{p}.amp.gate"), &[1], 0.0);

        init.pointwise(&format!("{p}.phase.lift"), c, 2 * FEATURES);
        if phase_ffn_active(cfg.apcm_mode, band) {
            ffn_init(init, &format!("{p}.phase.ffn"), c);
        }
    }
    init.zero_pointwise(&format!("stage{k}.apcm.fusion"), 2 * BandId::ALL.len(), BandId::ALL.len() * c);
}

/// Gated amplitude correction: `relu(A + g (A (1 + s) - A))`, `g` the
/// sigmoid of a per-band gate and `s` the branch output.
pub(crate) fn amplitude_branch(f: &mut Fwd, cfg: &NetConfig, p: &str, band: BandId, amp_all: Var) -> Var {
    let amp = f.g.narrow(amp_all, 0, 0, 1);
    let enc = f.g.ln_1p(amp_all);
    let h = f.pointwise_unbiased(enc, &format!("{p}.amp.lift"));
    let h = f.g.instance_norm(h, NORM_EPS);
    let scale = f.p(&format!("{p}.amp.norm.scale"));
    let shift = f.p(&format!("{p}.amp.norm.shift"));
    let h = f.g.mul_along(h, scale, 0);
    let h = f.g.add_along(h, shift, 0);
    let mut h = f.g.gelu(h);
    if amplitude_ffn_active(cfg.apcm_mode, band) {
        h = f.ffn(h, &format!("{p}.amp.ffn"));
    }
    let s = f.pointwise(h, &format!("{p}.amp.head"));
    let delta = f.g.mul(amp, s);
    let gate_logit = f.p(&format!("{p}.amp.gate"));
    let gate = f.g.sigmoid(gate_logit);
    let gated = f.g.mul_scalar(delta, gate);
    let out = f.g.add(amp, gated);
    f.g.relu(out)
}

/// Phase features of one band, before cross-band fusion.
fn phase_features(f: &mut Fwd, cfg: &NetConfig, p: &str, band: BandId, cos_all: Var, sin_all: Var) -> Var {
    let enc = f.g.concat(&[cos_all, sin_all], 0);
    let h = f.pointwise(enc, &format!("{p}.phase.lift"));
    let h = f.g.gelu(h);
    if phase_ffn_active(cfg.apcm_mode, band) {
        f.ffn(h, &format!("{p}.phase.ffn"))
    } else {
        h
    }
}

struct BandState {
    amp: Var,
    cos: Var,
    sin: Var,
}

pub(crate) fn forward(f: &mut Fwd, cfg: &NetConfig, k: usize, v: Var) -> Var {
    let bands = f.g.dwt2(v);
    let bs = f.g.shape(bands).to_vec();
    let (bh, bw) = (bs[2], bs[3]);
    let mut states = Vec::with_capacity(4);
    let mut phase_feats = Vec::with_capacity(4);
    for band in BandId::ALL {
        let p = band_prefix(k, band);
        let vb = f.g.narrow(bands, 0, band.index(), 1);
        let vb = f.g.reshape(vb, &[1, bh, bw]);
        let mut feats = vec![vb];
        for d in DILATIONS {
            feats.push(f.depthwise(vb, &format!("{p}.dil{d}"), d));
        }
        let feats = f.g.concat(&feats, 0);
        let cx = f.complexify(feats);
        let spec = f.g.fft2(cx);
        let re = f.real_part(spec);
        let im = f.imag_part(spec);
        let amp_all = f.g.magnitude(re, im);
        let phase_all = f.g.atan2(im, re);
        let cos_all = f.g.cos(phase_all);
        let sin_all = f.g.sin(phase_all);

        let amp = amplitude_branch(f, cfg, &p, band, amp_all);
        phase_feats.push(phase_features(f, cfg, &p, band, cos_all, sin_all));
        let cos = f.g.narrow(cos_all, 0, 0, 1);
        let sin = f.g.narrow(sin_all, 0, 0, 1);
        states.push(BandState { amp, cos, sin });
    }
    let stacked = f.g.concat(&phase_feats, 0);
    let fused = f.pointwise(stacked, &format!("stage{k}.apcm.fusion"));

    let mut outs = Vec::with_capacity(4);
    for (i, st) in states.iter().enumerate() {
        let dc = f.g.narrow(fused, 0, 2 * i, 1);
        let ds = f.g.narrow(fused, 0, 2 * i + 1, 1);
        let c_hat = f.g.add(st.cos, dc);
        let s_hat = f.g.add(st.sin, ds);
        let unit = f.g.unit_circle(c_hat, s_hat, st.cos, st.sin);
        let c_unit = f.real_part(unit);
        let s_unit = f.imag_part(unit);
        let phase = f.g.atan2(s_unit, c_unit);
        let pc = f.g.cos(phase);
        let ps = f.g.sin(phase);
        let re = f.g.mul(st.amp, pc);
        let im = f.g.mul(st.amp, ps);
        let re = f.g.reshape(re, &[1, 1, bh, bw]);
        let im = f.g.reshape(im, &[1, 1, bh, bw]);
        let spec = f.g.concat(&[re, im], 0);
        let back = f.g.ifft2(spec);
        outs.push(f.real_part(back));
    }
    let merged = f.g.concat(&outs, 0);
    let merged = f.g.reshape(merged, &[4, 1, bh, bw]);
    f.g.idwt2(merged)
}
