use std::f64::consts::FRAC_1_SQRT_2;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::grid::ImageGrid;
use crate::spectral::{amp_phase, dwt2_haar, fft2, fftshift, ifft2_real, recombine, signed_frequency, BandId, Plane};

use super::metrics::{psnr, rmse, suv_max};
use super::report::{fmt_metric, Table};

/// Guard inside every log-magnitude.
pub const LOG_EPS: f64 = 1e-8;

fn wrapped(d: f64) -> f64 {
    d.sin().atan2(d.cos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwapHybrid {
    /// Real part of the hybrid, clamped to be non-negative.
    pub image: ImageGrid,
    /// Real part before clamping.
    pub unclamped: Plane,
    pub clamped_pixels: usize,
}

/// `Re F^-1(|F(amp_source)| exp(i arg F(phase_source)))`, clamped at zero
/// for activity semantics.
pub fn swap_hybrid(amp_source: &ImageGrid, phase_source: &ImageGrid) -> Result<SwapHybrid> {
    amp_source.ensure_same_dims(phase_source)?;
    let (amp, _) = amp_phase(&fft2(amp_source)?);
    let (_, phase) = amp_phase(&fft2(phase_source)?);
    let raw = ifft2_real(&recombine(&amp, &phase)?);
    let clamped_pixels = raw.values.iter().filter(|&&v| v < 0.0).count();
    let image = ImageGrid::new(raw.width, raw.height, raw.values.iter().map(|v| v.max(0.0)).collect())?;
    Ok(SwapHybrid {
        image,
        unclamped: raw,
        clamped_pixels,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SwapRow {
    pub config: String,
    pub psnr: f64,
    pub rmse: f64,
    pub suv_max: f64,
    pub clamped_pixels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwapStudy {
    pub rows: Vec<SwapRow>,
}

impl SwapStudy {
    pub const CONFIGS: [&'static str; 4] = ["low", "amp_low+phase_full", "amp_full+phase_low", "full"];

    pub fn row(&self, config: &str) -> Option<&SwapRow> {
        self.rows.iter().find(|r| r.config == config)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["config", "psnr_db", "rmse", "suv_max", "clamped_pixels"]);
        for r in &self.rows {
            t.push(vec![
                r.config.clone(),
                fmt_metric(r.psnr),
                fmt_metric(r.rmse),
                fmt_metric(r.suv_max),
                r.clamped_pixels.to_string(),
            ]);
        }
        t
    }
}

/// Scores the low-count image, both amplitude/phase hybrids and the
/// full-count image against `truth`. SUVmax is taken over `roi` (the whole
/// image when `None`).
pub fn swap_study(truth: &ImageGrid, low: &ImageGrid, full: &ImageGrid, roi: Option<&[bool]>) -> Result<SwapStudy> {
    truth.ensure_same_dims(low)?;
    truth.ensure_same_dims(full)?;
    let everything = vec![true; truth.len()];
    let roi = roi.unwrap_or(&everything);
    let amp_low_phase_full = swap_hybrid(low, full)?;
    let amp_full_phase_low = swap_hybrid(full, low)?;
    let cases = [
        (SwapStudy::CONFIGS[0], low, 0),
        (SwapStudy::CONFIGS[1], &amp_low_phase_full.image, amp_low_phase_full.clamped_pixels),
        (SwapStudy::CONFIGS[2], &amp_full_phase_low.image, amp_full_phase_low.clamped_pixels),
        (SwapStudy::CONFIGS[3], full, 0),
    ];
    let rows = cases
        .into_iter()
        .map(|(config, img, clamped)| {
            Ok(SwapRow {
                config: config.to_string(),
                psnr: psnr(img, truth)?,
                rmse: rmse(img, truth)?,
                suv_max: suv_max(img, roi)?,
                clamped_pixels: clamped,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SwapStudy { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RingDeviation {
    pub r_lo: f64,
    pub r_hi: f64,
    pub bins: usize,
    /// Mean `|log(A_low + eps) - log(A_full + eps)|`.
    pub amplitude: f64,
    /// Mean wrapped angular distance.
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandDeviation {
    pub band: String,
    /// Variance of the wrapped phase difference.
    pub phase_variance: f64,
    /// Mean absolute wrapped phase difference.
    pub phase_mean_abs: f64,
    /// Mean absolute log-amplitude difference.
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviationProfile {
    pub rings: Vec<RingDeviation>,
    pub bands: Vec<BandDeviation>,
}

impl DeviationProfile {
    pub fn band(&self, id: BandId) -> &BandDeviation {
        &self.bands[id.index()]
    }

    pub fn ring_table(&self) -> Table {
        let mut t = Table::new(&["ring", "r_lo", "r_hi", "bins", "amplitude_dev", "phase_dev"]);
        for (i, r) in self.rings.iter().enumerate() {
            t.push(vec![
                i.to_string(),
                fmt_metric(r.r_lo),
                fmt_metric(r.r_hi),
                r.bins.to_string(),
                format!("{:.6}", r.amplitude),
                format!("{:.6}", r.phase),
            ]);
        }
        t
    }

    pub fn band_table(&self) -> Table {
        let mut t = Table::new(&["band", "phase_variance", "phase_mean_abs", "amplitude_dev"]);
        for b in &self.bands {
            t.push(vec![
                b.band.clone(),
                format!("{:.6}", b.phase_variance),
                format!("{:.6}", b.phase_mean_abs),
                format!("{:.6}", b.amplitude),
            ]);
        }
        t
    }
}

fn log_amp_diff(a: f64, b: f64) -> f64 {
    ((a + LOG_EPS).ln() - (b + LOG_EPS).ln()).abs()
}

/// Amplitude and phase deviations of `low` from `full` in equal-width rings
/// of normalized radius over `[0, sqrt(2)/2]`, plus per Haar sub-band
/// statistics.
pub fn deviation_profile(low: &ImageGrid, full: &ImageGrid, n_radial_bands: usize) -> Result<DeviationProfile> {
    low.ensure_same_dims(full)?;
    if n_radial_bands < 2 {
        return Err(invalid("need at least two radial bands"));
    }
    let (w, h) = low.dims();
    let (al, pl) = amp_phase(&fft2(low)?);
    let (af, pf) = amp_phase(&fft2(full)?);
    let r_max = FRAC_1_SQRT_2;
    let width = r_max / n_radial_bands as f64;
    let mut amp_sum = vec![0.0; n_radial_bands];
    let mut phase_sum = vec![0.0; n_radial_bands];
    let mut counts = vec![0usize; n_radial_bands];
    for r in 0..h {
        for c in 0..w {
            let (fx, fy) = (signed_frequency(c, w), signed_frequency(r, h));
            let radius = (fx * fx + fy * fy).sqrt();
            let ring = ((radius / width) as usize).min(n_radial_bands - 1);
            let k = r * w + c;
            amp_sum[ring] += log_amp_diff(al.values[k], af.values[k]);
            phase_sum[ring] += wrapped(pl.values[k] - pf.values[k]).abs();
            counts[ring] += 1;
        }
    }
    let rings = (0..n_radial_bands)
        .map(|i| {
            let n = counts[i].max(1) as f64;
            RingDeviation {
                r_lo: i as f64 * width,
                r_hi: (i + 1) as f64 * width,
                bins: counts[i],
                amplitude: amp_sum[i] / n,
                phase: phase_sum[i] / n,
            }
        })
        .collect();

    let bl = dwt2_haar(low)?;
    let bf = dwt2_haar(full)?;
    let bands = BandId::ALL
        .into_iter()
        .map(|id| {
            let (a1, p1) = amp_phase(&fft2(bl.band(id))?);
            let (a2, p2) = amp_phase(&fft2(bf.band(id))?);
            let n = a1.values.len() as f64;
            let diffs: Vec<f64> = p1.values.iter().zip(&p2.values).map(|(x, y)| wrapped(x - y)).collect();
            let mean = diffs.iter().sum::<f64>() / n;
            Ok(BandDeviation {
                band: id.name().to_string(),
                phase_variance: diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n,
                phase_mean_abs: diffs.iter().map(|d| d.abs()).sum::<f64>() / n,
                amplitude: a1
                    .values
                    .iter()
                    .zip(&a2.values)
                    .map(|(x, y)| log_amp_diff(*x, *y))
                    .sum::<f64>()
                    / n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DeviationProfile { rings, bands })
}

/// Centered `log(A_recon + eps) - log(A_reference + eps)`; positive where
/// the reconstruction overestimates a frequency.
pub fn freq_error_map(recon: &ImageGrid, reference: &ImageGrid) -> Result<ImageGrid> {
    recon.ensure_same_dims(reference)?;
    let (w, h) = recon.dims();
    let (ar, _) = amp_phase(&fft2(recon)?);
    let (aref, _) = amp_phase(&fft2(reference)?);
    let diff: Vec<f64> = ar
        .values
        .iter()
        .zip(&aref.values)
        .map(|(a, b)| (a + LOG_EPS).ln() - (b + LOG_EPS).ln())
        .collect();
    ImageGrid::new(w, h, fftshift(&diff, w, h))
}
