//! Synthetic phantoms and low-count degradation: Poisson sampling of the full
//! acquisition, binomial thinning to the reduced dose, and a smooth
//! multiplicative attenuation-correction gain field.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::grid::ImageGrid;
use crate::projector::{Sinogram, SystemMatrix};
use crate::spectral::{fft2_in_place, signed_frequency};

/// RNG stream reserved for the gain field; Poisson streams use the bin index.
const BIAS_STREAM: u64 = 1 << 48;
const PTRS_THRESHOLD: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    EllipseBrain,
    HotSpheres,
    CheckerLesions,
}

impl PhantomKind {
    pub const ALL: [PhantomKind; 3] = [
        PhantomKind::EllipseBrain,
        PhantomKind::HotSpheres,
        PhantomKind::CheckerLesions,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PhantomKind::EllipseBrain => "ellipse_brain",
            PhantomKind::HotSpheres => "hot_spheres",
            PhantomKind::CheckerLesions => "checker_lesions",
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PhantomKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown phantom kind `{s}`")))
    }
}

/// A named region of interest. Lesion ROIs carry the planted peak value.
#[derive(Clone, Debug, PartialEq)]
pub struct Roi {
    pub name: String,
    pub mask: Vec<bool>,
    pub peak: Option<f64>,
}

impl Roi {
    pub fn is_lesion(&self) -> bool {
        self.peak.is_some()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub kind: PhantomKind,
    pub activity: ImageGrid,
    pub rois: Vec<Roi>,
    pub seed: u64,
}

impl Phantom {
    pub fn lesions(&self) -> impl Iterator<Item = &Roi> {
        self.rois.iter().filter(|r| r.is_lesion())
    }

    pub fn roi(&self, name: &str) -> Option<&Roi> {
        self.rois.iter().find(|r| r.name == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationConfig {
    /// Fraction of the full dose kept in the low-count acquisition, in `(0, 1]`.
    pub dose_fraction: f64,
    /// Depth of the gain suppression; gains lie in `[1 - strength, 1]`.
    pub ac_bias_strength: f64,
    /// Correlation length of the gain field, in pixels.
    pub ac_bias_scale: f64,
    /// Mean count per sinogram bin of the full-dose acquisition.
    pub full_count_mean: f64,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            dose_fraction: 0.1,
            ac_bias_strength: 0.3,
            ac_bias_scale: 8.0,
            full_count_mean: 50.0,
            seed: 0,
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dose_fraction > 0.0 && self.dose_fraction <= 1.0) {
            return Err(invalid(format!(
                "dose_fraction {} must lie in (0, 1]",
                self.dose_fraction
            )));
        }
        if !(self.ac_bias_strength >= 0.0 && self.ac_bias_strength < 1.0) {
            return Err(invalid(format!(
                "ac_bias_strength {} must lie in [0, 1)",
                self.ac_bias_strength
            )));
        }
        if !(self.ac_bias_scale > 0.0 && self.ac_bias_scale.is_finite()) {
            return Err(invalid("ac_bias_scale must be positive"));
        }
        if !(self.full_count_mean > 0.0 && self.full_count_mean.is_finite()) {
            return Err(invalid("full_count_mean must be positive"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Phantoms

struct Canvas {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Canvas {
    /// Normalized pixel-centre coordinates in (-1, 1).
    fn coords(&self, k: usize) -> (f64, f64) {
        let (c, r) = (k % self.width, k / self.width);
        (
            (c as f64 + 0.5) / self.width as f64 * 2.0 - 1.0,
            (r as f64 + 0.5) / self.height as f64 * 2.0 - 1.0,
        )
    }

    fn mask(&self, shape: &Ellipse) -> Vec<bool> {
        (0..self.values.len())
            .map(|k| {
                let (x, y) = self.coords(k);
                shape.contains(x, y)
            })
            .collect()
    }

    fn paint(&mut self, mask: &[bool], value: f64) {
        for (v, &m) in self.values.iter_mut().zip(mask) {
            if m {
                *v = value;
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    angle: f64,
}

impl Ellipse {
    fn disc(cx: f64, cy: f64, r: f64) -> Self {
        Self {
            cx,
            cy,
            ax: r,
            ay: r,
            angle: 0.0,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let u = (dx * c + dy * s) / self.ax;
        let v = (-dx * s + dy * c) / self.ay;
        u * u + v * v <= 1.0
    }

    /// Conservative containment of a disc inside this ellipse.
    fn contains_disc(&self, d: &Ellipse) -> bool {
        (0..16).all(|i| {
            let t = 2.0 * PI * i as f64 / 16.0;
            self.contains(d.cx + d.ax * t.cos(), d.cy + d.ax * t.sin())
        }) && self.contains(d.cx, d.cy)
    }
}

fn place_lesions(
    rng: &mut ChaCha8Rng,
    canvas: &Canvas,
    body: &Ellipse,
    radius: (f64, f64),
    peak: (f64, f64),
) -> Vec<(Ellipse, f64)> {
    let count = rng.gen_range(2..=6);
    // A lesion must cover at least one pixel centre.
    let min_r = (2.0 / canvas.width.min(canvas.height) as f64).max(radius.0);
    let mut placed: Vec<(Ellipse, f64)> = Vec::new();
    let mut attempts = 0;
    while placed.len() < count && attempts < 10_000 {
        attempts += 1;
        let r = rng.gen_range(min_r..radius.1.max(min_r + 1e-6));
        let d = Ellipse::disc(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), r);
        if !body.contains_disc(&d) {
            continue;
        }
        let clear = placed.iter().all(|(o, _)| {
            let dist = ((o.cx - d.cx).powi(2) + (o.cy - d.cy).powi(2)).sqrt();
            dist > o.ax + d.ax + 0.08
        });
        if !clear {
            continue;
        }
        placed.push((d, rng.gen_range(peak.0..peak.1)));
    }
    placed
}

fn finish(kind: PhantomKind, mut canvas: Canvas, body: &Ellipse, lesions: Vec<(Ellipse, f64)>, seed: u64) -> Result<Phantom> {
    let body_mask = canvas.mask(body);
    let mut lesion_union = vec![false; body_mask.len()];
    let mut rois = Vec::new();
    for (i, (shape, peak)) in lesions.iter().enumerate() {
        let mask = canvas.mask(shape);
        canvas.paint(&mask, *peak);
        for (u, &m) in lesion_union.iter_mut().zip(&mask) {
            *u |= m;
        }
        rois.push(Roi {
            name: format!("lesion_{i}"),
            mask,
            peak: Some(*peak),
        });
    }
    let background = body_mask
        .iter()
        .zip(&lesion_union)
        .map(|(&b, &l)| b && !l)
        .collect();
    rois.push(Roi {
        name: "background".into(),
        mask: background,
        peak: None,
    });
    Ok(Phantom {
        kind,
        activity: ImageGrid::new(canvas.width, canvas.height, canvas.values)?,
        rois,
        seed,
    })
}

/// Deterministic piecewise-constant phantom with 2-6 hot lesions. Activity
/// lies in `[0, 1]`.
pub fn make_phantom(kind: PhantomKind, dims: (usize, usize), seed: u64) -> Result<Phantom> {
    let (width, height) = dims;
    if width < 32 || height < 32 {
        return Err(invalid(format!(
            "phantoms need at least 32x32 pixels, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut canvas = Canvas {
        width,
        height,
        values: vec![0.0; width * height],
    };
    let (body, lesions) = match kind {
        PhantomKind::EllipseBrain => {
            let body = Ellipse {
                cx: rng.gen_range(-0.04..0.04),
                cy: rng.gen_range(-0.04..0.04),
                ax: rng.gen_range(0.72..0.88),
                ay: rng.gen_range(0.6..0.78),
                angle: rng.gen_range(-0.3..0.3),
            };
            let cortex = rng.gen_range(0.22..0.32);
            let white = rng.gen_range(0.1..0.16);
            canvas.paint(&canvas.mask(&body), cortex);
            let inner = Ellipse {
                ax: body.ax * 0.72,
                ay: body.ay * 0.7,
                ..body
            };
            canvas.paint(&canvas.mask(&inner), white);
            let (c, s) = (body.angle.cos(), body.angle.sin());
            for side in [-1.0, 1.0] {
                let off = side * body.ax * 0.18;
                let vent = Ellipse {
                    cx: body.cx + off * c,
                    cy: body.cy + off * s,
                    ax: body.ax * 0.09,
                    ay: body.ay * 0.28,
                    angle: body.angle + side * 0.25,
                };
                canvas.paint(&canvas.mask(&vent), 0.03);
            }
            let lesions = place_lesions(&mut rng, &canvas, &inner, (0.08, 0.16), (0.6, 1.0));
            (body, lesions)
        }
        PhantomKind::HotSpheres => {
            let r = rng.gen_range(0.75..0.88);
            let body = Ellipse::disc(rng.gen_range(-0.04..0.04), rng.gen_range(-0.04..0.04), r);
            let bg = rng.gen_range(0.15..0.25);
            canvas.paint(&canvas.mask(&body), bg);
            let lesions = place_lesions(&mut rng, &canvas, &body, (0.08, 0.2), (0.55, 1.0));
            (body, lesions)
        }
        PhantomKind::CheckerLesions => {
            let body = Ellipse {
                cx: 0.0,
                cy: 0.0,
                ax: rng.gen_range(0.75..0.88),
                ay: rng.gen_range(0.7..0.85),
                angle: rng.gen_range(-0.2..0.2),
            };
            let (lo, hi) = (rng.gen_range(0.1..0.16), rng.gen_range(0.22..0.3));
            let cell = (width.min(height) / 4).max(2);
            let mask = canvas.mask(&body);
            for (k, v) in canvas.values.iter_mut().enumerate() {
                if mask[k] {
                    let (c, r) = (k % width, k / width);
                    *v = if (c / cell + r / cell) % 2 == 0 { lo } else { hi };
                }
            }
            let lesions = place_lesions(&mut rng, &canvas, &body, (0.08, 0.16), (0.6, 1.0));
            (body, lesions)
        }
    };
    if lesions.len() < 2 {
        return Err(invalid(format!(
            "could not place lesions in a {width}x{height} {kind} phantom (seed {seed})"
        )));
    }
    finish(kind, canvas, &body, lesions, seed)
}

// ---------------------------------------------------------------------------
// Poisson sampling

/// Counter-based generator for one sinogram bin.
fn bin_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Poisson variate: sequential inversion below mean 10, PTRS transformed
/// rejection above.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < PTRS_THRESHOLD {
        let u: f64 = rng.gen();
        let mut k = 0u64;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u > cdf {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
            if p < 1e-300 && cdf >= 1.0 - 1e-15 {
                break;
            }
        }
        return k;
    }
    let slam = mean.sqrt();
    let loglam = mean.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        let v: f64 = rng.gen();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= -mean + k * loglam - libm::lgamma(k + 1.0)
        {
            return k as u64;
        }
    }
}

/// Smooth gain field `b = 1 - strength * g`, `g` a Gaussian-filtered white
/// noise field rescaled to `[0, 1]`.
pub fn ac_gain_field(dims: (usize, usize), cfg: &DegradationConfig) -> Result<ImageGrid> {
    cfg.validate()?;
    let (w, h) = dims;
    if cfg.ac_bias_strength == 0.0 {
        return ImageGrid::filled(w, h, 1.0);
    }
    let mut rng = bin_rng(cfg.seed, BIAS_STREAM);
    let mut re: Vec<f64> = (0..w * h)
        .map(|_| {
            // Box-Muller; only the distribution shape matters here.
            let u1: f64 = rng.gen::<f64>().max(1e-300);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
        })
        .collect();
    let mut im = vec![0.0; w * h];
    fft2_in_place(&mut re, &mut im, w, h, false);
    let sigma = cfg.ac_bias_scale;
    for r in 0..h {
        let fy = signed_frequency(r, h);
        for c in 0..w {
            let fx = signed_frequency(c, w);
            let g = (-2.0 * PI * PI * sigma * sigma * (fx * fx + fy * fy)).exp();
            re[r * w + c] *= g;
            im[r * w + c] *= g;
        }
    }
    fft2_in_place(&mut re, &mut im, w, h, true);
    let lo = re.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = re.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let gains = re
        .iter()
        .map(|&v| {
            let g = if span > 1e-300 { (v - lo) / span } else { 0.0 };
            1.0 - cfg.ac_bias_strength * g
        })
        .collect();
    ImageGrid::new(w, h, gains)
}

/// Multiplies the image by the smooth positive gain field of `cfg`.
pub fn apply_ac_bias(img: &ImageGrid, cfg: &DegradationConfig) -> Result<ImageGrid> {
    if cfg.ac_bias_strength == 0.0 {
        cfg.validate()?;
        return Ok(img.clone());
    }
    let field = ac_gain_field(img.dims(), cfg)?;
    img.zip_map(&field, |v, g| v * g)
}

/// Paired full- and reduced-dose measurements of one phantom.
#[derive(Clone, Debug, PartialEq)]
pub struct Acquisition {
    pub y_low: Sinogram,
    pub y_full: Sinogram,
    /// Counts per unit line integral of activity at full dose.
    pub count_scale: f64,
    /// Activity seen by the low-count acquisition (gain-biased truth).
    pub biased_activity: ImageGrid,
}

/// Samples `y_full ~ Poisson(s A x)` and thins it bin-wise to
/// `y_low ~ Poisson(dose * s * A x_biased)`, with `s` chosen so that the mean
/// full-dose bin holds `full_count_mean` counts. Every bin draws from its own
/// counter-based stream, so a unit dose without bias reproduces `y_full`.
pub fn simulate_counts(a: &SystemMatrix, phantom: &Phantom, cfg: &DegradationConfig) -> Result<Acquisition> {
    cfg.validate()?;
    let x = &phantom.activity;
    if x.dims() != a.image_dims() {
        return Err(crate::error::shape_mismatch(
            format!("image {}", a.image_shape()),
            format!("image {}x{}", x.width(), x.height()),
        ));
    }
    x.ensure_nonnegative()?;
    let biased = apply_ac_bias(x, cfg)?;
    let mut ax = vec![0.0; a.n_rays()];
    a.forward_raw(x.values(), &mut ax);
    let mut axb = vec![0.0; a.n_rays()];
    a.forward_raw(biased.values(), &mut axb);

    let mean_ax = ax.iter().sum::<f64>() / ax.len() as f64;
    let count_scale = if mean_ax > 0.0 {
        cfg.full_count_mean / mean_ax
    } else {
        1.0
    };

    let mut full = vec![0.0; a.n_rays()];
    let mut low = vec![0.0; a.n_rays()];
    for ray in 0..a.n_rays() {
        let mut rng = bin_rng(cfg.seed, ray as u64);
        let n = sample_poisson(&mut rng, count_scale * ax[ray]);
        let keep = if ax[ray] > 0.0 {
            (cfg.dose_fraction * axb[ray] / ax[ray]).min(1.0)
        } else {
            0.0
        };
        let k = if keep >= 1.0 {
            n
        } else {
            (0..n).filter(|_| rng.gen::<f64>() < keep).count() as u64
        };
        full[ray] = n as f64;
        low[ray] = k as f64;
    }
    Ok(Acquisition {
        y_low: Sinogram::new(a.n_angles(), a.n_bins(), low)?,
        y_full: Sinogram::new(a.n_angles(), a.n_bins(), full)?,
        count_scale,
        biased_activity: biased,
    })
}

/// Noise-free expected sinogram `scale * A x`.
pub fn expected_counts(a: &SystemMatrix, x: &ImageGrid, scale: f64) -> Result<Sinogram> {
    let mut y = crate::projector::forward(a, x)?;
    y.counts.iter_mut().for_each(|v| *v *= scale);
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projector::build_parallel_projector;
    use crate::spectral::fft2;

    #[test]
    fn phantoms_are_deterministic() {
        for kind in PhantomKind::ALL {
            let a = make_phantom(kind, (32, 32), 7).unwrap();
            let b = make_phantom(kind, (32, 32), 7).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn phantom_validation() {
        assert!(make_phantom(PhantomKind::HotSpheres, (16, 32), 0).is_err());
        assert!("spiral".parse::<PhantomKind>().is_err());
        assert_eq!("hot_spheres".parse::<PhantomKind>().unwrap(), PhantomKind::HotSpheres);
    }

    #[test]
    fn nonnegative_with_two_to_six_lesions_over_many_seeds() {
        for kind in PhantomKind::ALL {
            for seed in 0..100 {
                let p = make_phantom(kind, (32, 32), seed).unwrap();
                assert!(p.activity.min() >= 0.0);
                assert!(p.activity.max() <= 1.0);
                let n = p.lesions().count();
                assert!((2..=6).contains(&n), "{kind} seed {seed}: {n} lesions");
                assert!(p.lesions().all(|l| l.count() >= 1));
            }
        }
    }

    #[test]
    fn hot_sphere_lesions_at_least_twice_background() {
        for seed in 0..20 {
            let p = make_phantom(PhantomKind::HotSpheres, (32, 32), seed).unwrap();
            let bg = p.roi("background").unwrap();
            let vals = p.activity.values();
            let bg_mean = bg
                .mask
                .iter()
                .zip(vals)
                .filter(|(m, _)| **m)
                .map(|(_, v)| v)
                .sum::<f64>()
                / bg.count() as f64;
            for l in p.lesions() {
                for (m, v) in l.mask.iter().zip(vals) {
                    if *m {
                        assert!(*v >= 2.0 * bg_mean, "seed {seed}: {v} vs bg {bg_mean}");
                    }
                }
            }
        }
    }

    #[test]
    fn poisson_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for &mean in &[0.3, 4.0, 20.0, 55.0, 400.0] {
            let n = 40_000;
            let xs: Vec<f64> = (0..n).map(|_| sample_poisson(&mut rng, mean) as f64).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((m - mean).abs() < 4.0 * (mean / n as f64).sqrt() + 1e-9, "mean {m} vs {mean}");
            if mean >= 20.0 {
                let fano = var / m;
                assert!((fano - 1.0).abs() < 0.05, "fano {fano} at mean {mean}");
            }
        }
    }

    #[test]
    fn unit_dose_reproduces_full_and_zero_activity_is_silent() {
        let a = build_parallel_projector((32, 32), 16, 32).unwrap();
        let p = make_phantom(PhantomKind::EllipseBrain, (32, 32), 3).unwrap();
        let cfg = DegradationConfig {
            dose_fraction: 1.0,
            ac_bias_strength: 0.0,
            seed: 5,
            ..Default::default()
        };
        let acq = simulate_counts(&a, &p, &cfg).unwrap();
        assert_eq!(acq.y_low, acq.y_full);
        let again = simulate_counts(&a, &p, &cfg).unwrap();
        assert_eq!(acq, again);

        let mut empty = p.clone();
        empty.activity = ImageGrid::zeros(32, 32).unwrap();
        let acq = simulate_counts(&a, &empty, &DegradationConfig::default()).unwrap();
        assert!(acq.y_low.counts.iter().all(|&c| c == 0.0));
        assert!(acq.y_full.counts.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn full_scale_hits_target_mean() {
        let a = build_parallel_projector((32, 32), 32, 32).unwrap();
        let p = make_phantom(PhantomKind::HotSpheres, (32, 32), 1).unwrap();
        let acq = simulate_counts(&a, &p, &DegradationConfig::default()).unwrap();
        let mean = acq.y_full.total() / acq.y_full.counts.len() as f64;
        assert!((mean - 50.0).abs() < 1.5, "mean full bin {mean}");
    }

    #[test]
    fn dose_fraction_validation() {
        let a = build_parallel_projector((32, 32), 8, 32).unwrap();
        let p = make_phantom(PhantomKind::HotSpheres, (32, 32), 1).unwrap();
        for d in [0.0, -0.1, 1.5] {
            let cfg = DegradationConfig {
                dose_fraction: d,
                ..Default::default()
            };
            assert!(simulate_counts(&a, &p, &cfg).is_err());
        }
    }

    #[test]
    fn ac_bias_identity_suppression_and_range() {
        let p = make_phantom(PhantomKind::EllipseBrain, (32, 32), 2).unwrap();
        let off = DegradationConfig {
            ac_bias_strength: 0.0,
            ..Default::default()
        };
        assert_eq!(apply_ac_bias(&p.activity, &off).unwrap(), p.activity);

        let cfg = DegradationConfig::default();
        let biased = apply_ac_bias(&p.activity, &cfg).unwrap();
        assert!(biased.mean() < p.activity.mean());
        for (b, x) in biased.values().iter().zip(p.activity.values()) {
            if *x > 0.0 {
                let ratio = b / x;
                assert!(ratio > 0.0 && ratio <= 1.0 + 1e-15);
                assert!(ratio >= 0.7 - 1e-12);
            }
        }
        let bad = DegradationConfig {
            ac_bias_strength: 1.0,
            ..Default::default()
        };
        assert!(apply_ac_bias(&p.activity, &bad).is_err());
    }

    fn low_frequency_fraction(diff: &ImageGrid, cutoff: f64) -> f64 {
        let (w, h) = diff.dims();
        let s = fft2(diff).unwrap();
        let (mut inside, mut total) = (0.0, 0.0);
        for r in 0..h {
            for c in 0..w {
                let (fx, fy) = (signed_frequency(c, w), signed_frequency(r, h));
                let e = s.re[r * w + c].powi(2) + s.im[r * w + c].powi(2);
                total += e;
                if (fx * fx + fy * fy).sqrt() < cutoff {
                    inside += e;
                }
            }
        }
        inside / total
    }

    #[test]
    fn ac_bias_difference_is_low_frequency() {
        let flat = ImageGrid::filled(32, 32, 0.5).unwrap();
        for seed in 0..20 {
            for scale in [8.0, 16.0] {
                let cfg = DegradationConfig {
                    ac_bias_scale: scale,
                    seed,
                    ..Default::default()
                };
                let diff = apply_ac_bias(&flat, &cfg)
                    .unwrap()
                    .zip_map(&flat, |a, b| a - b)
                    .unwrap();
                assert!(low_frequency_fraction(&diff, 0.2) >= 0.8);
                for kind in [PhantomKind::HotSpheres, PhantomKind::CheckerLesions] {
                    let p = make_phantom(kind, (32, 32), seed).unwrap();
                    let diff = apply_ac_bias(&p.activity, &cfg)
                        .unwrap()
                        .zip_map(&p.activity, |a, b| a - b)
                        .unwrap();
                    let f = low_frequency_fraction(&diff, 0.2);
                    assert!(f >= 0.8, "{kind} seed {seed} scale {scale}: {f}");
                }
            }
        }
    }
}
