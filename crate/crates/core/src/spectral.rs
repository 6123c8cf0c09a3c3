//! Spectral primitives: 2D DFT, amplitude/phase split and recombination, and
//! the single-level orthonormal Haar wavelet transform.
//!
//! Conventions: the forward DFT is unnormalized and the inverse carries the
//! `1/(W*H)` factor. The Haar transform is orthonormal, so a constant image
//! `c` maps to `LL = 2c` and zero detail bands. Odd dimensions are
//! reflect-padded before analysis and cropped after synthesis.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fmt;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{check_finite, invalid, shape_mismatch, Result};
use crate::grid::ImageGrid;

/// Anything that exposes a row-major real 2D field.
pub trait RealField {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn values(&self) -> &[f64];
}

impl RealField for ImageGrid {
    fn width(&self) -> usize {
        ImageGrid::width(self)
    }
    fn height(&self) -> usize {
        ImageGrid::height(self)
    }
    fn values(&self) -> &[f64] {
        ImageGrid::values(self)
    }
}

/// A finite real 2D array with no minimum size; used for wavelet bands and
/// per-bin amplitude/phase maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("plane dimensions must be nonzero"));
        }
        if values.len() != width * height {
            return Err(shape_mismatch(
                format!("{} values", width * height),
                format!("{} values", values.len()),
            ));
        }
        check_finite(&values)?;
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn to_image(&self) -> Result<ImageGrid> {
        ImageGrid::new(self.width, self.height, self.values.clone())
    }
}

impl From<&ImageGrid> for Plane {
    fn from(img: &ImageGrid) -> Self {
        Plane {
            width: img.width(),
            height: img.height(),
            values: img.values().to_vec(),
        }
    }
}

impl RealField for Plane {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum {
    pub width: usize,
    pub height: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexSpectrum {
    pub fn new(width: usize, height: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if n == 0 {
            return Err(invalid("spectrum dimensions must be nonzero"));
        }
        if re.len() != n || im.len() != n {
            return Err(shape_mismatch(
                format!("{n} bins"),
                format!("re {} / im {}", re.len(), im.len()),
            ));
        }
        check_finite(&re)?;
        check_finite(&im)?;
        Ok(Self {
            width,
            height,
            re,
            im,
        })
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// Real part of the spectrum, as a plane.
    pub fn real_plane(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            values: self.re.clone(),
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place 2D DFT on split real/imaginary buffers. The inverse includes the
/// `1/(width*height)` normalization.
pub fn fft2_in_place(re: &mut [f64], im: &mut [f64], width: usize, height: usize, inverse: bool) {
    debug_assert_eq!(re.len(), width * height);
    debug_assert_eq!(im.len(), width * height);
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let (row_fft, col_fft) = if inverse {
            (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
        } else {
            (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
        };

        let mut buf: Vec<Complex<f64>> = re
            .iter()
            .zip(im.iter())
            .map(|(&r, &i)| Complex::new(r, i))
            .collect();
        for row in buf.chunks_exact_mut(width) {
            row_fft.process(row);
        }
        let mut column = vec![Complex::new(0.0, 0.0); height];
        for col in 0..width {
            for (row, c) in column.iter_mut().enumerate() {
                *c = buf[row * width + col];
            }
            col_fft.process(&mut column);
            for (row, c) in column.iter().enumerate() {
                buf[row * width + col] = *c;
            }
        }
        let scale = if inverse {
            1.0 / (width * height) as f64
        } else {
            1.0
        };
        for (k, c) in buf.iter().enumerate() {
            re[k] = c.re * scale;
            im[k] = c.im * scale;
        }
    });
}

/// Forward 2D DFT of a real field.
pub fn fft2<F: RealField>(img: &F) -> Result<ComplexSpectrum> {
    check_finite(img.values())?;
    let (w, h) = (img.width(), img.height());
    let mut re = img.values().to_vec();
    let mut im = vec![0.0; re.len()];
    fft2_in_place(&mut re, &mut im, w, h, false);
    ComplexSpectrum::new(w, h, re, im)
}

/// Inverse 2D DFT, complex result.
pub fn ifft2(spec: &ComplexSpectrum) -> ComplexSpectrum {
    let mut re = spec.re.clone();
    let mut im = spec.im.clone();
    fft2_in_place(&mut re, &mut im, spec.width, spec.height, true);
    ComplexSpectrum {
        width: spec.width,
        height: spec.height,
        re,
        im,
    }
}

/// Inverse 2D DFT keeping the real part.
pub fn ifft2_real(spec: &ComplexSpectrum) -> Plane {
    ifft2(spec).real_plane()
}

/// Principal-value argument in `(-pi, pi]`, with the zero bin mapped to 0.
pub fn principal_phase(re: f64, im: f64) -> f64 {
    if re == 0.0 && im == 0.0 {
        return 0.0;
    }
    let p = im.atan2(re);
    if p <= -PI {
        PI
    } else {
        p
    }
}

/// Splits a spectrum into per-bin modulus and principal phase.
pub fn amp_phase(spec: &ComplexSpectrum) -> (Plane, Plane) {
    let amplitude = spec
        .re
        .iter()
        .zip(&spec.im)
        .map(|(&r, &i)| r.hypot(i))
        .collect();
    let phase = spec
        .re
        .iter()
        .zip(&spec.im)
        .map(|(&r, &i)| principal_phase(r, i))
        .collect();
    (
        Plane {
            width: spec.width,
            height: spec.height,
            values: amplitude,
        },
        Plane {
            width: spec.width,
            height: spec.height,
            values: phase,
        },
    )
}

/// Builds `amplitude * exp(i * phase)` bin by bin.
pub fn recombine(amplitude: &Plane, phase: &Plane) -> Result<ComplexSpectrum> {
    if (amplitude.width, amplitude.height) != (phase.width, phase.height) {
        return Err(shape_mismatch(
            format!("{}x{}", amplitude.width, amplitude.height),
            format!("{}x{}", phase.width, phase.height),
        ));
    }
    if let Some(i) = amplitude.values.iter().position(|&a| a < 0.0) {
        return Err(invalid(format!(
            "negative amplitude {} at bin {i}",
            amplitude.values[i]
        )));
    }
    let (re, im) = amplitude
        .values
        .iter()
        .zip(&phase.values)
        .map(|(&a, &p)| (a * p.cos(), a * p.sin()))
        .unzip();
    ComplexSpectrum::new(amplitude.width, amplitude.height, re, im)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BandId {
    LL,
    HL,
    LH,
    HH,
}

impl BandId {
    pub const ALL: [BandId; 4] = [BandId::LL, BandId::HL, BandId::LH, BandId::HH];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BandId::LL => "LL",
            BandId::HL => "HL",
            BandId::LH => "LH",
            BandId::HH => "HH",
        }
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One level of Haar sub-bands plus the source size needed to undo padding.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletBands {
    pub ll: Plane,
    pub hl: Plane,
    pub lh: Plane,
    pub hh: Plane,
    pub source_width: usize,
    pub source_height: usize,
}

impl WaveletBands {
    pub fn band(&self, id: BandId) -> &Plane {
        match id {
            BandId::LL => &self.ll,
            BandId::HL => &self.hl,
            BandId::LH => &self.lh,
            BandId::HH => &self.hh,
        }
    }

    pub fn band_mut(&mut self, id: BandId) -> &mut Plane {
        match id {
            BandId::LL => &mut self.ll,
            BandId::HL => &mut self.hl,
            BandId::LH => &mut self.lh,
            BandId::HH => &mut self.hh,
        }
    }
}

/// Complex spectrum of a single wavelet band.
#[derive(Clone, Debug, PartialEq)]
pub struct BandSpectrum {
    pub band_id: BandId,
    pub spectrum: ComplexSpectrum,
}

impl BandSpectrum {
    pub fn of(bands: &WaveletBands, band_id: BandId) -> Result<Self> {
        Ok(Self {
            band_id,
            spectrum: fft2(bands.band(band_id))?,
        })
    }

    pub fn amplitude_phase(&self) -> (Plane, Plane) {
        amp_phase(&self.spectrum)
    }
}

/// Orthonormal Haar analysis of an even-sized buffer into `[LL, HL, LH, HH]`.
///
/// For a 2x2 block `[[a, b], [c, d]]`: `LL = (a+b+c+d)/2`, `HL = (a-b+c-d)/2`,
/// `LH = (a+b-c-d)/2`, `HH = (a-b-c+d)/2`.
pub fn haar_analysis(data: &[f64], width: usize, height: usize) -> [Vec<f64>; 4] {
    debug_assert!(width % 2 == 0 && height % 2 == 0);
    let (bw, bh) = (width / 2, height / 2);
    let mut out = [
        vec![0.0; bw * bh],
        vec![0.0; bw * bh],
        vec![0.0; bw * bh],
        vec![0.0; bw * bh],
    ];
    for r in 0..bh {
        for c in 0..bw {
            let a = data[(2 * r) * width + 2 * c];
            let b = data[(2 * r) * width + 2 * c + 1];
            let cc = data[(2 * r + 1) * width + 2 * c];
            let d = data[(2 * r + 1) * width + 2 * c + 1];
            let k = r * bw + c;
            out[0][k] = 0.5 * (a + b + cc + d);
            out[1][k] = 0.5 * (a - b + cc - d);
            out[2][k] = 0.5 * (a + b - cc - d);
            out[3][k] = 0.5 * (a - b - cc + d);
        }
    }
    out
}

/// Exact inverse of [`haar_analysis`]; output is `(2*bw) x (2*bh)`.
pub fn haar_synthesis(bands: [&[f64]; 4], bw: usize, bh: usize) -> Vec<f64> {
    let width = 2 * bw;
    let mut out = vec![0.0; 4 * bw * bh];
    for r in 0..bh {
        for c in 0..bw {
            let k = r * bw + c;
            let (ll, hl, lh, hh) = (bands[0][k], bands[1][k], bands[2][k], bands[3][k]);
            out[(2 * r) * width + 2 * c] = 0.5 * (ll + hl + lh + hh);
            out[(2 * r) * width + 2 * c + 1] = 0.5 * (ll - hl + lh - hh);
            out[(2 * r + 1) * width + 2 * c] = 0.5 * (ll + hl - lh - hh);
            out[(2 * r + 1) * width + 2 * c + 1] = 0.5 * (ll - hl - lh + hh);
        }
    }
    out
}

fn reflect_pad_even(data: &[f64], width: usize, height: usize) -> (Vec<f64>, usize, usize) {
    let pw = width + width % 2;
    let ph = height + height % 2;
    if pw == width && ph == height {
        return (data.to_vec(), width, height);
    }
    let src_col = |c: usize| if c < width { c } else { 2 * (width - 1) - c };
    let src_row = |r: usize| if r < height { r } else { 2 * (height - 1) - r };
    let mut out = Vec::with_capacity(pw * ph);
    for r in 0..ph {
        for c in 0..pw {
            out.push(data[src_row(r) * width + src_col(c)]);
        }
    }
    (out, pw, ph)
}

/// Single-level orthonormal Haar DWT. Odd dimensions are reflect-padded.
pub fn dwt2_haar<F: RealField>(img: &F) -> Result<WaveletBands> {
    let (w, h) = (img.width(), img.height());
    if w < 2 || h < 2 {
        return Err(invalid(format!(
            "Haar DWT needs both dimensions >= 2, got {w}x{h}"
        )));
    }
    check_finite(img.values())?;
    let (padded, pw, ph) = reflect_pad_even(img.values(), w, h);
    let [ll, hl, lh, hh] = haar_analysis(&padded, pw, ph);
    let (bw, bh) = (pw / 2, ph / 2);
    let plane = |values| Plane {
        width: bw,
        height: bh,
        values,
    };
    Ok(WaveletBands {
        ll: plane(ll),
        hl: plane(hl),
        lh: plane(lh),
        hh: plane(hh),
        source_width: w,
        source_height: h,
    })
}

/// Inverse of [`dwt2_haar`], cropping any padding back to the source size.
pub fn idwt2_haar(bands: &WaveletBands) -> Result<ImageGrid> {
    let (bw, bh) = (bands.ll.width, bands.ll.height);
    for id in BandId::ALL {
        let b = bands.band(id);
        if (b.width, b.height) != (bw, bh) || b.values.len() != bw * bh {
            return Err(shape_mismatch(
                format!("{id} band {bw}x{bh}"),
                format!("{}x{}", b.width, b.height),
            ));
        }
    }
    let (w, h) = (bands.source_width, bands.source_height);
    if w.div_ceil(2) != bw || h.div_ceil(2) != bh {
        return Err(shape_mismatch(
            format!("bands {}x{} for a {w}x{h} source", w.div_ceil(2), h.div_ceil(2)),
            format!("{bw}x{bh}"),
        ));
    }
    let full = haar_synthesis(
        [
            &bands.ll.values,
            &bands.hl.values,
            &bands.lh.values,
            &bands.hh.values,
        ],
        bw,
        bh,
    );
    let pw = 2 * bw;
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        out.extend_from_slice(&full[r * pw..r * pw + w]);
    }
    ImageGrid::new(w, h, out)
}

/// Moves the zero-frequency bin to the centre (`floor(n/2)` on each axis).
pub fn fftshift(values: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for r in 0..height {
        for c in 0..width {
            let rr = (r + height / 2) % height;
            let cc = (c + width / 2) % width;
            out[rr * width + cc] = values[r * width + c];
        }
    }
    out
}

/// Signed frequency (cycles per sample) of DFT index `k` on an axis of length `n`.
pub fn signed_frequency(k: usize, n: usize) -> f64 {
    let k = k as f64;
    let n_f = n as f64;
    if k < n_f / 2.0 {
        k / n_f
    } else {
        (k - n_f) / n_f
    }
}
