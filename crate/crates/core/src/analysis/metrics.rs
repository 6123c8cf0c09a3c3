use serde::Serialize;

use crate::autodiff::{Graph, Tensor};
use crate::error::{invalid, Result};
use crate::grid::ImageGrid;

pub fn rmse(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let se: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((se / a.len() as f64).sqrt())
}

/// `20 log10(max(reference) / RMSE)`; `+inf` for identical images.
pub fn psnr(img: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    let e = rmse(img, reference)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = reference.max();
    if peak <= 0.0 {
        return Err(invalid("PSNR needs a reference with a positive peak"));
    }
    Ok(20.0 * (peak / e).log10())
}

/// Mean SSIM over the valid region (11x11 Gaussian window, sigma 1.5, data
/// range 1); `reference` supplies nothing special beyond symmetry of the
/// formula but is kept second by convention.
pub fn ssim(img: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    img.ensure_same_dims(reference)?;
    if img.width() < crate::autodiff::SSIM_WINDOW || img.height() < crate::autodiff::SSIM_WINDOW {
        return Err(invalid("SSIM needs images of at least 11x11 pixels"));
    }
    let mut g = Graph::inference();
    let a = g.constant(Tensor::from_image(img));
    let b = g.constant(Tensor::from_image(reference));
    let s = g.ssim(a, b);
    Ok(g.data(s)[0])
}

/// Maximum over the pixels selected by `roi`.
pub fn suv_max(img: &ImageGrid, roi: &[bool]) -> Result<f64> {
    if roi.len() != img.len() {
        return Err(crate::error::shape_mismatch(
            format!("{} ROI entries", img.len()),
            format!("{}", roi.len()),
        ));
    }
    img.values()
        .iter()
        .zip(roi)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .reduce(f64::max)
        .ok_or_else(|| invalid("empty ROI"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub rmse: f64,
}

impl ImageMetrics {
    pub fn compute(img: &ImageGrid, reference: &ImageGrid) -> Result<Self> {
        Ok(Self {
            psnr: psnr(img, reference)?,
            ssim: ssim(img, reference)?,
            rmse: rmse(img, reference)?,
        })
    }
}
