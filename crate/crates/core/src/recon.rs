//! MLEM and OSEM reconstruction for Poisson emission data.

use crate::error::{invalid, Result};
use crate::grid::ImageGrid;
use crate::projector::{Sinogram, SystemMatrix};

/// Below this a forward projection is treated as zero and the ratio
/// `y / Ax` contributes nothing.
const RATIO_FLOOR: f64 = 1e-12;

fn validate(a: &SystemMatrix, y: &Sinogram, x0: Option<&ImageGrid>) -> Result<()> {
    a.check_sinogram(y)?;
    y.ensure_nonnegative()?;
    if let Some(x0) = x0 {
        a.check_image(x0)?;
        x0.ensure_nonnegative()?;
    }
    Ok(())
}

/// Uniform start whose forward projection carries the measured total counts.
fn initial_image(a: &SystemMatrix, y: &Sinogram, sens: &[f64], x0: Option<&ImageGrid>) -> Vec<f64> {
    if let Some(x0) = x0 {
        return x0.values().to_vec();
    }
    let total_sens: f64 = sens.iter().sum();
    let total = y.total();
    let level = if total > 0.0 && total_sens > 0.0 {
        total / total_sens
    } else {
        1.0
    };
    vec![level; a.n_pixels()]
}

fn ratio(y: f64, ax: f64) -> f64 {
    if ax < RATIO_FLOOR {
        0.0
    } else {
        y / ax
    }
}

fn em_update(x: &mut [f64], back: &[f64], sens: &[f64]) {
    for ((x, &b), &s) in x.iter_mut().zip(back).zip(sens) {
        *x = if s > 0.0 { *x * b / s } else { 0.0 };
    }
}

/// Poisson log-likelihood `sum(y log(Ax) - Ax)` without the constant
/// `log y!` term; `-inf` when a bin with counts has zero expectation.
pub fn log_likelihood(a: &SystemMatrix, y: &Sinogram, x: &ImageGrid) -> Result<f64> {
    a.check_sinogram(y)?;
    a.check_image(x)?;
    let mut ax = vec![0.0; a.n_rays()];
    a.forward_raw(x.values(), &mut ax);
    let mut total = 0.0;
    for (&yi, &m) in y.counts.iter().zip(&ax) {
        if yi > 0.0 {
            if m <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += yi * m.ln();
        }
        total -= m;
    }
    Ok(total)
}

/// Runs `n_iters` MLEM iterations, calling `observe(iter, x)` after each.
pub fn mlem_observed(
    a: &SystemMatrix,
    y: &Sinogram,
    n_iters: usize,
    x0: Option<&ImageGrid>,
    mut observe: impl FnMut(usize, &ImageGrid),
) -> Result<ImageGrid> {
    validate(a, y, x0)?;
    let (w, h) = a.image_dims();
    let sens = a.sensitivity_raw();
    let mut x = initial_image(a, y, &sens, x0);
    let mut ax = vec![0.0; a.n_rays()];
    let mut back = vec![0.0; a.n_pixels()];
    for iter in 0..n_iters {
        a.forward_raw(&x, &mut ax);
        for (r, &yi) in ax.iter_mut().zip(&y.counts) {
            *r = ratio(yi, *r);
        }
        a.backproject_raw(&ax, &mut back);
        em_update(&mut x, &back, &sens);
        observe(iter, &ImageGrid::new(w, h, x.clone())?);
    }
    ImageGrid::new(w, h, x)
}

pub fn mlem(a: &SystemMatrix, y: &Sinogram, n_iters: usize, x0: Option<&ImageGrid>) -> Result<ImageGrid> {
    mlem_observed(a, y, n_iters, x0, |_, _| {})
}

/// Angles `s, s + n, s + 2n, ...` form subset `s`.
pub fn subset_angles(n_angles: usize, n_subsets: usize, subset: usize) -> impl Iterator<Item = usize> {
    (subset..n_angles).step_by(n_subsets)
}

/// Ordered-subsets EM: `n_iters` full passes, each visiting every
/// angle-interleaved subset once.
pub fn osem(
    a: &SystemMatrix,
    y: &Sinogram,
    n_iters: usize,
    n_subsets: usize,
    x0: Option<&ImageGrid>,
) -> Result<ImageGrid> {
    osem_observed(a, y, n_iters, n_subsets, x0, |_, _| {})
}

/// OSEM calling `observe(sub_iteration, x)` after every subset update.
pub fn osem_observed(
    a: &SystemMatrix,
    y: &Sinogram,
    n_iters: usize,
    n_subsets: usize,
    x0: Option<&ImageGrid>,
    mut observe: impl FnMut(usize, &ImageGrid),
) -> Result<ImageGrid> {
    validate(a, y, x0)?;
    if n_subsets == 0 || a.n_angles() % n_subsets != 0 {
        return Err(invalid(format!(
            "{n_subsets} subsets do not divide {} angles",
            a.n_angles()
        )));
    }
    let (w, h) = a.image_dims();
    let full_sens = a.sensitivity_raw();
    let ones = vec![1.0; a.n_rays()];
    let subset_sens: Vec<Vec<f64>> = (0..n_subsets)
        .map(|s| {
            let mut sens = vec![0.0; a.n_pixels()];
            for angle in subset_angles(a.n_angles(), n_subsets, s) {
                a.backproject_rays_into(a.rays_of_angle(angle), &ones, &mut sens);
            }
            sens
        })
        .collect();
    let mut x = initial_image(a, y, &full_sens, x0);
    let mut ratios = vec![0.0; a.n_rays()];
    let mut back = vec![0.0; a.n_pixels()];
    let mut step = 0;
    for _ in 0..n_iters {
        for (s, sens) in subset_sens.iter().enumerate() {
            back.iter_mut().for_each(|b| *b = 0.0);
            for angle in subset_angles(a.n_angles(), n_subsets, s) {
                let rays = a.rays_of_angle(angle);
                for ray in rays.clone() {
                    ratios[ray] = ratio(y.counts[ray], a.ray_sum(ray, &x));
                }
                a.backproject_rays_into(rays, &ratios, &mut back);
            }
            em_update(&mut x, &back, sens);
            observe(step, &ImageGrid::new(w, h, x.clone())?);
            step += 1;
        }
    }
    ImageGrid::new(w, h, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projector::{build_parallel_projector, forward};
    use crate::simulator::{make_phantom, simulate_counts, DegradationConfig, PhantomKind};

    fn identity_system(n: usize) -> SystemMatrix {
        let triplets = (0..(n * n) as u32).map(|i| (i, i, 1.0)).collect();
        SystemMatrix::from_triplets((n, n), n, n, triplets).unwrap()
    }

    #[test]
    fn identity_system_one_iteration_recovers_counts() {
        let a = identity_system(4);
        let counts: Vec<f64> = (0..16).map(|i| (i * 3 % 7) as f64).collect();
        let y = Sinogram::new(4, 4, counts.clone()).unwrap();
        let ones = ImageGrid::filled(4, 4, 1.0).unwrap();
        let x = mlem(&a, &y, 1, Some(&ones)).unwrap();
        assert_eq!(x.values(), &counts[..]);
    }

    #[test]
    fn zero_counts_give_zero_image() {
        let a = build_parallel_projector((16, 16), 8, 16).unwrap();
        let y = Sinogram::zeros(8, 16).unwrap();
        let x = mlem(&a, &y, 1, None).unwrap();
        assert!(x.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_negative_counts_and_bad_subsets() {
        let a = build_parallel_projector((16, 16), 8, 16).unwrap();
        let mut y = Sinogram::zeros(8, 16).unwrap();
        y.counts[3] = -1.0;
        assert!(mlem(&a, &y, 1, None).is_err());
        let y = Sinogram::zeros(8, 16).unwrap();
        assert!(osem(&a, &y, 1, 3, None).is_err());
        assert!(osem(&a, &y, 1, 0, None).is_err());
        let wrong = Sinogram::zeros(4, 16).unwrap();
        assert!(mlem(&a, &wrong, 1, None).is_err());
    }

    #[test]
    fn likelihood_is_monotone_and_image_nonnegative() {
        let a = build_parallel_projector((32, 32), 32, 32).unwrap();
        let p = make_phantom(PhantomKind::EllipseBrain, (32, 32), 9).unwrap();
        let acq = simulate_counts(&a, &p, &DegradationConfig::default()).unwrap();
        let mut lls = Vec::new();
        mlem_observed(&a, &acq.y_full, 30, None, |_, x| {
            assert!(x.min() >= 0.0);
            lls.push(log_likelihood(&a, &acq.y_full, x).unwrap());
        })
        .unwrap();
        for w in lls.windows(2) {
            assert!(w[1] - w[0] >= -1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn single_subset_matches_mlem() {
        let a = build_parallel_projector((16, 16), 16, 16).unwrap();
        let truth = ImageGrid::from_fn(16, 16, |c, r| ((c * r) % 5) as f64 + 0.5).unwrap();
        let y = forward(&a, &truth).unwrap();
        let m = mlem(&a, &y, 10, None).unwrap();
        let o = osem(&a, &y, 10, 1, None).unwrap();
        for (p, q) in m.values().iter().zip(o.values()) {
            assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
        }
    }

    #[test]
    fn osem_preserves_zero_set_and_nonnegativity() {
        let a = build_parallel_projector((16, 16), 16, 16).unwrap();
        let truth = ImageGrid::from_fn(16, 16, |c, _| c as f64).unwrap();
        let y = forward(&a, &truth).unwrap();
        let mut x0 = ImageGrid::filled(16, 16, 1.0).unwrap();
        x0.set(5, 5, 0.0);
        osem_observed(&a, &y, 3, 4, Some(&x0), |_, x| {
            assert!(x.min() >= 0.0);
            assert_eq!(x.get(5, 5), 0.0);
        })
        .unwrap();
    }
}
