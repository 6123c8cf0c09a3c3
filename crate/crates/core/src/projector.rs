//! Parallel-beam system matrix with exact intersection-length weights.
//!
//! The image occupies `[-W/2, W/2] x [-H/2, H/2]` in pixel units, column `c`
//! spanning `x in [-W/2 + c, -W/2 + c + 1]` and row `r` spanning
//! `y in [-H/2 + r, -H/2 + r + 1]`. Ray `(angle i, bin j)` is the line
//! `x cos(theta) + y sin(theta) = t` with `theta = i*pi/n_angles` and
//! `t = j - (n_bins - 1)/2`. Rays are numbered `i * n_bins + j`, matching the
//! row-major sinogram layout.

use std::f64::consts::PI;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use crate::error::{check_finite, invalid, shape_mismatch, Error, Result};
use crate::grid::ImageGrid;
use crate::io::atomic_write;

const MAGIC: &[u8; 4] = b"PSYS";
const VERSION: u16 = 1;
const GEOM_EPS: f64 = 1e-12;

/// Projection-domain data indexed by (angle, detector bin), row-major by angle.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub n_angles: usize,
    pub n_bins: usize,
    pub counts: Vec<f64>,
}

impl Sinogram {
    pub fn new(n_angles: usize, n_bins: usize, counts: Vec<f64>) -> Result<Self> {
        if n_angles == 0 || n_bins == 0 {
            return Err(invalid("sinogram dimensions must be nonzero"));
        }
        if counts.len() != n_angles * n_bins {
            return Err(shape_mismatch(
                format!("{n_angles} angles x {n_bins} bins"),
                format!("{} counts", counts.len()),
            ));
        }
        check_finite(&counts)?;
        Ok(Self {
            n_angles,
            n_bins,
            counts,
        })
    }

    pub fn zeros(n_angles: usize, n_bins: usize) -> Result<Self> {
        Self::new(n_angles, n_bins, vec![0.0; n_angles * n_bins])
    }

    pub fn ensure_nonnegative(&self) -> Result<()> {
        match self.counts.iter().position(|&c| c < 0.0) {
            Some(i) => Err(invalid(format!(
                "sinogram has negative count {} at bin {i}",
                self.counts[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn shape_string(&self) -> String {
        format!("{} angles x {} bins", self.n_angles, self.n_bins)
    }
}

/// Sparse system matrix in compressed-row form (one row per ray).
#[derive(Clone, Debug, PartialEq)]
pub struct SystemMatrix {
    width: usize,
    height: usize,
    n_angles: usize,
    n_bins: usize,
    row_ptr: Vec<usize>,
    pixels: Vec<u32>,
    weights: Vec<f64>,
}

impl SystemMatrix {
    /// Builds a matrix from `(ray, pixel, weight)` triples. Duplicate
    /// `(ray, pixel)` pairs are summed.
    pub fn from_triplets(
        image_dims: (usize, usize),
        n_angles: usize,
        n_bins: usize,
        mut triplets: Vec<(u32, u32, f64)>,
    ) -> Result<Self> {
        let (width, height) = image_dims;
        if width == 0 || height == 0 {
            return Err(invalid("image dimensions must be nonzero"));
        }
        if n_angles == 0 || n_bins == 0 {
            return Err(invalid("need at least one angle and one detector bin"));
        }
        let n_rays = n_angles * n_bins;
        let n_pixels = width * height;
        for &(ray, pixel, w) in &triplets {
            if ray as usize >= n_rays || pixel as usize >= n_pixels {
                return Err(invalid(format!(
                    "entry ({ray}, {pixel}) outside {n_rays} rays x {n_pixels} pixels"
                )));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(invalid(format!("weight {w} must be finite and >= 0")));
            }
        }
        triplets.sort_by_key(|&(r, p, _)| (r, p));
        let mut row_ptr = vec![0usize; n_rays + 1];
        let mut pixels = Vec::with_capacity(triplets.len());
        let mut weights: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(u32, u32)> = None;
        for (ray, pixel, w) in triplets {
            if last == Some((ray, pixel)) {
                *weights.last_mut().unwrap() += w;
                continue;
            }
            last = Some((ray, pixel));
            pixels.push(pixel);
            weights.push(w);
            row_ptr[ray as usize + 1] += 1;
        }
        for i in 0..n_rays {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            width,
            height,
            n_angles,
            n_bins,
            row_ptr,
            pixels,
            weights,
        })
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_rays(&self) -> usize {
        self.n_angles * self.n_bins
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    /// Pixel indices and weights of one ray.
    pub fn row(&self, ray: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[ray]..self.row_ptr[ray + 1];
        (&self.pixels[span.clone()], &self.weights[span])
    }

    /// Rays belonging to one projection angle.
    pub fn rays_of_angle(&self, angle: usize) -> Range<usize> {
        angle * self.n_bins..(angle + 1) * self.n_bins
    }

    pub fn triplets(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (0..self.n_rays()).flat_map(move |ray| {
            let (p, w) = self.row(ray);
            p.iter().zip(w).map(move |(&p, &w)| (ray as u32, p, w))
        })
    }

    pub fn sinogram_shape(&self) -> String {
        format!("{} angles x {} bins", self.n_angles, self.n_bins)
    }

    pub fn image_shape(&self) -> String {
        format!("{}x{}", self.width, self.height)
    }

    pub fn ray_sum(&self, ray: usize, x: &[f64]) -> f64 {
        let (p, w) = self.row(ray);
        p.iter().zip(w).map(|(&p, &w)| w * x[p as usize]).sum()
    }

    /// `out = A x` on raw buffers.
    pub fn forward_raw(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_pixels());
        for (ray, o) in out.iter_mut().enumerate() {
            *o = self.ray_sum(ray, x);
        }
    }

    /// `out += A^T y` restricted to `rays`.
    pub fn backproject_rays_into(&self, rays: Range<usize>, y: &[f64], out: &mut [f64]) {
        for ray in rays {
            let v = y[ray];
            if v == 0.0 {
                continue;
            }
            let (p, w) = self.row(ray);
            for (&p, &w) in p.iter().zip(w) {
                out[p as usize] += w * v;
            }
        }
    }

    /// `out = A^T y` on raw buffers.
    pub fn backproject_raw(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.n_rays());
        out.iter_mut().for_each(|o| *o = 0.0);
        self.backproject_rays_into(0..self.n_rays(), y, out);
    }

    /// Per-pixel total intersection length, `A^T 1`.
    pub fn sensitivity_raw(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_pixels()];
        self.backproject_raw(&vec![1.0; self.n_rays()], &mut out);
        out
    }

    pub(crate) fn check_image(&self, x: &ImageGrid) -> Result<()> {
        if x.dims() != self.image_dims() {
            return Err(shape_mismatch(
                format!("image {}", self.image_shape()),
                format!("image {}x{}", x.width(), x.height()),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_sinogram(&self, y: &Sinogram) -> Result<()> {
        if (y.n_angles, y.n_bins) != (self.n_angles, self.n_bins) {
            return Err(shape_mismatch(
                format!("sinogram {}", self.sinogram_shape()),
                format!("sinogram {}", y.shape_string()),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(26 + self.nnz() * 16);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        for d in [self.width, self.height, self.n_angles, self.n_bins] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.nnz() as u64).to_le_bytes());
        for (ray, pixel, w) in self.triplets() {
            buf.extend_from_slice(&ray.to_le_bytes());
            buf.extend_from_slice(&pixel.to_le_bytes());
            buf.extend_from_slice(&w.to_le_bytes());
        }
        atomic_write(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let fmt = |m: &str| Error::Format(format!("{}: {m}", path.display()));
        if bytes.len() < 30 || &bytes[..4] != MAGIC {
            return Err(fmt("not a PSYS system-matrix file"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let (w, h, na, nb) = (u32_at(6), u32_at(10), u32_at(14), u32_at(18));
        let count = u64::from_le_bytes(bytes[22..30].try_into().unwrap()) as usize;
        if bytes.len() != 30 + count * 16 {
            return Err(fmt("truncated entry table"));
        }
        let triplets = (0..count)
            .map(|k| {
                let o = 30 + 16 * k;
                (
                    u32_at(o),
                    u32_at(o + 4),
                    f64::from_le_bytes(bytes[o + 8..o + 16].try_into().unwrap()),
                )
            })
            .collect();
        Self::from_triplets((w as usize, h as usize), na as usize, nb as usize, triplets)
    }
}

/// Intersection segments of one ray with the pixel grid, as `(pixel, length)`.
fn trace_ray(width: usize, height: usize, theta: f64, t: f64) -> Vec<(u32, f64)> {
    let (w, h) = (width as f64, height as f64);
    let (mut cos, mut sin) = (theta.cos(), theta.sin());
    if cos.abs() < GEOM_EPS {
        cos = 0.0;
    }
    if sin.abs() < GEOM_EPS {
        sin = 0.0;
    }
    let (px, py) = (t * cos, t * sin);
    let (dx, dy) = (-sin, cos);

    let mut s_lo = f64::NEG_INFINITY;
    let mut s_hi = f64::INFINITY;
    for (p, d, half) in [(px, dx, w / 2.0), (py, dy, h / 2.0)] {
        if d == 0.0 {
            if p < -half || p > half {
                return Vec::new();
            }
        } else {
            let a = (-half - p) / d;
            let b = (half - p) / d;
            s_lo = s_lo.max(a.min(b));
            s_hi = s_hi.min(a.max(b));
        }
    }
    if s_hi - s_lo <= GEOM_EPS {
        return Vec::new();
    }

    let mut cuts = vec![s_lo, s_hi];
    for (p, d, n, half) in [(px, dx, width, w / 2.0), (py, dy, height, h / 2.0)] {
        if d == 0.0 {
            continue;
        }
        for k in 0..=n {
            let s = (-half + k as f64 - p) / d;
            if s > s_lo && s < s_hi {
                cuts.push(s);
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut segments: Vec<(u32, f64)> = Vec::new();
    for pair in cuts.windows(2) {
        let len = pair[1] - pair[0];
        if len <= GEOM_EPS {
            continue;
        }
        let mid = 0.5 * (pair[0] + pair[1]);
        let x = px + mid * dx + w / 2.0;
        let y = py + mid * dy + h / 2.0;
        let col = (x.floor().max(0.0) as usize).min(width - 1);
        let row = (y.floor().max(0.0) as usize).min(height - 1);
        segments.push(((row * width + col) as u32, len));
    }
    segments
}

/// Builds the parallel-beam matrix with angles uniformly spaced over `[0, pi)`
/// and unit-width detector bins centred on the rotation axis.
pub fn build_parallel_projector(
    image_dims: (usize, usize),
    n_angles: usize,
    n_bins: usize,
) -> Result<SystemMatrix> {
    let (width, height) = image_dims;
    if width == 0 || height == 0 {
        return Err(invalid("zero-sized image"));
    }
    if n_angles == 0 || n_bins == 0 {
        return Err(invalid("need at least one angle and one detector bin"));
    }
    let mut triplets = Vec::new();
    for a in 0..n_angles {
        let theta = PI * a as f64 / n_angles as f64;
        for b in 0..n_bins {
            let t = b as f64 - (n_bins as f64 - 1.0) / 2.0;
            let ray = (a * n_bins + b) as u32;
            for (pixel, len) in trace_ray(width, height, theta, t) {
                triplets.push((ray, pixel, len));
            }
        }
    }
    SystemMatrix::from_triplets(image_dims, n_angles, n_bins, triplets)
}

fn cache_path(dir: &Path, image_dims: (usize, usize), n_angles: usize, n_bins: usize) -> PathBuf {
    dir.join(format!(
        "psys_{}x{}_{}a_{}b.bin",
        image_dims.0, image_dims.1, n_angles, n_bins
    ))
}

/// Loads the matrix for this geometry from `dir`, building and caching it on a miss.
pub fn load_or_build(
    dir: &Path,
    image_dims: (usize, usize),
    n_angles: usize,
    n_bins: usize,
) -> Result<SystemMatrix> {
    let path = cache_path(dir, image_dims, n_angles, n_bins);
    if path.exists() {
        let m = SystemMatrix::load(&path)?;
        if m.image_dims() == image_dims && m.n_angles() == n_angles && m.n_bins() == n_bins {
            return Ok(m);
        }
    }
    let m = build_parallel_projector(image_dims, n_angles, n_bins)?;
    fs::create_dir_all(dir)?;
    m.save(&path)?;
    Ok(m)
}

/// `A x` as a sinogram.
pub fn forward(a: &SystemMatrix, x: &ImageGrid) -> Result<Sinogram> {
    a.check_image(x)?;
    let mut out = vec![0.0; a.n_rays()];
    a.forward_raw(x.values(), &mut out);
    Sinogram::new(a.n_angles, a.n_bins, out)
}

/// `A^T y` as an image.
pub fn backproject(a: &SystemMatrix, y: &Sinogram) -> Result<ImageGrid> {
    a.check_sinogram(y)?;
    let mut out = vec![0.0; a.n_pixels()];
    a.backproject_raw(&y.counts, &mut out);
    ImageGrid::new(a.width, a.height, out)
}

/// The sensitivity image `A^T 1`.
pub fn sensitivity(a: &SystemMatrix) -> Result<ImageGrid> {
    ImageGrid::new(a.width, a.height, a.sensitivity_raw())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn single_pixel_single_ray() {
        let a = build_parallel_projector((1, 1), 1, 1).unwrap();
        let t: Vec<_> = a.triplets().collect();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].0, 0);
        assert_eq!(t[0].1, 0);
        assert!((t[0].2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_zero_sized_image() {
        assert!(build_parallel_projector((0, 4), 4, 4).is_err());
        assert!(build_parallel_projector((4, 4), 0, 4).is_err());
    }

    #[test]
    fn column_sums_positive_inside_support() {
        let a = build_parallel_projector((32, 32), 48, 46).unwrap();
        // Direct summation over the triple list.
        let mut col = vec![0.0; 32 * 32];
        for (_, p, w) in a.triplets() {
            col[p as usize] += w;
        }
        assert!(col.iter().all(|&c| c > 0.0));
        let sens = a.sensitivity_raw();
        for (c, s) in col.iter().zip(&sens) {
            assert!((c - s).abs() < 1e-12);
        }
    }

    #[test]
    fn ray_weights_sum_to_chord_length() {
        let dims = (12, 9);
        let a = build_parallel_projector(dims, 17, 16).unwrap();
        for ray in 0..a.n_rays() {
            let (_, w) = a.row(ray);
            let s: f64 = w.iter().sum();
            // Chord through the rectangle computed in closed form.
            let (ang, bin) = (ray / 16, ray % 16);
            let theta = PI * ang as f64 / 17.0;
            let t = bin as f64 - 7.5;
            let chord = closed_form_chord(12.0, 9.0, theta, t);
            assert!(
                (s - chord).abs() <= 1e-6 * chord.max(1e-9),
                "ray {ray}: {s} vs {chord}"
            );
        }
    }

    /// Chord length of the line x cos + y sin = t through the centred box.
    fn closed_form_chord(w: f64, h: f64, theta: f64, t: f64) -> f64 {
        let (c, s) = (theta.cos(), theta.sin());
        // Intersect with the four edges, keep points on the boundary.
        let mut pts: Vec<(f64, f64)> = Vec::new();
        if s.abs() > 1e-12 {
            for x in [-w / 2.0, w / 2.0] {
                let y = (t - x * c) / s;
                if y >= -h / 2.0 - 1e-12 && y <= h / 2.0 + 1e-12 {
                    pts.push((x, y));
                }
            }
        }
        if c.abs() > 1e-12 {
            for y in [-h / 2.0, h / 2.0] {
                let x = (t - y * s) / c;
                if x >= -w / 2.0 - 1e-12 && x <= w / 2.0 + 1e-12 {
                    pts.push((x, y));
                }
            }
        }
        let mut best: f64 = 0.0;
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let d = ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
                best = best.max(d);
            }
        }
        best
    }

    #[test]
    fn adjoint_identity_against_dense_matrix() {
        let a = build_parallel_projector((16, 16), 24, 23).unwrap();
        let (nr, np) = (a.n_rays(), a.n_pixels());
        let mut dense = vec![0.0; nr * np];
        for (r, p, w) in a.triplets() {
            dense[r as usize * np + p as usize] = w;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x: Vec<f64> = (0..np).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..nr).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut ax = vec![0.0; nr];
            a.forward_raw(&x, &mut ax);
            let dense_ax: Vec<f64> = (0..nr).map(|r| dot(&dense[r * np..(r + 1) * np], &x)).collect();
            for (u, v) in ax.iter().zip(&dense_ax) {
                assert!((u - v).abs() < 1e-12);
            }
            let mut aty = vec![0.0; np];
            a.backproject_raw(&y, &mut aty);
            let lhs = dot(&ax, &y);
            let rhs = dot(&x, &aty);
            let scale = (dot(&ax, &ax).sqrt() * dot(&y, &y).sqrt()).max(1e-300);
            assert!((lhs - rhs).abs() / scale < 1e-9);
        }
    }

    #[test]
    fn zero_and_hot_pixel_projections() {
        let a = build_parallel_projector((16, 16), 16, 16).unwrap();
        let zero = ImageGrid::zeros(16, 16).unwrap();
        assert!(forward(&a, &zero).unwrap().counts.iter().all(|&c| c == 0.0));

        let (col, row) = (11usize, 4usize);
        let mut hot = ImageGrid::zeros(16, 16).unwrap();
        hot.set(col, row, 1.0);
        let sino = forward(&a, &hot).unwrap();
        let (cx, cy) = (col as f64 - 8.0 + 0.5, row as f64 - 8.0 + 0.5);
        for ang in 0..16 {
            let theta = PI * ang as f64 / 16.0;
            // The pixel centre projects to t; only bins within the pixel's
            // half-diagonal of t may be hit.
            let t = cx * theta.cos() + cy * theta.sin();
            let reach = (theta.cos().abs() + theta.sin().abs()) / 2.0 + 0.5;
            let mut total = 0.0;
            for bin in 0..16 {
                let v = sino.counts[ang * 16 + bin];
                let tb = bin as f64 - 7.5;
                if (tb - t).abs() > reach + 1e-9 {
                    assert_eq!(v, 0.0, "angle {ang} bin {bin}");
                }
                total += v;
            }
            assert!(total > 0.0);
        }
    }

    #[test]
    fn linearity_and_shape_errors() {
        let a = build_parallel_projector((8, 8), 8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x1 = ImageGrid::from_fn(8, 8, |_, _| rng.gen_range(0.0..1.0)).unwrap();
        let x2 = ImageGrid::from_fn(8, 8, |_, _| rng.gen_range(0.0..1.0)).unwrap();
        let combo = x1.zip_map(&x2, |a, b| 2.0 * a - 3.0 * b).unwrap();
        let f = forward(&a, &combo).unwrap();
        let (f1, f2) = (forward(&a, &x1).unwrap(), forward(&a, &x2).unwrap());
        for k in 0..f.counts.len() {
            assert!((f.counts[k] - (2.0 * f1.counts[k] - 3.0 * f2.counts[k])).abs() < 1e-10);
        }
        let wrong = ImageGrid::zeros(8, 7).unwrap();
        assert!(forward(&a, &wrong).is_err());
        let wrong_sino = Sinogram::zeros(8, 9).unwrap();
        assert!(backproject(&a, &wrong_sino).is_err());
    }

    #[test]
    fn backprojection_of_ones_is_sensitivity() {
        let a = build_parallel_projector((10, 10), 12, 14).unwrap();
        let ones = Sinogram::new(12, 14, vec![1.0; 12 * 14]).unwrap();
        let bp = backproject(&a, &ones).unwrap();
        let mut expect = vec![0.0; 100];
        for (_, p, w) in a.triplets() {
            expect[p as usize] += w;
        }
        for (u, v) in bp.values().iter().zip(&expect) {
            assert!((u - v).abs() < 1e-12);
        }
        let zero = backproject(&a, &Sinogram::zeros(12, 14).unwrap()).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn build_is_deterministic_and_cache_round_trips() {
        let a = build_parallel_projector((9, 7), 6, 11).unwrap();
        let b = build_parallel_projector((9, 7), 6, 11).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let c = load_or_build(dir.path(), (9, 7), 6, 11).unwrap();
        assert_eq!(a, c);
        let d = load_or_build(dir.path(), (9, 7), 6, 11).unwrap();
        assert_eq!(a, d);
    }

    #[test]
    fn from_triplets_validates() {
        assert!(SystemMatrix::from_triplets((2, 2), 1, 4, vec![(0, 0, -1.0)]).is_err());
        assert!(SystemMatrix::from_triplets((2, 2), 1, 4, vec![(4, 0, 1.0)]).is_err());
        let m = SystemMatrix::from_triplets((2, 2), 1, 4, vec![(0, 0, 1.0), (0, 0, 0.5)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.row(0).1, &[1.5]);
    }
}
