//! Differentiable operations. Shape misuse is a programming error and panics
//! with the offending shapes; data-dependent validation happens at the
//! network boundary.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::rc::Rc;
use std::sync::Arc;

use crate::projector::SystemMatrix;
use crate::spectral::{fft2_in_place, haar_analysis, haar_synthesis};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

const ORIGIN_GUARD: f64 = 1e-300;
const UNIT_CIRCLE_GUARD: f64 = 1e-12;

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).expect("internal shape bookkeeping")
}

/// Mirror index without edge repetition (`-1 -> 1`, `n -> n - 2`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// `(outer, len, inner)` split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

impl Graph {
    fn same_shape(&self, a: Var, b: Var, op: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{op}: shapes {:?} and {:?} differ",
            self.shape(a),
            self.shape(b)
        );
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var {
        let x = self.data(a).to_vec();
        let y: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let shape = self.shape(a).to_vec();
        let ys = y.clone();
        self.push(tensor(&shape, y), &[a], move |g| {
            vec![g.iter().zip(&x).zip(&ys).map(|((g, &x), &y)| g * df(x, y)).collect()]
        })
    }

    // --- elementwise ---------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let y = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push(tensor(&shape, y), &[a, b], |g| vec![g.to_vec(), g.to_vec()])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let y = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        self.push(tensor(&shape, y), &[a, b], |g| {
            vec![g.to_vec(), g.iter().map(|v| -v).collect()]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let (x, z) = (self.data(a).to_vec(), self.data(b).to_vec());
        let y = x.iter().zip(&z).map(|(p, q)| p * q).collect();
        let shape = self.shape(a).to_vec();
        self.push(tensor(&shape, y), &[a, b], move |g| {
            vec![
                g.iter().zip(&z).map(|(g, q)| g * q).collect(),
                g.iter().zip(&x).map(|(g, p)| g * p).collect(),
            ]
        })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "div");
        let (x, z) = (self.data(a).to_vec(), self.data(b).to_vec());
        let y = x.iter().zip(&z).map(|(p, q)| p / q).collect();
        let shape = self.shape(a).to_vec();
        self.push(tensor(&shape, y), &[a, b], move |g| {
            vec![
                g.iter().zip(&z).map(|(g, q)| g / q).collect(),
                g.iter()
                    .zip(&x)
                    .zip(&z)
                    .map(|((g, p), q)| -g * p / (q * q))
                    .collect(),
            ]
        })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = self.data(a).iter().map(|v| v * c).collect();
        let shape = self.shape(a).to_vec();
        self.push(tensor(&shape, y), &[a], move |g| vec![g.iter().map(|v| v * c).collect()])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let y = self.data(a).iter().map(|v| v + c).collect();
        let shape = self.shape(a).to_vec();
        self.push(tensor(&shape, y), &[a], |g| vec![g.to_vec()])
    }

    /// `a * s` for a one-element `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.value(s).len(), 1, "mul_scalar: factor must hold one value");
        let x = self.data(a).to_vec();
        let k = self.data(s)[0];
        let y = x.iter().map(|v| v * k).collect();
        let shape = self.shape(a).to_vec();
        self.push(tensor(&shape, y), &[a, s], move |g| {
            vec![
                g.iter().map(|g| g * k).collect(),
                vec![g.iter().zip(&x).map(|(g, x)| g * x).sum()],
            ]
        })
    }

    /// Multiplies by `w` broadcast along `axis` (`w.len() == shape[axis]`).
    pub fn mul_along(&mut self, a: Var, w: Var, axis: usize) -> Var {
        let (outer, len, inner) = split_axis(self.shape(a), axis);
        assert_eq!(self.value(w).len(), len, "mul_along: weight length");
        let (x, k) = (self.data(a).to_vec(), self.data(w).to_vec());
        let mut y = x.clone();
        for o in 0..outer {
            for c in 0..len {
                let base = (o * len + c) * inner;
                y[base..base + inner].iter_mut().for_each(|v| *v *= k[c]);
            }
        }
        let shape = self.shape(a).to_vec();
        self.push(tensor(&shape, y), &[a, w], move |g| {
            let mut ga = g.to_vec();
            let mut gw = vec![0.0; len];
            for o in 0..outer {
                for c in 0..len {
                    let base = (o * len + c) * inner;
                    for i in base..base + inner {
                        ga[i] *= k[c];
                        gw[c] += g[i] * x[i];
                    }
                }
            }
            vec![ga, gw]
        })
    }

    /// Adds `b` broadcast along `axis`.
    pub fn add_along(&mut self, a: Var, b: Var, axis: usize) -> Var {
        let (outer, len, inner) = split_axis(self.shape(a), axis);
        assert_eq!(self.value(b).len(), len, "add_along: bias length");
        let k = self.data(b).to_vec();
        let mut y = self.data(a).to_vec();
        for o in 0..outer {
            for c in 0..len {
                let base = (o * len + c) * inner;
                y[base..base + inner].iter_mut().for_each(|v| *v += k[c]);
            }
        }
        let shape = self.shape(a).to_vec();
        self.push(tensor(&shape, y), &[a, b], move |g| {
            let mut gb = vec![0.0; len];
            for o in 0..outer {
                for c in 0..len {
                    let base = (o * len + c) * inner;
                    gb[c] += g[base..base + inner].iter().sum::<f64>();
                }
            }
            vec![g.to_vec(), gb]
        })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| x * std_normal_cdf(x),
            |x, _| std_normal_cdf(x) + x * std_normal_pdf(x),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, |x, _| -x.sin())
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, f64::sin, |x, _| x.cos())
    }

    pub fn ln_1p(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln_1p, |x, _| 1.0 / (1.0 + x))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, |x, _| 2.0 * x)
    }

    /// Elementwise `atan2(y, x)` in `(-pi, pi]`; the gradient at the origin is 0.
    pub fn atan2(&mut self, y: Var, x: Var) -> Var {
        self.same_shape(y, x, "atan2");
        let (ys, xs) = (self.data(y).to_vec(), self.data(x).to_vec());
        let out = ys
            .iter()
            .zip(&xs)
            .map(|(&b, &a)| crate::spectral::principal_phase(a, b))
            .collect();
        let shape = self.shape(y).to_vec();
        self.push(tensor(&shape, out), &[y, x], move |g| {
            let mut gy = vec![0.0; g.len()];
            let mut gx = vec![0.0; g.len()];
            for i in 0..g.len() {
                let r2 = xs[i] * xs[i] + ys[i] * ys[i];
                if r2 > ORIGIN_GUARD {
                    gy[i] = g[i] * xs[i] / r2;
                    gx[i] = -g[i] * ys[i] / r2;
                }
            }
            vec![gy, gx]
        })
    }

    /// Elementwise `sqrt(re^2 + im^2)`; the gradient at zero is 0.
    pub fn magnitude(&mut self, re: Var, im: Var) -> Var {
        self.same_shape(re, im, "magnitude");
        let (r, i) = (self.data(re).to_vec(), self.data(im).to_vec());
        let m: Vec<f64> = r.iter().zip(&i).map(|(a, b)| a.hypot(*b)).collect();
        let ms = m.clone();
        let shape = self.shape(re).to_vec();
        self.push(tensor(&shape, m), &[re, im], move |g| {
            let mut gr = vec![0.0; g.len()];
            let mut gi = vec![0.0; g.len()];
            for k in 0..g.len() {
                if ms[k] > ORIGIN_GUARD {
                    gr[k] = g[k] * r[k] / ms[k];
                    gi[k] = g[k] * i[k] / ms[k];
                }
            }
            vec![gr, gi]
        })
    }

    /// Projects `(c, s)` onto the unit circle; where the norm vanishes the
    /// fallback pair `(fc, fs)` is passed through. Output is `[2, ..shape]`.
    pub fn unit_circle(&mut self, c: Var, s: Var, fc: Var, fs: Var) -> Var {
        for v in [s, fc, fs] {
            self.same_shape(c, v, "unit_circle");
        }
        let (cv, sv) = (self.data(c).to_vec(), self.data(s).to_vec());
        let (fcv, fsv) = (self.data(fc).to_vec(), self.data(fs).to_vec());
        let n = cv.len();
        let mut out = vec![0.0; 2 * n];
        let norms: Vec<f64> = cv.iter().zip(&sv).map(|(a, b)| a.hypot(*b)).collect();
        for k in 0..n {
            if norms[k] > UNIT_CIRCLE_GUARD {
                out[k] = cv[k] / norms[k];
                out[n + k] = sv[k] / norms[k];
            } else {
                out[k] = fcv[k];
                out[n + k] = fsv[k];
            }
        }
        let mut shape = vec![2];
        shape.extend_from_slice(self.shape(c));
        self.push(tensor(&shape, out), &[c, s, fc, fs], move |g| {
            let (gc_out, gs_out) = g.split_at(n);
            let mut gc = vec![0.0; n];
            let mut gs = vec![0.0; n];
            let mut gfc = vec![0.0; n];
            let mut gfs = vec![0.0; n];
            for k in 0..n {
                let r = norms[k];
                if r > UNIT_CIRCLE_GUARD {
                    let r3 = r * r * r;
                    let (a, b) = (cv[k], sv[k]);
                    gc[k] = (gc_out[k] * b * b - gs_out[k] * a * b) / r3;
                    gs[k] = (-gc_out[k] * a * b + gs_out[k] * a * a) / r3;
                } else {
                    gfc[k] = gc_out[k];
                    gfs[k] = gs_out[k];
                }
            }
            vec![gc, gs, gfc, gfs]
        })
    }

    // --- shape ---------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.value(a).len(), "reshape {:?} -> {shape:?}", self.shape(a));
        let y = self.data(a).to_vec();
        self.push(tensor(shape, y), &[a], |g| vec![g.to_vec()])
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = self.shape(parts[0]).to_vec();
        let (outer, _, inner) = split_axis(&first, axis);
        let lens: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let s = self.shape(p);
                assert!(
                    s.len() == first.len()
                        && s[..axis] == first[..axis]
                        && s[axis + 1..] == first[axis + 1..],
                    "concat: {s:?} incompatible with {first:?} on axis {axis}"
                );
                s[axis]
            })
            .collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &l) in parts.iter().zip(&lens) {
                let d = self.data(p);
                out.extend_from_slice(&d[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(tensor(&shape, out), parts, move |g| {
            let mut grads: Vec<Vec<f64>> = lens.iter().map(|l| Vec::with_capacity(outer * l * inner)).collect();
            let mut pos = 0;
            for _ in 0..outer {
                for (gp, &l) in grads.iter_mut().zip(&lens) {
                    gp.extend_from_slice(&g[pos..pos + l * inner]);
                    pos += l * inner;
                }
            }
            grads
        })
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let shape_in = self.shape(a).to_vec();
        let (outer, full, inner) = split_axis(&shape_in, axis);
        assert!(start + len <= full, "narrow {start}+{len} beyond {full}");
        let d = self.data(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut shape = shape_in;
        shape[axis] = len;
        let n_in = outer * full * inner;
        self.push(tensor(&shape, out), &[a], move |g| {
            let mut ga = vec![0.0; n_in];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                ga[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![ga]
        })
    }

    // --- reductions and losses -----------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        let n = self.value(a).len();
        self.push(Tensor::scalar(s), &[a], move |g| vec![vec![g[0]; n]])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean Huber loss in the `0.5 d^2 / delta` / `|d| - 0.5 delta` form.
    pub fn smooth_l1(&mut self, a: Var, b: Var, delta: f64) -> Var {
        self.same_shape(a, b, "smooth_l1");
        assert!(delta > 0.0, "smooth_l1 needs delta > 0");
        let d: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        let n = d.len() as f64;
        let loss = d
            .iter()
            .map(|&v| {
                if v.abs() < delta {
                    0.5 * v * v / delta
                } else {
                    v.abs() - 0.5 * delta
                }
            })
            .sum::<f64>()
            / n;
        self.push(Tensor::scalar(loss), &[a, b], move |g| {
            let ga: Vec<f64> = d
                .iter()
                .map(|&v| g[0] * if v.abs() < delta { v / delta } else { v.signum() } / n)
                .collect();
            let gb = ga.iter().map(|v| -v).collect();
            vec![ga, gb]
        })
    }

    /// Mean absolute difference.
    pub fn l1(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "l1");
        let d: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        let n = d.len() as f64;
        let loss = d.iter().map(|v| v.abs()).sum::<f64>() / n;
        self.push(Tensor::scalar(loss), &[a, b], move |g| {
            let ga: Vec<f64> = d
                .iter()
                .map(|&v| if v == 0.0 { 0.0 } else { g[0] * v.signum() / n })
                .collect();
            let gb = ga.iter().map(|v| -v).collect();
            vec![ga, gb]
        })
    }

    // --- linear maps ---------------------------------------------------

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul: {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (x, w) = (self.data(a).to_vec(), self.data(b).to_vec());
        let mut y = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut y[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = x[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for (r, &bv) in row.iter_mut().zip(&w[p * n..(p + 1) * n]) {
                    *r += aip * bv;
                }
            }
        }
        self.push(tensor(&[m, n], y), &[a, b], move |g| {
            let mut ga = vec![0.0; m * k];
            let mut gb = vec![0.0; k * n];
            for i in 0..m {
                let gi = &g[i * n..(i + 1) * n];
                for p in 0..k {
                    let brow = &w[p * n..(p + 1) * n];
                    ga[i * k + p] = gi.iter().zip(brow).map(|(a, b)| a * b).sum();
                    let aip = x[i * k + p];
                    for (gbv, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(gi) {
                        *gbv += aip * gv;
                    }
                }
            }
            vec![ga, gb]
        })
    }

    /// 1x1 convolution `[Ci, H, W] -> [Co, H, W]` with weight `[Co, Ci]`.
    pub fn conv2d_pointwise(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "conv2d_pointwise expects [C, H, W], got {s:?}");
        let co = self.shape(weight)[0];
        let flat = self.reshape(x, &[s[0], s[1] * s[2]]);
        let y = self.matmul(weight, flat);
        let y = self.reshape(y, &[co, s[1], s[2]]);
        match bias {
            Some(b) => self.add_along(y, b, 0),
            None => y,
        }
    }

    /// Depthwise `k x k` convolution with dilation and reflect padding;
    /// `x: [C, H, W]`, `kernel: [C, k, k]` (odd `k`).
    pub fn conv2d_depthwise(&mut self, x: Var, kernel: Var, dilation: usize, bias: Option<Var>) -> Var {
        let s = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        assert!(
            s.len() == 3 && ks.len() == 3 && ks[0] == s[0] && ks[1] == ks[2] && ks[1] % 2 == 1,
            "conv2d_depthwise: input {s:?}, kernel {ks:?}"
        );
        let (c, h, w, k) = (s[0], s[1], s[2], ks[1]);
        let half = (k / 2) as isize;
        let d = dilation as isize;
        // Source row/column for every (output position, tap).
        let rows: Vec<usize> = (0..h)
            .flat_map(|i| (0..k).map(move |p| reflect(i as isize + (p as isize - half) * d, h)))
            .collect();
        let cols: Vec<usize> = (0..w)
            .flat_map(|j| (0..k).map(move |q| reflect(j as isize + (q as isize - half) * d, w)))
            .collect();
        let rows = Rc::new(rows);
        let cols = Rc::new(cols);
        let (xv, kv) = (self.data(x).to_vec(), self.data(kernel).to_vec());
        let mut y = vec![0.0; c * h * w];
        for ch in 0..c {
            let img = &xv[ch * h * w..(ch + 1) * h * w];
            let ker = &kv[ch * k * k..(ch + 1) * k * k];
            let out = &mut y[ch * h * w..(ch + 1) * h * w];
            for i in 0..h {
                for p in 0..k {
                    let src_row = &img[rows[i * k + p] * w..][..w];
                    for j in 0..w {
                        let mut acc = 0.0;
                        for q in 0..k {
                            acc += ker[p * k + q] * src_row[cols[j * k + q]];
                        }
                        out[i * w + j] += acc;
                    }
                }
            }
        }
        let y = self.push(tensor(&s, y), &[x, kernel], move |g| {
            let mut gx = vec![0.0; c * h * w];
            let mut gk = vec![0.0; c * k * k];
            for ch in 0..c {
                let img = &xv[ch * h * w..(ch + 1) * h * w];
                let ker = &kv[ch * k * k..(ch + 1) * k * k];
                let gout = &g[ch * h * w..(ch + 1) * h * w];
                let gimg = &mut gx[ch * h * w..(ch + 1) * h * w];
                let gker = &mut gk[ch * k * k..(ch + 1) * k * k];
                for i in 0..h {
                    for p in 0..k {
                        let r = rows[i * k + p];
                        for j in 0..w {
                            let gv = gout[i * w + j];
                            for q in 0..k {
                                let col = cols[j * k + q];
                                gimg[r * w + col] += ker[p * k + q] * gv;
                                gker[p * k + q] += img[r * w + col] * gv;
                            }
                        }
                    }
                }
            }
            vec![gx, gk]
        });
        match bias {
            Some(b) => self.add_along(y, b, 0),
            None => y,
        }
    }

    /// Per-channel normalization over all trailing positions of `[C, ...]`.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Var {
        let s = self.shape(x).to_vec();
        let (_, c, n) = split_axis(&s, 0);
        let xv = self.data(x);
        let mut y = vec![0.0; c * n];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let seg = &xv[ch * n..(ch + 1) * n];
            let mean = seg.iter().sum::<f64>() / n as f64;
            let var = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[ch] = is;
            for (o, v) in y[ch * n..(ch + 1) * n].iter_mut().zip(seg) {
                *o = (v - mean) * is;
            }
        }
        let ys = y.clone();
        self.push(tensor(&s, y), &[x], move |g| {
            let mut gx = vec![0.0; c * n];
            for ch in 0..c {
                let gs = &g[ch * n..(ch + 1) * n];
                let yc = &ys[ch * n..(ch + 1) * n];
                let mg = gs.iter().sum::<f64>() / n as f64;
                let mgy = gs.iter().zip(yc).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                for i in 0..n {
                    gx[ch * n + i] = inv_std[ch] * (gs[i] - mg - yc[i] * mgy);
                }
            }
            vec![gx]
        })
    }

    fn spectral(&mut self, x: Var, inverse: bool) -> Var {
        let s = self.shape(x).to_vec();
        assert!(
            s.len() == 4 && s[0] == 2,
            "fft2 expects [2, C, H, W] (re, im), got {s:?}"
        );
        let (c, h, w) = (s[1], s[2], s[3]);
        let plane = h * w;
        let transform = move |data: &[f64], inverse: bool, scale: f64| -> Vec<f64> {
            let mut out = data.to_vec();
            let (re, im) = out.split_at_mut(c * plane);
            for ch in 0..c {
                fft2_in_place(
                    &mut re[ch * plane..(ch + 1) * plane],
                    &mut im[ch * plane..(ch + 1) * plane],
                    w,
                    h,
                    inverse,
                );
            }
            if scale != 1.0 {
                out.iter_mut().for_each(|v| *v *= scale);
            }
            out
        };
        let y = transform(self.data(x), inverse, 1.0);
        let n = plane as f64;
        // Adjoint of the unnormalized DFT is n * inverse DFT and vice versa.
        self.push(tensor(&s, y), &[x], move |g| {
            if inverse {
                vec![transform(g, false, 1.0 / n)]
            } else {
                vec![transform(g, true, n)]
            }
        })
    }

    /// Unnormalized 2-D DFT of every channel of a `[2, C, H, W]` (re, im) tensor.
    pub fn fft2(&mut self, x: Var) -> Var {
        self.spectral(x, false)
    }

    /// Inverse of [`Graph::fft2`] (scaled by `1 / (H W)`).
    pub fn ifft2(&mut self, x: Var) -> Var {
        self.spectral(x, true)
    }

    /// Orthonormal one-level Haar analysis `[C, H, W] -> [4, C, H/2, W/2]`
    /// with bands ordered LL, HL, LH, HH. `H` and `W` must be even.
    pub fn dwt2(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert!(
            s.len() == 3 && s[1] % 2 == 0 && s[2] % 2 == 0,
            "dwt2 expects [C, H, W] with even H, W, got {s:?}"
        );
        let (c, h, w) = (s[0], s[1], s[2]);
        let analyse = move |data: &[f64]| -> Vec<f64> {
            let bn = (h / 2) * (w / 2);
            let mut out = vec![0.0; 4 * c * bn];
            for ch in 0..c {
                let bands = haar_analysis(&data[ch * h * w..(ch + 1) * h * w], w, h);
                for (b, band) in bands.iter().enumerate() {
                    out[(b * c + ch) * bn..(b * c + ch + 1) * bn].copy_from_slice(band);
                }
            }
            out
        };
        let synthesise = move |data: &[f64]| -> Vec<f64> {
            let bn = (h / 2) * (w / 2);
            let mut out = vec![0.0; c * h * w];
            for ch in 0..c {
                let band = |b: usize| &data[(b * c + ch) * bn..(b * c + ch + 1) * bn];
                let img = haar_synthesis([band(0), band(1), band(2), band(3)], w / 2, h / 2);
                out[ch * h * w..(ch + 1) * h * w].copy_from_slice(&img);
            }
            out
        };
        let y = analyse(self.data(x));
        self.push(tensor(&[4, c, h / 2, w / 2], y), &[x], move |g| vec![synthesise(g)])
    }

    /// Inverse of [`Graph::dwt2`]: `[4, C, h, w] -> [C, 2h, 2w]`.
    pub fn idwt2(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert!(s.len() == 4 && s[0] == 4, "idwt2 expects [4, C, h, w], got {s:?}");
        let (c, bh, bw) = (s[1], s[2], s[3]);
        let (h, w) = (2 * bh, 2 * bw);
        let bn = bh * bw;
        let synthesise = move |data: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; c * h * w];
            for ch in 0..c {
                let band = |b: usize| &data[(b * c + ch) * bn..(b * c + ch + 1) * bn];
                let img = haar_synthesis([band(0), band(1), band(2), band(3)], bw, bh);
                out[ch * h * w..(ch + 1) * h * w].copy_from_slice(&img);
            }
            out
        };
        let analyse = move |data: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; 4 * c * bn];
            for ch in 0..c {
                let bands = haar_analysis(&data[ch * h * w..(ch + 1) * h * w], w, h);
                for (b, band) in bands.iter().enumerate() {
                    out[(b * c + ch) * bn..(b * c + ch + 1) * bn].copy_from_slice(band);
                }
            }
            out
        };
        let y = synthesise(self.data(x));
        self.push(tensor(&[c, h, w], y), &[x], move |g| vec![analyse(g)])
    }

    /// Separable Gaussian filter over the valid region of each `[.., H, W]`
    /// plane: output `[.., H - k + 1, W - k + 1]`.
    pub fn gaussian_valid(&mut self, x: Var, size: usize, sigma: f64) -> Var {
        let s = self.shape(x).to_vec();
        let nd = s.len();
        assert!(nd >= 2 && s[nd - 2] >= size && s[nd - 1] >= size, "gaussian_valid: {s:?} vs window {size}");
        let (h, w) = (s[nd - 2], s[nd - 1]);
        let planes: usize = s[..nd - 2].iter().product();
        let (oh, ow) = (h - size + 1, w - size + 1);
        let k = gaussian_kernel(size, sigma);
        let xv = self.data(x);
        let mut y = vec![0.0; planes * oh * ow];
        let mut tmp = vec![0.0; h * ow];
        for p in 0..planes {
            let img = &xv[p * h * w..(p + 1) * h * w];
            for r in 0..h {
                for c in 0..ow {
                    tmp[r * ow + c] = (0..size).map(|t| k[t] * img[r * w + c + t]).sum();
                }
            }
            for r in 0..oh {
                for c in 0..ow {
                    y[p * oh * ow + r * ow + c] = (0..size).map(|t| k[t] * tmp[(r + t) * ow + c]).sum();
                }
            }
        }
        let mut shape = s.clone();
        shape[nd - 2] = oh;
        shape[nd - 1] = ow;
        self.push(tensor(&shape, y), &[x], move |g| {
            let mut gx = vec![0.0; planes * h * w];
            let mut gtmp = vec![0.0; h * ow];
            for p in 0..planes {
                gtmp.iter_mut().for_each(|v| *v = 0.0);
                for r in 0..oh {
                    for c in 0..ow {
                        let gv = g[p * oh * ow + r * ow + c];
                        for t in 0..size {
                            gtmp[(r + t) * ow + c] += k[t] * gv;
                        }
                    }
                }
                let gimg = &mut gx[p * h * w..(p + 1) * h * w];
                for r in 0..h {
                    for c in 0..ow {
                        let gv = gtmp[r * ow + c];
                        for t in 0..size {
                            gimg[r * w + c + t] += k[t] * gv;
                        }
                    }
                }
            }
            vec![gx]
        })
    }

    /// Mean SSIM over the valid region with an 11x11 Gaussian window
    /// (sigma 1.5) and data range 1. `y` is the reference.
    pub fn ssim(&mut self, x: Var, y: Var) -> Var {
        self.same_shape(x, y, "ssim");
        let g = |gr: &mut Graph, v: Var| gr.gaussian_valid(v, SSIM_WINDOW, SSIM_SIGMA);
        let mu_x = g(self, x);
        let mu_y = g(self, y);
        let xx = self.square(x);
        let yy = self.square(y);
        let xy = self.mul(x, y);
        let exx = g(self, xx);
        let eyy = g(self, yy);
        let exy = g(self, xy);
        let mx2 = self.square(mu_x);
        let my2 = self.square(mu_y);
        let mxy = self.mul(mu_x, mu_y);
        let sxx = self.sub(exx, mx2);
        let syy = self.sub(eyy, my2);
        let sxy = self.sub(exy, mxy);
        let l_num = self.scale(mxy, 2.0);
        let l_num = self.add_scalar(l_num, SSIM_C1);
        let c_num = self.scale(sxy, 2.0);
        let c_num = self.add_scalar(c_num, SSIM_C2);
        let l_den = self.add(mx2, my2);
        let l_den = self.add_scalar(l_den, SSIM_C1);
        let c_den = self.add(sxx, syy);
        let c_den = self.add_scalar(c_den, SSIM_C2);
        let num = self.mul(l_num, c_num);
        let den = self.mul(l_den, c_den);
        let map = self.div(num, den);
        self.mean(map)
    }

    /// Diagonal linear state-space scan over token sequences.
    ///
    /// `x: [2, C, L]` holds two independent sequences (real and imaginary
    /// parts) of `C`-channel tokens, `h0: [2, C]` their initial states and
    /// `a, b, c, d: [C]`, `gamma: [1]` the shared coefficients:
    ///
    /// `h_t = a h_{t-1} + b x_t`, `y_t = gamma c h_t + d x_t`.
    ///
    /// Returns `[2, C, L + 1]`: the outputs followed by the final state.
    #[allow(clippy::too_many_arguments)]
    pub fn ssd_scan(&mut self, x: Var, h0: Var, a: Var, b: Var, c: Var, d: Var, gamma: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert!(s.len() == 3 && s[0] == 2, "ssd_scan expects [2, C, L], got {s:?}");
        let (ch, l) = (s[1], s[2]);
        assert_eq!(self.value(h0).len(), 2 * ch, "ssd_scan: state length");
        for v in [a, b, c, d] {
            assert_eq!(self.value(v).len(), ch, "ssd_scan: coefficient length");
        }
        assert_eq!(self.value(gamma).len(), 1, "ssd_scan: gamma is a scalar");
        let xv = self.data(x).to_vec();
        let hv0 = self.data(h0).to_vec();
        let (av, bv, cv, dv) = (
            self.data(a).to_vec(),
            self.data(b).to_vec(),
            self.data(c).to_vec(),
            self.data(d).to_vec(),
        );
        let gm = self.data(gamma)[0];
        // States h_0..h_L per sequence, h_0 being the initial state.
        let mut states = vec![0.0; 2 * ch * (l + 1)];
        let mut out = vec![0.0; 2 * ch * (l + 1)];
        for part in 0..2 {
            for k in 0..ch {
                let seq = (part * ch + k) * l;
                let st = (part * ch + k) * (l + 1);
                let mut h = hv0[part * ch + k];
                states[st] = h;
                for t in 0..l {
                    let xt = xv[seq + t];
                    h = av[k] * h + bv[k] * xt;
                    states[st + t + 1] = h;
                    out[st + t] = gm * cv[k] * h + dv[k] * xt;
                }
                out[st + l] = h;
            }
        }
        self.push(tensor(&[2, ch, l + 1], out), &[x, h0, a, b, c, d, gamma], move |g| {
            let mut gx = vec![0.0; 2 * ch * l];
            let mut gh0 = vec![0.0; 2 * ch];
            let mut ga = vec![0.0; ch];
            let mut gb = vec![0.0; ch];
            let mut gc = vec![0.0; ch];
            let mut gd = vec![0.0; ch];
            let mut ggamma = 0.0;
            for part in 0..2 {
                for k in 0..ch {
                    let seq = (part * ch + k) * l;
                    let st = (part * ch + k) * (l + 1);
                    // Gradient flowing into h_t from later steps.
                    let mut carry = g[st + l];
                    for t in (0..l).rev() {
                        let gy = g[st + t];
                        let ht = states[st + t + 1];
                        let gh = carry + gm * cv[k] * gy;
                        let xt = xv[seq + t];
                        gx[seq + t] = bv[k] * gh + dv[k] * gy;
                        ga[k] += gh * states[st + t];
                        gb[k] += gh * xt;
                        gc[k] += gm * gy * ht;
                        gd[k] += gy * xt;
                        ggamma += gy * cv[k] * ht;
                        carry = av[k] * gh;
                    }
                    gh0[part * ch + k] = carry;
                }
            }
            vec![gx, gh0, ga, gb, gc, gd, vec![ggamma]]
        })
    }

    /// Forward projection of a `[.., H, W]` image to `[n_angles, n_bins]`.
    pub fn project(&mut self, x: Var, a: &Arc<SystemMatrix>) -> Var {
        assert_eq!(self.value(x).len(), a.n_pixels(), "project: image size vs {}", a.image_shape());
        let mut y = vec![0.0; a.n_rays()];
        a.forward_raw(self.data(x), &mut y);
        let a = Arc::clone(a);
        self.push(tensor(&[a.n_angles(), a.n_bins()], y), &[x], move |g| {
            let mut gx = vec![0.0; a.n_pixels()];
            a.backproject_raw(g, &mut gx);
            vec![gx]
        })
    }

    /// Backprojection of an `[n_angles, n_bins]` sinogram to `[1, H, W]`.
    pub fn backproject(&mut self, y: Var, a: &Arc<SystemMatrix>) -> Var {
        assert_eq!(self.value(y).len(), a.n_rays(), "backproject: sinogram size vs {}", a.sinogram_shape());
        let mut x = vec![0.0; a.n_pixels()];
        a.backproject_raw(self.data(y), &mut x);
        let (w, h) = a.image_dims();
        let a = Arc::clone(a);
        self.push(tensor(&[1, h, w], x), &[y], move |g| {
            let mut gy = vec![0.0; a.n_rays()];
            a.forward_raw(g, &mut gy);
            vec![gy]
        })
    }
}
