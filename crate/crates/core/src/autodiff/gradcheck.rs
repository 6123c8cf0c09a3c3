//! Finite-difference and dot-product checks for graph operations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Random tensor with entries uniform in `[-1, 1]`.
pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds `f` on leaf copies of `inputs` and reduces its output against a
/// fixed random projection, giving a scalar whose gradient exercises every
/// output entry.
fn projected(graph: &mut Graph, inputs: &[Var], f: &dyn Fn(&mut Graph, &[Var]) -> Var, weights: &mut Option<Tensor>, seed: u64) -> Var {
    let out = f(graph, inputs);
    let shape = graph.shape(out).to_vec();
    let w = weights.get_or_insert_with(|| random_tensor(&shape, &mut ChaCha8Rng::seed_from_u64(seed)));
    let w = graph.constant(w.clone());
    let p = graph.mul(out, w);
    graph.sum(p)
}

/// Max over inputs of `|fd - ad|_inf / max(|fd|_inf, 1e-8)` using central
/// differences with step [`FD_STEP`].
pub fn max_relative_error(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut weights = None;
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.leaf(t.clone())).collect();
    let root = projected(&mut graph, &vars, &f, &mut weights, 17);
    graph.backward(root).expect("scalar root");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| graph.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; graph.value(v).len()]))
        .collect();

    let eval = |ins: &[Tensor], weights: &mut Option<Tensor>| -> f64 {
        let mut g = Graph::new();
        let vs: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let r = projected(&mut g, &vs, &f, weights, 17);
        g.data(r)[0]
    };

    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let mut fd = vec![0.0; t.len()];
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            fd[i] = (eval(&plus, &mut weights) - eval(&minus, &mut weights)) / (2.0 * FD_STEP);
        }
        let diff = fd
            .iter()
            .zip(&analytic[k])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = fd.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
        worst = worst.max(diff / scale);
    }
    worst
}

/// Relative gap `|<J u, v> - <u, J^T v>| / (|J u| |v|)` for a linear map
/// `f` of one input, with `J^T v` from a seeded backward sweep.
pub fn transpose_gap(input_shape: &[usize], f: impl Fn(&mut Graph, Var) -> Var, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_tensor(input_shape, &mut rng);
    let mut graph = Graph::new();
    let x = graph.leaf(u.clone());
    let y = f(&mut graph, x);
    let v = random_tensor(graph.shape(y), &mut rng);
    let ju = graph.data(y).to_vec();
    graph.backward_with_seed(y, v.data()).unwrap();
    let jtv = graph.grad(x).unwrap().to_vec();
    let lhs: f64 = ju.iter().zip(v.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = u.data().iter().zip(&jtv).map(|(a, b)| a * b).sum();
    let norm = |s: &[f64]| s.iter().map(|x| x * x).sum::<f64>().sqrt();
    (lhs - rhs).abs() / (norm(&ju) * norm(v.data())).max(1e-300)
}

pub type MultiOp = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;
pub type LinearOp = Box<dyn Fn(&mut Graph, Var) -> Var>;

/// A differentiable operation with seeded inputs inside its smooth domain.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub f: MultiOp,
}

impl OpCase {
    pub fn relative_error(&self) -> f64 {
        max_relative_error(&self.inputs, &*self.f)
    }
}

/// A linear operation checked with [`transpose_gap`].
pub struct LinearCase {
    pub name: &'static str,
    pub input_shape: Vec<usize>,
    pub f: LinearOp,
}

impl LinearCase {
    pub fn gap(&self, seed: u64) -> f64 {
        transpose_gap(&self.input_shape, &*self.f, seed)
    }
}

fn case(name: &'static str, inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Var + 'static) -> OpCase {
    OpCase {
        name,
        inputs,
        f: Box::new(f),
    }
}

fn mapped(t: Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).unwrap()
}

/// Every differentiable graph operation, with inputs kept away from kinks
/// and singularities (positive denominators, nonnegative `ln_1p` inputs,
/// SSIM images in `(0, 1)`, scan decay in `(0, 1)`).
pub fn differentiable_ops(seed: u64) -> Vec<OpCase> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut r;
    let mut t = |shape: &[usize]| random_tensor(shape, r);
    let mut out = vec![
        case("add", vec![t(&[3, 4]), t(&[3, 4])], |g, v| g.add(v[0], v[1])),
        case("sub", vec![t(&[3, 4]), t(&[3, 4])], |g, v| g.sub(v[0], v[1])),
        case("mul", vec![t(&[3, 4]), t(&[3, 4])], |g, v| g.mul(v[0], v[1])),
        case("div", vec![t(&[3, 4]), mapped(t(&[3, 4]), |v| 1.5 + v)], |g, v| g.div(v[0], v[1])),
        case("scale", vec![t(&[3, 4])], |g, v| g.scale(v[0], -2.5)),
        case("add_scalar", vec![t(&[3, 4])], |g, v| g.add_scalar(v[0], 0.3)),
        case("mul_scalar", vec![t(&[3, 4]), t(&[1])], |g, v| g.mul_scalar(v[0], v[1])),
        case("gelu", vec![t(&[3, 4])], |g, v| g.gelu(v[0])),
        case("sigmoid", vec![t(&[3, 4])], |g, v| g.sigmoid(v[0])),
        case("relu", vec![t(&[3, 4])], |g, v| g.relu(v[0])),
        case("cos", vec![t(&[3, 4])], |g, v| g.cos(v[0])),
        case("sin", vec![t(&[3, 4])], |g, v| g.sin(v[0])),
        case("square", vec![t(&[3, 4])], |g, v| g.square(v[0])),
        case("ln_1p", vec![mapped(t(&[3, 4]), f64::abs)], |g, v| g.ln_1p(v[0])),
        case("atan2", vec![t(&[3, 4]), t(&[3, 4])], |g, v| g.atan2(v[0], v[1])),
        case("magnitude", vec![t(&[3, 4]), t(&[3, 4])], |g, v| g.magnitude(v[0], v[1])),
        case("reshape", vec![t(&[2, 3, 4])], |g, v| g.reshape(v[0], &[6, 4])),
        case("narrow", vec![t(&[2, 3, 4])], |g, v| g.narrow(v[0], 2, 1, 2)),
        case("concat", vec![t(&[2, 3, 4]), t(&[2, 1, 4])], |g, v| g.concat(&[v[0], v[1]], 1)),
        case("sum", vec![t(&[2, 3, 4])], |g, v| g.sum(v[0])),
        case("mean", vec![t(&[2, 3, 4])], |g, v| g.mean(v[0])),
        case("matmul", vec![t(&[3, 5]), t(&[5, 2])], |g, v| g.matmul(v[0], v[1])),
        case("conv2d_pointwise", vec![t(&[3, 4, 5]), t(&[2, 3]), t(&[2])], |g, v| {
            g.conv2d_pointwise(v[0], v[1], Some(v[2]))
        }),
        case("instance_norm", vec![t(&[3, 4, 4])], |g, v| g.instance_norm(v[0], 1e-5)),
        case("fft2", vec![t(&[2, 2, 4, 6])], |g, v| g.fft2(v[0])),
        case("ifft2", vec![t(&[2, 2, 4, 6])], |g, v| g.ifft2(v[0])),
        case("dwt2", vec![t(&[2, 4, 6])], |g, v| g.dwt2(v[0])),
        case("idwt2", vec![t(&[4, 2, 2, 3])], |g, v| g.idwt2(v[0])),
        case("gaussian_valid", vec![t(&[2, 12, 13])], |g, v| g.gaussian_valid(v[0], 11, 1.5)),
        case("smooth_l1", vec![t(&[1, 12, 12]), t(&[1, 12, 12])], |g, v| g.smooth_l1(v[0], v[1], 0.5)),
        case("l1", vec![t(&[1, 12, 12]), t(&[1, 12, 12])], |g, v| g.l1(v[0], v[1])),
        case(
            "ssim",
            vec![
                mapped(t(&[1, 12, 12]), |v| 0.5 + 0.4 * v),
                mapped(t(&[1, 12, 12]), |v| 0.5 + 0.4 * v),
            ],
            |g, v| g.ssim(v[0], v[1]),
        ),
        case("unit_circle", vec![t(&[2, 3]), t(&[2, 3]), t(&[2, 3]), t(&[2, 3])], |g, v| {
            g.unit_circle(v[0], v[1], v[2], v[3])
        }),
        case(
            "ssd_scan",
            vec![
                t(&[2, 3, 5]),
                t(&[2, 3]),
                mapped(t(&[3]), |v| 0.5 + 0.4 * v),
                t(&[3]),
                t(&[3]),
                t(&[3]),
                t(&[1]),
            ],
            |g, v| g.ssd_scan(v[0], v[1], v[2], v[3], v[4], v[5], v[6]),
        ),
    ];
    for axis in 0..3 {
        let n = [2, 3, 4][axis];
        out.push(case("mul_along", vec![t(&[2, 3, 4]), t(&[n])], move |g, v| g.mul_along(v[0], v[1], axis)));
        out.push(case("add_along", vec![t(&[2, 3, 4]), t(&[n])], move |g, v| g.add_along(v[0], v[1], axis)));
    }
    for (k, dil) in [(3, 1), (3, 2), (5, 1), (3, 4)] {
        out.push(case("conv2d_depthwise", vec![t(&[2, 6, 7]), t(&[2, k, k]), t(&[2])], move |g, v| {
            g.conv2d_depthwise(v[0], v[1], dil, Some(v[2]))
        }));
    }
    let a = std::sync::Arc::new(crate::projector::build_parallel_projector((6, 6), 4, 6).unwrap());
    let a2 = a.clone();
    out.push(case("project", vec![t(&[1, 6, 6])], move |g, v| g.project(v[0], &a)));
    out.push(case("backproject", vec![t(&[4, 6])], move |g, v| g.backproject(v[0], &a2)));
    out
}

/// Every linear graph operation, for the dot-product transpose test.
pub fn linear_ops() -> Vec<LinearCase> {
    let a = std::sync::Arc::new(crate::projector::build_parallel_projector((12, 12), 6, 12).unwrap());
    let a2 = a.clone();
    let lin = |name, shape: &[usize], f: LinearOp| LinearCase {
        name,
        input_shape: shape.to_vec(),
        f,
    };
    vec![
        lin("fft2", &[2, 3, 8, 6], Box::new(|g, x| g.fft2(x))),
        lin("ifft2", &[2, 3, 8, 6], Box::new(|g, x| g.ifft2(x))),
        lin("dwt2", &[3, 8, 6], Box::new(|g, x| g.dwt2(x))),
        lin("idwt2", &[4, 3, 4, 3], Box::new(|g, x| g.idwt2(x))),
        lin(
            "conv2d_depthwise",
            &[2, 9, 8],
            Box::new(|g, x| {
                let k = g.constant(random_tensor(&[2, 5, 5], &mut ChaCha8Rng::seed_from_u64(1)));
                g.conv2d_depthwise(x, k, 2, None)
            }),
        ),
        lin(
            "conv2d_pointwise",
            &[3, 5, 5],
            Box::new(|g, x| {
                let w = g.constant(random_tensor(&[4, 3], &mut ChaCha8Rng::seed_from_u64(2)));
                g.conv2d_pointwise(x, w, None)
            }),
        ),
        lin("gaussian_valid", &[1, 16, 16], Box::new(|g, x| g.gaussian_valid(x, 11, 1.5))),
        lin("project", &[1, 12, 12], Box::new(move |g, x| g.project(x, &a))),
        lin("backproject", &[6, 12], Box::new(move |g, y| g.backproject(y, &a2))),
    ]
}
