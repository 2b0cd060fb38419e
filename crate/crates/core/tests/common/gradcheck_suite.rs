//! Catalogue of gradient checks: every differentiable op against central
//! differences in f64 on at least five random shapes.

use wfm::phantom::Rng;
use wfm::tensorad::{self as ad, check_gradients, ConvSpec, Tensor};
use wfm::Result;

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-5;

fn rand_param(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::parameter(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Contract the output with a fixed pseudo-random tensor so every output
/// element carries a distinct upstream gradient.
fn project(out: &Tensor<f64>) -> Result<Tensor<f64>> {
    let mut rng = Rng::new(0xC0FFEE ^ out.numel() as u64);
    let w = Tensor::from_vec(out.shape(), (0..out.numel()).map(|_| rng.normal()).collect())?;
    Ok(ad::mean(&ad::mul(out, &w)?))
}

/// One op evaluated at one shape.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: &'static str,
    pub shape: Vec<usize>,
    pub rel_err: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.rel_err < TOL
    }
}

fn check(
    out: &mut Vec<OpCheck>,
    op: &'static str,
    shape: &[usize],
    inputs: &[Tensor<f64>],
    f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
) {
    let rel_err = check_gradients(inputs, f, H).map(|r| r.max_relative_error()).unwrap_or(f64::INFINITY);
    out.push(OpCheck { op, shape: shape.to_vec(), rel_err });
}

fn dims(rng: &mut Rng, rank: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..rank).map(|_| lo + rng.below((hi - lo + 1) as u64) as usize).collect()
}

pub fn elementwise_binary(out: &mut Vec<OpCheck>) {
    let mut rng = Rng::new(1);
    for _ in 0..5 {
        let r = 1 + rng.below(4) as usize;
        let s = dims(&mut rng, r, 1, 5);
        let (a, b) = (rand_param(&mut rng, &s), rand_param(&mut rng, &s));
        let ins = [a, b];
        check(out, "add", &s, &ins, |t| project(&ad::add(&t[0], &t[1])?));
        check(out, "sub", &s, &ins, |t| project(&ad::sub(&t[0], &t[1])?));
        check(out, "mul", &s, &ins, |t| project(&ad::mul(&t[0], &t[1])?));
        check(out, "mse", &s, &ins, |t| ad::mse(&t[0], &t[1]));
    }
}

pub fn elementwise_unary(out: &mut Vec<OpCheck>) {
    let mut rng = Rng::new(2);
    for _ in 0..5 {
        let s = dims(&mut rng, 3, 1, 5);
        let ins = [rand_param(&mut rng, &s)];
        check(out, "scale", &s, &ins, |t| project(&ad::scale(&t[0], -1.7)));
        check(out, "silu", &s, &ins, |t| project(&ad::silu(&t[0])));
        check(out, "mean", &s, &ins, |t| Ok(ad::mean(&t[0])));
        let flat = [s.iter().product::<usize>()];
        check(out, "reshape", &s, &ins, |t| project(&t[0].reshape(&flat)?));
    }
}

pub fn linear_narrow_embedding(out: &mut Vec<OpCheck>) {
    let mut rng = Rng::new(3);
    for _ in 0..5 {
        let (n, i, o) = (1 + rng.below(4) as usize, 1 + rng.below(6) as usize, 1 + rng.below(6) as usize);
        let ins = [
            rand_param(&mut rng, &[n, i]),
            rand_param(&mut rng, &[o, i]),
            rand_param(&mut rng, &[o]),
        ];
        check(out, "linear", &[n, i, o], &ins, |t| project(&ad::linear(&t[0], &t[1], &t[2])?));

        let start = rng.below(i as u64) as usize;
        let len = 1 + rng.below((i - start) as u64) as usize;
        check(out, "narrow", &[n, i], &ins[..1], |t| project(&ad::narrow(&t[0], start, len)?));

        let rows = 1 + rng.below(5) as usize;
        let ids: Vec<usize> = (0..n + 2).map(|_| rng.below(rows as u64) as usize).collect();
        let table = [rand_param(&mut rng, &[rows, o])];
        check(out, "embedding", &[rows, o], &table, |t| project(&ad::embedding(&t[0], &ids)?));
    }
}

pub fn channel_ops(out: &mut Vec<OpCheck>) {
    let mut rng = Rng::new(4);
    for _ in 0..5 {
        let n = 1 + rng.below(3) as usize;
        let groups = 1 + rng.below(3) as usize;
        let c = groups * (1 + rng.below(3) as usize);
        let mut s = vec![n, c];
        s.extend(dims(&mut rng, 3, 1, 3));
        if s[2..].iter().product::<usize>() * c / groups < 2 {
            s[2] = 2;
        }
        let x = rand_param(&mut rng, &s);
        let gamma = rand_param(&mut rng, &[c]);
        let beta = rand_param(&mut rng, &[c]);
        let ins = [x.clone(), gamma, beta];
        check(out, "group_norm", &s, &ins, |t| {
            project(&ad::group_norm(&t[0], groups, &t[1], &t[2], 1e-5)?)
        });

        let ss = [x.clone(), rand_param(&mut rng, &[n, c]), rand_param(&mut rng, &[n, c])];
        check(out, "scale_shift", &s, &ss, |t| project(&ad::scale_shift(&t[0], &t[1], &t[2])?));

        let mut s2 = s.clone();
        s2[1] = 1 + rng.below(3) as usize;
        let cat = [x.clone(), rand_param(&mut rng, &s2)];
        check(out, "concat", &s, &cat, |t| project(&ad::concat_channels(&t[0], &t[1])?));

        check(out, "upsample", &s, &[x], |t| project(&ad::upsample_nearest2x(&t[0])?));
    }
}

pub fn conv3d_all_specs(out: &mut Vec<OpCheck>) {
    let mut rng = Rng::new(5);
    let specs = [
        (ConvSpec::SAME, 3),
        (ConvSpec::POINTWISE, 1),
        (ConvSpec::DOWN, 3),
        (ConvSpec { stride: 1, padding: 0 }, 3),
        (ConvSpec { stride: 2, padding: 0 }, 2),
    ];
    for (spec, k) in specs.into_iter().flat_map(|s| std::iter::repeat_n(s, 5)) {
        let (n, cin, cout) = (1 + rng.below(2) as usize, 1 + rng.below(3) as usize, 1 + rng.below(3) as usize);
        let mut s = vec![n, cin];
        s.extend(dims(&mut rng, 3, k.max(2), 4));
        let ins = [
            rand_param(&mut rng, &s),
            rand_param(&mut rng, &[cout, cin, k, k, k]),
            rand_param(&mut rng, &[cout]),
        ];
        check(out, "conv3d", &s, &ins, |t| project(&ad::conv3d(&t[0], &t[1], &t[2], spec)?));
    }
}

pub fn composite_graph_with_reuse(out: &mut Vec<OpCheck>) {
    // A small residual block: the input feeds both branches.
    let mut rng = Rng::new(6);
    for _ in 0..5 {
        let s = [1, 2, 3, 2, 2];
        let ins = [
            rand_param(&mut rng, &s),
            rand_param(&mut rng, &[2, 2, 3, 3, 3]),
            rand_param(&mut rng, &[2]),
            rand_param(&mut rng, &[2]),
            rand_param(&mut rng, &[2]),
        ];
        check(out, "block", &s, &ins, |t| {
            let h = ad::group_norm(&t[0], 1, &t[3], &t[4], 1e-5)?;
            let h = ad::conv3d(&ad::silu(&h), &t[1], &t[2], ConvSpec::SAME)?;
            project(&ad::add(&h, &t[0])?)
        });
    }
}

/// Every family, in order.
pub fn run_all() -> Vec<OpCheck> {
    let mut out = Vec::new();
    elementwise_binary(&mut out);
    elementwise_unary(&mut out);
    linear_narrow_embedding(&mut out);
    channel_ops(&mut out);
    conv3d_all_specs(&mut out);
    composite_graph_with_reuse(&mut out);
    out
}
