//! Central finite-difference oracle for every differentiable graph op.
//! Shared by the core test suite and the acceptance suite.

#![allow(dead_code)]

use crtlab_core::autodiff::{Graph, Unary, Var};
use crtlab_core::rng::Rng;
use crtlab_core::Tensor;

pub type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>;

pub struct OpCase {
    pub name: &'static str,
    /// Input shapes for each of the (at least three) trials.
    pub trials: Vec<Vec<Vec<usize>>>,
    pub build: Build,
    /// Inputs are drawn from `offset + N(0,1)`.
    pub offset: f64,
}

fn case(name: &'static str, trials: Vec<Vec<Vec<usize>>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Var + 'static) -> OpCase {
    OpCase { name, trials, build: Box::new(build), offset: 0.0 }
}

fn unary_case(name: &'static str, u: Unary) -> OpCase {
    case(name, vec![vec![vec![5]], vec![vec![2, 3]], vec![vec![2, 2, 3]]], move |g, x| g.unary(x[0], u))
}

pub fn op_suite() -> Vec<OpCase> {
    let same2 = |a: &[usize]| vec![a.to_vec(), a.to_vec()];
    let mut v = vec![
        case("add", vec![same2(&[4]), same2(&[2, 3]), same2(&[2, 1, 3])], |g, x| g.add(x[0], x[1]).unwrap()),
        case("sub", vec![same2(&[4]), same2(&[2, 3]), same2(&[2, 1, 3])], |g, x| g.sub(x[0], x[1]).unwrap()),
        case("mul", vec![same2(&[4]), same2(&[2, 3]), same2(&[2, 1, 3])], |g, x| g.mul(x[0], x[1]).unwrap()),
        case("add_bcast", vec![vec![vec![3, 4], vec![4]], vec![vec![2, 3, 2], vec![3, 2]], vec![vec![5, 1], vec![1]]], |g, x| {
            g.add_bcast(x[0], x[1]).unwrap()
        }),
        case("mul_bcast", vec![vec![vec![3, 4], vec![4]], vec![vec![2, 3, 2], vec![3, 2]], vec![vec![5, 1], vec![1]]], |g, x| {
            g.mul_bcast(x[0], x[1]).unwrap()
        }),
        case("scale", vec![vec![vec![3]], vec![vec![2, 2]], vec![vec![1, 5]]], |g, x| g.scale(x[0], -1.7)),
        case("add_scalar", vec![vec![vec![3]], vec![vec![2, 2]], vec![vec![1, 5]]], |g, x| g.add_scalar(x[0], 0.3)),
        case("square", vec![vec![vec![3]], vec![vec![2, 2]], vec![vec![1, 5]]], |g, x| g.square(x[0])),
        unary_case("relu", Unary::Relu),
        unary_case("leaky_relu", Unary::LeakyRelu(0.2)),
        unary_case("silu", Unary::Silu),
        unary_case("sigmoid", Unary::Sigmoid),
        unary_case("tanh", Unary::Tanh),
        unary_case("exp", Unary::Exp),
        case("matmul", vec![vec![vec![3, 4], vec![4, 2]], vec![vec![2, 3, 5], vec![5, 4]], vec![vec![1, 1], vec![1, 3]]], |g, x| {
            g.matmul(x[0], x[1]).unwrap()
        }),
        case(
            "conv2d_same",
            vec![
                vec![vec![1, 2, 5, 5], vec![3, 2, 3, 3], vec![3]],
                vec![vec![2, 1, 4, 6], vec![2, 1, 3, 3], vec![2]],
                vec![vec![2, 3, 3, 3], vec![1, 3, 1, 1], vec![1]],
                vec![vec![2, 8, 4, 5], vec![2, 8, 3, 3], vec![2]],
            ],
            |g, x| {
                let k = g.shape(x[1])[2];
                g.conv2d(x[0], x[1], Some(x[2]), 1, k / 2).unwrap()
            },
        ),
        case(
            "conv2d_stride2",
            vec![
                vec![vec![1, 2, 6, 6], vec![3, 2, 3, 3]],
                vec![vec![2, 1, 5, 4], vec![2, 1, 3, 3]],
                vec![vec![1, 3, 4, 4], vec![2, 3, 4, 4]],
            ],
            |g, x| {
                let k = g.shape(x[1])[2];
                g.conv2d(x[0], x[1], None, 2, (k - 1) / 2).unwrap()
            },
        ),
        case("upsample2x", vec![vec![vec![1, 1, 2, 2]], vec![vec![2, 3, 1, 2]], vec![vec![1, 2, 3, 3]]], |g, x| {
            g.upsample2x(x[0]).unwrap()
        }),
        case("layer_norm", vec![vec![vec![4]], vec![vec![3, 5]], vec![vec![2, 2, 6]]], |g, x| g.layer_norm(x[0], 1e-5)),
        case("qk_norm", vec![vec![vec![1, 2, 3, 4], vec![4]], vec![vec![2, 1, 2, 8], vec![8]], vec![vec![1, 1, 1, 3], vec![3]]], |g, x| {
            let n = g.layer_norm(x[0], 1e-6);
            g.mul_bcast(n, x[1]).unwrap()
        }),
        case("rms_norm", vec![vec![vec![4]], vec![vec![3, 5]], vec![vec![2, 2, 6]]], |g, x| g.rms_norm(x[0], 1e-6)),
        case("l2_normalize", vec![vec![vec![4]], vec![vec![3, 5]], vec![vec![2, 2, 8]]], |g, x| g.l2_normalize(x[0])),
        case("group_norm", vec![vec![vec![1, 4, 2, 2]], vec![vec![2, 6, 3, 1]], vec![vec![1, 2, 3, 3]]], |g, x| {
            let groups = g.shape(x[0])[1] / 2;
            g.group_norm(x[0], groups, 1e-5).unwrap()
        }),
        case(
            "channel_affine",
            vec![vec![vec![1, 3, 2, 2], vec![3], vec![3]], vec![vec![2, 2, 3], vec![2], vec![2]], vec![vec![2, 4, 1, 3], vec![4], vec![4]]],
            |g, x| g.channel_affine(x[0], x[1], x[2]).unwrap(),
        ),
        case("softmax", vec![vec![vec![5]], vec![vec![3, 4]], vec![vec![2, 2, 3]]], |g, x| g.softmax(x[0])),
        case("logsumexp", vec![vec![vec![5]], vec![vec![3, 4]], vec![vec![2, 2, 3]]], |g, x| g.logsumexp(x[0])),
        case("cross_entropy", vec![vec![vec![1, 5]], vec![vec![3, 4]], vec![vec![2, 3, 6]]], |g, x| {
            let s = g.shape(x[0]).to_vec();
            let k = *s.last().unwrap();
            let rows = s.iter().product::<usize>() / k;
            let targets: Vec<usize> = (0..rows).map(|r| (r * 7 + 3) % k).collect();
            g.cross_entropy(x[0], &targets).unwrap()
        }),
        case("causal_attention", vec![vec![vec![1, 1, 3, 2]; 3], vec![vec![2, 2, 4, 3]; 3], vec![vec![1, 3, 5, 4]; 3]], |g, x| {
            g.causal_attention(x[0], x[1], x[2]).unwrap()
        }),
        case("sum", vec![vec![vec![3]], vec![vec![2, 3]], vec![vec![2, 2, 2]]], |g, x| g.sum(x[0])),
        case("mean", vec![vec![vec![3]], vec![vec![2, 3]], vec![vec![2, 2, 2]]], |g, x| g.mean(x[0])),
        case("sum_last", vec![vec![vec![3]], vec![vec![2, 3]], vec![vec![2, 2, 4]]], |g, x| g.sum_last(x[0])),
        case("mean_last", vec![vec![vec![3]], vec![vec![2, 3]], vec![vec![2, 2, 4]]], |g, x| g.mean_last(x[0])),
        case("embedding", vec![vec![vec![4, 3]], vec![vec![6, 2]], vec![vec![3, 5]]], |g, x| {
            let v = g.shape(x[0])[0];
            let ids: Vec<usize> = (0..5).map(|i| (i * 5 + 1) % v).collect();
            g.embedding(x[0], &ids, &[5]).unwrap()
        }),
        case("reshape", vec![vec![vec![6]], vec![vec![2, 3]], vec![vec![2, 2, 2]]], |g, x| {
            let n = g.value(x[0]).numel();
            g.reshape(x[0], &[n, 1]).unwrap()
        }),
        case("permute", vec![vec![vec![2, 3]], vec![vec![2, 3, 4]], vec![vec![2, 1, 3, 2]]], |g, x| {
            let r = g.shape(x[0]).len();
            let perm: Vec<usize> = (0..r).rev().collect();
            g.permute(x[0], &perm).unwrap()
        }),
        case(
            "concat",
            vec![vec![vec![2, 3], vec![1, 3]], vec![vec![2, 2, 2], vec![2, 3, 2]], vec![vec![1, 2, 1], vec![1, 2, 1]]],
            |g, x| {
                let axis = if g.shape(x[0]).len() == 2 { 0 } else { 1 };
                g.concat(&[x[0], x[1]], axis).unwrap()
            },
        ),
        case("slice", vec![vec![vec![5]], vec![vec![2, 4]], vec![vec![3, 4, 2]]], |g, x| {
            let r = g.shape(x[0]).len();
            let axis = r - 1 - (r > 2) as usize;
            let n = g.shape(x[0])[axis];
            g.slice(x[0], axis, 1, n - 2).unwrap()
        }),
    ];
    for c in &mut v {
        if matches!(c.name, "exp" | "sigmoid" | "tanh" | "silu") {
            c.offset = 0.0;
        }
        if c.name == "l2_normalize" {
            c.offset = 0.5;
        }
    }
    v
}

pub struct CheckReport {
    pub name: &'static str,
    pub trials: usize,
    pub worst_rel_err: f64,
}

/// Runs every trial of `case`; returns the worst relative error
/// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over all inputs.
pub fn check(case: &OpCase, seed: u64) -> CheckReport {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (trial, shapes) in case.trials.iter().enumerate() {
        let mut rng = Rng::stream(seed, trial as u64);
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| Tensor::from_fn(s, |_| case.offset + rng.normal())).collect();
        // Probe output with fixed random weights so every output element counts.
        let probe_seed = rng.next_u64();
        let eval = |inputs: &[Tensor<f64>], want_grad: bool| -> (f64, Vec<Vec<f64>>) {
            let mut g = Graph::<f64>::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
            let out = (case.build)(&mut g, &vars);
            let mut prng = Rng::new(probe_seed);
            let w = Tensor::from_fn(g.shape(out), |_| prng.normal());
            let w = g.constant(w);
            let prod = g.mul(out, w).unwrap();
            let loss = g.sum(prod);
            let value = g.value(loss).item();
            if !want_grad {
                return (value, Vec::new());
            }
            let grads = g.backward(loss).unwrap();
            let gs = vars.iter().map(|v| grads.get(*v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; g.value(*v).numel()])).collect();
            (value, gs)
        };
        let (_, analytic) = eval(&inputs, true);
        for (i, a) in analytic.iter().enumerate() {
            let mut numeric = vec![0.0; a.len()];
            for j in 0..a.len() {
                let mut plus = inputs.clone();
                plus[i].data_mut()[j] += h;
                let mut minus = inputs.clone();
                minus[i].data_mut()[j] -= h;
                numeric[j] = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * h);
            }
            let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
            let denom = na.max(nn);
            let rel = if denom < 1e-10 { diff } else { diff / denom };
            worst = worst.max(rel);
        }
    }
    CheckReport { name: case.name, trials: case.trials.len(), worst_rel_err: worst }
}
