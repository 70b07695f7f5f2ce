mod support;

use crtlab_core::autodiff::Graph;
use crtlab_core::rng::Rng;
use crtlab_core::{Error, Tensor};
use support::gradcheck::{check, op_suite};

#[test]
fn every_op_matches_finite_differences() {
    let mut failures = Vec::new();
    for case in op_suite() {
        assert!(case.trials.len() >= 3, "{} has fewer than 3 shapes", case.name);
        let r = check(&case, 17);
        if !(r.worst_rel_err < 1e-4) {
            failures.push((r.name, r.worst_rel_err));
        }
    }
    assert!(failures.is_empty(), "gradient check failures: {failures:?}");
}

#[test]
fn identity_loss_has_unit_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::scalar(3.5));
    let grads = g.backward(x).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0]);
}

#[test]
fn stop_gradient_semantics() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(&[2], vec![2.0, 3.0]).unwrap());
    let sx = g.stop_grad(x);
    let p = g.mul(sx, x).unwrap();
    let loss = g.sum(p);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[2.0, 3.0]);
    assert!(grads.get(sx).is_none());
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(&[2]));
    assert_eq!(g.backward(x).err(), Some(Error::NonScalarLoss(vec![2])));
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[3, 2]));
    match g.add(a, b) {
        Err(Error::ShapeMismatch { op, lhs, rhs }) => {
            assert_eq!(op, "add");
            assert_eq!((lhs, rhs), (vec![2, 3], vec![3, 2]));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(g.matmul(a, a), Err(Error::ShapeMismatch { op: "matmul", .. })));
}

#[test]
fn grad_scale_multiplies_exactly() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
    let s = g.grad_scale(x, 4.0);
    assert_eq!(g.value(s), g.value(x));
    let sq = g.square(s);
    let loss = g.sum(sq);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[8.0, -16.0, 4.0]);
}

#[test]
fn straight_through_forwards_e_and_copies_gradient() {
    let mut g = Graph::<f64>::new();
    let z = g.input(Tensor::new(&[2], vec![0.3, -0.1]).unwrap());
    let e = g.input(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    let st = g.straight_through(z, e).unwrap();
    assert_eq!(g.data(st), g.data(e));
    let sq = g.square(st);
    let loss = g.sum(sq);
    let grads = g.backward(loss).unwrap();
    // ‖ST(z,e)‖² with e frozen: ∂/∂z = 2e
    assert_eq!(grads.get(z).unwrap(), &[2.0, 4.0]);
    assert!(grads.get(e).is_none());
}

#[test]
fn causal_attention_ignores_future_positions_bitwise() {
    use crtlab_core::rng::Rng;
    let mut rng = Rng::new(5);
    let shape = [2, 2, 6, 4];
    let base: Vec<Tensor<f32>> = (0..3).map(|_| rng.normal_tensor(&shape, 1.0)).collect();
    let run = |inputs: &[Tensor<f32>]| {
        let mut g = Graph::<f32>::new();
        let v: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = g.causal_attention(v[0], v[1], v[2]).unwrap();
        g.value(out).clone()
    };
    let reference = run(&base);
    for cut in 0..6 {
        let mut perturbed = base.clone();
        for t in &mut perturbed {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                if (i / 4) % 6 > cut {
                    *v += 10.0 * rng.normal() as f32;
                }
            }
        }
        let out = run(&perturbed);
        for (i, (a, b)) in reference.data().iter().zip(out.data()).enumerate() {
            if (i / 4) % 6 <= cut {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}

#[test]
fn conv2d_matches_direct_sum() {
    let mut rng = Rng::new(21);
    for &(b, cin, cout, h, w, k, stride, pad) in &[
        (2, 3, 4, 7, 6, 3, 1, 1),
        (1, 2, 3, 8, 8, 3, 2, 1),
        (2, 2, 2, 9, 7, 4, 2, 1),
        (1, 1, 2, 5, 5, 1, 1, 0),
        (3, 9, 4, 6, 5, 3, 1, 1),
        (2, 8, 3, 5, 5, 5, 1, 2),
        (2, 8, 2, 4, 4, 3, 1, 0),
    ] {
        let x: Tensor<f64> = rng.normal_tensor(&[b, cin, h, w], 1.0);
        let wt: Tensor<f64> = rng.normal_tensor(&[cout, cin, k, k], 1.0);
        let bias: Tensor<f64> = rng.normal_tensor(&[cout], 1.0);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.input(x.clone()), g.input(wt.clone()), g.input(bias.clone()));
        let y = g.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        let (ho, wo) = ((h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1);
        assert_eq!(g.shape(y), &[b, cout, ho, wo]);
        let out = g.data(y);
        for n in 0..b {
            for o in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias.data()[o];
                        for c in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += x.data()[((n * cin + c) * h + iy as usize) * w + ix as usize]
                                            * wt.data()[((o * cin + c) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        let got = out[((n * cout + o) * ho + oy) * wo + ox];
                        assert!((got - acc).abs() < 1e-10, "{got} vs {acc}");
                    }
                }
            }
        }
    }
}
