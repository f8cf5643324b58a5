//! Finite-difference oracles for input derivatives and parameter gradients.

use mopinn_core::autodiff::{
    evaluate_with_derivatives, loss_gradient, EvalRequest, Order, PointGroup,
};
use mopinn_core::network::{forward_point, init_gaussian, Activation, InputTransform, NetworkSpec};
use mopinn_core::TrainableVector;
use rand::{Rng, SeedableRng};

const STEP: f64 = 1e-5;

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(1e-8)
}

fn random_net(
    rng: &mut rand::rngs::StdRng,
    act: Activation,
    transform: InputTransform,
) -> (NetworkSpec, TrainableVector) {
    let d_in = if transform == InputTransform::CartesianToPolar {
        2
    } else {
        rng.random_range(1..=3)
    };
    let depth = rng.random_range(1..=4);
    let mut widths = vec![d_in];
    for _ in 0..depth {
        widths.push(rng.random_range(2..=6));
    }
    widths.push(rng.random_range(1..=3));
    let spec = NetworkSpec::new(widths, act, transform).unwrap();
    let mut params = init_gaussian(&spec, 0.8, rng.random()).unwrap();
    for l in 0..spec.n_maps() {
        for b in params.bias_mut(l) {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    (spec, TrainableVector::from_network(params))
}

#[test]
fn input_derivatives_match_central_differences() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for sample in 0..100 {
        let act = [Activation::Tanh, Activation::Silu][sample % 2];
        let transform = if sample % 5 == 4 {
            InputTransform::CartesianToPolar
        } else {
            InputTransform::Identity
        };
        let (spec, params) = random_net(&mut rng, act, transform);
        let x: Vec<f64> = (0..spec.d_in())
            .map(|_| match transform {
                InputTransform::CartesianToPolar => rng.random_range(0.5..2.0),
                InputTransform::Identity => rng.random_range(-1.5..1.5),
            })
            .collect();
        let eval = |x: &[f64]| {
            evaluate_with_derivatives(EvalRequest {
                spec: &spec,
                params: &params,
                point: x,
                derivative_order: 2,
            })
            .unwrap()
        };
        let r = eval(&x);
        let jac = r.jacobian.as_ref().unwrap();
        let hess = r.second_derivs.as_ref().unwrap();
        let plain = forward_point(&spec, params.network(), &x);
        for (a, b) in r.values.iter().zip(&plain) {
            assert!((a - b).abs() < 1e-13);
        }
        let jac_scale = jac.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let hess_scale = hess
            .iter()
            .flatten()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..spec.d_in() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += STEP;
            xm[i] -= STEP;
            let fp = forward_point(&spec, params.network(), &xp);
            let fm = forward_point(&spec, params.network(), &xm);
            let jp = eval(&xp).jacobian.unwrap();
            let jm = eval(&xm).jacobian.unwrap();
            for k in 0..spec.d_out() {
                let fd = (fp[k] - fm[k]) / (2.0 * STEP);
                let e = rel_err(jac[k][i], fd, jac_scale);
                worst = worst.max(e);
                assert!(e <= 1e-6, "jacobian sample {sample}: {} vs {fd}", jac[k][i]);
                for j in 0..spec.d_in() {
                    let fd = (jp[k][j] - jm[k][j]) / (2.0 * STEP);
                    let e = rel_err(hess[k][j][i], fd, hess_scale);
                    worst = worst.max(e);
                    assert!(
                        e <= 1e-6,
                        "hessian sample {sample}: {} vs {fd}",
                        hess[k][j][i]
                    );
                    assert!((hess[k][i][j] - hess[k][j][i]).abs() <= 1e-12 * hess_scale.max(1.0));
                }
            }
        }
    }
    eprintln!("worst relative error {worst:e}");
}

#[test]
fn poisson_residual_gradient_matches_central_differences() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    for act in [Activation::Tanh, Activation::Silu] {
        let spec = NetworkSpec::mlp(1, 5, 3, 1, act).unwrap();
        let mut params =
            TrainableVector::from_network(init_gaussian(&spec, 0.7, rng.random()).unwrap());
        let pts: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        for order in [Order::Laplacian, Order::Hessian] {
            let loss = |p: &TrainableVector| {
                loss_gradient(
                    &spec,
                    p,
                    &[PointGroup {
                        points: &pts,
                        order,
                    }],
                    None,
                    |tape, j, _| {
                        let r = tape
                            .sum((0..5).map(|i| (j[0].laplacian(i, 0) + pts[i].sin()).square()));
                        r / 5.0
                    },
                )
                .unwrap()
            };
            let (_, g) = loss(&params);
            let mut fd = vec![0.0; g.len()];
            for k in 0..g.len() {
                let orig = params.as_slice()[k];
                params.as_mut_slice()[k] = orig + STEP;
                let lp = loss(&params).0;
                params.as_mut_slice()[k] = orig - STEP;
                let lm = loss(&params).0;
                params.as_mut_slice()[k] = orig;
                fd[k] = (lp - lm) / (2.0 * STEP);
            }
            let num: f64 = g
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(
                num / den <= 1e-5,
                "{act:?} {order:?}: relative error {}",
                num / den
            );
        }
    }
}

#[test]
fn loss_gradient_is_linear_in_the_loss() {
    let spec = NetworkSpec::mlp(2, 6, 2, 2, Activation::Tanh).unwrap();
    let params = TrainableVector::new(
        init_gaussian(&spec, 1.0, 5).unwrap(),
        vec![("k".into(), 0.3)],
    );
    let pts = [0.1, 0.2, -0.4, 0.9, 0.7, -0.3];
    let groups = [PointGroup {
        points: &pts,
        order: Order::Hessian,
    }];
    let l1 = |p: &TrainableVector, a: f64, b: f64| {
        loss_gradient(&spec, p, &groups, None, |tape, j, e| {
            let first = tape.sum((0..3).map(|i| (j[0].hess(i, 0, 0, 1) * e[0]).square()));
            let second = tape.sum((0..3).map(|i| (j[0].grad(i, 1, 0) - j[0].value(i, 0)).tanh()));
            first * a + second * b
        })
        .unwrap()
        .1
    };
    let (a, b) = (0.7, -1.3);
    let combined = l1(&params, a, b);
    let g1 = l1(&params, 1.0, 0.0);
    let g2 = l1(&params, 0.0, 1.0);
    for i in 0..combined.len() {
        assert!((combined[i] - (a * g1[i] + b * g2[i])).abs() <= 1e-12 * (1.0 + combined[i].abs()));
    }
    // bit-identical on replay
    assert_eq!(l1(&params, a, b), combined);
}
