//! Gradient surgery against a brute-force reimplementation plus projection properties.

use mopinn_core::multiobjective::{
    gradient_surgery, gradient_surgery_with_plan, surgery_plan, weighted_sum, ObjectiveValue,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Straight transcription of the per-task projection loop.
fn brute_force(g: &[Vec<f64>], plan: &[Vec<usize>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = g.len();
    let dim = g[0].len();
    let mut out = Vec::new();
    for i in 0..n {
        let mut gi = g[i].clone();
        for &j in &plan[i] {
            let mut d = 0.0;
            for k in 0..dim {
                d += gi[k] * g[j][k];
            }
            if d < 0.0 {
                let mut nn = 0.0;
                for k in 0..dim {
                    nn += g[j][k] * g[j][k];
                }
                for k in 0..dim {
                    gi[k] -= d / nn * g[j][k];
                }
            }
        }
        out.push(gi);
    }
    let mut agg = vec![0.0; dim];
    for gi in &out {
        for k in 0..dim {
            agg[k] += gi[k];
        }
    }
    (out, agg)
}

#[test]
fn matches_brute_force_on_random_tasks() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(11);
    for trial in 0..50 {
        let g: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..10).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let r = gradient_surgery(&g, trial).unwrap();
        assert_eq!(r.plan, surgery_plan(5, trial));
        let (m, agg) = brute_force(&g, &r.plan);
        for i in 0..5 {
            for k in 0..10 {
                assert!((m[i][k] - r.modified[i][k]).abs() <= 1e-12);
            }
        }
        for k in 0..10 {
            assert!((agg[k] - r.aggregate[k]).abs() <= 1e-12);
        }
    }
}

#[test]
fn each_projection_is_locally_orthogonal() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(12);
    for seed in 0..30 {
        let g: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let plan = surgery_plan(4, seed);
        // replay the plan one step at a time and check orthogonality after every applied projection
        for i in 0..4 {
            let mut gi = g[i].clone();
            let mut prefix = Vec::new();
            for &j in &plan[i] {
                prefix.push(j);
                let mut partial = plan.clone();
                partial[i] = prefix.clone();
                let r = gradient_surgery_with_plan(&g, partial).unwrap();
                let projected = r.modified[i] != gi;
                gi = r.modified[i].clone();
                if projected {
                    assert!(dot(&gi, &g[j]).abs() <= 1e-10 * norm(&gi) * norm(&g[j]));
                }
            }
        }
    }
}

fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, dim)
}

proptest! {
    #[test]
    fn two_tasks_end_non_conflicting(a in vec_strategy(7), b in vec_strategy(7), seed in any::<u64>()) {
        let r = gradient_surgery(&[a.clone(), b.clone()], seed).unwrap();
        let (m1, m2) = (&r.modified[0], &r.modified[1]);
        prop_assert!(dot(m1, &b) >= -1e-10 * norm(m1) * norm(&b));
        prop_assert!(dot(m2, &a) >= -1e-10 * norm(m2) * norm(&a));
    }

    #[test]
    fn non_conflicting_tasks_pass_through(raw in prop::collection::vec(vec_strategy(5), 2..5), seed in any::<u64>()) {
        // shift into the positive orthant so every pairwise product is non-negative
        let g: Vec<Vec<f64>> = raw.iter().map(|v| v.iter().map(|x| x.abs()).collect()).collect();
        let r = gradient_surgery(&g, seed).unwrap();
        prop_assert_eq!(&r.modified, &g);
    }

    #[test]
    fn surgery_is_deterministic(raw in prop::collection::vec(vec_strategy(4), 1..6), seed in any::<u64>()) {
        let a = gradient_surgery(&raw, seed).unwrap();
        let b = gradient_surgery(&raw, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn weighted_sum_is_linear(v in prop::collection::vec((0.0f64..5.0, 0.0f64..1.0, vec_strategy(3)), 1..5), c in 0.1f64..3.0) {
        let objs: Vec<ObjectiveValue> = v.iter().map(|(val, w, g)| ObjectiveValue::new("t", *val, *w, g.clone())).collect();
        let scaled: Vec<ObjectiveValue> = v.iter().map(|(val, w, g)| {
            ObjectiveValue::new("t", val * c, *w, g.iter().map(|x| x * c).collect())
        }).collect();
        let (t1, g1) = weighted_sum(&objs).unwrap();
        let (t2, g2) = weighted_sum(&scaled).unwrap();
        prop_assert!((t2 - c * t1).abs() <= 1e-10 * (1.0 + t2.abs()));
        for (x, y) in g1.iter().zip(&g2) {
            prop_assert!((y - c * x).abs() <= 1e-10 * (1.0 + y.abs()));
        }
    }
}
