//! Trial runner, sweep selection and teacher/student continuity.

use std::time::Duration;

use mopinn::config::preset;
use mopinn::core::multiobjective::ObjectiveValue;
use mopinn::core::network::init_xavier;
use mopinn::core::problems::{CollocationLayout, ProblemKind};
use mopinn::core::TrainableVector;
use mopinn::experiment::{
    combine, run_trial, select_best, sweep, teacher_student, Combiner, InitScheme, TrialConfig,
    TrialResult,
};
use proptest::prelude::*;

fn quick(kind: ProblemKind, iterations: u64) -> TrialConfig {
    let mut c = preset(kind);
    c.iterations = iterations;
    c
}

/// Smaller 2D point sets so the tests stay fast.
fn small_inverse() -> TrialConfig {
    let mut c = quick(ProblemKind::InversePoisson2d, 20);
    c.layout = CollocationLayout {
        pde: 8,
        dbc: 8,
        aux: 6,
        vald: 50,
        ..c.layout
    };
    c
}

#[test]
fn zero_network_first_record_is_analytic() {
    let mut c = quick(ProblemKind::Poisson1d, 1);
    c.aux = None;
    c.init = InitScheme::Zeros;
    let r = run_trial(&c).unwrap();
    assert_eq!(r.history.len(), 1);
    let rec = &r.history[0];
    assert_eq!(r.objective_names, ["pde", "dbc"]);
    // zero network: dbc = ((-10 - sin 10)^2 + (10 + sin 10)^2) / 2
    let dbc = (10.0f64 + 10f64.sin()).powi(2);
    assert!((rec.values[1] - dbc).abs() < 1e-12);
    assert!((rec.values[1] - 89.4155).abs() < 1e-4);
    // pde = mean sin(x)^2 over the interior points
    let pde: f64 = (1..=60)
        .map(|i| (-10.0 + 20.0 * i as f64 / 61.0f64).sin().powi(2))
        .sum::<f64>()
        / 60.0;
    assert!((rec.values[0] - pde).abs() < 1e-12);
    assert_eq!(rec.etas, [1.0, 1.0]);
    assert_eq!(rec.lr, 5e-4);
    assert!(rec.vald.is_some());
}

#[test]
fn single_objective_combiners_agree() {
    let g = vec![0.5, -1.5, 2.0];
    let mk = || {
        vec![
            ObjectiveValue::new("pde", 1.0, 0.5, g.clone()),
            ObjectiveValue::new("aux", 3.0, 0.0, vec![9.0; 3]),
        ]
    };
    let sum = combine(Combiner::Sum, &mut mk(), 7).unwrap();
    let surg = combine(Combiner::Surgery, &mut mk(), 7).unwrap();
    assert_eq!(sum, vec![0.25, -0.75, 1.0]);
    assert_eq!(sum, surg);
    // without conflicts surgery is the plain sum
    let mk2 = || {
        vec![
            ObjectiveValue::new("a", 1.0, 1.0, vec![1.0, 0.0]),
            ObjectiveValue::new("b", 1.0, 2.0, vec![1.0, 1.0]),
        ]
    };
    assert_eq!(
        combine(Combiner::Sum, &mut mk2(), 1).unwrap(),
        combine(Combiner::Surgery, &mut mk2(), 1).unwrap()
    );
}

#[test]
fn replay_is_bit_identical() {
    for mut c in [quick(ProblemKind::Poisson1d, 30), small_inverse()] {
        c.combiner = Combiner::Surgery;
        c.seed = 11;
        let a = run_trial(&c).unwrap();
        let b = run_trial(&c).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.final_params, b.final_params);
        let d = run_trial(&c.with_seed(12)).unwrap();
        assert_ne!(a.history, d.history);
    }
}

#[test]
fn history_shape_and_monotone_eta() {
    let mut c = quick(ProblemKind::Poisson1d, 700);
    c.aux.as_mut().unwrap().schedule.t_aux = 100;
    c.aux.as_mut().unwrap().schedule.delta_t = 50;
    c.vald_every = 100;
    let r = run_trial(&c).unwrap();
    assert!(r.failed.is_none());
    assert_eq!(r.history.len(), 700);
    assert_eq!(r.objective_names, ["pde", "dbc", "aux_T"]);
    let etas: Vec<f64> = r.history.iter().map(|h| h.etas[2]).collect();
    assert!(etas.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(etas[100], 1.0);
    assert_eq!(etas[101], 0.5);
    assert_eq!(*etas.last().unwrap(), 0.0);
    let vald: Vec<u64> = r
        .history
        .iter()
        .filter(|h| h.vald.is_some())
        .map(|h| h.iteration)
        .collect();
    assert_eq!(vald, [0, 100, 200, 300, 400, 500, 600]);
    assert!(r
        .history
        .iter()
        .all(|h| h.values.iter().all(|v| v.is_finite())));
    // the annealed-away aux term does not count towards the final total
    assert_eq!(r.final_etas[2], 0.0);
    assert!((r.final_total() - r.final_values[0] - r.final_values[1]).abs() < 1e-15);
}

#[test]
fn divergence_marks_the_trial_failed() {
    let mut c = quick(ProblemKind::Poisson1d, 50);
    c.lr = 1e300;
    let r = run_trial(&c).unwrap();
    let f = r.failed.clone().expect("trial should fail");
    assert_eq!(r.history.len() as u64, f.iteration);
    assert_eq!(f.last_good_iteration, f.iteration.checked_sub(1));
    assert!(r.is_failed());
    assert!(r
        .history
        .iter()
        .all(|h| h.values.iter().all(|v| v.is_finite())));
}

#[test]
fn plateau_scheduler_reduces_lr_in_history() {
    let mut c = quick(ProblemKind::Poisson1d, 400);
    c.scheduler = Some(mopinn::experiment::SchedulerConfig {
        patience: 0,
        factor: 0.5,
        min_lr: 1e-5,
    });
    c.lr = 0.5;
    let r = run_trial(&c).unwrap();
    let lrs: Vec<f64> = r.history.iter().map(|h| h.lr).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    assert!(*lrs.last().unwrap() < 0.5);
    assert!(lrs.iter().all(|&l| l >= 1e-5));
}

fn synthetic(seed: u64, total: f64, failed: bool) -> TrialResult {
    let spec = preset(ProblemKind::Poisson1d).network;
    TrialResult {
        seed,
        objective_names: vec!["pde".into(), "dbc".into()],
        history: Vec::new(),
        final_params: TrainableVector::from_network(init_xavier(&spec, 0)),
        final_values: vec![total, 0.0],
        final_etas: vec![1.0, 1.0],
        final_vald: 0.0,
        failed: failed.then(|| mopinn::experiment::Failure {
            iteration: 3,
            last_good_iteration: Some(2),
            reason: "nan".into(),
        }),
        wall_time: Duration::ZERO,
    }
}

#[test]
fn selection_is_argmin_with_ties_to_lower_seed() {
    let rs = vec![
        synthetic(5, 3.0, false),
        synthetic(2, 1.0, false),
        synthetic(9, 0.5, true),
        synthetic(1, 1.0, false),
    ];
    assert_eq!(select_best(&rs), Some(3));
    assert_eq!(select_best(&rs[..1]), Some(0));
    assert_eq!(select_best(&[synthetic(0, 1.0, true)]), None);
    let mut rs = rs;
    rs[0].final_values[0] = f64::NAN;
    assert_eq!(select_best(&rs), Some(3));
}

#[test]
fn sweep_results_do_not_depend_on_order() {
    let c = small_inverse();
    let a = sweep(&c, &[3, 1, 2]).unwrap();
    let b = sweep(&c, &[2, 3, 1]).unwrap();
    assert_eq!(a.best().seed, b.best().seed);
    for r in &a.results {
        let other = b.results.iter().find(|o| o.seed == r.seed).unwrap();
        assert_eq!(r.history, other.history);
    }
    let single = sweep(&c, &[4]).unwrap();
    assert_eq!(single.best, 0);
    assert!(sweep(&c, &[]).is_err());
}

#[test]
fn all_failed_sweep_is_an_error() {
    let mut c = quick(ProblemKind::Poisson1d, 20);
    c.lr = 1e300;
    let e = sweep(&c, &[0, 1]).unwrap_err();
    assert!(matches!(e, mopinn::Error::AllTrialsFailed(2)));
}

#[test]
fn zero_widening_preserves_losses() {
    let mut c = small_inverse();
    c.iterations = 15;
    let ts = teacher_student(&c, &[0, 1], &[0, 0, 0, 0, 0], 3).unwrap();
    let teacher = ts.teachers.best();
    for (s, t) in ts.student_first.iter().zip(&teacher.final_values) {
        assert!((s - t).abs() <= 1e-9 * t.abs().max(1e-300), "{s} vs {t}");
    }
    assert_eq!(ts.student_config.lr, c.lr / 2.0);
    assert_eq!(ts.student_config.seed, teacher.seed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn widening_preserves_every_loss(dh in 1usize..6, seed in 0u64..50) {
        let mut c = quick(ProblemKind::Heat1dMixed, 10);
        c.seed = seed;
        c.layout.pde = 30;
        let delta = vec![0, dh, dh + 1, dh, 0];
        let ts = teacher_student(&c, &[seed], &delta, 2).unwrap();
        prop_assert_eq!(ts.student_config.network.layer_widths.clone(), vec![1, 4 + dh, 5 + dh, 4 + dh, 2]);
        let teacher = ts.teachers.best();
        for (s, t) in ts.student_first.iter().zip(&teacher.final_values) {
            prop_assert!((s - t).abs() <= 1e-8 * t.abs(), "{} vs {}", s, t);
        }
    }
}
