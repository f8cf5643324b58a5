//! Trial runner, seed sweeps and the teacher/student widening pipeline.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng as _, RngCore};
use rayon::prelude::*;

use mopinn_core::labels::{
    add_noise, analytic_downsample, solve_fd_2d, solve_fem_1d, zero_labels, LabelSet,
};
use mopinn_core::multiobjective::{aux_weight, gradient_surgery, AuxSchedule, ObjectiveValue};
use mopinn_core::network::{
    init_gaussian, init_xavier, widen_net2net, NetworkParams, NetworkSpec, WideningPlan,
};
use mopinn_core::optimizer::{adam_step, plateau_step, AdamState, PlateauState};
use mopinn_core::problems::{
    aux_points, extras_for, generate_collocation, validation_mse, Assembler, CollocationLayout,
    CollocationSet, Evaluation, GradientMode, GroupKind, ProblemKind, ProblemSpec,
};
use mopinn_core::rng::{self, stream};
use mopinn_core::TrainableVector;

use crate::formats::read_pointcloud;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    Xavier,
    Gaussian { std: f64 },
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combiner {
    Sum,
    Surgery,
}

impl Combiner {
    pub fn name(self) -> &'static str {
        match self {
            Combiner::Sum => "sum",
            Combiner::Surgery => "surgery",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "sum" => Some(Combiner::Sum),
            "surgery" => Some(Combiner::Surgery),
            _ => None,
        }
    }
}

/// Where auxiliary (or, for the inverse problem, measurement) labels come from.
#[derive(Debug, Clone, PartialEq)]
pub enum AuxSource {
    /// The coarse solver for the problem: linear FEM in 1D, finite
    /// differences for the 2D Poisson problem, exact fields elsewhere.
    Coarse,
    /// Coarse labels with additive Gaussian noise.
    Noisy {
        std: f64,
    },
    Zeros,
    Analytic,
    File(PathBuf),
}

impl AuxSource {
    pub fn name(&self) -> String {
        match self {
            AuxSource::Coarse => "fem".into(),
            AuxSource::Noisy { .. } => "noisy".into(),
            AuxSource::Zeros => "zeros".into(),
            AuxSource::Analytic => "analytic".into(),
            AuxSource::File(p) => format!("file:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxConfig {
    pub source: AuxSource,
    pub schedule: AuxSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerConfig {
    pub patience: u32,
    pub factor: f64,
    pub min_lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub problem: ProblemSpec,
    pub network: NetworkSpec,
    pub init: InitScheme,
    pub seed: u64,
    pub iterations: u64,
    pub lr: f64,
    /// Reduce-on-plateau on the weighted loss; constant rate when absent.
    pub scheduler: Option<SchedulerConfig>,
    pub combiner: Combiner,
    pub aux: Option<AuxConfig>,
    pub layout: CollocationLayout,
    pub vald_every: u64,
    /// Rescale outputs and label residuals by label statistics.
    pub normalize: bool,
    /// Write a checkpoint every this many iterations (0: only at the end,
    /// and only when a checkpoint path is given to the caller).
    pub checkpoint_every: u64,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.network.validate()?;
        if self.iterations == 0 {
            return Err(Error::Invalid("iterations must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if self.vald_every == 0 {
            return Err(Error::Invalid("vald_every must be at least 1".into()));
        }
        if let Some(sc) = self.scheduler {
            PlateauState::new(sc.patience, sc.factor, sc.min_lr)?;
        }
        if let InitScheme::Gaussian { std } = self.init {
            if !(std > 0.0) {
                return Err(Error::Invalid(format!("init std {std} must be positive")));
            }
        }
        let kind = self.problem.kind;
        if self.network.d_in() != kind.dim() || self.network.d_out() != kind.output_fields().len() {
            return Err(Error::Invalid(format!(
                "{} needs a {}->{} network",
                kind.name(),
                kind.dim(),
                kind.output_fields().len()
            )));
        }
        if let Some(aux) = &self.aux {
            aux.schedule.validate()?;
            if kind == ProblemKind::Heat1dMixed {
                return Err(Error::Invalid(
                    "heat1d_mixed takes no auxiliary labels".into(),
                ));
            }
            if let AuxSource::Noisy { std } = aux.source {
                if !(std >= 0.0) {
                    return Err(Error::Invalid(format!("noise std {std} is negative")));
                }
            }
        } else if kind.requires_labels() {
            return Err(Error::Invalid(format!(
                "{} needs a label source",
                kind.name()
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrialConfig {
            seed,
            ..self.clone()
        }
    }
}

/// One training iteration. Values are taken before the parameter update.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub values: Vec<f64>,
    pub etas: Vec<f64>,
    pub lr: f64,
    pub vald: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    pub objective_names: Vec<String>,
    pub history: Vec<IterationRecord>,
    pub final_params: TrainableVector,
    /// Objective values at `final_params`, weighted as in the last iteration.
    pub final_values: Vec<f64>,
    pub final_etas: Vec<f64>,
    /// Validation MSE of `final_params`.
    pub final_vald: f64,
    /// Set when a non-finite loss or gradient stopped the trial.
    pub failed: Option<Failure>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub iteration: u64,
    pub last_good_iteration: Option<u64>,
    pub reason: String,
}

impl TrialResult {
    /// Unweighted sum of the objectives still active at the end of training,
    /// evaluated at the final parameters.
    pub fn final_total(&self) -> f64 {
        if self.final_values.is_empty() {
            return f64::INFINITY;
        }
        self.final_values
            .iter()
            .zip(&self.final_etas)
            .filter(|(_, &e)| e != 0.0)
            .map(|(v, _)| v)
            .sum()
    }

    pub fn final_value(&self, name: &str) -> Option<f64> {
        let k = self.objective_names.iter().position(|n| n == name)?;
        self.final_values.get(k).copied()
    }

    pub fn is_failed(&self) -> bool {
        self.failed.is_some()
    }
}

/// Everything a trial needs that does not change during training.
pub struct Prepared {
    pub collocation: CollocationSet,
    pub labels: Option<LabelSet>,
    pub assembler: Assembler,
}

/// Builds the label set named by `source` on the aux points of `layout`.
pub fn build_labels(
    spec: &ProblemSpec,
    layout: &CollocationLayout,
    source: &AuxSource,
    seed: u64,
) -> Result<LabelSet> {
    let points = aux_points(spec, layout);
    let coarse = || -> Result<LabelSet> {
        Ok(match spec.kind {
            ProblemKind::Poisson1d => solve_fem_1d(spec, layout.aux)?,
            ProblemKind::Poisson2d => solve_fd_2d(spec, layout.aux, layout.aux)?,
            ProblemKind::Heat1dMixed => {
                return Err(Error::Invalid("heat1d_mixed has no coarse labels".into()));
            }
            ProblemKind::ElasticityHole | ProblemKind::InversePoisson2d => {
                analytic_downsample(spec, &points)?
            }
        })
    };
    Ok(match source {
        AuxSource::Coarse => coarse()?,
        AuxSource::Noisy { std } => add_noise(&coarse()?, *std, seed)?,
        AuxSource::Zeros => zero_labels(spec, &points)?,
        AuxSource::Analytic => analytic_downsample(spec, &points)?,
        AuxSource::File(path) => read_pointcloud(path)?,
    })
}

pub fn prepare(config: &TrialConfig) -> Result<Prepared> {
    config.validate()?;
    let mut collocation = generate_collocation(&config.problem, &config.layout)?;
    let labels = match &config.aux {
        None => None,
        Some(aux) => {
            let l = build_labels(&config.problem, &config.layout, &aux.source, config.seed)?;
            // imported labels bring their own points
            collocation.insert(GroupKind::Aux, l.points().to_vec())?;
            Some(l)
        }
    };
    let assembler = Assembler::new(
        &config.problem,
        &collocation,
        labels.as_ref(),
        config.normalize,
    )?;
    Ok(Prepared {
        collocation,
        labels,
        assembler,
    })
}

/// Initial network parameters and extra scalars for `config`.
pub fn initial_params(config: &TrialConfig) -> Result<TrainableVector> {
    let net = match config.init {
        InitScheme::Xavier => init_xavier(&config.network, config.seed),
        InitScheme::Gaussian { std } => init_gaussian(&config.network, std, config.seed)?,
        InitScheme::Zeros => NetworkParams::zeros(&config.network),
    };
    let kind = config.problem.kind;
    let mut rng = rng::seeded(config.seed, stream::EXTRAS);
    let values: Vec<f64> = kind
        .extra_names()
        .iter()
        .map(|_| rng.random::<f64>())
        .collect();
    Ok(TrainableVector::new(net, extras_for(kind, &values)?))
}

fn aux_eta(config: &TrialConfig, iteration: u64) -> f64 {
    config
        .aux
        .as_ref()
        .map_or(0.0, |a| aux_weight(&a.schedule, iteration))
}

fn non_finite(eval: &Evaluation) -> Option<String> {
    eval.objectives
        .iter()
        .find(|o| !o.value.is_finite())
        .map(|o| format!("objective `{}` is {}", o.name, o.value))
}

/// Update direction from per-objective gradients: the weighted sum, or
/// gradient surgery on the weighted gradients of the active objectives.
/// Gradients are consumed.
pub fn combine(
    combiner: Combiner,
    objectives: &mut [ObjectiveValue],
    seed: u64,
) -> Result<Vec<f64>> {
    let grads: Vec<Vec<f64>> = objectives
        .iter_mut()
        .filter(|o| o.weight != 0.0)
        .map(|o| {
            let w = o.weight;
            let mut g = std::mem::take(&mut o.gradient);
            g.iter_mut().for_each(|v| *v *= w);
            g
        })
        .collect();
    let n = grads.first().map_or(0, Vec::len);
    Ok(match combiner {
        _ if grads.len() == 1 => grads.into_iter().next().unwrap_or_default(),
        Combiner::Sum => grads.iter().fold(vec![0.0; n], |mut acc, g| {
            acc.iter_mut().zip(g).for_each(|(a, v)| *a += v);
            acc
        }),
        Combiner::Surgery => {
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Ok(vec![f64::NAN; n]);
            }
            gradient_surgery(&grads, seed)?.aggregate
        }
    })
}

fn direction(
    config: &TrialConfig,
    asm: &Assembler,
    params: &TrainableVector,
    weights: &[f64],
    surgery_rng: &mut rng::Rng,
) -> Result<(Evaluation, Vec<f64>)> {
    match config.combiner {
        // one reverse sweep with the weights folded into the adjoint
        Combiner::Sum => {
            let mut eval = asm.evaluate(&config.network, params, weights, GradientMode::Total)?;
            let g = eval.total_gradient.take().unwrap_or_default();
            Ok((eval, g))
        }
        Combiner::Surgery => {
            let mut eval =
                asm.evaluate(&config.network, params, weights, GradientMode::PerObjective)?;
            let g = combine(
                Combiner::Surgery,
                &mut eval.objectives,
                surgery_rng.next_u64(),
            )?;
            Ok((eval, g))
        }
    }
}

/// Trains one network. Deterministic given the configuration (including its seed).
pub fn run_trial(config: &TrialConfig) -> Result<TrialResult> {
    let prepared = prepare(config)?;
    let params = initial_params(config)?;
    run_prepared(config, &prepared, params)
}

/// Like [`run_trial`] with explicit starting parameters.
pub fn run_prepared(
    config: &TrialConfig,
    prepared: &Prepared,
    params: TrainableVector,
) -> Result<TrialResult> {
    run_prepared_with(config, prepared, params, |_, _| Ok(()))
}

/// Training loop; `observe` sees every record together with the updated
/// parameters.
pub fn run_prepared_with(
    config: &TrialConfig,
    prepared: &Prepared,
    mut params: TrainableVector,
    mut observe: impl FnMut(&IterationRecord, &TrainableVector) -> Result<()>,
) -> Result<TrialResult> {
    config.validate()?;
    let start = Instant::now();
    let asm = &prepared.assembler;
    let map = asm.output_map();
    let vald = prepared.collocation.require(GroupKind::Vald)?.to_vec();
    let names: Vec<String> = asm
        .objectives()
        .iter()
        .map(|(n, _)| n.to_string())
        .collect();
    let mut adam = AdamState::new(params.len(), config.lr);
    let mut plateau = match config.scheduler {
        Some(sc) => Some(PlateauState::new(sc.patience, sc.factor, sc.min_lr)?),
        None => None,
    };
    let mut surgery_rng = rng::seeded(config.seed, stream::SURGERY);
    let mut history = Vec::with_capacity(config.iterations as usize);
    let mut failed = None;

    for it in 0..config.iterations {
        let weights = asm.weights(aux_eta(config, it));
        let (eval, grad) = direction(config, asm, &params, &weights, &mut surgery_rng)?;
        let last_good = it.checked_sub(1);
        if let Some(reason) = non_finite(&eval) {
            failed = Some(Failure {
                iteration: it,
                last_good_iteration: last_good,
                reason,
            });
            break;
        }
        let vd = if it % config.vald_every == 0 {
            Some(validation_mse(
                &config.problem,
                &config.network,
                &params,
                map,
                &vald,
            )?)
        } else {
            None
        };
        let loss = eval.weighted_total();
        history.push(IterationRecord {
            iteration: it,
            values: eval.objectives.iter().map(|o| o.value).collect(),
            etas: weights,
            lr: adam.lr,
            vald: vd,
        });
        if let Err(e) = adam_step(&mut adam, params.as_mut_slice(), &grad) {
            history.pop();
            failed = Some(Failure {
                iteration: it,
                last_good_iteration: last_good,
                reason: e.to_string(),
            });
            break;
        }
        if let Some(p) = plateau.as_mut() {
            adam.lr = plateau_step(p, adam.lr, loss);
        }
        observe(history.last().expect("just pushed"), &params)?;
    }
    let final_etas = asm.weights(aux_eta(config, config.iterations.saturating_sub(1)));
    let final_values = if failed.is_some() {
        vec![f64::NAN; names.len()]
    } else {
        let eval = asm.evaluate(&config.network, &params, &final_etas, GradientMode::None)?;
        eval.objectives.iter().map(|o| o.value).collect()
    };
    let final_vald = validation_mse(&config.problem, &config.network, &params, map, &vald)?;
    Ok(TrialResult {
        seed: config.seed,
        objective_names: names,
        history,
        final_params: params,
        final_values,
        final_etas,
        final_vald,
        failed,
        wall_time: start.elapsed(),
    })
}

/// Index of the best finished trial: lowest final total, ties to the lower seed.
pub fn select_best(results: &[TrialResult]) -> Option<usize> {
    results
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.is_failed() && r.final_total().is_finite())
        .min_by(|(_, a), (_, b)| {
            a.final_total()
                .total_cmp(&b.final_total())
                .then(a.seed.cmp(&b.seed))
        })
        .map(|(i, _)| i)
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub results: Vec<TrialResult>,
    pub best: usize,
}

impl SweepResult {
    pub fn best(&self) -> &TrialResult {
        &self.results[self.best]
    }
}

/// One trial per seed, run in parallel; results come back in seed order.
pub fn sweep(config: &TrialConfig, seeds: &[u64]) -> Result<SweepResult> {
    if seeds.is_empty() {
        return Err(Error::Invalid("a sweep needs at least one seed".into()));
    }
    let results = seeds
        .par_iter()
        .map(|&s| run_trial(&config.with_seed(s)))
        .collect::<Result<Vec<_>>>()?;
    let best = select_best(&results).ok_or(Error::AllTrialsFailed(seeds.len()))?;
    Ok(SweepResult { results, best })
}

#[derive(Debug, Clone)]
pub struct TeacherStudent {
    pub teachers: SweepResult,
    pub student_config: TrialConfig,
    pub student: TrialResult,
    pub plan: WideningPlan,
    /// Objective values of the student before its first update.
    pub student_first: Vec<f64>,
}

/// Sweeps teachers, widens the best one by `delta_h` and trains the
/// student at half the teacher learning rate on the same losses.
pub fn teacher_student(
    teacher: &TrialConfig,
    seeds: &[u64],
    delta_h: &[usize],
    student_iterations: u64,
) -> Result<TeacherStudent> {
    let teachers = sweep(teacher, seeds)?;
    let best = teachers.best();
    let best_config = teacher.with_seed(best.seed);
    let net = best.final_params.network_params(&teacher.network)?;
    let widened = widen_net2net(&net, &teacher.network, delta_h, best.seed)?;
    let student_config = TrialConfig {
        network: widened.spec.clone(),
        iterations: student_iterations,
        lr: teacher.lr / 2.0,
        ..best_config.clone()
    };
    let params = TrainableVector::new(widened.params, best.final_params.named_extras());
    // same label draw as the selected teacher
    let prepared = prepare(&student_config)?;
    let student = run_prepared(&student_config, &prepared, params)?;
    let student_first = student
        .history
        .first()
        .map(|r| r.values.clone())
        .unwrap_or_default();
    Ok(TeacherStudent {
        teachers,
        student_config,
        student,
        plan: widened.plan,
        student_first,
    })
}
