//! Objective bookkeeping, annealed auxiliary weights and gradient surgery.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, stream};

/// One named loss term with its annealing weight and parameter gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub name: String,
    pub value: f64,
    /// Weight `eta` in `[0, 1]`; 1 for physics terms.
    pub weight: f64,
    pub gradient: Vec<f64>,
}

impl ObjectiveValue {
    pub fn new(name: impl Into<String>, value: f64, weight: f64, gradient: Vec<f64>) -> Self {
        ObjectiveValue {
            name: name.into(),
            value,
            weight,
            gradient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnnealMode {
    /// Halve the weight every `delta_t` iterations once `t_aux` is reached.
    Halving,
    /// Drop the weight to zero at `t_aux`.
    Cutoff,
}

/// Schedule of an auxiliary task weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxSchedule {
    pub t_aux: u64,
    pub delta_t: u64,
    pub mode: AnnealMode,
    /// Weights below this snap to zero.
    pub floor: f64,
}

pub const DEFAULT_FLOOR: f64 = 1.0 / 1024.0;

impl AuxSchedule {
    pub fn halving(t_aux: u64, delta_t: u64) -> Self {
        AuxSchedule {
            t_aux,
            delta_t,
            mode: AnnealMode::Halving,
            floor: DEFAULT_FLOOR,
        }
    }

    pub fn cutoff(t_aux: u64) -> Self {
        AuxSchedule {
            t_aux,
            delta_t: 1,
            mode: AnnealMode::Cutoff,
            floor: DEFAULT_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == AnnealMode::Halving && self.delta_t == 0 {
            return Err(Error::Parameter("delta_t must be at least 1".into()));
        }
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return Err(Error::Parameter("floor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Weight of an auxiliary objective at `iteration`.
///
/// Halving mode: `0.5^ceil((iteration - t_aux) / delta_t)`, so the weight is
/// still 1 at `t_aux`, halves right after it and again every `delta_t`.
pub fn aux_weight(schedule: &AuxSchedule, iteration: u64) -> f64 {
    if iteration < schedule.t_aux {
        return 1.0;
    }
    match schedule.mode {
        AnnealMode::Cutoff => 0.0,
        AnnealMode::Halving => {
            let halvings = (iteration - schedule.t_aux).div_ceil(schedule.delta_t.max(1));
            if halvings > 1074 {
                return 0.0;
            }
            let w = math::powi(0.5, halvings as i32);
            if w < schedule.floor {
                0.0
            } else {
                w
            }
        }
    }
}

/// A projection skipped because the conflicting gradient had zero norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkippedProjection {
    pub task: usize,
    pub against: usize,
}

/// Output of [`gradient_surgery`].
#[derive(Debug, Clone, PartialEq)]
pub struct SurgeryResult {
    pub modified: Vec<Vec<f64>>,
    pub aggregate: Vec<f64>,
    /// For each task `i`, the shuffled order of the other tasks.
    pub plan: Vec<Vec<usize>>,
    /// `(i, j)` pairs where `g_i` was projected onto the normal plane of `g_j`.
    pub projections: Vec<(usize, usize)>,
    pub skipped: Vec<SkippedProjection>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The per-task shuffle orders that [`gradient_surgery`] uses for `seed`.
pub fn surgery_plan(n_tasks: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = rng::seeded(seed, stream::SURGERY);
    (0..n_tasks)
        .map(|i| {
            let mut others: Vec<usize> = (0..n_tasks).filter(|&j| j != i).collect();
            others.shuffle(&mut rng);
            others
        })
        .collect()
}

/// Projects each conflicting task gradient onto the normal plane of the
/// original gradients it conflicts with, visiting the other tasks in a
/// seeded random order, and sums the results.
pub fn gradient_surgery(grads: &[Vec<f64>], seed: u64) -> Result<SurgeryResult> {
    let plan = surgery_plan(grads.len(), seed);
    gradient_surgery_with_plan(grads, plan)
}

/// [`gradient_surgery`] with an explicit visiting order per task.
pub fn gradient_surgery_with_plan(
    grads: &[Vec<f64>],
    plan: Vec<Vec<usize>>,
) -> Result<SurgeryResult> {
    let Some(first) = grads.first() else {
        return Err(Error::Parameter(
            "gradient surgery needs at least one task".into(),
        ));
    };
    let dim = first.len();
    if grads.iter().any(|g| g.len() != dim) {
        return Err(Error::Shape("task gradients differ in length".into()));
    }
    if plan.len() != grads.len() {
        return Err(Error::Shape("one shuffle order per task required".into()));
    }
    let norms2: Vec<f64> = grads.iter().map(|g| dot(g, g)).collect();
    let mut modified = grads.to_vec();
    let mut projections = Vec::new();
    let mut skipped = Vec::new();
    for (i, order) in plan.iter().enumerate() {
        let gi = &mut modified[i];
        for &j in order {
            let gj = &grads[j];
            let d = dot(gi, gj);
            if d < 0.0 {
                if norms2[j] == 0.0 {
                    skipped.push(SkippedProjection {
                        task: i,
                        against: j,
                    });
                    continue;
                }
                let c = d / norms2[j];
                for (a, b) in gi.iter_mut().zip(gj) {
                    *a -= c * b;
                }
                projections.push((i, j));
            }
        }
    }
    let mut aggregate = vec![0.0; dim];
    for g in &modified {
        for (a, b) in aggregate.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok(SurgeryResult {
        modified,
        aggregate,
        plan,
        projections,
        skipped,
    })
}

/// `sum eta_i * L_i` and `sum eta_i * g_i`.
pub fn weighted_sum(objectives: &[ObjectiveValue]) -> Result<(f64, Vec<f64>)> {
    let dim = objectives.first().map_or(0, |o| o.gradient.len());
    if objectives.iter().any(|o| o.gradient.len() != dim) {
        return Err(Error::Shape("objective gradients differ in length".into()));
    }
    let mut total = 0.0;
    let mut grad = vec![0.0; dim];
    for o in objectives {
        if o.weight == 0.0 {
            continue;
        }
        total += o.weight * o.value;
        for (a, b) in grad.iter_mut().zip(&o.gradient) {
            *a += o.weight * b;
        }
    }
    Ok((total, grad))
}

/// Pairwise cosines and norm ratios of task gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictReport {
    pub cosines: Vec<Vec<f64>>,
    /// `ratios[i][j] = |g_i| / |g_j|` (infinite when only `g_j` vanishes,
    /// NaN when both do).
    pub ratios: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
    /// Tasks whose gradient vanished.
    pub zero_norm: Vec<bool>,
}

impl ConflictReport {
    /// Number of pairs `i < j` with a negative inner product.
    pub fn conflicts(&self) -> usize {
        let n = self.cosines.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.cosines[i][j] < 0.0)
            .count()
    }

    /// Upper-triangle cosines in row order.
    pub fn flat_cosines(&self) -> Vec<f64> {
        let n = self.cosines.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| self.cosines[i][j])
            .collect()
    }
}

pub fn conflict_report(grads: &[Vec<f64>]) -> ConflictReport {
    let norms: Vec<f64> = grads.iter().map(|g| math::sqrt(dot(g, g))).collect();
    let zero_norm: Vec<bool> = norms.iter().map(|&n| n == 0.0).collect();
    let n = grads.len();
    let mut cosines = vec![vec![0.0; n]; n];
    let mut ratios = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            ratios[i][j] = norms[i] / norms[j];
            if zero_norm[i] || zero_norm[j] {
                continue;
            }
            cosines[i][j] = if i == j {
                1.0
            } else {
                (dot(&grads[i], &grads[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
        }
    }
    ConflictReport {
        cosines,
        ratios,
        norms,
        zero_norm,
    }
}
