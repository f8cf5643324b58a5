//! Auxiliary label sources and label statistics.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{solve_tridiagonal, SymBand};
use crate::math;
use crate::problems::{
    exact_solution, manufactured_source, ConductivityParams, Domain, ProblemSpec,
};
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelSource {
    Fem1d,
    Fd2d,
    Noisy,
    Zeros,
    Analytic,
    File,
}

impl LabelSource {
    pub fn name(self) -> &'static str {
        match self {
            LabelSource::Fem1d => "fem1d",
            LabelSource::Fd2d => "fd2d",
            LabelSource::Noisy => "noisy",
            LabelSource::Zeros => "zeros",
            LabelSource::Analytic => "analytic",
            LabelSource::File => "file",
        }
    }
}

/// Points with named field values.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    dim: usize,
    points: Vec<f64>,
    fields: Vec<(String, Vec<f64>)>,
    pub source: LabelSource,
}

/// Summary of one field. `flagged` marks a zero spread, for which output
/// normalisation is disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelStats {
    pub field: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub flagged: bool,
}

impl LabelSet {
    pub fn new(
        dim: usize,
        points: Vec<f64>,
        fields: Vec<(String, Vec<f64>)>,
        source: LabelSource,
    ) -> Result<Self> {
        if dim == 0 || !points.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} coordinates do not form {dim}D points",
                points.len()
            )));
        }
        let n = points.len() / dim;
        for (name, values) in &fields {
            if values.len() != n {
                return Err(Error::Shape(format!(
                    "field `{name}` has {} values for {n} points",
                    values.len()
                )));
            }
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "field `{name}` value {i} is not finite"
                )));
            }
            if fields.iter().filter(|(other, _)| other == name).count() > 1 {
                return Err(Error::Shape(format!("field `{name}` given twice")));
            }
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("coordinate {i} is not finite")));
        }
        Ok(LabelSet {
            dim,
            points,
            fields,
            source,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn field(&self, name: &str) -> Option<&[f64]> {
        self.fields
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn fields(&self) -> &[(String, Vec<f64>)] {
        &self.fields
    }

    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|(n, _)| n.as_str())
    }

    pub fn stats(&self) -> Vec<LabelStats> {
        label_stats(self)
    }
}

/// Population mean, standard deviation and range per field.
pub fn label_stats(labels: &LabelSet) -> Vec<LabelStats> {
    labels
        .fields
        .iter()
        .map(|(name, v)| {
            let n = v.len().max(1) as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let std = math::sqrt(var);
            LabelStats {
                field: name.clone(),
                mean,
                std,
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                flagged: std == 0.0,
            }
        })
        .collect()
}

/// Linear-element Galerkin solution of `-T'' = s` with exact Dirichlet ends;
/// the load uses one-point (midpoint) quadrature per element. Labels sit on
/// the interior nodes.
pub fn solve_fem_1d(spec: &ProblemSpec, n_elements: usize) -> Result<LabelSet> {
    let Domain::Interval { lo, hi } = spec.domain else {
        return Err(Error::Config(format!(
            "{} is not a 1D problem",
            spec.kind.name()
        )));
    };
    let left = exact_solution(spec, &[lo])?[0];
    let right = exact_solution(spec, &[hi])?[0];
    let (points, t) = fem_1d(
        lo,
        hi,
        n_elements,
        |x| manufactured_source(spec, &[x]),
        left,
        right,
    )?;
    LabelSet::new(1, points, vec![("T".to_string(), t)], LabelSource::Fem1d)
}

/// Interior nodes and nodal values of the linear-element solution of
/// `-T'' = source` on `[lo, hi]` with `T(lo) = left`, `T(hi) = right`.
pub fn fem_1d(
    lo: f64,
    hi: f64,
    n_elements: usize,
    source: impl Fn(f64) -> f64,
    left: f64,
    right: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if n_elements < 2 {
        return Err(Error::Parameter("at least two elements are needed".into()));
    }
    let h = (hi - lo) / n_elements as f64;
    let n = n_elements - 1;
    let mid_load: Vec<f64> = (0..n_elements)
        .map(|e| 0.5 * h * source(lo + (e as f64 + 0.5) * h))
        .collect();
    let mut rhs: Vec<f64> = (0..n).map(|i| mid_load[i] + mid_load[i + 1]).collect();
    rhs[0] += left / h;
    rhs[n - 1] += right / h;
    let diag = vec![2.0 / h; n];
    let off = vec![-1.0 / h; n - 1];
    let t = solve_tridiagonal(&off, &diag, &off, &rhs)?;
    Ok((
        (1..n_elements)
            .map(|i| lo + (hi - lo) * i as f64 / n_elements as f64)
            .collect(),
        t,
    ))
}

/// Five-point finite-difference solution of `laplace(T) + s = 0` on an
/// `nx x ny` node grid (boundary included) with exact Dirichlet values;
/// labels sit on the interior nodes, x1 varying fastest.
pub fn solve_fd_2d(spec: &ProblemSpec, nx: usize, ny: usize) -> Result<LabelSet> {
    let Domain::Rectangle { lo, hi } = spec.domain else {
        return Err(Error::Config(format!(
            "{} is not posed on a rectangle",
            spec.kind.name()
        )));
    };
    if spec.k_exact != ConductivityParams::IDENTITY {
        return Err(Error::Config(
            "the finite-difference solver assumes unit conductivity".into(),
        ));
    }
    let (points, t) = fd_2d(
        lo,
        hi,
        nx,
        ny,
        |x| manufactured_source(spec, x),
        |x| exact_solution(spec, x).map(|v| v[0]),
    )?;
    LabelSet::new(2, points, vec![("T".to_string(), t)], LabelSource::Fd2d)
}

/// Interior nodes and values of the five-point solution of
/// `laplace(T) + source = 0` with Dirichlet data `boundary`.
pub fn fd_2d(
    lo: [f64; 2],
    hi: [f64; 2],
    nx: usize,
    ny: usize,
    source: impl Fn(&[f64]) -> f64,
    boundary: impl Fn(&[f64]) -> Result<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if nx < 3 || ny < 3 {
        return Err(Error::Parameter(
            "grid needs at least 3 nodes per axis".into(),
        ));
    }
    let hx = (hi[0] - lo[0]) / (nx - 1) as f64;
    let hy = (hi[1] - lo[1]) / (ny - 1) as f64;
    let (ax, ay) = (1.0 / (hx * hx), 1.0 / (hy * hy));
    let (mx, my) = (nx - 2, ny - 2);
    // same rounding as the aux point generator, so labels line up exactly
    let node = |i: usize, j: usize| {
        [
            lo[0] + (hi[0] - lo[0]) * i as f64 / (nx - 1) as f64,
            lo[1] + (hi[1] - lo[1]) * j as f64 / (ny - 1) as f64,
        ]
    };
    let mut a = SymBand::zeros(mx * my, mx);
    let mut rhs = vec![0.0; mx * my];
    for j in 1..=my {
        for i in 1..=mx {
            let row = (j - 1) * mx + (i - 1);
            a.add(row, row, 2.0 * (ax + ay))?;
            rhs[row] = source(&node(i, j));
            for (ni, nj, w) in [
                (i - 1, j, ax),
                (i + 1, j, ax),
                (i, j - 1, ay),
                (i, j + 1, ay),
            ] {
                if ni == 0 || nj == 0 || ni == nx - 1 || nj == ny - 1 {
                    rhs[row] += w * boundary(&node(ni, nj))?;
                } else {
                    let col = (nj - 1) * mx + (ni - 1);
                    if col < row {
                        a.add(row, col, -w)?;
                    }
                }
            }
        }
    }
    let t = a.solve(&rhs)?;
    let mut points = Vec::with_capacity(2 * mx * my);
    for j in 1..=my {
        for i in 1..=mx {
            points.extend_from_slice(&node(i, j));
        }
    }
    Ok((points, t))
}

/// Adds independent Gaussian noise of standard deviation `std` to every value.
pub fn add_noise(labels: &LabelSet, std: f64, seed: u64) -> Result<LabelSet> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::Parameter(format!(
            "noise std {std} must be finite and non-negative"
        )));
    }
    let mut out = labels.clone();
    out.source = LabelSource::Noisy;
    if std == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = rng::seeded(seed, stream::NOISE);
    for (_, values) in out.fields.iter_mut() {
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Zero values for every solution field of the problem.
pub fn zero_labels(spec: &ProblemSpec, points: &[f64]) -> Result<LabelSet> {
    let dim = spec.dim();
    let n = points.len() / dim.max(1);
    let fields = spec
        .kind
        .solution_fields()
        .iter()
        .map(|f| (f.to_string(), vec![0.0; n]))
        .collect();
    LabelSet::new(dim, points.to_vec(), fields, LabelSource::Zeros)
}

/// Exact solution sampled at `points`, all solution fields.
pub fn analytic_downsample(spec: &ProblemSpec, points: &[f64]) -> Result<LabelSet> {
    let dim = spec.dim();
    let names = spec.kind.solution_fields();
    let mut cols = vec![Vec::new(); names.len()];
    for x in points.chunks(dim) {
        for (c, v) in cols.iter_mut().zip(exact_solution(spec, x)?) {
            c.push(v);
        }
    }
    let fields = names.iter().map(|n| n.to_string()).zip(cols).collect();
    LabelSet::new(dim, points.to_vec(), fields, LabelSource::Analytic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::ProblemKind;

    #[test]
    fn stats_examples() {
        let l = LabelSet::new(
            1,
            vec![0.0],
            vec![("T".into(), vec![3.0])],
            LabelSource::File,
        )
        .unwrap();
        let s = &l.stats()[0];
        assert_eq!((s.mean, s.std, s.flagged), (3.0, 0.0, true));
        let l = LabelSet::new(
            1,
            vec![0.0, 1.0],
            vec![("T".into(), vec![1.0, 3.0])],
            LabelSource::File,
        )
        .unwrap();
        let s = &l.stats()[0];
        assert_eq!(
            (s.mean, s.std, s.min, s.max, s.flagged),
            (2.0, 1.0, 1.0, 3.0, false)
        );
    }

    #[test]
    fn label_set_validation() {
        assert!(LabelSet::new(2, vec![0.0; 3], vec![], LabelSource::File).is_err());
        assert!(LabelSet::new(
            1,
            vec![0.0; 2],
            vec![("T".into(), vec![1.0])],
            LabelSource::File
        )
        .is_err());
        assert!(LabelSet::new(
            1,
            vec![0.0],
            vec![("T".into(), vec![f64::NAN])],
            LabelSource::File
        )
        .is_err());
        assert!(LabelSet::new(
            1,
            vec![0.0],
            vec![("T".into(), vec![1.0]), ("T".into(), vec![2.0])],
            LabelSource::File
        )
        .is_err());
    }

    #[test]
    fn fem_nine_interior_labels() {
        let spec = ProblemSpec::preset(ProblemKind::Poisson1d);
        let l = solve_fem_1d(&spec, 10).unwrap();
        assert_eq!(l.len(), 9);
        assert_eq!(l.points()[0], -8.0);
        assert!(solve_fem_1d(&spec, 1).is_err());
    }

    #[test]
    fn noise_and_zeros() {
        let spec = ProblemSpec::preset(ProblemKind::Poisson1d);
        let l = solve_fem_1d(&spec, 10).unwrap();
        let same = add_noise(&l, 0.0, 3).unwrap();
        assert_eq!(same.field("T"), l.field("T"));
        assert_eq!(label_stats(&same), label_stats(&l));
        assert_eq!(
            add_noise(&l, 2.0, 3).unwrap(),
            add_noise(&l, 2.0, 3).unwrap()
        );
        assert!(add_noise(&l, -1.0, 3).is_err());
        let z = zero_labels(&spec, l.points()).unwrap();
        assert_eq!(z.len(), 9);
        assert!(z.field("T").unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noise_has_requested_spread() {
        let spec = ProblemSpec::preset(ProblemKind::Poisson1d);
        let pts: Vec<f64> = (0..10_000)
            .map(|i| -10.0 + 20.0 * i as f64 / 10_000.0)
            .collect();
        let zero = zero_labels(&spec, &pts).unwrap();
        let noisy = add_noise(&zero, 2.0, 17).unwrap();
        let s = &noisy.stats()[0];
        assert!((s.std - 2.0).abs() / 2.0 < 0.05, "{}", s.std);
    }

    #[test]
    fn analytic_labels() {
        let spec = ProblemSpec::preset(ProblemKind::Poisson1d);
        assert_eq!(
            analytic_downsample(&spec, &[0.0])
                .unwrap()
                .field("T")
                .unwrap(),
            &[0.0]
        );
        let spec = ProblemSpec::preset(ProblemKind::ElasticityHole);
        let l = analytic_downsample(&spec, &[1.0, 0.0]).unwrap();
        assert_eq!(l.field("u2").unwrap()[0].abs(), 0.0);
        assert_eq!(l.field_names().count(), 5);
        assert!(analytic_downsample(&spec, &[0.5, 0.0]).is_err());
    }
}
