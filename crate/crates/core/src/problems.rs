//! The benchmark boundary-value problems: exact solutions, sources,
//! collocation layouts and loss assembly.
//!
//! All problems use the convention `div(K grad T) + s = 0` (with `K = I`
//! for the forward heat problems).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::autodiff::{jets, loss_gradients, JetVars, Order, OutputMap, PointGroup, Tape, Var};
use crate::error::{Error, Result};
use crate::labels::LabelSet;
use crate::math::{self, PI};
use crate::multiobjective::ObjectiveValue;
use crate::network::NetworkSpec;
use crate::rng::{self, stream};
use crate::trainable::TrainableVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    Poisson1d,
    Heat1dMixed,
    Poisson2d,
    ElasticityHole,
    InversePoisson2d,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 5] = [
        ProblemKind::Poisson1d,
        ProblemKind::Heat1dMixed,
        ProblemKind::Poisson2d,
        ProblemKind::ElasticityHole,
        ProblemKind::InversePoisson2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Poisson1d => "poisson1d",
            ProblemKind::Heat1dMixed => "heat1d_mixed",
            ProblemKind::Poisson2d => "poisson2d",
            ProblemKind::ElasticityHole => "elasticity_hole",
            ProblemKind::InversePoisson2d => "inverse_poisson2d",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ProblemKind::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn dim(self) -> usize {
        match self {
            ProblemKind::Poisson1d | ProblemKind::Heat1dMixed => 1,
            _ => 2,
        }
    }

    /// Fields produced by the network, in output order.
    pub fn output_fields(self) -> &'static [&'static str] {
        match self {
            ProblemKind::Poisson1d | ProblemKind::Poisson2d | ProblemKind::InversePoisson2d => {
                &["T"]
            }
            ProblemKind::Heat1dMixed => &["T", "q"],
            ProblemKind::ElasticityHole => &["u1", "u2", "e11", "e22", "e12"],
        }
    }

    /// Fields returned by [`exact_solution`] and carried by labels.
    pub fn solution_fields(self) -> &'static [&'static str] {
        match self {
            ProblemKind::InversePoisson2d => &["T", "q1", "q2"],
            k => k.output_fields(),
        }
    }

    /// Names of trainable scalars beyond the network weights.
    pub fn extra_names(self) -> &'static [&'static str] {
        match self {
            ProblemKind::InversePoisson2d => &["k11", "k12", "k22"],
            _ => &[],
        }
    }

    /// Whether the kind needs labels for its core objectives.
    pub fn requires_labels(self) -> bool {
        self == ProblemKind::InversePoisson2d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Interval {
        lo: f64,
        hi: f64,
    },
    Rectangle {
        lo: [f64; 2],
        hi: [f64; 2],
    },
    /// `[0, L]^2` minus the disc of radius `r_c` at the origin.
    QuarterPlate {
        half_width: f64,
        hole_radius: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticMaterial {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// Remote traction.
    pub sigma0: f64,
}

/// Upper triangle of a symmetric 2x2 conductivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConductivityParams {
    pub k11: f64,
    pub k12: f64,
    pub k22: f64,
}

impl ConductivityParams {
    pub const IDENTITY: ConductivityParams = ConductivityParams {
        k11: 1.0,
        k12: 0.0,
        k22: 1.0,
    };

    pub fn det(&self) -> f64 {
        self.k11 * self.k22 - self.k12 * self.k12
    }

    pub fn is_positive_definite(&self) -> bool {
        self.k11 > 0.0 && self.det() > 0.0
    }

    pub fn apply(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.k11 * g[0] + self.k12 * g[1],
            self.k12 * g[0] + self.k22 * g[1],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub domain: Domain,
    /// Used by the elasticity problem only.
    pub material: ElasticMaterial,
    /// Target conductivity of the inverse problem; identity otherwise.
    pub k_exact: ConductivityParams,
}

impl ProblemSpec {
    pub fn preset(kind: ProblemKind) -> Self {
        let domain = match kind {
            ProblemKind::Poisson1d => Domain::Interval {
                lo: -10.0,
                hi: 10.0,
            },
            ProblemKind::Heat1dMixed => Domain::Interval { lo: -1.0, hi: 1.0 },
            ProblemKind::Poisson2d | ProblemKind::InversePoisson2d => Domain::Rectangle {
                lo: [0.0, 0.0],
                hi: [1.0, 1.0],
            },
            ProblemKind::ElasticityHole => Domain::QuarterPlate {
                half_width: 5.0,
                hole_radius: 1.0,
            },
        };
        let k_exact = match kind {
            ProblemKind::InversePoisson2d => ConductivityParams {
                k11: 1.0,
                k12: 1.0,
                k22: 2.0,
            },
            _ => ConductivityParams::IDENTITY,
        };
        ProblemSpec {
            kind,
            domain,
            material: ElasticMaterial {
                youngs_modulus: 1.0,
                poisson_ratio: 0.3,
                sigma0: 0.1,
            },
            k_exact,
        }
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let domain_ok = match (self.kind, self.domain) {
            (ProblemKind::Poisson1d | ProblemKind::Heat1dMixed, Domain::Interval { lo, hi }) => {
                lo < hi
            }
            (
                ProblemKind::Poisson2d | ProblemKind::InversePoisson2d,
                Domain::Rectangle { lo, hi },
            ) => lo[0] < hi[0] && lo[1] < hi[1],
            (
                ProblemKind::ElasticityHole,
                Domain::QuarterPlate {
                    half_width,
                    hole_radius,
                },
            ) => hole_radius > 0.0 && hole_radius < half_width,
            _ => false,
        };
        if !domain_ok {
            return Err(Error::Config(format!(
                "invalid domain {:?} for {}",
                self.domain,
                self.kind.name()
            )));
        }
        if self.kind == ProblemKind::ElasticityHole {
            let m = self.material;
            if !(m.youngs_modulus > 0.0) {
                return Err(Error::Config("Young's modulus must be positive".into()));
            }
            if !(m.poisson_ratio > 0.0 && m.poisson_ratio < 0.5) {
                return Err(Error::Config("Poisson ratio must lie in (0, 0.5)".into()));
            }
        }
        if self.kind == ProblemKind::InversePoisson2d && !self.k_exact.is_positive_definite() {
            return Err(Error::Config(
                "target conductivity must be positive definite".into(),
            ));
        }
        Ok(())
    }

    /// Axis-aligned bounding box.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self.domain {
            Domain::Interval { lo, hi } => (vec![lo], vec![hi]),
            Domain::Rectangle { lo, hi } => (lo.to_vec(), hi.to_vec()),
            Domain::QuarterPlate { half_width, .. } => {
                (vec![0.0, 0.0], vec![half_width, half_width])
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let (lo, hi) = self.bounds();
        let inside = x.len() == lo.len()
            && x.iter()
                .zip(lo.iter().zip(&hi))
                .all(|(v, (a, b))| v >= a && v <= b);
        match self.domain {
            Domain::QuarterPlate { hole_radius, .. } if inside => {
                math::sqrt(x[0] * x[0] + x[1] * x[1]) >= hole_radius * (1.0 - 1e-12)
            }
            _ => inside,
        }
    }

    fn hole(&self) -> (f64, f64) {
        match self.domain {
            Domain::QuarterPlate {
                half_width,
                hole_radius,
            } => (half_width, hole_radius),
            _ => (0.0, 0.0),
        }
    }
}

/// Source `s` such that the exact solution satisfies `div(K grad T) + s = 0`.
/// Zero for the elasticity problem (no body force).
pub fn manufactured_source(spec: &ProblemSpec, x: &[f64]) -> f64 {
    match spec.kind {
        ProblemKind::Poisson1d => math::sin(x[0]),
        ProblemKind::Heat1dMixed => {
            let w = 1.2 * PI;
            w * w * math::sin(w * x[0])
        }
        ProblemKind::Poisson2d | ProblemKind::ElasticityHole => 0.0,
        ProblemKind::InversePoisson2d => {
            let k = spec.k_exact;
            let (s1, c1) = (math::sin(PI * x[0]), math::cos(PI * x[0]));
            let (s2, c2) = (math::sin(PI * x[1]), math::cos(PI * x[1]));
            PI * PI * ((k.k11 + k.k22) * s1 * s2 - 2.0 * k.k12 * c1 * c2)
        }
    }
}

/// Displacement and strain of the elasticity problem at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticFields {
    pub u: [f64; 2],
    /// `(e11, e22, e12)` with tensor (not engineering) shear.
    pub eps: [f64; 3],
}

impl ElasticFields {
    pub fn sigma(&self, material: &ElasticMaterial) -> Result<[f64; 3]> {
        plane_strain_stress(self.eps, material.youngs_modulus, material.poisson_ratio)
    }
}

/// Infinite plate with a circular hole under remote uniaxial traction along x1.
pub fn kirsch(material: &ElasticMaterial, hole_radius: f64, x: &[f64]) -> Result<ElasticFields> {
    let r = math::sqrt(x[0] * x[0] + x[1] * x[1]);
    if !(r >= hole_radius * (1.0 - 1e-12)) {
        return Err(Error::Domain(format!(
            "point ({}, {}) lies inside the hole",
            x[0], x[1]
        )));
    }
    let nu = material.poisson_ratio;
    let a = material.sigma0 * (1.0 + nu) * hole_radius / (2.0 * material.youngs_modulus);
    let th = math::atan2(x[1], x[0]);
    let (s1, c1) = (math::sin(th), math::cos(th));
    let (s3, c3) = (math::sin(3.0 * th), math::cos(3.0 * th));
    let p = r / hole_radius;
    let (ip, ip2) = (1.0 / p, 1.0 / (p * p));
    let g = ip - ip * ip2;
    let dg = -ip2 + 3.0 * ip2 * ip2;
    let u1 = a * (2.0 * (1.0 - nu) * (p + 2.0 * ip) * c1 + g * c3);
    let u2 = a * (-2.0 * (1.0 - 2.0 * nu) * ip * s1 - 2.0 * nu * p * s1 + g * s3);
    // derivatives in (p, theta)
    let u1_p = a * (2.0 * (1.0 - nu) * (1.0 - 2.0 * ip2) * c1 + dg * c3);
    let u1_t = a * (-2.0 * (1.0 - nu) * (p + 2.0 * ip) * s1 - 3.0 * g * s3);
    let u2_p = a * (2.0 * (1.0 - 2.0 * nu) * ip2 * s1 - 2.0 * nu * s1 + dg * s3);
    let u2_t = a * (-2.0 * (1.0 - 2.0 * nu) * ip * c1 - 2.0 * nu * p * c1 + 3.0 * g * c3);
    let (dr, inv_r) = (1.0 / hole_radius, 1.0 / r);
    let d1 = |f_p: f64, f_t: f64| c1 * f_p * dr - s1 * inv_r * f_t;
    let d2 = |f_p: f64, f_t: f64| s1 * f_p * dr + c1 * inv_r * f_t;
    Ok(ElasticFields {
        u: [u1, u2],
        eps: [
            d1(u1_p, u1_t),
            d2(u2_p, u2_t),
            0.5 * (d2(u1_p, u1_t) + d1(u2_p, u2_t)),
        ],
    })
}

/// Exact fields in [`ProblemKind::solution_fields`] order.
pub fn exact_solution(spec: &ProblemSpec, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.dim() {
        return Err(Error::Shape(format!(
            "point of dimension {} for a {}D problem",
            x.len(),
            spec.dim()
        )));
    }
    Ok(match spec.kind {
        ProblemKind::Poisson1d => vec![x[0] + math::sin(x[0])],
        ProblemKind::Heat1dMixed => {
            let w = 1.2 * PI;
            vec![math::sin(w * x[0]), w * math::cos(w * x[0])]
        }
        ProblemKind::Poisson2d => vec![math::sin(4.0 * PI * x[1]) * math::exp(-4.0 * PI * x[0])],
        ProblemKind::ElasticityHole => {
            let f = kirsch(&spec.material, spec.hole().1, x)?;
            vec![f.u[0], f.u[1], f.eps[0], f.eps[1], f.eps[2]]
        }
        ProblemKind::InversePoisson2d => {
            let (s1, c1) = (math::sin(PI * x[0]), math::cos(PI * x[0]));
            let (s2, c2) = (math::sin(PI * x[1]), math::cos(PI * x[1]));
            let q = spec.k_exact.apply([PI * c1 * s2, PI * s1 * c2]);
            vec![s1 * s2, q[0], q[1]]
        }
    })
}

/// Plane-strain Hooke's law; returns `(s11, s22, s12)`.
pub fn plane_strain_stress(eps: [f64; 3], e: f64, nu: f64) -> Result<[f64; 3]> {
    let (lam, mu) = lame(e, nu)?;
    let tr = eps[0] + eps[1];
    Ok([
        lam * tr + 2.0 * mu * eps[0],
        lam * tr + 2.0 * mu * eps[1],
        2.0 * mu * eps[2],
    ])
}

/// Lame constants `(lambda, mu)`.
pub fn lame(e: f64, nu: f64) -> Result<(f64, f64)> {
    if !(e > 0.0) {
        return Err(Error::Parameter(format!(
            "Young's modulus {e} must be positive"
        )));
    }
    if !(nu > 0.0 && nu < 0.5) {
        return Err(Error::Parameter(format!(
            "Poisson ratio {nu} outside (0, 0.5)"
        )));
    }
    Ok((
        e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)),
        e / (2.0 * (1.0 + nu)),
    ))
}

/// Von Mises stress under plane strain (`s33 = nu (s11 + s22)`).
pub fn von_mises(sigma: [f64; 3], nu: f64) -> f64 {
    let [s11, s22, s12] = sigma;
    let s33 = nu * (s11 + s22);
    let a = s11 - s22;
    let b = s22 - s33;
    let c = s33 - s11;
    math::sqrt(0.5 * (a * a + b * b + c * c) + 3.0 * s12 * s12)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupKind {
    Pde,
    Dbc,
    Nbc,
    Aux,
    Vald,
}

impl GroupKind {
    pub const ALL: [GroupKind; 5] = [
        GroupKind::Pde,
        GroupKind::Dbc,
        GroupKind::Nbc,
        GroupKind::Aux,
        GroupKind::Vald,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GroupKind::Pde => "pde",
            GroupKind::Dbc => "dbc",
            GroupKind::Nbc => "nbc",
            GroupKind::Aux => "aux",
            GroupKind::Vald => "vald",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        GroupKind::ALL.into_iter().find(|g| g.name() == name)
    }
}

/// Named point groups; coordinates stored row-major, `dim` per point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CollocationSet {
    pub dim: usize,
    groups: Vec<(GroupKind, Vec<f64>)>,
}

impl CollocationSet {
    pub fn new(dim: usize) -> Self {
        CollocationSet {
            dim,
            groups: Vec::new(),
        }
    }

    pub fn insert(&mut self, kind: GroupKind, points: Vec<f64>) -> Result<()> {
        if self.dim == 0 || !points.len().is_multiple_of(self.dim) {
            return Err(Error::Shape(format!(
                "{} coordinates do not form {}D points",
                points.len(),
                self.dim
            )));
        }
        match self.groups.iter_mut().find(|(k, _)| *k == kind) {
            Some(slot) => slot.1 = points,
            None => {
                self.groups.push((kind, points));
                self.groups.sort_by_key(|(k, _)| *k);
            }
        }
        Ok(())
    }

    pub fn get(&self, kind: GroupKind) -> Option<&[f64]> {
        self.groups
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, p)| p.as_slice())
    }

    pub fn require(&self, kind: GroupKind) -> Result<&[f64]> {
        self.get(kind)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| Error::Config(format!("missing collocation group `{}`", kind.name())))
    }

    pub fn count(&self, kind: GroupKind) -> usize {
        self.get(kind).map_or(0, |p| p.len() / self.dim.max(1))
    }

    pub fn groups(&self) -> impl Iterator<Item = (GroupKind, &[f64])> {
        self.groups.iter().map(|(k, p)| (*k, p.as_slice()))
    }

    pub fn point(&self, kind: GroupKind, i: usize) -> Option<&[f64]> {
        self.get(kind)
            .and_then(|p| p.get(i * self.dim..(i + 1) * self.dim))
    }
}

/// Point counts. Meaning per kind:
///
/// * `pde`: interior points (1D), grid points per axis (2D), angles (hole).
/// * `pde_radial`: points per ray (hole only).
/// * `dbc`: points per boundary side (2D).
/// * `nbc`: hole-boundary points.
/// * `aux`: label resolution: FEM elements (1D), FD nodes per axis
///   including boundary (2D Poisson), polar cells per direction (hole),
///   grid points per axis (inverse).
/// * `vald`: Latin-hypercube size, or grid points per axis for the hole.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollocationLayout {
    pub pde: usize,
    pub pde_radial: usize,
    pub dbc: usize,
    pub nbc: usize,
    pub aux: usize,
    pub vald: usize,
    pub seed: u64,
}

impl CollocationLayout {
    pub fn preset(kind: ProblemKind) -> Self {
        let (pde, pde_radial, dbc, nbc, aux, vald) = match kind {
            ProblemKind::Poisson1d => (60, 0, 1, 0, 10, 50),
            ProblemKind::Heat1dMixed => (100, 0, 1, 0, 0, 100),
            ProblemKind::Poisson2d => (40, 0, 40, 0, 11, 2000),
            ProblemKind::ElasticityHole => (50, 50, 200, 160, 10, 41),
            ProblemKind::InversePoisson2d => (30, 0, 100, 0, 45, 1000),
        };
        CollocationLayout {
            pde,
            pde_radial,
            dbc,
            nbc,
            aux,
            vald,
            seed: 0,
        }
    }
}

/// Stratified sample of `n` points in the box `[lo, hi]`.
pub fn latin_hypercube(n: usize, lo: &[f64], hi: &[f64], seed: u64) -> Vec<f64> {
    let dim = lo.len();
    let mut rng = rng::seeded(seed, stream::HYPERCUBE);
    let mut out = vec![0.0; n * dim];
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (i, &s) in strata.iter().enumerate() {
            let u: f64 = rng.random();
            out[i * dim + d] = lo[d] + (hi[d] - lo[d]) * (s as f64 + u) / n as f64;
        }
    }
    out
}

fn cell_centred_grid(n: usize, lo: [f64; 2], hi: [f64; 2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            out.push(lo[0] + (hi[0] - lo[0]) * (i as f64 + 0.5) / n as f64);
            out.push(lo[1] + (hi[1] - lo[1]) * (j as f64 + 0.5) / n as f64);
        }
    }
    out
}

/// `n` points per side walking the rectangle boundary counter-clockwise
/// from `lo`; each side includes its starting corner only.
fn rectangle_boundary(n: usize, lo: [f64; 2], hi: [f64; 2]) -> Vec<f64> {
    let corners = [lo, [hi[0], lo[1]], hi, [lo[0], hi[1]], lo];
    let mut out = Vec::with_capacity(8 * n);
    for s in 0..4 {
        let (a, b) = (corners[s], corners[s + 1]);
        for i in 0..n {
            let t = i as f64 / n as f64;
            out.push(a[0] + t * (b[0] - a[0]));
            out.push(a[1] + t * (b[1] - a[1]));
        }
    }
    out
}

/// Distance from the origin to the outer square edge along angle `theta`.
fn ray_length(half_width: f64, theta: f64) -> f64 {
    half_width / math::cos(theta).max(math::sin(theta))
}

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        if n == 1 {
            a
        } else {
            a + (b - a) * i as f64 / (n - 1) as f64
        }
    })
}

/// Label points implied by the layout: FEM nodes, FD interior nodes, the
/// polar cell centres of the hole problem, or the inverse-data grid.
pub fn aux_points(spec: &ProblemSpec, layout: &CollocationLayout) -> Vec<f64> {
    let n = layout.aux;
    match (spec.kind, spec.domain) {
        (_, Domain::Interval { lo, hi }) => (1..n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .collect(),
        (ProblemKind::Poisson2d, Domain::Rectangle { lo, hi }) => {
            let mut out = Vec::new();
            for j in 1..n.saturating_sub(1) {
                for i in 1..n - 1 {
                    out.push(lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64);
                    out.push(lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64);
                }
            }
            out
        }
        (_, Domain::Rectangle { lo, hi }) => cell_centred_grid(n, lo, hi),
        (
            _,
            Domain::QuarterPlate {
                half_width,
                hole_radius,
            },
        ) => {
            let mut out = Vec::with_capacity(2 * n * n);
            for i in 0..n {
                let th = (i as f64 + 0.5) * (PI / 2.0) / n as f64;
                let len = ray_length(half_width, th);
                for j in 0..n {
                    let r = hole_radius + (j as f64 + 0.5) * (len - hole_radius) / n as f64;
                    out.push(r * math::cos(th));
                    out.push(r * math::sin(th));
                }
            }
            out
        }
    }
}

/// Builds the pde, dbc, nbc, aux and vald groups for `spec`.
pub fn generate_collocation(
    spec: &ProblemSpec,
    layout: &CollocationLayout,
) -> Result<CollocationSet> {
    spec.validate()?;
    let mut set = CollocationSet::new(spec.dim());
    let (lo_b, hi_b) = spec.bounds();
    match spec.domain {
        Domain::Interval { lo, hi } => {
            let n = layout.pde;
            if n == 0 {
                return Err(Error::Config("pde point count must be at least 1".into()));
            }
            set.insert(
                GroupKind::Pde,
                (1..=n)
                    .map(|i| lo + (hi - lo) * i as f64 / (n + 1) as f64)
                    .collect(),
            )?;
            set.insert(GroupKind::Dbc, vec![lo, hi])?;
        }
        Domain::Rectangle { lo, hi } => {
            if layout.pde == 0 || layout.dbc == 0 {
                return Err(Error::Config(
                    "pde and dbc counts must be at least 1".into(),
                ));
            }
            set.insert(GroupKind::Pde, cell_centred_grid(layout.pde, lo, hi))?;
            set.insert(GroupKind::Dbc, rectangle_boundary(layout.dbc, lo, hi))?;
        }
        Domain::QuarterPlate {
            half_width,
            hole_radius,
        } => {
            let (na, nr) = (layout.pde, layout.pde_radial);
            if na == 0 || nr == 0 || layout.dbc < 2 || layout.nbc < 2 {
                return Err(Error::Config(
                    "hole layout needs pde, pde_radial >= 1 and dbc, nbc >= 2".into(),
                ));
            }
            let mut pde = Vec::with_capacity(2 * na * nr);
            for i in 1..=na {
                let th = i as f64 * (PI / 2.0) / (na + 1) as f64;
                let len = ray_length(half_width, th);
                for j in 1..=nr {
                    let r = hole_radius + j as f64 * (len - hole_radius) / (nr + 1) as f64;
                    pde.push(r * math::cos(th));
                    pde.push(r * math::sin(th));
                }
            }
            set.insert(GroupKind::Pde, pde)?;
            let n = layout.dbc;
            let sides: [([f64; 2], [f64; 2]); 4] = [
                ([hole_radius, 0.0], [half_width, 0.0]),
                ([half_width, 0.0], [half_width, half_width]),
                ([half_width, half_width], [0.0, half_width]),
                ([0.0, half_width], [0.0, hole_radius]),
            ];
            let mut dbc = Vec::with_capacity(8 * n);
            for (a, b) in sides {
                for t in linspace(0.0, 1.0, n) {
                    dbc.push(a[0] + t * (b[0] - a[0]));
                    dbc.push(a[1] + t * (b[1] - a[1]));
                }
            }
            set.insert(GroupKind::Dbc, dbc)?;
            let nbc = linspace(0.0, PI / 2.0, layout.nbc)
                .flat_map(|th| [hole_radius * math::cos(th), hole_radius * math::sin(th)])
                .collect();
            set.insert(GroupKind::Nbc, nbc)?;
        }
    }
    if layout.aux > 0 && spec.kind != ProblemKind::Heat1dMixed {
        set.insert(GroupKind::Aux, aux_points(spec, layout))?;
    }
    let vald = match spec.domain {
        Domain::QuarterPlate { half_width, .. } => {
            let mut out = Vec::new();
            for y in linspace(0.0, half_width, layout.vald) {
                for x in linspace(0.0, half_width, layout.vald) {
                    if spec.contains(&[x, y]) {
                        out.push(x);
                        out.push(y);
                    }
                }
            }
            out
        }
        _ => latin_hypercube(layout.vald, &lo_b, &hi_b, layout.seed),
    };
    if !vald.is_empty() {
        set.insert(GroupKind::Vald, vald)?;
    }
    Ok(set)
}

/// Names of the objectives assembled for `kind`, and which are auxiliary.
pub fn objective_names(kind: ProblemKind, with_aux: bool) -> Vec<(&'static str, bool)> {
    let mut out: Vec<(&'static str, bool)> = match kind {
        ProblemKind::Poisson1d | ProblemKind::Poisson2d => vec![("pde", false), ("dbc", false)],
        ProblemKind::Heat1dMixed => vec![("pde", false), ("dbc", false), ("compat", false)],
        ProblemKind::ElasticityHole => vec![
            ("pde", false),
            ("strn", false),
            ("dbc", false),
            ("nbc", false),
        ],
        ProblemKind::InversePoisson2d => vec![
            ("pde", false),
            ("dbc", false),
            ("T", false),
            ("q1", false),
            ("q2", false),
            ("posdef", false),
        ],
    };
    if with_aux {
        match kind {
            ProblemKind::Poisson1d => out.push(("aux_T", true)),
            ProblemKind::Poisson2d => out.push(("aux_fem", true)),
            ProblemKind::ElasticityHole => {
                out.push(("fem_u", true));
                out.push(("fem_eps", true));
            }
            _ => {}
        }
    }
    out
}

/// Which gradients [`Assembler::evaluate`] should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// No gradients, values only.
    None,
    /// One gradient per objective (zero vector when its weight is zero).
    PerObjective,
    /// Only the weighted total gradient.
    Total,
}

/// Result of one assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Gradients are empty unless [`GradientMode::PerObjective`] was asked for.
    pub objectives: Vec<ObjectiveValue>,
    /// Weighted total gradient for [`GradientMode::Total`].
    pub total_gradient: Option<Vec<f64>>,
}

impl Evaluation {
    /// `sum eta_i L_i`.
    pub fn weighted_total(&self) -> f64 {
        self.objectives
            .iter()
            .filter(|o| o.weight != 0.0)
            .map(|o| o.weight * o.value)
            .sum()
    }

    /// Unweighted sum over objectives with nonzero weight.
    pub fn active_total(&self) -> f64 {
        self.objectives
            .iter()
            .filter(|o| o.weight != 0.0)
            .map(|o| o.value)
            .sum()
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.objectives
            .iter()
            .find(|o| o.name == name)
            .map(|o| o.value)
    }
}

/// Output normalisation from label statistics: `mu + sigma * y` for every
/// network output whose field has labels with nonzero spread.
pub fn output_map_from_labels(kind: ProblemKind, labels: &LabelSet) -> OutputMap {
    let fields = kind.output_fields();
    let mut map = OutputMap::identity(fields.len());
    let stats = labels.stats();
    for (k, f) in fields.iter().enumerate() {
        if let Some(s) = stats.iter().find(|s| s.field == *f) {
            if !s.flagged {
                map.shift[k] = s.mean;
                map.scale[k] = s.std;
            }
        }
    }
    map
}

struct LabelColumns {
    /// Per solution field: values and inverse residual scale.
    columns: Vec<(Vec<f64>, f64)>,
}

/// Precomputed loss assembly for one problem and point set.
pub struct Assembler {
    spec: ProblemSpec,
    names: Vec<(&'static str, bool)>,
    pde: Vec<f64>,
    source: Vec<f64>,
    dbc: Vec<f64>,
    dbc_target: Vec<Vec<f64>>,
    nbc: Vec<f64>,
    normals: Vec<[f64; 2]>,
    aux: Vec<f64>,
    labels: Option<LabelColumns>,
    map: Option<OutputMap>,
    lame: (f64, f64),
}

impl Assembler {
    /// `labels`, when given, must sit on the `aux` group points. With
    /// `normalize`, outputs are rescaled by label statistics and label
    /// residuals are divided by the label standard deviation.
    pub fn new(
        spec: &ProblemSpec,
        colloc: &CollocationSet,
        labels: Option<&LabelSet>,
        normalize: bool,
    ) -> Result<Self> {
        spec.validate()?;
        let kind = spec.kind;
        let dim = spec.dim();
        if colloc.dim != dim {
            return Err(Error::Shape(format!(
                "collocation is {}D, problem is {dim}D",
                colloc.dim
            )));
        }
        if kind.requires_labels() && labels.is_none() {
            return Err(Error::Config(format!(
                "{} needs temperature and flux data",
                kind.name()
            )));
        }
        if kind == ProblemKind::Heat1dMixed && labels.is_some() {
            return Err(Error::Config(
                "heat1d_mixed takes no auxiliary labels".into(),
            ));
        }
        let pde = colloc.require(GroupKind::Pde)?.to_vec();
        let dbc = colloc.require(GroupKind::Dbc)?.to_vec();
        let source = pde
            .chunks(dim)
            .map(|x| manufactured_source(spec, x))
            .collect();
        let dbc_target = dbc
            .chunks(dim)
            .map(|x| exact_solution(spec, x))
            .collect::<Result<Vec<_>>>()?;
        let (nbc, normals) = if kind == ProblemKind::ElasticityHole {
            let nbc = colloc.require(GroupKind::Nbc)?.to_vec();
            let normals = nbc
                .chunks(2)
                .map(|x| {
                    let r = math::sqrt(x[0] * x[0] + x[1] * x[1]);
                    [-x[0] / r, -x[1] / r]
                })
                .collect();
            (nbc, normals)
        } else {
            (Vec::new(), Vec::new())
        };
        let (aux, label_cols, map) = match labels {
            None => (Vec::new(), None, None),
            Some(l) => {
                let aux = colloc.require(GroupKind::Aux)?;
                if l.dim() != dim || l.points() != aux {
                    return Err(Error::Config(
                        "labels do not sit on the aux collocation points".into(),
                    ));
                }
                let stats = l.stats();
                let mut columns = Vec::new();
                for f in kind.solution_fields() {
                    let values = l
                        .field(f)
                        .ok_or_else(|| Error::Config(format!("labels lack field `{f}`")))?
                        .to_vec();
                    let s = stats
                        .iter()
                        .find(|s| s.field == *f)
                        .expect("field has stats");
                    let inv = if normalize && !s.flagged {
                        1.0 / s.std
                    } else {
                        1.0
                    };
                    columns.push((values, inv));
                }
                let map = normalize
                    .then(|| output_map_from_labels(kind, l))
                    .filter(|m| !m.is_identity());
                (aux.to_vec(), Some(LabelColumns { columns }), map)
            }
        };
        let lame = if kind == ProblemKind::ElasticityHole {
            lame(spec.material.youngs_modulus, spec.material.poisson_ratio)?
        } else {
            (0.0, 0.0)
        };
        Ok(Assembler {
            spec: spec.clone(),
            names: objective_names(kind, labels.is_some() && !kind.requires_labels()),
            pde,
            source,
            dbc,
            dbc_target,
            nbc,
            normals,
            aux,
            labels: label_cols,
            map,
            lame,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    /// `(name, is_auxiliary)` per objective, in evaluation order.
    pub fn objectives(&self) -> &[(&'static str, bool)] {
        &self.names
    }

    pub fn output_map(&self) -> Option<&OutputMap> {
        self.map.as_ref()
    }

    /// Weight vector giving `aux_weight` to auxiliary objectives and 1 to the rest.
    pub fn weights(&self, aux_weight: f64) -> Vec<f64> {
        self.names
            .iter()
            .map(|&(_, aux)| if aux { aux_weight } else { 1.0 })
            .collect()
    }

    fn groups(&self) -> Vec<PointGroup<'_>> {
        let pde_order = match self.spec.kind {
            ProblemKind::Poisson1d | ProblemKind::Poisson2d => Order::Laplacian,
            ProblemKind::Heat1dMixed | ProblemKind::ElasticityHole => Order::Gradient,
            ProblemKind::InversePoisson2d => Order::Hessian,
        };
        let aux_order = if self.spec.kind == ProblemKind::InversePoisson2d {
            Order::Gradient
        } else {
            Order::Value
        };
        let mut g = vec![
            PointGroup {
                points: &self.pde,
                order: pde_order,
            },
            PointGroup {
                points: &self.dbc,
                order: Order::Value,
            },
        ];
        if !self.nbc.is_empty() {
            g.push(PointGroup {
                points: &self.nbc,
                order: Order::Value,
            });
        }
        if !self.aux.is_empty() {
            g.push(PointGroup {
                points: &self.aux,
                order: aux_order,
            });
        }
        g
    }

    /// Objective values, weights and the requested gradients.
    pub fn evaluate(
        &self,
        net: &NetworkSpec,
        params: &TrainableVector,
        weights: &[f64],
        mode: GradientMode,
    ) -> Result<Evaluation> {
        let n_obj = self.names.len();
        if weights.len() != n_obj {
            return Err(Error::Shape(format!(
                "{} weights for {n_obj} objectives",
                weights.len()
            )));
        }
        if net.d_in() != self.spec.dim() || net.d_out() != self.spec.kind.output_fields().len() {
            return Err(Error::Shape(format!(
                "network {}->{} does not fit {}",
                net.d_in(),
                net.d_out(),
                self.spec.kind.name()
            )));
        }
        let extras_expected = self.spec.kind.extra_names();
        if params.extra_names().len() != extras_expected.len()
            || params
                .extra_names()
                .iter()
                .zip(extras_expected)
                .any(|(a, b)| a != b)
        {
            return Err(Error::Shape(format!(
                "{} expects extra scalars {:?}",
                self.spec.kind.name(),
                extras_expected
            )));
        }
        let requests: Vec<Vec<(usize, f64)>> = match mode {
            GradientMode::None => Vec::new(),
            GradientMode::PerObjective => (0..n_obj)
                .map(|k| vec![(k, if weights[k] != 0.0 { 1.0 } else { 0.0 })])
                .collect(),
            GradientMode::Total => vec![(0..n_obj).map(|k| (k, weights[k])).collect()],
        };
        let groups = self.groups();
        let (values, mut grads) = loss_gradients(
            net,
            params,
            &groups,
            self.map.as_ref(),
            &requests,
            |tape, jv, ex| self.build(tape, jv, ex),
        )?;
        let mut objectives = Vec::with_capacity(n_obj);
        let per = mode == GradientMode::PerObjective;
        for (k, &(name, _)) in self.names.iter().enumerate() {
            let gradient = if per {
                core::mem::take(&mut grads[k])
            } else {
                Vec::new()
            };
            objectives.push(ObjectiveValue::new(name, values[k], weights[k], gradient));
        }
        Ok(Evaluation {
            objectives,
            total_gradient: (mode == GradientMode::Total).then(|| grads.pop().unwrap_or_default()),
        })
    }

    fn label(&self, field: usize, i: usize) -> (f64, f64) {
        let cols = &self.labels.as_ref().expect("labels present").columns[field];
        (cols.0[i], cols.1)
    }

    fn build<'t>(&self, tape: &'t Tape, jv: &[JetVars<'t>], ex: &[Var<'t>]) -> Vec<Var<'t>> {
        let dim = self.spec.dim();
        let n_pde = self.pde.len() / dim;
        let n_dbc = self.dbc.len() / dim;
        let mean = |v: Var<'t>, n: usize| v * (1.0 / n as f64);
        let (pde_g, dbc_g) = (&jv[0], &jv[1]);
        let aux_g = if self.aux.is_empty() { None } else { jv.last() };
        let n_aux = self.aux.len() / dim;
        let mut out = Vec::with_capacity(self.names.len());
        match self.spec.kind {
            ProblemKind::Poisson1d | ProblemKind::Poisson2d => {
                out.push(mean(
                    tape.sum((0..n_pde).map(|i| (pde_g.laplacian(i, 0) + self.source[i]).square())),
                    n_pde,
                ));
                out.push(mean(
                    tape.sum(
                        (0..n_dbc).map(|i| (dbc_g.value(i, 0) - self.dbc_target[i][0]).square()),
                    ),
                    n_dbc,
                ));
                if let Some(a) = aux_g {
                    out.push(mean(
                        tape.sum((0..n_aux).map(|i| {
                            let (l, inv) = self.label(0, i);
                            ((a.value(i, 0) - l) * inv).square()
                        })),
                        n_aux,
                    ));
                }
            }
            ProblemKind::Heat1dMixed => {
                out.push(mean(
                    tape.sum((0..n_pde).map(|i| (pde_g.grad(i, 1, 0) + self.source[i]).square())),
                    n_pde,
                ));
                out.push(mean(
                    tape.sum(
                        (0..n_dbc).map(|i| (dbc_g.value(i, 0) - self.dbc_target[i][0]).square()),
                    ),
                    n_dbc,
                ));
                out.push(mean(
                    tape.sum(
                        (0..n_pde).map(|i| (pde_g.grad(i, 0, 0) - pde_g.value(i, 1)).square()),
                    ),
                    n_pde,
                ));
            }
            ProblemKind::ElasticityHole => {
                let (lam, mu) = self.lame;
                let c11 = lam + 2.0 * mu;
                let mut pde_terms = Vec::with_capacity(n_pde);
                let mut strn_terms = Vec::with_capacity(n_pde);
                for i in 0..n_pde {
                    let g = |unit: usize, d: usize| pde_g.grad(i, unit, d);
                    let r1 = g(2, 0) * c11 + g(3, 0) * lam + g(4, 1) * (2.0 * mu);
                    let r2 = g(4, 0) * (2.0 * mu) + g(2, 1) * lam + g(3, 1) * c11;
                    pde_terms.push(r1.square() + r2.square());
                    let a = g(0, 0) - pde_g.value(i, 2);
                    let b = g(1, 1) - pde_g.value(i, 3);
                    let c = (g(0, 1) + g(1, 0)) * 0.5 - pde_g.value(i, 4);
                    strn_terms.push(a.square() + b.square() + c.square() * 2.0);
                }
                out.push(mean(tape.sum(pde_terms), n_pde));
                out.push(mean(tape.sum(strn_terms), n_pde));
                out.push(mean(
                    tape.sum((0..n_dbc).map(|i| {
                        let t = &self.dbc_target[i];
                        (dbc_g.value(i, 0) - t[0]).square() + (dbc_g.value(i, 1) - t[1]).square()
                    })),
                    n_dbc,
                ));
                let nbc_g = &jv[2];
                let n_nbc = self.nbc.len() / 2;
                out.push(mean(
                    tape.sum((0..n_nbc).map(|i| {
                        let [n1, n2] = self.normals[i];
                        let (e11, e22, e12) =
                            (nbc_g.value(i, 2), nbc_g.value(i, 3), nbc_g.value(i, 4));
                        let s11 = e11 * c11 + e22 * lam;
                        let s22 = e11 * lam + e22 * c11;
                        let s12 = e12 * (2.0 * mu);
                        (s11 * n1 + s12 * n2).square() + (s12 * n1 + s22 * n2).square()
                    })),
                    n_nbc,
                ));
                if let Some(a) = aux_g {
                    let diff = |i: usize, f: usize| {
                        let (l, inv) = self.label(f, i);
                        (a.value(i, f) - l) * inv
                    };
                    out.push(mean(
                        tape.sum((0..n_aux).map(|i| diff(i, 0).square() + diff(i, 1).square())),
                        n_aux,
                    ));
                    out.push(mean(
                        tape.sum((0..n_aux).map(|i| {
                            diff(i, 2).square() + diff(i, 3).square() + diff(i, 4).square() * 2.0
                        })),
                        n_aux,
                    ));
                }
            }
            ProblemKind::InversePoisson2d => {
                let (k11, k12, k22) = (ex[0], ex[1], ex[2]);
                out.push(mean(
                    tape.sum((0..n_pde).map(|i| {
                        let div = k11 * pde_g.hess(i, 0, 0, 0)
                            + k12 * pde_g.hess(i, 0, 0, 1) * 2.0
                            + k22 * pde_g.hess(i, 0, 1, 1);
                        (div + self.source[i]).square()
                    })),
                    n_pde,
                ));
                out.push(mean(
                    tape.sum(
                        (0..n_dbc).map(|i| (dbc_g.value(i, 0) - self.dbc_target[i][0]).square()),
                    ),
                    n_dbc,
                ));
                let a = aux_g.expect("inverse data present");
                out.push(mean(
                    tape.sum((0..n_aux).map(|i| {
                        let (l, inv) = self.label(0, i);
                        ((a.value(i, 0) - l) * inv).square()
                    })),
                    n_aux,
                ));
                for (f, (ka, kb)) in [(1, (k11, k12)), (2, (k12, k22))] {
                    out.push(mean(
                        tape.sum((0..n_aux).map(|i| {
                            let (l, inv) = self.label(f, i);
                            let q = ka * a.grad(i, 0, 0) + kb * a.grad(i, 0, 1);
                            ((q - l) * inv).square()
                        })),
                        n_aux,
                    ));
                }
                out.push((-(k11 * k22 - k12 * k12)).macaulay());
            }
        }
        out
    }
}

/// Network outputs at `points` (values only), after the optional output map.
pub fn predict(
    net: &NetworkSpec,
    params: &TrainableVector,
    map: Option<&OutputMap>,
    points: &[f64],
) -> Result<Vec<Vec<f64>>> {
    params.check(net)?;
    let pass = jets::forward(net, params.network(), points, Order::Value)?;
    let out = pass.output();
    let n = pass.points();
    Ok((0..n)
        .map(|i| {
            (0..net.d_out())
                .map(|k| {
                    let y = out.value(k, i);
                    match map {
                        Some(m) => m.shift[k] + m.scale[k] * y,
                        None => y,
                    }
                })
                .collect()
        })
        .collect())
}

/// Mean squared deviation of the primary field (temperature, or the
/// displacement vector) from the exact solution.
pub fn validation_mse(
    spec: &ProblemSpec,
    net: &NetworkSpec,
    params: &TrainableVector,
    map: Option<&OutputMap>,
    vald_points: &[f64],
) -> Result<f64> {
    let dim = spec.dim();
    if vald_points.is_empty() || !vald_points.len().is_multiple_of(dim) {
        return Err(Error::Shape("validation points are empty or ragged".into()));
    }
    let pred = predict(net, params, map, vald_points)?;
    let comps = if spec.kind == ProblemKind::ElasticityHole {
        2
    } else {
        1
    };
    let mut acc = 0.0;
    for (p, x) in pred.iter().zip(vald_points.chunks(dim)) {
        let exact = exact_solution(spec, x)?;
        for k in 0..comps {
            let d = p[k] - exact[k];
            acc += d * d;
        }
    }
    Ok(acc / pred.len() as f64)
}

/// Displacement MSE and von Mises MSE of the elasticity network on `points`.
pub fn elastic_field_errors(
    spec: &ProblemSpec,
    net: &NetworkSpec,
    params: &TrainableVector,
    map: Option<&OutputMap>,
    points: &[f64],
) -> Result<(f64, f64)> {
    if spec.kind != ProblemKind::ElasticityHole {
        return Err(Error::Config(
            "field errors apply to the elasticity problem".into(),
        ));
    }
    let m = spec.material;
    let pred = predict(net, params, map, points)?;
    let (mut du, mut dv) = (0.0, 0.0);
    for (p, x) in pred.iter().zip(points.chunks(2)) {
        let e = exact_solution(spec, x)?;
        du += (p[0] - e[0]) * (p[0] - e[0]) + (p[1] - e[1]) * (p[1] - e[1]);
        let vm_p = von_mises(
            plane_strain_stress([p[2], p[3], p[4]], m.youngs_modulus, m.poisson_ratio)?,
            m.poisson_ratio,
        );
        let vm_e = von_mises(
            plane_strain_stress([e[2], e[3], e[4]], m.youngs_modulus, m.poisson_ratio)?,
            m.poisson_ratio,
        );
        dv += (vm_p - vm_e) * (vm_p - vm_e);
    }
    let n = pred.len().max(1) as f64;
    Ok((du / n, dv / n))
}

/// One-shot assembly of all objectives with per-objective gradients.
pub fn assemble_objectives(
    spec: &ProblemSpec,
    net: &NetworkSpec,
    params: &TrainableVector,
    colloc: &CollocationSet,
    labels: Option<&LabelSet>,
    aux_weight: f64,
) -> Result<Vec<ObjectiveValue>> {
    let asm = Assembler::new(spec, colloc, labels, true)?;
    let w = asm.weights(aux_weight);
    Ok(asm
        .evaluate(net, params, &w, GradientMode::PerObjective)?
        .objectives)
}

/// Extra scalars for `kind`, initialised from `values` in name order.
pub fn extras_for(kind: ProblemKind, values: &[f64]) -> Result<Vec<(String, f64)>> {
    let names = kind.extra_names();
    if values.len() != names.len() {
        return Err(Error::Shape(format!(
            "{} needs {} extra scalars",
            kind.name(),
            names.len()
        )));
    }
    Ok(names
        .iter()
        .map(|n| n.to_string())
        .zip(values.iter().copied())
        .collect())
}
