//! Nested differentiation of MLP outputs.
//!
//! Input derivatives travel forward as Taylor carriers ([`jets`]); losses are
//! written on a scalar [`tape`] whose leaves are entries of those carriers;
//! the leaf adjoints are then pulled back through the network by
//! [`jets::backward`]. The result is the exact parameter gradient of losses
//! that involve first and second input derivatives.

pub mod jets;
pub mod tape;

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

pub use jets::{ForwardPass, Jets, Order};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::trainable::TrainableVector;

#[derive(Debug, Clone, Copy)]
pub struct EvalRequest<'a> {
    pub spec: &'a NetworkSpec,
    pub params: &'a TrainableVector,
    pub point: &'a [f64],
    /// 0, 1 or 2.
    pub derivative_order: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub values: Vec<f64>,
    /// `d_out x d_in`, present for order >= 1.
    pub jacobian: Option<Vec<Vec<f64>>>,
    /// `d_out x d_in x d_in`, present for order 2.
    pub second_derivs: Option<Vec<Vec<Vec<f64>>>>,
}

/// Network outputs and their exact input derivatives at one point.
pub fn evaluate_with_derivatives(req: EvalRequest<'_>) -> Result<EvalResult> {
    let spec = req.spec;
    req.params.check(spec)?;
    if req.point.len() != spec.d_in() {
        return Err(Error::Shape(alloc::format!(
            "point has {} coordinates, network input is {}",
            req.point.len(),
            spec.d_in()
        )));
    }
    let order = Order::from_level(req.derivative_order)
        .ok_or_else(|| Error::Parameter("derivative order must be 0, 1 or 2".into()))?;
    let pass = jets::forward(spec, req.params.network(), req.point, order)?;
    let out = pass.output();
    let (d_out, d_in) = (spec.d_out(), spec.d_in());
    let values = (0..d_out).map(|k| out.value(k, 0)).collect();
    let jacobian = order.has_gradient().then(|| {
        (0..d_out)
            .map(|k| (0..d_in).map(|i| out.grad(k, i, 0)).collect())
            .collect()
    });
    let second_derivs = (order == Order::Hessian).then(|| {
        (0..d_out)
            .map(|k| {
                (0..d_in)
                    .map(|i| (0..d_in).map(|j| out.hess(k, i, j, 0)).collect())
                    .collect()
            })
            .collect()
    });
    Ok(EvalResult {
        values,
        jacobian,
        second_derivs,
    })
}

/// Affine post-map of network outputs: `shift[k] + scale[k] * y[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputMap {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl OutputMap {
    pub fn identity(d_out: usize) -> Self {
        OutputMap {
            shift: vec![0.0; d_out],
            scale: vec![1.0; d_out],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.shift.iter().all(|&s| s == 0.0) && self.scale.iter().all(|&s| s == 1.0)
    }
}

/// Binds the output carriers of a forward pass to a tape. Each accessor
/// records a leaf; [`JetVars::adjoint`] gathers the leaf adjoints back into
/// carrier layout for the network reverse sweep.
pub struct JetVars<'t> {
    tape: &'t Tape,
    jets: &'t Jets,
    map: Option<&'t OutputMap>,
    leaves: RefCell<Vec<(usize, usize, f64)>>,
}

impl<'t> JetVars<'t> {
    pub fn new(tape: &'t Tape, jets: &'t Jets, map: Option<&'t OutputMap>) -> Self {
        JetVars {
            tape,
            jets,
            map,
            leaves: RefCell::new(Vec::new()),
        }
    }

    pub fn points(&self) -> usize {
        self.jets.points()
    }

    pub fn jets(&self) -> &Jets {
        self.jets
    }

    fn leaf(&self, unit: usize, carrier: usize, point: usize) -> Var<'t> {
        let idx = self.jets.index(unit, carrier, point);
        let raw = self.jets.as_slice()[idx];
        let (value, scale) = match self.map {
            Some(m) if carrier == 0 => (m.shift[unit] + m.scale[unit] * raw, m.scale[unit]),
            Some(m) => (m.scale[unit] * raw, m.scale[unit]),
            None => (raw, 1.0),
        };
        let v = self.tape.var(value);
        self.leaves.borrow_mut().push((v.index(), idx, scale));
        v
    }

    /// Output `unit` at `point`.
    pub fn value(&self, point: usize, unit: usize) -> Var<'t> {
        self.leaf(unit, 0, point)
    }

    /// `d output_unit / d x_i`.
    pub fn grad(&self, point: usize, unit: usize, i: usize) -> Var<'t> {
        assert!(self.jets.order().has_gradient(), "gradient not carried");
        self.leaf(unit, 1 + i, point)
    }

    /// `d^2 output_unit / d x_i d x_j`.
    pub fn hess(&self, point: usize, unit: usize, i: usize, j: usize) -> Var<'t> {
        assert_eq!(self.jets.order(), Order::Hessian, "Hessian not carried");
        self.leaf(unit, jets::hessian_slot(self.jets.dim(), i, j), point)
    }

    pub fn laplacian(&self, point: usize, unit: usize) -> Var<'t> {
        match self.jets.order() {
            Order::Laplacian => self.leaf(unit, 1 + self.jets.dim(), point),
            Order::Hessian => {
                let d = self.jets.dim();
                self.tape.sum((0..d).map(|i| self.hess(point, unit, i, i)))
            }
            o => panic!("Laplacian not carried at order {o:?}"),
        }
    }

    /// True when no leaf was read.
    pub fn is_unused(&self) -> bool {
        self.leaves.borrow().is_empty()
    }

    /// Like [`JetVars::adjoint`] but `None` when every leaf adjoint is zero.
    pub fn adjoint_if_nonzero(&self, tape_adjoints: &[f64]) -> Option<Jets> {
        let leaves = self.leaves.borrow();
        if leaves
            .iter()
            .all(|&(leaf, _, _)| tape_adjoints[leaf] == 0.0)
        {
            return None;
        }
        drop(leaves);
        Some(self.adjoint(tape_adjoints))
    }

    /// Carrier-shaped adjoint from tape adjoints.
    pub fn adjoint(&self, tape_adjoints: &[f64]) -> Jets {
        let mut out = Jets::zeros_like(self.jets);
        let data = out.as_mut_slice();
        for &(leaf, idx, scale) in self.leaves.borrow().iter() {
            data[idx] += scale * tape_adjoints[leaf];
        }
        out
    }
}

/// A set of points evaluated together at one derivative order.
#[derive(Debug, Clone, Copy)]
pub struct PointGroup<'a> {
    /// Row-major, `d_in` coordinates per point.
    pub points: &'a [f64],
    pub order: Order,
}

/// Value and exact gradient over the whole [`TrainableVector`] of a scalar
/// loss built by `loss` from network carriers on each group and from the
/// extra scalars.
pub fn loss_gradient<F>(
    spec: &NetworkSpec,
    params: &TrainableVector,
    groups: &[PointGroup<'_>],
    map: Option<&OutputMap>,
    loss: F,
) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> FnOnce(&'t Tape, &[JetVars<'t>], &[Var<'t>]) -> Var<'t>,
{
    let (values, mut grads) =
        loss_gradients(spec, params, groups, map, &[vec![(0, 1.0)]], |t, j, e| {
            vec![loss(t, j, e)]
        })?;
    Ok((values[0], grads.pop().unwrap_or_default()))
}

/// Several losses sharing one forward pass per group.
///
/// `loss` returns the loss roots; each entry of `requests` is a linear
/// combination `[(root, weight), ...]` whose parameter gradient is wanted.
/// Returns the root values and one gradient per request.
pub fn loss_gradients<F>(
    spec: &NetworkSpec,
    params: &TrainableVector,
    groups: &[PointGroup<'_>],
    map: Option<&OutputMap>,
    requests: &[Vec<(usize, f64)>],
    loss: F,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)>
where
    F: for<'t> FnOnce(&'t Tape, &[JetVars<'t>], &[Var<'t>]) -> Vec<Var<'t>>,
{
    params.check(spec)?;
    if let Some(m) = map {
        if m.shift.len() != spec.d_out() || m.scale.len() != spec.d_out() {
            return Err(Error::Shape(
                "output map does not match network outputs".into(),
            ));
        }
    }
    let passes = groups
        .iter()
        .map(|g| jets::forward(spec, params.network(), g.points, g.order))
        .collect::<Result<Vec<_>>>()?;
    let tape = Tape::new();
    let vars: Vec<JetVars<'_>> = passes
        .iter()
        .map(|p| JetVars::new(&tape, p.output(), map))
        .collect();
    let extras: Vec<Var<'_>> = params.extras().iter().map(|&e| tape.var(e)).collect();
    let roots = loss(&tape, &vars, &extras);
    let values = roots.iter().map(|r| r.value()).collect();
    let n_net = params.n_network();
    let mut grads = Vec::with_capacity(requests.len());
    for req in requests {
        let seeds = req
            .iter()
            .filter(|&&(_, w)| w != 0.0)
            .map(|&(k, w)| {
                roots
                    .get(k)
                    .map(|&r| (r, w))
                    .ok_or_else(|| Error::Shape(alloc::format!("no loss root {k}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut grad = vec![0.0; params.len()];
        if !seeds.is_empty() {
            let adj = tape.gradient_seeded(&seeds);
            for (pass, v) in passes.iter().zip(&vars) {
                if let Some(a) = v.adjoint_if_nonzero(&adj) {
                    jets::backward(spec, params.network(), pass, &a, &mut grad)?;
                }
            }
            for (i, e) in extras.iter().enumerate() {
                grad[n_net + i] = adj[e.index()];
            }
        }
        grads.push(grad);
    }
    Ok((values, grads))
}
