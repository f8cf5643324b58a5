//! Batched truncated-Taylor propagation through an MLP and its adjoint.
//!
//! A [`Jets`] block holds, for every unit and every point, a fixed set of
//! carriers: the value, the first derivatives with respect to each spatial
//! input and, depending on [`Order`], either the Laplacian or the upper
//! triangle of the Hessian. Affine maps act on all carriers with one matrix
//! product; the activation mixes carriers through the chain rule. The reverse
//! sweep differentiates that propagation with respect to the weights, which
//! yields the mixed parameter/input derivatives a PDE loss needs.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::network::{InputTransform, NetworkSpec};

/// Which input derivatives are carried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Order {
    Value,
    Gradient,
    /// Value, gradient and the trace of the Hessian.
    Laplacian,
    /// Value, gradient and the full (symmetric) Hessian.
    Hessian,
}

impl Order {
    /// Number of carriers for `dim` spatial inputs.
    pub fn carriers(self, dim: usize) -> usize {
        match self {
            Order::Value => 1,
            Order::Gradient => 1 + dim,
            Order::Laplacian => 2 + dim,
            Order::Hessian => 1 + dim + dim * (dim + 1) / 2,
        }
    }

    /// `0 -> Value`, `1 -> Gradient`, `2 -> Hessian`.
    pub fn from_level(level: u8) -> Option<Order> {
        match level {
            0 => Some(Order::Value),
            1 => Some(Order::Gradient),
            2 => Some(Order::Hessian),
            _ => None,
        }
    }

    pub fn has_gradient(self) -> bool {
        self >= Order::Gradient
    }

    /// The smallest order that provides everything `self` and `other` do.
    pub fn join(self, other: Order) -> Order {
        self.max(other)
    }
}

/// Carrier slot of the Hessian entry `(i, j)`, `i <= j`.
#[inline]
pub fn hessian_slot(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    1 + dim + i * (2 * dim - i + 1) / 2 + (j - i)
}

/// Carrier values for `units x carriers x points`, points fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Jets {
    units: usize,
    dim: usize,
    points: usize,
    order: Order,
    data: Vec<f64>,
}

impl Jets {
    pub fn zeros(units: usize, dim: usize, points: usize, order: Order) -> Self {
        Jets {
            units,
            dim,
            points,
            order,
            data: vec![0.0; units * order.carriers(dim) * points],
        }
    }

    pub fn zeros_like(other: &Jets) -> Self {
        Self::zeros(other.units, other.dim, other.points, other.order)
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn carriers(&self) -> usize {
        self.order.carriers(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Flat index of `(unit, carrier, point)`.
    #[inline]
    pub fn index(&self, unit: usize, carrier: usize, point: usize) -> usize {
        (unit * self.carriers() + carrier) * self.points + point
    }

    #[inline]
    pub fn get(&self, unit: usize, carrier: usize, point: usize) -> f64 {
        self.data[self.index(unit, carrier, point)]
    }

    #[inline]
    pub fn value(&self, unit: usize, point: usize) -> f64 {
        self.get(unit, 0, point)
    }

    #[inline]
    pub fn grad(&self, unit: usize, i: usize, point: usize) -> f64 {
        self.get(unit, 1 + i, point)
    }

    /// Second derivative `(i, j)`; requires [`Order::Hessian`].
    #[inline]
    pub fn hess(&self, unit: usize, i: usize, j: usize, point: usize) -> f64 {
        debug_assert_eq!(self.order, Order::Hessian);
        self.get(unit, hessian_slot(self.dim, i, j), point)
    }

    /// Laplacian; available for [`Order::Laplacian`] and [`Order::Hessian`].
    pub fn laplacian(&self, unit: usize, point: usize) -> f64 {
        match self.order {
            Order::Laplacian => self.get(unit, 1 + self.dim, point),
            Order::Hessian => (0..self.dim).map(|i| self.hess(unit, i, i, point)).sum(),
            _ => panic!("laplacian not carried at order {:?}", self.order),
        }
    }

    /// Row of all carriers of `unit` (carrier-major, points fastest).
    fn unit_block(&self, unit: usize) -> &[f64] {
        let n = self.carriers() * self.points;
        &self.data[unit * n..(unit + 1) * n]
    }
}

/// Seeds the input carriers, applying the network's input transform.
pub fn input_jets(transform: InputTransform, points: &[f64], dim: usize, order: Order) -> Jets {
    let n = points.len() / dim;
    let mut jets = Jets::zeros(dim, dim, n, order);
    match transform {
        InputTransform::Identity => {
            for p in 0..n {
                for k in 0..dim {
                    let v = points[p * dim + k];
                    let idx = jets.index(k, 0, p);
                    jets.data[idx] = v;
                    if order.has_gradient() {
                        let idx = jets.index(k, 1 + k, p);
                        jets.data[idx] = 1.0;
                    }
                }
            }
        }
        InputTransform::CartesianToPolar => {
            for p in 0..n {
                let (x, y) = (points[2 * p], points[2 * p + 1]);
                let r2 = x * x + y * y;
                let r = math::sqrt(r2);
                let r3 = r2 * r;
                let r4 = r2 * r2;
                // unit 0: r, unit 1: theta
                let value = [r, math::atan2(y, x)];
                let grad = [[x / r, y / r], [-y / r2, x / r2]];
                // (xx, xy, yy)
                let hess = [
                    [y * y / r3, -x * y / r3, x * x / r3],
                    [2.0 * x * y / r4, (y * y - x * x) / r4, -2.0 * x * y / r4],
                ];
                for u in 0..2 {
                    let i = jets.index(u, 0, p);
                    jets.data[i] = value[u];
                    if !order.has_gradient() {
                        continue;
                    }
                    for k in 0..2 {
                        let i = jets.index(u, 1 + k, p);
                        jets.data[i] = grad[u][k];
                    }
                    match order {
                        Order::Laplacian => {
                            let i = jets.index(u, 3, p);
                            jets.data[i] = hess[u][0] + hess[u][2];
                        }
                        Order::Hessian => {
                            for (slot, h) in [(0, 0), (0, 1), (1, 1)].iter().zip(hess[u]) {
                                let i = jets.index(u, hessian_slot(2, slot.0, slot.1), p);
                                jets.data[i] = h;
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    jets
}

/// Everything the reverse sweep needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Input carriers of each affine map.
    inputs: Vec<Jets>,
    /// Pre-activation carriers of each hidden map.
    pre: Vec<Jets>,
    /// `sigma'`, `sigma''`, `sigma'''` per hidden map, `units x points`.
    slopes: Vec<[Vec<f64>; 3]>,
    output: Jets,
}

impl ForwardPass {
    pub fn output(&self) -> &Jets {
        &self.output
    }

    pub fn points(&self) -> usize {
        self.output.points
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: all strides describe matrices that lie inside the given slices;
    // callers pass row-major buffers sized m*k, k*n and m*n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            1,
        );
    }
}

/// `A * B` into a fresh row-major `m x n` buffer.
#[allow(clippy::too_many_arguments)]
fn gemm_new(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
) -> Vec<f64> {
    debug_assert!(a.len() >= m * k && b.len() >= k * n);
    let mut c = Vec::with_capacity(m * n);
    if m == 0 || n == 0 {
        return c;
    }
    // SAFETY: with beta = 0, dgemm writes every entry of C without reading it
    // (zero-filling when k = 0), so all m*n entries are initialised before
    // set_len. A and B lie inside their slices as in `gemm`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
        c.set_len(m * n);
    }
    c
}

fn check_shapes(spec: &NetworkSpec, params: &[f64], points: &[f64]) -> Result<()> {
    if params.len() != spec.n_params() {
        return Err(Error::Shape(alloc::format!(
            "network expects {} parameters, got {}",
            spec.n_params(),
            params.len()
        )));
    }
    if !points.len().is_multiple_of(spec.d_in()) {
        return Err(Error::Shape(alloc::format!(
            "point buffer of length {} is not a multiple of input dimension {}",
            points.len(),
            spec.d_in()
        )));
    }
    Ok(())
}

/// Propagates carriers for all `points` (row-major, `d_in` per point).
pub fn forward(
    spec: &NetworkSpec,
    params: &[f64],
    points: &[f64],
    order: Order,
) -> Result<ForwardPass> {
    check_shapes(spec, params, points)?;
    let dim = spec.d_in();
    let mut x = input_jets(spec.input_transform, points, dim, order);
    let n = x.points;
    let carriers = order.carriers(dim);
    let cols = carriers * n;
    let mut inputs = Vec::with_capacity(spec.n_maps());
    let mut pre = Vec::with_capacity(spec.n_maps() - 1);
    let mut slopes = Vec::with_capacity(spec.n_maps() - 1);
    let mut offset = 0;
    for l in 0..spec.n_maps() {
        let (h_in, h_out) = (spec.layer_widths[l], spec.layer_widths[l + 1]);
        let w = &params[offset..offset + h_out * h_in];
        let b = &params[offset + h_out * h_in..offset + h_out * h_in + h_out];
        offset += h_out * h_in + h_out;

        let mut z = Jets {
            units: h_out,
            dim,
            points: n,
            order,
            data: gemm_new(
                h_out,
                h_in,
                cols,
                w,
                h_in as isize,
                1,
                &x.data,
                cols as isize,
                1,
            ),
        };
        for (u, &bu) in b.iter().enumerate() {
            let start = u * cols;
            for v in &mut z.data[start..start + n] {
                *v += bu;
            }
        }
        if l + 1 == spec.n_maps() {
            inputs.push(x);
            return Ok(ForwardPass {
                inputs,
                pre,
                slopes,
                output: z,
            });
        }
        let (a, s) = activate(spec, &z);
        inputs.push(core::mem::replace(&mut x, a));
        pre.push(z);
        slopes.push(s);
    }
    unreachable!("network has at least one affine map")
}

fn activate(spec: &NetworkSpec, z: &Jets) -> (Jets, [Vec<f64>; 3]) {
    let (units, n, dim, order) = (z.units, z.points, z.dim, z.order);
    let act = spec.activation;
    let mut a = Vec::with_capacity(z.data.len());
    let mut s1 = Vec::with_capacity(units * n);
    let mut s2 = Vec::with_capacity(units * n);
    let mut s3 = Vec::with_capacity(units * n);
    let mut sq = vec![0.0; n];
    for u in 0..units {
        let zb = z.unit_block(u);
        for &zp in &zb[..n] {
            let [v, t1, t2, t3] = act.derivatives(zp);
            a.push(v);
            s1.push(t1);
            s2.push(t2);
            s3.push(t3);
        }
        if !order.has_gradient() {
            continue;
        }
        let (d1, d2) = (&s1[u * n..], &s2[u * n..]);
        for i in 0..dim {
            let zg = &zb[(1 + i) * n..(2 + i) * n];
            a.extend(d1.iter().zip(zg).map(|(d, g)| d * g));
        }
        match order {
            Order::Laplacian => {
                sq.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..dim {
                    let zg = &zb[(1 + i) * n..(2 + i) * n];
                    for p in 0..n {
                        sq[p] += zg[p] * zg[p];
                    }
                }
                let zl = &zb[(1 + dim) * n..(2 + dim) * n];
                a.extend((0..n).map(|p| d2[p] * sq[p] + d1[p] * zl[p]));
            }
            Order::Hessian => {
                // slots are laid out row by row over the upper triangle
                for i in 0..dim {
                    for j in i..dim {
                        let c = hessian_slot(dim, i, j);
                        a.extend((0..n).map(|p| {
                            d2[p] * zb[(1 + i) * n + p] * zb[(1 + j) * n + p]
                                + d1[p] * zb[c * n + p]
                        }));
                    }
                }
            }
            _ => {}
        }
    }
    debug_assert_eq!(a.len(), z.data.len());
    let a = Jets {
        units,
        dim,
        points: n,
        order,
        data: a,
    };
    (a, [s1, s2, s3])
}

/// Adjoint of [`activate`]: maps output adjoints to pre-activation adjoints,
/// overwriting `abar`.
fn activate_adjoint(z: &Jets, slopes: &[Vec<f64>; 3], mut abar: Jets) -> Jets {
    let (units, n, dim, order) = (z.units, z.points, z.dim, z.order);
    let carriers = z.carriers();
    let [s1, s2, s3] = slopes;
    let mut sq = vec![0.0; n];
    for u in 0..units {
        let zb = z.unit_block(u);
        let ab = &mut abar.data[u * carriers * n..(u + 1) * carriers * n];
        let (d1, d2, d3) = (
            &s1[u * n..(u + 1) * n],
            &s2[u * n..(u + 1) * n],
            &s3[u * n..(u + 1) * n],
        );
        let (value, rest) = ab.split_at_mut(n);
        for p in 0..n {
            value[p] *= d1[p];
        }
        if !order.has_gradient() {
            continue;
        }
        let (grads, higher) = rest.split_at_mut(dim * n);
        for i in 0..dim {
            let zg = &zb[(1 + i) * n..(2 + i) * n];
            let ag = &grads[i * n..(i + 1) * n];
            for p in 0..n {
                value[p] += d2[p] * zg[p] * ag[p];
            }
        }
        for og in grads.chunks_exact_mut(n) {
            for p in 0..n {
                og[p] *= d1[p];
            }
        }
        match order {
            Order::Laplacian => {
                let al = &mut higher[..n];
                let zl = &zb[(1 + dim) * n..(2 + dim) * n];
                sq.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..dim {
                    let zg = &zb[(1 + i) * n..(2 + i) * n];
                    let og = &mut grads[i * n..(i + 1) * n];
                    for p in 0..n {
                        sq[p] += zg[p] * zg[p];
                        og[p] += 2.0 * d2[p] * zg[p] * al[p];
                    }
                }
                for p in 0..n {
                    value[p] += (d3[p] * sq[p] + d2[p] * zl[p]) * al[p];
                    al[p] *= d1[p];
                }
            }
            Order::Hessian => {
                for i in 0..dim {
                    for j in i..dim {
                        let c = hessian_slot(dim, i, j);
                        let h = &mut higher[(c - 1 - dim) * n..(c - dim) * n];
                        for p in 0..n {
                            let g = h[p];
                            let (zi, zj) = (zb[(1 + i) * n + p], zb[(1 + j) * n + p]);
                            value[p] += (d3[p] * zi * zj + d2[p] * zb[c * n + p]) * g;
                            grads[i * n + p] += d2[p] * zj * g;
                            grads[j * n + p] += d2[p] * zi * g;
                            h[p] = d1[p] * g;
                        }
                    }
                }
            }
            _ => {}
        }
    }
    abar
}

/// Reverse sweep: gradient of `sum(output_adjoint * output)` with respect
/// to the flat parameter vector, accumulated into `grad`.
pub fn backward(
    spec: &NetworkSpec,
    params: &[f64],
    pass: &ForwardPass,
    output_adjoint: &Jets,
    grad: &mut [f64],
) -> Result<()> {
    if output_adjoint.data.len() != pass.output.data.len()
        || output_adjoint.order != pass.output.order
    {
        return Err(Error::Shape(
            "output adjoint does not match forward pass".into(),
        ));
    }
    if grad.len() < spec.n_params() {
        return Err(Error::Shape("gradient buffer too short".into()));
    }
    let n_maps = spec.n_maps();
    let mut offsets = Vec::with_capacity(n_maps);
    let mut off = 0;
    for l in 0..n_maps {
        offsets.push(off);
        off += spec.layer_widths[l + 1] * spec.layer_widths[l] + spec.layer_widths[l + 1];
    }
    let n = pass.output.points;
    let cols = pass.output.carriers() * n;

    let mut zbar_owned: Option<Jets> = None;
    for l in (0..n_maps).rev() {
        let zbar = zbar_owned.as_ref().unwrap_or(output_adjoint);
        let (h_in, h_out) = (spec.layer_widths[l], spec.layer_widths[l + 1]);
        let x = &pass.inputs[l];
        let off = offsets[l];
        {
            let (gw, gb) = grad[off..off + h_out * h_in + h_out].split_at_mut(h_out * h_in);
            // dW += Zbar * X^T
            gemm(
                h_out,
                cols,
                h_in,
                1.0,
                &zbar.data,
                cols as isize,
                1,
                &x.data,
                1,
                cols as isize,
                1.0,
                gw,
                h_in as isize,
            );
            for (u, g) in gb.iter_mut().enumerate() {
                *g += zbar.data[u * cols..u * cols + n].iter().sum::<f64>();
            }
        }
        if l == 0 {
            break;
        }
        // Abar = W^T * Zbar
        let w = &params[off..off + h_out * h_in];
        let abar = Jets {
            units: h_in,
            dim: x.dim,
            points: x.points,
            order: x.order,
            data: gemm_new(
                h_in,
                h_out,
                cols,
                w,
                1,
                h_in as isize,
                &zbar.data,
                cols as isize,
                1,
            ),
        };
        zbar_owned = Some(activate_adjoint(
            &pass.pre[l - 1],
            &pass.slopes[l - 1],
            abar,
        ));
    }
    Ok(())
}
