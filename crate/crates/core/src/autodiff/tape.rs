//! Scalar reverse-mode tape used to build loss heads on top of network jets.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::math;

const NONE: usize = usize::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [usize; 2],
    partials: [f64; 2],
}

/// A Wengert list of scalar operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.index, self.value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, parents: [usize; 2], partials: [f64; 2]) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents, partials });
        nodes.len() - 1
    }

    /// New independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let index = self.push([NONE, NONE], [0.0, 0.0]);
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// A constant is a leaf whose adjoint nobody reads.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.var(value)
    }

    /// Sum of many variables; zero for an empty iterator.
    pub fn sum<'t, I: IntoIterator<Item = Var<'t>>>(&'t self, items: I) -> Var<'t> {
        let mut iter = items.into_iter();
        match iter.next() {
            None => self.constant(0.0),
            Some(first) => iter.fold(first, |acc, v| acc + v),
        }
    }

    /// Adjoints of every node with respect to `root`.
    pub fn gradient(&self, root: Var<'_>) -> Vec<f64> {
        self.gradient_seeded(&[(root, 1.0)])
    }

    /// Adjoints of `sum w_k * root_k`.
    pub fn gradient_seeded(&self, seeds: &[(Var<'_>, f64)]) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        let mut top = None;
        for &(root, w) in seeds {
            assert!(core::ptr::eq(root.tape, self), "variable from another tape");
            adj[root.index] += w;
            top = top.max(Some(root.index));
        }
        let Some(top) = top else {
            return adj;
        };
        for i in (0..=top).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NONE {
                    adj[p] += a * node.partials[k];
                }
            }
        }
        adj
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn index(&self) -> usize {
        self.index
    }

    fn unary(self, value: f64, partial: f64) -> Var<'t> {
        let index = self.tape.push([self.index, NONE], [partial, 0.0]);
        Var {
            tape: self.tape,
            index,
            value,
        }
    }

    fn binary(self, other: Var<'t>, value: f64, da: f64, db: f64) -> Var<'t> {
        debug_assert!(core::ptr::eq(self.tape, other.tape));
        let index = self.tape.push([self.index, other.index], [da, db]);
        Var {
            tape: self.tape,
            index,
            value,
        }
    }

    pub fn square(self) -> Var<'t> {
        self.unary(self.value * self.value, 2.0 * self.value)
    }

    pub fn powi(self, n: i32) -> Var<'t> {
        let v = math::powi(self.value, n);
        let d = if n == 0 {
            0.0
        } else {
            n as f64 * math::powi(self.value, n - 1)
        };
        self.unary(v, d)
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        let v = math::powf(self.value, p);
        self.unary(v, p * math::powf(self.value, p - 1.0))
    }

    pub fn sqrt(self) -> Var<'t> {
        let v = math::sqrt(self.value);
        self.unary(v, 0.5 / v)
    }

    pub fn exp(self) -> Var<'t> {
        let v = math::exp(self.value);
        self.unary(v, v)
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(math::sin(self.value), math::cos(self.value))
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(math::cos(self.value), -math::sin(self.value))
    }

    pub fn tanh(self) -> Var<'t> {
        let t = math::tanh(self.value);
        self.unary(t, 1.0 - t * t)
    }

    pub fn silu(self) -> Var<'t> {
        let s = math::sigmoid(self.value);
        self.unary(self.value * s, s + self.value * s * (1.0 - s))
    }

    /// Macaulay bracket `max(x, 0)`; the derivative at exactly zero is 0.
    pub fn macaulay(self) -> Var<'t> {
        if self.value > 0.0 {
            self.unary(self.value, 1.0)
        } else {
            self.unary(0.0, 0.0)
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let inv = 1.0 / rhs.value;
        self.binary(rhs, self.value * inv, inv, -self.value * inv * inv)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.unary(self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.unary(self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.unary(self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.unary(self.value / rhs, 1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.unary(self - rhs.value, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let inv = 1.0 / rhs.value;
        rhs.unary(self * inv, -self * inv * inv)
    }
}
