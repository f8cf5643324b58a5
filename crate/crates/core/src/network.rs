//! MLP architecture, parameter initialization and Net2Net widening.
//!
//! Parameters are stored flat, layer after layer, each layer as its weight
//! matrix in row-major order (`h_{l+1}` rows by `h_l` columns) followed by its
//! bias vector. That is also the order of the optimization unknown and of the
//! checkpoint parameter array.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, stream};

/// Element-wise nonlinearity applied after every hidden affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Silu,
    /// Linear units; useful for hand-built networks with known outputs.
    Identity,
}

impl Activation {
    /// Value and first three derivatives at `z`.
    #[inline]
    pub fn derivatives(self, z: f64) -> [f64; 4] {
        match self {
            Activation::Tanh => {
                let t = math::tanh(z);
                let d1 = 1.0 - t * t;
                [t, d1, -2.0 * t * d1, d1 * (6.0 * t * t - 2.0)]
            }
            Activation::Silu => {
                let p = math::sigmoid(z);
                let q = p * (1.0 - p);
                let r = 1.0 - 2.0 * p;
                [
                    z * p,
                    p + z * q,
                    q * (2.0 + z * r),
                    q * (r * (3.0 + z * r) - 2.0 * z * q),
                ]
            }
            Activation::Identity => [z, 1.0, 0.0, 0.0],
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => math::tanh(z),
            Activation::Silu => z * math::sigmoid(z),
            Activation::Identity => z,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Silu => "silu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Activation::Tanh),
            "silu" => Some(Activation::Silu),
            "identity" | "linear" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Fixed map applied to raw coordinates before the first affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputTransform {
    Identity,
    /// `(x1, x2) -> (r, theta)` with `theta` measured from the `x1` axis.
    CartesianToPolar,
}

impl InputTransform {
    pub fn name(self) -> &'static str {
        match self {
            InputTransform::Identity => "identity",
            InputTransform::CartesianToPolar => "cartesian_to_polar",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(InputTransform::Identity),
            "cartesian_to_polar" | "polar" => Some(InputTransform::CartesianToPolar),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkSpec {
    /// `[h_0, h_1, ..., h_{L+1}]`: input width, hidden widths, output width.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub input_transform: InputTransform,
}

impl NetworkSpec {
    pub fn new(
        layer_widths: Vec<usize>,
        activation: Activation,
        input_transform: InputTransform,
    ) -> Result<Self> {
        let spec = NetworkSpec {
            layer_widths,
            activation,
            input_transform,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `d_in -> hidden x depth -> d_out` with a uniform hidden width.
    pub fn mlp(
        d_in: usize,
        hidden: usize,
        depth: usize,
        d_out: usize,
        activation: Activation,
    ) -> Result<Self> {
        let mut widths = vec![d_in];
        widths.extend(core::iter::repeat_n(hidden, depth));
        widths.push(d_out);
        Self::new(widths, activation, InputTransform::Identity)
    }

    pub fn with_input_transform(mut self, transform: InputTransform) -> Result<Self> {
        self.input_transform = transform;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Parameter(format!(
                "network needs at least input and output widths, got {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Parameter(format!(
                "layer widths must be positive, got {:?}",
                self.layer_widths
            )));
        }
        if self.input_transform == InputTransform::CartesianToPolar && self.layer_widths[0] != 2 {
            return Err(Error::Parameter(
                "cartesian_to_polar input transform needs a 2D input".into(),
            ));
        }
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn d_out(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Number of affine maps (`L + 1`).
    pub fn n_maps(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    /// Offset of the weight block of map `l` in the flat parameter vector.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.layer_widths[..=l]
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }
}

/// Weights and biases of an MLP, flat in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    widths: Vec<usize>,
    data: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        NetworkParams {
            widths: spec.layer_widths.clone(),
            data: vec![0.0; spec.n_params()],
        }
    }

    pub fn from_flat(spec: &NetworkSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != spec.n_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters for widths {:?}, got {}",
                spec.n_params(),
                spec.layer_widths,
                data.len()
            )));
        }
        Ok(NetworkParams {
            widths: spec.layer_widths.clone(),
            data,
        })
    }

    /// Builds parameters from per-layer row-major weight matrices and biases.
    pub fn from_layers(
        spec: &NetworkSpec,
        weights: &[Vec<f64>],
        biases: &[Vec<f64>],
    ) -> Result<Self> {
        if weights.len() != spec.n_maps() || biases.len() != spec.n_maps() {
            return Err(Error::Shape(format!(
                "expected {} layers, got {} weight and {} bias blocks",
                spec.n_maps(),
                weights.len(),
                biases.len()
            )));
        }
        let mut data = Vec::with_capacity(spec.n_params());
        for (l, (w, b)) in weights.iter().zip(biases).enumerate() {
            let (rows, cols) = (spec.layer_widths[l + 1], spec.layer_widths[l]);
            if w.len() != rows * cols || b.len() != rows {
                return Err(Error::Shape(format!(
                    "layer {l}: expected {rows}x{cols} weights and {rows} biases"
                )));
            }
            data.extend_from_slice(w);
            data.extend_from_slice(b);
        }
        Ok(NetworkParams {
            widths: spec.layer_widths.clone(),
            data,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n_maps(&self) -> usize {
        self.widths.len() - 1
    }

    fn offset(&self, l: usize) -> usize {
        self.widths[..=l]
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    /// Row-major `h_{l+1} x h_l` weight matrix of map `l`.
    pub fn weight(&self, l: usize) -> &[f64] {
        let off = self.offset(l);
        &self.data[off..off + self.widths[l + 1] * self.widths[l]]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        let off = self.offset(l);
        let n = self.widths[l + 1] * self.widths[l];
        &mut self.data[off..off + n]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let off = self.offset(l) + self.widths[l + 1] * self.widths[l];
        &self.data[off..off + self.widths[l + 1]]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let off = self.offset(l) + self.widths[l + 1] * self.widths[l];
        let n = self.widths[l + 1];
        &mut self.data[off..off + n]
    }

    /// Checks that the parameters fit `spec` and are finite.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        if self.widths != spec.layer_widths {
            return Err(Error::Shape(format!(
                "parameters built for widths {:?}, network has {:?}",
                self.widths, spec.layer_widths
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("network parameter {i}")));
        }
        Ok(())
    }
}

/// Glorot-normal weights (`std = sqrt(2 / (h_i + h_{i+1}))`) and zero biases.
pub fn init_xavier(spec: &NetworkSpec, seed: u64) -> NetworkParams {
    let mut rng = rng::seeded(seed, stream::WEIGHTS);
    let mut params = NetworkParams::zeros(spec);
    for l in 0..spec.n_maps() {
        let (fan_in, fan_out) = (spec.layer_widths[l], spec.layer_widths[l + 1]);
        let std = math::sqrt(2.0 / (fan_in + fan_out) as f64);
        let normal = Normal::new(0.0, std).expect("positive std");
        for w in params.weight_mut(l) {
            *w = normal.sample(&mut rng);
        }
    }
    params
}

/// Gaussian weights with a fixed standard deviation and zero biases.
pub fn init_gaussian(spec: &NetworkSpec, std: f64, seed: u64) -> Result<NetworkParams> {
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::Parameter(format!("std must be positive, got {std}")));
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::Parameter(format!("{e}")))?;
    let mut rng = rng::seeded(seed, stream::WEIGHTS);
    let mut params = NetworkParams::zeros(spec);
    for l in 0..spec.n_maps() {
        for w in params.weight_mut(l) {
            *w = normal.sample(&mut rng);
        }
    }
    Ok(params)
}

/// Record of how a teacher was widened.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WideningPlan {
    pub delta_h: Vec<usize>,
    /// Per layer, the teacher unit (0-based) each student unit copies.
    /// Original units map to themselves.
    pub connectors: Vec<Vec<usize>>,
    pub seed: u64,
}

impl WideningPlan {
    /// Number of student units in layer `l` that copy teacher unit `unit`.
    pub fn replication(&self, l: usize, unit: usize) -> usize {
        self.connectors[l].iter().filter(|&&c| c == unit).count()
    }
}

#[derive(Debug, Clone)]
pub struct Widened {
    pub spec: NetworkSpec,
    pub params: NetworkParams,
    pub plan: WideningPlan,
}

/// Samples teacher-student connectors and widens the teacher by `delta_h`
/// units per layer while preserving its input-output map.
pub fn widen_net2net(
    teacher: &NetworkParams,
    spec: &NetworkSpec,
    delta_h: &[usize],
    seed: u64,
) -> Result<Widened> {
    check_delta(spec, delta_h)?;
    let mut rng = rng::seeded(seed, stream::CONNECTORS);
    let connectors = spec
        .layer_widths
        .iter()
        .zip(delta_h)
        .map(|(&h, &dh)| {
            (0..h)
                .chain((0..dh).map(|_| rng.random_range(0..h)))
                .collect::<Vec<_>>()
        })
        .collect();
    let plan = WideningPlan {
        delta_h: delta_h.to_vec(),
        connectors,
        seed,
    };
    let (spec, params) = widen_with_connectors(teacher, spec, &plan.connectors)?;
    Ok(Widened { spec, params, plan })
}

fn check_delta(spec: &NetworkSpec, delta_h: &[usize]) -> Result<()> {
    if delta_h.len() != spec.layer_widths.len() {
        return Err(Error::Parameter(format!(
            "delta_h has {} entries, network has {} layers",
            delta_h.len(),
            spec.layer_widths.len()
        )));
    }
    if delta_h[0] != 0 || *delta_h.last().unwrap() != 0 {
        return Err(Error::Parameter(
            "input and output widths cannot change when widening".into(),
        ));
    }
    Ok(())
}

/// Applies explicit connectors: an incoming row (and bias) of a student unit
/// copies its source unit, and the outgoing weights of every replicated
/// source are split evenly over its copies.
pub fn widen_with_connectors(
    teacher: &NetworkParams,
    spec: &NetworkSpec,
    connectors: &[Vec<usize>],
) -> Result<(NetworkSpec, NetworkParams)> {
    teacher.check(spec)?;
    if connectors.len() != spec.layer_widths.len() {
        return Err(Error::Parameter(
            "one connector vector per layer required".into(),
        ));
    }
    for (l, (c, &h)) in connectors.iter().zip(&spec.layer_widths).enumerate() {
        if c.len() < h || c[..h].iter().enumerate().any(|(i, &ci)| ci != i) {
            return Err(Error::Parameter(format!(
                "layer {l}: original units must map to themselves"
            )));
        }
        if c.iter().any(|&ci| ci >= h) {
            return Err(Error::Parameter(format!(
                "layer {l}: connector out of range"
            )));
        }
    }
    let n_layers = spec.layer_widths.len();
    if connectors[0].len() != spec.layer_widths[0]
        || connectors[n_layers - 1].len() != spec.layer_widths[n_layers - 1]
    {
        return Err(Error::Parameter(
            "input and output widths cannot change when widening".into(),
        ));
    }

    let student_spec = NetworkSpec {
        layer_widths: connectors.iter().map(Vec::len).collect(),
        ..spec.clone()
    };
    let mut student = NetworkParams::zeros(&student_spec);
    for l in 0..spec.n_maps() {
        let (src, dst) = (&connectors[l], &connectors[l + 1]);
        let teacher_cols = spec.layer_widths[l];
        let mut copies = vec![0usize; teacher_cols];
        for &c in src {
            copies[c] += 1;
        }
        let w_t = teacher.weight(l);
        let b_t = teacher.bias(l);
        let cols = src.len();
        {
            let w_s = student.weight_mut(l);
            for (i, &ci) in dst.iter().enumerate() {
                for (j, &cj) in src.iter().enumerate() {
                    let w = w_t[ci * teacher_cols + cj];
                    w_s[i * cols + j] = if copies[cj] == 1 {
                        w
                    } else {
                        w / copies[cj] as f64
                    };
                }
            }
        }
        let b_s = student.bias_mut(l);
        for (i, &ci) in dst.iter().enumerate() {
            b_s[i] = b_t[ci];
        }
    }
    Ok((student_spec, student))
}

/// Plain forward evaluation of the network at one point.
pub fn forward_point(spec: &NetworkSpec, params: &[f64], x: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = match spec.input_transform {
        InputTransform::Identity => x.to_vec(),
        InputTransform::CartesianToPolar => {
            vec![
                math::sqrt(x[0] * x[0] + x[1] * x[1]),
                math::atan2(x[1], x[0]),
            ]
        }
    };
    let mut off = 0;
    for l in 0..spec.n_maps() {
        let (cols, rows) = (spec.layer_widths[l], spec.layer_widths[l + 1]);
        let w = &params[off..off + rows * cols];
        let b = &params[off + rows * cols..off + rows * cols + rows];
        off += rows * cols + rows;
        let last = l + 1 == spec.n_maps();
        a = (0..rows)
            .map(|i| {
                let z = b[i]
                    + w[i * cols..(i + 1) * cols]
                        .iter()
                        .zip(&a)
                        .map(|(w, a)| w * a)
                        .sum::<f64>();
                if last {
                    z
                } else {
                    spec.activation.apply(z)
                }
            })
            .collect();
    }
    a
}
