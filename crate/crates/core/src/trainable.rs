//! The optimization unknown: network parameters plus named extra scalars.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::network::{NetworkParams, NetworkSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainableVector {
    values: Vec<f64>,
    n_net: usize,
    extra_names: Vec<String>,
}

impl TrainableVector {
    pub fn new(network: NetworkParams, extras: Vec<(String, f64)>) -> Self {
        let mut values = network.into_vec();
        let n_net = values.len();
        let mut extra_names = Vec::with_capacity(extras.len());
        for (name, v) in extras {
            extra_names.push(name);
            values.push(v);
        }
        TrainableVector {
            values,
            n_net,
            extra_names,
        }
    }

    pub fn from_network(network: NetworkParams) -> Self {
        Self::new(network, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_network(&self) -> usize {
        self.n_net
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn network(&self) -> &[f64] {
        &self.values[..self.n_net]
    }

    pub fn network_params(&self, spec: &NetworkSpec) -> Result<NetworkParams> {
        NetworkParams::from_flat(spec, self.network().to_vec())
    }

    pub fn extras(&self) -> &[f64] {
        &self.values[self.n_net..]
    }

    pub fn extras_mut(&mut self) -> &mut [f64] {
        &mut self.values[self.n_net..]
    }

    pub fn extra_names(&self) -> &[String] {
        &self.extra_names
    }

    pub fn extra(&self, name: &str) -> Option<f64> {
        self.extra_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[self.n_net + i])
    }

    /// Named extras as owned pairs.
    pub fn named_extras(&self) -> Vec<(String, f64)> {
        self.extra_names
            .iter()
            .cloned()
            .zip(self.extras().iter().copied())
            .collect()
    }

    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        if self.n_net != spec.n_params() {
            return Err(Error::Shape(alloc::format!(
                "trainable vector holds {} network parameters, network needs {}",
                self.n_net,
                spec.n_params()
            )));
        }
        Ok(())
    }
}
