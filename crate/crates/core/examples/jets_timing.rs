//! Times one forward and reverse sweep over a batch of points.
//!
//! `cargo run --release --example jets_timing -- <hidden> <points> <order>`

use std::time::Instant;

use mopinn_core::autodiff::jets::{backward, forward, Jets};
use mopinn_core::autodiff::Order;
use mopinn_core::network::{init_xavier, Activation, NetworkSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let hidden: usize = args.get(1).map_or(80, |s| s.parse().unwrap());
    let n: usize = args.get(2).map_or(1600, |s| s.parse().unwrap());
    let order = match args.get(3).map(String::as_str) {
        Some("value") => Order::Value,
        Some("gradient") => Order::Gradient,
        Some("hessian") => Order::Hessian,
        _ => Order::Laplacian,
    };
    let act = match std::env::var("ACT").as_deref() {
        Ok("identity") => Activation::Identity,
        Ok("silu") => Activation::Silu,
        _ => Activation::Tanh,
    };
    let spec = NetworkSpec::mlp(2, hidden, 3, 1, act).unwrap();
    let params = init_xavier(&spec, 0);
    let pts: Vec<f64> = (0..2 * n).map(|i| (i as f64 * 0.618).fract()).collect();
    let reps = 20;
    let t = Instant::now();
    let mut grad = vec![0.0; spec.n_params()];
    for _ in 0..reps {
        let pass = forward(&spec, params.as_slice(), &pts, order).unwrap();
        let mut adj = Jets::zeros_like(pass.output());
        adj.as_mut_slice().iter_mut().for_each(|v| *v = 1.0);
        backward(&spec, params.as_slice(), &pass, &adj, &mut grad).unwrap();
    }
    println!("{:?} per forward+backward", t.elapsed() / reps);
}
