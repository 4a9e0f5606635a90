#![allow(dead_code)]

use brenier_core::diff::ParamRole;
use brenier_core::icnn::uniform_point;
use brenier_core::rng::{self, Rng};
use brenier_core::Icnn;

/// Random network with non-zero biases, so every parameter block matters.
pub fn random_net(d: usize, widths: &[usize], floor: f64, seed: u64) -> Icnn {
    let mut net = Icnn::init_with(d, widths, 1.1, floor, seed, 1.0).unwrap();
    let mut r = rng::seeded(seed ^ 0x9e37);
    for l in 0..widths.len() {
        for v in net.block_mut(l, ParamRole::Bias).unwrap() {
            *v = rng::uniform(&mut r, -0.5, 0.5);
        }
    }
    for v in net.block_mut(widths.len(), ParamRole::ReadoutInput).unwrap() {
        *v = rng::uniform(&mut r, -0.5, 0.5);
    }
    net
}

/// Dimension in 1..=5 and one to three layers of width 1..=16.
pub fn random_shape(r: &mut Rng) -> (usize, Vec<usize>) {
    let d = 1 + rng::index(r, 5);
    let depth = 1 + rng::index(r, 3);
    (d, (0..depth).map(|_| 1 + rng::index(r, 16)).collect())
}

pub fn points(r: &mut Rng, d: usize, n: usize, half_width: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| uniform_point(r, d, half_width)).collect()
}
