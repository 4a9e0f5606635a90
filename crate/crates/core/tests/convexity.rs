mod common;

use brenier_core::diff::eval_with_derivatives;
use brenier_core::linalg::{dot, min_eigenvalue};
use brenier_core::reference::random_gaussian_pair;
use brenier_core::rng::{self, Rng};
use brenier_core::train::{train, NoClock};
use brenier_core::{DensitySpec, Icnn, TrainConfig, TrainData};
use common::{points, random_net};
use proptest::prelude::*;

fn trained_net() -> Icnn {
    let (a, b) = random_gaussian_pair(2, 4).unwrap();
    let config = TrainConfig {
        iterations: 300,
        batch_size: 64,
        pretrain_iterations: 200,
        inverse_iterations: 10,
        widths: vec![16, 16],
        holdout_size: 64,
        ..TrainConfig::default()
    };
    let data = TrainData::Densities {
        source: &DensitySpec::Gaussian(a),
        target: &DensitySpec::Gaussian(b),
    };
    train(&config, data, &NoClock).unwrap().forward
}

fn nets() -> Vec<Icnn> {
    let mut out = vec![trained_net()];
    for (k, d) in [1usize, 2, 3, 5].into_iter().enumerate() {
        out.push(random_net(d, &[16, 16, 16], 0.0, 40 + k as u64));
    }
    out
}

fn midpoint_violation(u: &Icnn, r: &mut Rng, pairs: usize) -> f64 {
    let d = u.dim();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let p = points(r, d, 2, 5.0);
        let m: Vec<f64> = p[0].iter().zip(&p[1]).map(|(a, b)| 0.5 * (a + b)).collect();
        let (ua, ub, um) = (u.forward(&p[0]).unwrap(), u.forward(&p[1]).unwrap(), u.forward(&m).unwrap());
        worst = worst.max((um - 0.5 * (ua + ub)) / (1.0 + ua.abs() + ub.abs()));
    }
    worst
}

#[test]
fn midpoint_convexity_over_ten_thousand_pairs() {
    let mut r = rng::seeded(11);
    for u in nets() {
        let v = midpoint_violation(&u, &mut r, 10_000);
        assert!(v <= 1e-9, "d={} violation {v}", u.dim());
    }
}

#[test]
fn hessian_is_positive_semidefinite() {
    let mut r = rng::seeded(12);
    for u in nets() {
        let d = u.dim();
        for x in points(&mut r, d, 1000, 5.0) {
            let b = eval_with_derivatives(u.arch(), u.params(), &x).unwrap();
            let lam = min_eigenvalue(&b.hess, d);
            assert!(lam >= -1e-8, "d={d} x={x:?} eigenvalue {lam}");
        }
    }
}

#[test]
fn gradient_map_is_monotone() {
    let mut r = rng::seeded(13);
    for u in nets() {
        let d = u.dim();
        for _ in 0..10_000 {
            let p = points(&mut r, d, 2, 5.0);
            let ta = u.transport_map(&p[0]).unwrap();
            let tb = u.transport_map(&p[1]).unwrap();
            let dt: Vec<f64> = ta.iter().zip(&tb).map(|(a, b)| a - b).collect();
            let dx: Vec<f64> = p[0].iter().zip(&p[1]).map(|(a, b)| a - b).collect();
            assert!(dot(&dt, &dx) >= -1e-9, "d={d} {p:?}");
        }
    }
}

fn arbitrary_net() -> impl Strategy<Value = Icnn> {
    (1usize..=5, prop::collection::vec(1usize..=16, 1..=3), any::<u64>(), 0.1f64..3.0)
        .prop_map(|(d, widths, seed, scale)| Icnn::init_with(d, &widths, 1.1, 0.0, seed, scale).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn midpoint_convexity(u in arbitrary_net(), seed in any::<u64>()) {
        let v = midpoint_violation(&u, &mut rng::seeded(seed), 50);
        prop_assert!(v <= 1e-9, "violation {}", v);
    }

    #[test]
    fn projection_is_idempotent(u in arbitrary_net(), noise in any::<u64>()) {
        // push some constrained weights negative first
        let mut w = u.clone();
        let mut r = rng::seeded(noise);
        for v in w.params_mut() {
            *v += rng::uniform(&mut r, -1.0, 1.0);
        }
        let once = w.project_nonneg();
        prop_assert!(once.constraints_hold());
        prop_assert_eq!(once.project_nonneg(), once);
    }

    #[test]
    fn projected_networks_stay_convex(u in arbitrary_net(), noise in any::<u64>()) {
        let mut w = u.clone();
        let mut r = rng::seeded(noise);
        for v in w.params_mut() {
            *v += rng::uniform(&mut r, -1.0, 1.0);
        }
        let p = w.project_nonneg();
        let d = p.dim();
        for x in points(&mut r, d, 20, 4.0) {
            let b = eval_with_derivatives(p.arch(), p.params(), &x).unwrap();
            prop_assert!(min_eigenvalue(&b.hess, d) >= -1e-8);
        }
    }
}
