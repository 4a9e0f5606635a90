mod common;

use brenier_core::diff::{loss_value, ParamRole};
use brenier_core::fields::{Quadratic, Quartic};
use brenier_core::icnn::IcnnArch;
use brenier_core::loss::{NllLoss, ResidualLoss};
use brenier_core::metrics::l2_uvp;
use brenier_core::reference::{gaussian_ot_map, random_gaussian_pair, ReferenceMap};
use brenier_core::rng;
use brenier_core::train::{pretrain_identity, train, w2_estimate, NoClock, Phase};
use brenier_core::{DensitySpec, Gaussian, Icnn, SampleBatch, TrainConfig, TrainData};
use common::points;

fn quick_config() -> TrainConfig {
    TrainConfig {
        widths: vec![16, 16],
        batch_size: 128,
        iterations: 1500,
        pretrain_iterations: 1500,
        inverse_iterations: 1500,
        holdout_size: 1024,
        ..TrainConfig::default()
    }
}

/// `s/2 |x|^2 + c.x` as a network with no hidden contribution.
fn quadratic_net(d: usize, s: f64, c: &[f64]) -> Icnn {
    let mut net = Icnn::zeros(IcnnArch::new(d, &[2], 1.1, s).unwrap());
    net.block_mut(1, ParamRole::ReadoutInput).unwrap().copy_from_slice(c);
    net
}

#[test]
fn exact_pairs_have_vanishing_residual() {
    let (a, _) = random_gaussian_pair(3, 2).unwrap();
    let f = DensitySpec::Gaussian(a);
    let xs = f.sample(4096, 1).unwrap();
    let (q, p) = Quadratic::isotropic(3, 1.0);
    let r = loss_value(&ResidualLoss::new(&f, &f, &xs).unwrap(), &q, &p, &xs).unwrap();
    assert!(r <= 1e-6, "{r}");

    for d in 1..=3 {
        let f = DensitySpec::Annulus(d);
        let g = DensitySpec::StandardGaussian(d);
        let xs = f.sample(4096, 2).unwrap();
        let r = loss_value(&ResidualLoss::new(&f, &g, &xs).unwrap(), &Quartic::new(d), &[1.0], &xs).unwrap();
        assert!(r <= 1e-6, "d={d}: {r}");
    }
}

#[test]
fn single_point_residual_of_a_shift() {
    let f = DensitySpec::StandardGaussian(1);
    let g = DensitySpec::Gaussian(Gaussian::isotropic(vec![2.0], 1.0).unwrap());
    let x = SampleBatch::single(&[0.0]);
    let (q, p) = Quadratic::isotropic(1, 1.0);
    let r = loss_value(&ResidualLoss::new(&f, &g, &x).unwrap(), &q, &p, &x).unwrap();
    assert!((r - 0.118991).abs() < 1e-6, "{r}");
}

#[test]
fn true_potential_minimizes_the_likelihood_loss() {
    let (a, b) = random_gaussian_pair(2, 6).unwrap();
    let pair = gaussian_ot_map(&a, &b).unwrap();
    let (m, lin) = match &pair.true_map {
        ReferenceMap::Affine { center, matrix, shift } => {
            let lin: Vec<f64> = (0..2).map(|i| shift[i] - matrix[2 * i] * center[0] - matrix[2 * i + 1] * center[1]).collect();
            (matrix.clone(), lin)
        }
        other => panic!("unexpected map {other:?}"),
    };
    let background = DensitySpec::Gaussian(b);
    let xs = DensitySpec::Gaussian(a).sample(100_000, 3).unwrap();
    let loss = NllLoss::new(&background);
    let (q, p) = Quadratic::affine(2, &m, &lin);
    let best = loss_value(&loss, &q, &p, &xs).unwrap();

    let mut r = rng::seeded(4);
    for _ in 0..10 {
        let mut pp = p.clone();
        let e = rng::uniform(&mut r, -0.1, 0.1);
        // symmetric perturbation keeps the Hessian positive definite
        pp[0] += rng::uniform(&mut r, -0.1, 0.1);
        pp[3] += rng::uniform(&mut r, -0.1, 0.1);
        pp[1] += e;
        pp[2] += e;
        pp[4] += rng::uniform(&mut r, -0.1, 0.1);
        pp[5] += rng::uniform(&mut r, -0.1, 0.1);
        let worse = loss_value(&loss, &q, &pp, &xs).unwrap();
        assert!(worse >= best - 1e-3, "{worse} < {best}");
    }
}

#[test]
fn distance_estimates() {
    let (w2sq, w2) = w2_estimate(&quadratic_net(2, 1.0, &[0.0, 0.0]), &DensitySpec::StandardGaussian(2), 10_000, 1).unwrap();
    assert_eq!((w2sq, w2), (0.0, 0.0));

    let shift = quadratic_net(1, 1.0, &[2.0]);
    let (w2sq, w2) = w2_estimate(&shift, &DensitySpec::StandardGaussian(1), 1_000_000, 2).unwrap();
    assert!((w2sq - 4.0).abs() < 0.04 && (w2 - 2.0).abs() < 0.02, "{w2sq} {w2}");
}

#[test]
fn pretraining_approximates_half_squared_norm() {
    let config = TrainConfig {
        pretrain_iterations: 5000,
        ..quick_config()
    };
    let net = Icnn::init(2, &config.widths, 9).unwrap();
    let (u, report) = pretrain_identity(&net, &config).unwrap();
    assert!(report.converged, "{report:?}");

    let xs = DensitySpec::StandardGaussian(2).sample(4096, 77).unwrap();
    let ys = u.transport_batch(&xs).unwrap();
    let mismatch = xs
        .rows()
        .zip(ys.rows())
        .map(|(x, y)| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / xs.len() as f64;
    assert!(mismatch <= 2.0 * report.tolerance, "{mismatch}");

    let u0 = u.forward(&[0.0, 0.0]).unwrap();
    let mut r = rng::seeded(5);
    let ball: Vec<Vec<f64>> = points(&mut r, 2, 4000, 2.0)
        .into_iter()
        .filter(|x| x[0] * x[0] + x[1] * x[1] <= 4.0)
        .collect();
    let dev = ball
        .iter()
        .map(|x| (u.forward(x).unwrap() - u0 - 0.5 * (x[0] * x[0] + x[1] * x[1])).abs())
        .sum::<f64>()
        / ball.len() as f64;
    assert!(dev <= 0.05, "{dev}");

    let none = TrainConfig {
        pretrain_iterations: 0,
        ..config
    };
    assert_eq!(pretrain_identity(&net, &none).unwrap().0, net);
}

#[test]
fn identity_problem_learns_a_near_zero_distance() {
    let g = DensitySpec::StandardGaussian(2);
    // the residual barely constrains a near-identity map, so the accuracy
    // comes from a tight identity fit before it
    let config = TrainConfig {
        learning_rate: 2e-3,
        lr_decay: 0.1,
        pretrain_iterations: 20_000,
        pretrain_tolerance: Some(3e-6),
        iterations: 1000,
        inverse_iterations: 100,
        ..quick_config()
    };
    let pair = train(&config, TrainData::Densities { source: &g, target: &g }, &NoClock).unwrap();
    let (_, w2) = w2_estimate(&pair.forward, &g, 100_000, 3).unwrap();
    assert!(w2 <= 1e-2, "{w2}");
}

#[test]
fn one_dimensional_shift_is_learned() {
    let src = Gaussian::standard(1);
    let dst = Gaussian::isotropic(vec![2.0], 1.0).unwrap();
    let reference = gaussian_ot_map(&src, &dst).unwrap();
    let config = TrainConfig {
        iterations: 3000,
        inverse_iterations: 5000,
        ..quick_config()
    };
    let data = TrainData::Densities {
        source: &reference.source,
        target: &reference.target,
    };
    let pair = train(&config, data, &NoClock).unwrap();
    let uvp = l2_uvp(&pair.forward, &reference, 100_000, 8).unwrap();
    assert!(uvp <= 0.5, "{uvp}");
    assert!(pair.inverse_consistency <= 1e-3, "{}", pair.inverse_consistency);
}

#[test]
fn training_is_reproducible_and_records_every_phase() {
    let (a, b) = random_gaussian_pair(2, 1).unwrap();
    let (f, g) = (DensitySpec::Gaussian(a), DensitySpec::Gaussian(b));
    let config = TrainConfig {
        iterations: 200,
        pretrain_iterations: 100,
        inverse_iterations: 100,
        ..quick_config()
    };
    let run = || train(&config, TrainData::Densities { source: &f, target: &g }, &NoClock).unwrap();
    let (p, q) = (run(), run());
    assert_eq!(p, q);
    for phase in [Phase::PretrainForward, Phase::Main, Phase::PretrainInverse, Phase::Inverse] {
        assert!(p.history.iter().any(|h| h.phase == phase), "{phase:?}");
    }
    assert_eq!(p.history.iter().filter(|h| h.phase == Phase::Main).count(), 200);
    assert!(p.forward.constraints_hold() && p.inverse.constraints_hold());
}
