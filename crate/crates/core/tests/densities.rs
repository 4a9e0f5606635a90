use brenier_core::linalg::{cholesky_lower, matvec};
use brenier_core::metrics::{grid_density, GridSpec};
use brenier_core::reference::{
    annulus_reference, gaussian_ot_map, random_convex_reference, random_gaussian_pair, RandomConvexOptions,
};
use brenier_core::train::w2_estimate;
use brenier_core::{DensitySpec, Gaussian, Icnn, MapDirection, Mixture, NetPushforward, ReferencePair, SampleBatch};
use pathfinding::prelude::{kuhn_munkres_min, Matrix};

fn four_blobs() -> DensitySpec {
    let c = |m: [f64; 2], v: f64| Gaussian::isotropic(m.to_vec(), v).unwrap();
    DensitySpec::Mixture(
        Mixture::new(
            vec![0.25, 0.25, 0.3, 0.2],
            vec![c([-2.0, -2.0], 0.4), c([2.0, -2.0], 0.6), c([-2.0, 2.0], 0.5), c([2.0, 2.0], 0.3)],
        )
        .unwrap(),
    )
}

fn random_pullback() -> DensitySpec {
    let net = Icnn::init_with(2, &[16, 16], 1.1, 1.0, 7, 0.5).unwrap();
    DensitySpec::NetPushforward(NetPushforward::new(MapDirection::Pullback, net, DensitySpec::StandardGaussian(2)).unwrap())
}

fn specs_2d() -> Vec<(&'static str, DensitySpec)> {
    let (a, _) = random_gaussian_pair(2, 3).unwrap();
    vec![
        ("standard", DensitySpec::StandardGaussian(2)),
        ("gaussian", DensitySpec::Gaussian(a)),
        ("mixture", four_blobs()),
        ("annulus", DensitySpec::Annulus(2)),
        ("pullback", random_pullback()),
        ("pushforward", random_convex_reference(2, 5, &RandomConvexOptions::default()).unwrap().target),
    ]
}

fn mean_and_cov(xs: &SampleBatch) -> (Vec<f64>, Vec<f64>) {
    (xs.mean(), xs.covariance())
}

#[test]
fn two_dimensional_densities_integrate_to_one() {
    let grid = GridSpec::square(6.0, 400);
    for (name, spec) in specs_2d() {
        let mass = grid_density(&spec, &grid).unwrap().integral();
        assert!((mass - 1.0).abs() < 0.02, "{name}: {mass}");
    }
}

#[test]
fn mean_log_density_matches_across_seeds() {
    let n = 100_000;
    for (name, spec) in specs_2d() {
        let stats = |seed| {
            let l = spec.log_density_batch(&spec.sample(n, seed).unwrap()).unwrap();
            let m = l.iter().sum::<f64>() / n as f64;
            let v = l.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
            (m, v)
        };
        let ((m1, v1), (m2, v2)) = (stats(1), stats(2));
        let se = ((v1 + v2) / n as f64).sqrt();
        assert!((m1 - m2).abs() <= 3.0 * se, "{name}: {m1} vs {m2}, se {se}");
    }
}

#[test]
fn standard_gaussian_sample_moments() {
    let (m, c) = mean_and_cov(&DensitySpec::StandardGaussian(2).sample(100_000, 4).unwrap());
    assert!(m.iter().all(|v| v.abs() < 0.02), "{m:?}");
    for (k, v) in c.iter().enumerate() {
        let want = if k % 3 == 0 { 1.0 } else { 0.0 };
        assert!((v - want).abs() < 0.03, "{c:?}");
    }
}

#[test]
fn annulus_radius_cubed_is_gaussian_norm() {
    let xs = DensitySpec::Annulus(2).sample(100_000, 5).unwrap();
    let mean = xs.rows().map(|x| (x[0] * x[0] + x[1] * x[1]).powf(1.5)).sum::<f64>() / xs.len() as f64;
    assert!((mean - (std::f64::consts::PI / 2.0).sqrt()).abs() < 0.02, "{mean}");
}

#[test]
fn empty_and_seeded_samples() {
    for (name, spec) in specs_2d() {
        assert!(spec.sample(0, 1).unwrap().is_empty(), "{name}");
        assert_eq!(spec.sample(50, 9).unwrap(), spec.sample(50, 9).unwrap(), "{name}");
    }
}

#[test]
fn random_covariance_diagonal_mean() {
    let seeds = 10_000u64;
    let mut total = 0.0;
    for s in 0..seeds {
        let (a, _) = random_gaussian_pair(2, s).unwrap();
        total += a.cov()[0] + a.cov()[3];
    }
    let mean = total / (2 * seeds) as f64;
    assert!((mean - 1.125).abs() < 0.02 * 1.125, "{mean}");
}

/// Moments of `T*(X)` with `X` from the source against target samples.
fn check_pushforward(name: &str, pair: &ReferencePair, tol: f64) {
    let n = 100_000;
    let mapped = pair.true_map.apply_batch(&pair.source.sample(n, 21).unwrap()).unwrap();
    let direct = pair.target.sample(n, 22).unwrap();
    let (ma, ca) = mean_and_cov(&mapped);
    let (mb, cb) = mean_and_cov(&direct);
    for (a, b) in ma.iter().zip(&mb).chain(ca.iter().zip(&cb)) {
        assert!((a - b).abs() < tol, "{name}: {ma:?} {ca:?} vs {mb:?} {cb:?}");
    }
}

#[test]
fn reference_maps_push_source_onto_target() {
    let (a, b) = random_gaussian_pair(2, 8).unwrap();
    check_pushforward("gaussian", &gaussian_ot_map(&a, &b).unwrap(), 0.05);
    check_pushforward("annulus", &annulus_reference(2).unwrap(), 0.05);
    let rc = random_convex_reference(2, 9, &RandomConvexOptions::default()).unwrap();
    check_pushforward("random convex", &rc, 0.05);
}

/// Affinely moves `xs` so its empirical mean and (1/n) covariance equal
/// those of `g` exactly.
fn match_moments(xs: &SampleBatch, g: &Gaussian) -> SampleBatch {
    let (d, n) = (xs.dim(), xs.len());
    let m = xs.mean();
    let c: Vec<f64> = xs.covariance().iter().map(|v| v * (n - 1) as f64 / n as f64).collect();
    let lc = cholesky_lower(&c, d).unwrap();
    let lg = cholesky_lower(g.cov(), d).unwrap();
    let mut out = SampleBatch::zeros(d, n);
    for (b, x) in xs.rows().enumerate() {
        // forward substitution: w = Lc^-1 (x - m)
        let mut w = vec![0.0; d];
        for i in 0..d {
            let s: f64 = (0..i).map(|k| lc[i * d + k] * w[k]).sum();
            w[i] = (x[i] - m[i] - s) / lc[i * d + i];
        }
        let mut y = vec![0.0; d];
        matvec(&lg, &w, &mut y);
        for (o, (yi, mi)) in out.row_mut(b).iter_mut().zip(y.iter().zip(g.mean())) {
            *o = yi + mi;
        }
    }
    out
}

#[test]
fn gaussian_distance_matches_discrete_assignment() {
    let src = Gaussian::standard(2);
    let dst = Gaussian::new(vec![3.0, -1.0], vec![2.0, 0.8, 0.8, 1.0]).unwrap();
    let truth = gaussian_ot_map(&src, &dst).unwrap().true_w2.unwrap().distance;

    // With exact first and second moments the Gaussian distance is a lower
    // bound for any coupling, so the assignment can only land above it.
    let n = 1000;
    let xs = match_moments(&DensitySpec::Gaussian(src.clone()).sample(n, 31).unwrap(), &src);
    let ys = match_moments(&DensitySpec::Gaussian(dst.clone()).sample(n, 32).unwrap(), &dst);
    let scale = 1e9;
    let cost = Matrix::from_fn(n, n, |(i, j)| {
        let d2: f64 = xs.row(i).iter().zip(ys.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        (d2 * scale).round() as i64
    });
    let (total, _) = kuhn_munkres_min(&cost);
    let discrete = (total as f64 / scale / n as f64).sqrt();
    assert!(discrete > truth * (1.0 - 1e-9), "{discrete} vs {truth}");
    assert!(discrete < 1.01 * truth, "{discrete} vs {truth}");
}

#[test]
fn random_convex_distance_is_stable_across_seeds() {
    let pair = random_convex_reference(2, 3, &RandomConvexOptions::default()).unwrap();
    let net = match &pair.true_map {
        brenier_core::ReferenceMap::Gradient(net) => net.clone(),
        other => panic!("unexpected map {other:?}"),
    };
    let (a, _) = w2_estimate(&net, &pair.source, 1_000_000, 101).unwrap();
    let (b, _) = w2_estimate(&net, &pair.source, 1_000_000, 202).unwrap();
    assert!((a - b).abs() < 0.01 * a, "{a} vs {b}");
    let recorded = pair.true_w2.unwrap();
    assert_eq!(recorded.mc_samples, Some(RandomConvexOptions::default().mc_samples));
    assert!((recorded.squared - a).abs() < 0.02 * a, "{} vs {a}", recorded.squared);
}

#[test]
fn closed_form_examples() {
    let ln = |x: f64| x.ln();
    let std1 = DensitySpec::StandardGaussian(1);
    assert!((std1.log_density(&[0.0]).unwrap() + 0.918939).abs() < 1e-6);
    let want = -ln(2.0 * std::f64::consts::PI) - 0.5 + ln(3.0);
    assert!((DensitySpec::Annulus(2).log_density(&[1.0, 0.0]).unwrap() - want).abs() < 1e-12);

    let pair = annulus_reference(2).unwrap();
    assert_eq!(pair.true_map.apply(&[2.0, 0.0]).unwrap(), vec![8.0, 0.0]);
    let back = pair.true_inverse.unwrap().apply(&[8.0, 0.0]).unwrap();
    assert!((back[0] - 2.0).abs() < 1e-12 && back[1] == 0.0);

    let p = gaussian_ot_map(&Gaussian::standard(2), &Gaussian::isotropic(vec![0.0, 0.0], 4.0).unwrap()).unwrap();
    assert!((p.true_w2.unwrap().squared - 2.0).abs() < 1e-12);
    let t = p.true_map.apply(&[0.5, -1.0]).unwrap();
    assert!((t[0] - 1.0).abs() < 1e-12 && (t[1] + 2.0).abs() < 1e-12);
}
