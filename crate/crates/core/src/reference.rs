//! Transport problems with known optimal maps.

use alloc::vec;
use alloc::vec::Vec;

use crate::activation::DEFAULT_ALPHA;
use crate::batch::SampleBatch;
use crate::density::{DensitySpec, Gaussian, MapDirection, NetPushforward};
use crate::error::{Error, Result};
use crate::icnn::Icnn;
use crate::linalg;
use crate::rng;

/// Ground-truth transport map of a [`ReferencePair`].
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceMap {
    Identity(usize),
    /// `x -> shift + matrix (x - center)`.
    Affine {
        center: Vec<f64>,
        matrix: Vec<f64>,
        shift: Vec<f64>,
    },
    /// `x -> (x.x) x`, the gradient of `(x.x)^2 / 4`.
    RadialCubic(usize),
    /// `y -> y |y|^{-2/3}`, inverse of [`ReferenceMap::RadialCubic`].
    RadialCubeRoot(usize),
    /// Gradient of a network potential.
    Gradient(Icnn),
}

impl ReferenceMap {
    pub fn dim(&self) -> usize {
        match self {
            ReferenceMap::Identity(d) | ReferenceMap::RadialCubic(d) | ReferenceMap::RadialCubeRoot(d) => *d,
            ReferenceMap::Affine { center, .. } => center.len(),
            ReferenceMap::Gradient(net) => net.dim(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply_batch(&SampleBatch::single(x))?.into_vec())
    }

    pub fn apply_batch(&self, xs: &SampleBatch) -> Result<SampleBatch> {
        let d = self.dim();
        if xs.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: xs.dim(),
            });
        }
        if let ReferenceMap::Gradient(net) = self {
            return net.transport_batch(xs);
        }
        let mut out = xs.clone();
        for b in 0..xs.len() {
            let x = xs.row(b);
            let y = out.row_mut(b);
            match self {
                ReferenceMap::Identity(_) => {}
                ReferenceMap::Affine {
                    center,
                    matrix,
                    shift,
                } => {
                    for i in 0..d {
                        y[i] = shift[i];
                        for j in 0..d {
                            y[i] += matrix[i * d + j] * (x[j] - center[j]);
                        }
                    }
                }
                ReferenceMap::RadialCubic(_) => {
                    let r2 = linalg::norm_sq(x);
                    y.iter_mut().for_each(|v| *v *= r2);
                }
                ReferenceMap::RadialCubeRoot(_) => {
                    let r2 = linalg::norm_sq(x);
                    if r2 > 0.0 {
                        let s = libm::pow(r2, -1.0 / 3.0);
                        y.iter_mut().for_each(|v| *v *= s);
                    }
                }
                ReferenceMap::Gradient(_) => unreachable!(),
            }
        }
        Ok(out)
    }
}

/// Squared and plain Wasserstein-2 distance, with the Monte Carlo budget
/// when the value is estimated rather than exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueW2 {
    pub squared: f64,
    pub distance: f64,
    pub mc_samples: Option<usize>,
    pub mc_seed: Option<u64>,
}

impl TrueW2 {
    pub fn exact(squared: f64) -> Self {
        Self {
            squared,
            distance: libm::sqrt(squared.max(0.0)),
            mc_samples: None,
            mc_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePair {
    pub source: DensitySpec,
    pub target: DensitySpec,
    pub true_map: ReferenceMap,
    pub true_inverse: Option<ReferenceMap>,
    pub true_w2: Option<TrueW2>,
}

impl ReferencePair {
    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    /// Trace of the target covariance: closed form when available, otherwise
    /// estimated from `n` target samples.
    pub fn target_total_variance(&self, n: usize, seed: u64) -> Result<f64> {
        if let Some(v) = self.target.analytic_total_variance() {
            return Ok(v);
        }
        Ok(self.target.sample(n, seed)?.total_variance())
    }
}

/// Optimal affine map between two Gaussians and their closed-form distance.
pub fn gaussian_ot_map(src: &Gaussian, dst: &Gaussian) -> Result<ReferencePair> {
    let d = src.dim();
    if dst.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: dst.dim(),
        });
    }
    let s1 = linalg::symmetrize(&linalg::to_matrix(src.cov(), d));
    let s2 = linalg::symmetrize(&linalg::to_matrix(dst.cov(), d));
    let r1 = linalg::sqrtm(&s1);
    let r1_inv = linalg::inv_sqrtm(&s1);
    let mid = linalg::sqrtm(&linalg::symmetrize(&(&r1 * &s2 * &r1)));
    let a = linalg::symmetrize(&(&r1_inv * &mid * &r1_inv));
    let a_inv = a
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?
        .inverse();

    let mean_gap: f64 = src
        .mean()
        .iter()
        .zip(dst.mean())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let w2sq = (mean_gap + (s1.trace() + s2.trace() - 2.0 * mid.trace())).max(0.0);

    Ok(ReferencePair {
        source: DensitySpec::Gaussian(src.clone()),
        target: DensitySpec::Gaussian(dst.clone()),
        true_map: ReferenceMap::Affine {
            center: src.mean().to_vec(),
            matrix: linalg::to_row_major(&a),
            shift: dst.mean().to_vec(),
        },
        true_inverse: Some(ReferenceMap::Affine {
            center: dst.mean().to_vec(),
            matrix: linalg::to_row_major(&linalg::symmetrize(&a_inv)),
            shift: src.mean().to_vec(),
        }),
        true_w2: Some(TrueW2::exact(w2sq)),
    })
}

/// Radial annulus-shaped source carried onto the standard Gaussian by
/// `x -> (x.x) x`.
pub fn annulus_reference(d: usize) -> Result<ReferencePair> {
    if d == 0 {
        return Err(Error::ZeroDimension);
    }
    Ok(ReferencePair {
        source: DensitySpec::Annulus(d),
        target: DensitySpec::StandardGaussian(d),
        true_map: ReferenceMap::RadialCubic(d),
        true_inverse: Some(ReferenceMap::RadialCubeRoot(d)),
        true_w2: Some(TrueW2::exact(annulus_w2_squared(d))),
    })
}

/// `E[s^{2/3} (1 - s^{2/3})^2]` for `s ~ chi_d`, which is the mean squared
/// displacement `|x|^2 (1 - |x|^2)^2` of the annulus map, by Simpson's rule on
/// the radial density `s^{d-1} e^{-s^2/2}` (normalized numerically).
pub fn annulus_w2_squared(d: usize) -> f64 {
    let upper = 12.0 + 2.0 * libm::sqrt(d as f64) * 3.0;
    let n = 200_000;
    let h = upper / n as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..=n {
        let s = k as f64 * h;
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let dens = if s == 0.0 {
            if d == 1 { 1.0 } else { 0.0 }
        } else {
            libm::exp((d as f64 - 1.0) * libm::log(s) - 0.5 * s * s)
        };
        let t = libm::cbrt(s * s);
        num += w * dens * t * (1.0 - t) * (1.0 - t);
        den += w * dens;
    }
    num / den
}

/// Options for [`random_convex_reference`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomConvexOptions {
    pub widths: Vec<usize>,
    /// Weight scale passed to network initialization.
    pub scale: f64,
    /// Quadratic term `floor/2 |x|^2` added to the random potential.
    pub floor: f64,
    pub mc_samples: usize,
}

impl Default for RandomConvexOptions {
    fn default() -> Self {
        Self {
            widths: vec![16, 16],
            scale: 0.5,
            floor: 1.0,
            mc_samples: 100_000,
        }
    }
}

/// The standard Gaussian pushed forward by the gradient of a random network
/// potential; the distance is a Monte Carlo estimate over source samples.
pub fn random_convex_reference(
    d: usize,
    seed: u64,
    opts: &RandomConvexOptions,
) -> Result<ReferencePair> {
    let net = Icnn::init_with(d, &opts.widths, DEFAULT_ALPHA, opts.floor, seed, opts.scale)?;
    let source = DensitySpec::StandardGaussian(d);
    let mc_seed = rng::derive_seed(seed, 0x5732);
    let xs = source.sample(opts.mc_samples, mc_seed)?;
    let ys = net.transport_batch(&xs)?;
    let w2sq = mean_sq_distance(&xs, &ys);
    let target = DensitySpec::NetPushforward(NetPushforward::new(
        MapDirection::Pushforward,
        net.clone(),
        source.clone(),
    )?);
    Ok(ReferencePair {
        source,
        target,
        true_map: ReferenceMap::Gradient(net),
        true_inverse: None,
        true_w2: Some(TrueW2 {
            squared: w2sq,
            distance: libm::sqrt(w2sq),
            mc_samples: Some(opts.mc_samples),
            mc_seed: Some(mc_seed),
        }),
    })
}

pub(crate) fn mean_sq_distance(a: &SampleBatch, b: &SampleBatch) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let total: f64 = a
        .rows()
        .zip(b.rows())
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
        .sum();
    total / a.len() as f64
}

/// Two Gaussians with means uniform on `[-1, 1]^d` and covariances `A A^T`,
/// `A` a `d x 3d` matrix with entries uniform on `[0, 0.75]`.
///
/// A draw whose covariance fails to factor is discarded and the whole pair is
/// redrawn from `seed + 1`.
pub fn random_gaussian_pair(d: usize, seed: u64) -> Result<(Gaussian, Gaussian)> {
    if d == 0 {
        return Err(Error::ZeroDimension);
    }
    let mut s = seed;
    loop {
        let mut r = rng::seeded(s);
        let mut draw = || -> Result<Gaussian> {
            let mean: Vec<f64> = (0..d).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
            let a: Vec<f64> = (0..3 * d * d).map(|_| rng::uniform(&mut r, 0.0, 0.75)).collect();
            let mut cov = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    let row_i = &a[i * 3 * d..(i + 1) * 3 * d];
                    let row_j = &a[j * 3 * d..(j + 1) * 3 * d];
                    cov[i * d + j] = linalg::dot(row_i, row_j);
                }
            }
            Gaussian::new(mean, cov)
        };
        match (draw(), draw()) {
            (Ok(a), Ok(b)) => return Ok((a, b)),
            _ => {
                log::warn!("random covariance for seed {s} is degenerate; redrawing with seed {}", s + 1);
                s = s.wrapping_add(1);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn translation_in_one_dimension() {
        let p = gaussian_ot_map(
            &Gaussian::isotropic(vec![0.0], 1.0).unwrap(),
            &Gaussian::isotropic(vec![2.0], 1.0).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(p.true_map.apply(&[0.7]).unwrap()[0], 2.7, epsilon = 1e-12);
        assert_relative_eq!(p.true_w2.unwrap().distance, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn isotropic_scaling() {
        let p = gaussian_ot_map(
            &Gaussian::standard(2),
            &Gaussian::isotropic(vec![0.0, 0.0], 4.0).unwrap(),
        )
        .unwrap();
        let y = p.true_map.apply(&[1.0, -0.5]).unwrap();
        assert_relative_eq!(y[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(y[1], -1.0, epsilon = 1e-12);
        assert_relative_eq!(p.true_w2.unwrap().squared, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn same_gaussian_is_identity() {
        let g = Gaussian::new(vec![0.3, -0.2], vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        let p = gaussian_ot_map(&g, &g).unwrap();
        let y = p.true_map.apply(&[1.5, 0.25]).unwrap();
        assert_relative_eq!(y[0], 1.5, epsilon = 1e-12);
        assert_relative_eq!(y[1], 0.25, epsilon = 1e-12);
        assert!(p.true_w2.unwrap().distance < 1e-6);
    }

    #[test]
    fn affine_inverse_composes_to_identity() {
        let (a, b) = random_gaussian_pair(3, 11).unwrap();
        let p = gaussian_ot_map(&a, &b).unwrap();
        let x = [0.2, -1.0, 0.5];
        let y = p.true_map.apply(&x).unwrap();
        let back = p.true_inverse.unwrap().apply(&y).unwrap();
        for i in 0..3 {
            assert_relative_eq!(back[i], x[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn annulus_map_values() {
        let p = annulus_reference(2).unwrap();
        assert_eq!(p.true_map.apply(&[2.0, 0.0]).unwrap(), vec![8.0, 0.0]);
        let back = p.true_inverse.as_ref().unwrap().apply(&[8.0, 0.0]).unwrap();
        assert_relative_eq!(back[0], 2.0, epsilon = 1e-14);
        assert_eq!(p.true_map.apply(&[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert!(annulus_reference(0).is_err());
    }

    #[test]
    fn annulus_distance_matches_monte_carlo() {
        let p = annulus_reference(2).unwrap();
        let xs = p.source.sample(200_000, 9).unwrap();
        let ys = p.true_map.apply_batch(&xs).unwrap();
        let mc = mean_sq_distance(&xs, &ys);
        assert_relative_eq!(p.true_w2.unwrap().squared, mc, max_relative = 0.02);
    }

    #[test]
    fn random_pair_is_reproducible() {
        let (a, b) = random_gaussian_pair(2, 42).unwrap();
        let (c, e) = random_gaussian_pair(2, 42).unwrap();
        assert_eq!(a, c);
        assert_eq!(b, e);
        assert_ne!(a, b);
        for &m in a.mean() {
            assert!((-1.0..=1.0).contains(&m));
        }
    }
}
