//! Densities with exact log-densities, their input gradients, and samplers.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::batch::SampleBatch;
use crate::diff::{BatchAdjoint, Order, ScalarField};
use crate::error::{Error, Result};
use crate::icnn::Icnn;
use crate::invert::{invert_gradient_batch, invert_gradient_batch_from, NewtonOptions};
use crate::linalg;
use crate::rng::{self, Rng};

/// Tolerance on the mixture weight sum.
pub const MIXTURE_WEIGHT_TOL: f64 = 1e-12;

/// Normal distribution with a Cholesky-factored covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: Vec<f64>,
    cov: Vec<f64>,
    chol: Vec<f64>,
    precision: Vec<f64>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::ZeroDimension);
        }
        if cov.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: cov.len(),
            });
        }
        if !linalg::is_symmetric(&cov, d, 1e-12 * (1.0 + cov.iter().fold(0.0f64, |m, v| m.max(v.abs())))) {
            return Err(Error::NotPositiveDefinite);
        }
        let (logdet, precision) =
            linalg::spd_logdet_inverse(&cov, d).ok_or(Error::NotPositiveDefinite)?;
        let chol = linalg::cholesky_lower(&cov, d)?;
        let log_norm = -0.5 * (d as f64 * libm::log(2.0 * PI) + logdet);
        Ok(Self {
            mean,
            cov,
            chol,
            precision,
            log_norm,
        })
    }

    pub fn standard(d: usize) -> Self {
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = 1.0;
        }
        Self::new(vec![0.0; d], cov).expect("identity covariance")
    }

    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = variance;
        }
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[f64] {
        &self.cov
    }

    pub fn total_variance(&self) -> f64 {
        let d = self.dim();
        (0..d).map(|i| self.cov[i * d + i]).sum()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut pd = vec![0.0; d];
        linalg::matvec(&self.precision, &diff, &mut pd);
        self.log_norm - 0.5 * linalg::dot(&diff, &pd)
    }

    /// Log-density and `grad log p(x) = -Sigma^{-1} (x - m)` written to `grad`.
    pub fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        linalg::matvec(&self.precision, &diff, grad);
        let q = linalg::dot(&diff, grad);
        grad.iter_mut().for_each(|g| *g = -*g);
        self.log_norm - 0.5 * q
    }

    pub fn sample_into(&self, rng: &mut Rng, out: &mut [f64]) {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| rng::standard_normal(rng)).collect();
        for i in 0..d {
            let mut v = self.mean[i];
            for j in 0..=i {
                v += self.chol[i * d + j] * z[j];
            }
            out[i] = v;
        }
    }
}

/// Finite mixture of Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    weights: Vec<f64>,
    components: Vec<Gaussian>,
}

impl Mixture {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                got: weights.len(),
            });
        }
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: c.dim(),
            });
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > MIXTURE_WEIGHT_TOL {
            return Err(Error::InvalidMixture(sum));
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    pub fn log_density_grad(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let d = self.dim();
        let mut logs = Vec::with_capacity(self.weights.len());
        let mut grads = Vec::with_capacity(self.weights.len() * d);
        let mut g = vec![0.0; d];
        for (w, c) in self.weights.iter().zip(&self.components) {
            logs.push(libm::log(*w) + c.log_density_grad(x, &mut g));
            grads.extend_from_slice(&g);
        }
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            if let Some(out) = grad {
                out.iter_mut().for_each(|v| *v = 0.0);
            }
            return m;
        }
        let s: f64 = logs.iter().map(|l| libm::exp(l - m)).sum();
        let lse = m + libm::log(s);
        if let Some(out) = grad {
            out.iter_mut().for_each(|v| *v = 0.0);
            for (k, l) in logs.iter().enumerate() {
                let r = libm::exp(l - lse);
                for i in 0..d {
                    out[i] += r * grads[k * d + i];
                }
            }
        }
        lse
    }

    pub fn sample_into(&self, rng: &mut Rng, out: &mut [f64]) {
        let u = rng::uniform(rng, 0.0, 1.0);
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = k;
                break;
            }
        }
        self.components[pick].sample_into(rng, out);
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        for (w, c) in self.weights.iter().zip(&self.components) {
            for i in 0..d {
                m[i] += w * c.mean()[i];
            }
        }
        m
    }

    /// Trace of the mixture covariance.
    pub fn total_variance(&self) -> f64 {
        let mean = self.mean();
        let mut second = 0.0;
        for (w, c) in self.weights.iter().zip(&self.components) {
            second += w * (c.total_variance() + linalg::norm_sq(c.mean()));
        }
        second - linalg::norm_sq(&mean)
    }
}

/// How a potential `u` relates a density to its background `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapDirection {
    /// Density `det(D^2 u(x)) g(grad u(x))`: the map `grad u` carries this
    /// density onto `g`. This is the density-estimation model; sampling
    /// inverts the map.
    Pullback,
    /// Law of `grad u(Y)` for `Y ~ g`; evaluating the density inverts the map.
    Pushforward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetPushforward {
    pub direction: MapDirection,
    pub potential: Icnn,
    pub background: Box<DensitySpec>,
}

impl NetPushforward {
    pub fn new(direction: MapDirection, potential: Icnn, background: DensitySpec) -> Result<Self> {
        if potential.dim() != background.dim() {
            return Err(Error::DimensionMismatch {
                expected: background.dim(),
                got: potential.dim(),
            });
        }
        Ok(Self {
            direction,
            potential,
            background: Box::new(background),
        })
    }

    /// Log-density of the pulled-back model and, when `grad` is given, its input gradient
    /// `grad log det D^2u(x) + D^2u(x) grad log g(grad u(x))`.
    fn pullback(&self, xs: &SampleBatch, grad: Option<&mut [f64]>) -> Result<Vec<f64>> {
        let arch = self.potential.arch();
        let params = self.potential.params();
        let d = arch.dim();
        let tape = arch.forward(params, xs, Order::Hessian)?;
        let out = arch.outputs(&tape);
        let ys = out.grad_batch();
        let mut bg_grad = vec![0.0; ys.len() * d];
        let bg_log = self.background.log_density_grad_batch(&ys, Some(&mut bg_grad))?;
        let mut seed = BatchAdjoint::zeros(Order::Hessian, d, xs.len());
        let mut logs = Vec::with_capacity(xs.len());
        for b in 0..xs.len() {
            let (logdet, inv) = pd_logdet(out.hess(b), d, b)?;
            logs.push(logdet + bg_log[b]);
            if grad.is_some() {
                seed.hess_mut(b).copy_from_slice(&inv);
                seed.grad_mut(b).copy_from_slice(&bg_grad[b * d..(b + 1) * d]);
            }
        }
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
            let mut scratch = vec![0.0; params.len()];
            arch.backward(params, &tape, &seed, &mut scratch, Some(g));
        }
        Ok(logs)
    }

    /// Log-density of `grad u(Y)`, `Y ~ g`: `log g(y) - log det D^2u(y)` at the
    /// preimage `y`. Points outside the range of the map have density zero.
    fn pushforward(
        &self,
        xs: &SampleBatch,
        hints: Option<&SampleBatch>,
        mut grad: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        let arch = self.potential.arch();
        let params = self.potential.params();
        let d = arch.dim();
        let starts = hints.unwrap_or(xs);
        let solved = invert_gradient_batch_from(arch, params, xs, starts, &NewtonOptions::default());
        let mut logs = vec![f64::NEG_INFINITY; xs.len()];
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        // preimages of the points inside the range of the map
        let mut rows = Vec::new();
        let mut ys = SampleBatch::empty(d);
        for (b, r) in solved.into_iter().enumerate() {
            match r {
                Ok(y) => {
                    rows.push(b);
                    ys.push(&y);
                }
                Err(Error::InversionFailed { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        if rows.is_empty() {
            return Ok(logs);
        }
        let tape = arch.forward(params, &ys, Order::Hessian)?;
        let out = arch.outputs(&tape);
        let mut bg_grad = vec![0.0; ys.len() * d];
        let bg_log = self.background.log_density_grad_batch(&ys, Some(&mut bg_grad))?;
        let mut seed = BatchAdjoint::zeros(Order::Hessian, d, ys.len());
        let mut inverses = Vec::with_capacity(ys.len());
        for (k, &b) in rows.iter().enumerate() {
            let (logdet, inv) = pd_logdet(out.hess(k), d, b)?;
            logs[b] = bg_log[k] - logdet;
            seed.hess_mut(k).copy_from_slice(&inv);
            inverses.push(inv);
        }
        if let Some(g) = grad {
            let mut scratch = vec![0.0; params.len()];
            let mut dlogdet = vec![0.0; ys.len() * d];
            arch.backward(params, &tape, &seed, &mut scratch, Some(&mut dlogdet));
            for (k, &b) in rows.iter().enumerate() {
                let rhs: Vec<f64> = bg_grad[k * d..(k + 1) * d]
                    .iter()
                    .zip(&dlogdet[k * d..(k + 1) * d])
                    .map(|(a, c)| a - c)
                    .collect();
                linalg::matvec(&inverses[k], &rhs, &mut g[b * d..(b + 1) * d]);
            }
        }
        Ok(logs)
    }
}

fn pd_logdet(hess: &[f64], d: usize, sample: usize) -> Result<(f64, Vec<f64>)> {
    linalg::spd_logdet_inverse(hess, d).ok_or_else(|| Error::NonPdHessian {
        sample,
        min_eigenvalue: linalg::min_eigenvalue(hess, d),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensitySpec {
    StandardGaussian(usize),
    Gaussian(Gaussian),
    Mixture(Mixture),
    /// Radial density `g((x.x) x) * 3 (x.x)^d`: the preimage of the standard
    /// Gaussian under `x -> (x.x) x`.
    Annulus(usize),
    NetPushforward(NetPushforward),
}

impl DensitySpec {
    pub fn dim(&self) -> usize {
        match self {
            DensitySpec::StandardGaussian(d) | DensitySpec::Annulus(d) => *d,
            DensitySpec::Gaussian(g) => g.dim(),
            DensitySpec::Mixture(m) => m.dim(),
            DensitySpec::NetPushforward(n) => n.potential.dim(),
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.log_density_grad(x, None)
    }

    pub fn log_density_grad(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let logs = self.log_density_grad_batch(&SampleBatch::single(x), grad)?;
        Ok(logs[0])
    }

    pub fn log_density_batch(&self, xs: &SampleBatch) -> Result<Vec<f64>> {
        self.log_density_grad_batch(xs, None)
    }

    /// Log-densities of every row; when `grad` is given (length `n * d`),
    /// also the input gradients of the log-density.
    pub fn log_density_grad_batch(
        &self,
        xs: &SampleBatch,
        grad: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        self.log_density_grad_batch_hinted(xs, None, grad)
    }

    /// As [`log_density_grad_batch`](Self::log_density_grad_batch), with
    /// per-row starting points for densities that invert a map internally.
    pub fn log_density_grad_batch_hinted(
        &self,
        xs: &SampleBatch,
        hints: Option<&SampleBatch>,
        mut grad: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        let d = self.dim();
        if xs.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: xs.dim(),
            });
        }
        if let Some(h) = hints {
            if h.len() != xs.len() || h.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: xs.len(),
                    got: h.len(),
                });
            }
        }
        match self {
            DensitySpec::StandardGaussian(_) => {
                let c = -0.5 * d as f64 * libm::log(2.0 * PI);
                Ok(xs
                    .rows()
                    .enumerate()
                    .map(|(b, x)| {
                        if let Some(g) = grad.as_deref_mut() {
                            for i in 0..d {
                                g[b * d + i] = -x[i];
                            }
                        }
                        c - 0.5 * linalg::norm_sq(x)
                    })
                    .collect())
            }
            DensitySpec::Gaussian(gauss) => Ok(xs
                .rows()
                .enumerate()
                .map(|(b, x)| match grad.as_deref_mut() {
                    Some(g) => gauss.log_density_grad(x, &mut g[b * d..(b + 1) * d]),
                    None => gauss.log_density(x),
                })
                .collect()),
            DensitySpec::Mixture(m) => Ok(xs
                .rows()
                .enumerate()
                .map(|(b, x)| {
                    m.log_density_grad(x, grad.as_deref_mut().map(|g| &mut g[b * d..(b + 1) * d]))
                })
                .collect()),
            DensitySpec::Annulus(_) => {
                let c = -0.5 * d as f64 * libm::log(2.0 * PI) + libm::log(3.0);
                Ok(xs
                    .rows()
                    .enumerate()
                    .map(|(b, x)| {
                        let r2 = linalg::norm_sq(x);
                        if let Some(g) = grad.as_deref_mut() {
                            for i in 0..d {
                                g[b * d + i] =
                                    -3.0 * r2 * r2 * x[i] + 2.0 * d as f64 * x[i] / r2;
                            }
                        }
                        c - 0.5 * r2 * r2 * r2 + d as f64 * libm::log(r2)
                    })
                    .collect())
            }
            DensitySpec::NetPushforward(n) => match n.direction {
                MapDirection::Pullback => n.pullback(xs, grad),
                MapDirection::Pushforward => n.pushforward(xs, hints, grad),
            },
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleBatch> {
        self.sample_with(&mut rng::seeded(seed), n)
    }

    pub fn sample_with(&self, rng: &mut Rng, n: usize) -> Result<SampleBatch> {
        let d = self.dim();
        let mut out = SampleBatch::zeros(d, n);
        match self {
            DensitySpec::StandardGaussian(_) => {
                for b in 0..n {
                    for v in out.row_mut(b) {
                        *v = rng::standard_normal(rng);
                    }
                }
            }
            DensitySpec::Gaussian(g) => {
                for b in 0..n {
                    g.sample_into(rng, out.row_mut(b));
                }
            }
            DensitySpec::Mixture(m) => {
                for b in 0..n {
                    m.sample_into(rng, out.row_mut(b));
                }
            }
            DensitySpec::Annulus(_) => {
                for b in 0..n {
                    let row = out.row_mut(b);
                    for v in row.iter_mut() {
                        *v = rng::standard_normal(rng);
                    }
                    let scale = libm::pow(linalg::norm_sq(row), -1.0 / 3.0);
                    row.iter_mut().for_each(|v| *v *= scale);
                }
            }
            DensitySpec::NetPushforward(net) => {
                let base = net.background.sample_with(rng, n)?;
                out = match net.direction {
                    MapDirection::Pushforward => net.potential.transport_batch(&base)?,
                    MapDirection::Pullback => {
                        let arch = net.potential.arch();
                        let mut data = Vec::with_capacity(n * d);
                        for x in invert_gradient_batch(arch, net.potential.params(), &base, &NewtonOptions::default()) {
                            data.extend(x?);
                        }
                        SampleBatch::new(d, data)?
                    }
                };
            }
        }
        Ok(out)
    }

    /// Trace of the covariance when known in closed form.
    pub fn analytic_total_variance(&self) -> Option<f64> {
        match self {
            DensitySpec::StandardGaussian(d) => Some(*d as f64),
            DensitySpec::Gaussian(g) => Some(g.total_variance()),
            DensitySpec::Mixture(m) => Some(m.total_variance()),
            _ => None,
        }
    }

    pub fn as_gaussian(&self) -> Option<Gaussian> {
        match self {
            DensitySpec::StandardGaussian(d) => Some(Gaussian::standard(*d)),
            DensitySpec::Gaussian(g) => Some(g.clone()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icnn::IcnnArch;
    use approx::assert_relative_eq;

    fn identity_potential(d: usize) -> Icnn {
        Icnn::zeros(IcnnArch::new(d, &[2], 1.1, 1.0).unwrap())
    }

    #[test]
    fn standard_gaussian_normalizer() {
        let v = DensitySpec::StandardGaussian(1).log_density(&[0.0]).unwrap();
        assert_relative_eq!(v, -0.918938533204673, epsilon = 1e-12);
    }

    #[test]
    fn annulus_at_unit_radius() {
        let v = DensitySpec::Annulus(2).log_density(&[1.0, 0.0]).unwrap();
        assert_relative_eq!(v, -libm::log(2.0 * PI) - 0.5 + libm::log(3.0), epsilon = 1e-14);
    }

    #[test]
    fn identity_pushforward_keeps_background() {
        let bg = DensitySpec::Gaussian(
            Gaussian::new(vec![0.5, -1.0], vec![2.0, 0.3, 0.3, 1.0]).unwrap(),
        );
        for dir in [MapDirection::Pullback, MapDirection::Pushforward] {
            let spec = DensitySpec::NetPushforward(
                NetPushforward::new(dir, identity_potential(2), bg.clone()).unwrap(),
            );
            let x = [0.3, 0.9];
            let mut g1 = [0.0; 2];
            let mut g2 = [0.0; 2];
            let a = spec.log_density_grad(&x, Some(&mut g1)).unwrap();
            let b = bg.log_density_grad(&x, Some(&mut g2)).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-12);
            assert_relative_eq!(g1[0], g2[0], epsilon = 1e-10);
            assert_relative_eq!(g1[1], g2[1], epsilon = 1e-10);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = Icnn::init_with(2, &[8, 8], 1.1, 0.1, 3, 0.5).unwrap();
        let mixture = Mixture::new(
            vec![0.3, 0.7],
            vec![
                Gaussian::isotropic(vec![1.0, 0.0], 0.5).unwrap(),
                Gaussian::new(vec![-1.0, 0.5], vec![1.0, 0.2, 0.2, 0.4]).unwrap(),
            ],
        )
        .unwrap();
        let specs = [
            DensitySpec::StandardGaussian(2),
            DensitySpec::Gaussian(Gaussian::new(vec![0.1, 0.2], vec![1.5, -0.4, -0.4, 0.8]).unwrap()),
            DensitySpec::Mixture(mixture.clone()),
            DensitySpec::Annulus(2),
            DensitySpec::NetPushforward(
                NetPushforward::new(MapDirection::Pullback, net.clone(), DensitySpec::Mixture(mixture.clone()))
                    .unwrap(),
            ),
            DensitySpec::NetPushforward(
                NetPushforward::new(MapDirection::Pushforward, net, DensitySpec::StandardGaussian(2))
                    .unwrap(),
            ),
        ];
        let x = [0.6, -0.35];
        let h = 1e-6;
        for spec in &specs {
            let mut g = [0.0; 2];
            spec.log_density_grad(&x, Some(&mut g)).unwrap();
            for i in 0..2 {
                let mut a = x;
                let mut b = x;
                a[i] += h;
                b[i] -= h;
                let fd = (spec.log_density(&a).unwrap() - spec.log_density(&b).unwrap()) / (2.0 * h);
                assert_relative_eq!(g[i], fd, max_relative = 1e-6, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert_eq!(
            Gaussian::new(vec![0.0, 0.0], vec![1.0, 2.0, 2.0, 1.0]).unwrap_err(),
            Error::NotPositiveDefinite
        );
        let g = Gaussian::standard(1);
        assert!(matches!(
            Mixture::new(vec![0.5, 0.6], vec![g.clone(), g.clone()]),
            Err(Error::InvalidMixture(_))
        ));
        assert!(Mixture::new(vec![-0.5, 1.5], vec![g.clone(), g]).is_err());
    }

    #[test]
    fn non_pd_pullback_reports_eigenvalue() {
        // zero network without floor has a zero Hessian
        let flat = Icnn::zeros(IcnnArch::new(2, &[2], 1.1, 0.0).unwrap());
        let spec = DensitySpec::NetPushforward(
            NetPushforward::new(MapDirection::Pullback, flat, DensitySpec::StandardGaussian(2)).unwrap(),
        );
        match spec.log_density(&[0.1, 0.2]) {
            Err(Error::NonPdHessian { sample: 0, min_eigenvalue }) => assert_eq!(min_eigenvalue, 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let spec = DensitySpec::Annulus(3);
        assert_eq!(spec.sample(50, 4).unwrap(), spec.sample(50, 4).unwrap());
        assert_ne!(spec.sample(50, 4).unwrap(), spec.sample(50, 5).unwrap());
        assert!(spec.sample(0, 1).unwrap().is_empty());
    }
}
