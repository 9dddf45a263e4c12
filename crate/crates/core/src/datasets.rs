//! Seeded synthetic instances.
//!
//! Every generator draws from a single `ChaCha8Rng` seeded with
//! `DatasetSpec::seed`, in a fixed order: source supports (row by row), target
//! supports, then per agent the noise for that agent. The same spec therefore
//! yields the same problem on every platform.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{EotError, Result};
use crate::problem::{validate_problem, EotProblem};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// Uniform cube against its fragmented pushforward, squared Euclidean costs
    /// from independently perturbed supports per agent.
    FragmentedHypercube,
    /// Two planar Gaussians, squared Euclidean base cost plus per-agent
    /// noise folded to be nonnegative.
    Gaussian,
    /// Three agents on shared planar Gaussian supports using the Euclidean,
    /// squared Euclidean and `L1^1.5` costs.
    MetricSuite,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::FragmentedHypercube => "fragmented-hypercube",
            DatasetKind::Gaussian => "gaussian",
            DatasetKind::MetricSuite => "metric-suite",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = EotError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "fragmented-hypercube" | "hypercube" => Ok(DatasetKind::FragmentedHypercube),
            "gaussian" => Ok(DatasetKind::Gaussian),
            "metric-suite" | "metrics" => Ok(DatasetKind::MetricSuite),
            other => Err(EotError::InvalidConfig(format!("unknown dataset kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub agents: usize,
    /// Dimension of the hypercube.
    pub d: usize,
    /// Number of shifted coordinates of the hypercube pushforward.
    pub m_star: usize,
    /// Noise level; `None` picks the kind's default (1 for the hypercube
    /// supports, 10 for the Gaussian costs).
    pub noise: Option<f64>,
    /// Read `noise` as a standard deviation instead of a variance.
    pub noise_is_std: bool,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, n: usize, agents: usize, seed: u64) -> Self {
        DatasetSpec { kind, n, agents, d: 10, m_star: 2, noise: None, noise_is_std: false, seed }
    }

    /// Standard deviation of the noise.
    pub fn noise_std(&self) -> f64 {
        let level = self.noise.unwrap_or(match self.kind {
            DatasetKind::FragmentedHypercube => 1.0,
            DatasetKind::Gaussian => 10.0,
            DatasetKind::MetricSuite => 0.0,
        });
        if self.noise_is_std {
            level
        } else {
            level.sqrt()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EotError::InvalidConfig(m));
        if self.n == 0 || self.agents == 0 {
            return bad(format!("dataset needs n >= 1 and N >= 1, got n = {}, N = {}", self.n, self.agents));
        }
        if self.kind == DatasetKind::FragmentedHypercube && !(1 <= self.m_star && self.m_star <= self.d) {
            return bad(format!("need 1 <= m_star <= d, got m_star = {}, d = {}", self.m_star, self.d));
        }
        if self.kind == DatasetKind::MetricSuite && self.agents != 3 {
            return bad(format!("the metric suite has exactly 3 agents, got {}", self.agents));
        }
        if let Some(x) = self.noise {
            if !(x >= 0.0 && x.is_finite()) {
                return bad(format!("noise level must be a nonnegative number, got {x}"));
            }
        }
        Ok(())
    }
}

/// Builds the problem described by `spec`.
pub fn generate<T: Scalar>(spec: &DatasetSpec) -> Result<EotProblem<T>> {
    match spec.kind {
        DatasetKind::FragmentedHypercube => gen_fragmented_hypercube(spec),
        DatasetKind::Gaussian => gen_gaussian(spec),
        DatasetKind::MetricSuite => {
            spec.validate()?;
            gen_metric_suite(spec.n, spec.seed)
        }
    }
}

fn uniform_marginal<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::one() / T::from_usize_lossy(n); n]
}

fn finish<T: Scalar>(n: usize, costs: Array3<f64>) -> Result<EotProblem<T>> {
    validate_problem(uniform_marginal(n), uniform_marginal(n), costs.mapv(T::lit))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `T(x) = x + 2 sign(x)` on the first `m_star` coordinates, identity elsewhere.
pub fn fragment(x: &[f64], m_star: usize) -> Vec<f64> {
    x.iter().enumerate().map(|(m, &v)| if m < m_star { v + 2.0 * sign(v) } else { v }).collect()
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn gen_fragmented_hypercube<T: Scalar>(spec: &DatasetSpec) -> Result<EotProblem<T>> {
    spec.validate()?;
    let (n, d) = (spec.n, spec.d);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cube = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect() };
    let xs: Vec<Vec<f64>> = (0..n).map(|_| cube(&mut rng)).collect();
    let ys: Vec<Vec<f64>> = (0..n).map(|_| fragment(&cube(&mut rng), spec.m_star)).collect();
    let std = spec.noise_std();
    let mut costs = Array3::zeros((spec.agents, n, n));
    for k in 0..spec.agents {
        let mut perturb = |pts: &[Vec<f64>]| -> Vec<Vec<f64>> {
            pts.iter()
                .map(|p| p.iter().map(|&v| { let z: f64 = StandardNormal.sample(&mut rng); v + std * z }).collect())
                .collect()
        };
        let xk = perturb(&xs);
        let yk = perturb(&ys);
        for i in 0..n {
            for j in 0..n {
                costs[[k, i, j]] = sq_dist(&xk[i], &yk[j]);
            }
        }
    }
    finish(n, costs)
}

/// Source and target supports of the planar Gaussian pair.
fn gaussian_supports(rng: &mut ChaCha8Rng, n: usize) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let mut draw = |mean: [f64; 2], cov: [[f64; 2]; 2]| -> [f64; 2] {
        let l11 = cov[0][0].sqrt();
        let l21 = cov[1][0] / l11;
        let l22 = (cov[1][1] - l21 * l21).sqrt();
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        [mean[0] + l11 * z0, mean[1] + l21 * z0 + l22 * z1]
    };
    let xs = (0..n).map(|_| draw([1.0, 1.0], [[10.0, 1.0], [1.0, 10.0]])).collect();
    let ys = (0..n).map(|_| draw([2.0, 2.0], [[1.0, -0.2], [-0.2, 1.0]])).collect();
    (xs, ys)
}

pub fn gen_gaussian<T: Scalar>(spec: &DatasetSpec) -> Result<EotProblem<T>> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (xs, ys) = gaussian_supports(&mut rng, n);
    let base = Array2::from_shape_fn((n, n), |(i, j)| sq_dist(&xs[i], &ys[j]));
    let std = spec.noise_std();
    let mut costs = Array3::zeros((spec.agents, n, n));
    for k in 0..spec.agents {
        for i in 0..n {
            for j in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                costs[[k, i, j]] = (base[[i, j]] + std * z).abs();
            }
        }
    }
    finish(n, costs)
}

/// Euclidean, squared Euclidean and `L1^1.5` costs between two point sets.
pub fn metric_costs(xs: &[[f64; 2]], ys: &[[f64; 2]]) -> [Array2<f64>; 3] {
    let shape = (xs.len(), ys.len());
    let euclid = Array2::from_shape_fn(shape, |(i, j)| sq_dist(&xs[i], &ys[j]).sqrt());
    let sq = Array2::from_shape_fn(shape, |(i, j)| sq_dist(&xs[i], &ys[j]));
    let l1 = Array2::from_shape_fn(shape, |(i, j)| {
        let s: f64 = xs[i].iter().zip(&ys[j]).map(|(a, b)| (a - b).abs()).sum();
        s.powf(1.5)
    });
    [euclid, sq, l1]
}

/// Three agents on one pair of planar Gaussian samples, one metric each.
pub fn gen_metric_suite<T: Scalar>(n: usize, seed: u64) -> Result<EotProblem<T>> {
    if n == 0 {
        return Err(EotError::InvalidConfig("metric suite needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (xs, ys) = gaussian_supports(&mut rng, n);
    let [e, s, l] = metric_costs(&xs, &ys);
    let mut costs = Array3::zeros((3, n, n));
    costs.index_axis_mut(ndarray::Axis(0), 0).assign(&e);
    costs.index_axis_mut(ndarray::Axis(0), 1).assign(&s);
    costs.index_axis_mut(ndarray::Axis(0), 2).assign(&l);
    finish(n, costs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hypercube_is_deterministic() {
        let spec = DatasetSpec::new(DatasetKind::FragmentedHypercube, 20, 3, 9);
        let a: EotProblem<f64> = generate(&spec).unwrap();
        let b: EotProblem<f64> = generate(&spec).unwrap();
        assert_eq!(a.costs(), b.costs());
        let other: EotProblem<f64> = generate(&DatasetSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.costs(), other.costs());
    }

    #[test]
    fn zero_noise_gives_identical_agents() {
        for kind in [DatasetKind::FragmentedHypercube, DatasetKind::Gaussian] {
            let spec = DatasetSpec { noise: Some(0.0), ..DatasetSpec::new(kind, 10, 3, 1) };
            let p: EotProblem<f64> = generate(&spec).unwrap();
            assert_eq!(p.cost(0), p.cost(1));
            assert_eq!(p.cost(1), p.cost(2));
        }
    }

    #[test]
    fn fragment_shift_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 10_000;
        let mean: f64 = (0..draws)
            .map(|_| {
                let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..=1.0)).collect();
                sq_dist(&x, &fragment(&x, 2))
            })
            .sum::<f64>()
            / draws as f64;
        assert!((mean - 8.0).abs() <= 0.2);
    }

    #[test]
    fn fragmented_targets_leave_the_cube() {
        let y = fragment(&[0.5, -0.25, 0.3], 2);
        assert_eq!(y, vec![2.5, -2.25, 0.3]);
    }

    #[test]
    fn gaussian_costs_are_nonnegative_and_deterministic() {
        let spec = DatasetSpec::new(DatasetKind::Gaussian, 30, 4, 5);
        let p: EotProblem<f64> = generate(&spec).unwrap();
        assert!(p.costs().iter().all(|&c| c >= 0.0));
        let q: EotProblem<f64> = generate(&spec).unwrap();
        assert_eq!(p.costs(), q.costs());
        assert!(p.a().iter().all(|&x| x == 1.0 / 30.0));
    }

    #[test]
    fn noise_reading() {
        let spec = DatasetSpec::new(DatasetKind::Gaussian, 2, 1, 0);
        assert!((spec.noise_std() - 10f64.sqrt()).abs() < 1e-15);
        assert_eq!(DatasetSpec { noise_is_std: true, ..spec }.noise_std(), 10.0);
    }

    #[test]
    fn metric_identities() {
        let xs = [[0.0, 0.0], [1.0, 2.0], [-1.5, 0.5]];
        let ys = [[1.0, 2.0], [3.0, -1.0]];
        let [e, s, l] = metric_costs(&xs, &ys);
        for i in 0..3 {
            for j in 0..2 {
                assert!((e[[i, j]].powi(2) - s[[i, j]]).abs() < 1e-12);
                assert!(l[[i, j]] >= e[[i, j]].powf(1.5) - 1e-12);
            }
        }
        assert_eq!((e[[1, 0]], s[[1, 0]], l[[1, 0]]), (0.0, 0.0, 0.0));
        assert!((l[[2, 1]] - (4.5f64 + 1.5).powf(1.5)).abs() < 1e-12);
    }

    #[test]
    fn metric_suite_shape() {
        let p: EotProblem<f64> = gen_metric_suite(4, 0).unwrap();
        assert_eq!((p.n(), p.agents()), (4, 3));
        let (e, s) = (p.cost(0), p.cost(1));
        assert!(e.iter().zip(s.iter()).all(|(x, y)| (x * x - y).abs() < 1e-9));
    }

    #[test]
    fn rejects_bad_specs() {
        let spec = DatasetSpec { m_star: 11, ..DatasetSpec::new(DatasetKind::FragmentedHypercube, 5, 2, 0) };
        assert!(generate::<f64>(&spec).is_err());
        assert!(generate::<f64>(&DatasetSpec::new(DatasetKind::Gaussian, 0, 2, 0)).is_err());
    }
}
