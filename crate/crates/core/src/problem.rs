//! Problem, dual-state and plan types shared by all solvers, plus the
//! default parameter schedule.

use ndarray::{Array2, Array3, Axis};

use crate::error::{EotError, Result};
use crate::scalar::{ordered_sum, Scalar};

/// Input sums may come from text files, so they are checked loosely.
pub const INPUT_SIMPLEX_TOL: f64 = 1e-9;
/// Internally produced simplex points are renormalized to this accuracy.
pub const INTERNAL_SIMPLEX_TOL: f64 = 1e-12;
/// L1 tolerance on the coupling constraints for a plan to count as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-10;
/// Smallest regularization the default schedule will hand out.
pub const ETA_FLOOR: f64 = 1e-6;

/// A validated equitable-transport instance: marginals `a`, `b` and one
/// `n x n` cost matrix per agent, stored as an `(N, n, n)` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct EotProblem<T> {
    a: Vec<T>,
    b: Vec<T>,
    costs: Array3<T>,
    c_inf: T,
    iota: T,
}

impl<T: Scalar> EotProblem<T> {
    pub fn a(&self) -> &[T] {
        &self.a
    }

    pub fn b(&self) -> &[T] {
        &self.b
    }

    /// Cost tensor indexed `[agent, row, column]`.
    pub fn costs(&self) -> &Array3<T> {
        &self.costs
    }

    pub fn cost(&self, k: usize) -> ndarray::ArrayView2<'_, T> {
        self.costs.index_axis(Axis(0), k)
    }

    /// Largest absolute cost entry over all agents.
    pub fn c_inf(&self) -> T {
        self.c_inf
    }

    /// `min_j log b_j`.
    pub fn iota(&self) -> T {
        self.iota
    }

    /// Support size `n`.
    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// Number of agents `N`.
    pub fn agents(&self) -> usize {
        self.costs.len_of(Axis(0))
    }

    /// True when every cost entry is `>= 0`, or every entry is `<= 0`.
    pub fn costs_same_sign(&self) -> bool {
        self.costs.iter().all(|&c| c >= T::zero()) || self.costs.iter().all(|&c| c <= T::zero())
    }

    pub fn from_matrices(a: Vec<T>, b: Vec<T>, costs: &[Array2<T>]) -> Result<Self> {
        let n = a.len();
        if costs.is_empty() {
            return Err(EotError::ShapeMismatch("at least one cost matrix is required".into()));
        }
        let mut tensor = Array3::zeros((costs.len(), n, n));
        for (k, c) in costs.iter().enumerate() {
            if c.dim() != (n, n) {
                return Err(EotError::ShapeMismatch(format!(
                    "cost matrix {k} has shape {:?}, expected ({n}, {n})",
                    c.dim()
                )));
            }
            tensor.index_axis_mut(Axis(0), k).assign(c);
        }
        validate_problem(a, b, tensor)
    }

    /// Copy of the problem with the cost tensor replaced.
    pub fn with_costs(&self, costs: Array3<T>) -> Result<Self> {
        validate_problem(self.a.clone(), self.b.clone(), costs)
    }
}

/// Checks the marginals and costs and precomputes `c_inf` and `iota`.
pub fn validate_problem<T: Scalar>(a: Vec<T>, b: Vec<T>, costs: Array3<T>) -> Result<EotProblem<T>> {
    let n = a.len();
    let (agents, rows, cols) = costs.dim();
    if n == 0 || agents == 0 {
        return Err(EotError::ShapeMismatch(format!("need n >= 1 and N >= 1, got n = {n}, N = {agents}")));
    }
    if b.len() != n {
        return Err(EotError::ShapeMismatch(format!("a has length {n} but b has length {}", b.len())));
    }
    if rows != n || cols != n {
        return Err(EotError::ShapeMismatch(format!(
            "cost tensor has shape ({agents}, {rows}, {cols}), expected ({agents}, {n}, {n})"
        )));
    }
    if a.iter().chain(&b).chain(costs.iter()).any(|x| !x.is_finite()) {
        return Err(EotError::NonFinite { iter: None });
    }
    if let Some((index, &value)) = b.iter().enumerate().find(|(_, &v)| v <= T::zero()) {
        return Err(EotError::NonPositiveB { index, value: value.to_f64_lossy() });
    }
    let tol = T::tol(INPUT_SIMPLEX_TOL);
    for (which, v) in [("a", &a), ("b", &b)] {
        let sum = ordered_sum(v.iter().copied());
        let min = v.iter().copied().fold(T::infinity(), T::min);
        if (sum - T::one()).abs() > tol || min < T::zero() {
            return Err(EotError::NotSimplex { which, sum: sum.to_f64_lossy(), min: min.to_f64_lossy() });
        }
    }
    let c_inf = costs.iter().fold(T::zero(), |m, &c| m.max(c.abs()));
    let iota = b.iter().fold(T::infinity(), |m, &v| m.min(v.ln()));
    Ok(EotProblem { a, b, costs, c_inf, iota })
}

/// Rescales a nonnegative vector so it sums to one.
pub(crate) fn renormalize<T: Scalar>(x: &mut [T]) {
    let s = ordered_sum(x.iter().copied());
    if s > T::zero() && (s - T::one()).abs() > T::zero() {
        for xi in x.iter_mut() {
            *xi /= s;
        }
    }
}

/// Dual variables `(f, g, lambda)` plus the extrapolation memory PAME needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState<T> {
    pub f: Vec<T>,
    pub g: Vec<T>,
    pub lambda: Vec<T>,
    pub lambda_prev: Vec<T>,
    pub y: Vec<T>,
}

impl<T: Scalar> DualState<T> {
    /// `f = g = 1`, `lambda` uniform, and `lambda_prev = y = lambda`.
    pub fn initial(problem: &EotProblem<T>) -> Self {
        let n = problem.n();
        let agents = problem.agents();
        let lambda = vec![T::one() / T::from_usize_lossy(agents); agents];
        DualState {
            f: vec![T::one(); n],
            g: vec![T::one(); n],
            lambda_prev: lambda.clone(),
            y: lambda.clone(),
            lambda,
        }
    }

    /// State with explicit potentials and weights; memory terms copy `lambda`.
    pub fn new(f: Vec<T>, g: Vec<T>, lambda: Vec<T>) -> Result<Self> {
        if f.len() != g.len() {
            return Err(EotError::ShapeMismatch(format!("f has length {} but g has length {}", f.len(), g.len())));
        }
        check_simplex("lambda", &lambda, T::tol(INPUT_SIMPLEX_TOL))?;
        Ok(DualState { f, g, lambda_prev: lambda.clone(), y: lambda.clone(), lambda })
    }

    pub(crate) fn check_shapes(&self, problem: &EotProblem<T>) -> Result<()> {
        let (n, agents) = (problem.n(), problem.agents());
        if self.f.len() != n || self.g.len() != n || self.lambda.len() != agents {
            return Err(EotError::ShapeMismatch(format!(
                "dual state sized (f: {}, g: {}, lambda: {}) for a problem with n = {n}, N = {agents}",
                self.f.len(),
                self.g.len(),
                self.lambda.len()
            )));
        }
        if self.f.iter().chain(&self.g).chain(&self.lambda).any(|x| x.is_nan() || *x == T::infinity()) {
            return Err(EotError::NonFinite { iter: None });
        }
        Ok(())
    }
}

pub(crate) fn check_simplex<T: Scalar>(which: &'static str, v: &[T], tol: T) -> Result<()> {
    let sum = ordered_sum(v.iter().copied());
    let min = v.iter().copied().fold(T::infinity(), T::min);
    if v.is_empty() || (sum - T::one()).abs() > tol || min < T::zero() || !sum.is_finite() {
        return Err(EotError::NotSimplex { which, sum: sum.to_f64_lossy(), min: min.to_f64_lossy() });
    }
    Ok(())
}

/// `N` stacked nonnegative `n x n` transport plans.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanTensor<T> {
    pi: Array3<T>,
    feasible: bool,
}

impl<T: Scalar> PlanTensor<T> {
    /// Wraps a tensor without checking the coupling constraints.
    pub fn unchecked(pi: Array3<T>) -> Self {
        PlanTensor { pi, feasible: false }
    }

    /// Wraps a tensor and records whether `sum_k pi^k` couples `a` and `b`.
    pub fn checked(pi: Array3<T>, problem: &EotProblem<T>) -> Self {
        let mut plan = PlanTensor { pi, feasible: false };
        plan.feasible = plan.is_coupling_of(problem, T::tol(FEASIBILITY_TOL));
        plan
    }

    pub fn pi(&self) -> &Array3<T> {
        &self.pi
    }

    pub fn into_inner(self) -> Array3<T> {
        self.pi
    }

    pub fn agent(&self, k: usize) -> ndarray::ArrayView2<'_, T> {
        self.pi.index_axis(Axis(0), k)
    }

    pub fn agents(&self) -> usize {
        self.pi.len_of(Axis(0))
    }

    pub fn n(&self) -> usize {
        self.pi.len_of(Axis(1))
    }

    pub fn is_feasible(&self) -> bool {
        self.feasible
    }

    /// Row sums of `sum_k pi^k`.
    pub fn row_marginal(&self) -> Vec<T> {
        let (agents, n, _) = self.pi.dim();
        let mut r = vec![T::zero(); n];
        for k in 0..agents {
            for (i, ri) in r.iter_mut().enumerate() {
                for j in 0..n {
                    *ri += self.pi[[k, i, j]];
                }
            }
        }
        r
    }

    /// Column sums of `sum_k pi^k`.
    pub fn col_marginal(&self) -> Vec<T> {
        let (agents, n, _) = self.pi.dim();
        let mut c = vec![T::zero(); n];
        for k in 0..agents {
            for i in 0..n {
                for (j, cj) in c.iter_mut().enumerate() {
                    *cj += self.pi[[k, i, j]];
                }
            }
        }
        c
    }

    /// `<pi^k, C^k>` for every agent.
    pub fn agent_costs(&self, problem: &EotProblem<T>) -> Vec<T> {
        (0..self.agents())
            .map(|k| ordered_sum(self.agent(k).iter().zip(problem.cost(k).iter()).map(|(&p, &c)| p * c)))
            .collect()
    }

    pub fn is_coupling_of(&self, problem: &EotProblem<T>, tol: T) -> bool {
        if self.pi.dim() != problem.costs().dim() || self.pi.iter().any(|&p| !(p >= T::zero()) || !p.is_finite()) {
            return false;
        }
        let row = crate::scalar::l1_dist(&self.row_marginal(), problem.a());
        let col = crate::scalar::l1_dist(&self.col_marginal(), problem.b());
        row <= tol && col <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Pam,
    Pame,
    Apga,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Pam => "pam",
            Algorithm::Pame => "pame",
            Algorithm::Apga => "apga",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = EotError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pam" => Ok(Algorithm::Pam),
            "pame" => Ok(Algorithm::Pame),
            "apga" => Ok(Algorithm::Apga),
            other => Err(EotError::InvalidConfig(format!("unknown algorithm `{other}`"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Solver parameters. Residual thresholds left as `None` are derived from
/// `epsilon`, `eta`, `theta` and the problem's `c_inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<T> {
    /// Target accuracy.
    pub epsilon: T,
    /// Entropic regularization.
    pub eta: T,
    /// Step size of the lambda block.
    pub tau: T,
    /// Extrapolation parameter (PAME).
    pub theta: T,
    pub max_iters: usize,
    /// Override for the column-residual threshold `||c^t - b||_1`.
    pub col_tol: Option<T>,
    /// Override for the lambda-step threshold (`||lambda^T - lambda^{T-1}||_2` for PAM,
    /// `||lambda^{T-1} - lambda^{T-2}||_2` for PAME).
    pub lambda_tol: Option<T>,
    /// Override for the PAME threshold on `||lambda^T - y^T||_2`.
    pub y_tol: Option<T>,
    /// Stop when `|F^{t+1} - F^t|` falls below this. Zero disables the check.
    pub stagnation_tol: T,
    /// Stop as soon as the residual thresholds are met. Disable to run exactly `max_iters`.
    pub stop_on_residuals: bool,
    /// Record every `trace_every`-th iteration (the last one is always kept).
    pub trace_every: usize,
    /// Lipschitz estimate for APGA; defaults to `3 max(1, c_inf^2) / eta`.
    pub lipschitz: Option<T>,
    pub seed: u64,
}

impl<T: Scalar> SolverConfig<T> {
    /// Config with the given `eta` and `tau` and library defaults elsewhere.
    pub fn with_params(epsilon: T, eta: T, tau: T) -> Self {
        SolverConfig {
            epsilon,
            eta,
            tau,
            theta: T::lit(0.1),
            max_iters: 100_000,
            col_tol: None,
            lambda_tol: None,
            y_tol: None,
            stagnation_tol: T::lit(1e-12),
            stop_on_residuals: true,
            trace_every: 1,
            lipschitz: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(EotError::InvalidConfig(msg.to_string()));
        if !(self.eta > T::zero()) || !self.eta.is_finite() {
            return bad("eta must be positive");
        }
        if !(self.tau > T::zero()) || !self.tau.is_finite() {
            return bad("tau must be positive");
        }
        if !(self.theta > T::zero() && self.theta < T::one()) {
            return bad("theta must lie in (0, 1)");
        }
        if !(self.epsilon > T::zero()) {
            return bad("epsilon must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if self.trace_every == 0 {
            return bad("trace_every must be at least 1");
        }
        if let Some(l) = self.lipschitz {
            if !(l > T::zero()) {
                return bad("lipschitz estimate must be positive");
            }
        }
        Ok(())
    }

    /// Stopping thresholds for `problem` under this configuration.
    pub fn thresholds(&self, problem: &EotProblem<T>) -> StopThresholds<T> {
        let (eps, eta, theta) = (self.epsilon, self.eta, self.theta);
        let c = problem.c_inf();
        let c2 = c * c;
        let lit = T::lit;
        StopThresholds {
            col: self.col_tol.unwrap_or(eps / (lit(6.0) * (lit(6.0) * c - eta * problem.iota()))),
            lambda_step: self.lambda_tol.unwrap_or(eta * eps / (lit(18.0) * c2)),
            lambda_prev_step: self.lambda_tol.unwrap_or(eta * eps / (lit(60.0) * (T::one() - theta) * c2)),
            lambda_y: self.y_tol.unwrap_or(eta * eps / (lit(42.0) * c2)),
        }
    }
}

/// Residual thresholds used by the stopping tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopThresholds<T> {
    /// `||c^{T-1} - b||_1`.
    pub col: T,
    /// PAM: `||lambda^T - lambda^{T-1}||_2`.
    pub lambda_step: T,
    /// PAME: `||lambda^{T-1} - lambda^{T-2}||_2`.
    pub lambda_prev_step: T,
    /// PAME: `||lambda^T - y^T||_2`.
    pub lambda_y: T,
}

/// Parameter schedule tied to the target accuracy:
/// `eta = min(eps / (3 (log(n^2 N) + 1)), c_inf)`, `tau = eta / c_inf^2`
/// (halved for PAME), `theta = 0.1`.
pub fn default_schedule<T: Scalar>(problem: &EotProblem<T>, epsilon: T, algorithm: Algorithm) -> Result<SolverConfig<T>> {
    if !(epsilon > T::zero()) {
        return Err(EotError::InvalidConfig("epsilon must be positive".into()));
    }
    let c = problem.c_inf();
    if c == T::zero() {
        return Err(EotError::ZeroCost);
    }
    let n = T::from_usize_lossy(problem.n());
    let agents = T::from_usize_lossy(problem.agents());
    let mut eta = (epsilon / (T::lit(3.0) * ((n * n * agents).ln() + T::one()))).min(c);
    if eta < T::lit(ETA_FLOOR) {
        log::warn!("schedule gives eta = {eta:e}; clamping to {ETA_FLOOR:e}");
        eta = T::lit(ETA_FLOOR);
    }
    let tau = match algorithm {
        Algorithm::Pame => eta / (T::lit(2.0) * c * c),
        Algorithm::Pam | Algorithm::Apga => eta / (c * c),
    };
    Ok(SolverConfig::with_params(epsilon, eta, tau))
}
