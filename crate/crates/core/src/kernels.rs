//! Log-domain evaluation of the entropic dual.
//!
//! Every quantity here derives from the implicit grid
//! `L[k, i, j] = (f_i + g_j - lambda_k C^k_ij) / eta`. Exponents reach
//! `c_inf / eta`, far beyond the range of `exp`, so the grid is always
//! shifted by its global maximum before exponentiation and the plan is
//! normalized in the log domain. Reductions run in a fixed sequential order
//! so repeated runs produce identical bits.

use ndarray::Array3;

use crate::error::{EotError, Result};
use crate::problem::{renormalize, DualState, EotProblem, PlanTensor};
use crate::scalar::{dot, l1_dist, ordered_sum, Scalar};

/// Materializes `L[k, i, j] = (f_i + g_j - lambda_k C^k_ij) / eta`.
pub fn log_potentials<T: Scalar>(f: &[T], g: &[T], lambda: &[T], problem: &EotProblem<T>, eta: T) -> Result<Array3<T>> {
    let (agents, n, _) = problem.costs().dim();
    if f.len() != n || g.len() != n || lambda.len() != agents {
        return Err(EotError::ShapeMismatch(format!(
            "potentials sized (f: {}, g: {}, lambda: {}) for n = {n}, N = {agents}",
            f.len(),
            g.len(),
            lambda.len()
        )));
    }
    if !(eta > T::zero()) || !eta.is_finite() {
        return Err(EotError::InvalidConfig("eta must be positive and finite".into()));
    }
    let costs = problem.costs();
    let inv_eta = T::one() / eta;
    let grid = Array3::from_shape_fn((agents, n, n), |(k, i, j)| (f[i] + g[j] - lambda[k] * costs[[k, i, j]]) * inv_eta);
    if grid.iter().any(|x| x.is_nan() || *x == T::infinity()) {
        return Err(EotError::NonFinite { iter: None });
    }
    Ok(grid)
}

fn global_logsumexp<T: Scalar>(grid: &Array3<T>) -> Result<T> {
    let m = grid.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return Err(EotError::NonFinite { iter: None });
    }
    let s = ordered_sum(grid.iter().map(|&x| (x - m).exp()));
    Ok(m + s.ln())
}

/// Per-row log-sum-exp over `(k, j)`.
pub(crate) fn row_logsumexp<T: Scalar>(grid: &Array3<T>) -> Vec<T> {
    let (agents, n, _) = grid.dim();
    (0..n)
        .map(|i| {
            let mut m = T::neg_infinity();
            for k in 0..agents {
                for j in 0..n {
                    m = m.max(grid[[k, i, j]]);
                }
            }
            let mut s = T::zero();
            for k in 0..agents {
                for j in 0..n {
                    s += (grid[[k, i, j]] - m).exp();
                }
            }
            m + s.ln()
        })
        .collect()
}

/// Per-column log-sum-exp over `(k, i)`.
pub(crate) fn col_logsumexp<T: Scalar>(grid: &Array3<T>) -> Vec<T> {
    let (agents, n, _) = grid.dim();
    let mut m = vec![T::neg_infinity(); n];
    for k in 0..agents {
        for i in 0..n {
            for j in 0..n {
                m[j] = m[j].max(grid[[k, i, j]]);
            }
        }
    }
    let mut s = vec![T::zero(); n];
    for k in 0..agents {
        for i in 0..n {
            for j in 0..n {
                s[j] += (grid[[k, i, j]] - m[j]).exp();
            }
        }
    }
    m.iter().zip(&s).map(|(&mj, &sj)| mj + sj.ln()).collect()
}

/// Everything derived from one normalized-plan pass at a dual point.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    /// `log sum_k ||zeta^k||_1`.
    pub log_mass: T,
    /// Dual objective `F`.
    pub objective: T,
    pub plan: PlanTensor<T>,
    /// Row sums of `sum_k pi^k`.
    pub row: Vec<T>,
    /// Column sums of `sum_k pi^k`.
    pub col: Vec<T>,
    /// `<pi^k, C^k>`, which is also `grad_lambda F`.
    pub agent_costs: Vec<T>,
}

impl<T: Scalar> Evaluation<T> {
    pub fn grad_f(&self, problem: &EotProblem<T>) -> Vec<T> {
        problem.a().iter().zip(&self.row).map(|(&a, &r)| a - r).collect()
    }

    pub fn grad_g(&self, problem: &EotProblem<T>) -> Vec<T> {
        problem.b().iter().zip(&self.col).map(|(&b, &c)| b - c).collect()
    }

    pub fn grad_lambda(&self) -> Vec<T> {
        self.agent_costs.clone()
    }
}

/// Evaluates `F`, the normalized plan, its marginals and agent costs at `(f, g, lambda)`.
pub fn evaluate_at<T: Scalar>(f: &[T], g: &[T], lambda: &[T], problem: &EotProblem<T>, eta: T) -> Result<Evaluation<T>> {
    let mut grid = log_potentials(f, g, lambda, problem, eta)?;
    let log_mass = global_logsumexp(&grid)?;
    grid.mapv_inplace(|x| (x - log_mass).exp());
    let (agents, n, _) = grid.dim();
    let mut row = vec![T::zero(); n];
    let mut col = vec![T::zero(); n];
    let mut agent_costs = vec![T::zero(); agents];
    let costs = problem.costs();
    for k in 0..agents {
        let mut acc = T::zero();
        for i in 0..n {
            for j in 0..n {
                let p = grid[[k, i, j]];
                row[i] += p;
                col[j] += p;
                acc += p * costs[[k, i, j]];
            }
        }
        agent_costs[k] = acc;
    }
    let objective = dot(f, problem.a()) + dot(g, problem.b()) - eta * log_mass - eta;
    if !objective.is_finite() {
        return Err(EotError::NonFinite { iter: None });
    }
    Ok(Evaluation { log_mass, objective, plan: PlanTensor::unchecked(grid), row, col, agent_costs })
}

pub fn evaluate<T: Scalar>(state: &DualState<T>, problem: &EotProblem<T>, eta: T) -> Result<Evaluation<T>> {
    state.check_shapes(problem)?;
    evaluate_at(&state.f, &state.g, &state.lambda, problem, eta)
}

/// `log sum_k ||zeta^k||_1`.
pub fn log_mass<T: Scalar>(state: &DualState<T>, problem: &EotProblem<T>, eta: T) -> Result<T> {
    state.check_shapes(problem)?;
    let grid = log_potentials(&state.f, &state.g, &state.lambda, problem, eta)?;
    global_logsumexp(&grid)
}

pub fn dual_objective_at<T: Scalar>(f: &[T], g: &[T], lambda: &[T], problem: &EotProblem<T>, eta: T) -> Result<T> {
    let grid = log_potentials(f, g, lambda, problem, eta)?;
    let lm = global_logsumexp(&grid)?;
    let value = dot(f, problem.a()) + dot(g, problem.b()) - eta * lm - eta;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(EotError::NonFinite { iter: None })
    }
}

/// `F(f, g, lambda) = <f, a> + <g, b> - eta log sum_k ||zeta^k||_1 - eta`.
pub fn dual_objective<T: Scalar>(state: &DualState<T>, problem: &EotProblem<T>, eta: T) -> Result<T> {
    state.check_shapes(problem)?;
    dual_objective_at(&state.f, &state.g, &state.lambda, problem, eta)
}

/// `pi^k = zeta^k / sum_k ||zeta^k||_1`.
pub fn plan_from_duals<T: Scalar>(state: &DualState<T>, problem: &EotProblem<T>, eta: T) -> Result<PlanTensor<T>> {
    Ok(evaluate(state, problem, eta)?.plan)
}

pub fn grad_f<T: Scalar>(state: &DualState<T>, problem: &EotProblem<T>, eta: T) -> Result<Vec<T>> {
    Ok(evaluate(state, problem, eta)?.grad_f(problem))
}

pub fn grad_g<T: Scalar>(state: &DualState<T>, problem: &EotProblem<T>, eta: T) -> Result<Vec<T>> {
    Ok(evaluate(state, problem, eta)?.grad_g(problem))
}

pub fn grad_lambda<T: Scalar>(state: &DualState<T>, problem: &EotProblem<T>, eta: T) -> Result<Vec<T>> {
    Ok(evaluate(state, problem, eta)?.grad_lambda())
}

/// Euclidean projection onto the probability simplex by the sort-and-threshold rule.
pub fn project_simplex<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(EotError::ShapeMismatch("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EotError::NonFinite { iter: None });
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|x, y| y.partial_cmp(x).expect("finite"));
    let mut cumsum = T::zero();
    let mut threshold = T::zero();
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - T::one()) / T::from_usize_lossy(i + 1);
        if u - candidate > T::zero() {
            threshold = candidate;
        }
    }
    let mut x: Vec<T> = v.iter().map(|&vi| (vi - threshold).max(T::zero())).collect();
    renormalize(&mut x);
    Ok(x)
}

/// `(||r(sum_k pi^k) - a||_1, ||c(sum_k pi^k) - b||_1)`.
pub fn marginal_residual<T: Scalar>(plan: &PlanTensor<T>, problem: &EotProblem<T>) -> (T, T) {
    (l1_dist(&plan.row_marginal(), problem.a()), l1_dist(&plan.col_marginal(), problem.b()))
}
