//! Iteration loops for the three dual solvers and the shared block updates.
//!
//! PAM and PAME maximize the dual exactly in `f` and `g` and take a projected
//! gradient step in `lambda` (PAME extrapolates `lambda` first). APGA takes
//! accelerated gradient steps on all three blocks at once. All three finish
//! with the same primal recovery.

mod apga;
mod pam;
mod pame;

use std::time::Instant;

use ndarray::Array3;

pub use apga::{apga_default_lipschitz, solve_apga};
pub use pam::{pam_f_update, pam_g_update, pam_lambda_update, solve_pam};
pub use pame::{pame_lambda_update, pame_y_update, solve_pame};

use crate::error::{EotError, Result};
use crate::kernels::{col_logsumexp, evaluate_at, log_potentials, row_logsumexp};
use crate::problem::{Algorithm, DualState, EotProblem, PlanTensor, SolverConfig};
use crate::rounding::recover_primal_detailed;
use crate::scalar::{ordered_sum, Scalar};

/// Value `f_i` takes for a zero-mass row; `exp(f_i / eta)` underflows to zero.
pub const ZERO_ROW_SENTINEL: f64 = -1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T> {
    pub iter: usize,
    pub time_ms: f64,
    /// Dual objective at the end of the iteration.
    pub objective: T,
    /// `||c^t - b||_1` for the plan right after the f-update.
    pub col_residual: T,
    /// `||lambda^{t+1} - lambda^t||_2`.
    pub lambda_step: T,
    /// `||lambda^{t+1} - y^{t+1}||_2` (PAME only).
    pub lambda_y_gap: Option<T>,
    /// `<pi^k, C^k>` of the current (unrounded) plan.
    pub agent_costs: Vec<T>,
    /// `F - ||lambda^{t+1} - lambda^t||^2 / (2 tau)` (PAME only).
    pub hamiltonian: Option<T>,
    /// `sum_k lambda_k <pi^k, C^k>` of the current plan and weights.
    pub lagrangian: T,
    /// Whether `max g - min g <= c_inf - eta iota` held for the current `g`.
    pub g_range_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Every residual threshold was met.
    Converged,
    /// The dual objective stopped moving before the residual thresholds were met.
    Stagnated,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct SolveResult<T> {
    pub algorithm: Algorithm,
    pub state: DualState<T>,
    /// Rounded, feasible plan.
    pub plan: PlanTensor<T>,
    pub lambda_hat: Vec<T>,
    /// The dual plan that was handed to rounding.
    pub dual_plan: PlanTensor<T>,
    pub trace: Vec<IterationRecord<T>>,
    pub termination: Termination,
    pub iterations: usize,
    pub repair_steps: usize,
    /// `sum_k ||hat pi^k - pi^k||_1`.
    pub rounding_movement: T,
}

impl<T: Scalar> SolveResult<T> {
    /// Largest agent cost of the rounded plan.
    pub fn primal_value(&self, problem: &EotProblem<T>) -> T {
        self.plan.agent_costs(problem).into_iter().fold(T::neg_infinity(), T::max)
    }
}

/// Solves with the named algorithm.
pub fn solve<T: Scalar>(algorithm: Algorithm, problem: &EotProblem<T>, config: &SolverConfig<T>) -> Result<SolveResult<T>> {
    match algorithm {
        Algorithm::Pam => solve_pam(problem, config),
        Algorithm::Pame => solve_pame(problem, config),
        Algorithm::Apga => solve_apga(problem, config),
    }
}

pub(crate) fn at_iter(iter: usize) -> impl Fn(EotError) -> EotError {
    move |e| match e {
        EotError::NonFinite { iter: None } => EotError::NonFinite { iter: Some(iter) },
        other => other,
    }
}

/// Exact maximization in `f`: `f_i + eta (log a_i - LSE_{k,j} L[k,i,j])`.
pub(crate) fn f_step<T: Scalar>(f: &[T], g: &[T], lambda: &[T], problem: &EotProblem<T>, eta: T) -> Result<Vec<T>> {
    let grid = log_potentials(f, g, lambda, problem, eta)?;
    let lse = row_logsumexp(&grid);
    let sentinel = T::lit(ZERO_ROW_SENTINEL) * eta;
    let out: Vec<T> = f
        .iter()
        .zip(problem.a())
        .zip(&lse)
        .map(|((&fi, &ai), &li)| if ai > T::zero() { fi + eta * (ai.ln() - li) } else { sentinel })
        .collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(EotError::NonFinite { iter: None });
    }
    Ok(out)
}

/// Exact maximization in `g`. Also returns the normalized column marginal
/// `c(sum_k pi^k)` at the input point.
pub(crate) fn g_step<T: Scalar>(
    f: &[T],
    g: &[T],
    lambda: &[T],
    problem: &EotProblem<T>,
    eta: T,
) -> Result<(Vec<T>, Vec<T>)> {
    let grid = log_potentials(f, g, lambda, problem, eta)?;
    let lse = col_logsumexp(&grid);
    let m = lse.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return Err(EotError::NonFinite { iter: None });
    }
    let total = m + ordered_sum(lse.iter().map(|&l| (l - m).exp())).ln();
    let col: Vec<T> = lse.iter().map(|&l| (l - total).exp()).collect();
    let out: Vec<T> = g.iter().zip(problem.b()).zip(&lse).map(|((&gj, &bj), &lj)| gj + eta * (bj.ln() - lj)).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(EotError::NonFinite { iter: None });
    }
    Ok((out, col))
}

pub(crate) fn g_range_holds<T: Scalar>(g: &[T], problem: &EotProblem<T>, eta: T) -> bool {
    crate::diagnostics::g_range_check(g, problem, eta)
}

/// Bookkeeping shared by the loops: timing, trace cadence.
pub(crate) struct Recorder<T> {
    start: Instant,
    every: usize,
    pub trace: Vec<IterationRecord<T>>,
}

impl<T: Scalar> Recorder<T> {
    pub fn new(every: usize) -> Self {
        Recorder { start: Instant::now(), every, trace: Vec::new() }
    }

    pub fn elapsed_ms(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * 1e3
    }

    pub fn wants(&self, iter: usize, last: bool) -> bool {
        last || iter == 1 || iter.is_multiple_of(self.every)
    }

    pub fn push(&mut self, record: IterationRecord<T>) {
        self.trace.push(record);
    }
}

pub(crate) struct Snapshot<T> {
    pub f: Vec<T>,
    pub g: Vec<T>,
    pub lambda: Vec<T>,
}

/// Rounds `pi(snapshot)` and assembles the result.
#[allow(clippy::too_many_arguments)]
pub(crate) fn finish<T: Scalar>(
    algorithm: Algorithm,
    problem: &EotProblem<T>,
    eta: T,
    state: DualState<T>,
    snapshot: Snapshot<T>,
    trace: Vec<IterationRecord<T>>,
    termination: Termination,
    iterations: usize,
) -> Result<SolveResult<T>> {
    let ev = evaluate_at(&snapshot.f, &snapshot.g, &snapshot.lambda, problem, eta).map_err(at_iter(iterations))?;
    let recovery = recover_primal_detailed(&ev.plan, problem)?;
    Ok(SolveResult {
        algorithm,
        state,
        plan: recovery.plan,
        lambda_hat: snapshot.lambda,
        dual_plan: ev.plan,
        trace,
        termination,
        iterations,
        repair_steps: recovery.margins.repair_steps,
        rounding_movement: recovery.movement_l1,
    })
}

/// All-zero costs: every coupling is optimal, so return `a b^T / N` per agent.
pub(crate) fn zero_cost_result<T: Scalar>(algorithm: Algorithm, problem: &EotProblem<T>) -> SolveResult<T> {
    let (agents, n, _) = problem.costs().dim();
    let share = T::one() / T::from_usize_lossy(agents);
    let (a, b) = (problem.a(), problem.b());
    let pi = Array3::from_shape_fn((agents, n, n), |(_, i, j)| a[i] * b[j] * share);
    let plan = PlanTensor::checked(pi, problem);
    let state = DualState::initial(problem);
    let record = IterationRecord {
        iter: 1,
        time_ms: 0.0,
        objective: T::zero(),
        col_residual: T::zero(),
        lambda_step: T::zero(),
        lambda_y_gap: None,
        agent_costs: vec![T::zero(); agents],
        hamiltonian: None,
        lagrangian: T::zero(),
        g_range_ok: true,
    };
    SolveResult {
        algorithm,
        lambda_hat: state.lambda.clone(),
        state,
        dual_plan: plan.clone(),
        plan,
        trace: vec![record],
        termination: Termination::Converged,
        iterations: 1,
        repair_steps: 0,
        rounding_movement: T::zero(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{default_schedule, validate_problem};
    use ndarray::array;

    #[test]
    fn zero_cost_shortcut() {
        let p = validate_problem::<f64>(vec![0.3, 0.7], vec![0.5, 0.5], Array3::zeros((3, 2, 2))).unwrap();
        let cfg = SolverConfig::with_params(0.1, 0.1, 0.1);
        for alg in [Algorithm::Pam, Algorithm::Pame, Algorithm::Apga] {
            let res = solve(alg, &p, &cfg).unwrap();
            assert_eq!(res.iterations, 1);
            assert_eq!(res.termination, Termination::Converged);
            assert!(res.plan.is_feasible());
            assert_eq!(res.primal_value(&p), 0.0);
        }
    }

    #[test]
    fn f32_solve_on_toy() {
        let p = EotProblem::<f32>::from_matrices(vec![0.5, 0.5], vec![0.5, 0.5], &[array![[0.0f32, 1.0], [1.0, 0.0]]]).unwrap();
        let mut cfg = default_schedule(&p, 0.5, Algorithm::Pam).unwrap();
        cfg.max_iters = 2000;
        let res = solve_pam(&p, &cfg).unwrap();
        assert!(res.plan.is_feasible());
        assert!(res.primal_value(&p) < 0.05);
    }
}
