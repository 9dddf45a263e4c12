use super::pam::{lambda_step_from, record};
use super::{at_iter, f_step, finish, g_step, zero_cost_result, Recorder, Snapshot, SolveResult, Termination};
use crate::error::{EotError, Result};
use crate::kernels::{evaluate_at, project_simplex};
use crate::problem::{Algorithm, DualState, EotProblem, SolverConfig};
use crate::scalar::{l1_dist, l2_dist, Scalar};

/// Extrapolated point `Proj(lambda + (1 - theta)(lambda - lambda_prev))`.
pub fn pame_y_update<T: Scalar>(lambda: &[T], lambda_prev: &[T], theta: T) -> Result<Vec<T>> {
    if lambda.len() != lambda_prev.len() {
        return Err(EotError::ShapeMismatch(format!(
            "lambda has {} entries, lambda_prev has {}",
            lambda.len(),
            lambda_prev.len()
        )));
    }
    if !(theta > T::zero() && theta <= T::one()) {
        return Err(EotError::InvalidConfig("theta must lie in (0, 1]".into()));
    }
    let w = T::one() - theta;
    let moved: Vec<T> = lambda.iter().zip(lambda_prev).map(|(&l, &p)| l + w * (l - p)).collect();
    project_simplex(&moved)
}

/// Projected gradient step taken from the extrapolated point `state.y`:
/// `Proj(y + tau grad_lambda F(f, g, y))`.
pub fn pame_lambda_update<T: Scalar>(state: &DualState<T>, problem: &EotProblem<T>, eta: T, tau: T) -> Result<Vec<T>> {
    state.check_shapes(problem)?;
    lambda_step_from(&state.f, &state.g, &state.y, problem, eta, tau)
}

/// Projected alternating maximization with extrapolation in `lambda`.
///
/// Same `f` and `g` updates as PAM; the `lambda` step is taken from the
/// extrapolated point `y`. Starts from `lambda^{-1} = lambda^0`.
pub fn solve_pame<T: Scalar>(problem: &EotProblem<T>, config: &SolverConfig<T>) -> Result<SolveResult<T>> {
    config.validate()?;
    if problem.c_inf() == T::zero() {
        return Ok(zero_cost_result(Algorithm::Pame, problem));
    }
    let (eta, tau, theta) = (config.eta, config.tau, config.theta);
    let thr = config.thresholds(problem);
    let mut state = DualState::initial(problem);
    let mut recorder = Recorder::new(config.trace_every);
    let mut prev_objective: Option<T> = None;
    let mut termination = Termination::MaxIters;
    let mut snapshot = Snapshot { f: state.f.clone(), g: state.g.clone(), lambda: state.lambda.clone() };
    let mut iterations = 0;

    for t in 1..=config.max_iters {
        iterations = t;
        let f_new = f_step(&state.f, &state.g, &state.lambda, problem, eta).map_err(at_iter(t))?;
        let (g_new, col) = g_step(&f_new, &state.g, &state.lambda, problem, eta).map_err(at_iter(t))?;
        let col_residual = l1_dist(&col, problem.b());
        snapshot = Snapshot { f: f_new.clone(), g: state.g.clone(), lambda: state.lambda.clone() };

        let y = pame_y_update(&state.lambda, &state.lambda_prev, theta)?;
        let at_y = evaluate_at(&f_new, &g_new, &y, problem, eta).map_err(at_iter(t))?;
        let moved: Vec<T> = y.iter().zip(at_y.grad_lambda()).map(|(&l, d)| l + tau * d).collect();
        let lambda_new = project_simplex(&moved).map_err(at_iter(t))?;
        let prev_step = l2_dist(&state.lambda, &state.lambda_prev);
        let lambda_step = l2_dist(&lambda_new, &state.lambda);
        let y_gap = l2_dist(&lambda_new, &y);

        state.f = f_new;
        state.g = g_new;
        state.lambda_prev = std::mem::replace(&mut state.lambda, lambda_new);
        state.y = y;

        let converged = config.stop_on_residuals
            && col_residual <= thr.col
            && prev_step <= thr.lambda_prev_step
            && y_gap <= thr.lambda_y;
        let stagnated = config.stop_on_residuals
            && config.stagnation_tol > T::zero()
            && prev_objective.is_some_and(|p| (at_y.objective - p).abs() < config.stagnation_tol);
        prev_objective = Some(at_y.objective);
        let last = converged || stagnated || t == config.max_iters;

        if recorder.wants(t, last) {
            let mut rec = record(t, recorder.elapsed_ms(), &state, problem, eta, col_residual, lambda_step).map_err(at_iter(t))?;
            rec.lambda_y_gap = Some(y_gap);
            rec.hamiltonian = Some(rec.objective - lambda_step * lambda_step / (T::lit(2.0) * tau));
            recorder.push(rec);
        }
        if converged {
            termination = Termination::Converged;
        } else if stagnated {
            termination = Termination::Stagnated;
        }
        if last {
            break;
        }
    }
    log::debug!("pame finished after {iterations} iterations: {termination:?}");
    finish(Algorithm::Pame, problem, eta, state, snapshot, recorder.trace, termination, iterations)
}
