use super::pam::record;
use super::{at_iter, f_step, finish, zero_cost_result, Recorder, Snapshot, SolveResult, Termination};
use crate::error::Result;
use crate::kernels::{evaluate, evaluate_at, project_simplex};
use crate::problem::{Algorithm, DualState, EotProblem, SolverConfig};
use crate::scalar::{l1_dist, l2_dist, Scalar};

/// Default gradient Lipschitz estimate `3 max(1, c_inf^2) / eta`.
pub fn apga_default_lipschitz<T: Scalar>(problem: &EotProblem<T>, eta: T) -> T {
    let c = problem.c_inf();
    T::lit(3.0) * (c * c).max(T::one()) / eta
}

fn extrapolate<T: Scalar>(cur: &[T], prev: &[T], w: T) -> Vec<T> {
    cur.iter().zip(prev).map(|(&x, &p)| x + w * (x - p)).collect()
}

/// Accelerated projected gradient ascent on all three blocks.
///
/// Iteration `t` extrapolates with weight `(t - 2) / (t + 1)` (zero for
/// `t <= 2`), then takes a `1/L` gradient step in `f` and `g` and a projected
/// `1/L` gradient step in `lambda`. Before rounding, `f` is replaced by its
/// exact maximizer so the rows of the plan carry mass `a`.
pub fn solve_apga<T: Scalar>(problem: &EotProblem<T>, config: &SolverConfig<T>) -> Result<SolveResult<T>> {
    config.validate()?;
    if problem.c_inf() == T::zero() {
        return Ok(zero_cost_result(Algorithm::Apga, problem));
    }
    let eta = config.eta;
    let step = T::one() / config.lipschitz.unwrap_or_else(|| apga_default_lipschitz(problem, eta));
    let thr = config.thresholds(problem);
    let mut state = DualState::initial(problem);
    let (mut f_prev, mut g_prev) = (state.f.clone(), state.g.clone());
    let mut recorder = Recorder::new(config.trace_every);
    let mut prev_objective: Option<T> = None;
    let mut termination = Termination::MaxIters;
    let mut iterations = 0;

    for t in 1..=config.max_iters {
        iterations = t;
        let w = if t <= 2 { T::zero() } else { T::from_usize_lossy(t - 2) / T::from_usize_lossy(t + 1) };
        let v = extrapolate(&state.f, &f_prev, w);
        let wg = extrapolate(&state.g, &g_prev, w);
        let z = project_simplex(&extrapolate(&state.lambda, &state.lambda_prev, w)).map_err(at_iter(t))?;

        let at = evaluate_at(&v, &wg, &z, problem, eta).map_err(at_iter(t))?;
        let f_new: Vec<T> = v.iter().zip(at.grad_f(problem)).map(|(&x, d)| x + step * d).collect();
        let g_new: Vec<T> = wg.iter().zip(at.grad_g(problem)).map(|(&x, d)| x + step * d).collect();
        let moved: Vec<T> = z.iter().zip(at.grad_lambda()).map(|(&x, d)| x + step * d).collect();
        let lambda_new = project_simplex(&moved).map_err(at_iter(t))?;
        let lambda_step = l2_dist(&lambda_new, &state.lambda);

        f_prev = std::mem::replace(&mut state.f, f_new);
        g_prev = std::mem::replace(&mut state.g, g_new);
        state.lambda_prev = std::mem::replace(&mut state.lambda, lambda_new);
        state.y = z;

        let ev = evaluate(&state, problem, eta).map_err(at_iter(t))?;
        let row_residual = l1_dist(&ev.row, problem.a());
        let col_residual = l1_dist(&ev.col, problem.b());
        let converged = config.stop_on_residuals
            && row_residual <= thr.col
            && col_residual <= thr.col
            && lambda_step <= thr.lambda_step;
        let stagnated = config.stop_on_residuals
            && config.stagnation_tol > T::zero()
            && prev_objective.is_some_and(|p| (ev.objective - p).abs() < config.stagnation_tol);
        prev_objective = Some(ev.objective);
        let last = converged || stagnated || t == config.max_iters;

        if recorder.wants(t, last) {
            let rec = record(t, recorder.elapsed_ms(), &state, problem, eta, col_residual, lambda_step).map_err(at_iter(t))?;
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
    log::debug!("apga finished after {iterations} iterations: {termination:?}");
    let f_exact = f_step(&state.f, &state.g, &state.lambda, problem, eta).map_err(at_iter(iterations))?;
    let snapshot = Snapshot { f: f_exact, g: state.g.clone(), lambda: state.lambda.clone() };
    finish(Algorithm::Apga, problem, eta, state, snapshot, recorder.trace, termination, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::validate_problem;
    use crate::solvers::solve_pam;
    use ndarray::{array, Array3};

    #[test]
    fn first_steps_have_no_momentum() {
        let p = EotProblem::<f64>::from_matrices(
            vec![0.4, 0.6],
            vec![0.5, 0.5],
            &[array![[0.0, 1.0], [1.0, 0.0]], array![[0.5, 0.0], [2.0, 1.0]]],
        )
        .unwrap();
        let eta = 0.2;
        let mut cfg = SolverConfig::with_params(0.1, eta, 1.0);
        cfg.max_iters = 1;
        cfg.stop_on_residuals = false;
        let res = solve_apga(&p, &cfg).unwrap();
        let s0 = DualState::initial(&p);
        let ev = evaluate(&s0, &p, eta).unwrap();
        let step = 1.0 / apga_default_lipschitz(&p, eta);
        let expect_f: Vec<f64> = s0.f.iter().zip(ev.grad_f(&p)).map(|(x, d)| x + step * d).collect();
        let moved: Vec<f64> = s0.lambda.iter().zip(ev.grad_lambda()).map(|(x, d)| x + step * d).collect();
        let expect_l = project_simplex(&moved).unwrap();
        assert!(res.state.f.iter().zip(&expect_f).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(res.state.lambda.iter().zip(&expect_l).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn diagonal_toy_needs_more_iterations_than_pam() {
        let p = EotProblem::<f64>::from_matrices(vec![0.3, 0.7], vec![0.6, 0.4], &[array![[0.0, 1.0], [1.0, 0.0]]]).unwrap();
        let mut cfg = SolverConfig::with_params(0.1, 0.01, 1e-4);
        cfg.max_iters = 20_000;
        let pam = solve_pam(&p, &cfg).unwrap();
        let apga = solve_apga(&p, &cfg).unwrap();
        assert!(apga.plan.is_feasible());
        assert!((apga.primal_value(&p) - pam.primal_value(&p)).abs() < 0.05);
        assert!(apga.iterations > pam.iterations, "{:?} {} vs {:?} {}", apga.termination, apga.iterations, pam.termination, pam.iterations);
    }

    #[test]
    fn balanced_zero_cost_keeps_duals() {
        let mut costs = Array3::zeros((2, 3, 3));
        costs[[0, 0, 0]] = 1e-300;
        let p = validate_problem::<f64>(vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3], costs).unwrap();
        let mut cfg = SolverConfig::with_params(0.1, 0.1, 1.0);
        cfg.max_iters = 3;
        cfg.stop_on_residuals = false;
        let res = solve_apga(&p, &cfg).unwrap();
        assert!(res.state.f.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        assert!(res.state.g.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }
}
