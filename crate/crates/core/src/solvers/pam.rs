use super::{at_iter, f_step, finish, g_range_holds, g_step, zero_cost_result, IterationRecord, Recorder, Snapshot, SolveResult, Termination};
use crate::error::Result;
use crate::kernels::{evaluate, evaluate_at, project_simplex};
use crate::problem::{Algorithm, DualState, EotProblem, SolverConfig};
use crate::scalar::{dot, l1_dist, l2_dist, Scalar};

/// Exact maximization of the dual in `f` with `g` and `lambda` held fixed.
pub fn pam_f_update<T: Scalar>(state: &DualState<T>, problem: &EotProblem<T>, eta: T) -> Result<Vec<T>> {
    state.check_shapes(problem)?;
    f_step(&state.f, &state.g, &state.lambda, problem, eta)
}

/// Exact maximization of the dual in `g` with `f` and `lambda` held fixed.
pub fn pam_g_update<T: Scalar>(state: &DualState<T>, problem: &EotProblem<T>, eta: T) -> Result<Vec<T>> {
    state.check_shapes(problem)?;
    g_step(&state.f, &state.g, &state.lambda, problem, eta).map(|(g, _)| g)
}

/// Projected gradient step `Proj(lambda + tau grad_lambda F(f, g, lambda))`.
pub fn pam_lambda_update<T: Scalar>(state: &DualState<T>, problem: &EotProblem<T>, eta: T, tau: T) -> Result<Vec<T>> {
    state.check_shapes(problem)?;
    lambda_step_from(&state.f, &state.g, &state.lambda, problem, eta, tau)
}

/// `Proj(base + tau grad_lambda F(f, g, base))`.
pub(crate) fn lambda_step_from<T: Scalar>(f: &[T], g: &[T], base: &[T], problem: &EotProblem<T>, eta: T, tau: T) -> Result<Vec<T>> {
    let grad = evaluate_at(f, g, base, problem, eta)?.grad_lambda();
    let moved: Vec<T> = base.iter().zip(&grad).map(|(&l, &d)| l + tau * d).collect();
    project_simplex(&moved)
}

pub(crate) fn record<T: Scalar>(
    iter: usize,
    time_ms: f64,
    state: &DualState<T>,
    problem: &EotProblem<T>,
    eta: T,
    col_residual: T,
    lambda_step: T,
) -> Result<IterationRecord<T>> {
    let ev = evaluate(state, problem, eta)?;
    Ok(IterationRecord {
        iter,
        time_ms,
        objective: ev.objective,
        col_residual,
        lambda_step,
        lambda_y_gap: None,
        lagrangian: dot(&state.lambda, &ev.agent_costs),
        agent_costs: ev.agent_costs,
        hamiltonian: None,
        g_range_ok: g_range_holds(&state.g, problem, eta),
    })
}

/// Projected alternating maximization.
///
/// Each iteration maximizes exactly in `f`, then `g`, then takes a projected
/// gradient step in `lambda`. On exit the plan `pi(f^T, g^{T-1}, lambda^{T-1})`
/// is rounded and `lambda^{T-1}` is returned as `lambda_hat`.
pub fn solve_pam<T: Scalar>(problem: &EotProblem<T>, config: &SolverConfig<T>) -> Result<SolveResult<T>> {
    config.validate()?;
    if problem.c_inf() == T::zero() {
        return Ok(zero_cost_result(Algorithm::Pam, problem));
    }
    let (eta, tau) = (config.eta, config.tau);
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

        let mid = evaluate_at(&f_new, &g_new, &state.lambda, problem, eta).map_err(at_iter(t))?;
        let moved: Vec<T> = state.lambda.iter().zip(mid.grad_lambda()).map(|(&l, d)| l + tau * d).collect();
        let lambda_new = project_simplex(&moved).map_err(at_iter(t))?;
        let lambda_step = l2_dist(&lambda_new, &state.lambda);

        state.f = f_new;
        state.g = g_new;
        state.lambda_prev = std::mem::replace(&mut state.lambda, lambda_new);
        state.y.clone_from(&state.lambda);

        let converged = config.stop_on_residuals && col_residual <= thr.col && lambda_step <= thr.lambda_step;
        let stagnated = config.stop_on_residuals
            && config.stagnation_tol > T::zero()
            && prev_objective.is_some_and(|p| (mid.objective - p).abs() < config.stagnation_tol);
        prev_objective = Some(mid.objective);
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
    log::debug!("pam finished after {iterations} iterations: {termination:?}");
    finish(Algorithm::Pam, problem, eta, state, snapshot, recorder.trace, termination, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{dual_objective, evaluate, grad_f};
    use crate::oracle::{brute_saddle, GridSpec};
    use crate::problem::{default_schedule, validate_problem};
    use ndarray::{array, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, agents: usize) -> EotProblem<f64> {
        let mut a: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        a.iter_mut().for_each(|x| *x /= sa);
        b.iter_mut().for_each(|x| *x /= sb);
        let costs = Array3::from_shape_fn((agents, n, n), |_| rng.random_range(0.0..2.0));
        validate_problem(a, b, costs).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, p: &EotProblem<f64>) -> DualState<f64> {
        let f = (0..p.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = (0..p.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut l: Vec<f64> = (0..p.agents()).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = l.iter().sum();
        l.iter_mut().for_each(|x| *x /= s);
        DualState::new(f, g, l).unwrap()
    }

    fn kl(p: &[f64], q: &[f64]) -> f64 {
        p.iter().zip(q).map(|(&x, &y)| x * (x / y).ln()).sum()
    }

    #[test]
    fn f_update_uniform_zero_cost() {
        let n = 4;
        let p = validate_problem::<f64>(vec![0.25; n], vec![0.25; n], Array3::zeros((1, n, n))).unwrap();
        let s = DualState::new(vec![0.0; n], vec![0.0; n], vec![1.0]).unwrap();
        let f = pam_f_update(&s, &p, 1.0).unwrap();
        for fi in &f {
            assert!((fi + 2.0 * (n as f64).ln()).abs() < 1e-12);
        }
        let after = DualState::new(f, vec![0.0; n], vec![1.0]).unwrap();
        assert!(crate::kernels::log_mass(&after, &p, 1.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn f_update_zeroes_gradient_and_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 5, 3);
            let mut s = random_state(&mut rng, &p);
            s.f = pam_f_update(&s, &p, 0.3).unwrap();
            let ev = evaluate(&s, &p, 0.3).unwrap();
            assert!(ev.log_mass.abs() < 1e-10);
            assert!(grad_f(&s, &p, 0.3).unwrap().iter().all(|x| x.abs() < 1e-10));
        }
    }

    #[test]
    fn f_update_zero_mass_row() {
        let p = EotProblem::<f64>::from_matrices(vec![1.0, 0.0], vec![0.5, 0.5], &[array![[0.0, 1.0], [1.0, 0.0]]]).unwrap();
        let mut s = DualState::initial(&p);
        s.f = pam_f_update(&s, &p, 0.1).unwrap();
        let plan = crate::kernels::plan_from_duals(&s, &p, 0.1).unwrap();
        assert!(plan.agent(0).row(1).sum() <= 1e-300);
    }

    #[test]
    fn g_update_fixed_point_on_symmetric_instance() {
        let p = EotProblem::<f64>::from_matrices(vec![0.5, 0.5], vec![0.5, 0.5], &[array![[0.0, 1.0], [1.0, 0.0]]]).unwrap();
        let s = DualState::initial(&p);
        let g = pam_g_update(&s, &p, 0.5).unwrap();
        let shift = g[0] - s.g[0];
        assert!(g.iter().zip(&s.g).all(|(x, y)| (x - y - shift).abs() < 1e-12));
        let mut after = s.clone();
        after.g = g;
        assert!((dual_objective(&after, &p, 0.5).unwrap() - dual_objective(&s, &p, 0.5).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn g_update_increase_is_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let eta = 0.4;
        for _ in 0..30 {
            let p = random_problem(&mut rng, 6, 2);
            let mut s = random_state(&mut rng, &p);
            s.f = pam_f_update(&s, &p, eta).unwrap();
            let before = evaluate(&s, &p, eta).unwrap();
            let c_t = before.col.clone();
            let mut after = s.clone();
            after.g = pam_g_update(&s, &p, eta).unwrap();
            let inc = dual_objective(&after, &p, eta).unwrap() - before.objective;
            let kl = kl(p.b(), &c_t);
            assert!((inc - eta * kl).abs() < 1e-9, "{inc} vs {}", eta * kl);
            let l1: f64 = p.b().iter().zip(&c_t).map(|(x, y)| (x - y).abs()).sum();
            assert!(inc >= eta / 2.0 * l1 * l1 - 1e-12);
            let ev = evaluate(&after, &p, eta).unwrap();
            assert!(ev.col.iter().zip(p.b()).all(|(x, y)| (x - y).abs() < 1e-10));
        }
    }

    #[test]
    fn lambda_update_constant_gradient_keeps_lambda() {
        let c = array![[0.0, 1.0], [1.0, 0.0]];
        let p = EotProblem::<f64>::from_matrices(vec![0.5, 0.5], vec![0.5, 0.5], &[c.clone(), c.clone(), c]).unwrap();
        let mut s = DualState::initial(&p);
        s.f = vec![0.3, -0.2];
        s.g = vec![0.1, 0.4];
        let l = pam_lambda_update(&s, &p, 0.1, 0.7).unwrap();
        assert!(l.iter().zip(&s.lambda).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn lambda_update_single_agent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_problem(&mut rng, 4, 1);
        let s = random_state(&mut rng, &p);
        assert_eq!(pam_lambda_update(&s, &p, 0.2, 3.0).unwrap(), vec![1.0]);
    }

    #[test]
    fn lambda_update_sufficient_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let eta = 0.25;
        for _ in 0..30 {
            let p = random_problem(&mut rng, 5, 4);
            let mut s = random_state(&mut rng, &p);
            s.f = pam_f_update(&s, &p, eta).unwrap();
            s.g = pam_g_update(&s, &p, eta).unwrap();
            let c2 = p.c_inf() * p.c_inf();
            let before = dual_objective(&s, &p, eta).unwrap();
            let l = pam_lambda_update(&s, &p, eta, eta / c2).unwrap();
            let step: f64 = l.iter().zip(&s.lambda).map(|(x, y)| (x - y) * (x - y)).sum();
            let mut after = s.clone();
            after.lambda = l;
            let inc = dual_objective(&after, &p, eta).unwrap() - before;
            assert!(inc >= c2 * step / (2.0 * eta) - 1e-9);
        }
    }

    #[test]
    fn diagonal_toy() {
        let p = EotProblem::<f64>::from_matrices(vec![0.5, 0.5], vec![0.5, 0.5], &[array![[0.0, 1.0], [1.0, 0.0]]]).unwrap();
        let mut cfg = SolverConfig::with_params(0.1, 0.01, 1e-4);
        cfg.max_iters = 5000;
        let res = solve_pam(&p, &cfg).unwrap();
        assert!(res.plan.is_feasible());
        let pi = res.plan.agent(0);
        assert!((pi[[0, 0]] - 0.5).abs() < 0.05 && (pi[[1, 1]] - 0.5).abs() < 0.05);
        assert!(res.primal_value(&p) < 0.05);
        assert_eq!(res.lambda_hat, vec![1.0]);
    }

    #[test]
    fn objective_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_problem(&mut rng, 6, 3);
        let mut cfg = default_schedule(&p, 0.2, Algorithm::Pam).unwrap();
        cfg.max_iters = 400;
        cfg.stop_on_residuals = false;
        let res = solve_pam(&p, &cfg).unwrap();
        assert_eq!(res.trace.len(), 400);
        let f0 = dual_objective(&DualState::initial(&p), &p, cfg.eta).unwrap();
        let mut prev = f0;
        for r in &res.trace {
            assert!(r.objective >= prev - 1e-9);
            assert!(r.g_range_ok);
            prev = r.objective;
        }
    }

    #[test]
    fn two_agent_toy_matches_oracle() {
        let p = EotProblem::<f64>::from_matrices(
            vec![0.4, 0.6],
            vec![0.5, 0.5],
            &[array![[0.0, 1.0], [1.0, 0.0]], array![[1.0, 0.0], [0.0, 1.0]]],
        )
        .unwrap();
        let oracle = brute_saddle(&p, &GridSpec::default()).unwrap();
        let eps = 0.05;
        let mut cfg = default_schedule(&p, eps, Algorithm::Pam).unwrap();
        cfg.max_iters = 200_000;
        let res = solve_pam(&p, &cfg).unwrap();
        assert!(res.plan.is_feasible());
        let v = res.primal_value(&p);
        assert!((v - oracle.value).abs() <= eps + oracle.error_bound, "{v} vs {}", oracle.value);
    }

    #[test]
    fn reports_iterate_on_overflow() {
        let p = EotProblem::<f64>::from_matrices(vec![0.5, 0.5], vec![0.5, 0.5], &[array![[1e300, 1e300], [1e300, 1e300]]]).unwrap();
        let cfg = SolverConfig::with_params(0.1, 1.0, 1e300);
        let err = solve_pam(&p, &cfg).unwrap_err();
        assert!(matches!(err, crate::error::EotError::NonFinite { iter: Some(_) }), "{err:?}");
    }
}
