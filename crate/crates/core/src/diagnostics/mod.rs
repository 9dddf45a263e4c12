//! Optimality certificates: primal values, the duality gap, the error
//! against a reference value, and the bound on the range of `g`.

mod transport;

use ndarray::{Array2, Array3, ArrayView2};

pub use transport::EXACT_SIZE_LIMIT;

use crate::error::{EotError, Result};
use crate::kernels::evaluate_at;
use crate::problem::{check_simplex, EotProblem, PlanTensor, INTERNAL_SIMPLEX_TOL};
use crate::rounding::round_plan;
use crate::scalar::{dot, l1_dist, ordered_sum, Scalar};
use crate::solvers::{f_step, g_step};

/// Slack used by [`g_range_check`].
pub const G_RANGE_SLACK: f64 = 1e-9;

/// How [`min_over_pi`] solves the inner transport problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OtMethod<T> {
    /// Transportation simplex; exact up to rounding.
    Exact,
    /// Sinkhorn at regularization `eta'`, rounded, minus the entropy slack
    /// `eta' (log n^2 + 1)`. An estimate that sits below the exact value by at
    /// most the slack.
    Entropic(T),
}

impl<T: Scalar> OtMethod<T> {
    /// Entropic method with `eta' = epsilon / 10`.
    pub fn entropic_for(epsilon: T) -> Self {
        OtMethod::Entropic(epsilon / T::lit(10.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport<T> {
    /// `max_k <pi^k, C^k>`.
    pub upper: T,
    /// `min_pi l(pi, lambda)`.
    pub lower: T,
    pub gap: T,
    /// `max_k <pi^k, C^k> - min_k <pi^k, C^k>`.
    pub spread: T,
    /// Agent attaining `upper` (smallest index on ties).
    pub worst_agent: usize,
    pub agent_costs: Vec<T>,
}

impl<T: Scalar> GapReport<T> {
    pub fn certifies(&self, epsilon: T) -> bool {
        self.gap <= epsilon
    }
}

fn check_plan<T: Scalar>(plans: &PlanTensor<T>, problem: &EotProblem<T>) -> Result<()> {
    if plans.pi().dim() != problem.costs().dim() {
        return Err(EotError::ShapeMismatch(format!(
            "plans have shape {:?}, costs have {:?}",
            plans.pi().dim(),
            problem.costs().dim()
        )));
    }
    Ok(())
}

/// `l(pi, lambda) = sum_k lambda_k <pi^k, C^k>`.
///
/// # Panics
/// If the shapes of `plans`, `lambda` and `problem` disagree.
pub fn primal_value<T: Scalar>(plans: &PlanTensor<T>, lambda: &[T], problem: &EotProblem<T>) -> T {
    assert_eq!(plans.pi().dim(), problem.costs().dim(), "plan and cost shapes differ");
    assert_eq!(lambda.len(), problem.agents(), "lambda has the wrong length");
    dot(lambda, &plans.agent_costs(problem))
}

/// Largest agent cost and the agent attaining it (smallest index on ties).
pub fn max_over_lambda<T: Scalar>(plans: &PlanTensor<T>, problem: &EotProblem<T>) -> Result<(T, usize)> {
    check_plan(plans, problem)?;
    Ok(argmax(&plans.agent_costs(problem)))
}

fn argmax<T: Scalar>(v: &[T]) -> (T, usize) {
    let mut best = (v[0], 0);
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > best.0 {
            best = (x, k);
        }
    }
    best
}

/// Pointwise `M_ij = min_k lambda_k C^k_ij`.
pub fn lower_envelope<T: Scalar>(lambda: &[T], problem: &EotProblem<T>) -> Array2<T> {
    let n = problem.n();
    let costs = problem.costs();
    Array2::from_shape_fn((n, n), |(i, j)| {
        lambda.iter().enumerate().map(|(k, &l)| l * costs[[k, i, j]]).fold(T::infinity(), T::min)
    })
}

/// `min over Pi^N_{a,b} of l(pi, lambda)`.
///
/// Only `sum_k pi^k` is constrained, so each cell's mass goes to the agent
/// with the smallest weighted cost and the problem reduces to one transport
/// problem on [`lower_envelope`].
pub fn min_over_pi<T: Scalar>(lambda: &[T], problem: &EotProblem<T>, method: OtMethod<T>) -> Result<T> {
    if lambda.len() != problem.agents() {
        return Err(EotError::ShapeMismatch(format!("lambda has {} entries for {} agents", lambda.len(), problem.agents())));
    }
    check_simplex("lambda", lambda, T::tol(INTERNAL_SIMPLEX_TOL))?;
    let m = lower_envelope(lambda, problem);
    match method {
        OtMethod::Exact => exact_ot(problem.a(), problem.b(), m.view()).map(|(v, _)| v),
        OtMethod::Entropic(eta) => entropic_ot_estimate(problem.a(), problem.b(), m.view(), eta),
    }
}

/// Exact optimal transport value and an optimal plan.
pub fn exact_ot<T: Scalar>(a: &[T], b: &[T], cost: ArrayView2<'_, T>) -> Result<(T, Array2<T>)> {
    let sol = transport::solve_transport(a, b, cost)?;
    log::trace!("transport simplex finished in {} pivots", sol.pivots);
    Ok((sol.value, sol.plan))
}

/// Rounded Sinkhorn plan value minus `eta (log n^2 + 1)`.
pub fn entropic_ot_estimate<T: Scalar>(a: &[T], b: &[T], cost: ArrayView2<'_, T>, eta: T) -> Result<T> {
    if !(eta > T::zero()) {
        return Err(EotError::InvalidConfig("entropic estimate needs a positive eta".into()));
    }
    let (rows, cols) = cost.dim();
    let single = EotProblem::from_matrices(a.to_vec(), b.to_vec(), &[cost.to_owned()])?;
    let scale = single.c_inf().max(T::one());
    let tol = T::tol(1e-11) / scale;
    let lambda = [T::one()];
    let mut f = vec![T::zero(); rows];
    let mut g = vec![T::zero(); cols];
    let mut g_used = g.clone();
    for _ in 0..SINKHORN_MAX_ITERS {
        f = f_step(&f, &g, &lambda, &single, eta)?;
        let (g_next, col) = g_step(&f, &g, &lambda, &single, eta)?;
        g_used = std::mem::replace(&mut g, g_next);
        if l1_dist(&col, b) <= tol {
            break;
        }
    }
    let ev = evaluate_at(&f, &g_used, &lambda, &single, eta)?;
    let rounded = round_plan(ev.plan.agent(0), a, b)?;
    let value = ordered_sum(rounded.iter().zip(cost.iter()).map(|(&p, &c)| p * c));
    let n = T::from_usize_lossy(rows.max(cols));
    Ok(value - eta * ((n * n).ln() + T::one()))
}

const SINKHORN_MAX_ITERS: usize = 200_000;

/// Duality gap with the exact inner solver.
pub fn duality_gap<T: Scalar>(plans: &PlanTensor<T>, lambda: &[T], problem: &EotProblem<T>) -> Result<GapReport<T>> {
    duality_gap_with(plans, lambda, problem, OtMethod::Exact)
}

/// `max_k <pi^k, C^k> - min_pi l(pi, lambda)`; requires a feasible plan.
pub fn duality_gap_with<T: Scalar>(
    plans: &PlanTensor<T>,
    lambda: &[T],
    problem: &EotProblem<T>,
    method: OtMethod<T>,
) -> Result<GapReport<T>> {
    check_plan(plans, problem)?;
    let (res_r, res_c) = crate::kernels::marginal_residual(plans, problem);
    let negative = plans.pi().iter().any(|&x| x < T::zero());
    if negative || res_r + res_c > T::tol(1e-8) {
        return Err(EotError::InfeasibleInput { residual: (res_r + res_c).to_f64_lossy() });
    }
    let costs = plans.agent_costs(problem);
    let (upper, worst_agent) = argmax(&costs);
    let lowest = costs.iter().copied().fold(T::infinity(), T::min);
    let lower = min_over_pi(lambda, problem, method)?;
    Ok(GapReport { upper, lower, gap: upper - lower, spread: upper - lowest, worst_agent, agent_costs: costs })
}

/// `|l(pi, lambda) - ell_star|`.
pub fn eot_error<T: Scalar>(plans: &PlanTensor<T>, lambda: &[T], problem: &EotProblem<T>, ell_star: T) -> T {
    (primal_value(plans, lambda, problem) - ell_star).abs()
}

/// Whether `max g - min g <= c_inf - eta iota` (with a small slack).
pub fn g_range_check<T: Scalar>(g: &[T], problem: &EotProblem<T>, eta: T) -> bool {
    let hi = g.iter().copied().fold(T::neg_infinity(), T::max);
    let lo = g.iter().copied().fold(T::infinity(), T::min);
    hi - lo <= problem.c_inf() - eta * problem.iota() + T::lit(G_RANGE_SLACK)
}

/// Spread of agent costs, `max_k - min_k <pi^k, C^k>`.
pub fn cost_spread<T: Scalar>(plans: &PlanTensor<T>, problem: &EotProblem<T>) -> T {
    let costs = plans.agent_costs(problem);
    let hi = costs.iter().copied().fold(T::neg_infinity(), T::max);
    let lo = costs.iter().copied().fold(T::infinity(), T::min);
    hi - lo
}

/// A plan tensor that puts all of `plan` on agent `k`.
pub fn single_agent_plan<T: Scalar>(plan: &Array2<T>, agents: usize, k: usize) -> PlanTensor<T> {
    let (n, m) = plan.dim();
    let mut pi = Array3::zeros((agents, n, m));
    pi.index_axis_mut(ndarray::Axis(0), k).assign(plan);
    PlanTensor::unchecked(pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::enumerate_transport_vertices;
    use crate::problem::{default_schedule, validate_problem, Algorithm};
    use crate::solvers::solve_pam;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> EotProblem<f64> {
        EotProblem::<f64>::from_matrices(vec![0.5, 0.5], vec![0.5, 0.5], &[array![[0.0, 1.0], [1.0, 0.0]]]).unwrap()
    }

    fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, agents: usize) -> EotProblem<f64> {
        let a = random_simplex(rng, n);
        let b = random_simplex(rng, n);
        let costs = Array3::from_shape_fn((agents, n, n), |_| rng.random_range(0.0..1.0));
        validate_problem(a, b, costs).unwrap()
    }

    fn diag_plan() -> PlanTensor<f64> {
        PlanTensor::<f64>::unchecked(array![[[0.5, 0.0], [0.0, 0.5]]])
    }

    #[test]
    fn primal_value_examples() {
        let p = toy();
        assert_eq!(primal_value(&diag_plan(), &[1.0], &p), 0.0);
        let zero = validate_problem::<f64>(vec![0.5, 0.5], vec![0.5, 0.5], Array3::zeros((1, 2, 2))).unwrap();
        let flat = PlanTensor::unchecked(Array3::from_elem((1, 2, 2), 0.25));
        assert_eq!(primal_value(&flat, &[1.0], &zero), 0.0);
    }

    #[test]
    fn primal_value_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 5, 3);
            let pi = Array3::from_shape_fn((3, 5, 5), |_| rng.random_range(0.0..0.1));
            let lambda = random_simplex(&mut rng, 3);
            let mut naive = 0.0;
            for k in 0..3 {
                for i in 0..5 {
                    for j in 0..5 {
                        naive += lambda[k] * pi[[k, i, j]] * p.costs()[[k, i, j]];
                    }
                }
            }
            let got = primal_value(&PlanTensor::unchecked(pi), &lambda, &p);
            assert!((got - naive).abs() < 1e-14);
        }
    }

    #[test]
    fn max_over_lambda_tie_and_order() {
        let c = array![[1.0, 1.0], [1.0, 1.0]];
        let p = EotProblem::<f64>::from_matrices(vec![0.5, 0.5], vec![0.5, 0.5], &[c.clone(), c.clone()]).unwrap();
        let pi = PlanTensor::unchecked(Array3::from_elem((2, 2, 2), 0.125));
        assert_eq!(max_over_lambda(&pi, &p).unwrap(), (0.5, 0));

        let p2 = EotProblem::<f64>::from_matrices(vec![0.5, 0.5], vec![0.5, 0.5], &[c.clone(), c * 2.0]).unwrap();
        let pi = PlanTensor::unchecked(Array3::from_shape_fn((2, 2, 2), |_| 0.25));
        assert_eq!(max_over_lambda(&pi, &p2).unwrap(), (2.0, 1));
    }

    #[test]
    fn max_over_lambda_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 4, 5);
            let pi = PlanTensor::unchecked(Array3::from_shape_fn((5, 4, 4), |_| rng.random_range(0.0..0.05)));
            let costs: Vec<f64> = (0..5).map(|k| (&pi.agent(k) * &p.cost(k)).sum()).collect();
            let mut best = 0;
            for k in 1..5 {
                if costs[k] > costs[best] {
                    best = k;
                }
            }
            let (v, k) = max_over_lambda(&pi, &p).unwrap();
            assert_eq!(k, best);
            assert!((v - costs[best]).abs() < 1e-15);
        }
    }

    #[test]
    fn min_over_pi_examples() {
        assert!(min_over_pi(&[1.0], &toy(), OtMethod::Exact).unwrap().abs() < 1e-15);
        let flat = EotProblem::<f64>::from_matrices(vec![0.3, 0.7], vec![0.6, 0.4], &[Array2::from_elem((2, 2), 0.7)]).unwrap();
        assert!((min_over_pi(&[1.0], &flat, OtMethod::Exact).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn exact_matches_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let n = rng.random_range(2..=4);
            let a = random_simplex(&mut rng, n);
            let b = random_simplex(&mut rng, n);
            let c = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..1.0));
            let (v, plan) = exact_ot::<f64>(&a, &b, c.view()).unwrap();
            let brute = enumerate_transport_vertices::<f64>(&a, &b, c.view()).unwrap();
            assert!((v - brute).abs() < 1e-12, "{v} vs {brute}");
            assert!(plan.iter().all(|&x| x >= 0.0));
            for i in 0..n {
                assert!((plan.row(i).sum() - a[i]).abs() < 1e-12);
                assert!((plan.column(i).sum() - b[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_handles_zero_supply_rows() {
        let c = array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]];
        let (v, _) = exact_ot::<f64>(&[0.0, 0.5, 0.5], &[0.2, 0.3, 0.5], c.view()).unwrap();
        let brute = enumerate_transport_vertices::<f64>(&[0.0, 0.5, 0.5], &[0.2, 0.3, 0.5], c.view()).unwrap();
        assert!((v - brute).abs() < 1e-12);
    }

    #[test]
    fn exact_on_larger_random_instances_is_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..5 {
            let n = 30;
            let a = random_simplex(&mut rng, n);
            let b = random_simplex(&mut rng, n);
            let c = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..1.0));
            let (v, plan) = exact_ot::<f64>(&a, &b, c.view()).unwrap();
            // Any coupling costs at least as much, in particular the independent one.
            let indep: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| a[i] * b[j] * c[[i, j]]).sum();
            assert!(v <= indep + 1e-12);
            assert!(((&plan * &c).sum() - v).abs() < 1e-12);
        }
    }

    #[test]
    fn entropic_estimate_brackets_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..5 {
            let n = 12;
            let a = random_simplex(&mut rng, n);
            let b = random_simplex(&mut rng, n);
            let c = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..1.0));
            let eta = 0.01;
            let exact = exact_ot::<f64>(&a, &b, c.view()).unwrap().0;
            let est = entropic_ot_estimate(&a, &b, c.view(), eta).unwrap();
            let slack = eta * ((n * n) as f64).ln() + eta;
            assert!(est <= exact + 1e-6, "{est} > {exact}");
            assert!(est >= exact - slack - 1e-6);
        }
    }

    #[test]
    fn gap_of_single_agent_toy() {
        let p = toy();
        let report = duality_gap(&diag_plan(), &[1.0], &p).unwrap();
        assert_eq!(report.upper, 0.0);
        assert!(report.gap.abs() < 1e-15);
        assert!(report.certifies(0.01));
    }

    #[test]
    fn gap_rejects_infeasible_plan() {
        let p = toy();
        let bad = PlanTensor::<f64>::unchecked(array![[[0.6, 0.0], [0.0, 0.5]]]);
        assert!(matches!(duality_gap(&bad, &[1.0], &p), Err(EotError::InfeasibleInput { .. })));
    }

    #[test]
    fn weak_duality_on_random_feasible_plans() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 4, 3);
            let base = Array2::from_shape_fn((4, 4), |(i, j)| p.a()[i] * p.b()[j]);
            let shares = random_simplex(&mut rng, 3);
            let pi = Array3::from_shape_fn((3, 4, 4), |(k, i, j)| shares[k] * base[[i, j]]);
            let lambda = random_simplex(&mut rng, 3);
            let r = duality_gap(&PlanTensor::checked(pi, &p), &lambda, &p).unwrap();
            assert!(r.gap >= -1e-9);
        }
    }

    #[test]
    fn eot_error_examples() {
        let p = toy();
        assert_eq!(eot_error(&diag_plan(), &[1.0], &p, 0.0), 0.0);
        assert!((eot_error(&diag_plan(), &[1.0], &p, -0.1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn eot_error_of_pam_after_100_iterations() {
        let p = EotProblem::<f64>::from_matrices(
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            &[array![[0.0, 1.0], [1.0, 0.0]], array![[1.0, 0.0], [0.0, 1.0]]],
        )
        .unwrap();
        let oracle = crate::oracle::brute_saddle(&p, &crate::oracle::GridSpec::default()).unwrap();
        let mut cfg = default_schedule(&p, 0.05, Algorithm::Pam).unwrap();
        cfg.max_iters = 100;
        cfg.stop_on_residuals = false;
        let res = solve_pam(&p, &cfg).unwrap();
        let last = res.trace.last().unwrap();
        assert!((last.lagrangian - oracle.value).abs() < 1e-2 + oracle.error_bound);
    }

    #[test]
    fn g_range_examples() {
        let p = toy();
        assert!(g_range_check(&[0.0, 0.0], &p, 0.1));
        let bound = p.c_inf() - 0.1 * p.iota();
        assert!(!g_range_check(&[0.0, bound + 1.0], &p, 0.1));
    }

    #[test]
    fn g_range_along_pam_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let p = random_problem(&mut rng, 8, 3);
        let mut cfg = default_schedule(&p, 0.2, Algorithm::Pam).unwrap();
        cfg.max_iters = 500;
        cfg.stop_on_residuals = false;
        let res = solve_pam(&p, &cfg).unwrap();
        assert_eq!(res.trace.len(), 500);
        assert!(res.trace.iter().all(|r| r.g_range_ok));
    }
}
