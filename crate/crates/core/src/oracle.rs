//! Brute-force ground truth for tiny instances.
//!
//! [`brute_saddle`] grid-searches the minimax problem directly over the set
//! of plan decompositions, and [`enumerate_transport_vertices`] solves a
//! small transport problem by listing every basic feasible solution. Neither
//! shares code with the solvers or the transportation simplex.

use itertools::Itertools;
use ndarray::{Array3, ArrayView2};

use crate::error::{EotError, Result};
use crate::problem::{EotProblem, PlanTensor};
use crate::scalar::Scalar;

/// Largest side accepted by [`enumerate_transport_vertices`].
pub const VERTEX_SIZE_LIMIT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    /// Intervals per free coordinate on the coarse pass.
    pub resolution: usize,
    /// Resolution multiplier for the refinement pass around the best cell.
    pub refine: usize,
    /// Cap on grid points per pass.
    pub max_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { resolution: 24, refine: 10, max_points: 100_000_000 }
    }
}

#[derive(Debug, Clone)]
pub struct SaddleOracle<T> {
    /// `min over plans of max_k <pi^k, C^k>`, from above.
    pub value: T,
    /// `value` exceeds the true minimum by at most this much.
    pub error_bound: T,
    pub plans: PlanTensor<T>,
    /// Best weights found for the dual side.
    pub lambda: Vec<T>,
    /// `max over lambda of min over plans of l(pi, lambda)`, from below.
    pub dual_value: T,
}

/// Coupling of a 2x2 problem with `P_11 = p`, in row-major cell order.
fn coupling2(a: &[f64], b: &[f64], p: f64) -> [f64; 4] {
    [p, a[0] - p, b[0] - p, a[1] - b[0] + p]
}

fn p_range(a: &[f64], b: &[f64]) -> (f64, f64) {
    ((a[0] + b[0] - 1.0).max(0.0), a[0].min(b[0]))
}

fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|s| if s == steps { hi } else { lo + (hi - lo) * s as f64 / steps as f64 }).collect()
}

struct Search<'a> {
    a: &'a [f64],
    b: &'a [f64],
    c1: [f64; 4],
    c2: Option<[f64; 4]>,
}

impl Search<'_> {
    /// Agent costs for coupling weight `p` and split fractions `t`.
    fn costs(&self, p: f64, t: &[f64; 4]) -> (f64, f64) {
        let cp = coupling2(self.a, self.b, p);
        match self.c2 {
            None => ((0..4).map(|c| cp[c] * self.c1[c]).sum(), f64::NEG_INFINITY),
            Some(c2) => (
                (0..4).map(|c| t[c] * cp[c] * self.c1[c]).sum(),
                (0..4).map(|c| (1.0 - t[c]) * cp[c] * c2[c]).sum(),
            ),
        }
    }

    /// Best `(value, p, t)` over the product of the given axes.
    fn scan(&self, ps: &[f64], ts: &[Vec<f64>; 4]) -> (f64, f64, [f64; 4]) {
        let mut best = (f64::INFINITY, ps[0], [1.0; 4]);
        for &p in ps {
            if self.c2.is_none() {
                let v = self.costs(p, &[1.0; 4]).0;
                if v < best.0 {
                    best = (v, p, [1.0; 4]);
                }
                continue;
            }
            for &t0 in &ts[0] {
                for &t1 in &ts[1] {
                    for &t2 in &ts[2] {
                        for &t3 in &ts[3] {
                            let t = [t0, t1, t2, t3];
                            let (x, y) = self.costs(p, &t);
                            let v = x.max(y);
                            if v < best.0 {
                                best = (v, p, t);
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

/// Grid search of `min over plans of max_k <pi^k, C^k>` for `n = 2`, `N <= 2`.
///
/// The sum plan is parameterized by `P_11` and each agent's share of a cell
/// by a fraction in `[0, 1]`, so every grid point is feasible. A second pass
/// refines around the best coarse point. The error bound is that of the
/// coarse pass, `c_inf (h_t / 2 + 2 h_p)`, which the refinement can only improve on.
pub fn brute_saddle<T: Scalar>(problem: &EotProblem<T>, grid: &GridSpec) -> Result<SaddleOracle<T>> {
    let (n, agents) = (problem.n(), problem.agents());
    if n != 2 || agents > 2 {
        return Err(EotError::TooLarge(format!("brute_saddle needs n = 2 and N <= 2, got n = {n}, N = {agents}")));
    }
    if grid.resolution == 0 || grid.refine == 0 {
        return Err(EotError::InvalidConfig("grid resolution must be positive".into()));
    }
    let free = if agents == 2 { 5 } else { 1 };
    let r = grid.resolution;
    let points = (r + 1).checked_pow(free).unwrap_or(usize::MAX);
    let fine_points = (2 * grid.refine + 1).checked_pow(free).unwrap_or(usize::MAX);
    if points > grid.max_points || fine_points > grid.max_points {
        return Err(EotError::TooLarge(format!("{} grid points exceed the cap {}", points.max(fine_points), grid.max_points)));
    }

    let a: Vec<f64> = problem.a().iter().map(|x| x.to_f64_lossy()).collect();
    let b: Vec<f64> = problem.b().iter().map(|x| x.to_f64_lossy()).collect();
    let flat = |k: usize| {
        let c = problem.cost(k);
        [c[[0, 0]], c[[0, 1]], c[[1, 0]], c[[1, 1]]].map(|x| x.to_f64_lossy())
    };
    let search = Search { a: &a, b: &b, c1: flat(0), c2: (agents == 2).then(|| flat(1)) };
    let (lo, hi) = p_range(&a, &b);
    let h_p = (hi - lo) / r as f64;
    let h_t = 1.0 / r as f64;

    let unit = linspace(0.0, 1.0, r);
    let coarse = search.scan(&linspace(lo, hi, r), &[unit.clone(), unit.clone(), unit.clone(), unit]);
    let (_, p0, t0) = coarse;
    let window = |x: f64, h: f64, lo: f64, hi: f64| linspace((x - h).max(lo), (x + h).min(hi), 2 * grid.refine);
    let fine_t = [0, 1, 2, 3].map(|c| if agents == 2 { window(t0[c], h_t, 0.0, 1.0) } else { vec![1.0] });
    let fine = search.scan(&window(p0, h_p, lo, hi), &fine_t);
    let (value, p, t) = if fine.0 <= coarse.0 { fine } else { coarse };

    let cp = coupling2(&a, &b, p);
    let mut pi = Array3::zeros((agents, 2, 2));
    for c in 0..4 {
        let (i, j) = (c / 2, c % 2);
        pi[[0, i, j]] = T::lit(t[c] * cp[c]);
        if agents == 2 {
            pi[[1, i, j]] = T::lit((1.0 - t[c]) * cp[c]);
        }
    }
    let c_inf = problem.c_inf().to_f64_lossy();
    let (lambda, dual_value) = best_weights(&search)?;
    Ok(SaddleOracle {
        value: T::lit(value),
        error_bound: T::lit(c_inf * (h_t / 2.0 + 2.0 * h_p)),
        plans: PlanTensor::checked(pi, problem),
        lambda: lambda.into_iter().map(T::lit).collect(),
        dual_value: T::lit(dual_value),
    })
}

/// Grid over `lambda = (s, 1 - s)` of the exact inner minimum.
fn best_weights(search: &Search<'_>) -> Result<(Vec<f64>, f64)> {
    let inner = |cost: [f64; 4]| {
        let m = ndarray::arr2(&[[cost[0], cost[1]], [cost[2], cost[3]]]);
        enumerate_transport_vertices(search.a, search.b, m.view())
    };
    let Some(c2) = search.c2 else {
        return Ok((vec![1.0], inner(search.c1)?));
    };
    let mut best = (vec![1.0, 0.0], f64::NEG_INFINITY);
    for s in linspace(0.0, 1.0, 2000) {
        let m = [0, 1, 2, 3].map(|c| (s * search.c1[c]).min((1.0 - s) * c2[c]));
        let v = inner(m)?;
        if v > best.1 {
            best = (vec![s, 1.0 - s], v);
        }
    }
    Ok(best)
}

/// Grid search of `min over plans of sum_k lambda_k <pi^k, C^k>` for
/// `n = 2`, `N <= 2`. The objective is linear in each split fraction, so the
/// search over fractions is exact on the grid endpoints.
pub fn brute_weighted_min<T: Scalar>(problem: &EotProblem<T>, lambda: &[T], grid: &GridSpec) -> Result<T> {
    let (n, agents) = (problem.n(), problem.agents());
    if n != 2 || agents > 2 || lambda.len() != agents {
        return Err(EotError::TooLarge(format!("brute_weighted_min needs n = 2 and N <= 2, got n = {n}, N = {agents}")));
    }
    let a: Vec<f64> = problem.a().iter().map(|x| x.to_f64_lossy()).collect();
    let b: Vec<f64> = problem.b().iter().map(|x| x.to_f64_lossy()).collect();
    let weighted = |k: usize| {
        let c = problem.cost(k);
        let l = lambda[k].to_f64_lossy();
        [c[[0, 0]], c[[0, 1]], c[[1, 0]], c[[1, 1]]].map(|x| l * x.to_f64_lossy())
    };
    let c1 = weighted(0);
    let c2 = if agents == 2 { weighted(1) } else { c1 };
    let (lo, hi) = p_range(&a, &b);
    let mut best = f64::INFINITY;
    for p in linspace(lo, hi, grid.resolution.max(1) * grid.refine.max(1)) {
        let cp = coupling2(&a, &b, p);
        for split in (0..4).map(|_| [0.0, 1.0]).multi_cartesian_product() {
            let v: f64 = (0..4).map(|c| split[c] * cp[c] * c1[c] + (1.0 - split[c]) * cp[c] * c2[c]).sum();
            best = best.min(v);
        }
    }
    Ok(T::lit(best))
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut root = x;
    while parent[root] != root {
        root = parent[root];
    }
    let mut cur = x;
    while parent[cur] != root {
        let next = parent[cur];
        parent[cur] = root;
        cur = next;
    }
    root
}

/// Flows on a spanning tree of cells, found by repeatedly settling a leaf.
fn tree_flows(m: usize, n: usize, cells: &[(usize, usize)], a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut rest: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut degree = vec![0usize; m + n];
    for &(i, j) in cells {
        degree[i] += 1;
        degree[m + j] += 1;
    }
    let mut flow = vec![0.0; cells.len()];
    let mut done = vec![false; cells.len()];
    for _ in 0..cells.len() {
        let (e, leaf) = cells
            .iter()
            .enumerate()
            .filter(|&(e, _)| !done[e])
            .find_map(|(e, &(i, j))| {
                if degree[i] == 1 {
                    Some((e, i))
                } else if degree[m + j] == 1 {
                    Some((e, m + j))
                } else {
                    None
                }
            })
            .expect("a tree always has a leaf");
        let (i, j) = cells[e];
        let other = if leaf == i { m + j } else { i };
        flow[e] = rest[leaf];
        rest[other] -= rest[leaf];
        rest[leaf] = 0.0;
        degree[i] -= 1;
        degree[m + j] -= 1;
        done[e] = true;
    }
    flow
}

/// Minimum transport cost over all basic feasible solutions of the
/// transport polytope of `a` and `b`.
pub fn enumerate_transport_vertices<T: Scalar>(a: &[T], b: &[T], cost: ArrayView2<'_, T>) -> Result<T> {
    let (m, n) = cost.dim();
    if a.len() != m || b.len() != n || m == 0 || n == 0 {
        return Err(EotError::ShapeMismatch(format!("cost is {m}x{n}, marginals have {} and {}", a.len(), b.len())));
    }
    if m.max(n) > VERTEX_SIZE_LIMIT {
        return Err(EotError::TooLarge(format!("vertex enumeration needs sides <= {VERTEX_SIZE_LIMIT}, got {m}x{n}")));
    }
    let a: Vec<f64> = a.iter().map(|x| x.to_f64_lossy()).collect();
    let b: Vec<f64> = b.iter().map(|x| x.to_f64_lossy()).collect();
    let all: Vec<(usize, usize)> = (0..m).cartesian_product(0..n).collect();
    let mut best = f64::INFINITY;
    for cells in all.iter().copied().combinations(m + n - 1) {
        let mut parent: Vec<usize> = (0..m + n).collect();
        let spanning = cells.iter().all(|&(i, j)| {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, m + j));
            parent[ri] = rj;
            ri != rj
        });
        if !spanning {
            continue;
        }
        let flow = tree_flows(m, n, &cells, &a, &b);
        if flow.iter().any(|&x| x < -1e-12) {
            continue;
        }
        let v: f64 = cells.iter().zip(&flow).map(|(&(i, j), &x)| x * cost[[i, j]].to_f64_lossy()).sum();
        best = best.min(v);
    }
    Ok(T::lit(best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn problem(a: [f64; 2], b: [f64; 2], costs: &[Array2<f64>]) -> EotProblem<f64> {
        EotProblem::<f64>::from_matrices(a.to_vec(), b.to_vec(), costs).unwrap()
    }

    #[test]
    fn single_agent_diagonal() {
        let p = problem([0.5, 0.5], [0.5, 0.5], &[array![[0.0, 1.0], [1.0, 0.0]]]);
        let o = brute_saddle(&p, &GridSpec::default()).unwrap();
        assert!(o.value.abs() < 1e-15);
        let pi = o.plans.agent(0);
        assert!((pi[[0, 0]] - 0.5).abs() < 1e-12 && (pi[[1, 1]] - 0.5).abs() < 1e-12);
        assert_eq!(o.lambda, vec![1.0]);
    }

    #[test]
    fn identical_agents_split_evenly() {
        let c = array![[0.3, 1.0], [0.8, 0.2]];
        let single = brute_saddle(&problem([0.4, 0.6], [0.5, 0.5], std::slice::from_ref(&c)), &GridSpec::default()).unwrap();
        let pair_problem = problem([0.4, 0.6], [0.5, 0.5], &[c.clone(), c]);
        let pair = brute_saddle(&pair_problem, &GridSpec::default()).unwrap();
        assert!((pair.value - single.value / 2.0).abs() <= pair.error_bound);
        let costs = pair.plans.agent_costs(&pair_problem);
        assert!((costs[0] - costs[1]).abs() <= 2.0 * pair.error_bound);
    }

    #[test]
    fn constant_costs() {
        let c = Array2::from_elem((2, 2), 0.6);
        let o = brute_saddle(&problem([0.3, 0.7], [0.5, 0.5], &[c.clone(), c]), &GridSpec::default()).unwrap();
        assert!((o.value - 0.3).abs() <= o.error_bound);
    }

    #[test]
    fn dual_value_is_below_primal() {
        let p = problem([0.3, 0.7], [0.6, 0.4], &[array![[0.0, 2.0], [1.0, 0.5]], array![[1.0, 0.2], [0.0, 1.5]]]);
        let o = brute_saddle(&p, &GridSpec::default()).unwrap();
        assert!(o.dual_value <= o.value + 1e-12);
        assert!(o.value - o.dual_value <= o.error_bound + 1e-3);
    }

    #[test]
    fn refinement_stays_within_bound() {
        let p = problem([0.35, 0.65], [0.45, 0.55], &[array![[0.1, 0.9], [0.7, 0.3]], array![[0.6, 0.2], [0.4, 1.0]]]);
        let coarse = brute_saddle(&p, &GridSpec { resolution: 12, ..GridSpec::default() }).unwrap();
        let finer = brute_saddle(&p, &GridSpec { resolution: 24, ..GridSpec::default() }).unwrap();
        assert!((coarse.value - finer.value).abs() <= coarse.error_bound);
    }

    #[test]
    fn rejects_large_instances() {
        let p = EotProblem::<f64>::from_matrices(vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3], &[Array2::zeros((3, 3))]).unwrap();
        assert!(matches!(brute_saddle(&p, &GridSpec::default()), Err(EotError::TooLarge(_))));
        let c = Array2::<f64>::zeros((5, 5));
        assert!(matches!(enumerate_transport_vertices::<f64>(&[0.2; 5], &[0.2; 5], c.view()), Err(EotError::TooLarge(_))));
    }

    #[test]
    fn vertex_examples() {
        let u = [0.5, 0.5];
        assert!(enumerate_transport_vertices::<f64>(&u, &u, array![[0.0, 1.0], [1.0, 0.0]].view()).unwrap().abs() < 1e-15);
        assert!((enumerate_transport_vertices::<f64>(&u, &u, array![[1.0, 1.0], [1.0, 1.0]].view()).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_min_matches_reduction() {
        let p = problem([0.3, 0.7], [0.6, 0.4], &[array![[0.0, 2.0], [1.0, 0.5]], array![[1.0, 0.2], [0.0, 1.5]]]);
        for s in [0.1, 0.37, 0.5, 0.8] {
            let lambda = [s, 1.0 - s];
            let grid = brute_weighted_min(&p, &lambda, &GridSpec::default()).unwrap();
            let exact = crate::diagnostics::min_over_pi(&lambda, &p, crate::diagnostics::OtMethod::Exact).unwrap();
            assert!((grid - exact).abs() < 1e-9, "{grid} vs {exact}");
        }
    }
}
