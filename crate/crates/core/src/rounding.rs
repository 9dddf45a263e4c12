//! Primal feasibility recovery.
//!
//! Dual iterates only give plans whose row marginal matches `a`. Recovery
//! splits the target marginals among agents (`margins`) so that every
//! per-agent column correction points the same way, then rounds each agent's
//! plan onto its own transport polytope (`round_plan`).

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{EotError, Result};
use crate::problem::{EotProblem, PlanTensor};
use crate::scalar::{l1_dist, ordered_sum, Scalar};

/// Row-marginal mismatch beyond which `margins` refuses its input.
pub const MARGINS_INPUT_TOL: f64 = 1e-6;
/// Entries above `-NEGATIVITY_TOL` count as nonnegative after repair.
pub const NEGATIVITY_TOL: f64 = 1e-14;

/// Per-agent target marginals `(a^k, b^k)`, stored as `N x n` arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginPair<T> {
    pub a_k: Array2<T>,
    pub b_k: Array2<T>,
    /// Number of four-entry transfers the repair loop performed.
    pub repair_steps: usize,
    /// Total negativity `sum max(0, -b^k_j)` before each repair step, then after the last.
    pub negativity_trace: Vec<T>,
    /// Set when the input rows had to be rescaled onto `a` first.
    pub rows_aligned: bool,
}

/// Rescales every row `i` of all agents by `a_i / r(sum_k pi^k)_i` so the
/// summed row marginal equals `a`. A row with no mass but `a_i > 0` receives
/// `a_i b` on agent 0.
pub fn align_rows<T: Scalar>(plans: &PlanTensor<T>, a: &[T], b: &[T]) -> PlanTensor<T> {
    let row = plans.row_marginal();
    let mut pi = plans.pi().clone();
    let (agents, n, _) = pi.dim();
    let total_b = ordered_sum(b.iter().copied());
    for i in 0..n {
        if row[i] > T::zero() {
            let s = a[i] / row[i];
            for k in 0..agents {
                for j in 0..n {
                    pi[[k, i, j]] *= s;
                }
            }
        } else if a[i] > T::zero() {
            for j in 0..n {
                pi[[0, i, j]] = a[i] * b[j] / total_b;
            }
        }
    }
    PlanTensor::unchecked(pi)
}

fn agent_col_marginals<T: Scalar>(pi: &Array3<T>) -> Array2<T> {
    pi.sum_axis(Axis(1))
}

fn agent_row_marginals<T: Scalar>(pi: &Array3<T>) -> Array2<T> {
    pi.sum_axis(Axis(2))
}

/// Builds `(a^k, b^k)` with `a^k = r(pi^k)` and `b^k` nonnegative, summing to
/// `b`, balancing each agent's mass, and with `b^k_j - c(pi^k)_j` of one sign
/// per column `j`.
pub fn margins<T: Scalar>(plans: &PlanTensor<T>, a: &[T], b: &[T]) -> Result<MarginPair<T>> {
    let (agents, n, _) = plans.pi().dim();
    if a.len() != n || b.len() != n {
        return Err(EotError::ShapeMismatch(format!("marginals of length {}/{} for plans of size {n}", a.len(), b.len())));
    }
    let residual = l1_dist(&plans.row_marginal(), a);
    if !(residual <= T::tol(MARGINS_INPUT_TOL)) {
        return Err(EotError::InfeasibleInput { residual: residual.to_f64_lossy() });
    }
    let rows_aligned = residual > T::zero();
    let aligned;
    let pi = if rows_aligned {
        aligned = align_rows(plans, a, b);
        aligned.pi()
    } else {
        plans.pi()
    };

    let a_k = agent_row_marginals(pi);
    let col_k = agent_col_marginals(pi);
    let mut b_k = col_k.clone();
    let n_agents = T::from_usize_lossy(agents);
    for j in 0..n {
        let total: T = ordered_sum((0..agents).map(|k| col_k[[k, j]]));
        let share = (b[j] - total) / n_agents;
        for k in 0..agents {
            b_k[[k, j]] += share;
        }
    }

    let neg_tol = T::tol(NEGATIVITY_TOL);
    let negativity = |bk: &Array2<T>| ordered_sum(bk.iter().map(|&x| (-x).max(T::zero())));
    let mut negativity_trace = vec![negativity(&b_k)];
    let max_steps = 100 * agents * n + 100;
    let mut repair_steps = 0;
    while let Some((k, j)) = first_negative(&b_k, neg_tol) {
        if repair_steps >= max_steps {
            return Err(EotError::StalledRepair { agent: k, column: j, value: b_k[[k, j]].to_f64_lossy() });
        }
        let stalled = || EotError::StalledRepair { agent: k, column: j, value: b_k[[k, j]].to_f64_lossy() };
        let (j2, surplus) = (0..n)
            .map(|jj| (jj, b_k[[k, jj]] - col_k[[k, jj]]))
            .fold(None, |best: Option<(usize, T)>, cand| match best {
                Some(bst) if bst.1 >= cand.1 => Some(bst),
                _ => Some(cand),
            })
            .ok_or_else(stalled)?;
        let (k2, donor) = (0..agents)
            .map(|kk| (kk, b_k[[kk, j]]))
            .fold(None, |best: Option<(usize, T)>, cand| match best {
                Some(bst) if bst.1 >= cand.1 => Some(bst),
                _ => Some(cand),
            })
            .ok_or_else(stalled)?;
        if !(surplus > T::zero()) || !(donor > T::zero()) {
            return Err(stalled());
        }
        let theta = b_k[[k, j]].abs().min(donor).min(surplus);
        b_k[[k, j]] += theta;
        b_k[[k, j2]] -= theta;
        b_k[[k2, j]] -= theta;
        b_k[[k2, j2]] += theta;
        repair_steps += 1;
        negativity_trace.push(negativity(&b_k));
    }
    b_k.mapv_inplace(|x| x.max(T::zero()));
    Ok(MarginPair { a_k, b_k, repair_steps, negativity_trace, rows_aligned })
}

fn first_negative<T: Scalar>(b_k: &Array2<T>, tol: T) -> Option<(usize, usize)> {
    b_k.indexed_iter().find(|(_, &v)| v < -tol).map(|(idx, _)| idx)
}

/// Rounds a nonnegative matrix onto `{pi >= 0 : r(pi) = a, c(pi) = b}`:
/// scale down oversubscribed rows, then columns, then spread the remaining
/// deficits as a rank-one correction.
pub fn round_plan<T: Scalar>(pi: ArrayView2<'_, T>, a: &[T], b: &[T]) -> Result<Array2<T>> {
    let (rows, cols) = pi.dim();
    if a.len() != rows || b.len() != cols {
        return Err(EotError::ShapeMismatch(format!(
            "round_plan got a {rows}x{cols} plan with targets of length {}/{}",
            a.len(),
            b.len()
        )));
    }
    let (sa, sb) = (ordered_sum(a.iter().copied()), ordered_sum(b.iter().copied()));
    let tol = T::tol(1e-10);
    if (sa - sb).abs() > tol {
        return Err(EotError::InvalidConfig(format!("round_plan targets carry different mass ({sa} vs {sb})")));
    }
    if a.iter().chain(b).any(|&x| x < -tol) || pi.iter().any(|&x| !(x >= T::zero()) || !x.is_finite()) {
        return Err(EotError::InvalidConfig("round_plan needs nonnegative inputs".into()));
    }
    let mut out = pi.to_owned();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let r = ordered_sum(row.iter().copied());
        // A zero row keeps x_i = 1; its deficit lands in err_a.
        if r > T::zero() {
            let x = (a[i].max(T::zero()) / r).min(T::one());
            row.mapv_inplace(|v| v * x);
        }
    }
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let c = ordered_sum(col.iter().copied());
        if c > T::zero() {
            let y = (b[j].max(T::zero()) / c).min(T::one());
            col.mapv_inplace(|v| v * y);
        }
    }
    let err_a: Vec<T> = out
        .axis_iter(Axis(0))
        .zip(a)
        .map(|(row, &ai)| (ai - ordered_sum(row.iter().copied())).max(T::zero()))
        .collect();
    let err_b: Vec<T> = out
        .axis_iter(Axis(1))
        .zip(b)
        .map(|(col, &bj)| (bj - ordered_sum(col.iter().copied())).max(T::zero()))
        .collect();
    let norm = ordered_sum(err_a.iter().copied());
    if norm == T::zero() {
        return Ok(out);
    }
    for i in 0..rows {
        for j in 0..cols {
            out[[i, j]] += err_a[i] * err_b[j] / norm;
        }
    }
    Ok(out)
}

/// Output of [`recover_primal_detailed`].
#[derive(Debug, Clone)]
pub struct Recovery<T> {
    pub plan: PlanTensor<T>,
    pub margins: MarginPair<T>,
    /// `sum_k ||hat pi^k - pi^k||_1` against the row-aligned input.
    pub movement_l1: T,
}

/// Margins followed by per-agent rounding; returns a feasible decomposition.
pub fn recover_primal<T: Scalar>(plans: &PlanTensor<T>, problem: &EotProblem<T>) -> Result<PlanTensor<T>> {
    Ok(recover_primal_detailed(plans, problem)?.plan)
}

pub fn recover_primal_detailed<T: Scalar>(plans: &PlanTensor<T>, problem: &EotProblem<T>) -> Result<Recovery<T>> {
    if plans.pi().dim() != problem.costs().dim() {
        return Err(EotError::ShapeMismatch("plan tensor does not match the problem".into()));
    }
    let residual = l1_dist(&plans.row_marginal(), problem.a());
    if !(residual <= T::tol(MARGINS_INPUT_TOL)) {
        return Err(EotError::InfeasibleInput { residual: residual.to_f64_lossy() });
    }
    let aligned = if residual > T::zero() { align_rows(plans, problem.a(), problem.b()) } else { plans.clone() };
    let pair = margins(&aligned, problem.a(), problem.b())?;
    let (agents, n, _) = aligned.pi().dim();
    let mut out = Array3::zeros((agents, n, n));
    for k in 0..agents {
        let a_k: Vec<T> = pair.a_k.row(k).to_vec();
        let b_k: Vec<T> = pair.b_k.row(k).to_vec();
        let rounded = round_plan(aligned.agent(k), &a_k, &b_k)?;
        out.index_axis_mut(Axis(0), k).assign(&rounded);
    }
    let movement_l1 = ordered_sum(out.iter().zip(aligned.pi().iter()).map(|(&x, &y)| (x - y).abs()));
    Ok(Recovery { plan: PlanTensor::checked(out, problem), margins: pair, movement_l1 })
}
