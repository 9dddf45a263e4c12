//! Transportation simplex for the exact balanced transport LP.
//!
//! The basis is a spanning tree on the bipartite graph of rows and columns
//! with exactly `m + n - 1` cells, some of which may carry zero flow. The
//! start is the northwest-corner staircase, which is always a tree. Entering
//! and leaving cells follow Bland's smallest-index rule.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};

use crate::error::{EotError, Result};
use crate::scalar::Scalar;

/// Largest side accepted by the exact solver.
pub const EXACT_SIZE_LIMIT: usize = 512;

pub(crate) struct TransportSolution<T> {
    pub value: T,
    pub plan: Array2<T>,
    pub pivots: usize,
}

struct Basis<T> {
    m: usize,
    n: usize,
    /// Basic cells as `(i, j)`.
    cells: Vec<(usize, usize)>,
    flow: Vec<T>,
}

impl<T: Scalar> Basis<T> {
    fn northwest(a: &[T], b: &[T]) -> Self {
        let (m, n) = (a.len(), b.len());
        let (mut s, mut d) = (a.to_vec(), b.to_vec());
        let (mut i, mut j) = (0, 0);
        let mut cells = Vec::with_capacity(m + n - 1);
        let mut flow = Vec::with_capacity(m + n - 1);
        loop {
            let x = if i == m - 1 && j == n - 1 { s[i].max(T::zero()) } else { s[i].min(d[j]).max(T::zero()) };
            cells.push((i, j));
            flow.push(x);
            s[i] -= x;
            d[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || s[i] <= d[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        Basis { m, n, cells, flow }
    }

    /// Adjacency lists over nodes `0..m` (rows) and `m..m+n` (columns),
    /// each entry holding `(neighbor, basis position)`.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (pos, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push((self.m + j, pos));
            adj[self.m + j].push((i, pos));
        }
        adj
    }

    /// Potentials with `u_0 = 0` and `u_i + v_j = M_ij` on basic cells.
    fn potentials(&self, adj: &[Vec<(usize, usize)>], cost: &ArrayView2<'_, T>) -> (Vec<T>, Vec<T>) {
        let mut pot = vec![T::zero(); self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(node) = queue.pop_front() {
            for &(next, pos) in &adj[node] {
                if seen[next] {
                    continue;
                }
                let (i, j) = self.cells[pos];
                pot[next] = cost[[i, j]] - pot[node];
                seen[next] = true;
                queue.push_back(next);
            }
        }
        let v = pot.split_off(self.m);
        (pot, v)
    }

    /// Basis positions along the tree path from row `i` to column `j`.
    fn path(&self, adj: &[Vec<(usize, usize)>], i: usize, j: usize) -> Vec<usize> {
        let total = self.m + self.n;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; total];
        let mut seen = vec![false; total];
        let target = self.m + j;
        let mut queue = VecDeque::from([i]);
        seen[i] = true;
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &(next, pos) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, pos));
                    queue.push_back(next);
                }
            }
        }
        let mut out = Vec::new();
        let mut node = target;
        while let Some((prev, pos)) = parent[node] {
            out.push(pos);
            node = prev;
        }
        out.reverse();
        out
    }
}

/// Minimum of `<P, cost>` over couplings `P` of `a` and `b`.
pub(crate) fn solve_transport<T: Scalar>(a: &[T], b: &[T], cost: ArrayView2<'_, T>) -> Result<TransportSolution<T>> {
    let (m, n) = cost.dim();
    if a.len() != m || b.len() != n || m == 0 || n == 0 {
        return Err(EotError::ShapeMismatch(format!("cost is {m}x{n}, marginals have {} and {}", a.len(), b.len())));
    }
    let side = m.max(n);
    if side > EXACT_SIZE_LIMIT {
        return Err(EotError::SizeLimit { what: "exact transport", size: side, limit: EXACT_SIZE_LIMIT });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(EotError::NonFinite { iter: None });
    }
    let scale = cost.iter().fold(T::one(), |acc, c| acc.max(c.abs()));
    let tol = T::tol(1e-12) * scale;
    let mut basis = Basis::northwest(a, b);
    let max_pivots = 50 * m * n + 1000;
    let mut pivots = 0;

    loop {
        let adj = basis.adjacency();
        let (u, v) = basis.potentials(&adj, &cost);
        let mut in_basis = vec![false; m * n];
        for &(i, j) in &basis.cells {
            in_basis[i * n + j] = true;
        }
        let entering = (0..m * n).find(|&idx| {
            let (i, j) = (idx / n, idx % n);
            !in_basis[idx] && cost[[i, j]] - u[i] - v[j] < -tol
        });
        let Some(idx) = entering else { break };
        if pivots >= max_pivots {
            return Err(EotError::PivotLimit { pivots });
        }
        pivots += 1;
        let (ei, ej) = (idx / n, idx % n);
        let cycle = basis.path(&adj, ei, ej);
        // Edges at even positions lose flow, odd positions gain.
        let leave = cycle
            .iter()
            .step_by(2)
            .copied()
            .min_by(|&p, &q| {
                let (cp, cq) = (basis.cells[p], basis.cells[q]);
                basis.flow[p]
                    .partial_cmp(&basis.flow[q])
                    .expect("finite flow")
                    .then((cp.0 * n + cp.1).cmp(&(cq.0 * n + cq.1)))
            })
            .expect("cycle has a losing edge");
        let theta = basis.flow[leave];
        for (k, &pos) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                basis.flow[pos] = (basis.flow[pos] - theta).max(T::zero());
            } else {
                basis.flow[pos] += theta;
            }
        }
        basis.cells[leave] = (ei, ej);
        basis.flow[leave] = theta;
    }

    let mut plan = Array2::zeros((m, n));
    for (&(i, j), &x) in basis.cells.iter().zip(&basis.flow) {
        plan[[i, j]] = x;
    }
    let value = crate::scalar::ordered_sum(basis.cells.iter().zip(&basis.flow).map(|(&(i, j), &x)| x * cost[[i, j]]));
    Ok(TransportSolution { value, plan, pivots })
}
