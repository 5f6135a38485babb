//! Exact discrete optimal transport between equal-size uniform empirical
//! measures. Downstream diagnostics only ever compare matched batches, so the
//! squared-cost assignment problem (Monge form on n-point supports) is all
//! that is needed; no general LP machinery.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Finite point cloud with uniform weights 1/n, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if points.is_empty() {
            return Err(Error::InvalidParameter("empirical measure must be non-empty".into()));
        }
        if points.len() % dim != 0 {
            return Err(Error::InvalidParameter(format!(
                "point buffer length {} not divisible by dim {}",
                points.len(),
                dim
            )));
        }
        if !points.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("empirical measure contains non-finite point".into()));
        }
        Ok(Self { dim, points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidParameter("inconsistent point dimensions".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// First `k` points (used for paired subsampling of common-seed clouds).
    pub fn head(&self, k: usize) -> Result<Self> {
        let k = k.min(self.len());
        Self::new(self.dim, self.points[..k * self.dim].to_vec())
    }
}

/// A bijective coupling between two n-point measures together with its
/// transport cost `(1/n) sum_i ||x_i - y_{assignment[i]}||^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub assignment: Vec<usize>,
    pub cost: f64,
}

impl Coupling {
    pub fn w2(&self) -> f64 {
        self.cost.sqrt()
    }
}

/// Largest instance handled by [`w2_bruteforce`].
pub const BRUTEFORCE_MAX: usize = 9;

/// Largest instance on which [`w2_exact`] enforces the lexicographic
/// tie-break by explicit search. Cost ties are a measure-zero event for
/// clouds with generic coordinates, so larger instances return the
/// assignment solver's (deterministic) optimum directly.
pub const LEX_REFINE_MAX: usize = 12;

fn check_pair(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<usize> {
    if mu.dim != nu.dim {
        return Err(Error::DimensionMismatch { expected: mu.dim, got: nu.dim });
    }
    if mu.len() != nu.len() {
        return Err(Error::SizeMismatch { left: mu.len(), right: nu.len() });
    }
    Ok(mu.len())
}

fn cost_matrix(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Vec<f64> {
    let n = mu.len();
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        let xi = mu.point(i);
        for j in 0..n {
            c[i * n + j] = linalg::dist_sq(xi, nu.point(j));
        }
    }
    c
}

/// Total cost of `assignment`, summed in ascending row order so that every
/// caller (solver, oracle, refinement) compares bit-identical sums.
fn assignment_cost(c: &[f64], n: usize, assignment: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &j) in assignment.iter().enumerate() {
        total += c[i * n + j];
    }
    total
}

/// Minimum-cost bijection via shortest augmenting paths with potentials
/// (Jonker-Volgenant style, O(n^3)). Returns `assignment[row] = col`.
fn solve_assignment(c: &[f64], n: usize) -> Vec<usize> {
    let inf = f64::INFINITY;
    // col_row[j] = row currently assigned to column j; index n is the virtual
    // start column for each augmentation.
    let mut row_pot = vec![0.0; n];
    let mut col_pot = vec![0.0; n + 1];
    let mut col_row = vec![usize::MAX; n + 1];
    for row in 0..n {
        col_row[n] = row;
        let mut j0 = n;
        let mut min_to = vec![inf; n + 1];
        let mut prev = vec![n; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = inf;
            let mut j1 = n;
            for j in 0..n {
                if !used[j] {
                    let reduced = c[i0 * n + j] - row_pot[i0] - col_pot[j];
                    if reduced < min_to[j] {
                        min_to[j] = reduced;
                        prev[j] = j0;
                    }
                    if min_to[j] < delta {
                        delta = min_to[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    row_pot[col_row[j]] += delta;
                    col_pot[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == usize::MAX {
                break;
            }
        }
        // augment along the alternating path
        while j0 != n {
            let j1 = prev[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
        }
    }
    let mut assignment = vec![0; n];
    for j in 0..n {
        assignment[col_row[j]] = j;
    }
    assignment
}

/// Among assignments of equal (bitwise) cost, rewrite to the lexicographically
/// smallest by fixing rows in order and testing completability with a solver
/// call on the residual instance.
fn lex_refine(c: &[f64], n: usize, mut assignment: Vec<usize>) -> Vec<usize> {
    let mut best_cost = assignment_cost(c, n, &assignment);
    let mut free_cols: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let current = assignment[i];
        for &j in free_cols.iter() {
            if j >= current {
                break; // free_cols stays sorted; nothing smaller remains
            }
            // candidate: row i -> j, remaining rows re-solved optimally
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&col| col != j).collect();
            let m = rest_cols.len();
            let mut candidate = assignment.clone();
            candidate[i] = j;
            if m > 0 {
                let mut sub = vec![0.0; m * m];
                for (ri, row) in (i + 1..n).enumerate() {
                    for (rj, &col) in rest_cols.iter().enumerate() {
                        sub[ri * m + rj] = c[row * n + col];
                    }
                }
                let sub_assignment = solve_assignment(&sub, m);
                for (ri, row) in (i + 1..n).enumerate() {
                    candidate[row] = rest_cols[sub_assignment[ri]];
                }
            }
            let cand_cost = assignment_cost(c, n, &candidate);
            if cand_cost <= best_cost {
                best_cost = cand_cost;
                assignment = candidate;
                break;
            }
        }
        let fixed = assignment[i];
        free_cols.retain(|&col| col != fixed);
    }
    assignment
}

/// Exact squared-W2 optimal coupling between equal-size uniform measures.
///
/// Deterministic; among cost ties the lexicographically smallest assignment is
/// returned for instances up to [`LEX_REFINE_MAX`] points.
pub fn w2_exact(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<Coupling> {
    let n = check_pair(mu, nu)?;
    let c = cost_matrix(mu, nu);
    let mut assignment = solve_assignment(&c, n);
    if n <= LEX_REFINE_MAX {
        assignment = lex_refine(&c, n, assignment);
    }
    let cost = assignment_cost(&c, n, &assignment) / n as f64;
    Ok(Coupling { assignment, cost })
}

/// Exhaustive minimum over all n! bijections; the test oracle for
/// [`w2_exact`]. Permutations are visited in lexicographic order and replaced
/// only on strict improvement, so ties resolve to the smallest assignment.
pub fn w2_bruteforce(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<Coupling> {
    let n = check_pair(mu, nu)?;
    if n > BRUTEFORCE_MAX {
        return Err(Error::TooLarge { n, max: BRUTEFORCE_MAX });
    }
    let c = cost_matrix(mu, nu);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut perm = Vec::with_capacity(n);
    let mut used = vec![false; n];
    enumerate_perms(&c, n, &mut perm, &mut used, &mut best);
    let (_, assignment) = best.expect("non-empty measure always yields an assignment");
    let cost = assignment_cost(&c, n, &assignment) / n as f64;
    Ok(Coupling { assignment, cost })
}

fn enumerate_perms(
    c: &[f64],
    n: usize,
    perm: &mut Vec<usize>,
    used: &mut [bool],
    best: &mut Option<(f64, Vec<usize>)>,
) {
    if perm.len() == n {
        let cost = assignment_cost(c, n, perm);
        match best {
            Some((best_cost, _)) if cost >= *best_cost => {}
            _ => *best = Some((cost, perm.clone())),
        }
        return;
    }
    for j in 0..n {
        if !used[j] {
            used[j] = true;
            perm.push(j);
            enumerate_perms(c, n, perm, used, best);
            perm.pop();
            used[j] = false;
        }
    }
}

/// Paired-index transport cost `(1/n) sum_i ||x_i - y_i||^2`.
///
/// When both clouds are pushforwards of common base draws this is the cost of
/// a valid coupling, hence an upper bound on the squared Wasserstein distance.
pub fn coupling_displacement_cost(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    let n = check_pair(mu, nu)?;
    let mut total = 0.0;
    for i in 0..n {
        total += linalg::dist_sq(mu.point(i), nu.point(i));
    }
    Ok(total / n as f64)
}
