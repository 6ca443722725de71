//! Dense bounded-variable primal simplex.
//!
//! Maximizes `c^T x` subject to `A x <= b` and `lo <= x <= hi`. Box bounds
//! are handled by the ratio test (bound flips) instead of extra rows, and
//! Bland's rule is used for both the entering and the leaving choice so the
//! pivot sequence is deterministic and cannot cycle. Programs with many rows
//! are solved by adding violated rows to a working subset until the subset
//! optimum satisfies every row.

use crate::error::{Error, Result};
use crate::mdp::DistanceMatrix;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    /// Objective coefficients (maximized).
    pub objective: Vec<f64>,
    /// Rows of `A`.
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal point; meaningful only when `status` is `Optimal`.
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub max_variables: usize,
    pub max_constraints: usize,
    pub pivot_tol: f64,
    pub feasibility_tol: f64,
    /// Above this many rows the solver works on a growing subset of rows.
    pub dense_row_limit: usize,
    pub max_pivots: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_variables: 512,
            max_constraints: 100_000,
            pivot_tol: 1e-9,
            feasibility_tol: 1e-8,
            dense_row_limit: 2_000,
            max_pivots: 1_000_000,
        }
    }
}

impl LinearProgram {
    /// A program with only box constraints.
    pub fn boxed(objective: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        LinearProgram {
            objective,
            rows: Vec::new(),
            rhs: Vec::new(),
            lower,
            upper,
        }
    }

    pub fn num_variables(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn add_row(&mut self, row: Vec<f64>, rhs: f64) {
        self.rows.push(row);
        self.rhs.push(rhs);
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (row, b) in self.rows.iter().zip(&self.rhs) {
            let lhs: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
            worst = worst.max(lhs - b);
        }
        for ((v, lo), hi) in x.iter().zip(&self.lower).zip(&self.upper) {
            worst = worst.max(lo - v).max(v - hi);
        }
        worst
    }

    fn validate(&self, opts: &SolverOptions) -> Result<()> {
        let n = self.objective.len();
        if n > opts.max_variables {
            return Err(Error::DimensionCap(format!(
                "{n} variables > {}",
                opts.max_variables
            )));
        }
        if self.rows.len() > opts.max_constraints {
            return Err(Error::DimensionCap(format!(
                "{} constraints > {}",
                self.rows.len(),
                opts.max_constraints
            )));
        }
        if self.lower.len() != n || self.upper.len() != n || self.rhs.len() != self.rows.len() {
            return Err(Error::InvalidArgument("LP dimensions are inconsistent".into()));
        }
        if self.objective.iter().any(|c| !c.is_finite()) || self.rhs.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("non-finite objective or right-hand side".into()));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != n || row.iter().any(|a| !a.is_finite()) {
                return Err(Error::InvalidArgument(format!("constraint row {i} is malformed")));
            }
        }
        for (j, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi || *lo == f64::INFINITY || *hi == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!("bad bounds on variable {j}")));
            }
        }
        Ok(())
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    solve_with(lp, &SolverOptions::default())
}

pub fn solve_with(lp: &LinearProgram, opts: &SolverOptions) -> Result<LpSolution> {
    lp.validate(opts)?;
    let m = lp.rows.len();
    if m <= opts.dense_row_limit {
        let all: Vec<usize> = (0..m).collect();
        return finish(lp, solve_rows(lp, &all, opts)?, opts);
    }

    let batch = opts.dense_row_limit / 4;
    let mut active: Vec<usize> = Vec::new();
    let mut in_active = vec![false; m];
    loop {
        let sol = solve_rows(lp, &active, opts)?;
        let candidates: Vec<(f64, usize)> = match sol.status {
            LpStatus::Infeasible => return Ok(sol),
            LpStatus::Unbounded => (0..m).filter(|&i| !in_active[i]).map(|i| (0.0, i)).collect(),
            LpStatus::Optimal => {
                let mut v: Vec<(f64, usize)> = (0..m)
                    .filter(|&i| !in_active[i])
                    .filter_map(|i| {
                        let lhs: f64 = lp.rows[i].iter().zip(&sol.x).map(|(a, x)| a * x).sum();
                        let viol = lhs - lp.rhs[i];
                        (viol > opts.feasibility_tol * 0.1).then_some((viol, i))
                    })
                    .collect();
                v.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                v
            }
        };
        if candidates.is_empty() {
            return finish(lp, sol, opts);
        }
        for &(_, i) in candidates.iter().take(batch.max(1)) {
            in_active[i] = true;
            active.push(i);
        }
        active.sort_unstable();
        if active.len() > opts.max_constraints {
            return Err(Error::Numerical("row generation did not converge".into()));
        }
    }
}

fn finish(lp: &LinearProgram, mut sol: LpSolution, opts: &SolverOptions) -> Result<LpSolution> {
    if sol.status == LpStatus::Optimal {
        let viol = lp.max_violation(&sol.x);
        if viol > opts.feasibility_tol {
            return Err(Error::Numerical(format!(
                "final point violates constraints by {viol:.3e}"
            )));
        }
        sol.value = lp.objective_value(&sol.x);
    }
    Ok(sol)
}

/// Column kinds in the tableau: structurals, one slack per row, then
/// artificials for rows whose starting residual is negative.
struct Tableau {
    m: usize,
    cols: usize,
    t: Vec<f64>,
    basis: Vec<usize>,
    beta: Vec<f64>,
    is_basic: Vec<bool>,
    x: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    d: Vec<f64>,
}

enum Phase {
    Optimal,
    Unbounded,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.cols + j]
    }

    fn set_costs(&mut self, c: &[f64]) {
        self.d.copy_from_slice(c);
        for i in 0..self.m {
            let cb = c[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.cols..(i + 1) * self.cols];
                for (dj, tij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        for &b in &self.basis {
            self.d[b] = 0.0;
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let p = self.at(r, j);
        {
            let row = &mut self.t[r * cols..(r + 1) * cols];
            for v in row.iter_mut() {
                *v /= p;
            }
        }
        let pivot_row: Vec<f64> = self.t[r * cols..(r + 1) * cols].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * cols + j];
            if f != 0.0 {
                let row = &mut self.t[i * cols..(i + 1) * cols];
                for (v, pr) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pr;
                }
                row[j] = 0.0;
            }
        }
        let f = self.d[j];
        if f != 0.0 {
            for (v, pr) in self.d.iter_mut().zip(&pivot_row) {
                *v -= f * pr;
            }
            self.d[j] = 0.0;
        }
    }

    fn run(&mut self, opts: &SolverOptions, pivots: &mut usize) -> Result<Phase> {
        let tol = opts.pivot_tol;
        loop {
            let entering = (0..self.cols).find(|&j| {
                !self.is_basic[j]
                    && ((self.d[j] > tol && self.x[j] < self.hi[j])
                        || (self.d[j] < -tol && self.x[j] > self.lo[j]))
            });
            let Some(j) = entering else {
                return Ok(Phase::Optimal);
            };
            *pivots += 1;
            if *pivots > opts.max_pivots {
                return Err(Error::Numerical(format!("pivot limit {} reached", opts.max_pivots)));
            }
            let dir = if self.d[j] > 0.0 { 1.0 } else { -1.0 };

            // Nonbasic structurals may start strictly inside their box.
            let flip = if dir > 0.0 { self.hi[j] - self.x[j] } else { self.x[j] - self.lo[j] };
            let mut best: Option<(f64, usize)> = None;
            for i in 0..self.m {
                let a = self.at(i, j);
                if a.abs() <= tol {
                    continue;
                }
                let rate = -dir * a;
                let b = self.basis[i];
                let limit = if rate < 0.0 {
                    if self.lo[b] == f64::NEG_INFINITY {
                        continue;
                    }
                    (self.beta[i] - self.lo[b]) / -rate
                } else {
                    if self.hi[b] == f64::INFINITY {
                        continue;
                    }
                    (self.hi[b] - self.beta[i]) / rate
                };
                let limit = limit.max(0.0);
                best = match best {
                    Some((bl, r))
                        if !(limit < bl - 1e-12 || ((limit - bl).abs() <= 1e-12 && b < self.basis[r])) =>
                    {
                        Some((bl, r))
                    }
                    _ => Some((limit, i)),
                };
            }
            // A bound flip wins ties with a row, keeping the basis unchanged.
            let (step, leave) = match best {
                Some((bl, r)) if bl < flip => (bl, Some(r)),
                _ if flip.is_finite() => (flip, None),
                _ => return Ok(Phase::Unbounded),
            };

            for i in 0..self.m {
                let a = self.at(i, j);
                if a != 0.0 {
                    self.beta[i] -= dir * step * a;
                }
            }
            match leave {
                None => {
                    self.x[j] = if dir > 0.0 { self.hi[j] } else { self.lo[j] };
                }
                Some(r) => {
                    let b = self.basis[r];
                    let rate = -dir * self.at(r, j);
                    self.x[b] = if rate < 0.0 { self.lo[b] } else { self.hi[b] };
                    self.is_basic[b] = false;
                    let entering_value = self.x[j] + dir * step;
                    self.pivot(r, j);
                    self.basis[r] = j;
                    self.is_basic[j] = true;
                    self.beta[r] = entering_value;
                    self.x[j] = entering_value;
                }
            }
        }
    }
}

fn start_value(lo: f64, hi: f64) -> f64 {
    0.0_f64.max(lo).min(hi)
}

/// Solves the program restricted to the listed rows.
fn solve_rows(lp: &LinearProgram, rows: &[usize], opts: &SolverOptions) -> Result<LpSolution> {
    let n = lp.objective.len();
    let m = rows.len();
    let x0: Vec<f64> = lp
        .lower
        .iter()
        .zip(&lp.upper)
        .map(|(&l, &h)| start_value(l, h))
        .collect();
    let residual: Vec<f64> = rows
        .iter()
        .map(|&i| lp.rhs[i] - lp.rows[i].iter().zip(&x0).map(|(a, x)| a * x).sum::<f64>())
        .collect();
    let art_rows: Vec<usize> = (0..m).filter(|&i| residual[i] < 0.0).collect();
    let na = art_rows.len();
    let cols = n + m + na;

    let mut t = vec![0.0; m * cols];
    let mut basis = vec![0; m];
    let mut beta = vec![0.0; m];
    let mut art_of_row = vec![None; m];
    for (k, &i) in art_rows.iter().enumerate() {
        art_of_row[i] = Some(n + m + k);
    }
    for (i, &ri) in rows.iter().enumerate() {
        let sign = if art_of_row[i].is_some() { -1.0 } else { 1.0 };
        let row = &mut t[i * cols..(i + 1) * cols];
        for (v, a) in row.iter_mut().zip(&lp.rows[ri]) {
            *v = sign * a;
        }
        row[n + i] = sign;
        match art_of_row[i] {
            Some(c) => {
                row[c] = 1.0;
                basis[i] = c;
                beta[i] = -residual[i];
            }
            None => {
                basis[i] = n + i;
                beta[i] = residual[i];
            }
        }
    }
    let mut lo = lp.lower.clone();
    let mut hi = lp.upper.clone();
    lo.extend(std::iter::repeat_n(0.0, m + na));
    hi.extend(std::iter::repeat_n(f64::INFINITY, m + na));
    let mut x = x0;
    x.extend(std::iter::repeat_n(0.0, m + na));
    let mut is_basic = vec![false; cols];
    for &b in &basis {
        is_basic[b] = true;
    }
    let mut tab = Tableau {
        m,
        cols,
        t,
        basis,
        beta,
        is_basic,
        x,
        lo,
        hi,
        d: vec![0.0; cols],
    };
    let mut pivots = 0;

    if na > 0 {
        let mut c1 = vec![0.0; cols];
        for c in c1.iter_mut().skip(n + m) {
            *c = -1.0;
        }
        tab.set_costs(&c1);
        tab.run(opts, &mut pivots)?;
        let infeas: f64 = (0..m)
            .filter(|&i| tab.basis[i] >= n + m)
            .map(|i| tab.beta[i].max(0.0))
            .sum();
        if infeas > opts.feasibility_tol {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; n],
                value: f64::NAN,
            });
        }
        for c in n + m..cols {
            tab.lo[c] = 0.0;
            tab.hi[c] = 0.0;
            if !tab.is_basic[c] {
                tab.x[c] = 0.0;
            }
        }
    }

    let mut c2 = vec![0.0; cols];
    c2[..n].copy_from_slice(&lp.objective);
    tab.set_costs(&c2);
    let phase = tab.run(opts, &mut pivots)?;
    for (i, &b) in tab.basis.iter().enumerate() {
        tab.x[b] = tab.beta[i];
    }
    let x: Vec<f64> = tab.x[..n].to_vec();
    Ok(match phase {
        Phase::Optimal => LpSolution {
            status: LpStatus::Optimal,
            value: lp.objective_value(&x),
            x,
        },
        Phase::Unbounded => LpSolution {
            status: LpStatus::Unbounded,
            value: f64::INFINITY,
            x,
        },
    })
}

/// Program over witness values at distinct, already aggregated points:
/// maximize `sum_i w_i alpha_i` with `alpha_i in [-1, 1]` and
/// `|alpha_i - alpha_j| <= L d(i, j)` for every unordered pair, each pair
/// written as two rows.
pub fn build_lipschitz_lp(weights: &[f64], distances: &DistanceMatrix, lipschitz: f64) -> Result<LinearProgram> {
    let n = weights.len();
    if distances.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} weights but {} points in the distance matrix",
            n,
            distances.len()
        )));
    }
    if !(lipschitz > 0.0) || !lipschitz.is_finite() {
        return Err(Error::InvalidArgument(format!("Lipschitz bound {lipschitz}")));
    }
    let mut lp = LinearProgram::boxed(weights.to_vec(), vec![-1.0; n], vec![1.0; n]);
    for i in 0..n {
        for j in i + 1..n {
            let d = distances.get(i, j);
            if d <= 0.0 {
                return Err(Error::CoincidentPoints(i, j));
            }
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            row[j] = -1.0;
            lp.add_row(row.clone(), lipschitz * d);
            row[i] = -1.0;
            row[j] = 1.0;
            lp.add_row(row, lipschitz * d);
        }
    }
    Ok(lp)
}
