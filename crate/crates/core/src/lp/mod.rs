//! Linear programming: problem container, a bounded-variable primal simplex
//! solver, LP dualization and slack reporting.
//!
//! Problems are always minimizations over `l <= x <= u` subject to sparse
//! rows `a_i . x (<=|=|>=) b_i`.

mod dual;
mod mps;
mod presolve;
mod simplex;

pub use dual::dualize;
pub use mps::write_mps;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("outcome is not optimal")]
    NotOptimal,
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

/// Row relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// Sparse coefficients, sorted by column, no duplicates.
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

/// A minimization LP.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable with the given cost and bounds; returns its index.
    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    /// Adds a row. Coefficients are merged by column and exact zeros dropped.
    pub fn add_row(&mut self, coeffs: impl IntoIterator<Item = (usize, f64)>, relation: Relation, rhs: f64) -> usize {
        let mut c: Vec<(usize, f64)> = coeffs.into_iter().collect();
        c.sort_by_key(|&(j, _)| j);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(c.len());
        for (j, a) in c {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += a,
                _ => merged.push((j, a)),
            }
        }
        merged.retain(|&(_, a)| a != 0.0);
        self.rows.push(Row { coeffs: merged, relation, rhs });
        self.rows.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.coeffs.len()).sum()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for row in &self.rows {
            let act = row.activity(x);
            let v = match row.relation {
                Relation::Le => act - row.rhs,
                Relation::Ge => row.rhs - act,
                Relation::Eq => (act - row.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for j in 0..self.num_vars() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::InvalidProblem("bound vectors do not match objective length".into()));
        }
        for j in 0..n {
            if !self.objective[j].is_finite() {
                return Err(LpError::InvalidProblem(format!("objective coefficient {j} is not finite")));
            }
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(LpError::InvalidProblem(format!("variable {j} has invalid bounds")));
            }
            if self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(LpError::InvalidProblem(format!("variable {j} has an infinite bound on the wrong side")));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::InvalidProblem(format!("row {i} has a non-finite right-hand side")));
            }
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(LpError::InvalidProblem(format!("row {i} references variable {j} of {n}")));
                }
                if !a.is_finite() {
                    return Err(LpError::InvalidProblem(format!("row {i} has a non-finite coefficient")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverTolerances {
    /// Absolute primal feasibility tolerance.
    pub feas: f64,
    /// Reduced-cost optimality tolerance.
    pub opt: f64,
    /// Slack above which a row counts as nonbinding.
    pub bind: f64,
    /// Smallest pivot magnitude accepted in the ratio test.
    pub pivot: f64,
    pub max_iterations: usize,
    /// Basis reinversion period (iterations).
    pub refactor_every: usize,
    /// Substitute variables defined by equality rows before solving.
    pub presolve: bool,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self { feas: 1e-7, opt: 1e-7, bind: 1e-6, pivot: 1e-9, max_iterations: 200_000, refactor_every: 80, presolve: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub activity: Vec<f64>,
    /// Nonnegative distance to the right-hand side: `rhs - activity` for `<=`
    /// rows, `activity - rhs` for `>=` rows and `rhs - activity` for `=` rows.
    pub slack: Vec<f64>,
    /// Row multipliers with `c - A^T y` as reduced costs.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn is_optimal(&self) -> bool {
        matches!(self, LpOutcome::Optimal(_))
    }

    pub fn solution(&self) -> Option<&LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }

    pub fn objective(&self) -> Option<f64> {
        self.solution().map(|s| s.objective)
    }
}

/// Basis memory carried between solves of problems that differ only in
/// their right-hand sides.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    basis: Option<simplex::Basis>,
    pub warm_solves: usize,
    pub cold_solves: usize,
}

/// Solves `problem` to optimality, infeasibility, or unboundedness.
pub fn solve(problem: &LpProblem, tol: &SolverTolerances) -> Result<LpOutcome, LpError> {
    solve_inner(problem, tol, None)
}

/// Like [`solve`], starting from the basis left by the previous call on the
/// same `warm` when it still fits. Infeasibility is always confirmed from
/// scratch.
pub fn solve_warm(problem: &LpProblem, tol: &SolverTolerances, warm: &mut WarmStart) -> Result<LpOutcome, LpError> {
    solve_inner(problem, tol, Some(warm))
}

fn solve_inner(problem: &LpProblem, tol: &SolverTolerances, warm: Option<&mut WarmStart>) -> Result<LpOutcome, LpError> {
    problem.validate()?;
    let (reduced, stack) = if tol.presolve {
        let (p, s) = presolve::eliminate_defined(problem);
        (Some(p), Some(s))
    } else {
        (None, None)
    };
    let work = reduced.as_ref().unwrap_or(problem);
    let mut raw = None;
    if let Some(start) = warm.as_ref().and_then(|w| w.basis.as_ref()) {
        if let Some(sx) = simplex::Simplex::new_warm(work, tol, start) {
            if let simplex::WarmEnd::Done(r) = sx.run_warm()? {
                raw = Some(r);
            }
        }
    }
    let used_warm = raw.is_some();
    let raw = match raw {
        Some(r) => r,
        None => simplex::Simplex::new(work, tol).run()?,
    };
    if let Some(w) = warm {
        if used_warm {
            w.warm_solves += 1;
        } else {
            w.cold_solves += 1;
        }
        if let simplex::RawOutcome::Optimal { basis, .. } = &raw {
            w.basis = basis.clone();
        }
    }
    let (mut x, mut duals, iterations) = match raw {
        simplex::RawOutcome::Optimal { x, duals, iterations, .. } => (x, duals, iterations),
        simplex::RawOutcome::Infeasible => return Ok(LpOutcome::Infeasible),
        simplex::RawOutcome::Unbounded => return Ok(LpOutcome::Unbounded),
    };
    if let Some(stack) = &stack {
        let (xo, yo) = stack.postsolve(&x, &duals, problem.num_rows());
        x = xo;
        duals = yo;
    }
    let activity: Vec<f64> = problem.rows.iter().map(|r| r.activity(&x)).collect();
    let slack = problem
        .rows
        .iter()
        .zip(&activity)
        .map(|(r, &a)| match r.relation {
            Relation::Ge => a - r.rhs,
            _ => r.rhs - a,
        })
        .collect();
    let viol = problem.max_violation(&x);
    if viol > tol.feas * 10.0 {
        return Err(LpError::NumericalBreakdown(format!("final point violates the problem by {viol:e}")));
    }
    Ok(LpOutcome::Optimal(LpSolution { objective: problem.objective_value(&x), x, activity, slack, duals, iterations }))
}

/// Slack values for `rows`, plus which of them are nonbinding.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackReport {
    pub rows: Vec<usize>,
    pub slack: Vec<f64>,
    pub nonbinding: Vec<bool>,
}

pub fn slack_report(outcome: &LpOutcome, rows: &[usize], tol: &SolverTolerances) -> Result<SlackReport, LpError> {
    let sol = outcome.solution().ok_or(LpError::NotOptimal)?;
    let slack: Vec<f64> = rows.iter().map(|&i| sol.slack[i]).collect();
    let nonbinding = slack.iter().map(|&s| s > tol.bind).collect();
    Ok(SlackReport { rows: rows.to_vec(), slack, nonbinding })
}
