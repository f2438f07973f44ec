//! Augmented ε-constraint machinery: payoff table, objective ranges, the
//! ε grid, the scalarized LP, the infeasibility and repeat filters, and the
//! wave loop that solves a grid into a Pareto archive.
//!
//! The engine is generic in the number of objectives `p`. Each objective is
//! a variable of the LP (defined through an equality row), so bounding or
//! fixing it is a single-coefficient row.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{self, LpError, LpOutcome, LpProblem, Relation, SolverTolerances, WarmStart};
use crate::model::{underdose_cap, MolpModel};
use crate::phantom::{SdoInstance, N_SECTORS};

/// Relative slack on the rows that fix earlier objectives in the payoff
/// table passes.
pub const TAU_FIX: f64 = 1e-9;
pub const DEFAULT_BETA: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum EpsError {
    #[error("the base model is infeasible")]
    InfeasibleModel,
    #[error("objective {objective} is unbounded below")]
    Unbounded { objective: usize },
    #[error("objective h{} range is empty after tightening: [{lb}, {ub}]", objective + 1)]
    EmptyRange { objective: usize, lb: f64, ub: f64 },
    #[error("objective h{} has zero width but {r} grid points were requested", objective + 1)]
    DegenerateAxis { objective: usize, r: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("beta must be positive, got {0}")]
    InvalidBeta(f64),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// A multiobjective LP whose objectives are single variables.
#[derive(Debug, Clone)]
pub struct Molp {
    pub lp: LpProblem,
    pub objective_vars: Vec<usize>,
}

impl Molp {
    pub fn p(&self) -> usize {
        self.objective_vars.len()
    }

    pub fn objectives_of(&self, x: &[f64]) -> Vec<f64> {
        self.objective_vars.iter().map(|&j| x[j]).collect()
    }

    fn with_objective(&self, i: usize) -> LpProblem {
        let mut lp = self.lp.clone();
        lp.objective.iter_mut().for_each(|c| *c = 0.0);
        lp.objective[self.objective_vars[i]] = 1.0;
        lp
    }

    /// Stand-alone minimum of objective `i`.
    pub fn minimize(&self, i: usize, tol: &SolverTolerances) -> Result<f64, EpsError> {
        match lp::solve(&self.with_objective(i), tol)? {
            LpOutcome::Optimal(s) => Ok(s.objective),
            LpOutcome::Infeasible => Err(EpsError::InfeasibleModel),
            LpOutcome::Unbounded => Err(EpsError::Unbounded { objective: i }),
        }
    }
}

impl From<&MolpModel> for Molp {
    fn from(m: &MolpModel) -> Self {
        Molp { lp: m.lp.clone(), objective_vars: m.vars.h.to_vec() }
    }
}

/// Row `k` holds the objective values of the lexicographic pass that starts
/// with objective `k`; entry `z[k][i]` is the optimum found for objective `i`
/// in that pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffTable {
    pub z: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveRanges {
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

impl ObjectiveRanges {
    pub fn delta(&self, i: usize) -> f64 {
        self.ub[i] - self.lb[i]
    }

    pub fn p(&self) -> usize {
        self.lb.len()
    }
}

pub fn payoff_table(molp: &Molp, tol: &SolverTolerances) -> Result<(PayoffTable, ObjectiveRanges), EpsError> {
    let p = molp.p();
    let mut z = vec![vec![0.0; p]; p];
    for k in 0..p {
        let mut fixed: Vec<(usize, f64)> = Vec::with_capacity(p);
        for t in 0..p {
            let i = (k + t) % p;
            let v = lexicographic_pass(molp, &fixed, i, tol)?;
            z[k][i] = v;
            fixed.push((i, v));
        }
    }
    let lb = (0..p).map(|i| (0..p).map(|k| z[k][i]).fold(f64::INFINITY, f64::min)).collect();
    let ub = (0..p).map(|i| (0..p).map(|k| z[k][i]).fold(f64::NEG_INFINITY, f64::max)).collect();
    Ok((PayoffTable { z }, ObjectiveRanges { lb, ub }))
}

/// Minimizes objective `i` with the `fixed` objectives held at their optima.
/// The previous pass already found a point, so an infeasible verdict means
/// that pass missed the fixing rows by up to the solver's accuracy; the slack
/// then widens tenfold, up to that accuracy.
fn lexicographic_pass(molp: &Molp, fixed: &[(usize, f64)], i: usize, tol: &SolverTolerances) -> Result<f64, EpsError> {
    let mut tau = TAU_FIX;
    loop {
        let mut lp = molp.with_objective(i);
        for &(j, v) in fixed {
            lp.add_row([(molp.objective_vars[j], 1.0)], Relation::Le, v + tau * v.abs().max(1.0));
        }
        match lp::solve(&lp, tol)? {
            LpOutcome::Optimal(s) => return Ok(s.objective),
            LpOutcome::Unbounded => return Err(EpsError::Unbounded { objective: i }),
            LpOutcome::Infeasible if !fixed.is_empty() && tau < 100.0 * tol.feas => tau *= 10.0,
            LpOutcome::Infeasible => return Err(EpsError::InfeasibleModel),
        }
    }
}

/// Lower bound on beam-on time of any plan reaching coverage `cov_min` on
/// some tumor.
pub fn bot_lower_bound(inst: &SdoInstance, cov_min: f64) -> f64 {
    inst.tumor_indices()
        .iter()
        .zip(&inst.prescriptions)
        .map(|(&t, d)| d * cov_min / (inst.max_rate_in(t) * N_SECTORS as f64))
        .fold(0.0, f64::max)
}

/// Narrows the underdose and beam-on-time ranges of the SDO objectives using
/// the coverage target.
pub fn tighten_ranges(ranges: &ObjectiveRanges, inst: &SdoInstance, cov_min: f64) -> Result<ObjectiveRanges, EpsError> {
    let mut out = ranges.clone();
    let cap: f64 = inst
        .tumor_indices()
        .iter()
        .zip(&inst.prescriptions)
        .map(|(&t, &d)| underdose_cap(d, inst.structures[t].voxels.len(), cov_min))
        .sum();
    out.ub[3] = out.ub[3].min(cap);
    out.lb[4] = out.lb[4].max(bot_lower_bound(inst, cov_min));
    for i in [3, 4] {
        if out.lb[i] > out.ub[i] {
            return Err(EpsError::EmptyRange { objective: i, lb: out.lb[i], ub: out.ub[i] });
        }
    }
    Ok(out)
}

/// Objectives other than `primary`, in index order.
pub fn bounded_objectives(p: usize, primary: usize) -> Vec<usize> {
    (0..p).filter(|&i| i != primary).collect()
}

/// A point of the ε grid. Components follow the bounded objectives in index
/// order; `coords` are the grid indices `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsVector {
    pub eps: Vec<f64>,
    pub coords: Vec<usize>,
}

/// Values of one grid axis.
pub fn axis_values(lb: f64, ub: f64, r: usize) -> Vec<f64> {
    if r == 1 {
        return vec![lb];
    }
    let step = (ub - lb) / (r - 1) as f64;
    (0..r).map(|j| lb + j as f64 * step).collect()
}

/// Cartesian grid over the bounded objectives, in lexicographic order of the
/// coordinates. A zero-width axis collapses to its single value.
pub fn build_grid(ranges: &ObjectiveRanges, primary: usize, r: &[usize], allow_collapse: bool) -> Result<Vec<EpsVector>, EpsError> {
    let bounded = bounded_objectives(ranges.p(), primary);
    if r.len() != bounded.len() {
        return Err(EpsError::InvalidGrid(format!("{} point counts for {} bounded objectives", r.len(), bounded.len())));
    }
    let mut axes = Vec::with_capacity(bounded.len());
    for (&i, &ri) in bounded.iter().zip(r) {
        let delta = ranges.delta(i);
        if ri == 0 || !(delta >= 0.0) {
            return Err(EpsError::InvalidGrid(format!("objective h{} has r = {ri} and width {delta}", i + 1)));
        }
        if delta == 0.0 {
            if ri > 1 && !allow_collapse {
                return Err(EpsError::DegenerateAxis { objective: i, r: ri });
            }
            axes.push(vec![ranges.lb[i]]);
        } else if ri == 1 {
            return Err(EpsError::InvalidGrid(format!("objective h{} has positive width but a single point", i + 1)));
        } else {
            axes.push(axis_values(ranges.lb[i], ranges.ub[i], ri));
        }
    }
    let total: usize = axes.iter().map(Vec::len).product();
    let mut out = Vec::with_capacity(total);
    let mut coords = vec![0usize; axes.len()];
    for _ in 0..total {
        out.push(EpsVector { eps: coords.iter().zip(&axes).map(|(&j, a)| a[j]).collect(), coords: coords.clone() });
        for a in (0..axes.len()).rev() {
            coords[a] += 1;
            if coords[a] < axes[a].len() {
                break;
            }
            coords[a] = 0;
        }
    }
    Ok(out)
}

/// The augmented ε-constraint LP. The objective is stored multiplied by
/// `1/β`, so that the slack rewards are not lost in the solver's optimality
/// tolerance.
#[derive(Debug, Clone)]
pub struct Scalarizer {
    pub lp: LpProblem,
    pub primary: usize,
    pub bounded: Vec<usize>,
    pub eps_rows: Vec<usize>,
    pub y_vars: Vec<usize>,
    pub objective_vars: Vec<usize>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsSolved {
    pub x: Vec<f64>,
    /// Objective values read from the LP solution.
    pub objectives: Vec<f64>,
    /// `y_i` per bounded objective.
    pub slacks: Vec<f64>,
    /// Bounded objective indices whose slack exceeds the binding tolerance.
    pub nonbinding: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EpsOutcome {
    Solved(EpsSolved),
    Infeasible,
}

impl Scalarizer {
    pub fn new(molp: &Molp, ranges: &ObjectiveRanges, primary: usize, beta: f64) -> Result<Self, EpsError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(EpsError::InvalidBeta(beta));
        }
        let mut lp = molp.lp.clone();
        lp.objective.iter_mut().for_each(|c| *c = 0.0);
        lp.objective[molp.objective_vars[primary]] = 1.0 / beta;
        let bounded = bounded_objectives(molp.p(), primary);
        let mut eps_rows = Vec::new();
        let mut y_vars = Vec::new();
        for &i in &bounded {
            let delta = ranges.delta(i);
            // A zero-width axis pins the objective to its single value.
            let y = if delta > 0.0 { lp.add_var(-1.0 / delta, 0.0, f64::INFINITY) } else { lp.add_var(0.0, 0.0, 0.0) };
            eps_rows.push(lp.add_row([(molp.objective_vars[i], 1.0), (y, 1.0)], Relation::Eq, ranges.ub[i]));
            y_vars.push(y);
        }
        Ok(Self { lp, primary, bounded, eps_rows, y_vars, objective_vars: molp.objective_vars.clone(), beta })
    }

    pub fn problem(&self, eps: &EpsVector) -> LpProblem {
        let mut lp = self.lp.clone();
        for (&r, &e) in self.eps_rows.iter().zip(&eps.eps) {
            lp.rows[r].rhs = e;
        }
        lp
    }

    pub fn solve(&self, eps: &EpsVector, tol: &SolverTolerances, warm: Option<&mut WarmStart>) -> Result<EpsOutcome, EpsError> {
        let lp = self.problem(eps);
        let out = match warm {
            Some(w) => lp::solve_warm(&lp, tol, w)?,
            None => lp::solve(&lp, tol)?,
        };
        match out {
            LpOutcome::Infeasible => Ok(EpsOutcome::Infeasible),
            LpOutcome::Unbounded => Err(EpsError::Unbounded { objective: self.primary }),
            LpOutcome::Optimal(s) => {
                let objectives: Vec<f64> = self.objective_vars.iter().map(|&j| s.x[j]).collect();
                let slacks: Vec<f64> = self.y_vars.iter().map(|&j| s.x[j]).collect();
                let nonbinding = self.bounded.iter().zip(&slacks).filter(|(_, &y)| y > tol.bind).map(|(&i, _)| i).collect();
                Ok(EpsOutcome::Solved(EpsSolved { objectives, slacks, nonbinding, iterations: s.iterations, x: s.x }))
            }
        }
    }
}

/// The augmented ε-constraint LP for one grid point.
pub fn augment(molp: &Molp, primary: usize, eps: &EpsVector, beta: f64, ranges: &ObjectiveRanges) -> Result<LpProblem, EpsError> {
    Ok(Scalarizer::new(molp, ranges, primary, beta)?.problem(eps))
}

/// `e` is at least as tight as the infeasible `infeas` on every axis, so its
/// feasible set is contained in an empty one.
pub fn implied_infeasible(e: &EpsVector, infeas: &EpsVector) -> bool {
    e.eps.iter().zip(&infeas.eps).all(|(a, b)| a <= b)
}

/// `e` is guaranteed to reproduce the solution found at `solved`: every
/// nonbinding axis is at least the attained value and every binding axis
/// sits on the same grid coordinate. `h_bounded` and `nonbinding` are given
/// per bounded position.
pub fn implied_repeat(e: &EpsVector, solved: &EpsVector, h_bounded: &[f64], nonbinding: &[bool]) -> bool {
    if !nonbinding.iter().any(|&b| b) {
        return false;
    }
    (0..e.eps.len()).all(|a| if nonbinding[a] { e.eps[a] >= h_bounded[a] } else { e.coords[a] == solved.coords[a] })
}

pub fn retain_after_infeasible(pending: &[EpsVector], infeas: &EpsVector) -> Vec<EpsVector> {
    pending.iter().filter(|e| !implied_infeasible(e, infeas)).cloned().collect()
}

pub fn retain_after_solution(pending: &[EpsVector], solved: &EpsVector, h_bounded: &[f64], nonbinding: &[bool]) -> Vec<EpsVector> {
    pending.iter().filter(|e| !implied_repeat(e, solved, h_bounded, nonbinding)).cloned().collect()
}

/// `a` dominates `b` (minimization) beyond a relative tolerance.
pub fn dominates(a: &[f64], b: &[f64], tol: f64) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        let t = tol * x.abs().max(y.abs()).max(1.0);
        if *x > y + t {
            return false;
        }
        if *x < y - t {
            strict = true;
        }
    }
    strict
}

pub fn approx_equal(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry<T> {
    pub objectives: Vec<f64>,
    pub eps: EpsVector,
    pub phase: String,
    pub repeat_hits: usize,
    pub payload: T,
}

/// Efficient solutions, deduplicated on their objective vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive<T> {
    pub entries: Vec<ArchiveEntry<T>>,
    pub tol: f64,
}

impl<T> Default for ParetoArchive<T> {
    fn default() -> Self {
        Self { entries: Vec::new(), tol: 1e-6 }
    }
}

impl<T> ParetoArchive<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, objectives: &[f64]) -> Option<usize> {
        self.entries.iter().position(|e| approx_equal(&e.objectives, objectives, self.tol))
    }

    /// Stores a solution, or counts a repeat hit on an equal one. Returns the
    /// entry index and whether it is new.
    pub fn insert(&mut self, entry: ArchiveEntry<T>) -> (usize, bool) {
        if let Some(i) = self.find(&entry.objectives) {
            self.entries[i].repeat_hits += 1 + entry.repeat_hits;
            return (i, false);
        }
        self.entries.push(entry);
        (self.entries.len() - 1, true)
    }

    /// Pairs `(dominating, dominated)` among the stored entries.
    pub fn dominance_violations(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, a) in self.entries.iter().enumerate() {
            for (j, b) in self.entries.iter().enumerate() {
                if i != j && dominates(&a.objectives, &b.objectives, self.tol) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Drops dominated entries and returns how many were dropped.
    pub fn finalize(&mut self) -> usize {
        let dominated: Vec<bool> = (0..self.entries.len())
            .map(|j| self.entries.iter().any(|a| dominates(&a.objectives, &self.entries[j].objectives, self.tol)))
            .collect();
        let before = self.entries.len();
        let mut it = dominated.iter();
        self.entries.retain(|_| !*it.next().unwrap());
        before - self.entries.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridStatus {
    Pending,
    /// Solved; index into the wave's solution list.
    Solved(usize),
    Infeasible,
    OmittedInfeasible,
    /// Skipped as a repeat of the given solution.
    OmittedRepeat(usize),
}

#[derive(Debug, Clone)]
pub struct WaveConfig {
    pub tol: SolverTolerances,
    pub infeasibility_filter: bool,
    pub repeat_filter: bool,
    /// Vectors solved concurrently between filter applications.
    pub jobs: usize,
    pub warm_start: bool,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self { tol: SolverTolerances::default(), infeasibility_filter: true, repeat_filter: true, jobs: 1, warm_start: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WaveStats {
    pub n_eps: usize,
    /// Feasible solves.
    pub n_sol: usize,
    pub n_infeasible_solved: usize,
    pub n_omit_infeas: usize,
    pub n_omit_repeat: usize,
    /// Never solved nor filtered (left out by a selection step).
    pub n_unexplored: usize,
    pub n_lp: usize,
    pub total_time_s: f64,
}

impl WaveStats {
    fn pct(&self, n: usize) -> f64 {
        if self.n_eps == 0 {
            0.0
        } else {
            100.0 * n as f64 / self.n_eps as f64
        }
    }

    pub fn pct_sol(&self) -> f64 {
        self.pct(self.n_sol)
    }

    pub fn n_infeasible(&self) -> usize {
        self.n_infeasible_solved + self.n_omit_infeas
    }

    pub fn pct_infeas(&self) -> f64 {
        self.pct(self.n_infeasible())
    }

    pub fn pct_omit_in_infeas(&self) -> f64 {
        if self.n_infeasible() == 0 {
            0.0
        } else {
            100.0 * self.n_omit_infeas as f64 / self.n_infeasible() as f64
        }
    }

    pub fn pct_omit_for_infeas(&self) -> f64 {
        self.pct(self.n_omit_infeas)
    }

    pub fn pct_omit_for_repeat(&self) -> f64 {
        self.pct(self.n_omit_repeat)
    }

    pub fn unit_time_s(&self) -> f64 {
        if self.n_sol == 0 {
            0.0
        } else {
            self.total_time_s / self.n_sol as f64
        }
    }

    pub fn csv_header() -> &'static str {
        "n_eps,n_sol,pct_sol,pct_infeas,pct_omit_in_infeas,pct_omit_for_infeas,pct_omit_for_repeat,unit_time_s,total_time_s"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.1},{:.1},{:.1},{:.1},{:.1},{:.4},{:.4}",
            self.n_eps,
            self.n_sol,
            self.pct_sol(),
            self.pct_infeas(),
            self.pct_omit_in_infeas(),
            self.pct_omit_for_infeas(),
            self.pct_omit_for_repeat(),
            self.unit_time_s(),
            self.total_time_s
        )
    }
}

#[derive(Debug, Clone)]
pub enum WaveEvent {
    Solved { index: usize },
    Infeasible { index: usize },
    OmittedInfeasible { index: usize },
    OmittedRepeat { index: usize, of: usize },
}

/// Solves vectors of a fixed grid, marking the whole grid with what the
/// filters learn from each result.
pub struct Wave<'a> {
    pub scalarizer: &'a Scalarizer,
    pub grid: &'a [EpsVector],
    pub config: WaveConfig,
    pub status: Vec<GridStatus>,
    /// `(grid index, solution)` in solve order.
    pub solutions: Vec<(usize, EpsSolved)>,
    pub stats: WaveStats,
    /// Message of the error that stopped the wave, if any.
    pub aborted: Option<String>,
    /// Final bases of feasible solves, keyed by grid index.
    bases: Vec<(usize, WarmStart)>,
}

/// Grid indices from the loosest corner toward the tightest.
pub fn wave_order(grid: &[EpsVector]) -> Vec<usize> {
    (0..grid.len()).rev().collect()
}

impl<'a> Wave<'a> {
    pub fn new(scalarizer: &'a Scalarizer, grid: &'a [EpsVector], config: WaveConfig) -> Self {
        Self {
            scalarizer,
            grid,
            status: vec![GridStatus::Pending; grid.len()],
            solutions: Vec::new(),
            stats: WaveStats { n_eps: grid.len(), ..Default::default() },
            aborted: None,
            bases: Vec::new(),
            config,
        }
    }

    pub fn pending(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|&i| self.status[i] == GridStatus::Pending).collect()
    }

    /// Solves the listed grid vectors in order, skipping any that a filter
    /// has already decided. Stops at the first solver error and records it.
    pub fn solve_indices(&mut self, order: &[usize], on_event: &mut dyn FnMut(&WaveEvent)) {
        if self.aborted.is_some() {
            return;
        }
        let jobs = self.config.jobs.max(1);
        let mut cursor = 0;
        while cursor < order.len() {
            let mut batch = Vec::with_capacity(jobs);
            while batch.len() < jobs && cursor < order.len() {
                let i = order[cursor];
                cursor += 1;
                if self.status[i] == GridStatus::Pending {
                    batch.push(i);
                }
            }
            if batch.is_empty() {
                break;
            }
            let started = Instant::now();
            let results = self.solve_batch(&batch);
            self.stats.total_time_s += started.elapsed().as_secs_f64();
            for (i, res) in batch.into_iter().zip(results) {
                match res {
                    Ok(out) => self.apply(i, out, on_event),
                    Err(e) => {
                        log::error!("solve of grid vector {i} failed: {e}");
                        self.aborted = Some(e.to_string());
                        return;
                    }
                }
            }
        }
    }

    /// Basis of the solved vector nearest to `i` in grid coordinates, the
    /// most recent one on ties.
    fn nearest_basis(&self, i: usize) -> WarmStart {
        let c = &self.grid[i].coords;
        let dist = |k: usize| self.grid[k].coords.iter().zip(c).map(|(a, b)| a.abs_diff(*b)).sum::<usize>();
        self.bases.iter().rev().min_by_key(|(k, _)| dist(*k)).map(|(_, w)| w.clone()).unwrap_or_default()
    }

    fn solve_batch(&mut self, batch: &[usize]) -> Vec<Result<EpsOutcome, EpsError>> {
        let sc = self.scalarizer;
        let grid = self.grid;
        let tol = &self.config.tol;
        if !self.config.warm_start {
            if batch.len() == 1 {
                return vec![sc.solve(&grid[batch[0]], tol, None)];
            }
            return std::thread::scope(|scope| {
                let handles: Vec<_> = batch.iter().map(|&i| scope.spawn(move || sc.solve(&grid[i], tol, None))).collect();
                handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
            });
        }
        let mut starts: Vec<WarmStart> = batch.iter().map(|&i| self.nearest_basis(i)).collect();
        let results: Vec<Result<EpsOutcome, EpsError>> = if batch.len() == 1 {
            vec![sc.solve(&grid[batch[0]], tol, Some(&mut starts[0]))]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> =
                    batch.iter().zip(starts.iter_mut()).map(|(&i, w)| scope.spawn(move || sc.solve(&grid[i], tol, Some(w)))).collect();
                handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
            })
        };
        for ((&i, w), r) in batch.iter().zip(starts).zip(&results) {
            if let Ok(EpsOutcome::Solved(_)) = r {
                self.bases.push((i, w));
            }
        }
        results
    }

    fn apply(&mut self, i: usize, out: EpsOutcome, on_event: &mut dyn FnMut(&WaveEvent)) {
        self.stats.n_lp += 1;
        match out {
            EpsOutcome::Infeasible => {
                self.status[i] = GridStatus::Infeasible;
                self.stats.n_infeasible_solved += 1;
                on_event(&WaveEvent::Infeasible { index: i });
                if self.config.infeasibility_filter {
                    for k in 0..self.grid.len() {
                        if self.status[k] == GridStatus::Pending && implied_infeasible(&self.grid[k], &self.grid[i]) {
                            self.status[k] = GridStatus::OmittedInfeasible;
                            self.stats.n_omit_infeas += 1;
                            on_event(&WaveEvent::OmittedInfeasible { index: k });
                        }
                    }
                }
            }
            EpsOutcome::Solved(sol) => {
                let id = self.solutions.len();
                self.status[i] = GridStatus::Solved(id);
                self.stats.n_sol += 1;
                on_event(&WaveEvent::Solved { index: i });
                if self.config.repeat_filter && !sol.nonbinding.is_empty() {
                    let bounded = &self.scalarizer.bounded;
                    let h: Vec<f64> = bounded.iter().map(|&b| sol.objectives[b]).collect();
                    let nb: Vec<bool> = bounded.iter().map(|b| sol.nonbinding.contains(b)).collect();
                    for k in 0..self.grid.len() {
                        if self.status[k] == GridStatus::Pending && implied_repeat(&self.grid[k], &self.grid[i], &h, &nb) {
                            self.status[k] = GridStatus::OmittedRepeat(id);
                            self.stats.n_omit_repeat += 1;
                            on_event(&WaveEvent::OmittedRepeat { index: k, of: id });
                        }
                    }
                }
                self.solutions.push((i, sol));
            }
        }
    }

    /// Closes the accounting: vectors still pending are unexplored.
    pub fn finish(mut self) -> WaveResult {
        self.stats.n_unexplored = self.status.iter().filter(|s| **s == GridStatus::Pending).count();
        WaveResult { status: self.status, solutions: self.solutions, stats: self.stats, aborted: self.aborted }
    }
}

#[derive(Debug, Clone)]
pub struct WaveResult {
    pub status: Vec<GridStatus>,
    pub solutions: Vec<(usize, EpsSolved)>,
    pub stats: WaveStats,
    pub aborted: Option<String>,
}

impl WaveResult {
    /// Grid index of each solution and how many omitted vectors repeat it.
    pub fn repeat_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.solutions.len()];
        for s in &self.status {
            if let GridStatus::OmittedRepeat(id) = s {
                c[*id] += 1;
            }
        }
        c
    }

    /// Archive of the solutions, with objective vectors and payloads produced
    /// by `eval`.
    pub fn archive<T>(&self, grid: &[EpsVector], phase: &str, mut eval: impl FnMut(&EpsSolved) -> (Vec<f64>, T)) -> ParetoArchive<T> {
        let hits = self.repeat_counts();
        let mut arch = ParetoArchive::new();
        for (id, (gi, sol)) in self.solutions.iter().enumerate() {
            let (objectives, payload) = eval(sol);
            arch.insert(ArchiveEntry { objectives, eps: grid[*gi].clone(), phase: phase.to_string(), repeat_hits: hits[id], payload });
        }
        arch
    }
}

/// Solves the whole grid, loosest corner first.
pub fn run_wave(scalarizer: &Scalarizer, grid: &[EpsVector], config: WaveConfig, on_event: &mut dyn FnMut(&WaveEvent)) -> WaveResult {
    let mut wave = Wave::new(scalarizer, grid, config);
    let order = wave_order(grid);
    wave.solve_indices(&order, on_event);
    wave.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min x1, min x2 over x1 + x2 >= 1, x in [0, 1]^2.
    fn toy() -> Molp {
        let mut lp = LpProblem::new();
        let x1 = lp.add_var(0.0, 0.0, 1.0);
        let x2 = lp.add_var(0.0, 0.0, 1.0);
        lp.add_row([(x1, 1.0), (x2, 1.0)], Relation::Ge, 1.0);
        Molp { lp, objective_vars: vec![x1, x2] }
    }

    fn ev(eps: &[f64]) -> EpsVector {
        EpsVector { eps: eps.to_vec(), coords: eps.iter().map(|&v| v as usize).collect() }
    }

    #[test]
    fn toy_payoff_table() {
        let (t, r) = payoff_table(&toy(), &SolverTolerances::default()).unwrap();
        let want = [[0.0, 1.0], [1.0, 0.0]];
        for (row, w) in t.z.iter().zip(want) {
            for (v, w) in row.iter().zip(w) {
                assert!((v - w).abs() <= 2.0 * TAU_FIX, "{:?}", t.z);
            }
        }
        assert_eq!(r.lb, vec![0.0, 0.0]);
        assert!(r.ub.iter().all(|&u| (u - 1.0).abs() <= 2.0 * TAU_FIX));
    }

    #[test]
    fn infeasible_base_model() {
        let mut m = toy();
        m.lp.add_row([(0, 1.0), (1, 1.0)], Relation::Le, 0.5);
        assert!(matches!(payoff_table(&m, &SolverTolerances::default()), Err(EpsError::InfeasibleModel)));
    }

    #[test]
    fn axis_and_grid_shapes() {
        assert_eq!(axis_values(0.0, 10.0, 3), vec![0.0, 5.0, 10.0]);
        let r = ObjectiveRanges { lb: vec![0.0; 5], ub: vec![1.0, 2.0, 3.0, 4.0, 5.0] };
        assert_eq!(build_grid(&r, 0, &[10; 4], true).unwrap().len(), 10_000);
        let mut c = r.clone();
        c.ub[2] = 0.0;
        let g = build_grid(&c, 0, &[10; 4], true).unwrap();
        assert_eq!(g.len(), 1000);
        assert!(g.iter().all(|e| e.eps[1] == 0.0));
        assert!(matches!(build_grid(&c, 0, &[10; 4], false), Err(EpsError::DegenerateAxis { objective: 2, r: 10 })));
        assert_eq!(build_grid(&c, 0, &[10, 1, 10, 10], false).unwrap().len(), 1000);
        // Lexicographic order, last axis fastest.
        assert_eq!(g[1].coords, vec![0, 0, 0, 1]);
        assert_eq!(g[10].coords, vec![0, 0, 1, 0]);
    }

    #[test]
    fn grid_spacing_is_regular() {
        let r = ObjectiveRanges { lb: vec![0.0, 0.37, 12.5], ub: vec![0.0, 1234.567, 99.1] };
        let g = build_grid(&r, 0, &[10, 7], true).unwrap();
        for e in &g {
            for (a, (&i, &j)) in [1usize, 2].iter().zip(&e.coords).enumerate() {
                let want = r.lb[i] + j as f64 * (r.delta(i) / if a == 0 { 9.0 } else { 6.0 });
                assert_eq!(e.eps[a], want);
            }
        }
        let ax = axis_values(0.37, 1234.567, 10);
        let step = (1234.567 - 0.37) / 9.0;
        for w in ax.windows(2) {
            assert!((w[1] - w[0] - step).abs() <= 4.0 * f64::EPSILON * 1234.567);
        }
    }

    #[test]
    fn zero_beta_rejected() {
        let m = toy();
        let r = ObjectiveRanges { lb: vec![0.0, 0.0], ub: vec![1.0, 1.0] };
        assert!(matches!(augment(&m, 0, &ev(&[0.5]), 0.0, &r), Err(EpsError::InvalidBeta(_))));
    }

    #[test]
    fn toy_scalarization_on_the_front() {
        let m = toy();
        let r = ObjectiveRanges { lb: vec![0.0, 0.0], ub: vec![1.0, 1.0] };
        let sc = Scalarizer::new(&m, &r, 0, DEFAULT_BETA).unwrap();
        let tol = SolverTolerances::default();
        let e = EpsVector { eps: vec![0.5], coords: vec![1] };
        let EpsOutcome::Solved(s) = sc.solve(&e, &tol, None).unwrap() else { panic!() };
        assert!((s.objectives[0] - 0.5).abs() < 1e-9 && (s.objectives[1] - 0.5).abs() < 1e-9);
        assert!(s.slacks[0].abs() < 1e-9 && s.nonbinding.is_empty());
        for k in 0..=10 {
            let e2 = EpsVector { eps: vec![k as f64 / 10.0], coords: vec![k] };
            let EpsOutcome::Solved(s) = sc.solve(&e2, &tol, None).unwrap() else { panic!() };
            assert!((s.objectives[0] + s.objectives[1] - 1.0).abs() < 1e-9);
        }
        let below = EpsVector { eps: vec![-0.1], coords: vec![0] };
        assert_eq!(sc.solve(&below, &tol, None).unwrap(), EpsOutcome::Infeasible);
    }

    #[test]
    fn infeasibility_filter_examples() {
        let kept = retain_after_infeasible(&[ev(&[4.0, 4.0]), ev(&[6.0, 5.0]), ev(&[5.0, 5.0])], &ev(&[5.0, 5.0]));
        assert_eq!(kept, vec![ev(&[6.0, 5.0])]);
        let all = [ev(&[1.0, 2.0]), ev(&[2.0, 2.0])];
        assert!(retain_after_infeasible(&all, &ev(&[2.0, 2.0])).is_empty());
    }

    #[test]
    fn repeat_filter_examples() {
        let solved = ev(&[5.0, 5.0]);
        let h = [3.0, 5.0];
        let nb = [true, false];
        let kept = retain_after_solution(&[ev(&[4.0, 5.0]), ev(&[2.0, 5.0])], &solved, &h, &nb);
        assert_eq!(kept, vec![ev(&[2.0, 5.0])]);
        let pend = [ev(&[4.0, 5.0]), ev(&[5.0, 5.0])];
        assert_eq!(retain_after_solution(&pend, &solved, &h, &[false, false]), pend.to_vec());
    }

    #[test]
    fn archive_dedups_and_finalizes() {
        let mut a = ParetoArchive::new();
        let e = |o: Vec<f64>| ArchiveEntry { objectives: o, eps: ev(&[0.0]), phase: "I".into(), repeat_hits: 0, payload: () };
        assert_eq!(a.insert(e(vec![1.0, 2.0])), (0, true));
        assert_eq!(a.insert(e(vec![1.0 + 1e-9, 2.0])), (0, false));
        a.insert(e(vec![2.0, 1.0]));
        a.insert(e(vec![2.0, 3.0]));
        assert_eq!(a.entries[0].repeat_hits, 1);
        assert_eq!(a.dominance_violations(), vec![(0, 2), (1, 2)]);
        assert_eq!(a.finalize(), 1);
        assert!(a.dominance_violations().is_empty());
    }

    #[test]
    fn single_vector_wave() {
        let m = toy();
        let r = ObjectiveRanges { lb: vec![0.0, 0.0], ub: vec![1.0, 1.0] };
        let sc = Scalarizer::new(&m, &r, 0, DEFAULT_BETA).unwrap();
        let grid = vec![EpsVector { eps: vec![1.0], coords: vec![0] }];
        let res = run_wave(&sc, &grid, WaveConfig::default(), &mut |_| {});
        assert_eq!(res.solutions.len(), 1);
        assert_eq!(res.stats.n_omit_infeas + res.stats.n_omit_repeat, 0);
        let arch = res.archive(&grid, "I", |s| (s.objectives.clone(), ()));
        assert_eq!(arch.len(), 1);
    }

    #[test]
    fn stats_row_format() {
        let s = WaveStats {
            n_eps: 1000,
            n_sol: 77,
            n_infeasible_solved: 1,
            n_omit_infeas: 566,
            n_omit_repeat: 346,
            n_unexplored: 0,
            n_lp: 88,
            total_time_s: 183.0,
        };
        assert_eq!(s.n_sol + s.n_infeasible() + s.n_omit_repeat + 10, 1000);
        assert!(s.csv_row().starts_with("1000,77,7.7,56.7,"));
        assert_eq!(WaveStats::csv_header().split(',').count(), s.csv_row().split(',').count());
    }
}
