use super::{LpError, LpProblem, Relation, SolverTolerances};

/// Consecutive degenerate pivots before switching to lowest-index pricing.
const DEGENERATE_SWITCH: usize = 30;
const SINGULAR_PIVOT: f64 = 1e-11;

pub(crate) enum RawOutcome {
    Optimal { x: Vec<f64>, duals: Vec<f64>, iterations: usize, basis: Option<Basis> },
    Infeasible,
    Unbounded,
}

/// A final basis, reusable as the starting point of a problem with the same
/// matrix and bounds but different right-hand sides.
#[derive(Debug, Clone)]
pub(crate) struct Basis {
    pub(crate) n: usize,
    pub(crate) m: usize,
    basis: Vec<usize>,
    state: Vec<State>,
}

pub(crate) enum WarmEnd {
    Done(RawOutcome),
    /// The basis could not be used; solve from scratch.
    Fallback,
}

/// Dual simplex passes before giving up on a warm start.
const DUAL_ITERATION_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable sitting at zero.
    Free,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

enum Step {
    Flip,
    Pivot { row: usize, to_upper: bool },
}

struct Columns {
    col_start: Vec<usize>,
    col_row: Vec<usize>,
    col_val: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
}

impl Columns {
    /// Structural columns followed by one logical per row.
    fn build(p: &LpProblem) -> Self {
        let m = p.num_rows();
        let n = p.num_vars();
        let mut counts = vec![0usize; n];
        for row in &p.rows {
            for &(j, _) in &row.coeffs {
                counts[j] += 1;
            }
        }
        let mut col_start = Vec::with_capacity(n + 2 * m + 1);
        col_start.push(0);
        for &c in &counts {
            col_start.push(col_start.last().unwrap() + c);
        }
        let nnz = *col_start.last().unwrap();
        let mut col_row = vec![0usize; nnz];
        let mut col_val = vec![0.0; nnz];
        let mut fill = col_start[..n].to_vec();
        for (i, row) in p.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                col_row[fill[j]] = i;
                col_val[fill[j]] = a;
                fill[j] += 1;
            }
        }
        let mut lb = p.lower.clone();
        let mut ub = p.upper.clone();
        for row in &p.rows {
            let (l, u) = match row.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lb.push(l);
            ub.push(u);
        }
        for i in 0..m {
            col_row.push(i);
            col_val.push(1.0);
            col_start.push(col_row.len());
        }
        Self { col_start, col_row, col_val, lb, ub }
    }
}

/// Bounded-variable primal simplex over `A x + s = b`, one logical `s_i` per
/// row, with a dense explicit basis inverse.
pub(crate) struct Simplex<'a> {
    tol: &'a SolverTolerances,
    m: usize,
    n_struct: usize,
    // Columns (structurals, logicals, artificials) in CSC layout.
    col_start: Vec<usize>,
    col_row: Vec<usize>,
    col_val: Vec<f64>,
    col_norm: Vec<f64>,
    rhs: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    objective: Vec<f64>,
    x: Vec<f64>,
    state: Vec<State>,
    first_artificial: usize,
    basis: Vec<usize>,
    binv: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
    degenerate_run: usize,
    // Scratch.
    pi: Vec<f64>,
    w: Vec<f64>,
    /// Row at which the dual simplex found no entering column.
    blocked: Option<usize>,
}

impl<'a> Simplex<'a> {
    pub(crate) fn new(p: &LpProblem, tol: &'a SolverTolerances) -> Self {
        let m = p.num_rows();
        let n = p.num_vars();
        let Columns { mut col_start, mut col_row, mut col_val, mut lb, mut ub } = Columns::build(p);
        let mut x = vec![0.0; n + m];
        let mut state = vec![State::AtLower; n + m];
        for j in 0..n {
            if lb[j].is_finite() {
                x[j] = lb[j];
                state[j] = State::AtLower;
            } else if ub[j].is_finite() {
                x[j] = ub[j];
                state[j] = State::AtUpper;
            } else {
                x[j] = 0.0;
                state[j] = State::Free;
            }
        }
        let rhs: Vec<f64> = p.rows.iter().map(|r| r.rhs).collect();
        let mut residual = rhs.clone();
        for j in 0..n {
            if x[j] != 0.0 {
                for k in col_start[j]..col_start[j + 1] {
                    residual[col_row[k]] -= col_val[k] * x[j];
                }
            }
        }

        // Slack basis where the residual fits the logical's bounds; otherwise
        // an artificial absorbs the gap.
        let first_artificial = n + m;
        let mut basis = vec![0usize; m];
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            let s = n + i;
            let r = residual[i];
            if r >= lb[s] && r <= ub[s] {
                x[s] = r;
                state[s] = State::Basic;
                basis[i] = s;
                binv[i * m + i] = 1.0;
            } else {
                let (v, st) = if r < lb[s] { (lb[s], State::AtLower) } else { (ub[s], State::AtUpper) };
                x[s] = v;
                state[s] = st;
                let sign = if r - v >= 0.0 { 1.0 } else { -1.0 };
                col_row.push(i);
                col_val.push(sign);
                col_start.push(col_row.len());
                lb.push(0.0);
                ub.push(f64::INFINITY);
                x.push((r - v).abs());
                state.push(State::Basic);
                basis[i] = x.len() - 1;
                binv[i * m + i] = sign;
            }
        }
        let total = x.len();
        let col_norm = (0..total).map(|j| (col_start[j]..col_start[j + 1]).map(|k| col_val[k] * col_val[k]).sum::<f64>()).collect();
        let mut objective = p.objective.clone();
        objective.resize(total, 0.0);

        Self {
            tol,
            m,
            n_struct: n,
            col_start,
            col_row,
            col_val,
            col_norm,
            rhs,
            lb,
            ub,
            cost: vec![0.0; total],
            objective,
            x,
            state,
            first_artificial,
            basis,
            binv,
            iterations: 0,
            since_refactor: 0,
            degenerate_run: 0,
            pi: vec![0.0; m],
            w: vec![0.0; m],
            blocked: None,
        }
    }

    pub(crate) fn run(mut self) -> Result<RawOutcome, LpError> {
        let total = self.x.len();
        if total > self.first_artificial {
            for j in self.first_artificial..total {
                self.cost[j] = 1.0;
            }
            if let PhaseEnd::Unbounded = self.iterate()? {
                return Err(LpError::NumericalBreakdown("phase one reported an unbounded ray".into()));
            }
            self.refactor()?;
            // Phase 1 stops on reduced-cost tolerance, so a small residual is
            // no proof. It is left to the drift repair and certificate below.
            let infeasibility: f64 = (self.first_artificial..total).map(|j| self.x[j].max(0.0)).sum();
            if infeasibility > self.margin(0.0) {
                return Ok(RawOutcome::Infeasible);
            }
            for j in self.first_artificial..total {
                self.cost[j] = 0.0;
                self.ub[j] = 0.0;
                if self.state[j] != State::Basic {
                    self.x[j] = 0.0;
                    self.state[j] = State::AtLower;
                }
            }
        }

        self.cost.copy_from_slice(&self.objective);
        self.degenerate_run = 0;
        if let PhaseEnd::Unbounded = self.iterate()? {
            return Ok(RawOutcome::Unbounded);
        }
        self.refactor()?;
        if self.basic_infeasibility() > self.tol.feas {
            // Reinversion exposed drift. The basis is still dual feasible, so
            // dual pivots restore primal feasibility or certify that the
            // bound slips let through by phase 1 hid an infeasibility. An
            // uncertified blocked row within the final tolerance is only drift.
            if self.dual_feasible() && !self.dual_iterate()? {
                let violation = self.basic_infeasibility();
                if self.certify_blocked_row() || violation > self.tol.feas * 10.0 {
                    return Ok(RawOutcome::Infeasible);
                }
            }
            self.degenerate_run = 0;
            if let PhaseEnd::Unbounded = self.iterate()? {
                return Ok(RawOutcome::Unbounded);
            }
            self.refactor()?;
            let worst = self.basic_infeasibility();
            if worst > self.tol.feas * 10.0 {
                return Err(LpError::NumericalBreakdown(format!("basic solution infeasible by {worst:e}")));
            }
        }
        self.compute_pi();
        let duals = self.pi.clone();
        let x = self.x[..self.n_struct].to_vec();
        let basis = self.export_basis();
        Ok(RawOutcome::Optimal { x, duals, iterations: self.iterations, basis })
    }

    fn export_basis(&self) -> Option<Basis> {
        let limit = self.n_struct + self.m;
        if self.basis.iter().any(|&j| j >= limit) {
            return None;
        }
        Some(Basis { n: self.n_struct, m: self.m, basis: self.basis.clone(), state: self.state[..limit].to_vec() })
    }

    /// Starts from a stored basis instead of the slack basis. Returns `None`
    /// when the basis does not fit the problem or is singular.
    pub(crate) fn new_warm(p: &LpProblem, tol: &'a SolverTolerances, start: &Basis) -> Option<Self> {
        let m = p.num_rows();
        let n = p.num_vars();
        if start.n != n || start.m != m {
            return None;
        }
        let Columns { col_start, col_row, col_val, lb, ub } = Columns::build(p);
        let total = n + m;
        let mut x = vec![0.0; total];
        let state = start.state.clone();
        for j in 0..total {
            x[j] = match state[j] {
                State::Basic => 0.0,
                State::AtLower if lb[j].is_finite() => lb[j],
                State::AtUpper if ub[j].is_finite() => ub[j],
                State::Free if !lb[j].is_finite() && !ub[j].is_finite() => 0.0,
                _ => return None,
            };
        }
        let col_norm = (0..total).map(|j| (col_start[j]..col_start[j + 1]).map(|k| col_val[k] * col_val[k]).sum::<f64>()).collect();
        let mut objective = p.objective.clone();
        objective.resize(total, 0.0);
        let mut s = Self {
            tol,
            m,
            n_struct: n,
            col_start,
            col_row,
            col_val,
            col_norm,
            rhs: p.rows.iter().map(|r| r.rhs).collect(),
            lb,
            ub,
            cost: objective.clone(),
            objective,
            x,
            state,
            first_artificial: total,
            basis: start.basis.clone(),
            binv: Vec::new(),
            iterations: 0,
            since_refactor: 0,
            degenerate_run: 0,
            pi: vec![0.0; m],
            w: vec![0.0; m],
            blocked: None,
        };
        s.refactor().ok()?;
        Some(s)
    }

    /// Restores primal feasibility with dual simplex pivots, then finishes
    /// with primal simplex.
    pub(crate) fn run_warm(mut self) -> Result<WarmEnd, LpError> {
        if self.basic_infeasibility() > self.tol.feas {
            if !self.dual_feasible() {
                return Ok(WarmEnd::Fallback);
            }
            match self.dual_iterate() {
                Ok(true) => {}
                Ok(false) if self.certify_blocked_row() => return Ok(WarmEnd::Done(RawOutcome::Infeasible)),
                Ok(false) | Err(_) => return Ok(WarmEnd::Fallback),
            }
        }
        self.degenerate_run = 0;
        match self.iterate() {
            Ok(PhaseEnd::Optimal) => {}
            Ok(PhaseEnd::Unbounded) => return Ok(WarmEnd::Done(RawOutcome::Unbounded)),
            Err(_) => return Ok(WarmEnd::Fallback),
        }
        if self.refactor().is_err() || self.basic_infeasibility() > self.tol.feas {
            return Ok(WarmEnd::Fallback);
        }
        self.compute_pi();
        let duals = self.pi.clone();
        let x = self.x[..self.n_struct].to_vec();
        let basis = self.export_basis();
        Ok(WarmEnd::Done(RawOutcome::Optimal { x, duals, iterations: self.iterations, basis }))
    }

    /// Farkas check on the row that stopped the dual simplex: with a fresh
    /// inverse, the basic variable of that row cannot reach its violated
    /// bound anywhere in the box of the nonbasic variables.
    fn certify_blocked_row(&mut self) -> bool {
        let Some(r) = self.blocked.take() else { return false };
        if self.refactor().is_err() {
            return false;
        }
        let m = self.m;
        let leaving = self.basis[r];
        let (x, lb, ub) = (self.x[leaving], self.lb[leaving], self.ub[leaving]);
        // x_r = x_r(now) - sum_j alpha_j (x_j - x_j(now)); `up` asks whether x_r
        // can rise to lb, otherwise whether it can fall to ub.
        let up = x < lb;
        if !up && x <= ub {
            return false;
        }
        let rho = &self.binv[r * m..(r + 1) * m];
        let mut reach = x;
        for j in 0..self.x.len() {
            if self.state[j] == State::Basic {
                continue;
            }
            let alpha: f64 = (self.col_start[j]..self.col_start[j + 1]).map(|k| rho[self.col_row[k]] * self.col_val[k]).sum();
            if alpha == 0.0 {
                continue;
            }
            // Change of x_r per unit increase of x_j is -alpha.
            let rise = if up { -alpha } else { alpha };
            let room = if rise > 0.0 { self.ub[j] - self.x[j] } else { self.x[j] - self.lb[j] };
            if room == f64::INFINITY {
                return false;
            }
            let gain = rise.abs() * room;
            reach += if up { gain } else { -gain };
        }
        // Marginal cases are left to a cold phase 1.
        if up {
            reach < lb - self.margin(lb)
        } else {
            reach > ub + self.margin(ub)
        }
    }

    /// Violation below which a blocked row is not trusted as a certificate.
    fn margin(&self, bound: f64) -> f64 {
        100.0 * self.tol.feas * (1.0 + bound.abs())
    }

    fn dual_feasible(&mut self) -> bool {
        self.compute_pi();
        let tol = self.tol.opt * 10.0;
        (0..self.x.len()).all(|j| {
            if self.state[j] == State::Basic || self.lb[j] == self.ub[j] {
                return true;
            }
            let d = self.reduced_cost(j);
            match self.state[j] {
                State::AtLower => d >= -tol,
                State::AtUpper => d <= tol,
                _ => d.abs() <= tol,
            }
        })
    }

    /// Dual simplex until the basis is primal feasible (`true`) or no column
    /// can repair the leaving row (`false`, row kept in `self.blocked`).
    fn dual_iterate(&mut self) -> Result<bool, LpError> {
        let m = self.m;
        let limit = DUAL_ITERATION_FACTOR * (m + 10);
        for _ in 0..limit {
            if self.since_refactor >= self.tol.refactor_every {
                self.refactor()?;
            }
            let mut leave: Option<(usize, f64)> = None;
            let mut worst = self.tol.feas;
            for i in 0..m {
                let j = self.basis[i];
                let v = (self.lb[j] - self.x[j]).max(self.x[j] - self.ub[j]);
                if v > worst {
                    worst = v;
                    leave = Some((i, if self.x[j] < self.lb[j] { self.lb[j] } else { self.ub[j] }));
                }
            }
            let Some((r, target)) = leave else { return Ok(true) };
            let increase = target > self.x[self.basis[r]];
            self.compute_pi();
            let rho = &self.binv[r * m..(r + 1) * m];
            let mut best: Option<(usize, f64, f64)> = None;
            for j in 0..self.x.len() {
                if self.state[j] == State::Basic || self.lb[j] == self.ub[j] {
                    continue;
                }
                let alpha: f64 = (self.col_start[j]..self.col_start[j + 1]).map(|k| rho[self.col_row[k]] * self.col_val[k]).sum();
                if alpha.abs() <= self.tol.pivot {
                    continue;
                }
                // x_r moves by -alpha per unit increase of x_j.
                let ok = match self.state[j] {
                    State::AtLower => (alpha < 0.0) == increase,
                    State::AtUpper => (alpha > 0.0) == increase,
                    _ => true,
                };
                if !ok {
                    continue;
                }
                let ratio = self.reduced_cost(j).abs() / alpha.abs();
                let better = match best {
                    None => true,
                    Some((_, br, ba)) => ratio < br - 1e-12 || (ratio <= br + 1e-12 && alpha.abs() > ba),
                };
                if better {
                    best = Some((j, ratio, alpha.abs()));
                }
            }
            let Some((q, _, _)) = best else {
                self.blocked = Some(r);
                return Ok(false);
            };
            self.compute_column(q);
            let wr = self.w[r];
            if wr.abs() <= self.tol.pivot {
                return Err(LpError::NumericalBreakdown("dual pivot vanished".into()));
            }
            let leaving = self.basis[r];
            let delta = (self.x[leaving] - target) / wr;
            self.x[q] += delta;
            for i in 0..m {
                let w = self.w[i];
                if w != 0.0 {
                    let j = self.basis[i];
                    self.x[j] -= w * delta;
                }
            }
            self.x[leaving] = target;
            self.state[leaving] = if increase { State::AtLower } else { State::AtUpper };
            self.basis[r] = q;
            self.state[q] = State::Basic;
            self.iterations += 1;
            self.pivot(r)?;
        }
        Err(LpError::NumericalBreakdown("dual simplex iteration limit".into()))
    }

    fn basic_infeasibility(&self) -> f64 {
        self.basis.iter().map(|&j| (self.lb[j] - self.x[j]).max(self.x[j] - self.ub[j]).max(0.0)).fold(0.0, f64::max)
    }

    fn compute_pi(&mut self) {
        let m = self.m;
        self.pi.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            let c = self.cost[self.basis[i]];
            if c != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (p, b) in self.pi.iter_mut().zip(row) {
                    *p += c * b;
                }
            }
        }
    }

    fn reduced_cost(&self, j: usize) -> f64 {
        let mut d = self.cost[j];
        for k in self.col_start[j]..self.col_start[j + 1] {
            d -= self.pi[self.col_row[k]] * self.col_val[k];
        }
        d
    }

    /// Picks an entering column and its direction (+1 increase, -1 decrease).
    fn price(&self, bland: bool) -> Option<(usize, f64)> {
        let tol = self.tol.opt;
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.x.len() {
            if self.state[j] == State::Basic || self.lb[j] == self.ub[j] {
                continue;
            }
            let d = self.reduced_cost(j);
            let dir = match self.state[j] {
                State::AtLower if d < -tol => 1.0,
                State::AtUpper if d > tol => -1.0,
                State::Free if d.abs() > tol => -d.signum(),
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            let score = d * d / (1.0 + self.col_norm[j]);
            if score > best_score {
                best_score = score;
                best = Some((j, dir));
            }
        }
        best
    }

    fn compute_column(&mut self, q: usize) {
        let m = self.m;
        let (s, e) = (self.col_start[q], self.col_start[q + 1]);
        let rows = &self.col_row[s..e];
        let vals = &self.col_val[s..e];
        for (i, w) in self.w.iter_mut().enumerate() {
            let brow = &self.binv[i * m..(i + 1) * m];
            *w = rows.iter().zip(vals).map(|(&r, &a)| brow[r] * a).sum();
        }
    }

    /// Harris two-pass ratio test. Returns the step length and its kind, or
    /// `None` for an unbounded direction.
    fn ratio_test(&self, q: usize, dir: f64) -> Option<(f64, Step)> {
        let feas = self.tol.feas;
        let piv = self.tol.pivot;
        let mut relaxed = f64::INFINITY;
        for i in 0..self.m {
            let rate = -dir * self.w[i];
            let j = self.basis[i];
            if rate < -piv && self.lb[j].is_finite() {
                relaxed = relaxed.min((self.x[j] - self.lb[j] + feas) / -rate);
            } else if rate > piv && self.ub[j].is_finite() {
                relaxed = relaxed.min((self.ub[j] + feas - self.x[j]) / rate);
            }
        }
        let range = self.ub[q] - self.lb[q];
        if range.is_finite() && range <= relaxed {
            return Some((range, Step::Flip));
        }
        if relaxed == f64::INFINITY {
            return None;
        }
        let mut chosen: Option<(usize, f64, bool)> = None;
        let mut best_mag = 0.0;
        for i in 0..self.m {
            let rate = -dir * self.w[i];
            let j = self.basis[i];
            let (ratio, to_upper) = if rate < -piv && self.lb[j].is_finite() {
                ((self.x[j] - self.lb[j]) / -rate, false)
            } else if rate > piv && self.ub[j].is_finite() {
                ((self.ub[j] - self.x[j]) / rate, true)
            } else {
                continue;
            };
            if ratio <= relaxed && rate.abs() > best_mag {
                best_mag = rate.abs();
                chosen = Some((i, ratio.max(0.0), to_upper));
            }
        }
        chosen.map(|(row, t, to_upper)| (t, Step::Pivot { row, to_upper }))
    }

    fn iterate(&mut self) -> Result<PhaseEnd, LpError> {
        loop {
            if self.iterations >= self.tol.max_iterations {
                return Err(LpError::NumericalBreakdown("iteration limit reached".into()));
            }
            if self.since_refactor >= self.tol.refactor_every {
                self.refactor()?;
            }
            self.compute_pi();
            let bland = self.degenerate_run >= DEGENERATE_SWITCH;
            let Some((q, dir)) = self.price(bland) else {
                return Ok(PhaseEnd::Optimal);
            };
            self.compute_column(q);
            let Some((t, step)) = self.ratio_test(q, dir) else {
                return Ok(PhaseEnd::Unbounded);
            };
            self.iterations += 1;
            if t <= 1e-12 {
                self.degenerate_run += 1;
            } else {
                self.degenerate_run = 0;
            }
            self.x[q] += dir * t;
            for i in 0..self.m {
                let w = self.w[i];
                if w != 0.0 {
                    let j = self.basis[i];
                    self.x[j] -= dir * t * w;
                }
            }
            match step {
                Step::Flip => {
                    if dir > 0.0 {
                        self.x[q] = self.ub[q];
                        self.state[q] = State::AtUpper;
                    } else {
                        self.x[q] = self.lb[q];
                        self.state[q] = State::AtLower;
                    }
                }
                Step::Pivot { row, to_upper } => {
                    let leaving = self.basis[row];
                    if to_upper {
                        self.x[leaving] = self.ub[leaving];
                        self.state[leaving] = State::AtUpper;
                    } else {
                        self.x[leaving] = self.lb[leaving];
                        self.state[leaving] = State::AtLower;
                    }
                    if leaving >= self.first_artificial {
                        // Artificials never re-enter.
                        self.ub[leaving] = 0.0;
                        self.x[leaving] = 0.0;
                        self.state[leaving] = State::AtLower;
                    }
                    self.basis[row] = q;
                    self.state[q] = State::Basic;
                    self.pivot(row)?;
                }
            }
        }
    }

    /// Rank-one update of the explicit inverse for a pivot in `row`.
    fn pivot(&mut self, row: usize) -> Result<(), LpError> {
        let m = self.m;
        let p = self.w[row];
        if p.abs() < SINGULAR_PIVOT {
            return self.refactor();
        }
        let inv = 1.0 / p;
        for v in &mut self.binv[row * m..(row + 1) * m] {
            *v *= inv;
        }
        let (head, rest) = self.binv.split_at_mut(row * m);
        let (prow, tail) = rest.split_at_mut(m);
        for i in 0..m {
            if i == row {
                continue;
            }
            let f = self.w[i];
            if f == 0.0 {
                continue;
            }
            let target = if i < row { &mut head[i * m..(i + 1) * m] } else { &mut tail[(i - row - 1) * m..(i - row) * m] };
            for (t, s) in target.iter_mut().zip(prow.iter()) {
                *t -= f * s;
            }
        }
        self.since_refactor += 1;
        Ok(())
    }

    /// Rebuilds the inverse from the basis columns and recomputes basic values.
    ///
    /// Basis columns with a single nonzero (logicals, artificials) are
    /// eliminated directly; only the square block of the remaining columns
    /// on the rows those singletons leave uncovered is inverted densely.
    fn refactor(&mut self) -> Result<(), LpError> {
        let m = self.m;
        self.since_refactor = 0;
        if m == 0 {
            return Ok(());
        }
        let mut row_owner = vec![usize::MAX; m];
        let mut singleton_val = vec![0.0; m];
        let mut rest = Vec::new();
        for (pos, &j) in self.basis.iter().enumerate() {
            let (s, e) = (self.col_start[j], self.col_start[j + 1]);
            if e - s == 1 && row_owner[self.col_row[s]] == usize::MAX {
                row_owner[self.col_row[s]] = pos;
                singleton_val[pos] = self.col_val[s];
            } else {
                rest.push(pos);
            }
        }
        let free_rows: Vec<usize> = (0..m).filter(|&r| row_owner[r] == usize::MAX).collect();
        let k = rest.len();
        if free_rows.len() != k {
            return Err(LpError::NumericalBreakdown("singular basis during reinversion".into()));
        }
        let mut local = vec![usize::MAX; m];
        for (t, &r) in free_rows.iter().enumerate() {
            local[r] = t;
        }
        let mut a = vec![0.0; k * k];
        for (c, &pos) in rest.iter().enumerate() {
            let j = self.basis[pos];
            for q in self.col_start[j]..self.col_start[j + 1] {
                let t = local[self.col_row[q]];
                if t != usize::MAX {
                    a[t * k + c] = self.col_val[q];
                }
            }
        }
        let minv = invert_dense(a, k)?;

        let mut inv = vec![0.0; m * m];
        for (c, &pos) in rest.iter().enumerate() {
            let dst = &mut inv[pos * m..(pos + 1) * m];
            for (t, &r) in free_rows.iter().enumerate() {
                dst[r] = minv[c * k + t];
            }
        }
        for r in 0..m {
            let pos = row_owner[r];
            if pos != usize::MAX {
                inv[pos * m + r] = 1.0 / singleton_val[pos];
            }
        }
        // Singleton rows also see the non-singleton columns.
        for (c, &pos_s) in rest.iter().enumerate() {
            let j = self.basis[pos_s];
            for q in self.col_start[j]..self.col_start[j + 1] {
                let r = self.col_row[q];
                let pos = row_owner[r];
                if pos == usize::MAX {
                    continue;
                }
                let f = self.col_val[q] / singleton_val[pos];
                let src = &minv[c * k..(c + 1) * k];
                let dst = &mut inv[pos * m..(pos + 1) * m];
                for (t, &fr) in free_rows.iter().enumerate() {
                    dst[fr] -= f * src[t];
                }
            }
        }
        self.binv = inv;

        let mut residual = self.rhs.clone();
        for j in 0..self.x.len() {
            if self.state[j] != State::Basic && self.x[j] != 0.0 {
                for k in self.col_start[j]..self.col_start[j + 1] {
                    residual[self.col_row[k]] -= self.col_val[k] * self.x[j];
                }
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            let v: f64 = row.iter().zip(&residual).map(|(b, r)| b * r).sum();
            self.x[self.basis[i]] = v;
        }
        // One round of iterative refinement on B x_B = residual.
        let mut r = residual;
        for &j in &self.basis {
            for k in self.col_start[j]..self.col_start[j + 1] {
                r[self.col_row[k]] -= self.col_val[k] * self.x[j];
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            let v: f64 = row.iter().zip(&r).map(|(b, r)| b * r).sum();
            self.x[self.basis[i]] += v;
        }
        Ok(())
    }
}

/// Inverse of a dense row-major `k x k` matrix by Gauss-Jordan elimination
/// with partial pivoting.
fn invert_dense(mut a: Vec<f64>, k: usize) -> Result<Vec<f64>, LpError> {
    let mut inv = vec![0.0; k * k];
    for i in 0..k {
        inv[i * k + i] = 1.0;
    }
    for c in 0..k {
        let mut piv_row = c;
        let mut piv_val = a[c * k + c].abs();
        for r in c + 1..k {
            let v = a[r * k + c].abs();
            if v > piv_val {
                piv_val = v;
                piv_row = r;
            }
        }
        if piv_val < SINGULAR_PIVOT {
            return Err(LpError::NumericalBreakdown("singular basis during reinversion".into()));
        }
        if piv_row != c {
            for q in 0..k {
                a.swap(c * k + q, piv_row * k + q);
                inv.swap(c * k + q, piv_row * k + q);
            }
        }
        let d = 1.0 / a[c * k + c];
        for q in 0..k {
            a[c * k + q] *= d;
            inv[c * k + q] *= d;
        }
        let (prow_a, prow_i) = (a[c * k..(c + 1) * k].to_vec(), inv[c * k..(c + 1) * k].to_vec());
        for r in 0..k {
            if r == c {
                continue;
            }
            let f = a[r * k + c];
            if f == 0.0 {
                continue;
            }
            for (x, p) in a[r * k..(r + 1) * k].iter_mut().zip(&prow_a) {
                *x -= f * p;
            }
            for (x, p) in inv[r * k..(r + 1) * k].iter_mut().zip(&prow_i) {
                *x -= f * p;
            }
        }
    }
    Ok(inv)
}
