//! Substitution of variables that are defined by an equality row and whose
//! bounds are implied by that definition (e.g. `d = G g` with `g >= 0`).

use super::{LpProblem, Relation, Row};

const DROP: f64 = 1e-13;
const MAX_FILL: usize = 400_000;

struct Elimination {
    var: usize,
    row: usize,
    coeffs: Vec<(usize, f64)>,
    rhs: f64,
    pivot: f64,
    mu: f64,
    lambdas: Vec<(usize, f64)>,
}

pub(crate) struct PresolveStack {
    steps: Vec<Elimination>,
    kept_rows: Vec<usize>,
}

impl PresolveStack {
    pub(crate) fn postsolve(&self, x_red: &[f64], y_red: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
        let mut x = x_red.to_vec();
        for s in self.steps.iter().rev() {
            let rest: f64 = s.coeffs.iter().filter(|&&(k, _)| k != s.var).map(|&(k, a)| a * x[k]).sum();
            x[s.var] = (s.rhs - rest) / s.pivot;
        }
        let mut y = vec![0.0; m];
        for (k, &r) in self.kept_rows.iter().enumerate() {
            y[r] = y_red[k];
        }
        for s in self.steps.iter().rev() {
            y[s.row] = s.mu - s.lambdas.iter().map(|&(r, l)| y[r] * l).sum::<f64>();
        }
        (x, y)
    }
}

fn lookup(row: &Row, j: usize) -> Option<f64> {
    row.coeffs.binary_search_by_key(&j, |&(k, _)| k).ok().map(|p| row.coeffs[p].1)
}

/// Range of `(rhs - sum_{k != j} a_k x_k) / a_j` over the variable box.
fn implied_range(p: &LpProblem, row: &Row, j: usize, aj: f64) -> (f64, f64) {
    let mut lo = row.rhs / aj;
    let mut hi = lo;
    for &(k, a) in &row.coeffs {
        if k == j {
            continue;
        }
        let c = -a / aj;
        let (l, u) = (p.lower[k], p.upper[k]);
        if c > 0.0 {
            lo += c * l;
            hi += c * u;
        } else {
            lo += c * u;
            hi += c * l;
        }
    }
    (lo, hi)
}

/// Returns the reduced problem (same variable indexing, fewer rows) and the
/// information needed to recover primal values and row duals.
pub(crate) fn eliminate_defined(problem: &LpProblem) -> (LpProblem, PresolveStack) {
    let m = problem.num_rows();
    let n = problem.num_vars();
    let mut rows: Vec<Option<Row>> = problem.rows.iter().cloned().map(Some).collect();
    let mut obj = problem.objective.clone();
    let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, r) in problem.rows.iter().enumerate() {
        for &(j, _) in &r.coeffs {
            col_rows[j].push(i);
        }
    }
    let mut eliminated = vec![false; n];
    let mut steps = Vec::new();

    for i in 0..m {
        let Some(row) = rows[i].as_ref() else { continue };
        if row.relation != Relation::Eq || row.coeffs.len() < 2 {
            continue;
        }
        let amax = row.coeffs.iter().map(|&(_, a)| a.abs()).fold(0.0, f64::max);
        let mut best: Option<(usize, usize)> = None;
        for &(j, a) in &row.coeffs {
            if eliminated[j] || a.abs() < 0.01 * amax {
                continue;
            }
            let (lo, hi) = implied_range(problem, row, j, a);
            let scale = [lo, hi].iter().filter(|v| v.is_finite()).fold(0.0f64, |a, v| a.max(v.abs()));
            let slack = 1e-12 * (1.0 + scale);
            if lo < problem.lower[j] - slack || hi > problem.upper[j] + slack {
                continue;
            }
            let occ = col_rows[j].iter().filter(|&&r| r != i && rows[r].as_ref().is_some_and(|rr| lookup(rr, j).is_some())).count();
            if occ * row.coeffs.len() > MAX_FILL {
                continue;
            }
            if best.is_none_or(|(_, o)| occ < o) {
                best = Some((j, occ));
            }
        }
        let Some((j, _)) = best else { continue };
        let pivot_row = rows[i].take().unwrap();
        let pivot = lookup(&pivot_row, j).unwrap();
        let mut lambdas = Vec::new();
        let mut targets: Vec<usize> = col_rows[j].clone();
        targets.sort_unstable();
        targets.dedup();
        for r in targets {
            let Some(target) = rows[r].as_mut() else { continue };
            let Some(arj) = lookup(target, j) else { continue };
            let lambda = arj / pivot;
            lambdas.push((r, lambda));
            target.coeffs = axpy_merge(&target.coeffs, &pivot_row.coeffs, -lambda, j);
            target.rhs -= lambda * pivot_row.rhs;
            for &(k, _) in &pivot_row.coeffs {
                if k != j {
                    col_rows[k].push(r);
                }
            }
        }
        let mu = obj[j] / pivot;
        if mu != 0.0 {
            for &(k, a) in &pivot_row.coeffs {
                obj[k] -= mu * a;
            }
        }
        obj[j] = 0.0;
        eliminated[j] = true;
        steps.push(Elimination { var: j, row: i, coeffs: pivot_row.coeffs, rhs: pivot_row.rhs, pivot, mu, lambdas });
    }

    let mut kept_rows = Vec::new();
    let mut reduced = LpProblem { objective: obj, lower: problem.lower.clone(), upper: problem.upper.clone(), rows: Vec::new() };
    for (i, r) in rows.into_iter().enumerate() {
        if let Some(r) = r {
            kept_rows.push(i);
            reduced.rows.push(r);
        }
    }
    for s in &steps {
        // Eliminated columns are free-standing now; pin them to a bound so
        // the solver never touches them.
        let v = if problem.lower[s.var].is_finite() {
            problem.lower[s.var]
        } else if problem.upper[s.var].is_finite() {
            problem.upper[s.var]
        } else {
            0.0
        };
        reduced.lower[s.var] = v;
        reduced.upper[s.var] = v;
    }
    (reduced, PresolveStack { steps, kept_rows })
}

/// `a + f * b` over sorted sparse vectors, dropping column `skip` and
/// cancellation noise.
fn axpy_merge(a: &[(usize, f64)], b: &[(usize, f64)], f: f64, skip: usize) -> Vec<(usize, f64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut p, mut q) = (0, 0);
    while p < a.len() || q < b.len() {
        let (col, val, scale) = match (a.get(p), b.get(q)) {
            (Some(&(ca, va)), Some(&(cb, vb))) if ca == cb => {
                p += 1;
                q += 1;
                (ca, va + f * vb, va.abs().max((f * vb).abs()))
            }
            (Some(&(ca, va)), Some(&(cb, _))) if ca < cb => {
                p += 1;
                (ca, va, va.abs())
            }
            (Some(&(ca, va)), None) => {
                p += 1;
                (ca, va, va.abs())
            }
            (_, Some(&(cb, vb))) => {
                q += 1;
                (cb, f * vb, (f * vb).abs())
            }
            (None, None) => unreachable!(),
        };
        if col == skip || val.abs() <= DROP * scale.max(1e-300) || val == 0.0 {
            continue;
        }
        out.push((col, val));
    }
    out
}
