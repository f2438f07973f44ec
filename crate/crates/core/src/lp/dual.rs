use super::{LpProblem, Relation};

/// Builds the LP dual, itself written as a minimization.
///
/// Finite variable bounds other than a zero lower bound are first moved into
/// explicit rows, so the primal reads `min c.x` over rows `A x (rel) b` with
/// each variable either nonnegative or free. Dual variable `i` belongs to row
/// `i` of that normalized primal (original rows first, then bound rows in
/// variable order). With `v_p` and `v_d` the optimal values of primal and
/// dual, strong duality gives `v_p = -v_d`.
pub fn dualize(problem: &LpProblem) -> LpProblem {
    let n = problem.num_vars();
    let mut rows: Vec<(Vec<(usize, f64)>, Relation, f64)> = problem.rows.iter().map(|r| (r.coeffs.clone(), r.relation, r.rhs)).collect();
    let mut nonneg = vec![false; n];
    for j in 0..n {
        let (l, u) = (problem.lower[j], problem.upper[j]);
        if l == 0.0 {
            nonneg[j] = true;
        } else if l.is_finite() {
            nonneg[j] = l > 0.0;
            rows.push((vec![(j, 1.0)], Relation::Ge, l));
        }
        if u.is_finite() {
            rows.push((vec![(j, 1.0)], Relation::Le, u));
        }
    }

    let mut dual = LpProblem::new();
    for (_, rel, rhs) in &rows {
        let (l, u) = match rel {
            Relation::Ge => (0.0, f64::INFINITY),
            Relation::Le => (f64::NEG_INFINITY, 0.0),
            Relation::Eq => (f64::NEG_INFINITY, f64::INFINITY),
        };
        dual.add_var(-rhs, l, u);
    }
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, (coeffs, _, _)) in rows.iter().enumerate() {
        for &(j, a) in coeffs {
            cols[j].push((i, a));
        }
    }
    for (j, col) in cols.into_iter().enumerate() {
        let rel = if nonneg[j] { Relation::Le } else { Relation::Eq };
        dual.add_row(col, rel, problem.objective[j]);
    }
    dual
}
