use std::fmt::Write as _;
use std::io;

use super::{LpProblem, Relation};

fn num(v: f64) -> String {
    let s = format!("{v}");
    if s.len() <= 12 {
        s
    } else {
        format!("{v:.5e}")
    }
}

/// Writes `problem` in fixed-column MPS. Rows are named `R0000001...`,
/// columns `C0000001...`, the objective `COST`.
pub fn write_mps(problem: &LpProblem, name: &str, out: &mut impl io::Write) -> io::Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "NAME          {name}");
    let _ = writeln!(s, "ROWS");
    let _ = writeln!(s, " N  COST");
    for (i, r) in problem.rows.iter().enumerate() {
        let t = match r.relation {
            Relation::Le => 'L',
            Relation::Ge => 'G',
            Relation::Eq => 'E',
        };
        let _ = writeln!(s, " {t}  R{:07}", i + 1);
    }
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); problem.num_vars()];
    for (i, r) in problem.rows.iter().enumerate() {
        for &(j, a) in &r.coeffs {
            cols[j].push((i, a));
        }
    }
    let _ = writeln!(s, "COLUMNS");
    for (j, col) in cols.iter().enumerate() {
        let cname = format!("C{:07}", j + 1);
        if problem.objective[j] != 0.0 {
            let _ = writeln!(s, "    {cname:<8}  {:<8}  {:>12}", "COST", num(problem.objective[j]));
        }
        for &(i, a) in col {
            let _ = writeln!(s, "    {cname:<8}  R{:07}  {:>12}", i + 1, num(a));
        }
    }
    let _ = writeln!(s, "RHS");
    for (i, r) in problem.rows.iter().enumerate() {
        if r.rhs != 0.0 {
            let _ = writeln!(s, "    {:<8}  R{:07}  {:>12}", "RHS", i + 1, num(r.rhs));
        }
    }
    let _ = writeln!(s, "BOUNDS");
    for j in 0..problem.num_vars() {
        let cname = format!("C{:07}", j + 1);
        let (l, u) = (problem.lower[j], problem.upper[j]);
        if l == f64::NEG_INFINITY && u == f64::INFINITY {
            let _ = writeln!(s, " FR {:<8}  {cname:<8}", "BND");
            continue;
        }
        if l == u {
            let _ = writeln!(s, " FX {:<8}  {cname:<8}  {:>12}", "BND", num(l));
            continue;
        }
        if l == f64::NEG_INFINITY {
            let _ = writeln!(s, " MI {:<8}  {cname:<8}", "BND");
        } else if l != 0.0 {
            let _ = writeln!(s, " LO {:<8}  {cname:<8}  {:>12}", "BND", num(l));
        }
        if u.is_finite() {
            let _ = writeln!(s, " UP {:<8}  {cname:<8}  {:>12}", "BND", num(u));
        }
    }
    let _ = writeln!(s, "ENDATA");
    out.write_all(s.as_bytes())
}
