#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdo_core::lp::{LpProblem, Relation};

/// Random 3-variable LP over the box [0, 5]^3 with `rows` general rows.
/// Feasibility is not guaranteed.
pub fn random_box_lp(seed: u64, rows: usize) -> LpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = LpProblem::new();
    for _ in 0..3 {
        p.add_var(rng.gen_range(-3.0..3.0), 0.0, 5.0);
    }
    for _ in 0..rows {
        let coeffs: Vec<(usize, f64)> = (0..3).map(|j| (j, rng.gen_range(-3i32..=3) as f64)).collect();
        let rel = if rng.gen_bool(0.5) { Relation::Le } else { Relation::Ge };
        p.add_row(coeffs, rel, rng.gen_range(-4i32..=8) as f64);
    }
    p
}

/// Exhaustive vertex search: every triple of active planes (rows or bounds)
/// is intersected, feasible points are kept and the best objective wins.
/// `None` means infeasible (the box makes the region bounded).
pub fn vertex_enumeration(p: &LpProblem) -> Option<f64> {
    assert_eq!(p.num_vars(), 3);
    let mut planes: Vec<([f64; 3], f64)> = Vec::new();
    for r in &p.rows {
        let mut a = [0.0; 3];
        for &(j, v) in &r.coeffs {
            a[j] += v;
        }
        planes.push((a, r.rhs));
    }
    for j in 0..3 {
        let mut e = [0.0; 3];
        e[j] = 1.0;
        planes.push((e, p.lower[j]));
        planes.push((e, p.upper[j]));
    }
    let mut best: Option<f64> = None;
    let k = planes.len();
    for a in 0..k {
        for b in a + 1..k {
            for c in b + 1..k {
                let Some(x) = solve3([planes[a], planes[b], planes[c]]) else { continue };
                if p.max_violation(&x) <= 1e-9 {
                    let v = p.objective_value(&x);
                    best = Some(best.map_or(v, |b: f64| b.min(v)));
                }
            }
        }
    }
    best
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Cramer's rule.
fn solve3(planes: [([f64; 3], f64); 3]) -> Option<Vec<f64>> {
    let m = [planes[0].0, planes[1].0, planes[2].0];
    let d = det3(m);
    if d.abs() < 1e-9 {
        return None;
    }
    let mut x = vec![0.0; 3];
    for (col, xc) in x.iter_mut().enumerate() {
        let mut mc = m;
        for (row, pl) in planes.iter().enumerate() {
            mc[row][col] = pl.1;
        }
        *xc = det3(mc) / d;
    }
    Some(x)
}

/// Random `m x n` LP with `x >= 0` that is feasible and bounded by
/// construction: a nonnegative point satisfies every row, and the cost is
/// built from a sign-consistent dual point plus a nonnegative reduced cost.
pub fn random_feasible_bounded_lp(seed: u64, m: usize, n: usize) -> LpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
    let rels: Vec<Relation> = (0..m)
        .map(|_| match rng.gen_range(0..3) {
            0 => Relation::Le,
            1 => Relation::Ge,
            _ => Relation::Eq,
        })
        .collect();
    let y0: Vec<f64> = rels
        .iter()
        .map(|r| match r {
            Relation::Ge => rng.gen_range(0.0..2.0),
            Relation::Le => -rng.gen_range(0.0..2.0),
            Relation::Eq => rng.gen_range(-2.0..2.0),
        })
        .collect();
    let mut p = LpProblem::new();
    for j in 0..n {
        let c: f64 = (0..m).map(|i| a[i][j] * y0[i]).sum::<f64>() + rng.gen_range(0.0..1.0);
        p.add_var(c, 0.0, f64::INFINITY);
    }
    for i in 0..m {
        let act: f64 = (0..n).map(|j| a[i][j] * x0[j]).sum();
        let rhs = match rels[i] {
            Relation::Le => act + rng.gen_range(0.0..1.0),
            Relation::Ge => act - rng.gen_range(0.0..1.0),
            Relation::Eq => act,
        };
        p.add_row((0..n).map(|j| (j, a[i][j])), rels[i], rhs);
    }
    p
}
