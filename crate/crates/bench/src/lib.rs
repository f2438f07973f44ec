//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdo_core::forest::TrainingSet;
use sdo_core::lp::{LpProblem, Relation};

/// Random `m x n` LP that is feasible at a known interior point and bounded
/// by a box.
pub fn random_lp(seed: u64, m: usize, n: usize) -> LpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = LpProblem::new();
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    for _ in 0..n {
        p.add_var(rng.gen_range(-1.0..1.0), 0.0, 10.0);
    }
    for _ in 0..m {
        let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
        let act: f64 = coeffs.iter().map(|&(j, a)| a * x0[j]).sum();
        p.add_row(coeffs, Relation::Le, act + rng.gen_range(0.1..1.0));
    }
    p
}

/// Four-feature classification set with a linear boundary.
pub fn linear_classes(seed: u64, n: usize) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.gen::<f64>()).collect()).collect();
    let labels = features.iter().map(|x| if x[0] + x[1] > x[2] + 0.5 * x[3] { 1.0 } else { 0.0 }).collect();
    TrainingSet::new(features, labels).expect("finite data")
}
