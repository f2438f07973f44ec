//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line per criterion and exits nonzero if a criterion outside
//! `REPORTED_ONLY` fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{random_box_lp, random_feasible_bounded_lp, vertex_enumeration};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdo_core::eps::{approx_equal, axis_values, build_grid, payoff_table, GridStatus, Molp, ObjectiveRanges};
use sdo_core::lp::{dualize, solve, LpOutcome, SolverTolerances};
use sdo_core::model::{bound_violations, build_molp, criteria_of_plan, dvh, COVERAGE_TOL, N_OBJECTIVES};
use sdo_core::phantom::{generate_phantom, PhantomSpec, SdoInstance, StructureKind, CHANNELS, N_COLLIMATORS, N_SECTORS};
use sdo_core::two_phase::{
    first_quartile, nd_filter_indices, phase2_ranges, run_ml, run_regular, CriteriaRecord, RunMode, RunOutput, TwoPhaseConfig,
};

/// Criteria whose failure is reported but does not fail the suite: the
/// LP-count and wall-time ratios of the ML variant are directional targets
/// that depend on how much work the filters already save (see README).
const REPORTED_ONLY: &[u8] = &[7];

struct Verdict {
    id: u8,
    pass: bool,
}

fn verdict(id: u8, pass: bool, detail: String) -> Verdict {
    println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    Verdict { id, pass }
}

fn note(id: u8, text: String) {
    println!("     criterion {id}: {text}");
}

fn instance(preset: &str, seed: u64) -> SdoInstance {
    generate_phantom(&PhantomSpec::preset(preset, seed).unwrap()).unwrap()
}

fn config(mode: RunMode, seed: u64) -> TwoPhaseConfig {
    TwoPhaseConfig { mode, seed, ..Default::default() }
}

fn same_set(a: &[Vec<f64>], b: &[Vec<f64>], tol: f64) -> bool {
    a.iter().all(|x| b.iter().any(|y| approx_equal(x, y, tol))) && b.iter().all(|y| a.iter().any(|x| approx_equal(x, y, tol)))
}

fn objective_set(out: &RunOutput) -> Vec<Vec<f64>> {
    out.archive.entries.iter().map(|e| e.objectives.clone()).collect()
}

fn is_feasible(st: &GridStatus) -> Option<bool> {
    match st {
        GridStatus::Solved(_) | GridStatus::OmittedRepeat(_) => Some(true),
        GridStatus::Infeasible | GridStatus::OmittedInfeasible => Some(false),
        GridStatus::Pending => None,
    }
}

/// Runs kept for the bound check of criterion 3.
struct Produced {
    inst: SdoInstance,
    runs: Vec<RunOutput>,
}

fn efficiency(produced: &mut Vec<Produced>) -> Verdict {
    let mut violations = 0;
    let mut removed = 0;
    let mut archived = 0;
    let mut worst_s: f64 = 0.0;
    for seed in [1, 2, 3] {
        let inst = instance("small", seed);
        let t = Instant::now();
        let runs: Vec<RunOutput> =
            [RunMode::Regular, RunMode::Ml].into_iter().map(|m| run_regular_or_ml(&inst, &config(m, seed))).collect();
        let secs = t.elapsed().as_secs_f64();
        worst_s = worst_s.max(secs);
        for (out, name) in runs.iter().zip(["regular", "ml"]) {
            let v = out.archive.dominance_violations().len();
            note(
                1,
                format!(
                    "small seed {seed} {name}: {} plans, {} dominated before finalize, {v} violations after",
                    out.archive.len(),
                    out.report.dominated_removed
                ),
            );
            violations += v;
            removed += out.report.dominated_removed;
            archived += out.archive.len();
        }
        note(1, format!("small seed {seed}: both modes in {secs:.1} s"));
        produced.push(Produced { inst, runs });
    }
    verdict(
        1,
        violations == 0 && removed == 0 && worst_s < 120.0,
        format!("{archived} archived plans, {violations} dominance violations, {removed} removed at finalize, slowest seed {worst_s:.1} s (limit 120 s)"),
    )
}

fn run_regular_or_ml(inst: &SdoInstance, config: &TwoPhaseConfig) -> RunOutput {
    match config.mode {
        RunMode::Regular => run_regular(inst, config).unwrap(),
        RunMode::Ml => run_ml(inst, config).unwrap(),
    }
}

fn filter_soundness(produced: &mut Vec<Produced>) -> Verdict {
    let t = Instant::now();
    let inst = instance("small", 1);
    let on = run_regular(&inst, &config(RunMode::Regular, 1)).unwrap();
    let off = run_regular(&inst, &TwoPhaseConfig { filters: false, ..config(RunMode::Regular, 1) }).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let identical = same_set(&objective_set(&on), &objective_set(&off), 1e-6);

    // Every vector the filters removed is checked against its actual solve.
    let (mut repeats, mut exceptions, mut bad_infeasible) = (0, 0, 0);
    for (i, st) in on.phase1_status.iter().enumerate() {
        match *st {
            GridStatus::OmittedRepeat(id) => {
                repeats += 1;
                match off.phase1_status[i] {
                    GridStatus::Solved(k) if approx_equal(&off.records[k].objectives, &on.records[id].objectives, 1e-6) => {}
                    _ => exceptions += 1,
                }
            }
            GridStatus::OmittedInfeasible if off.phase1_status[i] != GridStatus::Infeasible => bad_infeasible += 1,
            _ => {}
        }
    }
    let solved = off.report.phase1.stats.n_sol;
    let rate = exceptions as f64 / solved.max(1) as f64;
    note(
        2,
        format!(
            "filters on: {} LPs, off: {} LPs; {repeats} repeat omissions, {exceptions} alternative optima, {bad_infeasible} wrong infeasibility omissions",
            on.report.n_lp, off.report.n_lp
        ),
    );
    let pass = identical && bad_infeasible == 0 && rate <= 0.01 && secs < 600.0;
    let v = verdict(
        2,
        pass,
        format!(
            "objective sets identical: {identical} ({} vs {} plans); repeat exceptions {:.3}% of {solved} solved vectors (limit 1%); {secs:.0} s (limit 600 s)",
            on.archive.len(),
            off.archive.len(),
            100.0 * rate
        ),
    );
    produced.push(Produced { inst, runs: vec![on, off] });
    v
}

fn bound_propositions(produced: &[Produced]) -> Verdict {
    let mut checked = 0;
    let mut violations = Vec::new();
    for p in produced {
        for out in &p.runs {
            for e in &out.archive.entries {
                checked += 1;
                violations.extend(bound_violations(&p.inst, &e.payload.durations, 1e-6).unwrap());
            }
        }
    }
    for v in violations.iter().take(5) {
        note(3, v.clone());
    }
    verdict(3, violations.is_empty(), format!("{checked} plans checked, {} violations", violations.len()))
}

fn payoff_correctness() -> Verdict {
    let tol = SolverTolerances::default();
    let mut worst: f64 = 0.0;
    for preset in ["small", "medium"] {
        let inst = instance(preset, 1);
        let molp = Molp::from(&build_molp(&inst, 0.98).unwrap());
        let (_, ranges) = payoff_table(&molp, &tol).unwrap();
        for i in 0..N_OBJECTIVES {
            let alone = molp.minimize(i, &tol).unwrap();
            let err = (ranges.lb[i] - alone).abs() / alone.abs().max(1.0);
            worst = worst.max(err);
            note(4, format!("{preset} h{}: lb {} vs stand-alone {alone}", i + 1, ranges.lb[i]));
        }
    }
    verdict(4, worst <= 1e-6, format!("largest scaled lb error {worst:.2e} (limit 1e-6)"))
}

fn lp_core() -> Verdict {
    let tol = SolverTolerances::default();
    let mut duality_gap: f64 = 0.0;
    let mut deterministic = true;
    for seed in 0..50 {
        let p = random_feasible_bounded_lp(1000 + seed, 6, 10);
        let a = solve(&p, &tol).unwrap();
        let vp = a.objective().unwrap();
        let vd = solve(&dualize(&p), &tol).unwrap().objective().unwrap();
        duality_gap = duality_gap.max((vp + vd).abs() / (1.0 + vp.abs()));
        let b = solve(&p, &tol).unwrap();
        let bits = |o: &LpOutcome| o.solution().map(|s| s.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        deterministic &= bits(&a) == bits(&b) && a.objective().map(f64::to_bits) == b.objective().map(f64::to_bits);
    }
    let mut disagreements = 0;
    for seed in 0..50 {
        let p = random_box_lp(2000 + seed, 1 + (seed as usize % 5));
        let agree = match (vertex_enumeration(&p), solve(&p, &tol).unwrap()) {
            (Some(v), LpOutcome::Optimal(s)) => (v - s.objective).abs() <= 1e-6 * (1.0 + v.abs()),
            (None, LpOutcome::Infeasible) => true,
            _ => false,
        };
        disagreements += usize::from(!agree);
    }
    verdict(
        5,
        duality_gap <= 1e-6 && disagreements == 0 && deterministic,
        format!("duality gap {duality_gap:.2e} over 50 LPs, {disagreements}/50 vertex-enumeration disagreements, bit-identical re-solve: {deterministic}"),
    )
}

fn infeasibility_rate(s: &sdo_core::eps::WaveStats) -> f64 {
    (s.n_infeasible_solved + s.n_omit_infeas) as f64 / s.n_eps as f64
}

fn phase_focusing(medium: &[(u64, SdoInstance, RunOutput, f64)]) -> Verdict {
    let mut pass = true;
    let mut worst_s: f64 = 0.0;
    for (seed, _, out, secs) in medium {
        worst_s = worst_s.max(*secs);
        let r1 = infeasibility_rate(&out.report.phase1.stats);
        let r2 = out.report.phase2.as_ref().map(|p| infeasibility_rate(&p.stats));
        note(
            6,
            format!(
                "medium seed {seed}: Phase I {:.1}% infeasible, Phase II {}, {secs:.1} s",
                100.0 * r1,
                match r2 {
                    Some(r) => format!("{:.1}%", 100.0 * r),
                    None => "skipped".into(),
                }
            ),
        );
        pass &= r2.is_some_and(|r2| r2 < r1) && *secs < 1800.0;
    }
    verdict(6, pass, format!("Phase-II infeasibility below Phase I in every seed: {pass}; slowest seed {worst_s:.1} s (limit 1800 s)"))
}

fn ml_variant(medium: &[(u64, SdoInstance, RunOutput, f64)]) -> Verdict {
    let mut lp_ok = true;
    let mut wall_ok = true;
    let (mut checked, mut correct) = (0, 0);
    for (seed, inst, regular, reg_s) in medium {
        let t = Instant::now();
        let ml = run_ml(inst, &config(RunMode::Ml, *seed)).unwrap();
        let ml_s = t.elapsed().as_secs_f64();
        let lp_ratio = ml.report.n_lp as f64 / regular.report.n_lp as f64;
        let wall_ratio = ml_s / reg_s;
        lp_ok &= lp_ratio < 0.5;
        wall_ok &= wall_ratio <= 0.75;
        let report = ml.report.ml.as_ref().unwrap();
        let (mut c, mut k) = (0, 0);
        for (p, st) in report.phase1_predictions.iter().zip(&regular.phase1_status) {
            if let (Some(p), Some(truth)) = (p, is_feasible(st)) {
                c += 1;
                k += usize::from(*p == truth);
            }
        }
        checked += c;
        correct += k;
        note(
            7,
            format!(
                "medium seed {seed}: LPs {} vs {} ({lp_ratio:.2}x), wall {ml_s:.1} s vs {reg_s:.1} s ({wall_ratio:.2}x), sample {}, classifier {k}/{c} vs realized, in-run {}",
                ml.report.n_lp,
                regular.report.n_lp,
                report.sample_size,
                report.classifier_accuracy.map_or("n/a".into(), |a| format!("{a:.3}"))
            ),
        );

        // Same run with a fixed 100-vector first-round sample.
        let rho = 100.0 / regular.phase1_status.len() as f64;
        let t = Instant::now();
        let fixed = run_ml(inst, &TwoPhaseConfig { rho, ..config(RunMode::Ml, *seed) }).unwrap();
        let fixed_s = t.elapsed().as_secs_f64();
        note(
            7,
            format!(
                "medium seed {seed}, 100-vector sample (diagnostic only): LPs {:.2}x, wall {:.2}x, in-run accuracy {}",
                fixed.report.n_lp as f64 / regular.report.n_lp as f64,
                fixed_s / reg_s,
                fixed.report.ml.as_ref().unwrap().classifier_accuracy.map_or("n/a".into(), |a| format!("{a:.3}"))
            ),
        );
    }
    let accuracy = correct as f64 / checked.max(1) as f64;
    verdict(
        7,
        lp_ok && wall_ok && accuracy >= 0.85,
        format!(
            "LP count < 0.5x in every seed: {lp_ok}; wall <= 0.75x in every seed: {wall_ok}; classifier accuracy {accuracy:.3} over {checked} predictions (limit 0.85)"
        ),
    )
}

/// Dose of every voxel by explicit summation over the rate tensor.
fn oracle_dose(inst: &SdoInstance, g: &[f64]) -> Vec<f64> {
    (0..inst.n_voxels())
        .map(|v| {
            let mut d = 0.0;
            for th in 0..inst.n_isocenters() {
                for s in 0..N_SECTORS {
                    for k in 0..N_COLLIMATORS {
                        d += inst.dose_rate.rate(v, th, s, k) * g[th * CHANNELS + s * N_COLLIMATORS + k];
                    }
                }
            }
            d
        })
        .collect()
}

fn metrics_oracle() -> Verdict {
    let mut mismatches = 0;
    let mut plans = 0;
    for preset in ["small", "medium"] {
        let inst = instance(preset, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let offs = inst.voxel_offsets();
        let piv_level = inst.prescriptions.iter().copied().fold(f64::INFINITY, f64::min);
        let grid: Vec<f64> = (0..=300).map(|k| k as f64 * 0.1).collect();
        for _ in 0..20 {
            plans += 1;
            let scale = rng.gen_range(0.05..1.5);
            let g: Vec<f64> = (0..inst.n_durations()).map(|_| if rng.gen_bool(0.4) { rng.gen_range(0.0..scale) } else { 0.0 }).collect();
            let dose = oracle_dose(&inst, &g);
            let crit = criteria_of_plan(&inst, &g).unwrap();
            let (mut tv, mut tv_piv) = (0usize, 0usize);
            let piv = dose.iter().filter(|&&d| d >= piv_level - COVERAGE_TOL).count();
            for (si, s) in inst.structures.iter().enumerate() {
                let ds = &dose[offs[si]..offs[si] + s.voxels.len()];
                if s.kind == StructureKind::Tumor {
                    let dt = inst.prescription_of(si);
                    tv += ds.len();
                    tv_piv += ds.iter().filter(|&&d| d >= dt - COVERAGE_TOL).count();
                }
                let curve = dvh(&inst, &g, si, &grid).unwrap();
                for (x, frac) in curve {
                    let count = ds.iter().filter(|&&d| d >= x).count();
                    mismatches += usize::from(frac != count as f64 / ds.len() as f64);
                }
            }
            let cov = tv_piv as f64 / tv as f64;
            let pci = if piv == 0 { 0.0 } else { (tv_piv * tv_piv) as f64 / (tv * piv) as f64 };
            mismatches += usize::from(crit.cov != cov) + usize::from(crit.pci != pci);
        }
    }
    verdict(8, mismatches == 0, format!("{plans} random plans on small and medium, {mismatches} mismatches in cov/pci/dvh"))
}

fn grid_quartile_nd() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    // Grid spacing.
    let mut spacing_errors = 0;
    for _ in 0..200 {
        let lb = rng.gen_range(-100.0..100.0);
        let ub = lb + rng.gen_range(1e-3..500.0);
        let r = rng.gen_range(2..15);
        let v = axis_values(lb, ub, r);
        let ulp = |x: f64| f64::EPSILON * x.abs().max(lb.abs()).max(ub.abs());
        let step = (ub - lb) / (r - 1) as f64;
        spacing_errors += usize::from(v.len() != r || v[0] != lb || (v[r - 1] - ub).abs() > 4.0 * ulp(ub));
        for (j, x) in v.iter().enumerate() {
            spacing_errors += usize::from((x - (lb + step * j as f64)).abs() > 4.0 * ulp(*x));
        }
    }
    let ranges = ObjectiveRanges { lb: vec![0.0, 1.0, -2.0, 5.0, 0.0], ub: vec![1.0, 3.0, 2.0, 5.0, 10.0] };
    let grid = build_grid(&ranges, 0, &[3, 5, 4, 6], true).unwrap();
    spacing_errors += usize::from(grid.len() != 3 * 5 * 6);
    for e in &grid {
        let axes = [(1.0, 3.0, 3), (-2.0, 2.0, 5), (5.0, 5.0, 1), (0.0, 10.0, 6)];
        for (a, &(lo, hi, r)) in axes.iter().enumerate() {
            spacing_errors += usize::from(e.eps[a] != axis_values(lo, hi, r)[e.coords[a]]);
        }
    }

    // ND filter against the quadratic definition.
    let mut nd_errors = 0;
    for round in 0..5 {
        let triples: Vec<[f64; 3]> = (0..200)
            .map(|_| {
                let q = |x: f64| if round % 2 == 0 { (x * 8.0).round() / 8.0 } else { x };
                [q(rng.gen()), q(rng.gen()), q(rng.gen::<f64>() * 100.0)]
            })
            .collect();
        let dominated = |j: usize| {
            triples.iter().any(|a| {
                let b = &triples[j];
                a[0] >= b[0] && a[1] >= b[1] && a[2] <= b[2] && (a[0] > b[0] || a[1] > b[1] || a[2] < b[2])
            })
        };
        let want: Vec<usize> = (0..triples.len()).filter(|&j| !dominated(j)).collect();
        nd_errors += usize::from(nd_filter_indices(&triples) != want);
    }

    // First quartile and Phase-II ranges, worked by hand.
    let mut quartile_errors = 0;
    for (values, q) in [
        (vec![1.0, 2.0, 3.0, 4.0], 1.75),
        (vec![10.0], 10.0),
        (vec![3.0, 1.0, 2.0], 1.5),
        (vec![5.0, 5.0, 5.0, 5.0, 100.0], 5.0),
        (vec![8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0], 2.75),
    ] {
        quartile_errors += usize::from(first_quartile(&values) != Some(q));
    }
    let rec = |cov: f64, pci: f64, h: [f64; 5]| CriteriaRecord {
        eps: vec![],
        cov,
        pci,
        bot: h[4],
        objectives: h.to_vec(),
        phase: "I".into(),
        predicted: false,
    };
    let records = [
        rec(0.99, 0.80, [1.0, 10.0, 0.0, 2.0, 100.0]),
        rec(0.99, 0.90, [2.0, 12.0, 0.0, 1.0, 60.0]),
        rec(0.985, 0.76, [3.0, 9.0, 0.0, 3.0, 80.0]),
        rec(0.97, 0.95, [0.0, 8.0, 0.0, 5.0, 50.0]),
        rec(0.99, 0.70, [0.0, 8.0, 0.0, 5.0, 40.0]),
        rec(1.0, 0.85, [0.5, 15.0, 0.0, 0.0, 120.0]),
        rec(0.99, 0.78, [4.0, 11.0, 0.5, 2.5, 70.0]),
    ];
    // Passing BOTs 60, 70, 80, 100, 120: first quartile 70 keeps the 60 and 70 records.
    let f = phase2_ranges(&records, &TwoPhaseConfig::default()).unwrap();
    quartile_errors += usize::from(f.bot_max != 70.0 || f.n_selected != 2);
    quartile_errors += usize::from(f.ranges.lb != [2.0, 11.0, 0.0, 1.0, 60.0] || f.ranges.ub != [4.0, 12.0, 0.5, 2.5, 70.0]);
    let capped = phase2_ranges(&records, &TwoPhaseConfig { bot_hard_cap_min: 65.0, ..Default::default() }).unwrap();
    quartile_errors += usize::from(capped.bot_max != 65.0 || capped.n_selected != 1);

    verdict(
        9,
        spacing_errors == 0 && nd_errors == 0 && quartile_errors == 0,
        format!(
            "grid spacing errors {spacing_errors}, ND filter mismatches {nd_errors}/5 sets of 200, quartile/range errors {quartile_errors}"
        ),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut verdicts = Vec::new();
    let mut produced = Vec::new();
    verdicts.push(efficiency(&mut produced));
    verdicts.push(filter_soundness(&mut produced));
    verdicts.push(bound_propositions(&produced));
    drop(produced);
    verdicts.push(payoff_correctness());
    verdicts.push(lp_core());
    let medium: Vec<(u64, SdoInstance, RunOutput, f64)> = [1, 2, 3]
        .into_iter()
        .map(|seed| {
            let inst = instance("medium", seed);
            let t = Instant::now();
            let out = run_regular(&inst, &config(RunMode::Regular, seed)).unwrap();
            (seed, inst, out, t.elapsed().as_secs_f64())
        })
        .collect();
    verdicts.push(phase_focusing(&medium));
    verdicts.push(ml_variant(&medium));
    verdicts.push(metrics_oracle());
    verdicts.push(grid_quartile_nd());

    let failed: Vec<u8> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    let blocking: Vec<u8> = failed.iter().copied().filter(|id| !REPORTED_ONLY.contains(id)).collect();
    println!(
        "acceptance: {}/{} criteria pass in {:.0} s; failing {:?} ({} blocking)",
        verdicts.len() - failed.len(),
        verdicts.len(),
        started.elapsed().as_secs_f64(),
        failed,
        blocking.len()
    );
    if blocking.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
