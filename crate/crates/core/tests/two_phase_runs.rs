use sdo_core::eps::approx_equal;
use sdo_core::phantom::{generate_phantom, PhantomSpec, SdoInstance};
use sdo_core::two_phase::{
    run_ml, run_ml_with, run_regular, LabeledData, Prediction, Predictor, RunMode, RunOutput, TwoPhaseConfig, TwoPhaseError, PHASE_I,
    PHASE_II,
};

fn small(seed: u64) -> SdoInstance {
    generate_phantom(&PhantomSpec::preset("small", seed).unwrap()).unwrap()
}

fn objective_set(out: &RunOutput, phase: Option<&str>) -> Vec<Vec<f64>> {
    out.archive.entries.iter().filter(|e| phase.is_none_or(|p| e.phase == p)).map(|e| e.objectives.clone()).collect()
}

fn contains(set: &[Vec<f64>], v: &[f64]) -> bool {
    set.iter().any(|w| approx_equal(w, v, 1e-6))
}

#[test]
fn regular_run_end_to_end() {
    let inst = small(1);
    let out = run_regular(&inst, &TwoPhaseConfig { seed: 1, ..Default::default() }).unwrap();
    let r = &out.report;
    assert!(r.aborted.is_none());
    assert!(!out.archive.is_empty());
    assert!(out.archive.dominance_violations().is_empty());
    assert_eq!(r.archive_size, out.archive.len());
    let p2 = r.phase2.as_ref().expect("small preset yields qualifying plans");
    assert!(out.archive.entries.iter().any(|e| e.phase == PHASE_II));
    for s in std::iter::once(&r.phase1.stats).chain(std::iter::once(&p2.stats)) {
        assert_eq!(s.n_sol + s.n_infeasible_solved + s.n_omit_infeas + s.n_omit_repeat + s.n_unexplored, s.n_eps);
        assert_eq!(s.n_lp, s.n_sol + s.n_infeasible_solved);
    }
    assert_eq!(r.n_lp, r.phase1.stats.n_lp + p2.stats.n_lp);
    assert!(p2.bot_max.unwrap() <= r.config.bot_hard_cap_min);
    // Every solve leaves a record; Phase-II ranges sit inside Phase-I ranges.
    assert_eq!(out.records.len(), r.phase1.stats.n_sol + p2.stats.n_sol);
    for i in 0..5 {
        assert!(p2.ranges.lb[i] >= r.phase1.ranges.lb[i] - 1e-9);
        assert!(p2.ranges.ub[i] <= r.phase1.ranges.ub[i] + 1e-9);
    }
}

#[test]
fn runs_are_deterministic() {
    let inst = small(2);
    for mode in [RunMode::Regular, RunMode::Ml] {
        let config = TwoPhaseConfig { mode, seed: 4, ..Default::default() };
        let a = sdo_core::two_phase::run(&inst, &config).unwrap();
        let b = sdo_core::two_phase::run(&inst, &config).unwrap();
        assert_eq!(objective_set(&a, None), objective_set(&b, None));
        assert_eq!(a.report.n_lp, b.report.n_lp);
        let durations = |o: &RunOutput| o.archive.entries.iter().map(|e| e.payload.durations.clone()).collect::<Vec<_>>();
        assert_eq!(durations(&a), durations(&b));
    }
}

#[test]
fn full_sample_reproduces_regular_phase_one() {
    let inst = small(1);
    let regular = run_regular(&inst, &TwoPhaseConfig { seed: 1, ..Default::default() }).unwrap();
    let ml = run_ml(&inst, &TwoPhaseConfig { mode: RunMode::Ml, rho: 1.0, seed: 1, ..Default::default() }).unwrap();
    let ml_report = ml.report.ml.as_ref().unwrap();
    assert_eq!(ml_report.round2_selected, 0);
    let (a, b) = (&regular.report.phase1.stats, &ml.report.phase1.stats);
    assert_eq!(
        (a.n_sol, a.n_infeasible_solved, a.n_omit_infeas, a.n_omit_repeat),
        (b.n_sol, b.n_infeasible_solved, b.n_omit_infeas, b.n_omit_repeat)
    );
    let reg_i: Vec<_> = regular.records.iter().filter(|r| r.phase == PHASE_I).collect();
    let ml_i: Vec<_> = ml.records.iter().filter(|r| r.phase == PHASE_I).collect();
    assert_eq!(reg_i, ml_i);
}

#[test]
fn ml_solves_fewer_lps() {
    for seed in [1, 2] {
        let inst = small(seed);
        let regular = run_regular(&inst, &TwoPhaseConfig { seed, ..Default::default() }).unwrap();
        let ml = run_ml(&inst, &TwoPhaseConfig { mode: RunMode::Ml, seed, ..Default::default() }).unwrap();
        assert!(ml.report.n_lp < regular.report.n_lp, "seed {seed}: {} vs {}", ml.report.n_lp, regular.report.n_lp);
        let acc = ml.report.ml.as_ref().unwrap().classifier_accuracy;
        assert!(acc.is_none_or(|a| (0.0..=1.0).contains(&a)));
    }
}

/// Claims every vector is feasible with perfect criteria.
struct Optimist;

impl Predictor for Optimist {
    fn fit(&mut self, _: &LabeledData) -> Result<(), TwoPhaseError> {
        Ok(())
    }

    fn predict(&self, _: &[f64]) -> Result<Prediction, TwoPhaseError> {
        Ok(Prediction { feasible: true, cov: 1.0, pci: 1.0, bot: 0.0 })
    }
}

#[test]
fn optimistic_predictor_keeps_every_qualifying_regular_plan() {
    let inst = small(1);
    let regular = run_regular(&inst, &TwoPhaseConfig { seed: 1, ..Default::default() }).unwrap();
    let config = TwoPhaseConfig { mode: RunMode::Ml, rho: 1.0, seed: 1, ..Default::default() };
    let ml = run_ml_with(&inst, &config, &mut Optimist).unwrap();
    let p2 = regular.report.phase2.as_ref().unwrap();
    assert_eq!(ml.report.ml.as_ref().unwrap().phase2_selected, p2.grid_size);
    let ml_set = objective_set(&ml, None);
    let bot_max = p2.bot_max.unwrap();
    let qualifying: Vec<_> = regular
        .archive
        .entries
        .iter()
        .filter(|e| e.phase == PHASE_II)
        .filter(|e| {
            let c = &e.payload.criteria;
            c.cov >= config.cov_min && c.pci >= config.pci_min && c.bot_min <= bot_max
        })
        .collect();
    assert!(!qualifying.is_empty());
    for e in qualifying {
        assert!(contains(&ml_set, &e.objectives), "missing {:?}", e.objectives);
    }
}

#[test]
fn too_small_sample_is_rejected() {
    let inst = small(1);
    let config = TwoPhaseConfig { mode: RunMode::Ml, rho: 1e-4, min_sample: 30, ..Default::default() };
    assert!(matches!(run_ml(&inst, &config), Err(TwoPhaseError::InsufficientSample { .. })));
}

#[test]
fn forest_classifies_phase_one_feasibility() {
    use sdo_core::eps::GridStatus;
    use sdo_core::forest::{cross_validate, Hyper, Mode, TrainingSet};
    let inst = small(1);
    let out = run_regular(&inst, &TwoPhaseConfig { seed: 1, ..Default::default() }).unwrap();
    let (mut features, mut labels) = (Vec::new(), Vec::new());
    for (e, st) in out.phase1_grid.iter().zip(&out.phase1_status).step_by(5) {
        let feasible = match st {
            GridStatus::Solved(_) | GridStatus::OmittedRepeat(_) => 1.0,
            GridStatus::Infeasible | GridStatus::OmittedInfeasible => 0.0,
            GridStatus::Pending => continue,
        };
        features.push(e.eps.clone());
        labels.push(feasible);
    }
    let data = TrainingSet::new(features, labels).unwrap();
    let cv = cross_validate(&data, Mode::Classify, &Hyper { n_trees: 50, ..Hyper::default() }, 5, 1, 3).unwrap();
    assert!(cv.mean >= 0.9, "cross-validated accuracy {}", cv.mean);
}
