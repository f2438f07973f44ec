//! Two-phase ε-constraint search: a broad Phase-I grid, Phase-II ranges
//! refocused on clinically acceptable plans, and the prediction-guided
//! variant that solves only promising ε-vectors.

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eps::{
    build_grid, payoff_table, tighten_ranges, ArchiveEntry, EpsError, EpsSolved, EpsVector, GridStatus, Molp, ObjectiveRanges,
    ParetoArchive, PayoffTable, Scalarizer, Wave, WaveConfig, WaveEvent, WaveStats,
};
use crate::forest::{train_forest, ForestError, ForestModel, Hyper, Mode, TrainingSet};
use crate::lp::SolverTolerances;
use crate::model::{build_molp, ModelError, MolpModel, PlanSolution, N_OBJECTIVES};
use crate::phantom::SdoInstance;

pub const PHASE_I: &str = "I";
pub const PHASE_II: &str = "II";
/// Index of beam-on time among the objectives.
const BOT: usize = 4;

#[derive(Debug, Error)]
pub enum TwoPhaseError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no Phase-I solution meets the coverage, conformity and beam-on-time thresholds")]
    NoQualifyingSolutions,
    #[error("sample of {got} ε-vectors is below the minimum of {needed}")]
    InsufficientSample { needed: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eps(#[from] EpsError),
    #[error(transparent)]
    Forest(#[from] ForestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Regular,
    Ml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseConfig {
    pub mode: RunMode,
    pub cov_min: f64,
    pub pci_min: f64,
    pub r_phase1: usize,
    pub r_phase2: usize,
    /// Fraction of the Phase-I grid solved before the first prediction.
    pub rho: f64,
    /// Smallest admissible size of that sample.
    pub min_sample: usize,
    /// Upper limit on beam-on time in minutes.
    pub bot_hard_cap_min: f64,
    pub beta: f64,
    pub seed: u64,
    pub primary: usize,
    pub jobs: usize,
    pub filters: bool,
    pub warm_start: bool,
    pub hyper: Hyper,
    #[serde(skip)]
    pub tol: SolverTolerances,
}

impl Default for TwoPhaseConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Regular,
            cov_min: 0.98,
            pci_min: 0.75,
            r_phase1: 10,
            r_phase2: 5,
            rho: 0.10,
            min_sample: 30,
            bot_hard_cap_min: 180.0,
            beta: crate::eps::DEFAULT_BETA,
            seed: 0,
            primary: 0,
            jobs: 1,
            filters: true,
            warm_start: true,
            hyper: Hyper::default(),
            tol: SolverTolerances::default(),
        }
    }
}

impl TwoPhaseConfig {
    pub fn validate(&self) -> Result<(), TwoPhaseError> {
        let bad = |m: String| Err(TwoPhaseError::InvalidConfig(m));
        if !(self.cov_min > 0.0 && self.cov_min <= 1.0) {
            return bad(format!("cov_min {} outside (0, 1]", self.cov_min));
        }
        if !(0.0..=1.0).contains(&self.pci_min) {
            return bad(format!("pci_min {} outside [0, 1]", self.pci_min));
        }
        if self.r_phase1 == 0 || self.r_phase2 == 0 {
            return bad("grid point counts must be at least 1".into());
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad(format!("rho {} outside (0, 1]", self.rho));
        }
        if !(self.bot_hard_cap_min > 0.0) {
            return bad(format!("bot_hard_cap_min {} must be positive", self.bot_hard_cap_min));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta {} must be positive", self.beta));
        }
        if self.primary >= N_OBJECTIVES {
            return bad(format!("primary objective {} outside 0..{N_OBJECTIVES}", self.primary));
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        Ok(())
    }

    fn wave_config(&self) -> WaveConfig {
        WaveConfig {
            tol: self.tol,
            infeasibility_filter: self.filters,
            repeat_filter: self.filters,
            jobs: self.jobs,
            warm_start: self.warm_start,
        }
    }
}

/// Performance of one ε-vector, either realized by a solve or predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaRecord {
    pub eps: Vec<f64>,
    pub cov: f64,
    pub pci: f64,
    pub bot: f64,
    pub objectives: Vec<f64>,
    pub phase: String,
    pub predicted: bool,
}

impl CriteriaRecord {
    pub fn from_plan(eps: &EpsVector, plan: &PlanSolution) -> Self {
        Self {
            eps: eps.eps.clone(),
            cov: plan.criteria.cov,
            pci: plan.criteria.pci,
            bot: plan.criteria.bot_min,
            objectives: plan.objectives.0.to_vec(),
            phase: plan.phase.clone(),
            predicted: false,
        }
    }

    fn triple(&self) -> [f64; 3] {
        [self.cov, self.pci, self.bot]
    }
}

/// First quartile by linear interpolation between order statistics.
pub fn first_quartile(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = 0.25 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusedRanges {
    pub ranges: ObjectiveRanges,
    /// Beam-on-time threshold from the first quartile.
    pub bot_max: f64,
    pub n_selected: usize,
}

/// Phase-II objective ranges spanned by the solver-verified records that
/// meet every threshold. The beam-on-time threshold is the first quartile
/// over records passing coverage and conformity.
pub fn phase2_ranges(records: &[CriteriaRecord], config: &TwoPhaseConfig) -> Result<FocusedRanges, TwoPhaseError> {
    let passing: Vec<&CriteriaRecord> =
        records.iter().filter(|r| !r.predicted && r.cov >= config.cov_min && r.pci >= config.pci_min).collect();
    let bots: Vec<f64> = passing.iter().map(|r| r.bot).collect();
    let bot_max = first_quartile(&bots).ok_or(TwoPhaseError::NoQualifyingSolutions)?.min(config.bot_hard_cap_min);
    let selected: Vec<&&CriteriaRecord> = passing.iter().filter(|r| r.bot <= bot_max).collect();
    if selected.is_empty() {
        return Err(TwoPhaseError::NoQualifyingSolutions);
    }
    let p = selected[0].objectives.len();
    let mut ranges = ObjectiveRanges { lb: vec![f64::INFINITY; p], ub: vec![f64::NEG_INFINITY; p] };
    for r in &selected {
        for i in 0..p {
            ranges.lb[i] = ranges.lb[i].min(r.objectives[i]);
            ranges.ub[i] = ranges.ub[i].max(r.objectives[i]);
        }
    }
    Ok(FocusedRanges { ranges, bot_max, n_selected: selected.len() })
}

/// Indices of records whose (cov, pci, bot) is not dominated by another
/// record: higher coverage and conformity and lower beam-on time are better.
pub fn nd_filter_indices(triples: &[[f64; 3]]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..triples.len()).collect();
    order.sort_by(|&a, &b| triples[b][0].total_cmp(&triples[a][0]));
    let dominates =
        |a: &[f64; 3], b: &[f64; 3]| a[0] >= b[0] && a[1] >= b[1] && a[2] <= b[2] && (a[0] > b[0] || a[1] > b[1] || a[2] < b[2]);
    let mut keep = vec![true; triples.len()];
    for (pos, &j) in order.iter().enumerate() {
        let cov = triples[j][0];
        // Only records with coverage at least as high can dominate.
        let mut k = 0;
        while k < order.len() && (k <= pos || triples[order[k]][0] >= cov) {
            let other = order[k];
            if other != j && dominates(&triples[other], &triples[j]) {
                keep[j] = false;
                break;
            }
            k += 1;
        }
    }
    (0..triples.len()).filter(|&i| keep[i]).collect()
}

pub fn nd_filter(records: &[CriteriaRecord]) -> Vec<CriteriaRecord> {
    let triples: Vec<[f64; 3]> = records.iter().map(CriteriaRecord::triple).collect();
    nd_filter_indices(&triples).into_iter().map(|i| records[i].clone()).collect()
}

/// Known outcomes used to fit a predictor. `criteria[i]` is `Some` exactly
/// for feasible rows.
#[derive(Debug, Clone, Default)]
pub struct LabeledData {
    pub features: Vec<Vec<f64>>,
    pub feasible: Vec<bool>,
    pub criteria: Vec<Option<[f64; 3]>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub feasible: bool,
    pub cov: f64,
    pub pci: f64,
    pub bot: f64,
}

pub trait Predictor {
    fn fit(&mut self, data: &LabeledData) -> Result<(), TwoPhaseError>;
    fn predict(&self, eps: &[f64]) -> Result<Prediction, TwoPhaseError>;
}

/// One classification forest for feasibility and one regression forest per
/// criterion.
#[derive(Debug, Clone)]
pub struct ForestPredictor {
    pub hyper: Hyper,
    pub seed: u64,
    classifier: Option<ForestModel>,
    regressors: Option<[ForestModel; 3]>,
}

impl ForestPredictor {
    pub fn new(hyper: Hyper, seed: u64) -> Self {
        Self { hyper, seed, classifier: None, regressors: None }
    }
}

impl Predictor for ForestPredictor {
    fn fit(&mut self, data: &LabeledData) -> Result<(), TwoPhaseError> {
        let labels = data.feasible.iter().map(|&f| f64::from(u8::from(f))).collect();
        let set = TrainingSet::new(data.features.clone(), labels)?;
        self.classifier = Some(train_forest(&set, Mode::Classify, &self.hyper, self.seed)?);
        let rows: Vec<(Vec<f64>, [f64; 3])> =
            data.features.iter().zip(&data.criteria).filter_map(|(x, c)| c.map(|c| (x.clone(), c))).collect();
        self.regressors = if rows.is_empty() {
            None
        } else {
            let features: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
            let fit = |k: usize| {
                let set = TrainingSet::new(features.clone(), rows.iter().map(|r| r.1[k]).collect())?;
                train_forest(&set, Mode::Regress, &self.hyper, self.seed.wrapping_add(k as u64 + 1))
            };
            Some([fit(0)?, fit(1)?, fit(2)?])
        };
        Ok(())
    }

    fn predict(&self, eps: &[f64]) -> Result<Prediction, TwoPhaseError> {
        let clf = self.classifier.as_ref().ok_or_else(|| TwoPhaseError::InvalidConfig("predictor used before fit".into()))?;
        let feasible = clf.predict(eps)? == 1.0;
        Ok(match (&self.regressors, feasible) {
            (Some([c, p, b]), true) => Prediction { feasible, cov: c.predict(eps)?, pci: p.predict(eps)?, bot: b.predict(eps)? },
            _ => Prediction { feasible: false, cov: 0.0, pci: 0.0, bot: f64::INFINITY },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub ranges: ObjectiveRanges,
    pub grid_size: usize,
    pub stats: WaveStats,
    /// Beam-on-time threshold used to pick the ranges of this phase.
    pub bot_max: Option<f64>,
    /// Vectors chosen by prediction (ML mode only).
    pub n_selected: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlReport {
    pub sample_size: usize,
    pub round2_selected: usize,
    pub phase2_selected: usize,
    /// Feasibility predictions checked against outcomes that became known.
    pub n_checked: usize,
    pub n_correct: usize,
    pub classifier_accuracy: Option<f64>,
    /// Feasibility prediction per Phase-I grid vector that was still pending
    /// at prediction time.
    #[serde(skip)]
    pub phase1_predictions: Vec<Option<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TwoPhaseConfig,
    pub payoff: PayoffTable,
    pub phase1: PhaseReport,
    pub phase2: Option<PhaseReport>,
    pub ml: Option<MlReport>,
    pub n_lp: usize,
    pub solve_time_s: f64,
    pub wall_time_s: f64,
    pub archive_size: usize,
    /// Archived entries dominated by later ones and removed at finalize.
    pub dominated_removed: usize,
    pub warnings: Vec<String>,
    /// Solver failure that cut the run short; outputs hold partial results.
    pub aborted: Option<String>,
}

pub type PlanArchive = ParetoArchive<PlanSolution>;

pub struct RunOutput {
    pub archive: PlanArchive,
    pub report: RunReport,
    /// Realized records of every solve, in solve order.
    pub records: Vec<CriteriaRecord>,
    pub phase1_grid: Vec<EpsVector>,
    /// Final status of each Phase-I grid vector.
    pub phase1_status: Vec<GridStatus>,
}

struct Setup {
    model: MolpModel,
    molp: Molp,
    payoff: PayoffTable,
    ranges: ObjectiveRanges,
    grid: Vec<EpsVector>,
    scalarizer: Scalarizer,
}

fn setup(inst: &SdoInstance, config: &TwoPhaseConfig) -> Result<Setup, TwoPhaseError> {
    config.validate()?;
    inst.validate().map_err(|e| TwoPhaseError::InvalidConfig(e.to_string()))?;
    let model = build_molp(inst, config.cov_min)?;
    let molp = Molp::from(&model);
    let (payoff, ranges) = payoff_table(&molp, &config.tol)?;
    let mut ranges = tighten_ranges(&ranges, inst, config.cov_min)?;
    ranges.ub[BOT] = ranges.ub[BOT].min(config.bot_hard_cap_min);
    if ranges.lb[BOT] > ranges.ub[BOT] {
        return Err(EpsError::EmptyRange { objective: BOT, lb: ranges.lb[BOT], ub: ranges.ub[BOT] }.into());
    }
    let grid = build_grid(&ranges, config.primary, &vec![config.r_phase1; N_OBJECTIVES - 1], true)?;
    let scalarizer = Scalarizer::new(&molp, &ranges, config.primary, config.beta)?;
    Ok(Setup { model, molp, payoff, ranges, grid, scalarizer })
}

/// Evaluates solutions of a wave not yet turned into plans.
fn evaluate_new(
    inst: &SdoInstance,
    model: &MolpModel,
    sc: &Scalarizer,
    solutions: &[(usize, EpsSolved)],
    plans: &mut Vec<PlanSolution>,
    phase: &str,
) -> Result<(), TwoPhaseError> {
    for (_, sol) in &solutions[plans.len()..] {
        let mut plan = PlanSolution::evaluate(inst, model.durations_from(&sol.x), phase)?;
        for (&i, &y) in sc.bounded.iter().zip(&sol.slacks) {
            plan.slacks[i] = y;
        }
        plans.push(plan);
    }
    Ok(())
}

fn log_event(phase: &str) -> impl FnMut(&WaveEvent) + '_ {
    move |e| log::trace!("phase {phase}: {e:?}")
}

struct Collector {
    archive: PlanArchive,
    records: Vec<CriteriaRecord>,
}

impl Collector {
    fn add(&mut self, grid: &[EpsVector], solutions: &[(usize, EpsSolved)], plans: &[PlanSolution], hits: &[usize]) {
        for (id, ((gi, _), plan)) in solutions.iter().zip(plans).enumerate() {
            self.records.push(CriteriaRecord::from_plan(&grid[*gi], plan));
            self.archive.insert(ArchiveEntry {
                objectives: plan.objectives.0.to_vec(),
                eps: grid[*gi].clone(),
                phase: plan.phase.clone(),
                repeat_hits: hits[id],
                payload: plan.clone(),
            });
        }
    }

    /// Records with distinct objective vectors, first occurrence kept.
    fn unique_records(&self) -> Vec<CriteriaRecord> {
        let mut seen: Vec<&CriteriaRecord> = Vec::new();
        for r in &self.records {
            if !seen.iter().any(|s| crate::eps::approx_equal(&s.objectives, &r.objectives, self.archive.tol)) {
                seen.push(r);
            }
        }
        seen.into_iter().cloned().collect()
    }
}

fn repeat_hits(status: &[GridStatus], n: usize) -> Vec<usize> {
    let mut c = vec![0; n];
    for s in status {
        if let GridStatus::OmittedRepeat(id) = s {
            c[*id] += 1;
        }
    }
    c
}

/// Pieces of a run gathered before the archive is finalized.
struct Partial {
    collector: Collector,
    payoff: PayoffTable,
    phase1: PhaseReport,
    phase1_grid: Vec<EpsVector>,
    phase1_status: Vec<GridStatus>,
    phase2: Option<PhaseReport>,
    ml: Option<MlReport>,
    warnings: Vec<String>,
    aborted: Option<String>,
}

fn finish(config: &TwoPhaseConfig, parts: Partial, started: Instant) -> RunOutput {
    let Partial { collector, payoff, phase1, phase1_grid, phase1_status, phase2, ml, warnings, aborted } = parts;
    let Collector { mut archive, records } = collector;
    let dominated_removed = archive.finalize();
    let stats = std::iter::once(&phase1.stats).chain(phase2.as_ref().map(|p| &p.stats));
    let (n_lp, solve_time_s) = stats.fold((0, 0.0), |(n, t), s| (n + s.n_lp, t + s.total_time_s));
    let report = RunReport {
        config: config.clone(),
        payoff,
        phase1,
        phase2,
        ml,
        n_lp,
        solve_time_s,
        wall_time_s: started.elapsed().as_secs_f64(),
        archive_size: archive.len(),
        dominated_removed,
        warnings,
        aborted,
    };
    RunOutput { archive, report, records, phase1_grid, phase1_status }
}

/// Phase-II grid and scalarizer over ranges refocused on the records.
fn phase2_setup(
    s: &Setup,
    records: &[CriteriaRecord],
    config: &TwoPhaseConfig,
    warnings: &mut Vec<String>,
) -> Result<Option<(FocusedRanges, Vec<EpsVector>, Scalarizer)>, TwoPhaseError> {
    match phase2_ranges(records, config) {
        Ok(f) => {
            let grid = build_grid(&f.ranges, config.primary, &vec![config.r_phase2; N_OBJECTIVES - 1], true)?;
            let sc = Scalarizer::new(&s.molp, &f.ranges, config.primary, config.beta)?;
            Ok(Some((f, grid, sc)))
        }
        Err(TwoPhaseError::NoQualifyingSolutions) => {
            let msg = "no_qualifying_solutions: Phase II skipped, archive holds Phase-I plans only".to_string();
            log::warn!("{msg}");
            warnings.push(msg);
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Full grid in both phases, with the early-detection filters.
pub fn run_regular(inst: &SdoInstance, config: &TwoPhaseConfig) -> Result<RunOutput, TwoPhaseError> {
    let started = Instant::now();
    let s = setup(inst, config)?;
    let mut collector = Collector { archive: ParetoArchive::new(), records: Vec::new() };
    let mut warnings = Vec::new();

    let res1 = crate::eps::run_wave(&s.scalarizer, &s.grid, config.wave_config(), &mut log_event(PHASE_I));
    let mut plans = Vec::new();
    evaluate_new(inst, &s.model, &s.scalarizer, &res1.solutions, &mut plans, PHASE_I)?;
    collector.add(&s.grid, &res1.solutions, &plans, &res1.repeat_counts());
    log::info!("phase I: {}", res1.stats.csv_row());
    let phase1 = PhaseReport { ranges: s.ranges.clone(), grid_size: s.grid.len(), stats: res1.stats, bot_max: None, n_selected: None };
    if res1.aborted.is_some() {
        return Ok(finish(
            config,
            Partial {
                collector,
                payoff: s.payoff,
                phase1,
                phase1_grid: s.grid,
                phase1_status: res1.status,
                phase2: None,
                ml: None,
                warnings,
                aborted: res1.aborted,
            },
            started,
        ));
    }

    let mut phase2 = None;
    let mut aborted = None;
    if let Some((f, grid2, sc2)) = phase2_setup(&s, &collector.unique_records(), config, &mut warnings)? {
        let res2 = crate::eps::run_wave(&sc2, &grid2, config.wave_config(), &mut log_event(PHASE_II));
        let mut plans2 = Vec::new();
        evaluate_new(inst, &s.model, &sc2, &res2.solutions, &mut plans2, PHASE_II)?;
        collector.add(&grid2, &res2.solutions, &plans2, &res2.repeat_counts());
        log::info!("phase II: {}", res2.stats.csv_row());
        aborted = res2.aborted;
        phase2 =
            Some(PhaseReport { ranges: f.ranges, grid_size: grid2.len(), stats: res2.stats, bot_max: Some(f.bot_max), n_selected: None });
    }
    Ok(finish(
        config,
        Partial {
            collector,
            payoff: s.payoff,
            phase1,
            phase1_grid: s.grid,
            phase1_status: res1.status,
            phase2,
            ml: None,
            warnings,
            aborted,
        },
        started,
    ))
}

/// Prediction-guided run with forest predictors.
pub fn run_ml(inst: &SdoInstance, config: &TwoPhaseConfig) -> Result<RunOutput, TwoPhaseError> {
    let mut predictor = ForestPredictor::new(config.hyper.clone(), config.seed);
    run_ml_with(inst, config, &mut predictor)
}

/// What the filters and solves of a wave have revealed about each vector.
fn known_outcome(status: &GridStatus, plans: &[PlanSolution]) -> Option<Option<[f64; 3]>> {
    let crit = |id: usize| {
        let c = &plans[id].criteria;
        Some([c.cov, c.pci, c.bot_min])
    };
    match *status {
        GridStatus::Pending => None,
        GridStatus::Solved(id) | GridStatus::OmittedRepeat(id) => Some(crit(id)),
        GridStatus::Infeasible | GridStatus::OmittedInfeasible => Some(None),
    }
}

fn collect_labels(grid: &[EpsVector], status: &[GridStatus], plans: &[PlanSolution], data: &mut LabeledData) {
    for (e, st) in grid.iter().zip(status) {
        if let Some(c) = known_outcome(st, plans) {
            data.features.push(e.eps.clone());
            data.feasible.push(c.is_some());
            data.criteria.push(c);
        }
    }
}

/// Pending vectors predicted feasible and passing, reduced by the ND
/// filter, in wave order. Returns the selection and every prediction.
fn select(
    predictor: &dyn Predictor,
    grid: &[EpsVector],
    pending: &[usize],
    config: &TwoPhaseConfig,
    bot_max: f64,
) -> Result<(Vec<usize>, Vec<Option<bool>>), TwoPhaseError> {
    let mut predicted = vec![None; grid.len()];
    let mut candidates = Vec::new();
    let mut triples = Vec::new();
    for &i in pending {
        let p = predictor.predict(&grid[i].eps)?;
        predicted[i] = Some(p.feasible);
        if p.feasible && p.cov >= config.cov_min && p.pci >= config.pci_min && p.bot <= bot_max {
            candidates.push(i);
            triples.push([p.cov, p.pci, p.bot]);
        }
    }
    let mut chosen: Vec<usize> = nd_filter_indices(&triples).into_iter().map(|k| candidates[k]).collect();
    chosen.sort_unstable_by(|a, b| b.cmp(a));
    Ok((chosen, predicted))
}

fn score_predictions(predicted: &[Option<bool>], status: &[GridStatus], checked: &mut usize, correct: &mut usize) {
    for (p, st) in predicted.iter().zip(status) {
        let (Some(p), false) = (p, *st == GridStatus::Pending) else { continue };
        let actual = matches!(st, GridStatus::Solved(_) | GridStatus::OmittedRepeat(_));
        *checked += 1;
        if *p == actual {
            *correct += 1;
        }
    }
}

/// Prediction-guided run with a caller-supplied predictor.
pub fn run_ml_with(inst: &SdoInstance, config: &TwoPhaseConfig, predictor: &mut dyn Predictor) -> Result<RunOutput, TwoPhaseError> {
    let started = Instant::now();
    let s = setup(inst, config)?;
    let n_sample = (config.rho * s.grid.len() as f64).ceil() as usize;
    if n_sample < config.min_sample.min(s.grid.len()) {
        return Err(TwoPhaseError::InsufficientSample { needed: config.min_sample, got: n_sample });
    }
    let mut collector = Collector { archive: ParetoArchive::new(), records: Vec::new() };
    let mut warnings = Vec::new();
    let (mut checked, mut correct) = (0, 0);

    // Round 1: a random sample of the Phase-I grid, loosest first.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut round1 = sample(&mut rng, s.grid.len(), n_sample.min(s.grid.len())).into_vec();
    round1.sort_unstable_by(|a, b| b.cmp(a));
    let mut wave = Wave::new(&s.scalarizer, &s.grid, config.wave_config());
    wave.solve_indices(&round1, &mut log_event(PHASE_I));
    let mut plans = Vec::new();
    evaluate_new(inst, &s.model, &s.scalarizer, &wave.solutions, &mut plans, PHASE_I)?;

    // Round 2: predict over what the sample left unexplored.
    let mut phase1_predictions = vec![None; s.grid.len()];
    let mut round2_selected = 0;
    if wave.aborted.is_none() {
        let pending = wave.pending();
        if !pending.is_empty() {
            let mut data = LabeledData::default();
            collect_labels(&s.grid, &wave.status, &plans, &mut data);
            predictor.fit(&data)?;
            let (chosen, predicted) = select(&*predictor, &s.grid, &pending, config, f64::INFINITY)?;
            round2_selected = chosen.len();
            phase1_predictions = predicted;
            wave.solve_indices(&chosen, &mut log_event(PHASE_I));
            evaluate_new(inst, &s.model, &s.scalarizer, &wave.solutions, &mut plans, PHASE_I)?;
            score_predictions(&phase1_predictions, &wave.status, &mut checked, &mut correct);
        }
    }
    let res1 = wave.finish();
    collector.add(&s.grid, &res1.solutions, &plans, &repeat_hits(&res1.status, res1.solutions.len()));
    log::info!("phase I (ml): {}", res1.stats.csv_row());
    let phase1 = PhaseReport {
        ranges: s.ranges.clone(),
        grid_size: s.grid.len(),
        stats: res1.stats.clone(),
        bot_max: None,
        n_selected: Some(round2_selected),
    };
    let mut ml = MlReport {
        sample_size: round1.len(),
        round2_selected,
        phase2_selected: 0,
        n_checked: 0,
        n_correct: 0,
        classifier_accuracy: None,
        phase1_predictions,
    };
    let close = |ml: &mut MlReport, checked: usize, correct: usize| {
        ml.n_checked = checked;
        ml.n_correct = correct;
        ml.classifier_accuracy = (checked > 0).then(|| correct as f64 / checked as f64);
    };
    if res1.aborted.is_some() {
        close(&mut ml, checked, correct);
        return Ok(finish(
            config,
            Partial {
                collector,
                payoff: s.payoff,
                phase1,
                phase1_grid: s.grid,
                phase1_status: res1.status,
                phase2: None,
                ml: Some(ml),
                warnings,
                aborted: res1.aborted,
            },
            started,
        ));
    }

    let mut phase2 = None;
    let mut aborted = None;
    if let Some((f, grid2, sc2)) = phase2_setup(&s, &collector.unique_records(), config, &mut warnings)? {
        let mut data = LabeledData::default();
        collect_labels(&s.grid, &res1.status, &plans, &mut data);
        predictor.fit(&data)?;
        let all: Vec<usize> = (0..grid2.len()).collect();
        let (chosen, predicted) = select(&*predictor, &grid2, &all, config, f.bot_max)?;
        ml.phase2_selected = chosen.len();
        let mut wave2 = Wave::new(&sc2, &grid2, config.wave_config());
        wave2.solve_indices(&chosen, &mut log_event(PHASE_II));
        let mut plans2 = Vec::new();
        evaluate_new(inst, &s.model, &sc2, &wave2.solutions, &mut plans2, PHASE_II)?;
        score_predictions(&predicted, &wave2.status, &mut checked, &mut correct);
        let res2 = wave2.finish();
        collector.add(&grid2, &res2.solutions, &plans2, &repeat_hits(&res2.status, res2.solutions.len()));
        log::info!("phase II (ml): {}", res2.stats.csv_row());
        aborted = res2.aborted;
        phase2 = Some(PhaseReport {
            ranges: f.ranges,
            grid_size: grid2.len(),
            stats: res2.stats,
            bot_max: Some(f.bot_max),
            n_selected: Some(chosen.len()),
        });
    }
    close(&mut ml, checked, correct);
    Ok(finish(
        config,
        Partial {
            collector,
            payoff: s.payoff,
            phase1,
            phase1_grid: s.grid,
            phase1_status: res1.status,
            phase2,
            ml: Some(ml),
            warnings,
            aborted,
        },
        started,
    ))
}

/// Runs the mode named in the configuration.
pub fn run(inst: &SdoInstance, config: &TwoPhaseConfig) -> Result<RunOutput, TwoPhaseError> {
    match config.mode {
        RunMode::Regular => run_regular(inst, config),
        RunMode::Ml => run_ml(inst, config),
    }
}
