//! The five-objective dose LP and the clinical metrics of a plan.
//!
//! Objectives, all minimized:
//! `h1` ring overdose, `h2` total dose to rings and OARs, `h3` tumor
//! overdose, `h4` tumor underdose, `h5` beam-on time.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{LpProblem, Relation};
use crate::phantom::{SdoInstance, StructureKind, CHANNELS, N_COLLIMATORS, N_SECTORS};

pub const N_OBJECTIVES: usize = 5;
/// Coverage counts a voxel as covered when `d >= D - COVERAGE_TOL`.
pub const COVERAGE_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("duration vector has length {found}, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("durations must be finite and nonnegative")]
    NegativeDuration,
    #[error("unknown structure index {0}")]
    UnknownStructure(usize),
    #[error("dose grid must be strictly increasing")]
    InvalidDoseGrid,
    #[error("coverage threshold {0} outside (0, 1]")]
    InvalidCoverage(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveVector(pub [f64; N_OBJECTIVES]);

impl ObjectiveVector {
    /// `self` is no worse everywhere and better somewhere, with `tol` slack.
    pub fn dominates(&self, other: &Self, tol: f64) -> bool {
        let mut strict = false;
        for i in 0..N_OBJECTIVES {
            let t = tol * self.0[i].abs().max(other.0[i].abs()).max(1.0);
            if self.0[i] > other.0[i] + t {
                return false;
            }
            if self.0[i] < other.0[i] - t {
                strict = true;
            }
        }
        strict
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        (0..N_OBJECTIVES).all(|i| (self.0[i] - other.0[i]).abs() <= tol * self.0[i].abs().max(other.0[i].abs()).max(1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceCriteria {
    pub cov_per_tumor: Vec<f64>,
    /// Voxel-weighted over all tumors.
    pub cov: f64,
    pub pci: f64,
    pub bot_min: f64,
    pub max_oar_dose: Vec<f64>,
    pub tv: usize,
    pub tv_piv: usize,
    pub piv: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSolution {
    pub durations: Vec<f64>,
    pub iso_bot: Vec<f64>,
    pub objectives: ObjectiveVector,
    pub criteria: PerformanceCriteria,
    /// Slack `y_i` of each bounded objective, primary slot left at 0.
    pub slacks: [f64; N_OBJECTIVES],
    pub phase: String,
}

impl PlanSolution {
    /// Evaluates a plan from its durations alone.
    pub fn evaluate(inst: &SdoInstance, durations: Vec<f64>, phase: &str) -> Result<Self, ModelError> {
        let objectives = objectives_of_plan(inst, &durations)?;
        let criteria = criteria_of_plan(inst, &durations)?;
        let iso_bot = iso_bot(inst, &durations);
        Ok(Self { durations, iso_bot, objectives, criteria, slacks: [0.0; N_OBJECTIVES], phase: phase.to_string() })
    }
}

/// Column layout of the MOLP.
#[derive(Debug, Clone)]
pub struct VarMap {
    pub g: Range<usize>,
    pub d: Range<usize>,
    /// Underdose column of each global voxel (tumor voxels only).
    pub under: Vec<Option<usize>>,
    /// Overdose column of each global voxel (tumor and ring voxels only).
    pub over: Vec<Option<usize>>,
    pub b: Range<usize>,
    pub h: [usize; N_OBJECTIVES],
}

/// Row layout of the MOLP.
#[derive(Debug, Clone)]
pub struct RowMap {
    pub objective_defs: [usize; N_OBJECTIVES],
    pub dose_defs: Range<usize>,
    pub under: Vec<usize>,
    pub tumor_over: Vec<usize>,
    pub ring_over: Vec<usize>,
    pub oar_caps: Vec<usize>,
    pub bot: Range<usize>,
    /// Per-tumor cap on total underdose implied by the coverage target.
    pub tightening: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MolpModel {
    /// Constraints only; the objective is left at zero.
    pub lp: LpProblem,
    pub vars: VarMap,
    pub rows: RowMap,
    pub cov_min: Option<f64>,
}

impl MolpModel {
    pub fn objective_var(&self, i: usize) -> usize {
        self.vars.h[i]
    }

    /// Copy of the constraint set minimizing `Σ w_i h_i`.
    pub fn weighted(&self, weights: &[f64; N_OBJECTIVES]) -> LpProblem {
        let mut lp = self.lp.clone();
        for (i, w) in weights.iter().enumerate() {
            lp.objective[self.vars.h[i]] = *w;
        }
        lp
    }

    pub fn objectives_from(&self, x: &[f64]) -> ObjectiveVector {
        ObjectiveVector(self.vars.h.map(|j| x[j]))
    }

    pub fn durations_from(&self, x: &[f64]) -> Vec<f64> {
        x[self.vars.g.clone()].iter().map(|v| v.max(0.0)).collect()
    }
}

/// Builds the MOLP with one coverage-tightening row per tumor.
pub fn build_molp(inst: &SdoInstance, cov_min: f64) -> Result<MolpModel, ModelError> {
    if !(cov_min > 0.0 && cov_min <= 1.0) {
        return Err(ModelError::InvalidCoverage(cov_min));
    }
    Ok(build_molp_with(inst, Some(cov_min)))
}

/// Builds the MOLP, with tightening rows only when `cov_min` is given.
pub fn build_molp_with(inst: &SdoInstance, cov_min: Option<f64>) -> MolpModel {
    let inf = f64::INFINITY;
    let nv = inst.n_voxels();
    let ng = inst.n_durations();
    let offs = inst.voxel_offsets();
    let mut lp = LpProblem::new();

    let g0 = lp.num_vars();
    for _ in 0..ng {
        lp.add_var(0.0, 0.0, inf);
    }
    let d0 = lp.num_vars();
    for _ in 0..nv {
        lp.add_var(0.0, 0.0, inf);
    }
    let mut under = vec![None; nv];
    let mut over = vec![None; nv];
    for (si, s) in inst.structures.iter().enumerate() {
        if s.kind == StructureKind::Tumor {
            for v in offs[si]..offs[si] + s.voxels.len() {
                under[v] = Some(lp.add_var(0.0, 0.0, inf));
            }
        }
    }
    for kind in [StructureKind::Tumor, StructureKind::Ring] {
        for (si, s) in inst.structures.iter().enumerate() {
            if s.kind == kind {
                for v in offs[si]..offs[si] + s.voxels.len() {
                    over[v] = Some(lp.add_var(0.0, 0.0, inf));
                }
            }
        }
    }
    let b0 = lp.num_vars();
    for _ in 0..inst.n_isocenters() {
        lp.add_var(0.0, 0.0, inf);
    }
    let h = [0; N_OBJECTIVES].map(|_| lp.add_var(0.0, 0.0, inf));
    let vars = VarMap { g: g0..g0 + ng, d: d0..d0 + nv, under, over, b: b0..b0 + inst.n_isocenters(), h };

    let voxels_of = |kind: StructureKind| -> Vec<usize> {
        inst.structures.iter().enumerate().filter(|(_, s)| s.kind == kind).flat_map(|(si, s)| offs[si]..offs[si] + s.voxels.len()).collect()
    };
    let tumor_vox = voxels_of(StructureKind::Tumor);
    let ring_vox = voxels_of(StructureKind::Ring);
    let oar_vox = voxels_of(StructureKind::Oar);

    let def = |lp: &mut LpProblem, hvar: usize, terms: Vec<usize>| {
        let mut c: Vec<(usize, f64)> = terms.into_iter().map(|j| (j, 1.0)).collect();
        c.push((hvar, -1.0));
        lp.add_row(c, Relation::Eq, 0.0)
    };
    let r1 = def(&mut lp, h[0], ring_vox.iter().map(|&v| vars.over[v].unwrap()).collect());
    let r2 = def(&mut lp, h[1], oar_vox.iter().chain(&ring_vox).map(|&v| d0 + v).collect());
    let r3 = def(&mut lp, h[2], tumor_vox.iter().map(|&v| vars.over[v].unwrap()).collect());
    let r4 = def(&mut lp, h[3], tumor_vox.iter().map(|&v| vars.under[v].unwrap()).collect());
    let r5 = def(&mut lp, h[4], vars.b.clone().collect());

    let dose0 = lp.num_rows();
    for v in 0..nv {
        let row = inst.dose_rate.voxel_row(v);
        let mut c: Vec<(usize, f64)> = row.iter().enumerate().map(|(j, &r)| (g0 + j, -r)).collect();
        c.push((d0 + v, 1.0));
        lp.add_row(c, Relation::Eq, 0.0);
    }
    let dose_defs = dose0..lp.num_rows();

    let mut rows_under = Vec::new();
    let mut rows_tover = Vec::new();
    let mut rows_rover = Vec::new();
    let mut rows_oar = Vec::new();
    for (si, s) in inst.structures.iter().enumerate() {
        let dmax = inst.max_doses[si];
        for v in offs[si]..offs[si] + s.voxels.len() {
            match s.kind {
                StructureKind::Tumor => {
                    let dt = inst.prescription_of(si);
                    rows_under.push(lp.add_row([(d0 + v, 1.0), (vars.under[v].unwrap(), 1.0)], Relation::Ge, dt));
                    rows_tover.push(lp.add_row([(d0 + v, 1.0), (vars.over[v].unwrap(), -1.0)], Relation::Le, dmax));
                }
                StructureKind::Ring => {
                    rows_rover.push(lp.add_row([(d0 + v, 1.0), (vars.over[v].unwrap(), -1.0)], Relation::Le, dmax));
                }
                StructureKind::Oar => {
                    rows_oar.push(lp.add_row([(d0 + v, 1.0)], Relation::Le, dmax));
                }
            }
        }
    }

    let bot0 = lp.num_rows();
    for th in 0..inst.n_isocenters() {
        for s in 0..N_SECTORS {
            let mut c: Vec<(usize, f64)> = (0..N_COLLIMATORS).map(|k| (g0 + th * CHANNELS + s * N_COLLIMATORS + k, 1.0)).collect();
            c.push((b0 + th, -1.0));
            lp.add_row(c, Relation::Le, 0.0);
        }
    }
    let bot = bot0..lp.num_rows();

    let mut tightening = Vec::new();
    if let Some(cm) = cov_min {
        for (si, s) in inst.structures.iter().enumerate() {
            if s.kind != StructureKind::Tumor {
                continue;
            }
            let c: Vec<(usize, f64)> = (offs[si]..offs[si] + s.voxels.len()).map(|v| (vars.under[v].unwrap(), 1.0)).collect();
            tightening.push(lp.add_row(c, Relation::Le, underdose_cap(inst.prescription_of(si), s.voxels.len(), cm)));
        }
    }

    MolpModel {
        lp,
        vars,
        rows: RowMap {
            objective_defs: [r1, r2, r3, r4, r5],
            dose_defs,
            under: rows_under,
            tumor_over: rows_tover,
            ring_over: rows_rover,
            oar_caps: rows_oar,
            bot,
            tightening,
        },
        cov_min,
    }
}

/// Largest total underdose of a tumor compatible with coverage `cov`.
pub fn underdose_cap(prescription: f64, n_voxels: usize, cov: f64) -> f64 {
    prescription * n_voxels as f64 * (1.0 - cov)
}

fn check_durations(inst: &SdoInstance, g: &[f64]) -> Result<(), ModelError> {
    if g.len() != inst.n_durations() {
        return Err(ModelError::ShapeMismatch { expected: inst.n_durations(), found: g.len() });
    }
    if g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(ModelError::NegativeDuration);
    }
    Ok(())
}

pub fn dose_of_plan(inst: &SdoInstance, g: &[f64]) -> Result<Vec<f64>, ModelError> {
    check_durations(inst, g)?;
    Ok((0..inst.n_voxels()).map(|v| inst.dose_rate.voxel_row(v).iter().zip(g).map(|(r, t)| r * t).sum()).collect())
}

/// Per-isocenter beam-on time: the longest sector.
pub fn iso_bot(inst: &SdoInstance, g: &[f64]) -> Vec<f64> {
    (0..inst.n_isocenters())
        .map(|th| {
            (0..N_SECTORS)
                .map(|s| g[th * CHANNELS + s * N_COLLIMATORS..th * CHANNELS + (s + 1) * N_COLLIMATORS].iter().sum::<f64>())
                .fold(0.0, f64::max)
        })
        .collect()
}

pub fn objectives_of_plan(inst: &SdoInstance, g: &[f64]) -> Result<ObjectiveVector, ModelError> {
    let dose = dose_of_plan(inst, g)?;
    Ok(objectives_from_dose(inst, g, &dose))
}

fn objectives_from_dose(inst: &SdoInstance, g: &[f64], dose: &[f64]) -> ObjectiveVector {
    let offs = inst.voxel_offsets();
    let mut h = [0.0; N_OBJECTIVES];
    for (si, s) in inst.structures.iter().enumerate() {
        let dmax = inst.max_doses[si];
        let ds = &dose[offs[si]..offs[si] + s.voxels.len()];
        match s.kind {
            StructureKind::Ring => {
                h[0] += ds.iter().map(|d| (d - dmax).max(0.0)).sum::<f64>();
                h[1] += ds.iter().sum::<f64>();
            }
            StructureKind::Oar => h[1] += ds.iter().sum::<f64>(),
            StructureKind::Tumor => {
                let dt = inst.prescription_of(si);
                h[2] += ds.iter().map(|d| (d - dmax).max(0.0)).sum::<f64>();
                h[3] += ds.iter().map(|d| (dt - d).max(0.0)).sum::<f64>();
            }
        }
    }
    h[4] = iso_bot(inst, g).iter().sum();
    ObjectiveVector(h)
}

pub fn criteria_of_plan(inst: &SdoInstance, g: &[f64]) -> Result<PerformanceCriteria, ModelError> {
    let dose = dose_of_plan(inst, g)?;
    Ok(criteria_from_dose(inst, g, &dose))
}

/// Paddick conformity index from voxel counts; zero when nothing reaches the
/// prescription.
pub fn pci(tv: usize, tv_piv: usize, piv: usize) -> f64 {
    if tv == 0 || piv == 0 {
        0.0
    } else {
        (tv_piv as f64).powi(2) / (tv as f64 * piv as f64)
    }
}

fn criteria_from_dose(inst: &SdoInstance, g: &[f64], dose: &[f64]) -> PerformanceCriteria {
    let offs = inst.voxel_offsets();
    // The prescription isodose is taken at the lowest prescription.
    let piv_level = inst.prescriptions.iter().copied().fold(f64::INFINITY, f64::min);
    let piv = dose.iter().filter(|&&d| d >= piv_level - COVERAGE_TOL).count();
    let mut cov_per_tumor = Vec::new();
    let mut max_oar_dose = Vec::new();
    let (mut tv, mut tv_piv) = (0, 0);
    for (si, s) in inst.structures.iter().enumerate() {
        let ds = &dose[offs[si]..offs[si] + s.voxels.len()];
        match s.kind {
            StructureKind::Tumor => {
                let dt = inst.prescription_of(si);
                let hit = ds.iter().filter(|&&d| d >= dt - COVERAGE_TOL).count();
                cov_per_tumor.push(hit as f64 / ds.len() as f64);
                tv += ds.len();
                tv_piv += hit;
            }
            StructureKind::Oar => max_oar_dose.push(ds.iter().copied().fold(0.0, f64::max)),
            StructureKind::Ring => {}
        }
    }
    PerformanceCriteria {
        cov_per_tumor,
        cov: if tv == 0 { 0.0 } else { tv_piv as f64 / tv as f64 },
        pci: pci(tv, tv_piv, piv),
        bot_min: iso_bot(inst, g).iter().sum(),
        max_oar_dose,
        tv,
        tv_piv,
        piv,
    }
}

/// Cumulative dose-volume histogram of one structure: for each grid dose,
/// the fraction of its voxels receiving at least that dose.
pub fn dvh(inst: &SdoInstance, g: &[f64], structure: usize, dose_grid: &[f64]) -> Result<Vec<(f64, f64)>, ModelError> {
    let s = inst.structures.get(structure).ok_or(ModelError::UnknownStructure(structure))?;
    if dose_grid.windows(2).any(|w| !(w[0] < w[1])) || dose_grid.iter().any(|d| !d.is_finite()) {
        return Err(ModelError::InvalidDoseGrid);
    }
    let dose = dose_of_plan(inst, g)?;
    let off = inst.voxel_offsets()[structure];
    let mut ds: Vec<f64> = dose[off..off + s.voxels.len()].to_vec();
    ds.sort_by(f64::total_cmp);
    let n = ds.len() as f64;
    Ok(dose_grid
        .iter()
        .map(|&x| {
            let below = ds.partition_point(|&d| d < x);
            (x, (ds.len() - below) as f64 / n)
        })
        .collect())
}

/// Checks the coverage-underdose and coverage-BOT inequalities on a plan.
/// Returns the violated inequality names.
pub fn bound_violations(inst: &SdoInstance, g: &[f64], tol: f64) -> Result<Vec<String>, ModelError> {
    let dose = dose_of_plan(inst, g)?;
    let crit = criteria_from_dose(inst, g, &dose);
    let h = objectives_from_dose(inst, g, &dose);
    let offs = inst.voxel_offsets();
    let mut out = Vec::new();
    let mut lb5: f64 = 0.0;
    let mut total_cap = 0.0;
    for (ti, &si) in inst.tumor_indices().iter().enumerate() {
        let s = &inst.structures[si];
        let dt = inst.prescriptions[ti];
        let cov = crit.cov_per_tumor[ti];
        let under: f64 = dose[offs[si]..offs[si] + s.voxels.len()].iter().map(|d| (dt - d).max(0.0)).sum();
        let cap = underdose_cap(dt, s.voxels.len(), cov);
        total_cap += cap;
        if under > cap + tol * cap.max(1.0) {
            out.push(format!("underdose of {} is {under} above cap {cap}", s.name));
        }
        lb5 = lb5.max(dt * cov / (inst.max_rate_in(si) * N_SECTORS as f64));
    }
    if h.0[3] > total_cap + tol * total_cap.max(1.0) {
        out.push(format!("total underdose {} above {total_cap}", h.0[3]));
    }
    if h.0[4] < lb5 - tol * lb5.max(1.0) {
        out.push(format!("beam-on time {} below {lb5}", h.0[4]));
    }
    Ok(out)
}
