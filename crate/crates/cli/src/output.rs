//! Text tables and run artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sdo_core::eps::{bounded_objectives, ObjectiveRanges, PayoffTable};
use sdo_core::model::{dose_of_plan, dvh, PlanSolution, N_OBJECTIVES};
use sdo_core::phantom::{SdoInstance, StructureKind};
use sdo_core::two_phase::RunOutput;

use crate::Failure;

/// Coverage cut for the BOT-vs-PCI plot data.
pub const PLOT_COV_MIN: f64 = 0.997;
/// DVH dose grid step in Gy.
const DVH_STEP_GY: f64 = 0.1;

fn kind_name(k: StructureKind) -> &'static str {
    match k {
        StructureKind::Tumor => "tumor",
        StructureKind::Ring => "ring",
        StructureKind::Oar => "oar",
    }
}

pub fn summary_table(inst: &SdoInstance) -> String {
    let mut s = String::new();
    let m = &inst.meta;
    let dose = inst.prescriptions.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("/");
    writeln!(s, "{:<10} {:>10} {:>8} {:>12}", "case", "isocenters", "dose_gy", "grid").unwrap();
    writeln!(
        s,
        "{:<10} {:>10} {:>8} {:>12}",
        m.name,
        inst.n_isocenters(),
        dose,
        format!("{}x{}x{}", m.grid_shape[0], m.grid_shape[1], m.grid_shape[2])
    )
    .unwrap();
    writeln!(s).unwrap();
    writeln!(s, "{:<12} {:<6} {:>7} {:>11} {:>11}", "structure", "kind", "voxels", "volume_cm3", "max_dose_gy").unwrap();
    for (st, dmax) in inst.structures.iter().zip(&inst.max_doses) {
        writeln!(
            s,
            "{:<12} {:<6} {:>7} {:>11.3} {:>11}",
            st.name,
            kind_name(st.kind),
            st.voxels.len(),
            st.volume_cm3(m.voxel_size_mm),
            dmax
        )
        .unwrap();
    }
    s
}

pub fn payoff_text(table: &PayoffTable, ranges: &ObjectiveRanges, tightened: &ObjectiveRanges) -> String {
    let mut s = String::new();
    let head: Vec<String> = (1..=N_OBJECTIVES).map(|i| format!("{:>14}", format!("h{i}"))).collect();
    writeln!(s, "{:<10}{}", "first", head.join("")).unwrap();
    for (k, row) in table.z.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>14.6}")).collect();
        writeln!(s, "{:<10}{}", format!("h{}", k + 1), cells.join("")).unwrap();
    }
    for (label, r) in [("lb", ranges), ("ub", ranges), ("lb_tight", tightened), ("ub_tight", tightened)] {
        let v = if label.starts_with("lb") { &r.lb } else { &r.ub };
        let cells: Vec<String> = v.iter().map(|v| format!("{v:>14.6}")).collect();
        writeln!(s, "{:<10}{}", label, cells.join("")).unwrap();
    }
    s
}

pub fn plan_text(plan: &PlanSolution, weights: &[f64; N_OBJECTIVES]) -> String {
    let mut s = String::new();
    writeln!(s, "weights  {}", weights.map(|w| w.to_string()).join(",")).unwrap();
    for (i, h) in plan.objectives.0.iter().enumerate() {
        writeln!(s, "h{}       {h}", i + 1).unwrap();
    }
    let c = &plan.criteria;
    writeln!(s, "cov      {}", c.cov).unwrap();
    writeln!(s, "pci      {}", c.pci).unwrap();
    writeln!(s, "bot_min  {}", c.bot_min).unwrap();
    s
}

pub struct Written {
    pub dvh_entry: Option<usize>,
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, Failure> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

/// Entry with the best PCI among those meeting the coverage threshold, or the
/// best-covered entry when none does.
fn default_dvh_entry(out: &RunOutput) -> Option<usize> {
    let plans: Vec<&PlanSolution> = out.archive.entries.iter().map(|e| &e.payload).collect();
    let cov_min = out.report.config.cov_min;
    let best = |key: &dyn Fn(&PlanSolution) -> f64, keep: &dyn Fn(&PlanSolution) -> bool| {
        plans.iter().enumerate().filter(|(_, p)| keep(p)).max_by(|a, b| key(a.1).total_cmp(&key(b.1)).then(b.0.cmp(&a.0))).map(|(i, _)| i)
    };
    best(&|p| p.criteria.pci, &|p| p.criteria.cov >= cov_min).or_else(|| best(&|p| p.criteria.cov, &|_| true))
}

/// Writes archive.csv, durations.csv, report.json, plotdata/ and dvh.csv.
pub fn write_run(dir: &Path, inst: &SdoInstance, out: &RunOutput, dvh_entry: Option<usize>) -> Result<Written, Failure> {
    fs::create_dir_all(dir.join("plotdata"))?;
    let bounded = bounded_objectives(N_OBJECTIVES, out.report.config.primary);

    let mut w = writer(&dir.join("archive.csv"))?;
    let mut header: Vec<String> = vec!["id".into()];
    header.extend(bounded.iter().map(|i| format!("eps_h{}", i + 1)));
    header.extend((1..=N_OBJECTIVES).map(|i| format!("h{i}")));
    header.extend(["cov", "pci", "bot", "phase", "repeat_hits"].map(String::from));
    w.write_record(&header)?;
    for (id, e) in out.archive.entries.iter().enumerate() {
        let c = &e.payload.criteria;
        let mut rec = vec![id.to_string()];
        rec.extend(e.eps.eps.iter().map(|v| v.to_string()));
        rec.extend(e.payload.objectives.0.iter().map(|v| v.to_string()));
        rec.extend([c.cov.to_string(), c.pci.to_string(), c.bot_min.to_string(), e.phase.clone(), e.repeat_hits.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = writer(&dir.join("durations.csv"))?;
    let mut header = vec!["id".to_string()];
    header.extend((0..inst.n_durations()).map(|k| format!("g{k}")));
    w.write_record(&header)?;
    for (id, e) in out.archive.entries.iter().enumerate() {
        let mut rec = vec![id.to_string()];
        rec.extend(e.payload.durations.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = writer(&dir.join("plotdata/cov_pci.csv"))?;
    w.write_record(["id", "cov", "pci"])?;
    for (id, e) in out.archive.entries.iter().enumerate() {
        let c = &e.payload.criteria;
        w.write_record([id.to_string(), c.cov.to_string(), c.pci.to_string()])?;
    }
    w.flush()?;

    let mut w = writer(&dir.join("plotdata/bot_pci.csv"))?;
    w.write_record(["id", "bot", "pci"])?;
    for (id, e) in out.archive.entries.iter().enumerate() {
        let c = &e.payload.criteria;
        if c.cov >= PLOT_COV_MIN {
            w.write_record([id.to_string(), c.bot_min.to_string(), c.pci.to_string()])?;
        }
    }
    w.flush()?;

    let chosen = dvh_entry.or_else(|| default_dvh_entry(out));
    let mut w = writer(&dir.join("dvh.csv"))?;
    w.write_record(["entry", "structure", "kind", "dose_gy", "volume_fraction"])?;
    if let Some(id) = chosen {
        let g = &out.archive.entries[id].payload.durations;
        let top = dose_of_plan(inst, g)?.into_iter().fold(0.0, f64::max);
        let n = (top / DVH_STEP_GY).ceil() as usize + 1;
        let grid: Vec<f64> = (0..=n).map(|k| k as f64 * DVH_STEP_GY).collect();
        for (si, s) in inst.structures.iter().enumerate() {
            for (d, v) in dvh(inst, g, si, &grid)? {
                w.write_record([id.to_string(), s.name.clone(), kind_name(s.kind).into(), format!("{d:.1}"), v.to_string()])?;
            }
        }
    }
    w.flush()?;

    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&out.report)? + "\n")?;
    Ok(Written { dvh_entry: chosen })
}
