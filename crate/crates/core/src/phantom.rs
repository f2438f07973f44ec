//! Synthetic voxel phantoms: a spherical tumor, the ring of healthy tissue
//! around it, spherical organs-at-risk, and a Gaussian dose-rate kernel for
//! every (isocenter, sector, collimator) triple.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_SECTORS: usize = 8;
pub const COLLIMATOR_DIAMETERS_MM: [f64; 3] = [4.0, 8.0, 16.0];
pub const N_COLLIMATORS: usize = COLLIMATOR_DIAMETERS_MM.len();
/// Irradiation channels per isocenter.
pub const CHANNELS: usize = N_SECTORS * N_COLLIMATORS;
pub const FORMAT_TAG: &str = "sdo-instance/1";

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("structure `{0}` has no voxels")]
    EmptyStructure(String),
    #[error("organ-at-risk `{0}` overlaps the tumor")]
    SpecOverlap(String),
    #[error("invalid phantom spec field `{field}`: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("format error in `{field}`: {reason}")]
    Format { field: String, reason: String },
}

fn format_err(field: impl Into<String>, reason: impl Into<String>) -> PhantomError {
    PhantomError::Format { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    Tumor,
    Ring,
    Oar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub name: String,
    pub kind: StructureKind,
    pub voxels: Vec<[u32; 3]>,
}

impl Structure {
    pub fn volume_cm3(&self, voxel_size_mm: f64) -> f64 {
        self.voxels.len() as f64 * voxel_size_mm.powi(3) / 1000.0
    }
}

/// Dense dose rates (Gy/min) indexed by (global voxel, isocenter, sector,
/// collimator), row-major. Global voxel order follows the structure list.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseRateTensor {
    n_voxels: usize,
    n_isocenters: usize,
    data: Vec<f64>,
}

impl DoseRateTensor {
    pub fn new(n_voxels: usize, n_isocenters: usize, data: Vec<f64>) -> Result<Self, PhantomError> {
        if data.len() != n_voxels * n_isocenters * CHANNELS {
            return Err(format_err(
                "dose_rate.data",
                format!("expected {} entries, found {}", n_voxels * n_isocenters * CHANNELS, data.len()),
            ));
        }
        if let Some(p) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(format_err(format!("dose_rate.data[{p}]"), "dose rates must be finite and nonnegative"));
        }
        Ok(Self { n_voxels, n_isocenters, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n_voxels, self.n_isocenters, N_SECTORS, N_COLLIMATORS]
    }

    pub fn rate(&self, voxel: usize, iso: usize, sector: usize, coll: usize) -> f64 {
        self.data[((voxel * self.n_isocenters + iso) * N_SECTORS + sector) * N_COLLIMATORS + coll]
    }

    /// All rates into one voxel, in plan-duration order `(iso, sector, coll)`.
    pub fn voxel_row(&self, voxel: usize) -> &[f64] {
        let w = self.n_isocenters * CHANNELS;
        &self.data[voxel * w..(voxel + 1) * w]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub name: String,
    pub grid_shape: [usize; 3],
    pub voxel_size_mm: f64,
    pub n_sectors: usize,
    pub collimator_diameters_mm: Vec<f64>,
    pub seed: u64,
}

/// A sector-duration optimization instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SdoInstance {
    pub meta: InstanceMeta,
    pub structures: Vec<Structure>,
    pub isocenters: Vec<[f64; 3]>,
    pub dose_rate: DoseRateTensor,
    /// One prescription (Gy) per tumor, in structure order.
    pub prescriptions: Vec<f64>,
    /// Maximum dose (Gy) per structure.
    pub max_doses: Vec<f64>,
}

impl SdoInstance {
    pub fn n_isocenters(&self) -> usize {
        self.isocenters.len()
    }

    /// Length of a duration vector `g`.
    pub fn n_durations(&self) -> usize {
        self.n_isocenters() * CHANNELS
    }

    pub fn n_voxels(&self) -> usize {
        self.structures.iter().map(|s| s.voxels.len()).sum()
    }

    /// Global index of the first voxel of each structure.
    pub fn voxel_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.structures
            .iter()
            .map(|s| {
                let o = acc;
                acc += s.voxels.len();
                o
            })
            .collect()
    }

    pub fn tumor_indices(&self) -> Vec<usize> {
        self.indices_of(StructureKind::Tumor)
    }

    pub fn indices_of(&self, kind: StructureKind) -> Vec<usize> {
        self.structures.iter().enumerate().filter(|(_, s)| s.kind == kind).map(|(i, _)| i).collect()
    }

    /// Prescription of structure `idx`, which must be a tumor.
    pub fn prescription_of(&self, idx: usize) -> f64 {
        let pos = self.tumor_indices().iter().position(|&t| t == idx).expect("structure is not a tumor");
        self.prescriptions[pos]
    }

    /// Sum over tumors of prescription times voxel count: the total
    /// underdose of an empty plan.
    pub fn total_prescribed(&self) -> f64 {
        self.tumor_indices().iter().zip(&self.prescriptions).map(|(&t, d)| d * self.structures[t].voxels.len() as f64).sum()
    }

    /// Largest dose rate into any voxel of structure `idx`.
    pub fn max_rate_in(&self, idx: usize) -> f64 {
        let off = self.voxel_offsets()[idx];
        (off..off + self.structures[idx].voxels.len()).flat_map(|v| self.dose_rate.voxel_row(v).iter().copied()).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.meta.n_sectors != N_SECTORS {
            return Err(format_err("meta.n_sectors", format!("expected {N_SECTORS}, found {}", self.meta.n_sectors)));
        }
        if self.meta.collimator_diameters_mm != COLLIMATOR_DIAMETERS_MM {
            return Err(format_err("meta.collimator_diameters_mm", "expected [4, 8, 16]"));
        }
        if !(self.meta.voxel_size_mm > 0.0) {
            return Err(format_err("meta.voxel_size_mm", "must be positive"));
        }
        if self.isocenters.is_empty() {
            return Err(format_err("isocenters", "at least one isocenter is required"));
        }
        let tumors = self.tumor_indices();
        if tumors.is_empty() {
            return Err(format_err("structures", "at least one tumor is required"));
        }
        if self.prescriptions.len() != tumors.len() {
            return Err(format_err("prescriptions", "one prescription per tumor is required"));
        }
        if self.prescriptions.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(format_err("prescriptions", "prescriptions must be positive"));
        }
        if self.max_doses.len() != self.structures.len() {
            return Err(format_err("max_doses", "one maximum dose per structure is required"));
        }
        if self.max_doses.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(format_err("max_doses", "maximum doses must be finite and nonnegative"));
        }
        let mut seen = HashSet::new();
        for (i, s) in self.structures.iter().enumerate() {
            if s.voxels.is_empty() {
                return Err(PhantomError::EmptyStructure(s.name.clone()));
            }
            for v in &s.voxels {
                if !seen.insert(*v) {
                    return Err(format_err(format!("structures[{i}].voxels"), format!("voxel {v:?} belongs to more than one structure")));
                }
            }
        }
        let expect = [self.n_voxels(), self.n_isocenters(), N_SECTORS, N_COLLIMATORS];
        if self.dose_rate.shape() != expect {
            return Err(format_err("dose_rate.shape", format!("expected {expect:?}, found {:?}", self.dose_rate.shape())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OarSpec {
    pub name: String,
    pub center_mm: [f64; 3],
    pub radius_mm: f64,
    pub max_dose_gy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub name: String,
    pub grid_shape: [usize; 3],
    pub voxel_size_mm: f64,
    pub tumor_center_mm: [f64; 3],
    pub tumor_radius_mm: f64,
    pub ring_thickness_mm: f64,
    pub oars: Vec<OarSpec>,
    pub prescribed_dose_gy: f64,
    pub tumor_max_dose_gy: f64,
    pub ring_max_dose_gy: f64,
    pub n_isocenters: usize,
    pub seed: u64,
    /// Kernel width as a fraction of collimator diameter.
    pub sigma_per_diameter: f64,
    /// Total beam-on time (min) at which one isocenter with all sectors open
    /// delivers the prescription at its kernel peak.
    pub reference_bot_min: f64,
    /// Isocenters are sampled within this fraction of the tumor radius.
    pub isocenter_spread: f64,
}

impl PhantomSpec {
    /// Centered tumor in a cubic grid of `n` voxels per axis, one OAR beside
    /// the ring along +x.
    pub fn centered(name: &str, n: usize, tumor_radius_mm: f64, n_isocenters: usize, seed: u64) -> Self {
        let c = (n as f64 - 1.0) / 2.0;
        let ring = 2.0;
        let oar_r = 1.5;
        Self {
            name: name.to_string(),
            grid_shape: [n, n, n],
            voxel_size_mm: 1.0,
            tumor_center_mm: [c, c, c],
            tumor_radius_mm,
            ring_thickness_mm: ring,
            oars: vec![OarSpec {
                name: "oar1".into(),
                center_mm: [c + tumor_radius_mm + ring + oar_r + 0.5, c, c],
                radius_mm: oar_r,
                max_dose_gy: 8.0,
            }],
            prescribed_dose_gy: 12.5,
            tumor_max_dose_gy: 25.0,
            ring_max_dose_gy: 12.5,
            n_isocenters,
            seed,
            sigma_per_diameter: 0.5,
            reference_bot_min: 30.0,
            isocenter_spread: 0.6,
        }
    }

    /// Desk-scale presets: `small` solves in seconds, `medium` in minutes.
    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        match name {
            "small" => Some(Self::centered("small", 11, 2.5, 2, seed)),
            "medium" => {
                let mut s = Self::centered("medium", 15, 3.5, 3, seed);
                let c = s.tumor_center_mm;
                s.oars.push(OarSpec {
                    name: "oar2".into(),
                    center_mm: [c[0], c[1] - (3.5 + 2.0 + 1.5 + 0.5), c[2]],
                    radius_mm: 1.5,
                    max_dose_gy: 6.0,
                });
                Some(s)
            }
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |field: &'static str, reason: &str| Err(PhantomError::InvalidSpec { field, reason: reason.into() });
        if self.grid_shape.iter().any(|&n| n == 0) {
            return bad("grid_shape", "every axis needs at least one voxel");
        }
        if !(self.voxel_size_mm > 0.0) {
            return bad("voxel_size_mm", "must be positive");
        }
        if !(self.tumor_radius_mm > 0.0) {
            return bad("tumor_radius_mm", "must be positive");
        }
        if !(self.ring_thickness_mm > 0.0) {
            return bad("ring_thickness_mm", "must be positive");
        }
        if !(self.prescribed_dose_gy > 0.0) {
            return bad("prescribed_dose_gy", "must be positive");
        }
        if !(self.tumor_max_dose_gy >= self.prescribed_dose_gy) {
            return bad("tumor_max_dose_gy", "must be at least the prescribed dose");
        }
        if !(self.ring_max_dose_gy > 0.0) {
            return bad("ring_max_dose_gy", "must be positive");
        }
        if self.n_isocenters == 0 {
            return bad("n_isocenters", "must be positive");
        }
        if !(self.sigma_per_diameter > 0.0) {
            return bad("sigma_per_diameter", "must be positive");
        }
        if !(self.reference_bot_min > 0.0) {
            return bad("reference_bot_min", "must be positive");
        }
        if !(self.isocenter_spread > 0.0 && self.isocenter_spread <= 1.0) {
            return bad("isocenter_spread", "must lie in (0, 1]");
        }
        for o in &self.oars {
            if !(o.radius_mm > 0.0) {
                return bad("oars.radius_mm", "must be positive");
            }
            if !(o.max_dose_gy >= 0.0) {
                return bad("oars.max_dose_gy", "must be nonnegative");
            }
        }
        Ok(())
    }
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Unit offset directions, one per sector: the eight cube diagonals.
pub fn sector_directions() -> [[f64; 3]; N_SECTORS] {
    let s = 1.0 / 3f64.sqrt();
    let mut out = [[0.0; 3]; N_SECTORS];
    for (k, d) in out.iter_mut().enumerate() {
        *d = [if k & 1 == 0 { s } else { -s }, if k & 2 == 0 { s } else { -s }, if k & 4 == 0 { s } else { -s }];
    }
    out
}

/// Center of the kernel for `sector` around isocenter `iso` (mm).
pub fn kernel_center(iso: [f64; 3], sector: usize, voxel_size_mm: f64) -> [f64; 3] {
    let d = sector_directions()[sector];
    [iso[0] + voxel_size_mm * d[0], iso[1] + voxel_size_mm * d[1], iso[2] + voxel_size_mm * d[2]]
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<SdoInstance, PhantomError> {
    spec.validate()?;
    let vs = spec.voxel_size_mm;
    let [nx, ny, nz] = spec.grid_shape;
    let tr2 = spec.tumor_radius_mm.powi(2);
    let rr2 = (spec.tumor_radius_mm + spec.ring_thickness_mm).powi(2);

    let mut tumor = Vec::new();
    let mut ring = Vec::new();
    let mut oars: Vec<Vec<[u32; 3]>> = vec![Vec::new(); spec.oars.len()];
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let p = [i as f64 * vs, j as f64 * vs, k as f64 * vs];
                let vox = [i as u32, j as u32, k as u32];
                let d2 = dist2(p, spec.tumor_center_mm);
                let in_oar = spec.oars.iter().position(|o| dist2(p, o.center_mm) <= o.radius_mm.powi(2));
                if d2 <= tr2 {
                    if let Some(o) = in_oar {
                        return Err(PhantomError::SpecOverlap(spec.oars[o].name.clone()));
                    }
                    tumor.push(vox);
                } else if d2 <= rr2 {
                    ring.push(vox);
                } else if let Some(o) = in_oar {
                    oars[o].push(vox);
                }
            }
        }
    }

    let mut structures = vec![
        Structure { name: "tumor".into(), kind: StructureKind::Tumor, voxels: tumor },
        Structure { name: "ring".into(), kind: StructureKind::Ring, voxels: ring },
    ];
    let mut max_doses = vec![spec.tumor_max_dose_gy, spec.ring_max_dose_gy];
    for (o, vox) in spec.oars.iter().zip(oars) {
        structures.push(Structure { name: o.name.clone(), kind: StructureKind::Oar, voxels: vox });
        max_doses.push(o.max_dose_gy);
    }
    for s in &structures {
        if s.voxels.is_empty() {
            return Err(PhantomError::EmptyStructure(s.name.clone()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let reach = spec.tumor_radius_mm * spec.isocenter_spread;
    let c = spec.tumor_center_mm;
    let mut isocenters = Vec::with_capacity(spec.n_isocenters);
    while isocenters.len() < spec.n_isocenters {
        let p = [c[0] + rng.gen_range(-reach..=reach), c[1] + rng.gen_range(-reach..=reach), c[2] + rng.gen_range(-reach..=reach)];
        if dist2(p, c) <= reach * reach {
            isocenters.push(p);
        }
    }

    let amplitude = spec.prescribed_dose_gy / (N_SECTORS as f64 * spec.reference_bot_min);
    let sigmas: Vec<f64> = COLLIMATOR_DIAMETERS_MM.iter().map(|d| spec.sigma_per_diameter * d).collect();
    let centers: Vec<Vec<[f64; 3]>> = isocenters.iter().map(|&iso| (0..N_SECTORS).map(|s| kernel_center(iso, s, vs)).collect()).collect();
    let n_vox: usize = structures.iter().map(|s| s.voxels.len()).sum();
    let mut data = Vec::with_capacity(n_vox * isocenters.len() * CHANNELS);
    for s in &structures {
        for v in &s.voxels {
            let p = [v[0] as f64 * vs, v[1] as f64 * vs, v[2] as f64 * vs];
            for iso_centers in &centers {
                for &kc in iso_centers {
                    let r2 = dist2(p, kc);
                    for sigma in &sigmas {
                        data.push(amplitude * (-r2 / (2.0 * sigma * sigma)).exp());
                    }
                }
            }
        }
    }
    let dose_rate = DoseRateTensor::new(n_vox, isocenters.len(), data)?;

    let inst = SdoInstance {
        meta: InstanceMeta {
            name: spec.name.clone(),
            grid_shape: spec.grid_shape,
            voxel_size_mm: vs,
            n_sectors: N_SECTORS,
            collimator_diameters_mm: COLLIMATOR_DIAMETERS_MM.to_vec(),
            seed: spec.seed,
        },
        structures,
        isocenters,
        dose_rate,
        prescriptions: vec![spec.prescribed_dose_gy],
        max_doses,
    };
    inst.validate()?;
    Ok(inst)
}

// ---------------------------------------------------------------------------
// Instance file

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    format: String,
    meta: InstanceMeta,
    structures: Vec<Structure>,
    isocenters: Vec<[f64; 3]>,
    dose_rate: DoseRateFile,
    prescriptions: Vec<f64>,
    max_doses: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DoseRateFile {
    shape: [usize; 4],
    data: Vec<f64>,
}

fn json<T: Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

/// Canonical text form of an instance. Identical instances give identical
/// bytes; numbers use shortest round-trip formatting.
pub fn instance_to_string(inst: &SdoInstance) -> String {
    let mut s = String::new();
    s.push_str("{\n");
    let _ = writeln!(s, "\"format\": {},", json(FORMAT_TAG));
    let _ = writeln!(s, "\"meta\": {},", json(&inst.meta));
    s.push_str("\"structures\": [\n");
    for (i, st) in inst.structures.iter().enumerate() {
        let sep = if i + 1 < inst.structures.len() { "," } else { "" };
        let _ = writeln!(s, "  {}{sep}", json(st));
    }
    s.push_str("],\n");
    let _ = writeln!(s, "\"isocenters\": {},", json(&inst.isocenters));
    let _ = writeln!(s, "\"dose_rate\": {{\"shape\": {}, \"data\": [", json(&inst.dose_rate.shape()));
    let n = inst.dose_rate.n_voxels;
    for v in 0..n {
        let row: Vec<String> = inst.dose_rate.voxel_row(v).iter().map(json).collect();
        let sep = if v + 1 < n { "," } else { "" };
        let _ = writeln!(s, "  {}{sep}", row.join(","));
    }
    s.push_str("]},\n");
    let _ = writeln!(s, "\"prescriptions\": {},", json(&inst.prescriptions));
    let _ = writeln!(s, "\"max_doses\": {}", json(&inst.max_doses));
    s.push_str("}\n");
    s
}

pub fn instance_from_str(text: &str) -> Result<SdoInstance, PhantomError> {
    let file: InstanceFile =
        serde_json::from_str(text).map_err(|e| PhantomError::Syntax { line: e.line(), column: e.column(), message: e.to_string() })?;
    if file.format != FORMAT_TAG {
        return Err(format_err("format", format!("expected `{FORMAT_TAG}`, found `{}`", file.format)));
    }
    if file.dose_rate.shape[2] != N_SECTORS {
        return Err(format_err("dose_rate.shape", format!("expected {N_SECTORS} sectors, found {}", file.dose_rate.shape[2])));
    }
    if file.dose_rate.shape[3] != N_COLLIMATORS {
        return Err(format_err("dose_rate.shape", format!("expected {N_COLLIMATORS} collimators, found {}", file.dose_rate.shape[3])));
    }
    let dose_rate = DoseRateTensor::new(file.dose_rate.shape[0], file.dose_rate.shape[1], file.dose_rate.data)?;
    let inst = SdoInstance {
        meta: file.meta,
        structures: file.structures,
        isocenters: file.isocenters,
        dose_rate,
        prescriptions: file.prescriptions,
        max_doses: file.max_doses,
    };
    inst.validate()?;
    Ok(inst)
}

pub fn write_instance(inst: &SdoInstance, path: &Path) -> Result<(), PhantomError> {
    std::fs::write(path, instance_to_string(inst))?;
    Ok(())
}

pub fn read_instance(path: &Path) -> Result<SdoInstance, PhantomError> {
    instance_from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec21() -> PhantomSpec {
        PhantomSpec::centered("t21", 21, 4.0, 3, 7)
    }

    #[test]
    fn sub_voxel_tumor_is_empty() {
        // Center between voxel centers, radius below half the spacing.
        let mut s = PhantomSpec::centered("tiny", 10, 0.3, 1, 1);
        s.tumor_center_mm = [4.5, 4.5, 4.5];
        assert!(matches!(generate_phantom(&s), Err(PhantomError::EmptyStructure(n)) if n == "tumor"));
    }

    #[test]
    fn zero_radius_rejected_by_name() {
        let mut s = spec21();
        s.tumor_radius_mm = 0.0;
        let err = generate_phantom(&s).unwrap_err();
        assert!(err.to_string().contains("tumor_radius_mm"));
    }

    #[test]
    fn oar_inside_tumor_overlaps() {
        let mut s = spec21();
        s.oars[0].center_mm = s.tumor_center_mm;
        assert!(matches!(generate_phantom(&s), Err(PhantomError::SpecOverlap(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_phantom(&spec21()).unwrap();
        let b = generate_phantom(&spec21()).unwrap();
        assert_eq!(instance_to_string(&a), instance_to_string(&b));
        let mut other = spec21();
        other.seed = 8;
        assert_ne!(generate_phantom(&other).unwrap().isocenters, a.isocenters);
    }

    #[test]
    fn structures_are_disjoint_and_ring_is_a_shell() {
        let s = spec21();
        let inst = generate_phantom(&s).unwrap();
        let mut all = HashSet::new();
        for st in &inst.structures {
            for v in &st.voxels {
                assert!(all.insert(*v), "voxel {v:?} repeated");
            }
        }
        for v in &inst.structures[1].voxels {
            let p = [v[0] as f64, v[1] as f64, v[2] as f64];
            let d = dist2(p, s.tumor_center_mm).sqrt();
            assert!(d > s.tumor_radius_mm && d <= s.tumor_radius_mm + s.ring_thickness_mm);
        }
        assert!((inst.structures[0].volume_cm3(1.0) - inst.structures[0].voxels.len() as f64 / 1000.0).abs() < 1e-15);
    }

    #[test]
    fn tumor_center_receives_more_than_any_ring_voxel() {
        let s = spec21();
        let inst = generate_phantom(&s).unwrap();
        let offs = inst.voxel_offsets();
        // Brute-force sum over every (isocenter, sector, collimator).
        let mass = |g: usize| -> f64 {
            let mut t = 0.0;
            for th in 0..inst.n_isocenters() {
                for sec in 0..N_SECTORS {
                    for k in 0..N_COLLIMATORS {
                        t += inst.dose_rate.rate(g, th, sec, k);
                    }
                }
            }
            t
        };
        let center = [10u32, 10, 10];
        let ci = inst.structures[0].voxels.iter().position(|v| *v == center).unwrap();
        let cm = mass(offs[0] + ci);
        let ring_max = (0..inst.structures[1].voxels.len()).map(|i| mass(offs[1] + i)).fold(0.0, f64::max);
        assert!(cm > ring_max, "center {cm} vs ring {ring_max}");
    }

    #[test]
    fn kernel_is_monotone_in_distance_to_its_center() {
        let inst = generate_phantom(&spec21()).unwrap();
        let vs = inst.meta.voxel_size_mm;
        for th in 0..inst.n_isocenters() {
            for sec in 0..N_SECTORS {
                let kc = kernel_center(inst.isocenters[th], sec, vs);
                for k in 0..N_COLLIMATORS {
                    let mut pts: Vec<(f64, f64)> = inst.structures[0]
                        .voxels
                        .iter()
                        .enumerate()
                        .map(|(i, v)| {
                            let p = [v[0] as f64 * vs, v[1] as f64 * vs, v[2] as f64 * vs];
                            (dist2(p, kc), inst.dose_rate.rate(i, th, sec, k))
                        })
                        .collect();
                    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                    for w in pts.windows(2) {
                        assert!(w[1].1 <= w[0].1);
                    }
                }
            }
        }
    }

    #[test]
    fn isocenters_lie_inside_tumor() {
        let s = spec21();
        let inst = generate_phantom(&s).unwrap();
        for p in &inst.isocenters {
            assert!(dist2(*p, s.tumor_center_mm).sqrt() <= s.tumor_radius_mm);
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let inst = generate_phantom(&PhantomSpec::preset("small", 3).unwrap()).unwrap();
        let text = instance_to_string(&inst);
        let back = instance_from_str(&text).unwrap();
        assert_eq!(back, inst);
        assert_eq!(instance_to_string(&back), text);
    }

    #[test]
    fn negative_rate_is_rejected() {
        let inst = generate_phantom(&PhantomSpec::preset("small", 3).unwrap()).unwrap();
        let text = instance_to_string(&inst);
        let first = json(&inst.dose_rate.data()[0]);
        let bad = text.replacen(&format!("[\n  {first},"), &format!("[\n  -{first},"), 1);
        assert_ne!(bad, text);
        let err = instance_from_str(&bad).unwrap_err();
        assert!(matches!(err, PhantomError::Format { ref field, .. } if field == "dose_rate.data[0]"), "{err}");
    }

    #[test]
    fn wrong_sector_count_is_rejected() {
        let inst = generate_phantom(&PhantomSpec::preset("small", 3).unwrap()).unwrap();
        let text = instance_to_string(&inst).replace("\"n_sectors\":8", "\"n_sectors\":6");
        assert!(matches!(instance_from_str(&text), Err(PhantomError::Format { field, .. }) if field == "meta.n_sectors"));
        let shape = json(&inst.dose_rate.shape());
        let mut bad_shape = inst.dose_rate.shape();
        bad_shape[2] = 7;
        let text = instance_to_string(&inst).replace(&shape, &json(&bad_shape));
        assert!(matches!(instance_from_str(&text), Err(PhantomError::Format { field, .. }) if field == "dose_rate.shape"));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = instance_from_str("{\n\"format\": }").unwrap_err();
        assert!(matches!(err, PhantomError::Syntax { line: 2, .. }), "{err}");
    }
}
