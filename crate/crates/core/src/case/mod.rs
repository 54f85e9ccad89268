//! Patient cases: ROIs, catheters, dwell masks, prescription and protocol.

mod deactivation;
mod io;
mod phantom;
mod protocol;

pub use deactivation::{apply_clinical_deactivation, NEEDLE_MAX_DISTANCE_MM};
pub use io::{load_case, load_protocol, save_case, save_protocol};
pub use phantom::{generate_phantom, OarSet, PhantomSpec, DEFAULT_SAMPLES_PER_ROI};
pub use protocol::{AimCategory, Direction, DoseAim, Metric, MetricKind, Protocol};

use serde::{Deserialize, Serialize};

use crate::geometry::{Aabb, Shape, Vec3};
use crate::{Error, Result};

pub const DEFAULT_MAX_DWELL_S: f64 = 150.0;
pub const DEFAULT_MIN_DWELL_S: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiRole {
    Target,
    Oar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub name: String,
    pub role: RoiRole,
    pub volume_cm3: f64,
    pub shape: Shape,
    pub sample_points: Vec<Vec3>,
}

impl Roi {
    /// Builds an ROI with `n` points drawn uniformly inside `shape`.
    pub fn sampled<R: rand::Rng + ?Sized>(
        name: &str,
        role: RoiRole,
        shape: Shape,
        n: usize,
        rng: &mut R,
    ) -> Roi {
        let sample_points = (0..n).map(|_| shape.sample(rng)).collect();
        Roi {
            name: name.to_string(),
            role,
            volume_cm3: shape.volume_cm3(),
            shape,
            sample_points,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatheterKind {
    OvoidLeft,
    OvoidRight,
    Intrauterine,
    Needle,
}

/// Contribution group used by the dwell-time chart and contribution limits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatheterGroup {
    OvoidLeft,
    OvoidRight,
    Intrauterine,
    Needles,
}

impl CatheterKind {
    pub fn group(self) -> CatheterGroup {
        match self {
            CatheterKind::OvoidLeft => CatheterGroup::OvoidLeft,
            CatheterKind::OvoidRight => CatheterGroup::OvoidRight,
            CatheterKind::Intrauterine => CatheterGroup::Intrauterine,
            CatheterKind::Needle => CatheterGroup::Needles,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Catheter {
    pub id: u32,
    pub kind: CatheterKind,
    /// Ordered from the distal tip.
    pub dwell_positions: Vec<Vec3>,
    pub step_mm: f64,
}

/// Per-position activation and time bounds, indexed `[catheter][position]`
/// in the case's catheter order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DwellMask {
    pub active: Vec<Vec<bool>>,
    pub max_time_s: Vec<Vec<f64>>,
    /// Lower bound for any position that receives time.
    pub min_time_s: f64,
}

impl DwellMask {
    pub fn all_active(catheters: &[Catheter]) -> DwellMask {
        DwellMask {
            active: catheters
                .iter()
                .map(|c| vec![true; c.dwell_positions.len()])
                .collect(),
            max_time_s: catheters
                .iter()
                .map(|c| vec![DEFAULT_MAX_DWELL_S; c.dwell_positions.len()])
                .collect(),
            min_time_s: DEFAULT_MIN_DWELL_S,
        }
    }

    pub fn active_flat(&self) -> Vec<bool> {
        self.active.iter().flatten().copied().collect()
    }

    /// Effective per-position maximum: zero where inactive.
    pub fn effective_max_flat(&self) -> Vec<f64> {
        self.active
            .iter()
            .flatten()
            .zip(self.max_time_s.iter().flatten())
            .map(|(&a, &m)| if a { m } else { 0.0 })
            .collect()
    }

    pub fn usable_count(&self) -> usize {
        self.effective_max_flat().iter().filter(|&&m| m > 0.0).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prescription {
    pub fraction_dose_gy: f64,
    pub n_fractions: u32,
    pub ebrt_dose_gy: f64,
    pub ebrt_n_fractions: u32,
    pub alpha_beta_target: f64,
    pub alpha_beta_oar: f64,
}

impl Default for Prescription {
    fn default() -> Self {
        Prescription {
            fraction_dose_gy: 7.0,
            n_fractions: 4,
            ebrt_dose_gy: 45.0,
            ebrt_n_fractions: 25,
            alpha_beta_target: 10.0,
            alpha_beta_oar: 3.0,
        }
    }
}

impl Prescription {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction_dose_gy > 0.0) {
            return Err(Error::validation("prescription.fraction_dose_gy", "must be positive"));
        }
        if self.n_fractions == 0 {
            return Err(Error::validation("prescription.n_fractions", "must be positive"));
        }
        if !(self.ebrt_dose_gy >= 0.0) {
            return Err(Error::validation("prescription.ebrt_dose_gy", "must be nonnegative"));
        }
        if self.ebrt_n_fractions == 0 {
            return Err(Error::validation("prescription.ebrt_n_fractions", "must be positive"));
        }
        if !(self.alpha_beta_target > 0.0) {
            return Err(Error::validation("prescription.alpha_beta_target", "must be positive"));
        }
        if !(self.alpha_beta_oar > 0.0) {
            return Err(Error::validation("prescription.alpha_beta_oar", "must be positive"));
        }
        Ok(())
    }

    pub fn alpha_beta(&self, role: RoiRole) -> f64 {
        match role {
            RoiRole::Target => self.alpha_beta_target,
            RoiRole::Oar => self.alpha_beta_oar,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub label: String,
    pub position: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientCase {
    pub id: String,
    pub prescription: Prescription,
    pub protocol: Protocol,
    pub rois: Vec<Roi>,
    pub catheters: Vec<Catheter>,
    pub dwell_mask: DwellMask,
    pub a_points: Vec<ReferencePoint>,
}

/// Where a flat dwell index lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DwellRef {
    pub catheter: usize,
    pub position: usize,
}

fn permute<T>(order: &[usize], v: Vec<T>) -> Vec<T> {
    let mut slots: Vec<Option<T>> = v.into_iter().map(Some).collect();
    order.iter().map(|&i| slots[i].take().unwrap()).collect()
}

impl PatientCase {
    /// Puts lists in canonical order (ROIs by name, catheters by id, keeping
    /// the dwell mask aligned) and validates.
    pub fn canonicalized(mut self) -> Result<Self> {
        self.rois.sort_by(|a, b| a.name.cmp(&b.name));
        if self.dwell_mask.active.len() == self.catheters.len()
            && self.dwell_mask.max_time_s.len() == self.catheters.len()
        {
            let mut order: Vec<usize> = (0..self.catheters.len()).collect();
            order.sort_by_key(|&i| self.catheters[i].id);
            self.dwell_mask.active = permute(&order, std::mem::take(&mut self.dwell_mask.active));
            self.dwell_mask.max_time_s = permute(&order, std::mem::take(&mut self.dwell_mask.max_time_s));
            self.catheters = permute(&order, std::mem::take(&mut self.catheters));
        }
        self.a_points.sort_by(|a, b| a.label.cmp(&b.label));
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::validation("id", "empty case id"));
        }
        self.prescription.validate()?;
        self.protocol.validate()?;

        for (i, roi) in self.rois.iter().enumerate() {
            let field = format!("rois[{}]", roi.name);
            roi.shape.validate().map_err(|e| match e {
                Error::Validation { message, .. } => Error::validation(format!("{field}.shape"), message),
                other => other,
            })?;
            if !(roi.volume_cm3 > 0.0) {
                return Err(Error::validation(format!("{field}.volume_cm3"), "must be positive"));
            }
            if roi.sample_points.is_empty() {
                return Err(Error::validation(format!("{field}.sample_points"), "no sample points"));
            }
            if let Some(p) = roi.sample_points.iter().find(|p| !roi.shape.contains(**p)) {
                return Err(Error::validation(
                    format!("{field}.sample_points"),
                    format!("point {p:?} lies outside the shape"),
                ));
            }
            if self.rois[..i].iter().any(|r| r.name == roi.name) {
                return Err(Error::validation("rois", format!("duplicate ROI {}", roi.name)));
            }
        }

        let count = |k| self.catheters.iter().filter(|c| c.kind == k).count();
        for kind in [CatheterKind::OvoidLeft, CatheterKind::OvoidRight, CatheterKind::Intrauterine] {
            if count(kind) != 1 {
                return Err(Error::validation(
                    "catheters",
                    format!("expected exactly one {kind:?} catheter"),
                ));
            }
        }
        for (i, c) in self.catheters.iter().enumerate() {
            let field = format!("catheters[{}]", c.id);
            if self.catheters[..i].iter().any(|o| o.id == c.id) {
                return Err(Error::validation("catheters", format!("duplicate id {}", c.id)));
            }
            if !(c.step_mm > 0.0) {
                return Err(Error::validation(format!("{field}.step_mm"), "must be positive"));
            }
            if c.dwell_positions.is_empty() {
                return Err(Error::validation(format!("{field}.dwell_positions"), "empty"));
            }
            for w in c.dwell_positions.windows(2) {
                if (w[0].distance(w[1]) - c.step_mm).abs() > 1e-6 {
                    return Err(Error::validation(
                        format!("{field}.dwell_positions"),
                        "consecutive positions must be step_mm apart",
                    ));
                }
            }
        }

        let m = &self.dwell_mask;
        let shape_ok = |v: &Vec<Vec<bool>>| {
            v.len() == self.catheters.len()
                && v.iter().zip(&self.catheters).all(|(a, c)| a.len() == c.dwell_positions.len())
        };
        let shape_ok_f = |v: &Vec<Vec<f64>>| {
            v.len() == self.catheters.len()
                && v.iter().zip(&self.catheters).all(|(a, c)| a.len() == c.dwell_positions.len())
        };
        if !shape_ok(&m.active) {
            return Err(Error::validation("dwell_mask.active", "does not match the catheters"));
        }
        if !shape_ok_f(&m.max_time_s) {
            return Err(Error::validation("dwell_mask.max_time_s", "does not match the catheters"));
        }
        if !(m.min_time_s >= 0.0) {
            return Err(Error::validation("dwell_mask.min_time_s", "must be nonnegative"));
        }
        for &t in m.max_time_s.iter().flatten() {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::validation("dwell_mask.max_time_s", "must be nonnegative"));
            }
            if t > 0.0 && t < m.min_time_s {
                return Err(Error::validation(
                    "dwell_mask.max_time_s",
                    "must be ≥ min_time_s where positive",
                ));
            }
        }

        for aim in &self.protocol.aims {
            let known = match aim.metric {
                Metric::PointDose => self.a_points.iter().any(|p| p.label == aim.roi),
                _ => self.rois.iter().any(|r| r.name == aim.roi),
            };
            if !known {
                return Err(Error::validation(
                    "protocol.aims.roi",
                    format!("aim references unknown ROI or point \"{}\"", aim.roi),
                ));
            }
            if let Metric::DoseToVolume(v) = aim.metric {
                let vol = self.roi(&aim.roi).map(|r| r.volume_cm3).unwrap_or(0.0);
                if v > vol {
                    return Err(Error::validation(
                        "protocol.aims.value_param",
                        format!("{} exceeds the ROI volume", aim.label()),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn roi(&self, name: &str) -> Option<&Roi> {
        self.rois.iter().find(|r| r.name == name)
    }

    pub fn a_point(&self, label: &str) -> Option<&ReferencePoint> {
        self.a_points.iter().find(|p| p.label == label)
    }

    pub fn dwell_count(&self) -> usize {
        self.catheters.iter().map(|c| c.dwell_positions.len()).sum()
    }

    /// All dwell positions in flat index order.
    pub fn dwell_positions(&self) -> Vec<crate::geometry::Vec3> {
        self.catheters
            .iter()
            .flat_map(|c| c.dwell_positions.iter().copied())
            .collect()
    }

    pub fn dwell_refs(&self) -> Vec<DwellRef> {
        self.catheters
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| {
                (0..c.dwell_positions.len()).map(move |p| DwellRef {
                    catheter: ci,
                    position: p,
                })
            })
            .collect()
    }

    /// Flat index of position `position` on the catheter with id `catheter_id`.
    pub fn flat_index(&self, catheter_id: u32, position: usize) -> Option<usize> {
        let mut offset = 0;
        for c in &self.catheters {
            if c.id == catheter_id {
                return (position < c.dwell_positions.len()).then_some(offset + position);
            }
            offset += c.dwell_positions.len();
        }
        None
    }

    /// Contribution group of each flat dwell index.
    pub fn dwell_groups(&self) -> Vec<CatheterGroup> {
        self.catheters
            .iter()
            .flat_map(|c| std::iter::repeat_n(c.kind.group(), c.dwell_positions.len()))
            .collect()
    }

    /// Box around every ROI shape and dwell position.
    pub fn bounding_box(&self) -> Aabb {
        let mut bb = self.implant_bounding_box();
        for r in &self.rois {
            bb = bb.union(r.shape.bounding_box());
        }
        bb
    }

    /// Box around every dwell position.
    pub fn implant_bounding_box(&self) -> Aabb {
        self.catheters
            .iter()
            .flat_map(|c| c.dwell_positions.iter())
            .fold(None, |acc: Option<Aabb>, &p| {
                Some(acc.map_or(Aabb::around(p), |b| b.include(p)))
            })
            .expect("validated case has dwell positions")
    }

    /// Copy of the case with all geometry shifted by `offset`.
    pub fn translated(&self, offset: Vec3) -> PatientCase {
        let mut c = self.clone();
        for r in &mut c.rois {
            r.shape = r.shape.translated(offset);
            for p in &mut r.sample_points {
                *p = *p + offset;
            }
        }
        for cat in &mut c.catheters {
            for p in &mut cat.dwell_positions {
                *p = *p + offset;
            }
        }
        for a in &mut c.a_points {
            a.position = a.position + offset;
        }
        c
    }
}
