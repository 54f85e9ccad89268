//! Versioned plan export mirroring treatment-plan channel semantics.
//!
//! One channel per catheter lists every dwell position with its time. The DV
//! summary is evaluated at the final point count.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use brachynav_core::case::{CatheterKind, PatientCase};
use brachynav_core::dose::DoseEngine;
use brachynav_core::dv::{evaluate_plan, DvValue, EvalContext, PointCount};
use brachynav_core::geometry::Vec3;
use brachynav_core::optimizer::{evaluate_candidate, OptimizationSettings, Plan, PlanId, Provenance};
use brachynav_core::SCHEMA_VERSION;

use crate::error::{ErrorCode, Result, ServiceError};

/// Position tolerance when matching an export against a case.
const POSITION_TOLERANCE_MM: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportedDwell {
    pub position_index: usize,
    pub position_mm: Vec3,
    pub time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub catheter_id: u32,
    pub kind: CatheterKind,
    pub step_mm: f64,
    pub channel_time_s: f64,
    pub dwells: Vec<ExportedDwell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportedPlan {
    pub schema_version: u32,
    pub case_id: String,
    pub plan_id: PlanId,
    pub provenance: Provenance,
    pub fraction_dose_gy: f64,
    pub n_fractions: u32,
    pub channels: Vec<Channel>,
    pub total_time_s: f64,
    pub dv_summary: Vec<DvValue>,
}

pub fn export_plan(engine: &DoseEngine, case: &PatientCase, plan: &Plan) -> Result<ExportedPlan> {
    DoseEngine::check_times(case, &plan.dwell_times)?;
    let mut channels = Vec::with_capacity(case.catheters.len());
    let mut j = 0;
    for c in &case.catheters {
        let dwells: Vec<ExportedDwell> = c
            .dwell_positions
            .iter()
            .enumerate()
            .map(|(i, &p)| ExportedDwell {
                position_index: i,
                position_mm: p,
                time_s: plan.dwell_times[j + i],
            })
            .collect();
        j += dwells.len();
        channels.push(Channel {
            catheter_id: c.id,
            kind: c.kind,
            step_mm: c.step_mm,
            channel_time_s: dwells.iter().map(|d| d.time_s).fold(0.0, |a, b| a + b),
            dwells,
        });
    }
    let ctx = EvalContext::for_case(case, PointCount::Final)?;
    let dv_summary = evaluate_plan(engine, case, &plan.dwell_times, &ctx)?;
    Ok(ExportedPlan {
        schema_version: SCHEMA_VERSION,
        case_id: case.id.clone(),
        plan_id: plan.id,
        provenance: plan.provenance,
        fraction_dose_gy: case.prescription.fraction_dose_gy,
        n_fractions: case.prescription.n_fractions,
        total_time_s: plan.dwell_times.iter().fold(0.0, |a, b| a + b),
        channels,
        dv_summary,
    })
}

pub fn write_export(exported: &ExportedPlan, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(exported)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_export(path: impl AsRef<Path>) -> Result<ExportedPlan> {
    let exported: ExportedPlan = serde_json::from_slice(&fs::read(path)?)?;
    if exported.schema_version != SCHEMA_VERSION {
        return Err(ServiceError::validation(
            "schema_version",
            format!("unsupported export schema {}", exported.schema_version),
        ));
    }
    Ok(exported)
}

/// Flat dwell-time vector of an export, checked against the case geometry.
pub fn dwell_times(case: &PatientCase, exported: &ExportedPlan) -> Result<Vec<f64>> {
    if exported.case_id != case.id {
        return Err(ServiceError::validation(
            "case_id",
            format!("export is for case {}, not {}", exported.case_id, case.id),
        ));
    }
    let mut times = vec![0.0; case.dwell_count()];
    let mut seen = vec![false; times.len()];
    for (ci, ch) in exported.channels.iter().enumerate() {
        for (di, d) in ch.dwells.iter().enumerate() {
            let field = format!("channels[{ci}].dwells[{di}]");
            let j = case
                .flat_index(ch.catheter_id, d.position_index)
                .ok_or_else(|| ServiceError::validation(&field, "no such dwell position in the case"))?;
            let c = case.catheters.iter().find(|c| c.id == ch.catheter_id).expect("catheter exists");
            if c.dwell_positions[d.position_index].distance(d.position_mm) > POSITION_TOLERANCE_MM {
                return Err(ServiceError::validation(&field, "position does not match the case"));
            }
            if !(d.time_s >= 0.0) || !d.time_s.is_finite() {
                return Err(ServiceError::validation(format!("{field}.time_s"), "must be nonnegative"));
            }
            if seen[j] {
                return Err(ServiceError::validation(&field, "duplicate dwell position"));
            }
            seen[j] = true;
            times[j] = d.time_s;
        }
    }
    Ok(times)
}

/// Re-evaluates an exported plan as a manual import.
pub fn import_plan(
    engine: &DoseEngine,
    case: &PatientCase,
    exported: &ExportedPlan,
    settings: &OptimizationSettings,
    id: PlanId,
) -> Result<Plan> {
    let times = dwell_times(case, exported)?;
    evaluate_candidate(engine, case, settings, &times, id, Provenance::ManualImport).map_err(|e| match e {
        brachynav_core::Error::Contract(m) => ServiceError::new(ErrorCode::Validation, m),
        other => other.into(),
    })
}
