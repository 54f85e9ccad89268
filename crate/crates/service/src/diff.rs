//! Pairwise plan comparison.

use serde::{Deserialize, Serialize};

use brachynav_core::case::{AimCategory, Direction, PatientCase};
use brachynav_core::dose::{DoseEngine, DoseGrid, SliceSpec};
use brachynav_core::dv::DvValue;
use brachynav_core::optimizer::{Plan, PlanId};

use crate::error::{ErrorCode, Result, ServiceError};
use crate::session::Session;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Better {
    Left,
    Right,
    Tie,
}

impl Better {
    pub fn swapped(self) -> Better {
        match self {
            Better::Left => Better::Right,
            Better::Right => Better::Left,
            Better::Tie => Better::Tie,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    pub label: String,
    pub category: AimCategory,
    pub direction: Direction,
    /// Physical values (Gy per fraction, or cm³ for volume metrics).
    pub left: f64,
    pub right: f64,
    /// `right − left`.
    pub difference_physical: f64,
    pub left_eqd2: Option<f64>,
    pub right_eqd2: Option<f64>,
    pub better: Better,
}

/// Signed per-cell difference `right − left`, with both source grids kept for
/// hover readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDiff {
    pub left: DoseGrid,
    pub right: DoseGrid,
    pub difference_gy: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDiff {
    pub left_id: PlanId,
    pub right_id: PlanId,
    pub dv_table: Vec<DiffRow>,
    pub grid_diff: Option<GridDiff>,
}

/// Which side a row favors. Report-only rows never favor a side.
pub fn better(category: AimCategory, direction: Direction, left: f64, right: f64) -> Better {
    if category == AimCategory::ReportOnly || left == right {
        return Better::Tie;
    }
    let right_higher = right > left;
    match (direction, right_higher) {
        (Direction::AtLeast, true) | (Direction::AtMost, false) => Better::Right,
        _ => Better::Left,
    }
}

fn row(l: &DvValue, r: &DvValue) -> DiffRow {
    DiffRow {
        label: l.label.clone(),
        category: l.category,
        direction: l.direction,
        left: l.physical,
        right: r.physical,
        difference_physical: r.physical - l.physical,
        left_eqd2: l.eqd2_total,
        right_eqd2: r.eqd2_total,
        better: better(l.category, l.direction, l.physical, r.physical),
    }
}

/// Difference of two plans evaluated on the same case and protocol.
pub fn diff_plans(
    engine: &DoseEngine,
    case: &PatientCase,
    left: &Plan,
    right: &Plan,
    slice: Option<&SliceSpec>,
) -> Result<PlanDiff> {
    let mut dv_table = Vec::with_capacity(left.dv_values.len());
    for l in &left.dv_values {
        let r = right
            .dv_values
            .iter()
            .find(|r| r.label == l.label)
            .ok_or_else(|| {
                ServiceError::new(
                    ErrorCode::Precondition,
                    format!("plan {} has no value for {}", right.id, l.label),
                )
            })?;
        dv_table.push(row(l, r));
    }
    if right.dv_values.len() != left.dv_values.len() {
        return Err(ServiceError::new(
            ErrorCode::Precondition,
            "plans were evaluated under different protocols",
        ));
    }
    let grid_diff = match slice {
        None => None,
        Some(spec) => {
            let l = engine.render_slice(case, &left.dwell_times, spec)?;
            let r = engine.render_slice(case, &right.dwell_times, spec)?;
            let difference_gy = l.dose_gy.iter().zip(&r.dose_gy).map(|(a, b)| b - a).collect();
            Some(GridDiff {
                left: l,
                right: r,
                difference_gy,
            })
        }
    };
    Ok(PlanDiff {
        left_id: left.id,
        right_id: right.id,
        dv_table,
        grid_diff,
    })
}

/// Session-level diff: both plans must be favorites.
pub fn compute_diff(
    engine: &DoseEngine,
    session: &Session,
    left: PlanId,
    right: PlanId,
    slice: Option<&SliceSpec>,
) -> Result<PlanDiff> {
    let state = &session.state;
    let l = state.require_plan(left)?;
    let r = state.require_plan(right)?;
    for id in [left, right] {
        if !state.favorites.contains(&id) {
            return Err(ServiceError::new(
                ErrorCode::Precondition,
                format!("plan {id} must be marked as favorite before it can be compared"),
            ));
        }
    }
    diff_plans(engine, &session.case, l, r, slice)
}
