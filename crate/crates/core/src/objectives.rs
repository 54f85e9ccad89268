//! Coverage, sparing and added objectives.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::case::{AimCategory, Direction, Protocol};
use crate::dv::DvValue;
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.01;

/// Objective values of one plan; all components are maximized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub lci_w: f64,
    pub lsi_w: f64,
    pub lai_w: f64,
    /// Worst coverage residual.
    pub lci: f64,
    /// Worst sparing residual.
    pub lsi: f64,
    pub in_golden_corner: bool,
}

impl ObjectiveVector {
    pub fn weighted(&self) -> [f64; 3] {
        [self.lci_w, self.lsi_w, self.lai_w]
    }
}

/// Per-aim weights, indexed like the protocol's aims. Report-only aims carry 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightState {
    pub epsilon: f64,
    pub weights: Vec<f64>,
}

fn objective_of(category: AimCategory) -> Option<usize> {
    match category {
        AimCategory::Coverage => Some(0),
        AimCategory::Sparing => Some(1),
        AimCategory::Added => Some(2),
        AimCategory::ReportOnly => None,
    }
}

impl WeightState {
    /// Base weights normalized within each objective.
    pub fn initial(protocol: &Protocol, epsilon: f64) -> WeightState {
        let mut totals = [0.0; 3];
        for a in &protocol.aims {
            if let Some(o) = objective_of(a.category) {
                totals[o] += a.weight;
            }
        }
        let weights = protocol
            .aims
            .iter()
            .map(|a| objective_of(a.category).map_or(0.0, |o| a.weight / totals[o]))
            .collect();
        WeightState { epsilon, weights }
    }
}

/// Residual of an aim; positive means the aim is met with margin.
pub fn residual(category: AimCategory, direction: Direction, value: f64, aim: f64) -> f64 {
    match (category, direction) {
        (AimCategory::Coverage, _) | (_, Direction::AtLeast) => value - aim,
        _ => aim - value,
    }
}

/// Residuals per protocol aim (`None` for report-only aims).
fn residuals(dv: &[DvValue], protocol: &Protocol) -> Result<Vec<Option<f64>>> {
    let mut out: Vec<Option<f64>> = vec![None; protocol.aims.len()];
    let mut found = vec![false; protocol.aims.len()];
    for row in dv {
        if let Some(i) = row.aim_index {
            if i >= protocol.aims.len() {
                return Err(Error::contract(format!("DV row for unknown aim {i}")));
            }
            found[i] = true;
            let a = &protocol.aims[i];
            if a.category != AimCategory::ReportOnly {
                out[i] = Some(residual(a.category, a.direction, row.comparable(), a.aim));
            }
        }
    }
    for (i, a) in protocol.aims.iter().enumerate() {
        if a.category != AimCategory::ReportOnly && !found[i] {
            return Err(Error::contract(format!("missing DV value for aim {}", a.label())));
        }
    }
    Ok(out)
}

/// Concentrates each objective's weight on its worst aim: the worst gets
/// `1 − (m−1)ε`, the rest `ε`; `t` tied worst aims share `1 − (m−t)ε` equally.
pub fn adapt_weights(dv: &[DvValue], protocol: &Protocol, state: &WeightState) -> Result<WeightState> {
    let res = residuals(dv, protocol)?;
    Ok(concentrate(protocol, &res, state.epsilon))
}

fn concentrate(protocol: &Protocol, res: &[Option<f64>], epsilon: f64) -> WeightState {
    let mut weights = vec![0.0; protocol.aims.len()];
    for o in 0..3 {
        let members: Vec<usize> = (0..protocol.aims.len())
            .filter(|&i| objective_of(protocol.aims[i].category) == Some(o))
            .collect();
        let Some(worst) = members.iter().filter_map(|&i| res[i]).reduce(f64::min) else {
            continue;
        };
        let m = members.len() as f64;
        let tied = members.iter().filter(|&&i| res[i] == Some(worst)).count() as f64;
        let top = (1.0 - (m - tied) * epsilon) / tied;
        for &i in &members {
            weights[i] = if res[i] == Some(worst) { top } else { epsilon };
        }
    }
    WeightState { epsilon, weights }
}

/// Objective vector of a DV table under the given weights.
pub fn score(dv: &[DvValue], protocol: &Protocol, weights: &WeightState) -> Result<ObjectiveVector> {
    if weights.weights.len() != protocol.aims.len() {
        return Err(Error::contract("weight vector does not match protocol"));
    }
    let res = residuals(dv, protocol)?;
    Ok(combine(protocol, &res, &weights.weights))
}

/// Adapts the weights to this DV table, then scores it.
pub fn score_adaptive(dv: &[DvValue], protocol: &Protocol, epsilon: f64) -> Result<(ObjectiveVector, WeightState)> {
    let res = residuals(dv, protocol)?;
    let w = concentrate(protocol, &res, epsilon);
    Ok((combine(protocol, &res, &w.weights), w))
}

fn combine(protocol: &Protocol, res: &[Option<f64>], weights: &[f64]) -> ObjectiveVector {
    // Summed in label order so the result does not depend on aim order.
    let mut order: Vec<usize> = (0..protocol.aims.len()).filter(|&i| res[i].is_some()).collect();
    let labels: Vec<String> = protocol.aims.iter().map(|a| a.label()).collect();
    order.sort_by(|&a, &b| labels[a].cmp(&labels[b]));
    let mut sums = [0.0; 3];
    let mut worst = [f64::INFINITY; 3];
    for i in order {
        let o = objective_of(protocol.aims[i].category).expect("report-only aims have no residual");
        let r = res[i].expect("filtered");
        sums[o] += weights[i] * r;
        worst[o] = worst[o].min(r);
    }
    let (lci, lsi) = (worst[0], worst[1]);
    ObjectiveVector {
        lci_w: sums[0],
        lsi_w: sums[1],
        lai_w: sums[2],
        lci,
        lsi,
        in_golden_corner: lci >= 0.0 && lsi >= 0.0,
    }
}

/// Pareto dominance on `(lci_w, lsi_w, lai_w)`, all maximized.
pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> bool {
    dominates_values(&a.weighted(), &b.weighted())
}

pub fn dominates_values(a: &[f64; 3], b: &[f64; 3]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

/// Constraint domination; `violation` is 0 for feasible plans.
pub fn constrained_dominates(a: &ObjectiveVector, a_violation: f64, b: &ObjectiveVector, b_violation: f64) -> bool {
    match (a_violation > 0.0, b_violation > 0.0) {
        (false, true) => true,
        (true, false) => false,
        (true, true) => a_violation < b_violation,
        (false, false) => dominates(a, b),
    }
}

/// Plan with the most balanced trade-off: argmax of `min(lci, lsi)`, ties to
/// larger `lci`, then to the smaller id.
pub fn default_plan<'a, K, I>(plans: I) -> Result<K>
where
    K: Ord + Clone + 'a,
    I: IntoIterator<Item = (K, &'a ObjectiveVector)>,
{
    plans
        .into_iter()
        .max_by(|(ka, a), (kb, b)| {
            a.lci
                .min(a.lsi)
                .total_cmp(&b.lci.min(b.lsi))
                .then(a.lci.total_cmp(&b.lci))
                .then_with(|| kb.cmp(ka))
        })
        .map(|(k, _)| k)
        .ok_or_else(|| Error::contract("default plan of an empty plan set"))
}

/// Orders plans for the plan list: Golden Corner first, then by `min(lci, lsi)` descending.
pub fn balance_order(a: &ObjectiveVector, b: &ObjectiveVector) -> Ordering {
    b.in_golden_corner
        .cmp(&a.in_golden_corner)
        .then(b.lci.min(b.lsi).total_cmp(&a.lci.min(a.lsi)))
}
