use serde::{Deserialize, Serialize};

use crate::case::{CatheterGroup, CatheterKind, PatientCase};
use crate::{Error, Result};

use super::OptimizationSettings;

/// Share bounds of a catheter group in total treatment time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionBounds {
    pub min: f64,
    pub max: f64,
}

impl FractionBounds {
    pub const UNCONSTRAINED: FractionBounds = FractionBounds { min: 0.0, max: 1.0 };

    pub fn at_most(max: f64) -> Self {
        FractionBounds { min: 0.0, max }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if !ok(self.min) {
            return Err(Error::validation(format!("{field}.min"), "must be in [0, 1]"));
        }
        if !ok(self.max) {
            return Err(Error::validation(format!("{field}.max"), "must be in [0, 1]"));
        }
        if self.min > self.max {
            return Err(Error::validation(field, "min must not exceed max"));
        }
        Ok(())
    }

    fn is_trivial(&self) -> bool {
        self.min <= 0.0 && self.max >= 1.0
    }
}

/// Replacement maximum for one dwell position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxTimeOverride {
    pub catheter: u32,
    pub position: usize,
    pub max_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct GroupBound {
    members: Vec<usize>,
    bounds: FractionBounds,
    /// Whether any member can hold time; lower bounds of empty groups are ignored.
    usable: bool,
}

/// Box and contribution constraints on flat dwell-time vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraints {
    /// Effective maximum per dwell; 0 for inactive or disabled positions.
    pub max_time_s: Vec<f64>,
    pub min_time_s: f64,
    groups: Vec<GroupBound>,
}

/// Outcome of [`Constraints::repair_with_report`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RepairReport {
    /// Group rescaling steps taken.
    pub iterations: usize,
    /// True when the constraints could not be met and the plan was zeroed.
    pub fallback: bool,
}

const MAX_REPAIR_ITERATIONS: usize = 50;
const SHARE_MARGIN: f64 = 1e-9;

impl Constraints {
    pub fn new(case: &PatientCase, settings: &OptimizationSettings) -> Result<Constraints> {
        settings.validate()?;
        let mut max = case.dwell_mask.effective_max_flat();
        for (i, o) in settings.max_time_overrides.iter().enumerate() {
            if !(o.max_time_s >= 0.0) || !o.max_time_s.is_finite() {
                return Err(Error::validation(
                    format!("max_time_overrides[{i}].max_time_s"),
                    "must be a finite number ≥ 0",
                ));
            }
            let j = case.flat_index(o.catheter, o.position).ok_or_else(|| {
                Error::validation(
                    format!("max_time_overrides[{i}]"),
                    format!("no dwell position {} on catheter {}", o.position, o.catheter),
                )
            })?;
            // Inactive positions stay at zero whatever the override says.
            if max[j] > 0.0 || o.max_time_s == 0.0 {
                max[j] = o.max_time_s;
            }
        }
        let min_time_s = case.dwell_mask.min_time_s;
        let usable = |j: usize| max[j] > 0.0 && max[j] >= min_time_s;
        if !(0..max.len()).any(usable) {
            return Err(Error::config("no usable dwell positions"));
        }

        let refs = case.dwell_refs();
        let mut groups = Vec::new();
        let mut push = |members: Vec<usize>, bounds: FractionBounds| {
            if !bounds.is_trivial() {
                let usable = members.iter().any(|&j| usable(j));
                groups.push(GroupBound { members, bounds, usable });
            }
        };
        for (ci, cat) in case.catheters.iter().enumerate() {
            if cat.kind == CatheterKind::Needle {
                let members = (0..refs.len()).filter(|&j| refs[j].catheter == ci).collect();
                push(members, settings.single_needle_fraction);
            }
        }
        let groups_of = case.dwell_groups();
        let all_needles: Vec<usize> = (0..refs.len())
            .filter(|&j| groups_of[j] == CatheterGroup::Needles)
            .collect();
        if !all_needles.is_empty() {
            push(all_needles, settings.total_needle_fraction);
        }
        let ovoids: Vec<usize> = (0..refs.len())
            .filter(|&j| matches!(groups_of[j], CatheterGroup::OvoidLeft | CatheterGroup::OvoidRight))
            .collect();
        if !ovoids.is_empty() {
            push(ovoids, settings.ovoid_fraction);
        }
        Ok(Constraints {
            max_time_s: max,
            min_time_s,
            groups,
        })
    }

    pub fn dwell_count(&self) -> usize {
        self.max_time_s.len()
    }

    pub fn is_usable(&self, j: usize) -> bool {
        self.max_time_s[j] > 0.0 && self.max_time_s[j] >= self.min_time_s
    }

    /// Flat indices of usable dwells in increasing order.
    pub fn usable_dwells(&self) -> Vec<usize> {
        (0..self.dwell_count()).filter(|&j| self.is_usable(j)).collect()
    }

    /// Clamps and snaps one time to `{0} ∪ [min, max]`.
    pub fn snap(&self, j: usize, t: f64) -> f64 {
        if !self.is_usable(j) || !(t > 0.0) {
            return 0.0;
        }
        let t = t.min(self.max_time_s[j]);
        if t >= self.min_time_s {
            t
        } else if t >= 0.5 * self.min_time_s {
            self.min_time_s
        } else {
            0.0
        }
    }

    /// True when every time is in its box and every share bound holds.
    pub fn is_satisfied(&self, times: &[f64]) -> bool {
        times.len() == self.dwell_count()
            && times.iter().enumerate().all(|(j, &t)| self.snap(j, t) == t)
            && self.first_violation(times).is_none()
    }

    /// First violated share bound: (group, true for an upper-bound violation).
    fn first_violation(&self, x: &[f64]) -> Option<(usize, bool)> {
        let total: f64 = x.iter().sum();
        if total == 0.0 {
            return None;
        }
        self.groups.iter().enumerate().find_map(|(g, gb)| {
            let share: f64 = gb.members.iter().map(|&j| x[j]).sum();
            if share > gb.bounds.max * total {
                Some((g, true))
            } else if gb.usable && share < gb.bounds.min * total {
                Some((g, false))
            } else {
                None
            }
        })
    }

    pub fn repair(&self, times: &[f64]) -> Vec<f64> {
        self.repair_with_report(times).0
    }

    /// Projects `times` onto the constraint set.
    ///
    /// Times are clamped to their box and snapped to `{0} ∪ [min, max]`; each
    /// violated share bound is then fixed by rescaling the offending group to
    /// just inside the bound. A plan that cannot be fixed becomes all zeros.
    pub fn repair_with_report(&self, times: &[f64]) -> (Vec<f64>, RepairReport) {
        assert_eq!(times.len(), self.dwell_count(), "dwell time vector length mismatch");
        let mut x: Vec<f64> = times.iter().enumerate().map(|(j, &t)| self.snap(j, t)).collect();
        for iterations in 0..=MAX_REPAIR_ITERATIONS {
            let Some((g, upper)) = self.first_violation(&x) else {
                return (
                    x,
                    RepairReport {
                        iterations,
                        fallback: false,
                    },
                );
            };
            let gb = &self.groups[g];
            let total: f64 = x.iter().sum();
            let share: f64 = gb.members.iter().map(|&j| x[j]).sum();
            let rest = total - share;
            if upper {
                let c = gb.bounds.max;
                let target = c * rest / (1.0 - c) * (1.0 - SHARE_MARGIN);
                let f = if share > 0.0 { target / share } else { 0.0 };
                for &j in &gb.members {
                    let v = x[j] * f;
                    x[j] = if v >= self.min_time_s && v > 0.0 { v } else { 0.0 };
                }
            } else {
                let m = gb.bounds.min;
                if m >= 1.0 {
                    for j in 0..x.len() {
                        if !gb.members.contains(&j) {
                            x[j] = 0.0;
                        }
                    }
                    if share == 0.0 {
                        for &j in &gb.members {
                            if self.is_usable(j) {
                                x[j] = self.min_time_s.max(f64::MIN_POSITIVE);
                            }
                        }
                    }
                } else if share == 0.0 {
                    for &j in &gb.members {
                        if self.is_usable(j) {
                            x[j] = self.min_time_s.max(f64::MIN_POSITIVE);
                        }
                    }
                } else {
                    let target = m * rest / (1.0 - m) * (1.0 + SHARE_MARGIN);
                    let f = target / share;
                    for &j in &gb.members {
                        x[j] = (x[j] * f).min(self.max_time_s[j]);
                    }
                }
            }
        }
        (
            vec![0.0; x.len()],
            RepairReport {
                iterations: MAX_REPAIR_ITERATIONS,
                fallback: true,
            },
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupShare {
    pub seconds: f64,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatheterContribution {
    pub catheter: u32,
    pub kind: CatheterKind,
    pub seconds: f64,
    pub percent: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupContributions {
    pub ovoid_left: GroupShare,
    pub ovoid_right: GroupShare,
    pub intrauterine: GroupShare,
    pub needles: GroupShare,
}

/// Time per catheter and per applicator group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionReport {
    pub total_s: f64,
    pub zero_total: bool,
    pub per_catheter: Vec<CatheterContribution>,
    pub per_group: GroupContributions,
}

fn percent(part: f64, total: f64) -> f64 {
    if total > 0.0 {
        100.0 * part / total
    } else {
        0.0
    }
}

pub fn contribution_report(case: &PatientCase, times: &[f64]) -> Result<ContributionReport> {
    if times.len() != case.dwell_count() {
        return Err(Error::contract("dwell time vector length mismatch"));
    }
    let mut offset = 0;
    let mut per_catheter = Vec::with_capacity(case.catheters.len());
    let mut groups = GroupContributions::default();
    for cat in &case.catheters {
        let n = cat.dwell_positions.len();
        let seconds: f64 = times[offset..offset + n].iter().sum();
        offset += n;
        per_catheter.push(CatheterContribution {
            catheter: cat.id,
            kind: cat.kind,
            seconds,
            percent: 0.0,
        });
        let g = match cat.kind.group() {
            CatheterGroup::OvoidLeft => &mut groups.ovoid_left,
            CatheterGroup::OvoidRight => &mut groups.ovoid_right,
            CatheterGroup::Intrauterine => &mut groups.intrauterine,
            CatheterGroup::Needles => &mut groups.needles,
        };
        g.seconds += seconds;
    }
    let total_s: f64 = per_catheter.iter().map(|c| c.seconds).sum();
    for c in &mut per_catheter {
        c.percent = percent(c.seconds, total_s);
    }
    for g in [
        &mut groups.ovoid_left,
        &mut groups.ovoid_right,
        &mut groups.intrauterine,
        &mut groups.needles,
    ] {
        g.percent = percent(g.seconds, total_s);
    }
    Ok(ContributionReport {
        total_s,
        zero_total: total_s == 0.0,
        per_catheter,
        per_group: groups,
    })
}

/// Needle share of the total time, 0 for an all-zero plan.
pub fn needle_share(case: &PatientCase, times: &[f64]) -> f64 {
    let groups = case.dwell_groups();
    let total: f64 = times.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let needles: f64 = times
        .iter()
        .zip(&groups)
        .filter(|(_, g)| **g == CatheterGroup::Needles)
        .map(|(t, _)| t)
        .sum();
    needles / total
}
