use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dose-volume metric of an aim.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Metric {
    /// Minimum dose to the hottest `v` cm³.
    DoseToVolume(f64),
    /// Minimum dose to the hottest `v` % of the ROI.
    DoseToPercent(f64),
    /// Volume in cm³ receiving at least `d` Gy (physical, per fraction).
    VolumeAtDose(f64),
    /// Dose at a labelled reference point.
    PointDose,
}

impl Metric {
    pub fn kind(&self) -> MetricKind {
        match self {
            Metric::DoseToVolume(_) => MetricKind::DVolume,
            Metric::DoseToPercent(_) => MetricKind::DPercent,
            Metric::VolumeAtDose(_) => MetricKind::VDose,
            Metric::PointDose => MetricKind::DPoint,
        }
    }

    pub fn param(&self) -> Option<f64> {
        match *self {
            Metric::DoseToVolume(v) | Metric::DoseToPercent(v) | Metric::VolumeAtDose(v) => Some(v),
            Metric::PointDose => None,
        }
    }

    /// Volume metrics are compared in cm³ rather than EQD2.
    pub fn is_volume(&self) -> bool {
        matches!(self, Metric::VolumeAtDose(_))
    }

    fn identity(&self) -> (MetricKind, u64) {
        (self.kind(), self.param().map_or(0, f64::to_bits))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::DoseToVolume(v) => write!(f, "D{v}cm3"),
            Metric::DoseToPercent(v) => write!(f, "D{v}%"),
            Metric::VolumeAtDose(d) => write!(f, "V{d}Gy"),
            Metric::PointDose => write!(f, "Dpt"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "D_volume")]
    DVolume,
    #[serde(rename = "D_percent")]
    DPercent,
    #[serde(rename = "V_dose")]
    VDose,
    #[serde(rename = "D_point")]
    DPoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtLeast,
    AtMost,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AimCategory {
    Coverage,
    Sparing,
    Added,
    ReportOnly,
}

/// One dose-volume aim. `aim` and `limit` are total EQD2 in Gy, or cm³ for
/// volume metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AimRecord", into = "AimRecord")]
pub struct DoseAim {
    pub roi: String,
    pub metric: Metric,
    pub direction: Direction,
    pub aim: f64,
    pub limit: Option<f64>,
    pub category: AimCategory,
    pub weight: f64,
}

impl DoseAim {
    pub fn label(&self) -> String {
        format!("{} {}", self.roi, self.metric)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("aims[{}].{name}", self.label());
        if self.roi.is_empty() {
            return Err(Error::validation("aims.roi", "empty ROI name"));
        }
        match self.metric {
            Metric::DoseToVolume(v) | Metric::DoseToPercent(v) if !(v > 0.0) => {
                return Err(Error::validation(field("value_param"), "volume must be positive"));
            }
            Metric::DoseToPercent(v) if v > 100.0 => {
                return Err(Error::validation(field("value_param"), "percent must be ≤ 100"));
            }
            Metric::VolumeAtDose(d) if !(d >= 0.0) => {
                return Err(Error::validation(field("value_param"), "dose must be ≥ 0"));
            }
            Metric::PointDose if self.category != AimCategory::ReportOnly => {
                return Err(Error::validation(
                    field("category"),
                    "point-dose metrics are report_only",
                ));
            }
            _ => {}
        }
        if !self.aim.is_finite() {
            return Err(Error::validation(field("aim_eqd2"), "must be finite"));
        }
        if !(self.weight > 0.0) || !self.weight.is_finite() {
            return Err(Error::validation(field("weight"), "must be positive"));
        }
        if let Some(limit) = self.limit {
            let ok = match self.direction {
                Direction::AtLeast => limit <= self.aim,
                Direction::AtMost => limit >= self.aim,
            };
            if !ok || !limit.is_finite() {
                return Err(Error::validation(
                    field("limit_eqd2"),
                    "limit must be less strict than the aim",
                ));
            }
        }
        Ok(())
    }
}

/// On-disk shape of an aim.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct AimRecord {
    roi: String,
    metric: MetricKind,
    #[serde(default)]
    value_param: Option<f64>,
    direction: Direction,
    aim_eqd2: f64,
    #[serde(default)]
    limit_eqd2: Option<f64>,
    category: AimCategory,
    weight: f64,
}

impl TryFrom<AimRecord> for DoseAim {
    type Error = String;

    fn try_from(r: AimRecord) -> Result<Self, String> {
        let param = || {
            r.value_param
                .ok_or_else(|| format!("aim {} {:?}: missing value_param", r.roi, r.metric))
        };
        let metric = match r.metric {
            MetricKind::DVolume => Metric::DoseToVolume(param()?),
            MetricKind::DPercent => Metric::DoseToPercent(param()?),
            MetricKind::VDose => Metric::VolumeAtDose(param()?),
            MetricKind::DPoint => Metric::PointDose,
        };
        Ok(DoseAim {
            roi: r.roi,
            metric,
            direction: r.direction,
            aim: r.aim_eqd2,
            limit: r.limit_eqd2,
            category: r.category,
            weight: r.weight,
        })
    }
}

impl From<DoseAim> for AimRecord {
    fn from(a: DoseAim) -> Self {
        AimRecord {
            roi: a.roi,
            metric: a.metric.kind(),
            value_param: a.metric.param(),
            direction: a.direction,
            aim_eqd2: a.aim,
            limit_eqd2: a.limit,
            category: a.category,
            weight: a.weight,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub name: String,
    pub aims: Vec<DoseAim>,
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        for a in &self.aims {
            a.validate()?;
        }
        let has = |c| self.aims.iter().any(|a| a.category == c);
        if !has(AimCategory::Coverage) {
            return Err(Error::validation("protocol.aims", "needs at least one coverage aim"));
        }
        if !has(AimCategory::Sparing) {
            return Err(Error::validation("protocol.aims", "needs at least one sparing aim"));
        }
        let mut seen = HashSet::new();
        for a in &self.aims {
            if !seen.insert((a.roi.as_str(), a.metric.identity())) {
                return Err(Error::validation(
                    "protocol.aims",
                    format!("duplicate aim {}", a.label()),
                ));
            }
        }
        Ok(())
    }

    pub fn aims_in(&self, category: AimCategory) -> impl Iterator<Item = (usize, &DoseAim)> {
        self.aims
            .iter()
            .enumerate()
            .filter(move |(_, a)| a.category == category)
    }

    /// Default cervix protocol.
    ///
    /// Only the CTV_HR D90% aim (90 Gy EQD2) is taken from clinical practice;
    /// every other number is a NON-CLINICAL placeholder meant to be edited.
    pub fn default_cervix() -> Protocol {
        use AimCategory::*;
        use Direction::*;
        let aim = |roi: &str, metric, direction, aim, limit, category| DoseAim {
            roi: roi.to_string(),
            metric,
            direction,
            aim,
            limit,
            category,
            weight: 1.0,
        };
        Protocol {
            name: "cervix-default (non-clinical placeholders)".to_string(),
            aims: vec![
                aim("CTV_HR", Metric::DoseToPercent(90.0), AtLeast, 90.0, Some(85.0), Coverage),
                aim("CTV_HR", Metric::DoseToPercent(98.0), AtLeast, 75.0, Some(70.0), Coverage),
                aim("GTV_res", Metric::DoseToPercent(98.0), AtLeast, 95.0, Some(90.0), Coverage),
                aim("CTV_IR", Metric::DoseToPercent(98.0), AtLeast, 65.0, Some(60.0), Coverage),
                aim("bladder", Metric::DoseToVolume(2.0), AtMost, 80.0, Some(90.0), Sparing),
                aim("rectum", Metric::DoseToVolume(2.0), AtMost, 65.0, Some(75.0), Sparing),
                aim("sigmoid", Metric::DoseToVolume(2.0), AtMost, 70.0, Some(75.0), Sparing),
                aim("bowel", Metric::DoseToVolume(2.0), AtMost, 70.0, Some(75.0), Sparing),
                aim("CTV_HR", Metric::DoseToPercent(50.0), AtMost, 140.0, None, Added),
                aim("CTV_HR", Metric::VolumeAtDose(14.0), AtMost, 12.0, None, Added),
                aim("A_left", Metric::PointDose, AtLeast, 0.0, None, ReportOnly),
                aim("A_right", Metric::PointDose, AtLeast, 0.0, None, ReportOnly),
            ],
        }
    }
}
