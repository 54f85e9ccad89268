//! Dose-volume indices, EQD2 and aim classification.

use std::borrow::Cow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::case::{AimCategory, Direction, DoseAim, Metric, PatientCase, Prescription, RoiRole};
use crate::dose::{DoseEngine, DoseMatrix};
use crate::geometry::Vec3;
use crate::{Error, Result};

/// Total number of points for final (display) evaluation, split over ROIs.
pub const FINAL_TOTAL_POINTS: usize = 500_000;
/// Seed of the final-evaluation point sets; independent of any case seed.
pub const FINAL_POINTS_SEED: u64 = 0x00F1_4A15_EED5;

/// Equivalent dose in 2 Gy fractions of `n` fractions of `d` Gy.
pub fn eqd2(d: f64, n: u32, alpha_beta: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::contract(format!("dose per fraction {d} must be ≥ 0")));
    }
    if n == 0 {
        return Err(Error::contract("number of fractions must be ≥ 1"));
    }
    if !(alpha_beta > 0.0) {
        return Err(Error::contract("alpha/beta must be positive"));
    }
    Ok(n as f64 * d * (alpha_beta + d) / (alpha_beta + 2.0))
}

/// Per-fraction dose whose `n`-fraction EQD2 plus `offset` equals `total`.
/// Returns 0 when `total ≤ offset`.
pub fn inverse_eqd2(total: f64, offset: f64, n: u32, alpha_beta: f64) -> f64 {
    let e = total - offset;
    if !(e > 0.0) {
        return 0.0;
    }
    let c = e * (alpha_beta + 2.0) / n as f64;
    0.5 * (-alpha_beta + (alpha_beta * alpha_beta + 4.0 * c).sqrt())
}

/// Volume argument of a D index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VolumeSpec {
    Percent(f64),
    Cm3(f64),
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Rank `k` (1-based, from the hottest point) used by [`d_index`].
pub fn d_rank(n_points: usize, spec: VolumeSpec, roi_volume_cm3: f64) -> Result<usize> {
    if n_points == 0 {
        return Err(Error::contract("empty dose list"));
    }
    let n = n_points as f64;
    let raw = match spec {
        VolumeSpec::Percent(v) => {
            if !(v > 0.0 && v <= 100.0) {
                return Err(Error::contract(format!("D{v}% outside (0, 100]")));
            }
            v * n / 100.0
        }
        VolumeSpec::Cm3(v) => {
            if !(v > 0.0 && v <= roi_volume_cm3) {
                return Err(Error::contract(format!(
                    "D{v}cm3 outside (0, {roi_volume_cm3}]"
                )));
            }
            v * n / roi_volume_cm3
        }
    };
    Ok((round_half_up(raw) as usize).clamp(1, n_points))
}

/// Minimum dose to the hottest `v` of the ROI: the k-th largest dose.
pub fn d_index(doses: &[f64], spec: VolumeSpec, roi_volume_cm3: f64) -> Result<f64> {
    let mut buf = doses.to_vec();
    d_index_in_place(&mut buf, spec, roi_volume_cm3)
}

/// [`d_index`] that reorders `doses` instead of copying.
pub fn d_index_in_place(doses: &mut [f64], spec: VolumeSpec, roi_volume_cm3: f64) -> Result<f64> {
    let k = d_rank(doses.len(), spec, roi_volume_cm3)?;
    let (_, kth, _) = doses.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    Ok(*kth)
}

/// Volume in cm³ receiving at least `d_gy`.
pub fn v_index(doses: &[f64], d_gy: f64, roi_volume_cm3: f64) -> Result<f64> {
    if !(d_gy >= 0.0) {
        return Err(Error::contract(format!("dose level {d_gy} must be ≥ 0")));
    }
    if doses.is_empty() {
        return Err(Error::contract("empty dose list"));
    }
    let count = doses.iter().filter(|&&d| d >= d_gy).count();
    Ok(roi_volume_cm3 * count as f64 / doses.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AimStatus {
    AimMet,
    LimitMet,
    NotMet,
    ReportOnly,
}

impl AimStatus {
    /// Status colour identifier used by the viewer.
    pub fn color(self) -> Option<&'static str> {
        match self {
            AimStatus::AimMet => Some("green"),
            AimStatus::LimitMet => Some("orange"),
            AimStatus::NotMet => Some("red"),
            AimStatus::ReportOnly => None,
        }
    }

    pub fn marker(self) -> &'static str {
        match self {
            AimStatus::AimMet => "[ok]",
            AimStatus::LimitMet => "[~]",
            AimStatus::NotMet => "[x]",
            AimStatus::ReportOnly => "",
        }
    }
}

/// Inclusive comparison of a value against an aim's aim and limit.
pub fn classify(aim: &DoseAim, value: f64) -> AimStatus {
    if aim.category == AimCategory::ReportOnly {
        return AimStatus::ReportOnly;
    }
    let meets = |threshold: f64| match aim.direction {
        Direction::AtLeast => value >= threshold,
        Direction::AtMost => value <= threshold,
    };
    if meets(aim.aim) {
        AimStatus::AimMet
    } else if aim.limit.is_some_and(meets) {
        AimStatus::LimitMet
    } else {
        AimStatus::NotMet
    }
}

/// One row of the DV table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DvValue {
    /// Index into the protocol's aims; `None` for extra reference-point rows.
    pub aim_index: Option<usize>,
    pub label: String,
    pub category: AimCategory,
    pub direction: Direction,
    /// Per-fraction physical dose in Gy, or volume in cm³ for V metrics.
    pub physical: f64,
    /// Total EQD2 including EBRT; absent for volume metrics.
    pub eqd2_total: Option<f64>,
    pub aim: Option<f64>,
    pub limit: Option<f64>,
    /// Per-fraction physical dose that reaches the aim, for dose metrics.
    pub aim_physical: Option<f64>,
    pub status: AimStatus,
}

impl DvValue {
    /// Value compared against the aim: total EQD2, or cm³ for volume metrics.
    pub fn comparable(&self) -> f64 {
        self.eqd2_total.unwrap_or(self.physical)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointCount {
    /// The case's stored sample points.
    #[default]
    Optimization,
    /// [`FINAL_TOTAL_POINTS`] fresh points from [`FINAL_POINTS_SEED`].
    Final,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalContext {
    pub n_fractions: u32,
    pub ebrt_eqd2_target_gy: f64,
    pub ebrt_eqd2_oar_gy: f64,
    pub alpha_beta_target: f64,
    pub alpha_beta_oar: f64,
    pub point_count: PointCount,
}

impl EvalContext {
    pub fn new(p: &Prescription, point_count: PointCount) -> Result<EvalContext> {
        p.validate()?;
        let d = p.ebrt_dose_gy / p.ebrt_n_fractions as f64;
        Ok(EvalContext {
            n_fractions: p.n_fractions,
            ebrt_eqd2_target_gy: eqd2(d, p.ebrt_n_fractions, p.alpha_beta_target)?,
            ebrt_eqd2_oar_gy: eqd2(d, p.ebrt_n_fractions, p.alpha_beta_oar)?,
            alpha_beta_target: p.alpha_beta_target,
            alpha_beta_oar: p.alpha_beta_oar,
            point_count,
        })
    }

    pub fn for_case(case: &PatientCase, point_count: PointCount) -> Result<EvalContext> {
        Self::new(&case.prescription, point_count)
    }

    fn role_params(&self, role: RoiRole) -> (f64, f64) {
        match role {
            RoiRole::Target => (self.ebrt_eqd2_target_gy, self.alpha_beta_target),
            RoiRole::Oar => (self.ebrt_eqd2_oar_gy, self.alpha_beta_oar),
        }
    }

    pub fn total_eqd2(&self, physical: f64, role: RoiRole) -> Result<f64> {
        let (ebrt, ab) = self.role_params(role);
        Ok(ebrt + eqd2(physical, self.n_fractions, ab)?)
    }
}

/// Evaluation point set of every ROI, in case ROI order.
pub fn point_sets(case: &PatientCase, count: PointCount) -> Vec<Cow<'_, [Vec3]>> {
    match count {
        PointCount::Optimization => case
            .rois
            .iter()
            .map(|r| Cow::Borrowed(r.sample_points.as_slice()))
            .collect(),
        PointCount::Final => {
            let n = case.rois.len();
            case.rois
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let share = FINAL_TOTAL_POINTS / n + usize::from(i < FINAL_TOTAL_POINTS % n);
                    let mut rng = ChaCha8Rng::seed_from_u64(FINAL_POINTS_SEED);
                    rng.set_stream(1 + i as u64);
                    Cow::Owned((0..share).map(|_| r.shape.sample(&mut rng)).collect())
                })
                .collect()
        }
    }
}

/// ROI index (or A-point index) an aim reads from.
#[derive(Clone, Copy, Debug)]
enum Source {
    Roi(usize),
    Point(usize),
}

fn resolve(case: &PatientCase, aim: &DoseAim) -> Result<Source> {
    match aim.metric {
        Metric::PointDose => case
            .a_points
            .iter()
            .position(|p| p.label == aim.roi)
            .map(Source::Point),
        _ => case.rois.iter().position(|r| r.name == aim.roi).map(Source::Roi),
    }
    .ok_or_else(|| Error::config(format!("aim {} references a missing ROI or point", aim.label())))
}

/// ROIs referenced by at least one aim.
fn needed_rois(case: &PatientCase) -> Result<Vec<bool>> {
    let mut need = vec![false; case.rois.len()];
    for aim in &case.protocol.aims {
        if let Source::Roi(i) = resolve(case, aim)? {
            need[i] = true;
        }
    }
    Ok(need)
}

/// Builds the DV table from per-ROI and per-point doses. ROI buffers are reordered.
fn dv_table(
    case: &PatientCase,
    ctx: &EvalContext,
    roi_doses: &mut [Option<Vec<f64>>],
    point_doses: &[f64],
) -> Result<Vec<DvValue>> {
    let mut rows = Vec::with_capacity(case.protocol.aims.len() + case.a_points.len());
    for (ai, aim) in case.protocol.aims.iter().enumerate() {
        let source = resolve(case, aim)?;
        let role = match source {
            Source::Roi(i) => case.rois[i].role,
            Source::Point(_) => RoiRole::Target,
        };
        let physical = match (source, aim.metric) {
            (Source::Point(p), _) => point_doses[p],
            (Source::Roi(i), metric) => {
                let vol = case.rois[i].volume_cm3;
                let doses = roi_doses[i]
                    .as_mut()
                    .expect("doses computed for every referenced ROI");
                match metric {
                    Metric::DoseToPercent(v) => d_index_in_place(doses, VolumeSpec::Percent(v), vol)?,
                    Metric::DoseToVolume(v) => d_index_in_place(doses, VolumeSpec::Cm3(v), vol)?,
                    Metric::VolumeAtDose(d) => v_index(doses, d, vol)?,
                    Metric::PointDose => unreachable!("point metrics resolve to points"),
                }
            }
        };
        let (eqd2_total, aim_physical) = if aim.metric.is_volume() {
            (None, None)
        } else {
            let (ebrt, ab) = ctx.role_params(role);
            (
                Some(ctx.total_eqd2(physical, role)?),
                (aim.category != AimCategory::ReportOnly)
                    .then(|| inverse_eqd2(aim.aim, ebrt, ctx.n_fractions, ab)),
            )
        };
        let comparable = eqd2_total.unwrap_or(physical);
        rows.push(DvValue {
            aim_index: Some(ai),
            label: aim.label(),
            category: aim.category,
            direction: aim.direction,
            physical,
            eqd2_total,
            aim: (aim.category != AimCategory::ReportOnly).then_some(aim.aim),
            limit: aim.limit,
            aim_physical,
            status: classify(aim, comparable),
        });
    }
    // Reference points without a protocol row still get a report row.
    for (pi, p) in case.a_points.iter().enumerate() {
        let listed = case
            .protocol
            .aims
            .iter()
            .any(|a| a.metric == Metric::PointDose && a.roi == p.label);
        if !listed {
            let physical = point_doses[pi];
            rows.push(DvValue {
                aim_index: None,
                label: format!("{} {}", p.label, Metric::PointDose),
                category: AimCategory::ReportOnly,
                direction: Direction::AtLeast,
                physical,
                eqd2_total: Some(ctx.total_eqd2(physical, RoiRole::Target)?),
                aim: None,
                limit: None,
                aim_physical: None,
                status: AimStatus::ReportOnly,
            });
        }
    }
    Ok(rows)
}

/// DV table of a plan: one row per protocol aim plus any unlisted reference points.
pub fn evaluate_plan(engine: &DoseEngine, case: &PatientCase, times: &[f64], ctx: &EvalContext) -> Result<Vec<DvValue>> {
    DoseEngine::check_times(case, times)?;
    let need = needed_rois(case)?;
    let sets = point_sets(case, ctx.point_count);
    let mut roi_doses: Vec<Option<Vec<f64>>> = sets
        .iter()
        .zip(&need)
        .map(|(pts, &n)| n.then(|| engine.dose_unchecked(case, times, pts)))
        .collect();
    let a_pts: Vec<Vec3> = case.a_points.iter().map(|p| p.position).collect();
    let point_doses = engine.dose_unchecked(case, times, &a_pts);
    dv_table(case, ctx, &mut roi_doses, &point_doses)
}

/// Fast repeated evaluation on fixed point sets through dose-rate matrices.
///
/// Results are bit-identical to [`evaluate_plan`] for plans whose nonzero
/// times lie in the evaluator's dwell set.
pub struct PlanEvaluator<'a> {
    case: &'a PatientCase,
    ctx: EvalContext,
    dwells: Vec<usize>,
    rois: Vec<Option<DoseMatrix>>,
    points: DoseMatrix,
}

impl<'a> PlanEvaluator<'a> {
    pub fn new(engine: &DoseEngine, case: &'a PatientCase, ctx: EvalContext, dwells: &[usize]) -> Result<Self> {
        let mut dwells = dwells.to_vec();
        dwells.sort_unstable();
        dwells.dedup();
        if dwells.last().is_some_and(|&j| j >= case.dwell_count()) {
            return Err(Error::contract("dwell index out of range"));
        }
        let need = needed_rois(case)?;
        let sets = point_sets(case, ctx.point_count);
        let rois = sets
            .iter()
            .zip(&need)
            .map(|(pts, &n)| n.then(|| engine.matrix(case, &dwells, pts)))
            .collect();
        let a_pts: Vec<Vec3> = case.a_points.iter().map(|p| p.position).collect();
        let points = engine.matrix(case, &dwells, &a_pts);
        Ok(PlanEvaluator {
            case,
            ctx,
            dwells,
            rois,
            points,
        })
    }

    pub fn case(&self) -> &PatientCase {
        self.case
    }

    pub fn context(&self) -> &EvalContext {
        &self.ctx
    }

    pub fn dwells(&self) -> &[usize] {
        &self.dwells
    }

    pub fn evaluate(&self, times: &[f64]) -> Result<Vec<DvValue>> {
        if times.len() != self.case.dwell_count() {
            return Err(Error::contract("dwell time vector length mismatch"));
        }
        let mut roi_doses: Vec<Option<Vec<f64>>> = self
            .rois
            .iter()
            .map(|m| m.as_ref().map(|m| m.dose(times)))
            .collect();
        let point_doses = self.points.dose(times);
        dv_table(self.case, &self.ctx, &mut roi_doses, &point_doses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{generate_phantom, PhantomSpec};
    use crate::par::Parallelism;
    use proptest::prelude::*;

    #[test]
    fn eqd2_examples() {
        assert_eq!(eqd2(2.0, 1, 3.0).unwrap(), 2.0);
        assert_eq!(eqd2(2.0, 1, 10.0).unwrap(), 2.0);
        assert_eq!(eqd2(0.0, 4, 10.0).unwrap(), 0.0);
        assert!((eqd2(7.0, 4, 10.0).unwrap() - 4.0 * 7.0 * 17.0 / 12.0).abs() < 1e-12);
        assert!((eqd2(1.8, 25, 10.0).unwrap() - 44.25).abs() < 1e-12);
        assert!((eqd2(1.8, 25, 3.0).unwrap() - 43.2).abs() < 1e-12);
        assert!(eqd2(-0.1, 1, 3.0).is_err());
    }

    #[test]
    fn inverse_eqd2_round_trips() {
        for &(d, n, ab) in &[(7.0, 4, 10.0), (3.3, 4, 3.0), (0.5, 1, 10.0)] {
            let total = 44.25 + eqd2(d, n, ab).unwrap();
            assert!((inverse_eqd2(total, 44.25, n, ab) - d).abs() < 1e-12);
        }
        assert_eq!(inverse_eqd2(10.0, 44.25, 4, 10.0), 0.0);
    }

    #[test]
    fn d_and_v_index_examples() {
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(d_index(&[5.0; 17], VolumeSpec::Percent(37.0), 3.0).unwrap(), 5.0);
        assert_eq!(d_index(&ten, VolumeSpec::Percent(90.0), 10.0).unwrap(), 2.0);
        assert_eq!(d_index(&ten, VolumeSpec::Cm3(2.0), 10.0).unwrap(), 9.0);
        assert!(d_index(&ten, VolumeSpec::Cm3(11.0), 10.0).is_err());
        assert!(d_index(&ten, VolumeSpec::Percent(0.0), 10.0).is_err());
        assert!(d_index(&[], VolumeSpec::Percent(50.0), 10.0).is_err());

        let four = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(v_index(&four, 0.0, 4.0).unwrap(), 4.0);
        assert_eq!(v_index(&four, 2.5, 4.0).unwrap(), 2.0);
        assert_eq!(v_index(&four, 4.5, 4.0).unwrap(), 0.0);
        assert!(v_index(&four, -1.0, 4.0).is_err());
    }

    proptest! {
        #[test]
        fn eqd2_strictly_increasing_and_linear_in_n(d in 0.0f64..20.0, delta in 1e-3f64..5.0, n in 1u32..40, ab in 0.5f64..20.0) {
            prop_assert!(eqd2(d + delta, n, ab).unwrap() > eqd2(d, n, ab).unwrap());
            let one = eqd2(d, 1, ab).unwrap();
            prop_assert!((eqd2(d, n, ab).unwrap() - n as f64 * one).abs() <= 1e-12 * n as f64 * one.max(1.0));
        }

        #[test]
        fn v_of_d_covers_requested_volume(doses in prop::collection::vec(0.0f64..50.0, 1..400), v in 0.1f64..100.0) {
            let vol = 25.0;
            let d = d_index(&doses, VolumeSpec::Percent(v), vol).unwrap();
            let covered = v_index(&doses, d, vol).unwrap();
            let point_volume = vol / doses.len() as f64;
            prop_assert!(covered >= v / 100.0 * vol - point_volume - 1e-9);
        }
    }

    fn case() -> PatientCase {
        generate_phantom(&PhantomSpec {
            samples_per_roi: 2_000,
            ..PhantomSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_plan_statuses() {
        let c = case();
        let ctx = EvalContext::for_case(&c, PointCount::Optimization).unwrap();
        let rows = evaluate_plan(&DoseEngine::default(), &c, &vec![0.0; c.dwell_count()], &ctx).unwrap();
        assert_eq!(rows.len(), c.protocol.aims.len());
        for r in &rows {
            match r.category {
                AimCategory::Coverage => assert_eq!(r.status, AimStatus::NotMet),
                AimCategory::Sparing => assert_eq!(r.status, AimStatus::AimMet),
                AimCategory::ReportOnly => assert_eq!(r.status, AimStatus::ReportOnly),
                AimCategory::Added => {}
            }
        }
    }

    #[test]
    fn boundary_and_limit_classification() {
        let p = crate::case::Protocol::default_cervix();
        let cov = &p.aims[0];
        assert_eq!(classify(cov, cov.aim), AimStatus::AimMet);
        assert_eq!(classify(cov, cov.aim - 1e-9), AimStatus::LimitMet);
        assert_eq!(classify(cov, cov.limit.unwrap() - 1e-9), AimStatus::NotMet);
        let spar = p.aims.iter().find(|a| a.category == AimCategory::Sparing).unwrap();
        let between = 0.5 * (spar.aim + spar.limit.unwrap());
        assert_eq!(classify(spar, between), AimStatus::LimitMet);
        assert_eq!(classify(spar, spar.aim), AimStatus::AimMet);
        assert_eq!(classify(spar, spar.limit.unwrap() + 0.1), AimStatus::NotMet);
    }

    #[test]
    fn unlisted_reference_points_get_report_rows() {
        let mut c = case();
        c.protocol.aims.retain(|a| a.metric != Metric::PointDose);
        let ctx = EvalContext::for_case(&c, PointCount::Optimization).unwrap();
        let rows = evaluate_plan(&DoseEngine::default(), &c, &vec![0.0; c.dwell_count()], &ctx).unwrap();
        let extra: Vec<_> = rows.iter().filter(|r| r.aim_index.is_none()).collect();
        assert_eq!(extra.len(), 2);
        assert!(extra.iter().all(|r| r.status == AimStatus::ReportOnly));
    }

    #[test]
    fn evaluator_matches_evaluate_plan_bitwise() {
        let c = case();
        let ctx = EvalContext::for_case(&c, PointCount::Optimization).unwrap();
        let active: Vec<usize> = (0..c.dwell_count()).filter(|&j| c.dwell_mask.active_flat()[j]).collect();
        let t: Vec<f64> = (0..c.dwell_count())
            .map(|j| if active.contains(&j) { 3.0 + (j % 5) as f64 } else { 0.0 })
            .collect();
        for mode in [Parallelism::Sequential, Parallelism::Parallel] {
            let e = DoseEngine::new(Default::default(), mode);
            let ev = PlanEvaluator::new(&e, &c, ctx.clone(), &active).unwrap();
            assert_eq!(ev.evaluate(&t).unwrap(), evaluate_plan(&e, &c, &t, &ctx).unwrap());
        }
    }

    #[test]
    fn final_point_sets_are_fixed() {
        let c = case();
        let a = point_sets(&c, PointCount::Final);
        let b = point_sets(&c, PointCount::Final);
        assert_eq!(a.iter().map(|s| s.len()).sum::<usize>(), FINAL_TOTAL_POINTS);
        assert_eq!(a[0][..10], b[0][..10]);
        for (set, roi) in a.iter().zip(&c.rois) {
            assert!(set.iter().take(500).all(|p| roi.shape.contains(*p)));
        }
    }
}
