//! Point-source dose superposition.
//!
//! Dose at `p` from a plan is `Σ_j t_j · k · g(r_j) / max(r_j, r_min)²` with
//! `r_j` the distance from dwell `j`. Every path in this module (direct
//! evaluation, [`DoseMatrix`], slices) accumulates terms in increasing dwell
//! index with identical per-term arithmetic, so they agree bit for bit.

mod contiguity;
mod slice;

pub use contiguity::{
    contiguity_verdict, label_components, ContiguityResult, ContiguitySettings, VoxelMask,
};
pub use slice::{DoseGrid, SliceAxis, SliceSpec, ISODOSE_LEVELS_PERCENT};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::case::PatientCase;
use crate::geometry::Vec3;
use crate::par::{self, Parallelism};
use crate::{Error, Result};

/// Radial point-source kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    /// Dose rate constant k in Gy·mm²/s.
    pub strength_factor: f64,
    /// `[r_mm, g]` pairs, increasing in r, with g(10 mm) = 1.
    pub radial_table: Vec<[f64; 2]>,
    pub min_radius_mm: f64,
}

impl Default for SourceModel {
    /// Smooth Ir-192-like radial dose function. Not for clinical use.
    fn default() -> Self {
        SourceModel {
            strength_factor: 12.3,
            radial_table: vec![
                [1.0, 0.980],
                [2.5, 0.990],
                [5.0, 0.994],
                [10.0, 1.000],
                [15.0, 1.003],
                [20.0, 1.004],
                [30.0, 1.006],
                [40.0, 1.005],
                [50.0, 0.998],
                [60.0, 0.985],
                [80.0, 0.941],
                [100.0, 0.881],
            ],
            min_radius_mm: 0.5,
        }
    }
}

impl SourceModel {
    pub fn load(path: impl AsRef<Path>) -> Result<SourceModel> {
        let model: SourceModel = serde_json::from_str(&fs::read_to_string(path)?)?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strength_factor > 0.0) || !self.strength_factor.is_finite() {
            return Err(Error::validation("strength_factor", "must be positive"));
        }
        if !(self.min_radius_mm > 0.0) {
            return Err(Error::validation("min_radius_mm", "must be positive"));
        }
        let t = &self.radial_table;
        if t.len() < 2 {
            return Err(Error::validation("radial_table", "needs at least two entries"));
        }
        if t.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            return Err(Error::validation("radial_table", "radii must increase"));
        }
        if t.iter().any(|e| !(e[1] > 0.0) || !e[1].is_finite() || !(e[0] > 0.0)) {
            return Err(Error::validation("radial_table", "g must be positive and finite"));
        }
        if (self.g(10.0) - 1.0).abs() > 1e-9 {
            return Err(Error::validation("radial_table", "g(10 mm) must equal 1"));
        }
        let mut prev = f64::INFINITY;
        let mut r = 5.0;
        while r <= t[t.len() - 1][0] {
            let k = self.rate(r);
            if k > prev {
                return Err(Error::validation(
                    "radial_table",
                    format!("kernel increases with distance near r = {r} mm"),
                ));
            }
            prev = k;
            r += 0.1;
        }
        Ok(())
    }

    /// Radial dose function, linearly interpolated and clamped at the table ends.
    pub fn g(&self, r: f64) -> f64 {
        let t = &self.radial_table;
        if r <= t[0][0] {
            return t[0][1];
        }
        let last = t[t.len() - 1];
        if r >= last[0] {
            return last[1];
        }
        let i = t.partition_point(|e| e[0] <= r);
        let (a, b) = (t[i - 1], t[i]);
        a[1] + (b[1] - a[1]) * (r - a[0]) / (b[0] - a[0])
    }

    pub fn max_g(&self) -> f64 {
        self.radial_table.iter().map(|e| e[1]).fold(0.0, f64::max)
    }

    /// Dose rate in Gy/s at distance `r` mm.
    #[inline]
    pub fn rate(&self, r: f64) -> f64 {
        let rc = r.max(self.min_radius_mm);
        self.strength_factor * self.g(r) / (rc * rc)
    }
}

/// Physical per-fraction dose at a list of points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoseField {
    pub points: Vec<Vec3>,
    pub dose_gy: Vec<f64>,
}

/// Dose calculator bound to a source model and execution mode.
#[derive(Clone, Debug, Default)]
pub struct DoseEngine {
    pub source: SourceModel,
    pub parallelism: Parallelism,
}

const POINT_CHUNK: usize = 4096;

impl DoseEngine {
    pub fn new(source: SourceModel, parallelism: Parallelism) -> Self {
        DoseEngine { source, parallelism }
    }

    /// Checks a dwell-time vector against the case layout.
    pub fn check_times(case: &PatientCase, times: &[f64]) -> Result<()> {
        let n = case.dwell_count();
        if times.len() != n {
            return Err(Error::contract(format!(
                "dwell time vector has {} entries, case has {n} dwell positions",
                times.len()
            )));
        }
        if let Some(j) = times.iter().position(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::contract(format!(
                "dwell time {j} is {} (must be finite and ≥ 0)",
                times[j]
            )));
        }
        let active = case.dwell_mask.active_flat();
        if let Some(j) = (0..n).find(|&j| !active[j] && times[j] != 0.0) {
            return Err(Error::contract(format!("inactive dwell {j} has nonzero time")));
        }
        Ok(())
    }

    /// Nonzero dwells as (position, seconds) in index order.
    fn sources(case: &PatientCase, times: &[f64]) -> Vec<(Vec3, f64)> {
        case.dwell_positions()
            .into_iter()
            .zip(times.iter().copied())
            .filter(|&(_, t)| t > 0.0)
            .collect()
    }

    #[inline]
    fn dose_from(&self, sources: &[(Vec3, f64)], p: Vec3) -> f64 {
        let mut d = 0.0;
        for &(q, t) in sources {
            d += t * self.source.rate(p.distance(q));
        }
        d
    }

    pub fn dose_at_points(&self, case: &PatientCase, times: &[f64], points: &[Vec3]) -> Result<DoseField> {
        Self::check_times(case, times)?;
        let dose_gy = self.dose_unchecked(case, times, points);
        Ok(DoseField {
            points: points.to_vec(),
            dose_gy,
        })
    }

    pub(crate) fn dose_unchecked(&self, case: &PatientCase, times: &[f64], points: &[Vec3]) -> Vec<f64> {
        let sources = Self::sources(case, times);
        let mut out = vec![0.0; points.len()];
        par::fill_chunks(self.parallelism, &mut out, POINT_CHUNK, |offset, chunk| {
            for (i, d) in chunk.iter_mut().enumerate() {
                *d = self.dose_from(&sources, points[offset + i]);
            }
        });
        out
    }

    /// Precomputes dose rates from the given dwells to `points`.
    pub fn matrix(&self, case: &PatientCase, dwells: &[usize], points: &[Vec3]) -> DoseMatrix {
        let positions = case.dwell_positions();
        let cols: Vec<Vec3> = dwells.iter().map(|&j| positions[j]).collect();
        let width = cols.len();
        let mut rates = vec![0.0; points.len() * width];
        if width > 0 {
            par::fill_chunks(self.parallelism, &mut rates, width * 1024, |offset, chunk| {
                let first = offset / width;
                for (r, row) in chunk.chunks_mut(width).enumerate() {
                    let p = points[first + r];
                    for (c, q) in cols.iter().enumerate() {
                        row[c] = self.source.rate(p.distance(*q));
                    }
                }
            });
        }
        DoseMatrix {
            dwells: dwells.to_vec(),
            rows: points.len(),
            rates,
        }
    }
}

/// Dense point × dwell dose-rate matrix for repeated evaluation of plans on a
/// fixed point set. Dwell columns must be listed in increasing index order.
#[derive(Clone, Debug)]
pub struct DoseMatrix {
    dwells: Vec<usize>,
    rows: usize,
    rates: Vec<f64>,
}

impl DoseMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Writes the dose at every row point into `out`. Times outside the
    /// matrix's dwell set must be zero for the result to be exact.
    pub fn dose_into(&self, times: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.rows);
        let w = self.dwells.len();
        if w == 0 {
            out.iter_mut().for_each(|d| *d = 0.0);
            return;
        }
        let t: Vec<f64> = self.dwells.iter().map(|&j| times[j]).collect();
        for (d, row) in out.iter_mut().zip(self.rates.chunks_exact(w)) {
            let mut acc = 0.0;
            for (tj, r) in t.iter().zip(row) {
                acc += tj * r;
            }
            *d = acc;
        }
    }

    pub fn dose(&self, times: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.dose_into(times, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{generate_phantom, PhantomSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn phantom() -> PatientCase {
        generate_phantom(&PhantomSpec {
            samples_per_roi: 300,
            ..PhantomSpec::default()
        })
        .unwrap()
    }

    fn random_plan(case: &PatientCase, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        case.dwell_mask
            .active_flat()
            .iter()
            .map(|&a| if a { rng.random_range(0.0..20.0) } else { 0.0 })
            .collect()
    }

    fn single_dwell_plan(case: &PatientCase, j: usize, t: f64) -> Vec<f64> {
        let mut v = vec![0.0; case.dwell_count()];
        v[j] = t;
        v
    }

    #[test]
    fn default_source_model_is_valid() {
        SourceModel::default().validate().unwrap();
    }

    #[test]
    fn kernel_normalization_at_reference_radius() {
        let case = phantom();
        let engine = DoseEngine::new(
            SourceModel {
                strength_factor: 100.0,
                ..SourceModel::default()
            },
            Parallelism::Sequential,
        );
        let j = case.dwell_mask.active_flat().iter().position(|&a| a).unwrap();
        let p = case.dwell_positions()[j] + Vec3::new(10.0, 0.0, 0.0);
        let f = engine
            .dose_at_points(&case, &single_dwell_plan(&case, j, 1.0), &[p])
            .unwrap();
        assert!((f.dose_gy[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_plan_gives_zero_dose() {
        let case = phantom();
        let pts = &case.rois[0].sample_points;
        let f = DoseEngine::default()
            .dose_at_points(&case, &vec![0.0; case.dwell_count()], pts)
            .unwrap();
        assert!(f.dose_gy.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn superposition_matches_term_by_term_sum() {
        let case = phantom();
        let engine = DoseEngine::default();
        let active: Vec<usize> = (0..case.dwell_count())
            .filter(|&j| case.dwell_mask.active_flat()[j])
            .collect();
        let (a, b) = (active[0], active[active.len() - 1]);
        let mut both = vec![0.0; case.dwell_count()];
        both[a] = 3.0;
        both[b] = 7.5;
        let pts = &case.roi("CTV_HR").unwrap().sample_points;
        let sum = engine.dose_at_points(&case, &both, pts).unwrap();
        let fa = engine.dose_at_points(&case, &single_dwell_plan(&case, a, 3.0), pts).unwrap();
        let fb = engine.dose_at_points(&case, &single_dwell_plan(&case, b, 7.5), pts).unwrap();
        let pos = case.dwell_positions();
        for i in 0..pts.len() {
            // Oracle: explicit kernel terms.
            let k = &engine.source;
            let oracle = 3.0 * k.rate(pts[i].distance(pos[a])) + 7.5 * k.rate(pts[i].distance(pos[b]));
            assert!((sum.dose_gy[i] - (fa.dose_gy[i] + fb.dose_gy[i])).abs() <= 1e-12 * sum.dose_gy[i]);
            assert!((sum.dose_gy[i] - oracle).abs() <= 1e-12 * oracle);
        }
    }

    #[test]
    fn rejects_bad_vectors() {
        let case = phantom();
        let e = DoseEngine::default();
        let p = [Vec3::ZERO];
        assert!(matches!(e.dose_at_points(&case, &[1.0], &p), Err(Error::Contract(_))));
        let mut t = vec![0.0; case.dwell_count()];
        let j = case.dwell_mask.active_flat().iter().position(|&a| a).unwrap();
        t[j] = -1.0;
        assert!(matches!(e.dose_at_points(&case, &t, &p), Err(Error::Contract(_))));
        let mut t = vec![0.0; case.dwell_count()];
        let off = case.dwell_mask.active_flat().iter().position(|&a| !a).unwrap();
        t[off] = 1.0;
        assert!(matches!(e.dose_at_points(&case, &t, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn matrix_is_bit_identical_to_direct_evaluation() {
        let case = phantom();
        let times = random_plan(&case, 3);
        let dwells: Vec<usize> = (0..case.dwell_count())
            .filter(|&j| case.dwell_mask.active_flat()[j])
            .collect();
        for mode in [Parallelism::Sequential, Parallelism::Parallel] {
            let e = DoseEngine::new(SourceModel::default(), mode);
            let pts = &case.roi("bladder").unwrap().sample_points;
            let direct = e.dose_at_points(&case, &times, pts).unwrap().dose_gy;
            let m = e.matrix(&case, &dwells, pts).dose(&times);
            assert_eq!(direct, m);
        }
    }

    #[test]
    fn linearity_and_monotonicity() {
        let case = phantom();
        let e = DoseEngine::default();
        let t1 = random_plan(&case, 1);
        let t2 = random_plan(&case, 2);
        let pts = &case.roi("rectum").unwrap().sample_points;
        let (alpha, beta) = (0.7, 2.5);
        let mix: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| alpha * a + beta * b).collect();
        let d1 = e.dose_at_points(&case, &t1, pts).unwrap().dose_gy;
        let d2 = e.dose_at_points(&case, &t2, pts).unwrap().dose_gy;
        let dm = e.dose_at_points(&case, &mix, pts).unwrap().dose_gy;
        for i in 0..pts.len() {
            let want = alpha * d1[i] + beta * d2[i];
            assert!((dm[i] - want).abs() <= 1e-10 * want);
        }
        let mut bumped = t1.clone();
        let j = t1.iter().position(|&t| t > 0.0).unwrap();
        bumped[j] += 5.0;
        let db = e.dose_at_points(&case, &bumped, pts).unwrap().dose_gy;
        assert!(db.iter().zip(&d1).all(|(b, a)| b >= a));
    }

    #[test]
    fn translation_invariance() {
        let case = phantom();
        let shifted = case.translated(Vec3::new(12.5, -7.25, 30.0));
        let e = DoseEngine::default();
        let t = random_plan(&case, 9);
        let a = e.dose_at_points(&case, &t, &case.rois[3].sample_points).unwrap().dose_gy;
        let b = e.dose_at_points(&shifted, &t, &shifted.rois[3].sample_points).unwrap().dose_gy;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.max(1.0));
        }
    }

    #[test]
    fn source_model_validation() {
        let mut m = SourceModel::default();
        m.radial_table[3][1] = 1.1;
        assert!(m.validate().is_err());
        let mut m = SourceModel::default();
        m.radial_table.swap(0, 1);
        assert!(m.validate().is_err());
        let m = SourceModel {
            strength_factor: -1.0,
            ..SourceModel::default()
        };
        assert_eq!(m.validate().unwrap_err().field(), Some("strength_factor"));
    }
}
