use serde::{Deserialize, Serialize};

use super::DoseEngine;
use crate::case::PatientCase;
use crate::geometry::Vec3;
use crate::{Error, Result};

/// Isodose levels drawn by the viewer, in % of the prescription dose.
pub const ISODOSE_LEVELS_PERCENT: [f64; 6] = [50.0, 75.0, 100.0, 150.0, 200.0, 250.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceAxis {
    /// Plane of constant z; grid axes (x, y).
    Axial,
    /// Plane of constant x; grid axes (y, z).
    Sagittal,
    /// Plane of constant y; grid axes (x, z).
    Coronal,
}

impl SliceAxis {
    fn split(self, p: Vec3) -> (f64, f64, f64) {
        match self {
            SliceAxis::Axial => (p.x, p.y, p.z),
            SliceAxis::Sagittal => (p.y, p.z, p.x),
            SliceAxis::Coronal => (p.x, p.z, p.y),
        }
    }

    fn join(self, u: f64, v: f64, w: f64) -> Vec3 {
        match self {
            SliceAxis::Axial => Vec3::new(u, v, w),
            SliceAxis::Sagittal => Vec3::new(w, u, v),
            SliceAxis::Coronal => Vec3::new(u, w, v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub axis: SliceAxis,
    pub position_mm: f64,
    pub spacing_mm: f64,
}

/// Planar dose grid. Cell `(i, j)` sits at `origin + (i·spacing, j·spacing)`
/// in the plane's (u, v) axes; values are stored row-major with `i` fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoseGrid {
    pub axis: SliceAxis,
    pub position_mm: f64,
    pub origin: [f64; 2],
    pub spacing_mm: f64,
    pub n_u: usize,
    pub n_v: usize,
    pub dose_gy: Vec<f64>,
    pub out_of_bounds: bool,
    pub prescription_gy: f64,
    pub isodose_levels_percent: Vec<f64>,
}

impl DoseGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.dose_gy[j * self.n_u + i]
    }

    /// 3D position of cell `(i, j)`.
    pub fn cell_center(&self, i: usize, j: usize) -> Vec3 {
        self.axis.join(
            self.origin[0] + i as f64 * self.spacing_mm,
            self.origin[1] + j as f64 * self.spacing_mm,
            self.position_mm,
        )
    }

    pub fn cell_centers(&self) -> Vec<Vec3> {
        let mut pts = Vec::with_capacity(self.n_u * self.n_v);
        for j in 0..self.n_v {
            for i in 0..self.n_u {
                pts.push(self.cell_center(i, j));
            }
        }
        pts
    }

    pub fn max(&self) -> Option<(usize, usize, f64)> {
        self.dose_gy
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (k, &d)| match best {
                Some((_, b)) if b >= d => best,
                _ => Some((k, d)),
            })
            .map(|(k, d)| (k % self.n_u, k / self.n_u, d))
    }
}

impl DoseEngine {
    /// Dose on a plane through the case bounding box.
    pub fn render_slice(&self, case: &PatientCase, times: &[f64], spec: &SliceSpec) -> Result<DoseGrid> {
        Self::check_times(case, times)?;
        if !(0.25..=5.0).contains(&spec.spacing_mm) {
            return Err(Error::validation("spacing_mm", "must be in [0.25, 5] mm"));
        }
        let bb = case.bounding_box();
        let (u0, v0, w0) = spec.axis.split(bb.min);
        let (u1, v1, w1) = spec.axis.split(bb.max);
        let mut grid = DoseGrid {
            axis: spec.axis,
            position_mm: spec.position_mm,
            origin: [u0, v0],
            spacing_mm: spec.spacing_mm,
            n_u: 0,
            n_v: 0,
            dose_gy: Vec::new(),
            out_of_bounds: true,
            prescription_gy: case.prescription.fraction_dose_gy,
            isodose_levels_percent: ISODOSE_LEVELS_PERCENT.to_vec(),
        };
        if !(spec.position_mm >= w0 && spec.position_mm <= w1) {
            return Ok(grid);
        }
        grid.out_of_bounds = false;
        grid.n_u = ((u1 - u0) / spec.spacing_mm).floor() as usize + 1;
        grid.n_v = ((v1 - v0) / spec.spacing_mm).floor() as usize + 1;
        let points = grid.cell_centers();
        grid.dose_gy = self.dose_unchecked(case, times, &points);
        Ok(grid)
    }
}
