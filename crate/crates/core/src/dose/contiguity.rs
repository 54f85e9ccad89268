//! Contiguous high-dose-volume constraint.
//!
//! Cells of a regular lattice over the implant are labelled hot when their
//! dose reaches `level_fraction × prescription`; hot cells are grouped into
//! 6-connected components. A plan is feasible when at most one component is
//! larger than `min_component_cm3`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::DoseEngine;
use crate::case::PatientCase;
use crate::geometry::Vec3;
use crate::par;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContiguitySettings {
    pub level_fraction: f64,
    pub min_component_cm3: f64,
    pub spacing_mm: f64,
    pub margin_mm: f64,
}

impl Default for ContiguitySettings {
    fn default() -> Self {
        ContiguitySettings {
            level_fraction: 2.5,
            min_component_cm3: 0.125,
            spacing_mm: 1.0,
            margin_mm: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContiguityResult {
    pub feasible: bool,
    /// Volume of every component above the size threshold except the largest.
    pub violation_cm3: f64,
    /// Component volumes in cm³, largest first.
    pub components_cm3: Vec<f64>,
}

/// Boolean voxel grid, x fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoxelMask {
    pub dims: [usize; 3],
    pub cells: Vec<bool>,
}

impl VoxelMask {
    pub fn new(dims: [usize; 3]) -> Self {
        VoxelMask {
            dims,
            cells: vec![false; dims[0] * dims[1] * dims[2]],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.cells[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.cells[i] = v;
    }
}

/// Sizes (cell counts) of the 6-connected components of `mask`, largest first.
pub fn label_components(mask: &VoxelMask) -> Vec<usize> {
    let [nx, ny, nz] = mask.dims;
    let mut seen = vec![false; mask.cells.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.cells.len() {
        if !mask.cells[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let x = i % nx;
            let y = (i / nx) % ny;
            let z = i / (nx * ny);
            let mut visit = |j: usize| {
                if mask.cells[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < nx {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - nx);
            }
            if y + 1 < ny {
                visit(i + nx);
            }
            if z > 0 {
                visit(i - nx * ny);
            }
            if z + 1 < nz {
                visit(i + nx * ny);
            }
        }
        sizes.push(size);
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}

/// Verdict from component sizes (largest first).
pub fn contiguity_verdict(sizes: &[usize], cell_volume_cm3: f64, min_component_cm3: f64) -> ContiguityResult {
    let components_cm3: Vec<f64> = sizes.iter().map(|&s| s as f64 * cell_volume_cm3).collect();
    let large: Vec<f64> = components_cm3
        .iter()
        .copied()
        .filter(|&v| v > min_component_cm3)
        .collect();
    ContiguityResult {
        feasible: large.len() <= 1,
        violation_cm3: large.iter().skip(1).fold(0.0, |a, b| a + b),
        components_cm3,
    }
}

const BLOCK: usize = 4;
const DECISION_MARGIN: f64 = 1e-9;

impl DoseEngine {
    /// Hot-cell mask on the lattice `implant box ± margin` at `spacing_mm`.
    pub fn hot_mask(&self, case: &PatientCase, times: &[f64], settings: &ContiguitySettings) -> Result<(VoxelMask, Vec3)> {
        Self::check_times(case, times)?;
        let bb = case.implant_bounding_box().expand(settings.margin_mm);
        let h = settings.spacing_mm;
        let e = bb.extent();
        let dims = [
            (e.x / h).floor() as usize + 1,
            (e.y / h).floor() as usize + 1,
            (e.z / h).floor() as usize + 1,
        ];
        let origin = bb.min;
        let threshold = settings.level_fraction * case.prescription.fraction_dose_gy;
        let sources = Self::sources(case, times);
        let mut mask = VoxelMask::new(dims);
        if sources.is_empty() {
            return Ok((mask, origin));
        }

        // Upper bound over a block: every term is at most t·k·g_max / max(d − half_diag, r_min)².
        let bound_k = self.source.strength_factor * self.source.max_g() * (1.0 + 1e-9);
        let half_diag = 3f64.sqrt() * (BLOCK - 1) as f64 * h / 2.0;
        let nb = dims.map(|d| d.div_ceil(BLOCK));
        let cell = |x: usize, y: usize, z: usize| origin + Vec3::new(x as f64 * h, y as f64 * h, z as f64 * h);

        // One z-slab of blocks per task; hot cells are collected by index.
        let slabs: Vec<Vec<usize>> = par::map_range(self.parallelism, nb[2], |bz| {
            let mut hot = Vec::new();
            for by in 0..nb[1] {
                for bx in 0..nb[0] {
                    let lo = [bx * BLOCK, by * BLOCK, bz * BLOCK];
                    let hi = [
                        (lo[0] + BLOCK).min(dims[0]),
                        (lo[1] + BLOCK).min(dims[1]),
                        (lo[2] + BLOCK).min(dims[2]),
                    ];
                    let center = origin
                        + Vec3::new(
                            (lo[0] + hi[0] - 1) as f64 * h / 2.0,
                            (lo[1] + hi[1] - 1) as f64 * h / 2.0,
                            (lo[2] + hi[2] - 1) as f64 * h / 2.0,
                        );
                    let bounds: Vec<f64> = sources
                        .iter()
                        .map(|&(q, t)| {
                            let r = (center.distance(q) - half_diag).max(self.source.min_radius_mm);
                            t * bound_k / (r * r)
                        })
                        .collect();
                    if bounds.iter().sum::<f64>() < threshold {
                        continue;
                    }
                    // Largest contributions first; a cell is decided as soon as
                    // the partial sum or the partial sum plus the remaining
                    // bounds clears the threshold with margin. Undecided cells
                    // fall back to the ordered sum used everywhere else.
                    let mut order: Vec<usize> = (0..sources.len()).collect();
                    order.sort_by(|&a, &b| bounds[b].total_cmp(&bounds[a]));
                    let mut rest = vec![0.0; order.len() + 1];
                    for i in (0..order.len()).rev() {
                        rest[i] = rest[i + 1] + bounds[order[i]];
                    }
                    for z in lo[2]..hi[2] {
                        for y in lo[1]..hi[1] {
                            for x in lo[0]..hi[0] {
                                let p = cell(x, y, z);
                                let mut partial = 0.0;
                                let mut verdict = None;
                                for (i, &s) in order.iter().enumerate() {
                                    let (q, t) = sources[s];
                                    partial += t * self.source.rate(p.distance(q));
                                    if partial >= threshold * (1.0 + DECISION_MARGIN) {
                                        verdict = Some(true);
                                        break;
                                    }
                                    if partial + rest[i + 1] < threshold * (1.0 - DECISION_MARGIN) {
                                        verdict = Some(false);
                                        break;
                                    }
                                }
                                let is_hot = verdict.unwrap_or_else(|| self.dose_from(&sources, p) >= threshold);
                                if is_hot {
                                    hot.push((z * dims[1] + y) * dims[0] + x);
                                }
                            }
                        }
                    }
                }
            }
            hot
        });
        for i in slabs.into_iter().flatten() {
            mask.cells[i] = true;
        }
        Ok((mask, origin))
    }

    pub fn check_contiguity(&self, case: &PatientCase, times: &[f64], settings: &ContiguitySettings) -> Result<ContiguityResult> {
        let (mask, _) = self.hot_mask(case, times, settings)?;
        let sizes = label_components(&mask);
        let cell_cm3 = settings.spacing_mm.powi(3) / 1000.0;
        Ok(contiguity_verdict(&sizes, cell_cm3, settings.min_component_cm3))
    }
}
