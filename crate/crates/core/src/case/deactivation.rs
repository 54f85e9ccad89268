use super::{CatheterKind, DwellMask, PatientCase};
use crate::{Error, Result};

/// Needle dwells farther than this from the CTV_HR surface are switched off.
pub const NEEDLE_MAX_DISTANCE_MM: f64 = 4.39;

/// Intrauterine dwells kept cranially outside CTV_IR.
const KEEP_CRANIAL_OUTSIDE: usize = 2;

/// Clinical starting activation of dwell positions.
///
/// Deactivates the first and last dwell of each ovoid, the most caudal
/// intrauterine dwell, the cranial intrauterine dwells outside CTV_IR except
/// the two nearest to it, and needle dwells more than
/// [`NEEDLE_MAX_DISTANCE_MM`] outside CTV_HR. Everything else is active.
/// Time bounds are copied from the case's current mask.
pub fn apply_clinical_deactivation(case: &PatientCase) -> Result<DwellMask> {
    let hr = case
        .roi("CTV_HR")
        .ok_or_else(|| Error::config("CTV_HR is required for dwell deactivation"))?;
    let ir = case
        .roi("CTV_IR")
        .ok_or_else(|| Error::config("CTV_IR is required for dwell deactivation"))?;
    let ir_center_z = {
        let bb = ir.shape.bounding_box();
        0.5 * (bb.min.z + bb.max.z)
    };

    let mut mask = case.dwell_mask.clone();
    for (ci, cat) in case.catheters.iter().enumerate() {
        let n = cat.dwell_positions.len();
        let active = &mut mask.active[ci];
        active.iter_mut().for_each(|a| *a = true);
        match cat.kind {
            CatheterKind::OvoidLeft | CatheterKind::OvoidRight => {
                active[0] = false;
                active[n - 1] = false;
            }
            CatheterKind::Intrauterine => {
                // Latest index wins ties so the proximal end is dropped.
                let caudal = (0..n)
                    .min_by(|&a, &b| {
                        let (za, zb) = (cat.dwell_positions[a].z, cat.dwell_positions[b].z);
                        za.partial_cmp(&zb).unwrap().then(b.cmp(&a))
                    })
                    .unwrap();
                active[caudal] = false;

                let mut cranial_outside: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| {
                        let p = cat.dwell_positions[j];
                        !ir.shape.contains(p) && p.z > ir_center_z
                    })
                    .map(|j| (ir.shape.signed_distance(cat.dwell_positions[j]), j))
                    .collect();
                cranial_outside.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(b.1.cmp(&a.1)));
                for &(_, j) in cranial_outside.iter().skip(KEEP_CRANIAL_OUTSIDE) {
                    active[j] = false;
                }
            }
            CatheterKind::Needle => {
                for (j, p) in cat.dwell_positions.iter().enumerate() {
                    if hr.shape.signed_distance(*p) > NEEDLE_MAX_DISTANCE_MM {
                        active[j] = false;
                    }
                }
            }
        }
    }
    Ok(mask)
}
