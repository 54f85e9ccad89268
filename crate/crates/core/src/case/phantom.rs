//! Synthetic cervix phantom built from analytic shapes.
//!
//! Layout (mm): the CTV_HR ellipsoid is centred at the origin, the
//! intrauterine tube runs along the z axis through it, the ovoids sit just
//! caudal and lateral, needles run parallel to the tube close to the CTV_HR
//! boundary. Bladder is anterior, rectum and sigmoid posterior, bowel cranial.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    apply_clinical_deactivation, Catheter, CatheterKind, DwellMask, PatientCase, Prescription,
    Protocol, ReferencePoint, Roi, RoiRole,
};
use crate::geometry::{Shape, Vec3};
use crate::{Error, Result};

pub const DEFAULT_SAMPLES_PER_ROI: usize = 20_000;

const TUBE_STEP_MM: f64 = 5.0;
const OVOID_STEP_MM: f64 = 3.0;
const OVOID_POSITIONS: usize = 6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OarSet {
    /// Bladder, rectum, sigmoid and bowel.
    #[default]
    All,
    /// Bladder and rectum only.
    Pelvic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub n_needles: u32,
    pub ctv_hr_volume_cm3: f64,
    pub oar_set: OarSet,
    pub samples_per_roi: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            seed: 1,
            n_needles: 5,
            ctv_hr_volume_cm3: 34.5,
            oar_set: OarSet::All,
            samples_per_roi: DEFAULT_SAMPLES_PER_ROI,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_needles > 12 {
            return Err(Error::validation("n_needles", "must be in [0, 12]"));
        }
        if !(5.0..=100.0).contains(&self.ctv_hr_volume_cm3) {
            return Err(Error::validation("ctv_hr_volume_cm3", "must be in [5, 100]"));
        }
        if self.samples_per_roi == 0 {
            return Err(Error::validation("samples_per_roi", "must be positive"));
        }
        Ok(())
    }
}

fn jitter(rng: &mut ChaCha8Rng, rel: f64) -> f64 {
    1.0 + rng.random_range(-rel..=rel)
}

fn line(start: Vec3, dir: Vec3, step: f64, n: usize) -> Vec<Vec3> {
    let d = dir * (1.0 / dir.norm());
    (0..n).map(|i| start + d * (step * i as f64)).collect()
}

/// Builds a phantom case. Pure function of `spec`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<PatientCase> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // CTV_HR radii with jittered aspect, rescaled to the exact volume.
    let aspect = Vec3::new(
        1.15 * jitter(&mut rng, 0.08),
        0.95 * jitter(&mut rng, 0.08),
        1.25 * jitter(&mut rng, 0.08),
    );
    let unit_volume = 4.0 / 3.0 * PI * aspect.x * aspect.y * aspect.z;
    let scale = (spec.ctv_hr_volume_cm3 * 1000.0 / unit_volume).cbrt();
    let hr = aspect * scale;
    let ir = hr + Vec3::new(8.0, 6.0, 8.0) * jitter(&mut rng, 0.1);
    let gtv_center = Vec3::new(
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    );

    let mut shapes: Vec<(&str, RoiRole, Shape)> = vec![
        (
            "CTV_HR",
            RoiRole::Target,
            Shape::Ellipsoid {
                center: Vec3::ZERO,
                radii: hr,
            },
        ),
        (
            "CTV_IR",
            RoiRole::Target,
            Shape::Ellipsoid {
                center: Vec3::ZERO,
                radii: ir,
            },
        ),
        (
            "GTV_res",
            RoiRole::Target,
            Shape::Ellipsoid {
                center: gtv_center,
                radii: hr * 0.45,
            },
        ),
        (
            "bladder",
            RoiRole::Oar,
            Shape::Ellipsoid {
                center: Vec3::new(0.0, ir.y + 22.0 * jitter(&mut rng, 0.1), 0.2 * ir.z),
                radii: Vec3::new(32.0, 18.0, 24.0) * jitter(&mut rng, 0.1),
            },
        ),
        (
            "rectum",
            RoiRole::Oar,
            Shape::Capsule {
                a: Vec3::new(0.0, -(ir.y + 14.0 * jitter(&mut rng, 0.1)), -60.0),
                b: Vec3::new(0.0, -(ir.y + 14.0), -5.0),
                radius: 10.0 * jitter(&mut rng, 0.1),
            },
        ),
    ];
    if spec.oar_set == OarSet::All {
        shapes.push((
            "sigmoid",
            RoiRole::Oar,
            Shape::Capsule {
                a: Vec3::new(0.0, -(ir.y + 14.0), 5.0),
                b: Vec3::new(18.0 * jitter(&mut rng, 0.2), -(ir.y + 6.0), ir.z + 25.0),
                radius: 9.0 * jitter(&mut rng, 0.1),
            },
        ));
        shapes.push((
            "bowel",
            RoiRole::Oar,
            Shape::Ellipsoid {
                center: Vec3::new(0.0, 5.0, ir.z + 32.0 * jitter(&mut rng, 0.05)),
                radii: Vec3::new(40.0, 28.0, 14.0) * jitter(&mut rng, 0.1),
            },
        ));
    }

    // Catheters. Intrauterine tip lies cranially outside CTV_IR.
    let tip_z = ir.z + rng.random_range(10.0..16.0);
    let end_z = -hr.z - 6.0;
    let n_tube = ((tip_z - end_z) / TUBE_STEP_MM).floor() as usize + 1;
    let mut catheters = vec![
        Catheter {
            id: 1,
            kind: CatheterKind::OvoidLeft,
            dwell_positions: line(
                Vec3::new(hr.x * 0.5 + 5.0, 0.0, -hr.z + 4.0),
                Vec3::new(0.2, 0.0, -1.0),
                OVOID_STEP_MM,
                OVOID_POSITIONS,
            ),
            step_mm: OVOID_STEP_MM,
        },
        Catheter {
            id: 2,
            kind: CatheterKind::OvoidRight,
            dwell_positions: line(
                Vec3::new(-(hr.x * 0.5 + 5.0), 0.0, -hr.z + 4.0),
                Vec3::new(-0.2, 0.0, -1.0),
                OVOID_STEP_MM,
                OVOID_POSITIONS,
            ),
            step_mm: OVOID_STEP_MM,
        },
        Catheter {
            id: 3,
            kind: CatheterKind::Intrauterine,
            dwell_positions: line(Vec3::new(0.0, 0.0, tip_z), Vec3::new(0.0, 0.0, -1.0), TUBE_STEP_MM, n_tube),
            step_mm: TUBE_STEP_MM,
        },
    ];
    let n = spec.n_needles as usize;
    for i in 0..n {
        let theta = 2.0 * PI * (i as f64 + 0.5) / n as f64 + rng.random_range(-0.15..0.15);
        let frac = rng.random_range(0.78..0.95);
        let start = Vec3::new(
            hr.x * frac * theta.cos(),
            hr.y * frac * theta.sin(),
            hr.z * rng.random_range(0.8..1.1),
        );
        let end = -hr.z - 12.0;
        let count = ((start.z - end) / TUBE_STEP_MM).floor() as usize + 1;
        catheters.push(Catheter {
            id: 4 + i as u32,
            kind: CatheterKind::Needle,
            dwell_positions: line(start, Vec3::new(0.0, 0.0, -1.0), TUBE_STEP_MM, count),
            step_mm: TUBE_STEP_MM,
        });
    }

    // One sampling stream per ROI, independent of the geometry stream.
    let rois = shapes
        .into_iter()
        .enumerate()
        .map(|(i, (name, role, shape))| {
            let mut srng = ChaCha8Rng::seed_from_u64(spec.seed);
            srng.set_stream(1 + i as u64);
            Roi::sampled(name, role, shape, spec.samples_per_roi, &mut srng)
        })
        .collect::<Vec<_>>();

    let mut protocol = Protocol::default_cervix();
    protocol
        .aims
        .retain(|a| a.roi.starts_with("A_") || rois.iter().any(|r| r.name == a.roi));

    let a_z = -hr.z + 20.0;
    let a_points = vec![
        ReferencePoint {
            label: "A_left".to_string(),
            position: Vec3::new(20.0, 0.0, a_z),
        },
        ReferencePoint {
            label: "A_right".to_string(),
            position: Vec3::new(-20.0, 0.0, a_z),
        },
    ];

    let dwell_mask = DwellMask::all_active(&catheters);
    let mut case = PatientCase {
        id: format!("phantom-{}", spec.seed),
        prescription: Prescription::default(),
        protocol,
        rois,
        catheters,
        dwell_mask,
        a_points,
    }
    .canonicalized()?;
    case.dwell_mask = apply_clinical_deactivation(&case)?;
    Ok(case)
}
