//! Analytic shapes used for the phantom anatomy.
//!
//! Coordinates are millimetres in a patient frame: `x` towards patient left,
//! `y` anterior, `z` cranial.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn around(p: Vec3) -> Self {
        Aabb { min: p, max: p }
    }

    pub fn union(self, o: Aabb) -> Aabb {
        Aabb {
            min: self.min.min(o.min),
            max: self.max.max(o.max),
        }
    }

    pub fn include(self, p: Vec3) -> Aabb {
        self.union(Aabb::around(p))
    }

    pub fn expand(self, margin: f64) -> Aabb {
        let m = Vec3::new(margin, margin, margin);
        Aabb {
            min: self.min - m,
            max: self.max + m,
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn volume_mm3(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }
}

/// Analytic ROI shape descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned ellipsoid with semi-axes `radii`.
    Ellipsoid { center: Vec3, radii: Vec3 },
    /// Segment from `a` to `b` swept by a sphere of `radius`.
    Capsule { a: Vec3, b: Vec3, radius: f64 },
    Union { parts: Vec<Shape> },
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        match self {
            Shape::Ellipsoid { center, radii } => {
                if !center.is_finite() || !(radii.x > 0.0 && radii.y > 0.0 && radii.z > 0.0) {
                    return Err(Error::validation("shape", "ellipsoid radii must be positive"));
                }
            }
            Shape::Capsule { a, b, radius } => {
                if !a.is_finite() || !b.is_finite() || !(*radius > 0.0) {
                    return Err(Error::validation("shape", "capsule radius must be positive"));
                }
            }
            Shape::Union { parts } => {
                if parts.is_empty() {
                    return Err(Error::validation("shape", "union must have parts"));
                }
                for p in parts {
                    p.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: Vec3) -> bool {
        match self {
            Shape::Ellipsoid { center, radii } => {
                let d = p - *center;
                let q = (d.x / radii.x).powi(2) + (d.y / radii.y).powi(2) + (d.z / radii.z).powi(2);
                q <= 1.0
            }
            Shape::Capsule { a, b, radius } => segment_distance(p, *a, *b) <= *radius,
            Shape::Union { parts } => parts.iter().any(|s| s.contains(p)),
        }
    }

    /// Signed distance to the surface in mm: positive outside, negative inside.
    ///
    /// Exact for ellipsoids and capsules; unions take the minimum over parts.
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        match self {
            Shape::Ellipsoid { center, radii } => ellipsoid_signed_distance(p - *center, *radii),
            Shape::Capsule { a, b, radius } => segment_distance(p, *a, *b) - radius,
            Shape::Union { parts } => parts
                .iter()
                .map(|s| s.signed_distance(p))
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn bounding_box(&self) -> Aabb {
        match self {
            Shape::Ellipsoid { center, radii } => Aabb {
                min: *center - *radii,
                max: *center + *radii,
            },
            Shape::Capsule { a, b, radius } => Aabb::around(*a).include(*b).expand(*radius),
            Shape::Union { parts } => parts
                .iter()
                .map(Shape::bounding_box)
                .reduce(Aabb::union)
                .expect("validated union is nonempty"),
        }
    }

    /// Volume in cm³. Unions are integrated on a 0.25 mm midpoint grid.
    pub fn volume_cm3(&self) -> f64 {
        match self {
            Shape::Ellipsoid { radii, .. } => 4.0 / 3.0 * PI * radii.x * radii.y * radii.z / 1000.0,
            Shape::Capsule { a, b, radius } => {
                let len = a.distance(*b);
                (PI * radius * radius * len + 4.0 / 3.0 * PI * radius.powi(3)) / 1000.0
            }
            Shape::Union { parts } if parts.len() == 1 => parts[0].volume_cm3(),
            Shape::Union { .. } => {
                let bb = self.bounding_box();
                let h = 0.25;
                let e = bb.extent();
                let (nx, ny, nz) = (
                    (e.x / h).ceil() as usize,
                    (e.y / h).ceil() as usize,
                    (e.z / h).ceil() as usize,
                );
                let mut inside = 0usize;
                for i in 0..nx {
                    for j in 0..ny {
                        for k in 0..nz {
                            let p = bb.min
                                + Vec3::new(
                                    (i as f64 + 0.5) * h,
                                    (j as f64 + 0.5) * h,
                                    (k as f64 + 0.5) * h,
                                );
                            if self.contains(p) {
                                inside += 1;
                            }
                        }
                    }
                }
                inside as f64 * h * h * h / 1000.0
            }
        }
    }

    /// Uniform sample inside the shape by bounding-box rejection.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let bb = self.bounding_box();
        let e = bb.extent();
        loop {
            let p = bb.min
                + Vec3::new(
                    rng.random::<f64>() * e.x,
                    rng.random::<f64>() * e.y,
                    rng.random::<f64>() * e.z,
                );
            if self.contains(p) {
                return p;
            }
        }
    }

    pub fn translated(&self, offset: Vec3) -> Shape {
        match self {
            Shape::Ellipsoid { center, radii } => Shape::Ellipsoid {
                center: *center + offset,
                radii: *radii,
            },
            Shape::Capsule { a, b, radius } => Shape::Capsule {
                a: *a + offset,
                b: *b + offset,
                radius: *radius,
            },
            Shape::Union { parts } => Shape::Union {
                parts: parts.iter().map(|s| s.translated(offset)).collect(),
            },
        }
    }
}

pub fn segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.distance(a + ab * t)
}

/// Signed distance from `p` (relative to the centre) to an axis-aligned
/// ellipsoid with semi-axes `radii`.
///
/// The nearest surface point is `x_i = r_i² p_i / (t + r_i²)` where `t` solves
/// `Σ (r_i p_i / (t + r_i²))² = 1`. The left side is strictly decreasing in
/// `t`, so a bracketed bisection converges to the unique root: `t > 0` outside,
/// `t ∈ (-r_min², 0)` inside.
fn ellipsoid_signed_distance(p: Vec3, radii: Vec3) -> f64 {
    let r = radii.to_array();
    let y = p.to_array().map(f64::abs);
    let level: f64 = (0..3).map(|i| (y[i] / r[i]).powi(2)).sum::<f64>() - 1.0;
    if level == 0.0 {
        return 0.0;
    }
    let f = |t: f64| -> f64 {
        (0..3)
            .map(|i| {
                let q = r[i] * y[i] / (t + r[i] * r[i]);
                q * q
            })
            .sum::<f64>()
            - 1.0
    };
    let closest = |t: f64| -> [f64; 3] { std::array::from_fn(|i| r[i] * r[i] * y[i] / (t + r[i] * r[i])) };
    let dist = |x: [f64; 3]| -> f64 {
        (0..3).map(|i| (x[i] - y[i]).powi(2)).sum::<f64>().sqrt()
    };

    if level > 0.0 {
        // f(0) > 0, f(hi) < 0 for hi = r_max * |y|.
        let ymax = y.iter().fold(0.0f64, |a, &b| a.max(b));
        let rmax = r.iter().fold(0.0f64, |a, &b| a.max(b));
        let mut lo = 0.0;
        let mut hi = rmax * (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt() + rmax * ymax;
        while f(hi) > 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return dist(closest(0.5 * (lo + hi)));
    }

    // Inside: the nearest point is either the root of f in (-r_m², 0), with r_m
    // the shortest axis carrying a nonzero component, or a degenerate point at
    // t = -r_k² for a shorter axis k with zero component.
    let rm2 = (0..3)
        .filter(|&i| y[i] > 0.0)
        .map(|i| r[i] * r[i])
        .fold(f64::INFINITY, f64::min);
    let mut best = f64::INFINITY;
    if rm2.is_finite() {
        let mut lo = -rm2;
        let mut hi = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        best = dist(closest(0.5 * (lo + hi)));
    }
    for k in 0..3 {
        let rk2 = r[k] * r[k];
        if y[k] > 0.0 || rk2 >= rm2 {
            continue;
        }
        let mut x = [0.0; 3];
        let mut acc = 0.0;
        for i in (0..3).filter(|&i| i != k && y[i] > 0.0) {
            x[i] = r[i] * r[i] * y[i] / (r[i] * r[i] - rk2);
            acc += (x[i] / r[i]).powi(2);
        }
        if acc <= 1.0 {
            x[k] = r[k] * (1.0 - acc).sqrt();
            best = best.min(dist(x));
        }
    }
    -best
}
