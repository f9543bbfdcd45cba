//! Small geometric helpers shared by the splat, registration and benchmark modules.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub const ROTATION_TOL: f64 = 1e-6;

/// Checks orthonormality and `det = +1` within `tol`.
pub fn check_rotation(r: &Mat3, tol: f64) -> Result<()> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidRotation("non-finite entries".into()));
    }
    let ortho = (r.transpose() * r - Mat3::identity()).amax();
    if ortho > tol {
        return Err(Error::InvalidRotation(format!(
            "not orthonormal (max |RᵀR − I| = {ortho:.3e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tol {
        return Err(Error::InvalidRotation(format!("det = {det:.6}")));
    }
    Ok(())
}

/// Rotation angle in [0, π], stable for small angles (no `acos` near 1).
pub fn rotation_angle(r: &Mat3) -> f64 {
    let s = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() * 0.5;
    let c = (r.trace() - 1.0) * 0.5;
    s.atan2(c)
}

/// Geodesic distance on SO(3).
pub fn rotation_distance(a: &Mat3, b: &Mat3) -> f64 {
    rotation_angle(&(a.transpose() * b))
}

/// Squared rotation angle via `arccos²(clamp((tr R − 1)/2))`.
pub fn rotation_angle_penalty(r: &Mat3) -> f64 {
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    c.acos().powi(2)
}

pub fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
    Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
}

pub fn rot_z(angle: f64) -> Mat3 {
    axis_angle(Vec3::z(), angle)
}

/// Uniformly distributed unit quaternion (Shoemake's subgroup algorithm).
pub fn random_unit_quaternion<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    let u3: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    UnitQuaternion::new_normalize(Quaternion::new(
        b * u3.cos(),
        a * u2.sin(),
        a * u2.cos(),
        b * u3.sin(),
    ))
}

pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    random_unit_quaternion(rng).to_rotation_matrix().into_inner()
}

/// Random rotation with angle uniform in `[0, max_angle]` about a uniform axis.
pub fn random_rotation_bounded<R: Rng + ?Sized>(rng: &mut R, max_angle: f64) -> Mat3 {
    let axis = loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v / n;
        }
    };
    axis_angle(axis, rng.gen_range(0.0..=max_angle))
}

/// Projects a nearly-orthonormal matrix onto SO(3).
pub fn orthonormalize(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Mat3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

pub fn mat_from_row_slice(v: &[f64]) -> Mat3 {
    Mat3::from_row_slice(v)
}

pub fn mat_to_row_vec(m: &Mat3) -> Vec<f64> {
    (0..3).flat_map(|r| (0..3).map(move |c| m[(r, c)])).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    if points.is_empty() {
        return Vec3::zeros();
    }
    points.iter().sum::<Vec3>() / points.len() as f64
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if (0..3).any(|i| !(min[i] <= max[i])) {
            return Err(Error::Degenerate(format!(
                "bounding box min {min:?} exceeds max {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = *iter.next()?;
        let (min, max) = iter.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Some(Self { min, max })
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extents();
        e.x * e.y * e.z
    }

    /// Arithmetic mean of the three extents.
    pub fn mean_dim(&self) -> f64 {
        let e = self.extents();
        (e.x + e.y + e.z) / 3.0
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}
