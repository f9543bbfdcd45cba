//! Gaussian-splat primitives, clouds, cameras and transforms.

mod camera;
pub mod hull;
pub mod ply;
pub mod sh;
mod transform;

pub use camera::Camera;
pub use hull::{convex_hull_centroid, hull_centroid_or_mean, HullCentroid};
pub use ply::{load_ply, read_ply, save_ply, write_ply};
pub use transform::{
    apply_anisotropic, apply_rotation, apply_scale, apply_similarity, apply_translation,
    AnisotropicTransform, SimilarityTransform,
};

use nalgebra::{Quaternion, UnitQuaternion};

use crate::error::{Error, Result};
use crate::math::{Aabb, Mat3, Vec3};

pub const MAX_SH_DEGREE: usize = 3;

/// Number of SH coefficients per channel for `degree`.
pub const fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub mean: Vec3,
    pub rotation: UnitQuaternion<f64>,
    /// Per-axis standard deviation in the primitive's local frame.
    pub scale: Vec3,
    /// Linear opacity in (0, 1).
    pub opacity: f64,
    /// Coefficient-major: `sh[3 * k + c]` is coefficient `k` of channel `c`.
    pub sh: Vec<f64>,
}

impl GaussianPrimitive {
    /// Degree-0 primitive whose rendered color is `rgb` from every direction.
    pub fn with_color(mean: Vec3, scale: Vec3, opacity: f64, rgb: [f64; 3], degree: usize) -> Self {
        let mut sh = vec![0.0; 3 * sh_coeff_count(degree)];
        for c in 0..3 {
            sh[c] = sh::rgb_to_dc(rgb[c]);
        }
        Self {
            mean,
            rotation: UnitQuaternion::identity(),
            scale,
            opacity,
            sh,
        }
    }

    /// Quaternion from `(w, x, y, z)` components, normalized.
    pub fn quat_from_wxyz(q: [f64; 4]) -> Result<UnitQuaternion<f64>> {
        let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
        let n = raw.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::Validation(format!("quaternion {q:?} has no direction")));
        }
        Ok(UnitQuaternion::new_normalize(raw))
    }

    pub fn quat_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `Σ = R S Sᵀ Rᵀ`.
    pub fn covariance(&self) -> Mat3 {
        let r = self.rotation_matrix();
        let s2 = Mat3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }

    pub fn validate(&self, index: usize, degree: usize) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidPrimitive { index, reason });
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData { index, field: "mean".into() });
        }
        if self.sh.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData { index, field: "sh".into() });
        }
        if (self.rotation.quaternion().norm() - 1.0).abs() > 1e-9 {
            return bad("quaternion not unit length".into());
        }
        if self.scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return bad(format!("scale {:?} must be strictly positive", self.scale.as_slice()));
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0) {
            return bad(format!("opacity {} outside (0, 1)", self.opacity));
        }
        let want = 3 * sh_coeff_count(degree);
        if self.sh.len() != want {
            return bad(format!("{} SH values, expected {want}", self.sh.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplatCloud {
    primitives: Vec<GaussianPrimitive>,
    sh_degree: usize,
}

impl SplatCloud {
    pub fn empty(sh_degree: usize) -> Result<Self> {
        Self::new(Vec::new(), sh_degree)
    }

    pub fn new(primitives: Vec<GaussianPrimitive>, sh_degree: usize) -> Result<Self> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(Error::UnsupportedDegree(sh_degree));
        }
        for (i, p) in primitives.iter().enumerate() {
            p.validate(i, sh_degree)?;
        }
        Ok(Self {
            primitives,
            sh_degree,
        })
    }

    /// Used by transforms whose outputs are valid by construction.
    pub(crate) fn from_parts_unchecked(primitives: Vec<GaussianPrimitive>, sh_degree: usize) -> Self {
        Self {
            primitives,
            sh_degree,
        }
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn primitives(&self) -> &[GaussianPrimitive] {
        &self.primitives
    }

    pub fn into_primitives(self) -> Vec<GaussianPrimitive> {
        self.primitives
    }

    pub fn means(&self) -> Vec<Vec3> {
        self.primitives.iter().map(|p| p.mean).collect()
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(self.primitives.iter().map(|p| &p.mean))
    }

    /// Primitives at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let p = self
                .primitives
                .get(i)
                .ok_or_else(|| Error::NotFound(format!("primitive {i} of {}", self.len())))?;
            out.push(p.clone());
        }
        Ok(Self::from_parts_unchecked(out, self.sh_degree))
    }

    /// Concatenation; both clouds must share a degree.
    pub fn concat(&self, other: &SplatCloud) -> Result<Self> {
        if self.sh_degree != other.sh_degree {
            return Err(Error::DimensionMismatch(format!(
                "SH degrees {} and {}",
                self.sh_degree, other.sh_degree
            )));
        }
        let mut prims = self.primitives.clone();
        prims.extend(other.primitives.iter().cloned());
        Ok(Self::from_parts_unchecked(prims, self.sh_degree))
    }

    /// Same geometry with SH values replaced; `sh` holds one coefficient vector per primitive.
    pub fn with_sh(&self, sh: Vec<Vec<f64>>) -> Result<Self> {
        if sh.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} SH vectors for {} primitives",
                sh.len(),
                self.len()
            )));
        }
        let prims = self
            .primitives
            .iter()
            .zip(sh)
            .map(|(p, sh)| GaussianPrimitive { sh, ..p.clone() })
            .collect();
        Self::new(prims, self.sh_degree)
    }
}
