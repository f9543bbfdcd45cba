use nalgebra::{Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::sh::ShRotation;
use super::{GaussianPrimitive, SplatCloud};
use crate::error::{Error, Result};
use crate::math::{check_rotation, mat_to_row_vec, Mat3, Vec3, ROTATION_TOL};

/// `p ↦ s·R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SimilarityRecord", into = "SimilarityRecord")]
pub struct SimilarityTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub scale: f64,
}

/// `p ↦ R·R′ᵀ·diag(S)·R′·p + t`; `frame` is `R′`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AnisotropicRecord", into = "AnisotropicRecord")]
pub struct AnisotropicTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub scale: Vec3,
    pub frame: Mat3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimilarityRecord {
    rotation: Vec<f64>,
    translation: [f64; 3],
    scale: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnisotropicRecord {
    rotation: Vec<f64>,
    translation: [f64; 3],
    scale: [f64; 3],
    frame: Vec<f64>,
}

fn mat_from_record(v: &[f64], what: &str) -> Result<Mat3> {
    if v.len() != 9 {
        return Err(Error::Validation(format!("{what} needs 9 values, got {}", v.len())));
    }
    Ok(Mat3::from_row_slice(v))
}

impl TryFrom<SimilarityRecord> for SimilarityTransform {
    type Error = Error;
    fn try_from(r: SimilarityRecord) -> Result<Self> {
        Self::new(mat_from_record(&r.rotation, "rotation")?, r.translation.into(), r.scale)
    }
}

impl From<SimilarityTransform> for SimilarityRecord {
    fn from(t: SimilarityTransform) -> Self {
        Self {
            rotation: mat_to_row_vec(&t.rotation),
            translation: t.translation.into(),
            scale: t.scale,
        }
    }
}

impl TryFrom<AnisotropicRecord> for AnisotropicTransform {
    type Error = Error;
    fn try_from(r: AnisotropicRecord) -> Result<Self> {
        Self::new(
            mat_from_record(&r.rotation, "rotation")?,
            r.translation.into(),
            r.scale.into(),
            mat_from_record(&r.frame, "frame")?,
        )
    }
}

impl From<AnisotropicTransform> for AnisotropicRecord {
    fn from(t: AnisotropicTransform) -> Self {
        Self {
            rotation: mat_to_row_vec(&t.rotation),
            translation: t.translation.into(),
            scale: t.scale.into(),
            frame: mat_to_row_vec(&t.frame),
        }
    }
}

fn check_scale(s: &Vec3) -> Result<()> {
    if s.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidScale(format!("{:?} must be finite and positive", s.as_slice())));
    }
    Ok(())
}

impl SimilarityTransform {
    pub fn new(rotation: Mat3, translation: Vec3, scale: f64) -> Result<Self> {
        check_rotation(&rotation, ROTATION_TOL)?;
        check_scale(&Vec3::repeat(scale))?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
            scale,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn after(&self, first: &SimilarityTransform) -> Self {
        Self {
            rotation: self.rotation * first.rotation,
            translation: self.scale * (self.rotation * first.translation) + self.translation,
            scale: self.scale * first.scale,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
            scale: 1.0 / self.scale,
        }
    }

    pub fn to_anisotropic(&self) -> AnisotropicTransform {
        AnisotropicTransform {
            rotation: self.rotation,
            translation: self.translation,
            scale: Vec3::repeat(self.scale),
            frame: Mat3::identity(),
        }
    }
}

impl AnisotropicTransform {
    pub fn new(rotation: Mat3, translation: Vec3, scale: Vec3, frame: Mat3) -> Result<Self> {
        check_rotation(&rotation, ROTATION_TOL)?;
        check_rotation(&frame, ROTATION_TOL)?;
        check_scale(&scale)?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
            scale,
            frame,
        })
    }

    pub fn identity() -> Self {
        SimilarityTransform::identity().to_anisotropic()
    }

    /// The 3×3 linear part `R·R′ᵀ·diag(S)·R′`.
    pub fn linear(&self) -> Mat3 {
        self.rotation * self.frame.transpose() * Mat3::from_diagonal(&self.scale) * self.frame
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.linear() * p + self.translation
    }

    pub fn apply_points(&self, points: &[Vec3]) -> Vec<Vec3> {
        let a = self.linear();
        points.iter().map(|p| a * p + self.translation).collect()
    }
}

fn unit_quat(r: &Mat3) -> UnitQuaternion<f64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    UnitQuaternion::new_normalize(q.into_inner())
}

fn map_primitives(cloud: &SplatCloud, f: impl Fn(&GaussianPrimitive) -> GaussianPrimitive) -> SplatCloud {
    SplatCloud::from_parts_unchecked(cloud.primitives().iter().map(f).collect(), cloud.sh_degree())
}

/// Rotates means, orientations and SH coefficients by `r` about the origin.
pub fn apply_rotation(cloud: &SplatCloud, r: &Mat3) -> Result<SplatCloud> {
    check_rotation(r, ROTATION_TOL)?;
    let q = unit_quat(r);
    let sh_rot = ShRotation::new(r, cloud.sh_degree())?;
    Ok(map_primitives(cloud, |p| GaussianPrimitive {
        mean: r * p.mean,
        rotation: UnitQuaternion::new_normalize((q * p.rotation).into_inner()),
        scale: p.scale,
        opacity: p.opacity,
        sh: sh_rot.apply(&p.sh),
    }))
}

/// Multiplies means and per-axis extents by `s` componentwise.
///
/// The extent update ignores each primitive's own orientation, so it is exact
/// only for isotropic `s` or axis-aligned primitives.
pub fn apply_scale(cloud: &SplatCloud, s: &Vec3) -> Result<SplatCloud> {
    check_scale(s)?;
    Ok(map_primitives(cloud, |p| GaussianPrimitive {
        mean: p.mean.component_mul(s),
        scale: p.scale.component_mul(s),
        ..p.clone()
    }))
}

pub fn apply_translation(cloud: &SplatCloud, t: &Vec3) -> Result<SplatCloud> {
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite translation".into()));
    }
    Ok(map_primitives(cloud, |p| GaussianPrimitive {
        mean: p.mean + t,
        ..p.clone()
    }))
}

/// Scale, then rotate, then translate.
pub fn apply_similarity(cloud: &SplatCloud, t: &SimilarityTransform) -> Result<SplatCloud> {
    let c = apply_scale(cloud, &Vec3::repeat(t.scale))?;
    let c = apply_rotation(&c, &t.rotation)?;
    apply_translation(&c, &t.translation)
}

/// Rotate by `R′`, scale by `S`, rotate by `R′ᵀ`, rotate by `R`, translate by `t`.
pub fn apply_anisotropic(cloud: &SplatCloud, t: &AnisotropicTransform) -> Result<SplatCloud> {
    let c = apply_rotation(cloud, &t.frame)?;
    let c = apply_scale(&c, &t.scale)?;
    let c = apply_rotation(&c, &t.frame.transpose())?;
    let c = apply_rotation(&c, &t.rotation)?;
    apply_translation(&c, &t.translation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{random_rotation, rot_z};
    use crate::splat::sh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, degree: usize) -> SplatCloud {
        let k = 3 * crate::splat::sh_coeff_count(degree);
        let prims = (0..n)
            .map(|_| GaussianPrimitive {
                mean: Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                rotation: crate::math::random_unit_quaternion(rng),
                scale: Vec3::new(rng.gen_range(0.01..0.1), rng.gen_range(0.01..0.1), rng.gen_range(0.01..0.1)),
                opacity: rng.gen_range(0.05..0.95),
                sh: (0..k).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            })
            .collect();
        SplatCloud::new(prims, degree).unwrap()
    }

    #[test]
    fn quarter_turn_moves_x_to_y() {
        let p = GaussianPrimitive::with_color(Vec3::x(), Vec3::repeat(0.1), 0.5, [0.5; 3], 0);
        let c = SplatCloud::new(vec![p], 0).unwrap();
        let out = apply_rotation(&c, &rot_z(std::f64::consts::FRAC_PI_2)).unwrap();
        assert!((out.primitives()[0].mean - Vec3::y()).norm() < 1e-12);
    }

    #[test]
    fn rotation_transforms_covariance_and_colors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_cloud(&mut rng, 20, 3);
        let r = random_rotation(&mut rng);
        let out = apply_rotation(&c, &r).unwrap();
        for (a, b) in c.primitives().iter().zip(out.primitives()) {
            let want = r * a.covariance() * r.transpose();
            assert!((b.covariance() - want).amax() < 1e-12);
            let d = Vec3::new(0.3, -0.4, 0.5).normalize();
            let ca = sh::evaluate(&a.sh, 3, &(r.transpose() * d));
            let cb = sh::evaluate(&b.sh, 3, &d);
            for k in 0..3 {
                assert!((ca[k] - cb[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scale_rules() {
        let p = GaussianPrimitive::with_color(Vec3::repeat(1.0), Vec3::repeat(0.1), 0.5, [0.5; 3], 0);
        let c = SplatCloud::new(vec![p], 0).unwrap();
        let out = apply_scale(&c, &Vec3::repeat(2.0)).unwrap();
        assert_eq!(out.primitives()[0].mean, Vec3::repeat(2.0));
        assert_eq!(out.primitives()[0].scale, Vec3::repeat(0.2));
        assert!(matches!(apply_scale(&c, &Vec3::new(1.0, 0.0, 1.0)), Err(Error::InvalidScale(_))));

        // axis-aligned primitive: Σ' = S Σ S
        let s = Vec3::new(2.0, 1.0, 1.0);
        let mut p = GaussianPrimitive::with_color(Vec3::zeros(), Vec3::new(0.1, 0.2, 0.3), 0.5, [0.5; 3], 0);
        p.rotation = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), std::f64::consts::PI);
        let c = SplatCloud::new(vec![p.clone()], 0).unwrap();
        let out = apply_scale(&c, &s).unwrap();
        let d = Mat3::from_diagonal(&s);
        assert!((out.primitives()[0].covariance() - d * p.covariance() * d).amax() < 1e-10);
    }

    #[test]
    fn anisotropic_point_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = random_cloud(&mut rng, 30, 1);
        let t = AnisotropicTransform::new(
            random_rotation(&mut rng),
            Vec3::new(0.1, -0.2, 0.3),
            Vec3::new(1.3, 0.8, 1.1),
            random_rotation(&mut rng),
        )
        .unwrap();
        let out = apply_anisotropic(&c, &t).unwrap();
        for (a, b) in c.primitives().iter().zip(out.primitives()) {
            assert!((t.apply_point(&a.mean) - b.mean).norm() < 1e-12);
        }

        let t = AnisotropicTransform::new(Mat3::identity(), Vec3::zeros(), Vec3::new(2.0, 1.0, 1.0), Mat3::identity()).unwrap();
        let p = GaussianPrimitive::with_color(Vec3::repeat(1.0), Vec3::repeat(0.1), 0.5, [0.5; 3], 0);
        let out = apply_anisotropic(&SplatCloud::new(vec![p], 0).unwrap(), &t).unwrap();
        assert!((out.primitives()[0].mean - Vec3::new(2.0, 1.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn similarity_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = SimilarityTransform::new(random_rotation(&mut rng), Vec3::new(1.0, 2.0, 3.0), 1.7).unwrap();
        let b = SimilarityTransform::new(random_rotation(&mut rng), Vec3::new(-1.0, 0.5, 0.0), 0.6).unwrap();
        let p = Vec3::new(0.2, -0.7, 0.4);
        assert!((a.after(&b).apply_point(&p) - a.apply_point(&b.apply_point(&p))).norm() < 1e-12);
        assert!((a.inverse().apply_point(&a.apply_point(&p)) - p).norm() < 1e-12);
        let json = serde_json::to_string(&a).unwrap();
        let back: SimilarityTransform = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }
}
