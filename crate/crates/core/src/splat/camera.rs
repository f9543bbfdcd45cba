use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{check_rotation, Mat3, Vec3};

/// Pinhole camera with world-to-camera extrinsics `X_cam = R·X_world + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Mat3,
    pub translation: Vec3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

impl TryFrom<CameraRecord> for Camera {
    type Error = Error;

    fn try_from(c: CameraRecord) -> Result<Self> {
        let cam = Camera {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation: Mat3::from_row_slice(&c.r),
            translation: Vec3::from(c.t),
        };
        cam.validate()?;
        Ok(cam)
    }
}

impl From<Camera> for CameraRecord {
    fn from(c: Camera) -> Self {
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[3 * i + j] = c.rotation[(i, j)];
            }
        }
        CameraRecord {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            r,
            t: c.translation.into(),
        }
    }
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Mat3,
        translation: Vec3,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` whose optical axis (+z) points at `target`; +y of the image points along `-up`.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fx: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let z = target - eye;
        if z.norm() < 1e-12 {
            return Err(Error::Degenerate("eye coincides with target".into()));
        }
        let z = z.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::Degenerate("up vector parallel to viewing direction".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -(r * eye);
        Self::new(
            fx,
            fx,
            (width as f64 - 1.0) * 0.5,
            (height as f64 - 1.0) * 0.5,
            width,
            height,
            r,
            t,
        )
    }

    pub fn validate(&self) -> Result<()> {
        check_rotation(&self.rotation, 1e-6)?;
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Validation(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("camera has zero-sized image".into()));
        }
        let inside = (0.0..=self.width as f64).contains(&self.cx)
            && (0.0..=self.height as f64).contains(&self.cy);
        if !inside {
            return Err(Error::Validation(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite camera translation".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Unit optical axis in world coordinates.
    pub fn view_direction(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Pixel coordinates and camera-space depth, `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let c = self.to_camera(p);
        if c.z <= 1e-9 {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z))
    }

    /// World point seen at pixel `(u, v)` with camera-space depth `depth`.
    pub fn unproject_point(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let c = Vec3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth);
        self.rotation.transpose() * (c - self.translation)
    }

    /// Same intrinsics, extrinsics composed so that the camera sees `world ↦ R·world`.
    pub fn with_world_rotation(&self, r: &Mat3) -> Self {
        Self {
            rotation: self.rotation * r,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_sees_target_on_axis() {
        let cam = Camera::look_at(Vec3::new(2.0, 1.0, 0.5), Vec3::zeros(), Vec3::z(), 100.0, 64, 48).unwrap();
        let (u, v, z) = cam.project(&Vec3::zeros()).unwrap();
        assert!((u - cam.cx).abs() < 1e-9 && (v - cam.cy).abs() < 1e-9);
        assert!((z - Vec3::new(2.0, 1.0, 0.5).norm()).abs() < 1e-12);
        assert!((cam.position() - Vec3::new(2.0, 1.0, 0.5)).norm() < 1e-12);
        // world up appears towards smaller v
        let (_, v_up, _) = cam.project(&Vec3::new(0.0, 0.0, 0.1)).unwrap();
        assert!(v_up < cam.cy);
    }

    #[test]
    fn json_round_trip() {
        let cam = Camera::look_at(Vec3::new(0.0, -3.0, 1.0), Vec3::zeros(), Vec3::z(), 80.0, 32, 24).unwrap();
        let s = serde_json::to_string(&cam).unwrap();
        assert!(s.contains("\"R\""));
        let back: Camera = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cam);
        let bad = s.replace("\"fx\":80.0", "\"fx\":-1.0");
        assert!(serde_json::from_str::<Camera>(&bad).is_err());
    }
}
