//! Coarse and fine registration of a proxy cloud onto a partial cloud.

mod aniso;
mod coarse;
mod icp;
mod iterative;
mod rotations;
mod umeyama;

pub use aniso::{
    anisotropic_svd, anisotropic_regularized, regularized_objective, scale_from_raw, AnisoSvd,
    Moments, RegularizedFit, ShapeParams,
};
pub use coarse::{coarse_align, CoarseAlignment};
pub use icp::{icp, multi_start_icp, IcpResult};
pub use iterative::{iterative_align, Affine, AlignConfig, AlignResult, IterationMode, IterationReport};
pub use rotations::sample_dispersed_rotations;
pub use umeyama::{kabsch, ransac_umeyama, umeyama, RansacResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    /// Correspondence gate as a multiple of the target's mean bounding-box dimension.
    pub max_corr_dist_factor: f64,
    pub max_iterations: usize,
    pub n_candidate_rotations: usize,
    pub n_start_rotations: usize,
    /// Both clouds are subsampled to at most this many points before ICP.
    pub max_points: usize,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_corr_dist_factor: 0.16,
            max_iterations: 400,
            n_candidate_rotations: 128 * 128,
            n_start_rotations: 128,
            max_points: 1500,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_corr_dist_factor > 0.0) {
            return Err(Error::Validation("icp.max_corr_dist_factor must be positive".into()));
        }
        if self.max_iterations == 0 || self.n_start_rotations == 0 || self.max_points < 3 {
            return Err(Error::Validation(
                "icp.max_iterations and icp.n_start_rotations must be ≥ 1, icp.max_points ≥ 3".into(),
            ));
        }
        if self.n_start_rotations > self.n_candidate_rotations {
            return Err(Error::Validation("icp.n_start_rotations exceeds n_candidate_rotations".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Inlier threshold as a multiple of the target's mean bounding-box dimension.
    pub inlier_dist_factor: f64,
    pub min_sample: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            inlier_dist_factor: 0.01,
            min_sample: 3,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.inlier_dist_factor > 0.0) {
            return Err(Error::Validation(
                "ransac.max_iterations must be ≥ 1 and ransac.inlier_dist_factor positive".into(),
            ));
        }
        if self.min_sample != 3 {
            return Err(Error::Validation("ransac.min_sample must be 3".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeSolverConfig {
    pub s_min: f64,
    pub s_max: f64,
    pub lambda_r: f64,
    pub lambda_s: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for ShapeSolverConfig {
    fn default() -> Self {
        Self {
            s_min: 0.75,
            s_max: 1.5,
            lambda_r: 1e-4,
            lambda_s: 2e-5,
            iterations: 3000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl ShapeSolverConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.s_min && self.s_min < self.s_max && self.s_max.is_finite()) {
            return Err(Error::Validation("shape: need 0 < s_min < s_max".into()));
        }
        if !(self.lambda_r >= 0.0 && self.lambda_s >= 0.0) {
            return Err(Error::Validation("shape: lambdas must be nonnegative".into()));
        }
        let a = self.adam();
        if !(a.learning_rate > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::Validation("shape: invalid optimizer constants".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterSchedule {
    pub total_iterations: usize,
    /// 1-based iterations that run the shape solver instead of the pose solver.
    pub shape_iterations: Vec<usize>,
}

impl Default for IterSchedule {
    fn default() -> Self {
        Self {
            total_iterations: 6,
            shape_iterations: vec![4, 5],
        }
    }
}

impl IterSchedule {
    pub fn validate(&self) -> Result<()> {
        if let Some(&bad) = self
            .shape_iterations
            .iter()
            .find(|&&i| i == 0 || i > self.total_iterations)
        {
            return Err(Error::Validation(format!(
                "schedule: shape iteration {bad} outside 1..={}",
                self.total_iterations
            )));
        }
        Ok(())
    }

    pub fn is_shape(&self, iteration: usize) -> bool {
        self.shape_iterations.contains(&iteration)
    }
}
