use serde::{Deserialize, Serialize};

use super::aniso::anisotropic_regularized;
use super::umeyama::ransac_umeyama;
use super::{IcpConfig, IterSchedule, RansacConfig, ShapeSolverConfig};
use crate::correspond::{subsample_views, Corr3D, CorrespondenceProvider, MatchContext, DEFAULT_MAX_VIEWS};
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::math::{mat_from_row_slice, mat_to_row_vec, Mat3, Vec3};
use crate::splat::{apply_anisotropic, AnisotropicTransform, Camera, SplatCloud};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub icp: IcpConfig,
    pub ransac: RansacConfig,
    pub shape: ShapeSolverConfig,
    pub schedule: IterSchedule,
    pub max_views: usize,
    /// Run RANSAC before the shape solver and keep only its inliers.
    pub shape_ransac_filter: bool,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            icp: IcpConfig::default(),
            ransac: RansacConfig::default(),
            shape: ShapeSolverConfig::default(),
            schedule: IterSchedule::default(),
            max_views: DEFAULT_MAX_VIEWS,
            shape_ransac_filter: false,
            seed: 0,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        self.icp.validate()?;
        self.ransac.validate()?;
        self.shape.validate()?;
        self.schedule.validate()?;
        if self.max_views == 0 {
            return Err(Error::Validation("max_views must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IterationMode {
    Pose,
    Shape,
}

/// One line of the alignment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iter: usize,
    pub mode: IterationMode,
    /// Mean pair distance after this iteration's update.
    pub residual: f64,
    pub transform: AnisotropicTransform,
    pub pairs: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
}

/// General affine map `p ↦ linear·p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "AffineRecord", into = "AffineRecord")]
pub struct Affine {
    pub linear: Mat3,
    pub translation: Vec3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AffineRecord {
    linear: Vec<f64>,
    translation: [f64; 3],
}

impl From<Affine> for AffineRecord {
    fn from(a: Affine) -> Self {
        Self {
            linear: mat_to_row_vec(&a.linear),
            translation: a.translation.into(),
        }
    }
}

impl From<AffineRecord> for Affine {
    fn from(r: AffineRecord) -> Self {
        let mut v = r.linear;
        v.resize(9, f64::NAN);
        Self {
            linear: mat_from_row_slice(&v),
            translation: r.translation.into(),
        }
    }
}

impl Affine {
    pub fn identity() -> Self {
        Self {
            linear: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.linear * p + self.translation
    }

    /// `self ∘ first`.
    pub fn after(&self, first: &Affine) -> Self {
        Self {
            linear: self.linear * first.linear,
            translation: self.linear * first.translation + self.translation,
        }
    }
}

impl From<&AnisotropicTransform> for Affine {
    fn from(t: &AnisotropicTransform) -> Self {
        Self {
            linear: t.linear(),
            translation: t.translation,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlignResult {
    pub cloud: SplatCloud,
    pub reports: Vec<IterationReport>,
    /// Product of all applied transforms.
    pub composed: Affine,
    pub applied: Vec<AnisotropicTransform>,
}

fn mean_residual(pairs: &[Corr3D], t: &AnisotropicTransform) -> f64 {
    pairs.iter().map(|c| (t.apply_point(&c.p_gen) - c.p_par).norm()).sum::<f64>() / pairs.len() as f64
}

/// Alternating pose and shape refinement of a coarsely aligned proxy.
pub fn iterative_align(
    gen: &SplatCloud,
    par: &SplatCloud,
    cams: &[Camera],
    masks: &[Mask],
    provider: &dyn CorrespondenceProvider,
    cfg: &AlignConfig,
) -> Result<AlignResult> {
    cfg.validate()?;
    if cams.len() != masks.len() {
        return Err(Error::DimensionMismatch(format!("{} cameras, {} masks", cams.len(), masks.len())));
    }
    let bbox_dim = par
        .aabb()
        .map(|b| b.mean_dim())
        .ok_or_else(|| Error::InsufficientData("empty partial cloud".into()))?;
    let views = subsample_views(cams.len(), cfg.max_views);

    let mut cloud = gen.clone();
    let mut applied: Vec<AnisotropicTransform> = Vec::new();
    let mut reports = Vec::new();
    let mut composed = Affine::identity();
    let mut last_residual = f64::NAN;
    for iter in 1..=cfg.schedule.total_iterations {
        let mode = if cfg.schedule.is_shape(iter) {
            IterationMode::Shape
        } else {
            IterationMode::Pose
        };
        let ctx = MatchContext {
            par,
            cams,
            masks,
            views: &views,
            applied: &applied,
        };
        let pairs = provider.correspondences(&cloud, &ctx)?;
        let solved = if pairs.len() < 3 {
            Err(Error::InsufficientData(format!("{} pairs", pairs.len())))
        } else {
            solve(&pairs, mode, cfg, bbox_dim)
        };
        let t = match solved {
            Ok(t) => t,
            Err(e @ (Error::InsufficientData(_) | Error::NoConsensus(_) | Error::Degenerate(_))) => {
                log::warn!("iteration {iter} skipped: {e}");
                reports.push(IterationReport {
                    iter,
                    mode,
                    residual: last_residual,
                    transform: AnisotropicTransform::identity(),
                    pairs: pairs.len(),
                    skipped: true,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        cloud = apply_anisotropic(&cloud, &t)?;
        composed = Affine::from(&t).after(&composed);
        last_residual = mean_residual(&pairs, &t);
        log::info!("iteration {iter} ({mode:?}): {} pairs, residual {last_residual:.6e}", pairs.len());
        applied.push(t);
        reports.push(IterationReport {
            iter,
            mode,
            residual: last_residual,
            transform: t,
            pairs: pairs.len(),
            skipped: false,
        });
    }
    if applied.is_empty() && cfg.schedule.total_iterations > 0 {
        return Err(Error::RegistrationFailed {
            stage: "iterative".into(),
            reason: "every iteration was skipped".into(),
        });
    }
    Ok(AlignResult {
        cloud,
        reports,
        composed,
        applied,
    })
}

fn solve(pairs: &[Corr3D], mode: IterationMode, cfg: &AlignConfig, bbox_dim: f64) -> Result<AnisotropicTransform> {
    match mode {
        IterationMode::Pose => Ok(ransac_umeyama(pairs, &cfg.ransac, bbox_dim, cfg.seed)?.transform.to_anisotropic()),
        IterationMode::Shape => {
            let filtered: Vec<Corr3D>;
            let used = if cfg.shape_ransac_filter {
                let r = ransac_umeyama(pairs, &cfg.ransac, bbox_dim, cfg.seed)?;
                filtered = pairs.iter().zip(&r.inliers).filter(|(_, &k)| k).map(|(c, _)| *c).collect();
                &filtered[..]
            } else {
                pairs
            };
            if used.len() < 4 {
                return Err(Error::InsufficientData(format!("{} pairs for the shape solver", used.len())));
            }
            Ok(anisotropic_regularized(used, &cfg.shape)?.transform)
        }
    }
}
