use std::path::Path;

use rayon::prelude::*;

use super::{lift_matches, mutual_nn_match, render_features, Corr3D, CorrespondenceFile};
use crate::error::{Error, Result};
use crate::grid::{DepthMap, Mask};
use crate::render::render_weights;
use crate::splat::{AnisotropicTransform, Camera, SplatCloud};

/// Everything a provider may look at besides the current proxy state.
pub struct MatchContext<'a> {
    pub par: &'a SplatCloud,
    pub cams: &'a [Camera],
    pub masks: &'a [Mask],
    /// Views to match in, indices into `cams`/`masks`.
    pub views: &'a [usize],
    /// Transforms applied to the proxy since alignment started, oldest first.
    pub applied: &'a [AnisotropicTransform],
}

pub trait CorrespondenceProvider: Sync {
    fn correspondences(&self, gen: &SplatCloud, ctx: &MatchContext<'_>) -> Result<Vec<Corr3D>>;
}

/// Pairs proxy primitive `i`'s current mean with a fixed target point.
#[derive(Debug, Clone)]
pub struct ExactProvider {
    targets: Vec<(usize, crate::Vec3)>,
}

impl ExactProvider {
    pub fn new(targets: Vec<(usize, crate::Vec3)>) -> Self {
        Self { targets }
    }

    /// Partial primitive `j` was derived from proxy primitive `kept[j]`.
    pub fn from_kept(kept: &[usize], par: &SplatCloud) -> Result<Self> {
        if kept.len() != par.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} kept indices for {} partial primitives",
                kept.len(),
                par.len()
            )));
        }
        Ok(Self::new(kept.iter().copied().zip(par.means()).collect()))
    }
}

impl CorrespondenceProvider for ExactProvider {
    fn correspondences(&self, gen: &SplatCloud, _ctx: &MatchContext<'_>) -> Result<Vec<Corr3D>> {
        let prims = gen.primitives();
        self.targets
            .iter()
            .map(|&(i, q)| {
                prims
                    .get(i)
                    .map(|p| Corr3D::new(p.mean, q))
                    .ok_or_else(|| Error::NotFound(format!("proxy primitive {i}")))
            })
            .collect()
    }
}

/// Matches rendered per-primitive descriptors under each camera and lifts them through depth.
#[derive(Debug, Clone)]
pub struct RenderMatchProvider {
    gen_descriptors: Vec<Vec<f64>>,
    par_descriptors: Vec<Vec<f64>>,
    top_k: usize,
}

impl RenderMatchProvider {
    pub fn new(gen_descriptors: Vec<Vec<f64>>, par_descriptors: Vec<Vec<f64>>, top_k: usize) -> Self {
        Self {
            gen_descriptors,
            par_descriptors,
            top_k,
        }
    }

    /// Matches in one view, with confidences.
    pub fn match_view(
        &self,
        gen: &SplatCloud,
        par: &SplatCloud,
        cam: &Camera,
        mask: &Mask,
    ) -> Result<(Vec<Corr3D>, Vec<f64>)> {
        let f_gen = render_features(gen, cam, &self.gen_descriptors)?;
        let f_par = render_features(par, cam, &self.par_descriptors)?;
        let matches = mutual_nn_match(&f_gen, &f_par, mask, self.top_k)?;
        let lifted = lift_matches(&matches, &surface_depth(gen, cam), &surface_depth(par, cam), cam);
        Ok((lifted.pairs, lifted.confidences))
    }
}

/// Opacity-normalized depth, zero where coverage is below one half.
pub fn surface_depth(cloud: &SplatCloud, cam: &Camera) -> DepthMap {
    let w = render_weights(cloud, cam);
    let z = crate::render::primitive_depths(cloud, cam);
    let depth = w.compose_scalar(&z);
    let alpha = w.alpha();
    DepthMap::from_fn(cam.width, cam.height, |x, y| {
        let a = *alpha.get(x, y);
        if a > 0.5 {
            *depth.get(x, y) / a
        } else {
            0.0
        }
    })
}

impl CorrespondenceProvider for RenderMatchProvider {
    fn correspondences(&self, gen: &SplatCloud, ctx: &MatchContext<'_>) -> Result<Vec<Corr3D>> {
        let per_view: Vec<Vec<Corr3D>> = ctx
            .views
            .par_iter()
            .map(|&v| {
                let cam = ctx.cams.get(v).ok_or_else(|| Error::NotFound(format!("view {v}")))?;
                let mask = ctx.masks.get(v).ok_or_else(|| Error::NotFound(format!("mask {v}")))?;
                Ok(self.match_view(gen, ctx.par, cam, mask)?.0)
            })
            .collect::<Result<_>>()?;
        Ok(per_view.into_iter().flatten().collect())
    }
}

/// Fixed pairs from disk, with proxy points carried along by every applied transform.
#[derive(Debug, Clone)]
pub struct FileProvider {
    pairs: Vec<Corr3D>,
}

impl FileProvider {
    pub fn new(pairs: Vec<Corr3D>) -> Self {
        Self { pairs }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(CorrespondenceFile::load(path)?.corr()))
    }
}

impl CorrespondenceProvider for FileProvider {
    fn correspondences(&self, _gen: &SplatCloud, ctx: &MatchContext<'_>) -> Result<Vec<Corr3D>> {
        Ok(self
            .pairs
            .iter()
            .map(|c| {
                let p = ctx.applied.iter().fold(c.p_gen, |p, t| t.apply_point(&p));
                Corr3D::new(p, c.p_par)
            })
            .collect())
    }
}
