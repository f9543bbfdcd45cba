use super::icp::{multi_start_icp, IcpResult};
use super::rotations::sample_dispersed_rotations;
use super::IcpConfig;
use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::splat::{hull_centroid_or_mean, SimilarityTransform, SplatCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseAlignment {
    /// Full map from the proxy frame into the partial frame.
    pub transform: SimilarityTransform,
    /// Scale and centroid alignment only.
    pub initial: SimilarityTransform,
    pub icp: IcpResult,
    pub start_index: usize,
}

/// Evenly strided subset of at most `max` points.
pub(crate) fn stride_subsample(points: &[Vec3], max: usize) -> Vec<Vec3> {
    if points.len() <= max {
        return points.to_vec();
    }
    (0..max).map(|i| points[i * points.len() / max]).collect()
}

/// Bounding-box scale, hull-centroid translation, then multi-start ICP.
pub fn coarse_align(gen: &SplatCloud, par: &SplatCloud, cfg: &IcpConfig, seed: u64) -> Result<CoarseAlignment> {
    cfg.validate()?;
    let (Some(bg), Some(bp)) = (gen.aabb(), par.aabb()) else {
        return Err(Error::InsufficientData("coarse alignment needs nonempty clouds".into()));
    };
    let (vg, vp) = (bg.volume(), bp.volume());
    if !(vg > 0.0) || !(vp > 0.0) {
        return Err(Error::Degenerate(format!("zero-volume bounding box (proxy {vg}, partial {vp})")));
    }
    let s = (vp / vg).cbrt();
    let gen_means = gen.means();
    let par_means = par.means();
    let c_gen = hull_centroid_or_mean(&gen_means).centroid;
    let c_par = hull_centroid_or_mean(&par_means).centroid;
    let initial = SimilarityTransform {
        rotation: Mat3::identity(),
        translation: c_par - s * c_gen,
        scale: s,
    };
    let src: Vec<Vec3> = stride_subsample(&gen_means, cfg.max_points)
        .iter()
        .map(|p| initial.apply_point(p))
        .collect();
    let dst = stride_subsample(&par_means, cfg.max_points);
    let starts = sample_dispersed_rotations(cfg.n_candidate_rotations, cfg.n_start_rotations, seed)?;
    let (start_index, icp) = multi_start_icp(&src, &dst, &starts, cfg)?;
    Ok(CoarseAlignment {
        transform: icp.transform.after(&initial),
        initial,
        icp,
        start_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rotation_angle;
    use crate::splat::{apply_similarity, GaussianPrimitive};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(seed: u64) -> SplatCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prims = (0..400)
            .map(|_| {
                let p = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.25..0.25));
                GaussianPrimitive::with_color(p, Vec3::repeat(0.02), 0.8, [0.5, 0.5, 0.5], 0)
            })
            .collect();
        SplatCloud::new(prims, 0).unwrap()
    }

    fn quick() -> IcpConfig {
        IcpConfig {
            n_candidate_rotations: 256,
            n_start_rotations: 8,
            ..Default::default()
        }
    }

    #[test]
    fn self_alignment_is_identity() {
        let c = cloud(1);
        let a = coarse_align(&c, &c, &quick(), 0).unwrap();
        assert!((a.transform.scale - 1.0).abs() < 1e-12);
        assert!(rotation_angle(&a.transform.rotation) < 1e-6);
        assert!(a.transform.translation.norm() < 1e-6);
    }

    #[test]
    fn half_scale_gives_two() {
        let c = cloud(2);
        let half = apply_similarity(&c, &SimilarityTransform::new(Mat3::identity(), Vec3::zeros(), 0.5).unwrap()).unwrap();
        let a = coarse_align(&half, &c, &quick(), 0).unwrap();
        assert!((a.initial.scale - 2.0).abs() < 1e-6);
    }

    #[test]
    fn flat_cloud_is_degenerate() {
        let prims = (0..10)
            .map(|i| GaussianPrimitive::with_color(Vec3::new(i as f64, 0.0, 0.0), Vec3::repeat(0.1), 0.5, [0.5; 3], 0))
            .collect();
        let flat = SplatCloud::new(prims, 0).unwrap();
        assert!(matches!(coarse_align(&flat, &cloud(3), &quick(), 0), Err(Error::Degenerate(_))));
    }
}
