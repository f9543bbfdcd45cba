use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::DegradeConfig;
use crate::error::{Error, Result};
use crate::math::rotation_distance;
use crate::render::render_weights;
use crate::splat::{Camera, SplatCloud};

/// Splits views into `(train, test)`: the `⌈fraction·N⌉` views closest to a
/// seeded start view in joint position/orientation distance become test views.
pub fn drop_views(cams: &[Camera], drop_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if cams.len() < 2 {
        return Err(Error::InsufficientData("view dropping needs at least 2 views".into()));
    }
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(Error::Validation(format!("drop fraction {drop_fraction} outside [0, 1)")));
    }
    let n = cams.len();
    let n_test = ((drop_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rand::Rng::gen_range(&mut rng, 0..n);
    let s = &cams[start];
    let pos: Vec<f64> = cams.iter().map(|c| (c.position() - s.position()).norm()).collect();
    let rot: Vec<f64> = cams.iter().map(|c| rotation_distance(&c.rotation, &s.rotation)).collect();
    let norm = |v: &[f64]| {
        let m = v.iter().copied().fold(0.0, f64::max);
        if m > 0.0 { m } else { 1.0 }
    };
    let (pm, rm) = (norm(&pos), norm(&rot));
    let mut order: Vec<(f64, usize)> = (0..n).map(|i| (pos[i] / pm + rot[i] / rm, i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut test: Vec<usize> = order[..n_test].iter().map(|&(_, i)| i).collect();
    let mut train: Vec<usize> = order[n_test..].iter().map(|&(_, i)| i).collect();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Largest blend weight each primitive receives over `cams`.
pub fn visibility(cloud: &SplatCloud, cams: &[Camera]) -> Vec<f64> {
    let per: Vec<Vec<f64>> = cams
        .par_iter()
        .map(|c| render_weights(cloud, c).max_weight_per_primitive(cloud.len()))
        .collect();
    let mut out = vec![0.0f64; cloud.len()];
    for v in per {
        out.iter_mut().zip(v).for_each(|(o, w)| *o = (*o).max(w));
    }
    out
}

#[derive(Debug, Clone)]
pub struct Degraded {
    pub cloud: SplatCloud,
    /// Source index of every surviving primitive.
    pub kept: Vec<usize>,
}

pub(crate) fn degrade_with_visibility(cloud: &SplatCloud, vis: &[f64], cfg: &DegradeConfig, seed: u64) -> Result<Degraded> {
    cfg.validate()?;
    let kept: Vec<usize> = (0..cloud.len()).filter(|&i| vis[i] >= cfg.coverage_threshold).collect();
    if kept.is_empty() {
        log::warn!("degradation removed every primitive");
        return Ok(Degraded {
            cloud: SplatCloud::empty(cloud.sh_degree())?,
            kept,
        });
    }
    let dim = cloud.aabb().map(|b| b.mean_dim()).unwrap_or(0.0);
    let sigma = cfg.jitter_factor * dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prims = cloud.subset(&kept)?.into_primitives();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Validation(e.to_string()))?;
        for p in prims.iter_mut() {
            for k in 0..3 {
                p.mean[k] += normal.sample(&mut rng);
            }
        }
    }
    Ok(Degraded {
        cloud: SplatCloud::new(prims, cloud.sh_degree())?,
        kept,
    })
}

/// Keeps primitives seen by some training view (occluded by `context`) and jitters them.
pub fn degrade_object(cloud: &SplatCloud, context: &SplatCloud, train_cams: &[Camera], cfg: &DegradeConfig, seed: u64) -> Result<Degraded> {
    if cloud.is_empty() {
        return Err(Error::InsufficientData("cannot degrade an empty cloud".into()));
    }
    let scene = context.concat(cloud)?;
    let vis = visibility(&scene, train_cams);
    degrade_with_visibility(cloud, &vis[context.len()..], cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::splat::GaussianPrimitive;
    use crate::synth::camera_ring;

    fn ring(n: usize) -> Vec<Camera> {
        camera_ring(n, 3.0, 1.0, Vec3::zeros(), 60.0, 48, 32).unwrap()
    }

    #[test]
    fn split_sizes() {
        let (tr, te) = drop_views(&ring(30), 2.0 / 3.0, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (10, 20));
        let (tr, te) = drop_views(&ring(28), 6.0 / 7.0, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (4, 24));
        let (tr, te) = drop_views(&ring(35), 6.0 / 7.0, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (5, 30));
    }

    #[test]
    fn split_partitions_and_is_contiguous() {
        for seed in 0..10 {
            let n = 24;
            let (tr, te) = drop_views(&ring(n), 0.5, seed).unwrap();
            let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            // contiguous on the ring: exactly one wrap-around boundary between test and train
            let is_test: Vec<bool> = (0..n).map(|i| te.contains(&i)).collect();
            let changes = (0..n).filter(|&i| is_test[i] != is_test[(i + 1) % n]).count();
            assert_eq!(changes, 2);
        }
    }

    #[test]
    fn full_coverage_only_jitters() {
        let prims = (0..50)
            .map(|i| {
                let a = i as f64 * 0.4;
                GaussianPrimitive::with_color(Vec3::new(0.3 * a.cos(), 0.3 * a.sin(), 0.1 * (i % 5) as f64), Vec3::repeat(0.05), 0.5, [0.5; 3], 0)
            })
            .collect();
        let cloud = SplatCloud::new(prims, 0).unwrap();
        let d = degrade_object(&cloud, &SplatCloud::empty(0).unwrap(), &ring(12), &DegradeConfig::default(), 2).unwrap();
        assert_eq!(d.kept, (0..50).collect::<Vec<_>>());
        let dim = cloud.aabb().unwrap().mean_dim();
        for (a, b) in d.cloud.primitives().iter().zip(cloud.primitives()) {
            assert!((a.mean - b.mean).norm() < 10.0 * 0.002 * dim);
            assert_eq!(a.scale, b.scale);
        }
    }

    #[test]
    fn survivors_lie_in_front_of_single_view() {
        let prims = (0..200)
            .map(|i| {
                let a = i as f64 * 0.031 * std::f64::consts::TAU;
                GaussianPrimitive::with_color(Vec3::new(4.0 * a.cos(), 4.0 * a.sin(), 0.0), Vec3::repeat(0.02), 0.9, [0.5; 3], 0)
            })
            .collect();
        let cloud = SplatCloud::new(prims, 0).unwrap();
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 1.0), Vec3::z(), 30.0, 48, 32).unwrap();
        let cfg = DegradeConfig { jitter_factor: 0.0, ..Default::default() };
        let d = degrade_object(&cloud, &SplatCloud::empty(0).unwrap(), &[cam.clone()], &cfg, 0).unwrap();
        assert!(!d.kept.is_empty() && d.kept.len() < 200);
        for p in d.cloud.primitives() {
            let (_, _, z) = cam.project(&p.mean).unwrap();
            assert!(z > 0.0);
        }
    }
}
