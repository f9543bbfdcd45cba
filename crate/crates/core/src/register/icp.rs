use rayon::prelude::*;

use super::umeyama::kabsch;
use super::IcpConfig;
use crate::correspond::Corr3D;
use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::math::{centroid, Aabb, Mat3, Vec3};
use crate::splat::SimilarityTransform;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    /// Rigid (`scale = 1`) map from `src` into `dst`.
    pub transform: SimilarityTransform,
    /// Fraction of `src` points with a neighbour inside the gate.
    pub fitness: f64,
    /// RMS distance over gated pairs; infinite when there are none.
    pub rmse: f64,
    pub iterations: usize,
}

struct Gated {
    pairs: Vec<Corr3D>,
    sq_sum: f64,
}

fn gather(src: &[Vec3], tree: &KdTree, dst: &[Vec3], t: &SimilarityTransform, gate_sq: f64) -> Gated {
    let mut pairs = Vec::new();
    let mut sq_sum = 0.0;
    for p in src {
        if let Some((j, d2)) = tree.nearest(&t.apply_point(p)) {
            if d2 <= gate_sq {
                pairs.push(Corr3D::new(*p, dst[j]));
                sq_sum += d2;
            }
        }
    }
    Gated { pairs, sq_sum }
}

fn check_inputs(src: &[Vec3], dst: &[Vec3]) -> Result<Aabb> {
    if src.len() < 3 || dst.len() < 3 {
        return Err(Error::InsufficientData("ICP needs at least 3 points per cloud".into()));
    }
    if src.iter().chain(dst).any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::Validation("non-finite ICP input".into()));
    }
    Ok(Aabb::from_points(dst).expect("nonempty"))
}

fn icp_with_tree(src: &[Vec3], dst: &[Vec3], tree: &KdTree, gate: f64, init: &Mat3, cfg: &IcpConfig) -> IcpResult {
    let c = centroid(src);
    let mut t = SimilarityTransform {
        rotation: *init,
        translation: c - init * c,
        scale: 1.0,
    };
    let gate_sq = gate * gate;
    let mut iterations = 0;
    for _ in 0..cfg.max_iterations {
        let g = gather(src, tree, dst, &t, gate_sq);
        let Ok(next) = kabsch(&g.pairs) else { break };
        iterations += 1;
        let dr = (next.rotation - t.rotation).amax();
        let dt = (next.translation - t.translation).amax();
        t = next;
        if dr < 1e-6 && dt < 1e-6 * gate.max(1e-300) {
            break;
        }
    }
    let g = gather(src, tree, dst, &t, gate_sq);
    let n = g.pairs.len();
    IcpResult {
        transform: t,
        fitness: n as f64 / src.len() as f64,
        rmse: if n == 0 { f64::INFINITY } else { (g.sq_sum / n as f64).sqrt() },
        iterations,
    }
}

/// Point-to-point ICP from a rotation about the source centroid.
pub fn icp(src: &[Vec3], dst: &[Vec3], init_rotation: &Mat3, cfg: &IcpConfig) -> Result<IcpResult> {
    cfg.validate()?;
    let bbox = check_inputs(src, dst)?;
    let tree = KdTree::new(dst);
    Ok(icp_with_tree(src, dst, &tree, cfg.max_corr_dist_factor * bbox.mean_dim(), init_rotation, cfg))
}

/// ICP from every start rotation; returns the winning start index and its result.
pub fn multi_start_icp(src: &[Vec3], dst: &[Vec3], starts: &[Mat3], cfg: &IcpConfig) -> Result<(usize, IcpResult)> {
    cfg.validate()?;
    if starts.is_empty() {
        return Err(Error::Validation("no start rotations".into()));
    }
    let bbox = check_inputs(src, dst)?;
    let tree = KdTree::new(dst);
    let gate = cfg.max_corr_dist_factor * bbox.mean_dim();
    let results: Vec<IcpResult> = starts
        .par_iter()
        .map(|r| icp_with_tree(src, dst, &tree, gate, r, cfg))
        .collect();
    let mut best = 0;
    for (i, r) in results.iter().enumerate().skip(1) {
        let b = &results[best];
        if r.fitness > b.fitness || (r.fitness == b.fitness && r.rmse < b.rmse) {
            best = i;
        }
    }
    Ok((best, results[best]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{axis_angle, rotation_angle, rotation_distance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(seed: u64, n: usize) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.6..0.6), rng.gen_range(-0.3..0.3)))
            .collect()
    }

    #[test]
    fn identical_clouds() {
        let p = blob(1, 300);
        let r = icp(&p, &p, &Mat3::identity(), &IcpConfig::default()).unwrap();
        assert_eq!(r.fitness, 1.0);
        assert!(r.rmse < 1e-12);
        assert!(rotation_angle(&r.transform.rotation) < 1e-12);
    }

    #[test]
    fn small_rotation_recovered() {
        let src = blob(2, 400);
        let rt = axis_angle(Vec3::new(0.3, 1.0, 0.2), 5f64.to_radians());
        let dst: Vec<Vec3> = src.iter().map(|p| rt * p).collect();
        let r = icp(&src, &dst, &Mat3::identity(), &IcpConfig::default()).unwrap();
        assert!(rotation_distance(&r.transform.rotation, &rt) < 0.1f64.to_radians());
        assert!(r.fitness > 0.99);
    }

    #[test]
    fn no_overlap_is_zero_fitness() {
        let src = blob(3, 50);
        let dst: Vec<Vec3> = src.iter().map(|p| p + Vec3::new(100.0, 0.0, 0.0)).collect();
        let r = icp(&src, &dst, &Mat3::identity(), &IcpConfig::default()).unwrap();
        assert_eq!(r.fitness, 0.0);
        assert!(r.rmse.is_infinite());
    }

    #[test]
    fn multi_start_prefers_first_on_ties() {
        let p = blob(4, 100);
        let starts = vec![Mat3::identity(); 3];
        let (i, r) = multi_start_icp(&p, &p, &starts, &IcpConfig::default()).unwrap();
        assert_eq!(i, 0);
        assert_eq!(r.fitness, 1.0);
    }
}
