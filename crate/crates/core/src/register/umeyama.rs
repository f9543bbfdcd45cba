use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::RansacConfig;
use crate::correspond::Corr3D;
use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::splat::SimilarityTransform;

struct Centered {
    mu_p: Vec3,
    mu_q: Vec3,
    /// `(1/n) Σ q̃ p̃ᵀ`
    cov: Mat3,
    var_p: f64,
}

fn center(pairs: &[Corr3D]) -> Centered {
    let n = pairs.len() as f64;
    let mu_p = pairs.iter().map(|c| c.p_gen).sum::<Vec3>() / n;
    let mu_q = pairs.iter().map(|c| c.p_par).sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    let mut var_p = 0.0;
    for c in pairs {
        let (p, q) = (c.p_gen - mu_p, c.p_par - mu_q);
        cov += q * p.transpose();
        var_p += p.norm_squared();
    }
    Centered {
        mu_p,
        mu_q,
        cov: cov / n,
        var_p: var_p / n,
    }
}

fn check_spread(pairs: &[Corr3D], mu_p: &Vec3, var_p: f64) -> Result<()> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!("{} pairs, need at least 3", pairs.len())));
    }
    if !(var_p > 0.0) || !var_p.is_finite() {
        return Err(Error::Degenerate("source points coincide".into()));
    }
    // second principal extent of the source points, relative to the first
    let mut scatter = Mat3::zeros();
    for c in pairs {
        let p = c.p_gen - mu_p;
        scatter += p * p.transpose();
    }
    let mut ev: Vec<f64> = scatter.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[1] <= 1e-20 * ev[0].max(f64::MIN_POSITIVE) || ev[1] <= 0.0 {
        return Err(Error::Degenerate("source points are collinear".into()));
    }
    Ok(())
}

/// Rotation `U·diag(1,1,±1)·Vᵀ` maximizing `tr(Rᵀ·cov)`, and the sign-corrected singular value sum.
fn rotation_from_cov(cov: &Mat3) -> Result<(Mat3, f64)> {
    let svd = cov.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::SolverFailure("SVD did not converge".into())),
    };
    let mut d = Vec3::repeat(1.0);
    if (u * vt).determinant() < 0.0 {
        d.z = -1.0;
    }
    let r = u * Mat3::from_diagonal(&d) * vt;
    let trace = svd.singular_values.component_mul(&d).sum();
    Ok((r, trace))
}

/// Least-squares similarity `q ≈ s·R·p + t`.
pub fn umeyama(pairs: &[Corr3D]) -> Result<SimilarityTransform> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!("{} pairs, need at least 3", pairs.len())));
    }
    let c = center(pairs);
    check_spread(pairs, &c.mu_p, c.var_p)?;
    let (r, trace) = rotation_from_cov(&c.cov)?;
    let s = trace / c.var_p;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Degenerate(format!("estimated scale {s}")));
    }
    let t = c.mu_q - s * (r * c.mu_p);
    Ok(SimilarityTransform {
        rotation: r,
        translation: t,
        scale: s,
    })
}

/// Least-squares rigid transform (scale fixed at 1).
pub fn kabsch(pairs: &[Corr3D]) -> Result<SimilarityTransform> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!("{} pairs, need at least 3", pairs.len())));
    }
    let c = center(pairs);
    let (r, _) = rotation_from_cov(&c.cov)?;
    Ok(SimilarityTransform {
        rotation: r,
        translation: c.mu_q - r * c.mu_p,
        scale: 1.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub transform: SimilarityTransform,
    pub inliers: Vec<bool>,
    pub n_inliers: usize,
}

fn inlier_mask(t: &SimilarityTransform, pairs: &[Corr3D], thr: f64) -> Vec<bool> {
    pairs
        .iter()
        .map(|c| (t.apply_point(&c.p_gen) - c.p_par).norm() < thr)
        .collect()
}

/// Umeyama inside a consensus loop over minimal three-pair samples.
///
/// Hypotheses are drawn up front from the seed and scored in parallel; the
/// winner has the most inliers (lowest hypothesis index on ties) and is
/// refit on its inlier set.
pub fn ransac_umeyama(pairs: &[Corr3D], cfg: &RansacConfig, bbox_mean_dim: f64, seed: u64) -> Result<RansacResult> {
    cfg.validate()?;
    let n = pairs.len();
    if n < cfg.min_sample {
        return Err(Error::InsufficientData(format!("{n} pairs, need at least {}", cfg.min_sample)));
    }
    if !(bbox_mean_dim > 0.0) {
        return Err(Error::Degenerate("bounding box has no extent".into()));
    }
    let thr = cfg.inlier_dist_factor * bbox_mean_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Vec<usize>> = (0..cfg.max_iterations)
        .map(|_| sample(&mut rng, n, cfg.min_sample).into_vec())
        .collect();

    let best = samples
        .par_iter()
        .enumerate()
        .map(|(h, idx)| {
            let subset: Vec<Corr3D> = idx.iter().map(|&i| pairs[i]).collect();
            let count = match umeyama(&subset) {
                Ok(t) => pairs
                    .iter()
                    .filter(|c| (t.apply_point(&c.p_gen) - c.p_par).norm() < thr)
                    .count(),
                Err(_) => 0,
            };
            (count, h)
        })
        .reduce(|| (0, usize::MAX), |a, b| {
            if a.0 > b.0 || (a.0 == b.0 && a.1 < b.1) {
                a
            } else {
                b
            }
        });
    if best.0 < cfg.min_sample {
        return Err(Error::NoConsensus(format!(
            "best hypothesis has {} inliers of {n}",
            best.0
        )));
    }
    let subset: Vec<Corr3D> = samples[best.1].iter().map(|&i| pairs[i]).collect();
    let hypothesis = umeyama(&subset)?;
    let mask = inlier_mask(&hypothesis, pairs, thr);
    let inlier_pairs: Vec<Corr3D> = pairs.iter().zip(&mask).filter(|(_, &m)| m).map(|(c, _)| *c).collect();
    let transform = umeyama(&inlier_pairs)?;
    let inliers = inlier_mask(&transform, pairs, thr);
    let n_inliers = inliers.iter().filter(|&&m| m).count();
    if n_inliers < cfg.min_sample {
        return Err(Error::NoConsensus(format!("refit keeps {n_inliers} inliers")));
    }
    Ok(RansacResult {
        transform,
        inliers,
        n_inliers,
    })
}
