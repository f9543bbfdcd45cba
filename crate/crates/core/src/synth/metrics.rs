//! Point-set and mask metrics.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::kdtree::KdTree;
use crate::math::Vec3;

/// Largest set size solved by exact assignment.
pub const EMD_CAP: usize = 512;

fn mean_nn(from: &[Vec3], to: &KdTree) -> f64 {
    let sum: f64 = from
        .iter()
        .map(|p| to.nearest(p).map(|(_, d2)| d2.sqrt()).unwrap_or(f64::INFINITY))
        .sum();
    sum / from.len() as f64
}

/// `(mean_a min_b |a − b| + mean_b min_a |a − b|) / 2`.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("chamfer distance of an empty set".into()));
    }
    let (ta, tb) = (KdTree::new(a), KdTree::new(b));
    Ok(0.5 * (mean_nn(a, &tb) + mean_nn(b, &ta)))
}

/// Minimum-cost perfect matching on a square cost matrix (row-major); returns `col[row]`.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    // shortest augmenting paths with potentials, 1-based internally
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            col[p[j] - 1] = j - 1;
        }
    }
    col
}

fn resample(points: &[Vec3], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    if points.len() == n {
        return points.to_vec();
    }
    let mut idx = sample(rng, points.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i]).collect()
}

/// Mean matched distance under the optimal one-to-one assignment.
///
/// Both sets are resampled (seeded, without replacement) to
/// `min(|a|, |b|, EMD_CAP)` points first.
pub fn emd(a: &[Vec3], b: &[Vec3], seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("earth mover's distance of an empty set".into()));
    }
    let n = a.len().min(b.len()).min(EMD_CAP);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ra = resample(a, n, &mut rng);
    let rb = resample(b, n, &mut rng);
    let cost: Vec<f64> = ra.iter().flat_map(|p| rb.iter().map(move |q| (p - q).norm())).collect();
    let col = min_cost_assignment(&cost, n);
    Ok(col.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64)
}

/// Mean intersection over union; views where both masks are empty are skipped.
pub fn miou(pred: &[Mask], gt: &[Mask]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!("{} predicted masks, {} reference masks", pred.len(), gt.len())));
    }
    let mut sum = 0.0;
    let mut used = 0;
    for (p, g) in pred.iter().zip(gt) {
        if !p.same_shape(g) {
            return Err(Error::DimensionMismatch(format!(
                "mask sizes {}x{} and {}x{}",
                p.width(),
                p.height(),
                g.width(),
                g.height()
            )));
        }
        let (mut inter, mut uni) = (0usize, 0usize);
        for (&x, &y) in p.data().iter().zip(g.data()) {
            inter += (x && y) as usize;
            uni += (x || y) as usize;
        }
        if uni > 0 {
            sum += inter as f64 / uni as f64;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::InsufficientData("every mask pair is empty".into()));
    }
    Ok(sum / used as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cloud(seed: u64, n: usize) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect()
    }

    #[test]
    fn chamfer_basics() {
        let a = vec![Vec3::zeros(), Vec3::x()];
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        let b: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(0.0, 0.25, 0.0)).collect();
        assert!((chamfer(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        assert!(chamfer(&a, &[]).is_err());
    }

    #[test]
    fn emd_basics() {
        let a = vec![Vec3::zeros()];
        let b = vec![Vec3::new(0.0, 3.0, 4.0)];
        assert!((emd(&a, &b, 0).unwrap() - 5.0).abs() < 1e-15);
        let c = cloud(1, 40);
        assert_eq!(emd(&c, &c, 0).unwrap(), 0.0);
    }

    #[test]
    fn assignment_matches_permutations() {
        use itertools::Itertools;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=6 {
            let cost: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>()).collect();
            let col = min_cost_assignment(&cost, n);
            let got: f64 = col.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
            let best = (0..n)
                .permutations(n)
                .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert!((got - best).abs() < 1e-12);
        }
    }

    #[test]
    fn miou_cases() {
        let a = Mask::from_fn(20, 20, |x, y| x < 10 && y < 10);
        let b = Mask::from_fn(20, 20, |x, y| (5..15).contains(&x) && y < 10);
        let e = Mask::filled(20, 20, false);
        assert_eq!(miou(&[a.clone()], &[a.clone()]).unwrap(), 1.0);
        assert_eq!(miou(&[a.clone()], &[b.clone()]).unwrap(), 50.0 / 150.0);
        let far = Mask::from_fn(20, 20, |x, y| x >= 15 && y >= 15);
        assert_eq!(miou(&[a.clone(), e.clone()], &[far, e.clone()]).unwrap(), 0.0);
        assert!(miou(&[e.clone()], &[e]).is_err());
    }
}
