use nalgebra::UnitQuaternion;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{random_unit_quaternion, Mat3};

fn quat_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    2.0 * a.coords.dot(&b.coords).abs().min(1.0).acos()
}

/// Greedy farthest-point selection among uniformly sampled rotations.
///
/// The first candidate is always selected; each following pick maximizes the
/// geodesic distance to the already selected set (ties to the lower index).
pub fn sample_dispersed_rotations(n_candidates: usize, n_selected: usize, seed: u64) -> Result<Vec<Mat3>> {
    if n_selected > n_candidates {
        return Err(Error::Validation(format!(
            "cannot select {n_selected} rotations from {n_candidates} candidates"
        )));
    }
    if n_selected == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cands: Vec<UnitQuaternion<f64>> = (0..n_candidates).map(|_| random_unit_quaternion(&mut rng)).collect();
    let mut min_dist = vec![f64::INFINITY; n_candidates];
    let mut taken = vec![false; n_candidates];
    let mut out = Vec::with_capacity(n_selected);
    let mut pick = 0;
    for _ in 0..n_selected {
        taken[pick] = true;
        out.push(cands[pick].to_rotation_matrix().into_inner());
        let mut best = None::<(usize, f64)>;
        for (i, c) in cands.iter().enumerate() {
            if taken[i] {
                continue;
            }
            min_dist[i] = min_dist[i].min(quat_angle(c, &cands[pick]));
            if best.is_none_or(|(_, d)| min_dist[i] > d) {
                best = Some((i, min_dist[i]));
            }
        }
        match best {
            Some((i, _)) => pick = i,
            None => break,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rotation_distance;

    #[test]
    fn first_pick_is_first_candidate() {
        let one = sample_dispersed_rotations(10, 1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let first = random_unit_quaternion(&mut rng).to_rotation_matrix().into_inner();
        assert_eq!(one[0], first);
    }

    #[test]
    fn second_pick_is_farthest() {
        let two = sample_dispersed_rotations(100, 2, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let all: Vec<Mat3> = (0..100)
            .map(|_| random_unit_quaternion(&mut rng).to_rotation_matrix().into_inner())
            .collect();
        let best = all[1..]
            .iter()
            .map(|r| rotation_distance(&all[0], r))
            .fold(0.0, f64::max);
        assert!((rotation_distance(&all[0], &two[1]) - best).abs() < 1e-9);
    }

    #[test]
    fn too_many_rejected() {
        assert!(sample_dispersed_rotations(3, 4, 0).is_err());
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            sample_dispersed_rotations(500, 20, 1).unwrap(),
            sample_dispersed_rotations(500, 20, 1).unwrap()
        );
    }
}
