use rayon::prelude::*;

use super::render_weights;
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::splat::{Camera, SplatCloud};

/// Indices of primitives whose blend weight lands more inside the masks than outside.
///
/// Each primitive's vote is `Σ ±w` over every pixel of every view, positive
/// inside the mask; only strictly positive votes are selected.
pub fn gradient_vote_segment(cloud: &SplatCloud, cams: &[Camera], masks: &[Mask]) -> Result<Vec<usize>> {
    if cams.len() != masks.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} cameras but {} masks",
            cams.len(),
            masks.len()
        )));
    }
    for (i, (c, m)) in cams.iter().zip(masks).enumerate() {
        if c.width != m.width() || c.height != m.height() {
            return Err(Error::DimensionMismatch(format!(
                "view {i}: camera {}x{} vs mask {}x{}",
                c.width,
                c.height,
                m.width(),
                m.height()
            )));
        }
    }
    let per_view: Vec<Vec<f64>> = cams
        .par_iter()
        .zip(masks)
        .map(|(cam, mask)| {
            let w = render_weights(cloud, cam);
            let mut votes = vec![0.0; cloud.len()];
            for (i, &inside) in mask.data().iter().enumerate() {
                let sign = if inside { 1.0 } else { -1.0 };
                for &(id, wt) in w.pixel_at(i) {
                    votes[id as usize] += sign * wt;
                }
            }
            votes
        })
        .collect();
    let mut total = vec![0.0; cloud.len()];
    for v in per_view {
        for (t, x) in total.iter_mut().zip(v) {
            *t += x;
        }
    }
    Ok(total
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, _)| i)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::splat::GaussianPrimitive;

    fn two_clusters() -> SplatCloud {
        let mut prims = Vec::new();
        for i in 0..5 {
            let dz = i as f64 * 0.01;
            prims.push(GaussianPrimitive::with_color(Vec3::new(-0.5, 0.0, dz), Vec3::repeat(0.04), 0.8, [0.5; 3], 0));
            prims.push(GaussianPrimitive::with_color(Vec3::new(0.5, 0.0, dz), Vec3::repeat(0.04), 0.8, [0.5; 3], 0));
        }
        SplatCloud::new(prims, 0).unwrap()
    }

    fn cams() -> Vec<Camera> {
        [Vec3::new(0.0, -3.0, 0.2), Vec3::new(0.3, -3.0, 1.0)]
            .iter()
            .map(|e| Camera::look_at(*e, Vec3::zeros(), Vec3::z(), 60.0, 64, 48).unwrap())
            .collect()
    }

    #[test]
    fn selects_only_masked_cluster() {
        let cloud = two_clusters();
        let cams = cams();
        // mask = left half of the image in every view, which holds the x<0 cluster
        let masks: Vec<Mask> = cams.iter().map(|c| Mask::from_fn(c.width, c.height, |x, _| x < c.width / 2)).collect();
        let sel = gradient_vote_segment(&cloud, &cams, &masks).unwrap();
        assert_eq!(sel, vec![0, 2, 4, 6, 8]);
    }

    #[test]
    fn full_and_empty_masks() {
        let cloud = two_clusters();
        let cams = cams();
        let full: Vec<Mask> = cams.iter().map(|c| Mask::filled(c.width, c.height, true)).collect();
        assert_eq!(gradient_vote_segment(&cloud, &cams, &full).unwrap(), (0..10).collect::<Vec<_>>());
        let empty: Vec<Mask> = cams.iter().map(|c| Mask::filled(c.width, c.height, false)).collect();
        assert!(gradient_vote_segment(&cloud, &cams, &empty).unwrap().is_empty());
        assert!(gradient_vote_segment(&cloud, &cams, &empty[..1]).is_err());
    }
}
