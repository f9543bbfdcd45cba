//! Incremental 3D convex hull and the centroid of its enclosed volume.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::math::{centroid, Aabb, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HullCentroid {
    pub centroid: Vec3,
    pub volume: f64,
    /// True when the input was degenerate and `centroid` is the arithmetic mean.
    pub fallback: bool,
}

/// Outward-oriented triangles of the hull, as indices into `points`.
pub fn convex_hull(points: &[Vec3]) -> Result<Vec<[usize; 3]>> {
    let scale = Aabb::from_points(points)
        .map(|b| b.extents().amax())
        .ok_or_else(|| Error::Degenerate("no points".into()))?;
    let eps = 1e-10 * scale.max(f64::MIN_POSITIVE);
    let seed = initial_simplex(points, eps)?;

    let normal = |f: &[usize; 3]| {
        let (a, b, c) = (points[f[0]], points[f[1]], points[f[2]]);
        (b - a).cross(&(c - a))
    };
    let above = |f: &[usize; 3], p: &Vec3| {
        let n = normal(f);
        n.dot(&(p - points[f[0]])) / n.norm()
    };

    let [i0, i1, i2, i3] = seed;
    let mut faces: Vec<[usize; 3]> = vec![[i0, i1, i2], [i0, i3, i1], [i1, i3, i2], [i2, i3, i0]];
    if above(&faces[0], &points[i3]) > 0.0 {
        for f in &mut faces {
            f.swap(1, 2);
        }
    }

    for (i, p) in points.iter().enumerate() {
        if seed.contains(&i) {
            continue;
        }
        let visible: Vec<bool> = faces.iter().map(|f| above(f, p) > eps).collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let mut edges = HashSet::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
            for k in 0..3 {
                edges.insert((f[k], f[(k + 1) % 3]));
            }
        }
        let mut horizon: Vec<(usize, usize)> = edges
            .iter()
            .copied()
            .filter(|&(a, b)| !edges.contains(&(b, a)))
            .collect();
        horizon.sort_unstable();
        let mut kept: Vec<[usize; 3]> = faces
            .iter()
            .zip(&visible)
            .filter(|(_, &v)| !v)
            .map(|(f, _)| *f)
            .collect();
        kept.extend(horizon.into_iter().map(|(a, b)| [a, b, i]));
        faces = kept;
    }
    Ok(faces)
}

fn initial_simplex(points: &[Vec3], eps: f64) -> Result<[usize; 4]> {
    let degenerate = || Error::Degenerate("points are coplanar or collinear".into());
    if points.len() < 4 {
        return Err(Error::Degenerate(format!("{} points, need at least 4", points.len())));
    }
    let argmax = |f: &dyn Fn(&Vec3) -> f64| {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, p) in points.iter().enumerate() {
            let v = f(p);
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    };
    let (i0, _) = argmax(&|p| -p.x);
    let a = points[i0];
    let (i1, d1) = argmax(&|p| (p - a).norm());
    if d1 <= eps {
        return Err(degenerate());
    }
    let b = points[i1];
    let dir = (b - a) / d1;
    let (i2, d2) = argmax(&|p| (p - a).cross(&dir).norm());
    if d2 <= eps {
        return Err(degenerate());
    }
    let n = (b - a).cross(&(points[i2] - a)).normalize();
    let (i3, d3) = argmax(&|p| n.dot(&(p - a)).abs());
    if d3 <= eps {
        return Err(degenerate());
    }
    Ok([i0, i1, i2, i3])
}

/// Centroid of the volume enclosed by the convex hull of `points`.
pub fn convex_hull_centroid(points: &[Vec3]) -> Result<HullCentroid> {
    let faces = convex_hull(points)?;
    let mut hull_idx: Vec<usize> = faces.iter().flatten().copied().collect();
    hull_idx.sort_unstable();
    hull_idx.dedup();
    let origin = hull_idx.iter().map(|&i| points[i]).sum::<Vec3>() / hull_idx.len() as f64;

    let mut volume = 0.0;
    let mut moment = Vec3::zeros();
    for f in &faces {
        let (a, b, c) = (points[f[0]], points[f[1]], points[f[2]]);
        let v = (a - origin).dot(&(b - origin).cross(&(c - origin))) / 6.0;
        volume += v;
        moment += v * (origin + a + b + c) / 4.0;
    }
    if !(volume > 0.0) {
        return Err(Error::Degenerate("hull encloses no volume".into()));
    }
    Ok(HullCentroid {
        centroid: moment / volume,
        volume,
        fallback: false,
    })
}

/// Like [`convex_hull_centroid`], but degenerate input yields the arithmetic mean with `fallback` set.
pub fn hull_centroid_or_mean(points: &[Vec3]) -> HullCentroid {
    match convex_hull_centroid(points) {
        Ok(h) => h,
        Err(_) => HullCentroid {
            centroid: centroid(points),
            volume: 0.0,
            fallback: true,
        },
    }
}
