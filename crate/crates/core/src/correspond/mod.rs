//! 3D-3D correspondences between a proxy object and its partial counterpart.

mod provider;

pub use provider::{
    CorrespondenceProvider, ExactProvider, FileProvider, MatchContext, RenderMatchProvider,
};

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid, Mask};
use crate::math::{Aabb, Vec3};
use crate::render::{render_weights, unproject};
use crate::splat::{AnisotropicTransform, Camera, SplatCloud};

pub const DEFAULT_TOP_K: usize = 16;
pub const DEFAULT_CROP_PAD: usize = 200;
pub const DEFAULT_MAX_VIEWS: usize = 15;

/// Dense per-pixel descriptors, `dim` values per pixel in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("feature dimension must be at least 1".into()));
        }
        if data.len() != width * height * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height}x{dim} feature map",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite feature value".into()));
        }
        Ok(Self {
            width,
            height,
            dim,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match2D {
    pub u_gen: (usize, usize),
    pub u_par: (usize, usize),
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corr3D {
    pub p_gen: Vec3,
    pub p_par: Vec3,
}

impl Corr3D {
    pub fn new(p_gen: Vec3, p_par: Vec3) -> Self {
        Self { p_gen, p_par }
    }
}

fn unit_rows(f: &FeatureMap, keep: impl Fn(usize) -> bool) -> Vec<(usize, Vec<f64>)> {
    (0..f.width * f.height)
        .filter(|&i| keep(i))
        .filter_map(|i| {
            let v = &f.data[i * f.dim..(i + 1) * f.dim];
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (n > 0.0).then(|| (i, v.iter().map(|x| x / n).collect()))
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mutual best matches by cosine similarity, highest confidence first, at most `top_k`.
///
/// Candidates on the partial side are restricted to `mask`; pixels with an
/// all-zero descriptor never match. Ties resolve towards lower pixel indices.
pub fn mutual_nn_match(f_gen: &FeatureMap, f_par: &FeatureMap, mask: &Mask, top_k: usize) -> Result<Vec<Match2D>> {
    if f_gen.dim != f_par.dim {
        return Err(Error::DimensionMismatch(format!(
            "descriptor sizes {} and {}",
            f_gen.dim, f_par.dim
        )));
    }
    if mask.width() != f_par.width || mask.height() != f_par.height {
        return Err(Error::DimensionMismatch("mask does not match partial feature map".into()));
    }
    let gen = unit_rows(f_gen, |_| true);
    let par = unit_rows(f_par, |i| mask.data()[i]);
    if gen.is_empty() || par.is_empty() {
        return Ok(Vec::new());
    }
    let mut best_for_gen = vec![(usize::MAX, f64::NEG_INFINITY); gen.len()];
    let mut best_for_par = vec![(usize::MAX, f64::NEG_INFINITY); par.len()];
    for (pj, (_, pv)) in par.iter().enumerate() {
        for (gi, (_, gv)) in gen.iter().enumerate() {
            let s = dot(gv, pv);
            if s > best_for_par[pj].1 {
                best_for_par[pj] = (gi, s);
            }
            if s > best_for_gen[gi].1 {
                best_for_gen[gi] = (pj, s);
            }
        }
    }
    let mut out: Vec<Match2D> = best_for_par
        .iter()
        .enumerate()
        .filter(|&(pj, &(gi, _))| best_for_gen[gi].0 == pj)
        .map(|(pj, &(gi, s))| {
            let (g, p) = (gen[gi].0, par[pj].0);
            Match2D {
                u_gen: (g % f_gen.width, g / f_gen.width),
                u_par: (p % f_par.width, p / f_par.width),
                confidence: s,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then((a.u_par.1, a.u_par.0).cmp(&(b.u_par.1, b.u_par.0)))
    });
    out.truncate(top_k);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lifted {
    pub pairs: Vec<Corr3D>,
    pub confidences: Vec<f64>,
    pub dropped: usize,
}

/// Unprojects both sides of every match through the same camera; zero-depth matches are dropped.
pub fn lift_matches(matches: &[Match2D], d_gen: &DepthMap, d_par: &DepthMap, cam: &Camera) -> Lifted {
    let mut out = Lifted {
        pairs: Vec::new(),
        confidences: Vec::new(),
        dropped: 0,
    };
    for m in matches {
        let g = unproject(m.u_gen.0 as f64, m.u_gen.1 as f64, d_gen, cam);
        let p = unproject(m.u_par.0 as f64, m.u_par.1 as f64, d_par, cam);
        match (g, p) {
            (Ok(g), Ok(p)) => {
                out.pairs.push(Corr3D::new(g, p));
                out.confidences.push(m.confidence);
            }
            _ => out.dropped += 1,
        }
    }
    out
}

/// Sin/cos positional encoding of a point; the raw coordinates come first.
pub fn positional_encoding(p: &Vec3, octaves: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 + 6 * octaves);
    out.extend(p.iter().copied());
    for k in 0..octaves {
        let f = std::f64::consts::PI * (1 << k) as f64;
        for c in 0..3 {
            out.push((f * p[c]).sin());
            out.push((f * p[c]).cos());
        }
    }
    out
}

/// Alpha-blends one descriptor per primitive into a feature map.
pub fn render_features(cloud: &SplatCloud, cam: &Camera, descriptors: &[Vec<f64>]) -> Result<FeatureMap> {
    if descriptors.len() != cloud.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} descriptors for {} primitives",
            descriptors.len(),
            cloud.len()
        )));
    }
    let dim = descriptors.first().map_or(1, Vec::len);
    if descriptors.iter().any(|d| d.len() != dim) {
        return Err(Error::DimensionMismatch("descriptors differ in length".into()));
    }
    let w = render_weights(cloud, cam);
    let mut data = vec![0.0; cam.width * cam.height * dim];
    for i in 0..cam.width * cam.height {
        let out = &mut data[i * dim..(i + 1) * dim];
        for &(id, wt) in w.pixel_at(i) {
            for (o, d) in out.iter_mut().zip(&descriptors[id as usize]) {
                *o += wt * d;
            }
        }
    }
    FeatureMap::new(cam.width, cam.height, dim, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorrespondences {
    pub pairs: Vec<Corr3D>,
    pub outlier: Vec<bool>,
}

/// Pairs `(p, T(p) + noise)` over randomly chosen primitive means, with a
/// fraction of targets replaced by uniform samples in the target bounding box.
pub fn synth_correspondences(
    cloud: &SplatCloud,
    t: &AnisotropicTransform,
    n: usize,
    noise_sigma: f64,
    outlier_fraction: f64,
    seed: u64,
) -> Result<SynthCorrespondences> {
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} correspondences requested, need at least 3")));
    }
    if !(0.0..1.0).contains(&outlier_fraction) {
        return Err(Error::Validation(format!("outlier fraction {outlier_fraction} outside [0, 1)")));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::Validation(format!("noise sigma {noise_sigma} is negative")));
    }
    if cloud.is_empty() {
        return Err(Error::InsufficientData("empty cloud".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = cloud.means();
    let a = t.linear();
    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("positive sigma");
    let mut pairs: Vec<Corr3D> = (0..n)
        .map(|_| {
            let p = means[rng.gen_range(0..means.len())];
            let mut q = a * p + t.translation;
            if noise_sigma > 0.0 {
                q += Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            }
            Corr3D::new(p, q)
        })
        .collect();
    let bbox = Aabb::from_points(&t.apply_points(&means)).expect("nonempty cloud");
    let n_out = (outlier_fraction * n as f64).round() as usize;
    let mut outlier = vec![false; n];
    let mut chosen = sample(&mut rng, n, n_out).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        outlier[i] = true;
        pairs[i].p_par = Vec3::new(
            rng.gen_range(bbox.min.x..=bbox.max.x),
            rng.gen_range(bbox.min.y..=bbox.max.y),
            rng.gen_range(bbox.min.z..=bbox.max.z),
        );
    }
    Ok(SynthCorrespondences { pairs, outlier })
}

/// Crops `image` to the mask's bounding box and pads every side by `pad`.
///
/// Returns the new image and the offset with `original = cropped + offset`.
pub fn crop_and_pad<T: Clone + Default>(image: &Grid<T>, mask: &Mask, pad: usize) -> Result<(Grid<T>, (i64, i64))> {
    if !image.same_shape(mask) {
        return Err(Error::DimensionMismatch("image and mask sizes differ".into()));
    }
    let (x0, y0, x1, y1) = mask.bounding_box().ok_or(Error::EmptyMask)?;
    let (w, h) = (x1 - x0 + 1 + 2 * pad, y1 - y0 + 1 + 2 * pad);
    let offset = (x0 as i64 - pad as i64, y0 as i64 - pad as i64);
    let out = Grid::from_fn(w, h, |x, y| {
        let (sx, sy) = (x as i64 + offset.0, y as i64 + offset.1);
        if sx >= x0 as i64 && sx <= x1 as i64 && sy >= y0 as i64 && sy <= y1 as i64 {
            image.get(sx as usize, sy as usize).clone()
        } else {
            T::default()
        }
    });
    Ok((out, offset))
}

/// Equidistant view indices with step `max(1, ⌊n/max_used⌋)`.
pub fn subsample_views(n_views: usize, max_used: usize) -> Vec<usize> {
    let step = (n_views / max_used.max(1)).max(1);
    (0..n_views).step_by(step).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub p_gen: [f64; 3],
    pub p_par: [f64; 3],
    #[serde(default = "one")]
    pub confidence: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrespondenceFile {
    pub pairs: Vec<PairRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_index: Option<usize>,
}

impl CorrespondenceFile {
    pub fn from_pairs(pairs: &[Corr3D], confidences: &[f64], view_index: Option<usize>) -> Self {
        Self {
            pairs: pairs
                .iter()
                .enumerate()
                .map(|(i, c)| PairRecord {
                    p_gen: c.p_gen.into(),
                    p_par: c.p_par.into(),
                    confidence: confidences.get(i).copied().unwrap_or(1.0),
                })
                .collect(),
            view_index,
        }
    }

    pub fn corr(&self) -> Vec<Corr3D> {
        self.pairs
            .iter()
            .map(|p| Corr3D::new(p.p_gen.into(), p.p_par.into()))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: Self = crate::io::read_json(path)?;
        if file
            .pairs
            .iter()
            .any(|p| p.p_gen.iter().chain(&p.p_par).any(|v| !v.is_finite()))
        {
            return Err(Error::Validation("non-finite correspondence".into()));
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(self, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::GaussianPrimitive;

    fn one_hot(w: usize, h: usize, perm: impl Fn(usize) -> usize) -> FeatureMap {
        let n = w * h;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + perm(i)] = 1.0;
        }
        FeatureMap::new(w, h, n, data).unwrap()
    }

    #[test]
    fn identity_one_hot_matches() {
        let f = one_hot(4, 3, |i| i);
        let mask = Mask::filled(4, 3, true);
        let m = mutual_nn_match(&f, &f, &mask, 100).unwrap();
        assert_eq!(m.len(), 12);
        assert!(m.iter().all(|m| m.u_gen == m.u_par && m.confidence == 1.0));
        assert_eq!(mutual_nn_match(&f, &f, &mask, 5).unwrap().len(), 5);
        assert!(mutual_nn_match(&f, &f, &Mask::filled(4, 3, false), 16).unwrap().is_empty());
    }

    #[test]
    fn permutation_is_recovered() {
        let (w, h) = (5, 4);
        let perm = |i: usize| (i * 7 + 3) % 20;
        let inv = |j: usize| (0..20).find(|&i| perm(i) == j).unwrap();
        let f_gen = one_hot(w, h, |i| i);
        // par pixel j carries gen pixel π⁻¹(j)'s descriptor
        let f_par = one_hot(w, h, |j| inv(j));
        let m = mutual_nn_match(&f_gen, &f_par, &Mask::filled(w, h, true), 100).unwrap();
        assert_eq!(m.len(), 20);
        for mm in m {
            let g = mm.u_gen.1 * w + mm.u_gen.0;
            let p = mm.u_par.1 * w + mm.u_par.0;
            assert_eq!(perm(g), p);
        }
    }

    #[test]
    fn duplicate_descriptor_is_not_mutual() {
        let f_gen = FeatureMap::new(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let f_par = FeatureMap::new(3, 1, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = mutual_nn_match(&f_gen, &f_par, &Mask::filled(3, 1, true), 16).unwrap();
        let pars: Vec<_> = m.iter().map(|m| m.u_par.0).collect();
        assert_eq!(pars.len(), 2);
        assert!(!pars.contains(&1));
    }

    #[test]
    fn lift_drops_zero_depth() {
        let cam = Camera::new(50.0, 50.0, 5.0, 5.0, 10, 10, crate::Mat3::identity(), Vec3::zeros()).unwrap();
        let zero = DepthMap::filled(10, 10, 0.0);
        let ones = DepthMap::filled(10, 10, 1.0);
        let m = vec![Match2D { u_gen: (1, 2), u_par: (3, 4), confidence: 0.9 }; 3];
        let l = lift_matches(&m, &zero, &ones, &cam);
        assert!(l.pairs.is_empty());
        assert_eq!(l.dropped, 3);
        let l = lift_matches(&m[..1], &ones, &ones, &cam);
        let (u, v, _) = cam.project(&l.pairs[0].p_par).unwrap();
        assert!((u - 3.0).abs() < 0.5 && (v - 4.0).abs() < 0.5);
    }

    fn cloud() -> SplatCloud {
        let prims = (0..50)
            .map(|i| GaussianPrimitive::with_color(Vec3::new(i as f64 * 0.1, (i % 7) as f64, (i % 3) as f64), Vec3::repeat(0.1), 0.5, [0.5; 3], 0))
            .collect();
        SplatCloud::new(prims, 0).unwrap()
    }

    #[test]
    fn synthetic_pairs() {
        let c = cloud();
        let id = AnisotropicTransform::identity();
        let s = synth_correspondences(&c, &id, 40, 0.0, 0.0, 1).unwrap();
        assert!(s.pairs.iter().all(|p| p.p_gen == p.p_par));

        let mut t = AnisotropicTransform::identity();
        t.translation = Vec3::new(0.5, -1.0, 2.0);
        let s = synth_correspondences(&c, &t, 40, 0.0, 0.0, 1).unwrap();
        assert!(s.pairs.iter().all(|p| (p.p_par - p.p_gen - t.translation).amax() < 1e-12));

        let s = synth_correspondences(&c, &t, 100, 0.0, 0.3, 9).unwrap();
        assert_eq!(s.outlier.iter().filter(|&&o| o).count(), 30);
        assert_eq!(s, synth_correspondences(&c, &t, 100, 0.0, 0.3, 9).unwrap());
        assert!(matches!(synth_correspondences(&c, &t, 2, 0.0, 0.0, 1), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn crop_arithmetic() {
        let img = Grid::from_fn(640, 480, |x, y| (x * 1000 + y) as u32);
        let full = Mask::filled(640, 480, true);
        let (out, off) = crop_and_pad(&img, &full, 200).unwrap();
        assert_eq!(off, (-200, -200));
        assert_eq!((out.width(), out.height()), (1040, 880));
        let m = Mask::from_fn(640, 480, |x, y| (5..15).contains(&x) && (5..15).contains(&y));
        let (out, off) = crop_and_pad(&img, &m, 200).unwrap();
        assert_eq!((out.width(), out.height()), (410, 410));
        assert_eq!(*out.get(200, 200), *img.get(5, 5));
        assert_eq!(off, (-195, -195));
        assert!(matches!(crop_and_pad(&img, &Mask::filled(640, 480, false), 200), Err(Error::EmptyMask)));
    }

    #[test]
    fn view_subsampling() {
        assert_eq!(subsample_views(10, 15), (0..10).collect::<Vec<_>>());
        assert_eq!(subsample_views(150, 15).len(), 15);
        let v = subsample_views(151, 15);
        assert_eq!(v.len(), 16);
        assert_eq!(v[1], 10);
    }
}
