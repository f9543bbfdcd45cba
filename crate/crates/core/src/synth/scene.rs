use std::f64::consts::{PI, TAU};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SynthConfig;
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::math::{random_rotation, Mat3, Vec3};
use crate::render::render_weights;
use crate::splat::{apply_anisotropic, sh, sh_coeff_count, AnisotropicTransform, Camera, GaussianPrimitive, SplatCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Box,
    Cylinder,
    Ellipsoid,
}

/// A generated scene before view dropping.
#[derive(Debug, Clone)]
pub struct Scene {
    /// Complete objects in their own frame, with the planted albedo offset.
    pub proxies: Vec<SplatCloud>,
    /// True objects in the scene: `gt_transforms[k]` applied to the unperturbed proxy.
    pub full_clouds: Vec<SplatCloud>,
    pub plane: SplatCloud,
    pub cams: Vec<Camera>,
    /// `masks[object][view]`, occlusion-aware.
    pub masks: Vec<Vec<Mask>>,
    pub gt_transforms: Vec<AnisotropicTransform>,
    pub shapes: Vec<ShapeKind>,
}

impl Scene {
    /// Plane followed by every full object.
    pub fn scene_cloud(&self) -> Result<SplatCloud> {
        let mut c = self.plane.clone();
        for f in &self.full_clouds {
            c = c.concat(f)?;
        }
        Ok(c)
    }

    /// Index range of each object inside [`Scene::scene_cloud`].
    pub fn object_ranges(&self) -> Vec<Range<usize>> {
        let mut start = self.plane.len();
        self.full_clouds
            .iter()
            .map(|f| {
                let r = start..start + f.len();
                start = r.end;
                r
            })
            .collect()
    }
}

fn surface_points(kind: ShapeKind, dims: Vec3, n: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec3>, f64) {
    let h = dims * 0.5;
    match kind {
        ShapeKind::Box => {
            let areas = [h.y * h.z, h.x * h.z, h.x * h.y].map(|a| 4.0 * a);
            let total = 2.0 * areas.iter().sum::<f64>();
            let pts = (0..n)
                .map(|_| {
                    let mut r = rng.gen::<f64>() * total;
                    let mut face = 0;
                    while face < 5 && r >= areas[face / 2] {
                        r -= areas[face / 2];
                        face += 1;
                    }
                    let axis = face / 2;
                    let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
                    let mut p = Vec3::new(
                        rng.gen_range(-h.x..h.x),
                        rng.gen_range(-h.y..h.y),
                        rng.gen_range(-h.z..h.z),
                    );
                    p[axis] = sign * h[axis];
                    p
                })
                .collect();
            (pts, total)
        }
        ShapeKind::Cylinder => {
            let (rx, ry) = (h.x, h.y);
            let r = 0.5 * (rx + ry);
            let side = TAU * r * dims.z;
            let cap = PI * rx * ry;
            let total = side + 2.0 * cap;
            let pts = (0..n)
                .map(|_| {
                    let a = rng.gen::<f64>() * TAU;
                    let u = rng.gen::<f64>() * total;
                    if u < side {
                        Vec3::new(rx * a.cos(), ry * a.sin(), rng.gen_range(-h.z..h.z))
                    } else {
                        let rad = rng.gen::<f64>().sqrt();
                        let z = if u < side + cap { -h.z } else { h.z };
                        Vec3::new(rx * rad * a.cos(), ry * rad * a.sin(), z)
                    }
                })
                .collect();
            (pts, total)
        }
        ShapeKind::Ellipsoid => {
            let p = 1.6075;
            let ab = (h.x * h.y).powf(p);
            let ac = (h.x * h.z).powf(p);
            let bc = (h.y * h.z).powf(p);
            let total = 4.0 * PI * ((ab + ac + bc) / 3.0).powf(1.0 / p);
            let pts = (0..n)
                .map(|_| {
                    let z: f64 = rng.gen_range(-1.0..1.0);
                    let a = rng.gen::<f64>() * TAU;
                    let s = (1.0 - z * z).sqrt();
                    Vec3::new(h.x * s * a.cos(), h.y * s * a.sin(), h.z * z)
                })
                .collect();
            (pts, total)
        }
    }
}

fn object(kind: ShapeKind, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<SplatCloud> {
    let dims = Vec3::new(rng.gen_range(0.25..0.5), rng.gen_range(0.25..0.5), rng.gen_range(0.25..0.5));
    let n = cfg.primitives_per_object;
    let (pts, area) = surface_points(kind, dims, n, rng);
    let sigma = 0.6 * (area / n as f64).sqrt();
    let albedo = Vec3::new(rng.gen_range(0.25..0.75), rng.gen_range(0.25..0.75), rng.gen_range(0.25..0.75));
    let stripe = rng.gen_range(8.0..16.0);
    let axis = crate::math::random_unit_quaternion(rng) * Vec3::x();
    let nc = sh_coeff_count(cfg.sh_degree);
    let prims = pts
        .into_iter()
        .map(|p| {
            let m = 0.8 + 0.2 * (stripe * p.dot(&axis)).sin();
            let rgb = [0, 1, 2].map(|c| (albedo[c] * m).clamp(0.05, 0.95));
            let mut g = GaussianPrimitive::with_color(p, Vec3::repeat(sigma), 0.85, rgb, cfg.sh_degree);
            for v in g.sh.iter_mut().take(3 * nc).skip(3) {
                *v = rng.gen_range(-0.03..0.03);
            }
            g
        })
        .collect();
    SplatCloud::new(prims, cfg.sh_degree)
}

fn plane(cfg: &SynthConfig, half: f64) -> Result<SplatCloud> {
    let n = cfg.plane_resolution.max(1);
    let cell = 2.0 * half / n as f64;
    let prims = (0..n * n)
        .map(|i| {
            let (ix, iy) = (i % n, i / n);
            let p = Vec3::new(-half + (ix as f64 + 0.5) * cell, -half + (iy as f64 + 0.5) * cell, -0.01);
            let shade = if (ix + iy) % 2 == 0 { 0.55 } else { 0.45 };
            GaussianPrimitive::with_color(p, Vec3::new(cell * 0.6, cell * 0.6, 0.005), 0.95, [shade; 3], cfg.sh_degree)
        })
        .collect();
    SplatCloud::new(prims, cfg.sh_degree)
}

/// Cameras on a horizontal circle looking at `target`.
pub fn camera_ring(n: usize, radius: f64, height: f64, target: Vec3, focal: f64, width: usize, height_px: usize) -> Result<Vec<Camera>> {
    (0..n)
        .map(|i| {
            let a = i as f64 * TAU / n as f64;
            let eye = Vec3::new(radius * a.cos(), radius * a.sin(), height);
            Camera::look_at(eye, target, Vec3::z(), focal, width, height_px)
        })
        .collect()
}

/// Per-object masks: pixels where the object's share of the blend exceeds one half.
pub fn object_masks(scene: &SplatCloud, ranges: &[Range<usize>], cams: &[Camera]) -> Vec<Vec<Mask>> {
    let mut owner = vec![usize::MAX; scene.len()];
    for (k, r) in ranges.iter().enumerate() {
        owner[r.clone()].iter_mut().for_each(|o| *o = k);
    }
    let per_view: Vec<Vec<Mask>> = cams
        .par_iter()
        .map(|cam| {
            let w = render_weights(scene, cam);
            let mut share = vec![vec![0.0; cam.width * cam.height]; ranges.len()];
            for (i, _) in (0..cam.width * cam.height).enumerate() {
                for &(id, wt) in w.pixel_at(i) {
                    let k = owner[id as usize];
                    if k != usize::MAX {
                        share[k][i] += wt;
                    }
                }
            }
            share
                .into_iter()
                .map(|s| Mask::from_vec(cam.width, cam.height, s.into_iter().map(|v| v > 0.5).collect()).expect("sized"))
                .collect()
        })
        .collect();
    (0..ranges.len())
        .map(|k| per_view.iter().map(|v| v[k].clone()).collect())
        .collect()
}

fn placement_half_width(n: usize) -> f64 {
    0.35 * (n as f64).sqrt() + 0.35
}

/// Objects on a plane, non-overlapping footprints, ring of cameras.
pub fn gen_scene(cfg: &SynthConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = placement_half_width(cfg.n_objects);
    let mut proxies = Vec::new();
    let mut fulls = Vec::new();
    let mut gts = Vec::new();
    let mut shapes = Vec::new();
    let mut footprints: Vec<(f64, f64, f64, f64)> = Vec::new();
    for k in 0..cfg.n_objects {
        let kind = [ShapeKind::Box, ShapeKind::Cylinder, ShapeKind::Ellipsoid][rng.gen_range(0..3)];
        let base = object(kind, cfg, &mut rng)?;
        let r = if cfg.random_rotation { random_rotation(&mut rng) } else { Mat3::identity() };
        let s = rng.gen_range(cfg.scale_range[0]..=cfg.scale_range[1]);
        let a = cfg.anisotropy;
        let scale = Vec3::from_fn(|_, _| s * (1.0 + if a > 0.0 { rng.gen_range(-a..a) } else { 0.0 }));
        let oriented = AnisotropicTransform::new(r, Vec3::zeros(), scale, Mat3::identity())?;
        let moved: Vec<Vec3> = oriented.apply_points(&base.means());
        let lo = moved.iter().fold(Vec3::repeat(f64::INFINITY), |m, p| m.inf(p));
        let hi = moved.iter().fold(Vec3::repeat(f64::NEG_INFINITY), |m, p| m.sup(p));
        let ext = hi - lo;
        let mut placed = None;
        for _ in 0..cfg.max_placement_attempts {
            let cx = if half > ext.x * 0.5 { rng.gen_range(-half + ext.x * 0.5..=half - ext.x * 0.5) } else { 0.0 };
            let cy = if half > ext.y * 0.5 { rng.gen_range(-half + ext.y * 0.5..=half - ext.y * 0.5) } else { 0.0 };
            let fp = (cx - ext.x * 0.5, cy - ext.y * 0.5, cx + ext.x * 0.5, cy + ext.y * 0.5);
            let gap = 0.02;
            let overlaps = footprints
                .iter()
                .any(|o| fp.0 < o.2 + gap && o.0 < fp.2 + gap && fp.1 < o.3 + gap && o.1 < fp.3 + gap);
            if !overlaps {
                placed = Some((cx, cy, fp));
                break;
            }
        }
        let Some((cx, cy, fp)) = placed else {
            return Err(Error::Placement(format!(
                "object {k} does not fit without overlap after {} attempts",
                cfg.max_placement_attempts
            )));
        };
        footprints.push(fp);
        let t = Vec3::new(cx - (lo.x + hi.x) * 0.5, cy - (lo.y + hi.y) * 0.5, -lo.z);
        let gt = AnisotropicTransform::new(r, t, scale, Mat3::identity())?;
        fulls.push(apply_anisotropic(&base, &gt)?);
        let shift: Vec3 = Vec3::from_fn(|_, _| {
            if cfg.albedo_mismatch > 0.0 {
                rng.gen_range(-cfg.albedo_mismatch..cfg.albedo_mismatch)
            } else {
                0.0
            }
        });
        let sh: Vec<Vec<f64>> = base
            .primitives()
            .iter()
            .map(|p| {
                let mut c = p.sh.clone();
                for ch in 0..3 {
                    c[ch] += shift[ch] / sh::C0;
                }
                c
            })
            .collect();
        proxies.push(base.with_sh(sh)?);
        gts.push(gt);
        shapes.push(kind);
    }
    let plane = plane(cfg, half + 0.4)?;
    let target = Vec3::new(0.0, 0.0, 0.15);
    let cams = camera_ring(
        cfg.n_views,
        cfg.ring_radius,
        cfg.ring_height,
        target,
        cfg.focal,
        cfg.image_width,
        cfg.image_height,
    )?;
    let mut scene = Scene {
        proxies,
        full_clouds: fulls,
        plane,
        cams,
        masks: Vec::new(),
        gt_transforms: gts,
        shapes,
    };
    let cloud = scene.scene_cloud()?;
    scene.masks = object_masks(&cloud, &scene.object_ranges(), &scene.cams);
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            primitives_per_object: 300,
            n_views: 8,
            image_width: 64,
            image_height: 48,
            focal: 65.0,
            ..Default::default()
        }
    }

    #[test]
    fn single_object_sits_on_plane() {
        let s = gen_scene(&small(), 3).unwrap();
        assert_eq!(s.full_clouds.len(), 1);
        let minz = s.full_clouds[0].means().iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        assert!(minz >= -1e-12);
        assert!(s.masks[0].iter().all(|m| m.count() > 0));
    }

    #[test]
    fn full_is_planted_transform_of_proxy() {
        let s = gen_scene(&small(), 4).unwrap();
        let gt = &s.gt_transforms[0];
        for (p, f) in s.proxies[0].primitives().iter().zip(s.full_clouds[0].primitives()) {
            assert!((gt.apply_point(&p.mean) - f.mean).norm() < 1e-12);
        }
    }

    #[test]
    fn footprints_are_disjoint() {
        let cfg = SynthConfig { n_objects: 4, ..small() };
        let s = gen_scene(&cfg, 5).unwrap();
        let boxes: Vec<_> = s.full_clouds.iter().map(|c| c.aabb().unwrap()).collect();
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                let (a, b) = (&boxes[i], &boxes[j]);
                let ox = (a.max.x.min(b.max.x) - a.min.x.max(b.min.x)).max(0.0);
                let oy = (a.max.y.min(b.max.y) - a.min.y.max(b.min.y)).max(0.0);
                assert_eq!(ox * oy, 0.0);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_scene(&small(), 9).unwrap();
        let b = gen_scene(&small(), 9).unwrap();
        assert_eq!(a.full_clouds[0].primitives(), b.full_clouds[0].primitives());
        assert_eq!(a.masks, b.masks);
    }
}
