//! CPU forward splatting with EWA footprints and front-to-back alpha blending.

mod segment;

pub use segment::gradient_vote_segment;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ColorImage, DepthMap, Grid};
use crate::math::{Mat3, Vec3};
use crate::splat::{sh, Camera, SplatCloud};

/// Primitives closer than this (camera-space z) are culled.
pub const NEAR_PLANE: f64 = 1e-2;
/// Footprint cutoff as a squared Mahalanobis radius (3σ).
pub const CUTOFF_SQ: f64 = 9.0;
pub const MAX_ALPHA: f64 = 0.999;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Screen-space low-pass added to every projected covariance, in px².
pub const DILATION: f64 = 0.3;

const TILE: usize = 16;

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: ColorImage,
    pub depth: DepthMap,
    pub alpha: Grid<f64>,
}

/// Per-pixel `(primitive index, weight)` lists in front-to-back order.
#[derive(Debug, Clone)]
pub struct BlendWeights {
    width: usize,
    height: usize,
    offsets: Vec<usize>,
    entries: Vec<(u32, f64)>,
}

impl BlendWeights {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[(u32, f64)] {
        self.pixel_at(y * self.width + x)
    }

    pub fn pixel_at(&self, i: usize) -> &[(u32, f64)] {
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    /// `Σ_i w_i·c_i` per pixel, summed front to back.
    pub fn compose(&self, colors: &[[f64; 3]]) -> ColorImage {
        let data = (0..self.width * self.height)
            .map(|i| {
                let mut c = [0.0; 3];
                for &(id, w) in self.pixel_at(i) {
                    let ci = colors[id as usize];
                    for k in 0..3 {
                        c[k] += w * ci[k];
                    }
                }
                c
            })
            .collect();
        Grid::from_vec(self.width, self.height, data).expect("one value per pixel")
    }

    /// `Σ_i w_i·v_i` per pixel for a scalar per primitive.
    pub fn compose_scalar(&self, values: &[f64]) -> Grid<f64> {
        let data = (0..self.width * self.height)
            .map(|i| self.pixel_at(i).iter().map(|&(id, w)| w * values[id as usize]).sum())
            .collect();
        Grid::from_vec(self.width, self.height, data).expect("one value per pixel")
    }

    /// `Σ_i w_i` per pixel.
    pub fn alpha(&self) -> Grid<f64> {
        let data = (0..self.width * self.height)
            .map(|i| self.pixel_at(i).iter().map(|&(_, w)| w).sum())
            .collect();
        Grid::from_vec(self.width, self.height, data).expect("one value per pixel")
    }

    /// Largest weight each primitive receives at any pixel.
    pub fn max_weight_per_primitive(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0f64; n];
        for &(id, w) in &self.entries {
            let slot = &mut out[id as usize];
            *slot = slot.max(w);
        }
        out
    }
}

struct Projected {
    id: u32,
    x: f64,
    y: f64,
    /// Inverse 2D covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    conic: [f64; 3],
    opacity: f64,
    bounds: (usize, usize, usize, usize),
}

/// Camera-space depth of each primitive's mean.
pub fn primitive_depths(cloud: &SplatCloud, cam: &Camera) -> Vec<f64> {
    cloud.primitives().iter().map(|p| cam.to_camera(&p.mean).z).collect()
}

/// View-dependent color of every primitive seen from `cam`.
pub fn primitive_colors(cloud: &SplatCloud, cam: &Camera) -> Vec<[f64; 3]> {
    let eye = cam.position();
    let degree = cloud.sh_degree();
    cloud
        .primitives()
        .iter()
        .map(|p| sh::color(&p.sh, degree, &view_dir(&p.mean, &eye)))
        .collect()
}

/// Unit direction from the camera center to `mean`.
pub fn view_dir(mean: &Vec3, eye: &Vec3) -> Vec3 {
    let d = mean - eye;
    let n = d.norm();
    if n > 0.0 {
        d / n
    } else {
        Vec3::z()
    }
}

fn project(cloud: &SplatCloud, cam: &Camera) -> Vec<Projected> {
    let w = cam.rotation;
    let mut out: Vec<(f64, Projected)> = cloud
        .primitives()
        .iter()
        .enumerate()
        .filter_map(|(id, p)| {
            let t = cam.to_camera(&p.mean);
            if t.z <= NEAR_PLANE {
                return None;
            }
            let j = nalgebra::Matrix2x3::new(
                cam.fx / t.z,
                0.0,
                -cam.fx * t.x / (t.z * t.z),
                0.0,
                cam.fy / t.z,
                -cam.fy * t.y / (t.z * t.z),
            );
            let m = j * w;
            let sigma: Mat3 = p.covariance();
            let cov = m * sigma * m.transpose();
            let (a, b, c) = (cov[(0, 0)] + DILATION, cov[(0, 1)], cov[(1, 1)] + DILATION);
            let det = a * c - b * b;
            if !(det > 0.0) {
                return None;
            }
            let mid = 0.5 * (a + c);
            let lambda = mid + (mid * mid - det).max(0.0).sqrt();
            let r = CUTOFF_SQ.sqrt() * lambda.sqrt();
            let x = cam.fx * t.x / t.z + cam.cx;
            let y = cam.fy * t.y / t.z + cam.cy;
            let (w_px, h_px) = (cam.width as f64, cam.height as f64);
            if x + r < 0.0 || y + r < 0.0 || x - r > w_px - 1.0 || y - r > h_px - 1.0 {
                return None;
            }
            let bounds = (
                (x - r).ceil().max(0.0) as usize,
                (y - r).ceil().max(0.0) as usize,
                ((x + r).floor().min(w_px - 1.0)) as usize,
                ((y + r).floor().min(h_px - 1.0)) as usize,
            );
            if bounds.0 > bounds.2 || bounds.1 > bounds.3 {
                return None;
            }
            Some((
                t.z,
                Projected {
                    id: id as u32,
                    x,
                    y,
                    conic: [c / det, -b / det, a / det],
                    opacity: p.opacity,
                    bounds,
                },
            ))
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
    out.into_iter().map(|(_, p)| p).collect()
}

/// Blend weights of every primitive at every pixel, front to back.
pub fn render_weights(cloud: &SplatCloud, cam: &Camera) -> BlendWeights {
    let projected = project(cloud, cam);
    let (width, height) = (cam.width, cam.height);
    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);

    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (slot, p) in projected.iter().enumerate() {
        let (x0, y0, x1, y1) = p.bounds;
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                bins[ty * tiles_x + tx].push(slot as u32);
            }
        }
    }

    let tiles: Vec<Vec<(usize, Vec<(u32, f64)>)>> = bins
        .par_iter()
        .enumerate()
        .map(|(tile, slots)| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let mut pixels = Vec::with_capacity(TILE * TILE);
            for py in ty * TILE..((ty + 1) * TILE).min(height) {
                for px in tx * TILE..((tx + 1) * TILE).min(width) {
                    pixels.push((py * width + px, blend_pixel(&projected, slots, px, py)));
                }
            }
            pixels
        })
        .collect();

    let mut per_pixel: Vec<Vec<(u32, f64)>> = vec![Vec::new(); width * height];
    for tile in tiles {
        for (i, list) in tile {
            per_pixel[i] = list;
        }
    }
    let mut offsets = Vec::with_capacity(width * height + 1);
    let mut entries = Vec::new();
    offsets.push(0);
    for list in per_pixel {
        entries.extend(list);
        offsets.push(entries.len());
    }
    BlendWeights {
        width,
        height,
        offsets,
        entries,
    }
}

fn blend_pixel(projected: &[Projected], slots: &[u32], px: usize, py: usize) -> Vec<(u32, f64)> {
    let mut out = Vec::new();
    let mut t = 1.0;
    let (fx, fy) = (px as f64, py as f64);
    for &s in slots {
        let p = &projected[s as usize];
        let (x0, y0, x1, y1) = p.bounds;
        if px < x0 || px > x1 || py < y0 || py > y1 {
            continue;
        }
        let (dx, dy) = (fx - p.x, fy - p.y);
        let m = p.conic[0] * dx * dx + 2.0 * p.conic[1] * dx * dy + p.conic[2] * dy * dy;
        if m > CUTOFF_SQ {
            continue;
        }
        let g = (p.opacity * (-0.5 * m).exp()).min(MAX_ALPHA);
        out.push((p.id, g * t));
        t *= 1.0 - g;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    out
}

pub fn render(cloud: &SplatCloud, cam: &Camera) -> RenderOutput {
    let weights = render_weights(cloud, cam);
    RenderOutput {
        color: weights.compose(&primitive_colors(cloud, cam)),
        depth: weights.compose_scalar(&primitive_depths(cloud, cam)),
        alpha: weights.alpha(),
    }
}

/// World point behind pixel `(u, v)`, using the depth stored at the nearest pixel.
pub fn unproject(u: f64, v: f64, depth: &DepthMap, cam: &Camera) -> Result<Vec3> {
    let (x, y) = (u.round(), v.round());
    if x < 0.0 || y < 0.0 || x >= depth.width() as f64 || y >= depth.height() as f64 {
        return Err(Error::DimensionMismatch(format!(
            "pixel ({u}, {v}) outside {}x{} depth map",
            depth.width(),
            depth.height()
        )));
    }
    let (x, y) = (x as usize, y as usize);
    let d = *depth.get(x, y);
    if !(d > 0.0) {
        return Err(Error::NoDepth { x, y });
    }
    Ok(cam.unproject_point(u, v, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::random_rotation;
    use crate::splat::{apply_rotation, GaussianPrimitive};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn axis_camera() -> Camera {
        Camera::new(100.0, 100.0, 32.0, 32.0, 65, 65, Mat3::identity(), Vec3::zeros()).unwrap()
    }

    fn splat(mean: Vec3, s: f64, opacity: f64) -> GaussianPrimitive {
        GaussianPrimitive::with_color(mean, Vec3::repeat(s), opacity, [0.8, 0.4, 0.2], 0)
    }

    #[test]
    fn empty_cloud_is_blank() {
        let out = render(&SplatCloud::empty(0).unwrap(), &axis_camera());
        assert!(out.alpha.data().iter().all(|&a| a == 0.0));
        assert!(out.depth.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn single_opaque_splat_depth() {
        let c = SplatCloud::new(vec![splat(Vec3::new(0.0, 0.0, 2.0), 0.1, 0.999)], 0).unwrap();
        let out = render(&c, &axis_camera());
        let d = *out.depth.get(32, 32);
        assert!((1.99..=2.01).contains(&d), "{d}");
        assert!(*out.alpha.get(32, 32) > 0.95);
    }

    #[test]
    fn two_layer_depth() {
        let c = SplatCloud::new(
            vec![splat(Vec3::new(0.0, 0.0, 3.0), 0.5, 0.999), splat(Vec3::new(0.0, 0.0, 1.0), 0.5, 0.6)],
            0,
        )
        .unwrap();
        let out = render(&c, &axis_camera());
        let want = 0.6 * 1.0 + 0.4 * 0.999 * 3.0;
        assert!((*out.depth.get(32, 32) - want).abs() < 1e-2);
        let w = render_weights(&c, &axis_camera());
        let ids: Vec<u32> = w.pixel(32, 32).iter().map(|e| e.0).collect();
        assert_eq!(ids, vec![1, 0]);
    }

    #[test]
    fn behind_camera_renders_nothing() {
        let c = SplatCloud::new(vec![splat(Vec3::new(0.0, 0.0, -2.0), 0.5, 0.9)], 0).unwrap();
        let out = render(&c, &axis_camera());
        assert!(out.alpha.data().iter().all(|&a| a == 0.0));
    }

    fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> SplatCloud {
        let prims = (0..n)
            .map(|_| {
                let mut p = GaussianPrimitive::with_color(
                    Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
                    Vec3::new(rng.gen_range(0.02..0.1), rng.gen_range(0.02..0.1), rng.gen_range(0.02..0.1)),
                    rng.gen_range(0.1..0.95),
                    [rng.gen(), rng.gen(), rng.gen()],
                    0,
                );
                p.rotation = crate::math::random_unit_quaternion(rng);
                p
            })
            .collect();
        SplatCloud::new(prims, 0).unwrap()
    }

    #[test]
    fn weights_recompose_render_and_are_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cloud = random_scene(&mut rng, 300);
        let cam = Camera::look_at(Vec3::new(0.3, -2.5, 0.8), Vec3::zeros(), Vec3::z(), 60.0, 80, 60).unwrap();
        let out = render(&cloud, &cam);
        let w = render_weights(&cloud, &cam);
        let recomposed = w.compose(&primitive_colors(&cloud, &cam));
        assert_eq!(recomposed, out.color);
        for i in 0..80 * 60 {
            let s: f64 = w.pixel_at(i).iter().map(|e| e.1).sum();
            assert!(s <= 1.0 + 1e-6);
            assert!(w.pixel_at(i).iter().all(|e| e.1 >= 0.0));
        }
    }

    #[test]
    fn rotated_cloud_matches_counter_rotated_camera() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cloud = random_scene(&mut rng, 200);
        let cam = Camera::look_at(Vec3::new(0.0, -3.0, 0.5), Vec3::zeros(), Vec3::z(), 60.0, 64, 48).unwrap();
        let r = random_rotation(&mut rng);
        let a = render(&apply_rotation(&cloud, &r).unwrap(), &cam);
        let b = render(&cloud, &cam.with_world_rotation(&r));
        let diff = a
            .color
            .data()
            .iter()
            .zip(b.color.data())
            .flat_map(|(x, y)| (0..3).map(move |k| (x[k] - y[k]).abs()))
            .fold(0.0, f64::max);
        assert!(diff < 1e-4, "{diff}");
    }

    #[test]
    fn unproject_pinhole_algebra() {
        let cam = Camera::new(100.0, 100.0, 50.0, 50.0, 200, 101, Mat3::identity(), Vec3::zeros()).unwrap();
        let mut depth = DepthMap::filled(200, 101, 0.0);
        *depth.get_mut(150, 50) = 2.0;
        *depth.get_mut(50, 50) = 3.0;
        assert!((unproject(150.0, 50.0, &depth, &cam).unwrap() - Vec3::new(2.0, 0.0, 2.0)).norm() < 1e-12);
        assert!((unproject(50.0, 50.0, &depth, &cam).unwrap() - Vec3::new(0.0, 0.0, 3.0)).norm() < 1e-12);
        assert!(matches!(unproject(10.0, 10.0, &depth, &cam), Err(Error::NoDepth { x: 10, y: 10 })));
    }
}
