//! SH-only appearance refinement against masked target views.

mod ssim;

pub use ssim::{ssim, ssim_with_grad, SsimConfig};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ColorImage, Mask};
use crate::optim::{Adam, AdamConfig};
use crate::render::{render_weights, view_dir, BlendWeights};
use crate::splat::{sh, sh_coeff_count, Camera, SplatCloud};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppearanceConfig {
    /// Weight of the D-SSIM term; L1 gets `1 − lambda`.
    pub lambda: f64,
    pub iterations: usize,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub c1: f64,
    pub c2: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Pixels of context kept around each mask's bounding box.
    pub crop_pad: usize,
}

impl Default for AppearanceConfig {
    fn default() -> Self {
        let s = SsimConfig::default();
        let a = AdamConfig::default();
        Self {
            lambda: 0.2,
            iterations: 600,
            ssim_window: s.window,
            ssim_sigma: s.sigma,
            c1: s.c1,
            c2: s.c2,
            learning_rate: a.learning_rate,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
            crop_pad: 5,
        }
    }
}

impl AppearanceConfig {
    pub fn ssim(&self) -> SsimConfig {
        SsimConfig {
            window: self.ssim_window,
            sigma: self.ssim_sigma,
            c1: self.c1,
            c2: self.c2,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Validation("appearance.lambda must lie in [0, 1]".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Validation("appearance: invalid optimizer constants".into()));
        }
        self.ssim().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub l1: f64,
    pub dssim: f64,
    pub total: f64,
}

impl std::ops::AddAssign for LossParts {
    fn add_assign(&mut self, o: Self) {
        self.l1 += o.l1;
        self.dssim += o.dssim;
        self.total += o.total;
    }
}

struct ViewData {
    weights: BlendWeights,
    /// Crop origin and size in the full image.
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    /// Crop-local indices of masked pixels.
    masked: Vec<usize>,
    target: ColorImage,
    /// SH basis per primitive for this view, `n × coeffs`.
    basis: Vec<f64>,
}

/// Frozen-geometry appearance objective over a set of views.
///
/// Color is linear in the SH coefficients for fixed geometry and view, so the
/// blend weights and basis values are computed once.
pub struct ShProblem {
    views: Vec<ViewData>,
    n: usize,
    degree: usize,
    lambda: f64,
    ssim: SsimConfig,
}

impl ShProblem {
    pub fn new(cloud: &SplatCloud, cams: &[Camera], targets: &[ColorImage], masks: &[Mask], cfg: &AppearanceConfig) -> Result<Self> {
        cfg.validate()?;
        if cams.len() != targets.len() || cams.len() != masks.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} cameras, {} targets, {} masks",
                cams.len(),
                targets.len(),
                masks.len()
            )));
        }
        let degree = cloud.sh_degree();
        let nc = sh_coeff_count(degree);
        let views: Vec<Option<ViewData>> = cams
            .par_iter()
            .zip(targets.par_iter())
            .zip(masks.par_iter())
            .map(|((cam, target), mask)| -> Result<Option<ViewData>> {
                if target.width() != cam.width || target.height() != cam.height || !mask.same_shape(target) {
                    return Err(Error::DimensionMismatch("target/mask size differs from camera".into()));
                }
                let Some((bx0, by0, bx1, by1)) = mask.bounding_box() else {
                    return Ok(None);
                };
                let weights = render_weights(cloud, cam);
                let x0 = bx0.saturating_sub(cfg.crop_pad);
                let y0 = by0.saturating_sub(cfg.crop_pad);
                let x1 = (bx1 + cfg.crop_pad).min(cam.width - 1);
                let y1 = (by1 + cfg.crop_pad).min(cam.height - 1);
                let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
                let mut masked = Vec::new();
                let mut covered = false;
                let crop_target = ColorImage::from_fn(w, h, |x, y| {
                    if *mask.get(x0 + x, y0 + y) {
                        masked.push(y * w + x);
                        covered |= !weights.pixel(x0 + x, y0 + y).is_empty();
                        *target.get(x0 + x, y0 + y)
                    } else {
                        [0.0; 3]
                    }
                });
                if !covered {
                    return Ok(None);
                }
                let eye = cam.position();
                let mut basis = vec![0.0; cloud.len() * nc];
                for (p, b) in cloud.primitives().iter().zip(basis.chunks_mut(nc)) {
                    sh::basis_into(degree, &view_dir(&p.mean, &eye), b);
                }
                Ok(Some(ViewData {
                    weights,
                    x0,
                    y0,
                    w,
                    h,
                    masked,
                    target: crop_target,
                    basis,
                }))
            })
            .collect::<Result<_>>()?;
        let views: Vec<ViewData> = views.into_iter().flatten().collect();
        if views.is_empty() {
            return Err(Error::NoSignal);
        }
        Ok(Self {
            views,
            n: cloud.len(),
            degree,
            lambda: cfg.lambda,
            ssim: cfg.ssim(),
        })
    }

    pub fn n_params(&self) -> usize {
        self.n * 3 * sh_coeff_count(self.degree)
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    /// Per-primitive raw colors `Σ sh·Y` for one view.
    fn raw_colors(&self, v: &ViewData, params: &[f64]) -> Vec<[f64; 3]> {
        let nc = sh_coeff_count(self.degree);
        (0..self.n)
            .map(|i| {
                let sh = &params[i * 3 * nc..(i + 1) * 3 * nc];
                let b = &v.basis[i * nc..(i + 1) * nc];
                let mut out = [0.0; 3];
                for (k, bk) in b.iter().enumerate() {
                    for c in 0..3 {
                        out[c] += sh[3 * k + c] * bk;
                    }
                }
                out
            })
            .collect()
    }

    fn view_eval(&self, v: &ViewData, params: &[f64], want_grad: bool) -> Result<(LossParts, Option<Vec<f64>>)> {
        let raw = self.raw_colors(v, params);
        let colors: Vec<[f64; 3]> = raw.iter().map(|e| e.map(|x| (x + 0.5).clamp(0.0, 1.0))).collect();
        let mut img = ColorImage::filled(v.w, v.h, [0.0; 3]);
        for &i in &v.masked {
            let (x, y) = (i % v.w, i / v.w);
            let mut acc = [0.0; 3];
            for &(id, w) in v.weights.pixel(v.x0 + x, v.y0 + y) {
                let c = colors[id as usize];
                for k in 0..3 {
                    acc[k] += w * c[k];
                }
            }
            img.data_mut()[i] = acc;
        }
        let norm = 1.0 / (3 * v.masked.len()) as f64;
        let mut l1 = 0.0;
        for &i in &v.masked {
            for k in 0..3 {
                l1 += (img.data()[i][k] - v.target.data()[i][k]).abs();
            }
        }
        l1 *= norm;
        let lam = self.lambda;
        let (s, gs) = if want_grad {
            let (s, g) = ssim_with_grad(&img, &v.target, &self.ssim)?;
            (s, Some(g))
        } else {
            (ssim(&img, &v.target, &self.ssim)?, None)
        };
        let dssim = (1.0 - s) / 2.0;
        let parts = LossParts {
            l1,
            dssim,
            total: (1.0 - lam) * l1 + lam * dssim,
        };
        let Some(gs) = gs else {
            return Ok((parts, None));
        };
        let mut d_color = vec![[0.0; 3]; self.n];
        for &i in &v.masked {
            let (x, y) = (i % v.w, i / v.w);
            let mut d = [0.0; 3];
            for k in 0..3 {
                let r = img.data()[i][k] - v.target.data()[i][k];
                let sign = if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 };
                d[k] = (1.0 - lam) * sign * norm - 0.5 * lam * gs.data()[i][k];
            }
            for &(id, w) in v.weights.pixel(v.x0 + x, v.y0 + y) {
                let dc = &mut d_color[id as usize];
                for k in 0..3 {
                    dc[k] += w * d[k];
                }
            }
        }
        let nc = sh_coeff_count(self.degree);
        let mut grad = vec![0.0; self.n_params()];
        for i in 0..self.n {
            let b = &v.basis[i * nc..(i + 1) * nc];
            for c in 0..3 {
                let x = raw[i][c] + 0.5;
                if !(x > 0.0 && x < 1.0) || d_color[i][c] == 0.0 {
                    continue;
                }
                for (k, bk) in b.iter().enumerate() {
                    grad[i * 3 * nc + 3 * k + c] = d_color[i][c] * bk;
                }
            }
        }
        Ok((parts, Some(grad)))
    }

    fn eval(&self, params: &[f64], want_grad: bool) -> Result<(LossParts, Option<Vec<f64>>)> {
        if params.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!("{} SH values, expected {}", params.len(), self.n_params())));
        }
        let per_view: Vec<(LossParts, Option<Vec<f64>>)> = self
            .views
            .par_iter()
            .map(|v| self.view_eval(v, params, want_grad))
            .collect::<Result<_>>()?;
        let inv = 1.0 / self.views.len() as f64;
        let mut total = LossParts::default();
        let mut grad = want_grad.then(|| vec![0.0; self.n_params()]);
        for (p, g) in per_view {
            total += p;
            if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        let total = LossParts {
            l1: total.l1 * inv,
            dssim: total.dssim * inv,
            total: total.total * inv,
        };
        if let Some(g) = grad.as_mut() {
            g.iter_mut().for_each(|v| *v *= inv);
        }
        Ok((total, grad))
    }

    pub fn loss(&self, params: &[f64]) -> Result<LossParts> {
        Ok(self.eval(params, false)?.0)
    }

    pub fn loss_and_grad(&self, params: &[f64]) -> Result<(LossParts, Vec<f64>)> {
        let (l, g) = self.eval(params, true)?;
        Ok((l, g.expect("gradient requested")))
    }
}

/// Flattened SH coefficients of every primitive.
pub fn flatten_sh(cloud: &SplatCloud) -> Vec<f64> {
    cloud.primitives().iter().flat_map(|p| p.sh.iter().copied()).collect()
}

#[derive(Debug, Clone)]
pub struct Refined {
    pub cloud: SplatCloud,
    /// Loss at the start and after every step.
    pub trace: Vec<LossParts>,
    pub best_iteration: usize,
}

impl Refined {
    /// Rows `iteration, l1, dssim, total`.
    pub fn trace_rows(&self) -> Vec<Vec<f64>> {
        self.trace
            .iter()
            .enumerate()
            .map(|(i, l)| vec![i as f64, l.l1, l.dssim, l.total])
            .collect()
    }
}

/// Adam on SH coefficients only; geometry and opacity are left untouched.
pub fn refine_sh(cloud: &SplatCloud, cams: &[Camera], targets: &[ColorImage], masks: &[Mask], cfg: &AppearanceConfig) -> Result<Refined> {
    let problem = ShProblem::new(cloud, cams, targets, masks, cfg)?;
    let mut params = flatten_sh(cloud);
    let mut adam = Adam::new(params.len(), cfg.adam());
    let (mut loss, mut grad) = problem.loss_and_grad(&params)?;
    let mut trace = vec![loss];
    let mut best = (loss.total, params.clone(), 0);
    for it in 1..=cfg.iterations {
        adam.step(&mut params, &grad);
        (loss, grad) = problem.loss_and_grad(&params)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        trace.push(loss);
        if loss.total < best.0 {
            best = (loss.total, params.clone(), it);
        }
    }
    let per = 3 * sh_coeff_count(cloud.sh_degree());
    let sh: Vec<Vec<f64>> = best.1.chunks(per).map(|c| c.to_vec()).collect();
    Ok(Refined {
        cloud: cloud.with_sh(sh)?,
        trace,
        best_iteration: best.2,
    })
}
