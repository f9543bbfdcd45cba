//! Windowed SSIM with a Gaussian window and zero padding, plus its gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ColorImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 || self.window == 0 {
            return Err(Error::Validation("ssim window must be odd".into()));
        }
        if !(self.sigma > 0.0) || !(self.c1 > 0.0) || !(self.c2 > 0.0) {
            return Err(Error::Validation("ssim sigma, c1, c2 must be positive".into()));
        }
        Ok(())
    }

    fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let k: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - r).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = k.iter().sum();
        k.into_iter().map(|v| v / s).collect()
    }
}

/// Separable "same" convolution with zero padding (kernel is symmetric).
fn blur(src: &[f64], w: usize, h: usize, k: &[f64], tmp: &mut Vec<f64>, out: &mut Vec<f64>) {
    let r = k.len() / 2;
    tmp.clear();
    tmp.resize(w * h, 0.0);
    out.clear();
    out.resize(w * h, 0.0);
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            let mut acc = 0.0;
            for xx in lo..=hi {
                acc += k[xx + r - x] * row[xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            let mut acc = 0.0;
            for yy in lo..=hi {
                acc += k[yy + r - y] * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
}

fn channel(img: &ColorImage, c: usize) -> Vec<f64> {
    img.data().iter().map(|p| p[c]).collect()
}

/// Mean SSIM over pixels and channels, and optionally `∂SSIM/∂a`.
fn ssim_impl(a: &ColorImage, b: &ColorImage, cfg: &SsimConfig, want_grad: bool) -> Result<(f64, Option<ColorImage>)> {
    cfg.validate()?;
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch(format!(
            "ssim inputs {}x{} and {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if a.is_empty() {
        return Err(Error::DimensionMismatch("ssim on an empty image".into()));
    }
    let (w, h) = (a.width(), a.height());
    let n = w * h;
    let k = cfg.kernel();
    let (c1, c2) = (cfg.c1, cfg.c2);
    let mut tmp = Vec::new();
    let mut total = 0.0;
    let mut grad = want_grad.then(|| ColorImage::filled(w, h, [0.0; 3]));
    let norm = 1.0 / (3 * n) as f64;
    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mut mx, mut my, mut exx, mut eyy, mut exy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        blur(&x, w, h, &k, &mut tmp, &mut mx);
        blur(&y, w, h, &k, &mut tmp, &mut my);
        blur(&xx, w, h, &k, &mut tmp, &mut exx);
        blur(&yy, w, h, &k, &mut tmp, &mut eyy);
        blur(&xy, w, h, &k, &mut tmp, &mut exy);
        let mut d_m = vec![0.0; n];
        let mut d_exx = vec![0.0; n];
        let mut d_exy = vec![0.0; n];
        for i in 0..n {
            let (m, mu) = (mx[i], my[i]);
            let sxx = exx[i] - m * m;
            let syy = eyy[i] - mu * mu;
            let sxy = exy[i] - m * mu;
            let a1 = 2.0 * m * mu + c1;
            let a2 = 2.0 * sxy + c2;
            let b1 = m * m + mu * mu + c1;
            let b2 = sxx + syy + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                d_m[i] = (2.0 * mu * a2 - 2.0 * mu * a1) / (b1 * b2) - s * 2.0 * m / b1 + s * 2.0 * m / b2;
                d_exx[i] = -s / b2;
                d_exy[i] = 2.0 * a1 / (b1 * b2);
            }
        }
        if let Some(g) = grad.as_mut() {
            let (mut gm, mut gxx, mut gxy) = (Vec::new(), Vec::new(), Vec::new());
            blur(&d_m, w, h, &k, &mut tmp, &mut gm);
            blur(&d_exx, w, h, &k, &mut tmp, &mut gxx);
            blur(&d_exy, w, h, &k, &mut tmp, &mut gxy);
            for (i, px) in g.data_mut().iter_mut().enumerate() {
                px[c] = norm * (gm[i] + 2.0 * x[i] * gxx[i] + y[i] * gxy[i]);
            }
        }
    }
    Ok((total * norm, grad))
}

pub fn ssim(a: &ColorImage, b: &ColorImage, cfg: &SsimConfig) -> Result<f64> {
    Ok(ssim_impl(a, b, cfg, false)?.0)
}

/// SSIM and its gradient with respect to the first image.
pub fn ssim_with_grad(a: &ColorImage, b: &ColorImage, cfg: &SsimConfig) -> Result<(f64, ColorImage)> {
    let (v, g) = ssim_impl(a, b, cfg, true)?;
    Ok((v, g.expect("gradient requested")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: usize, h: usize, noise: f64) -> ColorImage {
        ColorImage::from_fn(w, h, |x, y| {
            let (xf, yf) = (x as f64, y as f64);
            [0, 1, 2].map(|c| {
                let cf = c as f64;
                let base = 0.5 + 0.4 * (0.37 * xf + 0.91 * yf + cf).sin();
                base + noise * (12.9898 * xf + 78.233 * yf + 3.0 * cf).sin()
            })
        })
    }

    #[test]
    fn identical_is_one() {
        let a = pattern(20, 15, 0.0);
        assert!((ssim(&a, &a, &SsimConfig::default()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_luminance_is_near_zero() {
        let a = ColorImage::filled(16, 16, [0.0; 3]);
        let b = ColorImage::filled(16, 16, [1.0; 3]);
        assert!(ssim(&a, &b, &SsimConfig::default()).unwrap() < 0.01);
    }

    #[test]
    fn dimension_mismatch() {
        let a = ColorImage::filled(4, 4, [0.0; 3]);
        let b = ColorImage::filled(4, 5, [0.0; 3]);
        assert!(matches!(ssim(&a, &b, &SsimConfig::default()), Err(Error::DimensionMismatch(_))));
    }

    // float64 reference: grouped conv2d with an 11-tap σ=1.5 Gaussian, padding 5
    const REFERENCE_SSIM: f64 = 0.9923423832696289;

    #[test]
    fn matches_reference_value() {
        let a = pattern(32, 24, 0.0);
        let b = pattern(32, 24, 0.05);
        let v = ssim(&a, &b, &SsimConfig::default()).unwrap();
        assert!((v - REFERENCE_SSIM).abs() < 1e-6, "{v}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = pattern(13, 9, 0.02);
        let b = pattern(13, 9, 0.07);
        let cfg = SsimConfig::default();
        let (_, g) = ssim_with_grad(&a, &b, &cfg).unwrap();
        let h = 1e-5;
        for &(x, y, c) in &[(0, 0, 0), (6, 4, 1), (12, 8, 2), (3, 7, 0)] {
            let mut p = a.clone();
            let mut m = a.clone();
            p.get_mut(x, y)[c] += h;
            m.get_mut(x, y)[c] -= h;
            let fd = (ssim(&p, &b, &cfg).unwrap() - ssim(&m, &b, &cfg).unwrap()) / (2.0 * h);
            let an = g.get(x, y)[c];
            assert!((an - fd).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-8), "{an} {fd}");
        }
    }
}
