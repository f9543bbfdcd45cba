//! Real spherical harmonics in the sign convention used by common splatting renderers.
//!
//! Rendered color along unit direction `d` is `clamp(0.5 + Σ_k sh_k · Y_k(d), 0, 1)`.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use super::sh_coeff_count;
use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

pub const C0: f64 = 0.28209479177387814;
pub const C1: f64 = 0.4886025119029199;
pub const C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
pub const C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

/// DC coefficient that renders as `value` in every direction.
pub fn rgb_to_dc(value: f64) -> f64 {
    (value - 0.5) / C0
}

pub fn dc_to_rgb(dc: f64) -> f64 {
    dc * C0 + 0.5
}

/// Basis values `Y_k(d)` for `k < (degree+1)²`, written into `out`.
pub fn basis_into(degree: usize, d: &Vec3, out: &mut [f64]) {
    let (x, y, z) = (d.x, d.y, d.z);
    out[0] = C0;
    if degree < 1 {
        return;
    }
    out[1] = -C1 * y;
    out[2] = C1 * z;
    out[3] = -C1 * x;
    if degree < 2 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    out[4] = C2[0] * xy;
    out[5] = C2[1] * yz;
    out[6] = C2[2] * (2.0 * zz - xx - yy);
    out[7] = C2[3] * xz;
    out[8] = C2[4] * (xx - yy);
    if degree < 3 {
        return;
    }
    out[9] = C3[0] * y * (3.0 * xx - yy);
    out[10] = C3[1] * xy * z;
    out[11] = C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = C3[5] * z * (xx - yy);
    out[15] = C3[6] * x * (xx - 3.0 * yy);
}

pub fn basis(degree: usize, d: &Vec3) -> Vec<f64> {
    let mut out = vec![0.0; sh_coeff_count(degree)];
    basis_into(degree, d, &mut out);
    out
}

/// `Σ_k sh_k · Y_k(d)` per channel, without the 0.5 offset or clamping.
pub fn evaluate(sh: &[f64], degree: usize, d: &Vec3) -> [f64; 3] {
    let mut b = [0.0; 16];
    basis_into(degree, d, &mut b);
    let mut out = [0.0; 3];
    for (k, &bk) in b.iter().enumerate().take(sh_coeff_count(degree)) {
        for c in 0..3 {
            out[c] += sh[3 * k + c] * bk;
        }
    }
    out
}

/// Rendered color: `clamp(0.5 + evaluate, 0, 1)`.
pub fn color(sh: &[f64], degree: usize, d: &Vec3) -> [f64; 3] {
    evaluate(sh, degree, d).map(|v| (v + 0.5).clamp(0.0, 1.0))
}

fn band_range(l: usize) -> std::ops::Range<usize> {
    l * l..(l + 1) * (l + 1)
}

struct Fit {
    dirs: Vec<Vec3>,
    /// Per band `l ≥ 1`, the pseudo-inverse of the sampled basis matrix.
    pinv: Vec<DMatrix<f64>>,
}

/// Each band spans a rotation-invariant subspace, so its rotation matrix is
/// recovered exactly by a least-squares fit over enough sample directions.
fn fit() -> &'static Fit {
    static FIT: OnceLock<Fit> = OnceLock::new();
    FIT.get_or_init(|| {
        let n = 32;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let dirs: Vec<Vec3> = (0..n)
            .map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                Vec3::new(r * phi.cos(), r * phi.sin(), z)
            })
            .collect();
        let full: Vec<Vec<f64>> = dirs.iter().map(|d| basis(3, d)).collect();
        let pinv = (1..=3)
            .map(|l| {
                let range = band_range(l);
                let a = DMatrix::from_fn(n, range.len(), |j, m| full[j][range.start + m]);
                a.pseudo_inverse(1e-12).expect("SVD of a fixed, well-conditioned basis matrix")
            })
            .collect();
        Fit { dirs, pinv }
    })
}

/// Per-band coefficient rotation for a fixed `R`, reusable across primitives.
#[derive(Debug, Clone)]
pub struct ShRotation {
    degree: usize,
    bands: Vec<DMatrix<f64>>,
}

impl ShRotation {
    pub fn new(r: &Mat3, degree: usize) -> Result<Self> {
        if degree > super::MAX_SH_DEGREE {
            return Err(Error::UnsupportedDegree(degree));
        }
        let fit = fit();
        let rotated: Vec<Vec<f64>> = fit
            .dirs
            .iter()
            .map(|d| basis(degree, &(r.transpose() * d)))
            .collect();
        let bands = (1..=degree)
            .map(|l| {
                let range = band_range(l);
                let b = DMatrix::from_fn(fit.dirs.len(), range.len(), |j, m| {
                    rotated[j][range.start + m]
                });
                &fit.pinv[l - 1] * b
            })
            .collect();
        Ok(Self { degree, bands })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn apply(&self, sh: &[f64]) -> Vec<f64> {
        let mut out = sh.to_vec();
        for (l, d) in self.bands.iter().enumerate() {
            let range = band_range(l + 1);
            for c in 0..3 {
                for (i, mi) in range.clone().enumerate() {
                    let mut acc = 0.0;
                    for (j, mj) in range.clone().enumerate() {
                        acc += d[(i, j)] * sh[3 * mj + c];
                    }
                    out[3 * mi + c] = acc;
                }
            }
        }
        out
    }
}

/// Coefficients whose evaluation at `d` equals the input's evaluation at `Rᵀd`.
pub fn sh_rotate(sh: &[f64], r: &Mat3, degree: usize) -> Result<Vec<f64>> {
    if degree > super::MAX_SH_DEGREE {
        return Err(Error::UnsupportedDegree(degree));
    }
    let want = 3 * sh_coeff_count(degree);
    if sh.len() != want {
        return Err(Error::DimensionMismatch(format!("{} SH values, expected {want}", sh.len())));
    }
    Ok(ShRotation::new(r, degree)?.apply(sh))
}
