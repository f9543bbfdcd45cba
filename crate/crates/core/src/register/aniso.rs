//! Anisotropic registration `q ≈ R·R′ᵀ·diag(S)·R′·p + t`.

use super::ShapeSolverConfig;
use crate::correspond::Corr3D;
use crate::error::{Error, Result};
use crate::math::{logit, sigmoid, Mat3, Vec3};
use crate::optim::Adam;
use crate::splat::AnisotropicTransform;

/// Centered second moments of a pair set; the data term only needs these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub c_p: Vec3,
    pub c_q: Vec3,
    /// `Σ p̃ p̃ᵀ`
    pub cpp: Mat3,
    /// `Σ q̃ p̃ᵀ`
    pub cqp: Mat3,
    /// `Σ |q̃|²`
    pub cqq: f64,
    pub n: usize,
}

impl Moments {
    pub fn from_pairs(pairs: &[Corr3D]) -> Self {
        let n = pairs.len().max(1) as f64;
        let c_p = pairs.iter().map(|c| c.p_gen).sum::<Vec3>() / n;
        let c_q = pairs.iter().map(|c| c.p_par).sum::<Vec3>() / n;
        let mut cpp = Mat3::zeros();
        let mut cqp = Mat3::zeros();
        let mut cqq = 0.0;
        for c in pairs {
            let (p, q) = (c.p_gen - c_p, c.p_par - c_q);
            cpp += p * p.transpose();
            cqp += q * p.transpose();
            cqq += q.norm_squared();
        }
        Self {
            c_p,
            c_q,
            cpp,
            cqp,
            cqq,
            n: pairs.len(),
        }
    }

    /// `Σ |A·p̃ − q̃|²`.
    pub fn data_term(&self, a: &Mat3) -> f64 {
        (a * self.cpp * a.transpose()).trace() - 2.0 * (a.transpose() * self.cqp).trace() + self.cqq
    }
}

fn polar_rotation(m: &Mat3) -> Result<Mat3> {
    let svd = m.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::SolverFailure("SVD did not converge".into())),
    };
    let mut d = Mat3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Ok(u * d * vt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnisoSvd {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub scale: Vec3,
}

impl AnisoSvd {
    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * self.scale.component_mul(p) + self.translation
    }
}

/// Unregularized least squares for `q ≈ R·diag(S)·p + t`.
///
/// Starts from the rotation factor of the unconstrained linear fit and
/// alternates exact per-axis scale updates with orthogonal Procrustes steps.
/// Any nonpositive or non-finite scale is reported as a solver failure.
pub fn anisotropic_svd(pairs: &[Corr3D]) -> Result<AnisoSvd> {
    if pairs.len() < 4 {
        return Err(Error::InsufficientData(format!("{} pairs, need at least 4", pairs.len())));
    }
    let m = Moments::from_pairs(pairs);
    let mut r = match m.cpp.try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => polar_rotation(&(m.cqp * inv))?,
        _ => polar_rotation(&m.cqp)?,
    };
    let diag = m.cpp.diagonal();
    if diag.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Degenerate("source points are flat along an axis".into()));
    }
    let mut s = Vec3::zeros();
    for _ in 0..1000 {
        let rq = r.transpose() * m.cqp;
        let s_new = Vec3::new(rq[(0, 0)] / diag.x, rq[(1, 1)] / diag.y, rq[(2, 2)] / diag.z);
        let r_new = polar_rotation(&(m.cqp * Mat3::from_diagonal(&s_new)))?;
        let ds = (s_new - s).amax();
        let dr = (r_new - r).amax();
        s = s_new;
        r = r_new;
        if ds < 1e-15 && dr < 1e-15 {
            break;
        }
    }
    if s.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::SolverFailure(format!("invalid scale {:?}", s.as_slice())));
    }
    let translation = m.c_q - r * s.component_mul(&m.c_p);
    Ok(AnisoSvd {
        rotation: r,
        translation,
        scale: s,
    })
}

/// Flat optimizer state: quaternion of `R`, quaternion of `R′`, raw scales.
pub type ShapeParams = [f64; 11];

/// `s_min + (s_max − s_min)·σ(raw)`.
pub fn scale_from_raw(raw: f64, s_min: f64, s_max: f64) -> f64 {
    s_min + (s_max - s_min) * sigmoid(raw)
}

fn quat_matrix(q: &[f64]) -> (Mat3, [f64; 4], f64) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let u = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let [w, x, y, z] = u;
    let r = Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    );
    (r, u, n)
}

/// Pulls `∂f/∂R` back to the raw (unnormalized) quaternion.
fn quat_grad(g: &Mat3, u: &[f64; 4], norm: f64) -> [f64; 4] {
    let [w, x, y, z] = *u;
    let gu = [
        2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]),
        2.0 * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]),
        2.0 * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]),
        2.0 * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]),
    ];
    let dot: f64 = (0..4).map(|i| u[i] * gu[i]).sum();
    [0, 1, 2, 3].map(|i| (gu[i] - u[i] * dot) / norm)
}

/// Squared rotation angle of the (unnormalized) quaternion and its gradient.
fn angle_sq(q: &[f64]) -> (f64, [f64; 4]) {
    let v = Vec3::new(q[1], q[2], q[3]);
    let nv = v.norm();
    let aw = q[0].abs();
    let n2 = nv * nv + q[0] * q[0];
    let theta = 2.0 * nv.atan2(aw);
    // θ/|v|, finite as |v| → 0
    let ratio = if nv > 1e-12 { theta / nv } else { 2.0 / aw.max(f64::MIN_POSITIVE) };
    let gv = v * (4.0 * aw * ratio / n2);
    let gw = -4.0 * theta * nv * q[0].signum() / n2;
    (theta * theta, [gw, gv.x, gv.y, gv.z])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub data: f64,
    pub rotation_penalty: f64,
    pub scale_penalty: f64,
}

/// Regularized objective on centered moments and its gradient with respect to the flat parameters.
pub fn regularized_objective(params: &ShapeParams, m: &Moments, cfg: &ShapeSolverConfig) -> (ObjectiveValue, ShapeParams) {
    let (r, u, nr) = quat_matrix(&params[0..4]);
    let (rf, uf, nf) = quat_matrix(&params[4..8]);
    let sig: Vec<f64> = params[8..11].iter().map(|&x| sigmoid(x)).collect();
    let s = Vec3::new(
        cfg.s_min + (cfg.s_max - cfg.s_min) * sig[0],
        cfg.s_min + (cfg.s_max - cfg.s_min) * sig[1],
        cfg.s_min + (cfg.s_max - cfg.s_min) * sig[2],
    );
    let sd = Mat3::from_diagonal(&s);
    let a = r * rf.transpose() * sd * rf;
    let data = m.data_term(&a);
    let ga = 2.0 * (a * m.cpp - m.cqp);

    let g_r = ga * rf.transpose() * sd * rf;
    let g_rf = sd * rf * ga.transpose() * r + sd * rf * r.transpose() * ga;
    let g_s = (rf * r.transpose() * ga * rf.transpose()).diagonal();

    let (theta2, g_theta) = angle_sq(&params[0..4]);
    let mean = s.sum() / 3.0;
    let dev = s - Vec3::repeat(mean);
    let ls = dev.norm_squared();

    let mut grad = [0.0; 11];
    let gq = quat_grad(&g_r, &u, nr);
    let gqf = quat_grad(&g_rf, &uf, nf);
    for i in 0..4 {
        grad[i] = gq[i] + cfg.lambda_r * g_theta[i];
        grad[4 + i] = gqf[i];
    }
    for k in 0..3 {
        let ds = (cfg.s_max - cfg.s_min) * sig[k] * (1.0 - sig[k]);
        grad[8 + k] = (g_s[k] + cfg.lambda_s * 2.0 * dev[k]) * ds;
    }
    let value = ObjectiveValue {
        total: data + cfg.lambda_r * theta2 + cfg.lambda_s * ls,
        data,
        rotation_penalty: theta2,
        scale_penalty: ls,
    };
    (value, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedFit {
    pub transform: AnisotropicTransform,
    pub objective: ObjectiveValue,
    pub initial_objective: ObjectiveValue,
    /// Iterate that produced `transform` (0 = initial state).
    pub best_iteration: usize,
}

fn params_to_transform(params: &ShapeParams, m: &Moments, cfg: &ShapeSolverConfig) -> AnisotropicTransform {
    let (r, _, _) = quat_matrix(&params[0..4]);
    let (rf, _, _) = quat_matrix(&params[4..8]);
    let s = Vec3::new(
        scale_from_raw(params[8], cfg.s_min, cfg.s_max),
        scale_from_raw(params[9], cfg.s_min, cfg.s_max),
        scale_from_raw(params[10], cfg.s_min, cfg.s_max),
    );
    let a = r * rf.transpose() * Mat3::from_diagonal(&s) * rf;
    AnisotropicTransform {
        rotation: r,
        translation: m.c_q - a * m.c_p,
        scale: s,
        frame: rf,
    }
}

/// Initial raw scale that maps to 1 (or the middle of the range when 1 is outside it).
pub fn identity_raw_scale(cfg: &ShapeSolverConfig) -> f64 {
    let f = (1.0 - cfg.s_min) / (cfg.s_max - cfg.s_min);
    if f > 0.0 && f < 1.0 {
        logit(f)
    } else {
        0.0
    }
}

/// Closed-form `R·diag(S)` fit with its scales pulled inside the bounds.
fn warm_start(pairs: &[Corr3D], cfg: &ShapeSolverConfig) -> Option<ShapeParams> {
    let fit = anisotropic_svd(pairs).ok()?;
    let q = nalgebra::UnitQuaternion::from_matrix(&fit.rotation);
    let c = q.quaternion();
    let sign = if c.w < 0.0 { -1.0 } else { 1.0 };
    let raw = |s: f64| logit(((s - cfg.s_min) / (cfg.s_max - cfg.s_min)).clamp(1e-3, 1.0 - 1e-3));
    let p = [
        sign * c.w,
        sign * c.i,
        sign * c.j,
        sign * c.k,
        1.0,
        0.0,
        0.0,
        0.0,
        raw(fit.scale.x),
        raw(fit.scale.y),
        raw(fit.scale.z),
    ];
    p.iter().all(|v| v.is_finite()).then_some(p)
}

/// Bounded, regularized anisotropic fit by Adam.
///
/// Starts from the identity or from the bounded closed-form fit, whichever
/// scores lower. The data term is evaluated on centered moments and the
/// translation follows in closed form. Returns the iterate with the lowest
/// objective.
pub fn anisotropic_regularized(pairs: &[Corr3D], cfg: &ShapeSolverConfig) -> Result<RegularizedFit> {
    cfg.validate()?;
    if pairs.len() < 4 {
        return Err(Error::InsufficientData(format!("{} pairs, need at least 4", pairs.len())));
    }
    if pairs.iter().any(|c| c.p_gen.iter().chain(c.p_par.iter()).any(|v| !v.is_finite())) {
        return Err(Error::Validation("non-finite correspondence".into()));
    }
    let m = Moments::from_pairs(pairs);
    let s0 = identity_raw_scale(cfg);
    let identity: ShapeParams = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, s0, s0, s0];
    let (initial, id_grad) = regularized_objective(&identity, &m, cfg);
    let (mut params, mut start, mut grad) = (identity, initial, id_grad);
    if let Some(w) = warm_start(pairs, cfg) {
        let (v, g) = regularized_objective(&w, &m, cfg);
        if v.total < start.total {
            (params, start, grad) = (w, v, g);
        }
    }
    let mut adam = Adam::new(11, cfg.adam());
    let mut best = (start.total, params, 0, start);
    for it in 1..=cfg.iterations {
        adam.step(&mut params, &grad);
        for q in [0, 4] {
            let n = params[q..q + 4].iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 && n.is_finite() {
                params[q..q + 4].iter_mut().for_each(|v| *v /= n);
            }
        }
        let (value, g) = regularized_objective(&params, &m, cfg);
        if !value.total.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        if value.total < best.0 {
            best = (value.total, params, it, value);
        }
        grad = g;
    }
    Ok(RegularizedFit {
        transform: params_to_transform(&best.1, &m, cfg),
        objective: best.3,
        initial_objective: initial,
        best_iteration: best.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{random_rotation, random_rotation_bounded, rotation_angle, rotation_angle_penalty};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn svd_exact_axis_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_rotation(&mut rng);
        let s = Vec3::new(1.2, 0.9, 1.1);
        let t = Vec3::new(0.3, -0.2, 1.0);
        let pairs: Vec<Corr3D> = points(&mut rng, 60)
            .into_iter()
            .map(|p| Corr3D::new(p, r * s.component_mul(&p) + t))
            .collect();
        let fit = anisotropic_svd(&pairs).unwrap();
        assert!((fit.scale - s).amax() < 1e-8);
        assert!((fit.rotation - r).amax() < 1e-8);
        assert!((fit.translation - t).amax() < 1e-8);
    }

    #[test]
    fn svd_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs: Vec<Corr3D> = points(&mut rng, 20).into_iter().map(|p| Corr3D::new(p, p)).collect();
        let fit = anisotropic_svd(&pairs).unwrap();
        assert!((fit.scale - Vec3::repeat(1.0)).amax() < 1e-12);
        assert!((fit.rotation - Mat3::identity()).amax() < 1e-12);
    }

    #[test]
    fn svd_reports_reflection_as_failure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs: Vec<Corr3D> = points(&mut rng, 20)
            .into_iter()
            .map(|p| Corr3D::new(p, Vec3::new(-p.x, p.y, p.z)))
            .collect();
        assert!(matches!(anisotropic_svd(&pairs), Err(Error::SolverFailure(_))));
    }

    #[test]
    fn sigmoid_bound() {
        assert!((scale_from_raw(0.0, 0.75, 1.5) - 1.125).abs() < 1e-15);
        for raw in [-1e3, -20.0, -1.0, 3.0, 40.0] {
            let s = scale_from_raw(raw, 0.75, 1.5);
            assert!((0.75..=1.5).contains(&s));
        }
        let cfg = ShapeSolverConfig::default();
        assert!((scale_from_raw(identity_raw_scale(&cfg), 0.75, 1.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rotation_penalty_matches_matrix_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let q = crate::math::random_unit_quaternion(&mut rng);
            let c = q.quaternion();
            let raw = [c.w * 2.0, c.i * 2.0, c.j * 2.0, c.k * 2.0];
            let (v, _) = angle_sq(&raw);
            let r = q.to_rotation_matrix().into_inner();
            assert!((v - rotation_angle_penalty(&r)).abs() < 1e-7);
        }
        assert_eq!(angle_sq(&[1.0, 0.0, 0.0, 0.0]).0, 0.0);
    }

    fn fd_check(params: &ShapeParams, m: &Moments, cfg: &ShapeSolverConfig) {
        let (_, g) = regularized_objective(params, m, cfg);
        let h = 1e-5;
        for i in 0..11 {
            let mut a = *params;
            let mut b = *params;
            a[i] += h;
            b[i] -= h;
            let fd = (regularized_objective(&a, m, cfg).0.total - regularized_objective(&b, m, cfg).0.total) / (2.0 * h);
            let scale = g[i].abs().max(fd.abs()).max(1e-6);
            assert!((g[i] - fd).abs() / scale < 1e-4, "param {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = ShapeSolverConfig { lambda_r: 0.3, lambda_s: 0.2, ..Default::default() };
        for _ in 0..10 {
            let pairs: Vec<Corr3D> = points(&mut rng, 30)
                .into_iter()
                .map(|p| Corr3D::new(p, points(&mut rng, 1)[0] + 1.3 * p))
                .collect();
            let m = Moments::from_pairs(&pairs);
            let mut params = [0.0; 11];
            for v in params.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            fd_check(&params, &m, &cfg);
        }
    }

    #[test]
    fn regularized_recovers_planted_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = AnisotropicTransform::new(
            random_rotation_bounded(&mut rng, 0.5),
            Vec3::new(0.2, 0.1, -0.3),
            Vec3::new(1.3, 0.8, 1.0),
            Mat3::identity(),
        )
        .unwrap();
        let pts = points(&mut rng, 200);
        let pairs: Vec<Corr3D> = pts.iter().map(|p| Corr3D::new(*p, truth.apply_point(p))).collect();
        let fit = anisotropic_regularized(&pairs, &ShapeSolverConfig::default()).unwrap();
        let err = pts
            .iter()
            .map(|p| (fit.transform.apply_point(p) - truth.apply_point(p)).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
        assert!(fit.objective.data < 1e-6, "{:?}", fit.objective);
    }

    #[test]
    fn regularized_identity_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pairs: Vec<Corr3D> = points(&mut rng, 50).into_iter().map(|p| Corr3D::new(p, p)).collect();
        let fit = anisotropic_regularized(&pairs, &ShapeSolverConfig::default()).unwrap();
        assert!((fit.transform.scale - Vec3::repeat(1.0)).amax() < 1e-3);
        assert!(rotation_angle(&fit.transform.rotation) < 0.1f64.to_radians());
    }
}
