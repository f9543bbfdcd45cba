use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splat_align::correspond::Corr3D;
use splat_align::math::{random_rotation, random_unit_quaternion, rotation_distance};
use splat_align::register::{ransac_umeyama, scale_from_raw, RansacConfig};
use splat_align::splat::sh::{evaluate, sh_rotate};
use splat_align::splat::{apply_anisotropic, apply_similarity, read_ply, sh_coeff_count, write_ply};
use splat_align::synth::{camera_ring, chamfer, drop_views, emd};
use splat_align::viewsel::{q_shape, select_views, ViewSelectConfig};
use splat_align::{GaussianPrimitive, Mask, SimilarityTransform, SplatCloud, Vec3};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn points(r: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)))
        .collect()
}

fn similarity(r: &mut ChaCha8Rng) -> SimilarityTransform {
    SimilarityTransform::new(
        random_rotation(r),
        Vec3::new(r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)),
        r.gen_range(0.2..5.0),
    )
    .unwrap()
}

fn cloud(r: &mut ChaCha8Rng, n: usize, degree: usize) -> SplatCloud {
    let prims = (0..n)
        .map(|_| {
            let mut p = GaussianPrimitive::with_color(
                Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)),
                Vec3::new(r.gen_range(0.01..0.2), r.gen_range(0.01..0.2), r.gen_range(0.01..0.2)),
                r.gen_range(0.05..0.95),
                [r.gen(), r.gen(), r.gen()],
                degree,
            );
            p.rotation = random_unit_quaternion(r);
            for v in p.sh.iter_mut().skip(3) {
                *v = r.gen_range(-0.2..0.2);
            }
            p
        })
        .collect();
    SplatCloud::new(prims, degree).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn similarity_composition_and_inverse(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = (similarity(&mut r), similarity(&mut r));
        let ab = b.after(&a);
        let inv = a.inverse();
        for p in points(&mut r, 10) {
            let direct = b.apply_point(&a.apply_point(&p));
            prop_assert!((ab.apply_point(&p) - direct).norm() < 1e-9 * (1.0 + direct.norm()));
            prop_assert!((inv.apply_point(&a.apply_point(&p)) - p).norm() < 1e-9);
        }
    }

    #[test]
    fn isotropic_anisotropic_equals_similarity(seed in any::<u64>()) {
        let mut r = rng(seed);
        let t = similarity(&mut r);
        let c = cloud(&mut r, 8, 1);
        let a = apply_similarity(&c, &t).unwrap();
        let b = apply_anisotropic(&c, &t.to_anisotropic()).unwrap();
        for (x, y) in a.primitives().iter().zip(b.primitives()) {
            prop_assert!((x.mean - y.mean).norm() < 1e-9);
            prop_assert!((x.covariance() - y.covariance()).norm() < 1e-9 * (1.0 + x.covariance().norm()));
            prop_assert!(x.sh.iter().zip(&y.sh).all(|(u, v)| (u - v).abs() < 1e-9));
        }
    }

    #[test]
    fn sh_rotation_is_a_group_action(seed in any::<u64>(), degree in 0usize..=3) {
        let mut r = rng(seed);
        let sh: Vec<f64> = (0..3 * sh_coeff_count(degree)).map(|_| r.gen_range(-1.0..1.0)).collect();
        let (r1, r2) = (random_rotation(&mut r), random_rotation(&mut r));
        let once = sh_rotate(&sh_rotate(&sh, &r1, degree).unwrap(), &r2, degree).unwrap();
        let composed = sh_rotate(&sh, &(r2 * r1), degree).unwrap();
        prop_assert!(once.iter().zip(&composed).all(|(a, b)| (a - b).abs() < 1e-9));
        let d = Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)).normalize();
        let before = evaluate(&sh, degree, &d);
        let after = evaluate(&sh_rotate(&sh, &r1, degree).unwrap(), degree, &(r1 * d));
        prop_assert!(before.iter().zip(&after).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn ply_round_trip_is_stable(seed in any::<u64>(), degree in 0usize..=3, n in 0usize..20) {
        let mut r = rng(seed);
        let c = cloud(&mut r, n, degree);
        let mut buf = Vec::new();
        write_ply(&c, &mut buf).unwrap();
        let back = read_ply(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), c.len());
        prop_assert_eq!(back.sh_degree(), degree);
        for (x, y) in c.primitives().iter().zip(back.primitives()) {
            prop_assert!((x.mean - y.mean).norm() < 1e-6);
            prop_assert!((x.opacity - y.opacity).abs() < 1e-5);
        }
        // quaternions are renormalized on load, so a second trip may move the last ulp
        let mut again = Vec::new();
        write_ply(&back, &mut again).unwrap();
        let twice = read_ply(&mut again.as_slice()).unwrap();
        for (x, y) in back.primitives().iter().zip(twice.primitives()) {
            prop_assert_eq!(x.mean, y.mean);
            prop_assert!(x.sh.iter().zip(&y.sh).all(|(u, v)| u == v));
            prop_assert!(x.rotation.angle_to(&y.rotation) < 1e-6);
        }
    }

    #[test]
    fn chamfer_and_emd_are_symmetric_and_nonnegative(seed in any::<u64>(), n in 1usize..40, m in 1usize..40) {
        let mut r = rng(seed);
        let (a, b) = (points(&mut r, n), points(&mut r, m));
        let (ab, ba) = (chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
        prop_assert!(ab >= 0.0 && (ab - ba).abs() < 1e-12);
        prop_assert!(chamfer(&a, &a).unwrap() == 0.0);
        let k = n.min(m);
        let (e1, e2) = (emd(&a[..k], &b[..k], seed).unwrap(), emd(&b[..k], &a[..k], seed).unwrap());
        prop_assert!(e1 >= 0.0 && (e1 - e2).abs() < 1e-9);
        prop_assert!(emd(&a, &a, seed).unwrap() < 1e-12);
    }

    #[test]
    fn drop_views_partitions(seed in any::<u64>(), n in 2usize..40, frac in 0.0f64..0.95) {
        let cams = camera_ring(n, 3.0, 0.5, Vec3::zeros(), 50.0, 16, 12).unwrap();
        let (train, test) = drop_views(&cams, frac, seed).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(test.len(), ((frac * n as f64) - 1e-9).ceil().max(0.0) as usize);
        prop_assert_eq!(drop_views(&cams, frac, seed).unwrap(), (train, test));
    }

    #[test]
    fn bounded_scales_stay_inside(raw in -1e6f64..1e6) {
        let s = scale_from_raw(raw, 0.75, 1.5);
        prop_assert!((0.75..=1.5).contains(&s));
    }

    #[test]
    fn ransac_is_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let t = similarity(&mut r);
        let mut pairs: Vec<Corr3D> = points(&mut r, 40).into_iter().map(|p| Corr3D::new(p, t.apply_point(&p))).collect();
        for c in pairs.iter_mut().take(12) {
            c.p_par = points(&mut r, 1)[0] * 3.0;
        }
        let a = ransac_umeyama(&pairs, &RansacConfig::default(), 2.0, seed).unwrap();
        let b = ransac_umeyama(&pairs, &RansacConfig::default(), 2.0, seed).unwrap();
        prop_assert_eq!(&a.inliers, &b.inliers);
        prop_assert_eq!(a.transform.rotation, b.transform.rotation);
        prop_assert!(rotation_distance(&a.transform.rotation, &t.rotation) < 1e-6);
    }

    #[test]
    fn q_shape_never_exceeds_one(seed in any::<u64>(), density in 0.05f64..0.9) {
        let mut r = rng(seed);
        let m = Mask::from_fn(24, 18, |_, _| r.gen_bool(density));
        if m.data().iter().any(|&v| v) {
            let q = q_shape(&m).unwrap();
            prop_assert!((0.0..=1.0).contains(&q));
        }
    }

    #[test]
    fn greedy_selection_has_prefix_property(seed in any::<u64>(), n in 4usize..12) {
        let mut r = rng(seed);
        let cams = camera_ring(n, 3.0, 1.0, Vec3::zeros(), 50.0, 32, 24).unwrap();
        let masks: Vec<Mask> = (0..n)
            .map(|_| {
                let (w, h) = (r.gen_range(4..14), r.gen_range(4..10));
                Mask::from_fn(32, 24, |x, y| x >= 8 && x < 8 + w && y >= 6 && y < 6 + h && (x + y) % 7 != 0)
            })
            .collect();
        let small = select_views(&masks, &cams, &ViewSelectConfig { k: 2, ..Default::default() }).unwrap();
        let large = select_views(&masks, &cams, &ViewSelectConfig { k: 3, ..Default::default() }).unwrap();
        prop_assert_eq!(&large.selected[..small.selected.len()], &small.selected[..]);
    }
}
