use std::f64::consts::PI;

use fracdiff::manifold::*;
use nalgebra::DVector;
use proptest::prelude::*;

fn torus() -> SpectralManifold {
    build_manifold(&ManifoldSpec::torus(2.0 * PI, 2.0 * PI, 61)).unwrap()
}

fn sphere() -> SpectralManifold {
    build_manifold(&ManifoldSpec::sphere(1.5, 49)).unwrap()
}

/// Fourth-order central second difference.
fn d2(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2.0 * h)) / (12.0 * h * h)
}

fn d1(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

#[test]
fn torus_eigen_relation() {
    let m = torus();
    let h = 1e-3;
    for k in 0..m.n_modes() {
        let lam = m.eigenvalues()[k];
        for p in [[0.3, 1.1], [2.0, 4.4], [5.9, 0.2]] {
            let lap = d2(&|x| m.eval_mode(k, [x, p[1]]), p[0], h) + d2(&|y| m.eval_mode(k, [p[0], y]), p[1], h);
            // normalized modes have amplitude at most 1/π
            let scale = lam.max(1.0) / PI;
            assert!((lap + lam * m.eval_mode(k, p)).abs() <= 1e-6 * scale, "mode {k}");
        }
    }
}

#[test]
fn sphere_eigen_relation() {
    let m = sphere();
    let r = 1.5;
    let h = 1e-3;
    for k in 0..m.n_modes() {
        let lam = m.eigenvalues()[k];
        for p in [[0.7, 1.1], [1.6, 4.4], [2.5, 0.2]] {
            let (th, ph) = (p[0], p[1]);
            let lap = (d2(&|t| m.eval_mode(k, [t, ph]), th, h)
                + th.cos() / th.sin() * d1(&|t| m.eval_mode(k, [t, ph]), th, h)
                + d2(&|f| m.eval_mode(k, [th, f]), ph, h) / th.sin().powi(2))
                / (r * r);
            let scale = lam.max(1.0) / r;
            assert!((lap + lam * m.eval_mode(k, p)).abs() <= 1e-6 * scale, "mode {k}");
        }
    }
}

#[test]
fn projections_complete_on_full_patch() {
    for m in [torus(), sphere()] {
        let p = make_patch(&m, &RegionSpec::Full).unwrap();
        let g = group_distinct(m.eigenvalues(), DEFAULT_GROUP_TOL).unwrap();
        let c = DVector::from_fn(m.n_modes(), |i, _| ((i * 7 + 3) % 11) as f64 - 5.0);
        let u = m.synthesize(&c);
        let mut sum = DVector::zeros(p.len());
        for k in 0..g.len() {
            sum += apply_projection(&p, &g, k, &u).unwrap();
        }
        assert!((&sum - &u).amax() <= 1e-8 * u.amax());
    }
}

#[test]
fn restricted_projections_are_nonzero() {
    let m = sphere();
    let g = group_distinct(m.eigenvalues(), DEFAULT_GROUP_TOL).unwrap();
    let p = make_patch(&m, &RegionSpec::Cap { center: [0.3, 1.0], angle: PI / 3.0 }).unwrap();
    for k in 0..g.len() {
        assert!(p.projection(&g, k).unwrap().smallest_singular_value() > 1e-3, "group {k}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_is_weighted_symmetric(seed in 0u64..1000, k in 0usize..8) {
        let m = torus();
        let g = group_distinct(m.eigenvalues(), DEFAULT_GROUP_TOL).unwrap();
        let p = make_patch(&m, &RegionSpec::Rectangle { x: [0.5, 3.5], y: [1.0, 2.5] }).unwrap();
        let u = DVector::from_fn(p.len(), |i, _| ((i as u64 * 31 + seed) % 17) as f64 - 8.0);
        let v = DVector::from_fn(p.len(), |i, _| ((i as u64 * 13 + 2 * seed) % 19) as f64 - 9.0);
        let pu = apply_projection(&p, &g, k, &u).unwrap();
        let pv = apply_projection(&p, &g, k, &v).unwrap();
        let (a, b) = (p.inner(&pu, &v), p.inner(&u, &pv));
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        prop_assert!(p.inner(&pu, &u) >= -1e-10);
    }

    #[test]
    fn restriction_after_extension(seed in 0u64..1000) {
        let m = sphere();
        let p = make_patch(&m, &RegionSpec::Cap { center: [1.2, 2.0], angle: 0.8 }).unwrap();
        let u = DVector::from_fn(p.len(), |i, _| ((i as u64 * 7 + seed) % 23) as f64);
        prop_assert_eq!(p.restrict(&p.extend(&u)), u);
    }
}
