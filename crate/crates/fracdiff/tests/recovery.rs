mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use fracdiff::forward::*;
use fracdiff::fractional::TimeGrid;
use fracdiff::manifold::*;
use fracdiff::recovery::*;
use fracdiff::sources::*;
use fracdiff::Error;
use nalgebra::{DMatrix, DVector};

fn torus(n_modes: usize) -> SpectralManifold {
    build_manifold(&ManifoldSpec::torus(2.0 * PI, 2.0 * PI, n_modes)).unwrap()
}

fn quarter(m: &SpectralManifold) -> Patch {
    make_patch(m, &RegionSpec::Rectangle { x: [0.0, PI], y: [0.0, PI] }).unwrap()
}

fn meta() -> RecordMeta {
    RecordMeta { alpha: 1.0, beta: 1.0, manifold_hash: String::new(), patch_hash: String::new(), source_hash: String::new() }
}

fn known_h(p: &Patch, g: &SpectrumGroups, orders: ModelOrders, z: f64, xi: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(p.len());
    for k in 0..g.len() {
        out += p.projection(g, k).unwrap().apply(xi) / (z + orders.rate(g.values[k]));
    }
    out
}

#[test]
fn laplace_of_zero_record() {
    let grid = TimeGrid::new(10.0, 100).unwrap();
    let rec = MeasurementRecord { grid, values: DMatrix::zeros(101, 3), meta: meta() };
    let v = laplace_of_record(&rec, 4.0).unwrap();
    assert_eq!(v.value.norm(), 0.0);
}

#[test]
fn laplace_of_exponential_record() {
    // rec(t) = e^{-λt} u has transform u / (s + λ)
    let (lambda, s) = (1.5, 2.0);
    let grid = TimeGrid::new(30.0, 3000).unwrap();
    let u = [1.0, -2.0, 0.5];
    let values = DMatrix::from_fn(grid.len(), 3, |i, j| (-lambda * grid.t(i)).exp() * u[j]);
    let rec = MeasurementRecord { grid, values, meta: meta() };
    let v = laplace_of_record(&rec, s).unwrap();
    assert_eq!(v.policy, TailPolicy::Decayed);
    for j in 0..3 {
        let want = u[j] / (s + lambda);
        assert!((v.value[j] - want).abs() <= 1e-8 * want.abs(), "{} vs {want}", v.value[j]);
    }
}

#[test]
fn plateau_tail_is_added() {
    // rec(t) = 1 - e^{-t}(1 + t): transform 1/s - 1/(s+1) - 1/(s+1)²
    let s = 0.5;
    let grid = TimeGrid::new(60.0, 6000).unwrap();
    let values = DMatrix::from_fn(grid.len(), 1, |i, _| {
        let t = grid.t(i);
        1.0 - (-t).exp() * (1.0 + t)
    });
    let rec = MeasurementRecord { grid, values, meta: meta() };
    let v = laplace_of_record(&rec, s).unwrap();
    assert_eq!(v.policy, TailPolicy::Plateau);
    let want = 1.0 / s - 1.0 / (s + 1.0) - 1.0 / (s + 1.0).powi(2);
    assert!((v.value[0] - want).abs() <= 1e-8 * want);
}

#[test]
fn unsettled_record_violates_tail_bound() {
    let grid = TimeGrid::new(5.0, 500).unwrap();
    let values = DMatrix::from_fn(grid.len(), 1, |i, _| grid.t(i));
    let rec = MeasurementRecord { grid, values, meta: meta() };
    assert!(matches!(laplace_of_record(&rec, 0.5), Err(Error::TailBound { .. })));
}

#[test]
fn sampler_rejects_repeated_abscissae() {
    let grid = TimeGrid::new(5.0, 50).unwrap();
    let rec = MeasurementRecord { grid, values: DMatrix::zeros(51, 1), meta: meta() };
    assert!(LaplaceSampler::new(&rec, vec![1.0, 1.0]).is_err());
    assert!(LaplaceSampler::new(&rec, vec![1.0, -1.0]).is_err());
    assert_eq!(LaplaceSampler::new(&rec, vec![1.0, 2.0]).unwrap().evaluate().unwrap().len(), 2);
}

#[test]
fn laplace_relation_against_known_spectrum() {
    let m = torus(25);
    let p = quarter(&m);
    let g = group_distinct(m.eigenvalues(), DEFAULT_GROUP_TOL).unwrap();
    let orders = ModelOrders::new(0.5, 1.0).unwrap();
    let fwd = SpectralForward::new(&m, &p, orders).unwrap();
    let (lo, hi) = (0.5, 3.0);
    let bump = Arc::new(build_bump(BumpKind::ExpBump));
    let a = Affine::window(bump, lo, hi, 1.0).unwrap();
    let xi = DVector::from_fn(p.len(), |i, _| common::signals::bump(i as f64, -1.0, p.len() as f64));
    for s in [0.5, 1.0, 3.0] {
        let grid = TimeGrid::new(40.0 / s, 4000).unwrap();
        let rec = fwd.separable(&a, grid).unwrap().respond(&xi);
        let lv = laplace_of_record(&rec, s).unwrap();
        let la = common::adaptive_simpson(&|t| (-s * t).exp() * a.value(t), lo, hi, 1e-14);
        let want = known_h(&p, &g, orders, s.sqrt(), &xi) * la;
        let err = (&lv.value - &want).norm() / want.norm();
        assert!(err <= 1e-6, "s = {s}: {err:e}");
    }
}

#[test]
fn full_manifold_probe_of_constant() {
    let m = torus(13);
    let p = make_patch(&m, &RegionSpec::Full).unwrap();
    let fwd = SpectralForward::new(&m, &p, ModelOrders::new(0.5, 1.0).unwrap()).unwrap();
    let phi1 = m.samples().column(0).into_owned();
    let s = abscissae_for(0.5, 0.1, 10.0, 4);
    let r = probe_hv(&fwd, &phi1, &ProbeSettings::default(), &s).unwrap();
    for (z, v) in r.z.iter().zip(&r.vectors) {
        assert!((v - &phi1 / *z).norm() <= 1e-9 * phi1.norm() / z);
    }
    let phi3 = m.samples().column(2).into_owned();
    let lam = m.eigenvalues()[2];
    let r = probe_hv(&fwd, &phi3, &ProbeSettings::default(), &s).unwrap();
    for (z, g) in r.z.iter().zip(&r.trace) {
        assert!((g - 1.0 / (z + lam)).abs() <= 1e-9 / (z + lam));
    }
}

#[test]
fn trace_matches_known_spectrum() {
    let m = torus(41);
    let p = quarter(&m);
    let g = group_distinct(m.eigenvalues(), DEFAULT_GROUP_TOL).unwrap();
    let orders = ModelOrders::new(0.8, 0.5).unwrap();
    let fwd = SpectralForward::new(&m, &p, orders).unwrap();
    let xi = DVector::from_fn(p.len(), |i, _| 1.0 + (i as f64 * 0.3).cos());
    let s = abscissae_for(0.8, 0.05, 20.0, 6);
    let r = probe_hv(&fwd, &xi, &ProbeSettings::default(), &s).unwrap();
    for (z, got) in r.z.iter().zip(&r.trace) {
        assert!(*got > 0.0);
        let want = p.inner(&xi, &known_h(&p, &g, orders, *z, &xi));
        assert!((got - want).abs() <= 1e-6 * want, "{got} vs {want}");
    }
}

#[test]
fn degenerate_profile_is_rejected() {
    let m = torus(5);
    let p = quarter(&m);
    let fwd = SpectralForward::new(&m, &p, ModelOrders::new(0.5, 1.0).unwrap()).unwrap();
    let settings = ProbeSettings { floor: 1e3, ..ProbeSettings::default() };
    let xi = DVector::from_element(p.len(), 1.0);
    assert!(matches!(probe_hv(&fwd, &xi, &settings, &[1.0]), Err(Error::ProbeDegenerate { .. })));
    assert!(probe_hv(&fwd, &DVector::zeros(p.len()), &ProbeSettings::default(), &[1.0]).is_err());
}

#[test]
fn full_manifold_projections_by_least_squares() {
    let m = torus(25);
    let p = make_patch(&m, &RegionSpec::Full).unwrap();
    let g = group_distinct(m.eigenvalues(), DEFAULT_GROUP_TOL).unwrap();
    let fwd = SpectralForward::new(&m, &p, ModelOrders::new(0.5, 1.0).unwrap()).unwrap();
    let s = abscissae_for(0.5, 0.05, 40.0, 16);
    let block = probe_block(&fwd, &point_probes(&p), &ProbeSettings::default(), &s).unwrap();
    let data = extract_projections(&block, &g.values, 1.0, g.len()).unwrap();
    assert_eq!(data.ranks(), g.multiplicities());
    for (k, e) in data.entries.iter().enumerate() {
        let want = p.projection(&g, k).unwrap().matrix();
        assert!((&e.residue - &want).norm() <= 1e-6 * want.norm(), "group {k}");
        assert!(e.diagnostics.idempotence_defect < 1e-6);
    }
    assert_eq!(data.entries[0].rank, 1);
}

#[test]
fn least_squares_needs_spanning_probes() {
    let m = torus(9);
    let p = quarter(&m);
    let fwd = SpectralForward::new(&m, &p, ModelOrders::new(0.5, 1.0).unwrap()).unwrap();
    let probes = random_probes(&p, 4, 1);
    let block = probe_block(&fwd, &probes, &ProbeSettings::default(), &[0.5, 1.0, 2.0]).unwrap();
    assert!(matches!(extract_projections(&block, &[0.0, 1.0], 1.0, 2), Err(Error::RankDeficient { .. })));
}

#[test]
fn recovered_poles_ignore_profile_scale() {
    let m = torus(41);
    let p = quarter(&m);
    let fwd = SpectralForward::new(&m, &p, ModelOrders::new(0.5, 1.0).unwrap()).unwrap();
    let mut base = RecoverySettings::new(3, 1.0);
    base.abscissae = AbscissaPolicy::Explicit { z_min: 0.1, z_max: 20.0 };
    base.count = 16;
    base.probes = 16;
    let first = recover_spectrum(&fwd, &base).unwrap();
    let mut scaled = base.clone();
    scaled.probe.profile = Arc::new(Affine::new(base.probe.profile.clone(), 7.5, 1.0, 0.0).unwrap());
    let second = recover_spectrum(&fwd, &scaled).unwrap();
    for (a, b) in first.data.entries.iter().zip(&second.data.entries) {
        assert!((a.pole - b.pole).abs() <= 1e-9 * a.pole.max(1.0));
    }
}

#[test]
fn declared_beta_rescales_exactly() {
    let m = torus(25);
    let p = quarter(&m);
    let fwd = SpectralForward::new(&m, &p, ModelOrders::new(0.5, 0.5).unwrap()).unwrap();
    let mut st = RecoverySettings::new(4, 0.5);
    st.abscissae = AbscissaPolicy::Explicit { z_min: 0.1, z_max: 20.0 };
    st.count = 16;
    let r = recover_spectrum(&fwd, &st).unwrap();
    let mismatched = extract_beta(&r.data, 1.0);
    for (e, l) in r.data.entries.iter().zip(&mismatched) {
        assert_eq!(*l, e.pole.powf(1.0));
        assert!((e.lambda.powf(0.5) - l).abs() <= 1e-12 * l.max(1.0));
    }
    for (got, want) in r.data.values().iter().zip([0.0, 1.0, 2.0, 4.0]) {
        assert!((got - want).abs() <= 1e-3 * want.max(1.0), "{got} vs {want}");
    }
}

fn extract_beta(d: &SpectralData, beta: f64) -> Vec<f64> {
    d.entries.iter().map(|e| if e.pole <= 0.0 { 0.0 } else { e.pole.powf(1.0 / beta) }).collect()
}

#[test]
fn pole_limits_of_model() {
    let m = torus(25);
    let p = quarter(&m);
    let fwd = SpectralForward::new(&m, &p, ModelOrders::new(0.5, 1.0).unwrap()).unwrap();
    let mut st = RecoverySettings::new(3, 1.0);
    st.abscissae = AbscissaPolicy::Explicit { z_min: 0.1, z_max: 20.0 };
    st.count = 16;
    let d = recover_spectrum(&fwd, &st).unwrap().data;
    let e = &d.entries[1];
    let mut prev = f64::INFINITY;
    for eps in [1e-2, 1e-4, 1e-6] {
        let z = -e.pole + eps;
        let lim = d.model(z).unwrap() * (z + e.pole);
        let dist = (&lim - &e.residue).norm() / e.residue.norm();
        assert!(dist < prev);
        prev = dist;
    }
    assert!(prev < 1e-5);
    // between poles the scaled model vanishes in the limit
    let z0 = -0.5 * (d.entries[1].pole + d.entries[2].pole);
    let lim = d.model(z0 + 1e-9).unwrap() * 1e-9;
    assert!(lim.norm() <= 1e-8);
}

fn h_setup(m: &SpectralManifold, p: &Patch, k_terms: usize) -> (SourceH, TimeGrid) {
    let bump = Arc::new(build_bump(BumpKind::ExpBump));
    let src = build_h(bump, 5.0, 4.0, default_psi(p), k_terms).unwrap();
    let _ = m;
    let grid = TimeGrid::new(5.0, 2560).unwrap();
    src.check_resolution(&grid).unwrap();
    (src, grid)
}

#[test]
fn windowed_peeling_and_fault_injection() {
    let m = torus(25);
    let p = quarter(&m);
    let fwd = SpectralForward::new(&m, &p, ModelOrders::new(0.5, 1.0).unwrap()).unwrap();
    let (src, grid) = h_setup(&m, &p, 6);
    let f = SpaceTimeSource::from_h_terms(grid, &src, 1..=src.k_terms()).unwrap();
    let rec = fwd.apply(&f).unwrap();
    for j in 0..src.k_terms() {
        let w = peel_windowed(&rec, &src, j, &fwd).unwrap();
        assert!(w.pass, "window {j}: {:e}", w.residual);
        assert!((w.window_end - (1.0 - 0.5f64.powi(j as i32 + 1)) * 4.0).abs() < 1e-15);
    }
    // swap the spatial factor of term 3: windows j ≥ 2 must fail
    let mut bad = src.clone();
    let c = (bad.r[2] - 1) % bad.psi.ncols();
    let d = (c + 1) % bad.psi.ncols();
    bad.psi.swap_columns(c, d);
    for j in 0..src.k_terms() {
        let w = peel_windowed(&rec, &bad, j, &fwd).unwrap();
        assert_eq!(w.pass, j < 2, "window {j}: {:e}", w.residual);
    }
    assert!(peel_windowed(&rec, &src, src.k_terms(), &fwd).is_err());
}
