//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p fracdiff --test acceptance -- --nocapture`.

mod common;

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use common::ml_oracle::Oracle;
use fracdiff::forward::*;
use fracdiff::fractional::{caputo_l1, TimeGrid};
use fracdiff::manifold::*;
use fracdiff::quadrature::gauss_legendre_on;
use fracdiff::recovery::*;
use fracdiff::sources::*;
use fracdiff::special::*;
use fracdiff::wave::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn exp_bump() -> Arc<BumpProfile> {
    Arc::new(build_bump(BumpKind::ExpBump))
}

fn window(lo: f64, hi: f64) -> Affine {
    Affine::window(exp_bump(), lo, hi, 1.0).unwrap()
}

fn torus(n: usize) -> SpectralManifold {
    build_manifold(&ManifoldSpec::torus(2.0 * PI, 2.0 * PI, n)).unwrap()
}

fn quarter(m: &SpectralManifold) -> Patch {
    make_patch(m, &RegionSpec::Rectangle { x: [0.0, PI], y: [0.0, PI] }).unwrap()
}

fn spatial(p: &Patch, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(p.len(), |_, _| rng.gen_range(-1.0..1.0))
}

fn modal(f: &DMatrix<f64>, p: &Patch) -> DMatrix<f64> {
    f * DMatrix::from_diagonal(p.weights()) * p.basis()
}

fn random_source(grid: TimeGrid, p: &Patch, rng: &mut ChaCha8Rng) -> SpaceTimeSource {
    let profiles: Vec<Affine> = (0..3)
        .map(|_| {
            let lo = rng.gen_range(0.05..1.0);
            window(lo, lo + rng.gen_range(0.3..1.5))
        })
        .collect();
    let terms: Vec<(&dyn TimeProfile, DVector<f64>)> =
        profiles.iter().map(|a| (a as &dyn TimeProfile, spatial(p, rng.gen()))).collect();
    SpaceTimeSource::superpose(grid, &terms).unwrap()
}

fn mittag_leffler_accuracy() -> Outcome {
    let n = 10_000;
    let xs: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { 10f64.powf(-6.0 + 12.0 * (i - 1) as f64 / (n - 2) as f64) }).collect();
    let mut worst = 0.0f64;
    let mut elapsed = 0.0;
    for a in [0.3, 0.5, 0.8, 1.0] {
        for b in [1.0, a] {
            let p = MLParams::new(a, b).unwrap();
            let start = Instant::now();
            let got: Vec<f64> = xs.iter().map(|x| mittag_leffler(p, -x).unwrap()).collect();
            elapsed += start.elapsed().as_secs_f64();
            let oracle = Oracle::new(a, b);
            let want: Vec<f64> = std::thread::scope(|s| {
                let chunks: Vec<_> = xs.chunks(n / 8).map(|c| s.spawn(|| c.iter().map(|x| oracle.eval_neg(*x)).collect::<Vec<_>>())).collect();
                chunks.into_iter().flat_map(|h| h.join().unwrap()).collect()
            });
            for (g, w) in got.iter().zip(&want) {
                worst = worst.max((g - w).abs() / w.abs());
            }
        }
    }
    outcome(worst <= 1e-9 && elapsed < 5.0, format!("max rel err {worst:.2e} over 8e4 evaluations in {elapsed:.2} s"))
}

/// `∫_0^∞ e^{-st} F(t) dt` with `t = u^{1/α}` and composite Gauss-Legendre.
fn numeric_laplace(k: &KernelParams, alpha: f64, s: f64) -> f64 {
    let t_end = 40.0 / s;
    let u_end = t_end.powf(alpha);
    let f = |u: f64| -> f64 {
        let t = u.powf(1.0 / alpha);
        (-s * t).exp() * kernel_f(k, t).unwrap() * t.powf(1.0 - alpha) / alpha
    };
    let panels = 400;
    let h = u_end / panels as f64;
    (0..panels)
        .map(|i| {
            let (x, w) = gauss_legendre_on(16, i as f64 * h, (i + 1) as f64 * h);
            x.iter().zip(&w).map(|(x, w)| w * f(*x)).sum::<f64>()
        })
        .sum()
}

fn laplace_identity() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for alpha in [0.3, 0.5, 0.7, 1.0] {
        for lambda in [0.0, 1.0, 5.0, 10.0] {
            for s in [1.0, 2.0, 5.0] {
                let k = KernelParams::new(alpha, 1.0, lambda).unwrap();
                let want = laplace_kernel_closed(&k, s).unwrap();
                worst = worst.max((numeric_laplace(&k, alpha, s) - want).abs() / want);
            }
        }
    }
    let t = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-6 && t < 10.0, format!("max rel err {worst:.2e} in {t:.2} s"))
}

fn strong_residual() -> Outcome {
    let start = Instant::now();
    let m = torus(41);
    let p = quarter(&m);
    let a = window(0.3, 2.2);
    let xi = spatial(&p, 3);
    let mut pass = true;
    let mut detail = Vec::new();
    for alpha in [0.5, 1.0] {
        let orders = ModelOrders::new(alpha, 1.0).unwrap();
        let mut errs = Vec::new();
        for n in [1024, 2048, 4096] {
            let grid = TimeGrid::new(3.0, n).unwrap();
            let f = SpaceTimeSource::separable(grid, &a, xi.clone()).unwrap();
            let sol = solve_modes(&m, &p, orders, &f).unwrap();
            let fk = modal(&f.values, &p);
            let scale = fk.amax();
            let mut worst = 0.0f64;
            for k in 0..m.n_modes() {
                let u = sol.mode(k);
                let d = caputo_l1(&u, alpha).unwrap();
                let rate = orders.rate(m.eigenvalues()[k]);
                for i in 0..grid.len() {
                    worst = worst.max((d.values[i] + rate * u.values[i] - fk[(i, k)]).abs() / scale);
                }
            }
            errs.push(worst);
        }
        pass &= errs[1] <= 5e-4 && errs[0] > errs[1] && errs[1] > errs[2];
        detail.push(format!("α={alpha}: {:.2e}/{:.2e}/{:.2e}", errs[0], errs[1], errs[2]));
    }
    let t = start.elapsed().as_secs_f64();
    outcome(pass && t < 60.0, format!("n=1024/2048/4096 {} in {t:.1} s", detail.join(", ")))
}

fn heat_reduction() -> Outcome {
    let start = Instant::now();
    let m = torus(25);
    let p = quarter(&m);
    let orders = ModelOrders::new(1.0, 1.0).unwrap();
    let (lo, hi) = (0.2, 1.7);
    let a = window(lo, hi);
    let xi = spatial(&p, 5);
    let grid = TimeGrid::new(3.0, 2048).unwrap();
    let f = SpaceTimeSource::separable(grid, &a, xi.clone()).unwrap();
    let sol = solve_modes(&m, &p, orders, &f).unwrap();
    let xk = p.coefficients(&xi);
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for k in 0..m.n_modes() {
        let lam = m.eigenvalues()[k];
        for i in (0..grid.len()).step_by(64) {
            let t = grid.t(i);
            let upper = t.min(hi);
            let want = if upper <= lo {
                0.0
            } else {
                xk[k] * common::adaptive_simpson(&|tau| (-lam * (t - tau)).exp() * a.value(tau), lo, upper, 1e-14)
            };
            worst = worst.max((sol.coeffs[(i, k)] - want).abs());
            scale = scale.max(want.abs());
        }
    }
    let rel = worst / scale;
    let t = start.elapsed().as_secs_f64();
    outcome(rel <= 1e-7 && t < 10.0, format!("max rel err {rel:.2e} in {t:.2} s"))
}

fn sup_bound() -> Outcome {
    let m = torus(41);
    let p = quarter(&m);
    let g = group_distinct(m.eigenvalues(), DEFAULT_GROUP_TOL).unwrap();
    let t_end = 2.6;
    let grid = TimeGrid::new(t_end, 2048).unwrap();
    let orders = ModelOrders::new(0.5, 1.0).unwrap();
    let c = sup_bound_constant(orders, t_end, g.values[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let f = random_source(grid, &p, &mut rng);
        let sol = solve_modes(&m, &p, orders, &f).unwrap();
        worst = worst.max(sol.sup_norm_sq() / (c * derivative_energy(&f, &p)));
    }
    outcome(worst <= 1.05, format!("max lhs/rhs {worst:.3e} over 10 sources"))
}

fn h_certification() -> Outcome {
    let mut fails = 0;
    let mut checks = 0;
    for s in [0.5, 1.0, 4.0] {
        let src = build_h(exp_bump(), s + 1.0, s, DMatrix::from_element(2, 1, 1.0), 12).unwrap();
        for term in &src.terms {
            let k = term.k as i32;
            let (lo, hi) = term.support();
            checks += 1;
            if lo != (1.0 - 2f64.powi(1 - k)) * s || hi != (1.0 - 2f64.powi(-k)) * s {
                fails += 1;
            }
            if 2f64.powi(k + 1) < s {
                continue;
            }
            for l in 0..=3.min(term.k) {
                let sup = (1..4000).map(|i| term.derivative(lo + (hi - lo) * i as f64 / 4000.0, l).abs()).fold(0.0, f64::max);
                checks += 1;
                if sup > 2f64.powi(-k) {
                    fails += 1;
                }
            }
        }
        let n = 1 << 15;
        for i in 0..=n {
            let t = s * i as f64 / n as f64;
            let vals: Vec<f64> = src.terms.iter().map(|h| h.value(t)).collect();
            for a in 0..vals.len() {
                for b in a + 1..vals.len() {
                    checks += 1;
                    if vals[a] * vals[b] != 0.0 {
                        fails += 1;
                    }
                }
            }
        }
    }
    outcome(fails == 0, format!("{fails} violations in {checks} checks"))
}

fn windowed_peeling() -> Outcome {
    let m = torus(25);
    let p = quarter(&m);
    let fwd = SpectralForward::new(&m, &p, ModelOrders::new(0.5, 1.0).unwrap()).unwrap();
    let src = build_h(exp_bump(), 5.0, 4.0, default_psi(&p), DEFAULT_K_TERMS).unwrap();
    let grid = TimeGrid::new(5.0, 6144).unwrap();
    if let Err(e) = src.check_resolution(&grid) {
        return outcome(false, format!("grid rejected: {e}"));
    }
    let f = SpaceTimeSource::from_h_terms(grid, &src, 1..=src.k_terms()).unwrap();
    let rec = fwd.apply(&f).unwrap();
    let mut pass = true;
    let mut worst = 0.0f64;
    let mut flipped = 0;
    let mut term_flips = 0;
    let scale = rec.values.amax();
    let end = |j: usize| (1.0 - 0.5f64.powi(j as i32 + 1)) * src.s_inner;
    for j in 0..src.k_terms() {
        let w = peel_windowed(&rec, &src, j, &fwd).unwrap();
        pass &= w.pass;
        worst = worst.max(w.residual / w.tolerance);
        // corrupt the record only on the slice that window j adds
        let lo = if j == 0 { 0.0 } else { end(j - 1) };
        let mut faulty = rec.clone();
        for i in 0..grid.len() {
            let t = grid.t(i);
            if t >= lo && t < end(j) {
                faulty.values.row_mut(i).add_scalar_mut(1e-6 * scale);
            }
        }
        let earlier_ok = j == 0 || peel_windowed(&faulty, &src, j - 1, &fwd).unwrap().pass;
        if earlier_ok && !peel_windowed(&faulty, &src, j, &fwd).unwrap().pass {
            flipped += 1;
        }
        // a relative 1e-3 error in h_{j+1} only registers while the term is
        // above solver tolerance
        let mut bad = src.clone();
        bad.terms[j].coeff *= 1.0 + 1e-3;
        if !peel_windowed(&rec, &bad, j, &fwd).unwrap().pass {
            term_flips += 1;
        }
    }
    let k = src.k_terms();
    outcome(
        pass && flipped == k,
        format!(
            "K={k}, worst residual/tolerance {worst:.2e}, record faults flipped {flipped}/{k} windows, term faults {term_flips}/{k}"
        ),
    )
}

/// `‖W^{1/2} (A - B) W^{-1/2}‖_F / ‖W^{1/2} B W^{-1/2}‖_F`.
fn projection_error(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    let sim = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * (w[i] / w[j]).sqrt());
    (sim(a) - sim(b)).norm() / sim(b).norm()
}

struct RecoveryCase {
    values: Vec<f64>,
    ranks: Vec<usize>,
    errors: Vec<f64>,
    seconds: f64,
}

fn run_recovery(m: &SpectralManifold, p: &Patch, orders: ModelOrders, groups: usize, beta_declared: f64) -> (Recovery, RecoveryCase) {
    let start = Instant::now();
    let fwd = SpectralForward::new(m, p, orders).unwrap();
    let rec = recover_spectrum(&fwd, &RecoverySettings::new(groups, beta_declared)).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let g = group_distinct(m.eigenvalues(), DEFAULT_GROUP_TOL).unwrap();
    let errors = rec
        .data
        .entries
        .iter()
        .enumerate()
        .map(|(k, e)| projection_error(&e.residue, &p.projection(&g, k).unwrap().matrix(), p.weights()))
        .collect();
    let case = RecoveryCase { values: rec.data.values(), ranks: rec.data.ranks(), errors, seconds };
    (rec, case)
}

fn values_close(got: &[f64], want: &[f64], tol: f64) -> bool {
    got.len() == want.len() && got.iter().zip(want).all(|(g, w)| (g - w).abs() <= tol * w.max(1.0))
}

fn spectral_recovery(torus_case: &RecoveryCase, sphere_case: &RecoveryCase) -> Outcome {
    let t_ok = values_close(&torus_case.values, &[0.0, 1.0, 2.0, 4.0], 1e-3)
        && torus_case.ranks == [1, 4, 4, 4]
        && torus_case.errors.iter().all(|e| *e <= 1e-2);
    let s_ok = values_close(&sphere_case.values, &[0.0, 2.0, 6.0], 1e-3) && sphere_case.errors.iter().all(|e| *e <= 1e-2);
    let total = torus_case.seconds + sphere_case.seconds;
    let fmt = |c: &RecoveryCase| {
        format!(
            "λ={:?} ranks={:?} proj err max {:.2e}",
            c.values.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>(),
            c.ranks,
            c.errors.iter().copied().fold(0.0, f64::max)
        )
    };
    outcome(
        t_ok && s_ok && total < 300.0,
        format!("torus {}; sphere {}; {total:.0} s", fmt(torus_case), fmt(sphere_case)),
    )
}

fn beta_scaling() -> Outcome {
    let m = torus(41);
    let p = quarter(&m);
    let orders = ModelOrders::new(0.5, 0.5).unwrap();
    let want = [0.0, 1.0, 2.0, 4.0];
    let (_, matched) = run_recovery(&m, &p, orders, 4, 0.5);
    let (_, declared) = run_recovery(&m, &p, orders, 4, 1.0);
    let scaled: Vec<f64> = want.iter().map(|l: &f64| l.powf(0.5)).collect();
    let ok = values_close(&matched.values, &want, 1e-3) && values_close(&declared.values, &scaled, 1e-3);
    outcome(ok, format!("β'=0.5 gives {:?}, β'=1 gives {:?}", matched.values, declared.values))
}

fn wave_bridge(m: &SpectralManifold, p: &Patch, recovered: &SpectralData) -> Outcome {
    let start = Instant::now();
    let g = group_distinct(m.eigenvalues(), DEFAULT_GROUP_TOL).unwrap();
    let all = SpectralPairs::exact(p, &g, g.len()).unwrap();
    let a = window(0.5, 3.0);
    let xi = spatial(p, 7);
    let mut errs = Vec::new();
    for n in [1024, 2048, 4096] {
        let grid = TimeGrid::new(6.0, n).unwrap();
        let f = SpaceTimeSource::separable(grid, &a, xi.clone()).unwrap();
        errs.push(compare_hyp(&hyp_apply(&all, p, &f).unwrap(), &wave_oracle(m, p, &f).unwrap(), p.weights()).unwrap().relative_l2);
    }
    let second_order = errs.windows(2).all(|w| (3.0..5.0).contains(&(w[0] / w[1])));

    let rec_pairs = SpectralPairs::from_data(recovered).unwrap();
    let exact = SpectralPairs::exact(p, &g, rec_pairs.len()).unwrap();
    let grid = TimeGrid::new(4.0, 1024).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let lo = rng.gen_range(0.1..1.0);
        let f = SpaceTimeSource::separable(grid, &window(lo, lo + rng.gen_range(0.5..2.0)), spatial(p, rng.gen())).unwrap();
        let c = compare_hyp(&hyp_apply(&rec_pairs, p, &f).unwrap(), &hyp_apply(&exact, p, &f).unwrap(), p.weights()).unwrap();
        worst = worst.max(c.relative_l2);
    }
    let t = start.elapsed().as_secs_f64();
    outcome(
        errs[2] <= 1e-4 && second_order && worst <= 3e-2 && t < 60.0,
        format!(
            "exact vs oracle {:.2e}/{:.2e}/{:.2e} at n=1024/2048/4096; recovered vs exact max {worst:.2e}; {t:.1} s",
            errs[0], errs[1], errs[2]
        ),
    )
}

fn shift_and_linearity() -> Outcome {
    let m = torus(25);
    let p = quarter(&m);
    let fwd = SpectralForward::new(&m, &p, ModelOrders::new(0.7, 0.8).unwrap()).unwrap();
    let grid = TimeGrid::new(4.0, 800).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut shift_err, mut lin_err) = (0.0f64, 0.0f64);
    for trial in 0..5 {
        let lo = rng.gen_range(0.05..0.5);
        let steps = rng.gen_range(1..200);
        let t0 = steps as f64 * grid.dt();
        let xi = spatial(&p, trial);
        let r = fwd.apply(&SpaceTimeSource::separable(grid, &window(lo, lo + 1.5), xi.clone()).unwrap()).unwrap();
        let rs = fwd.apply(&SpaceTimeSource::separable(grid, &window(lo + t0, lo + 1.5 + t0), xi.clone()).unwrap()).unwrap();
        let scale = r.values.amax();
        for i in 0..grid.len() {
            let want = if i < steps { DVector::zeros(p.len()) } else { r.at(i - steps) };
            shift_err = shift_err.max((rs.at(i) - want).amax() / scale);
        }
        let (c1, c2) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let b = window(1.0, 3.5);
        let eta = spatial(&p, trial + 100);
        let a = window(lo, lo + 1.5);
        let r2 = fwd.apply(&SpaceTimeSource::separable(grid, &b, eta.clone()).unwrap()).unwrap();
        let mix = SpaceTimeSource::superpose(grid, &[(&a, xi * c1), (&b, eta * c2)]).unwrap();
        let rm = fwd.apply(&mix).unwrap();
        let lin = &r.values * c1 + &r2.values * c2;
        lin_err = lin_err.max((&rm.values - &lin).amax() / lin.amax());
    }
    outcome(shift_err <= 1e-8 && lin_err <= 1e-8, format!("shift {shift_err:.2e}, superposition {lin_err:.2e}"))
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    let mut report = |n: usize, name: &str, o: Outcome| {
        println!("{} criterion {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o.pass));
    };
    report(1, "mittag-leffler accuracy", mittag_leffler_accuracy());
    report(2, "laplace identity", laplace_identity());
    report(3, "strong residual", strong_residual());
    report(4, "heat reduction", heat_reduction());
    report(5, "sup bound", sup_bound());
    report(6, "source h certification", h_certification());
    report(7, "windowed peeling", windowed_peeling());

    let tm = torus(121);
    let tp = quarter(&tm);
    let (torus_rec, torus_case) = run_recovery(&tm, &tp, ModelOrders::new(0.5, 1.0).unwrap(), 4, 1.0);
    let sm = build_manifold(&ManifoldSpec::sphere(1.0, 49)).unwrap();
    let sp = make_patch(&sm, &RegionSpec::Cap { center: [0.3, 1.0], angle: PI / 3.0 }).unwrap();
    let (_, sphere_case) = run_recovery(&sm, &sp, ModelOrders::new(0.5, 1.0).unwrap(), 3, 1.0);
    report(8, "spectral recovery", spectral_recovery(&torus_case, &sphere_case));
    report(9, "beta scaling", beta_scaling());
    report(10, "wave bridge", wave_bridge(&tm, &tp, &torus_rec.data));
    report(11, "time invariance and linearity", shift_and_linearity());

    let failed: Vec<usize> = results.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
