//! Inverse stage: Laplace transforms of records, probes of the operator
//! family `H_V(z) = Σ_k P_{V,k} / (z + λ_{q_k}^β)`, pole and residue
//! extraction, and the windowed consistency checks for the source `h`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::{ForwardAccess, MeasurementRecord, SpaceTimeSource};
use crate::fractional::{TimeGrid, GREGORY};
use crate::manifold::Patch;
use crate::sources::{build_bump, Affine, BumpKind, ProfileRef, SourceH};

/// Largest admissible tail estimate relative to the transform.
pub const TAIL_FRACTION: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailPolicy {
    /// Record decayed; the tail is bounded by the last sample.
    Decayed,
    /// Record settled to a constant `c`; `c e^{-s t_max} / s` is added.
    Plateau,
}

/// `∫_0^∞ e^{-sτ} rec(τ) dτ` and `∫_0^∞ τ e^{-sτ} rec(τ) dτ` on the V grid.
#[derive(Debug, Clone)]
pub struct LaplaceValue {
    pub s: f64,
    pub value: DVector<f64>,
    pub first_moment: DVector<f64>,
    pub policy: TailPolicy,
    pub tail_bound: f64,
}

/// Weights of `∫_0^{t_max} e^{-sτ} y(τ) dτ` on the grid: trapezoid with
/// seventh-order Gregory corrections at `t = 0`, which vanish for records
/// that are zero near the origin.
fn laplace_weights(grid: &TimeGrid, s: f64) -> Vec<f64> {
    let dt = grid.dt();
    let n = grid.n_steps();
    let mut w: Vec<f64> = (0..=n).map(|i| if i == 0 || i == n { 0.5 * dt } else { dt }).collect();
    if n > 2 * GREGORY.len() {
        for (k1, g) in GREGORY.iter().enumerate() {
            let k = k1 + 1;
            let mut binom = 1.0;
            for i in 0..=k {
                let sign = if (k - i) % 2 == 0 { 1.0 } else { -1.0 };
                w[i] += dt * g * sign * binom;
                binom = binom * (k - i) as f64 / (i + 1) as f64;
            }
        }
    }
    for (i, wi) in w.iter_mut().enumerate() {
        *wi *= (-s * grid.t(i)).exp();
    }
    w
}

fn max_abs(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |m, x| m.max(x.abs()))
}

/// Corrected trapezoid rule on the record grid plus the tail policy.
pub fn laplace_of_record(rec: &MeasurementRecord, s: f64) -> Result<LaplaceValue> {
    if !(s > 0.0) {
        return Err(invalid(format!("Laplace abscissa must be positive, got {s}")));
    }
    let grid = rec.grid;
    let w = laplace_weights(&grid, s);
    let n = grid.n_steps();
    let nv = rec.n_points();
    let mut value = DVector::zeros(nv);
    let mut first = DVector::zeros(nv);
    for (i, wi) in w.iter().enumerate() {
        let t = grid.t(i);
        for j in 0..nv {
            let r = rec.values[(i, j)];
            value[j] += wi * r;
            first[j] += wi * t * r;
        }
    }
    let t_max = grid.t_max();
    let decay = (-s * t_max).exp();
    let last = rec.values.row(n);
    let tail_scale = max_abs(last.iter().copied());
    let back = ((0.9 * n as f64) as usize).min(n);
    let drift = max_abs(last.iter().zip(rec.values.row(back).iter()).map(|(a, b)| a - b));
    let plateau = tail_scale > 0.0 && drift <= 1e-6 * tail_scale;
    let (policy, tail_bound) = if plateau {
        for j in 0..nv {
            let c = last[j];
            value[j] += c * decay / s;
            first[j] += c * decay * (t_max / s + 1.0 / (s * s));
        }
        (TailPolicy::Plateau, drift * decay / s)
    } else {
        (TailPolicy::Decayed, tail_scale * decay / s)
    };
    let norm = max_abs(value.iter().copied());
    if tail_bound > TAIL_FRACTION * norm && tail_bound > 0.0 {
        return Err(Error::TailBound { bound: tail_bound, allowed: TAIL_FRACTION * norm });
    }
    Ok(LaplaceValue { s, value, first_moment: first, policy, tail_bound })
}

/// A record with its evaluation abscissae.
pub struct LaplaceSampler<'a> {
    pub record: &'a MeasurementRecord,
    pub abscissae: Vec<f64>,
}

impl<'a> LaplaceSampler<'a> {
    pub fn new(record: &'a MeasurementRecord, abscissae: Vec<f64>) -> Result<Self> {
        let mut sorted = abscissae.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.iter().any(|s| !(*s > 0.0)) || sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("abscissae must be positive and distinct"));
        }
        Ok(Self { record, abscissae })
    }

    pub fn evaluate(&self) -> Result<Vec<LaplaceValue>> {
        self.abscissae.par_iter().map(|s| laplace_of_record(self.record, *s)).collect()
    }
}

/// How each abscissa is probed: the record runs on `[0, theta / s]` with
/// `n_steps` steps and the base profile is dilated to `a(s t)`, so every
/// abscissa sees the same discretization in the scaled time `s t`.
#[derive(Debug, Clone)]
pub struct ProbeSettings {
    pub theta: f64,
    pub n_steps: usize,
    pub profile: ProfileRef,
    pub floor: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        let bump = Arc::new(build_bump(BumpKind::ExpBump));
        let profile = Arc::new(Affine::window(bump, 1.0, 5.0, 1.0).expect("valid window"));
        Self { theta: 40.0, n_steps: 2048, profile, floor: 1e-12 }
    }
}

impl ProbeSettings {
    pub fn grid(&self, s: f64) -> Result<TimeGrid> {
        TimeGrid::new(self.theta / s, self.n_steps)
    }

    pub fn profile_at(&self, s: f64) -> Result<Affine> {
        Affine::new(self.profile.clone(), 1.0, s, 0.0)
    }
}

/// `H_V(z_j) ξ` and `g(z_j) = ⟨ξ, H_V(z_j) ξ⟩_{L²(V)}` for one probe.
#[derive(Debug, Clone)]
pub struct HvProbeResult {
    pub xi: DVector<f64>,
    pub s: Vec<f64>,
    pub z: Vec<f64>,
    pub vectors: Vec<DVector<f64>>,
    pub trace: Vec<f64>,
}

struct Transformed {
    h: DMatrix<f64>,
    dh_dz: DMatrix<f64>,
}

/// `H(z) Ξ` and `H'(z) Ξ` at `z = s^α` from the records of `L_V(a Ξ)`.
fn transform_probes(fwd: &dyn ForwardAccess, probes: &DMatrix<f64>, settings: &ProbeSettings, s: f64) -> Result<Transformed> {
    let alpha = fwd.orders().alpha;
    let grid = settings.grid(s)?;
    let profile = settings.profile_at(s)?;
    let resp = fwd.separable(&profile, grid)?;
    let w = laplace_weights(&grid, s);
    let a = &resp.profile().values;
    let la: f64 = w.iter().zip(a).map(|(w, a)| w * a).sum();
    let lta: f64 = w.iter().zip(a).enumerate().map(|(i, (w, a))| w * grid.t(i) * a).sum();
    if !(la >= settings.floor) {
        return Err(Error::ProbeDegenerate { s, value: la, floor: settings.floor });
    }
    let nv = probes.nrows();
    let np = probes.ncols();
    let mut h = DMatrix::zeros(nv, np);
    let mut dh = DMatrix::zeros(nv, np);
    let dz_ds = alpha * s.powf(alpha - 1.0);
    for p in 0..np {
        let rec = resp.respond(&probes.column(p).into_owned());
        let lv = laplace_of_record(&rec, s)?;
        for i in 0..nv {
            let (l0, l1) = (lv.value[i], lv.first_moment[i]);
            h[(i, p)] = l0 / la;
            dh[(i, p)] = (l0 * lta - l1 * la) / (la * la) / dz_ds;
        }
    }
    Ok(Transformed { h, dh_dz: dh })
}

pub fn probe_hv(fwd: &dyn ForwardAccess, xi: &DVector<f64>, settings: &ProbeSettings, s_values: &[f64]) -> Result<HvProbeResult> {
    if xi.len() != fwd.patch().len() || xi.iter().all(|v| *v == 0.0) {
        return Err(invalid("probe must be a nonzero V-grid function"));
    }
    let alpha = fwd.orders().alpha;
    let probes = DMatrix::from_column_slice(xi.len(), 1, xi.as_slice());
    let out: Vec<Transformed> =
        s_values.par_iter().map(|s| transform_probes(fwd, &probes, settings, *s)).collect::<Result<_>>()?;
    let vectors: Vec<DVector<f64>> = out.iter().map(|t| t.h.column(0).into_owned()).collect();
    let trace = vectors.iter().map(|v| fwd.patch().inner(xi, v)).collect();
    Ok(HvProbeResult {
        xi: xi.clone(),
        s: s_values.to_vec(),
        z: s_values.iter().map(|s| s.powf(alpha)).collect(),
        vectors,
        trace,
    })
}

/// Block samples `Ĥ_j = Ξᵀ W H(z_j) Ξ` and `Ĥ'_j` for a W-orthonormal probe
/// set `Ξ`, plus the raw vectors `H(z_j) Ξ`.
#[derive(Debug, Clone)]
pub struct HvBlock {
    pub z: Vec<f64>,
    pub probes: DMatrix<f64>,
    /// `H(z_j) Ξ` on the V grid.
    pub raw: Vec<DMatrix<f64>>,
    pub h: Vec<DMatrix<f64>>,
    pub dh: Vec<DMatrix<f64>>,
    pub weights: DVector<f64>,
}

/// Point basis `e_i / √w_i`, orthonormal in `L²(V)`.
pub fn point_probes(p: &Patch) -> DMatrix<f64> {
    DMatrix::from_diagonal(&p.weights().map(|w| 1.0 / w.sqrt()))
}

/// Default probe count for the block stage.
pub const DEFAULT_PROBES: usize = 32;

/// `count` Gaussian V-grid functions, orthonormalized in `L²(V)`. Falls back
/// to the point basis when `count` reaches the patch size.
pub fn random_probes(p: &Patch, count: usize, seed: u64) -> DMatrix<f64> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let nv = p.len();
    if count >= nv {
        return point_probes(p);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let sq = p.weights().map(f64::sqrt);
    // orthonormal columns of W^{1/2} Ξ
    let g = DMatrix::<f64>::from_fn(nv, count, |_, _| StandardNormal.sample(&mut rng));
    let q = g.qr().q();
    DMatrix::from_fn(nv, count, |i, j| q[(i, j)] / sq[i])
}

pub fn probe_block(fwd: &dyn ForwardAccess, probes: &DMatrix<f64>, settings: &ProbeSettings, s_values: &[f64]) -> Result<HvBlock> {
    let patch = fwd.patch();
    if probes.nrows() != patch.len() {
        return Err(Error::Mismatch("probe vectors do not live on the patch grid".into()));
    }
    let alpha = fwd.orders().alpha;
    let wx = DMatrix::from_diagonal(patch.weights()) * probes;
    let out: Vec<Transformed> =
        s_values.par_iter().map(|s| transform_probes(fwd, probes, settings, *s)).collect::<Result<_>>()?;
    let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
    Ok(HvBlock {
        z: s_values.iter().map(|s| s.powf(alpha)).collect(),
        probes: probes.clone(),
        h: out.iter().map(|t| sym(wx.tr_mul(&t.h))).collect(),
        dh: out.iter().map(|t| sym(wx.tr_mul(&t.dh_dz))).collect(),
        raw: out.into_iter().map(|t| t.h).collect(),
        weights: patch.weights().clone(),
    })
}

/// `count` log-spaced values on `[lo, hi]`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// Abscissae `s_j` whose `z_j = s_j^α` are log-spaced on `[z_lo, z_hi]`.
pub fn abscissae_for(alpha: f64, z_lo: f64, z_hi: f64, count: usize) -> Vec<f64> {
    log_spaced(z_lo, z_hi, count).into_iter().map(|z| z.powf(1.0 / alpha)).collect()
}

/// One pole `-value` of a scalar trace with its residue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoleEstimate {
    /// `λ̂^β`.
    pub value: f64,
    pub residue: f64,
    /// Largest sample misfit after removing this pole from the final model.
    pub misfit: f64,
}

const AAA_TOL: f64 = 1e-13;
const RESIDUE_FLOOR: f64 = 1e-10;
const AXIS_TOL: f64 = 1e-6;
const COND_LIMIT: f64 = 1e14;

/// Poles of a nonnegative-residue trace `g(z) = Σ c_k / (z + μ_k)` sampled at
/// positive `z`: greedy barycentric (AAA) approximation, cleanup of
/// spurious poles, then a least-squares residue refit with frozen poles.
pub fn fit_poles(z: &[f64], g: &[f64], k_max: usize) -> Result<Vec<PoleEstimate>> {
    if z.len() != g.len() {
        return Err(Error::Mismatch("trace samples and abscissae differ in length".into()));
    }
    if (k_max == 0 || z.len() < 2 * k_max + 2)
        && !(k_max == 1 && z.len() >= 2) {
            return Err(invalid(format!("need at least {} samples for k_max = {k_max}", 2 * k_max + 2)));
        }
    if z.iter().any(|v| !(*v > 0.0)) {
        return Err(invalid("trace abscissae must be positive"));
    }
    let scale = max_abs(g.iter().copied());
    if scale == 0.0 {
        return Ok(Vec::new());
    }
    if k_max == 1 && z.len() == 2 {
        // c/(z+μ): g0 (z0+μ) = g1 (z1+μ)
        let mu = (g[1] * z[1] - g[0] * z[0]) / (g[0] - g[1]);
        let c = g[0] * (z[0] + mu);
        return Ok(vec![PoleEstimate { value: mu, residue: c, misfit: 0.0 }]);
    }
    let raw = aaa_poles(z, g, z.len() / 2)?;
    let mut poles: Vec<f64> = raw
        .iter()
        .filter(|p| p.im.abs() <= AXIS_TOL * (1.0 + p.re.abs()) && p.re <= AXIS_TOL)
        .map(|p| (-p.re).max(0.0))
        .collect();
    poles.sort_by(f64::total_cmp);
    poles.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    loop {
        if poles.is_empty() {
            return Ok(Vec::new());
        }
        let (res, _) = residue_refit(z, g, &poles)?;
        let bad: Vec<usize> = (0..poles.len()).filter(|&i| res[i] < RESIDUE_FLOOR * scale).collect();
        if bad.is_empty() {
            break;
        }
        // Drop the weakest offender and refit.
        let worst = *bad.iter().min_by(|&&a, &&b| res[a].total_cmp(&res[b])).unwrap();
        poles.remove(worst);
    }
    let (res, _) = residue_refit(z, g, &poles)?;
    let mut out: Vec<PoleEstimate> = poles
        .iter()
        .enumerate()
        .map(|(i, &mu)| {
            let mut misfit = 0.0f64;
            for (zj, gj) in z.iter().zip(g) {
                let model: f64 = poles.iter().zip(&res).map(|(p, r)| r / (zj + p)).sum();
                misfit = misfit.max((model - gj).abs() / scale);
            }
            PoleEstimate { value: mu, residue: res[i], misfit }
        })
        .collect();
    out.truncate(k_max);
    Ok(out)
}

/// Least-squares residues for frozen poles; rows scaled by `z_j` so every
/// sample carries comparable relative weight.
fn residue_refit(z: &[f64], g: &[f64], poles: &[f64]) -> Result<(Vec<f64>, f64)> {
    let a = DMatrix::from_fn(z.len(), poles.len(), |i, j| z[i] / (z[i] + poles[j]));
    let b = DVector::from_fn(z.len(), |i, _| z[i] * g[i]);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > COND_LIMIT {
        return Err(Error::IllConditioned(cond));
    }
    let x = svd.solve(&b, 0.0).map_err(|e| invalid(e.to_string()))?;
    Ok((x.iter().copied().collect(), cond))
}

/// AAA approximation of `(z_j, g_j)`; returns the poles of the final
/// barycentric form.
fn aaa_poles(z: &[f64], g: &[f64], max_support: usize) -> Result<Vec<Complex64>> {
    let n = z.len();
    let scale = max_abs(g.iter().copied());
    let mut support: Vec<usize> = Vec::new();
    let mut weights = DVector::zeros(0);
    let mean = g.iter().sum::<f64>() / n as f64;
    let mut approx = vec![mean; n];
    for _ in 0..max_support.max(1) {
        let (next, err) = (0..n)
            .filter(|i| !support.contains(i))
            .map(|i| (i, (g[i] - approx[i]).abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if err <= AAA_TOL * scale && !support.is_empty() {
            break;
        }
        support.push(next);
        let rest: Vec<usize> = (0..n).filter(|i| !support.contains(i)).collect();
        if rest.is_empty() {
            break;
        }
        let m = support.len();
        let loewner = DMatrix::from_fn(rest.len(), m, |r, c| {
            let (i, j) = (rest[r], support[c]);
            (g[i] - g[j]) / (z[i] - z[j])
        });
        let svd = loewner.clone().svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| invalid("SVD failed in rational fit"))?;
        let smallest = (0..svd.singular_values.len()).min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b])).unwrap();
        weights = if v_t.nrows() < m {
            // underdetermined: null vector lies outside the thin factor
            let full = loewner.transpose() * &loewner;
            let e = SymmetricEigen::new(full);
            let k = (0..m).min_by(|&a, &b| e.eigenvalues[a].total_cmp(&e.eigenvalues[b])).unwrap();
            e.eigenvectors.column(k).into_owned()
        } else {
            v_t.row(smallest).transpose()
        };
        for i in 0..n {
            if let Some(pos) = support.iter().position(|&s| s == i) {
                approx[i] = g[support[pos]];
                continue;
            }
            let (mut num, mut den) = (0.0, 0.0);
            for (c, &j) in support.iter().enumerate() {
                let q = weights[c] / (z[i] - z[j]);
                num += q * g[j];
                den += q;
            }
            approx[i] = num / den;
        }
    }
    barycentric_poles(&support.iter().map(|&j| z[j]).collect::<Vec<_>>(), &weights)
}

/// Roots of `Σ_j w_j / (z - z_j)` via a deflated arrowhead eigenproblem.
fn barycentric_poles(nodes: &[f64], w: &DVector<f64>) -> Result<Vec<Complex64>> {
    let m = nodes.len();
    if m < 2 {
        return Ok(Vec::new());
    }
    // Householder reflector H with H w = ±‖w‖ e_1.
    let norm = w.norm();
    let mut v = w.clone();
    v[0] += if w[0] >= 0.0 { norm } else { -norm };
    let vn = v.norm_squared();
    let house = DMatrix::identity(m, m) - (&v * v.transpose()) * (2.0 / vn);
    let zmat = DMatrix::from_diagonal(&DVector::from_column_slice(nodes));
    let a = &house * zmat * &house;
    let e = &house * DVector::from_element(m, 1.0);
    if e[0].abs() < 1e-14 * e.norm() {
        return Err(Error::IllConditioned(f64::INFINITY));
    }
    let reduced = DMatrix::from_fn(m - 1, m - 1, |i, j| a[(i + 1, j + 1)] - e[i + 1] * a[(0, j + 1)] / e[0]);
    Ok(reduced.complex_eigenvalues().iter().copied().collect())
}

/// Cluster of Ritz values attributed to one distinct eigenvalue.
#[derive(Debug, Clone)]
pub struct RitzCluster {
    /// Ritz value closest to another member of the cluster (`λ̂^β`).
    pub value: f64,
    pub ritz: Vec<f64>,
    /// Residue vectors on the V grid, one column per Ritz value.
    pub vectors: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RitzSettings {
    /// Relative Gram truncation; `None` derives it from the negative part
    /// of the Gram spectrum, which only numerical error can populate.
    pub tau: Option<f64>,
    /// Relative gap that starts a new cluster.
    pub cluster_gap: f64,
    /// Residue norms below this fraction of the largest are discarded.
    pub residue_floor: f64,
}

impl Default for RitzSettings {
    fn default() -> Self {
        Self { tau: None, cluster_gap: 0.05, residue_floor: 1e-4 }
    }
}

/// Diagnostics of the Rayleigh-Ritz stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RitzDiagnostics {
    pub gram_size: usize,
    pub kept: usize,
    pub tau: f64,
    pub negative_floor: f64,
}

/// Rayleigh-Ritz on the rational Krylov space spanned by the resolvent
/// samples. With `H(z) = Φ D(z) Φᵀ`, the block matrices
/// `G_ij = (Ĥ_i - Ĥ_j) / (z_j - z_i)` (diagonal `-Ĥ'_i`) and
/// `K_ij = Ĥ_i - z_j G_ij` (diagonal `Ĥ_i + z_i Ĥ'_i`) equal `XᵀX` and
/// `Xᵀ diag(μ) X`; the pencil `(K, G)` has Ritz values approximating the
/// pole locations `μ`. Residue vectors are `Σ_i H(z_i) Ξ y_i` on the V grid.
pub fn ritz_poles(block: &HvBlock, settings: &RitzSettings) -> Result<(Vec<RitzCluster>, RitzDiagnostics)> {
    let nz = block.z.len();
    let p = block.probes.ncols();
    let nv = block.probes.nrows();
    let n = nz * p;
    let mut g = DMatrix::zeros(n, n);
    let mut k = DMatrix::zeros(n, n);
    for i in 0..nz {
        for j in 0..nz {
            let (gij, kij) = if i == j {
                (-&block.dh[i], &block.h[i] + &block.dh[i] * block.z[i])
            } else {
                let gij = (&block.h[i] - &block.h[j]) / (block.z[j] - block.z[i]);
                let kij = &block.h[i] - &gij * block.z[j];
                (gij, kij)
            };
            g.view_mut((i * p, j * p), (p, p)).copy_from(&gij);
            k.view_mut((i * p, j * p), (p, p)).copy_from(&kij);
        }
    }
    // Jacobi scaling is a congruence of the pencil and balances truncation.
    let d = DVector::from_fn(n, |i, _| 1.0 / g[(i, i)].abs().max(f64::MIN_POSITIVE).sqrt());
    let scale = |m: &DMatrix<f64>| DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]) * d[i] * d[j]);
    let g = scale(&g);
    let k = scale(&k);
    let eg = SymmetricEigen::new(g);
    let top = eg.eigenvalues.max();
    let negative_floor = (-eg.eigenvalues.min()).max(0.0) / top;
    let tau = settings.tau.unwrap_or_else(|| (10.0 * negative_floor).max(1e-14));
    let keep: Vec<usize> = (0..n).filter(|&i| eg.eigenvalues[i] > tau * top).collect();
    if keep.is_empty() {
        return Ok((Vec::new(), RitzDiagnostics { gram_size: n, kept: 0, tau, negative_floor }));
    }
    let t = DMatrix::from_fn(n, keep.len(), |r, c| eg.eigenvectors[(r, keep[c])] / eg.eigenvalues[keep[c]].sqrt());
    let reduced = t.tr_mul(&k) * &t;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let er = SymmetricEigen::new(reduced);
    let y = &t * &er.eigenvectors;
    // residue vectors r = Σ_i Ĥ_i y_i
    let mut pairs: Vec<(f64, DVector<f64>)> = (0..keep.len())
        .map(|c| {
            let mut r = DVector::zeros(nv);
            for i in 0..nz {
                let yi = y.column(c).rows(i * p, p).component_mul(&d.rows(i * p, p));
                r += &block.raw[i] * yi;
            }
            (er.eigenvalues[c], r)
        })
        .collect();
    let rmax = pairs.iter().map(|(_, r)| r.norm()).fold(0.0, f64::max);
    pairs.retain(|(theta, r)| *theta > -AXIS_TOL && r.norm() >= settings.residue_floor * rmax);
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut clusters: Vec<RitzCluster> = Vec::new();
    let mut current: Vec<(f64, DVector<f64>)> = Vec::new();
    let flush = |current: &mut Vec<(f64, DVector<f64>)>, clusters: &mut Vec<RitzCluster>| {
        if current.is_empty() {
            return;
        }
        let cols: Vec<DVector<f64>> = current.iter().map(|(_, r)| r.clone()).collect();
        // Accurate Ritz values of a multiple eigenvalue coalesce; stray ones
        // drift away from the tightest pair.
        let lead = (0..current.len())
            .map(|i| {
                let gap = (0..current.len()).filter(|&j| j != i).map(|j| (current[i].0 - current[j].0).abs()).fold(f64::INFINITY, f64::min);
                (gap, current[i].0)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap()
            .1;
        clusters.push(RitzCluster {
            value: lead.max(0.0),
            ritz: current.iter().map(|(t, _)| *t).collect(),
            vectors: DMatrix::from_columns(&cols),
        });
        current.clear();
    };
    for (theta, r) in pairs {
        if let Some((first, _)) = current.first() {
            let base = first.max(0.0);
            if theta - base > settings.cluster_gap * base.max(settings.cluster_gap) {
                flush(&mut current, &mut clusters);
            }
        }
        current.push((theta, r));
    }
    flush(&mut current, &mut clusters);
    Ok((clusters, RitzDiagnostics { gram_size: n, kept: keep.len(), tau, negative_floor }))
}

/// One recovered pair `(λ̂, P̂_{V,k})`.
#[derive(Debug, Clone)]
pub struct SpectralEntry {
    /// Pole location `λ̂^β`.
    pub pole: f64,
    /// `λ̂ = pole^{1/β'}` for the declared `β'`.
    pub lambda: f64,
    /// `P̂_{V,k}` acting on V-grid vectors.
    pub residue: DMatrix<f64>,
    pub rank: usize,
    pub diagnostics: ResidueDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidueDiagnostics {
    /// `‖S - Sᵀ‖_F / ‖S‖_F` for the `L²(V)`-symmetrized form `S`.
    pub asymmetry: f64,
    /// Most negative eigenvalue of `S` relative to the largest.
    pub negativity: f64,
    /// `‖P² - P‖_F / ‖P‖_F`; zero only when `V` is the whole manifold.
    pub idempotence_defect: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralData {
    pub entries: Vec<SpectralEntry>,
    pub beta_declared: f64,
    /// Every pole used in the frozen-pole refit, including those beyond the
    /// reported entries.
    pub model_poles: Vec<f64>,
    /// Largest relative misfit of the refit model over the samples.
    pub misfit: f64,
}

impl SpectralData {
    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.lambda).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.rank).collect()
    }

    /// Partial-fraction model `Σ_k P̂_k / (z + pole_k)` of the reported entries.
    pub fn model(&self, z: f64) -> Option<DMatrix<f64>> {
        let first = self.entries.first()?;
        let mut m = DMatrix::zeros(first.residue.nrows(), first.residue.ncols());
        for e in &self.entries {
            m += &e.residue / (z + e.pole);
        }
        Some(m)
    }
}

/// Relative eigenvalue threshold for residue ranks.
pub const RANK_TOL: f64 = 1e-2;

fn residue_entry(weights: &DVector<f64>, residue: DMatrix<f64>, pole: f64, beta: f64) -> SpectralEntry {
    // S = W^{1/2} P W^{-1/2}
    let sq = weights.map(f64::sqrt);
    let s = DMatrix::from_fn(residue.nrows(), residue.ncols(), |i, j| sq[i] * residue[(i, j)] / sq[j]);
    let sn = s.norm().max(f64::MIN_POSITIVE);
    let asymmetry = (&s - s.transpose()).norm() / sn;
    let eig = SymmetricEigen::new((&s + s.transpose()) * 0.5).eigenvalues;
    let top = eig.max().max(f64::MIN_POSITIVE);
    let negativity = (-eig.min()).max(0.0) / top;
    let rank = eig.iter().filter(|v| **v > RANK_TOL * top).count();
    let idempotence_defect = (&residue * &residue - &residue).norm() / residue.norm().max(f64::MIN_POSITIVE);
    let lambda = if pole <= 0.0 { 0.0 } else { pole.powf(1.0 / beta) };
    SpectralEntry { pole, lambda, residue, rank, diagnostics: ResidueDiagnostics { asymmetry, negativity, idempotence_defect } }
}

/// Frozen-pole least squares: `Ĥ_j ≈ Σ_k R̂_k / (z_j + p_k)` entrywise, rows
/// scaled by `z_j`. The first `keep` poles are reported; the rest only absorb
/// the contribution of higher groups.
pub fn extract_projections(block: &HvBlock, poles: &[f64], beta_declared: f64, keep: usize) -> Result<SpectralData> {
    if poles.is_empty() {
        return Err(Error::EmptySpectralData);
    }
    if !(beta_declared > 0.0 && beta_declared <= 1.0) {
        return Err(invalid(format!("declared beta must lie in (0, 1], got {beta_declared}")));
    }
    let nv = block.probes.nrows();
    let rank = block.probes.clone().svd(false, false).rank(1e-10 * block.probes.norm());
    if rank < nv {
        return Err(Error::RankDeficient { rank, needed: nv });
    }
    let z = &block.z;
    let a = DMatrix::from_fn(z.len(), poles.len(), |i, j| z[i] / (z[i] + poles[j]));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax / COND_LIMIT) {
        return Err(Error::IllConditioned(smax / smin));
    }
    let p = block.probes.ncols();
    let rhs = DMatrix::from_fn(z.len(), p * p, |i, e| z[i] * block.h[i][(e % p, e / p)]);
    let x = svd.solve(&rhs, 0.0).map_err(|e| invalid(e.to_string()))?;
    let fit = &a * &x;
    let misfit = (&fit - &rhs).norm() / rhs.norm();
    let entries = poles
        .iter()
        .enumerate()
        .take(keep)
        .map(|(k, &pole)| {
            let r_hat = DMatrix::from_fn(p, p, |i, j| x[(k, i + j * p)]);
            let wx = DMatrix::from_diagonal(&block.weights) * &block.probes;
            residue_entry(&block.weights, &block.probes * r_hat * wx.transpose(), pole, beta_declared)
        })
        .collect();
    Ok(SpectralData { entries, beta_declared, model_poles: poles.to_vec(), misfit })
}

/// Residues straight from the Ritz vectors of each cluster.
pub fn ritz_projections(block: &HvBlock, clusters: &[RitzCluster], beta_declared: f64, keep: usize) -> SpectralData {
    let entries = clusters
        .iter()
        .take(keep)
        .map(|c| {
            let wv = DMatrix::from_diagonal(&block.weights) * &c.vectors;
            residue_entry(&block.weights, &c.vectors * wv.transpose(), c.value, beta_declared)
        })
        .collect();
    // Misfit of the full Ritz model Σ_c R_c R_cᵀ W Ξ / (z + θ_c).
    let wx = DMatrix::from_diagonal(&block.weights) * &block.probes;
    let mut misfit = 0.0f64;
    for (zi, raw) in block.z.iter().zip(&block.raw) {
        let mut model = DMatrix::zeros(raw.nrows(), raw.ncols());
        for c in clusters {
            let coupling = c.vectors.tr_mul(&wx);
            for (j, theta) in c.ritz.iter().enumerate() {
                model += c.vectors.column(j) * coupling.row(j) / (zi + theta);
            }
        }
        misfit = misfit.max((model - raw).norm() / raw.norm().max(f64::MIN_POSITIVE));
    }
    SpectralData { entries, beta_declared, model_poles: clusters.iter().map(|c| c.value).collect(), misfit }
}

/// Where the abscissae come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AbscissaPolicy {
    /// `z` log-spaced on `[z_min, z_max]`.
    Explicit { z_min: f64, z_max: f64 },
    /// A scalar pilot fit brackets `[0.1 λ̂_2^β, 10 λ̂_K^β]`.
    Pilot,
}

#[derive(Debug, Clone)]
pub struct RecoverySettings {
    pub groups: usize,
    pub abscissae: AbscissaPolicy,
    pub count: usize,
    pub probes: usize,
    pub seed: u64,
    pub beta_declared: f64,
    pub probe: ProbeSettings,
    pub ritz: RitzSettings,
}

impl RecoverySettings {
    pub fn new(groups: usize, beta_declared: f64) -> Self {
        Self {
            groups,
            abscissae: AbscissaPolicy::Pilot,
            count: 48,
            probes: DEFAULT_PROBES,
            seed: 0,
            beta_declared,
            probe: ProbeSettings::default(),
            ritz: RitzSettings::default(),
        }
    }
}

/// Full recovery report.
#[derive(Debug, Clone)]
pub struct Recovery {
    pub data: SpectralData,
    pub z: Vec<f64>,
    pub ritz: RitzDiagnostics,
    pub clusters: Vec<Vec<f64>>,
}

/// `z`-window from a pilot fit of the trace of a generic probe.
pub fn pilot_window(fwd: &dyn ForwardAccess, settings: &RecoverySettings) -> Result<(f64, f64)> {
    let alpha = fwd.orders().alpha;
    let patch = fwd.patch();
    // Smooth but asymmetric probe so that no low group is invisible.
    let xi = DVector::from_fn(patch.len(), |i, _| 1.0 + 0.5 * ((i as f64) * 0.7).sin() + 0.25 * ((i as f64) * 1.3).cos());
    let s = abscissae_for(alpha, 1e-3, 1e3, 32);
    let trace = probe_hv(fwd, &xi, &settings.probe, &s)?;
    let poles = fit_poles(&trace.z, &trace.trace, settings.groups + 2)?;
    let positive: Vec<f64> = poles.iter().map(|p| p.value).filter(|v| *v > 1e-6).collect();
    if positive.is_empty() {
        return Ok((1e-2, 1e2));
    }
    let first = positive[0];
    let last = positive[(settings.groups.saturating_sub(2)).min(positive.len() - 1)];
    Ok((0.1 * first, 10.0 * last))
}

/// Probe, Rayleigh-Ritz, residues from the Ritz vectors.
pub fn recover_spectrum(fwd: &dyn ForwardAccess, settings: &RecoverySettings) -> Result<Recovery> {
    let alpha = fwd.orders().alpha;
    let (z_lo, z_hi) = match settings.abscissae {
        AbscissaPolicy::Explicit { z_min, z_max } => (z_min, z_max),
        AbscissaPolicy::Pilot => pilot_window(fwd, settings)?,
    };
    let s = abscissae_for(alpha, z_lo, z_hi, settings.count);
    let probes = random_probes(fwd.patch(), settings.probes, settings.seed);
    let block = probe_block(fwd, &probes, &settings.probe, &s)?;
    let (clusters, ritz) = ritz_poles(&block, &settings.ritz)?;
    let data = ritz_projections(&block, &clusters, settings.beta_declared, settings.groups);
    Ok(Recovery { data, z: block.z.clone(), ritz, clusters: clusters.iter().map(|c| c.ritz.clone()).collect() })
}

/// Outcome of one peeling window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeelWindow {
    pub j: usize,
    pub window_end: f64,
    /// Residual after subtracting terms `1..=k`, for `k = 1..=j+1`.
    pub term_residuals: Vec<f64>,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Solver tolerance for forward-identity checks, relative to the record.
pub const SOLVER_TOL: f64 = 1e-10;

/// On `[0, T')` with `T' = (1 - 2^{-(j+1)}) S`, compares the record of `h`
/// with the forward responses of its first `j+1` terms.
pub fn peel_windowed(rec_h: &MeasurementRecord, src: &SourceH, j: usize, fwd: &dyn ForwardAccess) -> Result<PeelWindow> {
    if j + 1 > src.k_terms() {
        return Err(Error::IndexOutOfRange { index: j + 1, len: src.k_terms() });
    }
    let grid = rec_h.grid;
    let window_end = (1.0 - (-(j as f64 + 1.0)).exp2()) * src.s_inner;
    let nodes: Vec<usize> = (0..grid.len()).filter(|&i| grid.t(i) < window_end).collect();
    let scale = max_abs(rec_h.values.iter().copied()).max(f64::MIN_POSITIVE);
    let mut remainder = rec_h.values.clone();
    let mut term_residuals = Vec::with_capacity(j + 1);
    for k in 1..=j + 1 {
        let f = SpaceTimeSource::from_h_terms(grid, src, [k])?;
        let rec_k = fwd.apply(&f)?;
        remainder -= &rec_k.values;
        let r = nodes.iter().map(|&i| max_abs(remainder.row(i).iter().copied())).fold(0.0, f64::max) / scale;
        term_residuals.push(r);
    }
    let residual = *term_residuals.last().unwrap();
    let tolerance = SOLVER_TOL;
    Ok(PeelWindow { j, window_end, term_residuals, residual, tolerance, pass: residual <= 10.0 * tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fit_recovers_three_poles() {
        let z = log_spaced(0.01, 100.0, 40);
        let g: Vec<f64> = z.iter().map(|z| 0.5 / z + 0.3 / (z + 1.0) + 0.2 / (z + 4.0)).collect();
        let poles = fit_poles(&z, &g, 5).unwrap();
        let values: Vec<f64> = poles.iter().map(|p| p.value).collect();
        assert_eq!(values.len(), 3, "{values:?}");
        for (got, want) in values.iter().zip([0.0, 1.0, 4.0]) {
            assert!((got - want).abs() <= 1e-6 * want.max(1.0), "{values:?}");
        }
        assert_relative_eq!(poles[1].residue, 0.3, max_relative = 1e-6);
    }

    #[test]
    fn single_pole_from_two_samples() {
        let (c, mu) = (0.7, 2.5);
        let z = [0.3, 4.0];
        let g: Vec<f64> = z.iter().map(|z| c / (z + mu)).collect();
        let p = fit_poles(&z, &g, 1).unwrap();
        assert_relative_eq!(p[0].value, mu, max_relative = 1e-14);
        assert_relative_eq!(p[0].residue, c, max_relative = 1e-14);
    }

    #[test]
    fn zero_trace_has_no_poles() {
        let z = log_spaced(0.1, 10.0, 12);
        assert!(fit_poles(&z, &vec![0.0; 12], 3).unwrap().is_empty());
    }

    #[test]
    fn too_few_samples_rejected() {
        let z = log_spaced(0.1, 10.0, 5);
        assert!(fit_poles(&z, &vec![1.0; 5], 3).is_err());
    }

    #[test]
    fn ritz_on_synthetic_block() {
        // Two-dimensional H with poles 0.5 (rank 1) and 3 (rank 2).
        let z = log_spaced(0.05, 30.0, 10);
        let p1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let p2 = DMatrix::<f64>::identity(2, 2);
        let h: Vec<DMatrix<f64>> = z.iter().map(|z| &p1 / (z + 0.5) + &p2 / (z + 3.0)).collect();
        let dh: Vec<DMatrix<f64>> = z.iter().map(|z| -&p1 / ((z + 0.5) * (z + 0.5)) - &p2 / ((z + 3.0) * (z + 3.0))).collect();
        let block = HvBlock { z, probes: DMatrix::identity(2, 2), raw: h.clone(), h, dh, weights: DVector::from_element(2, 1.0) };
        let (clusters, _) = ritz_poles(&block, &RitzSettings::default()).unwrap();
        assert_eq!(clusters.len(), 2);
        assert_relative_eq!(clusters[0].value, 0.5, max_relative = 1e-10);
        assert_relative_eq!(clusters[1].value, 3.0, max_relative = 1e-10);
        let data = ritz_projections(&block, &clusters, 1.0, 2);
        assert!((&data.entries[0].residue - &p1).norm() < 1e-8);
        assert_eq!(data.ranks(), vec![1, 2]);
        let refit = extract_projections(&block, &[0.5, 3.0], 1.0, 2).unwrap();
        assert!((&refit.entries[1].residue - &p2).norm() < 1e-10);
    }

    #[test]
    fn beta_declaration_maps_poles() {
        let z = log_spaced(0.05, 30.0, 8);
        let h: Vec<DMatrix<f64>> = z.iter().map(|z| DMatrix::from_element(1, 1, 1.0 / (z + 2.0))).collect();
        let block = HvBlock { z, probes: DMatrix::identity(1, 1), raw: h.clone(), h, dh: Vec::new(), weights: DVector::from_element(1, 1.0) };
        let d = extract_projections(&block, &[2.0], 0.5, 1).unwrap();
        assert_relative_eq!(d.entries[0].lambda, 4.0, max_relative = 1e-15);
    }

    #[test]
    fn log_spacing_endpoints() {
        let v = log_spaced(0.1, 40.0, 24);
        assert_relative_eq!(v[0], 0.1, max_relative = 1e-15);
        assert_relative_eq!(v[23], 40.0, max_relative = 1e-14);
    }
}
