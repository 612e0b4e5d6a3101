//! Hyperbolic counterpart of the measurement map: `L_V^hyp` assembled from
//! spectral pairs through sine kernels, and an independent modal
//! Störmer-Verlet solver of `(∂_t² - Δ) w = p` to check it against.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{check_patch, MeasurementRecord, RecordMeta, SpaceTimeSource};
use crate::fractional::TimeGrid;
use crate::manifold::{Patch, SpectralManifold, SpectrumGroups};
use crate::provenance::ContentHasher;
use crate::recovery::SpectralData;

/// `s(t) = sin(√λ t) / √λ`, and `t` for `λ = 0`.
pub fn sine_kernel(lambda: f64, t: f64) -> f64 {
    if lambda == 0.0 {
        t
    } else {
        let w = lambda.sqrt();
        (w * t).sin() / w
    }
}

/// Distinct eigenvalues with their sine kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveKernelSet {
    pub lambdas: Vec<f64>,
}

impl WaveKernelSet {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0)) {
            return Err(Error::InvalidParameter(format!("wave kernels need λ ≥ 0, got {l}")));
        }
        Ok(Self { lambdas })
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn eval(&self, k: usize, t: f64) -> f64 {
        sine_kernel(self.lambdas[k], t)
    }
}

/// Pairs `(λ_k, P_{V,k})` with the projections as dense V × V matrices.
#[derive(Debug, Clone)]
pub struct SpectralPairs {
    pub kernels: WaveKernelSet,
    pub projections: Vec<DMatrix<f64>>,
}

impl SpectralPairs {
    pub fn from_data(data: &SpectralData) -> Result<Self> {
        if data.entries.is_empty() {
            return Err(Error::EmptySpectralData);
        }
        Ok(Self {
            kernels: WaveKernelSet::new(data.entries.iter().map(|e| e.lambda).collect())?,
            projections: data.entries.iter().map(|e| e.residue.clone()).collect(),
        })
    }

    /// The first `count` groups of the exact spectrum.
    pub fn exact(p: &Patch, groups: &SpectrumGroups, count: usize) -> Result<Self> {
        if count == 0 || groups.is_empty() {
            return Err(Error::EmptySpectralData);
        }
        let count = count.min(groups.len());
        let projections = (0..count).map(|k| p.projection(groups, k).map(|r| r.matrix())).collect::<Result<_>>()?;
        Ok(Self { kernels: WaveKernelSet::new(groups.values[..count].to_vec())?, projections })
    }

    pub fn len(&self) -> usize {
        self.projections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projections.is_empty()
    }
}

fn wave_meta(manifold_hash: String, patch_hash: String, source_hash: &str) -> RecordMeta {
    RecordMeta { alpha: 2.0, beta: 1.0, manifold_hash, patch_hash, source_hash: source_hash.to_string() }
}

/// `∫_0^{t_n} s(t_n - τ) q(τ) dτ` by the trapezoid rule for every node, in
/// linear time via `s(t - τ) = (sin ωt cos ωτ - cos ωt sin ωτ) / ω`.
fn sine_convolution(lambda: f64, grid: &TimeGrid, q: &DMatrix<f64>) -> DMatrix<f64> {
    let dt = grid.dt();
    let (nt, nv) = q.shape();
    let mut out = DMatrix::zeros(nt, nv);
    let (mut a, mut b) = (DVector::<f64>::zeros(nv), DVector::<f64>::zeros(nv));
    let basis = |t: f64| -> (f64, f64) {
        if lambda == 0.0 {
            (1.0, t)
        } else {
            let w = lambda.sqrt();
            ((w * t).cos(), (w * t).sin() / w)
        }
    };
    for n in 0..nt {
        let t = grid.t(n);
        let (c, s) = basis(t);
        // running sums over j < n with weight dt, half weight at j = 0;
        // the j = n term has s(0) = 0
        if n > 0 {
            let w = if n == 1 { 0.5 * dt } else { dt };
            let (cj, sj) = basis(grid.t(n - 1));
            for i in 0..nv {
                a[i] += w * cj * q[(n - 1, i)];
                b[i] += w * sj * q[(n - 1, i)];
            }
        }
        for i in 0..nv {
            out[(n, i)] = s * a[i] - c * b[i];
        }
    }
    out
}

/// `Σ_k ∫_0^t s_k(t - τ) (P_{V,k} p)(τ) dτ` on the source grid.
pub fn hyp_apply(data: &SpectralPairs, p: &Patch, source: &SpaceTimeSource) -> Result<MeasurementRecord> {
    if data.is_empty() {
        return Err(Error::EmptySpectralData);
    }
    if source.n_points() != p.len() {
        return Err(Error::Mismatch(format!("source has {} V points, patch has {}", source.n_points(), p.len())));
    }
    let grid = source.grid;
    let parts: Vec<DMatrix<f64>> = data
        .projections
        .par_iter()
        .zip(data.kernels.lambdas.par_iter())
        .map(|(pk, &lambda)| {
            let q = &source.values * pk.transpose();
            sine_convolution(lambda, &grid, &q)
        })
        .collect();
    let mut values = DMatrix::zeros(grid.len(), p.len());
    for part in parts {
        values += part;
    }
    let mut h = ContentHasher::new("spectral-pairs");
    h.f64s(&data.kernels.lambdas);
    for m in &data.projections {
        h.f64s(m.as_slice());
    }
    Ok(MeasurementRecord {
        grid,
        values,
        meta: wave_meta(h.finish(), p.content_hash(), source.content_hash()),
    })
}

/// Per-mode velocity Verlet for `w'' + λ w = p_k`, `w(0) = w'(0) = 0`.
pub fn verlet_mode(lambda: f64, dt: f64, forcing: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = forcing.len();
    let (mut w, mut v) = (vec![0.0; n], vec![0.0; n]);
    for i in 1..n {
        let half = v[i - 1] + 0.5 * dt * (forcing[i - 1] - lambda * w[i - 1]);
        w[i] = w[i - 1] + dt * half;
        v[i] = half + 0.5 * dt * (forcing[i] - lambda * w[i]);
    }
    (w, v)
}

/// Quadratic invariant of the unforced Verlet map:
/// `½ v² + ½ λ (1 - λ dt² / 4) w²`.
pub fn verlet_energy(lambda: f64, dt: f64, w: f64, v: f64) -> f64 {
    0.5 * v * v + 0.5 * lambda * (1.0 - 0.25 * lambda * dt * dt) * w * w
}

/// Wave solution restricted to `V`, by modal Verlet integration.
pub fn wave_oracle(m: &SpectralManifold, p: &Patch, source: &SpaceTimeSource) -> Result<MeasurementRecord> {
    wave_oracle_modes(m, p, source, m.n_modes())
}

/// [`wave_oracle`] keeping only the first `modes` eigenfunctions.
pub fn wave_oracle_modes(m: &SpectralManifold, p: &Patch, source: &SpaceTimeSource, modes: usize) -> Result<MeasurementRecord> {
    check_patch(m, p)?;
    if modes == 0 || modes > m.n_modes() {
        return Err(Error::IndexOutOfRange { index: modes, len: m.n_modes() });
    }
    if source.n_points() != p.len() {
        return Err(Error::Mismatch(format!("source has {} V points, patch has {}", source.n_points(), p.len())));
    }
    let grid = source.grid;
    let dt = grid.dt();
    let lmax = m.eigenvalues()[..modes].iter().copied().fold(0.0, f64::max);
    let courant = dt * lmax.sqrt();
    if courant > 2.0 {
        return Err(Error::Unstable(courant));
    }
    // p_k(t) = ⟨Z p(t), φ_k⟩
    let basis = p.basis().columns(0, modes);
    let wb = DMatrix::from_diagonal(p.weights()) * basis;
    let forcing = &source.values * wb;
    let cols: Vec<Vec<f64>> = m.eigenvalues()[..modes]
        .par_iter()
        .enumerate()
        .map(|(k, &lambda)| verlet_mode(lambda, dt, forcing.column(k).as_slice()).0)
        .collect();
    let coeffs = DMatrix::from_fn(grid.len(), cols.len(), |i, k| cols[k][i]);
    Ok(MeasurementRecord {
        grid,
        values: coeffs * basis.transpose(),
        meta: wave_meta(m.content_hash(), p.content_hash(), source.content_hash()),
    })
}

/// Relative `L²(V × [0, T])` distance of two records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypComparison {
    pub relative_l2: f64,
    /// `(t_start, t_end, relative error)` on equal time windows.
    pub windows: Vec<(f64, f64, f64)>,
}

pub const COMPARE_WINDOWS: usize = 8;

/// Differences are measured against the root mean square of both norms, so
/// the report is symmetric and vanishes only for identical records.
pub fn compare_hyp(a: &MeasurementRecord, b: &MeasurementRecord, weights: &DVector<f64>) -> Result<HypComparison> {
    if a.grid != b.grid || a.values.shape() != b.values.shape() {
        return Err(Error::Mismatch("records live on different grids".into()));
    }
    if weights.len() != a.n_points() {
        return Err(Error::Mismatch("weights do not match the V grid".into()));
    }
    let n = a.grid.n_steps();
    let dt = a.grid.dt();
    let sq = |r: &DMatrix<f64>, i: usize| -> f64 { (0..r.ncols()).map(|j| weights[j] * r[(i, j)] * r[(i, j)]).sum() };
    let diff = &a.values - &b.values;
    let integral = |lo: usize, hi: usize, r: &DMatrix<f64>| -> f64 {
        (lo..=hi).map(|i| if i == lo || i == hi { 0.5 } else { 1.0 } * sq(r, i)).sum::<f64>() * dt
    };
    let rel = |lo: usize, hi: usize| -> f64 {
        let d = integral(lo, hi, &diff);
        let s = 0.5 * (integral(lo, hi, &a.values) + integral(lo, hi, &b.values));
        if d == 0.0 {
            0.0
        } else if s == 0.0 {
            f64::INFINITY
        } else {
            (d / s).sqrt()
        }
    };
    let windows = (0..COMPARE_WINDOWS)
        .filter_map(|w| {
            let lo = w * n / COMPARE_WINDOWS;
            let hi = (w + 1) * n / COMPARE_WINDOWS;
            (hi > lo).then(|| (a.grid.t(lo), a.grid.t(hi), rel(lo, hi)))
        })
        .collect();
    Ok(HypComparison { relative_l2: rel(0, n), windows })
}
