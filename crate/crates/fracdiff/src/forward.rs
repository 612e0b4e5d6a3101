//! Forward problem: modal solution of `∂_t^α u + (-Δ)^β u = f`, `u(0) = 0`,
//! and the local source-to-solution operator `L_V f = u^f|_V`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fractional::{ConvolutionWeights, ScalarSignal, TimeGrid};
use crate::manifold::{group_distinct, Patch, SpectralManifold, SpectrumGroups, DEFAULT_GROUP_TOL};
use crate::provenance::ContentHasher;
use crate::sources::{SourceH, TimeProfile};
use crate::special::rgamma;

/// Time order `α` and spatial order `β`, both in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOrders {
    pub alpha: f64,
    pub beta: f64,
}

impl ModelOrders {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(Self { alpha, beta })
    }

    /// `λ^β`.
    pub fn rate(&self, lambda: f64) -> f64 {
        if lambda == 0.0 {
            0.0
        } else {
            lambda.powf(self.beta)
        }
    }
}

/// Source sampled on the time grid and the V grid (`n_time × n_V`), with its
/// time derivative when known in closed form.
#[derive(Debug, Clone)]
pub struct SpaceTimeSource {
    pub grid: TimeGrid,
    pub values: DMatrix<f64>,
    pub derivative: Option<DMatrix<f64>>,
    hash: String,
}

impl SpaceTimeSource {
    pub fn sampled(grid: TimeGrid, values: DMatrix<f64>, derivative: Option<DMatrix<f64>>) -> Result<Self> {
        if values.nrows() != grid.len() {
            return Err(Error::Mismatch(format!("{} time rows for {} nodes", values.nrows(), grid.len())));
        }
        if let Some(d) = &derivative {
            if d.shape() != values.shape() {
                return Err(Error::Mismatch("derivative shape differs from source".into()));
            }
        }
        if values.row(0).iter().any(|v| *v != 0.0) {
            return Err(invalid("source must vanish at t = 0"));
        }
        let mut h = ContentHasher::new("space-time-source");
        h.f64(grid.t_max()).u64(grid.n_steps() as u64).u64(values.ncols() as u64).f64s(values.as_slice());
        Ok(Self { grid, values, derivative, hash: h.finish() })
    }

    pub fn zeros(grid: TimeGrid, n_points: usize) -> Self {
        let z = DMatrix::zeros(grid.len(), n_points);
        Self::sampled(grid, z.clone(), Some(z)).expect("zero source is admissible")
    }

    /// `Σ_i a_i(t) ξ_i(x)` with exact time derivatives.
    pub fn superpose(grid: TimeGrid, terms: &[(&dyn TimeProfile, DVector<f64>)]) -> Result<Self> {
        let n_points = terms.first().map(|(_, x)| x.len()).ok_or_else(|| invalid("no source terms"))?;
        let mut values = DMatrix::zeros(grid.len(), n_points);
        let mut deriv = DMatrix::zeros(grid.len(), n_points);
        for (a, xi) in terms {
            if xi.len() != n_points {
                return Err(Error::Mismatch("spatial factors differ in length".into()));
            }
            let (lo, hi) = a.support();
            for (i, t) in grid.nodes().enumerate() {
                if t <= lo || t >= hi {
                    continue;
                }
                let (v, d) = (a.value(t), a.derivative(t, 1));
                for j in 0..n_points {
                    values[(i, j)] += v * xi[j];
                    deriv[(i, j)] += d * xi[j];
                }
            }
        }
        Self::sampled(grid, values, Some(deriv))
    }

    pub fn separable(grid: TimeGrid, a: &dyn TimeProfile, xi: DVector<f64>) -> Result<Self> {
        Self::superpose(grid, &[(a, xi)])
    }

    /// Terms `h_k ψ_{r(k)}` for `k ∈ ks` (1-based).
    pub fn from_h_terms(grid: TimeGrid, src: &SourceH, ks: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut terms = Vec::new();
        for k in ks {
            terms.push((src.term(k)? as &dyn TimeProfile, src.spatial(k)?));
        }
        Self::superpose(grid, &terms)
    }

    pub fn n_points(&self) -> usize {
        self.values.ncols()
    }

    /// Exact derivative when available, second-order differences otherwise.
    pub fn time_derivative(&self) -> DMatrix<f64> {
        if let Some(d) = &self.derivative {
            return d.clone();
        }
        let n = self.grid.n_steps();
        let dt = self.grid.dt();
        let v = &self.values;
        let mut d = DMatrix::zeros(v.nrows(), v.ncols());
        for j in 0..v.ncols() {
            if n < 2 {
                break;
            }
            d[(0, j)] = (-3.0 * v[(0, j)] + 4.0 * v[(1, j)] - v[(2, j)]) / (2.0 * dt);
            for i in 1..n {
                d[(i, j)] = (v[(i + 1, j)] - v[(i - 1, j)]) / (2.0 * dt);
            }
            d[(n, j)] = (3.0 * v[(n, j)] - 4.0 * v[(n - 1, j)] + v[(n - 2, j)]) / (2.0 * dt);
        }
        d
    }

    pub fn content_hash(&self) -> &str {
        &self.hash
    }
}

/// Modal coefficients `u_k(t_i)`, one column per mode.
#[derive(Debug, Clone)]
pub struct ModalSolution {
    pub grid: TimeGrid,
    pub orders: ModelOrders,
    pub coeffs: DMatrix<f64>,
    pub manifold_hash: String,
    pub source_hash: String,
}

impl ModalSolution {
    pub fn mode(&self, k: usize) -> ScalarSignal {
        ScalarSignal { grid: self.grid, values: self.coeffs.column(k).iter().copied().collect() }
    }

    /// `max_i Σ_k u_k(t_i)²`, the squared sup in time of `‖u(t)‖_{L²(M)}`.
    pub fn sup_norm_sq(&self) -> f64 {
        self.coeffs.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max)
    }
}

pub(crate) fn check_patch(m: &SpectralManifold, p: &Patch) -> Result<()> {
    if p.manifold_hash() != m.content_hash() {
        return Err(Error::Mismatch("patch was built on a different manifold".into()));
    }
    Ok(())
}

fn group_weights(
    m: &SpectralManifold,
    orders: ModelOrders,
    grid: &TimeGrid,
) -> Result<(SpectrumGroups, Vec<ConvolutionWeights>)> {
    let groups = group_distinct(m.eigenvalues(), DEFAULT_GROUP_TOL)?;
    let weights = groups
        .values
        .par_iter()
        .map(|lam| ConvolutionWeights::new(orders.alpha, orders.rate(*lam), grid))
        .collect::<Result<Vec<_>>>()?;
    Ok((groups, weights))
}

/// `u_k = ∫ (t-τ)^{α-1} E_{α,α}(-λ_k^β (t-τ)^α) f_k(τ) dτ` with
/// `f_k = ⟨f, φ_k⟩_{L²(M)}`, for every retained mode.
pub fn solve_modes(m: &SpectralManifold, p: &Patch, orders: ModelOrders, f: &SpaceTimeSource) -> Result<ModalSolution> {
    check_patch(m, p)?;
    if f.n_points() != p.len() {
        return Err(Error::Mismatch(format!("source has {} points, patch {}", f.n_points(), p.len())));
    }
    let wb = DMatrix::from_diagonal(p.weights()) * p.basis();
    let b = &f.values * wb;
    let (groups, weights) = group_weights(m, orders, &f.grid)?;
    let cols: Vec<Vec<f64>> = (0..m.n_modes())
        .into_par_iter()
        .map(|k| {
            let g = groups.group_of(k).expect("every mode is grouped");
            let bk: Vec<f64> = b.column(k).iter().copied().collect();
            weights[g].apply(&bk)
        })
        .collect();
    let coeffs = DMatrix::from_fn(f.grid.len(), m.n_modes(), |i, k| cols[k][i]);
    Ok(ModalSolution {
        grid: f.grid,
        orders,
        coeffs,
        manifold_hash: m.content_hash(),
        source_hash: f.content_hash().to_string(),
    })
}

/// Provenance carried by every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub alpha: f64,
    pub beta: f64,
    pub manifold_hash: String,
    pub patch_hash: String,
    pub source_hash: String,
}

/// Sampled `L_V f(t_i)`, one row per time node, one column per V-grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub grid: TimeGrid,
    pub values: DMatrix<f64>,
    pub meta: RecordMeta,
}

impl MeasurementRecord {
    pub fn n_points(&self) -> usize {
        self.values.ncols()
    }

    pub fn at(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    /// Row-major `time × V` payload.
    pub fn row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        for r in self.values.row_iter() {
            out.extend(r.iter());
        }
        out
    }

    pub fn from_row_major(grid: TimeGrid, n_points: usize, data: &[f64], meta: RecordMeta) -> Result<Self> {
        if data.len() != grid.len() * n_points {
            return Err(Error::Mismatch(format!("{} values for {} × {}", data.len(), grid.len(), n_points)));
        }
        Ok(Self { grid, values: DMatrix::from_row_slice(grid.len(), n_points, data), meta })
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new("measurement-record");
        h.f64(self.grid.t_max()).u64(self.grid.n_steps() as u64);
        h.f64(self.meta.alpha).f64(self.meta.beta);
        h.str(&self.meta.manifold_hash).str(&self.meta.patch_hash).str(&self.meta.source_hash);
        h.u64(self.n_points() as u64).f64s(&self.row_major());
        h.finish()
    }
}

/// `Σ_k u_k(t_i) φ_k|_V`.
pub fn lss_apply(sol: &ModalSolution, p: &Patch) -> Result<MeasurementRecord> {
    if p.manifold_hash() != sol.manifold_hash {
        return Err(Error::Mismatch("solution and patch live on different manifolds".into()));
    }
    let values = &sol.coeffs * p.basis().transpose();
    Ok(MeasurementRecord {
        grid: sol.grid,
        values,
        meta: RecordMeta {
            alpha: sol.orders.alpha,
            beta: sol.orders.beta,
            manifold_hash: sol.manifold_hash.clone(),
            patch_hash: p.content_hash(),
            source_hash: sol.source_hash.clone(),
        },
    })
}

/// Keeps the nodes `t_i ≤ T`; `T = t_max` is the identity.
pub fn lss_truncate(rec: &MeasurementRecord, t_end: f64) -> Result<MeasurementRecord> {
    let dt = rec.grid.dt();
    let slack = 1e-9 * dt;
    if !(t_end > 0.0) || t_end > rec.grid.t_max() + slack {
        return Err(invalid(format!("truncation time {t_end} outside (0, {}]", rec.grid.t_max())));
    }
    let last = (((t_end + slack) / dt).floor() as usize).min(rec.grid.n_steps());
    if last == 0 {
        return Err(Error::DegenerateGrid { needed: 1, got: 0 });
    }
    let grid = TimeGrid::new(last as f64 * dt, last)?;
    Ok(MeasurementRecord { grid, values: rec.values.rows(0, last + 1).into_owned(), meta: rec.meta.clone() })
}

/// `max(T^{2α+1} / Γ(α+1)², T / λ_2^{2β})`: with `E = ∫_0^T ‖f'‖²`, the
/// solution obeys `sup_t ‖u^f(t)‖² ≤ C · E` for sources supported in `(0, T)`.
pub fn sup_bound_constant(orders: ModelOrders, t_horizon: f64, lambda2: f64) -> f64 {
    let g = rgamma(orders.alpha + 1.0);
    let zero_mode = t_horizon.powf(2.0 * orders.alpha + 1.0) * g * g;
    let others = t_horizon / lambda2.powf(2.0 * orders.beta);
    zero_mode.max(others)
}

/// `∫_0^{t_max} ‖f'(τ)‖²_{L²(V)} dτ` by the trapezoid rule.
pub fn derivative_energy(f: &SpaceTimeSource, p: &Patch) -> f64 {
    let d = f.time_derivative();
    let w = p.weights();
    let dt = f.grid.dt();
    let n = f.grid.n_steps();
    d.row_iter()
        .enumerate()
        .map(|(i, r)| {
            let e: f64 = r.iter().zip(w.iter()).map(|(v, w)| w * v * v).sum();
            if i == 0 || i == n {
                0.5 * e
            } else {
                e
            }
        })
        .sum::<f64>()
        * dt
}

/// Black-box access to `L_V` as used by the recovery stage.
pub trait ForwardAccess: Sync {
    fn patch(&self) -> &Patch;

    fn orders(&self) -> ModelOrders;

    fn apply(&self, f: &SpaceTimeSource) -> Result<MeasurementRecord>;

    /// Prepares `ξ ↦ L_V(a ξ)` for a profile sampled on `grid`.
    fn separable<'a>(&'a self, a: &dyn TimeProfile, grid: TimeGrid) -> Result<Box<dyn SeparableResponse + 'a>>;
}

pub trait SeparableResponse: Sync {
    /// Samples of the time profile `a`.
    fn profile(&self) -> &ScalarSignal;

    fn respond(&self, xi: &DVector<f64>) -> MeasurementRecord;
}

/// [`ForwardAccess`] backed by the eigenfunction expansion.
pub struct SpectralForward<'m> {
    manifold: &'m SpectralManifold,
    patch: &'m Patch,
    orders: ModelOrders,
}

impl<'m> SpectralForward<'m> {
    pub fn new(manifold: &'m SpectralManifold, patch: &'m Patch, orders: ModelOrders) -> Result<Self> {
        check_patch(manifold, patch)?;
        Ok(Self { manifold, patch, orders })
    }
}

struct SpectralSeparable<'m> {
    profile: ScalarSignal,
    profile_hash: String,
    // n_time × n_groups scalar responses
    responses: DMatrix<f64>,
    groups: SpectrumGroups,
    patch: &'m Patch,
    meta: RecordMeta,
}

impl ForwardAccess for SpectralForward<'_> {
    fn patch(&self) -> &Patch {
        self.patch
    }

    fn orders(&self) -> ModelOrders {
        self.orders
    }

    fn apply(&self, f: &SpaceTimeSource) -> Result<MeasurementRecord> {
        lss_apply(&solve_modes(self.manifold, self.patch, self.orders, f)?, self.patch)
    }

    fn separable<'a>(&'a self, a: &dyn TimeProfile, grid: TimeGrid) -> Result<Box<dyn SeparableResponse + 'a>> {
        let profile = ScalarSignal::from_fn(grid, |t| a.value(t));
        if profile.values[0] != 0.0 {
            return Err(invalid("probe profile must vanish at t = 0"));
        }
        let (groups, weights) = group_weights(self.manifold, self.orders, &grid)?;
        let cols: Vec<Vec<f64>> = weights.par_iter().map(|w| w.apply(&profile.values)).collect();
        let responses = DMatrix::from_fn(grid.len(), groups.len(), |i, g| cols[g][i]);
        let mut h = ContentHasher::new("profile");
        h.f64(grid.t_max()).u64(grid.n_steps() as u64);
        a.describe(&mut h);
        Ok(Box::new(SpectralSeparable {
            profile,
            profile_hash: h.finish(),
            responses,
            groups,
            patch: self.patch,
            meta: RecordMeta {
                alpha: self.orders.alpha,
                beta: self.orders.beta,
                manifold_hash: self.manifold.content_hash(),
                patch_hash: self.patch.content_hash(),
                source_hash: String::new(),
            },
        }))
    }
}

impl SeparableResponse for SpectralSeparable<'_> {
    fn profile(&self) -> &ScalarSignal {
        &self.profile
    }

    fn respond(&self, xi: &DVector<f64>) -> MeasurementRecord {
        let b = self.patch.basis();
        let c = self.patch.coefficients(xi);
        let mut r = DMatrix::zeros(self.groups.len(), b.nrows());
        for (g, range) in self.groups.ranges.iter().enumerate() {
            for k in range.clone() {
                for i in 0..b.nrows() {
                    r[(g, i)] += c[k] * b[(i, k)];
                }
            }
        }
        let mut meta = self.meta.clone();
        let mut h = ContentHasher::new("separable-source");
        h.str(&self.profile_hash).f64s(xi.as_slice());
        meta.source_hash = h.finish();
        MeasurementRecord { grid: self.profile.grid, values: &self.responses * r, meta }
    }
}
