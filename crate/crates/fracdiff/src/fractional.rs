//! Fractional derivatives of sampled signals and the scalar relaxation solve
//! `∂_t^α y + λ y = b`, `y(0) = 0`.
//!
//! The solver convolves `b` with `F_λ(t) = t^{α-1} E_{α,α}(-λ t^α)` by
//! high-order product integration (see [`ConvolutionWeights`]). The L1
//! derivatives never touch Mittag-Leffler code and serve as the independent
//! check of the solver.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::gauss_legendre_on;
use crate::special::{kernel_f, mittag_leffler, rgamma, KernelParams, MLParams};

/// Uniform grid `t_i = i · t_max / n_steps`, `i = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_max: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, n_steps: usize) -> Result<Self> {
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(invalid(format!("t_max must be positive, got {t_max}")));
        }
        if n_steps < 1 {
            return Err(Error::DegenerateGrid { needed: 1, got: n_steps });
        }
        Ok(Self { t_max, n_steps })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.t_max / self.n_steps as f64
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.t(i))
    }
}

/// Real samples on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSignal {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl ScalarSignal {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Mismatch(format!("{} samples for a grid of {} nodes", values.len(), grid.len())));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        Self { grid, values: grid.nodes().map(f).collect() }
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

/// Caputo derivative of order `α`.
///
/// `α = 1`: second-order central differences, one-sided at the ends.
/// `α < 1`: the L1 scheme
/// `dt^{-α}/Γ(2-α) Σ_j ((j+1)^{1-α} - j^{1-α}) (y_{n-j} - y_{n-j-1})`,
/// exact for linear signals and of order `2 - α` for smooth ones.
pub fn caputo_l1(y: &ScalarSignal, alpha: f64) -> Result<ScalarSignal> {
    check_alpha(alpha)?;
    let n = y.grid.n_steps();
    if n < 2 {
        return Err(Error::DegenerateGrid { needed: 2, got: n });
    }
    let dt = y.grid.dt();
    let v = &y.values;
    let mut out = vec![0.0; n + 1];
    if alpha == 1.0 {
        out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dt);
        for i in 1..n {
            out[i] = (v[i + 1] - v[i - 1]) / (2.0 * dt);
        }
        out[n] = (3.0 * v[n] - 4.0 * v[n - 1] + v[n - 2]) / (2.0 * dt);
    } else {
        let e = 1.0 - alpha;
        let coeff: Vec<f64> = (0..n).map(|j| ((j + 1) as f64).powf(e) - (j as f64).powf(e)).collect();
        let diff: Vec<f64> = (0..n).map(|i| v[i + 1] - v[i]).collect();
        let scale = dt.powf(-alpha) * rgamma(2.0 - alpha);
        out.par_iter_mut().enumerate().skip(1).for_each(|(i, o)| {
            let mut acc = 0.0;
            for j in 0..i {
                acc += coeff[j] * diff[i - 1 - j];
            }
            *o = scale * acc;
        });
    }
    Ok(ScalarSignal { grid: y.grid, values: out })
}

/// Riemann-Liouville derivative: `caputo_l1(y - y_0)` plus the singular
/// term `y_0 t^{-α} / Γ(1-α)`. The value at `t = 0` is `NaN` when
/// `y_0 ≠ 0` and `α < 1`.
pub fn rl_derivative(y: &ScalarSignal, alpha: f64) -> Result<ScalarSignal> {
    check_alpha(alpha)?;
    let y0 = y.values[0];
    if y0 == 0.0 {
        return caputo_l1(y, alpha);
    }
    let shifted = ScalarSignal { grid: y.grid, values: y.values.iter().map(|v| v - y0).collect() };
    let mut out = caputo_l1(&shifted, alpha)?;
    if alpha < 1.0 {
        let c = y0 * rgamma(1.0 - alpha);
        out.values[0] = f64::NAN;
        for (i, o) in out.values.iter_mut().enumerate().skip(1) {
            *o += c * y.grid.t(i).powf(-alpha);
        }
    }
    Ok(out)
}

/// Lags `σ < NEAR_FIELD · dt` are integrated cell by cell against local
/// interpolants; beyond that the kernel is smooth on the scale of `dt`.
pub const NEAR_FIELD: usize = 64;
/// Interpolation stencil width (degree 7).
const STENCIL: usize = 8;
const CELL_NODES: usize = 12;
/// Left-endpoint Gregory coefficients for `Δ^k f_0`, `k = 1..=7`.
pub(crate) const GREGORY: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 24.0,
    19.0 / 720.0,
    -3.0 / 160.0,
    863.0 / 60480.0,
    -275.0 / 24192.0,
    33953.0 / 3628800.0,
];

/// Toeplitz weights `ω_m` with `y_n = Σ_m ω_m b_{n-m}` approximating
/// `∫_0^{t_n} F_λ(σ) b(t_n - σ) dσ`.
///
/// On lag cell `[i dt, (i+1) dt]`, `b(t_n - σ)` is replaced by its degree-7
/// Lagrange interpolant through the lags `i-3..=i+4` (shifted to start at 0),
/// so `y_n` only reads `b_0..=b_n`. Cell 0 integrates the interpolant exactly
/// through the moments `∫_0^h F(σ) (h-σ)^r dσ = r! h^{α+r} E_{α,α+r+1}(-λ h^α)`.
/// Lags past [`NEAR_FIELD`] use the trapezoid rule with seventh-order Gregory
/// corrections at the junction; the far end needs none because `b` vanishes
/// near `t = 0`.
#[derive(Debug, Clone)]
pub struct ConvolutionWeights {
    pub alpha: f64,
    pub lambda: f64,
    pub dt: f64,
    weights: Vec<f64>,
}

impl ConvolutionWeights {
    pub fn new(alpha: f64, lambda: f64, grid: &TimeGrid) -> Result<Self> {
        check_alpha(alpha)?;
        let k = KernelParams::new(alpha, 1.0, lambda)?;
        let n = grid.n_steps();
        let dt = grid.dt();
        let len = (n + 1).max(NEAR_FIELD + STENCIL);
        let mut w = vec![0.0; len];

        // Cell 0 in u = 1 - σ/dt; stencil lags j sit at u = 1 - j.
        let mut moments = [0.0; STENCIL];
        let mut fact = 1.0;
        for (r, mom) in moments.iter_mut().enumerate() {
            if r > 0 {
                fact *= r as f64;
            }
            let ml = mittag_leffler(MLParams::new(alpha, alpha + r as f64 + 1.0)?, -lambda * dt.powf(alpha))?;
            *mom = fact * dt.powf(alpha) * ml;
        }
        for j in 0..STENCIL {
            let coeffs = lagrange_monomials(j);
            w[j] += coeffs.iter().zip(&moments).map(|(c, m)| c * m).sum::<f64>();
        }

        let (gx, gw) = gauss_legendre_on(CELL_NODES, 0.0, 1.0);
        for i in 1..NEAR_FIELD {
            let start = i.saturating_sub(3);
            for (x, wq) in gx.iter().zip(&gw) {
                let f = kernel_f(&k, (i as f64 + x) * dt)? * wq * dt;
                let local = (i - start) as f64 + x;
                for j in 0..STENCIL {
                    w[start + j] += f * lagrange_at(j, local);
                }
            }
        }

        if n >= NEAR_FIELD {
            let far: Vec<f64> =
                (NEAR_FIELD..=n).map(|m| kernel_f(&k, m as f64 * dt).map(|f| f * dt)).collect::<Result<_>>()?;
            for (off, f) in far.iter().enumerate() {
                w[NEAR_FIELD + off] += f;
            }
            w[NEAR_FIELD] -= 0.5 * far[0];
            for (kk, g) in GREGORY.iter().enumerate() {
                let order = kk + 1;
                let mut binom = 1.0;
                for j in 0..=order {
                    if NEAR_FIELD + j <= n {
                        let sign = if (order - j) % 2 == 0 { 1.0 } else { -1.0 };
                        w[NEAR_FIELD + j] += g * sign * binom * far[j];
                    }
                    binom = binom * (order - j) as f64 / (j + 1) as f64;
                }
            }
        }
        w.truncate(n + 1);
        Ok(Self { alpha, lambda, dt, weights: w })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Discrete convolution; `b` may be shorter than the weight table.
    pub fn apply(&self, b: &[f64]) -> Vec<f64> {
        assert!(b.len() <= self.weights.len(), "signal longer than the weight table");
        let w = &self.weights;
        let mut y = vec![0.0; b.len()];
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += w[i - j] * b[j];
            }
            *yi = acc;
        });
        y
    }

    /// `Σ_m ω_m q^m`: the transfer function of the scheme at `q = e^{-s dt}`.
    pub fn transfer(&self, q: f64) -> f64 {
        self.weights.iter().rev().fold(0.0, |acc, w| acc * q + w)
    }
}

/// Lagrange basis polynomial `j` on the nodes `0..STENCIL`, evaluated at `x`.
fn lagrange_at(j: usize, x: f64) -> f64 {
    let mut v = 1.0;
    for k in 0..STENCIL {
        if k != j {
            v *= (x - k as f64) / (j as f64 - k as f64);
        }
    }
    v
}

/// Monomial coefficients in `u` of the Lagrange basis polynomial `j` on the
/// nodes `u_k = 1 - k`. Products of small integers stay exact in `f64`.
fn lagrange_monomials(j: usize) -> [f64; STENCIL] {
    let mut c = [0.0; STENCIL];
    c[0] = 1.0;
    let mut deg = 0;
    let mut denom = 1.0;
    let uj = 1.0 - j as f64;
    for k in 0..STENCIL {
        if k == j {
            continue;
        }
        let uk = 1.0 - k as f64;
        // multiply by (u - uk)
        for d in (0..=deg + 1).rev() {
            let hi = if d > 0 { c[d - 1] } else { 0.0 };
            c[d] = hi - uk * c[d];
        }
        deg += 1;
        denom *= uj - uk;
    }
    c.map(|v| v / denom)
}

/// Solves `∂_t^α y + λ y = b`, `y(0) = 0`, i.e.
/// `y(t) = ∫_0^t (t-τ)^{α-1} E_{α,α}(-λ (t-τ)^α) b(τ) dτ`.
///
/// `b` must vanish at `t = 0`.
pub fn solve_scalar_fde(alpha: f64, lam: f64, b: &ScalarSignal) -> Result<ScalarSignal> {
    if b.values[0] != 0.0 {
        return Err(invalid("source must vanish at t = 0"));
    }
    let w = ConvolutionWeights::new(alpha, lam, &b.grid)?;
    Ok(ScalarSignal { grid: b.grid, values: w.apply(&b.values) })
}
