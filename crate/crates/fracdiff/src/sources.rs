//! Time profiles with closed-form derivatives, the engineered single
//! measurement source `h`, and the mollifier / Riemann-sum families built
//! from it.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fractional::TimeGrid;
use crate::manifold::Patch;
use crate::provenance::ContentHasher;
use crate::quadrature::gauss_legendre_on;

/// A scalar function of time with derivatives available in closed form.
pub trait TimeProfile: Send + Sync + Debug {
    /// `d^order/dt^order` at `t`. Orders above [`TimeProfile::max_order`] panic.
    fn derivative(&self, t: f64, order: usize) -> f64;

    fn value(&self, t: f64) -> f64 {
        self.derivative(t, 0)
    }

    fn max_order(&self) -> usize;

    /// Open interval outside of which the profile and its derivatives vanish.
    fn support(&self) -> (f64, f64);

    /// Feeds a canonical description into a provenance hash.
    fn describe(&self, h: &mut ContentHasher);
}

pub type ProfileRef = Arc<dyn TimeProfile>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BumpKind {
    /// `(1 - t²)^8`, only `C^7` across `±1`.
    PolyBump,
    /// `exp(-1 / (1 - t²))`.
    #[default]
    ExpBump,
}

const EXP_MAX_ORDER: usize = 12;
const POLY_MAX_ORDER: usize = 7;

/// Bump `n` supported in `(-1, 1)` with derivatives and the running maxima
/// `m_k = max_{l ≤ k} sup |n^(l)|`.
#[derive(Debug, Clone)]
pub struct BumpProfile {
    kind: BumpKind,
    // exp-bump: n^(l) = n · Q_l(t) / (1 - t²)^{2l}; poly-bump: coefficients of n^(l).
    polys: Vec<Vec<f64>>,
    sup: Vec<f64>,
    m: Vec<f64>,
    integral: f64,
}

pub fn build_bump(kind: BumpKind) -> BumpProfile {
    let polys = match kind {
        BumpKind::ExpBump => exp_bump_polys(EXP_MAX_ORDER),
        BumpKind::PolyBump => poly_bump_polys(POLY_MAX_ORDER),
    };
    let mut b = BumpProfile { kind, polys, sup: Vec::new(), m: Vec::new(), integral: 0.0 };
    b.sup = (0..=b.max_order()).map(|l| sup_abs(|t| b.derivative(t, l))).collect();
    let mut run = 0.0f64;
    b.m = b
        .sup
        .iter()
        .map(|s| {
            run = run.max(*s);
            run
        })
        .collect();
    let mut integral = 0.0;
    for p in 0..64 {
        let lo = -1.0 + p as f64 / 32.0;
        let (x, w) = gauss_legendre_on(16, lo, lo + 1.0 / 32.0);
        integral += x.iter().zip(&w).map(|(x, w)| w * b.derivative(*x, 0)).sum::<f64>();
    }
    b.integral = integral;
    b
}

fn poly_mul_add(acc: &mut Vec<f64>, p: &[f64], q: &[f64], scale: f64) {
    if acc.len() < p.len() + q.len() - 1 {
        acc.resize(p.len() + q.len() - 1, 0.0);
    }
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            acc[i + j] += scale * a * b;
        }
    }
}

fn poly_deriv(p: &[f64]) -> Vec<f64> {
    if p.len() <= 1 {
        return vec![0.0];
    }
    p.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c).collect()
}

fn poly_eval(p: &[f64], t: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

// Q_{l+1} = -2t Q_l + (1-t²)² Q_l' + 4 l t (1-t²) Q_l
fn exp_bump_polys(max_order: usize) -> Vec<Vec<f64>> {
    let q2 = [1.0, 0.0, -2.0, 0.0, 1.0];
    let t1q = [0.0, 1.0, 0.0, -1.0];
    let mut out = vec![vec![1.0]];
    for l in 0..max_order {
        let q = &out[l];
        let mut next = Vec::new();
        poly_mul_add(&mut next, q, &[0.0, -2.0], 1.0);
        poly_mul_add(&mut next, &poly_deriv(q), &q2, 1.0);
        poly_mul_add(&mut next, q, &t1q, 4.0 * l as f64);
        out.push(next);
    }
    out
}

fn poly_bump_polys(max_order: usize) -> Vec<Vec<f64>> {
    // (1 - t²)^8 expanded
    let mut p = vec![1.0];
    for _ in 0..8 {
        let mut next = Vec::new();
        poly_mul_add(&mut next, &p, &[1.0, 0.0, -1.0], 1.0);
        p = next;
    }
    let mut out = vec![p];
    for l in 0..max_order {
        let d = poly_deriv(&out[l]);
        out.push(d);
    }
    out
}

/// `sup_{(-1,1)} |f|` by dense sampling and golden-section refinement.
fn sup_abs(f: impl Fn(f64) -> f64) -> f64 {
    let n = 4000;
    let h = 2.0 / n as f64;
    let (mut best, mut at) = (0.0f64, 0.0);
    for i in 1..n {
        let t = -1.0 + i as f64 * h;
        let v = f(t).abs();
        if v > best {
            best = v;
            at = t;
        }
    }
    let (mut a, mut b) = (at - h, at + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c).abs() > f(d).abs() {
            b = d;
        } else {
            a = c;
        }
    }
    best.max(f(0.5 * (a + b)).abs())
}

impl BumpProfile {
    pub fn kind(&self) -> BumpKind {
        self.kind
    }

    /// `m_k`; indices past the tabulated orders reuse the last entry.
    pub fn m(&self, k: usize) -> f64 {
        self.m[k.min(self.m.len() - 1)]
    }

    /// `sup |n^(l)|`.
    pub fn sup(&self, l: usize) -> f64 {
        self.sup[l]
    }

    /// `∫ n`.
    pub fn integral(&self) -> f64 {
        self.integral
    }
}

impl TimeProfile for BumpProfile {
    fn derivative(&self, t: f64, order: usize) -> f64 {
        assert!(order <= self.max_order(), "derivative order {order} not available");
        if t <= -1.0 || t >= 1.0 {
            return 0.0;
        }
        let q = 1.0 - t * t;
        match self.kind {
            BumpKind::ExpBump => {
                let env = (-1.0 / q - 2.0 * order as f64 * q.ln()).exp();
                if env == 0.0 {
                    0.0
                } else {
                    env * poly_eval(&self.polys[order], t)
                }
            }
            BumpKind::PolyBump => poly_eval(&self.polys[order], t),
        }
    }

    fn max_order(&self) -> usize {
        self.polys.len() - 1
    }

    fn support(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }

    fn describe(&self, h: &mut ContentHasher) {
        h.str("bump").str(match self.kind {
            BumpKind::ExpBump => "exp-bump",
            BumpKind::PolyBump => "poly-bump",
        });
    }
}

/// `amplitude · inner(rate · (t - shift))`.
#[derive(Debug, Clone)]
pub struct Affine {
    pub inner: ProfileRef,
    pub amplitude: f64,
    pub rate: f64,
    pub shift: f64,
}

impl Affine {
    pub fn new(inner: ProfileRef, amplitude: f64, rate: f64, shift: f64) -> Result<Self> {
        if !(rate > 0.0) || !amplitude.is_finite() || !shift.is_finite() {
            return Err(invalid("affine profile needs a positive rate and finite amplitude and shift"));
        }
        Ok(Self { inner, amplitude, rate, shift })
    }

    /// Bump of height `amplitude · n(0)` supported on `(lo, hi)`.
    pub fn window(bump: Arc<BumpProfile>, lo: f64, hi: f64, amplitude: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(invalid(format!("empty window ({lo}, {hi})")));
        }
        Self::new(bump, amplitude, 2.0 / (hi - lo), 0.5 * (lo + hi))
    }
}

impl TimeProfile for Affine {
    fn derivative(&self, t: f64, order: usize) -> f64 {
        self.amplitude * self.rate.powi(order as i32) * self.inner.derivative(self.rate * (t - self.shift), order)
    }

    fn max_order(&self) -> usize {
        self.inner.max_order()
    }

    fn support(&self) -> (f64, f64) {
        let (lo, hi) = self.inner.support();
        (self.shift + lo / self.rate, self.shift + hi / self.rate)
    }

    fn describe(&self, h: &mut ContentHasher) {
        h.str("affine").f64(self.amplitude).f64(self.rate).f64(self.shift);
        self.inner.describe(h);
    }
}

/// One term `h_k(t) = S^k / (2^{k(k+2)} m_k) · n(2^{k+1}(t/S - 1) + 3)`.
#[derive(Debug, Clone)]
pub struct HTerm {
    pub k: usize,
    pub s_inner: f64,
    pub coeff: f64,
    bump: Arc<BumpProfile>,
}

impl HTerm {
    fn new(bump: Arc<BumpProfile>, k: usize, s_inner: f64) -> Self {
        let ki = k as i32;
        let log2 = ki as f64 * s_inner.log2() - (ki * (ki + 2)) as f64;
        let coeff = log2.exp2() / bump.m(k);
        Self { k, s_inner, coeff, bump }
    }

    fn rate(&self) -> f64 {
        (self.k as f64 + 1.0).exp2() / self.s_inner
    }

    /// `∫ h_k`.
    pub fn integral(&self) -> f64 {
        self.coeff * self.bump.integral() / self.rate()
    }
}

impl TimeProfile for HTerm {
    fn derivative(&self, t: f64, order: usize) -> f64 {
        let r = self.rate();
        self.coeff * r.powi(order as i32) * self.bump.derivative(r * (t - self.s_inner) + 3.0, order)
    }

    fn max_order(&self) -> usize {
        self.bump.max_order()
    }

    fn support(&self) -> (f64, f64) {
        let s = self.s_inner;
        let k = self.k as i32;
        ((1.0 - 2f64.powi(1 - k)) * s, (1.0 - 2f64.powi(-k)) * s)
    }

    fn describe(&self, h: &mut ContentHasher) {
        h.str("h-term").u64(self.k as u64).f64(self.s_inner);
        self.bump.describe(h);
    }
}

/// `r(1), r(2), … = 1, 1, 2, 1, 2, 3, 1, 2, 3, 4, …` (1-based).
pub fn diagonal_sequence(len: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    let mut block = 1;
    while out.len() < len {
        for i in 1..=block {
            if out.len() == len {
                break;
            }
            out.push(i);
        }
        block += 1;
    }
    out
}

/// Truncated single-measurement source `Σ_{k ≤ K} h_k(t) ψ_{r(k)}(x)`.
#[derive(Debug, Clone)]
pub struct SourceH {
    pub t_horizon: f64,
    pub s_inner: f64,
    pub terms: Vec<HTerm>,
    /// Spatial sequence on the V grid, one column per `ψ_i`.
    pub psi: DMatrix<f64>,
    /// 1-based diagonal indices `r(k)`.
    pub r: Vec<usize>,
}

pub const DEFAULT_K_TERMS: usize = 8;
/// Minimum number of grid nodes inside each `supp h_k`.
pub const MIN_SUPPORT_NODES: usize = 16;

pub fn build_h(bump: Arc<BumpProfile>, t_horizon: f64, s_inner: f64, psi: DMatrix<f64>, k_terms: usize) -> Result<SourceH> {
    if !(s_inner > 0.0 && s_inner < t_horizon) {
        return Err(invalid(format!("need 0 < S < T, got S = {s_inner}, T = {t_horizon}")));
    }
    if k_terms == 0 {
        return Err(invalid("K_terms must be at least 1"));
    }
    if psi.ncols() == 0 || psi.nrows() == 0 {
        return Err(invalid("spatial sequence is empty"));
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(invalid("spatial sequence has non-finite entries"));
    }
    let terms = (1..=k_terms).map(|k| HTerm::new(bump.clone(), k, s_inner)).collect();
    Ok(SourceH { t_horizon, s_inner, terms, psi, r: diagonal_sequence(k_terms) })
}

impl SourceH {
    pub fn k_terms(&self) -> usize {
        self.terms.len()
    }

    /// Term `k` (1-based).
    pub fn term(&self, k: usize) -> Result<&HTerm> {
        if k == 0 || k > self.terms.len() {
            return Err(Error::IndexOutOfRange { index: k, len: self.terms.len() });
        }
        Ok(&self.terms[k - 1])
    }

    /// `ψ_{r(k)}`; indices past the number of columns wrap around.
    pub fn spatial(&self, k: usize) -> Result<DVector<f64>> {
        self.term(k)?;
        let col = (self.r[k - 1] - 1) % self.psi.ncols();
        Ok(self.psi.column(col).into_owned())
    }

    /// Time envelope `Σ_k h_k(t)`.
    pub fn envelope(&self, t: f64, order: usize) -> f64 {
        self.terms.iter().map(|h| h.derivative(t, order)).sum()
    }

    /// Rejects terms whose support holds fewer than [`MIN_SUPPORT_NODES`] nodes.
    pub fn check_resolution(&self, grid: &TimeGrid) -> Result<()> {
        if grid.t_max() < self.t_horizon {
            return Err(invalid(format!("time grid ends at {} before T = {}", grid.t_max(), self.t_horizon)));
        }
        for h in &self.terms {
            let (lo, hi) = h.support();
            let nodes = grid.nodes().filter(|t| *t > lo && *t < hi).count();
            if nodes < MIN_SUPPORT_NODES {
                return Err(Error::UnderResolved { term: h.k, nodes, needed: MIN_SUPPORT_NODES });
            }
        }
        Ok(())
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new("source-h");
        h.f64(self.t_horizon).f64(self.s_inner).u64(self.terms.len() as u64);
        if let Some(t) = self.terms.first() {
            t.bump.describe(&mut h);
        }
        h.u64(self.psi.nrows() as u64).f64s(self.psi.as_slice());
        h.finish()
    }
}

/// Default spatial sequence: restricted eigenfunctions orthonormalized in
/// `L²(V)` by modified Gram-Schmidt, dropping numerically dependent ones.
pub fn default_psi(patch: &Patch) -> DMatrix<f64> {
    let b = patch.basis();
    let w = patch.weights();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for k in 0..b.ncols() {
        if cols.len() == patch.len() {
            break;
        }
        let mut v = b.column(k).into_owned();
        let orig = patch.norm(&v);
        for _ in 0..2 {
            for c in &cols {
                let proj = c.component_mul(w).dot(&v);
                v -= c * proj;
            }
        }
        let nrm = patch.norm(&v);
        if orig > 0.0 && nrm > 1e-8 * orig {
            cols.push(v / nrm);
        }
    }
    DMatrix::from_columns(&cols)
}

/// `d_k(t) = h_k(t + S) / ∫ h_k`.
#[derive(Debug, Clone)]
pub struct MollifierDk {
    pub term: HTerm,
    norm: f64,
}

pub fn build_mollifier(src: &SourceH, k: usize) -> Result<MollifierDk> {
    let term = src.term(k)?.clone();
    let norm = term.integral();
    Ok(MollifierDk { term, norm })
}

impl TimeProfile for MollifierDk {
    fn derivative(&self, t: f64, order: usize) -> f64 {
        self.term.derivative(t + self.term.s_inner, order) / self.norm
    }

    fn max_order(&self) -> usize {
        self.term.max_order()
    }

    fn support(&self) -> (f64, f64) {
        let (lo, hi) = self.term.support();
        (lo - self.term.s_inner, hi - self.term.s_inner)
    }

    fn describe(&self, h: &mut ContentHasher) {
        h.str("mollifier");
        self.term.describe(h);
    }
}

/// `b_m(t) = (1/m) Σ_j a(j/m) d_k(t - j/m)`.
#[derive(Debug, Clone)]
pub struct RiemannSum {
    pub a: ProfileRef,
    pub d: MollifierDk,
    pub m: usize,
}

pub fn build_riemann_sum(a: ProfileRef, d: &MollifierDk, m: usize) -> Result<RiemannSum> {
    if m == 0 {
        return Err(invalid("Riemann sum needs m ≥ 1"));
    }
    let (d_lo, _) = d.support();
    let (a_lo, _) = a.support();
    if a_lo + d_lo < 0.0 {
        return Err(Error::Support(format!(
            "shifted supports reach t = {} < 0; need 2^(k-1) ≥ S/δ with δ = {a_lo}",
            a_lo + d_lo
        )));
    }
    Ok(RiemannSum { a, d: d.clone(), m })
}

impl TimeProfile for RiemannSum {
    fn derivative(&self, t: f64, order: usize) -> f64 {
        let m = self.m as f64;
        let (d_lo, d_hi) = self.d.support();
        let (a_lo, a_hi) = self.a.support();
        // d(t - j/m) ≠ 0 needs j/m ∈ (t - d_hi, t - d_lo).
        let lo = (m * (t - d_hi).max(a_lo)).ceil() as i64;
        let hi = (m * (t - d_lo).min(a_hi)).floor() as i64;
        let mut acc = 0.0;
        for j in lo..=hi {
            let tj = j as f64 / m;
            acc += self.a.value(tj) * self.d.derivative(t - tj, order);
        }
        acc / m
    }

    fn max_order(&self) -> usize {
        self.d.max_order()
    }

    fn support(&self) -> (f64, f64) {
        let (d_lo, d_hi) = self.d.support();
        let (a_lo, a_hi) = self.a.support();
        (a_lo + d_lo, a_hi + d_hi)
    }

    fn describe(&self, h: &mut ContentHasher) {
        h.str("riemann-sum").u64(self.m as u64);
        self.a.describe(h);
        self.d.describe(h);
    }
}
