//! Closed model surfaces with exactly known Laplace-Beltrami spectra.
//!
//! Two models are provided: the flat torus `[0, L1) × [0, L2)` with real
//! trigonometric eigenfunctions, and the round sphere with real spherical
//! harmonics. Each carries a quadrature grid on which the retained
//! eigenfunctions are discretely orthonormal (trapezoidal rule on a
//! cell-centred torus grid, Gauss-Legendre × uniform longitude on the sphere).

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::provenance::ContentHasher;
use crate::quadrature::gauss_legendre;

/// Largest lattice frequency generated for the torus.
const TORUS_WINDOW: i64 = 64;
/// Largest spherical-harmonic degree generated.
const SPHERE_WINDOW: usize = 60;

/// Geometry and truncation of a model manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ManifoldSpec {
    /// Flat torus with periods `l1`, `l2`. `grid` is the number of
    /// cell-centred samples per direction; chosen automatically when absent.
    FlatTorus2d {
        l1: f64,
        l2: f64,
        n_modes: usize,
        #[serde(default)]
        grid: Option<[usize; 2]>,
    },
    /// Round sphere of the given radius. `grid` is `[n_theta, n_phi]`.
    Sphere2d {
        radius: f64,
        n_modes: usize,
        #[serde(default)]
        grid: Option<[usize; 2]>,
    },
}

impl ManifoldSpec {
    pub fn torus(l1: f64, l2: f64, n_modes: usize) -> Self {
        Self::FlatTorus2d { l1, l2, n_modes, grid: None }
    }

    pub fn sphere(radius: f64, n_modes: usize) -> Self {
        Self::Sphere2d { radius, n_modes, grid: None }
    }

    pub fn with_grid(mut self, g: [usize; 2]) -> Self {
        match &mut self {
            Self::FlatTorus2d { grid, .. } | Self::Sphere2d { grid, .. } => *grid = Some(g),
        }
        self
    }

    pub fn n_modes(&self) -> usize {
        match self {
            Self::FlatTorus2d { n_modes, .. } | Self::Sphere2d { n_modes, .. } => *n_modes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Trig {
    Cos,
    Sin,
}

/// Which closed-form eigenfunction a mode is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ModeLabel {
    Torus { m: i64, n: i64, tx: Trig, ty: Trig },
    Sphere { l: usize, m: usize, t: Trig },
}

/// A model manifold truncated to `n_modes` eigenpairs.
#[derive(Debug, Clone)]
pub struct SpectralManifold {
    spec: ManifoldSpec,
    eigenvalues: Vec<f64>,
    labels: Vec<ModeLabel>,
    points: Vec<[f64; 2]>,
    weights: DVector<f64>,
    samples: DMatrix<f64>,
}

/// Builds a model manifold with its quadrature grid and sampled eigenfunctions.
pub fn build_manifold(spec: &ManifoldSpec) -> Result<SpectralManifold> {
    if spec.n_modes() == 0 {
        return Err(invalid("n_modes must be at least 1"));
    }
    match *spec {
        ManifoldSpec::FlatTorus2d { l1, l2, n_modes, grid } => build_torus(spec, l1, l2, n_modes, grid),
        ManifoldSpec::Sphere2d { radius, n_modes, grid } => build_sphere(spec, radius, n_modes, grid),
    }
}

fn build_torus(
    spec: &ManifoldSpec,
    l1: f64,
    l2: f64,
    n_modes: usize,
    grid: Option<[usize; 2]>,
) -> Result<SpectralManifold> {
    if !(l1 > 0.0 && l2 > 0.0) {
        return Err(invalid(format!("torus periods must be positive, got ({l1}, {l2})")));
    }
    let k1 = 2.0 * PI / l1;
    let k2 = 2.0 * PI / l2;
    let mut modes = Vec::new();
    for m in 0..=TORUS_WINDOW {
        for n in 0..=TORUS_WINDOW {
            let lam = (k1 * m as f64).powi(2) + (k2 * n as f64).powi(2);
            let txs: &[Trig] = if m == 0 { &[Trig::Cos] } else { &[Trig::Cos, Trig::Sin] };
            let tys: &[Trig] = if n == 0 { &[Trig::Cos] } else { &[Trig::Cos, Trig::Sin] };
            for &tx in txs {
                for &ty in tys {
                    modes.push((lam, ModeLabel::Torus { m, n, tx, ty }));
                }
            }
        }
    }
    // Anything beyond the window has eigenvalue at least this.
    let outside = (k1 * (TORUS_WINDOW + 1) as f64).powi(2).min((k2 * (TORUS_WINDOW + 1) as f64).powi(2));
    modes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let available = modes.iter().filter(|(lam, _)| *lam < outside).count();
    if n_modes > available {
        return Err(Error::LatticeWindow { requested: n_modes, available });
    }
    modes.truncate(n_modes);
    let (mut max1, mut max2) = (0i64, 0i64);
    for (_, l) in &modes {
        if let ModeLabel::Torus { m, n, .. } = l {
            max1 = max1.max(*m);
            max2 = max2.max(*n);
        }
    }
    let [n1, n2] = match grid {
        Some(g) => g,
        None => [auto_grid(max1), auto_grid(max2)],
    };
    if (n1 as i64) <= 2 * max1 || (n2 as i64) <= 2 * max2 {
        return Err(invalid(format!(
            "torus grid {n1}x{n2} cannot resolve frequencies ({max1}, {max2}); need more than twice the frequency"
        )));
    }
    let mut points = Vec::with_capacity(n1 * n2);
    for i in 0..n1 {
        for j in 0..n2 {
            points.push([(i as f64 + 0.5) * l1 / n1 as f64, (j as f64 + 0.5) * l2 / n2 as f64]);
        }
    }
    let w = l1 * l2 / (n1 * n2) as f64;
    let weights = DVector::from_element(points.len(), w);
    finish(spec.clone(), modes, points, weights)
}

fn auto_grid(max_freq: i64) -> usize {
    // Twice the Nyquist count keeps restricted eigenfunctions well separated
    // on small patches.
    let n = (4 * max_freq + 4).max(8) as usize;
    n.div_ceil(4) * 4
}

fn build_sphere(spec: &ManifoldSpec, radius: f64, n_modes: usize, grid: Option<[usize; 2]>) -> Result<SpectralManifold> {
    if !(radius > 0.0) {
        return Err(invalid(format!("sphere radius must be positive, got {radius}")));
    }
    let mut modes = Vec::new();
    'outer: for l in 0..=SPHERE_WINDOW {
        let lam = (l * (l + 1)) as f64 / (radius * radius);
        modes.push((lam, ModeLabel::Sphere { l, m: 0, t: Trig::Cos }));
        for m in 1..=l {
            modes.push((lam, ModeLabel::Sphere { l, m, t: Trig::Cos }));
            modes.push((lam, ModeLabel::Sphere { l, m, t: Trig::Sin }));
        }
        if modes.len() >= n_modes {
            break 'outer;
        }
    }
    if n_modes > modes.len() {
        return Err(Error::LatticeWindow { requested: n_modes, available: modes.len() });
    }
    modes.truncate(n_modes);
    let lmax = modes
        .iter()
        .map(|(_, l)| match l {
            ModeLabel::Sphere { l, .. } => *l,
            _ => 0,
        })
        .max()
        .unwrap_or(0);
    let [nt, np] = match grid {
        Some(g) => g,
        None => {
            let nt = (2 * lmax + 4).max(8);
            [nt, 2 * nt]
        }
    };
    if nt < lmax + 1 || np < 2 * lmax + 1 {
        return Err(invalid(format!(
            "sphere grid {nt}x{np} cannot resolve degree {lmax}; need n_theta > degree and n_phi > 2*degree"
        )));
    }
    let (x, wx) = gauss_legendre(nt);
    let dphi = 2.0 * PI / np as f64;
    let mut points = Vec::with_capacity(nt * np);
    let mut weights = Vec::with_capacity(nt * np);
    for (xi, wi) in x.iter().zip(&wx) {
        for j in 0..np {
            points.push([xi.acos(), (j as f64 + 0.5) * dphi]);
            weights.push(wi * dphi * radius * radius);
        }
    }
    finish(spec.clone(), modes, points, DVector::from_vec(weights))
}

fn finish(
    spec: ManifoldSpec,
    modes: Vec<(f64, ModeLabel)>,
    points: Vec<[f64; 2]>,
    weights: DVector<f64>,
) -> Result<SpectralManifold> {
    let (eigenvalues, labels): (Vec<f64>, Vec<ModeLabel>) = modes.into_iter().unzip();
    let mut m = SpectralManifold {
        spec,
        eigenvalues,
        labels,
        points,
        weights,
        samples: DMatrix::zeros(0, 0),
    };
    let samples = DMatrix::from_fn(m.points.len(), m.labels.len(), |i, k| m.eval_label(m.labels[k], m.points[i]));
    m.samples = samples;
    Ok(m)
}

impl SpectralManifold {
    pub fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    /// Eigenvalues in ascending order, repeated by multiplicity.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Grid points: `(x, y)` on the torus, `(θ, φ)` on the sphere.
    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Eigenfunctions sampled on the grid, one column per mode.
    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn volume(&self) -> f64 {
        match self.spec {
            ManifoldSpec::FlatTorus2d { l1, l2, .. } => l1 * l2,
            ManifoldSpec::Sphere2d { radius, .. } => 4.0 * PI * radius * radius,
        }
    }

    /// Evaluates mode `k` at an arbitrary point.
    pub fn eval_mode(&self, k: usize, p: [f64; 2]) -> f64 {
        self.eval_label(self.labels[k], p)
    }

    fn eval_label(&self, label: ModeLabel, p: [f64; 2]) -> f64 {
        match (label, &self.spec) {
            (ModeLabel::Torus { m, n, tx, ty }, ManifoldSpec::FlatTorus2d { l1, l2, .. }) => {
                trig_1d(m, tx, p[0], *l1) * trig_1d(n, ty, p[1], *l2)
            }
            (ModeLabel::Sphere { l, m, t }, ManifoldSpec::Sphere2d { radius, .. }) => {
                let plm = normalized_legendre(l, m, p[0].cos());
                let ang = match (m, t) {
                    (0, _) => 1.0,
                    (_, Trig::Cos) => 2f64.sqrt() * (m as f64 * p[1]).cos(),
                    (_, Trig::Sin) => 2f64.sqrt() * (m as f64 * p[1]).sin(),
                };
                plm * ang / radius
            }
            _ => unreachable!("mode label does not match manifold kind"),
        }
    }

    /// Discrete `L²(M)` Gram matrix of the sampled eigenfunctions.
    pub fn gram(&self) -> DMatrix<f64> {
        let ws = DMatrix::from_fn(self.n_points(), self.n_modes(), |i, k| self.samples[(i, k)] * self.weights[i]);
        self.samples.transpose() * ws
    }

    /// `⟨f, φ_k⟩_{L²(M)}` for every retained mode.
    pub fn coefficients(&self, f: &DVector<f64>) -> DVector<f64> {
        self.samples.tr_mul(&f.component_mul(&self.weights))
    }

    /// Synthesis `Σ_k c_k φ_k` on the grid.
    pub fn synthesize(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.samples * c
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new("fracdiff/manifold/v1");
        match &self.spec {
            ManifoldSpec::FlatTorus2d { l1, l2, .. } => h.str("flat-torus-2d").f64(*l1).f64(*l2),
            ManifoldSpec::Sphere2d { radius, .. } => h.str("sphere-2d").f64(*radius),
        };
        h.u64(self.n_modes() as u64).u64(self.n_points() as u64);
        h.f64s(&self.eigenvalues);
        for p in &self.points {
            h.f64(p[0]).f64(p[1]);
        }
        h.f64s(self.weights.as_slice());
        h.finish()
    }
}

fn trig_1d(freq: i64, t: Trig, x: f64, period: f64) -> f64 {
    if freq == 0 {
        return period.sqrt().recip();
    }
    let arg = 2.0 * PI * freq as f64 * x / period;
    let amp = (2.0 / period).sqrt();
    match t {
        Trig::Cos => amp * arg.cos(),
        Trig::Sin => amp * arg.sin(),
    }
}

/// Associated Legendre function normalized so that `P̄_l^m(cos θ)` times
/// `1` (m = 0) or `√2 cos/sin(mφ)` is orthonormal on the unit sphere.
fn normalized_legendre(l: usize, m: usize, x: f64) -> f64 {
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for i in 1..=m {
        pmm *= ((2 * i + 1) as f64 / (2 * i) as f64).sqrt() * s;
    }
    if l == m {
        return pmm;
    }
    let mut p_prev = pmm;
    let mut p = ((2 * m + 3) as f64).sqrt() * x * pmm;
    for ll in (m + 2)..=l {
        let lf = ll as f64;
        let mf = m as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
        let next = a * (x * p - b * p_prev);
        p_prev = p;
        p = next;
    }
    p
}

/// Distinct eigenvalues and the index ranges of their eigenspaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumGroups {
    pub values: Vec<f64>,
    pub ranges: Vec<Range<usize>>,
}

impl SpectrumGroups {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the first mode of group `k`.
    pub fn representative(&self, k: usize) -> usize {
        self.ranges[k].start
    }

    pub fn multiplicities(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }

    /// Group containing mode `j`.
    pub fn group_of(&self, j: usize) -> Option<usize> {
        self.ranges.iter().position(|r| r.contains(&j))
    }
}

/// Default relative grouping tolerance: two eigenvalues share a group when
/// they differ by at most `1e-9 (1 + λ)`.
pub const DEFAULT_GROUP_TOL: f64 = 1e-9;

/// Groups ascending eigenvalues into distinct values.
///
/// Gaps at most `tol (1 + λ)` merge, gaps of at least `1e3 tol (1 + λ)`
/// split, anything in between is reported as ambiguous.
pub fn group_distinct(eigenvalues: &[f64], tol: f64) -> Result<SpectrumGroups> {
    if !(tol > 0.0) {
        return Err(invalid(format!("grouping tolerance must be positive, got {tol}")));
    }
    let mut values: Vec<f64> = Vec::new();
    let mut ranges: Vec<Range<usize>> = Vec::new();
    for (j, &lam) in eigenvalues.iter().enumerate() {
        if j > 0 && lam < eigenvalues[j - 1] {
            return Err(invalid("eigenvalues must be ascending"));
        }
        match values.last() {
            Some(&prev) => {
                let gap = lam - eigenvalues[j - 1];
                let scale = tol * (1.0 + prev.abs());
                if gap <= scale {
                    ranges.last_mut().expect("nonempty").end = j + 1;
                } else if gap >= 1e3 * scale {
                    values.push(lam);
                    ranges.push(j..j + 1);
                } else {
                    return Err(Error::AmbiguousGrouping { gap, tol: scale });
                }
            }
            None => {
                values.push(lam);
                ranges.push(0..1);
            }
        }
    }
    Ok(SpectrumGroups { values, ranges })
}

/// Observation region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RegionSpec {
    /// Coordinate rectangle `[x0, x1) × [y0, y1)` on the torus.
    Rectangle { x: [f64; 2], y: [f64; 2] },
    /// Geodesic cap on the sphere: centre `(θ, φ)` and opening angle.
    Cap { center: [f64; 2], angle: f64 },
    /// The whole manifold; meant for oracle tests.
    Full,
}

/// Observation patch `V` with its quadrature and restricted eigenfunctions.
#[derive(Debug, Clone)]
pub struct Patch {
    region: RegionSpec,
    indices: Vec<usize>,
    weights: DVector<f64>,
    basis: DMatrix<f64>,
    parent_points: usize,
    manifold_hash: String,
}

/// Selects the grid points of `m` inside `region`.
pub fn make_patch(m: &SpectralManifold, region: &RegionSpec) -> Result<Patch> {
    let inside: Box<dyn Fn([f64; 2]) -> bool> = match (region, m.spec()) {
        (RegionSpec::Full, _) => Box::new(|_| true),
        (RegionSpec::Rectangle { x, y }, ManifoldSpec::FlatTorus2d { .. }) => {
            let (x, y) = (*x, *y);
            if !(x[1] > x[0] && y[1] > y[0]) {
                return Err(invalid("rectangle bounds must be increasing"));
            }
            Box::new(move |p| p[0] >= x[0] && p[0] < x[1] && p[1] >= y[0] && p[1] < y[1])
        }
        (RegionSpec::Cap { center, angle }, ManifoldSpec::Sphere2d { .. }) => {
            let (c, a) = (*center, *angle);
            if !(a > 0.0) {
                return Err(invalid("cap angle must be positive"));
            }
            let cv = unit_vector(c);
            Box::new(move |p| {
                let v = unit_vector(p);
                let dot = (cv[0] * v[0] + cv[1] * v[1] + cv[2] * v[2]).clamp(-1.0, 1.0);
                dot.acos() < a
            })
        }
        _ => return Err(invalid("region kind does not match the manifold")),
    };
    let indices: Vec<usize> = (0..m.n_points()).filter(|&i| inside(m.points()[i])).collect();
    if indices.is_empty() {
        return Err(Error::EmptyPatch);
    }
    if indices.len() == m.n_points() && *region != RegionSpec::Full {
        return Err(Error::FullPatch);
    }
    let weights = DVector::from_iterator(indices.len(), indices.iter().map(|&i| m.weights()[i]));
    let basis = m.samples().select_rows(&indices);
    Ok(Patch {
        region: region.clone(),
        indices,
        weights,
        basis,
        parent_points: m.n_points(),
        manifold_hash: m.content_hash(),
    })
}

fn unit_vector(p: [f64; 2]) -> [f64; 3] {
    let (th, ph) = (p[0], p[1]);
    [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]
}

impl Patch {
    pub fn region(&self) -> &RegionSpec {
        &self.region
    }

    /// Number of grid points in `V`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Indices of the `V` points in the parent grid.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Restricted eigenfunctions `φ_k|_V`, one column per mode.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn manifold_hash(&self) -> &str {
        &self.manifold_hash
    }

    pub fn restrict(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.indices.iter().map(|&i| u[i]))
    }

    /// Zero extension to the whole grid.
    pub fn extend(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.parent_points);
        for (k, &i) in self.indices.iter().enumerate() {
            out[i] = u[k];
        }
        out
    }

    /// `⟨u, v⟩_{L²(V)}`.
    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.iter().zip(v.iter()).zip(self.weights.iter()).map(|((a, b), w)| a * b * w).sum()
    }

    pub fn norm(&self, u: &DVector<f64>) -> f64 {
        self.inner(u, u).sqrt()
    }

    /// `⟨Zu, φ_k⟩_{L²(M)}` for all modes, for `u` given on `V`.
    pub fn coefficients(&self, u: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(&u.component_mul(&self.weights))
    }

    /// Restricted projection onto eigenspace `k` of `groups`.
    pub fn projection(&self, groups: &SpectrumGroups, k: usize) -> Result<RestrictedProjection> {
        let range = groups
            .ranges
            .get(k)
            .ok_or(Error::IndexOutOfRange { index: k, len: groups.len() })?
            .clone();
        if range.end > self.basis.ncols() {
            return Err(Error::Mismatch("grouping refers to modes beyond the patch basis".into()));
        }
        Ok(RestrictedProjection {
            group: k,
            factor: self.basis.columns(range.start, range.len()).into_owned(),
            weights: self.weights.clone(),
        })
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new("fracdiff/patch/v1");
        h.str(&self.manifold_hash);
        h.u64(self.indices.len() as u64);
        for &i in &self.indices {
            h.u64(i as u64);
        }
        h.finish()
    }
}

/// `P_{V,k} u = (P_k Z u)|_V = B_k B_kᵀ W u`, with `B_k` the restricted
/// eigenfunctions of group `k` and `W` the `V` quadrature weights.
#[derive(Debug, Clone)]
pub struct RestrictedProjection {
    pub group: usize,
    pub factor: DMatrix<f64>,
    weights: DVector<f64>,
}

impl RestrictedProjection {
    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.factor * self.factor.tr_mul(&u.component_mul(&self.weights))
    }

    /// Dense `V × V` matrix of the projection.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut bw = self.factor.clone();
        for (i, mut row) in bw.row_iter_mut().enumerate() {
            row *= self.weights[i];
        }
        &self.factor * bw.transpose()
    }

    /// Smallest singular value of `W^{1/2} B_k`; positive means the
    /// restricted eigenfunctions of the group stay linearly independent.
    pub fn smallest_singular_value(&self) -> f64 {
        let mut scaled = self.factor.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= self.weights[i].sqrt();
        }
        scaled.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `P_{V,k} u` for group `k`.
pub fn apply_projection(p: &Patch, groups: &SpectrumGroups, k: usize, u: &DVector<f64>) -> Result<DVector<f64>> {
    if u.len() != p.len() {
        return Err(Error::Mismatch(format!("V-grid function has {} values, patch has {}", u.len(), p.len())));
    }
    Ok(p.projection(groups, k)?.apply(u))
}
