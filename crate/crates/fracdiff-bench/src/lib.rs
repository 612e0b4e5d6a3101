//! Fixtures shared by the benchmarks.

use std::f64::consts::PI;
use std::sync::Arc;

use fracdiff::forward::SpaceTimeSource;
use fracdiff::fractional::TimeGrid;
use fracdiff::manifold::{build_manifold, make_patch, ManifoldSpec, Patch, RegionSpec, SpectralManifold};
use fracdiff::sources::{build_bump, Affine, BumpKind};
use nalgebra::DVector;

/// `2π × 2π` torus with its quarter patch.
pub fn torus_quarter(n_modes: usize) -> (SpectralManifold, Patch) {
    let m = build_manifold(&ManifoldSpec::torus(2.0 * PI, 2.0 * PI, n_modes)).expect("valid torus");
    let p = make_patch(&m, &RegionSpec::Rectangle { x: [0.0, PI], y: [0.0, PI] }).expect("valid patch");
    (m, p)
}

/// Bump window on `[0.5, 2.5]` times a fixed oscillating spatial factor.
pub fn bump_source(p: &Patch, t_max: f64, n_steps: usize) -> SpaceTimeSource {
    let grid = TimeGrid::new(t_max, n_steps).expect("valid grid");
    let a = Affine::window(Arc::new(build_bump(BumpKind::ExpBump)), 0.5, 2.5, 1.0).expect("valid window");
    let xi = DVector::from_fn(p.len(), |i, _| (0.37 * i as f64).sin() + 0.3);
    SpaceTimeSource::separable(grid, &a, xi).expect("admissible source")
}
