//! Time-fractional diffusion `∂_t^α u + (-Δ)^β u = f` on closed model
//! manifolds, observed on an open patch `V`.
//!
//! * [`special`]: Mittag-Leffler functions and the relaxation kernels built on them.
//! * [`manifold`]: spectral data of flat tori and round spheres, observation patches.
//! * [`fractional`]: scalar fractional ODE solver and the L1 Caputo scheme.
//! * [`forward`]: modal forward solver and the measurement map `f ↦ u|_V`.
//! * [`sources`]: bump profiles, the engineered source `h`, mollifiers.
//! * [`recovery`]: eigenvalues and restricted spectral projections from measurements.
//! * [`wave`]: the wave-equation measurement map assembled from spectral data.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod forward;
pub mod fractional;
pub mod manifold;
pub mod provenance;
pub mod quadrature;
pub mod recovery;
pub mod sources;
pub mod special;
pub mod wave;

pub use error::{Error, Result};
pub use forward::{ForwardAccess, MeasurementRecord, ModelOrders, SpaceTimeSource, SpectralForward};
pub use fractional::{ScalarSignal, TimeGrid};
pub use manifold::{ManifoldSpec, Patch, RegionSpec, SpectralManifold, SpectrumGroups};
pub use recovery::{RecoverySettings, SpectralData};
pub use wave::SpectralPairs;
