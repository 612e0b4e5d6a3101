use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("gamma overflows at x = {0}")]
    GammaOverflow(f64),
    #[error("argument {0} outside the supported evaluation range")]
    OutOfRange(f64),
    #[error("Mittag-Leffler E_{{{a},{b}}}({z}) could not be evaluated to working accuracy")]
    Precision { a: f64, b: f64, z: f64 },
    #[error("kernel evaluated at t = {0}, expected t > 0")]
    Domain(f64),
    #[error("time grid needs at least {needed} steps, got {got}")]
    DegenerateGrid { needed: usize, got: usize },
    #[error("grid or shape mismatch: {0}")]
    Mismatch(String),
    #[error("unsupported manifold: {0}")]
    UnsupportedManifold(String),
    #[error("requested {requested} modes but the lattice window only holds {available}")]
    LatticeWindow { requested: usize, available: usize },
    #[error("eigenvalue gap {gap} is too close to the grouping tolerance {tol}")]
    AmbiguousGrouping { gap: f64, tol: f64 },
    #[error("patch contains no grid points")]
    EmptyPatch,
    #[error("patch covers the whole manifold; pass the full-manifold flag explicitly")]
    FullPatch,
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("source support violation: {0}")]
    Support(String),
    #[error("time profile under-resolved: term {term} spans {nodes} grid nodes, need {needed}")]
    UnderResolved { term: usize, nodes: usize, needed: usize },
    #[error("Laplace tail bound {bound:e} exceeds {allowed:e} of the transform norm")]
    TailBound { bound: f64, allowed: f64 },
    #[error("probe profile transform {value:e} below floor {floor:e} at s = {s}")]
    ProbeDegenerate { s: f64, value: f64, floor: f64 },
    #[error("ill-conditioned fit (condition estimate {0:e}); widen the abscissa spread or reduce k_max")]
    IllConditioned(f64),
    #[error("probe set spans rank {rank}, need {needed}")]
    RankDeficient { rank: usize, needed: usize },
    #[error("stepper unstable: dt*sqrt(lambda_max) = {0} > 2")]
    Unstable(f64),
    #[error("empty spectral data")]
    EmptySpectralData,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
