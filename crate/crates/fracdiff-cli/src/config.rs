//! Experiment configuration (TOML) and its validation.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use fracdiff::forward::{ModelOrders, SpaceTimeSource};
use fracdiff::fractional::TimeGrid;
use fracdiff::manifold::{build_manifold, make_patch, ManifoldSpec, Patch, RegionSpec, SpectralManifold};
use fracdiff::provenance::sha256_hex;
use fracdiff::recovery::{AbscissaPolicy, RecoverySettings};
use fracdiff::sources::{build_bump, build_h, default_psi, Affine, BumpKind, SourceH, TimeProfile, DEFAULT_K_TERMS};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` wins. Not part of the config hash.
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
    pub manifold: ManifoldSpec,
    pub patch: RegionSpec,
    pub model: ModelSection,
    pub time: TimeSection,
    pub source: SourceSpec,
    #[serde(default)]
    pub recovery: RecoverySection,
    #[serde(default)]
    pub wavecheck: WaveSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_max: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceSpec {
    /// The engineered source `Σ_k h_k ψ_{r(k)}` with the default spatial sequence.
    H {
        t_horizon: f64,
        s_inner: f64,
        #[serde(default = "default_k_terms")]
        k_terms: usize,
        #[serde(default)]
        bump: BumpKind,
    },
    /// A sum of bump windows times spatial factors.
    Probes { terms: Vec<ProbeTerm> },
}

fn default_k_terms() -> usize {
    DEFAULT_K_TERMS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeTerm {
    pub window: [f64; 2],
    #[serde(default = "one")]
    pub amplitude: f64,
    pub spatial: SpatialSpec,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpatialSpec {
    Constant { value: f64 },
    /// Restriction of eigenfunction `index` (0-based) to the patch.
    Mode { index: usize },
    /// Uniform on `[-1, 1]` per grid point, seeded from the config seed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverySection {
    pub groups: usize,
    pub abscissae: AbscissaPolicy,
    pub count: usize,
    pub probes: usize,
    /// Defaults to the model's `beta`.
    pub beta_declared: Option<f64>,
    pub expect: Option<Expectations>,
    /// Diagnostic ceilings; exceeding one is a warning, or a failure with `--strict`.
    pub max_misfit: f64,
    pub max_asymmetry: f64,
}

impl Default for RecoverySection {
    fn default() -> Self {
        Self {
            groups: 4,
            abscissae: AbscissaPolicy::Pilot,
            count: 48,
            probes: fracdiff::recovery::DEFAULT_PROBES,
            beta_declared: None,
            expect: None,
            max_misfit: 1e-6,
            max_asymmetry: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    pub values: Vec<f64>,
    #[serde(default)]
    pub ranks: Option<Vec<usize>>,
    #[serde(default = "default_value_tol")]
    pub value_tol: f64,
}

fn default_value_tol() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveSection {
    pub t_max: f64,
    pub n_steps: usize,
    pub window: [f64; 2],
    /// Groups kept by the reference solution; all when absent.
    pub reference_groups: Option<usize>,
    pub gate: f64,
}

impl Default for WaveSection {
    fn default() -> Self {
        Self { t_max: 6.0, n_steps: 4096, window: [0.5, 3.0], reference_groups: None, gate: 1e-4 }
    }
}

/// Everything a command needs, built from a validated config.
pub struct Setup {
    pub config: ExperimentConfig,
    pub hash: String,
    pub manifold: SpectralManifold,
    pub patch: Patch,
    pub orders: ModelOrders,
    pub grid: TimeGrid,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// SHA-256 of the canonical JSON form, without the output directory.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn setup(self) -> Result<Setup, CliError> {
        let invalid = |what: &str, e: fracdiff::Error| CliError::Validation(format!("{what}: {e}"));
        let orders = ModelOrders::new(self.model.alpha, self.model.beta).map_err(|e| invalid("model", e))?;
        let grid = TimeGrid::new(self.time.t_max, self.time.n_steps).map_err(|e| invalid("time", e))?;
        let manifold = build_manifold(&self.manifold).map_err(|e| invalid("manifold", e))?;
        let patch = make_patch(&manifold, &self.patch).map_err(|e| invalid("patch", e))?;
        self.validate_source(&patch, &grid)?;
        self.validate_recovery()?;
        self.validate_wave()?;
        let hash = self.hash();
        Ok(Setup { config: self, hash, manifold, patch, orders, grid })
    }

    fn validate_source(&self, patch: &Patch, grid: &TimeGrid) -> Result<(), CliError> {
        match &self.source {
            SourceSpec::H { t_horizon, s_inner, .. } => {
                if !(*s_inner > 0.0 && s_inner < t_horizon && *t_horizon <= grid.t_max()) {
                    return Err(CliError::Validation(format!(
                        "source: need 0 < s_inner < t_horizon <= time.t_max, got s_inner = {s_inner}, t_horizon = {t_horizon}, t_max = {}",
                        grid.t_max()
                    )));
                }
                let h = self.source_h(patch)?;
                h.check_resolution(grid).map_err(|e| {
                    CliError::Validation(format!("source: {e}; raise time.n_steps or lower k_terms"))
                })
            }
            SourceSpec::Probes { terms } => {
                if terms.is_empty() {
                    return Err(CliError::Validation("source: probe list is empty".into()));
                }
                for (i, t) in terms.iter().enumerate() {
                    let [lo, hi] = t.window;
                    if !(lo > 0.0 && lo < hi && hi <= grid.t_max()) {
                        return Err(CliError::Validation(format!(
                            "source.terms[{i}]: window must satisfy 0 < lo < hi <= time.t_max, got [{lo}, {hi}]"
                        )));
                    }
                    if !t.amplitude.is_finite() {
                        return Err(CliError::Validation(format!("source.terms[{i}]: amplitude must be finite")));
                    }
                    if let SpatialSpec::Mode { index } = t.spatial {
                        if index >= patch.basis().ncols() {
                            return Err(CliError::Validation(format!(
                                "source.terms[{i}]: mode {index} out of range, manifold has {} modes",
                                patch.basis().ncols()
                            )));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    fn validate_recovery(&self) -> Result<(), CliError> {
        let r = &self.recovery;
        if r.groups == 0 || r.count < 2 || r.probes == 0 {
            return Err(CliError::Validation("recovery: groups, probes must be >= 1 and count >= 2".into()));
        }
        if let Some(b) = r.beta_declared {
            if !(b > 0.0 && b <= 1.0) {
                return Err(CliError::Validation(format!("recovery.beta_declared must lie in (0, 1], got {b}")));
            }
        }
        if let AbscissaPolicy::Explicit { z_min, z_max } = r.abscissae {
            if !(z_min > 0.0 && z_min < z_max) {
                return Err(CliError::Validation(format!("recovery.abscissae: need 0 < z_min < z_max, got [{z_min}, {z_max}]")));
            }
        }
        Ok(())
    }

    fn validate_wave(&self) -> Result<(), CliError> {
        let w = &self.wavecheck;
        let [lo, hi] = w.window;
        if !(lo > 0.0 && lo < hi && hi <= w.t_max && w.n_steps > 0 && w.gate > 0.0) {
            return Err(CliError::Validation(format!(
                "wavecheck: need 0 < lo < hi <= t_max, n_steps > 0 and gate > 0, got window [{lo}, {hi}], t_max {}",
                w.t_max
            )));
        }
        if w.reference_groups == Some(0) {
            return Err(CliError::Validation("wavecheck.reference_groups must be at least 1".into()));
        }
        Ok(())
    }

    pub fn source_h(&self, patch: &Patch) -> Result<SourceH, CliError> {
        let SourceSpec::H { t_horizon, s_inner, k_terms, bump } = &self.source else {
            return Err(CliError::Validation("source is not of kind \"h\"".into()));
        };
        build_h(Arc::new(build_bump(*bump)), *t_horizon, *s_inner, default_psi(patch), *k_terms)
            .map_err(|e| CliError::Validation(format!("source: {e}")))
    }

    pub fn recovery_settings(&self) -> RecoverySettings {
        let r = &self.recovery;
        let mut s = RecoverySettings::new(r.groups, r.beta_declared.unwrap_or(self.model.beta));
        s.abscissae = r.abscissae;
        s.count = r.count;
        s.probes = r.probes;
        s.seed = self.seed;
        s
    }
}

impl Setup {
    pub fn source(&self) -> Result<SpaceTimeSource, CliError> {
        let lib = |e: fracdiff::Error| CliError::Library(e.to_string());
        match &self.config.source {
            SourceSpec::H { k_terms, .. } => {
                let h = self.config.source_h(&self.patch)?;
                SpaceTimeSource::from_h_terms(self.grid, &h, 1..=*k_terms).map_err(lib)
            }
            SourceSpec::Probes { terms } => {
                let bump = Arc::new(build_bump(BumpKind::ExpBump));
                let mut profiles = Vec::new();
                for t in terms {
                    profiles.push(Affine::window(bump.clone(), t.window[0], t.window[1], t.amplitude).map_err(lib)?);
                }
                let parts: Vec<(&dyn TimeProfile, DVector<f64>)> = profiles
                    .iter()
                    .zip(terms)
                    .enumerate()
                    .map(|(i, (a, t))| (a as &dyn TimeProfile, self.spatial(&t.spatial, i as u64)))
                    .collect();
                SpaceTimeSource::superpose(self.grid, &parts).map_err(lib)
            }
        }
    }

    pub fn spatial(&self, spec: &SpatialSpec, stream: u64) -> DVector<f64> {
        let n = self.patch.len();
        match spec {
            SpatialSpec::Constant { value } => DVector::from_element(n, *value),
            SpatialSpec::Mode { index } => self.patch.basis().column(*index).into_owned(),
            SpatialSpec::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
                rng.set_stream(stream);
                DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
            }
        }
    }
}
