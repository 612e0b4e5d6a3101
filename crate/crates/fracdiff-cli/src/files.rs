//! On-disk artifacts. Every JSON file carries `schema_version`, `kind`,
//! `config_hash` and a `units` table; nothing time-dependent is written, so
//! reruns are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fracdiff::forward::{MeasurementRecord, RecordMeta};
use fracdiff::fractional::TimeGrid;
use fracdiff::provenance::sha256_hex;
use fracdiff::recovery::{ResidueDiagnostics, SpectralData};
use fracdiff::wave::{SpectralPairs, WaveKernelSet};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub const RECORD_FILE: &str = "record.json";
pub const SPECTRAL_FILE: &str = "spectral.json";
pub const WAVECHECK_FILE: &str = "wavecheck.json";

fn units(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridHeader {
    pub t_max: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordFile {
    pub schema_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub units: BTreeMap<String, String>,
    pub grid: GridHeader,
    pub n_points: usize,
    pub meta: RecordMeta,
    /// Hash over grid, metadata and payload; checked on load.
    pub content_hash: String,
    /// Row-major `time × V` samples.
    pub values: Vec<f64>,
}

impl RecordFile {
    pub fn new(rec: &MeasurementRecord, config_hash: &str) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: "measurement-record".into(),
            config_hash: config_hash.into(),
            units: units(&[("time", "model time"), ("values", "solution amplitude at V-grid points")]),
            grid: GridHeader { t_max: rec.grid.t_max(), n_steps: rec.grid.n_steps() },
            n_points: rec.n_points(),
            meta: rec.meta.clone(),
            content_hash: rec.content_hash(),
            values: rec.row_major(),
        }
    }

    /// Rebuilds the record and refuses it if the payload hash disagrees.
    pub fn record(&self) -> Result<MeasurementRecord, CliError> {
        let grid = TimeGrid::new(self.grid.t_max, self.grid.n_steps).map_err(|e| CliError::Provenance(format!("record grid: {e}")))?;
        let rec = MeasurementRecord::from_row_major(grid, self.n_points, &self.values, self.meta.clone())
            .map_err(|e| CliError::Provenance(format!("record payload: {e}")))?;
        let got = rec.content_hash();
        if got != self.content_hash {
            return Err(CliError::Provenance(format!("record content hash {got} does not match header {}", self.content_hash)));
        }
        Ok(rec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixView {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub values: Vec<f64>,
}

impl MatrixView {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let mut values = Vec::with_capacity(m.len());
        for r in m.row_iter() {
            values.extend(r.iter());
        }
        Self { rows: m.nrows(), cols: m.ncols(), values }
    }

    pub fn matrix(&self) -> Result<DMatrix<f64>, CliError> {
        if self.values.len() != self.rows * self.cols {
            return Err(CliError::Validation(format!("matrix holds {} values for {} × {}", self.values.len(), self.rows, self.cols)));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.values))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntryView {
    pub pole: f64,
    pub lambda: f64,
    pub rank: usize,
    pub diagnostics: ResidueDiagnostics,
    pub residue: MatrixView,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryStatus {
    Ok,
    /// Every input record was identically zero.
    Empty,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralFile {
    pub schema_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub units: BTreeMap<String, String>,
    pub status: RecoveryStatus,
    pub record_hashes: Vec<String>,
    pub beta_declared: f64,
    pub misfit: f64,
    pub model_poles: Vec<f64>,
    pub entries: Vec<EntryView>,
    pub checks: Vec<Check>,
}

impl SpectralFile {
    pub fn new(config_hash: &str, status: RecoveryStatus, record_hashes: Vec<String>, data: Option<&SpectralData>, beta: f64) -> Self {
        let (entries, misfit, model_poles) = match data {
            Some(d) => (
                d.entries
                    .iter()
                    .map(|e| EntryView {
                        pole: e.pole,
                        lambda: e.lambda,
                        rank: e.rank,
                        diagnostics: e.diagnostics,
                        residue: MatrixView::new(&e.residue),
                    })
                    .collect(),
                d.misfit,
                d.model_poles.clone(),
            ),
            None => (Vec::new(), 0.0, Vec::new()),
        };
        Self {
            schema_version: SCHEMA_VERSION,
            kind: "spectral-data".into(),
            config_hash: config_hash.into(),
            units: units(&[
                ("lambda", "Laplace-Beltrami eigenvalue, 1/length^2"),
                ("pole", "lambda^beta"),
                ("residue", "operator on V-grid values"),
            ]),
            status,
            record_hashes,
            beta_declared: beta,
            misfit,
            model_poles,
            entries,
            checks: Vec::new(),
        }
    }

    pub fn pairs(&self) -> Result<SpectralPairs, CliError> {
        if self.entries.is_empty() {
            return Err(CliError::Validation("spectral data holds no entries".into()));
        }
        let kernels = WaveKernelSet::new(self.entries.iter().map(|e| e.lambda).collect())
            .map_err(|e| CliError::Validation(format!("spectral data: {e}")))?;
        let projections = self.entries.iter().map(|e| e.residue.matrix()).collect::<Result<_, _>>()?;
        Ok(SpectralPairs { kernels, projections })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowRow {
    pub t_start: f64,
    pub t_end: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WavecheckFile {
    pub schema_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub units: BTreeMap<String, String>,
    /// `exact` or the spectral data file's content hash.
    pub spectrum: String,
    pub groups_used: usize,
    pub reference_groups: usize,
    pub relative_l2: f64,
    pub gate: f64,
    pub pass: bool,
    pub windows: Vec<WindowRow>,
}

impl WavecheckFile {
    pub fn units() -> BTreeMap<String, String> {
        units(&[("time", "model time"), ("relative_l2", "dimensionless, L2(V x [0,T])")])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

/// Inputs and outputs of one command with their content hashes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<ManifestEntry>,
    pub outputs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(command: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: "manifest".into(),
            command: command.into(),
            config_hash: config_hash.into(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        self.inputs.push(ManifestEntry { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(())
    }

    /// Records `bytes` written under `name` in the output directory.
    pub fn output(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.push(ManifestEntry { path: name.into(), sha256: sha256_hex(bytes) });
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf, CliError> {
        write_json(out, &format!("{}.manifest.json", self.command), self).map(|(p, _)| p)
    }
}

pub fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes pretty JSON and returns the path and the bytes written.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(PathBuf, Vec<u8>), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    let path = dir.join(name);
    fs::write(&path, &bytes).map_err(|e| io_err(&path, e))?;
    Ok((path, bytes))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let header: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let found = header.get("kind").and_then(|k| k.as_str()).unwrap_or("");
    if found != kind {
        return Err(CliError::Validation(format!("{}: expected a {kind} file, found {found:?}", path.display())));
    }
    let version = header.get("schema_version").and_then(|v| v.as_u64());
    if version != Some(SCHEMA_VERSION as u64) {
        return Err(CliError::Validation(format!("{}: unsupported schema version {version:?}", path.display())));
    }
    serde_json::from_value(header).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}
