//! Experiment harness behind the `fracdiff` binary: simulate a record,
//! recover spectral data, check the wave operator built from it, and render
//! CSV tables.

pub mod config;
pub mod files;

use std::fs;
use std::path::{Path, PathBuf};

use fracdiff::forward::{ForwardAccess, SpaceTimeSource, SpectralForward};
use fracdiff::fractional::TimeGrid;
use fracdiff::manifold::{group_distinct, DEFAULT_GROUP_TOL};
use fracdiff::provenance::sha256_hex;
use fracdiff::recovery::recover_spectrum;
use fracdiff::sources::{build_bump, Affine, BumpKind};
use fracdiff::wave::{compare_hyp, hyp_apply, wave_oracle_modes, SpectralPairs};

use config::{Setup, SpatialSpec};
use files::*;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("tolerance check failed: {0}")]
    Tolerance(String),
    #[error("provenance check failed: {0}")]
    Provenance(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0}")]
    Library(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Tolerance(_) => 3,
            Self::Provenance(_) => 4,
            Self::Io(_) | Self::Library(_) => 1,
        }
    }
}

fn lib(e: fracdiff::Error) -> CliError {
    CliError::Library(e.to_string())
}

/// Writes the record of the configured source and a manifest.
pub fn run_simulate(setup: &Setup, config_path: &Path, out: &Path) -> Result<PathBuf, CliError> {
    let f = setup.source()?;
    let fwd = SpectralForward::new(&setup.manifold, &setup.patch, setup.orders).map_err(lib)?;
    let rec = fwd.apply(&f).map_err(lib)?;
    let (path, bytes) = write_json(out, RECORD_FILE, &RecordFile::new(&rec, &setup.hash))?;
    let mut manifest = Manifest::new("simulate", &setup.hash, setup.config.seed);
    manifest.input(config_path)?;
    manifest.output(RECORD_FILE, &bytes);
    manifest.write(out)?;
    Ok(path)
}

/// Summary of a recovery run; `warnings` are diagnostics above their ceilings.
pub struct RecoverOutcome {
    pub file: SpectralFile,
    pub warnings: Vec<String>,
}

/// Checks record provenance, recovers spectral data from operator probes and
/// writes `spectral.json`, `recover.txt` and a manifest.
pub fn run_recover(setup: &Setup, config_path: &Path, records: &[PathBuf], out: &Path, strict: bool) -> Result<RecoverOutcome, CliError> {
    let mut manifest = Manifest::new("recover", &setup.hash, setup.config.seed);
    manifest.input(config_path)?;
    let manifold_hash = setup.manifold.content_hash();
    let patch_hash = setup.patch.content_hash();
    let mut hashes = Vec::new();
    let mut all_zero = true;
    for path in records {
        let file: RecordFile = read_json(path, "measurement-record")?;
        if file.config_hash != setup.hash {
            return Err(CliError::Provenance(format!(
                "{} was produced by config {}, current config is {}",
                path.display(),
                file.config_hash,
                setup.hash
            )));
        }
        let rec = file.record()?;
        let m = &rec.meta;
        if m.manifold_hash != manifold_hash || m.patch_hash != patch_hash || m.alpha != setup.orders.alpha || m.beta != setup.orders.beta {
            return Err(CliError::Provenance(format!("{} does not match the configured manifold, patch or orders", path.display())));
        }
        all_zero &= rec.values.iter().all(|v| *v == 0.0);
        hashes.push(file.content_hash.clone());
        manifest.input(path)?;
    }
    let settings = setup.config.recovery_settings();
    let mut warnings = Vec::new();
    let mut file = if all_zero {
        SpectralFile::new(&setup.hash, RecoveryStatus::Empty, hashes, None, settings.beta_declared)
    } else {
        let fwd = SpectralForward::new(&setup.manifold, &setup.patch, setup.orders).map_err(lib)?;
        let rec = recover_spectrum(&fwd, &settings).map_err(lib)?;
        let r = &setup.config.recovery;
        if rec.data.misfit > r.max_misfit {
            warnings.push(format!("model misfit {:.3e} above {:.1e}", rec.data.misfit, r.max_misfit));
        }
        for (k, e) in rec.data.entries.iter().enumerate() {
            if e.diagnostics.asymmetry > r.max_asymmetry {
                warnings.push(format!("entry {k}: residue asymmetry {:.3e} above {:.1e}", e.diagnostics.asymmetry, r.max_asymmetry));
            }
        }
        SpectralFile::new(&setup.hash, RecoveryStatus::Ok, hashes, Some(&rec.data), settings.beta_declared)
    };
    if let (Some(expect), RecoveryStatus::Ok) = (&setup.config.recovery.expect, file.status) {
        for (k, want) in expect.values.iter().enumerate() {
            let got = file.entries.get(k).map_or(f64::NAN, |e| e.lambda);
            let err = (got - want).abs() / want.max(1.0);
            file.checks.push(Check { name: format!("lambda[{k}]"), value: err, limit: expect.value_tol, pass: err <= expect.value_tol });
        }
        if let Some(ranks) = &expect.ranks {
            for (k, want) in ranks.iter().enumerate() {
                let got = file.entries.get(k).map_or(0, |e| e.rank);
                file.checks.push(Check { name: format!("rank[{k}]"), value: got as f64, limit: *want as f64, pass: got == *want });
            }
        }
    }
    let (_, bytes) = write_json(out, SPECTRAL_FILE, &file)?;
    manifest.output(SPECTRAL_FILE, &bytes);
    let text = recover_report(&file, &warnings);
    let report_path = out.join("recover.txt");
    fs::write(&report_path, &text).map_err(|e| io_err(&report_path, e))?;
    manifest.output("recover.txt", text.as_bytes());
    manifest.write(out)?;

    let failed: Vec<&str> = file.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::Tolerance(format!("recovery expectations violated: {}", failed.join(", "))));
    }
    if strict && !warnings.is_empty() {
        return Err(CliError::Tolerance(warnings.join("; ")));
    }
    Ok(RecoverOutcome { file, warnings })
}

fn recover_report(file: &SpectralFile, warnings: &[String]) -> String {
    let mut s = String::new();
    s.push_str(&format!("config {}\n", file.config_hash));
    match file.status {
        RecoveryStatus::Empty => s.push_str("status: empty (records carry no signal, no poles reported)\n"),
        RecoveryStatus::Ok => {
            s.push_str(&format!("status: ok, declared beta {}, model misfit {:.3e}\n", file.beta_declared, file.misfit));
            s.push_str("  k        lambda          pole  rank   asymmetry  negativity  idempotence\n");
            for (k, e) in file.entries.iter().enumerate() {
                let d = e.diagnostics;
                s.push_str(&format!(
                    "{k:>3} {:>13.9} {:>13.9} {:>5} {:>11.2e} {:>11.2e} {:>12.2e}\n",
                    e.lambda, e.pole, e.rank, d.asymmetry, d.negativity, d.idempotence_defect
                ));
            }
        }
    }
    for c in &file.checks {
        s.push_str(&format!("check {}: {} ({:.3e} vs {:.3e})\n", c.name, if c.pass { "PASS" } else { "FAIL" }, c.value, c.limit));
    }
    for w in warnings {
        s.push_str(&format!("warning: {w}\n"));
    }
    s
}

/// Compares `hyp_apply` on the given spectral data, or the exact reference
/// groups, with the modal wave stepper truncated to the reference groups.
pub fn run_wavecheck(setup: &Setup, config_path: &Path, spectral: Option<&Path>, out: &Path) -> Result<WavecheckFile, CliError> {
    let mut manifest = Manifest::new("wavecheck", &setup.hash, setup.config.seed);
    manifest.input(config_path)?;
    let groups = group_distinct(setup.manifold.eigenvalues(), DEFAULT_GROUP_TOL).map_err(lib)?;
    let w = &setup.config.wavecheck;
    let reference_groups = w.reference_groups.unwrap_or(groups.len()).min(groups.len());
    let (pairs, spectrum) = match spectral {
        Some(path) => {
            let file: SpectralFile = read_json(path, "spectral-data")?;
            if file.config_hash != setup.hash {
                return Err(CliError::Provenance(format!("{} was produced by config {}", path.display(), file.config_hash)));
            }
            let pairs = file.pairs()?;
            if pairs.projections.iter().any(|p| p.nrows() != setup.patch.len() || p.ncols() != setup.patch.len()) {
                return Err(CliError::Provenance(format!("{} does not match the patch grid", path.display())));
            }
            manifest.input(path)?;
            let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
            (pairs, sha256_hex(&bytes))
        }
        None => (SpectralPairs::exact(&setup.patch, &groups, reference_groups).map_err(lib)?, "exact".to_string()),
    };
    let modes = groups.ranges[reference_groups - 1].end;
    let grid = TimeGrid::new(w.t_max, w.n_steps).map_err(|e| CliError::Validation(format!("wavecheck: {e}")))?;
    let bump = std::sync::Arc::new(build_bump(BumpKind::ExpBump));
    let a = Affine::window(bump, w.window[0], w.window[1], 1.0).map_err(lib)?;
    let xi = setup.spatial(&SpatialSpec::Random, u64::MAX);
    let f = SpaceTimeSource::separable(grid, &a, xi).map_err(lib)?;
    let hyp = hyp_apply(&pairs, &setup.patch, &f).map_err(lib)?;
    let reference = wave_oracle_modes(&setup.manifold, &setup.patch, &f, modes).map_err(lib)?;
    let c = compare_hyp(&hyp, &reference, setup.patch.weights()).map_err(lib)?;
    let file = WavecheckFile {
        schema_version: SCHEMA_VERSION,
        kind: "wavecheck".into(),
        config_hash: setup.hash.clone(),
        units: WavecheckFile::units(),
        spectrum,
        groups_used: pairs.len(),
        reference_groups,
        relative_l2: c.relative_l2,
        gate: w.gate,
        pass: c.relative_l2 <= w.gate,
        windows: c.windows.iter().map(|&(t_start, t_end, relative_error)| WindowRow { t_start, t_end, relative_error }).collect(),
    };
    let (_, bytes) = write_json(out, WAVECHECK_FILE, &file)?;
    manifest.output(WAVECHECK_FILE, &bytes);
    let table = windows_csv(&file)?;
    let table_path = out.join("wavecheck.csv");
    fs::write(&table_path, &table).map_err(|e| io_err(&table_path, e))?;
    manifest.output("wavecheck.csv", &table);
    manifest.write(out)?;
    if !file.pass {
        return Err(CliError::Tolerance(format!("wave operator error {:.3e} above gate {:.1e}", file.relative_l2, file.gate)));
    }
    Ok(file)
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn windows_csv(file: &WavecheckFile) -> Result<Vec<u8>, CliError> {
    csv_bytes(
        &["t_start", "t_end", "relative_error"],
        file.windows.iter().map(|r| vec![r.t_start.to_string(), r.t_end.to_string(), r.relative_error.to_string()]),
    )
}

/// Renders CSV tables for every artifact found in `dir`; returns the files written.
pub fn run_report(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    let mut emit = |name: &str, bytes: Vec<u8>| -> Result<(), CliError> {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        written.push(path);
        Ok(())
    };
    let record = dir.join(RECORD_FILE);
    if record.exists() {
        let file: RecordFile = read_json(&record, "measurement-record")?;
        let rec = file.record()?;
        let mut header = vec!["t".to_string()];
        header.extend((0..rec.n_points()).map(|j| format!("v{j}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = (0..rec.grid.len()).map(|i| {
            let mut row = vec![rec.grid.t(i).to_string()];
            row.extend(rec.values.row(i).iter().map(|v| v.to_string()));
            row
        });
        emit("record.csv", csv_bytes(&header, rows)?)?;
    }
    let spectral = dir.join(SPECTRAL_FILE);
    if spectral.exists() {
        let file: SpectralFile = read_json(&spectral, "spectral-data")?;
        let rows = file.entries.iter().enumerate().map(|(k, e)| {
            let d = e.diagnostics;
            vec![
                k.to_string(),
                e.lambda.to_string(),
                e.pole.to_string(),
                e.rank.to_string(),
                d.asymmetry.to_string(),
                d.negativity.to_string(),
                d.idempotence_defect.to_string(),
            ]
        });
        emit(
            "spectrum.csv",
            csv_bytes(&["k", "lambda", "pole", "rank", "asymmetry", "negativity", "idempotence_defect"], rows)?,
        )?;
    }
    let wave = dir.join(WAVECHECK_FILE);
    if wave.exists() {
        let file: WavecheckFile = read_json(&wave, "wavecheck")?;
        emit("wavecheck.csv", windows_csv(&file)?)?;
    }
    if written.is_empty() {
        return Err(CliError::Validation(format!("{} holds no record, spectral or wavecheck files", dir.display())));
    }
    Ok(written)
}
