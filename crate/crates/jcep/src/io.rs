//! Result CSV, diagnostics CSV and run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use jcep_core::config::{slot_duration, symbol_duration};
use jcep_core::hmp::HmpOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, ResolvedEstimator};
use crate::experiment::{DiagRow, ExperimentOutput, ResultRow, RESULT_COLUMNS};
use crate::Error;

pub const RESULTS_FILE: &str = "results.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn write_rows<W: Write>(w: W, rows: &[ResultRow]) -> Result<(), Error> {
    // Header written by hand so that an empty result set still carries it.
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(RESULT_COLUMNS)?;
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a result CSV, requiring the exact header.
pub fn read_rows<R: Read>(r: R) -> Result<Vec<ResultRow>, Error> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    if header.is_empty() {
        return Err(Error::Schema("empty CSV".into()));
    }
    let got: Vec<&str> = header.iter().collect();
    if got != RESULT_COLUMNS {
        return Err(Error::Schema(format!(
            "header {:?} does not match the result columns {:?}",
            got, RESULT_COLUMNS
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.deserialize().enumerate() {
        rows.push(rec.map_err(|e| Error::Schema(format!("data row {i}: {e}")))?);
    }
    if rows.is_empty() {
        return Err(Error::Schema("CSV has no data rows".into()));
    }
    Ok(rows)
}

pub fn read_rows_file(path: &Path) -> Result<Vec<ResultRow>, Error> {
    read_rows(fs::File::open(path)?)
}

pub fn write_diagnostics<W: Write>(w: W, rows: &[DiagRow]) -> Result<(), Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Resolved parameters of one sweep value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointManifest {
    pub sweep_value: f64,
    pub snr_db: f64,
    pub symbol_seconds: f64,
    pub slot_seconds: f64,
    pub delta_t_seconds: f64,
    pub delta_big_t_seconds: f64,
    pub doppler_max_hz: f64,
    /// Ñ, M̃_v, M̃_h, K̃.
    pub grid: [usize; 4],
    pub observation_rows: usize,
    pub dictionary_columns: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorManifest {
    pub label: String,
    pub kind: String,
    pub options: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    /// SHA-256 of the configuration text.
    pub config_hash: String,
    pub code_version: String,
    pub profile: String,
    pub master_seed: u64,
    pub trials: usize,
    pub workers: usize,
    pub results_file: String,
    pub diagnostics_file: Option<String>,
    pub points: Vec<PointManifest>,
    pub estimators: Vec<EstimatorManifest>,
    /// Verbatim configuration, for replay.
    pub config: String,
}

pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn hmp_options(o: &HmpOptions) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("t_out", o.t_out.to_string());
    put("t_in", o.t_in.to_string());
    put("damping", o.damping.to_string());
    put("llr_threshold", o.llr_threshold.to_string());
    put("variance_floor", o.variance_floor.to_string());
    put("offgrid", o.offgrid.map_or("off".into(), |m| format!("{m:?}").to_lowercase()));
    put("offgrid_ridge", o.offgrid_ridge.to_string());
    put("nmk_correction", o.nmk_correction.to_string());
    put("early_exit_tol", o.early_exit_tol.map_or("none".into(), |v| v.to_string()));
    put("operator_mode", format!("{:?}", o.operator_mode).to_lowercase());
    put("divergence_factor", o.divergence_factor.to_string());
    put("learn_rho", o.learn_rho.to_string());
    put("learn_sigma", o.learn_sigma.to_string());
    put("rho_cadence", format!("{:?}", o.rho_cadence).to_lowercase());
    put("sigma_cadence", format!("{:?}", o.sigma_cadence).to_lowercase());
    put("prune", o.prune.to_string());
    put("hyper_warmup", o.hyper_warmup.to_string());
    put("rho_init", o.rho_init.to_string());
    put("sigma_init", o.sigma_init.to_string());
    put("noise_floor_rel", o.noise_floor_rel.to_string());
    m
}

pub fn estimator_manifest(e: &ResolvedEstimator) -> EstimatorManifest {
    let (kind, options) = match e {
        ResolvedEstimator::Hmp { opts, .. } => ("hmp", hmp_options(opts)),
        ResolvedEstimator::EmBgAmp { opts, mmv, .. } => {
            let mut m = hmp_options(opts);
            m.insert("mmv".into(), mmv.to_string());
            (if *mmv { "em_bg_amp_mmv" } else { "em_bg_amp" }, m)
        }
        ResolvedEstimator::Omp { k, .. } => ("omp", BTreeMap::from([("sparsity".to_string(), k.to_string())])),
        ResolvedEstimator::Somp { k, .. } => ("somp", BTreeMap::from([("sparsity".to_string(), k.to_string())])),
    };
    EstimatorManifest { label: e.label().to_string(), kind: kind.into(), options }
}

pub fn build_manifest(cfg: &ExperimentConfig, config_text: &str, workers: usize) -> Result<Manifest, Error> {
    let points = (0..cfg.sweep.values.len())
        .map(|i| {
            let p = cfg.point(i)?;
            let s = &p.system;
            Ok(PointManifest {
                sweep_value: p.value,
                snr_db: p.snr_db,
                symbol_seconds: symbol_duration(s.subcarrier_spacing),
                slot_seconds: slot_duration(s.subcarrier_spacing),
                delta_t_seconds: s.delta_t,
                delta_big_t_seconds: s.delta_big_t,
                doppler_max_hz: p.scenario.doppler_max,
                grid: p.grid.dims(),
                observation_rows: s.n_rows(),
                dictionary_columns: p.grid.n_cols(),
            })
        })
        .collect::<Result<_, Error>>()?;
    Ok(Manifest {
        config_hash: config_hash(config_text),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        profile: cfg.profile.to_string(),
        master_seed: cfg.master_seed,
        trials: cfg.trials,
        workers,
        results_file: RESULTS_FILE.into(),
        diagnostics_file: cfg.diagnostics.then(|| DIAGNOSTICS_FILE.into()),
        points,
        estimators: cfg.resolved_estimators()?.iter().map(estimator_manifest).collect(),
        config: config_text.to_string(),
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest, Error> {
    toml::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// Writes results, diagnostics and manifest into `dir`; returns the result CSV path.
pub fn write_outputs(dir: &Path, out: &ExperimentOutput, manifest: &Manifest) -> Result<PathBuf, Error> {
    fs::create_dir_all(dir)?;
    let results = dir.join(RESULTS_FILE);
    write_rows(fs::File::create(&results)?, &out.rows)?;
    if manifest.diagnostics_file.is_some() {
        write_diagnostics(fs::File::create(dir.join(DIAGNOSTICS_FILE))?, &out.diagnostics)?;
    }
    let text = toml::to_string(manifest).map_err(|e| Error::Schema(format!("manifest: {e}")))?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(results)
}
