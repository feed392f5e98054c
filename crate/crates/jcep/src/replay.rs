//! Standalone re-run of a single result row.

use std::path::Path;

use jcep_core::dictionary::DictionarySet;

use crate::config::ExperimentConfig;
use crate::experiment::{run_estimator, score, simulate, trial_seed, ResultRow};
use crate::io::{read_manifest, read_rows_file, MANIFEST_FILE};
use crate::Error;

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub recorded: ResultRow,
    pub replayed: ResultRow,
}

impl ReplayReport {
    /// True when every deterministic field is reproduced bit for bit.
    pub fn matches(&self) -> bool {
        let (a, b) = (&self.recorded, &self.replayed);
        a.seed == b.seed
            && a.estimation_nmse_db.to_bits() == b.estimation_nmse_db.to_bits()
            && a.prediction_nmse_db.to_bits() == b.prediction_nmse_db.to_bits()
            && a.iterations_used == b.iterations_used
            && a.divergence == b.divergence
    }
}

/// Re-runs data row `row` (0-based) of `csv`, using the manifest next to it.
pub fn replay(csv: &Path, row: usize) -> Result<ReplayReport, Error> {
    let rows = read_rows_file(csv)?;
    let recorded = rows
        .get(row)
        .cloned()
        .ok_or_else(|| Error::Config(format!("row {row} out of range ({} data rows)", rows.len())))?;
    let dir = csv.parent().unwrap_or_else(|| Path::new("."));
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let mut cfg = ExperimentConfig::from_toml(&manifest.config)?;
    cfg.profile = manifest.profile.parse().map_err(Error::Config)?;
    cfg.validate()?;
    let p = cfg
        .sweep
        .values
        .iter()
        .position(|v| v.to_bits() == recorded.sweep_value.to_bits())
        .ok_or_else(|| Error::Config(format!("sweep value {} not in the configuration", recorded.sweep_value)))?;
    let seed = trial_seed(cfg.master_seed, p, recorded.trial);
    if seed != recorded.seed {
        return Err(Error::Config(format!(
            "row seed {} does not match the derived seed {seed}",
            recorded.seed
        )));
    }
    let est = cfg
        .resolved_estimators()?
        .into_iter()
        .find(|e| e.label() == recorded.estimator)
        .ok_or_else(|| Error::Config(format!("estimator `{}` not in the configuration", recorded.estimator)))?;
    let point = cfg.point(p)?;
    let dict = DictionarySet::new(&point.grid, &point.system)?;
    let data = simulate(&point, seed, cfg.prediction_instants)?;
    let start = std::time::Instant::now();
    let out = run_estimator(&est, &dict, &data)?;
    let wall = start.elapsed().as_secs_f64() * 1e3;
    let (e, pr) = score(&point, &dict, &data, &out)?;
    let replayed = ResultRow {
        sweep_value: point.value,
        estimator: est.label().to_string(),
        trial: recorded.trial,
        seed,
        estimation_nmse_db: e,
        prediction_nmse_db: pr,
        iterations_used: out.iterations,
        wall_time_ms: wall,
        divergence: out.diverged,
    };
    Ok(ReplayReport { recorded, replayed })
}
