//! Aggregation of result rows per sweep value and estimator.
//!
//! Means are taken over linear NMSE and converted back to dB. Standard deviations
//! are population deviations of the per-trial dB values, so one row gives 0.

use std::io::Write;

use jcep_core::predict::aggregate_db;
use serde::Serialize;

use crate::experiment::ResultRow;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub sweep_value: f64,
    pub estimator: String,
    pub trials: usize,
    pub estimation_nmse_db_mean: f64,
    pub estimation_nmse_db_std: f64,
    pub prediction_nmse_db_mean: f64,
    pub prediction_nmse_db_std: f64,
    pub diverged: usize,
}

fn std_db(v: &[f64]) -> f64 {
    let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.len() < 2 {
        return 0.0;
    }
    let m = finite.iter().sum::<f64>() / finite.len() as f64;
    (finite.iter().map(|x| (x - m).powi(2)).sum::<f64>() / finite.len() as f64).sqrt()
}

/// Groups in order of first appearance.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<SummaryRow>, Error> {
    if rows.is_empty() {
        return Err(Error::Schema("no result rows to summarize".into()));
    }
    let mut keys: Vec<(u64, &str)> = Vec::new();
    for r in rows {
        let k = (r.sweep_value.to_bits(), r.estimator.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    Ok(keys
        .into_iter()
        .map(|(bits, est)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.sweep_value.to_bits() == bits && r.estimator == est)
                .collect();
            let e: Vec<f64> = group.iter().map(|r| r.estimation_nmse_db).collect();
            let p: Vec<f64> = group.iter().map(|r| r.prediction_nmse_db).collect();
            SummaryRow {
                sweep_value: f64::from_bits(bits),
                estimator: est.to_string(),
                trials: group.len(),
                estimation_nmse_db_mean: aggregate_db(&e).unwrap_or(f64::NAN),
                estimation_nmse_db_std: std_db(&e),
                prediction_nmse_db_mean: aggregate_db(&p).unwrap_or(f64::NAN),
                prediction_nmse_db_std: std_db(&p),
                diverged: group.iter().filter(|r| r.divergence).count(),
            }
        })
        .collect())
}

pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<(), Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Mean estimation and prediction NMSE (dB) of `estimator` at `sweep_value`.
pub fn mean_of(rows: &[SummaryRow], sweep_value: f64, estimator: &str) -> Option<(f64, f64)> {
    rows.iter()
        .find(|r| r.sweep_value == sweep_value && r.estimator == estimator)
        .map(|r| (r.estimation_nmse_db_mean, r.prediction_nmse_db_mean))
}
