//! Seeded Monte-Carlo sweeps over all configured estimators.

use std::time::Instant;

use jcep_core::baselines::{em_bg_amp, omp_all_columns, somp};
use jcep_core::channel::{qpsk_pilots, sample_paths, synth_at_times, synth_fst_channel, synth_received, ChannelTensor, PathSet, ReceivedSignal};
use jcep_core::dictionary::{DictionarySet, LinearOperator};
use jcep_core::hmp::{HmpEngine, TraceRow};
use jcep_core::predict::{extrapolate, nmse_db, PredictionRequest};
use jcep_core::seed::{derive, substream, Stream};
use jcep_core::{CMat, OffGridParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ResolvedEstimator, SweepPoint};
use crate::Error;

/// One line of the result CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub estimator: String,
    pub trial: usize,
    pub seed: u64,
    pub estimation_nmse_db: f64,
    pub prediction_nmse_db: f64,
    pub iterations_used: usize,
    pub wall_time_ms: f64,
    pub divergence: bool,
}

/// Column names of [`ResultRow`], in file order.
pub const RESULT_COLUMNS: [&str; 9] = [
    "sweep_value",
    "estimator",
    "trial",
    "seed",
    "estimation_nmse_db",
    "prediction_nmse_db",
    "iterations_used",
    "wall_time_ms",
    "divergence",
];

/// One iteration of a message-passing estimator in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagRow {
    pub sweep_value: f64,
    pub estimator: String,
    pub trial: usize,
    pub outer: usize,
    pub inner: usize,
    pub residual_rel: f64,
    pub nmse_db: Option<f64>,
    pub rho: f64,
    pub active: usize,
}

/// Synthetic data of one trial.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub seed: u64,
    pub paths: PathSet,
    pub channel: ChannelTensor,
    pub rx: ReceivedSignal,
    pub request: PredictionRequest,
    /// True channel at the prediction instants.
    pub future: ChannelTensor,
}

/// Estimate of one estimator on one trial.
#[derive(Debug, Clone)]
pub struct EstimatorOutput {
    pub h_hat: CMat,
    pub omega: OffGridParams,
    pub g_hat: CMat,
    pub iterations: usize,
    pub diverged: bool,
    pub trace: Vec<TraceRow>,
    /// Posterior activity for the message-passing estimators.
    pub zeta: Option<Vec<f64>>,
}

/// Seed of trial `trial` at sweep index `point`.
pub fn trial_seed(master: u64, point: usize, trial: usize) -> u64 {
    derive(master, &[point as u64, trial as u64])
}

pub fn simulate(point: &SweepPoint, seed: u64, instants: usize) -> Result<TrialData, Error> {
    let cfg = &point.system;
    let paths = sample_paths(&point.scenario, &point.grid, cfg, substream(seed, Stream::Paths))?;
    let channel = synth_fst_channel(&paths, cfg);
    let pilots = qpsk_pilots(channel.g.nrows(), substream(seed, Stream::Pilots));
    let rx = synth_received(&channel, &pilots, point.snr_db, substream(seed, Stream::Noise))?;
    let request = PredictionRequest::next_interval(cfg, instants);
    let future = synth_at_times(&paths, cfg, &request.absolute_times(cfg));
    Ok(TrialData { seed, paths, channel, rx, request, future })
}

pub fn run_estimator(est: &ResolvedEstimator, dict: &DictionarySet, data: &TrialData) -> Result<EstimatorOutput, Error> {
    let greedy = |h_hat: CMat, k: usize| -> Result<EstimatorOutput, Error> {
        let omega = OffGridParams::zeros(&dict.grid);
        let g_hat = dict.compose(&omega, Default::default())?.apply(&h_hat)?;
        Ok(EstimatorOutput { h_hat, omega, g_hat, iterations: k, diverged: false, trace: Vec::new(), zeta: None })
    };
    let out = match est {
        ResolvedEstimator::Hmp { opts, .. } => HmpEngine::new(dict, &data.rx, opts.clone())?
            .with_truth(&data.channel.g)?
            .run_recorded()?,
        ResolvedEstimator::EmBgAmp { opts, mmv, .. } => em_bg_amp(dict, &data.rx, opts, *mmv)?,
        ResolvedEstimator::Omp { k, .. } => return greedy(omp_all_columns(dict, &data.rx, *k)?, *k),
        ResolvedEstimator::Somp { k, .. } => {
            let r = somp(dict, &data.rx, *k)?;
            let used = r.support.len();
            return greedy(r.to_dense(dict.ncols()), used);
        }
    };
    Ok(EstimatorOutput {
        h_hat: out.h_hat,
        omega: out.omega,
        g_hat: out.g_hat,
        iterations: out.iterations,
        diverged: out.divergence.is_some(),
        trace: out.trace,
        zeta: Some(out.zeta),
    })
}

/// Estimation and prediction NMSE of `out` against the trial's truth.
pub fn score(point: &SweepPoint, dict: &DictionarySet, data: &TrialData, out: &EstimatorOutput) -> Result<(f64, f64), Error> {
    let est = nmse_db(&data.channel.g, &out.g_hat)?;
    let pred = extrapolate(dict, &out.h_hat, &out.omega, &point.system, &data.request)?;
    Ok((est, nmse_db(&data.future.g, &pred.g)?))
}

/// Rows and traces of a whole experiment, sorted by sweep value, estimator and trial.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub diagnostics: Vec<DiagRow>,
}

pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentOutput, Error> {
    Ok(run_experiment_inspect(cfg, workers, |_, _, _, _| ())?.0)
}

/// Like [`run_experiment`], additionally collecting `inspect` for every
/// (sweep value, estimator, trial) in row order.
pub fn run_experiment_inspect<T, F>(cfg: &ExperimentConfig, workers: usize, inspect: F) -> Result<(ExperimentOutput, Vec<T>), Error>
where
    T: Send,
    F: Fn(&SweepPoint, &TrialData, &ResolvedEstimator, &EstimatorOutput) -> T + Sync,
{
    cfg.validate()?;
    let ests = cfg.resolved_estimators()?;
    let points: Vec<SweepPoint> = (0..cfg.sweep.values.len()).map(|i| cfg.point(i)).collect::<Result<_, _>>()?;
    let dicts: Vec<DictionarySet> = points
        .iter()
        .map(|p| DictionarySet::new(&p.grid, &p.system))
        .collect::<Result<_, _>>()?;
    let tasks: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..cfg.trials).map(move |t| (p, t))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let per_task: Vec<Vec<(ResultRow, Vec<DiagRow>, T)>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(p, t)| {
                let point = &points[p];
                let data = simulate(point, trial_seed(cfg.master_seed, p, t), cfg.prediction_instants)?;
                ests.iter()
                    .map(|est| {
                        let start = Instant::now();
                        let out = run_estimator(est, &dicts[p], &data)?;
                        let wall = start.elapsed().as_secs_f64() * 1e3;
                        let (e, pr) = score(point, &dicts[p], &data, &out)?;
                        let row = ResultRow {
                            sweep_value: point.value,
                            estimator: est.label().to_string(),
                            trial: t,
                            seed: data.seed,
                            estimation_nmse_db: e,
                            prediction_nmse_db: pr,
                            iterations_used: out.iterations,
                            wall_time_ms: if cfg.record_wall_time { wall } else { 0.0 },
                            divergence: out.diverged,
                        };
                        let diag = if cfg.diagnostics {
                            out.trace
                                .iter()
                                .map(|r| DiagRow {
                                    sweep_value: point.value,
                                    estimator: row.estimator.clone(),
                                    trial: t,
                                    outer: r.outer,
                                    inner: r.inner,
                                    residual_rel: r.residual_rel,
                                    nmse_db: r.nmse_db,
                                    rho: r.rho,
                                    active: r.active,
                                })
                                .collect()
                        } else {
                            Vec::new()
                        };
                        let extra = inspect(point, &data, est, &out);
                        Ok((row, diag, extra))
                    })
                    .collect::<Result<Vec<_>, Error>>()
            })
            .collect::<Result<Vec<_>, Error>>()
    })?;
    // Reorder from (point, trial, estimator) to (point, estimator, trial).
    let mut slots: Vec<Vec<Option<(ResultRow, Vec<DiagRow>, T)>>> =
        per_task.into_iter().map(|v| v.into_iter().map(Some).collect()).collect();
    let mut out = ExperimentOutput::default();
    let mut extras = Vec::with_capacity(tasks.len() * ests.len());
    for p in 0..points.len() {
        for e in 0..ests.len() {
            for t in 0..cfg.trials {
                let (row, diag, extra) = slots[p * cfg.trials + t][e].take().expect("each slot is taken once");
                out.rows.push(row);
                out.diagnostics.extend(diag);
                extras.push(extra);
            }
        }
    }
    Ok((out, extras))
}
