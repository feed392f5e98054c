//! Experiment configuration: TOML schema, validation and resolution to core types.

use jcep_core::channel::Scenario;
use jcep_core::config::{slot_duration, symbol_duration};
use jcep_core::hmp::{Cadence, HmpOptions};
use jcep_core::hyper::OffGridMode;
use jcep_core::{GridSpec, SystemConfig};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::Error;

/// Base parameter set that the `[system]` table overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 16 pilots, 2×4 antennas, 4 soundings: a 1536-column dictionary.
    #[default]
    Desk,
    /// Full 100 MHz reference deployment; only practical with the matrix-free operator.
    Paper,
}

impl Profile {
    pub fn base(self) -> SystemConfig {
        match self {
            Profile::Desk => SystemConfig::desk(),
            Profile::Paper => SystemConfig::paper(),
        }
    }
}

impl FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(format!("unknown profile `{s}` (expected desk or paper)")),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

/// Optional replacements for profile values. Durations are given in symbols and
/// slots of the configured numerology.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemOverrides {
    pub n_fft: Option<usize>,
    pub n_sc: Option<usize>,
    pub subcarrier_spacing: Option<f64>,
    pub n_subbands: Option<usize>,
    pub n_comb: Option<usize>,
    pub srs_len: Option<usize>,
    pub m_v: Option<usize>,
    pub m_h: Option<usize>,
    pub n_soundings: Option<usize>,
    pub doppler_oversample: Option<usize>,
    pub delta_t_symbols: Option<f64>,
    pub delta_big_t_slots: Option<f64>,
    pub hop_schedule: Option<Vec<usize>>,
    pub carrier_freq: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridOverrides {
    pub n_delay: Option<usize>,
    pub n_elev: Option<usize>,
    pub n_azim: Option<usize>,
    pub n_doppler: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_paths: usize,
    #[serde(default = "default_speed")]
    pub speed_kmh: f64,
    #[serde(default)]
    pub on_grid: bool,
    /// Largest path delay; defaults to half the unambiguous delay range.
    pub delay_spread_s: Option<f64>,
    #[serde(default = "one")]
    pub subpaths: usize,
    #[serde(default)]
    pub subpath_doppler_spread_hz: f64,
}

fn default_speed() -> f64 {
    60.0
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "snr_db")]
    SnrDb,
    /// Sounding interval in slots.
    #[serde(rename = "delta_T")]
    DeltaT,
    #[serde(rename = "m_h")]
    MH,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Hmp,
    EmBgAmp,
    EmBgAmpMmv,
    Omp,
    Somp,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Hmp => "hmp",
            EstimatorKind::EmBgAmp => "em_bg_amp",
            EstimatorKind::EmBgAmpMmv => "em_bg_amp_mmv",
            EstimatorKind::Omp => "omp",
            EstimatorKind::Somp => "somp",
        }
    }

    pub fn is_greedy(self) -> bool {
        matches!(self, EstimatorKind::Omp | EstimatorKind::Somp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffGridChoice {
    Exact,
    Fast,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CadenceChoice {
    Inner,
    Outer,
}

impl From<CadenceChoice> for Cadence {
    fn from(c: CadenceChoice) -> Self {
        match c {
            CadenceChoice::Inner => Cadence::Inner,
            CadenceChoice::Outer => Cadence::Outer,
        }
    }
}

/// One estimator entry. Message-passing options apply to `hmp` and the EM-BG-AMP
/// variants; `sparsity` applies to the greedy methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub name: EstimatorKind,
    /// Name written to the result rows; defaults to `name`.
    pub label: Option<String>,
    pub t_out: Option<usize>,
    pub t_in: Option<usize>,
    pub damping: Option<f64>,
    pub llr_threshold: Option<f64>,
    pub offgrid: Option<OffGridChoice>,
    pub hyper_warmup: Option<usize>,
    pub prune: Option<bool>,
    pub rho_cadence: Option<CadenceChoice>,
    pub sigma_cadence: Option<CadenceChoice>,
    pub early_exit_tol: Option<f64>,
    /// Atoms selected by OMP/SOMP; defaults to the scenario path count.
    pub sparsity: Option<usize>,
}

impl EstimatorSpec {
    pub fn new(name: EstimatorKind) -> Self {
        Self {
            name,
            label: None,
            t_out: None,
            t_in: None,
            damping: None,
            llr_threshold: None,
            offgrid: None,
            hyper_warmup: None,
            prune: None,
            rho_cadence: None,
            sigma_cadence: None,
            early_exit_tol: None,
            sparsity: None,
        }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.name.name())
    }

    fn has_amp_options(&self) -> bool {
        self.t_out.is_some()
            || self.t_in.is_some()
            || self.damping.is_some()
            || self.llr_threshold.is_some()
            || self.offgrid.is_some()
            || self.hyper_warmup.is_some()
            || self.prune.is_some()
            || self.rho_cadence.is_some()
            || self.sigma_cadence.is_some()
            || self.early_exit_tol.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub system: SystemOverrides,
    #[serde(default)]
    pub grid: GridOverrides,
    pub scenario: ScenarioConfig,
    pub sweep: Sweep,
    pub estimators: Vec<EstimatorSpec>,
    pub trials: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// SNR used when the sweep axis is not `snr_db`; `inf` gives noiseless data.
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    /// Evenly spaced prediction instants over the interval after the last sounding.
    #[serde(default = "default_instants")]
    pub prediction_instants: usize,
    /// Measure `wall_time_ms`; when false the column is written as 0 so that result
    /// files are byte-for-byte reproducible.
    #[serde(default = "yes")]
    pub record_wall_time: bool,
    /// Write the per-iteration trace of the message-passing estimators.
    #[serde(default = "yes")]
    pub diagnostics: bool,
}

fn default_snr() -> f64 {
    10.0
}

fn default_instants() -> usize {
    8
}

fn yes() -> bool {
    true
}

/// Everything needed to simulate one sweep value.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub system: SystemConfig,
    pub grid: GridSpec,
    pub scenario: Scenario,
    pub snr_db: f64,
}

/// Estimator with its options resolved against the defaults.
#[derive(Debug, Clone)]
pub enum ResolvedEstimator {
    Hmp { label: String, opts: HmpOptions },
    EmBgAmp { label: String, opts: HmpOptions, mmv: bool },
    Omp { label: String, k: usize },
    Somp { label: String, k: usize },
}

impl ResolvedEstimator {
    pub fn label(&self) -> &str {
        match self {
            ResolvedEstimator::Hmp { label, .. }
            | ResolvedEstimator::EmBgAmp { label, .. }
            | ResolvedEstimator::Omp { label, .. }
            | ResolvedEstimator::Somp { label, .. } => label,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML; errors carry the line, column and offending key.
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |field: &str, msg: &str| Err(Error::Config(format!("field `{field}`: {msg}")));
        if self.trials == 0 {
            return bad("trials", "must be at least 1");
        }
        if self.sweep.values.is_empty() {
            return bad("sweep.values", "must not be empty");
        }
        if self.sweep.values.iter().any(|v| v.is_nan()) {
            return bad("sweep.values", "must not contain NaN");
        }
        if self.estimators.is_empty() {
            return bad("estimators", "at least one estimator is required");
        }
        if self.prediction_instants == 0 {
            return bad("prediction_instants", "must be at least 1");
        }
        if self.snr_db.is_nan() {
            return bad("snr_db", "must be a number");
        }
        let mut labels = std::collections::HashSet::new();
        for (i, e) in self.estimators.iter().enumerate() {
            let field = format!("estimators[{i}]");
            if !labels.insert(e.label().to_string()) {
                return bad(&field, &format!("duplicate label `{}`", e.label()));
            }
            if e.name.is_greedy() && e.has_amp_options() {
                return bad(&field, "message-passing options are not valid for greedy estimators");
            }
            if !e.name.is_greedy() && e.sparsity.is_some() {
                return bad(&field, "`sparsity` applies to omp and somp only");
            }
            if e.sparsity == Some(0) {
                return bad(&field, "`sparsity` must be at least 1");
            }
            if e.name != EstimatorKind::Hmp && e.offgrid.is_some() {
                return bad(&field, "`offgrid` applies to hmp only");
            }
        }
        if self.sweep.axis == SweepAxis::MH {
            for &v in &self.sweep.values {
                if !(v >= 1.0 && v.fract() == 0.0) {
                    return bad("sweep.values", "m_h values must be positive integers");
                }
            }
        }
        // Resolve everything once so that errors surface before any trial runs.
        for i in 0..self.sweep.values.len() {
            self.point(i)?;
        }
        for e in &self.estimators {
            self.resolve_estimator(e)?;
        }
        Ok(())
    }

    fn base_system(&self) -> Result<SystemConfig, Error> {
        let o = &self.system;
        let mut s = self.profile.base();
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = o.$f.clone() { s.$f = v; } )* };
        }
        set!(n_fft, n_sc, subcarrier_spacing, n_subbands, n_comb, srs_len, m_v, m_h, n_soundings, doppler_oversample, carrier_freq);
        s.hop_schedule = o.hop_schedule.clone().unwrap_or_else(|| {
            if o.n_subbands.is_some() {
                (0..s.n_subbands).collect()
            } else {
                s.hop_schedule.clone()
            }
        });
        let scs = s.subcarrier_spacing;
        if !(scs > 0.0) {
            return Err(Error::Config("field `system.subcarrier_spacing`: must be positive".into()));
        }
        s.delta_t = o.delta_t_symbols.unwrap_or(1.0) * symbol_duration(scs);
        s.delta_big_t = o.delta_big_t_slots.unwrap_or(4.0) * slot_duration(scs);
        Ok(s)
    }

    /// Sweep value `i` resolved to concrete system, grid and scenario parameters.
    pub fn point(&self, i: usize) -> Result<SweepPoint, Error> {
        let value = *self
            .sweep
            .values
            .get(i)
            .ok_or_else(|| Error::Config(format!("sweep index {i} out of range")))?;
        let mut system = self.base_system()?;
        let mut snr_db = self.snr_db;
        match self.sweep.axis {
            SweepAxis::SnrDb => snr_db = value,
            SweepAxis::DeltaT => {
                if !(value > 0.0) {
                    return Err(Error::Config("field `sweep.values`: delta_T must be positive".into()));
                }
                system.delta_big_t = value * slot_duration(system.subcarrier_spacing);
            }
            SweepAxis::MH => system.m_h = value as usize,
        }
        let ctx = |e: jcep_core::Error| Error::Config(format!("sweep value {value}: {e}"));
        system.validate().map_err(ctx)?;
        let mut grid = GridSpec::from_config(&system);
        let g = &self.grid;
        grid.n_delay = g.n_delay.unwrap_or(grid.n_delay);
        grid.n_elev = g.n_elev.unwrap_or(grid.n_elev);
        grid.n_azim = g.n_azim.unwrap_or(grid.n_azim);
        grid.n_doppler = g.n_doppler.unwrap_or(grid.n_doppler);
        grid.check_against(&system).map_err(ctx)?;
        let sc = &self.scenario;
        let mut scenario = Scenario::new(sc.n_paths, &system, sc.speed_kmh / 3.6);
        scenario.on_grid = sc.on_grid;
        scenario.subpaths = sc.subpaths;
        scenario.subpath_doppler_spread = sc.subpath_doppler_spread_hz;
        if let Some(d) = sc.delay_spread_s {
            scenario.delay_spread = d;
        }
        scenario.validate(&system).map_err(ctx)?;
        if sc.on_grid && sc.n_paths > grid.n_cols() {
            return Err(Error::Config(format!(
                "field `scenario.n_paths`: {} on-grid paths exceed {} grid points",
                sc.n_paths,
                grid.n_cols()
            )));
        }
        Ok(SweepPoint { value, system, grid, scenario, snr_db })
    }

    pub fn resolve_estimator(&self, e: &EstimatorSpec) -> Result<ResolvedEstimator, Error> {
        let label = e.label().to_string();
        let k = e.sparsity.unwrap_or(self.scenario.n_paths);
        let mp = |base: HmpOptions| -> Result<HmpOptions, Error> {
            let mut o = base;
            if let Some(v) = e.t_out {
                o.t_out = v;
            }
            if let Some(v) = e.t_in {
                o.t_in = v;
            }
            if let Some(v) = e.damping {
                o.damping = v;
            }
            if let Some(v) = e.llr_threshold {
                o.llr_threshold = v;
            }
            if let Some(v) = e.hyper_warmup {
                o.hyper_warmup = v;
            }
            if let Some(v) = e.prune {
                o.prune = v;
            }
            if let Some(v) = e.rho_cadence {
                o.rho_cadence = v.into();
            }
            if let Some(v) = e.sigma_cadence {
                o.sigma_cadence = v.into();
            }
            if e.early_exit_tol.is_some() {
                o.early_exit_tol = e.early_exit_tol;
            }
            match e.offgrid {
                Some(OffGridChoice::Exact) => o.offgrid = Some(OffGridMode::Exact),
                Some(OffGridChoice::Fast) => o.offgrid = Some(OffGridMode::Fast),
                Some(OffGridChoice::Off) => o.offgrid = None,
                None => {}
            }
            o.validate()
                .map_err(|err| Error::Config(format!("estimator `{label}`: {err}")))?;
            Ok(o)
        };
        Ok(match e.name {
            EstimatorKind::Hmp => ResolvedEstimator::Hmp { opts: mp(HmpOptions::default())?, label },
            EstimatorKind::EmBgAmp => ResolvedEstimator::EmBgAmp { opts: mp(HmpOptions::degenerate())?, mmv: false, label },
            EstimatorKind::EmBgAmpMmv => ResolvedEstimator::EmBgAmp { opts: mp(HmpOptions::degenerate())?, mmv: true, label },
            EstimatorKind::Omp => ResolvedEstimator::Omp { k, label },
            EstimatorKind::Somp => ResolvedEstimator::Somp { k, label },
        })
    }

    pub fn resolved_estimators(&self) -> Result<Vec<ResolvedEstimator>, Error> {
        self.estimators.iter().map(|e| self.resolve_estimator(e)).collect()
    }
}
