//! End-to-end orchestration: synthesis, estimation, correlation,
//! classification and reporting, with artifacts under one output directory.
//!
//! ```text
//! <out>/trials/                  synthetic trial files + ground_truth.csv
//! <out>/estimates.json|csv       estimate store
//! <out>/correlation.json         curve, condition summary, counts
//! <out>/correlation_curve.csv
//! <out>/condition_summary.csv
//! <out>/accuracy.json
//! <out>/accuracy_table.csv
//! <out>/report.json
//! <out>/plot_correlation.csv
//! <out>/plot_accuracy.csv
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{run_experiment, AccuracyReport, ClassifierOptions, EstimateRow, VARIANTS};
use crate::error::{Error, Result};
use crate::lpc::{estimate_lpc, DampingEstimate, LpcOptions, Method};
use crate::msd::{fit_pem, is_outlier, FitOptions, MsdFit};
use crate::signal::{format_trial, load_trials, smooth, truncate_window, Trial, TrialKey};
use crate::stats::{
    condition_summary, default_thresholds, threshold_sweep, ConditionSummary, CorrelationCurve, Observation,
    PairedEstimates, PairedRow,
};
use crate::synth::{export, generate, SynthConfig};

pub const TRIALS_DIR: &str = "trials";
pub const ESTIMATES_JSON: &str = "estimates.json";
pub const ESTIMATES_CSV: &str = "estimates.csv";
pub const CORRELATION_JSON: &str = "correlation.json";
pub const CURVE_CSV: &str = "correlation_curve.csv";
pub const SUMMARY_CSV: &str = "condition_summary.csv";
pub const ACCURACY_JSON: &str = "accuracy.json";
pub const ACCURACY_CSV: &str = "accuracy_table.csv";
pub const REPORT_JSON: &str = "report.json";
pub const PLOT_CORRELATION_CSV: &str = "plot_correlation.csv";
pub const PLOT_ACCURACY_CSV: &str = "plot_accuracy.csv";

/// Which signal the LPC estimator sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpcSignal {
    #[default]
    Smoothed,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSettings {
    pub smoothing_cutoff_hz: f64,
    /// Truncate each trial to its distance's window before estimation.
    pub window: bool,
    pub lpc_signal: LpcSignal,
    pub lpc: LpcOptions,
    pub fit: FitOptions,
}

impl Default for EstimationSettings {
    fn default() -> Self {
        Self {
            smoothing_cutoff_hz: 10.0,
            window: false,
            lpc_signal: LpcSignal::Smoothed,
            lpc: LpcOptions::default(),
            fit: FitOptions::default(),
        }
    }
}

impl EstimationSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing_cutoff_hz > 0.0 && self.smoothing_cutoff_hz.is_finite()) {
            return Err(Error::config("estimation.smoothing_cutoff_hz", "must be positive and finite"));
        }
        if !(1..=64).contains(&self.lpc.order) {
            return Err(Error::config("estimation.lpc.order", "must be between 1 and 64"));
        }
        self.fit.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Trial directory to ingest; defaults to `<out_dir>/trials`.
    pub input_dir: Option<PathBuf>,
    /// Synthesis settings. Its own `seed` is replaced by the master seed.
    pub synth: SynthConfig,
    pub estimation: EstimationSettings,
    pub gof_thresholds: Vec<f64>,
    pub classifier: ClassifierOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("stiffsense-out"),
            input_dir: None,
            synth: SynthConfig::default(),
            estimation: EstimationSettings::default(),
            gof_thresholds: default_thresholds(),
            classifier: ClassifierOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| Error::config("<config>", e.to_string()))?;
        cfg.synth.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.gof_thresholds.is_empty() || self.gof_thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::config("gof_thresholds", "must be a non-empty list of finite values"));
        }
        if self.synth.seed != self.seed {
            return Err(Error::config("synth.seed", "must equal the master seed"));
        }
        self.synth.validate()?;
        self.estimation.validate()?;
        self.classifier.validate()
    }

    pub fn trials_dir(&self) -> PathBuf {
        self.input_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join(TRIALS_DIR))
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Either a value or the reason it could not be produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome<T> {
    Ok(T),
    Failed(String),
}

impl<T> Outcome<T> {
    pub fn ok(&self) -> Option<&T> {
        match self {
            Outcome::Ok(v) => Some(v),
            Outcome::Failed(_) => None,
        }
    }

    fn from_result(r: Result<T>) -> Self {
        match r {
            Ok(v) => Outcome::Ok(v),
            Err(e) => Outcome::Failed(e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreEntry {
    pub key: TrialKey,
    pub n_samples: usize,
    /// Windowing was requested but the trial was shorter than its window.
    pub short_window: bool,
    pub lpc: Outcome<DampingEstimate>,
    pub msd: Outcome<MsdFit>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureCounts {
    pub lpc: usize,
    pub msd: usize,
    /// Failure reason -> count, per method.
    pub reasons: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateStore {
    /// Hash of the estimation settings and the ingested trial contents.
    pub config_hash: String,
    pub settings: EstimationSettings,
    pub ingested_trials: usize,
    pub rejected_files: usize,
    pub failures: FailureCounts,
    pub entries: Vec<StoreEntry>,
}

impl EstimateStore {
    pub fn successes(&self, method: Method) -> usize {
        self.entries
            .iter()
            .filter(|e| match method {
                Method::Lpc => e.lpc.ok().is_some(),
                Method::Msd => e.msd.ok().is_some(),
            })
            .count()
    }

    pub fn estimate_rows(&self) -> Vec<EstimateRow> {
        self.entries
            .iter()
            .map(|e| EstimateRow {
                key: e.key.clone(),
                lpc: e.lpc.ok().cloned(),
                msd: e.msd.ok().map(MsdFit::estimate),
            })
            .collect()
    }
}

/// Runs both estimators on one trial.
pub fn estimate_trial(trial: &Trial, settings: &EstimationSettings) -> StoreEntry {
    let key = trial.meta.key();
    let (raw, short_window) = if settings.window {
        match truncate_window(&trial.trajectory, &trial.meta) {
            Ok(w) => (w.trajectory, w.short),
            Err(e) => return failed_entry(key, trial.trajectory.len(), &e),
        }
    } else {
        (trial.trajectory.clone(), false)
    };
    let smoothed = match smooth(&raw, settings.smoothing_cutoff_hz) {
        Ok(s) => s,
        Err(e) => return failed_entry(key, raw.len(), &e),
    };
    let lpc_input = match settings.lpc_signal {
        LpcSignal::Smoothed => smoothed.samples(),
        LpcSignal::Raw => raw.samples(),
    };
    StoreEntry {
        n_samples: raw.len(),
        short_window,
        lpc: Outcome::from_result(estimate_lpc(lpc_input, &settings.lpc)),
        msd: Outcome::from_result(fit_pem(&smoothed, &trial.meta, &settings.fit)),
        key,
    }
}

fn failed_entry(key: TrialKey, n_samples: usize, e: &Error) -> StoreEntry {
    StoreEntry {
        key,
        n_samples,
        short_window: false,
        lpc: Outcome::Failed(e.to_string()),
        msd: Outcome::Failed(e.to_string()),
    }
}

/// Estimates every trial; entries follow the set's key order.
pub fn estimate_all(trials: &[Trial], settings: &EstimationSettings) -> Vec<StoreEntry> {
    trials.par_iter().map(|t| estimate_trial(t, settings)).collect()
}

fn failure_counts(entries: &[StoreEntry]) -> FailureCounts {
    let mut f = FailureCounts::default();
    for e in entries {
        if let Outcome::Failed(r) = &e.lpc {
            f.lpc += 1;
            *f.reasons.entry(format!("LPC: {r}")).or_default() += 1;
        }
        if let Outcome::Failed(r) = &e.msd {
            f.msd += 1;
            *f.reasons.entry(format!("MSD: {r}")).or_default() += 1;
        }
    }
    f
}

fn settings_hash(settings: &EstimationSettings, trials: &[Trial]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(settings).expect("settings serialize"));
    for t in trials {
        h.update(format_trial(t).as_bytes());
    }
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Runs `f` on a pool of `jobs` threads, or on the global pool when `None`.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::config("--jobs", "must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config("--jobs", e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingArtifact(path.into()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })
}

fn csv_bytes<F>(path: &Path, header: &[&str], fill: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> std::result::Result<(), csv::Error>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e| Error::Csv {
        path: path.into(),
        source: e,
    };
    w.write_record(header).map_err(err)?;
    fill(&mut w).map_err(err)?;
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_bytes(path, &bytes)
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub trials: usize,
    pub dir: PathBuf,
}

pub fn cmd_synth(cfg: &PipelineConfig) -> Result<SynthSummary> {
    cfg.validate()?;
    let (set, truth) = generate(&cfg.synth)?;
    let dir = cfg.out_dir.join(TRIALS_DIR);
    export(&set, &truth, &dir)?;
    log::info!("wrote {} trials to {}", set.len(), dir.display());
    Ok(SynthSummary { trials: set.len(), dir })
}

/// Ingests the trial directory and estimates every trial, reusing the
/// stored estimates when settings and inputs are unchanged.
pub fn cmd_estimate(cfg: &PipelineConfig) -> Result<EstimateStore> {
    cfg.validate()?;
    let dir = cfg.trials_dir();
    if !dir.is_dir() {
        return Err(Error::MissingArtifact(dir));
    }
    let loaded = load_trials(&dir)?;
    let trials = loaded.set.trials();
    let hash = settings_hash(&cfg.estimation, trials);

    let json_path = cfg.artifact(ESTIMATES_JSON);
    if let Ok(cached) = read_json::<EstimateStore>(&json_path) {
        if cached.config_hash == hash && cached.rejected_files == loaded.rejected.len() {
            log::info!("estimates up to date ({} trials)", cached.entries.len());
            return Ok(cached);
        }
    }

    log::info!("estimating {} trials", trials.len());
    let entries = estimate_all(trials, &cfg.estimation);
    let store = EstimateStore {
        config_hash: hash,
        settings: cfg.estimation.clone(),
        ingested_trials: trials.len(),
        rejected_files: loaded.rejected.len(),
        failures: failure_counts(&entries),
        entries,
    };
    write_json(&json_path, &store)?;
    write_estimates_csv(&cfg.artifact(ESTIMATES_CSV), &store)?;
    Ok(store)
}

fn write_estimates_csv(path: &Path, store: &EstimateStore) -> Result<()> {
    let header = [
        "trial_key",
        "participant_id",
        "distance_px",
        "width_px",
        "condition",
        "repetition",
        "n_samples",
        "lpc_omega",
        "lpc_zeta",
        "lpc_error",
        "msd_kp",
        "msd_omega",
        "msd_zeta",
        "msd_gof_percent",
        "msd_converged",
        "msd_at_bound",
        "msd_error",
    ];
    csv_bytes(path, &header, |w| {
        for e in &store.entries {
            let lpc = e.lpc.ok();
            let msd = e.msd.ok();
            let err = |o: Option<&String>| o.cloned().unwrap_or_default();
            w.write_record([
                e.key.to_string(),
                e.key.participant_id.clone(),
                e.key.distance_px.to_string(),
                e.key.width_px.to_string(),
                e.key.condition.to_string(),
                e.key.repetition.to_string(),
                e.n_samples.to_string(),
                opt_num(lpc.map(|l| l.omega)),
                opt_num(lpc.map(|l| l.zeta)),
                err(match &e.lpc {
                    Outcome::Failed(r) => Some(r),
                    Outcome::Ok(_) => None,
                }),
                opt_num(msd.map(|m| m.params.kp)),
                opt_num(msd.map(|m| m.params.omega)),
                opt_num(msd.map(|m| m.params.zeta)),
                opt_num(msd.map(|m| m.gof_percent)),
                msd.map(|m| m.converged.to_string()).unwrap_or_default(),
                msd.map(|m| m.at_bound.to_string()).unwrap_or_default(),
                err(match &e.msd {
                    Outcome::Failed(r) => Some(r),
                    Outcome::Ok(_) => None,
                }),
            ])?;
        }
        Ok(())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCounts {
    pub ingested_trials: usize,
    pub jointly_successful: usize,
    pub msd_outliers_dropped: usize,
    pub paired_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationArtifact {
    pub counts: CorrelationCounts,
    pub curve: CorrelationCurve,
    pub condition_summary: ConditionSummary,
    pub notes: Vec<String>,
}

/// Builds the paired rows and the per-method observations from a store.
pub fn paired_from_store(store: &EstimateStore) -> (PairedEstimates, usize, usize) {
    let joint: Vec<PairedRow> = store
        .entries
        .iter()
        .filter_map(|e| {
            Some(PairedRow {
                key: e.key.clone(),
                lpc: *e.lpc.ok()?,
                msd: e.msd.ok()?.clone(),
            })
        })
        .collect();
    let n_joint = joint.len();
    let (pairs, dropped) = PairedEstimates::new(joint);
    (pairs, n_joint, dropped)
}

fn observations(store: &EstimateStore) -> Vec<Observation> {
    let mut out = Vec::new();
    for e in &store.entries {
        let mut push = |method, est: &DampingEstimate| {
            out.push(Observation {
                participant_id: e.key.participant_id.clone(),
                condition: e.key.condition,
                method,
                omega: est.omega,
                zeta: est.zeta,
            })
        };
        if let Some(l) = e.lpc.ok() {
            push(Method::Lpc, l);
        }
        if let Some(m) = e.msd.ok().map(MsdFit::estimate).filter(|m| !is_outlier(m)) {
            push(Method::Msd, &m);
        }
    }
    out
}

pub fn cmd_correlate(cfg: &PipelineConfig) -> Result<CorrelationArtifact> {
    let store = cmd_estimate(cfg)?;
    let (pairs, jointly_successful, dropped) = paired_from_store(&store);
    if pairs.len() < 3 {
        return Err(Error::InsufficientRows {
            available: pairs.len(),
            required: 3,
        });
    }
    let curve = threshold_sweep(&pairs, &cfg.gof_thresholds)?;
    let summary = condition_summary(&observations(&store))?;
    let artifact = CorrelationArtifact {
        counts: CorrelationCounts {
            ingested_trials: store.ingested_trials,
            jointly_successful,
            msd_outliers_dropped: dropped,
            paired_rows: pairs.len(),
        },
        curve,
        condition_summary: summary,
        notes: vec![
            "condition summary averages trials within each participant first; SE and t-test are across participants".into(),
            "MSD outliers (zeta <= 0 or zeta > 100) removed; LPC estimates are not screened".into(),
            format!(
                "LPC input: {:?} signal, mean removed; window truncation: {}",
                store.settings.lpc_signal, store.settings.window
            ),
            "Spearman p-values use the t approximation".into(),
        ],
    };
    write_json(&cfg.artifact(CORRELATION_JSON), &artifact)?;
    write_curve_csv(&cfg.artifact(CURVE_CSV), &artifact.curve)?;
    write_summary_csv(&cfg.artifact(SUMMARY_CSV), &artifact.condition_summary)?;
    Ok(artifact)
}

fn write_curve_csv(path: &Path, curve: &CorrelationCurve) -> Result<()> {
    let header = [
        "gof_threshold",
        "n_rows",
        "retention_percent",
        "rho_omega",
        "p_omega",
        "rho_zeta",
        "p_zeta",
    ];
    csv_bytes(path, &header, |w| {
        for p in &curve.points {
            w.write_record([
                num(p.threshold),
                p.n_rows.to_string(),
                num(p.retention_percent),
                opt_num(p.omega.map(|c| c.rho)),
                opt_num(p.omega.map(|c| c.p)),
                opt_num(p.zeta.map(|c| c.rho)),
                opt_num(p.zeta.map(|c| c.p)),
            ])?;
        }
        Ok(())
    })
}

fn write_summary_csv(path: &Path, summary: &ConditionSummary) -> Result<()> {
    let header = [
        "method",
        "parameter",
        "condition",
        "mean",
        "se",
        "n_participants",
        "t",
        "df",
        "p",
    ];
    csv_bytes(path, &header, |w| {
        for r in &summary.rows {
            for (cond, stat) in [("calm", r.calm), ("stressed", r.stressed)] {
                w.write_record([
                    r.method.to_string(),
                    r.parameter.as_str().to_string(),
                    cond.to_string(),
                    num(stat.mean),
                    num(stat.se),
                    r.n_participants.to_string(),
                    opt_num(r.test.map(|t| t.t)),
                    r.test.map(|t| t.df.to_string()).unwrap_or_default(),
                    opt_num(r.test.map(|t| t.p)),
                ])?;
            }
        }
        Ok(())
    })
}

pub fn cmd_classify(cfg: &PipelineConfig) -> Result<AccuracyReport> {
    let store = cmd_estimate(cfg)?;
    let report = run_experiment(&store.estimate_rows(), &cfg.classifier, cfg.seed)?;
    let available = report.cells.iter().filter(|c| c.accuracy.is_some()).count();
    if available == 0 {
        return Err(Error::InsufficientRows {
            available: 0,
            required: 1,
        });
    }
    write_json(&cfg.artifact(ACCURACY_JSON), &report)?;
    write_bytes(&cfg.artifact(ACCURACY_CSV), report.table_csv().as_bytes())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftwareInfo {
    pub name: String,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationSection {
    pub ingested_trials: usize,
    pub rejected_files: usize,
    pub lpc_successes: usize,
    pub msd_successes: usize,
    pub short_windows: usize,
    pub failures: FailureCounts,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub software: SoftwareInfo,
    pub config: PipelineConfig,
    pub estimation: EstimationSection,
    pub correlation: CorrelationArtifact,
    pub accuracy: AccuracyReport,
}

/// Merges the stored artifacts into one report plus plot-data tables.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<Report> {
    cfg.validate()?;
    let store: EstimateStore = read_json(&cfg.artifact(ESTIMATES_JSON))?;
    let correlation: CorrelationArtifact = read_json(&cfg.artifact(CORRELATION_JSON))?;
    let accuracy: AccuracyReport = read_json(&cfg.artifact(ACCURACY_JSON))?;
    let report = Report {
        software: SoftwareInfo {
            name: "stiffsense".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
        config: cfg.clone(),
        estimation: EstimationSection {
            ingested_trials: store.ingested_trials,
            rejected_files: store.rejected_files,
            lpc_successes: store.successes(Method::Lpc),
            msd_successes: store.successes(Method::Msd),
            short_windows: store.entries.iter().filter(|e| e.short_window).count(),
            failures: store.failures.clone(),
            config_hash: store.config_hash.clone(),
        },
        correlation,
        accuracy,
    };
    write_json(&cfg.artifact(REPORT_JSON), &report)?;
    write_curve_csv(&cfg.artifact(PLOT_CORRELATION_CSV), &report.correlation.curve)?;
    csv_bytes(
        &cfg.artifact(PLOT_ACCURACY_CSV),
        &["distance", "method", "features", "mean", "se", "n_cells"],
        |w| {
            for row in &report.accuracy.aggregates {
                let distance = row.distance_px.map_or("overall".to_string(), |d| d.to_string());
                for (source, set) in VARIANTS {
                    let v = row.variants.iter().find(|v| v.source == source && v.set == set);
                    let acc = v.and_then(|v| v.accuracy);
                    w.write_record([
                        distance.clone(),
                        source.to_string(),
                        set.as_str().to_string(),
                        opt_num(acc.map(|a| a.mean)),
                        opt_num(acc.map(|a| a.se)),
                        v.map_or(0, |v| v.n_cells).to_string(),
                    ])?;
                }
            }
            Ok(())
        },
    )?;
    Ok(report)
}
