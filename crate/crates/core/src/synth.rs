//! Ground-truth-known synthetic trial sets.
//!
//! Each participant gets a persistent offset per parameter (shared across
//! conditions), each condition shifts the population mean, and each trial
//! scatters around the participant's condition mean. Trajectories are exact
//! step responses plus white Gaussian noise scaled to the configured SNR.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msd::{step_response_samples, MsdCanonicalParams};
use crate::seed;
use crate::signal::{
    trial_file_name, write_trial_file, Condition, Provenance, Role, Trajectory, Trial, TrialKey,
    TrialMeta, TrialSet, DISTANCES_PX, GROUND_TRUTH_FILE, MIN_SAMPLES, WIDTHS_PX,
};

/// Population means of one condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionMeans {
    pub omega: f64,
    pub zeta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DurationModel {
    pub base_ms: f64,
    /// Added per doubling of distance above the smallest one (64 px).
    pub per_doubling_ms: f64,
    /// Uniform multiplicative jitter, `±jitter_fraction`.
    pub jitter_fraction: f64,
}

impl Default for DurationModel {
    fn default() -> Self {
        Self {
            base_ms: 150.0,
            per_doubling_ms: 90.0,
            jitter_fraction: 0.10,
        }
    }
}

impl DurationModel {
    pub fn nominal_ms(&self, distance_px: u32) -> f64 {
        self.base_ms + self.per_doubling_ms * (f64::from(distance_px) / 64.0).log2()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_participants: usize,
    /// Repetitions per condition per (distance, width).
    pub repetitions: u32,
    pub distances_px: Vec<u32>,
    pub widths_px: Vec<u32>,
    pub calm: ConditionMeans,
    pub stressed: ConditionMeans,
    pub omega_between_sd: f64,
    pub omega_within_sd: f64,
    pub zeta_between_sd: f64,
    pub zeta_within_sd: f64,
    pub kp_mean: f64,
    pub kp_sd: f64,
    /// Multiplier of the stressed-minus-calm mean shift per distance;
    /// distances not listed use 1.
    pub separation_by_distance: BTreeMap<u32, f64>,
    pub snr_db: f64,
    pub duration: DurationModel,
    pub sample_rate_hz: f64,
    pub start_x_px: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_participants: 49,
            repetitions: 5,
            distances_px: DISTANCES_PX.to_vec(),
            widths_px: WIDTHS_PX.to_vec(),
            calm: ConditionMeans {
                omega: 12.9,
                zeta: 1.00,
            },
            stressed: ConditionMeans {
                omega: 14.4,
                zeta: 0.97,
            },
            omega_between_sd: 3.0,
            omega_within_sd: 1.5,
            zeta_between_sd: 0.2,
            zeta_within_sd: 0.1,
            kp_mean: 1.0,
            kp_sd: 0.05,
            separation_by_distance: BTreeMap::new(),
            snr_db: 25.0,
            duration: DurationModel::default(),
            sample_rate_hz: 2000.0,
            start_x_px: 100.0,
            seed: 42,
        }
    }
}

/// Smallest parameter values a draw is clamped to.
const MIN_OMEGA: f64 = 1.0;
const MIN_ZETA: f64 = 0.05;
const MIN_KP: f64 = 0.1;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_participants == 0 {
            return Err(Error::config("synth.n_participants", "must be at least 1"));
        }
        if self.repetitions == 0 {
            return Err(Error::config("synth.repetitions", "must be at least 1"));
        }
        if self.distances_px.is_empty() || self.distances_px.iter().any(|d| !DISTANCES_PX.contains(d)) {
            return Err(Error::config("synth.distances_px", format!("must be a non-empty subset of {DISTANCES_PX:?}")));
        }
        if self.widths_px.is_empty() || self.widths_px.iter().any(|w| !WIDTHS_PX.contains(w)) {
            return Err(Error::config("synth.widths_px", format!("must be a non-empty subset of {WIDTHS_PX:?}")));
        }
        let mut seen = self.distances_px.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.distances_px.len() {
            return Err(Error::config("synth.distances_px", "contains duplicates"));
        }
        let mut seen = self.widths_px.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.widths_px.len() {
            return Err(Error::config("synth.widths_px", "contains duplicates"));
        }
        for (name, v) in [
            ("synth.calm.omega", self.calm.omega),
            ("synth.stressed.omega", self.stressed.omega),
            ("synth.calm.zeta", self.calm.zeta),
            ("synth.stressed.zeta", self.stressed.zeta),
            ("synth.kp_mean", self.kp_mean),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be positive and finite"));
            }
        }
        for (name, v) in [
            ("synth.omega_between_sd", self.omega_between_sd),
            ("synth.omega_within_sd", self.omega_within_sd),
            ("synth.zeta_between_sd", self.zeta_between_sd),
            ("synth.zeta_within_sd", self.zeta_within_sd),
            ("synth.kp_sd", self.kp_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be non-negative and finite"));
            }
        }
        for (d, s) in &self.separation_by_distance {
            if !DISTANCES_PX.contains(d) || !s.is_finite() {
                return Err(Error::config("synth.separation_by_distance", format!("bad entry {d}: {s}")));
            }
        }
        if !self.snr_db.is_finite() && self.snr_db != f64::INFINITY {
            return Err(Error::config("synth.snr_db", "must be finite (or +inf for noiseless)"));
        }
        let dm = &self.duration;
        if !(dm.base_ms > 0.0 && dm.per_doubling_ms >= 0.0 && (0.0..1.0).contains(&dm.jitter_fraction)) {
            return Err(Error::config("synth.duration", "needs base_ms > 0, per_doubling_ms ≥ 0, 0 ≤ jitter < 1"));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::config("synth.sample_rate_hz", "must be positive"));
        }
        if !self.start_x_px.is_finite() {
            return Err(Error::config("synth.start_x_px", "must be finite"));
        }
        Ok(())
    }

    fn separation(&self, distance_px: u32) -> f64 {
        self.separation_by_distance.get(&distance_px).copied().unwrap_or(1.0)
    }

    fn participant_id(&self, index: usize) -> String {
        let width = self.n_participants.to_string().len().max(2);
        format!("p{:0width$}", index + 1)
    }
}

/// True parameters behind every generated trial.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub params: BTreeMap<TrialKey, MsdCanonicalParams>,
}

impl GroundTruth {
    pub fn get(&self, key: &TrialKey) -> Option<&MsdCanonicalParams> {
        self.params.get(key)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// Participant-level standard-normal offsets, shared across conditions.
struct ParticipantEffects {
    omega: f64,
    zeta: f64,
}

/// Adds white Gaussian noise whose power is exactly the mean-removed power of
/// `clean` divided by `10^(snr_db/10)`.
pub fn add_noise<R: Rng + ?Sized>(clean: &[f64], snr_db: f64, rng: &mut R) -> Vec<f64> {
    if snr_db == f64::INFINITY || clean.is_empty() {
        return clean.to_vec();
    }
    let n = clean.len() as f64;
    let mean = clean.iter().sum::<f64>() / n;
    let signal_power = clean.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let target_power = signal_power / 10f64.powf(snr_db / 10.0);
    let raw: Vec<f64> = clean.iter().map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let raw_power = raw.iter().map(|e| e * e).sum::<f64>() / n;
    let scale = if raw_power > 0.0 {
        (target_power / raw_power).sqrt()
    } else {
        0.0
    };
    clean.iter().zip(&raw).map(|(c, e)| c + scale * e).collect()
}

/// Realized SNR in dB of `noisy` against its noiseless reference.
pub fn realized_snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let n = clean.len() as f64;
    let mean = clean.iter().sum::<f64>() / n;
    let signal = clean.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let noise = clean.iter().zip(noisy).map(|(c, y)| (y - c).powi(2)).sum::<f64>() / n;
    10.0 * (signal / noise).log10()
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("sd validated as finite and non-negative")
}

/// Generates the trial set and its ground truth. Deterministic in `config`.
pub fn generate(config: &SynthConfig) -> Result<(TrialSet, GroundTruth)> {
    config.validate()?;

    let effects: Vec<ParticipantEffects> = (0..config.n_participants)
        .map(|p| {
            let mut rng = seed::stream(config.seed, &format!("participant/{}", config.participant_id(p)));
            ParticipantEffects {
                omega: rng.sample(StandardNormal),
                zeta: rng.sample(StandardNormal),
            }
        })
        .collect();

    let mut jobs = Vec::new();
    for p in 0..config.n_participants {
        for &distance_px in &config.distances_px {
            for &width_px in &config.widths_px {
                for condition in [Condition::Calm, Condition::Stressed] {
                    for repetition in 0..config.repetitions {
                        jobs.push((p, distance_px, width_px, condition, repetition));
                    }
                }
            }
        }
    }

    let generated: Vec<(Trial, MsdCanonicalParams)> = jobs
        .into_par_iter()
        .map(|(p, distance_px, width_px, condition, repetition)| {
            let meta = TrialMeta {
                participant_id: config.participant_id(p),
                distance_px,
                width_px,
                condition,
                repetition,
                start_x_px: Some(config.start_x_px),
                target_x_px: Some(config.start_x_px + f64::from(distance_px)),
            };
            generate_trial(config, &effects[p], meta)
        })
        .collect::<Result<_>>()?;

    let mut truth = GroundTruth::default();
    let mut trials = Vec::with_capacity(generated.len());
    for (trial, params) in generated {
        truth.params.insert(trial.meta.key(), params);
        trials.push(trial);
    }
    Ok((TrialSet::new(trials, Provenance::Synthetic)?, truth))
}

fn generate_trial(
    config: &SynthConfig,
    effects: &ParticipantEffects,
    meta: TrialMeta,
) -> Result<(Trial, MsdCanonicalParams)> {
    let key = meta.key();
    let mut rng = seed::stream(config.seed, &format!("trial/{key}"));

    let shift = match meta.condition {
        Condition::Calm => 0.0,
        Condition::Stressed => config.separation(meta.distance_px),
    };
    let omega_mean = config.calm.omega
        + shift * (config.stressed.omega - config.calm.omega)
        + config.omega_between_sd * effects.omega;
    let zeta_mean = config.calm.zeta
        + shift * (config.stressed.zeta - config.calm.zeta)
        + config.zeta_between_sd * effects.zeta;

    let omega = normal(omega_mean, config.omega_within_sd).sample(&mut rng).max(MIN_OMEGA);
    let zeta = normal(zeta_mean, config.zeta_within_sd).sample(&mut rng).max(MIN_ZETA);
    let kp = normal(config.kp_mean, config.kp_sd).sample(&mut rng).max(MIN_KP);
    let params = MsdCanonicalParams::new(kp, omega, zeta)?;

    let jitter = 1.0 + config.duration.jitter_fraction * rng.random_range(-1.0..=1.0);
    let duration_ms = config.duration.nominal_ms(meta.distance_px) * jitter;
    let n = ((duration_ms * config.sample_rate_hz / 1000.0).round() as usize).max(MIN_SAMPLES);

    let start = meta.start_x_px.unwrap_or(config.start_x_px);
    let target = meta.target_x_px.unwrap_or(start + f64::from(meta.distance_px));
    let clean = step_response_samples(&params, start, target, n, config.sample_rate_hz)?;
    let noisy = add_noise(&clean, config.snr_db, &mut rng);
    let trajectory = Trajectory::new(noisy, config.sample_rate_hz, Role::Actual)?;
    Ok((Trial { meta, trajectory }, params))
}

/// Writes one ingest-format CSV per trial plus the ground-truth table.
pub fn export(set: &TrialSet, truth: &GroundTruth, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    set.trials()
        .par_iter()
        .try_for_each(|t| write_trial_file(&dir.join(trial_file_name(&t.meta.key())), t))?;

    let path = dir.join(GROUND_TRUTH_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Csv { path: path.clone(), source: e })?;
    let csv_err = |e| Error::Csv { path: path.clone(), source: e };
    w.write_record(["trial_key", "kp", "omega", "zeta"]).map_err(csv_err)?;
    for (key, p) in &truth.params {
        w.write_record([key.to_string(), p.kp.to_string(), p.omega.to_string(), p.zeta.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Reads a ground-truth table back, matching rows to `set` by key string.
pub fn read_ground_truth(path: &Path, set: &TrialSet) -> Result<GroundTruth> {
    let by_name: BTreeMap<String, TrialKey> = set
        .trials()
        .iter()
        .map(|t| (t.meta.key().to_string(), t.meta.key()))
        .collect();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Csv { path: path.into(), source: e })?;
    let mut truth = GroundTruth::default();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| Error::Csv { path: path.into(), source: e })?;
        let parse_err = |message: String| Error::Parse { path: path.into(), line: i + 2, message };
        let name = row.get(0).unwrap_or_default();
        let key = by_name
            .get(name)
            .ok_or_else(|| parse_err(format!("unknown trial key `{name}`")))?;
        let num = |j: usize| -> Result<f64> {
            row.get(j)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parse_err(format!("bad number in column {j}")))
        };
        truth.params.insert(key.clone(), MsdCanonicalParams::new(num(1)?, num(2)?, num(3)?)?);
    }
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_participants: 3,
            repetitions: 2,
            distances_px: vec![64, 1024],
            widths_px: vec![8],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn default_config_counts() {
        let c = SynthConfig::default();
        let n = c.n_participants * c.distances_px.len() * c.widths_px.len() * 2 * c.repetitions as usize;
        assert_eq!(n, 9800);
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, ta) = generate(&small()).unwrap();
        let (b, tb) = generate(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(a.len(), 3 * 2 * 2 * 2);
        assert_eq!(ta.len(), a.len());
    }

    #[test]
    fn noiseless_trial_is_the_closed_form() {
        let config = SynthConfig {
            n_participants: 1,
            repetitions: 1,
            distances_px: vec![256],
            widths_px: vec![16],
            snr_db: f64::INFINITY,
            ..SynthConfig::default()
        };
        let (set, truth) = generate(&config).unwrap();
        for t in set.trials() {
            let p = truth.get(&t.meta.key()).unwrap();
            let expected = step_response_samples(p, 100.0, 356.0, t.trajectory.len(), 2000.0).unwrap();
            assert_eq!(t.trajectory.samples(), expected.as_slice());
        }
    }

    #[test]
    fn realized_snr_matches_config() {
        let (set, truth) = generate(&small()).unwrap();
        for t in set.trials() {
            let p = truth.get(&t.meta.key()).unwrap();
            let clean = step_response_samples(
                p,
                t.meta.start_x_px.unwrap(),
                t.meta.target_x_px.unwrap(),
                t.trajectory.len(),
                2000.0,
            )
            .unwrap();
            let snr = realized_snr_db(&clean, t.trajectory.samples());
            assert!((snr - 25.0).abs() < 1.0, "{snr}");
        }
    }

    #[test]
    fn durations_grow_with_distance() {
        let d = DurationModel::default();
        let nominal: Vec<f64> = DISTANCES_PX.iter().map(|&px| d.nominal_ms(px)).collect();
        assert!(nominal.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(nominal[0], 150.0);
        assert_eq!(nominal[4], 150.0 + 4.0 * 90.0);
    }

    #[test]
    fn invalid_fields_are_named() {
        let bad = SynthConfig {
            omega_within_sd: -1.0,
            ..SynthConfig::default()
        };
        match generate(&bad).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "synth.omega_within_sd"),
            other => panic!("{other}"),
        }
    }
}
