//! Trajectories, trial metadata, trial-file ingestion and preprocessing.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shortest trajectory an order-4 autocorrelation fit can use.
pub const MIN_SAMPLES: usize = 8;

pub const DISTANCES_PX: [u32; 5] = [64, 128, 256, 512, 1024];
pub const WIDTHS_PX: [u32; 4] = [8, 16, 32, 64];

/// Name of the ground-truth table written next to synthetic trial files.
/// `load_trials` skips it.
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

/// Movement window kept per target distance, in milliseconds.
pub fn window_cutoff_ms(distance_px: u32) -> Option<f64> {
    match distance_px {
        64 => Some(100.0),
        128 => Some(125.0),
        256 => Some(150.0),
        512 => Some(350.0),
        1024 => Some(500.0),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Calm,
    Stressed,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Calm => "calm",
            Condition::Stressed => "stressed",
        }
    }

    pub fn is_stressed(self) -> bool {
        self == Condition::Stressed
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "calm" => Ok(Condition::Calm),
            "stressed" => Ok(Condition::Stressed),
            other => Err(format!("expected `calm` or `stressed`, got `{other}`")),
        }
    }
}

/// What a position signal represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Actual,
    Simulated,
    Target,
}

/// Uniformly sampled x-axis position signal in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    samples: Vec<f64>,
    sample_rate_hz: f64,
    role: Role,
}

impl Trajectory {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64, role: Role) -> Result<Self> {
        if samples.len() < MIN_SAMPLES {
            return Err(Error::Domain(format!(
                "trajectory needs at least {MIN_SAMPLES} samples, got {}",
                samples.len()
            )));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Domain(format!(
                "sample rate must be positive and finite, got {sample_rate_hz}"
            )));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            role,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate_hz: self.sample_rate_hz,
            role: self.role,
        }
    }
}

/// Uniquely identifies a trial within a set.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrialKey {
    pub participant_id: String,
    pub distance_px: u32,
    pub width_px: u32,
    pub condition: Condition,
    pub repetition: u32,
}

impl fmt::Display for TrialKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}_{}_d{}_w{}_r{}",
            self.participant_id, self.condition, self.distance_px, self.width_px, self.repetition
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub participant_id: String,
    pub distance_px: u32,
    pub width_px: u32,
    pub condition: Condition,
    pub repetition: u32,
    /// Step origin; `None` when the source did not record it.
    pub start_x_px: Option<f64>,
    /// Step destination; `None` when the source did not record it.
    pub target_x_px: Option<f64>,
}

impl TrialMeta {
    pub fn key(&self) -> TrialKey {
        TrialKey {
            participant_id: self.participant_id.clone(),
            distance_px: self.distance_px,
            width_px: self.width_px,
            condition: self.condition,
            repetition: self.repetition,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.participant_id.is_empty() || self.participant_id.contains(['\n', '\r']) {
            return Err(Error::InvalidTrial(format!(
                "participant id {:?} must be a non-empty single line",
                self.participant_id
            )));
        }
        if !DISTANCES_PX.contains(&self.distance_px) {
            return Err(Error::InvalidTrial(format!(
                "distance_px {} not in {DISTANCES_PX:?}",
                self.distance_px
            )));
        }
        if !WIDTHS_PX.contains(&self.width_px) {
            return Err(Error::InvalidTrial(format!(
                "width_px {} not in {WIDTHS_PX:?}",
                self.width_px
            )));
        }
        for (name, v) in [("start_x_px", self.start_x_px), ("target_x_px", self.target_x_px)] {
            if v.is_some_and(|v| !v.is_finite()) {
                return Err(Error::InvalidTrial(format!("{name} is not finite")));
            }
        }
        if let (Some(start), Some(target)) = (self.start_x_px, self.target_x_px) {
            let span = (target - start).abs();
            if (span - f64::from(self.distance_px)).abs() > 1.0 {
                return Err(Error::InvalidTrial(format!(
                    "|target_x_px - start_x_px| = {span} does not match distance_px {}",
                    self.distance_px
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub meta: TrialMeta,
    pub trajectory: Trajectory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Ingested,
    Synthetic,
}

/// Trials sorted by key, keys unique.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSet {
    trials: Vec<Trial>,
    provenance: Provenance,
}

impl TrialSet {
    pub fn new(mut trials: Vec<Trial>, provenance: Provenance) -> Result<Self> {
        for t in &trials {
            t.meta.validate()?;
        }
        trials.sort_by_cached_key(|t| t.meta.key());
        for pair in trials.windows(2) {
            if pair[0].meta.key() == pair[1].meta.key() {
                return Err(Error::DuplicateTrial(pair[0].meta.key().to_string()));
            }
        }
        Ok(Self { trials, provenance })
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn into_trials(self) -> Vec<Trial> {
        self.trials
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn participants(&self) -> BTreeSet<&str> {
        self.trials
            .iter()
            .map(|t| t.meta.participant_id.as_str())
            .collect()
    }
}

/// Outcome of ingesting a directory: the parsed set plus per-file rejections.
#[derive(Debug)]
pub struct LoadReport {
    pub set: TrialSet,
    pub rejected: Vec<(PathBuf, Error)>,
}

/// Parses one trial file.
pub fn read_trial_file(path: &Path) -> Result<Trial> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trial(&text, path)
}

fn parse_trial(text: &str, path: &Path) -> Result<Trial> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut fields: Vec<(&str, &str, usize)> = Vec::new();
    let mut samples = Vec::new();
    let mut seen_column = false;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if seen_column {
                return Err(parse_err(lineno, "header line after sample data".into()));
            }
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| parse_err(lineno, format!("expected `# key=value`, got `{line}`")))?;
            let k = k.trim();
            if fields.iter().any(|(seen, _, _)| *seen == k) {
                return Err(parse_err(lineno, format!("repeated header field `{k}`")));
            }
            fields.push((k, v.trim(), lineno));
        } else if !seen_column {
            if line != "x_px" {
                return Err(parse_err(lineno, format!("expected column header `x_px`, got `{line}`")));
            }
            seen_column = true;
        } else {
            let x: f64 = line
                .parse()
                .map_err(|_| parse_err(lineno, format!("malformed sample `{line}`")))?;
            if !x.is_finite() {
                return Err(parse_err(lineno, format!("non-finite sample `{line}`")));
            }
            samples.push(x);
        }
    }
    if !seen_column {
        return Err(Error::MissingField {
            path: path.to_path_buf(),
            field: "x_px".into(),
        });
    }

    let lookup = |name: &str| fields.iter().find(|(k, _, _)| *k == name).map(|&(_, v, l)| (v, l));
    let required = |name: &str| {
        lookup(name).ok_or_else(|| Error::MissingField {
            path: path.to_path_buf(),
            field: name.to_string(),
        })
    };
    fn typed<T: std::str::FromStr>(
        (v, line): (&str, usize),
        name: &str,
        err: &dyn Fn(usize, String) -> Error,
    ) -> Result<T> {
        v.parse()
            .map_err(|_| err(line, format!("field `{name}`: cannot parse `{v}`")))
    }

    let participant_id = required("participant")?.0.to_string();
    let distance_px: u32 = typed(required("distance_px")?, "distance_px", &parse_err)?;
    let width_px: u32 = typed(required("width_px")?, "width_px", &parse_err)?;
    let (cond, cond_line) = required("condition")?;
    let condition: Condition = cond.parse().map_err(|e| parse_err(cond_line, e))?;
    let repetition: u32 = typed(required("repetition")?, "repetition", &parse_err)?;
    let sample_rate_hz: f64 = typed(required("sample_rate_hz")?, "sample_rate_hz", &parse_err)?;
    let start_x_px: Option<f64> = lookup("start_x_px")
        .map(|f| typed(f, "start_x_px", &parse_err))
        .transpose()?;
    let target_x_px: Option<f64> = lookup("target_x_px")
        .map(|f| typed(f, "target_x_px", &parse_err))
        .transpose()?;

    let meta = TrialMeta {
        participant_id,
        distance_px,
        width_px,
        condition,
        repetition,
        start_x_px,
        target_x_px,
    };
    let context = |e: Error| Error::InvalidTrial(format!("{}: {e}", path.display()));
    meta.validate().map_err(context)?;
    let trajectory = Trajectory::new(samples, sample_rate_hz, Role::Actual).map_err(context)?;
    Ok(Trial { meta, trajectory })
}

/// Renders a trial in the ingest format.
pub fn format_trial(trial: &Trial) -> String {
    let m = &trial.meta;
    let mut out = String::with_capacity(trial.trajectory.len() * 12 + 256);
    out.push_str(&format!("# participant={}\n", m.participant_id));
    out.push_str(&format!("# distance_px={}\n", m.distance_px));
    out.push_str(&format!("# width_px={}\n", m.width_px));
    out.push_str(&format!("# condition={}\n", m.condition));
    out.push_str(&format!("# repetition={}\n", m.repetition));
    out.push_str(&format!("# sample_rate_hz={}\n", trial.trajectory.sample_rate_hz()));
    if let Some(v) = m.start_x_px {
        out.push_str(&format!("# start_x_px={v}\n"));
    }
    if let Some(v) = m.target_x_px {
        out.push_str(&format!("# target_x_px={v}\n"));
    }
    out.push_str("x_px\n");
    for x in trial.trajectory.samples() {
        out.push_str(&format!("{x}\n"));
    }
    out
}

pub fn write_trial_file(path: &Path, trial: &Trial) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(format_trial(trial).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// File name used when exporting a trial.
pub fn trial_file_name(key: &TrialKey) -> String {
    let safe: String = key
        .to_string()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.csv")
}

/// Ingests every `*.csv` trial file in `dir`.
///
/// Files that fail to parse are reported in [`LoadReport::rejected`]; a
/// duplicate trial key rejects the whole set. When nothing parses, the first
/// rejection is returned as the error.
pub fn load_trials(dir: &Path) -> Result<LoadReport> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_csv = path.extension().is_some_and(|e| e == "csv");
        let is_truth = path.file_name().is_some_and(|n| n == GROUND_TRUTH_FILE);
        if path.is_file() && is_csv && !is_truth {
            paths.push(path);
        }
    }
    paths.sort();

    let mut trials = Vec::with_capacity(paths.len());
    let mut rejected = Vec::new();
    for path in paths {
        match read_trial_file(&path) {
            Ok(t) => trials.push(t),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                rejected.push((path, e));
            }
        }
    }
    if trials.is_empty() {
        return Err(match rejected.into_iter().next() {
            Some((_, e)) => e,
            None => Error::EmptySet(dir.to_path_buf()),
        });
    }
    let set = TrialSet::new(trials, Provenance::Ingested)?;
    Ok(LoadReport { set, rejected })
}

/// Second-order IIR section in transposed direct form II.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    /// Denominator `[1, a1, a2]`, leading one omitted.
    pub a: [f64; 2],
}

impl Biquad {
    /// Second-order Butterworth low-pass via the bilinear transform with
    /// frequency prewarping.
    pub fn butterworth_lowpass(cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        let nyquist = sample_rate_hz / 2.0;
        if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
            return Err(Error::Domain(format!(
                "cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz"
            )));
        }
        let k = (std::f64::consts::PI * cutoff_hz / sample_rate_hz).tan();
        let k2 = k * k;
        let sqrt2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + sqrt2 * k + k2);
        let b0 = k2 * norm;
        Ok(Self {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k2 - 1.0) * norm, (1.0 - sqrt2 * k + k2) * norm],
        })
    }

    /// Filter state that makes a constant input `x0` pass without transient.
    fn steady_state(&self, x0: f64) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let dc = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let s2 = b2 - a2 * dc;
        let s1 = b1 - a1 * dc + s2;
        [s1 * x0, s2 * x0]
    }

    fn run(&self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let [mut s1, mut s2] = self.steady_state(first);
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + s1;
            s1 = b1 * input - a1 * y + s2;
            s2 = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Filter order of the smoothing Butterworth section.
const SMOOTHING_ORDER: usize = 2;

/// Zero-phase low-pass smoothing: a second-order Butterworth run forward and
/// backward over an odd-reflected extension of `3 × order` samples per side.
pub fn smooth(t: &Trajectory, cutoff_hz: f64) -> Result<Trajectory> {
    let filter = Biquad::butterworth_lowpass(cutoff_hz, t.sample_rate_hz())?;
    let x = t.samples();
    let n = x.len();
    let pad = (3 * SMOOTHING_ORDER).min(n - 1);

    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    filter.run(&mut ext);
    ext.reverse();
    filter.run(&mut ext);
    ext.reverse();

    Ok(t.with_samples(ext[pad..pad + n].to_vec()))
}

/// Result of [`truncate_window`].
#[derive(Clone, Debug, PartialEq)]
pub struct Windowed {
    pub trajectory: Trajectory,
    /// Set when the trajectory was shorter than the distance's cutoff and was
    /// kept whole.
    pub short: bool,
}

/// Keeps the prefix of a trial up to the cutoff time for its distance.
pub fn truncate_window(t: &Trajectory, meta: &TrialMeta) -> Result<Windowed> {
    let cutoff_ms = window_cutoff_ms(meta.distance_px).ok_or_else(|| {
        Error::InvalidTrial(format!("no window cutoff for distance {}", meta.distance_px))
    })?;
    let keep = (cutoff_ms * t.sample_rate_hz() / 1000.0).round() as usize;
    if t.len() < keep {
        log::warn!(
            "{}: {:.1} ms trajectory shorter than the {cutoff_ms} ms window; kept whole",
            meta.key(),
            t.duration_s() * 1000.0
        );
        return Ok(Windowed {
            trajectory: t.clone(),
            short: true,
        });
    }
    // A window below the trajectory minimum would only happen at very low
    // sample rates; keep the minimum instead.
    let keep = keep.max(MIN_SAMPLES);
    Ok(Windowed {
        trajectory: t.with_samples(t.samples()[..keep].to_vec()),
        short: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn traj(samples: Vec<f64>) -> Trajectory {
        Trajectory::new(samples, 2000.0, Role::Actual).unwrap()
    }

    fn meta(distance_px: u32) -> TrialMeta {
        TrialMeta {
            participant_id: "p01".into(),
            distance_px,
            width_px: 16,
            condition: Condition::Calm,
            repetition: 0,
            start_x_px: Some(100.0),
            target_x_px: Some(100.0 + f64::from(distance_px)),
        }
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// |H(e^{jw})|^2 of a biquad evaluated directly from its coefficients.
    fn power_gain(f: &Biquad, freq_hz: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / fs;
        let eval = |c: [f64; 3]| {
            let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
            let im = -c[1] * w.sin() - c[2] * (2.0 * w).sin();
            re * re + im * im
        };
        eval(f.b) / eval([1.0, f.a[0], f.a[1]])
    }

    #[test]
    fn trajectory_invariants() {
        assert!(Trajectory::new(vec![0.0; 7], 2000.0, Role::Actual).is_err());
        assert!(Trajectory::new(vec![0.0; 8], 0.0, Role::Actual).is_err());
        assert!(Trajectory::new(vec![f64::NAN; 8], 2000.0, Role::Actual).is_err());
        assert!(Trajectory::new(vec![0.0; 8], 2000.0, Role::Actual).is_ok());
    }

    #[test]
    fn meta_span_must_match_distance() {
        let mut m = meta(256);
        assert!(m.validate().is_ok());
        m.target_x_px = Some(100.0 + 258.0);
        assert!(m.validate().is_err());
        m.target_x_px = None;
        assert!(m.validate().is_ok());
        m.distance_px = 100;
        assert!(m.validate().is_err());
    }

    #[test]
    fn smoothing_keeps_constants() {
        let t = traj(vec![42.5; 300]);
        let s = smooth(&t, 10.0).unwrap();
        assert_eq!(s.len(), 300);
        for v in s.samples() {
            assert!((v - 42.5).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn smoothing_passband_matches_analytic_gain() {
        let fs = 2000.0;
        let x: Vec<f64> = (0..6000).map(|i| (2.0 * PI * i as f64 / fs).sin()).collect();
        let s = smooth(&traj(x.clone()), 10.0).unwrap();
        let filter = Biquad::butterworth_lowpass(10.0, fs).unwrap();
        let expected = power_gain(&filter, 1.0, fs);
        // Middle two periods, away from the edges.
        let mid = 2000..4000;
        let ratio = rms(&s.samples()[mid.clone()]) / rms(&x[mid]);
        assert!((ratio - expected).abs() < 0.01, "{ratio} vs {expected}");
        assert!((ratio - 1.0).abs() < 0.01);
    }

    #[test]
    fn smoothing_stopband_attenuates() {
        let fs = 2000.0;
        let x: Vec<f64> = (0..2000).map(|i| (2.0 * PI * 500.0 * i as f64 / fs).sin()).collect();
        let s = smooth(&traj(x.clone()), 10.0).unwrap();
        let filter = Biquad::butterworth_lowpass(10.0, fs).unwrap();
        assert!(power_gain(&filter, 500.0, fs) < 1e-6);
        assert!(rms(s.samples()) < 0.01 * rms(&x));
    }

    #[test]
    fn smoothing_rejects_cutoff_above_nyquist() {
        let t = traj(vec![0.0; 16]);
        assert!(matches!(smooth(&t, 1000.0), Err(Error::Domain(_))));
        assert!(matches!(smooth(&t, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn smoothing_is_nearly_idempotent_on_band_limited_signals() {
        let fs = 2000.0;
        let x: Vec<f64> = (0..4000)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * PI * 0.7 * t).sin() + 0.5 * (2.0 * PI * 1.3 * t).cos()
            })
            .collect();
        let once = smooth(&traj(x), 10.0).unwrap();
        let twice = smooth(&once, 10.0).unwrap();
        let diff: Vec<f64> = once
            .samples()
            .iter()
            .zip(twice.samples())
            .map(|(a, b)| a - b)
            .collect();
        assert!(rms(&diff) < 0.01 * rms(once.samples()));
    }

    #[test]
    fn window_cutoffs() {
        // 1000 ms at distance 1024 keeps 500 ms.
        let w = truncate_window(&traj(vec![1.0; 2000]), &meta(1024)).unwrap();
        assert_eq!(w.trajectory.len(), 1000);
        assert!(!w.short);
        // Exactly at the cutoff.
        let w = truncate_window(&traj(vec![1.0; 200]), &meta(64)).unwrap();
        assert_eq!(w.trajectory.len(), 200);
        assert!(!w.short);
        // Shorter: kept and flagged.
        let w = truncate_window(&traj(vec![1.0; 160]), &meta(64)).unwrap();
        assert_eq!(w.trajectory.len(), 160);
        assert!(w.short);
    }

    #[test]
    fn window_is_idempotent() {
        for d in DISTANCES_PX {
            let t = traj((0..3000).map(f64::from).collect());
            let once = truncate_window(&t, &meta(d)).unwrap().trajectory;
            let twice = truncate_window(&once, &meta(d)).unwrap().trajectory;
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn parse_reports_missing_sample_rate() {
        let text = "# participant=p1\n# distance_px=64\n# width_px=8\n# condition=calm\n# repetition=0\nx_px\n1\n2\n3\n4\n5\n6\n7\n8\n";
        let err = parse_trial(text, Path::new("t.csv")).unwrap_err();
        match err {
            Error::MissingField { field, .. } => assert_eq!(field, "sample_rate_hz"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn parse_reports_line_of_malformed_sample() {
        let text = "# participant=p1\n# distance_px=64\n# width_px=8\n# condition=calm\n# repetition=0\n# sample_rate_hz=2000\nx_px\n1\n2\nabc\n";
        match parse_trial(text, Path::new("t.csv")).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 10),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn format_then_parse_is_identity() {
        let trial = Trial {
            meta: meta(128),
            trajectory: traj((0..50).map(|i| 100.0 + (i as f64).sqrt() * 0.1).collect()),
        };
        let back = parse_trial(&format_trial(&trial), Path::new("x.csv")).unwrap();
        assert_eq!(back, trial);
    }

    #[test]
    fn duplicate_keys_reject_the_set() {
        let trial = Trial {
            meta: meta(64),
            trajectory: traj(vec![0.0; 8]),
        };
        let err = TrialSet::new(vec![trial.clone(), trial], Provenance::Ingested).unwrap_err();
        assert!(matches!(err, Error::DuplicateTrial(_)));
    }
}
