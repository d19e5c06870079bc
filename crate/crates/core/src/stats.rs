//! Rank correlation, GOF threshold sweeps, paired t-tests, KS normality and
//! per-condition summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::lpc::{DampingEstimate, Method};
use crate::msd::{is_outlier, MsdFit};
use crate::signal::{Condition, TrialKey};

/// Fractional ranks starting at 1; tied values share the mean of their
/// positions.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean((i+1)..=j)
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            out[k] = rank;
        }
        i = j;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    /// Two-sided p from the t approximation with n - 2 degrees of freedom.
    pub p: f64,
    pub n: usize,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Domain(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::Domain(format!("need at least 3 pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value".into()));
    }
    Ok(())
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y)?;
    let rho = pearson(&ranks(x), &ranks(y)).ok_or(Error::UndefinedCorrelation)?;
    let n = x.len();
    let df = (n - 2) as f64;
    let p = if 1.0 - rho.abs() < 1e-15 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        two_sided_t(t, df)
    };
    Ok(Correlation { rho, p, n })
}

/// Exact two-sided permutation p-value for Spearman's rho, enumerating every
/// rearrangement of `y`. Limited to `n ≤ 10`.
pub fn spearman_exact_p(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    if x.len() > 10 {
        return Err(Error::Domain("exact permutation p is limited to n <= 10".into()));
    }
    let rx = ranks(x);
    let mut ry = ranks(y);
    let observed = pearson(&rx, &ry).ok_or(Error::UndefinedCorrelation)?.abs();
    let (mut hits, mut total) = (0u64, 0u64);
    let mut visit = |perm: &[f64]| {
        total += 1;
        if pearson(&rx, perm).is_some_and(|r| r.abs() >= observed - 1e-12) {
            hits += 1;
        }
    };
    // Heap's algorithm, iterative form.
    let n = ry.len();
    let mut c = vec![0usize; n];
    visit(&ry);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                ry.swap(0, i);
            } else {
                ry.swap(c[i], i);
            }
            visit(&ry);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

fn two_sided_t(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// One trial where both estimators succeeded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub key: TrialKey,
    pub lpc: DampingEstimate,
    pub msd: MsdFit,
}

/// Jointly successful rows with MSD outliers removed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairedEstimates {
    rows: Vec<PairedRow>,
}

impl PairedEstimates {
    /// Keeps rows whose MSD estimate is not an outlier; returns the kept set
    /// and the number of rows dropped.
    pub fn new(rows: impl IntoIterator<Item = PairedRow>) -> (Self, usize) {
        let mut dropped = 0;
        let mut kept: Vec<PairedRow> = rows
            .into_iter()
            .filter(|r| {
                let keep = !is_outlier(&r.msd.estimate());
                dropped += usize::from(!keep);
                keep
            })
            .collect();
        kept.sort_by(|a, b| a.key.cmp(&b.key));
        (Self { rows: kept }, dropped)
    }

    pub fn rows(&self) -> &[PairedRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn default_thresholds() -> Vec<f64> {
    (0..20).map(|k| f64::from(k) * 5.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub n_rows: usize,
    pub retention_percent: f64,
    /// `None` when fewer than 3 rows remain or ranks are constant.
    pub omega: Option<Correlation>,
    pub zeta: Option<Correlation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub total_rows: usize,
    pub points: Vec<CurvePoint>,
}

/// Correlates LPC against MSD estimates among rows whose GOF reaches each
/// threshold. Thresholds are visited in ascending order.
pub fn threshold_sweep(pairs: &PairedEstimates, thresholds: &[f64]) -> Result<CorrelationCurve> {
    if pairs.is_empty() {
        return Err(Error::InsufficientRows {
            available: 0,
            required: 1,
        });
    }
    if thresholds.iter().any(|t| !t.is_finite()) {
        return Err(Error::Domain("thresholds must be finite".into()));
    }
    let mut sorted = thresholds.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let total = pairs.len();
    let points = sorted
        .into_iter()
        .map(|threshold| {
            let kept: Vec<&PairedRow> = pairs
                .rows()
                .iter()
                .filter(|r| r.msd.gof_percent >= threshold)
                .collect();
            let corr = |lpc: fn(&PairedRow) -> f64, msd: fn(&PairedRow) -> f64| {
                let x: Vec<f64> = kept.iter().map(|r| lpc(r)).collect();
                let y: Vec<f64> = kept.iter().map(|r| msd(r)).collect();
                spearman(&x, &y).ok()
            };
            CurvePoint {
                threshold,
                n_rows: kept.len(),
                retention_percent: 100.0 * kept.len() as f64 / total as f64,
                omega: corr(|r| r.lpc.omega, |r| r.msd.params.omega),
                zeta: corr(|r| r.lpc.zeta, |r| r.msd.params.zeta),
            }
        })
        .collect();
    Ok(CorrelationCurve {
        total_rows: total,
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub mean_difference: f64,
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Paired two-sided t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Domain("paired t-test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value".into()));
    }
    let (mean, sd) = mean_sd(&d);
    let scale = d.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if sd <= 1e-12 * scale {
        return Err(Error::DegenerateTest("differences have zero variance".into()));
    }
    let n = d.len();
    let t = mean / (sd / (n as f64).sqrt());
    let df = n - 1;
    Ok(TTest {
        t,
        df,
        p: two_sided_t(t, df as f64),
        mean_difference: mean,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    /// Asymptotic Kolmogorov p-value. Mean and sd are estimated from the
    /// sample, so this is conservative.
    pub p: f64,
}

/// One-sample Kolmogorov-Smirnov test against a normal with the sample's
/// mean and standard deviation.
pub fn ks_normality(x: &[f64]) -> Result<KsResult> {
    if x.len() < 5 {
        return Err(Error::Domain(format!("KS test needs at least 5 values, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value".into()));
    }
    let (mean, sd) = mean_sd(x);
    if !(sd > 0.0) {
        return Err(Error::DegenerateTest("sample has zero variance".into()));
    }
    let normal = Normal::new(mean, sd).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let f = normal.cdf(*v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    Ok(KsResult {
        d,
        p: kolmogorov_sf(lambda),
    })
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-theta form converges fast for small arguments.
        let k = (2.0 * std::f64::consts::PI).sqrt() / lambda;
        let e = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=8).map(|j| (f64::from(2 * j - 1).powi(2) * e).exp()).sum();
        return (1.0 - k * s).clamp(0.0, 1.0);
    }
    let s: f64 = (1..=100)
        .map(|j| {
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * f64::from(j * j) * lambda * lambda).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameter {
    Omega,
    Zeta,
}

impl Parameter {
    pub fn as_str(self) -> &'static str {
        match self {
            Parameter::Omega => "omega",
            Parameter::Zeta => "zeta",
        }
    }
}

/// One trial-level estimate entering a condition summary.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub participant_id: String,
    pub condition: Condition,
    pub method: Method,
    pub omega: f64,
    pub zeta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub parameter: Parameter,
    pub calm: MeanSe,
    pub stressed: MeanSe,
    pub n_participants: usize,
    /// Stressed minus calm, on participant means.
    pub test: Option<TTest>,
    pub test_note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub rows: Vec<SummaryRow>,
    /// Participants dropped for lacking one of the conditions, per method.
    pub excluded: BTreeMap<Method, Vec<String>>,
}

/// Means and standard errors of participant means per method, parameter and
/// condition, with a paired t-test across conditions.
/// participant -> condition -> (omega values, zeta values)
type ByParticipant<'a> = BTreeMap<&'a str, BTreeMap<Condition, (Vec<f64>, Vec<f64>)>>;

pub fn condition_summary(observations: &[Observation]) -> Result<ConditionSummary> {
    let mut grouped: BTreeMap<Method, ByParticipant> = BTreeMap::new();
    for o in observations {
        let cell = grouped
            .entry(o.method)
            .or_default()
            .entry(o.participant_id.as_str())
            .or_default()
            .entry(o.condition)
            .or_default();
        cell.0.push(o.omega);
        cell.1.push(o.zeta);
    }

    let mut rows = Vec::new();
    let mut excluded = BTreeMap::new();
    for (method, participants) in grouped {
        let mut complete: Vec<[(f64, f64); 2]> = Vec::new();
        let mut dropped = Vec::new();
        for (pid, conditions) in &participants {
            match (conditions.get(&Condition::Calm), conditions.get(&Condition::Stressed)) {
                (Some(c), Some(s)) => complete.push([(mean(&c.0), mean(&c.1)), (mean(&s.0), mean(&s.1))]),
                _ => dropped.push(pid.to_string()),
            }
        }
        if !dropped.is_empty() {
            log::warn!(
                "{method}: {} participant(s) lack one condition and are excluded: {}",
                dropped.len(),
                dropped.join(", ")
            );
        }
        if complete.len() < 2 {
            return Err(Error::InsufficientRows {
                available: complete.len(),
                required: 2,
            });
        }
        for parameter in [Parameter::Omega, Parameter::Zeta] {
            let pick = |v: (f64, f64)| match parameter {
                Parameter::Omega => v.0,
                Parameter::Zeta => v.1,
            };
            let calm: Vec<f64> = complete.iter().map(|c| pick(c[0])).collect();
            let stressed: Vec<f64> = complete.iter().map(|c| pick(c[1])).collect();
            let (test, test_note) = match paired_t_test(&stressed, &calm) {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(e.to_string())),
            };
            rows.push(SummaryRow {
                method,
                parameter,
                calm: mean_se(&calm),
                stressed: mean_se(&stressed),
                n_participants: complete.len(),
                test,
                test_note,
            });
        }
        excluded.insert(method, dropped);
    }
    if rows.is_empty() {
        return Err(Error::InsufficientRows {
            available: 0,
            required: 2,
        });
    }
    Ok(ConditionSummary { rows, excluded })
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn mean_se(x: &[f64]) -> MeanSe {
    let (mean, sd) = mean_sd(x);
    MeanSe {
        mean,
        se: sd / (x.len() as f64).sqrt(),
    }
}
