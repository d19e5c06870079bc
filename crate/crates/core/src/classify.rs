//! Per-participant, per-distance stress classification with repeated
//! stratified cross-validation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpc::{DampingEstimate, Method};
use crate::msd::is_outlier;
use crate::seed::derive_seed;
use crate::stats::MeanSe;
use crate::svm::{min_max_fit_apply, svm_train, FeatureMatrix, FeatureSet, MinMax, SvmOptions};
use crate::signal::TrialKey;

/// Table column order: combined, then omega, then zeta; MSD before LPC.
pub const VARIANTS: [(Method, FeatureSet); 6] = [
    (Method::Msd, FeatureSet::OmegaZeta),
    (Method::Lpc, FeatureSet::OmegaZeta),
    (Method::Msd, FeatureSet::Omega),
    (Method::Lpc, FeatureSet::Omega),
    (Method::Msd, FeatureSet::Zeta),
    (Method::Lpc, FeatureSet::Zeta),
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Bounds from each training fold only.
    #[default]
    PerFold,
    /// Bounds from the whole cell before splitting.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierOptions {
    pub folds: usize,
    pub repetitions: usize,
    pub normalization: Normalization,
    pub svm: SvmOptions,
}

impl Default for ClassifierOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            repetitions: 10,
            normalization: Normalization::PerFold,
            svm: SvmOptions::default(),
        }
    }
}

impl ClassifierOptions {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::config("classifier.folds", "must be at least 2"));
        }
        if self.repetitions == 0 {
            return Err(Error::config("classifier.repetitions", "must be at least 1"));
        }
        self.svm.validate()
    }
}

/// Fold index per sample. Each class is shuffled separately and dealt
/// round-robin, so every fold gets both classes.
pub fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> Result<Vec<usize>> {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        by_class[usize::from(l)].push(i);
    }
    let smallest = by_class[0].len().min(by_class[1].len());
    if folds == 0 || smallest < folds {
        return Err(Error::FoldInfeasible {
            class_count: smallest,
            folds,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for class in &mut by_class {
        class.shuffle(&mut rng);
        for &i in class.iter() {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

/// What the model saw in one fold.
#[derive(Debug)]
pub struct FoldEvent<'a> {
    pub fold: usize,
    pub train: &'a [usize],
    pub test: &'a [usize],
    pub bounds: &'a MinMax,
    pub accuracy: f64,
}

/// Mean held-out accuracy (percent) over stratified folds.
pub fn cross_validate(m: &FeatureMatrix, opts: &ClassifierOptions, seed: u64) -> Result<f64> {
    cross_validate_observed(m, opts, seed, &mut |_| {})
}

/// As [`cross_validate`], reporting each fold to `observer`.
pub fn cross_validate_observed(
    m: &FeatureMatrix,
    opts: &ClassifierOptions,
    seed: u64,
    observer: &mut dyn FnMut(&FoldEvent<'_>),
) -> Result<f64> {
    opts.validate()?;
    let assignment = stratified_folds(m.labels(), opts.folds, seed)?;
    let global = match opts.normalization {
        Normalization::Global => {
            let b = MinMax::fit(m.rows());
            Some((b.clone(), FeatureMatrix::new(b.apply(m.rows()), m.labels().to_vec(), m.source, m.set)?))
        }
        Normalization::PerFold => None,
    };
    let mut total = 0.0;
    for fold in 0..opts.folds {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..m.len()).partition(|&i| assignment[i] == fold);
        let (train_m, test_m, bounds) = match &global {
            Some((b, scaled)) => (scaled.subset(&train)?, scaled.subset(&test)?, b.clone()),
            None => min_max_fit_apply(&m.subset(&train)?, &m.subset(&test)?),
        };
        let model = svm_train(&train_m, &opts.svm)?;
        let accuracy = model.accuracy(&test_m);
        observer(&FoldEvent {
            fold,
            train: &train,
            test: &test,
            bounds: &bounds,
            accuracy,
        });
        total += accuracy;
    }
    Ok(total / opts.folds as f64)
}

/// Estimates available for one trial; `None` marks a failed estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub key: TrialKey,
    pub lpc: Option<DampingEstimate>,
    pub msd: Option<DampingEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub participant_id: String,
    pub distance_px: u32,
    pub source: Method,
    pub set: FeatureSet,
    pub n_calm: usize,
    pub n_stressed: usize,
    pub dropped_failed: usize,
    pub dropped_outlier: usize,
    /// Mean and standard error over repetitions, in percent.
    pub accuracy: Option<MeanSe>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantAggregate {
    pub source: Method,
    pub set: FeatureSet,
    /// Mean and standard error across available cells.
    pub accuracy: Option<MeanSe>,
    pub n_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    /// `None` for the overall row.
    pub distance_px: Option<u32>,
    pub variants: Vec<VariantAggregate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub options: ClassifierOptions,
    pub gamma_rule: String,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<AggregateRow>,
}

impl AccuracyReport {
    pub fn aggregate(&self, distance_px: Option<u32>, source: Method, set: FeatureSet) -> Option<&VariantAggregate> {
        self.aggregates
            .iter()
            .find(|r| r.distance_px == distance_px)?
            .variants
            .iter()
            .find(|v| v.source == source && v.set == set)
    }

    pub fn overall(&self, source: Method, set: FeatureSet) -> Option<MeanSe> {
        self.aggregate(None, source, set)?.accuracy
    }

    /// Distances as rows, variants as columns, `mean (se)` cells.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("distance");
        for (source, set) in VARIANTS {
            let _ = write!(out, ",{} {}", source, set.as_str());
        }
        out.push('\n');
        for row in &self.aggregates {
            match row.distance_px {
                Some(d) => {
                    let _ = write!(out, "{d}");
                }
                None => out.push_str("overall"),
            }
            for (source, set) in VARIANTS {
                let cell = row
                    .variants
                    .iter()
                    .find(|v| v.source == source && v.set == set)
                    .and_then(|v| v.accuracy);
                match cell {
                    Some(a) => {
                        let _ = write!(out, ",{:.1} ({:.1})", a.mean, a.se);
                    }
                    None => out.push_str(",NA"),
                }
            }
            out.push('\n');
        }
        out
    }
}

fn mean_se(values: &[f64]) -> Option<MeanSe> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let se = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    Some(MeanSe { mean, se })
}

fn run_cell(
    participant_id: &str,
    distance_px: u32,
    source: Method,
    set: FeatureSet,
    rows: &[&EstimateRow],
    opts: &ClassifierOptions,
    master_seed: u64,
) -> CellResult {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let (mut dropped_failed, mut dropped_outlier) = (0, 0);
    for r in rows {
        let est = match source {
            Method::Lpc => r.lpc.as_ref(),
            Method::Msd => r.msd.as_ref(),
        };
        match est {
            None => dropped_failed += 1,
            Some(e) if source == Method::Msd && is_outlier(e) => dropped_outlier += 1,
            Some(e) => {
                features.push(set.select(e.omega, e.zeta));
                labels.push(r.key.condition.is_stressed());
            }
        }
    }
    let n_stressed = labels.iter().filter(|l| **l).count();
    let mut cell = CellResult {
        participant_id: participant_id.to_string(),
        distance_px,
        source,
        set,
        n_calm: labels.len() - n_stressed,
        n_stressed,
        dropped_failed,
        dropped_outlier,
        accuracy: None,
        note: None,
    };
    let smallest = cell.n_calm.min(cell.n_stressed);
    if smallest < opts.folds {
        cell.note = Some(
            Error::FoldInfeasible {
                class_count: smallest,
                folds: opts.folds,
            }
            .to_string(),
        );
        return cell;
    }
    let result = FeatureMatrix::new(features, labels, source, set).and_then(|m| {
        (0..opts.repetitions)
            .map(|rep| {
                let label = format!("cv/{participant_id}/d{distance_px}/{source}/{}/{rep}", set.as_str());
                cross_validate(&m, opts, derive_seed(master_seed, &label))
            })
            .collect::<Result<Vec<f64>>>()
    });
    match result {
        Ok(accs) => cell.accuracy = mean_se(&accs),
        Err(e) => cell.note = Some(e.to_string()),
    }
    cell
}

/// Runs every participant × distance × variant cell and aggregates per
/// distance and overall.
pub fn run_experiment(rows: &[EstimateRow], opts: &ClassifierOptions, master_seed: u64) -> Result<AccuracyReport> {
    opts.validate()?;
    let mut groups: BTreeMap<(&str, u32), Vec<&EstimateRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.key.participant_id.as_str(), r.key.distance_px))
            .or_default()
            .push(r);
    }
    let jobs: Vec<((&str, u32), Method, FeatureSet)> = groups
        .keys()
        .flat_map(|&g| VARIANTS.iter().map(move |&(s, f)| (g, s, f)))
        .collect();
    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|&((pid, d), source, set)| run_cell(pid, d, source, set, &groups[&(pid, d)], opts, master_seed))
        .collect();

    let mut distances: Vec<Option<u32>> = groups.keys().map(|&(_, d)| Some(d)).collect();
    distances.sort();
    distances.dedup();
    distances.push(None);
    let aggregates = distances
        .into_iter()
        .map(|distance_px| AggregateRow {
            distance_px,
            variants: VARIANTS
                .iter()
                .map(|&(source, set)| {
                    let accs: Vec<f64> = cells
                        .iter()
                        .filter(|c| c.source == source && c.set == set)
                        .filter(|c| distance_px.is_none_or(|d| c.distance_px == d))
                        .filter_map(|c| c.accuracy.map(|a| a.mean))
                        .collect();
                    VariantAggregate {
                        source,
                        set,
                        accuracy: mean_se(&accs),
                        n_cells: accs.len(),
                    }
                })
                .collect(),
        })
        .collect();
    Ok(AccuracyReport {
        options: opts.clone(),
        gamma_rule: match opts.svm.gamma {
            Some(g) => format!("fixed {g}"),
            None => "1 / (d * mean feature variance) on the normalized training fold".into(),
        },
        cells,
        aggregates,
    })
}
