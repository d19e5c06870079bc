//! Soft-margin RBF support vector machine trained by SMO with second-order
//! working-set selection, plus min-max feature scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpc::Method;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Omega,
    Zeta,
    OmegaZeta,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::OmegaZeta, FeatureSet::Omega, FeatureSet::Zeta];

    pub fn dim(self) -> usize {
        match self {
            FeatureSet::OmegaZeta => 2,
            _ => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::Omega => "omega",
            FeatureSet::Zeta => "zeta",
            FeatureSet::OmegaZeta => "omega_zeta",
        }
    }

    /// Picks this set's columns from an `(omega, zeta)` pair.
    pub fn select(self, omega: f64, zeta: f64) -> Vec<f64> {
        match self {
            FeatureSet::Omega => vec![omega],
            FeatureSet::Zeta => vec![zeta],
            FeatureSet::OmegaZeta => vec![omega, zeta],
        }
    }
}

/// Labelled samples; `true` marks the stressed class.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: Vec<Vec<f64>>,
    labels: Vec<bool>,
    pub source: Method,
    pub set: FeatureSet,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<bool>, source: Method, set: FeatureSet) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::InvalidFeatures(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != set.dim()) {
            return Err(Error::InvalidFeatures(format!(
                "row {bad} has {} columns, expected {}",
                rows[bad].len(),
                set.dim()
            )));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidFeatures("non-finite entry".into()));
        }
        if !(labels.contains(&true) && labels.contains(&false)) {
            return Err(Error::InvalidFeatures("both classes must be present".into()));
        }
        Ok(Self {
            rows,
            labels,
            source,
            set,
        })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    /// Rows at `indices`, in that order. Fails if a class goes missing.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            indices.iter().map(|&i| self.rows[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.source,
            self.set,
        )
    }

    /// Multiplies column `j` by `factor`.
    pub fn scale_column(&mut self, j: usize, factor: f64) {
        for r in &mut self.rows {
            r[j] *= factor;
        }
    }

    fn with_rows(&self, rows: Vec<Vec<f64>>) -> Self {
        Self {
            rows,
            labels: self.labels.clone(),
            source: self.source,
            set: self.set,
        }
    }
}

/// Per-feature bounds learned from training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for r in rows {
            for (j, v) in r.iter().enumerate() {
                min[j] = min[j].min(*v);
                max[j] = max[j].max(*v);
            }
        }
        Self { min, max }
    }

    /// Constant features, which `apply` maps to 0.5.
    pub fn constant_features(&self) -> Vec<usize> {
        (0..self.min.len()).filter(|&j| self.max[j] <= self.min[j]).collect()
    }

    pub fn apply(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let span = self.max[j] - self.min[j];
                        if span > 0.0 {
                            (v - self.min[j]) / span
                        } else {
                            0.5
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Scales both sets with bounds computed on `train` only.
pub fn min_max_fit_apply(train: &FeatureMatrix, test: &FeatureMatrix) -> (FeatureMatrix, FeatureMatrix, MinMax) {
    let bounds = MinMax::fit(train.rows());
    let constant = bounds.constant_features();
    if !constant.is_empty() {
        log::warn!("constant training feature(s) {constant:?} mapped to 0.5");
    }
    let tr = train.with_rows(bounds.apply(train.rows()));
    let te = test.with_rows(bounds.apply(test.rows()));
    (tr, te, bounds)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmOptions {
    pub c: f64,
    /// RBF width; `None` uses `1 / (d · mean feature variance)`.
    pub gamma: Option<f64>,
    /// Stopping tolerance on the maximal KKT violation.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: None,
            tolerance: 1e-3,
            max_iterations: 10_000_000,
        }
    }
}

impl SvmOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::config("classifier.svm.c", "must be positive and finite"));
        }
        if self.gamma.is_some_and(|g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::config("classifier.svm.gamma", "must be positive and finite"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config("classifier.svm.tolerance", "must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("classifier.svm.max_iterations", "must be positive"));
        }
        Ok(())
    }
}

/// `1 / (d · mean per-feature variance)`, or 1 when every feature is constant.
pub fn default_gamma(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len() as f64;
    let dim = rows.first().map_or(0, Vec::len);
    if dim == 0 || rows.is_empty() {
        return 1.0;
    }
    let mean_var = (0..dim)
        .map(|j| {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / dim as f64;
    if mean_var > 0.0 {
        1.0 / (dim as f64 * mean_var)
    } else {
        1.0
    }
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-gamma * d2).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i · y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    /// Dual objective `½ αᵀQα − Σα` at the solution.
    pub objective: f64,
    pub iterations: usize,
    /// Full dual vector, one entry per training row.
    pub alpha: Vec<f64>,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coef)
            .map(|(sv, c)| c * rbf(sv, x, self.gamma))
            .sum::<f64>()
            + self.bias
    }

    /// `true` for the stressed class.
    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision(x) > 0.0
    }

    pub fn accuracy(&self, m: &FeatureMatrix) -> f64 {
        let hits = m
            .rows()
            .iter()
            .zip(m.labels())
            .filter(|(x, y)| self.predict(x) == **y)
            .count();
        100.0 * hits as f64 / m.len() as f64
    }
}

const TAU: f64 = 1e-12;

pub fn svm_train(m: &FeatureMatrix, opts: &SvmOptions) -> Result<SvmModel> {
    opts.validate()?;
    let gamma = opts.gamma.unwrap_or_else(|| default_gamma(m.rows()));
    let y: Vec<f64> = m.labels().iter().map(|&s| if s { 1.0 } else { -1.0 }).collect();
    let n = y.len();
    let kernel: Vec<Vec<f64>> = m
        .rows()
        .iter()
        .map(|a| m.rows().iter().map(|b| rbf(a, b, gamma)).collect())
        .collect();
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i][j];
    let c = opts.c;

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i_sel = Some(t);
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..n {
                if !in_low(alpha[t], y[t]) {
                    continue;
                }
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                let b = gmax - v;
                if b > 0.0 {
                    let a = kernel[i][i] + kernel[t][t] - 2.0 * kernel[i][t];
                    let a = if a > 0.0 { a } else { TAU };
                    if -b * b / a <= best {
                        best = -b * b / a;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let violation = gmax - gmin;
        let (Some(i), Some(j)) = (i_sel, j_sel) else { break };
        if violation < opts.tolerance {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(Error::SmoNonConvergence { iterations, violation });
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (q(i, i) + q(j, j) + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (q(i, i) + q(j, j) - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * di + q(t, j) * dj;
        }
    }

    // Offset from free vectors, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 { free_sum / free_n as f64 } else { (ub + lb) / 2.0 };
    let objective = alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>() / 2.0;

    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support_vectors.push(m.rows()[t].clone());
            dual_coef.push(alpha[t] * y[t]);
        }
    }
    Ok(SvmModel {
        support_vectors,
        dual_coef,
        bias: -rho,
        gamma,
        c,
        objective,
        iterations,
        alpha,
    })
}
