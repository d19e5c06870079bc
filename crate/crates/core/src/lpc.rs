//! Linear-predictive-coding damping estimator.
//!
//! A signal is modelled as `x[n] ≈ Σ a_k x[n-k]`; the prediction polynomial
//! `z^p − a₁z^{p−1} − … − a_p` has, for an under-damped system, a
//! complex-conjugate root pair `r`. The estimator reports `ω = |Im r|` and
//! `ζ = |Re r| / |r|`, both in dimensionless z-plane units.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ORDER: usize = 4;

/// Roots with `|Im| ≤` this are treated as real.
pub const COMPLEX_THRESHOLD: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Lpc,
    Msd,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lpc => "LPC",
            Method::Msd => "MSD",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Damping frequency and ratio from either estimator.
///
/// LPC values are z-plane quantities; MSD values are in rad/s and the fitted
/// damping ratio. The two are never converted into each other.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DampingEstimate {
    pub omega: f64,
    pub zeta: f64,
    pub method: Method,
    /// Static gain, MSD only.
    pub kp: Option<f64>,
    /// Goodness of fit in percent, MSD only.
    pub gof_percent: Option<f64>,
}

impl DampingEstimate {
    pub fn lpc(omega: f64, zeta: f64) -> Self {
        Self {
            omega,
            zeta,
            method: Method::Lpc,
            kp: None,
            gof_percent: None,
        }
    }

    pub fn msd(omega: f64, zeta: f64, kp: f64, gof_percent: f64) -> Self {
        Self {
            omega,
            zeta,
            method: Method::Msd,
            kp: Some(kp),
            gof_percent: Some(gof_percent),
        }
    }
}

/// Which complex pair to report when the polynomial has two.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoleSelection {
    /// Largest modulus: the slowest-decaying, dominant dynamics.
    #[default]
    LargestModulus,
    /// Smallest `|Im r|`.
    LowestFrequency,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LpcOptions {
    pub order: usize,
    pub pole_selection: PoleSelection,
}

impl Default for LpcOptions {
    fn default() -> Self {
        Self {
            order: DEFAULT_ORDER,
            pole_selection: PoleSelection::LargestModulus,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpcModel {
    pub order: usize,
    /// `a_1 … a_p`, prediction convention `x[n] ≈ Σ a_k x[n−k]`.
    pub coefficients: Vec<f64>,
    /// Final prediction-error power of the recursion.
    pub error_variance: f64,
    /// Roots of the prediction polynomial, once computed.
    pub poles: Option<Vec<Complex<f64>>>,
}

impl LpcModel {
    /// Evaluates `z^p − a₁z^{p−1} − … − a_p` by Horner's rule.
    pub fn polynomial_at(&self, z: Complex<f64>) -> Complex<f64> {
        self.coefficients
            .iter()
            .fold(Complex::new(1.0, 0.0), |acc, &a| acc * z - a)
    }
}

/// Biased (1/N) autocorrelation of the mean-removed signal for lags
/// `0..=max_lag`.
pub fn autocorrelation(signal: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = signal.len();
    if max_lag >= n {
        return Err(Error::Domain(format!(
            "max_lag {max_lag} must be below the signal length {n}"
        )));
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = signal.iter().map(|x| x - mean).collect();
    Ok((0..=max_lag)
        .map(|lag| {
            centered[lag..]
                .iter()
                .zip(&centered)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n as f64
        })
        .collect())
}

/// Solves the order-`order` Yule-Walker equations by the Levinson-Durbin
/// recursion.
pub fn levinson_durbin(acf: &[f64], order: usize) -> Result<LpcModel> {
    if order == 0 {
        return Err(Error::Domain("LPC order must be at least 1".into()));
    }
    if acf.len() < order + 1 {
        return Err(Error::Domain(format!(
            "order {order} needs {} autocorrelation lags, got {}",
            order + 1,
            acf.len()
        )));
    }
    if !(acf[0] > 0.0) {
        return Err(Error::DegenerateSignal(format!(
            "zero-lag autocorrelation {} is not positive",
            acf[0]
        )));
    }

    let mut a = vec![0.0; order];
    let mut prev = vec![0.0; order];
    let mut err = acf[0];
    for i in 0..order {
        let acc: f64 = (0..i).map(|j| a[j] * acf[i - j]).sum();
        let k = (acf[i + 1] - acc) / err;
        if !k.is_finite() {
            return Err(Error::Numerical(format!(
                "reflection coefficient {} is not finite",
                i + 1
            )));
        }
        prev[..i].copy_from_slice(&a[..i]);
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
    }
    Ok(LpcModel {
        order,
        coefficients: a,
        error_variance: err.max(0.0),
        poles: None,
    })
}

/// Finds the roots of the prediction polynomial as companion-matrix
/// eigenvalues, ordered by descending modulus.
pub fn lpc_poles(mut model: LpcModel) -> Result<LpcModel> {
    let coeffs = &model.coefficients;
    if coeffs.is_empty() {
        return Err(Error::Domain("model has no coefficients".into()));
    }
    // Trailing zero coefficients contribute exact roots at the origin.
    let degree = coeffs.iter().rposition(|&a| a != 0.0).map_or(0, |i| i + 1);
    let mut poles = vec![Complex::new(0.0, 0.0); coeffs.len() - degree];

    if degree > 0 {
        let mut companion = DMatrix::<f64>::zeros(degree, degree);
        for (j, &a) in coeffs[..degree].iter().enumerate() {
            companion[(0, j)] = a;
        }
        for i in 1..degree {
            companion[(i, i - 1)] = 1.0;
        }
        let schur = nalgebra::linalg::Schur::try_new(companion, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Numerical("companion eigen-solver did not converge".into()))?;
        poles.extend(schur.complex_eigenvalues().iter().copied());
    }

    poles.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then(b.im.total_cmp(&a.im))
            .then(b.re.total_cmp(&a.re))
    });
    model.poles = Some(poles);
    Ok(model)
}

/// Damping frequency and ratio of one root.
pub fn damping_of_root(r: Complex<f64>) -> DampingEstimate {
    DampingEstimate::lpc(r.im.abs(), r.re.abs() / r.norm())
}

/// Picks the reported complex pair and converts it to a [`DampingEstimate`].
pub fn extract_damping(model: &LpcModel, selection: PoleSelection) -> Result<DampingEstimate> {
    let poles = model
        .poles
        .as_ref()
        .ok_or_else(|| Error::Domain("poles have not been computed".into()))?;
    let complex = poles
        .iter()
        .copied()
        .filter(|r| r.im > COMPLEX_THRESHOLD);
    let chosen = match selection {
        PoleSelection::LargestModulus => complex.max_by(|a, b| {
            a.norm()
                .total_cmp(&b.norm())
                .then(b.im.total_cmp(&a.im))
        }),
        PoleSelection::LowestFrequency => complex.min_by(|a, b| {
            a.im.total_cmp(&b.im)
                .then(b.norm().total_cmp(&a.norm()))
        }),
    };
    chosen.map(damping_of_root).ok_or(Error::NoComplexRoot)
}

/// Autocorrelation, Levinson-Durbin, root finding and pair extraction.
pub fn estimate_lpc(signal: &[f64], opts: &LpcOptions) -> Result<DampingEstimate> {
    if signal.len() <= opts.order {
        return Err(Error::Domain(format!(
            "order-{} LPC needs more than {} samples",
            opts.order, opts.order
        )));
    }
    let acf = autocorrelation(signal, opts.order)?;
    let model = lpc_poles(levinson_durbin(&acf, opts.order)?)?;
    extract_damping(&model, opts.pole_selection)
}
