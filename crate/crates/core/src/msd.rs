//! Mass-spring-damper step-response model and its prediction-error fit.
//!
//! The arm is modelled as `X_a(s)/X_t(s) = K_p ω² / (s² + 2ζωs + ω²)` driven
//! by a position step from the start bar to the target bar. Parameters are
//! recovered by minimizing the residual sum of squares between the observed
//! and the simulated step response.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpc::DampingEstimate;
use crate::optim::{nelder_mead, Bounds, NelderMeadOptions};
use crate::signal::{Role, Trajectory, TrialMeta};

/// `|ζ − 1|` below which the critically damped closed form is used.
pub const CRITICAL_BAND: f64 = 1e-9;

/// Re-evaluate the exponentials directly every this many samples.
const ANCHOR_EVERY: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsdCanonicalParams {
    pub kp: f64,
    pub omega: f64,
    pub zeta: f64,
}

impl MsdCanonicalParams {
    pub fn new(kp: f64, omega: f64, zeta: f64) -> Result<Self> {
        let p = Self { kp, omega, zeta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kp.is_finite() && self.omega.is_finite() && self.zeta.is_finite()) {
            return Err(Error::Domain(format!("non-finite MSD parameters {self:?}")));
        }
        if self.omega <= 0.0 || self.zeta <= 0.0 {
            return Err(Error::Domain(format!(
                "omega and zeta must be positive, got omega={} zeta={}",
                self.omega, self.zeta
            )));
        }
        Ok(())
    }
}

/// Inertia `j`, viscous damping `b`, stiffness `k`, feedforward gain `kf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsdPhysicalParams {
    pub j: f64,
    pub b: f64,
    pub k: f64,
    pub kf: f64,
}

pub fn physical_to_canonical(p: &MsdPhysicalParams) -> Result<MsdCanonicalParams> {
    if !(p.j > 0.0 && p.b > 0.0 && p.k > 0.0 && p.kf.is_finite()) {
        return Err(Error::Domain(format!("invalid physical parameters {p:?}")));
    }
    MsdCanonicalParams::new(p.kf / p.k, (p.k / p.j).sqrt(), p.b / (2.0 * (p.k * p.j).sqrt()))
}

/// The physical representative with inertia `j`.
pub fn canonical_to_physical(c: &MsdCanonicalParams, j: f64) -> Result<MsdPhysicalParams> {
    c.validate()?;
    if !(j > 0.0 && j.is_finite()) {
        return Err(Error::Domain(format!("inertia must be positive, got {j}")));
    }
    let k = j * c.omega * c.omega;
    Ok(MsdPhysicalParams {
        j,
        b: 2.0 * c.zeta * c.omega * j,
        k,
        kf: c.kp * k,
    })
}

/// Calls `visit(k, s_k)` with the unit step response `s(t_k)`, `t_k = k·dt`,
/// of `ω² / (s² + 2ζωs + ω²)` from rest.
fn unit_step_each<F: FnMut(usize, f64)>(omega: f64, zeta: f64, dt: f64, n: usize, mut visit: F) {
    if (zeta - 1.0).abs() < CRITICAL_BAND {
        let step = (-omega * dt).exp();
        let mut decay = 1.0;
        for k in 0..n {
            if k % ANCHOR_EVERY == 0 {
                decay = (-omega * dt * k as f64).exp();
            }
            let t = dt * k as f64;
            visit(k, 1.0 - decay * (1.0 + omega * t));
            decay *= step;
        }
    } else if zeta < 1.0 {
        let sigma = zeta * omega;
        let wd = omega * ((1.0 - zeta) * (1.0 + zeta)).sqrt();
        let ratio = sigma / wd;
        let (zr, zi) = {
            let m = (-sigma * dt).exp();
            let (s, c) = (wd * dt).sin_cos();
            (m * c, m * s)
        };
        let (mut wr, mut wi) = (1.0, 0.0);
        for k in 0..n {
            if k % ANCHOR_EVERY == 0 {
                let t = dt * k as f64;
                let m = (-sigma * t).exp();
                let (s, c) = (wd * t).sin_cos();
                wr = m * c;
                wi = m * s;
            }
            visit(k, 1.0 - (wr + ratio * wi));
            let next = wr * zr - wi * zi;
            wi = wr * zi + wi * zr;
            wr = next;
        }
    } else {
        let root = ((zeta - 1.0) * (zeta + 1.0)).sqrt();
        // Slow root written without cancellation: r_slow · r_fast = ω².
        let fast = -omega * (zeta + root);
        let slow = -omega / (zeta + root);
        let span = slow - fast;
        let (qs, qf) = ((slow * dt).exp(), (fast * dt).exp());
        let (mut es, mut ef) = (1.0, 1.0);
        for k in 0..n {
            if k % ANCHOR_EVERY == 0 {
                let t = dt * k as f64;
                es = (slow * t).exp();
                ef = (fast * t).exp();
            }
            visit(k, 1.0 + (fast * es - slow * ef) / span);
            es *= qs;
            ef *= qf;
        }
    }
}

/// Closed-form step response sampled at `t_k = k / sample_rate_hz`, starting
/// at rest at `step_from` with the step to `step_to` applied at `t = 0`.
pub fn step_response_samples(
    params: &MsdCanonicalParams,
    step_from: f64,
    step_to: f64,
    n_samples: usize,
    sample_rate_hz: f64,
) -> Result<Vec<f64>> {
    params.validate()?;
    if !(step_from.is_finite() && step_to.is_finite()) {
        return Err(Error::Domain("step endpoints must be finite".into()));
    }
    if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
        return Err(Error::Domain(format!("invalid sample rate {sample_rate_hz}")));
    }
    if n_samples < 2 {
        return Err(Error::Domain("step response needs at least 2 samples".into()));
    }
    let gain = params.kp * (step_to - step_from);
    let mut out = vec![0.0; n_samples];
    unit_step_each(params.omega, params.zeta, 1.0 / sample_rate_hz, n_samples, |k, s| {
        out[k] = step_from + gain * s;
    });
    Ok(out)
}

/// [`step_response_samples`] wrapped as a simulated [`Trajectory`].
pub fn simulate_step_response(
    params: &MsdCanonicalParams,
    step_from: f64,
    step_to: f64,
    n_samples: usize,
    sample_rate_hz: f64,
) -> Result<Trajectory> {
    let samples = step_response_samples(params, step_from, step_to, n_samples, sample_rate_hz)?;
    Trajectory::new(samples, sample_rate_hz, Role::Simulated)
}

/// Normalized-RMSE goodness of fit in percent:
/// `100 · (1 − ‖actual − simulated‖ / ‖actual − mean(actual)‖)`.
pub fn gof(actual: &[f64], simulated: &[f64]) -> Result<f64> {
    if actual.len() != simulated.len() {
        return Err(Error::Domain(format!(
            "length mismatch: {} actual vs {} simulated samples",
            actual.len(),
            simulated.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::UndefinedGof);
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let spread = actual.iter().map(|a| (a - mean).powi(2)).sum::<f64>().sqrt();
    if spread == 0.0 {
        return Err(Error::UndefinedGof);
    }
    let miss = actual
        .iter()
        .zip(simulated)
        .map(|(a, s)| (a - s).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * (1.0 - miss / spread))
}

/// Start and end of the position step driving the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInput {
    pub from: f64,
    pub to: f64,
}

impl StepInput {
    /// Uses the metadata endpoints, falling back to the first and last
    /// sample when either is missing.
    pub fn from_meta_or_signal(meta: &TrialMeta, samples: &[f64]) -> Self {
        match (meta.start_x_px, meta.target_x_px) {
            (Some(from), Some(to)) => Self { from, to },
            _ => Self {
                from: samples.first().copied().unwrap_or(0.0),
                to: samples.last().copied().unwrap_or(0.0),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub start_omegas: Vec<f64>,
    pub start_zetas: Vec<f64>,
    /// `(lower, upper)` in rad/s.
    pub omega_bounds: (f64, f64),
    pub zeta_bounds: (f64, f64),
    /// Relative simplex size at which a start is considered converged.
    pub tolerance: f64,
    /// Objective evaluations allowed per start.
    pub max_evaluations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            start_omegas: vec![5.0, 13.0, 25.0],
            start_zetas: vec![0.5, 1.0],
            omega_bounds: (0.1, 500.0),
            zeta_bounds: (1e-4, 200.0),
            tolerance: 1e-6,
            max_evaluations: 2000,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64]| !v.is_empty() && v.iter().all(|x| *x > 0.0 && x.is_finite());
        if !positive(&self.start_omegas) {
            return Err(Error::config("fit.start_omegas", "needs positive finite values"));
        }
        if !positive(&self.start_zetas) {
            return Err(Error::config("fit.start_zetas", "needs positive finite values"));
        }
        for (name, (lo, hi)) in [("fit.omega_bounds", self.omega_bounds), ("fit.zeta_bounds", self.zeta_bounds)] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::config(name, "needs 0 < lower < upper < inf"));
            }
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config("fit.tolerance", "must be positive"));
        }
        if self.max_evaluations == 0 {
            return Err(Error::config("fit.max_evaluations", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsdFit {
    pub params: MsdCanonicalParams,
    pub gof_percent: f64,
    pub residual_ss: f64,
    /// False when the budget ran out or a bound was hit.
    pub converged: bool,
    /// Set when the optimum sits on an omega or zeta bound.
    pub at_bound: bool,
    /// Simplex iterations of the winning start.
    pub iterations: usize,
    /// Objective evaluations across all starts.
    pub evaluations: usize,
}

impl MsdFit {
    pub fn estimate(&self) -> DampingEstimate {
        DampingEstimate::msd(self.params.omega, self.params.zeta, self.params.kp, self.gof_percent)
    }
}

fn residual_ss(samples: &[f64], dt: f64, step: StepInput, kp: f64, omega: f64, zeta: f64) -> f64 {
    let gain = kp * (step.to - step.from);
    let mut rss = 0.0;
    unit_step_each(omega, zeta, dt, samples.len(), |k, s| {
        let r = samples[k] - (step.from + gain * s);
        rss += r * r;
    });
    rss
}

/// Fits the step response to `signal` driven by the trial's step.
pub fn fit_pem(signal: &Trajectory, meta: &TrialMeta, opts: &FitOptions) -> Result<MsdFit> {
    let step = StepInput::from_meta_or_signal(meta, signal.samples());
    fit_step(signal.samples(), signal.sample_rate_hz(), step, opts)
}

/// Multi-start Nelder-Mead over `(kp, ln ω, ln ζ)` minimizing the residual
/// sum of squares; the best start wins, ties going to the earlier start.
pub fn fit_step(samples: &[f64], sample_rate_hz: f64, step: StepInput, opts: &FitOptions) -> Result<MsdFit> {
    opts.validate()?;
    if samples.len() < 2 || !(sample_rate_hz > 0.0) {
        return Err(Error::Domain("fit needs at least 2 samples and a positive rate".into()));
    }
    let amplitude = step.to - step.from;
    if !(amplitude.is_finite() && amplitude != 0.0) {
        return Err(Error::FitFailure(format!(
            "step amplitude {amplitude} cannot drive the model"
        )));
    }
    let dt = 1.0 / sample_rate_hz;
    let tail = &samples[samples.len().saturating_sub(10)..];
    let final_value = tail.iter().sum::<f64>() / tail.len() as f64;
    let kp0 = (final_value - step.from) / amplitude;

    let (omega_lo, omega_hi) = opts.omega_bounds;
    let (zeta_lo, zeta_hi) = opts.zeta_bounds;
    let bounds = Bounds {
        lower: vec![f64::NEG_INFINITY, omega_lo.ln(), zeta_lo.ln()],
        upper: vec![f64::INFINITY, omega_hi.ln(), zeta_hi.ln()],
    };
    let nm = NelderMeadOptions {
        tol: opts.tolerance,
        max_evaluations: opts.max_evaluations,
    };
    let step_sizes = [0.05 * kp0.abs().max(1.0), 0.25, 0.25];
    let objective = |x: &[f64]| residual_ss(samples, dt, step, x[0], x[1].exp(), x[2].exp());

    let mut evaluations = 0;
    let mut best: Option<crate::optim::Minimum> = None;
    // Starts are evaluated in a fixed order; a later start must be strictly
    // better to replace an earlier one.
    for &omega0 in &opts.start_omegas {
        for &zeta0 in &opts.start_zetas {
            let x0 = [kp0, omega0.clamp(omega_lo, omega_hi).ln(), zeta0.clamp(zeta_lo, zeta_hi).ln()];
            let m = nelder_mead(objective, &x0, &step_sizes, &bounds, &nm);
            evaluations += m.evaluations;
            if m.value.is_finite() && best.as_ref().is_none_or(|b| m.value < b.value) {
                best = Some(m);
            }
        }
    }
    let best = best.ok_or_else(|| Error::FitFailure("no start produced a finite cost".into()))?;

    let params = MsdCanonicalParams::new(best.x[0], best.x[1].exp(), best.x[2].exp())?;
    let near = |v: f64, bound: f64| (v - bound).abs() <= 1e-6 * bound;
    let at_bound = near(params.omega, omega_lo)
        || near(params.omega, omega_hi)
        || near(params.zeta, zeta_lo)
        || near(params.zeta, zeta_hi);
    let simulated = step_response_samples(&params, step.from, step.to, samples.len(), sample_rate_hz)?;
    let gof_percent = gof(samples, &simulated)?;
    Ok(MsdFit {
        params,
        gof_percent,
        residual_ss: best.value,
        converged: best.converged && !at_bound,
        at_bound,
        iterations: best.iterations,
        evaluations,
    })
}

/// Outlier rule for MSD estimates: `ζ ≤ 0` or `ζ > 100`.
pub fn is_outlier(est: &DampingEstimate) -> bool {
    !(est.zeta > 0.0 && est.zeta <= 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(kp: f64, omega: f64, zeta: f64) -> MsdCanonicalParams {
        MsdCanonicalParams::new(kp, omega, zeta).unwrap()
    }

    /// Classic RK4 on x'' = ω²(kp·u − x) − 2ζωx' for a unit step u from rest.
    fn rk4_step_response(p: &MsdCanonicalParams, t_end: f64, dt: f64, sample_every: usize) -> Vec<f64> {
        let accel = |x: f64, v: f64| p.omega * p.omega * (p.kp - x) - 2.0 * p.zeta * p.omega * v;
        let steps = (t_end / dt).round() as usize;
        let (mut x, mut v) = (0.0, 0.0);
        let mut out = vec![x];
        for i in 1..=steps {
            let (k1x, k1v) = (v, accel(x, v));
            let (k2x, k2v) = (v + 0.5 * dt * k1v, accel(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v));
            let (k3x, k3v) = (v + 0.5 * dt * k2v, accel(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v));
            let (k4x, k4v) = (v + dt * k3v, accel(x + dt * k3x, v + dt * k3v));
            x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            if i % sample_every == 0 {
                out.push(x);
            }
        }
        out
    }

    #[test]
    fn physical_canonical_conversions() {
        let c = physical_to_canonical(&MsdPhysicalParams { j: 1.0, b: 2.0, k: 1.0, kf: 1.0 }).unwrap();
        assert_eq!((c.kp, c.omega, c.zeta), (1.0, 1.0, 1.0));

        let c = physical_to_canonical(&MsdPhysicalParams { j: 1.0, b: 0.0001, k: 196.0, kf: 196.0 }).unwrap();
        assert!((c.omega - 14.0).abs() < 1e-12);
        assert!((c.kp - 1.0).abs() < 1e-12);
        assert!((c.zeta - 0.0001 / 28.0).abs() < 1e-15);
        assert!((c.zeta - 3.57e-6).abs() < 1e-8);

        let orig = params(0.9, 13.0, 0.7);
        let back = physical_to_canonical(&canonical_to_physical(&orig, 1.0).unwrap()).unwrap();
        assert!((back.kp - orig.kp).abs() < 1e-12);
        assert!((back.omega - orig.omega).abs() < 1e-12);
        assert!((back.zeta - orig.zeta).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_rk4_in_every_regime() {
        for zeta in [0.3, 0.5, 1.0, 1.0 + 5e-10, 1.5, 4.0] {
            for omega in [8.0, 20.0] {
                let p = params(1.0, omega, zeta);
                // 1 s at 2 kHz, integrated at dt = 1e-5 (50 substeps/sample).
                let ode = rk4_step_response(&p, 1.0, 1e-5, 50);
                let closed = step_response_samples(&p, 0.0, 1.0, ode.len(), 2000.0).unwrap();
                let worst = ode
                    .iter()
                    .zip(&closed)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(worst < 1e-6, "zeta={zeta} omega={omega}: {worst}");
            }
        }
    }

    #[test]
    fn overshoot_matches_textbook_formula() {
        let p = params(1.0, 10.0, 0.5);
        let y = step_response_samples(&p, 0.0, 1.0, 4000, 2000.0).unwrap();
        let peak = y.iter().copied().fold(f64::MIN, f64::max);
        let expected = (-std::f64::consts::PI * 0.5 / (1.0f64 - 0.25).sqrt()).exp();
        assert!((peak - 1.0 - expected).abs() < 1e-3);
        assert!((expected - 0.163).abs() < 1e-3);
    }

    #[test]
    fn critical_damping_is_monotone() {
        let y = step_response_samples(&params(1.0, 10.0, 1.0), 0.0, 1.0, 4000, 2000.0).unwrap();
        assert!(y.windows(2).all(|w| w[1] >= w[0]));
        assert!(y.iter().all(|&v| v <= 1.0));
    }

    #[test]
    fn settles_at_static_gain() {
        for (omega, zeta) in [(8.0f64, 0.5f64), (14.0, 1.0), (20.0, 3.0)] {
            for kp in [0.8, 1.0, 1.2] {
                // Over-damped responses settle on the slow pole instead.
                let slow = if zeta <= 1.0 { zeta * omega } else { omega * (zeta - (zeta * zeta - 1.0).sqrt()) };
                let settle = 10.0 / slow;
                let n = (settle * 2000.0).ceil() as usize + 1;
                let y = step_response_samples(&params(kp, omega, zeta), 100.0, 612.0, n, 2000.0).unwrap();
                let target = 100.0 + kp * 512.0;
                assert!((y[n - 1] - target).abs() < 1e-3 * 512.0);
            }
        }
    }

    #[test]
    fn step_response_rejects_non_finite() {
        assert!(step_response_samples(
            &MsdCanonicalParams { kp: 1.0, omega: f64::NAN, zeta: 1.0 },
            0.0,
            1.0,
            10,
            2000.0
        )
        .is_err());
        assert!(step_response_samples(&params(1.0, 1.0, 1.0), 0.0, f64::INFINITY, 10, 2000.0).is_err());
    }

    #[test]
    fn gof_examples() {
        let a = [0.0, 1.0, 2.0];
        assert_eq!(gof(&a, &a).unwrap(), 100.0);
        assert_eq!(gof(&a, &[1.0, 1.0, 1.0]).unwrap(), 0.0);
        let expected = 100.0 * (1.0 - 1.0 / 2f64.sqrt());
        assert!((gof(&a, &[0.0, 1.0, 1.0]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 29.29).abs() < 0.01);
        assert!(matches!(gof(&[2.0; 4], &[2.0; 4]), Err(Error::UndefinedGof)));
        assert!(gof(&a, &[0.0]).is_err());
    }

    #[test]
    fn outlier_rule_boundaries() {
        let e = |zeta| DampingEstimate::msd(10.0, zeta, 1.0, 90.0);
        assert!(!is_outlier(&e(0.97)));
        assert!(is_outlier(&e(0.0)));
        assert!(is_outlier(&e(-0.5)));
        assert!(!is_outlier(&e(100.0)));
        assert!(is_outlier(&e(100.01)));
    }

    #[test]
    fn fit_recovers_noiseless_response() {
        let truth = params(1.0, 14.0, 0.9);
        let y = step_response_samples(&truth, 0.0, 512.0, 2000, 2000.0).unwrap();
        let fit = fit_step(&y, 2000.0, StepInput { from: 0.0, to: 512.0 }, &FitOptions::default()).unwrap();
        assert!((fit.params.omega - 14.0).abs() / 14.0 < 0.02, "{fit:?}");
        assert!((fit.params.zeta - 0.9).abs() / 0.9 < 0.05, "{fit:?}");
        assert!(fit.gof_percent > 99.0);
        assert!(fit.converged);
    }

    #[test]
    fn constant_signal_fails() {
        let y = vec![300.0; 500];
        let step = StepInput { from: 300.0, to: 812.0 };
        let err = fit_step(&y, 2000.0, step, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::UndefinedGof | Error::FitFailure(_)), "{err}");
        let flat = StepInput { from: 300.0, to: 300.0 };
        assert!(matches!(
            fit_step(&y, 2000.0, flat, &FitOptions::default()),
            Err(Error::FitFailure(_))
        ));
    }

    #[test]
    fn boundary_hits_are_flagged() {
        // True omega sits below the allowed range, so the fit ends on the bound.
        let y = step_response_samples(&params(1.0, 2.0, 0.7), 0.0, 512.0, 2000, 2000.0).unwrap();
        let opts = FitOptions {
            omega_bounds: (5.0, 500.0),
            ..FitOptions::default()
        };
        let fit = fit_step(&y, 2000.0, StepInput { from: 0.0, to: 512.0 }, &opts).unwrap();
        assert!(fit.at_bound, "{fit:?}");
        assert!(!fit.converged);
        assert!((fit.params.omega - 5.0).abs() < 1e-9);
    }
}
