//! Box-constrained Nelder-Mead simplex minimizer.

/// Closed box `[lower, upper]` per coordinate. Trial points are projected
/// onto it.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NelderMeadOptions {
    /// Stop once every vertex lies within `tol · max(|best_j|, 1)` of the
    /// best vertex in every coordinate.
    pub tol: f64,
    pub max_evaluations: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_evaluations: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub iterations: usize,
    /// Whether the simplex shrank below tolerance before the budget ran out.
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimizes `f` from `x0` with an initial simplex of per-coordinate `step`s.
/// Non-finite objective values are treated as `+∞`.
pub fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    bounds: &Bounds,
    opts: &NelderMeadOptions,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    assert_eq!(step.len(), dim, "step length must match x0");
    assert_eq!(bounds.lower.len(), dim, "bounds must match x0");

    let evaluations = std::cell::Cell::new(0usize);
    let mut eval = |x: &[f64]| {
        evaluations.set(evaluations.get() + 1);
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let mut start = x0.to_vec();
    bounds.project(&mut start);
    let v0 = eval(&start);
    simplex.push((start.clone(), v0));
    for j in 0..dim {
        let mut x = start.clone();
        x[j] += step[j];
        bounds.project(&mut x);
        if x[j] == start[j] {
            // Stepped into a bound; go the other way.
            x[j] = start[j] - step[j];
            bounds.project(&mut x);
        }
        let v = eval(&x);
        simplex.push((x, v));
    }

    let mut iterations = 0usize;
    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if within_tolerance(&simplex, opts.tol) {
            converged = true;
            break;
        }
        if evaluations.get() >= opts.max_evaluations {
            break;
        }
        iterations += 1;

        let worst = simplex[dim].clone();
        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let towards = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + coef * (c - w))
                .collect();
            bounds.project(&mut p);
            p
        };

        let reflected = towards(REFLECT);
        let fr = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = towards(REFLECT * EXPAND);
            let fe = eval(&expanded);
            simplex[dim] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < worst.1 {
            let p = towards(REFLECT * CONTRACT);
            let v = eval(&p);
            (p, v)
        } else {
            let p = towards(-CONTRACT);
            let v = eval(&p);
            (p, v)
        };
        if fc < worst.1.min(fr) {
            simplex[dim] = (contracted, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            for (v, b) in vertex.0.iter_mut().zip(&best) {
                *v = b + SHRINK * (*v - b);
            }
            bounds.project(&mut vertex.0);
            vertex.1 = eval(&vertex.0);
        }
    }

    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        evaluations: evaluations.get(),
        iterations,
        converged,
    }
}

fn within_tolerance(sorted: &[(Vec<f64>, f64)], tol: f64) -> bool {
    let best = &sorted[0].0;
    sorted[1..].iter().all(|(x, _)| {
        x.iter()
            .zip(best)
            .all(|(v, b)| (v - b).abs() <= tol * b.abs().max(1.0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions {
            tol: 1e-9,
            max_evaluations: 10_000,
        };
        let m = nelder_mead(rosen, &[-1.2, 1.0], &[0.1, 0.1], &Bounds::unbounded(2), &opts);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| (x[0] + 3.0).powi(2) + (x[1] - 2.0).powi(2);
        let bounds = Bounds {
            lower: vec![-1.0, -10.0],
            upper: vec![1.0, 10.0],
        };
        let m = nelder_mead(f, &[0.5, 0.0], &[0.2, 0.2], &bounds, &NelderMeadOptions::default());
        assert!((m.x[0] + 1.0).abs() < 1e-6);
        assert!((m.x[1] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn stops_at_evaluation_budget() {
        let f = |x: &[f64]| x[0].abs().sqrt() + x[1].abs().sqrt();
        let opts = NelderMeadOptions {
            tol: 0.0,
            max_evaluations: 50,
        };
        let m = nelder_mead(f, &[3.0, 4.0], &[1.0, 1.0], &Bounds::unbounded(2), &opts);
        assert!(!m.converged);
        assert!(m.evaluations < 50 + 4);
    }

    #[test]
    fn non_finite_values_are_avoided() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.5).powi(2) };
        let m = nelder_mead(f, &[2.0], &[1.0], &Bounds::unbounded(1), &NelderMeadOptions::default());
        assert!((m.x[0] - 0.5).abs() < 1e-5);
    }
}
