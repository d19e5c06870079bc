//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

/// Dense Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Solves the order-`p` Yule-Walker equations `R a = r` directly.
pub fn yule_walker_dense(acf: &[f64], p: usize) -> Option<Vec<f64>> {
    let r: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..p).map(|j| acf[i.abs_diff(j)]).collect())
        .collect();
    dense_solve(r, acf[1..=p].to_vec())
}

/// Biased autocorrelation of the mean-removed signal by direct summation.
pub fn acf_direct(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (0..=max_lag)
        .map(|k| (k..x.len()).map(|i| (x[i] - m) * (x[i - k] - m)).sum::<f64>() / n)
        .collect()
}

/// Classic RK4 on `x'' = ω²(kp − x) − 2ζωx'` from rest, sampled every
/// `sample_every` steps.
pub fn rk4_unit_step(kp: f64, omega: f64, zeta: f64, t_end: f64, dt: f64, sample_every: usize) -> Vec<f64> {
    let accel = |x: f64, v: f64| omega * omega * (kp - x) - 2.0 * zeta * omega * v;
    let steps = (t_end / dt).round() as usize;
    let (mut x, mut v) = (0.0f64, 0.0f64);
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

/// Spearman's rho by counting-based average ranks, no sorting.
pub fn spearman_naive(x: &[f64], y: &[f64]) -> Option<f64> {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let below = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

/// Every vector of length `len` over `{1, 2, 3}`.
pub fn ternary_vectors(len: usize) -> Vec<Vec<f64>> {
    (0..3usize.pow(len as u32))
        .map(|mut code| {
            (0..len)
                .map(|_| {
                    let v = (code % 3) as f64 + 1.0;
                    code /= 3;
                    v
                })
                .collect()
        })
        .collect()
}

/// Minimum of the SVM dual `½ αᵀQα − Σα` subject to `0 ≤ α ≤ C`, `yᵀα = 0`,
/// found by enumerating which coordinates sit at 0, at C, or strictly
/// between, and solving the equality-constrained stationarity system on each
/// face. Exponential in `n`; meant for `n ≤ 10`.
pub fn svm_dual_brute_force(q: &[Vec<f64>], y: &[f64], c: f64) -> f64 {
    let n = y.len();
    let objective = |a: &[f64]| -> f64 {
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += a[i] * a[j] * q[i][j];
            }
        }
        0.5 * quad - a.iter().sum::<f64>()
    };
    let mut best = f64::INFINITY;
    for mut code in 0..3usize.pow(n as u32) {
        let state: Vec<usize> = (0..n)
            .map(|_| {
                let s = code % 3;
                code /= 3;
                s
            })
            .collect();
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = state.iter().map(|&s| if s == 1 { c } else { 0.0 }).collect();
        if !free.is_empty() {
            // [Q_FF y_F; y_Fᵀ 0] [α_F; ν] = [1 − Q_FB α_B; −y_Bᵀ α_B]
            let m = free.len();
            let mut a = vec![vec![0.0; m + 1]; m + 1];
            let mut b = vec![0.0; m + 1];
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    a[r][s] = q[i][j];
                }
                a[r][m] = y[i];
                a[m][r] = y[i];
                b[r] = 1.0 - (0..n).filter(|k| state[*k] != 2).map(|k| q[i][k] * alpha[k]).sum::<f64>();
            }
            b[m] = -(0..n).filter(|k| state[*k] != 2).map(|k| y[k] * alpha[k]).sum::<f64>();
            let Some(sol) = dense_solve(a, b) else { continue };
            for (r, &i) in free.iter().enumerate() {
                alpha[i] = sol[r];
            }
        }
        let balance: f64 = alpha.iter().zip(y).map(|(a, y)| a * y).sum();
        let inside = alpha.iter().all(|a| *a >= -1e-12 && *a <= c + 1e-12);
        if inside && balance.abs() < 1e-9 {
            best = best.min(objective(&alpha));
        }
    }
    best
}

/// One PASS/FAIL line per criterion, written past the test harness's output
/// capture so it shows up on passing runs too.
pub fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    use std::io::Write;
    let line = format!("[{}] criterion {id} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}
