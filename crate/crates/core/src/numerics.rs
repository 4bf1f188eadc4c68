//! Small numerical helpers shared across modules.

/// `e^z` with the exponent clamped to `[-700, 700]`; above the range returns `+inf`.
#[inline]
pub fn sat_exp(z: f64) -> f64 {
    if z > 700.0 {
        f64::INFINITY
    } else {
        z.max(-700.0).exp()
    }
}

/// `ln(n!)` by direct summation for small `n`, Stirling series otherwise.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 256 {
        return (2..=n).map(|i| (i as f64).ln()).sum();
    }
    let x = n as f64 + 1.0;
    // ln Gamma(x), Stirling with four correction terms
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * x) - 1.0 / (360.0 * x.powi(3))
        + 1.0 / (1260.0 * x.powi(5))
        - 1.0 / (1680.0 * x.powi(7))
}

/// Stable `ln(sum(exp(v)))`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Van der Corput radical inverse in `base`.
pub fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let b = base as f64;
    while i > 0 {
        f /= b;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// `count` Halton points scaled to the box `[lo_i, hi_i]`.
pub fn halton_box(bounds: &[(f64, f64)], count: usize) -> Vec<Vec<f64>> {
    (1..=count as u64)
        .map(|i| {
            bounds
                .iter()
                .enumerate()
                .map(|(d, (lo, hi))| lo + (hi - lo) * radical_inverse(i, PRIMES[d % PRIMES.len()]))
                .collect()
        })
        .collect()
}

/// Tensor grid with `per_axis` points per coordinate (inclusive endpoints).
pub fn tensor_grid(bounds: &[(f64, f64)], per_axis: usize) -> Vec<Vec<f64>> {
    let per_axis = per_axis.max(1);
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        if per_axis == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..per_axis).map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64).collect()
        }
    };
    let mut out = vec![Vec::new()];
    for &b in bounds {
        let values = axis(b);
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
/// Returns `(argmin, min)` including the endpoint values.
pub fn golden_min(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    const R: f64 = 0.618_033_988_749_894_9;
    let (lo0, hi0) = (a, b);
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - R * (hi - lo);
    let mut x2 = lo + R * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..max_iter {
        if hi - lo <= tol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - R * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + R * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    for x in [lo0, hi0] {
        let v = f(x);
        if v < best.1 || best.1.is_nan() {
            best = (x, v);
        }
    }
    best
}

/// Linear-interpolated quantile of unsorted data, `q` in `[0, 1]`.
pub fn quantile(data: &[f64], q: f64) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let mut v = data.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < v.len() {
        v[i] * (1.0 - frac) + v[i + 1] * frac
    } else {
        v[i]
    }
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Nonnegative least squares `min |A c - b|` over `c >= 0` (Lawson-Hanson).
/// `columns[j]` is the j-th column of `A`.
pub fn nnls(columns: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    use nalgebra::{DMatrix, DVector};
    let m = b.len();
    let n = columns.len();
    let a = DMatrix::from_fn(m, n, |i, j| columns[j][i]);
    let bv = DVector::from_column_slice(b);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * (1.0 + bv.norm());
    for _ in 0..(3 * n + 10) {
        let w = a.transpose() * (&bv - &a * &x);
        let candidate = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = DMatrix::from_fn(m, idx.len(), |r, c| a[(r, idx[c])]);
            let z_sub = sub.clone().svd(true, true).solve(&bv, 1e-14).unwrap_or_else(|_| DVector::zeros(idx.len()));
            if z_sub.iter().all(|v| *v > 0.0) {
                for (c, &k) in idx.iter().enumerate() {
                    x[k] = z_sub[c];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (c, &k) in idx.iter().enumerate() {
                if z_sub[c] <= 0.0 {
                    let denom = x[k] - z_sub[c];
                    if denom > 0.0 {
                        alpha = alpha.min(x[k] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            for (c, &k) in idx.iter().enumerate() {
                x[k] += alpha * (z_sub[c] - x[k]);
                if x[k] <= 1e-15 {
                    x[k] = 0.0;
                    passive[k] = false;
                }
            }
            if !passive.iter().any(|p| *p) {
                break;
            }
        }
    }
    x.iter().copied().collect()
}
