//! First-degree LOWESS with tricube neighborhood weights and bisquare
//! robustness iterations.

use super::TemporalError;

pub const DEFAULT_FRAC: f64 = 0.3;
pub const DEFAULT_ROBUST_ITERS: usize = 3;

/// Smooths `y` over strictly ascending `x`, returning fitted values at each `x`.
///
/// Each fit uses the `ceil(frac * n)` nearest neighbors (at least two).
pub fn lowess(
    x: &[f64],
    y: &[f64],
    frac: f64,
    robust_iters: usize,
) -> Result<Vec<f64>, TemporalError> {
    let n = x.len();
    if n != y.len() {
        return Err(TemporalError::LengthMismatch { x: n, y: y.len() });
    }
    if n < 2 {
        return Err(TemporalError::TooFewPoints(n));
    }
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(TemporalError::InvalidFrac(frac));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) || x.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TemporalError::UnsortedX);
    }

    let k = ((frac * n as f64 - 1e-9).ceil() as usize).clamp(2, n);
    let mut robust = vec![1.0; n];
    let mut fitted = vec![0.0; n];
    let mut weights = vec![0.0; n];

    for iter in 0..=robust_iters {
        let mut left = 0;
        let mut right = k - 1;
        for i in 0..n {
            while right + 1 < n && x[right + 1] - x[i] < x[i] - x[left] {
                left += 1;
                right += 1;
            }
            fitted[i] = local_fit(x, y, i, left, right, &robust, &mut weights);
        }
        if iter == robust_iters {
            break;
        }
        let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let scale = 6.0 * median_abs(&residuals);
        let mean_abs = residuals.iter().map(|r| r.abs()).sum::<f64>() / n as f64;
        if scale <= 1e-7 * mean_abs || scale == 0.0 {
            // residuals already negligible; further passes change nothing
            break;
        }
        for (w, r) in robust.iter_mut().zip(&residuals) {
            let u = r / scale;
            *w = if u.abs() < 1.0 {
                (1.0 - u * u).powi(2)
            } else {
                0.0
            };
        }
    }
    Ok(fitted)
}

fn local_fit(
    x: &[f64],
    y: &[f64],
    i: usize,
    left: usize,
    right: usize,
    robust: &[f64],
    weights: &mut [f64],
) -> f64 {
    let xi = x[i];
    let radius = (xi - x[left]).max(x[right] - xi);
    let tricube = |d: f64| {
        let u = d / radius;
        if u < 1.0 {
            (1.0 - u * u * u).powi(3)
        } else {
            0.0
        }
    };
    let mut total = 0.0;
    for j in left..=right {
        weights[j] = tricube((x[j] - xi).abs()) * robust[j];
        total += weights[j];
    }
    if total <= 0.0 {
        // every neighbor was rejected as an outlier: plain tricube mean
        for j in left..=right {
            weights[j] = tricube((x[j] - xi).abs());
        }
        total = weights[left..=right].iter().sum();
        return (left..=right).map(|j| weights[j] * y[j]).sum::<f64>() / total;
    }
    let x_mean = (left..=right).map(|j| weights[j] * x[j]).sum::<f64>() / total;
    let y_mean = (left..=right).map(|j| weights[j] * y[j]).sum::<f64>() / total;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for j in left..=right {
        let dx = x[j] - x_mean;
        sxx += weights[j] * dx * dx;
        sxy += weights[j] * dx * (y[j] - y_mean);
    }
    if sxx <= 1e-12 * total * radius * radius {
        return y_mean;
    }
    y_mean + (sxy / sxx) * (xi - x_mean)
}

fn median_abs(values: &[f64]) -> f64 {
    let mut a: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    a.sort_by(f64::total_cmp);
    let n = a.len();
    if n % 2 == 1 {
        a[n / 2]
    } else {
        (a[n / 2 - 1] + a[n / 2]) / 2.0
    }
}
