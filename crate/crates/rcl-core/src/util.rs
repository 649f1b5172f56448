//! Small numeric helpers shared across modules.

/// Neumaier-compensated sum of a sequence of f64 terms.
///
/// The estimator identities this crate tests (e.g. the weight normalization
/// mean(A) = 1) are exact in real arithmetic; compensated summation keeps
/// them exact to ~1 ulp in floating point independent of sample size,
/// instead of degrading like N·ε with naive accumulation.
pub fn sum_compensated<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut compensation = 0.0_f64;
    for t in terms {
        let next = sum + t;
        if sum.abs() >= t.abs() {
            compensation += (sum - next) + t;
        } else {
            compensation += (t - next) + sum;
        }
        sum = next;
    }
    sum + compensation
}

/// Compensated arithmetic mean; 0 for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    sum_compensated(values.iter().copied()) / values.len() as f64
}

/// Bessel-corrected sample standard deviation; `None` when fewer than 2 values.
pub fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values);
    let ss = sum_compensated(values.iter().map(|v| (v - m) * (v - m)));
    Some((ss / (values.len() - 1) as f64).sqrt())
}

/// Median of a slice (NaNs sort last); `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Less));
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    })
}

/// Interquartile range via the nearest-rank quartiles; `None` below 4 values.
pub fn iqr(values: &[f64]) -> Option<f64> {
    if values.len() < 4 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Less));
    let q = |frac: f64| -> f64 {
        let pos = frac * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    };
    Some(q(0.75) - q(0.25))
}

/// Slope of the ordinary-least-squares line through (x, y) pairs.
///
/// Used for the log–log scaling diagnostics; panics on length mismatch.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "ols_slope needs paired samples");
    let mx = mean(x);
    let my = mean(y);
    let sxy = sum_compensated(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = sum_compensated(x.iter().map(|a| (a - mx) * (a - mx)));
    sxy / sxx
}
