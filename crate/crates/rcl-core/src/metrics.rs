//! Evaluation metrics: ε_ATE, σ_ATE, and the reduction ratios.
//!
//! A replication's quality is the weighted relative error of its pairwise
//! effect matrix,
//!
//! ```text
//! ε = Σ_{i≠j} |θ̂^{i,j} − θ^{i,j}|  /  Σ_{i≠j} |θ^{i,j}|
//! ```
//!
//! summed over *ordered* pairs — both (i,j) and (j,i) appear, and the
//! factor 2 cancels, so this equals the unordered evaluation (a test
//! checks that against a brute-force loop). Non-finite estimates make ε
//! non-finite; whether such replications enter the aggregate or are
//! excluded-and-counted is a reporting convention, not a truth, so
//! [`aggregate`] exposes both.
//!
//! The headline comparisons are reduction ratios: R_DR compares RCL(2,2)
//! against direct regression, R_DML compares RCL(2,1) against the best of
//! the division-based baselines, each as ε-ratio minus one (negative =
//! RCL is better). An infinite competitor ε enters the min as +∞; if every
//! competitor is infinite while RCL is finite, the ratio is −1 (−100%),
//! the limiting value.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::AteMatrix;
use crate::util::{mean, sample_sd, sum_compensated};

/// Aggregated ε over replications, under one non-finite convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    /// Mean ε_ATE (NaN when nothing was aggregated).
    pub mean: f64,
    /// Bessel-corrected σ_ATE; absent below 2 usable replications.
    pub sd: Option<f64>,
    /// Replications whose ε was non-finite.
    pub nonfinite_count: usize,
    /// Replications that entered the mean.
    pub used: usize,
}

/// One report line: an (estimator, learner-combo) cell aggregated over
/// all replications, under both non-finite conventions.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    /// Estimator name, e.g. `RCL(2,1)`.
    pub estimator: String,
    /// Learner combination, e.g. `lasso+logistic`.
    pub learner: String,
    /// ε aggregated with non-finite replications propagating.
    pub epsilon: f64,
    /// σ under the propagating convention (absent if M < 2 or any ε was
    /// non-finite).
    pub sigma: Option<f64>,
    /// ε over finite replications only (NaN when none were finite).
    pub epsilon_finite: f64,
    /// σ over finite replications only.
    pub sigma_finite: Option<f64>,
    /// How many replications produced a non-finite ε.
    pub nonfinite_count: usize,
    /// How many replications errored before producing an ε.
    pub failed_count: usize,
    /// Mean wall-clock seconds per replication. Diagnostic only: report
    /// files never include it, so reruns stay byte-identical.
    pub wall_secs: f64,
}

/// The weighted relative error between an estimated and a true pairwise
/// matrix. Both must describe the same levels in the same order.
pub fn epsilon_ate_single(est: &AteMatrix, truth: &AteMatrix) -> Result<f64> {
    let n = truth.n_levels();
    if n < 2 {
        return Err(Error::TooFewRows {
            what: "pairwise error",
            needed: 2,
            got: n,
        });
    }
    if est.n_levels() != n || est.levels != truth.levels {
        return Err(Error::InvalidArgument(format!(
            "matrix levels disagree: {:?} vs {:?}",
            est.levels, truth.levels
        )));
    }
    let mut numerator_terms = Vec::with_capacity(n * n - n);
    let mut denominator_terms = Vec::with_capacity(n * n - n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            numerator_terms.push((est.get(i, j) - truth.get(i, j)).abs());
            denominator_terms.push(truth.get(i, j).abs());
        }
    }
    let denominator = sum_compensated(denominator_terms.iter().copied());
    if denominator == 0.0 {
        return Err(Error::ZeroTruthDenominator);
    }
    let numerator = if numerator_terms.iter().all(|t| t.is_finite()) {
        sum_compensated(numerator_terms.iter().copied())
    } else {
        numerator_terms.iter().sum()
    };
    Ok(numerator / denominator)
}

/// Mean and Bessel-corrected standard deviation of per-replication ε
/// values. With `finite_only`, non-finite entries are excluded and
/// counted; without it they propagate into the mean (and suppress σ).
pub fn aggregate(values: &[f64], finite_only: bool) -> Aggregate {
    let nonfinite_count = values.iter().filter(|v| !v.is_finite()).count();
    if finite_only {
        let kept: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        Aggregate {
            mean: if kept.is_empty() {
                f64::NAN
            } else {
                mean(&kept)
            },
            sd: sample_sd(&kept),
            nonfinite_count,
            used: kept.len(),
        }
    } else {
        Aggregate {
            mean: if values.is_empty() {
                f64::NAN
            } else if nonfinite_count == 0 {
                mean(values)
            } else {
                values.iter().sum::<f64>() / values.len() as f64
            },
            sd: if nonfinite_count == 0 {
                sample_sd(values)
            } else {
                None
            },
            nonfinite_count,
            used: values.len(),
        }
    }
}

/// Reduction ratios for one learner combination's rows.
///
/// R_DR = ε(RCL(2,2))/ε(DR) − 1;
/// R_DML = ε(RCL(2,1)) / min{ε(IPW), ε(AIPW), ε(DML), ε(DML-trim)} − 1,
/// where a non-finite competitor counts as +∞ and an all-infinite
/// competitor set with finite RCL(2,1) gives the limit −1.
pub fn reduction_ratios(rows: &[MetricRow]) -> Result<(f64, f64)> {
    let find = |name: &str| -> Option<f64> {
        rows.iter()
            .find(|r| r.estimator == name)
            .map(|r| r.epsilon)
    };
    let mut missing = Vec::new();
    let rcl22 = find("RCL(2,2)");
    let dr = find("DR");
    let rcl21 = find("RCL(2,1)");
    if rcl22.is_none() {
        missing.push("RCL(2,2)".to_string());
    }
    if dr.is_none() {
        missing.push("DR".to_string());
    }
    if rcl21.is_none() {
        missing.push("RCL(2,1)".to_string());
    }
    let competitors: Vec<f64> = ["IPW", "AIPW", "DML", "DML-trim"]
        .iter()
        .filter_map(|name| find(name))
        .collect();
    if competitors.is_empty() {
        missing.push("one of IPW/AIPW/DML/DML-trim".to_string());
    }
    if !missing.is_empty() {
        return Err(Error::MissingRows { missing });
    }

    let r_dr = rcl22.unwrap() / dr.unwrap() - 1.0;

    let best_competitor = competitors
        .iter()
        .map(|&e| if e.is_finite() { e } else { f64::INFINITY })
        .fold(f64::INFINITY, f64::min);
    let rcl21 = rcl21.unwrap();
    let r_dml = if best_competitor.is_infinite() && rcl21.is_finite() {
        -1.0
    } else {
        rcl21 / best_competitor - 1.0
    };
    Ok((r_dr, r_dml))
}
