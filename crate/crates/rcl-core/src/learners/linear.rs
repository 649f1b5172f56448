//! Lasso and ridge regression by cyclic coordinate descent.
//!
//! Both solve
//!
//! ```text
//! min_{β₀, β}  (1/2N) ‖y − β₀ − X̃β‖²  +  λ·P(β)
//! ```
//!
//! on column-standardized covariates X̃ (mean 0, variance 1), with the
//! intercept β₀ unpenalized. For the lasso P(β) = ‖β‖₁ and the coordinate
//! update is the soft-threshold S(ρ_j, λ); for ridge P(β) = ½‖β‖² and the
//! update is ρ_j / (1 + λ). Because the columns are standardized,
//! (1/N)x̃ⱼᵀx̃ⱼ = 1 and ρ_j is just the partial residual correlation.
//! Coefficients are mapped back to the original covariate scale at the end.
//!
//! Convergence: the objective is non-increasing per coordinate step (each
//! step exactly minimizes the objective in one coordinate), and the sweep
//! loop stops when the largest coefficient change falls below `tol`.

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::util::sum_compensated;

/// Which penalty the coordinate descent applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    /// ℓ₁ (soft-thresholding; produces exact zeros).
    Lasso,
    /// ℓ₂ (uniform shrinkage).
    Ridge,
}

/// A fitted linear model on the original covariate scale.
#[derive(Debug, Clone)]
pub struct LinearFit {
    /// Intercept on the original scale.
    pub intercept: f64,
    /// Per-covariate slopes on the original scale.
    pub coefficients: Vec<f64>,
    /// Penalty that produced the fit.
    pub penalty: Penalty,
    /// Regularization strength λ.
    pub lambda: f64,
    /// Number of full coordinate sweeps performed.
    pub sweeps: usize,
    /// Penalized objective value after each sweep (non-increasing).
    pub objective_trace: Vec<f64>,
}

impl LinearFit {
    /// Predict ĝ(z) = β₀ + zᵀβ for one covariate row.
    pub fn predict_row(&self, z: &[f64]) -> f64 {
        self.intercept
            + z.iter()
                .zip(&self.coefficients)
                .map(|(zj, bj)| zj * bj)
                .sum::<f64>()
    }
}

/// Soft-threshold operator S(ρ, λ) = sign(ρ)·max(|ρ| − λ, 0).
#[inline]
pub fn soft_threshold(rho: f64, lambda: f64) -> f64 {
    if rho > lambda {
        rho - lambda
    } else if rho < -lambda {
        rho + lambda
    } else {
        0.0
    }
}

/// Column means and standard deviations used for standardization.
///
/// Near-constant columns (sd < 1e-12) are frozen: their standardized column
/// is identically zero, so their coefficient stays 0 and the intercept
/// absorbs them.
fn column_stats(x: &ArrayView2<'_, f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut sds = Vec::with_capacity(x.ncols());
    for col in x.columns() {
        let mean = sum_compensated(col.iter().copied()) / n;
        let var = sum_compensated(col.iter().map(|v| (v - mean) * (v - mean))) / n;
        means.push(mean);
        sds.push(var.sqrt());
    }
    (means, sds)
}

/// Fit a lasso or ridge regression by cyclic coordinate descent.
///
/// Errors on non-finite inputs, λ < 0, or fewer than 2 rows. `tol` is the
/// sweep-to-sweep max coefficient change at which iteration stops;
/// `max_sweeps` caps the loop.
pub fn fit_linear(
    x: &ArrayView2<'_, f64>,
    y: &[f64],
    penalty: Penalty,
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<LinearFit> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            what: "regression outcomes vs covariate rows",
            expected: n,
            got: y.len(),
        });
    }
    if n < 2 {
        return Err(Error::TooFewRows {
            what: "linear regression",
            needed: 2,
            got: n,
        });
    }
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "regularization strength must be nonnegative, got {lambda}"
        )));
    }
    if let Some(row) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput {
            what: "regression outcomes",
            row,
        });
    }
    for (row, r) in x.rows().into_iter().enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput {
                what: "regression covariates",
                row,
            });
        }
    }

    let (means, sds) = column_stats(x);
    // Standardized design, column-major for cache-friendly coordinate sweeps.
    let nf = n as f64;
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let col = x.column(j);
        if sds[j] < 1e-12 {
            columns.push(vec![0.0; n]);
        } else {
            columns.push(col.iter().map(|v| (v - means[j]) / sds[j]).collect());
        }
    }

    let y_mean = sum_compensated(y.iter().copied()) / nf;
    let mut beta = vec![0.0_f64; p];
    let mut beta0 = y_mean;
    // Residual r_m = y_m − β₀ − Σ_j x̃_mj β_j, maintained incrementally.
    let mut residual: Vec<f64> = y.iter().map(|v| v - beta0).collect();

    let objective = |residual: &[f64], beta: &[f64]| -> f64 {
        let rss = sum_compensated(residual.iter().map(|r| r * r)) / (2.0 * nf);
        let pen = match penalty {
            Penalty::Lasso => lambda * beta.iter().map(|b| b.abs()).sum::<f64>(),
            Penalty::Ridge => 0.5 * lambda * beta.iter().map(|b| b * b).sum::<f64>(),
        };
        rss + pen
    };

    let mut objective_trace = Vec::new();
    let mut sweeps = 0;
    for _ in 0..max_sweeps {
        sweeps += 1;
        let mut max_change = 0.0_f64;

        for j in 0..p {
            if sds[j] < 1e-12 {
                continue;
            }
            let col = &columns[j];
            let old = beta[j];
            // ρ_j = (1/N) x̃ⱼᵀ r + β_j, using (1/N) x̃ⱼᵀ x̃ⱼ = 1.
            let rho = sum_compensated(col.iter().zip(&*residual).map(|(c, r)| c * r)) / nf + old;
            let new = match penalty {
                Penalty::Lasso => soft_threshold(rho, lambda),
                Penalty::Ridge => rho / (1.0 + lambda),
            };
            if new != old {
                let delta = new - old;
                for (r, c) in residual.iter_mut().zip(col) {
                    *r -= delta * c;
                }
                beta[j] = new;
            }
            max_change = max_change.max((new - old).abs());
        }

        // Re-center the unpenalized intercept.
        let shift = sum_compensated(residual.iter().copied()) / nf;
        if shift != 0.0 {
            beta0 += shift;
            for r in residual.iter_mut() {
                *r -= shift;
            }
        }
        max_change = max_change.max(shift.abs());

        objective_trace.push(objective(&residual, &beta));
        if max_change < tol {
            break;
        }
    }

    // Map standardized coefficients back to the original covariate scale.
    let mut coefficients = vec![0.0_f64; p];
    let mut intercept = beta0;
    for j in 0..p {
        if sds[j] >= 1e-12 {
            coefficients[j] = beta[j] / sds[j];
            intercept -= beta[j] * means[j] / sds[j];
        }
    }

    Ok(LinearFit {
        intercept,
        coefficients,
        penalty,
        lambda,
        sweeps,
        objective_trace,
    })
}
