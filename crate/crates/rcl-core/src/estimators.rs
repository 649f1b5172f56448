//! Point estimators θ̂ⁱ and pairwise ATE matrices.
//!
//! Every estimator consumes the same inputs: a dataset and the tabulated
//! per-row nuisance predictions ([`NuisanceValues`]) produced by the
//! learners layer — so a grid of estimators shares one tabulation pass.
//!
//! The baselines are the classical ones. DR averages the outcome model;
//! IPW reweights observed outcomes by 1/π̂; AIPW and DML combine both and
//! are algebraically identical (they are computed from their own formulas
//! and *tested* for equality, not aliased); DML-trim clamps π̂ into fixed
//! cutoffs before dividing. Division-based estimators inherit the score
//! layer's contract: a treated row with π̂ = 0 produces a signed non-finite
//! estimate, which is a legal, reportable outcome — never a panic.
//!
//! The RCL estimator evaluates θ̂ = (a) + (b) + (c):
//!
//! ```text
//! (a) (1/N) Σ_{all m}  ĝⁱ(z_m)                    — the DR part
//! (b) (1/N) Σ_{m∈ℐ}   (y_m − ĝⁱ(z_m)) · A_m       — factual residuals
//! (c) (1/R) Σ_{u≤R} (1/N) Σ_{m∈ℐᶜ} ξ̂_{m,u} · A_m — resampled residuals
//! ```
//!
//! where ℐ is the set of rows observed at the level, A is the polynomial
//! weight from the score engine with moments computed on this same
//! estimation sample, and each ξ̂_{m,u} is drawn uniformly *with
//! replacement* from the factual residual pool 𝒜̂ = {y_m − ĝⁱ(z_m) : m∈ℐ}.
//! With-replacement picking keeps |ℐᶜ| > |ℐ| legal and matches the i.i.d.
//! treatment of the resampled residuals in the variance analysis; the R
//! repetitions use one seeded sequential generator, so an estimate is
//! bit-reproducible from its seed.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::NuisanceValues;
use crate::model::{ObservationSet, TreatmentSpace};
use crate::score::{rcl_coefficients, residual_moments, weight_a};
use crate::seed;
use crate::util::sum_compensated;

/// Fewer treated rows than this triggers a warning: the residual pool 𝒜̂
/// is then so small that part (c) resamples mostly duplicates.
const SMALL_TREATED_SET: usize = 30;

/// Which estimator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Dr,
    Ipw,
    Aipw,
    Dml,
    DmlTrim,
    Rcl,
}

fn default_trim_low() -> f64 {
    0.01
}

fn default_trim_high() -> f64 {
    0.99
}

fn default_rcl_r() -> usize {
    2
}

fn default_rcl_k() -> usize {
    1
}

fn default_rcl_big_r() -> usize {
    100
}

/// Parameters of one RCL estimate: residual power r, orthogonality order
/// k, number of random pickings R, and the picking seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RclParams {
    #[serde(default = "default_rcl_r")]
    pub r: usize,
    #[serde(default = "default_rcl_k")]
    pub k: usize,
    /// Number of random pickings R.
    #[serde(default = "default_rcl_big_r")]
    pub big_r: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RclParams {
    fn default() -> Self {
        Self {
            r: 2,
            k: 1,
            big_r: 100,
            seed: 0,
        }
    }
}

/// A full estimator specification, flat enough to read from a config file.
///
/// `trim` applies only to `DmlTrim`; `rcl` applies only to `Rcl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    /// Lower trim cutoff for DML-trim.
    #[serde(default = "default_trim_low")]
    pub trim_low: f64,
    /// Upper trim cutoff for DML-trim.
    #[serde(default = "default_trim_high")]
    pub trim_high: f64,
    #[serde(default)]
    pub rcl: RclParams,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind) -> Self {
        Self {
            kind,
            trim_low: default_trim_low(),
            trim_high: default_trim_high(),
            rcl: RclParams::default(),
        }
    }

    /// An RCL spec with the given orders.
    pub fn rcl(r: usize, k: usize, big_r: usize, seed: u64) -> Self {
        Self {
            kind: EstimatorKind::Rcl,
            trim_low: default_trim_low(),
            trim_high: default_trim_high(),
            rcl: RclParams { r, k, big_r, seed },
        }
    }

    /// Validate the parameter ranges.
    pub fn check(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.trim_low)
            || self.trim_high > 1.0
            || self.trim_low >= self.trim_high
        {
            return Err(Error::InvalidArgument(format!(
                "trim cutoffs ({}, {}) must satisfy 0 ≤ low < high ≤ 1",
                self.trim_low, self.trim_high
            )));
        }
        if self.rcl.big_r < 1 {
            return Err(Error::InvalidArgument(
                "RCL picking count R must be at least 1".to_string(),
            ));
        }
        Ok(())
    }

    /// Report name, e.g. `DML-trim` or `RCL(2,1)`.
    pub fn name(&self) -> String {
        match self.kind {
            EstimatorKind::Dr => "DR".to_string(),
            EstimatorKind::Ipw => "IPW".to_string(),
            EstimatorKind::Aipw => "AIPW".to_string(),
            EstimatorKind::Dml => "DML".to_string(),
            EstimatorKind::DmlTrim => "DML-trim".to_string(),
            EstimatorKind::Rcl => format!("RCL({},{})", self.rcl.r, self.rcl.k),
        }
    }
}

/// One level's point estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelEstimate {
    /// Treatment level the estimate refers to.
    pub level: String,
    /// θ̂ⁱ; may be non-finite for division-based estimators.
    pub theta_hat: f64,
    /// RCL's (a, b, c) breakdown; `None` for the baselines. The invariant
    /// `theta_hat == a + b + c` holds bitwise.
    pub components: Option<(f64, f64, f64)>,
}

/// All pairwise effects θ̂^{i,j} = θ̂ⁱ − θ̂ʲ over one treatment space.
#[derive(Debug, Clone, PartialEq)]
pub struct AteMatrix {
    /// Level labels in matrix order.
    pub levels: Vec<String>,
    /// matrix[(i, j)] = θ̂ⁱ − θ̂ʲ; diagonal exactly 0 even for non-finite
    /// estimates.
    pub matrix: Array2<f64>,
}

impl AteMatrix {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// θ̂^{i,j} by level index.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }
}

/// Shared input validation; returns the level's column index.
fn level_index(
    values: &NuisanceValues,
    data: &ObservationSet,
    level: &str,
) -> Result<usize> {
    if values.n_rows() != data.n_rows() {
        return Err(Error::DimensionMismatch {
            what: "nuisance rows vs dataset rows",
            expected: data.n_rows(),
            got: values.n_rows(),
        });
    }
    if values.n_levels() != data.treatment_space.n_levels() {
        return Err(Error::DimensionMismatch {
            what: "nuisance levels vs treatment space",
            expected: data.treatment_space.n_levels(),
            got: values.n_levels(),
        });
    }
    data.treatment_space.require(level)
}

/// Mean that keeps compensated precision on finite input but lets a
/// non-finite term propagate as plain IEEE arithmetic would.
fn mean_with_nonfinite(terms: &[f64]) -> f64 {
    if terms.iter().all(|t| t.is_finite()) {
        sum_compensated(terms.iter().copied()) / terms.len().max(1) as f64
    } else {
        terms.iter().sum::<f64>() / terms.len().max(1) as f64
    }
}

/// Division with the continuous-extension convention: a zero numerator
/// contributes 0 no matter the denominator.
fn ratio(numerator: f64, denominator: f64) -> f64 {
    if numerator == 0.0 {
        0.0
    } else {
        numerator / denominator
    }
}

/// Direct regression: θ̂ = (1/N) Σ ĝⁱ(z_m).
pub fn estimate_dr(
    values: &NuisanceValues,
    data: &ObservationSet,
    level: &str,
) -> Result<LevelEstimate> {
    let i = level_index(values, data, level)?;
    let theta = mean_with_nonfinite(&values.g_hat.column(i).to_vec());
    Ok(LevelEstimate {
        level: level.to_string(),
        theta_hat: theta,
        components: None,
    })
}

/// Inverse propensity weighting: θ̂ = (1/N) Σ y_m·𝟙{d_m=dⁱ}/π̂ⁱ(z_m).
pub fn estimate_ipw(
    values: &NuisanceValues,
    data: &ObservationSet,
    level: &str,
) -> Result<LevelEstimate> {
    let i = level_index(values, data, level)?;
    let terms: Vec<f64> = (0..data.n_rows())
        .map(|m| {
            let treated = data.treatments[m] == level;
            if treated {
                ratio(data.outcomes[m], values.pi_hat[(m, i)])
            } else {
                0.0
            }
        })
        .collect();
    Ok(LevelEstimate {
        level: level.to_string(),
        theta_hat: mean_with_nonfinite(&terms),
        components: None,
    })
}

/// Double machine learning: θ̂ = (1/N)Σ ĝⁱ + (1/N)Σ 𝟙(y−ĝⁱ)/π̂ⁱ, with π̂
/// clamped into `trim` cutoffs when present.
pub fn estimate_dml(
    values: &NuisanceValues,
    data: &ObservationSet,
    level: &str,
    trim: Option<(f64, f64)>,
) -> Result<LevelEstimate> {
    let i = level_index(values, data, level)?;
    if let Some((low, high)) = trim {
        if !(0.0..1.0).contains(&low) || high > 1.0 || low >= high {
            return Err(Error::InvalidArgument(format!(
                "trim cutoffs ({low}, {high}) must satisfy 0 ≤ low < high ≤ 1"
            )));
        }
    }
    let terms: Vec<f64> = (0..data.n_rows())
        .map(|m| {
            let g = values.g_hat[(m, i)];
            let treated = data.treatments[m] == level;
            let correction = if treated {
                let pi = match trim {
                    Some((low, high)) => values.pi_hat[(m, i)].clamp(low, high),
                    None => values.pi_hat[(m, i)],
                };
                ratio(data.outcomes[m] - g, pi)
            } else {
                0.0
            };
            g + correction
        })
        .collect();
    Ok(LevelEstimate {
        level: level.to_string(),
        theta_hat: mean_with_nonfinite(&terms),
        components: None,
    })
}

/// Augmented IPW: θ̂ = (1/N) Σ [ y_m·𝟙/π̂ⁱ − (𝟙−π̂ⁱ)·ĝⁱ/π̂ⁱ ].
///
/// Per-term algebra shows this equals untrimmed DML; both are computed
/// from their own formulas and equality is a test, not an alias.
pub fn estimate_aipw(
    values: &NuisanceValues,
    data: &ObservationSet,
    level: &str,
) -> Result<LevelEstimate> {
    let i = level_index(values, data, level)?;
    let terms: Vec<f64> = (0..data.n_rows())
        .map(|m| {
            let g = values.g_hat[(m, i)];
            let pi = values.pi_hat[(m, i)];
            let d = f64::from(data.treatments[m] == level);
            ratio(data.outcomes[m] * d, pi) - ratio((d - pi) * g, pi)
        })
        .collect();
    Ok(LevelEstimate {
        level: level.to_string(),
        theta_hat: mean_with_nonfinite(&terms),
        components: None,
    })
}

/// The RCL estimator: θ̂ = (a) + (b) + (c) as described at module level.
///
/// Errors when no row is observed at the level (the residual pool 𝒜̂ would
/// be empty); warns when fewer than 30 are. Deterministic given
/// `params.seed`.
pub fn estimate_rcl(
    values: &NuisanceValues,
    data: &ObservationSet,
    level: &str,
    params: &RclParams,
) -> Result<LevelEstimate> {
    let i = level_index(values, data, level)?;
    if params.big_r < 1 {
        return Err(Error::InvalidArgument(
            "RCL picking count R must be at least 1".to_string(),
        ));
    }
    let n = data.n_rows();
    let indicator: Vec<u8> = (0..n)
        .map(|m| u8::from(data.treatments[m] == level))
        .collect();
    let treated: Vec<usize> = (0..n).filter(|&m| indicator[m] == 1).collect();
    let untreated: Vec<usize> = (0..n).filter(|&m| indicator[m] == 0).collect();
    if treated.is_empty() {
        return Err(Error::NoTreatedUnits {
            level: level.to_string(),
        });
    }
    if treated.len() < SMALL_TREATED_SET {
        log::warn!(
            "only {} rows observed at level `{level}`; the residual pool for \
             random picking is very small",
            treated.len()
        );
    }

    let propensity: Vec<f64> = (0..n).map(|m| values.pi_hat[(m, i)]).collect();
    let moments = residual_moments(&indicator, &propensity, params.r, params.k)?.with_level(level);
    let coeffs = rcl_coefficients(&moments, params.r, params.k)?;
    let weights: Vec<f64> = (0..n)
        .map(|m| weight_a(indicator[m], propensity[m], &coeffs, &moments))
        .collect();

    // Part (a): the DR term over all rows.
    let part_a = sum_compensated(values.g_hat.column(i).iter().copied()) / n as f64;

    // Part (b): factual residuals, weighted.
    let part_b = sum_compensated(
        treated
            .iter()
            .map(|&m| (data.outcomes[m] - values.g_hat[(m, i)]) * weights[m]),
    ) / n as f64;

    // Part (c): R rounds of uniform with-replacement picks from the
    // factual residual pool, assigned to the complement rows.
    let pool: Vec<f64> = treated
        .iter()
        .map(|&m| data.outcomes[m] - values.g_hat[(m, i)])
        .collect();
    let part_c = if untreated.is_empty() {
        0.0
    } else {
        let mut rng = seed::rng(seed::derive(params.seed, &[seed::stream::PICK]));
        let round_sums = (0..params.big_r).map(|_| {
            sum_compensated(
                untreated
                    .iter()
                    .map(|&m| pool[rng.gen_range(0..pool.len())] * weights[m]),
            ) / n as f64
        });
        sum_compensated(round_sums) / params.big_r as f64
    };

    Ok(LevelEstimate {
        level: level.to_string(),
        theta_hat: part_a + part_b + part_c,
        components: Some((part_a, part_b, part_c)),
    })
}

/// Dispatch on an [`EstimatorSpec`].
pub fn estimate(
    spec: &EstimatorSpec,
    values: &NuisanceValues,
    data: &ObservationSet,
    level: &str,
) -> Result<LevelEstimate> {
    spec.check()?;
    match spec.kind {
        EstimatorKind::Dr => estimate_dr(values, data, level),
        EstimatorKind::Ipw => estimate_ipw(values, data, level),
        EstimatorKind::Aipw => estimate_aipw(values, data, level),
        EstimatorKind::Dml => estimate_dml(values, data, level, None),
        EstimatorKind::DmlTrim => {
            estimate_dml(values, data, level, Some((spec.trim_low, spec.trim_high)))
        }
        EstimatorKind::Rcl => estimate_rcl(values, data, level, &spec.rcl),
    }
}

/// Assemble the pairwise matrix θ̂^{i,j} = θ̂ⁱ − θ̂ʲ from per-level
/// estimates. Every level of the space must be present exactly once; the
/// diagonal is set to 0 explicitly so non-finite estimates cannot turn it
/// into NaN.
pub fn ate_matrix(estimates: &[LevelEstimate], space: &TreatmentSpace) -> Result<AteMatrix> {
    let n = space.n_levels();
    let mut theta = vec![f64::NAN; n];
    let mut seen = vec![false; n];
    for est in estimates {
        let i = space.require(&est.level)?;
        theta[i] = est.theta_hat;
        seen[i] = true;
    }
    for (i, &ok) in seen.iter().enumerate() {
        if !ok {
            return Err(Error::MissingLevel {
                level: space.labels()[i].to_string(),
            });
        }
    }
    let mut matrix = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            matrix[(i, j)] = if i == j { 0.0 } else { theta[i] - theta[j] };
        }
    }
    Ok(AteMatrix {
        levels: space.labels().iter().map(|s| s.to_string()).collect(),
        matrix,
    })
}
