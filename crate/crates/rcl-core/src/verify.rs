//! Numerical certification of the moment and orthogonality conditions.
//!
//! A score ψ(W; ϑ, ϱ) with nuisance pair ϱ = (𝓰, a) earns its robustness
//! claims through two properties, and this module *measures* both instead
//! of trusting them:
//!
//! 1. **Moment condition** — E[ψ] = 0 at the true effect and true
//!    nuisances. Checked by plain Monte Carlo: [`mc_moment_check`] draws a
//!    synthetic sample, evaluates ψ at the truth, and reports mean ± SE.
//!
//! 2. **Orthogonality up to order k** — the mixed Gateaux derivatives
//!    D^α E[ψ(𝓰 + t·h₁, a + s·h₂)] for multi-indices α = (α₁, α₂) with
//!    1 ≤ ‖α‖₁ ≤ k vanish at the truth. [`fd_orthogonality`] estimates
//!    each derivative by central finite differences over a 3-scale step
//!    grid with Richardson extrapolation and common random numbers, and
//!    compares it against a noise-aware tolerance max(5e−3, 3·SE).
//!
//! Every finite-difference combination is linear, so a per-sample
//! derivative contribution φ_m is carried through the whole extrapolation;
//! the reported SE is sd(φ)/√N, which honestly reflects the
//! common-random-number correlation across perturbed evaluations.
//!
//! Two deliberate choices keep the checks faithful to the estimators as
//! implemented:
//!
//! - The verifier always *samples* treatment from the true propensities
//!   (overriding an argmax-assignment configuration), because the moment
//!   and orthogonality conditions quantify over the joint law with
//!   D | Z ~ a(Z); a deterministic assignment rule changes E[𝟙|Z] and
//!   would fail every division-based score for the wrong reason.
//! - For RCL scores, the moments m_q inside the weight A are computed
//!   once at the truth and held fixed while (𝓰, a) are perturbed: they
//!   play the role of coefficients in the weight's definition, not of a
//!   nuisance being differentiated.
//! - ψ is evaluated on the level's *potential* outcome for every row
//!   (synthetic truth makes it available). That is the variable the
//!   conditions quantify over; substituting the factual outcome would
//!   leak the other levels' surfaces into the residual exactly where the
//!   RCL weight is nonzero. The estimator's resampling surrogate for
//!   those rows is validated separately by the κ-gap in
//!   [`consistency_sweep`].
//!
//! The expected classification, which tests pin down: DR fails α = (1,0)
//! with derivative exactly −1 under the constant direction h₁ ≡ 1; IPW
//! fails α = (0,1); DML passes all ‖α‖₁ = 1; RCL(r,k) passes all
//! ‖α‖₁ ≤ k while some order-(k+1) derivative stays visibly nonzero — the
//! check has power, it is not vacuously green.

use crate::dgp::{generate, Assignment, DgpConfig};
use crate::error::{Error, Result};
use crate::estimators::{estimate_dml, estimate_dr, estimate_ipw, estimate_rcl, RclParams};
use crate::model::ObservationSet;
use crate::score::{
    rcl_coefficients, residual_moments, score_value, weight_a, RclCoefficients, ResidualMoments,
    ScoreKind,
};
use crate::seed;
use crate::util::{iqr, median, sum_compensated};

/// Absolute floor of the orthogonality tolerance.
const TOL_FLOOR: f64 = 5e-3;

/// A perturbation direction pair (h₁ for the outcome model, h₂ for the
/// propensity) plus the finite-difference step grid.
///
/// Directions must be bounded by 1 in magnitude on the sampled
/// covariates; steps must provide at least 3 scales for the two-level
/// Richardson extrapolation.
pub struct PerturbationDirection {
    /// h₁: z → direction for 𝓰.
    pub g_direction: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    /// h₂: z → direction for a.
    pub pi_direction: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    /// Step sizes, largest first; consecutive ratios must be √10 for the
    /// extrapolation weights to apply.
    pub steps: Vec<f64>,
}

impl PerturbationDirection {
    /// Constant directions (h₁ ≡ g, h₂ ≡ pi) with the default step grid
    /// {10⁻¹, 10⁻¹·⁵, 10⁻²}.
    pub fn constant(g: f64, pi: f64) -> Self {
        Self {
            g_direction: Box::new(move |_| g),
            pi_direction: Box::new(move |_| pi),
            steps: default_steps(),
        }
    }
}

impl Default for PerturbationDirection {
    /// h₁ ≡ 1, h₂ ≡ 0.5: the canonical directions used by the reference
    /// checks (h₂ stays at 0.5 so perturbed propensities keep a margin
    /// inside (0,1)).
    fn default() -> Self {
        Self::constant(1.0, 0.5)
    }
}

fn default_steps() -> Vec<f64> {
    vec![1e-1, 10f64.powf(-1.5), 1e-2]
}

/// One derivative estimate in an orthogonality report.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoEntry {
    /// Multi-index (α₁ for 𝓰, α₂ for a).
    pub alpha: (usize, usize),
    /// Extrapolated derivative estimate.
    pub value: f64,
    /// Monte-Carlo standard error of the estimate.
    pub se: f64,
    /// Tolerance max(5e−3, 3·SE) the estimate was compared against.
    pub tol: f64,
    /// |value| ≤ tol.
    pub pass: bool,
    /// Whether ‖α‖₁ ≤ the requested order (orders above are reported to
    /// demonstrate the check's power, and are allowed to fail).
    pub required: bool,
}

/// Orthogonality verdicts for one score on one treatment level.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoReport {
    pub kind: ScoreKind,
    pub level: String,
    /// The order k whose ball ‖α‖₁ ≤ k had to pass.
    pub order: usize,
    /// Monte-Carlo sample size behind the estimates.
    pub n: usize,
    /// `(bin, n_bins)` when this report is one stratum of a stratified
    /// run; `None` for the plain unconditional check.
    pub stratum: Option<(usize, usize)>,
    pub entries: Vec<OrthoEntry>,
}

impl OrthoReport {
    /// Entry for a multi-index, if present.
    pub fn entry(&self, alpha: (usize, usize)) -> Option<&OrthoEntry> {
        self.entries.iter().find(|e| e.alpha == alpha)
    }

    /// True when every required entry passes.
    pub fn required_pass(&self) -> bool {
        self.entries.iter().filter(|e| e.required).all(|e| e.pass)
    }
}

/// The multi-index ball {α : 1 ≤ ‖α‖₁ ≤ max_order}, ordered by total
/// order then lexicographically.
pub fn alpha_ball(max_order: usize) -> Vec<(usize, usize)> {
    let mut ball = Vec::new();
    for total in 1..=max_order {
        for a1 in (0..=total).rev() {
            ball.push((a1, total - a1));
        }
    }
    ball
}

/// Result of a Monte-Carlo moment-condition check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentCheck {
    /// Sample mean of ψ at the truth.
    pub mean: f64,
    /// Standard error of that mean.
    pub se: f64,
    /// Sample size used.
    pub n: usize,
}

impl MomentCheck {
    /// The noise-aware verdict |mean| ≤ 3·SE.
    pub fn passes(&self) -> bool {
        self.mean.abs() <= 3.0 * self.se
    }
}

/// Evaluation context shared by the verifier's checks: a sampled dataset
/// with its truth, restricted to one level's ingredients.
struct TruthContext {
    data: ObservationSet,
    indicator: Vec<u8>,
    pi_true: Vec<f64>,
    g_true: Vec<f64>,
    /// The level's potential outcome on every row. The conditions under
    /// test quantify over this variable — the weight A is nonzero on
    /// unassigned rows, where the factual outcome would smuggle in the
    /// other levels' surfaces. (The estimator's resampling surrogate for
    /// these rows is checked separately by the κ-gap sweep.)
    y_potential: Vec<f64>,
    theta: f64,
    rcl: Option<(RclCoefficients, ResidualMoments)>,
}

fn build_context(
    kind: ScoreKind,
    config: &DgpConfig,
    level: &str,
    n: usize,
    seed_value: u64,
) -> Result<TruthContext> {
    let mut config = config.clone();
    config.n = n;
    config.seed = seed::derive(seed_value, &[seed::stream::VERIFY]);
    // The conditions under test quantify over D | Z ~ a(Z).
    config.assignment = Assignment::Sample;
    let (data, truth) = generate(&config)?;
    let level_index = data.treatment_space.require(level)?;
    let indicator: Vec<u8> = truth
        .assigned
        .iter()
        .map(|&i| u8::from(i == level_index))
        .collect();
    let pi_true: Vec<f64> = truth.propensities.column(level_index).to_vec();
    let g_true: Vec<f64> = truth.surfaces.column(level_index).to_vec();
    let y_potential: Vec<f64> = truth.potential_outcomes.column(level_index).to_vec();
    let theta = truth.theta[level_index];
    let rcl = match kind {
        ScoreKind::Rcl { r, k } => {
            let moments = residual_moments(&indicator, &pi_true, r, k)?.with_level(level);
            let coeffs = rcl_coefficients(&moments, r, k)?;
            Some((coeffs, moments))
        }
        _ => None,
    };
    Ok(TruthContext {
        data,
        indicator,
        pi_true,
        g_true,
        y_potential,
        theta,
        rcl,
    })
}

impl TruthContext {
    /// Per-sample ψ with the nuisances shifted by (dg, dpi) at row m.
    fn psi(&self, kind: ScoreKind, m: usize, dg: f64, dpi: f64, step: f64) -> Result<f64> {
        let g = self.g_true[m] + dg;
        let pi = self.pi_true[m] + dpi;
        if dpi != 0.0 && !(pi > 0.0 && pi < 1.0) {
            return Err(Error::StepTooLarge {
                step,
                value: pi,
            });
        }
        score_value(
            kind,
            self.theta,
            self.y_potential[m],
            self.indicator[m],
            g,
            pi,
            self.rcl.as_ref().map(|(c, mo)| (c, mo)),
        )
    }
}

/// Monte-Carlo check of E[ψ] = 0 at the truth.
///
/// Draws `n` rows from the configured process (with sampled assignment),
/// evaluates ψ at (θ_true, true nuisances), and returns mean and SE; the
/// caller's pass rule is |mean| ≤ 3·SE ([`MomentCheck::passes`]).
pub fn mc_moment_check(
    kind: ScoreKind,
    config: &DgpConfig,
    level: &str,
    n: usize,
    seed_value: u64,
) -> Result<MomentCheck> {
    if n < 1000 {
        return Err(Error::TooFewRows {
            what: "moment-condition Monte Carlo",
            needed: 1000,
            got: n,
        });
    }
    let ctx = build_context(kind, config, level, n, seed_value)?;
    let mut values = Vec::with_capacity(n);
    for m in 0..n {
        values.push(ctx.psi(kind, m, 0.0, 0.0, 0.0)?);
    }
    let mean = sum_compensated(values.iter().copied()) / n as f64;
    let variance = sum_compensated(values.iter().map(|v| (v - mean) * (v - mean)))
        / (n as f64 - 1.0);
    Ok(MomentCheck {
        mean,
        se: (variance / n as f64).sqrt(),
        n,
    })
}

/// Central-difference stencil (offset, weight) pairs for the ∂^order/∂x^order
/// operator, each with O(step²) truncation error.
fn axis_stencil(order: usize) -> Vec<(i32, f64)> {
    match order {
        0 => vec![(0, 1.0)],
        1 => vec![(-1, -0.5), (1, 0.5)],
        2 => vec![(-1, 1.0), (0, -2.0), (1, 1.0)],
        3 => vec![(-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)],
        _ => unreachable!("stencils are defined for axis orders ≤ 3"),
    }
}

/// Highest axis order the stencil table supports.
const MAX_AXIS_ORDER: usize = 3;

/// Per-sample derivative contributions φ_m for every α in the ball, after
/// two-level Richardson extrapolation over the step grid.
fn fd_per_sample(
    kind: ScoreKind,
    ctx: &TruthContext,
    direction: &PerturbationDirection,
    max_total_order: usize,
) -> Result<Vec<((usize, usize), Vec<f64>)>> {
    let steps = &direction.steps;
    if steps.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "the extrapolation needs at least 3 step scales, got {}",
            steps.len()
        )));
    }
    let mut steps = steps.clone();
    steps.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for w in steps.windows(2) {
        let ratio = w[0] / w[1];
        if !(ratio > 3.15 && ratio < 3.17) {
            return Err(Error::InvalidArgument(format!(
                "step scales must descend by √10, got ratio {ratio}"
            )));
        }
    }

    let n = ctx.data.n_rows();
    let mut h1 = Vec::with_capacity(n);
    let mut h2 = Vec::with_capacity(n);
    for m in 0..n {
        let row = ctx.data.covariates.row(m);
        let z = row.as_slice().expect("row view is contiguous");
        let v1 = (direction.g_direction)(z);
        let v2 = (direction.pi_direction)(z);
        for (name, v) in [("g", v1), ("pi", v2)] {
            if !v.is_finite() || v.abs() > 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name}-direction value {v} at row {m} leaves [−1, 1]"
                )));
            }
        }
        h1.push(v1);
        h2.push(v2);
    }

    let mut out = Vec::new();
    for alpha in alpha_ball(max_total_order) {
        let (a1, a2) = alpha;
        if a1 > MAX_AXIS_ORDER || a2 > MAX_AXIS_ORDER {
            return Err(Error::InvalidArgument(format!(
                "axis order {} exceeds the stencil table (≤ {MAX_AXIS_ORDER})",
                a1.max(a2)
            )));
        }
        let s1 = axis_stencil(a1);
        let s2 = axis_stencil(a2);

        // One per-sample derivative estimate per step scale.
        let mut per_step: Vec<Vec<f64>> = Vec::with_capacity(steps.len());
        for &step in &steps {
            let scale = step.powi(a1 as i32) * step.powi(a2 as i32);
            let mut phi = vec![0.0_f64; n];
            for &(i_off, w1) in &s1 {
                for &(j_off, w2) in &s2 {
                    let w = w1 * w2;
                    for (m, acc) in phi.iter_mut().enumerate() {
                        let dg = f64::from(i_off) * step * h1[m];
                        let dpi = f64::from(j_off) * step * h2[m];
                        *acc += w * ctx.psi(kind, m, dg, dpi, step)?;
                    }
                }
            }
            phi.iter_mut().for_each(|v| *v /= scale);
            per_step.push(phi);
        }

        // Richardson over the √10 ladder: first level removes the O(h²)
        // term (factor 10), second the O(h⁴) term (factor 100); all
        // combinations stay per-sample.
        let level1: Vec<Vec<f64>> = per_step
            .windows(2)
            .map(|w| {
                w[0].iter()
                    .zip(&w[1])
                    .map(|(&big, &small)| (10.0 * small - big) / 9.0)
                    .collect()
            })
            .collect();
        let refined: Vec<f64> = level1[0]
            .iter()
            .zip(&level1[1])
            .map(|(&big, &small)| (100.0 * small - big) / 99.0)
            .collect();
        out.push((alpha, refined));
    }
    Ok(out)
}

fn entries_from_samples(
    per_sample: &[((usize, usize), Vec<f64>)],
    rows: Option<&[usize]>,
    order: usize,
) -> Vec<OrthoEntry> {
    per_sample
        .iter()
        .map(|(alpha, phi)| {
            let selected: Vec<f64> = match rows {
                Some(idx) => idx.iter().map(|&m| phi[m]).collect(),
                None => phi.clone(),
            };
            let n = selected.len();
            let mean = sum_compensated(selected.iter().copied()) / n as f64;
            let variance = sum_compensated(selected.iter().map(|v| (v - mean) * (v - mean)))
                / (n as f64 - 1.0).max(1.0);
            let se = (variance / n as f64).sqrt();
            let tol = TOL_FLOOR.max(3.0 * se);
            OrthoEntry {
                alpha: *alpha,
                value: mean,
                se,
                tol,
                pass: mean.abs() <= tol,
                required: alpha.0 + alpha.1 <= order,
            }
        })
        .collect()
}

/// Estimate every mixed derivative D^α E[ψ] for 1 ≤ ‖α‖₁ ≤ order+1 and
/// compare the required ones (‖α‖₁ ≤ order) against max(5e−3, 3·SE).
///
/// Orders above `order` appear in the report as power checks and may
/// fail. Errors when a perturbed propensity leaves (0,1) — use a smaller
/// step or direction — or when a direction exceeds magnitude 1.
pub fn fd_orthogonality(
    kind: ScoreKind,
    config: &DgpConfig,
    level: &str,
    direction: &PerturbationDirection,
    order: usize,
    n: usize,
    seed_value: u64,
) -> Result<OrthoReport> {
    let ctx = build_context(kind, config, level, n, seed_value)?;
    let per_sample = fd_per_sample(kind, &ctx, direction, order + 1)?;
    Ok(OrthoReport {
        kind,
        level: level.to_string(),
        order,
        n,
        stratum: None,
        entries: entries_from_samples(&per_sample, None, order),
    })
}

/// Stratified variant: the same per-sample derivative contributions,
/// re-aggregated within 4 quantile bins of the first covariate. Probes
/// the *conditional* version of the orthogonality statement, which the
/// unconditional mean can mask.
pub fn fd_orthogonality_stratified(
    kind: ScoreKind,
    config: &DgpConfig,
    level: &str,
    direction: &PerturbationDirection,
    order: usize,
    n: usize,
    seed_value: u64,
) -> Result<Vec<OrthoReport>> {
    const BINS: usize = 4;
    let ctx = build_context(kind, config, level, n, seed_value)?;
    let per_sample = fd_per_sample(kind, &ctx, direction, order + 1)?;

    let mut by_z1: Vec<usize> = (0..ctx.data.n_rows()).collect();
    by_z1.sort_by(|&a, &b| {
        ctx.data.covariates[(a, 0)]
            .partial_cmp(&ctx.data.covariates[(b, 0)])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let chunk = by_z1.len().div_ceil(BINS);
    let mut reports = Vec::with_capacity(BINS);
    for (bin, rows) in by_z1.chunks(chunk).enumerate() {
        reports.push(OrthoReport {
            kind,
            level: level.to_string(),
            order,
            n: rows.len(),
            stratum: Some((bin, BINS)),
            entries: entries_from_samples(&per_sample, Some(rows), order),
        });
    }
    Ok(reports)
}

/// One sample-size point of a consistency sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// Full generated sample size (estimation uses the held-out half).
    pub n: usize,
    /// Median |θ̂ − θ_true| across seeds.
    pub median_abs_error: f64,
    /// Interquartile range of the absolute error, when ≥ 4 seeds.
    pub iqr: Option<f64>,
    /// Median |κ̂ − κ^{CF}| across seeds (RCL only): the gap between the
    /// resampled part (c) and the same weighted sum evaluated with the
    /// true counterfactual outcomes.
    pub median_kappa_gap: Option<f64>,
}

/// Error-vs-N sweep at exact nuisances.
///
/// For each N in the grid and each seed, a fresh dataset of N rows is
/// generated; the estimator runs on the second half of the rows while
/// θ_true stays the full-sample truth — the held-out half keeps pure
/// sampling noise visible (estimating on the truth-defining rows would
/// make the direct-regression error identically zero).
pub fn consistency_sweep(
    kind: ScoreKind,
    config: &DgpConfig,
    level: &str,
    n_grid: &[usize],
    seeds: &[u64],
) -> Result<Vec<SweepPoint>> {
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "the sample-size grid must be strictly increasing".to_string(),
        ));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "the consistency sweep needs at least one seed".to_string(),
        ));
    }

    let mut points = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut errors = Vec::with_capacity(seeds.len());
        let mut gaps = Vec::new();
        for &s in seeds {
            let mut c = config.clone();
            c.n = n;
            c.seed = seed::derive(s, &[seed::stream::DGP]);
            let (data, truth) = generate(&c)?;
            let i = data.treatment_space.require(level)?;
            let theta_true = truth.theta[i];

            let eval_rows: Vec<usize> = (n / 2..n).collect();
            let eval_data = data.subset(&eval_rows);
            let values = crate::learners::tabulate(&truth.exact_nuisances()?, &data)?
                .subset(&eval_rows);

            let estimate = match kind {
                ScoreKind::Dr => estimate_dr(&values, &eval_data, level)?,
                ScoreKind::Ipw => estimate_ipw(&values, &eval_data, level)?,
                ScoreKind::Dml => estimate_dml(&values, &eval_data, level, None)?,
                ScoreKind::Rcl { r, k } => {
                    let params = RclParams {
                        r,
                        k,
                        big_r: 100,
                        seed: seed::derive(s, &[seed::stream::PICK]),
                    };
                    estimate_rcl(&values, &eval_data, level, &params)?
                }
            };
            errors.push((estimate.theta_hat - theta_true).abs());

            if let (ScoreKind::Rcl { r, k }, Some((_, _, part_c))) =
                (kind, estimate.components)
            {
                // κ^{CF}: the part-(c) sum with true counterfactual
                // outcomes in place of resampled residuals.
                let indicator: Vec<u8> = eval_data
                    .treatments
                    .iter()
                    .map(|d| u8::from(d == level))
                    .collect();
                let pi: Vec<f64> = (0..eval_data.n_rows())
                    .map(|m| values.pi_hat[(m, i)])
                    .collect();
                let moments = residual_moments(&indicator, &pi, r, k)?;
                let coeffs = rcl_coefficients(&moments, r, k)?;
                let kappa_cf = sum_compensated((0..eval_data.n_rows()).filter(|&m| indicator[m] == 0).map(
                    |m| {
                        let global_row = eval_rows[m];
                        let y_cf = truth.potential_outcomes[(global_row, i)];
                        let residual = y_cf - values.g_hat[(m, i)];
                        residual * weight_a(0, pi[m], &coeffs, &moments)
                    },
                )) / eval_data.n_rows() as f64;
                gaps.push((part_c - kappa_cf).abs());
            }
        }
        points.push(SweepPoint {
            n,
            median_abs_error: median(&errors).expect("at least one seed"),
            iqr: iqr(&errors),
            median_kappa_gap: median(&gaps),
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> DgpConfig {
        DgpConfig::new(0, 5, 1.0, 0)
    }

    #[test]
    fn ball_enumerates_orders() {
        assert_eq!(alpha_ball(1), vec![(1, 0), (0, 1)]);
        assert_eq!(
            alpha_ball(2),
            vec![(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        );
        assert_eq!(alpha_ball(3).len(), 9);
    }

    #[test]
    fn moment_condition_holds_for_dr_dml_and_rcl() {
        for kind in [
            ScoreKind::Dr,
            ScoreKind::Dml,
            ScoreKind::Rcl { r: 2, k: 2 },
        ] {
            let check = mc_moment_check(kind, &config(), "d1", 20_000, 42).unwrap();
            assert!(
                check.passes(),
                "{kind}: mean {} vs 3·SE {}",
                check.mean,
                3.0 * check.se
            );
        }
    }

    #[test]
    fn moment_check_requires_a_real_sample() {
        let err = mc_moment_check(ScoreKind::Dr, &config(), "d1", 10, 1).unwrap_err();
        assert!(matches!(err, Error::TooFewRows { .. }));
    }

    #[test]
    fn moment_check_is_deterministic() {
        let a = mc_moment_check(ScoreKind::Dml, &config(), "d2", 5_000, 9).unwrap();
        let b = mc_moment_check(ScoreKind::Dml, &config(), "d2", 5_000, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dr_fails_first_order_with_derivative_minus_one() {
        let report = fd_orthogonality(
            ScoreKind::Dr,
            &config(),
            "d1",
            &PerturbationDirection::default(),
            1,
            4_000,
            7,
        )
        .unwrap();
        let e = report.entry((1, 0)).unwrap();
        assert!((e.value + 1.0).abs() < 1e-3, "derivative {}", e.value);
        assert!(!e.pass);
        // DR never touches the propensity.
        let e = report.entry((0, 1)).unwrap();
        assert!(e.value.abs() < 1e-12 && e.pass);
        assert!(!report.required_pass());
    }

    #[test]
    fn ipw_fails_the_propensity_direction() {
        let report = fd_orthogonality(
            ScoreKind::Ipw,
            &config(),
            "d1",
            &PerturbationDirection::default(),
            1,
            20_000,
            11,
        )
        .unwrap();
        let e = report.entry((0, 1)).unwrap();
        assert!(!e.pass, "IPW (0,1) derivative {} tol {}", e.value, e.tol);
        assert!(e.value > 0.0, "sign: E[Y𝟙/a²]·h₂ > 0, got {}", e.value);
        // The score has no outcome-model term at all.
        let e = report.entry((1, 0)).unwrap();
        assert!(e.value.abs() < 1e-12 && e.pass);
    }

    #[test]
    fn dml_passes_first_order() {
        let report = fd_orthogonality(
            ScoreKind::Dml,
            &config(),
            "d1",
            &PerturbationDirection::default(),
            1,
            20_000,
            13,
        )
        .unwrap();
        assert!(
            report.required_pass(),
            "entries: {:?}",
            report
                .entries
                .iter()
                .map(|e| (e.alpha, e.value, e.tol))
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn rcl22_passes_order_two_and_shows_power_at_order_three() {
        let report = fd_orthogonality(
            ScoreKind::Rcl { r: 2, k: 2 },
            &config(),
            "d1",
            &PerturbationDirection::default(),
            2,
            20_000,
            17,
        )
        .unwrap();
        assert!(
            report.required_pass(),
            "entries: {:?}",
            report
                .entries
                .iter()
                .map(|e| (e.alpha, e.value, e.tol))
                .collect::<Vec<_>>()
        );
        // Power: the (1,2) derivative is E[h₁h₂²·∂²A/∂ν̂²] = 2b̄·h₁·h₂²,
        // far from zero.
        let e = report.entry((1, 2)).unwrap();
        assert!(!e.required);
        assert!(!e.pass, "(1,2) should be visibly nonzero, got {}", e.value);
        assert!(e.value > 0.5);
    }

    #[test]
    fn rcl_score_is_linear_in_the_outcome_model() {
        // Any α with α₁ ≥ 2 differentiates a linear function twice: the
        // per-sample contributions vanish identically, SE included.
        let report = fd_orthogonality(
            ScoreKind::Rcl { r: 2, k: 2 },
            &config(),
            "d2",
            &PerturbationDirection::default(),
            2,
            4_000,
            19,
        )
        .unwrap();
        let e = report.entry((2, 0)).unwrap();
        assert!(e.value.abs() < 1e-9 && e.se < 1e-9);
    }

    #[test]
    fn oversized_steps_are_rejected_with_the_step_error() {
        let mut direction = PerturbationDirection::default();
        direction.steps = vec![1.0, 10f64.powf(-0.5), 0.1];
        let err = fd_orthogonality(
            ScoreKind::Dml,
            &config(),
            "d1",
            &direction,
            1,
            2_000,
            3,
        )
        .unwrap_err();
        assert!(matches!(err, Error::StepTooLarge { .. }), "{err:?}");
    }

    #[test]
    fn oversized_directions_are_rejected() {
        let direction = PerturbationDirection::constant(2.0, 0.5);
        let err = fd_orthogonality(
            ScoreKind::Dml,
            &config(),
            "d1",
            &direction,
            1,
            2_000,
            3,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn fd_standard_error_shrinks_like_root_n() {
        let small = fd_orthogonality(
            ScoreKind::Dml,
            &config(),
            "d1",
            &PerturbationDirection::default(),
            1,
            4_000,
            23,
        )
        .unwrap();
        let large = fd_orthogonality(
            ScoreKind::Dml,
            &config(),
            "d1",
            &PerturbationDirection::default(),
            1,
            16_000,
            23,
        )
        .unwrap();
        let ratio = small.entry((0, 1)).unwrap().se / large.entry((0, 1)).unwrap().se;
        assert!(
            (1.6..=2.5).contains(&ratio),
            "4× sample should halve the SE, ratio {ratio}"
        );
    }

    #[test]
    fn stratified_reports_cover_four_bins() {
        let reports = fd_orthogonality_stratified(
            ScoreKind::Dml,
            &config(),
            "d1",
            &PerturbationDirection::default(),
            1,
            8_000,
            29,
        )
        .unwrap();
        assert_eq!(reports.len(), 4);
        for (bin, report) in reports.iter().enumerate() {
            assert_eq!(report.stratum, Some((bin, 4)));
            assert_eq!(report.entries.len(), alpha_ball(2).len());
            assert_eq!(report.n, 2_000);
        }
    }

    #[test]
    fn consistency_sweep_error_decreases_for_dr() {
        let seeds: Vec<u64> = (0..10).collect();
        let points = consistency_sweep(
            ScoreKind::Dr,
            &config(),
            "d1",
            &[2_000, 8_000, 32_000],
            &seeds,
        )
        .unwrap();
        assert_eq!(points.len(), 3);
        assert!(
            points[0].median_abs_error > points[1].median_abs_error
                && points[1].median_abs_error > points[2].median_abs_error,
            "medians: {:?}",
            points
                .iter()
                .map(|p| p.median_abs_error)
                .collect::<Vec<_>>()
        );
        assert!(points.iter().all(|p| p.median_kappa_gap.is_none()));
    }

    #[test]
    fn kappa_gap_shrinks_with_n() {
        let seeds: Vec<u64> = (100..112).collect();
        let points = consistency_sweep(
            ScoreKind::Rcl { r: 2, k: 1 },
            &config(),
            "d1",
            &[4_000, 16_000],
            &seeds,
        )
        .unwrap();
        let g0 = points[0].median_kappa_gap.unwrap();
        let g1 = points[1].median_kappa_gap.unwrap();
        let ratio = g1 / g0;
        assert!(
            (0.3..=0.8).contains(&ratio),
            "κ-gap medians {g0} → {g1}, ratio {ratio}"
        );
    }

    #[test]
    fn sweep_validates_its_grid() {
        assert!(consistency_sweep(ScoreKind::Dr, &config(), "d1", &[100, 100], &[1]).is_err());
        assert!(consistency_sweep(ScoreKind::Dr, &config(), "d1", &[100, 200], &[]).is_err());
    }
}
