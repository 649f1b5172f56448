//! Residual moments, RCL coefficients, the weight A, and pointwise scores.
//!
//! The RCL score for treatment level i replaces the inverse propensity
//! weight 𝟙/π̂ⁱ of IPW/DML with a *polynomial* weight in the propensity
//! residual ν̂ = 𝟙{D=dⁱ} − π̂ⁱ(Z):
//!
//! ```text
//! A(D, Z; π̂ⁱ) = b̄_r · ν̂^r + 𝟙{k≠1} · Σ_{q=1}^{k−1} b_q · (ν̂^q − m_q)
//! ```
//!
//! where m_q is the empirical q-th moment of ν̂ and the coefficients
//! (b̄_r, b_1, …, b_{k−1}) are chosen so the score is insensitive, to
//! order k−1, to errors in the nuisances. Two independent routes compute
//! them: a descending one-at-a-time recursion ([`rcl_coefficients`]) and a
//! dense k×k linear solve ([`rcl_coefficients_oracle`]); tests hold them to
//! 1e−10 relative agreement.
//!
//! Because A contains no division, a near-zero estimated propensity cannot
//! blow up a single observation's contribution — that is the point of the
//! construction, and it is what the baseline scores in [`score_value`] give
//! up: IPW and DML divide by π̂ⁱ and are allowed to return signed infinities
//! (never a crash) when a treated row has π̂ⁱ = 0.
//!
//! Conditional moments are approximated by a single global sample mean over
//! the moment-defining sample, so A enjoys an exact algebraic normalization:
//! averaging A over that same sample gives b̄_r·m_r + Σ_q b_q·(m_q − m_q) = 1
//! to floating-point accuracy.

use crate::error::{Error, Result};
use crate::util::sum_compensated;

/// Largest supported power/binomial order; experiments use r ≤ 4.
const MAX_ORDER: usize = 60;

/// Threshold below which m[r] counts as zero and b̄_r = 1/m[r] is refused.
const DEGENERATE_MOMENT_TOL: f64 = 1e-12;

/// Pivot threshold for the dense coefficient solve.
const SINGULAR_PIVOT_TOL: f64 = 1e-12;

/// Empirical moments m_q = (1/N) Σ_m (𝟙{d_m=dⁱ} − π̂ⁱ(z_m))^q of the
/// propensity residual, for q = 0..Q with m_0 = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMoments {
    /// Which treatment level the residuals refer to, when known.
    pub level: Option<String>,
    /// m[q] for q = 0..=Q; m[0] = 1.
    pub m: Vec<f64>,
}

impl ResidualMoments {
    /// Wrap explicit moment values (m[0] must be 1; all |m[q]| ≤ 1, as the
    /// powers of a residual in [−1, 1] always are).
    pub fn from_values(m: Vec<f64>) -> Result<Self> {
        if m.is_empty() || (m[0] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "moment sequence must start with m[0] = 1, got {:?}",
                m.first()
            )));
        }
        for (q, &value) in m.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteInput {
                    what: "residual moments",
                    row: q,
                });
            }
            if value.abs() > 1.0 + 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "|m[{q}]| = {} exceeds 1; residuals 𝟙−π̂ lie in [−1,1]",
                    value.abs()
                )));
            }
        }
        Ok(Self { level: None, m })
    }

    /// Attach a treatment-level label.
    pub fn with_level(mut self, level: &str) -> Self {
        self.level = Some(level.to_string());
        self
    }

    /// Highest available order Q.
    pub fn max_order(&self) -> usize {
        self.m.len() - 1
    }

    /// m[q], or an error naming the missing order.
    pub fn get(&self, q: usize) -> Result<f64> {
        self.m.get(q).copied().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "moment m[{q}] not available (highest computed order is {})",
                self.max_order()
            ))
        })
    }
}

/// The RCL weight coefficients: b̄_r plus b_1..b_{k−1} (empty when k = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct RclCoefficients {
    /// Power of the leading residual term.
    pub r: usize,
    /// Orthogonality order; the q-sum runs to k−1.
    pub k: usize,
    /// Leading coefficient b̄_r = 1/m[r].
    pub b_bar: f64,
    /// b[q−1] holds b_q for q = 1..=k−1.
    pub b: Vec<f64>,
}

/// Which estimating score to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Direct regression: ψ = θ − ĝ.
    Dr,
    /// Inverse propensity weighting: ψ = θ − y·𝟙/π̂.
    Ipw,
    /// Double machine learning: ψ = θ − ĝ − 𝟙·(y−ĝ)/π̂.
    Dml,
    /// Robust causal learning with residual power r and order k.
    Rcl { r: usize, k: usize },
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScoreKind::Dr => write!(f, "DR"),
            ScoreKind::Ipw => write!(f, "IPW"),
            ScoreKind::Dml => write!(f, "DML"),
            ScoreKind::Rcl { r, k } => write!(f, "RCL({r},{k})"),
        }
    }
}

/// Binomial coefficient C(n, q) as a float, by the multiplicative formula.
///
/// Exact for n ≤ 60 (products stay below 2⁵³); larger n is refused rather
/// than silently rounded. C(n, q) = 0 when q > n.
pub fn binomial(n: usize, q: usize) -> Result<f64> {
    if n > MAX_ORDER {
        return Err(Error::InvalidArgument(format!(
            "binomial order {n} exceeds the supported maximum {MAX_ORDER}"
        )));
    }
    if q > n {
        return Ok(0.0);
    }
    let q = q.min(n - q);
    let mut value = 1.0_f64;
    for t in 0..q {
        value = value * (n - t) as f64 / (t + 1) as f64;
    }
    Ok(value.round())
}

fn check_orders(r: usize, k: usize) -> Result<()> {
    if r < 1 {
        return Err(Error::InvalidArgument(
            "residual power r must be at least 1".to_string(),
        ));
    }
    if k < 1 {
        return Err(Error::InvalidArgument(
            "orthogonality order k must be at least 1".to_string(),
        ));
    }
    if r > MAX_ORDER || k > MAX_ORDER + 1 {
        return Err(Error::InvalidArgument(format!(
            "orders (r={r}, k={k}) exceed the supported maximum {MAX_ORDER}"
        )));
    }
    if k > r {
        log::warn!(
            "orthogonality order k={k} exceeds residual power r={r}; \
             the theory is stated for k ≤ r — proceeding anyway"
        );
    }
    Ok(())
}

/// Empirical residual moments for one treatment level.
///
/// `indicator[m]` is 𝟙{d_m = dⁱ} (0 or 1), `propensities[m]` is π̂ⁱ(z_m).
/// Computes m[q] for q = 0..=max(r, k−1) by compensated summation. Errors
/// when |m[r]| < 1e−12: the leading coefficient b̄_r = 1/m[r] would be
/// undefined (for r = 2 this only happens when every π̂ⁱ is exactly 0 or 1
/// and matches the indicator).
pub fn residual_moments(
    indicator: &[u8],
    propensities: &[f64],
    r: usize,
    k: usize,
) -> Result<ResidualMoments> {
    check_orders(r, k)?;
    let n = indicator.len();
    if n == 0 {
        return Err(Error::TooFewRows {
            what: "residual moments",
            needed: 1,
            got: 0,
        });
    }
    if propensities.len() != n {
        return Err(Error::DimensionMismatch {
            what: "propensities vs indicator",
            expected: n,
            got: propensities.len(),
        });
    }
    for (row, &p) in propensities.iter().enumerate() {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::NonFiniteInput {
                what: "propensities outside [0,1]",
                row,
            });
        }
    }
    if let Some(row) = indicator.iter().position(|&d| d > 1) {
        return Err(Error::InvalidArgument(format!(
            "indicator at row {row} is {}, expected 0 or 1",
            indicator[row]
        )));
    }

    let q_max = r.max(k.saturating_sub(1));
    let residuals: Vec<f64> = indicator
        .iter()
        .zip(propensities)
        .map(|(&d, &p)| f64::from(d) - p)
        .collect();

    let mut m = Vec::with_capacity(q_max + 1);
    m.push(1.0);
    let mut powers = residuals.clone();
    for _q in 1..=q_max {
        m.push(sum_compensated(powers.iter().copied()) / n as f64);
        for (pw, &nu) in powers.iter_mut().zip(&residuals) {
            *pw *= nu;
        }
    }

    if m[r].abs() < DEGENERATE_MOMENT_TOL {
        return Err(Error::DegenerateMoment {
            order: r,
            value: m[r],
        });
    }
    Ok(ResidualMoments { level: None, m })
}

fn required_orders(moments: &ResidualMoments, r: usize, k: usize) -> Result<()> {
    let needed = r.max(k.saturating_sub(1));
    if moments.max_order() < needed {
        return Err(Error::InvalidArgument(format!(
            "coefficients for (r={r}, k={k}) need moments up to order {needed}, \
             got {}",
            moments.max_order()
        )));
    }
    if moments.m[r].abs() < DEGENERATE_MOMENT_TOL {
        return Err(Error::DegenerateMoment {
            order: r,
            value: moments.m[r],
        });
    }
    Ok(())
}

/// RCL coefficients by the descending recursion.
///
/// b̄_r = 1/m[r]; then for q = k−1, k−2, …, 1:
///
/// ```text
/// b_q = −b̄_r·C(r,q)·m[r−q] − Σ_{u=1}^{k−1−q} b_{q+u}·C(q+u,q)·m[u]
/// ```
///
/// Each step uses only coefficients already computed, which is why the
/// order is descending. C(r,q) vanishes for q > r, so orders k−1 > r are
/// handled without indexing m at a negative power.
pub fn rcl_coefficients(moments: &ResidualMoments, r: usize, k: usize) -> Result<RclCoefficients> {
    check_orders(r, k)?;
    required_orders(moments, r, k)?;

    let b_bar = 1.0 / moments.m[r];
    let mut b = vec![0.0_f64; k.saturating_sub(1)]; // b[q-1] = b_q
    for q in (1..k).rev() {
        let lead = if q <= r {
            b_bar * binomial(r, q)? * moments.m[r - q]
        } else {
            0.0
        };
        let mut tail = 0.0;
        for u in 1..=(k - 1 - q) {
            tail += b[q + u - 1] * binomial(q + u, q)? * moments.m[u];
        }
        b[q - 1] = -lead - tail;
    }
    Ok(RclCoefficients { r, k, b_bar, b })
}

/// RCL coefficients by assembling and solving the defining k×k linear
/// system — an independent cross-check on [`rcl_coefficients`].
///
/// Unknowns x = (b̄_r, b_1, …, b_{k−1}). Row 0 is the normalization
/// b̄_r·m[r] = 1; row q (q = 1..k−1) is the order-q insensitivity condition
///
/// ```text
/// b̄_r·C(r,q)·m[r−q] + Σ_{u=q}^{k−1} b_u·C(u,q)·m[u−q] = 0.
/// ```
///
/// Solved by Gaussian elimination with partial pivoting; a pivot below
/// 1e−12 is reported as a singular system naming the elimination step.
pub fn rcl_coefficients_oracle(
    moments: &ResidualMoments,
    r: usize,
    k: usize,
) -> Result<RclCoefficients> {
    check_orders(r, k)?;
    required_orders(moments, r, k)?;

    let mut a = vec![vec![0.0_f64; k]; k];
    let mut rhs = vec![0.0_f64; k];
    a[0][0] = moments.m[r];
    rhs[0] = 1.0;
    for q in 1..k {
        a[q][0] = if q <= r {
            binomial(r, q)? * moments.m[r - q]
        } else {
            0.0
        };
        for u in q..k {
            a[q][u] = binomial(u, q)? * moments.m[u - q];
        }
    }

    // Gaussian elimination with partial pivoting.
    let mut x = rhs;
    for step in 0..k {
        let pivot_row = (step..k)
            .max_by(|&i, &j| {
                a[i][step]
                    .abs()
                    .partial_cmp(&a[j][step].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("non-empty pivot range");
        let pivot = a[pivot_row][step];
        if pivot.abs() < SINGULAR_PIVOT_TOL {
            return Err(Error::SingularSystem { step, pivot });
        }
        a.swap(step, pivot_row);
        x.swap(step, pivot_row);
        for i in (step + 1)..k {
            let factor = a[i][step] / a[step][step];
            if factor == 0.0 {
                continue;
            }
            for j in step..k {
                a[i][j] -= factor * a[step][j];
            }
            x[i] -= factor * x[step];
        }
    }
    for step in (0..k).rev() {
        for j in (step + 1)..k {
            let xj = x[j];
            x[step] -= a[step][j] * xj;
        }
        x[step] /= a[step][step];
    }

    Ok(RclCoefficients {
        r,
        k,
        b_bar: x[0],
        b: x[1..].to_vec(),
    })
}

/// The RCL weight A(D, Z; π̂ⁱ) for one observation.
///
/// ν̂ = indicator − propensity; A = b̄_r·ν̂^r + 𝟙{k≠1}·Σ_q b_q·(ν̂^q − m_q).
/// Pure polynomial in ν̂ — no division anywhere.
pub fn weight_a(
    indicator_value: u8,
    propensity_value: f64,
    coeffs: &RclCoefficients,
    moments: &ResidualMoments,
) -> f64 {
    let nu = f64::from(indicator_value) - propensity_value;
    let mut a = coeffs.b_bar * nu.powi(coeffs.r as i32);
    for (idx, &bq) in coeffs.b.iter().enumerate() {
        let q = idx + 1;
        a += bq * (nu.powi(q as i32) - moments.m[q]);
    }
    a
}

/// Pointwise score ψ(θ; y, 𝟙, ĝ, π̂) for the chosen estimating equation.
///
/// The RCL variants need `rcl` = (coefficients, moments); the baselines
/// ignore it. Division-based scores follow the continuous-extension
/// convention: a zero numerator contributes 0 regardless of π̂; a nonzero
/// numerator over π̂ = 0 yields a signed infinity — a legal, reportable
/// value, never a panic.
pub fn score_value(
    kind: ScoreKind,
    theta: f64,
    y: f64,
    indicator: u8,
    g_hat: f64,
    pi_hat: f64,
    rcl: Option<(&RclCoefficients, &ResidualMoments)>,
) -> Result<f64> {
    let d = f64::from(indicator);
    let ratio = |numerator: f64| -> f64 {
        if numerator == 0.0 {
            0.0
        } else {
            numerator / pi_hat
        }
    };
    match kind {
        ScoreKind::Dr => Ok(theta - g_hat),
        ScoreKind::Ipw => Ok(theta - ratio(y * d)),
        ScoreKind::Dml => Ok(theta - g_hat - ratio(d * (y - g_hat))),
        ScoreKind::Rcl { r, k } => {
            let (coeffs, moments) = rcl.ok_or_else(|| {
                Error::InvalidArgument(
                    "RCL score evaluation needs coefficients and moments".to_string(),
                )
            })?;
            if coeffs.r != r || coeffs.k != k {
                return Err(Error::InvalidArgument(format!(
                    "score kind RCL({r},{k}) does not match coefficients for \
                     (r={}, k={})",
                    coeffs.r, coeffs.k
                )));
            }
            let a = weight_a(indicator, pi_hat, coeffs, moments);
            Ok(theta - g_hat - (y - g_hat) * a)
        }
    }
}
