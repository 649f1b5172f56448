//! Synthetic observational data with known ground truth.
//!
//! Covariates are standard Gaussian, Z ∈ ℝᵖ. Each treatment level i gets a
//! linear confounding score over the first ⌊p·r_c⌋ covariates with weights
//! β_iu ~ U(−0.1, 0.1); level probabilities πⁱ(z) are the softmax of those
//! scores, so the confounding ratio r_c ∈ [0, 1] controls how much of Z
//! drives treatment choice (r_c = 0 gives uniform probabilities). The
//! potential outcome at level i is
//!
//! ```text
//! Yⁱ = e^{√dⁱ} · (𝒂ᵢᵀz + 1)² + ξⁱ,   𝒂ᵢ ~ U(0.1, 0.5)ᵖ,  ξⁱ ~ 𝒩(0, σᵢ²)
//! ```
//!
//! with doses (d¹,d²,d³) = (0.1, 0.5, 1) and noise σ = (3, 2, 1) by
//! default. The observed treatment is the row-wise argmax of πⁱ(z) —
//! deterministic, as in the source experiment design — or, optionally,
//! a draw from the softmax (`assignment = sample`), which restores
//! stochastic assignment for orthogonality checks. The observed outcome is
//! the factual potential outcome; counterfactuals live only in
//! [`GroundTruth`], which the estimator layer never receives.
//!
//! True effects are finite-population: θⁱ is the sample mean of the
//! noise-free surface e^{√dⁱ}(𝒂ᵢᵀz+1)² over the generated rows, so every
//! replication carries its own exact truth regardless of the random 𝒂ᵢ.
//!
//! Randomness is split into four derived streams — structure (β, 𝒂),
//! covariates, noise, assignment — so that switching the assignment rule,
//! or freezing the structure across replications, perturbs nothing else.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::NuisanceFit;
use crate::model::{ObservationSet, TreatmentSpace};
use crate::seed;

/// How a row's observed treatment is chosen from its probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assignment {
    /// Deterministic: the level with the largest probability, ties broken
    /// toward the lowest index.
    Argmax,
    /// Stochastic: one draw from the row's probability vector.
    Sample,
}

fn default_doses() -> Vec<f64> {
    vec![0.1, 0.5, 1.0]
}

fn default_noise_sds() -> Vec<f64> {
    vec![3.0, 2.0, 1.0]
}

fn default_beta_range() -> (f64, f64) {
    (-0.1, 0.1)
}

fn default_a_range() -> (f64, f64) {
    (0.1, 0.5)
}

fn default_assignment() -> Assignment {
    Assignment::Argmax
}

/// Full description of one synthetic dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpConfig {
    /// Sample count N.
    pub n: usize,
    /// Covariate dimension p.
    pub p: usize,
    /// Confounding ratio r_c ∈ [0,1]: the first ⌊p·r_c⌋ covariates enter
    /// the treatment scores.
    pub r_c: f64,
    /// Treatment doses dⁱ, one per level; must be positive.
    #[serde(default = "default_doses")]
    pub doses: Vec<f64>,
    /// Noise standard deviations σᵢ, one per level; must be positive.
    #[serde(default = "default_noise_sds")]
    pub noise_sds: Vec<f64>,
    /// Uniform range for the confounding weights β.
    #[serde(default = "default_beta_range")]
    pub beta_range: (f64, f64),
    /// Uniform range for the outcome directions 𝒂ᵢ.
    #[serde(default = "default_a_range")]
    pub a_range: (f64, f64),
    /// Master seed for this dataset.
    #[serde(default)]
    pub seed: u64,
    /// Treatment assignment rule.
    #[serde(default = "default_assignment")]
    pub assignment: Assignment,
    /// When set, β and 𝒂 are drawn from this seed instead of `seed`, so
    /// several datasets can share one structural truth while their
    /// covariates, noise, and assignments vary.
    #[serde(default)]
    pub freeze_structure: Option<u64>,
}

impl DgpConfig {
    /// A 3-level configuration with all defaults.
    pub fn new(n: usize, p: usize, r_c: f64, seed: u64) -> Self {
        Self {
            n,
            p,
            r_c,
            doses: default_doses(),
            noise_sds: default_noise_sds(),
            beta_range: default_beta_range(),
            a_range: default_a_range(),
            seed,
            assignment: Assignment::Argmax,
            freeze_structure: None,
        }
    }

    /// Number of treatment levels.
    pub fn n_levels(&self) -> usize {
        self.doses.len()
    }

    /// Number of covariates entering the treatment scores.
    pub fn n_confounders(&self) -> usize {
        (self.p as f64 * self.r_c).floor() as usize
    }

    /// Validate the parameter ranges.
    pub fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::DegenerateDgp("sample count N is zero".to_string()));
        }
        if self.p == 0 {
            return Err(Error::DegenerateDgp(
                "covariate dimension p is zero".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.r_c) || !self.r_c.is_finite() {
            return Err(Error::DegenerateDgp(format!(
                "confounding ratio r_c = {} is outside [0,1]",
                self.r_c
            )));
        }
        if self.doses.len() < 2 {
            return Err(Error::DegenerateDgp(
                "need at least 2 treatment levels".to_string(),
            ));
        }
        if self.noise_sds.len() != self.doses.len() {
            return Err(Error::DegenerateDgp(format!(
                "{} noise scales for {} doses",
                self.noise_sds.len(),
                self.doses.len()
            )));
        }
        if self.doses.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::DegenerateDgp(
                "doses must be positive (√d must be real)".to_string(),
            ));
        }
        if self.noise_sds.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::DegenerateDgp(
                "noise standard deviations must be positive".to_string(),
            ));
        }
        for (name, (lo, hi)) in [("beta", self.beta_range), ("a", self.a_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::DegenerateDgp(format!(
                    "{name} range ({lo}, {hi}) is not an interval"
                )));
            }
        }
        Ok(())
    }

    /// The treatment space this configuration generates: labels d1..dn
    /// carrying their doses.
    pub fn treatment_space(&self) -> Result<TreatmentSpace> {
        let labeled: Vec<(String, f64)> = self
            .doses
            .iter()
            .enumerate()
            .map(|(i, &d)| (format!("d{}", i + 1), d))
            .collect();
        TreatmentSpace::with_doses(labeled)
    }
}

/// Everything the generator knows that an estimator must not see.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Treatment labels, index-aligned with every per-level container.
    pub levels: Vec<String>,
    /// Doses dⁱ.
    pub doses: Vec<f64>,
    /// θⁱ: finite-population mean of the noise-free surface, per level.
    pub theta: Vec<f64>,
    /// True propensities πⁱ(z_m), N×n.
    pub propensities: Array2<f64>,
    /// Noise-free surfaces gⁱ(z_m) = e^{√dⁱ}(𝒂ᵢᵀz_m+1)², N×n.
    pub surfaces: Array2<f64>,
    /// Potential outcomes Yⁱ_m = gⁱ(z_m) + ξⁱ_m, N×n (factual and
    /// counterfactual).
    pub potential_outcomes: Array2<f64>,
    /// Assigned level index per row.
    pub assigned: Vec<usize>,
    /// Confounding weights β, n×p (zero beyond the first ⌊p·r_c⌋ columns).
    pub beta: Array2<f64>,
    /// Outcome directions 𝒂ᵢ, n×p.
    pub a: Array2<f64>,
}

impl GroundTruth {
    /// The noise-free surface gⁱ(z) = e^{√dⁱ}(𝒂ᵢᵀz + 1)² at any point.
    pub fn surface(&self, level: usize, z: &[f64]) -> f64 {
        let dot: f64 = self
            .a
            .row(level)
            .iter()
            .zip(z)
            .map(|(&ai, &zi)| ai * zi)
            .sum();
        (self.doses[level].sqrt()).exp() * (dot + 1.0) * (dot + 1.0)
    }

    /// True pairwise effect θ^{i,j} = θⁱ − θʲ.
    pub fn true_ate(&self, i: usize, j: usize) -> f64 {
        self.theta[i] - self.theta[j]
    }

    /// The exact nuisances as a tabulated fit: ĝⁱ = true surface,
    /// π̂ⁱ = true propensity.
    pub fn exact_nuisances(&self) -> Result<NuisanceFit> {
        NuisanceFit::from_tables(
            &self.levels,
            self.surfaces.clone(),
            self.propensities.clone(),
            "exact",
        )
    }
}

/// Generate one dataset and its ground truth.
///
/// Draw order is fixed (structure, covariates, noise, assignment — each on
/// its own derived stream), so regeneration with the same configuration is
/// bit-identical, and flipping the assignment rule changes nothing else.
pub fn generate(config: &DgpConfig) -> Result<(ObservationSet, GroundTruth)> {
    config.check()?;
    let n = config.n;
    let p = config.p;
    let n_levels = config.n_levels();
    let n_conf = config.n_confounders();
    let space = config.treatment_space()?;
    let levels: Vec<String> = space.labels().iter().map(|s| s.to_string()).collect();

    let structure_seed = config.freeze_structure.unwrap_or(config.seed);
    let mut structure_rng = seed::rng(seed::derive(structure_seed, &[seed::stream::DGP, 1]));
    let mut z_rng = seed::rng(seed::derive(config.seed, &[seed::stream::DGP, 2]));
    let mut noise_rng = seed::rng(seed::derive(config.seed, &[seed::stream::DGP, 3]));
    let mut assign_rng = seed::rng(seed::derive(config.seed, &[seed::stream::DGP, 4]));

    // Structure: β over the confounders, then 𝒂 over all covariates.
    let (beta_lo, beta_hi) = config.beta_range;
    let mut beta = Array2::<f64>::zeros((n_levels, p));
    for i in 0..n_levels {
        for u in 0..n_conf {
            beta[(i, u)] = if beta_hi > beta_lo {
                structure_rng.gen_range(beta_lo..beta_hi)
            } else {
                beta_lo
            };
        }
    }
    let (a_lo, a_hi) = config.a_range;
    let mut a = Array2::<f64>::zeros((n_levels, p));
    for i in 0..n_levels {
        for u in 0..p {
            a[(i, u)] = if a_hi > a_lo {
                structure_rng.gen_range(a_lo..a_hi)
            } else {
                a_lo
            };
        }
    }

    // Covariates.
    let mut z = Array2::<f64>::zeros((n, p));
    for m in 0..n {
        for u in 0..p {
            z[(m, u)] = StandardNormal.sample(&mut z_rng);
        }
    }

    // Propensities: softmax of the confounding scores.
    let mut propensities = Array2::<f64>::zeros((n, n_levels));
    let mut scores = vec![0.0_f64; n_levels];
    for m in 0..n {
        for (i, s) in scores.iter_mut().enumerate() {
            *s = (0..n_conf).map(|u| beta[(i, u)] * z[(m, u)]).sum();
        }
        crate::learners::softmax_in_place(&mut scores);
        for (i, &s) in scores.iter().enumerate() {
            propensities[(m, i)] = s;
        }
    }

    // Surfaces and potential outcomes.
    let mut surfaces = Array2::<f64>::zeros((n, n_levels));
    let mut potential = Array2::<f64>::zeros((n, n_levels));
    let normals: Vec<Normal<f64>> = config
        .noise_sds
        .iter()
        .map(|&sd| Normal::new(0.0, sd).expect("positive sd checked above"))
        .collect();
    let exp_sqrt_dose: Vec<f64> = config.doses.iter().map(|&d| d.sqrt().exp()).collect();
    for m in 0..n {
        for i in 0..n_levels {
            let dot: f64 = (0..p).map(|u| a[(i, u)] * z[(m, u)]).sum();
            let g = exp_sqrt_dose[i] * (dot + 1.0) * (dot + 1.0);
            surfaces[(m, i)] = g;
            potential[(m, i)] = g + normals[i].sample(&mut noise_rng);
        }
    }

    // Assignment.
    let mut assigned = Vec::with_capacity(n);
    for m in 0..n {
        let idx = match config.assignment {
            Assignment::Argmax => {
                let mut best = 0usize;
                for i in 1..n_levels {
                    if propensities[(m, i)] > propensities[(m, best)] {
                        best = i;
                    }
                }
                best
            }
            Assignment::Sample => {
                let u: f64 = assign_rng.gen();
                let mut acc = 0.0;
                let mut pick = n_levels - 1;
                for i in 0..n_levels {
                    acc += propensities[(m, i)];
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            }
        };
        assigned.push(idx);
    }

    // Per-level truth: finite-population mean of the noise-free surface.
    let theta: Vec<f64> = (0..n_levels)
        .map(|i| crate::util::sum_compensated(surfaces.column(i).iter().copied()) / n as f64)
        .collect();

    let outcomes: Vec<f64> = (0..n).map(|m| potential[(m, assigned[m])]).collect();
    let treatments: Vec<String> = assigned.iter().map(|&i| levels[i].clone()).collect();
    let dataset = ObservationSet::new(outcomes, treatments, z, space)?;
    let truth = GroundTruth {
        levels,
        doses: config.doses.clone(),
        theta,
        propensities,
        surfaces,
        potential_outcomes: potential,
        assigned,
        beta,
        a,
    };
    Ok((dataset, truth))
}

/// A deliberate nuisance misspecification applied to exact values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionMode {
    /// ĝⁱ = gⁱ + c at every level and row; propensities stay exact.
    BiasG { c: f64 },
    /// π̂ = (1−w)·π + w/n, w ∈ [0,1]; surfaces stay exact.
    MixPi { w: f64 },
    /// For a random `fraction` of rows, overwrite π̂ at the row's assigned
    /// level with ε ∈ (0, 0.5) and rescale the other levels to keep the
    /// simplex; surfaces stay exact.
    ClipPi { eps: f64, fraction: f64, seed: u64 },
}

/// Produce a corrupted (or exact, for the identity settings) nuisance fit
/// from the ground truth.
pub fn corrupt_nuisances(truth: &GroundTruth, mode: &CorruptionMode) -> Result<NuisanceFit> {
    let n = truth.propensities.nrows();
    let n_levels = truth.levels.len();
    let mut g = truth.surfaces.clone();
    let mut pi = truth.propensities.clone();
    let tag: String;

    match *mode {
        CorruptionMode::BiasG { c } => {
            if !c.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "outcome bias must be finite, got {c}"
                )));
            }
            g.mapv_inplace(|v| v + c);
            tag = format!("bias_g({c})");
        }
        CorruptionMode::MixPi { w } => {
            if !(0.0..=1.0).contains(&w) || !w.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "mixing weight must lie in [0,1], got {w}"
                )));
            }
            let uniform = 1.0 / n_levels as f64;
            pi.mapv_inplace(|v| (1.0 - w) * v + w * uniform);
            tag = format!("mix_pi({w})");
        }
        CorruptionMode::ClipPi {
            eps,
            fraction,
            seed: clip_seed,
        } => {
            if !(eps > 0.0 && eps < 0.5) {
                return Err(Error::InvalidArgument(format!(
                    "clip level must lie in (0, 0.5), got {eps}"
                )));
            }
            if !(0.0..=1.0).contains(&fraction) || !fraction.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "clip fraction must lie in [0,1], got {fraction}"
                )));
            }
            let n_clip = ((fraction * n as f64).round() as usize).min(n);
            let mut rows: Vec<usize> = (0..n).collect();
            let mut rng = seed::rng(seed::derive(clip_seed, &[seed::stream::PICK]));
            for t in 0..n_clip {
                let j = rng.gen_range(t..n);
                rows.swap(t, j);
            }
            for &m in rows.iter().take(n_clip) {
                let level = truth.assigned[m];
                let old = pi[(m, level)];
                pi[(m, level)] = eps;
                let remaining = 1.0 - old;
                if remaining > 1e-12 {
                    let scale = (1.0 - eps) / remaining;
                    for i in 0..n_levels {
                        if i != level {
                            pi[(m, i)] *= scale;
                        }
                    }
                } else {
                    // Degenerate row (π ≈ 1 at the assigned level): spread
                    // the complement evenly.
                    let share = (1.0 - eps) / (n_levels - 1) as f64;
                    for i in 0..n_levels {
                        if i != level {
                            pi[(m, i)] = share;
                        }
                    }
                }
            }
            tag = format!("clip_pi({eps},{fraction})");
        }
    }

    NuisanceFit::from_tables(&truth.levels, g, pi, &tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{tabulate, OutcomeModel, PropensityModel};

    #[test]
    fn degenerate_surface_gives_theta_e() {
        // 𝒂 forced to 0 makes the surface constant: θ for dose 1 is e.
        let mut config = DgpConfig::new(500, 1, 0.5, 7);
        config.doses = vec![1.0, 0.25];
        config.noise_sds = vec![1.0, 1.0];
        config.a_range = (0.0, 0.0);
        let (_, truth) = generate(&config).unwrap();
        assert!((truth.theta[0] - std::f64::consts::E).abs() < 1e-12);
        assert!((truth.theta[1] - 0.25_f64.sqrt().exp()).abs() < 1e-12);
    }

    #[test]
    fn zero_confounding_is_uniform_and_assigns_lowest_index() {
        let config = DgpConfig::new(200, 4, 0.0, 3);
        let (data, truth) = generate(&config).unwrap();
        for m in 0..200 {
            for i in 0..3 {
                assert!((truth.propensities[(m, i)] - 1.0 / 3.0).abs() < 1e-15);
            }
            assert_eq!(truth.assigned[m], 0, "ties must break to the lowest index");
            assert_eq!(data.treatments[m], "d1");
        }
    }

    #[test]
    fn argmax_assignment_is_definitional() {
        let config = DgpConfig::new(100_000, 5, 1.0, 11);
        let (_, truth) = generate(&config).unwrap();
        let matches = (0..truth.assigned.len())
            .filter(|&m| {
                let row = truth.propensities.row(m);
                let best = (0..row.len())
                    .max_by(|&i, &j| row[i].partial_cmp(&row[j]).unwrap())
                    .unwrap();
                truth.assigned[m] == best
            })
            .count();
        assert_eq!(matches, truth.assigned.len());
    }

    #[test]
    fn propensity_rows_are_simplex_and_interior() {
        let config = DgpConfig::new(1000, 5, 1.0, 2);
        let (_, truth) = generate(&config).unwrap();
        for m in 0..1000 {
            let total: f64 = truth.propensities.row(m).sum();
            assert!((total - 1.0).abs() < 1e-12);
            for i in 0..3 {
                let p = truth.propensities[(m, i)];
                assert!(p > 0.0 && p < 1.0);
            }
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let config = DgpConfig::new(300, 4, 0.8, 123);
        let (d1, t1) = generate(&config).unwrap();
        let (d2, t2) = generate(&config).unwrap();
        assert_eq!(d1.outcomes, d2.outcomes);
        assert_eq!(d1.treatments, d2.treatments);
        assert_eq!(d1.covariates, d2.covariates);
        assert_eq!(t1.propensities, t2.propensities);
        assert_eq!(t1.potential_outcomes, t2.potential_outcomes);
        assert_eq!(t1.theta, t2.theta);
    }

    #[test]
    fn dataset_carries_only_factual_outcomes() {
        let config = DgpConfig::new(500, 3, 1.0, 9);
        let (data, truth) = generate(&config).unwrap();
        assert_eq!(data.n_covariates(), 3, "no extra columns leak");
        let mut any_counterfactual_differs = false;
        for m in 0..500 {
            let i = truth.assigned[m];
            assert_eq!(data.outcomes[m], truth.potential_outcomes[(m, i)]);
            for j in 0..3 {
                if j != i && truth.potential_outcomes[(m, j)] != data.outcomes[m] {
                    any_counterfactual_differs = true;
                }
            }
        }
        assert!(any_counterfactual_differs);
    }

    #[test]
    fn sampled_assignment_matches_propensities_on_average() {
        let mut config = DgpConfig::new(60_000, 5, 1.0, 21);
        config.assignment = Assignment::Sample;
        let (_, truth) = generate(&config).unwrap();
        for i in 0..3 {
            let expected: f64 =
                truth.propensities.column(i).sum() / truth.propensities.nrows() as f64;
            let observed = truth.assigned.iter().filter(|&&x| x == i).count() as f64
                / truth.assigned.len() as f64;
            assert!(
                (expected - observed).abs() < 0.01,
                "level {i}: expected {expected}, observed {observed}"
            );
        }
    }

    #[test]
    fn frozen_structure_shares_beta_and_a_across_seeds() {
        let mut c1 = DgpConfig::new(50, 4, 1.0, 100);
        let mut c2 = DgpConfig::new(50, 4, 1.0, 200);
        c1.freeze_structure = Some(7);
        c2.freeze_structure = Some(7);
        let (d1, t1) = generate(&c1).unwrap();
        let (d2, t2) = generate(&c2).unwrap();
        assert_eq!(t1.beta, t2.beta);
        assert_eq!(t1.a, t2.a);
        assert_ne!(d1.covariates, d2.covariates);
    }

    #[test]
    fn switching_assignment_rule_keeps_everything_else() {
        let mut argmax = DgpConfig::new(400, 5, 1.0, 31);
        argmax.assignment = Assignment::Argmax;
        let mut sample = argmax.clone();
        sample.assignment = Assignment::Sample;
        let (_, ta) = generate(&argmax).unwrap();
        let (_, ts) = generate(&sample).unwrap();
        assert_eq!(ta.propensities, ts.propensities);
        assert_eq!(ta.potential_outcomes, ts.potential_outcomes);
        assert_ne!(ta.assigned, ts.assigned);
    }

    #[test]
    fn exact_nuisances_tabulate_to_truth() {
        let config = DgpConfig::new(50, 3, 1.0, 17);
        let (data, truth) = generate(&config).unwrap();
        let fit = truth.exact_nuisances().unwrap();
        let values = tabulate(&fit, &data).unwrap();
        assert_eq!(values.g_hat, truth.surfaces);
        assert_eq!(values.pi_hat, truth.propensities);
    }

    #[test]
    fn bias_zero_is_identity() {
        let config = DgpConfig::new(60, 3, 1.0, 5);
        let (_, truth) = generate(&config).unwrap();
        let fit = corrupt_nuisances(&truth, &CorruptionMode::BiasG { c: 0.0 }).unwrap();
        match (&fit.outcome_models[1], &fit.propensity) {
            (OutcomeModel::Tabulated { values }, PropensityModel::Tabulated { probs }) => {
                assert_eq!(values, &truth.surfaces.column(1).to_vec());
                assert_eq!(probs, &truth.propensities);
            }
            other => panic!("expected tabulated nuisances, got {other:?}"),
        }
    }

    #[test]
    fn full_mixing_is_uniform() {
        let config = DgpConfig::new(60, 3, 1.0, 5);
        let (_, truth) = generate(&config).unwrap();
        let fit = corrupt_nuisances(&truth, &CorruptionMode::MixPi { w: 1.0 }).unwrap();
        let PropensityModel::Tabulated { probs } = &fit.propensity else {
            panic!("expected tabulated propensities");
        };
        for m in 0..60 {
            for i in 0..3 {
                assert!((probs[(m, i)] - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn clipping_hits_the_requested_fraction_and_keeps_the_simplex() {
        let config = DgpConfig::new(500, 5, 1.0, 13);
        let (_, truth) = generate(&config).unwrap();
        let mode = CorruptionMode::ClipPi {
            eps: 1e-4,
            fraction: 0.1,
            seed: 3,
        };
        let fit = corrupt_nuisances(&truth, &mode).unwrap();
        let PropensityModel::Tabulated { probs } = &fit.propensity else {
            panic!("expected tabulated propensities");
        };
        let mut clipped = 0;
        for m in 0..500 {
            let total: f64 = probs.row(m).sum();
            assert!((total - 1.0).abs() < 1e-9, "row {m} sums to {total}");
            if probs[(m, truth.assigned[m])] == 1e-4 {
                clipped += 1;
            }
        }
        assert_eq!(clipped, 50);
    }

    #[test]
    fn corruption_rejects_bad_parameters() {
        let config = DgpConfig::new(20, 2, 1.0, 1);
        let (_, truth) = generate(&config).unwrap();
        assert!(corrupt_nuisances(&truth, &CorruptionMode::MixPi { w: 1.5 }).is_err());
        assert!(corrupt_nuisances(
            &truth,
            &CorruptionMode::ClipPi {
                eps: 0.6,
                fraction: 0.1,
                seed: 0
            }
        )
        .is_err());
        assert!(corrupt_nuisances(
            &truth,
            &CorruptionMode::ClipPi {
                eps: 1e-3,
                fraction: 1.5,
                seed: 0
            }
        )
        .is_err());
    }

    #[test]
    fn config_validation_catches_degenerate_setups() {
        let mut config = DgpConfig::new(0, 3, 1.0, 1);
        assert!(generate(&config).is_err());
        config = DgpConfig::new(10, 3, 1.5, 1);
        assert!(generate(&config).is_err());
        config = DgpConfig::new(10, 3, 1.0, 1);
        config.doses = vec![0.1, -0.5, 1.0];
        assert!(generate(&config).is_err());
        config = DgpConfig::new(10, 3, 1.0, 1);
        config.noise_sds = vec![1.0, 1.0];
        assert!(generate(&config).is_err());
    }
}
