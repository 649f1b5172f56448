//! Nuisance learners: outcome regressions ĝⁱ and propensity classifiers π̂ⁱ.
//!
//! The estimators in this crate never call a learner directly. Instead the
//! workflow is: fit one outcome model per treatment level on the rows
//! assigned to that level, fit one *joint* classifier over all levels, then
//! [`tabulate`] everything into a [`NuisanceValues`] grid of per-row
//! predictions that the estimator layer consumes. Producing propensities
//! jointly (a softmax or averaged leaf-frequency simplex) guarantees
//! Σᵢ π̂ⁱ(z) = 1 by construction, which per-level binary fits would not.
//!
//! Predicted probabilities are deliberately *not* clipped here. Extreme
//! propensities are information about overlap, and the estimator layer
//! decides what to do with them (nothing, or trimming).
//!
//! Besides the three fitted model families (linear, logistic, forest), both
//! model enums have a `Tabulated` variant that replays a fixed table of
//! per-row values. That is how exact or deliberately corrupted nuisances
//! from a synthetic ground truth enter the same pipeline as learned ones.

pub mod forest;
pub mod linear;
pub mod logistic;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::model::ObservationSet;
use crate::seed;

pub use forest::{
    fit_classification_forest, fit_regression_forest, ClassificationForest, ForestParams,
    RegressionForest,
};
pub use linear::{fit_linear, soft_threshold, LinearFit, Penalty};
pub use logistic::{fit_logistic, softmax_in_place, LogisticFit, LogisticParams};

/// Sweep cap for coordinate descent when fitted through a spec.
const CD_MAX_SWEEPS: usize = 1000;
/// Coefficient-change tolerance for coordinate descent through a spec.
const CD_TOL: f64 = 1e-7;

/// Which regression family to fit, with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum RegressorKind {
    /// ℓ₁-penalized least squares, coordinate descent.
    Lasso { lambda: f64 },
    /// ℓ₂-penalized least squares, coordinate descent.
    Ridge { lambda: f64 },
    /// Bagged variance-split CART trees.
    RandomForest(ForestParams),
}

/// A regression learner specification: family plus a fitting seed.
///
/// The seed only matters for the forest (bootstrap and feature draws);
/// coordinate descent is deterministic regardless.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorSpec {
    pub kind: RegressorKind,
    pub seed: u64,
}

impl RegressorSpec {
    /// Short human-readable tag, used in reports.
    pub fn describe(&self) -> String {
        match &self.kind {
            RegressorKind::Lasso { lambda } => format!("lasso(λ={lambda})"),
            RegressorKind::Ridge { lambda } => format!("ridge(λ={lambda})"),
            RegressorKind::RandomForest(p) => format!(
                "forest(trees={}, depth={}, leaf={}, features={})",
                p.n_trees, p.max_depth, p.min_leaf, p.feature_subsample
            ),
        }
    }
}

/// Which classification family to fit, with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierKind {
    /// Multinomial logistic regression by damped Newton iteration.
    Logistic(LogisticParams),
    /// Bagged Gini-split CART trees averaging leaf class frequencies.
    RandomForest(ForestParams),
}

/// A classification learner specification: family plus a fitting seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub seed: u64,
}

impl ClassifierSpec {
    /// Short human-readable tag, used in reports.
    pub fn describe(&self) -> String {
        match &self.kind {
            ClassifierKind::Logistic(p) => format!("logistic(l2={})", p.l2),
            ClassifierKind::RandomForest(p) => format!(
                "forest(trees={}, depth={}, leaf={}, features={})",
                p.n_trees, p.max_depth, p.min_leaf, p.feature_subsample
            ),
        }
    }
}

/// A fitted outcome model for one treatment level.
#[derive(Debug, Clone)]
pub enum OutcomeModel {
    Linear(LinearFit),
    Forest(RegressionForest),
    /// Fixed per-row predictions for one specific dataset (row-indexed).
    Tabulated { values: Vec<f64> },
}

impl OutcomeModel {
    /// Predict ĝ(z) for dataset row `row` with covariates `z`.
    ///
    /// Fitted models use only `z`; a `Tabulated` model uses only `row` and
    /// is valid solely for the dataset whose rows it was built from.
    pub fn predict(&self, row: usize, z: &[f64]) -> Result<f64> {
        match self {
            OutcomeModel::Linear(fit) => Ok(fit.predict_row(z)),
            OutcomeModel::Forest(fit) => Ok(fit.predict_row(z)),
            OutcomeModel::Tabulated { values } => {
                values.get(row).copied().ok_or(Error::DimensionMismatch {
                    what: "tabulated outcome values vs requested row",
                    expected: values.len(),
                    got: row + 1,
                })
            }
        }
    }
}

/// A fitted propensity model emitting a full simplex over treatment levels.
#[derive(Debug, Clone)]
pub enum PropensityModel {
    Logistic(LogisticFit),
    Forest(ClassificationForest),
    /// Fixed per-row probability vectors (N × n levels), row-indexed.
    Tabulated { probs: Array2<f64> },
}

impl PropensityModel {
    /// Predict the probability vector over levels for dataset row `row`.
    pub fn predict(&self, row: usize, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            PropensityModel::Logistic(fit) => Ok(fit.predict_row(z)),
            PropensityModel::Forest(fit) => Ok(fit.predict_row(z)),
            PropensityModel::Tabulated { probs } => {
                if row >= probs.nrows() {
                    return Err(Error::DimensionMismatch {
                        what: "tabulated propensity rows vs requested row",
                        expected: probs.nrows(),
                        got: row + 1,
                    });
                }
                Ok(probs.row(row).to_vec())
            }
        }
    }
}

/// Everything fitted for one dataset: one outcome model per treatment
/// level (in treatment-space order) plus the joint propensity model.
#[derive(Debug, Clone)]
pub struct NuisanceFit {
    /// Outcome models, index-aligned with `levels`.
    pub outcome_models: Vec<OutcomeModel>,
    /// Joint propensity model over all levels.
    pub propensity: PropensityModel,
    /// Treatment labels in model order.
    pub levels: Vec<String>,
    /// Which dataset rows the models were trained on (`None` = external,
    /// e.g. exact values from a synthetic ground truth).
    pub train_rows: Option<Vec<usize>>,
    /// Human-readable learner tags for reporting.
    pub regressor_tag: String,
    /// Human-readable classifier tag for reporting.
    pub classifier_tag: String,
}

impl NuisanceFit {
    /// Wrap fixed per-row tables (e.g. exact nuisances from a synthetic
    /// truth, or a corrupted copy of them) as a fit. Both tables must be
    /// N × n-levels and index the same dataset rows.
    pub fn from_tables(
        levels: &[String],
        g_values: Array2<f64>,
        pi_values: Array2<f64>,
        tag: &str,
    ) -> Result<Self> {
        let n_levels = levels.len();
        if g_values.ncols() != n_levels {
            return Err(Error::DimensionMismatch {
                what: "outcome table columns vs treatment levels",
                expected: n_levels,
                got: g_values.ncols(),
            });
        }
        if pi_values.ncols() != n_levels {
            return Err(Error::DimensionMismatch {
                what: "propensity table columns vs treatment levels",
                expected: n_levels,
                got: pi_values.ncols(),
            });
        }
        if g_values.nrows() != pi_values.nrows() {
            return Err(Error::DimensionMismatch {
                what: "outcome table rows vs propensity table rows",
                expected: g_values.nrows(),
                got: pi_values.nrows(),
            });
        }
        let outcome_models = (0..n_levels)
            .map(|i| OutcomeModel::Tabulated {
                values: g_values.column(i).to_vec(),
            })
            .collect();
        Ok(Self {
            outcome_models,
            propensity: PropensityModel::Tabulated { probs: pi_values },
            levels: levels.to_vec(),
            train_rows: None,
            regressor_tag: tag.to_string(),
            classifier_tag: tag.to_string(),
        })
    }
}

/// Per-row nuisance predictions for a whole dataset: the estimator layer's
/// only view of the learners. Both grids are N × n-levels, columns in
/// treatment-space order.
#[derive(Debug, Clone)]
pub struct NuisanceValues {
    /// ĝⁱ(z_m) at row m, level i.
    pub g_hat: Array2<f64>,
    /// π̂ⁱ(z_m) at row m, level i.
    pub pi_hat: Array2<f64>,
}

impl NuisanceValues {
    pub fn n_rows(&self) -> usize {
        self.g_hat.nrows()
    }

    pub fn n_levels(&self) -> usize {
        self.g_hat.ncols()
    }

    /// Restrict to a subset of rows (e.g. an evaluation split), preserving
    /// their order.
    pub fn subset(&self, rows: &[usize]) -> NuisanceValues {
        let select = |grid: &Array2<f64>| {
            let mut out = Array2::zeros((rows.len(), grid.ncols()));
            for (t, &m) in rows.iter().enumerate() {
                out.row_mut(t).assign(&grid.row(m));
            }
            out
        };
        NuisanceValues {
            g_hat: select(&self.g_hat),
            pi_hat: select(&self.pi_hat),
        }
    }
}

/// Fit one outcome regression for the requested `RegressorSpec`.
pub fn fit_regressor(
    spec: &RegressorSpec,
    x: &ArrayView2<'_, f64>,
    y: &[f64],
) -> Result<OutcomeModel> {
    match &spec.kind {
        RegressorKind::Lasso { lambda } => Ok(OutcomeModel::Linear(fit_linear(
            x,
            y,
            Penalty::Lasso,
            *lambda,
            CD_TOL,
            CD_MAX_SWEEPS,
        )?)),
        RegressorKind::Ridge { lambda } => Ok(OutcomeModel::Linear(fit_linear(
            x,
            y,
            Penalty::Ridge,
            *lambda,
            CD_TOL,
            CD_MAX_SWEEPS,
        )?)),
        RegressorKind::RandomForest(params) => Ok(OutcomeModel::Forest(fit_regression_forest(
            x, y, params, spec.seed,
        )?)),
    }
}

/// Fit the joint propensity classifier for the requested `ClassifierSpec`.
///
/// `labels` are the observed treatment labels; `level_order` fixes the
/// output-column order and the full class set. Every level in
/// `level_order` must occur in `labels` at least once — a propensity
/// cannot be estimated for a level never observed.
pub fn fit_classifier(
    spec: &ClassifierSpec,
    x: &ArrayView2<'_, f64>,
    labels: &[String],
    level_order: &[String],
) -> Result<PropensityModel> {
    let mut indices = Vec::with_capacity(labels.len());
    for label in labels {
        match level_order.iter().position(|l| l == label) {
            Some(i) => indices.push(i),
            None => {
                return Err(Error::UnknownLevel {
                    level: label.clone(),
                })
            }
        }
    }
    for (i, level) in level_order.iter().enumerate() {
        if !indices.contains(&i) {
            return Err(Error::LabelAbsent {
                level: level.clone(),
            });
        }
    }
    if labels.len() < level_order.len() {
        return Err(Error::TooFewRows {
            what: "classifier training rows",
            needed: level_order.len(),
            got: labels.len(),
        });
    }
    match &spec.kind {
        ClassifierKind::Logistic(params) => Ok(PropensityModel::Logistic(fit_logistic(
            x,
            &indices,
            level_order,
            params,
        )?)),
        ClassifierKind::RandomForest(params) => {
            Ok(PropensityModel::Forest(fit_classification_forest(
                x,
                &indices,
                level_order,
                params,
                spec.seed,
            )?))
        }
    }
}

/// Residuals y_m − prediction(z_m), one per row of `x`.
pub fn residuals(model: &OutcomeModel, x: &ArrayView2<'_, f64>, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            what: "residual outcomes vs covariate rows",
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let mut out = Vec::with_capacity(y.len());
    for (m, &ym) in y.iter().enumerate() {
        let z = x.row(m);
        let pred = model.predict(m, z.as_slice().expect("row view is contiguous"))?;
        out.push(ym - pred);
    }
    Ok(out)
}

/// Fit the full nuisance set for a dataset: per-level outcome models on
/// the training rows assigned to each level, and the joint classifier on
/// all training rows.
///
/// Forest fits at different levels draw from seeds derived per level, so
/// no two levels share a bootstrap stream.
pub fn fit_nuisances(
    dataset: &ObservationSet,
    train_rows: &[usize],
    regressor: &RegressorSpec,
    classifier: &ClassifierSpec,
) -> Result<NuisanceFit> {
    let levels: Vec<String> = dataset
        .treatment_space
        .labels()
        .iter()
        .map(|s| s.to_string())
        .collect();
    let train = dataset.subset(train_rows);

    let mut outcome_models = Vec::with_capacity(levels.len());
    for (i, level) in levels.iter().enumerate() {
        let rows: Vec<usize> = (0..train.n_rows())
            .filter(|&m| train.treatments[m] == *level)
            .collect();
        if rows.is_empty() {
            return Err(Error::LabelAbsent {
                level: level.clone(),
            });
        }
        let level_data = train.subset(&rows);
        let mut level_spec = regressor.clone();
        level_spec.seed = seed::derive(regressor.seed, &[i as u64]);
        outcome_models.push(fit_regressor(
            &level_spec,
            &level_data.covariates.view(),
            &level_data.outcomes,
        )?);
    }

    let propensity = fit_classifier(
        classifier,
        &train.covariates.view(),
        &train.treatments,
        &levels,
    )?;

    Ok(NuisanceFit {
        outcome_models,
        propensity,
        levels,
        train_rows: Some(train_rows.to_vec()),
        regressor_tag: regressor.describe(),
        classifier_tag: classifier.describe(),
    })
}

/// Evaluate a fit on every row of a dataset, producing the per-row grids
/// the estimators consume.
///
/// Checks the simplex invariant (each propensity row sums to 1 within
/// 1e−9) and that every outcome prediction is finite.
pub fn tabulate(fit: &NuisanceFit, dataset: &ObservationSet) -> Result<NuisanceValues> {
    let n = dataset.n_rows();
    let n_levels = fit.levels.len();
    if dataset.treatment_space.n_levels() != n_levels {
        return Err(Error::DimensionMismatch {
            what: "fit levels vs dataset treatment levels",
            expected: dataset.treatment_space.n_levels(),
            got: n_levels,
        });
    }
    let mut g_hat = Array2::zeros((n, n_levels));
    let mut pi_hat = Array2::zeros((n, n_levels));
    for m in 0..n {
        let z_row = dataset.covariates.row(m);
        let z = z_row.as_slice().expect("row view is contiguous");
        for i in 0..n_levels {
            let g = fit.outcome_models[i].predict(m, z)?;
            if !g.is_finite() {
                return Err(Error::NonFiniteInput {
                    what: "outcome prediction",
                    row: m,
                });
            }
            g_hat[(m, i)] = g;
        }
        let probs = fit.propensity.predict(m, z)?;
        if probs.len() != n_levels {
            return Err(Error::DimensionMismatch {
                what: "propensity vector length vs treatment levels",
                expected: n_levels,
                got: probs.len(),
            });
        }
        let total: f64 = probs.iter().sum();
        if !total.is_finite() || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "propensity vector at row {m} sums to {total}, not 1"
            )));
        }
        for (i, &p) in probs.iter().enumerate() {
            pi_hat[(m, i)] = p;
        }
    }
    Ok(NuisanceValues { g_hat, pi_hat })
}

/// Pick the candidate whose fit has the lowest validation MSE. Returns the
/// winning index into `candidates`.
pub fn select_regressor(
    candidates: &[RegressorSpec],
    x_train: &ArrayView2<'_, f64>,
    y_train: &[f64],
    x_val: &ArrayView2<'_, f64>,
    y_val: &[f64],
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument(
            "regressor selection needs at least one candidate".to_string(),
        ));
    }
    let mut best = (0usize, f64::INFINITY);
    for (c, spec) in candidates.iter().enumerate() {
        let model = fit_regressor(spec, x_train, y_train)?;
        let res = residuals(&model, x_val, y_val)?;
        let mse = res.iter().map(|r| r * r).sum::<f64>() / res.len().max(1) as f64;
        if mse < best.1 {
            best = (c, mse);
        }
    }
    Ok(best.0)
}

/// Pick the candidate whose fit has the lowest validation log-loss. Returns the
/// winning index into `candidates`.
pub fn select_classifier(
    candidates: &[ClassifierSpec],
    x_train: &ArrayView2<'_, f64>,
    labels_train: &[String],
    x_val: &ArrayView2<'_, f64>,
    labels_val: &[String],
    level_order: &[String],
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument(
            "classifier selection needs at least one candidate".to_string(),
        ));
    }
    let mut best = (0usize, f64::INFINITY);
    for (c, spec) in candidates.iter().enumerate() {
        let model = fit_classifier(spec, x_train, labels_train, level_order)?;
        let mut loss = 0.0;
        for (m, label) in labels_val.iter().enumerate() {
            let i = level_order
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::UnknownLevel {
                    level: label.clone(),
                })?;
            let z_row = x_val.row(m);
            let probs = model.predict(m, z_row.as_slice().expect("row view is contiguous"))?;
            loss -= probs[i].max(1e-300).ln();
        }
        let loss = loss / labels_val.len().max(1) as f64;
        if loss < best.1 {
            best = (c, loss);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TreatmentSpace;
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn toy_dataset(n: usize, seed_value: u64) -> ObservationSet {
        let mut rng = seed::rng(seed_value);
        let mut x = Array2::<f64>::zeros((n, 2));
        let mut y = vec![0.0; n];
        let mut d = Vec::with_capacity(n);
        for m in 0..n {
            let z0: f64 = StandardNormal.sample(&mut rng);
            let z1: f64 = StandardNormal.sample(&mut rng);
            x[(m, 0)] = z0;
            x[(m, 1)] = z1;
            let label = if rng.gen_bool(0.5) { "d1" } else { "d2" };
            d.push(label.to_string());
            y[m] = if label == "d1" { z0 } else { 2.0 * z0 + 1.0 };
        }
        let space = TreatmentSpace::new(vec!["d1", "d2"]).unwrap();
        ObservationSet::new(y, d, x, space).unwrap()
    }

    #[test]
    fn residuals_of_perfect_fit_are_zero() {
        let x = Array2::from_shape_vec((3, 1), vec![0.0, 1.0, 2.0]).unwrap();
        let y = vec![5.0, 5.0, 5.0];
        let model = OutcomeModel::Tabulated { values: y.clone() };
        let res = residuals(&model, &x.view(), &y).unwrap();
        assert!(res.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn residuals_of_constant_model_follow_definition() {
        let x = Array2::from_shape_vec((2, 1), vec![0.0, 1.0]).unwrap();
        let y = vec![1.0, 2.0];
        let model = OutcomeModel::Tabulated {
            values: vec![0.25, 0.25],
        };
        let res = residuals(&model, &x.view(), &y).unwrap();
        assert_eq!(res, vec![0.75, 1.75]);
    }

    #[test]
    fn classifier_requires_every_level_in_training_data() {
        let x = Array2::<f64>::zeros((4, 1));
        let labels: Vec<String> = vec!["d1".into(), "d1".into(), "d1".into(), "d1".into()];
        let order: Vec<String> = vec!["d1".into(), "d2".into()];
        let spec = ClassifierSpec {
            kind: ClassifierKind::Logistic(LogisticParams::default()),
            seed: 0,
        };
        let err = fit_classifier(&spec, &x.view(), &labels, &order).unwrap_err();
        assert!(matches!(err, Error::LabelAbsent { level } if level == "d2"));
    }

    #[test]
    fn calibration_against_a_known_softmax() {
        // Labels drawn from a known 3-class softmax in z; with many rows
        // the mean fitted simplex must land near the empirical class
        // frequencies (the intercept score equation makes them equal at
        // the optimum, so 0.02 leaves room for partial convergence).
        let n = 4000;
        let mut rng = seed::rng(20_240_817);
        let mut x = Array2::<f64>::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        let weights = [[0.8, -0.4], [-0.5, 0.9], [0.0, 0.0]];
        let intercepts = [0.3, -0.2, 0.0];
        for m in 0..n {
            let z0: f64 = StandardNormal.sample(&mut rng);
            let z1: f64 = StandardNormal.sample(&mut rng);
            x[(m, 0)] = z0;
            x[(m, 1)] = z1;
            let mut scores: Vec<f64> = (0..3)
                .map(|c| intercepts[c] + weights[c][0] * z0 + weights[c][1] * z1)
                .collect();
            softmax_in_place(&mut scores);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut class = 2;
            for (c, &p) in scores.iter().enumerate() {
                acc += p;
                if u < acc {
                    class = c;
                    break;
                }
            }
            labels.push(class);
        }
        let names: Vec<String> = vec!["d1".into(), "d2".into(), "d3".into()];
        let fit = fit_logistic(&x.view(), &labels, &names, &LogisticParams::default()).unwrap();

        let mut mean_probs = [0.0_f64; 3];
        let mut freqs = [0.0_f64; 3];
        for m in 0..n {
            let probs = fit.predict_row(&[x[(m, 0)], x[(m, 1)]]);
            for c in 0..3 {
                mean_probs[c] += probs[c] / n as f64;
            }
            freqs[labels[m]] += 1.0 / n as f64;
        }
        for c in 0..3 {
            assert!(
                (mean_probs[c] - freqs[c]).abs() < 0.02,
                "class {c}: mean prob {} vs frequency {}",
                mean_probs[c],
                freqs[c]
            );
        }
    }

    #[test]
    fn fit_and_tabulate_produce_simplex_rows_and_finite_outcomes() {
        let data = toy_dataset(300, 11);
        let rows: Vec<usize> = (0..200).collect();
        let reg = RegressorSpec {
            kind: RegressorKind::Lasso { lambda: 0.01 },
            seed: 1,
        };
        let clf = ClassifierSpec {
            kind: ClassifierKind::Logistic(LogisticParams::default()),
            seed: 1,
        };
        let fit = fit_nuisances(&data, &rows, &reg, &clf).unwrap();
        assert_eq!(fit.outcome_models.len(), 2);
        let values = tabulate(&fit, &data).unwrap();
        assert_eq!(values.n_rows(), 300);
        assert_eq!(values.n_levels(), 2);
        for m in 0..300 {
            let total = values.pi_hat[(m, 0)] + values.pi_hat[(m, 1)];
            assert!((total - 1.0).abs() < 1e-9);
            assert!(values.g_hat[(m, 0)].is_finite());
        }
        // The d2 surface is 2·z₀+1; its level model should track that.
        match &fit.outcome_models[1] {
            OutcomeModel::Linear(l) => {
                assert!((l.coefficients[0] - 2.0).abs() < 0.2, "{:?}", l.coefficients);
            }
            other => panic!("expected a linear model, got {other:?}"),
        }
    }

    #[test]
    fn subset_preserves_row_order() {
        let g = Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let pi = Array2::from_shape_vec((4, 1), vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let values = NuisanceValues {
            g_hat: g,
            pi_hat: pi,
        };
        let sub = values.subset(&[3, 0]);
        assert_eq!(sub.g_hat[(0, 0)], 4.0);
        assert_eq!(sub.g_hat[(1, 0)], 1.0);
    }

    #[test]
    fn tabulate_rejects_broken_simplex() {
        let data = toy_dataset(10, 3);
        let levels: Vec<String> = vec!["d1".into(), "d2".into()];
        let g = Array2::zeros((10, 2));
        let mut pi = Array2::zeros((10, 2));
        pi.fill(0.7); // rows sum to 1.4
        let fit = NuisanceFit::from_tables(&levels, g, pi, "broken").unwrap();
        assert!(tabulate(&fit, &data).is_err());
    }

    #[test]
    fn selection_prefers_the_better_regularization() {
        // y depends strongly on x; a huge λ kills the fit, a small one keeps it.
        let data = toy_dataset(400, 5);
        let train: Vec<usize> = (0..300).collect();
        let val: Vec<usize> = (300..400).collect();
        let tr = data.subset(&train);
        let va = data.subset(&val);
        let candidates = vec![
            RegressorSpec {
                kind: RegressorKind::Lasso { lambda: 50.0 },
                seed: 0,
            },
            RegressorSpec {
                kind: RegressorKind::Lasso { lambda: 0.01 },
                seed: 0,
            },
        ];
        let best = select_regressor(
            &candidates,
            &tr.covariates.view(),
            &tr.outcomes,
            &va.covariates.view(),
            &va.outcomes,
        )
        .unwrap();
        assert_eq!(best, 1);
    }
}
