//! Random forests: bagged CART trees, regression and classification.
//!
//! Each tree is grown greedily: at every node the best axis-aligned split
//! is the one maximizing impurity decrease — variance (sum-of-squares) for
//! regression, Gini for classification — over a per-split random subset of
//! features, with candidate thresholds at midpoints of consecutive distinct
//! sorted values. Leaves store the mean outcome (regression) or the class
//! frequency vector (classification). Trees train on bootstrap resamples
//! when `bootstrap` is set; predictions average over trees, so classifier
//! outputs are convex combinations of leaf frequencies and always form a
//! probability simplex.
//!
//! Everything is seeded: tree t of a forest draws its bootstrap and feature
//! subsets from a generator derived from (forest seed, t).

use ndarray::ArrayView2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Structural hyperparameters shared by both forest flavors.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    /// Number of trees.
    pub n_trees: usize,
    /// Maximum tree depth (1 = a single split).
    pub max_depth: usize,
    /// Minimum rows in each child of a split.
    pub min_leaf: usize,
    /// Fraction of features considered per split, in (0, 1].
    pub feature_subsample: f64,
    /// Train each tree on a bootstrap resample of the rows.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 8,
            min_leaf: 5,
            feature_subsample: 1.0,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    fn check(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidArgument(
                "a forest needs at least 1 tree".to_string(),
            ));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidArgument(
                "tree depth must be at least 1".to_string(),
            ));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidArgument(
                "min leaf size must be at least 1".to_string(),
            ));
        }
        if !(self.feature_subsample > 0.0 && self.feature_subsample <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "feature subsample fraction must be in (0,1], got {}",
                self.feature_subsample
            )));
        }
        Ok(())
    }
}

/// One CART node. Leaves hold a payload vector: length 1 for regression
/// (the mean), length K for classification (class frequencies).
#[derive(Debug, Clone)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        payload: Vec<f64>,
    },
}

impl Node {
    fn evaluate<'a>(&'a self, z: &[f64]) -> &'a [f64] {
        match self {
            Node::Leaf { payload } => payload,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if z[*feature] <= *threshold {
                    left.evaluate(z)
                } else {
                    right.evaluate(z)
                }
            }
        }
    }
}

/// What a tree optimizes and stores in its leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Task {
    Regression,
    /// Classification with this many classes.
    Classification(usize),
}

/// Grow one tree on the rows in `rows`.
fn grow_tree<R: Rng>(
    x: &ArrayView2<'_, f64>,
    targets: &[f64], // outcome (regression) or class index as f64 (classification)
    task: Task,
    rows: &mut [usize],
    depth_left: usize,
    params: &ForestParams,
    rng: &mut R,
) -> Node {
    let leaf = |rows: &[usize]| -> Node {
        let payload = match task {
            Task::Regression => {
                let mean = rows.iter().map(|&m| targets[m]).sum::<f64>() / rows.len() as f64;
                vec![mean]
            }
            Task::Classification(k) => {
                let mut counts = vec![0.0_f64; k];
                for &m in rows.iter() {
                    counts[targets[m] as usize] += 1.0;
                }
                let total = rows.len() as f64;
                counts.iter_mut().for_each(|c| *c /= total);
                counts
            }
        };
        Node::Leaf { payload }
    };

    if depth_left == 0 || rows.len() < 2 * params.min_leaf {
        return leaf(rows);
    }

    let p = x.ncols();
    let n_features = ((params.feature_subsample * p as f64).round() as usize).clamp(1, p);
    let mut features: Vec<usize> = (0..p).collect();
    // Partial Fisher–Yates: the first n_features entries become the subset.
    for i in 0..n_features {
        let j = rng.gen_range(i..p);
        features.swap(i, j);
    }
    features.truncate(n_features);

    let best = best_split(x, targets, task, rows, &features, params.min_leaf);
    let Some((feature, threshold)) = best else {
        return leaf(rows);
    };

    // Partition rows in place around the chosen split.
    let mut lo = 0;
    let mut hi = rows.len();
    while lo < hi {
        if x[(rows[lo], feature)] <= threshold {
            lo += 1;
        } else {
            hi -= 1;
            rows.swap(lo, hi);
        }
    }
    let (left_rows, right_rows) = rows.split_at_mut(lo);
    if left_rows.is_empty() || right_rows.is_empty() {
        return leaf(rows);
    }

    let left = grow_tree(x, targets, task, left_rows, depth_left - 1, params, rng);
    let right = grow_tree(x, targets, task, right_rows, depth_left - 1, params, rng);
    Node::Split {
        feature,
        threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// Exhaustive best split over the candidate features.
///
/// Returns `None` when no split satisfies the min-leaf constraint or no
/// impurity decrease is attainable (e.g. constant targets).
fn best_split(
    x: &ArrayView2<'_, f64>,
    targets: &[f64],
    task: Task,
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64)> {
    let n = rows.len();
    let mut best: Option<(usize, f64, f64)> = None; // (feature, threshold, score gain)

    for &j in features {
        let mut order: Vec<usize> = rows.to_vec();
        order.sort_by(|&a, &b| {
            x[(a, j)]
                .partial_cmp(&x[(b, j)])
                .unwrap_or(std::cmp::Ordering::Equal)
        });

        match task {
            Task::Regression => {
                // Prefix sums give each candidate split's SSE decrease in O(1):
                // gain = S_L²/n_L + S_R²/n_R − S²/n (up to the constant Σy²).
                let total: f64 = order.iter().map(|&m| targets[m]).sum();
                let mut left_sum = 0.0_f64;
                for (i, &m) in order.iter().enumerate().take(n - 1) {
                    left_sum += targets[m];
                    let n_left = i + 1;
                    let n_right = n - n_left;
                    if n_left < min_leaf || n_right < min_leaf {
                        continue;
                    }
                    let here = x[(m, j)];
                    let next = x[(order[i + 1], j)];
                    if next <= here {
                        continue; // tied values cannot be separated
                    }
                    let right_sum = total - left_sum;
                    let gain = left_sum * left_sum / n_left as f64
                        + right_sum * right_sum / n_right as f64
                        - total * total / n as f64;
                    if best.map_or(gain > 1e-12, |(_, _, g)| gain > g) {
                        best = Some((j, 0.5 * (here + next), gain));
                    }
                }
            }
            Task::Classification(k) => {
                // Running class counts give the Gini decrease per candidate.
                let mut total_counts = vec![0.0_f64; k];
                for &m in &order {
                    total_counts[targets[m] as usize] += 1.0;
                }
                let gini = |counts: &[f64], size: f64| -> f64 {
                    if size == 0.0 {
                        return 0.0;
                    }
                    1.0 - counts.iter().map(|c| (c / size) * (c / size)).sum::<f64>()
                };
                let parent_gini = gini(&total_counts, n as f64);
                let mut left_counts = vec![0.0_f64; k];
                for (i, &m) in order.iter().enumerate().take(n - 1) {
                    left_counts[targets[m] as usize] += 1.0;
                    let n_left = (i + 1) as f64;
                    let n_right = (n - i - 1) as f64;
                    if ((i + 1) < min_leaf) || ((n - i - 1) < min_leaf) {
                        continue;
                    }
                    let here = x[(m, j)];
                    let next = x[(order[i + 1], j)];
                    if next <= here {
                        continue;
                    }
                    let right_counts: Vec<f64> = total_counts
                        .iter()
                        .zip(&left_counts)
                        .map(|(t, l)| t - l)
                        .collect();
                    let weighted = (n_left / n as f64) * gini(&left_counts, n_left)
                        + (n_right / n as f64) * gini(&right_counts, n_right);
                    let gain = parent_gini - weighted;
                    if best.map_or(gain > 1e-12, |(_, _, g)| gain > g) {
                        best = Some((j, 0.5 * (here + next), gain));
                    }
                }
            }
        }
    }
    best.map(|(feature, threshold, _)| (feature, threshold))
}

/// A bagged ensemble of regression trees.
#[derive(Debug, Clone)]
pub struct RegressionForest {
    trees: Vec<Node>,
    n_features: usize,
}

/// A bagged ensemble of classification trees emitting class frequencies.
#[derive(Debug, Clone)]
pub struct ClassificationForest {
    trees: Vec<Node>,
    n_features: usize,
    /// Class labels in output order.
    pub classes: Vec<String>,
}

fn bootstrap_rows<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Fit a regression forest on (x, y).
pub fn fit_regression_forest(
    x: &ArrayView2<'_, f64>,
    y: &[f64],
    params: &ForestParams,
    seed_value: u64,
) -> Result<RegressionForest> {
    params.check()?;
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            what: "regression outcomes vs covariate rows",
            expected: n,
            got: y.len(),
        });
    }
    if n < 2 {
        return Err(Error::TooFewRows {
            what: "regression forest",
            needed: 2,
            got: n,
        });
    }
    if let Some(row) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput {
            what: "regression outcomes",
            row,
        });
    }

    let mut trees = Vec::with_capacity(params.n_trees);
    for t in 0..params.n_trees {
        let mut rng = seed::rng(seed::derive(seed_value, &[t as u64]));
        let mut rows = if params.bootstrap {
            bootstrap_rows(n, &mut rng)
        } else {
            (0..n).collect()
        };
        trees.push(grow_tree(
            x,
            y,
            Task::Regression,
            &mut rows,
            params.max_depth,
            params,
            &mut rng,
        ));
    }
    Ok(RegressionForest {
        trees,
        n_features: x.ncols(),
    })
}

impl RegressionForest {
    /// Predict the ensemble mean for one covariate row.
    pub fn predict_row(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.n_features);
        let total: f64 = self.trees.iter().map(|t| t.evaluate(z)[0]).sum();
        total / self.trees.len() as f64
    }
}

/// Fit a classification forest on (x, class indices).
pub fn fit_classification_forest(
    x: &ArrayView2<'_, f64>,
    labels: &[usize],
    class_names: &[String],
    params: &ForestParams,
    seed_value: u64,
) -> Result<ClassificationForest> {
    params.check()?;
    let n = x.nrows();
    let k = class_names.len();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            what: "classification labels vs covariate rows",
            expected: n,
            got: labels.len(),
        });
    }
    if let Some(bad) = labels.iter().position(|&c| c >= k) {
        return Err(Error::InvalidArgument(format!(
            "class index {} at row {bad} out of range for {k} classes",
            labels[bad]
        )));
    }
    let targets: Vec<f64> = labels.iter().map(|&c| c as f64).collect();

    let mut trees = Vec::with_capacity(params.n_trees);
    for t in 0..params.n_trees {
        let mut rng = seed::rng(seed::derive(seed_value, &[t as u64]));
        let mut rows = if params.bootstrap {
            bootstrap_rows(n, &mut rng)
        } else {
            (0..n).collect()
        };
        trees.push(grow_tree(
            x,
            &targets,
            Task::Classification(k),
            &mut rows,
            params.max_depth,
            params,
            &mut rng,
        ));
    }
    Ok(ClassificationForest {
        trees,
        n_features: x.ncols(),
        classes: class_names.to_vec(),
    })
}

impl ClassificationForest {
    /// Predict the averaged class-frequency simplex for one covariate row.
    pub fn predict_row(&self, z: &[f64]) -> Vec<f64> {
        debug_assert_eq!(z.len(), self.n_features);
        let k = self.classes.len();
        let mut probs = vec![0.0_f64; k];
        for tree in &self.trees {
            for (acc, v) in probs.iter_mut().zip(tree.evaluate(z)) {
                *acc += v;
            }
        }
        let nt = self.trees.len() as f64;
        probs.iter_mut().for_each(|p| *p /= nt);
        probs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    /// Exhaustive single-split oracle: best (feature, threshold) by SSE over
    /// every midpoint of consecutive distinct values — an independent check
    /// on the tree's split search.
    fn oracle_single_split_sse(x: &ArrayView2<'_, f64>, y: &[f64]) -> f64 {
        let n = x.nrows();
        let total_mean = y.iter().sum::<f64>() / n as f64;
        let sse = |rows: &[usize]| -> f64 {
            let mean = rows.iter().map(|&m| y[m]).sum::<f64>() / rows.len() as f64;
            rows.iter().map(|&m| (y[m] - mean).powi(2)).sum::<f64>()
        };
        let mut best = y.iter().map(|v| (v - total_mean).powi(2)).sum::<f64>();
        for j in 0..x.ncols() {
            let mut vals: Vec<f64> = (0..n).map(|m| x[(m, j)]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            for w in vals.windows(2) {
                let threshold = 0.5 * (w[0] + w[1]);
                let left: Vec<usize> = (0..n).filter(|&m| x[(m, j)] <= threshold).collect();
                let right: Vec<usize> = (0..n).filter(|&m| x[(m, j)] > threshold).collect();
                if left.is_empty() || right.is_empty() {
                    continue;
                }
                best = best.min(sse(&left) + sse(&right));
            }
        }
        best
    }

    #[test]
    fn single_tree_single_split_matches_exhaustive_oracle() {
        // y is perfectly separated by a threshold on z1.
        let n = 40;
        let mut x = Array2::<f64>::zeros((n, 2));
        let mut y = vec![0.0; n];
        for m in 0..n {
            x[(m, 0)] = m as f64 / n as f64;
            x[(m, 1)] = (m as f64 * 2.1).sin(); // distractor
            y[m] = if x[(m, 0)] <= 0.5 { -1.0 } else { 3.0 };
        }
        let params = ForestParams {
            n_trees: 1,
            max_depth: 1,
            min_leaf: 1,
            feature_subsample: 1.0,
            bootstrap: false,
        };
        let forest = fit_regression_forest(&x.view(), &y, &params, 42).unwrap();

        let training_mse = (0..n)
            .map(|m| {
                let pred = forest.predict_row(&[x[(m, 0)], x[(m, 1)]]);
                (pred - y[m]).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        let mean = y.iter().sum::<f64>() / n as f64;
        let variance = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(training_mse < variance, "tree must beat the constant fit");

        // The depth-1 tree's SSE equals the exhaustive single-split optimum.
        let oracle_sse = oracle_single_split_sse(&x.view(), &y);
        assert!(
            (training_mse * n as f64 - oracle_sse).abs() < 1e-9,
            "tree SSE {} vs oracle {}",
            training_mse * n as f64,
            oracle_sse
        );
    }

    #[test]
    fn classifier_rows_form_a_simplex() {
        let n = 90;
        let mut x = Array2::<f64>::zeros((n, 2));
        let mut labels = vec![0usize; n];
        for m in 0..n {
            x[(m, 0)] = (m as f64 * 0.37).sin();
            x[(m, 1)] = (m as f64 * 0.73).cos();
            labels[m] = m % 3;
        }
        let names: Vec<String> = vec!["d1".into(), "d2".into(), "d3".into()];
        let forest =
            fit_classification_forest(&x.view(), &labels, &names, &ForestParams::default(), 7)
                .unwrap();
        for m in 0..n {
            let probs = forest.predict_row(&[x[(m, 0)], x[(m, 1)]]);
            let total: f64 = probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-9, "{probs:?}");
            assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn fitting_is_deterministic_given_seed() {
        let n = 50;
        let mut x = Array2::<f64>::zeros((n, 3));
        let mut y = vec![0.0; n];
        for m in 0..n {
            for j in 0..3 {
                x[(m, j)] = ((m * 3 + j) as f64 * 0.61).sin();
            }
            y[m] = x[(m, 0)] * 2.0 - x[(m, 2)] + (m as f64 * 0.11).cos();
        }
        let params = ForestParams::default();
        let a = fit_regression_forest(&x.view(), &y, &params, 99).unwrap();
        let b = fit_regression_forest(&x.view(), &y, &params, 99).unwrap();
        for m in 0..n {
            let z: Vec<f64> = (0..3).map(|j| x[(m, j)]).collect();
            assert_eq!(a.predict_row(&z), b.predict_row(&z));
        }
    }

    #[test]
    fn rejects_degenerate_parameters() {
        let x = Array2::<f64>::zeros((4, 1));
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let bad = ForestParams {
            n_trees: 0,
            ..Default::default()
        };
        assert!(fit_regression_forest(&x.view(), &y, &bad, 1).is_err());
        let bad = ForestParams {
            max_depth: 0,
            ..Default::default()
        };
        assert!(fit_regression_forest(&x.view(), &y, &bad, 1).is_err());
        let bad = ForestParams {
            feature_subsample: 0.0,
            ..Default::default()
        };
        assert!(fit_regression_forest(&x.view(), &y, &bad, 1).is_err());
    }
}
