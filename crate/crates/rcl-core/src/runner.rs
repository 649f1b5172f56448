//! Experiment orchestration: M replications × learner combos × estimators.
//!
//! [`ExperimentConfig`] mirrors the TOML config file field-for-field. A
//! run proceeds, per replication m and learner combo ℓ:
//!
//! 1. obtain data — a fresh simulated draw, or the fixed CSV dataset;
//! 2. split rows into train/validation/test;
//! 3. fit the combo's nuisances on the training rows (tuning them on the
//!    validation rows when hyperparameters were left open);
//! 4. run every estimator on the configured evaluation split and score
//!    its pairwise-effect matrix against the truth via ε_ATE.
//!
//! Aggregation then produces one [`MetricRow`] per (combo, estimator)
//! cell — under both non-finite conventions — plus reduction ratios per
//! combo and a failure ledger. Any error inside a cell is recorded and
//! the sweep continues; [`run`] itself only fails on configuration-level
//! problems.
//!
//! # Determinism
//!
//! Every random decision derives from the master seed through labeled
//! streams ([`crate::seed::derive`]): the DGP draw for replication m uses
//! `[DGP, m]`, the split `[SPLIT, m]`, learner fits `[FIT, m, ℓ, role]`,
//! RCL residual picking `[PICK, m, ℓ, e]`, and tuning `[TUNE, …]`. Cells
//! therefore never share RNG state, any single cell can be reproduced in
//! isolation, and the thread schedule cannot influence results: report
//! files are byte-identical across reruns. Wall-clock timings, the one
//! nondeterministic quantity, stay in memory ([`RunReport`]) and in log
//! output — report files never contain them.
//!
//! # Truth and evaluation
//!
//! For simulated data the reference effects are the full-sample
//! finite-population means of the noise-free surfaces, while estimation
//! sees only the configured evaluation split; for CSV data the reference
//! comes from the `level,theta_true` sidecar. The `evaluation_split`
//! choice `both` pools train and test rows (validation rows stay out —
//! they belong to tuning).

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{generate, DgpConfig};
use crate::error::{Error, Result};
use crate::estimators::{ate_matrix, estimate, AteMatrix, EstimatorKind, EstimatorSpec, LevelEstimate};
use crate::learners::{
    fit_classifier, fit_nuisances, fit_regressor, residuals, tabulate, ClassifierKind,
    ClassifierSpec, ForestParams, LogisticParams, RegressorKind, RegressorSpec,
};
use crate::metrics::{aggregate, epsilon_ate_single, reduction_ratios, MetricRow};
use crate::model::{
    read_csv, read_truth_csv, split_indices, ObservationSet, SplitIndex, TreatmentSpace,
};
use crate::seed::{self, stream};

/// Environment variable consulted for the output directory when the
/// config leaves it unset.
pub const OUTPUT_DIR_ENV: &str = "RCL_OUTPUT_DIR";

/// Fallback output directory (relative to the working directory).
const DEFAULT_OUTPUT_DIR: &str = "rcl-out";

/// Hyperparameter grids used when a learner's parameters are left open.
const LAMBDA_GRID: [f64; 5] = [1e-3, 1e-2, 0.1, 0.3, 1.0];
const L2_GRID: [f64; 3] = [0.0, 1e-4, 1e-2];
const DEPTH_GRID: [usize; 2] = [4, 8];
const FEATURE_GRID: [f64; 2] = [0.6, 1.0];

/// Which rows the estimators see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    /// The default: held-out evaluation.
    #[default]
    Test,
    /// Train ∪ test, pooled (validation rows stay reserved for tuning).
    Both,
}

/// When hyperparameter tuning happens for under-specified learners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tuning {
    /// Tune once on a dedicated tuning dataset (seeded from the master
    /// seed) and freeze the choice for every replication. The default.
    #[default]
    Global,
    /// Re-tune within each replication on its own validation split.
    PerReplication,
}

/// Where the data comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    /// `"simulate"` or `"csv"`; the matching sub-table must be present.
    pub source: String,
    #[serde(default)]
    pub simulate: Option<DgpConfig>,
    #[serde(default)]
    pub csv: Option<CsvSource>,
}

/// A fixed dataset: observations plus the `level,theta_true` sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSource {
    pub path: PathBuf,
    pub truth: PathBuf,
}

/// One learner combination (outcome regressor + propensity classifier).
///
/// Hyperparameters left unset are tuned over fixed grids on validation
/// data; set ones are pinned. `trees`/`depth`/`min_leaf`/`features`
/// apply to forest learners, `lambda` to lasso/ridge, `l2` to logistic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnerConfig {
    /// `"lasso"`, `"ridge"`, or `"forest"`.
    pub regressor: String,
    /// `"logistic"` or `"forest"`.
    pub classifier: String,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub l2: Option<f64>,
    #[serde(default)]
    pub trees: Option<usize>,
    #[serde(default)]
    pub depth: Option<usize>,
    #[serde(default)]
    pub min_leaf: Option<usize>,
    #[serde(default)]
    pub features: Option<f64>,
}

impl LearnerConfig {
    /// Table-style combo tag, e.g. `Lasso+LR` or `RF+RF`.
    pub fn label(&self) -> String {
        let reg = match self.regressor.as_str() {
            "lasso" => "Lasso",
            "ridge" => "Ridge",
            "forest" => "RF",
            other => other,
        };
        let clf = match self.classifier.as_str() {
            "logistic" => "LR",
            "forest" => "RF",
            other => other,
        };
        format!("{reg}+{clf}")
    }
}

/// Sample-size / confounding-rate grids for the plot-data emission.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "default_sweep_n")]
    pub n_values: Vec<usize>,
    #[serde(default = "default_sweep_rc")]
    pub r_c_values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_values: default_sweep_n(),
            r_c_values: default_sweep_rc(),
        }
    }
}

fn default_sweep_n() -> Vec<usize> {
    vec![1000, 2000, 4000]
}

fn default_sweep_rc() -> Vec<f64> {
    vec![0.0, 0.5, 1.0]
}

fn default_replications() -> usize {
    1
}

fn default_split() -> (f64, f64, f64) {
    (0.7, 0.15, 0.15)
}

fn default_learners() -> Vec<LearnerConfig> {
    vec![LearnerConfig {
        regressor: "lasso".to_string(),
        classifier: "logistic".to_string(),
        lambda: None,
        l2: None,
        trees: None,
        depth: None,
        min_leaf: None,
        features: None,
    }]
}

/// The default estimator grid: every baseline plus both reference RCL
/// orders, so reduction ratios are always computable.
fn default_estimators() -> Vec<EstimatorSpec> {
    vec![
        EstimatorSpec::new(EstimatorKind::Dr),
        EstimatorSpec::new(EstimatorKind::Ipw),
        EstimatorSpec::new(EstimatorKind::Aipw),
        EstimatorSpec::new(EstimatorKind::Dml),
        EstimatorSpec::new(EstimatorKind::DmlTrim),
        EstimatorSpec::rcl(2, 1, 100, 0),
        EstimatorSpec::rcl(2, 2, 100, 0),
    ]
}

/// Full experiment description, read from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    /// Replication count M.
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// (train, validation, test) fractions.
    #[serde(default = "default_split")]
    pub split: (f64, f64, f64),
    #[serde(default)]
    pub evaluation_split: EvalSplit,
    #[serde(default)]
    pub master_seed: u64,
    /// Config value wins over the `RCL_OUTPUT_DIR` environment variable,
    /// which wins over `./rcl-out`.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Which non-finite convention feeds the reduction ratios. Both
    /// aggregations always appear in the reports; this flag only selects
    /// the ε entering R_DR / R_DML.
    #[serde(default)]
    pub finite_only: bool,
    #[serde(default)]
    pub tuning: Tuning,
    #[serde(default = "default_learners")]
    pub learners: Vec<LearnerConfig>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    /// The default estimator grid (every baseline plus RCL(2,1) and
    /// RCL(2,2)), for callers assembling a config programmatically.
    pub fn default_estimator_grid() -> Vec<EstimatorSpec> {
        default_estimators()
    }

    /// Parse from TOML text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        config.check()?;
        Ok(config)
    }

    /// Load and parse a TOML config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Validate the cross-field invariants.
    pub fn check(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::Config("replications must be ≥ 1".to_string()));
        }
        if self.learners.is_empty() {
            return Err(Error::Config("the learner grid is empty".to_string()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("the estimator list is empty".to_string()));
        }
        for spec in &self.estimators {
            spec.check()?;
        }
        for learner in &self.learners {
            regressor_candidates(learner)?;
            classifier_candidates(learner)?;
        }
        match self.data.source.as_str() {
            "simulate" => {
                let dgp = self.data.simulate.as_ref().ok_or_else(|| {
                    Error::Config("source = \"simulate\" needs a [data.simulate] table".to_string())
                })?;
                dgp.check()?;
            }
            "csv" => {
                if self.data.csv.is_none() {
                    return Err(Error::Config(
                        "source = \"csv\" needs a [data.csv] table".to_string(),
                    ));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown data source {other:?} (expected \"simulate\" or \"csv\")"
                )));
            }
        }
        Ok(())
    }

    /// Output directory after applying the precedence chain.
    pub fn resolve_output_dir(&self) -> PathBuf {
        if let Some(dir) = &self.output_dir {
            return dir.clone();
        }
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                return PathBuf::from(dir);
            }
        }
        PathBuf::from(DEFAULT_OUTPUT_DIR)
    }
}

/// One per-replication cell outcome kept for `per_replication.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub replication: usize,
    pub learner: String,
    pub estimator: String,
    /// ε_{ATE;m}; `None` when the cell failed.
    pub epsilon: Option<f64>,
}

/// A recorded cell failure. `estimator: None` means the failure hit the
/// shared nuisance stage, taking down every estimator of that combo in
/// that replication.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub replication: usize,
    pub learner: String,
    pub estimator: Option<String>,
    pub message: String,
}

/// Reduction ratios for one learner combo, or the reason they are
/// unavailable.
#[derive(Debug, Clone, PartialEq)]
pub struct ComboRatios {
    pub learner: String,
    pub r_dr: Option<f64>,
    pub r_dml: Option<f64>,
    pub note: Option<String>,
}

/// Everything a run produced, before file emission.
#[derive(Debug, Clone)]
pub struct RunReport {
    /// One row per (combo, estimator), combo-major in config order.
    pub rows: Vec<MetricRow>,
    pub per_replication: Vec<RepRecord>,
    pub ratios: Vec<ComboRatios>,
    pub failures: Vec<CellFailure>,
    /// Total wall time; in-memory only, never written to report files.
    pub wall_secs: f64,
}

impl RunReport {
    /// True when every launched cell completed.
    pub fn clean(&self) -> bool {
        self.failures.is_empty()
    }
}

fn regressor_candidates(config: &LearnerConfig) -> Result<Vec<RegressorKind>> {
    match config.regressor.as_str() {
        "lasso" => Ok(match config.lambda {
            Some(l) => vec![RegressorKind::Lasso { lambda: l }],
            None => LAMBDA_GRID
                .iter()
                .map(|&lambda| RegressorKind::Lasso { lambda })
                .collect(),
        }),
        "ridge" => Ok(match config.lambda {
            Some(l) => vec![RegressorKind::Ridge { lambda: l }],
            None => LAMBDA_GRID
                .iter()
                .map(|&lambda| RegressorKind::Ridge { lambda })
                .collect(),
        }),
        "forest" => Ok(forest_grid(config)
            .into_iter()
            .map(RegressorKind::RandomForest)
            .collect()),
        other => Err(Error::Config(format!(
            "unknown regressor {other:?} (expected \"lasso\", \"ridge\", or \"forest\")"
        ))),
    }
}

fn classifier_candidates(config: &LearnerConfig) -> Result<Vec<ClassifierKind>> {
    match config.classifier.as_str() {
        "logistic" => Ok(match config.l2 {
            Some(l2) => vec![ClassifierKind::Logistic(LogisticParams {
                l2,
                ..LogisticParams::default()
            })],
            None => L2_GRID
                .iter()
                .map(|&l2| {
                    ClassifierKind::Logistic(LogisticParams {
                        l2,
                        ..LogisticParams::default()
                    })
                })
                .collect(),
        }),
        "forest" => Ok(forest_grid(config)
            .into_iter()
            .map(ClassifierKind::RandomForest)
            .collect()),
        other => Err(Error::Config(format!(
            "unknown classifier {other:?} (expected \"logistic\" or \"forest\")"
        ))),
    }
}

fn forest_grid(config: &LearnerConfig) -> Vec<ForestParams> {
    let depths: Vec<usize> = match config.depth {
        Some(d) => vec![d],
        None => DEPTH_GRID.to_vec(),
    };
    let features: Vec<f64> = match config.features {
        Some(f) => vec![f],
        None => FEATURE_GRID.to_vec(),
    };
    let mut grid = Vec::new();
    for &max_depth in &depths {
        for &feature_subsample in &features {
            grid.push(ForestParams {
                n_trees: config.trees.unwrap_or(50),
                max_depth,
                min_leaf: config.min_leaf.unwrap_or(5),
                feature_subsample,
                bootstrap: true,
            });
        }
    }
    grid
}

/// A combo prepared for the replication loop: candidate grids plus the
/// frozen choice when tuning is global (or unnecessary).
struct ComboPlan {
    label: String,
    reg_cands: Vec<RegressorKind>,
    clf_cands: Vec<ClassifierKind>,
    resolved: Option<(RegressorKind, ClassifierKind)>,
}

/// Pick the regressor with the lowest validation MSE, averaged over the
/// per-level fits. A candidate that fails to fit anywhere scores +∞.
fn tune_regressor(
    candidates: &[RegressorKind],
    data: &ObservationSet,
    split: &SplitIndex,
    seed_base: u64,
) -> Result<RegressorKind> {
    if candidates.len() == 1 {
        return Ok(candidates[0].clone());
    }
    let levels: Vec<String> = data
        .treatment_space
        .labels()
        .iter()
        .map(|s| s.to_string())
        .collect();
    let train = data.subset(&split.train);
    let val = data.subset(&split.validation);

    let mut best: (usize, f64) = (0, f64::INFINITY);
    for (c, kind) in candidates.iter().enumerate() {
        let spec = RegressorSpec {
            kind: kind.clone(),
            seed: seed::derive(seed_base, &[c as u64]),
        };
        let mut total = 0.0;
        let mut scored_levels = 0usize;
        let mut feasible = true;
        for level in &levels {
            let t_rows: Vec<usize> = (0..train.n_rows())
                .filter(|&m| train.treatments[m] == *level)
                .collect();
            let v_rows: Vec<usize> = (0..val.n_rows())
                .filter(|&m| val.treatments[m] == *level)
                .collect();
            if t_rows.is_empty() || v_rows.is_empty() {
                continue;
            }
            let t_sub = train.subset(&t_rows);
            let v_sub = val.subset(&v_rows);
            match fit_regressor(&spec, &t_sub.covariates.view(), &t_sub.outcomes) {
                Ok(model) => match residuals(&model, &v_sub.covariates.view(), &v_sub.outcomes) {
                    Ok(res) => {
                        total +=
                            res.iter().map(|r| r * r).sum::<f64>() / res.len().max(1) as f64;
                        scored_levels += 1;
                    }
                    Err(_) => {
                        feasible = false;
                        break;
                    }
                },
                Err(_) => {
                    feasible = false;
                    break;
                }
            }
        }
        let score = if feasible && scored_levels > 0 {
            total / scored_levels as f64
        } else {
            f64::INFINITY
        };
        if score < best.1 {
            best = (c, score);
        }
    }
    if best.1.is_infinite() {
        return Err(Error::Config(
            "no regressor candidate could be fitted on the tuning split".to_string(),
        ));
    }
    Ok(candidates[best.0].clone())
}

/// Pick the classifier with the lowest validation log-loss. A candidate
/// that fails to fit scores +∞.
fn tune_classifier(
    candidates: &[ClassifierKind],
    data: &ObservationSet,
    split: &SplitIndex,
    seed_base: u64,
) -> Result<ClassifierKind> {
    if candidates.len() == 1 {
        return Ok(candidates[0].clone());
    }
    let levels: Vec<String> = data
        .treatment_space
        .labels()
        .iter()
        .map(|s| s.to_string())
        .collect();
    let train = data.subset(&split.train);
    let val = data.subset(&split.validation);

    let mut best: (usize, f64) = (0, f64::INFINITY);
    for (c, kind) in candidates.iter().enumerate() {
        let spec = ClassifierSpec {
            kind: kind.clone(),
            seed: seed::derive(seed_base, &[c as u64]),
        };
        let score = log_loss_on(&spec, &train, &val, &levels).unwrap_or(f64::INFINITY);
        if score < best.1 {
            best = (c, score);
        }
    }
    if best.1.is_infinite() {
        return Err(Error::Config(
            "no classifier candidate could be fitted on the tuning split".to_string(),
        ));
    }
    Ok(candidates[best.0].clone())
}

fn log_loss_on(
    spec: &ClassifierSpec,
    train: &ObservationSet,
    val: &ObservationSet,
    levels: &[String],
) -> Result<f64> {
    let model = fit_classifier(spec, &train.covariates.view(), &train.treatments, levels)?;
    let mut loss = 0.0;
    for m in 0..val.n_rows() {
        let i = levels
            .iter()
            .position(|l| *l == val.treatments[m])
            .ok_or_else(|| Error::UnknownLevel {
                level: val.treatments[m].clone(),
            })?;
        let row = val.covariates.row(m);
        let probs = model.predict(m, row.as_slice().expect("row view is contiguous"))?;
        loss -= probs[i].max(1e-300).ln();
    }
    Ok(loss / val.n_rows().max(1) as f64)
}

/// Turn the per-level reference effects into the pairwise truth matrix.
fn matrix_from_theta(space: &TreatmentSpace, theta: &[f64]) -> Result<AteMatrix> {
    let estimates: Vec<LevelEstimate> = space
        .labels()
        .iter()
        .zip(theta)
        .map(|(level, &value)| LevelEstimate {
            level: level.to_string(),
            theta_hat: value,
            components: None,
        })
        .collect();
    ate_matrix(&estimates, space)
}

/// Match the truth sidecar rows to the dataset's treatment space.
fn order_truth(space: &TreatmentSpace, rows: &[(String, f64)]) -> Result<Vec<f64>> {
    let labels = space.labels();
    if rows.len() != labels.len() {
        return Err(Error::Config(format!(
            "truth sidecar has {} levels, dataset has {}",
            rows.len(),
            labels.len()
        )));
    }
    labels
        .iter()
        .map(|label| {
            rows.iter()
                .find(|(level, _)| level == label)
                .map(|&(_, theta)| theta)
                .ok_or_else(|| Error::Config(format!("truth sidecar is missing level {label}")))
        })
        .collect()
}

/// Fixed data shared by every replication of a CSV-sourced run.
struct CsvData {
    data: ObservationSet,
    theta: Vec<f64>,
}

/// Outcome of one (replication, combo) work item.
struct CellBatch {
    replication: usize,
    combo: usize,
    /// Set when the shared stage (data/split/tuning/nuisances) failed;
    /// `cells` is empty in that case.
    shared_failure: Option<String>,
    /// Per estimator: ε or failure message, plus wall seconds.
    cells: Vec<(std::result::Result<f64, String>, f64)>,
}

struct RunContext<'a> {
    config: &'a ExperimentConfig,
    plans: &'a [ComboPlan],
    csv: Option<&'a CsvData>,
}

fn run_cell_batch(ctx: &RunContext<'_>, m: usize, combo: usize) -> CellBatch {
    let shared = (|| -> Result<Vec<(std::result::Result<f64, String>, f64)>> {
        let config = ctx.config;
        let plan = &ctx.plans[combo];

        // Data for this replication, plus its reference effects.
        let generated;
        let (data, theta): (&ObservationSet, Vec<f64>) = match ctx.csv {
            Some(csv) => (&csv.data, csv.theta.clone()),
            None => {
                let mut dgp = config.data.simulate.clone().expect("checked by config");
                dgp.seed = seed::derive(config.master_seed, &[stream::DGP, m as u64]);
                let (d, truth) = generate(&dgp)?;
                generated = (d, truth.theta);
                (&generated.0, generated.1.clone())
            }
        };
        let space = &data.treatment_space;
        let truth_matrix = matrix_from_theta(space, &theta)?;

        let split = split_indices(
            data.n_rows(),
            config.split,
            seed::derive(config.master_seed, &[stream::SPLIT, m as u64]),
        )?;

        // Resolve the learner pair: frozen global choice, or tuned here.
        let (reg_kind, clf_kind) = match &plan.resolved {
            Some(pair) => pair.clone(),
            None => (
                tune_regressor(
                    &plan.reg_cands,
                    data,
                    &split,
                    seed::derive(config.master_seed, &[stream::TUNE, 3, m as u64, combo as u64]),
                )?,
                tune_classifier(
                    &plan.clf_cands,
                    data,
                    &split,
                    seed::derive(config.master_seed, &[stream::TUNE, 4, m as u64, combo as u64]),
                )?,
            ),
        };
        let regressor = RegressorSpec {
            kind: reg_kind,
            seed: seed::derive(config.master_seed, &[stream::FIT, m as u64, combo as u64, 0]),
        };
        let classifier = ClassifierSpec {
            kind: clf_kind,
            seed: seed::derive(config.master_seed, &[stream::FIT, m as u64, combo as u64, 1]),
        };

        let fit = fit_nuisances(data, &split.train, &regressor, &classifier)?;
        let eval_rows: Vec<usize> = match config.evaluation_split {
            EvalSplit::Train => split.train.clone(),
            EvalSplit::Test => split.test.clone(),
            EvalSplit::Both => {
                let mut rows = split.train.clone();
                rows.extend_from_slice(&split.test);
                rows.sort_unstable();
                rows
            }
        };
        let eval_data = data.subset(&eval_rows);
        let values = tabulate(&fit, &eval_data)?;

        let mut cells = Vec::with_capacity(config.estimators.len());
        for (e, spec) in config.estimators.iter().enumerate() {
            let started = Instant::now();
            let mut spec = spec.clone();
            if spec.kind == EstimatorKind::Rcl {
                spec.rcl.seed = seed::derive(
                    config.master_seed,
                    &[stream::PICK, m as u64, combo as u64, e as u64],
                );
            }
            let outcome = (|| -> Result<f64> {
                let estimates: Vec<LevelEstimate> = space
                    .labels()
                    .iter()
                    .map(|level| estimate(&spec, &values, &eval_data, level))
                    .collect::<Result<_>>()?;
                let est_matrix = ate_matrix(&estimates, space)?;
                epsilon_ate_single(&est_matrix, &truth_matrix)
            })();
            cells.push((
                outcome.map_err(|e| e.to_string()),
                started.elapsed().as_secs_f64(),
            ));
        }
        Ok(cells)
    })();

    match shared {
        Ok(cells) => CellBatch {
            replication: m,
            combo,
            shared_failure: None,
            cells,
        },
        Err(e) => CellBatch {
            replication: m,
            combo,
            shared_failure: Some(e.to_string()),
            cells: Vec::new(),
        },
    }
}

/// Execute the full experiment. Only configuration-level problems abort;
/// cell errors land in [`RunReport::failures`] and the sweep continues.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.check()?;
    let started = Instant::now();

    // CSV data loads once; simulated data is drawn per replication.
    let csv = match config.data.source.as_str() {
        "csv" => {
            let source = config.data.csv.as_ref().expect("checked by config");
            let data = read_csv(&source.path, None)?;
            let sidecar = read_truth_csv(&source.truth)?;
            let theta = order_truth(&data.treatment_space, &sidecar)?;
            Some(CsvData { data, theta })
        }
        _ => None,
    };

    // Prepare combos; under global tuning, resolve open hyperparameters
    // now on a dedicated tuning dataset.
    let mut tuning_data: Option<(ObservationSet, SplitIndex)> = None;
    let mut plans = Vec::with_capacity(config.learners.len());
    for (combo, learner) in config.learners.iter().enumerate() {
        let reg_cands = regressor_candidates(learner)?;
        let clf_cands = classifier_candidates(learner)?;
        let needs_tuning = reg_cands.len() > 1 || clf_cands.len() > 1;
        let resolved = if !needs_tuning {
            Some((reg_cands[0].clone(), clf_cands[0].clone()))
        } else if config.tuning == Tuning::Global {
            if tuning_data.is_none() {
                let data = match &csv {
                    Some(csv) => csv.data.clone(),
                    None => {
                        let mut dgp = config.data.simulate.clone().expect("checked by config");
                        dgp.seed = seed::derive(config.master_seed, &[stream::TUNE]);
                        generate(&dgp)?.0
                    }
                };
                let split = split_indices(
                    data.n_rows(),
                    config.split,
                    seed::derive(config.master_seed, &[stream::TUNE, 0]),
                )?;
                tuning_data = Some((data, split));
            }
            let (data, split) = tuning_data.as_ref().expect("just built");
            Some((
                tune_regressor(
                    &reg_cands,
                    data,
                    split,
                    seed::derive(config.master_seed, &[stream::TUNE, 1, combo as u64]),
                )?,
                tune_classifier(
                    &clf_cands,
                    data,
                    split,
                    seed::derive(config.master_seed, &[stream::TUNE, 2, combo as u64]),
                )?,
            ))
        } else {
            None
        };
        plans.push(ComboPlan {
            label: learner.label(),
            reg_cands,
            clf_cands,
            resolved,
        });
    }
    drop(tuning_data);

    let ctx = RunContext {
        config,
        plans: &plans,
        csv: csv.as_ref(),
    };

    // Replication-major work list; rayon's collect keeps item order, so
    // the reduction below is schedule-independent.
    let items: Vec<(usize, usize)> = (0..config.replications)
        .flat_map(|m| (0..plans.len()).map(move |combo| (m, combo)))
        .collect();
    let batches: Vec<CellBatch> = items
        .par_iter()
        .map(|&(m, combo)| run_cell_batch(&ctx, m, combo))
        .collect();

    // Single-threaded reduction in (combo, estimator, replication) order.
    let n_estimators = config.estimators.len();
    let m_total = config.replications;
    let mut per_cell: Vec<Vec<Option<f64>>> =
        vec![vec![None; m_total]; plans.len() * n_estimators];
    let mut wall: Vec<f64> = vec![0.0; plans.len() * n_estimators];
    let mut failures = Vec::new();
    for batch in &batches {
        if let Some(message) = &batch.shared_failure {
            failures.push(CellFailure {
                replication: batch.replication,
                learner: plans[batch.combo].label.clone(),
                estimator: None,
                message: message.clone(),
            });
            continue;
        }
        for (e, (outcome, secs)) in batch.cells.iter().enumerate() {
            let slot = batch.combo * n_estimators + e;
            wall[slot] += secs;
            match outcome {
                Ok(eps) => per_cell[slot][batch.replication] = Some(*eps),
                Err(message) => failures.push(CellFailure {
                    replication: batch.replication,
                    learner: plans[batch.combo].label.clone(),
                    estimator: Some(config.estimators[e].name()),
                    message: message.clone(),
                }),
            }
        }
    }
    failures.sort_by(|a, b| {
        (a.replication, &a.learner, &a.estimator).cmp(&(b.replication, &b.learner, &b.estimator))
    });

    let mut rows = Vec::with_capacity(plans.len() * n_estimators);
    let mut per_replication = Vec::new();
    for (combo, plan) in plans.iter().enumerate() {
        for (e, spec) in config.estimators.iter().enumerate() {
            let slot = combo * n_estimators + e;
            let values: Vec<f64> = per_cell[slot].iter().flatten().copied().collect();
            let propagating = aggregate(&values, false);
            let finite = aggregate(&values, true);
            rows.push(MetricRow {
                estimator: spec.name(),
                learner: plan.label.clone(),
                epsilon: propagating.mean,
                sigma: propagating.sd,
                epsilon_finite: finite.mean,
                sigma_finite: finite.sd,
                nonfinite_count: finite.nonfinite_count,
                failed_count: m_total - values.len(),
                wall_secs: wall[slot],
            });
            for (m, value) in per_cell[slot].iter().enumerate() {
                per_replication.push(RepRecord {
                    replication: m,
                    learner: plan.label.clone(),
                    estimator: spec.name(),
                    epsilon: *value,
                });
            }
        }
    }

    // Ratios per combo, on the convention the config selected.
    let mut ratios = Vec::with_capacity(plans.len());
    for (combo, plan) in plans.iter().enumerate() {
        let mut combo_rows: Vec<MetricRow> =
            rows[combo * n_estimators..(combo + 1) * n_estimators].to_vec();
        if config.finite_only {
            for row in &mut combo_rows {
                row.epsilon = row.epsilon_finite;
            }
        }
        match reduction_ratios(&combo_rows) {
            Ok((r_dr, r_dml)) => ratios.push(ComboRatios {
                learner: plan.label.clone(),
                r_dr: Some(r_dr),
                r_dml: Some(r_dml),
                note: None,
            }),
            Err(e) => ratios.push(ComboRatios {
                learner: plan.label.clone(),
                r_dr: None,
                r_dml: None,
                note: Some(e.to_string()),
            }),
        }
    }

    let report = RunReport {
        rows,
        per_replication,
        ratios,
        failures,
        wall_secs: started.elapsed().as_secs_f64(),
    };
    log::info!(
        "run finished: {} cells, {} failures, {:.1}s wall",
        report.rows.len(),
        report.failures.len(),
        report.wall_secs
    );
    Ok(report)
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// A CSV writer for a report file, with the house error mapping.
fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Csv {
        line: 0,
        message: e.to_string(),
    })
}

/// Write one record, tagging errors with a 1-based line number. Fields
/// holding commas (the RCL estimator names do) are quoted by the writer.
fn csv_row<W: std::io::Write>(
    writer: &mut csv::Writer<W>,
    line: usize,
    fields: &[String],
) -> Result<()> {
    writer.write_record(fields).map_err(|e| Error::Csv {
        line,
        message: e.to_string(),
    })
}

fn csv_header<W: std::io::Write>(writer: &mut csv::Writer<W>, names: &[&str]) -> Result<()> {
    writer.write_record(names).map_err(|e| Error::Csv {
        line: 1,
        message: e.to_string(),
    })
}

/// Write `report.csv`, `per_replication.csv`, `ratios.csv`, and
/// `report.txt` into `dir`. No wall-clock times are written, so reruns
/// with the same master seed produce byte-identical files.
pub fn write_report(report: &RunReport, config: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut writer = csv_writer(&dir.join("report.csv"))?;
    csv_header(
        &mut writer,
        &[
            "learner",
            "estimator",
            "epsilon",
            "sigma",
            "epsilon_finite",
            "sigma_finite",
            "nonfinite_count",
            "failed_count",
        ],
    )?;
    for (i, row) in report.rows.iter().enumerate() {
        csv_row(
            &mut writer,
            i + 2,
            &[
                row.learner.clone(),
                row.estimator.clone(),
                row.epsilon.to_string(),
                fmt_opt(row.sigma),
                row.epsilon_finite.to_string(),
                fmt_opt(row.sigma_finite),
                row.nonfinite_count.to_string(),
                row.failed_count.to_string(),
            ],
        )?;
    }
    writer.flush()?;

    let mut writer = csv_writer(&dir.join("per_replication.csv"))?;
    csv_header(&mut writer, &["replication", "learner", "estimator", "epsilon"])?;
    for (i, record) in report.per_replication.iter().enumerate() {
        csv_row(
            &mut writer,
            i + 2,
            &[
                record.replication.to_string(),
                record.learner.clone(),
                record.estimator.clone(),
                fmt_opt(record.epsilon),
            ],
        )?;
    }
    writer.flush()?;

    let mut writer = csv_writer(&dir.join("ratios.csv"))?;
    csv_header(&mut writer, &["learner", "r_dr", "r_dml"])?;
    for (i, ratio) in report.ratios.iter().enumerate() {
        csv_row(
            &mut writer,
            i + 2,
            &[
                ratio.learner.clone(),
                fmt_opt(ratio.r_dr),
                fmt_opt(ratio.r_dml),
            ],
        )?;
    }
    writer.flush()?;

    std::fs::write(dir.join("report.txt"), text_table(report, config))?;
    Ok(())
}

/// Render the aligned plain-text summary table (the `report.txt` body).
pub fn text_table(report: &RunReport, config: &ExperimentConfig) -> String {
    let headers = [
        "learner",
        "estimator",
        "epsilon",
        "sigma",
        "eps(finite)",
        "sigma(finite)",
        "nonfinite",
        "failed",
    ];
    let cells: Vec<[String; 8]> = report
        .rows
        .iter()
        .map(|row| {
            [
                row.learner.clone(),
                row.estimator.clone(),
                format!("{:.6}", row.epsilon),
                row.sigma.map(|v| format!("{v:.6}")).unwrap_or_default(),
                format!("{:.6}", row.epsilon_finite),
                row.sigma_finite
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_default(),
                row.nonfinite_count.to_string(),
                row.failed_count.to_string(),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }

    let mut out = String::new();
    out.push_str(&format!(
        "ε_ATE over {} replications (evaluation: {:?}, ratio convention: {})\n\n",
        config.replications,
        config.evaluation_split,
        if config.finite_only {
            "finite-only"
        } else {
            "propagating"
        },
    ));
    let mut line = String::new();
    for (h, w) in headers.iter().zip(&widths) {
        line.push_str(&format!("{h:<w$}  "));
    }
    out.push_str(line.trim_end());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in &cells {
        let mut line = String::new();
        for (cell, w) in row.iter().zip(&widths) {
            line.push_str(&format!("{cell:<w$}  "));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }

    out.push('\n');
    for ratio in &report.ratios {
        match (ratio.r_dr, ratio.r_dml) {
            (Some(r_dr), Some(r_dml)) => out.push_str(&format!(
                "{}: R_DR = {:+.1}%, R_DML = {:+.1}%\n",
                ratio.learner,
                100.0 * r_dr,
                100.0 * r_dml,
            )),
            _ => out.push_str(&format!(
                "{}: ratios unavailable ({})\n",
                ratio.learner,
                ratio.note.as_deref().unwrap_or("unknown"),
            )),
        }
    }

    out.push('\n');
    if report.failures.is_empty() {
        out.push_str("failures: none\n");
    } else {
        out.push_str(&format!("failures: {}\n", report.failures.len()));
        for f in &report.failures {
            out.push_str(&format!(
                "  replication {}, {}, {}: {}\n",
                f.replication,
                f.learner,
                f.estimator.as_deref().unwrap_or("all estimators"),
                f.message,
            ));
        }
    }
    out
}

/// Re-run the experiment over the sweep grids and write `plot_n.csv` /
/// `plot_rc.csv` series for external plotting. Simulated data only.
pub fn write_plot_data(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    if config.data.source != "simulate" {
        return Err(Error::Config(
            "plot-data sweeps need a simulated data source".to_string(),
        ));
    }
    let sweep = config.sweep.clone().unwrap_or_default();
    std::fs::create_dir_all(dir)?;

    let mut writer = csv_writer(&dir.join("plot_n.csv"))?;
    csv_header(
        &mut writer,
        &["n", "learner", "estimator", "epsilon", "epsilon_finite"],
    )?;
    let mut line = 1;
    for &n in &sweep.n_values {
        let mut sub = config.clone();
        sub.sweep = None;
        sub.data.simulate.as_mut().expect("checked above").n = n;
        let report = run(&sub)?;
        for row in &report.rows {
            line += 1;
            csv_row(
                &mut writer,
                line,
                &[
                    n.to_string(),
                    row.learner.clone(),
                    row.estimator.clone(),
                    row.epsilon.to_string(),
                    row.epsilon_finite.to_string(),
                ],
            )?;
        }
    }
    writer.flush()?;

    let mut writer = csv_writer(&dir.join("plot_rc.csv"))?;
    csv_header(
        &mut writer,
        &["r_c", "learner", "estimator", "epsilon", "epsilon_finite"],
    )?;
    let mut line = 1;
    for &r_c in &sweep.r_c_values {
        let mut sub = config.clone();
        sub.sweep = None;
        sub.data.simulate.as_mut().expect("checked above").r_c = r_c;
        let report = run(&sub)?;
        for row in &report.rows {
            line += 1;
            csv_row(
                &mut writer,
                line,
                &[
                    r_c.to_string(),
                    row.learner.clone(),
                    row.estimator.clone(),
                    row.epsilon.to_string(),
                    row.epsilon_finite.to_string(),
                ],
            )?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Run and emit reports into the resolved output directory; optionally
/// also the sweep series. Returns the report and the directory used.
pub fn run_experiment(
    config: &ExperimentConfig,
    emit_plot_data: bool,
) -> Result<(RunReport, PathBuf)> {
    let dir = config.resolve_output_dir();
    let report = run(config)?;
    write_report(&report, config, &dir)?;
    if emit_plot_data {
        write_plot_data(config, &dir)?;
    }
    Ok((report, dir))
}
