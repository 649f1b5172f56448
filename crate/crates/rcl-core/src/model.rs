//! Datasets, treatment spaces, splits, and CSV ingestion.
//!
//! The estimand lives on a finite treatment space {d¹, …, dⁿ}. Treatment
//! identifiers are opaque tokens; the simulation attaches a numeric dose to
//! each level because its outcome surface needs one, but estimators never
//! read the dose. An [`ObservationSet`] carries the observed realizations
//! {(y_m, d_m, z_m)}: outcomes, treatment tokens, and a dense covariate
//! matrix. All types are immutable after construction and safe to share
//! across parallel workers; every operation here is a pure function.

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

/// One treatment level: an identifying token plus an optional numeric dose.
///
/// The dose exists for the simulation's outcome surface (its e^{√d} factor);
/// estimation treats levels as purely categorical.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentLevel {
    /// Opaque identifier, e.g. `"d1"` or `"placebo"`.
    pub label: String,
    /// Numeric dose, if the level has one.
    pub dose: Option<f64>,
}

/// The ordered set of distinct treatment levels d¹..dⁿ.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentSpace {
    levels: Vec<TreatmentLevel>,
}

impl TreatmentSpace {
    /// Build a space from bare labels (no doses).
    ///
    /// Errors when fewer than 2 labels are given or labels repeat.
    pub fn new<S: Into<String>>(labels: Vec<S>) -> Result<Self> {
        Self::from_levels(
            labels
                .into_iter()
                .map(|l| TreatmentLevel {
                    label: l.into(),
                    dose: None,
                })
                .collect(),
        )
    }

    /// Build a space from labels with doses attached.
    pub fn with_doses<S: Into<String>>(labeled: Vec<(S, f64)>) -> Result<Self> {
        Self::from_levels(
            labeled
                .into_iter()
                .map(|(l, d)| TreatmentLevel {
                    label: l.into(),
                    dose: Some(d),
                })
                .collect(),
        )
    }

    fn from_levels(levels: Vec<TreatmentLevel>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a treatment space needs at least 2 levels, got {}",
                levels.len()
            )));
        }
        for (i, level) in levels.iter().enumerate() {
            if levels[..i].iter().any(|other| other.label == level.label) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate treatment label `{}`",
                    level.label
                )));
            }
        }
        Ok(Self { levels })
    }

    /// Number of levels n.
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// The levels in order.
    pub fn levels(&self) -> &[TreatmentLevel] {
        &self.levels
    }

    /// Labels in order.
    pub fn labels(&self) -> Vec<&str> {
        self.levels.iter().map(|l| l.label.as_str()).collect()
    }

    /// Position of a label, if present.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l.label == label)
    }

    /// Position of a label, or an [`Error::UnknownLevel`].
    pub fn require(&self, label: &str) -> Result<usize> {
        self.index_of(label).ok_or_else(|| Error::UnknownLevel {
            level: label.to_string(),
        })
    }
}

/// A rule a dataset violates, locating the offending row where applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Offending row (0-based), when the rule is row-local.
    pub row: Option<usize>,
    /// Short machine-readable rule name.
    pub rule: &'static str,
    /// Human-readable detail.
    pub detail: String,
}

/// Observed realizations {(y_m, d_m, z_m)} over a treatment space.
///
/// Construction only enforces that the three containers agree in length
/// (anything else would be unusable); content rules — treatment membership,
/// finiteness — are checked by [`validate`], which *reports* violations
/// rather than failing, so that ingest pipelines can show all problems at
/// once.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    /// Outcomes Y, length N.
    pub outcomes: Vec<f64>,
    /// Treatment tokens D, length N.
    pub treatments: Vec<String>,
    /// Covariates Z, N×p.
    pub covariates: Array2<f64>,
    /// The treatment space the tokens should live in.
    pub treatment_space: TreatmentSpace,
}

impl ObservationSet {
    /// Assemble a dataset; errors only on length disagreement.
    pub fn new(
        outcomes: Vec<f64>,
        treatments: Vec<String>,
        covariates: Array2<f64>,
        treatment_space: TreatmentSpace,
    ) -> Result<Self> {
        let n = outcomes.len();
        if treatments.len() != n {
            return Err(Error::DimensionMismatch {
                what: "treatments vs outcomes",
                expected: n,
                got: treatments.len(),
            });
        }
        if covariates.nrows() != n {
            return Err(Error::DimensionMismatch {
                what: "covariate rows vs outcomes",
                expected: n,
                got: covariates.nrows(),
            });
        }
        Ok(Self {
            outcomes,
            treatments,
            covariates,
            treatment_space,
        })
    }

    /// Sample size N.
    pub fn n_rows(&self) -> usize {
        self.outcomes.len()
    }

    /// Covariate dimension p.
    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    /// Covariate row z_m.
    pub fn covariate_row(&self, m: usize) -> ArrayView1<'_, f64> {
        self.covariates.row(m)
    }

    /// Copy out the rows at `indices` (used to materialize a split).
    pub fn subset(&self, indices: &[usize]) -> Self {
        let outcomes = indices.iter().map(|&m| self.outcomes[m]).collect();
        let treatments = indices.iter().map(|&m| self.treatments[m].clone()).collect();
        let p = self.n_covariates();
        let mut covariates = Array2::zeros((indices.len(), p));
        for (out_row, &m) in indices.iter().enumerate() {
            covariates.row_mut(out_row).assign(&self.covariates.row(m));
        }
        Self {
            outcomes,
            treatments,
            covariates,
            treatment_space: self.treatment_space.clone(),
        }
    }
}

/// Check every dataset rule; an empty list means the dataset is sound.
///
/// Rules: container lengths agree (trivially true for constructed sets),
/// every treatment token is a member of the space, and outcomes/covariates
/// are finite. Each violation names its row and rule.
pub fn validate(dataset: &ObservationSet) -> Vec<Violation> {
    let mut violations = Vec::new();
    for (m, token) in dataset.treatments.iter().enumerate() {
        if dataset.treatment_space.index_of(token).is_none() {
            violations.push(Violation {
                row: Some(m),
                rule: "treatment-membership",
                detail: format!("treatment `{token}` is not in the treatment space"),
            });
        }
    }
    for (m, y) in dataset.outcomes.iter().enumerate() {
        if !y.is_finite() {
            violations.push(Violation {
                row: Some(m),
                rule: "finite-outcome",
                detail: format!("outcome is {y}"),
            });
        }
    }
    for (m, row) in dataset.covariates.rows().into_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            violations.push(Violation {
                row: Some(m),
                rule: "finite-covariate",
                detail: "covariate row contains a non-finite value".to_string(),
            });
        }
    }
    violations
}

/// The 0/1 view of the data at one treatment level: 𝟙{D = dⁱ}.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryRelabeling {
    /// The target level dⁱ.
    pub target_level: String,
    /// indicator[m] = 1 iff treatments[m] = target_level.
    pub indicator: Vec<u8>,
}

impl BinaryRelabeling {
    /// Number of rows observed at the target level.
    pub fn n_treated(&self) -> usize {
        self.indicator.iter().map(|&v| v as usize).sum()
    }

    /// Row indices observed at the target level (the factual set ℐ).
    pub fn treated_rows(&self) -> Vec<usize> {
        self.indicator
            .iter()
            .enumerate()
            .filter_map(|(m, &v)| (v == 1).then_some(m))
            .collect()
    }

    /// Row indices NOT observed at the target level (the set ℐᶜ).
    pub fn untreated_rows(&self) -> Vec<usize> {
        self.indicator
            .iter()
            .enumerate()
            .filter_map(|(m, &v)| (v == 0).then_some(m))
            .collect()
    }
}

/// Relabel the data against one level: indicator[m] = 𝟙{d_m = level}.
///
/// Errors when `level` is not a member of the treatment space. A level that
/// is in the space but absent from the data yields an all-zero indicator.
pub fn relabel(dataset: &ObservationSet, level: &str) -> Result<BinaryRelabeling> {
    dataset.treatment_space.require(level)?;
    let indicator = dataset
        .treatments
        .iter()
        .map(|t| u8::from(t == level))
        .collect();
    Ok(BinaryRelabeling {
        target_level: level.to_string(),
        indicator,
    })
}

/// Disjoint train/validation/test row indices covering 0..N.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndex {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndex {
    /// All indices in split order (train ++ validation ++ test).
    pub fn union(&self) -> Vec<usize> {
        let mut all = self.train.clone();
        all.extend_from_slice(&self.validation);
        all.extend_from_slice(&self.test);
        all
    }
}

/// Deterministically split 0..N into train/validation/test.
///
/// Construction: a seeded permutation of 0..N is sliced. Validation and test
/// take ⌊N·ratio⌋ rows each; the remainder goes to train (the largest split
/// absorbs rounding). Fractions must be positive and sum to 1 within 1e-9;
/// N must be at least 3 so every split is populated.
pub fn split(
    dataset: &ObservationSet,
    ratios: (f64, f64, f64),
    seed_value: u64,
) -> Result<SplitIndex> {
    let n = dataset.n_rows();
    split_indices(n, ratios, seed_value)
}

/// [`split`] without the dataset: operates on a bare row count.
pub fn split_indices(n: usize, ratios: (f64, f64, f64), seed_value: u64) -> Result<SplitIndex> {
    let (r_train, r_val, r_test) = ratios;
    if r_train <= 0.0 || r_val <= 0.0 || r_test <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be positive, got ({r_train}, {r_val}, {r_test})"
        )));
    }
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must sum to 1, got {}",
            r_train + r_val + r_test
        )));
    }
    if n < 3 {
        return Err(Error::TooFewRows {
            what: "split",
            needed: 3,
            got: n,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed_value));

    let n_val = ((n as f64) * r_val).floor() as usize;
    let n_test = ((n as f64) * r_test).floor() as usize;
    let n_train = n - n_val - n_test;

    let train = order[..n_train].to_vec();
    let validation = order[n_train..n_train + n_val].to_vec();
    let test = order[n_train + n_val..].to_vec();
    Ok(SplitIndex {
        train,
        validation,
        test,
    })
}

/// Read an [`ObservationSet`] from CSV with header `y,d,z1,...,zp`.
///
/// `y` must parse as a real, `d` is taken verbatim, and every `z*` must
/// parse as a real. When `space` is `None`, the treatment space is derived
/// from the distinct tokens in order of first appearance. Parse errors name
/// the offending (1-based) file line.
pub fn read_csv(path: &std::path::Path, space: Option<TreatmentSpace>) -> Result<ObservationSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Csv {
            line: 0,
            message: e.to_string(),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.len() < 3 || &headers[0] != "y" || &headers[1] != "d" {
        return Err(Error::Csv {
            line: 1,
            message: format!(
                "expected header `y,d,z1,...,zp`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    for (j, name) in headers.iter().skip(2).enumerate() {
        let expected = format!("z{}", j + 1);
        if name != expected {
            return Err(Error::Csv {
                line: 1,
                message: format!("expected covariate header `{expected}`, got `{name}`"),
            });
        }
    }
    let p = headers.len() - 2;

    let mut outcomes = Vec::new();
    let mut treatments: Vec<String> = Vec::new();
    let mut flat: Vec<f64> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::Csv {
            line,
            message: e.to_string(),
        })?;
        if record.len() != p + 2 {
            return Err(Error::Csv {
                line,
                message: format!("expected {} fields, got {}", p + 2, record.len()),
            });
        }
        let y: f64 = record[0].parse().map_err(|_| Error::Csv {
            line,
            message: format!("cannot parse outcome `{}` as a real", &record[0]),
        })?;
        outcomes.push(y);
        treatments.push(record[1].to_string());
        for j in 0..p {
            let v: f64 = record[j + 2].parse().map_err(|_| Error::Csv {
                line,
                message: format!("cannot parse covariate z{} `{}` as a real", j + 1, &record[j + 2]),
            })?;
            flat.push(v);
        }
    }

    let n = outcomes.len();
    let covariates = Array2::from_shape_vec((n, p), flat)
        .expect("row-major reshape of parsed covariates cannot fail");

    let space = match space {
        Some(s) => s,
        None => {
            let mut seen: Vec<String> = Vec::new();
            for t in &treatments {
                if !seen.contains(t) {
                    seen.push(t.clone());
                }
            }
            TreatmentSpace::new(seen)?
        }
    };
    ObservationSet::new(outcomes, treatments, covariates, space)
}

/// Write a dataset as `y,d,z1,...,zp` CSV (shortest round-trip float form).
pub fn write_csv(dataset: &ObservationSet, path: &std::path::Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        line: 0,
        message: e.to_string(),
    })?;
    let p = dataset.n_covariates();
    let mut header = vec!["y".to_string(), "d".to_string()];
    header.extend((1..=p).map(|j| format!("z{j}")));
    writer.write_record(&header).map_err(|e| Error::Csv {
        line: 1,
        message: e.to_string(),
    })?;
    for m in 0..dataset.n_rows() {
        let mut record = vec![
            format!("{}", dataset.outcomes[m]),
            dataset.treatments[m].clone(),
        ];
        record.extend(dataset.covariates.row(m).iter().map(|v| format!("{v}")));
        writer.write_record(&record).map_err(|e| Error::Csv {
            line: m + 2,
            message: e.to_string(),
        })?;
    }
    writer.flush()?;
    Ok(())
}

/// Read the ground-truth sidecar CSV `level,theta_true`.
pub fn read_truth_csv(path: &std::path::Path) -> Result<Vec<(String, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Csv {
            line: 0,
            message: e.to_string(),
        })?;
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| Error::Csv {
            line,
            message: e.to_string(),
        })?;
        if record.len() != 2 {
            return Err(Error::Csv {
                line,
                message: format!("expected `level,theta_true`, got {} fields", record.len()),
            });
        }
        let theta: f64 = record[1].parse().map_err(|_| Error::Csv {
            line,
            message: format!("cannot parse theta_true `{}` as a real", &record[1]),
        })?;
        rows.push((record[0].to_string(), theta));
    }
    Ok(rows)
}

/// Write the ground-truth sidecar CSV `level,theta_true`.
pub fn write_truth_csv(rows: &[(String, f64)], path: &std::path::Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        line: 0,
        message: e.to_string(),
    })?;
    writer
        .write_record(["level", "theta_true"])
        .map_err(|e| Error::Csv {
            line: 1,
            message: e.to_string(),
        })?;
    for (level, theta) in rows {
        writer
            .write_record([level.as_str(), &format!("{theta}")])
            .map_err(|e| Error::Csv {
                line: 0,
                message: e.to_string(),
            })?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn space2() -> TreatmentSpace {
        TreatmentSpace::new(vec!["d1", "d2"]).unwrap()
    }

    fn set3() -> ObservationSet {
        ObservationSet::new(
            vec![1.0, 2.0, 3.0],
            vec!["d1".into(), "d2".into(), "d2".into()],
            array![[0.5], [1.5], [2.5]],
            space2(),
        )
        .unwrap()
    }

    #[test]
    fn validate_clean_set_is_empty() {
        assert!(validate(&set3()).is_empty());
    }

    #[test]
    fn validate_flags_nan_outcome_with_row() {
        let mut data = set3();
        data.outcomes[2] = f64::NAN;
        let violations = validate(&data);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].row, Some(2));
        assert_eq!(violations[0].rule, "finite-outcome");
    }

    #[test]
    fn validate_flags_unknown_treatment_membership() {
        let mut data = set3();
        data.treatments[1] = "d4".into();
        let violations = validate(&data);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].rule, "treatment-membership");
    }

    #[test]
    fn relabel_matches_definition() {
        let data = set3();
        let rel = relabel(&data, "d1").unwrap();
        assert_eq!(rel.indicator, vec![1, 0, 0]);
        assert_eq!(rel.n_treated(), 1);
    }

    #[test]
    fn relabel_absent_level_is_all_zero() {
        let space = TreatmentSpace::new(vec!["d1", "d2", "d3"]).unwrap();
        let data = ObservationSet::new(
            vec![1.0, 2.0],
            vec!["d1".into(), "d2".into()],
            array![[0.0], [0.0]],
            space,
        )
        .unwrap();
        let rel = relabel(&data, "d3").unwrap();
        assert_eq!(rel.indicator, vec![0, 0]);
    }

    #[test]
    fn relabel_all_treated() {
        let data = ObservationSet::new(
            vec![1.0, 2.0],
            vec!["d2".into(), "d2".into()],
            array![[0.0], [0.0]],
            space2(),
        )
        .unwrap();
        let rel = relabel(&data, "d2").unwrap();
        assert_eq!(rel.indicator, vec![1, 1]);
    }

    #[test]
    fn relabel_unknown_level_names_it() {
        let err = relabel(&set3(), "d9").unwrap_err();
        assert!(err.to_string().contains("d9"));
    }

    #[test]
    fn relabel_is_idempotent_in_effect() {
        let data = set3();
        let first = relabel(&data, "d2").unwrap();
        let second = relabel(&data, "d2").unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn indicators_partition_rows_across_levels() {
        let data = set3();
        let per_level: Vec<_> = data
            .treatment_space
            .labels()
            .iter()
            .map(|l| relabel(&data, l).unwrap())
            .collect();
        for m in 0..data.n_rows() {
            let total: u8 = per_level.iter().map(|r| r.indicator[m]).sum();
            assert_eq!(total, 1, "row {m} must belong to exactly one level");
        }
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let n = 100;
        let idx = split_indices(n, (0.56, 0.14, 0.30), 7).unwrap();
        assert_eq!(idx.train.len(), 56);
        assert_eq!(idx.validation.len(), 14);
        assert_eq!(idx.test.len(), 30);

        let idx = split_indices(10, (0.8, 0.1, 0.1), 123).unwrap();
        assert_eq!(idx.train.len(), 8);
        assert_eq!(idx.validation.len(), 1);
        assert_eq!(idx.test.len(), 1);
    }

    #[test]
    fn split_remainder_goes_to_train() {
        // N=7 with 56/14/30: floor gives val 0.98→0, test 2.1→2, train 5.
        let idx = split_indices(7, (0.56, 0.14, 0.30), 3).unwrap();
        assert_eq!(idx.validation.len(), 0);
        assert_eq!(idx.test.len(), 2);
        assert_eq!(idx.train.len(), 5);
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_indices(50, (0.5, 0.25, 0.25), 42).unwrap();
        let b = split_indices(50, (0.5, 0.25, 0.25), 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_is_a_partition() {
        let idx = split_indices(37, (0.56, 0.14, 0.30), 9).unwrap();
        let mut all = idx.union();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_tiny_and_bad_ratios() {
        assert!(split_indices(2, (0.5, 0.25, 0.25), 1).is_err());
        assert!(split_indices(10, (0.5, 0.25, 0.35), 1).is_err());
        assert!(split_indices(10, (1.0, -0.5, 0.5), 1).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let data = set3();
        write_csv(&data, &path).unwrap();
        let back = read_csv(&path, Some(data.treatment_space.clone())).unwrap();
        assert_eq!(back.outcomes, data.outcomes);
        assert_eq!(back.treatments, data.treatments);
        assert_eq!(back.covariates, data.covariates);
    }

    #[test]
    fn csv_parse_error_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "y,d,z1\n1.0,d1,0.5\nnot-a-number,d2,1.0\n").unwrap();
        let err = read_csv(&path, None).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn csv_derives_space_in_first_appearance_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("derive.csv");
        std::fs::write(&path, "y,d,z1\n1,b,0\n2,a,0\n3,b,0\n").unwrap();
        let data = read_csv(&path, None).unwrap();
        assert_eq!(data.treatment_space.labels(), vec!["b", "a"]);
    }

    #[test]
    fn truth_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.csv");
        let rows = vec![("d1".to_string(), 1.25), ("d2".to_string(), -0.5)];
        write_truth_csv(&rows, &path).unwrap();
        assert_eq!(read_truth_csv(&path).unwrap(), rows);
    }

    #[test]
    fn subset_picks_rows_in_order() {
        let data = set3();
        let sub = data.subset(&[2, 0]);
        assert_eq!(sub.outcomes, vec![3.0, 1.0]);
        assert_eq!(sub.treatments, vec!["d2".to_string(), "d1".to_string()]);
        assert_eq!(sub.covariates, array![[2.5], [0.5]]);
    }
}
