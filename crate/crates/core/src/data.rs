//! Containers for multi-group observational data and propensity outputs.
//!
//! Groups are stored 0-based internally and reported 1-based (`group 1` is
//! the reference group of the propensity model). Original treatment labels
//! are kept alongside so every output can echo the re-encoding.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on propensity row sums.
pub const SIMPLEX_TOL: f64 = 1e-10;

/// `n` units with covariates, a group label in `0..J` and an optional outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalSample {
    covariates: Array2<f64>,
    covariate_names: Vec<String>,
    groups: Vec<usize>,
    labels: Vec<String>,
    outcome: Option<Vec<f64>>,
    group_sizes: Vec<usize>,
}

impl ObservationalSample {
    /// Builds and validates a sample. `labels[j]` is the original name of group `j`.
    pub fn new(
        covariates: Array2<f64>,
        covariate_names: Vec<String>,
        groups: Vec<usize>,
        labels: Vec<String>,
        outcome: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        if covariate_names.len() != covariates.ncols() {
            return Err(Error::Dimension {
                what: "covariate names",
                expected: covariates.ncols(),
                found: covariate_names.len(),
            });
        }
        if groups.len() != n {
            return Err(Error::Dimension {
                what: "treatment labels",
                expected: n,
                found: groups.len(),
            });
        }
        if let Some(y) = &outcome {
            if y.len() != n {
                return Err(Error::Dimension {
                    what: "outcome",
                    expected: n,
                    found: y.len(),
                });
            }
            if let Some(row) = y.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    row,
                    column: "outcome".into(),
                });
            }
        }
        if labels.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least two treatment groups, found {}",
                labels.len()
            )));
        }
        for (row, x) in covariates.outer_iter().enumerate() {
            if let Some(col) = x.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    row,
                    column: covariate_names[col].clone(),
                });
            }
        }
        let mut group_sizes = vec![0usize; labels.len()];
        for (row, &g) in groups.iter().enumerate() {
            match group_sizes.get_mut(g) {
                Some(c) => *c += 1,
                None => {
                    return Err(Error::UnknownLabel {
                        row,
                        label: (g + 1).to_string(),
                    })
                }
            }
        }
        if let Some(j) = group_sizes.iter().position(|&c| c == 0) {
            return Err(Error::EmptyGroup(labels[j].clone()));
        }
        Ok(Self {
            covariates,
            covariate_names,
            groups,
            labels,
            outcome,
            group_sizes,
        })
    }

    pub fn n(&self) -> usize {
        self.groups.len()
    }

    /// Number of treatment groups `J`.
    pub fn n_groups(&self) -> usize {
        self.labels.len()
    }

    /// Number of covariates `p` (excluding the intercept).
    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> ArrayView2<'_, f64> {
        self.covariates.view()
    }

    pub fn covariate(&self, unit: usize) -> ArrayView1<'_, f64> {
        self.covariates.row(unit)
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// 0-based group of every unit.
    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn has_outcome(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn outcome(&self) -> Result<&[f64]> {
        self.outcome.as_deref().ok_or(Error::OutcomeRequired)
    }

    pub fn with_outcome(mut self, outcome: Vec<f64>) -> Result<Self> {
        let covariates = std::mem::take(&mut self.covariates);
        Self::new(
            covariates,
            self.covariate_names,
            self.groups,
            self.labels,
            Some(outcome),
        )
    }

    /// Sample made of the listed units, in the listed order (repeats allowed).
    pub fn subset(&self, units: &[usize]) -> Result<Self> {
        let covariates = self.covariates.select(Axis(0), units);
        let groups = units.iter().map(|&i| self.groups[i]).collect();
        let outcome = self
            .outcome
            .as_ref()
            .map(|y| units.iter().map(|&i| y[i]).collect());
        Self::new(
            covariates,
            self.covariate_names.clone(),
            groups,
            self.labels.clone(),
            outcome,
        )
    }

    /// Label mapping as `(group number, original label)` pairs, 1-based.
    pub fn label_mapping(&self) -> Vec<(usize, String)> {
        self.labels
            .iter()
            .enumerate()
            .map(|(j, l)| (j + 1, l.clone()))
            .collect()
    }
}

/// Column mapping for [`load_sample`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSchema {
    pub treatment: String,
    #[serde(default)]
    pub outcome: Option<String>,
    /// Covariate columns; `None` means every remaining column.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    /// Declared treatment labels in group order. `None` re-encodes labels by
    /// first appearance.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

impl SampleSchema {
    pub fn new(treatment: impl Into<String>) -> Self {
        Self {
            treatment: treatment.into(),
            outcome: None,
            covariates: None,
            labels: None,
        }
    }

    pub fn with_outcome(mut self, outcome: impl Into<String>) -> Self {
        self.outcome = Some(outcome.into());
        self
    }
}

/// Reads a CSV with a header row into a validated sample.
pub fn load_sample(path: impl AsRef<Path>, schema: &SampleSchema) -> Result<ObservationalSample> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let treat_col = find(&schema.treatment)?;
    let outcome_col = schema.outcome.as_deref().map(find).transpose()?;
    let cov_cols: Vec<usize> = match &schema.covariates {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..header.len())
            .filter(|&c| c != treat_col && Some(c) != outcome_col)
            .collect(),
    };
    if cov_cols.is_empty() {
        return Err(Error::InvalidInput("no covariate columns selected".into()));
    }

    let mut labels: Vec<String> = schema.labels.clone().unwrap_or_default();
    let mut index: HashMap<String, usize> = labels
        .iter()
        .enumerate()
        .map(|(j, l)| (l.clone(), j))
        .collect();
    let fixed = schema.labels.is_some();

    let mut values = Vec::new();
    let mut groups = Vec::new();
    let mut outcome = outcome_col.map(|_| Vec::new());
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let label = record.get(treat_col).unwrap_or("").trim().to_owned();
        let g = match index.get(&label) {
            Some(&g) => g,
            None if fixed => return Err(Error::UnknownLabel { row, label }),
            None => {
                labels.push(label.clone());
                index.insert(label, labels.len() - 1);
                labels.len() - 1
            }
        };
        groups.push(g);
        for &c in &cov_cols {
            let v = parse_cell(&record, row, c, &header)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row,
                    column: header[c].clone(),
                });
            }
            values.push(v);
        }
        if let (Some(y), Some(c)) = (outcome.as_mut(), outcome_col) {
            y.push(parse_cell(&record, row, c, &header)?);
        }
    }
    let n = groups.len();
    let covariates = Array2::from_shape_vec((n, cov_cols.len()), values)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let names = cov_cols.iter().map(|&c| header[c].clone()).collect();
    ObservationalSample::new(covariates, names, groups, labels, outcome)
}

fn parse_cell(
    record: &csv::StringRecord,
    row: usize,
    col: usize,
    header: &[String],
) -> Result<f64> {
    let raw = record.get(col).unwrap_or("").trim();
    raw.parse::<f64>().map_err(|_| Error::Parse {
        row,
        column: header[col].clone(),
        value: raw.to_owned(),
    })
}

/// Writes a sample back to CSV: treatment label, optional outcome, covariates.
///
/// Numbers are written in shortest round-trip form, so reloading with the
/// same schema reproduces the sample bit for bit.
pub fn write_sample(
    sample: &ObservationalSample,
    path: impl AsRef<Path>,
    treatment_col: &str,
    outcome_col: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![treatment_col.to_owned()];
    let y = match outcome_col {
        Some(name) => {
            header.push(name.to_owned());
            Some(sample.outcome()?)
        }
        None => None,
    };
    header.extend(sample.covariate_names().iter().cloned());
    w.write_record(&header)?;
    for i in 0..sample.n() {
        let mut rec = vec![sample.labels()[sample.groups()[i]].clone()];
        if let Some(y) = y {
            rec.push(y[i].to_string());
        }
        rec.extend(sample.covariate(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes `unit_id` followed by one column per entry of `header`.
pub fn write_matrix(
    path: impl AsRef<Path>,
    header: &[String],
    values: ArrayView2<'_, f64>,
) -> Result<()> {
    let path = path.as_ref();
    if header.len() != values.ncols() {
        return Err(Error::Dimension {
            what: "matrix header",
            expected: values.ncols(),
            found: header.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut head = vec!["unit_id".to_owned()];
    head.extend(header.iter().cloned());
    w.write_record(&head)?;
    for (i, row) in values.outer_iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Where a propensity matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    TrueScores,
    Fitted,
}

/// `n × J` generalized propensity scores; rows lie strictly inside the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityMatrix {
    e: Array2<f64>,
    source: ScoreSource,
}

impl PropensityMatrix {
    pub fn new(e: Array2<f64>, source: ScoreSource) -> Result<Self> {
        validate_propensities(e.view())?;
        Ok(Self { e, source })
    }

    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    pub fn n_groups(&self) -> usize {
        self.e.ncols()
    }

    pub fn scores(&self) -> ArrayView2<'_, f64> {
        self.e.view()
    }

    pub fn row(&self, unit: usize) -> ArrayView1<'_, f64> {
        self.e.row(unit)
    }

    pub fn source(&self) -> ScoreSource {
        self.source
    }

    /// Rows for the listed units.
    pub fn select(&self, units: &[usize]) -> Self {
        Self {
            e: self.e.select(Axis(0), units),
            source: self.source,
        }
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.e
    }
}

/// Checks the row-simplex and strict-positivity conditions.
pub fn validate_propensities(e: ArrayView2<'_, f64>) -> Result<()> {
    if e.ncols() < 2 {
        return Err(Error::InvalidInput(
            "propensity matrix needs at least two columns".into(),
        ));
    }
    for (row, r) in e.outer_iter().enumerate() {
        for (col, &v) in r.iter().enumerate() {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Positivity { row, col, value: v });
            }
        }
        let sum: f64 = r.sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Normalization { row, sum });
        }
    }
    Ok(())
}

/// Coefficients `a` of a linear contrast `Σ_j a_j m_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSpec {
    pub a: Vec<f64>,
    pub label: String,
}

impl ContrastSpec {
    pub fn new(a: Vec<f64>, label: impl Into<String>) -> Self {
        Self {
            a,
            label: label.into(),
        }
    }

    /// `λ_j − λ_k` over `n_groups` groups (0-based `j`, `k`), labelled `(j+1,k+1)`.
    pub fn pairwise(j: usize, k: usize, n_groups: usize) -> Self {
        assert!(
            j < n_groups && k < n_groups && j != k,
            "invalid pair ({j}, {k})"
        );
        let mut a = vec![0.0; n_groups];
        a[j] = 1.0;
        a[k] = -1.0;
        Self::new(a, format!("({},{})", j + 1, k + 1))
    }

    /// All `j < k` pairs in lexicographic order.
    pub fn all_pairwise(n_groups: usize) -> Vec<Self> {
        let mut out = Vec::with_capacity(n_groups * (n_groups - 1) / 2);
        for j in 0..n_groups {
            for k in j + 1..n_groups {
                out.push(Self::pairwise(j, k, n_groups));
            }
        }
        out
    }

    /// Returns `(j, k)` if this is `λ_j − λ_k`.
    pub fn as_pair(&self) -> Option<(usize, usize)> {
        let mut plus = None;
        let mut minus = None;
        for (j, &v) in self.a.iter().enumerate() {
            match v {
                v if v == 1.0 && plus.is_none() => plus = Some(j),
                v if v == -1.0 && minus.is_none() => minus = Some(j),
                0.0 => {}
                _ => return None,
            }
        }
        plus.zip(minus)
    }

    pub fn is_pairwise(&self) -> bool {
        self.as_pair().is_some()
    }

    pub fn apply(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.a.len() {
            return Err(Error::Dimension {
                what: "contrast coefficients",
                expected: values.len(),
                found: self.a.len(),
            });
        }
        Ok(self.a.iter().zip(values).map(|(a, m)| a * m).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn labels_are_encoded_by_first_appearance() {
        let f = write_tmp("z,x1,x2\nA,1,2\nB,3,4\nA,5,6\nC,7,8\nB,9,10\nC,11,12\n");
        let s = load_sample(f.path(), &SampleSchema::new("z")).unwrap();
        assert_eq!(s.n(), 6);
        assert_eq!(s.n_groups(), 3);
        assert_eq!(s.labels(), ["A", "B", "C"]);
        assert_eq!(s.groups(), [0, 1, 0, 2, 1, 2]);
        assert_eq!(s.group_sizes(), [2, 2, 2]);
        assert_eq!(s.covariate_names(), ["x1", "x2"]);
        assert_eq!(
            s.label_mapping(),
            vec![(1, "A".into()), (2, "B".into()), (3, "C".into())]
        );
    }

    #[test]
    fn nan_covariate_names_row_and_column() {
        let f = write_tmp("z,x1,x2\nA,1,2\nB,NaN,4\n");
        match load_sample(f.path(), &SampleSchema::new("z")) {
            Err(Error::NonFinite { row, column }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "x1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_outcome_is_an_explicit_error() {
        let f = write_tmp("z,x\nA,1\nB,2\n");
        let s = load_sample(f.path(), &SampleSchema::new("z")).unwrap();
        assert!(matches!(s.outcome(), Err(Error::OutcomeRequired)));
    }

    #[test]
    fn load_errors() {
        let f = write_tmp("z,x\nA,1\nB,2\n");
        assert!(matches!(
            load_sample(f.path(), &SampleSchema::new("t")),
            Err(Error::MissingColumn(c)) if c == "t"
        ));
        let mut schema = SampleSchema::new("z");
        schema.labels = Some(vec!["A".into(), "C".into()]);
        assert!(matches!(
            load_sample(f.path(), &schema),
            Err(Error::UnknownLabel { row: 1, .. })
        ));
        schema.labels = Some(vec!["A".into(), "B".into(), "C".into()]);
        assert!(matches!(
            load_sample(f.path(), &schema),
            Err(Error::EmptyGroup(g)) if g == "C"
        ));
        assert!(matches!(
            load_sample("/definitely/not/here.csv", &SampleSchema::new("z")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn write_then_load_round_trips() {
        let x = array![[0.1, 1e-300], [2.0 / 3.0, -7.25], [1e17, 3.0]];
        let s = ObservationalSample::new(
            x,
            vec!["a".into(), "b".into()],
            vec![1, 0, 1],
            vec!["ctl".into(), "trt".into()],
            Some(vec![0.3, -1.0 / 7.0, 2.5]),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_sample(&s, &path, "z", Some("y")).unwrap();
        let mut schema = SampleSchema::new("z").with_outcome("y");
        schema.labels = Some(vec!["ctl".into(), "trt".into()]);
        let back = load_sample(&path, &schema).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn propensity_validation() {
        let third = 1.0 / 3.0;
        assert!(validate_propensities(array![[third, third, third]].view()).is_ok());
        assert!(matches!(
            validate_propensities(array![[0.0, 0.5, 0.5]].view()),
            Err(Error::Positivity { row: 0, col: 0, .. })
        ));
        assert!(matches!(
            validate_propensities(array![[0.2, 0.5, 0.31]].view()),
            Err(Error::Normalization { row: 0, .. })
        ));
    }

    #[test]
    fn pairwise_contrasts() {
        let all = ContrastSpec::all_pairwise(3);
        let labels: Vec<_> = all.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(labels, ["(1,2)", "(1,3)", "(2,3)"]);
        assert_eq!(ContrastSpec::all_pairwise(6).len(), 15);
        assert_eq!(all[1].as_pair(), Some((0, 2)));
        assert!(!ContrastSpec::new(vec![1.0, -2.0, 1.0], "quad").is_pairwise());
        assert!(all[0].apply(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn group_sizes_sum_to_n() {
        let s = ObservationalSample::new(
            Array2::zeros((5, 1)),
            vec!["x".into()],
            vec![0, 1, 2, 2, 1],
            vec!["a".into(), "b".into(), "c".into()],
            None,
        )
        .unwrap();
        assert_eq!(s.group_sizes().iter().sum::<usize>(), s.n());
    }
}
