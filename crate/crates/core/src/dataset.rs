//! Data ingestion, synthetic toy models and sample-splitting utilities.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeding::{child_seed, task_rng, TaskRng};
use crate::{Error, Result};

/// A column-oriented numeric table with one designated output column.
///
/// Immutable after construction; all cells are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
    column_names: Vec<String>,
}

impl Dataset {
    /// Build a dataset from input columns (each of length `n`), the output
    /// column and the `d + 1` column names (inputs first, output last).
    pub fn new(inputs: Vec<Vec<f64>>, output: Vec<f64>, column_names: Vec<String>) -> Result<Self> {
        let d = inputs.len();
        let n = output.len();
        if d == 0 {
            return Err(Error::Config("dataset needs at least one input column".into()));
        }
        if n < 2 {
            return Err(Error::Config(format!("dataset needs at least 2 rows, got {n}")));
        }
        if column_names.len() != d + 1 {
            return Err(Error::Config(format!(
                "expected {} column names, got {}",
                d + 1,
                column_names.len()
            )));
        }
        for (j, col) in inputs.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Config(format!(
                    "input column {} has {} rows, output has {}",
                    column_names[j],
                    col.len(),
                    n
                )));
            }
        }
        for (j, col) in inputs.iter().enumerate() {
            if let Some(r) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Ingestion(format!(
                    "non-finite value in column {} at row {}",
                    column_names[j],
                    r + 1
                )));
            }
        }
        if let Some(r) = output.iter().position(|v| !v.is_finite()) {
            return Err(Error::Ingestion(format!(
                "non-finite value in column {} at row {}",
                column_names[d],
                r + 1
            )));
        }
        Ok(Self { inputs, output, column_names })
    }

    /// Number of rows.
    pub fn n(&self) -> usize {
        self.output.len()
    }

    /// Number of input columns.
    pub fn d(&self) -> usize {
        self.inputs.len()
    }

    /// The `i`-th input column (0-based).
    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    /// All input columns.
    pub fn input_columns(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    /// The output column.
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Name of the `i`-th input column.
    pub fn input_name(&self, i: usize) -> &str {
        &self.column_names[i]
    }

    /// Name of the output column.
    pub fn output_name(&self) -> &str {
        &self.column_names[self.d()]
    }

    /// Extract the rows at `indices` into a new dataset (same columns).
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let inputs = self
            .inputs
            .iter()
            .map(|col| indices.iter().map(|&r| col[r]).collect())
            .collect();
        let output = indices.iter().map(|&r| self.output[r]).collect();
        Dataset::new(inputs, output, self.column_names.clone())
    }

    /// Deterministic 50/50 split (seeded shuffle): first half for training,
    /// second half for evaluation. The training half gets the extra row when
    /// `n` is odd.
    pub fn split_half(&self, seed: u64) -> Result<(Self, Self)> {
        let n = self.n();
        if n < 4 {
            return Err(Error::Config(format!("need at least 4 rows to split, got {n}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, &mut task_rng(child_seed(seed, "half-split")));
        let cut = n - n / 2;
        let train = self.select_rows(&order[..cut])?;
        let eval = self.select_rows(&order[cut..])?;
        Ok((train, eval))
    }
}

/// Fisher-Yates shuffle driven by the task generator.
fn shuffle(values: &mut [usize], rng: &mut TaskRng) {
    for i in (1..values.len()).rev() {
        let j = rng.random_range(0..=i);
        values.swap(i, j);
    }
}

/// Load a CSV file (RFC-4180-style, header required, '.' decimal separator).
///
/// Every cell must parse as a finite real; categorical columns must be
/// integer-coded upstream. `output_column` names the response; all other
/// columns become inputs in header order.
pub fn load_csv(path: &Path, output_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Ingestion(format!("bad header in {}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let out_idx = headers
        .iter()
        .position(|h| h == output_column)
        .ok_or_else(|| {
            Error::Config(format!(
                "output column {output_column:?} not among headers {headers:?}"
            ))
        })?;

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Ingestion(format!("row {}: {e}", r + 2)))?;
        if record.len() != headers.len() {
            return Err(Error::Ingestion(format!(
                "row {} has {} cells, expected {}",
                r + 2,
                record.len(),
                headers.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            let value = f64::from_str(cell.trim()).map_err(|_| {
                Error::Ingestion(format!(
                    "cannot parse {:?} in column {} at row {}",
                    cell,
                    headers[c],
                    r + 2
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Ingestion(format!(
                    "non-finite value {:?} in column {} at row {}",
                    cell,
                    headers[c],
                    r + 2
                )));
            }
            columns[c].push(value);
        }
    }

    let output = columns.remove(out_idx);
    let mut names = headers;
    let out_name = names.remove(out_idx);
    names.push(out_name);
    Dataset::new(columns, output, names)
}

/// Synthetic test models with independent exponential inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SyntheticModel {
    /// `Y = X_1 - X_2` with `X_1, X_2 ~ Exp(1)`; Y is standard Laplace.
    ExpDiff,
    /// `Y = sum_i X_i` with `X_i ~ Exp(rate_i)`; Y is hypoexponential.
    /// Rates must be positive and pairwise distinct.
    AdditiveExp { rates: Vec<f64> },
}

impl SyntheticModel {
    /// Additive model with the given rates, validated.
    pub fn additive_exp(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::Config("additive-exp needs at least one rate".into()));
        }
        if rates.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::Config(format!("rates must be positive reals, got {rates:?}")));
        }
        let mut sorted = rates.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(format!(
                "rates must be pairwise distinct, got {rates:?}"
            )));
        }
        Ok(SyntheticModel::AdditiveExp { rates })
    }

    /// Number of inputs.
    pub fn dimension(&self) -> usize {
        match self {
            SyntheticModel::ExpDiff => 2,
            SyntheticModel::AdditiveExp { rates } => rates.len(),
        }
    }

    /// Marginal exponential rate of input `i`.
    pub fn rate(&self, i: usize) -> f64 {
        match self {
            SyntheticModel::ExpDiff => 1.0,
            SyntheticModel::AdditiveExp { rates } => rates[i],
        }
    }

    /// The model function applied to one input row.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            SyntheticModel::ExpDiff => x[0] - x[1],
            SyntheticModel::AdditiveExp { .. } => x.iter().sum(),
        }
    }

    /// Draw `n` i.i.d. rows of the input product distribution and apply the
    /// model rowwise. Deterministic given `seed`.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 samples, got {n}")));
        }
        let d = self.dimension();
        let mut rng = task_rng(child_seed(seed, "synthetic-draw"));
        let mut inputs = vec![Vec::with_capacity(n); d];
        let mut output = Vec::with_capacity(n);
        let mut row = vec![0.0; d];
        for _ in 0..n {
            for (i, slot) in row.iter_mut().enumerate() {
                *slot = sample_exp(&mut rng, self.rate(i));
            }
            for (i, col) in inputs.iter_mut().enumerate() {
                col.push(row[i]);
            }
            output.push(self.eval(&row));
        }
        let mut names: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        names.push("y".into());
        Dataset::new(inputs, output, names)
    }

    /// CLI identifier: `exp-diff` or `additive-exp:<r1,r2,...>`.
    pub fn parse_id(id: &str) -> Result<Self> {
        if id == "exp-diff" {
            return Ok(SyntheticModel::ExpDiff);
        }
        if let Some(spec) = id.strip_prefix("additive-exp:") {
            let rates = spec
                .split(',')
                .map(|s| {
                    f64::from_str(s.trim())
                        .map_err(|_| Error::Config(format!("bad rate {s:?} in model id {id:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            return SyntheticModel::additive_exp(rates);
        }
        Err(Error::Config(format!(
            "unknown model id {id:?}; expected `exp-diff` or `additive-exp:<r1,r2,...>`"
        )))
    }
}

impl fmt::Display for SyntheticModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SyntheticModel::ExpDiff => write!(f, "exp-diff"),
            SyntheticModel::AdditiveExp { rates } => {
                let parts: Vec<String> = rates.iter().map(|r| r.to_string()).collect();
                write!(f, "additive-exp:{}", parts.join(","))
            }
        }
    }
}

/// Exponential draw by inverse CDF; `u` is kept inside `(0, 1]`.
pub(crate) fn sample_exp(rng: &mut TaskRng, rate: f64) -> f64 {
    let u = 1.0 - rng.random::<f64>();
    -u.ln() / rate
}

/// A reproducible random partition of `{0..n-1}` into `k` folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    assignments: Vec<u32>,
    k: usize,
    seed: u64,
}

impl FoldPlan {
    /// Fold label (0-based, `< k`) of row `idx`.
    pub fn fold_of(&self, idx: usize) -> usize {
        self.assignments[idx] as usize
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Row indices of fold `f`, ascending.
    pub fn fold_members(&self, f: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of(i) == f).collect()
    }

    /// `(test, train)` row indices for fold `f`, both ascending.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let mut test = Vec::new();
        let mut train = Vec::new();
        for i in 0..self.n() {
            if self.fold_of(i) == f {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (test, train)
    }
}

/// Randomly partition `{0..n-1}` into `k` folds whose sizes differ by at
/// most one. Reproducible from `seed`.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::Config(format!("fold count {k} out of range [2, {n}]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut task_rng(child_seed(seed, "fold-plan")));
    let mut assignments = vec![0u32; n];
    for (pos, &row) in order.iter().enumerate() {
        assignments[row] = (pos % k) as u32;
    }
    Ok(FoldPlan { assignments, k, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn csv_roundtrip_small() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "a,b,y\n1.0,2.0,3.5\n4.0,5.0,6.5\n7.0,8.0,9.5").unwrap();
        let data = load_csv(file.path(), "y").unwrap();
        assert_eq!(data.n(), 3);
        assert_eq!(data.d(), 2);
        assert_eq!(data.input_name(0), "a");
        assert_eq!(data.output_name(), "y");
        assert_eq!(data.output(), &[3.5, 6.5, 9.5]);
        assert_eq!(data.input(1), &[2.0, 5.0, 8.0]);
    }

    #[test]
    fn csv_output_column_in_the_middle() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "a,y,b\n1,10,2\n3,30,4").unwrap();
        let data = load_csv(file.path(), "y").unwrap();
        assert_eq!(data.d(), 2);
        assert_eq!(data.input_name(0), "a");
        assert_eq!(data.input_name(1), "b");
        assert_eq!(data.input(1), &[2.0, 4.0]);
        assert_eq!(data.output(), &[10.0, 30.0]);
    }

    #[test]
    fn csv_rejects_nan_and_bad_cells() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "a,y\n1.0,2.0\nNaN,4.0").unwrap();
        let err = load_csv(file.path(), "y").unwrap_err();
        assert!(matches!(err, Error::Ingestion(_)), "{err}");
        assert!(err.to_string().contains("row 3"), "{err}");

        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "a,y\n1.0,2.0\nfoo,4.0").unwrap();
        let err = load_csv(file.path(), "y").unwrap_err();
        assert!(err.to_string().contains('a'), "{err}");
    }

    #[test]
    fn csv_missing_output_column_is_config_error() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "a,b\n1,2\n3,4").unwrap();
        let err = load_csv(file.path(), "z").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn expdiff_output_is_rowwise_difference() {
        let data = SyntheticModel::ExpDiff.generate(4, 0).unwrap();
        assert_eq!(data.n(), 4);
        assert_eq!(data.d(), 2);
        for r in 0..4 {
            assert_eq!(data.output()[r], data.input(0)[r] - data.input(1)[r]);
        }
    }

    #[test]
    fn additive_exp_mean_matches_exponential() {
        let model = SyntheticModel::additive_exp(vec![1.0]).unwrap();
        let data = model.generate(10_000, 1).unwrap();
        let mean = data.output().iter().sum::<f64>() / data.n() as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn additive_exp_rejects_tied_rates() {
        let err = SyntheticModel::additive_exp(vec![0.3, 0.3]).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn model_ids_parse_and_print() {
        assert_eq!(SyntheticModel::parse_id("exp-diff").unwrap(), SyntheticModel::ExpDiff);
        let m = SyntheticModel::parse_id("additive-exp:0.3,1.25").unwrap();
        assert_eq!(m.dimension(), 2);
        assert_eq!(m.to_string(), "additive-exp:0.3,1.25");
        assert!(SyntheticModel::parse_id("exp-dif").is_err());
        assert!(SyntheticModel::parse_id("additive-exp:0.3,x").is_err());
    }

    #[test]
    fn folds_are_balanced_and_exhaustive() {
        let plan = make_folds(6, 3, 7).unwrap();
        for f in 0..3 {
            assert_eq!(plan.fold_members(f).len(), 2);
        }
        let plan = make_folds(10, 3, 7).unwrap();
        let mut sizes: Vec<usize> = (0..3).map(|f| plan.fold_members(f).len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        let mut seen = vec![false; 10];
        for f in 0..3 {
            for i in plan.fold_members(f) {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn folds_are_seed_deterministic() {
        let a = make_folds(10_000, 3, 5).unwrap();
        let b = make_folds(10_000, 3, 5).unwrap();
        let c = make_folds(10_000, 3, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fold_count_out_of_range() {
        assert!(make_folds(5, 6, 0).is_err());
        assert!(make_folds(5, 1, 0).is_err());
        assert!(make_folds(5, 5, 0).is_ok());
    }

    #[test]
    fn split_half_is_disjoint_and_seeded() {
        let data = SyntheticModel::ExpDiff.generate(101, 3).unwrap();
        let (train, eval) = data.split_half(9).unwrap();
        assert_eq!(train.n(), 51);
        assert_eq!(eval.n(), 50);
        let (train2, _) = data.split_half(9).unwrap();
        assert_eq!(train, train2);
    }
}
