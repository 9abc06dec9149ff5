//! Leaf-size selection over a candidate grid: K-fold cross-validation and
//! the out-of-bag quantile error.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cond_dist::{batch_cond_quantiles, oob_error, Alpha, CondQuantileMethod};
use crate::dataset::make_folds;
use crate::forest::{Forest, ForestParams};
use crate::qosa::pinball;
use crate::seeding::{child_seed, child_seed_indexed, child_seed_indexed2};
use crate::{Error, Result};

/// Candidate leaf sizes, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafGrid {
    values: Vec<usize>,
}

impl LeafGrid {
    pub fn new(values: Vec<usize>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("leaf grid is empty".into()));
        }
        if values[0] == 0 {
            return Err(Error::Config("leaf sizes must be at least 1".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "leaf grid must be strictly increasing, got {values:?}"
            )));
        }
        Ok(Self { values })
    }

    /// `count` evenly spaced integers from `lo` to `hi` (rounded,
    /// deduplicated).
    pub fn evenly_spaced(lo: usize, hi: usize, count: usize) -> Result<Self> {
        if count == 0 || hi < lo {
            return Err(Error::Config(format!("bad grid spec {lo}:{hi}:{count}")));
        }
        if count == 1 {
            return LeafGrid::new(vec![lo]);
        }
        let mut values: Vec<usize> = (0..count)
            .map(|i| {
                let v = lo as f64 + (hi - lo) as f64 * i as f64 / (count - 1) as f64;
                v.round() as usize
            })
            .collect();
        values.dedup();
        LeafGrid::new(values)
    }

    /// Parse a `lo:hi:count` CLI spec.
    pub fn from_spec(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("grid spec {spec:?} is not lo:hi:count")));
        }
        let parse = |s: &str| {
            usize::from_str(s.trim())
                .map_err(|_| Error::Config(format!("bad integer {s:?} in grid spec {spec:?}")))
        };
        LeafGrid::evenly_spaced(parse(parts[0])?, parse(parts[1])?, parse(parts[2])?)
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    /// Grid step width of the underlying (pre-rounding) spacing.
    pub fn step(&self) -> f64 {
        if self.values.len() < 2 {
            return 0.0;
        }
        (self.values[self.values.len() - 1] - self.values[0]) as f64
            / (self.values.len() - 1) as f64
    }
}

impl Default for LeafGrid {
    /// 20 evenly spaced integers from 5 to 300.
    fn default() -> Self {
        LeafGrid::evenly_spaced(5, 300, 20).expect("static grid")
    }
}

/// Leaf-size selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuningStrategy {
    Cv,
    Oob,
}

impl fmt::Display for TuningStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TuningStrategy::Cv => "cv",
            TuningStrategy::Oob => "oob",
        })
    }
}

impl FromStr for TuningStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cv" => Ok(TuningStrategy::Cv),
            "oob" => Ok(TuningStrategy::Oob),
            _ => Err(Error::Config(format!("unknown tuning strategy {s:?}"))),
        }
    }
}

/// One grid candidate's outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateError {
    pub leaf_size: usize,
    /// Mean generalization error (pinball scale); `None` when the candidate
    /// was skipped.
    pub error: Option<f64>,
    /// OOB only: observations without any out-of-bag tree.
    pub skipped_observations: Option<usize>,
}

/// Grid outcome: per-candidate errors and the selected minimum (ties break
/// toward the smaller leaf size).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningReport {
    pub strategy: TuningStrategy,
    pub candidates: Vec<CandidateError>,
    pub selected: usize,
    pub selected_error: f64,
    pub folds: Option<usize>,
    /// OOB only: skipped observations at the selected candidate.
    pub oob_skipped: Option<usize>,
    /// Out-of-bag error of the forest refit at the selected leaf size, when
    /// the caller computed one.
    pub refit_oob_error: Option<f64>,
}

fn select_minimum(candidates: &[CandidateError]) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for c in candidates {
        if let Some(err) = c.error {
            if best.map_or(true, |(_, b)| err < b) {
                best = Some((c.leaf_size, err));
            }
        }
    }
    best.ok_or_else(|| Error::Config("every grid candidate was skipped".into()))
}

/// K-fold cross-validated leaf-size selection for a conditional-quantile
/// method on the per-input data `(x, y)`.
///
/// The folds are drawn once; for each candidate a forest is fit on every
/// fold complement and scored by the mean pinball loss of the held-out
/// responses against their predicted conditional quantiles; the candidate
/// error is the average of the fold errors. Candidates at least as large as
/// the training-fold size are skipped.
pub fn cv_tune(
    x: &[f64],
    y: &[f64],
    grid: &LeafGrid,
    folds: usize,
    alpha: Alpha,
    method: CondQuantileMethod,
    base: &ForestParams,
) -> Result<TuningReport> {
    let n = x.len();
    if n != y.len() || n == 0 {
        return Err(Error::Config("x and y empty or of unequal length".into()));
    }
    let plan = make_folds(n, folds, child_seed(base.seed, "cv-folds"))?;
    struct FoldData {
        train_x: Vec<f64>,
        train_y: Vec<f64>,
        test_x: Vec<f64>,
        test_y: Vec<f64>,
    }
    let fold_data: Vec<FoldData> = (0..folds)
        .map(|f| {
            let (test, train) = plan.split(f);
            FoldData {
                train_x: train.iter().map(|&r| x[r]).collect(),
                train_y: train.iter().map(|&r| y[r]).collect(),
                test_x: test.iter().map(|&r| x[r]).collect(),
                test_y: test.iter().map(|&r| y[r]).collect(),
            }
        })
        .collect();
    let min_train = fold_data.iter().map(|f| f.train_x.len()).min().unwrap();

    let jobs: Vec<(usize, usize)> = grid
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &leaf)| leaf < min_train)
        .flat_map(|(ci, _)| (0..folds).map(move |f| (ci, f)))
        .collect();
    let fold_errors: Vec<((usize, usize), f64)> = jobs
        .into_par_iter()
        .map(|(ci, f)| {
            let leaf = grid.values()[ci];
            let data = &fold_data[f];
            let params = ForestParams {
                min_samples_leaf: leaf,
                seed: child_seed_indexed2(base.seed, "cv-forest", ci as u64, f as u64),
                ..base.clone()
            };
            let forest = Forest::fit_single_input(&data.train_x, &data.train_y, &params)?;
            let quantiles = batch_cond_quantiles(&forest, &data.test_x, alpha, method)?;
            let err = data
                .test_y
                .iter()
                .zip(&quantiles)
                .map(|(&yv, &q)| pinball(yv, q, alpha))
                .sum::<f64>()
                / data.test_y.len() as f64;
            Ok(((ci, f), err))
        })
        .collect::<Result<_>>()?;

    let candidates: Vec<CandidateError> = grid
        .values()
        .iter()
        .enumerate()
        .map(|(ci, &leaf)| {
            if leaf >= min_train {
                log::warn!("leaf size {leaf} >= training-fold size {min_train}; skipped");
                return CandidateError { leaf_size: leaf, error: None, skipped_observations: None };
            }
            let sum: f64 = fold_errors
                .iter()
                .filter(|((c, _), _)| *c == ci)
                .map(|(_, e)| e)
                .sum();
            CandidateError {
                leaf_size: leaf,
                error: Some(sum / folds as f64),
                skipped_observations: None,
            }
        })
        .collect();
    let (selected, selected_error) = select_minimum(&candidates)?;
    Ok(TuningReport {
        strategy: TuningStrategy::Cv,
        candidates,
        selected,
        selected_error,
        folds: Some(folds),
        oob_skipped: None,
        refit_oob_error: None,
    })
}

/// Out-of-bag leaf-size selection: one forest per candidate, scored by the
/// OOB quantile error over the whole sample. No data splitting.
pub fn oob_tune(
    x: &[f64],
    y: &[f64],
    grid: &LeafGrid,
    alpha: Alpha,
    method: CondQuantileMethod,
    base: &ForestParams,
) -> Result<TuningReport> {
    let n = x.len();
    if n != y.len() || n == 0 {
        return Err(Error::Config("x and y empty or of unequal length".into()));
    }
    let results: Vec<Option<(f64, usize)>> = grid
        .values()
        .par_iter()
        .enumerate()
        .map(|(ci, &leaf)| {
            if leaf >= n {
                log::warn!("leaf size {leaf} >= sample size {n}; skipped");
                return Ok(None);
            }
            let params = ForestParams {
                min_samples_leaf: leaf,
                seed: child_seed_indexed(base.seed, "oob-forest", ci as u64),
                ..base.clone()
            };
            let forest = Forest::fit_single_input(x, y, &params)?;
            match oob_error(&forest, alpha, method) {
                Ok(pair) => Ok(Some(pair)),
                Err(Error::Estimation(msg)) => {
                    log::warn!("leaf size {leaf}: {msg}; candidate invalid");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let candidates: Vec<CandidateError> = grid
        .values()
        .iter()
        .zip(&results)
        .map(|(&leaf, res)| CandidateError {
            leaf_size: leaf,
            error: res.map(|(e, _)| e),
            skipped_observations: res.map(|(_, s)| s),
        })
        .collect();
    let (selected, selected_error) = select_minimum(&candidates)?;
    let oob_skipped = candidates
        .iter()
        .find(|c| c.leaf_size == selected)
        .and_then(|c| c.skipped_observations);
    Ok(TuningReport {
        strategy: TuningStrategy::Oob,
        candidates,
        selected,
        selected_error,
        folds: None,
        oob_skipped,
        refit_oob_error: None,
    })
}

/// Leaf-size selection for the minimum-based estimators: cross-validation
/// through the weighted-CDF / original-sample quantile error. The selected
/// size is then applied to their forests.
pub fn tune_for_minimum_estimators(
    x: &[f64],
    y: &[f64],
    grid: &LeafGrid,
    folds: usize,
    alpha: Alpha,
    base: &ForestParams,
) -> Result<TuningReport> {
    cv_tune(x, y, grid, folds, alpha, CondQuantileMethod::weighted_original(), base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cond_dist::cond_quantile_weighted;
    use crate::dataset::SyntheticModel;

    fn a(v: f64) -> Alpha {
        Alpha::new(v).unwrap()
    }

    fn base(trees: usize, seed: u64) -> ForestParams {
        ForestParams::new(trees, 1, 1, seed)
    }

    #[test]
    fn default_grid_shape() {
        let grid = LeafGrid::default();
        assert_eq!(grid.values().len(), 20);
        assert_eq!(grid.values()[0], 5);
        assert_eq!(*grid.values().last().unwrap(), 300);
        assert!(grid.values().contains(&83));
        assert!((grid.step() - 295.0 / 19.0).abs() < 1e-12);
        assert_eq!(LeafGrid::from_spec("5:300:20").unwrap(), grid);
    }

    #[test]
    fn grid_validation() {
        assert!(LeafGrid::new(vec![]).is_err());
        assert!(LeafGrid::new(vec![0, 5]).is_err());
        assert!(LeafGrid::new(vec![5, 5]).is_err());
        assert!(LeafGrid::from_spec("5:300").is_err());
        assert!(LeafGrid::from_spec("a:300:20").is_err());
        assert_eq!(LeafGrid::from_spec("7:7:1").unwrap().values(), &[7]);
    }

    #[test]
    fn single_candidate_is_selected() {
        let data = SyntheticModel::ExpDiff.generate(120, 1).unwrap();
        let grid = LeafGrid::new(vec![5]).unwrap();
        let report = cv_tune(
            data.input(0),
            data.output(),
            &grid,
            3,
            a(0.5),
            CondQuantileMethod::weighted_original(),
            &base(4, 2),
        )
        .unwrap();
        assert_eq!(report.selected, 5);
        assert_eq!(report.folds, Some(3));
        let report = oob_tune(
            data.input(0),
            data.output(),
            &grid,
            a(0.5),
            CondQuantileMethod::weighted_original(),
            &base(4, 2),
        )
        .unwrap();
        assert_eq!(report.selected, 5);
        assert!(report.oob_skipped.is_some());
    }

    #[test]
    fn oversized_candidates_are_skipped() {
        let data = SyntheticModel::ExpDiff.generate(60, 3).unwrap();
        let grid = LeafGrid::new(vec![5, 500]).unwrap();
        let report = cv_tune(
            data.input(0),
            data.output(),
            &grid,
            3,
            a(0.5),
            CondQuantileMethod::weighted_original(),
            &base(3, 4),
        )
        .unwrap();
        assert_eq!(report.selected, 5);
        assert!(report.candidates[1].error.is_none());
        let all_big = LeafGrid::new(vec![500, 600]).unwrap();
        assert!(cv_tune(
            data.input(0),
            data.output(),
            &all_big,
            3,
            a(0.5),
            CondQuantileMethod::weighted_original(),
            &base(3, 4),
        )
        .is_err());
    }

    #[test]
    fn cv_error_matches_brute_force_recomputation() {
        // Tiny instance recomputed through the per-query quantile path.
        let data = SyntheticModel::ExpDiff.generate(30, 5).unwrap();
        let (x, y) = (data.input(0), data.output());
        let grid = LeafGrid::new(vec![3, 9]).unwrap();
        let b = base(2, 11);
        let report = cv_tune(
            x,
            y,
            &grid,
            3,
            a(0.4),
            CondQuantileMethod::weighted_original(),
            &b,
        )
        .unwrap();
        let plan = make_folds(30, 3, child_seed(b.seed, "cv-folds")).unwrap();
        for (ci, &leaf) in grid.values().iter().enumerate() {
            let mut fold_means = Vec::new();
            for f in 0..3 {
                let (test, train) = plan.split(f);
                let tx: Vec<f64> = train.iter().map(|&r| x[r]).collect();
                let ty: Vec<f64> = train.iter().map(|&r| y[r]).collect();
                let params = ForestParams {
                    min_samples_leaf: leaf,
                    seed: child_seed_indexed2(b.seed, "cv-forest", ci as u64, f as u64),
                    ..b.clone()
                };
                let forest = Forest::fit_single_input(&tx, &ty, &params).unwrap();
                let mut sum = 0.0;
                for &r in &test {
                    let q = cond_quantile_weighted(
                        &forest,
                        &[x[r]],
                        a(0.4),
                        crate::forest::WeightScheme::Original,
                    )
                    .unwrap();
                    sum += pinball(y[r], q, a(0.4));
                }
                fold_means.push(sum / test.len() as f64);
            }
            let expected = fold_means.iter().sum::<f64>() / 3.0;
            let got = report.candidates[ci].error.unwrap();
            assert!((got - expected).abs() < 1e-12, "candidate {leaf}: {got} vs {expected}");
        }
    }

    #[test]
    fn tuning_is_deterministic_and_selects_from_grid() {
        let data = SyntheticModel::ExpDiff.generate(500, 9).unwrap();
        let grid = LeafGrid::new(vec![5, 20, 80, 200]).unwrap();
        let r1 = oob_tune(
            data.input(0),
            data.output(),
            &grid,
            a(0.3),
            CondQuantileMethod::weighted_original(),
            &base(10, 7),
        )
        .unwrap();
        let r2 = oob_tune(
            data.input(0),
            data.output(),
            &grid,
            a(0.3),
            CondQuantileMethod::weighted_original(),
            &base(10, 7),
        )
        .unwrap();
        assert_eq!(r1.selected, r2.selected);
        for (c1, c2) in r1.candidates.iter().zip(&r2.candidates) {
            assert_eq!(c1.error, c2.error);
        }
        assert!(grid.values().contains(&r1.selected));
    }

    #[test]
    fn minimum_estimator_tuning_delegates_to_weighted_original_cv() {
        let data = SyntheticModel::ExpDiff.generate(200, 13).unwrap();
        let grid = LeafGrid::new(vec![5, 40]).unwrap();
        let via_delegate =
            tune_for_minimum_estimators(data.input(0), data.output(), &grid, 3, a(0.5), &base(4, 3))
                .unwrap();
        let direct = cv_tune(
            data.input(0),
            data.output(),
            &grid,
            3,
            a(0.5),
            CondQuantileMethod::weighted_original(),
            &base(4, 3),
        )
        .unwrap();
        assert_eq!(via_delegate.selected, direct.selected);
        for (c1, c2) in via_delegate.candidates.iter().zip(&direct.candidates) {
            assert_eq!(c1.error, c2.error);
        }
    }

    #[test]
    fn single_tree_oob_is_computable() {
        let data = SyntheticModel::ExpDiff.generate(400, 15).unwrap();
        let forest = Forest::fit_single_input(
            data.input(0),
            data.output(),
            &ForestParams::new(1, 20, 1, 5),
        )
        .unwrap();
        let (err, skipped) = oob_error(
            &forest,
            a(0.5),
            CondQuantileMethod::weighted_original(),
        )
        .unwrap();
        assert!(err.is_finite());
        // Roughly 37% of observations are out-of-bag for one tree.
        let usable = 400 - skipped;
        assert!((100..=220).contains(&usable), "usable {usable}");
    }
}
