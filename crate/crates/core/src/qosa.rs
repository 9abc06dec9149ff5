//! The pinball contrast, estimators of the `P` and `O` terms, and assembly
//! of the first-order QOSA index `S_i = 1 - O / P`.
//!
//! Ten `O` estimators are available. The quantile-based family (`R1*`,
//! `R2*`) plugs forest conditional quantiles and needs an evaluation sample
//! independent of the training one. The minimum-based family minimizes
//! weighted empirical contrasts: `Q1*` over per-input forest weights at
//! evaluation points, `Q2*` inside the leaves of a per-input forest (no
//! second sample), `Q3*` over a full forest with weights averaged across a
//! shadow sample of the remaining inputs. `*b` uses bootstrap counts, `*o`
//! the original sample.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cond_dist::{batch_cond_quantiles, Alpha, CondQuantileMethod, QuantileFamily};
use crate::dataset::Dataset;
use crate::forest::{Forest, ForestParams, Tree, WeightScheme};
use crate::seeding::{child_seed, child_seed_indexed2};
use crate::sweep::{sweep_eval, Accumulator, SweepAxis};
use crate::tuning::{cv_tune, oob_tune, LeafGrid, TuningReport, TuningStrategy};
use crate::{Error, Result};

/// Pinball (check) loss `(y - theta) * (alpha - 1{y <= theta})`; always
/// nonnegative, zero exactly at `y = theta`.
#[inline]
pub fn pinball(y: f64, theta: f64, alpha: Alpha) -> f64 {
    let a = alpha.value();
    (y - theta) * (a - if y <= theta { 1.0 } else { 0.0 })
}

/// Inf-form empirical quantile of a sorted sample: the order statistic at
/// `ceil(n * alpha)`.
pub(crate) fn quantile_of_sorted(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    let k = ((n as f64 * alpha).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// `P` estimator plugging the empirical quantile:
/// `(1/n) sum_j psi_alpha(Y_j, q_hat)`.
pub fn estimate_p1(sample: &[f64], alpha: Alpha) -> Result<f64> {
    if sample.len() < 2 {
        return Err(Error::Config(format!("P estimation needs >= 2 values, got {}", sample.len())));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let q = quantile_of_sorted(&sorted, alpha.value());
    Ok(sorted.iter().map(|&y| pinball(y, q, alpha)).sum::<f64>() / sorted.len() as f64)
}

/// `P` estimator minimizing the empirical contrast over the order
/// statistics, scanning upward and stopping at the first increase (the
/// objective is decreasing then increasing).
pub fn estimate_p2(sample: &[f64], alpha: Alpha) -> Result<f64> {
    if sample.len() < 2 {
        return Err(Error::Config(format!("P estimation needs >= 2 values, got {}", sample.len())));
    }
    let a = alpha.value();
    let mut sorted = sample.to_vec();
    sorted.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
    let n = sorted.len() as f64;
    let s_total: f64 = sorted.iter().sum();
    let mut cum_w = 0.0;
    let mut cum_s = 0.0;
    let mut best = f64::INFINITY;
    for &theta in &sorted {
        cum_w += 1.0;
        cum_s += theta;
        let c = a * ((s_total - cum_s) - theta * (n - cum_w)) + (1.0 - a) * (theta * cum_w - cum_s);
        if c < best {
            best = c;
        } else if c > best {
            break;
        }
    }
    // The contrast is a mean of nonnegative losses; clear rounding residue.
    Ok(best.max(0.0) / n)
}

/// Quantile-based `O` estimators (`R1b`, `R1o`, `R2b`, `R2o` by `method`):
/// mean pinball loss of the evaluation responses against conditional
/// quantiles predicted by a forest trained on `(X_i, Y)` from an
/// independent sample.
pub fn estimate_o_quantile(
    forest: &Forest,
    eval_x: &[f64],
    eval_y: &[f64],
    alpha: Alpha,
    method: CondQuantileMethod,
) -> Result<f64> {
    if eval_x.len() != eval_y.len() || eval_x.is_empty() {
        return Err(Error::Config("evaluation columns empty or of unequal length".into()));
    }
    let quantiles = batch_cond_quantiles(forest, eval_x, alpha, method)?;
    let sum: f64 = eval_y
        .iter()
        .zip(&quantiles)
        .map(|(&y, &q)| pinball(y, q, alpha))
        .sum();
    Ok(sum / eval_y.len() as f64)
}

/// Minimum of the weighted empirical contrast over candidates with positive
/// weight, walked in response order with early stop at the first increase.
pub(crate) fn sweep_min_contrast(forest: &Forest, acc: &Accumulator, alpha: f64) -> Option<f64> {
    if acc.is_empty() {
        return None;
    }
    let w_total = acc.w_total;
    let s_total = acc.s_total;
    let mut cum_w = 0.0;
    let mut cum_s = 0.0;
    let mut best = f64::INFINITY;
    let mut r = acc.next_active(0)?;
    loop {
        let w = acc.a[r];
        let theta = forest.y_sorted[r];
        cum_w += w;
        cum_s += w * theta;
        let c = alpha * ((s_total - cum_s) - theta * (w_total - cum_w))
            + (1.0 - alpha) * (theta * cum_w - cum_s);
        if c < best {
            best = c;
        } else if c > best {
            break;
        }
        match acc.next_active(r + 1) {
            Some(next) => r = next,
            None => break,
        }
    }
    // The contrast is a mean of nonnegative losses; clear rounding residue.
    Some(best.max(0.0))
}

/// Minimum-based `O` estimators with per-input forest weights (`Q1b`,
/// `Q1o`): for each evaluation point, minimize the weighted contrast over
/// the supported training responses, then average the minima.
pub fn estimate_o_min_weighted(
    forest: &Forest,
    eval_x: &[f64],
    alpha: Alpha,
    scheme: WeightScheme,
) -> Result<f64> {
    if forest.d() != 1 {
        return Err(Error::Config(
            "minimum-based per-input estimators expect a forest trained on a single input".into(),
        ));
    }
    if eval_x.is_empty() {
        return Err(Error::Config("no evaluation points".into()));
    }
    let a = alpha.value();
    let minima = sweep_eval(forest, scheme, &SweepAxis::SingleInput, eval_x, |acc| {
        sweep_min_contrast(forest, acc, a)
    })?;
    mean_of_supported(&minima)
}

fn mean_of_supported(values: &[Option<f64>]) -> Result<f64> {
    let mut sum = 0.0;
    let mut used = 0usize;
    for v in values {
        if let Some(v) = v {
            sum += v;
            used += 1;
        }
    }
    let skipped = values.len() - used;
    if skipped > 0 {
        log::warn!("{skipped} evaluation points had empty weight support and were skipped");
    }
    if used == 0 {
        return Err(Error::Estimation("every evaluation point had empty weight support".into()));
    }
    Ok(sum / used as f64)
}

/// Minimum of the leaf-local empirical contrast over the leaf's candidate
/// responses (bootstrap members or original members, per scheme).
pub(crate) fn leaf_min_contrast(
    forest: &Forest,
    tree: &Tree,
    leaf: u32,
    alpha: f64,
    scheme: WeightScheme,
) -> Option<f64> {
    let members = tree.members(leaf);
    let (w_total, s_total) = match scheme {
        WeightScheme::Original => {
            let no = tree.leaf_no[leaf as usize];
            if no == 0 {
                return None;
            }
            let s: f64 = members.iter().map(|&r| forest.y_sorted[r as usize]).sum();
            (f64::from(no), s)
        }
        WeightScheme::Bootstrap => {
            let nb = tree.leaf_nb[leaf as usize];
            if nb == 0 {
                return None;
            }
            let s: f64 = members
                .iter()
                .map(|&r| {
                    f64::from(tree.counts_by_rank[r as usize]) * forest.y_sorted[r as usize]
                })
                .sum();
            (f64::from(nb), s)
        }
    };
    let mut cum_w = 0.0;
    let mut cum_s = 0.0;
    let mut best = f64::INFINITY;
    for &rank in members {
        let c = match scheme {
            WeightScheme::Original => 1.0,
            WeightScheme::Bootstrap => {
                let c = tree.counts_by_rank[rank as usize];
                if c == 0 {
                    continue;
                }
                f64::from(c)
            }
        };
        let theta = forest.y_sorted[rank as usize];
        cum_w += c;
        cum_s += c * theta;
        let value = alpha * ((s_total - cum_s) - theta * (w_total - cum_w))
            + (1.0 - alpha) * (theta * cum_w - cum_s);
        if value < best {
            best = value;
        } else if value > best {
            break;
        }
    }
    Some(best.max(0.0) / w_total)
}

/// Minimum-based `O` estimators inside the leaves (`Q2b`, `Q2o`): per tree,
/// the leaf-local contrast minima averaged uniformly over leaves, then over
/// trees. No evaluation sample is needed.
pub fn estimate_o_min_in_leaf(forest: &Forest, alpha: Alpha, scheme: WeightScheme) -> Result<f64> {
    if forest.d() != 1 {
        return Err(Error::Config(
            "minimum-based per-input estimators expect a forest trained on a single input".into(),
        ));
    }
    let a = alpha.value();
    let mut tree_sum = 0.0;
    let mut trees_used = 0usize;
    for tree in forest.trees() {
        let mut sum = 0.0;
        let mut used = 0usize;
        for leaf in 0..tree.n_leaves() as u32 {
            if let Some(v) = leaf_min_contrast(forest, tree, leaf, a, scheme) {
                sum += v;
                used += 1;
            }
        }
        if used > 0 {
            tree_sum += sum / used as f64;
            trees_used += 1;
        }
    }
    if trees_used == 0 {
        return Err(Error::Estimation("every tree had only empty leaves under the scheme".into()));
    }
    Ok(tree_sum / trees_used as f64)
}

/// Minimum-based `O` estimator on a full forest (`Q3b`, `Q3o`): weights at
/// each evaluation value of input `i` are averaged over the shadow rows'
/// remaining coordinates before the contrast minimization. The shadow
/// matrix (all `d` input columns of the independent sample) supplies both
/// the integration sample and the outer-expectation sample: column `i`
/// provides the evaluation values. Requires independent inputs.
pub fn estimate_o_min_full(
    forest: &Forest,
    input: usize,
    shadow_cols: &[Vec<f64>],
    alpha: Alpha,
    scheme: WeightScheme,
) -> Result<f64> {
    let d = forest.d();
    if input >= d {
        return Err(Error::Config(format!("input {input} out of range for dimension {d}")));
    }
    if shadow_cols.len() != d {
        return Err(Error::Config(format!(
            "shadow has {} columns, forest expects {d}",
            shadow_cols.len()
        )));
    }
    if d == 1 {
        // No remaining components to average over.
        return estimate_o_min_weighted(forest, &shadow_cols[0], alpha, scheme);
    }
    let a = alpha.value();
    let eval_x = &shadow_cols[input];
    let minima = sweep_eval(
        forest,
        scheme,
        &SweepAxis::Spliced { shadow_cols, axis: input },
        eval_x,
        |acc| sweep_min_contrast(forest, acc, a),
    )?;
    mean_of_supported(&minima)
}

/// `S = 1 - O / P`; raw value, not clamped to `[0, 1]`.
pub fn assemble_index(p_hat: f64, o_hat: f64) -> Result<f64> {
    if p_hat == 0.0 {
        return Err(Error::Degenerate(
            "P term is zero (constant output); the index is undefined".into(),
        ));
    }
    Ok(1.0 - o_hat / p_hat)
}

/// The ten `O`-term estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OEstimator {
    R1b,
    R1o,
    R2b,
    R2o,
    Q1b,
    Q1o,
    Q2b,
    Q2o,
    Q3b,
    Q3o,
}

impl OEstimator {
    pub const ALL: [OEstimator; 10] = [
        OEstimator::R1b,
        OEstimator::R1o,
        OEstimator::R2b,
        OEstimator::R2o,
        OEstimator::Q1b,
        OEstimator::Q1o,
        OEstimator::Q2b,
        OEstimator::Q2o,
        OEstimator::Q3b,
        OEstimator::Q3o,
    ];

    pub fn scheme(self) -> WeightScheme {
        match self {
            OEstimator::R1b
            | OEstimator::R2b
            | OEstimator::Q1b
            | OEstimator::Q2b
            | OEstimator::Q3b => WeightScheme::Bootstrap,
            _ => WeightScheme::Original,
        }
    }

    /// The conditional-quantile method of the `R` family, if applicable.
    pub fn quantile_method(self) -> Option<CondQuantileMethod> {
        match self {
            OEstimator::R1b | OEstimator::R1o => {
                Some(CondQuantileMethod::new(QuantileFamily::WeightedCdf, self.scheme()))
            }
            OEstimator::R2b | OEstimator::R2o => {
                Some(CondQuantileMethod::new(QuantileFamily::InLeaf, self.scheme()))
            }
            _ => None,
        }
    }

    /// Whether the estimator consumes a second, independent sample.
    pub fn needs_eval_sample(self) -> bool {
        !matches!(self, OEstimator::Q2b | OEstimator::Q2o)
    }

    /// Whether the leaf size is tuned (the full-forest estimators instead
    /// run with near-fully-grown trees).
    pub fn is_tuned(self) -> bool {
        !matches!(self, OEstimator::Q3b | OEstimator::Q3o)
    }
}

impl fmt::Display for OEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OEstimator::R1b => "r1b",
            OEstimator::R1o => "r1o",
            OEstimator::R2b => "r2b",
            OEstimator::R2o => "r2o",
            OEstimator::Q1b => "q1b",
            OEstimator::Q1o => "q1o",
            OEstimator::Q2b => "q2b",
            OEstimator::Q2o => "q2o",
            OEstimator::Q3b => "q3b",
            OEstimator::Q3o => "q3o",
        };
        f.write_str(s)
    }
}

impl FromStr for OEstimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        OEstimator::ALL
            .iter()
            .copied()
            .find(|e| e.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown estimator {s:?}")))
    }
}

/// The `P`-term estimator; `P1` is the default throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PEstimator {
    #[default]
    P1,
    P2,
}

impl PEstimator {
    pub fn estimate(self, sample: &[f64], alpha: Alpha) -> Result<f64> {
        match self {
            PEstimator::P1 => estimate_p1(sample, alpha),
            PEstimator::P2 => estimate_p2(sample, alpha),
        }
    }
}

impl fmt::Display for PEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PEstimator::P1 => "p1",
            PEstimator::P2 => "p2",
        })
    }
}

impl FromStr for PEstimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p1" => Ok(PEstimator::P1),
            "p2" => Ok(PEstimator::P2),
            _ => Err(Error::Config(format!("unknown P estimator {s:?}"))),
        }
    }
}

/// Full identity of an index estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EstimatorId {
    pub o_estimator: OEstimator,
    pub p_estimator: PEstimator,
}

impl EstimatorId {
    pub fn new(o_estimator: OEstimator) -> Self {
        Self { o_estimator, p_estimator: PEstimator::P1 }
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.o_estimator)?;
        if self.p_estimator != PEstimator::P1 {
            write!(f, "+{}", self.p_estimator)?;
        }
        Ok(())
    }
}

/// One estimated index: per input, per level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QosaEstimate {
    pub input_index: usize,
    pub input_name: String,
    pub alpha: Alpha,
    pub p_hat: f64,
    pub o_hat: f64,
    pub s_hat: f64,
    pub estimator: EstimatorId,
    pub leaf_size_used: usize,
    pub seed: u64,
}

/// A tuning report attached to the `(input, alpha)` pair it was run for.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputTuning {
    pub input_index: usize,
    pub alpha: Alpha,
    pub report: TuningReport,
}

/// Options of the full estimation pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub estimator: EstimatorId,
    pub alphas: Vec<Alpha>,
    /// Inputs to estimate (0-based); all of them when empty.
    pub inputs: Vec<usize>,
    pub n_trees: usize,
    pub grid: LeafGrid,
    pub tuning: TuningStrategy,
    pub folds: usize,
    /// Leaf size of the untuned full-forest estimators.
    pub q3_min_samples_leaf: usize,
    pub seed: u64,
}

impl EstimateOptions {
    pub fn new(estimator: EstimatorId, alphas: Vec<Alpha>, seed: u64) -> Self {
        Self {
            estimator,
            alphas,
            inputs: Vec::new(),
            n_trees: 100,
            grid: LeafGrid::default(),
            tuning: TuningStrategy::Cv,
            folds: 3,
            q3_min_samples_leaf: 2,
            seed,
        }
    }
}

/// Pipeline output: estimates plus the tuning reports behind them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateOutcome {
    pub estimates: Vec<QosaEstimate>,
    pub tuning: Vec<InputTuning>,
}

/// Estimate the first-order QOSA index of every requested input at every
/// level.
///
/// The quantile-based estimators train on `train` and evaluate on `eval`
/// (both samples are required); their `P` term comes from the evaluation
/// responses. The minimum-based `Q1*`/`Q3*` use only the inputs of `eval`
/// and take `P` from the training responses; `Q2*` needs no second sample
/// at all. Leaf sizes are tuned per `(input, alpha)`: the quantile-based
/// estimators with their own method, the minimum-based ones through the
/// weighted-CDF/original error, under the configured strategy. The
/// full-forest estimators skip tuning and use `q3_min_samples_leaf`.
pub fn estimate_indices(
    train: &Dataset,
    eval: Option<&Dataset>,
    opts: &EstimateOptions,
) -> Result<EstimateOutcome> {
    let d = train.d();
    let inputs: Vec<usize> = if opts.inputs.is_empty() {
        (0..d).collect()
    } else {
        opts.inputs.clone()
    };
    if let Some(&bad) = inputs.iter().find(|&&i| i >= d) {
        return Err(Error::Config(format!("input {bad} out of range for {d} inputs")));
    }
    if opts.alphas.is_empty() {
        return Err(Error::Config("no alpha levels given".into()));
    }
    let o_est = opts.estimator.o_estimator;
    let eval = match (o_est.needs_eval_sample(), eval) {
        (true, None) => {
            return Err(Error::Config(format!(
                "estimator {} needs an independent evaluation sample",
                opts.estimator
            )))
        }
        (true, Some(e)) => {
            if e.d() != d {
                return Err(Error::Config(format!(
                    "evaluation sample has {} inputs, training has {d}",
                    e.d()
                )));
            }
            Some(e)
        }
        (false, _) => None,
    };

    // P-term sample: evaluation responses for the quantile-based family
    // (they receive a full second sample), training responses otherwise.
    let p_sample: &[f64] = match o_est {
        OEstimator::R1b | OEstimator::R1o | OEstimator::R2b | OEstimator::R2o => {
            eval.unwrap().output()
        }
        _ => train.output(),
    };
    let p_by_alpha: Vec<f64> = opts
        .alphas
        .iter()
        .map(|&a| opts.estimator.p_estimator.estimate(p_sample, a))
        .collect::<Result<_>>()?;

    let mut estimates = Vec::new();
    let mut tuning = Vec::new();

    // Full-forest estimators: one untuned forest shared by all inputs.
    if let OEstimator::Q3b | OEstimator::Q3o = o_est {
        let cols: Vec<&[f64]> = train.input_columns().iter().map(|c| c.as_slice()).collect();
        let params = ForestParams {
            n_trees: opts.n_trees,
            min_samples_leaf: opts.q3_min_samples_leaf,
            max_features: d,
            seed: child_seed(opts.seed, "full-forest"),
            bootstrap_size: None,
        };
        let forest = Forest::fit(&cols, train.output(), &params)?;
        let shadow = eval.unwrap().input_columns();
        for &i in &inputs {
            for (ai, &alpha) in opts.alphas.iter().enumerate() {
                let o_hat = estimate_o_min_full(&forest, i, shadow, alpha, o_est.scheme())?;
                let p_hat = p_by_alpha[ai];
                estimates.push(QosaEstimate {
                    input_index: i,
                    input_name: train.input_name(i).to_string(),
                    alpha,
                    p_hat,
                    o_hat,
                    s_hat: assemble_index(p_hat, o_hat)?,
                    estimator: opts.estimator,
                    leaf_size_used: opts.q3_min_samples_leaf,
                    seed: opts.seed,
                });
            }
        }
        return Ok(EstimateOutcome { estimates, tuning });
    }

    for &i in &inputs {
        let x = train.input(i);
        let y = train.output();
        for (ai, &alpha) in opts.alphas.iter().enumerate() {
            // The quantile-based estimators tune with their own method; the
            // minimum-based ones through the weighted-CDF/original error.
            let tune_method = o_est
                .quantile_method()
                .unwrap_or_else(CondQuantileMethod::weighted_original);
            let base = ForestParams {
                n_trees: opts.n_trees,
                min_samples_leaf: 1,
                max_features: 1,
                seed: child_seed_indexed2(opts.seed, "tune", i as u64, ai as u64),
                bootstrap_size: None,
            };
            let mut report = match opts.tuning {
                TuningStrategy::Cv => {
                    cv_tune(x, y, &opts.grid, opts.folds, alpha, tune_method, &base)?
                }
                TuningStrategy::Oob => oob_tune(x, y, &opts.grid, alpha, tune_method, &base)?,
            };
            let leaf = report.selected;
            let params = ForestParams {
                n_trees: opts.n_trees,
                min_samples_leaf: leaf,
                max_features: 1,
                seed: child_seed_indexed2(opts.seed, "final-forest", i as u64, ai as u64),
                bootstrap_size: None,
            };
            let forest = Forest::fit_single_input(x, y, &params)?;
            // Quality figure of the refit forest, next to the tuning error.
            report.refit_oob_error =
                crate::cond_dist::oob_error(&forest, alpha, tune_method).ok().map(|(e, _)| e);
            let o_hat = match o_est {
                OEstimator::R1b | OEstimator::R1o | OEstimator::R2b | OEstimator::R2o => {
                    let ev = eval.unwrap();
                    estimate_o_quantile(
                        &forest,
                        ev.input(i),
                        ev.output(),
                        alpha,
                        o_est.quantile_method().unwrap(),
                    )?
                }
                OEstimator::Q1b | OEstimator::Q1o => {
                    estimate_o_min_weighted(&forest, eval.unwrap().input(i), alpha, o_est.scheme())?
                }
                OEstimator::Q2b | OEstimator::Q2o => {
                    estimate_o_min_in_leaf(&forest, alpha, o_est.scheme())?
                }
                OEstimator::Q3b | OEstimator::Q3o => unreachable!("handled above"),
            };
            let p_hat = p_by_alpha[ai];
            estimates.push(QosaEstimate {
                input_index: i,
                input_name: train.input_name(i).to_string(),
                alpha,
                p_hat,
                o_hat,
                s_hat: assemble_index(p_hat, o_hat)?,
                estimator: opts.estimator,
                leaf_size_used: leaf,
                seed: opts.seed,
            });
            tuning.push(InputTuning { input_index: i, alpha, report });
        }
    }
    Ok(EstimateOutcome { estimates, tuning })
}
