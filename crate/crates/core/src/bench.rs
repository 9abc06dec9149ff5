//! Replicated error studies of the estimators against the analytical
//! oracles: RMSE, bias and variance per `(estimator, input, alpha)` cell,
//! optionally swept over the leaf size, the tree count, the sample size or
//! (for the additive model) the input dimension.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cond_dist::{Alpha, CondQuantileMethod};
use crate::dataset::{Dataset, SyntheticModel};
use crate::forest::{Forest, ForestParams};
use crate::oracle::{evenly_spaced_rates, true_index};
use crate::qosa::{
    estimate_o_min_full, estimate_o_min_in_leaf, estimate_o_min_weighted, estimate_o_quantile,
    EstimatorId, OEstimator,
};
use crate::seeding::{child_seed, child_seed_indexed, child_seed_indexed2};
use crate::tuning::{cv_tune, oob_tune, LeafGrid, TuningStrategy};
use crate::{Error, Result};

/// Axis swept by an experiment; values must be strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepSpec {
    None,
    /// Fixed leaf sizes (tuning bypassed).
    Leaf(Vec<usize>),
    Trees(Vec<usize>),
    #[serde(rename = "n")]
    SampleSize(Vec<usize>),
}

impl SweepSpec {
    fn validate(&self) -> Result<()> {
        let values = match self {
            SweepSpec::None => return Ok(()),
            SweepSpec::Leaf(v) | SweepSpec::Trees(v) | SweepSpec::SampleSize(v) => v,
        };
        if values.is_empty() || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "sweep values must be nonempty and strictly increasing, got {values:?}"
            )));
        }
        Ok(())
    }
}

/// One replicated error study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: SyntheticModel,
    pub estimators: Vec<EstimatorId>,
    pub alphas: Vec<Alpha>,
    pub n: usize,
    pub n_trees: usize,
    pub replications: usize,
    pub grid: LeafGrid,
    pub tuning: TuningStrategy,
    pub folds: usize,
    pub q3_min_samples_leaf: usize,
    pub seed: u64,
    pub sweep: SweepSpec,
}

impl ExperimentConfig {
    pub fn new(model: SyntheticModel, estimators: Vec<EstimatorId>, alphas: Vec<Alpha>, seed: u64) -> Self {
        Self {
            model,
            estimators,
            alphas,
            n: 10_000,
            n_trees: 100,
            replications: 20,
            grid: LeafGrid::default(),
            tuning: TuningStrategy::Cv,
            folds: 3,
            q3_min_samples_leaf: 2,
            seed,
            sweep: SweepSpec::None,
        }
    }
}

/// Error metrics of one `(estimator, input, alpha, sweep value)` cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsCell {
    pub estimator: EstimatorId,
    pub input_index: usize,
    pub alpha: Alpha,
    pub sweep_axis: Option<String>,
    pub sweep_value: Option<usize>,
    pub true_value: f64,
    pub mean_estimate: f64,
    pub rmse: f64,
    pub bias: f64,
    pub variance: f64,
    pub replications: usize,
    /// Compute time attributed to this cell, summed over replications.
    pub wall_time_s: f64,
}

/// Full report of an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cells: Vec<MetricsCell>,
    /// Sum of the individual replication durations.
    pub replication_wall_s: f64,
    /// Accounted compute time: replication work plus harness overhead.
    pub total_wall_s: f64,
    pub config: ExperimentConfig,
}

/// Per-dimension weighted summary of a dimension sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionCell {
    pub estimator: EstimatorId,
    pub alpha: Alpha,
    pub dimension: usize,
    /// Per-input RMSE averaged with the true indices as weights.
    pub weighted_rmse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionReport {
    pub per_input: Vec<MetricsCell>,
    pub summary: Vec<DimensionCell>,
    pub replication_wall_s: f64,
    pub total_wall_s: f64,
}

/// Estimates of every `(estimator, input, alpha)` triple in one replication.
struct Replication {
    /// `[estimator][input][alpha]` index estimates.
    s_hat: Vec<Vec<Vec<f64>>>,
    /// Seconds attributed to each triple.
    seconds: Vec<Vec<Vec<f64>>>,
    duration_s: f64,
}

fn run_replication(
    model: &SyntheticModel,
    estimators: &[EstimatorId],
    alphas: &[Alpha],
    n: usize,
    n_trees: usize,
    leaf_override: Option<usize>,
    grid: &LeafGrid,
    tuning: TuningStrategy,
    folds: usize,
    q3_min_samples_leaf: usize,
    rep_seed: u64,
) -> Result<Replication> {
    let rep_start = Instant::now();
    let d = model.dimension();
    let train = model.generate(n, child_seed(rep_seed, "train"))?;
    let needs_eval = estimators.iter().any(|e| e.o_estimator.needs_eval_sample());
    let eval = if needs_eval {
        Some(model.generate(n, child_seed(rep_seed, "eval"))?)
    } else {
        None
    };

    // P terms per (estimator, alpha): evaluation responses for the
    // quantile-based family, training responses for the minimum-based one.
    let mut p_cache: HashMap<(bool, usize, u64), f64> = HashMap::new();
    let mut p_term = |est: EstimatorId, ai: usize, alpha: Alpha, eval: Option<&Dataset>, train: &Dataset| -> Result<f64> {
        let from_eval = matches!(
            est.o_estimator,
            OEstimator::R1b | OEstimator::R1o | OEstimator::R2b | OEstimator::R2o
        );
        let key = (from_eval, ai, est.p_estimator as u64);
        if let Some(&v) = p_cache.get(&key) {
            return Ok(v);
        }
        let sample = if from_eval { eval.unwrap().output() } else { train.output() };
        let v = est.p_estimator.estimate(sample, alpha)?;
        p_cache.insert(key, v);
        Ok(v)
    };

    // Full forest shared by the Q3 estimators, built on demand.
    let mut full_forest: Option<(Forest, f64)> = None;

    let mut s_hat = vec![vec![vec![f64::NAN; alphas.len()]; d]; estimators.len()];
    let mut seconds = vec![vec![vec![0.0; alphas.len()]; d]; estimators.len()];

    for i in 0..d {
        let x = train.input(i);
        let y = train.output();
        for (ai, &alpha) in alphas.iter().enumerate() {
            // Tuned leaf shared by every estimator using the same method and
            // strategy for this (input, alpha).
            let mut tuned: HashMap<CondQuantileMethod, (usize, f64)> = HashMap::new();
            let mut forests: HashMap<usize, Forest> = HashMap::new();
            for (ei, est) in estimators.iter().enumerate() {
                let o_est = est.o_estimator;
                let start = Instant::now();
                let o_hat = match o_est {
                    OEstimator::Q3b | OEstimator::Q3o => {
                        if full_forest.is_none() {
                            let t0 = Instant::now();
                            let cols: Vec<&[f64]> =
                                train.input_columns().iter().map(|c| c.as_slice()).collect();
                            let params = ForestParams {
                                n_trees,
                                min_samples_leaf: leaf_override.unwrap_or(q3_min_samples_leaf),
                                max_features: d,
                                seed: child_seed(rep_seed, "full-forest"),
                                bootstrap_size: None,
                            };
                            full_forest =
                                Some((Forest::fit(&cols, y, &params)?, t0.elapsed().as_secs_f64()));
                        }
                        let (forest, _) = full_forest.as_ref().unwrap();
                        estimate_o_min_full(
                            forest,
                            i,
                            eval.as_ref().unwrap().input_columns(),
                            alpha,
                            o_est.scheme(),
                        )?
                    }
                    _ => {
                        let leaf = match leaf_override {
                            Some(l) => l,
                            None => {
                                let method = o_est
                                    .quantile_method()
                                    .unwrap_or_else(CondQuantileMethod::weighted_original);
                                if let Some(&(l, _)) = tuned.get(&method) {
                                    l
                                } else {
                                    let t0 = Instant::now();
                                    let base = ForestParams {
                                        n_trees,
                                        min_samples_leaf: 1,
                                        max_features: 1,
                                        seed: child_seed_indexed2(
                                            rep_seed, "tune", i as u64, ai as u64,
                                        ),
                                        bootstrap_size: None,
                                    };
                                    let report = match tuning {
                                        TuningStrategy::Cv => {
                                            cv_tune(x, y, grid, folds, alpha, method, &base)?
                                        }
                                        TuningStrategy::Oob => {
                                            oob_tune(x, y, grid, alpha, method, &base)?
                                        }
                                    };
                                    tuned.insert(
                                        method,
                                        (report.selected, t0.elapsed().as_secs_f64()),
                                    );
                                    report.selected
                                }
                            }
                        };
                        let forest = match forests.get(&leaf) {
                            Some(f) => f,
                            None => {
                                let params = ForestParams {
                                    n_trees,
                                    min_samples_leaf: leaf,
                                    max_features: 1,
                                    seed: child_seed_indexed2(
                                        rep_seed, "forest", i as u64, ai as u64,
                                    ),
                                    bootstrap_size: None,
                                };
                                forests.insert(leaf, Forest::fit_single_input(x, y, &params)?);
                                &forests[&leaf]
                            }
                        };
                        match o_est {
                            OEstimator::R1b | OEstimator::R1o | OEstimator::R2b | OEstimator::R2o => {
                                let ev = eval.as_ref().unwrap();
                                estimate_o_quantile(
                                    forest,
                                    ev.input(i),
                                    ev.output(),
                                    alpha,
                                    o_est.quantile_method().unwrap(),
                                )?
                            }
                            OEstimator::Q1b | OEstimator::Q1o => estimate_o_min_weighted(
                                forest,
                                eval.as_ref().unwrap().input(i),
                                alpha,
                                o_est.scheme(),
                            )?,
                            OEstimator::Q2b | OEstimator::Q2o => {
                                estimate_o_min_in_leaf(forest, alpha, o_est.scheme())?
                            }
                            _ => unreachable!(),
                        }
                    }
                };
                let p_hat = p_term(*est, ai, alpha, eval.as_ref(), &train)?;
                if p_hat == 0.0 {
                    return Err(Error::Degenerate("P term is zero".into()));
                }
                s_hat[ei][i][ai] = 1.0 - o_hat / p_hat;
                seconds[ei][i][ai] += start.elapsed().as_secs_f64();
            }
        }
    }
    Ok(Replication { s_hat, seconds, duration_s: rep_start.elapsed().as_secs_f64() })
}

fn cell_metrics(estimates: &[f64], truth: f64) -> (f64, f64, f64, f64) {
    let s = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / s;
    let rmse = (estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / s).sqrt();
    let bias = (mean - truth).abs();
    let variance = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / s;
    (mean, rmse, bias, variance)
}

fn replicate_point(
    config: &ExperimentConfig,
    model: &SyntheticModel,
    n: usize,
    n_trees: usize,
    leaf_override: Option<usize>,
    sweep_axis: Option<&str>,
    sweep_value: Option<usize>,
    point_seed: u64,
) -> Result<(Vec<MetricsCell>, f64)> {
    let reps: Vec<Replication> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            run_replication(
                model,
                &config.estimators,
                &config.alphas,
                n,
                n_trees,
                leaf_override,
                &config.grid,
                config.tuning,
                config.folds,
                config.q3_min_samples_leaf,
                child_seed_indexed(point_seed, "rep", r as u64),
            )
        })
        .collect::<Result<_>>()?;

    let d = model.dimension();
    let mut cells = Vec::new();
    for (ei, est) in config.estimators.iter().enumerate() {
        for i in 0..d {
            for (ai, &alpha) in config.alphas.iter().enumerate() {
                let estimates: Vec<f64> = reps.iter().map(|r| r.s_hat[ei][i][ai]).collect();
                let truth = true_index(model, alpha, i)?;
                let (mean, rmse, bias, variance) = cell_metrics(&estimates, truth);
                let wall: f64 = reps.iter().map(|r| r.seconds[ei][i][ai]).sum();
                cells.push(MetricsCell {
                    estimator: *est,
                    input_index: i,
                    alpha,
                    sweep_axis: sweep_axis.map(str::to_string),
                    sweep_value,
                    true_value: truth,
                    mean_estimate: mean,
                    rmse,
                    bias,
                    variance,
                    replications: config.replications,
                    wall_time_s: wall,
                });
            }
        }
    }
    let rep_wall: f64 = reps.iter().map(|r| r.duration_s).sum();
    Ok((cells, rep_wall))
}

/// Run the replicated study described by `config`: per sweep point,
/// `replications` independent replications, reproducible from the seed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    let t0 = Instant::now();
    if config.replications == 0 {
        return Err(Error::Config("replications must be at least 1".into()));
    }
    if config.estimators.is_empty() || config.alphas.is_empty() {
        return Err(Error::Config("need at least one estimator and one alpha".into()));
    }
    config.sweep.validate()?;

    let points: Vec<(Option<&str>, Option<usize>)> = match &config.sweep {
        SweepSpec::None => vec![(None, None)],
        SweepSpec::Leaf(v) => v.iter().map(|&x| (Some("leaf"), Some(x))).collect(),
        SweepSpec::Trees(v) => v.iter().map(|&x| (Some("trees"), Some(x))).collect(),
        SweepSpec::SampleSize(v) => v.iter().map(|&x| (Some("n"), Some(x))).collect(),
    };

    let mut cells = Vec::new();
    let mut rep_wall = 0.0;
    for (pi, &(axis, value)) in points.iter().enumerate() {
        let (n, k, leaf) = match axis {
            Some("leaf") => (config.n, config.n_trees, Some(value.unwrap())),
            Some("trees") => (config.n, value.unwrap(), None),
            Some("n") => (value.unwrap(), config.n_trees, None),
            _ => (config.n, config.n_trees, None),
        };
        let point_seed = child_seed_indexed(config.seed, "sweep-point", pi as u64);
        let (mut point_cells, wall) =
            replicate_point(config, &config.model, n, k, leaf, axis, value, point_seed)?;
        cells.append(&mut point_cells);
        rep_wall += wall;
    }
    Ok(MetricsReport {
        cells,
        replication_wall_s: rep_wall,
        total_wall_s: rep_wall + (t0.elapsed().as_secs_f64() - rep_wall).max(0.0),
        config: config.clone(),
    })
}

/// Dimension scaling study of the additive exponential model: for each `d`,
/// rates evenly spaced over `[0.3, 1.25]`, and per-input RMSE aggregated
/// into a weighted mean with the true indices as weights.
pub fn dimension_sweep(config: &ExperimentConfig, dimensions: &[usize]) -> Result<DimensionReport> {
    let t0 = Instant::now();
    if dimensions.is_empty() || dimensions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "dimensions must be nonempty and strictly increasing, got {dimensions:?}"
        )));
    }
    let mut per_input = Vec::new();
    let mut summary = Vec::new();
    let mut rep_wall = 0.0;
    for (di, &dim) in dimensions.iter().enumerate() {
        let rates = evenly_spaced_rates(dim)?;
        let model = SyntheticModel::additive_exp(rates.clone())?;
        let point_seed = child_seed_indexed(config.seed, "dimension", di as u64);
        let (cells, wall) = replicate_point(
            config,
            &model,
            config.n,
            config.n_trees,
            None,
            Some("dimension"),
            Some(dim),
            point_seed,
        )?;
        rep_wall += wall;
        for est in &config.estimators {
            for &alpha in &config.alphas {
                let mut num = 0.0;
                let mut den = 0.0;
                for cell in cells.iter().filter(|c| {
                    c.estimator == *est && c.alpha == alpha
                }) {
                    num += cell.true_value * cell.rmse;
                    den += cell.true_value;
                }
                if den == 0.0 {
                    return Err(Error::Degenerate("true indices sum to zero".into()));
                }
                summary.push(DimensionCell {
                    estimator: *est,
                    alpha,
                    dimension: dim,
                    weighted_rmse: num / den,
                });
            }
        }
        per_input.extend(cells);
    }
    Ok(DimensionReport {
        per_input,
        summary,
        replication_wall_s: rep_wall,
        total_wall_s: rep_wall + (t0.elapsed().as_secs_f64() - rep_wall).max(0.0),
    })
}
