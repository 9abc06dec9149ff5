//! `qosa`: estimate first-order quantile oriented sensitivity indices on a
//! CSV file or a synthetic toy model, tune forest leaf sizes, run the
//! benchmark studies, query the analytical oracles, and rank inputs.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use qosa::bench::{dimension_sweep, run_experiment, ExperimentConfig, SweepSpec};
use qosa::cond_dist::Alpha;
use qosa::dataset::{load_csv, Dataset, SyntheticModel};
use qosa::oracle;
use qosa::qosa::{estimate_indices, EstimateOptions, EstimatorId, OEstimator, PEstimator};
use qosa::seeding::child_seed;
use qosa::tuning::{LeafGrid, TuningStrategy};
use qosa::Error;

use output::{EstimateFileReport, OutputFormat, RankedReport};

#[derive(Parser)]
#[command(name = "qosa", version, about = "Random-forest estimation of first-order QOSA indices")]
struct Cli {
    /// Worker thread count (overrides the QOSA_THREADS environment variable).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate QOSA indices for every input of a dataset or model.
    Estimate(EstimateArgs),
    /// Tune the forest leaf size for one input and level.
    Tune(TuneArgs),
    /// Replicated error studies against the analytical oracles.
    Benchmark(BenchmarkArgs),
    /// Print analytical true values for the synthetic models.
    Oracle(OracleArgs),
    /// Rank inputs from a saved estimate report.
    Report(ReportArgs),
}

#[derive(Args)]
struct SourceArgs {
    /// Synthetic model id: `exp-diff` or `additive-exp:<r1,r2,...>`.
    #[arg(long, conflicts_with = "csv")]
    model: Option<String>,
    /// Sample size drawn from a synthetic model.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// CSV input path (header required, numeric cells only).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Output column name of the CSV input.
    #[arg(long)]
    output: Option<String>,
}

impl SourceArgs {
    fn load(&self, seed: u64, tag: &str) -> Result<Dataset, Error> {
        match (&self.model, &self.csv) {
            (Some(id), None) => SyntheticModel::parse_id(id)?.generate(self.n, child_seed(seed, tag)),
            (None, Some(path)) => {
                let column = self.output.as_deref().ok_or_else(|| {
                    Error::Config("--output <column> is required with --csv".into())
                })?;
                load_csv(path, column)
            }
            _ => Err(Error::Config("exactly one of --model or --csv is required".into())),
        }
    }

    fn describe(&self) -> String {
        match (&self.model, &self.csv) {
            (Some(id), _) => format!("{id} (n = {})", self.n),
            (_, Some(path)) => path.display().to_string(),
            _ => "unspecified".into(),
        }
    }
}

#[derive(Args)]
struct OutArgs {
    /// Output format.
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Comma-separated levels in (0, 1).
    #[arg(long, default_value = "0.5")]
    alpha: String,
    /// O-term estimator: r1b, r1o, r2b, r2o, q1b, q1o, q2b, q2o, q3b, q3o.
    #[arg(long, default_value = "q2o")]
    estimator: String,
    /// P-term estimator: p1 (default) or p2.
    #[arg(long, default_value = "p1")]
    p_estimator: String,
    /// Number of trees per forest.
    #[arg(long, default_value_t = 100)]
    trees: usize,
    /// Leaf-size grid as lo:hi:count.
    #[arg(long, default_value = "5:300:20")]
    grid: String,
    /// Leaf-size tuning strategy: cv or oob.
    #[arg(long, default_value = "cv")]
    tuning: String,
    /// Cross-validation fold count.
    #[arg(long, default_value_t = 3)]
    folds: usize,
    /// Leaf size of the untuned full-forest estimators (q3b/q3o).
    #[arg(long, default_value_t = 2)]
    q3_leaf: usize,
    /// Restrict to these inputs (0-based indices or column names).
    #[arg(long)]
    inputs: Option<String>,
    /// Second sample for two-sample estimators (CSV path); defaults to a
    /// seeded 50/50 split of the input (CSV) or a fresh draw (synthetic).
    #[arg(long)]
    eval_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Input to tune (0-based index or column name).
    #[arg(long)]
    input: String,
    /// Level in (0, 1).
    #[arg(long)]
    alpha: f64,
    /// Estimator whose error drives the tuning (minimum-based estimators
    /// delegate to r1o).
    #[arg(long, default_value = "r1o")]
    estimator: String,
    #[arg(long, default_value = "5:300:20")]
    grid: String,
    #[arg(long, default_value = "cv")]
    tuning: String,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Synthetic model id.
    #[arg(long, default_value = "exp-diff")]
    model: String,
    /// Comma-separated estimator tags.
    #[arg(long, default_value = "q1o,q2o")]
    estimators: String,
    /// Comma-separated levels.
    #[arg(long, default_value = "0.1,0.5,0.9")]
    alphas: String,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    /// Replications per sweep point.
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value = "5:300:20")]
    grid: String,
    #[arg(long, default_value = "cv")]
    tuning: String,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[arg(long, default_value_t = 2)]
    q3_leaf: usize,
    /// Sweep axis: none, leaf, trees, n, dimension.
    #[arg(long, default_value = "none")]
    sweep: String,
    /// Comma-separated sweep values (required unless --sweep none).
    #[arg(long)]
    sweep_values: Option<String>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct OracleArgs {
    /// Synthetic model id.
    #[arg(long)]
    model: String,
    /// Comma-separated levels.
    #[arg(long, default_value = "0.1,0.5,0.9")]
    alphas: String,
    /// Restrict to these inputs (0-based indices); all inputs by default.
    #[arg(long)]
    inputs: Option<String>,
    /// Cross-check with the brute-force Monte-Carlo oracle: outer loop size.
    #[arg(long)]
    mc_outer: Option<usize>,
    /// Inner loop size of the Monte-Carlo cross-check.
    #[arg(long, default_value_t = 10_000)]
    mc_inner: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Estimate report (JSON produced by `qosa estimate --format json`).
    #[arg(long)]
    estimates: PathBuf,
    #[command(flatten)]
    out: OutArgs,
}

fn parse_list<T: FromStr>(spec: &str, what: &str) -> Result<Vec<T>, Error> {
    spec.split(',')
        .map(|s| {
            T::from_str(s.trim()).map_err(|_| Error::Config(format!("bad {what} value {s:?}")))
        })
        .collect()
}

fn parse_alphas(spec: &str) -> Result<Vec<Alpha>, Error> {
    parse_list::<f64>(spec, "alpha")?.into_iter().map(Alpha::new).collect()
}

fn resolve_inputs(spec: &Option<String>, data: &Dataset) -> Result<Vec<usize>, Error> {
    let Some(spec) = spec else { return Ok(Vec::new()) };
    spec.split(',')
        .map(|s| {
            let s = s.trim();
            if let Ok(idx) = usize::from_str(s) {
                return Ok(idx);
            }
            (0..data.d())
                .find(|&i| data.input_name(i) == s)
                .ok_or_else(|| Error::Config(format!("unknown input {s:?}")))
        })
        .collect()
}

fn cmd_estimate(args: &EstimateArgs) -> Result<(), Error> {
    let estimator = EstimatorId {
        o_estimator: OEstimator::from_str(&args.estimator)?,
        p_estimator: PEstimator::from_str(&args.p_estimator)?,
    };
    let alphas = parse_alphas(&args.alpha)?;
    let source = args.source.describe();
    let (train, eval) = if estimator.o_estimator.needs_eval_sample() {
        match (&args.source.model, &args.eval_csv) {
            (Some(_), None) => {
                let train = args.source.load(args.seed, "train")?;
                let eval = args.source.load(args.seed, "eval")?;
                (train, Some(eval))
            }
            (None, Some(path)) => {
                let train = args.source.load(args.seed, "train")?;
                let column = args.source.output.as_deref().unwrap();
                (train, Some(load_csv(path, column)?))
            }
            (None, None) => {
                let full = args.source.load(args.seed, "train")?;
                let (train, eval) = full.split_half(args.seed)?;
                (train, Some(eval))
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config("--eval-csv applies to CSV input only".into()))
            }
        }
    } else {
        (args.source.load(args.seed, "train")?, None)
    };

    let mut opts = EstimateOptions::new(estimator, alphas, args.seed);
    opts.inputs = resolve_inputs(&args.inputs, &train)?;
    opts.n_trees = args.trees;
    opts.grid = LeafGrid::from_spec(&args.grid)?;
    opts.tuning = TuningStrategy::from_str(&args.tuning)?;
    opts.folds = args.folds;
    opts.q3_min_samples_leaf = args.q3_leaf;

    let outcome = estimate_indices(&train, eval.as_ref(), &opts)?;
    let report = EstimateFileReport { source, options: opts, estimates: outcome.estimates, tuning: outcome.tuning };
    output::write_estimates(&report, args.out.format, args.out.out.as_deref())
}

fn cmd_tune(args: &TuneArgs) -> Result<(), Error> {
    let data = args.source.load(args.seed, "train")?;
    let inputs = resolve_inputs(&Some(args.input.clone()), &data)?;
    let input = inputs[0];
    if input >= data.d() {
        return Err(Error::Config(format!("input {input} out of range for {} inputs", data.d())));
    }
    let alpha = Alpha::new(args.alpha)?;
    let estimator = OEstimator::from_str(&args.estimator)?;
    let method = estimator
        .quantile_method()
        .unwrap_or_else(qosa::cond_dist::CondQuantileMethod::weighted_original);
    let grid = LeafGrid::from_spec(&args.grid)?;
    let base = qosa::forest::ForestParams::new(args.trees, 1, 1, args.seed);
    let report = match TuningStrategy::from_str(&args.tuning)? {
        TuningStrategy::Cv => qosa::tuning::cv_tune(
            data.input(input),
            data.output(),
            &grid,
            args.folds,
            alpha,
            method,
            &base,
        )?,
        TuningStrategy::Oob => qosa::tuning::oob_tune(
            data.input(input),
            data.output(),
            &grid,
            alpha,
            method,
            &base,
        )?,
    };
    output::write_tuning(&report, input, alpha, args.out.format, args.out.out.as_deref())
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<(), Error> {
    let model = SyntheticModel::parse_id(&args.model)?;
    let estimators: Vec<EstimatorId> = parse_list::<OEstimator>(&args.estimators, "estimator")?
        .into_iter()
        .map(EstimatorId::new)
        .collect();
    let alphas = parse_alphas(&args.alphas)?;
    let mut config = ExperimentConfig::new(model, estimators, alphas, args.seed);
    config.n = args.n;
    config.n_trees = args.trees;
    config.replications = args.reps;
    config.grid = LeafGrid::from_spec(&args.grid)?;
    config.tuning = TuningStrategy::from_str(&args.tuning)?;
    config.folds = args.folds;
    config.q3_min_samples_leaf = args.q3_leaf;

    let sweep_values = || -> Result<Vec<usize>, Error> {
        let spec = args
            .sweep_values
            .as_deref()
            .ok_or_else(|| Error::Config("--sweep-values is required with --sweep".into()))?;
        parse_list::<usize>(spec, "sweep")
    };
    match args.sweep.as_str() {
        "none" => {
            let report = run_experiment(&config)?;
            output::write_metrics(&report, args.out.format, args.out.out.as_deref())
        }
        "leaf" => {
            config.sweep = SweepSpec::Leaf(sweep_values()?);
            let report = run_experiment(&config)?;
            output::write_metrics(&report, args.out.format, args.out.out.as_deref())
        }
        "trees" => {
            config.sweep = SweepSpec::Trees(sweep_values()?);
            let report = run_experiment(&config)?;
            output::write_metrics(&report, args.out.format, args.out.out.as_deref())
        }
        "n" => {
            config.sweep = SweepSpec::SampleSize(sweep_values()?);
            let report = run_experiment(&config)?;
            output::write_metrics(&report, args.out.format, args.out.out.as_deref())
        }
        "dimension" => {
            let report = dimension_sweep(&config, &sweep_values()?)?;
            output::write_dimension(&report, args.out.format, args.out.out.as_deref())
        }
        other => Err(Error::Config(format!(
            "unknown sweep axis {other:?}; expected none, leaf, trees, n or dimension"
        ))),
    }
}

fn cmd_oracle(args: &OracleArgs) -> Result<(), Error> {
    let model = SyntheticModel::parse_id(&args.model)?;
    let alphas = parse_alphas(&args.alphas)?;
    let inputs: Vec<usize> = match &args.inputs {
        Some(spec) => parse_list::<usize>(spec, "input")?,
        None => (0..model.dimension()).collect(),
    };
    let mut records = Vec::new();
    for &input in &inputs {
        for &alpha in &alphas {
            let (o_true, p_true) = match &model {
                SyntheticModel::ExpDiff => (
                    oracle::expdiff_o_true(alpha, input)?,
                    oracle::expdiff_p_true(alpha),
                ),
                SyntheticModel::AdditiveExp { rates } => {
                    let full = oracle::HypoexpParams::new(rates.clone())?;
                    let p = full.pinball_risk(alpha);
                    let o = if rates.len() == 1 {
                        0.0
                    } else {
                        let rest: Vec<f64> = rates
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| *j != input)
                            .map(|(_, r)| *r)
                            .collect();
                        oracle::HypoexpParams::new(rest)?.pinball_risk(alpha)
                    };
                    (o, p)
                }
            };
            let s_true = oracle::true_index(&model, alpha, input)?;
            let mc_estimate = match args.mc_outer {
                Some(outer) => Some(oracle::mc_brute_force_qosa(
                    &model,
                    input,
                    alpha,
                    outer,
                    args.mc_inner,
                    args.seed,
                )?),
                None => None,
            };
            records.push(output::OracleRecord {
                model: model.to_string(),
                input,
                alpha,
                s_true,
                o_true,
                p_true,
                mc_estimate,
            });
        }
    }
    output::write_oracle(&records, args.out.format, args.out.out.as_deref())
}

fn cmd_report(args: &ReportArgs) -> Result<(), Error> {
    let file = std::fs::File::open(&args.estimates)
        .map_err(|e| Error::Ingestion(format!("cannot open {}: {e}", args.estimates.display())))?;
    let report: EstimateFileReport = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::Ingestion(format!("cannot parse estimate report: {e}")))?;
    let ranked = RankedReport::from_estimates(&report.estimates)?;
    output::write_ranked(&ranked, args.out.format, args.out.out.as_deref())
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Tune(args) => cmd_tune(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Ingestion(_) => 3,
        Error::Estimation(_) | Error::Degenerate(_) | Error::Invariant(_) => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var("QOSA_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = match &err {
                Error::Config(_) => "config",
                Error::Ingestion(_) => "ingestion",
                Error::Estimation(_) => "estimation",
                Error::Degenerate(_) => "degenerate",
                Error::Invariant(_) => "invariant",
            };
            eprintln!(
                "{}",
                serde_json::json!({ "error": { "kind": kind, "message": err.to_string() } })
            );
            ExitCode::from(exit_code(&err))
        }
    }
}
