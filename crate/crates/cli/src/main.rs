use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use atrel_core::comparators::ComparatorMethod;
use atrel_core::estimator::AtrelConfig;
use atrel_core::interface::{
    atomic_write, dataset_csv, report_csv, run_bootstrap, run_evaluate, run_fit, Benchmark, ColumnSchema, DataPaths, FitManifest,
    FitRequest,
};
use atrel_core::nuisance::CalibrationBackend;
use atrel_core::numerics::Link;
use atrel_core::simbench::{gen_population, run_study, ConfigId, EstimatorId, SimConfig, Truncation};
use atrel_core::AtrelError;

#[derive(Parser)]
#[command(name = "atrel", version, about = "Doubly robust transfer regression under covariate shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the working model on a transfer dataset.
    Fit(FitArgs),
    /// Write one simulated dataset as CSV.
    Simulate(SimulateArgs),
    /// Compare fitted coefficients with a validation benchmark.
    Evaluate(EvaluateArgs),
    /// Add bootstrap intervals to a fit manifest.
    Bootstrap(BootstrapArgs),
    /// Run a Monte Carlo study and write the report.
    Bench(BenchArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Single CSV holding both populations (needs --population).
    #[arg(long, conflicts_with_all = ["source", "target"])]
    data: Option<PathBuf>,
    #[arg(long, requires = "target")]
    source: Option<PathBuf>,
    #[arg(long, requires = "source")]
    target: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    response: String,
    #[arg(long, default_value = "population")]
    population: String,
    /// Covariate columns; default every other column.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Columns of A (constant implied); default all covariates.
    #[arg(long, value_delimiter = ',')]
    a: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    psi: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    phi: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', required = true)]
    z: Vec<String>,
    /// `a:b` replaces column a by its residual on column b (repeatable).
    #[arg(long)]
    orthogonalize: Vec<String>,
    #[arg(long, default_value = "logit")]
    link: Link,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Bootstrap resamples; 0 skips intervals.
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    backend: Option<CalibrationBackend>,
    #[arg(long, value_delimiter = ',')]
    comparators: Vec<ComparatorMethod>,
    /// JSON manifest path.
    #[arg(long)]
    out: PathBuf,
    /// Coefficient table path; default next to the manifest.
    #[arg(long)]
    coef: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: ConfigId,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long = "big-n", default_value_t = 1000)]
    big_n: usize,
    #[arg(long, default_value = "clamp")]
    truncation: Truncation,
    /// Also write the simulated target responses.
    #[arg(long)]
    target_y: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "atrel")]
    estimator: String,
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        conflicts_with = "validation",
        required_unless_present = "validation"
    )]
    beta_valid: Option<Vec<f64>>,
    /// Labeled validation CSV; β_valid is its logistic fit.
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    response: String,
    /// JSON output; default standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BootstrapArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Output manifest; default overwrites the input.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: ConfigId,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "atrel,parametric")]
    estimators: Vec<EstimatorId>,
    /// Estimators that get bootstrap intervals; default all.
    #[arg(long, value_delimiter = ',')]
    interval_estimators: Option<Vec<EstimatorId>>,
    /// Bootstrap resamples per replication; 0 skips coverage.
    #[arg(long, default_value_t = 100)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long = "big-n", default_value_t = 1000)]
    big_n: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value = "clamp")]
    truncation: Truncation,
    #[arg(long, default_value_t = atrel_core::simbench::TRUTH_ROWS)]
    truth_rows: usize,
    /// Report CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Full report including replication records, as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl From<AtrelError> for Failure {
    fn from(e: AtrelError) -> Self {
        let code = match e.root() {
            AtrelError::Config(_) => 1,
            _ if e.is_data() => 2,
            AtrelError::UndefinedMetric(_) => 2,
            _ => 3,
        };
        Failure {
            code,
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        kind: "usage".into(),
        message: message.into(),
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    atomic_write(path, bytes).map_err(|e| Failure::from(e.context(format!("writing {}", path.display()))))
}

fn fit(args: FitArgs) -> Result<(), Failure> {
    let mut schema = ColumnSchema::new(args.response, args.z);
    schema.covariates = args.covariates;
    schema.a = args.a;
    schema.psi = args.psi;
    schema.phi = args.phi;
    let data = match (args.data, args.source, args.target) {
        (Some(path), None, None) => {
            schema.population = Some(args.population);
            DataPaths::Single(path)
        }
        (None, Some(source), Some(target)) => DataPaths::Split { source, target },
        _ => return Err(usage("give either --data or both --source and --target")),
    };
    let orthogonalize = args
        .orthogonalize
        .iter()
        .map(|s| match s.split_once(':') {
            Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
            _ => Err(usage(format!("--orthogonalize expects a:b, got '{s}'"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let config = AtrelConfig {
        folds: args.folds,
        bootstrap_reps: args.bootstrap,
        confidence_level: args.level,
        seed: args.seed,
        backend: args.backend,
        ..AtrelConfig::default()
    };
    let request = FitRequest {
        data,
        schema,
        orthogonalize,
        link: args.link,
        config,
        comparators: args.comparators,
    };
    let manifest = run_fit(&request)?;
    write(&args.out, &manifest.to_json()?)?;
    let coef = args.coef.unwrap_or_else(|| args.out.with_extension("csv"));
    write(&coef, &manifest.coefficient_csv()?)?;
    for (name, v) in manifest.parameters.iter().zip(&manifest.atrel.estimates) {
        println!("{name}\t{v}");
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut params = atrel_core::simbench::GeneratorParams::config(args.config);
    params.truncation = args.truncation;
    let pop = gen_population(&params, args.n, args.big_n, args.seed)?;
    let target_y = args.target_y.then_some(pop.target_y.as_slice());
    write(&args.out, &dataset_csv(&pop.data, target_y)?)
}

fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let manifest = FitManifest::read(&args.manifest)?;
    let benchmark = match (args.beta_valid, args.validation) {
        (Some(b), None) => Benchmark::Coefficients(b),
        (None, Some(path)) => Benchmark::Labels {
            path,
            response: args.response,
        },
        _ => return Err(usage("give either --beta-valid or --validation")),
    };
    let report = run_evaluate(&manifest, &args.estimator, &benchmark)?;
    let mut json = serde_json::to_vec_pretty(&report).map_err(AtrelError::from)?;
    json.push(b'\n');
    match args.out {
        Some(path) => write(&path, &json),
        None => {
            print!("{}", String::from_utf8_lossy(&json));
            Ok(())
        }
    }
}

fn bootstrap(args: BootstrapArgs) -> Result<(), Failure> {
    let manifest = FitManifest::read(&args.manifest)?;
    let updated = run_bootstrap(&manifest, args.reps, args.level)?;
    let out = args.out.unwrap_or(args.manifest);
    write(&out, &updated.to_json()?)?;
    write(&out.with_extension("csv"), &updated.coefficient_csv()?)
}

fn bench(args: BenchArgs) -> Result<(), Failure> {
    let mut config = SimConfig::new(args.config);
    config.replications = args.reps;
    config.seed = args.seed;
    config.interval_estimators = args.interval_estimators.unwrap_or_else(|| args.estimators.clone());
    config.estimators = args.estimators;
    config.bootstrap_reps = args.bootstrap;
    config.confidence_level = args.level;
    config.n = args.n;
    config.big_n = args.big_n;
    config.folds = args.folds;
    config.truncation = args.truncation;
    config.truth_rows = args.truth_rows;
    let report = run_study(&config)?;
    write(&args.out, &report_csv(&report)?)?;
    if let Some(path) = args.json {
        let json = serde_json::to_vec_pretty(&report).map_err(AtrelError::from)?;
        write(&path, &json)?;
    }
    println!("estimator\tavg_rmse\tavg_abs_bias\tmax_cp_deviance");
    for s in &report.summaries {
        let cp = s.max_coverage_deviance.map_or("-".to_string(), |d| format!("{d:.3}"));
        println!("{}\t{:.4}\t{:.4}\t{cp}", s.estimator, s.average_rmse, s.average_abs_bias);
    }
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("ATREL_THREADS") {
        let threads: usize = v
            .parse()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| usage(format!("ATREL_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run() -> Result<(), Failure> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(usage(e.render().to_string().trim_end())),
    };
    configure_threads()?;
    match cli.command {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bootstrap(a) => bootstrap(a),
        Command::Bench(a) => bench(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let json = serde_json::json!({ "error": f.kind, "message": f.message, "exit_code": f.code });
            eprintln!("{json}");
            ExitCode::from(f.code)
        }
    }
}
