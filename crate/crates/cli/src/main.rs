//! `viewsieve`: pick a diverse subset of camera views from a capture.

mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use viewsieve::geometry::FrustumParams;
use viewsieve::oracle::{self, PropertyReport, UtilityKind};
use viewsieve::{
    build_matrix, load_features, load_trajectory, normalize_positions, select, DistanceWeights,
    Error, PoseFormat, SampleSize, SelectionConfig, Strategy, Trajectory,
};

use report::{sha256_file, InputHash, Manifest, SelectionDocument};

/// Exit codes. Stable; scripts may rely on them.
mod exit {
    pub const INTERNAL: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const INGESTION: u8 = 3;
    pub const SINGULAR: u8 = 4;
    pub const PROPERTY: u8 = 5;
}

#[derive(Debug, Parser)]
#[command(
    name = "viewsieve",
    version,
    about = "Select diverse subsets of camera views"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select a subset of views and write the selection as JSON.
    Select(SelectArgs),
    /// Write the pairwise affinity matrix as CSV.
    Matrix(MatrixArgs),
    /// Run a randomized property suite against the utilities.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Poses: a transforms.json file, or a CSV with id,tx,ty,tz,qw,qx,qy,qz.
    #[arg(long)]
    poses: PathBuf,
    /// Per-view feature vectors (JSON map or binary sidecar).
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 0.7)]
    alpha: f64,
    #[arg(long, default_value_t = 0.2)]
    beta: f64,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    /// Gaussian kernel width on normalized positions.
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Random,
    Uniform,
    GreedyDf,
    GreedyDpp,
    GreedyCf,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Random => Strategy::Random,
            StrategyArg::Uniform => Strategy::Uniform,
            StrategyArg::GreedyDf => Strategy::GreedyDf,
            StrategyArg::GreedyDpp => Strategy::GreedyDpp,
            StrategyArg::GreedyCf => Strategy::GreedyCf,
        }
    }
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("size").required(true).args(["count", "ratio"]))]
struct SelectArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    /// Number of views to keep.
    #[arg(long)]
    count: Option<usize>,
    /// Fraction of views to keep, in (0, 1].
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cover-ratio exponent for greedy-cf.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Voxels per axis for greedy-cf.
    #[arg(long = "grid-res", default_value_t = 16)]
    grid_res: usize,
    /// Vertical field of view in degrees for greedy-cf. Defaults to the
    /// intrinsics in the pose file, or 90.
    #[arg(long)]
    fov: Option<f64>,
    /// Angular bins for greedy-cf: 6 (axes) or 26 (cube lattice).
    #[arg(long = "angular-bins", default_value_t = 26)]
    angular_bins: usize,
    /// Diagonal jitter added to the kernel for greedy-dpp.
    #[arg(long = "dpp-jitter")]
    dpp_jitter: Option<f64>,
    /// Where to write the selection JSON. Without it the JSON goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MatrixArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Where to write the CSV. Without it the CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Suite {
    Submodular,
    Monotone,
    Approx,
    DppDense,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum UtilityArg {
    Df,
    Dpp,
    Cf,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    /// Utility under test for the submodular and monotone suites.
    #[arg(long, value_enum, default_value = "df")]
    utility: UtilityArg,
    /// Number of random trials; each suite has its own default.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the report JSON. Without it the JSON goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => exit::USAGE,
            Failure::Internal(_) => exit::INTERNAL,
            Failure::Core(e) => match e {
                Error::Io { .. } | Error::Parse { .. } | Error::Validation { .. } => {
                    exit::INGESTION
                }
                Error::Config(_) | Error::MissingFeatures { .. } => exit::USAGE,
                Error::NumericalSingularity { .. } => exit::SINGULAR,
                Error::Contract(_) | Error::BudgetExceeded { .. } => exit::INTERNAL,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Internal(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { 0 });
        }
    };
    let outcome = configure_threads().and_then(|()| match cli.command {
        Command::Select(args) => cmd_select(args),
        Command::Matrix(args) => cmd_matrix(args),
        Command::Check(args) => cmd_check(args),
    });
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

/// `VIEWSIEVE_THREADS` caps the worker pool; 0 or unset leaves it automatic.
fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("VIEWSIEVE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        Failure::Usage(format!(
            "VIEWSIEVE_THREADS must be a non-negative integer, got {raw:?}"
        ))
    })?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Internal(e.to_string()))?;
    }
    Ok(())
}

fn weights(input: &InputArgs) -> Result<DistanceWeights, Failure> {
    Ok(DistanceWeights::new(
        input.alpha,
        input.beta,
        input.gamma,
        input.sigma,
    )?)
}

/// Loads poses and features and normalizes positions into the working cube.
fn load_input(input: &InputArgs) -> Result<(Trajectory, Vec<InputHash>), Failure> {
    let mut hashes = vec![InputHash {
        path: input.poses.display().to_string(),
        sha256: sha256_file(&input.poses)?,
    }];
    let mut traj = load_trajectory(&input.poses, PoseFormat::from_path(&input.poses))?;
    if let Some(path) = &input.features {
        hashes.push(InputHash {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        traj.attach_features(&load_features(path)?)?;
    }
    Ok((normalize_positions(traj), hashes))
}

fn write_output(out: Option<&Path>, body: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, body).map_err(|e| {
            Failure::Core(Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
        }),
        None => std::io::stdout()
            .write_all(body)
            .map_err(|e| Failure::Internal(format!("writing to stdout: {e}"))),
    }
}

fn cmd_select(args: SelectArgs) -> Result<u8, Failure> {
    let started = Instant::now();
    let w = weights(&args.input)?;
    let (traj, inputs) = load_input(&args.input)?;

    let size = match (args.count, args.ratio) {
        (Some(k), None) => SampleSize::Count(k),
        (None, Some(r)) => SampleSize::Ratio(r),
        _ => {
            return Err(Failure::Usage(
                "pass exactly one of --count or --ratio".into(),
            ))
        }
    };
    let mut config = SelectionConfig::new(args.strategy.into(), size);
    config.seed = args.seed;
    config.weights = w;
    config.lambda = args.lambda;
    config.grid_resolution = args.grid_res;
    config.angular_bins = args.angular_bins;
    config.dpp_jitter = args.dpp_jitter;
    config.frustum = FrustumParams {
        fov_y: match args.fov {
            Some(deg) => deg.to_radians(),
            None => traj.fov_y.unwrap_or(FrustumParams::default().fov_y),
        },
        aspect: traj.aspect.unwrap_or(1.0),
        ..FrustumParams::default()
    };
    if config.strategy == Strategy::GreedyCf {
        config.frustum.validate()?;
    }

    let result = select(&traj, &config)?;
    let total = result.total_utility();
    let summary = match total {
        Some(t) => format!(
            "selected {} of {} views, total utility {t}",
            result.k,
            traj.len()
        ),
        None => format!("selected {} of {} views", result.k, traj.len()),
    };

    let doc = SelectionDocument::new(
        result,
        Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command_line: std::env::args().collect(),
            config,
            inputs,
            outputs: args.out.iter().map(|p| p.display().to_string()).collect(),
            duration_seconds: started.elapsed().as_secs_f64(),
        },
    );
    let body = doc.to_json();
    write_output(args.out.as_deref(), body.as_bytes())?;
    if args.out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(0)
}

fn cmd_matrix(args: MatrixArgs) -> Result<u8, Failure> {
    let w = weights(&args.input)?;
    let (traj, _) = load_input(&args.input)?;
    let m = build_matrix(&traj, &w)?;
    let mut buf = Vec::new();
    m.write_csv(&mut buf)
        .map_err(|e| Failure::Internal(e.to_string()))?;
    write_output(args.out.as_deref(), &buf)?;
    Ok(0)
}

fn cmd_check(args: CheckArgs) -> Result<u8, Failure> {
    let kind = match args.utility {
        UtilityArg::Df => UtilityKind::Df,
        UtilityArg::Dpp => UtilityKind::Dpp,
        UtilityArg::Cf => UtilityKind::Cf,
    };
    let report: PropertyReport = match args.suite {
        Suite::Submodular => {
            oracle::submodularity_suite(kind, args.trials.unwrap_or(10_000), args.seed)?
        }
        Suite::Monotone => {
            oracle::monotonicity_suite(kind, args.trials.unwrap_or(10_000), args.seed)?
        }
        Suite::Approx => oracle::approximation_suite(args.trials.unwrap_or(200), args.seed)?,
        Suite::DppDense => oracle::dpp_dense_suite(args.trials.unwrap_or(100), args.seed)?,
    };
    let mut body =
        serde_json::to_string_pretty(&report).map_err(|e| Failure::Internal(e.to_string()))?;
    body.push('\n');
    write_output(args.out.as_deref(), body.as_bytes())?;
    eprintln!(
        "{}: {} instances, {} skipped, {} violations (max {})",
        report.property,
        report.instances_tested,
        report.skipped,
        report.violation_count,
        report.max_violation
    );
    if report.holds {
        Ok(0)
    } else {
        if let Some(v) = report.violations.first() {
            let witness = serde_json::to_string(v).unwrap_or_default();
            eprintln!("witness: {witness}");
        }
        Ok(exit::PROPERTY)
    }
}
