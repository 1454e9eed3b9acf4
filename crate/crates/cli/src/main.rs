//! `sdro` command-line front end.
//!
//! Exit codes: 0 success, 1 output could not be written, 2 bad configuration
//! or input, 3 resource cap exceeded, 4 solver or quadrature failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] sdro::Error),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("cannot write {path}: {message}")]
    Write { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(sdro::Error::Config(_)) => "config",
            CliError::Core(sdro::Error::Input(_)) => "input",
            CliError::Core(sdro::Error::Resource(_)) => "resource",
            CliError::Core(sdro::Error::Solver(_)) => "solver",
            CliError::Core(sdro::Error::Quadrature(_)) => "quadrature",
            CliError::Read { .. } | CliError::Parse { .. } | CliError::Usage(_) => "config",
            CliError::Write { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind() {
            "io" => 1,
            "resource" => 3,
            "solver" | "quadrature" => 4,
            _ => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "sdro", version, about = "Smoothed f-divergence DRO predictors, oracles and experiments")]
struct Cli {
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads (defaults to all cores for Monte-Carlo runs and 1 otherwise).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct McArgs {
    /// JSON configuration file.
    pub config: PathBuf,
    /// Master seed; must agree with a `seed` key in the file if one is present.
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate predictors over a decision grid from a JSON job.
    Predict {
        job: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare the f-divergence dual with the primal oracle on random instances.
    DualityCheck {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value = "kl,burg,pearson-chi2,total-variation,squared-hellinger")]
        divergences: String,
        #[arg(long, default_value = "0.05,0.1,0.5,1")]
        radii: String,
        #[command(flatten)]
        common: Common,
    },
    /// Radius curves R(r) on a uniform grid of [0, r_max].
    Radius {
        #[arg(long, default_value = "kl,burg,pearson-chi2,total-variation,squared-hellinger,le-cam,jensen-shannon")]
        divergences: String,
        #[arg(long, default_value_t = 3.0)]
        r_max: f64,
        #[arg(long, default_value_t = 31)]
        points: usize,
        #[arg(long, default_value_t = sdro::analysis::DEFAULT_STARTS)]
        starts: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-sample bound tables.
    Bounds {
        /// Comma-separated sample sizes.
        #[arg(long)]
        n: String,
        /// Comma-separated radii.
        #[arg(long)]
        r: String,
        /// |Σ| for the finite-support bound.
        #[arg(long)]
        cardinality: Option<usize>,
        /// Smoothing level for the smoothed bound.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        diam: f64,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// `lp` or `wasserstein`.
        #[arg(long, default_value = "lp")]
        metric: String,
        #[command(flatten)]
        common: Common,
    },
    /// Violation frequencies of predictors against the true cost.
    FeasibilityMc(McArgs),
    /// Counterexample scan for KL-DRO and the LP-smoothed predictor.
    Counterexample(McArgs),
    /// Optimizer's-curse comparison of value, solution and uniform events.
    Curse(McArgs),
    /// Disappointment of the empirical predictor on a two-point truth.
    EmpiricalInfeasibility(McArgs),
    /// Print the version.
    Version,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp(None).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({
                "error": e.kind(),
                "exit_code": e.exit_code(),
                "message": e.to_string(),
            });
            eprintln!("{report}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    use commands as c;
    match command {
        Command::Predict { job, common } => c::single_threaded(&common, || c::predict(&job, &common)),
        Command::DualityCheck { seed, instances, divergences, radii, common } => {
            c::single_threaded(&common, || c::duality_check(seed, instances, &divergences, &radii, &common))
        }
        Command::Radius { divergences, r_max, points, starts, common } => {
            c::single_threaded(&common, || c::radius(&divergences, r_max, points, starts, &common))
        }
        Command::Bounds { n, r, cardinality, epsilon, diam, dim, metric, common } => {
            c::single_threaded(&common, || c::bounds(&n, &r, cardinality, epsilon, diam, dim, &metric, &common))
        }
        Command::FeasibilityMc(a) => c::feasibility_mc(&a),
        Command::Counterexample(a) => c::counterexample(&a),
        Command::Curse(a) => c::curse(&a),
        Command::EmpiricalInfeasibility(a) => c::empirical_infeasibility(&a),
        Command::Version => {
            println!("{}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}
