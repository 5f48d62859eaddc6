//! Command-line interface: fit estimators to CSV data, run Monte Carlo
//! experiments, and trace power curves.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical error.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use civkit::montecarlo::{EstimatorSpec, SimConfig};
use civkit::report::{emit, power_curve_csv, sim_summary_csv, FitError, RunReport};
use civkit::{ColumnSchema, Dataset, Error};

#[derive(Parser)]
#[command(name = "civkit", version, about = "Categorical-instrument IV toolkit")]
struct Cli {
    /// Worker threads for simulation commands (fallback: CIVKIT_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one or more estimators to a CSV dataset.
    Fit(FitArgs),
    /// Run a replicated simulation experiment and summarize it.
    Simulate(SimArgs),
    /// Rejection rates of H0: tau = 0 over a grid of true effects.
    Power(PowerArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV path.
    #[arg(long)]
    data: PathBuf,
    /// Outcome column name.
    #[arg(long)]
    y: String,
    /// Endogenous regressor column name.
    #[arg(long)]
    d: String,
    /// Categorical instrument column name.
    #[arg(long)]
    z: String,
    /// Covariate column name (repeatable).
    #[arg(long)]
    x: Vec<String>,
    /// Comma-separated estimators: oracle is unavailable here; use
    /// civ<K> or civ with --k, tsls, jive, ijive, ujive, liml.
    #[arg(long)]
    estimator: String,
    /// Number of clusters for `civ` when not given inline as civ<K>.
    #[arg(long)]
    k: Option<usize>,
    /// Output path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = 2)]
    k0: usize,
    /// Expected observations per category.
    #[arg(long, default_value_t = 20)]
    enz: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    tau0: f64,
    /// Heterogeneous individual effects.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    hetero: bool,
    /// Heterogeneity amplitude.
    #[arg(long, default_value_t = 0.5)]
    het_amplitude: f64,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 20260823)]
    seed: u64,
    /// Comma-separated estimator list (default: the full table suite).
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Also write the first replication's dataset to this CSV path.
    #[arg(long)]
    dump_data: Option<PathBuf>,
}

#[derive(Args)]
struct PowerArgs {
    #[arg(long, allow_negative_numbers = true)]
    tau_min: f64,
    #[arg(long, allow_negative_numbers = true)]
    tau_max: f64,
    #[arg(long)]
    tau_steps: usize,
    #[arg(long, default_value_t = 2)]
    k0: usize,
    #[arg(long, default_value_t = 25)]
    enz: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    hetero: bool,
    #[arg(long, default_value_t = 0.5)]
    het_amplitude: f64,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 20260823)]
    seed: u64,
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn usage_error(msg: &str) -> i32 {
    eprintln!("usage error: {msg}");
    2
}

fn fail(err: &Error) -> i32 {
    eprintln!("error: {err}");
    err.exit_code()
}

fn setup_threads(cli_threads: Option<usize>) -> Option<i32> {
    let threads = cli_threads.or_else(|| {
        std::env::var("CIVKIT_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        if t == 0 {
            return Some(usage_error("--threads must be >= 1"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: {e}");
            return Some(4);
        }
    }
    None
}

/// Parses the fit-command estimator list, resolving a bare `civ` through --k.
fn parse_fit_estimators(list: &str, k: Option<usize>) -> Result<Vec<EstimatorSpec>, String> {
    list.split(',')
        .map(|tok| {
            let t = tok.trim().to_ascii_lowercase();
            if t == "civ" {
                return k
                    .map(EstimatorSpec::Civ)
                    .ok_or_else(|| "estimator `civ` requires --k".to_string());
            }
            if t == "oracle" {
                return Err("the oracle estimator needs known truth; it is only available in `simulate`".to_string());
            }
            civkit::parse_estimator_list(&t)
                .map(|v| v[0])
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn run_fit(args: &FitArgs, command_echo: String) -> i32 {
    let specs = match parse_fit_estimators(&args.estimator, args.k) {
        Ok(s) => s,
        Err(m) => return usage_error(&m),
    };
    let schema = ColumnSchema {
        y: args.y.clone(),
        d: args.d.clone(),
        z: args.z.clone(),
        x: args.x.clone(),
    };
    let start = Instant::now();
    let data = match civkit::load_csv(&args.data, &schema) {
        Ok(d) => d,
        Err(e) => return fail(&e),
    };
    let mut report = RunReport {
        command: command_echo,
        coefficients: vec![],
        errors: vec![],
        warnings: vec![],
        elapsed_ms: 0,
    };
    let mut worst_exit = 0;
    for spec in &specs {
        let result = match spec {
            EstimatorSpec::Civ(k) => civkit::civ_fit(&data, *k),
            EstimatorSpec::Tsls => civkit::tsls_fit(&data),
            EstimatorSpec::Jive1 => civkit::jive1_fit(&data),
            EstimatorSpec::Ijive => civkit::ijive_fit(&data),
            EstimatorSpec::Ujive => civkit::ujive_fit(&data),
            EstimatorSpec::Liml => civkit::liml_fit(&data),
            EstimatorSpec::Oracle => unreachable!("rejected during parsing"),
        };
        match result {
            Ok(fit) => report.push_fit(&fit, &args.x),
            Err(e) => {
                worst_exit = worst_exit.max(e.exit_code());
                report.errors.push(FitError {
                    estimator: spec.name(),
                    message: e.to_string(),
                });
            }
        }
    }
    report.elapsed_ms = start.elapsed().as_millis();
    let rendered = match args.format {
        Format::Json => report.to_json(),
        Format::Csv => report.to_csv(),
    };
    let rendered = match rendered {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    if let Err(e) = emit(args.out.as_deref(), &rendered) {
        return fail(&e);
    }
    worst_exit
}

/// Writes a simulated dataset as CSV that reloads bit-identically: floats use
/// the shortest round-trip decimal form.
fn dump_dataset_csv(path: &std::path::Path, data: &Dataset) -> civkit::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["y", "d", "z", "x1"])?;
    for i in 0..data.n() {
        w.write_record([
            format!("{}", data.y()[i]),
            format!("{}", data.d()[i]),
            data.category_labels()[data.z()[i]].clone(),
            format!("{}", data.x_row(i)[0]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn build_config(
    k0: usize,
    enz: usize,
    tau0: f64,
    hetero: bool,
    het_amplitude: f64,
    reps: usize,
    seed: u64,
) -> SimConfig {
    let mut cfg = SimConfig::table_preset(k0, enz);
    cfg.tau0 = tau0;
    cfg.heterogeneous = hetero;
    cfg.het_amplitude = het_amplitude;
    cfg.replications = reps;
    cfg.seed = seed;
    cfg
}

fn resolve_estimators(arg: &Option<String>) -> Result<Vec<EstimatorSpec>, i32> {
    match arg {
        None => Ok(EstimatorSpec::table_suite()),
        Some(s) => {
            let mut specs = civkit::parse_estimator_list(s)
                .map_err(|e| usage_error(&e.to_string()))?;
            // Allow bare `civ` nowhere here; parse_estimator_list already
            // rejected it. Deduplicate while preserving order.
            let mut seen = Vec::new();
            specs.retain(|s| {
                if seen.contains(s) {
                    false
                } else {
                    seen.push(*s);
                    true
                }
            });
            Ok(specs)
        }
    }
}

fn run_simulate(args: &SimArgs) -> i32 {
    let cfg = build_config(
        args.k0,
        args.enz,
        args.tau0,
        args.hetero,
        args.het_amplitude,
        args.reps,
        args.seed,
    );
    if let Err(e) = cfg.validate() {
        return usage_error(&e.to_string());
    }
    let specs = match resolve_estimators(&args.estimators) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if let Some(dump) = &args.dump_data {
        match civkit::simulate_dgp(&cfg, 0) {
            Ok((data, _)) => {
                if let Err(e) = dump_dataset_csv(dump, &data) {
                    return fail(&e);
                }
            }
            Err(e) => return fail(&e),
        }
    }
    let summary = match civkit::run_replications(&cfg, &specs) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    let rendered = match args.format {
        Format::Csv => sim_summary_csv(&summary),
        Format::Json => serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Numerical(e.to_string())),
    };
    let rendered = match rendered {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    if let Err(e) = emit(args.out.as_deref(), &rendered) {
        return fail(&e);
    }
    0
}

fn run_power(args: &PowerArgs) -> i32 {
    if args.tau_steps < 2 {
        return usage_error("--tau-steps must be at least 2");
    }
    if !(args.tau_min < args.tau_max) {
        return usage_error("--tau-min must be strictly below --tau-max");
    }
    let cfg = build_config(
        args.k0,
        args.enz,
        0.0,
        args.hetero,
        args.het_amplitude,
        args.reps,
        args.seed,
    );
    if let Err(e) = cfg.validate() {
        return usage_error(&e.to_string());
    }
    let specs = match resolve_estimators(&args.estimators) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let grid: Vec<f64> = (0..args.tau_steps)
        .map(|i| {
            args.tau_min
                + (args.tau_max - args.tau_min) * i as f64 / (args.tau_steps - 1) as f64
        })
        .collect();
    let points = match civkit::power_curve(&cfg, &grid, &specs) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    let rendered = match power_curve_csv(&points) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    if let Err(e) = emit(args.out.as_deref(), &rendered) {
        return fail(&e);
    }
    0
}

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    if let Some(code) = setup_threads(cli.threads) {
        std::process::exit(code);
    }
    let code = match &cli.command {
        Command::Fit(args) => run_fit(args, argv.join(" ")),
        Command::Simulate(args) => run_simulate(args),
        Command::Power(args) => run_power(args),
    };
    std::process::exit(code);
}
