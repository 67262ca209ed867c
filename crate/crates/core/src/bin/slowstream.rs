use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use slowstream::config::ExperimentConfig;
use slowstream::gating::AbstractionLibrary;
use slowstream::harness::{
    self, EPSILON_C_GRID,
};
use slowstream::stream_env::StreamSpec;

#[derive(Parser)]
#[command(name = "slowstream", about = "Curiosity-driven slow-feature learning over observation streams", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (JSON); SLOWSTREAM_* env vars override top-level keys.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Added to every trial seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    /// Worker count (overrides the config; 0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured trials and write logs and the summary.
    Run(CommonArgs),
    /// Sweep the swap threshold grid over sigma and over nu/tau,
    /// estimating the point-of-no-return threshold per point.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Sigma values for table1.csv.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.0001, 0.0009, 0.003, 0.008])]
        sigma_grid: Vec<f64>,
        /// Learning-rate values for table2.csv.
        #[arg(long, value_delimiter = ',', default_values_t = [0.02, 0.03, 0.04, 0.05])]
        nu_grid: Vec<f64>,
        /// Batch-size values for table2.csv.
        #[arg(long, value_delimiter = ',', default_values_t = [30.0, 50.0, 100.0])]
        tau_grid: Vec<f64>,
        /// Swap thresholds per sweep point (defaults to the full grid).
        #[arg(long, value_delimiter = ',')]
        epsilon_c_grid: Option<Vec<f64>>,
    },
    /// Run a saved abstraction library against a stream and report
    /// novelty verdicts, slowness, and latent correlations.
    Eval {
        /// Persisted library (JSON).
        #[arg(long)]
        library: PathBuf,
        /// Stream spec (JSON), e.g. '{"kind":"osc","family":"x1"}'.
        #[arg(long)]
        stream: String,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, ExitCode> {
    if !args.config.exists() {
        eprintln!("config not found: {}", args.config.display());
        return Err(ExitCode::from(2));
    }
    let mut config = ExperimentConfig::load(&args.config).map_err(|e| {
        eprintln!("invalid config: {e}");
        ExitCode::from(2)
    })?;
    if args.jobs.is_some() {
        config.jobs = args.jobs;
    }
    Ok(config)
}

fn run(args: CommonArgs) -> ExitCode {
    let config = match load_config(&args) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match harness::run_and_write(&config, &args.out, args.seed_offset) {
        Ok(summary) => {
            let frozen: usize = summary.trials.iter().map(|t| t.abstraction_count).sum();
            println!(
                "{} trials, {} abstractions frozen, outcomes old/new/other = {}/{}/{}",
                summary.trials.len(),
                frozen,
                summary.outcome_counts.old_optimal,
                summary.outcome_counts.new_optimal,
                summary.outcome_counts.other,
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            ExitCode::FAILURE
        }
    }
}

fn sweep(
    args: CommonArgs,
    sigma_grid: Vec<f64>,
    nu_grid: Vec<f64>,
    tau_grid: Vec<f64>,
    epsilon_c_grid: Option<Vec<f64>>,
) -> ExitCode {
    if sigma_grid.is_empty() && nu_grid.is_empty() && tau_grid.is_empty() {
        eprintln!("empty sweep grid");
        return ExitCode::FAILURE;
    }
    let config = match load_config(&args) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if config.swap.is_none() {
        eprintln!("invalid config: swap — sweep needs a swap schedule");
        return ExitCode::from(2);
    }
    let grid = epsilon_c_grid.unwrap_or_else(|| EPSILON_C_GRID.to_vec());
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("cannot create {}: {e}", args.out.display());
        return ExitCode::FAILURE;
    }
    if !sigma_grid.is_empty() {
        let rows = match harness::sweep_sigma(&config, &sigma_grid, &grid) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("sigma sweep failed: {e}");
                return ExitCode::FAILURE;
            }
        };
        for (sigma, result) in &rows {
            match result.epsilon_d {
                Some(e) => println!("sigma={sigma}: epsilon_d={e:.4}"),
                None => println!("sigma={sigma}: epsilon_d out of grid"),
            }
        }
        let mut file = match std::fs::File::create(args.out.join("table1.csv")) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("cannot write table1.csv: {e}");
                return ExitCode::FAILURE;
            }
        };
        if let Err(e) = harness::write_table1(&mut file, &rows) {
            eprintln!("cannot write table1.csv: {e}");
            return ExitCode::FAILURE;
        }
        if let Err(e) = write_points_json(&args.out.join("table1_points.json"), &rows) {
            eprintln!("cannot write table1_points.json: {e}");
            return ExitCode::FAILURE;
        }
    }
    let mut table2 = Vec::new();
    for (param, values) in [("nu", &nu_grid), ("tau", &tau_grid)] {
        if values.is_empty() {
            continue;
        }
        match harness::sweep_param(&config, param, values, &grid) {
            Ok(rows) => {
                for (value, result) in rows {
                    match result.epsilon_d {
                        Some(e) => println!("{param}={value}: epsilon_d={e:.4}"),
                        None => println!("{param}={value}: epsilon_d out of grid"),
                    }
                    table2.push((param.to_string(), value, result));
                }
            }
            Err(e) => {
                eprintln!("{param} sweep failed: {e}");
                return ExitCode::FAILURE;
            }
        }
    }
    if !table2.is_empty() {
        let mut file = match std::fs::File::create(args.out.join("table2.csv")) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("cannot write table2.csv: {e}");
                return ExitCode::FAILURE;
            }
        };
        if let Err(e) = harness::write_table2(&mut file, &table2) {
            eprintln!("cannot write table2.csv: {e}");
            return ExitCode::FAILURE;
        }
        let rows: Vec<(f64, harness::SweepResult)> =
            table2.into_iter().map(|(_, v, r)| (v, r)).collect();
        if let Err(e) = write_points_json(&args.out.join("table2_points.json"), &rows) {
            eprintln!("cannot write table2_points.json: {e}");
            return ExitCode::FAILURE;
        }
    }
    ExitCode::SUCCESS
}

/// Per-point outcome tallies behind the table CSVs, for plotting and
/// debugging.
fn write_points_json(
    path: &std::path::Path,
    rows: &[(f64, harness::SweepResult)],
) -> std::io::Result<()> {
    let value: Vec<serde_json::Value> = rows
        .iter()
        .map(|(v, r)| {
            serde_json::json!({
                "value": v,
                "epsilon_d": r.epsilon_d,
                "points": r.points,
            })
        })
        .collect();
    std::fs::write(path, serde_json::to_string_pretty(&value).expect("serializes"))
}

fn eval(library: PathBuf, stream: String, samples: usize, seed: u64) -> ExitCode {
    if !library.exists() {
        eprintln!("library not found: {}", library.display());
        return ExitCode::from(2);
    }
    let library = match AbstractionLibrary::load(&library) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("invalid library: {e}");
            return ExitCode::from(2);
        }
    };
    let spec: StreamSpec = match serde_json::from_str(&stream) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("invalid stream spec: {e}");
            return ExitCode::from(2);
        }
    };
    match harness::evaluate_library(&library, &spec, samples, seed) {
        Ok(reports) => {
            for report in &reports {
                println!("{}", serde_json::to_string(report).expect("report serializes"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("eval failed: {e}");
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Sweep { common, sigma_grid, nu_grid, tau_grid, epsilon_c_grid } => {
            sweep(common, sigma_grid, nu_grid, tau_grid, epsilon_c_grid)
        }
        Command::Eval { library, stream, samples, seed } => eval(library, stream, samples, seed),
    }
}
