use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fddx::harness::{
    frequency_grid, read_results, run_bounds, run_sweep, write_report, write_results, ArraySpec, ConfigError,
    EstimatorSet, ScenarioConfig, SweepResult,
};

const EXIT_INVALID: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "fddx", version, about = "Uplink-to-downlink channel extrapolation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario over a frequency sweep.
    Simulate(RunArgs),
    /// Bounds and analytic quantities only, no Monte-Carlo trials.
    Crlb(RunArgs),
    /// Repeat the sweep for every array size and pilot SNR in `[sweep]`.
    Sweep(RunArgs),
    /// Re-render CSV and CDF files from a stored JSON result.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML scenario file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Hz.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    freq_min: f64,
    /// Hz.
    #[arg(long, default_value_t = 100e6, allow_hyphen_values = true)]
    freq_max: f64,
    #[arg(long, default_value_t = 21)]
    freq_steps: usize,
    #[arg(long, default_value = "ls,lmmse,sage")]
    estimators: String,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

enum Failure {
    Invalid(String),
    Numeric(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => EXIT_INVALID,
            Failure::Numeric(_) => EXIT_NUMERIC,
            Failure::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Numeric(m) | Failure::Io(m) => m,
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn load_config(args: &RunArgs) -> Result<ScenarioConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => ScenarioConfig::from_file(path).map_err(|e| match e {
            ConfigError::Io(m) => Failure::Io(m),
            ConfigError::Invalid(m) => Failure::Invalid(m),
        })?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn emit(result: &SweepResult, out: &Path, stem: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let csv = out.join(format!("{stem}.csv"));
    let json = out.join(format!("{stem}.json"));
    let cdfs = write_report(result, &csv).map_err(|e| io_failure(&csv, e))?;
    write_results(result, &json).map_err(|e| io_failure(&json, e))?;
    log::info!("wrote {} and {} CDF table(s)", csv.display(), cdfs.len());
    for row in &result.rows {
        for e in &row.errors {
            log::warn!("f = {:e} Hz: {e}", row.frequency);
        }
    }
    if result.all_rows_failed() {
        return Err(Failure::Numeric("every frequency row failed".into()));
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Mode {
    Simulate,
    Bounds,
    Grid,
}

fn run(args: RunArgs, mode: Mode) -> Result<(), Failure> {
    let config = load_config(&args)?;
    let freqs = frequency_grid(args.freq_min, args.freq_max, args.freq_steps)
        .map_err(|e| Failure::Invalid(e.to_string()))?;
    let estimators = EstimatorSet::parse(&args.estimators).map_err(|e| Failure::Invalid(e.to_string()))?;
    let invalid = |e: fddx::Error| Failure::Invalid(e.to_string());
    match mode {
        Mode::Simulate => {
            let r = run_sweep(&config, &freqs, args.trials, estimators).map_err(invalid)?;
            emit(&r, &args.out, "results")
        }
        Mode::Bounds => {
            let r = run_bounds(&config, &freqs).map_err(invalid)?;
            emit(&r, &args.out, "crlb")
        }
        Mode::Grid => {
            let arrays = if config.sweep.arrays.is_empty() {
                vec![config.array]
            } else {
                config.sweep.arrays.clone()
            };
            let snrs = if config.sweep.pilot_snr.is_empty() {
                vec![config.pilot_snr]
            } else {
                config.sweep.pilot_snr.clone()
            };
            let mut any_ok = false;
            for ArraySpec { rows, cols } in arrays {
                for &snr in &snrs {
                    let mut c = config.clone();
                    c.array = ArraySpec { rows, cols };
                    c.pilot_snr = snr;
                    let r = run_sweep(&c, &freqs, args.trials, estimators).map_err(invalid)?;
                    match emit(&r, &args.out, &format!("sweep_{rows}x{cols}_snr{snr}")) {
                        Ok(()) => any_ok = true,
                        Err(Failure::Numeric(m)) => log::warn!("{rows}x{cols} at {snr} dB: {m}"),
                        Err(e) => return Err(e),
                    }
                }
            }
            if any_ok {
                Ok(())
            } else {
                Err(Failure::Numeric("every sweep point failed".into()))
            }
        }
    }
}

fn report(input: &Path, out: &Path) -> Result<(), Failure> {
    let result = read_results(input).map_err(|e| io_failure(input, e))?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".into());
    std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let csv = out.join(format!("{stem}.csv"));
    write_report(&result, &csv).map_err(|e| io_failure(&csv, e))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => run(a, Mode::Simulate),
        Command::Crlb(a) => run(a, Mode::Bounds),
        Command::Sweep(a) => run(a, Mode::Grid),
        Command::Report { input, out } => report(&input, &out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fddx: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
