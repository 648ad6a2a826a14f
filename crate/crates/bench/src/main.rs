use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use spibench::config::{GuidanceMode, RunArgs, RunConfig};
use spibench::{output, runner};
use spisketch::matrix_core::{check_blas, Precision};

/// OpenBLAS picks AVX-512 kernels on some virtualized CPUs that return wrong
/// products; unless the user chose a kernel family, rerun pinned to one.
const BLAS_CORE_ENV: &str = "OPENBLAS_CORETYPE";
const BLAS_CORE: &str = "Haswell";

#[derive(Parser)]
#[command(name = "spibench", version, about = "Benchmarks one-pass sketching pipelines on synthetic or file data")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run trials; one CSV row per trial plus mean and std rows.
    Run(RunArgs),
    /// Scan every feasible range size at the budget and mark the oracle and guided rows.
    Sweep(RunArgs),
    /// Write the singular values of the data as index,sigma.
    Spectrum {
        #[command(flatten)]
        args: RunArgs,
        /// Decompose a generated synthetic matrix instead of printing its prescribed spectrum.
        #[arg(long)]
        computed: bool,
    },
    /// Write the storage ledger of the resolved sizes.
    Ledger(RunArgs),
    /// Write one synthetic trial as a SPIM file.
    Export {
        #[command(flatten)]
        args: RunArgs,
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Store entries in binary32.
        #[arg(long)]
        single: bool,
    },
}

fn reexec_with_blas_pin() -> Option<ExitCode> {
    if std::env::var_os(BLAS_CORE_ENV).is_some() {
        return None;
    }
    let exe = std::env::current_exe().ok()?;
    let mut cmd = std::process::Command::new(exe);
    cmd.args(std::env::args_os().skip(1)).env(BLAS_CORE_ENV, BLAS_CORE);
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        let err = cmd.exec();
        eprintln!("warning: could not re-execute with {BLAS_CORE_ENV}={BLAS_CORE}: {err}");
        None
    }
    #[cfg(not(unix))]
    {
        let status = cmd.status().ok()?;
        Some(ExitCode::from(status.code().unwrap_or(1) as u8))
    }
}

fn config(args: RunArgs) -> Result<RunConfig> {
    RunConfig::from_args(&args.with_config_file()?)
}

fn run_and_write(cfg: &RunConfig) -> Result<ExitCode> {
    if cfg.guidance == GuidanceMode::Sweep {
        return sweep_and_write(cfg);
    }
    let outcome = runner::run(cfg)?;
    runner::write_run(cfg, &outcome, output::open(cfg.output_path())?)?;
    if outcome.failures.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    for (t, e) in &outcome.failures {
        eprintln!("trial {t} failed: {e}");
    }
    eprintln!("{} of {} trials failed", outcome.failures.len(), cfg.trials);
    Ok(ExitCode::FAILURE)
}

fn sweep_and_write(cfg: &RunConfig) -> Result<ExitCode> {
    let sw = runner::run_sweep(cfg)?;
    runner::write_sweep(cfg, &sw, output::open(cfg.output_path())?)?;
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    check_blas().context("BLAS self-check failed; set OPENBLAS_CORETYPE to a working kernel family")?;
    match cli.cmd {
        Cmd::Run(args) => run_and_write(&config(args)?),
        Cmd::Sweep(args) => {
            let cfg = RunConfig { guidance: GuidanceMode::Sweep, ..config(args)? };
            sweep_and_write(&cfg)
        }
        Cmd::Spectrum { args, computed } => {
            let cfg = config(args)?;
            let sv = runner::spectrum(&cfg, computed)?;
            runner::write_spectrum(&sv, output::open(cfg.output_path())?)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Ledger(args) => {
            let cfg = config(args)?;
            let led = runner::ledger(&cfg)?;
            log::info!("peak storage: {} double words", led.peak_words());
            led.write_csv(output::open(cfg.output_path())?)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Export { args, trial, single } => {
            let cfg = config(args)?;
            let path: PathBuf = cfg.output.clone().context("export needs --output")?;
            let prec = if single { Precision::Binary32 } else { Precision::Binary64 };
            runner::export(&cfg, trial, prec, &path)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    if let Some(code) = reexec_with_blas_pin() {
        return code;
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
