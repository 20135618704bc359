//! `drsma` command-line driver.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use drsma_core::experiment::{emit_plot, parse_grid, run_sweep, SweepSpec, SweepVar};
use drsma_core::par::ExecMode;
use drsma_core::{ScenarioConfig, Scheme};

#[derive(Parser)]
#[command(name = "drsma", version, about = "GEO + multi-LEO rate-splitting beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write results.csv, per-run traces and an optional plot.
    Run(RunArgs),
    /// Print the default configuration as TOML.
    DefaultConfig,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario configuration (TOML). Defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scheme to run (DRSMA, M_RSMA, M_SDMA); repeatable. Defaults to the config's scheme.
    #[arg(long = "scheme")]
    schemes: Vec<Scheme>,
    /// Sweep as `var=start:step:stop`, var one of P_l_dB, P_g_dB, K, M, sigma_e_deg.
    #[arg(long)]
    sweep: Option<String>,
    /// Channel realizations per grid point.
    #[arg(long, default_value_t = 20)]
    realizations: usize,
    /// Use 100 realizations.
    #[arg(long, conflicts_with = "realizations")]
    full: bool,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write plot.png.
    #[arg(long)]
    plot: bool,
    /// Runs allowed to fail or stop unconverged before the exit code is non-zero.
    #[arg(long, default_value_t = 0)]
    max_failures: usize,
    /// Run realizations one after another.
    #[arg(long)]
    sequential: bool,
    /// Solve each scheme independently instead of warm-starting from its restriction.
    #[arg(long)]
    no_nesting: bool,
}

fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let mut base = match &args.config {
        Some(p) => ScenarioConfig::from_file(p).with_context(|| format!("loading {}", p.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        base.seed = seed;
    }
    let schemes = if args.schemes.is_empty() { vec![base.scheme] } else { args.schemes.clone() };
    let realizations = if args.full { 100 } else { args.realizations };
    let mut spec = SweepSpec::single(base, schemes, realizations);
    if let Some(s) = &args.sweep {
        let Some((var, grid)) = s.split_once('=') else {
            bail!("--sweep expects var=start:step:stop, got `{s}`");
        };
        spec.var = Some(var.trim().parse::<SweepVar>()?);
        spec.values = parse_grid(grid)?;
    }
    spec.exec = if args.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    spec.nested = !args.no_nesting;
    spec.keep_traces = true;

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let result = run_sweep(&spec)?;
    result.write_csv_file(&args.out.join("results.csv"))?;
    for run in &result.runs {
        if let Some(trace) = &run.trace {
            trace.write_csv_file(&args.out.join(format!("trace_{}.csv", run.id())))?;
        }
        if let Some(e) = &run.error {
            eprintln!("{}: {e}", run.id());
        }
    }
    if args.plot {
        emit_plot(&result, &args.out.join("plot.png"))?;
    }
    for p in &result.points {
        println!(
            "{}={} {:<7} mean_mmf={:.4} stderr={:.4} ok={} fail={}",
            result.var,
            p.value,
            p.scheme.name(),
            p.mean(),
            p.stderr(),
            p.n_ok(),
            p.n_fail
        );
    }
    let failures = result.failures();
    if failures > args.max_failures {
        eprintln!("{failures} runs failed or did not converge (allowed {})", args.max_failures);
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(args) => run(args),
        Command::DefaultConfig => {
            print!("{}", ScenarioConfig::default().to_toml_string());
            Ok(ExitCode::SUCCESS)
        }
    };
    res.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
