use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pfsim::io::{self, DriverError, RunConfig};
use pfsim::Execution;

/// Phase-field simulator: conserved order parameter coupled to inverse temperature.
#[derive(Parser, Debug)]
#[command(name = "pfsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration (defaults apply when omitted)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, overriding `[output] dir`
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Random seed, overriding the configured one
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Only report errors
    #[arg(long, global = true)]
    quiet: bool,
    /// Run sweep points and verification samples on one thread
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Integrate the configured run and write ledger and snapshots
    Simulate,
    /// Solve the constrained stationary problem
    Steady,
    /// Run the self-check suite
    Verify,
    /// Run every point of the `[sweep]` section in its own directory
    Sweep,
}

fn load(cli: &Cli) -> Result<(RunConfig, PathBuf), DriverError> {
    let (mut cfg, base) = match &cli.config {
        Some(p) => (
            RunConfig::load(p)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (RunConfig::default(), PathBuf::from(".")),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    Ok((cfg, base))
}

fn execute(cli: &Cli) -> Result<bool, DriverError> {
    let (cfg, base) = load(cli)?;
    let out = cfg.output.dir.clone();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let say = |line: String| {
        if !cli.quiet {
            // a closed pipe is not an error for a batch tool
            let _ = writeln!(std::io::stdout(), "{line}");
        }
    };
    match cli.command {
        Command::Simulate => {
            let r = io::simulate(&cfg, &base, &out)?;
            say(format!(
                "{} steps to t = {}; detector fired: {}; max identity residual {:e}",
                r.steps, r.t_final, r.detector.fired, r.max_identity_residual
            ));
            say(format!(
                "mass drift {:e}, enthalpy drift {:e}, kappa {}",
                r.mass_drift, r.enthalpy_drift, r.kappa
            ));
            if r.kappa_band_violated == Some(true) {
                say("theta left the declared kappa band".into());
            }
            say(format!("output in {}", out.display()));
            Ok(true)
        }
        Command::Steady => {
            let r = io::steady(&cfg, &base, &out)?;
            say(format!(
                "theta_inf = {:?}, mu_inf = {:?}, residual {:e}, psi spread {:e}",
                r.theta_inf, r.mu_inf, r.residual_norm, r.psi_spread
            ));
            say(format!("stability indicator {:e}", r.stability_indicator));
            say(format!("output in {}", out.display()));
            Ok(true)
        }
        Command::Verify => {
            let r = io::run_verify(&cfg, &out, exec)?;
            for c in &r.checks {
                say(format!(
                    "{} {:<26} measured {:e}  tolerance {:e}  ({} samples)",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.tolerance,
                    c.samples
                ));
            }
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            Ok(r.passed)
        }
        Command::Sweep => {
            let r = io::sweep(&cfg, &base, &out, exec)?;
            for p in &r.points {
                match &p.error {
                    None => say(format!("{} ok", p.dir)),
                    Some(e) => eprintln!("{} failed: {e}", p.dir),
                }
            }
            Ok(r.all_ok())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
