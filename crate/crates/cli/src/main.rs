use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qsd_cli::{
    cmd_simulate, cmd_solve, cmd_verify_with, CommandError, ProblemConfig, SimKind, Verdict,
};

#[derive(Parser)]
#[command(
    name = "qsd",
    version,
    about = "Quasistationary distributions and ergodic control on boxes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Problem configuration (key = value text or JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory [default: `output.dir` from the config, else "out"].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Killed,
    #[value(name = "Y")]
    Y,
    #[value(name = "Z")]
    Z,
}

#[derive(Subcommand)]
enum Command {
    /// Principal eigenpairs, potentials and drifts: fields.csv, summary.json.
    Solve(Common),
    /// Full check suite: report.json; exit code 1 if any check fails.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Path count of the quasistationary-start ensemble.
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Ensemble statistics: survival.csv, histogram.csv, costs.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "killed")]
        kind: Kind,
        /// Killed paths, or independent long controlled paths.
        #[arg(long)]
        paths: Option<usize>,
    },
}

fn load(common: &Common) -> Result<(ProblemConfig, PathBuf), CommandError> {
    let mut config = ProblemConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.sim.seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((config, out))
}

fn run(cli: Cli) -> Result<bool, CommandError> {
    match cli.command {
        Command::Solve(common) => {
            let (config, out) = load(&common)?;
            let s = cmd_solve(&config, Some(&out))?;
            println!(
                "lambda = {:.12} (adjoint {:.12})",
                s.lambda, s.lambda_adjoint
            );
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            Ok(true)
        }
        Command::Verify { common, paths } => {
            let (mut config, out) = load(&common)?;
            if let Some(p) = paths {
                config.sim.paths = p;
            }
            let report = cmd_verify_with(&config, Some(&out), |r| {
                let verdict = match r.verdict {
                    Verdict::Pass => "PASS",
                    Verdict::Fail => "FAIL",
                    Verdict::Skip => "SKIP",
                };
                println!("[{verdict}] {:>2} {} {}", r.id, r.name, r.detail);
            })?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            Ok(report.all_passed)
        }
        Command::Simulate {
            common,
            kind,
            paths,
        } => {
            let (config, out) = load(&common)?;
            let kind = match kind {
                Kind::Killed => SimKind::Killed,
                Kind::Y => SimKind::Y,
                Kind::Z => SimKind::Z,
            };
            let s = cmd_simulate(&config, kind, paths, Some(&out))?;
            for line in &s.lines {
                println!("{line}");
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
