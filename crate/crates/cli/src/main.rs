use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robust_doa::commands::{self, Context};
use robust_doa::{preset, CliError, CliResult, RunConfig, PRESETS};

/// Robust domain-of-attraction estimation, enlargement and controller
/// synthesis for set-valued discrete-time plants.
///
/// Every run parameter lives in a TOML config; `robust-doa config` prints
/// the defaults with comments omitted, `robust-doa config --preset NAME` a
/// bundled one. Exit codes: 0 success, 2 invalid config or missing
/// artifact, 3 pipeline assertion (e.g. controller leaves the domain),
/// 4 I/O error.
#[derive(Parser)]
#[command(name = "robust-doa", version)]
struct Cli {
    /// Worker threads; results do not depend on it. Defaults to all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Run {
    /// TOML configuration file.
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the negative-definite domains of the configured candidate.
    Ndd(Run),
    /// Largest admissible level set, from the `ndd` artifacts.
    Alpha(Run),
    /// Swarm search over the quadratic-form family (kind = "optimize").
    Optimize(Run),
    /// Fit and verify the controller, from the `ndd` artifacts.
    Controller(Run),
    /// Noisy closed-loop runs, from the `controller` and `alpha` artifacts.
    Simulate(Run),
    /// Every stage in order, with a summary.
    Pipeline(Run),
    /// Rerun a recorded command and compare output hashes.
    Replay {
        /// A `manifest_<command>.json` file.
        manifest: PathBuf,
        /// Fresh directory for the rerun.
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Print the default configuration or a bundled preset.
    Config {
        /// One of: desk-baseline, desk-qstar, desk-optimize, fine-baseline,
        /// fine-qstar, fine-optimize.
        #[arg(long)]
        preset: Option<String>,
    },
}

fn context(run: &Run) -> CliResult<Context> {
    let text = std::fs::read_to_string(&run.config).map_err(|e| CliError::io(&run.config, e))?;
    let mut config = RunConfig::from_toml(&text)?;
    if let Some(dir) = &run.output_dir {
        config.output_dir = dir.clone();
    }
    Context::new(config)
}

fn json_line<T: serde::Serialize>(value: &T) -> String {
    String::from_utf8(robust_doa::output::to_json_bytes(value)).expect("utf-8 json")
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Ndd(run) => {
            let ctx = context(&run)?;
            let ndd = commands::cmd_ndd(&ctx)?;
            println!(
                "kept {} product cells; {} state cells, volume {}",
                ndd.w_mask.count(),
                ndd.x_mask.count(),
                robust_doa::output::fmt_float(ndd.x_mask.volume())
            );
        }
        Command::Alpha(run) => print!("{}", json_line(&commands::cmd_alpha(&context(&run)?)?)),
        Command::Optimize(run) => print!("{}", json_line(&commands::cmd_optimize(&context(&run)?)?)),
        Command::Controller(run) => {
            let record = commands::cmd_controller(&context(&run)?)?;
            println!(
                "{} training pairs; {} violations in {} probes",
                record.training_pairs, record.membership.violations, record.membership.probes
            );
        }
        Command::Simulate(run) => {
            let r = commands::cmd_simulate(&context(&run)?)?;
            println!("{}/{} trajectories converged", r.converged, r.trajectories);
        }
        Command::Pipeline(run) => print!("{}", commands::cmd_pipeline(&context(&run)?)?.summary.render()),
        Command::Replay { manifest, output_dir } => {
            let report = commands::cmd_replay(&manifest, &output_dir)?;
            for name in &report.matched {
                println!("match     {name}");
            }
            for name in &report.mismatched {
                println!("MISMATCH  {name}");
            }
            if let Some(e) = &report.error {
                println!("command reported: {e}");
            }
            if !report.passed() {
                return Err(CliError::Assertion(format!(
                    "{} of {} outputs differ",
                    report.mismatched.len(),
                    report.matched.len() + report.mismatched.len()
                )));
            }
        }
        Command::Config { preset: name } => match name {
            None => print!("{}", RunConfig::default().to_toml()),
            Some(name) => match preset(&name) {
                Some(text) => print!("{text}"),
                None => {
                    let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                    return Err(CliError::Validation(format!(
                        "unknown preset `{name}`; available: {}",
                        names.join(", ")
                    )));
                }
            },
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
