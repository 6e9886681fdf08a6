mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::{Overrides, Settings};
use error::CliError;
use output::Run;

/// Green's functions and rotating helical vortex patches on a disc.
///
/// Settings come from `--config FILE` (flat TOML, same keys as the flags)
/// overlaid by flags. `HELIPATCH_THREADS` caps the worker threads.
#[derive(Parser)]
#[command(name = "helipatch", version)]
struct Cli {
    /// TOML file with any of the keys below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    over: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the disc triangulation (nodes.csv, tris.csv).
    Mesh,
    /// Sample the Green's function split at seeded node pairs (green_samples.csv).
    Green,
    /// Solve for the energy maximiser (patch_omega.csv, patch_diag.json).
    Patch,
    /// Maximisers over a list of eps with the fitted slopes (sweep.csv, sweep.json).
    Sweep,
    /// Time evolution or, with --delta, the orbital stability study.
    Evolve {
        /// A patch_diag.json (or patch_eps_*.json) to start from.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Lift a patch to a helical tube (tube.csv, lift.json).
    Lift {
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Run the quick invariant suite (verify.json).
    Verify,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Mesh => "mesh",
            Command::Green => "green",
            Command::Patch => "patch",
            Command::Sweep => "sweep",
            Command::Evolve { .. } => "evolve",
            Command::Lift { .. } => "lift",
            Command::Verify => "verify",
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("HELIPATCH_THREADS") {
        let n: usize = v.parse().map_err(|_| CliError::Usage(format!("HELIPATCH_THREADS must be a count, got {v}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let start = Instant::now();
    init_threads()?;
    let file = match &cli.config {
        Some(p) => Overrides::from_file(p)?,
        None => Overrides::default(),
    };
    let settings = Settings::resolve(&file.overlay(&cli.over), cli.out.clone())?;
    // validate the physics before anything is written
    if !matches!(cli.command, Command::Mesh | Command::Green | Command::Verify)
        && !matches!(cli.command, Command::Evolve { from: Some(_) } | Command::Lift { from: Some(_) })
    {
        settings.params()?;
    }
    let mut out = Run::new(&settings.out)?;
    match &cli.command {
        Command::Mesh => commands::mesh(&settings, &mut out)?,
        Command::Green => commands::green(&settings, &mut out)?,
        Command::Patch => commands::patch(&settings, &mut out)?,
        Command::Sweep => commands::sweep(&settings, &mut out)?,
        Command::Evolve { from } => commands::evolve(&settings, &mut out, from.as_deref())?,
        Command::Lift { from } => commands::lift(&settings, &mut out, from.as_deref())?,
        Command::Verify => commands::verify(&mut out)?,
    }
    let checks = out.finish(cli.command.name(), &settings, start.elapsed().as_secs_f64())?;
    Ok(checks.iter().all(|c| c.pass))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let verify = matches!(cli.command, Command::Verify);
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) if verify => ExitCode::from(1),
        Ok(false) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
