//! Command-line front end for the bi-monomeric Becker-Döring toolkit.
//!
//! Exit codes: 0 on success, 1 when a run fails or breaks an invariant
//! (a `diagnostic.json` is written), 2 for usage and config errors.

mod commands;
mod config;
mod output;

use clap::{Args, Parser, Subcommand};
use commands::{Job, Status};
use output::{Format, Output};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bimono", version, about = "Bi-monomeric Becker-Döring simulations and reduced models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; its keys override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset (see `bimono presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, env = "BIMONO_OUT_DIR", default_value = "bimono-out")]
    out: PathBuf,
    /// Format of tabular output.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Full discrete system over many cycles.
    Simulate(Common),
    /// One Lotka-Volterra cycle: stage times, displacement and diffusion.
    Lv(Common),
    /// Continuum advection-diffusion limit driven by an LV signal.
    Pde(Common),
    /// Fixed point of the cluster-profile map and the Phase II envelope.
    Semigroup(Common),
    /// Stationary boundary layer and the constant A.
    Blayer(Common),
    /// Phase III cycle-to-cycle decay of the rescaled energy.
    Phase3 {
        #[command(flatten)]
        common: Common,
        /// Only report the spectral constants.
        #[arg(long)]
        spectral: bool,
    },
    /// Phase IV free-boundary parabolic limit.
    Phase4(Common),
    /// Linearized spectrum at the steady state and the damping time.
    Stability(Common),
    /// Run one command over several epsilon values in parallel.
    Sweep(Common),
    /// List the shipped presets.
    Presets,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common, spectral) = match &cli.command {
        Command::Simulate(c) => ("simulate", c, false),
        Command::Lv(c) => ("lv", c, false),
        Command::Pde(c) => ("pde", c, false),
        Command::Semigroup(c) => ("semigroup", c, false),
        Command::Blayer(c) => ("blayer", c, false),
        Command::Phase3 { common, spectral } => ("phase3", common, *spectral),
        Command::Phase4(c) => ("phase4", c, false),
        Command::Stability(c) => ("stability", c, false),
        Command::Sweep(c) => ("sweep", c, false),
        Command::Presets => {
            config::preset_names().for_each(|p| println!("{p}"));
            return ExitCode::SUCCESS;
        }
    };
    if name == "sweep" && common.config.is_none() {
        eprintln!("error: sweep needs --config");
        return ExitCode::from(2);
    }
    let job = match config::layered(name, common.preset.as_deref(), common.config.as_deref())
        .and_then(|v| Job::parse(name, v, spectral))
    {
        Ok(j) => j,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut out = Output::new(&common.out, common.format);
    let fail = |out: &mut Output, diag: serde_json::Value| {
        eprintln!("error: {}", diag["error"].as_str().unwrap_or("run failed"));
        if let Err(e) = out.json("diagnostic", &diag) {
            eprintln!("error: could not write diagnostic: {e}");
        }
        ExitCode::from(1)
    };
    match job.run(&mut out) {
        Ok(Status::Ok) => {
            for p in out.written() {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Ok(Status::Breach(diag)) => fail(&mut out, diag),
        Err(e) => fail(&mut out, serde_json::json!({"command": name, "error": e.to_string()})),
    }
}
