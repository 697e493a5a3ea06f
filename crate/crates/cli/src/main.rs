//! `ddclock` command-line runner.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 config error, 3 eigenstate
//! labeling or degeneracy failure, 4 solver failure.

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddclock::exec::with_workers;
use serde_json::Value;

use crate::commands::{meta, Output};
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "ddclock", version, about = "Double-lambda clock transition simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Doubly-dressed eigenvalues, susceptibilities and second-order coefficients (JSON).
    Spectrum(Common),
    /// Coherence time against detuning or drive strength (CSV).
    Scan(Common),
    /// Monte Carlo protocol ensemble (CSV) with fitted coherence.
    Protocol(Common),
    /// Solve the clock condition (JSON).
    Optimize(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name.
    #[arg(long)]
    preset: Option<String>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Integrator step override in ns.
    #[arg(long)]
    dt: Option<f64>,
    /// Output directory; without it the primary artifact goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config trial count.
    #[arg(long)]
    trials: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match (&self.config, &self.preset) {
            (_, Some(name)) => RunConfig::preset(name)?,
            (Some(path), None) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                RunConfig::parse(&text)?
            }
            (None, None) => return Err(CliError::Config("a config file or --preset is required".into())),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(dt) = self.dt {
            cfg.dt_ns = Some(dt);
        }
        if let Some(n) = self.trials {
            cfg.trials = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_outputs(dir: &Path, name: &str, out: &Output, cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let mut sidecar = meta(name, cfg);
    let m = sidecar.as_object_mut().expect("object");
    match out.kind {
        "json" => {
            // JSON artifacts carry their own metadata block
            let mut body: Value = serde_json::from_str(&out.body).expect("command emits valid JSON");
            body.as_object_mut().expect("object").insert("meta".into(), sidecar);
            std::fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(&body).expect("json") + "\n")?;
        }
        _ => {
            let file = format!("{name}.{}", out.kind);
            std::fs::write(dir.join(&file), &out.body)?;
            m.insert("output".into(), Value::String(file));
            m.insert("summary".into(), out.summary.clone());
            std::fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(&sidecar).expect("json") + "\n")?;
        }
    }
    Ok(())
}

type Handler = fn(&mut RunConfig) -> Result<Output, CliError>;

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, common, cmd): (&str, &Common, Handler) = match &cli.command {
        Command::Spectrum(c) => ("spectrum", c, commands::spectrum),
        Command::Scan(c) => ("scan", c, commands::scan),
        Command::Protocol(c) => ("protocol", c, commands::protocol),
        Command::Optimize(c) => ("optimize", c, commands::optimize),
    };
    if common.workers == Some(0) {
        return Err(CliError::Config("--workers must be positive".into()));
    }
    let mut cfg = common.load()?;
    if let Some(w) = cfg.drive().rwa_warning() {
        eprintln!("warning: {w}");
    }
    let out = with_workers(common.workers, || cmd(&mut cfg)).map_err(CliError::Config)??;
    match &common.out {
        Some(dir) => {
            write_outputs(dir, name, &out, &cfg)?;
            eprintln!("{}", serde_json::to_string(&out.summary).expect("json"));
        }
        None => {
            print!("{}", out.body);
            if out.kind != "json" {
                eprintln!("{}", serde_json::to_string(&out.summary).expect("json"));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
