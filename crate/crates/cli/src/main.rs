use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use latent_scalpel::pipeline::{resolve_out_dir, run_command, RunConfig, COMMANDS};
use latent_scalpel::Error;

/// Find, steer and ablate pass/fail latents in a toy code model.
#[derive(Parser, Debug)]
#[command(name = "latent-scalpel", version, after_help = after_help())]
struct Args {
    /// Pipeline command to run.
    command: String,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Run directory (overrides `out_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
}

fn after_help() -> String {
    format!(
        "Commands, in pipeline order: {}\nExit codes: 0 ok, 2 config error, 3 missing or corrupt artifact, 4 numerical failure.",
        COMMANDS.join(", ")
    )
}

fn run(args: &Args) -> Result<(), Error> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = resolve_out_dir(&cfg, args.out.as_deref());
    run_command(&args.command, &cfg, &out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
