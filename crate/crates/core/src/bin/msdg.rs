use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::error;

use msdg::config::RunConfig;
use msdg::{driver, output};

/// Adaptive multiscale DG solver for high-contrast elliptic problems.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Validate the config, print the resolved parameters and exit.
    #[arg(long)]
    dry_run: bool,
    /// Compute the certified bound and check it; exit 2 on failure.
    #[arg(long)]
    verify: bool,
    /// Only report errors.
    #[arg(long)]
    quiet: bool,
}

const EXIT_VERIFY: u8 = 2;

fn main() -> ExitCode {
    let args = Args::parse();
    let level = if args.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: &Args) -> msdg::error::Result<u8> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.verify {
        cfg.online.certified = true;
    }
    cfg.validate()?;
    if args.dry_run {
        print!("{}", cfg.to_text());
        return Ok(0);
    }
    let (problem, offline, out) = driver::run_adaptive(&cfg)?;
    output::write_outputs(&args.out, &cfg, &problem, &offline, &out, args.verify)?;
    if !args.quiet {
        let last = out.history.last();
        println!(
            "{} iterations, dof {}, e_a {:.3e}, stop: {}",
            last.iteration, last.dof, last.e_a, out.stop_reason
        );
    }
    if args.verify {
        let fails = driver::verification_failures(&problem, &out, 20, cfg.seed);
        if !fails.is_empty() {
            for f in &fails {
                eprintln!("verification: {f}");
            }
            return Ok(EXIT_VERIFY);
        }
        if !args.quiet {
            println!("verification passed");
        }
    }
    Ok(0)
}
