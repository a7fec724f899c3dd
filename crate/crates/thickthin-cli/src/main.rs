use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use thickthin_cli::commands::{self, Session, EXIT_OK};
use thickthin_cli::config::RunConfig;

/// Thick-thin decompositions of measures on surfaces.
#[derive(Parser, Debug)]
#[command(name = "thickthin", version)]
struct Cli {
    /// Run configuration (JSON, schema 1).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Skip the axiom gate in `decompose`.
    #[arg(long, global = true)]
    force: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the derived constants.
    Constants,
    /// Write the configured generator's density file.
    Generate,
    /// Check the gradient and cylinder inequalities.
    VerifyAxioms,
    /// Build, verify and export a decomposition.
    Decompose,
    /// Re-verify an existing decomposition.
    Verify {
        #[arg(long)]
        decomposition: Option<PathBuf>,
    },
    /// Summarize the artifacts in the output directory.
    Report,
}

fn load(cli: &Cli) -> Result<Option<RunConfig>> {
    let Some(path) = &cli.config else { return Ok(None) };
    let mut c = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        c.seed = seed;
    }
    Ok(Some(c))
}

fn session(cli: &Cli) -> Result<Session> {
    let config = load(cli)?.context("this command needs --config")?;
    let base = cli
        .config
        .as_ref()
        .and_then(|p| p.parent())
        .map(PathBuf::from)
        .unwrap_or_default();
    Ok(Session::new(config, base, cli.out.clone(), cli.force))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    print!("{}", String::from_utf8(commands::to_json(v)?)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Constants => {
            let c = load(cli)?;
            print_json(&commands::constants(c.as_ref())?)?;
            Ok(EXIT_OK)
        }
        Command::Generate => {
            let g = commands::generate(&session(cli)?)?;
            if let Some(w) = &g.warning {
                eprintln!("warning: {w}");
            }
            print_json(&g)?;
            Ok(EXIT_OK)
        }
        Command::VerifyAxioms => {
            let (a, code) = commands::verify_axioms(&session(cli)?)?;
            println!(
                "gradient: {} violations of {} samples; cylinder: {} violations of {} samples",
                a.gradient.violations, a.gradient.samples.len(), a.cylinder.violations, a.cylinder.samples.len()
            );
            Ok(code)
        }
        Command::Decompose => {
            let s = session(cli)?;
            let o = commands::decompose(&s)?;
            for f in o.failures() {
                eprintln!("{f}");
            }
            if o.decomposition.is_some() {
                print!("{}", commands::report(&s.out)?);
            }
            Ok(o.exit)
        }
        Command::Verify { decomposition } => {
            let s = session(cli)?;
            let path = decomposition.clone().unwrap_or_else(|| s.out.join("decomposition.json"));
            let (r, code) = commands::verify(&s, &path)?;
            for f in r.failures() {
                eprintln!("verifier: {f}");
            }
            println!("verifier: pass {}", r.pass);
            Ok(code)
        }
        Command::Report => {
            let out = match &cli.out {
                Some(o) => o.clone(),
                None => session(cli)?.out,
            };
            print!("{}", commands::report(&out)?);
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
