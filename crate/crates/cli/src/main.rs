use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;
use sha2::{Digest, Sha256};

use scl_cli::bundle::{emit_report, Bundle, Format};
use scl_cli::commands::run_scenario;
use scl_cli::scenario::{Command, Scenario, SCHEMA_VERSION};

#[derive(Parser, Debug)]
#[command(name = "scl", version, about = "Semiclassical resolvent experiments driven by scenario files")]
struct Args {
    /// One of the scenario commands, or `run` for the list in the config.
    command: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "scl-out")]
    out: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_command(name: &str) -> Option<Command> {
    Command::ALL.into_iter().find(|c| c.name() == name)
}

fn write_manifest(
    out: &Path,
    config_text: &str,
    scenario: &Scenario,
    seed: u64,
    commands: &[Command],
) -> std::io::Result<()> {
    let hash: String = Sha256::digest(config_text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    let manifest = json!({
        "config_sha256": hash,
        "scl_version": env!("CARGO_PKG_VERSION"),
        "schema_version": SCHEMA_VERSION,
        "scenario": scenario.name,
        "seed": seed,
        "commands": commands.iter().map(|c| c.name()).collect::<Vec<_>>(),
        "h_ladder": scenario.h_ladder,
        "tolerances": scenario.tolerances,
        "regions": scenario.regions,
    });
    fs::write(out.join("run-manifest.json"), serde_json::to_string_pretty(&manifest).expect("manifest") + "\n")
}

fn emit(bundle: &Bundle, out: &Path) -> std::io::Result<()> {
    emit_report(bundle, Format::Csv, out)?;
    emit_report(bundle, Format::Json, out)?;
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let requested = if args.command == "run" {
        None
    } else {
        match parse_command(&args.command) {
            Some(c) => Some(c),
            None => {
                eprintln!("scl: unknown command `{}`", args.command);
                return ExitCode::from(2);
            }
        }
    };
    let text = match fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("scl: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let scenario = match Scenario::from_toml(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("scl: {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    if let Some(k) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("scl: {e}");
            return ExitCode::from(2);
        }
    }
    let seed = args.seed.unwrap_or(scenario.seed);
    if let Err(e) = fs::create_dir_all(&args.out) {
        eprintln!("scl: cannot create {}: {e}", args.out.display());
        return ExitCode::from(1);
    }

    let bundle = if requested == Some(Command::Report) {
        let previous = args.out.join("bundle.json");
        match fs::read_to_string(&previous) {
            Ok(t) => match Bundle::from_json(&t) {
                Ok(b) => b,
                Err(e) => {
                    eprintln!("scl: {}: {e}", previous.display());
                    return ExitCode::from(1);
                }
            },
            Err(_) => run_scenario(&scenario, &[], seed),
        }
    } else {
        let commands: Vec<Command> = match requested {
            Some(c) => vec![c],
            None => scenario.commands.clone(),
        };
        run_scenario(&scenario, &commands, seed)
    };

    let commands: Vec<Command> = bundle.results.iter().map(|r| r.command).collect();
    let written = write_manifest(&args.out, &text, &scenario, seed, &commands).and_then(|_| emit(&bundle, &args.out));
    if let Err(e) = written {
        eprintln!("scl: cannot write to {}: {e}", args.out.display());
        return ExitCode::from(1);
    }
    for r in &bundle.results {
        let status = serde_json::to_value(r.status).expect("status");
        match &r.error {
            Some(e) => eprintln!("{:<16} {} ({e})", r.command.name(), status.as_str().unwrap_or_default()),
            None => eprintln!("{:<16} {}", r.command.name(), status.as_str().unwrap_or_default()),
        }
    }
    if bundle.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
