use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use tvstab_cli::config::{parse_param, ExperimentConfig};
use tvstab_cli::{list_experiments, run, CliError};

/// Runs one named stability experiment and writes its artifacts.
#[derive(Parser, Debug)]
#[command(name = "tvstab", version)]
struct Args {
    /// config file with [run] and [params] sections (a previous manifest.txt works)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// parameter override k=v, repeatable
    #[arg(long = "param", value_name = "K=V")]
    params: Vec<String>,
    /// list experiments and exit
    #[arg(long)]
    list: bool,
}

fn build(args: &Args) -> Result<ExperimentConfig, CliError> {
    let base = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Parse(format!("cannot read {}: {e}", p.display())))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    let mut over = ExperimentConfig { experiment: args.experiment.clone(), output_dir: args.out.clone(), ..Default::default() };
    if let Some(s) = &args.seed {
        over.seed = Some(tvstab_cli::config::parse_seed(s)?);
    }
    for kv in &args.params {
        let (k, v) = parse_param(kv)?;
        over.params.insert(k, v);
    }
    Ok(base.overlay(over))
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if args.list {
        print!("{}", list_experiments());
        return ExitCode::SUCCESS;
    }
    let result = build(&args).and_then(|cfg| run(&cfg));
    match result {
        Ok(rep) => {
            for c in &rep.checks {
                println!("{} {} | {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("artifacts in {}", rep.resolved.output_dir.display());
            if let Some(c) = rep.first_failure() {
                eprintln!("{}", CliError::Assertion { check: c.name.clone(), detail: c.detail.clone() });
            }
            ExitCode::from(rep.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
