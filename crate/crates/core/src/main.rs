use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use hc_core::error::{Error, Result};
use hc_core::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "hc", version, about = "Neural history compressor experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the task corpus.
    Gen(Common),
    /// Build and checkpoint the hierarchy.
    Pretrain(Common),
    /// Collapse the top level into the one below it.
    Distill(Common),
    /// Top-code classifier against the parameter-matched plain RNN.
    Classify(Common),
    /// Gradient norm by lag for random plain nets.
    Diagnose(Common),
    /// Whole pipeline plus the acceptance table.
    Repro(Common),
}

fn config(c: &Common) -> Result<ExperimentConfig> {
    let base = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    Ok(base.with_overrides(c.seed, c.out.clone()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(c) => {
            for path in harness::cmd_gen(&config(&c)?)? {
                println!("{}", path.display());
            }
        }
        Command::Pretrain(c) => {
            let cfg = config(&c)?;
            for (seed, s) in cfg.seeds.iter().zip(harness::cmd_pretrain(&cfg)?) {
                println!("seed {seed}: level-1 length ratio {:.4} ({:?})", s.level1_ratio, s.status);
            }
        }
        Command::Classify(c) => {
            let cfg = config(&c)?;
            for (seed, s) in cfg.seeds.iter().zip(harness::cmd_classify(&cfg)?) {
                println!(
                    "seed {seed}: hierarchy {:.4} baseline {:.4} ({} vs {} params)",
                    s.hierarchy_accuracy, s.baseline_accuracy, s.parity.hierarchy_params, s.parity.baseline_params
                );
            }
        }
        Command::Distill(c) => {
            let cfg = config(&c)?;
            for (seed, s) in cfg.seeds.iter().zip(harness::cmd_distill(&cfg)?) {
                println!(
                    "seed {seed}: imitation mse {:.4} distilled accuracy {:.4} (hierarchy {:.4})",
                    s.imitation_mse, s.distilled_accuracy, s.hierarchy_accuracy
                );
            }
        }
        Command::Diagnose(c) => {
            let cfg = config(&c)?;
            let s = harness::cmd_diagnose(&cfg)?;
            for &scale in &cfg.diagnostics.recurrent_scales {
                let latest = s.latest_explosion(scale).map_or("never".to_string(), |l| l.to_string());
                println!("scale {scale}: mean decay ratio {:e}, explosion by lag {latest}", s.mean_ratio(scale));
            }
        }
        Command::Repro(c) => print!("{}", harness::cmd_repro(&config(&c)?)?.table()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut body = json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() });
            if let Error::MissingArtifact(p) | Error::Locked(p) = &e {
                body["path"] = json!(p.display().to_string());
            }
            eprintln!("{body}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
