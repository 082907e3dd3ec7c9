use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use discflow::{Error, Result};
use discflow_cli::config::ExperimentConfig;
use discflow_cli::presets::{preset, PRESETS};
use discflow_cli::{
    cmd_baseline, cmd_compare, cmd_eval_gmm, cmd_render_ising, cmd_sample, cmd_train, exit_code,
    Baseline,
};

#[derive(Parser)]
#[command(name = "discflow", version, about = "Flow-augmented MCMC for discrete targets")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from a named preset; keys in --config override it.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Multiplies iterations, steps and burn-in.
    #[arg(long, global = true)]
    desk_scale: Option<f64>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the flows and write a checkpoint and trace.
    Train,
    /// Run latent chains through a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write samples as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Run a grid baseline: gibbs or discrete-mh.
    Baseline {
        name: String,
        #[arg(long)]
        csv: bool,
    },
    /// Merge results tables under a directory.
    Compare {
        /// Directory to scan; defaults to --out.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Write PGM images of Ising samples.
    RenderIsing {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value_t = 16)]
        max_chains: usize,
    },
    /// Total-variation distance of 2-d samples to the exact target.
    EvalGmm {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of direct flow draws to score as well.
        #[arg(long, default_value_t = 0)]
        direct: usize,
    },
    /// Print the effective configuration.
    ShowConfig,
    /// List presets.
    Presets,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), None) => ExperimentConfig::load(path)?,
        (Some(path), Some(name)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            let mut table: toml::Table = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("config parse: {e}")))?;
            table.insert("preset".into(), toml::Value::String(name.clone()));
            ExperimentConfig::from_toml_str(&toml::to_string(&table).unwrap_or_default())?
        }
        (None, Some(name)) => preset(name)?,
        (None, None) => {
            return Err(Error::Config("pass --config PATH or --preset NAME".into()));
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(f) = cli.desk_scale {
        cfg.desk_scale = f;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.scaled()
}

fn run(cli: Cli) -> Result<()> {
    if matches!(cli.command, Command::Presets) {
        for p in PRESETS {
            println!("{p}");
        }
        return Ok(());
    }
    let cfg = resolve(&cli)?;
    let print = |v: serde_json::Value| println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
    match cli.command {
        Command::Train => {
            let s = cmd_train(&cfg)?;
            print(serde_json::to_value(s).unwrap_or_default());
        }
        Command::Sample { checkpoint, csv } => {
            let o = cmd_sample(&cfg, checkpoint.as_deref(), csv)?;
            print(serde_json::to_value(o.report.row()).unwrap_or_default());
        }
        Command::Baseline { name, csv } => {
            let o = cmd_baseline(&cfg, Baseline::parse(&name)?, csv)?;
            print(serde_json::to_value(o.report.row()).unwrap_or_default());
        }
        Command::Compare { results } => {
            let dir = results.unwrap_or_else(|| cfg.out.clone());
            let rows = cmd_compare(&dir, &cfg.out)?;
            print(serde_json::to_value(rows).unwrap_or_default());
        }
        Command::RenderIsing { samples, max_chains } => {
            for p in cmd_render_ising(&cfg, &samples, &cfg.out, max_chains)? {
                println!("{}", p.display());
            }
        }
        Command::EvalGmm {
            samples,
            checkpoint,
            direct,
        } => {
            let e = cmd_eval_gmm(&cfg, &samples, checkpoint.as_deref(), direct)?;
            print(serde_json::to_value(e).unwrap_or_default());
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()?),
        Command::Presets => {}
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
