//! Command-line interface: full pipeline runs, individual stages, and the
//! default-config printer.
//!
//! Exit codes: 0 success, 2 config error, 3 artifact-validation error,
//! 4 numeric failure, 1 anything else.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::pipeline::{run_pipeline, run_stage};

#[derive(Parser)]
#[command(
    name = "latent-augment",
    version,
    about = "Latent-space feature augmentation for long-tailed classification"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all stages end to end and write every artifact into OUT.
    Pipeline {
        /// Experiment config (JSON); defaults apply for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Artifact directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's global seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one stage against an existing artifact directory.
    Stage {
        name: StageName,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated augmentation ratios (sweep only), e.g. 0,0.1,0.4.
        #[arg(long)]
        ratios: Option<String>,
    },
    /// Print the built-in default configuration as JSON.
    PrintDefaultConfig,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageName {
    Encode,
    TrainDiffusion,
    Generate,
    Finetune,
    Eval,
    Sweep,
}

impl StageName {
    fn as_str(self) -> &'static str {
        match self {
            StageName::Encode => "encode",
            StageName::TrainDiffusion => "train-diffusion",
            StageName::Generate => "generate",
            StageName::Finetune => "finetune",
            StageName::Eval => "eval",
            StageName::Sweep => "sweep",
        }
    }
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn parse_ratios(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            let t = s.trim();
            t.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad ratio {t:?}")))
                .and_then(|r| {
                    if r >= 0.0 {
                        Ok(r)
                    } else {
                        Err(Error::Config(format!("ratio must be >= 0, got {r}")))
                    }
                })
        })
        .collect()
}

fn configure_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("LATENT_AUGMENT_THREADS") {
        let n: usize = raw.parse().map_err(|_| {
            Error::Config(format!("LATENT_AUGMENT_THREADS must be a number, got {raw:?}"))
        })?;
        if n == 0 {
            return Err(Error::Config("LATENT_AUGMENT_THREADS must be positive".into()));
        }
        // Ignore "already initialized": tests and embedders may have set a pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Pipeline { config, out, seed } => {
            let cfg = load_config(config.as_ref(), seed)?;
            let manifest = run_pipeline(&cfg, &out)?;
            println!(
                "pipeline complete: {} artifacts in {}",
                manifest.artifacts.len(),
                out.display()
            );
            Ok(())
        }
        Command::Stage {
            name,
            config,
            out,
            seed,
            ratios,
        } => {
            let cfg = load_config(config.as_ref(), seed)?;
            let ratio_list = match (&ratios, name) {
                (Some(text), StageName::Sweep) => Some(parse_ratios(text)?),
                (Some(_), _) => {
                    return Err(Error::Config(
                        "--ratios only applies to the sweep stage".into(),
                    ))
                }
                (None, _) => None,
            };
            let manifest = run_stage(name.as_str(), &cfg, &out, ratio_list.as_deref())?;
            println!(
                "stage {} complete: {} artifacts in {}",
                name.as_str(),
                manifest.artifacts.len(),
                out.display()
            );
            Ok(())
        }
        Command::PrintDefaultConfig => {
            let bytes = ExperimentConfig::default().canonical_json();
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

/// Parse args, run, and map errors to exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_parse() {
        assert_eq!(parse_ratios("0,0.1,0.4").unwrap(), vec![0.0, 0.1, 0.4]);
        assert_eq!(parse_ratios(" 1 , 2 ").unwrap(), vec![1.0, 2.0]);
        assert!(parse_ratios("a,b").is_err());
        assert!(parse_ratios("-0.5").is_err());
    }

    #[test]
    fn cli_parses_stage_names() {
        let cli = Cli::try_parse_from([
            "latent-augment",
            "stage",
            "train-diffusion",
            "--out",
            "/tmp/x",
        ])
        .unwrap();
        match cli.command {
            Command::Stage { name, .. } => assert_eq!(name.as_str(), "train-diffusion"),
            _ => panic!("wrong command"),
        }
    }
}
