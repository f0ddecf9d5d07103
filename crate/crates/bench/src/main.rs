use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use satmarl_bench::runner::{run_dir, MANIFEST_FILE};
use satmarl_bench::{compare_variants, export_plot_data, read_metrics, run_experiment, BenchError, ExperimentConfig, RunManifest, Variant};
use satmarl_core::llm::LlmEndpointConfig;

#[derive(Parser)]
#[command(name = "satmarl", version, about = "Run, compare and export UAV-satellite MARL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one variant and write metrics, checkpoint and manifest.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// llm_marl, recurrent_marl, acyclic_marl or greedy
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        episodes: Option<u64>,
        /// Chat-completion base URL; without it the stub answers.
        #[arg(long)]
        llm_endpoint: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Summarize manifests (files or run directories).
    Compare {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        /// Where to write the structured summary.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Smoothed learning curves from one or more metrics logs.
    Export {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, default_value_t = satmarl_bench::export::SMOOTHING_WINDOW)]
        window: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn manifest_path(p: PathBuf) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p
    }
}

fn write_or_print(text: &str, output: Option<PathBuf>) -> Result<(), BenchError> {
    match output {
        Some(path) => std::fs::write(&path, text).map_err(|e| BenchError::OutputUnwritable(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main_inner(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Run { config, seed, variant, episodes, llm_endpoint, output } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if let Some(e) = episodes {
                cfg.episodes = e;
            }
            if let Some(url) = llm_endpoint {
                let base = cfg.llm.endpoint.take().unwrap_or_default();
                cfg.llm.endpoint = Some(LlmEndpointConfig { base_url: url, ..base });
            }
            if let Some(o) = output {
                cfg.output_dir = o;
            }
            cfg.validate()?;
            let manifest = run_experiment(&cfg)?;
            println!("{}", run_dir(&cfg).join(MANIFEST_FILE).display());
            if let Some(s) = manifest.summary {
                println!("final-window reward {:.6} over {} episodes", s.final_window_reward, s.episodes);
            }
            Ok(())
        }
        Command::Compare { manifests, output } => {
            let loaded = manifests.into_iter().map(|p| RunManifest::load(&manifest_path(p))).collect::<Result<Vec<_>, _>>()?;
            let cmp = compare_variants(&loaded)?;
            print!("{}", cmp.to_text());
            if let Some(path) = output {
                write_or_print(&serde_json::to_string_pretty(&cmp).expect("summary serializes"), Some(path))?;
            }
            Ok(())
        }
        Command::Export { logs, window, output } => {
            let mut records = Vec::new();
            for p in logs {
                records.extend(read_metrics(&p)?);
            }
            write_or_print(&export_plot_data(&records, window), output)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
