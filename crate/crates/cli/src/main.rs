//! `gatedbias`: run, compare and re-evaluate gated-bias personalization
//! experiments, or generate a synthetic dataset with a planted signal.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gatedbias::config::{Method, PipelineConfig};
use gatedbias::pipeline::{cmd_compare, cmd_eval, cmd_run, cmd_synth, RunReport};
use gatedbias::synth::SynthParams;
use tracing_subscriber::filter::LevelFilter;

#[derive(Parser)]
#[command(name = "gatedbias", version, about = "Structure-gated personalization over a frozen KG scorer")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage for the configured method.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        #[command(flatten)]
        eval: EvalOverrides,
    },
    /// Run base, patientnode and gatedbias under identical seeds.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        eval: EvalOverrides,
    },
    /// Re-evaluate a finished run from its checkpoints.
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
        /// Defaults to the config echoed into the run directory.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        method: Option<Method>,
        #[command(flatten)]
        eval: EvalOverrides,
    },
    /// Write a synthetic dataset with a planted preference signal.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_items: usize,
        #[arg(long, default_value_t = 10)]
        n_attrs_per_group: usize,
        #[arg(long, default_value_t = 100)]
        n_users: usize,
        #[arg(long, default_value_t = 1.0)]
        preference_skew: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Flags that override keys of the `[eval]` table.
#[derive(Args)]
struct EvalOverrides {
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long)]
    percentile: Option<u32>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    n_shuffles: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

impl EvalOverrides {
    fn apply(self, cfg: &mut PipelineConfig) {
        let e = &mut cfg.eval;
        if let Some(v) = self.ks {
            e.ks = v;
        }
        if let Some(v) = self.percentile {
            e.percentile_p = v;
        }
        if let Some(v) = self.epsilon {
            e.epsilon = v;
        }
        if let Some(v) = self.n_shuffles {
            e.n_shuffles = v;
        }
        if let Some(v) = self.seeds {
            e.seeds = v;
        }
    }
}

fn load_config(path: &Path, method: Option<Method>, eval: EvalOverrides) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(path).with_context(|| format!("reading config {}", path.display()))?;
    if let Some(m) = method {
        cfg.method = m;
    }
    eval.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(report: &RunReport) {
    println!("method: {}  (+{} parameters)", report.method, report.parameter_count);
    for (name, m) in &report.summary {
        println!("  {name:<20} {:>10.4} ± {:.4}", m.mean, m.stderr);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            method,
            eval,
        } => {
            let cfg = load_config(&config, method, eval)?;
            let report = cmd_run(&cfg, &out)?;
            print_summary(&report);
            println!("reports written to {}", out.display());
        }
        Command::Compare { config, out, eval } => {
            let cfg = load_config(&config, None, eval)?;
            let cmp = cmd_compare(&cfg, &out)?;
            print!("{}", cmp.table(&cfg.eval.ks));
            println!("query checksum {}", cmp.query_checksum);
        }
        Command::Eval {
            run_dir,
            config,
            method,
            eval,
        } => {
            let path = config.unwrap_or_else(|| run_dir.join("config.toml"));
            let cfg = load_config(&path, method, eval)?;
            let report = cmd_eval(&run_dir, &cfg)?;
            print_summary(&report);
        }
        Command::Synth {
            out,
            n_items,
            n_attrs_per_group,
            n_users,
            preference_skew,
            seed,
        } => {
            let params = SynthParams {
                n_items,
                n_attrs_per_group,
                n_users,
                preference_skew,
                seed,
                ..SynthParams::default()
            };
            let manifest = cmd_synth(&params, &out)?;
            println!(
                "wrote {} (planted: {})",
                out.display(),
                manifest.planted_attributes.join(", ")
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::WARN,
        1 => LevelFilter::INFO,
        _ => LevelFilter::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
