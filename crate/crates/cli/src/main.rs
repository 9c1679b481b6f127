use std::path::PathBuf;

use clap::Parser;
use polyrep_cli::Runner;
use polyrep_core::config::PipelineConfig;

/// Polyrepresentation pipeline runner: staged, config-driven, reproducible.
#[derive(Parser)]
#[command(name = "polyrep", version, about)]
struct Cli {
    /// Pipeline stage to run.
    #[arg(value_parser = polyrep_cli::STAGES)]
    stage: String,

    /// Run configuration (strict JSON; unknown keys abort).
    #[arg(short, long)]
    config: PathBuf,

    /// Run name; artifacts go to <runs-dir>/<run>/<stage>/.
    #[arg(long, default_value = "default")]
    run: String,

    /// Root directory for run artifacts.
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,

    /// Config override as section.key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Rerun the stage even when its inputs are unchanged.
    #[arg(long)]
    force: bool,

    /// Cap the rayon thread pool.
    #[arg(long)]
    threads: Option<usize>,

    /// Restrict train-eval to a comma-separated block subset.
    #[arg(long, value_delimiter = ',')]
    blocks: Option<Vec<String>>,
}

fn run(cli: Cli) -> polyrep_core::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| polyrep_core::Error::invalid(format!("thread pool: {}", e)))?;
    }
    let mut cfg = PipelineConfig::from_path(&cli.config)?;
    for o in &cli.overrides {
        cfg = cfg.with_override(o)?;
    }
    let runner = Runner::new(cfg, &cli.runs_dir, &cli.run, cli.force);
    runner.run_stage(&cli.stage, cli.blocks.as_deref())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e);
        std::process::exit(1);
    }
}
