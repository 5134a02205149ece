use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stagewise_bandit::harness::logio::{RunMetadata, META_FILE};
use stagewise_bandit::harness::run::{build_environment, build_model, build_references};
use stagewise_bandit::harness::sweep::{write_summary, write_summary_to};
use stagewise_bandit::harness::{expand_grid, read_log, resume_from, run_to_dir, sweep, Checkpoint, RunConfig};
use stagewise_bandit::metrics::{
    average_cumulative_regret, expected_regret, mismatching_rate, progressive_validation_loss,
};
use stagewise_bandit::Result;

#[derive(Parser)]
#[command(
    name = "stagewise-bandit",
    version,
    about = "Stage-wise SGD contextual bandit simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its log, metadata, stage table and checkpoint.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every grid point of a config `replicates` times.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        replicates: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Summary CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute metrics for a round log.
    Metrics {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        ref_checkpoint: Option<PathBuf>,
    },
    /// Continue a run from its checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn cmd_run(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = RunConfig::from_file(config)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s)?;
    }
    let dir = out
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", &cfg.hash()[..12], cfg.seed)));
    let done = run_to_dir(cfg, &dir)?;
    report(&done.paths.dir, done.rounds, done.acr, done.mismatch);
    Ok(())
}

fn report(dir: &Path, rounds: u64, acr: Option<f64>, mismatch: Option<f64>) {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
    println!(
        "dir={} rounds={rounds} acr={} mismatch={}",
        dir.display(),
        fmt(acr),
        fmt(mismatch)
    );
}

fn cmd_sweep(config: &Path, replicates: u64, jobs: usize, out: Option<PathBuf>) -> Result<()> {
    let configs = expand_grid(&std::fs::read_to_string(config)?)?;
    let rows = sweep(&configs, replicates, jobs)?;
    match out {
        Some(p) => write_summary(&p, &rows)?,
        None => write_summary_to(std::io::stdout().lock(), &rows)?,
    }
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "run config={} seed={} failed: {}",
            r.config_index,
            r.seed,
            r.error.as_deref().unwrap_or_default()
        );
    }
    Ok(())
}

fn cmd_metrics(log_path: &Path, ref_checkpoint: Option<PathBuf>) -> Result<()> {
    let log = read_log(log_path)?;
    let t = log.len();
    let mut rows: Vec<(&str, f64)> = vec![("rounds", t as f64)];
    if t > 0 {
        rows.push(("acr", average_cumulative_regret(&log, t)?));
        if let Ok(pvl) = progressive_validation_loss(&log, t) {
            rows.push(("pvl", pvl));
        }
    }
    let meta_path = log_path.parent().unwrap_or(Path::new(".")).join(META_FILE);
    if meta_path.exists() && t > 0 {
        let config = RunMetadata::load(&meta_path)?.run_config()?;
        let env = build_environment(&config)?;
        let model = build_model(&config, env.as_ref())?;
        if env.has_analytic_means() {
            rows.push(("expected_regret", expected_regret(&log, env.as_ref())?));
        }
        let references = match ref_checkpoint {
            Some(p) => Some(vec![Checkpoint::load(&p)?.x()?]),
            None => build_references(&config, env.as_ref(), &model)?,
        };
        if let Some(refs) = references {
            rows.push(("mismatch", mismatching_rate(&log, &model, &refs, env.as_ref())?));
        }
    }
    let mut out = std::io::stdout().lock();
    writeln!(out, "metric,value")?;
    for (k, v) in rows {
        writeln!(out, "{k},{v}")?;
    }
    Ok(())
}

fn cmd_resume(checkpoint: &Path) -> Result<()> {
    let done = resume_from(checkpoint, None)?;
    if !done.advanced {
        eprintln!("run already complete; nothing to do");
    }
    report(&done.paths.dir, done.rounds, done.acr, done.mismatch);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, out),
        Command::Sweep {
            config,
            replicates,
            jobs,
            out,
        } => cmd_sweep(&config, replicates, jobs, out),
        Command::Metrics { log, ref_checkpoint } => cmd_metrics(&log, ref_checkpoint),
        Command::Resume { checkpoint } => cmd_resume(&checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
