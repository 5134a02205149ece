//! Replicated runs over a list of configs, executed on a thread pool.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::run::Simulation;
use crate::error::{BanditError, Result};

/// One run of a sweep. Failed runs carry the error and no metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config_index: usize,
    pub config_hash: String,
    pub replicate: u64,
    pub seed: u64,
    pub rounds: u64,
    pub final_acr: Option<f64>,
    pub final_mismatch: Option<f64>,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

impl SweepRow {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        } == Self {
            wall_time_s: 0.0,
            ..other.clone()
        }
    }
}

fn run_one(config: &RunConfig, index: usize, replicate: u64) -> SweepRow {
    let seed = config.seed.wrapping_add(replicate);
    let start = Instant::now();
    let outcome = config.with_seed(seed).and_then(|mut c| {
        c.keep_rounds = false;
        Simulation::new(c)?.finish()
    });
    let wall_time_s = start.elapsed().as_secs_f64();
    let mut row = SweepRow {
        config_index: index,
        config_hash: config.hash(),
        replicate,
        seed,
        rounds: 0,
        final_acr: None,
        final_mismatch: None,
        wall_time_s,
        error: None,
    };
    match outcome {
        Ok(out) => {
            row.rounds = out.rounds;
            row.final_acr = out.acr;
            row.final_mismatch = out.mismatch;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Runs every config `replicates` times with seeds `seed + r`, on `jobs`
/// threads. Rows come back in (config, replicate) order.
pub fn sweep(configs: &[RunConfig], replicates: u64, jobs: usize) -> Result<Vec<SweepRow>> {
    if replicates == 0 || jobs == 0 {
        return Err(BanditError::InvalidParameter(
            "replicates and jobs must be positive".into(),
        ));
    }
    let tasks: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|i| (0..replicates).map(move |r| (i, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| BanditError::InvalidParameter(e.to_string()))?;
    Ok(pool.install(|| tasks.par_iter().map(|&(i, r)| run_one(&configs[i], i, r)).collect()))
}

pub fn write_summary(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_to<W: std::io::Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::expand_grid;
    use crate::harness::run::run;

    const BASE: &str =
        "schedule.t0 = 3\nschedule.stages = 4\nschedule.eta0 = 0.05\nschedule.noise0 = 1e-3\npolicy.omega = 1\n";

    #[test]
    fn single_config_matches_run() {
        let config = RunConfig::from_text(&format!("{BASE}policy.c = 0.1\nseed = 4\n")).unwrap();
        let rows = sweep(std::slice::from_ref(&config), 1, 1).unwrap();
        let direct = run(config).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].seed, 4);
        assert_eq!(rows[0].final_acr, direct.acr);
        assert_eq!(rows[0].rounds, direct.rounds);
    }

    #[test]
    fn counts_and_determinism() {
        let configs = expand_grid(&format!("{BASE}policy.c = 0.05 | 0.1\n")).unwrap();
        let a = sweep(&configs, 3, 2).unwrap();
        let b = sweep(&configs, 3, 1).unwrap();
        assert_eq!(a.len(), 6);
        assert!(a.iter().zip(&b).all(|(x, y)| x.same_outcome(y)));
        assert_eq!(a.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn failures_are_recorded() {
        let configs = vec![RunConfig::from_text(&format!(
            "{BASE}policy.c = 0.1\nenv = dataset\nenv.path = /nonexistent/data.csv\nmodel = linear\n"
        ))
        .unwrap()];
        let rows = sweep(&configs, 2, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.error.is_some()));
    }
}
