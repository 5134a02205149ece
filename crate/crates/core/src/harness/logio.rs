//! On-disk run artifacts: per-round CSV, JSON metadata sidecar, stage table
//! and checkpoint, plus the drivers that write them.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::run::{noise_assignments, Checkpoint, Simulation, StageSummary};
use crate::error::{BanditError, Result};
use crate::metrics::{RoundRecord, RunLog, Snapshot};

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const META_FILE: &str = "run.meta.json";
pub const STAGES_FILE: &str = "stages.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// File names inside one run's output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn rounds(&self) -> PathBuf {
        self.dir.join(ROUNDS_FILE)
    }

    pub fn meta(&self) -> PathBuf {
        self.dir.join(META_FILE)
    }

    pub fn stages(&self) -> PathBuf {
        self.dir.join(STAGES_FILE)
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join(CHECKPOINT_FILE)
    }
}

/// JSON sidecar describing a run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub checkpoint_version: u32,
    pub algorithm: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub noise_assignments: Option<Vec<usize>>,
    pub rounds: u64,
    pub acr: Option<f64>,
    pub mismatch: Option<f64>,
    pub final_x: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
}

impl RunMetadata {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::from_entries(self.config.clone())
    }
}

/// Streams round records to a CSV file.
pub struct LogWriter {
    inner: csv::Writer<File>,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            inner: csv::Writer::from_path(path)?,
        })
    }

    /// Opens for appending without repeating the header.
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            inner: csv::WriterBuilder::new().has_headers(false).from_writer(file),
        })
    }

    pub fn write(&mut self, record: &RoundRecord) -> Result<()> {
        self.inner.serialize(record)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_log(path: &Path, log: &RunLog) -> Result<()> {
    let mut w = LogWriter::create(path)?;
    for r in log.records() {
        w.write(r)?;
    }
    w.flush()
}

pub fn read_log(path: &Path) -> Result<RunLog> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut log = RunLog::new();
    for (i, row) in reader.deserialize::<RoundRecord>().enumerate() {
        let record = row.map_err(|e| BanditError::Parse {
            path: path.display().to_string(),
            line: i + 2,
            message: e.to_string(),
        })?;
        log.push(record)?;
    }
    Ok(log)
}

/// Keeps the first `rounds` records of a log file.
pub fn truncate_log(path: &Path, rounds: u64) -> Result<()> {
    let log = read_log(path)?;
    let keep = RunLog::from_records(log.records().iter().take(rounds as usize).copied().collect())?;
    write_log(path, &keep)
}

pub fn write_stages(path: &Path, stages: &[StageSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["stage", "rounds", "mean_reward", "mismatch", "objective"])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for s in stages {
        w.write_record([
            s.stage.to_string(),
            s.rounds.to_string(),
            s.mean_reward.to_string(),
            opt(s.mismatch),
            opt(s.objective),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of a run driven to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskRun {
    pub paths: RunPaths,
    pub rounds: u64,
    pub acr: Option<f64>,
    pub mismatch: Option<f64>,
    /// False when a resume found the run already complete.
    pub advanced: bool,
}

fn drive(mut sim: Simulation, paths: &RunPaths, append: bool) -> Result<DiskRun> {
    let keep = sim.config().keep_rounds;
    let mut writer = match (keep, append) {
        (false, _) => None,
        (true, true) => Some(LogWriter::append(&paths.rounds())?),
        (true, false) => Some(LogWriter::create(&paths.rounds())?),
    };
    let every = sim.config().checkpoint_every;
    let total = sim.total_rounds();
    while sim.rounds_done() < total {
        let out = sim.step()?;
        if let Some(w) = writer.as_mut() {
            w.write(&out.record)?;
        }
        if every.is_some_and(|e| out.record.t.is_multiple_of(e)) {
            if let Some(w) = writer.as_mut() {
                w.flush()?;
            }
            sim.checkpoint().save(&paths.checkpoint())?;
        }
    }
    if let Some(w) = writer.as_mut() {
        w.flush()?;
    }
    sim.checkpoint().save(&paths.checkpoint())?;
    write_stages(&paths.stages(), sim.stages())?;
    let config = sim.config();
    let meta = RunMetadata {
        checkpoint_version: super::run::CHECKPOINT_VERSION,
        algorithm: config.algorithm.to_string(),
        seed: config.seed,
        config_hash: config.hash(),
        config: config.entries().clone(),
        noise_assignments: noise_assignments(config)?,
        rounds: sim.rounds_done(),
        acr: sim.acr(),
        mismatch: sim.mismatch(),
        final_x: sim.x().to_vec(),
        snapshots: sim.snapshots().to_vec(),
    };
    std::fs::write(paths.meta(), serde_json::to_vec_pretty(&meta)?)?;
    Ok(DiskRun {
        paths: paths.clone(),
        rounds: sim.rounds_done(),
        acr: sim.acr(),
        mismatch: sim.mismatch(),
        advanced: true,
    })
}

/// Runs a config, writing every artifact into `dir`.
pub fn run_to_dir(config: RunConfig, dir: &Path) -> Result<DiskRun> {
    std::fs::create_dir_all(dir)?;
    drive(Simulation::new(config)?, &RunPaths::new(dir), false)
}

/// Continues the run a checkpoint belongs to, appending to the round log
/// beside it. Rows written after the checkpoint are discarded first. A
/// checkpoint taken after the final round leaves everything untouched.
pub fn resume_from(checkpoint: &Path, expected: Option<&RunConfig>) -> Result<DiskRun> {
    let cp = Checkpoint::load(checkpoint)?;
    let sim = Simulation::from_checkpoint(&cp, expected)?;
    let dir = checkpoint.parent().map(Path::to_path_buf).unwrap_or_default();
    let paths = RunPaths::new(dir);
    if sim.is_finished() {
        return Ok(DiskRun {
            paths,
            rounds: sim.rounds_done(),
            acr: sim.acr(),
            mismatch: sim.mismatch(),
            advanced: false,
        });
    }
    let append = sim.config().keep_rounds && paths.rounds().exists();
    if append {
        truncate_log(&paths.rounds(), cp.rounds_done())?;
    }
    if sim.config().keep_rounds && !append && cp.rounds_done() > 0 {
        return Err(BanditError::Checkpoint(format!(
            "round log {} is missing",
            paths.rounds().display()
        )));
    }
    drive(sim, &paths, append)
}
