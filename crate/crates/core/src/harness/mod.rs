//! Run configuration, the round loop, checkpoints, on-disk logs and sweeps.

pub mod config;
pub mod logio;
pub mod rng;
pub mod run;
pub mod sweep;

pub use config::{expand_grid, Algorithm, EnvSpec, InitSpec, ReferenceSpec, RunConfig};
pub use logio::{read_log, resume_from, run_to_dir, RunMetadata, RunPaths};
pub use run::{run, Checkpoint, RunOutput, Simulation, StageSummary, StepOutput};
pub use sweep::{sweep, SweepRow};
