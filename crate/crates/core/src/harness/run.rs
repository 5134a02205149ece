//! The round loop: context, policy, reward, IPS gradient, update.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, EnvSpec, InitSpec, ReferenceSpec, RunConfig};
use super::rng::{RngState, RngStreams, Stream};
use crate::env::{self, DatasetEnvironment, Environment, LinearEnvironment, ToyEnvironment};
use crate::error::{BanditError, Result};
use crate::metrics::{MismatchCounter, RoundRecord, RunLog, Snapshot};
use crate::model::{ModelFamily, ParamVector, RewardModel};
use crate::optimizer::{sample_noise, sgdscb_offset, sgdscb_rate, RoundCursor, StageSchedule};
use crate::policy::{
    action_distribution, argmax, exploitation_scores, exploration_floor, sample_action, weight_vector, PolicyParams,
    VisitTable,
};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Totals for one completed stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: u64,
    pub rounds: u64,
    pub mean_reward: f64,
    /// Minimum mismatch rate over the reference set within this stage.
    pub mismatch: Option<f64>,
    /// Full-feedback objective at the stage's final parameters.
    pub objective: Option<f64>,
    pub x: Vec<f64>,
}

/// What one call to [`Simulation::step`] produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub record: RoundRecord,
    pub snapshot: Option<Snapshot>,
    pub stage_end: Option<StageSummary>,
}

/// Everything a finished run returns.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub log: RunLog,
    pub stages: Vec<StageSummary>,
    pub final_x: ParamVector,
    pub visits: VisitTable,
    pub rounds: u64,
    pub acr: Option<f64>,
    pub mismatch: Option<f64>,
}

/// Complete mutable state of a run. Floats are stored as raw bits so a
/// resumed run continues bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: String,
    pub config_hash: String,
    pub x_bits: Vec<u64>,
    pub cursor: RoundCursor,
    pub visits: VisitTable,
    pub rng: RngState,
    pub grad_sum_bits: Vec<u64>,
    pub grad_count: u64,
    pub reward_sum_bits: u64,
    pub stage_reward_bits: u64,
    pub stage_rounds: u64,
    pub mismatch_run: Option<MismatchCounter>,
    pub mismatch_stage: Option<MismatchCounter>,
    pub snapshots: Vec<Snapshot>,
    pub stages: Vec<StageSummary>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cp: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(BanditError::Checkpoint(format!(
                "version {} (this build reads {CHECKPOINT_VERSION})",
                cp.version
            )));
        }
        Ok(cp)
    }

    pub fn x(&self) -> Result<ParamVector> {
        ParamVector::new(self.x_bits.iter().map(|&b| f64::from_bits(b)).collect())
    }

    /// Rounds completed when the checkpoint was taken.
    pub fn rounds_done(&self) -> u64 {
        self.cursor.global - 1
    }
}

/// Builds the environment a config describes.
pub fn build_environment(config: &RunConfig) -> Result<Arc<dyn Environment>> {
    Ok(match &config.env {
        EnvSpec::Toy => Arc::new(ToyEnvironment::new()),
        EnvSpec::Linear {
            actions,
            dim,
            contexts,
            seed,
        } => Arc::new(LinearEnvironment::generate(*actions, *dim, *contexts, *seed)?),
        EnvSpec::Dataset {
            path,
            label_column,
            noise,
            actions,
            seed,
        } => Arc::new(env::load_dataset_env(
            path,
            label_column,
            *noise,
            seed.unwrap_or(config.seed),
            *actions,
        )?),
    })
}

/// Rows relabeled at load time, when the environment is a dataset.
pub fn noise_assignments(config: &RunConfig) -> Result<Option<Vec<usize>>> {
    match &config.env {
        EnvSpec::Dataset {
            path,
            label_column,
            noise,
            actions,
            seed,
        } => {
            let env: DatasetEnvironment =
                env::load_dataset_env(path, label_column, *noise, seed.unwrap_or(config.seed), *actions)?;
            Ok(Some(env.relabeled_rows().to_vec()))
        }
        _ => Ok(None),
    }
}

pub fn build_model(config: &RunConfig, env: &dyn Environment) -> Result<RewardModel> {
    let model = match &config.model {
        ModelFamily::ToyTrig => RewardModel::toy_trig(),
        ModelFamily::Linear { link } => RewardModel::linear(env.actions(), env.context_dim(), *link)?,
        ModelFamily::Mlp { hidden } => RewardModel::mlp(env.actions(), env.context_dim(), hidden.clone())?,
    };
    if model.actions() != env.actions() || model.context_dim() != env.context_dim() {
        return Err(BanditError::Config(format!(
            "model `{}` expects {} actions and {} features; environment has {} and {}",
            model.family(),
            model.actions(),
            model.context_dim(),
            env.actions(),
            env.context_dim()
        )));
    }
    Ok(model)
}

/// Reference minimizers for the mismatch rate, if the config names any.
pub fn build_references(
    config: &RunConfig,
    env: &dyn Environment,
    model: &RewardModel,
) -> Result<Option<Vec<ParamVector>>> {
    match &config.reference {
        ReferenceSpec::None => Ok(None),
        ReferenceSpec::Grid { lo, hi, step } => {
            let minima = env::grid_scan_minima(env, model, *lo, *hi, *step)?;
            if minima.is_empty() {
                return Err(BanditError::Config("grid scan found no interior minimum".into()));
            }
            minima
                .iter()
                .map(|m| ParamVector::new(vec![m.x]))
                .collect::<Result<Vec<_>>>()
                .map(Some)
        }
        ReferenceSpec::Checkpoint(path) => Ok(Some(vec![Checkpoint::load(path)?.x()?])),
    }
}

pub struct Simulation {
    config: RunConfig,
    env: Arc<dyn Environment>,
    model: RewardModel,
    policy: PolicyParams,
    schedule: StageSchedule,
    delta_s: u64,
    total_rounds: u64,
    x: Vec<f64>,
    visits: VisitTable,
    cursor: RoundCursor,
    rng: RngStreams,
    grad_sum: Vec<f64>,
    grad_count: u64,
    reward_sum: f64,
    stage_reward: f64,
    stage_rounds: u64,
    mismatch_run: Option<MismatchCounter>,
    mismatch_stage: Option<MismatchCounter>,
    snapshots: Vec<Snapshot>,
    stages: Vec<StageSummary>,
    estimates: Vec<f64>,
    grad: Vec<f64>,
}

impl Simulation {
    pub fn new(config: RunConfig) -> Result<Self> {
        let env = build_environment(&config)?;
        Self::with_environment(config, env)
    }

    /// Uses a caller-supplied environment in place of the one the config names.
    pub fn with_environment(config: RunConfig, env: Arc<dyn Environment>) -> Result<Self> {
        let model = build_model(&config, env.as_ref())?;
        let references = build_references(&config, env.as_ref(), &model)?;
        let mut rng = RngStreams::new(config.seed);
        let x = match &config.init {
            InitSpec::Zeros => vec![0.0; model.n_params()],
            InitSpec::Random => model.init_params(rng.get(Stream::Init)).into_inner(),
            InitSpec::Values(v) => {
                if v.len() != model.n_params() {
                    return Err(BanditError::Shape {
                        what: "model.init",
                        expected: model.n_params(),
                        actual: v.len(),
                    });
                }
                v.clone()
            }
        };
        let mismatch_run = references
            .as_ref()
            .map(|refs| MismatchCounter::new(&model, refs, env.as_ref()))
            .transpose()?;
        Self::assemble(config, env, model, x, rng, mismatch_run)
    }

    fn assemble(
        config: RunConfig,
        env: Arc<dyn Environment>,
        model: RewardModel,
        x: Vec<f64>,
        rng: RngStreams,
        mismatch_run: Option<MismatchCounter>,
    ) -> Result<Self> {
        let k = env.actions();
        let policy = config.policy_params(k)?;
        let schedule = StageSchedule::new(
            config.t0,
            config.upsilon,
            config.stages,
            config.eta0,
            config.noise0,
            config.kappa,
        )?;
        let (delta_s, planned) = match config.algorithm {
            Algorithm::SgdScb => (sgdscb_offset(config.upsilon)?, config.stages),
            _ => (0, schedule.total_rounds()),
        };
        let total_rounds = config.max_rounds.map_or(planned, |m| m.min(planned));
        let n = model.n_params();
        Ok(Self {
            mismatch_stage: mismatch_run.clone(),
            mismatch_run,
            policy,
            schedule,
            delta_s,
            total_rounds,
            x,
            visits: VisitTable::new(k),
            cursor: RoundCursor::start(),
            rng,
            grad_sum: vec![0.0; n],
            grad_count: 0,
            reward_sum: 0.0,
            stage_reward: 0.0,
            stage_rounds: 0,
            snapshots: Vec::new(),
            stages: Vec::new(),
            estimates: vec![0.0; k],
            grad: vec![0.0; n],
            config,
            env,
            model,
        })
    }

    /// Restores a run. When `expected` is given its hash must match the
    /// checkpoint's.
    pub fn from_checkpoint(cp: &Checkpoint, expected: Option<&RunConfig>) -> Result<Self> {
        let config = RunConfig::from_text(&cp.config)?;
        Self::check_hashes(cp, &config, expected)?;
        let env = build_environment(&config)?;
        Self::restore_with_environment(cp, config, env)
    }

    /// Restores a run whose environment was supplied by the caller.
    pub fn from_checkpoint_with_environment(
        cp: &Checkpoint,
        expected: Option<&RunConfig>,
        env: Arc<dyn Environment>,
    ) -> Result<Self> {
        let config = RunConfig::from_text(&cp.config)?;
        Self::check_hashes(cp, &config, expected)?;
        Self::restore_with_environment(cp, config, env)
    }

    fn check_hashes(cp: &Checkpoint, config: &RunConfig, expected: Option<&RunConfig>) -> Result<()> {
        if cp.version != CHECKPOINT_VERSION {
            return Err(BanditError::Checkpoint(format!("version {}", cp.version)));
        }
        if config.hash() != cp.config_hash {
            return Err(BanditError::Checkpoint(
                "embedded config does not match its hash".into(),
            ));
        }
        if let Some(e) = expected {
            if e.hash() != cp.config_hash {
                return Err(BanditError::Checkpoint(
                    "config hash differs from the checkpointed run".into(),
                ));
            }
        }
        Ok(())
    }

    fn restore_with_environment(cp: &Checkpoint, config: RunConfig, env: Arc<dyn Environment>) -> Result<Self> {
        let model = build_model(&config, env.as_ref())?;
        let x = cp.x()?.into_inner();
        if x.len() != model.n_params() || cp.grad_sum_bits.len() != model.n_params() {
            return Err(BanditError::Checkpoint(
                "parameter length does not match the model".into(),
            ));
        }
        if cp.visits.k() != env.actions() {
            return Err(BanditError::Checkpoint(
                "visit table size does not match the environment".into(),
            ));
        }
        let rng = RngStreams::restore(&cp.rng)?;
        let mut sim = Self::assemble(config, env, model, x, rng, cp.mismatch_run.clone())?;
        sim.mismatch_stage = cp.mismatch_stage.clone();
        sim.cursor = cp.cursor;
        sim.visits = cp.visits.clone();
        sim.grad_sum = cp.grad_sum_bits.iter().map(|&b| f64::from_bits(b)).collect();
        sim.grad_count = cp.grad_count;
        sim.reward_sum = f64::from_bits(cp.reward_sum_bits);
        sim.stage_reward = f64::from_bits(cp.stage_reward_bits);
        sim.stage_rounds = cp.stage_rounds;
        sim.snapshots = cp.snapshots.clone();
        sim.stages = cp.stages.clone();
        Ok(sim)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.to_text(),
            config_hash: self.config.hash(),
            x_bits: self.x.iter().map(|v| v.to_bits()).collect(),
            cursor: self.cursor,
            visits: self.visits.clone(),
            rng: self.rng.state(),
            grad_sum_bits: self.grad_sum.iter().map(|v| v.to_bits()).collect(),
            grad_count: self.grad_count,
            reward_sum_bits: self.reward_sum.to_bits(),
            stage_reward_bits: self.stage_reward.to_bits(),
            stage_rounds: self.stage_rounds,
            mismatch_run: self.mismatch_run.clone(),
            mismatch_stage: self.mismatch_stage.clone(),
            snapshots: self.snapshots.clone(),
            stages: self.stages.clone(),
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn environment(&self) -> &Arc<dyn Environment> {
        &self.env
    }

    pub fn model(&self) -> &RewardModel {
        &self.model
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn visits(&self) -> &VisitTable {
        &self.visits
    }

    pub fn cursor(&self) -> RoundCursor {
        self.cursor
    }

    pub fn total_rounds(&self) -> u64 {
        self.total_rounds
    }

    pub fn rounds_done(&self) -> u64 {
        self.cursor.global - 1
    }

    pub fn is_finished(&self) -> bool {
        self.rounds_done() >= self.total_rounds
    }

    pub fn stages(&self) -> &[StageSummary] {
        &self.stages
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    /// `1 - mean reward` so far.
    pub fn acr(&self) -> Option<f64> {
        let t = self.rounds_done();
        (t > 0).then(|| 1.0 - self.reward_sum / t as f64)
    }

    /// Whole-run mismatch rate against the reference set.
    pub fn mismatch(&self) -> Option<f64> {
        self.mismatch_run.as_ref().and_then(MismatchCounter::rate)
    }

    fn stage_length(&self) -> u64 {
        match self.config.algorithm {
            Algorithm::SgdScb => 1,
            _ => self.schedule.stage_length(self.cursor.stage),
        }
    }

    /// Stage index the policy sees.
    fn policy_stage(&self) -> u64 {
        match self.config.algorithm {
            Algorithm::SgdScb => self.cursor.global + self.delta_s,
            _ => self.cursor.stage,
        }
    }

    fn objective(&self) -> Option<f64> {
        if !self.env.has_analytic_means() {
            return None;
        }
        let x = ParamVector::new(self.x.clone()).ok()?;
        env::true_objective(self.env.as_ref(), &self.model, &x).ok()
    }

    /// Plays one round.
    pub fn step(&mut self) -> Result<StepOutput> {
        if self.is_finished() {
            return Err(BanditError::InvalidParameter("run already finished".into()));
        }
        let t = self.cursor.global;
        let stage = self.cursor.stage;
        let k = self.env.actions();
        let id = self.env.sample_context_id(self.rng.get(Stream::Context));
        let d = self.env.context(id).ok_or(BanditError::UnknownContext(id))?;
        self.model.predict_into(&self.x, d, &mut self.estimates);
        let greedy = argmax(&self.estimates).ok_or(BanditError::EmptyEstimates)?;

        let (action, propensity) = match self.config.algorithm {
            Algorithm::SsgdScb | Algorithm::SgdScb => {
                let s = self.policy_stage();
                if !self.model.bounded_output() {
                    self.estimates.iter_mut().for_each(|f| *f = f.clamp(0.0, 1.0));
                }
                let c = if self.config.c_halving {
                    self.config.c / 2f64.powi((stage - 1).min(10) as i32)
                } else {
                    self.config.c
                };
                let params = self.policy.with_c(c);
                let scores = exploitation_scores(&self.estimates, &self.visits, greedy, &params)?;
                let weights = weight_vector(&scores, s, params.omega);
                let dist = action_distribution(&weights, s, &params)?;
                let a = sample_action(&dist, self.rng.get(Stream::Policy));
                let p = dist.propensity(a);
                let floor = exploration_floor(k, s, params.kappa);
                if p < floor - 1e-12 {
                    return Err(BanditError::InvalidParameter(format!(
                        "propensity {p} below the exploration floor {floor} at round {t}"
                    )));
                }
                (a, p)
            }
            Algorithm::EpsilonGreedy => {
                let eps = self.config.epsilon;
                let rng = self.rng.get(Stream::Policy);
                let a = if rng.random::<f64>() < eps {
                    rng.random_range(0..k)
                } else {
                    greedy
                };
                let p = eps / k as f64 + if a == greedy { 1.0 - eps } else { 0.0 };
                (a, p)
            }
            Algorithm::Greedy => (greedy, 1.0),
        };

        let reward = self.env.sample_reward(id, action, self.rng.get(Stream::Reward));
        if !(0.0..=1.0).contains(&reward) {
            return Err(BanditError::RewardOutOfRange(reward));
        }
        self.visits.record_visit(action, greedy)?;

        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let f = self.model.output_gradient_into(&self.x, d, action, &mut self.grad);
        let scale = 2.0 * (f - reward) / propensity;
        let l2 = 2.0 * self.config.l2;
        for ((acc, g), xi) in self.grad_sum.iter_mut().zip(&self.grad).zip(&self.x) {
            *acc += scale * g + l2 * xi;
        }
        self.grad_count += 1;
        if self.grad_count == self.config.window {
            self.apply_update(stage, t)?;
        }

        let record = RoundRecord {
            t,
            stage,
            context: id,
            action,
            propensity,
            reward,
            greedy,
        };
        self.reward_sum += reward;
        self.stage_reward += reward;
        self.stage_rounds += 1;
        if let Some(m) = self.mismatch_run.as_mut() {
            m.observe(id, action)?;
        }
        if let Some(m) = self.mismatch_stage.as_mut() {
            m.observe(id, action)?;
        }

        let snapshot = (t.is_multiple_of(self.config.snapshot_every)).then(|| Snapshot {
            t,
            stage,
            x: self.x.clone(),
            acr: 1.0 - self.reward_sum / t as f64,
            mismatch: self.mismatch(),
            objective: self.objective(),
        });
        if let Some(s) = &snapshot {
            self.snapshots.push(s.clone());
        }

        let stage_len = self.stage_length();
        let stage_end = (self.config.algorithm != Algorithm::SgdScb && self.cursor.n == stage_len).then(|| {
            let summary = StageSummary {
                stage,
                rounds: self.stage_rounds,
                mean_reward: self.stage_reward / self.stage_rounds as f64,
                mismatch: self.mismatch_stage.as_ref().and_then(MismatchCounter::rate),
                objective: self.objective(),
                x: self.x.clone(),
            };
            self.stage_reward = 0.0;
            self.stage_rounds = 0;
            if let Some(m) = self.mismatch_stage.as_mut() {
                m.reset();
            }
            summary
        });
        if let Some(s) = &stage_end {
            self.stages.push(s.clone());
        }
        self.cursor.advance(stage_len);
        Ok(StepOutput {
            record,
            snapshot,
            stage_end,
        })
    }

    fn apply_update(&mut self, stage: u64, t: u64) -> Result<()> {
        let n = self.grad_count as f64;
        let (eta, noise) = match self.config.algorithm {
            Algorithm::SgdScb => (
                sgdscb_rate(t, self.delta_s, self.config.eta0, self.config.upsilon),
                None,
            ),
            _ => (
                self.schedule.learning_rate(stage),
                Some(sample_noise(
                    self.x.len(),
                    stage,
                    self.config.kappa,
                    self.config.noise0,
                    self.rng.get(Stream::Noise),
                )),
            ),
        };
        for (i, (xi, acc)) in self.x.iter_mut().zip(self.grad_sum.iter_mut()).enumerate() {
            let z = noise.as_ref().map_or(0.0, |v| v[i]);
            *xi -= eta * (*acc / n + z);
            *acc = 0.0;
            if !xi.is_finite() {
                return Err(BanditError::NonFinite(i));
            }
        }
        self.grad_count = 0;
        Ok(())
    }

    /// Steps until `rounds_done() == min(t_stop, total_rounds())`, feeding
    /// each output to `sink`.
    pub fn run_until<F>(&mut self, t_stop: u64, mut sink: F) -> Result<()>
    where
        F: FnMut(&StepOutput) -> Result<()>,
    {
        let stop = t_stop.min(self.total_rounds);
        while self.rounds_done() < stop {
            let out = self.step()?;
            sink(&out)?;
        }
        Ok(())
    }

    /// Runs to completion, keeping per-round records when the config asks.
    pub fn finish(mut self) -> Result<RunOutput> {
        let keep = self.config.keep_rounds;
        let mut log = RunLog::new();
        let total = self.total_rounds;
        self.run_until(total, |out| if keep { log.push(out.record) } else { Ok(()) })?;
        for s in &self.snapshots {
            log.push_snapshot(s.clone());
        }
        Ok(RunOutput {
            log,
            acr: self.acr(),
            mismatch: self.mismatch(),
            rounds: self.rounds_done(),
            final_x: ParamVector::new(self.x)?,
            visits: self.visits,
            stages: self.stages,
        })
    }
}

/// Executes a whole run in memory.
pub fn run(config: RunConfig) -> Result<RunOutput> {
    Simulation::new(config)?.finish()
}
