//! Evaluation quantities folded over run logs and held-out sets.

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{BanditError, Result};
use crate::model::{ParamVector, RewardModel};
use crate::policy::argmax;

/// One logged interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u64,
    pub stage: u64,
    pub context: usize,
    pub action: usize,
    pub propensity: f64,
    pub reward: f64,
    /// `argmax_k f_k(d_t; x_t)` under the parameters used to act.
    pub greedy: usize,
}

/// Periodic state capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: u64,
    pub stage: u64,
    pub x: Vec<f64>,
    pub acr: f64,
    pub mismatch: Option<f64>,
    pub objective: Option<f64>,
}

/// Per-round records plus snapshots. Round indices are strictly
/// increasing and gap-free.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    records: Vec<RoundRecord>,
    snapshots: Vec<Snapshot>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<RoundRecord>) -> Result<Self> {
        let mut log = Self::new();
        for r in records {
            log.push(r)?;
        }
        Ok(log)
    }

    /// Appends a record whose index must follow the previous one.
    pub fn push(&mut self, record: RoundRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.t != last.t + 1 {
                return Err(BanditError::InvalidParameter(format!(
                    "round index {} does not follow {}",
                    record.t, last.t
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn push_snapshot(&mut self, snapshot: Snapshot) {
        self.snapshots.push(snapshot);
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends another log's records and snapshots.
    pub fn extend(&mut self, other: RunLog) -> Result<()> {
        for r in other.records {
            self.push(r)?;
        }
        self.snapshots.extend(other.snapshots);
        Ok(())
    }
}

fn prefix(log: &RunLog, t: usize) -> Result<&[RoundRecord]> {
    if t == 0 {
        return Err(BanditError::InvalidParameter("T must be positive".into()));
    }
    log.records
        .get(..t)
        .ok_or_else(|| BanditError::InvalidParameter(format!("log has {} rounds, asked for {t}", log.len())))
}

/// `1 - (Σ_{t≤T} r_t) / T`.
pub fn average_cumulative_regret(log: &RunLog, t: usize) -> Result<f64> {
    let recs = prefix(log, t)?;
    Ok(1.0 - recs.iter().map(|r| r.reward).sum::<f64>() / t as f64)
}

/// `Σ_t (μ(d_t, a*_{d_t}) - r_t)`.
pub fn expected_regret(log: &RunLog, env: &dyn Environment) -> Result<f64> {
    let mut total = 0.0;
    for r in &log.records {
        let best = env.optimal_action(r.context).ok_or(BanditError::NotAnalytic)?;
        let mu = env.mean_reward(r.context, best).ok_or(BanditError::NotAnalytic)?;
        total += mu - r.reward;
    }
    Ok(total)
}

/// `(1/T) Σ_t (1 - r_t)` over binary rewards.
pub fn progressive_validation_loss(log: &RunLog, t: usize) -> Result<f64> {
    let recs = prefix(log, t)?;
    if let Some(r) = recs.iter().find(|r| r.reward != 0.0 && r.reward != 1.0) {
        return Err(BanditError::InvalidParameter(format!(
            "progressive validation needs binary rewards, round {} has {}",
            r.t, r.reward
        )));
    }
    Ok(recs.iter().map(|r| 1.0 - r.reward).sum::<f64>() / t as f64)
}

/// Greedy actions of each reference parameter vector at every context of
/// the pool, with running mismatch counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchCounter {
    /// `greedy[i][id]`: reference `i`'s greedy action at context `id`.
    greedy: Vec<Vec<usize>>,
    mismatches: Vec<u64>,
    rounds: u64,
}

impl MismatchCounter {
    pub fn new(model: &RewardModel, references: &[ParamVector], env: &dyn Environment) -> Result<Self> {
        if references.is_empty() {
            return Err(BanditError::Empty("reference set"));
        }
        let greedy = references
            .iter()
            .map(|x| {
                (0..env.n_contexts())
                    .map(|id| {
                        let d = env.context(id).ok_or(BanditError::UnknownContext(id))?;
                        argmax(&model.predict(x, d)?).ok_or(BanditError::EmptyEstimates)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mismatches: vec![0; greedy.len()],
            greedy,
            rounds: 0,
        })
    }

    pub fn observe(&mut self, context: usize, action: usize) -> Result<()> {
        for (row, m) in self.greedy.iter().zip(self.mismatches.iter_mut()) {
            let g = *row.get(context).ok_or(BanditError::UnknownContext(context))?;
            if g != action {
                *m += 1;
            }
        }
        self.rounds += 1;
        Ok(())
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    /// Mismatch rate of each reference since the last reset.
    pub fn rates(&self) -> Vec<f64> {
        let n = self.rounds.max(1) as f64;
        self.mismatches.iter().map(|&m| m as f64 / n).collect()
    }

    /// Minimum rate over the reference set; `None` before any round.
    pub fn rate(&self) -> Option<f64> {
        (self.rounds > 0).then(|| self.rates().into_iter().fold(f64::INFINITY, f64::min))
    }

    pub fn reset(&mut self) {
        self.mismatches.iter_mut().for_each(|m| *m = 0);
        self.rounds = 0;
    }

    /// Greedy action of reference `i` at context `id`.
    pub fn reference_action(&self, i: usize, id: usize) -> Option<usize> {
        self.greedy.get(i)?.get(id).copied()
    }
}

/// Fraction of logged rounds whose action differs from a reference's greedy
/// action, minimized over the reference set.
pub fn mismatching_rate(
    log: &RunLog,
    model: &RewardModel,
    references: &[ParamVector],
    env: &dyn Environment,
) -> Result<f64> {
    if log.is_empty() {
        return Err(BanditError::Empty("run log"));
    }
    let mut counter = MismatchCounter::new(model, references, env)?;
    for r in &log.records {
        counter.observe(r.context, r.action)?;
    }
    Ok(counter.rate().expect("non-empty log"))
}

fn check_test_set(model: &RewardModel, test: &[(Vec<f64>, usize)]) -> Result<()> {
    if test.is_empty() {
        return Err(BanditError::Empty("test set"));
    }
    for (d, l) in test {
        if d.len() != model.context_dim() {
            return Err(BanditError::Shape {
                what: "test context",
                expected: model.context_dim(),
                actual: d.len(),
            });
        }
        if *l >= model.actions() {
            return Err(BanditError::ActionOutOfRange {
                index: *l,
                k: model.actions(),
            });
        }
    }
    Ok(())
}

/// `Σ ‖f(d; x) - onehot(l)‖² / (K |D|)`.
pub fn out_of_sample_mse(model: &RewardModel, x: &ParamVector, test: &[(Vec<f64>, usize)]) -> Result<f64> {
    check_test_set(model, test)?;
    let mut total = 0.0;
    for (d, l) in test {
        for (a, f) in model.predict(x, d)?.iter().enumerate() {
            let target = if a == *l { 1.0 } else { 0.0 };
            total += (f - target) * (f - target);
        }
    }
    Ok(total / (model.actions() * test.len()) as f64)
}

/// Share of examples whose greedy action equals the label.
pub fn top1_accuracy(model: &RewardModel, x: &ParamVector, test: &[(Vec<f64>, usize)]) -> Result<f64> {
    check_test_set(model, test)?;
    let mut hits = 0usize;
    for (d, l) in test {
        if argmax(&model.predict(x, d)?) == Some(*l) {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}
