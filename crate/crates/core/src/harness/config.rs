//! Flat `key = value` run configuration with presets and sweep grids.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BanditError, Result};
use crate::model::ModelFamily;
use crate::policy::PolicyParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    SsgdScb,
    SgdScb,
    EpsilonGreedy,
    Greedy,
}

impl FromStr for Algorithm {
    type Err = BanditError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssgd-scb" => Ok(Self::SsgdScb),
            "sgd-scb" => Ok(Self::SgdScb),
            "epsilon-greedy" => Ok(Self::EpsilonGreedy),
            "greedy" => Ok(Self::Greedy),
            other => Err(BanditError::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SsgdScb => "ssgd-scb",
            Self::SgdScb => "sgd-scb",
            Self::EpsilonGreedy => "epsilon-greedy",
            Self::Greedy => "greedy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EnvSpec {
    Toy,
    Linear {
        actions: usize,
        dim: usize,
        contexts: usize,
        seed: u64,
    },
    Dataset {
        path: PathBuf,
        label_column: String,
        noise: f64,
        actions: Option<usize>,
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitSpec {
    Zeros,
    Random,
    Values(Vec<f64>),
}

/// Where mismatch-rate reference minimizers come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReferenceSpec {
    None,
    Grid { lo: f64, hi: f64, step: f64 },
    Checkpoint(PathBuf),
}

/// Fully resolved run configuration. `entries` holds every key with
/// defaults filled in and is what gets hashed and echoed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub model: ModelFamily,
    pub init: InitSpec,
    pub algorithm: Algorithm,
    pub t0: u64,
    pub upsilon: f64,
    pub stages: u64,
    pub eta0: f64,
    pub noise0: f64,
    pub kappa: f64,
    pub omega: f64,
    pub c: f64,
    pub beta: f64,
    pub c_halving: bool,
    pub epsilon: f64,
    pub window: u64,
    pub l2: f64,
    pub seed: u64,
    pub snapshot_every: u64,
    pub max_rounds: Option<u64>,
    pub keep_rounds: bool,
    pub reference: ReferenceSpec,
    pub checkpoint_every: Option<u64>,
    pub out_dir: Option<PathBuf>,
    entries: BTreeMap<String, String>,
}

const DEFAULTS: &[(&str, &str)] = &[
    ("env", "toy"),
    ("model", "toy-trig"),
    ("algorithm", "ssgd-scb"),
    ("schedule.upsilon", "1"),
    ("policy.kappa", "0.5"),
    ("policy.beta", "11/24"),
    ("policy.c_halving", "false"),
    ("epsilon", "0.1"),
    ("gradient.window", "1"),
    ("gradient.l2", "0"),
    ("seed", "0"),
    ("snapshot.every", "10000"),
    ("log.rounds", "true"),
    ("reference", "none"),
];

const OPTIONAL: &[&str] = &[
    "preset",
    "schedule.t0",
    "schedule.stages",
    "schedule.eta0",
    "schedule.noise0",
    "policy.omega",
    "policy.c",
    "env.actions",
    "env.dim",
    "env.contexts",
    "env.seed",
    "env.path",
    "env.label_column",
    "env.noise",
    "model.link",
    "model.hidden",
    "model.init",
    "reference.lo",
    "reference.hi",
    "reference.step",
    "reference.checkpoint",
    "max_rounds",
    "checkpoint.every",
    "output.dir",
];

/// Named bundles merged beneath user-supplied keys.
pub fn preset(name: &str) -> Result<&'static [(&'static str, &'static str)]> {
    match name {
        "toy" => Ok(&[
            ("env", "toy"),
            ("model", "toy-trig"),
            ("algorithm", "ssgd-scb"),
            ("schedule.t0", "200"),
            ("schedule.stages", "50"),
            ("schedule.eta0", "0.01"),
            ("schedule.noise0", "1e-4"),
            ("policy.omega", "1"),
            ("policy.c", "0"),
            ("reference", "grid"),
            ("log.rounds", "false"),
        ]),
        "linear-sgd-scb" => Ok(&[
            ("env", "linear"),
            ("env.actions", "3"),
            ("env.dim", "4"),
            ("env.contexts", "50"),
            ("model", "linear"),
            ("model.link", "identity"),
            ("algorithm", "sgd-scb"),
            ("schedule.upsilon", "0.4"),
            ("schedule.stages", "100000"),
            ("schedule.eta0", "0.1"),
            ("schedule.noise0", "0"),
            ("policy.kappa", "0.2"),
            ("policy.beta", "0.45"),
            ("policy.omega", "0.2"),
            ("policy.c", "0.05"),
            ("gradient.l2", "0.05"),
            ("log.rounds", "false"),
        ]),
        other => Err(BanditError::Config(format!("unknown preset `{other}`"))),
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| BanditError::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(BanditError::Config(format!("line {}: empty key", i + 1)));
        }
        if map.insert(k.clone(), v).is_some() {
            return Err(BanditError::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
    }
    Ok(map)
}

/// Parses a real, accepting `a/b` fractions.
pub fn parse_real(key: &str, v: &str) -> Result<f64> {
    let bad = || BanditError::Config(format!("`{key}`: `{v}` is not a number"));
    let value = match v.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            a / b
        }
        None => v.parse().map_err(|_| bad())?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(bad())
    }
}

fn parse_int<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| BanditError::Config(format!("`{key}`: `{v}` is not a non-negative integer")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(BanditError::Config(format!("`{key}`: `{v}` is not a boolean"))),
    }
}

struct Lookup<'a>(&'a BTreeMap<String, String>);

impl Lookup<'_> {
    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| BanditError::Config(format!("missing required key `{key}`")))
    }

    fn real(&self, key: &str) -> Result<f64> {
        parse_real(key, self.require(key)?)
    }

    fn int<T: FromStr>(&self, key: &str) -> Result<T> {
        parse_int(key, self.require(key)?)
    }

    fn opt_int<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key).map(|v| parse_int(key, v)).transpose()
    }
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_entries(parse_entries(text)?)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BanditError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Resolves presets and defaults, then validates.
    pub fn from_entries(user: BTreeMap<String, String>) -> Result<Self> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (k, v) in DEFAULTS {
            entries.insert(k.to_string(), v.to_string());
        }
        if let Some(name) = user.get("preset") {
            for (k, v) in preset(name)? {
                entries.insert(k.to_string(), v.to_string());
            }
        }
        for (k, v) in &user {
            if !DEFAULTS.iter().any(|(d, _)| d == k) && !OPTIONAL.contains(&k.as_str()) {
                return Err(BanditError::Config(format!("unknown key `{k}`")));
            }
            if v.contains('|') {
                return Err(BanditError::Config(format!(
                    "`{k}` holds a sweep list; expand it with a sweep first"
                )));
            }
            entries.insert(k.clone(), v.clone());
        }
        Self::resolve(entries)
    }

    fn resolve(entries: BTreeMap<String, String>) -> Result<Self> {
        let l = Lookup(&entries);
        let algorithm: Algorithm = l.require("algorithm")?.parse()?;
        let env = match l.require("env")? {
            "toy" => EnvSpec::Toy,
            "linear" => EnvSpec::Linear {
                actions: l.int("env.actions")?,
                dim: l.int("env.dim")?,
                contexts: l.int("env.contexts")?,
                seed: l.opt_int("env.seed")?.unwrap_or(0),
            },
            "dataset" => EnvSpec::Dataset {
                path: PathBuf::from(l.require("env.path")?),
                label_column: l.get("env.label_column").unwrap_or("label").to_string(),
                noise: l
                    .get("env.noise")
                    .map(|v| parse_real("env.noise", v))
                    .transpose()?
                    .unwrap_or(0.0),
                actions: l.opt_int("env.actions")?,
                seed: l.opt_int("env.seed")?,
            },
            other => return Err(BanditError::Config(format!("unknown env `{other}`"))),
        };
        let model = match l.require("model")? {
            "toy-trig" => ModelFamily::ToyTrig,
            "linear" => ModelFamily::Linear {
                link: l.get("model.link").unwrap_or("logistic").parse()?,
            },
            "mlp" => ModelFamily::Mlp {
                hidden: l
                    .get("model.hidden")
                    .unwrap_or("32")
                    .split(',')
                    .map(|h| parse_int("model.hidden", h.trim()))
                    .collect::<Result<Vec<usize>>>()?,
            },
            other => return Err(BanditError::Config(format!("unknown model `{other}`"))),
        };
        let default_init = if matches!(model, ModelFamily::Mlp { .. }) {
            "random"
        } else {
            "zeros"
        };
        let init = match l.get("model.init").unwrap_or(default_init) {
            "zeros" => InitSpec::Zeros,
            "random" => InitSpec::Random,
            list => InitSpec::Values(
                list.split(',')
                    .map(|v| parse_real("model.init", v.trim()))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        let reference = match l.require("reference")? {
            "none" => ReferenceSpec::None,
            "grid" => ReferenceSpec::Grid {
                lo: l
                    .get("reference.lo")
                    .map(|v| parse_real("reference.lo", v))
                    .transpose()?
                    .unwrap_or(-3.0),
                hi: l
                    .get("reference.hi")
                    .map(|v| parse_real("reference.hi", v))
                    .transpose()?
                    .unwrap_or(3.0),
                step: l
                    .get("reference.step")
                    .map(|v| parse_real("reference.step", v))
                    .transpose()?
                    .unwrap_or(1e-4),
            },
            "checkpoint" => ReferenceSpec::Checkpoint(PathBuf::from(l.require("reference.checkpoint")?)),
            other => return Err(BanditError::Config(format!("unknown reference source `{other}`"))),
        };
        let stagewise = algorithm != Algorithm::SgdScb;
        let config = Self {
            env,
            model,
            init,
            algorithm,
            t0: if stagewise {
                l.int("schedule.t0")?
            } else {
                l.opt_int("schedule.t0")?.unwrap_or(1)
            },
            upsilon: l.real("schedule.upsilon")?,
            stages: l.int("schedule.stages")?,
            eta0: l.real("schedule.eta0")?,
            noise0: if stagewise {
                l.real("schedule.noise0")?
            } else {
                l.get("schedule.noise0")
                    .map(|v| parse_real("schedule.noise0", v))
                    .transpose()?
                    .unwrap_or(0.0)
            },
            kappa: l.real("policy.kappa")?,
            omega: l.real("policy.omega")?,
            c: l.real("policy.c")?,
            beta: l.real("policy.beta")?,
            c_halving: parse_bool("policy.c_halving", l.require("policy.c_halving")?)?,
            epsilon: l.real("epsilon")?,
            window: l.int("gradient.window")?,
            l2: l.real("gradient.l2")?,
            seed: l.int("seed")?,
            snapshot_every: l.int("snapshot.every")?,
            max_rounds: l.opt_int("max_rounds")?,
            keep_rounds: parse_bool("log.rounds", l.require("log.rounds")?)?,
            reference,
            checkpoint_every: l.opt_int("checkpoint.every")?,
            out_dir: l.get("output.dir").map(PathBuf::from),
            entries,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        PolicyParams::new(2, self.kappa, self.omega, self.c, self.beta, self.upsilon)?;
        let bad = |m: &str| Err(BanditError::Config(m.to_string()));
        if self.t0 == 0 || self.stages == 0 {
            return bad("schedule.t0 and schedule.stages must be positive");
        }
        if !(self.eta0 > 0.0) || !(self.noise0 >= 0.0) {
            return bad("schedule.eta0 must be positive and schedule.noise0 non-negative");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if self.window == 0 || self.snapshot_every == 0 {
            return bad("gradient.window and snapshot.every must be positive");
        }
        if !(self.l2 >= 0.0) {
            return bad("gradient.l2 must be non-negative");
        }
        if self.max_rounds == Some(0) || self.checkpoint_every == Some(0) {
            return bad("max_rounds and checkpoint.every must be positive");
        }
        Ok(())
    }

    /// Replaces one key and re-resolves.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut user = self.entries.clone();
        user.insert(key.to_string(), value.to_string());
        user.remove("preset");
        Self::from_entries(user)
    }

    pub fn with_seed(&self, seed: u64) -> Result<Self> {
        self.with_override("seed", &seed.to_string())
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Canonical text: every resolved key, sorted, one per line.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn policy_params(&self, k: usize) -> Result<PolicyParams> {
        PolicyParams::new(k, self.kappa, self.omega, self.c, self.beta, self.upsilon)
    }
}

/// Expands every `a | b | ...` value into the cartesian product of configs,
/// in lexicographic key order with the last key varying fastest.
pub fn expand_grid(text: &str) -> Result<Vec<RunConfig>> {
    let base = parse_entries(text)?;
    let mut combos: Vec<BTreeMap<String, String>> = vec![BTreeMap::new()];
    for (k, v) in &base {
        let options: Vec<&str> = v.split('|').map(str::trim).collect();
        if options.iter().any(|o| o.is_empty()) {
            return Err(BanditError::Config(format!("`{k}`: empty sweep option")));
        }
        combos = combos
            .into_iter()
            .flat_map(|c| {
                options.iter().map(move |o| {
                    let mut c = c.clone();
                    c.insert(k.clone(), o.to_string());
                    c
                })
            })
            .collect();
    }
    combos.into_iter().map(RunConfig::from_entries).collect()
}
