//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comment
//! kind = attack
//! seed = 7
//! dataset.source = blobs
//! dataset.n = 1000
//! noise.strategy = additive
//! noise.gamma = 1.5
//! attack.gammas = 0, 0.5, 1, 2
//! ```
//!
//! Every key has a default. Resolution records each value actually used, so
//! the echoed configuration in a result record is complete. Unknown keys are
//! rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchConfig, Mixing, NoiseConfig, NoiseStrategy, TrainConfig};
use crate::nn::{Activation, Algorithm};
use crate::sde::SdeMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Train,
    Attack,
    Accountant,
    Rademacher,
    SdeDemo,
    DpsgdCompare,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "attack" => Ok(Self::Attack),
            "accountant" => Ok(Self::Accountant),
            "rademacher" => Ok(Self::Rademacher),
            "sde-demo" | "sde_demo" => Ok(Self::SdeDemo),
            "dpsgd-compare" | "dpsgd_compare" => Ok(Self::DpsgdCompare),
            other => Err(Error::Parse(format!("unknown experiment kind `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Attack => "attack",
            Self::Accountant => "accountant",
            Self::Rademacher => "rademacher",
            Self::SdeDemo => "sde-demo",
            Self::DpsgdCompare => "dpsgd-compare",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    Blobs { separation: f64, noise: f64, positive_fraction: f64 },
    Moons { noise: f64 },
    Csv { path: PathBuf, label_column: Option<usize>, header: bool },
    Idx { images: PathBuf, labels: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub source: DatasetSource,
    /// Points generated by the synthetic sources.
    pub n: usize,
    /// Feature dimension of the synthetic sources.
    pub dim: usize,
    /// Keep a random subset of this size; 0 keeps everything.
    pub subsample: usize,
    /// Held-out fraction for `train` runs.
    pub test_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSection {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub thresholds: Vec<f64>,
    pub stratified: bool,
    pub repeats: usize,
    pub gammas: Vec<f64>,
    pub ensembles: Vec<usize>,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpsgdSection {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub microbatch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountantSection {
    pub epsilon: f64,
    pub delta: f64,
    pub lambda: f64,
    pub iterations: u64,
    pub batch_size: u64,
    pub dataset_size: u64,
    pub blocks: u64,
    pub input_bound: f64,
    pub residual_bound: f64,
    pub activation_bound: f64,
    pub head_bound: f64,
    pub eta: f64,
    pub gamma: f64,
    pub pi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RademacherSection {
    pub n: usize,
    pub dim: usize,
    pub c: f64,
    pub t: f64,
    pub p: f64,
    pub gamma: f64,
    pub draws: usize,
    pub gbm_paths: usize,
    pub gbm_steps: usize,
    pub search_trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeSection {
    pub image: Option<PathBuf>,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub noisy_mode: SdeMode,
    pub gamma: f64,
    pub dt: f64,
    pub t_end: f64,
    pub snapshots: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetDescriptor,
    pub arch: ArchConfig,
    pub noise: NoiseConfig,
    pub ensemble: usize,
    pub train: TrainConfig,
    pub attack: AttackSection,
    pub dpsgd: DpsgdSection,
    pub accountant: AccountantSection,
    pub rademacher: RademacherSection,
    pub sde: SdeSection,
    /// Every resolved key, defaults included.
    pub resolved: BTreeMap<String, String>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", no + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse(format!("line {}: empty key", no + 1)));
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Parse(format!("line {}: duplicate key `{k}`", no + 1)));
        }
    }
    Ok(map)
}

struct Resolver {
    raw: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: BTreeMap<String, String>,
}

impl Resolver {
    fn take(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.raw.get(key).cloned()
    }

    fn record(&mut self, key: &str, value: String) {
        self.resolved.insert(key.to_string(), value);
    }

    fn get<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match self.take(key) {
            Some(s) => s
                .parse::<T>()
                .map_err(|e| Error::Parse(format!("`{key}`: cannot parse `{s}`: {e}")))?,
            None => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    fn get_with<T>(&mut self, key: &str, default: &str, parse: impl Fn(&str) -> Result<T>) -> Result<T> {
        let s = self.take(key).unwrap_or_else(|| default.to_string());
        let v = parse(&s).map_err(|e| Error::Parse(format!("`{key}`: {e}")))?;
        self.record(key, s);
        Ok(v)
    }

    fn get_list<T>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match self.take(key) {
            Some(s) if !s.trim().is_empty() => s
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<T>()
                        .map_err(|e| Error::Parse(format!("`{key}`: cannot parse `{p}`: {e}")))
                })
                .collect::<Result<Vec<T>>>()?,
            _ => default,
        };
        let text = v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        self.record(key, text);
        Ok(v)
    }

    fn finish(self) -> Result<BTreeMap<String, String>> {
        let unknown: Vec<&String> = self.raw.keys().filter(|k| !self.used.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(Error::Parse(format!(
                "unknown configuration keys: {}",
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(self.resolved)
    }
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(Error::Parse(format!("expected a boolean, got `{other}`"))),
    }
}

fn parse_schedule(s: &str) -> Result<Vec<(usize, f64)>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|item| {
            let (e, d) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("schedule entry `{item}` is not `epoch:divisor`")))?;
            let e = e.trim().parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?;
            let d = d.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?;
            Ok((e, d))
        })
        .collect()
}

fn optional_f64(s: &str) -> Result<Option<f64>> {
    if s == "none" || s.is_empty() {
        Ok(None)
    } else {
        s.parse::<f64>().map(Some).map_err(|e| Error::Parse(e.to_string()))
    }
}

impl ExperimentConfig {
    /// Resolves `text` with command-line overrides applied on top.
    pub fn from_text(text: &str, overrides: &BTreeMap<String, String>) -> Result<Self> {
        let mut raw = parse_kv(text)?;
        for (k, v) in overrides {
            raw.insert(k.clone(), v.clone());
        }
        Self::from_map(raw)
    }

    pub fn from_map(raw: BTreeMap<String, String>) -> Result<Self> {
        let mut r = Resolver {
            raw,
            used: BTreeSet::new(),
            resolved: BTreeMap::new(),
        };
        let kind = r.get_with("kind", "train", ExperimentKind::parse)?;
        let seed = r.get("seed", 0u64)?;
        let out_dir = PathBuf::from(r.get("out", "results".to_string())?);

        let source_name = r.get("dataset.source", "blobs".to_string())?;
        let source = match source_name.as_str() {
            "blobs" => DatasetSource::Blobs {
                separation: r.get("dataset.separation", 2.0)?,
                noise: r.get("dataset.noise", 1.0)?,
                positive_fraction: r.get("dataset.positive_fraction", 0.5)?,
            },
            "moons" => DatasetSource::Moons {
                noise: r.get("dataset.noise", 0.2)?,
            },
            "csv" => DatasetSource::Csv {
                path: PathBuf::from(r.get("dataset.path", String::new())?),
                label_column: {
                    let c: i64 = r.get("dataset.label_column", -1)?;
                    usize::try_from(c).ok()
                },
                header: r.get_with("dataset.header", "true", parse_bool)?,
            },
            "idx" => DatasetSource::Idx {
                images: PathBuf::from(r.get("dataset.path", String::new())?),
                labels: PathBuf::from(r.get("dataset.labels_path", String::new())?),
            },
            other => return Err(Error::Parse(format!("unknown dataset source `{other}`"))),
        };
        let dataset = DatasetDescriptor {
            source,
            n: r.get("dataset.n", 1000usize)?,
            dim: r.get("dataset.dim", 20usize)?,
            subsample: r.get("dataset.subsample", 0usize)?,
            test_fraction: r.get("dataset.test_fraction", 0.5)?,
        };

        let default_bn = if kind == ExperimentKind::DpsgdCompare { "false" } else { "true" };
        let arch = ArchConfig {
            input_dim: 0,
            blocks: r.get("model.blocks", 4usize)?,
            classes: 0,
            mixing: r.get_with("model.mixing", "dense", Mixing::parse)?,
            activation: r.get_with("model.activation", "relu", Activation::parse)?,
            batch_norm: r.get_with("model.batch_norm", default_bn, parse_bool)?,
            skip_connections: r.get_with("model.skip_connections", "true", parse_bool)?,
            head_norm_bound: r.get_with("model.head_norm_bound", "none", optional_f64)?,
        };

        let strategy = r.get_with("noise.strategy", "none", NoiseStrategy::parse)?;
        let gamma = r.get("noise.gamma", 0.0)?;
        let default_pi = if strategy == NoiseStrategy::AdditiveI { gamma / 2.0 } else { 0.0 };
        let pi = r.get("noise.pi", default_pi)?;
        let eta = r.get("noise.eta", crate::model::DEFAULT_ETA)?;
        let noise = NoiseConfig {
            strategy,
            gamma,
            pi,
            eta,
        };
        noise.validate()?;
        let ensemble = r.get("ensemble.size", 1usize)?;

        let optimizer_name = r.get("train.optimizer", "sgd".to_string())?;
        let optimizer = match optimizer_name.as_str() {
            "sgd" => Algorithm::SgdMomentum {
                momentum: r.get("train.momentum", 0.9)?,
            },
            "adam" => Algorithm::adam_default(),
            other => return Err(Error::Parse(format!("unknown optimizer `{other}`"))),
        };
        let train = TrainConfig {
            epochs: r.get("train.epochs", 60usize)?,
            batch_size: r.get("train.batch_size", 32usize)?,
            optimizer,
            learning_rate: r.get("train.learning_rate", 0.05)?,
            lr_schedule: r.get_with("train.lr_schedule", "", parse_schedule)?,
            seed,
        };
        train.validate()?;

        let attack = AttackSection {
            hidden: r.get("attack.hidden", 64usize)?,
            epochs: r.get("attack.epochs", 50usize)?,
            learning_rate: r.get("attack.learning_rate", 0.1)?,
            batch_size: r.get("attack.batch_size", 32usize)?,
            thresholds: r.get_list("attack.thresholds", vec![0.4, 0.5, 0.6, 0.7])?,
            stratified: r.get_with("attack.stratified", "true", parse_bool)?,
            repeats: r.get("attack.repeats", 1usize)?,
            gammas: r.get_list("attack.gammas", vec![gamma])?,
            ensembles: r.get_list("attack.ensembles", vec![ensemble])?,
            confidence: r.get("attack.confidence", 0.95)?,
        };
        if attack.repeats == 0 || attack.gammas.is_empty() || attack.ensembles.contains(&0) {
            return Err(Error::invalid("attack.repeats and ensemble sizes must be positive"));
        }

        let dpsgd = DpsgdSection {
            clip_norm: r.get("dpsgd.clip_norm", 1.0)?,
            noise_multiplier: r.get("dpsgd.noise_multiplier", 1.1)?,
            microbatch_size: r.get("dpsgd.microbatch_size", 1usize)?,
        };

        let n_for_budget = dataset.n as u64;
        let batches = (n_for_budget as usize).div_ceil(train.batch_size.max(1)) as u64;
        let accountant = AccountantSection {
            epsilon: r.get("accountant.epsilon", 1.0)?,
            delta: r.get("accountant.delta", 1e-5)?,
            lambda: r.get("accountant.lambda", 0.5)?,
            iterations: r.get("accountant.iterations", train.epochs as u64 * batches)?,
            batch_size: r.get("accountant.batch_size", train.batch_size as u64)?,
            dataset_size: r.get("accountant.dataset_size", n_for_budget)?,
            blocks: r.get("accountant.blocks", arch.blocks as u64)?,
            input_bound: r.get("accountant.input_bound", 1.0)?,
            residual_bound: r.get("accountant.residual_bound", 1.0)?,
            activation_bound: r.get("accountant.activation_bound", 1.0)?,
            head_bound: r.get("accountant.head_bound", 1.0)?,
            eta: r.get("accountant.eta", eta)?,
            gamma: r.get("accountant.gamma", gamma)?,
            pi: r.get("accountant.pi", pi)?,
        };

        let rademacher = RademacherSection {
            n: r.get("rademacher.n", 12usize)?,
            dim: r.get("rademacher.dim", 4usize)?,
            c: r.get("rademacher.c", 1.0)?,
            t: r.get("rademacher.t", 1.0)?,
            p: r.get("rademacher.p", 0.5)?,
            gamma: r.get("rademacher.gamma", 1.0)?,
            draws: r.get("rademacher.draws", 100_000usize)?,
            gbm_paths: r.get("rademacher.gbm_paths", 100_000usize)?,
            gbm_steps: r.get("rademacher.gbm_steps", 50usize)?,
            search_trials: r.get("rademacher.search_trials", 10_000usize)?,
        };

        let image = r.get("sde.image", String::new())?;
        let sde = SdeSection {
            image: (!image.is_empty()).then(|| PathBuf::from(image)),
            rows: r.get("sde.rows", 64usize)?,
            cols: r.get("sde.cols", 64usize)?,
            channels: r.get("sde.channels", 1usize)?,
            noisy_mode: r.get_with("sde.mode", "sde_additive", SdeMode::parse)?,
            gamma: r.get("sde.gamma", 1.0)?,
            dt: r.get("sde.dt", 0.01)?,
            t_end: r.get("sde.t_end", 1.0)?,
            snapshots: r.get("sde.snapshots", 0usize)?,
        };

        let resolved = r.finish()?;
        Ok(Self {
            kind,
            seed,
            out_dir,
            dataset,
            arch,
            noise,
            ensemble,
            train,
            attack,
            dpsgd,
            accountant,
            rademacher,
            sde,
            resolved,
        })
    }
}
