//! Flat `key=value` configuration.
//!
//! A config file holds one `key = value` pair per line; blank lines and
//! lines starting with `#` are ignored. Command-line flags override file
//! values. Values are collected as strings and parsed once, so every bad
//! value, missing path and unknown key is reported in a single error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;

use hjcl_core::data::SynthSpec;
use hjcl_core::eval::EvalOptions;
use hjcl_core::losses::{LossOptions, LossWeights};
use hjcl_core::trainer::TrainConfig;

use crate::error::CliError;

/// Seed used when neither a flag, the config file nor `HJCL_SEED` sets one.
pub const DEFAULT_SEED: u64 = 42;

/// Checkpoint file name inside the output directory.
pub const DEFAULT_CHECKPOINT: &str = "checkpoint.hjcl";

/// Every key any command understands.
pub const KNOWN_KEYS: &[&str] = &[
    // paths
    "taxonomy",
    "train",
    "val",
    "test",
    "corpus",
    "gold",
    "predictions",
    "descriptions",
    "stoplist",
    "checkpoint",
    "out",
    "json",
    "dump_predictions",
    // model
    "dim",
    "heads",
    "gat_layers",
    "encoder_layers",
    // training
    "seed",
    "batch_size",
    "lr",
    "lambda1",
    "lambda2",
    "temperature",
    "mode",
    "max_epochs",
    "patience",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "normalize_gamma",
    "penalty",
    "prefactor",
    "positive_rule",
    "instance_denominator",
    "classification",
    "record_wall_time",
    // evaluation
    "closure",
    // synthetic corpus
    "depth",
    "branching",
    "tokens_per_label",
    "doc_length",
    "paths_min",
    "paths_max",
    "noise_ratio",
    "noise_vocab",
    "train_docs",
    // gradient check
    "tol",
    "component",
];

/// Parses config text into ordered key/value pairs.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, Vec<String>> {
    let (values, problems) = parse_config_lines(text);
    if problems.is_empty() {
        Ok(values)
    } else {
        Err(problems)
    }
}

/// The well-formed pairs plus one problem per malformed line.
fn parse_config_lines(text: &str) -> (BTreeMap<String, String>, Vec<String>) {
    let mut out = BTreeMap::new();
    let mut problems = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                let key = k.trim().to_string();
                if key.is_empty() {
                    problems.push(format!("config line {}: empty key", i + 1));
                } else if out.insert(key.clone(), v.trim().to_string()).is_some() {
                    problems.push(format!("config line {}: duplicate key `{key}`", i + 1));
                }
            }
            None => problems.push(format!("config line {}: expected key=value, got `{line}`", i + 1)),
        }
    }
    (out, problems)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Some(true),
        "false" | "off" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Merged settings plus the problems found while reading them.
#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
    problems: Vec<String>,
    env_seed: Option<String>,
}

impl Settings {
    /// File values (if any) overridden by `flags`; `None` flags are unset.
    pub fn load(config: Option<&Path>, flags: &[(&str, Option<String>)]) -> Self {
        let mut s = Settings { env_seed: std::env::var("HJCL_SEED").ok(), ..Default::default() };
        if let Some(path) = config {
            match std::fs::read_to_string(path) {
                Ok(text) => {
                    let (values, problems) = parse_config_lines(&text);
                    s.values = values;
                    s.problems.extend(problems);
                }
                Err(e) => s.problems.push(format!("cannot read config {}: {e}", path.display())),
            }
        }
        for key in s.values.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                s.problems.push(format!("unknown config key `{key}`"));
            }
        }
        for (key, value) in flags {
            if let Some(v) = value {
                s.values.insert(key.to_string(), v.clone());
            }
        }
        s
    }

    pub fn from_map(values: BTreeMap<String, String>) -> Self {
        Settings { values, ..Default::default() }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn problem(&mut self, msg: impl Into<String>) {
        self.problems.push(msg.into());
    }

    pub fn get<T: FromStr>(&mut self, key: &str, default: T) -> T
    where
        T::Err: Display,
    {
        self.opt(key).unwrap_or(default)
    }

    pub fn opt<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: Display,
    {
        let raw = self.values.get(key)?.clone();
        match raw.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.problems.push(format!("{key}: cannot parse `{raw}`: {e}"));
                None
            }
        }
    }

    pub fn flag(&mut self, key: &str, default: bool) -> bool {
        match self.values.get(key).cloned() {
            None => default,
            Some(raw) => parse_bool(&raw).unwrap_or_else(|| {
                self.problems.push(format!("{key}: expected true/false, got `{raw}`"));
                default
            }),
        }
    }

    /// A value named like the serialized form of `T`.
    pub fn choice<T: DeserializeOwned>(&mut self, key: &str, default: T, allowed: &str) -> T {
        match self.values.get(key).cloned() {
            None => default,
            Some(raw) => serde_json::from_value(serde_json::Value::String(raw.clone())).unwrap_or_else(|_| {
                self.problems.push(format!("{key}: expected one of {allowed}, got `{raw}`"));
                default
            }),
        }
    }

    /// The seed: flag or file, then `HJCL_SEED`, then [`DEFAULT_SEED`].
    pub fn seed(&mut self) -> u64 {
        if self.values.contains_key("seed") {
            return self.get("seed", DEFAULT_SEED);
        }
        match self.env_seed.clone() {
            Some(raw) => raw.parse().unwrap_or_else(|e| {
                self.problems.push(format!("HJCL_SEED: cannot parse `{raw}`: {e}"));
                DEFAULT_SEED
            }),
            None => DEFAULT_SEED,
        }
    }

    /// A path that must name an existing file.
    pub fn input(&mut self, key: &str) -> Option<PathBuf> {
        match self.values.get(key) {
            None => {
                self.problems.push(format!("missing required setting `{key}`"));
                None
            }
            Some(raw) => self.check_exists(key, PathBuf::from(raw)),
        }
    }

    /// Like [`Settings::input`] but may be absent.
    pub fn optional_input(&mut self, key: &str) -> Option<PathBuf> {
        let raw = self.values.get(key)?.clone();
        self.check_exists(key, PathBuf::from(raw))
    }

    fn check_exists(&mut self, key: &str, path: PathBuf) -> Option<PathBuf> {
        if path.is_file() {
            Some(path)
        } else {
            self.problems.push(format!("{key}: no such file {}", path.display()));
            None
        }
    }

    pub fn output(&mut self, key: &str, default: &str) -> PathBuf {
        PathBuf::from(self.raw(key).unwrap_or(default))
    }

    /// Fails with every collected problem.
    pub fn finish(self) -> Result<(), CliError> {
        if self.problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(self.problems))
        }
    }

    pub fn extend_problems(&mut self, more: Vec<String>) {
        self.problems.extend(more);
    }
}

/// Model width and depth settings; the vocabulary size comes from data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub dim: usize,
    pub heads: usize,
    pub gat_layers: usize,
    pub encoder_layers: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let d = hjcl_core::model::ModelConfig::default();
        Self { dim: d.dim, heads: d.heads, gat_layers: d.gat_layers, encoder_layers: d.encoder_layers }
    }
}

/// Everything `train` needs, resolved from file and flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub taxonomy: PathBuf,
    pub train: PathBuf,
    pub val: PathBuf,
    pub descriptions: Option<PathBuf>,
    pub stoplist: Option<PathBuf>,
    pub out: PathBuf,
    pub checkpoint: PathBuf,
    pub model: ModelShape,
    pub train_config: TrainConfig,
    pub record_wall_time: bool,
}

pub fn read_train_config(s: &mut Settings) -> TrainConfig {
    let d = TrainConfig::default();
    let dw = LossWeights::default();
    let dopt = LossOptions::default();
    let seed = s.seed();
    TrainConfig {
        batch_size: s.get("batch_size", d.batch_size),
        lr: s.get("lr", d.lr),
        weights: LossWeights {
            lambda1: s.get("lambda1", dw.lambda1),
            lambda2: s.get("lambda2", dw.lambda2),
            temperature: s.get("temperature", dw.temperature),
            mode: s.choice("mode", dw.mode, "hilecon, lecon, supcon"),
        },
        options: LossOptions {
            penalty: s.choice("penalty", dopt.penalty, "shifted, paper_clamped"),
            prefactor: s.choice("prefactor", dopt.prefactor, "anchors, labels"),
            positive_rule: s.choice("positive_rule", dopt.positive_rule, "exact, overlap"),
            denominator: s.choice("instance_denominator", dopt.denominator, "all_others, strict_negatives"),
            classification: s.choice("classification", dopt.classification, "zlpr, bce"),
        },
        normalize_gamma: s.flag("normalize_gamma", d.normalize_gamma),
        max_epochs: s.get("max_epochs", d.max_epochs),
        patience: s.get("patience", d.patience),
        seed,
        beta1: s.get("beta1", d.beta1),
        beta2: s.get("beta2", d.beta2),
        eps: s.get("eps", d.eps),
        weight_decay: s.get("weight_decay", d.weight_decay),
        eval: read_eval_options(s),
    }
}

pub fn read_eval_options(s: &mut Settings) -> EvalOptions {
    EvalOptions { closure: s.flag("closure", EvalOptions::default().closure) }
}

pub fn read_model_shape(s: &mut Settings) -> ModelShape {
    let d = ModelShape::default();
    ModelShape {
        dim: s.get("dim", d.dim),
        heads: s.get("heads", d.heads),
        gat_layers: s.get("gat_layers", d.gat_layers),
        encoder_layers: s.get("encoder_layers", d.encoder_layers),
    }
}

pub fn read_synth_spec(s: &mut Settings) -> SynthSpec {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        depth: s.get("depth", d.depth),
        branching: s.get("branching", d.branching),
        tokens_per_label: s.get("tokens_per_label", d.tokens_per_label),
        doc_length: s.get("doc_length", d.doc_length),
        paths_min: s.get("paths_min", d.paths_min),
        paths_max: s.get("paths_max", d.paths_max),
        noise_ratio: s.get("noise_ratio", d.noise_ratio),
        noise_vocab: s.get("noise_vocab", d.noise_vocab),
        train_docs: s.get("train_docs", d.train_docs),
        seed: s.seed(),
    };
    s.extend_problems(spec.problems());
    spec
}

impl RunConfig {
    pub fn resolve(s: &mut Settings) -> Option<RunConfig> {
        let taxonomy = s.input("taxonomy");
        let train = s.input("train");
        let val = s.input("val");
        let descriptions = s.optional_input("descriptions");
        let stoplist = s.optional_input("stoplist");
        let out = s.output("out", "run");
        let checkpoint = s.raw("checkpoint").map(PathBuf::from).unwrap_or_else(|| out.join(DEFAULT_CHECKPOINT));
        let model = read_model_shape(s);
        let train_config = read_train_config(s);
        let record_wall_time = s.flag("record_wall_time", false);
        s.extend_problems(train_config.problems());
        let probe = hjcl_core::model::ModelConfig {
            dim: model.dim,
            heads: model.heads,
            gat_layers: model.gat_layers,
            vocab_size: 1,
            encoder_layers: model.encoder_layers,
            seed: 0,
        };
        s.extend_problems(probe.problems());
        Some(RunConfig {
            taxonomy: taxonomy?,
            train: train?,
            val: val?,
            descriptions,
            stoplist,
            out,
            checkpoint,
            model,
            train_config,
            record_wall_time,
        })
    }

    /// Canonical config text; reading it back yields the same run.
    pub fn to_config_text(&self) -> String {
        let c = &self.train_config;
        let mut lines: Vec<(&str, String)> = vec![
            ("taxonomy", self.taxonomy.display().to_string()),
            ("train", self.train.display().to_string()),
            ("val", self.val.display().to_string()),
        ];
        if let Some(p) = &self.descriptions {
            lines.push(("descriptions", p.display().to_string()));
        }
        if let Some(p) = &self.stoplist {
            lines.push(("stoplist", p.display().to_string()));
        }
        lines.push(("out", self.out.display().to_string()));
        // a default checkpoint path follows `out`, so an overridden `out` moves it too
        if self.checkpoint != self.out.join(DEFAULT_CHECKPOINT) {
            lines.push(("checkpoint", self.checkpoint.display().to_string()));
        }
        lines.extend([
            ("dim", self.model.dim.to_string()),
            ("heads", self.model.heads.to_string()),
            ("gat_layers", self.model.gat_layers.to_string()),
            ("encoder_layers", self.model.encoder_layers.to_string()),
            ("seed", c.seed.to_string()),
            ("batch_size", c.batch_size.to_string()),
            ("lr", format!("{:?}", c.lr)),
            ("lambda1", format!("{:?}", c.weights.lambda1)),
            ("lambda2", format!("{:?}", c.weights.lambda2)),
            ("temperature", format!("{:?}", c.weights.temperature)),
            ("mode", enum_name(&c.weights.mode)),
            ("max_epochs", c.max_epochs.to_string()),
            ("patience", c.patience.to_string()),
            ("beta1", format!("{:?}", c.beta1)),
            ("beta2", format!("{:?}", c.beta2)),
            ("eps", format!("{:?}", c.eps)),
            ("weight_decay", format!("{:?}", c.weight_decay)),
            ("normalize_gamma", c.normalize_gamma.to_string()),
            ("penalty", enum_name(&c.options.penalty)),
            ("prefactor", enum_name(&c.options.prefactor)),
            ("positive_rule", enum_name(&c.options.positive_rule)),
            ("instance_denominator", enum_name(&c.options.denominator)),
            ("classification", enum_name(&c.options.classification)),
            ("closure", c.eval.closure.to_string()),
            ("record_wall_time", self.record_wall_time.to_string()),
        ]);
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Keys set more than once are rejected, so key order is irrelevant.
pub fn known_key_set() -> BTreeSet<&'static str> {
    KNOWN_KEYS.iter().copied().collect()
}
