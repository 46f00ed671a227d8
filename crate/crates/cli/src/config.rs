//! Run configuration: `key = value` files, `--key value` overrides and presets.
//!
//! Precedence, lowest first: built-in defaults, the selected preset,
//! `CPSR_SEED` (seed only), the config file, command-line overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cpsr::graph::GraphOptions;
use cpsr::oracle::PlantedRuleSpec;
use cpsr::reasoner::{MessageWeighting, ReasonerConfig, ScoreAgg};
use cpsr::rules::MiningScope;
use cpsr::TrainConfig;

pub const SEED_ENV: &str = "CPSR_SEED";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for key `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("expected `--key value` overrides, got `{0}`")]
    Override(String),
}

/// Hyper-parameter rows for the standard inductive benchmark versions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Wn18rrV1,
    Wn18rrV2,
    Wn18rrV3,
    Wn18rrV4,
    Fb237V1,
    Fb237V2,
    Fb237V3,
    Fb237V4,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::Wn18rrV1,
        Preset::Wn18rrV2,
        Preset::Wn18rrV3,
        Preset::Wn18rrV4,
        Preset::Fb237V1,
        Preset::Fb237V2,
        Preset::Fb237V3,
        Preset::Fb237V4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Wn18rrV1 => "wn18rr_v1",
            Preset::Wn18rrV2 => "wn18rr_v2",
            Preset::Wn18rrV3 => "wn18rr_v3",
            Preset::Wn18rrV4 => "wn18rr_v4",
            Preset::Fb237V1 => "fb237_v1",
            Preset::Fb237V2 => "fb237_v2",
            Preset::Fb237V3 => "fb237_v3",
            Preset::Fb237V4 => "fb237_v4",
        }
    }

    /// `(L, K, p_e, p_tau, batch_size)`.
    pub fn values(self) -> (usize, usize, f64, f64, usize) {
        match self {
            Preset::Wn18rrV1 => (3, 150, 0.5, 0.5, 100),
            Preset::Wn18rrV2 => (3, 50, 0.3, 0.5, 50),
            Preset::Wn18rrV3 => (7, 100, 0.3, 0.5, 100),
            Preset::Wn18rrV4 => (3, 300, 0.6, 0.5, 10),
            Preset::Fb237V1 => (7, 300, 0.3, 0.5, 20),
            Preset::Fb237V2 => (3, 250, 0.7, 0.5, 10),
            Preset::Fb237V3 => (7, 300, 0.3, 0.5, 20),
            Preset::Fb237V4 => (5, 300, 0.4, 0.5, 20),
        }
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| format!("expected one of {}", Preset::ALL.map(|p| p.name()).join(", ")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Every setting a command can read, fully resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub ind_dataset: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub precision: Precision,
    pub train: TrainConfig,
    pub pe_values: Vec<f64>,
    pub synth: PlantedRuleSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            ind_dataset: None,
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            resume: None,
            preset: None,
            precision: Precision::F64,
            train: TrainConfig::default(),
            pe_values: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            synth: PlantedRuleSpec::default(),
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "dataset",
    "ind_dataset",
    "out_dir",
    "checkpoint",
    "resume",
    "preset",
    "precision",
    "seed",
    "L",
    "K",
    "d",
    "p_e",
    "p_tau",
    "masking",
    "eval_mask",
    "resample_masks",
    "mining",
    "score_agg",
    "cumulative",
    "weighting",
    "rectifier",
    "shared_mix",
    "inverse",
    "self_loop",
    "batch_size",
    "lr",
    "epochs",
    "workers",
    "pe_values",
    "synth_train_entities",
    "synth_inference_entities",
    "synth_distractors",
    "synth_density",
    "synth_valid_fraction",
    "synth_test_fraction",
];

fn invalid(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue { key: key.into(), value: value.into(), reason: reason.into() }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| invalid(key, value, e.to_string()))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(invalid(key, value, "expected on or off")),
    }
}

fn parse_unit(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = parse(key, value)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(key, value, "must lie in [0, 1]"));
    }
    Ok(v)
}

fn parse_positive(key: &str, value: &str) -> Result<usize, ConfigError> {
    let v: usize = parse(key, value)?;
    if v == 0 {
        return Err(invalid(key, value, "must be at least 1"));
    }
    Ok(v)
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn path_value(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn apply_preset(&mut self, preset: Preset) {
        let (l, k, p_e, p_tau, bs) = preset.values();
        self.preset = Some(preset);
        self.train.reasoner.hops = l;
        self.train.reasoner.top_k = Some(k);
        self.train.p_e = p_e;
        self.train.p_tau = p_tau;
        self.train.batch_size = bs;
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        match key {
            "dataset" => self.dataset = path_value(value),
            "ind_dataset" => self.ind_dataset = path_value(value),
            "out_dir" => {
                if value.is_empty() {
                    return Err(invalid(key, value, "must not be empty"));
                }
                self.out_dir = PathBuf::from(value)
            }
            "checkpoint" => self.checkpoint = path_value(value),
            "resume" => self.resume = path_value(value),
            "preset" => {
                if value.is_empty() || value == "none" {
                    self.preset = None;
                } else {
                    let p = value.parse::<Preset>().map_err(|e| invalid(key, value, e))?;
                    self.apply_preset(p);
                }
            }
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(invalid(key, value, "expected f32 or f64")),
                }
            }
            "seed" => t.seed = parse(key, value)?,
            "L" => t.reasoner.hops = parse_positive(key, value)?,
            "K" => {
                t.reasoner.top_k = match value {
                    "inf" | "all" => None,
                    _ => Some(parse_positive(key, value)?),
                }
            }
            "d" => t.dim = parse_positive(key, value)?,
            "p_e" => t.p_e = parse_unit(key, value)?,
            "p_tau" => t.p_tau = parse_unit(key, value)?,
            "masking" => t.masking = parse_bool(key, value)?,
            "eval_mask" => t.eval_mask = parse_bool(key, value)?,
            "resample_masks" => t.resample_masks = parse_bool(key, value)?,
            "mining" => {
                t.mining = match value {
                    "augmented" => MiningScope::Augmented,
                    "base" => MiningScope::BaseOnly,
                    _ => return Err(invalid(key, value, "expected augmented or base")),
                }
            }
            "score_agg" => {
                t.reasoner.score_agg = match value {
                    "max" => ScoreAgg::Max,
                    "sum" => ScoreAgg::Sum,
                    _ => return Err(invalid(key, value, "expected max or sum")),
                }
            }
            "cumulative" => t.reasoner.cumulative = parse_bool(key, value)?,
            "weighting" => {
                t.reasoner.weighting = match value {
                    "walk" => MessageWeighting::WalkCount,
                    "edge" => MessageWeighting::PerEdge,
                    _ => return Err(invalid(key, value, "expected walk or edge")),
                }
            }
            "rectifier" => t.reasoner.rectifier = parse_bool(key, value)?,
            "shared_mix" => t.shared_mix = parse_bool(key, value)?,
            "inverse" => t.graph.add_inverse = parse_bool(key, value)?,
            "self_loop" => t.graph.add_self_loop = parse_bool(key, value)?,
            "batch_size" => t.batch_size = parse_positive(key, value)?,
            "lr" => {
                let lr: f64 = parse(key, value)?;
                if !(lr.is_finite() && lr >= 0.0) {
                    return Err(invalid(key, value, "must be a finite non-negative number"));
                }
                t.lr = lr;
            }
            "epochs" => t.epochs = parse_positive(key, value)?,
            "workers" => t.workers = parse_positive(key, value)?,
            "pe_values" => {
                let vals = value.split(',').map(|v| parse_unit(key, v.trim())).collect::<Result<Vec<_>, _>>()?;
                if vals.is_empty() {
                    return Err(invalid(key, value, "needs at least one value"));
                }
                self.pe_values = vals;
            }
            "synth_train_entities" => self.synth.train_entities = parse(key, value)?,
            "synth_inference_entities" => self.synth.inference_entities = parse(key, value)?,
            "synth_distractors" => self.synth.distractor_relations = parse(key, value)?,
            "synth_density" => self.synth.density = parse_unit(key, value)?,
            "synth_valid_fraction" => self.synth.valid_fraction = parse_unit(key, value)?,
            "synth_test_fraction" => self.synth.test_fraction = parse_unit(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// The value of `key` in the same syntax [`RunConfig::set`] accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let r = &t.reasoner;
        Some(match key {
            "dataset" => opt_path(&self.dataset),
            "ind_dataset" => opt_path(&self.ind_dataset),
            "out_dir" => self.out_dir.display().to_string(),
            "checkpoint" => opt_path(&self.checkpoint),
            "resume" => opt_path(&self.resume),
            "preset" => self.preset.map(|p| p.name()).unwrap_or("none").into(),
            "precision" => match self.precision {
                Precision::F32 => "f32",
                Precision::F64 => "f64",
            }
            .into(),
            "seed" => t.seed.to_string(),
            "L" => r.hops.to_string(),
            "K" => r.top_k.map(|k| k.to_string()).unwrap_or_else(|| "inf".into()),
            "d" => t.dim.to_string(),
            "p_e" => t.p_e.to_string(),
            "p_tau" => t.p_tau.to_string(),
            "masking" => on_off(t.masking).into(),
            "eval_mask" => on_off(t.eval_mask).into(),
            "resample_masks" => on_off(t.resample_masks).into(),
            "mining" => match t.mining {
                MiningScope::Augmented => "augmented",
                MiningScope::BaseOnly => "base",
            }
            .into(),
            "score_agg" => match r.score_agg {
                ScoreAgg::Max => "max",
                ScoreAgg::Sum => "sum",
            }
            .into(),
            "cumulative" => on_off(r.cumulative).into(),
            "weighting" => match r.weighting {
                MessageWeighting::WalkCount => "walk",
                MessageWeighting::PerEdge => "edge",
            }
            .into(),
            "rectifier" => on_off(r.rectifier).into(),
            "shared_mix" => on_off(t.shared_mix).into(),
            "inverse" => on_off(t.graph.add_inverse).into(),
            "self_loop" => on_off(t.graph.add_self_loop).into(),
            "batch_size" => t.batch_size.to_string(),
            "lr" => t.lr.to_string(),
            "epochs" => t.epochs.to_string(),
            "workers" => t.workers.to_string(),
            "pe_values" => self.pe_values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            "synth_train_entities" => self.synth.train_entities.to_string(),
            "synth_inference_entities" => self.synth.inference_entities.to_string(),
            "synth_distractors" => self.synth.distractor_relations.to_string(),
            "synth_density" => self.synth.density.to_string(),
            "synth_valid_fraction" => self.synth.valid_fraction.to_string(),
            "synth_test_fraction" => self.synth.test_fraction.to_string(),
            _ => return None,
        })
    }

    /// Resolves a configuration from file text, overrides and the seed variable.
    ///
    /// The preset, wherever it is set, is applied before every other key so
    /// explicit values always win over it.
    pub fn resolve(
        file: Option<&str>,
        overrides: &[(String, String)],
        env_seed: Option<&str>,
    ) -> Result<Self, ConfigError> {
        let file_pairs = match file {
            Some(text) => parse_file(text)?,
            None => Vec::new(),
        };
        let mut cfg = RunConfig::default();
        let preset =
            overrides.iter().rev().chain(file_pairs.iter().rev()).find(|(k, _)| k == "preset").map(|(_, v)| v.clone());
        if let Some(p) = &preset {
            cfg.set("preset", p)?;
        }
        if let Some(seed) = env_seed {
            cfg.set("seed", seed).map_err(|e| match e {
                ConfigError::InvalidValue { value, reason, .. } => {
                    ConfigError::InvalidValue { key: SEED_ENV.into(), value, reason }
                }
                other => other,
            })?;
        }
        for (k, v) in file_pairs.iter().chain(overrides) {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    /// `key = value` lines for every key; feeding them back reproduces this config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn dataset(&self) -> Result<&Path, ConfigError> {
        self.dataset.as_deref().ok_or(ConfigError::Missing("dataset"))
    }

    /// The inference split directory, `<dataset>_ind` unless set.
    pub fn ind_dataset(&self) -> Result<PathBuf, ConfigError> {
        if let Some(p) = &self.ind_dataset {
            return Ok(p.clone());
        }
        let d = self.dataset()?;
        let mut name = d.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push("_ind");
        Ok(d.with_file_name(name))
    }

    pub fn graph_options(&self) -> GraphOptions {
        self.train.graph
    }

    pub fn reasoner(&self) -> ReasonerConfig {
        self.train.reasoner
    }

    pub fn planted_spec(&self) -> PlantedRuleSpec {
        PlantedRuleSpec { seed: self.train.seed, ..self.synth.clone() }
    }
}

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_file(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: i + 1, msg: format!("expected `key = value`, got `{line}`") })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1, msg: "empty key".into() });
        }
        if !KEYS.contains(&k) {
            return Err(ConfigError::UnknownKey(k.into()));
        }
        out.push((k.to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

/// `--key value` or `--key=value` pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            return Err(ConfigError::Override(a.clone()));
        };
        let (k, v) = match body.split_once('=') {
            Some((k, v)) => (k.to_owned(), v.to_owned()),
            None => {
                let v = it.next().ok_or_else(|| ConfigError::Override(a.clone()))?;
                (body.to_owned(), v.clone())
            }
        };
        if !KEYS.contains(&k.as_str()) {
            return Err(ConfigError::UnknownKey(k));
        }
        out.push((k, v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(xs: &[(&str, &str)]) -> Vec<(String, String)> {
        xs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_with_dataset_flag() {
        let cfg = RunConfig::resolve(Some(""), &pairs(&[("dataset", "data/x")]), None).unwrap();
        assert_eq!(cfg.train.dim, 64);
        assert_eq!(cfg.train.p_tau, 0.5);
        assert_eq!(cfg.dataset().unwrap(), Path::new("data/x"));
        assert_eq!(cfg.ind_dataset().unwrap(), PathBuf::from("data/x_ind"));
    }

    #[test]
    fn flags_beat_file_beat_env() {
        let cfg = RunConfig::resolve(Some("L = 3\nseed = 5"), &pairs(&[("L", "7")]), Some("9")).unwrap();
        assert_eq!(cfg.train.reasoner.hops, 7);
        assert_eq!(cfg.train.seed, 5);
        let cfg = RunConfig::resolve(None, &[], Some("9")).unwrap();
        assert_eq!(cfg.train.seed, 9);
    }

    #[test]
    fn preset_rows() {
        let cfg = RunConfig::resolve(Some("preset = wn18rr_v1"), &[], None).unwrap();
        let t = &cfg.train;
        assert_eq!((t.reasoner.hops, t.reasoner.top_k, t.p_e, t.p_tau, t.batch_size), (3, Some(150), 0.5, 0.5, 100));
        let cfg = RunConfig::resolve(Some("K = 20\npreset = fb237_v4"), &[], None).unwrap();
        assert_eq!(cfg.train.reasoner.hops, 5);
        assert_eq!(cfg.train.reasoner.top_k, Some(20));
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            assert_eq!(p.values().3, 0.5);
        }
    }

    #[test]
    fn errors_name_the_key() {
        let e = RunConfig::resolve(Some("bogus = 1"), &[], None).unwrap_err();
        assert_eq!(e, ConfigError::UnknownKey("bogus".into()));
        let e = RunConfig::resolve(None, &pairs(&[("p_e", "1.5")]), None).unwrap_err();
        assert!(e.to_string().contains("`p_e`"), "{e}");
        let e = RunConfig::resolve(None, &[], Some("abc")).unwrap_err();
        assert!(e.to_string().contains(SEED_ENV));
        assert!(matches!(RunConfig::default().dataset(), Err(ConfigError::Missing("dataset"))));
        assert!(matches!(parse_file("no equals sign"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(parse_overrides(&["--L".into()]).is_err());
        assert!(parse_overrides(&["L".into(), "3".into()]).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let overrides = pairs(&[("dataset", "d"), ("K", "inf"), ("score_agg", "sum"), ("pe_values", "0.2, 0.4")]);
        let cfg = RunConfig::resolve(Some("preset = wn18rr_v3\nmasking = off"), &overrides, None).unwrap();
        let again = RunConfig::resolve(Some(&cfg.to_text()), &[], Some("77")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn override_syntax() {
        let o = parse_overrides(&["--L".into(), "4".into(), "--p_e=0.3".into()]).unwrap();
        assert_eq!(o, pairs(&[("L", "4"), ("p_e", "0.3")]));
    }
}
