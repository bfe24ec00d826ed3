//! Run configuration: flat `key = value` text with `#` comments, plus
//! `--key=value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{Architecture, ModelKind, Task};
use crate::optim::TrainConfig;

pub type ConfigMap = BTreeMap<String, String>;

pub fn parse_config(text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{line}'", k + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", k + 1)));
        }
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key '{key}'", k + 1)));
        }
    }
    Ok(map)
}

pub fn read_config(path: impl AsRef<Path>) -> Result<ConfigMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Parses `--key=value`.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    let body = arg
        .strip_prefix("--")
        .ok_or_else(|| Error::Config(format!("override '{arg}' must look like --key=value")))?;
    let (k, v) = body
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{arg}' must look like --key=value")))?;
    if k.is_empty() {
        return Err(Error::Config(format!("override '{arg}' has an empty key")));
    }
    Ok((k.to_string(), v.to_string()))
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    /// Target column (CSV input).
    pub target: String,
    pub task: Task,
    pub categorical: Vec<String>,
    pub drop: Vec<String>,
    /// `none`, `minmax` or `quantile`.
    pub scaling: String,
    /// Declared width of sparse input; inferred when absent.
    pub num_features: Option<usize>,
    pub split_seed: u64,
    pub model: ModelKind,
    pub hidden: Option<Vec<usize>>,
    pub num_bases: usize,
    pub pair_bases: usize,
    pub num_subnets: usize,
    pub batch_norm: bool,
    pub train: TrainConfig,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
}

const KEYS: &[&str] = &[
    "data", "target", "task", "classes", "categorical", "drop", "scaling", "num_features",
    "split_seed", "model", "hidden", "num_bases", "pair_bases", "num_subnets", "batch_norm",
    "epochs", "batch_size", "lr", "weight_decay", "output_penalty", "dropout", "basis_dropout",
    "feature_dropout", "seed", "checkpoint", "history",
];

fn get<T: FromStr>(map: &ConfigMap, key: &str, default: T) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'"))),
    }
}

fn list(map: &ConfigMap, key: &str) -> Vec<String> {
    map.get(key)
        .map(|v| {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

fn parse_task(map: &ConfigMap) -> Result<Task> {
    let name = map.get("task").map_or("regression", String::as_str);
    match name {
        "regression" => Ok(Task::Regression),
        "binary" => Ok(Task::Binary),
        "multiclass" => {
            let classes: usize = get(map, "classes", 0)?;
            if classes < 2 {
                return Err(Error::Config("multiclass needs 'classes' ≥ 2".into()));
            }
            Ok(Task::Multiclass { classes })
        }
        other => Err(Error::Config(format!(
            "unknown task '{other}' (expected regression, binary or multiclass)"
        ))),
    }
}

impl RunConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key '{k}'")));
        }
        let data = map
            .get("data")
            .ok_or_else(|| Error::Config("missing key 'data'".into()))?;
        let d = TrainConfig::default();
        let train = TrainConfig {
            epochs: get(map, "epochs", d.epochs)?,
            batch_size: get(map, "batch_size", d.batch_size)?,
            lr: get(map, "lr", d.lr)?,
            weight_decay: get(map, "weight_decay", d.weight_decay)?,
            output_penalty: get(map, "output_penalty", d.output_penalty)?,
            dropout: get(map, "dropout", d.dropout)?,
            basis_dropout: get(map, "basis_dropout", d.basis_dropout)?,
            feature_dropout: get(map, "feature_dropout", d.feature_dropout)?,
            seed: get(map, "seed", d.seed)?,
        };
        train.validate()?;
        let hidden = match map.get("hidden") {
            None => None,
            Some(_) => Some(
                list(map, "hidden")
                    .iter()
                    .map(|w| {
                        w.parse::<usize>()
                            .ok()
                            .filter(|&w| w > 0)
                            .ok_or_else(|| Error::Config(format!("key 'hidden': bad width '{w}'")))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        let scaling = map.get("scaling").cloned().unwrap_or_else(|| "minmax".into());
        if !["none", "minmax", "quantile"].contains(&scaling.as_str()) {
            return Err(Error::Config(format!(
                "unknown scaling '{scaling}' (expected none, minmax or quantile)"
            )));
        }
        let cfg = Self {
            data: PathBuf::from(data),
            target: map.get("target").cloned().unwrap_or_else(|| "target".into()),
            task: parse_task(map)?,
            categorical: list(map, "categorical"),
            drop: list(map, "drop"),
            scaling,
            num_features: map
                .get("num_features")
                .map(|_| get(map, "num_features", 0))
                .transpose()?,
            split_seed: get(map, "split_seed", 0)?,
            model: map.get("model").map_or(Ok(ModelKind::Nbm), |v| v.parse())?,
            hidden,
            num_bases: get(map, "num_bases", 100)?,
            pair_bases: get(map, "pair_bases", 200)?,
            num_subnets: get(map, "num_subnets", 1)?,
            batch_norm: get(map, "batch_norm", false)?,
            train,
            checkpoint: PathBuf::from(map.get("checkpoint").map_or("model.json", String::as_str)),
            history: PathBuf::from(map.get("history").map_or("history.csv", String::as_str)),
        };
        Ok(cfg)
    }

    /// Architecture for `d` input features.
    pub fn architecture(&self, d: usize) -> Result<Architecture> {
        let mut arch = Architecture::new(self.model, d, self.task.num_outputs());
        if let Some(h) = &self.hidden {
            arch.hidden = h.clone();
        }
        arch.num_bases = self.num_bases;
        arch.pair_bases = self.pair_bases;
        arch.num_subnets = self.num_subnets;
        arch.batch_norm = self.batch_norm;
        arch.validate()?;
        Ok(arch)
    }

    /// Every key with its effective value.
    pub fn to_map(&self) -> ConfigMap {
        let mut m = ConfigMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("data", self.data.display().to_string());
        put("target", self.target.clone());
        match self.task {
            Task::Regression => put("task", "regression".into()),
            Task::Binary => put("task", "binary".into()),
            Task::Multiclass { classes } => {
                put("task", "multiclass".into());
                put("classes", classes.to_string());
            }
        }
        put("categorical", self.categorical.join(","));
        put("drop", self.drop.join(","));
        put("scaling", self.scaling.clone());
        if let Some(d) = self.num_features {
            put("num_features", d.to_string());
        }
        put("split_seed", self.split_seed.to_string());
        put("model", self.model.name().to_string());
        if let Some(h) = &self.hidden {
            put("hidden", h.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
        }
        put("num_bases", self.num_bases.to_string());
        put("pair_bases", self.pair_bases.to_string());
        put("num_subnets", self.num_subnets.to_string());
        put("batch_norm", self.batch_norm.to_string());
        let t = &self.train;
        put("epochs", t.epochs.to_string());
        put("batch_size", t.batch_size.to_string());
        put("lr", t.lr.to_string());
        put("weight_decay", t.weight_decay.to_string());
        put("output_penalty", t.output_penalty.to_string());
        put("dropout", t.dropout.to_string());
        put("basis_dropout", t.basis_dropout.to_string());
        put("feature_dropout", t.feature_dropout.to_string());
        put("seed", t.seed.to_string());
        put("checkpoint", self.checkpoint.display().to_string());
        put("history", self.history.display().to_string());
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut m = parse_config("# run\ndata = a.csv  # inline\n\nlr=0.5\n").unwrap();
        assert_eq!(m["data"], "a.csv");
        let (k, v) = parse_override("--lr=0.25").unwrap();
        m.insert(k, v);
        let c = RunConfig::from_map(&m).unwrap();
        assert_eq!(c.train.lr, 0.25);
        assert_eq!(RunConfig::from_map(&c.to_map()).unwrap(), c);
        assert!(parse_config("novalue").is_err());
        assert!(parse_config("a=1\na=2").is_err());
        assert!(parse_override("lr=1").is_err());
        m.insert("bogus".into(), "1".into());
        assert!(RunConfig::from_map(&m).is_err());
    }
}
