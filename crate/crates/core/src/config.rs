//! Run configuration: a flat `key = value` file with dotted section prefixes
//! (`train.alpha = 0.01`), every key overridable individually. The parsed
//! form can be re-serialized as a snapshot so each run is self-describing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{TaskMode, TaskSpec};
use crate::encoder::EncoderKind;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Input/output locations. The graph path may be the literal `us_states` to
/// use the built-in US adjacency.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataPaths {
    pub labeled: PathBuf,
    pub unlabeled: PathBuf,
    pub graph: PathBuf,
    pub policies: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptions {
    pub encoder: EncoderKind,
    pub use_geo: bool,
    pub use_policy: bool,
    pub geo_normalized: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            encoder: EncoderKind::Tiny,
            use_geo: true,
            use_policy: true,
            geo_normalized: false,
        }
    }
}

/// Task selection as written in a config file; empty sources mean the task
/// section was not provided (suite commands enumerate their own tasks).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOptions {
    pub mode: TaskMode,
    pub sources: Vec<String>,
    pub destination: String,
}

impl Default for TaskOptions {
    fn default() -> Self {
        TaskOptions { mode: TaskMode::CrossTarget, sources: Vec::new(), destination: String::new() }
    }
}

impl TaskOptions {
    pub fn to_spec(&self) -> Result<TaskSpec> {
        if self.sources.is_empty() || self.destination.is_empty() {
            return Err(Error::Config(
                "task.sources and task.destination must be set for this command".into(),
            ));
        }
        let spec = TaskSpec {
            mode: self.mode,
            source_topics: self.sources.clone(),
            destination_topic: self.destination.clone(),
            seed_list: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub task: TaskOptions,
    pub data: DataPaths,
    pub model: ModelOptions,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::Config(format!("invalid boolean {other:?} for key {key}"))),
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

impl RunConfig {
    /// Applies one dotted-key assignment. Unknown keys are an error so typos
    /// fail fast.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "train.batch_size" => self.train.batch_size = parse_num(key, v)?,
            "train.dropout" => self.train.dropout = parse_num(key, v)?,
            "train.max_epochs" => self.train.max_epochs = parse_num(key, v)?,
            "train.min_epochs" => self.train.min_epochs = parse_num(key, v)?,
            "train.patience" => self.train.patience = parse_num(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse_num(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse_num(key, v)?,
            "train.alpha" => self.train.alpha = parse_num(key, v)?,
            "train.lambda" => self.train.lambda = parse_num(key, v)?,
            "train.geo_hidden" => self.train.geo_hidden = parse_num(key, v)?,
            "train.gcn_layers" => self.train.gcn_layers = parse_num(key, v)?,
            "train.seeds" => {
                let seeds: Result<Vec<u64>> =
                    parse_list(v).iter().map(|s| parse_num(key, s)).collect();
                self.train.seeds = seeds?;
            }
            "train.three_class_f_avg" => self.train.three_class_f_avg = parse_bool(key, v)?,
            "train.eval_batch" => self.train.eval_batch = parse_num(key, v)?,
            "train.disc_lr_scale" => self.train.disc_lr_scale = parse_num(key, v)?,
            "train.sep_lr_scale" => self.train.sep_lr_scale = parse_num(key, v)?,
            "train.encoder_lr_scale" => self.train.encoder_lr_scale = parse_num(key, v)?,
            "train.grad_clip" => {
                self.train.grad_clip =
                    if v == "off" { None } else { Some(parse_num(key, v)?) };
            }
            "task.mode" => {
                self.task.mode = match v {
                    "cross_target" => TaskMode::CrossTarget,
                    "zero_shot" => TaskMode::ZeroShot,
                    other => {
                        return Err(Error::Config(format!(
                            "invalid task.mode {other:?}; expected cross_target or zero_shot"
                        )));
                    }
                };
            }
            "task.sources" => self.task.sources = parse_list(v),
            "task.destination" => self.task.destination = v.to_string(),
            "data.labeled" => self.data.labeled = PathBuf::from(v),
            "data.unlabeled" => self.data.unlabeled = PathBuf::from(v),
            "data.graph" => self.data.graph = PathBuf::from(v),
            "data.policies" => self.data.policies = PathBuf::from(v),
            "data.output_dir" => self.data.output_dir = PathBuf::from(v),
            "model.encoder" => {
                self.model.encoder = match v {
                    "tiny" => EncoderKind::Tiny,
                    "pretrained" => EncoderKind::Pretrained,
                    other => {
                        return Err(Error::Config(format!(
                            "invalid model.encoder {other:?}; expected tiny or pretrained"
                        )));
                    }
                };
            }
            "model.use_geo" => self.model.use_geo = parse_bool(key, v)?,
            "model.use_policy" => self.model.use_policy = parse_bool(key, v)?,
            "model.geo_normalized" => self.model.geo_normalized = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses config text: one `key = value` per line, `#` comments, blank
    /// lines ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: "<config>".into(),
                line: lineno + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            cfg.set(key.trim(), value).map_err(|e| Error::Parse {
                file: "<config>".into(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => {
                Error::Parse { file: path.display().to_string(), line, msg }
            }
            other => other,
        })
    }

    /// Full key set in a fixed order; re-parsing the snapshot reproduces the
    /// config exactly.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let t = &self.train;
        let _ = writeln!(s, "train.batch_size = {}", t.batch_size);
        let _ = writeln!(s, "train.dropout = {}", t.dropout);
        let _ = writeln!(s, "train.max_epochs = {}", t.max_epochs);
        let _ = writeln!(s, "train.min_epochs = {}", t.min_epochs);
        let _ = writeln!(s, "train.patience = {}", t.patience);
        let _ = writeln!(s, "train.learning_rate = {}", t.learning_rate);
        let _ = writeln!(s, "train.weight_decay = {}", t.weight_decay);
        let _ = writeln!(s, "train.alpha = {}", t.alpha);
        let _ = writeln!(s, "train.lambda = {}", t.lambda);
        let _ = writeln!(s, "train.geo_hidden = {}", t.geo_hidden);
        let _ = writeln!(s, "train.gcn_layers = {}", t.gcn_layers);
        let seeds: Vec<String> = t.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "train.seeds = {}", seeds.join(","));
        let _ = writeln!(s, "train.three_class_f_avg = {}", t.three_class_f_avg);
        let _ = writeln!(s, "train.eval_batch = {}", t.eval_batch);
        let _ = writeln!(s, "train.disc_lr_scale = {}", t.disc_lr_scale);
        let _ = writeln!(s, "train.sep_lr_scale = {}", t.sep_lr_scale);
        let _ = writeln!(s, "train.encoder_lr_scale = {}", t.encoder_lr_scale);
        match t.grad_clip {
            Some(c) => {
                let _ = writeln!(s, "train.grad_clip = {c}");
            }
            None => {
                let _ = writeln!(s, "train.grad_clip = off");
            }
        }
        let _ = writeln!(s, "task.mode = {}", self.task.mode);
        let _ = writeln!(s, "task.sources = {}", self.task.sources.join(","));
        let _ = writeln!(s, "task.destination = {}", self.task.destination);
        let _ = writeln!(s, "data.labeled = {}", self.data.labeled.display());
        let _ = writeln!(s, "data.unlabeled = {}", self.data.unlabeled.display());
        let _ = writeln!(s, "data.graph = {}", self.data.graph.display());
        let _ = writeln!(s, "data.policies = {}", self.data.policies.display());
        let _ = writeln!(s, "data.output_dir = {}", self.data.output_dir.display());
        let kind = match self.model.encoder {
            EncoderKind::Tiny => "tiny",
            EncoderKind::Pretrained => "pretrained",
        };
        let _ = writeln!(s, "model.encoder = {kind}");
        let _ = writeln!(s, "model.use_geo = {}", self.model.use_geo);
        let _ = writeln!(s, "model.use_policy = {}", self.model.use_policy);
        let _ = writeln!(s, "model.geo_normalized = {}", self.model.geo_normalized);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_snapshot() {
        let cfg = RunConfig::default();
        let again = RunConfig::parse(&cfg.snapshot()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn parse_sets_values_and_ignores_comments() {
        let cfg = RunConfig::parse(
            "# a comment\n\
             train.alpha = 0.5\n\
             \n\
             train.seeds = 7, 8, 9\n\
             task.mode = zero_shot\n\
             task.sources = SH,WM\n\
             task.destination = VA\n\
             model.use_geo = false\n",
        )
        .unwrap();
        assert_eq!(cfg.train.alpha, 0.5);
        assert_eq!(cfg.train.seeds, vec![7, 8, 9]);
        assert_eq!(cfg.task.mode, TaskMode::ZeroShot);
        assert!(!cfg.model.use_geo);
        let spec = cfg.task.to_spec().unwrap();
        assert_eq!(spec.name(), "zero_shot:VA");
    }

    #[test]
    fn unknown_key_is_an_error_with_line() {
        let err = RunConfig::parse("train.alpha = 0.1\ntrain.alpa = 0.2\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("train.alpa"), "{msg}");
        assert!(msg.contains(":2:"), "{msg}");
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("train.alpha", "zero").is_err());
        assert!(cfg.set("model.encoder", "huge").is_err());
        assert!(cfg.set("task.mode", "few_shot").is_err());
        assert!(cfg.set("model.use_geo", "maybe").is_err());
    }

    #[test]
    fn grad_clip_off_and_on() {
        let mut cfg = RunConfig::default();
        cfg.set("train.grad_clip", "2.5").unwrap();
        assert_eq!(cfg.train.grad_clip, Some(2.5));
        cfg.set("train.grad_clip", "off").unwrap();
        assert_eq!(cfg.train.grad_clip, None);
        let again = RunConfig::parse(&cfg.snapshot()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn task_spec_requires_fields() {
        let cfg = RunConfig::default();
        assert!(cfg.task.to_spec().is_err());
    }
}
