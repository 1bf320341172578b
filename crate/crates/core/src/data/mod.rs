//! Corpus ingestion, validation, splitting, and the synthetic generator.
//!
//! File formats (all UTF-8, line-delimited):
//! - labeled corpus: `topic<TAB>stance<TAB>geo<TAB>text`
//! - unlabeled corpus: `topic<TAB>geo<TAB>text` (empty geo = unknown)
//! - region graph: first line comma-separated region names, then one
//!   `regionA,regionB` undirected edge per line
//! - policy descriptions: `topic<TAB>description`
//!
//! Tabs, newlines, and backslashes inside text are escaped as `\t`, `\n`, `\\`.

mod graph;
pub mod splits;
pub mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use graph::{us_states_graph, GeoGraph, UNKNOWN_REGION};
pub use splits::{build_splits, SplitBundle, SplitRatios};

/// The three stance labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stance {
    Favor,
    Against,
    None,
}

impl Stance {
    pub const ALL: [Stance; 3] = [Stance::Favor, Stance::Against, Stance::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Favor => "favor",
            Stance::Against => "against",
            Stance::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Stance> {
        match s {
            "favor" => Some(Stance::Favor),
            "against" => Some(Stance::Against),
            "none" => Some(Stance::None),
            _ => None,
        }
    }

    /// Class index used by the stance head: favor=0, against=1, none=2.
    pub fn index(self) -> usize {
        match self {
            Stance::Favor => 0,
            Stance::Against => 1,
            Stance::None => 2,
        }
    }

    pub fn from_index(i: usize) -> Stance {
        Stance::ALL[i]
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A stance-annotated text from the labeled pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub topic_id: String,
    pub text: String,
    pub stance: Stance,
    pub geo_id: String,
}

/// An unannotated text; `geo_id = None` maps to the reserved unknown region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledExample {
    pub topic_id: String,
    pub text: String,
    pub geo_id: Option<String>,
}

/// External-knowledge text prepended to every input of its topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDescription {
    pub topic_id: String,
    pub description: String,
}

/// Ordered set of known topic ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRegistry {
    topics: Vec<String>,
}

impl TopicRegistry {
    pub fn new(mut topics: Vec<String>) -> Self {
        topics.dedup();
        TopicRegistry { topics }
    }

    pub fn contains(&self, topic: &str) -> bool {
        self.topics.iter().any(|t| t == topic)
    }

    pub fn index_of(&self, topic: &str) -> Option<usize> {
        self.topics.iter().position(|t| t == topic)
    }

    pub fn topics(&self) -> &[String] {
        &self.topics
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }
}

/// Experiment mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    CrossTarget,
    ZeroShot,
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskMode::CrossTarget => "cross_target",
            TaskMode::ZeroShot => "zero_shot",
        })
    }
}

/// One source(s) -> destination experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub mode: TaskMode,
    pub source_topics: Vec<String>,
    pub destination_topic: String,
    /// Optional per-task seed override; empty means use the train config's seeds.
    #[serde(default)]
    pub seed_list: Vec<u64>,
}

impl TaskSpec {
    pub fn cross_target(source: &str, destination: &str) -> Self {
        TaskSpec {
            mode: TaskMode::CrossTarget,
            source_topics: vec![source.to_string()],
            destination_topic: destination.to_string(),
            seed_list: Vec::new(),
        }
    }

    pub fn zero_shot(sources: &[&str], destination: &str) -> Self {
        TaskSpec {
            mode: TaskMode::ZeroShot,
            source_topics: sources.iter().map(|s| s.to_string()).collect(),
            destination_topic: destination.to_string(),
            seed_list: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            TaskMode::CrossTarget if self.source_topics.len() != 1 => {
                return Err(Error::Config(format!(
                    "cross_target requires exactly one source topic, got {}",
                    self.source_topics.len()
                )));
            }
            TaskMode::ZeroShot if self.source_topics.len() < 2 => {
                return Err(Error::Config(format!(
                    "zero_shot requires at least two source topics, got {}",
                    self.source_topics.len()
                )));
            }
            _ => {}
        }
        if self.source_topics.contains(&self.destination_topic) {
            return Err(Error::Config(format!(
                "destination topic {:?} must not appear among sources",
                self.destination_topic
            )));
        }
        Ok(())
    }

    /// Topics in discriminator-class order: sources first, then the destination.
    pub fn topic_classes(&self) -> Vec<String> {
        let mut out = self.source_topics.clone();
        out.push(self.destination_topic.clone());
        out
    }

    /// Short display name, e.g. `SH->WM` or `zero_shot:VA`.
    pub fn name(&self) -> String {
        match self.mode {
            TaskMode::CrossTarget => {
                format!("{}->{}", self.source_topics[0], self.destination_topic)
            }
            TaskMode::ZeroShot => format!("zero_shot:{}", self.destination_topic),
        }
    }
}

fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Loads a labeled corpus, validating stance labels and topic membership.
/// Input order is preserved.
pub fn load_labeled(path: &Path, registry: &TopicRegistry) -> Result<Vec<LabeledExample>> {
    let file = path.display().to_string();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let lineno = lineno + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                file,
                line: lineno,
                msg: format!(
                    "expected 4 tab-separated fields (topic, stance, geo, text), got {}",
                    fields.len()
                ),
            });
        }
        let (topic, stance_s, geo, text) = (fields[0], fields[1], fields[2], fields[3]);
        if !registry.contains(topic) {
            return Err(Error::Validation {
                file,
                line: lineno,
                rule: "TOPIC_UNKNOWN",
                msg: format!("unknown topic {:?}; known: {:?}", topic, registry.topics()),
            });
        }
        let stance = Stance::parse(stance_s).ok_or_else(|| Error::Validation {
            file: file.clone(),
            line: lineno,
            rule: "STANCE_INVALID",
            msg: format!("stance {stance_s:?} not one of: favor, against, none"),
        })?;
        let geo_id = if geo.is_empty() { UNKNOWN_REGION.to_string() } else { geo.to_string() };
        out.push(LabeledExample {
            topic_id: topic.to_string(),
            text: unescape_text(text),
            stance,
            geo_id,
        });
    }
    Ok(out)
}

/// Loads an unlabeled corpus. Input order is preserved.
pub fn load_unlabeled(path: &Path, registry: &TopicRegistry) -> Result<Vec<UnlabeledExample>> {
    let file = path.display().to_string();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let lineno = lineno + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                file,
                line: lineno,
                msg: format!(
                    "expected 3 tab-separated fields (topic, geo, text), got {}",
                    fields.len()
                ),
            });
        }
        let (topic, geo, text) = (fields[0], fields[1], fields[2]);
        if !registry.contains(topic) {
            return Err(Error::Validation {
                file,
                line: lineno,
                rule: "TOPIC_UNKNOWN",
                msg: format!("unknown topic {:?}; known: {:?}", topic, registry.topics()),
            });
        }
        out.push(UnlabeledExample {
            topic_id: topic.to_string(),
            text: unescape_text(text),
            geo_id: if geo.is_empty() { None } else { Some(geo.to_string()) },
        });
    }
    Ok(out)
}

pub fn save_labeled(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            ex.topic_id,
            ex.stance,
            ex.geo_id,
            escape_text(&ex.text)
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn save_unlabeled(path: &Path, examples: &[UnlabeledExample]) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            ex.topic_id,
            ex.geo_id.as_deref().unwrap_or(""),
            escape_text(&ex.text)
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads policy descriptions: one `topic<TAB>description` per line,
/// exactly one entry per topic, nonempty description.
pub fn load_policies(
    path: &Path,
    registry: &TopicRegistry,
) -> Result<BTreeMap<String, PolicyDescription>> {
    let file = path.display().to_string();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in content.lines().enumerate() {
        let lineno = lineno + 1;
        if line.is_empty() {
            continue;
        }
        let (topic, desc) = line.split_once('\t').ok_or_else(|| Error::Parse {
            file: file.clone(),
            line: lineno,
            msg: "expected topic<TAB>description".to_string(),
        })?;
        if !registry.contains(topic) {
            return Err(Error::Validation {
                file,
                line: lineno,
                rule: "TOPIC_UNKNOWN",
                msg: format!("unknown topic {topic:?}"),
            });
        }
        if desc.trim().is_empty() {
            return Err(Error::Validation {
                file,
                line: lineno,
                rule: "DESC_EMPTY",
                msg: format!("empty description for topic {topic:?}"),
            });
        }
        if out
            .insert(
                topic.to_string(),
                PolicyDescription {
                    topic_id: topic.to_string(),
                    description: unescape_text(desc),
                },
            )
            .is_some()
        {
            return Err(Error::Validation {
                file,
                line: lineno,
                rule: "DESC_DUPLICATE",
                msg: format!("duplicate description for topic {topic:?}"),
            });
        }
    }
    Ok(out)
}

pub fn save_policies(path: &Path, policies: &BTreeMap<String, PolicyDescription>) -> Result<()> {
    let mut out = String::new();
    for p in policies.values() {
        out.push_str(&format!("{}\t{}\n", p.topic_id, escape_text(&p.description)));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-stance counts of a labeled corpus, e.g. for checking label histograms.
pub fn label_histogram(examples: &[LabeledExample]) -> BTreeMap<Stance, usize> {
    let mut h = BTreeMap::new();
    for ex in examples {
        *h.entry(ex.stance).or_insert(0) += 1;
    }
    h
}
