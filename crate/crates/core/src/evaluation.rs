//! Stance metrics and model evaluation on held-out destination topics.
//!
//! The headline numbers are F_avg, the mean of the favor and against F1
//! scores, and F_m, the mean of micro-averaged and macro-averaged F1 over
//! all three classes. Undefined ratios (zero denominators) score 0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::splits::{build_splits, SplitRatios};
use crate::data::{
    GeoGraph, LabeledExample, PolicyDescription, Stance, TaskMode, TaskSpec, UnlabeledExample,
};
use crate::config::ModelOptions;
use crate::encoder::{build_pair, pad_batch, EncoderKind, Tokenizer};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, StanceModel};
use crate::training::{fit, EpochLog, TaskContext, TrainConfig};

/// Per-class F1 from predicted and gold class indices.
/// A class absent from both predictions and gold gets F1 = 0.
pub fn f1_per_class(preds: &[usize], golds: &[usize], n_classes: usize) -> Vec<f64> {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &g) in preds.iter().zip(golds) {
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    (0..n_classes)
        .map(|k| {
            let denom = 2 * tp[k] + fp[k] + fn_[k];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[k] as f64 / denom as f64
            }
        })
        .collect()
}

/// Micro-averaged F1 over all classes: with single-label predictions this
/// equals accuracy.
pub fn micro_f1(preds: &[usize], golds: &[usize]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    correct as f64 / preds.len() as f64
}

/// Unweighted mean of per-class F1.
pub fn macro_f1(preds: &[usize], golds: &[usize], n_classes: usize) -> f64 {
    let f1 = f1_per_class(preds, golds, n_classes);
    f1.iter().sum::<f64>() / n_classes as f64
}

/// All scores for one (task, seed) evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub f_favor: f64,
    pub f_against: f64,
    pub f_none: f64,
    pub f_avg: f64,
    pub micro: f64,
    pub macro_: f64,
    pub f_m: f64,
    pub n: usize,
}

impl MetricReport {
    /// Scores predictions against gold stances. `three_class_f_avg` widens
    /// F_avg to include the none class.
    pub fn compute(preds: &[Stance], golds: &[Stance], three_class_f_avg: bool) -> Result<Self> {
        if preds.len() != golds.len() {
            return Err(Error::Shape {
                context: "metrics".into(),
                expected: format!("{} predictions", golds.len()),
                actual: format!("{}", preds.len()),
            });
        }
        if golds.is_empty() {
            return Err(Error::EmptyInput("empty evaluation set".into()));
        }
        let p: Vec<usize> = preds.iter().map(|s| s.index()).collect();
        let g: Vec<usize> = golds.iter().map(|s| s.index()).collect();
        let f1 = f1_per_class(&p, &g, 3);
        let f_avg = if three_class_f_avg {
            (f1[0] + f1[1] + f1[2]) / 3.0
        } else {
            (f1[0] + f1[1]) / 2.0
        };
        let micro = micro_f1(&p, &g);
        let macro_ = macro_f1(&p, &g, 3);
        Ok(MetricReport {
            f_favor: f1[0],
            f_against: f1[1],
            f_none: f1[2],
            f_avg,
            micro,
            macro_,
            f_m: (micro + macro_) / 2.0,
            n: golds.len(),
        })
    }

    /// Elementwise mean over per-seed reports.
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport> {
        if reports.is_empty() {
            return Err(Error::EmptyInput("no reports to average".into()));
        }
        let m = reports.len() as f64;
        let sum = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / m;
        Ok(MetricReport {
            f_favor: sum(&|r| r.f_favor),
            f_against: sum(&|r| r.f_against),
            f_none: sum(&|r| r.f_none),
            f_avg: sum(&|r| r.f_avg),
            micro: sum(&|r| r.micro),
            macro_: sum(&|r| r.macro_),
            f_m: sum(&|r| r.f_m),
            n: reports[0].n,
        })
    }
}

/// Predicts stances for labeled examples in evaluation mode (no dropout).
/// Each example is paired with its own topic's policy description.
/// Ties in the probability row resolve to the lowest class index.
pub fn predict(
    model: &StanceModel,
    tok: &dyn Tokenizer,
    policies: &BTreeMap<String, PolicyDescription>,
    examples: &[LabeledExample],
    batch_size: usize,
) -> Result<Vec<Stance>> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("empty prediction set".into()));
    }
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let mut pairs = Vec::with_capacity(chunk.len());
        let mut geo = Vec::with_capacity(chunk.len());
        for ex in chunk {
            let policy = policies.get(&ex.topic_id).ok_or_else(|| {
                Error::UnknownTopic(format!("no policy description for topic {}", ex.topic_id))
            })?;
            pairs.push(build_pair(policy, &ex.text, tok)?);
            let gi = model
                .graph
                .index_of(&ex.geo_id)
                .or_else(|| model.graph.index_of(crate::data::UNKNOWN_REGION))
                .ok_or_else(|| Error::UnknownRegion(ex.geo_id.clone()))?;
            geo.push(gi);
        }
        pad_batch(&mut pairs, tok);
        let mut tape = crate::autodiff::Tape::new();
        let f = model.forward(&mut tape, &pairs, &geo, None)?;
        let probs = tape.value(f.stance_probs);
        for i in 0..chunk.len() {
            let mut best = 0;
            for k in 1..3 {
                if probs[[i, k]] > probs[[i, best]] {
                    best = k;
                }
            }
            out.push(Stance::from_index(best));
        }
    }
    Ok(out)
}

/// One scored row of a suite report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    /// Seed string, or `mean` for the per-task average row.
    pub seed: String,
    pub metrics: MetricReport,
}

pub const REPORT_HEADER: &str =
    "task\tseed\tF_favor\tF_against\tF_none\tF_avg\tmicro\tmacro\tF_m";

/// Machine-readable TSV: header plus one row per (task, seed) and mean.
pub fn report_tsv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
            r.task, r.seed, m.f_favor, m.f_against, m.f_none, m.f_avg, m.micro, m.macro_, m.f_m
        ));
    }
    out
}

/// Column-aligned text table of the same rows.
pub fn report_table(rows: &[ReportRow]) -> String {
    let headers = ["task", "seed", "F_favor", "F_against", "F_none", "F_avg", "micro", "macro", "F_m"];
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let m = &r.metrics;
            vec![
                r.task.clone(),
                r.seed.clone(),
                format!("{:.4}", m.f_favor),
                format!("{:.4}", m.f_against),
                format!("{:.4}", m.f_none),
                format!("{:.4}", m.f_avg),
                format!("{:.4}", m.micro),
                format!("{:.4}", m.macro_),
                format!("{:.4}", m.f_m),
            ]
        })
        .collect();
    let widths: Vec<usize> = headers
        .iter()
        .enumerate()
        .map(|(j, h)| {
            cells
                .iter()
                .map(|row| row[j].len())
                .chain(std::iter::once(h.len()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let fmt_row = |row: &[String]| -> String {
        row.iter()
            .enumerate()
            .map(|(j, c)| format!("{:<width$}", c, width = widths[j]))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let header_cells: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    let mut out = fmt_row(&header_cells);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in &cells {
        out.push_str(&fmt_row(row));
        out.push('\n');
    }
    out
}

/// Everything a task needs: per-topic corpora, descriptions, and the region
/// graph.
#[derive(Debug, Clone)]
pub struct Corpora {
    pub labeled: BTreeMap<String, Vec<LabeledExample>>,
    pub unlabeled: BTreeMap<String, Vec<UnlabeledExample>>,
    pub policies: BTreeMap<String, PolicyDescription>,
    pub graph: GeoGraph,
}

impl Corpora {
    pub fn topics(&self) -> Vec<String> {
        self.labeled.keys().cloned().collect()
    }

    /// Checks coverage for one task: labeled data, policy descriptions, and
    /// known regions for every involved topic.
    pub fn check_for(&self, spec: &TaskSpec) -> Result<()> {
        spec.validate()?;
        for topic in spec.topic_classes() {
            if !self.labeled.contains_key(&topic) {
                return Err(Error::UnknownTopic(format!("no labeled corpus for topic {topic}")));
            }
            if !self.policies.contains_key(&topic) {
                return Err(Error::UnknownTopic(format!(
                    "no policy description for topic {topic}"
                )));
            }
        }
        for examples in self.labeled.values() {
            for ex in examples {
                if self.graph.index_of(&ex.geo_id).is_none() {
                    return Err(Error::UnknownRegion(ex.geo_id.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Builds the model configuration for a task from the training settings and
/// the model switches.
pub fn model_config_for(
    opts: &ModelOptions,
    cfg: &TrainConfig,
    graph: &GeoGraph,
    n_topics: usize,
) -> ModelConfig {
    let mut mc = match opts.encoder {
        EncoderKind::Tiny => ModelConfig::tiny(graph.len(), n_topics),
        EncoderKind::Pretrained => {
            ModelConfig::pretrained(graph.len(), n_topics, cfg.geo_hidden)
        }
    };
    mc.geo_dim = cfg.geo_hidden;
    mc.gcn_layers = cfg.gcn_layers;
    mc.grl_lambda = cfg.lambda;
    mc.dropout = cfg.dropout;
    mc.use_geo = opts.use_geo;
    mc.geo_normalized = opts.geo_normalized;
    mc
}

/// Replaces every policy description with an empty string, for the
/// no-external-knowledge ablation.
pub fn blank_policies(
    policies: &BTreeMap<String, PolicyDescription>,
) -> BTreeMap<String, PolicyDescription> {
    policies
        .iter()
        .map(|(k, p)| {
            (
                k.clone(),
                PolicyDescription { topic_id: p.topic_id.clone(), description: String::new() },
            )
        })
        .collect()
}

/// Outcome of one task across its seeds.
#[derive(Debug, Clone)]
pub struct TaskRun {
    pub task: String,
    pub per_seed: Vec<(u64, MetricReport)>,
    pub mean: MetricReport,
    /// Training curves, one per seed, for log persistence.
    pub logs: Vec<(u64, Vec<EpochLog>)>,
}

impl TaskRun {
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows: Vec<ReportRow> = self
            .per_seed
            .iter()
            .map(|(seed, m)| ReportRow {
                task: self.task.clone(),
                seed: seed.to_string(),
                metrics: *m,
            })
            .collect();
        rows.push(ReportRow { task: self.task.clone(), seed: "mean".into(), metrics: self.mean });
        rows
    }
}

/// Trains and evaluates one task for every configured seed, reporting
/// per-seed scores and their mean. The seed drives the split shuffle, the
/// parameter initialization, and the batch order.
pub fn run_task(
    spec: &TaskSpec,
    corpora: &Corpora,
    opts: &ModelOptions,
    cfg: &TrainConfig,
    tok: &dyn Tokenizer,
) -> Result<TaskRun> {
    cfg.validate()?;
    corpora.check_for(spec)?;
    let seeds = if spec.seed_list.is_empty() { cfg.seeds.clone() } else { spec.seed_list.clone() };
    let policies =
        if opts.use_policy { corpora.policies.clone() } else { blank_policies(&corpora.policies) };
    let ctx = TaskContext { spec, policies: &policies, tok };
    let mc = model_config_for(opts, cfg, &corpora.graph, spec.topic_classes().len());

    let mut per_seed = Vec::new();
    let mut logs = Vec::new();
    for &seed in &seeds {
        let splits = build_splits(
            spec,
            &corpora.labeled,
            &corpora.unlabeled,
            SplitRatios::default(),
            seed,
        )?;
        let model = StanceModel::new(mc.clone(), corpora.graph.clone(), seed)?;
        let result = fit(model, &ctx, &splits, cfg, seed)?;
        let preds =
            predict(&result.model, tok, &policies, &splits.test_labeled, cfg.eval_batch)?;
        let golds: Vec<Stance> = splits.test_labeled.iter().map(|e| e.stance).collect();
        let report = MetricReport::compute(&preds, &golds, cfg.three_class_f_avg)?;
        per_seed.push((seed, report));
        logs.push((seed, result.log));
    }
    let mean = MetricReport::mean(&per_seed.iter().map(|(_, m)| *m).collect::<Vec<_>>())?;
    Ok(TaskRun { task: spec.name(), per_seed, mean, logs })
}

/// Enumerates the task list for a suite over the corpora's topics:
/// every ordered source-destination pair for cross-target, or one task per
/// held-out destination (all others as sources) for zero-shot.
pub fn suite_tasks(mode: TaskMode, topics: &[String]) -> Result<Vec<TaskSpec>> {
    if topics.len() < 2 {
        return Err(Error::Config(format!("suite needs >= 2 topics, got {}", topics.len())));
    }
    match mode {
        TaskMode::CrossTarget => Ok(topics
            .iter()
            .flat_map(|src| {
                topics
                    .iter()
                    .filter(move |dst| *dst != src)
                    .map(move |dst| TaskSpec::cross_target(src, dst))
            })
            .collect()),
        TaskMode::ZeroShot => {
            if topics.len() < 3 {
                return Err(Error::Config(format!(
                    "zero-shot suite needs >= 3 topics, got {}",
                    topics.len()
                )));
            }
            Ok(topics
                .iter()
                .map(|dst| {
                    let sources: Vec<&str> = topics
                        .iter()
                        .filter(|t| *t != dst)
                        .map(String::as_str)
                        .collect();
                    TaskSpec::zero_shot(&sources, dst)
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub runs: Vec<TaskRun>,
}

impl SuiteResult {
    pub fn rows(&self) -> Vec<ReportRow> {
        self.runs.iter().flat_map(TaskRun::rows).collect()
    }
}

/// Runs the full task suite for a mode over every topic in the corpora.
pub fn run_suite(
    mode: TaskMode,
    corpora: &Corpora,
    opts: &ModelOptions,
    cfg: &TrainConfig,
    tok: &dyn Tokenizer,
) -> Result<SuiteResult> {
    let tasks = suite_tasks(mode, &corpora.topics())?;
    let mut runs = Vec::with_capacity(tasks.len());
    for spec in &tasks {
        runs.push(run_task(spec, corpora, opts, cfg, tok)?);
    }
    Ok(SuiteResult { runs })
}
