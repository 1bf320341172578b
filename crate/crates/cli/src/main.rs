//! Command-line entry point: validation, training, evaluation, the task
//! suite, batch prediction, synthetic corpus generation, and the acceptance
//! checks.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 config or validation failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stance_core::config::{ModelOptions, RunConfig};
use stance_core::data::splits::{build_splits, SplitRatios};
use stance_core::data::synth::{synth_generate, SynthConfig};
use stance_core::data::{
    load_labeled, load_policies, load_unlabeled, save_labeled, save_policies, save_unlabeled,
    us_states_graph, GeoGraph, LabeledExample, PolicyDescription, Stance, TopicRegistry,
    UnlabeledExample, UNKNOWN_REGION,
};
use stance_core::encoder::{build_pair, pad_batch, EncoderKind, HashTokenizer, Tokenizer, WordPieceTokenizer};
use stance_core::evaluation::{
    self, blank_policies, model_config_for, report_table, report_tsv, Corpora, MetricReport,
    ReportRow,
};
use stance_core::harness;
use stance_core::model::StanceModel;
use stance_core::training::{fit, format_epoch_log, TaskContext};
use stance_core::Error as CoreError;

/// Environment variable naming the directory that holds pretrained encoder
/// assets (`vocab.txt`); only consulted when `model.encoder = pretrained`.
const WEIGHTS_DIR_VAR: &str = "STANCE_WEIGHTS_DIR";

#[derive(Parser)]
#[command(name = "stance", about = "Adversarial cross-target stance classifier", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Options shared by every config-driven command.
#[derive(Args)]
struct ConfigArgs {
    /// Path to the run config file (`key = value` lines).
    config: PathBuf,
    /// Override a config key, e.g. `--set train.alpha=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Replace the configured seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Cross-check config, corpora, policy descriptions, and the region graph.
    Validate(ConfigArgs),
    /// Train the configured task; writes checkpoints and epoch logs.
    Train(ConfigArgs),
    /// Score a checkpoint on the configured task's dev and test splits.
    Eval {
        #[command(flatten)]
        common: ConfigArgs,
        /// Checkpoint file produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the full cross-target or zero-shot suite over all topics.
    Suite(ConfigArgs),
    /// Predict stances for an unlabeled input file under a checkpoint.
    Predict {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Unlabeled records, `topic<TAB>geo<TAB>text` per line.
        #[arg(long)]
        input: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic corpus bundle plus a ready-to-run config.
    Synth(SynthArgs),
    /// Run the acceptance criteria and print one PASS/FAIL line each.
    Accept,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to write the bundle into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    topics: usize,
    #[arg(long, default_value_t = 120)]
    labeled: usize,
    #[arg(long, default_value_t = 120)]
    unlabeled: usize,
    #[arg(long, default_value_t = 0.8)]
    cue_strength: f64,
    #[arg(long, default_value_t = 1.0)]
    marker_stance_bias: f64,
    #[arg(long, default_value_t = 0)]
    topic_tags: usize,
    #[arg(long, default_value_t = 6)]
    regions: usize,
    #[arg(long, default_value_t = 0.6)]
    geo_bias: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure modes mapped onto the exit-code contract.
enum CliError {
    /// Exit 2: bad config, bad flags, or validation findings.
    Config(String),
    /// Exit 1: failure during an otherwise well-configured run.
    Runtime(String),
}

type CliResult<T> = Result<T, CliError>;

/// Errors raised before any work starts are configuration errors; errors
/// from inside a run are runtime errors.
fn config_err(e: CoreError) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: CoreError) -> CliError {
    CliError::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Validate(common) => cmd_validate(&common),
        Cmd::Train(common) => cmd_train(&common),
        Cmd::Eval { common, checkpoint } => cmd_eval(&common, &checkpoint),
        Cmd::Suite(common) => cmd_suite(&common),
        Cmd::Predict { common, checkpoint, input, output } => {
            cmd_predict(&common, &checkpoint, &input, output.as_deref())
        }
        Cmd::Synth(args) => cmd_synth(&args),
        Cmd::Accept => cmd_accept(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(common: &ConfigArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&common.config).map_err(config_err)?;
    for assignment in &common.set {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            CliError::Config(format!("--set expects KEY=VALUE, got {assignment:?}"))
        })?;
        cfg.set(key.trim(), value).map_err(config_err)?;
    }
    if let Some(seed) = common.seed {
        cfg.train.seeds = vec![seed];
    }
    cfg.train.validate().map_err(config_err)?;
    Ok(cfg)
}

fn load_graph(path: &Path) -> Result<GeoGraph, CoreError> {
    let mut graph = if path == Path::new("us_states") {
        us_states_graph()
    } else {
        GeoGraph::load(path)?
    };
    graph.ensure_unknown();
    Ok(graph)
}

fn tokenizer_for(opts: &ModelOptions) -> CliResult<Box<dyn Tokenizer>> {
    match opts.encoder {
        EncoderKind::Tiny => Ok(Box::new(HashTokenizer::default())),
        EncoderKind::Pretrained => {
            let dir = std::env::var(WEIGHTS_DIR_VAR).map_err(|_| {
                CliError::Config(format!(
                    "model.encoder = pretrained requires {WEIGHTS_DIR_VAR} to point at the weights directory"
                ))
            })?;
            let vocab = Path::new(&dir).join("vocab.txt");
            Ok(Box::new(WordPieceTokenizer::from_vocab_file(&vocab).map_err(config_err)?))
        }
    }
}

// ---------------------------------------------------------------------------
// validate

/// One diagnostic from the validation pass.
struct Finding {
    file: String,
    /// 0 for file-level findings.
    line: usize,
    rule: &'static str,
    msg: String,
}

impl Finding {
    fn render(&self) -> String {
        if self.line == 0 {
            format!("{}: [{}] {}", self.file, self.rule, self.msg)
        } else {
            format!("{}:{}: [{}] {}", self.file, self.line, self.rule, self.msg)
        }
    }
}

/// Lenient whole-bundle scan: collects every finding instead of stopping at
/// the first, so one run reports all problems.
fn scan_bundle(cfg: &RunConfig) -> Vec<Finding> {
    let mut findings = Vec::new();

    let graph = match load_graph(&cfg.data.graph) {
        Ok(g) => Some(g),
        Err(e) => {
            findings.push(Finding {
                file: cfg.data.graph.display().to_string(),
                line: 0,
                rule: "GRAPH_INVALID",
                msg: e.to_string(),
            });
            None
        }
    };

    // Policy descriptions define the topic universe.
    let policy_file = cfg.data.policies.display().to_string();
    let mut topics: Vec<String> = Vec::new();
    match fs::read_to_string(&cfg.data.policies) {
        Err(e) => findings.push(Finding {
            file: policy_file.clone(),
            line: 0,
            rule: "FILE_MISSING",
            msg: e.to_string(),
        }),
        Ok(content) => {
            for (lineno, line) in content.lines().enumerate() {
                let lineno = lineno + 1;
                if line.is_empty() {
                    continue;
                }
                let Some((topic, desc)) = line.split_once('\t') else {
                    findings.push(Finding {
                        file: policy_file.clone(),
                        line: lineno,
                        rule: "SCHEMA",
                        msg: "expected topic<TAB>description".into(),
                    });
                    continue;
                };
                if desc.trim().is_empty() {
                    findings.push(Finding {
                        file: policy_file.clone(),
                        line: lineno,
                        rule: "DESC_EMPTY",
                        msg: format!("empty description for topic {topic:?}"),
                    });
                }
                if topics.iter().any(|t| t == topic) {
                    findings.push(Finding {
                        file: policy_file.clone(),
                        line: lineno,
                        rule: "DESC_DUPLICATE",
                        msg: format!("duplicate description for topic {topic:?}"),
                    });
                } else {
                    topics.push(topic.to_string());
                }
            }
        }
    }

    let check_geo = |findings: &mut Vec<Finding>, file: &str, lineno: usize, geo: &str| {
        if geo.is_empty() {
            return;
        }
        if let Some(g) = &graph {
            if g.index_of(geo).is_none() {
                findings.push(Finding {
                    file: file.to_string(),
                    line: lineno,
                    rule: "GEO_UNKNOWN",
                    msg: format!("region {geo:?} not in the graph"),
                });
            }
        }
    };
    let check_topic = |findings: &mut Vec<Finding>, file: &str, lineno: usize, topic: &str| {
        if !topics.iter().any(|t| t == topic) {
            findings.push(Finding {
                file: file.to_string(),
                line: lineno,
                rule: "DESC_MISSING",
                msg: format!("topic {topic:?} has no policy description"),
            });
        }
    };

    let labeled_file = cfg.data.labeled.display().to_string();
    match fs::read_to_string(&cfg.data.labeled) {
        Err(e) => findings.push(Finding {
            file: labeled_file.clone(),
            line: 0,
            rule: "FILE_MISSING",
            msg: e.to_string(),
        }),
        Ok(content) => {
            for (lineno, line) in content.lines().enumerate() {
                let lineno = lineno + 1;
                if line.is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.splitn(4, '\t').collect();
                if fields.len() != 4 {
                    findings.push(Finding {
                        file: labeled_file.clone(),
                        line: lineno,
                        rule: "SCHEMA",
                        msg: format!(
                            "expected 4 tab-separated fields (topic, stance, geo, text), got {}",
                            fields.len()
                        ),
                    });
                    continue;
                }
                check_topic(&mut findings, &labeled_file, lineno, fields[0]);
                if Stance::parse(fields[1]).is_none() {
                    findings.push(Finding {
                        file: labeled_file.clone(),
                        line: lineno,
                        rule: "STANCE_INVALID",
                        msg: format!("stance {:?} not one of: favor, against, none", fields[1]),
                    });
                }
                check_geo(&mut findings, &labeled_file, lineno, fields[2]);
            }
        }
    }

    let unlabeled_file = cfg.data.unlabeled.display().to_string();
    match fs::read_to_string(&cfg.data.unlabeled) {
        Err(e) => findings.push(Finding {
            file: unlabeled_file.clone(),
            line: 0,
            rule: "FILE_MISSING",
            msg: e.to_string(),
        }),
        Ok(content) => {
            for (lineno, line) in content.lines().enumerate() {
                let lineno = lineno + 1;
                if line.is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.splitn(3, '\t').collect();
                if fields.len() != 3 {
                    findings.push(Finding {
                        file: unlabeled_file.clone(),
                        line: lineno,
                        rule: "SCHEMA",
                        msg: format!(
                            "expected 3 tab-separated fields (topic, geo, text), got {}",
                            fields.len()
                        ),
                    });
                    continue;
                }
                check_topic(&mut findings, &unlabeled_file, lineno, fields[0]);
                check_geo(&mut findings, &unlabeled_file, lineno, fields[1]);
            }
        }
    }

    findings
}

fn cmd_validate(common: &ConfigArgs) -> CliResult<()> {
    let cfg = load_config(common)?;
    let findings = scan_bundle(&cfg);
    for f in &findings {
        println!("{}", f.render());
    }
    if findings.is_empty() {
        println!("ok: 0 findings");
        Ok(())
    } else {
        Err(CliError::Config(format!("{} validation finding(s)", findings.len())))
    }
}

// ---------------------------------------------------------------------------
// shared run plumbing

fn require_clean(cfg: &RunConfig) -> CliResult<()> {
    let findings = scan_bundle(cfg);
    if findings.is_empty() {
        return Ok(());
    }
    for f in &findings {
        eprintln!("{}", f.render());
    }
    Err(CliError::Config(format!("{} validation finding(s)", findings.len())))
}

fn load_corpora(cfg: &RunConfig) -> CliResult<Corpora> {
    let graph = load_graph(&cfg.data.graph).map_err(config_err)?;
    let registry_topics: Vec<String> = {
        // Topic universe = topics with a policy description, in file order.
        let content =
            fs::read_to_string(&cfg.data.policies).map_err(|e| CliError::Config(e.to_string()))?;
        content
            .lines()
            .filter(|l| !l.is_empty())
            .filter_map(|l| l.split_once('\t').map(|(t, _)| t.to_string()))
            .collect()
    };
    let registry = TopicRegistry::new(registry_topics);
    let policies = load_policies(&cfg.data.policies, &registry).map_err(config_err)?;
    let labeled = load_labeled(&cfg.data.labeled, &registry).map_err(config_err)?;
    let unlabeled = load_unlabeled(&cfg.data.unlabeled, &registry).map_err(config_err)?;

    let mut labeled_map: BTreeMap<String, Vec<LabeledExample>> = BTreeMap::new();
    for ex in labeled {
        labeled_map.entry(ex.topic_id.clone()).or_default().push(ex);
    }
    let mut unlabeled_map: BTreeMap<String, Vec<UnlabeledExample>> = BTreeMap::new();
    for ex in unlabeled {
        unlabeled_map.entry(ex.topic_id.clone()).or_default().push(ex);
    }
    Ok(Corpora { labeled: labeled_map, unlabeled: unlabeled_map, policies, graph })
}

/// Creates the output directory tree and writes the config snapshot, making
/// the run self-describing.
fn prepare_output_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = cfg.data.output_dir.clone();
    if dir.as_os_str().is_empty() {
        return Err(CliError::Config("data.output_dir must be set for this command".into()));
    }
    for sub in ["checkpoints", "logs", "reports"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    fs::write(dir.join("config.snapshot"), cfg.snapshot())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(dir)
}

/// Task names contain `->` and `:`; keep filenames shell-friendly.
fn file_stem(task: &str) -> String {
    task.replace("->", "_to_").replace(':', "_")
}

// ---------------------------------------------------------------------------
// train

fn cmd_train(common: &ConfigArgs) -> CliResult<()> {
    let cfg = load_config(common)?;
    require_clean(&cfg)?;
    let corpora = load_corpora(&cfg)?;
    let spec = cfg.task.to_spec().map_err(config_err)?;
    corpora.check_for(&spec).map_err(config_err)?;
    let tok = tokenizer_for(&cfg.model)?;
    let out_dir = prepare_output_dir(&cfg)?;

    let policies = if cfg.model.use_policy {
        corpora.policies.clone()
    } else {
        blank_policies(&corpora.policies)
    };
    let ctx = TaskContext { spec: &spec, policies: &policies, tok: tok.as_ref() };
    let mc = model_config_for(&cfg.model, &cfg.train, &corpora.graph, spec.topic_classes().len());
    let stem = file_stem(&spec.name());

    for &seed in &cfg.train.seeds {
        let splits = build_splits(
            &spec,
            &corpora.labeled,
            &corpora.unlabeled,
            SplitRatios::default(),
            seed,
        )
        .map_err(runtime_err)?;
        let model =
            StanceModel::new(mc.clone(), corpora.graph.clone(), seed).map_err(runtime_err)?;
        let result = fit(model, &ctx, &splits, &cfg.train, seed).map_err(runtime_err)?;

        let ckpt = out_dir.join("checkpoints").join(format!("{stem}_s{seed}.json"));
        result.model.save_checkpoint(&ckpt).map_err(runtime_err)?;
        let log = out_dir.join("logs").join(format!("{stem}_s{seed}.tsv"));
        fs::write(&log, format_epoch_log(&result.log))
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        println!(
            "{} seed {seed}: best dev F_avg {:.4} at epoch {} ({} epochs run); checkpoint {}",
            spec.name(),
            result.best_dev_f_avg,
            result.best_epoch,
            result.log.len(),
            ckpt.display()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

fn cmd_eval(common: &ConfigArgs, checkpoint: &Path) -> CliResult<()> {
    let cfg = load_config(common)?;
    if !checkpoint.exists() {
        return Err(CliError::Config(format!("checkpoint {} not found", checkpoint.display())));
    }
    require_clean(&cfg)?;
    let corpora = load_corpora(&cfg)?;
    let spec = cfg.task.to_spec().map_err(config_err)?;
    corpora.check_for(&spec).map_err(config_err)?;
    let tok = tokenizer_for(&cfg.model)?;
    let model = StanceModel::load_checkpoint(checkpoint).map_err(config_err)?;
    let out_dir = prepare_output_dir(&cfg)?;

    let policies = if cfg.model.use_policy {
        corpora.policies.clone()
    } else {
        blank_policies(&corpora.policies)
    };
    let seed = *cfg.train.seeds.first().ok_or_else(|| {
        CliError::Config("train.seeds must name the seed whose splits to evaluate".into())
    })?;
    let splits = build_splits(
        &spec,
        &corpora.labeled,
        &corpora.unlabeled,
        SplitRatios::default(),
        seed,
    )
    .map_err(runtime_err)?;

    let mut rows = Vec::new();
    for (split_name, examples) in [("dev", &splits.dev_labeled), ("test", &splits.test_labeled)] {
        let preds =
            evaluation::predict(&model, tok.as_ref(), &policies, examples, cfg.train.eval_batch)
                .map_err(runtime_err)?;
        let golds: Vec<Stance> = examples.iter().map(|e| e.stance).collect();
        let metrics = MetricReport::compute(&preds, &golds, cfg.train.three_class_f_avg)
            .map_err(runtime_err)?;
        rows.push(ReportRow {
            task: format!("{}[{split_name}]", spec.name()),
            seed: seed.to_string(),
            metrics,
        });
    }

    let stem = file_stem(&spec.name());
    let tsv = out_dir.join("reports").join(format!("eval_{stem}_s{seed}.tsv"));
    fs::write(&tsv, report_tsv(&rows)).map_err(|e| CliError::Runtime(e.to_string()))?;
    print!("{}", report_table(&rows));
    println!("written: {}", tsv.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// suite

fn cmd_suite(common: &ConfigArgs) -> CliResult<()> {
    let cfg = load_config(common)?;
    require_clean(&cfg)?;
    let corpora = load_corpora(&cfg)?;
    let tok = tokenizer_for(&cfg.model)?;
    let out_dir = prepare_output_dir(&cfg)?;

    let suite = evaluation::run_suite(cfg.task.mode, &corpora, &cfg.model, &cfg.train, tok.as_ref())
        .map_err(runtime_err)?;

    for run in &suite.runs {
        let stem = file_stem(&run.task);
        for (seed, log) in &run.logs {
            let path = out_dir.join("logs").join(format!("{stem}_s{seed}.tsv"));
            fs::write(&path, format_epoch_log(log))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    let rows = suite.rows();
    let tsv_path = out_dir.join("reports").join(format!("suite_{}.tsv", cfg.task.mode));
    fs::write(&tsv_path, report_tsv(&rows)).map_err(|e| CliError::Runtime(e.to_string()))?;
    let table = report_table(&rows);
    let table_path = out_dir.join("reports").join(format!("suite_{}.txt", cfg.task.mode));
    fs::write(&table_path, &table).map_err(|e| CliError::Runtime(e.to_string()))?;
    print!("{table}");
    println!("written: {}", tsv_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// predict

fn cmd_predict(
    common: &ConfigArgs,
    checkpoint: &Path,
    input: &Path,
    output: Option<&Path>,
) -> CliResult<()> {
    let cfg = load_config(common)?;
    if !checkpoint.exists() {
        return Err(CliError::Config(format!("checkpoint {} not found", checkpoint.display())));
    }
    let corpora = load_corpora(&cfg)?;
    let tok = tokenizer_for(&cfg.model)?;
    let model = StanceModel::load_checkpoint(checkpoint).map_err(config_err)?;
    let registry = TopicRegistry::new(corpora.policies.keys().cloned().collect());
    let examples = load_unlabeled(input, &registry).map_err(runtime_err)?;
    let policies = if cfg.model.use_policy {
        corpora.policies.clone()
    } else {
        blank_policies(&corpora.policies)
    };

    let mut out = String::new();
    for chunk in examples.chunks(cfg.train.eval_batch.max(1)) {
        let mut pairs = Vec::with_capacity(chunk.len());
        let mut geo = Vec::with_capacity(chunk.len());
        for ex in chunk {
            let policy = policies.get(&ex.topic_id).ok_or_else(|| {
                CliError::Runtime(format!("no policy description for topic {}", ex.topic_id))
            })?;
            pairs.push(build_pair(policy, &ex.text, tok.as_ref()).map_err(runtime_err)?);
            let gi = ex
                .geo_id
                .as_deref()
                .and_then(|g| model.graph.index_of(g))
                .or_else(|| model.graph.index_of(UNKNOWN_REGION))
                .ok_or_else(|| CliError::Runtime("graph lacks the unknown region".into()))?;
            geo.push(gi);
        }
        pad_batch(&mut pairs, tok.as_ref());
        let mut tape = stance_core::autodiff::Tape::new();
        let f = model.forward(&mut tape, &pairs, &geo, None).map_err(runtime_err)?;
        let probs = tape.value(f.stance_probs);
        for i in 0..chunk.len() {
            let mut best = 0;
            for k in 1..3 {
                if probs[[i, k]] > probs[[i, best]] {
                    best = k;
                }
            }
            out.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\n",
                Stance::from_index(best),
                probs[[i, 0]],
                probs[[i, 1]],
                probs[[i, 2]],
            ));
        }
    }
    match output {
        Some(path) => fs::write(path, out).map_err(|e| CliError::Runtime(e.to_string()))?,
        None => print!("{out}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// synth

fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let gen = SynthConfig {
        n_topics: args.topics,
        n_labeled_per_topic: args.labeled,
        n_unlabeled_per_topic: args.unlabeled,
        cue_strength: args.cue_strength,
        marker_stance_bias: args.marker_stance_bias,
        n_topic_tags: args.topic_tags,
        n_regions: args.regions,
        geo_bias: args.geo_bias,
        seed: args.seed,
        ..Default::default()
    };
    let corpus = synth_generate(&gen).map_err(config_err)?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::Runtime(e.to_string()))?;

    let labeled: Vec<LabeledExample> =
        corpus.labeled.values().flat_map(|v| v.iter().cloned()).collect();
    let unlabeled: Vec<UnlabeledExample> =
        corpus.unlabeled.values().flat_map(|v| v.iter().cloned()).collect();
    let policies: BTreeMap<String, PolicyDescription> = corpus.policies;

    save_labeled(&args.out.join("labeled.tsv"), &labeled).map_err(runtime_err)?;
    save_unlabeled(&args.out.join("unlabeled.tsv"), &unlabeled).map_err(runtime_err)?;
    save_policies(&args.out.join("policies.tsv"), &policies).map_err(runtime_err)?;
    corpus.graph.save(&args.out.join("graph.txt")).map_err(runtime_err)?;

    // A runnable starting config pointing at the generated files.
    let mut cfg = RunConfig::default();
    cfg.data.labeled = args.out.join("labeled.tsv");
    cfg.data.unlabeled = args.out.join("unlabeled.tsv");
    cfg.data.policies = args.out.join("policies.tsv");
    cfg.data.graph = args.out.join("graph.txt");
    cfg.data.output_dir = args.out.join("run");
    let topics: Vec<&String> = corpus.labeled.keys().collect();
    cfg.task.sources = vec![topics[0].clone()];
    cfg.task.destination = topics[1].clone();
    fs::write(args.out.join("run.cfg"), cfg.snapshot())
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    println!(
        "wrote {} labeled, {} unlabeled, {} topics, {} regions to {}",
        labeled.len(),
        unlabeled.len(),
        policies.len(),
        corpus.graph.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// accept

fn cmd_accept() -> CliResult<()> {
    let results = harness::run_all();
    print!("{}", harness::format_results(&results));
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(CliError::Runtime("one or more acceptance criteria failed".into()))
    }
}
