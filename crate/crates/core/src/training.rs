//! Adversarial training loop: stance loss on labeled source batches plus the
//! discounted topic-discrimination loss on pooled batches, one backward pass,
//! AdamW updates, and dev-based early stopping.
//!
//! The gradient reversal sits between `f_i` and the discriminator, so a
//! single descent step on `L_sc + alpha * L_td` trains the discriminator
//! normally while pushing the shared representation to hide topic identity
//! with effective pressure `alpha * lambda`.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::data::{LabeledExample, PolicyDescription, TaskSpec, UnlabeledExample};
use crate::data::splits::SplitBundle;
use crate::encoder::{build_pair, pad_batch, TokenPair, Tokenizer};
use crate::error::{Error, Result};
use crate::evaluation::{self, MetricReport};
use crate::model::StanceModel;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    /// Warmup epochs before dev evaluation and model selection begin.
    /// Useful when the adversarial game needs time to reach equilibrium
    /// before checkpoints are worth considering.
    pub min_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Trade-off weight on the topic-discrimination loss.
    pub alpha: f64,
    /// Gradient-reversal strength.
    pub lambda: f64,
    /// Region feature width F.
    pub geo_hidden: usize,
    pub gcn_layers: usize,
    pub seeds: Vec<u64>,
    /// Widen dev/test F_avg to all three classes.
    pub three_class_f_avg: bool,
    pub eval_batch: usize,
    /// Global gradient-norm clip; off by default.
    pub grad_clip: Option<f64>,
    /// Learning-rate multiplier for the topic-discriminator head. Above 1
    /// the discriminator tracks its best response more closely, which
    /// strengthens the invariance pressure on the shared parameters.
    pub disc_lr_scale: f64,
    /// Learning-rate multiplier for the separation map. Above 1 the
    /// reversed topic gradient is absorbed mostly by the feature split
    /// (moving topic content into the stance stream) rather than by eroding
    /// the encoder representation itself.
    pub sep_lr_scale: f64,
    /// Learning-rate multiplier for the text encoder. Below 1 the encoder
    /// representation changes slowly, which limits how much the reversed
    /// topic gradient can erode topic content out of the context vector.
    pub encoder_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            dropout: 0.1,
            max_epochs: 100,
            min_epochs: 1,
            patience: 10,
            learning_rate: 2e-5,
            weight_decay: 5e-5,
            alpha: 0.01,
            lambda: 0.1,
            geo_hidden: 256,
            gcn_layers: 2,
            seeds: vec![1, 2, 3, 4, 5],
            three_class_f_avg: false,
            eval_batch: 32,
            grad_clip: None,
            disc_lr_scale: 1.0,
            sep_lr_scale: 1.0,
            encoder_lr_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs, and patience must be positive".into(),
            ));
        }
        if self.min_epochs > self.max_epochs {
            return Err(Error::Config(format!(
                "min_epochs {} exceeds max_epochs {}",
                self.min_epochs, self.max_epochs
            )));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.alpha < 0.0 || self.lambda < 0.0 || !(self.dropout >= 0.0 && self.dropout < 1.0) {
            return Err(Error::Config("alpha, lambda must be >= 0; dropout in [0, 1)".into()));
        }
        if self.geo_hidden == 0 || self.gcn_layers == 0 {
            return Err(Error::Config("geo_hidden and gcn_layers must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed required".into()));
        }
        if !(self.disc_lr_scale > 0.0)
            || !(self.sep_lr_scale > 0.0)
            || !(self.encoder_lr_scale > 0.0)
        {
            return Err(Error::Config("learning-rate scales must be positive".into()));
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay. Moment buffers are keyed by parameter
/// name and created lazily on the first gradient.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Per-group learning-rate multipliers, matched by parameter-name prefix.
    group_scales: Vec<(String, f64)>,
    t: u64,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            group_scales: Vec::new(),
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Scales the learning rate for every parameter whose name starts with
    /// `prefix`, leaving the rest at the base rate.
    pub fn set_group_scale(&mut self, prefix: &str, scale: f64) {
        self.group_scales.retain(|(p, _)| p != prefix);
        self.group_scales.push((prefix.to_string(), scale));
    }

    fn lr_for(&self, name: &str) -> f64 {
        for (prefix, scale) in &self.group_scales {
            if name.starts_with(prefix.as_str()) {
                return self.lr * scale;
            }
        }
        self.lr
    }

    /// One update over every parameter that received a gradient.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Array2<f64>>,
        grad_clip: Option<f64>,
    ) {
        let scale = match grad_clip {
            Some(max_norm) => {
                let norm = grads
                    .values()
                    .map(|g| g.iter().map(|x| x * x).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if norm > max_norm {
                    max_norm / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, grad) in grads {
            let lr = self.lr_for(name);
            let p = match params.get_mut(name) {
                Some(p) => p,
                None => continue,
            };
            let g = grad * scale;
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            *m = self.beta1 * &*m + (1.0 - self.beta1) * &g;
            *v = self.beta2 * &*v + (1.0 - self.beta2) * &g.mapv(|x| x * x);
            for ((pi, mi), vi) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *pi -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *pi);
            }
        }
    }
}

/// Topic, policy, and tokenizer context shared across the loop.
pub struct TaskContext<'a> {
    pub spec: &'a TaskSpec,
    pub policies: &'a BTreeMap<String, PolicyDescription>,
    pub tok: &'a dyn Tokenizer,
}

impl<'a> TaskContext<'a> {
    pub fn topic_class(&self, topic: &str) -> Result<usize> {
        self.spec
            .topic_classes()
            .iter()
            .position(|t| t == topic)
            .ok_or_else(|| Error::UnknownTopic(format!("topic {topic:?} outside the task")))
    }

    fn policy(&self, topic: &str) -> Result<&PolicyDescription> {
        self.policies
            .get(topic)
            .ok_or_else(|| Error::UnknownTopic(format!("no policy description for topic {topic}")))
    }
}

fn prepare_labeled(
    ctx: &TaskContext,
    model: &StanceModel,
    batch: &[LabeledExample],
) -> Result<(Vec<TokenPair>, Vec<usize>, Vec<usize>)> {
    let mut pairs = Vec::with_capacity(batch.len());
    let mut geo = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for ex in batch {
        if ex.topic_id == ctx.spec.destination_topic {
            return Err(Error::Leakage {
                context: "stance_loss batch".into(),
                topic: ex.topic_id.clone(),
            });
        }
        pairs.push(build_pair(ctx.policy(&ex.topic_id)?, &ex.text, ctx.tok)?);
        geo.push(model.graph.index_or_unknown(Some(&ex.geo_id)).or_else(|_| {
            model.graph.index_or_unknown(None)
        })?);
        targets.push(ex.stance.index());
    }
    pad_batch(&mut pairs, ctx.tok);
    Ok((pairs, geo, targets))
}

fn prepare_pooled(
    ctx: &TaskContext,
    model: &StanceModel,
    batch: &[UnlabeledExample],
) -> Result<(Vec<TokenPair>, Vec<usize>, Vec<usize>)> {
    let mut pairs = Vec::with_capacity(batch.len());
    let mut geo = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for ex in batch {
        targets.push(ctx.topic_class(&ex.topic_id)?);
        pairs.push(build_pair(ctx.policy(&ex.topic_id)?, &ex.text, ctx.tok)?);
        geo.push(
            model
                .graph
                .index_or_unknown(ex.geo_id.as_deref())
                .or_else(|_| model.graph.index_or_unknown(None))?,
        );
    }
    pad_batch(&mut pairs, ctx.tok);
    Ok((pairs, geo, targets))
}

/// Mean stance cross-entropy on a labeled batch; recorded on `tape`.
/// Destination-topic examples are rejected outright.
pub fn stance_loss(
    tape: &mut Tape,
    model: &StanceModel,
    ctx: &TaskContext,
    batch: &[LabeledExample],
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty stance batch".into()));
    }
    let (pairs, geo, targets) = prepare_labeled(ctx, model, batch)?;
    let f = model.forward(tape, &pairs, &geo, dropout_rng)?;
    Ok(tape.mean_cross_entropy(f.stance_logits, &targets))
}

/// Mean topic cross-entropy of the discriminator over a pooled batch,
/// computed through the gradient reversal. Stance labels are never read.
pub fn topic_loss(
    tape: &mut Tape,
    model: &StanceModel,
    ctx: &TaskContext,
    batch: &[UnlabeledExample],
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty pooled batch".into()));
    }
    let (pairs, geo, targets) = prepare_pooled(ctx, model, batch)?;
    let f = model.forward(tape, &pairs, &geo, dropout_rng)?;
    Ok(tape.mean_cross_entropy(f.topic_logits, &targets))
}

fn mix3(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(a.wrapping_add(1)))
        .wrapping_add(0x94d0_49bb_1331_11ebu64.wrapping_mul(b.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Position of a step in the run, used for diagnostics and to key the
/// dropout streams so they depend only on (seed, epoch, step).
#[derive(Debug, Clone, Copy)]
pub struct StepId {
    pub seed: u64,
    pub epoch: usize,
    pub step: usize,
}

impl StepId {
    fn dropout_rng(&self, stream: u64) -> ChaCha8Rng {
        let key = mix3(self.seed, self.epoch as u64, (self.step as u64) << 1 | stream);
        ChaCha8Rng::seed_from_u64(key)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub l_sc: f64,
    pub l_td: f64,
    pub total: f64,
}

/// One optimizer step on `L_sc + alpha * L_td`, both losses on one tape so a
/// single backward pass realizes the min-max update.
pub fn train_step(
    model: &mut StanceModel,
    opt: &mut AdamW,
    ctx: &TaskContext,
    labeled_batch: &[LabeledExample],
    pooled_batch: &[UnlabeledExample],
    cfg: &TrainConfig,
    id: StepId,
) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let dropout = cfg.dropout > 0.0;
    let mut rng_sc = id.dropout_rng(0);
    let mut rng_td = id.dropout_rng(1);
    let l_sc = stance_loss(
        &mut tape,
        model,
        ctx,
        labeled_batch,
        dropout.then_some(&mut rng_sc),
    )?;
    let l_td = topic_loss(
        &mut tape,
        model,
        ctx,
        pooled_batch,
        dropout.then_some(&mut rng_td),
    )?;
    let total = tape.add_scaled(l_sc, l_td, cfg.alpha);

    let out = StepOutcome {
        l_sc: tape.value(l_sc)[[0, 0]],
        l_td: tape.value(l_td)[[0, 0]],
        total: tape.value(total)[[0, 0]],
    };
    if !out.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: id.epoch,
            step: id.step,
            l_sc: out.l_sc,
            l_td: out.l_td,
        });
    }

    let grads = tape.backward(total);
    opt.step(&mut model.params, &grads, cfg.grad_clip);
    Ok(out)
}

/// Cycles the discriminator pool in batches, reshuffling each time the pool
/// is exhausted.
pub struct PoolCycler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl PoolCycler {
    pub fn new(pool_len: usize, seed: u64) -> Self {
        let mut c = PoolCycler {
            order: (0..pool_len).collect(),
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        c.order.shuffle(&mut c.rng);
        c
    }

    pub fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Index batches for one epoch: each step pairs one labeled batch with one
/// pooled batch of the same nominal size. One epoch covers every labeled
/// example exactly once; the pool recycles as needed.
pub fn schedule_batches(
    n_labeled: usize,
    batch_size: usize,
    pool: &mut PoolCycler,
    epoch_rng: &mut ChaCha8Rng,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut labeled_order: Vec<usize> = (0..n_labeled).collect();
    labeled_order.shuffle(epoch_rng);
    labeled_order
        .chunks(batch_size)
        .map(|chunk| (chunk.to_vec(), pool.next_batch(batch_size)))
        .collect()
}

/// One line of the training curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_sc: f64,
    pub l_td: f64,
    pub dev_f_avg: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch\tL_sc\tL_td\tdev_Favg";

pub fn format_epoch_log(log: &[EpochLog]) -> String {
    let mut out = String::from(EPOCH_LOG_HEADER);
    out.push('\n');
    for e in log {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\n",
            e.epoch, e.l_sc, e.l_td, e.dev_f_avg
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Model restored to the best-dev snapshot.
    pub model: StanceModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_f_avg: f64,
}

/// Trains until the dev F_avg stops improving for `patience` epochs or
/// `max_epochs` is reached, then returns the best-dev snapshot.
/// When the dev set is empty the final epoch wins (dev score reported as 0).
pub fn fit(
    mut model: StanceModel,
    ctx: &TaskContext,
    splits: &SplitBundle,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FitResult> {
    cfg.validate()?;
    if splits.train_labeled.is_empty() {
        return Err(Error::EmptyInput("empty training set".into()));
    }
    if splits.discriminator_pool.is_empty() {
        return Err(Error::EmptyInput("empty discriminator pool".into()));
    }

    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    if cfg.disc_lr_scale != 1.0 {
        opt.set_group_scale("head.topic.", cfg.disc_lr_scale);
    }
    if cfg.sep_lr_scale != 1.0 {
        opt.set_group_scale("sep.", cfg.sep_lr_scale);
    }
    if cfg.encoder_lr_scale != 1.0 {
        opt.set_group_scale("encoder.", cfg.encoder_lr_scale);
    }
    let mut pool = PoolCycler::new(splits.discriminator_pool.len(), mix3(seed, 0, u64::MAX));
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(mix3(seed, epoch as u64, 0));
        let schedule =
            schedule_batches(splits.train_labeled.len(), cfg.batch_size, &mut pool, &mut epoch_rng);
        let mut sum_sc = 0.0;
        let mut sum_td = 0.0;
        for (step, (li, pi)) in schedule.iter().enumerate() {
            let labeled: Vec<LabeledExample> =
                li.iter().map(|&i| splits.train_labeled[i].clone()).collect();
            let pooled: Vec<UnlabeledExample> =
                pi.iter().map(|&i| splits.discriminator_pool[i].clone()).collect();
            let out = train_step(
                &mut model,
                &mut opt,
                ctx,
                &labeled,
                &pooled,
                cfg,
                StepId { seed, epoch, step },
            )?;
            sum_sc += out.l_sc;
            sum_td += out.l_td;
        }
        let n_steps = schedule.len() as f64;

        // Dev evaluation starts after the warmup; earlier epochs are never
        // candidates for the returned snapshot and log a dev score of 0.
        let dev_f_avg = if splits.dev_labeled.is_empty() || epoch < cfg.min_epochs {
            0.0
        } else {
            let preds = evaluation::predict(
                &model,
                ctx.tok,
                ctx.policies,
                &splits.dev_labeled,
                cfg.eval_batch,
            )?;
            let golds: Vec<_> = splits.dev_labeled.iter().map(|e| e.stance).collect();
            MetricReport::compute(&preds, &golds, cfg.three_class_f_avg)?.f_avg
        };

        log.push(EpochLog {
            epoch,
            l_sc: sum_sc / n_steps,
            l_td: sum_td / n_steps,
            dev_f_avg,
        });

        if epoch < cfg.min_epochs {
            continue;
        }
        let improved = match &best {
            None => true,
            Some((_, score, _)) => dev_f_avg > *score,
        };
        if improved {
            best = Some((epoch, dev_f_avg, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if !splits.dev_labeled.is_empty() && since_best >= cfg.patience {
                break;
            }
        }
    }

    let (best_epoch, best_dev_f_avg, params) = best.expect("at least one epoch ran");
    model.params = params;
    Ok(FitResult { model, log, best_epoch, best_dev_f_avg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SynthConfig};
    use crate::data::{build_splits, SplitRatios, Stance};
    use crate::encoder::HashTokenizer;
    use crate::model::ModelConfig;

    struct Fixture {
        spec: TaskSpec,
        policies: BTreeMap<String, PolicyDescription>,
        splits: SplitBundle,
        graph: crate::data::GeoGraph,
    }

    fn fixture(n_per_topic: usize) -> Fixture {
        let cfg = SynthConfig {
            n_labeled_per_topic: n_per_topic,
            n_unlabeled_per_topic: n_per_topic,
            ..SynthConfig::default()
        };
        let corpus = synth_generate(&cfg).unwrap();
        let spec = TaskSpec::cross_target("t0", "t1");
        let splits =
            build_splits(&spec, &corpus.labeled, &corpus.unlabeled, SplitRatios::default(), 7)
                .unwrap();
        Fixture { spec, policies: corpus.policies, splits, graph: corpus.graph }
    }

    fn tiny_train_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            max_epochs: 3,
            patience: 3,
            learning_rate: 1e-3,
            seeds: vec![1],
            ..TrainConfig::default()
        }
    }

    fn model_for(fx: &Fixture, cfg: &TrainConfig, seed: u64) -> StanceModel {
        let mut mc = ModelConfig::tiny(fx.graph.len(), fx.spec.topic_classes().len());
        mc.geo_dim = cfg.geo_hidden.min(16);
        mc.gcn_layers = cfg.gcn_layers;
        mc.grl_lambda = cfg.lambda;
        mc.dropout = cfg.dropout;
        StanceModel::new(mc, fx.graph.clone(), seed).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.patience = 200;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.seeds.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn stance_loss_rejects_destination_labels() {
        let fx = fixture(24);
        let tok = HashTokenizer::default();
        let ctx = TaskContext { spec: &fx.spec, policies: &fx.policies, tok: &tok };
        let cfg = tiny_train_cfg();
        let model = model_for(&fx, &cfg, 1);
        let mut bad = fx.splits.train_labeled[0].clone();
        bad.topic_id = "t1".into();
        let mut tape = Tape::new();
        let err = stance_loss(&mut tape, &model, &ctx, &[bad], None).unwrap_err();
        assert!(matches!(err, Error::Leakage { .. }));
    }

    #[test]
    fn topic_loss_rejects_foreign_topic() {
        let fx = fixture(24);
        let tok = HashTokenizer::default();
        let ctx = TaskContext { spec: &fx.spec, policies: &fx.policies, tok: &tok };
        let cfg = tiny_train_cfg();
        let model = model_for(&fx, &cfg, 1);
        let alien = UnlabeledExample {
            topic_id: "mystery".into(),
            text: "some text".into(),
            geo_id: None,
        };
        let mut tape = Tape::new();
        assert!(topic_loss(&mut tape, &model, &ctx, &[alien], None).is_err());
    }

    #[test]
    fn uniform_logit_losses_are_ln_k() {
        let fx = fixture(24);
        let tok = HashTokenizer::default();
        let ctx = TaskContext { spec: &fx.spec, policies: &fx.policies, tok: &tok };
        let cfg = tiny_train_cfg();
        let mut model = model_for(&fx, &cfg, 1);
        let d = model.cfg.stance_input_dim();
        model.params.insert("head.stance.w", Array2::zeros((d, 3)));
        model.params.insert("head.stance.b", Array2::zeros((1, 3)));
        let dh = model.cfg.encoder.hidden;
        model.params.insert("head.topic.w", Array2::zeros((dh, 2)));
        model.params.insert("head.topic.b", Array2::zeros((1, 2)));

        let batch = &fx.splits.train_labeled[..4];
        let mut tape = Tape::new();
        let l = stance_loss(&mut tape, &model, &ctx, batch, None).unwrap();
        assert!((tape.value(l)[[0, 0]] - 3f64.ln()).abs() < 1e-12);

        let pooled = &fx.splits.discriminator_pool[..4];
        let mut tape = Tape::new();
        let l = topic_loss(&mut tape, &model, &ctx, pooled, None).unwrap();
        assert!((tape.value(l)[[0, 0]] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn topic_loss_ignores_stance_labels() {
        // The same texts fed as labeled-turned-pooled examples give an
        // identical loss no matter what stance label they carried.
        let fx = fixture(24);
        let tok = HashTokenizer::default();
        let ctx = TaskContext { spec: &fx.spec, policies: &fx.policies, tok: &tok };
        let cfg = tiny_train_cfg();
        let model = model_for(&fx, &cfg, 3);
        let as_pooled = |stance: Stance| -> f64 {
            let batch: Vec<UnlabeledExample> = fx.splits.train_labeled[..6]
                .iter()
                .map(|e| {
                    let mut e = e.clone();
                    e.stance = stance;
                    UnlabeledExample {
                        topic_id: e.topic_id,
                        text: e.text,
                        geo_id: Some(e.geo_id),
                    }
                })
                .collect();
            let mut tape = Tape::new();
            let l = topic_loss(&mut tape, &model, &ctx, &batch, None).unwrap();
            tape.value(l)[[0, 0]]
        };
        assert_eq!(as_pooled(Stance::Favor), as_pooled(Stance::Against));
    }

    #[test]
    fn alpha_zero_matches_pure_stance_step() {
        // With alpha = 0 the pooled term contributes exactly zero gradient,
        // so shared parameters move identically to a stance-only step; the
        // discriminator head (which only sees the pooled term) stays put too
        // because AdamW is keyed per-parameter.
        let fx = fixture(24);
        let tok = HashTokenizer::default();
        let ctx = TaskContext { spec: &fx.spec, policies: &fx.policies, tok: &tok };
        let mut cfg = tiny_train_cfg();
        cfg.alpha = 0.0;
        cfg.dropout = 0.0;

        let labeled = fx.splits.train_labeled[..8].to_vec();
        let pooled = fx.splits.discriminator_pool[..8].to_vec();
        let id = StepId { seed: 1, epoch: 1, step: 0 };

        let mut m1 = model_for(&fx, &cfg, 5);
        let mut opt1 = AdamW::new(cfg.learning_rate, cfg.weight_decay);
        train_step(&mut m1, &mut opt1, &ctx, &labeled, &pooled, &cfg, id).unwrap();

        // Stance-only reference: same forward for the labeled batch, loss
        // without the pooled term.
        let mut m2 = model_for(&fx, &cfg, 5);
        let mut opt2 = AdamW::new(cfg.learning_rate, cfg.weight_decay);
        let mut tape = Tape::new();
        let l = stance_loss(&mut tape, &m2, &ctx, &labeled, None).unwrap();
        let grads = tape.backward(l);
        opt2.step(&mut m2.params, &grads, None);

        for (name, v1) in m1.params.iter() {
            if name.starts_with("head.topic.") {
                continue; // absent from the reference tape entirely
            }
            let v2 = m2.params.get(name).unwrap();
            let max_diff = v1
                .iter()
                .zip(v2.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff == 0.0, "{name}: diff {max_diff}");
        }
    }

    #[test]
    fn lambda_zero_shared_params_match_alpha_zero() {
        // lambda = 0 blocks the reversed gradient, so shared parameters get
        // the alpha = 0 update while the discriminator still learns.
        let fx = fixture(24);
        let tok = HashTokenizer::default();
        let ctx = TaskContext { spec: &fx.spec, policies: &fx.policies, tok: &tok };
        let labeled = fx.splits.train_labeled[..8].to_vec();
        let pooled = fx.splits.discriminator_pool[..8].to_vec();
        let id = StepId { seed: 2, epoch: 1, step: 0 };

        let run = |alpha: f64, lambda: f64| -> StanceModel {
            let mut cfg = tiny_train_cfg();
            cfg.alpha = alpha;
            cfg.dropout = 0.0;
            let mut mc = ModelConfig::tiny(fx.graph.len(), 2);
            mc.grl_lambda = lambda;
            mc.dropout = 0.0;
            let mut m = StanceModel::new(mc, fx.graph.clone(), 9).unwrap();
            let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
            train_step(&mut m, &mut opt, &ctx, &labeled, &pooled, &cfg, id).unwrap();
            m
        };

        let lz = run(0.5, 0.0);
        let az = run(0.0, 0.0);
        let before = StanceModel::new(
            {
                let mut mc = ModelConfig::tiny(fx.graph.len(), 2);
                mc.grl_lambda = 0.0;
                mc.dropout = 0.0;
                mc
            },
            fx.graph.clone(),
            9,
        )
        .unwrap();

        for (name, v1) in lz.params.iter() {
            let v2 = az.params.get(name).unwrap();
            if name.starts_with("head.topic.") {
                // Discriminator must have moved in the lambda = 0 run.
                let moved = v1
                    .iter()
                    .zip(before.params.get(name).unwrap().iter())
                    .any(|(a, b)| (a - b).abs() > 1e-12);
                assert!(moved || name.ends_with(".b"), "{name} did not move");
                continue;
            }
            let max_diff = v1
                .iter()
                .zip(v2.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff < 1e-7, "{name}: diff {max_diff}");
        }
    }

    #[test]
    fn train_step_is_deterministic() {
        let fx = fixture(24);
        let tok = HashTokenizer::default();
        let ctx = TaskContext { spec: &fx.spec, policies: &fx.policies, tok: &tok };
        let cfg = tiny_train_cfg();
        let labeled = fx.splits.train_labeled[..8].to_vec();
        let pooled = fx.splits.discriminator_pool[..8].to_vec();
        let id = StepId { seed: 3, epoch: 1, step: 0 };

        let run = || -> Vec<f64> {
            let mut m = model_for(&fx, &cfg, 11);
            let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
            train_step(&mut m, &mut opt, &ctx, &labeled, &pooled, &cfg, id).unwrap();
            m.params.iter().flat_map(|(_, v)| v.iter().cloned().collect::<Vec<_>>()).collect()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_covers_train_set_exactly_once() {
        let mut pool = PoolCycler::new(10, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let schedule = schedule_batches(160, 16, &mut pool, &mut rng);
        assert_eq!(schedule.len(), 10);
        let mut seen: Vec<usize> = schedule.iter().flat_map(|(l, _)| l.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..160).collect::<Vec<_>>());
        // Pool of 10 must recycle to supply 160 pooled slots.
        for (_, p) in &schedule {
            assert_eq!(p.len(), 16);
            assert!(p.iter().all(|&i| i < 10));
        }
    }

    #[test]
    fn schedule_keeps_remainder_batch() {
        let mut pool = PoolCycler::new(5, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let schedule = schedule_batches(20, 8, &mut pool, &mut rng);
        assert_eq!(schedule.len(), 3);
        assert_eq!(schedule[2].0.len(), 4);
    }

    #[test]
    fn fit_returns_best_dev_snapshot_and_logs() {
        let fx = fixture(24);
        let tok = HashTokenizer::default();
        let ctx = TaskContext { spec: &fx.spec, policies: &fx.policies, tok: &tok };
        let mut cfg = tiny_train_cfg();
        cfg.max_epochs = 4;
        cfg.patience = 4;
        let model = model_for(&fx, &cfg, 13);
        let r = fit(model, &ctx, &fx.splits, &cfg, 13).unwrap();
        assert_eq!(r.log.len(), 4);
        let best_from_log = r
            .log
            .iter()
            .map(|e| e.dev_f_avg)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.best_dev_f_avg, best_from_log);
        assert!(r.log.iter().any(|e| e.epoch == r.best_epoch && e.dev_f_avg == r.best_dev_f_avg));

        // Re-evaluating the returned snapshot on dev reproduces the logged best.
        let preds =
            evaluation::predict(&r.model, &tok, &fx.policies, &fx.splits.dev_labeled, 32).unwrap();
        let golds: Vec<_> = fx.splits.dev_labeled.iter().map(|e| e.stance).collect();
        let again = MetricReport::compute(&preds, &golds, false).unwrap().f_avg;
        assert_eq!(again, r.best_dev_f_avg);
    }

    #[test]
    fn fit_same_seed_same_trajectory() {
        let fx = fixture(24);
        let tok = HashTokenizer::default();
        let ctx = TaskContext { spec: &fx.spec, policies: &fx.policies, tok: &tok };
        let mut cfg = tiny_train_cfg();
        cfg.max_epochs = 2;
        cfg.patience = 2;
        let r1 = fit(model_for(&fx, &cfg, 17), &ctx, &fx.splits, &cfg, 17).unwrap();
        let r2 = fit(model_for(&fx, &cfg, 17), &ctx, &fx.splits, &cfg, 17).unwrap();
        assert_eq!(format_epoch_log(&r1.log), format_epoch_log(&r2.log));
    }
}
