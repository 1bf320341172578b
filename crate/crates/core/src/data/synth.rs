//! Seeded synthetic corpus generator for desk-scale experiments.
//!
//! Each text mixes three token families:
//! - stance cues (`cuef*` / `cuea*`), shared across topics: the transferable
//!   signal. The emitted label always follows the published counting rule in
//!   [`oracle_stance`].
//! - topic markers (`t<k>mark*`), unique per topic: nuisance features that can
//!   be spuriously correlated with stance inside a topic but do not transfer.
//! - a constant per-topic tag (`t<k>tag`) in every text: stance-neutral topic
//!   identity, useful for probing where topic information ends up.
//! - fillers (`fill*`), shared neutral noise.
//!
//! Regions are assigned with a stance-conditioned prior so geographic signal
//! carries some stance information.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{
    GeoGraph, LabeledExample, PolicyDescription, Stance, TopicRegistry, UnlabeledExample,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_topics: usize,
    pub n_labeled_per_topic: usize,
    pub n_unlabeled_per_topic: usize,
    pub n_favor_cues: usize,
    pub n_against_cues: usize,
    pub n_fillers: usize,
    pub n_markers_per_topic: usize,
    /// Scales the cue-count margin between favor and against texts (0, 1].
    pub cue_strength: f64,
    /// Probability that a topic marker is drawn from a stance-specific subset,
    /// planting a within-topic shortcut that does not transfer.
    pub marker_stance_bias: f64,
    /// Copies of the constant per-topic tag token (`t<k>tag`) in every text:
    /// a stance-neutral topic signal that is trivially linearly separable.
    pub n_topic_tags: usize,
    pub n_regions: usize,
    /// Probability that the region is drawn from the stance-preferred band.
    pub geo_bias: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_topics: 2,
            n_labeled_per_topic: 200,
            n_unlabeled_per_topic: 200,
            n_favor_cues: 6,
            n_against_cues: 6,
            n_fillers: 40,
            n_markers_per_topic: 9,
            cue_strength: 0.8,
            marker_stance_bias: 1.0,
            n_topic_tags: 0,
            n_regions: 6,
            geo_bias: 0.6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub registry: TopicRegistry,
    pub labeled: BTreeMap<String, Vec<LabeledExample>>,
    pub unlabeled: BTreeMap<String, Vec<UnlabeledExample>>,
    pub policies: BTreeMap<String, PolicyDescription>,
    pub graph: GeoGraph,
}

fn topic_name(k: usize) -> String {
    format!("t{k}")
}

/// The published labeling rule: favor iff more `cuef*` than `cuea*` tokens,
/// against iff fewer, none on a tie.
pub fn oracle_stance(text: &str) -> Stance {
    let mut favor = 0usize;
    let mut against = 0usize;
    for tok in text.split_whitespace() {
        if tok.starts_with("cuef") {
            favor += 1;
        } else if tok.starts_with("cuea") {
            against += 1;
        }
    }
    match favor.cmp(&against) {
        std::cmp::Ordering::Greater => Stance::Favor,
        std::cmp::Ordering::Less => Stance::Against,
        std::cmp::Ordering::Equal => Stance::None,
    }
}

fn sample_region(rng: &mut ChaCha8Rng, cfg: &SynthConfig, stance: Stance) -> usize {
    let r = cfg.n_regions;
    if rng.gen_bool(cfg.geo_bias.clamp(0.0, 1.0)) {
        // Stance-preferred band of the region line.
        let band = (r / 3).max(1);
        let start = match stance {
            Stance::Favor => 0,
            Stance::Against => band.min(r - 1),
            Stance::None => (2 * band).min(r - 1),
        };
        let end = (start + band).min(r);
        rng.gen_range(start..end)
    } else {
        rng.gen_range(0..r)
    }
}

fn gen_text(rng: &mut ChaCha8Rng, cfg: &SynthConfig, topic_idx: usize, stance: Stance) -> String {
    let margin = ((3.0 * cfg.cue_strength).round() as usize).max(1);
    let (n_favor, n_against) = match stance {
        Stance::Favor => {
            let na = rng.gen_range(0..=1);
            (na + rng.gen_range(1..=margin), na)
        }
        Stance::Against => {
            let nf = rng.gen_range(0..=1);
            (nf, nf + rng.gen_range(1..=margin))
        }
        Stance::None => {
            let c = rng.gen_range(0..=1);
            (c, c)
        }
    };

    let mut tokens: Vec<String> = Vec::new();
    for _ in 0..n_favor {
        tokens.push(format!("cuef{}", rng.gen_range(0..cfg.n_favor_cues)));
    }
    for _ in 0..n_against {
        tokens.push(format!("cuea{}", rng.gen_range(0..cfg.n_against_cues)));
    }

    let n_markers = 1 + rng.gen_range(0..2);
    let band = (cfg.n_markers_per_topic / 3).max(1);
    for _ in 0..n_markers {
        let idx = if rng.gen_bool(cfg.marker_stance_bias.clamp(0.0, 1.0)) {
            let start = match stance {
                Stance::Favor => 0,
                Stance::Against => band.min(cfg.n_markers_per_topic - 1),
                Stance::None => (2 * band).min(cfg.n_markers_per_topic - 1),
            };
            let end = (start + band).min(cfg.n_markers_per_topic);
            rng.gen_range(start..end)
        } else {
            rng.gen_range(0..cfg.n_markers_per_topic)
        };
        tokens.push(format!("t{topic_idx}mark{idx}"));
    }

    for _ in 0..cfg.n_topic_tags {
        tokens.push(format!("t{topic_idx}tag"));
    }

    for _ in 0..(2 + rng.gen_range(0..3)) {
        tokens.push(format!("fill{}", rng.gen_range(0..cfg.n_fillers)));
    }

    tokens.shuffle(rng);
    tokens.join(" ")
}

/// Generates the full synthetic bundle. Byte-identical for identical configs.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.n_topics < 2 {
        return Err(Error::Config(format!("n_topics must be >= 2, got {}", cfg.n_topics)));
    }
    if cfg.n_favor_cues == 0
        || cfg.n_against_cues == 0
        || cfg.n_fillers == 0
        || cfg.n_markers_per_topic == 0
        || cfg.n_regions == 0
    {
        return Err(Error::Config("degenerate synth config: empty vocabulary".into()));
    }
    if !(cfg.cue_strength > 0.0 && cfg.cue_strength <= 1.0) {
        return Err(Error::Config(format!("cue_strength must be in (0, 1], got {}", cfg.cue_strength)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let topics: Vec<String> = (0..cfg.n_topics).map(topic_name).collect();
    let registry = TopicRegistry::new(topics.clone());

    // Path graph r0 - r1 - ... plus the isolated unknown node.
    let mut regions: Vec<String> = (0..cfg.n_regions).map(|i| format!("r{i}")).collect();
    let edges: Vec<(String, String)> = (1..cfg.n_regions)
        .map(|i| (format!("r{}", i - 1), format!("r{i}")))
        .collect();
    regions.push(super::UNKNOWN_REGION.to_string());
    let graph = GeoGraph::new(regions, &edges)?;

    let mut policies = BTreeMap::new();
    for (k, topic) in topics.iter().enumerate() {
        let description = format!(
            "policy {topic} regulates t{k}mark0 and t{k}mark1 conduct under official {topic} guidance"
        );
        policies.insert(topic.clone(), PolicyDescription { topic_id: topic.clone(), description });
    }

    let mut labeled = BTreeMap::new();
    let mut unlabeled = BTreeMap::new();
    for (k, topic) in topics.iter().enumerate() {
        let mut lab = Vec::with_capacity(cfg.n_labeled_per_topic);
        for i in 0..cfg.n_labeled_per_topic {
            let stance = Stance::ALL[i % 3];
            let text = gen_text(&mut rng, cfg, k, stance);
            debug_assert_eq!(oracle_stance(&text), stance);
            let region = sample_region(&mut rng, cfg, stance);
            lab.push(LabeledExample {
                topic_id: topic.clone(),
                text,
                stance,
                geo_id: format!("r{region}"),
            });
        }
        labeled.insert(topic.clone(), lab);

        let mut unlab = Vec::with_capacity(cfg.n_unlabeled_per_topic);
        for i in 0..cfg.n_unlabeled_per_topic {
            let stance = Stance::ALL[i % 3];
            let text = gen_text(&mut rng, cfg, k, stance);
            let geo_id = if rng.gen_bool(0.1) {
                None
            } else {
                Some(format!("r{}", sample_region(&mut rng, cfg, stance)))
            };
            unlab.push(UnlabeledExample { topic_id: topic.clone(), text, geo_id });
        }
        unlabeled.insert(topic.clone(), unlab);
    }

    Ok(SynthCorpus { registry, labeled, unlabeled, policies, graph })
}
