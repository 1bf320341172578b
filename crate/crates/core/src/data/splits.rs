//! Deterministic, leakage-guarded train/dev/test splitting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LabeledExample, Stance, TaskSpec, UnlabeledExample};
use crate::error::{Error, Result};

/// Train/dev fractions for the labeled source pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.85, dev: 0.15 }
    }
}

/// The materialized data for one task at one seed.
#[derive(Debug, Clone)]
pub struct SplitBundle {
    pub train_labeled: Vec<LabeledExample>,
    pub dev_labeled: Vec<LabeledExample>,
    pub test_labeled: Vec<LabeledExample>,
    /// Texts feeding the topic discriminator: all unlabeled data of the
    /// task's topics plus the labeled training texts (stance stripped).
    pub discriminator_pool: Vec<UnlabeledExample>,
}

fn mix_seed(seed: u64, topic_idx: u64, stance_idx: u64) -> u64 {
    // splitmix64 over a composite key so each stratum shuffles independently.
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(topic_idx.wrapping_add(1)))
        .wrapping_add(0xbf58_476d_1ce4_e5b9u64.wrapping_mul(stance_idx.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Builds the split for `spec`: train/dev stratified by stance from the source
/// topic(s) only, test = every labeled destination example, and the
/// discriminator pool spanning all task topics. Deterministic in `seed`.
pub fn build_splits(
    spec: &TaskSpec,
    labeled: &BTreeMap<String, Vec<LabeledExample>>,
    unlabeled: &BTreeMap<String, Vec<UnlabeledExample>>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitBundle> {
    spec.validate()?;
    if !(ratios.train > 0.0 && ratios.dev >= 0.0 && ratios.train + ratios.dev <= 1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "invalid split ratios: train={}, dev={}",
            ratios.train, ratios.dev
        )));
    }
    for topic in spec.topic_classes() {
        if !labeled.contains_key(&topic) {
            return Err(Error::UnknownTopic(format!("no labeled corpus for topic {topic}")));
        }
    }

    let mut train_labeled = Vec::new();
    let mut dev_labeled = Vec::new();
    for (ti, topic) in spec.source_topics.iter().enumerate() {
        let examples = &labeled[topic];
        for (si, stance) in Stance::ALL.iter().enumerate() {
            let mut group: Vec<&LabeledExample> =
                examples.iter().filter(|e| e.stance == *stance).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, ti as u64, si as u64));
            group.shuffle(&mut rng);
            let n_train = ((group.len() as f64) * ratios.train).round() as usize;
            let n_train = n_train.min(group.len());
            for (k, ex) in group.into_iter().enumerate() {
                if k < n_train {
                    train_labeled.push(ex.clone());
                } else {
                    dev_labeled.push(ex.clone());
                }
            }
        }
    }

    // Leakage guard: destination labels must never enter train or dev.
    for (name, set) in [("train_labeled", &train_labeled), ("dev_labeled", &dev_labeled)] {
        if let Some(ex) = set.iter().find(|e| e.topic_id == spec.destination_topic) {
            return Err(Error::Leakage { context: name.to_string(), topic: ex.topic_id.clone() });
        }
    }

    let test_labeled = labeled[&spec.destination_topic].clone();

    let mut discriminator_pool: Vec<UnlabeledExample> = Vec::new();
    for topic in spec.topic_classes() {
        if let Some(set) = unlabeled.get(&topic) {
            discriminator_pool.extend(set.iter().cloned());
        }
    }
    for ex in &train_labeled {
        discriminator_pool.push(UnlabeledExample {
            topic_id: ex.topic_id.clone(),
            text: ex.text.clone(),
            geo_id: Some(ex.geo_id.clone()),
        });
    }

    for topic in spec.topic_classes() {
        if !discriminator_pool.iter().any(|e| e.topic_id == *topic) {
            return Err(Error::Config(format!(
                "discriminator pool has no examples for topic {topic}; \
                 provide unlabeled data for it"
            )));
        }
    }

    Ok(SplitBundle { train_labeled, dev_labeled, test_labeled, discriminator_pool })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TaskMode;

    fn mk_labeled(topic: &str, stance: Stance, i: usize) -> LabeledExample {
        LabeledExample {
            topic_id: topic.to_string(),
            text: format!("{topic} text {i}"),
            stance,
            geo_id: "r0".to_string(),
        }
    }

    fn corpus() -> (BTreeMap<String, Vec<LabeledExample>>, BTreeMap<String, Vec<UnlabeledExample>>) {
        let mut labeled = BTreeMap::new();
        for topic in ["A", "B"] {
            let mut v = Vec::new();
            for i in 0..40 {
                v.push(mk_labeled(topic, Stance::Favor, i));
            }
            for i in 0..20 {
                v.push(mk_labeled(topic, Stance::Against, i));
            }
            for i in 0..20 {
                v.push(mk_labeled(topic, Stance::None, i));
            }
            labeled.insert(topic.to_string(), v);
        }
        let mut unlabeled = BTreeMap::new();
        for topic in ["A", "B"] {
            let v: Vec<UnlabeledExample> = (0..30)
                .map(|i| UnlabeledExample {
                    topic_id: topic.to_string(),
                    text: format!("{topic} unlabeled {i}"),
                    geo_id: None,
                })
                .collect();
            unlabeled.insert(topic.to_string(), v);
        }
        (labeled, unlabeled)
    }

    #[test]
    fn stratified_and_leak_free() {
        let (labeled, unlabeled) = corpus();
        let spec = TaskSpec::cross_target("A", "B");
        let b = build_splits(&spec, &labeled, &unlabeled, SplitRatios::default(), 3).unwrap();

        assert_eq!(b.train_labeled.len() + b.dev_labeled.len(), 80);
        assert_eq!(b.test_labeled.len(), 80);
        assert!(b.train_labeled.iter().all(|e| e.topic_id == "A"));
        assert!(b.dev_labeled.iter().all(|e| e.topic_id == "A"));
        assert!(b.test_labeled.iter().all(|e| e.topic_id == "B"));

        // Per-label proportion within one example of 85%.
        let hist = crate::data::label_histogram(&b.train_labeled);
        assert_eq!(hist[&Stance::Favor], 34);
        assert_eq!(hist[&Stance::Against], 17);
        assert_eq!(hist[&Stance::None], 17);

        // Pool spans both topics and includes the training texts.
        assert!(b.discriminator_pool.iter().any(|e| e.topic_id == "A"));
        assert!(b.discriminator_pool.iter().any(|e| e.topic_id == "B"));
        assert_eq!(b.discriminator_pool.len(), 30 + 30 + b.train_labeled.len());
    }

    #[test]
    fn same_seed_same_split() {
        let (labeled, unlabeled) = corpus();
        let spec = TaskSpec::cross_target("A", "B");
        let b1 = build_splits(&spec, &labeled, &unlabeled, SplitRatios::default(), 9).unwrap();
        let b2 = build_splits(&spec, &labeled, &unlabeled, SplitRatios::default(), 9).unwrap();
        assert_eq!(b1.train_labeled, b2.train_labeled);
        assert_eq!(b1.dev_labeled, b2.dev_labeled);

        let b3 = build_splits(&spec, &labeled, &unlabeled, SplitRatios::default(), 10).unwrap();
        assert_ne!(b1.train_labeled, b3.train_labeled);
    }

    #[test]
    fn missing_destination_unlabeled_is_rejected() {
        let (labeled, mut unlabeled) = corpus();
        unlabeled.remove("B");
        let spec = TaskSpec::cross_target("A", "B");
        let err = build_splits(&spec, &labeled, &unlabeled, SplitRatios::default(), 1);
        assert!(err.is_err());
    }

    #[test]
    fn zero_shot_uses_all_sources() {
        let (mut labeled, mut unlabeled) = corpus();
        labeled.insert("C".into(), (0..30).map(|i| mk_labeled("C", Stance::Favor, i)).collect());
        unlabeled.insert(
            "C".into(),
            (0..5)
                .map(|i| UnlabeledExample {
                    topic_id: "C".into(),
                    text: format!("C unlabeled {i}"),
                    geo_id: None,
                })
                .collect(),
        );
        let spec = TaskSpec::zero_shot(&["A", "B"], "C");
        assert_eq!(spec.mode, TaskMode::ZeroShot);
        let b = build_splits(&spec, &labeled, &unlabeled, SplitRatios::default(), 5).unwrap();
        assert!(b.train_labeled.iter().any(|e| e.topic_id == "A"));
        assert!(b.train_labeled.iter().any(|e| e.topic_id == "B"));
        assert_eq!(b.test_labeled.len(), 30);
    }
}
