//! The four heads around the context vector: feature separation, the
//! graph-convolutional region encoder, the stance classifier, and the
//! gradient-reversed topic discriminator.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::data::GeoGraph;
use crate::encoder::transformer::{TransformerConfig, TransformerEncoder};
use crate::encoder::{EncoderKind, TokenPair};
use crate::error::{Error, Result};

pub const N_STANCE_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder_kind: EncoderKind,
    pub encoder: TransformerConfig,
    /// Hidden dimension F of the region feature.
    pub geo_dim: usize,
    /// Number of graph-convolution rounds (2 by default).
    pub gcn_layers: usize,
    /// Region count N; must match the graph.
    pub n_regions: usize,
    /// Topic-class count K for the discriminator (sources + destination).
    pub n_topics: usize,
    pub grl_lambda: f64,
    pub dropout: f64,
    /// Literal `A E W` propagation by default; enables the symmetric
    /// degree-normalized variant when set.
    pub geo_normalized: bool,
    /// When false the stance head sees only `(f_i, f_s)` and no region
    /// tensors exist (ablation switch).
    pub use_geo: bool,
}

impl ModelConfig {
    pub fn tiny(n_regions: usize, n_topics: usize) -> Self {
        ModelConfig {
            encoder_kind: EncoderKind::Tiny,
            encoder: TransformerConfig::tiny(),
            geo_dim: 16,
            gcn_layers: 2,
            n_regions,
            n_topics,
            grl_lambda: 0.1,
            dropout: 0.1,
            geo_normalized: false,
            use_geo: true,
        }
    }

    pub fn pretrained(n_regions: usize, n_topics: usize, geo_dim: usize) -> Self {
        ModelConfig {
            encoder_kind: EncoderKind::Pretrained,
            encoder: TransformerConfig::pretrained_base(),
            geo_dim,
            gcn_layers: 2,
            n_regions,
            n_topics,
            grl_lambda: 0.1,
            dropout: 0.1,
            geo_normalized: false,
            use_geo: true,
        }
    }

    /// Stance-head input width: `f_i (+) f_s (+) f_geo`.
    pub fn stance_input_dim(&self) -> usize {
        2 * self.encoder.hidden + if self.use_geo { self.geo_dim } else { 0 }
    }

    /// Every tensor the model owns, with its shape. Checkpoint loading
    /// validates against this map.
    pub fn expected_shapes(&self) -> BTreeMap<String, (usize, usize)> {
        let c = &self.encoder;
        let d = c.hidden;
        let mut m = BTreeMap::new();
        m.insert("encoder.embed.word".into(), (c.vocab_size, d));
        m.insert("encoder.embed.pos".into(), (c.max_position, d));
        m.insert("encoder.embed.type".into(), (c.type_vocab, d));
        m.insert("encoder.embed.ln.gain".into(), (1, d));
        m.insert("encoder.embed.ln.bias".into(), (1, d));
        for l in 0..c.layers {
            let p = format!("encoder.layer{l}");
            for n in ["wq", "wk", "wv", "wo"] {
                m.insert(format!("{p}.attn.{n}"), (d, d));
            }
            for n in ["bq", "bk", "bv", "bo"] {
                m.insert(format!("{p}.attn.{n}"), (1, d));
            }
            m.insert(format!("{p}.attn.ln.gain"), (1, d));
            m.insert(format!("{p}.attn.ln.bias"), (1, d));
            m.insert(format!("{p}.ffn.w1"), (d, c.ffn));
            m.insert(format!("{p}.ffn.b1"), (1, c.ffn));
            m.insert(format!("{p}.ffn.w2"), (c.ffn, d));
            m.insert(format!("{p}.ffn.b2"), (1, d));
            m.insert(format!("{p}.ffn.ln.gain"), (1, d));
            m.insert(format!("{p}.ffn.ln.bias"), (1, d));
        }
        if c.pooler {
            m.insert("encoder.pooler.w".into(), (d, d));
            m.insert("encoder.pooler.b".into(), (1, d));
        }
        m.insert("sep.w".into(), (d, d));
        m.insert("sep.b".into(), (1, d));
        if self.use_geo {
            m.insert("geo.embed".into(), (self.n_regions, self.geo_dim));
            for l in 0..self.gcn_layers {
                m.insert(format!("geo.w{l}"), (self.geo_dim, self.geo_dim));
            }
        }
        m.insert("head.stance.w".into(), (self.stance_input_dim(), N_STANCE_CLASSES));
        m.insert("head.stance.b".into(), (1, N_STANCE_CLASSES));
        m.insert("head.topic.w".into(), (d, self.n_topics));
        m.insert("head.topic.b".into(), (1, self.n_topics));
        m
    }
}

/// Symmetric uniform fan-in initialization for affine layers.
fn fan_in_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sigma: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}

/// Node handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    /// Raw aggregate state from the encoder.
    pub h: NodeId,
    /// Context actually decomposed; `f_s + f_i == h_used` exactly.
    pub h_used: NodeId,
    pub f_s: NodeId,
    pub f_i: NodeId,
    pub f_geo: Option<NodeId>,
    pub stance_logits: NodeId,
    pub stance_probs: NodeId,
    /// Discriminator logits computed on `grl(f_i)`.
    pub topic_logits: NodeId,
    pub topic_probs: NodeId,
}

#[derive(Debug, Clone)]
pub struct StanceModel {
    pub cfg: ModelConfig,
    pub encoder: TransformerEncoder,
    pub graph: GeoGraph,
    pub params: ParamStore,
}

impl StanceModel {
    /// Fresh model with seeded initialization.
    pub fn new(cfg: ModelConfig, graph: GeoGraph, seed: u64) -> Result<Self> {
        if graph.len() != cfg.n_regions {
            return Err(Error::Shape {
                context: "GeoGraph".into(),
                expected: format!("{} regions", cfg.n_regions),
                actual: format!("{}", graph.len()),
            });
        }
        if cfg.n_topics < 2 {
            return Err(Error::Config(format!(
                "discriminator needs >= 2 topic classes, got {}",
                cfg.n_topics
            )));
        }
        let encoder = TransformerEncoder::new(cfg.encoder.clone());
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        encoder.init_params(&mut params, &mut rng);
        let d = cfg.encoder.hidden;
        // The separation map starts near the identity: the stance stream
        // begins as a copy of the context and the invariant residual near
        // zero, so the discriminator opens at chance and the adversarial
        // pressure maintains invariance instead of chasing a moving target.
        let mut sep_w = fan_in_uniform(&mut rng, d, d);
        sep_w.mapv_inplace(|v| v * 0.05);
        sep_w += &Array2::eye(d);
        params.insert("sep.w", sep_w);
        params.insert("sep.b", Array2::zeros((1, d)));
        if cfg.use_geo {
            params.insert("geo.embed", gaussian(&mut rng, cfg.n_regions, cfg.geo_dim, 0.02));
            for l in 0..cfg.gcn_layers {
                params.insert(
                    &format!("geo.w{l}"),
                    fan_in_uniform(&mut rng, cfg.geo_dim, cfg.geo_dim),
                );
            }
        }
        params.insert(
            "head.stance.w",
            fan_in_uniform(&mut rng, cfg.stance_input_dim(), N_STANCE_CLASSES),
        );
        params.insert("head.stance.b", Array2::zeros((1, N_STANCE_CLASSES)));
        params.insert("head.topic.w", fan_in_uniform(&mut rng, d, cfg.n_topics));
        params.insert("head.topic.b", Array2::zeros((1, cfg.n_topics)));
        Ok(StanceModel { cfg, encoder, graph, params })
    }

    fn adjacency(&self) -> Array2<f64> {
        if self.cfg.geo_normalized {
            self.graph.normalized_adjacency()
        } else {
            self.graph.dense_adjacency()
        }
    }

    /// Runs the region GCN and returns the full `N x F` final embedding node.
    pub fn geo_embeddings(&self, tape: &mut Tape) -> Result<NodeId> {
        if !self.cfg.use_geo {
            return Err(Error::Config("geo encoder disabled in this configuration".into()));
        }
        let adj = tape.leaf(self.adjacency());
        let mut e = tape.param("geo.embed", self.params.require("geo.embed")?.clone());
        for l in 0..self.cfg.gcn_layers {
            let key = format!("geo.w{l}");
            let w = tape.param(&key, self.params.require(&key)?.clone());
            let ae = tape.matmul(adj, e);
            let aew = tape.matmul(ae, w);
            e = tape.relu(aew);
        }
        Ok(e)
    }

    /// Full forward pass for a batch: encode, separate, region-encode, and
    /// apply both heads. `geo_indices[i]` is the region row of example `i`.
    /// `dropout_rng` enables training-mode dropout.
    pub fn forward(
        &self,
        tape: &mut Tape,
        pairs: &[TokenPair],
        geo_indices: &[usize],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardNodes> {
        if pairs.len() != geo_indices.len() {
            return Err(Error::Shape {
                context: "forward batch".into(),
                expected: format!("{} geo indices", pairs.len()),
                actual: format!("{}", geo_indices.len()),
            });
        }
        for &gi in geo_indices {
            if gi >= self.cfg.n_regions {
                return Err(Error::UnknownRegion(format!("region index {gi}")));
            }
        }

        let h = self.encoder.encode(tape, &self.params, pairs)?;
        let h_in = match dropout_rng.as_deref_mut() {
            Some(rng) => self.dropout(tape, h, rng),
            None => h,
        };

        let (f_s, f_i, h_used) = self.separate(tape, h_in)?;

        let f_geo = if self.cfg.use_geo {
            let table = self.geo_embeddings(tape)?;
            Some(tape.gather_rows(table, geo_indices))
        } else {
            None
        };

        let mut parts = vec![f_i, f_s];
        if let Some(g) = f_geo {
            parts.push(g);
        }
        let joint = tape.concat_cols(&parts);
        let joint = match dropout_rng.as_deref_mut() {
            Some(rng) => self.dropout(tape, joint, rng),
            None => joint,
        };
        let sw = tape.param("head.stance.w", self.params.require("head.stance.w")?.clone());
        let sb = tape.param("head.stance.b", self.params.require("head.stance.b")?.clone());
        let sl0 = tape.matmul(joint, sw);
        let stance_logits = tape.add_row(sl0, sb);
        let stance_probs = tape.softmax_rows(stance_logits);

        let reversed = tape.grl(f_i, self.cfg.grl_lambda);
        let tw = tape.param("head.topic.w", self.params.require("head.topic.w")?.clone());
        let tb = tape.param("head.topic.b", self.params.require("head.topic.b")?.clone());
        let tl0 = tape.matmul(reversed, tw);
        let topic_logits = tape.add_row(tl0, tb);
        let topic_probs = tape.softmax_rows(topic_logits);

        Ok(ForwardNodes {
            h,
            h_used,
            f_s,
            f_i,
            f_geo,
            stance_logits,
            stance_probs,
            topic_logits,
            topic_probs,
        })
    }

    /// Linear separation: `f_s = h W + b`, `f_i = h - f_s` (exact split).
    pub fn separate(&self, tape: &mut Tape, h: NodeId) -> Result<(NodeId, NodeId, NodeId)> {
        let d = self.cfg.encoder.hidden;
        let (_, cols) = tape.shape(h);
        if cols != d {
            return Err(Error::Shape {
                context: "separate".into(),
                expected: format!("B x {d}"),
                actual: format!("B x {cols}"),
            });
        }
        let w = tape.param("sep.w", self.params.require("sep.w")?.clone());
        let b = tape.param("sep.b", self.params.require("sep.b")?.clone());
        let raw0 = tape.matmul(h, w);
        let fs_raw = tape.add_row(raw0, b);
        let (f_s, f_i, h_used) = tape.feature_split(h, fs_raw);
        Ok((f_s, f_i, h_used))
    }

    fn dropout(&self, tape: &mut Tape, x: NodeId, rng: &mut ChaCha8Rng) -> NodeId {
        let p = self.cfg.dropout;
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let (r, c) = tape.shape(x);
        let mask =
            Array2::from_shape_fn((r, c), |_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 });
        let m = tape.leaf(mask);
        tape.mul(x, m)
    }

    /// Total trainable scalar count, optionally excluding the encoder
    /// (frozen-encoder configuration).
    pub fn count_parameters(&self, include_encoder: bool) -> usize {
        self.params
            .count_scalars(|n| include_encoder || !n.starts_with("encoder."))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let tensors: BTreeMap<String, TensorData> = self
            .params
            .iter()
            .map(|(n, v)| {
                (
                    n.clone(),
                    TensorData {
                        shape: (v.nrows(), v.ncols()),
                        data: v.iter().cloned().collect(),
                    },
                )
            })
            .collect();
        let ckpt = Checkpoint { config: self.cfg.clone(), graph: self.graph.clone(), tensors };
        let json = serde_json::to_string(&ckpt)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ckpt: Checkpoint = serde_json::from_str(&json)
            .map_err(|e| Error::Checkpoint(format!("parse {}: {e}", path.display())))?;
        ckpt.graph.reindex();

        let expected = ckpt.config.expected_shapes();
        let mut params = ParamStore::new();
        for (name, shape) in &expected {
            let t = ckpt.tensors.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("missing tensor {name:?} in {}", path.display()))
            })?;
            if t.shape != *shape {
                return Err(Error::Shape {
                    context: format!("checkpoint tensor {name}"),
                    expected: format!("{:?}", shape),
                    actual: format!("{:?}", t.shape),
                });
            }
            if t.data.len() != shape.0 * shape.1 {
                return Err(Error::Checkpoint(format!("tensor {name:?} has wrong element count")));
            }
            let arr = Array2::from_shape_vec(*shape, t.data.clone())
                .map_err(|e| Error::Checkpoint(format!("tensor {name:?}: {e}")))?;
            params.insert(name, arr);
        }
        for name in ckpt.tensors.keys() {
            if !expected.contains_key(name) {
                return Err(Error::Checkpoint(format!("unexpected tensor {name:?} in checkpoint")));
            }
        }
        let encoder = TransformerEncoder::new(ckpt.config.encoder.clone());
        Ok(StanceModel { cfg: ckpt.config, encoder, graph: ckpt.graph, params })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorData {
    shape: (usize, usize),
    data: Vec<f64>,
}

/// Single-archive checkpoint: config plus every tensor keyed by module path.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: ModelConfig,
    graph: GeoGraph,
    tensors: BTreeMap<String, TensorData>,
}

/// Standalone stance-probability computation used by oracles and tests:
/// `softmax(W (f_i (+) f_s (+) f_geo) + b)` with plain loops.
pub fn stance_head_oracle(
    f_i: &[f64],
    f_s: &[f64],
    f_geo: &[f64],
    w: &Array2<f64>,
    b: &Array2<f64>,
) -> Vec<f64> {
    let input: Vec<f64> =
        f_i.iter().chain(f_s).chain(f_geo).cloned().collect();
    assert_eq!(input.len(), w.nrows());
    let mut logits = vec![0.0; w.ncols()];
    for (k, logit) in logits.iter_mut().enumerate() {
        *logit = b[[0, k]];
        for (j, x) in input.iter().enumerate() {
            *logit += x * w[[j, k]];
        }
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PolicyDescription, UNKNOWN_REGION};
    use crate::encoder::{build_pair, pad_batch, HashTokenizer};
    use ndarray::array;

    fn tiny_model(seed: u64) -> StanceModel {
        let graph = GeoGraph::new(
            vec!["r0".into(), "r1".into(), "r2".into(), UNKNOWN_REGION.into()],
            &[("r0".into(), "r1".into()), ("r1".into(), "r2".into())],
        )
        .unwrap();
        StanceModel::new(ModelConfig::tiny(4, 2), graph, seed).unwrap()
    }

    fn batch(model: &StanceModel, texts: &[&str]) -> (Vec<TokenPair>, Vec<usize>) {
        let tok = HashTokenizer::new(model.cfg.encoder.vocab_size);
        let d = PolicyDescription { topic_id: "t0".into(), description: "the policy".into() };
        let mut pairs: Vec<TokenPair> =
            texts.iter().map(|t| build_pair(&d, t, &tok).unwrap()).collect();
        pad_batch(&mut pairs, &tok);
        let geo = vec![0usize; texts.len()];
        (pairs, geo)
    }

    #[test]
    fn separation_zero_and_identity_maps() {
        let mut model = tiny_model(1);
        let d = model.cfg.encoder.hidden;
        let h_val = Array2::from_shape_fn((2, d), |(i, j)| 0.1 * (i as f64 + 1.0) * (j as f64 - 3.0));

        // Zero map: f_s = 0, f_i = h.
        model.params.insert("sep.w", Array2::zeros((d, d)));
        model.params.insert("sep.b", Array2::zeros((1, d)));
        let mut tape = Tape::new();
        let h = tape.leaf(h_val.clone());
        let (fs, fi, hq) = model.separate(&mut tape, h).unwrap();
        assert!(tape.value(fs).iter().all(|&v| v == 0.0));
        assert_eq!(tape.value(fi), tape.value(hq));

        // Identity map: f_s = h, f_i = 0.
        model.params.insert("sep.w", Array2::eye(d));
        let mut tape = Tape::new();
        let h = tape.leaf(h_val);
        let (fs, fi, hq) = model.separate(&mut tape, h).unwrap();
        assert_eq!(tape.value(fs), tape.value(hq));
        assert!(tape.value(fi).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn separation_reconstructs_exactly() {
        let model = tiny_model(2);
        let d = model.cfg.encoder.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let h_val = Array2::from_shape_fn((4, d), |_| rng.gen_range(-2.0..2.0));
            let mut tape = Tape::new();
            let h = tape.leaf(h_val);
            let (fs, fi, hq) = model.separate(&mut tape, h).unwrap();
            let sum = tape.add(fs, fi);
            assert_eq!(tape.value(sum), tape.value(hq));
        }
    }

    #[test]
    fn geo_self_loop_fixed_point() {
        // N=1, A=[1], W=I, nonnegative embedding: output equals the embedding.
        let graph = GeoGraph::new(vec!["solo".into()], &[]).unwrap();
        let mut cfg = ModelConfig::tiny(1, 2);
        cfg.geo_dim = 3;
        let mut model = StanceModel::new(cfg, graph, 3).unwrap();
        model.params.insert("geo.embed", array![[0.5, 0.0, 2.0]]);
        model.params.insert("geo.w0", Array2::eye(3));
        model.params.insert("geo.w1", Array2::eye(3));
        let mut tape = Tape::new();
        let e = model.geo_embeddings(&mut tape).unwrap();
        assert_eq!(tape.value(e), &array![[0.5, 0.0, 2.0]]);
    }

    #[test]
    fn geo_two_hop_reach_on_path_graph() {
        let graph = GeoGraph::new(
            vec!["a".into(), "b".into(), "c".into()],
            &[("a".into(), "b".into()), ("b".into(), "c".into())],
        )
        .unwrap();
        let mut cfg = ModelConfig::tiny(3, 2);
        cfg.geo_dim = 4;
        let mut model = StanceModel::new(cfg, graph, 4).unwrap();
        // Identity weights and nonnegative embeddings keep relu transparent,
        // so the output is exactly A(A E): node 0 must see node 2 after
        // two rounds but not after one.
        model.params.insert("geo.w0", Array2::eye(4));
        model.params.insert("geo.w1", Array2::eye(4));
        model.params.insert("geo.embed", Array2::from_elem((3, 4), 1.0));

        let out_row0 = |m: &StanceModel| -> Vec<f64> {
            let mut tape = Tape::new();
            let e = m.geo_embeddings(&mut tape).unwrap();
            tape.value(e).row(0).to_vec()
        };
        let before = out_row0(&model);
        let mut emb = model.params.get("geo.embed").unwrap().clone();
        for j in 0..4 {
            emb[[2, j]] += 1.0;
        }
        model.params.insert("geo.embed", emb);
        let after = out_row0(&model);
        for (a, b) in before.iter().zip(&after) {
            // A² row 0 has a single 1 in column 2.
            assert!((b - a - 1.0).abs() < 1e-12, "2-hop reach: {a} vs {b}");
        }
    }

    #[test]
    fn geo_disconnected_nodes_are_independent() {
        let graph = GeoGraph::new(vec!["x".into(), "y".into()], &[]).unwrap();
        let mut cfg = ModelConfig::tiny(2, 2);
        cfg.geo_dim = 4;
        let mut model = StanceModel::new(cfg, graph, 5).unwrap();
        let out_row0 = |m: &StanceModel| -> Vec<f64> {
            let mut tape = Tape::new();
            let e = m.geo_embeddings(&mut tape).unwrap();
            tape.value(e).row(0).to_vec()
        };
        let before = out_row0(&model);
        let mut emb = model.params.get("geo.embed").unwrap().clone();
        for j in 0..4 {
            emb[[1, j]] += 3.0;
        }
        model.params.insert("geo.embed", emb);
        let after = out_row0(&model);
        assert_eq!(before, after);
    }

    #[test]
    fn stance_head_uniform_and_saturated() {
        let mut model = tiny_model(6);
        let dim = model.cfg.stance_input_dim();
        model.params.insert("head.stance.w", Array2::zeros((dim, 3)));
        model.params.insert("head.stance.b", Array2::zeros((1, 3)));
        let (pairs, geo) = batch(&model, &["any text at all"]);
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &pairs, &geo, None).unwrap();
        let p = tape.value(f.stance_probs);
        for k in 0..3 {
            assert!((p[[0, k]] - 1.0 / 3.0).abs() < 1e-12);
        }

        model.params.insert("head.stance.b", array![[50.0, 0.0, 0.0]]);
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &pairs, &geo, None).unwrap();
        let p = tape.value(f.stance_probs);
        assert!(p[[0, 0]] > 0.999_999);
    }

    #[test]
    fn stance_probs_match_oracle() {
        let model = tiny_model(7);
        let (pairs, geo) = batch(&model, &["check against the oracle", "a second sample"]);
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &pairs, &geo, None).unwrap();
        let fi = tape.value(f.f_i).clone();
        let fs = tape.value(f.f_s).clone();
        let fgeo = tape.value(f.f_geo.unwrap()).clone();
        let probs = tape.value(f.stance_probs);
        let w = model.params.get("head.stance.w").unwrap();
        let b = model.params.get("head.stance.b").unwrap();
        for i in 0..2 {
            let want = stance_head_oracle(
                &fi.row(i).to_vec(),
                &fs.row(i).to_vec(),
                &fgeo.row(i).to_vec(),
                w,
                b,
            );
            for k in 0..3 {
                assert!((probs[[i, k]] - want[k]).abs() < 1e-6);
            }
            let sum: f64 = (0..3).map(|k| probs[[i, k]]).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn topic_head_uniform_and_saturated() {
        let mut model = tiny_model(8);
        let d = model.cfg.encoder.hidden;
        model.params.insert("head.topic.w", Array2::zeros((d, 2)));
        model.params.insert("head.topic.b", Array2::zeros((1, 2)));
        let (pairs, geo) = batch(&model, &["text"]);
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &pairs, &geo, None).unwrap();
        let p = tape.value(f.topic_probs);
        assert!((p[[0, 0]] - 0.5).abs() < 1e-12);

        model.params.insert("head.topic.b", array![[0.0, 60.0]]);
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &pairs, &geo, None).unwrap();
        let p = tape.value(f.topic_probs);
        assert!(p[[0, 1]] > 0.999_999);
    }

    #[test]
    fn discriminator_sees_only_f_i() {
        // Gradient of the topic loss must not reach the geo tensors, and the
        // f_s slice must receive zero topic-loss gradient.
        let model = tiny_model(9);
        let (pairs, geo) = batch(&model, &["one", "two texts here"]);
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &pairs, &geo, None).unwrap();
        let loss = tape.mean_cross_entropy(f.topic_logits, &[0, 1]);
        let grads = tape.backward(loss);
        assert!(grads["geo.embed"].iter().all(|&g| g == 0.0));
        assert!(grads["geo.w0"].iter().all(|&g| g == 0.0));
        assert!(grads["head.stance.w"].iter().all(|&g| g == 0.0));
        let g_fs = tape.grad_of(loss, f.f_s);
        assert!(g_fs.iter().all(|&g| g == 0.0));
        let g_fi = tape.grad_of(loss, f.f_i);
        assert!(g_fi.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn parameter_count_additivity() {
        let model = tiny_model(10);
        let total = model.count_parameters(true);
        let without_encoder = model.count_parameters(false);
        let encoder_only: usize = model
            .params
            .iter()
            .filter(|(n, _)| n.starts_with("encoder."))
            .map(|(_, v)| v.len())
            .sum();
        assert_eq!(total, without_encoder + encoder_only);
        assert!(total > 0);
    }

    #[test]
    fn tiny_count_matches_analytic_sum() {
        let model = tiny_model(11);
        let analytic: usize =
            model.cfg.expected_shapes().values().map(|(r, c)| r * c).sum();
        assert_eq!(model.count_parameters(true), analytic);
    }

    #[test]
    fn pretrained_config_counts_about_110m() {
        // Static count only: 52 regions, 3 topic classes, F = 256.
        let cfg = ModelConfig::pretrained(52, 3, 256);
        let count: usize = cfg.expected_shapes().values().map(|(r, c)| r * c).sum();
        let target = 110.1e6;
        let rel = (count as f64 - target).abs() / target;
        assert!(rel < 0.02, "count {count} deviates {rel:.4} from 110.1M");
    }

    #[test]
    fn checkpoint_round_trip_and_shape_validation() {
        let model = tiny_model(12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        model.save_checkpoint(&path).unwrap();
        let loaded = StanceModel::load_checkpoint(&path).unwrap();
        assert_eq!(model.cfg, loaded.cfg);
        for (name, v) in model.params.iter() {
            assert_eq!(v, loaded.params.get(name).unwrap(), "{name}");
        }

        // Corrupt one tensor's shape and expect a named failure.
        let json = std::fs::read_to_string(&path).unwrap();
        let bad = json.replace("\"sep.w\":{\"shape\":[32,32]", "\"sep.w\":{\"shape\":[32,31]");
        assert_ne!(json, bad);
        let bad_path = dir.path().join("bad.ckpt.json");
        std::fs::write(&bad_path, bad).unwrap();
        let err = StanceModel::load_checkpoint(&bad_path).unwrap_err();
        assert!(err.to_string().contains("sep.w"), "{err}");
    }

    #[test]
    fn grl_lambda_zero_stops_adversarial_gradient() {
        let mut model = tiny_model(13);
        model.cfg.grl_lambda = 0.0;
        let (pairs, geo) = batch(&model, &["text sample"]);
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &pairs, &geo, None).unwrap();
        let loss = tape.mean_cross_entropy(f.topic_logits, &[0]);
        let grads = tape.backward(loss);
        // Discriminator still learns; upstream sees exactly zero.
        assert!(grads["head.topic.w"].iter().any(|&g| g != 0.0));
        assert!(grads["sep.w"].iter().all(|&g| g == 0.0));
        assert!(grads["encoder.embed.word"].iter().all(|&g| g == 0.0));
    }
}
