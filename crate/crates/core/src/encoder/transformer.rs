//! Bidirectional transformer encoder recorded on the autodiff tape.
//!
//! One struct serves both encoder kinds: the tiny randomly initialized
//! configuration used by tests, and the pretrained-base configuration whose
//! weights are supplied through a checkpoint. The pooler tensors of the
//! pretrained configuration are carried (and counted) but the aggregate
//! output is the raw final-layer state at position 0.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TokenPair;
use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_position: usize,
    pub type_vocab: usize,
    pub layer_norm_eps: f64,
    /// Whether the auxiliary pooler tensors exist (pretrained configuration).
    pub pooler: bool,
}

impl TransformerConfig {
    pub fn tiny() -> Self {
        TransformerConfig {
            vocab_size: 512,
            hidden: 32,
            layers: 2,
            heads: 2,
            ffn: 64,
            max_position: 160,
            type_vocab: 2,
            layer_norm_eps: 1e-12,
            pooler: false,
        }
    }

    /// Dimensions of the pretrained uncased base encoder.
    pub fn pretrained_base() -> Self {
        TransformerConfig {
            vocab_size: 30522,
            hidden: 768,
            layers: 12,
            heads: 12,
            ffn: 3072,
            max_position: 512,
            type_vocab: 2,
            layer_norm_eps: 1e-12,
            pooler: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub cfg: TransformerConfig,
}

impl TransformerEncoder {
    pub fn new(cfg: TransformerConfig) -> Self {
        TransformerEncoder { cfg }
    }

    pub fn hidden_size(&self) -> usize {
        self.cfg.hidden
    }

    /// Registers all encoder tensors under `encoder.*`, initialized from a
    /// small-variance Gaussian (overwritten when loading a checkpoint).
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let c = &self.cfg;
        let gauss = |r: usize, cc: usize, rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((r, cc), |_| {
                // Box-Muller keeps us off rand_distr for one distribution.
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                0.02 * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
        };
        store.insert("encoder.embed.word", gauss(c.vocab_size, c.hidden, rng));
        store.insert("encoder.embed.pos", gauss(c.max_position, c.hidden, rng));
        store.insert("encoder.embed.type", gauss(c.type_vocab, c.hidden, rng));
        store.insert("encoder.embed.ln.gain", Array2::ones((1, c.hidden)));
        store.insert("encoder.embed.ln.bias", Array2::zeros((1, c.hidden)));
        for l in 0..c.layers {
            let p = format!("encoder.layer{l}");
            for name in ["wq", "wk", "wv", "wo"] {
                store.insert(&format!("{p}.attn.{name}"), gauss(c.hidden, c.hidden, rng));
            }
            for name in ["bq", "bk", "bv", "bo"] {
                store.insert(&format!("{p}.attn.{name}"), Array2::zeros((1, c.hidden)));
            }
            store.insert(&format!("{p}.attn.ln.gain"), Array2::ones((1, c.hidden)));
            store.insert(&format!("{p}.attn.ln.bias"), Array2::zeros((1, c.hidden)));
            store.insert(&format!("{p}.ffn.w1"), gauss(c.hidden, c.ffn, rng));
            store.insert(&format!("{p}.ffn.b1"), Array2::zeros((1, c.ffn)));
            store.insert(&format!("{p}.ffn.w2"), gauss(c.ffn, c.hidden, rng));
            store.insert(&format!("{p}.ffn.b2"), Array2::zeros((1, c.hidden)));
            store.insert(&format!("{p}.ffn.ln.gain"), Array2::ones((1, c.hidden)));
            store.insert(&format!("{p}.ffn.ln.bias"), Array2::zeros((1, c.hidden)));
        }
        if c.pooler {
            store.insert("encoder.pooler.w", gauss(c.hidden, c.hidden, rng));
            store.insert("encoder.pooler.b", Array2::zeros((1, c.hidden)));
        }
    }

    /// Encodes a batch of padded pairs; returns a `B x hidden` node holding
    /// the aggregate-position state of each pair.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        pairs: &[TokenPair],
    ) -> Result<NodeId> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("empty encode batch".into()));
        }
        let common_len = pairs[0].len();
        for p in pairs {
            if p.len() != common_len {
                return Err(Error::Shape {
                    context: "encode batch".into(),
                    expected: format!("all pairs padded to length {common_len}"),
                    actual: format!("{}", p.len()),
                });
            }
        }

        let c = &self.cfg;
        let word = tape.param("encoder.embed.word", store.require("encoder.embed.word")?.clone());
        let pos = tape.param("encoder.embed.pos", store.require("encoder.embed.pos")?.clone());
        let typ = tape.param("encoder.embed.type", store.require("encoder.embed.type")?.clone());
        let eg = tape.param("encoder.embed.ln.gain", store.require("encoder.embed.ln.gain")?.clone());
        let eb = tape.param("encoder.embed.ln.bias", store.require("encoder.embed.ln.bias")?.clone());

        let mut layer_params = Vec::new();
        for l in 0..c.layers {
            let p = format!("encoder.layer{l}");
            let get = |n: &str, tape: &mut Tape| -> Result<NodeId> {
                let key = format!("{p}.{n}");
                Ok(tape.param(&key, store.require(&key)?.clone()))
            };
            layer_params.push((
                get("attn.wq", tape)?,
                get("attn.bq", tape)?,
                get("attn.wk", tape)?,
                get("attn.bk", tape)?,
                get("attn.wv", tape)?,
                get("attn.bv", tape)?,
                get("attn.wo", tape)?,
                get("attn.bo", tape)?,
                get("attn.ln.gain", tape)?,
                get("attn.ln.bias", tape)?,
                [
                    get("ffn.w1", tape)?,
                    get("ffn.b1", tape)?,
                    get("ffn.w2", tape)?,
                    get("ffn.b2", tape)?,
                    get("ffn.ln.gain", tape)?,
                    get("ffn.ln.bias", tape)?,
                ],
            ));
        }

        let dh = c.hidden / c.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut cls_rows = Vec::with_capacity(pairs.len());

        for pair in pairs {
            // Each example runs at its true (unpadded) length; padded
            // positions would be masked out of attention anyway.
            let len = pair.content_len();
            if len == 0 {
                return Err(Error::EmptyInput("pair with empty attention mask".into()));
            }
            if len > c.max_position {
                return Err(Error::Config(format!(
                    "pair length {len} exceeds encoder positional capacity {}",
                    c.max_position
                )));
            }
            let ids = &pair.token_ids[..len];
            if let Some(&bad) = ids.iter().find(|&&id| id >= c.vocab_size) {
                return Err(Error::Config(format!(
                    "token id {bad} outside encoder vocabulary ({})",
                    c.vocab_size
                )));
            }
            let segs: Vec<usize> =
                pair.segment_ids[..len].iter().map(|&s| s as usize).collect();
            let positions: Vec<usize> = (0..len).collect();

            let we = tape.gather_rows(word, ids);
            let pe = tape.gather_rows(pos, &positions);
            let te = tape.gather_rows(typ, &segs);
            let sum = tape.add(we, pe);
            let sum = tape.add(sum, te);
            let mut x = tape.layer_norm(sum, eg, eb, c.layer_norm_eps);

            for (wq, bq, wk, bk, wv, bv, wo, bo, ag, ab, ffn) in &layer_params {
                let q0 = tape.matmul(x, *wq);
                let q = tape.add_row(q0, *bq);
                let k0 = tape.matmul(x, *wk);
                let k = tape.add_row(k0, *bk);
                let v0 = tape.matmul(x, *wv);
                let v = tape.add_row(v0, *bv);

                let mut heads = Vec::with_capacity(c.heads);
                for h in 0..c.heads {
                    let qh = tape.slice_cols(q, h * dh, dh);
                    let kh = tape.slice_cols(k, h * dh, dh);
                    let vh = tape.slice_cols(v, h * dh, dh);
                    let kt = tape.transpose(kh);
                    let scores0 = tape.matmul(qh, kt);
                    let scores = tape.scale(scores0, scale);
                    let attn = tape.softmax_rows(scores);
                    heads.push(tape.matmul(attn, vh));
                }
                let ctx = tape.concat_cols(&heads);
                let proj0 = tape.matmul(ctx, *wo);
                let proj = tape.add_row(proj0, *bo);
                let res = tape.add(x, proj);
                x = tape.layer_norm(res, *ag, *ab, c.layer_norm_eps);

                let [w1, b1, w2, b2, fg, fb] = ffn;
                let f0 = tape.matmul(x, *w1);
                let f1 = tape.add_row(f0, *b1);
                let f2 = tape.relu(f1);
                let f3 = tape.matmul(f2, *w2);
                let f4 = tape.add_row(f3, *b2);
                let res2 = tape.add(x, f4);
                x = tape.layer_norm(res2, *fg, *fb, c.layer_norm_eps);
            }

            cls_rows.push(tape.slice_rows(x, 0, 1));
        }

        Ok(tape.concat_rows(&cls_rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PolicyDescription;
    use crate::encoder::{build_pair, pad_batch, HashTokenizer};
    use rand::SeedableRng;

    fn setup() -> (TransformerEncoder, ParamStore, HashTokenizer) {
        let enc = TransformerEncoder::new(TransformerConfig::tiny());
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        enc.init_params(&mut store, &mut rng);
        (enc, store, HashTokenizer::default())
    }

    fn pairs(tok: &HashTokenizer, texts: &[&str]) -> Vec<TokenPair> {
        let d = PolicyDescription { topic_id: "t".into(), description: "a policy".into() };
        let mut ps: Vec<TokenPair> =
            texts.iter().map(|t| build_pair(&d, t, tok).unwrap()).collect();
        pad_batch(&mut ps, tok);
        ps
    }

    #[test]
    fn batch_shape_contract() {
        let (enc, store, tok) = setup();
        let ps = pairs(&tok, &["hello world", "another much longer example text", "third"]);
        let mut tape = Tape::new();
        let h = enc.encode(&mut tape, &store, &ps).unwrap();
        assert_eq!(tape.shape(h), (3, 32));
        assert!(tape.value(h).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn identical_pairs_give_identical_vectors() {
        let (enc, store, tok) = setup();
        let ps = pairs(&tok, &["same input text", "same input text"]);
        let mut tape = Tape::new();
        let h = enc.encode(&mut tape, &store, &ps).unwrap();
        let v = tape.value(h);
        for j in 0..32 {
            assert_eq!(v[[0, j]], v[[1, j]]);
        }
    }

    #[test]
    fn batch_permutation_equivariance() {
        let (enc, store, tok) = setup();
        let texts = ["first text", "the second sample", "third one here"];
        let fwd = |order: &[usize]| {
            let sel: Vec<&str> = order.iter().map(|&i| texts[i]).collect();
            let ps = pairs(&tok, &sel);
            let mut tape = Tape::new();
            let h = enc.encode(&mut tape, &store, &ps).unwrap();
            tape.value(h).clone()
        };
        let a = fwd(&[0, 1, 2]);
        let b = fwd(&[2, 0, 1]);
        for j in 0..32 {
            assert!((a[[0, j]] - b[[1, j]]).abs() < 1e-6);
            assert!((a[[1, j]] - b[[2, j]]).abs() < 1e-6);
            assert!((a[[2, j]] - b[[0, j]]).abs() < 1e-6);
        }
    }

    #[test]
    fn over_capacity_pair_is_rejected() {
        let (enc, store, tok) = setup();
        let mut enc = enc;
        enc.cfg.max_position = 8;
        let ps = pairs(&tok, &["a text that is definitely longer than eight tokens in total"]);
        let mut tape = Tape::new();
        assert!(enc.encode(&mut tape, &store, &ps).is_err());
    }

    #[test]
    fn gradient_reaches_encoder_parameters() {
        let (enc, store, tok) = setup();
        let ps = pairs(&tok, &["gradient smoke test"]);
        let mut tape = Tape::new();
        let h = enc.encode(&mut tape, &store, &ps).unwrap();
        let loss = tape.mean_cross_entropy(h, &[0]);
        let grads = tape.backward(loss);
        let wq = &grads["encoder.layer0.attn.wq"];
        assert!(wq.iter().any(|&g| g != 0.0), "no gradient reached attention weights");
        let we = &grads["encoder.embed.word"];
        assert!(we.iter().any(|&g| g != 0.0), "no gradient reached word embeddings");
    }
}
