//! Token embedding and the recurrent sequence encoders.
//!
//! The zero pronoun is encoded by two vanilla tanh RNNs: one runs
//! left-to-right over the preceding text (the same two-sentence window the
//! candidate extraction uses), the other right-to-left over the rest of the
//! gap's sentence, so both final states are adjacent to the gap. Candidate
//! noun phrases are encoded left-to-right over their content tokens only.
//! Backward passes unroll the exact computation (backpropagation through
//! time) and accumulate into the parameter store.

use crate::corpus::{span_tokens, Document, NpSpan, ZpLocation};
use crate::features::FEATURE_COUNT;
use crate::math::{ParamStore, RngStream, Tensor, INIT_SCALE};

/// Embedding table parameter name.
pub const EMBED: &str = "embed";
/// RNN cell prefixes; each owns `.w_x`, `.w_h`, `.b`.
pub const ZP_PRE: &str = "zp_pre";
pub const ZP_POST: &str = "zp_post";
pub const NP_CELL: &str = "np";
/// Agent parameter names.
pub const AGENT_W1: &str = "agent.w1";
pub const AGENT_B1: &str = "agent.b1";
pub const AGENT_W2: &str = "agent.w2";
pub const AGENT_B2: &str = "agent.b2";
pub const AGENT_WS: &str = "agent.w_s";
pub const AGENT_BS: &str = "agent.b_s";

// ---------------------------------------------------------------------------
// Model configuration
// ---------------------------------------------------------------------------

/// Dimensions of every trainable component. The state vector fed to the
/// agent is the concatenation (v_zp, v_np, v_ante, v_feature) of sizes
/// (2·d_h, d_h, 2·d_h, FEATURE_COUNT).
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_h: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub n_features: usize,
}

impl ModelConfig {
    /// Default dimensions: 100-d embeddings, 100-d encoder hidden states,
    /// agent hidden layers of 256 and 512.
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_emb: 100,
            d_h: 100,
            hidden1: 256,
            hidden2: 512,
            n_features: FEATURE_COUNT,
        }
    }

    /// Small dimensions for fixtures and numeric checks.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig { vocab_size, d_emb: 6, d_h: 5, hidden1: 8, hidden2: 9, n_features: FEATURE_COUNT }
    }

    pub fn v_zp_dim(&self) -> usize {
        2 * self.d_h
    }

    pub fn v_np_dim(&self) -> usize {
        self.d_h
    }

    pub fn v_ante_dim(&self) -> usize {
        2 * self.d_h
    }

    pub fn d_state(&self) -> usize {
        self.v_zp_dim() + self.v_np_dim() + self.v_ante_dim() + self.n_features
    }

    /// Fresh parameter store: weights uniform(-0.08, 0.08), biases zero.
    pub fn init_params(&self, rng: &mut RngStream) -> ParamStore {
        let mut store = ParamStore::new();
        store.insert(EMBED, Tensor::uniform(self.vocab_size, self.d_emb, INIT_SCALE, rng));
        for prefix in [ZP_PRE, ZP_POST, NP_CELL] {
            store.insert(
                &format!("{prefix}.w_x"),
                Tensor::uniform(self.d_h, self.d_emb, INIT_SCALE, rng),
            );
            store.insert(
                &format!("{prefix}.w_h"),
                Tensor::uniform(self.d_h, self.d_h, INIT_SCALE, rng),
            );
            store.insert(&format!("{prefix}.b"), Tensor::zeros(self.d_h, 1));
        }
        store.insert(AGENT_W1, Tensor::uniform(self.hidden1, self.d_state(), INIT_SCALE, rng));
        store.insert(AGENT_B1, Tensor::zeros(self.hidden1, 1));
        store.insert(AGENT_W2, Tensor::uniform(self.hidden2, self.hidden1, INIT_SCALE, rng));
        store.insert(AGENT_B2, Tensor::zeros(self.hidden2, 1));
        store.insert(AGENT_WS, Tensor::uniform(2, self.hidden2, INIT_SCALE, rng));
        store.insert(AGENT_BS, Tensor::zeros(2, 1));
        store
    }
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

/// Look up embedding rows for a list of token ids.
pub fn embed(store: &ParamStore, ids: &[u32]) -> Vec<Vec<f64>> {
    let table = store.value(EMBED);
    ids.iter()
        .map(|id| {
            assert!((*id as usize) < table.rows(), "token id {id} out of vocabulary");
            table.row(*id as usize).to_vec()
        })
        .collect()
}

/// Accumulate embedding gradients; repeated ids accumulate additively.
pub fn embed_backward(store: &mut ParamStore, ids: &[u32], d_vecs: &[Vec<f64>]) {
    assert_eq!(ids.len(), d_vecs.len(), "embedding backward length mismatch");
    let grad = store.grad_mut(EMBED);
    for (id, d) in ids.iter().zip(d_vecs.iter()) {
        let row = grad.row_mut(*id as usize);
        for (g, dv) in row.iter_mut().zip(d.iter()) {
            *g += dv;
        }
    }
}

// ---------------------------------------------------------------------------
// RNN cell
// ---------------------------------------------------------------------------

/// Saved forward activations for backpropagation through time. Inputs and
/// hidden states are stored in processing order.
#[derive(Debug, Clone)]
pub struct RnnCache {
    reversed: bool,
    inputs: Vec<Vec<f64>>,
    hiddens: Vec<Vec<f64>>,
}

impl RnnCache {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Fold a tanh RNN cell over the inputs: h_t = tanh(W_x x_t + W_h h_{t-1} + b)
/// with h_0 = 0. `reversed` processes the inputs right-to-left. Empty input
/// returns h_0.
pub fn rnn_encode(
    store: &ParamStore,
    prefix: &str,
    inputs: &[Vec<f64>],
    reversed: bool,
) -> (Vec<f64>, RnnCache) {
    let w_x = store.value(&format!("{prefix}.w_x"));
    let w_h = store.value(&format!("{prefix}.w_h"));
    let b = store.value(&format!("{prefix}.b"));
    let d_h = w_x.rows();

    let ordered: Vec<Vec<f64>> = if reversed {
        inputs.iter().rev().cloned().collect()
    } else {
        inputs.to_vec()
    };

    let mut hiddens: Vec<Vec<f64>> = Vec::with_capacity(ordered.len());
    let mut h = vec![0.0; d_h];
    for x in &ordered {
        let mut pre = b.data().to_vec();
        w_x.matvec_acc(x, &mut pre);
        w_h.matvec_acc(&h, &mut pre);
        h = pre.iter().map(|v| v.tanh()).collect();
        hiddens.push(h.clone());
    }
    (h, RnnCache { reversed, inputs: ordered, hiddens })
}

/// BPTT for `rnn_encode`. Accumulates cell gradients into the store and
/// returns the input gradients in the orientation the inputs were passed in.
pub fn rnn_backward(
    store: &mut ParamStore,
    prefix: &str,
    cache: &RnnCache,
    d_final: &[f64],
) -> Vec<Vec<f64>> {
    let steps = cache.inputs.len();
    if steps == 0 {
        return Vec::new();
    }
    let d_h_dim = d_final.len();
    let w_x_name = format!("{prefix}.w_x");
    let w_h_name = format!("{prefix}.w_h");
    let b_name = format!("{prefix}.b");

    let mut d_inputs = vec![vec![0.0; cache.inputs[0].len()]; steps];
    let mut d_h = d_final.to_vec();
    for t in (0..steps).rev() {
        let h_t = &cache.hiddens[t];
        // through tanh
        let d_pre: Vec<f64> =
            h_t.iter().zip(d_h.iter()).map(|(h, d)| d * (1.0 - h * h)).collect();

        let (w_x, g_x) = store.value_and_grad_mut(&w_x_name);
        g_x.add_outer(&d_pre, &cache.inputs[t]);
        w_x.matvec_transpose_acc(&d_pre, &mut d_inputs[t]);

        let h_prev: Vec<f64> =
            if t == 0 { vec![0.0; d_h_dim] } else { cache.hiddens[t - 1].clone() };
        let (w_h, g_h) = store.value_and_grad_mut(&w_h_name);
        g_h.add_outer(&d_pre, &h_prev);
        let mut d_h_next = vec![0.0; d_h_dim];
        w_h.matvec_transpose_acc(&d_pre, &mut d_h_next);
        d_h = d_h_next;

        store.grad_mut(&b_name).add_slice(&d_pre);
    }
    if cache.reversed {
        d_inputs.reverse();
    }
    d_inputs
}

// ---------------------------------------------------------------------------
// ZP / NP encoders
// ---------------------------------------------------------------------------

/// Forward state of one zero-pronoun encoding.
#[derive(Debug, Clone)]
pub struct ZpCache {
    pre_ids: Vec<u32>,
    post_ids: Vec<u32>,
    pre: RnnCache,
    post: RnnCache,
}

/// Preceding-context tokens: the two sentences before the gap's sentence plus
/// the gap sentence up to the gap — the same window candidates come from.
fn preceding_tokens(doc: &Document, zp: ZpLocation) -> Vec<u32> {
    let first = zp.sentence_index.saturating_sub(2);
    let mut out = Vec::new();
    for si in first..zp.sentence_index {
        out.extend_from_slice(&doc.sentences[si].tokens);
    }
    out.extend_from_slice(&doc.sentences[zp.sentence_index].tokens[..zp.gap]);
    out
}

fn following_tokens(doc: &Document, zp: ZpLocation) -> Vec<u32> {
    doc.sentences[zp.sentence_index].tokens[zp.gap..].to_vec()
}

/// v_zp: concatenation of the preceding encoder's final state (left-to-right)
/// and the following encoder's final state (right-to-left, ending at the
/// gap). Either half is zero when its text is empty.
pub fn encode_zp(
    cfg: &ModelConfig,
    store: &ParamStore,
    doc: &Document,
    zp: ZpLocation,
) -> (Vec<f64>, ZpCache) {
    let pre_ids = preceding_tokens(doc, zp);
    let post_ids = following_tokens(doc, zp);
    let (pre_h, pre) = rnn_encode(store, ZP_PRE, &embed(store, &pre_ids), false);
    let (post_h, post) = rnn_encode(store, ZP_POST, &embed(store, &post_ids), true);
    let mut v = Vec::with_capacity(cfg.v_zp_dim());
    v.extend_from_slice(&pre_h);
    v.extend_from_slice(&post_h);
    debug_assert_eq!(v.len(), cfg.v_zp_dim());
    (v, ZpCache { pre_ids, post_ids, pre, post })
}

pub fn encode_zp_backward(cfg: &ModelConfig, store: &mut ParamStore, cache: &ZpCache, d_vzp: &[f64]) {
    assert_eq!(d_vzp.len(), cfg.v_zp_dim(), "v_zp gradient dimension mismatch");
    let (d_pre, d_post) = d_vzp.split_at(cfg.d_h);
    if !cache.pre.is_empty() {
        let d_inputs = rnn_backward(store, ZP_PRE, &cache.pre, d_pre);
        embed_backward(store, &cache.pre_ids, &d_inputs);
    }
    if !cache.post.is_empty() {
        let d_inputs = rnn_backward(store, ZP_POST, &cache.post, d_post);
        embed_backward(store, &cache.post_ids, &d_inputs);
    }
}

/// Forward state of one candidate encoding.
#[derive(Debug, Clone)]
pub struct NpCache {
    ids: Vec<u32>,
    rnn: RnnCache,
}

/// v_np: left-to-right encoding of the span's content tokens. Depends only
/// on the token ids, not on the span's position.
pub fn encode_np(
    _cfg: &ModelConfig,
    store: &ParamStore,
    doc: &Document,
    span: &NpSpan,
) -> (Vec<f64>, NpCache) {
    let ids = span_tokens(doc, span).to_vec();
    let (h, rnn) = rnn_encode(store, NP_CELL, &embed(store, &ids), false);
    (h, NpCache { ids, rnn })
}

pub fn encode_np_backward(store: &mut ParamStore, cache: &NpCache, d_vnp: &[f64]) {
    if cache.rnn.is_empty() {
        return;
    }
    let d_inputs = rnn_backward(store, NP_CELL, &cache.rnn, d_vnp);
    embed_backward(store, &cache.ids, &d_inputs);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;
    use crate::math::{finite_diff_grad, rel_err};

    fn toy_doc() -> Document {
        Document {
            id: "d".into(),
            source_tag: "t".into(),
            sentences: vec![
                Sentence { tokens: vec![1, 2, 3], np_spans: vec![] },
                Sentence { tokens: vec![4, 5], np_spans: vec![] },
                Sentence { tokens: vec![6, 7, 8, 9], np_spans: vec![] },
            ],
        }
    }

    #[test]
    fn embed_empty_and_repeated() {
        let cfg = ModelConfig::tiny(10);
        let mut rng = RngStream::new(1);
        let mut store = cfg.init_params(&mut rng);
        assert!(embed(&store, &[]).is_empty());

        let vecs = embed(&store, &[3, 3]);
        assert_eq!(vecs[0], vecs[1]);
        let g = vec![0.5; cfg.d_emb];
        embed_backward(&mut store, &[3, 3], &[g.clone(), g.clone()]);
        let row = store.grad(EMBED).row(3).to_vec();
        for v in row {
            assert!((v - 1.0).abs() < 1e-15, "repeated ids accumulate");
        }
    }

    #[test]
    fn rnn_empty_input_gives_zero_vector() {
        let cfg = ModelConfig::tiny(10);
        let mut rng = RngStream::new(2);
        let store = cfg.init_params(&mut rng);
        let (h, cache) = rnn_encode(&store, NP_CELL, &[], false);
        assert_eq!(h, vec![0.0; cfg.d_h]);
        assert!(cache.is_empty());
    }

    #[test]
    fn rnn_zero_weights_give_zero_output() {
        let cfg = ModelConfig::tiny(10);
        let mut store = ParamStore::new();
        store.insert("np.w_x", Tensor::zeros(cfg.d_h, cfg.d_emb));
        let mut rng = RngStream::new(3);
        store.insert("np.w_h", Tensor::uniform(cfg.d_h, cfg.d_h, 0.5, &mut rng));
        store.insert("np.b", Tensor::zeros(cfg.d_h, 1));
        let (h, _) = rnn_encode(&store, NP_CELL, &[vec![1.0; cfg.d_emb]], false);
        assert_eq!(h, vec![0.0; cfg.d_h]);
    }

    /// BPTT vs finite differences over cell parameters and inputs, both
    /// directions, sequence lengths up to 8.
    #[test]
    fn rnn_backward_matches_finite_differences() {
        for (seed, reversed, len) in [(1u64, false, 6usize), (2, true, 6), (3, false, 8)] {
            let mut rng = RngStream::new(seed);
            let d_emb = 3;
            let d_h = 4;
            let mut store = ParamStore::new();
            store.insert("c.w_x", Tensor::uniform(d_h, d_emb, 0.6, &mut rng));
            store.insert("c.w_h", Tensor::uniform(d_h, d_h, 0.6, &mut rng));
            store.insert("c.b", Tensor::uniform(d_h, 1, 0.3, &mut rng));
            for i in 0..len {
                store.insert(&format!("x{i}"), Tensor::uniform(d_emb, 1, 1.0, &mut rng));
            }
            let probe: Vec<f64> = (0..d_h).map(|_| rng.range(-1.0, 1.0)).collect();

            let run = |s: &ParamStore| -> (Vec<f64>, RnnCache) {
                let inputs: Vec<Vec<f64>> =
                    (0..len).map(|i| s.value(&format!("x{i}")).data().to_vec()).collect();
                rnn_encode(s, "c", &inputs, reversed)
            };
            let p = probe.clone();
            let fd = finite_diff_grad(
                move |s: &ParamStore| {
                    let (h, _) = run(s);
                    h.iter().zip(p.iter()).map(|(a, b)| a * b).sum()
                },
                &mut store,
                1e-5,
            )
            .unwrap();

            store.zero_grads();
            let (_, cache) = run(&store);
            let d_inputs = rnn_backward(&mut store, "c", &cache, &probe);

            for name in ["c.w_x", "c.w_h", "c.b"] {
                for (a, b) in store.grad(name).data().iter().zip(fd[name].data().iter()) {
                    assert!(rel_err(*a, *b) <= 1e-4, "{name}: {a} vs {b}");
                }
            }
            for i in 0..len {
                for (a, b) in d_inputs[i].iter().zip(fd[&format!("x{i}")].data().iter()) {
                    assert!(rel_err(*a, *b) <= 1e-4, "x{i}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn encode_zp_halves_compose() {
        let cfg = ModelConfig::tiny(10);
        let mut rng = RngStream::new(5);
        let store = cfg.init_params(&mut rng);
        let doc = toy_doc();
        let zp = ZpLocation { sentence_index: 2, gap: 2 };
        let (v, _) = encode_zp(&cfg, &store, &doc, zp);
        assert_eq!(v.len(), cfg.v_zp_dim());

        let pre_ids = [1u32, 2, 3, 4, 5, 6, 7];
        let post_ids = [8u32, 9];
        let (pre_h, _) = rnn_encode(&store, ZP_PRE, &embed(&store, &pre_ids), false);
        let (post_h, _) = rnn_encode(&store, ZP_POST, &embed(&store, &post_ids), true);
        assert_eq!(&v[..cfg.d_h], pre_h.as_slice());
        assert_eq!(&v[cfg.d_h..], post_h.as_slice());
    }

    #[test]
    fn encode_zp_empty_halves() {
        let cfg = ModelConfig::tiny(10);
        let mut rng = RngStream::new(6);
        let store = cfg.init_params(&mut rng);
        let doc = Document {
            id: "d".into(),
            source_tag: "t".into(),
            sentences: vec![Sentence { tokens: vec![1, 2], np_spans: vec![] }],
        };
        // gap at start of the first sentence: empty preceding text
        let (v, _) = encode_zp(&cfg, &store, &doc, ZpLocation { sentence_index: 0, gap: 0 });
        assert_eq!(&v[..cfg.d_h], vec![0.0; cfg.d_h].as_slice());
        // gap at end: empty following text
        let (v, _) = encode_zp(&cfg, &store, &doc, ZpLocation { sentence_index: 0, gap: 2 });
        assert_eq!(&v[cfg.d_h..], vec![0.0; cfg.d_h].as_slice());
    }

    #[test]
    fn encode_np_is_position_free() {
        let cfg = ModelConfig::tiny(10);
        let mut rng = RngStream::new(7);
        let store = cfg.init_params(&mut rng);
        let doc = Document {
            id: "d".into(),
            source_tag: "t".into(),
            sentences: vec![
                Sentence { tokens: vec![5, 6, 1, 2], np_spans: vec![] },
                Sentence { tokens: vec![9, 9, 9, 5, 6], np_spans: vec![] },
            ],
        };
        let a = NpSpan { sentence_index: 0, start: 0, end: 2, is_maximal: true, is_modifier: false };
        let b = NpSpan { sentence_index: 1, start: 3, end: 5, is_maximal: true, is_modifier: false };
        let (va, _) = encode_np(&cfg, &store, &doc, &a);
        let (vb, _) = encode_np(&cfg, &store, &doc, &b);
        assert_eq!(va, vb, "same tokens, same vector");
        assert_eq!(va.len(), cfg.v_np_dim());
    }

    #[test]
    fn encode_np_single_token_is_one_step() {
        let cfg = ModelConfig::tiny(10);
        let mut rng = RngStream::new(8);
        let store = cfg.init_params(&mut rng);
        let doc = toy_doc();
        let span = NpSpan { sentence_index: 0, start: 1, end: 2, is_maximal: true, is_modifier: false };
        let (v, _) = encode_np(&cfg, &store, &doc, &span);
        let (single, _) = rnn_encode(&store, NP_CELL, &embed(&store, &[2]), false);
        assert_eq!(v, single);
    }

    /// Gradients through encode_np/encode_zp into the embedding table match
    /// finite differences.
    #[test]
    fn encoder_gradients_reach_embeddings() {
        let cfg = ModelConfig::tiny(10);
        let mut rng = RngStream::new(9);
        let mut store = cfg.init_params(&mut rng);
        let doc = toy_doc();
        let zp = ZpLocation { sentence_index: 2, gap: 2 };
        let span = NpSpan { sentence_index: 1, start: 0, end: 2, is_maximal: true, is_modifier: false };
        let probe_zp: Vec<f64> = (0..cfg.v_zp_dim()).map(|_| rng.range(-1.0, 1.0)).collect();
        let probe_np: Vec<f64> = (0..cfg.v_np_dim()).map(|_| rng.range(-1.0, 1.0)).collect();

        let (pz, pn, d, s) = (probe_zp.clone(), probe_np.clone(), doc.clone(), span);
        let cfg2 = cfg.clone();
        let fd = finite_diff_grad(
            move |st: &ParamStore| {
                let (vz, _) = encode_zp(&cfg2, st, &d, zp);
                let (vn, _) = encode_np(&cfg2, st, &d, &s);
                vz.iter().zip(pz.iter()).map(|(a, b)| a * b).sum::<f64>()
                    + vn.iter().zip(pn.iter()).map(|(a, b)| a * b).sum::<f64>()
            },
            &mut store,
            1e-5,
        )
        .unwrap();

        store.zero_grads();
        let (_, zc) = encode_zp(&cfg, &store, &doc, zp);
        let (_, nc) = encode_np(&cfg, &store, &doc, &span);
        encode_zp_backward(&cfg, &mut store, &zc, &probe_zp);
        encode_np_backward(&mut store, &nc, &probe_np);

        for name in [EMBED, "zp_pre.w_x", "zp_post.w_h", "np.w_x", "np.b"] {
            for (a, b) in store.grad(name).data().iter().zip(fd[name].data().iter()) {
                assert!(rel_err(*a, *b) <= 1e-4, "{name}: {a} vs {b}");
            }
        }
    }
}
