//! The policy network.
//!
//! At each step of an episode the agent sees the state (v_zp, v_np_t,
//! v_ante(t), v_feature_t): the pronoun context vector, the current
//! candidate's content vector, a max+mean pooled summary of the candidates
//! already selected, and the handcrafted feature bits. Two tanh hidden
//! layers (with inverted dropout on each layer's output during training)
//! feed a 2-way scoring layer; softmax over the scores is the action
//! distribution. Index 0 is `corefer`, index 1 is `non-corefer` — fixed and
//! serialized in checkpoints.

use crate::encoders::{
    ModelConfig, AGENT_B1, AGENT_B2, AGENT_BS, AGENT_W1, AGENT_W2, AGENT_WS,
};
use crate::error::Result;
use crate::math::{affine, affine_backward, dropout, softmax, tanh_backward, tanh_elem};
use crate::math::{ParamStore, RngStream};

/// The two actions available at every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Corefer,
    NonCorefer,
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Corefer => 0,
            Action::NonCorefer => 1,
        }
    }

    pub fn is_corefer(self) -> bool {
        matches!(self, Action::Corefer)
    }
}

/// Probability pair over (corefer, non-corefer).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDistribution {
    probs: [f64; 2],
}

impl ActionDistribution {
    fn new(probs: [f64; 2]) -> Self {
        debug_assert!((probs[0] + probs[1] - 1.0).abs() < 1e-12, "distribution must sum to 1");
        debug_assert!(probs[0] > 0.0 && probs[1] > 0.0, "softmax probabilities are positive");
        ActionDistribution { probs }
    }

    pub fn p_corefer(&self) -> f64 {
        self.probs[0]
    }

    pub fn p_non_corefer(&self) -> f64 {
        self.probs[1]
    }

    pub fn prob(&self, a: Action) -> f64 {
        self.probs[a.index()]
    }

    pub fn probs(&self) -> [f64; 2] {
        self.probs
    }

    /// Draw an action; consumes exactly one uniform variate.
    pub fn sample(&self, rng: &mut RngStream) -> Action {
        if rng.uniform() < self.probs[0] {
            Action::Corefer
        } else {
            Action::NonCorefer
        }
    }

    /// Argmax action; the tie at exactly 0.5 resolves to corefer.
    pub fn greedy(&self) -> Action {
        if self.probs[0] >= self.probs[1] {
            Action::Corefer
        } else {
            Action::NonCorefer
        }
    }
}

// ---------------------------------------------------------------------------
// Antecedent memory + pooling
// ---------------------------------------------------------------------------

/// Vectors of the candidates selected (action corefer) so far in an episode,
/// together with their candidate indices. Append-only within an episode.
#[derive(Debug, Clone, Default)]
pub struct AnteMemory {
    entries: Vec<(usize, Vec<f64>)>,
}

impl AnteMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, candidate_index: usize, v_np: Vec<f64>) {
        self.entries.push((candidate_index, v_np));
    }

    /// Remove the most recent entry; lets the enumeration oracle backtrack
    /// through the action tree.
    pub fn pop(&mut self) {
        self.entries.pop();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|(i, _)| *i)
    }
}

/// What the pooling backward needs: which candidates were pooled and, per
/// max-half coordinate, which member supplied the maximum.
#[derive(Debug, Clone)]
pub struct PoolCache {
    members: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolCache {
    pub fn members(&self) -> &[usize] {
        &self.members
    }
}

/// v_ante: coordinatewise max over the memory in the first d entries and the
/// coordinatewise mean in the next d. An empty memory pools to the zero
/// vector. Ties in the max route to the earliest-selected member.
pub fn pool_antecedents(memory: &AnteMemory, d: usize) -> (Vec<f64>, PoolCache) {
    let mut out = vec![0.0; 2 * d];
    if memory.is_empty() {
        return (out, PoolCache { members: Vec::new(), argmax: Vec::new() });
    }
    let n = memory.len() as f64;
    let mut argmax = vec![0usize; d];
    for (slot, (_, v)) in memory.entries.iter().enumerate() {
        assert_eq!(v.len(), d, "pooled vector dimension mismatch");
        for k in 0..d {
            if slot == 0 || v[k] > out[k] {
                out[k] = v[k];
                argmax[k] = slot;
            }
            out[d + k] += v[k] / n;
        }
    }
    let members = memory.entries.iter().map(|(i, _)| *i).collect();
    (out, PoolCache { members, argmax })
}

/// Backward of `pool_antecedents`: the max half routes each coordinate's
/// gradient to its argmax member, the mean half spreads gradients uniformly.
/// Accumulates into `d_np[candidate_index]`.
pub fn pool_backward(cache: &PoolCache, d_vante: &[f64], d_np: &mut [Vec<f64>]) {
    if cache.members.is_empty() {
        return;
    }
    let d = d_vante.len() / 2;
    let n = cache.members.len() as f64;
    for k in 0..d {
        let owner = cache.members[cache.argmax[k]];
        d_np[owner][k] += d_vante[k];
        let mean_share = d_vante[d + k] / n;
        for m in &cache.members {
            d_np[*m][k] += mean_share;
        }
    }
}

/// Concatenate (v_zp, v_np, v_ante, v_feature) in that order.
pub fn assemble_state(v_zp: &[f64], v_np: &[f64], v_ante: &[f64], v_feat: &[f64]) -> Vec<f64> {
    let mut s = Vec::with_capacity(v_zp.len() + v_np.len() + v_ante.len() + v_feat.len());
    s.extend_from_slice(v_zp);
    s.extend_from_slice(v_np);
    s.extend_from_slice(v_ante);
    s.extend_from_slice(v_feat);
    s
}

// ---------------------------------------------------------------------------
// Agent forward / backward
// ---------------------------------------------------------------------------

/// Forward intermediates for one scoring step. Records the store version so
/// reuse across a parameter update is detected.
#[derive(Debug, Clone)]
pub struct AgentCache {
    state: Vec<f64>,
    h1: Vec<f64>,
    mask1: Vec<f64>,
    h1_dropped: Vec<f64>,
    h2: Vec<f64>,
    mask2: Vec<f64>,
    h2_dropped: Vec<f64>,
    probs: [f64; 2],
    store_version: u64,
}

/// h1 = tanh(W1 s + b1); h2 = tanh(W2 h1 + b2); score = Ws h2 + bs;
/// distribution = softmax(score). Dropout is applied to the output of each
/// hidden layer when `training` is set.
pub fn agent_forward(
    cfg: &ModelConfig,
    store: &ParamStore,
    state: &[f64],
    dropout_rate: f64,
    training: bool,
    rng: &mut RngStream,
) -> Result<(ActionDistribution, AgentCache)> {
    assert_eq!(state.len(), cfg.d_state(), "state dimension mismatch");
    let h1 = tanh_elem(&affine(store.value(AGENT_W1), state, store.value(AGENT_B1).data()));
    let (h1_dropped, mask1) = dropout(&h1, dropout_rate, rng, training)?;
    let h2 = tanh_elem(&affine(store.value(AGENT_W2), &h1_dropped, store.value(AGENT_B2).data()));
    let (h2_dropped, mask2) = dropout(&h2, dropout_rate, rng, training)?;
    let score = affine(store.value(AGENT_WS), &h2_dropped, store.value(AGENT_BS).data());
    let p = softmax(&score);
    let probs = [p[0], p[1]];
    let cache = AgentCache {
        state: state.to_vec(),
        h1,
        mask1,
        h1_dropped,
        h2,
        mask2,
        h2_dropped,
        probs,
        store_version: store.version(),
    };
    Ok((ActionDistribution::new(probs), cache))
}

/// Accumulate `coeff · ∇_θ log p(action)` into the store's gradients and
/// return the matching gradient w.r.t. the state vector. Dropout masks from
/// the forward pass are reused. Panics if the parameters were updated since
/// the forward pass (stale cache).
pub fn agent_backward(
    cfg: &ModelConfig,
    store: &mut ParamStore,
    cache: &AgentCache,
    action: Action,
    coeff: f64,
) -> Vec<f64> {
    assert_eq!(
        cache.store_version,
        store.version(),
        "stale agent cache: parameters were updated after the forward pass"
    );
    // d log softmax: onehot(action) - p, scaled
    let mut d_score = [-cache.probs[0] * coeff, -cache.probs[1] * coeff];
    d_score[action.index()] += coeff;

    let mut g_bs = vec![0.0; 2];
    let d_h2_dropped = {
        let (w_s, g_ws) = store.value_and_grad_mut(AGENT_WS);
        affine_backward(w_s, &cache.h2_dropped, &d_score, g_ws, &mut g_bs)
    };
    store.grad_mut(AGENT_BS).add_slice(&g_bs);

    let d_h2: Vec<f64> =
        d_h2_dropped.iter().zip(cache.mask2.iter()).map(|(d, m)| d * m).collect();
    let d_a2 = tanh_backward(&cache.h2, &d_h2);

    let mut g_b2 = vec![0.0; cfg.hidden2];
    let d_h1_dropped = {
        let (w_2, g_w2) = store.value_and_grad_mut(AGENT_W2);
        affine_backward(w_2, &cache.h1_dropped, &d_a2, g_w2, &mut g_b2)
    };
    store.grad_mut(AGENT_B2).add_slice(&g_b2);

    let d_h1: Vec<f64> =
        d_h1_dropped.iter().zip(cache.mask1.iter()).map(|(d, m)| d * m).collect();
    let d_a1 = tanh_backward(&cache.h1, &d_h1);

    let mut g_b1 = vec![0.0; cfg.hidden1];
    let d_state = {
        let (w_1, g_w1) = store.value_and_grad_mut(AGENT_W1);
        affine_backward(w_1, &cache.state, &d_a1, g_w1, &mut g_b1)
    };
    store.grad_mut(AGENT_B1).add_slice(&g_b1);

    d_state
}

/// Offsets of the state-vector segments, used to route episode gradients
/// back to the encoders and the pooled memory.
pub struct StateLayout {
    pub zp: std::ops::Range<usize>,
    pub np: std::ops::Range<usize>,
    pub ante: std::ops::Range<usize>,
    pub feat: std::ops::Range<usize>,
}

impl StateLayout {
    pub fn of(cfg: &ModelConfig) -> Self {
        let z = cfg.v_zp_dim();
        let n = cfg.v_np_dim();
        let a = cfg.v_ante_dim();
        StateLayout {
            zp: 0..z,
            np: z..z + n,
            ante: z + n..z + n + a,
            feat: z + n + a..z + n + a + cfg.n_features,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{finite_diff_grad, rel_err, ParamStore, Tensor};

    fn memory_of(vecs: &[Vec<f64>]) -> AnteMemory {
        let mut m = AnteMemory::new();
        for (i, v) in vecs.iter().enumerate() {
            m.push(i, v.clone());
        }
        m
    }

    #[test]
    fn pool_hand_case() {
        let m = memory_of(&[vec![1.0, 2.0], vec![3.0, 0.0]]);
        let (v, _) = pool_antecedents(&m, 2);
        assert_eq!(v, vec![3.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn pool_singleton_max_equals_mean() {
        let m = memory_of(&[vec![0.5, -1.5, 2.0]]);
        let (v, _) = pool_antecedents(&m, 3);
        assert_eq!(&v[..3], &v[3..]);
        assert_eq!(&v[..3], &[0.5, -1.5, 2.0]);
    }

    #[test]
    fn pool_empty_is_zero() {
        let (v, cache) = pool_antecedents(&AnteMemory::new(), 4);
        assert_eq!(v, vec![0.0; 8]);
        let mut d_np = vec![vec![0.0; 4]];
        pool_backward(&cache, &vec![1.0; 8], &mut d_np);
        assert_eq!(d_np[0], vec![0.0; 4]);
    }

    #[test]
    fn pool_backward_routing() {
        // two members; coordinate 0 max comes from member 1, coordinate 1
        // from member 0; mean spreads half each
        let m = memory_of(&[vec![1.0, 2.0], vec![3.0, 0.0]]);
        let (_, cache) = pool_antecedents(&m, 2);
        let mut d_np = vec![vec![0.0; 2], vec![0.0; 2]];
        pool_backward(&cache, &[1.0, 1.0, 0.4, 0.4], &mut d_np);
        assert_eq!(d_np[0], vec![0.2, 1.2]);
        assert_eq!(d_np[1], vec![1.2, 0.2]);
    }

    #[test]
    fn pool_max_tie_routes_to_first() {
        let m = memory_of(&[vec![2.0], vec![2.0]]);
        let (_, cache) = pool_antecedents(&m, 1);
        let mut d_np = vec![vec![0.0], vec![0.0]];
        pool_backward(&cache, &[1.0, 0.0], &mut d_np);
        assert_eq!(d_np[0], vec![1.0]);
        assert_eq!(d_np[1], vec![0.0]);
    }

    #[test]
    fn assemble_state_dims_and_locality() {
        let s = assemble_state(&[0.0; 4], &[0.0; 2], &[0.0; 4], &[0.0; 3]);
        assert_eq!(s.len(), 13);
        assert!(s.iter().all(|v| *v == 0.0));

        let base = assemble_state(&[1.0; 4], &[2.0; 2], &[3.0; 4], &[0.0, 0.0, 0.0]);
        let poked = assemble_state(&[1.0; 4], &[2.0; 2], &[3.0; 4], &[0.0, 1.0, 0.0]);
        let diffs: Vec<usize> =
            (0..13).filter(|i| base[*i] != poked[*i]).collect();
        assert_eq!(diffs, vec![11], "only the poked feature coordinate changes");
    }

    fn zeroed_store(cfg: &ModelConfig) -> ParamStore {
        let mut rng = RngStream::new(0);
        let mut store = cfg.init_params(&mut rng);
        let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
        for n in names {
            store.value_mut(&n).fill(0.0);
        }
        store
    }

    #[test]
    fn zero_params_give_uniform_distribution() {
        let cfg = ModelConfig::tiny(8);
        let store = zeroed_store(&cfg);
        let mut rng = RngStream::new(1);
        let state = vec![0.3; cfg.d_state()];
        let (dist, _) = agent_forward(&cfg, &store, &state, 0.0, false, &mut rng).unwrap();
        assert_eq!(dist.p_corefer(), 0.5);
        assert_eq!(dist.p_non_corefer(), 0.5);
        assert_eq!(dist.greedy(), Action::Corefer, "tie resolves to corefer");
    }

    #[test]
    fn inference_is_deterministic() {
        let cfg = ModelConfig::tiny(8);
        let mut rng = RngStream::new(2);
        let store = cfg.init_params(&mut rng);
        let state: Vec<f64> = (0..cfg.d_state()).map(|i| (i as f64 * 0.37).sin()).collect();
        let (a, _) = agent_forward(&cfg, &store, &state, 0.9, false, &mut rng).unwrap();
        let (b, _) = agent_forward(&cfg, &store, &state, 0.9, false, &mut rng).unwrap();
        assert_eq!(a.probs(), b.probs());
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let cfg = ModelConfig::tiny(8);
        let mut rng = RngStream::new(3);
        let mut store = cfg.init_params(&mut rng);
        let state: Vec<f64> = (0..cfg.d_state()).map(|_| rng.range(-1.0, 1.0)).collect();

        let (s2, cfg2) = (state.clone(), cfg.clone());
        let fd = finite_diff_grad(
            move |st: &ParamStore| {
                let mut r = RngStream::new(0);
                let (d, _) = agent_forward(&cfg2, st, &s2, 0.0, false, &mut r).unwrap();
                d.p_corefer().ln()
            },
            &mut store,
            1e-5,
        )
        .unwrap();

        store.zero_grads();
        let (dist, cache) = agent_forward(&cfg, &store, &state, 0.0, false, &mut rng).unwrap();
        // coeff 1/p_corefer? No: backward computes coeff · ∇ log p(action).
        let d_state = agent_backward(&cfg, &mut store, &cache, Action::Corefer, 1.0);
        assert!(dist.p_corefer() > 0.0);

        for name in [AGENT_W1, AGENT_B1, AGENT_W2, AGENT_B2, AGENT_WS, AGENT_BS] {
            for (a, b) in store.grad(name).data().iter().zip(fd[name].data().iter()) {
                assert!(rel_err(*a, *b) <= 1e-4, "{name}: {a} vs {b}");
            }
        }

        // d_state against finite differences over the state coordinates
        let layout = StateLayout::of(&cfg);
        let mut probe_store = ParamStore::new();
        probe_store.insert("s", Tensor::vector(state.clone()));
        let cfg3 = cfg.clone();
        let w1 = store.value(AGENT_W1).clone();
        let b1 = store.value(AGENT_B1).clone();
        let w2 = store.value(AGENT_W2).clone();
        let b2 = store.value(AGENT_B2).clone();
        let ws = store.value(AGENT_WS).clone();
        let bs = store.value(AGENT_BS).clone();
        let fd_state = finite_diff_grad(
            move |ps: &ParamStore| {
                let mut tmp = ParamStore::new();
                tmp.insert(AGENT_W1, w1.clone());
                tmp.insert(AGENT_B1, b1.clone());
                tmp.insert(AGENT_W2, w2.clone());
                tmp.insert(AGENT_B2, b2.clone());
                tmp.insert(AGENT_WS, ws.clone());
                tmp.insert(AGENT_BS, bs.clone());
                let mut r = RngStream::new(0);
                let (d, _) =
                    agent_forward(&cfg3, &tmp, ps.value("s").data(), 0.0, false, &mut r).unwrap();
                d.p_corefer().ln()
            },
            &mut probe_store,
            1e-5,
        )
        .unwrap();
        for (a, b) in d_state.iter().zip(fd_state["s"].data().iter()) {
            assert!(rel_err(*a, *b) <= 1e-4, "d_state: {a} vs {b}");
        }
        // gradient reaches the feature coordinates
        let feat_grad: f64 = d_state[layout.feat].iter().map(|v| v.abs()).sum();
        assert!(feat_grad > 0.0, "gradient flows into feature coordinates");
    }

    #[test]
    fn zero_coeff_gives_zero_grads() {
        let cfg = ModelConfig::tiny(8);
        let mut rng = RngStream::new(4);
        let mut store = cfg.init_params(&mut rng);
        let state = vec![0.1; cfg.d_state()];
        let (_, cache) = agent_forward(&cfg, &store, &state, 0.0, false, &mut rng).unwrap();
        store.zero_grads();
        let d_state = agent_backward(&cfg, &mut store, &cache, Action::Corefer, 0.0);
        assert!(d_state.iter().all(|v| *v == 0.0));
        assert!(store.flat_grads().iter().all(|v| *v == 0.0));
    }

    #[test]
    #[should_panic(expected = "stale agent cache")]
    fn stale_cache_is_rejected() {
        let cfg = ModelConfig::tiny(8);
        let mut rng = RngStream::new(5);
        let mut store = cfg.init_params(&mut rng);
        let state = vec![0.1; cfg.d_state()];
        let (_, cache) = agent_forward(&cfg, &store, &state, 0.0, false, &mut rng).unwrap();
        store.grad_mut(AGENT_BS).data_mut()[0] = 1.0;
        store.adagrad_step(0.1, crate::math::ADAGRAD_EPS);
        agent_backward(&cfg, &mut store, &cache, Action::Corefer, 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pool_is_permutation_invariant_and_max_dominates(
                seed in 0u64..500,
                n in 1usize..6,
                d in 1usize..5,
            ) {
                let mut rng = RngStream::new(seed);
                let vecs: Vec<Vec<f64>> =
                    (0..n).map(|_| (0..d).map(|_| rng.range(-2.0, 2.0)).collect()).collect();
                let (v, _) = pool_antecedents(&memory_of(&vecs), d);

                // permutation invariance: reversed insertion order
                let mut rev = vecs.clone();
                rev.reverse();
                let (v_rev, _) = pool_antecedents(&memory_of(&rev), d);
                for (a, b) in v.iter().zip(v_rev.iter()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }

                // max half dominates mean half coordinatewise
                for k in 0..d {
                    prop_assert!(v[k] >= v[d + k] - 1e-12);
                }
            }
        }
    }
}
