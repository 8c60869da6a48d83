//! Episode rollout, reward, baselines, the REINFORCE update, supervised
//! pretraining, and the two training loops.
//!
//! An episode walks an instance's candidates in document order. At step t the
//! state is assembled from the pronoun vector, candidate t's content vector,
//! the pooled memory of previously selected candidates, and the feature bits;
//! a `corefer` action appends candidate t's vector to the memory. The
//! terminal reward is the F-score of the selected set against the gold set,
//! assigned to every step of the episode.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::{
    agent_backward, agent_forward, assemble_state, pool_antecedents, pool_backward, Action,
    AgentCache, AnteMemory, PoolCache, StateLayout,
};
use crate::corpus::{Corpus, Document, ZpInstance};
use crate::encoders::{
    encode_np, encode_np_backward, encode_zp, encode_zp_backward, ModelConfig, NpCache, ZpCache,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, Averaging};
use crate::features::extract_features;
use crate::math::{ParamStore, RngStream, ADAGRAD_EPS};

// ---------------------------------------------------------------------------
// Hyperparameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Rl,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Pretrain => write!(f, "pretrain"),
            Phase::Rl => write!(f, "rl"),
        }
    }
}

/// Training-loop settings. Defaults: 70 pretraining epochs at learning rate
/// 0.003 with dropout 0.5, then 50 policy-gradient epochs at 0.00009 with
/// dropout 0.7; minibatches of 256; a 20% dev split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub pretrain_epochs: usize,
    pub rl_epochs: usize,
    pub batch_size: usize,
    pub pretrain_dropout: f64,
    pub rl_dropout: f64,
    pub pretrain_lr: f64,
    pub rl_lr: f64,
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        HyperConfig {
            pretrain_epochs: 70,
            rl_epochs: 50,
            batch_size: 256,
            pretrain_dropout: 0.5,
            rl_dropout: 0.7,
            pretrain_lr: 0.003,
            rl_lr: 0.00009,
            dev_fraction: 0.2,
            seed: 0,
        }
    }
}

impl HyperConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be positive".into()));
        }
        for (name, rate) in
            [("pretrain_dropout", self.pretrain_dropout), ("rl_dropout", self.rl_dropout)]
        {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Argument(format!("{name} {rate} outside [0,1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.dev_fraction) {
            return Err(Error::Argument(format!(
                "dev_fraction {} outside [0,1]",
                self.dev_fraction
            )));
        }
        if self.pretrain_lr < 0.0 || self.rl_lr < 0.0 {
            return Err(Error::Argument("learning rates must be non-negative".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

/// How actions are chosen during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    /// Draw each action from the policy distribution.
    Sample,
    /// Argmax action (ties resolve to corefer).
    Greedy,
}

enum StepPolicy<'a> {
    Sample,
    Greedy,
    /// Teacher forcing: corefer exactly on the given candidate indices.
    Forced(&'a BTreeSet<usize>),
}

/// Saved forward state of one full episode, enough to backpropagate any
/// per-step log-probability combination. Gradients flow through the agent,
/// the pooled memory (into earlier candidates' vectors), both encoders, and
/// the embeddings.
pub struct EpisodeCache {
    zp_cache: ZpCache,
    np_caches: Vec<NpCache>,
    steps: Vec<(PoolCache, AgentCache)>,
    n_candidates: usize,
    v_np_dim: usize,
    v_zp_dim: usize,
}

/// One rolled-out episode.
pub struct Trajectory {
    pub actions: Vec<Action>,
    /// Step probability pairs (corefer, non-corefer) as rolled out.
    pub probs: Vec<[f64; 2]>,
    /// Candidate indices selected by corefer actions.
    pub selected: BTreeSet<usize>,
    /// Terminal F-score reward, assigned to every step.
    pub reward: f64,
    /// Per-step expected-reward baselines; empty until `compute_baselines`.
    pub baselines: Vec<f64>,
    pub cache: EpisodeCache,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

fn rollout(
    cfg: &ModelConfig,
    store: &ParamStore,
    doc: &Document,
    inst: &ZpInstance,
    policy: StepPolicy,
    dropout: f64,
    training: bool,
    rng: &mut RngStream,
) -> Result<(EpisodeCache, Vec<Action>, Vec<[f64; 2]>)> {
    assert!(!inst.candidates.is_empty(), "episodes need at least one candidate");
    let zp = inst.location();
    let (v_zp, zp_cache) = encode_zp(cfg, store, doc, zp);

    let mut np_vecs = Vec::with_capacity(inst.candidates.len());
    let mut np_caches = Vec::with_capacity(inst.candidates.len());
    for span in &inst.candidates {
        let (v, c) = encode_np(cfg, store, doc, span);
        np_vecs.push(v);
        np_caches.push(c);
    }

    let mut memory = AnteMemory::new();
    let mut steps = Vec::with_capacity(inst.candidates.len());
    let mut actions = Vec::with_capacity(inst.candidates.len());
    let mut probs = Vec::with_capacity(inst.candidates.len());

    for t in 0..inst.candidates.len() {
        let (v_ante, pool_cache) = pool_antecedents(&memory, cfg.v_np_dim());
        let feat = extract_features(doc, zp, &inst.candidates, t);
        let state = assemble_state(&v_zp, &np_vecs[t], &v_ante, &feat);
        let (dist, agent_cache) = agent_forward(cfg, store, &state, dropout, training, rng)?;
        let action = match &policy {
            StepPolicy::Sample => dist.sample(rng),
            StepPolicy::Greedy => dist.greedy(),
            StepPolicy::Forced(gold) => {
                if gold.contains(&t) {
                    Action::Corefer
                } else {
                    Action::NonCorefer
                }
            }
        };
        if action.is_corefer() {
            memory.push(t, np_vecs[t].clone());
        }
        steps.push((pool_cache, agent_cache));
        actions.push(action);
        probs.push(dist.probs());
    }

    let cache = EpisodeCache {
        zp_cache,
        np_caches,
        steps,
        n_candidates: inst.candidates.len(),
        v_np_dim: cfg.v_np_dim(),
        v_zp_dim: cfg.v_zp_dim(),
    };
    Ok((cache, actions, probs))
}

/// Deterministic rollout with a fixed action set (corefer exactly on
/// `selected`), no dropout. Returns the cache and step probabilities; the
/// enumeration oracle drives every 2^n action sequence through this.
pub(crate) fn forced_episode(
    cfg: &ModelConfig,
    store: &ParamStore,
    doc: &Document,
    inst: &ZpInstance,
    selected: &BTreeSet<usize>,
) -> Result<(EpisodeCache, Vec<[f64; 2]>)> {
    let mut rng = RngStream::new(0);
    let (cache, _, probs) = rollout(
        cfg,
        store,
        doc,
        inst,
        StepPolicy::Forced(selected),
        0.0,
        false,
        &mut rng,
    )?;
    Ok((cache, probs))
}

/// Roll out one episode under the policy and score it against the gold set.
pub fn run_episode(
    cfg: &ModelConfig,
    store: &ParamStore,
    doc: &Document,
    inst: &ZpInstance,
    mode: RolloutMode,
    dropout: f64,
    training: bool,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    let policy = match mode {
        RolloutMode::Sample => StepPolicy::Sample,
        RolloutMode::Greedy => StepPolicy::Greedy,
    };
    let (cache, actions, probs) = rollout(cfg, store, doc, inst, policy, dropout, training, rng)?;
    let selected: BTreeSet<usize> = actions
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_corefer())
        .map(|(i, _)| i)
        .collect();
    let reward = compute_reward(&selected, &inst.gold_antecedents);
    Ok(Trajectory { actions, probs, selected, reward, baselines: Vec::new(), cache })
}

// ---------------------------------------------------------------------------
// Reward and baselines
// ---------------------------------------------------------------------------

/// Set F-score of the predicted antecedent indices against the gold indices.
/// An empty prediction scores 0. The gold set must be non-empty (instances
/// are gold-anaphoric by contract).
pub fn compute_reward(predicted: &BTreeSet<usize>, gold: &BTreeSet<usize>) -> f64 {
    assert!(!gold.is_empty(), "compute_reward requires a non-empty gold set");
    if predicted.is_empty() {
        return 0.0;
    }
    let inter = predicted.intersection(gold).count() as f64;
    let p = inter / predicted.len() as f64;
    let r = inter / gold.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-step expected-reward baseline: the reward marginalized over step t's
/// own action using its rolled-out probabilities, holding every other
/// realized action fixed.
pub fn compute_baselines(traj: &mut Trajectory, gold: &BTreeSet<usize>) {
    let mut baselines = Vec::with_capacity(traj.len());
    for t in 0..traj.len() {
        let mut with_t = traj.selected.clone();
        with_t.insert(t);
        let mut without_t = traj.selected.clone();
        without_t.remove(&t);
        let b = traj.probs[t][0] * compute_reward(&with_t, gold)
            + traj.probs[t][1] * compute_reward(&without_t, gold);
        debug_assert!((0.0..=1.0).contains(&b));
        baselines.push(b);
    }
    traj.baselines = baselines;
}

// ---------------------------------------------------------------------------
// Episode backward
// ---------------------------------------------------------------------------

/// Accumulate `Σ coeff · ∇_θ log p(action at step)` for the given steps into
/// the store's gradients. This is the shared backward driver for the
/// REINFORCE update, the pretraining loss, and the enumeration oracle.
pub(crate) fn episode_backward(
    cfg: &ModelConfig,
    store: &mut ParamStore,
    cache: &EpisodeCache,
    coeffs: &[(usize, Action, f64)],
) {
    let layout = StateLayout::of(cfg);
    let mut d_vzp = vec![0.0; cache.v_zp_dim];
    let mut d_vnp = vec![vec![0.0; cache.v_np_dim]; cache.n_candidates];

    for (t, action, coeff) in coeffs {
        if *coeff == 0.0 {
            continue;
        }
        let (pool_cache, agent_cache) = &cache.steps[*t];
        let d_state = agent_backward(cfg, store, agent_cache, *action, *coeff);
        for (acc, d) in d_vzp.iter_mut().zip(d_state[layout.zp.clone()].iter()) {
            *acc += d;
        }
        for (acc, d) in d_vnp[*t].iter_mut().zip(d_state[layout.np.clone()].iter()) {
            *acc += d;
        }
        pool_backward(pool_cache, &d_state[layout.ante.clone()], &mut d_vnp);
        // the feature segment is input data; its gradient stops here
    }

    for (i, d) in d_vnp.iter().enumerate() {
        if d.iter().any(|v| *v != 0.0) {
            encode_np_backward(store, &cache.np_caches[i], d);
        }
    }
    if d_vzp.iter().any(|v| *v != 0.0) {
        encode_zp_backward(cfg, store, &cache.zp_cache, &d_vzp);
    }
}

/// REINFORCE with baseline: accumulate the gradient of
/// `-Σ_t log p(a_t) · (R - b_t)` so a following Adagrad step ascends the
/// expected reward. Baselines must be computed first.
pub fn reinforce_update(cfg: &ModelConfig, store: &mut ParamStore, traj: &Trajectory) {
    assert_eq!(traj.baselines.len(), traj.len(), "baselines not computed");
    let coeffs: Vec<(usize, Action, f64)> = (0..traj.len())
        .map(|t| (t, traj.actions[t], -(traj.reward - traj.baselines[t])))
        .collect();
    episode_backward(cfg, store, &traj.cache, &coeffs);
}

/// Supervised pretraining loss for one instance:
/// `-Σ_{np ∈ gold} log p_corefer` along a teacher-forced rollout (the memory
/// is populated by the gold actions). Returns the loss; accumulates its
/// gradient when `accumulate` is set.
pub fn pretrain_loss(
    cfg: &ModelConfig,
    store: &mut ParamStore,
    doc: &Document,
    inst: &ZpInstance,
    dropout: f64,
    training: bool,
    rng: &mut RngStream,
    accumulate: bool,
) -> Result<f64> {
    let (cache, _, probs) = rollout(
        cfg,
        store,
        doc,
        inst,
        StepPolicy::Forced(&inst.gold_antecedents),
        dropout,
        training,
        rng,
    )?;
    let mut loss = 0.0;
    for t in &inst.gold_antecedents {
        loss -= probs[*t][0].ln();
    }
    if accumulate {
        let coeffs: Vec<(usize, Action, f64)> =
            inst.gold_antecedents.iter().map(|t| (*t, Action::Corefer, -1.0)).collect();
        episode_backward(cfg, store, &cache, &coeffs);
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub loss_or_mean_reward: f64,
    pub dev_p: f64,
    pub dev_r: f64,
    pub dev_f: f64,
    pub seconds: f64,
}

pub struct TrainOutcome {
    /// Parameters after the final epoch.
    pub params: ParamStore,
    /// Snapshot with the best dev F seen after any epoch.
    pub best_params: ParamStore,
    pub best_dev_f: f64,
    pub log: Vec<EpochRecord>,
    /// Training stream state after the final epoch.
    pub rng_state: ([u8; 32], u128),
}

/// Pretrain then RL-train on the corpus, evaluating greedily on the dev
/// split after every epoch. Fully deterministic for a fixed seed.
pub fn train(corpus: &Corpus, cfg: &ModelConfig, hyper: &HyperConfig) -> Result<TrainOutcome> {
    train_with_progress(corpus, cfg, hyper, |_| {})
}

/// `train` with a per-epoch callback (the CLI streams log lines through it).
pub fn train_with_progress(
    corpus: &Corpus,
    cfg: &ModelConfig,
    hyper: &HyperConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    hyper.validate()?;
    if corpus.instances.is_empty() {
        return Err(Error::Argument("cannot train on an empty corpus".into()));
    }
    let (train_corpus, dev_corpus) = split_for(corpus, hyper)?;

    let mut rng = RngStream::new(hyper.seed).derive(0x7e41);
    let mut store = cfg.init_params(&mut rng);
    let mut log = Vec::new();
    let mut best_params = store.clone();
    let mut best_dev_f = evaluate(cfg, &store, &dev_corpus, Averaging::Micro, 1)?.f;

    let n = train_corpus.instances.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=hyper.pretrain_epochs {
        let t0 = Instant::now();
        rng.shuffle(&mut order);
        let mut total_loss = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            for idx in batch {
                let (doc, inst) = train_corpus.instance_context(*idx);
                total_loss += pretrain_loss(
                    cfg,
                    &mut store,
                    doc,
                    inst,
                    hyper.pretrain_dropout,
                    true,
                    &mut rng,
                    true,
                )?;
            }
            store.adagrad_step(hyper.pretrain_lr, ADAGRAD_EPS);
        }
        let dev = evaluate(cfg, &store, &dev_corpus, Averaging::Micro, 1)?;
        let record = EpochRecord {
            phase: Phase::Pretrain,
            epoch,
            loss_or_mean_reward: total_loss / n as f64,
            dev_p: dev.precision,
            dev_r: dev.recall,
            dev_f: dev.f,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.push(record);
        if dev.f > best_dev_f {
            best_dev_f = dev.f;
            best_params = store.clone();
        }
    }

    for epoch in 1..=hyper.rl_epochs {
        let t0 = Instant::now();
        rng.shuffle(&mut order);
        let mut total_reward = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            for idx in batch {
                let (doc, inst) = train_corpus.instance_context(*idx);
                let mut traj = run_episode(
                    cfg,
                    &store,
                    doc,
                    inst,
                    RolloutMode::Sample,
                    hyper.rl_dropout,
                    true,
                    &mut rng,
                )?;
                compute_baselines(&mut traj, &inst.gold_antecedents);
                reinforce_update(cfg, &mut store, &traj);
                total_reward += traj.reward;
            }
            store.adagrad_step(hyper.rl_lr, ADAGRAD_EPS);
        }
        let dev = evaluate(cfg, &store, &dev_corpus, Averaging::Micro, 1)?;
        let record = EpochRecord {
            phase: Phase::Rl,
            epoch,
            loss_or_mean_reward: total_reward / n as f64,
            dev_p: dev.precision,
            dev_r: dev.recall,
            dev_f: dev.f,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.push(record);
        if dev.f > best_dev_f {
            best_dev_f = dev.f;
            best_params = store.clone();
        }
    }

    Ok(TrainOutcome { params: store, best_params, best_dev_f, log, rng_state: rng.state() })
}

/// Dev split used by the training loops and ablation harnesses; a zero
/// fraction trains and evaluates on the same data.
pub(crate) fn split_for(corpus: &Corpus, hyper: &HyperConfig) -> Result<(Corpus, Corpus)> {
    if hyper.dev_fraction == 0.0 {
        Ok((corpus.clone(), corpus.clone()))
    } else {
        crate::corpus::split_train_dev(corpus, hyper.dev_fraction, hyper.seed)
    }
}
