//! Corpus-level metrics, the exhaustive-enumeration oracles that make the
//! policy-gradient math testable, and the ablation harnesses (pretraining
//! iteration sweep, random-seed study).

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::agent::{agent_forward, assemble_state, pool_antecedents, Action, AnteMemory};
use crate::corpus::{Corpus, Document, ZpInstance};
use crate::encoders::{encode_np, encode_zp, ModelConfig};
use crate::error::{Error, Result};
use crate::features::extract_features;
use crate::math::{ParamStore, RngStream, Tensor};
use crate::training::{
    compute_reward, episode_backward, forced_episode, run_episode, HyperConfig, RolloutMode,
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// How instance scores aggregate to corpus level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Corpus-wide intersection/prediction/gold counts (the default).
    Micro,
    /// Mean of per-instance precision/recall/F.
    Macro,
}

/// Per-instance counts feeding the aggregation.
#[derive(Debug, Clone)]
pub struct InstanceScore {
    pub source_tag: String,
    pub n_intersection: usize,
    pub n_predicted: usize,
    pub n_gold: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SourceMetrics {
    pub n_instances: usize,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub averaging: Averaging,
    pub n_instances: usize,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    pub per_source: BTreeMap<String, SourceMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn aggregate(scores: &[&InstanceScore], averaging: Averaging) -> (f64, f64, f64) {
    if scores.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    match averaging {
        Averaging::Micro => {
            let inter: usize = scores.iter().map(|s| s.n_intersection).sum();
            let pred: usize = scores.iter().map(|s| s.n_predicted).sum();
            let gold: usize = scores.iter().map(|s| s.n_gold).sum();
            let p = ratio(inter, pred);
            let r = ratio(inter, gold);
            (p, r, f_score(p, r))
        }
        Averaging::Macro => {
            let n = scores.len() as f64;
            let mut sp = 0.0;
            let mut sr = 0.0;
            let mut sf = 0.0;
            for s in scores {
                let p = ratio(s.n_intersection, s.n_predicted);
                let r = ratio(s.n_intersection, s.n_gold);
                sp += p;
                sr += r;
                sf += f_score(p, r);
            }
            (sp / n, sr / n, sf / n)
        }
    }
}

impl MetricsReport {
    pub fn from_scores(scores: Vec<InstanceScore>, averaging: Averaging) -> Self {
        let all: Vec<&InstanceScore> = scores.iter().collect();
        let (precision, recall, f) = aggregate(&all, averaging);
        let mut per_source: BTreeMap<String, SourceMetrics> = BTreeMap::new();
        let mut tags: BTreeMap<&str, Vec<&InstanceScore>> = BTreeMap::new();
        for s in &scores {
            tags.entry(s.source_tag.as_str()).or_default().push(s);
        }
        for (tag, group) in tags {
            let (p, r, f) = aggregate(&group, averaging);
            per_source.insert(
                tag.to_string(),
                SourceMetrics { n_instances: group.len(), precision: p, recall: r, f },
            );
        }
        MetricsReport {
            averaging,
            n_instances: scores.len(),
            precision,
            recall,
            f,
            per_source,
        }
    }
}

fn score_instance(
    cfg: &ModelConfig,
    store: &ParamStore,
    corpus: &Corpus,
    idx: usize,
) -> Result<InstanceScore> {
    let (doc, inst) = corpus.instance_context(idx);
    let mut rng = RngStream::new(0);
    let traj = run_episode(cfg, store, doc, inst, RolloutMode::Greedy, 0.0, false, &mut rng)?;
    Ok(InstanceScore {
        source_tag: doc.source_tag.clone(),
        n_intersection: traj.selected.intersection(&inst.gold_antecedents).count(),
        n_predicted: traj.selected.len(),
        n_gold: inst.gold_antecedents.len(),
    })
}

/// Greedy-rollout evaluation of a corpus. `workers > 1` evaluates instance
/// chunks on scoped threads over the frozen parameters; the aggregation is
/// order-independent, so results do not depend on the worker count.
pub fn evaluate(
    cfg: &ModelConfig,
    store: &ParamStore,
    corpus: &Corpus,
    averaging: Averaging,
    workers: usize,
) -> Result<MetricsReport> {
    let n = corpus.instances.len();
    let workers = workers.max(1).min(n.max(1));
    let scores: Vec<InstanceScore> = if workers <= 1 || n < 2 {
        (0..n).map(|i| score_instance(cfg, store, corpus, i)).collect::<Result<_>>()?
    } else {
        let chunk = n.div_ceil(workers);
        let mut results: Vec<Result<Vec<InstanceScore>>> = Vec::new();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for w in 0..workers {
                let lo = w * chunk;
                let hi = ((w + 1) * chunk).min(n);
                if lo >= hi {
                    continue;
                }
                handles.push(scope.spawn(move || {
                    (lo..hi).map(|i| score_instance(cfg, store, corpus, i)).collect()
                }));
            }
            for h in handles {
                results.push(h.join().expect("evaluation worker panicked"));
            }
        });
        let mut scores = Vec::with_capacity(n);
        for r in results {
            scores.extend(r?);
        }
        scores
    };
    Ok(MetricsReport::from_scores(scores, averaging))
}

// ---------------------------------------------------------------------------
// Enumeration oracles
// ---------------------------------------------------------------------------

const MAX_ENUM_REWARD: usize = 20;
const MAX_ENUM_GRAD: usize = 10;

/// Exact expected reward of the stochastic policy on one instance: the sum
/// over all 2^n action sequences of the sequence probability (with the
/// antecedent memory evolving per sequence) times the selected set's F-score.
/// Dropout disabled. Guarded to n ≤ 20 candidates.
pub fn exact_expected_reward(
    cfg: &ModelConfig,
    store: &ParamStore,
    doc: &Document,
    inst: &ZpInstance,
) -> Result<f64> {
    exact_expected_reward_with(cfg, store, doc, inst, &|sel| {
        compute_reward(sel, &inst.gold_antecedents)
    })
}

fn exact_expected_reward_with(
    cfg: &ModelConfig,
    store: &ParamStore,
    doc: &Document,
    inst: &ZpInstance,
    reward: &dyn Fn(&BTreeSet<usize>) -> f64,
) -> Result<f64> {
    let n = inst.candidates.len();
    if n > MAX_ENUM_REWARD {
        return Err(Error::Argument(format!(
            "exact_expected_reward enumerates 2^n sequences; n={n} exceeds {MAX_ENUM_REWARD}"
        )));
    }
    let zp = inst.location();
    let (v_zp, _) = encode_zp(cfg, store, doc, zp);
    let np_vecs: Vec<Vec<f64>> =
        inst.candidates.iter().map(|s| encode_np(cfg, store, doc, s).0).collect();
    let feats: Vec<Vec<f64>> =
        (0..n).map(|t| extract_features(doc, zp, &inst.candidates, t)).collect();

    // depth-first over the action tree, sharing prefix computations
    struct Walker<'w> {
        cfg: &'w ModelConfig,
        store: &'w ParamStore,
        v_zp: &'w [f64],
        np_vecs: &'w [Vec<f64>],
        feats: &'w [Vec<f64>],
        n: usize,
        reward: &'w dyn Fn(&BTreeSet<usize>) -> f64,
        total_prob: f64,
        expected: f64,
    }

    impl Walker<'_> {
        fn walk(
            &mut self,
            t: usize,
            memory: &mut AnteMemory,
            selected: &mut BTreeSet<usize>,
            prob: f64,
        ) -> Result<()> {
            if t == self.n {
                self.total_prob += prob;
                self.expected += prob * (self.reward)(selected);
                return Ok(());
            }
            let (v_ante, _) = pool_antecedents(memory, self.cfg.v_np_dim());
            let state = assemble_state(self.v_zp, &self.np_vecs[t], &v_ante, &self.feats[t]);
            let mut rng = RngStream::new(0);
            let (dist, _) =
                agent_forward(self.cfg, self.store, &state, 0.0, false, &mut rng)?;

            memory.push(t, self.np_vecs[t].clone());
            selected.insert(t);
            self.walk(t + 1, memory, selected, prob * dist.p_corefer())?;
            memory.pop();
            selected.remove(&t);

            self.walk(t + 1, memory, selected, prob * dist.p_non_corefer())
        }
    }

    let mut w = Walker {
        cfg,
        store,
        v_zp: &v_zp,
        np_vecs: &np_vecs,
        feats: &feats,
        n,
        reward,
        total_prob: 0.0,
        expected: 0.0,
    };
    w.walk(0, &mut AnteMemory::new(), &mut BTreeSet::new(), 1.0)?;
    debug_assert!(
        (w.total_prob - 1.0).abs() < 1e-9,
        "sequence probabilities sum to {}",
        w.total_prob
    );
    Ok(w.expected)
}

/// Exact gradient of `exact_expected_reward`:
/// `Σ_seq P(seq) R(seq) Σ_t ∇ log p(a_t | prefix)`, accumulated by replaying
/// every sequence through the analytic episode backward. Guarded to n ≤ 10.
pub fn exact_policy_gradient(
    cfg: &ModelConfig,
    store: &mut ParamStore,
    doc: &Document,
    inst: &ZpInstance,
) -> Result<BTreeMap<String, Tensor>> {
    exact_policy_gradient_with(cfg, store, doc, inst, &|sel| {
        compute_reward(sel, &inst.gold_antecedents)
    })
}

fn exact_policy_gradient_with(
    cfg: &ModelConfig,
    store: &mut ParamStore,
    doc: &Document,
    inst: &ZpInstance,
    reward: &dyn Fn(&BTreeSet<usize>) -> f64,
) -> Result<BTreeMap<String, Tensor>> {
    let n = inst.candidates.len();
    if n > MAX_ENUM_GRAD {
        return Err(Error::Argument(format!(
            "exact_policy_gradient enumerates 2^n sequences; n={n} exceeds {MAX_ENUM_GRAD}"
        )));
    }
    store.zero_grads();
    for mask in 0u32..(1u32 << n) {
        let selected: BTreeSet<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let (cache, probs) = forced_episode(cfg, store, doc, inst, &selected)?;
        let mut seq_prob = 1.0;
        let mut actions = Vec::with_capacity(n);
        for t in 0..n {
            let a = if selected.contains(&t) { Action::Corefer } else { Action::NonCorefer };
            seq_prob *= probs[t][a.index()];
            actions.push(a);
        }
        let coeff = seq_prob * reward(&selected);
        if coeff != 0.0 {
            let coeffs: Vec<(usize, Action, f64)> =
                actions.iter().enumerate().map(|(t, a)| (t, *a, coeff)).collect();
            episode_backward(cfg, store, &cache, &coeffs);
        }
    }
    let mut out = BTreeMap::new();
    for (name, entry) in store.iter() {
        out.insert(name.to_string(), entry.grad.clone());
    }
    store.zero_grads();
    Ok(out)
}

// ---------------------------------------------------------------------------
// Ablation harnesses
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub iterations: usize,
    pub f_pretrain: f64,
    pub f_with_rl: f64,
}

/// Train with each listed pretraining epoch count and report dev F before
/// and after the RL phase. Deterministic per seed; every row retrains from
/// scratch so rows are independent.
pub fn sweep_pretrain_iterations(
    corpus: &Corpus,
    cfg: &ModelConfig,
    hyper: &HyperConfig,
    iterations: &[usize],
) -> Result<Vec<SweepRow>> {
    let (_, dev) = crate::training::split_for(corpus, hyper)?;
    let mut rows = Vec::with_capacity(iterations.len());
    for &it in iterations {
        let pre_only = HyperConfig { pretrain_epochs: it, rl_epochs: 0, ..hyper.clone() };
        let outcome = crate::training::train(corpus, cfg, &pre_only)?;
        let f_pretrain = evaluate(cfg, &outcome.params, &dev, Averaging::Micro, 1)?.f;

        let with_rl = HyperConfig { pretrain_epochs: it, ..hyper.clone() };
        let outcome = crate::training::train(corpus, cfg, &with_rl)?;
        let f_with_rl = evaluate(cfg, &outcome.params, &dev, Averaging::Micro, 1)?.f;

        rows.push(SweepRow { iterations: it, f_pretrain, f_with_rl });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedStudy {
    pub runs: Vec<(u64, f64)>,
    pub min_f: f64,
    pub median_f: f64,
    pub max_f: f64,
    /// Population standard deviation of the F-scores.
    pub sigma: f64,
}

/// Full train + evaluation once per seed. Evaluates the final parameters on
/// `eval_corpus` when given, otherwise on each run's own dev split.
pub fn seed_study(
    corpus: &Corpus,
    cfg: &ModelConfig,
    hyper: &HyperConfig,
    seeds: &[u64],
    eval_corpus: Option<&Corpus>,
) -> Result<SeedStudy> {
    if seeds.len() < 2 {
        return Err(Error::Argument("seed study needs at least 2 seeds".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let h = HyperConfig { seed, ..hyper.clone() };
        let outcome = crate::training::train(corpus, cfg, &h)?;
        let f = match eval_corpus {
            Some(c) => evaluate(cfg, &outcome.params, c, Averaging::Micro, 1)?.f,
            None => {
                let (_, dev) = crate::training::split_for(corpus, &h)?;
                evaluate(cfg, &outcome.params, &dev, Averaging::Micro, 1)?.f
            }
        };
        runs.push((seed, f));
    }
    let mut fs: Vec<f64> = runs.iter().map(|(_, f)| *f).collect();
    fs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min_f = fs[0];
    let max_f = fs[fs.len() - 1];
    let median_f = if fs.len() % 2 == 1 {
        fs[fs.len() / 2]
    } else {
        0.5 * (fs[fs.len() / 2 - 1] + fs[fs.len() / 2])
    };
    let mean = fs.iter().sum::<f64>() / fs.len() as f64;
    let sigma = (fs.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / fs.len() as f64).sqrt();
    Ok(SeedStudy { runs, min_f, median_f, max_f, sigma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_toy_corpus, ToyCorpusSpec};
    use crate::math::{finite_diff_grad, flatten_grad_map, rel_err};

    fn toy(seed: u64) -> (Corpus, ModelConfig) {
        let corpus = generate_toy_corpus(&ToyCorpusSpec {
            n_docs: 6,
            n_candidates: 2..=4,
            n_gold: 1..=2,
            seed,
            ..ToyCorpusSpec::default()
        })
        .unwrap();
        let cfg = ModelConfig::tiny(corpus.vocabulary.len());
        (corpus, cfg)
    }

    #[test]
    fn micro_average_hand_case() {
        // two instances: (pred = gold, |gold|=1) and (pred = ∅, |gold|=1)
        let scores = vec![
            InstanceScore {
                source_tag: "a".into(),
                n_intersection: 1,
                n_predicted: 1,
                n_gold: 1,
            },
            InstanceScore {
                source_tag: "a".into(),
                n_intersection: 0,
                n_predicted: 0,
                n_gold: 1,
            },
        ];
        let report = MetricsReport::from_scores(scores, Averaging::Micro);
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 0.5);
        assert!((report.f - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(report.per_source["a"].n_instances, 2);
    }

    #[test]
    fn empty_corpus_reports_zero() {
        let (corpus, cfg) = toy(1);
        let empty =
            Corpus::new(corpus.vocabulary.clone(), corpus.documents.clone(), vec![]).unwrap();
        let mut rng = RngStream::new(1);
        let store = cfg.init_params(&mut rng);
        let report = evaluate(&cfg, &store, &empty, Averaging::Micro, 1).unwrap();
        assert_eq!(report.n_instances, 0);
        assert_eq!(report.f, 0.0);
    }

    #[test]
    fn perfect_resolver_scores_one() {
        // zero params → greedy ties → all-corefer; on instances whose gold
        // set is everything, that is the perfect resolver
        let corpus = generate_toy_corpus(&ToyCorpusSpec {
            n_docs: 4,
            n_candidates: 2..=3,
            n_gold: 1..=2,
            seed: 5,
            set_dependent_fraction: 0.0,
            ..ToyCorpusSpec::default()
        })
        .unwrap();
        let all_gold = corpus.clone();
        let mut instances = all_gold.instances.clone();
        for inst in &mut instances {
            inst.gold_antecedents = (0..inst.candidates.len()).collect();
        }
        let all_gold =
            Corpus::new(all_gold.vocabulary.clone(), all_gold.documents.clone(), instances)
                .unwrap();
        let cfg = ModelConfig::tiny(corpus.vocabulary.len());
        let mut rng = RngStream::new(0);
        let mut store = cfg.init_params(&mut rng);
        let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
        for n in names {
            store.value_mut(&n).fill(0.0);
        }
        let report = evaluate(&cfg, &store, &all_gold, Averaging::Micro, 1).unwrap();
        assert_eq!((report.precision, report.recall, report.f), (1.0, 1.0, 1.0));
    }

    #[test]
    fn single_instance_evaluation_equals_episode_reward() {
        let (corpus, cfg) = toy(3);
        let mut rng = RngStream::new(3);
        let store = cfg.init_params(&mut rng);
        let single = Corpus::new(
            corpus.vocabulary.clone(),
            corpus.documents.clone(),
            vec![corpus.instances[0].clone()],
        )
        .unwrap();
        let report = evaluate(&cfg, &store, &single, Averaging::Micro, 1).unwrap();
        let (doc, inst) = corpus.instance_context(0);
        let traj = run_episode(
            &cfg,
            &store,
            doc,
            inst,
            RolloutMode::Greedy,
            0.0,
            false,
            &mut RngStream::new(0),
        )
        .unwrap();
        assert!((report.f - traj.reward).abs() < 1e-15);
    }

    #[test]
    fn workers_do_not_change_results() {
        let (corpus, cfg) = toy(4);
        let mut rng = RngStream::new(4);
        let store = cfg.init_params(&mut rng);
        let a = evaluate(&cfg, &store, &corpus, Averaging::Micro, 1).unwrap();
        let b = evaluate(&cfg, &store, &corpus, Averaging::Micro, 3).unwrap();
        assert_eq!(a.f, b.f);
        assert_eq!(a.precision, b.precision);
        let m1 = evaluate(&cfg, &store, &corpus, Averaging::Macro, 1).unwrap();
        let m3 = evaluate(&cfg, &store, &corpus, Averaging::Macro, 3).unwrap();
        assert_eq!(m1.f, m3.f);
    }

    #[test]
    fn exact_reward_single_candidate_is_p_corefer() {
        let (corpus, cfg) = toy(6);
        let mut rng = RngStream::new(6);
        let store = cfg.init_params(&mut rng);
        let (doc, inst) = corpus.instance_context(0);
        let mut single = inst.clone();
        single.candidates.truncate(1);
        single.gold_antecedents = [0usize].into_iter().collect();

        let er = exact_expected_reward(&cfg, &store, doc, &single).unwrap();
        // independent route: probability of corefer at step 0
        let zp = single.location();
        let (v_zp, _) = encode_zp(&cfg, &store, doc, zp);
        let (v_np, _) = encode_np(&cfg, &store, doc, &single.candidates[0]);
        let (v_ante, _) = pool_antecedents(&AnteMemory::new(), cfg.v_np_dim());
        let feat = extract_features(doc, zp, &single.candidates, 0);
        let state = assemble_state(&v_zp, &v_np, &v_ante, &feat);
        let (dist, _) =
            agent_forward(&cfg, &store, &state, 0.0, false, &mut RngStream::new(0)).unwrap();
        assert!((er - dist.p_corefer()).abs() < 1e-12);
    }

    #[test]
    fn exact_reward_deterministic_perfect_policy() {
        let (corpus, cfg) = toy(7);
        let mut rng = RngStream::new(7);
        let mut store = cfg.init_params(&mut rng);
        // huge corefer bias → p(corefer) ≈ 1 everywhere
        store.value_mut(crate::encoders::AGENT_BS).data_mut()[0] = 40.0;
        store.value_mut(crate::encoders::AGENT_BS).data_mut()[1] = -40.0;
        let (doc, inst) = corpus.instance_context(0);
        let mut all_gold = inst.clone();
        all_gold.gold_antecedents = (0..all_gold.candidates.len()).collect();
        let er = exact_expected_reward(&cfg, &store, doc, &all_gold).unwrap();
        assert!((er - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exact_reward_guard() {
        let (corpus, cfg) = toy(8);
        let mut rng = RngStream::new(8);
        let store = cfg.init_params(&mut rng);
        let (doc, inst) = corpus.instance_context(0);
        let mut big = inst.clone();
        while big.candidates.len() <= MAX_ENUM_REWARD {
            big.candidates.push(big.candidates[0]);
        }
        assert!(exact_expected_reward(&cfg, &store, doc, &big).is_err());
    }

    #[test]
    fn exact_reward_matches_monte_carlo() {
        let (corpus, cfg) = toy(9);
        let mut rng = RngStream::new(9);
        let store = cfg.init_params(&mut rng);
        let (doc, inst) = corpus.instance_context(0);
        let exact = exact_expected_reward(&cfg, &store, doc, inst).unwrap();

        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let traj = run_episode(
                &cfg,
                &store,
                doc,
                inst,
                RolloutMode::Sample,
                0.0,
                false,
                &mut rng,
            )
            .unwrap();
            sum += traj.reward;
            sumsq += traj.reward * traj.reward;
        }
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (exact - mean).abs() <= 3.0 * se + 1e-12,
            "exact {exact} vs MC {mean} (3se = {})",
            3.0 * se
        );
    }

    /// Keystone: the enumerated analytic policy gradient equals the finite
    /// difference of the enumerated expected reward.
    #[test]
    fn exact_gradient_matches_finite_difference_of_exact_reward() {
        let (corpus, cfg) = toy(10);
        let mut rng = RngStream::new(10);
        let mut store = cfg.init_params(&mut rng);
        let idx = corpus
            .instances
            .iter()
            .position(|i| i.candidates.len() >= 2 && i.candidates.len() <= 3)
            .expect("small instance");
        let doc_inst = corpus.instance_context(idx);
        let (doc, inst) = (doc_inst.0.clone(), doc_inst.1.clone());

        let analytic = exact_policy_gradient(&cfg, &mut store, &doc, &inst).unwrap();
        let (cfg2, d2, i2) = (cfg.clone(), doc.clone(), inst.clone());
        let fd = finite_diff_grad(
            move |s: &ParamStore| exact_expected_reward(&cfg2, s, &d2, &i2).unwrap(),
            &mut store,
            1e-5,
        )
        .unwrap();

        let a = flatten_grad_map(&analytic);
        let b = flatten_grad_map(&fd);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!(rel_err(*x, *y) <= 1e-4, "exact grad {x} vs fd {y}");
        }
    }

    #[test]
    fn constant_reward_gives_zero_exact_gradient() {
        let (corpus, cfg) = toy(11);
        let mut rng = RngStream::new(11);
        let mut store = cfg.init_params(&mut rng);
        let doc_inst = corpus.instance_context(0);
        let (doc, inst) = (doc_inst.0.clone(), doc_inst.1.clone());
        let grad =
            exact_policy_gradient_with(&cfg, &mut store, &doc, &inst, &|_| 0.75).unwrap();
        let max = flatten_grad_map(&grad).iter().map(|g| g.abs()).fold(0.0, f64::max);
        // Σ_seq ∇P(seq) · c = c · ∇ Σ_seq P(seq) = c · ∇1 = 0
        assert!(max < 1e-12, "constant reward must zero the gradient, got {max}");
    }

    #[test]
    fn sweep_shapes_and_zero_iteration_row() {
        let (corpus, cfg) = toy(12);
        let hyper = HyperConfig {
            pretrain_epochs: 2,
            rl_epochs: 1,
            batch_size: 8,
            seed: 12,
            ..HyperConfig::default()
        };
        let rows = sweep_pretrain_iterations(&corpus, &cfg, &hyper, &[0, 2]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].iterations, 0);

        // iteration-0 pretrain column equals the random-init policy's F
        let init_only = HyperConfig { pretrain_epochs: 0, rl_epochs: 0, ..hyper.clone() };
        let outcome = crate::training::train(&corpus, &cfg, &init_only).unwrap();
        let (_, dev) = crate::training::split_for(&corpus, &hyper).unwrap();
        let f0 = evaluate(&cfg, &outcome.params, &dev, Averaging::Micro, 1).unwrap().f;
        assert_eq!(rows[0].f_pretrain, f0);
    }

    #[test]
    fn seed_study_determinism_and_stats() {
        let (corpus, cfg) = toy(13);
        let hyper = HyperConfig {
            pretrain_epochs: 1,
            rl_epochs: 0,
            batch_size: 8,
            ..HyperConfig::default()
        };
        let study = seed_study(&corpus, &cfg, &hyper, &[3, 3, 4], None).unwrap();
        assert_eq!(study.runs.len(), 3);
        assert_eq!(study.runs[0].1, study.runs[1].1, "same seed, same F");
        assert!(study.min_f <= study.median_f && study.median_f <= study.max_f);
        assert!(study.sigma >= 0.0);
        assert!(seed_study(&corpus, &cfg, &hyper, &[1], None).is_err());
    }
}
