//! Self-contained numeric check suite behind the `oracle` CLI command.
//!
//! Builds its own small fixtures (random parameters over a generated toy
//! instance), then verifies every analytic gradient against central finite
//! differences and the REINFORCE estimator against the enumerated exact
//! policy gradient. Isolated kernels are held to a tolerance two orders
//! tighter than composite pipelines.

use crate::corpus::{generate_toy_corpus, Corpus, ToyCorpusSpec};
use crate::encoders::ModelConfig;
use crate::error::Result;
use crate::evaluation::{exact_expected_reward, exact_policy_gradient};
use crate::math::{
    affine, affine_backward, finite_diff_grad, flatten_grad_map, rel_err, tanh_backward,
    tanh_elem, ParamStore, RngStream, Tensor,
};
use crate::training::{
    compute_baselines, pretrain_loss, reinforce_update, run_episode, RolloutMode,
};

#[derive(Debug, Clone)]
pub struct OracleConfig {
    /// Finite-difference step.
    pub eps: f64,
    /// Relative-error bound for composite pipelines; kernels use `tol / 100`.
    pub tol: f64,
    pub seed: u64,
    /// REINFORCE gradient samples for the estimator-consistency check.
    pub mc_samples: usize,
    /// Allowed deviation of the sample mean, in standard errors.
    pub mc_se: f64,
    /// Test hook: flip the sign of one analytic gradient so the suite must
    /// fail. Proves the detector detects.
    pub inject_wrong_sign: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            eps: 1e-5,
            tol: 1e-4,
            seed: 0,
            mc_samples: 50_000,
            mc_se: 3.0,
            inject_wrong_sign: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn max_rel_err(analytic: &[f64], reference: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| rel_err(*a, *b))
        .fold(0.0, f64::max)
}

fn fixture(seed: u64) -> (Corpus, ModelConfig, ParamStore) {
    let corpus = generate_toy_corpus(&ToyCorpusSpec {
        n_docs: 3,
        n_candidates: 2..=3,
        n_gold: 1..=2,
        seed,
        ..ToyCorpusSpec::default()
    })
    .expect("oracle fixture corpus");
    let cfg = ModelConfig::tiny(corpus.vocabulary.len());
    let mut rng = RngStream::new(seed).derive(0xf1);
    let store = cfg.init_params(&mut rng);
    (corpus, cfg, store)
}

/// Run every check; a result per row. Any `passed == false` row means the
/// suite failed.
pub fn run_suite(opts: &OracleConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let kernel_tol = opts.tol / 100.0;

    out.push(check_affine(opts, kernel_tol)?);
    out.push(check_tanh(opts, kernel_tol)?);
    out.push(check_rnn(opts)?);
    out.push(check_agent_logprob(opts)?);
    out.push(check_pretrain_loss(opts)?);
    out.push(check_exact_gradient(opts)?);
    out.push(check_estimator_consistency(opts)?);
    Ok(out)
}

fn check_affine(opts: &OracleConfig, tol: f64) -> Result<CheckResult> {
    let mut rng = RngStream::new(opts.seed).derive(1);
    let mut store = ParamStore::new();
    store.insert("w", Tensor::uniform(5, 7, 0.5, &mut rng));
    store.insert("x", Tensor::uniform(7, 1, 0.5, &mut rng));
    store.insert("b", Tensor::uniform(5, 1, 0.5, &mut rng));
    let probe: Vec<f64> = (0..5).map(|_| rng.range(-1.0, 1.0)).collect();

    let p = probe.clone();
    let fd = finite_diff_grad(
        move |s: &ParamStore| {
            affine(s.value("w"), s.value("x").data(), s.value("b").data())
                .iter()
                .zip(p.iter())
                .map(|(o, q)| o * q)
                .sum()
        },
        &mut store,
        opts.eps,
    )?;

    let mut dw = Tensor::zeros(5, 7);
    let mut db = vec![0.0; 5];
    let x = store.value("x").data().to_vec();
    let dx = affine_backward(store.value("w"), &x, &probe, &mut dw, &mut db);

    let mut analytic = dw.data().to_vec();
    analytic.extend_from_slice(&db);
    analytic.extend_from_slice(&dx);
    let mut reference = fd["w"].data().to_vec();
    reference.extend_from_slice(fd["b"].data());
    reference.extend_from_slice(fd["x"].data());

    let err = max_rel_err(&analytic, &reference);
    Ok(CheckResult {
        name: "affine backward vs finite differences".into(),
        passed: err <= tol,
        detail: format!("max rel err {err:.3e} (tol {tol:.1e})"),
    })
}

fn check_tanh(opts: &OracleConfig, tol: f64) -> Result<CheckResult> {
    let mut rng = RngStream::new(opts.seed).derive(2);
    let mut store = ParamStore::new();
    store.insert("x", Tensor::uniform(9, 1, 1.5, &mut rng));
    let probe: Vec<f64> = (0..9).map(|_| rng.range(-1.0, 1.0)).collect();
    let p = probe.clone();
    let fd = finite_diff_grad(
        move |s: &ParamStore| {
            tanh_elem(s.value("x").data()).iter().zip(p.iter()).map(|(o, q)| o * q).sum()
        },
        &mut store,
        opts.eps,
    )?;
    let dx = tanh_backward(&tanh_elem(store.value("x").data()), &probe);
    let err = max_rel_err(&dx, fd["x"].data());
    Ok(CheckResult {
        name: "tanh backward vs finite differences".into(),
        passed: err <= tol,
        detail: format!("max rel err {err:.3e} (tol {tol:.1e})"),
    })
}

fn check_rnn(opts: &OracleConfig) -> Result<CheckResult> {
    use crate::encoders::{rnn_backward, rnn_encode};
    let mut rng = RngStream::new(opts.seed).derive(3);
    let (d_emb, d_h, len) = (3usize, 4usize, 6usize);
    let mut store = ParamStore::new();
    store.insert("c.w_x", Tensor::uniform(d_h, d_emb, 0.6, &mut rng));
    store.insert("c.w_h", Tensor::uniform(d_h, d_h, 0.6, &mut rng));
    store.insert("c.b", Tensor::uniform(d_h, 1, 0.3, &mut rng));
    for i in 0..len {
        store.insert(&format!("x{i}"), Tensor::uniform(d_emb, 1, 1.0, &mut rng));
    }
    let probe: Vec<f64> = (0..d_h).map(|_| rng.range(-1.0, 1.0)).collect();

    let p = probe.clone();
    let fd = finite_diff_grad(
        move |s: &ParamStore| {
            let inputs: Vec<Vec<f64>> =
                (0..len).map(|i| s.value(&format!("x{i}")).data().to_vec()).collect();
            let (h, _) = rnn_encode(s, "c", &inputs, false);
            h.iter().zip(p.iter()).map(|(a, b)| a * b).sum()
        },
        &mut store,
        opts.eps,
    )?;

    store.zero_grads();
    let inputs: Vec<Vec<f64>> =
        (0..len).map(|i| store.value(&format!("x{i}")).data().to_vec()).collect();
    let (_, cache) = rnn_encode(&store, "c", &inputs, false);
    let d_inputs = rnn_backward(&mut store, "c", &cache, &probe);

    let mut analytic = Vec::new();
    let mut reference = Vec::new();
    for name in ["c.w_x", "c.w_h", "c.b"] {
        analytic.extend_from_slice(store.grad(name).data());
        reference.extend_from_slice(fd[name].data());
    }
    for (i, d) in d_inputs.iter().enumerate() {
        analytic.extend_from_slice(d);
        reference.extend_from_slice(fd[&format!("x{i}")].data());
    }
    let err = max_rel_err(&analytic, &reference);
    Ok(CheckResult {
        name: format!("rnn bptt (length {len}) vs finite differences"),
        passed: err <= opts.tol,
        detail: format!("max rel err {err:.3e} (tol {:.1e})", opts.tol),
    })
}

fn check_agent_logprob(opts: &OracleConfig) -> Result<CheckResult> {
    use crate::agent::{agent_backward, agent_forward, Action};
    let (_, cfg, mut store) = fixture(opts.seed);
    let mut rng = RngStream::new(opts.seed).derive(4);
    let state: Vec<f64> = (0..cfg.d_state()).map(|_| rng.range(-1.0, 1.0)).collect();

    let (cfg2, s2) = (cfg.clone(), state.clone());
    let fd = finite_diff_grad(
        move |s: &ParamStore| {
            let mut r = RngStream::new(0);
            let (d, _) = agent_forward(&cfg2, s, &s2, 0.0, false, &mut r).unwrap();
            d.p_corefer().ln()
        },
        &mut store,
        opts.eps,
    )?;

    store.zero_grads();
    let (_, cache) = agent_forward(&cfg, &store, &state, 0.0, false, &mut rng)?;
    agent_backward(&cfg, &mut store, &cache, Action::Corefer, 1.0);

    let sign = if opts.inject_wrong_sign { -1.0 } else { 1.0 };
    let mut analytic = Vec::new();
    let mut reference = Vec::new();
    for name in
        [crate::encoders::AGENT_W1, crate::encoders::AGENT_B1, crate::encoders::AGENT_W2,
         crate::encoders::AGENT_B2, crate::encoders::AGENT_WS, crate::encoders::AGENT_BS]
    {
        analytic.extend(store.grad(name).data().iter().map(|g| g * sign));
        reference.extend_from_slice(fd[name].data());
    }
    let err = max_rel_err(&analytic, &reference);
    Ok(CheckResult {
        name: "agent log-probability gradient vs finite differences".into(),
        passed: err <= opts.tol,
        detail: format!("max rel err {err:.3e} (tol {:.1e})", opts.tol),
    })
}

fn check_pretrain_loss(opts: &OracleConfig) -> Result<CheckResult> {
    let (corpus, cfg, mut store) = fixture(opts.seed);
    let doc_inst = corpus.instance_context(0);
    let (doc, inst) = (doc_inst.0.clone(), doc_inst.1.clone());

    let (cfg2, d2, i2) = (cfg.clone(), doc.clone(), inst.clone());
    let fd = finite_diff_grad(
        move |s: &ParamStore| {
            let mut tmp = s.clone();
            let mut r = RngStream::new(0);
            pretrain_loss(&cfg2, &mut tmp, &d2, &i2, 0.0, false, &mut r, false).unwrap()
        },
        &mut store,
        opts.eps,
    )?;

    store.zero_grads();
    let mut r = RngStream::new(0);
    pretrain_loss(&cfg, &mut store, &doc, &inst, 0.0, false, &mut r, true)?;

    let err = max_rel_err(&store.flat_grads(), &flatten_grad_map(&fd));
    Ok(CheckResult {
        name: "pretraining loss gradient vs finite differences".into(),
        passed: err <= opts.tol,
        detail: format!("max rel err {err:.3e} (tol {:.1e})", opts.tol),
    })
}

fn check_exact_gradient(opts: &OracleConfig) -> Result<CheckResult> {
    let (corpus, cfg, mut store) = fixture(opts.seed);
    let idx = corpus
        .instances
        .iter()
        .position(|i| i.candidates.len() == 2)
        .unwrap_or(0);
    let doc_inst = corpus.instance_context(idx);
    let (doc, inst) = (doc_inst.0.clone(), doc_inst.1.clone());

    let analytic = exact_policy_gradient(&cfg, &mut store, &doc, &inst)?;
    let (cfg2, d2, i2) = (cfg.clone(), doc.clone(), inst.clone());
    let fd = finite_diff_grad(
        move |s: &ParamStore| exact_expected_reward(&cfg2, s, &d2, &i2).unwrap(),
        &mut store,
        opts.eps,
    )?;
    let err = max_rel_err(&flatten_grad_map(&analytic), &flatten_grad_map(&fd));
    Ok(CheckResult {
        name: "exact policy gradient vs fd of exact expected reward".into(),
        passed: err <= opts.tol,
        detail: format!("max rel err {err:.3e} (tol {:.1e})", opts.tol),
    })
}

/// Mean of baseline-corrected REINFORCE gradient samples vs the enumerated
/// exact gradient, per coordinate, within `mc_se` standard errors.
fn check_estimator_consistency(opts: &OracleConfig) -> Result<CheckResult> {
    let (corpus, cfg, mut store) = fixture(opts.seed);
    let idx = corpus
        .instances
        .iter()
        .position(|i| i.candidates.len() == 2)
        .unwrap_or(0);
    let doc_inst = corpus.instance_context(idx);
    let (doc, inst) = (doc_inst.0.clone(), doc_inst.1.clone());

    let exact = flatten_grad_map(&exact_policy_gradient(&cfg, &mut store, &doc, &inst)?);

    let mut rng = RngStream::new(opts.seed).derive(5);
    let n = opts.mc_samples;
    let dim = exact.len();
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    store.zero_grads();
    for k in 1..=n {
        let mut traj =
            run_episode(&cfg, &store, &doc, &inst, RolloutMode::Sample, 0.0, false, &mut rng)?;
        compute_baselines(&mut traj, &inst.gold_antecedents);
        reinforce_update(&cfg, &mut store, &traj);
        // the accumulated gradient descends -J; negate for the ∇J sample
        let sample: Vec<f64> = store.flat_grads().iter().map(|g| -g).collect();
        store.zero_grads();
        for i in 0..dim {
            let delta = sample[i] - mean[i];
            mean[i] += delta / k as f64;
            m2[i] += delta * (sample[i] - mean[i]);
        }
    }

    let mut worst = 0.0f64;
    let mut failures = 0usize;
    for i in 0..dim {
        let var = m2[i] / n as f64;
        let se = (var / n as f64).sqrt();
        let dev = (mean[i] - exact[i]).abs();
        if se == 0.0 {
            if dev > 1e-12 {
                failures += 1;
            }
            continue;
        }
        let z = dev / se;
        worst = worst.max(z);
        if z > opts.mc_se {
            failures += 1;
        }
    }
    Ok(CheckResult {
        name: format!("reinforce estimator mean vs exact gradient ({n} samples)"),
        passed: failures == 0,
        detail: format!(
            "worst deviation {worst:.2} se over {dim} coordinates, {failures} beyond {:.1} se",
            opts.mc_se
        ),
    })
}

/// Baseline variance study on one fixture: per-coordinate sample variance of
/// the gradient estimator with the expected-reward baseline vs with b_t = 0.
/// Returns (fraction of coordinates not worse, total coordinates).
pub fn baseline_variance_fraction(
    seed: u64,
    samples: usize,
    min_candidates: usize,
) -> Result<(f64, usize)> {
    let corpus = generate_toy_corpus(&ToyCorpusSpec {
        n_docs: 4,
        n_candidates: min_candidates..=min_candidates,
        n_gold: 1..=2,
        seed,
        ..ToyCorpusSpec::default()
    })?;
    let cfg = ModelConfig::tiny(corpus.vocabulary.len());
    let mut rng = RngStream::new(seed).derive(0xb0);
    let mut store = cfg.init_params(&mut rng);
    let doc_inst = corpus.instance_context(0);
    let (doc, inst) = (doc_inst.0.clone(), doc_inst.1.clone());

    let dim = store.n_params();
    let mut variance = |with_baseline: bool, rng: &mut RngStream| -> Result<Vec<f64>> {
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        store.zero_grads();
        for k in 1..=samples {
            let mut traj = run_episode(
                &cfg,
                &store,
                &doc,
                &inst,
                RolloutMode::Sample,
                0.0,
                false,
                rng,
            )?;
            if with_baseline {
                compute_baselines(&mut traj, &inst.gold_antecedents);
            } else {
                traj.baselines = vec![0.0; traj.len()];
            }
            reinforce_update(&cfg, &mut store, &traj);
            let sample = store.flat_grads();
            store.zero_grads();
            for i in 0..dim {
                let delta = sample[i] - mean[i];
                mean[i] += delta / k as f64;
                m2[i] += delta * (sample[i] - mean[i]);
            }
        }
        Ok(m2.iter().map(|v| v / samples as f64).collect())
    };

    let mut rng_a = RngStream::new(seed).derive(0xb1);
    let mut rng_b = RngStream::new(seed).derive(0xb1);
    let var_with = variance(true, &mut rng_a)?;
    let var_without = variance(false, &mut rng_b)?;

    let not_worse =
        var_with.iter().zip(var_without.iter()).filter(|(w, wo)| *w <= *wo).count();
    Ok((not_worse as f64 / dim as f64, dim))
}
