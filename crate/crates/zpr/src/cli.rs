//! Command-line interface: argument definitions, run-configuration
//! resolution (defaults < `--config` file < explicit flags), and the
//! per-subcommand drivers.
//!
//! Exit codes: 0 ok, 1 usage, 2 validation/I-O, 3 numeric-check failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState};
use crate::corpus::{generate_toy_corpus, load_corpus, save_corpus, ToyCorpusSpec};
use crate::encoders::ModelConfig;
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate, seed_study, sweep_pretrain_iterations, Averaging, MetricsReport,
};
use crate::oracle::{run_suite, OracleConfig};
use crate::training::{train_with_progress, EpochRecord, HyperConfig};

#[derive(Parser)]
#[command(
    name = "zpr",
    about = "Zero-pronoun antecedent selection as a sequential decision process",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted coreference signal.
    GenToy(GenToyOpts),
    /// Pretrain and RL-train a model; writes checkpoints and a JSONL log.
    Train(TrainOpts),
    /// Evaluate a checkpoint on a corpus with greedy rollouts.
    Eval(EvalOpts),
    /// Run the gradient-check and estimator-consistency suites.
    Oracle(OracleOpts),
    /// Dev F with and without the RL phase across pretraining iteration counts.
    Sweep(SweepOpts),
    /// Train with several random seeds and report the F-score spread.
    SeedStudy(SeedStudyOpts),
}

#[derive(Args)]
pub struct GenToyOpts {
    /// Output corpus file (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub docs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub instances_per_doc: usize,
    #[arg(long, default_value_t = 7)]
    pub min_candidates: usize,
    #[arg(long, default_value_t = 9)]
    pub max_candidates: usize,
    #[arg(long, default_value_t = 7)]
    pub min_gold: usize,
    #[arg(long, default_value_t = 9)]
    pub max_gold: usize,
    #[arg(long, default_value_t = 64)]
    pub vocab_size: usize,
    /// Fraction of instances whose distractor is a lexical twin of an
    /// earlier gold candidate, separable only through the antecedent memory.
    #[arg(long, default_value_t = 0.3)]
    pub set_dependent_fraction: f64,
}

impl GenToyOpts {
    fn spec(&self) -> ToyCorpusSpec {
        ToyCorpusSpec {
            n_docs: self.docs,
            instances_per_doc: self.instances_per_doc..=self.instances_per_doc,
            n_candidates: self.min_candidates..=self.max_candidates,
            n_gold: self.min_gold..=self.max_gold,
            vocab_size: self.vocab_size,
            set_dependent_fraction: self.set_dependent_fraction,
            seed: self.seed,
        }
    }
}

/// Flags shared by train, sweep, and seed-study. Every hyperparameter
/// default can also come from a `--config key=value` file; explicit flags
/// win over the file.
#[derive(Args, Clone)]
pub struct TrainFlags {
    /// Key=value file overriding hyperparameter defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub rl_epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub pretrain_lr: Option<f64>,
    #[arg(long)]
    pub rl_lr: Option<f64>,
    #[arg(long)]
    pub pretrain_dropout: Option<f64>,
    #[arg(long)]
    pub rl_dropout: Option<f64>,
    #[arg(long)]
    pub dev_fraction: Option<f64>,
    /// Skip the RL phase entirely.
    #[arg(long)]
    pub no_rl: bool,
    #[arg(long)]
    pub d_emb: Option<usize>,
    #[arg(long)]
    pub d_h: Option<usize>,
    #[arg(long)]
    pub hidden1: Option<usize>,
    #[arg(long)]
    pub hidden2: Option<usize>,
}

#[derive(Args)]
pub struct TrainOpts {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Args)]
pub struct EvalOpts {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Print the per-source breakdown.
    #[arg(long)]
    pub per_source: bool,
    /// Macro-average per-instance metrics instead of micro counts.
    #[arg(long = "macro")]
    pub macro_average: bool,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Emit the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct OracleOpts {
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Relative-error tolerance for composite gradients.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50_000)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 3.0)]
    pub mc_se: f64,
    /// Test hook: corrupt one analytic gradient so the suite must fail.
    #[arg(long, hide = true)]
    pub inject_wrong_sign: bool,
}

#[derive(Args)]
pub struct SweepOpts {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated pretraining epoch counts, e.g. 0,10,30,70.
    #[arg(long, value_delimiter = ',')]
    pub iterations: Vec<usize>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Args)]
pub struct SeedStudyOpts {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated seeds, e.g. 1,2,3,4,5.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Optional held-out corpus; defaults to each run's dev split.
    #[arg(long)]
    pub eval_corpus: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

// ---------------------------------------------------------------------------
// Config resolution
// ---------------------------------------------------------------------------

/// Fully resolved run configuration.
#[derive(Debug)]
pub struct RunConfig {
    pub hyper: HyperConfig,
    pub d_emb: usize,
    pub d_h: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl RunConfig {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_emb: self.d_emb,
            d_h: self.d_h,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            n_features: crate::features::FEATURE_COUNT,
        }
    }
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            msg: format!("expected key=value, got {line:?}"),
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn take<T: std::str::FromStr>(
    map: &mut BTreeMap<String, String>,
    key: &str,
    slot: &mut T,
) -> Result<()> {
    if let Some(v) = map.remove(key) {
        *slot = v
            .parse()
            .map_err(|_| Error::Validation(format!("config key {key}: bad value {v:?}")))?;
    }
    Ok(())
}

/// defaults < config file < explicit flags.
pub fn resolve_run_config(flags: &TrainFlags) -> Result<RunConfig> {
    let mut hyper = HyperConfig::default();
    let defaults = ModelConfig::new(0);
    let (mut d_emb, mut d_h) = (defaults.d_emb, defaults.d_h);
    let (mut hidden1, mut hidden2) = (defaults.hidden1, defaults.hidden2);

    if let Some(path) = &flags.config {
        let mut map = parse_config_file(path)?;
        take(&mut map, "pretrain_epochs", &mut hyper.pretrain_epochs)?;
        take(&mut map, "rl_epochs", &mut hyper.rl_epochs)?;
        take(&mut map, "batch", &mut hyper.batch_size)?;
        take(&mut map, "pretrain_lr", &mut hyper.pretrain_lr)?;
        take(&mut map, "rl_lr", &mut hyper.rl_lr)?;
        take(&mut map, "pretrain_dropout", &mut hyper.pretrain_dropout)?;
        take(&mut map, "rl_dropout", &mut hyper.rl_dropout)?;
        take(&mut map, "dev_fraction", &mut hyper.dev_fraction)?;
        take(&mut map, "seed", &mut hyper.seed)?;
        take(&mut map, "d_emb", &mut d_emb)?;
        take(&mut map, "d_h", &mut d_h)?;
        take(&mut map, "hidden1", &mut hidden1)?;
        take(&mut map, "hidden2", &mut hidden2)?;
        if let Some(key) = map.keys().next() {
            return Err(Error::Validation(format!("unknown config key {key:?}")));
        }
    }

    macro_rules! flag {
        ($slot:expr, $opt:expr) => {
            if let Some(v) = $opt {
                $slot = v;
            }
        };
    }
    flag!(hyper.seed, flags.seed);
    flag!(hyper.pretrain_epochs, flags.pretrain_epochs);
    flag!(hyper.rl_epochs, flags.rl_epochs);
    flag!(hyper.batch_size, flags.batch);
    flag!(hyper.pretrain_lr, flags.pretrain_lr);
    flag!(hyper.rl_lr, flags.rl_lr);
    flag!(hyper.pretrain_dropout, flags.pretrain_dropout);
    flag!(hyper.rl_dropout, flags.rl_dropout);
    flag!(hyper.dev_fraction, flags.dev_fraction);
    flag!(d_emb, flags.d_emb);
    flag!(d_h, flags.d_h);
    flag!(hidden1, flags.hidden1);
    flag!(hidden2, flags.hidden2);
    if flags.no_rl {
        hyper.rl_epochs = 0;
    }
    hyper.validate()?;
    Ok(RunConfig { hyper, d_emb, d_h, hidden1, hidden2 })
}

// ---------------------------------------------------------------------------
// Command drivers
// ---------------------------------------------------------------------------

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::GenToy(opts) => cmd_gen_toy(&opts),
        Command::Train(opts) => cmd_train(&opts),
        Command::Eval(opts) => cmd_eval(&opts),
        Command::Oracle(opts) => cmd_oracle(&opts),
        Command::Sweep(opts) => cmd_sweep(&opts),
        Command::SeedStudy(opts) => cmd_seed_study(&opts),
    }
}

fn cmd_gen_toy(opts: &GenToyOpts) -> Result<i32> {
    let corpus = generate_toy_corpus(&opts.spec())?;
    save_corpus(&corpus, &opts.out)?;
    let s = corpus.summary();
    println!(
        "wrote {}: {} documents, {} sentences, {} instances, vocab {}",
        opts.out.display(),
        s.n_documents,
        s.n_sentences,
        s.n_instances,
        s.vocab_size
    );
    Ok(0)
}

fn format_epoch(r: &EpochRecord) -> String {
    format!(
        "{:>8} epoch {:>3}  {}={:<9.4}  dev P/R/F {:.4}/{:.4}/{:.4}  ({:.1}s)",
        r.phase.to_string(),
        r.epoch,
        if matches!(r.phase, crate::training::Phase::Pretrain) { "loss" } else { "reward" },
        r.loss_or_mean_reward,
        r.dev_p,
        r.dev_r,
        r.dev_f,
        r.seconds
    )
}

fn cmd_train(opts: &TrainOpts) -> Result<i32> {
    let run_cfg = resolve_run_config(&opts.flags)?;
    let corpus = load_corpus(&opts.corpus)?;
    let cfg = run_cfg.model_config(corpus.vocabulary.len());
    fs::create_dir_all(&opts.out)?;

    let log_path = opts.out.join("train_log.jsonl");
    let mut log_file = fs::File::create(&log_path)?;

    let outcome = train_with_progress(&corpus, &cfg, &run_cfg.hyper, |record| {
        println!("{}", format_epoch(record));
        if let Ok(line) = serde_json::to_string(record) {
            let _ = writeln!(log_file, "{line}");
        }
    })?;

    let (final_phase, final_epoch) = match outcome.log.last() {
        Some(r) => (r.phase.to_string(), r.epoch),
        None => ("init".to_string(), 0),
    };
    let rng = RngState::of(outcome.rng_state);

    let final_path = opts.out.join("checkpoint_final.zpck");
    save_checkpoint(
        &final_path,
        &Checkpoint::new(
            cfg.clone(),
            corpus.vocabulary.clone(),
            outcome.params,
            &final_phase,
            final_epoch,
            rng.clone(),
        ),
    )?;
    let best_path = opts.out.join("checkpoint_best.zpck");
    save_checkpoint(
        &best_path,
        &Checkpoint::new(
            cfg,
            corpus.vocabulary.clone(),
            outcome.best_params,
            &final_phase,
            final_epoch,
            rng,
        ),
    )?;

    println!(
        "best dev F {:.4}; wrote {}, {}, {}",
        outcome.best_dev_f,
        final_path.display(),
        best_path.display(),
        log_path.display()
    );
    Ok(0)
}

fn print_report(report: &MetricsReport, per_source: bool) {
    println!(
        "instances {:>6}  P {:.4}  R {:.4}  F {:.4}",
        report.n_instances, report.precision, report.recall, report.f
    );
    if per_source {
        for (tag, m) in &report.per_source {
            println!(
                "  {:<12} {:>6}  P {:.4}  R {:.4}  F {:.4}",
                tag, m.n_instances, m.precision, m.recall, m.f
            );
        }
    }
}

fn cmd_eval(opts: &EvalOpts) -> Result<i32> {
    let ckpt = load_checkpoint(&opts.checkpoint)?;
    let corpus = load_corpus(&opts.corpus)?;
    if corpus.vocabulary != ckpt.vocabulary {
        return Err(Error::Validation(
            "corpus vocabulary differs from the checkpoint's training vocabulary".into(),
        ));
    }
    let averaging = if opts.macro_average { Averaging::Macro } else { Averaging::Micro };
    let report = evaluate(&ckpt.meta.model, &ckpt.store, &corpus, averaging, opts.workers)?;
    if opts.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print_report(&report, opts.per_source);
    }
    Ok(0)
}

fn cmd_oracle(opts: &OracleOpts) -> Result<i32> {
    let cfg = OracleConfig {
        eps: opts.eps,
        tol: opts.tol,
        seed: opts.seed,
        mc_samples: opts.mc_samples,
        mc_se: opts.mc_se,
        inject_wrong_sign: opts.inject_wrong_sign,
    };
    println!(
        "oracle suite: eps {:.1e}, tol {:.1e}, seed {}, mc samples {}, mc bound {:.1} se",
        cfg.eps, cfg.tol, cfg.seed, cfg.mc_samples, cfg.mc_se
    );
    let results = run_suite(&cfg)?;
    let mut all_pass = true;
    for r in &results {
        all_pass &= r.passed;
        println!(
            "{} {:<55} {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    if all_pass {
        Ok(0)
    } else {
        Err(Error::Numeric("one or more oracle checks failed".into()))
    }
}

fn cmd_sweep(opts: &SweepOpts) -> Result<i32> {
    if opts.iterations.is_empty() {
        return Err(Error::Argument("--iterations needs at least one value".into()));
    }
    let run_cfg = resolve_run_config(&opts.flags)?;
    let corpus = load_corpus(&opts.corpus)?;
    let cfg = run_cfg.model_config(corpus.vocabulary.len());
    let rows = sweep_pretrain_iterations(&corpus, &cfg, &run_cfg.hyper, &opts.iterations)?;
    println!("{:>10}  {:>12}  {:>12}", "iterations", "F pretrain", "F with RL");
    for row in &rows {
        println!(
            "{:>10}  {:>12.4}  {:>12.4}",
            row.iterations, row.f_pretrain, row.f_with_rl
        );
    }
    Ok(0)
}

fn cmd_seed_study(opts: &SeedStudyOpts) -> Result<i32> {
    let run_cfg = resolve_run_config(&opts.flags)?;
    let corpus = load_corpus(&opts.corpus)?;
    let cfg = run_cfg.model_config(corpus.vocabulary.len());
    let eval_corpus = match &opts.eval_corpus {
        Some(p) => {
            let c = load_corpus(p)?;
            if c.vocabulary != corpus.vocabulary {
                return Err(Error::Validation(
                    "eval corpus vocabulary differs from the training corpus".into(),
                ));
            }
            Some(c)
        }
        None => None,
    };
    let study = seed_study(&corpus, &cfg, &run_cfg.hyper, &opts.seeds, eval_corpus.as_ref())?;
    println!("{:>8}  {:>8}", "seed", "F");
    for (seed, f) in &study.runs {
        println!("{seed:>8}  {f:>8.4}");
    }
    println!(
        "min {:.4}  median {:.4}  max {:.4}  sigma {:.5}",
        study.min_f, study.median_f, study.max_f, study.sigma
    );
    Ok(0)
}

/// Map an error to its process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric(_) => 3,
        _ => 2,
    }
}
