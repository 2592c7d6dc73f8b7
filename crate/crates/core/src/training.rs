//! The semi-supervised loop: mean supervised NLL over a labeled batch plus
//! `λ` times the mean unsupervised loss over an unlabeled batch, optimized
//! with plain SGD. `λ` is held at zero for the first `warmup_steps` updates.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::{Corpus, Example};
use crate::error::{Error, Result};
use crate::executor::KnowledgeBase;
use crate::metrics::{denotation_accuracy, DiagnosticsAccumulator};
use crate::minilang::{ActionId, Grammar, Program};
use crate::model::{Model, ModelConfig, ModelParams, Utterance, Vocab};
use crate::objectives::{Objective, UnsupLossResult};
use crate::search::{beam_search, partition, DEFAULT_BEAM};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub lambda: f64,
    pub warmup_steps: usize,
    pub max_steps: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub lr: f64,
    pub seed: u64,
    pub beam: usize,
    pub eval_every: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Sparse,
            lambda: 0.3,
            warmup_steps: 1000,
            max_steps: 3000,
            batch_labeled: 8,
            batch_unlabeled: 8,
            lr: 0.1,
            seed: 0,
            beam: DEFAULT_BEAM,
            eval_every: 100,
            embed_dim: ModelConfig::DEFAULT_EMBED,
            hidden_dim: ModelConfig::DEFAULT_HIDDEN,
        }
    }
}

/// Candidate values for `λ` when tuning on the dev set.
pub const LAMBDA_GRID: [f64; 3] = [0.1, 0.3, 1.0];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.max_steps == 0 || self.batch_labeled == 0 || self.batch_unlabeled == 0 {
            return bad("steps and batch sizes must be positive");
        }
        if self.beam == 0 {
            return bad("beam size must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("model dimensions must be positive");
        }
        Ok(())
    }

    /// `supervised` when the unsupervised term is switched off.
    pub fn label(&self) -> &'static str {
        if self.lambda == 0.0 {
            "supervised"
        } else {
            self.objective.token()
        }
    }
}

fn field<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for {k}")))
}

impl std::str::FromStr for TrainConfig {
    type Err = Error;

    /// Parses the `key=value` form written by `Display`. Missing keys keep
    /// their defaults.
    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for tok in s.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, found `{tok}`")))?;
            match k {
                "objective" => cfg.objective = v.parse()?,
                "lambda" => cfg.lambda = field(k, v)?,
                "warmup_steps" => cfg.warmup_steps = field(k, v)?,
                "max_steps" => cfg.max_steps = field(k, v)?,
                "batch_labeled" => cfg.batch_labeled = field(k, v)?,
                "batch_unlabeled" => cfg.batch_unlabeled = field(k, v)?,
                "lr" => cfg.lr = field(k, v)?,
                "seed" => cfg.seed = field(k, v)?,
                "beam" => cfg.beam = field(k, v)?,
                "eval_every" => cfg.eval_every = field(k, v)?,
                "embed_dim" => cfg.embed_dim = field(k, v)?,
                "hidden_dim" => cfg.hidden_dim = field(k, v)?,
                _ => return Err(Error::Config(format!("unknown config key `{k}`"))),
            }
        }
        Ok(cfg)
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "objective={} lambda={} warmup_steps={} max_steps={} batch_labeled={} batch_unlabeled={} \
             lr={} seed={} beam={} eval_every={} embed_dim={} hidden_dim={}",
            self.objective,
            self.lambda,
            self.warmup_steps,
            self.max_steps,
            self.batch_labeled,
            self.batch_unlabeled,
            self.lr,
            self.seed,
            self.beam,
            self.eval_every,
            self.embed_dim,
            self.hidden_dim
        )
    }
}

#[derive(Debug, Clone)]
pub struct LabeledItem {
    pub x: Utterance,
    pub program: Program,
    pub actions: Vec<ActionId>,
}

#[derive(Debug, Clone)]
pub struct UnlabeledItem {
    pub x: Utterance,
    /// Only used for coverage.
    pub hidden_gold: Option<Program>,
}

/// Encoded training material.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub kb: KnowledgeBase,
    pub grammar: Arc<Grammar>,
    pub vocab: Vocab,
    pub labeled: Vec<LabeledItem>,
    pub unlabeled: Vec<UnlabeledItem>,
    pub dev: Vec<(Utterance, Program)>,
}

impl TrainData {
    /// The vocabulary covers the training utterances; unseen dev words map
    /// to the unknown token.
    pub fn new(
        kb: KnowledgeBase,
        corpus: &Corpus,
        dev: &[Example],
        max_conjuncts: usize,
    ) -> Result<Self> {
        if corpus.labeled.is_empty() {
            return Err(Error::Config("corpus has no labeled examples".into()));
        }
        let grammar = Arc::new(kb.grammar(max_conjuncts)?);
        let vocab = Vocab::build(
            corpus
                .labeled
                .iter()
                .map(|e| e.utterance.as_str())
                .chain(corpus.unlabeled.iter().map(|u| u.utterance.as_str()))
                .flat_map(str::split_whitespace),
        );
        let labeled = corpus
            .labeled
            .iter()
            .map(|e| {
                let actions = grammar
                    .actions(&e.program)
                    .map_err(|err| Error::Config(format!("labeled example {}: {err}", e.id)))?;
                Ok(LabeledItem {
                    x: vocab.encode(&e.utterance)?,
                    program: e.program.clone(),
                    actions,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let unlabeled = corpus
            .unlabeled
            .iter()
            .map(|u| {
                Ok(UnlabeledItem {
                    x: vocab.encode(&u.utterance)?,
                    hidden_gold: corpus.hidden_gold.get(&u.id).cloned(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dev = dev
            .iter()
            .map(|e| Ok((vocab.encode(&e.utterance)?, e.program.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainData {
            kb,
            grammar,
            vocab,
            labeled,
            unlabeled,
            dev,
        })
    }

    pub fn model_config(&self, cfg: &TrainConfig) -> ModelConfig {
        ModelConfig::new(self.vocab.len(), self.grammar.num_actions())
            .with_dims(cfg.embed_dim, cfg.hidden_dim)
    }

    pub fn model(&self, cfg: &TrainConfig) -> Result<Model> {
        Model::new(self.model_config(cfg), self.grammar.clone())
    }
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub objective: String,
    pub loss_sup: f64,
    pub loss_unsup: Option<f64>,
    pub avg_ratio: Option<f64>,
    pub coverage: Option<f64>,
    pub coverage_per_token: Option<f64>,
    pub dev_denotation_acc: Option<f64>,
    pub skipped: usize,
    pub contributing: usize,
}

impl StepRecord {
    pub fn skipped_frac(&self) -> Option<f64> {
        let n = self.skipped + self.contributing;
        (n > 0).then(|| self.skipped as f64 / n as f64)
    }
}

/// Per-step breakdown used by tests and oracles.
#[derive(Debug, Clone)]
pub struct StepGradient {
    pub loss_sup: f64,
    pub loss_unsup: Option<f64>,
    pub grad_sup: Vec<f64>,
    /// `∇ mean L_unsup`, not yet scaled by `λ`.
    pub grad_unsup: Vec<f64>,
    pub unsup: Vec<UnsupLossResult>,
    pub diagnostics: DiagnosticsAccumulator,
}

impl StepGradient {
    pub fn combined(&self, lambda: f64) -> (f64, Vec<f64>) {
        let loss = self.loss_sup + lambda * self.loss_unsup.unwrap_or(0.0);
        let grad = self
            .grad_sup
            .iter()
            .zip(&self.grad_unsup)
            .map(|(s, u)| s + lambda * u)
            .collect();
        (loss, grad)
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// Mean supervised NLL and its gradient over the given labeled items.
pub fn supervised_gradient(
    model: &Model,
    theta: &ModelParams,
    batch: &[&LabeledItem],
) -> Result<(f64, Vec<f64>)> {
    let scale = 1.0 / batch.len() as f64;
    let parts = batch
        .par_iter()
        .map(|item| {
            let (g, lps) =
                model.grad_weighted(theta, &item.x, &[(item.actions.as_slice(), -scale)])?;
            Ok((-lps[0], g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        add_into(&mut grad, g);
    }
    Ok((loss * scale, grad))
}

/// Mean unsupervised loss and gradient: a beam per item, the seen partition,
/// the objective's loss and its weighted gradient.
pub fn unsupervised_gradient(
    model: &Model,
    theta: &ModelParams,
    kb: &KnowledgeBase,
    objective: Objective,
    beam: usize,
    batch: &[&UnlabeledItem],
) -> Result<(f64, Vec<f64>, Vec<UnsupLossResult>, DiagnosticsAccumulator)> {
    let scale = 1.0 / batch.len() as f64;
    let parts = batch
        .par_iter()
        .map(|item| {
            let enc = model.encode(theta, &item.x);
            let seen = beam_search(model, theta, &enc, beam);
            let part = partition(&seen, model.grammar(), kb)?;
            let result = objective.loss(&part);
            let pairs: Vec<(&[ActionId], f64)> = result
                .grad_pairs(&part)
                .into_iter()
                .map(|(s, w)| (s, w * scale))
                .collect();
            let mut grad = vec![0.0; theta.len()];
            if !pairs.is_empty() {
                model.grad_weighted_acc(theta, &item.x, &pairs, 1.0, &mut grad)?;
            }
            let mut diag = DiagnosticsAccumulator::new();
            diag.record(item.x.len(), &part, item.hidden_gold.as_ref());
            Ok((result, grad, diag))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    let mut diag = DiagnosticsAccumulator::new();
    let mut results = Vec::with_capacity(parts.len());
    for (r, g, d) in parts {
        loss += r.loss;
        add_into(&mut grad, &g);
        diag.merge(&d);
        results.push(r);
    }
    Ok((loss * scale, grad, results, diag))
}

/// The SGD loop state.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    data: &'a TrainData,
    cfg: TrainConfig,
    model: Model,
    theta: ModelParams,
    rng_labeled: ChaCha8Rng,
    rng_unlabeled: ChaCha8Rng,
    step: usize,
    diagnostics: DiagnosticsAccumulator,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a TrainData, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = data.model(&cfg)?;
        let theta = ModelParams::init(model.config(), cfg.seed);
        let mut rng_labeled = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_labeled.set_stream(1);
        let mut rng_unlabeled = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_unlabeled.set_stream(2);
        Ok(Trainer {
            data,
            cfg,
            model,
            theta,
            rng_labeled,
            rng_unlabeled,
            step: 0,
            diagnostics: DiagnosticsAccumulator::new(),
        })
    }

    /// A copy of this state that continues with another objective and `λ`.
    /// Runs forked at the end of warmup share their supervised prefix.
    pub fn fork(&self, objective: Objective, lambda: f64) -> Result<Self> {
        let cfg = TrainConfig {
            objective,
            lambda,
            ..self.cfg.clone()
        };
        cfg.validate()?;
        Ok(Trainer {
            cfg,
            ..self.clone()
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn theta(&self) -> &ModelParams {
        &self.theta
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn diagnostics(&self) -> &DiagnosticsAccumulator {
        &self.diagnostics
    }

    /// `λ` in effect for the next update.
    pub fn effective_lambda(&self) -> f64 {
        if self.step < self.cfg.warmup_steps {
            0.0
        } else {
            self.cfg.lambda
        }
    }

    /// Samples the next batches and computes both gradients without updating.
    pub fn gradient(&mut self) -> Result<StepGradient> {
        let labeled: Vec<&LabeledItem> = (0..self.cfg.batch_labeled)
            .map(|_| &self.data.labeled[self.rng_labeled.gen_range(0..self.data.labeled.len())])
            .collect();
        let (loss_sup, grad_sup) = supervised_gradient(&self.model, &self.theta, &labeled)?;
        let mut out = StepGradient {
            loss_sup,
            loss_unsup: None,
            grad_unsup: vec![0.0; self.theta.len()],
            grad_sup,
            unsup: Vec::new(),
            diagnostics: DiagnosticsAccumulator::new(),
        };
        if self.effective_lambda() > 0.0 && !self.data.unlabeled.is_empty() {
            let batch: Vec<&UnlabeledItem> = (0..self.cfg.batch_unlabeled)
                .map(|_| {
                    &self.data.unlabeled[self.rng_unlabeled.gen_range(0..self.data.unlabeled.len())]
                })
                .collect();
            let (loss, grad, results, diag) = unsupervised_gradient(
                &self.model,
                &self.theta,
                &self.data.kb,
                self.cfg.objective,
                self.cfg.beam,
                &batch,
            )?;
            out.loss_unsup = Some(loss);
            out.grad_unsup = grad;
            out.unsup = results;
            out.diagnostics = diag;
        }
        Ok(out)
    }

    /// One SGD update.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let lambda = self.effective_lambda();
        let g = self.gradient()?;
        let (loss, grad) = g.combined(lambda);
        if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            let message = format!(
                "non-finite objective {loss} (supervised {}, unsupervised {:?}, lambda {lambda})",
                g.loss_sup, g.loss_unsup
            );
            log::error!(
                "step {}: {message}; masses {:?}",
                self.step,
                g.unsup
                    .iter()
                    .map(|r| (r.mass_se, r.mass_sn))
                    .collect::<Vec<_>>()
            );
            return Err(Error::Divergence {
                step: self.step,
                message,
            });
        }
        self.theta.add_scaled(&grad, -self.cfg.lr);
        if !self.theta.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                message: "parameters became non-finite".into(),
            });
        }
        self.diagnostics.merge(&g.diagnostics);
        self.step += 1;
        let skipped = g.unsup.iter().filter(|r| r.skipped).count();
        let last = self.step == self.cfg.max_steps;
        let dev_denotation_acc = (last || self.step.is_multiple_of(self.cfg.eval_every))
            .then(|| denotation_accuracy(&self.model, &self.theta, &self.data.dev, &self.data.kb));
        Ok(StepRecord {
            step: self.step,
            objective: self.cfg.label().to_string(),
            loss_sup: g.loss_sup,
            loss_unsup: g.loss_unsup,
            avg_ratio: self.diagnostics.avg_ratio().ok(),
            coverage: self.diagnostics.coverage().ok(),
            coverage_per_token: self.diagnostics.coverage_per_token().ok(),
            dev_denotation_acc,
            skipped,
            contributing: g.unsup.len() - skipped,
        })
    }
}

/// Outcome of [`run`].
#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: TrainConfig,
    pub model: Model,
    pub theta: ModelParams,
    pub records: Vec<StepRecord>,
    pub diagnostics: DiagnosticsAccumulator,
}

impl RunResult {
    pub fn final_dev_accuracy(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.dev_denotation_acc)
    }
}

/// Runs `max_steps` updates (warmup included) and returns the last
/// parameters. `on_step` sees every record as it is produced.
pub fn run(
    data: &TrainData,
    cfg: &TrainConfig,
    on_step: impl FnMut(&StepRecord),
) -> Result<RunResult> {
    finish(Trainer::new(data, cfg.clone())?, Vec::new(), on_step)
}

/// Continues `t` up to `max_steps`; `records` holds rows already produced
/// and is relabeled with the current objective.
pub fn finish(
    mut t: Trainer,
    mut records: Vec<StepRecord>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<RunResult> {
    let cfg = t.cfg.clone();
    for r in &mut records {
        r.objective = cfg.label().to_string();
    }
    while t.step < cfg.max_steps {
        let r = t.train_step()?;
        if r.step % 100 == 0 || r.step == cfg.max_steps {
            log::info!(
                "{} step {} sup {:.4} unsup {:?} dev {:?}",
                r.objective,
                r.step,
                r.loss_sup,
                r.loss_unsup,
                r.dev_denotation_acc
            );
        }
        on_step(&r);
        records.push(r);
    }
    Ok(RunResult {
        config: cfg,
        diagnostics: t.diagnostics,
        model: t.model,
        theta: t.theta,
        records,
    })
}

/// One finished run of [`compare_objectives`].
#[derive(Debug, Clone)]
pub struct ComparisonRun {
    /// `supervised` or an objective token.
    pub label: String,
    pub seed: u64,
    pub result: RunResult,
}

/// For each seed, trains `warmup_steps` supervised steps once and forks the
/// state into a supervised-only continuation plus one run per
/// `(objective, lambda)` pair, so all runs of a seed share their warmup.
pub fn compare_objectives(
    data: &TrainData,
    base: &TrainConfig,
    objectives: &[(Objective, f64)],
    seeds: &[u64],
    mut on_done: impl FnMut(&ComparisonRun),
) -> Result<Vec<ComparisonRun>> {
    let mut out = Vec::new();
    for &seed in seeds {
        let cfg = TrainConfig {
            seed,
            lambda: 0.0,
            ..base.clone()
        };
        let mut t = Trainer::new(data, cfg.clone())?;
        let mut prefix = Vec::with_capacity(cfg.max_steps);
        while t.step < cfg.warmup_steps.min(cfg.max_steps) {
            prefix.push(t.train_step()?);
        }
        let mut branches = vec![("supervised".to_string(), t.clone())];
        for &(o, lambda) in objectives {
            branches.push((o.token().to_string(), t.fork(o, lambda)?));
        }
        for (label, branch) in branches {
            let run = ComparisonRun {
                label,
                seed,
                result: finish(branch, prefix.clone(), |_| {})?,
            };
            on_done(&run);
            out.push(run);
        }
    }
    Ok(out)
}

/// Supervised-only updates for `warmup_steps` steps.
pub fn pretrain(data: &TrainData, cfg: &TrainConfig) -> Result<ModelParams> {
    let mut t = Trainer::new(data, cfg.clone())?;
    for _ in 0..cfg.warmup_steps {
        t.train_step()?;
    }
    Ok(t.theta)
}

/// Picks the `λ` from `grid` with the best final dev accuracy; ties keep the
/// earlier value.
pub fn tune_lambda(
    data: &TrainData,
    cfg: &TrainConfig,
    grid: &[f64],
) -> Result<(f64, Vec<(f64, f64)>)> {
    let mut scores = Vec::new();
    for &lambda in grid {
        let c = TrainConfig {
            lambda,
            ..cfg.clone()
        };
        let acc = run(data, &c, |_| {})?.final_dev_accuracy().unwrap_or(0.0);
        scores.push((lambda, acc));
    }
    let best = scores
        .iter()
        .fold(None::<(f64, f64)>, |best, &(l, a)| match best {
            Some((_, ba)) if ba >= a => best,
            _ => Some((l, a)),
        })
        .map(|(l, _)| l)
        .ok_or_else(|| Error::Config("empty lambda grid".into()))?;
    Ok((best, scores))
}
