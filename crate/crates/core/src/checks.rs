//! Independent numerical oracles: projection by bisection and by support
//! enumeration, central finite differences, exhaustive enumeration of small
//! program spaces and random feasible perturbations of soft labels.
//!
//! Each suite returns a [`SuiteReport`]; `xpr selfcheck` and the test suite
//! run the same code.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution, Normal};

use crate::error::Result;
use crate::executor::{KnowledgeBase, PropKind};
use crate::minilang::{ActionId, Literal};
use crate::model::{Model, ModelConfig, ModelParams, Utterance};
use crate::objectives::{kl_to_model, loss_reinforce, loss_top_k, q_top_k, sparsemax, Objective};
use crate::search::{beam_search, enumerate_scored, partition, SeenPartition};

/// Outcome of one oracle suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub violations: usize,
    /// Largest observed error for the suite's main comparison.
    pub worst: f64,
    pub tolerance: f64,
    pub elapsed: Duration,
    /// First few violation descriptions.
    pub details: Vec<String>,
}

impl SuiteReport {
    fn new(name: &'static str, tolerance: f64) -> Self {
        SuiteReport {
            name,
            cases: 0,
            violations: 0,
            worst: 0.0,
            tolerance,
            elapsed: Duration::ZERO,
            details: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.cases > 0
    }

    fn observe(&mut self, err: f64) {
        if err.is_nan() || err > self.worst {
            self.worst = if err.is_nan() { f64::INFINITY } else { err };
        }
    }

    fn fail(&mut self, detail: String) {
        self.violations += 1;
        if self.details.len() < 5 {
            self.details.push(detail);
        }
    }

    /// Records `err` and fails the case when it exceeds the tolerance.
    fn check(&mut self, err: f64, what: impl FnOnce() -> String) {
        self.observe(err);
        if err.is_nan() || err > self.tolerance {
            self.fail(format!("{} (error {err:.3e})", what()));
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} cases, {} violations, worst {:.3e} (tol {:.0e}), {:.2}s",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.violations,
            self.worst,
            self.tolerance,
            self.elapsed.as_secs_f64()
        )?;
        for d in &self.details {
            write!(f, "\n    {d}")?;
        }
        Ok(())
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(floor)
}

/// Simplex projection by bisection on the threshold `τ` solving
/// `Σ max(z − τ, 0) = 1`.
pub fn projection_bisection(z: &[f64]) -> Vec<f64> {
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (top - 1.0, top);
    let mass = |t: f64| z.iter().map(|v| (v - t).max(0.0)).sum::<f64>();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    z.iter().map(|v| (v - tau).max(0.0)).collect()
}

/// Simplex projection by trying every support set: for a support `S` the
/// optimum on its face is `z_i − τ_S` with `τ_S = (Σ_S z − 1)/|S|`; the
/// answer is the nearest feasible candidate. Exponential; small inputs only.
pub fn projection_by_support(z: &[f64]) -> Vec<f64> {
    assert!(z.len() <= 16, "support enumeration is exponential");
    let n = z.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let tau = (members.iter().map(|&i| z[i]).sum::<f64>() - 1.0) / members.len() as f64;
        let p: Vec<f64> = (0..n)
            .map(|i| {
                if mask & (1 << i) != 0 {
                    z[i] - tau
                } else {
                    0.0
                }
            })
            .collect();
        if p.iter().any(|v| *v < -1e-12) {
            continue;
        }
        let dist: f64 = p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, p));
        }
    }
    best.expect("some support is feasible").1
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let scale = *[0.1, 1.0, 5.0].choose(rng).expect("non-empty");
    let normal = Normal::new(0.0, scale).expect("valid");
    let mut z: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
    if rng.gen_bool(0.1) && dim > 1 {
        let i = rng.gen_range(1..dim);
        z[i] = z[0];
    }
    z
}

/// Simplex membership, shift invariance, order preservation and agreement
/// with the bisection oracle on random vectors of dimension 2 to 16.
pub fn sparsemax_suite(n: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut rep = SuiteReport::new("sparsemax", 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..n {
        let dim = rng.gen_range(2..=16);
        let z = random_vector(&mut rng, dim);
        let p = sparsemax(&z);
        rep.cases += 1;
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || p.iter().any(|v| *v < 0.0) {
            rep.fail(format!("case {case}: not on the simplex (sum {sum})"));
        }
        let c = rng.gen_range(-50.0..50.0);
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let ps = sparsemax(&shifted);
        if max_abs_diff(&p, &ps) > 1e-9 {
            rep.fail(format!("case {case}: shift by {c} moved the output"));
        }
        for i in 0..dim {
            for j in 0..dim {
                if z[i] >= z[j] && p[i] < p[j] {
                    rep.fail(format!("case {case}: order not preserved at ({i}, {j})"));
                }
            }
        }
        let oracle = projection_bisection(&z);
        rep.check(max_abs_diff(&p, &oracle), || {
            format!("case {case}: differs from bisection projection")
        });
        if dim <= 8 {
            let exact = projection_by_support(&z);
            rep.check(max_abs_diff(&p, &exact), || {
                format!("case {case}: differs from support enumeration")
            });
        }
    }
    rep.elapsed = start.elapsed();
    rep
}

/// A small random knowledge base, its model and one utterance.
#[derive(Debug, Clone)]
pub struct ToyInstance {
    pub kb: KnowledgeBase,
    pub model: Model,
    pub theta: ModelParams,
    pub x: Utterance,
}

impl ToyInstance {
    pub fn num_programs(&self) -> u128 {
        self.model.grammar().count_programs()
    }
}

/// One type with a numeric and a categorical property, three pool literals,
/// up to three entities. With two conjuncts the space has 342 programs.
pub fn random_toy(rng: &mut ChaCha8Rng, max_conjuncts: usize, scale: f64) -> ToyInstance {
    let mut kb = KnowledgeBase::new();
    kb.add_type("t").expect("fresh");
    kb.add_property("t", "n", PropKind::Numeric).expect("fresh");
    kb.add_property("t", "c", PropKind::Categorical)
        .expect("fresh");
    let nums = [Literal::Num(1), Literal::Num(2)];
    let cat = Literal::Cat("x".into());
    for l in nums.iter().chain([&cat]) {
        kb.add_vocab("t", l.clone()).expect("known type");
    }
    let rows = rng.gen_range(0..=3);
    for i in 0..rows {
        let id = format!("e{i}");
        kb.add_entity(&id, "t").expect("fresh");
        if rng.gen_bool(0.8) {
            kb.set_value(&id, "n", nums.choose(rng).expect("non-empty").clone())
                .expect("declared");
        }
        if rng.gen_bool(0.8) {
            kb.set_value(&id, "c", cat.clone()).expect("declared");
        }
    }
    let grammar = Arc::new(kb.grammar(max_conjuncts).expect("non-empty pool"));
    let vocab = rng.gen_range(3..=6);
    let embed = rng.gen_range(2..=3);
    let hidden = rng.gen_range(2..=4);
    let config = ModelConfig::new(vocab, grammar.num_actions()).with_dims(embed, hidden);
    let model = Model::new(config, grammar).expect("consistent");
    let theta = ModelParams::random(&config, rng, scale);
    let len = rng.gen_range(1..=5);
    let x = Utterance::new((0..len).map(|_| rng.gen_range(0..vocab)).collect(), vocab)
        .expect("in range");
    ToyInstance {
        kb,
        model,
        theta,
        x,
    }
}

fn perturbed(theta: &ModelParams, i: usize, h: f64) -> ModelParams {
    let mut t = theta.clone();
    t.as_mut_slice()[i] += h;
    t
}

/// Central differences of `f` at `theta` over `coords`.
pub fn central_differences(
    theta: &ModelParams,
    coords: &[usize],
    step: f64,
    mut f: impl FnMut(&ModelParams) -> f64,
) -> Vec<f64> {
    coords
        .iter()
        .map(|&i| (f(&perturbed(theta, i, step)) - f(&perturbed(theta, i, -step))) / (2.0 * step))
        .collect()
}

pub const FD_STEP: f64 = 1e-5;
/// Absolute floor in the relative-error denominator so that vanishing
/// gradients compare by absolute error.
pub const FD_FLOOR: f64 = 1e-6;

fn seen_logprobs(
    model: &Model,
    theta: &ModelParams,
    x: &Utterance,
    part: &SeenPartition,
) -> (Vec<f64>, Vec<f64>) {
    let enc = model.encode(theta, x);
    let lp = |items: &[crate::search::SeenItem]| -> Vec<f64> {
        items
            .iter()
            .map(|i| {
                model
                    .score(theta, &enc, &i.seq.actions)
                    .expect("legal")
                    .logprob
            })
            .collect()
    };
    (lp(&part.p_se), lp(&part.p_sn))
}

/// Analytic gradients of the supervised NLL, every unsupervised loss and
/// their combination against central differences, on random toy models.
pub fn gradient_suite(n: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rep = SuiteReport::new("gradients", 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..n {
        let scale = *[0.3, 1.0, 2.0].choose(&mut rng).expect("non-empty");
        let conj = rng.gen_range(1..=2);
        let toy = random_toy(&mut rng, conj, scale);
        let model = &toy.model;
        let seqs = model.grammar().enumerate_sequences(10_000)?;
        let gold = seqs.choose(&mut rng).expect("non-empty").clone();
        let k = rng.gen_range(2..=8);
        let enc = model.encode(&toy.theta, &toy.x);
        let beam = beam_search(model, &toy.theta, &enc, k);
        let part = partition(&beam, model.grammar(), &toy.kb)?;
        let lambda = rng.gen_range(0.1..2.0);

        let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
        let (g_sup, _) = model.grad_weighted(&toy.theta, &toy.x, &[(gold.as_slice(), -1.0)])?;
        analytic.push(("supervised".into(), g_sup.clone()));
        let results: Vec<_> = Objective::ALL.iter().map(|o| o.loss(&part)).collect();
        for r in &results {
            let (g, _) = model.grad_weighted(&toy.theta, &toy.x, &r.grad_pairs(&part))?;
            analytic.push((r.objective.token().into(), g.clone()));
            let combined: Vec<f64> = g_sup.iter().zip(&g).map(|(s, u)| s + lambda * u).collect();
            analytic.push((format!("supervised+{}", r.objective), combined));
        }

        let coords: Vec<usize> = (0..toy.theta.len()).collect();
        let mut numeric: Vec<Vec<f64>> = vec![Vec::with_capacity(coords.len()); analytic.len()];
        for &i in &coords {
            let at = |h: f64| -> Result<Vec<f64>> {
                let t = perturbed(&toy.theta, i, h);
                let sup = -model.log_prob_actions(&t, &toy.x, &gold)?;
                let (se, sn) = seen_logprobs(model, &t, &toy.x, &part);
                let mut v = vec![sup];
                for r in &results {
                    let u = r.surrogate(&se, &sn);
                    v.push(u);
                    v.push(sup + lambda * u);
                }
                Ok(v)
            };
            let plus = at(FD_STEP)?;
            let minus = at(-FD_STEP)?;
            for (j, (p, m)) in plus.iter().zip(&minus).enumerate() {
                numeric[j].push((p - m) / (2.0 * FD_STEP));
            }
        }
        for ((name, a), num) in analytic.iter().zip(&numeric) {
            rep.cases += 1;
            let err = relative_error(a, num, FD_FLOOR);
            rep.check(err, || format!("case {case}: {name}"));
        }
    }
    rep.elapsed = start.elapsed();
    Ok(rep)
}

fn enumerable_toy(rng: &mut ChaCha8Rng) -> ToyInstance {
    loop {
        let scale = *[0.3, 1.0, 2.0].choose(rng).expect("non-empty");
        let conj = rng.gen_range(1..=2);
        let toy = random_toy(rng, conj, scale);
        if toy.kb.entities().iter().any(|e| e.values.len() == 2) {
            return toy;
        }
    }
}

fn sample_coords(rng: &mut ChaCha8Rng, len: usize, n: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    all.shuffle(rng);
    all.truncate(n);
    all.sort_unstable();
    all
}

fn executable_mass(toy: &ToyInstance, theta: &ModelParams) -> Result<f64> {
    crate::search::exact_executable_mass(&toy.model, theta, &toy.x, &toy.kb, 10_000)
}

/// Sum of per-program gradients `Σ_y w_y ∇ log p(y)`, one backward pass each.
fn per_program_sum(toy: &ToyInstance, weighted: &[(&[ActionId], f64)]) -> Result<Vec<f64>> {
    let mut total = vec![0.0; toy.theta.len()];
    for (seq, w) in weighted {
        let (g, _) = toy
            .model
            .grad_weighted(&toy.theta, &toy.x, &[(*seq, 1.0)])?;
        for (t, v) in total.iter_mut().zip(g) {
            *t += w * v;
        }
    }
    Ok(total)
}

/// Full-width beams on enumerable grammars: the top-k gradient equals the
/// `q_top_k`-weighted sum of per-program gradients, and the top-k loss
/// equals the exact negative log executable mass.
pub fn em_mml_suite(n: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rep = SuiteReport::new("em-mml", 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..n {
        let toy = enumerable_toy(&mut rng);
        let size = toy.num_programs() as usize;
        let enc = toy.model.encode(&toy.theta, &toy.x);
        let beam = beam_search(&toy.model, &toy.theta, &enc, size);
        let part = partition(&beam, toy.model.grammar(), &toy.kb)?;
        rep.cases += 1;
        if beam.len() != size {
            rep.fail(format!(
                "case {case}: full-width beam kept {} of {size}",
                beam.len()
            ));
            continue;
        }
        let exact = executable_mass(&toy, &toy.theta)?;
        let topk = loss_top_k(&part);
        let loss_err = (topk.loss + exact.ln()).abs();
        rep.observe(loss_err);
        if loss_err > 1e-9 {
            rep.fail(format!(
                "case {case}: top-k loss {} vs exact {} ",
                topk.loss,
                -exact.ln()
            ));
        }

        let (g_loss, _) = toy
            .model
            .grad_weighted(&toy.theta, &toy.x, &topk.grad_pairs(&part))?;
        let q = q_top_k(&part).expect("executable mass is positive");
        let weighted: Vec<(&[ActionId], f64)> = part
            .p_se
            .iter()
            .zip(&q.support)
            .map(|(i, (_, w))| (i.seq.actions.as_slice(), -w))
            .collect();
        let g_em = per_program_sum(&toy, &weighted)?;
        rep.check(max_abs_diff(&g_loss, &g_em), || {
            format!("case {case}: loss gradient vs q-weighted sum")
        });

        let coords = sample_coords(&mut rng, toy.theta.len(), 24);
        let fd = central_differences(&toy.theta, &coords, FD_STEP, |t| {
            -executable_mass(&toy, t).expect("enumerable").ln()
        });
        let picked: Vec<f64> = coords.iter().map(|&i| g_em[i]).collect();
        rep.check(max_abs_diff(&picked, &fd), || {
            format!("case {case}: q-weighted sum vs differences of exact loss")
        });
    }
    rep.elapsed = start.elapsed();
    Ok(rep)
}

/// The renormalized model distribution over executable programs has the
/// smallest `KL(q ‖ p)` among random feasible distributions.
pub fn kkt_suite(instances: usize, perturbations: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rep = SuiteReport::new("kkt", 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..instances {
        let toy = enumerable_toy(&mut rng);
        let enc = toy.model.encode(&toy.theta, &toy.x);
        let all = enumerate_scored(&toy.model, &toy.theta, &enc, 10_000)?;
        let mut logp = Vec::new();
        for s in &all {
            if toy
                .kb
                .reward(&toy.model.grammar().decode(&s.actions)?)
                .is_one()
            {
                logp.push(s.logprob);
            }
        }
        let log_mass = crate::objectives::log_sum_exp(&logp);
        let q_star: Vec<f64> = logp.iter().map(|l| (l - log_mass).exp()).collect();
        let kl_star = kl_to_model(&q_star, &logp);
        if (kl_star + log_mass).abs() > 1e-9 {
            rep.fail(format!(
                "case {case}: KL at the optimum {kl_star} is not −log mass {}",
                -log_mass
            ));
        }
        for _ in 0..perturbations {
            rep.cases += 1;
            let t: f64 = rng.gen_range(0.0..=1.0);
            let d: Vec<f64> = if logp.len() == 1 {
                vec![1.0]
            } else {
                let alpha = *[0.1, 1.0, 10.0].choose(&mut rng).expect("non-empty");
                Dirichlet::new_with_size(alpha, logp.len())
                    .expect("valid")
                    .sample(&mut rng)
            };
            let q: Vec<f64> = q_star
                .iter()
                .zip(&d)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect();
            let kl = kl_to_model(&q, &logp);
            let gap = kl_star - kl;
            rep.check(gap.max(0.0), || {
                format!("case {case}: perturbation beats the optimum by {gap:.3e}")
            });
        }
    }
    rep.elapsed = start.elapsed();
    Ok(rep)
}

/// The exact gradient of expected reward is `Σ p R ∇ log p`, and the
/// renormalized REINFORCE weights are the top-k soft label.
pub fn rl_mml_suite(n: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rep = SuiteReport::new("rl-mml", 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..n {
        let toy = enumerable_toy(&mut rng);
        let size = toy.num_programs() as usize;
        let enc = toy.model.encode(&toy.theta, &toy.x);
        let full = beam_search(&toy.model, &toy.theta, &enc, size);
        let part = partition(&full, toy.model.grammar(), &toy.kb)?;
        rep.cases += 1;

        let weighted: Vec<(&[ActionId], f64)> = part
            .p_se
            .iter()
            .map(|i| (i.seq.actions.as_slice(), i.prob()))
            .collect();
        let g_rl = per_program_sum(&toy, &weighted)?;
        let coords = sample_coords(&mut rng, toy.theta.len(), 24);
        let fd = central_differences(&toy.theta, &coords, FD_STEP, |t| {
            executable_mass(&toy, t).expect("enumerable")
        });
        let picked: Vec<f64> = coords.iter().map(|&i| g_rl[i]).collect();
        rep.check(max_abs_diff(&picked, &fd), || {
            format!("case {case}: Σ pR∇log p vs differences of J")
        });

        let rl = loss_reinforce(&part);
        let (g_loss, _) = toy
            .model
            .grad_weighted(&toy.theta, &toy.x, &rl.grad_pairs(&part))?;
        let neg: Vec<f64> = g_rl.iter().map(|v| -v).collect();
        rep.check(max_abs_diff(&g_loss, &neg), || {
            format!("case {case}: REINFORCE loss gradient")
        });

        let q_rl: Vec<f64> = part.p_se.iter().map(|i| i.prob()).collect();
        let z: f64 = q_rl.iter().sum();
        let q_mml = q_top_k(&part).expect("executable mass is positive");
        let err = q_rl
            .iter()
            .zip(&q_mml.support)
            .map(|(a, (_, b))| (a / z - b).abs())
            .fold(0.0, f64::max);
        rep.check(err, || format!("case {case}: renormalized q_RL vs q_MML"));
    }
    rep.elapsed = start.elapsed();
    Ok(rep)
}

/// Partition invariants on random beams, plus whether the top beam item is
/// the same for widths 1, 4 and 16.
pub fn beam_suite(n: usize, seed: u64) -> Result<(SuiteReport, SuiteReport)> {
    let start = Instant::now();
    let mut inv = SuiteReport::new("partition", 1e-9);
    let mut top = SuiteReport::new("beam-top1", 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..n {
        let scale = *[0.1, 1.0, 3.0].choose(&mut rng).expect("non-empty");
        let conj = rng.gen_range(1..=2);
        let toy = random_toy(&mut rng, conj, scale);
        let enc = toy.model.encode(&toy.theta, &toy.x);
        let k = rng.gen_range(1..=20);
        let beam = beam_search(&toy.model, &toy.theta, &enc, k);
        let part = partition(&beam, toy.model.grammar(), &toy.kb)?;
        inv.cases += 1;
        if part.len() != beam.len() {
            inv.fail(format!("case {case}: partition lost items"));
        }
        for s in &beam {
            let in_se = part
                .p_se
                .iter()
                .filter(|i| i.seq.actions == s.actions)
                .count();
            let in_sn = part
                .p_sn
                .iter()
                .filter(|i| i.seq.actions == s.actions)
                .count();
            if in_se + in_sn != 1 {
                inv.fail(format!("case {case}: item in {in_se} + {in_sn} lists"));
            }
        }
        for i in &part.p_se {
            if !toy.kb.reward(&i.program).is_one() {
                inv.fail(format!("case {case}: non-executable program in P_SE"));
            }
        }
        for i in &part.p_sn {
            if toy.kb.reward(&i.program).is_one() {
                inv.fail(format!("case {case}: executable program in P_SN"));
            }
        }
        let (se, sn) = (part.mass_se(), part.mass_sn());
        if !(0.0..=1.0).contains(&se) || !(0.0..=1.0).contains(&sn) {
            inv.fail(format!("case {case}: masses {se} {sn} outside [0, 1]"));
        }
        inv.check((se + sn - 1.0).max(0.0), || {
            format!("case {case}: masses sum above one")
        });

        top.cases += 1;
        let firsts: Vec<Vec<ActionId>> = [1, 4, 16]
            .iter()
            .map(|&w| {
                beam_search(&toy.model, &toy.theta, &enc, w)[0]
                    .actions
                    .clone()
            })
            .collect();
        if firsts[0] != firsts[1] || firsts[1] != firsts[2] {
            top.observe(1.0);
            top.fail(format!("case {case}: top-1 differs across widths 1/4/16"));
        }
    }
    inv.elapsed = start.elapsed();
    top.elapsed = inv.elapsed;
    Ok((inv, top))
}

/// The pass/fail suites at the sizes used by `xpr selfcheck`. Top-1
/// stability across widths is a property of the model, not of the code, so
/// it is left to [`beam_suite`] callers.
pub fn selfcheck(seed: u64) -> Result<Vec<SuiteReport>> {
    let (partition, _) = beam_suite(1000, seed)?;
    Ok(vec![
        sparsemax_suite(10_000, seed),
        gradient_suite(100, seed)?,
        em_mml_suite(50, seed)?,
        kkt_suite(20, 1000, seed)?,
        rl_mml_suite(20, seed)?,
        partition,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracles_agree_with_each_other() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let dim = rng.gen_range(1..=7);
            let z = random_vector(&mut rng, dim);
            assert!(max_abs_diff(&projection_bisection(&z), &projection_by_support(&z)) < 1e-9);
        }
        assert!(max_abs_diff(&projection_by_support(&[0.7, 0.3, -1.0]), &[0.7, 0.3, 0.0]) < 1e-12);
    }

    #[test]
    fn toy_space_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let t = random_toy(&mut rng, 2, 1.0);
            assert_eq!(t.num_programs(), 342);
            assert!(t.theta.len() <= 500);
        }
    }

    #[test]
    fn small_suites_pass() {
        for rep in [
            sparsemax_suite(300, 3),
            gradient_suite(3, 3).unwrap(),
            em_mml_suite(2, 3).unwrap(),
            kkt_suite(2, 50, 3).unwrap(),
            rl_mml_suite(2, 3).unwrap(),
            beam_suite(20, 3).unwrap().0,
        ] {
            assert!(rep.passed(), "{rep}");
        }
    }
}
