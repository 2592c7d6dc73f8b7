//! Beam search over grammar actions and the seen-set partition.

use std::cmp::Ordering;

use crate::error::Result;
use crate::executor::{KnowledgeBase, Reward};
use crate::minilang::{cmp_sequences, ActionId, Grammar, GrammarState, Program};
use crate::model::{DecoderState, Encoded, Model, ModelParams, ScoredSequence, Utterance};

pub const DEFAULT_BEAM: usize = 16;

#[derive(Debug, Clone)]
struct Hyp {
    actions: Vec<ActionId>,
    logprob: f64,
    steps: Vec<f64>,
    state: DecoderState,
}

impl Hyp {
    fn finished(&self) -> bool {
        self.state.grammar == GrammarState::Done
    }
}

struct Cand {
    parent: usize,
    action: Option<ActionId>,
    step: f64,
    logprob: f64,
    key: Vec<ActionId>,
}

/// Descending score, then ascending action ids.
pub fn rank(a_lp: f64, a: &[ActionId], b_lp: f64, b: &[ActionId]) -> Ordering {
    b_lp.partial_cmp(&a_lp)
        .unwrap_or(Ordering::Equal)
        .then_with(|| cmp_sequences(a, b))
}

/// Standard per-step beam search. Finished hypotheses stay in the beam and
/// compete with expansions; the search ends when every kept hypothesis is
/// finished. Scores are unnormalized sums of step log-probabilities.
pub fn beam_search(
    model: &Model,
    theta: &ModelParams,
    enc: &Encoded,
    k: usize,
) -> Vec<ScoredSequence> {
    assert!(k >= 1, "beam size must be positive");
    let mut beam = vec![Hyp {
        actions: Vec::new(),
        logprob: 0.0,
        steps: Vec::new(),
        state: model.initial_state(theta, enc),
    }];
    let grammar = model.grammar();
    while beam.iter().any(|h| !h.finished()) {
        let mut cands = Vec::new();
        for (i, h) in beam.iter().enumerate() {
            if h.finished() {
                cands.push(Cand {
                    parent: i,
                    action: None,
                    step: 0.0,
                    logprob: h.logprob,
                    key: h.actions.clone(),
                });
                continue;
            }
            let legal = grammar.legal_actions(&h.state.grammar);
            let lps = model.legal_log_probs(theta, enc, &h.state);
            for (&a, lp) in legal.iter().zip(lps) {
                let mut key = h.actions.clone();
                key.push(a);
                cands.push(Cand {
                    parent: i,
                    action: Some(a),
                    step: lp,
                    logprob: h.logprob + lp,
                    key,
                });
            }
        }
        cands.sort_by(|a, b| rank(a.logprob, &a.key, b.logprob, &b.key));
        cands.truncate(k);
        beam = cands
            .into_iter()
            .map(|c| {
                let parent = &beam[c.parent];
                match c.action {
                    None => parent.clone(),
                    Some(a) => {
                        let mut steps = parent.steps.clone();
                        steps.push(c.step);
                        Hyp {
                            state: model
                                .advance(theta, &parent.state, a)
                                .expect("legal expansion"),
                            actions: c.key,
                            logprob: c.logprob,
                            steps,
                        }
                    }
                }
            })
            .collect();
    }
    beam.into_iter()
        .map(|h| ScoredSequence {
            actions: h.actions,
            logprob: h.logprob,
            step_logprobs: h.steps,
        })
        .collect()
}

/// Highest-probability action at every step.
pub fn greedy(model: &Model, theta: &ModelParams, enc: &Encoded) -> ScoredSequence {
    let mut state = model.initial_state(theta, enc);
    let mut actions = Vec::new();
    let mut steps = Vec::new();
    while state.grammar != GrammarState::Done {
        let legal = model.grammar().legal_actions(&state.grammar);
        let lps = model.legal_log_probs(theta, enc, &state);
        let mut best = 0;
        for i in 1..lps.len() {
            if lps[i] > lps[best] {
                best = i;
            }
        }
        actions.push(legal[best]);
        steps.push(lps[best]);
        state = model
            .advance(theta, &state, legal[best])
            .expect("legal action");
    }
    ScoredSequence {
        logprob: steps.iter().sum(),
        actions,
        step_logprobs: steps,
    }
}

/// Every program in the space with its exact score, in beam order.
pub fn enumerate_scored(
    model: &Model,
    theta: &ModelParams,
    enc: &Encoded,
    bound: usize,
) -> Result<Vec<ScoredSequence>> {
    let mut out = model
        .grammar()
        .enumerate_sequences(bound)?
        .iter()
        .map(|s| model.score(theta, enc, s))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| rank(a.logprob, &a.actions, b.logprob, &b.actions));
    Ok(out)
}

/// A beam item with its decoded program.
#[derive(Debug, Clone, PartialEq)]
pub struct SeenItem {
    pub program: Program,
    pub seq: ScoredSequence,
}

impl SeenItem {
    pub fn logprob(&self) -> f64 {
        self.seq.logprob
    }

    pub fn prob(&self) -> f64 {
        self.seq.logprob.exp()
    }
}

/// Seen set split by executability. Lists keep beam order.
#[derive(Debug, Clone, PartialEq)]
pub struct SeenPartition {
    pub p_se: Vec<SeenItem>,
    pub p_sn: Vec<SeenItem>,
    pub log_mass_se: f64,
    pub log_mass_sn: f64,
}

impl SeenPartition {
    pub fn from_parts(p_se: Vec<SeenItem>, p_sn: Vec<SeenItem>) -> Self {
        let lse = |items: &[SeenItem]| {
            let lps: Vec<f64> = items.iter().map(|i| i.logprob()).collect();
            crate::objectives::log_sum_exp(&lps)
        };
        SeenPartition {
            log_mass_se: lse(&p_se),
            log_mass_sn: lse(&p_sn),
            p_se,
            p_sn,
        }
    }

    /// Clamped to 1 against rounding in the log-sum-exp.
    pub fn mass_se(&self) -> f64 {
        self.log_mass_se.exp().min(1.0)
    }

    pub fn mass_sn(&self) -> f64 {
        self.log_mass_sn.exp().min(1.0)
    }

    pub fn residual(&self) -> f64 {
        1.0 - self.mass_se() - self.mass_sn()
    }

    pub fn len(&self) -> usize {
        self.p_se.len() + self.p_sn.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains_se(&self, p: &Program) -> bool {
        self.p_se.iter().any(|i| &i.program == p)
    }
}

/// Splits `beam` with an arbitrary reward.
pub fn partition_by(
    beam: &[ScoredSequence],
    grammar: &Grammar,
    mut reward: impl FnMut(&Program) -> Reward,
) -> Result<SeenPartition> {
    let mut se = Vec::new();
    let mut sn = Vec::new();
    for seq in beam {
        let program = grammar.decode(&seq.actions)?;
        let item = SeenItem {
            seq: seq.clone(),
            program,
        };
        if reward(&item.program).is_one() {
            se.push(item);
        } else {
            sn.push(item);
        }
    }
    Ok(SeenPartition::from_parts(se, sn))
}

pub fn partition(
    beam: &[ScoredSequence],
    grammar: &Grammar,
    kb: &KnowledgeBase,
) -> Result<SeenPartition> {
    partition_by(beam, grammar, |p| kb.reward(p))
}

/// `Σ_y R(y) p(y | x, θ)` over the whole program space.
pub fn exact_executable_mass(
    model: &Model,
    theta: &ModelParams,
    x: &Utterance,
    kb: &KnowledgeBase,
    bound: usize,
) -> Result<f64> {
    let enc = model.encode(theta, x);
    let all = enumerate_scored(model, theta, &enc, bound)?;
    let mut total = 0.0;
    for s in &all {
        if kb.reward(&model.grammar().decode(&s.actions)?).is_one() {
            total += s.logprob.exp();
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn fixture(seed: u64, scale: f64) -> (Model, ModelParams, Utterance, KnowledgeBase) {
        let kb = KnowledgeBase::parse(
            "!type r\n!prop r stars numeric\n!prop r cuisine categorical\n\
             !vocab r 2\n\
             a type r\na stars 3\na cuisine thai\n\
             b type r\nb stars 5\nb cuisine italian\n",
        )
        .unwrap();
        let g = Arc::new(kb.grammar(1).unwrap());
        let c = ModelConfig::new(5, g.num_actions()).with_dims(3, 4);
        let m = Model::new(c, g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = ModelParams::random(&c, &mut rng, scale);
        (m, theta, Utterance::new(vec![1, 2, 4], 5).unwrap(), kb)
    }

    #[test]
    fn full_width_beam_is_the_enumeration() {
        for seed in 0..10 {
            let (m, theta, x, _) = fixture(seed, 2.0);
            let enc = m.encode(&theta, &x);
            let all = enumerate_scored(&m, &theta, &enc, 10_000).unwrap();
            let beam = beam_search(&m, &theta, &enc, all.len());
            assert_eq!(beam.len(), all.len());
            for (a, b) in beam.iter().zip(&all) {
                assert_eq!(a.actions, b.actions);
                assert!((a.logprob - b.logprob).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn width_one_is_greedy() {
        for seed in 0..10 {
            let (m, theta, x, _) = fixture(seed, 2.0);
            let enc = m.encode(&theta, &x);
            let b = beam_search(&m, &theta, &enc, 1);
            assert_eq!(b.len(), 1);
            assert_eq!(b[0], greedy(&m, &theta, &enc));
        }
    }

    #[test]
    fn beam_is_sorted_and_scores_are_exact() {
        let (m, theta, x, _) = fixture(3, 1.0);
        let enc = m.encode(&theta, &x);
        let b = beam_search(&m, &theta, &enc, 5);
        assert_eq!(b.len(), 5);
        for w in b.windows(2) {
            assert_ne!(
                rank(w[0].logprob, &w[0].actions, w[1].logprob, &w[1].actions),
                Ordering::Greater
            );
        }
        for s in &b {
            assert!((m.score(&theta, &enc, &s.actions).unwrap().logprob - s.logprob).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_model_takes_lexicographically_smallest() {
        // one conjunct: every program has the same branching, so all scores tie
        let (m, _, x, _) = fixture(0, 1.0);
        let theta = ModelParams::zeros(m.config());
        let enc = m.encode(&theta, &x);
        let seqs = m.grammar().enumerate_sequences(10_000).unwrap();
        let b = beam_search(&m, &theta, &enc, 4);
        let got: Vec<_> = b.iter().map(|s| s.actions.clone()).collect();
        assert_eq!(got, seqs[..4].to_vec());
    }

    #[test]
    fn partition_masses_on_full_beam() {
        let (m, theta, x, kb) = fixture(5, 1.5);
        let enc = m.encode(&theta, &x);
        let all = enumerate_scored(&m, &theta, &enc, 10_000).unwrap();
        let part = partition(&all, m.grammar(), &kb).unwrap();
        assert_eq!(part.len(), all.len());
        assert!((part.mass_se() + part.mass_sn() - 1.0).abs() < 1e-9);
        for i in &part.p_se {
            assert!(kb.reward(&i.program).is_one());
        }
        for i in &part.p_sn {
            assert!(!kb.reward(&i.program).is_one());
        }
        let exact = exact_executable_mass(&m, &theta, &x, &kb, 10_000).unwrap();
        assert!((exact - part.mass_se()).abs() < 1e-12);
    }

    #[test]
    fn gold_and_type_error_split() {
        let (m, _, _, kb) = fixture(0, 0.1);
        let gold = crate::minilang::parse("select r where cuisine = thai").unwrap();
        let bad = crate::minilang::parse("select r where cuisine > thai").unwrap();
        let beam: Vec<ScoredSequence> = [&gold, &bad]
            .iter()
            .map(|p| ScoredSequence {
                actions: m.grammar().actions(p).unwrap(),
                logprob: -1.0,
                step_logprobs: vec![],
            })
            .collect();
        let part = partition(&beam, m.grammar(), &kb).unwrap();
        assert_eq!(part.p_se.len(), 1);
        assert_eq!(part.p_se[0].program, gold);
        assert_eq!(part.p_sn[0].program, bad);
    }

    #[test]
    fn empty_kb_has_no_executable_mass() {
        let (m, theta, x, _) = fixture(1, 1.0);
        let kb = KnowledgeBase::parse(
            "!type r\n!prop r stars numeric\n!prop r cuisine categorical\n\
             !vocab r 2 3 5 thai italian\n",
        )
        .unwrap();
        assert_eq!(
            exact_executable_mass(&m, &theta, &x, &kb, 10_000).unwrap(),
            0.0
        );
    }
}
