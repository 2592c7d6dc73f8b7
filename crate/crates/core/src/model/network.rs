use std::sync::Arc;

use super::linalg::{axpy, dot, log_sum_exp, matvec_acc, matvec_t_acc, outer_acc};
use super::{Layout, ModelConfig, ModelParams, Utterance};
use crate::error::{Error, Result};
use crate::minilang::{ActionId, Grammar, GrammarState, Program};

/// Encoder output for one utterance.
#[derive(Debug, Clone)]
pub struct Encoded {
    tokens: Vec<usize>,
    /// `len × hidden`, row t is h_t.
    states: Vec<f64>,
    /// `len × hidden`, row t is `att_wh · h_t`.
    keys: Vec<f64>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Decoder hidden state plus grammar position.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub hidden: Vec<f64>,
    pub grammar: GrammarState,
}

/// A complete action sequence with its score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSequence {
    pub actions: Vec<ActionId>,
    pub logprob: f64,
    pub step_logprobs: Vec<f64>,
}

#[derive(Debug, Clone)]
struct StepCache {
    prev_row: usize,
    s_prev: Vec<f64>,
    s: Vec<f64>,
    /// `len × hidden` attention activations.
    z: Vec<f64>,
    alpha: Vec<f64>,
    context: Vec<f64>,
    legal: Vec<ActionId>,
    probs: Vec<f64>,
    chosen: usize,
}

/// The scorer. Parameters are passed explicitly so one model can score many
/// parameter vectors (finite differences, checkpoints).
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    grammar: Arc<Grammar>,
}

impl Model {
    pub fn new(config: ModelConfig, grammar: Arc<Grammar>) -> Result<Self> {
        config.validate()?;
        if config.num_actions != grammar.num_actions() {
            return Err(Error::Config(format!(
                "config has {} actions, grammar has {}",
                config.num_actions,
                grammar.num_actions()
            )));
        }
        Ok(Model {
            layout: config.layout(),
            config,
            grammar,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn grammar_arc(&self) -> &Arc<Grammar> {
        &self.grammar
    }

    fn check(&self, theta: &ModelParams) {
        assert_eq!(
            theta.len(),
            self.layout.total,
            "parameter vector does not match model config"
        );
    }

    pub fn encode(&self, theta: &ModelParams, x: &Utterance) -> Encoded {
        self.check(theta);
        let p = theta.as_slice();
        let l = &self.layout;
        let (e, h) = (self.config.embed_dim, self.config.hidden_dim);
        assert!(x.tokens().iter().all(|&t| t < self.config.vocab_size));
        let n = x.len();
        let mut states = vec![0.0; n * h];
        let mut prev = vec![0.0; h];
        for (t, &tok) in x.tokens().iter().enumerate() {
            let emb = &p[l.tok_emb.start + tok * e..l.tok_emb.start + (tok + 1) * e];
            let mut pre = p[l.enc_b.clone()].to_vec();
            matvec_acc(&mut pre, &p[l.enc_wx.clone()], emb);
            matvec_acc(&mut pre, &p[l.enc_wh.clone()], &prev);
            let row = &mut states[t * h..(t + 1) * h];
            for (r, v) in row.iter_mut().zip(&pre) {
                *r = v.tanh();
            }
            prev.copy_from_slice(row);
        }
        let mut keys = vec![0.0; n * h];
        for t in 0..n {
            matvec_acc(
                &mut keys[t * h..(t + 1) * h],
                &p[l.att_wh.clone()],
                &states[t * h..(t + 1) * h],
            );
        }
        Encoded {
            tokens: x.tokens().to_vec(),
            states,
            keys,
        }
    }

    fn decoder_cell(&self, p: &[f64], row: usize, s_prev: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let e = self.config.embed_dim;
        let emb = &p[l.act_emb.start + row * e..l.act_emb.start + (row + 1) * e];
        let mut pre = p[l.dec_b.clone()].to_vec();
        matvec_acc(&mut pre, &p[l.dec_wa.clone()], emb);
        matvec_acc(&mut pre, &p[l.dec_ws.clone()], s_prev);
        pre.iter_mut().for_each(|v| *v = v.tanh());
        pre
    }

    fn bos_row(&self) -> usize {
        self.config.num_actions
    }

    /// State before the first action.
    pub fn initial_state(&self, theta: &ModelParams, enc: &Encoded) -> DecoderState {
        self.check(theta);
        let h = self.config.hidden_dim;
        let n = enc.len();
        let last = &enc.states[(n - 1) * h..n * h];
        DecoderState {
            hidden: self.decoder_cell(theta.as_slice(), self.bos_row(), last),
            grammar: GrammarState::ExpectType,
        }
    }

    /// Consumes `action`; `None` if the grammar forbids it here.
    pub fn advance(
        &self,
        theta: &ModelParams,
        state: &DecoderState,
        action: ActionId,
    ) -> Option<DecoderState> {
        let next = self.grammar.transition(&state.grammar, action)?;
        let hidden = if next == GrammarState::Done {
            Vec::new()
        } else {
            self.decoder_cell(theta.as_slice(), action, &state.hidden)
        };
        Some(DecoderState {
            hidden,
            grammar: next,
        })
    }

    /// Log-probabilities of the legal actions at `state`, in the order of
    /// `grammar.legal_actions(&state.grammar)`.
    pub fn legal_log_probs(
        &self,
        theta: &ModelParams,
        enc: &Encoded,
        state: &DecoderState,
    ) -> Vec<f64> {
        self.check(theta);
        let legal = self.grammar.legal_actions(&state.grammar);
        self.scores(theta.as_slice(), enc, &state.hidden, legal, None)
    }

    /// Full next-action log-distribution: `-inf` on masked actions.
    pub fn step(&self, theta: &ModelParams, enc: &Encoded, state: &DecoderState) -> Vec<f64> {
        let mut out = vec![f64::NEG_INFINITY; self.config.num_actions];
        let legal = self.grammar.legal_actions(&state.grammar);
        for (a, lp) in legal.iter().zip(self.legal_log_probs(theta, enc, state)) {
            out[*a] = lp;
        }
        out
    }

    fn scores(
        &self,
        p: &[f64],
        enc: &Encoded,
        s: &[f64],
        legal: &[ActionId],
        cache: Option<&mut StepCache>,
    ) -> Vec<f64> {
        let l = &self.layout;
        let h = self.config.hidden_dim;
        let n = enc.len();
        let mut q = vec![0.0; h];
        matvec_acc(&mut q, &p[l.att_ws.clone()], s);
        let v = &p[l.att_v.clone()];
        let mut z = vec![0.0; n * h];
        let mut u = vec![0.0; n];
        for j in 0..n {
            let zj = &mut z[j * h..(j + 1) * h];
            for ((zz, k), qq) in zj.iter_mut().zip(&enc.keys[j * h..(j + 1) * h]).zip(&q) {
                *zz = (k + qq).tanh();
            }
            u[j] = dot(v, zj);
        }
        let lse = log_sum_exp(&u);
        let alpha: Vec<f64> = u.iter().map(|x| (x - lse).exp()).collect();
        let mut context = vec![0.0; h];
        for j in 0..n {
            axpy(&mut context, alpha[j], &enc.states[j * h..(j + 1) * h]);
        }
        let ow = &p[l.out_w.clone()];
        let ob = &p[l.out_b.clone()];
        let logits: Vec<f64> = legal
            .iter()
            .map(|&a| {
                let row = &ow[a * 2 * h..(a + 1) * 2 * h];
                ob[a] + dot(&row[..h], s) + dot(&row[h..], &context)
            })
            .collect();
        let norm = log_sum_exp(&logits);
        let logp: Vec<f64> = logits.iter().map(|x| x - norm).collect();
        if let Some(c) = cache {
            c.z = z;
            c.alpha = alpha;
            c.context = context;
            c.legal = legal.to_vec();
            c.probs = logp.iter().map(|x| x.exp()).collect();
        }
        logp
    }

    fn forward(
        &self,
        p: &[f64],
        enc: &Encoded,
        seq: &[ActionId],
        want_cache: bool,
    ) -> Result<(ScoredSequence, Vec<StepCache>)> {
        let h = self.config.hidden_dim;
        let n = enc.len();
        let mut s_prev = enc.states[(n - 1) * h..n * h].to_vec();
        let mut row = self.bos_row();
        let mut state = GrammarState::ExpectType;
        let mut caches = Vec::with_capacity(if want_cache { seq.len() } else { 0 });
        let mut steps = Vec::with_capacity(seq.len());
        for (t, &a) in seq.iter().enumerate() {
            let legal = self.grammar.legal_actions(&state);
            let chosen = legal
                .binary_search(&a)
                .map_err(|_| Error::IllegalAction { step: t, action: a })?;
            let s = self.decoder_cell(p, row, &s_prev);
            let lp = if want_cache {
                let mut c = StepCache {
                    prev_row: row,
                    s_prev: std::mem::take(&mut s_prev),
                    s: s.clone(),
                    z: Vec::new(),
                    alpha: Vec::new(),
                    context: Vec::new(),
                    legal: Vec::new(),
                    probs: Vec::new(),
                    chosen,
                };
                let lp = self.scores(p, enc, &s, legal, Some(&mut c))[chosen];
                caches.push(c);
                lp
            } else {
                self.scores(p, enc, &s, legal, None)[chosen]
            };
            steps.push(lp);
            state = self.grammar.transition(&state, a).expect("checked legal");
            row = a;
            s_prev = s;
        }
        if state != GrammarState::Done {
            return Err(Error::IllegalAction {
                step: seq.len(),
                action: usize::MAX,
            });
        }
        Ok((
            ScoredSequence {
                actions: seq.to_vec(),
                logprob: steps.iter().sum(),
                step_logprobs: steps,
            },
            caches,
        ))
    }

    pub fn score(
        &self,
        theta: &ModelParams,
        enc: &Encoded,
        seq: &[ActionId],
    ) -> Result<ScoredSequence> {
        self.check(theta);
        Ok(self.forward(theta.as_slice(), enc, seq, false)?.0)
    }

    pub fn log_prob_actions(
        &self,
        theta: &ModelParams,
        x: &Utterance,
        seq: &[ActionId],
    ) -> Result<f64> {
        let enc = self.encode(theta, x);
        Ok(self.score(theta, &enc, seq)?.logprob)
    }

    /// `log p(y | x, θ)`.
    pub fn log_prob(&self, theta: &ModelParams, x: &Utterance, y: &Program) -> Result<f64> {
        let seq = self.grammar.actions(y)?;
        self.log_prob_actions(theta, x, &seq)
    }

    /// `∇θ Σ_i w_i log p(y_i | x, θ)` with the weights held constant.
    /// Also returns each sequence's log-probability.
    pub fn grad_weighted(
        &self,
        theta: &ModelParams,
        x: &Utterance,
        pairs: &[(&[ActionId], f64)],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grad = vec![0.0; self.layout.total];
        let logprobs = self.grad_weighted_acc(theta, x, pairs, 1.0, &mut grad)?;
        Ok((grad, logprobs))
    }

    /// Accumulating form of [`Model::grad_weighted`]: `grad += scale · ∇θ Σ w log p`.
    pub fn grad_weighted_acc(
        &self,
        theta: &ModelParams,
        x: &Utterance,
        pairs: &[(&[ActionId], f64)],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.check(theta);
        assert_eq!(grad.len(), self.layout.total);
        let p = theta.as_slice();
        let l = &self.layout;
        let h = self.config.hidden_dim;
        let e = self.config.embed_dim;
        let enc = self.encode(theta, x);
        let n = enc.len();
        let mut g_states = vec![0.0; n * h];
        let mut g_keys = vec![0.0; n * h];
        let mut logprobs = Vec::with_capacity(pairs.len());
        let mut any = false;

        for (seq, w) in pairs {
            let weight = w * scale;
            let (scored, caches) = self.forward(p, &enc, seq, weight != 0.0)?;
            logprobs.push(scored.logprob);
            if weight == 0.0 {
                continue;
            }
            any = true;
            let mut g_s_next = vec![0.0; h];
            for c in caches.iter().rev() {
                let mut g_s = std::mem::take(&mut g_s_next);
                let mut g_c = vec![0.0; h];
                for (i, &a) in c.legal.iter().enumerate() {
                    let target = if i == c.chosen { 1.0 } else { 0.0 };
                    let g_logit = weight * (target - c.probs[i]);
                    if g_logit == 0.0 {
                        continue;
                    }
                    grad[l.out_b.start + a] += g_logit;
                    let w_off = l.out_w.start + a * 2 * h;
                    axpy(&mut grad[w_off..w_off + h], g_logit, &c.s);
                    axpy(&mut grad[w_off + h..w_off + 2 * h], g_logit, &c.context);
                    axpy(&mut g_s, g_logit, &p[w_off..w_off + h]);
                    axpy(&mut g_c, g_logit, &p[w_off + h..w_off + 2 * h]);
                }

                // attention
                let g_alpha: Vec<f64> = (0..n)
                    .map(|j| dot(&g_c, &enc.states[j * h..(j + 1) * h]))
                    .collect();
                for j in 0..n {
                    axpy(&mut g_states[j * h..(j + 1) * h], c.alpha[j], &g_c);
                }
                let mean: f64 = c.alpha.iter().zip(&g_alpha).map(|(a, g)| a * g).sum();
                let v = &p[l.att_v.clone()];
                let mut g_q = vec![0.0; h];
                for j in 0..n {
                    let g_u = c.alpha[j] * (g_alpha[j] - mean);
                    if g_u == 0.0 {
                        continue;
                    }
                    let zj = &c.z[j * h..(j + 1) * h];
                    axpy(&mut grad[l.att_v.clone()], g_u, zj);
                    let gk = &mut g_keys[j * h..(j + 1) * h];
                    for k in 0..h {
                        let g_pre = g_u * v[k] * (1.0 - zj[k] * zj[k]);
                        gk[k] += g_pre;
                        g_q[k] += g_pre;
                    }
                }
                outer_acc(&mut grad[l.att_ws.clone()], &g_q, &c.s);
                matvec_t_acc(&mut g_s, &p[l.att_ws.clone()], &g_q);

                // decoder cell
                let g_pre: Vec<f64> = g_s
                    .iter()
                    .zip(&c.s)
                    .map(|(g, s)| g * (1.0 - s * s))
                    .collect();
                let emb_off = l.act_emb.start + c.prev_row * e;
                let emb = &p[emb_off..emb_off + e];
                outer_acc(&mut grad[l.dec_wa.clone()], &g_pre, emb);
                matvec_t_acc(
                    &mut grad[emb_off..emb_off + e],
                    &p[l.dec_wa.clone()],
                    &g_pre,
                );
                outer_acc(&mut grad[l.dec_ws.clone()], &g_pre, &c.s_prev);
                axpy(&mut grad[l.dec_b.clone()], 1.0, &g_pre);
                let mut carry = vec![0.0; h];
                matvec_t_acc(&mut carry, &p[l.dec_ws.clone()], &g_pre);
                g_s_next = carry;
            }
            // s_0 is the last encoder state
            axpy(&mut g_states[(n - 1) * h..n * h], 1.0, &g_s_next);
        }
        if !any {
            return Ok(logprobs);
        }

        // key projection
        for j in 0..n {
            let gk = &g_keys[j * h..(j + 1) * h];
            outer_acc(
                &mut grad[l.att_wh.clone()],
                gk,
                &enc.states[j * h..(j + 1) * h],
            );
            matvec_t_acc(&mut g_states[j * h..(j + 1) * h], &p[l.att_wh.clone()], gk);
        }

        // encoder
        let zeros = vec![0.0; h];
        let mut carry = vec![0.0; h];
        for t in (0..n).rev() {
            let h_t = &enc.states[t * h..(t + 1) * h];
            let h_prev = if t == 0 {
                &zeros[..]
            } else {
                &enc.states[(t - 1) * h..t * h]
            };
            let g_pre: Vec<f64> = (0..h)
                .map(|k| (g_states[t * h + k] + carry[k]) * (1.0 - h_t[k] * h_t[k]))
                .collect();
            let tok = enc.tokens[t];
            let emb_off = l.tok_emb.start + tok * e;
            outer_acc(
                &mut grad[l.enc_wx.clone()],
                &g_pre,
                &p[emb_off..emb_off + e],
            );
            matvec_t_acc(
                &mut grad[emb_off..emb_off + e],
                &p[l.enc_wx.clone()],
                &g_pre,
            );
            outer_acc(&mut grad[l.enc_wh.clone()], &g_pre, h_prev);
            axpy(&mut grad[l.enc_b.clone()], 1.0, &g_pre);
            carry.iter_mut().for_each(|c| *c = 0.0);
            matvec_t_acc(&mut carry, &p[l.enc_wh.clone()], &g_pre);
        }
        Ok(logprobs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::{EntityTypeSpec, Literal, PropertySpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_grammar() -> Arc<Grammar> {
        let vocab = vec![Literal::Num(1), Literal::Num(2)];
        Arc::new(
            Grammar::new(
                vec![EntityTypeSpec {
                    name: "t".into(),
                    properties: vec![
                        PropertySpec {
                            name: "a".into(),
                            vocab: vocab.clone(),
                        },
                        PropertySpec {
                            name: "b".into(),
                            vocab,
                        },
                    ],
                }],
                2,
            )
            .unwrap(),
        )
    }

    fn setup(seed: u64, scale: f64) -> (Model, ModelParams, Utterance) {
        let g = tiny_grammar();
        let c = ModelConfig::new(4, g.num_actions()).with_dims(3, 4);
        let m = Model::new(c, g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = ModelParams::random(&c, &mut rng, scale);
        let x = Utterance::new(vec![1, 3, 2], 4).unwrap();
        (m, theta, x)
    }

    #[test]
    fn forced_steps_contribute_zero() {
        let (m, theta, x) = setup(1, 1.0);
        let seq = m.grammar().enumerate_sequences(1000).unwrap()[0].clone();
        let enc = m.encode(&theta, &x);
        let scored = m.score(&theta, &enc, &seq).unwrap();
        // a single entity type makes the first action forced
        assert_eq!(scored.step_logprobs[0], 0.0);
        let st = m.initial_state(&theta, &enc);
        let dist = m.step(&theta, &enc, &st);
        assert_eq!(dist.iter().filter(|v| v.is_finite()).count(), 1);
    }

    #[test]
    fn zero_parameters_give_uniform_steps() {
        let (m, _, x) = setup(1, 1.0);
        let theta = ModelParams::zeros(m.config());
        let enc = m.encode(&theta, &x);
        let mut st = m.initial_state(&theta, &enc);
        st = m
            .advance(&theta, &st, m.grammar().legal_actions(&st.grammar)[0])
            .unwrap();
        let lp = m.legal_log_probs(&theta, &enc, &st);
        let k = lp.len() as f64;
        assert!(lp.iter().all(|v| (v + k.ln()).abs() < 1e-12));
    }

    #[test]
    fn global_normalization_over_enumerated_space() {
        for seed in 0..5 {
            let (m, theta, x) = setup(seed, 1.5);
            let enc = m.encode(&theta, &x);
            let total: f64 = m
                .grammar()
                .enumerate_sequences(10_000)
                .unwrap()
                .iter()
                .map(|s| m.score(&theta, &enc, s).unwrap().logprob.exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "total mass {total}");
        }
    }

    #[test]
    fn illegal_sequences_are_rejected() {
        let (m, theta, x) = setup(0, 0.1);
        assert!(matches!(
            m.log_prob_actions(&theta, &x, &[crate::minilang::STOP]),
            Err(Error::IllegalAction { step: 0, .. })
        ));
        let seq = m.grammar().enumerate_sequences(1000).unwrap()[0].clone();
        assert!(m
            .log_prob_actions(&theta, &x, &seq[..seq.len() - 1])
            .is_err());
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let (m, theta, x) = setup(3, 0.5);
        let seqs = m.grammar().enumerate_sequences(1000).unwrap();
        let pairs: Vec<(&[ActionId], f64)> =
            seqs.iter().take(4).map(|s| (s.as_slice(), 0.0)).collect();
        let (g, lps) = m.grad_weighted(&theta, &x, &pairs).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        assert_eq!(lps.len(), 4);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (m, theta, x) = setup(11, 0.8);
        let seqs = m.grammar().enumerate_sequences(1000).unwrap();
        let pairs: Vec<(&[ActionId], f64)> =
            vec![(seqs[3].as_slice(), 0.7), (seqs[40].as_slice(), -1.3)];
        let (g, _) = m.grad_weighted(&theta, &x, &pairs).unwrap();
        let f = |th: &ModelParams| -> f64 {
            pairs
                .iter()
                .map(|(s, w)| w * m.log_prob_actions(th, &x, s).unwrap())
                .sum()
        };
        let step = 1e-5;
        let mut num = vec![0.0; g.len()];
        for i in 0..g.len() {
            let mut plus = theta.clone();
            plus.as_mut_slice()[i] += step;
            let mut minus = theta.clone();
            minus.as_mut_slice()[i] -= step;
            num[i] = (f(&plus) - f(&minus)) / (2.0 * step);
        }
        let diff: f64 = g
            .iter()
            .zip(&num)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-6, "relative error {}", diff / norm);
    }
}
