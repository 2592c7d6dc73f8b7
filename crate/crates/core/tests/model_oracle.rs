//! The network's log-probabilities against a scalar re-derivation of the
//! same forward pass with one-dimensional embeddings and hidden states.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xpr::executor::PropKind;
use xpr::minilang::GrammarState;
use xpr::model::{Model, ModelConfig, ModelParams, Utterance};
use xpr::{KnowledgeBase, Literal};

fn tiny_model() -> Model {
    let mut kb = KnowledgeBase::new();
    kb.add_type("r").unwrap();
    kb.add_property("r", "a", PropKind::Numeric).unwrap();
    kb.add_vocab("r", Literal::Num(1)).unwrap();
    kb.add_vocab("r", Literal::Num(2)).unwrap();
    let grammar = Arc::new(kb.grammar(2).unwrap());
    let config = ModelConfig::new(3, grammar.num_actions()).with_dims(1, 1);
    Model::new(config, grammar).unwrap()
}

struct Scalars<'a> {
    p: &'a [f64],
    model: &'a Model,
}

impl Scalars<'_> {
    fn at(&self, r: &std::ops::Range<usize>, i: usize) -> f64 {
        assert!(r.start + i < r.end);
        self.p[r.start + i]
    }

    fn log_prob(&self, x: &[usize], seq: &[usize]) -> f64 {
        let l = self.model.layout();
        let a_count = self.model.config().num_actions;
        let mut hs = Vec::new();
        let mut h = 0.0;
        for &tok in x {
            h = (self.at(&l.enc_b, 0)
                + self.at(&l.enc_wx, 0) * self.at(&l.tok_emb, tok)
                + self.at(&l.enc_wh, 0) * h)
                .tanh();
            hs.push(h);
        }
        let keys: Vec<f64> = hs.iter().map(|h| self.at(&l.att_wh, 0) * h).collect();
        let cell = |row: usize, prev: f64| {
            (self.at(&l.dec_b, 0)
                + self.at(&l.dec_wa, 0) * self.at(&l.act_emb, row)
                + self.at(&l.dec_ws, 0) * prev)
                .tanh()
        };
        let mut s_prev = *hs.last().unwrap();
        let mut row = a_count;
        let mut state = GrammarState::ExpectType;
        let mut total = 0.0;
        for &a in seq {
            let s = cell(row, s_prev);
            let u: Vec<f64> = keys
                .iter()
                .map(|k| self.at(&l.att_v, 0) * (k + self.at(&l.att_ws, 0) * s).tanh())
                .collect();
            let z: f64 = u.iter().map(|v| v.exp()).sum();
            let c: f64 = u.iter().zip(&hs).map(|(v, h)| v.exp() / z * h).sum();
            let logit = |b: usize| {
                self.at(&l.out_b, b)
                    + self.at(&l.out_w, 2 * b) * s
                    + self.at(&l.out_w, 2 * b + 1) * c
            };
            let legal = self.model.grammar().legal_actions(&state);
            let norm: f64 = legal.iter().map(|&b| logit(b).exp()).sum();
            total += logit(a) - norm.ln();
            state = self.model.grammar().transition(&state, a).unwrap();
            row = a;
            s_prev = s;
        }
        total
    }
}

#[test]
fn log_prob_matches_scalar_forward_pass() {
    let model = tiny_model();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let seqs = model.grammar().enumerate_sequences(1000).unwrap();
    assert!(seqs.len() > 10);
    for draw in 0..5 {
        let theta = ModelParams::random(model.config(), &mut rng, 1.5);
        let oracle = Scalars {
            p: theta.as_slice(),
            model: &model,
        };
        let x = [draw % 3, 2, 1, 0][..(draw % 4) + 1].to_vec();
        let utt = Utterance::new(x.clone(), 3).unwrap();
        let mut total = 0.0;
        for seq in &seqs {
            let ours = model.log_prob_actions(&theta, &utt, seq).unwrap();
            let theirs = oracle.log_prob(&x, seq);
            assert!((ours - theirs).abs() < 1e-12, "{seq:?}: {ours} vs {theirs}");
            total += ours.exp();
        }
        assert!((total - 1.0).abs() < 1e-9);
    }
}
