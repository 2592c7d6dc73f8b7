//! Unsupervised losses over a seen partition, their soft labels `q`, and
//! sparsemax.
//!
//! Every loss here has a gradient of the form `−Σ_y w_y ∇ log p(y | x, θ)`
//! over seen programs. [`UnsupLossResult`] carries those weights so the model
//! can backpropagate through `grad_weighted` without knowing the objective.
//! Quantities the objective treats as constants during the update (the
//! self-training target, the gentle coefficient, the sparse soft label) are
//! recorded on the result and reused by [`UnsupLossResult::surrogate`].

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::minilang::{ActionId, Program};
use crate::search::{rank, SeenPartition};

/// Clamp inside every `log(1 − mass)`.
pub const EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    SelfTraining,
    TopK,
    Repulsion,
    Gentle,
    Sparse,
    Reinforce,
}

impl Objective {
    pub const ALL: [Objective; 6] = [
        Objective::SelfTraining,
        Objective::TopK,
        Objective::Repulsion,
        Objective::Gentle,
        Objective::Sparse,
        Objective::Reinforce,
    ];

    /// The five marginal-likelihood approximations, without the baseline.
    pub const X_PR: [Objective; 5] = [
        Objective::SelfTraining,
        Objective::TopK,
        Objective::Repulsion,
        Objective::Gentle,
        Objective::Sparse,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Objective::SelfTraining => "st",
            Objective::TopK => "topk",
            Objective::Repulsion => "repulsion",
            Objective::Gentle => "gentle",
            Objective::Sparse => "sparse",
            Objective::Reinforce => "reinforce",
        }
    }

    pub fn valid_tokens() -> String {
        Self::ALL
            .iter()
            .map(|o| o.token())
            .collect::<Vec<_>>()
            .join(" | ")
    }

    /// Skips the example when nothing executable was seen.
    pub fn needs_executable(self) -> bool {
        matches!(
            self,
            Objective::SelfTraining | Objective::TopK | Objective::Sparse
        )
    }

    pub fn loss(self, part: &SeenPartition) -> UnsupLossResult {
        match self {
            Objective::SelfTraining => loss_self_training(part),
            Objective::TopK => loss_top_k(part),
            Objective::Repulsion => loss_repulsion(part),
            Objective::Gentle => loss_gentle(part),
            Objective::Sparse => loss_sparse(part),
            Objective::Reinforce => loss_reinforce(part),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|o| o.token() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown objective `{s}`, expected one of {}",
                    Self::valid_tokens()
                ))
            })
    }
}

/// `log Σ exp(x)`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log(1 − exp(a))` for `a ≤ 0`.
fn log1m_exp(a: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        0.0
    } else if a > -std::f64::consts::LN_2 {
        (-a.exp_m1()).ln()
    } else {
        (-a.exp()).ln_1p()
    }
}

/// Euclidean projection onto the probability simplex, by sorting and
/// thresholding.
pub fn sparsemax(z: &[f64]) -> Vec<f64> {
    assert!(!z.is_empty(), "sparsemax of an empty vector");
    assert!(
        z.iter().all(|v| v.is_finite()),
        "sparsemax input must be finite"
    );
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: Vec<f64> = z.iter().map(|v| v - top).collect();
    let mut sorted = z.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut support_sum = sorted[0];
    let mut k = 1;
    for (i, &v) in sorted.iter().enumerate() {
        cum += v;
        if 1.0 + (i + 1) as f64 * v > cum {
            k = i + 1;
            support_sum = cum;
        }
    }
    let tau = (support_sum - 1.0) / k as f64;
    z.iter().map(|v| (v - tau).max(0.0)).collect()
}

/// A soft label over programs; `residual` is mass assigned to unseen
/// programs as a whole.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PosteriorQ {
    pub support: Vec<(Program, f64)>,
    pub residual: f64,
}

impl PosteriorQ {
    pub fn delta(p: Program) -> Self {
        PosteriorQ {
            support: vec![(p, 1.0)],
            residual: 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.support.iter().map(|(_, w)| w).sum::<f64>() + self.residual
    }

    /// `−Σ w log w` over the explicit support.
    pub fn entropy(&self) -> f64 {
        -self
            .support
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(_, w)| w * w.ln())
            .sum::<f64>()
    }

    pub fn weight(&self, p: &Program) -> f64 {
        self.support
            .iter()
            .filter(|(q, _)| q == p)
            .map(|(_, w)| w)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnsupLossResult {
    pub objective: Objective,
    /// The objective actually applied; differs on gentle's fallback.
    pub applied: Objective,
    pub loss: f64,
    pub skipped: bool,
    pub q: PosteriorQ,
    /// `w` in `∇loss = −Σ w ∇log p`, aligned with `p_se` and `p_sn`.
    pub weights_se: Vec<f64>,
    pub weights_sn: Vec<f64>,
    /// Self-training target index into `p_se`.
    pub target: Option<usize>,
    /// Detached gentle coefficient `c`.
    pub coeff: Option<f64>,
    /// Detached sparse soft label.
    pub sparse_q: Option<Vec<f64>>,
    pub mass_se: f64,
    pub mass_sn: f64,
}

impl UnsupLossResult {
    fn empty(objective: Objective, part: &SeenPartition) -> Self {
        UnsupLossResult {
            objective,
            applied: objective,
            loss: 0.0,
            skipped: false,
            q: PosteriorQ::default(),
            weights_se: vec![0.0; part.p_se.len()],
            weights_sn: vec![0.0; part.p_sn.len()],
            target: None,
            coeff: None,
            sparse_q: None,
            mass_se: part.mass_se(),
            mass_sn: part.mass_sn(),
        }
    }

    fn skip(objective: Objective, part: &SeenPartition) -> Self {
        UnsupLossResult {
            skipped: true,
            ..Self::empty(objective, part)
        }
    }

    /// `(sequence, −w)` pairs: feeding them to `grad_weighted` yields `∇loss`.
    pub fn grad_pairs<'a>(&self, part: &'a SeenPartition) -> Vec<(&'a [ActionId], f64)> {
        part.p_se
            .iter()
            .zip(&self.weights_se)
            .chain(part.p_sn.iter().zip(&self.weights_sn))
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| (i.seq.actions.as_slice(), -w))
            .collect()
    }

    /// The loss re-evaluated at new log-probabilities of the same seen items,
    /// holding the detached quantities fixed. Its gradient is what
    /// [`UnsupLossResult::grad_pairs`] delivers.
    pub fn surrogate(&self, se: &[f64], sn: &[f64]) -> f64 {
        if self.skipped {
            return 0.0;
        }
        match self.applied {
            Objective::SelfTraining => -se[self.target.expect("target")],
            Objective::TopK => -log_sum_exp(se),
            Objective::Repulsion => repulsion_value(log_sum_exp(sn)),
            Objective::Gentle => {
                let c = self.coeff.expect("coeff");
                let lse = log_sum_exp(se);
                let r = 1.0 - lse.exp() - log_sum_exp(sn).exp();
                -c * lse - (1.0 - c) * r.max(EPSILON).ln()
            }
            Objective::Sparse => -self
                .sparse_q
                .as_ref()
                .expect("sparse q")
                .iter()
                .zip(se)
                .map(|(q, l)| q * l)
                .sum::<f64>(),
            Objective::Reinforce => -log_sum_exp(se).exp(),
        }
    }
}

fn repulsion_value(log_mass_sn: f64) -> f64 {
    let arg = log1m_exp(log_mass_sn.min(0.0));
    -arg.max(EPSILON.ln())
}

fn se_logprobs(part: &SeenPartition) -> Vec<f64> {
    part.p_se.iter().map(|i| i.logprob()).collect()
}

fn best_index(part: &SeenPartition) -> Option<usize> {
    (0..part.p_se.len()).min_by(|&a, &b| {
        let (x, y) = (&part.p_se[a], &part.p_se[b]);
        rank(x.logprob(), &x.seq.actions, y.logprob(), &y.seq.actions)
    })
}

/// Delta on the most probable seen executable program.
pub fn q_self_training(part: &SeenPartition) -> Option<PosteriorQ> {
    best_index(part).map(|i| PosteriorQ::delta(part.p_se[i].program.clone()))
}

/// Model probabilities renormalized over the seen executables.
pub fn q_top_k(part: &SeenPartition) -> Option<PosteriorQ> {
    if part.p_se.is_empty() {
        return None;
    }
    Some(PosteriorQ {
        support: part
            .p_se
            .iter()
            .map(|i| (i.program.clone(), (i.logprob() - part.log_mass_se).exp()))
            .collect(),
        residual: 0.0,
    })
}

/// Model probabilities renormalized over everything except the seen
/// non-executables.
pub fn q_repulsion(part: &SeenPartition) -> PosteriorQ {
    let log_keep = log1m_exp(part.log_mass_sn.min(0.0));
    if log_keep < EPSILON.ln() {
        return PosteriorQ {
            support: part.p_se.iter().map(|i| (i.program.clone(), 0.0)).collect(),
            residual: 1.0,
        };
    }
    let support: Vec<(Program, f64)> = part
        .p_se
        .iter()
        .map(|i| (i.program.clone(), (i.logprob() - log_keep).exp()))
        .collect();
    let explicit: f64 = support.iter().map(|(_, w)| w).sum();
    PosteriorQ {
        support,
        residual: (1.0 - explicit).max(0.0),
    }
}

/// Seen mass `c` on the seen executables in proportion to `p`; unseen mass
/// keeps `1 − c`.
pub fn q_gentle(part: &SeenPartition) -> Option<PosteriorQ> {
    if part.p_se.is_empty() {
        return None;
    }
    let c = (part.mass_se() + part.mass_sn()).min(1.0);
    Some(PosteriorQ {
        support: part
            .p_se
            .iter()
            .map(|i| {
                (
                    i.program.clone(),
                    c * (i.logprob() - part.log_mass_se).exp(),
                )
            })
            .collect(),
        residual: 1.0 - c,
    })
}

/// Sparsemax of the seen executables' log-probabilities.
pub fn q_sparse(part: &SeenPartition) -> Option<PosteriorQ> {
    if part.p_se.is_empty() {
        return None;
    }
    let q = sparsemax(&se_logprobs(part));
    Some(PosteriorQ {
        support: part
            .p_se
            .iter()
            .zip(q)
            .map(|(i, w)| (i.program.clone(), w))
            .collect(),
        residual: 0.0,
    })
}

/// `q_RL(y) = p(y) R(y)` over the seen set, unnormalized.
pub fn q_reinforce(part: &SeenPartition) -> Vec<(Program, f64)> {
    part.p_se
        .iter()
        .map(|i| (i.program.clone(), i.prob()))
        .chain(part.p_sn.iter().map(|i| (i.program.clone(), 0.0)))
        .collect()
}

/// `−log p(y*)` for the most probable seen executable `y*`.
pub fn loss_self_training(part: &SeenPartition) -> UnsupLossResult {
    let Some(best) = best_index(part) else {
        return UnsupLossResult::skip(Objective::SelfTraining, part);
    };
    let mut r = UnsupLossResult::empty(Objective::SelfTraining, part);
    r.loss = -part.p_se[best].logprob();
    r.weights_se[best] = 1.0;
    r.target = Some(best);
    r.q = PosteriorQ::delta(part.p_se[best].program.clone());
    r
}

/// `−log Σ_{P_SE} p`.
pub fn loss_top_k(part: &SeenPartition) -> UnsupLossResult {
    let Some(q) = q_top_k(part) else {
        return UnsupLossResult::skip(Objective::TopK, part);
    };
    let mut r = UnsupLossResult::empty(Objective::TopK, part);
    r.loss = -part.log_mass_se;
    r.weights_se = q.support.iter().map(|(_, w)| *w).collect();
    r.q = q;
    r
}

/// `−log(1 − Σ_{P_SN} p)`, clamped at `ε`.
pub fn loss_repulsion(part: &SeenPartition) -> UnsupLossResult {
    let mut r = UnsupLossResult::empty(Objective::Repulsion, part);
    let log_keep = log1m_exp(part.log_mass_sn.min(0.0));
    r.loss = repulsion_value(part.log_mass_sn);
    if log_keep >= EPSILON.ln() {
        r.weights_sn = part
            .p_sn
            .iter()
            .map(|i| -(i.logprob() - log_keep).exp())
            .collect();
    }
    r.q = q_repulsion(part);
    r
}

/// `−c log Σ_{P_SE} p − (1 − c) log(1 − Σ_{P_SE ∪ P_SN} p)` with the seen
/// mass `c` detached. Falls back to repulsion when nothing executable was
/// seen.
pub fn loss_gentle(part: &SeenPartition) -> UnsupLossResult {
    if part.p_se.is_empty() {
        let mut r = loss_repulsion(part);
        r.objective = Objective::Gentle;
        return r;
    }
    let mut r = UnsupLossResult::empty(Objective::Gentle, part);
    let (m_se, m_sn) = (part.mass_se(), part.mass_sn());
    let c = (m_se + m_sn).min(1.0);
    let rest = 1.0 - m_se - m_sn;
    let unseen = if rest >= EPSILON {
        (1.0 - c) / rest
    } else {
        0.0
    };
    r.loss = -c * part.log_mass_se - (1.0 - c) * rest.max(EPSILON).ln();
    r.weights_se = part
        .p_se
        .iter()
        .map(|i| {
            let p = i.prob();
            c * (i.logprob() - part.log_mass_se).exp() - unseen * p
        })
        .collect();
    r.weights_sn = part.p_sn.iter().map(|i| -unseen * i.prob()).collect();
    r.coeff = Some(c);
    r.q = q_gentle(part).expect("non-empty");
    r
}

/// `−Σ_{P_SE} q_sparse log p` with `q_sparse` detached.
pub fn loss_sparse(part: &SeenPartition) -> UnsupLossResult {
    if part.p_se.is_empty() {
        return UnsupLossResult::skip(Objective::Sparse, part);
    }
    let mut r = UnsupLossResult::empty(Objective::Sparse, part);
    let lps = se_logprobs(part);
    let q = sparsemax(&lps);
    r.loss = -q.iter().zip(&lps).map(|(w, l)| w * l).sum::<f64>();
    r.weights_se = q.clone();
    r.q = PosteriorQ {
        support: part
            .p_se
            .iter()
            .zip(&q)
            .map(|(i, w)| (i.program.clone(), *w))
            .collect(),
        residual: 0.0,
    };
    r.sparse_q = Some(q);
    r
}

/// `−E_p[R]` over the seen set. The reported `q` is `q_RL` renormalized.
pub fn loss_reinforce(part: &SeenPartition) -> UnsupLossResult {
    let mut r = UnsupLossResult::empty(Objective::Reinforce, part);
    r.loss = -part.mass_se();
    r.weights_se = part.p_se.iter().map(|i| i.prob()).collect();
    if let Some(q) = q_top_k(part) {
        r.q = q;
    }
    r
}

/// `KL(q ‖ p) = −Σ q log p − H(q)` for a fully explicit `q`.
pub fn kl_to_model(q: &[f64], logp: &[f64]) -> f64 {
    q.iter()
        .zip(logp)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, l)| w * (w.ln() - l))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::{Condition, Literal, Op};
    use crate::model::ScoredSequence;
    use crate::search::SeenItem;
    use proptest::prelude::*;

    fn item(n: i64, p: f64) -> SeenItem {
        SeenItem {
            program: Program::new("r", vec![Condition::new("a", Op::Eq, Literal::Num(n))]).unwrap(),
            seq: ScoredSequence {
                actions: vec![5, 6, 2, 7 + n as usize, 0],
                logprob: p.ln(),
                step_logprobs: vec![],
            },
        }
    }

    fn part(se: &[f64], sn: &[f64]) -> SeenPartition {
        SeenPartition::from_parts(
            se.iter()
                .enumerate()
                .map(|(i, p)| item(i as i64, *p))
                .collect(),
            sn.iter()
                .enumerate()
                .map(|(i, p)| item(100 + i as i64, *p))
                .collect(),
        )
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn tokens_round_trip() {
        for o in Objective::ALL {
            assert_eq!(o.token().parse::<Objective>().unwrap(), o);
        }
        let err = "bogus".parse::<Objective>().unwrap_err().to_string();
        assert!(err.contains("st | topk | repulsion | gentle | sparse | reinforce"));
    }

    #[test]
    fn arithmetic_examples() {
        let p = part(&[0.2, 0.1], &[]);
        assert!(close(loss_self_training(&p).loss, 1.6094, 1e-4));
        let q = q_top_k(&p).unwrap();
        assert!(close(q.support[0].1, 2.0 / 3.0, 1e-12) && close(q.support[1].1, 1.0 / 3.0, 1e-12));
        assert!(close(loss_top_k(&part(&[0.3], &[])).loss, 1.2040, 1e-4));
        assert!(close(loss_repulsion(&part(&[], &[0.3])).loss, 0.3567, 1e-4));
        assert_eq!(loss_repulsion(&part(&[0.5], &[])).loss, 0.0);
        let g = part(&[0.2], &[0.3]);
        assert!(close(loss_gentle(&g).loss, 1.1513, 1e-4));
        assert!(close(q_gentle(&g).unwrap().support[0].1, 0.5, 1e-12));
    }

    #[test]
    fn empty_executable_set_policy() {
        let p = part(&[], &[0.4]);
        for o in [Objective::SelfTraining, Objective::TopK, Objective::Sparse] {
            let r = o.loss(&p);
            assert!(r.skipped);
            assert_eq!(r.loss, 0.0);
            assert!(r.grad_pairs(&p).is_empty());
        }
        let g = loss_gentle(&p);
        assert!(!g.skipped);
        assert_eq!(g.applied, Objective::Repulsion);
        assert_eq!(g.loss, loss_repulsion(&p).loss);
        let rl = loss_reinforce(&p);
        assert!(!rl.skipped);
        assert!(rl.grad_pairs(&p).is_empty());
    }

    #[test]
    fn single_executable_reduction_chain() {
        let p = part(&[0.37], &[0.2, 0.1]);
        let st = loss_self_training(&p).loss;
        assert_eq!(st, loss_top_k(&p).loss);
        assert_eq!(st, loss_sparse(&p).loss);
        assert_eq!(q_sparse(&p).unwrap().support[0].1, 1.0);
    }

    #[test]
    fn gentle_reduces_to_top_k_on_full_space() {
        let p = part(&[0.5, 0.5], &[]);
        assert!(close(loss_gentle(&p).loss, loss_top_k(&p).loss, 1e-12));
    }

    #[test]
    fn sparse_vertex_and_uniform_cases() {
        let p = part(&[0.5, 0.1, 0.01], &[]);
        assert_eq!(loss_sparse(&p).loss, loss_self_training(&p).loss);
        let u = part(&[0.1, 0.1, 0.1, 0.1], &[]);
        let mean = -(0.1f64).ln();
        assert!(close(loss_sparse(&u).loss, mean, 1e-12));
        assert!(close(
            loss_sparse(&u).loss,
            loss_top_k(&u).loss + 4f64.ln(),
            1e-12
        ));
    }

    #[test]
    fn sparsemax_examples() {
        assert_eq!(sparsemax(&[0.4, 0.4, 0.4]), vec![1.0 / 3.0; 3]);
        assert_eq!(sparsemax(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = sparsemax(&[0.7, 0.3, -1.0]);
        assert!(close(p[0], 0.7, 1e-12) && close(p[1], 0.3, 1e-12) && p[2] == 0.0);
    }

    #[test]
    fn entropy_of_uniform() {
        let q = q_top_k(&part(&[0.1, 0.1, 0.1, 0.1], &[])).unwrap();
        assert!(close(q.entropy(), 4f64.ln(), 1e-12));
    }

    #[test]
    fn clamp_keeps_losses_finite_near_full_mass() {
        let p = part(&[], &[1.0]);
        let r = loss_repulsion(&p);
        assert!(close(r.loss, -EPSILON.ln(), 1e-9));
        assert!(r.weights_sn.iter().all(|w| *w == 0.0));
    }

    fn masses() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(1e-12f64..1.0, 0..6),
            prop::collection::vec(1e-12f64..1.0, 0..6),
            prop::bool::ANY,
        )
            .prop_map(|(se, sn, full)| {
                let total: f64 = se.iter().chain(&sn).sum();
                let scale = if full || total > 1.0 {
                    1.0 / total.max(1e-300)
                } else {
                    1.0
                };
                (
                    se.iter().map(|v| v * scale).collect(),
                    sn.iter().map(|v| v * scale).collect(),
                )
            })
    }

    proptest! {
        #[test]
        fn losses_and_weights_are_finite((se, sn) in masses()) {
            let p = part(&se, &sn);
            for o in Objective::ALL {
                let r = o.loss(&p);
                prop_assert!(r.loss.is_finite(), "{o} loss {}", r.loss);
                prop_assert!(r.weights_se.iter().chain(&r.weights_sn).all(|w| w.is_finite()));
                if o != Objective::Reinforce {
                    prop_assert!(r.loss >= -1e-12, "{o} loss {}", r.loss);
                }
            }
        }

        #[test]
        fn q_constructors_are_distributions((se, sn) in masses()) {
            let p = part(&se, &sn);
            let qs = [
                q_self_training(&p),
                q_top_k(&p),
                Some(q_repulsion(&p)),
                q_gentle(&p),
                q_sparse(&p),
            ];
            for q in qs.into_iter().flatten() {
                prop_assert!(q.support.iter().all(|(_, w)| *w >= 0.0));
                prop_assert!(q.residual >= 0.0);
                prop_assert!((q.total() - 1.0).abs() < 1e-9, "total {}", q.total());
                prop_assert!(q.entropy().is_finite());
                for (prog, _) in &q.support {
                    prop_assert!(p.contains_se(prog));
                }
            }
        }

        #[test]
        fn sparsemax_is_shift_invariant_and_monotone(
            z in prop::collection::vec(-5.0f64..5.0, 1..12),
            c in -10.0f64..10.0,
        ) {
            let p = sparsemax(&z);
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let ps = sparsemax(&shifted);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for i in 0..z.len() {
                prop_assert!(p[i] >= 0.0);
                prop_assert!((p[i] - ps[i]).abs() < 1e-9);
                for j in 0..z.len() {
                    if z[i] >= z[j] {
                        prop_assert!(p[i] >= p[j]);
                    }
                }
            }
        }
    }
}
