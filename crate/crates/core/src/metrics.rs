//! Evaluation accuracy and the online training diagnostics.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::executor::KnowledgeBase;
use crate::minilang::Program;
use crate::model::{Model, ModelParams, Utterance};
use crate::search::{greedy, SeenPartition};

/// Running sums for average ratio and coverage. All fields are integers, so
/// merging is exact and order-independent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DiagnosticsAccumulator {
    /// `Σ_i Σ_{y ∈ P_SE(x_i)} |y|`
    pub ratio_num: u64,
    /// `Σ_i |x_i| · |P_SE(x_i)|`
    pub ratio_den: u64,
    pub hits: u64,
    pub examples: u64,
    /// `Σ_i |x_i|`
    pub tokens: u64,
}

impl DiagnosticsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// One processed example: utterance length, the action lengths of its
    /// seen executable programs, and whether its hidden gold was among them.
    pub fn record_raw(&mut self, x_len: usize, se_lengths: &[usize], gold_hit: bool) {
        self.ratio_num += se_lengths.iter().map(|&l| l as u64).sum::<u64>();
        self.ratio_den += (x_len * se_lengths.len()) as u64;
        self.hits += gold_hit as u64;
        self.examples += 1;
        self.tokens += x_len as u64;
    }

    pub fn record(&mut self, x_len: usize, part: &SeenPartition, gold: Option<&Program>) {
        let lengths: Vec<usize> = part.p_se.iter().map(|i| i.seq.actions.len()).collect();
        let hit = gold.is_some_and(|g| part.contains_se(g));
        self.record_raw(x_len, &lengths, hit);
    }

    pub fn merge(&mut self, other: &DiagnosticsAccumulator) {
        self.ratio_num += other.ratio_num;
        self.ratio_den += other.ratio_den;
        self.hits += other.hits;
        self.examples += other.examples;
        self.tokens += other.tokens;
    }

    pub fn avg_ratio(&self) -> Result<f64> {
        if self.ratio_den == 0 {
            return Err(Error::Undefined(
                "average ratio: no seen executable programs yet".into(),
            ));
        }
        Ok(self.ratio_num as f64 / self.ratio_den as f64)
    }

    /// Fraction of processed examples whose gold program was seen executable.
    pub fn coverage(&self) -> Result<f64> {
        if self.examples == 0 {
            return Err(Error::Undefined("coverage: no examples processed".into()));
        }
        Ok(self.hits as f64 / self.examples as f64)
    }

    /// Hits divided by total utterance length instead of example count.
    pub fn coverage_per_token(&self) -> Result<f64> {
        if self.tokens == 0 {
            return Err(Error::Undefined("coverage: no examples processed".into()));
        }
        Ok(self.hits as f64 / self.tokens as f64)
    }
}

/// Average ratio of gold programs themselves: `Σ |y| / Σ |x|`.
pub fn gold_ratio<'a>(pairs: impl IntoIterator<Item = (usize, &'a Program)>) -> Result<f64> {
    let mut acc = DiagnosticsAccumulator::new();
    for (x_len, p) in pairs {
        acc.record_raw(x_len, &[p.action_len()], true);
    }
    acc.avg_ratio()
}

/// Share of examples whose greedy decode has the gold denotation.
pub fn denotation_accuracy(
    model: &Model,
    theta: &ModelParams,
    eval: &[(Utterance, Program)],
    kb: &KnowledgeBase,
) -> f64 {
    if eval.is_empty() {
        return 0.0;
    }
    let correct: usize = eval
        .par_iter()
        .map(|(x, gold)| {
            let enc = model.encode(theta, x);
            let pred = greedy(model, theta, &enc);
            match model.grammar().decode(&pred.actions) {
                Ok(p) => kb.denotation_match(&p, gold) as usize,
                Err(_) => 0,
            }
        })
        .sum();
    correct as f64 / eval.len() as f64
}

/// Share of examples whose greedy decode equals the gold program.
pub fn exact_match_accuracy(
    model: &Model,
    theta: &ModelParams,
    eval: &[(Utterance, Program)],
) -> f64 {
    if eval.is_empty() {
        return 0.0;
    }
    let correct: usize = eval
        .par_iter()
        .map(|(x, gold)| {
            let enc = model.encode(theta, x);
            let pred = greedy(model, theta, &enc);
            model
                .grammar()
                .decode(&pred.actions)
                .is_ok_and(|p| &p == gold) as usize
        })
        .sum();
    correct as f64 / eval.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ratio_arithmetic() {
        let mut acc = DiagnosticsAccumulator::new();
        acc.record_raw(4, &[8, 8], false);
        assert_eq!(acc.avg_ratio().unwrap(), 2.0);
    }

    #[test]
    fn undefined_cases() {
        let mut acc = DiagnosticsAccumulator::new();
        assert!(matches!(acc.avg_ratio(), Err(Error::Undefined(_))));
        assert!(acc.coverage().is_err());
        acc.record_raw(3, &[], false);
        assert!(acc.avg_ratio().is_err());
        assert_eq!(acc.coverage().unwrap(), 0.0);
    }

    #[test]
    fn coverage_counts_examples() {
        let mut acc = DiagnosticsAccumulator::new();
        acc.record_raw(5, &[9], true);
        acc.record_raw(3, &[5], false);
        assert_eq!(acc.coverage().unwrap(), 0.5);
        assert_eq!(acc.coverage_per_token().unwrap(), 1.0 / 8.0);
    }

    #[test]
    fn gold_ratio_of_fixed_lengths() {
        let p = crate::minilang::parse("select r where a = 1").unwrap();
        assert_eq!(gold_ratio([(5, &p), (5, &p)]).unwrap(), 1.0);
    }

    fn acc_strategy() -> impl Strategy<Value = DiagnosticsAccumulator> {
        prop::collection::vec(
            (
                1usize..20,
                prop::collection::vec(1usize..14, 0..5),
                prop::bool::ANY,
            ),
            0..6,
        )
        .prop_map(|rows| {
            let mut a = DiagnosticsAccumulator::new();
            for (x, ls, h) in rows {
                a.record_raw(x, &ls, h);
            }
            a
        })
    }

    proptest! {
        #[test]
        fn merge_is_associative_and_commutative(a in acc_strategy(), b in acc_strategy(), c in acc_strategy()) {
            let mut left = a;
            left.merge(&b);
            left.merge(&c);
            let mut bc = b;
            bc.merge(&c);
            let mut right = a;
            right.merge(&bc);
            prop_assert_eq!(left, right);
            let mut rev = c;
            rev.merge(&b);
            rev.merge(&a);
            prop_assert_eq!(left, rev);
            if let Ok(cov) = left.coverage() {
                prop_assert!((0.0..=1.0).contains(&cov));
            }
            if let Ok(r) = left.avg_ratio() {
                prop_assert!(r > 0.0);
            }
        }
    }
}
