//! Soft labels of every objective on a hand-built seen set, plus sparsemax
//! on a few score vectors.

use xpr::model::ScoredSequence;
use xpr::objectives::{
    q_gentle, q_repulsion, q_self_training, q_sparse, q_top_k, sparsemax, PosteriorQ,
};
use xpr::search::{SeenItem, SeenPartition};
use xpr::{parse, Grammar, KnowledgeBase};

const KB: &str = "\
!type restaurant
!prop restaurant star_rating numeric
!prop restaurant cuisine categorical
r1 type restaurant
r1 star_rating 3
r1 cuisine thai
";

fn item(grammar: &Grammar, text: &str, prob: f64) -> SeenItem {
    let program = parse(text).expect("valid program");
    SeenItem {
        seq: ScoredSequence {
            actions: grammar.actions(&program).expect("in grammar"),
            logprob: prob.ln(),
            step_logprobs: Vec::new(),
        },
        program,
    }
}

fn show(name: &str, q: Option<PosteriorQ>) {
    match q {
        None => println!("{name}: skipped"),
        Some(q) => {
            let w: Vec<String> = q
                .support
                .iter()
                .map(|(p, w)| format!("{w:.3} {p}"))
                .collect();
            println!(
                "{name}: residual {:.3}\n    {}",
                q.residual,
                w.join("\n    ")
            );
        }
    }
}

fn main() {
    let g = KnowledgeBase::parse(KB)
        .expect("valid KB")
        .grammar(2)
        .expect("non-empty");
    let part = SeenPartition::from_parts(
        vec![
            item(&g, "select restaurant where star_rating = 3", 0.20),
            item(
                &g,
                "select restaurant where star_rating = 3 and cuisine = thai",
                0.12,
            ),
            item(&g, "select restaurant where cuisine = thai", 0.05),
        ],
        vec![item(&g, "select restaurant where star_rating = thai", 0.30)],
    );
    show("st", q_self_training(&part));
    show("topk", q_top_k(&part));
    show("repulsion", Some(q_repulsion(&part)));
    show("gentle", q_gentle(&part));
    show("sparse", q_sparse(&part));

    for z in [
        vec![1.0, 1.0, 1.0],
        vec![2.0, 0.0],
        vec![0.7, 0.3, -1.0],
        vec![-1.2, -1.5, -3.0],
    ] {
        println!("sparsemax({z:?}) = {:?}", sparsemax(&z));
    }
}
