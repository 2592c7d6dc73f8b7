//! Generates the synthetic restaurants/hotels corpus and prints its size,
//! a few examples and the program-space size.

use xpr::datagen::{Dataset, DomainSpec};
use xpr::metrics::gold_ratio;

fn main() -> xpr::Result<()> {
    let spec = DomainSpec::restaurants(1100, 7);
    let ds = Dataset::synthetic(&spec, 100, 0.3)?;
    let grammar = ds.kb.grammar(spec.max_conjuncts)?;
    println!(
        "{} entities, {} actions, {} programs",
        ds.kb.entities().len(),
        grammar.num_actions(),
        grammar.count_programs()
    );
    println!(
        "{} labeled, {} unlabeled, {} dev",
        ds.corpus.labeled.len(),
        ds.corpus.unlabeled.len(),
        ds.dev.len()
    );
    for e in ds.corpus.labeled.iter().take(5) {
        println!("{:<55} {}", e.utterance, e.program);
    }
    let ratio = gold_ratio(
        ds.corpus
            .labeled
            .iter()
            .map(|e| (e.tokens().count(), &e.program)),
    )?;
    println!("gold average ratio {ratio:.3}");
    Ok(())
}
