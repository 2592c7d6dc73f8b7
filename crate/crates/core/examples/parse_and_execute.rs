//! Parses a few programs, runs them against a small KB and prints each
//! denotation and reward.

use xpr::{parse, KnowledgeBase};

const KB: &str = "\
!type restaurant
!prop restaurant star_rating numeric
!prop restaurant cuisine categorical
r1 type restaurant
r1 star_rating 3
r1 cuisine thai
r2 type restaurant
r2 star_rating 5
r2 cuisine french
";

fn main() -> xpr::Result<()> {
    let kb = KnowledgeBase::parse(KB)?;
    let grammar = kb.grammar(2)?;
    println!(
        "{} actions, {} programs up to 2 conditions",
        grammar.num_actions(),
        grammar.count_programs()
    );
    for text in [
        "select restaurant where star_rating = 3 and cuisine = thai",
        "select restaurant where star_rating > 3",
        "select restaurant where star_rating = 4",
        "select restaurant where star_rating = thai",
        "select restaurant where cuisine > 3",
    ] {
        let p = parse(text)?;
        let shown = match kb.execute(&p) {
            Ok(d) => format!("{d:?}"),
            Err(e) => e.to_string(),
        };
        let actions = grammar.actions(&p)?;
        println!(
            "{text}\n    {} actions, denotation {shown}, reward {}",
            actions.len(),
            kb.reward(&p).value()
        );
    }
    Ok(())
}
