//! Beam search with an untrained model, the split of the beam into seen
//! executable and seen non-executable programs, and every objective's loss
//! on that split.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xpr::model::{Model, ModelConfig, ModelParams, Vocab};
use xpr::search::{beam_search, partition};
use xpr::{KnowledgeBase, Objective};

const KB: &str = "\
!type restaurant
!prop restaurant star_rating numeric
!prop restaurant cuisine categorical
!vocab restaurant 4
r1 type restaurant
r1 star_rating 3
r1 cuisine thai
r2 type restaurant
r2 star_rating 5
r2 cuisine french
";

fn main() -> xpr::Result<()> {
    let kb = KnowledgeBase::parse(KB)?;
    let grammar = Arc::new(kb.grammar(2)?);
    let vocab = Vocab::build("thai places with three stars".split_whitespace());
    let config = ModelConfig::new(vocab.len(), grammar.num_actions()).with_dims(8, 16);
    let model = Model::new(config, grammar.clone())?;
    let theta = ModelParams::random(&config, &mut ChaCha8Rng::seed_from_u64(3), 1.0);
    let x = vocab.encode("thai places with three stars")?;

    let enc = model.encode(&theta, &x);
    let beam = beam_search(&model, &theta, &enc, 8);
    let part = partition(&beam, &grammar, &kb)?;
    for item in &part.p_se {
        println!("SE {:>8.4}  {}", item.logprob(), item.program);
    }
    for item in &part.p_sn {
        println!("SN {:>8.4}  {}", item.logprob(), item.program);
    }
    println!(
        "mass_se {:.4} mass_sn {:.4} residual {:.4}",
        part.mass_se(),
        part.mass_sn(),
        part.residual()
    );
    for o in Objective::ALL {
        let r = o.loss(&part);
        println!(
            "{o:<10} loss {:>8.4}{}",
            r.loss,
            if r.skipped { " (skipped)" } else { "" }
        );
    }
    Ok(())
}
