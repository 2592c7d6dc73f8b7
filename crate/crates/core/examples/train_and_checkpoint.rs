//! A short sparse training run: prints the dev-accuracy curve, saves a
//! checkpoint and checks that the reloaded parameters decode identically.

use xpr::datagen::{Dataset, DomainSpec};
use xpr::metrics::denotation_accuracy;
use xpr::model::{load_checkpoint, save_checkpoint};
use xpr::training::{run, TrainConfig, TrainData};
use xpr::Objective;

fn main() -> xpr::Result<()> {
    let ds = Dataset::synthetic(&DomainSpec::restaurants(600, 1), 60, 0.3)?;
    let data = TrainData::new(ds.kb, &ds.corpus, &ds.dev, ds.max_conjuncts)?;
    let cfg = TrainConfig {
        objective: Objective::Sparse,
        warmup_steps: 600,
        max_steps: 900,
        eval_every: 150,
        embed_dim: 16,
        hidden_dim: 32,
        ..TrainConfig::default()
    };
    let result = run(&data, &cfg, |r| {
        if let Some(acc) = r.dev_denotation_acc {
            println!(
                "step {:>4} sup {:.3} unsup {} dev {acc:.2}",
                r.step,
                r.loss_sup,
                r.loss_unsup.map_or("-".into(), |l| format!("{l:.3}"))
            );
        }
    })?;
    println!(
        "coverage {:.3}, average ratio {:.3}",
        result.diagnostics.coverage()?,
        result.diagnostics.avg_ratio()?
    );

    let dir = std::env::temp_dir().join("xpr-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    save_checkpoint(&path, result.model.config(), &result.theta)?;
    let back = load_checkpoint(&path, result.model.config())?;
    let acc = denotation_accuracy(&result.model, &back, &data.dev, &data.kb);
    println!(
        "reloaded {} parameters from {}, dev {acc:.2}",
        back.len(),
        path.display()
    );
    Ok(())
}
