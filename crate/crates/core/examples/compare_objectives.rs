//! Trains a supervised-only baseline and every X-PR objective on one
//! synthetic corpus, sharing the warmup per seed, and prints mean dev
//! accuracy, coverage and average ratio per objective.
//!
//! Arguments are `key=value` pairs: any training config key
//! (`max_steps=3000 warmup_steps=1500 embed_dim=16 lr=0.1 ...`) plus
//! `seeds=<n>`, `only=<a,b>` and `out=<dir>` to write one metrics CSV per
//! objective and the combined plots.
//!
//! `cargo run --release --example compare_objectives -- seeds=3 max_steps=3000`

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use xpr::datagen::{Dataset, DomainSpec};
use xpr::report::{diagnostic_plots, records_csv, MetricsRow};
use xpr::training::{compare_objectives, TrainConfig, TrainData};
use xpr::Objective;

fn main() -> xpr::Result<()> {
    let mut seeds = 1u64;
    let mut only: Option<Vec<Objective>> = None;
    let mut out: Option<PathBuf> = None;
    let mut rest = Vec::new();
    for arg in std::env::args().skip(1) {
        match arg.split_once('=') {
            Some(("seeds", v)) => seeds = v.parse().expect("seeds=<n>"),
            Some(("only", v)) => {
                only = Some(
                    v.split(',')
                        .map(|o| o.parse())
                        .collect::<xpr::Result<_>>()?,
                )
            }
            Some(("out", v)) => out = Some(v.into()),
            _ => rest.push(arg),
        }
    }
    let cfg: TrainConfig = rest.join(" ").parse()?;
    let lambda = if cfg.lambda > 0.0 {
        cfg.lambda
    } else {
        TrainConfig::default().lambda
    };
    let objectives: Vec<(Objective, f64)> = only
        .unwrap_or_else(|| Objective::X_PR.to_vec())
        .into_iter()
        .map(|o| (o, lambda))
        .collect();

    let ds = Dataset::synthetic(&DomainSpec::restaurants(1100, 7), 100, 0.3)?;
    let data = TrainData::new(ds.kb, &ds.corpus, &ds.dev, ds.max_conjuncts)?;
    println!("{cfg}");

    let start = Instant::now();
    let runs = compare_objectives(
        &data,
        &cfg,
        &objectives,
        &(0..seeds).collect::<Vec<_>>(),
        |r| {
            println!(
                "  seed {} {:<10} dev {:.2} ({:.0}s)",
                r.seed,
                r.label,
                r.result.final_dev_accuracy().unwrap_or(f64::NAN),
                start.elapsed().as_secs_f64()
            );
        },
    )?;

    let mut by: BTreeMap<&str, Vec<&xpr::training::RunResult>> = BTreeMap::new();
    for r in &runs {
        by.entry(r.label.as_str()).or_default().push(&r.result);
    }
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "{:<11} {:>8} {:>9} {:>9}",
        "objective", "dev_acc", "coverage", "avg_ratio"
    );
    for (label, rs) in &by {
        println!(
            "{label:<11} {:>8.3} {:>9.3} {:>9.3}",
            mean(
                rs.iter()
                    .map(|r| r.final_dev_accuracy().unwrap_or(0.0))
                    .collect()
            ),
            mean(
                rs.iter()
                    .map(|r| r.diagnostics.coverage().unwrap_or(f64::NAN))
                    .collect()
            ),
            mean(
                rs.iter()
                    .map(|r| r.diagnostics.avg_ratio().unwrap_or(f64::NAN))
                    .collect()
            ),
        );
    }
    println!("total {:.0}s", start.elapsed().as_secs_f64());

    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        let header = vec![format!("base config {cfg}"), format!("seeds {seeds}")];
        let mut rows = Vec::new();
        for r in runs.iter().filter(|r| r.seed == 0) {
            let own = [format!("config {}", r.result.config)];
            fs::write(
                dir.join(format!("{}.csv", r.label)),
                records_csv(&own, &r.result.records),
            )?;
            rows.extend(r.result.records.iter().map(MetricsRow::from));
        }
        for (name, svg) in diagnostic_plots(&header, &rows) {
            fs::write(dir.join(name), svg)?;
        }
    }
    Ok(())
}
