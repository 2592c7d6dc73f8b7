use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn xpr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xpr"))
        .args(args)
        .env("XPR_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn small_train(out: &Path, objective: &str) -> Output {
    xpr(&[
        "train",
        "--objective",
        objective,
        "--labeled-frac",
        "0.3",
        "--seed",
        "1",
        "--examples",
        "160",
        "--dev-size",
        "20",
        "--steps",
        "30",
        "--warmup",
        "10",
        "--eval-every",
        "10",
        "--embed-dim",
        "6",
        "--hidden-dim",
        "8",
        "--beam",
        "4",
        "--threads",
        "1",
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn train_writes_metrics_plots_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run1");
    let o = small_train(&run, "sparse");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "metrics.csv",
        "model.ckpt",
        "avg_ratio.svg",
        "coverage.svg",
        "kb.txt",
        "corpus.tsv",
        "dev.tsv",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(csv.starts_with(
        "# xpr train\n# config objective=sparse lambda=0.3 warmup_steps=10 max_steps=30"
    ));
    assert!(csv.contains("seed=1"));
    let (_, rows) = xpr::report::parse_metrics_csv(&csv).unwrap();
    assert_eq!(rows.len(), 30);
    assert!(rows[29].dev_denotation_acc.is_some());
    assert!(rows[9].loss_unsup.is_none() && rows[10].loss_unsup.is_some());
    for f in ["kb.txt", "corpus.tsv", "dev.tsv", "gold.tsv"] {
        assert!(fs::read_to_string(run.join(f))
            .unwrap()
            .starts_with("# xpr train\n# config "));
    }

    let e = xpr(&["eval", "--out", run.to_str().unwrap()]);
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let acc = rows[29].dev_denotation_acc.unwrap();
    assert!(String::from_utf8_lossy(&e.stdout)
        .contains(&format!("examples=20 denotation_accuracy={acc:.4}")));
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(small_train(&a, "gentle").status.success());
    assert!(small_train(&b, "gentle").status.success());
    for f in ["metrics.csv", "model.ckpt", "coverage.svg"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn analyze_is_a_pure_function_of_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("r");
    assert!(small_train(&run, "repulsion").status.success());
    let plots = dir.path().join("plots");
    let o = xpr(&[
        "analyze",
        run.join("metrics.csv").to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("repulsion"));
    let first = fs::read(plots.join("coverage.svg")).unwrap();
    let again = xpr(&[
        "analyze",
        run.join("metrics.csv").to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert!(again.status.success());
    assert_eq!(fs::read(plots.join("coverage.svg")).unwrap(), first);
}

#[test]
fn gen_then_train_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let g = xpr(&[
        "gen",
        "--examples",
        "150",
        "--dev-size",
        "20",
        "--seed",
        "3",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
    let run = dir.path().join("run");
    let o = xpr(&[
        "train",
        "--kb",
        data.join("kb.txt").to_str().unwrap(),
        "--corpus",
        data.join("corpus.tsv").to_str().unwrap(),
        "--dev",
        data.join("dev.tsv").to_str().unwrap(),
        "--gold",
        data.join("gold.tsv").to_str().unwrap(),
        "--objective",
        "topk",
        "--steps",
        "12",
        "--warmup",
        "4",
        "--embed-dim",
        "4",
        "--hidden-dim",
        "4",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let (_, rows) = xpr::report::parse_metrics_csv(&csv).unwrap();
    assert!(rows.last().unwrap().coverage.is_some());
}

#[test]
fn usage_errors_exit_with_one() {
    let o = xpr(&["train", "--objective", "bogus", "--out", "x"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("st | topk | repulsion | gentle | sparse | reinforce"),
        "{err}"
    );

    assert_eq!(
        xpr(&["train", "--colour", "red", "--out", "x"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(xpr(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(xpr(&[]).status.code(), Some(1));
    assert_eq!(xpr(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = xpr(&["eval", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let bad = xpr(&[
        "train",
        "--lambda=-1",
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}
