use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use xpr::checks;
use xpr::datagen::{Dataset, DomainSpec};
use xpr::metrics::{denotation_accuracy, exact_match_accuracy};
use xpr::model::{load_checkpoint, save_checkpoint};
use xpr::report::{diagnostic_plots, final_values, parse_metrics_csv, records_csv, MetricsRow};
use xpr::training::{run, tune_lambda, TrainConfig, TrainData, LAMBDA_GRID};
use xpr::{Error, Objective, Result};

const METRICS_FILE: &str = "metrics.csv";
const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Parser, Debug)]
#[command(
    name = "xpr",
    version,
    about = "Semi-supervised semantic parsing from program executability"
)]
struct Cli {
    /// Worker threads for batch evaluation (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic KB, corpus, hidden gold and dev set
    Gen(GenArgs),
    /// Train a parser and write metrics, plots and a checkpoint
    Train(TrainArgs),
    /// Evaluate a trained run on its dev set or another labeled corpus
    Eval(EvalArgs),
    /// Redraw plots and summarize one or more metrics files
    Analyze(AnalyzeArgs),
    /// Run the numerical oracle suites
    Selfcheck(SelfcheckArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Knowledge base file (requires --corpus)
    #[arg(long, requires = "corpus")]
    kb: Option<PathBuf>,
    /// Corpus TSV (requires --kb); without it a synthetic corpus is generated
    #[arg(long, requires = "kb")]
    corpus: Option<PathBuf>,
    /// Dev TSV; defaults to holding out --dev-size labeled examples
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Hidden gold TSV for coverage diagnostics
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    labeled_frac: f64,
    /// Synthetic examples before the dev holdout
    #[arg(long, default_value_t = 1100)]
    examples: usize,
    #[arg(long, default_value_t = 100)]
    dev_size: usize,
    /// Seed of the synthetic corpus
    #[arg(long, default_value_t = 7)]
    data_seed: u64,
    #[arg(long, default_value_t = 2)]
    max_conjuncts: usize,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        match (&self.kb, &self.corpus) {
            (Some(kb), Some(corpus)) => Dataset::from_files(
                kb,
                corpus,
                self.dev.as_deref(),
                self.gold.as_deref(),
                self.dev_size,
                self.max_conjuncts,
            ),
            _ => {
                let mut spec = DomainSpec::restaurants(self.examples, self.data_seed);
                spec.max_conjuncts = self.max_conjuncts;
                Dataset::synthetic(&spec, self.dev_size, self.labeled_frac)
            }
        }
    }

    fn describe(&self) -> String {
        match (&self.kb, &self.corpus) {
            (Some(kb), Some(corpus)) => format!(
                "data kb={} corpus={} dev={} gold={} dev_size={} max_conjuncts={}",
                kb.display(),
                corpus.display(),
                self.dev.as_ref().map_or("holdout".into(), |p| p.display().to_string()),
                self.gold.as_ref().map_or("none".into(), |p| p.display().to_string()),
                self.dev_size,
                self.max_conjuncts
            ),
            _ => format!(
                "data synthetic=restaurants examples={} dev_size={} labeled_frac={} data_seed={} max_conjuncts={}",
                self.examples, self.dev_size, self.labeled_frac, self.data_seed, self.max_conjuncts
            ),
        }
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Same as --data-seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// st | topk | repulsion | gentle | sparse | reinforce
    #[arg(long, default_value = "sparse")]
    objective: Objective,
    /// Weight of the unsupervised term; 0 trains on labeled data only
    #[arg(long, default_value_t = 0.3)]
    lambda: f64,
    /// Pick lambda from the grid by final dev accuracy before training
    #[arg(long, conflicts_with = "lambda")]
    tune_lambda: bool,
    #[arg(long, default_value_t = 16)]
    beam: usize,
    /// Supervised-only steps before the unsupervised term is switched on
    #[arg(long, default_value_t = 1000)]
    warmup: usize,
    #[arg(long, default_value_t = 3000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_labeled: usize,
    #[arg(long, default_value_t = 8)]
    batch_unlabeled: usize,
    #[arg(long, default_value_t = 100)]
    eval_every: usize,
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    hidden_dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Run directory written by `xpr train`
    #[arg(long)]
    out: PathBuf,
    /// Labeled corpus TSV to evaluate on instead of the run's dev set
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Knowledge base to execute against instead of the run's KB
    #[arg(long)]
    kb: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Metrics files; defaults to <out>/metrics.csv
    metrics: Vec<PathBuf>,
    /// Directory for the plots
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("XPR_LOG", "info"))
        .format_timestamp(None)
        .init();
    dispatch(std::env::args_os())
}

fn dispatch(argv: impl IntoIterator<Item = OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
        Command::Selfcheck(a) => selfcheck(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn gen(mut a: GenArgs) -> Result<bool> {
    if let Some(s) = a.seed {
        a.data.data_seed = s;
    }
    let ds = a.data.load()?;
    let header = vec!["xpr gen".to_string(), a.data.describe()];
    ds.write_dir(&a.out, &header)?;
    println!(
        "wrote {} labeled, {} unlabeled, {} dev examples to {}",
        ds.corpus.labeled.len(),
        ds.corpus.unlabeled.len(),
        ds.dev.len(),
        a.out.display()
    );
    Ok(true)
}

fn train(a: TrainArgs) -> Result<bool> {
    let ds = a.data.load()?;
    let data = TrainData::new(ds.kb.clone(), &ds.corpus, &ds.dev, ds.max_conjuncts)?;
    let mut cfg = TrainConfig {
        objective: a.objective,
        lambda: a.lambda,
        warmup_steps: a.warmup,
        max_steps: a.steps,
        batch_labeled: a.batch_labeled,
        batch_unlabeled: a.batch_unlabeled,
        lr: a.lr,
        seed: a.seed,
        beam: a.beam,
        eval_every: a.eval_every,
        embed_dim: a.embed_dim,
        hidden_dim: a.hidden_dim,
    };
    cfg.validate()?;
    if a.tune_lambda {
        let (best, scores) = tune_lambda(&data, &cfg, &LAMBDA_GRID)?;
        for (l, acc) in scores {
            log::info!("lambda {l}: dev accuracy {acc:.3}");
        }
        cfg.lambda = best;
    }
    let header = vec![
        "xpr train".to_string(),
        format!("config {cfg}"),
        a.data.describe(),
        format!("model params={}", data.model_config(&cfg).num_params()),
    ];
    ds.write_dir(&a.out, &header)?;
    let result = run(&data, &cfg, |_| {})?;
    let csv = records_csv(&header, &result.records);
    fs::write(a.out.join(METRICS_FILE), &csv)?;
    save_checkpoint(
        &a.out.join(CHECKPOINT_FILE),
        result.model.config(),
        &result.theta,
    )?;
    let (_, rows) = parse_metrics_csv(&csv)?;
    write_plots(&a.out, &header, &rows)?;
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    println!(
        "{}: dev_denotation_acc={} coverage={} avg_ratio={}",
        cfg.label(),
        fmt(result.final_dev_accuracy()),
        fmt(result.diagnostics.coverage().ok()),
        fmt(result.diagnostics.avg_ratio().ok())
    );
    Ok(true)
}

fn header_value<'a>(header: &'a [String], prefix: &str) -> Option<&'a str> {
    header.iter().find_map(|h| h.strip_prefix(prefix))
}

fn eval(a: EvalArgs) -> Result<bool> {
    let text = fs::read_to_string(a.out.join(METRICS_FILE))?;
    let (header, _) = parse_metrics_csv(&text)?;
    let cfg: TrainConfig = header_value(&header, "config ")
        .ok_or_else(|| Error::Config("metrics header has no config line".into()))?
        .parse()?;
    let max_conjuncts = header_value(&header, "data ")
        .and_then(|d| {
            d.split_whitespace()
                .find_map(|t| t.strip_prefix("max_conjuncts="))
        })
        .map_or(Ok(2), |v| {
            v.parse()
                .map_err(|_| Error::Config(format!("bad max_conjuncts `{v}`")))
        })?;
    let mut ds = Dataset::read_dir(&a.out, max_conjuncts)?;
    if let Some(c) = &a.corpus {
        ds.dev = xpr::datagen::corpus_from_tsv(&fs::read_to_string(c)?)?.labeled;
    }
    let kb = match &a.kb {
        Some(p) => xpr::KnowledgeBase::parse(&fs::read_to_string(p)?)?,
        None => ds.kb.clone(),
    };
    let data = TrainData::new(ds.kb.clone(), &ds.corpus, &ds.dev, ds.max_conjuncts)?;
    let model = data.model(&cfg)?;
    let theta = load_checkpoint(&a.out.join(CHECKPOINT_FILE), model.config())?;
    println!(
        "examples={} denotation_accuracy={:.4} exact_match={:.4}",
        data.dev.len(),
        denotation_accuracy(&model, &theta, &data.dev, &kb),
        exact_match_accuracy(&model, &theta, &data.dev)
    );
    Ok(true)
}

fn write_plots(dir: &Path, header: &[String], rows: &[MetricsRow]) -> Result<()> {
    for (name, svg) in diagnostic_plots(header, rows) {
        fs::write(dir.join(name), svg)?;
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<bool> {
    let files = if a.metrics.is_empty() {
        vec![a.out.join(METRICS_FILE)]
    } else {
        a.metrics.clone()
    };
    let mut header = Vec::new();
    let mut tables = Vec::new();
    for f in &files {
        let (h, rows) = parse_metrics_csv(&fs::read_to_string(f)?)?;
        header.push(format!("source {}", f.display()));
        header.extend(h);
        tables.push((f, rows));
    }
    let mut counts = std::collections::BTreeMap::<String, usize>::new();
    for (_, rows) in &tables {
        let mut objs: Vec<&str> = rows.iter().map(|r| r.objective.as_str()).collect();
        objs.dedup();
        for o in objs {
            *counts.entry(o.to_string()).or_default() += 1;
        }
    }
    let mut rows = Vec::new();
    for (i, (_, table)) in tables.into_iter().enumerate() {
        for mut r in table {
            if counts[&r.objective] > 1 {
                r.objective = format!("{} #{}", r.objective, i + 1);
            }
            rows.push(r);
        }
    }
    fs::create_dir_all(&a.out)?;
    write_plots(&a.out, &header, &rows)?;
    let ratio = final_values(&rows, |r| r.avg_ratio);
    let cov = final_values(&rows, |r| r.coverage);
    let acc = final_values(&rows, |r| r.dev_denotation_acc);
    println!(
        "{:<16} {:>10} {:>10} {:>10}",
        "objective", "dev_acc", "coverage", "avg_ratio"
    );
    let fmt = |v: Option<&f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for name in acc
        .keys()
        .chain(cov.keys())
        .collect::<std::collections::BTreeSet<_>>()
    {
        println!(
            "{name:<16} {:>10} {:>10} {:>10}",
            fmt(acc.get(name)),
            fmt(cov.get(name)),
            fmt(ratio.get(name))
        );
    }
    Ok(true)
}

fn selfcheck(a: SelfcheckArgs) -> Result<bool> {
    let reports = checks::selfcheck(a.seed)?;
    for r in &reports {
        println!("{r}");
    }
    let (_, top1) = checks::beam_suite(1000, a.seed)?;
    println!(
        "informational, top-1 across beam widths 1/4/16: {} of {} runs stable",
        top1.cases - top1.violations,
        top1.cases
    );
    Ok(reports.iter().all(|r| r.passed()))
}
