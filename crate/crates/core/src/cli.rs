//! Command-line surface: `learn-metric`, `score`, `analyze-dims`,
//! `eval-wic`, `eval-scd` and `inspect`.
//!
//! Exit codes: 0 on success, 1 for usage or validation errors, 2 for
//! runtime failures.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{parse_gamma_grid, require_path, ConfigLayer, PipelineConfig};
use crate::data::{read_targets, ConstraintSet, GoldRatings};
use crate::dimensions::{analyze_dimensions, QUARTILE_LABELS};
use crate::encoder::{ProjectionHead, HEAD_MAGIC};
use crate::error::{Error, Result};
use crate::eval::{eval_scd, eval_wic, eval_wic_margin_baseline};
use crate::io::write_atomic;
use crate::itml::{
    constraint_distances, estimate_bounds_with, extract_diagonal, itml_fit, slack_search, MetricMetadata,
    SearchConfig,
};
use crate::metric::{row_importance, MahalanobisMatrix, MetricMode, METRIC_MAGIC};
use crate::scoring::{
    apd_cosine_baseline, occurrence_pairs, read_scores, score_batch_with, scores_to_text, write_scores,
    ChangeScore, ScoreMode, ScoreOptions, Subsample,
};
use crate::store::{EmbeddingStore, STORE_MAGIC};

#[derive(Parser, Debug)]
#[command(name = "semshift", version, about = "Sense-aware semantic change detection with a learned metric")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a Mahalanobis metric to labelled occurrence pairs.
    LearnMetric(LearnArgs),
    /// Score target words by average pairwise distance across two corpora.
    Score(ScoreArgs),
    /// Correlate per-dimension change scores with gold ratings.
    AnalyzeDims(AnalyzeArgs),
    /// Same/different-meaning accuracy on a labelled test set.
    EvalWic(EvalWicArgs),
    /// Spearman correlation of change scores with gold ratings.
    EvalScd(EvalScdArgs),
    /// Summarize a store, metric or projection-head file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML settings file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct LearnArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Training pairs, `id1<TAB>id2<TAB>label`.
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Development pairs for choosing the slack parameter.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// `default` or comma-separated values; needs --dev.
    #[arg(long)]
    gamma_grid: Option<String>,
    /// Slack parameter used when there is no development set.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long)]
    convergence_tol: Option<f64>,
    /// Reshuffle constraints every sweep (seeded).
    #[arg(long)]
    shuffle: bool,
    #[arg(long)]
    percentile_similar: Option<f64>,
    #[arg(long)]
    percentile_dissimilar: Option<f64>,
    /// `full` or `diagonal`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    metric: Option<PathBuf>,
    /// `word<TAB>corpus1<TAB>corpus2` per line.
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// `full`, `diagonal` or `baseline-cosine`; defaults to the metric's own mode.
    #[arg(long)]
    mode: Option<String>,
    /// Average a seeded sample of at most this many pairs per word.
    #[arg(long)]
    max_pairs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    metric: Option<PathBuf>,
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Output directory for the report files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalWicArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Fitted metric; its `.meta` sidecar supplies the decision bounds.
    #[arg(long)]
    metric: Option<PathBuf>,
    /// `full` or `diagonal`; defaults to the metric's own mode.
    #[arg(long)]
    mode: Option<String>,
    /// Use the raw cosine-distance margin rule instead of a metric.
    #[arg(long)]
    cosine_baseline: bool,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalScdArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    path: PathBuf,
}

fn base_layer(common: &Common) -> ConfigLayer {
    ConfigLayer {
        seed: common.seed,
        ..Default::default()
    }
}

fn resolve(common: &Common, flags: ConfigLayer) -> Result<PipelineConfig> {
    let file = common.config.as_deref().map(ConfigLayer::read).transpose()?;
    PipelineConfig::resolve(flags, file)
}

/// Runs the CLI with process stdout/stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Runs the CLI writing reports to `out` and diagnostics to `err`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    let name = subcommand_name(&cli.command);
    let mut report = String::new();
    let result = dispatch(cli.command, &mut report, err);
    let _ = out.write_all(report.as_bytes());
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_validation() {
                if let Some(sub) = Cli::command().find_subcommand_mut(name) {
                    let _ = writeln!(err, "\n{}", sub.render_usage());
                }
                1
            } else {
                2
            }
        }
    }
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::LearnMetric(_) => "learn-metric",
        Command::Score(_) => "score",
        Command::AnalyzeDims(_) => "analyze-dims",
        Command::EvalWic(_) => "eval-wic",
        Command::EvalScd(_) => "eval-scd",
        Command::Inspect(_) => "inspect",
    }
}

fn dispatch(command: Command, out: &mut String, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::LearnMetric(a) => learn_metric(a, out, err),
        Command::Score(a) => score(a, out, err),
        Command::AnalyzeDims(a) => analyze(a, out),
        Command::EvalWic(a) => evaluate_wic(a, out),
        Command::EvalScd(a) => evaluate_scd(a, out),
        Command::Inspect(a) => inspect(&a.path, out),
    }
}

/// Loads a metric and converts it to the requested mode.
fn load_metric(path: &Path, mode: Option<ScoreMode>) -> Result<MahalanobisMatrix> {
    let a = MahalanobisMatrix::load(path)?;
    match mode {
        None => Ok(a),
        Some(ScoreMode::Diagonal) => a.to_diagonal(),
        Some(ScoreMode::Full) if a.mode() == MetricMode::Full => Ok(a),
        Some(ScoreMode::Full) => MahalanobisMatrix::from_full(a.dim(), a.to_dense()),
        Some(ScoreMode::BaselineCosine) => Err(Error::Input(
            "mode baseline-cosine does not use a metric".into(),
        )),
    }
}

fn learn_metric(args: LearnArgs, out: &mut String, err: &mut dyn Write) -> Result<()> {
    let flags = ConfigLayer {
        store: args.store,
        constraints: args.constraints,
        dev: args.dev,
        out: args.out,
        gamma: args.gamma,
        gamma_grid: args.gamma_grid.as_deref().map(parse_gamma_grid).transpose()?,
        max_sweeps: args.max_sweeps,
        convergence_tol: args.convergence_tol,
        shuffle: args.shuffle.then_some(true),
        percentile_similar: args.percentile_similar,
        percentile_dissimilar: args.percentile_dissimilar,
        mode: args.mode,
        ..base_layer(&args.common)
    };
    let grid_given = flags.gamma_grid.is_some();
    let cfg = resolve(&args.common, flags)?;
    let store_path = require_path(&cfg.store, "store")?;
    let train_path = require_path(&cfg.constraints, "constraints")?;
    let out_path = require_path(&cfg.out, "out")?;
    let mode = match cfg.mode {
        None | Some(ScoreMode::Full) => MetricMode::Full,
        Some(ScoreMode::Diagonal) => MetricMode::Diagonal,
        Some(ScoreMode::BaselineCosine) => {
            return Err(Error::Input("learn-metric mode must be full or diagonal".into()))
        }
    };

    let store = EmbeddingStore::read(store_path)?;
    let train = ConstraintSet::read(train_path, &store)?;
    let (same, diff) = train.label_counts();
    let _ = writeln!(err, "training pairs: {same} same, {diff} different");

    let (gamma, bounds, state) = match &cfg.dev {
        Some(dev_path) => {
            let dev = ConstraintSet::read(dev_path, &store)?;
            let search = SearchConfig {
                itml: cfg.itml,
                percentiles: cfg.percentiles,
                parallel: true,
            };
            let res = slack_search(&train, &dev, &store, &cfg.gamma_grid, &search)?;
            for w in &res.bounds.warnings {
                let _ = writeln!(err, "warning: {w:?}");
            }
            for p in &res.grid {
                match &p.outcome {
                    Ok(acc) => {
                        let _ = writeln!(out, "grid gamma={} dev_accuracy={acc}", p.gamma);
                    }
                    Err(e) => {
                        let _ = writeln!(out, "grid gamma={} failed: {e}", p.gamma);
                    }
                }
            }
            let _ = writeln!(out, "dev_accuracy = {}", res.best_accuracy());
            (res.best_gamma, res.bounds.bounds, res.state)
        }
        None => {
            if grid_given {
                let _ = writeln!(err, "note: --gamma-grid ignored without --dev; using gamma = {}", cfg.itml.gamma);
            }
            let a0 = MahalanobisMatrix::identity(store.dim());
            let (pos, neg) = constraint_distances(&store, &train, &a0)?;
            let est = estimate_bounds_with(&pos, &neg, cfg.percentiles)?;
            for w in &est.warnings {
                let _ = writeln!(err, "warning: {w:?}");
            }
            let state = itml_fit(&store, &train, est.bounds, &cfg.itml, &a0)?;
            (cfg.itml.gamma, est.bounds, state)
        }
    };
    for w in &state.warnings {
        let _ = writeln!(err, "warning: {w:?}");
    }
    let metric = match mode {
        MetricMode::Full => state.matrix.clone(),
        MetricMode::Diagonal => extract_diagonal(&state)?,
    };
    metric.save(out_path)?;
    let meta = MetricMetadata::new(gamma, bounds, cfg.percentiles, &state, mode);
    meta.save(out_path)?;
    out.push_str(&meta.to_text());
    Ok(())
}

fn score(args: ScoreArgs, out: &mut String, err: &mut dyn Write) -> Result<()> {
    let flags = ConfigLayer {
        store: args.store,
        metric: args.metric,
        targets: args.targets,
        workers: args.workers,
        mode: args.mode,
        max_pairs: args.max_pairs,
        out: args.out,
        ..base_layer(&args.common)
    };
    let cfg = resolve(&args.common, flags)?;
    let store = EmbeddingStore::read(require_path(&cfg.store, "store")?)?;
    let targets = read_targets(require_path(&cfg.targets, "targets")?)?;
    let pairs = occurrence_pairs(&store, &targets);

    let results: Vec<Result<ChangeScore>> = if cfg.mode == Some(ScoreMode::BaselineCosine) {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;
        pool.install(|| {
            pairs
                .par_iter()
                .map(|(s1, s2)| apd_cosine_baseline(s1, s2, &store))
                .collect()
        })
    } else {
        let a = load_metric(require_path(&cfg.metric, "metric")?, cfg.mode)?;
        let options = ScoreOptions {
            subsample: cfg.max_pairs.map(|max_pairs| Subsample {
                max_pairs,
                seed: cfg.seed,
            }),
        };
        score_batch_with(&a, &pairs, &store, cfg.workers, &options)?
    };

    let mut scores = Vec::with_capacity(results.len());
    let mut failures = 0usize;
    for r in results {
        match r {
            Ok(s) => scores.push(s),
            Err(e) => {
                failures += 1;
                let _ = writeln!(err, "error: {e}");
            }
        }
    }
    match &cfg.out {
        Some(p) => write_scores(p, &scores)?,
        None => out.push_str(&scores_to_text(&scores)),
    }
    if failures > 0 {
        return Err(Error::Numeric(format!("{failures} of {} targets could not be scored", targets.len())));
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs, out: &mut String) -> Result<()> {
    let flags = ConfigLayer {
        store: args.store,
        metric: args.metric,
        targets: args.targets,
        gold: args.gold,
        out: args.out,
        ..base_layer(&args.common)
    };
    let cfg = resolve(&args.common, flags)?;
    let store = EmbeddingStore::read(require_path(&cfg.store, "store")?)?;
    let a = MahalanobisMatrix::load(require_path(&cfg.metric, "metric")?)?;
    let targets = read_targets(require_path(&cfg.targets, "targets")?)?;
    let gold = GoldRatings::read(require_path(&cfg.gold, "gold")?)?;
    let report = analyze_dimensions(&a, &targets, &store, &gold)?;
    if let Some(dir) = &cfg.out {
        report.write(dir)?;
    }
    if !report.undefined_dims.is_empty() {
        let _ = writeln!(out, "undefined_dims = {:?}", report.undefined_dims);
    }
    let _ = writeln!(out, "# top dimensions by |correlation|");
    for &i in report.dim_order.iter().take(10) {
        let _ = writeln!(
            out,
            "{i}\t{}\t{}",
            report.per_dim_correlation[i], QUARTILE_LABELS[report.importance_quartile[i]]
        );
    }
    out.push('\n');
    out.push_str(&report.confusion_text());
    Ok(())
}

fn evaluate_wic(args: EvalWicArgs, out: &mut String) -> Result<()> {
    let flags = ConfigLayer {
        store: args.store,
        test: args.test,
        metric: args.metric,
        mode: args.mode,
        margin: args.margin,
        out: args.out,
        ..base_layer(&args.common)
    };
    let cfg = resolve(&args.common, flags)?;
    let store = EmbeddingStore::read(require_path(&cfg.store, "store")?)?;
    let test = ConstraintSet::read(require_path(&cfg.test, "test")?, &store)?;
    let result = if args.cosine_baseline {
        eval_wic_margin_baseline(&test, &store, cfg.margin)?
    } else {
        let path = require_path(&cfg.metric, "metric")?;
        let a = load_metric(path, cfg.mode)?;
        let bounds = MetricMetadata::load(path)?.bounds()?;
        eval_wic(&a, &bounds, &test, &store)?
    };
    let text = result.report_text();
    match &cfg.out {
        Some(p) => {
            write_atomic(p, text.as_bytes())?;
            out.push_str(text.split("\n\n").next().unwrap_or(""));
            out.push('\n');
        }
        None => out.push_str(&text),
    }
    Ok(())
}

fn evaluate_scd(args: EvalScdArgs, out: &mut String) -> Result<()> {
    let flags = ConfigLayer {
        scores: args.scores,
        gold: args.gold,
        out: args.out,
        ..base_layer(&args.common)
    };
    let cfg = resolve(&args.common, flags)?;
    let scores = read_scores(require_path(&cfg.scores, "scores")?)?;
    let gold = GoldRatings::read(require_path(&cfg.gold, "gold")?)?;
    let result = eval_scd(&scores, &gold)?;
    let text = result.report_text();
    match &cfg.out {
        Some(p) => {
            write_atomic(p, text.as_bytes())?;
            let _ = writeln!(out, "spearman_r = {}", result.spearman_r);
            let _ = writeln!(out, "n_targets = {}", result.n_targets);
        }
        None => out.push_str(&text),
    }
    Ok(())
}

fn inspect(path: &Path, out: &mut String) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let magic = bytes.get(..4).ok_or_else(|| Error::format(path, "file shorter than its magic"))?;
    if magic == STORE_MAGIC {
        let store = EmbeddingStore::read(path)?;
        let mut words: Vec<&str> = store.manifest().iter().map(|r| r.word.as_str()).collect();
        words.sort_unstable();
        words.dedup();
        let mut corpora: Vec<&str> = store.manifest().iter().map(|r| r.corpus_id.as_str()).collect();
        corpora.sort_unstable();
        corpora.dedup();
        let _ = writeln!(out, "kind = embedding-store");
        let _ = writeln!(out, "dim = {}", store.dim());
        let _ = writeln!(out, "rows = {}", store.len());
        let _ = writeln!(out, "words = {}", words.len());
        let _ = writeln!(out, "corpora = {}", corpora.join(","));
    } else if magic == METRIC_MAGIC {
        let a = MahalanobisMatrix::from_bytes(&bytes, path)?;
        let pd = a.check_positive_definite()?;
        let _ = writeln!(out, "kind = metric");
        let _ = writeln!(out, "dim = {}", a.dim());
        let _ = writeln!(out, "mode = {}", a.mode().as_str());
        let _ = writeln!(out, "positive_definite = {}", pd.positive_definite);
        let _ = writeln!(out, "min_pivot = {}", pd.min_pivot);
        let _ = writeln!(out, "max_asymmetry = {}", a.max_asymmetry());
        let imp = row_importance(&a);
        let mut order: Vec<usize> = (0..imp.len()).collect();
        order.sort_by(|&x, &y| imp[y].total_cmp(&imp[x]).then(x.cmp(&y)));
        let top: Vec<String> = order.iter().take(10).map(|i| i.to_string()).collect();
        let _ = writeln!(out, "top_rows_by_importance = {}", top.join(","));
        if MetricMetadata::path_for(path).exists() {
            let meta = MetricMetadata::load(path)?;
            out.push_str("\n# metadata\n");
            out.push_str(&meta.to_text());
        }
    } else if magic == HEAD_MAGIC {
        let h = ProjectionHead::from_bytes(&bytes, path)?;
        let norm: f64 = h.weights().iter().map(|w| w * w).sum::<f64>().sqrt();
        let _ = writeln!(out, "kind = projection-head");
        let _ = writeln!(out, "out_dim = {}", h.out_dim());
        let _ = writeln!(out, "in_dim = {}", h.in_dim());
        let _ = writeln!(out, "frobenius_norm = {norm}");
    } else {
        return Err(Error::format(path, format!("unrecognized magic {magic:?}")));
    }
    Ok(())
}
