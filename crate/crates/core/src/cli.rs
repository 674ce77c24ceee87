//! Subcommands behind the `cascade-rte` binary. Each command takes a
//! resolved [`RunConfig`] and writes its artifacts under a run directory.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{analyze_corpus, render_analysis, CorpusAnalysis};
use crate::config::{Precision, RunConfig};
use crate::data::{
    generate_synthetic_corpus, load_corpus, tokenize, write_corpus, AnnotatedSentence, RelationSchema,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_subsets, micro_prf, render_table, MatchMode, MetricReport, SubsetReport};
use crate::harness::{compare_losses, render_comparison, ComparisonReport};
use crate::model::{Checkpoint, Model, PredictionRecord};
use crate::scalar::Scalar;
use crate::training::{gating_report, sub_seed, EpochRecord, StageGating, Trainer};

/// Environment variable holding the log filter (for example `info`).
pub const LOG_ENV: &str = "CASCADE_RTE_LOG";

#[derive(Debug, Parser)]
#[command(name = "cascade-rte", version, about = "Cascade relational triple extraction")]
pub struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.loss.variant=focal`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Run on a single thread.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus split into train/dev/test plus a schema.
    GenData,
    /// Train a model.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        mode: Option<MatchMode>,
    },
    /// Extract triples from a corpus file or plain text (one sentence per line).
    Extract {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        input: PathBuf,
    },
    /// Sample-count and imbalance report.
    Analyze {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        training_log: Option<PathBuf>,
    },
    /// Train once per loss variant and tabulate the results.
    CompareLosses,
}

pub fn main_entry() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides.clone();
    if cli.deterministic {
        overrides.push("deterministic=true".into());
    }
    let mut cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if cfg.deterministic {
        // Fails only when a pool already exists, which is fine in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match cli.command {
        Command::GenData => {
            let g = cmd_gen_data(&cfg)?;
            println!("{}", g.train.parent().unwrap_or(Path::new(".")).display());
        }
        Command::Train { resume } => {
            let t = cmd_train(&cfg, resume.as_deref())?;
            println!("{}", t.run_dir.display());
        }
        Command::Eval { checkpoint, mode } => {
            if let Some(m) = mode {
                cfg.eval.mode = m;
            }
            let out = cmd_eval(&cfg, checkpoint.as_deref())?;
            print!("{}", render_table(&out.report.subsets));
        }
        Command::Extract { checkpoint, input } => {
            let path = cmd_extract(&cfg, checkpoint.as_deref(), &input)?;
            println!("{}", path.display());
        }
        Command::Analyze { corpus, training_log } => {
            if corpus.is_some() {
                cfg.analyze.corpus = corpus;
            }
            if training_log.is_some() {
                cfg.analyze.training_log = training_log;
            }
            let out = cmd_analyze(&cfg)?;
            print!("{}", render_analysis(&out.report.corpus));
        }
        Command::CompareLosses => {
            let out = cmd_compare_losses(&cfg)?;
            print!("{}", render_comparison(&out.report));
        }
    }
    Ok(())
}

fn write_file(path: &Path, body: &[u8]) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut body = serde_json::to_vec_pretty(value)?;
    body.push(b'\n');
    write_file(path, &body)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Creates the run directory: `output.run_dir` when set, otherwise a fresh
/// `{timestamp}-seed{seed}` directory under `output.root`.
pub fn run_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = match &cfg.output.run_dir {
        Some(d) => d.clone(),
        None => {
            let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
            let base = cfg.output.root.join(format!("{stamp}-seed{}", cfg.seed));
            let mut dir = base.clone();
            let mut k = 2;
            while dir.exists() {
                dir = PathBuf::from(format!("{}-{k}", base.display()));
                k += 1;
            }
            dir
        }
    };
    create_dir(&dir)?;
    Ok(dir)
}

fn load_schema(cfg: &RunConfig) -> Result<RelationSchema> {
    RelationSchema::load(cfg.require(&cfg.data.schema, "data.schema")?)
}

fn load_split(path: &Path, schema: &RelationSchema, name: &str) -> Result<Vec<AnnotatedSentence>> {
    let corpus = load_corpus(path, schema)?;
    if corpus.sentences.is_empty() {
        return Err(Error::Data(format!("{name} corpus {} has no usable sentences", path.display())));
    }
    Ok(corpus.sentences)
}

// ---------------------------------------------------------------------------
// gen-data

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratedData {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    pub schema: PathBuf,
    pub sizes: [usize; 3],
}

/// Split sizes from fractions by largest remainder.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, r) in sizes.iter_mut().zip(&raw) {
        *s = r.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<GeneratedData> {
    let g = &cfg.generate;
    let corpus = generate_synthetic_corpus(&g.corpus, sub_seed(cfg.seed, "data"))?;
    create_dir(&g.out_dir)?;
    let sizes = split_sizes(corpus.sentences.len(), g.split);
    let paths = ["train.json", "dev.json", "test.json"].map(|f| g.out_dir.join(f));
    let mut start = 0;
    for (path, &n) in paths.iter().zip(&sizes) {
        write_corpus(path, &corpus.sentences[start..start + n], &corpus.schema)?;
        start += n;
    }
    let schema = g.out_dir.join("schema.json");
    corpus.schema.save(&schema)?;
    write_json(
        &g.out_dir.join("generation.json"),
        &json!({ "seed": cfg.seed, "sizes": sizes, "config": cfg.echo() }),
    )?;
    log::info!("wrote {} sentences to {}", corpus.sentences.len(), g.out_dir.display());
    let [train, dev, test] = paths;
    Ok(GeneratedData {
        train,
        dev,
        test,
        schema,
        sizes,
    })
}

// ---------------------------------------------------------------------------
// train

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainArtifacts {
    pub run_dir: PathBuf,
    pub log: PathBuf,
    /// Best-dev checkpoint when a dev split was given, otherwise the last.
    pub checkpoint: PathBuf,
    pub last: PathBuf,
    pub best: Option<PathBuf>,
    pub epochs: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Header {
        seed: u64,
        precision: Precision,
        resumed_from_epoch: Option<usize>,
        config: serde_json::Value,
    },
    Epoch(EpochRecord),
}

pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainArtifacts> {
    match cfg.precision {
        Precision::F32 => train_with::<f32>(cfg, resume),
        Precision::F64 => train_with::<f64>(cfg, resume),
    }
}

fn train_with<T: Scalar>(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainArtifacts> {
    let schema = load_schema(cfg)?;
    let train = load_split(cfg.require(&cfg.data.train, "data.train")?, &schema, "train")?;
    let dev = match &cfg.data.dev {
        Some(p) => Some(load_split(p, &schema, "dev")?),
        None => None,
    };

    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.schema != schema {
                return Err(Error::Schema(format!(
                    "checkpoint relations {:?} differ from {:?}",
                    ck.schema.names(),
                    schema.names()
                )));
            }
            Trainer::<T>::from_checkpoint(&ck, cfg.train.clone())?
        }
        None => Trainer::<T>::new(&train, &schema, cfg.model, cfg.train.clone())?,
    };
    let resumed_from_epoch = resume.map(|_| trainer.epochs_done());

    let dir = run_dir(cfg)?;
    let log_path = dir.join("train_log.jsonl");
    let last = dir.join("checkpoint_last.json");
    let best = dir.join("checkpoint_best.json");
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut emit = |line: &LogLine| -> Result<()> {
        let mut body = serde_json::to_vec(line)?;
        body.push(b'\n');
        log_file.write_all(&body).map_err(|e| Error::io(&log_path, e))
    };
    emit(&LogLine::Header {
        seed: cfg.seed,
        precision: cfg.precision,
        resumed_from_epoch,
        config: cfg.echo(),
    })?;

    let mut wrote_best = false;
    while !trainer.finished() {
        let before = trainer.best_dev_f1();
        let rec = trainer.run_epoch(&train, dev.as_deref())?;
        log::info!(
            "epoch {:>4}  loss {:.5}  dev F1 {}",
            rec.epoch,
            rec.total_loss,
            rec.dev_f1.map_or("-".into(), |f| format!("{f:.4}"))
        );
        emit(&LogLine::Epoch(rec))?;
        let ck = trainer.checkpoint(cfg.echo());
        ck.save(&last)?;
        if trainer.best_dev_f1() != before {
            ck.save(&best)?;
            wrote_best = true;
        }
    }
    if !last.exists() {
        // Resumed at or past the final epoch.
        trainer.checkpoint(cfg.echo()).save(&last)?;
    }
    let best = wrote_best.then_some(best);
    Ok(TrainArtifacts {
        checkpoint: best.clone().unwrap_or_else(|| last.clone()),
        run_dir: dir,
        log: log_path,
        last,
        best,
        epochs: trainer.epochs_done(),
    })
}

/// Reads a training log written by `train`.
pub fn read_training_log(path: &Path) -> Result<Vec<LogLine>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(index, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                index,
                message: e.to_string(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// eval / extract

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub mode: MatchMode,
    pub exact: MetricReport,
    pub partial: MetricReport,
    pub subsets: Vec<SubsetReport>,
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutput {
    pub run_dir: PathBuf,
    pub report: EvalReport,
}

fn checkpoint_path(cfg: &RunConfig, arg: Option<&Path>) -> Result<PathBuf> {
    arg.map(Path::to_path_buf)
        .or_else(|| cfg.eval.checkpoint.clone())
        .ok_or_else(|| Error::Config("no checkpoint given (`--checkpoint` or `eval.checkpoint`)".into()))
}

/// Loads the checkpoint and checks its schema against `data.schema` when set.
fn load_checkpoint(cfg: &RunConfig, path: &Path) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if cfg.data.schema.is_some() {
        let schema = load_schema(cfg)?;
        if schema != ck.schema {
            return Err(Error::Schema(format!(
                "checkpoint relations {:?} differ from corpus schema {:?}",
                ck.schema.names(),
                schema.names()
            )));
        }
    }
    Ok(ck)
}

fn predict<T: Scalar>(
    ck: &Checkpoint,
    corpus: &[AnnotatedSentence],
    cfg: &RunConfig,
) -> Result<Vec<Vec<crate::model::ScoredTriple>>> {
    let model: Model<T> = ck.model()?;
    Ok(model.extract_corpus(corpus, &cfg.decode))
}

fn predict_any(ck: &Checkpoint, corpus: &[AnnotatedSentence], cfg: &RunConfig) -> Result<Vec<Vec<crate::model::ScoredTriple>>> {
    if ck.scalar == f32::NAME {
        predict::<f32>(ck, corpus, cfg)
    } else {
        predict::<f64>(ck, corpus, cfg)
    }
}

fn write_predictions(path: &Path, corpus: &[AnnotatedSentence], schema: &RelationSchema, preds: &[Vec<crate::model::ScoredTriple>]) -> Result<()> {
    let mut body = Vec::new();
    for (s, p) in corpus.iter().zip(preds) {
        serde_json::to_writer(&mut body, &PredictionRecord::new(s, schema, p))?;
        body.push(b'\n');
    }
    write_file(path, &body)
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalOutput> {
    let ck_path = checkpoint_path(cfg, checkpoint)?;
    let ck = load_checkpoint(cfg, &ck_path)?;
    let test = load_split(cfg.require(&cfg.data.test, "data.test")?, &ck.schema, "test")?;
    let scored = predict_any(&ck, &test, cfg)?;
    let preds: Vec<Vec<_>> = scored.iter().map(|v| v.iter().map(|s| s.triple).collect()).collect();
    let gold: Vec<Vec<_>> = test.iter().map(|s| s.triples().to_vec()).collect();
    let report = EvalReport {
        seed: cfg.seed,
        checkpoint: ck_path,
        mode: cfg.eval.mode,
        exact: micro_prf(&preds, &gold, MatchMode::Exact)?,
        partial: micro_prf(&preds, &gold, MatchMode::Partial)?,
        subsets: evaluate_subsets(&preds, &test, cfg.eval.mode)?,
        config: cfg.echo(),
    };
    let dir = run_dir(cfg)?;
    write_json(&dir.join("eval_report.json"), &report)?;
    let mut text = format!(
        "seed {}  mode {:?}\nexact   P {:.4}  R {:.4}  F1 {:.4}\npartial P {:.4}  R {:.4}  F1 {:.4}\n\n",
        report.seed,
        report.mode,
        report.exact.precision,
        report.exact.recall,
        report.exact.f1,
        report.partial.precision,
        report.partial.recall,
        report.partial.f1,
    );
    text.push_str(&render_table(&report.subsets));
    write_file(&dir.join("eval_report.txt"), text.as_bytes())?;
    write_predictions(&dir.join("predictions.jsonl"), &test, &ck.schema, &scored)?;
    Ok(EvalOutput { run_dir: dir, report })
}

/// Reads sentences to tag: a corpus file (gold triples ignored) or plain
/// text with one sentence per line.
fn read_extract_input(path: &Path, schema: &RelationSchema) -> Result<Vec<AnnotatedSentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.trim_start().chars().next();
    let sentences = if matches!(first, Some('{') | Some('[')) {
        load_corpus(path, schema)?.sentences
    } else {
        text.lines()
            .map(tokenize)
            .filter(|t| !t.is_empty())
            .map(|t| AnnotatedSentence::new(t, vec![]))
            .collect::<Result<Vec<_>>>()?
    };
    if sentences.is_empty() {
        return Err(Error::Data(format!("{} contains no sentences", path.display())));
    }
    Ok(sentences)
}

pub fn cmd_extract(cfg: &RunConfig, checkpoint: Option<&Path>, input: &Path) -> Result<PathBuf> {
    let ck = load_checkpoint(cfg, &checkpoint_path(cfg, checkpoint)?)?;
    let sentences = read_extract_input(input, &ck.schema)?;
    let scored = predict_any(&ck, &sentences, cfg)?;
    let dir = run_dir(cfg)?;
    let out = dir.join("predictions.jsonl");
    write_predictions(&out, &sentences, &ck.schema, &scored)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// analyze

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub seed: u64,
    pub corpus_path: PathBuf,
    pub corpus: CorpusAnalysis,
    /// Gating fractions from the last epoch of the supplied training log.
    pub gating: Option<Vec<StageGating>>,
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisOutput {
    pub run_dir: PathBuf,
    pub report: AnalysisReport,
}

fn render_gating(g: &[StageGating]) -> String {
    let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    let mut out = format!("{:<10} {:>10} {:>10}\n", "stage", "neg gated", "pos gated");
    for s in g {
        out.push_str(&format!("{:<10} {:>10} {:>10}\n", s.stage.name(), f(s.negative), f(s.positive)));
    }
    out
}

pub fn cmd_analyze(cfg: &RunConfig) -> Result<AnalysisOutput> {
    let schema = load_schema(cfg)?;
    let path = cfg
        .analyze
        .corpus
        .clone()
        .or_else(|| cfg.data.train.clone())
        .ok_or_else(|| Error::Config("no corpus given (`analyze.corpus` or `data.train`)".into()))?;
    let corpus = load_corpus(&path, &schema)?.sentences;
    let analysis = analyze_corpus(&corpus, &schema);
    let gating = match &cfg.analyze.training_log {
        Some(p) => read_training_log(p)?
            .into_iter()
            .filter_map(|l| match l {
                LogLine::Epoch(r) => Some(r),
                LogLine::Header { .. } => None,
            })
            .next_back()
            .and_then(|r| gating_report(&r)),
        None => None,
    };
    let report = AnalysisReport {
        seed: cfg.seed,
        corpus_path: path,
        corpus: analysis,
        gating,
        config: cfg.echo(),
    };
    let dir = run_dir(cfg)?;
    write_json(&dir.join("analysis.json"), &report)?;
    let mut text = render_analysis(&report.corpus);
    if let Some(g) = &report.gating {
        text.push('\n');
        text.push_str(&render_gating(g));
    }
    write_file(&dir.join("analysis.txt"), text.as_bytes())?;
    Ok(AnalysisOutput { run_dir: dir, report })
}

// ---------------------------------------------------------------------------
// compare-losses

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonOutput {
    pub run_dir: PathBuf,
    pub report: ComparisonReport,
}

/// Uses `data.train`/`data.test` when set, otherwise a generated corpus
/// split by `generate.split` (train vs. test, dev unused).
pub fn cmd_compare_losses(cfg: &RunConfig) -> Result<ComparisonOutput> {
    let (train, test, schema) = match &cfg.data.train {
        Some(train_path) => {
            let schema = load_schema(cfg)?;
            let train = load_split(train_path, &schema, "train")?;
            let test = match &cfg.data.test {
                Some(p) => load_split(p, &schema, "test")?,
                None => train.clone(),
            };
            (train, test, schema)
        }
        None => {
            let corpus = generate_synthetic_corpus(&cfg.generate.corpus, sub_seed(cfg.seed, "data"))?;
            let [n_train, n_dev, _] = split_sizes(corpus.sentences.len(), cfg.generate.split);
            let train = corpus.sentences[..n_train].to_vec();
            let test = corpus.sentences[n_train + n_dev..].to_vec();
            let test = if test.is_empty() { train.clone() } else { test };
            (train, test, corpus.schema)
        }
    };
    let report = match cfg.precision {
        Precision::F32 => compare_losses::<f32>(&train, &test, &schema, cfg.model, &cfg.train)?,
        Precision::F64 => compare_losses::<f64>(&train, &test, &schema, cfg.model, &cfg.train)?,
    };
    let dir = run_dir(cfg)?;
    write_json(
        &dir.join("loss_comparison.json"),
        &json!({ "seed": cfg.seed, "report": report, "config": cfg.echo() }),
    )?;
    write_file(&dir.join("loss_comparison.txt"), render_comparison(&report).as_bytes())?;
    Ok(ComparisonOutput { run_dir: dir, report })
}
