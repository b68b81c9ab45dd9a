//! Subcommand front end: ingest → pairs → train-lm → embed-code → train →
//! eval → predict, plus gradcheck and synthetic fixtures.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use dupforge::codelm::{
    read_embeddings, train_char_lm, write_embeddings, CharLmModel, EmbeddingTable,
};
use dupforge::codeprep::{canonicalize_text, Lang};
use dupforge::config::Config;
use dupforge::gradsuite::run_gradient_suite;
use dupforge::gridcnn::{train_gridcnn, GridArtifact, CHECKPOINT_KIND as GRID_KIND};
use dupforge::ingest::{
    load_code_corpus, parse_postlinks, parse_posts, read_jsonl, write_jsonl, DuplicateEdge,
    Question,
};
use dupforge::metrics::{confusion_metrics, render_table, MetricsReport, ScoredPair};
use dupforge::nncore::Checkpoint;
use dupforge::pairgen::{generate_pairs, pairs_in, read_pairs, write_pairs, QuestionPair, Split};
use dupforge::siamese::{prepare_inputs, train_siamese, SiameseArtifact, CHECKPOINT_KIND as SIAMESE_KIND};
use dupforge::synth::{bracket_strings, template_task, write_brackets, write_template_task};
use dupforge::train::{score_pairs, PairModel, TrainOutcome};
use dupforge::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "dupforge", version, about = "Code-aware duplicate question detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelKind {
    Siamese,
    Gridcnn,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SynthKind {
    Brackets,
    Templates,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a Stack Exchange dump into questions.jsonl and edges.jsonl.
    Ingest {
        #[arg(long)]
        posts: PathBuf,
        #[arg(long)]
        links: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the labeled, split pair dataset.
    Pairs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain a character language model on a local code corpus.
    TrainLm {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        lang: Lang,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Treat every non-empty line of a corpus file as its own snippet.
        #[arg(long)]
        lines: bool,
    },
    /// Embed every question's code with a trained language model.
    EmbedCode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a pair classifier.
    Train {
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Code embeddings for the Siamese code branch.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one split and print a metrics report as JSON.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Defaults to questions.jsonl next to the pairs file.
        #[arg(long)]
        questions: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print a human-readable table instead of JSON.
        #[arg(long)]
        table: bool,
    },
    /// Score two questions given as JSON files.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Language model used to embed the questions' code.
        #[arg(long)]
        lm: Option<PathBuf>,
    },
    /// Finite-difference gradient checks over every differentiable component.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        trials: usize,
    },
    /// Write synthetic fixtures.
    Synth {
        #[arg(long)]
        kind: SynthKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Supplies split ratios for templates.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Runs one command line (`argv[0]` is the program name) and returns the
/// process exit code. Data goes to `stdout`; progress goes to the logger.
pub fn run<S: AsRef<str>>(argv: &[S], stdout: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv.iter().map(AsRef::as_ref)) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            if e.use_stderr() {
                eprint!("{e}");
            } else {
                let _ = write!(stdout, "{e}");
            }
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_INPUT
            }
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Ingest { posts, links, out } => ingest(&posts, &links, &out),
        Command::Pairs {
            config,
            questions,
            edges,
            out,
        } => pairs(&Config::load(&config)?, &questions, &edges, &out),
        Command::TrainLm {
            config,
            lang,
            corpus,
            out,
            lines,
        } => train_lm(&Config::load(&config)?, lang, &corpus, &out, lines),
        Command::EmbedCode { model, input, out } => embed_code(&model, &input, &out),
        Command::Train {
            model,
            config,
            questions,
            pairs,
            embeddings,
            out,
        } => train(
            model,
            &Config::load(&config)?,
            &questions,
            &pairs,
            embeddings.as_deref(),
            &out,
        ),
        Command::Eval {
            model,
            pairs,
            split,
            questions,
            embeddings,
            out,
            table,
        } => {
            let questions = questions.unwrap_or_else(|| sibling(&pairs, "questions.jsonl"));
            let report = evaluate(&model, &pairs, split, &questions, embeddings.as_deref())?;
            let json = serde_json::to_string(&report)?;
            if let Some(path) = out {
                std::fs::write(&path, format!("{json}\n")).map_err(|e| io_err(&path, e))?;
            }
            if table {
                write_out(stdout, &render_table(&report))?;
            } else {
                write_out(stdout, &format!("{json}\n"))?;
            }
            Ok(EXIT_OK)
        }
        Command::Predict { model, a, b, lm } => {
            let score = predict(&model, &a, &b, lm.as_deref())?;
            write_out(stdout, &format!("{}\n", serde_json::json!({ "score": score })))?;
            Ok(EXIT_OK)
        }
        Command::Gradcheck { seed, trials } => {
            let report = run_gradient_suite(seed, trials)?;
            write_out(stdout, &format!("{}\n", serde_json::to_string_pretty(&report)?))?;
            Ok(if report.passed() { EXIT_OK } else { EXIT_INPUT })
        }
        Command::Synth {
            kind,
            n,
            seed,
            out,
            config,
        } => {
            let ratios = match config {
                Some(p) => Config::load(&p)?.pairgen.ratios,
                None => Config::default().pairgen.ratios,
            };
            synth(kind, n, seed, ratios, &out)
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Input(format!("{}: {e}", path.display()))
}

fn write_out(stdout: &mut dyn Write, text: &str) -> Result<()> {
    stdout
        .write_all(text.as_bytes())
        .and_then(|_| stdout.flush())
        .map_err(|e| Error::Input(format!("stdout: {e}")))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn ingest(posts: &Path, links: &Path, out: &Path) -> Result<i32> {
    let (questions, pstats) = parse_posts(posts)?;
    log::info!(
        "ingest posts rows={} questions={} non_questions={} malformed={} duplicate_ids={}",
        pstats.rows,
        pstats.questions,
        pstats.non_questions,
        pstats.malformed,
        pstats.duplicate_ids
    );
    let (edges, lstats) = parse_postlinks(links)?;
    log::info!(
        "ingest links rows={} duplicates={} other={} malformed={}",
        lstats.rows,
        lstats.duplicates,
        lstats.other_links,
        lstats.malformed
    );
    create_dir(out)?;
    write_jsonl(&out.join("questions.jsonl"), &questions)?;
    write_jsonl(&out.join("edges.jsonl"), &edges)?;
    Ok(EXIT_OK)
}

fn pairs(config: &Config, questions: &Path, edges: &Path, out: &Path) -> Result<i32> {
    let seed = config.require_seed()?;
    let questions: Vec<Question> = read_jsonl(questions)?;
    let edges: Vec<DuplicateEdge> = read_jsonl(edges)?;
    let (pairs, stats) = generate_pairs(&questions, &edges, &config.pairgen, seed)?;
    log::info!(
        "pairs positives={} negatives={} dropped_edges={} fallback={} train={} valid={} test={}",
        stats.positives,
        stats.negatives,
        stats.dropped_edges,
        stats.used_fallback,
        stats.split_counts[0],
        stats.split_counts[1],
        stats.split_counts[2]
    );
    write_pairs(out, &pairs)?;
    Ok(EXIT_OK)
}

fn train_lm(config: &Config, lang: Lang, corpus: &Path, out: &Path, lines: bool) -> Result<i32> {
    let seed = config.require_seed()?;
    let loaded = load_code_corpus(corpus, lang)?;
    log::info!("train-lm files={} skipped={}", loaded.texts.len(), loaded.skipped);
    let raw = if lines {
        dupforge::ingest::corpus::split_lines(&loaded.texts)
    } else {
        loaded.texts
    };
    let canonical: Vec<String> = raw.iter().map(|t| canonicalize_text(t, lang)).collect();
    let trained = train_char_lm(&canonical, lang, &config.codelm, seed)?;
    trained.model.to_checkpoint().save(out)?;
    Ok(EXIT_OK)
}

fn load_lm(path: &Path) -> Result<CharLmModel<f32>> {
    CharLmModel::from_checkpoint(&Checkpoint::load(path)?)
}

fn embed_questions(lm: &CharLmModel<f32>, questions: &[Question]) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(lm.dims().hidden);
    for q in questions {
        let texts: Vec<&str> = q.code_snippets.iter().map(|s| s.canonical.as_str()).collect();
        table.insert(q.id, lm.embed_texts(&texts)?)?;
    }
    Ok(table)
}

fn embed_code(model: &Path, input: &Path, out: &Path) -> Result<i32> {
    let lm = load_lm(model)?;
    let questions: Vec<Question> = read_jsonl(input)?;
    let table = embed_questions(&lm, &questions)?;
    log::info!(
        "embed-code questions={} with_code={}",
        questions.len(),
        table.entries.values().filter(|e| !e.absent).count()
    );
    write_embeddings(out, &table)?;
    Ok(EXIT_OK)
}

fn log_history(outcome: &TrainOutcome<()>) {
    log::info!("train best_epoch={} threshold={}", outcome.best_epoch, outcome.threshold);
}

fn train(
    kind: ModelKind,
    config: &Config,
    questions: &Path,
    pairs: &Path,
    embeddings: Option<&Path>,
    out: &Path,
) -> Result<i32> {
    let seed = config.require_seed()?;
    let questions: Vec<Question> = read_jsonl(questions)?;
    let pairs = read_pairs(pairs)?;
    let min_freq = config.codeprep.min_freq;
    match kind {
        ModelKind::Siamese => {
            let codes = embeddings.map(read_embeddings).transpose()?;
            let (art, outcome) =
                train_siamese(&questions, &pairs, codes.as_ref(), &config.siamese, min_freq, seed)?;
            log_history(&outcome);
            art.save(out)?;
        }
        ModelKind::Gridcnn => {
            if embeddings.is_some() {
                log::warn!("the grid CNN reads code tokens directly; --embeddings ignored");
            }
            let (art, outcome) =
                train_gridcnn(&questions, &pairs, &config.gridcnn, min_freq, seed)?;
            log_history(&outcome);
            art.save(out)?;
        }
    }
    Ok(EXIT_OK)
}

enum Loaded {
    Siamese(SiameseArtifact),
    Grid(GridArtifact),
}

fn load_model(path: &Path) -> Result<Loaded> {
    let ckpt = Checkpoint::load(path)?;
    match ckpt.kind.as_str() {
        SIAMESE_KIND => Ok(Loaded::Siamese(SiameseArtifact::from_checkpoint(&ckpt)?)),
        GRID_KIND => Ok(Loaded::Grid(GridArtifact::from_checkpoint(&ckpt)?)),
        other => Err(Error::Checkpoint(format!(
            "{} holds a {other} checkpoint, not a pair classifier",
            path.display()
        ))),
    }
}

fn siamese_codes(art: &SiameseArtifact, embeddings: Option<&Path>) -> Result<Option<EmbeddingTable>> {
    match (art.code_dim(), embeddings) {
        (0, _) => Ok(None),
        (dim, Some(p)) => {
            let table = read_embeddings(p)?;
            if table.dim != dim {
                return Err(Error::Input(format!(
                    "embeddings have dimension {}, model expects {dim}",
                    table.dim
                )));
            }
            Ok(Some(table))
        }
        (_, None) => Err(Error::Input(
            "this Siamese model uses code embeddings; pass --embeddings".into(),
        )),
    }
}

fn scored<M: PairModel>(
    model: &M,
    inputs: &HashMap<u64, M::Input>,
    pairs: &[QuestionPair],
) -> Result<Vec<ScoredPair>> {
    score_pairs(model, inputs, pairs)
}

/// Scores `split` of `pairs` at the model's stored threshold.
pub fn evaluate(
    model: &Path,
    pairs: &Path,
    split: Split,
    questions: &Path,
    embeddings: Option<&Path>,
) -> Result<MetricsReport> {
    let loaded = load_model(model)?;
    let questions: Vec<Question> = read_jsonl(questions)?;
    let pairs = pairs_in(&read_pairs(pairs)?, split);
    if pairs.is_empty() {
        return Err(Error::EmptyInput(format!("no pairs in the {split} split")));
    }
    let (scores, threshold) = match &loaded {
        Loaded::Siamese(art) => {
            let codes = siamese_codes(art, embeddings)?;
            let inputs = prepare_inputs(&questions, &art.vocab, codes.as_ref(), &art.config);
            (scored(&art.model, &inputs, &pairs)?, art.threshold)
        }
        Loaded::Grid(art) => (scored(&art.model, &art.prepare_all(&questions), &pairs)?, art.threshold),
    };
    let report = confusion_metrics(&scores, threshold)?;
    log::info!(
        "eval split={split} n={} accuracy={:.6} auroc={}",
        report.n,
        report.accuracy,
        report.auroc.map_or("none".into(), |a| format!("{a:.6}"))
    );
    Ok(report)
}

fn read_question(path: &Path) -> Result<Question> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

/// Symmetrized duplicate probability of two questions.
pub fn predict(model: &Path, a: &Path, b: &Path, lm: Option<&Path>) -> Result<f64> {
    let (qa, mut qb) = (read_question(a)?, read_question(b)?);
    // the second question gets its own key so two files with one id stay distinct
    qb.id = if qb.id == qa.id { qa.id.wrapping_add(1) } else { qb.id };
    match load_model(model)? {
        Loaded::Siamese(art) => {
            let codes = match (art.code_dim(), lm) {
                (0, _) => None,
                (_, Some(p)) => {
                    let lm = load_lm(p)?;
                    if lm.dims().hidden != art.code_dim() {
                        return Err(Error::Input("language model hidden size does not match the classifier".into()));
                    }
                    Some(embed_questions(&lm, &[qa.clone(), qb.clone()])?)
                }
                (_, None) => {
                    return Err(Error::Input(
                        "this Siamese model uses code embeddings; pass --lm".into(),
                    ))
                }
            };
            let (ia, ib) = (art.prepare(&qa, codes.as_ref()), art.prepare(&qb, codes.as_ref()));
            art.model.score(&ia, &ib)
        }
        Loaded::Grid(art) => art.model.score(&art.prepare(&qa), &art.prepare(&qb)),
    }
}

fn synth(kind: SynthKind, n: usize, seed: u64, ratios: [f64; 3], out: &Path) -> Result<i32> {
    create_dir(out)?;
    match kind {
        SynthKind::Brackets => write_brackets(&out.join("brackets.txt"), &bracket_strings(n, seed))?,
        SynthKind::Templates => write_template_task(out, &template_task(n, seed, ratios)?)?,
    }
    Ok(EXIT_OK)
}
