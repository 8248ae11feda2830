//! Command-line front end: split, train, eval, predict, stats, iaa and kg.
//!
//! [`run`] returns the process exit code: 0 on success, 1 on a runtime or
//! data error (reported as one line on stderr), 2 on a usage error.

use std::collections::BTreeSet;
use std::error::Error;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::corpus::{
    corpus_stats, parse_conll, parse_conll_untagged, split_corpus, tokenize_raw, write_conll, Document, LabelSet, Tag,
};
use crate::embeddings::load_embeddings;
use crate::evaluation::{error_breakdown, evaluate, iaa};
use crate::kgraph::{default_rules, export_graph, extract_graph, GraphFormat};
use crate::network::NetworkConfig;
use crate::training::{load_checkpoint, save_checkpoint, train, TrainConfig};
use crate::Tagger;

type CliResult<T = ()> = Result<T, Box<dyn Error>>;

pub const DEFAULT_SEED: u64 = 13;

#[derive(Debug, Parser)]
#[command(name = "clinical-ner", version, about = "Clinical named-entity recognition toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a tagger and write a checkpoint plus per-epoch history.
    Train(TrainArgs),
    /// Evaluate a checkpoint against a tagged corpus.
    Eval(EvalArgs),
    /// Tag a CoNLL or raw-text file.
    Predict(PredictArgs),
    /// Split a corpus into train and test files at document level.
    Split(SplitArgs),
    /// Print corpus statistics.
    Stats(StatsArgs),
    /// Inter-annotator agreement between two annotations of the same text.
    Iaa(IaaArgs),
    /// Extract and export an entity knowledge graph.
    Kg(KgArgs),
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Comma-separated entity labels (default: the 12-label clinical schema).
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
}

impl LabelArgs {
    fn label_set(&self) -> CliResult<LabelSet> {
        Ok(match &self.labels {
            Some(l) => LabelSet::new(l.iter().map(|s| s.trim().to_string()))?,
            None => LabelSet::default(),
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Word embeddings in whitespace-separated text format.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Development corpus; enables per-epoch scoring and a `.best` checkpoint.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// JSON file with optional `network`, `training` and `labels` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// History path (default: `<out>.history.jsonl`).
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub labels: LabelArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Write a JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Treat the input as raw text instead of CoNLL.
    #[arg(long)]
    pub raw: bool,
    /// Output CoNLL path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Directory receiving train.conll and test.conll.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub labels: LabelArgs,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Emit JSON instead of text.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub labels: LabelArgs,
}

#[derive(Debug, Args)]
pub struct IaaArgs {
    pub annotation_a: PathBuf,
    pub annotation_b: PathBuf,
    #[command(flatten)]
    pub labels: LabelArgs,
}

#[derive(Debug, Args)]
pub struct KgArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// `json` (structured) or `dot`.
    #[arg(long, default_value = "json")]
    pub format: String,
    /// Override the sentence window of every default rule.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub labels: LabelArgs,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    network: NetworkConfig,
    training: TrainConfig,
    labels: Option<Vec<String>>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            1
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn execute(command: Command) -> CliResult {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Split(a) => cmd_split(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Iaa(a) => cmd_iaa(a),
        Command::Kg(a) => cmd_kg(a),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn source_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn read_corpus(path: &Path, labels: &LabelSet) -> CliResult<Vec<Document>> {
    let text = read_text(path)?;
    parse_conll(text.as_bytes(), labels, &source_name(path)).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| format!("{}: {e}", p.display()).into()),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn load_model(path: &Path) -> CliResult<Tagger> {
    let checkpoint = load_checkpoint::<f64>(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(checkpoint.model)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let config: ConfigFile = match &args.config {
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| format!("{}: {e}", p.display()))?,
        None => ConfigFile::default(),
    };
    let labels = match (&args.labels.labels, config.labels) {
        (None, Some(l)) => LabelSet::new(l)?,
        _ => args.labels.label_set()?,
    };
    let mut training = config.training;
    if let Some(seed) = args.seed {
        training.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        training.epochs = epochs;
    }
    let file = fs::File::open(&args.embeddings).map_err(|e| format!("{}: {e}", args.embeddings.display()))?;
    let table =
        load_embeddings::<f64>(io::BufReader::new(file)).map_err(|e| format!("{}: {e}", args.embeddings.display()))?;
    let network = NetworkConfig { word_dim: table.dim(), num_tags: labels.num_tags(), ..config.network };
    let train_docs = read_corpus(&args.corpus, &labels)?;
    let dev_docs = match &args.dev {
        Some(p) => read_corpus(p, &labels)?,
        None => Vec::new(),
    };

    println!(
        "training: epochs {}, batch size {}, learning rate {}, dropout {}, optimizer Adam, seed {}",
        training.epochs, training.batch_size, training.learning_rate, training.dropout_rate, training.seed
    );
    println!(
        "network: char dim {}, filter width {}, filters {}, word dim {}, lstm hidden {}, tags {}",
        network.char_embed_dim,
        network.char_filter_width,
        network.char_filter_count,
        network.word_dim,
        network.lstm_hidden,
        network.num_tags
    );

    let outcome = train(&train_docs, &dev_docs, &table, &labels, &network, &training)?;
    save_checkpoint(&outcome.checkpoint, &args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;
    if let Some(best) = &outcome.best {
        let path = with_suffix(&args.out, ".best");
        save_checkpoint(best, &path).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    let mut history = String::new();
    for record in &outcome.history {
        history.push_str(&serde_json::to_string(record)?);
        history.push('\n');
    }
    let history_path = args.history.unwrap_or_else(|| with_suffix(&args.out, ".history.jsonl"));
    write_output(Some(&history_path), history.as_bytes())?;
    if let Some(last) = outcome.history.last() {
        println!("final loss {:.6} after {} epochs", last.mean_loss, last.epoch);
    }
    println!("checkpoint written to {}", args.out.display());
    Ok(())
}

/// Labels used in a CoNLL file's tag column, in order of appearance.
fn corpus_labels(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for line in text.lines() {
        if let Some(Ok(tag)) = line.split('\t').nth(1).map(|t| t.trim().parse::<Tag>()) {
            if let Some(l) = tag.label() {
                if seen.insert(l.to_string()) {
                    out.push(l.to_string());
                }
            }
        }
    }
    out
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let model = load_model(&args.model)?;
    let text = read_text(&args.corpus)?;
    let gold = match parse_conll(text.as_bytes(), &model.labels, &source_name(&args.corpus)) {
        Ok(d) => d,
        Err(e @ crate::corpus::CorpusError::Schema { .. }) => {
            return Err(format!(
                "{}: {e}; checkpoint labels [{}], corpus labels [{}]",
                args.corpus.display(),
                model.labels.labels().join(", "),
                corpus_labels(&text).join(", ")
            )
            .into())
        }
        Err(e) => return Err(format!("{}: {e}", args.corpus.display()).into()),
    };
    let pred = model.predict_documents(&gold)?;
    let report = evaluate(&gold, &pred, &model.labels)?;
    let breakdown = error_breakdown(&gold, &pred)?;
    println!("{report}");
    println!(
        "errors: correct {}, label {}, boundary {}, spurious {}, missed {}",
        breakdown.correct, breakdown.label_error, breakdown.boundary_error, breakdown.spurious, breakdown.missed
    );
    if let Some(path) = &args.report {
        let json = serde_json::json!({ "report": report, "errors": breakdown });
        let mut bytes = serde_json::to_vec_pretty(&json)?;
        bytes.push(b'\n');
        write_output(Some(path), &bytes)?;
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> CliResult {
    let model = load_model(&args.model)?;
    let text = read_text(&args.input)?;
    let name = source_name(&args.input);
    let docs = if args.raw {
        let sentences = tokenize_raw(&text);
        if sentences.is_empty() {
            Vec::new()
        } else {
            vec![Document::new(name, sentences)]
        }
    } else {
        parse_conll_untagged(text.as_bytes(), &name)?
    };
    let predicted = model.predict_documents(&docs)?;
    let mut out = Vec::new();
    write_conll(&predicted, &mut out)?;
    write_output(args.out.as_deref(), &out)
}

fn cmd_split(args: SplitArgs) -> CliResult {
    let labels = args.labels.label_set()?;
    let docs = read_corpus(&args.corpus, &labels)?;
    let (train_docs, test_docs) = split_corpus(&docs, args.test_fraction, args.seed)?;
    fs::create_dir_all(&args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;
    for (name, part) in [("train.conll", &train_docs), ("test.conll", &test_docs)] {
        let mut out = Vec::new();
        write_conll(part, &mut out)?;
        write_output(Some(&args.out.join(name)), &out)?;
    }
    println!("train: {} documents, test: {} documents", train_docs.len(), test_docs.len());
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> CliResult {
    let labels = args.labels.label_set()?;
    let stats = corpus_stats(&read_corpus(&args.corpus, &labels)?);
    let text = if args.json {
        serde_json::to_string_pretty(&stats)? + "\n"
    } else {
        let mut s = format!(
            "documents {}\nsentences {}\ntokens {}\nentities {}\n",
            stats.document_count,
            stats.sentence_count,
            stats.token_count,
            stats.entity_total()
        );
        for label in labels.labels() {
            s.push_str(&format!("{label} {}\n", stats.count(label)));
        }
        s
    };
    write_output(args.out.as_deref(), text.as_bytes())
}

fn cmd_iaa(args: IaaArgs) -> CliResult {
    let labels = args.labels.label_set()?;
    let a = read_corpus(&args.annotation_a, &labels)?;
    let b = read_corpus(&args.annotation_b, &labels)?;
    let report = iaa(&a, &b)?;
    println!("token agreement {:.1}", report.token_agreement_pct);
    println!("entity F1 {:.4}", report.entity_f1_a_as_gold);
    println!("tokens {}", report.token_count);
    Ok(())
}

fn cmd_kg(args: KgArgs) -> CliResult {
    let format: GraphFormat = args.format.parse()?;
    let labels = args.labels.label_set()?;
    let docs = read_corpus(&args.corpus, &labels)?;
    let mut rules = default_rules();
    if let Some(w) = args.window {
        rules.iter_mut().for_each(|r| r.window = w);
    }
    let graph = extract_graph(&docs, &rules, &labels)?;
    write_output(args.out.as_deref(), export_graph(&graph, format).as_bytes())
}
