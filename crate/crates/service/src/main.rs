use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ner_core::corpus::{CharVocab, parse_conll03, parse_germeval, write_germeval, LabelSchema, Sentence};
use ner_core::evaluation::{evaluate_labels, germeval_combined, split_oov_iv, ChunkMode, EvalReport};
use ner_core::model::{build_model, NerModel};
use ner_core::training::train_two_stage;
use ner_service::registry::{ModelRegistry, RegistryConfig};
use ner_service::train_config::{load_embeddings, load_split, CorpusFormat, LabelLevel, TrainFile};

#[derive(Parser)]
#[command(name = "ner", version, about = "BiLSTM-CRF named entity recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Germeval,
    Conll,
}

impl From<Format> for CorpusFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Germeval => CorpusFormat::Germeval,
            Format::Conll => CorpusFormat::Conll,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalLevel {
    Outer,
    Inner,
    /// Outer and inner chunks pooled (GermEval files only).
    Combined,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML config file.
    Train {
        config: PathBuf,
    },
    /// Score predictions against gold labels, or a model on labelled data.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        /// Predicted labels in the same format as --gold.
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        pred: Option<PathBuf>,
        #[arg(long, requires = "embeddings")]
        model: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "germeval")]
        format: Format,
        #[arg(long, value_enum, default_value = "outer")]
        level: EvalLevel,
        /// Drop chunks opened by a stray I- label instead of starting one.
        #[arg(long)]
        strict: bool,
        /// Write the JSON report here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Tag sentences from standard input, one per line, tokens separated by spaces.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        /// Model registry TOML.
        #[arg(long)]
        registry: PathBuf,
        #[arg(long, env = "NER_BIND", default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Split a corpus into sentences with and without out-of-vocabulary tokens.
    SplitOov {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, value_enum, default_value = "germeval")]
        format: Format,
        #[arg(long)]
        iv_out: PathBuf,
        #[arg(long)]
        oov_out: PathBuf,
    },
    /// Convert a fastText .bin model to the text format read by the service.
    ConvertFasttext {
        input: PathBuf,
        output: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => train(&config),
        Command::Evaluate {
            gold,
            pred,
            model,
            embeddings,
            format,
            level,
            strict,
            output,
        } => {
            let mode = if strict { ChunkMode::Strict } else { ChunkMode::Lenient };
            let report = match (pred, model) {
                (Some(pred), _) => evaluate_files(&gold, &pred, format, level, mode)?,
                (None, Some(model)) => {
                    let embeddings = embeddings.context("--embeddings is required with --model")?;
                    evaluate_model_on(&gold, &model, &embeddings, format, level, mode)?
                }
                (None, None) => bail!("either --pred or --model is required"),
            };
            eprint!("{}", report.conll_table());
            match output {
                Some(p) => std::fs::write(&p, report.to_json()).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{}", report.to_json()),
            }
            Ok(())
        }
        Command::Predict { model, embeddings } => predict(&model, &embeddings),
        Command::Serve { registry, bind } => {
            let config = RegistryConfig::from_file(&registry)?;
            let loaded = ModelRegistry::load(&config)?;
            if loaded.is_empty() {
                bail!("registry {} lists no models", registry.display());
            }
            let registry = loaded;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(ner_service::serve(Arc::new(registry), bind))
                .with_context(|| format!("serving on {bind}"))
        }
        Command::SplitOov {
            data,
            embeddings,
            format,
            iv_out,
            oov_out,
        } => {
            let store = load_embeddings(&embeddings, None)?;
            let sentences = read_corpus(&data, format)?;
            let (iv, oov) = split_oov_iv(&sentences, &store);
            write_corpus(&iv_out, &iv)?;
            write_corpus(&oov_out, &oov)?;
            eprintln!("{} in-vocabulary, {} out-of-vocabulary sentences", iv.len(), oov.len());
            Ok(())
        }
        Command::ConvertFasttext { input, output } => {
            let store = load_embeddings(&input, None)?;
            store.save(&output)?;
            eprintln!("{} words, dimension {}", store.len(), store.dim());
            Ok(())
        }
    }
}

fn train(config: &Path) -> Result<()> {
    let cfg = TrainFile::from_file(config)?;
    let schema = cfg.label_schema()?;
    let store = load_embeddings(&cfg.embeddings.path, cfg.embeddings.kind)?;
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for c in &cfg.corpus {
        train.extend(load_split(&c.train, c.format, cfg.level, &schema)?);
        dev.extend(load_split(&c.dev, c.format, cfg.level, &schema)?);
    }
    log::info!("{} training, {} development sentences", train.len(), dev.len());
    let model_config = cfg.model_config(store.dim(), store.kind())?;
    let vocab = CharVocab::build(&train);
    let model = build_model(model_config, vocab, cfg.model_seed.unwrap_or(cfg.training.seed))?;
    log::info!("{} parameters", model.num_parameters());
    let (mut model, report) = train_two_stage(model, &train, &dev, &store, &cfg.training)?;
    model.round_to_f32();
    model.save(&cfg.output)?;
    log::info!("wrote {}", cfg.output.display());
    if let Some(path) = &cfg.report {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(f);
        report.write_jsonl(&mut w)?;
        w.flush()?;
    }
    for c in &cfg.corpus {
        if let Some(test_path) = &c.test {
            let test = load_split(test_path, c.format, cfg.level, &schema)?;
            let r = ner_core::training::evaluate_model(&model, &store, &test)?;
            eprintln!("test {}: F1 {:.4}", test_path.display(), r.overall.f1);
        }
    }
    Ok(())
}

fn read_corpus(path: &Path, format: Format) -> Result<Vec<Sentence>> {
    Ok(match format {
        Format::Germeval => parse_germeval(path)?,
        Format::Conll => parse_conll03(path)?,
    })
}

fn write_corpus(path: &Path, sentences: &[Sentence]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    write_germeval(&mut w, sentences)?;
    w.flush()?;
    Ok(())
}

fn labels_at(sentences: &[Sentence], level: LabelLevel) -> Result<Vec<Vec<String>>> {
    sentences
        .iter()
        .map(|s| match level {
            LabelLevel::Outer => Ok(s.outer_labels.clone()),
            LabelLevel::Inner => s
                .inner_labels
                .clone()
                .with_context(|| format!("sentence {} has no inner level", s.source_id)),
        })
        .collect()
}

fn check_tokens(gold: &[Sentence], pred: &[Sentence]) -> Result<()> {
    if gold.len() != pred.len() {
        bail!("gold has {} sentences, predictions have {}", gold.len(), pred.len());
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.tokens != p.tokens {
            bail!("sentence {i}: tokens differ between gold and predictions");
        }
    }
    Ok(())
}

fn evaluate_files(gold: &Path, pred: &Path, format: Format, level: EvalLevel, mode: ChunkMode) -> Result<EvalReport> {
    let g = read_corpus(gold, format)?;
    let p = read_corpus(pred, format)?;
    check_tokens(&g, &p)?;
    Ok(match level {
        EvalLevel::Outer => evaluate_labels(&labels_at(&g, LabelLevel::Outer)?, &labels_at(&p, LabelLevel::Outer)?, mode)?,
        EvalLevel::Inner => evaluate_labels(&labels_at(&g, LabelLevel::Inner)?, &labels_at(&p, LabelLevel::Inner)?, mode)?,
        EvalLevel::Combined => germeval_combined(
            &labels_at(&g, LabelLevel::Outer)?,
            &labels_at(&g, LabelLevel::Inner)?,
            &labels_at(&p, LabelLevel::Outer)?,
            &labels_at(&p, LabelLevel::Inner)?,
        )?,
    })
}

fn evaluate_model_on(
    gold: &Path,
    model: &Path,
    embeddings: &Path,
    format: Format,
    level: EvalLevel,
    mode: ChunkMode,
) -> Result<EvalReport> {
    let level = match level {
        EvalLevel::Outer => LabelLevel::Outer,
        EvalLevel::Inner => LabelLevel::Inner,
        EvalLevel::Combined => bail!("--level combined needs --pred files for both levels"),
    };
    let model = NerModel::load(model)?;
    let store = load_embeddings(embeddings, None)?;
    let schema: LabelSchema = model.config.label_schema.clone();
    let data = load_split(gold, format.into(), level, &schema)?;
    let refs: Vec<&[String]> = data.iter().map(|s| s.tokens.as_slice()).collect();
    let pred = model.predict_batch(&store, &refs)?;
    let gold: Vec<Vec<String>> = data.into_iter().map(|s| s.outer_labels).collect();
    Ok(evaluate_labels(&gold, &pred, mode)?)
}

fn predict(model: &Path, embeddings: &Path) -> Result<()> {
    let model = NerModel::load(model)?;
    let store = load_embeddings(embeddings, None)?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for line in stdin.lock().lines() {
        let line = line?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            writeln!(out)?;
            continue;
        }
        writeln!(out, "{}", model.predict(&store, &tokens)?.join(" "))?;
    }
    out.flush()?;
    Ok(())
}
