use std::path::{Path, PathBuf};

use ndarray::Array2;
use reqvec_core::classify::{
    self, binary_labels, evaluate_cv, load_model, save_model, ClassifierConfig, ClassifierKind, EvalReport,
};
use reqvec_core::corpus::{
    generate_synthetic_corpus, load_corpus, normalize_request, passes_content_type_filter, save_corpus,
    split_stratified_kfold, Corpus, CorpusFormat, Label, NormalizationProfile, ParseMode, Split, SynthSpec,
};
use reqvec_core::embedder::{load_embeddings, save_embeddings, Embedder, EmbeddingMatrix};
use reqvec_core::encoder::{init_encoder, load_params, prepare_sequences, save_params, train_mlm, EncoderParams};
use reqvec_core::explain::{
    aggregate_scores, html_document, nearest_neighbors, render_highlight, token_ablation_scores, AttributionReport,
    ExplainError, HighlightFormat,
};
use reqvec_core::project::{kl_trace_csv, scatter_csv, scatter_svg, tsne};
use reqvec_core::tokenizer::{load_vocab, save_vocab, train_bbpe_on_corpora, BbpeVocab};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::{Cli, Command, InputFormat, RawMode, TrainLmArgs};

pub const TRAIN_CORPUS: &str = "train.jsonl";
pub const INFERENCE_CORPUS: &str = "inference.jsonl";
pub const VOCAB: &str = "vocab.txt";
pub const ENCODER: &str = "encoder.bin";
pub const EMBEDDINGS: &str = "embeddings.bin";

fn model_file(kind: ClassifierKind) -> String {
    format!("model-{kind}.json")
}

/// Doc ids may hold any text; keep file names portable.
fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

#[derive(Serialize)]
struct Provenance<'a> {
    artifact: &'a str,
    command: &'a str,
    seed: u64,
    config: &'a PipelineConfig,
}

struct Ctx {
    dir: PathBuf,
    config: PipelineConfig,
    command: &'static str,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Fails before any work starts if an input artifact is missing.
    fn require(&self, names: &[&str]) -> Result<()> {
        for name in names {
            let path = self.path(name);
            if !path.is_file() {
                return Err(CliError::io(
                    &path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "required artifact not found"),
                ));
            }
        }
        Ok(())
    }

    fn prepare_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))
    }

    /// Writes `<name>.meta.json` next to an artifact.
    fn record(&self, name: &str) -> Result<()> {
        let meta = Provenance {
            artifact: name,
            command: self.command,
            seed: self.config.seed,
            config: &self.config,
        };
        let path = self.path(&format!("{name}.meta.json"));
        let text = serde_json::to_string_pretty(&meta).expect("provenance serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.record(name)?;
        Ok(path)
    }

    fn corpus(&self, name: &str) -> Result<Corpus> {
        Ok(load_corpus(&self.path(name), &CorpusFormat::Jsonl)?)
    }

    fn vocab(&self) -> Result<BbpeVocab> {
        Ok(load_vocab(&self.path(VOCAB))?)
    }

    fn encoder(&self) -> Result<EncoderParams> {
        Ok(load_params(&self.path(ENCODER))?)
    }

    fn embeddings(&self) -> Result<EmbeddingMatrix> {
        Ok(load_embeddings(&self.path(EMBEDDINGS))?)
    }

    fn embedder(&self) -> Result<Embedder> {
        let params = self.encoder()?;
        let vocab = self.vocab()?;
        Ok(Embedder::new(&params, &vocab, self.config.embed.pooling, self.config.embed.strict)?)
    }
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Import { .. } => "import",
        Command::Synth { .. } => "synth",
        Command::TrainTokenizer { .. } => "train-tokenizer",
        Command::TrainLm(_) => "train-lm",
        Command::Embed { .. } => "embed",
        Command::TrainClf { .. } => "train-clf",
        Command::Eval { .. } => "eval",
        Command::Explain { .. } => "explain",
        Command::Neighbors { .. } => "neighbors",
        Command::Project { .. } => "project",
    }
}

fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *slot = v.clone();
    }
}

fn apply_overrides(command: &Command, c: &mut PipelineConfig) {
    match command {
        Command::Import { profile, .. } => set(&mut c.profile, profile),
        Command::Synth {
            normal_train,
            normal,
            anomaly,
        } => {
            set(&mut c.synth.normal_train, normal_train);
            set(&mut c.synth.normal_inference, normal);
            set(&mut c.synth.anomaly_inference, anomaly);
        }
        Command::TrainTokenizer { vocab_size } => set(&mut c.tokenizer.vocab_size, vocab_size),
        Command::TrainLm(a) => {
            set(&mut c.train.epochs, &a.epochs);
            set(&mut c.train.batch_size, &a.batch_size);
            set(&mut c.train.learning_rate, &a.learning_rate);
            set(&mut c.encoder.mask_rate, &a.mask_rate);
            set(&mut c.encoder.num_layers, &a.layers);
            set(&mut c.encoder.num_heads, &a.heads);
            set(&mut c.encoder.hidden_size, &a.hidden);
            set(&mut c.encoder.ffn_size, &a.ffn);
            set(&mut c.encoder.max_seq_len, &a.seq_len);
        }
        Command::Embed { pooling } => set(&mut c.embed.pooling, pooling),
        Command::TrainClf { model } | Command::Explain { model, .. } => set(&mut c.classifier.kind, model),
        Command::Eval { folds, .. } => set(&mut c.eval.folds, folds),
        Command::Neighbors { .. } => {}
        Command::Project { perplexity, iterations } => {
            set(&mut c.projection.perplexity, perplexity);
            set(&mut c.projection.iterations, iterations);
        }
    }
    if let Command::Explain { top_k, .. } = command {
        set(&mut c.explain.top_k, top_k);
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = PipelineConfig::load(cli.global.config.as_deref())?;
    set(&mut config.seed, &cli.global.seed);
    apply_overrides(&cli.command, &mut config);
    config.propagate_seed();
    let ctx = Ctx {
        dir: cli.global.artifacts,
        config,
        command: command_name(&cli.command),
    };
    match cli.command {
        Command::Import {
            input,
            format,
            label,
            split,
            mode,
            ..
        } => import(&ctx, &input, format, label, split, mode),
        Command::Synth { .. } => synth(&ctx),
        Command::TrainTokenizer { .. } => train_tokenizer(&ctx),
        Command::TrainLm(TrainLmArgs { .. }) => train_lm(&ctx),
        Command::Embed { .. } => embed(&ctx),
        Command::TrainClf { .. } => train_clf(&ctx),
        Command::Eval { model, .. } => eval(&ctx, &model),
        Command::Explain { doc_id, format, .. } => explain(&ctx, &doc_id, format),
        Command::Neighbors { doc_id, n, include_self } => neighbors(&ctx, &doc_id, n, include_self),
        Command::Project { .. } => project(&ctx),
    }
}

fn import(
    ctx: &Ctx,
    input: &Path,
    format: InputFormat,
    label: Option<Label>,
    split: Split,
    mode: RawMode,
) -> Result<()> {
    if !input.exists() {
        return Err(CliError::io(
            input,
            std::io::Error::new(std::io::ErrorKind::NotFound, "input not found"),
        ));
    }
    let format = match format {
        InputFormat::Jsonl => CorpusFormat::Jsonl,
        InputFormat::Raw => CorpusFormat::RawDir {
            label,
            split,
            mode: match mode {
                RawMode::Full => ParseMode::FullRequest,
                RawMode::Lines => ParseMode::Lines,
            },
        },
    };
    let raw = load_corpus(input, &format)?;
    let total = raw.len();
    let mut profile = NormalizationProfile::new(ctx.config.profile);
    if let Some(options) = profile.ids2018.as_mut() {
        options.seed = ctx.config.seed;
    }
    let docs: Vec<_> = raw
        .docs()
        .iter()
        .filter(|d| profile.ids2018.as_ref().is_none_or(|o| passes_content_type_filter(d, o)))
        .map(|d| normalize_request(d, &profile))
        .collect();
    let kept = docs.len();
    let corpus = Corpus::new(docs, split)?;

    ctx.prepare_dir()?;
    let name = match split {
        Split::Train => TRAIN_CORPUS,
        Split::Inference => INFERENCE_CORPUS,
    };
    save_corpus(&corpus, &ctx.path(name))?;
    ctx.record(name)?;
    println!(
        "imported {kept} of {total} requests with profile {} -> {}",
        ctx.config.profile,
        ctx.path(name).display()
    );
    Ok(())
}

fn synth(ctx: &Ctx) -> Result<()> {
    let s = &ctx.config.synth;
    let seed = ctx.config.seed;
    let train = generate_synthetic_corpus(&SynthSpec {
        id_prefix: "trn".into(),
        ..SynthSpec::new(s.normal_train, 0, seed)
    })?;
    let inference = generate_synthetic_corpus(&SynthSpec {
        id_prefix: "inf".into(),
        ..SynthSpec::new(s.normal_inference, s.anomaly_inference, seed.wrapping_add(1))
    })?;
    ctx.prepare_dir()?;
    for (name, corpus) in [(TRAIN_CORPUS, &train), (INFERENCE_CORPUS, &inference)] {
        save_corpus(corpus, &ctx.path(name))?;
        ctx.record(name)?;
        println!("{} requests -> {}", corpus.len(), ctx.path(name).display());
    }
    Ok(())
}

fn train_tokenizer(ctx: &Ctx) -> Result<()> {
    ctx.require(&[TRAIN_CORPUS])?;
    let train = ctx.corpus(TRAIN_CORPUS)?;
    let vocab = train_bbpe_on_corpora(&[&train], &ctx.config.tokenizer)?;
    save_vocab(&vocab, &ctx.path(VOCAB))?;
    ctx.record(VOCAB)?;
    println!(
        "{} tokens ({} merges) -> {}",
        vocab.vocab_size(),
        vocab.merges().len(),
        ctx.path(VOCAB).display()
    );
    Ok(())
}

fn train_lm(ctx: &Ctx) -> Result<()> {
    ctx.require(&[TRAIN_CORPUS, VOCAB])?;
    let train = ctx.corpus(TRAIN_CORPUS)?;
    let vocab = ctx.vocab()?;
    let mut config = ctx.config.encoder.clone();
    config.vocab_size = vocab.vocab_size();
    let lines = train.docs().iter().flat_map(|d| d.lines.iter().map(String::as_str));
    let sequences = prepare_sequences(&vocab, lines, config.max_seq_len);
    let (params, trace) = train_mlm(&init_encoder(&config)?, &sequences, &ctx.config.train)?;
    let meta = serde_json::json!({
        "seed": ctx.config.seed,
        "encoder": config,
        "train": ctx.config.train,
        "trace": trace,
    });
    save_params(&params, &ctx.path(ENCODER), meta)?;
    ctx.record(ENCODER)?;
    let ppl = |p: Option<f64>| p.map_or("n/a".to_owned(), |v| format!("{v:.3}"));
    println!(
        "{} sequences, masked perplexity {} -> {} -> {}",
        sequences.len(),
        ppl(trace.initial_perplexity),
        ppl(trace.final_perplexity),
        ctx.path(ENCODER).display()
    );
    Ok(())
}

fn embed(ctx: &Ctx) -> Result<()> {
    ctx.require(&[INFERENCE_CORPUS, VOCAB, ENCODER])?;
    let corpus = ctx.corpus(INFERENCE_CORPUS)?;
    let mut embedder = ctx.embedder()?;
    let matrix = embedder.embed_corpus(&corpus)?;
    save_embeddings(&matrix, &ctx.path(EMBEDDINGS))?;
    ctx.record(EMBEDDINGS)?;
    println!("{} x {} -> {}", matrix.len(), matrix.dim, ctx.path(EMBEDDINGS).display());
    Ok(())
}

fn features(matrix: &EmbeddingMatrix) -> Result<(Array2<f64>, Vec<bool>)> {
    let y = binary_labels(&matrix.labels(), &matrix.ids())?;
    Ok((matrix.to_array(), y))
}

fn train_clf(ctx: &Ctx) -> Result<()> {
    ctx.require(&[EMBEDDINGS])?;
    let matrix = ctx.embeddings()?;
    let (x, y) = features(&matrix)?;
    let model = classify::train(&x, &y, &ctx.config.classifier)?;
    let name = model_file(model.kind());
    save_model(&model, &ctx.path(&name))?;
    ctx.record(&name)?;
    println!("{} on {} rows -> {}", model.kind(), y.len(), ctx.path(&name).display());
    Ok(())
}

fn eval(ctx: &Ctx, kinds: &[ClassifierKind]) -> Result<()> {
    ctx.require(&[EMBEDDINGS])?;
    let matrix = ctx.embeddings()?;
    let (x, y) = features(&matrix)?;
    let folds = split_stratified_kfold(&matrix.labels(), ctx.config.eval.folds, ctx.config.seed)?;
    let kinds = if kinds.is_empty() { vec![ctx.config.classifier.kind] } else { kinds.to_vec() };
    let mut reports = Vec::new();
    for kind in kinds {
        let config = ClassifierConfig {
            kind,
            ..ctx.config.classifier.clone()
        };
        let report = evaluate_cv(&x, &y, &config, &folds)?;
        ctx.write(&format!("eval-{kind}.json"), serde_json::to_string_pretty(&report).unwrap() + "\n")?;
        ctx.write(&format!("roc-{kind}.csv"), report.roc_csv())?;
        reports.push(report);
    }
    let table = EvalReport::table(&reports);
    ctx.write("report.txt", &table)?;
    print!("{table}");
    Ok(())
}

fn explain(ctx: &Ctx, doc_ids: &[String], format: HighlightFormat) -> Result<()> {
    let kind = ctx.config.classifier.kind;
    let model_name = model_file(kind);
    ctx.require(&[INFERENCE_CORPUS, VOCAB, ENCODER, &model_name])?;
    let corpus = ctx.corpus(INFERENCE_CORPUS)?;
    let model = load_model(&ctx.path(&model_name))?;
    let mut embedder = ctx.embedder()?;
    let vocab = embedder.vocab().clone();
    let top_k = ctx.config.explain.top_k;

    let docs: Vec<_> = if doc_ids.is_empty() {
        corpus
            .docs()
            .iter()
            .filter(|d| d.label == Label::Anomaly)
            .take(ctx.config.explain.max_docs)
            .collect()
    } else {
        doc_ids
            .iter()
            .map(|id| corpus.get(id).ok_or_else(|| ExplainError::UnknownId(id.clone())))
            .collect::<std::result::Result<_, _>>()?
    };
    if docs.is_empty() {
        return Err(ExplainError::NoReports.into());
    }

    let mut reports: Vec<AttributionReport> = Vec::new();
    let mut fragments = Vec::new();
    for doc in &docs {
        let report = token_ablation_scores(&mut embedder, &model, doc)?;
        ctx.write(
            &format!("attribution-{}.json", file_safe(&doc.id)),
            serde_json::to_string_pretty(&report).unwrap() + "\n",
        )?;
        let rendered = render_highlight(doc, &report, &vocab, format)?;
        match format {
            HighlightFormat::Ansi => {
                println!("== {} ({}) distance {:.4}", doc.id, doc.label, report.base_distance);
                println!("{rendered}");
                for e in report.ranked().into_iter().take(top_k) {
                    println!("{:>10.4}  {:?}", e.score, e.token);
                }
            }
            HighlightFormat::Html => fragments.push(rendered),
        }
        reports.push(report);
    }
    if format == HighlightFormat::Html {
        let path = ctx.write("highlight.html", html_document("Token attribution", &fragments))?;
        println!("{} documents -> {}", docs.len(), path.display());
    }
    if reports.len() > 1 {
        let aggregate = aggregate_scores(&reports, top_k)?;
        ctx.write("aggregate.json", serde_json::to_string_pretty(&aggregate).unwrap() + "\n")?;
        println!("== top {} tokens over {} documents", aggregate.len(), reports.len());
        for e in &aggregate {
            println!("{:>10.4}  {:>3}  {:?}", e.total_score, e.documents, e.token);
        }
    }
    Ok(())
}

fn neighbors(ctx: &Ctx, doc_id: &str, n: usize, include_self: bool) -> Result<()> {
    ctx.require(&[EMBEDDINGS])?;
    let matrix = ctx.embeddings()?;
    let list = nearest_neighbors(&matrix, doc_id, n, include_self)?;
    let csv = list.to_csv();
    ctx.write(&format!("neighbors-{}.csv", file_safe(doc_id)), &csv)?;
    print!("{csv}");
    Ok(())
}

fn project(ctx: &Ctx) -> Result<()> {
    ctx.require(&[EMBEDDINGS])?;
    let matrix = ctx.embeddings()?;
    let projection = tsne(&matrix, &ctx.config.projection)?;
    ctx.write("tsne.csv", scatter_csv(&projection.points))?;
    let svg = ctx.write("tsne.svg", scatter_svg(&projection.points, "Request embeddings (t-SNE)"))?;
    ctx.write("kl.csv", kl_trace_csv(&projection.kl_trace))?;
    let kl = projection.kl_trace.last().copied().unwrap_or(f64::NAN);
    println!("{} points, final KL {kl:.4} -> {}", projection.points.len(), svg.display());
    Ok(())
}
