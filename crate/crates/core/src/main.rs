use std::fs;
use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use constrainlab::bridge::{self, BridgeEndpoint, BridgeModel, Transport};
use constrainlab::corpus::{
    load_parallel, remove_copy_noise, truncate_corpus, write_parallel, write_sentences, ParallelCorpus, Sentence, Split,
    TruncationLevel,
};
use constrainlab::decoding::{self, DecodeConfig, Hypothesis, Sample, SampleSet};
use constrainlab::experiment::{self, report, SweepConfig, ToyConfig};
use constrainlab::manifest::RunManifest;
use constrainlab::metrics::{self, EvalPair};
use constrainlab::models::{
    load_model, save_model, AnyModel, ConditionalLM, ConditionalNGramModel, NGramConfig, SmoothingConfig, UnigramModel,
};
use constrainlab::tokenizer::{detokenize, vocabulary_for, BpeModel, Vocabulary, DEFAULT_NUM_MERGES};
use constrainlab::{Error, Result, TokenId};

#[derive(Parser)]
#[command(name = "constrainlab", version, about = "Decoding under controlled task constrainedness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Remove copy noise, learn BPE on the untruncated training data, write the vocabulary.
    Prepare(PrepareArgs),
    /// Learn BPE merges from a parallel training corpus.
    LearnBpe(LearnBpeArgs),
    /// Truncate source sentences to s percent of their words.
    Truncate(TruncateArgs),
    /// Fit a reference model.
    Fit(FitArgs),
    /// Greedy or beam search over a source file.
    Decode(DecodeArgs),
    /// Ancestral sampling over a source file.
    Sample(SampleArgs),
    /// Compute one metric.
    Eval(EvalArgs),
    /// Run the full s × decoder grid.
    Sweep(SweepArgs),
    /// Write the synthetic parallel corpus.
    ToyCorpus(ToyArgs),
    /// Run the bridge conformance suite against an external server.
    ServeCheck(ServeCheckArgs),
    /// Serve a model file over the bridge protocol (stdio or TCP).
    Serve(ServeArgs),
}

#[derive(Args)]
struct CorpusFiles {
    #[arg(long)]
    train_src: PathBuf,
    #[arg(long)]
    train_tgt: PathBuf,
    #[arg(long)]
    dev_src: PathBuf,
    #[arg(long)]
    dev_tgt: PathBuf,
    #[arg(long)]
    test_src: PathBuf,
    #[arg(long)]
    test_tgt: PathBuf,
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    files: CorpusFiles,
    #[arg(long, default_value_t = DEFAULT_NUM_MERGES)]
    num_merges: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LearnBpeArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NUM_MERGES)]
    num_merges: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TruncateArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    s: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Ngram,
    Unigram,
}

#[derive(Args)]
struct Tokenization {
    /// Merge file from `prepare` or `learn-bpe`.
    #[arg(long)]
    bpe: PathBuf,
    /// Vocabulary file from `prepare`.
    #[arg(long)]
    vocab: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[command(flatten)]
    tok: Tokenization,
    /// Truncate sources to this level before fitting.
    #[arg(long, default_value_t = 100)]
    s: u32,
    #[arg(long, value_enum, default_value = "ngram")]
    model: ModelKind,
    #[arg(long, default_value_t = NGramConfig::default().order)]
    ngram_order: usize,
    #[arg(long, default_value_t = NGramConfig::default().lambda)]
    lambda: f64,
    #[arg(long, default_value_t = NGramConfig::default().additive)]
    additive: f64,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelSource {
    /// Model file from `fit`.
    #[arg(long, conflicts_with_all = ["bridge_cmd", "bridge_tcp"])]
    model: Option<PathBuf>,
    /// Command line of a bridge server speaking over stdio (split on whitespace).
    #[arg(long, conflicts_with = "bridge_tcp")]
    bridge_cmd: Option<String>,
    /// host:port of a bridge server.
    #[arg(long)]
    bridge_tcp: Option<String>,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    source: PathBuf,
    #[command(flatten)]
    tok: Tokenization,
    #[command(flatten)]
    model: ModelSource,
    #[arg(long, default_value_t = 1)]
    beam_size: usize,
    #[arg(long, default_value_t = decoding::DEFAULT_MAX_LEN)]
    max_len: usize,
    /// Apply label smoothing on top of the loaded model.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    source: PathBuf,
    #[command(flatten)]
    tok: Tokenization,
    #[command(flatten)]
    model: ModelSource,
    #[arg(long)]
    samples: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = decoding::DEFAULT_MAX_LEN)]
    max_len: usize,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricName {
    LengthRatio,
    Uniq,
    Bleu,
    Entropy,
    MassCoverage,
    UniqueSamples,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    metric: MetricName,
    /// Hypothesis file, one sentence per line.
    #[arg(long, required_unless_present = "samples")]
    hyp: Option<PathBuf>,
    #[arg(long)]
    r#ref: Option<PathBuf>,
    /// Sample dump from `sample` (for entropy, mass-coverage, unique-samples).
    #[arg(long)]
    samples: Option<PathBuf>,
    /// n-gram order for `uniq`.
    #[arg(long, default_value_t = 1)]
    n: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to CONSTRAINLAB_WORKERS, then the CPU count.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = ToyConfig::default().train)]
    train: usize,
    #[arg(long, default_value_t = ToyConfig::default().dev)]
    dev: usize,
    #[arg(long, default_value_t = ToyConfig::default().test)]
    test: usize,
}

#[derive(Args)]
struct ServeCheckArgs {
    #[arg(long)]
    vocab: PathBuf,
    /// Command line of a bridge server speaking over stdio (split on whitespace).
    #[arg(long, conflicts_with = "bridge_tcp")]
    bridge_cmd: Option<String>,
    #[arg(long)]
    bridge_tcp: Option<String>,
    #[arg(long, default_value_t = 5_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 1000)]
    requests: usize,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Listen on this address instead of stdio.
    #[arg(long)]
    tcp: Option<String>,
}

fn command_line() -> Vec<String> {
    std::env::args().collect()
}

fn manifest(seed: Option<u64>, config: serde_json::Value, inputs: &[&Path]) -> Result<RunManifest> {
    let mut m = RunManifest::new(command_line(), seed, config);
    for p in inputs {
        m.add_input(p)?;
    }
    Ok(m)
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_owned(),
        source: e,
    })
}

fn read_lines(path: &Path) -> Result<Vec<Sentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    Ok(text.lines().map(Sentence::parse).collect())
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let f = &a.files;
    let train = remove_copy_noise(load_parallel(&f.train_src, &f.train_tgt, Split::Train)?);
    let dev = remove_copy_noise(load_parallel(&f.dev_src, &f.dev_tgt, Split::Dev)?);
    let test = remove_copy_noise(load_parallel(&f.test_src, &f.test_tgt, Split::Test)?);
    let bpe = BpeModel::learn(&train, a.num_merges)?;
    let vocab = vocabulary_for(&bpe, &train);
    mkdir(&a.out)?;
    for (name, c) in [("train", &train), ("dev", &dev), ("test", &test)] {
        write_parallel(c, &a.out.join(format!("{name}.src")), &a.out.join(format!("{name}.tgt")))?;
    }
    bpe.save(&a.out.join("bpe.codes"))?;
    vocab.save(&a.out.join("vocab.txt"))?;
    let inputs = [&f.train_src, &f.train_tgt, &f.dev_src, &f.dev_tgt, &f.test_src, &f.test_tgt].map(|p| p.as_path());
    let m = manifest(
        None,
        json!({"num_merges": a.num_merges, "vocab_hash": vocab.hash(), "train_pairs": train.len()}),
        &inputs,
    )?;
    m.write(&a.out)?;
    Ok(())
}

fn learn_bpe(a: LearnBpeArgs) -> Result<()> {
    let train = remove_copy_noise(load_parallel(&a.source, &a.target, Split::Train)?);
    let bpe = BpeModel::learn(&train, a.num_merges)?;
    bpe.save(&a.out)?;
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    manifest(None, json!({"num_merges": a.num_merges}), &[&a.source, &a.target])?.write(dir)?;
    Ok(())
}

fn truncate(a: TruncateArgs) -> Result<()> {
    let s = TruncationLevel::new(a.s)?;
    // empty source lines are legal input here (e.g. an already truncated file)
    let sources = read_lines(&a.source)?;
    let targets = read_lines(&a.target)?;
    if sources.len() != targets.len() {
        return Err(Error::Alignment {
            source_lines: sources.len(),
            target_lines: targets.len(),
        });
    }
    let truncated: Vec<Sentence> = sources.iter().map(|x| constrainlab::corpus::truncate_sentence(x, s)).collect();
    mkdir(&a.out)?;
    write_sentences(&a.out.join("source.txt"), &truncated)?;
    write_sentences(&a.out.join("target.txt"), &targets)?;
    manifest(None, json!({"s": a.s}), &[&a.source, &a.target])?.write(&a.out)?;
    Ok(())
}

fn encode_lines(bpe: &BpeModel, vocab: &Vocabulary, sentences: &[Sentence]) -> Vec<Vec<TokenId>> {
    bpe.apply_all(sentences).iter().map(|p| vocab.encode(p, false)).collect()
}

fn fit(a: FitArgs) -> Result<()> {
    let s = TruncationLevel::new(a.s)?;
    let corpus = remove_copy_noise(load_parallel(&a.source, &a.target, Split::Train)?);
    let corpus: ParallelCorpus = truncate_corpus(&corpus, s);
    let bpe = BpeModel::load(&a.tok.bpe)?;
    let vocab = Vocabulary::load(&a.tok.vocab)?;
    let src: Vec<Sentence> = corpus.sources().cloned().collect();
    let tgt: Vec<Sentence> = corpus.targets().cloned().collect();
    let src = encode_lines(&bpe, &vocab, &src);
    let tgt = encode_lines(&bpe, &vocab, &tgt);
    let smoothing = SmoothingConfig::new(a.epsilon)?;
    let cfg = NGramConfig {
        order: a.ngram_order,
        lambda: a.lambda,
        additive: a.additive,
    };
    let model = match a.model {
        ModelKind::Ngram => {
            let pairs: Vec<(&Vec<TokenId>, &Vec<TokenId>)> = src.iter().zip(&tgt).collect();
            AnyModel::NGram(ConditionalNGramModel::fit(&pairs, vocab.len(), cfg)?)
        }
        ModelKind::Unigram => AnyModel::Unigram(UnigramModel::fit(&tgt, vocab.len())?),
    }
    .smoothed(smoothing);
    mkdir(&a.out)?;
    save_model(&model, &a.out.join("model.txt"))?;
    let config = json!({
        "s": a.s, "model": matches!(a.model, ModelKind::Ngram).then_some("ngram").unwrap_or("unigram"),
        "order": cfg.order, "lambda": cfg.lambda, "additive": cfg.additive, "epsilon": a.epsilon,
        "vocab_hash": vocab.hash(),
    });
    manifest(None, config, &[&a.source, &a.target, &a.tok.bpe, &a.tok.vocab])?.write(&a.out)?;
    Ok(())
}

enum Loaded {
    File(AnyModel),
    Bridge(BridgeModel),
}

impl Loaded {
    fn as_lm(&self) -> &dyn ConditionalLM {
        match self {
            Loaded::File(m) => m,
            Loaded::Bridge(b) => b,
        }
    }
}

fn endpoint(cmd: &Option<String>, tcp: &Option<String>, vocab: &Vocabulary, timeout_ms: u64) -> Result<BridgeEndpoint> {
    let words: Vec<String> = cmd.iter().flat_map(|c| c.split_whitespace()).map(str::to_owned).collect();
    let transport = match (words.split_first(), tcp) {
        (Some((program, args)), _) => Transport::Command {
            program: program.clone(),
            args: args.to_vec(),
        },
        (_, Some(addr)) => Transport::Tcp(addr.clone()),
        _ => return Err(invalid("one of --model, --bridge-cmd or --bridge-tcp is required")),
    };
    Ok(BridgeEndpoint {
        transport,
        timeout: Duration::from_millis(timeout_ms),
        vocab_hash: vocab.hash(),
        vocab_size: vocab.len(),
    })
}

fn load(src: &ModelSource, vocab: &Vocabulary, epsilon: f64) -> Result<(Loaded, Vec<PathBuf>)> {
    let eps = SmoothingConfig::new(epsilon)?;
    if let Some(path) = &src.model {
        let m = load_model(path)?;
        if m.vocab_size() != vocab.len() {
            return Err(invalid(format!(
                "model has {} tokens but the vocabulary has {}",
                m.vocab_size(),
                vocab.len()
            )));
        }
        return Ok((Loaded::File(m.smoothed(eps)), vec![path.clone()]));
    }
    if epsilon != 0.0 {
        return Err(invalid("--epsilon applies to model files only"));
    }
    let ep = endpoint(&src.bridge_cmd, &src.bridge_tcp, vocab, src.timeout_ms)?;
    Ok((Loaded::Bridge(BridgeModel::connect(&ep)?), Vec::new()))
}

fn words_of(vocab: &Vocabulary, tokens: &[TokenId]) -> Result<Vec<String>> {
    let pieces = vocab.decode(decoding::strip_eos(tokens))?;
    Ok(detokenize(&pieces).sentence.words().to_vec())
}

fn write_dump_file(path: &Path, rows: &[(usize, f64, Vec<String>)]) -> Result<()> {
    let mut buf = Vec::new();
    decoding::write_dump(&mut buf, rows.iter().map(|(i, lp, w)| (*i, *lp, w.as_slice())))
        .map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
    write_text(path, std::str::from_utf8(&buf).expect("utf-8"))
}

fn decode(a: DecodeArgs) -> Result<()> {
    let bpe = BpeModel::load(&a.tok.bpe)?;
    let vocab = Vocabulary::load(&a.tok.vocab)?;
    let (model, model_inputs) = load(&a.model, &vocab, a.epsilon)?;
    let sources = encode_lines(&bpe, &vocab, &read_lines(&a.source)?);
    let cfg = DecodeConfig::new(a.beam_size, a.max_len)?;
    let lm = model.as_lm();
    let mut rows = Vec::with_capacity(sources.len());
    let mut hyps = Vec::with_capacity(sources.len());
    for (i, src) in sources.iter().enumerate() {
        let best: Hypothesis = if a.beam_size == 1 {
            decoding::greedy(lm, src, a.max_len)?
        } else {
            decoding::beam_search(lm, src, cfg)?.swap_remove(0)
        };
        let w = words_of(&vocab, &best.tokens)?;
        hyps.push(Sentence::new(w.clone())?);
        rows.push((i, best.logprob, w));
    }
    mkdir(&a.out)?;
    write_sentences(&a.out.join("hyp.txt"), &hyps)?;
    write_dump_file(&a.out.join("dump.tsv"), &rows)?;
    let mut inputs: Vec<&Path> = vec![&a.source, &a.tok.bpe, &a.tok.vocab];
    inputs.extend(model_inputs.iter().map(PathBuf::as_path));
    let config = json!({"beam_size": a.beam_size, "max_len": a.max_len, "epsilon": a.epsilon});
    manifest(None, config, &inputs)?.write(&a.out)?;
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let bpe = BpeModel::load(&a.tok.bpe)?;
    let vocab = Vocabulary::load(&a.tok.vocab)?;
    let (model, model_inputs) = load(&a.model, &vocab, a.epsilon)?;
    let sources = encode_lines(&bpe, &vocab, &read_lines(&a.source)?);
    let mut rows = Vec::new();
    for (i, src) in sources.iter().enumerate() {
        let seed = experiment::derive_seed(a.seed, 0, "sample-cli", 0, i as u64);
        let set = decoding::ancestral_sample(model.as_lm(), src, a.samples, seed, a.max_len)?;
        for s in &set.samples {
            rows.push((i, s.logprob, words_of(&vocab, &s.tokens)?));
        }
    }
    mkdir(&a.out)?;
    write_dump_file(&a.out.join("samples.tsv"), &rows)?;
    let mut inputs: Vec<&Path> = vec![&a.source, &a.tok.bpe, &a.tok.vocab];
    inputs.extend(model_inputs.iter().map(PathBuf::as_path));
    let config = json!({"samples": a.samples, "max_len": a.max_len, "epsilon": a.epsilon});
    manifest(Some(a.seed), config, &inputs)?.write(&a.out)?;
    Ok(())
}

/// Groups a sample dump by sentence; word sequences stand in for token
/// sequences (identical strings have identical words).
fn read_sample_sets(path: &Path) -> Result<Vec<SampleSet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    let mut sets: Vec<SampleSet> = Vec::new();
    let mut interner = std::collections::HashMap::new();
    let mut current = None;
    for line in text.lines() {
        let mut parts = line.splitn(3, '\t');
        let (Some(idx), Some(lp)) = (parts.next(), parts.next()) else {
            return Err(Error::Format {
                what: "sample dump",
                detail: format!("bad line {line:?}"),
            });
        };
        let bad = || Error::Format {
            what: "sample dump",
            detail: format!("bad line {line:?}"),
        };
        let idx: usize = idx.parse().map_err(|_| bad())?;
        let logprob: f64 = lp.parse().map_err(|_| bad())?;
        let tokens: Vec<TokenId> = parts
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(|w| {
                let next = interner.len() as TokenId;
                *interner.entry(w.to_owned()).or_insert(next)
            })
            .collect();
        if current != Some(idx) {
            sets.push(SampleSet {
                samples: Vec::new(),
                seed: 0,
            });
            current = Some(idx);
        }
        sets.last_mut().expect("pushed").samples.push(Sample { tokens, logprob });
    }
    Ok(sets)
}

fn eval(a: EvalArgs) -> Result<()> {
    let need = |p: &Option<PathBuf>, flag: &str| p.clone().ok_or_else(|| invalid(format!("--{flag} is required for this metric")));
    let value = match a.metric {
        MetricName::Entropy | MetricName::MassCoverage | MetricName::UniqueSamples => {
            let sets = read_sample_sets(&need(&a.samples, "samples")?)?;
            if sets.is_empty() {
                return Err(Error::Metric("empty sample dump".into()));
            }
            let mut total = 0.0;
            for s in &sets {
                total += match a.metric {
                    MetricName::Entropy => metrics::entropy_estimate(s)?,
                    MetricName::MassCoverage => metrics::mass_coverage(s)?,
                    _ => metrics::unique_count(s)? as f64,
                };
            }
            total / sets.len() as f64
        }
        MetricName::Uniq => {
            let hyp: Vec<Vec<String>> = read_lines(&need(&a.hyp, "hyp")?)?.iter().map(|s| s.words().to_vec()).collect();
            metrics::corpus_repetition(hyp.iter().map(Vec::as_slice), a.n)?
        }
        MetricName::LengthRatio | MetricName::Bleu => {
            let hyp: Vec<Vec<String>> = read_lines(&need(&a.hyp, "hyp")?)?.iter().map(|s| s.words().to_vec()).collect();
            let refs: Vec<Vec<String>> = read_lines(&need(&a.r#ref, "ref")?)?.iter().map(|s| s.words().to_vec()).collect();
            if hyp.len() != refs.len() {
                return Err(Error::Alignment {
                    source_lines: hyp.len(),
                    target_lines: refs.len(),
                });
            }
            if matches!(a.metric, MetricName::Bleu) {
                experiment::word_bleu(&hyp, &refs)?
            } else {
                metrics::length_ratio(hyp.iter().zip(&refs).map(|(h, r)| EvalPair {
                    hypothesis: h.as_slice(),
                    reference: r.as_slice(),
                }))?
            }
        }
    };
    // Debug formatting keeps a trailing ".0" on integral values
    println!("{value:?}");
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut config = SweepConfig::load(&a.config)?;
    config.master_seed = a.seed;
    let workers = experiment::resolve_workers(a.workers);
    log::info!("sweep with {workers} workers");
    let (result, dumps) = experiment::run_sweep(&config, workers)?;
    let prepared = if dumps.is_empty() {
        None
    } else {
        Some(experiment::Prepared::new(&config)?)
    };
    report::write_report(&a.out, &result, &config.repetition_orders, &dumps, prepared.as_ref())?;
    let snapshot = serde_json::to_value(&config).expect("serializable");
    let mut inputs: Vec<&Path> = vec![&a.config];
    if let experiment::CorpusSpec::Files {
        train_source,
        train_target,
        dev_source,
        dev_target,
        test_source,
        test_target,
    } = &config.corpus
    {
        inputs.extend([train_source, train_target, dev_source, dev_target, test_source, test_target].map(|p| p.as_path()));
    }
    manifest(Some(a.seed), snapshot, &inputs)?.write(&a.out)?;
    Ok(())
}

fn toy_corpus(a: ToyArgs) -> Result<()> {
    let cfg = ToyConfig {
        seed: a.seed,
        train: a.train,
        dev: a.dev,
        test: a.test,
        ..ToyConfig::default()
    };
    let corpus = experiment::generate_toy(&cfg);
    experiment::toy::write_toy(&corpus, &a.out)?;
    manifest(Some(a.seed), serde_json::to_value(cfg).expect("serializable"), &[])?.write(&a.out)?;
    Ok(())
}

fn serve_check(a: ServeCheckArgs) -> Result<bool> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let ep = endpoint(&a.bridge_cmd, &a.bridge_tcp, &vocab, a.timeout_ms)?;
    let results = bridge::conformance_check(&ep, a.requests, a.seed);
    let mut all = true;
    for r in &results {
        all &= r.passed;
        println!("{}\t{}\t{}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    Ok(all)
}

fn serve(a: ServeArgs) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let model = load_model(&a.model)?;
    if model.vocab_size() != vocab.len() {
        return Err(invalid("model and vocabulary sizes differ"));
    }
    let hash = vocab.hash();
    let io_err = |e: io::Error| Error::Io {
        path: PathBuf::from("<bridge>"),
        source: e,
    };
    match &a.tcp {
        None => bridge::serve(&model, &hash, io::stdin().lock(), io::stdout().lock()).map_err(io_err),
        Some(addr) => {
            let listener = TcpListener::bind(addr).map_err(io_err)?;
            // the bound address matters when port 0 was requested
            eprintln!("listening on {}", listener.local_addr().map_err(io_err)?);
            for stream in listener.incoming() {
                let stream = stream.map_err(io_err)?;
                let w = stream.try_clone().map_err(io_err)?;
                if let Err(e) = bridge::serve(&model, &hash, BufReader::new(stream), w) {
                    log::warn!("connection ended: {e}");
                }
            }
            Ok(())
        }
    }
}

fn report_error(kind: &str, message: &str) {
    let line = json!({"error": kind, "message": message});
    let _ = writeln!(io::stderr(), "{line}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            report_error("usage", first);
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::LearnBpe(a) => learn_bpe(a),
        Command::Truncate(a) => truncate(a),
        Command::Fit(a) => fit(a),
        Command::Decode(a) => decode(a),
        Command::Sample(a) => sample(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::ToyCorpus(a) => toy_corpus(a),
        Command::ServeCheck(a) => match serve_check(a) {
            Ok(true) => Ok(()),
            Ok(false) => {
                report_error("conformance", "one or more bridge checks failed");
                return ExitCode::from(1);
            }
            Err(e) => Err(e),
        },
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::from(1)
        }
    }
}
