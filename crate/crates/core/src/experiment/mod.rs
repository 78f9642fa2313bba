//! The s × decoder grid: prepare data once, fit one model per truncation
//! level, decode and sample the test set, score, and aggregate over restarts.
//!
//! All randomness comes from [`derive_seed`], and results are assembled in
//! grid order, so output is independent of the worker count.

pub mod report;
pub mod toy;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{load_parallel, remove_copy_noise, truncate_corpus, ParallelCorpus, Split, TruncationLevel};
use crate::decoding::{ancestral_sample, beam_search, greedy, DecodeConfig, Hypothesis, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalPair, MetricReport};
use crate::models::{AnyModel, ConditionalLM, ConditionalNGramModel, NGramConfig, SmoothingConfig};
use crate::tokenizer::{detokenize, vocabulary_for, BpeModel, Vocabulary, DEFAULT_NUM_MERGES};
use crate::TokenId;

pub use toy::{generate as generate_toy, ToyConfig, ToyCorpus};

pub const WORKERS_ENV: &str = "CONSTRAINLAB_WORKERS";
pub const REPETITION_ORDERS: [usize; 4] = [1, 2, 4, 6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSpec {
    Toy(ToyConfig),
    Files {
        train_source: PathBuf,
        train_target: PathBuf,
        dev_source: PathBuf,
        dev_target: PathBuf,
        test_source: PathBuf,
        test_target: PathBuf,
    },
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec::Toy(ToyConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub s_values: Vec<u32>,
    pub beam_sizes: Vec<usize>,
    /// 0 disables the sampling cell.
    pub samples_per_sentence: usize,
    pub restarts: usize,
    pub master_seed: u64,
    pub model: NGramConfig,
    pub epsilons: Vec<f64>,
    /// When non-empty, lambda is chosen per s by greedy dev BLEU.
    pub lambda_grid: Vec<f64>,
    pub repetition_orders: Vec<usize>,
    pub corpus: CorpusSpec,
    pub num_merges: usize,
    pub max_len: usize,
    /// Use only the first `test_limit` test pairs.
    pub test_limit: Option<usize>,
    /// Write search outputs under `outputs/`.
    pub dump_outputs: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            s_values: (0..=100).step_by(10).collect(),
            beam_sizes: vec![1, 4, 16, 64],
            samples_per_sentence: 1000,
            restarts: 3,
            master_seed: 0,
            model: NGramConfig::default(),
            epsilons: vec![0.0, 0.1],
            lambda_grid: Vec::new(),
            repetition_orders: REPETITION_ORDERS.to_vec(),
            corpus: CorpusSpec::default(),
            num_merges: DEFAULT_NUM_MERGES,
            max_len: DEFAULT_MAX_LEN,
            test_limit: None,
            dump_outputs: false,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.s_values.is_empty() {
            return bad("s_values is empty".into());
        }
        for &s in &self.s_values {
            TruncationLevel::new(s)?;
        }
        if self.restarts < 1 {
            return bad("restarts must be >= 1".into());
        }
        if self.beam_sizes.contains(&0) {
            return bad("beam sizes must be >= 1".into());
        }
        if self.max_len < 1 {
            return bad("max_len must be >= 1".into());
        }
        for &e in &self.epsilons {
            SmoothingConfig::new(e)?;
        }
        if self.epsilons.is_empty() {
            return bad("epsilons is empty".into());
        }
        for &n in &self.repetition_orders {
            if !REPETITION_ORDERS.contains(&n) {
                return bad(format!("repetition order {n} has no CSV column (allowed: 1, 2, 4, 6)"));
            }
        }
        self.model.validate()?;
        for &l in &self.lambda_grid {
            NGramConfig { lambda: l, ..self.model }.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(text).map_err(|e| Error::format("sweep config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative corpus paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let (CorpusSpec::Files { train_source, train_target, dev_source, dev_target, test_source, test_target }, Some(base)) =
            (&mut cfg.corpus, path.parent())
        {
            for p in [train_source, train_target, dev_source, dev_target, test_source, test_target] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }
}

/// Seed for one unit of randomness: SHA-256 over a domain tag and the
/// little-endian fields (cell id length-prefixed), first 8 bytes as LE u64.
pub fn derive_seed(master_seed: u64, s: u32, cell_id: &str, restart: u64, sentence: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"constrainlab-seed-v1");
    h.update(master_seed.to_le_bytes());
    h.update(s.to_le_bytes());
    h.update((cell_id.len() as u64).to_le_bytes());
    h.update(cell_id.as_bytes());
    h.update(restart.to_le_bytes());
    h.update(sentence.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Sentence index used for the per-restart seed recorded in the CSV.
pub const RESTART_SEED_SENTENCE: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderSpec {
    Greedy,
    Beam(usize),
    Sample(usize),
}

impl DecoderSpec {
    /// Beam size 1 is reported as greedy.
    pub fn search(k: usize) -> Self {
        if k == 1 {
            DecoderSpec::Greedy
        } else {
            DecoderSpec::Beam(k)
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DecoderSpec::Greedy => "greedy",
            DecoderSpec::Beam(_) => "beam",
            DecoderSpec::Sample(_) => "sample",
        }
    }

    pub fn k(&self) -> Option<usize> {
        match *self {
            DecoderSpec::Greedy => Some(1),
            DecoderSpec::Beam(k) => Some(k),
            DecoderSpec::Sample(_) => None,
        }
    }

    pub fn n(&self) -> Option<usize> {
        match *self {
            DecoderSpec::Sample(n) => Some(n),
            _ => None,
        }
    }

    pub fn is_search(&self) -> bool {
        !matches!(self, DecoderSpec::Sample(_))
    }

    /// Seed-relevant identity; excludes epsilon so smoothed and unsmoothed
    /// cells share random numbers.
    pub fn cell_id(&self) -> String {
        match self {
            DecoderSpec::Greedy => "greedy".into(),
            DecoderSpec::Beam(k) => format!("beam-k{k}"),
            DecoderSpec::Sample(n) => format!("sample-n{n}"),
        }
    }
}

impl fmt::Display for DecoderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.cell_id())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub s: u32,
    pub decoder: DecoderSpec,
    pub epsilon: f64,
    pub restart: usize,
    pub restart_seed: u64,
    pub metrics: MetricReport,
    /// Search results at s = 0 decode the same empty source for every
    /// sentence and are left out of plots by default.
    pub excluded: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub s: u32,
    pub decoder: DecoderSpec,
    pub epsilon: f64,
    pub restarts: usize,
    pub mean: MetricReport,
    pub std: MetricReport,
    pub excluded: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    pub aggregates: Vec<Aggregate>,
    /// Repetition of the references, per order in `repetition_orders`.
    pub reference_repetition: Vec<(usize, f64)>,
    /// Lambda used at each s.
    pub lambdas: Vec<(u32, f64)>,
}

/// Corpus after copy-noise removal, with the subword model and vocabulary.
pub struct Prepared {
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    pub test: ParallelCorpus,
    pub bpe: BpeModel,
    pub vocab: Vocabulary,
    train_targets: Vec<Vec<TokenId>>,
    dev_refs: Vec<Vec<String>>,
    test_refs: Vec<Vec<String>>,
}

/// Source-side data of one truncation level.
pub struct Level {
    pub s: TruncationLevel,
    pub train_sources: Vec<Vec<TokenId>>,
    pub dev_sources: Vec<Vec<TokenId>>,
    pub test_sources: Vec<Vec<TokenId>>,
}

fn load_corpus(spec: &CorpusSpec) -> Result<(ParallelCorpus, ParallelCorpus, ParallelCorpus)> {
    Ok(match spec {
        CorpusSpec::Toy(cfg) => {
            let t = toy::generate(cfg);
            (t.train, t.dev, t.test)
        }
        CorpusSpec::Files {
            train_source,
            train_target,
            dev_source,
            dev_target,
            test_source,
            test_target,
        } => (
            load_parallel(train_source, train_target, Split::Train)?,
            load_parallel(dev_source, dev_target, Split::Dev)?,
            load_parallel(test_source, test_target, Split::Test)?,
        ),
    })
}

fn words(c: &ParallelCorpus) -> Vec<Vec<String>> {
    c.targets().map(|t| t.words().to_vec()).collect()
}

impl Prepared {
    pub fn new(config: &SweepConfig) -> Result<Self> {
        let (train, dev, test) = load_corpus(&config.corpus)?;
        let train = remove_copy_noise(train);
        let dev = remove_copy_noise(dev);
        let mut test = remove_copy_noise(test);
        if let Some(limit) = config.test_limit {
            test.pairs.truncate(limit);
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let bpe = BpeModel::learn(&train, config.num_merges)?;
        let vocab = vocabulary_for(&bpe, &train);
        let train_targets = bpe
            .apply_all(train.targets())
            .iter()
            .map(|p| vocab.encode(p, false))
            .collect();
        Ok(Prepared {
            dev_refs: words(&dev),
            test_refs: words(&test),
            train,
            dev,
            test,
            bpe,
            vocab,
            train_targets,
        })
    }

    pub fn level(&self, s: TruncationLevel) -> Level {
        let encode = |c: &ParallelCorpus| -> Vec<Vec<TokenId>> {
            let t = truncate_corpus(c, s);
            self.bpe
                .apply_all(t.sources())
                .iter()
                .map(|p| self.vocab.encode(p, false))
                .collect()
        };
        Level {
            s,
            train_sources: encode(&self.train),
            dev_sources: encode(&self.dev),
            test_sources: encode(&self.test),
        }
    }

    pub fn test_references(&self) -> &[Vec<String>] {
        &self.test_refs
    }

    /// Token ids back to words.
    pub fn words(&self, tokens: &[TokenId]) -> Result<Vec<String>> {
        let content = crate::decoding::strip_eos(tokens);
        let pieces = self.vocab.decode(content)?;
        Ok(detokenize(&pieces).sentence.words().to_vec())
    }

    pub fn fit(&self, level: &Level, cfg: NGramConfig) -> Result<ConditionalNGramModel> {
        let pairs: Vec<(&[TokenId], &[TokenId])> = level
            .train_sources
            .iter()
            .zip(&self.train_targets)
            .map(|(s, t)| (s.as_slice(), t.as_slice()))
            .collect();
        ConditionalNGramModel::fit(&pairs, self.vocab.len(), cfg)
    }

    /// Fits the level's model, choosing lambda by dev BLEU when a grid is given.
    pub fn fit_level(&self, level: &Level, config: &SweepConfig) -> Result<ConditionalNGramModel> {
        let base = self.fit(level, config.model)?;
        if config.lambda_grid.is_empty() || self.dev.is_empty() {
            return Ok(base);
        }
        let mut best: Option<(f64, ConditionalNGramModel)> = None;
        for &lambda in &config.lambda_grid {
            let m = base.with_lambda(lambda)?;
            let outs = decode_unique(&m, &level.dev_sources, |m, src| greedy(m, src, config.max_len))?;
            let hyps: Vec<Vec<String>> = outs.iter().map(|h| self.words(&h.tokens)).collect::<Result<_>>()?;
            let score = word_bleu(&hyps, &self.dev_refs)?;
            log::debug!("s={} lambda={lambda} dev bleu={score}", level.s);
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, m));
            }
        }
        Ok(best.expect("non-empty grid").1)
    }
}

/// Decodes each distinct source once, in parallel, and maps results back in order.
fn decode_unique<M, F>(model: &M, sources: &[Vec<TokenId>], decode: F) -> Result<Vec<Hypothesis>>
where
    M: ConditionalLM + ?Sized,
    F: Fn(&M, &[TokenId]) -> Result<Hypothesis> + Sync,
{
    let mut index: HashMap<&[TokenId], usize> = HashMap::new();
    let mut unique: Vec<&[TokenId]> = Vec::new();
    let slots: Vec<usize> = sources
        .iter()
        .map(|s| {
            *index.entry(s.as_slice()).or_insert_with(|| {
                unique.push(s);
                unique.len() - 1
            })
        })
        .collect();
    let decoded: Vec<Hypothesis> = unique.par_iter().map(|s| decode(model, s)).collect::<Result<_>>()?;
    Ok(slots.into_iter().map(|i| decoded[i].clone()).collect())
}

struct Interner(HashMap<String, TokenId>);

impl Interner {
    fn ids(&mut self, words: &[String]) -> Vec<TokenId> {
        words
            .iter()
            .map(|w| {
                let next = self.0.len() as TokenId;
                *self.0.entry(w.clone()).or_insert(next)
            })
            .collect()
    }
}

/// Corpus BLEU over whitespace words.
pub fn word_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    let mut interner = Interner(HashMap::new());
    let h: Vec<Vec<TokenId>> = hyps.iter().map(|w| interner.ids(w)).collect();
    let r: Vec<Vec<TokenId>> = refs.iter().map(|w| interner.ids(w)).collect();
    let hs: Vec<&[TokenId]> = h.iter().map(Vec::as_slice).collect();
    let rs: Vec<&[TokenId]> = r.iter().map(Vec::as_slice).collect();
    metrics::bleu(&hs, &rs)
}

/// Macro-averaged unique n-gram fraction, `None` if no sequence is long enough.
fn repetition<S: AsRef<[String]>>(seqs: &[S], n: usize) -> Result<Option<f64>> {
    let (mut sum, mut count) = (0.0, 0usize);
    for s in seqs {
        if let Some(f) = metrics::unique_ngram_fraction(s.as_ref(), n)? {
            sum += f;
            count += 1;
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Unique n-gram fractions of the references.
pub fn reference_repetition(prepared: &Prepared, orders: &[usize]) -> Result<Vec<(usize, f64)>> {
    orders
        .iter()
        .map(|&n| Ok((n, repetition(&prepared.test_refs, n)?.unwrap_or(f64::NAN))))
        .collect()
}

/// Metrics of one search output set.
pub fn score_search(outputs: &[Vec<String>], refs: &[Vec<String>], orders: &[usize]) -> Result<MetricReport> {
    let pairs = outputs.iter().zip(refs).map(|(h, r)| EvalPair {
        hypothesis: h.as_slice(),
        reference: r.as_slice(),
    });
    let mut report = MetricReport {
        length_ratio: Some(metrics::length_ratio(pairs)?),
        bleu: Some(word_bleu(outputs, refs)?),
        ..MetricReport::default()
    };
    for &n in orders {
        report.set_uniq(n, repetition(outputs, n)?);
    }
    Ok(report)
}

/// Everything a cell needs: prepared data, one level, and its fitted model.
pub struct LevelContext<'a> {
    pub prepared: &'a Prepared,
    pub level: Level,
    pub model: ConditionalNGramModel,
}

impl<'a> LevelContext<'a> {
    pub fn new(prepared: &'a Prepared, config: &SweepConfig, s: TruncationLevel) -> Result<Self> {
        let level = prepared.level(s);
        let model = prepared.fit_level(&level, config)?;
        Ok(LevelContext { prepared, level, model })
    }

    pub fn model(&self, epsilon: f64) -> Result<AnyModel> {
        Ok(AnyModel::NGram(self.model.clone()).smoothed(SmoothingConfig::new(epsilon)?))
    }

    /// Search outputs for every test sentence.
    pub fn search(&self, epsilon: f64, k: usize, max_len: usize) -> Result<Vec<Hypothesis>> {
        let model = self.model(epsilon)?;
        if k == 1 {
            decode_unique(&model, &self.level.test_sources, |m, src| greedy(m, src, max_len))
        } else {
            let cfg = DecodeConfig::new(k, max_len)?;
            decode_unique(&model, &self.level.test_sources, |m, src| {
                Ok(beam_search(m, src, cfg)?.into_iter().next().expect("non-empty beam"))
            })
        }
    }

    fn search_report(&self, outputs: &[Hypothesis], orders: &[usize]) -> Result<MetricReport> {
        let words: Vec<Vec<String>> = outputs.iter().map(|h| self.prepared.words(&h.tokens)).collect::<Result<_>>()?;
        score_search(&words, &self.prepared.test_refs, orders)
    }

    /// Sampling metrics for one restart.
    pub fn sample_report(&self, config: &SweepConfig, epsilon: f64, n: usize, restart: usize) -> Result<MetricReport> {
        let model = self.model(epsilon)?;
        let cell = DecoderSpec::Sample(n).cell_id();
        let s = self.level.s.percent();
        let orders = &config.repetition_orders;
        struct Acc {
            entropy: f64,
            coverage: f64,
            unique: f64,
            hyp_words: usize,
            uniq: Vec<(f64, usize)>,
        }
        let per_sentence: Vec<Acc> = self
            .level
            .test_sources
            .par_iter()
            .enumerate()
            .map(|(i, src)| {
                let seed = derive_seed(config.master_seed, s, &cell, restart as u64, i as u64);
                let set = ancestral_sample(&model, src, n, seed, config.max_len)?;
                let mut acc = Acc {
                    entropy: metrics::entropy_estimate(&set)?,
                    coverage: metrics::mass_coverage(&set)?,
                    unique: metrics::unique_count(&set)? as f64,
                    hyp_words: 0,
                    uniq: vec![(0.0, 0); orders.len()],
                };
                for sample in &set.samples {
                    let w = self.prepared.words(&sample.tokens)?;
                    acc.hyp_words += w.len();
                    for (slot, &ord) in acc.uniq.iter_mut().zip(orders) {
                        if let Some(f) = metrics::unique_ngram_fraction(&w, ord)? {
                            slot.0 += f;
                            slot.1 += 1;
                        }
                    }
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        let m = per_sentence.len() as f64;
        let ref_words: usize = self.prepared.test_refs.iter().map(Vec::len).sum();
        let hyp_words: usize = per_sentence.iter().map(|a| a.hyp_words).sum();
        let mut report = MetricReport {
            length_ratio: (ref_words > 0).then(|| hyp_words as f64 / (n * ref_words) as f64),
            entropy_nats: Some(per_sentence.iter().map(|a| a.entropy).sum::<f64>() / m),
            mass_coverage: Some(per_sentence.iter().map(|a| a.coverage).sum::<f64>() / m),
            unique_samples: Some(per_sentence.iter().map(|a| a.unique).sum::<f64>() / m),
            ..MetricReport::default()
        };
        for (j, &ord) in orders.iter().enumerate() {
            let (sum, count) = per_sentence
                .iter()
                .fold((0.0, 0usize), |(s, c), a| (s + a.uniq[j].0, c + a.uniq[j].1));
            report.set_uniq(ord, (count > 0).then(|| sum / count as f64));
        }
        Ok(report)
    }
}

fn record(config: &SweepConfig, s: u32, decoder: DecoderSpec, epsilon: f64, restart: usize, metrics: MetricReport) -> SweepRecord {
    SweepRecord {
        s,
        decoder,
        epsilon,
        restart,
        restart_seed: derive_seed(config.master_seed, s, &decoder.cell_id(), restart as u64, RESTART_SEED_SENTENCE),
        metrics,
        excluded: decoder.is_search() && s == 0,
    }
}

/// One grid cell for one restart.
pub fn run_cell(
    ctx: &LevelContext<'_>,
    config: &SweepConfig,
    decoder: DecoderSpec,
    epsilon: f64,
    restart: usize,
) -> Result<SweepRecord> {
    let s = ctx.level.s.percent();
    let metrics = match decoder {
        DecoderSpec::Sample(n) => ctx.sample_report(config, epsilon, n, restart)?,
        _ => {
            let out = ctx.search(epsilon, decoder.k().expect("search"), config.max_len)?;
            ctx.search_report(&out, &config.repetition_orders)?
        }
    };
    Ok(record(config, s, decoder, epsilon, restart, metrics))
}

pub fn grid_decoders(config: &SweepConfig) -> Vec<DecoderSpec> {
    let mut out: Vec<DecoderSpec> = config.beam_sizes.iter().map(|&k| DecoderSpec::search(k)).collect();
    if config.samples_per_sentence > 0 {
        out.push(DecoderSpec::Sample(config.samples_per_sentence));
    }
    out
}

pub fn resolve_workers(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Search outputs of one (s, epsilon, k) cell, kept for dumping.
pub struct SearchDump {
    pub s: u32,
    pub epsilon: f64,
    pub decoder: DecoderSpec,
    pub outputs: Vec<Hypothesis>,
}

fn cell_error(s: u32, decoder: DecoderSpec, epsilon: f64, e: Error) -> Error {
    Error::Cell {
        cell: format!("s={s} decoder={decoder} epsilon={epsilon}"),
        source: Box::new(e),
    }
}

/// Runs the whole grid on a pool of `workers` threads.
pub fn run_sweep(config: &SweepConfig, workers: usize) -> Result<(SweepResult, Vec<SearchDump>)> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| sweep_in_pool(config))
}

fn sweep_in_pool(config: &SweepConfig) -> Result<(SweepResult, Vec<SearchDump>)> {
    let prepared = Prepared::new(config)?;
    log::info!(
        "prepared: {} train, {} dev, {} test pairs; vocabulary {}",
        prepared.train.len(),
        prepared.dev.len(),
        prepared.test.len(),
        prepared.vocab.len()
    );
    let decoders = grid_decoders(config);
    let levels: Vec<(Vec<SweepRecord>, Vec<SearchDump>, f64)> = config
        .s_values
        .par_iter()
        .map(|&s| -> Result<_> {
            let ctx = LevelContext::new(&prepared, config, TruncationLevel::new(s)?)?;
            let mut records = Vec::new();
            let mut dumps = Vec::new();
            for &epsilon in &config.epsilons {
                for &decoder in &decoders {
                    let wrap = |e| cell_error(s, decoder, epsilon, e);
                    if decoder.is_search() {
                        // count models are deterministic, so one decode serves every restart
                        let out = ctx
                            .search(epsilon, decoder.k().expect("search"), config.max_len)
                            .map_err(wrap)?;
                        let metrics = ctx.search_report(&out, &config.repetition_orders).map_err(wrap)?;
                        for r in 0..config.restarts {
                            records.push(record(config, s, decoder, epsilon, r, metrics.clone()));
                        }
                        if config.dump_outputs {
                            dumps.push(SearchDump {
                                s,
                                epsilon,
                                decoder,
                                outputs: out,
                            });
                        }
                    } else {
                        let rs: Vec<SweepRecord> = (0..config.restarts)
                            .into_par_iter()
                            .map(|r| run_cell(&ctx, config, decoder, epsilon, r))
                            .collect::<Result<_>>()
                            .map_err(wrap)?;
                        records.extend(rs);
                    }
                    log::info!("done s={s} epsilon={epsilon} {decoder}");
                }
            }
            Ok((records, dumps, ctx.model.config().lambda))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut dumps = Vec::new();
    let mut lambdas = Vec::new();
    for (&s, (r, d, l)) in config.s_values.iter().zip(levels) {
        records.extend(r);
        dumps.extend(d);
        lambdas.push((s, l));
    }
    let aggregates = aggregate(&records);
    Ok((
        SweepResult {
            records,
            aggregates,
            reference_repetition: reference_repetition(&prepared, &config.repetition_orders)?,
            lambdas,
        },
        dumps,
    ))
}

/// Per-cell mean and sample standard deviation (0 for a single restart).
pub fn aggregate(records: &[SweepRecord]) -> Vec<Aggregate> {
    let mut out: Vec<Aggregate> = Vec::new();
    let mut groups: Vec<Vec<&SweepRecord>> = Vec::new();
    for r in records {
        let same = |a: &Aggregate| a.s == r.s && a.decoder == r.decoder && a.epsilon.to_bits() == r.epsilon.to_bits();
        match out.iter().position(same) {
            Some(i) => groups[i].push(r),
            None => {
                out.push(Aggregate {
                    s: r.s,
                    decoder: r.decoder,
                    epsilon: r.epsilon,
                    restarts: 0,
                    mean: MetricReport::default(),
                    std: MetricReport::default(),
                    excluded: r.excluded,
                });
                groups.push(vec![r]);
            }
        }
    }
    for (a, g) in out.iter_mut().zip(groups) {
        a.restarts = g.len();
        let cols: Vec<[Option<f64>; 9]> = g.iter().map(|r| r.metrics.values()).collect();
        let mut mean = [None; 9];
        let mut std = [None; 9];
        for j in 0..9 {
            let vals: Option<Vec<f64>> = cols.iter().map(|c| c[j]).collect();
            if let Some(v) = vals {
                let n = v.len() as f64;
                let mu = v.iter().sum::<f64>() / n;
                let var = if v.len() > 1 {
                    v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                // identical inputs must give exactly their value back
                let mu = if v.iter().all(|&x| x == v[0]) { v[0] } else { mu };
                mean[j] = Some(mu);
                std[j] = Some(var.sqrt());
            }
        }
        a.mean = MetricReport::from_values(mean);
        a.std = MetricReport::from_values(std);
    }
    out
}
