//! Search and sampling over raw (unnormalized-by-length) log-probabilities.
//!
//! `max_len` bounds the number of generated tokens, EOS included: a
//! hypothesis stops either when it emits EOS or when it holds `max_len`
//! tokens, in which case it is kept as a truncated, unterminated output.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ConditionalLM, Dist, Scorer};
use crate::tokenizer::EOS;
use crate::TokenId;

pub const DEFAULT_MAX_LEN: usize = 300;
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn root() -> Self {
        Hypothesis {
            tokens: Vec::new(),
            logprob: 0.0,
            finished: false,
        }
    }

    pub fn is_terminated(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }

    /// Output tokens with the trailing EOS removed.
    pub fn content(&self) -> &[TokenId] {
        strip_eos(&self.tokens)
    }
}

pub fn strip_eos(tokens: &[TokenId]) -> &[TokenId] {
    match tokens.split_last() {
        Some((&EOS, rest)) => rest,
        _ => tokens,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub max_len: usize,
}

impl DecodeConfig {
    pub fn new(beam_size: usize, max_len: usize) -> Result<Self> {
        if beam_size < 1 || max_len < 1 {
            return Err(Error::InvalidArgument("beam size and max_len must be >= 1".into()));
        }
        Ok(DecodeConfig { beam_size, max_len })
    }
}

/// Better-first order: higher logprob, then lexicographically smaller tokens.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.logprob
        .partial_cmp(&a.logprob)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

pub fn greedy(model: &(impl ConditionalLM + ?Sized), source: &[TokenId], max_len: usize) -> Result<Hypothesis> {
    if max_len < 1 {
        return Err(Error::InvalidArgument("max_len must be >= 1".into()));
    }
    let mut scorer = Scorer::new(model, source)?;
    let mut hyp = Hypothesis::root();
    while !hyp.finished {
        let d = scorer.dist(&hyp.tokens)?;
        let t = d.argmax();
        hyp.logprob += d.logprob(t as usize);
        hyp.tokens.push(t);
        hyp.finished = t == EOS || hyp.tokens.len() == max_len;
    }
    Ok(hyp)
}

/// Indices of the `k` best tokens of `logprobs` (ties: lowest id), plus EOS.
fn top_tokens(logprobs: &[f64], k: usize) -> Vec<TokenId> {
    let mut idx: Vec<TokenId> = (0..logprobs.len() as TokenId)
        .filter(|&t| logprobs[t as usize] > f64::NEG_INFINITY)
        .collect();
    let by = |a: &TokenId, b: &TokenId| {
        logprobs[*b as usize]
            .partial_cmp(&logprobs[*a as usize])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    if idx.len() > k {
        idx.select_nth_unstable_by(k - 1, by);
        idx.truncate(k);
    }
    if !idx.contains(&EOS) && logprobs[EOS as usize] > f64::NEG_INFINITY {
        idx.push(EOS);
    }
    idx
}

/// Breadth-`k` search. Each step expands all active hypotheses, keeps the `k`
/// best candidates, and moves the finished ones among them into a pool of
/// capacity `k`. Search stops once the best active score falls below the
/// worst pooled score with the pool full, when nothing is active, or at
/// `max_len`. Returns the pool, best first.
pub fn beam_search(
    model: &(impl ConditionalLM + ?Sized),
    source: &[TokenId],
    cfg: DecodeConfig,
) -> Result<Vec<Hypothesis>> {
    let k = cfg.beam_size;
    let mut scorer = Scorer::new(model, source)?;
    let mut active = vec![Hypothesis::root()];
    let mut pool: Vec<Hypothesis> = Vec::with_capacity(k);
    while !active.is_empty() {
        let mut candidates = Vec::with_capacity(active.len() * (k + 1));
        for h in &active {
            let d = scorer.dist(&h.tokens)?;
            for t in top_tokens(d.logprobs(), k) {
                let mut tokens = Vec::with_capacity(h.tokens.len() + 1);
                tokens.extend_from_slice(&h.tokens);
                tokens.push(t);
                let finished = t == EOS || tokens.len() == cfg.max_len;
                candidates.push(Hypothesis {
                    tokens,
                    logprob: h.logprob + d.logprob(t as usize),
                    finished,
                });
            }
        }
        candidates.sort_by(rank);
        candidates.truncate(k);
        active.clear();
        for c in candidates {
            if c.finished {
                pool.push(c);
            } else {
                active.push(c);
            }
        }
        pool.sort_by(rank);
        pool.truncate(k);
        if pool.len() == k {
            let worst = pool[k - 1].logprob;
            if active.first().is_none_or(|best| best.logprob < worst) {
                break;
            }
        }
    }
    Ok(pool)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
}

impl Sample {
    pub fn content(&self) -> &[TokenId] {
        strip_eos(&self.tokens)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
    pub seed: u64,
}

/// Draws `n` sequences token by token. Sample `i` uses the ChaCha20 stream
/// `i` under key `seed`, so it depends only on `(seed, i)`; callers derive
/// `seed` per sentence.
pub fn ancestral_sample(
    model: &(impl ConditionalLM + ?Sized),
    source: &[TokenId],
    n: usize,
    seed: u64,
    max_len: usize,
) -> Result<SampleSet> {
    if n < 1 || max_len < 1 {
        return Err(Error::InvalidArgument("sample count and max_len must be >= 1".into()));
    }
    let mut scorer = Scorer::new(model, source)?;
    // Running sums per cached distribution, accumulated left to right exactly
    // as a linear scan would, so a binary search picks the same token.
    let mut cdfs: HashMap<*const Dist, (Arc<Dist>, Vec<f64>)> = HashMap::new();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut tokens = Vec::new();
        let mut logprob = 0.0;
        loop {
            let d = scorer.dist(&tokens)?;
            let (d, cdf) = cdfs.entry(Arc::as_ptr(&d)).or_insert_with(|| {
                let mut acc = 0.0;
                let cdf = d
                    .probs
                    .iter()
                    .map(|&p| {
                        acc += p;
                        acc
                    })
                    .collect();
                (Arc::clone(&d), cdf)
            });
            let u: f64 = rng.random();
            // First index whose running sum exceeds u; its probability is
            // necessarily positive.
            let t = match cdf.partition_point(|&c| c <= u) {
                t if t < cdf.len() => t,
                _ => d.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0),
            };
            logprob += d.logprob(t);
            tokens.push(t as TokenId);
            if t as TokenId == EOS || tokens.len() == max_len {
                break;
            }
        }
        samples.push(Sample { tokens, logprob });
    }
    Ok(SampleSet { samples, seed })
}

/// Number of candidate outputs the exhaustive search visits.
pub fn candidate_count(vocab_size: usize, max_len: usize) -> u128 {
    let b = vocab_size.saturating_sub(1) as u128;
    let mut total: u128 = 0;
    let mut pow: u128 = 1;
    for _ in 0..max_len {
        total = total.saturating_add(pow);
        pow = pow.saturating_mul(b);
    }
    total.saturating_add(pow)
}

/// Highest-scoring output over every EOS-terminated string that fits in
/// `max_len` tokens and every unterminated string of exactly `max_len`
/// tokens (the same candidate set the decoders can produce). Ties go to
/// the lexicographically smallest token sequence.
pub fn exhaustive_mode(model: &(impl ConditionalLM + ?Sized), source: &[TokenId], max_len: usize) -> Result<Hypothesis> {
    if max_len < 1 {
        return Err(Error::InvalidArgument("max_len must be >= 1".into()));
    }
    let count = candidate_count(model.vocab_size(), max_len);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::EnumerationGuard {
            count,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let mut scorer = Scorer::new(model, source)?;
    let mut best: Option<Hypothesis> = None;
    let mut prefix = Vec::with_capacity(max_len);
    search(&mut scorer, &mut prefix, 0.0, max_len, &mut best)?;
    Ok(best.expect("at least one candidate"))
}

fn search(
    scorer: &mut Scorer<'_>,
    prefix: &mut Vec<TokenId>,
    logprob: f64,
    max_len: usize,
    best: &mut Option<Hypothesis>,
) -> Result<()> {
    let d = scorer.dist(prefix)?;
    // DFS in id order visits candidates in lexicographic order, so a strict
    // improvement test keeps the smallest among equals.
    for t in 0..d.len() as TokenId {
        let lp = logprob + d.logprob(t as usize);
        prefix.push(t);
        if t == EOS || prefix.len() == max_len {
            if best.as_ref().is_none_or(|b| lp > b.logprob) {
                *best = Some(Hypothesis {
                    tokens: prefix.clone(),
                    logprob: lp,
                    finished: true,
                });
            }
        } else {
            search(scorer, prefix, lp, max_len, best)?;
        }
        prefix.pop();
    }
    Ok(())
}

/// `sentence-index TAB logprob TAB space-joined tokens`, one hypothesis per line.
pub fn write_dump<'a, W: Write>(
    mut out: W,
    rows: impl IntoIterator<Item = (usize, f64, &'a [String])>,
) -> std::io::Result<()> {
    for (i, lp, toks) in rows {
        writeln!(out, "{i}\t{lp}\t{}", toks.join(" "))?;
    }
    Ok(())
}
