//! Conditional next-token models `p(next | source, target prefix)`.
//!
//! Every model yields a full distribution over the vocabulary (EOS included).
//! Decoders talk to models through [`Scorer`], which binds a source sentence
//! once and memoizes distributions by the part of the prefix the model
//! actually looks at.

mod ngram;
mod serialize;
mod smoothing;
mod unigram;

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

pub use ngram::{ConditionalNGramModel, NGramConfig, DEFAULT_ADDITIVE, DEFAULT_LAMBDA, DEFAULT_ORDER};
pub use serialize::{load_model, save_model, AnyModel};
pub use smoothing::{smooth, SmoothedModel, SmoothingConfig};
pub use unigram::UnigramModel;

use crate::error::{Error, Result};
use crate::TokenId;

/// Tolerance on `Σ p = 1` for every returned distribution.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// A next-token distribution. Natural-log probabilities are derived on first
/// use unless the producer supplied its own.
#[derive(Clone, Debug)]
pub struct Dist {
    pub probs: Vec<f64>,
    logprobs: OnceLock<Vec<f64>>,
}

impl PartialEq for Dist {
    fn eq(&self, other: &Self) -> bool {
        self.probs == other.probs && self.logprobs() == other.logprobs()
    }
}

impl Dist {
    pub fn from_probs(probs: Vec<f64>) -> Self {
        Dist {
            probs,
            logprobs: OnceLock::new(),
        }
    }

    /// Both views given explicitly, for producers that work in log space.
    pub fn from_parts(probs: Vec<f64>, logprobs: Vec<f64>) -> Self {
        Dist {
            probs,
            logprobs: OnceLock::from(logprobs),
        }
    }

    pub fn logprobs(&self) -> &[f64] {
        self.logprobs.get_or_init(|| self.probs.iter().map(|p| p.ln()).collect())
    }

    /// Log-probability of one token without materializing the whole vector.
    pub fn logprob(&self, t: usize) -> f64 {
        match self.logprobs.get() {
            Some(lp) => lp[t],
            None => self.probs[t].ln(),
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Highest-probability token, lowest id on ties.
    pub fn argmax(&self) -> TokenId {
        let logprobs = self.logprobs();
        let mut best = 0;
        for (i, &lp) in logprobs.iter().enumerate() {
            if lp > logprobs[best] {
                best = i;
            }
        }
        best as TokenId
    }
}

/// A model with its source sentence already bound.
pub trait Conditioned: Send {
    fn next_dist(&self, prefix: &[TokenId]) -> Result<Dist>;
}

pub trait ConditionalLM: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Number of trailing prefix tokens that determine the next distribution
    /// once the source is fixed; `None` means the whole prefix matters.
    fn context_len(&self) -> Option<usize>;

    fn condition<'a>(&'a self, source: &[TokenId]) -> Result<Box<dyn Conditioned + 'a>>;

    fn next_dist(&self, source: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self.condition(source)?.next_dist(prefix)?.probs)
    }
}

impl<M: ConditionalLM + ?Sized> ConditionalLM for Box<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn context_len(&self) -> Option<usize> {
        (**self).context_len()
    }
    fn condition<'a>(&'a self, source: &[TokenId]) -> Result<Box<dyn Conditioned + 'a>> {
        (**self).condition(source)
    }
}

impl<M: ConditionalLM + ?Sized> ConditionalLM for Arc<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn context_len(&self) -> Option<usize> {
        (**self).context_len()
    }
    fn condition<'a>(&'a self, source: &[TokenId]) -> Result<Box<dyn Conditioned + 'a>> {
        (**self).condition(source)
    }
}

/// Source-bound, memoizing view of a model used by the decoders.
pub struct Scorer<'a> {
    inner: Box<dyn Conditioned + 'a>,
    context_len: Option<usize>,
    cache: HashMap<Vec<TokenId>, Arc<Dist>>,
    key: Vec<TokenId>,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a (impl ConditionalLM + ?Sized), source: &[TokenId]) -> Result<Self> {
        Ok(Scorer {
            inner: model.condition(source)?,
            context_len: model.context_len(),
            cache: HashMap::new(),
            key: Vec::new(),
        })
    }

    pub fn dist(&mut self, prefix: &[TokenId]) -> Result<Arc<Dist>> {
        self.key.clear();
        match self.context_len {
            Some(c) => {
                self.key.extend_from_slice(&prefix[prefix.len().saturating_sub(c)..]);
                // Prefixes shorter than the context are distinct keys, so
                // padding behaviour of the model is preserved.
                if prefix.len() < c {
                    self.key.push(TokenId::MAX);
                }
            }
            None => self.key.extend_from_slice(prefix),
        }
        if let Some(d) = self.cache.get(self.key.as_slice()) {
            return Ok(Arc::clone(d));
        }
        let d = Arc::new(self.inner.next_dist(prefix)?);
        self.cache.insert(self.key.clone(), Arc::clone(&d));
        Ok(d)
    }
}

/// Log-probability (nats) of `target`, which must end in EOS.
pub fn sequence_logprob(
    model: &(impl ConditionalLM + ?Sized),
    source: &[TokenId],
    target: &[TokenId],
) -> Result<f64> {
    if target.last() != Some(&crate::tokenizer::EOS) {
        return Err(Error::InvalidArgument("target must end with EOS".into()));
    }
    prefix_logprob(model, source, target)
}

/// Log-probability of an arbitrary token sequence (EOS-terminated or not).
pub fn prefix_logprob(
    model: &(impl ConditionalLM + ?Sized),
    source: &[TokenId],
    tokens: &[TokenId],
) -> Result<f64> {
    let mut scorer = Scorer::new(model, source)?;
    let mut total = 0.0;
    for i in 0..tokens.len() {
        let d = scorer.dist(&tokens[..i])?;
        let t = tokens[i] as usize;
        let lp = *d.logprobs().get(t).ok_or(Error::TokenOutOfRange {
            id: tokens[i],
            size: d.len(),
        })?;
        total += lp;
    }
    Ok(total)
}

/// Rejects ids outside a vocabulary of `size` tokens.
pub(crate) fn check_ids(ids: &[TokenId], size: usize) -> Result<()> {
    match ids.iter().find(|&&id| id as usize >= size) {
        Some(&id) => Err(Error::TokenOutOfRange { id, size }),
        None => Ok(()),
    }
}

pub(crate) fn check_normalized(probs: &[f64]) -> bool {
    let sum: f64 = probs.iter().sum();
    probs.iter().all(|p| *p >= 0.0 && p.is_finite()) && (sum - 1.0).abs() <= NORMALIZATION_TOLERANCE
}

/// Shannon entropy in nats of a single distribution.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}
