use crate::error::{Error, Result};
use crate::models::{check_ids, check_normalized, ConditionalLM, Conditioned, Dist};
use crate::tokenizer::EOS;
use crate::TokenId;

/// Source- and prefix-independent token distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct UnigramModel {
    probs: Vec<f64>,
}

impl UnigramModel {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || !check_normalized(&probs) {
            return Err(Error::InvalidArgument("unigram probabilities must sum to 1".into()));
        }
        if probs[EOS as usize] <= 0.0 {
            return Err(Error::InvalidArgument("unigram model needs P(EOS) > 0".into()));
        }
        Ok(UnigramModel { probs })
    }

    /// Relative frequencies of target tokens, counting one EOS per sentence.
    /// Targets must not contain EOS themselves.
    pub fn fit<T: AsRef<[TokenId]>>(targets: &[T], vocab_size: usize) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut counts = vec![0u64; vocab_size];
        let mut total = 0u64;
        for t in targets {
            for &id in t.as_ref().iter().chain(std::iter::once(&EOS)) {
                let slot = counts.get_mut(id as usize).ok_or(Error::TokenOutOfRange {
                    id,
                    size: vocab_size,
                })?;
                *slot += 1;
                total += 1;
            }
        }
        let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(UnigramModel { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

struct Bound<'a>(&'a UnigramModel);

impl Conditioned for Bound<'_> {
    fn next_dist(&self, prefix: &[TokenId]) -> Result<Dist> {
        check_ids(prefix, self.0.probs.len())?;
        Ok(Dist::from_probs(self.0.probs.clone()))
    }
}

impl ConditionalLM for UnigramModel {
    fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    fn context_len(&self) -> Option<usize> {
        Some(0)
    }

    fn condition<'a>(&'a self, source: &[TokenId]) -> Result<Box<dyn Conditioned + 'a>> {
        check_ids(source, self.probs.len())?;
        Ok(Box::new(Bound(self)))
    }
}
