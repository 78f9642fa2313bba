use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{check_ids, ConditionalLM, Conditioned, Dist};
use crate::tokenizer::EOS;
use crate::TokenId;

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_ADDITIVE: f64 = 0.1;

/// Context padding symbol; never a vocabulary id.
pub(crate) const BOS: TokenId = TokenId::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NGramConfig {
    pub order: usize,
    pub lambda: f64,
    pub additive: f64,
}

impl Default for NGramConfig {
    fn default() -> Self {
        NGramConfig {
            order: DEFAULT_ORDER,
            lambda: DEFAULT_LAMBDA,
            additive: DEFAULT_ADDITIVE,
        }
    }
}

impl NGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::InvalidArgument("n-gram order must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.additive > 0.0 && self.additive.is_finite()) {
            return Err(Error::InvalidArgument(format!("additive constant {} must be > 0", self.additive)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct Counts {
    pub total: u64,
    /// Sorted by token id.
    pub next: Vec<(TokenId, u64)>,
}

impl Counts {
    fn from_map(map: HashMap<TokenId, u64>) -> Self {
        let mut next: Vec<_> = map.into_iter().collect();
        next.sort_unstable();
        Counts {
            total: next.iter().map(|(_, c)| c).sum(),
            next,
        }
    }
}

/// Target-side interpolated n-gram model mixed with a source-conditioned
/// lexical co-occurrence distribution:
///
/// `p(e | src, prefix) = (1 - λ) · ngram(e | prefix) + λ · lexical(e | src)`
///
/// `ngram` averages additive-smoothed estimates of orders `n, n-1, …, 1`;
/// `lexical` averages `c(f, e) / c(f, ·)` over source tokens `f`, and falls
/// back to the target unigram when no source token has been seen in training.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalNGramModel {
    pub(crate) config: NGramConfig,
    pub(crate) vocab_size: usize,
    /// `tables[m - 1]` maps contexts of length `m - 1` to successor counts.
    pub(crate) tables: Vec<HashMap<Vec<TokenId>, Counts>>,
    pub(crate) lexical: HashMap<TokenId, Counts>,
    target_unigram: Vec<f64>,
}

impl ConditionalNGramModel {
    /// Fits on `(source, target)` id sequences; neither side carries EOS.
    pub fn fit<S, T>(pairs: &[(S, T)], vocab_size: usize, config: NGramConfig) -> Result<Self>
    where
        S: AsRef<[TokenId]>,
        T: AsRef<[TokenId]>,
    {
        config.validate()?;
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let n = config.order;
        let mut tables: Vec<HashMap<Vec<TokenId>, HashMap<TokenId, u64>>> = vec![HashMap::new(); n];
        let mut lexical: HashMap<TokenId, HashMap<TokenId, u64>> = HashMap::new();
        let check = |id: TokenId| {
            if (id as usize) < vocab_size {
                Ok(id)
            } else {
                Err(Error::TokenOutOfRange { id, size: vocab_size })
            }
        };
        for (src, tgt) in pairs {
            let mut padded = vec![BOS; n - 1];
            for &t in tgt.as_ref() {
                padded.push(check(t)?);
            }
            padded.push(EOS);
            for i in n - 1..padded.len() {
                let w = padded[i];
                for m in 1..=n {
                    let ctx = padded[i + 1 - m..i].to_vec();
                    *tables[m - 1].entry(ctx).or_default().entry(w).or_default() += 1;
                }
            }
            for &f in src.as_ref() {
                let row = lexical.entry(check(f)?).or_default();
                for &e in &padded[n - 1..] {
                    *row.entry(e).or_default() += 1;
                }
            }
        }
        let tables: Vec<HashMap<Vec<TokenId>, Counts>> = tables
            .into_iter()
            .map(|t| t.into_iter().map(|(k, v)| (k, Counts::from_map(v))).collect())
            .collect();
        let lexical = lexical.into_iter().map(|(k, v)| (k, Counts::from_map(v))).collect();
        Ok(Self::from_parts(config, vocab_size, tables, lexical))
    }

    pub(crate) fn from_parts(
        config: NGramConfig,
        vocab_size: usize,
        tables: Vec<HashMap<Vec<TokenId>, Counts>>,
        lexical: HashMap<TokenId, Counts>,
    ) -> Self {
        let mut target_unigram = vec![0.0; vocab_size];
        if let Some(c) = tables.first().and_then(|t| t.get(&Vec::new())) {
            for &(w, k) in &c.next {
                target_unigram[w as usize] = k as f64 / c.total as f64;
            }
        }
        ConditionalNGramModel {
            config,
            vocab_size,
            tables,
            lexical,
            target_unigram,
        }
    }

    pub fn config(&self) -> NGramConfig {
        self.config
    }

    /// Same counts, different interpolation weight.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        let mut m = self.clone();
        m.config.lambda = lambda;
        m.config.validate()?;
        Ok(m)
    }

    /// `c(f, e) / c(f, ·)`, or `None` when `f` never occurred in a source.
    pub fn relfreq(&self, f: TokenId, e: TokenId) -> Option<f64> {
        let row = self.lexical.get(&f)?;
        let c = row
            .next
            .binary_search_by_key(&e, |(t, _)| *t)
            .map(|i| row.next[i].1)
            .unwrap_or(0);
        Some(c as f64 / row.total as f64)
    }

    pub fn target_unigram(&self) -> &[f64] {
        &self.target_unigram
    }

    /// Source-dependent mixture component.
    pub fn lexical_dist(&self, source: &[TokenId]) -> Vec<f64> {
        let rows: Vec<&Counts> = source.iter().filter_map(|f| self.lexical.get(f)).collect();
        if rows.is_empty() {
            return self.target_unigram.clone();
        }
        let mut out = vec![0.0; self.vocab_size];
        let w = 1.0 / rows.len() as f64;
        for row in rows {
            let scale = w / row.total as f64;
            for &(e, c) in &row.next {
                out[e as usize] += c as f64 * scale;
            }
        }
        out
    }

    /// Target-only interpolated n-gram component.
    pub fn ngram_dist(&self, prefix: &[TokenId]) -> Vec<f64> {
        let n = self.config.order;
        let alpha = self.config.additive;
        let v = self.vocab_size as f64;
        let mut ctx: Vec<TokenId> = vec![BOS; (n - 1).saturating_sub(prefix.len())];
        ctx.extend_from_slice(&prefix[prefix.len().saturating_sub(n - 1)..]);
        let weight = 1.0 / n as f64;
        let mut base = 0.0;
        let mut observed: Vec<(f64, &Counts)> = Vec::with_capacity(n);
        for m in 1..=n {
            let key = &ctx[ctx.len() - (m - 1)..];
            let counts = self.tables[m - 1].get(key);
            let total = counts.map_or(0, |c| c.total) as f64;
            let denom = total + alpha * v;
            base += weight * alpha / denom;
            if let Some(c) = counts {
                observed.push((weight / denom, c));
            }
        }
        let mut out = vec![base; self.vocab_size];
        for (scale, c) in observed {
            for &(w, k) in &c.next {
                out[w as usize] += k as f64 * scale;
            }
        }
        out
    }
}

struct Bound<'a> {
    model: &'a ConditionalNGramModel,
    weighted_lexical: Vec<f64>,
}

impl Conditioned for Bound<'_> {
    fn next_dist(&self, prefix: &[TokenId]) -> Result<Dist> {
        check_ids(prefix, self.model.vocab_size)?;
        let keep = 1.0 - self.model.config.lambda;
        let mut probs = self.model.ngram_dist(prefix);
        for (p, l) in probs.iter_mut().zip(&self.weighted_lexical) {
            *p = keep * *p + l;
        }
        Ok(Dist::from_probs(probs))
    }
}

impl ConditionalLM for ConditionalNGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn context_len(&self) -> Option<usize> {
        Some(self.config.order - 1)
    }

    fn condition<'a>(&'a self, source: &[TokenId]) -> Result<Box<dyn Conditioned + 'a>> {
        check_ids(source, self.vocab_size)?;
        let lambda = self.config.lambda;
        let weighted_lexical = self.lexical_dist(source).into_iter().map(|p| lambda * p).collect();
        Ok(Box::new(Bound {
            model: self,
            weighted_lexical,
        }))
    }
}
