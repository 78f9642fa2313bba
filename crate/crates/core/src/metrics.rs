//! Degeneration and quality metrics. Lengths are counted in tokens, EOS excluded.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::decoding::SampleSet;
use crate::error::{Error, Result};
use crate::TokenId;

/// Smoothing added to zero n-gram match counts in BLEU.
pub const BLEU_EPSILON: f64 = 1e-9;
/// Maximum disagreement tolerated between logprobs of identical samples.
pub const DUPLICATE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug)]
pub struct EvalPair<'a, T = TokenId> {
    pub hypothesis: &'a [T],
    pub reference: &'a [T],
}

/// Micro-averaged length ratio `Σ|h| / Σ|r|`.
pub fn length_ratio<'a, T: 'a>(pairs: impl IntoIterator<Item = EvalPair<'a, T>>) -> Result<f64> {
    let (mut h, mut r) = (0usize, 0usize);
    for p in pairs {
        h += p.hypothesis.len();
        r += p.reference.len();
    }
    if r == 0 {
        return Err(Error::Metric("length ratio needs a nonempty reference".into()));
    }
    Ok(h as f64 / r as f64)
}

/// Distinct n-grams over n-gram positions; `None` when the sequence is shorter than `n`.
pub fn unique_ngram_fraction<T: Eq + std::hash::Hash>(seq: &[T], n: usize) -> Result<Option<f64>> {
    if n < 1 {
        return Err(Error::InvalidArgument("n-gram order must be >= 1".into()));
    }
    if seq.len() < n {
        return Ok(None);
    }
    let positions = seq.len() - n + 1;
    let distinct: HashSet<&[T]> = seq.windows(n).collect();
    Ok(Some(distinct.len() as f64 / positions as f64))
}

/// Macro-average of [`unique_ngram_fraction`] over outputs where it is defined.
pub fn corpus_repetition<'a, T, I>(outputs: I, n: usize) -> Result<f64>
where
    T: Eq + std::hash::Hash + 'a,
    I: IntoIterator<Item = &'a [T]>,
{
    let mut sum = 0.0;
    let mut count = 0usize;
    for o in outputs {
        if let Some(f) = unique_ngram_fraction(o, n)? {
            sum += f;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Metric(format!("no output has at least {n} tokens")));
    }
    Ok(sum / count as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuStats {
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub score: f64,
}

fn ngram_counts(seq: &[TokenId], n: usize) -> HashMap<&[TokenId], usize> {
    let mut m = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Corpus BLEU with one reference per hypothesis.
///
/// `p_n = max(matches_n, ε) / max(total_n, 1)`, score
/// `BP · exp(mean ln p_n)` with `BP = exp(min(0, 1 - Σ|r| / Σ|h|))` (0 when
/// the hypotheses are all empty).
pub fn bleu_stats(hypotheses: &[&[TokenId]], references: &[&[TokenId]]) -> Result<BleuStats> {
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::Metric("BLEU of an empty test set".into()));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            totals[n - 1] += h.len().saturating_sub(n - 1);
            matches[n - 1] += hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    let mut precisions = [0.0; 4];
    for n in 0..4 {
        precisions[n] = (matches[n] as f64).max(BLEU_EPSILON) / (totals[n].max(1) as f64);
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).min(0.0).exp()
    };
    let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
    Ok(BleuStats {
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
        score: brevity_penalty * log_mean.exp(),
    })
}

pub fn bleu(hypotheses: &[&[TokenId]], references: &[&[TokenId]]) -> Result<f64> {
    bleu_stats(hypotheses, references).map(|s| s.score)
}

/// Monte-Carlo sequence entropy `-(1/N) Σ logprob`.
pub fn entropy_estimate(samples: &SampleSet) -> Result<f64> {
    if samples.samples.is_empty() {
        return Err(Error::Metric("entropy of an empty sample set".into()));
    }
    let mut sum = 0.0;
    for s in &samples.samples {
        if s.logprob > 0.0 || s.logprob.is_nan() {
            return Err(Error::Metric(format!("sample logprob {} > 0", s.logprob)));
        }
        sum += s.logprob;
    }
    Ok(-sum / samples.samples.len() as f64)
}

fn distinct_samples(samples: &SampleSet) -> Result<Vec<f64>> {
    let mut seen: HashMap<&[TokenId], f64> = HashMap::new();
    let mut order = Vec::new();
    for s in &samples.samples {
        match seen.get(s.tokens.as_slice()) {
            Some(&lp) => {
                if (lp - s.logprob).abs() > DUPLICATE_TOLERANCE {
                    return Err(Error::Metric(format!(
                        "identical samples disagree on logprob ({lp} vs {})",
                        s.logprob
                    )));
                }
            }
            None => {
                seen.insert(&s.tokens, s.logprob);
                order.push(s.logprob);
            }
        }
    }
    Ok(order)
}

/// Total probability of the distinct sampled strings.
pub fn mass_coverage(samples: &SampleSet) -> Result<f64> {
    Ok(distinct_samples(samples)?.iter().map(|lp| lp.exp()).sum())
}

pub fn unique_count(samples: &SampleSet) -> Result<usize> {
    Ok(distinct_samples(samples)?.len())
}

/// One row of metric values; fields that do not apply to a decoder are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub length_ratio: Option<f64>,
    pub uniq1: Option<f64>,
    pub uniq2: Option<f64>,
    pub uniq4: Option<f64>,
    pub uniq6: Option<f64>,
    pub bleu: Option<f64>,
    pub entropy_nats: Option<f64>,
    pub mass_coverage: Option<f64>,
    pub unique_samples: Option<f64>,
}

impl MetricReport {
    pub const FIELDS: [&'static str; 9] = [
        "length_ratio",
        "uniq1",
        "uniq2",
        "uniq4",
        "uniq6",
        "bleu",
        "entropy_nats",
        "mass_coverage",
        "unique_samples",
    ];

    pub fn values(&self) -> [Option<f64>; 9] {
        [
            self.length_ratio,
            self.uniq1,
            self.uniq2,
            self.uniq4,
            self.uniq6,
            self.bleu,
            self.entropy_nats,
            self.mass_coverage,
            self.unique_samples,
        ]
    }

    pub fn from_values(v: [Option<f64>; 9]) -> Self {
        MetricReport {
            length_ratio: v[0],
            uniq1: v[1],
            uniq2: v[2],
            uniq4: v[3],
            uniq6: v[4],
            bleu: v[5],
            entropy_nats: v[6],
            mass_coverage: v[7],
            unique_samples: v[8],
        }
    }

    pub fn set_uniq(&mut self, n: usize, value: Option<f64>) {
        match n {
            1 => self.uniq1 = value,
            2 => self.uniq2 = value,
            4 => self.uniq4 = value,
            6 => self.uniq6 = value,
            _ => {}
        }
    }

    pub fn uniq(&self, n: usize) -> Option<f64> {
        match n {
            1 => self.uniq1,
            2 => self.uniq2,
            4 => self.uniq4,
            6 => self.uniq6,
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::Sample;
    use proptest::prelude::*;

    fn pairs<'a>(h: &'a [Vec<TokenId>], r: &'a [Vec<TokenId>]) -> Vec<EvalPair<'a>> {
        h.iter()
            .zip(r)
            .map(|(h, r)| EvalPair { hypothesis: h, reference: r })
            .collect()
    }

    fn set(items: &[(&[TokenId], f64)]) -> SampleSet {
        SampleSet {
            samples: items
                .iter()
                .map(|(t, lp)| Sample { tokens: t.to_vec(), logprob: *lp })
                .collect(),
            seed: 0,
        }
    }

    #[test]
    fn length_ratio_cases() {
        let r = vec![vec![1, 2, 3, 4], vec![5, 6, 7, 8]];
        assert_eq!(length_ratio(pairs(&r, &r)).unwrap(), 1.0);
        let h = vec![vec![1, 2], vec![1, 2, 3, 4]];
        assert_eq!(length_ratio(pairs(&h, &r)).unwrap(), 0.75);
        let h = vec![vec![1], vec![1, 2, 3, 4]];
        let r2 = vec![vec![1, 2], vec![1, 2, 3, 4]];
        assert!((length_ratio(pairs(&h, &r2)).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        let empty = vec![vec![], vec![]];
        assert_eq!(length_ratio(pairs(&empty, &r)).unwrap(), 0.0);
        assert!(length_ratio(pairs(&r, &empty)).is_err());
    }

    #[test]
    fn unique_fraction_cases() {
        assert_eq!(unique_ngram_fraction(&[1, 1, 1, 1], 1).unwrap(), Some(0.25));
        assert_eq!(unique_ngram_fraction(&[1, 2, 3, 4], 3).unwrap(), Some(1.0));
        assert_eq!(unique_ngram_fraction(&[1, 2, 1, 2, 1], 2).unwrap(), Some(0.5));
        assert_eq!(unique_ngram_fraction(&[1, 2], 3).unwrap(), None);
        assert!(unique_ngram_fraction(&[1], 0).is_err());
    }

    #[test]
    fn corpus_repetition_cases() {
        let single: Vec<Vec<TokenId>> = vec![vec![3], vec![4], vec![5]];
        assert_eq!(corpus_repetition(single.iter().map(Vec::as_slice), 1).unwrap(), 1.0);
        let mixed: Vec<Vec<TokenId>> = vec![vec![1, 1, 1, 1], vec![1, 2, 3, 3], vec![9]];
        let v = corpus_repetition(mixed.iter().map(Vec::as_slice), 1).unwrap();
        assert!((v - (0.25 + 0.75 + 1.0) / 3.0).abs() < 1e-15);
        // the single-token output is excluded at n = 2
        let v = corpus_repetition(mixed.iter().map(Vec::as_slice), 2).unwrap();
        assert!((v - (1.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
        assert!(corpus_repetition(single.iter().map(Vec::as_slice), 2).is_err());
    }

    #[test]
    fn bleu_identity_and_hand_case() {
        let a: &[TokenId] = &[1, 2, 3, 4, 5];
        let b: &[TokenId] = &[6, 7, 8, 9];
        assert!((bleu(&[a, b], &[a, b]).unwrap() - 1.0).abs() < 1e-12);

        // "the cat sat" vs "the cat sat down"
        let h: &[TokenId] = &[1, 2, 3];
        let r: &[TokenId] = &[1, 2, 3, 4];
        let s = bleu_stats(&[h], &[r]).unwrap();
        assert_eq!(&s.precisions[..3], &[1.0, 1.0, 1.0]);
        assert_eq!(s.precisions[3], BLEU_EPSILON);
        let bp = (1.0f64 - 4.0 / 3.0).exp();
        assert!((s.brevity_penalty - bp).abs() < 1e-12);
        assert!((s.brevity_penalty - 0.716_531_310_6).abs() < 1e-9);
        assert!((s.score - bp * BLEU_EPSILON.powf(0.25)).abs() < 1e-15);
    }

    #[test]
    fn bleu_clipping_and_partial_matches() {
        // hyp "a a a a b" vs ref "a b c d e"
        let h: &[TokenId] = &[1, 1, 1, 1, 2];
        let r: &[TokenId] = &[1, 2, 3, 4, 5];
        let s = bleu_stats(&[h], &[r]).unwrap();
        assert_eq!(s.precisions[0], 2.0 / 5.0);
        assert_eq!(s.precisions[1], 1.0 / 4.0);
        assert_eq!(s.precisions[2], BLEU_EPSILON / 3.0);
        assert_eq!(s.brevity_penalty, 1.0);
    }

    #[test]
    fn bleu_edge_cases() {
        let e: &[TokenId] = &[];
        let r: &[TokenId] = &[1, 2];
        assert!(bleu(&[e], &[r]).unwrap() < 1e-9);
        assert!(bleu(&[], &[]).is_err());
        assert!(bleu(&[r], &[]).is_err());
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(entropy_estimate(&set(&[(&[0], 0.0), (&[0], 0.0)])).unwrap(), 0.0);
        let ln2 = 0.5f64.ln();
        let two = set(&[(&[1, 0], ln2), (&[2, 0], ln2), (&[1, 0], ln2)]);
        assert!((entropy_estimate(&two).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(entropy_estimate(&set(&[(&[0], 0.1)])).is_err());
        assert!(entropy_estimate(&set(&[])).is_err());
    }

    #[test]
    fn coverage_cases() {
        let point = set(&[(&[0], 0.0), (&[0], 0.0), (&[0], 0.0)]);
        assert_eq!(mass_coverage(&point).unwrap(), 1.0);
        assert_eq!(unique_count(&point).unwrap(), 1);
        let lp = 0.1f64.ln();
        let three = set(&[(&[1, 0], lp), (&[2, 0], lp), (&[1, 0], lp), (&[3, 0], lp)]);
        assert!((mass_coverage(&three).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(unique_count(&three).unwrap(), 3);
        let inconsistent = set(&[(&[1, 0], lp), (&[1, 0], lp + 1e-6)]);
        assert!(mass_coverage(&inconsistent).is_err());
    }

    proptest! {
        #[test]
        fn unique_fraction_range(seq in prop::collection::vec(0u32..5, 1..40), n in 1usize..5) {
            if let Some(f) = unique_ngram_fraction(&seq, n).unwrap() {
                prop_assert!(f > 0.0 && f <= 1.0);
                let all_distinct = seq.windows(n).collect::<HashSet<_>>().len() == seq.len() - n + 1;
                prop_assert_eq!(f == 1.0, all_distinct);
            }
        }

        #[test]
        fn length_ratio_scaling(h in prop::collection::vec(prop::collection::vec(0u32..9, 0..8), 1..10), t in 1usize..4) {
            let r: Vec<Vec<TokenId>> = h.iter().map(|x| { let mut y = x.clone(); y.push(1); y }).collect();
            let base = length_ratio(pairs(&h, &r)).unwrap();
            let doubled_h: Vec<_> = h.iter().chain(&h).cloned().collect();
            let doubled_r: Vec<_> = r.iter().chain(&r).cloned().collect();
            prop_assert!((length_ratio(pairs(&doubled_h, &doubled_r)).unwrap() - base).abs() < 1e-12);
            let longer: Vec<_> = h.iter().map(|x| { let mut y = x.clone(); y.extend(std::iter::repeat_n(7, t)); y }).collect();
            prop_assert!(length_ratio(pairs(&longer, &r)).unwrap() > base);
        }

        #[test]
        fn bleu_permutation_invariant(
            data in prop::collection::vec((prop::collection::vec(0u32..6, 0..10), prop::collection::vec(0u32..6, 4..10)), 1..8),
            rot in 0usize..8,
        ) {
            let hs: Vec<&[TokenId]> = data.iter().map(|(h, _)| h.as_slice()).collect();
            let rs: Vec<&[TokenId]> = data.iter().map(|(_, r)| r.as_slice()).collect();
            let a = bleu(&hs, &rs).unwrap();
            let k = rot % hs.len();
            let (mut hs2, mut rs2) = (hs.clone(), rs.clone());
            hs2.rotate_left(k);
            rs2.rotate_left(k);
            prop_assert!((a - bleu(&hs2, &rs2).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
            prop_assert!((bleu(&rs, &rs).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn coverage_monotone_under_appending(lps in prop::collection::vec((0u32..6, -5.0f64..0.0), 1..30)) {
            // logprob is a function of the token so duplicates agree
            let table: Vec<f64> = (0..6).map(|i| lps.iter().find(|(t, _)| *t == i).map_or(-1.0, |x| x.1)).collect();
            let mut prev = 0.0;
            let mut s = SampleSet { samples: vec![], seed: 0 };
            for (t, _) in &lps {
                s.samples.push(Sample { tokens: vec![*t, 0], logprob: table[*t as usize] });
                let c = mass_coverage(&s).unwrap();
                prop_assert!(c >= prev);
                prop_assert!(unique_count(&s).unwrap() <= s.samples.len());
                prop_assert!(entropy_estimate(&s).unwrap() >= 0.0);
                prev = c;
            }
        }
    }
}
