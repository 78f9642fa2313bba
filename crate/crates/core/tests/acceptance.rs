//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails the
//! test run only for criteria not listed in `KNOWN_FAILURES`. Runs without
//! the libtest harness so the lines always reach stdout.
//!
//! The toy-corpus criteria run the default sweep twice (1 and 8 workers), so
//! this file takes several minutes on a single core.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use constrainlab::decoding::{
    ancestral_sample, beam_search, candidate_count, exhaustive_mode, greedy, DecodeConfig, Sample, SampleSet,
};
use constrainlab::experiment::report::sweep_csv;
use constrainlab::experiment::{run_sweep, DecoderSpec, SweepConfig, SweepRecord, SweepResult};
use constrainlab::metrics::{
    bleu, bleu_stats, entropy_estimate, length_ratio, mass_coverage, unique_count, unique_ngram_fraction, EvalPair, BLEU_EPSILON,
};
use constrainlab::models::{ConditionalLM, Conditioned, Dist, UnigramModel};
use constrainlab::tokenizer::EOS;
use constrainlab::{Result, TokenId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

// Tolerances and thresholds.
const UNIGRAM_MODELS: usize = 50;
const UNIGRAM_MAX_LEN: usize = 6;
const GREEDY_MAX_LEN: usize = 25;
const GEOMETRIC_SAMPLES: usize = 2000;
const CHI_SQUARE_P: f64 = 0.01;
const PASS_SHARE: f64 = 0.95;
const UNIGRAM_BUDGET: Duration = Duration::from_secs(60);
const SEARCH_MODELS: usize = 100;
const LOGPROB_TOL: f64 = 1e-9;
const METRIC_TOL: f64 = 1e-6;
const ENTROPY_RUNS: u64 = 100;
const ENTROPY_N: usize = 1000;
const ENTROPY_TARGET: f64 = 1.0397;
const ENTROPY_TOL: f64 = 0.05;
const GREEDY_UNIQ_GAP: f64 = 0.05;
const SAMPLE_REPETITION_TOL: f64 = 0.02;
const SMOOTHING_UNIQ_TOL: f64 = 0.02;
const SWEEP_BUDGET: Duration = Duration::from_secs(600);
const SWEEP_SEED: u64 = 7;
const LOW_S: u32 = 10;
const HIGH_S: u32 = 100;
const BEAM_K: usize = 4;
const SMOOTH_EPSILON: f64 = 0.1;

/// Criteria that fail on the bundled toy corpus for structural reasons
/// (see the decisions ledger); they are reported but do not fail the run.
const KNOWN_FAILURES: &[&str] = &["length-bias", "label-smoothing", "repetition"];

static LINES: Mutex<Vec<(String, bool)>> = Mutex::new(Vec::new());

fn report(name: &str, pass: bool, detail: impl AsRef<str>) {
    println!("{} {name}: {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    LINES.lock().unwrap().push((name.to_owned(), pass));
}

/// Random distribution from a seed; `peak` > 0 makes it spikier.
fn random_dist(rng: &mut ChaCha8Rng, v: usize, peak: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..v).map(|_| (peak * rng.random::<f64>()).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

// ---------------------------------------------------------------- unigram

fn unigram_with(rng: &mut ChaCha8Rng, eos_is_max: bool) -> UnigramModel {
    loop {
        let v = rng.random_range(3..=5);
        let p = random_dist(rng, v, 3.0);
        let max = p.iter().cloned().fold(0.0, f64::max);
        let eos_max = p[EOS as usize] >= max;
        if eos_max == eos_is_max && (eos_is_max || p[EOS as usize] > 0.02) {
            return UnigramModel::from_probs(p).unwrap();
        }
    }
}

/// Pearson test of sampled lengths against Geometric(q) on {0, 1, ...}.
/// Bins hold at least 5 expected counts; the tail is lumped once fewer than
/// 10 remain.
fn geometric_p_value(lengths: &[usize], q: f64) -> f64 {
    let n = lengths.len() as f64;
    let mut bins: Vec<(usize, Option<usize>, f64)> = Vec::new();
    let (mut lo, mut l, mut pending, mut tail) = (0, 0, 0.0, 1.0);
    loop {
        if tail * n < 10.0 {
            bins.push((lo, None, pending + tail));
            break;
        }
        let p = (1.0 - q).powi(l as i32) * q;
        pending += p;
        tail -= p;
        l += 1;
        if pending * n >= 5.0 {
            bins.push((lo, Some(l), pending));
            lo = l;
            pending = 0.0;
        }
    }
    if bins.len() < 2 {
        return 1.0;
    }
    let stat: f64 = bins
        .iter()
        .map(|&(lo, hi, p)| {
            let obs = lengths.iter().filter(|&&x| x >= lo && hi.is_none_or(|h| x < h)).count() as f64;
            (obs - p * n).powi(2) / (p * n)
        })
        .sum();
    1.0 - ChiSquared::new((bins.len() - 1) as f64).unwrap().cdf(stat)
}

fn unigram_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut empty_ok = 0;
    let mut greedy_ok = 0;
    let mut geo_ok = 0;
    let mut geo_total = 0;
    for i in 0..UNIGRAM_MODELS {
        let a = unigram_with(&mut rng, true);
        if exhaustive_mode(&a, &[], UNIGRAM_MAX_LEN).unwrap().tokens == [EOS] {
            empty_ok += 1;
        }
        let b = unigram_with(&mut rng, false);
        let argmax = Dist::from_probs(b.probs().to_vec()).argmax();
        let g = greedy(&b, &[], GREEDY_MAX_LEN).unwrap();
        if g.tokens == vec![argmax; GREEDY_MAX_LEN] && !g.is_terminated() {
            greedy_ok += 1;
        }
        for (j, m) in [a, b].iter().enumerate() {
            let q = m.probs()[EOS as usize];
            let cap = 100_000;
            let set = ancestral_sample(m, &[], GEOMETRIC_SAMPLES, (i * 2 + j) as u64, cap).unwrap();
            let lengths: Vec<usize> = set.samples.iter().map(|s| s.content().len()).collect();
            geo_total += 1;
            if geometric_p_value(&lengths, q) > CHI_SQUARE_P {
                geo_ok += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let share = geo_ok as f64 / geo_total as f64;
    report(
        "unigram-failure-modes",
        empty_ok == UNIGRAM_MODELS && greedy_ok == UNIGRAM_MODELS && share >= PASS_SHARE && elapsed < UNIGRAM_BUDGET,
        format!(
            "mode=empty {empty_ok}/{UNIGRAM_MODELS}, greedy repeats argmax {greedy_ok}/{UNIGRAM_MODELS}, \
             geometric lengths p>{CHI_SQUARE_P} in {geo_ok}/{geo_total}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------- search oracle

/// Context-dependent random model: the distribution after each prefix is
/// drawn from a generator keyed by (seed, prefix).
struct HashModel {
    vocab: usize,
    seed: u64,
}

struct HashBound<'a>(&'a HashModel);

impl Conditioned for HashBound<'_> {
    fn next_dist(&self, prefix: &[TokenId]) -> Result<Dist> {
        let mut key = self.0.seed;
        for &t in prefix {
            key = key.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(t as u64 + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        Ok(Dist::from_probs(random_dist(&mut rng, self.0.vocab, 4.0)))
    }
}

impl ConditionalLM for HashModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }
    fn context_len(&self) -> Option<usize> {
        None
    }
    fn condition<'a>(&'a self, _source: &[TokenId]) -> Result<Box<dyn Conditioned + 'a>> {
        Ok(Box::new(HashBound(self)))
    }
}

fn search_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut exact = 0;
    let mut monotone = 0;
    let mut first_bad = String::new();
    for i in 0..SEARCH_MODELS {
        let m = HashModel {
            vocab: rng.random_range(2..=4),
            seed: rng.random(),
        };
        let max_len = rng.random_range(1..=6);
        let full = candidate_count(m.vocab, max_len) as usize;
        let oracle = exhaustive_mode(&m, &[], max_len).unwrap();
        let wide = beam_search(&m, &[], DecodeConfig::new(full, max_len).unwrap()).unwrap();
        if wide[0].tokens == oracle.tokens && (wide[0].logprob - oracle.logprob).abs() <= LOGPROB_TOL {
            exact += 1;
        } else if first_bad.is_empty() {
            first_bad = format!(" (model {i}: beam {:?} vs mode {:?})", wide[0].tokens, oracle.tokens);
        }
        let mut prev = f64::NEG_INFINITY;
        let mut ok = true;
        for k in 1..=full {
            let best = beam_search(&m, &[], DecodeConfig::new(k, max_len).unwrap()).unwrap()[0].logprob;
            ok &= best >= prev - LOGPROB_TOL;
            prev = best;
        }
        monotone += ok as usize;
    }
    report(
        "search-oracle-equivalence",
        exact == SEARCH_MODELS && monotone == SEARCH_MODELS,
        format!("full-width beam = exhaustive mode on {exact}/{SEARCH_MODELS}, best score non-decreasing in k on {monotone}/{SEARCH_MODELS}{first_bad}"),
    );
}

// ---------------------------------------------------------------- metric oracles

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= METRIC_TOL
}

fn ids(s: &str) -> Vec<TokenId> {
    s.split_whitespace().map(|w| w.bytes().next().unwrap() as TokenId).collect()
}

fn lr(pairs: &[(&str, &str)]) -> f64 {
    let v: Vec<(Vec<TokenId>, Vec<TokenId>)> = pairs.iter().map(|(h, r)| (ids(h), ids(r))).collect();
    length_ratio(v.iter().map(|(h, r)| EvalPair {
        hypothesis: h.as_slice(),
        reference: r.as_slice(),
    }))
    .unwrap()
}

fn uniq(s: &str, n: usize) -> Option<f64> {
    unique_ngram_fraction(&ids(s), n).unwrap()
}

fn corpus_bleu(pairs: &[(&str, &str)]) -> f64 {
    let v: Vec<(Vec<TokenId>, Vec<TokenId>)> = pairs.iter().map(|(h, r)| (ids(h), ids(r))).collect();
    let h: Vec<&[TokenId]> = v.iter().map(|p| p.0.as_slice()).collect();
    let r: Vec<&[TokenId]> = v.iter().map(|p| p.1.as_slice()).collect();
    bleu(&h, &r).unwrap()
}

/// "the cat sat" vs "the cat sat down": precisions 1, 1, 1, smoothed 4-gram.
fn brevity_case(bp: f64) -> bool {
    let (h, r) = (ids("t c s"), ids("t c s d"));
    let s = bleu_stats(&[&h], &[&r]).unwrap();
    s.precisions[..3] == [1.0; 3] && s.precisions[3] == BLEU_EPSILON && close(s.brevity_penalty, bp) && close(bp, 0.716_531)
}

fn set(items: &[(&str, f64)]) -> SampleSet {
    SampleSet {
        samples: items
            .iter()
            .map(|(s, lp)| Sample {
                tokens: ids(s).into_iter().chain([EOS]).collect(),
                logprob: *lp,
            })
            .collect(),
        seed: 0,
    }
}

/// Strings a, b, c with probabilities 0.5, 0.25, 0.25, then EOS.
struct ThreeStrings;

struct ThreeBound;

impl Conditioned for ThreeBound {
    fn next_dist(&self, prefix: &[TokenId]) -> Result<Dist> {
        Ok(Dist::from_probs(if prefix.is_empty() {
            vec![0.0, 0.5, 0.25, 0.25]
        } else {
            vec![1.0, 0.0, 0.0, 0.0]
        }))
    }
}

impl ConditionalLM for ThreeStrings {
    fn vocab_size(&self) -> usize {
        4
    }
    fn context_len(&self) -> Option<usize> {
        None
    }
    fn condition<'a>(&'a self, _source: &[TokenId]) -> Result<Box<dyn Conditioned + 'a>> {
        Ok(Box::new(ThreeBound))
    }
}

fn metric_oracles() {
    let ln2 = 2f64.ln();
    let bp = (1.0f64 - 4.0 / 3.0).exp();
    let cases: Vec<(&str, bool)> = vec![
        ("length_ratio identity", close(lr(&[("a b", "a b"), ("c", "c")]), 1.0)),
        ("length_ratio 6/8", close(lr(&[("a b", "a b c d"), ("a b c d", "a b c d")]), 0.75)),
        ("length_ratio micro 5/6", close(lr(&[("a", "a b"), ("a b c d", "a b c d")]), 5.0 / 6.0)),
        ("length_ratio empty hyps", close(lr(&[("", "a b"), ("", "c")]), 0.0)),
        (
            "length_ratio duplicated pairs",
            close(lr(&[("a", "a b"), ("a", "a b")]), lr(&[("a", "a b")])),
        ),
        ("uniq a a a a", uniq("a a a a", 1).is_some_and(|f| close(f, 0.25))),
        ("uniq distinct", uniq("a b c d e", 2).is_some_and(|f| close(f, 1.0))),
        ("uniq a b a b a n=2", uniq("a b a b a", 2).is_some_and(|f| close(f, 0.5))),
        ("uniq a b a b a n=1", uniq("a b a b a", 1).is_some_and(|f| close(f, 0.4))),
        ("uniq too short", uniq("a b c", 4).is_none()),
        ("bleu identity", close(corpus_bleu(&[("a b c d e", "a b c d e"), ("x y z w", "x y z w")]), 1.0)),
        ("bleu brevity", brevity_case(bp)),
        (
            "bleu partial",
            close(corpus_bleu(&[("a b c d e", "a b c d f")]), (4.0 / 5.0 * 3.0 / 4.0 * 2.0 / 3.0 * 0.5f64).powf(0.25)),
        ),
        (
            "bleu corpus-level",
            close(corpus_bleu(&[("a b c d", "a b c d"), ("x y", "x z")]), (5.0 / 6.0 * 3.0 / 4.0f64).powf(0.25)),
        ),
        ("bleu empty hyps", corpus_bleu(&[("", "a b c d")]) < METRIC_TOL),
        ("entropy point mass", close(entropy_estimate(&set(&[("a", 0.0), ("a", 0.0)])).unwrap(), 0.0)),
        (
            "entropy two equiprobable",
            close(entropy_estimate(&set(&[("a", -ln2), ("b", -ln2), ("a", -ln2)])).unwrap(), ln2),
        ),
        ("entropy mean surprisal", close(entropy_estimate(&set(&[("a", -1.0), ("b", -2.0), ("c", -3.0)])).unwrap(), 2.0)),
        ("entropy positive logprob", entropy_estimate(&set(&[("a", 0.5)])).is_err()),
        (
            "entropy uniform over 3",
            close(entropy_estimate(&set(&[("a", -(3f64.ln())), ("c", -(3f64.ln()))])).unwrap(), 3f64.ln()),
        ),
        (
            "coverage point mass",
            close(mass_coverage(&set(&[("a", 0.0), ("a", 0.0)])).unwrap(), 1.0)
                && unique_count(&set(&[("a", 0.0), ("a", 0.0)])).unwrap() == 1,
        ),
        (
            "coverage 3 of 10 uniform",
            close(mass_coverage(&set(&[("a", -(10f64.ln())), ("b", -(10f64.ln())), ("c", -(10f64.ln())), ("a", -(10f64.ln()))])).unwrap(), 0.3),
        ),
        ("coverage counts strings once", close(mass_coverage(&set(&[("a", -ln2), ("a", -ln2), ("b", -2.0 * ln2)])).unwrap(), 0.75)),
        ("coverage inconsistent duplicates", mass_coverage(&set(&[("a", -1.0), ("a", -1.1)])).is_err()),
        ("coverage bounded on random models", coverage_bounded()),
    ];
    let failed: Vec<&str> = cases.iter().filter(|c| !c.1).map(|c| c.0).collect();

    let mut within = 0;
    for seed in 0..ENTROPY_RUNS {
        let s = ancestral_sample(&ThreeStrings, &[], ENTROPY_N, seed, 5).unwrap();
        if (entropy_estimate(&s).unwrap() - ENTROPY_TARGET).abs() <= ENTROPY_TOL {
            within += 1;
        }
    }
    let share = within as f64 / ENTROPY_RUNS as f64;
    report(
        "metric-oracles",
        failed.is_empty() && share >= PASS_SHARE,
        format!(
            "{}/{} hand cases, entropy of {{0.5,0.25,0.25}} within {ENTROPY_TOL} of {ENTROPY_TARGET} in {within}/{ENTROPY_RUNS} runs{}",
            cases.len() - failed.len(),
            cases.len(),
            if failed.is_empty() { String::new() } else { format!(" (failed: {failed:?})") }
        ),
    );
}

/// Coverage never exceeds 1 on random small models.
fn coverage_bounded() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    (0..100).all(|_| {
        let m = HashModel {
            vocab: rng.random_range(2..=4),
            seed: rng.random(),
        };
        let s = ancestral_sample(&m, &[], 200, rng.random(), 6).unwrap();
        mass_coverage(&s).unwrap() <= 1.0 + METRIC_TOL
    })
}

// ---------------------------------------------------------------- toy corpus sweep

struct Sweep {
    result: SweepResult,
    csv_1: String,
    csv_8: String,
    std_1: String,
    std_8: String,
    secs_1: f64,
    secs_8: f64,
}

fn default_sweep() -> Sweep {
    let config = SweepConfig {
        master_seed: SWEEP_SEED,
        ..SweepConfig::default()
    };
    let t = Instant::now();
    let (a, _) = run_sweep(&config, 1).unwrap();
    let secs_1 = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let (b, _) = run_sweep(&config, 8).unwrap();
    let secs_8 = t.elapsed().as_secs_f64();
    use constrainlab::experiment::report::sweep_std_csv;
    Sweep {
        csv_1: sweep_csv(&a),
        csv_8: sweep_csv(&b),
        std_1: sweep_std_csv(&a),
        std_8: sweep_std_csv(&b),
        result: a,
        secs_1,
        secs_8,
    }
}

fn cell<'a>(r: &'a SweepResult, s: u32, decoder: DecoderSpec, epsilon: f64) -> Vec<&'a SweepRecord> {
    r.records
        .iter()
        .filter(|x| x.s == s && x.decoder == decoder && x.epsilon == epsilon)
        .collect()
}

fn mean_of(r: &SweepResult, s: u32, decoder: DecoderSpec, epsilon: f64, f: impl Fn(&SweepRecord) -> Option<f64>) -> Option<f64> {
    let v: Option<Vec<f64>> = cell(r, s, decoder, epsilon).into_iter().map(f).collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt(x: Option<f64>) -> String {
    x.map_or("undefined".into(), |v| format!("{v:.4}"))
}

fn peakedness(r: &SweepResult) {
    let n = SweepConfig::default().samples_per_sentence;
    let lo = cell(r, LOW_S, DecoderSpec::Sample(n), 0.0);
    let hi = cell(r, HIGH_S, DecoderSpec::Sample(n), 0.0);
    let mut agree = 0;
    let mut detail = Vec::new();
    for (a, b) in lo.iter().zip(&hi) {
        let (x, y) = (&a.metrics, &b.metrics);
        let ok = y.entropy_nats < x.entropy_nats && y.unique_samples < x.unique_samples && y.mass_coverage > x.mass_coverage;
        agree += ok as usize;
        detail.push(format!(
            "restart {}: H {}->{}, unique {}->{}, coverage {}->{}",
            a.restart,
            fmt(x.entropy_nats),
            fmt(y.entropy_nats),
            fmt(x.unique_samples),
            fmt(y.unique_samples),
            fmt(x.mass_coverage),
            fmt(y.mass_coverage)
        ));
    }
    report(
        "peakedness",
        !lo.is_empty() && agree == lo.len() && lo.len() == hi.len(),
        format!("s={LOW_S}->{HIGH_S}, {agree}/{} restarts agree; {}", lo.len(), detail.join("; ")),
    );
}

fn repetition(r: &SweepResult) {
    let n = SweepConfig::default().samples_per_sentence;
    let g = DecoderSpec::search(1);
    let lo = mean_of(r, LOW_S, g, 0.0, |x| x.metrics.uniq1);
    let hi = mean_of(r, HIGH_S, g, 0.0, |x| x.metrics.uniq1);
    let greedy_ok = matches!((lo, hi), (Some(a), Some(b)) if a <= b - GREEDY_UNIQ_GAP);
    let reference = r.reference_repetition.iter().find(|(m, _)| *m == 1).map(|(_, v)| *v);
    let mut worst: Option<(u32, f64)> = None;
    let mut all_defined = true;
    for &s in &SweepConfig::default().s_values {
        match (mean_of(r, s, DecoderSpec::Sample(n), 0.0, |x| x.metrics.uniq1), reference) {
            (Some(v), Some(refv)) => {
                let gap = (v - refv).abs();
                if worst.is_none_or(|w| gap > w.1) {
                    worst = Some((s, gap));
                }
            }
            _ => all_defined = false,
        }
    }
    let sample_ok = all_defined && worst.is_some_and(|w| w.1 <= SAMPLE_REPETITION_TOL);
    report(
        "repetition",
        greedy_ok && sample_ok,
        format!(
            "greedy uniq1 s={LOW_S} {} vs s={HIGH_S} {} (need gap >= {GREEDY_UNIQ_GAP}); sampled uniq1 vs reference {}: \
             largest gap {} at s={} (tolerance {SAMPLE_REPETITION_TOL})",
            fmt(lo),
            fmt(hi),
            fmt(reference),
            fmt(worst.map(|w| w.1)),
            worst.map_or("-".into(), |w| w.0.to_string()),
        ),
    );
}

fn length_bias(r: &SweepResult) {
    let b = DecoderSpec::search(BEAM_K);
    let g = DecoderSpec::search(1);
    let lr = |s, d| mean_of(r, s, d, 0.0, |x| x.metrics.length_ratio);
    let (b_lo, b_hi, g_lo, g_hi) = (lr(LOW_S, b), lr(HIGH_S, b), lr(LOW_S, g), lr(HIGH_S, g));
    let beam_ok = matches!((b_lo, b_hi), (Some(a), Some(c)) if (a - 1.0).abs() > (c - 1.0).abs());
    let greedy_ok = matches!((g_lo, g_hi), (Some(a), Some(c)) if a > c);
    report(
        "length-bias",
        beam_ok && greedy_ok,
        format!(
            "beam k={BEAM_K} length ratio s={LOW_S} {} vs s={HIGH_S} {} (|lr-1| must shrink); greedy {} vs {} (must drop)",
            fmt(b_lo),
            fmt(b_hi),
            fmt(g_lo),
            fmt(g_hi)
        ),
    );
}

fn label_smoothing(r: &SweepResult) {
    let n = SweepConfig::default().samples_per_sentence;
    let mut entropy_ok = true;
    let mut uniq_ok = true;
    let mut notes = Vec::new();
    let b = DecoderSpec::search(BEAM_K);
    for &s in &SweepConfig::default().s_values {
        let h0 = mean_of(r, s, DecoderSpec::Sample(n), 0.0, |x| x.metrics.entropy_nats);
        let h1 = mean_of(r, s, DecoderSpec::Sample(n), SMOOTH_EPSILON, |x| x.metrics.entropy_nats);
        entropy_ok &= matches!((h0, h1), (Some(a), Some(c)) if c > a);
        let u0 = mean_of(r, s, b, 0.0, |x| x.metrics.uniq1);
        let u1 = mean_of(r, s, b, SMOOTH_EPSILON, |x| x.metrics.uniq1);
        let ok = matches!((u0, u1), (Some(a), Some(c)) if (a - c).abs() < SMOOTHING_UNIQ_TOL);
        if !ok {
            notes.push(format!("s={s}: {} vs {}", fmt(u0), fmt(u1)));
        }
        uniq_ok &= ok;
    }
    report(
        "label-smoothing",
        entropy_ok && uniq_ok,
        format!(
            "entropy higher with epsilon={SMOOTH_EPSILON} at every s: {entropy_ok}; beam k={BEAM_K} uniq1 within {SMOOTHING_UNIQ_TOL}: {uniq_ok}{}",
            if notes.is_empty() { String::new() } else { format!(" ({})", notes.join(", ")) }
        ),
    );
}

fn determinism(sw: &Sweep) {
    let same = sw.csv_1 == sw.csv_8 && sw.std_1 == sw.std_8;
    let fastest = sw.secs_1.min(sw.secs_8);
    report(
        "determinism-and-runtime",
        same && fastest < SWEEP_BUDGET.as_secs_f64(),
        format!(
            "CSV bytes identical at 1 and 8 workers: {same}; default sweep {:.0}s (1 worker), {:.0}s (8 workers) on {} cpu(s), budget {}s",
            sw.secs_1,
            sw.secs_8,
            std::thread::available_parallelism().map_or(1, |n| n.get()),
            SWEEP_BUDGET.as_secs()
        ),
    );
}

fn main() {
    unigram_suite();
    search_oracle();
    metric_oracles();
    let sw = default_sweep();
    peakedness(&sw.result);
    repetition(&sw.result);
    length_bias(&sw.result);
    label_smoothing(&sw.result);
    determinism(&sw);

    let lines = LINES.lock().unwrap();
    let passed = lines.iter().filter(|l| l.1).count();
    println!("{passed}/{} criteria pass", lines.len());
    let unexpected: Vec<&str> = lines
        .iter()
        .filter(|(name, pass)| !pass && !KNOWN_FAILURES.contains(&name.as_str()))
        .map(|(name, _)| name.as_str())
        .collect();
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
