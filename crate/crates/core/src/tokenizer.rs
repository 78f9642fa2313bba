//! Byte-pair encoding with the `@@` continuation-marker convention, and the
//! token-id vocabulary.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::{ParallelCorpus, Sentence};
use crate::error::{Error, Result};
use crate::TokenId;

pub const CONTINUATION_MARKER: &str = "@@";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";
pub const EOS: TokenId = 0;
pub const UNK: TokenId = 1;
pub const DEFAULT_NUM_MERGES: usize = 8000;

/// Ordered merge list. Rank of a merge is its position.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

type SymbolPair = (u32, u32);

struct Learner {
    symbols: Vec<String>,
    symbol_ids: HashMap<String, u32>,
    words: Vec<(Vec<u32>, i64)>,
    pair_counts: HashMap<SymbolPair, i64>,
    pair_words: HashMap<SymbolPair, BTreeSet<usize>>,
    // (count desc, concatenation asc, left asc, right asc)
    queue: BTreeSet<(Reverse<i64>, String, String, String, SymbolPair)>,
}

impl Learner {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.symbol_ids.get(s) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbols.push(s.to_owned());
        self.symbol_ids.insert(s.to_owned(), id);
        id
    }

    fn queue_key(&self, pair: SymbolPair, count: i64) -> (Reverse<i64>, String, String, String, SymbolPair) {
        let (l, r) = (&self.symbols[pair.0 as usize], &self.symbols[pair.1 as usize]);
        (Reverse(count), format!("{l}{r}"), l.clone(), r.clone(), pair)
    }

    fn adjust(&mut self, pair: SymbolPair, delta: i64, word: usize) {
        let old = self.pair_counts.get(&pair).copied().unwrap_or(0);
        let new = old + delta;
        if old > 0 {
            let key = self.queue_key(pair, old);
            self.queue.remove(&key);
        }
        if new > 0 {
            let key = self.queue_key(pair, new);
            self.queue.insert(key);
            self.pair_counts.insert(pair, new);
        } else {
            self.pair_counts.remove(&pair);
        }
        if delta > 0 {
            self.pair_words.entry(pair).or_default().insert(word);
        }
    }

    fn merge(&mut self, pair: SymbolPair) {
        let merged = format!("{}{}", self.symbols[pair.0 as usize], self.symbols[pair.1 as usize]);
        let merged_id = self.intern(&merged);
        let affected: Vec<usize> = self
            .pair_words
            .remove(&pair)
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        for w in affected {
            let (old, freq) = self.words[w].clone();
            if !old.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            let mut new = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && (old[i], old[i + 1]) == pair {
                    new.push(merged_id);
                    i += 2;
                } else {
                    new.push(old[i]);
                    i += 1;
                }
            }
            for p in old.windows(2) {
                self.adjust((p[0], p[1]), -freq, w);
            }
            for p in new.windows(2) {
                self.adjust((p[0], p[1]), freq, w);
            }
            self.words[w].0 = new;
        }
    }
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, m) in merges.iter().enumerate() {
            if ranks.insert(m.clone(), i).is_some() {
                return Err(Error::format("merge list", format!("duplicate merge {} {}", m.0, m.1)));
            }
        }
        Ok(BpeModel { merges, ranks })
    }

    /// Learns up to `num_merges` merges jointly over source and target words.
    ///
    /// Each step merges the most frequent adjacent symbol pair; ties go to the
    /// lexicographically smallest concatenation.
    pub fn learn(corpus: &ParallelCorpus, num_merges: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut word_freqs: BTreeMap<&str, i64> = BTreeMap::new();
        for pair in &corpus.pairs {
            for w in pair.source.words().iter().chain(pair.target.words()) {
                *word_freqs.entry(w.as_str()).or_default() += 1;
            }
        }
        let mut learner = Learner {
            symbols: Vec::new(),
            symbol_ids: HashMap::new(),
            words: Vec::with_capacity(word_freqs.len()),
            pair_counts: HashMap::new(),
            pair_words: HashMap::new(),
            queue: BTreeSet::new(),
        };
        for (word, freq) in word_freqs {
            let syms: Vec<u32> = word
                .chars()
                .map(|c| learner.intern(c.encode_utf8(&mut [0; 4])))
                .collect();
            learner.words.push((syms, freq));
        }
        for w in 0..learner.words.len() {
            let (syms, freq) = learner.words[w].clone();
            for p in syms.windows(2) {
                learner.adjust((p[0], p[1]), freq, w);
            }
        }
        let mut merges = Vec::new();
        while merges.len() < num_merges {
            let Some((_, _, left, right, pair)) = learner.queue.first().cloned() else {
                break;
            };
            learner.merge(pair);
            if let Some(c) = learner.pair_counts.remove(&pair) {
                let key = learner.queue_key(pair, c);
                learner.queue.remove(&key);
            }
            merges.push((left, right));
        }
        BpeModel::from_merges(merges)
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Splits a single word into subword pieces (without markers).
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())).map(|&r| (r, p)))
                .min_by_key(|(r, _)| *r);
            let Some((_, p)) = best else { break };
            let (l, r) = (p[0].clone(), p[1].clone());
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    next.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    next.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            syms = next;
        }
        syms
    }

    /// Applies the merges to every word; all pieces but the last of a word carry `@@`.
    pub fn apply(&self, sentence: &Sentence) -> Vec<String> {
        let mut out = Vec::with_capacity(sentence.len() * 2);
        for w in sentence.words() {
            let pieces = self.segment_word(w);
            let last = pieces.len() - 1;
            for (i, p) in pieces.into_iter().enumerate() {
                if i < last {
                    out.push(p + CONTINUATION_MARKER);
                } else {
                    out.push(p);
                }
            }
        }
        out
    }

    /// Like [`BpeModel::apply`] over many sentences, memoizing word segmentations.
    pub fn apply_all<'a>(&self, sentences: impl IntoIterator<Item = &'a Sentence>) -> Vec<Vec<String>> {
        let mut cache: HashMap<&str, Vec<String>> = HashMap::new();
        sentences
            .into_iter()
            .map(|s| {
                let mut out = Vec::new();
                for w in s.words() {
                    let pieces = cache.entry(w.as_str()).or_insert_with(|| {
                        let pieces = self.segment_word(w);
                        let last = pieces.len() - 1;
                        pieces
                            .into_iter()
                            .enumerate()
                            .map(|(i, p)| if i < last { p + CONTINUATION_MARKER } else { p })
                            .collect()
                    });
                    out.extend(pieces.iter().cloned());
                }
                out
            })
            .collect()
    }

    /// One merge per line, two space-separated symbols.
    pub fn to_merge_file(&self) -> String {
        let mut s = String::new();
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn parse_merge_file(text: &str) -> Result<Self> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut it = line.split(' ');
            match (it.next(), it.next(), it.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_owned(), r.to_owned()))
                }
                _ => return Err(Error::format("merge file", format!("line {}: {line:?}", i + 1))),
            }
        }
        BpeModel::from_merges(merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_merge_file()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        BpeModel::parse_merge_file(&text)
    }
}

/// Token string to id table. `</s>` is id 0, `<unk>` id 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from the given subwords, ordered lexicographically
    /// after the two reserved entries.
    pub fn from_subwords<'a>(subwords: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = subwords
            .into_iter()
            .filter(|s| *s != EOS_TOKEN && *s != UNK_TOKEN)
            .collect();
        let tokens = [EOS_TOKEN, UNK_TOKEN]
            .into_iter()
            .chain(set)
            .map(str::to_owned)
            .collect();
        Vocabulary::from_tokens(tokens).expect("reserved tokens are unique")
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(EOS_TOKEN)
            || tokens.get(1).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(Error::format("vocabulary", "ids 0 and 1 must be </s> and <unk>"));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::format("vocabulary", format!("invalid token {t:?}")));
            }
            if ids.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::format("vocabulary", format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, subwords: &[S], append_eos: bool) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = subwords
            .iter()
            .map(|s| self.id(s.as_ref()).unwrap_or(UNK))
            .collect();
        if append_eos {
            ids.push(EOS);
        }
        ids
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.token(id).map(str::to_owned).ok_or(Error::TokenOutOfRange {
                    id,
                    size: self.len(),
                })
            })
            .collect()
    }

    /// Canonical file form: `token<TAB>id` per line.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            s.push_str(t);
            s.push('\t');
            s.push_str(&i.to_string());
            s.push('\n');
        }
        s
    }

    pub fn parse_file(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::format("vocabulary", format!("line {}: missing tab", i + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::format("vocabulary", format!("line {}: bad id {id:?}", i + 1)))?;
            if id != i {
                return Err(Error::format("vocabulary", format!("line {}: ids must be dense", i + 1)));
            }
            tokens.push(tok.to_owned());
        }
        Vocabulary::from_tokens(tokens)
    }

    /// Hex SHA-256 of the canonical file form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::parse_file(&text)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Detokenized {
    pub sentence: Sentence,
    /// The last piece carried a marker with nothing to attach to; it was dropped.
    pub dangling_marker: bool,
}

/// Undoes the `@@` convention.
pub fn detokenize<S: AsRef<str>>(pieces: &[S]) -> Detokenized {
    let mut words = Vec::new();
    let mut current = String::new();
    let mut open = false;
    for piece in pieces {
        let piece = piece.as_ref();
        match piece.strip_suffix(CONTINUATION_MARKER) {
            Some(stem) => {
                current.push_str(stem);
                open = true;
            }
            None => {
                current.push_str(piece);
                words.push(std::mem::take(&mut current));
                open = false;
            }
        }
    }
    if open {
        log::warn!("dangling continuation marker at end of sequence");
        if !current.is_empty() {
            words.push(current);
        }
    }
    let words: Vec<String> = words.into_iter().filter(|w| !w.is_empty()).collect();
    Detokenized {
        sentence: Sentence::new(words).unwrap_or_default(),
        dangling_marker: open,
    }
}

/// Collects every subword produced by `bpe` over both sides of `corpus`.
pub fn vocabulary_for(bpe: &BpeModel, corpus: &ParallelCorpus) -> Vocabulary {
    let mut seen: HashSet<String> = HashSet::new();
    for pieces in bpe.apply_all(corpus.sources().chain(corpus.targets())) {
        seen.extend(pieces);
    }
    Vocabulary::from_subwords(seen.iter().map(String::as_str))
}
