//! Parallel corpora and source-side truncation.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pre-tokenized sentence: whitespace-free, non-empty words, no EOS.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Sentence {
    words: Vec<String>,
}

impl Sentence {
    pub fn new(words: Vec<String>) -> Result<Self> {
        if let Some(bad) = words
            .iter()
            .find(|w| w.is_empty() || w.chars().any(char::is_whitespace))
        {
            return Err(Error::InvalidWord(bad.clone()));
        }
        Ok(Sentence { words })
    }

    /// Splits a line on whitespace. Never fails since split pieces are valid words.
    pub fn parse(line: &str) -> Self {
        Sentence {
            words: line.split_whitespace().map(str::to_owned).collect(),
        }
    }

    pub fn empty() -> Self {
        Sentence::default()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn is_prefix_of(&self, other: &Sentence) -> bool {
        other.words.starts_with(&self.words)
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.words.join(" "))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Sentence,
    pub target: Sentence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
    pub split: Split,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<SentencePair>, split: Split) -> Self {
        ParallelCorpus { pairs, split }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &Sentence> {
        self.pairs.iter().map(|p| &p.source)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Sentence> {
        self.pairs.iter().map(|p| &p.target)
    }
}

/// Percentage of each source sentence kept, `0..=100`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct TruncationLevel(u8);

impl TruncationLevel {
    pub const FULL: TruncationLevel = TruncationLevel(100);
    pub const NONE: TruncationLevel = TruncationLevel(0);

    pub fn new(s: u32) -> Result<Self> {
        if s > 100 {
            return Err(Error::TruncationLevel(s));
        }
        Ok(TruncationLevel(s as u8))
    }

    pub fn percent(self) -> u32 {
        self.0 as u32
    }

    /// Number of words kept out of `n`: `ceil(n * s / 100)`.
    pub fn kept_words(self, n: usize) -> usize {
        (n * self.0 as usize).div_ceil(100)
    }
}

impl TryFrom<u32> for TruncationLevel {
    type Error = Error;

    fn try_from(s: u32) -> Result<Self> {
        TruncationLevel::new(s)
    }
}

impl From<TruncationLevel> for u32 {
    fn from(s: TruncationLevel) -> u32 {
        s.percent()
    }
}

impl fmt::Display for TruncationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    let mut body = bytes.as_slice();
    if body.last() == Some(&b'\n') {
        body = &body[..body.len() - 1];
    }
    if bytes.is_empty() {
        return Ok(lines);
    }
    for (i, raw) in body.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| Error::Encoding {
            path: path.to_owned(),
            line: i + 1,
        })?;
        lines.push(line.to_owned());
    }
    Ok(lines)
}

/// Reads two line-aligned files into a corpus.
pub fn load_parallel(source_path: &Path, target_path: &Path, split: Split) -> Result<ParallelCorpus> {
    let sources = read_lines(source_path)?;
    let targets = read_lines(target_path)?;
    if sources.len() != targets.len() {
        return Err(Error::Alignment {
            source_lines: sources.len(),
            target_lines: targets.len(),
        });
    }
    let mut pairs = Vec::with_capacity(sources.len());
    for (i, (src, tgt)) in sources.iter().zip(&targets).enumerate() {
        let source = Sentence::parse(src);
        let target = Sentence::parse(tgt);
        if source.is_empty() {
            return Err(Error::EmptyLine {
                path: source_path.to_owned(),
                line: i + 1,
            });
        }
        if target.is_empty() {
            return Err(Error::EmptyLine {
                path: target_path.to_owned(),
                line: i + 1,
            });
        }
        pairs.push(SentencePair { source, target });
    }
    Ok(ParallelCorpus { pairs, split })
}

/// Writes one sentence per line. Empty (fully truncated) sentences become empty lines.
pub fn write_sentences<'a>(path: &Path, sentences: impl IntoIterator<Item = &'a Sentence>) -> Result<()> {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.to_string());
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_parallel(corpus: &ParallelCorpus, source_path: &Path, target_path: &Path) -> Result<()> {
    write_sentences(source_path, corpus.sources())?;
    write_sentences(target_path, corpus.targets())
}

/// Drops pairs whose source and target word sequences are identical.
pub fn remove_copy_noise(corpus: ParallelCorpus) -> ParallelCorpus {
    let ParallelCorpus { pairs, split } = corpus;
    let pairs = pairs.into_iter().filter(|p| p.source != p.target).collect();
    ParallelCorpus { pairs, split }
}

pub fn truncate_sentence(x: &Sentence, s: TruncationLevel) -> Sentence {
    Sentence {
        words: x.words[..s.kept_words(x.len())].to_vec(),
    }
}

/// Truncates every source at level `s`; targets are cloned untouched.
pub fn truncate_corpus(corpus: &ParallelCorpus, s: TruncationLevel) -> ParallelCorpus {
    let pairs = corpus
        .pairs
        .iter()
        .map(|p| SentencePair {
            source: truncate_sentence(&p.source, s),
            target: p.target.clone(),
        })
        .collect();
    ParallelCorpus {
        pairs,
        split: corpus.split,
    }
}
