//! Plain-text model files. See `docs/formats.md` for the layout.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::ngram::{Counts, BOS};
use crate::models::{
    smooth, ConditionalLM, ConditionalNGramModel, Conditioned, NGramConfig, SmoothedModel, SmoothingConfig,
    UnigramModel,
};
use crate::TokenId;

const MAGIC: &str = "constrainlab-model 1";

/// Any model that can be stored on disk.
#[derive(Clone)]
pub enum AnyModel {
    Unigram(UnigramModel),
    NGram(ConditionalNGramModel),
    Smoothed(Box<SmoothedModel<AnyModel>>),
}

impl AnyModel {
    pub fn smoothed(self, cfg: SmoothingConfig) -> AnyModel {
        if cfg.epsilon == 0.0 {
            return self;
        }
        AnyModel::Smoothed(Box::new(smooth(self, cfg)))
    }

    fn parts(&self) -> (&AnyModel, f64) {
        match self {
            AnyModel::Smoothed(s) => (s.inner(), s.epsilon()),
            other => (other, 0.0),
        }
    }
}

impl ConditionalLM for AnyModel {
    fn vocab_size(&self) -> usize {
        match self {
            AnyModel::Unigram(m) => m.vocab_size(),
            AnyModel::NGram(m) => m.vocab_size(),
            AnyModel::Smoothed(m) => m.vocab_size(),
        }
    }

    fn context_len(&self) -> Option<usize> {
        match self {
            AnyModel::Unigram(m) => m.context_len(),
            AnyModel::NGram(m) => m.context_len(),
            AnyModel::Smoothed(m) => m.context_len(),
        }
    }

    fn condition<'a>(&'a self, source: &[TokenId]) -> Result<Box<dyn Conditioned + 'a>> {
        match self {
            AnyModel::Unigram(m) => m.condition(source),
            AnyModel::NGram(m) => m.condition(source),
            AnyModel::Smoothed(m) => m.condition(source),
        }
    }
}

fn fmt_ctx(ctx: &[TokenId]) -> String {
    if ctx.is_empty() {
        return "-".into();
    }
    ctx.iter()
        .map(|&t| if t == BOS { "^".to_string() } else { t.to_string() })
        .collect::<Vec<_>>()
        .join(" ")
}

fn fmt_counts(c: &Counts) -> String {
    c.next
        .iter()
        .map(|(t, k)| format!("{t}:{k}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn to_text(model: &AnyModel) -> Result<String> {
    let (base, epsilon) = model.parts();
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    match base {
        AnyModel::Unigram(m) => {
            writeln!(out, "kind unigram").unwrap();
            writeln!(out, "vocab_size {}", m.vocab_size()).unwrap();
            writeln!(out, "epsilon {epsilon}").unwrap();
            writeln!(out, "section probs").unwrap();
            for (i, p) in m.probs().iter().enumerate() {
                writeln!(out, "{i}\t{p}").unwrap();
            }
        }
        AnyModel::NGram(m) => {
            let cfg = m.config();
            writeln!(out, "kind ngram").unwrap();
            writeln!(out, "vocab_size {}", m.vocab_size()).unwrap();
            writeln!(out, "order {}", cfg.order).unwrap();
            writeln!(out, "lambda {}", cfg.lambda).unwrap();
            writeln!(out, "additive {}", cfg.additive).unwrap();
            writeln!(out, "epsilon {epsilon}").unwrap();
            writeln!(out, "section ngram").unwrap();
            for (m_idx, table) in m.tables.iter().enumerate() {
                let mut keys: Vec<&Vec<TokenId>> = table.keys().collect();
                keys.sort();
                for k in keys {
                    writeln!(out, "{}\t{}\t{}", m_idx + 1, fmt_ctx(k), fmt_counts(&table[k])).unwrap();
                }
            }
            writeln!(out, "section lexical").unwrap();
            let mut keys: Vec<&TokenId> = m.lexical.keys().collect();
            keys.sort();
            for f in keys {
                writeln!(out, "{f}\t{}", fmt_counts(&m.lexical[f])).unwrap();
            }
        }
        AnyModel::Smoothed(_) => {
            return Err(Error::InvalidArgument("nested smoothing cannot be serialized".into()));
        }
    }
    writeln!(out, "end").unwrap();
    Ok(out)
}

fn bad(detail: impl Into<String>) -> Error {
    Error::format("model file", detail)
}

fn parse_counts(s: &str) -> Result<Counts> {
    let mut next = Vec::new();
    for item in s.split(' ').filter(|x| !x.is_empty()) {
        let (t, k) = item.split_once(':').ok_or_else(|| bad(format!("bad count {item:?}")))?;
        let t: TokenId = t.parse().map_err(|_| bad(format!("bad token {t:?}")))?;
        let k: u64 = k.parse().map_err(|_| bad(format!("bad count {k:?}")))?;
        next.push((t, k));
    }
    next.sort_unstable();
    Ok(Counts {
        total: next.iter().map(|(_, k)| k).sum(),
        next,
    })
}

fn parse_ctx(s: &str) -> Result<Vec<TokenId>> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(' ')
        .map(|t| {
            if t == "^" {
                Ok(BOS)
            } else {
                t.parse().map_err(|_| bad(format!("bad context token {t:?}")))
            }
        })
        .collect()
}

pub fn from_text(text: &str) -> Result<AnyModel> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing header"));
    }
    let mut header: HashMap<&str, &str> = HashMap::new();
    let mut section = None;
    for line in lines.by_ref() {
        if let Some(s) = line.strip_prefix("section ") {
            section = Some(s);
            break;
        }
        let (k, v) = line.split_once(' ').ok_or_else(|| bad(format!("bad header line {line:?}")))?;
        header.insert(k, v);
    }
    let get = |k: &str| header.get(k).copied().ok_or_else(|| bad(format!("missing {k}")));
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };
    let vocab_size: usize = get("vocab_size")?.parse().map_err(|_| bad("bad vocab_size"))?;
    let epsilon = SmoothingConfig::new(num("epsilon")?)?;
    let base = match get("kind")? {
        "unigram" => {
            if section != Some("probs") {
                return Err(bad("expected probs section"));
            }
            let mut probs = vec![0.0; vocab_size];
            for line in lines.by_ref() {
                if line == "end" {
                    break;
                }
                let (i, p) = line.split_once('\t').ok_or_else(|| bad("bad probs line"))?;
                let i: usize = i.parse().map_err(|_| bad("bad index"))?;
                *probs.get_mut(i).ok_or_else(|| bad("index out of range"))? =
                    p.parse().map_err(|_| bad("bad probability"))?;
            }
            AnyModel::Unigram(UnigramModel::from_probs(probs)?)
        }
        "ngram" => {
            let config = NGramConfig {
                order: get("order")?.parse().map_err(|_| bad("bad order"))?,
                lambda: num("lambda")?,
                additive: num("additive")?,
            };
            config.validate()?;
            if section != Some("ngram") {
                return Err(bad("expected ngram section"));
            }
            let mut tables = vec![HashMap::new(); config.order];
            let mut lexical = HashMap::new();
            let mut in_lexical = false;
            for line in lines.by_ref() {
                if line == "end" {
                    break;
                }
                if line == "section lexical" {
                    in_lexical = true;
                    continue;
                }
                if in_lexical {
                    let (f, counts) = line.split_once('\t').ok_or_else(|| bad("bad lexical line"))?;
                    let f: TokenId = f.parse().map_err(|_| bad("bad lexical token"))?;
                    lexical.insert(f, parse_counts(counts)?);
                } else {
                    let mut parts = line.splitn(3, '\t');
                    let (Some(m), Some(ctx), Some(counts)) = (parts.next(), parts.next(), parts.next()) else {
                        return Err(bad(format!("bad ngram line {line:?}")));
                    };
                    let m: usize = m.parse().map_err(|_| bad("bad order index"))?;
                    let ctx = parse_ctx(ctx)?;
                    if m == 0 || m > config.order || ctx.len() != m - 1 {
                        return Err(bad(format!("context/order mismatch in {line:?}")));
                    }
                    tables[m - 1].insert(ctx, parse_counts(counts)?);
                }
            }
            let max_id = tables
                .iter()
                .flat_map(|t| t.values())
                .chain(lexical.values())
                .flat_map(|c| c.next.iter().map(|(t, _)| *t))
                .chain(lexical.keys().copied())
                .max();
            if max_id.is_some_and(|t| t as usize >= vocab_size) {
                return Err(bad("token id beyond vocab_size"));
            }
            AnyModel::NGram(ConditionalNGramModel::from_parts(config, vocab_size, tables, lexical))
        }
        other => return Err(bad(format!("unknown kind {other:?}"))),
    };
    Ok(base.smoothed(epsilon))
}

pub fn save_model(model: &AnyModel, path: &Path) -> Result<()> {
    fs::write(path, to_text(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ngram() -> ConditionalNGramModel {
        let pairs = vec![(vec![2u32, 3], vec![4u32, 5, 4]), (vec![3], vec![5])];
        ConditionalNGramModel::fit(&pairs, 6, NGramConfig::default()).unwrap()
    }

    #[test]
    fn ngram_round_trip_preserves_distributions() {
        let m = AnyModel::NGram(ngram()).smoothed(SmoothingConfig::new(0.1).unwrap());
        let text = to_text(&m).unwrap();
        let back = from_text(&text).unwrap();
        assert_eq!(to_text(&back).unwrap(), text);
        for (src, prefix) in [(&[2u32][..], &[][..]), (&[3, 2], &[4, 5]), (&[], &[5])] {
            assert_eq!(m.next_dist(src, prefix).unwrap(), back.next_dist(src, prefix).unwrap());
        }
    }

    #[test]
    fn unigram_round_trip() {
        let m = AnyModel::Unigram(UnigramModel::from_probs(vec![0.1, 0.2, 0.7]).unwrap());
        let back = from_text(&to_text(&m).unwrap()).unwrap();
        assert_eq!(m.next_dist(&[], &[]).unwrap(), back.next_dist(&[], &[]).unwrap());
    }

    #[test]
    fn rejects_garbage() {
        assert!(from_text("hello").is_err());
        let text = to_text(&AnyModel::NGram(ngram())).unwrap().replace("vocab_size 6", "vocab_size 3");
        assert!(from_text(&text).is_err());
    }
}
