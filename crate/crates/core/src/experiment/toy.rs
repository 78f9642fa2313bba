//! Synthetic parallel corpus rendered into an English-like target and a
//! verb-final pseudo-language source.
//!
//! Every sentence draws its content words from one topic, so each source word
//! says something about the rest of the target. Sources open with two
//! particles that carry nothing: heavy truncation leaves only those, and the
//! model falls back to what it knows about targets in general. Reported speech
//! (`he says that she says that ...`) nests up to three deep in half of the
//! topics, which gives a weakly conditioned decoder a cycle to fall into while
//! a full source tells it when there is no speech to report. About a third of the
//! sentences are bare intransitive clauses with their own verbs.
//!
//! Source words are a fixed letter cipher of their translation plus a
//! category suffix; the lexicon is one-to-one apart from the particles.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_parallel, ParallelCorpus, Sentence, SentencePair, Split};
use crate::error::Result;

struct Topic {
    animates: [&'static str; 3],
    things: [&'static str; 3],
    verb: &'static str,
    intransitives: [&'static str; 2],
    adjectives: [&'static str; 3],
    places: [&'static str; 2],
    tools: [&'static str; 2],
    /// Whether people in this topic report what others say.
    talks: bool,
}

const TOPICS: &[Topic] = &[
    Topic {
        animates: ["farmer", "horse", "dog"],
        things: ["field", "barn", "fence"],
        verb: "plows",
        intransitives: ["rests", "grazes"],
        adjectives: ["muddy", "wide", "old"],
        places: ["meadow", "stable"],
        tools: ["rope", "spade"],
        talks: false,
    },
    Topic {
        animates: ["teacher", "pupil", "child"],
        things: ["book", "letter", "lesson"],
        verb: "reads",
        intransitives: ["studies", "listens"],
        adjectives: ["long", "clever", "quiet"],
        places: ["school", "library"],
        tools: ["pen", "chalk"],
        talks: true,
    },
    Topic {
        animates: ["doctor", "nurse", "patient"],
        things: ["wound", "fever", "pill"],
        verb: "treats",
        intransitives: ["coughs", "recovers"],
        adjectives: ["pale", "tired", "bitter"],
        places: ["clinic", "ward"],
        tools: ["needle", "bandage"],
        talks: true,
    },
    Topic {
        animates: ["sailor", "captain", "fisher"],
        things: ["boat", "net", "sail"],
        verb: "mends",
        intransitives: ["swims", "rows"],
        adjectives: ["wet", "salty", "torn"],
        places: ["harbor", "bay"],
        tools: ["oar", "hook"],
        talks: false,
    },
    Topic {
        animates: ["painter", "singer", "poet"],
        things: ["song", "poem", "picture"],
        verb: "paints",
        intransitives: ["dances", "hums"],
        adjectives: ["bright", "sad", "strange"],
        places: ["studio", "theater"],
        tools: ["brush", "pencil"],
        talks: true,
    },
    Topic {
        animates: ["baker", "cook", "waiter"],
        things: ["bread", "soup", "cake"],
        verb: "bakes",
        intransitives: ["tastes", "waits"],
        adjectives: ["warm", "sweet", "fresh"],
        places: ["bakery", "kitchen"],
        tools: ["oven", "knife"],
        talks: false,
    },
];
const PRONOUNS: &[&str] = &["he", "she"];
const SAY: &str = "says";
const THAT: &str = "that";
const WITH: &str = "with";
const IN: &str = "in";
const TIMES: &[&str] = &["today", "yesterday", "tomorrow"];
const ADVERBS: &[&str] = &["often", "slowly", "again", "quickly", "rarely", "early"];
const MOODS: &[&str] = &["ka", "ko", "ku"];
const EVIDENTIALS: &[&str] = &["mi", "mu"];

const SHORT_RATE: f64 = 0.2;
const PRONOUN_RATE: f64 = 0.5;
const EMBED_RATE: f64 = 0.45;
const MAX_DEPTH: usize = 3;
const ADJECTIVE_RATE: f64 = 0.5;
const TOOL_RATE: f64 = 0.5;
const PLACE_RATE: f64 = 0.5;
const ADVERB_RATE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub seed: u64,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Extra training pairs whose source equals the target.
    pub copy_noise: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 2020,
            train: 4500,
            dev: 200,
            test: 300,
            copy_noise: 45,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    pub test: ParallelCorpus,
}

#[derive(Clone, Copy)]
enum Cat {
    Noun,
    Verb,
    Adj,
    Adv,
    Function,
}

fn cipher(word: &str) -> String {
    const FROM: &str = "abcdefghijklmnopqrstuvwxyz";
    const TO: &str = "eiruoaknzmtplbchgswdvfjxqy";
    word.chars()
        .map(|c| FROM.find(c).map(|i| TO.as_bytes()[i] as char).unwrap_or(c))
        .collect()
}

fn source_word(word: &str, cat: Cat) -> String {
    let stem = cipher(word);
    match cat {
        Cat::Noun => format!("{stem}el"),
        Cat::Verb => format!("{stem}en"),
        Cat::Adj => format!("{stem}ig"),
        Cat::Adv => format!("{stem}lich"),
        Cat::Function => format!("{stem}z"),
    }
}

#[derive(Default)]
struct Clause {
    target: Vec<String>,
    source: Vec<String>,
}

impl Clause {
    fn push_both(&mut self, word: &str, cat: Cat) {
        self.target.push(word.to_owned());
        self.source.push(source_word(word, cat));
    }

    fn noun_phrase(&mut self, rng: &mut ChaCha8Rng, topic: &Topic, nouns: &[&str]) {
        if rng.random_bool(ADJECTIVE_RATE) {
            self.push_both(topic.adjectives.choose(rng).unwrap(), Cat::Adj);
        }
        self.push_both(nouns.choose(rng).unwrap(), Cat::Noun);
    }

    /// `with`/`in` phrases: the source puts the marker after its noun.
    fn adjunct(&mut self, rng: &mut ChaCha8Rng, topic: &Topic, marker: &str, nouns: &[&str]) -> Vec<String> {
        let mut np = Clause::default();
        np.noun_phrase(rng, topic, nouns);
        self.target.push(marker.to_owned());
        self.target.extend(np.target);
        np.source.push(source_word(marker, Cat::Function));
        np.source
    }
}

/// Target `SUBJ VERB OBJ [with TOOL] [in PLACE]` or `SUBJ says that CLAUSE`.
/// The source puts the verb last and an embedded clause before `that`.
fn clause(rng: &mut ChaCha8Rng, topic: &Topic, depth: usize) -> Clause {
    let mut out = Clause::default();
    if rng.random_bool(PRONOUN_RATE) {
        out.push_both(PRONOUNS.choose(rng).unwrap(), Cat::Noun);
    } else {
        out.noun_phrase(rng, topic, &topic.animates);
    }
    if topic.talks && depth < MAX_DEPTH && rng.random_bool(EMBED_RATE) {
        let inner = clause(rng, topic, depth + 1);
        out.target.extend([SAY.to_owned(), THAT.to_owned()]);
        out.target.extend(inner.target);
        out.source.extend(inner.source);
        out.source.extend([source_word(THAT, Cat::Function), source_word(SAY, Cat::Verb)]);
        return out;
    }
    out.target.push(topic.verb.to_owned());
    let mut obj = Clause::default();
    obj.noun_phrase(rng, topic, &topic.things);
    out.target.extend(obj.target);
    out.source.extend(obj.source);
    if rng.random_bool(TOOL_RATE) {
        let src = out.adjunct(rng, topic, WITH, &topic.tools);
        out.source.extend(src);
    }
    if rng.random_bool(PLACE_RATE) {
        let src = out.adjunct(rng, topic, IN, &topic.places);
        out.source.extend(src);
    }
    out.source.push(source_word(topic.verb, Cat::Verb));
    out
}

fn sentence_pair(rng: &mut ChaCha8Rng) -> SentencePair {
    let mut source = vec![
        MOODS.choose(rng).unwrap().to_string(),
        EVIDENTIALS.choose(rng).unwrap().to_string(),
    ];
    let topic = TOPICS.choose(rng).unwrap();
    let mut target = Vec::new();
    if rng.random_bool(SHORT_RATE) {
        let subj = *topic.animates.choose(rng).unwrap();
        let verb = *topic.intransitives.choose(rng).unwrap();
        target.extend([subj.to_owned(), verb.to_owned()]);
        source.extend([source_word(subj, Cat::Noun), source_word(verb, Cat::Verb)]);
    } else {
        let time = *TIMES.choose(rng).unwrap();
        target.push(time.to_owned());
        source.push(source_word(time, Cat::Adv));
        let body = clause(rng, topic, 0);
        target.extend(body.target);
        if rng.random_bool(ADVERB_RATE) {
            let adv = *ADVERBS.choose(rng).unwrap();
            target.push(adv.to_owned());
            source.push(source_word(adv, Cat::Adv));
        }
        source.extend(body.source);
    }
    SentencePair {
        source: Sentence::new(source).expect("generated words are valid"),
        target: Sentence::new(target).expect("generated words are valid"),
    }
}

pub fn generate(cfg: &ToyConfig) -> ToyCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut take = |n: usize| -> Vec<SentencePair> { (0..n).map(|_| sentence_pair(&mut rng)).collect() };
    let mut train = take(cfg.train);
    let dev = take(cfg.dev);
    let test = take(cfg.test);
    // spread copies through the training data
    let stride = (cfg.train / cfg.copy_noise.max(1)).max(1);
    for i in (0..cfg.copy_noise).rev() {
        let at = (i * stride).min(train.len());
        let t = train[at.min(train.len().saturating_sub(1))].target.clone();
        train.insert(
            at,
            SentencePair {
                source: t.clone(),
                target: t,
            },
        );
    }
    ToyCorpus {
        train: ParallelCorpus::new(train, Split::Train),
        dev: ParallelCorpus::new(dev, Split::Dev),
        test: ParallelCorpus::new(test, Split::Test),
    }
}

/// Writes `{train,dev,test}.{src,tgt}` into `dir`.
pub fn write_toy(corpus: &ToyCorpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    for (name, c) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        write_parallel(c, &dir.join(format!("{name}.src")), &dir.join(format!("{name}.tgt")))?;
    }
    Ok(())
}
