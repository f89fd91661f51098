//! Mental-state blocks: commonsense inferences about the situation and the
//! seeker's last post, supplied by a pluggable [`BlockProvider`].

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::Error;
use crate::rng;
use crate::vocab::{self, Vocabulary};

/// Social-commonsense relation, in the fixed order used when blocks are
/// gathered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    OEffect,
    OReact,
    OWant,
    XAttr,
    XEffect,
    XIntent,
    XNeed,
    XReact,
    XWant,
}

pub const NUM_RELATIONS: usize = 9;

impl Relation {
    pub const ALL: [Relation; NUM_RELATIONS] = [
        Relation::OEffect,
        Relation::OReact,
        Relation::OWant,
        Relation::XAttr,
        Relation::XEffect,
        Relation::XIntent,
        Relation::XNeed,
        Relation::XReact,
        Relation::XWant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::OEffect => "oEffect",
            Relation::OReact => "oReact",
            Relation::OWant => "oWant",
            Relation::XAttr => "xAttr",
            Relation::XEffect => "xEffect",
            Relation::XIntent => "xIntent",
            Relation::XNeed => "xNeed",
            Relation::XReact => "xReact",
            Relation::XWant => "xWant",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Relation::OEffect => "The effect the event has on others besides Person X.",
            Relation::OReact => "The reaction of others besides Person X to the event.",
            Relation::OWant => "What others besides Person X may want to do after the event.",
            Relation::XAttr => "How Person X might be described given their part in the event.",
            Relation::XEffect => "The effect that the event would have on Person X.",
            Relation::XIntent => "The reason why X would cause the event.",
            Relation::XNeed => "What Person X might need to do before the event.",
            Relation::XReact => "The reaction that Person X would have to the event.",
            Relation::XWant => "What Person X may want to do after the event.",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .iter()
            .copied()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::schema(None, alloc::format!("unknown relation {s:?}")))
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Relation {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> Result<Ser::Ok, Ser::Error> {
        s.serialize_str(self.name())
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for Relation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <String as serde::Deserialize>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BlockSource {
    Situation,
    LastPost,
}

impl BlockSource {
    /// Most blocks kept per example: 20 for the situation, 30 for the last post.
    pub fn cap(self) -> usize {
        match self {
            BlockSource::Situation => 20,
            BlockSource::LastPost => 30,
        }
    }
}

/// Longest tail kept, in word tokens.
pub const MAX_TAIL_WORDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MentalBlock {
    pub relation: Relation,
    pub tail: String,
    pub source: BlockSource,
}

/// Anything that can produce inference tails for an (event, relation) pair.
pub trait BlockProvider {
    fn tails(&self, event: &str, relation: Relation) -> Vec<String>;
}

/// Tokenizes and cuts a tail to [`MAX_TAIL_WORDS`] tokens. `None` if nothing remains.
pub fn truncate_tail(tail: &str) -> Option<String> {
    let toks = vocab::tokenize(tail);
    if toks.is_empty() {
        return None;
    }
    Some(toks[..toks.len().min(MAX_TAIL_WORDS)].join(" "))
}

/// Union of the provider's tails over all relations in [`Relation::ALL`]
/// order, capped per source by keeping the earliest blocks.
pub fn query_blocks<P: BlockProvider + ?Sized>(provider: &P, event: &str, source: BlockSource) -> Vec<MentalBlock> {
    let cap = source.cap();
    let mut out = Vec::new();
    for relation in Relation::ALL {
        for tail in provider.tails(event, relation) {
            if out.len() == cap {
                return out;
            }
            if let Some(tail) = truncate_tail(&tail) {
                out.push(MentalBlock { relation, tail, source });
            }
        }
    }
    out
}

/// File-backed store of precomputed tails.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockCache {
    entries: BTreeMap<(String, Relation), usize>,
    records: Vec<CacheRecord>,
}

/// One line of a cache file.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CacheRecord {
    pub event: String,
    pub relation: Relation,
    pub tails: Vec<String>,
}

impl BlockCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds tails; a repeated `(event, relation)` appends to the existing
    /// entry in arrival order.
    pub fn insert(&mut self, event: &str, relation: Relation, tails: impl IntoIterator<Item = String>) {
        let key = (event.to_string(), relation);
        let idx = *self.entries.entry(key).or_insert_with(|| {
            self.records.push(CacheRecord {
                event: event.to_string(),
                relation,
                tails: Vec::new(),
            });
            self.records.len() - 1
        });
        self.records[idx].tails.extend(tails);
    }

    pub fn from_records(records: impl IntoIterator<Item = CacheRecord>) -> Self {
        let mut cache = Self::new();
        for r in records {
            cache.insert(&r.event, r.relation, r.tails);
        }
        cache
    }

    pub fn contains(&self, event: &str, relation: Relation) -> bool {
        self.entries.contains_key(&(event.to_string(), relation))
    }

    /// Merged records in first-seen order.
    pub fn records(&self) -> &[CacheRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl BlockProvider for BlockCache {
    fn tails(&self, event: &str, relation: Relation) -> Vec<String> {
        self.entries
            .get(&(event.to_string(), relation))
            .map(|&i| self.records[i].tails.clone())
            .unwrap_or_default()
    }
}

/// Deterministic stand-in generator: every (event, relation) pair gets
/// `tails_per_relation` tails of 2–6 words drawn from a word list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticProvider {
    seed: u64,
    words: Vec<String>,
    tails_per_relation: usize,
}

impl SyntheticProvider {
    pub const MIN_WORDS: usize = 2;
    pub const MAX_WORDS: usize = 6;

    /// Draws words from the vocabulary's alphabetic, non-reserved tokens.
    pub fn new(seed: u64, vocabulary: &Vocabulary, tails_per_relation: usize) -> Self {
        let mut words: Vec<String> = vocabulary
            .tokens()
            .iter()
            .skip(vocab::RESERVED.len())
            .filter(|t| t.chars().all(char::is_alphabetic))
            .cloned()
            .collect();
        if words.is_empty() {
            words.push("something".into());
        }
        SyntheticProvider {
            seed,
            words,
            tails_per_relation,
        }
    }

    /// Writes this provider's tails for `events` into a cache.
    pub fn materialize<'a>(&self, events: impl IntoIterator<Item = &'a str>) -> BlockCache {
        let mut cache = BlockCache::new();
        for e in events {
            for r in Relation::ALL {
                if cache.contains(e, r) {
                    continue;
                }
                cache.insert(e, r, self.tails(e, r));
            }
        }
        cache
    }
}

impl BlockProvider for SyntheticProvider {
    fn tails(&self, event: &str, relation: Relation) -> Vec<String> {
        let key = rng::fnv1a(event.as_bytes()) ^ ((relation as u64 + 1) << 56);
        let mut r = rng::seeded(self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ key);
        (0..self.tails_per_relation)
            .map(|_| {
                let n = r.gen_range(Self::MIN_WORDS..=Self::MAX_WORDS);
                (0..n)
                    .map(|_| self.words[r.gen_range(0..self.words.len())].as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }
}
