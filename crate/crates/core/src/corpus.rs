//! Conversation data model, preprocessing into examples, and splitting.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::strategy::StrategyId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Speaker {
    Seeker,
    Supporter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub strategy: Option<StrategyId>,
}

impl Utterance {
    pub fn seeker(text: &str) -> Self {
        Utterance {
            speaker: Speaker::Seeker,
            text: text.to_string(),
            strategy: None,
        }
    }

    pub fn supporter(text: &str, strategy: StrategyId) -> Self {
        Utterance {
            speaker: Speaker::Supporter,
            text: text.to_string(),
            strategy: Some(strategy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dialogue {
    pub situation: String,
    pub emotion_type: String,
    #[cfg_attr(feature = "serde", serde(rename = "dialog"))]
    pub utterances: Vec<Utterance>,
}

/// Collapses whitespace runs to single spaces and trims.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Dialogue {
    /// Normalizes whitespace and checks per-utterance invariants: non-empty
    /// text and a strategy exactly on supporter turns.
    pub fn normalized(mut self) -> Result<Self> {
        self.situation = normalize_whitespace(&self.situation);
        for (i, u) in self.utterances.iter_mut().enumerate() {
            u.text = normalize_whitespace(&u.text);
            if u.text.is_empty() {
                return Err(Error::schema(None, format!("utterance {i} has empty text")));
            }
            match (u.speaker, u.strategy) {
                (Speaker::Supporter, None) => {
                    return Err(Error::schema(None, format!("supporter utterance {i} has no strategy")))
                }
                (Speaker::Seeker, Some(_)) => {
                    return Err(Error::schema(None, format!("seeker utterance {i} carries a strategy")))
                }
                _ => {}
            }
        }
        Ok(self)
    }

    pub fn has_both_roles(&self) -> bool {
        let has = |s| self.utterances.iter().any(|u| u.speaker == s);
        has(Speaker::Seeker) && has(Speaker::Supporter)
    }
}

/// One training instance `(c, s, x, r, g)`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Example {
    /// `"{dialogue}-{turn}"`, unique within a preprocessing run.
    pub id: String,
    pub context: Vec<Utterance>,
    pub situation: String,
    pub last_post: String,
    pub response: String,
    pub strategy: StrategyId,
    pub dialogue_index: usize,
    /// Index of the response utterance within its dialogue.
    pub turn_index: usize,
    pub dialogue_len: usize,
}

impl Example {
    /// Relative position of the response in its conversation, in `[0, 1)`.
    pub fn progress(&self) -> f64 {
        self.turn_index as f64 / self.dialogue_len.max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Chunking {
    /// Non-overlapping chunks of `window` utterances; contexts stay inside a chunk.
    Disjoint,
    /// Each response sees the `window − 1` utterances before it, across the whole dialogue.
    Sliding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SplitLevel {
    Example,
    Dialogue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessConfig {
    pub window: usize,
    pub seed: u64,
    pub chunking: Chunking,
    pub split: SplitLevel,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            window: 10,
            seed: 0,
            chunking: Chunking::Disjoint,
            split: SplitLevel::Example,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PreprocessReport {
    pub dialogues: usize,
    /// Dialogues lacking a seeker or a supporter turn.
    pub skipped_dialogues: usize,
    /// Supporter turns whose context holds no seeker utterance.
    pub skipped_turns: usize,
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    pub report: PreprocessReport,
}

/// Examples for one dialogue, in turn order.
pub fn dialogue_examples(d: &Dialogue, dialogue_index: usize, window: usize, chunking: Chunking) -> (Vec<Example>, usize) {
    let n = d.utterances.len();
    let mut out = Vec::new();
    let mut skipped = 0;
    for (j, u) in d.utterances.iter().enumerate() {
        let Some(strategy) = u.strategy.filter(|_| u.speaker == Speaker::Supporter) else {
            continue;
        };
        let floor = match chunking {
            Chunking::Disjoint => j - j % window,
            Chunking::Sliding => 0,
        };
        let start = floor.max(j.saturating_sub(window - 1));
        let context = &d.utterances[start..j];
        let Some(last_post) = context.iter().rev().find(|u| u.speaker == Speaker::Seeker) else {
            skipped += 1;
            continue;
        };
        out.push(Example {
            id: format!("{dialogue_index}-{j}"),
            context: context.to_vec(),
            situation: d.situation.clone(),
            last_post: last_post.text.clone(),
            response: u.text.clone(),
            strategy,
            dialogue_index,
            turn_index: j,
            dialogue_len: n,
        });
    }
    (out, skipped)
}

/// `(train, dev, test)` sizes for `n` items: dev and test each get `round(n/10)`.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let tenth = (n + 5) / 10;
    let tenth = tenth.min(n / 2);
    (n - 2 * tenth, tenth, tenth)
}

/// Builds examples and splits them 8:1:1. A pure function of its inputs.
pub fn preprocess(dialogues: &[Dialogue], config: PreprocessConfig) -> Result<Splits> {
    if config.window < 2 {
        return Err(Error::contract("window must be at least 2"));
    }
    let mut report = PreprocessReport {
        dialogues: dialogues.len(),
        ..Default::default()
    };
    let mut per_dialogue: Vec<Vec<Example>> = Vec::with_capacity(dialogues.len());
    for (i, d) in dialogues.iter().enumerate() {
        if !d.has_both_roles() {
            report.skipped_dialogues += 1;
            per_dialogue.push(Vec::new());
            continue;
        }
        let (ex, skipped) = dialogue_examples(d, i, config.window, config.chunking);
        report.skipped_turns += skipped;
        per_dialogue.push(ex);
    }
    let mut rng = rng::derive(config.seed, "split");
    let (train, dev, test) = match config.split {
        SplitLevel::Example => {
            let mut all: Vec<Example> = per_dialogue.into_iter().flatten().collect();
            all.shuffle(&mut rng);
            cut(all)
        }
        SplitLevel::Dialogue => {
            let mut groups: Vec<Vec<Example>> = per_dialogue.into_iter().filter(|g| !g.is_empty()).collect();
            groups.shuffle(&mut rng);
            let (a, b, c) = cut(groups);
            let flat = |g: Vec<Vec<Example>>| g.into_iter().flatten().collect::<Vec<_>>();
            (flat(a), flat(b), flat(c))
        }
    };
    report.examples = train.len() + dev.len() + test.len();
    Ok(Splits {
        train,
        dev,
        test,
        report,
    })
}

fn cut<T>(mut items: Vec<T>) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (ntrain, ndev, _) = split_sizes(items.len());
    let test = items.split_off(ntrain + ndev);
    let dev = items.split_off(ntrain);
    (items, dev, test)
}

const FEELINGS: [&str; 8] = ["sad", "anxious", "lonely", "stressed", "angry", "tired", "worried", "lost"];
const TOPICS: [&str; 8] = ["job", "exam", "family", "friend", "partner", "health", "money", "move"];
const CLOSERS: [&str; 8] = ["today", "lately", "again", "tonight", "this week", "so much", "all day", "now"];

fn synthetic_response(strategy: StrategyId, feeling: &str, topic: &str) -> String {
    match strategy {
        StrategyId::Question => format!("what happened with your {topic} ?"),
        StrategyId::RestatementOrParaphrasing => format!("so your {topic} makes you feel {feeling} ."),
        StrategyId::ReflectionOfFeelings => format!("it sounds like you are really {feeling} ."),
        StrategyId::SelfDisclosure => format!("i also felt {feeling} about my {topic} once ."),
        StrategyId::AffirmationAndReassurance => format!("you are strong and your {topic} will get better ."),
        StrategyId::ProvidingSuggestions => format!("maybe talk to someone about your {topic} ."),
        StrategyId::Information => format!("many people feel {feeling} when a {topic} changes ."),
        StrategyId::Others => format!("thank you for sharing about your {topic} ."),
    }
}

/// A small corpus of two-turn dialogues with distinct seeker posts. The
/// strategy of dialogue `i` is `i mod 8`, so every label appears.
pub fn synthetic_dialogues(n: usize, seed: u64) -> Vec<Dialogue> {
    let mut rng = rng::derive(seed, "synthetic-corpus");
    let mut seen = Vec::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let f = rng.gen_range(0..FEELINGS.len());
        let t = rng.gen_range(0..TOPICS.len());
        let c = rng.gen_range(0..CLOSERS.len());
        if seen.contains(&(f, t)) && seen.len() < FEELINGS.len() * TOPICS.len() {
            continue;
        }
        seen.push((f, t));
        let (feeling, topic) = (FEELINGS[f], TOPICS[t]);
        let strategy = StrategyId::ALL[out.len() % StrategyId::ALL.len()];
        out.push(Dialogue {
            situation: format!("i am {feeling} because of my {topic}"),
            emotion_type: feeling.to_string(),
            utterances: alloc::vec![
                Utterance::seeker(&format!("i feel {feeling} about my {topic} {}", CLOSERS[c])),
                Utterance::supporter(&synthetic_response(strategy, feeling, topic), strategy),
            ],
        });
    }
    out
}
