//! The eight support strategies.

use core::fmt;
use core::str::FromStr;

use crate::error::Error;

/// Support strategy labels. The integer codes `0..8` follow declaration order
/// and are stable across files and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyId {
    Question,
    RestatementOrParaphrasing,
    ReflectionOfFeelings,
    SelfDisclosure,
    AffirmationAndReassurance,
    ProvidingSuggestions,
    Information,
    Others,
}

/// Number of strategies, `m`.
pub const NUM_STRATEGIES: usize = 8;

impl StrategyId {
    pub const ALL: [StrategyId; NUM_STRATEGIES] = [
        StrategyId::Question,
        StrategyId::RestatementOrParaphrasing,
        StrategyId::ReflectionOfFeelings,
        StrategyId::SelfDisclosure,
        StrategyId::AffirmationAndReassurance,
        StrategyId::ProvidingSuggestions,
        StrategyId::Information,
        StrategyId::Others,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Canonical name as written in corpus and report files.
    pub fn name(self) -> &'static str {
        match self {
            StrategyId::Question => "Question",
            StrategyId::RestatementOrParaphrasing => "Restatement or Paraphrasing",
            StrategyId::ReflectionOfFeelings => "Reflection of Feelings",
            StrategyId::SelfDisclosure => "Self-disclosure",
            StrategyId::AffirmationAndReassurance => "Affirmation and Reassurance",
            StrategyId::ProvidingSuggestions => "Providing Suggestions",
            StrategyId::Information => "Information",
            StrategyId::Others => "Others",
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .iter()
            .copied()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::schema(None, alloc::format!("unknown strategy {s:?}")))
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for StrategyId {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> Result<Ser::Ok, Ser::Error> {
        s.serialize_str(self.name())
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for StrategyId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <alloc::string::String as serde::Deserialize>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
