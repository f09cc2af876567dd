//! Label primitives shared by the corpus, parser, workflow and metrics:
//! the 0–3 score, the NULL-or-category misattribution, and locales.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::taxonomy::SecondaryCategory;

/// Wire literal for "no misattribution".
pub const NULL_LITERAL: &str = "NULL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locale {
    En,
    Zh,
}

impl Locale {
    pub fn as_str(self) -> &'static str {
        match self {
            Locale::En => "en",
            Locale::Zh => "zh",
        }
    }
}

impl fmt::Display for Locale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Locale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "en" => Ok(Locale::En),
            "zh" => Ok(Locale::Zh),
            other => Err(format!("unknown locale {other:?} (expected en or zh)")),
        }
    }
}

/// Judge/annotator score.
///
/// 3 = fully correct, 2 = partially correct, 1 = completely incorrect,
/// 0 = off-topic or safety violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Score(u8);

impl Score {
    pub const MAX: Score = Score(3);
    pub const ALL: [Score; 4] = [Score(0), Score(1), Score(2), Score(3)];

    pub fn new(value: u8) -> Option<Score> {
        (value <= 3).then_some(Score(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn is_perfect(self) -> bool {
        self.0 == 3
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl TryFrom<i64> for Score {
    type Error = i64;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        u8::try_from(value).ok().and_then(Score::new).ok_or(value)
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.0)
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = i64::deserialize(deserializer)?;
        Score::try_from(raw)
            .map_err(|v| serde::de::Error::custom(format!("score {v} outside 0..=3")))
    }
}

/// Either NULL (fully correct answer) or the single most relevant
/// second-level category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Misattribution {
    Null,
    Category(SecondaryCategory),
}

impl Misattribution {
    pub fn is_null(self) -> bool {
        matches!(self, Misattribution::Null)
    }

    pub fn category(self) -> Option<SecondaryCategory> {
        match self {
            Misattribution::Null => None,
            Misattribution::Category(c) => Some(c),
        }
    }

    /// English canonical label, or `NULL`.
    pub fn wire_label(self) -> &'static str {
        match self {
            Misattribution::Null => NULL_LITERAL,
            Misattribution::Category(c) => c.canonical_label(),
        }
    }

    /// Parses the wire form: `NULL`, an English canonical label, or a
    /// category id. Free-text resolution lives in the taxonomy.
    pub fn from_wire(s: &str) -> Option<Misattribution> {
        if s == NULL_LITERAL {
            return Some(Misattribution::Null);
        }
        SecondaryCategory::ALL
            .iter()
            .find(|c| c.canonical_label() == s || c.id() == s)
            .map(|&c| Misattribution::Category(c))
    }
}

impl From<SecondaryCategory> for Misattribution {
    fn from(c: SecondaryCategory) -> Self {
        Misattribution::Category(c)
    }
}

impl fmt::Display for Misattribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_label())
    }
}

impl Serialize for Misattribution {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.wire_label())
    }
}

impl<'de> Deserialize<'de> for Misattribution {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Misattribution::from_wire(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown misattribution {raw:?}")))
    }
}

/// The gold consistency rule: NULL exactly when the score is 3.
pub fn is_consistent(score: Score, misattribution: Misattribution) -> bool {
    score.is_perfect() == misattribution.is_null()
}
