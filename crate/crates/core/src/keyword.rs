use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The closed label set for keyword spotting: ten commands plus OOV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Keyword {
    Yes,
    No,
    Up,
    Down,
    Left,
    Right,
    On,
    Off,
    Stop,
    Go,
    Oov,
}

impl Keyword {
    /// Command keywords in canonical order; this order also breaks ties.
    pub const COMMANDS: [Keyword; 10] = [
        Keyword::Yes,
        Keyword::No,
        Keyword::Up,
        Keyword::Down,
        Keyword::Left,
        Keyword::Right,
        Keyword::On,
        Keyword::Off,
        Keyword::Stop,
        Keyword::Go,
    ];

    pub const ALL: [Keyword; 11] = [
        Keyword::Yes,
        Keyword::No,
        Keyword::Up,
        Keyword::Down,
        Keyword::Left,
        Keyword::Right,
        Keyword::On,
        Keyword::Off,
        Keyword::Stop,
        Keyword::Go,
        Keyword::Oov,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Keyword::Yes => "yes",
            Keyword::No => "no",
            Keyword::Up => "up",
            Keyword::Down => "down",
            Keyword::Left => "left",
            Keyword::Right => "right",
            Keyword::On => "on",
            Keyword::Off => "off",
            Keyword::Stop => "stop",
            Keyword::Go => "go",
            Keyword::Oov => "OOV",
        }
    }

    /// Exact (case-sensitive) match of a single word against the commands.
    pub fn command(word: &str) -> Option<Keyword> {
        Self::COMMANDS.into_iter().find(|k| k.as_str() == word)
    }

    /// The command a word sequence spells out exactly, if any.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Option<Keyword> {
        match words {
            [w] => Self::command(w.as_ref()),
            _ => None,
        }
    }

    pub fn is_command(self) -> bool {
        self != Keyword::Oov
    }
}

impl fmt::Display for Keyword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownKeyword(pub String);

impl fmt::Display for UnknownKeyword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} is not a keyword label", self.0)
    }
}

impl std::error::Error for UnknownKeyword {}

impl FromStr for Keyword {
    type Err = UnknownKeyword;

    /// Accepts the canonical spellings: lowercase commands and `OOV`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownKeyword(s.to_owned()))
    }
}

impl Serialize for Keyword {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Keyword {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
