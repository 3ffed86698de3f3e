//! PSMILES handling: validation, capping, tokenization and merge maps.

mod corpus;
mod merge;
mod tokenize;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{generate_corpus, random_psmiles};
pub use merge::{build_merge_map, merge_scores, merge_vectors, Member, MergeError, MergeGroup, MergeMap};
pub use tokenize::{join, tokenize, LexError, Token, TokenKind};

pub const CONNECTION_POINT: &str = "[*]";

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum Violation {
    #[error("expected exactly two [*] connection points, found {found}")]
    ConnectionPoints { found: usize },
    #[error("unbalanced parenthesis at byte {offset}")]
    UnbalancedParenthesis { offset: usize },
    #[error("unbalanced bracket at byte {offset}")]
    UnbalancedBracket { offset: usize },
    #[error("ring bond {label} is not closed")]
    UnpairedRingBond { label: String },
    #[error("{0}")]
    Lex(LexError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid PSMILES {text:?}: {}", .violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct InvalidPsmiles {
    pub text: String,
    pub violations: Vec<Violation>,
}

/// Returns every structural violation; an empty list means valid.
pub fn validate(s: &str) -> Vec<Violation> {
    let mut out = Vec::new();

    let found = s.matches(CONNECTION_POINT).count();
    if found != 2 {
        out.push(Violation::ConnectionPoints { found });
    }

    let mut bracket_open: Option<usize> = None;
    let mut bracket_ok = true;
    let mut paren_stack = Vec::new();
    let mut rings: BTreeMap<String, usize> = BTreeMap::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if bracket_open.is_some() {
            match b {
                b']' => bracket_open = None,
                b'[' => {
                    out.push(Violation::UnbalancedBracket { offset: i });
                    bracket_ok = false;
                }
                _ => {}
            }
            i += 1;
            continue;
        }
        match b {
            b'[' => bracket_open = Some(i),
            b']' => {
                out.push(Violation::UnbalancedBracket { offset: i });
                bracket_ok = false;
            }
            b'(' => paren_stack.push(i),
            b')' => {
                if paren_stack.pop().is_none() {
                    out.push(Violation::UnbalancedParenthesis { offset: i });
                }
            }
            b'0'..=b'9' => *rings.entry((b as char).to_string()).or_default() += 1,
            b'%' if bytes.len() >= i + 3 && bytes[i + 1..i + 3].iter().all(u8::is_ascii_digit) => {
                *rings.entry(s[i..i + 3].to_string()).or_default() += 1;
                i += 2;
            }
            _ => {}
        }
        i += 1;
    }
    if let Some(offset) = bracket_open {
        out.push(Violation::UnbalancedBracket { offset });
        bracket_ok = false;
    }
    for offset in paren_stack {
        out.push(Violation::UnbalancedParenthesis { offset });
    }
    for (label, count) in rings {
        if count % 2 != 0 {
            out.push(Violation::UnpairedRingBond { label });
        }
    }
    if bracket_ok {
        if let Err(e) = tokenize(s) {
            out.push(Violation::Lex(e));
        }
    }
    out
}

/// A validated homopolymer repeat unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Psmiles(String);

impl Psmiles {
    pub fn parse(s: &str) -> Result<Self, InvalidPsmiles> {
        let violations = validate(s);
        if violations.is_empty() {
            Ok(Self(s.to_string()))
        } else {
            Err(InvalidPsmiles { text: s.to_string(), violations })
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Capped SMILES: each `[*]` becomes a carbon.
    pub fn cap(&self) -> String {
        self.0.replace(CONNECTION_POINT, "C")
    }

    pub fn tokens(&self) -> Vec<Token> {
        tokenize(&self.0).expect("validated PSMILES always lexes")
    }
}

impl TryFrom<String> for Psmiles {
    type Error = InvalidPsmiles;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Psmiles::parse(&value)
    }
}

impl From<Psmiles> for String {
    fn from(p: Psmiles) -> String {
        p.0
    }
}

impl fmt::Display for Psmiles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Validates then caps.
pub fn cap(s: &str) -> Result<String, InvalidPsmiles> {
    Psmiles::parse(s).map(|p| p.cap())
}
