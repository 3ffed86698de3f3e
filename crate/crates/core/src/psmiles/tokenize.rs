use std::fmt;
use std::ops::Range;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TokenKind {
    ConnectionPoint,
    Atom,
    AromaticAtom,
    BracketAtom,
    Bond,
    Branch,
    RingDigit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Token {
    pub text: String,
    pub span: Range<usize>,
    pub kind: TokenKind,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum LexError {
    #[error("unrecognized character {ch:?} at byte {offset}")]
    Unrecognized { ch: char, offset: usize },
    #[error("unterminated bracket atom starting at byte {offset}")]
    UnterminatedBracket { offset: usize },
    #[error("malformed two-digit ring label at byte {offset}")]
    BadRingLabel { offset: usize },
}

impl LexError {
    pub fn offset(&self) -> usize {
        match *self {
            LexError::Unrecognized { offset, .. }
            | LexError::UnterminatedBracket { offset }
            | LexError::BadRingLabel { offset } => offset,
        }
    }
}

const ORGANIC_TWO: [&str; 2] = ["Cl", "Br"];
const ORGANIC_ONE: &[u8] = b"BCNOPSFI*";
const AROMATIC: &[u8] = b"bcnops";
const BONDS: &[u8] = b"-=#$:/\\.";

/// Longest-match lexer for (P)SMILES text.
///
/// Any bracket expression is one token; `[*]` gets its own kind. Works on
/// fragments as well as full repeat units, so no `[*]` count is enforced here.
pub fn tokenize(s: &str) -> Result<Vec<Token>, LexError> {
    let bytes = s.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        let b = bytes[i];
        let kind = match b {
            b'[' => {
                let close = s[i..].find(']').ok_or(LexError::UnterminatedBracket { offset: i })?;
                i += close + 1;
                if &s[start..i] == "[*]" {
                    TokenKind::ConnectionPoint
                } else {
                    TokenKind::BracketAtom
                }
            }
            b'(' | b')' => {
                i += 1;
                TokenKind::Branch
            }
            b'0'..=b'9' => {
                i += 1;
                TokenKind::RingDigit
            }
            b'%' => {
                if bytes.len() >= i + 3 && bytes[i + 1].is_ascii_digit() && bytes[i + 2].is_ascii_digit() {
                    i += 3;
                    TokenKind::RingDigit
                } else {
                    return Err(LexError::BadRingLabel { offset: i });
                }
            }
            _ if BONDS.contains(&b) => {
                i += 1;
                TokenKind::Bond
            }
            _ if ORGANIC_TWO.iter().any(|t| s[i..].starts_with(t)) => {
                i += 2;
                TokenKind::Atom
            }
            _ if ORGANIC_ONE.contains(&b) => {
                i += 1;
                TokenKind::Atom
            }
            _ if AROMATIC.contains(&b) => {
                i += 1;
                TokenKind::AromaticAtom
            }
            _ => {
                let ch = s[i..].chars().next().unwrap_or('\u{fffd}');
                return Err(LexError::Unrecognized { ch, offset: i });
            }
        };
        tokens.push(Token { text: s[start..i].to_string(), span: start..i, kind });
    }
    Ok(tokens)
}

/// Concatenates token texts; the inverse of [`tokenize`].
pub fn join(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.text.as_str()).collect()
}
