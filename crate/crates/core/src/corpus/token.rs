//! Tokenization and numeric lexing.
//!
//! Text is split on whitespace, then leading, trailing and embedded
//! punctuation is split off into its own token unless it belongs to a
//! maximal numeric pattern. Numeric patterns, in priority order:
//! thousands-grouped (`1,000,000`), decimal (`3.5`), fraction (`3/4`),
//! plain integer (`52`). Each may carry a leading `-`.

use serde::{Deserialize, Serialize};

/// Option separator inside the source sequence.
pub const OPTION_SEP: &str = "<O>";
/// End of rationale.
pub const EOR: &str = "<EOR>";
/// End of sequence.
pub const EOS: &str = "<EOS>";
/// Out-of-vocabulary marker.
pub const UNK: &str = "<UNK>";
/// Explicit line break inside rationales.
pub const NEWLINE: &str = "\n";

pub const SPECIALS: [&str; 5] = [OPTION_SEP, EOR, EOS, UNK, NEWLINE];

const PUNCT: &[char] = &[
    '.', ',', ';', ':', '?', '!', '(', ')', '[', ']', '{', '}', '=', '→',
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Word,
    Number,
    Punct,
    Special,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub kind: TokenKind,
    /// Present iff `kind == Number`; always finite.
    pub value: Option<f64>,
}

impl Token {
    pub fn word(surface: impl Into<String>) -> Self {
        Token { surface: surface.into(), kind: TokenKind::Word, value: None }
    }

    pub fn special(surface: &str) -> Self {
        debug_assert!(SPECIALS.contains(&surface));
        Token { surface: surface.to_string(), kind: TokenKind::Special, value: None }
    }

    /// Classifies a single surface the same way the tokenizer would if the
    /// surface appeared on its own.
    pub fn classify(surface: &str) -> Self {
        if SPECIALS.contains(&surface) {
            return Token::special(surface);
        }
        let mut chars = surface.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if PUNCT.contains(&c) {
                return Token { surface: surface.to_string(), kind: TokenKind::Punct, value: None };
            }
        }
        match lex_numeric(surface) {
            Some(v) => Token { surface: surface.to_string(), kind: TokenKind::Number, value: Some(v) },
            None => Token::word(surface),
        }
    }

    pub fn is_number(&self) -> bool {
        self.kind == TokenKind::Number
    }
}

/// Syntactic shape of a numeric surface.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NumericForm {
    /// Integer or decimal, e.g. `52`, `-0.25`.
    Plain,
    /// `a/b` with nonzero `b`.
    Fraction,
    /// Comma-grouped thousands, e.g. `1,000,000` or `12,345.5`.
    Grouped,
}

fn digits(s: &[u8], i: usize) -> usize {
    s[i..].iter().take_while(|b| b.is_ascii_digit()).count()
}

/// Greedy match of the thousands-grouped pattern starting at `i`; returns the end.
fn match_grouped(s: &[u8], i: usize) -> Option<usize> {
    let lead = digits(s, i);
    if lead == 0 || lead > 3 {
        return None;
    }
    let mut end = i + lead;
    let mut groups = 0;
    while end + 4 <= s.len() && s[end] == b',' && digits(s, end + 1) >= 3 {
        // a group is exactly three digits
        if digits(s, end + 1) != 3 {
            break;
        }
        end += 4;
        groups += 1;
    }
    if groups == 0 {
        return None;
    }
    if end + 1 < s.len() && s[end] == b'.' && digits(s, end + 1) > 0 {
        end += 1 + digits(s, end + 1);
    }
    Some(end)
}

fn match_decimal(s: &[u8], i: usize) -> Option<usize> {
    let a = digits(s, i);
    if a == 0 {
        return None;
    }
    let dot = i + a;
    if dot < s.len() && s[dot] == b'.' {
        let b = digits(s, dot + 1);
        if b > 0 {
            return Some(dot + 1 + b);
        }
    }
    None
}

fn match_fraction(s: &[u8], i: usize) -> Option<usize> {
    let a = digits(s, i);
    if a == 0 {
        return None;
    }
    let slash = i + a;
    if slash < s.len() && s[slash] == b'/' {
        let b = digits(s, slash + 1);
        if b > 0 {
            return Some(slash + 1 + b);
        }
    }
    None
}

fn match_integer(s: &[u8], i: usize) -> Option<usize> {
    let a = digits(s, i);
    (a > 0).then_some(i + a)
}

type Matcher = fn(&[u8], usize) -> Option<usize>;

const MATCHERS: [(NumericForm, Matcher); 4] = [
    (NumericForm::Grouped, match_grouped),
    (NumericForm::Plain, match_decimal),
    (NumericForm::Fraction, match_fraction),
    (NumericForm::Plain, match_integer),
];

fn parse_plain(text: &str) -> Option<f64> {
    text.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn value_of(form: NumericForm, text: &str) -> Option<f64> {
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let v = match form {
        NumericForm::Plain => parse_plain(body)?,
        NumericForm::Grouped => parse_plain(&body.replace(',', ""))?,
        NumericForm::Fraction => {
            let (a, b) = body.split_once('/')?;
            let a = parse_plain(a)?;
            let b = parse_plain(b)?;
            if b == 0.0 {
                return None;
            }
            a / b
        }
    };
    let v = if neg { -v } else { v };
    v.is_finite().then_some(v)
}

/// Matches a numeric pattern at byte offset `i` of `s` that ends exactly at a
/// boundary accepted by `at_boundary`. Returns (end, form, value).
fn match_numeric_at(
    s: &str,
    i: usize,
    at_boundary: impl Fn(usize) -> bool,
) -> Option<(usize, NumericForm, f64)> {
    let bytes = s.as_bytes();
    let start = if bytes.get(i) == Some(&b'-') { i + 1 } else { i };
    if start >= bytes.len() || !bytes[start].is_ascii_digit() {
        return None;
    }
    for (form, matcher) in MATCHERS {
        if let Some(end) = matcher(bytes, start) {
            if at_boundary(end) {
                if let Some(v) = value_of(form, &s[i..end]) {
                    return Some((end, form, v));
                }
            }
        }
    }
    None
}

/// Shape and value of a surface that is entirely one numeric pattern.
pub fn numeric_form(surface: &str) -> Option<(NumericForm, f64)> {
    match_numeric_at(surface, 0, |end| end == surface.len()).map(|(_, form, v)| (form, v))
}

/// Numeric value of an integer, decimal, fraction or thousands-grouped
/// surface; `None` for anything else (including `a/0`).
pub fn lex_numeric(surface: &str) -> Option<f64> {
    numeric_form(surface).map(|(_, v)| v)
}

fn is_punct(c: char) -> bool {
    PUNCT.contains(&c)
}

fn tokenize_chunk(chunk: &str, out: &mut Vec<Token>) {
    let boundary = |end: usize| end == chunk.len() || chunk[end..].starts_with(is_punct);
    let mut word_start: Option<usize> = None;
    let mut i = 0;
    while i < chunk.len() {
        if word_start.is_none() {
            if let Some((end, _, v)) = match_numeric_at(chunk, i, boundary) {
                out.push(Token {
                    surface: chunk[i..end].to_string(),
                    kind: TokenKind::Number,
                    value: Some(v),
                });
                i = end;
                continue;
            }
        }
        let c = chunk[i..].chars().next().expect("in bounds");
        if is_punct(c) {
            if let Some(ws) = word_start.take() {
                out.push(word_or_special(&chunk[ws..i]));
            }
            out.push(Token { surface: c.to_string(), kind: TokenKind::Punct, value: None });
        } else if word_start.is_none() {
            word_start = Some(i);
        }
        i += c.len_utf8();
    }
    if let Some(ws) = word_start {
        out.push(word_or_special(&chunk[ws..]));
    }
}

fn word_or_special(surface: &str) -> Token {
    if SPECIALS.contains(&surface) {
        Token::special(surface)
    } else {
        Token::word(surface)
    }
}

/// Splits text into tokens. Total: every input yields a (possibly empty) list.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    for (li, line) in text.split('\n').enumerate() {
        if li > 0 {
            out.push(Token::special(NEWLINE));
        }
        for chunk in line.split_whitespace() {
            tokenize_chunk(chunk, &mut out);
        }
    }
    out
}

/// Joins token surfaces with single spaces.
pub fn join_surfaces<'a>(tokens: impl IntoIterator<Item = &'a Token>) -> String {
    tokens.into_iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ")
}
