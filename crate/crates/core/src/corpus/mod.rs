//! Problem records, token sequences, deduplication and descriptive statistics.

mod dedup;
mod stats;
mod token;

pub use dedup::{levenshtein, levenshtein_dedup, normalized_distance, DEFAULT_DEDUP_THRESHOLD};
pub use stats::{compute_stats, ColumnStats, CorpusStats};
pub use token::{
    join_surfaces, lex_numeric, numeric_form, tokenize, NumericForm, Token, TokenKind, EOR, EOS,
    NEWLINE, OPTION_SEP, SPECIALS, UNK,
};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invalid problem: {message}")]
    Validation { line: usize, message: String },
}

/// One of the five answer labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Letter {
    A,
    B,
    C,
    D,
    E,
}

impl Letter {
    pub const ALL: [Letter; 5] = [Letter::A, Letter::B, Letter::C, Letter::D, Letter::E];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Letter> {
        Letter::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        ["A", "B", "C", "D", "E"][self.index()]
    }

    pub fn parse(s: &str) -> Option<Letter> {
        match s.trim() {
            "A" => Some(Letter::A),
            "B" => Some(Letter::B),
            "C" => Some(Letter::C),
            "D" => Some(Letter::D),
            "E" => Some(Letter::E),
            _ => None,
        }
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A multiple-choice word problem with its worked rationale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub question: String,
    /// Exactly five option texts, each carrying its label prefix (`A)...`).
    pub options: [String; 5],
    pub rationale: String,
    pub correct: Letter,
}

/// Wire shape of one record line.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    question: String,
    options: Vec<String>,
    rationale: String,
    correct: String,
}

impl Problem {
    pub fn new(
        question: impl Into<String>,
        options: [String; 5],
        rationale: impl Into<String>,
        correct: Letter,
    ) -> Result<Self, String> {
        let p = Problem { question: question.into(), options, rationale: rationale.into(), correct };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        if self.rationale.trim().is_empty() {
            return Err("empty rationale".into());
        }
        Ok(())
    }

    /// Parses one record line (JSON object with question/options/rationale/correct).
    pub fn from_json_line(line: &str, line_no: usize) -> Result<Self, CorpusError> {
        let raw: RawRecord = serde_json::from_str(line)
            .map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        let n = raw.options.len();
        let options: [String; 5] = raw.options.try_into().map_err(|_| CorpusError::Validation {
            line: line_no,
            message: format!("expected 5 options, found {n}"),
        })?;
        let correct = Letter::parse(&raw.correct).ok_or_else(|| CorpusError::Validation {
            line: line_no,
            message: format!("correct option {:?} is not one of A-E", raw.correct),
        })?;
        let p = Problem { question: raw.question, options, rationale: raw.rationale, correct };
        p.validate().map_err(|message| CorpusError::Validation { line: line_no, message })?;
        Ok(p)
    }

    pub fn to_json_line(&self) -> String {
        let raw = RawRecord {
            question: self.question.clone(),
            options: self.options.to_vec(),
            rationale: self.rationale.clone(),
            correct: self.correct.to_string(),
        };
        serde_json::to_string(&raw).expect("record serializes")
    }

    pub fn source(&self) -> SourceSeq {
        SourceSeq::new(&self.question, &self.options)
    }

    pub fn target(&self) -> TargetSeq {
        TargetSeq::new(&self.rationale, self.correct)
    }
}

/// Reads a line-delimited record file. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Problem>, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io { path: path.display().to_string(), source };
    let file = std::fs::File::open(path).map_err(io_err)?;
    read_corpus(std::io::BufReader::new(file)).map_err(|e| match e {
        CorpusError::Io { source, .. } => io_err(source),
        other => other,
    })
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<Problem>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io { path: String::new(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(Problem::from_json_line(&line, i + 1)?);
    }
    Ok(out)
}

/// Which part of the source sequence a token came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Question,
    Separator,
    Option(Letter),
}

/// The model input: question tokens, then `<O>` plus tokens for each option.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceSeq {
    pub tokens: Vec<Token>,
    pub regions: Vec<Region>,
}

impl SourceSeq {
    pub fn new(question: &str, options: &[String; 5]) -> Self {
        let mut tokens = tokenize(question);
        let mut regions = vec![Region::Question; tokens.len()];
        for (letter, opt) in Letter::ALL.iter().zip(options) {
            tokens.push(Token::special(OPTION_SEP));
            regions.push(Region::Separator);
            let ts = tokenize(opt);
            regions.extend(std::iter::repeat(Region::Option(*letter)).take(ts.len()));
            tokens.extend(ts);
        }
        SourceSeq { tokens, regions }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surface(&self, k: usize) -> Option<&str> {
        self.tokens.get(k).map(|t| t.surface.as_str())
    }

    pub fn is_question(&self, k: usize) -> bool {
        self.regions.get(k) == Some(&Region::Question)
    }
}

/// The decoding target: rationale tokens, `<EOR>`, the answer letter, `<EOS>`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSeq {
    pub tokens: Vec<Token>,
}

impl TargetSeq {
    pub fn new(rationale: &str, correct: Letter) -> Self {
        let mut tokens = tokenize(rationale);
        tokens.push(Token::special(EOR));
        tokens.push(Token::word(correct.as_str()));
        tokens.push(Token::special(EOS));
        TargetSeq { tokens }
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    /// Number of rationale tokens before `<EOR>`.
    pub fn rationale_len(&self) -> usize {
        self.tokens.len() - 3
    }

    pub fn answer(&self) -> Letter {
        Letter::parse(&self.tokens[self.tokens.len() - 2].surface).expect("target ends with a letter")
    }
}
