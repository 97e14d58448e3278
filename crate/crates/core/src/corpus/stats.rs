use super::{Problem, Token, TokenKind};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;

/// Length and vocabulary figures for one text column.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub avg_len: f64,
    pub avg_len_numeric: f64,
    pub avg_len_non_numeric: f64,
    pub vocab: usize,
    pub vocab_numeric: usize,
    pub vocab_non_numeric: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_examples: usize,
    /// Question plus option text.
    pub question: ColumnStats,
    pub rationale: ColumnStats,
}

#[derive(Default)]
struct Acc {
    numeric: usize,
    other: usize,
    vocab_numeric: HashSet<String>,
    vocab_other: HashSet<String>,
}

impl Acc {
    fn add(&mut self, tokens: impl IntoIterator<Item = Token>) {
        for t in tokens {
            match t.kind {
                TokenKind::Special => {}
                TokenKind::Number => {
                    self.numeric += 1;
                    self.vocab_numeric.insert(t.surface);
                }
                _ => {
                    self.other += 1;
                    self.vocab_other.insert(t.surface);
                }
            }
        }
    }

    fn finish(self, n: usize) -> ColumnStats {
        let mean = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
        ColumnStats {
            avg_len: mean(self.numeric + self.other),
            avg_len_numeric: mean(self.numeric),
            avg_len_non_numeric: mean(self.other),
            vocab: self.vocab_numeric.len() + self.vocab_other.len(),
            vocab_numeric: self.vocab_numeric.len(),
            vocab_non_numeric: self.vocab_other.len(),
        }
    }
}

/// Averages are per-problem token counts (special tokens excluded); vocab
/// sizes count distinct surfaces, split by token kind.
pub fn compute_stats(problems: &[Problem]) -> CorpusStats {
    let mut q = Acc::default();
    let mut r = Acc::default();
    for p in problems {
        q.add(super::tokenize(&p.question));
        for o in &p.options {
            q.add(super::tokenize(o));
        }
        r.add(super::tokenize(&p.rationale));
    }
    CorpusStats {
        n_examples: problems.len(),
        question: q.finish(problems.len()),
        rationale: r.finish(problems.len()),
    }
}

impl CorpusStats {
    /// Flat `key value` lines, one per figure.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![("n_examples".to_string(), self.n_examples.to_string())];
        for (name, c) in [("question", &self.question), ("rationale", &self.rationale)] {
            kv.push((format!("{name}.avg_len"), format!("{:.3}", c.avg_len)));
            kv.push((format!("{name}.avg_len_numeric"), format!("{:.3}", c.avg_len_numeric)));
            kv.push((format!("{name}.avg_len_non_numeric"), format!("{:.3}", c.avg_len_non_numeric)));
            kv.push((format!("{name}.vocab"), c.vocab.to_string()));
            kv.push((format!("{name}.vocab_numeric"), c.vocab_numeric.to_string()));
            kv.push((format!("{name}.vocab_non_numeric"), c.vocab_non_numeric.to_string()));
        }
        kv
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_kv() {
            writeln!(f, "{k} {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Letter;

    fn prob(q: &str, r: &str) -> Problem {
        let opts = ["A)", "B)", "C)", "D)", "E)"].map(String::from);
        Problem::new(q, opts, r, Letter::A).unwrap()
    }

    #[test]
    fn averages_are_means() {
        // each option contributes "X" and ")" = 10 tokens per problem
        let ps = [prob("a b c", "x 1"), prob("a b c d e", "y 2 3")];
        let s = compute_stats(&ps);
        assert_eq!(s.n_examples, 2);
        assert!((s.question.avg_len - (4.0 + 10.0)).abs() < 1e-12);
        assert!((s.rationale.avg_len - 2.5).abs() < 1e-12);
        assert!((s.rationale.avg_len_numeric - 1.5).abs() < 1e-12);
        assert_eq!(s.rationale.vocab_numeric, 3);
        assert_eq!(s.rationale.vocab_non_numeric, 2);
    }

    #[test]
    fn split_sums_to_total_and_doubling_keeps_averages() {
        let ps = vec![prob("From 52 cards, draw 2.", "52 C 2 = 1326 ."), prob("q 3/4", "1,000 ok")];
        let s = compute_stats(&ps);
        for c in [&s.question, &s.rationale] {
            assert!((c.avg_len - c.avg_len_numeric - c.avg_len_non_numeric).abs() < 1e-12);
            assert_eq!(c.vocab, c.vocab_numeric + c.vocab_non_numeric);
        }
        let doubled: Vec<Problem> = ps.iter().chain(ps.iter()).cloned().collect();
        let d = compute_stats(&doubled);
        assert_eq!(d.n_examples, 4);
        assert_eq!(d.question, s.question);
        assert_eq!(d.rationale, s.rationale);
    }

    #[test]
    fn empty_corpus() {
        let s = compute_stats(&[]);
        assert_eq!(s.n_examples, 0);
        assert_eq!(s.question.avg_len, 0.0);
    }
}
