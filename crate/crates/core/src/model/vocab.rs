use crate::corpus::{Problem, EOR, EOS, NEWLINE, OPTION_SEP, UNK};
use std::collections::HashMap;

/// Word types known to the embeddings and the argument softmax. Id 0 is `<UNK>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNK_ID: usize = 0;

impl Vocab {
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }

    /// Specials first, then the most frequent source and target tokens (ties
    /// broken alphabetically) up to `max_size` entries in total.
    pub fn build(problems: &[Problem], max_size: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for p in problems {
            for t in p.source().tokens.iter().chain(&p.target().tokens) {
                *counts.entry(t.surface.clone()).or_default() += 1;
            }
        }
        let mut words: Vec<String> = [UNK, OPTION_SEP, EOR, EOS, NEWLINE].iter().map(|s| s.to_string()).collect();
        for l in ["A", "B", "C", "D", "E"] {
            words.push(l.to_string());
        }
        let mut rest: Vec<(String, usize)> = counts.into_iter().filter(|(w, _)| !words.contains(w)).collect();
        rest.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = max_size.saturating_sub(words.len());
        words.extend(rest.into_iter().take(room).map(|(w, _)| w));
        words.truncate(max_size.max(1));
        Vocab::from_words(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, w: &str) -> Option<usize> {
        self.index.get(w).copied()
    }

    pub fn id(&self, w: &str) -> usize {
        self.get(w).unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn specials_first_and_bounded() {
        let v = Vocab::build(&synth::generate(20, 1), 40);
        assert_eq!(v.len(), 40);
        assert_eq!(v.word(UNK_ID), UNK);
        assert_eq!(v.id("never-seen"), UNK_ID);
        assert!(v.get("How").is_some());
        assert_eq!(v.id("<EOS>"), 3);
    }
}
