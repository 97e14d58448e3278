//! Perplexity, BLEU-4 and answer accuracy, and the predictor ablations.

use crate::corpus::{tokenize, Letter, Problem};
use crate::decode::{beam_decode, force_decode, DecodeConfig, DecodeRecord};
use crate::dsl::{AnswerOptions, ArgSource, Dest, Instruction, Program};
use crate::induction::InductionConfig;
use crate::model::{Model, ModelConfig, ModelError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty corpus")]
    Empty,
    #[error("length mismatch: {0} candidates, {1} references")]
    Length(usize, usize),
    #[error("non-finite log-probability in example {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Mean over examples of `exp(-Σ lp / |y|)`.
pub fn perplexity(token_logprobs: &[Vec<f64>]) -> Result<f64, EvalError> {
    if token_logprobs.is_empty() || token_logprobs.iter().any(Vec::is_empty) {
        return Err(EvalError::Empty);
    }
    let mut total = 0.0;
    for (i, lps) in token_logprobs.iter().enumerate() {
        if !lps.iter().all(|l| l.is_finite()) {
            return Err(EvalError::NonFinite(i));
        }
        total += (-lps.iter().sum::<f64>() / lps.len() as f64).exp();
    }
    Ok(total / token_logprobs.len() as f64)
}

fn words(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.surface).collect()
}

fn ngrams(ws: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for g in ws.windows(n) {
        *m.entry(g).or_default() += 1;
    }
    m
}

/// Clipped n-gram matches and totals for orders 1 to 4, plus lengths.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn of(candidate: &str, reference: &str) -> Self {
        let (c, r) = (words(candidate), words(reference));
        let mut s = BleuStats { cand_len: c.len(), ref_len: r.len(), ..Default::default() };
        for n in 1..=4 {
            let rc = ngrams(&r, n);
            for (g, k) in ngrams(&c, n) {
                s.matches[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
            s.totals[n - 1] = c.len().saturating_sub(n - 1);
        }
        s
    }

    fn add(&mut self, o: &BleuStats) {
        for n in 0..4 {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.cand_len += o.cand_len;
        self.ref_len += o.ref_len;
    }

    pub fn precision(&self, n: usize) -> f64 {
        if self.totals[n - 1] == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / self.totals[n - 1] as f64
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.cand_len == 0 {
            0.0
        } else if self.cand_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        }
    }

    /// BLEU on a 0 to 100 scale. Without smoothing any empty order gives 0;
    /// with it, orders above one count `(m + 1) / (t + 1)`.
    pub fn score(&self, smooth: bool) -> f64 {
        let mut log_p = 0.0;
        for n in 1..=4 {
            let (m, t) = (self.matches[n - 1] as f64, self.totals[n - 1] as f64);
            let p = if smooth && n > 1 { (m + 1.0) / (t + 1.0) } else if t == 0.0 { 0.0 } else { m / t };
            if p == 0.0 {
                return 0.0;
            }
            log_p += p.ln() / 4.0;
        }
        100.0 * self.brevity_penalty() * log_p.exp()
    }
}

/// Corpus-level BLEU-4 over tokenized texts, unsmoothed.
pub fn bleu4(candidates: &[String], references: &[String]) -> Result<f64, EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::Length(candidates.len(), references.len()));
    }
    if candidates.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut total = BleuStats::default();
    for (c, r) in candidates.iter().zip(references) {
        total.add(&BleuStats::of(c, r));
    }
    Ok(total.score(false))
}

/// Sentence BLEU-4 with add-one smoothing above unigrams; for diagnostics.
pub fn sentence_bleu_smoothed(candidate: &str, reference: &str) -> f64 {
    BleuStats::of(candidate, reference).score(true)
}

/// Percentage of matching letters.
pub fn accuracy(chosen: &[Letter], gold: &[Letter]) -> Result<f64, EvalError> {
    if chosen.len() != gold.len() {
        return Err(EvalError::Length(chosen.len(), gold.len()));
    }
    if chosen.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = chosen.iter().zip(gold).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / chosen.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub perplexity: f64,
    pub bleu4: f64,
    pub accuracy: f64,
    pub n_examples: usize,
    pub n_fallback_choices: usize,
    /// Target tokens force decoding had to score as literal emissions.
    pub n_unk_tokens: usize,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20}{:>12}", "metric", "value")?;
        writeln!(f, "{:<20}{:>12.3}", "perplexity", self.perplexity)?;
        writeln!(f, "{:<20}{:>12.2}", "bleu4", self.bleu4)?;
        writeln!(f, "{:<20}{:>12.2}", "accuracy", self.accuracy)?;
        writeln!(f, "{:<20}{:>12}", "examples", self.n_examples)?;
        writeln!(f, "{:<20}{:>12}", "fallback choices", self.n_fallback_choices)?;
        write!(f, "{:<20}{:>12}", "unk tokens", self.n_unk_tokens)
    }
}

/// Builds a report from decode records (in problem order) and per-example
/// force-decoded token log-probabilities.
pub fn report(
    problems: &[Problem],
    records: &[DecodeRecord],
    token_logprobs: &[Vec<f64>],
    n_unk_tokens: usize,
) -> Result<EvalReport, EvalError> {
    if records.len() != problems.len() {
        return Err(EvalError::Length(records.len(), problems.len()));
    }
    let cands: Vec<String> = records.iter().map(|r| r.rationale.clone()).collect();
    let refs: Vec<String> = problems.iter().map(|p| p.rationale.clone()).collect();
    let chosen: Vec<Letter> = records.iter().map(|r| r.letter).collect();
    let gold: Vec<Letter> = problems.iter().map(|p| p.correct).collect();
    Ok(EvalReport {
        perplexity: perplexity(token_logprobs)?,
        bleu4: bleu4(&cands, &refs)?,
        accuracy: accuracy(&chosen, &gold)?,
        n_examples: problems.len(),
        n_fallback_choices: records.iter().filter(|r| r.fallback).count(),
        n_unk_tokens,
    })
}

/// Decodes and force-decodes every problem, then scores the corpus.
pub fn evaluate(
    model: &Model,
    problems: &[Problem],
    decode: &DecodeConfig,
    force: &InductionConfig,
) -> Result<(EvalReport, Vec<DecodeRecord>), EvalError> {
    let per = problems
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (x, opts) = (p.source(), AnswerOptions::new(&p.options));
            let d = beam_decode(model, &x, &opts, decode)?;
            let f = force_decode(model, &x, &p.target(), &opts, force)?;
            Ok((DecodeRecord::new(i, &d), f.token_logprobs, f.unk_tokens))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let mut records = Vec::with_capacity(per.len());
    let mut lps = Vec::with_capacity(per.len());
    let mut unk = 0;
    for (r, l, u) in per {
        records.push(r);
        lps.push(l);
        unk += u;
    }
    Ok((report(problems, &records, &lps, unk)?, records))
}

/// The baselines as restrictions of one model: which argument predictors
/// exist, and whether programs may compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    /// Plain sequence to sequence: vocabulary emissions only.
    Softmax,
    /// Adds copying from the input.
    CopyInput,
    /// Adds copying from earlier outputs.
    CopyOutput,
    /// All predictors and the full instruction set.
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Softmax, Ablation::CopyInput, Ablation::CopyOutput, Ablation::Full];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Softmax => "softmax",
            Ablation::CopyInput => "copy-input",
            Ablation::CopyOutput => "copy-output",
            Ablation::Full => "full",
        }
    }

    pub fn configure(self, cfg: &ModelConfig) -> ModelConfig {
        let (copy_input, copy_output) = match self {
            Ablation::Softmax => (false, false),
            Ablation::CopyInput => (true, false),
            Ablation::CopyOutput | Ablation::Full => (true, true),
        };
        ModelConfig { copy_input, copy_output, ..cfg.clone() }
    }

    /// Baselines decode token emissions only.
    pub fn decode_config(self, cfg: &DecodeConfig) -> DecodeConfig {
        DecodeConfig { emit_only: self != Ablation::Full, ..cfg.clone() }
    }

    /// Training program for a baseline: one `Id` per target token, copied
    /// when the ablation has a pointer to it. `None` for the full model,
    /// which trains on induced programs.
    pub fn emission_program(self, p: &Problem) -> Option<Program> {
        if self == Ablation::Full {
            return None;
        }
        let x = p.source();
        let y = p.target();
        let mut instrs: Vec<Instruction> = Vec::with_capacity(y.tokens.len());
        for (j, t) in y.tokens.iter().enumerate() {
            let s = t.surface.as_str();
            let earlier = (self == Ablation::CopyOutput).then(|| y.tokens[..j].iter().position(|u| u.surface == s)).flatten();
            let input = (self != Ablation::Softmax).then(|| (0..x.len()).find(|&k| x.surface(k) == Some(s))).flatten();
            let src = match (earlier, input) {
                (Some(e), _) => ArgSource::CopyOutput(e),
                (None, Some(k)) => ArgSource::CopyInput(k),
                (None, None) => ArgSource::Vocab(s.to_string()),
            };
            instrs.push(Instruction::new(crate::dsl::OperationId::Id, vec![src], Dest::Output));
        }
        Some(Program::new(instrs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::execute_program;
    use crate::synth;
    use proptest::prelude::*;

    #[test]
    fn perplexity_cases() {
        assert_eq!(perplexity(&[vec![0.0; 4], vec![0.0]]).unwrap(), 1.0);
        let u = (1.0f64 / 20000.0).ln();
        let p = perplexity(&[vec![u; 3], vec![u; 17]]).unwrap();
        assert!((p - 20000.0).abs() < 1e-6);
        let p = perplexity(&[vec![0.5f64.ln(); 5], vec![0.125f64.ln(); 2]]).unwrap();
        assert!((p - 5.0).abs() < 1e-12);
        assert!(matches!(perplexity(&[]), Err(EvalError::Empty)));
        assert!(matches!(perplexity(&[vec![f64::NEG_INFINITY]]), Err(EvalError::NonFinite(0))));
    }

    #[test]
    fn bleu_cases() {
        let c = vec!["the cat sat on the mat".to_string()];
        assert!((bleu4(&c, &c).unwrap() - 100.0).abs() < 1e-9);
        let z = bleu4(&["a b c d e".to_string()], &["a b c x d e".to_string()]).unwrap();
        assert_eq!(z, 0.0);
        let s = BleuStats::of("the cat sat", "the cat sat down");
        assert!((s.brevity_penalty() - (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-12);
        for n in 1..=3 {
            assert_eq!(s.precision(n), 1.0);
        }
        assert_eq!(s.totals[3], 0);
        assert!(sentence_bleu_smoothed("the cat sat", "the cat sat down") > 0.0);
        assert!(matches!(bleu4(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(bleu4(&c, &[]), Err(EvalError::Length(1, 0))));
    }

    #[test]
    fn accuracy_cases() {
        use Letter::*;
        assert_eq!(accuracy(&[A, B], &[A, B]).unwrap(), 100.0);
        let gold = vec![A; 250];
        let chosen: Vec<Letter> = (0..250).map(|i| if i < 91 { A } else { B }).collect();
        assert!((accuracy(&chosen, &gold).unwrap() - 36.4).abs() < 1e-9);
        assert!(matches!(accuracy(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn random_letters_near_chance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 1000;
        let chosen: Vec<Letter> = (0..n).map(|_| Letter::ALL[rng.gen_range(0..5)]).collect();
        let gold: Vec<Letter> = (0..n).map(|_| Letter::ALL[rng.gen_range(0..5)]).collect();
        let a = accuracy(&chosen, &gold).unwrap();
        assert!((a - 20.0).abs() <= 3.0, "{a}");
    }

    #[test]
    fn emission_programs_reproduce_targets() {
        for p in synth::generate(10, 4) {
            let (x, opts) = (p.source(), AnswerOptions::new(&p.options));
            for ab in [Ablation::Softmax, Ablation::CopyInput, Ablation::CopyOutput] {
                let prog = ab.emission_program(&p).unwrap();
                assert_eq!(execute_program(&prog, &x, &opts).unwrap().0, p.target().surfaces());
                let uses = |f: fn(&ArgSource) -> bool| prog.instrs.iter().any(|i| i.args.iter().any(f));
                assert_eq!(uses(|a| matches!(a, ArgSource::CopyInput(_))), ab != Ablation::Softmax);
                assert_eq!(uses(|a| matches!(a, ArgSource::CopyOutput(_))), ab == Ablation::CopyOutput);
            }
            assert!(Ablation::Full.emission_program(&p).is_none());
        }
    }

    fn texts() -> impl Strategy<Value = Vec<(String, String)>> {
        let sent = prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 1..12).prop_map(|w| w.join(" "));
        prop::collection::vec((sent.clone(), sent), 1..8)
    }

    proptest! {
        #[test]
        fn perplexity_invariant_under_self_concatenation(
            lps in prop::collection::vec(prop::collection::vec(-5.0f64..0.0, 1..10), 1..6)
        ) {
            let doubled: Vec<Vec<f64>> = lps.iter().chain(&lps).cloned().collect();
            let (a, b) = (perplexity(&lps).unwrap(), perplexity(&doubled).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * a);
            prop_assert!(a >= 1.0);
        }

        #[test]
        fn bleu_identity_and_order_invariance(pairs in texts(), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let (c, r): (Vec<String>, Vec<String>) = pairs.iter().cloned().unzip();
            prop_assert!((bleu4(&c, &c).unwrap() - 100.0).abs() < 1e-9 || c.iter().all(|s| s.split(' ').count() < 4));
            let mut idx: Vec<usize> = (0..c.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let c2: Vec<String> = idx.iter().map(|&i| c[i].clone()).collect();
            let r2: Vec<String> = idx.iter().map(|&i| r[i].clone()).collect();
            let (a, b) = (bleu4(&c, &r).unwrap(), bleu4(&c2, &r2).unwrap());
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.0..=100.0 + 1e-9).contains(&a));
        }

        #[test]
        fn accuracy_permutation_and_duplication(
            v in prop::collection::vec((0usize..5, 0usize..5), 1..40), seed in 0u64..1000
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let to = |i: usize| Letter::ALL[i];
            let (c, g): (Vec<Letter>, Vec<Letter>) = v.iter().map(|&(a, b)| (to(a), to(b))).unzip();
            let base = accuracy(&c, &g).unwrap();
            let mut w = v.clone();
            w.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (c2, g2): (Vec<Letter>, Vec<Letter>) = w.iter().map(|&(a, b)| (to(a), to(b))).unzip();
            prop_assert!((accuracy(&c2, &g2).unwrap() - base).abs() < 1e-9);
            let cc: Vec<Letter> = c.iter().chain(&c).copied().collect();
            let gg: Vec<Letter> = g.iter().chain(&g).copied().collect();
            prop_assert!((accuracy(&cc, &gg).unwrap() - base).abs() < 1e-9);
            prop_assert!((0.0..=100.0).contains(&base));
        }
    }
}
