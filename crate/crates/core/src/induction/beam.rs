use super::candidates::{candidate_instructions_cached, run_chain, Chain, SearchCache};
use super::InductionConfig;
use crate::corpus::{Problem, SourceSeq, TargetSeq};
use crate::dsl::{execute_program, AnswerOptions, ExecutionState, Instruction, Program, Value};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Scores instruction chains during the beam search.
pub trait Scorer: Sync {
    type State: Clone;

    fn start(&self, x: &SourceSeq) -> Self::State;

    /// Log-probability of appending `chain` (whose executed values are
    /// `values`) to the history in `exec`, and the state after it.
    fn score_chain(
        &self,
        state: &Self::State,
        exec: &ExecutionState<'_>,
        chain: &[Instruction],
        values: &[Value],
    ) -> (f64, Self::State);
}

/// Every chain scores zero; the beam keeps candidates in generation order.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformScorer;

impl Scorer for UniformScorer {
    type State = ();

    fn start(&self, _: &SourceSeq) {}

    fn score_chain(&self, _: &(), _: &ExecutionState<'_>, _: &[Instruction], _: &[Value]) -> (f64, ()) {
        (0.0, ())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InducedProgram {
    pub program: Program,
    pub score: f64,
    /// Number tokens emitted from the vocabulary because nothing explained them.
    pub fallbacks: usize,
    /// Score of the chain that emitted each target token. Not persisted.
    #[serde(skip)]
    pub token_scores: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InducedProgramSet {
    /// Best first; every program executes to exactly the target.
    pub programs: Vec<InducedProgram>,
    /// Tokens at which the per-token candidate cap cut candidates.
    pub caps_hit: usize,
    /// First target token no hypothesis could emit.
    pub stuck_at: Option<usize>,
    /// Tokens emitted literally because no candidate chain existed (fill mode only).
    #[serde(default)]
    pub filled: usize,
}

impl InducedProgramSet {
    pub fn is_empty(&self) -> bool {
        self.programs.is_empty()
    }
}

struct Hyp<'a, S> {
    exec: ExecutionState<'a>,
    program: Vec<Instruction>,
    score: f64,
    token_scores: Vec<f64>,
    fallbacks: usize,
    sstate: S,
}

impl<'a, S: Clone> Clone for Hyp<'a, S> {
    fn clone(&self) -> Self {
        Hyp {
            exec: self.exec.clone(),
            program: self.program.clone(),
            score: self.score,
            token_scores: self.token_scores.clone(),
            fallbacks: self.fallbacks,
            sstate: self.sstate.clone(),
        }
    }
}

/// Left-to-right beam search over the target tokens. Each live hypothesis
/// is extended by every candidate chain for the next token; the best `beam`
/// survive. Returns at most `cfg.max_programs` complete programs.
pub fn induce_programs<S: Scorer>(
    x: &SourceSeq,
    y: &TargetSeq,
    options: &AnswerOptions,
    cfg: &InductionConfig,
    scorer: &S,
) -> InducedProgramSet {
    search(x, y, options, cfg, scorer, false)
}

/// Like [`induce_programs`], but a token with no candidate chain is emitted
/// literally from the vocabulary instead of ending the search.
pub fn induce_programs_filled<S: Scorer>(
    x: &SourceSeq,
    y: &TargetSeq,
    options: &AnswerOptions,
    cfg: &InductionConfig,
    scorer: &S,
) -> InducedProgramSet {
    search(x, y, options, cfg, scorer, true)
}

fn search<S: Scorer>(
    x: &SourceSeq,
    y: &TargetSeq,
    options: &AnswerOptions,
    cfg: &InductionConfig,
    scorer: &S,
    fill: bool,
) -> InducedProgramSet {
    assert!(cfg.beam >= 1, "beam must be at least 1");
    let mut cache = SearchCache::default();
    let mut beam = vec![Hyp {
        exec: ExecutionState::new(x, options),
        program: Vec::new(),
        score: 0.0,
        token_scores: Vec::new(),
        fallbacks: 0,
        sstate: scorer.start(x),
    }];
    let mut caps_hit = 0;
    let mut stuck_at = None;
    let mut filled = 0;

    for (k, tok) in y.tokens.iter().enumerate() {
        // (parent, chain, chain values, chain score, scorer state, fallback)
        let mut expansions = Vec::new();
        for (pi, h) in beam.iter().enumerate() {
            let cands = candidate_instructions_cached(&h.exec, tok, cfg, &mut cache);
            caps_hit += usize::from(cands.capped);
            for chain in cands.chains {
                let Some((values, _)) = run_chain(&h.exec, &chain.instrs) else { continue };
                let (lp, st) = scorer.score_chain(&h.sstate, &h.exec, &chain.instrs, &values);
                let fallback = chain.fallback;
                expansions.push((pi, chain, values, lp, st, fallback));
            }
        }
        if expansions.is_empty() && fill && !beam.is_empty() {
            filled += 1;
            let chain = Chain { instrs: vec![Instruction::emit(tok.surface.clone())], n_arith: 0, fallback: true };
            for (pi, h) in beam.iter().enumerate() {
                let values = vec![Value::str(tok.surface.clone())];
                let (lp, st) = scorer.score_chain(&h.sstate, &h.exec, &chain.instrs, &values);
                expansions.push((pi, chain.clone(), values, lp, st, true));
            }
        }
        if expansions.is_empty() {
            stuck_at = Some(k);
            beam.clear();
            break;
        }
        expansions.sort_by(|a, b| (beam[b.0].score + b.3).total_cmp(&(beam[a.0].score + a.3)));
        expansions.truncate(cfg.beam);

        let mut uses = vec![0usize; beam.len()];
        for e in &expansions {
            uses[e.0] += 1;
        }
        let mut parents: Vec<Option<Hyp<'_, S::State>>> = beam.into_iter().map(Some).collect();
        let mut next = Vec::with_capacity(expansions.len());
        for (pi, chain, values, lp, st, fallback) in expansions {
            uses[pi] -= 1;
            let mut child = if uses[pi] == 0 {
                parents[pi].take().expect("parent used once more")
            } else {
                parents[pi].clone().expect("parent alive")
            };
            for (ins, v) in chain.instrs.iter().zip(values) {
                child.exec.push(v, ins.dest);
            }
            child.program.extend(chain.instrs);
            child.score += lp;
            child.token_scores.push(lp);
            child.sstate = st;
            child.fallbacks += usize::from(fallback);
            next.push(child);
        }
        beam = next;
    }

    let target = y.surfaces();
    let mut programs = Vec::new();
    for h in beam {
        let program = Program::new(h.program);
        match execute_program(&program, x, options) {
            Ok((out, _)) if out == target => {
                programs.push(InducedProgram {
                program,
                score: h.score,
                fallbacks: h.fallbacks,
                token_scores: h.token_scores,
            })
            }
            _ => debug_assert!(false, "induced program does not reproduce the target"),
        }
        if programs.len() == cfg.max_programs {
            break;
        }
    }
    InducedProgramSet { programs, caps_hit, stuck_at, filled }
}

/// Induction outcome for one problem. A problem is covered when some
/// program explains every number by copying or computing it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub covered: bool,
    pub n_programs: usize,
    pub first_program: Option<Program>,
}

pub fn coverage_report(problems: &[Problem], cfg: &InductionConfig) -> Vec<CoverageEntry> {
    problems
        .par_iter()
        .map(|p| {
            let opts = AnswerOptions::new(&p.options);
            let set = induce_programs(&p.source(), &p.target(), &opts, cfg, &UniformScorer);
            let explained = set.programs.iter().find(|p| p.fallbacks == 0);
            CoverageEntry {
                covered: explained.is_some(),
                n_programs: set.programs.len(),
                first_program: explained.or(set.programs.first()).map(|p| p.program.clone()),
            }
        })
        .collect()
}
