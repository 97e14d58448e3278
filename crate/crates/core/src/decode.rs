//! Decoding with a trained model: beam search over executable programs for
//! unseen problems, and forced decoding of a known rationale.

use crate::corpus::{numeric_form, Letter, SourceSeq, TargetSeq, EOR, EOS};
use crate::dsl::{AnswerOptions, ArgSource, Dest, ExecutionState, Instruction, OperationId, Program, Value, ValueKey};
use crate::induction::{induce_programs_filled, InductionConfig};
use crate::model::{
    arg_logprob, instruction_logprob, ArgContext, ArgDistribution, DecoderState, EncoderState, Model, ModelError,
    ModelScorer, PartialInstruction, UNK_ID,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam: usize,
    /// Instructions per program before decoding gives up.
    pub max_len: usize,
    /// Instruction candidates proposed per hypothesis and step.
    pub expand: usize,
    /// Argument values tried per slot.
    pub arg_k: usize,
    /// Seeds the random letter of the fallback path.
    pub seed: u64,
    /// Only `OUTPUT Id(..)` instructions, as in the sequence-to-sequence baselines.
    #[serde(default)]
    pub emit_only: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { beam: 200, max_len: 600, expand: 10, arg_k: 5, seed: 0, emit_only: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub program: Program,
    /// Output tokens before `<EOR>`, space separated.
    pub rationale: String,
    pub letter: Letter,
    pub score: f64,
    /// No hypothesis finished; the letter was drawn at random.
    pub fallback: bool,
}

/// One line of decode output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub id: usize,
    pub program: String,
    pub rationale: String,
    pub letter: Letter,
    pub score: f64,
    pub fallback: bool,
}

impl DecodeRecord {
    pub fn new(id: usize, d: &Decoded) -> Self {
        DecodeRecord {
            id,
            program: d.program.to_string(),
            rationale: d.rationale.clone(),
            letter: d.letter,
            score: d.score,
            fallback: d.fallback,
        }
    }
}

#[derive(Clone)]
struct Hyp<'a> {
    exec: ExecutionState<'a>,
    dec: DecoderState,
    program: Vec<Instruction>,
    score: f64,
}

struct Proposal {
    instr: Instruction,
    value: Value,
    logprob: f64,
    q_final: Vec<f64>,
}

fn answer_phase(exec: &ExecutionState<'_>) -> bool {
    exec.out.iter().any(|v| v.as_str() == Some(EOR))
}

fn is_letter(v: &Value) -> bool {
    v.as_str().and_then(Letter::parse).is_some()
}

/// Whether `v` may be written to the output at this point. Before `<EOR>`
/// anything but `<EOS>`; after it, only an option letter.
fn output_allowed(exec: &ExecutionState<'_>, v: &Value) -> bool {
    if answer_phase(exec) {
        is_letter(v)
    } else {
        v.as_str() != Some(EOS)
    }
}

/// A source yielding `v`, preferring what induction would have used: words
/// from the vocabulary, numbers copied from the question or earlier values.
fn source_for(v: &Value, exec: &ExecutionState<'_>) -> ArgSource {
    let key = v.key();
    let from_output = || exec.values.iter().position(|u| u.key() == key).map(ArgSource::CopyOutput);
    match v {
        Value::Num(_) => from_output().expect("numbers come from earlier values"),
        Value::Str(s) if numeric_form(s).is_some() => {
            let x = exec.x;
            let input = |question: bool| {
                (0..x.len()).find(|&k| x.surface(k) == Some(s.as_str()) && (!question || x.is_question(k)))
            };
            input(true)
                .map(ArgSource::CopyInput)
                .or_else(from_output)
                .or_else(|| input(false).map(ArgSource::CopyInput))
                .unwrap_or_else(|| ArgSource::Vocab(s.clone()))
        }
        Value::Str(s) => ArgSource::Vocab(s.clone()),
    }
}

/// Argument type an operation accepts: `Some(true)` numbers, `Some(false)`
/// strings, `None` either.
fn wants_num(op: OperationId) -> Option<bool> {
    use OperationId::*;
    match op {
        Id => None,
        StrToFloat | FractionToFloat | ThousandsToFloat | Check => Some(false),
        _ => Some(true),
    }
}

fn accepts(op: OperationId, v: &Value) -> bool {
    wants_num(op).is_none_or(|num| matches!(v, Value::Num(_)) == num)
}

/// Argument values of a type `op` accepts, best first: the `k` most probable
/// vocabulary words and everything copyable, each scored by the total
/// probability of every predictor path that yields it.
fn ranked_values(dist: &ArgDistribution, ctx: &ArgContext<'_>, op: OperationId, k: usize) -> Vec<(Value, f64)> {
    let mut cands: Vec<Value> = Vec::new();
    let mut seen: HashSet<ValueKey> = HashSet::new();
    let mut add = |v: Value| {
        if accepts(op, &v) && seen.insert(v.key()) {
            cands.push(v);
        }
    };
    if wants_num(op) != Some(true) {
        let mut ids: Vec<usize> = (0..dist.softmax.len()).filter(|&i| i != UNK_ID).collect();
        ids.sort_by(|&a, &b| dist.softmax[b].total_cmp(&dist.softmax[a]).then(a.cmp(&b)));
        for &i in ids.iter().take(k) {
            add(Value::str(ctx.vocab.word(i)));
        }
    }
    if !dist.copy_input.is_empty() {
        for t in 0..ctx.x.len() {
            add(Value::str(ctx.x.surface(t).expect("in range")));
        }
    }
    if !dist.copy_output.is_empty() {
        for v in ctx.values {
            add(v.clone());
        }
    }
    let mut scored: Vec<(Value, f64)> = cands.into_iter().map(|v| {
        let lp = arg_logprob(dist, &v, ctx);
        (v, lp)
    }).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored
}

/// Best `cfg.expand` executable instructions that may follow `h`.
fn propose(model: &Model, enc: &EncoderState, h: &Hyp<'_>, cfg: &DecodeConfig) -> Vec<Proposal> {
    let ctx = ArgContext { x: h.exec.x, values: &h.exec.values, vocab: &model.vocab };
    let op_lp = model.op_logprobs(&h.dec);
    let have_num = h.exec.values.iter().any(|v| matches!(v, Value::Num(_)));
    let mut ops: Vec<OperationId> = OperationId::ALL
        .into_iter()
        .filter(|&o| (have_num || wants_num(o) != Some(true)) && (!cfg.emit_only || o == OperationId::Id))
        .collect();
    ops.sort_by(|a, b| op_lp[b.index()].total_cmp(&op_lp[a.index()]));
    let dests: &[Dest] = if cfg.emit_only { &[Dest::Output] } else { &[Dest::Output, Dest::Memory] };
    let mut frontier: Vec<PartialInstruction> = ops
        .into_iter()
        .take(cfg.expand)
        .flat_map(|op| dests.iter().map(move |&d| (op, d)))
        .map(|(op, d)| model.begin_instruction(&h.dec, op, d, op_lp[op.index()]))
        .collect();
    let mut done = Vec::new();
    while !frontier.is_empty() {
        frontier.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
        frontier.truncate(cfg.expand);
        let mut next = Vec::new();
        for part in &frontier {
            let dist = model.arg_distribution(enc, &h.dec, part);
            let last = part.args.len() + 1 == part.op.arity();
            let mut kept = 0;
            for (v, lp) in ranked_values(&dist, &ctx, part.op, cfg.arg_k) {
                if kept == cfg.arg_k {
                    break;
                }
                let p = model.push_arg(part, v, lp);
                if !last {
                    kept += 1;
                    next.push(p);
                    continue;
                }
                let args = p.args.iter().map(|a| source_for(a, &h.exec)).collect();
                let instr = Instruction::new(p.op, args, p.dest);
                let Ok(value) = h.exec.eval(&instr) else { continue };
                if p.dest == Dest::Output && !output_allowed(&h.exec, &value) {
                    continue;
                }
                let q_final = model.final_arg_state(&p).to_vec();
                kept += 1;
                done.push(Proposal { instr, value, logprob: p.logprob, q_final });
            }
        }
        frontier = next;
    }
    done.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
    done.truncate(cfg.expand);
    done
}

fn rationale_of(exec: &ExecutionState<'_>) -> String {
    exec.out.iter().map(Value::surface).take_while(|s| s != EOR).collect::<Vec<_>>().join(" ")
}

/// Execution-filtered beam search. Every proposed instruction is executed at
/// once and dropped if it fails; after `<EOR>` the output may only receive an
/// option letter, which ends the program (followed by `<EOS>`). Ties go to
/// the shorter program, then to the earlier candidate.
pub fn beam_decode(
    model: &Model,
    x: &SourceSeq,
    options: &AnswerOptions,
    cfg: &DecodeConfig,
) -> Result<Decoded, ModelError> {
    if cfg.beam == 0 || cfg.expand == 0 || cfg.arg_k == 0 {
        return Err(ModelError::Invalid("beam, expand and arg_k must be positive".into()));
    }
    let enc = model.encode(x);
    let mut beam = vec![Hyp { exec: ExecutionState::new(x, options), dec: model.decoder_start(&enc), program: vec![], score: 0.0 }];
    let mut finished: Vec<(Hyp<'_>, Letter)> = Vec::new();
    let mut last_live = beam.clone();

    for _ in 0..cfg.max_len {
        if beam.is_empty() {
            break;
        }
        // scores only go down, so no live hypothesis can overtake the best finished one
        if let Some(best) = finished.iter().map(|f| f.0.score).reduce(f64::max) {
            if beam.iter().all(|h| h.score <= best) {
                break;
            }
        }
        let mut exps: Vec<(usize, Proposal)> = Vec::new();
        for (pi, h) in beam.iter().enumerate() {
            exps.extend(propose(model, &enc, h, cfg).into_iter().map(|p| (pi, p)));
        }
        exps.sort_by(|a, b| (beam[b.0].score + b.1.logprob).total_cmp(&(beam[a.0].score + a.1.logprob)));
        exps.truncate(cfg.beam);

        let mut next = Vec::with_capacity(exps.len());
        for (pi, p) in exps {
            let parent = &beam[pi];
            let mut child = parent.clone();
            let letter = (p.instr.dest == Dest::Output && answer_phase(&child.exec))
                .then(|| p.value.as_str().and_then(Letter::parse))
                .flatten();
            child.exec.push(p.value.clone(), p.instr.dest);
            child.program.push(p.instr);
            child.score += p.logprob;
            child.dec = model.decoder_advance(child.dec, &p.value, &p.q_final);
            match letter {
                Some(l) => {
                    close(model, &enc, &mut child)?;
                    finished.push((child, l));
                }
                None => next.push(child),
            }
        }
        if !next.is_empty() {
            last_live = next.clone();
        }
        beam = next;
    }

    // stable sort keeps the earlier candidate first among exact ties
    finished.sort_by(|a, b| b.0.score.total_cmp(&a.0.score).then(a.0.program.len().cmp(&b.0.program.len())));
    if let Some((h, letter)) = finished.into_iter().next() {
        return Ok(Decoded { rationale: rationale_of(&h.exec), program: Program::new(h.program), letter, score: h.score, fallback: false });
    }
    let h = last_live.into_iter().next().expect("start hypothesis");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let letter = Letter::ALL[rng.gen_range(0..5)];
    Ok(Decoded { rationale: rationale_of(&h.exec), program: Program::new(h.program), letter, score: h.score, fallback: true })
}

/// Appends the scored `<EOS>` emission.
fn close(model: &Model, enc: &EncoderState, h: &mut Hyp<'_>) -> Result<(), ModelError> {
    let eos = Instruction::emit(EOS);
    let ctx = ArgContext { x: h.exec.x, values: &h.exec.values, vocab: &model.vocab };
    let dist = model.step_distribution(enc, &h.dec, &ctx, &eos)?;
    h.score += instruction_logprob(&dist, &eos, &ctx)?;
    h.exec.push(Value::str(EOS), Dest::Output);
    h.program.push(eos);
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForceDecoded {
    pub program: Program,
    pub logprob: f64,
    /// Log-probability of the chain emitting each target token.
    pub token_logprobs: Vec<f64>,
    /// Tokens no candidate chain could emit, scored as literal emissions.
    pub unk_tokens: usize,
}

/// Most probable program (under beam search) whose execution is exactly
/// `y`, restricted per token to the induction candidates and scored by the
/// model.
pub fn force_decode(
    model: &Model,
    x: &SourceSeq,
    y: &TargetSeq,
    options: &AnswerOptions,
    cfg: &InductionConfig,
) -> Result<ForceDecoded, ModelError> {
    let cfg = InductionConfig { max_programs: 1, ..cfg.clone() };
    let scorer = ModelScorer::new(model, x);
    let set = induce_programs_filled(x, y, options, &cfg, &scorer);
    let best = set.programs.into_iter().next().ok_or(ModelError::EmptyProgramSet)?;
    Ok(ForceDecoded { program: best.program, logprob: best.score, token_logprobs: best.token_scores, unk_tokens: set.filled })
}
