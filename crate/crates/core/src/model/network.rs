//! Forward and backward passes.
//!
//! Per instruction i the decoder state `h_i` gives the operation softmax;
//! `r_i = tanh(W[h_i; emb(o_i)])` gives the destination; an argument LSTM
//! started from `(r_i, 0)` with the destination embedding as first input
//! yields one state `q_{i,j}` per argument slot. Each slot mixes three
//! predictors (vocabulary softmax, pointer over encoder states, pointer over
//! earlier decoder states). The next decoder input is
//! `[emb(v_i); q_{i,last}]`.

use super::layers::{LstmCache, LstmState, StackCache, StackState};
use super::params::{Affinity, Parameters, N_PREDICTORS};
use super::tensor::*;
use super::{Model, ModelError, Vocab, UNK_ID};
use crate::corpus::SourceSeq;
use crate::dsl::{
    execute_program, format_float, AnswerOptions, ArgSource, Dest, ExecutionState, Instruction, OperationId, Program,
    Value,
};
use crate::induction::Scorer;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Predictor {
    Softmax,
    CopyInput,
    CopyOutput,
}

impl Predictor {
    pub const ALL: [Predictor; 3] = [Predictor::Softmax, Predictor::CopyInput, Predictor::CopyOutput];
}

/// Lookup id plus the string flag, float flag and compressed numeric value.
#[derive(Clone, Debug)]
struct ValFeat {
    id: usize,
    flags: [f64; 3],
}

fn slog(v: f64) -> f64 {
    v.signum() * v.abs().ln_1p()
}

fn dest_index(d: Dest) -> usize {
    match d {
        Dest::Output => 0,
        Dest::Memory => 1,
    }
}

fn embed_back(g: &mut Parameters, f: &ValFeat, d: &[f64]) {
    add_into(d, g.val_emb.row_mut(f.id));
    for (k, &w) in f.flags.iter().enumerate() {
        if w != 0.0 {
            axpy(w, d, g.val_flags.row_mut(k));
        }
    }
}

/// Encoder output for one source sequence.
#[derive(Clone, Debug)]
pub struct EncoderState {
    /// Top-layer state per source position.
    pub u: Vec<Vec<f64>>,
    /// Final state of every layer; initializes the decoder.
    pub summary: StackState,
    keys: Vec<Vec<f64>>,
    ids: Vec<usize>,
    caches: Vec<StackCache>,
}

/// Decoder state ready to emit the next instruction.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub stack: StackState,
    /// Top-layer state of each earlier instruction.
    pub history: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
}

impl DecoderState {
    pub fn h(&self) -> &[f64] {
        &self.stack.last().expect("at least one layer").h
    }
}

struct AdvanceCache {
    feat: Option<ValFeat>,
    cache: StackCache,
}

/// Per-slot argument distribution. Each component is a probability vector;
/// a predictor without support has zero mixture weight.
#[derive(Clone, Debug, PartialEq)]
pub struct ArgDistribution {
    pub mixture: [f64; N_PREDICTORS],
    pub softmax: Vec<f64>,
    pub copy_input: Vec<f64>,
    pub copy_output: Vec<f64>,
}

/// Distribution over one instruction, conditioned along a given
/// (operation, destination, argument) path.
#[derive(Clone, Debug, PartialEq)]
pub struct InstructionDistribution {
    pub op: Vec<f64>,
    /// Probability of writing to the output.
    pub output: f64,
    pub args: Vec<ArgDistribution>,
}

/// What an argument can be copied from.
#[derive(Clone, Copy, Debug)]
pub struct ArgContext<'a> {
    pub x: &'a SourceSeq,
    /// Values of earlier instructions, indexed like `CopyOutput`.
    pub values: &'a [Value],
    pub vocab: &'a Vocab,
}

impl ArgContext<'_> {
    pub fn value_of(&self, src: &ArgSource) -> Result<Value, ModelError> {
        match src {
            ArgSource::Vocab(s) => Ok(Value::str(s.clone())),
            ArgSource::CopyInput(k) => self
                .x
                .surface(*k)
                .map(Value::str)
                .ok_or_else(|| ModelError::Invalid(format!("x[{k}] out of range"))),
            ArgSource::CopyOutput(j) => {
                self.values.get(*j).cloned().ok_or_else(|| ModelError::Invalid(format!("z[{j}] out of range")))
            }
        }
    }
}

/// Posterior weight of every predictor path that yields the argument.
#[derive(Clone, Debug, Default)]
struct ArgPosterior {
    soft: Option<(usize, f64)>,
    cin: Vec<(usize, f64)>,
    cout: Vec<(usize, f64)>,
}

/// Log-probability of `value` under `dist`, summed over every predictor and
/// position that produces it. With no such path the value is scored as
/// `<UNK>` from the softmax.
pub fn arg_logprob(dist: &ArgDistribution, value: &Value, ctx: &ArgContext<'_>) -> f64 {
    arg_logprob_posterior(dist, value, ctx).0
}

fn arg_logprob_posterior(dist: &ArgDistribution, value: &Value, ctx: &ArgContext<'_>) -> (f64, ArgPosterior) {
    enum Path {
        Soft(usize),
        In(usize),
        Out(usize),
    }
    let mut paths: Vec<(Path, f64)> = Vec::new();
    if let Value::Str(s) = value {
        if dist.mixture[0] > 0.0 {
            if let Some(id) = ctx.vocab.get(s).filter(|&id| id != UNK_ID) {
                paths.push((Path::Soft(id), dist.mixture[0].ln() + dist.softmax[id].ln()));
            }
        }
        if dist.mixture[1] > 0.0 {
            for (k, p) in dist.copy_input.iter().enumerate() {
                if ctx.x.surface(k) == Some(s.as_str()) {
                    paths.push((Path::In(k), dist.mixture[1].ln() + p.ln()));
                }
            }
        }
    }
    if dist.mixture[2] > 0.0 {
        let key = value.key();
        for (t, p) in dist.copy_output.iter().enumerate() {
            if ctx.values[t].key() == key {
                paths.push((Path::Out(t), dist.mixture[2].ln() + p.ln()));
            }
        }
    }
    if paths.is_empty() {
        paths.push((Path::Soft(UNK_ID), dist.mixture[0].ln() + dist.softmax[UNK_ID].ln()));
    }
    let scores: Vec<f64> = paths.iter().map(|p| p.1).collect();
    let lp = logsumexp(&scores);
    let mut post = ArgPosterior::default();
    for (path, s) in paths {
        let g = (s - lp).exp();
        match path {
            Path::Soft(id) => post.soft = Some((id, g)),
            Path::In(k) => post.cin.push((k, g)),
            Path::Out(t) => post.cout.push((t, g)),
        }
    }
    (lp, post)
}

/// `log p(o) + log p(r | o) + Σ_j log p(a_j)` under a distribution built
/// along `instr`'s own path.
pub fn instruction_logprob(
    dist: &InstructionDistribution,
    instr: &Instruction,
    ctx: &ArgContext<'_>,
) -> Result<f64, ModelError> {
    if instr.args.len() != dist.args.len() {
        return Err(ModelError::Invalid(format!(
            "{} has {} arguments, distribution has {}",
            instr.op,
            instr.args.len(),
            dist.args.len()
        )));
    }
    let p_dest = match instr.dest {
        Dest::Output => dist.output,
        Dest::Memory => 1.0 - dist.output,
    };
    let mut lp = dist.op[instr.op.index()].ln() + p_dest.ln();
    for (src, d) in instr.args.iter().zip(&dist.args) {
        lp += arg_logprob(d, &ctx.value_of(src)?, ctx);
    }
    Ok(lp)
}

enum SlotInput {
    Dest(usize),
    Arg(ValFeat),
}

struct SlotCache {
    input: SlotInput,
    lstm: LstmCache,
    q: Vec<f64>,
    dist: ArgDistribution,
    cin_t: Vec<Vec<f64>>,
    cout_t: Vec<Vec<f64>>,
    post: ArgPosterior,
}

struct InstrCache {
    op: usize,
    op_probs: Vec<f64>,
    r_in: Vec<f64>,
    r: Vec<f64>,
    dest_logit: f64,
    output: bool,
    slots: Vec<SlotCache>,
    q_final: Vec<f64>,
    lp: f64,
}

struct Trace {
    adv: Vec<AdvanceCache>,
    hs: Vec<Vec<f64>>,
    instrs: Vec<InstrCache>,
    lp: f64,
}

/// Loss and bookkeeping from [`Model::marginal_loss`].
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub logprobs: Vec<f64>,
    /// Backward passes run, one per slice of each program.
    pub slice_passes: usize,
}

/// Instruction under construction during free decoding.
#[derive(Clone, Debug)]
pub struct PartialInstruction {
    pub op: OperationId,
    pub dest: Dest,
    pub args: Vec<Value>,
    pub logprob: f64,
    q: LstmState,
}

impl PartialInstruction {
    pub fn is_complete(&self) -> bool {
        self.args.len() == self.op.arity()
    }
}

fn affinity(a: &Affinity, keys: &[Vec<f64>], q: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let qp = a.wq.forward(q);
    let mut scores = Vec::with_capacity(keys.len());
    let mut ts = Vec::with_capacity(keys.len());
    for k in keys {
        let t: Vec<f64> = k.iter().zip(&qp).map(|(a, b)| (a + b).tanh()).collect();
        scores.push(dot(&a.v.data, &t));
        ts.push(t);
    }
    (scores, ts)
}

#[allow(clippy::too_many_arguments)]
fn affinity_backward(
    a: &Affinity,
    ga: &mut Affinity,
    q: &[f64],
    ts: &[Vec<f64>],
    ds: &[f64],
    dkeys: &mut [Vec<f64>],
    dq: &mut [f64],
) {
    let mut dqp = vec![0.0; q.len()];
    for ((t, &d), dk) in ts.iter().zip(ds).zip(dkeys.iter_mut()) {
        if d == 0.0 {
            continue;
        }
        axpy(d, t, &mut ga.v.data);
        for m in 0..t.len() {
            let da = d * a.v.data[m] * (1.0 - t[m] * t[m]);
            dk[m] += da;
            dqp[m] += da;
        }
    }
    a.wq.backward(q, &dqp, &mut ga.wq, dq);
}

fn exp_all(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(f64::exp).collect()
}

impl Model {
    fn hidden(&self) -> usize {
        self.config.hidden_size
    }

    fn val_feat(&self, v: &Value) -> ValFeat {
        match v {
            Value::Str(s) => ValFeat { id: self.vocab.id(s), flags: [1.0, 0.0, 0.0] },
            Value::Num(x) => ValFeat { id: self.vocab.id(&format_float(*x)), flags: [0.0, 1.0, slog(*x)] },
        }
    }

    fn embed(&self, f: &ValFeat) -> Vec<f64> {
        let mut e = self.params.val_emb.row(f.id).to_vec();
        for (k, &w) in f.flags.iter().enumerate() {
            if w != 0.0 {
                axpy(w, self.params.val_flags.row(k), &mut e);
            }
        }
        e
    }

    /// Runs the encoder over `x`. Out-of-vocabulary tokens read as `<UNK>`.
    pub fn encode(&self, x: &SourceSeq) -> EncoderState {
        let p = &self.params;
        let mut state = p.encoder.zero_state();
        let mut enc = EncoderState { u: Vec::new(), summary: Vec::new(), keys: Vec::new(), ids: Vec::new(), caches: Vec::new() };
        for tok in &x.tokens {
            let id = self.vocab.id(&tok.surface);
            let (s, c) = p.encoder.forward(p.tok_emb.row(id), &state);
            let top = s.last().expect("at least one layer").h.clone();
            enc.keys.push(p.copy_in.wk.matvec(&top));
            enc.u.push(top);
            enc.ids.push(id);
            enc.caches.push(c);
            state = s;
        }
        enc.summary = state;
        enc
    }

    fn decoder_start_cached(&self, enc: &EncoderState) -> (DecoderState, AdvanceCache) {
        let input = vec![0.0; self.config.embed_size + self.hidden()];
        let (stack, cache) = self.params.decoder.forward(&input, &enc.summary);
        (DecoderState { stack, history: Vec::new(), keys: Vec::new() }, AdvanceCache { feat: None, cache })
    }

    fn decoder_advance_cached(&self, mut dec: DecoderState, v: &Value, q_final: &[f64]) -> (DecoderState, AdvanceCache) {
        let h = dec.h().to_vec();
        dec.keys.push(self.params.copy_out.wk.matvec(&h));
        dec.history.push(h);
        let feat = self.val_feat(v);
        let mut input = self.embed(&feat);
        input.extend_from_slice(q_final);
        let (stack, cache) = self.params.decoder.forward(&input, &dec.stack);
        dec.stack = stack;
        (dec, AdvanceCache { feat: Some(feat), cache })
    }

    pub fn decoder_start(&self, enc: &EncoderState) -> DecoderState {
        self.decoder_start_cached(enc).0
    }

    /// Feeds the executed value and the final argument state of the last
    /// instruction into the decoder.
    pub fn decoder_advance(&self, dec: DecoderState, v: &Value, q_final: &[f64]) -> DecoderState {
        self.decoder_advance_cached(dec, v, q_final).0
    }

    fn slot_forward(&self, q: &[f64], enc: &EncoderState, dec: &DecoderState) -> (ArgDistribution, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let p = &self.params;
        let mask = [
            true,
            self.config.copy_input && !enc.u.is_empty(),
            self.config.copy_output && !dec.history.is_empty(),
        ];
        let mix = exp_all(log_softmax_masked(&p.pred_out.forward(q), &mask));
        let softmax = exp_all(log_softmax(&p.voc_out.forward(q)));
        let (copy_input, cin_t) = if mask[1] {
            let (s, t) = affinity(&p.copy_in, &enc.keys, q);
            (exp_all(log_softmax(&s)), t)
        } else {
            (Vec::new(), Vec::new())
        };
        let (copy_output, cout_t) = if mask[2] {
            let (s, t) = affinity(&p.copy_out, &dec.keys, q);
            (exp_all(log_softmax(&s)), t)
        } else {
            (Vec::new(), Vec::new())
        };
        (ArgDistribution { mixture: [mix[0], mix[1], mix[2]], softmax, copy_input, copy_output }, cin_t, cout_t)
    }

    fn instr_forward(
        &self,
        enc: &EncoderState,
        dec: &DecoderState,
        ctx: &ArgContext<'_>,
        op: OperationId,
        dest: Dest,
        args: &[Value],
    ) -> InstrCache {
        let p = &self.params;
        let h = dec.h();
        let op_lsm = log_softmax(&p.op_out.forward(h));
        let oi = op.index();
        let mut lp = op_lsm[oi];
        let mut r_in = h.to_vec();
        r_in.extend_from_slice(p.op_emb.row(oi));
        let r: Vec<f64> = p.r_state.forward(&r_in).into_iter().map(f64::tanh).collect();
        let dest_logit = p.dest_out.forward(&r)[0];
        let output = dest == Dest::Output;
        lp += if output { log_sigmoid(dest_logit) } else { log_sigmoid(-dest_logit) };

        let mut state = LstmState { h: r.clone(), c: vec![0.0; self.hidden()] };
        let mut input = SlotInput::Dest(dest_index(dest));
        let mut slots = Vec::with_capacity(args.len());
        for a in args {
            let x_in = match &input {
                SlotInput::Dest(d) => p.dest_emb.row(*d).to_vec(),
                SlotInput::Arg(f) => self.embed(f),
            };
            let (s, lstm) = p.q_cell.forward(&x_in, &state);
            let (dist, cin_t, cout_t) = self.slot_forward(&s.h, enc, dec);
            let (alp, post) = arg_logprob_posterior(&dist, a, ctx);
            lp += alp;
            slots.push(SlotCache { input, lstm, q: s.h.clone(), dist, cin_t, cout_t, post });
            input = SlotInput::Arg(self.val_feat(a));
            state = s;
        }
        let q_final = slots.last().map(|s| s.q.clone()).unwrap_or(r.clone());
        InstrCache { op: oi, op_probs: exp_all(op_lsm), r_in, r, dest_logit, output, slots, q_final, lp }
    }

    /// Distribution for the next instruction, built along `instr`'s path.
    pub fn step_distribution(
        &self,
        enc: &EncoderState,
        dec: &DecoderState,
        ctx: &ArgContext<'_>,
        instr: &Instruction,
    ) -> Result<InstructionDistribution, ModelError> {
        let args = instr.args.iter().map(|a| ctx.value_of(a)).collect::<Result<Vec<_>, _>>()?;
        let c = self.instr_forward(enc, dec, ctx, instr.op, instr.dest, &args);
        Ok(InstructionDistribution {
            op: c.op_probs,
            output: sigmoid(c.dest_logit),
            args: c.slots.into_iter().map(|s| s.dist).collect(),
        })
    }

    /// Log-probabilities of the 22 operations.
    pub fn op_logprobs(&self, dec: &DecoderState) -> Vec<f64> {
        log_softmax(&self.params.op_out.forward(dec.h()))
    }

    /// Starts an instruction with a chosen operation and destination.
    pub fn begin_instruction(&self, dec: &DecoderState, op: OperationId, dest: Dest, op_logprob: f64) -> PartialInstruction {
        let p = &self.params;
        let mut r_in = dec.h().to_vec();
        r_in.extend_from_slice(p.op_emb.row(op.index()));
        let r: Vec<f64> = p.r_state.forward(&r_in).into_iter().map(f64::tanh).collect();
        let l = p.dest_out.forward(&r)[0];
        let dest_lp = if dest == Dest::Output { log_sigmoid(l) } else { log_sigmoid(-l) };
        let init = LstmState { h: r, c: vec![0.0; self.hidden()] };
        let (q, _) = p.q_cell.forward(p.dest_emb.row(dest_index(dest)), &init);
        PartialInstruction { op, dest, args: Vec::new(), logprob: op_logprob + dest_lp, q }
    }

    /// Distribution for the next argument of `part`.
    pub fn arg_distribution(&self, enc: &EncoderState, dec: &DecoderState, part: &PartialInstruction) -> ArgDistribution {
        self.slot_forward(&part.q.h, enc, dec).0
    }

    pub fn push_arg(&self, part: &PartialInstruction, value: Value, logprob: f64) -> PartialInstruction {
        let mut next = part.clone();
        next.logprob += logprob;
        if next.args.len() + 1 < part.op.arity() {
            let (q, _) = self.params.q_cell.forward(&self.embed(&self.val_feat(&value)), &part.q);
            next.q = q;
        }
        next.args.push(value);
        next
    }

    /// State passed to the next decoder step once `part` is complete.
    pub fn final_arg_state<'p>(&self, part: &'p PartialInstruction) -> &'p [f64] {
        &part.q.h
    }

    fn trace(&self, enc: &EncoderState, x: &SourceSeq, program: &Program, values: &[Value]) -> Result<Trace, ModelError> {
        let n = program.instrs.len();
        let mut tr = Trace { adv: Vec::with_capacity(n), hs: Vec::with_capacity(n), instrs: Vec::with_capacity(n), lp: 0.0 };
        let mut dec: Option<DecoderState> = None;
        for (i, ins) in program.instrs.iter().enumerate() {
            let (d, adv) = match dec.take() {
                None => self.decoder_start_cached(enc),
                Some(prev) => self.decoder_advance_cached(prev, &values[i - 1], &tr.instrs[i - 1].q_final),
            };
            let ctx = ArgContext { x, values: &values[..i], vocab: &self.vocab };
            let args = ins.args.iter().map(|a| ctx.value_of(a)).collect::<Result<Vec<_>, _>>()?;
            let c = self.instr_forward(enc, &d, &ctx, ins.op, ins.dest, &args);
            tr.lp += c.lp;
            tr.hs.push(d.h().to_vec());
            tr.adv.push(adv);
            tr.instrs.push(c);
            dec = Some(d);
        }
        Ok(tr)
    }

    /// `log p(z | x)`: the sum of instruction log-probabilities along `z`.
    pub fn program_logprob(&self, program: &Program, x: &SourceSeq, options: &AnswerOptions) -> Result<f64, ModelError> {
        let (_, state) = execute_program(program, x, options)?;
        let enc = self.encode(x);
        Ok(self.trace(&enc, x, program, &state.values)?.lp)
    }

    /// Per-instruction log-probabilities along `z`.
    pub fn instruction_logprobs(&self, program: &Program, x: &SourceSeq, options: &AnswerOptions) -> Result<Vec<f64>, ModelError> {
        let (_, state) = execute_program(program, x, options)?;
        let enc = self.encode(x);
        Ok(self.trace(&enc, x, program, &state.values)?.instrs.iter().map(|c| c.lp).collect())
    }

    fn slot_backward(
        &self,
        slot: &SlotCache,
        s: f64,
        g: &mut Parameters,
        dkeys_in: &mut [Vec<f64>],
        dkeys_out: &mut [Vec<f64>],
    ) -> Vec<f64> {
        let p = &self.params;
        let q = &slot.q;
        let d = &slot.dist;
        let mut dq = vec![0.0; q.len()];
        let post = &slot.post;
        let g_soft = post.soft.map_or(0.0, |(_, w)| w);
        let g_in: f64 = post.cin.iter().map(|c| c.1).sum();
        let g_out: f64 = post.cout.iter().map(|c| c.1).sum();
        let gam = [g_soft, g_in, g_out];
        let dpred: Vec<f64> =
            (0..N_PREDICTORS).map(|k| if d.mixture[k] > 0.0 { s * (gam[k] - d.mixture[k]) } else { 0.0 }).collect();
        p.pred_out.backward(q, &dpred, &mut g.pred_out, &mut dq);
        if let Some((id, w)) = post.soft {
            let mut dv: Vec<f64> = d.softmax.iter().map(|pv| -s * w * pv).collect();
            dv[id] += s * w;
            p.voc_out.backward(q, &dv, &mut g.voc_out, &mut dq);
        }
        if g_in > 0.0 {
            let mut ds: Vec<f64> = d.copy_input.iter().map(|pv| -s * g_in * pv).collect();
            for &(k, w) in &post.cin {
                ds[k] += s * w;
            }
            affinity_backward(&p.copy_in, &mut g.copy_in, q, &slot.cin_t, &ds, dkeys_in, &mut dq);
        }
        if g_out > 0.0 {
            let mut ds: Vec<f64> = d.copy_output.iter().map(|pv| -s * g_out * pv).collect();
            for &(t, w) in &post.cout {
                ds[t] += s * w;
            }
            affinity_backward(&p.copy_out, &mut g.copy_out, q, &slot.cout_t, &ds, dkeys_out, &mut dq);
        }
        dq
    }

    /// Backward through one instruction given `s = dLoss/dlogp`. Adds the
    /// gradient on `h_i` into `dh` and returns the gradient on the
    /// previous-step input.
    #[allow(clippy::too_many_arguments)]
    fn instr_backward(
        &self,
        h: &[f64],
        c: &InstrCache,
        s: f64,
        dq_final: &[f64],
        g: &mut Parameters,
        dh: &mut [f64],
        dkeys_in: &mut [Vec<f64>],
        dkeys_out: &mut [Vec<f64>],
    ) {
        let p = &self.params;
        let hidden = self.hidden();
        let mut next = LstmState { h: dq_final.to_vec(), c: vec![0.0; hidden] };
        for slot in c.slots.iter().rev() {
            let mut dqh = self.slot_backward(slot, s, g, dkeys_in, dkeys_out);
            add_into(&next.h, &mut dqh);
            let (dx, prev) = p.q_cell.backward(&slot.lstm, &dqh, &next.c, &mut g.q_cell);
            match &slot.input {
                SlotInput::Dest(d) => add_into(&dx, g.dest_emb.row_mut(*d)),
                SlotInput::Arg(f) => embed_back(g, f, &dx),
            }
            next = prev;
        }
        let mut dr = if c.slots.is_empty() { dq_final.to_vec() } else { next.h };
        let sig = sigmoid(c.dest_logit);
        let dl = s * if c.output { 1.0 - sig } else { -sig };
        p.dest_out.backward(&c.r, &[dl], &mut g.dest_out, &mut dr);
        let da: Vec<f64> = dr.iter().zip(&c.r).map(|(d, r)| d * (1.0 - r * r)).collect();
        let mut dr_in = vec![0.0; c.r_in.len()];
        p.r_state.backward(&c.r_in, &da, &mut g.r_state, &mut dr_in);
        add_into(&dr_in[..hidden], dh);
        add_into(&dr_in[hidden..], g.op_emb.row_mut(c.op));
        let mut dlog: Vec<f64> = c.op_probs.iter().map(|pv| -s * pv).collect();
        dlog[c.op] += s;
        p.op_out.backward(h, &dlog, &mut g.op_out, dh);
    }

    /// Staged backward over one program: states were built over the whole
    /// sequence, gradients are taken slice by slice and do not cross slice
    /// boundaries, through either the recurrence or the output pointer.
    fn backward_trace(
        &self,
        tr: &Trace,
        s: f64,
        k: usize,
        g: &mut Parameters,
        dkeys_in: &mut [Vec<f64>],
        dsummary: &mut StackState,
    ) -> usize {
        let p = &self.params;
        let hidden = self.hidden();
        let e = self.config.embed_size;
        let n = tr.instrs.len();
        let mut passes = 0;
        for start in (0..n).step_by(k) {
            passes += 1;
            let end = (start + k).min(n);
            let mut dkeys_out = vec![vec![0.0; hidden]; end];
            let mut dnext: StackState = p.decoder.zero_state();
            let mut dq_final = vec![0.0; hidden];
            for i in (start..end).rev() {
                let mut dh = vec![0.0; hidden];
                if dkeys_out[i].iter().any(|&v| v != 0.0) {
                    g.copy_out.wk.add_outer(&dkeys_out[i], &tr.hs[i]);
                    p.copy_out.wk.matvec_t_acc(&dkeys_out[i], &mut dh);
                }
                self.instr_backward(&tr.hs[i], &tr.instrs[i], s, &dq_final, g, &mut dh, dkeys_in, &mut dkeys_out[..i]);
                let (dinput, dprev) = p.decoder.backward(&tr.adv[i].cache, &dh, &dnext, &mut g.decoder);
                match &tr.adv[i].feat {
                    Some(f) => {
                        embed_back(g, f, &dinput[..e]);
                        dq_final = dinput[e..].to_vec();
                        dnext = dprev;
                    }
                    None => {
                        for (acc, d) in dsummary.iter_mut().zip(&dprev) {
                            add_into(&d.h, &mut acc.h);
                            add_into(&d.c, &mut acc.c);
                        }
                    }
                }
            }
            for t in 0..start {
                if dkeys_out[t].iter().any(|&v| v != 0.0) {
                    g.copy_out.wk.add_outer(&dkeys_out[t], &tr.hs[t]);
                }
            }
        }
        passes
    }

    fn encoder_backward(&self, enc: &EncoderState, dkeys_in: &[Vec<f64>], dsummary: StackState, g: &mut Parameters) {
        let p = &self.params;
        let mut dnext = dsummary;
        for t in (0..enc.u.len()).rev() {
            let mut du = vec![0.0; self.hidden()];
            if dkeys_in[t].iter().any(|&v| v != 0.0) {
                g.copy_in.wk.add_outer(&dkeys_in[t], &enc.u[t]);
                p.copy_in.wk.matvec_t_acc(&dkeys_in[t], &mut du);
            }
            let (dx, dprev) = p.encoder.backward(&enc.caches[t], &du, &dnext, &mut g.encoder);
            add_into(&dx, g.tok_emb.row_mut(enc.ids[t]));
            dnext = dprev;
        }
    }

    /// `-log Σ_z p(z | x)` over `programs`, with gradients added into `grads`
    /// when given. Back-propagation is staged in slices of `config.slice_k`
    /// instructions.
    pub fn marginal_loss(
        &self,
        x: &SourceSeq,
        options: &AnswerOptions,
        programs: &[Program],
        grads: Option<&mut Parameters>,
    ) -> Result<LossOutput, ModelError> {
        self.marginal_loss_staged(x, options, programs, grads, self.config.slice_k)
    }

    pub fn marginal_loss_staged(
        &self,
        x: &SourceSeq,
        options: &AnswerOptions,
        programs: &[Program],
        grads: Option<&mut Parameters>,
        k: usize,
    ) -> Result<LossOutput, ModelError> {
        if programs.is_empty() {
            return Err(ModelError::EmptyProgramSet);
        }
        if k == 0 {
            return Err(ModelError::Invalid("slice length must be at least 1".into()));
        }
        let enc = self.encode(x);
        let mut traces = Vec::with_capacity(programs.len());
        for z in programs {
            let (_, state) = execute_program(z, x, options)?;
            traces.push(self.trace(&enc, x, z, &state.values)?);
        }
        let logprobs: Vec<f64> = traces.iter().map(|t| t.lp).collect();
        let total = logsumexp(&logprobs);
        let mut out = LossOutput { loss: -total, logprobs, slice_passes: 0 };
        if let Some(g) = grads {
            let mut dkeys_in = vec![vec![0.0; self.hidden()]; enc.u.len()];
            let mut dsummary = self.params.encoder.zero_state();
            for tr in &traces {
                let w = (tr.lp - total).exp();
                out.slice_passes += self.backward_trace(tr, -w, k, g, &mut dkeys_in, &mut dsummary);
            }
            self.encoder_backward(&enc, &dkeys_in, dsummary, g);
        }
        Ok(out)
    }
}

/// Scores induction chains with the model, for force decoding.
pub struct ModelScorer<'m> {
    model: &'m Model,
    enc: EncoderState,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m Model, x: &SourceSeq) -> Self {
        ModelScorer { model, enc: model.encode(x) }
    }
}

impl Scorer for ModelScorer<'_> {
    type State = DecoderState;

    fn start(&self, _: &SourceSeq) -> DecoderState {
        self.model.decoder_start(&self.enc)
    }

    fn score_chain(
        &self,
        state: &DecoderState,
        exec: &ExecutionState<'_>,
        chain: &[Instruction],
        values: &[Value],
    ) -> (f64, DecoderState) {
        let mut dec = state.clone();
        let mut all = exec.values.clone();
        let mut lp = 0.0;
        for (ins, v) in chain.iter().zip(values) {
            let ctx = ArgContext { x: exec.x, values: &all, vocab: &self.model.vocab };
            let args: Vec<Value> = ins.args.iter().map(|a| ctx.value_of(a).expect("chain executed")).collect();
            let c = self.model.instr_forward(&self.enc, &dec, &ctx, ins.op, ins.dest, &args);
            lp += c.lp;
            dec = self.model.decoder_advance(dec, v, &c.q_final);
            all.push(v.clone());
        }
        (lp, dec)
    }
}
