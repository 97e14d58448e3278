use super::pool::{AvailableValues, LeafSource};
use super::search::{deep_level, level_one, render, Expr, ExprMatch, NumTarget};
use super::InductionConfig;
use crate::corpus::{numeric_form, Token, TokenKind, EOR};
use crate::dsl::{apply_operation, resolve, ArgSource, Dest, ExecutionState, Instruction, OperationId, Value, ValueKey};
use std::collections::{HashMap, HashSet};

/// Zero or more MEMORY instructions followed by one OUTPUT instruction.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Chain {
    pub instrs: Vec<Instruction>,
    /// Hidden arithmetic instructions in the chain.
    pub n_arith: usize,
    /// Emits a number without copying it from the question or earlier
    /// output and without computing it.
    pub fallback: bool,
}

impl Chain {
    fn single(instr: Instruction) -> Self {
        Chain { instrs: vec![instr], n_arith: 0, fallback: false }
    }

    pub fn emission(&self) -> &Instruction {
        self.instrs.last().expect("chains are non-empty")
    }
}

/// The chains that emit one target token from a given state.
#[derive(Clone, Debug, Default)]
pub struct CandidateSet {
    pub target: String,
    pub chains: Vec<Chain>,
    /// More chains existed than the cap allowed.
    pub capped: bool,
}

impl CandidateSet {
    /// Every chain is a fallback emission.
    pub fn is_fallback(&self) -> bool {
        !self.chains.is_empty() && self.chains.iter().all(|c| c.fallback)
    }
}

/// Memoises value-level searches, which depend only on the target surface
/// and the distinct leaf values, not on where the values live.
#[derive(Default)]
pub struct SearchCache {
    level1: HashMap<(String, Vec<u64>), Vec<ExprMatch>>,
    deep: HashMap<(String, Vec<u64>, usize), Vec<ExprMatch>>,
}

/// Evaluates a chain against `state` without mutating it. Returns the
/// chain's values and the resolved arguments of each instruction.
pub(crate) fn run_chain(
    state: &ExecutionState<'_>,
    instrs: &[Instruction],
) -> Option<(Vec<Value>, Vec<Vec<Value>>)> {
    let base = state.values.len();
    let mut values: Vec<Value> = Vec::with_capacity(instrs.len());
    let mut resolved = Vec::with_capacity(instrs.len());
    for ins in instrs {
        let mut args = Vec::with_capacity(ins.args.len());
        for a in &ins.args {
            let v = match a {
                ArgSource::CopyOutput(j) if *j >= base => values.get(j - base)?.clone(),
                _ => resolve(a, state).ok()?,
            };
            args.push(v);
        }
        values.push(apply_operation(ins.op, &args, state.options).ok()?);
        resolved.push(args);
    }
    Some((values, resolved))
}

fn provenance_rank(a: &ArgSource) -> u8 {
    match a {
        ArgSource::Vocab(_) => 0,
        ArgSource::CopyInput(_) => 1,
        ArgSource::CopyOutput(_) => 2,
    }
}

type DedupKey = (Vec<OperationId>, Vec<Vec<ValueKey>>, Vec<Dest>);

struct Builder<'p> {
    pool: &'p AvailableValues,
    base: usize,
    instrs: Vec<Instruction>,
    leaf_memo: HashMap<usize, usize>,
    node_memo: HashMap<(Expr, Vec<usize>), usize>,
}

impl<'p> Builder<'p> {
    fn new(pool: &'p AvailableValues, base: usize) -> Self {
        Builder { pool, base, instrs: Vec::new(), leaf_memo: HashMap::new(), node_memo: HashMap::new() }
    }

    fn push(&mut self, instr: Instruction) -> usize {
        self.instrs.push(instr);
        self.base + self.instrs.len() - 1
    }

    fn leaf(&mut self, variant: usize) -> usize {
        if let Some(&z) = self.leaf_memo.get(&variant) {
            return z;
        }
        let z = match &self.pool.numeric[variant].source {
            LeafSource::Stored(j) => *j,
            LeafSource::Parse { op, src, .. } => self.push(Instruction::new(*op, vec![src.clone()], Dest::Memory)),
        };
        self.leaf_memo.insert(variant, z);
        z
    }

    /// Post-order, left to right; `assign` gives a pool variant per leaf occurrence.
    fn expr(&mut self, e: &Expr, assign: &[usize]) -> usize {
        match e {
            Expr::Leaf(_) => self.leaf(assign[0]),
            Expr::Un(op, a) | Expr::Bin(op, a, _) => {
                let key = (e.clone(), assign.to_vec());
                if let Some(&z) = self.node_memo.get(&key) {
                    return z;
                }
                let na = a.n_leaves();
                let mut args = vec![ArgSource::CopyOutput(self.expr(a, &assign[..na]))];
                if let Expr::Bin(_, _, b) = e {
                    args.push(ArgSource::CopyOutput(self.expr(b, &assign[na..])));
                }
                let z = self.push(Instruction::new(*op, args, Dest::Memory));
                self.node_memo.insert(key, z);
                z
            }
        }
    }
}

fn leaf_indices(e: &Expr, out: &mut Vec<usize>) {
    match e {
        Expr::Leaf(i) => out.push(*i),
        Expr::Un(_, a) => leaf_indices(a, out),
        Expr::Bin(_, a, b) => {
            leaf_indices(a, out);
            leaf_indices(b, out);
        }
    }
}

/// Every assignment of pool variants to the leaf occurrences of `e`.
fn assignments(e: &Expr, variants: &[Vec<usize>], all_variants: bool) -> Vec<Vec<usize>> {
    let mut leaves = Vec::new();
    leaf_indices(e, &mut leaves);
    let mut out: Vec<Vec<usize>> = vec![Vec::new()];
    for u in leaves {
        let choices: &[usize] = if all_variants { &variants[u] } else { &variants[u][..1] };
        out = out
            .into_iter()
            .flat_map(|prefix| {
                choices.iter().map(move |&c| {
                    let mut p = prefix.clone();
                    p.push(c);
                    p
                })
            })
            .collect();
    }
    out
}

fn numeric_chain(pool: &AvailableValues, base: usize, m: &ExprMatch, assign: &[usize], target: &NumTarget, surface_src: ArgSource) -> Chain {
    let mut b = Builder::new(pool, base);
    let z = b.expr(&m.expr, assign);
    let last = if m.exact {
        Instruction::new(OperationId::formatter_for(target.form), vec![ArgSource::CopyOutput(z)], Dest::Output)
    } else {
        Instruction::new(OperationId::Id, vec![surface_src], Dest::Output)
    };
    b.instrs.push(last);
    Chain { instrs: b.instrs, n_arith: m.expr.n_arith(), fallback: false }
}

fn is_special(t: &Token) -> bool {
    t.kind == TokenKind::Special
}

fn answer_phase(state: &ExecutionState<'_>) -> bool {
    state.out.iter().any(|v| v.as_str() == Some(EOR))
}

/// Candidate chains for the next target token; see `candidate_instructions`.
pub fn candidate_instructions_cached(
    state: &ExecutionState<'_>,
    target: &Token,
    cfg: &InductionConfig,
    cache: &mut SearchCache,
) -> CandidateSet {
    let pool = AvailableValues::from_state(state);
    let base = state.values.len();
    let s = target.surface.as_str();
    let mut chains: Vec<Chain> = Vec::new();

    if answer_phase(state) && !is_special(target) {
        for (_, src) in &pool.check_args {
            chains.push(Chain::single(Instruction::new(OperationId::Check, vec![src.clone()], Dest::Output)));
        }
        for leaf in &pool.numeric {
            if let LeafSource::Stored(j) = leaf.source {
                for f in OperationId::ALL.into_iter().filter(|o| o.is_formatter()) {
                    chains.push(Chain {
                        instrs: vec![
                            Instruction::new(f, vec![ArgSource::CopyOutput(j)], Dest::Memory),
                            Instruction::new(OperationId::Check, vec![ArgSource::CopyOutput(base)], Dest::Output),
                        ],
                        n_arith: 0,
                        fallback: false,
                    });
                }
            }
        }
    } else if let (false, Some((form, value))) = (is_special(target), numeric_form(s)) {
        let t = NumTarget { surface: s.to_string(), form, value };
        // a copy from the question or earlier output explains the number;
        // one found only among the options does not
        let explaining_copy = (0..state.x.len())
            .find(|&k| state.x.is_question(k) && state.x.surface(k) == Some(s))
            .map(ArgSource::CopyInput)
            .or_else(|| state.values.iter().position(|v| v.as_str() == Some(s)).map(ArgSource::CopyOutput));
        let copy = explaining_copy.clone().or_else(|| pool.copy_source(s).cloned());
        if let Some(src) = &copy {
            let mut c = Chain::single(Instruction::new(OperationId::Id, vec![src.clone()], Dest::Output));
            c.fallback = explaining_copy.is_none();
            chains.push(c);
        }
        let mut explained = explaining_copy.is_some();
        let n_copies = chains.len();
        for (v, leaf) in pool.numeric.iter().enumerate() {
            if render(form, leaf.value).as_deref() == Some(s) {
                let m = ExprMatch { expr: Expr::Leaf(0), value: leaf.value, exact: true };
                chains.push(numeric_chain(&pool, base, &m, &[v], &t, ArgSource::Vocab(s.to_string())));
            }
        }
        let surface_src = copy.clone().unwrap_or_else(|| ArgSource::Vocab(s.to_string()));
        let (uniq, variants) = pool.unique_values();
        let bits: Vec<u64> = uniq.iter().map(|v| v.to_bits()).collect();
        if cfg.max_hidden() >= 1 && !uniq.is_empty() {
            let matches = cache
                .level1
                .entry((s.to_string(), bits.clone()))
                .or_insert_with(|| level_one(&uniq, &t));
            for m in matches.iter() {
                for a in assignments(&m.expr, &variants, true) {
                    chains.push(numeric_chain(&pool, base, m, &a, &t, surface_src.clone()));
                }
            }
        }
        explained |= chains.len() > n_copies;
        let mut level = 2;
        while !explained && level <= cfg.max_hidden() && !uniq.is_empty() {
            let matches = cache
                .deep
                .entry((s.to_string(), bits.clone(), level))
                .or_insert_with(|| deep_level(&uniq, &t, level, cfg.node_cap, cfg.candidate_cap));
            for m in matches.iter() {
                for a in assignments(&m.expr, &variants, false) {
                    chains.push(numeric_chain(&pool, base, m, &a, &t, surface_src.clone()));
                }
            }
            explained |= chains.len() > n_copies;
            level += 1;
        }
        if chains.is_empty() {
            let mut c = Chain::single(Instruction::emit(s));
            c.fallback = true;
            chains.push(c);
        }
    } else {
        chains.push(Chain::single(Instruction::emit(s)));
    }

    finalize(state, s, chains, cfg.candidate_cap)
}

/// Verifies, orders, deduplicates and caps raw chains. Explaining chains
/// come first, then fewer hidden operations, fewer instructions, op order and
/// argument provenance.
fn finalize(state: &ExecutionState<'_>, surface: &str, chains: Vec<Chain>, cap: usize) -> CandidateSet {
    let mut kept: Vec<(Chain, DedupKey)> = chains
        .into_iter()
        .filter_map(|c| {
            let (values, resolved) = run_chain(state, &c.instrs)?;
            let last_ok = values.last()?.as_str() == Some(surface);
            let dests_ok = c.instrs.iter().rev().skip(1).all(|i| i.dest == Dest::Memory)
                && c.emission().dest == Dest::Output;
            if !(last_ok && dests_ok) {
                return None;
            }
            let key = (
                c.instrs.iter().map(|i| i.op).collect(),
                resolved.iter().map(|args| args.iter().map(Value::key).collect()).collect(),
                c.instrs.iter().map(|i| i.dest).collect(),
            );
            Some((c, key))
        })
        .collect();
    kept.sort_by_cached_key(|(c, _)| {
        (
            c.fallback,
            c.n_arith,
            c.instrs.len(),
            c.instrs.iter().map(|i| i.op).collect::<Vec<_>>(),
            c.instrs.iter().flat_map(|i| i.args.iter().map(provenance_rank)).collect::<Vec<_>>(),
        )
    });
    let mut seen = HashSet::new();
    let mut out: Vec<Chain> = kept.into_iter().filter(|(_, k)| seen.insert(k.clone())).map(|(c, _)| c).collect();
    let capped = out.len() > cap;
    out.truncate(cap);
    CandidateSet { target: surface.to_string(), chains: out, capped }
}

/// Chains that, executed from `state`, emit exactly `target`.
///
/// Words and special tokens get a single `Id` emission; copies of an equal
/// token resolve to the same value and are folded into it. Numbers get
/// direct copies, conversions of pool values, and chains of up to
/// `depth - 1` hidden arithmetic instructions (searched level by level,
/// deeper levels only while nothing shallower was found). A number that is
/// neither computed nor copied from the question or earlier output is
/// flagged as a fallback and emitted by a copy from the options or from the
/// vocabulary. After `<EOR>`, only `Check`
/// emissions are proposed.
pub fn candidate_instructions(state: &ExecutionState<'_>, target: &Token, cfg: &InductionConfig) -> CandidateSet {
    candidate_instructions_cached(state, target, cfg, &mut SearchCache::default())
}
