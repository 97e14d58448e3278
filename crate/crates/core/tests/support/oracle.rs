// Exhaustive oracle for the candidate filter.
//
// Classifies operations by what they do to concrete values rather than by
// the op tables the search uses, then enumerates every chain with at most
// one hidden arithmetic instruction. Shared by the unit tests and the
// acceptance suite.

use aqua_core::corpus::{numeric_form, Letter, Problem, Token};
use aqua_core::dsl::{apply_operation, resolve, AnswerOptions, Dest, ExecutionState, Instruction, OperationId, Value};
use aqua_core::induction::{candidate_instructions, AvailableValues, InductionConfig};
use rand::Rng;

pub type Key = (Vec<OperationId>, Vec<Vec<Value>>);

fn apply1(op: OperationId, v: &Value, st: &ExecutionState<'_>) -> Option<Value> {
    apply_operation(op, std::slice::from_ref(v), st.options).ok()
}

pub fn oracle(st: &ExecutionState<'_>, target: &str, depth: usize) -> Vec<Key> {
    let (_, tval) = numeric_form(target).expect("numeric target");
    let mut strs: Vec<Value> = Vec::new();
    for k in 0..st.x.len() {
        if st.x.is_question(k) {
            strs.push(Value::str(st.x.surface(k).unwrap()));
        }
    }
    strs.extend(st.values.iter().filter(|v| v.as_str().is_some()).cloned());
    // arguments are identified by value, so equal strings are one source
    let mut uniq: Vec<Value> = Vec::new();
    for s in strs {
        if !uniq.contains(&s) {
            uniq.push(s);
        }
    }
    let strs = uniq;
    // leaves: (prefix ops and args, value)
    let mut leaves: Vec<(Vec<(OperationId, Vec<Value>)>, f64)> = Vec::new();
    for v in st.values.iter().filter_map(Value::as_num) {
        leaves.push((vec![], v));
    }
    for s in &strs {
        for op in OperationId::ALL.into_iter().filter(|o| o.arity() == 1 && *o != OperationId::Check) {
            if let Some(Value::Num(v)) = apply1(op, s, st) {
                leaves.push((vec![(op, vec![s.clone()])], v));
            }
        }
    }
    let mut out: Vec<Key> = Vec::new();
    let mut key = |steps: Vec<(OperationId, Vec<Value>)>| {
        let k: Key = (steps.iter().map(|s| s.0).collect(), steps.into_iter().map(|s| s.1).collect());
        if !out.contains(&k) {
            out.push(k);
        }
    };
    let emitters: Vec<OperationId> =
        OperationId::ALL.into_iter().filter(|o| o.arity() == 1 && *o != OperationId::Check).collect();
    let mut any = false;
    // direct emissions only exist when the surface is copyable
    let copyable = (0..st.x.len()).any(|k| st.x.surface(k) == Some(target))
        || st.values.iter().any(|v| v.as_str() == Some(target));
    if copyable {
        key(vec![(OperationId::Id, vec![Value::str(target)])]);
        any = true;
    }
    let emit_from = |prefix: &[(OperationId, Vec<Value>)],
                     v: f64,
                     hidden: bool,
                     key: &mut dyn FnMut(Vec<(OperationId, Vec<Value>)>)| {
        let mut hit = false;
        for &e in &emitters {
            if let Some(Value::Str(s)) = apply1(e, &Value::Num(v), st) {
                if s == target {
                    let mut steps = prefix.to_vec();
                    steps.push((e, vec![Value::Num(v)]));
                    key(steps);
                    hit = true;
                }
            }
        }
        if hidden && !hit && (v - tval).abs() <= (1e-4 * v.abs().max(tval.abs())).max(1e-9) {
            let mut steps = prefix.to_vec();
            steps.push((OperationId::Id, vec![Value::str(target)]));
            key(steps);
            hit = true;
        }
        hit
    };
    for (prefix, v) in &leaves {
        any |= emit_from(prefix, *v, false, &mut key);
    }
    if depth >= 2 {
        for op in OperationId::ALL {
            let tuples: Vec<Vec<usize>> = match op.arity() {
                1 => (0..leaves.len()).map(|i| vec![i]).collect(),
                _ => (0..leaves.len()).flat_map(|i| (0..leaves.len()).map(move |j| vec![i, j])).collect(),
            };
            for t in tuples {
                let args: Vec<Value> = t.iter().map(|&i| Value::Num(leaves[i].1)).collect();
                let Ok(Value::Num(r)) = apply_operation(op, &args, st.options) else { continue };
                if op == OperationId::Id {
                    continue;
                }
                let mut prefix = Vec::new();
                let mut used = Vec::new();
                for &i in &t {
                    if !used.contains(&i) {
                        prefix.extend(leaves[i].0.iter().cloned());
                        used.push(i);
                    }
                }
                prefix.push((op, args));
                any |= emit_from(&prefix, r, true, &mut key);
            }
        }
    }
    if !any {
        key(vec![(OperationId::Id, vec![Value::str(target)])]);
    }
    out
}

fn approx_eq(a: &Key, b: &Key) -> bool {
    a.0 == b.0
        && a.1.len() == b.1.len()
        && a.1.iter().zip(&b.1).all(|(x, y)| {
            x.len() == y.len()
                && x.iter().zip(y).all(|(p, q)| match (p, q) {
                    (Value::Num(p), Value::Num(q)) => (p - q).abs() <= 1e-6 * p.abs().max(q.abs()).max(1e-300),
                    _ => p == q,
                })
        })
}

/// Executes a chain on a copy of the state, returning each instruction's
/// resolved argument values.
fn resolved_args(st: &ExecutionState<'_>, instrs: &[Instruction]) -> Vec<Vec<Value>> {
    let mut st = st.clone();
    instrs
        .iter()
        .map(|ins| {
            let args = ins.args.iter().map(|a| resolve(a, &st).expect("chain argument resolves")).collect();
            st.step(ins).expect("chain executes");
            args
        })
        .collect()
}

pub fn system_keys(st: &ExecutionState<'_>, target: &str, depth: usize) -> Vec<Key> {
    let cfg = InductionConfig { depth, candidate_cap: 100_000, ..Default::default() };
    let c = candidate_instructions(st, &Token::classify(target), &cfg);
    c.chains.iter().map(|ch| (ch.instrs.iter().map(|i| i.op).collect(), resolved_args(st, &ch.instrs))).collect()
}

pub fn same_set(a: &[Key], b: &[Key]) -> bool {
    a.len() == b.len() && a.iter().all(|x| b.iter().any(|y| approx_eq(x, y)))
}

/// One oracle comparison: question numbers, memory values, an optional
/// earlier emitted number, and the numeric token to explain.
#[derive(Clone, Debug)]
pub struct Case {
    pub nums: Vec<u32>,
    pub stored: Vec<u32>,
    pub emitted: Option<u32>,
    pub target: String,
    pub depth: usize,
}

impl Case {
    pub fn random(rng: &mut impl Rng, max_num: u32) -> Case {
        let n = rng.gen_range(1..=4);
        let nums = (0..n).map(|_| rng.gen_range(1..=max_num)).collect();
        let stored = (0..rng.gen_range(0..=2)).map(|_| rng.gen_range(1..=max_num)).collect();
        let emitted = rng.gen_bool(0.3).then(|| rng.gen_range(1..=max_num));
        let target = match rng.gen_range(0..10) {
            0 => "0.5".to_string(),
            1 => "3/4".to_string(),
            2 => rng.gen_range(1..=12).to_string(),
            _ => rng.gen_range(1..=150).to_string(),
        };
        Case { nums, stored, emitted, target, depth: rng.gen_range(1..=2) }
    }

    /// `None` when the case's pool holds more than four distinct numbers;
    /// otherwise whether the candidate filter matched the oracle.
    pub fn check(&self) -> Option<Result<(), String>> {
        let q = self.nums.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" plus ");
        let opts = ["A) x", "B) y", "C) z", "D) w", "E) v"].map(String::from);
        let p = Problem::new(q, opts.clone(), "r", Letter::A).unwrap();
        let x = p.source();
        let ao = AnswerOptions::new(&opts);
        let mut st = ExecutionState::new(&x, &ao);
        for s in &self.stored {
            st.push(Value::Num(*s as f64), Dest::Memory);
        }
        if let Some(e) = self.emitted {
            st.push(Value::str(e.to_string()), Dest::Output);
        }
        if AvailableValues::from_state(&st).unique_values().0.len() > 4 {
            return None;
        }
        let o = oracle(&st, &self.target, self.depth);
        let s = system_keys(&st, &self.target, self.depth);
        Some(if same_set(&o, &s) {
            Ok(())
        } else {
            Err(format!("{self:?}\noracle {o:#?}\nsystem {s:#?}"))
        })
    }
}
