//! Value-level search for arithmetic expressions over the numeric pool.
//!
//! Everything here works on distinct leaf values only; turning an
//! expression into instructions with concrete sources happens in
//! `candidates`.

use super::MATCH_TOL;
use crate::corpus::NumericForm;
use crate::dsl::{apply_operation, float_to_fraction, float_to_thousands, format_float, AnswerOptions, OperationId, Value};
use std::collections::HashSet;
use std::sync::OnceLock;

/// Arithmetic expression over leaf value indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expr {
    Leaf(usize),
    Un(OperationId, Box<Expr>),
    Bin(OperationId, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn n_arith(&self) -> usize {
        match self {
            Expr::Leaf(_) => 0,
            Expr::Un(_, a) => 1 + a.n_arith(),
            Expr::Bin(_, a, b) => 1 + a.n_arith() + b.n_arith(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            Expr::Leaf(_) => 1,
            Expr::Un(_, a) => a.n_leaves(),
            Expr::Bin(_, a, b) => a.n_leaves() + b.n_leaves(),
        }
    }
}

/// A number in the rationale that a computed value should explain.
#[derive(Clone, Debug)]
pub struct NumTarget {
    pub surface: String,
    pub form: NumericForm,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExprMatch {
    pub expr: Expr,
    pub value: f64,
    /// The matching formatter reproduces the surface exactly.
    pub exact: bool,
}

fn empty_options() -> &'static AnswerOptions {
    static OPTS: OnceLock<AnswerOptions> = OnceLock::new();
    OPTS.get_or_init(|| AnswerOptions::new(&Default::default()))
}

pub fn unary_arith() -> impl Iterator<Item = OperationId> {
    OperationId::ALL.into_iter().filter(|o| o.is_arithmetic() && o.arity() == 1)
}

pub fn binary_arith() -> impl Iterator<Item = OperationId> {
    OperationId::ALL.into_iter().filter(|o| o.is_arithmetic() && o.arity() == 2)
}

pub fn eval(op: OperationId, args: &[f64]) -> Option<f64> {
    let vals: Vec<Value> = args.iter().map(|&a| Value::Num(a)).collect();
    apply_operation(op, &vals, empty_options()).ok().and_then(|v| v.as_num())
}

pub fn close(r: f64, t: f64) -> bool {
    (r - t).abs() <= (MATCH_TOL * r.abs().max(t.abs())).max(1e-9)
}

/// Renders `r` in the target's surface form.
pub fn render(form: NumericForm, r: f64) -> Option<String> {
    match form {
        NumericForm::Plain => Some(format_float(r)),
        NumericForm::Fraction => float_to_fraction(r),
        NumericForm::Grouped => float_to_thousands(r),
    }
}

impl NumTarget {
    /// `Some(true)` for an exact surface match, `Some(false)` for a match
    /// within tolerance only.
    pub fn classify(&self, r: f64) -> Option<bool> {
        if !close(r, self.value) {
            return None;
        }
        Some(render(self.form, r).as_deref() == Some(self.surface.as_str()))
    }
}

/// Every single-operation expression over `leaves` that matches `target`.
pub fn level_one(leaves: &[f64], target: &NumTarget) -> Vec<ExprMatch> {
    let mut out = Vec::new();
    for op in OperationId::ALL.into_iter().filter(|o| o.is_arithmetic()) {
        if op.arity() == 1 {
            for (i, &a) in leaves.iter().enumerate() {
                if let Some(r) = eval(op, &[a]) {
                    if let Some(exact) = target.classify(r) {
                        out.push(ExprMatch { expr: Expr::Un(op, Box::new(Expr::Leaf(i))), value: r, exact });
                    }
                }
            }
        } else {
            for (i, &a) in leaves.iter().enumerate() {
                for (j, &b) in leaves.iter().enumerate() {
                    if let Some(r) = eval(op, &[a, b]) {
                        if let Some(exact) = target.classify(r) {
                            out.push(ExprMatch {
                                expr: Expr::Bin(op, Box::new(Expr::Leaf(i)), Box::new(Expr::Leaf(j))),
                                value: r,
                                exact,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy)]
enum NodeExpr {
    Leaf(usize),
    Un(OperationId, u32),
    Bin(OperationId, u32, u32),
}

struct Node {
    value: f64,
    expr: NodeExpr,
}

/// Value-deduplicated expression nodes, grouped by operation count.
struct NodeSet {
    nodes: Vec<Node>,
    levels: Vec<Vec<u32>>,
    /// Per level: (value, node id) sorted by value.
    sorted: Vec<Vec<(f64, u32)>>,
    seen: HashSet<u64>,
}

/// Values beyond this magnitude are not kept as intermediate results.
const MAX_MAGNITUDE: f64 = 1e15;

impl NodeSet {
    fn new(leaves: &[f64]) -> Self {
        let mut s = NodeSet { nodes: Vec::new(), levels: vec![Vec::new()], sorted: Vec::new(), seen: HashSet::new() };
        for (i, &v) in leaves.iter().enumerate() {
            s.seen.insert((v + 0.0).to_bits());
            s.nodes.push(Node { value: v, expr: NodeExpr::Leaf(i) });
            s.levels[0].push(i as u32);
        }
        s.finish_level();
        s
    }

    fn finish_level(&mut self) {
        let level = self.levels.last().expect("level");
        let mut v: Vec<(f64, u32)> = level.iter().map(|&id| (self.nodes[id as usize].value, id)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        self.sorted.push(v);
    }

    fn value(&self, id: u32) -> f64 {
        self.nodes[id as usize].value
    }

    fn try_add(&mut self, value: f64, expr: NodeExpr, cap: usize) -> bool {
        let level = self.levels.last_mut().expect("level");
        if level.len() >= cap {
            return false;
        }
        if value.abs() > MAX_MAGNITUDE || !self.seen.insert((value + 0.0).to_bits()) {
            return true;
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { value, expr });
        level.push(id);
        true
    }

    /// Builds nodes with exactly `l` operations from lower levels. When the
    /// cap is hit, earlier ops and operand pairs along earlier diagonals win,
    /// so the cut does not favour the first leaf.
    fn grow(&mut self, cap: usize) {
        use OperationId::*;
        let l = self.levels.len();
        self.levels.push(Vec::new());
        'build: {
            for group in [&[Add, Subtract, Multiply, Divide][..], &[Power, Choose][..]] {
                for i in 0..l {
                    let left = self.levels[i].clone();
                    let right = self.levels[l - 1 - i].clone();
                    if left.is_empty() || right.is_empty() {
                        continue;
                    }
                    for d in 0..(left.len() + right.len()).saturating_sub(1) {
                        let lo = d.saturating_sub(right.len() - 1);
                        for ai in lo..=d.min(left.len() - 1) {
                            let (a, b) = (left[ai], right[d - ai]);
                            for &op in group {
                                if let Some(r) = eval(op, &[self.value(a), self.value(b)]) {
                                    if !self.try_add(r, NodeExpr::Bin(op, a, b), cap) {
                                        break 'build;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let prev = self.levels[l - 1].clone();
            for op in unary_arith() {
                for &a in &prev {
                    if let Some(r) = eval(op, &[self.value(a)]) {
                        if !self.try_add(r, NodeExpr::Un(op, a), cap) {
                            break 'build;
                        }
                    }
                }
            }
        }
        self.finish_level();
    }

    fn to_expr(&self, id: u32) -> Expr {
        match self.nodes[id as usize].expr {
            NodeExpr::Leaf(i) => Expr::Leaf(i),
            NodeExpr::Un(op, a) => Expr::Un(op, Box::new(self.to_expr(a))),
            NodeExpr::Bin(op, a, b) => Expr::Bin(op, Box::new(self.to_expr(a)), Box::new(self.to_expr(b))),
        }
    }

    /// Node ids in `level` whose value lies near `want`.
    fn near(&self, level: usize, want: f64) -> impl Iterator<Item = u32> + '_ {
        let v = &self.sorted[level];
        let w = (want.abs() * 1e-3).max(1e-9);
        let lo = v.partition_point(|(x, _)| *x < want - w);
        v[lo..].iter().take_while(move |(x, _)| *x <= want + w).map(|(_, id)| *id)
    }
}

/// Candidate `b` with `op(a, b) = t`.
fn solve_right(op: OperationId, a: f64, t: f64) -> Option<f64> {
    use OperationId::*;
    let b = match op {
        Add => t - a,
        Subtract => a - t,
        Multiply => t / a,
        Divide => a / t,
        Power => t.ln() / a.ln(),
        _ => return None,
    };
    b.is_finite().then_some(b)
}

fn is_small_int(v: f64) -> bool {
    v >= 0.0 && v <= 170.0 && (v - v.round()).abs() <= 1e-6
}

/// Expressions with exactly `level` operations (`level >= 2`) matching
/// `target`, built over value-deduplicated nodes of lower levels.
pub fn deep_level(leaves: &[f64], target: &NumTarget, level: usize, node_cap: usize, limit: usize) -> Vec<ExprMatch> {
    assert!(level >= 2);
    let mut set = NodeSet::new(leaves);
    for _ in 1..level {
        set.grow(node_cap);
    }
    let t = target.value;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |set: &NodeSet, expr: NodeExpr, r: f64, exact: bool, out: &mut Vec<ExprMatch>| {
        let e = match expr {
            NodeExpr::Un(op, a) => Expr::Un(op, Box::new(set.to_expr(a))),
            NodeExpr::Bin(op, a, b) => Expr::Bin(op, Box::new(set.to_expr(a)), Box::new(set.to_expr(b))),
            NodeExpr::Leaf(i) => Expr::Leaf(i),
        };
        if seen.insert(e.clone()) {
            out.push(ExprMatch { expr: e, value: r, exact });
        }
    };
    for op in unary_arith() {
        for &a in &set.levels[level - 1] {
            if let Some(r) = eval(op, &[set.value(a)]) {
                if let Some(exact) = target.classify(r) {
                    push(&set, NodeExpr::Un(op, a), r, exact, &mut out);
                }
            }
        }
    }
    for i in 0..level {
        let j = level - 1 - i;
        for op in binary_arith() {
            if op == OperationId::Choose {
                let lefts: Vec<u32> = set.levels[i].iter().copied().filter(|&a| is_small_int(set.value(a))).collect();
                let rights: Vec<u32> = set.levels[j].iter().copied().filter(|&b| is_small_int(set.value(b))).collect();
                for &a in &lefts {
                    for &b in &rights {
                        if let Some(r) = eval(op, &[set.value(a), set.value(b)]) {
                            if let Some(exact) = target.classify(r) {
                                push(&set, NodeExpr::Bin(op, a, b), r, exact, &mut out);
                            }
                        }
                    }
                }
                continue;
            }
            for &a in &set.levels[i] {
                let av = set.value(a);
                let Some(want) = solve_right(op, av, t) else { continue };
                let hits: Vec<u32> = set.near(j, want).collect();
                for b in hits {
                    if let Some(r) = eval(op, &[av, set.value(b)]) {
                        if let Some(exact) = target.classify(r) {
                            push(&set, NodeExpr::Bin(op, a, b), r, exact, &mut out);
                        }
                    }
                }
            }
        }
        if out.len() >= limit {
            break;
        }
    }
    out.truncate(limit);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::numeric_form;

    fn target(s: &str) -> NumTarget {
        let (form, value) = numeric_form(s).unwrap();
        NumTarget { surface: s.to_string(), form, value }
    }

    #[test]
    fn classify_exact_and_tolerant() {
        let t = target("12");
        assert_eq!(t.classify(12.0), Some(true));
        assert_eq!(t.classify(12.0004), Some(false));
        assert_eq!(t.classify(12.1), None);
        assert_eq!(target("1/221").classify(6.0 / 1326.0), Some(true));
        assert_eq!(target("1,326").classify(1326.0), Some(true));
    }

    #[test]
    fn level_one_finds_sum_both_orders() {
        let m = level_one(&[5.0, 7.0], &target("12"));
        let exprs: Vec<String> = m.iter().map(|m| format!("{:?}", m.expr)).collect();
        assert_eq!(m.len(), 2, "{exprs:?}");
        assert!(m.iter().all(|m| m.exact));
    }

    #[test]
    fn deep_finds_two_step() {
        // (6 * 7) + 8 = 50
        let m = deep_level(&[6.0, 7.0, 8.0], &target("50"), 2, 1000, 100);
        assert!(!m.is_empty());
        for x in &m {
            assert_eq!(x.expr.n_arith(), 2);
            assert!(close(x.value, 50.0));
        }
        let want = Expr::Bin(
            OperationId::Add,
            Box::new(Expr::Bin(OperationId::Multiply, Box::new(Expr::Leaf(0)), Box::new(Expr::Leaf(1)))),
            Box::new(Expr::Leaf(2)),
        );
        assert!(m.iter().any(|x| x.expr == want), "{m:?}");
    }

    #[test]
    fn deep_choose_ratio() {
        // 6 / choose(52, 2): 1/221
        let m = deep_level(&[2.0, 6.0, 52.0], &target("1/221"), 2, 1000, 100);
        assert!(m.iter().any(|x| x.exact && matches!(&x.expr, Expr::Bin(OperationId::Divide, _, _))));
    }
}
