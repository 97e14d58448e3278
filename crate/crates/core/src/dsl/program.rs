use super::{apply_operation, AnswerOptions, DslError, OperationId, Value};
use crate::corpus::SourceSeq;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Where an argument comes from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArgSource {
    /// A literal from the vocabulary.
    Vocab(String),
    /// The surface of source token `k` (0-based).
    CopyInput(usize),
    /// The value computed by instruction `j` (0-based), wherever it was written.
    CopyOutput(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dest {
    Output,
    Memory,
}

impl Dest {
    pub fn as_str(self) -> &'static str {
        match self {
            Dest::Output => "OUTPUT",
            Dest::Memory => "MEMORY",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub op: OperationId,
    pub args: Vec<ArgSource>,
    pub dest: Dest,
}

impl Instruction {
    /// Panics if `args.len()` does not match the operation's arity.
    pub fn new(op: OperationId, args: Vec<ArgSource>, dest: Dest) -> Self {
        assert_eq!(args.len(), op.arity(), "{op} takes {} arguments", op.arity());
        Instruction { op, args, dest }
    }

    /// `OUTPUT Id("s")`.
    pub fn emit(s: impl Into<String>) -> Self {
        Instruction::new(OperationId::Id, vec![ArgSource::Vocab(s.into())], Dest::Output)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Program {
    pub instrs: Vec<Instruction>,
}

impl Program {
    pub fn new(instrs: Vec<Instruction>) -> Self {
        Program { instrs }
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }
}

/// Interpreter state: the output so far, the memory buffer, and the value
/// and placement of every executed instruction.
#[derive(Clone, Debug)]
pub struct ExecutionState<'a> {
    pub x: &'a SourceSeq,
    pub options: &'a AnswerOptions,
    pub out: Vec<Value>,
    pub mem: Vec<Value>,
    pub values: Vec<Value>,
    pub placements: Vec<Dest>,
}

impl<'a> ExecutionState<'a> {
    pub fn new(x: &'a SourceSeq, options: &'a AnswerOptions) -> Self {
        ExecutionState {
            x,
            options,
            out: Vec::new(),
            mem: Vec::new(),
            values: Vec::new(),
            placements: Vec::new(),
        }
    }

    /// Evaluates an instruction without recording it.
    pub fn eval(&self, instr: &Instruction) -> Result<Value, DslError> {
        let args = instr
            .args
            .iter()
            .map(|a| resolve(a, self))
            .collect::<Result<Vec<_>, _>>()?;
        apply_operation(instr.op, &args, self.options)
    }

    /// Executes one instruction and appends its value to `out` or `mem`.
    pub fn step(&mut self, instr: &Instruction) -> Result<&Value, DslError> {
        let v = self.eval(instr)?;
        self.push(v, instr.dest);
        Ok(self.values.last().expect("just pushed"))
    }

    /// Records an already computed value as the next instruction's result.
    pub fn push(&mut self, v: Value, dest: Dest) {
        match dest {
            Dest::Output => self.out.push(v.clone()),
            Dest::Memory => self.mem.push(v.clone()),
        }
        self.values.push(v);
        self.placements.push(dest);
    }

    pub fn out_surfaces(&self) -> Vec<String> {
        self.out.iter().map(Value::surface).collect()
    }
}

/// Looks up an argument's value.
pub fn resolve(src: &ArgSource, state: &ExecutionState<'_>) -> Result<Value, DslError> {
    match src {
        ArgSource::Vocab(s) => Ok(Value::Str(s.clone())),
        ArgSource::CopyInput(k) => state
            .x
            .surface(*k)
            .map(Value::str)
            .ok_or_else(|| DslError::Resolve(format!("x[{k}]"))),
        ArgSource::CopyOutput(j) => state
            .values
            .get(*j)
            .cloned()
            .ok_or_else(|| DslError::Resolve(format!("z[{j}]"))),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("instruction {index}: {cause}")]
pub struct ExecError {
    pub index: usize,
    pub cause: DslError,
}

/// Runs `prog` to completion, returning the output surfaces and final state.
pub fn execute_program<'a>(
    prog: &Program,
    x: &'a SourceSeq,
    options: &'a AnswerOptions,
) -> Result<(Vec<String>, ExecutionState<'a>), ExecError> {
    let mut state = ExecutionState::new(x, options);
    for (index, instr) in prog.instrs.iter().enumerate() {
        state.step(instr).map_err(|cause| ExecError { index, cause })?;
    }
    Ok((state.out_surfaces(), state))
}

impl fmt::Display for ArgSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgSource::Vocab(s) => {
                f.write_str(&serde_json::to_string(s).expect("string serializes"))
            }
            ArgSource::CopyInput(k) => write!(f, "x[{k}]"),
            ArgSource::CopyOutput(j) => write!(f, "z[{j}]"),
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}(", self.dest.as_str(), self.op)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.instrs {
            writeln!(f, "{i}")?;
        }
        Ok(())
    }
}
