//! The instruction language: values, the 22 operations, the interpreter and
//! the line-oriented program text format.

mod format;
mod ops;
pub(crate) mod program;
mod text;

pub use format::{float_to_fraction, float_to_thousands, format_float, MAX_DENOMINATOR};
pub use ops::{apply_operation, arity, AnswerOptions, OperationId, LOG_BASE};
pub use program::{
    execute_program, resolve, ArgSource, Dest, ExecError, ExecutionState, Instruction, Program,
};
pub use text::ParseProgramError;

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error("{op}: expected a {expected} argument")]
    TypeMismatch { op: OperationId, expected: &'static str },
    #[error("{op}: {reason}")]
    Domain { op: OperationId, reason: String },
    #[error("{op}: cannot parse {text:?}")]
    Parse { op: OperationId, text: String },
    #[error("{op}: expected {expected} arguments, found {found}")]
    Arity { op: OperationId, expected: usize, found: usize },
    #[error("Check: no option contains {0:?}")]
    CheckNoMatch(String),
    #[error("Check: {1} options contain {0:?}")]
    CheckAmbiguous(String, usize),
    #[error("argument source {0} out of range")]
    Resolve(String),
    #[error("unknown operation {0:?}")]
    UnknownOperation(String),
    #[error("value {0} is not finite")]
    NonFinite(f64),
}

/// A runtime value: text or a finite float.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Str(String),
    Num(f64),
}

impl Value {
    pub fn num(v: f64) -> Result<Value, DslError> {
        if v.is_finite() {
            Ok(Value::Num(v))
        } else {
            Err(DslError::NonFinite(v))
        }
    }

    pub fn str(s: impl Into<String>) -> Value {
        Value::Str(s.into())
    }

    /// The token this value contributes when written to the output.
    pub fn surface(&self) -> String {
        match self {
            Value::Str(s) => s.clone(),
            Value::Num(v) => format_float(*v),
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            Value::Str(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            Value::Num(_) => None,
        }
    }

    /// Hashable identity: exact text, or exact float bits.
    pub fn key(&self) -> ValueKey {
        match self {
            Value::Str(s) => ValueKey::Str(s.clone()),
            Value::Num(v) => ValueKey::Num((*v + 0.0).to_bits()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValueKey {
    Str(String),
    Num(u64),
}
