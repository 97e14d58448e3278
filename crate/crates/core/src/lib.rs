pub mod corpus;
pub mod decode;
pub mod dsl;
pub mod eval;
pub mod induction;
pub mod model;
pub mod synth;

#[cfg(test)]
extern crate self as aqua_core;

#[cfg(test)]
#[path = "../tests/support/oracle.rs"]
#[allow(dead_code)]
mod test_oracle;
