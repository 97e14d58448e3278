//! Latent program induction: find instruction sequences whose execution
//! reproduces a rationale token for token.

mod beam;
mod cache;
mod candidates;
mod pool;
mod search;

pub use beam::{
    coverage_report, induce_programs, induce_programs_filled, CoverageEntry, InducedProgram, InducedProgramSet, Scorer,
    UniformScorer,
};
pub use cache::{problem_key, InductionCache};
pub use candidates::{candidate_instructions, CandidateSet, Chain, SearchCache};
pub use pool::{AvailableValues, LeafSource, NumericLeaf};

use serde::{Deserialize, Serialize};

/// Relative tolerance for deciding that a computed value explains a number in the rationale.
pub const MATCH_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InductionConfig {
    /// One more than the number of hidden arithmetic instructions allowed per token.
    pub depth: usize,
    pub beam: usize,
    /// Candidates kept per token after deterministic ordering.
    pub candidate_cap: usize,
    /// Programs retained per example.
    pub max_programs: usize,
    /// Values kept per level in the deepening search.
    pub node_cap: usize,
}

impl Default for InductionConfig {
    fn default() -> Self {
        InductionConfig { depth: 5, beam: 200, candidate_cap: 200, max_programs: 8, node_cap: 5000 }
    }
}

impl InductionConfig {
    pub fn max_hidden(&self) -> usize {
        self.depth.saturating_sub(1)
    }
}
