use crate::corpus::numeric_form;
use crate::dsl::{ArgSource, ExecutionState, OperationId, Value};
use std::collections::{HashMap, HashSet};

/// How a numeric leaf is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum LeafSource {
    /// Already a `Num` at `z[j]`.
    Stored(usize),
    /// Needs a conversion instruction applied to a string source.
    Parse { op: OperationId, src: ArgSource, surface: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NumericLeaf {
    pub value: f64,
    pub source: LeafSource,
}

/// Everything a new instruction may read, as seen from one execution state.
#[derive(Clone, Debug, Default)]
pub struct AvailableValues {
    /// One entry per distinct (stored value) or (parsable surface).
    pub numeric: Vec<NumericLeaf>,
    /// Copyable surfaces with a representative source; input copies win.
    pub strings: Vec<(String, ArgSource)>,
    /// Strings `Check` may inspect: question tokens and prior string values.
    pub check_args: Vec<(String, ArgSource)>,
}

impl AvailableValues {
    /// Option-region tokens are copyable but excluded from the numeric pool
    /// and from `Check` arguments, so answers cannot be lifted from the options.
    pub fn from_state(state: &ExecutionState<'_>) -> Self {
        let mut numeric = Vec::new();
        let mut stored_seen = HashSet::new();
        for (j, v) in state.values.iter().enumerate() {
            if let Value::Num(x) = v {
                if stored_seen.insert((x + 0.0).to_bits()) {
                    numeric.push(NumericLeaf { value: *x, source: LeafSource::Stored(j) });
                }
            }
        }

        let mut strings = Vec::new();
        let mut string_index: HashMap<String, usize> = HashMap::new();
        let mut check_args = Vec::new();
        let mut check_seen = HashSet::new();
        let mut parsed_seen = HashSet::new();
        let inputs = state.x.tokens.iter().enumerate().map(|(k, t)| (t.surface.as_str(), ArgSource::CopyInput(k), state.x.is_question(k)));
        let outputs = state.values.iter().enumerate().filter_map(|(j, v)| v.as_str().map(|s| (s, ArgSource::CopyOutput(j), true)));
        for (surface, src, computable) in inputs.chain(outputs) {
            string_index.entry(surface.to_string()).or_insert_with(|| {
                strings.push((surface.to_string(), src.clone()));
                strings.len() - 1
            });
            if !computable {
                continue;
            }
            if check_seen.insert(surface.to_string()) {
                check_args.push((surface.to_string(), src.clone()));
            }
            if let Some((form, value)) = numeric_form(surface) {
                if parsed_seen.insert(surface.to_string()) {
                    numeric.push(NumericLeaf {
                        value,
                        source: LeafSource::Parse { op: OperationId::parser_for(form), src, surface: surface.to_string() },
                    });
                }
            }
        }
        AvailableValues { numeric, strings, check_args }
    }

    pub fn copy_source(&self, surface: &str) -> Option<&ArgSource> {
        self.strings.iter().find(|(s, _)| s == surface).map(|(_, src)| src)
    }

    /// Distinct leaf values in canonical (bit) order, and the leaf indices
    /// behind each value in pool order.
    pub fn unique_values(&self) -> (Vec<f64>, Vec<Vec<usize>>) {
        let mut by_bits: Vec<(u64, f64)> = self.numeric.iter().map(|l| ((l.value + 0.0).to_bits(), l.value + 0.0)).collect();
        by_bits.sort_by_key(|(b, _)| *b);
        by_bits.dedup_by_key(|(b, _)| *b);
        let pos: HashMap<u64, usize> = by_bits.iter().enumerate().map(|(i, (b, _))| (*b, i)).collect();
        let mut variants = vec![Vec::new(); by_bits.len()];
        for (i, l) in self.numeric.iter().enumerate() {
            variants[pos[&(l.value + 0.0).to_bits()]].push(i);
        }
        (by_bits.into_iter().map(|(_, v)| v).collect(), variants)
    }
}
