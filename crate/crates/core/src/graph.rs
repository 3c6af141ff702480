//! Patch-graph edges: which patch of which source frame is observed in which
//! target frame.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// `(i, j, k)`: patch `k` of frame `i` observed in frame `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub patch: usize,
}

impl Edge {
    pub fn new(source: usize, target: usize, patch: usize) -> Self {
        Edge {
            source,
            target,
            patch,
        }
    }
}

/// Checks the edge-set invariants: `i != j`, indices below the given
/// bounds, no duplicates.
pub fn validate_edges(edges: &[Edge], frames: usize, patches: usize) -> Result<()> {
    let mut seen = HashSet::with_capacity(edges.len());
    for (n, e) in edges.iter().enumerate() {
        if e.source == e.target {
            return Err(Error::InvalidInput(format!("edge {n} is a self loop on frame {}", e.source)));
        }
        if e.source >= frames || e.target >= frames || e.patch >= patches {
            return Err(Error::InvalidInput(format!("edge {n} {e:?} is out of range")));
        }
        if !seen.insert(*e) {
            return Err(Error::InvalidInput(format!("edge {n} {e:?} is duplicated")));
        }
    }
    Ok(())
}
