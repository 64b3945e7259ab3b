//! Fully-connected token graphs over a batch with per-sample node offsets.

use crate::error::{contract, Result};

/// Directed edge list over the nodes of a whole batch. Sample `i` owns
/// node ids `offsets[i] .. offsets[i] + lengths[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeIndex {
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    pub node_count: usize,
    pub offsets: Vec<usize>,
}

impl EdgeIndex {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sources.iter().copied().zip(self.targets.iter().copied())
    }
}

/// Complete graph with self-loops inside each sample and no edge across
/// samples. Edges are enumerated sample by sample, source-major.
pub fn build_fully_connected(lengths: &[usize]) -> Result<EdgeIndex> {
    if let Some(i) = lengths.iter().position(|&n| n == 0) {
        return Err(contract(format!("sample {i} has no tokens")));
    }
    let total_edges: usize = lengths.iter().map(|n| n * n).sum();
    let mut sources = Vec::with_capacity(total_edges);
    let mut targets = Vec::with_capacity(total_edges);
    let mut offsets = Vec::with_capacity(lengths.len());
    let mut offset = 0;
    for &n in lengths {
        offsets.push(offset);
        for s in offset..offset + n {
            for t in offset..offset + n {
                sources.push(s);
                targets.push(t);
            }
        }
        offset += n;
    }
    Ok(EdgeIndex {
        sources,
        targets,
        node_count: offset,
        offsets,
    })
}
