use serde::Serialize;

use crate::crypto::Digest;
use crate::store::ObjectStore;

use super::build::{canonical_tuples, Builder, Emitted, NodeSink};
use super::node::paper_bits;
use super::{fetch_node, NodeBody, TrieError, TrieParams, TrieVersion};

/// Structural measurements of one trie version. Path lengths count nodes,
/// root and leaf included, and are taken over every stored key.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measurements {
    pub keys: u64,
    pub nodes_count: u64,
    pub path_min: u64,
    pub path_max: u64,
    pub path_avg: f64,
    pub total_size_bytes: u64,
    pub total_size_paper_bits: u64,
    pub avg_path_size_bytes: f64,
}

#[derive(Default)]
struct Accumulator {
    keys: u64,
    nodes: u64,
    path_min: u64,
    path_max: u64,
    path_sum: u128,
    path_bytes_sum: u128,
    total_bytes: u64,
    paper_bits: u64,
}

impl Accumulator {
    fn node(&mut self, bytes: u64, paper_bits: u64) {
        self.nodes += 1;
        self.total_bytes += bytes;
        self.paper_bits += paper_bits;
    }

    fn leaf(&mut self, tuples: usize, depth: usize, path_bytes: u64) {
        let len = depth as u64 + 1;
        if self.keys == 0 {
            self.path_min = len;
        }
        self.path_min = self.path_min.min(len);
        self.path_max = self.path_max.max(len);
        self.keys += tuples as u64;
        self.path_sum += u128::from(len) * tuples as u128;
        self.path_bytes_sum += u128::from(path_bytes) * tuples as u128;
    }

    fn finish(self) -> Measurements {
        let keys = self.keys.max(1) as f64;
        Measurements {
            keys: self.keys,
            nodes_count: self.nodes,
            path_min: self.path_min,
            path_max: self.path_max,
            path_avg: self.path_sum as f64 / keys,
            total_size_bytes: self.total_bytes,
            total_size_paper_bits: self.paper_bits,
            avg_path_size_bytes: self.path_bytes_sum as f64 / keys,
        }
    }
}

impl NodeSink for Accumulator {
    fn emit(&mut self, _digest: &Digest, node: &Emitted<'_>) -> Result<(), TrieError> {
        let len = node.bytes.len() as u64;
        self.node(len, node.paper_bits);
        if node.tuples > 0 {
            self.leaf(node.tuples, node.depth, node.bytes_above + len);
        }
        Ok(())
    }
}

/// Measures a stored version by walking it from the root.
pub fn stats(store: &dyn ObjectStore, version: &TrieVersion) -> Result<Measurements, TrieError> {
    let params = &version.params;
    let mut acc = Accumulator::default();
    let mut stack = vec![(version.root, 0usize, 0u64)];
    while let Some((digest, depth, above)) = stack.pop() {
        let (node, len) = fetch_node(store, params, &digest)?;
        let len = len as u64;
        acc.node(len, paper_bits(&node, params));
        match node.body {
            NodeBody::Leaf { tuples } => acc.leaf(tuples.len(), depth, above + len),
            NodeBody::Internal { children, .. } => {
                stack.extend(children.into_iter().map(|c| (c, depth + 1, above + len)));
            }
        }
    }
    Ok(acc.finish())
}

/// Measures the first version that `build` would produce over `assoc`
/// without storing any node. Used for large benchmark runs.
pub fn measure(
    params: &TrieParams,
    assoc: impl IntoIterator<Item = (Digest, Digest)>,
) -> Result<Measurements, TrieError> {
    params.validate()?;
    let tuples = canonical_tuples(params, assoc)?;
    if tuples.is_empty() {
        return Err(TrieError::Empty);
    }
    let mut builder = Builder::new(params, Accumulator::default());
    builder.subtree(&tuples, 0, Some(&params.alg.zero()), 0)?;
    Ok(builder.sink.finish())
}
