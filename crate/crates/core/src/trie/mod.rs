//! Partially persistent, authenticated r-ary bitwise trie.
//!
//! Keys are hashes of ledger ids and values are ledger digests. Each node is
//! referenced by the hash of its canonical serialization, so the root digest
//! authenticates the whole dictionary. Every root also embeds the previous
//! root digest, chaining versions together. New versions are written by
//! path copying; old versions stay readable from the same store.

mod build;
mod node;
mod stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{label_at, Digest, HashAlg, KeyExhausted};
use crate::store::{ObjectStore, StoreError};

pub use build::{build, update, Commit};
pub use node::{
    paper_bits, paper_bits_internal, paper_bits_leaf, Bitmap, Node, NodeBody, Tuple, TAG_INTERNAL, TAG_LEAF,
    TAG_ROOT_INTERNAL, TAG_ROOT_LEAF,
};
pub use stats::{measure, stats, Measurements};

#[derive(Debug, Error)]
pub enum TrieError {
    #[error("invalid trie parameters: {0}")]
    InvalidParams(String),
    #[error("empty association set")]
    Empty,
    #[error("duplicate key {0}")]
    DuplicateKey(Digest),
    #[error("digest length mismatch: expected {expected} bytes, got {got}")]
    DigestLength { expected: usize, got: usize },
    #[error("distinct keys share every extractable label ({0})")]
    KeyExhausted(#[from] KeyExhausted),
    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),
    #[error("node {0} missing from storage")]
    MissingNode(Digest),
    #[error("node {0} failed integrity check")]
    CorruptNode(Digest),
    #[error("malformed node: {0}")]
    Malformed(String),
    #[error("node violates canonical form: {0}")]
    Canonicalization(String),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for TrieError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(d) => TrieError::MissingNode(d),
            StoreError::Integrity(d) => TrieError::CorruptNode(d),
            other => TrieError::Store(other),
        }
    }
}

/// Arity `r`, leaf capacity `k` and hash algorithm of a trie lineage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrieParams {
    pub arity: u16,
    pub leaf_capacity: u16,
    pub alg: HashAlg,
}

impl TrieParams {
    pub fn new(arity: u16, leaf_capacity: u16, alg: HashAlg) -> Result<Self, TrieError> {
        if !arity.is_power_of_two() || !(2..=256).contains(&arity) {
            return Err(TrieError::InvalidParams(format!(
                "arity {arity} is not a power of two in 2..=256"
            )));
        }
        if !(1..=256).contains(&leaf_capacity) {
            return Err(TrieError::InvalidParams(format!(
                "leaf capacity {leaf_capacity} outside 1..=256"
            )));
        }
        Ok(TrieParams {
            arity,
            leaf_capacity,
            alg,
        })
    }

    pub fn validate(&self) -> Result<(), TrieError> {
        Self::new(self.arity, self.leaf_capacity, self.alg).map(|_| ())
    }

    pub fn label(&self, key: &Digest, depth: usize) -> Result<u8, TrieError> {
        Ok(label_at(key, depth, self.arity)?)
    }
}

/// One node on a search path and the edge label taken out of it
/// (`None` for the terminal leaf, or an internal node lacking the branch
/// is marked by a label whose child is absent).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathStep {
    pub node: Vec<u8>,
    pub label: Option<u8>,
}

/// A notarized trie state: parameters plus the root digest. Nodes are
/// resolved through whatever store the caller passes in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrieVersion {
    pub params: TrieParams,
    pub root: Digest,
}

pub(crate) fn fetch_node(store: &dyn ObjectStore, params: &TrieParams, digest: &Digest) -> Result<(Node, usize), TrieError> {
    let bytes = store.get(digest)?;
    Ok((Node::decode(&bytes, params)?, bytes.len()))
}

impl TrieVersion {
    pub fn new(params: TrieParams, root: Digest) -> Self {
        TrieVersion { params, root }
    }

    pub fn root_node(&self, store: &dyn ObjectStore) -> Result<Node, TrieError> {
        let (node, _) = fetch_node(store, &self.params, &self.root)?;
        if !node.is_root() {
            return Err(TrieError::Malformed(format!("{} is not a root node", self.root)));
        }
        Ok(node)
    }

    /// The version this one was chained to, or `None` for the first version.
    pub fn previous(&self, store: &dyn ObjectStore) -> Result<Option<TrieVersion>, TrieError> {
        let prev = self.root_node(store)?.prev_root.expect("root nodes carry a previous root");
        Ok((!prev.is_zero()).then(|| TrieVersion::new(self.params, prev)))
    }

    pub fn search_path(&self, store: &dyn ObjectStore, key: &Digest) -> Result<Vec<PathStep>, TrieError> {
        let mut steps = Vec::new();
        let mut current = self.root;
        let mut depth = 0;
        loop {
            let bytes = store.get(&current)?;
            let node = Node::decode(&bytes, &self.params)?;
            if node.is_root() != (depth == 0) {
                return Err(TrieError::Malformed(format!("unexpected root flag at depth {depth}")));
            }
            if node.is_leaf() {
                steps.push(PathStep { node: bytes, label: None });
                return Ok(steps);
            }
            let label = self.params.label(key, depth)?;
            let next = node.child(label);
            steps.push(PathStep {
                node: bytes,
                label: Some(label),
            });
            match next {
                Some(child) => current = child,
                None => return Ok(steps),
            }
            depth += 1;
        }
    }

    pub fn lookup(&self, store: &dyn ObjectStore, key: &Digest) -> Result<Option<Digest>, TrieError> {
        let path = self.search_path(store, key)?;
        let last = path.last().expect("paths are never empty");
        match Node::decode(&last.node, &self.params)?.body {
            NodeBody::Leaf { tuples } => Ok(tuples
                .binary_search_by(|t| t.key.cmp(key))
                .ok()
                .map(|i| tuples[i].value)),
            NodeBody::Internal { .. } => Ok(None),
        }
    }

    /// All associations of this version in key order.
    pub fn associations(&self, store: &dyn ObjectStore) -> Result<Vec<Tuple>, TrieError> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(d) = stack.pop() {
            let (node, _) = fetch_node(store, &self.params, &d)?;
            match node.body {
                NodeBody::Leaf { tuples } => out.extend(tuples),
                NodeBody::Internal { children, .. } => stack.extend(children),
            }
        }
        out.sort();
        Ok(out)
    }

    /// Digests of every node reachable from the root, in depth-first
    /// pre-order with children visited in label order.
    pub fn reachable_nodes(&self, store: &dyn ObjectStore) -> Result<Vec<Digest>, TrieError> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(d) = stack.pop() {
            let (node, _) = fetch_node(store, &self.params, &d)?;
            out.push(d);
            if let NodeBody::Internal { children, .. } = node.body {
                stack.extend(children.into_iter().rev());
            }
        }
        Ok(out)
    }
}

/// Checks that a search path is hash-linked from `root`: the first node
/// hashes to `root` and each later node hashes to the reference stored
/// under the label taken in its predecessor.
pub fn verify_path(params: &TrieParams, root: &Digest, path: &[PathStep]) -> bool {
    let Some(first) = path.first() else {
        return false;
    };
    if params.alg.hash(&first.node) != *root {
        return false;
    }
    for pair in path.windows(2) {
        let Ok(node) = Node::decode(&pair[0].node, params) else {
            return false;
        };
        let Some(label) = pair[0].label else {
            return false;
        };
        if node.child(label) != Some(params.alg.hash(&pair[1].node)) {
            return false;
        }
    }
    true
}
