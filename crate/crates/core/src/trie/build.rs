use crate::crypto::{Digest, HashAlg};
use crate::store::ObjectStore;

use super::node::{encode_internal, encode_leaf, internal_len, paper_bits_internal, paper_bits_leaf, Bitmap};
use super::{fetch_node, Node, NodeBody, TrieError, TrieParams, TrieVersion, Tuple};

/// Result of writing a new version.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Commit {
    pub version: TrieVersion,
    /// Nodes serialized and handed to storage for this version.
    pub new_nodes: usize,
}

/// A node as it leaves the builder, with the context needed for
/// measurements.
pub(crate) struct Emitted<'a> {
    pub bytes: &'a [u8],
    pub depth: usize,
    /// Serialized bytes of all strict ancestors on the search path.
    pub bytes_above: u64,
    /// Tuple count for leaves, zero for internal nodes.
    pub tuples: usize,
    pub paper_bits: u64,
}

pub(crate) trait NodeSink {
    fn emit(&mut self, digest: &Digest, node: &Emitted<'_>) -> Result<(), TrieError>;
}

struct StoreSink<'s> {
    store: &'s dyn ObjectStore,
    written: usize,
}

impl NodeSink for StoreSink<'_> {
    fn emit(&mut self, digest: &Digest, node: &Emitted<'_>) -> Result<(), TrieError> {
        let addr = self.store.put(node.bytes)?;
        debug_assert_eq!(addr, *digest);
        self.written += 1;
        Ok(())
    }
}

pub(crate) struct Builder<'p, S> {
    params: &'p TrieParams,
    pub(crate) sink: S,
}

impl<'p, S: NodeSink> Builder<'p, S> {
    pub(crate) fn new(params: &'p TrieParams, sink: S) -> Self {
        Builder { params, sink }
    }

    fn alg(&self) -> HashAlg {
        self.params.alg
    }

    fn emit_leaf(
        &mut self,
        tuples: &[Tuple],
        depth: usize,
        prev_root: Option<&Digest>,
        bytes_above: u64,
    ) -> Result<Digest, TrieError> {
        let mut bytes = Vec::new();
        encode_leaf(&mut bytes, tuples, prev_root);
        let digest = self.alg().hash(&bytes);
        let emitted = Emitted {
            bytes: &bytes,
            depth,
            bytes_above,
            tuples: tuples.len(),
            paper_bits: paper_bits_leaf(self.params, tuples.len(), prev_root.is_some()),
        };
        self.sink.emit(&digest, &emitted)?;
        Ok(digest)
    }

    fn emit_internal(
        &mut self,
        children: &[(u8, Digest)],
        depth: usize,
        prev_root: Option<&Digest>,
        bytes_above: u64,
    ) -> Result<Digest, TrieError> {
        let mut bitmap = Bitmap::default();
        for &(l, _) in children {
            bitmap.set(l);
        }
        let refs: Vec<Digest> = children.iter().map(|&(_, d)| d).collect();
        let mut bytes = Vec::new();
        encode_internal(&mut bytes, self.params.arity, &bitmap, &refs, prev_root);
        let digest = self.alg().hash(&bytes);
        let emitted = Emitted {
            bytes: &bytes,
            depth,
            bytes_above,
            tuples: 0,
            paper_bits: paper_bits_internal(self.params, refs.len(), prev_root.is_some()),
        };
        self.sink.emit(&digest, &emitted)?;
        Ok(digest)
    }

    /// Builds the unique subtree for `tuples` (sorted, distinct keys) rooted
    /// at `depth`. Children are emitted before their parent.
    pub(crate) fn subtree(
        &mut self,
        tuples: &[Tuple],
        depth: usize,
        prev_root: Option<&Digest>,
        bytes_above: u64,
    ) -> Result<Digest, TrieError> {
        if tuples.len() <= usize::from(self.params.leaf_capacity) {
            return self.emit_leaf(tuples, depth, prev_root, bytes_above);
        }
        let groups = partition(self.params, tuples, depth)?;
        let own = internal_len(self.params, groups.len(), prev_root.is_some());
        let mut children = Vec::with_capacity(groups.len());
        for (label, range) in groups {
            let child = self.subtree(&tuples[range], depth + 1, None, bytes_above + own)?;
            children.push((label, child));
        }
        self.emit_internal(&children, depth, prev_root, bytes_above)
    }

    /// Path-copying rewrite of an existing subtree with `changes` applied.
    /// Returns the old digest untouched when nothing below changed and this
    /// is not the root.
    fn rewrite(
        &mut self,
        store: &dyn ObjectStore,
        node: Node,
        old: Digest,
        depth: usize,
        changes: &[Tuple],
        prev_root: Option<&Digest>,
    ) -> Result<Digest, TrieError> {
        match node.body {
            NodeBody::Leaf { tuples } => {
                let merged = merge(&tuples, changes);
                if prev_root.is_none() && merged == tuples {
                    return Ok(old);
                }
                self.subtree(&merged, depth, prev_root, 0)
            }
            NodeBody::Internal { bitmap, children } => {
                let mut entries: Vec<(u8, Digest)> = bitmap.labels().zip(children).collect();
                let mut changed = false;
                for (label, range) in partition(self.params, changes, depth)? {
                    let group = &changes[range];
                    let new_child = match entries.binary_search_by_key(&label, |&(l, _)| l) {
                        Ok(i) => {
                            let current = entries[i].1;
                            let (child, _) = fetch_node(store, self.params, &current)?;
                            if child.is_root() {
                                return Err(TrieError::Malformed(format!("root node {current} used as a child")));
                            }
                            let d = self.rewrite(store, child, current, depth + 1, group, None)?;
                            entries[i].1 = d;
                            d != current
                        }
                        Err(i) => {
                            let d = self.subtree(group, depth + 1, None, 0)?;
                            entries.insert(i, (label, d));
                            true
                        }
                    };
                    changed |= new_child;
                }
                if prev_root.is_none() && !changed {
                    return Ok(old);
                }
                self.emit_internal(&entries, depth, prev_root, 0)
            }
        }
    }
}

/// Splits sorted tuples into runs sharing the label at `depth`.
fn partition(
    params: &TrieParams,
    tuples: &[Tuple],
    depth: usize,
) -> Result<Vec<(u8, std::ops::Range<usize>)>, TrieError> {
    let mut groups: Vec<(u8, std::ops::Range<usize>)> = Vec::new();
    for (i, t) in tuples.iter().enumerate() {
        let label = params.label(&t.key, depth)?;
        match groups.last_mut() {
            Some((l, range)) if *l == label => range.end = i + 1,
            _ => groups.push((label, i..i + 1)),
        }
    }
    Ok(groups)
}

/// Merges sorted `changes` into sorted `base`; changes win on equal keys.
fn merge(base: &[Tuple], changes: &[Tuple]) -> Vec<Tuple> {
    let mut out = Vec::with_capacity(base.len() + changes.len());
    let (mut i, mut j) = (0, 0);
    while i < base.len() && j < changes.len() {
        match base[i].key.cmp(&changes[j].key) {
            std::cmp::Ordering::Less => {
                out.push(base[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(changes[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(changes[j]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&base[i..]);
    out.extend_from_slice(&changes[j..]);
    out
}

/// Sorts associations and rejects duplicates or mis-sized digests.
pub(crate) fn canonical_tuples(
    params: &TrieParams,
    assoc: impl IntoIterator<Item = (Digest, Digest)>,
) -> Result<Vec<Tuple>, TrieError> {
    let len = params.alg.output_len();
    let mut tuples = Vec::new();
    for (key, value) in assoc {
        for d in [&key, &value] {
            if d.len() != len {
                return Err(TrieError::DigestLength {
                    expected: len,
                    got: d.len(),
                });
            }
        }
        tuples.push(Tuple { key, value });
    }
    tuples.sort_unstable_by_key(|a| a.key);
    if let Some(w) = tuples.windows(2).find(|w| w[0].key == w[1].key) {
        return Err(TrieError::DuplicateKey(w[0].key));
    }
    Ok(tuples)
}

/// Builds a fresh version over `assoc` chained to `prev_root` (the zero
/// sentinel for the first version) and writes its nodes to `store`.
pub fn build(
    store: &dyn ObjectStore,
    params: &TrieParams,
    assoc: impl IntoIterator<Item = (Digest, Digest)>,
    prev_root: &Digest,
) -> Result<Commit, TrieError> {
    params.validate()?;
    if prev_root.len() != params.alg.output_len() {
        return Err(TrieError::DigestLength {
            expected: params.alg.output_len(),
            got: prev_root.len(),
        });
    }
    let tuples = canonical_tuples(params, assoc)?;
    if tuples.is_empty() {
        return Err(TrieError::Empty);
    }
    let mut builder = Builder::new(params, StoreSink { store, written: 0 });
    let root = builder.subtree(&tuples, 0, Some(prev_root), 0)?;
    Ok(Commit {
        version: TrieVersion::new(*params, root),
        new_nodes: builder.sink.written,
    })
}

/// Derives the next version from `prev` by path copying. Each change is
/// `(key, Some(value))`; a `None` value would be a deletion, which the
/// structure does not support. Unchanged subtrees are shared with `prev`.
pub fn update(
    store: &dyn ObjectStore,
    prev: &TrieVersion,
    changes: impl IntoIterator<Item = (Digest, Option<Digest>)>,
) -> Result<Commit, TrieError> {
    let params = &prev.params;
    let mut upserts = Vec::new();
    for (key, value) in changes {
        let value = value.ok_or(TrieError::Unsupported("deleting a key"))?;
        upserts.push((key, value));
    }
    let changes = canonical_tuples(params, upserts)?;
    if changes.is_empty() {
        return Err(TrieError::Empty);
    }
    let root = prev.root_node(store)?;
    let mut builder = Builder::new(params, StoreSink { store, written: 0 });
    let new_root = builder.rewrite(store, root, prev.root, 0, &changes, Some(&prev.root))?;
    Ok(Commit {
        version: TrieVersion::new(*params, new_root),
        new_nodes: builder.sink.written,
    })
}
