//! Node model and canonical byte layout.
//!
//! ```text
//! byte 0          tag: 0x01 internal, 0x02 leaf, 0x03 root-internal, 0x04 root-leaf
//! internal kinds  ceil(r/8) bitmap bytes (label 0 = MSB of the first byte),
//!                 then one child digest per set bit, ascending label order
//! leaf kinds      one byte holding (tuple count - 1), then key || value pairs
//!                 in ascending key order
//! root kinds      previous root digest appended last
//! ```

use crate::crypto::Digest;

use super::{TrieError, TrieParams};

pub const TAG_INTERNAL: u8 = 0x01;
pub const TAG_LEAF: u8 = 0x02;
pub const TAG_ROOT_INTERNAL: u8 = 0x03;
pub const TAG_ROOT_LEAF: u8 = 0x04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tuple {
    pub key: Digest,
    pub value: Digest,
}

/// Presence map over up to 256 edge labels.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Bitmap([u8; 32]);

impl Bitmap {
    pub fn set(&mut self, label: u8) {
        self.0[label as usize / 8] |= 0x80 >> (label % 8);
    }

    pub fn contains(&self, label: u8) -> bool {
        self.0[label as usize / 8] & (0x80 >> (label % 8)) != 0
    }

    pub fn count(&self) -> usize {
        self.0.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Position of `label` among the set labels (number of set labels below it).
    pub fn rank(&self, label: u8) -> usize {
        let byte = label as usize / 8;
        let below: usize = self.0[..byte].iter().map(|b| b.count_ones() as usize).sum();
        let mask = !(0xffu8 >> (label % 8));
        below + (self.0[byte] & mask).count_ones() as usize
    }

    pub fn labels(&self) -> impl Iterator<Item = u8> + '_ {
        (0..=255u8).filter(move |&l| self.contains(l))
    }

    fn encoded(&self, arity: u16) -> &[u8] {
        &self.0[..bitmap_len(arity)]
    }
}

impl std::fmt::Debug for Bitmap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.labels()).finish()
    }
}

pub(crate) fn bitmap_len(arity: u16) -> usize {
    (arity as usize).div_ceil(8)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeBody {
    Internal { bitmap: Bitmap, children: Vec<Digest> },
    Leaf { tuples: Vec<Tuple> },
}

/// A trie node. `prev_root` is `Some` exactly for root nodes; the first
/// version of a lineage carries the all-zero sentinel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub body: NodeBody,
    pub prev_root: Option<Digest>,
}

impl Node {
    /// A leaf with tuples put in canonical (ascending key) order.
    pub fn leaf(mut tuples: Vec<Tuple>) -> Node {
        tuples.sort();
        Node {
            body: NodeBody::Leaf { tuples },
            prev_root: None,
        }
    }

    /// An internal node from `(label, child digest)` pairs in any order.
    pub fn internal(mut children: Vec<(u8, Digest)>) -> Node {
        children.sort_by_key(|&(l, _)| l);
        let mut bitmap = Bitmap::default();
        for &(l, _) in &children {
            bitmap.set(l);
        }
        Node {
            body: NodeBody::Internal {
                bitmap,
                children: children.into_iter().map(|(_, d)| d).collect(),
            },
            prev_root: None,
        }
    }

    pub fn with_prev_root(mut self, prev_root: Digest) -> Node {
        self.prev_root = Some(prev_root);
        self
    }

    pub fn is_root(&self) -> bool {
        self.prev_root.is_some()
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.body, NodeBody::Leaf { .. })
    }

    /// Child reference for `label`, if the branch exists.
    pub fn child(&self, label: u8) -> Option<Digest> {
        match &self.body {
            NodeBody::Internal { bitmap, children } if bitmap.contains(label) => {
                children.get(bitmap.rank(label)).copied()
            }
            _ => None,
        }
    }

    pub fn children_with_labels(&self) -> Vec<(u8, Digest)> {
        match &self.body {
            NodeBody::Internal { bitmap, children } => bitmap.labels().zip(children.iter().copied()).collect(),
            NodeBody::Leaf { .. } => Vec::new(),
        }
    }

    pub fn serialize(&self, params: &TrieParams) -> Result<Vec<u8>, TrieError> {
        self.check(params)?;
        let mut out = Vec::new();
        match &self.body {
            NodeBody::Internal { bitmap, children } => {
                encode_internal(&mut out, params.arity, bitmap, children, self.prev_root.as_ref())
            }
            NodeBody::Leaf { tuples } => encode_leaf(&mut out, tuples, self.prev_root.as_ref()),
        }
        Ok(out)
    }

    pub fn digest(&self, params: &TrieParams) -> Result<Digest, TrieError> {
        Ok(params.alg.hash(&self.serialize(params)?))
    }

    fn check(&self, params: &TrieParams) -> Result<(), TrieError> {
        let len = params.alg.output_len();
        let canon = |msg: String| Err(TrieError::Canonicalization(msg));
        if let Some(p) = &self.prev_root {
            if p.len() != len {
                return canon("previous root has wrong digest length".into());
            }
        }
        match &self.body {
            NodeBody::Internal { bitmap, children } => {
                if bitmap.labels().any(|l| u16::from(l) >= params.arity) {
                    return canon(format!("bitmap marks a label outside arity {}", params.arity));
                }
                if children.is_empty() || bitmap.count() != children.len() {
                    return canon(format!(
                        "{} children for {} bitmap entries",
                        children.len(),
                        bitmap.count()
                    ));
                }
                if children.iter().any(|c| c.len() != len) {
                    return canon("child digest has wrong length".into());
                }
            }
            NodeBody::Leaf { tuples } => {
                if tuples.is_empty() || tuples.len() > usize::from(params.leaf_capacity) {
                    return canon(format!(
                        "leaf holds {} tuples, capacity {}",
                        tuples.len(),
                        params.leaf_capacity
                    ));
                }
                if tuples.iter().any(|t| t.key.len() != len || t.value.len() != len) {
                    return canon("tuple digest has wrong length".into());
                }
                if tuples.windows(2).any(|w| w[0].key >= w[1].key) {
                    return canon("leaf keys are not strictly ascending".into());
                }
            }
        }
        Ok(())
    }

    /// Parses a canonical serialization, rejecting anything `serialize`
    /// would not have produced.
    pub fn decode(bytes: &[u8], params: &TrieParams) -> Result<Node, TrieError> {
        let len = params.alg.output_len();
        let malformed = |msg: &str| TrieError::Malformed(msg.to_string());
        let (&tag, rest) = bytes.split_first().ok_or_else(|| malformed("empty node"))?;
        let is_root = matches!(tag, TAG_ROOT_INTERNAL | TAG_ROOT_LEAF);
        let digest_at = |b: &[u8], at: usize| Digest::from_slice(&b[at..at + len]).expect("slice has digest length");
        let (body, used) = match tag {
            TAG_INTERNAL | TAG_ROOT_INTERNAL => {
                let bm_len = bitmap_len(params.arity);
                if rest.len() < bm_len {
                    return Err(malformed("truncated bitmap"));
                }
                let mut bitmap = Bitmap::default();
                bitmap.0[..bm_len].copy_from_slice(&rest[..bm_len]);
                if bitmap.labels().any(|l| u16::from(l) >= params.arity) {
                    return Err(malformed("bitmap marks a label outside arity"));
                }
                let count = bitmap.count();
                if count == 0 {
                    return Err(malformed("internal node without children"));
                }
                let need = bm_len + count * len;
                if rest.len() < need {
                    return Err(malformed("truncated children"));
                }
                let children = (0..count).map(|i| digest_at(rest, bm_len + i * len)).collect();
                (NodeBody::Internal { bitmap, children }, need)
            }
            TAG_LEAF | TAG_ROOT_LEAF => {
                let count = usize::from(*rest.first().ok_or_else(|| malformed("missing tuple count"))?) + 1;
                if count > usize::from(params.leaf_capacity) {
                    return Err(malformed("leaf exceeds capacity"));
                }
                let need = 1 + count * 2 * len;
                if rest.len() < need {
                    return Err(malformed("truncated tuples"));
                }
                let tuples: Vec<Tuple> = (0..count)
                    .map(|i| Tuple {
                        key: digest_at(rest, 1 + i * 2 * len),
                        value: digest_at(rest, 1 + i * 2 * len + len),
                    })
                    .collect();
                if tuples.windows(2).any(|w| w[0].key >= w[1].key) {
                    return Err(malformed("leaf keys are not strictly ascending"));
                }
                (NodeBody::Leaf { tuples }, need)
            }
            _ => return Err(malformed("unknown node tag")),
        };
        let prev_root = if is_root {
            if rest.len() < used + len {
                return Err(malformed("truncated previous root"));
            }
            Some(digest_at(rest, used))
        } else {
            None
        };
        let total = used + if is_root { len } else { 0 };
        if rest.len() != total {
            return Err(malformed("trailing bytes"));
        }
        Ok(Node { body, prev_root })
    }
}

pub(crate) fn encode_leaf(out: &mut Vec<u8>, tuples: &[Tuple], prev_root: Option<&Digest>) {
    out.push(if prev_root.is_some() { TAG_ROOT_LEAF } else { TAG_LEAF });
    out.push((tuples.len() - 1) as u8);
    for t in tuples {
        out.extend_from_slice(t.key.as_bytes());
        out.extend_from_slice(t.value.as_bytes());
    }
    if let Some(p) = prev_root {
        out.extend_from_slice(p.as_bytes());
    }
}

pub(crate) fn encode_internal(
    out: &mut Vec<u8>,
    arity: u16,
    bitmap: &Bitmap,
    children: &[Digest],
    prev_root: Option<&Digest>,
) {
    out.push(if prev_root.is_some() {
        TAG_ROOT_INTERNAL
    } else {
        TAG_INTERNAL
    });
    out.extend_from_slice(bitmap.encoded(arity));
    for c in children {
        out.extend_from_slice(c.as_bytes());
    }
    if let Some(p) = prev_root {
        out.extend_from_slice(p.as_bytes());
    }
}

/// Serialized size of an internal node, computable before its children exist.
pub(crate) fn internal_len(params: &TrieParams, children: usize, is_root: bool) -> u64 {
    let len = params.alg.output_len();
    (1 + bitmap_len(params.arity) + children * len + if is_root { len } else { 0 }) as u64
}

/// Size under compact bit accounting: an `r`-bit bitmap, a `ceil(log2 k)`-bit
/// tuple-count header, digests, no tag.
pub fn paper_bits_internal(params: &TrieParams, children: usize, is_root: bool) -> u64 {
    let bits = params.alg.output_len() as u64 * 8;
    u64::from(params.arity) + children as u64 * bits + if is_root { bits } else { 0 }
}

pub fn paper_bits_leaf(params: &TrieParams, tuples: usize, is_root: bool) -> u64 {
    let bits = params.alg.output_len() as u64 * 8;
    let header = u64::from(u16::BITS - (params.leaf_capacity - 1).leading_zeros());
    header + tuples as u64 * 2 * bits + if is_root { bits } else { 0 }
}

pub fn paper_bits(node: &Node, params: &TrieParams) -> u64 {
    match &node.body {
        NodeBody::Internal { children, .. } => paper_bits_internal(params, children.len(), node.is_root()),
        NodeBody::Leaf { tuples } => paper_bits_leaf(params, tuples.len(), node.is_root()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::HashAlg;

    fn params(r: u16, k: u16) -> TrieParams {
        TrieParams::new(r, k, HashAlg::Sha256).unwrap()
    }

    fn d(tag: &[u8]) -> Digest {
        HashAlg::Sha256.hash(tag)
    }

    fn tuple(i: u8) -> Tuple {
        Tuple {
            key: d(&[i]),
            value: d(&[i, i]),
        }
    }

    #[test]
    fn layout_sizes() {
        let p = params(8, 1);
        let leaf = Node::leaf(vec![tuple(1)]);
        assert_eq!(leaf.serialize(&p).unwrap().len(), 66);
        assert_eq!(leaf.clone().with_prev_root(HashAlg::Sha256.zero()).serialize(&p).unwrap().len(), 98);

        let internal = Node::internal(vec![(3, d(b"b")), (0, d(b"a"))]);
        let bytes = internal.serialize(&p).unwrap();
        assert_eq!(bytes.len(), 66);
        assert_eq!(bytes[0], TAG_INTERNAL);
        assert_eq!(bytes[1], 0b1001_0000);
        assert_eq!(&bytes[2..34], d(b"a").as_bytes());

        let p2 = params(2, 1);
        let root = Node::internal(vec![(0, d(b"a")), (1, d(b"b"))]).with_prev_root(d(b"prev"));
        let bytes = root.serialize(&p2).unwrap();
        assert_eq!(bytes.len(), 98);
        assert_eq!(bytes[0], TAG_ROOT_INTERNAL);
        assert_eq!(bytes[1], 0b1100_0000);
        assert_eq!(&bytes[66..], d(b"prev").as_bytes());
    }

    #[test]
    fn leaf_layout_bytes() {
        let p = params(2, 4);
        let mut tuples = vec![tuple(1), tuple(2), tuple(3)];
        let node = Node::leaf(tuples.clone());
        let bytes = node.serialize(&p).unwrap();
        assert_eq!(bytes[0], TAG_LEAF);
        assert_eq!(bytes[1], 2);
        tuples.sort();
        assert_eq!(&bytes[2..34], tuples[0].key.as_bytes());
        assert_eq!(&bytes[34..66], tuples[0].value.as_bytes());
    }

    #[test]
    fn wide_bitmap() {
        let p = params(256, 1);
        let node = Node::internal(vec![(255, d(b"z")), (0, d(b"a")), (9, d(b"j"))]);
        let bytes = node.serialize(&p).unwrap();
        assert_eq!(bytes.len(), 1 + 32 + 3 * 32);
        assert_eq!(bytes[1], 0x80);
        assert_eq!(bytes[2], 0x40);
        assert_eq!(bytes[32], 0x01);
        assert_eq!(Node::decode(&bytes, &p).unwrap(), node);
        assert_eq!(node.child(9), Some(d(b"j")));
        assert_eq!(node.child(255), Some(d(b"z")));
        assert_eq!(node.child(10), None);
    }

    #[test]
    fn canonical_order_and_digest() {
        let p = params(2, 4);
        let a = Node::leaf(vec![tuple(1), tuple(2)]);
        let b = Node::leaf(vec![tuple(2), tuple(1)]);
        assert_eq!(a.digest(&p).unwrap(), b.digest(&p).unwrap());

        let base = a.serialize(&p).unwrap();
        for i in 0..base.len() {
            let mut m = base.clone();
            m[i] ^= 1;
            assert_ne!(HashAlg::Sha256.hash(&m), a.digest(&p).unwrap());
        }
    }

    #[test]
    fn invariant_violations() {
        let p = params(4, 2);
        let unsorted = Node {
            body: NodeBody::Leaf {
                tuples: {
                    let mut t = vec![tuple(1), tuple(2)];
                    t.sort();
                    t.reverse();
                    t
                },
            },
            prev_root: None,
        };
        assert!(matches!(unsorted.serialize(&p), Err(TrieError::Canonicalization(_))));
        let dup = Node {
            body: NodeBody::Leaf {
                tuples: vec![tuple(1), tuple(1)],
            },
            prev_root: None,
        };
        assert!(dup.serialize(&p).is_err());
        assert!(Node::leaf(vec![tuple(1), tuple(2), tuple(3)]).serialize(&p).is_err());
        assert!(Node::leaf(vec![]).serialize(&p).is_err());
        assert!(Node::internal(vec![]).serialize(&p).is_err());
        assert!(Node::internal(vec![(4, d(b"x"))]).serialize(&p).is_err());
    }

    #[test]
    fn decode_round_trip_and_rejects() {
        let p = params(4, 3);
        let nodes = [
            Node::leaf(vec![tuple(5)]),
            Node::leaf(vec![tuple(5), tuple(6), tuple(7)]).with_prev_root(d(b"p")),
            Node::internal(vec![(2, d(b"c"))]),
            Node::internal(vec![(0, d(b"a")), (3, d(b"d"))]).with_prev_root(HashAlg::Sha256.zero()),
        ];
        for node in &nodes {
            let bytes = node.serialize(&p).unwrap();
            assert_eq!(&Node::decode(&bytes, &p).unwrap(), node);
            for cut in 0..bytes.len() {
                assert!(Node::decode(&bytes[..cut], &p).is_err());
            }
            let mut longer = bytes.clone();
            longer.push(0);
            assert!(Node::decode(&longer, &p).is_err());
        }
        assert!(Node::decode(&[0x05, 0, 0], &p).is_err());
        // Bit for label 4 is outside arity 4.
        let mut bad = vec![TAG_INTERNAL, 0b0000_1000];
        bad.extend_from_slice(d(b"x").as_bytes());
        assert!(Node::decode(&bad, &p).is_err());
    }

    #[test]
    fn paper_accounting() {
        let p = params(8, 4);
        assert_eq!(paper_bits_internal(&p, 2, false), 8 + 2 * 256);
        assert_eq!(paper_bits_leaf(&p, 3, false), 2 + 3 * 512);
        assert_eq!(paper_bits_leaf(&params(2, 1), 1, true), 512 + 256);
        assert_eq!(paper_bits_leaf(&params(2, 5), 1, false), 3 + 512);
    }
}
