//! Append-only ledgers authenticated by a Certificate-Transparency style
//! Merkle tree head.
//!
//! Leaves are `H(0x00 || block_hash)`, interior nodes `H(0x01 || left || right)`,
//! and a tree of `n` leaves splits at the largest power of two below `n`.
//! Consistency proofs show that a tree of `m` leaves is a prefix of a tree
//! of `n` leaves; inclusion proofs show a single block is at a position.

use std::fmt::Write as _;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use thiserror::Error;

use crate::crypto::{Digest, HashAlg};

const LEAF_PREFIX: u8 = 0x00;
const NODE_PREFIX: u8 = 0x01;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("invalid consistency range: old size {old}, new size {new}, ledger size {len}")]
    InvalidRange { old: u64, new: u64, len: u64 },
    #[error("block index {index} out of range for ledger of {len} blocks")]
    IndexOutOfRange { index: u64, len: u64 },
    #[error("malformed proof encoding: {0}")]
    MalformedProof(String),
    #[error("ledger file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    index: u64,
    payload: Vec<u8>,
    hash: Digest,
}

impl Block {
    pub fn new(alg: HashAlg, index: u64, payload: Vec<u8>) -> Self {
        let hash = alg.hash_parts(&[&index.to_be_bytes(), &payload]);
        Block {
            index,
            payload,
            hash,
        }
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// `H(index_be64 || payload)`.
    pub fn hash(&self) -> Digest {
        self.hash
    }
}

/// An application ledger. Cloning yields an independent snapshot; appends
/// to the original never affect snapshots already taken.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ledger {
    alg: HashAlg,
    id: Vec<u8>,
    blocks: Vec<Block>,
}

impl Ledger {
    pub fn new(alg: HashAlg, id: impl Into<Vec<u8>>) -> Self {
        Ledger {
            alg,
            id: id.into(),
            blocks: Vec::new(),
        }
    }

    pub fn alg(&self) -> HashAlg {
        self.alg
    }

    pub fn id(&self) -> &[u8] {
        &self.id
    }

    /// Hash of the ledger id: the ledger's search key in the trie.
    pub fn id_key(&self) -> Digest {
        self.alg.hash(&self.id)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn append(&mut self, payload: impl Into<Vec<u8>>) -> &Block {
        let block = Block::new(self.alg, self.len(), payload.into());
        self.blocks.push(block);
        self.blocks.last().expect("just pushed")
    }

    /// Returns a new version with one more block, leaving `self` untouched.
    pub fn appended(&self, payload: impl Into<Vec<u8>>) -> Ledger {
        let mut next = self.clone();
        next.append(payload);
        next
    }

    /// Replaces a block's payload in place. Only fault injection and tests
    /// have a reason to rewrite history.
    pub fn rewrite_block(&mut self, index: usize, payload: Vec<u8>) {
        self.blocks[index] = Block::new(self.alg, index as u64, payload);
    }

    fn leaf_hashes(&self, size: usize) -> Vec<Digest> {
        self.blocks[..size]
            .iter()
            .map(|b| leaf_hash(self.alg, &b.hash))
            .collect()
    }

    /// Merkle tree head over all blocks.
    pub fn root(&self) -> Digest {
        self.root_at(self.len()).expect("full size is in range")
    }

    /// Merkle tree head over the first `size` blocks.
    pub fn root_at(&self, size: u64) -> Result<Digest, LedgerError> {
        if size > self.len() {
            return Err(LedgerError::InvalidRange {
                old: size,
                new: size,
                len: self.len(),
            });
        }
        Ok(tree_head(self.alg, &self.leaf_hashes(size as usize)))
    }

    pub fn prove_consistency(&self, old_size: u64, new_size: u64) -> Result<ConsistencyProof, LedgerError> {
        if old_size == 0 || old_size > new_size || new_size > self.len() {
            return Err(LedgerError::InvalidRange {
                old: old_size,
                new: new_size,
                len: self.len(),
            });
        }
        let leaves = self.leaf_hashes(new_size as usize);
        let mut m = old_size as usize;
        let (mut lo, mut hi) = (0usize, leaves.len());
        let mut complete_subtree = true;
        let mut tail = Vec::new();
        let mut path = Vec::new();
        loop {
            if m == hi - lo {
                if !complete_subtree {
                    path.push(tree_head(self.alg, &leaves[lo..hi]));
                }
                break;
            }
            let split = split_point(hi - lo);
            if m <= split {
                tail.push(tree_head(self.alg, &leaves[lo + split..hi]));
                hi = lo + split;
            } else {
                tail.push(tree_head(self.alg, &leaves[lo..lo + split]));
                lo += split;
                m -= split;
                complete_subtree = false;
            }
        }
        path.extend(tail.into_iter().rev());
        Ok(ConsistencyProof {
            old_size,
            new_size,
            path,
        })
    }

    pub fn prove_inclusion(&self, index: u64) -> Result<InclusionProof, LedgerError> {
        if index >= self.len() {
            return Err(LedgerError::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        let leaves = self.leaf_hashes(self.blocks.len());
        let mut idx = index as usize;
        let (mut lo, mut hi) = (0usize, leaves.len());
        let mut tail = Vec::new();
        while hi - lo > 1 {
            let split = split_point(hi - lo);
            if idx < split {
                tail.push(tree_head(self.alg, &leaves[lo + split..hi]));
                hi = lo + split;
            } else {
                tail.push(tree_head(self.alg, &leaves[lo..lo + split]));
                lo += split;
                idx -= split;
            }
        }
        tail.reverse();
        Ok(InclusionProof {
            leaf_index: index,
            tree_size: self.len(),
            path: tail,
        })
    }

    /// Newline-delimited export: a header line `ledger <alg> <encoding> <hex id>`
    /// followed by one encoded payload per line.
    pub fn export(&self, encoding: PayloadEncoding) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "ledger {} {} {}",
            self.alg,
            encoding.name(),
            hex::encode(&self.id)
        );
        for block in &self.blocks {
            out.push_str(&encoding.encode(&block.payload));
            out.push('\n');
        }
        out
    }

    pub fn import(text: &str) -> Result<Ledger, LedgerError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| LedgerError::Format("missing header".into()))?;
        let fields: Vec<&str> = header.split(' ').collect();
        let [magic, alg, encoding, id] = fields[..] else {
            return Err(LedgerError::Format(format!("bad header `{header}`")));
        };
        if magic != "ledger" {
            return Err(LedgerError::Format(format!("bad header `{header}`")));
        }
        let alg: HashAlg = alg.parse().map_err(LedgerError::Format)?;
        let encoding = PayloadEncoding::from_name(encoding)
            .ok_or_else(|| LedgerError::Format(format!("unknown encoding `{encoding}`")))?;
        let id = hex::decode(id).map_err(|e| LedgerError::Format(format!("ledger id: {e}")))?;
        let mut ledger = Ledger::new(alg, id);
        for (n, line) in lines.enumerate() {
            let payload = encoding
                .decode(line)
                .map_err(|e| LedgerError::Format(format!("line {}: {e}", n + 2)))?;
            ledger.append(payload);
        }
        Ok(ledger)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PayloadEncoding {
    #[default]
    Hex,
    Base64,
}

impl PayloadEncoding {
    pub fn name(self) -> &'static str {
        match self {
            PayloadEncoding::Hex => "hex",
            PayloadEncoding::Base64 => "base64",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "hex" => Some(PayloadEncoding::Hex),
            "base64" => Some(PayloadEncoding::Base64),
            _ => None,
        }
    }

    fn encode(self, payload: &[u8]) -> String {
        match self {
            PayloadEncoding::Hex => hex::encode(payload),
            PayloadEncoding::Base64 => BASE64.encode(payload),
        }
    }

    fn decode(self, line: &str) -> Result<Vec<u8>, String> {
        match self {
            PayloadEncoding::Hex => hex::decode(line).map_err(|e| e.to_string()),
            PayloadEncoding::Base64 => BASE64.decode(line).map_err(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistencyProof {
    pub old_size: u64,
    pub new_size: u64,
    pub path: Vec<Digest>,
}

impl ConsistencyProof {
    /// Proof that the empty ledger is a prefix of a ledger of `new_size`
    /// blocks. It has no path; the old head must be the empty-tree head.
    pub fn from_empty(new_size: u64) -> Self {
        ConsistencyProof {
            old_size: 0,
            new_size,
            path: Vec::new(),
        }
    }

    /// `old_size_be64 || new_size_be64 || path digests`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.path.iter().map(Digest::len).sum::<usize>());
        out.extend_from_slice(&self.old_size.to_be_bytes());
        out.extend_from_slice(&self.new_size.to_be_bytes());
        for d in &self.path {
            out.extend_from_slice(d.as_bytes());
        }
        out
    }

    pub fn from_bytes(alg: HashAlg, bytes: &[u8]) -> Result<Self, LedgerError> {
        let len = alg.output_len();
        if bytes.len() < 16 || !(bytes.len() - 16).is_multiple_of(len) {
            return Err(LedgerError::MalformedProof(format!(
                "{} bytes is not 16 + a multiple of {len}",
                bytes.len()
            )));
        }
        let old_size = u64::from_be_bytes(bytes[..8].try_into().expect("8 bytes"));
        let new_size = u64::from_be_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let path = bytes[16..]
            .chunks_exact(len)
            .map(|c| Digest::from_slice(c).expect("chunk has digest length"))
            .collect();
        Ok(ConsistencyProof {
            old_size,
            new_size,
            path,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InclusionProof {
    pub leaf_index: u64,
    pub tree_size: u64,
    pub path: Vec<Digest>,
}

pub fn leaf_hash(alg: HashAlg, block_hash: &Digest) -> Digest {
    alg.hash_parts(&[&[LEAF_PREFIX], block_hash.as_bytes()])
}

pub fn node_hash(alg: HashAlg, left: &Digest, right: &Digest) -> Digest {
    alg.hash_parts(&[&[NODE_PREFIX], left.as_bytes(), right.as_bytes()])
}

/// Largest power of two strictly below `n` (n ≥ 2).
fn split_point(n: usize) -> usize {
    debug_assert!(n >= 2);
    1 << (usize::BITS - 1 - (n - 1).leading_zeros())
}

/// Merkle tree head over already leaf-hashed entries; `H("")` when empty.
pub fn tree_head(alg: HashAlg, leaves: &[Digest]) -> Digest {
    match leaves.len() {
        0 => alg.hash(b""),
        1 => leaves[0],
        n => {
            let k = split_point(n);
            node_hash(alg, &tree_head(alg, &leaves[..k]), &tree_head(alg, &leaves[k..]))
        }
    }
}

fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        u64::BITS - (n - 1).leading_zeros()
    }
}

/// Checks that `old_root` (size `proof.old_size`) is a prefix of `new_root`
/// (size `proof.new_size`). An `old_size` of zero is accepted only with an
/// empty path and `old_root` equal to the empty-tree head.
pub fn verify_consistency(alg: HashAlg, old_root: &Digest, new_root: &Digest, proof: &ConsistencyProof) -> bool {
    let (m, n) = (proof.old_size, proof.new_size);
    if m > n || proof.path.len() as u64 > u64::from(ceil_log2(n)) + 1 {
        return false;
    }
    if proof.path.iter().any(|d| d.len() != alg.output_len()) {
        return false;
    }
    if m == 0 {
        return proof.path.is_empty() && *old_root == alg.hash(b"");
    }
    if m == n {
        return proof.path.is_empty() && old_root == new_root;
    }
    if proof.path.is_empty() {
        return false;
    }

    let mut path = proof.path.iter();
    let seed = if m.is_power_of_two() {
        *old_root
    } else {
        *path.next().expect("non-empty")
    };
    let mut fn_ = m - 1;
    let mut sn = n - 1;
    while fn_ & 1 == 1 {
        fn_ >>= 1;
        sn >>= 1;
    }
    let mut fr = seed;
    let mut sr = seed;
    for c in path {
        if sn == 0 {
            return false;
        }
        if fn_ & 1 == 1 || fn_ == sn {
            fr = node_hash(alg, c, &fr);
            sr = node_hash(alg, c, &sr);
            if fn_ & 1 == 0 {
                while fn_ & 1 == 0 && fn_ != 0 {
                    fn_ >>= 1;
                    sn >>= 1;
                }
            }
        } else {
            sr = node_hash(alg, &sr, c);
        }
        fn_ >>= 1;
        sn >>= 1;
    }
    sn == 0 && fr == *old_root && sr == *new_root
}

/// Checks that the block with hash `block_hash` sits at `proof.leaf_index`
/// in the tree of `proof.tree_size` leaves whose head is `root`.
pub fn verify_inclusion(alg: HashAlg, root: &Digest, block_hash: &Digest, proof: &InclusionProof) -> bool {
    if proof.leaf_index >= proof.tree_size || proof.path.len() as u32 > ceil_log2(proof.tree_size) {
        return false;
    }
    let mut fn_ = proof.leaf_index;
    let mut sn = proof.tree_size - 1;
    let mut r = leaf_hash(alg, block_hash);
    for p in &proof.path {
        if sn == 0 {
            return false;
        }
        if fn_ & 1 == 1 || fn_ == sn {
            r = node_hash(alg, p, &r);
            while fn_ & 1 == 0 && fn_ != 0 {
                fn_ >>= 1;
                sn >>= 1;
            }
        } else {
            r = node_hash(alg, &r, p);
        }
        fn_ >>= 1;
        sn >>= 1;
    }
    sn == 0 && r == *root
}
