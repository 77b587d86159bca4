//! Self-contained audit proofs.
//!
//! Bundle layout, every section prefixed by its little-endian `u32` length:
//!
//! ```text
//! header    "TNAP" | version u8 | hash id u8 | arity u16 | capacity u16 | up_to_round u64 | id_key
//! nodes     count u32 | (len u32 | node bytes)*
//! proofs    count u32 | (round u64 | len u32 | proof bytes)*
//! checksum  hash of every preceding byte
//! ```

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

use crate::crypto::{Digest, HashAlg};
use crate::store::ObjectStore;
use crate::trie::TrieParams;

use super::{run_audit, AuditReport, AuditSource, Claim, FetchError, Outcome, StoreSource};

const MAGIC: &[u8; 4] = b"TNAP";
const VERSION: u8 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BundleError {
    #[error("audit proof is truncated")]
    Truncated,
    #[error("malformed audit proof: {0}")]
    Malformed(String),
    #[error("audit proof checksum mismatch")]
    Checksum,
    #[error("round {up_to_round} is not published (chain height {height})")]
    RoundOutOfRange { up_to_round: u64, height: u64 },
    #[error("cannot construct audit proof: {0}")]
    CannotConstruct(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditProof {
    pub params: TrieParams,
    pub id_key: Digest,
    pub up_to_round: u64,
    /// Serialized trie nodes in the order the audit first read them.
    pub nodes: Vec<Vec<u8>>,
    /// Serialized consistency proofs keyed by the round that published them.
    pub proofs: Vec<(u64, Vec<u8>)>,
}

fn section(out: &mut Vec<u8>, body: &[u8]) {
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(body);
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BundleError> {
        if self.bytes.len() < n {
            return Err(BundleError::Truncated);
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, BundleError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, BundleError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, BundleError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, BundleError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn section(&mut self) -> Result<Reader<'a>, BundleError> {
        let len = self.u32()? as usize;
        Ok(Reader { bytes: self.take(len)? })
    }

    fn finish(&self, what: &str) -> Result<(), BundleError> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(BundleError::Malformed(format!("{} trailing bytes after {what}", self.bytes.len())))
        }
    }
}

impl AuditProof {
    pub fn alg(&self) -> HashAlg {
        self.params.alg
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();

        let mut header = Vec::new();
        header.extend_from_slice(MAGIC);
        header.push(VERSION);
        header.push(self.alg().wire_id());
        header.extend_from_slice(&self.params.arity.to_le_bytes());
        header.extend_from_slice(&self.params.leaf_capacity.to_le_bytes());
        header.extend_from_slice(&self.up_to_round.to_le_bytes());
        header.extend_from_slice(self.id_key.as_bytes());
        section(&mut out, &header);

        let mut nodes = (self.nodes.len() as u32).to_le_bytes().to_vec();
        for node in &self.nodes {
            section(&mut nodes, node);
        }
        section(&mut out, &nodes);

        let mut proofs = (self.proofs.len() as u32).to_le_bytes().to_vec();
        for (round, proof) in &self.proofs {
            proofs.extend_from_slice(&round.to_le_bytes());
            section(&mut proofs, proof);
        }
        section(&mut out, &proofs);

        let checksum = self.alg().hash(&out);
        section(&mut out, checksum.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<AuditProof, BundleError> {
        let mut input = Reader { bytes };

        let mut header = input.section()?;
        if header.take(4)? != MAGIC {
            return Err(BundleError::Malformed("bad magic".into()));
        }
        let version = header.u8()?;
        if version != VERSION {
            return Err(BundleError::Malformed(format!("unsupported version {version}")));
        }
        let wire = header.u8()?;
        let alg = HashAlg::from_wire_id(wire).ok_or_else(|| BundleError::Malformed(format!("unknown hash id {wire}")))?;
        let arity = header.u16()?;
        let capacity = header.u16()?;
        let params = TrieParams::new(arity, capacity, alg).map_err(|e| BundleError::Malformed(e.to_string()))?;
        let up_to_round = header.u64()?;
        let id_key = Digest::from_slice(header.take(alg.output_len())?).expect("length matches the algorithm");
        header.finish("header")?;

        let mut section = input.section()?;
        let count = section.u32()?;
        let mut nodes = Vec::new();
        for _ in 0..count {
            nodes.push(section.section()?.bytes.to_vec());
        }
        section.finish("node list")?;

        let mut section = input.section()?;
        let count = section.u32()?;
        let mut proofs = Vec::new();
        for _ in 0..count {
            let round = section.u64()?;
            proofs.push((round, section.section()?.bytes.to_vec()));
        }
        section.finish("proof list")?;

        let covered = bytes.len() - input.bytes.len();
        let checksum = input.section()?;
        input.finish("checksum")?;
        if checksum.bytes != alg.hash(&bytes[..covered]).as_bytes() {
            return Err(BundleError::Checksum);
        }

        Ok(AuditProof {
            params,
            id_key,
            up_to_round,
            nodes,
            proofs,
        })
    }
}

/// Passes reads through to the store and keeps a copy of everything read.
struct RecordingSource<'a> {
    inner: StoreSource<'a>,
    seen: RefCell<HashSet<Digest>>,
    nodes: RefCell<Vec<Vec<u8>>>,
    proofs: RefCell<BTreeMap<u64, Vec<u8>>>,
    failure: RefCell<Option<String>>,
}

impl RecordingSource<'_> {
    fn note_failure<T>(&self, r: Result<T, FetchError>) -> Result<T, FetchError> {
        if let Err(FetchError::Missing(d) | FetchError::Corrupt(d)) = &r {
            self.failure.borrow_mut().get_or_insert_with(|| d.clone());
        }
        r
    }
}

impl AuditSource for RecordingSource<'_> {
    fn node(&self, digest: &Digest) -> Result<Vec<u8>, FetchError> {
        let bytes = self.note_failure(self.inner.node(digest))?;
        if self.seen.borrow_mut().insert(*digest) {
            self.nodes.borrow_mut().push(bytes.clone());
        }
        Ok(bytes)
    }

    fn proof(&self, id_key: &Digest, round: u64) -> Result<Option<Vec<u8>>, FetchError> {
        let proof = self.note_failure(self.inner.proof(id_key, round))?;
        if let Some(bytes) = &proof {
            self.proofs.borrow_mut().insert(round, bytes.clone());
        }
        Ok(proof)
    }
}

/// Collects everything an audit of `id` over rounds `0..=up_to_round`
/// reads from the store.
pub fn make_audit_proof(
    params: &TrieParams,
    id: &[u8],
    up_to_round: u64,
    roots: &[Digest],
    store: &dyn ObjectStore,
) -> Result<AuditProof, BundleError> {
    if up_to_round >= roots.len() as u64 {
        return Err(BundleError::RoundOutOfRange {
            up_to_round,
            height: roots.len() as u64,
        });
    }
    let id_key = params.alg.hash(id);
    let source = RecordingSource {
        inner: StoreSource(store),
        seen: RefCell::default(),
        nodes: RefCell::default(),
        proofs: RefCell::default(),
        failure: RefCell::default(),
    };
    run_audit(params, id_key, None, &roots[..=up_to_round as usize], &source);
    if let Some(detail) = source.failure.into_inner() {
        return Err(BundleError::CannotConstruct(detail));
    }
    Ok(AuditProof {
        params: *params,
        id_key,
        up_to_round,
        nodes: source.nodes.into_inner(),
        proofs: source.proofs.into_inner().into_iter().collect(),
    })
}

/// Serves reads from a bundle and tracks which entries were used.
struct BundleSource {
    id_key: Digest,
    nodes: HashMap<Digest, Vec<u8>>,
    proofs: HashMap<u64, Vec<u8>>,
    used_nodes: RefCell<HashSet<Digest>>,
    used_proofs: RefCell<HashSet<u64>>,
}

impl AuditSource for BundleSource {
    fn node(&self, digest: &Digest) -> Result<Vec<u8>, FetchError> {
        match self.nodes.get(digest) {
            Some(bytes) => {
                self.used_nodes.borrow_mut().insert(*digest);
                Ok(bytes.clone())
            }
            None => Err(FetchError::Missing(format!("node {digest} not in audit proof"))),
        }
    }

    fn proof(&self, id_key: &Digest, round: u64) -> Result<Option<Vec<u8>>, FetchError> {
        if *id_key != self.id_key {
            return Ok(None);
        }
        let proof = self.proofs.get(&round).cloned();
        if proof.is_some() {
            self.used_proofs.borrow_mut().insert(round);
        }
        Ok(proof)
    }
}

fn bundle_source(proof: &AuditProof) -> Result<BundleSource, String> {
    let mut nodes = HashMap::new();
    for bytes in &proof.nodes {
        if nodes.insert(proof.alg().hash(bytes), bytes.clone()).is_some() {
            return Err("duplicate node".into());
        }
    }
    let mut proofs = HashMap::new();
    for (round, bytes) in &proof.proofs {
        if *round > proof.up_to_round {
            return Err(format!("proof for round {round} beyond the covered range"));
        }
        if proofs.insert(*round, bytes.clone()).is_some() {
            return Err(format!("duplicate proof for round {round}"));
        }
    }
    Ok(BundleSource {
        id_key: proof.id_key,
        nodes,
        proofs,
        used_nodes: RefCell::default(),
        used_proofs: RefCell::default(),
    })
}

/// Re-runs the audit of `id` using only `proof` and the published roots.
/// Rounds published after `proof.up_to_round` are reported as not covered.
pub fn verify_audit_proof(proof: &AuditProof, id: &[u8], claim: Option<&Claim>, roots: &[Digest]) -> AuditReport {
    let id_key = proof.alg().hash(id);
    if id_key != proof.id_key {
        return AuditReport::unreadable(id_key, Outcome::fail(None, "audit proof is for a different ledger"));
    }
    let source = match bundle_source(proof) {
        Ok(s) => s,
        Err(d) => return AuditReport::unreadable(id_key, Outcome::fail(None, d)),
    };
    let height = roots.len() as u64;
    let covered = proof.up_to_round.saturating_add(1).min(height) as usize;
    let mut report = run_audit(&proof.params, id_key, claim, &roots[..covered], &source);
    if proof.up_to_round >= height {
        report.chain_match.absorb(Outcome::fail(
            proof.up_to_round,
            format!("audit proof covers rounds beyond the published height {height}"),
        ));
    }
    if (covered as u64) < height {
        report.not_covered = Some(covered as u64..height);
    }
    let unused_nodes = source.nodes.len() - source.used_nodes.borrow().len();
    let unused_proofs = source.proofs.len() - source.used_proofs.borrow().len();
    report.bundle = if unused_nodes + unused_proofs > 0 {
        Outcome::fail(
            None,
            format!("{unused_nodes} nodes and {unused_proofs} proofs in the bundle were not needed"),
        )
    } else {
        Outcome::Pass
    };
    report
}

/// Parses and verifies a serialized bundle. A truncated bundle is
/// inconclusive; any other decoding problem is a failure.
pub fn verify_audit_proof_bytes(bytes: &[u8], id: &[u8], claim: Option<&Claim>, roots: &[Digest]) -> AuditReport {
    match AuditProof::from_bytes(bytes) {
        Ok(proof) => verify_audit_proof(&proof, id, claim, roots),
        Err(e) => {
            let alg = match roots.first().map(Digest::len) {
                Some(64) => HashAlg::Sha512,
                _ => HashAlg::Sha256,
            };
            let outcome = match e {
                BundleError::Truncated => Outcome::inconclusive(None, e.to_string()),
                _ => Outcome::fail(None, e.to_string()),
            };
            AuditReport::unreadable(alg.hash(id), outcome)
        }
    }
}
