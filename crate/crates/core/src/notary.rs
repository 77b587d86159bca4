//! The periodic notarization procedure.
//!
//! A round takes an immutable snapshot of every ledger, publishes a
//! consistency proof for each previously notarized ledger whose digest
//! moved, writes the next trie version chained to the previous root, and
//! appends exactly one record to the chain.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{Chain, ChainError, NotarizationRecord};
use crate::crypto::{Digest, HashAlg};
use crate::merkle_ledger::{verify_consistency, ConsistencyProof, Ledger, LedgerError};
use crate::store::{ObjectStore, ProofIndexEntry, StoreError};
use crate::trie::{build, update, TrieError, TrieParams, TrieVersion};

#[derive(Debug, Error)]
pub enum NotaryError {
    #[error("ledger {0} was notarized before and is missing from the snapshot")]
    NoRemoval(String),
    #[error("ledger {id} does not extend its notarized history: {detail}")]
    Fork { id: String, detail: String },
    #[error("ledger {0} appears twice in the snapshot")]
    DuplicateLedger(String),
    #[error("ledger {id} uses {got}, notary uses {expected}")]
    AlgMismatch { id: String, expected: HashAlg, got: HashAlg },
    #[error("notary is at round {round} but the chain has height {height}")]
    OutOfSync { round: u64, height: u64 },
    #[error("nothing to notarize: the snapshot holds no ledgers")]
    EmptySnapshot,
    #[error(transparent)]
    Trie(#[from] TrieError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// What the notary remembers about a registered ledger from the last round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    #[serde(with = "hex_bytes")]
    pub id: Vec<u8>,
    pub digest: Digest,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotaryState {
    pub params: TrieParams,
    /// Keyed by the hash of the ledger id. Only ever grows.
    pub registry: BTreeMap<Digest, RegistryEntry>,
    /// Root of the last published version; the zero sentinel before round 0.
    pub last_root: Digest,
    /// Sequence number of the next round.
    pub round: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundReport {
    pub record: NotarizationRecord,
    pub new_nodes: usize,
    pub proofs_published: usize,
    pub new_ledgers: usize,
    pub changed_ledgers: usize,
}

fn hex_id(id: &[u8]) -> String {
    hex::encode(id)
}

/// Publishes the consistency proof linking a registered ledger's previous
/// digest to its current state and indexes it under `round`.
fn publish_proof(
    store: &dyn ObjectStore,
    id_key: Digest,
    round: u64,
    previous: &RegistryEntry,
    ledger: &Ledger,
) -> Result<(), NotaryError> {
    let fork = |detail: String| NotaryError::Fork {
        id: hex_id(ledger.id()),
        detail,
    };
    if ledger.len() < previous.size {
        return Err(fork(format!(
            "shrank from {} to {} blocks",
            previous.size,
            ledger.len()
        )));
    }
    if ledger.root_at(previous.size)? != previous.digest {
        return Err(fork(format!("first {} blocks were rewritten", previous.size)));
    }
    let proof = if previous.size == 0 {
        ConsistencyProof::from_empty(ledger.len())
    } else {
        ledger.prove_consistency(previous.size, ledger.len())?
    };
    debug_assert!(verify_consistency(
        ledger.alg(),
        &previous.digest,
        &ledger.root(),
        &proof
    ));
    let address = store.put(&proof.to_bytes())?;
    store.index_proof(ProofIndexEntry {
        ledger_id_key: id_key,
        round,
        proof_address: address,
    })?;
    Ok(())
}

impl NotaryState {
    pub fn new(params: TrieParams) -> Self {
        NotaryState {
            params,
            registry: BTreeMap::new(),
            last_root: params.alg.zero(),
            round: 0,
        }
    }

    pub fn alg(&self) -> HashAlg {
        self.params.alg
    }

    pub fn current_version(&self) -> Option<TrieVersion> {
        (!self.last_root.is_zero()).then(|| TrieVersion::new(self.params, self.last_root))
    }

    /// Runs one notarization round over `ledgers` and returns the advanced
    /// state. `self` is left untouched, so a failed round can be retried.
    pub fn notarize_round<'a>(
        &self,
        ledgers: impl IntoIterator<Item = &'a Ledger>,
        store: &dyn ObjectStore,
        chain: &mut Chain,
    ) -> Result<(NotaryState, RoundReport), NotaryError> {
        if chain.height() != self.round {
            return Err(NotaryError::OutOfSync {
                round: self.round,
                height: chain.height(),
            });
        }
        let mut snapshot: BTreeMap<Digest, &Ledger> = BTreeMap::new();
        for ledger in ledgers {
            if ledger.alg() != self.alg() {
                return Err(NotaryError::AlgMismatch {
                    id: hex_id(ledger.id()),
                    expected: self.alg(),
                    got: ledger.alg(),
                });
            }
            if snapshot.insert(ledger.id_key(), ledger).is_some() {
                return Err(NotaryError::DuplicateLedger(hex_id(ledger.id())));
            }
        }
        if snapshot.is_empty() {
            return Err(NotaryError::EmptySnapshot);
        }
        if let Some(missing) = self.registry.iter().find(|(k, _)| !snapshot.contains_key(*k)) {
            return Err(NotaryError::NoRemoval(hex_id(&missing.1.id)));
        }

        let mut next = self.clone();
        let mut changes = Vec::new();
        let mut report = RoundReport {
            record: NotarizationRecord {
                seq: self.round,
                trie_root: self.alg().zero(),
                note: Vec::new(),
            },
            new_nodes: 0,
            proofs_published: 0,
            new_ledgers: 0,
            changed_ledgers: 0,
        };
        for (&id_key, ledger) in &snapshot {
            let digest = ledger.root();
            match self.registry.get(&id_key) {
                Some(previous) if previous.digest == digest => {}
                Some(previous) => {
                    publish_proof(store, id_key, self.round, previous, ledger)?;
                    report.proofs_published += 1;
                    report.changed_ledgers += 1;
                    changes.push((id_key, digest));
                }
                None => {
                    report.new_ledgers += 1;
                    changes.push((id_key, digest));
                }
            }
            next.registry.insert(
                id_key,
                RegistryEntry {
                    id: ledger.id().to_vec(),
                    digest,
                    size: ledger.len(),
                },
            );
        }

        let commit = match self.current_version() {
            None => build(
                store,
                &self.params,
                next.registry.iter().map(|(k, e)| (*k, e.digest)),
                &self.last_root,
            )?,
            Some(prev) if changes.is_empty() => {
                // Nothing moved: re-affirm every association so only the root is rewritten.
                update(store, &prev, next.registry.iter().map(|(k, e)| (*k, Some(e.digest))))?
            }
            Some(prev) => update(store, &prev, changes.into_iter().map(|(k, d)| (k, Some(d))))?,
        };
        report.new_nodes = commit.new_nodes;
        report.record.trie_root = commit.version.root;
        chain.publish(report.record.clone())?;

        next.last_root = commit.version.root;
        next.round += 1;
        Ok((next, report))
    }
}

/// Single-ledger mode: the chain carries the ledger's own Merkle head, and
/// the note carries the consistency proof from the previous record.
/// `prev` is the previously notarized `(head, size)`, if any.
pub fn notarize_single(
    ledger: &Ledger,
    prev: Option<(Digest, u64)>,
    chain: &mut Chain,
) -> Result<NotarizationRecord, NotaryError> {
    let note = match prev {
        None => Vec::new(),
        Some((digest, size)) => {
            let fork = |detail: String| NotaryError::Fork {
                id: hex_id(ledger.id()),
                detail,
            };
            if size > ledger.len() {
                return Err(fork(format!("shrank from {size} to {} blocks", ledger.len())));
            }
            if ledger.root_at(size)? != digest {
                return Err(fork(format!("first {size} blocks were rewritten")));
            }
            let proof = if size == 0 {
                ConsistencyProof::from_empty(ledger.len())
            } else {
                ledger.prove_consistency(size, ledger.len())?
            };
            proof.to_bytes()
        }
    };
    let record = NotarizationRecord {
        seq: chain.height(),
        trie_root: ledger.root(),
        note,
    };
    chain.publish(record.clone())?;
    Ok(record)
}

/// Checks a single-ledger chain: every record after the first must carry
/// a proof that its head extends the previous one.
pub fn verify_single_chain(alg: HashAlg, records: &[NotarizationRecord]) -> bool {
    records.windows(2).all(|w| {
        ConsistencyProof::from_bytes(alg, &w[1].note)
            .map(|p| verify_consistency(alg, &w[0].trie_root, &w[1].trie_root, &p))
            .unwrap_or(false)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::MemoryStore;

    const ALG: HashAlg = HashAlg::Sha256;

    fn params() -> TrieParams {
        TrieParams::new(4, 2, ALG).unwrap()
    }

    fn ledger(id: &str, blocks: usize) -> Ledger {
        let mut l = Ledger::new(ALG, id.as_bytes().to_vec());
        for i in 0..blocks {
            l.append(format!("{id}-{i}").into_bytes());
        }
        l
    }

    #[test]
    fn first_round_minimal() {
        let store = MemoryStore::new(ALG);
        let mut chain = Chain::in_memory(ALG);
        let state = NotaryState::new(params());
        let l = ledger("a", 0);
        let (state, report) = state.notarize_round([&l], &store, &mut chain).unwrap();
        assert_eq!(chain.height(), 1);
        assert_eq!(state.round, 1);
        assert_eq!(report.new_nodes, 1);
        assert_eq!(report.proofs_published, 0);
        let v = state.current_version().unwrap();
        assert_eq!(v.lookup(&store, &l.id_key()).unwrap(), Some(ALG.hash(b"")));
    }

    #[test]
    fn quiet_round_only_rechains() {
        let store = MemoryStore::new(ALG);
        let mut chain = Chain::in_memory(ALG);
        let ledgers: Vec<Ledger> = (0..20).map(|i| ledger(&format!("l{i}"), i % 3)).collect();
        let (s1, _) = NotaryState::new(params()).notarize_round(&ledgers, &store, &mut chain).unwrap();
        let (s2, report) = s1.notarize_round(&ledgers, &store, &mut chain).unwrap();
        assert_eq!(report.proofs_published, 0);
        assert_eq!(report.new_nodes, 1);
        let a = s1.current_version().unwrap().root_node(&store).unwrap();
        let b = s2.current_version().unwrap().root_node(&store).unwrap();
        assert_eq!(a.body, b.body);
        assert_eq!(b.prev_root, Some(s1.last_root));
        assert!(store.proof_entries().is_empty());
    }

    #[test]
    fn changes_publish_proofs() {
        let store = MemoryStore::new(ALG);
        let mut chain = Chain::in_memory(ALG);
        let mut a = ledger("a", 0);
        let mut b = ledger("b", 2);
        let (s1, _) = NotaryState::new(params()).notarize_round([&a, &b], &store, &mut chain).unwrap();
        let old_a = a.root();
        let old_b = b.root();
        a.append(b"x".to_vec());
        b.append(b"y".to_vec());
        let c = ledger("c", 1);
        let (s2, report) = s1.notarize_round([&a, &b, &c], &store, &mut chain).unwrap();
        assert_eq!(report.proofs_published, 2);
        assert_eq!(report.new_ledgers, 1);
        for (l, old) in [(&a, old_a), (&b, old_b)] {
            let addr = store.find_proof(&l.id_key(), 1).unwrap().unwrap();
            let proof = ConsistencyProof::from_bytes(ALG, &store.get(&addr).unwrap()).unwrap();
            assert!(verify_consistency(ALG, &old, &l.root(), &proof));
        }
        assert!(store.find_proof(&c.id_key(), 1).unwrap().is_none());
        assert_eq!(s2.registry.len(), 3);
        assert!(s1.registry.keys().all(|k| s2.registry.contains_key(k)));
    }

    #[test]
    fn removal_and_fork_are_rejected() {
        let store = MemoryStore::new(ALG);
        let mut chain = Chain::in_memory(ALG);
        let a = ledger("a", 3);
        let b = ledger("b", 1);
        let (s1, _) = NotaryState::new(params()).notarize_round([&a, &b], &store, &mut chain).unwrap();
        assert!(matches!(
            s1.notarize_round([&a], &store, &mut chain),
            Err(NotaryError::NoRemoval(_))
        ));
        let shrunk = ledger("a", 2);
        assert!(matches!(
            s1.notarize_round([&shrunk, &b], &store, &mut chain),
            Err(NotaryError::Fork { .. })
        ));
        let mut rewritten = a.clone();
        rewritten.rewrite_block(0, b"evil".to_vec());
        rewritten.append(b"more".to_vec());
        assert!(matches!(
            s1.notarize_round([&rewritten, &b], &store, &mut chain),
            Err(NotaryError::Fork { .. })
        ));
        assert!(matches!(
            s1.notarize_round([&a, &a, &b], &store, &mut chain),
            Err(NotaryError::DuplicateLedger(_))
        ));
        assert_eq!(chain.height(), 1);
        let other = Ledger::new(HashAlg::Sha512, b"z".to_vec());
        assert!(matches!(
            s1.notarize_round([&a, &b, &other], &store, &mut chain),
            Err(NotaryError::AlgMismatch { .. })
        ));
    }

    #[test]
    fn out_of_sync_chain() {
        let store = MemoryStore::new(ALG);
        let mut chain = Chain::in_memory(ALG);
        let a = ledger("a", 1);
        let state = NotaryState::new(params());
        state.notarize_round([&a], &store, &mut chain).unwrap();
        assert!(matches!(
            state.notarize_round([&a], &store, &mut chain),
            Err(NotaryError::OutOfSync { .. })
        ));
    }

    #[test]
    fn state_serde_round_trip() {
        let store = MemoryStore::new(ALG);
        let mut chain = Chain::in_memory(ALG);
        let a = ledger("a\u{0}b", 4);
        let (state, _) = NotaryState::new(params()).notarize_round([&a], &store, &mut chain).unwrap();
        let json = serde_json::to_string(&state).unwrap();
        assert_eq!(serde_json::from_str::<NotaryState>(&json).unwrap(), state);
    }

    #[test]
    fn single_ledger_mode() {
        let mut chain = Chain::in_memory(ALG);
        let mut l = ledger("solo", 4);
        let r0 = notarize_single(&l, None, &mut chain).unwrap();
        assert!(r0.note.is_empty());
        for _ in 0..4 {
            l.append(b"more".to_vec());
        }
        let r1 = notarize_single(&l, Some((r0.trie_root, 4)), &mut chain).unwrap();
        let proof = ConsistencyProof::from_bytes(ALG, &r1.note).unwrap();
        assert_eq!((proof.old_size, proof.new_size), (4, 8));
        assert!(proof.path.len() <= 4);
        assert!(verify_single_chain(ALG, chain.records()));
        let shorter = ledger("solo", 2);
        assert!(notarize_single(&shorter, Some((r1.trie_root, 8)), &mut chain).is_err());
    }

    #[test]
    fn single_ledger_oversize_note() {
        // SHA-512 proofs of 16+ digests exceed the note once the head is counted.
        let alg = HashAlg::Sha512;
        let mut chain = Chain::in_memory(alg);
        let mut l = Ledger::new(alg, b"big".to_vec());
        for i in 0..(1u32 << 16) + 1 {
            l.append(i.to_be_bytes().to_vec());
        }
        let old = 40_961u64;
        let prev = l.root_at(old).unwrap();
        let proof = l.prove_consistency(old, l.len()).unwrap();
        assert!(16 + proof.path.len() * 64 + 64 > 1024);
        assert!(matches!(
            notarize_single(&l, Some((prev, old)), &mut chain),
            Err(NotaryError::Chain(ChainError::OversizeNote(_)))
        ));
    }

    #[test]
    fn daily_rounds_one_record_each() {
        let store = MemoryStore::new(ALG);
        let mut chain = Chain::in_memory(ALG);
        let mut ledgers: Vec<Ledger> = (0..50).map(|i| ledger(&format!("d{i}"), 1)).collect();
        let mut state = NotaryState::new(params());
        for day in 0..365usize {
            ledgers[day % 50].append(b"update".to_vec());
            state = state.notarize_round(&ledgers, &store, &mut chain).unwrap().0;
        }
        assert_eq!(chain.height(), 365);
    }
}
