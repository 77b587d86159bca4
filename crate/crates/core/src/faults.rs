//! Fault injection for audit testing. Each injector models one way a
//! dishonest or unreliable notary can corrupt a ledger's history.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::chain::{Chain, ChainError, NotarizationRecord};
use crate::crypto::Digest;
use crate::merkle_ledger::Ledger;
use crate::notary::{NotaryError, NotaryState};
use crate::store::{ObjectStore, RawAccess, StoreError};
use crate::trie::{build, update, TrieError, TrieVersion};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultClass {
    /// A round whose trie omits a previously notarized ledger.
    KeyRemoval,
    /// A round assigning the ledger a rewritten history with no proof.
    ForkWithoutProof,
    /// A published root that does not match the stored version chain.
    ChainRootMismatch,
    /// A stored trie node on the ledger's search path is damaged.
    CorruptNode,
    /// A stored consistency proof for the ledger is damaged.
    CorruptProof,
}

impl FaultClass {
    pub const ALL: [FaultClass; 5] = [
        FaultClass::KeyRemoval,
        FaultClass::ForkWithoutProof,
        FaultClass::ChainRootMismatch,
        FaultClass::CorruptNode,
        FaultClass::CorruptProof,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FaultClass::KeyRemoval => "key-removal",
            FaultClass::ForkWithoutProof => "fork-without-proof",
            FaultClass::ChainRootMismatch => "chain-root-mismatch",
            FaultClass::CorruptNode => "corrupt-node",
            FaultClass::CorruptProof => "corrupt-proof",
        }
    }
}

impl fmt::Display for FaultClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FaultClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FaultClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown fault class {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FaultError {
    #[error("fault not applicable: {0}")]
    NotApplicable(String),
    #[error(transparent)]
    Notary(#[from] NotaryError),
    #[error(transparent)]
    Trie(#[from] TrieError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

fn publish(state: &NotaryState, root: Digest, chain: &mut Chain) -> Result<NotaryState, FaultError> {
    chain.publish(NotarizationRecord {
        seq: state.round,
        trie_root: root,
        note: Vec::new(),
    })?;
    let mut next = state.clone();
    next.last_root = root;
    next.round += 1;
    Ok(next)
}

/// Publishes a round whose trie holds every registered ledger except
/// `victim`. The registry is left untouched.
pub fn remove_key(
    state: &NotaryState,
    victim: &Digest,
    store: &dyn ObjectStore,
    chain: &mut Chain,
) -> Result<NotaryState, FaultError> {
    if !state.registry.contains_key(victim) {
        return Err(FaultError::NotApplicable(format!("{victim} is not registered")));
    }
    let rest: Vec<(Digest, Digest)> = state
        .registry
        .iter()
        .filter(|(k, _)| *k != victim)
        .map(|(k, e)| (*k, e.digest))
        .collect();
    if rest.is_empty() {
        return Err(FaultError::NotApplicable("the victim is the only registered ledger".into()));
    }
    let commit = build(store, &state.params, rest, &state.last_root)?;
    publish(state, commit.version.root, chain)
}

/// A copy of `ledger` with its first block rewritten and one block added,
/// so it no longer extends the original.
pub fn forked_copy(ledger: &Ledger) -> Ledger {
    let mut fork = ledger.clone();
    if fork.is_empty() {
        fork.append(b"forged".to_vec());
    } else {
        let mut payload = fork.blocks()[0].payload().to_vec();
        payload.push(0xff);
        fork.rewrite_block(0, payload);
    }
    fork.append(b"forged".to_vec());
    fork
}

/// Publishes a round assigning `victim` the digest of [`forked_copy`]
/// without storing a consistency proof. The returned state tracks the fork.
pub fn fork_without_proof(
    state: &NotaryState,
    victim: &Ledger,
    store: &dyn ObjectStore,
    chain: &mut Chain,
) -> Result<NotaryState, FaultError> {
    let prev = state
        .current_version()
        .ok_or_else(|| FaultError::NotApplicable("nothing notarized yet".into()))?;
    let key = victim.id_key();
    if !state.registry.contains_key(&key) {
        return Err(FaultError::NotApplicable("victim is not registered".into()));
    }
    let fork = forked_copy(victim);
    let commit = update(store, &prev, [(key, Some(fork.root()))])?;
    let mut next = publish(state, commit.version.root, chain)?;
    if let Some(entry) = next.registry.get_mut(&key) {
        entry.digest = fork.root();
        entry.size = fork.len();
    }
    Ok(next)
}

/// Replaces the published root of `round` with the root of another round.
pub fn swap_published_root(roots: &mut [Digest], round: usize, rng: &mut impl Rng) -> Result<(), FaultError> {
    if roots.len() < 2 || round >= roots.len() {
        return Err(FaultError::NotApplicable("needs at least two published rounds".into()));
    }
    let mut other = rng.gen_range(0..roots.len() - 1);
    if other >= round {
        other += 1;
    }
    roots[round] = roots[other];
    Ok(())
}

/// Rewrites the root digest of record `seq` in a chain journal's text.
pub fn rewrite_journal_root(journal: &str, seq: u64, root: &Digest) -> Result<String, FaultError> {
    let mut found = false;
    let lines: Vec<String> = journal
        .lines()
        .map(|line| {
            let mut parts = line.splitn(3, ' ');
            let (s, _, note) = (parts.next(), parts.next(), parts.next());
            if s == Some(seq.to_string().as_str()) {
                found = true;
                format!("{seq} {} {}", root.to_hex(), note.unwrap_or(""))
            } else {
                line.to_string()
            }
        })
        .collect();
    if !found {
        return Err(FaultError::NotApplicable(format!("no record with sequence {seq}")));
    }
    Ok(lines.into_iter().map(|l| l + "\n").collect())
}

fn flip_byte<S: RawAccess + ?Sized>(store: &S, address: &Digest, rng: &mut impl Rng) -> Result<(), FaultError> {
    let mut bytes = store.read_raw(address)?;
    if bytes.is_empty() {
        bytes.push(0);
    } else {
        let at = rng.gen_range(0..bytes.len());
        bytes[at] ^= 1 << rng.gen_range(0..8);
    }
    store.overwrite_raw(address, &bytes)?;
    Ok(())
}

/// Damages one node on `key`'s search path in `version` and returns its address.
pub fn corrupt_path_node<S: ObjectStore + RawAccess>(
    store: &S,
    version: &TrieVersion,
    key: &Digest,
    rng: &mut impl Rng,
) -> Result<Digest, FaultError> {
    let path = version.search_path(store, key)?;
    let step = &path[rng.gen_range(0..path.len())];
    let address = version.params.alg.hash(&step.node);
    flip_byte(store, &address, rng)?;
    Ok(address)
}

/// Damages the consistency proof indexed for `key` at some round below
/// `height` and returns that round.
pub fn corrupt_stored_proof<S: ObjectStore + RawAccess>(
    store: &S,
    key: &Digest,
    height: u64,
    rng: &mut impl Rng,
) -> Result<u64, FaultError> {
    let mut indexed = Vec::new();
    for round in 0..height {
        if let Some(address) = store.find_proof(key, round)? {
            indexed.push((round, address));
        }
    }
    if indexed.is_empty() {
        return Err(FaultError::NotApplicable("no consistency proof stored for the ledger".into()));
    }
    let (round, address) = indexed[rng.gen_range(0..indexed.len())];
    flip_byte(store, &address, rng)?;
    Ok(round)
}
