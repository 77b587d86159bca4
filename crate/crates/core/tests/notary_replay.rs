//! Replays a multi-round notarization from raw ledger snapshots and checks
//! every published artifact against values recomputed from scratch.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trienotary::chain::Chain;
use trienotary::merkle_ledger::{verify_consistency, ConsistencyProof, Ledger};
use trienotary::notary::NotaryState;
use trienotary::store::{MemoryStore, ObjectStore};
use trienotary::trie::{build, TrieParams, TrieVersion};
use trienotary::{Digest, HashAlg};

const ALG: HashAlg = HashAlg::Sha256;

fn history(seed: u64) -> Vec<Vec<Ledger>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ledgers: Vec<Ledger> = (0..100).map(|i| Ledger::new(ALG, format!("replay-{i}").into_bytes())).collect();
    let mut rounds = Vec::new();
    for round in 0..3 {
        for ledger in &mut ledgers {
            if rng.gen_bool(0.4) {
                for _ in 0..rng.gen_range(1..4) {
                    ledger.append(format!("r{round}-{}", rng.gen::<u32>()).into_bytes());
                }
            }
        }
        rounds.push(ledgers.clone());
    }
    rounds
}

#[test]
fn replay_matches_published_artifacts() {
    let params = TrieParams::new(4, 2, ALG).unwrap();
    let snapshots = history(3);
    let store = MemoryStore::new(ALG);
    let mut chain = Chain::in_memory(ALG);
    let mut state = NotaryState::new(params);
    for snapshot in &snapshots {
        state = state.notarize_round(snapshot, &store, &mut chain).unwrap().0;
    }
    assert_eq!(chain.height(), 3);

    let scratch = MemoryStore::new(ALG);
    let mut prev = ALG.zero();
    let mut previous: BTreeMap<Digest, Digest> = BTreeMap::new();
    let mut checked = 0;
    for (round, snapshot) in snapshots.iter().enumerate() {
        let current: BTreeMap<Digest, Digest> = snapshot.iter().map(|l| (l.id_key(), l.root())).collect();
        let expected = build(&scratch, &params, current.clone(), &prev).unwrap().version.root;
        assert_eq!(chain.records()[round].trie_root, expected, "round {round}");
        assert!(chain.records()[round].note.is_empty());

        for ledger in snapshot {
            let key = ledger.id_key();
            let indexed = store.find_proof(&key, round as u64).unwrap();
            match previous.get(&key) {
                Some(old) if *old != ledger.root() => {
                    let bytes = store.get(&indexed.expect("changed ledger has a proof")).unwrap();
                    let proof = ConsistencyProof::from_bytes(ALG, &bytes).unwrap();
                    assert!(verify_consistency(ALG, old, &ledger.root(), &proof));
                    assert_eq!(proof.new_size, ledger.len());
                    checked += 1;
                }
                _ => assert!(indexed.is_none()),
            }
            let version = TrieVersion::new(params, expected);
            assert_eq!(version.lookup(&store, &key).unwrap(), Some(ledger.root()));
        }
        previous = current;
        prev = expected;
    }
    assert!(checked > 50);
}

#[test]
fn replay_is_bitwise_deterministic() {
    let params = TrieParams::new(2, 3, ALG).unwrap();
    let run = || {
        let store = MemoryStore::new(ALG);
        let mut chain = Chain::in_memory(ALG);
        let mut state = NotaryState::new(params);
        for snapshot in history(4) {
            state = state.notarize_round(&snapshot, &store, &mut chain).unwrap().0;
        }
        let mut addresses = store.addresses();
        addresses.sort();
        (chain.render(), addresses, store.proof_entries())
    };
    assert_eq!(run(), run());
}

#[test]
fn registry_only_grows() {
    let params = TrieParams::new(8, 1, ALG).unwrap();
    let store = MemoryStore::new(ALG);
    let mut chain = Chain::in_memory(ALG);
    let mut state = NotaryState::new(params);
    let snapshots = history(5);
    let mut seen = 0;
    for (round, snapshot) in snapshots.iter().enumerate() {
        let present = &snapshot[..(round + 1) * 30];
        state = state.notarize_round(present, &store, &mut chain).unwrap().0;
        assert!(state.registry.len() >= seen);
        seen = state.registry.len();
        assert_eq!(seen, present.len());
    }
}
