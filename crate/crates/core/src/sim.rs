//! Seeded end-to-end simulation: a population of ledgers receiving random
//! appends, notarized once per round.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::Chain;
use crate::merkle_ledger::Ledger;
use crate::notary::{NotaryError, NotaryState, RoundReport};
use crate::store::ObjectStore;
use crate::trie::TrieParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub ledgers: usize,
    pub rounds: u64,
    /// Mean number of blocks appended to each ledger per round after the first.
    pub append_rate: f64,
    /// When set, the second half of the ledgers joins at random later rounds.
    pub late_joins: bool,
    pub seed: u64,
    pub params: TrieParams,
}

impl SimConfig {
    pub fn new(params: TrieParams, ledgers: usize, rounds: u64, seed: u64) -> Self {
        SimConfig {
            ledgers,
            rounds,
            append_rate: 1.0,
            late_joins: false,
            seed,
            params,
        }
    }
}

pub fn ledger_id(i: usize) -> Vec<u8> {
    format!("ledger-{i}").into_bytes()
}

fn random_payload(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut payload = vec![0u8; rng.gen_range(8..=48)];
    rng.fill_bytes(&mut payload);
    payload
}

pub struct Simulation {
    pub config: SimConfig,
    rng: ChaCha8Rng,
    active: Vec<Ledger>,
    /// Ledgers waiting to join, with the round they join at.
    pending: Vec<(u64, Ledger)>,
    pub state: NotaryState,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let alg = config.params.alg;
        let mut active = Vec::new();
        let mut pending = Vec::new();
        for i in 0..config.ledgers {
            let mut ledger = Ledger::new(alg, ledger_id(i));
            for _ in 0..rng.gen_range(0..=2) {
                ledger.append(random_payload(&mut rng));
            }
            let late = config.late_joins && config.rounds > 1 && i >= config.ledgers.div_ceil(2);
            if late {
                pending.push((rng.gen_range(1..config.rounds), ledger));
            } else {
                active.push(ledger);
            }
        }
        Simulation {
            config,
            rng,
            active,
            pending,
            state: NotaryState::new(config.params),
        }
    }

    /// Ledgers registered so far, in creation order among the initial set
    /// followed by join order.
    pub fn ledgers(&self) -> &[Ledger] {
        &self.active
    }

    pub fn into_parts(self) -> (NotaryState, Vec<Ledger>) {
        (self.state, self.active)
    }

    pub fn finished(&self) -> bool {
        self.state.round >= self.config.rounds
    }

    /// Applies this round's joins and appends, then notarizes.
    pub fn step(&mut self, store: &dyn ObjectStore, chain: &mut Chain) -> Result<RoundReport, NotaryError> {
        let round = self.state.round;
        if round > 0 {
            let whole = self.config.append_rate.floor() as u64;
            let fraction = self.config.append_rate - whole as f64;
            for ledger in &mut self.active {
                let extra = u64::from(fraction > 0.0 && self.rng.gen_bool(fraction));
                for _ in 0..whole + extra {
                    ledger.append(random_payload(&mut self.rng));
                }
            }
        }
        let (joining, waiting) = std::mem::take(&mut self.pending)
            .into_iter()
            .partition(|(at, _)| *at <= round);
        self.pending = waiting;
        self.active.extend(joining.into_iter().map(|(_, l): (u64, Ledger)| l));

        let (next, report) = self.state.notarize_round(&self.active, store, chain)?;
        self.state = next;
        Ok(report)
    }

    pub fn run(&mut self, store: &dyn ObjectStore, chain: &mut Chain) -> Result<Vec<RoundReport>, NotaryError> {
        let mut reports = Vec::new();
        while !self.finished() {
            reports.push(self.step(store, chain)?);
        }
        Ok(reports)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::HashAlg;
    use crate::store::MemoryStore;
    use crate::trie::{NodeBody, TrieVersion};

    fn config(ledgers: usize, rounds: u64, seed: u64) -> SimConfig {
        SimConfig::new(TrieParams::new(4, 4, HashAlg::Sha256).unwrap(), ledgers, rounds, seed)
    }

    fn run(config: SimConfig) -> (MemoryStore, Chain, Simulation) {
        let store = MemoryStore::new(config.params.alg);
        let mut chain = Chain::in_memory(config.params.alg);
        let mut sim = Simulation::new(config);
        sim.run(&store, &mut chain).unwrap();
        (store, chain, sim)
    }

    #[test]
    fn one_record_per_round() {
        let (_, chain, _) = run(config(10, 3, 1));
        assert_eq!(chain.height(), 3);
    }

    #[test]
    fn same_seed_same_journal() {
        let a = run(config(30, 4, 9));
        let b = run(config(30, 4, 9));
        let c = run(config(30, 4, 10));
        assert_eq!(a.1.render(), b.1.render());
        assert_eq!(a.0.proof_entries(), b.0.proof_entries());
        assert_ne!(a.1.render(), c.1.render());
    }

    #[test]
    fn zero_append_rate_only_rechains() {
        let mut cfg = config(25, 4, 3);
        cfg.append_rate = 0.0;
        let (store, chain, _) = run(cfg);
        let roots = chain.read_roots();
        let bodies: Vec<NodeBody> = roots
            .iter()
            .map(|r| TrieVersion::new(cfg.params, *r).root_node(&store).unwrap().body)
            .collect();
        assert!(bodies.windows(2).all(|w| w[0] == w[1]));
        assert!(roots.windows(2).all(|w| w[0] != w[1]));
        assert!(store.proof_entries().is_empty());
    }

    #[test]
    fn late_joins_arrive() {
        let mut cfg = config(20, 6, 5);
        cfg.late_joins = true;
        let store = MemoryStore::new(cfg.params.alg);
        let mut chain = Chain::in_memory(cfg.params.alg);
        let mut sim = Simulation::new(cfg);
        sim.step(&store, &mut chain).unwrap();
        assert_eq!(sim.ledgers().len(), 10);
        sim.run(&store, &mut chain).unwrap();
        assert_eq!(sim.ledgers().len(), 20);
        assert_eq!(sim.state.registry.len(), 20);
    }
}
