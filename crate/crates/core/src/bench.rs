//! Structural benchmark over (arity, leaf capacity, ledger count) cells.

use std::collections::HashSet;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crypto::{Digest, HashAlg};
use crate::trie::{measure, Measurements, TrieError, TrieParams, Tuple};

pub const CSV_HEADER: &str = "r,k,ledgers,nodes,path_min,path_max,path_avg,total_bytes,total_paper_bits,path_avg_bytes";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub arities: Vec<u16>,
    pub capacities: Vec<u16>,
    pub ledger_counts: Vec<u64>,
    pub seed: u64,
    pub alg: HashAlg,
    /// Cells whose working set would exceed this many bytes are not run.
    pub memory_budget: Option<u64>,
}

impl BenchConfig {
    pub fn cells(&self) -> impl Iterator<Item = (u16, u16, u64)> + '_ {
        self.arities.iter().flat_map(move |&r| {
            self.capacities
                .iter()
                .flat_map(move |&k| self.ledger_counts.iter().map(move |&n| (r, k, n)))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub arity: u16,
    pub leaf_capacity: u16,
    pub ledgers: u64,
    pub stats: Measurements,
}

impl BenchRow {
    pub fn to_csv(&self) -> String {
        let m = &self.stats;
        format!(
            "{},{},{},{},{},{},{:.4},{},{},{:.2}",
            self.arity,
            self.leaf_capacity,
            self.ledgers,
            m.nodes_count,
            m.path_min,
            m.path_max,
            m.path_avg,
            m.total_size_bytes,
            m.total_size_paper_bits,
            m.avg_path_size_bytes
        )
    }
}

/// `n` associations `hash(id) -> hash(id || "v")` for distinct ids
/// `ledger-<x>`, with `x` drawn from the seeded generator.
pub fn bench_associations(alg: HashAlg, n: u64, seed: u64) -> impl Iterator<Item = (Digest, Digest)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(n as usize);
    std::iter::from_fn(move || loop {
        let x: u64 = rng.gen();
        if seen.insert(x) {
            return Some(x);
        }
    })
    .take(n as usize)
    .map(move |x| {
        let id = format!("ledger-{x}");
        (alg.hash(id.as_bytes()), alg.hash_parts(&[id.as_bytes(), b"v"]))
    })
}

/// Rough peak working set of one cell: the sorted tuples plus the id set.
pub fn estimated_bytes(n: u64) -> u64 {
    n * (std::mem::size_of::<Tuple>() as u64 + 24)
}

pub fn run_cell(alg: HashAlg, r: u16, k: u16, n: u64, seed: u64) -> Result<BenchRow, TrieError> {
    let params = TrieParams::new(r, k, alg)?;
    let stats = measure(&params, bench_associations(alg, n, seed))?;
    Ok(BenchRow {
        arity: r,
        leaf_capacity: k,
        ledgers: n,
        stats,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Trie(#[from] TrieError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Runs every cell in configuration order, writing the CSV as it goes.
/// A cell over the memory budget ends the table with a `# truncated` line.
pub fn run_bench(config: &BenchConfig, out: &mut dyn Write) -> Result<Vec<BenchRow>, BenchError> {
    writeln!(out, "{CSV_HEADER}")?;
    let mut rows = Vec::new();
    for (r, k, n) in config.cells() {
        if let Some(budget) = config.memory_budget {
            let need = estimated_bytes(n);
            if need > budget {
                writeln!(
                    out,
                    "# truncated at r={r} k={k} ledgers={n}: needs about {need} bytes, budget {budget}"
                )?;
                break;
            }
        }
        let row = run_cell(config.alg, r, k, n, config.seed)?;
        writeln!(out, "{}", row.to_csv())?;
        rows.push(row);
    }
    out.flush()?;
    Ok(rows)
}
