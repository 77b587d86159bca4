//! Notarization of many append-only ledgers under a single chained digest.
//!
//! Each ledger is authenticated by a Merkle tree head. The heads of all
//! ledgers are collected into an authenticated, partially persistent r-ary
//! bitwise trie whose root digest is the only thing written to the public
//! chain. Auditors replay the trie history from storage (or from a
//! self-contained audit proof) to check one ledger's history.

pub mod audit;
pub mod bench;
pub mod chain;
pub mod crypto;
pub mod faults;
pub mod merkle_ledger;
pub mod notary;
pub mod sim;
pub mod store;
pub mod trie;
pub mod workdir;

pub use crypto::{Digest, HashAlg};
