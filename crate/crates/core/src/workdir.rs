//! On-disk deployment: public storage, chain journal, notary state and the
//! notary's copies of the ledgers, all under one directory.
//!
//! ```text
//! <root>/objects/      content-addressed nodes and proofs
//! <root>/proofs.idx    proof index
//! <root>/chain.log     chain journal
//! <root>/notary.json   notary state
//! <root>/ledgers/      one exported ledger per file, named by hex id key
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::chain::{Chain, ChainError, CHAIN_FILE};
use crate::merkle_ledger::{Ledger, LedgerError, PayloadEncoding};
use crate::notary::NotaryState;
use crate::store::{DirStore, StoreError, OBJECTS_DIR, PROOF_INDEX_FILE};
use crate::trie::TrieParams;

pub const STATE_FILE: &str = "notary.json";
pub const LEDGERS_DIR: &str = "ledgers";

const ENTRIES: [&str; 5] = [OBJECTS_DIR, PROOF_INDEX_FILE, CHAIN_FILE, STATE_FILE, LEDGERS_DIR];

#[derive(Debug, Error)]
pub enum WorkdirError {
    #[error("{0} already holds a deployment (use --force to replace it)")]
    Collision(PathBuf),
    #[error("{0} does not hold a deployment")]
    NotFound(PathBuf),
    #[error("bad state file: {0}")]
    State(#[from] serde_json::Error),
    #[error("bad ledger file {path}: {source}")]
    Ledger { path: PathBuf, source: LedgerError },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub struct Workdir {
    root: PathBuf,
    pub store: DirStore,
    pub chain: Chain,
    pub state: NotaryState,
}

impl Workdir {
    /// Sets up a fresh deployment. Existing deployment files are replaced
    /// only with `force`; unrelated files are never touched.
    pub fn create(root: impl AsRef<Path>, params: TrieParams, force: bool) -> Result<Workdir, WorkdirError> {
        let root = root.as_ref().to_path_buf();
        let present: Vec<PathBuf> = ENTRIES.iter().map(|e| root.join(e)).filter(|p| p.exists()).collect();
        if !present.is_empty() {
            if !force {
                return Err(WorkdirError::Collision(root));
            }
            for path in present {
                if path.is_dir() {
                    fs::remove_dir_all(&path)?;
                } else {
                    fs::remove_file(&path)?;
                }
            }
        }
        fs::create_dir_all(root.join(LEDGERS_DIR))?;
        let workdir = Workdir {
            store: DirStore::open(&root, params.alg)?,
            chain: Chain::open(root.join(CHAIN_FILE), params.alg)?,
            state: NotaryState::new(params),
            root,
        };
        workdir.save_state()?;
        Ok(workdir)
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Workdir, WorkdirError> {
        let root = root.as_ref().to_path_buf();
        let state_path = root.join(STATE_FILE);
        if !state_path.is_file() {
            return Err(WorkdirError::NotFound(root));
        }
        let state: NotaryState = serde_json::from_str(&fs::read_to_string(state_path)?)?;
        Ok(Workdir {
            store: DirStore::open(&root, state.alg())?,
            chain: Chain::open(root.join(CHAIN_FILE), state.alg())?,
            state,
            root,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn chain_path(&self) -> PathBuf {
        self.root.join(CHAIN_FILE)
    }

    pub fn save_state(&self) -> Result<(), WorkdirError> {
        let tmp = self.root.join(format!("{STATE_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(&self.state)? + "\n")?;
        fs::rename(tmp, self.root.join(STATE_FILE))?;
        Ok(())
    }

    fn ledger_path(&self, ledger: &Ledger) -> PathBuf {
        self.root.join(LEDGERS_DIR).join(ledger.id_key().to_hex())
    }

    pub fn save_ledger(&self, ledger: &Ledger) -> Result<(), WorkdirError> {
        fs::write(self.ledger_path(ledger), ledger.export(PayloadEncoding::Hex))?;
        Ok(())
    }

    /// Every stored ledger, ordered by id key.
    pub fn load_ledgers(&self) -> Result<Vec<Ledger>, WorkdirError> {
        let dir = self.root.join(LEDGERS_DIR);
        let mut paths: Vec<PathBuf> = match fs::read_dir(&dir) {
            Ok(entries) => entries.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        paths.sort();
        paths
            .into_iter()
            .map(|path| {
                let text = fs::read_to_string(&path)?;
                Ledger::import(&text).map_err(|source| WorkdirError::Ledger { path, source })
            })
            .collect()
    }

    pub fn find_ledger(&self, id: &[u8]) -> Result<Option<Ledger>, WorkdirError> {
        Ok(self.load_ledgers()?.into_iter().find(|l| l.id() == id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::HashAlg;

    fn params() -> TrieParams {
        TrieParams::new(4, 4, HashAlg::Sha256).unwrap()
    }

    #[test]
    fn create_open_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut wd = Workdir::create(dir.path(), params(), false).unwrap();
        let mut ledger = Ledger::new(HashAlg::Sha256, b"acme".to_vec());
        ledger.append(b"\x00\x01".to_vec());
        wd.save_ledger(&ledger).unwrap();
        let (state, _) = wd.state.notarize_round([&ledger], &wd.store, &mut wd.chain).unwrap();
        wd.state = state;
        wd.save_state().unwrap();
        drop(wd);

        let wd = Workdir::open(dir.path()).unwrap();
        assert_eq!(wd.state.round, 1);
        assert_eq!(wd.chain.height(), 1);
        assert_eq!(wd.load_ledgers().unwrap(), vec![ledger.clone()]);
        assert_eq!(wd.find_ledger(b"acme").unwrap(), Some(ledger));
        assert!(wd.find_ledger(b"nope").unwrap().is_none());
    }

    #[test]
    fn collision_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("keep.txt"), "mine").unwrap();
        Workdir::create(dir.path(), params(), false).unwrap();
        assert!(matches!(
            Workdir::create(dir.path(), params(), false),
            Err(WorkdirError::Collision(_))
        ));
        Workdir::create(dir.path(), params(), true).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("keep.txt")).unwrap(), "mine");
    }

    #[test]
    fn open_missing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Workdir::open(dir.path()), Err(WorkdirError::NotFound(_))));
    }
}
