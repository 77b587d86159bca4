//! Content-addressed public storage for trie nodes and consistency proofs.
//!
//! Every object is addressed by the hash of its content and re-verified on
//! each read. A side index maps `(ledger id key, round)` to the address of
//! the consistency proof published for that ledger in that round.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use thiserror::Error;

use crate::crypto::{Digest, HashAlg};

pub const OBJECTS_DIR: &str = "objects";
pub const PROOF_INDEX_FILE: &str = "proofs.idx";

static TMP_SEQ: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("object {0} not found")]
    NotFound(Digest),
    #[error("object {0} failed integrity check")]
    Integrity(Digest),
    #[error(transparent)]
    Conflict(Box<IndexConflict>),
    #[error("malformed proof index line {line}: {detail}")]
    Index { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A second, different proof address offered for an indexed (ledger, round).
#[derive(Debug, Error)]
#[error("proof index conflict for ledger {ledger} round {round}: {existing} already registered, got {attempted}")]
pub struct IndexConflict {
    pub ledger: Digest,
    pub round: u64,
    pub existing: Digest,
    pub attempted: Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProofIndexEntry {
    pub ledger_id_key: Digest,
    pub round: u64,
    pub proof_address: Digest,
}

/// Public storage as seen by the notary (writer) and auditors (readers).
pub trait ObjectStore: Send + Sync {
    fn alg(&self) -> HashAlg;

    /// Stores `content` and returns its address. Idempotent.
    fn put(&self, content: &[u8]) -> Result<Digest, StoreError>;

    /// Returns content whose hash equals `address`.
    fn get(&self, address: &Digest) -> Result<Vec<u8>, StoreError>;

    fn contains(&self, address: &Digest) -> Result<bool, StoreError>;

    fn index_proof(&self, entry: ProofIndexEntry) -> Result<(), StoreError>;

    fn find_proof(&self, ledger_id_key: &Digest, round: u64) -> Result<Option<Digest>, StoreError>;
}

/// Raw access that bypasses content addressing. Used only to inject
/// storage faults.
pub trait RawAccess {
    fn overwrite_raw(&self, address: &Digest, content: &[u8]) -> Result<(), StoreError>;
    fn read_raw(&self, address: &Digest) -> Result<Vec<u8>, StoreError>;
}

type IndexMap = BTreeMap<(Digest, u64), Digest>;

fn insert_index(index: &mut IndexMap, entry: ProofIndexEntry) -> Result<bool, StoreError> {
    let key = (entry.ledger_id_key, entry.round);
    match index.get(&key) {
        Some(existing) if *existing == entry.proof_address => Ok(false),
        Some(existing) => Err(StoreError::Conflict(Box::new(IndexConflict {
            ledger: entry.ledger_id_key,
            round: entry.round,
            existing: *existing,
            attempted: entry.proof_address,
        }))),
        None => {
            index.insert(key, entry.proof_address);
            Ok(true)
        }
    }
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    alg: HashAlg,
    objects: RwLock<HashMap<Digest, Vec<u8>>>,
    index: Mutex<IndexMap>,
}

impl MemoryStore {
    pub fn new(alg: HashAlg) -> Self {
        MemoryStore {
            alg,
            objects: RwLock::default(),
            index: Mutex::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.objects.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn addresses(&self) -> Vec<Digest> {
        let mut v: Vec<Digest> = self.objects.read().expect("store lock").keys().copied().collect();
        v.sort();
        v
    }

    pub fn proof_entries(&self) -> Vec<ProofIndexEntry> {
        self.index
            .lock()
            .expect("index lock")
            .iter()
            .map(|(&(ledger_id_key, round), &proof_address)| ProofIndexEntry {
                ledger_id_key,
                round,
                proof_address,
            })
            .collect()
    }
}

impl ObjectStore for MemoryStore {
    fn alg(&self) -> HashAlg {
        self.alg
    }

    fn put(&self, content: &[u8]) -> Result<Digest, StoreError> {
        let address = self.alg.hash(content);
        self.objects
            .write()
            .expect("store lock")
            .entry(address)
            .or_insert_with(|| content.to_vec());
        Ok(address)
    }

    fn get(&self, address: &Digest) -> Result<Vec<u8>, StoreError> {
        let objects = self.objects.read().expect("store lock");
        let content = objects.get(address).ok_or(StoreError::NotFound(*address))?;
        if self.alg.hash(content) != *address {
            return Err(StoreError::Integrity(*address));
        }
        Ok(content.clone())
    }

    fn contains(&self, address: &Digest) -> Result<bool, StoreError> {
        Ok(self.objects.read().expect("store lock").contains_key(address))
    }

    fn index_proof(&self, entry: ProofIndexEntry) -> Result<(), StoreError> {
        insert_index(&mut self.index.lock().expect("index lock"), entry).map(|_| ())
    }

    fn find_proof(&self, ledger_id_key: &Digest, round: u64) -> Result<Option<Digest>, StoreError> {
        Ok(self
            .index
            .lock()
            .expect("index lock")
            .get(&(*ledger_id_key, round))
            .copied())
    }
}

impl RawAccess for MemoryStore {
    fn overwrite_raw(&self, address: &Digest, content: &[u8]) -> Result<(), StoreError> {
        self.objects
            .write()
            .expect("store lock")
            .insert(*address, content.to_vec());
        Ok(())
    }

    fn read_raw(&self, address: &Digest) -> Result<Vec<u8>, StoreError> {
        self.objects
            .read()
            .expect("store lock")
            .get(address)
            .cloned()
            .ok_or(StoreError::NotFound(*address))
    }
}

/// Directory-backed store: `objects/<first two hex>/<remaining hex>` plus a
/// `proofs.idx` file of `<hex ledger key> <round> <hex address>` lines.
#[derive(Debug)]
pub struct DirStore {
    alg: HashAlg,
    root: PathBuf,
    index: Mutex<IndexMap>,
}

impl DirStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl AsRef<Path>, alg: HashAlg) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join(OBJECTS_DIR))?;
        let index = load_index(&root.join(PROOF_INDEX_FILE), alg)?;
        Ok(DirStore {
            alg,
            root,
            index: Mutex::new(index),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn object_path(&self, address: &Digest) -> PathBuf {
        let hex = address.to_hex();
        self.root.join(OBJECTS_DIR).join(&hex[..2]).join(&hex[2..])
    }
}

fn load_index(path: &Path, alg: HashAlg) -> Result<IndexMap, StoreError> {
    let mut index = IndexMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(index),
        Err(e) => return Err(e.into()),
    };
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let bad = |detail: &str| StoreError::Index {
            line: n + 1,
            detail: detail.to_string(),
        };
        let mut fields = line.split(' ');
        let (Some(key), Some(round), Some(addr), None) = (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(bad("expected three fields"));
        };
        let key = Digest::from_hex(key).filter(|d| d.len() == alg.output_len()).ok_or_else(|| bad("ledger key"))?;
        let round = round.parse().map_err(|_| bad("round"))?;
        let addr = Digest::from_hex(addr).filter(|d| d.len() == alg.output_len()).ok_or_else(|| bad("address"))?;
        insert_index(
            &mut index,
            ProofIndexEntry {
                ledger_id_key: key,
                round,
                proof_address: addr,
            },
        )?;
    }
    Ok(index)
}

impl ObjectStore for DirStore {
    fn alg(&self) -> HashAlg {
        self.alg
    }

    fn put(&self, content: &[u8]) -> Result<Digest, StoreError> {
        let address = self.alg.hash(content);
        let path = self.object_path(&address);
        if path.exists() {
            return Ok(address);
        }
        let dir = path.parent().expect("object path has a parent");
        fs::create_dir_all(dir)?;
        // Write-then-rename so concurrent puts of the same content converge.
        let seq = TMP_SEQ.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".tmp-{}-{seq}", std::process::id()));
        fs::write(&tmp, content)?;
        fs::rename(&tmp, &path)?;
        Ok(address)
    }

    fn get(&self, address: &Digest) -> Result<Vec<u8>, StoreError> {
        let content = match fs::read(self.object_path(address)) {
            Ok(c) => c,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(*address)),
            Err(e) => return Err(e.into()),
        };
        if self.alg.hash(&content) != *address {
            return Err(StoreError::Integrity(*address));
        }
        Ok(content)
    }

    fn contains(&self, address: &Digest) -> Result<bool, StoreError> {
        Ok(self.object_path(address).exists())
    }

    fn index_proof(&self, entry: ProofIndexEntry) -> Result<(), StoreError> {
        let mut index = self.index.lock().expect("index lock");
        if insert_index(&mut index, entry)? {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(self.root.join(PROOF_INDEX_FILE))?;
            writeln!(
                file,
                "{} {} {}",
                entry.ledger_id_key.to_hex(),
                entry.round,
                entry.proof_address.to_hex()
            )?;
        }
        Ok(())
    }

    fn find_proof(&self, ledger_id_key: &Digest, round: u64) -> Result<Option<Digest>, StoreError> {
        Ok(self
            .index
            .lock()
            .expect("index lock")
            .get(&(*ledger_id_key, round))
            .copied())
    }
}

impl RawAccess for DirStore {
    fn overwrite_raw(&self, address: &Digest, content: &[u8]) -> Result<(), StoreError> {
        let path = self.object_path(address);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, content)?;
        Ok(())
    }

    fn read_raw(&self, address: &Digest) -> Result<Vec<u8>, StoreError> {
        match fs::read(self.object_path(address)) {
            Ok(c) => Ok(c),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NotFound(*address)),
            Err(e) => Err(e.into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};

    const ALG: HashAlg = HashAlg::Sha256;

    fn backends(dir: &Path) -> Vec<Box<dyn ObjectStore>> {
        vec![
            Box::new(MemoryStore::new(ALG)),
            Box::new(DirStore::open(dir, ALG).unwrap()),
        ]
    }

    #[test]
    fn put_get_contract() {
        let tmp = tempfile::tempdir().unwrap();
        for store in backends(tmp.path()) {
            let a = store.put(b"hello").unwrap();
            assert_eq!(store.put(b"hello").unwrap(), a);
            assert_eq!(a, ALG.hash(b"hello"));
            assert_eq!(store.get(&a).unwrap(), b"hello");
            assert_eq!(store.put(b"").unwrap(), ALG.hash(b""));
            assert_eq!(store.get(&ALG.hash(b"")).unwrap(), b"");
            assert!(matches!(store.get(&ALG.hash(b"nope")), Err(StoreError::NotFound(_))));
            assert!(store.contains(&a).unwrap());
        }
    }

    #[test]
    fn large_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let mut blob = vec![0u8; 1 << 20];
        rand_chacha::ChaCha8Rng::seed_from_u64(7).fill_bytes(&mut blob);
        for store in backends(tmp.path()) {
            let a = store.put(&blob).unwrap();
            assert_eq!(store.get(&a).unwrap(), blob);
        }
    }

    #[test]
    fn dir_layout_and_single_copy() {
        let tmp = tempfile::tempdir().unwrap();
        let store = DirStore::open(tmp.path(), ALG).unwrap();
        let a = store.put(b"x").unwrap();
        store.put(b"x").unwrap();
        let hex = a.to_hex();
        let dir = tmp.path().join("objects").join(&hex[..2]);
        let entries: Vec<_> = fs::read_dir(&dir).unwrap().collect();
        assert_eq!(entries.len(), 1);
        assert!(dir.join(&hex[2..]).exists());
    }

    #[test]
    fn corruption_is_detected() {
        let tmp = tempfile::tempdir().unwrap();
        let store = DirStore::open(tmp.path(), ALG).unwrap();
        let a = store.put(b"payload").unwrap();
        fs::write(store.object_path(&a), b"paylaod").unwrap();
        assert!(matches!(store.get(&a), Err(StoreError::Integrity(_))));

        let mem = MemoryStore::new(ALG);
        let a = mem.put(b"payload").unwrap();
        mem.overwrite_raw(&a, b"x").unwrap();
        assert!(matches!(mem.get(&a), Err(StoreError::Integrity(_))));
    }

    #[test]
    fn proof_index() {
        let tmp = tempfile::tempdir().unwrap();
        let key = ALG.hash(b"ledger");
        let addr = ALG.hash(b"proof");
        let entry = ProofIndexEntry {
            ledger_id_key: key,
            round: 3,
            proof_address: addr,
        };
        for store in backends(tmp.path()) {
            store.index_proof(entry).unwrap();
            store.index_proof(entry).unwrap();
            assert_eq!(store.find_proof(&key, 3).unwrap(), Some(addr));
            assert_eq!(store.find_proof(&key, 2).unwrap(), None);
            let conflict = ProofIndexEntry {
                proof_address: ALG.hash(b"other"),
                ..entry
            };
            assert!(matches!(store.index_proof(conflict), Err(StoreError::Conflict(_))));
        }
        let text = fs::read_to_string(tmp.path().join(PROOF_INDEX_FILE)).unwrap();
        assert_eq!(text, format!("{} 3 {}\n", key.to_hex(), addr.to_hex()));
        let reopened = DirStore::open(tmp.path(), ALG).unwrap();
        assert_eq!(reopened.find_proof(&key, 3).unwrap(), Some(addr));
    }

    #[test]
    fn concurrent_identical_puts_converge() {
        let tmp = tempfile::tempdir().unwrap();
        let store = DirStore::open(tmp.path(), ALG).unwrap();
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for i in 0..50u32 {
                        store.put(&i.to_be_bytes()).unwrap();
                    }
                });
            }
        });
        for i in 0..50u32 {
            assert_eq!(store.get(&ALG.hash(&i.to_be_bytes())).unwrap(), i.to_be_bytes());
        }
    }
}
