//! Local stand-in for the public blockchain: an append-only journal of
//! notarization records, one line per record:
//! `<seq> <hex trie root> <hex note>`.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::crypto::{Digest, HashAlg};

/// Capacity of a transaction note on the public chain.
pub const NOTE_CAPACITY: usize = 1024;

pub const CHAIN_FILE: &str = "chain.log";

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("record payload of {0} bytes exceeds the {NOTE_CAPACITY}-byte note capacity")]
    OversizeNote(usize),
    #[error("record seq {got} does not extend chain of height {expected}")]
    NonContiguousSeq { expected: u64, got: u64 },
    #[error("root digest has {got} bytes, expected {expected}")]
    DigestLength { expected: usize, got: usize },
    #[error("malformed journal line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotarizationRecord {
    pub seq: u64,
    pub trie_root: Digest,
    pub note: Vec<u8>,
}

impl NotarizationRecord {
    pub fn payload_len(&self) -> usize {
        self.trie_root.len() + self.note.len()
    }

    pub fn to_line(&self) -> String {
        format!("{} {} {}", self.seq, self.trie_root.to_hex(), hex::encode(&self.note))
    }

    fn parse_line(line: &str, n: usize) -> Result<Self, ChainError> {
        let bad = |detail: &str| ChainError::Parse {
            line: n,
            detail: detail.to_string(),
        };
        let mut fields = line.split(' ');
        let (Some(seq), Some(root), Some(note), None) = (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(bad("expected three space-separated fields"));
        };
        Ok(NotarizationRecord {
            seq: seq.parse().map_err(|_| bad("seq"))?,
            trie_root: Digest::from_hex(root).ok_or_else(|| bad("root digest"))?,
            note: hex::decode(note).map_err(|_| bad("note"))?,
        })
    }
}

/// The journal. Writes go through `publish` only; the file, when present,
/// is appended and flushed on every record.
#[derive(Debug)]
pub struct Chain {
    alg: HashAlg,
    records: Vec<NotarizationRecord>,
    path: Option<PathBuf>,
}

impl Chain {
    pub fn in_memory(alg: HashAlg) -> Self {
        Chain {
            alg,
            records: Vec::new(),
            path: None,
        }
    }

    /// Opens a file-backed journal, loading any existing records.
    pub fn open(path: impl AsRef<Path>, alg: HashAlg) -> Result<Self, ChainError> {
        let path = path.as_ref().to_path_buf();
        let records = match fs::read_to_string(&path) {
            Ok(text) => parse_journal(&text, alg)?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Chain {
            alg,
            records,
            path: Some(path),
        })
    }

    pub fn alg(&self) -> HashAlg {
        self.alg
    }

    pub fn height(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn records(&self) -> &[NotarizationRecord] {
        &self.records
    }

    pub fn publish(&mut self, record: NotarizationRecord) -> Result<u64, ChainError> {
        if record.seq != self.height() {
            return Err(ChainError::NonContiguousSeq {
                expected: self.height(),
                got: record.seq,
            });
        }
        if record.trie_root.len() != self.alg.output_len() {
            return Err(ChainError::DigestLength {
                expected: self.alg.output_len(),
                got: record.trie_root.len(),
            });
        }
        if record.payload_len() > NOTE_CAPACITY {
            return Err(ChainError::OversizeNote(record.payload_len()));
        }
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(file, "{}", record.to_line())?;
            file.flush()?;
        }
        self.records.push(record);
        Ok(self.height() - 1)
    }

    pub fn read_roots(&self) -> Vec<Digest> {
        self.records.iter().map(|r| r.trie_root).collect()
    }

    pub fn render(&self) -> String {
        self.records.iter().map(|r| r.to_line() + "\n").collect()
    }
}

fn parse_journal(text: &str, alg: HashAlg) -> Result<Vec<NotarizationRecord>, ChainError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let record = NotarizationRecord::parse_line(line, i + 1)?;
        if record.seq != records.len() as u64 {
            return Err(ChainError::Parse {
                line: i + 1,
                detail: format!("seq {} out of order", record.seq),
            });
        }
        if record.trie_root.len() != alg.output_len() {
            return Err(ChainError::Parse {
                line: i + 1,
                detail: "root digest length does not match hash algorithm".into(),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Reads only the published root sequence from a journal file.
pub fn read_roots_from(path: impl AsRef<Path>, alg: HashAlg) -> Result<Vec<Digest>, ChainError> {
    Ok(Chain::open(path, alg)?.read_roots())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALG: HashAlg = HashAlg::Sha256;

    fn record(seq: u64, note: usize) -> NotarizationRecord {
        NotarizationRecord {
            seq,
            trie_root: ALG.hash(&seq.to_be_bytes()),
            note: vec![0xab; note],
        }
    }

    #[test]
    fn publish_sequence() {
        let mut chain = Chain::in_memory(ALG);
        assert!(chain.read_roots().is_empty());
        assert_eq!(chain.publish(record(0, 0)).unwrap(), 0);
        assert_eq!(chain.publish(record(1, 0)).unwrap(), 1);
        assert_eq!(chain.publish(record(2, 0)).unwrap(), 2);
        assert_eq!(
            chain.read_roots(),
            (0..3u64).map(|i| ALG.hash(&i.to_be_bytes())).collect::<Vec<_>>()
        );
        assert!(matches!(chain.publish(record(1, 0)), Err(ChainError::NonContiguousSeq { .. })));
        assert!(matches!(chain.publish(record(5, 0)), Err(ChainError::NonContiguousSeq { .. })));
    }

    #[test]
    fn note_capacity_boundary() {
        let mut chain = Chain::in_memory(ALG);
        chain.publish(record(0, NOTE_CAPACITY - 32)).unwrap();
        assert!(matches!(
            chain.publish(record(1, NOTE_CAPACITY - 31)),
            Err(ChainError::OversizeNote(1025))
        ));
        assert_eq!(chain.height(), 1);
    }

    #[test]
    fn file_backed_restart() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join(CHAIN_FILE);
        let mut chain = Chain::open(&path, ALG).unwrap();
        chain.publish(record(0, 0)).unwrap();
        chain.publish(record(1, 3)).unwrap();
        let before = chain.read_roots();
        drop(chain);
        let reopened = Chain::open(&path, ALG).unwrap();
        assert_eq!(reopened.read_roots(), before);
        assert_eq!(reopened.records()[1].note, vec![0xab; 3]);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            format!("0 {} \n1 {} ababab\n", before[0].to_hex(), before[1].to_hex())
        );
    }

    #[test]
    fn earlier_reads_are_prefixes() {
        let mut chain = Chain::in_memory(ALG);
        let mut previous = chain.read_roots();
        for i in 0..10 {
            chain.publish(record(i, 0)).unwrap();
            let now = chain.read_roots();
            assert_eq!(&now[..previous.len()], &previous[..]);
            previous = now;
        }
    }

    #[test]
    fn rejects_malformed_journal() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join(CHAIN_FILE);
        fs::write(&path, "0 zz \n").unwrap();
        assert!(matches!(Chain::open(&path, ALG), Err(ChainError::Parse { .. })));
        fs::write(&path, format!("1 {} \n", ALG.hash(b"").to_hex())).unwrap();
        assert!(matches!(Chain::open(&path, ALG), Err(ChainError::Parse { .. })));
    }
}
