//! External audit of one ledger's notarized history.
//!
//! The auditor starts from the published root digests, walks the chained
//! trie versions from the newest back to the first, collects the ledger's
//! digest in every round and checks the consistency proofs linking each
//! value change. Everything is read through an [`AuditSource`], either the
//! public store or a self-contained [`AuditProof`] bundle.

mod proof;

use std::fmt;

use serde::Serialize;

use crate::crypto::{Digest, HashAlg};
use crate::merkle_ledger::{verify_consistency, ConsistencyProof, Ledger};
use crate::store::{ObjectStore, StoreError};
use crate::trie::{Node, NodeBody, TrieParams};

pub use proof::{make_audit_proof, verify_audit_proof, verify_audit_proof_bytes, AuditProof, BundleError};

/// Why a read through an [`AuditSource`] produced nothing usable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FetchError {
    /// The data is not available; nothing can be concluded from it.
    Missing(String),
    /// The data exists but does not match its address.
    Corrupt(String),
}

/// Read access to published trie nodes and consistency proofs.
pub trait AuditSource {
    fn node(&self, digest: &Digest) -> Result<Vec<u8>, FetchError>;
    /// The serialized consistency proof indexed for `(id_key, round)`, or
    /// `None` when nothing was indexed.
    fn proof(&self, id_key: &Digest, round: u64) -> Result<Option<Vec<u8>>, FetchError>;
}

/// Reads from the public store.
pub struct StoreSource<'a>(pub &'a dyn ObjectStore);

fn store_fetch_error(e: StoreError) -> FetchError {
    match e {
        StoreError::Integrity(d) => FetchError::Corrupt(format!("object {d} failed integrity check")),
        other => FetchError::Missing(other.to_string()),
    }
}

impl AuditSource for StoreSource<'_> {
    fn node(&self, digest: &Digest) -> Result<Vec<u8>, FetchError> {
        self.0.get(digest).map_err(store_fetch_error)
    }

    fn proof(&self, id_key: &Digest, round: u64) -> Result<Option<Vec<u8>>, FetchError> {
        match self.0.find_proof(id_key, round).map_err(store_fetch_error)? {
            None => Ok(None),
            Some(address) => self.0.get(&address).map(Some).map_err(store_fetch_error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail { round: Option<u64>, detail: String },
    Inconclusive { round: Option<u64>, detail: String },
    NotChecked,
}

impl Outcome {
    fn fail(round: impl Into<Option<u64>>, detail: impl Into<String>) -> Self {
        Outcome::Fail {
            round: round.into(),
            detail: detail.into(),
        }
    }

    fn inconclusive(round: impl Into<Option<u64>>, detail: impl Into<String>) -> Self {
        Outcome::Inconclusive {
            round: round.into(),
            detail: detail.into(),
        }
    }

    /// Keeps the first failure; an inconclusive result only replaces a pass.
    fn absorb(&mut self, other: Outcome) {
        let replace = match (&*self, &other) {
            (Outcome::Fail { .. }, _) => false,
            (_, Outcome::Fail { .. }) => true,
            (Outcome::Inconclusive { .. }, _) => false,
            (_, Outcome::Inconclusive { .. }) => true,
            _ => false,
        };
        if replace {
            *self = other;
        }
    }

    pub fn is_fail(&self) -> bool {
        matches!(self, Outcome::Fail { .. })
    }

    pub fn is_pass(&self) -> bool {
        matches!(self, Outcome::Pass)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let with_round = |f: &mut fmt::Formatter<'_>, word: &str, round: &Option<u64>, detail: &str| match round {
            Some(r) => write!(f, "{word} at round {r}: {detail}"),
            None => write!(f, "{word}: {detail}"),
        };
        match self {
            Outcome::Pass => f.write_str("pass"),
            Outcome::NotChecked => f.write_str("not checked"),
            Outcome::Fail { round, detail } => with_round(f, "FAIL", round, detail),
            Outcome::Inconclusive { round, detail } => with_round(f, "inconclusive", round, detail),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 1,
            Verdict::Inconclusive => 2,
        }
    }
}

/// The ledger's digest as notarized in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", content = "digest", rename_all = "snake_case")]
pub enum HistoryValue {
    Value(Digest),
    /// The ledger id is provably absent from that round's trie.
    Null,
    /// The round could not be resolved.
    Unknown,
}

/// The digest (or disclosed data) an auditor was handed, plus optional
/// proofs placing it between two notarized values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Claim {
    pub digest: Digest,
    /// Consistency proofs from the earlier notarized value to `digest` and
    /// from `digest` to the later one.
    pub bridge: Option<(ConsistencyProof, ConsistencyProof)>,
}

impl Claim {
    pub fn digest(digest: Digest) -> Self {
        Claim { digest, bridge: None }
    }

    pub fn ledger(ledger: &Ledger) -> Self {
        Claim::digest(ledger.root())
    }

    pub fn with_bridge(mut self, before: ConsistencyProof, after: ConsistencyProof) -> Self {
        self.bridge = Some((before, after));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub id_key: Digest,
    /// Rounds `0..rounds_checked` were audited.
    pub rounds_checked: u64,
    /// Published rounds outside the audit's reach (static proof limitation).
    pub not_covered: Option<std::ops::Range<u64>>,
    pub history: Vec<HistoryValue>,
    pub no_alternative_histories: Outcome,
    pub no_removal: Outcome,
    pub no_forks: Outcome,
    pub chain_match: Outcome,
    pub disclosed_data_match: Outcome,
    /// Integrity of the audit-proof bundle; not checked for store audits.
    pub bundle: Outcome,
}

impl AuditReport {
    fn blank(id_key: Digest) -> Self {
        AuditReport {
            id_key,
            rounds_checked: 0,
            not_covered: None,
            history: Vec::new(),
            no_alternative_histories: Outcome::Pass,
            no_removal: Outcome::Pass,
            no_forks: Outcome::Pass,
            chain_match: Outcome::Pass,
            disclosed_data_match: Outcome::NotChecked,
            bundle: Outcome::NotChecked,
        }
    }

    /// A report in which nothing could be examined.
    fn unreadable(id_key: Digest, bundle: Outcome) -> Self {
        let detail = "audit proof could not be read";
        AuditReport {
            no_alternative_histories: Outcome::inconclusive(None, detail),
            no_removal: Outcome::inconclusive(None, detail),
            no_forks: Outcome::inconclusive(None, detail),
            chain_match: Outcome::inconclusive(None, detail),
            bundle,
            ..AuditReport::blank(id_key)
        }
    }

    pub fn outcomes(&self) -> [(&'static str, &Outcome); 6] {
        [
            ("no_alternative_histories", &self.no_alternative_histories),
            ("no_removal", &self.no_removal),
            ("no_forks", &self.no_forks),
            ("chain_match", &self.chain_match),
            ("disclosed_data_match", &self.disclosed_data_match),
            ("bundle", &self.bundle),
        ]
    }

    pub fn verdict(&self) -> Verdict {
        let outcomes = self.outcomes();
        if outcomes.iter().any(|(_, o)| o.is_fail()) {
            Verdict::Fail
        } else if outcomes.iter().any(|(_, o)| matches!(o, Outcome::Inconclusive { .. })) {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.verdict().exit_code()
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ledger key {}", self.id_key)?;
        writeln!(f, "rounds audited: {}", self.rounds_checked)?;
        if let Some(range) = &self.not_covered {
            writeln!(f, "rounds not covered: {}..{}", range.start, range.end)?;
        }
        for (name, outcome) in self.outcomes() {
            writeln!(f, "{name}: {outcome}")?;
        }
        write!(f, "verdict: {:?}", self.verdict())
    }
}

enum Search {
    Found(Digest),
    Absent,
    Missing(String),
    Invalid(String),
}

fn decode_checked(params: &TrieParams, digest: &Digest, bytes: &[u8]) -> Result<Node, String> {
    if params.alg.hash(bytes) != *digest {
        return Err(format!("node bytes do not hash to reference {digest}"));
    }
    Node::decode(bytes, params).map_err(|e| e.to_string())
}

/// Follows the key's search path below an already verified root node.
fn search(params: &TrieParams, source: &dyn AuditSource, root: Node, key: &Digest) -> Search {
    let mut node = root;
    let mut labels = Vec::new();
    loop {
        match node.body {
            NodeBody::Leaf { tuples } => {
                for t in &tuples {
                    for (depth, &label) in labels.iter().enumerate() {
                        if params.label(&t.key, depth).ok() != Some(label) {
                            return Search::Invalid(format!("leaf holds key {} off its search path", t.key));
                        }
                    }
                }
                return match tuples.binary_search_by(|t| t.key.cmp(key)) {
                    Ok(i) => Search::Found(tuples[i].value),
                    Err(_) => Search::Absent,
                };
            }
            NodeBody::Internal { .. } => {
                let label = match params.label(key, labels.len()) {
                    Ok(l) => l,
                    Err(e) => return Search::Invalid(e.to_string()),
                };
                let Some(child) = node.child(label) else {
                    return Search::Absent;
                };
                let bytes = match source.node(&child) {
                    Ok(b) => b,
                    Err(FetchError::Missing(d)) => return Search::Missing(d),
                    Err(FetchError::Corrupt(d)) => return Search::Invalid(d),
                };
                node = match decode_checked(params, &child, &bytes) {
                    Ok(n) => n,
                    Err(d) => return Search::Invalid(d),
                };
                if node.is_root() {
                    return Search::Invalid(format!("root node {child} referenced as a child"));
                }
                labels.push(label);
            }
        }
    }
}

/// Steps 1 to 4: walks the version chain from the newest published root
/// and fills in the per-round history.
fn walk_versions(
    params: &TrieParams,
    id_key: &Digest,
    roots: &[Digest],
    source: &dyn AuditSource,
    report: &mut AuditReport,
) {
    let mut current = roots[roots.len() - 1];
    for round in (0..roots.len()).rev() {
        let r = round as u64;
        if current.is_zero() {
            report
                .chain_match
                .absorb(Outcome::fail(r, "trie history ends before the first published round"));
            return;
        }
        if current != roots[round] {
            report
                .chain_match
                .absorb(Outcome::fail(r, format!("linked root {current} differs from published {}", roots[round])));
        }
        let bytes = match source.node(&current) {
            Ok(b) => b,
            Err(FetchError::Missing(d)) => {
                report.no_alternative_histories.absorb(Outcome::inconclusive(r, d));
                report
                    .chain_match
                    .absorb(Outcome::inconclusive(r, "version chain could not be followed further"));
                return;
            }
            Err(FetchError::Corrupt(d)) => {
                report.no_alternative_histories.absorb(Outcome::fail(r, d));
                return;
            }
        };
        let root = match decode_checked(params, &current, &bytes) {
            Ok(n) if n.is_root() => n,
            Ok(_) => {
                report
                    .no_alternative_histories
                    .absorb(Outcome::fail(r, format!("{current} is not a root node")));
                return;
            }
            Err(d) => {
                report.no_alternative_histories.absorb(Outcome::fail(r, d));
                return;
            }
        };
        let prev = root.prev_root.expect("root nodes carry a previous root");
        report.history[round] = match search(params, source, root, id_key) {
            Search::Found(v) => HistoryValue::Value(v),
            Search::Absent => HistoryValue::Null,
            Search::Missing(d) => {
                report.no_alternative_histories.absorb(Outcome::inconclusive(r, d));
                HistoryValue::Unknown
            }
            Search::Invalid(d) => {
                report.no_alternative_histories.absorb(Outcome::fail(r, d));
                HistoryValue::Unknown
            }
        };
        current = prev;
    }
    if !current.is_zero() {
        report
            .chain_match
            .absorb(Outcome::fail(0, "trie history continues before the first published round"));
    }
}

/// Step 5: a prefix of nulls followed only by values.
fn check_no_removal(report: &mut AuditReport) {
    let mut seen = false;
    let mut unknown = false;
    for (round, value) in report.history.iter().enumerate() {
        match value {
            HistoryValue::Value(_) => seen = true,
            HistoryValue::Null if seen => {
                report
                    .no_removal
                    .absorb(Outcome::fail(round as u64, "ledger absent after having been notarized"));
            }
            HistoryValue::Null => {}
            HistoryValue::Unknown => {
                unknown = true;
                report
                    .no_removal
                    .absorb(Outcome::inconclusive(round as u64, "ledger presence unknown"));
            }
        }
    }
    if !seen && !unknown {
        report
            .no_removal
            .absorb(Outcome::inconclusive(None, "ledger id is not present in any audited round"));
    }
}

/// Step 6: every value change is backed by a verifying consistency proof.
fn check_no_forks(alg: HashAlg, id_key: &Digest, source: &dyn AuditSource, report: &mut AuditReport) {
    let mut previous: Option<Digest> = None;
    let mut chained_size: Option<u64> = None;
    for round in 0..report.history.len() {
        let r = round as u64;
        let value = match report.history[round] {
            HistoryValue::Value(v) => v,
            HistoryValue::Null => continue,
            HistoryValue::Unknown => {
                report.no_forks.absorb(Outcome::inconclusive(r, "value unknown"));
                previous = None;
                chained_size = None;
                continue;
            }
        };
        let Some(old) = previous.replace(value) else {
            continue;
        };
        if old == value {
            continue;
        }
        let outcome = match source.proof(id_key, r) {
            Ok(None) => Outcome::fail(r, "value changed without a published consistency proof"),
            Err(FetchError::Missing(d)) => Outcome::inconclusive(r, d),
            Err(FetchError::Corrupt(d)) => Outcome::fail(r, d),
            Ok(Some(bytes)) => match ConsistencyProof::from_bytes(alg, &bytes) {
                Err(e) => Outcome::fail(r, format!("unreadable consistency proof: {e}")),
                Ok(p) if chained_size.is_some_and(|s| s != p.old_size) => {
                    Outcome::fail(r, "consistency proof sizes do not chain with the previous proof")
                }
                Ok(p) if !verify_consistency(alg, &old, &value, &p) => {
                    Outcome::fail(r, "consistency proof does not verify")
                }
                Ok(p) => {
                    chained_size = Some(p.new_size);
                    Outcome::Pass
                }
            },
        };
        report.no_forks.absorb(outcome);
    }
}

/// Step 7: the disclosed digest is a notarized value or bridged between two.
fn check_claim(alg: HashAlg, claim: &Claim, report: &mut AuditReport) {
    let mut values: Vec<Digest> = Vec::new();
    let mut unknown = false;
    for v in &report.history {
        match v {
            HistoryValue::Value(d) if values.last() != Some(d) => values.push(*d),
            HistoryValue::Unknown => unknown = true,
            _ => {}
        }
    }
    let bridged = |(before, after): &(ConsistencyProof, ConsistencyProof)| {
        before.new_size == after.old_size
            && values.windows(2).any(|w| {
                verify_consistency(alg, &w[0], &claim.digest, before) && verify_consistency(alg, &claim.digest, &w[1], after)
            })
    };
    report.disclosed_data_match = if values.contains(&claim.digest) || claim.bridge.as_ref().is_some_and(bridged) {
        Outcome::Pass
    } else if unknown {
        Outcome::inconclusive(None, "disclosed digest not found in the resolvable rounds")
    } else if claim.bridge.is_some() {
        Outcome::fail(None, "disclosed digest is not bridged between two notarized values")
    } else {
        Outcome::fail(None, "disclosed digest matches no notarized value")
    };
}

/// The seven audit steps over `roots` (oldest first).
pub(crate) fn run_audit(
    params: &TrieParams,
    id_key: Digest,
    claim: Option<&Claim>,
    roots: &[Digest],
    source: &dyn AuditSource,
) -> AuditReport {
    let mut report = AuditReport::blank(id_key);
    if roots.is_empty() {
        let detail = "nothing has been published";
        report.no_alternative_histories = Outcome::inconclusive(None, detail);
        report.no_removal = Outcome::inconclusive(None, detail);
        report.no_forks = Outcome::inconclusive(None, detail);
        report.chain_match = Outcome::inconclusive(None, detail);
        return report;
    }
    report.rounds_checked = roots.len() as u64;
    report.history = vec![HistoryValue::Unknown; roots.len()];
    walk_versions(params, &id_key, roots, source, &mut report);
    check_no_removal(&mut report);
    check_no_forks(params.alg, &id_key, source, &mut report);
    if let Some(claim) = claim {
        check_claim(params.alg, claim, &mut report);
    }
    report
}

/// Audits the ledger `id` against the published `roots` using the public
/// store.
pub fn audit_ledger(
    params: &TrieParams,
    id: &[u8],
    claim: Option<&Claim>,
    roots: &[Digest],
    store: &dyn ObjectStore,
) -> AuditReport {
    run_audit(params, params.alg.hash(id), claim, roots, &StoreSource(store))
}
