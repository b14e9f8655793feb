//! Hash-linked blocks, the versioned world state, MVCC validation and
//! history queries.
//!
//! A block's `data_hash` is the Merkle root over the envelope digests of its
//! transactions (proposal, creator signature, read-write set and
//! endorsements). Validation codes are not covered by any hash since they are
//! assigned after ordering; `verify_chain` re-derives them by replay instead.
//!
//! The only way to change a `Ledger` is `validate_and_commit_block`, which
//! appends. There is no API that removes or rewrites a committed block.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::consent::Timestamp;
use crate::contracts::{
    check_endorsement_policy, ContractKind, Endorsement, EndorsementPolicy, ReadWriteSet, TxProposal,
};
use crate::digest::Digest;
use crate::identity::{Registry, Signature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Version {
    pub height: u64,
    pub tx_index: u32,
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.height, self.tx_index)
    }
}

pub trait StateView {
    fn get(&self, key: &str) -> Option<(&[u8], Version)>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateEntry {
    pub value: Vec<u8>,
    pub version: Version,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldState {
    entries: BTreeMap<String, StateEntry>,
}

impl StateView for WorldState {
    fn get(&self, key: &str) -> Option<(&[u8], Version)> {
        self.entries.get(key).map(|e| (e.value.as_slice(), e.version))
    }
}

impl WorldState {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &StateEntry)> {
        self.entries.iter()
    }

    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a String, &'a StateEntry)> + 'a {
        self.entries.range(prefix.to_string()..).take_while(move |(k, _)| k.starts_with(prefix))
    }

    fn apply(&mut self, rwset: &ReadWriteSet, version: Version) {
        for w in &rwset.writes {
            self.entries.insert(w.key.clone(), StateEntry { value: w.value.clone(), version });
        }
    }

    fn reads_current(&self, rwset: &ReadWriteSet) -> bool {
        rwset.reads.iter().all(|r| self.entries.get(&r.key).map(|e| e.version) == r.version)
    }

    /// SHA-256 over the sorted `key=value_hex@height.txidx` lines.
    pub fn digest(&self) -> Digest {
        let mut text = String::new();
        for (key, e) in &self.entries {
            text.push_str(&format!("{key}={}@{}\n", hex::encode(&e.value), e.version));
        }
        Digest::of(text.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValidationCode {
    Valid,
    MVCCConflict,
    PolicyFailure,
}

impl ValidationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ValidationCode::Valid => "Valid",
            ValidationCode::MVCCConflict => "MVCCConflict",
            ValidationCode::PolicyFailure => "PolicyFailure",
        }
    }
}

impl fmt::Display for ValidationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: String,
    pub proposal: TxProposal,
    pub creator_signature: Signature,
    pub rwset: ReadWriteSet,
    pub endorsements: Vec<Endorsement>,
    /// `None` until the transaction is committed.
    pub validation_code: Option<ValidationCode>,
}

impl Transaction {
    pub fn new(
        proposal: TxProposal,
        creator_signature: Signature,
        rwset: ReadWriteSet,
        endorsements: Vec<Endorsement>,
    ) -> Transaction {
        Transaction { tx_id: proposal.tx_id(), proposal, creator_signature, rwset, endorsements, validation_code: None }
    }

    /// Digest over everything but the validation code; the Merkle leaf.
    pub fn envelope_digest(&self) -> Digest {
        let mut bytes = self.proposal.canonical_bytes();
        bytes.extend_from_slice(format!("creator_sig:{}\n", self.creator_signature).as_bytes());
        bytes.extend_from_slice(&self.rwset.canonical_bytes());
        for e in &self.endorsements {
            bytes.extend_from_slice(
                format!("endorsement:{}:{}:{}\n", e.endorser, e.rwset_digest, e.signature).as_bytes(),
            );
        }
        Digest::of(&bytes)
    }

    pub fn is_valid(&self) -> bool {
        self.validation_code == Some(ValidationCode::Valid)
    }
}

/// Merkle root with SHA-256 nodes; an odd level duplicates its last node and
/// an empty tree hashes to SHA-256 of the empty string.
pub fn merkle_root(leaves: &[Digest]) -> Digest {
    if leaves.is_empty() {
        return Digest::of(b"");
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        if level.len() % 2 == 1 {
            level.push(*level.last().unwrap());
        }
        level = level.chunks(2).map(|pair| Digest::of_parts(&[&pair[0].0, &pair[1].0])).collect();
    }
    level[0]
}

pub fn header_bytes(height: u64, prev_hash: &Digest, data_hash: &Digest, timestamp: Timestamp) -> String {
    format!("height:{height}\nprev:{prev_hash}\ndata:{data_hash}\ntime:{timestamp}\n")
}

pub fn hash_block(height: u64, prev_hash: &Digest, data_hash: &Digest, timestamp: Timestamp) -> Digest {
    Digest::of(header_bytes(height, prev_hash, data_hash, timestamp).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub data_hash: Digest,
    pub timestamp: Timestamp,
    /// Hash of the header fields above, stored so that header tampering is
    /// attributable to this block.
    pub hash: Digest,
    pub txs: Vec<Transaction>,
}

impl Block {
    pub fn genesis() -> Block {
        Block::seal(0, Digest::ZERO, 0, Vec::new())
    }

    /// Builds an uncommitted block over `txs`, computing both hashes.
    pub fn seal(height: u64, prev_hash: Digest, timestamp: Timestamp, txs: Vec<Transaction>) -> Block {
        let data_hash = Block::compute_data_hash(&txs);
        Block {
            height,
            prev_hash,
            data_hash,
            timestamp,
            hash: hash_block(height, &prev_hash, &data_hash, timestamp),
            txs,
        }
    }

    pub fn compute_data_hash(txs: &[Transaction]) -> Digest {
        merkle_root(&txs.iter().map(Transaction::envelope_digest).collect::<Vec<_>>())
    }

    pub fn compute_hash(&self) -> Digest {
        hash_block(self.height, &self.prev_hash, &self.data_hash, self.timestamp)
    }

    pub fn header_bytes(&self) -> String {
        header_bytes(self.height, &self.prev_hash, &self.data_hash, self.timestamp)
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("block serialization cannot fail")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("block {height} does not extend the tip: {reason}")]
    BrokenLink { height: u64, reason: String },
    #[error("block {0} carries validation codes before commit")]
    AlreadyValidated(u64),
    #[error("stored chain is inconsistent at height {0}")]
    CorruptChain(u64),
    #[error("chain log: {0}")]
    Io(String),
}

impl LedgerError {
    pub fn name(&self) -> &'static str {
        match self {
            LedgerError::BrokenLink { .. } => "BrokenLink",
            LedgerError::AlreadyValidated(_) => "AlreadyValidated",
            LedgerError::CorruptChain(_) => "CorruptChain",
            LedgerError::Io(_) => "Io",
        }
    }
}

impl From<io::Error> for LedgerError {
    fn from(err: io::Error) -> Self {
        LedgerError::Io(err.to_string())
    }
}

/// Membership and policy a peer validates against.
#[derive(Debug, Clone)]
pub struct ValidationContext {
    pub registry: Arc<Registry>,
    pub policy: EndorsementPolicy,
}

impl ValidationContext {
    pub fn new(registry: Registry, policy: EndorsementPolicy) -> Self {
        ValidationContext { registry: Arc::new(registry), policy }
    }

    fn policy_ok(&self, tx: &Transaction) -> bool {
        if tx.tx_id != tx.proposal.tx_id() {
            return false;
        }
        let creator = match self.registry.resolve(&tx.proposal.creator) {
            Some(a) if a.active => a,
            _ => return false,
        };
        let signed = self
            .registry
            .verify(&creator.actor_id, &tx.proposal.canonical_bytes(), &tx.creator_signature)
            .unwrap_or(false);
        signed
            && check_endorsement_policy(
                &self.registry,
                &self.policy,
                &tx.endorsements,
                &tx.proposal.proposal_id,
                &tx.rwset,
            )
    }

    /// Validates `txs` in order against `state`, applying valid writes as it
    /// goes so later transactions in the same block see them.
    fn validate_into(&self, state: &mut WorldState, height: u64, txs: &[Transaction]) -> Vec<ValidationCode> {
        txs.iter()
            .enumerate()
            .map(|(idx, tx)| {
                let code = if !self.policy_ok(tx) {
                    ValidationCode::PolicyFailure
                } else if !state.reads_current(&tx.rwset) {
                    ValidationCode::MVCCConflict
                } else {
                    ValidationCode::Valid
                };
                if code == ValidationCode::Valid {
                    state.apply(&tx.rwset, Version { height, tx_index: idx as u32 });
                }
                code
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeyHistoryEntry {
    pub tx_id: String,
    pub creator: String,
    pub block_timestamp: Timestamp,
    pub version: Version,
    #[serde(serialize_with = "hex_value")]
    pub value: Vec<u8>,
}

fn hex_value<S: serde::Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(v))
}

/// A transaction that wrote a key, or an audit read of it, valid or not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeyTouch {
    pub tx_id: String,
    pub creator: String,
    pub action: String,
    pub block_timestamp: Timestamp,
    pub height: u64,
    pub tx_index: u32,
    pub validation_code: ValidationCode,
}

/// A peer's copy of the chain plus the state derived from it.
#[derive(Debug, Clone)]
pub struct Ledger {
    chain: Vec<Block>,
    state: WorldState,
    ctx: ValidationContext,
}

impl Ledger {
    pub fn new(ctx: ValidationContext) -> Ledger {
        Ledger { chain: vec![Block::genesis()], state: WorldState::default(), ctx }
    }

    /// Rebuilds a ledger from stored blocks, re-validating every block and
    /// checking the recorded codes.
    pub fn replay(ctx: ValidationContext, blocks: &[Block]) -> Result<Ledger, LedgerError> {
        verify_chain(blocks, &ctx).map_err(LedgerError::CorruptChain)?;
        let mut ledger = Ledger::new(ctx);
        for block in &blocks[1..] {
            let mut fresh = block.clone();
            for tx in &mut fresh.txs {
                tx.validation_code = None;
            }
            ledger.validate_and_commit_block(fresh)?;
        }
        Ok(ledger)
    }

    pub fn context(&self) -> &ValidationContext {
        &self.ctx
    }

    pub fn registry(&self) -> &Registry {
        &self.ctx.registry
    }

    pub fn chain(&self) -> &[Block] {
        &self.chain
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn tip(&self) -> &Block {
        self.chain.last().expect("chain always holds genesis")
    }

    pub fn height(&self) -> u64 {
        self.tip().height
    }

    pub fn get_state(&self, key: &str) -> Option<&[u8]> {
        self.state.get(key).map(|(v, _)| v)
    }

    pub fn validate_and_commit_block(&mut self, mut block: Block) -> Result<Vec<ValidationCode>, LedgerError> {
        let tip = self.tip();
        let broken = |reason: &str| LedgerError::BrokenLink { height: block.height, reason: reason.to_string() };
        if block.height != tip.height + 1 {
            return Err(broken("height is not tip + 1"));
        }
        if block.prev_hash != tip.hash {
            return Err(broken("prev_hash does not match the tip"));
        }
        if block.timestamp < tip.timestamp {
            return Err(broken("timestamp precedes the tip"));
        }
        if block.data_hash != Block::compute_data_hash(&block.txs) || block.hash != block.compute_hash() {
            return Err(broken("block hashes do not match its contents"));
        }
        if block.txs.iter().any(|t| t.validation_code.is_some()) {
            return Err(LedgerError::AlreadyValidated(block.height));
        }
        let codes = self.ctx.validate_into(&mut self.state, block.height, &block.txs);
        for (tx, code) in block.txs.iter_mut().zip(&codes) {
            tx.validation_code = Some(*code);
        }
        self.chain.push(block);
        Ok(codes)
    }

    /// Every valid write to `key`, in chain order.
    pub fn get_history(&self, key: &str) -> Vec<KeyHistoryEntry> {
        let mut out = Vec::new();
        for block in &self.chain {
            for (idx, tx) in block.txs.iter().enumerate() {
                if !tx.is_valid() {
                    continue;
                }
                if let Some(value) = tx.rwset.write_for(key) {
                    out.push(KeyHistoryEntry {
                        tx_id: tx.tx_id.clone(),
                        creator: tx.proposal.creator.clone(),
                        block_timestamp: block.timestamp,
                        version: Version { height: block.height, tx_index: idx as u32 },
                        value: value.to_vec(),
                    });
                }
            }
        }
        out
    }

    /// Every transaction that wrote `key` or read it through the audit
    /// contract, regardless of validation outcome.
    pub fn touches(&self, key: &str) -> Vec<KeyTouch> {
        let mut out = Vec::new();
        for block in &self.chain {
            for (idx, tx) in block.txs.iter().enumerate() {
                let wrote = tx.rwset.write_for(key).is_some();
                let audited = tx.proposal.contract == ContractKind::Audit && tx.rwset.reads_key(key);
                if wrote || audited {
                    out.push(KeyTouch {
                        tx_id: tx.tx_id.clone(),
                        creator: tx.proposal.creator.clone(),
                        action: tx.proposal.qualified_action(),
                        block_timestamp: block.timestamp,
                        height: block.height,
                        tx_index: idx as u32,
                        validation_code: tx.validation_code.expect("committed"),
                    });
                }
            }
        }
        out
    }
}

/// Recomputes links, tx ids, Merkle roots, block hashes and validation codes
/// from genesis. Returns the first height at which anything disagrees.
pub fn verify_chain(chain: &[Block], ctx: &ValidationContext) -> Result<(), u64> {
    let mut state = WorldState::default();
    let mut prev: Option<&Block> = None;
    for (i, block) in chain.iter().enumerate() {
        let h = i as u64;
        let link_ok = match prev {
            None => block.prev_hash == Digest::ZERO && block.txs.is_empty() && block.timestamp == 0,
            Some(p) => block.prev_hash == p.hash && block.timestamp >= p.timestamp,
        };
        let ids_ok = block.txs.iter().all(|t| t.tx_id == t.proposal.tx_id());
        if block.height != h
            || !link_ok
            || !ids_ok
            || block.data_hash != Block::compute_data_hash(&block.txs)
            || block.hash != block.compute_hash()
        {
            return Err(h);
        }
        if h > 0 {
            let codes = ctx.validate_into(&mut state, h, &block.txs);
            if block.txs.iter().zip(&codes).any(|(t, c)| t.validation_code != Some(*c)) {
                return Err(h);
            }
        }
        prev = Some(block);
    }
    Ok(())
}

/// Append-only file of length-prefixed block records: a 4-byte big-endian
/// length followed by the block's JSON.
#[derive(Debug)]
pub struct ChainLog {
    path: PathBuf,
}

impl ChainLog {
    pub fn new(path: impl Into<PathBuf>) -> ChainLog {
        ChainLog { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn encode(block: &Block) -> Vec<u8> {
        let json = block.to_json_bytes();
        let mut out = (json.len() as u32).to_be_bytes().to_vec();
        out.extend_from_slice(&json);
        out
    }

    pub fn decode_all(bytes: &[u8]) -> Result<Vec<Block>, LedgerError> {
        let mut blocks = Vec::new();
        let mut rest = bytes;
        while !rest.is_empty() {
            let corrupt = || LedgerError::CorruptChain(blocks.len() as u64);
            if rest.len() < 4 {
                return Err(corrupt());
            }
            let len = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
            let body = rest.get(4..4 + len).ok_or_else(corrupt)?;
            blocks.push(serde_json::from_slice(body).map_err(|_| corrupt())?);
            rest = &rest[4 + len..];
        }
        Ok(blocks)
    }

    /// Reads every stored block; a missing file is an empty log.
    pub fn read_all(&self) -> Result<Vec<Block>, LedgerError> {
        let mut bytes = Vec::new();
        match File::open(&self.path) {
            Ok(mut f) => {
                f.read_to_end(&mut bytes)?;
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        }
        ChainLog::decode_all(&bytes)
    }

    pub fn append(&self, block: &Block) -> Result<(), LedgerError> {
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(&ChainLog::encode(block))?;
        f.sync_data()?;
        Ok(())
    }

    /// Opens the ledger stored in this log, writing genesis if the log is new.
    pub fn open_ledger(&self, ctx: ValidationContext) -> Result<Ledger, LedgerError> {
        let blocks = self.read_all()?;
        if blocks.is_empty() {
            let ledger = Ledger::new(ctx);
            self.append(&ledger.chain()[0])?;
            return Ok(ledger);
        }
        Ledger::replay(ctx, &blocks)
    }
}
