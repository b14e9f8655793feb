//! Ordering service and a deterministic multi-peer simulation.
//!
//! One logical orderer batches endorsed transactions into blocks by size or
//! timeout. Peers receive blocks over reliable in-order links with a fixed
//! per-peer delay, measured in logical ticks. Everything runs on one thread
//! so a workload always produces the same blocks.

use std::collections::{BTreeMap, HashSet, VecDeque};

use serde::Serialize;

use crate::consent::Timestamp;
use crate::contracts::{simulate_proposal, BadPolicy, ContractError, Endorsement, EndorsementPolicy, TxProposal};
use crate::digest::Digest;
use crate::identity::{valid_actor_id, Registry};
use crate::ledger::{Block, Ledger, LedgerError, Transaction, ValidationCode, ValidationContext};
use crate::lines::{split_list, Entries, LineError};
use crate::pipeline::PipelineConfig;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsensusError {
    #[error("transaction {0} was already submitted")]
    DuplicateTx(String),
    #[error("transaction {0} carries no endorsements")]
    NoEndorsements(String),
    #[error("bad network config: {0}")]
    BadConfig(String),
    #[error("workload line {line}: {reason}")]
    BadWorkload { line: usize, reason: String },
}

impl ConsensusError {
    pub fn name(&self) -> &'static str {
        match self {
            ConsensusError::DuplicateTx(_) => "DuplicateTx",
            ConsensusError::NoEndorsements(_) => "NoEndorsements",
            ConsensusError::BadConfig(_) => "BadConfig",
            ConsensusError::BadWorkload { .. } => "BadWorkload",
        }
    }
}

impl From<LineError> for ConsensusError {
    fn from(err: LineError) -> Self {
        ConsensusError::BadConfig(err.to_string())
    }
}

impl From<BadPolicy> for ConsensusError {
    fn from(err: BadPolicy) -> Self {
        ConsensusError::BadConfig(err.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrdererConfig {
    batch_size: usize,
    batch_timeout_ticks: u64,
}

impl OrdererConfig {
    pub fn new(batch_size: usize, batch_timeout_ticks: u64) -> Result<Self, ConsensusError> {
        if batch_size == 0 || batch_timeout_ticks == 0 {
            return Err(ConsensusError::BadConfig("batch_size and batch_timeout_ticks must be >= 1".into()));
        }
        Ok(OrdererConfig { batch_size, batch_timeout_ticks })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn batch_timeout_ticks(&self) -> u64 {
        self.batch_timeout_ticks
    }
}

/// Seam for swapping the single orderer for a replicated one.
pub trait OrderingService {
    fn submit(&mut self, tx: Transaction, now: Timestamp) -> Result<(), ConsensusError>;
    fn cut(&mut self, now: Timestamp) -> Option<Block>;
}

#[derive(Debug)]
pub struct Orderer {
    config: OrdererConfig,
    queue: VecDeque<(Transaction, Timestamp)>,
    seen: HashSet<String>,
    tip_height: u64,
    tip_hash: Digest,
    tip_time: Timestamp,
}

impl Orderer {
    pub fn new(config: OrdererConfig, tip: &Block) -> Orderer {
        Orderer {
            config,
            queue: VecDeque::new(),
            seen: HashSet::new(),
            tip_height: tip.height,
            tip_hash: tip.hash,
            tip_time: tip.timestamp,
        }
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// FIFO admission. Full policy checks wait for validation; a transaction
    /// with no endorsements at all is refused here.
    pub fn submit_endorsed_tx(&mut self, tx: Transaction, now: Timestamp) -> Result<(), ConsensusError> {
        if tx.endorsements.is_empty() {
            return Err(ConsensusError::NoEndorsements(tx.tx_id));
        }
        if !self.seen.insert(tx.tx_id.clone()) {
            return Err(ConsensusError::DuplicateTx(tx.tx_id));
        }
        self.queue.push_back((tx, now));
        Ok(())
    }

    /// Emits a block when a full batch is waiting or the oldest queued
    /// transaction has waited out the timeout. Never emits empty blocks.
    pub fn cut_block(&mut self, now: Timestamp) -> Option<Block> {
        let (_, oldest) = self.queue.front()?;
        let full = self.queue.len() >= self.config.batch_size;
        let expired = now.saturating_sub(*oldest) >= self.config.batch_timeout_ticks;
        if !full && !expired {
            return None;
        }
        let n = self.queue.len().min(self.config.batch_size);
        let txs: Vec<Transaction> = self.queue.drain(..n).map(|(tx, _)| tx).collect();
        let timestamp = now.max(self.tip_time);
        let block = Block::seal(self.tip_height + 1, self.tip_hash, timestamp, txs);
        self.tip_height = block.height;
        self.tip_hash = block.hash;
        self.tip_time = block.timestamp;
        Some(block)
    }
}

impl OrderingService for Orderer {
    fn submit(&mut self, tx: Transaction, now: Timestamp) -> Result<(), ConsensusError> {
        self.submit_endorsed_tx(tx, now)
    }

    fn cut(&mut self, now: Timestamp) -> Option<Block> {
        self.cut_block(now)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadMode {
    Open,
    Permissioned,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerSpec {
    pub id: String,
    /// Actor this peer endorses as, if any.
    pub endorser: Option<String>,
    pub delay: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkTopology {
    pub peers: Vec<PeerSpec>,
}

/// Parsed network file: `key: value` lines.
///
/// ```text
/// peers: p0,p1,p2
/// delays: p0=0,p1=1,p2=2
/// endorsers: p0=clinic-gw,p1=lab-gw
/// batch_size: 3
/// batch_timeout_ticks: 2
/// policy_k: 1
/// salt: <64 hex>
/// k_anonymity: 2
/// ticks_per_day: 1
/// read_mode: open
/// ```
#[derive(Debug, Clone)]
pub struct NetworkConfig {
    pub topology: NetworkTopology,
    pub orderer: OrdererConfig,
    pub policy: EndorsementPolicy,
    pub salt: [u8; 32],
    pub pipeline: PipelineConfig,
    pub read_mode: ReadMode,
}

fn pairs(value: &str) -> Result<BTreeMap<String, String>, ConsensusError> {
    let mut out = BTreeMap::new();
    for item in split_list(value) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| ConsensusError::BadConfig(format!("expected peer=value, got {item:?}")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn number<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, ConsensusError> {
    raw.parse().map_err(|_| ConsensusError::BadConfig(format!("{key} must be a non-negative integer")))
}

impl NetworkConfig {
    pub fn parse(text: &str) -> Result<NetworkConfig, ConsensusError> {
        const KEYS: [&str; 10] = [
            "peers",
            "delays",
            "endorsers",
            "batch_size",
            "batch_timeout_ticks",
            "policy_k",
            "salt",
            "k_anonymity",
            "ticks_per_day",
            "read_mode",
        ];
        let e = Entries::parse(text, &KEYS)?;
        let peer_ids = split_list(e.require("peers")?);
        if peer_ids.is_empty() {
            return Err(ConsensusError::BadConfig("at least one peer is required".into()));
        }
        let delays = pairs(e.get("delays").unwrap_or(""))?;
        let endorsers = pairs(e.require("endorsers")?)?;
        for name in delays.keys().chain(endorsers.keys()) {
            if !peer_ids.contains(name) {
                return Err(ConsensusError::BadConfig(format!("unknown peer {name:?}")));
            }
        }
        let mut peers = Vec::new();
        for id in &peer_ids {
            let endorser = endorsers.get(id).cloned();
            if let Some(a) = &endorser {
                if !valid_actor_id(a) {
                    return Err(ConsensusError::BadConfig(format!("bad endorser id {a:?}")));
                }
            }
            let delay = delays.get(id).map(|d| number("delays", d)).transpose()?.unwrap_or(0);
            peers.push(PeerSpec { id: id.clone(), endorser, delay });
        }
        let orderer = OrdererConfig::new(
            number("batch_size", e.require("batch_size")?)?,
            number("batch_timeout_ticks", e.require("batch_timeout_ticks")?)?,
        )?;
        let policy =
            EndorsementPolicy::new(number("policy_k", e.get("policy_k").unwrap_or("1"))?, endorsers.values().cloned())?;
        let mut salt = [0u8; 32];
        hex::decode_to_slice(e.require("salt")?, &mut salt)
            .map_err(|_| ConsensusError::BadConfig("salt must be 64 hex chars".into()))?;
        let pipeline = PipelineConfig {
            k_anonymity: number("k_anonymity", e.get("k_anonymity").unwrap_or("2"))?,
            ticks_per_day: number("ticks_per_day", e.get("ticks_per_day").unwrap_or("1"))?,
        };
        if pipeline.ticks_per_day == 0 {
            return Err(ConsensusError::BadConfig("ticks_per_day must be >= 1".into()));
        }
        let read_mode = match e.get("read_mode").unwrap_or("open") {
            "open" => ReadMode::Open,
            "permissioned" => ReadMode::Permissioned,
            other => return Err(ConsensusError::BadConfig(format!("read_mode {other:?}"))),
        };
        Ok(NetworkConfig { topology: NetworkTopology { peers }, orderer, policy, salt, pipeline, read_mode })
    }

    pub fn validation_context(&self, registry: Registry) -> ValidationContext {
        ValidationContext::new(registry, self.policy.clone())
    }
}

/// Signs, endorses and wraps a proposal. The first endorser's simulation is
/// authoritative; other endorsers contribute only if they computed the same
/// read-write set.
pub fn endorse_proposal<'a>(
    registry: &Registry,
    proposal: TxProposal,
    endorsers: impl IntoIterator<Item = (&'a str, &'a Ledger)>,
) -> Result<Transaction, ContractError> {
    let mut endorsers = endorsers.into_iter();
    let Some((first, first_ledger)) = endorsers.next() else {
        return Err(ContractError::BadArgs("no endorsing peers".into()));
    };
    let rwset = simulate_proposal(&proposal, first_ledger.state(), registry)?;
    let mut endorsements = vec![Endorsement::create(registry, first, &proposal.proposal_id, &rwset)?];
    for (endorser, ledger) in endorsers {
        if let Ok(other) = simulate_proposal(&proposal, ledger.state(), registry) {
            if other == rwset {
                endorsements.push(Endorsement::create(registry, endorser, &proposal.proposal_id, &rwset)?);
            }
        }
    }
    let creator = registry
        .resolve(&proposal.creator)
        .ok_or_else(|| crate::identity::IdentityError::UnknownActor(proposal.creator.clone()))?;
    let signature = registry.sign_as(&creator.actor_id, &proposal.canonical_bytes())?;
    Ok(Transaction::new(proposal, signature, rwset, endorsements))
}

/// One line of a workload file: `tick|actor|command|arg|arg...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadLine {
    pub line: usize,
    pub tick: Timestamp,
    pub actor: String,
    pub command: String,
    pub args: Vec<String>,
}

/// Parses a workload file. Blank lines and `#` comments are skipped; ticks
/// must not decrease.
pub fn parse_workload(text: &str) -> Result<Vec<WorkloadLine>, ConsensusError> {
    let mut out: Vec<WorkloadLine> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| ConsensusError::BadWorkload { line: idx + 1, reason: reason.to_string() };
        let mut parts = line.split('|').map(str::trim);
        let tick: Timestamp = parts.next().unwrap_or("").parse().map_err(|_| bad("tick must be an integer"))?;
        let actor = parts.next().filter(|a| valid_actor_id(a)).ok_or_else(|| bad("bad actor id"))?;
        let command = parts.next().filter(|c| !c.is_empty()).ok_or_else(|| bad("missing command"))?;
        if out.last().is_some_and(|prev| prev.tick > tick) {
            return Err(bad("ticks must not decrease"));
        }
        out.push(WorkloadLine {
            line: idx + 1,
            tick,
            actor: actor.to_string(),
            command: command.to_string(),
            args: parts.map(str::to_string).collect(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadEvent {
    pub tick: Timestamp,
    pub proposal: TxProposal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PeerOutcome {
    pub peer: String,
    pub chain_hash: Digest,
    pub state_digest: Digest,
    pub height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub proposal_id: String,
    pub tick: Timestamp,
    pub error: String,
}

#[derive(Debug)]
pub struct NetworkOutcome {
    pub peers: Vec<PeerOutcome>,
    /// Blocks as emitted by the orderer, before validation.
    pub ordered_blocks: Vec<Block>,
    pub rejected: Vec<Rejection>,
    /// Each peer's ledger after the run.
    pub ledgers: Vec<Ledger>,
}

impl NetworkOutcome {
    pub fn converged(&self) -> bool {
        self.peers.windows(2).all(|w| w[0].chain_hash == w[1].chain_hash && w[0].state_digest == w[1].state_digest)
    }

    pub fn ordered_tx_ids(&self) -> Vec<String> {
        self.ordered_blocks.iter().flat_map(|b| b.txs.iter().map(|t| t.tx_id.clone())).collect()
    }

    /// `(tx_id, code)` pairs in chain order for one peer.
    pub fn codes(&self, peer: usize) -> Vec<(String, ValidationCode)> {
        self.ledgers[peer]
            .chain()
            .iter()
            .flat_map(|b| b.txs.iter())
            .map(|t| (t.tx_id.clone(), t.validation_code.expect("committed")))
            .collect()
    }
}

struct Peer {
    spec: PeerSpec,
    ledger: Ledger,
    inbox: VecDeque<(Timestamp, Block)>,
}

/// Drives simulate, endorse, submit, cut, deliver and commit across every peer
/// on a logical clock. Runs at least `ticks` ticks and then until every
/// submitted transaction is committed everywhere.
pub fn run_network_round(
    topology: &NetworkTopology,
    ctx: &ValidationContext,
    orderer_config: OrdererConfig,
    workload: &[WorkloadEvent],
    ticks: Timestamp,
) -> Result<NetworkOutcome, LedgerError> {
    let delays: Vec<u64> = topology.peers.iter().map(|p| p.delay).collect();
    run_network_round_with_delays(topology, ctx, orderer_config, workload, ticks, &mut |peer, _| delays[peer])
}

/// Like [`run_network_round`], with the delivery delay of each block to each
/// peer (by index) chosen by `delay`. Links stay FIFO: a block never
/// overtakes an earlier one on the same link.
pub fn run_network_round_with_delays(
    topology: &NetworkTopology,
    ctx: &ValidationContext,
    orderer_config: OrdererConfig,
    workload: &[WorkloadEvent],
    ticks: Timestamp,
    delay: &mut dyn FnMut(usize, &Block) -> u64,
) -> Result<NetworkOutcome, LedgerError> {
    let mut peers: Vec<Peer> = topology
        .peers
        .iter()
        .map(|spec| Peer { spec: spec.clone(), ledger: Ledger::new(ctx.clone()), inbox: VecDeque::new() })
        .collect();
    let mut orderer = Orderer::new(orderer_config, &Block::genesis());
    let mut events: Vec<&WorkloadEvent> = workload.iter().collect();
    events.sort_by_key(|e| e.tick);
    let mut events = events.into_iter().peekable();
    let mut ordered_blocks = Vec::new();
    let mut rejected = Vec::new();
    let registry = ctx.registry.clone();

    let mut now: Timestamp = 0;
    loop {
        for peer in &mut peers {
            while peer.inbox.front().is_some_and(|(due, _)| *due <= now) {
                let (_, block) = peer.inbox.pop_front().unwrap();
                peer.ledger.validate_and_commit_block(block)?;
            }
        }

        while let Some(event) = events.next_if(|e| e.tick <= now) {
            let mut proposal = event.proposal.clone();
            proposal.client_timestamp = now;
            let endorsers = peers
                .iter()
                .filter_map(|p| p.spec.endorser.as_deref().map(|e| (e, &p.ledger)))
                .filter(|(e, _)| ctx.policy.endorsers().contains(*e));
            let submitted = endorse_proposal(&registry, proposal, endorsers)
                .map_err(|e| e.name().to_string())
                .and_then(|tx| orderer.submit_endorsed_tx(tx, now).map_err(|e| e.name().to_string()));
            if let Err(error) = submitted {
                rejected.push(Rejection { proposal_id: event.proposal.proposal_id.clone(), tick: now, error });
            }
        }

        while let Some(block) = orderer.cut_block(now) {
            for (i, peer) in peers.iter_mut().enumerate() {
                let earliest = peer.inbox.back().map_or(0, |(due, _)| *due);
                peer.inbox.push_back(((now + delay(i, &block)).max(earliest), block.clone()));
            }
            ordered_blocks.push(block);
        }

        let idle = events.peek().is_none() && orderer.queue_len() == 0 && peers.iter().all(|p| p.inbox.is_empty());
        if now >= ticks && idle {
            break;
        }
        now += 1;
    }

    let outcomes = peers
        .iter()
        .map(|p| PeerOutcome {
            peer: p.spec.id.clone(),
            chain_hash: p.ledger.tip().hash,
            state_digest: p.ledger.state().digest(),
            height: p.ledger.height(),
        })
        .collect();
    Ok(NetworkOutcome {
        peers: outcomes,
        ordered_blocks,
        rejected,
        ledgers: peers.into_iter().map(|p| p.ledger).collect(),
    })
}

/// A single peer that is also its own orderer and every endorser. Each call to
/// [`SoloNode::execute`] simulates a batch against the current state and
/// commits it as one block.
#[derive(Debug, Clone)]
pub struct SoloNode {
    ledger: Ledger,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Committed {
    pub tx_id: String,
    pub height: u64,
    pub tx_index: u32,
    pub code: ValidationCode,
}

impl SoloNode {
    pub fn new(ledger: Ledger) -> SoloNode {
        SoloNode { ledger }
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn into_ledger(self) -> Ledger {
        self.ledger
    }

    /// Endorses and commits `proposals` in one block stamped `now`. Proposals
    /// rejected at simulation produce an error entry and stay off-chain; if
    /// none survive, no block is cut.
    pub fn execute(
        &mut self,
        proposals: Vec<TxProposal>,
        now: Timestamp,
    ) -> Result<Vec<Result<Committed, ContractError>>, LedgerError> {
        let ctx = self.ledger.context().clone();
        let mut results = Vec::new();
        let mut txs = Vec::new();
        for proposal in proposals {
            let endorsers = ctx.policy.endorsers().iter().map(|e| (e.as_str(), &self.ledger));
            match endorse_proposal(&ctx.registry, proposal, endorsers) {
                Ok(tx) => {
                    results.push(Ok(txs.len()));
                    txs.push(tx);
                }
                Err(e) => results.push(Err(e)),
            }
        }
        if txs.is_empty() {
            return Ok(results.into_iter().map(|r| r.map(|_| unreachable!())).collect());
        }
        let tip = self.ledger.tip();
        let block = Block::seal(tip.height + 1, tip.hash, now.max(tip.timestamp), txs);
        let height = block.height;
        let ids: Vec<String> = block.txs.iter().map(|t| t.tx_id.clone()).collect();
        let codes = self.ledger.validate_and_commit_block(block)?;
        Ok(results
            .into_iter()
            .map(|r| r.map(|i| Committed { tx_id: ids[i].clone(), height, tx_index: i as u32, code: codes[i] }))
            .collect())
    }

    pub fn execute_one(
        &mut self,
        proposal: TxProposal,
        now: Timestamp,
    ) -> Result<Result<Committed, ContractError>, LedgerError> {
        Ok(self.execute(vec![proposal], now)?.pop().expect("one result per proposal"))
    }
}
