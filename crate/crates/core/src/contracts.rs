//! Built-in governance contracts and the endorsement machinery.
//!
//! Simulation runs a proposal against an immutable state snapshot and returns
//! the read-write set it would produce. Governance rules (consent transitions,
//! minimization, purpose binding, roles) are enforced here, at simulation
//! time. Concurrency conflicts are the ledger's business at commit time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::consent::{ConsentError, ConsentRecord, Decision, Timestamp};
use crate::digest::Digest;
use crate::identity::{render_roles, Actor, IdentityError, Registry, Role, Signature};
use crate::ledger::{StateView, Version};
use crate::legalprose::{check_field_subset, DeclarationHash, ProseError, PurposeDeclaration};
use crate::pipeline::HealthRecordRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContractKind {
    Consent,
    Data,
    Audit,
}

impl ContractKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContractKind::Consent => "consent",
            ContractKind::Data => "data",
            ContractKind::Audit => "audit",
        }
    }
}

impl fmt::Display for ContractKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContractKind {
    type Err = ContractError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "consent" => Ok(ContractKind::Consent),
            "data" => Ok(ContractKind::Data),
            "audit" => Ok(ContractKind::Audit),
            other => Err(ContractError::UnknownContract(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContractError {
    #[error("unknown contract `{0}`")]
    UnknownContract(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("bad arguments: {0}")]
    BadArgs(String),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Consent(#[from] ConsentError),
    #[error(transparent)]
    Prose(#[from] ProseError),
    #[error("declaration {0} is not on the ledger")]
    UnknownDeclaration(String),
    #[error("declaration {0} is already on the ledger")]
    DeclarationExists(String),
    #[error("`{0}` is not a data subject")]
    NotADataSubject(String),
    #[error("`{0}` may not perform this action")]
    RoleDenied(String),
    #[error("no granted consent for this subject and declaration")]
    ConsentRequired,
    #[error("fields outside the declaration: {0:?}")]
    MinimizationViolation(Vec<String>),
    #[error("record {0} already exists")]
    DuplicateRecord(String),
    #[error("record {0} does not exist")]
    UnknownRecord(String),
    #[error("invalid state key {0:?}")]
    BadKey(String),
    #[error("stored value under {0} is corrupt")]
    CorruptState(String),
}

impl ContractError {
    /// Stable error name; wrapped errors report their own.
    pub fn name(&self) -> &'static str {
        match self {
            ContractError::UnknownContract(_) => "UnknownContract",
            ContractError::UnknownAction(_) => "UnknownAction",
            ContractError::BadArgs(_) => "BadArgs",
            ContractError::Identity(e) => e.name(),
            ContractError::Consent(e) => e.name(),
            ContractError::Prose(e) => e.name(),
            ContractError::UnknownDeclaration(_) => "UnknownDeclaration",
            ContractError::DeclarationExists(_) => "DeclarationExists",
            ContractError::NotADataSubject(_) => "NotADataSubject",
            ContractError::RoleDenied(_) => "RoleDenied",
            ContractError::ConsentRequired => "ConsentRequired",
            ContractError::MinimizationViolation(_) => "MinimizationViolation",
            ContractError::DuplicateRecord(_) => "DuplicateRecord",
            ContractError::UnknownRecord(_) => "UnknownRecord",
            ContractError::BadKey(_) => "BadKey",
            ContractError::CorruptState(_) => "CorruptState",
        }
    }
}

pub fn valid_key(key: &str) -> bool {
    !key.is_empty() && key.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'/' | b'_' | b'.' | b'-'))
}

pub fn declaration_key(hash: &DeclarationHash) -> String {
    format!("decl/{}", hash.to_hex())
}

pub fn identity_key(principal: &str) -> String {
    format!("identity/{principal}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxProposal {
    pub proposal_id: String,
    pub creator: String,
    pub contract: ContractKind,
    pub action: String,
    pub args: Vec<String>,
    pub client_timestamp: Timestamp,
}

impl TxProposal {
    /// Accepts `contract.action` notation, e.g. `consent.respond`.
    pub fn new(
        proposal_id: impl Into<String>,
        creator: impl Into<String>,
        qualified_action: &str,
        args: Vec<String>,
        client_timestamp: Timestamp,
    ) -> Result<TxProposal, ContractError> {
        let (contract, action) = qualified_action
            .split_once('.')
            .ok_or_else(|| ContractError::UnknownAction(qualified_action.to_string()))?;
        Ok(TxProposal {
            proposal_id: proposal_id.into(),
            creator: creator.into(),
            contract: contract.parse()?,
            action: action.to_string(),
            args,
            client_timestamp,
        })
    }

    pub fn qualified_action(&self) -> String {
        format!("{}.{}", self.contract, self.action)
    }

    /// Line-oriented canonical encoding. Arguments are hex-encoded so they
    /// may hold arbitrary text.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let args: Vec<String> = self.args.iter().map(hex::encode).collect();
        format!(
            "proposal:{}\ncreator:{}\ncontract:{}\naction:{}\nargs:{}:{}\ntime:{}\n",
            hex::encode(&self.proposal_id),
            self.creator,
            self.contract,
            self.action,
            args.len(),
            args.join(","),
            self.client_timestamp
        )
        .into_bytes()
    }

    pub fn tx_id(&self) -> String {
        Digest::of(&self.canonical_bytes()).to_hex()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadEntry {
    pub key: String,
    /// `None` when the key was absent from the snapshot.
    pub version: Option<Version>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteEntry {
    pub key: String,
    #[serde(with = "hex_bytes")]
    pub value: Vec<u8>,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadWriteSet {
    pub reads: Vec<ReadEntry>,
    pub writes: Vec<WriteEntry>,
}

impl ReadWriteSet {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        for r in &self.reads {
            match r.version {
                Some(v) => out.push_str(&format!("read:{}@{}\n", r.key, v)),
                None => out.push_str(&format!("read:{}@-\n", r.key)),
            }
        }
        for w in &self.writes {
            out.push_str(&format!("write:{}={}\n", w.key, hex::encode(&w.value)));
        }
        out.into_bytes()
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }

    pub fn is_read_only(&self) -> bool {
        self.writes.is_empty()
    }

    pub fn write_for(&self, key: &str) -> Option<&[u8]> {
        self.writes.iter().find(|w| w.key == key).map(|w| w.value.as_slice())
    }

    pub fn reads_key(&self, key: &str) -> bool {
        self.reads.iter().any(|r| r.key == key)
    }
}

/// Collects reads and writes during simulation; emits them sorted by key.
struct RwTracker<'a> {
    state: &'a dyn StateView,
    reads: BTreeMap<String, Option<Version>>,
    writes: BTreeMap<String, Vec<u8>>,
}

impl<'a> RwTracker<'a> {
    fn new(state: &'a dyn StateView) -> Self {
        RwTracker { state, reads: BTreeMap::new(), writes: BTreeMap::new() }
    }

    fn read(&mut self, key: &str) -> Result<Option<Vec<u8>>, ContractError> {
        if !valid_key(key) {
            return Err(ContractError::BadKey(key.to_string()));
        }
        let found = self.state.get(key);
        self.reads.entry(key.to_string()).or_insert(found.map(|(_, v)| v));
        Ok(found.map(|(bytes, _)| bytes.to_vec()))
    }

    fn read_text(&mut self, key: &str) -> Result<Option<String>, ContractError> {
        self.read(key)?
            .map(|b| String::from_utf8(b).map_err(|_| ContractError::CorruptState(key.to_string())))
            .transpose()
    }

    fn write(&mut self, key: String, value: Vec<u8>) {
        self.writes.insert(key, value);
    }

    fn finish(self) -> ReadWriteSet {
        ReadWriteSet {
            reads: self.reads.into_iter().map(|(key, version)| ReadEntry { key, version }).collect(),
            writes: self.writes.into_iter().map(|(key, value)| WriteEntry { key, value }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endorsement {
    pub endorser: String,
    pub rwset_digest: Digest,
    pub signature: Signature,
}

impl Endorsement {
    pub fn message(proposal_id: &str, rwset_digest: &Digest) -> Vec<u8> {
        let mut msg = proposal_id.as_bytes().to_vec();
        msg.extend_from_slice(rwset_digest.as_bytes());
        msg
    }

    pub fn create(
        registry: &Registry,
        endorser: &str,
        proposal_id: &str,
        rwset: &ReadWriteSet,
    ) -> Result<Endorsement, IdentityError> {
        let rwset_digest = rwset.digest();
        let signature = registry.sign_as(endorser, &Endorsement::message(proposal_id, &rwset_digest))?;
        Ok(Endorsement { endorser: endorser.to_string(), rwset_digest, signature })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("endorsement policy needs 1 <= k <= {n}, got k = {k}")]
pub struct BadPolicy {
    pub k: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EndorsementPolicy {
    k: usize,
    endorser_set: BTreeSet<String>,
}

impl EndorsementPolicy {
    pub fn new(k: usize, endorser_set: impl IntoIterator<Item = String>) -> Result<Self, BadPolicy> {
        let endorser_set: BTreeSet<String> = endorser_set.into_iter().collect();
        if k == 0 || k > endorser_set.len() {
            return Err(BadPolicy { k, n: endorser_set.len() });
        }
        Ok(EndorsementPolicy { k, endorser_set })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn endorsers(&self) -> &BTreeSet<String> {
        &self.endorser_set
    }
}

/// True iff at least `k` distinct members of the endorser set signed this
/// proposal over exactly this rwset. Invalid endorsements are skipped.
pub fn check_endorsement_policy(
    registry: &Registry,
    policy: &EndorsementPolicy,
    endorsements: &[Endorsement],
    proposal_id: &str,
    rwset: &ReadWriteSet,
) -> bool {
    let digest = rwset.digest();
    let message = Endorsement::message(proposal_id, &digest);
    let mut good = BTreeSet::new();
    for e in endorsements {
        if !policy.endorser_set.contains(&e.endorser) || e.rwset_digest != digest {
            continue;
        }
        let active = registry.get(&e.endorser).is_some_and(|a| a.active);
        if active && registry.verify(&e.endorser, &message, &e.signature).unwrap_or(false) {
            good.insert(e.endorser.as_str());
        }
    }
    good.len() >= policy.k
}

fn active_creator<'r>(registry: &'r Registry, principal: &str) -> Result<&'r Actor, ContractError> {
    let actor = registry.resolve(principal).ok_or_else(|| IdentityError::UnknownActor(principal.to_string()))?;
    if !actor.active {
        return Err(IdentityError::Deactivated(principal.to_string()).into());
    }
    Ok(actor)
}

fn arg<'p>(proposal: &'p TxProposal, idx: usize, what: &str) -> Result<&'p str, ContractError> {
    proposal
        .args
        .get(idx)
        .map(String::as_str)
        .ok_or_else(|| ContractError::BadArgs(format!("missing argument {idx} ({what})")))
}

fn expect_arity(proposal: &TxProposal, n: usize) -> Result<(), ContractError> {
    if proposal.args.len() != n {
        return Err(ContractError::BadArgs(format!(
            "{} takes {n} arguments, got {}",
            proposal.qualified_action(),
            proposal.args.len()
        )));
    }
    Ok(())
}

fn hash_arg(proposal: &TxProposal, idx: usize) -> Result<DeclarationHash, ContractError> {
    let raw = arg(proposal, idx, "hash")?;
    Digest::from_hex(raw).map_err(|_| ContractError::BadArgs(format!("argument {idx} is not a hash")))
}

fn load_declaration(rw: &mut RwTracker<'_>, hash: &DeclarationHash) -> Result<PurposeDeclaration, ContractError> {
    let key = declaration_key(hash);
    let text = rw.read_text(&key)?.ok_or_else(|| ContractError::UnknownDeclaration(hash.to_hex()))?;
    PurposeDeclaration::parse(&text).map_err(|_| ContractError::CorruptState(key))
}

fn load_consent(rw: &mut RwTracker<'_>, subject: &str, hash: &DeclarationHash) -> Result<ConsentRecord, ContractError> {
    let key = ConsentRecord::key_for(subject, hash);
    match rw.read_text(&key)? {
        Some(text) => ConsentRecord::from_canonical(&text).map_err(|_| ContractError::CorruptState(key)),
        None => Ok(ConsentRecord::new(subject, *hash)),
    }
}

fn subject_arg<'r>(registry: &'r Registry, principal: &str) -> Result<&'r Actor, ContractError> {
    let actor = registry.resolve(principal).ok_or_else(|| IdentityError::UnknownActor(principal.to_string()))?;
    if !actor.has_role(Role::DataSubject) {
        return Err(ContractError::NotADataSubject(principal.to_string()));
    }
    Ok(actor)
}

/// Runs a proposal against `snapshot` without touching it.
pub fn simulate_proposal(
    proposal: &TxProposal,
    snapshot: &dyn StateView,
    registry: &Registry,
) -> Result<ReadWriteSet, ContractError> {
    let creator = active_creator(registry, &proposal.creator)?;
    let mut rw = RwTracker::new(snapshot);
    let now = proposal.client_timestamp;
    match (proposal.contract, proposal.action.as_str()) {
        (ContractKind::Consent, "declare") => {
            expect_arity(proposal, 1)?;
            let decl = PurposeDeclaration::parse(arg(proposal, 0, "declaration")?)?;
            if !creator.has_role(Role::DataController) || decl.controller != creator.actor_id {
                return Err(ContractError::RoleDenied(proposal.creator.clone()));
            }
            decl.validate_parties(registry)?;
            let hash = decl.hash();
            let key = declaration_key(&hash);
            if rw.read(&key)?.is_some() {
                return Err(ContractError::DeclarationExists(hash.to_hex()));
            }
            rw.write(key, decl.render_canonical().into_bytes());
        }
        (ContractKind::Consent, "request") => {
            expect_arity(proposal, 2)?;
            let subject = arg(proposal, 0, "subject")?;
            subject_arg(registry, subject)?;
            let hash = hash_arg(proposal, 1)?;
            let decl = load_declaration(&mut rw, &hash)?;
            let record = load_consent(&mut rw, subject, &hash)?;
            let next = record.request(&proposal.creator, &creator.roles, now)?;
            if decl.controller != creator.actor_id {
                return Err(ContractError::RoleDenied(proposal.creator.clone()));
            }
            rw.write(next.key(), next.to_canonical().into_bytes());
        }
        (ContractKind::Consent, "respond") => {
            expect_arity(proposal, 3)?;
            let subject = arg(proposal, 0, "subject")?;
            let hash = hash_arg(proposal, 1)?;
            let decision: Decision = arg(proposal, 2, "decision")?.parse()?;
            let record = load_consent(&mut rw, subject, &hash)?;
            let next = record.respond(&proposal.creator, decision, now)?;
            rw.write(next.key(), next.to_canonical().into_bytes());
        }
        (ContractKind::Consent, "revoke") => {
            expect_arity(proposal, 2)?;
            let subject = arg(proposal, 0, "subject")?;
            let hash = hash_arg(proposal, 1)?;
            let record = load_consent(&mut rw, subject, &hash)?;
            let next = record.revoke(&proposal.creator, now)?;
            rw.write(next.key(), next.to_canonical().into_bytes());
        }
        (ContractKind::Consent, "enroll") => {
            // Records a member's roles in the identity namespace.
            expect_arity(proposal, 1)?;
            if !creator.has_role(Role::DataController) {
                return Err(ContractError::RoleDenied(proposal.creator.clone()));
            }
            let principal = arg(proposal, 0, "principal")?;
            let member =
                registry.resolve(principal).ok_or_else(|| IdentityError::UnknownActor(principal.to_string()))?;
            let key = identity_key(principal);
            rw.read(&key)?;
            rw.write(key, format!("roles:{}\n", render_roles(&member.roles)).into_bytes());
        }
        (ContractKind::Data, "submit") => {
            expect_arity(proposal, 5)?;
            let subject = arg(proposal, 0, "subject")?;
            subject_arg(registry, subject)?;
            let hash = hash_arg(proposal, 1)?;
            let payload_hash = hash_arg(proposal, 2)?;
            let fields = crate::lines::split_list(arg(proposal, 3, "fields")?);
            let supersedes = match crate::lines::optional(arg(proposal, 4, "supersedes")?) {
                Some(_) => Some(hash_arg(proposal, 4)?),
                None => None,
            };
            let decl = load_declaration(&mut rw, &hash)?;
            let may_insert = creator.has_role(Role::DataController) || creator.has_role(Role::DataProcessor);
            if !may_insert || !decl.may_submit(&creator.actor_id) {
                return Err(ContractError::RoleDenied(proposal.creator.clone()));
            }
            let consent = load_consent(&mut rw, subject, &hash)?;
            if !consent.is_access_permitted(&hash, now) {
                return Err(ContractError::ConsentRequired);
            }
            let violations = check_field_subset(&decl, fields.iter().map(String::as_str));
            if !violations.is_empty() {
                return Err(ContractError::MinimizationViolation(violations));
            }
            let key = HealthRecordRef::key_for(subject, &payload_hash);
            if rw.read(&key)?.is_some() {
                return Err(ContractError::DuplicateRecord(key));
            }
            if let Some(old) = supersedes {
                let old_key = HealthRecordRef::key_for(subject, &old);
                let text = rw.read_text(&old_key)?.ok_or_else(|| ContractError::UnknownRecord(old_key.clone()))?;
                let old_ref =
                    HealthRecordRef::from_canonical(&text).map_err(|_| ContractError::CorruptState(old_key.clone()))?;
                if old_ref.declaration_hash != hash {
                    return Err(ContractError::UnknownRecord(old_key));
                }
            }
            let record = HealthRecordRef {
                payload_hash,
                subject_pseudo: subject.to_string(),
                declaration_hash: hash,
                submitted_by: creator.actor_id.clone(),
                submitted_at: now,
                fields: fields.into_iter().collect(),
                supersedes,
            };
            rw.write(key, record.to_canonical().into_bytes());
        }
        (ContractKind::Audit, "history") => {
            expect_arity(proposal, 1)?;
            rw.read(arg(proposal, 0, "key")?)?;
        }
        (_, action) => return Err(ContractError::UnknownAction(format!("{}.{action}", proposal.contract))),
    }
    Ok(rw.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::WorldState;

    fn registry() -> Registry {
        let mut reg = Registry::new([9; 32]);
        reg.register_organization("clinic").unwrap();
        for (id, seed) in [("e1", 1u8), ("e2", 2), ("e3", 3)] {
            reg.register_actor_with_seed(id, Some("clinic"), [Role::DataController].into(), [seed; 32]).unwrap();
        }
        reg
    }

    fn rwset() -> ReadWriteSet {
        ReadWriteSet {
            reads: vec![ReadEntry { key: "a".into(), version: None }],
            writes: vec![WriteEntry { key: "a".into(), value: b"v".to_vec() }],
        }
    }

    fn policy(k: usize) -> EndorsementPolicy {
        EndorsementPolicy::new(k, ["e1", "e2", "e3"].map(String::from)).unwrap()
    }

    #[test]
    fn policy_bounds() {
        assert!(EndorsementPolicy::new(0, ["e1".to_string()]).is_err());
        assert!(EndorsementPolicy::new(2, ["e1".to_string()]).is_err());
    }

    #[test]
    fn two_of_three() {
        let reg = registry();
        let rw = rwset();
        let e1 = Endorsement::create(&reg, "e1", "p", &rw).unwrap();
        let e2 = Endorsement::create(&reg, "e2", "p", &rw).unwrap();
        assert!(check_endorsement_policy(&reg, &policy(2), &[e1.clone(), e2], "p", &rw));
        assert!(!check_endorsement_policy(&reg, &policy(2), &[e1.clone(), e1], "p", &rw));
    }

    #[test]
    fn digest_mismatch_and_wrong_proposal() {
        let reg = registry();
        let rw = rwset();
        let mut e1 = Endorsement::create(&reg, "e1", "p", &rw).unwrap();
        assert!(!check_endorsement_policy(&reg, &policy(1), &[e1.clone()], "q", &rw));
        e1.rwset_digest.0[3] ^= 0x10;
        assert!(!check_endorsement_policy(&reg, &policy(1), &[e1], "p", &rw));
    }

    #[test]
    fn any_write_bit_flip_breaks_endorsement() {
        let reg = registry();
        let rw = rwset();
        let e1 = Endorsement::create(&reg, "e1", "p", &rw).unwrap();
        for byte in 0..rw.writes[0].value.len() {
            for bit in 0..8 {
                let mut tampered = rw.clone();
                tampered.writes[0].value[byte] ^= 1 << bit;
                assert!(!check_endorsement_policy(&reg, &policy(1), std::slice::from_ref(&e1), "p", &tampered));
            }
        }
    }

    #[test]
    fn outsiders_do_not_count() {
        let mut reg = registry();
        reg.register_actor_with_seed("e4", Some("clinic"), [Role::DataController].into(), [4; 32]).unwrap();
        let rw = rwset();
        let e4 = Endorsement::create(&reg, "e4", "p", &rw).unwrap();
        assert!(!check_endorsement_policy(&reg, &policy(1), &[e4], "p", &rw));
    }

    #[test]
    fn unknown_contract_and_action() {
        let reg = registry();
        let state = WorldState::default();
        assert_eq!(TxProposal::new("p", "e1", "vault.open", vec![], 0).unwrap_err().name(), "UnknownContract");
        let p = TxProposal::new("p", "e1", "consent.explode", vec![], 0).unwrap();
        assert_eq!(simulate_proposal(&p, &state, &reg).unwrap_err().name(), "UnknownAction");
    }

    #[test]
    fn audit_history_is_read_only() {
        let reg = registry();
        let state = WorldState::default();
        let p = TxProposal::new("p", "e1", "audit.history", vec!["record/x".into()], 0).unwrap();
        let rw = simulate_proposal(&p, &state, &reg).unwrap();
        assert!(rw.is_read_only());
        assert_eq!(rw.reads, vec![ReadEntry { key: "record/x".into(), version: None }]);
    }

    #[test]
    fn proposal_encoding_distinguishes_arguments() {
        let a = TxProposal::new("p", "e1", "audit.history", vec!["a,b".into()], 0).unwrap();
        let b = TxProposal::new("p", "e1", "audit.history", vec!["a".into(), "b".into()], 0).unwrap();
        let c = TxProposal::new("p", "e1", "audit.history", vec![], 0).unwrap();
        let d = TxProposal::new("p", "e1", "audit.history", vec!["".into()], 0).unwrap();
        let ids: BTreeSet<String> = [a, b, c, d].iter().map(TxProposal::tx_id).collect();
        assert_eq!(ids.len(), 4);
    }
}
