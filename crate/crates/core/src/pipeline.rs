//! Governed ingestion and reading of health records.
//!
//! Payloads live off-chain, addressed by the SHA-256 of their canonical
//! `field=value` lines. The chain only holds a [`HealthRecordRef`]: payload
//! hash, subject pseudonym, declaration hash, submitter and field names.
//! Erasing a payload deletes it from the store and leaves the reference in
//! place; rectification submits a new record that supersedes the old one.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::PathBuf;

use serde::Serialize;

use crate::consent::{ConsentRecord, ConsentState, Timestamp};
use crate::contracts::{declaration_key, TxProposal};
use crate::digest::Digest;
use crate::identity::Role;
use crate::ledger::{Ledger, StateView, ValidationCode, Version};
use crate::legalprose::{check_field_subset, valid_field_name, DeclarationHash, PurposeDeclaration};
use crate::lines::{optional, split_list, Entries, LineError, Renderer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error("`{0}` may not perform this operation")]
    RoleDenied(String),
    #[error("no granted consent for this subject and declaration")]
    ConsentRequired,
    #[error("fields outside the declaration: {0:?}")]
    MinimizationViolation(Vec<String>),
    #[error("field `{0}` is not part of the declaration")]
    UnknownField(String),
    #[error("no transaction has touched key {0}")]
    UnknownKey(String),
    #[error("unknown actor `{0}`")]
    UnknownActor(String),
    #[error("declaration {0} is not on the ledger")]
    UnknownDeclaration(String),
    #[error("bad payload: {0}")]
    BadPayload(String),
    #[error("payload store: {0}")]
    Store(String),
}

impl PipelineError {
    pub fn name(&self) -> &'static str {
        match self {
            PipelineError::RoleDenied(_) => "RoleDenied",
            PipelineError::ConsentRequired => "ConsentRequired",
            PipelineError::MinimizationViolation(_) => "MinimizationViolation",
            PipelineError::UnknownField(_) => "UnknownField",
            PipelineError::UnknownKey(_) => "UnknownKey",
            PipelineError::UnknownActor(_) => "UnknownActor",
            PipelineError::UnknownDeclaration(_) => "UnknownDeclaration",
            PipelineError::BadPayload(_) => "BadPayload",
            PipelineError::Store(_) => "Store",
        }
    }
}

impl From<io::Error> for PipelineError {
    fn from(err: io::Error) -> Self {
        PipelineError::Store(err.to_string())
    }
}

/// Off-chain record contents: field name to value.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct HealthRecordPayload(pub BTreeMap<String, String>);

impl HealthRecordPayload {
    pub fn new<K: Into<String>, V: Into<String>>(
        fields: impl IntoIterator<Item = (K, V)>,
    ) -> Result<Self, PipelineError> {
        let mut map = BTreeMap::new();
        for (k, v) in fields {
            let (k, v) = (k.into(), v.into());
            if !valid_field_name(&k) {
                return Err(PipelineError::BadPayload(format!("field name {k:?}")));
            }
            if v.contains('\n') {
                return Err(PipelineError::BadPayload(format!("value of {k} spans lines")));
            }
            if map.insert(k.clone(), v).is_some() {
                return Err(PipelineError::BadPayload(format!("duplicate field {k}")));
            }
        }
        Ok(HealthRecordPayload(map))
    }

    /// Parses `field=value` lines.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut pairs = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::BadPayload(format!("expected field=value, got {line:?}")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        HealthRecordPayload::new(pairs)
    }

    pub fn canonical(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn hash(&self) -> Digest {
        Digest::of(self.canonical().as_bytes())
    }

    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn get(&self, field: &str) -> Option<&str> {
        self.0.get(field).map(String::as_str)
    }
}

/// On-chain reference to an off-chain payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HealthRecordRef {
    pub payload_hash: Digest,
    /// `SHA-256(salt ‖ subject actor_id)` in hex; the subject's principal.
    pub subject_pseudo: String,
    pub declaration_hash: DeclarationHash,
    pub submitted_by: String,
    pub submitted_at: Timestamp,
    pub fields: BTreeSet<String>,
    pub supersedes: Option<Digest>,
}

impl HealthRecordRef {
    pub fn key_for(subject_pseudo: &str, payload_hash: &Digest) -> String {
        format!("record/{subject_pseudo}/{}", payload_hash.to_hex())
    }

    pub fn key(&self) -> String {
        HealthRecordRef::key_for(&self.subject_pseudo, &self.payload_hash)
    }

    pub fn to_canonical(&self) -> String {
        let fields: Vec<&str> = self.fields.iter().map(String::as_str).collect();
        Renderer::new()
            .line("payload", self.payload_hash.to_hex())
            .line("subject", &self.subject_pseudo)
            .line("declaration", self.declaration_hash.to_hex())
            .line("submitted_by", &self.submitted_by)
            .line("submitted_at", self.submitted_at.to_string())
            .line("fields", fields.join(","))
            .line("supersedes", self.supersedes.map_or_else(|| "-".to_string(), |d| d.to_hex()))
            .finish()
    }

    pub fn from_canonical(text: &str) -> Result<HealthRecordRef, LineError> {
        const KEYS: [&str; 7] =
            ["payload", "subject", "declaration", "submitted_by", "submitted_at", "fields", "supersedes"];
        let e = Entries::parse(text, &KEYS)?;
        let digest = |k: &str| -> Result<Digest, LineError> {
            Digest::from_hex(e.require(k)?).map_err(|_| LineError::MissingKey(k.to_string()))
        };
        Ok(HealthRecordRef {
            payload_hash: digest("payload")?,
            subject_pseudo: e.require("subject")?.to_string(),
            declaration_hash: digest("declaration")?,
            submitted_by: e.require("submitted_by")?.to_string(),
            submitted_at: e
                .require("submitted_at")?
                .parse()
                .map_err(|_| LineError::MissingKey("submitted_at".to_string()))?,
            fields: split_list(e.require("fields")?).into_iter().collect(),
            supersedes: match optional(e.require("supersedes")?) {
                Some(_) => Some(digest("supersedes")?),
                None => None,
            },
        })
    }
}

/// Storage for off-chain payloads, keyed by payload hash.
pub trait PayloadStore {
    fn put(&mut self, payload: &HealthRecordPayload) -> Result<Digest, PipelineError>;
    fn get(&self, hash: &Digest) -> Result<Option<HealthRecordPayload>, PipelineError>;
    /// Returns whether anything was deleted.
    fn erase(&mut self, hash: &Digest) -> Result<bool, PipelineError>;
    fn len(&self) -> Result<usize, PipelineError>;

    fn is_empty(&self) -> Result<bool, PipelineError> {
        Ok(self.len()? == 0)
    }
}

#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    payloads: BTreeMap<Digest, HealthRecordPayload>,
}

impl PayloadStore for MemoryStore {
    fn put(&mut self, payload: &HealthRecordPayload) -> Result<Digest, PipelineError> {
        let hash = payload.hash();
        self.payloads.insert(hash, payload.clone());
        Ok(hash)
    }

    fn get(&self, hash: &Digest) -> Result<Option<HealthRecordPayload>, PipelineError> {
        Ok(self.payloads.get(hash).cloned())
    }

    fn erase(&mut self, hash: &Digest) -> Result<bool, PipelineError> {
        Ok(self.payloads.remove(hash).is_some())
    }

    fn len(&self) -> Result<usize, PipelineError> {
        Ok(self.payloads.len())
    }
}

/// A directory of files named `<payload_hash_hex>` holding canonical payload
/// lines.
#[derive(Debug, Clone)]
pub struct DirStore {
    dir: PathBuf,
}

impl DirStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<DirStore, PipelineError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(DirStore { dir })
    }
}

impl PayloadStore for DirStore {
    fn put(&mut self, payload: &HealthRecordPayload) -> Result<Digest, PipelineError> {
        let hash = payload.hash();
        fs::write(self.dir.join(hash.to_hex()), payload.canonical())?;
        Ok(hash)
    }

    fn get(&self, hash: &Digest) -> Result<Option<HealthRecordPayload>, PipelineError> {
        match fs::read_to_string(self.dir.join(hash.to_hex())) {
            Ok(text) => {
                let payload = HealthRecordPayload::parse(&text)?;
                if payload.hash() != *hash {
                    return Err(PipelineError::Store(format!("payload {hash} does not match its name")));
                }
                Ok(Some(payload))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn erase(&mut self, hash: &Digest) -> Result<bool, PipelineError> {
        match fs::remove_file(self.dir.join(hash.to_hex())) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    fn len(&self) -> Result<usize, PipelineError> {
        let mut n = 0;
        for entry in fs::read_dir(&self.dir)? {
            if Digest::from_hex(&entry?.file_name().to_string_lossy()).is_ok() {
                n += 1;
            }
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineConfig {
    /// Groups smaller than this are left out of aggregates.
    pub k_anonymity: u64,
    /// Logical ticks per retention day.
    pub ticks_per_day: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { k_anonymity: 2, ticks_per_day: 1 }
    }
}

fn consent_record(view: &dyn StateView, subject_pseudo: &str, hash: &DeclarationHash) -> Option<ConsentRecord> {
    let (bytes, _) = view.get(&ConsentRecord::key_for(subject_pseudo, hash))?;
    ConsentRecord::from_canonical(std::str::from_utf8(bytes).ok()?).ok()
}

/// The declaration stored on-chain under its hash.
pub fn declaration_on_chain(ledger: &Ledger, hash: &DeclarationHash) -> Option<PurposeDeclaration> {
    let bytes = ledger.get_state(&declaration_key(hash))?;
    PurposeDeclaration::parse(std::str::from_utf8(bytes).ok()?).ok()
}

/// Every committed record reference with the version that wrote it.
pub fn committed_refs(ledger: &Ledger) -> Vec<(HealthRecordRef, Version)> {
    ledger
        .state()
        .with_prefix("record/")
        .filter_map(|(_, e)| {
            let text = std::str::from_utf8(&e.value).ok()?;
            Some((HealthRecordRef::from_canonical(text).ok()?, e.version))
        })
        .collect()
}

/// Checks role, consent and minimization in that order; on success stores the
/// payload off-chain and returns the `data.submit` proposal to endorse.
#[allow(clippy::too_many_arguments)]
pub fn submit_health_record(
    ledger: &Ledger,
    store: &mut dyn PayloadStore,
    submitter: &str,
    subject: &str,
    declaration: &PurposeDeclaration,
    payload: &HealthRecordPayload,
    now: Timestamp,
    supersedes: Option<Digest>,
) -> Result<TxProposal, PipelineError> {
    let registry = ledger.registry();
    let actor = registry.get(submitter).ok_or_else(|| PipelineError::UnknownActor(submitter.to_string()))?;
    let inserts = actor.has_role(Role::DataController) || actor.has_role(Role::DataProcessor);
    if !inserts || !actor.active || !declaration.may_submit(submitter) {
        return Err(PipelineError::RoleDenied(submitter.to_string()));
    }
    let pseudo = registry.pseudonym(subject).to_hex();
    let hash = declaration.hash();
    let permitted = consent_record(ledger.state(), &pseudo, &hash).is_some_and(|c| c.is_access_permitted(&hash, now));
    if !permitted {
        return Err(PipelineError::ConsentRequired);
    }
    let violations = check_field_subset(declaration, payload.field_names());
    if !violations.is_empty() {
        return Err(PipelineError::MinimizationViolation(violations));
    }
    let payload_hash = store.put(payload)?;
    Ok(submit_proposal(
        format!("{submitter}:{}:{now}", payload_hash.to_hex()),
        submitter,
        &pseudo,
        &hash,
        payload,
        now,
        supersedes,
    ))
}

/// Builds a `data.submit` proposal without any pre-checks; the contract
/// enforces role, consent and minimization at endorsement.
pub fn submit_proposal(
    proposal_id: impl Into<String>,
    submitter: &str,
    subject_pseudo: &str,
    declaration_hash: &DeclarationHash,
    payload: &HealthRecordPayload,
    now: Timestamp,
    supersedes: Option<Digest>,
) -> TxProposal {
    let fields: Vec<&str> = payload.field_names().collect();
    TxProposal::new(
        proposal_id,
        submitter,
        "data.submit",
        vec![
            subject_pseudo.to_string(),
            declaration_hash.to_hex(),
            payload.hash().to_hex(),
            fields.join(","),
            supersedes.map_or_else(|| "-".to_string(), |d| d.to_hex()),
        ],
        now,
    )
    .expect("data.submit is a known action")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "fields", rename_all = "lowercase")]
pub enum PayloadSlot {
    Present(HealthRecordPayload),
    Erased,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OwnRecord {
    pub key: String,
    pub reference: HealthRecordRef,
    pub locator: Version,
    pub payload: PayloadSlot,
}

/// All records about `subject` submitted up to `now`, joined with their
/// payloads.
pub fn read_own_records(
    ledger: &Ledger,
    store: &dyn PayloadStore,
    subject: &str,
    now: Timestamp,
) -> Result<Vec<OwnRecord>, PipelineError> {
    let registry = ledger.registry();
    let actor = registry.get(subject).ok_or_else(|| PipelineError::UnknownActor(subject.to_string()))?;
    if !actor.has_role(Role::DataSubject) {
        return Err(PipelineError::RoleDenied(subject.to_string()));
    }
    let pseudo = registry.pseudonym(subject).to_hex();
    let mut out = Vec::new();
    for (reference, locator) in committed_refs(ledger) {
        if reference.subject_pseudo != pseudo || reference.submitted_at > now {
            continue;
        }
        let payload = match store.get(&reference.payload_hash)? {
            Some(p) => PayloadSlot::Present(p),
            None => PayloadSlot::Erased,
        };
        out.push(OwnRecord { key: reference.key(), reference, locator, payload });
    }
    Ok(out)
}

/// Aggregate counts without a requester check; used for open-read access.
pub fn aggregate_counts(
    ledger: &Ledger,
    store: &dyn PayloadStore,
    config: &PipelineConfig,
    group_by_field: &str,
    declaration_hash: &DeclarationHash,
    now: Timestamp,
) -> Result<BTreeMap<String, u64>, PipelineError> {
    let decl = declaration_on_chain(ledger, declaration_hash)
        .ok_or_else(|| PipelineError::UnknownDeclaration(declaration_hash.to_hex()))?;
    if !decl.allowed_fields.contains(group_by_field) {
        return Err(PipelineError::UnknownField(group_by_field.to_string()));
    }
    let horizon = decl.retention_days.saturating_mul(config.ticks_per_day);
    let refs = committed_refs(ledger);
    let superseded: BTreeSet<Digest> =
        refs.iter().filter(|(r, _)| r.submitted_at <= now).filter_map(|(r, _)| r.supersedes).collect();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for (r, _) in &refs {
        if r.declaration_hash != *declaration_hash
            || r.submitted_at > now
            || now - r.submitted_at > horizon
            || superseded.contains(&r.payload_hash)
        {
            continue;
        }
        let granted = consent_record(ledger.state(), &r.subject_pseudo, declaration_hash)
            .is_some_and(|c| c.status_at(now) == ConsentState::Granted);
        if !granted {
            continue;
        }
        if let Some(value) = store.get(&r.payload_hash)?.as_ref().and_then(|p| p.get(group_by_field)) {
            *counts.entry(value.to_string()).or_default() += 1;
        }
    }
    counts.retain(|_, n| *n >= config.k_anonymity);
    Ok(counts)
}

/// Counts of `group_by_field` values over records with consent in force and
/// within retention at `now`. Only the grouping value leaves the store, and
/// groups below the k-anonymity threshold are dropped.
pub fn query_aggregate(
    ledger: &Ledger,
    store: &dyn PayloadStore,
    config: &PipelineConfig,
    requester: &str,
    group_by_field: &str,
    declaration_hash: &DeclarationHash,
    now: Timestamp,
) -> Result<BTreeMap<String, u64>, PipelineError> {
    if ledger.registry().get(requester).is_none() {
        return Err(PipelineError::UnknownActor(requester.to_string()));
    }
    aggregate_counts(ledger, store, config, group_by_field, declaration_hash, now)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProvenanceEntry {
    pub actor: String,
    pub action: String,
    pub block_timestamp: Timestamp,
    pub validation_code: ValidationCode,
    pub tx_id: String,
}

/// Everyone who wrote, tried to write, or audited `key`.
pub fn provenance_of(ledger: &Ledger, key: &str) -> Result<Vec<ProvenanceEntry>, PipelineError> {
    let touches = ledger.touches(key);
    if touches.is_empty() {
        return Err(PipelineError::UnknownKey(key.to_string()));
    }
    Ok(touches
        .into_iter()
        .map(|t| ProvenanceEntry {
            actor: t.creator,
            action: t.action,
            block_timestamp: t.block_timestamp,
            validation_code: t.validation_code,
            tx_id: t.tx_id,
        })
        .collect())
}

/// Deletes the payloads of a subject's records under one declaration. Run
/// after a revocation commits.
pub fn erase_after_revocation(
    ledger: &Ledger,
    store: &mut dyn PayloadStore,
    subject: &str,
    declaration_hash: &DeclarationHash,
) -> Result<usize, PipelineError> {
    let pseudo = ledger.registry().pseudonym(subject).to_hex();
    let mut erased = 0;
    for (r, _) in committed_refs(ledger) {
        if r.subject_pseudo == pseudo && r.declaration_hash == *declaration_hash && store.erase(&r.payload_hash)? {
            erased += 1;
        }
    }
    Ok(erased)
}

/// Deletes the payloads of every record whose subject's consent for its
/// declaration stands revoked at the tip.
pub fn erase_revoked(ledger: &Ledger, store: &mut dyn PayloadStore) -> Result<usize, PipelineError> {
    let mut erased = 0;
    for (r, _) in committed_refs(ledger) {
        let revoked = consent_record(ledger.state(), &r.subject_pseudo, &r.declaration_hash)
            .is_some_and(|c| c.state == ConsentState::Revoked);
        if revoked && store.erase(&r.payload_hash)? {
            erased += 1;
        }
    }
    Ok(erased)
}

/// Deletes the payloads of every record that a committed record supersedes.
pub fn erase_superseded(ledger: &Ledger, store: &mut dyn PayloadStore) -> Result<usize, PipelineError> {
    let mut erased = 0;
    for (r, _) in committed_refs(ledger) {
        if let Some(old) = r.supersedes {
            if store.erase(&old)? {
                erased += 1;
            }
        }
    }
    Ok(erased)
}
