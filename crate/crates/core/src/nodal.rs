//! Read-only query endpoints over a committed ledger, and audit export.
//!
//! Routing is transport-independent; the CLI puts an HTTP server in front.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};

use crate::consensus::ReadMode;
use crate::consent::{ConsentRecord, ConsentState, Timestamp};
use crate::digest::Digest;
use crate::identity::Role;
use crate::ledger::{verify_chain, Ledger, StateView, ValidationCode};
use crate::pipeline::{aggregate_counts, provenance_of, query_aggregate, PayloadStore, PipelineConfig, PipelineError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NodalError {
    #[error("no route for {0}")]
    UnknownRoute(String),
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("bad height range [{from}, {to})")]
    BadRange { from: u64, to: u64 },
    #[error("no committed value for key {0}")]
    UnknownKey(String),
    #[error("reads require a registered actor")]
    UnknownActor(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl NodalError {
    pub fn name(&self) -> &'static str {
        match self {
            NodalError::UnknownRoute(_) => "UnknownRoute",
            NodalError::BadParams(_) => "BadParams",
            NodalError::BadRange { .. } => "BadRange",
            NodalError::UnknownKey(_) => "UnknownKey",
            NodalError::UnknownActor(_) => "UnknownActor",
            NodalError::Pipeline(e) => e.name(),
        }
    }

    /// HTTP status for the transport layer.
    pub fn status(&self) -> u16 {
        match self {
            NodalError::UnknownRoute(_) | NodalError::UnknownKey(_) => 404,
            NodalError::BadParams(_) | NodalError::BadRange { .. } => 400,
            NodalError::UnknownActor(_) => 403,
            NodalError::Pipeline(_) => 422,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QueryRequest {
    pub endpoint: String,
    pub params: BTreeMap<String, String>,
    /// Caller identity, from the `X-Actor-Id` header over HTTP.
    pub actor: Option<String>,
}

impl QueryRequest {
    /// Splits `path?a=1&b=2`. Values are taken literally.
    pub fn from_url(url: &str, actor: Option<String>) -> QueryRequest {
        let (endpoint, query) = url.split_once('?').unwrap_or((url, ""));
        let params = query
            .split('&')
            .filter(|p| !p.is_empty())
            .map(|p| {
                let (k, v) = p.split_once('=').unwrap_or((p, ""));
                (k.to_string(), v.to_string())
            })
            .collect();
        QueryRequest { endpoint: endpoint.to_string(), params, actor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResponse {
    pub ok: bool,
    pub payload: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(skip)]
    pub status: u16,
}

impl QueryResponse {
    fn from_result(result: Result<Value, NodalError>) -> QueryResponse {
        match result {
            Ok(payload) => QueryResponse { ok: true, payload, error: None, detail: None, status: 200 },
            Err(e) => QueryResponse {
                ok: false,
                payload: Value::Null,
                error: Some(e.name().to_string()),
                detail: Some(e.to_string()),
                status: e.status(),
            },
        }
    }
}

/// A read view over one ledger snapshot and the payload store.
pub struct NodalPoint<'a> {
    pub ledger: &'a Ledger,
    pub store: &'a dyn PayloadStore,
    pub config: PipelineConfig,
    pub read_mode: ReadMode,
}

fn digest_param(raw: &str, name: &str) -> Result<Digest, NodalError> {
    Digest::from_hex(raw).map_err(|_| NodalError::BadParams(format!("{name} must be a 64-char lowercase hex digest")))
}

impl NodalPoint<'_> {
    pub fn handle_query(&self, request: &QueryRequest) -> QueryResponse {
        QueryResponse::from_result(self.route(request))
    }

    fn time_param(&self, request: &QueryRequest) -> Result<Timestamp, NodalError> {
        match request.params.get("at") {
            None => Ok(self.ledger.tip().timestamp),
            Some(raw) => raw.parse().map_err(|_| NodalError::BadParams("at must be a tick".into())),
        }
    }

    fn route(&self, request: &QueryRequest) -> Result<Value, NodalError> {
        if self.read_mode == ReadMode::Permissioned {
            let actor = request.actor.as_deref().unwrap_or("");
            if !self.ledger.registry().get(actor).is_some_and(|a| a.active) {
                return Err(NodalError::UnknownActor(actor.to_string()));
            }
        }
        let path = request.endpoint.strip_prefix('/').unwrap_or(&request.endpoint);
        let (head, rest) = path.split_once('/').unwrap_or((path, ""));
        match (head, rest) {
            ("chain", "verify") => Ok(self.verify()),
            ("chain", r) if r.starts_with("block/") => self.block(&r["block/".len()..]),
            ("state", key) if !key.is_empty() => self.state(key),
            ("history", key) if !key.is_empty() => {
                Ok(serde_json::to_value(self.ledger.get_history(key)).expect("serializable"))
            }
            ("analysis", "aggregate") => self.aggregate(request),
            ("consent", r) => self.consent(r, request),
            ("provenance", key) if !key.is_empty() => {
                Ok(serde_json::to_value(provenance_of(self.ledger, key)?).expect("serializable"))
            }
            _ => Err(NodalError::UnknownRoute(request.endpoint.clone())),
        }
    }

    fn verify(&self) -> Value {
        match verify_chain(self.ledger.chain(), self.ledger.context()) {
            Ok(()) => json!({ "valid": true, "height": self.ledger.height(), "tip": self.ledger.tip().hash }),
            Err(h) => json!({ "valid": false, "first_bad_height": h }),
        }
    }

    fn block(&self, raw: &str) -> Result<Value, NodalError> {
        let h: u64 = raw.parse().map_err(|_| NodalError::BadParams(format!("bad height {raw:?}")))?;
        let block = self
            .ledger
            .chain()
            .get(h as usize)
            .ok_or_else(|| NodalError::BadParams(format!("height {h} beyond tip {}", self.ledger.height())))?;
        Ok(serde_json::to_value(block).expect("serializable"))
    }

    fn state(&self, key: &str) -> Result<Value, NodalError> {
        let (value, version) = self.ledger.state().get(key).ok_or_else(|| NodalError::UnknownKey(key.to_string()))?;
        Ok(json!({
            "key": key,
            "value_hex": hex::encode(value),
            "value_text": std::str::from_utf8(value).ok(),
            "version": version.to_string(),
        }))
    }

    fn aggregate(&self, request: &QueryRequest) -> Result<Value, NodalError> {
        let field = request.params.get("field").ok_or_else(|| NodalError::BadParams("missing field".into()))?;
        let decl = request.params.get("decl").ok_or_else(|| NodalError::BadParams("missing decl".into()))?;
        let decl = digest_param(decl, "decl")?;
        let now = self.time_param(request)?;
        let counts = match (&request.actor, self.read_mode) {
            (Some(actor), _) => query_aggregate(self.ledger, self.store, &self.config, actor, field, &decl, now)?,
            (None, ReadMode::Open) => aggregate_counts(self.ledger, self.store, &self.config, field, &decl, now)?,
            (None, ReadMode::Permissioned) => unreachable!("checked at route entry"),
        };
        Ok(serde_json::to_value(counts).expect("serializable"))
    }

    fn consent(&self, rest: &str, request: &QueryRequest) -> Result<Value, NodalError> {
        let (subject, decl) = rest.split_once('/').ok_or_else(|| NodalError::UnknownRoute(request.endpoint.clone()))?;
        let decl = digest_param(decl, "decl")?;
        let registry = self.ledger.registry();
        // Raw subject ids are pseudonymized here; pseudonyms pass through.
        let principal = match registry.get(subject) {
            Some(a) if a.has_role(Role::DataSubject) => registry.principal_of(a),
            _ => subject.to_string(),
        };
        let at = self.time_param(request)?;
        let state = self
            .ledger
            .get_state(&ConsentRecord::key_for(&principal, &decl))
            .and_then(|b| std::str::from_utf8(b).ok())
            .and_then(|t| ConsentRecord::from_canonical(t).ok())
            .map_or(ConsentState::NotRequested, |r| r.status_at(at));
        Ok(json!({ "subject": principal, "declaration": decl, "at": at, "state": state }))
    }
}

#[derive(Debug, Clone, Serialize)]
struct AuditLine<'a> {
    height: u64,
    tx_index: usize,
    tx_id: &'a str,
    creator: &'a str,
    contract: &'a str,
    action: &'a str,
    timestamp: Timestamp,
    validation_code: ValidationCode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditExport {
    /// Newline-delimited JSON, one object per transaction.
    pub text: String,
    pub lines: usize,
    pub digest: Digest,
}

/// Exports every transaction, valid or not, in blocks `[from, to)`.
pub fn export_audit(ledger: &Ledger, from: u64, to: u64) -> Result<AuditExport, NodalError> {
    if from > to || to > ledger.height() + 1 {
        return Err(NodalError::BadRange { from, to });
    }
    let mut text = String::new();
    let mut lines = 0;
    for block in &ledger.chain()[from as usize..to as usize] {
        for (i, tx) in block.txs.iter().enumerate() {
            let line = AuditLine {
                height: block.height,
                tx_index: i,
                tx_id: &tx.tx_id,
                creator: &tx.proposal.creator,
                contract: tx.proposal.contract.as_str(),
                action: &tx.proposal.action,
                timestamp: block.timestamp,
                validation_code: tx.validation_code.expect("committed"),
            };
            text.push_str(&serde_json::to_string(&line).expect("serializable"));
            text.push('\n');
            lines += 1;
        }
    }
    let digest = Digest::of(text.as_bytes());
    Ok(AuditExport { text, lines, digest })
}
