//! Purpose declarations: parsing, canonical rendering and content hashing.
//!
//! A declaration states who controls the data, who may process it, why it is
//! collected, which fields may be collected and for how long. It is immutable
//! once hashed; a changed purpose is a different declaration with a different
//! hash and needs fresh consent.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::digest::Digest;
use crate::identity::{valid_actor_id, Registry, Role};
use crate::lines::{split_list, Entries, LineError, Renderer};

const KEYS: [&str; 7] = ["id", "controller", "processors", "purpose", "fields", "retention_days", "scenario"];

pub type DeclarationHash = Digest;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProseError {
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("line {0} is not `key: value`")]
    Malformed(usize),
    #[error("declaration lists no fields")]
    EmptyFields,
    #[error("retention_days must be a positive integer, got {0:?}")]
    BadRetention(String),
    #[error("field name {0:?} must match [a-z0-9_]+")]
    BadFieldName(String),
    #[error("purpose text is empty")]
    EmptyPurpose,
    #[error("invalid actor id {0:?}")]
    BadActorId(String),
    #[error("controller `{0}` is not a registered data controller")]
    BadController(String),
    #[error("processor `{0}` is not a registered data processor or controller")]
    BadProcessor(String),
}

impl ProseError {
    pub fn name(&self) -> &'static str {
        match self {
            ProseError::MissingKey(_) => "MissingKey",
            ProseError::UnknownKey(_) => "UnknownKey",
            ProseError::DuplicateKey(_) => "DuplicateKey",
            ProseError::Malformed(_) => "Malformed",
            ProseError::EmptyFields => "EmptyFields",
            ProseError::BadRetention(_) => "BadRetention",
            ProseError::BadFieldName(_) => "BadFieldName",
            ProseError::EmptyPurpose => "EmptyPurpose",
            ProseError::BadActorId(_) => "BadActorId",
            ProseError::BadController(_) => "BadController",
            ProseError::BadProcessor(_) => "BadProcessor",
        }
    }
}

impl From<LineError> for ProseError {
    fn from(err: LineError) -> Self {
        match err {
            LineError::Malformed(n) => ProseError::Malformed(n),
            LineError::UnknownKey(k) => ProseError::UnknownKey(k),
            LineError::DuplicateKey(k) => ProseError::DuplicateKey(k),
            LineError::MissingKey(k) => ProseError::MissingKey(k),
        }
    }
}

pub fn valid_field_name(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PurposeDeclaration {
    pub declaration_id: String,
    pub controller: String,
    pub processors: Vec<String>,
    pub purpose_text: String,
    pub allowed_fields: BTreeSet<String>,
    pub retention_days: u64,
    pub scenario: String,
}

impl PurposeDeclaration {
    pub fn parse(text: &str) -> Result<PurposeDeclaration, ProseError> {
        let entries = Entries::parse(text, &KEYS)?;
        // Report the first missing key in canonical order.
        for key in KEYS {
            entries.require(key)?;
        }
        let get = |k| entries.get(k).unwrap_or_default();

        let controller = get("controller").to_string();
        if !valid_actor_id(&controller) {
            return Err(ProseError::BadActorId(controller));
        }
        let processors = split_list(get("processors"));
        if let Some(bad) = processors.iter().find(|p| !valid_actor_id(p)) {
            return Err(ProseError::BadActorId(bad.clone()));
        }
        let purpose_text = get("purpose").to_string();
        if purpose_text.is_empty() {
            return Err(ProseError::EmptyPurpose);
        }
        let fields = split_list(get("fields"));
        if fields.is_empty() {
            return Err(ProseError::EmptyFields);
        }
        if let Some(bad) = fields.iter().find(|f| !valid_field_name(f)) {
            return Err(ProseError::BadFieldName(bad.clone()));
        }
        let raw_retention = get("retention_days");
        let retention_days = raw_retention
            .parse::<u64>()
            .ok()
            .filter(|&d| d >= 1)
            .ok_or_else(|| ProseError::BadRetention(raw_retention.to_string()))?;

        Ok(PurposeDeclaration {
            declaration_id: get("id").to_string(),
            controller,
            processors,
            purpose_text,
            allowed_fields: fields.into_iter().collect(),
            retention_days,
            scenario: get("scenario").to_string(),
        })
    }

    /// Canonical form: fixed key order, `key:value` lines, lists comma-joined
    /// without spaces, fields sorted.
    pub fn render_canonical(&self) -> String {
        let fields: Vec<&str> = self.allowed_fields.iter().map(String::as_str).collect();
        Renderer::new()
            .line("id", &self.declaration_id)
            .line("controller", &self.controller)
            .line("processors", self.processors.join(","))
            .line("purpose", &self.purpose_text)
            .line("fields", fields.join(","))
            .line("retention_days", self.retention_days.to_string())
            .line("scenario", &self.scenario)
            .finish()
    }

    pub fn hash(&self) -> DeclarationHash {
        Digest::of(self.render_canonical().as_bytes())
    }

    pub fn may_submit(&self, actor_id: &str) -> bool {
        self.controller == actor_id || self.processors.iter().any(|p| p == actor_id)
    }

    /// Checks the declared parties against the membership registry.
    pub fn validate_parties(&self, registry: &Registry) -> Result<(), ProseError> {
        match registry.get(&self.controller) {
            Some(a) if a.has_role(Role::DataController) && !a.has_role(Role::DataSubject) => {}
            _ => return Err(ProseError::BadController(self.controller.clone())),
        }
        for p in &self.processors {
            match registry.get(p) {
                Some(a) if a.has_role(Role::DataProcessor) || a.has_role(Role::DataController) => {}
                _ => return Err(ProseError::BadProcessor(p.clone())),
            }
        }
        Ok(())
    }
}

impl fmt::Display for PurposeDeclaration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_canonical())
    }
}

pub fn parse_declaration(text: &str) -> Result<PurposeDeclaration, ProseError> {
    PurposeDeclaration::parse(text)
}

pub fn hash_declaration(declaration: &PurposeDeclaration) -> DeclarationHash {
    declaration.hash()
}

/// Submitted fields not covered by the declaration, sorted and deduplicated.
/// Empty means the submission is within scope.
pub fn check_field_subset<'a, I>(declaration: &PurposeDeclaration, submitted: I) -> Vec<String>
where
    I: IntoIterator<Item = &'a str>,
{
    submitted
        .into_iter()
        .filter(|f| !declaration.allowed_fields.contains(*f))
        .map(str::to_string)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}
