//! Membership: organizations, actors, roles and the signing scheme.
//!
//! The registry is append-only. Actors can be deactivated but never removed,
//! so anything that once resolved keeps resolving. Organizations are entries
//! with an empty role set; people and institutions link to one through
//! `org_id`.
//!
//! Data subjects never appear on-chain under their actor id. Their on-chain
//! principal is the hex pseudonym `SHA-256(salt ‖ actor_id)`, and the registry
//! keeps the reverse index so signatures can still be checked.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;

pub type Signature = Digest;
pub type RoleSet = BTreeSet<Role>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    DataSubject,
    DataController,
    DataProcessor,
    Orderer,
    Auditor,
}

impl Role {
    pub const ALL: [Role; 5] =
        [Role::DataSubject, Role::DataController, Role::DataProcessor, Role::Orderer, Role::Auditor];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::DataSubject => "DataSubject",
            Role::DataController => "DataController",
            Role::DataProcessor => "DataProcessor",
            Role::Orderer => "Orderer",
            Role::Auditor => "Auditor",
        }
    }

    fn needs_org(self) -> bool {
        matches!(self, Role::DataController | Role::DataProcessor)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = IdentityError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| IdentityError::UnknownRole(s.to_string()))
    }
}

pub fn render_roles(roles: &RoleSet) -> String {
    roles.iter().map(|r| r.as_str()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdentityError {
    #[error("actor `{0}` is already registered")]
    DuplicateActor(String),
    #[error("organization `{0}` is not registered")]
    UnknownOrganization(String),
    #[error("role/organization mismatch for `{0}`")]
    RoleOrgMismatch(String),
    #[error("unknown actor `{0}`")]
    UnknownActor(String),
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("invalid actor id `{0}`")]
    InvalidActorId(String),
    #[error("actor `{0}` is deactivated")]
    Deactivated(String),
    #[error("registry line {line}: {reason}")]
    BadBootstrapLine { line: usize, reason: String },
}

impl IdentityError {
    pub fn name(&self) -> &'static str {
        match self {
            IdentityError::DuplicateActor(_) => "DuplicateActor",
            IdentityError::UnknownOrganization(_) => "UnknownOrganization",
            IdentityError::RoleOrgMismatch(_) => "RoleOrgMismatch",
            IdentityError::UnknownActor(_) => "UnknownActor",
            IdentityError::UnknownRole(_) => "UnknownRole",
            IdentityError::InvalidActorId(_) => "InvalidActorId",
            IdentityError::Deactivated(_) => "Deactivated",
            IdentityError::BadBootstrapLine { .. } => "BadBootstrapLine",
        }
    }
}

/// Actor ids are restricted so they can be embedded in keys and line formats
/// without escaping.
pub fn valid_actor_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Actor {
    pub actor_id: String,
    pub org_id: Option<String>,
    pub roles: RoleSet,
    pub public_tag: Digest,
    pub active: bool,
}

impl Actor {
    pub fn has_role(&self, role: Role) -> bool {
        self.roles.contains(&role)
    }

    pub fn is_organization(&self) -> bool {
        self.roles.is_empty()
    }
}

/// Secret half of an actor's identity. Deliberately not `Serialize`.
#[derive(Clone, PartialEq, Eq)]
pub struct Credential {
    pub actor_id: String,
    pub seed: [u8; 32],
}

impl fmt::Debug for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Credential").field("actor_id", &self.actor_id).finish_non_exhaustive()
    }
}

/// Pluggable signing. The default is a keyed hash, which is only a test
/// scheme: verification needs the secret.
pub trait SignatureScheme: Send + Sync {
    fn sign(&self, seed: &[u8; 32], message: &[u8]) -> Signature;

    fn verify(&self, seed: &[u8; 32], message: &[u8], signature: &Signature) -> bool {
        self.sign(seed, message) == *signature
    }
}

/// `SHA-256(seed ‖ message)`. Insecure; deterministic test vectors only.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeyedSha256;

impl SignatureScheme for KeyedSha256 {
    fn sign(&self, seed: &[u8; 32], message: &[u8]) -> Signature {
        Digest::of_parts(&[seed, message])
    }
}

pub fn sign(credential: &Credential, message: &[u8]) -> Signature {
    KeyedSha256.sign(&credential.seed, message)
}

fn public_tag(seed: &[u8; 32]) -> Digest {
    Digest::of_parts(&[b"consentchain/public-tag\0", seed])
}

#[derive(Clone)]
pub struct Registry {
    salt: [u8; 32],
    actors: Vec<Actor>,
    seeds: Vec<[u8; 32]>,
    by_id: HashMap<String, usize>,
    by_principal: HashMap<String, usize>,
    scheme: Arc<dyn SignatureScheme>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry").field("actors", &self.actors).finish_non_exhaustive()
    }
}

impl Registry {
    pub fn new(salt: [u8; 32]) -> Registry {
        Registry::with_scheme(salt, Arc::new(KeyedSha256))
    }

    pub fn with_scheme(salt: [u8; 32], scheme: Arc<dyn SignatureScheme>) -> Registry {
        Registry {
            salt,
            actors: Vec::new(),
            seeds: Vec::new(),
            by_id: HashMap::new(),
            by_principal: HashMap::new(),
            scheme,
        }
    }

    pub fn salt(&self) -> &[u8; 32] {
        &self.salt
    }

    pub fn len(&self) -> usize {
        self.actors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actors.is_empty()
    }

    pub fn actors(&self) -> impl Iterator<Item = &Actor> {
        self.actors.iter()
    }

    pub fn get(&self, actor_id: &str) -> Option<&Actor> {
        self.by_id.get(actor_id).map(|&i| &self.actors[i])
    }

    pub fn require(&self, actor_id: &str) -> Result<&Actor, IdentityError> {
        self.get(actor_id).ok_or_else(|| IdentityError::UnknownActor(actor_id.to_string()))
    }

    pub fn pseudonym(&self, actor_id: &str) -> Digest {
        Digest::of_parts(&[&self.salt, actor_id.as_bytes()])
    }

    /// The identifier an actor carries on-chain.
    pub fn principal_of(&self, actor: &Actor) -> String {
        if actor.has_role(Role::DataSubject) {
            self.pseudonym(&actor.actor_id).to_hex()
        } else {
            actor.actor_id.clone()
        }
    }

    pub fn resolve(&self, principal: &str) -> Option<&Actor> {
        self.by_principal.get(principal).map(|&i| &self.actors[i])
    }

    pub fn credential(&self, actor_id: &str) -> Option<Credential> {
        self.by_id.get(actor_id).map(|&i| Credential { actor_id: actor_id.to_string(), seed: self.seeds[i] })
    }

    pub fn register_organization(&mut self, org_id: &str) -> Result<&Actor, IdentityError> {
        self.insert(org_id, None, RoleSet::new(), rand::random())
    }

    /// Registers an actor with a freshly drawn seed.
    pub fn register_actor(
        &mut self,
        actor_id: &str,
        org_id: Option<&str>,
        roles: RoleSet,
    ) -> Result<&Actor, IdentityError> {
        if roles.is_empty() {
            return Err(IdentityError::RoleOrgMismatch(actor_id.to_string()));
        }
        self.insert(actor_id, org_id, roles, rand::random())
    }

    pub fn register_actor_with_seed(
        &mut self,
        actor_id: &str,
        org_id: Option<&str>,
        roles: RoleSet,
        seed: [u8; 32],
    ) -> Result<&Actor, IdentityError> {
        if roles.is_empty() {
            return Err(IdentityError::RoleOrgMismatch(actor_id.to_string()));
        }
        self.insert(actor_id, org_id, roles, seed)
    }

    fn insert(
        &mut self,
        actor_id: &str,
        org_id: Option<&str>,
        roles: RoleSet,
        seed: [u8; 32],
    ) -> Result<&Actor, IdentityError> {
        if !valid_actor_id(actor_id) {
            return Err(IdentityError::InvalidActorId(actor_id.to_string()));
        }
        if self.by_id.contains_key(actor_id) {
            return Err(IdentityError::DuplicateActor(actor_id.to_string()));
        }
        let mismatch = || IdentityError::RoleOrgMismatch(actor_id.to_string());
        match org_id {
            Some(org) => {
                if roles.is_empty() || roles.contains(&Role::DataSubject) {
                    return Err(mismatch());
                }
                match self.get(org) {
                    Some(a) if a.is_organization() => {}
                    _ => return Err(IdentityError::UnknownOrganization(org.to_string())),
                }
            }
            None => {
                if roles.iter().any(|r| r.needs_org()) {
                    return Err(mismatch());
                }
            }
        }
        let actor = Actor {
            actor_id: actor_id.to_string(),
            org_id: org_id.map(str::to_string),
            roles,
            public_tag: public_tag(&seed),
            active: true,
        };
        let principal = self.principal_of(&actor);
        let idx = self.actors.len();
        self.actors.push(actor);
        self.seeds.push(seed);
        self.by_id.insert(actor_id.to_string(), idx);
        self.by_principal.insert(principal, idx);
        Ok(&self.actors[idx])
    }

    pub fn deactivate(&mut self, actor_id: &str) -> Result<(), IdentityError> {
        let idx = *self.by_id.get(actor_id).ok_or_else(|| IdentityError::UnknownActor(actor_id.to_string()))?;
        self.actors[idx].active = false;
        Ok(())
    }

    pub fn sign_as(&self, actor_id: &str, message: &[u8]) -> Result<Signature, IdentityError> {
        let idx = *self.by_id.get(actor_id).ok_or_else(|| IdentityError::UnknownActor(actor_id.to_string()))?;
        Ok(self.scheme.sign(&self.seeds[idx], message))
    }

    pub fn verify(&self, actor_id: &str, message: &[u8], signature: &Signature) -> Result<bool, IdentityError> {
        let idx = *self.by_id.get(actor_id).ok_or_else(|| IdentityError::UnknownActor(actor_id.to_string()))?;
        Ok(self.scheme.verify(&self.seeds[idx], message, signature))
    }

    /// Parses the bootstrap format, one `actor_id|org_id_or_-|role[,role...]|seed_hex`
    /// per line. An empty role list declares an organization.
    pub fn parse_bootstrap(text: &str, salt: [u8; 32]) -> Result<Registry, IdentityError> {
        let mut registry = Registry::new(salt);
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| IdentityError::BadBootstrapLine { line: idx + 1, reason: reason.to_string() };
            let parts: Vec<&str> = line.split('|').collect();
            let [id, org, roles, seed_hex] = parts[..] else {
                return Err(bad("expected 4 `|`-separated fields"));
            };
            let mut seed = [0u8; 32];
            hex::decode_to_slice(seed_hex, &mut seed).map_err(|_| bad("seed must be 64 hex chars"))?;
            let roles =
                roles.split(',').filter(|s| !s.is_empty()).map(Role::from_str).collect::<Result<RoleSet, _>>()?;
            let org = crate::lines::optional(org);
            if roles.is_empty() {
                if org.is_some() {
                    return Err(bad("organizations cannot have a parent"));
                }
                registry.insert(id, None, roles, seed)?;
            } else {
                registry.insert(id, org, roles, seed)?;
            }
        }
        Ok(registry)
    }

    pub fn render_bootstrap(&self) -> String {
        let mut out = String::new();
        for (actor, seed) in self.actors.iter().zip(&self.seeds) {
            out.push_str(&format!(
                "{}|{}|{}|{}\n",
                actor.actor_id,
                actor.org_id.as_deref().unwrap_or("-"),
                render_roles(&actor.roles),
                hex::encode(seed)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles(list: &[Role]) -> RoleSet {
        list.iter().copied().collect()
    }

    #[test]
    fn registers_minimal_citizen() {
        let mut reg = Registry::new([0; 32]);
        let a = reg.register_actor("alice", None, roles(&[Role::DataSubject])).unwrap();
        assert_eq!(a.roles, roles(&[Role::DataSubject]));
        assert_eq!(reg.len(), 1);
    }

    #[test]
    fn duplicate_actor_rejected() {
        let mut reg = Registry::new([0; 32]);
        reg.register_actor("alice", None, roles(&[Role::DataSubject])).unwrap();
        assert_eq!(
            reg.register_actor("alice", None, roles(&[Role::DataSubject])).unwrap_err(),
            IdentityError::DuplicateActor("alice".into())
        );
    }

    #[test]
    fn controller_needs_registered_org() {
        let mut reg = Registry::new([0; 32]);
        assert_eq!(
            reg.register_actor("labA-gw", Some("labA"), roles(&[Role::DataController])).unwrap_err(),
            IdentityError::UnknownOrganization("labA".into())
        );
        assert_eq!(
            reg.register_actor("labA-gw", None, roles(&[Role::DataController])).unwrap_err(),
            IdentityError::RoleOrgMismatch("labA-gw".into())
        );
        reg.register_organization("labA").unwrap();
        reg.register_actor("labA-gw", Some("labA"), roles(&[Role::DataController])).unwrap();
    }

    #[test]
    fn subject_with_org_is_mismatch() {
        let mut reg = Registry::new([0; 32]);
        reg.register_organization("labA").unwrap();
        assert_eq!(
            reg.register_actor("bob", Some("labA"), roles(&[Role::DataSubject])).unwrap_err(),
            IdentityError::RoleOrgMismatch("bob".into())
        );
    }

    #[test]
    fn org_link_must_point_at_an_organization() {
        let mut reg = Registry::new([0; 32]);
        reg.register_actor("alice", None, roles(&[Role::DataSubject])).unwrap();
        assert!(matches!(
            reg.register_actor("gw", Some("alice"), roles(&[Role::DataController])),
            Err(IdentityError::UnknownOrganization(_))
        ));
    }

    #[test]
    fn sign_zero_seed_empty_message() {
        let cred = Credential { actor_id: "x".into(), seed: [0; 32] };
        // sha256sum over 32 zero bytes
        assert_eq!(sign(&cred, b"").to_hex(), "66687aadf862bd776c8fc18b8e9f8e20089714856ee233b3902a591d0d5f2925");
        assert_eq!(sign(&cred, b""), sign(&cred, b""));
    }

    #[test]
    fn distinct_seeds_distinct_signatures() {
        let a = Credential { actor_id: "a".into(), seed: [0; 32] };
        let b = Credential { actor_id: "b".into(), seed: [1; 32] };
        // sha256sum over 32 bytes of 0x01 followed by "msg"
        assert_eq!(sign(&b, b"msg").to_hex(), "d2cf916b563c0679b368f1ec017a809e9fe480dd0a317893cc14ff00d218e0bf");
        assert_ne!(sign(&a, b"msg"), sign(&b, b"msg"));
    }

    #[test]
    fn verify_round_trip_and_bit_flip() {
        let mut reg = Registry::new([0; 32]);
        reg.register_actor("alice", None, roles(&[Role::DataSubject])).unwrap();
        let sig = sign(&reg.credential("alice").unwrap(), b"hello");
        assert!(reg.verify("alice", b"hello", &sig).unwrap());
        let mut bad = sig;
        bad.0[0] ^= 1;
        assert!(!reg.verify("alice", b"hello", &bad).unwrap());
        assert_eq!(reg.verify("nobody", b"hello", &sig).unwrap_err(), IdentityError::UnknownActor("nobody".into()));
    }

    #[test]
    fn subjects_resolve_by_pseudonym_only() {
        let mut reg = Registry::new([7; 32]);
        reg.register_organization("org").unwrap();
        reg.register_actor("gw", Some("org"), roles(&[Role::DataController])).unwrap();
        reg.register_actor("ana", None, roles(&[Role::DataSubject])).unwrap();
        let ana = reg.get("ana").unwrap().clone();
        let p = reg.principal_of(&ana);
        assert_eq!(p, reg.pseudonym("ana").to_hex());
        assert_eq!(reg.resolve(&p).unwrap().actor_id, "ana");
        assert!(reg.resolve("ana").is_none());
        assert_eq!(reg.resolve("gw").unwrap().actor_id, "gw");
    }

    #[test]
    fn deactivation_keeps_actor_resolvable() {
        let mut reg = Registry::new([0; 32]);
        reg.register_actor("alice", None, roles(&[Role::DataSubject])).unwrap();
        reg.deactivate("alice").unwrap();
        assert!(!reg.get("alice").unwrap().active);
        assert_eq!(reg.len(), 1);
    }

    #[test]
    fn bootstrap_round_trip() {
        let text = "labA|-||0000000000000000000000000000000000000000000000000000000000000001\n\
                    labA-gw|labA|DataController,Auditor|0000000000000000000000000000000000000000000000000000000000000002\n\
                    citizen-ana|-|DataSubject|0000000000000000000000000000000000000000000000000000000000000003\n";
        let reg = Registry::parse_bootstrap(text, [0; 32]).unwrap();
        assert_eq!(reg.len(), 3);
        assert!(reg.get("labA").unwrap().is_organization());
        // Roles render in enum order, which differs from the input line.
        let again = Registry::parse_bootstrap(&reg.render_bootstrap(), [0; 32]).unwrap();
        assert_eq!(again.render_bootstrap(), reg.render_bootstrap());
        assert_eq!(again.get("labA-gw"), reg.get("labA-gw"));
    }

    #[test]
    fn bootstrap_rejects_bad_lines() {
        assert!(matches!(
            Registry::parse_bootstrap("a|-|DataSubject", [0; 32]),
            Err(IdentityError::BadBootstrapLine { line: 1, .. })
        ));
        assert!(matches!(
            Registry::parse_bootstrap("a|-|Wizard|00", [0; 32]),
            Err(IdentityError::BadBootstrapLine { .. }) | Err(IdentityError::UnknownRole(_))
        ));
    }

    #[test]
    fn credential_debug_hides_seed() {
        let cred = Credential { actor_id: "a".into(), seed: [0xab; 32] };
        assert!(!format!("{cred:?}").contains("ab, "));
    }
}
