//! Per-(subject, declaration) consent state machine.
//!
//! ```text
//! NotRequested -> Requested -> Granted -> Revoked
//!                     ^   \                  |
//!                     |    -> Denied         |
//!                     +--------+-------------+
//! ```
//!
//! Grant is only reachable from `Requested`, so consent cannot exist without a
//! prior request carrying the declaration. Nothing happens on silence: there
//! is no timeout transition. Every mutation returns a new record and leaves
//! the input untouched, so a failed call changes nothing.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::digest::Digest;
use crate::identity::{Role, RoleSet};
use crate::legalprose::DeclarationHash;
use crate::lines::{optional, Entries, LineError, Renderer};

pub type Timestamp = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ConsentState {
    NotRequested,
    Requested,
    Granted,
    Denied,
    Revoked,
}

impl ConsentState {
    pub fn as_str(self) -> &'static str {
        match self {
            ConsentState::NotRequested => "NotRequested",
            ConsentState::Requested => "Requested",
            ConsentState::Granted => "Granted",
            ConsentState::Denied => "Denied",
            ConsentState::Revoked => "Revoked",
        }
    }

    /// The complete transition relation.
    pub fn can_become(self, next: ConsentState) -> bool {
        use ConsentState::*;
        matches!(
            (self, next),
            (NotRequested, Requested)
                | (Requested, Granted)
                | (Requested, Denied)
                | (Granted, Revoked)
                | (Denied, Requested)
                | (Revoked, Requested)
        )
    }
}

impl fmt::Display for ConsentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConsentState {
    type Err = ConsentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use ConsentState::*;
        [NotRequested, Requested, Granted, Denied, Revoked]
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| ConsentError::Corrupt(format!("unknown state {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Grant,
    Deny,
}

impl FromStr for Decision {
    type Err = ConsentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grant" => Ok(Decision::Grant),
            "deny" => Ok(Decision::Deny),
            other => Err(ConsentError::BadDecision(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsentError {
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: ConsentState, to: ConsentState },
    #[error("`{0}` is not a data controller")]
    NotAController(String),
    #[error("`{0}` is not the data subject of this record")]
    NotTheSubject(String),
    #[error("timestamp {now} precedes the last recorded change at {last}")]
    ClockRegression { last: Timestamp, now: Timestamp },
    #[error("decision must be `grant` or `deny`, got {0:?}")]
    BadDecision(String),
    #[error("corrupt consent record: {0}")]
    Corrupt(String),
}

impl ConsentError {
    pub fn name(&self) -> &'static str {
        match self {
            ConsentError::IllegalTransition { .. } => "IllegalTransition",
            ConsentError::NotAController(_) => "NotAController",
            ConsentError::NotTheSubject(_) => "NotTheSubject",
            ConsentError::ClockRegression { .. } => "ClockRegression",
            ConsentError::BadDecision(_) => "BadDecision",
            ConsentError::Corrupt(_) => "Corrupt",
        }
    }
}

impl From<LineError> for ConsentError {
    fn from(err: LineError) -> Self {
        ConsentError::Corrupt(err.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HistoryEntry {
    pub state: ConsentState,
    pub timestamp: Timestamp,
    pub actor: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConsentRecord {
    /// On-chain principal of the data subject (a pseudonym).
    pub subject: String,
    pub declaration_hash: DeclarationHash,
    pub state: ConsentState,
    pub history: Vec<HistoryEntry>,
    pub granted_at: Option<Timestamp>,
    pub revoked_at: Option<Timestamp>,
}

impl ConsentRecord {
    pub fn new(subject: impl Into<String>, declaration_hash: DeclarationHash) -> ConsentRecord {
        ConsentRecord {
            subject: subject.into(),
            declaration_hash,
            state: ConsentState::NotRequested,
            history: Vec::new(),
            granted_at: None,
            revoked_at: None,
        }
    }

    /// World-state key for a (subject, declaration) pair.
    pub fn key_for(subject: &str, declaration_hash: &DeclarationHash) -> String {
        format!("consent/{subject}/{}", declaration_hash.to_hex())
    }

    pub fn key(&self) -> String {
        ConsentRecord::key_for(&self.subject, &self.declaration_hash)
    }

    fn transition(&self, to: ConsentState, actor: &str, now: Timestamp) -> Result<ConsentRecord, ConsentError> {
        if !self.state.can_become(to) {
            return Err(ConsentError::IllegalTransition { from: self.state, to });
        }
        if let Some(last) = self.history.last() {
            if now < last.timestamp {
                return Err(ConsentError::ClockRegression { last: last.timestamp, now });
            }
        }
        let mut next = self.clone();
        next.state = to;
        next.history.push(HistoryEntry { state: to, timestamp: now, actor: actor.to_string() });
        match to {
            ConsentState::Granted => next.granted_at = Some(now),
            ConsentState::Revoked => next.revoked_at = Some(now),
            _ => {}
        }
        Ok(next)
    }

    pub fn request(&self, controller: &str, roles: &RoleSet, now: Timestamp) -> Result<ConsentRecord, ConsentError> {
        if !roles.contains(&Role::DataController) {
            return Err(ConsentError::NotAController(controller.to_string()));
        }
        self.transition(ConsentState::Requested, controller, now)
    }

    pub fn respond(&self, subject: &str, decision: Decision, now: Timestamp) -> Result<ConsentRecord, ConsentError> {
        if subject != self.subject {
            return Err(ConsentError::NotTheSubject(subject.to_string()));
        }
        let to = match decision {
            Decision::Grant => ConsentState::Granted,
            Decision::Deny => ConsentState::Denied,
        };
        self.transition(to, subject, now)
    }

    /// Same shape as `respond`: one call by the subject, no counterparty.
    pub fn revoke(&self, subject: &str, now: Timestamp) -> Result<ConsentRecord, ConsentError> {
        if subject != self.subject {
            return Err(ConsentError::NotTheSubject(subject.to_string()));
        }
        self.transition(ConsentState::Revoked, subject, now)
    }

    /// State in force at `t`. A change takes effect at its own timestamp.
    pub fn status_at(&self, t: Timestamp) -> ConsentState {
        let idx = self.history.partition_point(|e| e.timestamp <= t);
        match idx {
            0 => ConsentState::NotRequested,
            i => self.history[i - 1].state,
        }
    }

    pub fn is_access_permitted(&self, declaration_hash: &DeclarationHash, t: Timestamp) -> bool {
        self.declaration_hash == *declaration_hash && self.status_at(t) == ConsentState::Granted
    }

    /// Rebuilds a record by applying `history` to a fresh one.
    pub fn replay(
        subject: &str,
        declaration_hash: DeclarationHash,
        history: &[HistoryEntry],
    ) -> Result<ConsentRecord, ConsentError> {
        history.iter().try_fold(ConsentRecord::new(subject, declaration_hash), |rec, e| {
            rec.transition(e.state, &e.actor, e.timestamp)
        })
    }

    pub fn to_canonical(&self) -> String {
        let history: Vec<String> =
            self.history.iter().map(|e| format!("{}@{}@{}", e.state, e.timestamp, e.actor)).collect();
        let opt = |v: Option<Timestamp>| v.map_or_else(|| "-".to_string(), |t| t.to_string());
        Renderer::new()
            .line("subject", &self.subject)
            .line("declaration", self.declaration_hash.to_hex())
            .line("state", self.state.as_str())
            .line("granted_at", opt(self.granted_at))
            .line("revoked_at", opt(self.revoked_at))
            .line("history", history.join(","))
            .finish()
    }

    /// Decodes the canonical form and checks it against a replay of its own
    /// history.
    pub fn from_canonical(text: &str) -> Result<ConsentRecord, ConsentError> {
        const KEYS: [&str; 6] = ["subject", "declaration", "state", "granted_at", "revoked_at", "history"];
        let e = Entries::parse(text, &KEYS)?;
        let corrupt = |m: &str| ConsentError::Corrupt(m.to_string());
        let declaration_hash = Digest::from_hex(e.require("declaration")?).map_err(|_| corrupt("declaration hash"))?;
        let mut history = Vec::new();
        for item in e.require("history")?.split(',').filter(|s| !s.is_empty()) {
            let mut parts = item.splitn(3, '@');
            let (Some(state), Some(ts), Some(actor)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(corrupt("history entry"));
            };
            history.push(HistoryEntry {
                state: state.parse()?,
                timestamp: ts.parse().map_err(|_| corrupt("history timestamp"))?,
                actor: actor.to_string(),
            });
        }
        let rec = ConsentRecord::replay(e.require("subject")?, declaration_hash, &history)?;
        let parse_opt = |k: &str| -> Result<Option<Timestamp>, ConsentError> {
            optional(e.require(k)?).map(|v| v.parse().map_err(|_| corrupt(k))).transpose()
        };
        if rec.state != e.require("state")?.parse()?
            || rec.granted_at != parse_opt("granted_at")?
            || rec.revoked_at != parse_opt("revoked_at")?
        {
            return Err(corrupt("summary fields disagree with history"));
        }
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SUBJECT: &str = "subj";
    const CTRL: &str = "ctrl";

    fn ctrl_roles() -> RoleSet {
        [Role::DataController].into()
    }

    fn fresh() -> ConsentRecord {
        ConsentRecord::new(SUBJECT, Digest::of(b"decl"))
    }

    fn granted() -> ConsentRecord {
        fresh().request(CTRL, &ctrl_roles(), 10).unwrap().respond(SUBJECT, Decision::Grant, 20).unwrap()
    }

    #[test]
    fn request_from_not_requested() {
        let r = fresh().request(CTRL, &ctrl_roles(), 1).unwrap();
        assert_eq!(r.state, ConsentState::Requested);
        assert_eq!(r.history[0].actor, CTRL);
    }

    #[test]
    fn request_needs_controller_role() {
        let err = fresh().request("nobody", &[Role::Auditor].into(), 1).unwrap_err();
        assert_eq!(err.name(), "NotAController");
    }

    #[test]
    fn request_while_granted_is_illegal() {
        let err = granted().request(CTRL, &ctrl_roles(), 30).unwrap_err();
        assert_eq!(err.name(), "IllegalTransition");
    }

    #[test]
    fn revoked_can_be_requested_again() {
        let r = granted().revoke(SUBJECT, 30).unwrap().request(CTRL, &ctrl_roles(), 40).unwrap();
        assert_eq!(r.state, ConsentState::Requested);
        assert_eq!(r.revoked_at, Some(30));
    }

    #[test]
    fn grant_sets_granted_at() {
        let r = granted();
        assert_eq!(r.state, ConsentState::Granted);
        assert_eq!(r.granted_at, Some(20));
        assert_eq!(r.revoked_at, None);
    }

    #[test]
    fn grant_without_request_is_illegal() {
        let err = fresh().respond(SUBJECT, Decision::Grant, 1).unwrap_err();
        assert_eq!(
            err,
            ConsentError::IllegalTransition { from: ConsentState::NotRequested, to: ConsentState::Granted }
        );
    }

    #[test]
    fn grant_by_someone_else() {
        let r = fresh().request(CTRL, &ctrl_roles(), 1).unwrap();
        assert_eq!(r.respond("other", Decision::Grant, 2).unwrap_err().name(), "NotTheSubject");
    }

    #[test]
    fn revoke_paths() {
        let r = granted().revoke(SUBJECT, 30).unwrap();
        assert_eq!(r.state, ConsentState::Revoked);
        assert_eq!(r.revoked_at, Some(30));
        assert_eq!(r.revoke(SUBJECT, 31).unwrap_err().name(), "IllegalTransition");

        let denied = fresh().request(CTRL, &ctrl_roles(), 1).unwrap().respond(SUBJECT, Decision::Deny, 2).unwrap();
        assert_eq!(denied.revoke(SUBJECT, 3).unwrap_err().name(), "IllegalTransition");
        assert_eq!(granted().revoke(CTRL, 30).unwrap_err().name(), "NotTheSubject");
    }

    #[test]
    fn status_lookup_is_boundary_inclusive() {
        let r = granted().revoke(SUBJECT, 30).unwrap();
        assert_eq!(r.status_at(25), ConsentState::Granted);
        assert_eq!(r.status_at(5), ConsentState::NotRequested);
        assert_eq!(r.status_at(30), ConsentState::Revoked);
        assert_eq!(r.status_at(10), ConsentState::Requested);
    }

    #[test]
    fn access_requires_matching_hash_and_grant() {
        let r = granted();
        assert!(r.is_access_permitted(&r.declaration_hash, 20));
        assert!(!r.is_access_permitted(&Digest::of(b"other"), 20));
        let revoked = r.revoke(SUBJECT, 30).unwrap();
        assert!(!revoked.is_access_permitted(&r.declaration_hash, 30));
        assert!(revoked.is_access_permitted(&r.declaration_hash, 29));
    }

    #[test]
    fn clock_may_not_run_backwards() {
        let r = fresh().request(CTRL, &ctrl_roles(), 10).unwrap();
        assert_eq!(
            r.respond(SUBJECT, Decision::Grant, 9).unwrap_err(),
            ConsentError::ClockRegression { last: 10, now: 9 }
        );
    }

    #[test]
    fn canonical_round_trip_and_corruption() {
        let r = granted().revoke(SUBJECT, 30).unwrap();
        let text = r.to_canonical();
        assert_eq!(ConsentRecord::from_canonical(&text).unwrap(), r);
        let forged = text.replace("state:Revoked", "state:Granted");
        assert_eq!(ConsentRecord::from_canonical(&forged).unwrap_err().name(), "Corrupt");
        let skipped = text.replace("Requested@10@ctrl,", "");
        assert_eq!(ConsentRecord::from_canonical(&skipped).unwrap_err().name(), "IllegalTransition");
    }

    #[derive(Debug, Clone)]
    enum Op {
        Request { by_controller: bool },
        Respond { by_subject: bool, grant: bool },
        Revoke { by_subject: bool },
    }

    fn op() -> impl Strategy<Value = (Op, u64)> {
        let op = prop_oneof![
            any::<bool>().prop_map(|c| Op::Request { by_controller: c }),
            (any::<bool>(), any::<bool>()).prop_map(|(s, g)| Op::Respond { by_subject: s, grant: g }),
            any::<bool>().prop_map(|s| Op::Revoke { by_subject: s }),
        ];
        (op, 0u64..5)
    }

    fn apply(rec: &ConsentRecord, op: &Op, now: u64) -> Result<ConsentRecord, ConsentError> {
        match *op {
            Op::Request { by_controller } => {
                let roles: RoleSet = if by_controller { ctrl_roles() } else { [Role::DataProcessor].into() };
                rec.request(CTRL, &roles, now)
            }
            Op::Respond { by_subject, grant } => {
                let who = if by_subject { SUBJECT } else { "intruder" };
                rec.respond(who, if grant { Decision::Grant } else { Decision::Deny }, now)
            }
            Op::Revoke { by_subject } => rec.revoke(if by_subject { SUBJECT } else { "intruder" }, now),
        }
    }

    proptest! {
        #[test]
        fn mutations_are_atomic_and_replayable(ops in prop::collection::vec(op(), 0..40)) {
            let mut rec = fresh();
            let mut now = 0;
            for (op, dt) in &ops {
                now += dt;
                let before = rec.clone();
                match apply(&rec, op, now) {
                    Ok(next) => {
                        prop_assert_eq!(next.history.len(), before.history.len() + 1);
                        prop_assert_eq!(next.state, next.history.last().unwrap().state);
                        rec = next;
                    }
                    Err(_) => prop_assert_eq!(&rec, &before),
                }
                prop_assert!(rec.history.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
                prop_assert_eq!(rec.revoked_at.is_some(),
                    rec.history.iter().any(|e| e.state == ConsentState::Revoked));
                let replayed = ConsentRecord::replay(&rec.subject, rec.declaration_hash, &rec.history).unwrap();
                prop_assert_eq!(&replayed, &rec);
                prop_assert_eq!(ConsentRecord::from_canonical(&rec.to_canonical()).unwrap(), rec.clone());
            }
        }

        #[test]
        fn status_matches_linear_scan(ops in prop::collection::vec(op(), 0..30), probes in prop::collection::vec(0u64..150, 1..50)) {
            let mut rec = fresh();
            let mut now = 0;
            for (op, dt) in &ops {
                now += dt;
                if let Ok(next) = apply(&rec, op, now) { rec = next; }
            }
            for t in probes {
                let mut expect = ConsentState::NotRequested;
                for e in &rec.history {
                    if e.timestamp <= t { expect = e.state; }
                }
                prop_assert_eq!(rec.status_at(t), expect);
            }
        }
    }
}
