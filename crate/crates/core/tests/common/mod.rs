#![allow(dead_code)]

use std::collections::BTreeMap;

use consentchain::contracts::{check_endorsement_policy, simulate_proposal, EndorsementPolicy, TxProposal};
use consentchain::digest::Digest;
use consentchain::identity::{Registry, Role};
use consentchain::ledger::{Block, StateView, ValidationCode, ValidationContext, Version};
use consentchain::legalprose::PurposeDeclaration;
use consentchain::pipeline::{submit_proposal, HealthRecordPayload};
use sha2::{Digest as _, Sha256};

pub const SALT: [u8; 32] = [7; 32];

pub const SUBJECTS: [&str; 8] = [
    "citizen-ana",
    "citizen-bia",
    "citizen-caio",
    "citizen-duda",
    "citizen-enzo",
    "citizen-fabi",
    "citizen-gil",
    "citizen-hana",
];

pub const COVID_TEXT: &str = include_str!("../fixtures/covid-surveillance.lprose");

pub fn registry() -> Registry {
    let mut reg = Registry::new(SALT);
    reg.register_organization("clinic").unwrap();
    reg.register_organization("lab").unwrap();
    reg.register_actor_with_seed("clinic-gw", Some("clinic"), [Role::DataController].into(), [0x31; 32]).unwrap();
    reg.register_actor_with_seed("lab-gw", Some("lab"), [Role::DataProcessor].into(), [0x32; 32]).unwrap();
    reg.register_actor_with_seed("research-gw", Some("lab"), [Role::DataController].into(), [0x33; 32]).unwrap();
    reg.register_actor_with_seed("auditor", None, [Role::Auditor].into(), [0x34; 32]).unwrap();
    for (i, s) in SUBJECTS.iter().enumerate() {
        reg.register_actor_with_seed(s, None, [Role::DataSubject].into(), [0x40 + i as u8; 32]).unwrap();
    }
    reg
}

pub fn policy(k: usize) -> EndorsementPolicy {
    EndorsementPolicy::new(k, ["clinic-gw".to_string(), "lab-gw".to_string()]).unwrap()
}

pub fn ctx(k: usize) -> ValidationContext {
    ValidationContext::new(registry(), policy(k))
}

pub fn covid() -> PurposeDeclaration {
    PurposeDeclaration::parse(COVID_TEXT).unwrap()
}

/// A second purpose owned by another controller, with fewer fields.
pub fn research() -> PurposeDeclaration {
    PurposeDeclaration::parse(
        "id: covid-research-2020\ncontroller: research-gw\nprocessors: lab-gw\npurpose: covid-research\n\
         fields: patient_pseudo_id,result\nretention_days: 30\nscenario: follow-up study\n",
    )
    .unwrap()
}

pub fn principal(reg: &Registry, actor: &str) -> String {
    reg.principal_of(reg.get(actor).unwrap())
}

pub fn payload(n: u64, region: &str) -> HealthRecordPayload {
    HealthRecordPayload::new([
        ("patient_pseudo_id", format!("p-{n}")),
        ("test_date", format!("2020-06-{:02}", n % 28 + 1)),
        ("result", if n.is_multiple_of(3) { "negative" } else { "positive" }.to_string()),
        ("region", region.to_string()),
    ])
    .unwrap()
}

/// Proposal factory handing out unique proposal ids.
pub struct Ops {
    reg: Registry,
    next: u64,
}

impl Ops {
    pub fn new(reg: &Registry) -> Ops {
        Ops { reg: reg.clone(), next: 0 }
    }

    fn id(&mut self) -> String {
        self.next += 1;
        format!("op-{}", self.next)
    }

    fn who(&self, actor: &str) -> String {
        match self.reg.get(actor) {
            Some(a) => self.reg.principal_of(a),
            None => actor.to_string(),
        }
    }

    fn make(&mut self, creator: &str, action: &str, args: Vec<String>, t: u64) -> TxProposal {
        let id = self.id();
        TxProposal::new(id, self.who(creator), action, args, t).unwrap()
    }

    pub fn declare(&mut self, decl: &PurposeDeclaration, t: u64) -> TxProposal {
        self.make(&decl.controller.clone(), "consent.declare", vec![decl.render_canonical()], t)
    }

    pub fn request(&mut self, controller: &str, subject: &str, decl: &Digest, t: u64) -> TxProposal {
        let args = vec![self.who(subject), decl.to_hex()];
        self.make(controller, "consent.request", args, t)
    }

    pub fn respond(&mut self, subject: &str, decl: &Digest, grant: bool, t: u64) -> TxProposal {
        let args = vec![self.who(subject), decl.to_hex(), if grant { "grant" } else { "deny" }.to_string()];
        self.make(subject, "consent.respond", args, t)
    }

    pub fn revoke(&mut self, subject: &str, decl: &Digest, t: u64) -> TxProposal {
        let args = vec![self.who(subject), decl.to_hex()];
        self.make(subject, "consent.revoke", args, t)
    }

    pub fn submit(
        &mut self,
        submitter: &str,
        subject: &str,
        decl: &Digest,
        payload: &HealthRecordPayload,
        t: u64,
        supersedes: Option<Digest>,
    ) -> TxProposal {
        let id = self.id();
        submit_proposal(id, submitter, &self.who(subject), decl, payload, t, supersedes)
    }

    /// A `data.submit` naming arbitrary fields, bypassing the client-side
    /// checks.
    pub fn raw_submit(
        &mut self,
        submitter: &str,
        subject: &str,
        decl: &Digest,
        payload: &Digest,
        fields: &str,
        t: u64,
    ) -> TxProposal {
        let args = vec![self.who(subject), decl.to_hex(), payload.to_hex(), fields.to_string(), "-".to_string()];
        self.make(submitter, "data.submit", args, t)
    }

    pub fn enroll(&mut self, controller: &str, member: &str, t: u64) -> TxProposal {
        let args = vec![self.who(member)];
        self.make(controller, "consent.enroll", args, t)
    }

    pub fn audit(&mut self, actor: &str, key: &str, t: u64) -> TxProposal {
        self.make(actor, "audit.history", vec![key.to_string()], t)
    }
}

/// Plain key-value state for the reference executions below.
#[derive(Debug, Default, Clone)]
pub struct RefState(pub BTreeMap<String, (Vec<u8>, Version)>);

impl StateView for RefState {
    fn get(&self, key: &str) -> Option<(&[u8], Version)> {
        self.0.get(key).map(|(v, ver)| (v.as_slice(), *ver))
    }
}

impl RefState {
    /// SHA-256 over sorted `key=value_hex@height.tx_index` lines.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, (v, ver)) in &self.0 {
            h.update(format!("{k}={}@{}.{}\n", hex::encode(v), ver.height, ver.tx_index));
        }
        hex::encode(h.finalize())
    }
}

pub struct Reference {
    pub codes: Vec<(String, ValidationCode)>,
    pub state: RefState,
    /// Valid transactions whose re-execution against the serial state
    /// produced a different read-write set.
    pub reexecution_mismatches: usize,
}

/// Single-peer serial reference: checks signatures and endorsements, then
/// MVCC against a plain map, re-executing each valid transaction's proposal
/// on the serial state to confirm its read-write set.
pub fn reference_execute(ctx: &ValidationContext, blocks: &[Block]) -> Reference {
    let reg = &ctx.registry;
    let mut state = RefState::default();
    let mut codes = Vec::new();
    let mut mismatches = 0;
    for block in blocks.iter().filter(|b| b.height > 0) {
        for (i, tx) in block.txs.iter().enumerate() {
            let p = &tx.proposal;
            let creator_ok = tx.tx_id == p.tx_id()
                && reg.resolve(&p.creator).is_some_and(|a| {
                    a.active && reg.verify(&a.actor_id, &p.canonical_bytes(), &tx.creator_signature).unwrap_or(false)
                });
            let endorsed = check_endorsement_policy(reg, &ctx.policy, &tx.endorsements, &p.proposal_id, &tx.rwset);
            let code = if !(creator_ok && endorsed) {
                ValidationCode::PolicyFailure
            } else if tx.rwset.reads.iter().all(|r| state.get(&r.key).map(|(_, v)| v) == r.version) {
                match simulate_proposal(p, &state, reg) {
                    Ok(rw) if rw == tx.rwset => {}
                    _ => mismatches += 1,
                }
                let version = Version { height: block.height, tx_index: i as u32 };
                for w in &tx.rwset.writes {
                    state.0.insert(w.key.clone(), (w.value.clone(), version));
                }
                ValidationCode::Valid
            } else {
                ValidationCode::MVCCConflict
            };
            codes.push((tx.tx_id.clone(), code));
        }
    }
    Reference { codes, state, reexecution_mismatches: mismatches }
}
