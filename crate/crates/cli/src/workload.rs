//! Turns workload lines into proposals for the network simulation.
//!
//! Commands (files resolve relative to the workload file):
//!
//! ```text
//! tick|controller|declare|<decl.lprose>
//! tick|controller|request|<subject>|<decl>
//! tick|subject|grant|<decl>          (also deny, revoke)
//! tick|submitter|submit|<subject>|<decl>|<payload file>[|<supersedes hash>]
//! tick|controller|enroll|<member>
//! tick|actor|audit|<state key>
//! ```
//!
//! `<decl>` is a declaration hash or a `.lprose` file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use consentchain::consensus::{parse_workload, WorkloadEvent, WorkloadLine};
use consentchain::contracts::TxProposal;
use consentchain::digest::Digest;
use consentchain::identity::Registry;
use consentchain::legalprose::PurposeDeclaration;
use consentchain::pipeline::{submit_proposal, HealthRecordPayload, PayloadStore};

use crate::env::{read_text, Failure};

pub struct Compiler<'a> {
    registry: &'a Registry,
    base: PathBuf,
    store: &'a mut dyn PayloadStore,
    declarations: BTreeMap<PathBuf, PurposeDeclaration>,
    staged: BTreeSet<Digest>,
}

fn bad(line: &WorkloadLine, reason: impl Into<String>) -> Failure {
    Failure::new("BadWorkload", format!("line {}: {}", line.line, reason.into()))
}

impl<'a> Compiler<'a> {
    pub fn new(registry: &'a Registry, base: &Path, store: &'a mut dyn PayloadStore) -> Compiler<'a> {
        Compiler { registry, base: base.to_path_buf(), store, declarations: BTreeMap::new(), staged: BTreeSet::new() }
    }

    pub fn compile_file(&mut self, path: &Path) -> Result<Vec<WorkloadEvent>, Failure> {
        let lines = parse_workload(&read_text(path)?)?;
        lines.iter().map(|l| self.compile(l)).collect()
    }

    /// Payloads newly written to the store while compiling.
    pub fn staged(&self) -> BTreeSet<Digest> {
        self.staged.clone()
    }

    fn principal(&self, actor_id: &str) -> String {
        match self.registry.get(actor_id) {
            Some(a) => self.registry.principal_of(a),
            None => actor_id.to_string(),
        }
    }

    fn declaration(&mut self, line: &WorkloadLine, file: &str) -> Result<&PurposeDeclaration, Failure> {
        let path = self.base.join(file);
        if !self.declarations.contains_key(&path) {
            let decl = PurposeDeclaration::parse(&read_text(&path)?).map_err(|e| bad(line, e.to_string()))?;
            self.declarations.insert(path.clone(), decl);
        }
        Ok(&self.declarations[&path])
    }

    fn hash(&mut self, line: &WorkloadLine, arg: &str) -> Result<Digest, Failure> {
        match Digest::from_hex(arg) {
            Ok(h) => Ok(h),
            Err(_) => Ok(self.declaration(line, arg)?.hash()),
        }
    }

    fn compile(&mut self, line: &WorkloadLine) -> Result<WorkloadEvent, Failure> {
        let arity = |n: usize| {
            if line.args.len() == n {
                Ok(())
            } else {
                Err(bad(line, format!("{} takes {n} arguments", line.command)))
            }
        };
        let id = format!("w{}", line.line);
        let creator = self.principal(&line.actor);
        let proposal = |action: &str, args: Vec<String>| {
            TxProposal::new(id.clone(), creator.clone(), action, args, line.tick).map_err(Failure::from)
        };
        let proposal = match line.command.as_str() {
            "declare" => {
                arity(1)?;
                let text = self.declaration(line, &line.args[0])?.render_canonical();
                proposal("consent.declare", vec![text])?
            }
            "request" => {
                arity(2)?;
                let hash = self.hash(line, &line.args[1])?;
                proposal("consent.request", vec![self.principal(&line.args[0]), hash.to_hex()])?
            }
            "grant" | "deny" => {
                arity(1)?;
                let hash = self.hash(line, &line.args[0])?;
                proposal("consent.respond", vec![creator.clone(), hash.to_hex(), line.command.clone()])?
            }
            "revoke" => {
                arity(1)?;
                let hash = self.hash(line, &line.args[0])?;
                proposal("consent.revoke", vec![creator.clone(), hash.to_hex()])?
            }
            "submit" => {
                if !(3..=4).contains(&line.args.len()) {
                    return Err(bad(line, "submit takes 3 or 4 arguments"));
                }
                let hash = self.hash(line, &line.args[1])?;
                let payload = HealthRecordPayload::parse(&read_text(&self.base.join(&line.args[2]))?)?;
                if self.store.get(&payload.hash())?.is_none() {
                    self.staged.insert(self.store.put(&payload)?);
                }
                let supersedes = match line.args.get(3) {
                    Some(raw) => Some(Digest::from_hex(raw).map_err(|_| bad(line, "supersedes must be a hash"))?),
                    None => None,
                };
                let subject = self.principal(&line.args[0]);
                submit_proposal(id.clone(), &creator, &subject, &hash, &payload, line.tick, supersedes)
            }
            "enroll" => {
                arity(1)?;
                proposal("consent.enroll", vec![self.principal(&line.args[0])])?
            }
            "audit" => {
                arity(1)?;
                proposal("audit.history", vec![line.args[0].clone()])?
            }
            other => return Err(bad(line, format!("unknown command {other:?}"))),
        };
        Ok(WorkloadEvent { tick: line.tick, proposal })
    }
}
