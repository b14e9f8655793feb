mod env;
mod serve;
mod workload;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use consentchain::consensus::{run_network_round, NetworkOutcome};
use consentchain::consent::{ConsentRecord, ConsentState};
use consentchain::contracts::TxProposal;
use consentchain::digest::Digest;
use consentchain::identity::{render_roles, Role, RoleSet};
use consentchain::ledger::{verify_chain, ChainLog, StateView, ValidationCode};
use consentchain::legalprose::PurposeDeclaration;
use consentchain::nodal::export_audit;
use consentchain::pipeline::{
    committed_refs, erase_after_revocation, erase_revoked, erase_superseded, provenance_of, query_aggregate,
    read_own_records, submit_health_record, HealthRecordPayload, PayloadSlot, PayloadStore,
};

use env::{read_text, Failure, Node, Paths};

#[derive(Parser)]
#[command(name = "consentchain", version, about = "Permissioned health-data ledger with consent governance")]
struct Cli {
    /// Directory holding registry.txt, network.conf, chain.log and store/.
    #[arg(long, global = true, env = "CONSENTCHAIN_HOME", default_value = ".")]
    home: PathBuf,
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    #[arg(long, global = true)]
    network: Option<PathBuf>,
    #[arg(long, global = true)]
    chain: Option<PathBuf>,
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Emit machine-readable JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Logical time for the command. Defaults to one tick past the chain tip
    /// for writes and the tip itself for reads.
    #[arg(long, global = true)]
    now: Option<u64>,
    /// Print transaction ids and other detail to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Manage the identity registry.
    #[command(subcommand)]
    Id(IdCmd),
    /// Parse and hash purpose declarations.
    #[command(subcommand)]
    Prose(ProseCmd),
    /// Consent lifecycle.
    #[command(subcommand)]
    Consent(ConsentCmd),
    /// Submit and query health records.
    #[command(subcommand)]
    Data(DataCmd),
    /// Inspect the local chain.
    #[command(subcommand)]
    Ledger(LedgerCmd),
    /// Run a simulated multi-peer network.
    #[command(subcommand)]
    Net(NetCmd),
    /// Serve the read-only query API over HTTP.
    Serve {
        /// Bind address; falls back to CONSENTCHAIN_ADDR, then loopback.
        #[arg(long, env = "CONSENTCHAIN_ADDR", default_value = "127.0.0.1:7878")]
        addr: String,
    },
    /// Export the transaction log for auditors.
    #[command(subcommand)]
    Audit(AuditCmd),
}

#[derive(Args)]
struct Actor {
    /// Acting identity.
    #[arg(long = "as", value_name = "ACTOR")]
    actor: String,
}

#[derive(Subcommand)]
enum IdCmd {
    /// Add an organization (no --org) or a member actor.
    Register {
        actor: String,
        #[arg(long)]
        org: Option<String>,
        /// Comma-separated roles, e.g. DataController,DataProcessor.
        #[arg(long, default_value = "")]
        roles: String,
        /// Credential seed as 64 hex chars; random if omitted.
        #[arg(long)]
        seed: Option<String>,
    },
    List,
}

#[derive(Subcommand)]
enum ProseCmd {
    /// Validate a declaration against the registry.
    Check { file: PathBuf },
    /// Print a declaration's content hash.
    Hash { file: PathBuf },
    /// Publish a declaration on-chain as its controller.
    Declare {
        file: PathBuf,
        #[command(flatten)]
        who: Actor,
    },
}

#[derive(Subcommand)]
enum ConsentCmd {
    Request {
        subject: String,
        /// Declaration hash or .lprose file.
        decl: String,
        #[command(flatten)]
        who: Actor,
    },
    Grant {
        decl: String,
        #[command(flatten)]
        who: Actor,
    },
    Deny {
        decl: String,
        #[command(flatten)]
        who: Actor,
    },
    /// Revoke and erase the subject's payloads under the declaration.
    Revoke {
        decl: String,
        #[command(flatten)]
        who: Actor,
    },
    Status {
        subject: String,
        decl: String,
    },
}

#[derive(Subcommand)]
enum DataCmd {
    Submit {
        subject: String,
        decl: String,
        /// File of `field=value` lines.
        payload: PathBuf,
        #[command(flatten)]
        who: Actor,
        #[arg(long)]
        supersedes: Option<String>,
    },
    /// A data subject's own records.
    Mine {
        #[command(flatten)]
        who: Actor,
    },
    Aggregate {
        field: String,
        decl: String,
        #[command(flatten)]
        who: Actor,
    },
    Provenance {
        key: String,
    },
}

#[derive(Subcommand)]
enum LedgerCmd {
    Verify,
    History { key: String },
}

#[derive(Subcommand)]
enum NetCmd {
    Run {
        workload: PathBuf,
        /// Minimum number of ticks to simulate.
        #[arg(long, default_value_t = 0)]
        ticks: u64,
        /// Write the first peer's chain to this log file.
        #[arg(long)]
        export_chain: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AuditCmd {
    Export {
        #[arg(long, default_value_t = 0)]
        from: u64,
        /// Exclusive upper height; defaults to past the tip.
        #[arg(long)]
        to: Option<u64>,
        /// Write the NDJSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Output {
    text: String,
    json: Value,
}

fn out(text: impl Into<String>, json: Value) -> Result<Output, Failure> {
    Ok(Output { text: text.into(), json })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let paths = Paths {
        registry: cli.registry.clone().unwrap_or_else(|| cli.home.join("registry.txt")),
        network: cli.network.clone().unwrap_or_else(|| cli.home.join("network.conf")),
        chain: cli.chain.clone().unwrap_or_else(|| cli.home.join("chain.log")),
        store: cli.store.clone().unwrap_or_else(|| cli.home.join("store")),
    };
    match run(&cli, &paths) {
        Ok(o) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&o.json).expect("serializable"));
            } else if !o.text.is_empty() {
                print!("{}", o.text);
                if !o.text.ends_with('\n') {
                    println!();
                }
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            if cli.json {
                let body = json!({ "ok": false, "error": f.name, "detail": f.detail });
                println!("{}", serde_json::to_string_pretty(&body).expect("serializable"));
            } else {
                eprintln!("error: {f}");
            }
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli, paths: &Paths) -> Result<Output, Failure> {
    match &cli.command {
        Command::Id(cmd) => id(cmd, paths),
        Command::Prose(cmd) => prose(cli, cmd, paths),
        Command::Consent(cmd) => consent(cli, cmd, &mut paths.open()?),
        Command::Data(cmd) => data(cli, cmd, &mut paths.open()?),
        Command::Ledger(cmd) => ledger(cmd, paths),
        Command::Net(NetCmd::Run { workload, ticks, export_chain }) => net_run(paths, workload, *ticks, export_chain),
        Command::Serve { addr } => {
            serve::serve(paths.open()?, addr)?;
            out("", Value::Null)
        }
        Command::Audit(AuditCmd::Export { from, to, out: dest }) => audit(paths, *from, *to, dest.as_deref()),
    }
}

fn id(cmd: &IdCmd, paths: &Paths) -> Result<Output, Failure> {
    let net = paths.network_config()?;
    let mut registry = paths.registry(net.salt)?;
    match cmd {
        IdCmd::Register { actor, org, roles, seed } => {
            let roles: RoleSet =
                consentchain::lines::split_list(roles).iter().map(|r| r.parse::<Role>()).collect::<Result<_, _>>()?;
            let seed = match seed {
                Some(hex) => Some(
                    Digest::from_hex(hex)
                        .map_err(|_| Failure::new("BadArgs", "seed must be 64 lowercase hex chars"))?
                        .0,
                ),
                None => None,
            };
            let registered = match (org, seed) {
                (None, _) if roles.is_empty() => registry.register_organization(actor)?.clone(),
                (org, Some(seed)) => registry.register_actor_with_seed(actor, org.as_deref(), roles, seed)?.clone(),
                (org, None) => registry.register_actor(actor, org.as_deref(), roles)?.clone(),
            };
            paths.save_registry(&registry)?;
            let principal = registry.principal_of(&registered);
            out(
                format!("registered {} principal={principal}", registered.actor_id),
                json!({ "actor": registered, "principal": principal }),
            )
        }
        IdCmd::List => {
            let mut text = String::new();
            let mut rows = Vec::new();
            for a in registry.actors() {
                let principal = registry.principal_of(a);
                text.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    a.actor_id,
                    a.org_id.as_deref().unwrap_or("-"),
                    render_roles(&a.roles),
                    principal
                ));
                rows.push(json!({ "actor": a, "principal": principal }));
            }
            out(text, Value::Array(rows))
        }
    }
}

fn prose(cli: &Cli, cmd: &ProseCmd, paths: &Paths) -> Result<Output, Failure> {
    match cmd {
        ProseCmd::Hash { file } => {
            let decl = PurposeDeclaration::parse(&read_text(file)?)?;
            let hash = decl.hash();
            out(hash.to_hex(), json!({ "declaration": decl.declaration_id, "hash": hash }))
        }
        ProseCmd::Check { file } => {
            let decl = PurposeDeclaration::parse(&read_text(file)?)?;
            let net = paths.network_config()?;
            decl.validate_parties(&paths.registry(net.salt)?)?;
            let hash = decl.hash();
            out(
                format!("ok {} {hash}", decl.declaration_id),
                json!({ "ok": true, "declaration": decl.declaration_id, "hash": hash }),
            )
        }
        ProseCmd::Declare { file, who } => {
            let decl = PurposeDeclaration::parse(&read_text(file)?)?;
            let mut node = paths.open()?;
            let now = node.write_time(cli.now);
            let proposal = TxProposal::new(
                node.proposal_id(now),
                node.principal(&who.actor),
                "consent.declare",
                vec![decl.render_canonical()],
                now,
            )?;
            let c = committed(cli, node.commit(proposal, now)?);
            out(format!("declared {} {}", decl.declaration_id, decl.hash()), json!({ "hash": decl.hash(), "tx": c }))
        }
    }
}

fn committed(cli: &Cli, c: consentchain::consensus::Committed) -> consentchain::consensus::Committed {
    if cli.verbose > 0 {
        eprintln!("tx {} at {}.{} {}", c.tx_id, c.height, c.tx_index, c.code);
    }
    c
}

fn consent(cli: &Cli, cmd: &ConsentCmd, node: &mut Node) -> Result<Output, Failure> {
    if let ConsentCmd::Status { subject, decl } = cmd {
        let (hash, _) = node.declaration_ref(decl)?;
        let principal = node.principal(subject);
        let at = node.read_time(cli.now);
        let state = node
            .ledger()
            .state()
            .get(&ConsentRecord::key_for(&principal, &hash))
            .and_then(|(b, _)| ConsentRecord::from_canonical(std::str::from_utf8(b).ok()?).ok())
            .map_or(ConsentState::NotRequested, |r| r.status_at(at));
        return out(state.as_str(), json!({ "subject": principal, "declaration": hash, "at": at, "state": state }));
    }
    let now = node.write_time(cli.now);
    let (who, decl) = match cmd {
        ConsentCmd::Request { who, decl, .. }
        | ConsentCmd::Grant { who, decl }
        | ConsentCmd::Deny { who, decl }
        | ConsentCmd::Revoke { who, decl } => (who, decl),
        ConsentCmd::Status { .. } => unreachable!("handled above"),
    };
    let (hash, _) = node.declaration_ref(decl)?;
    let me = node.principal(&who.actor);
    let (action, args, verb) = match cmd {
        ConsentCmd::Request { subject, .. } => {
            ("consent.request", vec![node.principal(subject), hash.to_hex()], "requested")
        }
        ConsentCmd::Grant { .. } => ("consent.respond", vec![me.clone(), hash.to_hex(), "grant".into()], "granted"),
        ConsentCmd::Deny { .. } => ("consent.respond", vec![me.clone(), hash.to_hex(), "deny".into()], "denied"),
        _ => ("consent.revoke", vec![me.clone(), hash.to_hex()], "revoked"),
    };
    let subject = args[0].clone();
    let proposal = TxProposal::new(node.proposal_id(now), me, action, args, now)?;
    let c = committed(cli, node.commit(proposal, now)?);
    let mut body = json!({ "subject": subject, "declaration": hash, "state": verb, "at": now, "tx": c });
    let mut text = format!("{verb} {hash} at {now}");
    if let ConsentCmd::Revoke { .. } = cmd {
        let erased = erase_after_revocation(node.solo.ledger(), &mut node.store, &who.actor, &hash)?;
        body["erased_payloads"] = json!(erased);
        text.push_str(&format!(", erased {erased} payload(s)"));
    }
    out(text, body)
}

fn data(cli: &Cli, cmd: &DataCmd, node: &mut Node) -> Result<Output, Failure> {
    match cmd {
        DataCmd::Submit { subject, decl, payload, who, supersedes } => {
            let now = node.write_time(cli.now);
            let (hash, declaration) = node.declaration_ref(decl)?;
            let declaration = declaration.ok_or_else(|| Failure::new("UnknownDeclaration", hash.to_hex()))?;
            let payload = HealthRecordPayload::parse(&read_text(payload)?)?;
            let supersedes = match supersedes {
                Some(raw) => {
                    Some(Digest::from_hex(raw).map_err(|_| Failure::new("BadArgs", "supersedes must be a hash"))?)
                }
                None => None,
            };
            let existed = node.store.get(&payload.hash())?.is_some();
            let proposal = submit_health_record(
                node.solo.ledger(),
                &mut node.store,
                &who.actor,
                subject,
                &declaration,
                &payload,
                now,
                supersedes,
            )?;
            let key = consentchain::pipeline::HealthRecordRef::key_for(&proposal.args[0], &payload.hash());
            match node.commit(proposal, now) {
                Ok(c) => {
                    let c = committed(cli, c);
                    let erased = erase_superseded(node.solo.ledger(), &mut node.store)?;
                    out(
                        format!("stored {key}"),
                        json!({ "key": key, "payload_hash": payload.hash(), "tx": c, "erased_payloads": erased }),
                    )
                }
                Err(f) => {
                    if !existed {
                        node.store.erase(&payload.hash())?;
                    }
                    Err(f)
                }
            }
        }
        DataCmd::Mine { who } => {
            let now = node.read_time(cli.now);
            let records = read_own_records(node.ledger(), &node.store, &who.actor, now)?;
            let mut text = String::new();
            for r in &records {
                let shown = match &r.payload {
                    PayloadSlot::Present(p) => p.canonical().trim_end().replace('\n', " "),
                    PayloadSlot::Erased => "<erased>".to_string(),
                };
                text.push_str(&format!("{} @{} {}\n", r.key, r.locator, shown));
            }
            out(text, serde_json::to_value(&records).expect("serializable"))
        }
        DataCmd::Aggregate { field, decl, who } => {
            let now = node.read_time(cli.now);
            let (hash, _) = node.declaration_ref(decl)?;
            let counts =
                query_aggregate(node.ledger(), &node.store, &node.net.pipeline, &who.actor, field, &hash, now)?;
            let text: String = counts.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect();
            out(text, serde_json::to_value(&counts).expect("serializable"))
        }
        DataCmd::Provenance { key } => {
            let entries = provenance_of(node.ledger(), key)?;
            let text: String = entries
                .iter()
                .map(|e| format!("{}\t{}\t{}\t{}\n", e.block_timestamp, e.actor, e.action, e.validation_code))
                .collect();
            out(text, serde_json::to_value(&entries).expect("serializable"))
        }
    }
}

fn ledger(cmd: &LedgerCmd, paths: &Paths) -> Result<Output, Failure> {
    match cmd {
        LedgerCmd::Verify => {
            // Verify the raw log rather than a replayed ledger, so tampering
            // is reported with its height instead of failing the load.
            let net = paths.network_config()?;
            let ctx = net.validation_context(paths.registry(net.salt)?);
            let blocks = ChainLog::new(&paths.chain).read_all()?;
            if blocks.is_empty() {
                return Err(Failure::new("CorruptChain", "chain log is empty"));
            }
            match verify_chain(&blocks, &ctx) {
                Ok(()) => {
                    let tip = blocks.last().expect("non-empty");
                    out("ok", json!({ "valid": true, "height": tip.height, "tip": tip.hash }))
                }
                Err(h) => Err(Failure::new("CorruptChain", format!("first bad height {h}"))),
            }
        }
        LedgerCmd::History { key } => {
            let node = paths.open()?;
            let history = node.ledger().get_history(key);
            let text: String = history
                .iter()
                .map(|h| format!("{}\t{}\t{}\t{}\n", h.version, h.block_timestamp, h.creator, hex::encode(&h.value)))
                .collect();
            out(text, serde_json::to_value(&history).expect("serializable"))
        }
    }
}

fn net_run(paths: &Paths, workload: &Path, ticks: u64, export_chain: &Option<PathBuf>) -> Result<Output, Failure> {
    let net = paths.network_config()?;
    let registry = paths.registry(net.salt)?;
    let mut store = consentchain::pipeline::DirStore::open(&paths.store)?;
    let base = workload.parent().unwrap_or(Path::new("."));
    let (events, staged) = {
        let mut compiler = workload::Compiler::new(&registry, base, &mut store);
        let events = compiler.compile_file(workload)?;
        (events, compiler.staged())
    };
    let ctx = net.validation_context(registry);
    let outcome = run_network_round(&net.topology, &ctx, net.orderer, &events, ticks)?;
    // Payloads staged for proposals that never committed as valid are dropped.
    let kept: std::collections::BTreeSet<Digest> =
        committed_refs(&outcome.ledgers[0]).into_iter().map(|(r, _)| r.payload_hash).collect();
    for hash in staged.difference(&kept) {
        store.erase(hash)?;
    }
    erase_revoked(&outcome.ledgers[0], &mut store)?;
    erase_superseded(&outcome.ledgers[0], &mut store)?;
    if let Some(path) = export_chain {
        let log = ChainLog::new(path);
        if !log.read_all()?.is_empty() {
            return Err(Failure::new("Io", format!("{} already holds a chain", path.display())));
        }
        for block in outcome.ledgers[0].chain() {
            log.append(block)?;
        }
    }
    let summary = net_summary(&outcome);
    let mut text = String::new();
    for p in &outcome.peers {
        text.push_str(&format!("{}\theight={}\tchain={}\tstate={}\n", p.peer, p.height, p.chain_hash, p.state_digest));
    }
    text.push_str(&format!(
        "converged={} valid={} invalid={} rejected={}\n",
        outcome.converged(),
        summary["valid"],
        summary["invalid"],
        outcome.rejected.len()
    ));
    for r in &outcome.rejected {
        text.push_str(&format!("rejected {} at {}: {}\n", r.proposal_id, r.tick, r.error));
    }
    if !outcome.converged() {
        return Err(Failure::new("Diverged", text));
    }
    out(text, summary)
}

fn net_summary(outcome: &NetworkOutcome) -> Value {
    let codes = outcome.codes(0);
    let valid = codes.iter().filter(|(_, c)| *c == ValidationCode::Valid).count();
    json!({
        "peers": outcome.peers,
        "converged": outcome.converged(),
        "blocks": outcome.ordered_blocks.len(),
        "valid": valid,
        "invalid": codes.len() - valid,
        "rejected": outcome.rejected,
    })
}

fn audit(paths: &Paths, from: u64, to: Option<u64>, dest: Option<&Path>) -> Result<Output, Failure> {
    let node = paths.open()?;
    let to = to.unwrap_or(node.ledger().height() + 1);
    let export = export_audit(node.ledger(), from, to)?;
    let body = json!({ "from": from, "to": to, "lines": export.lines, "digest": export.digest });
    match dest {
        Some(path) => {
            std::fs::write(path, &export.text)?;
            out(format!("lines={} sha256={}", export.lines, export.digest), body)
        }
        None => {
            eprintln!("lines={} sha256={}", export.lines, export.digest);
            out(export.text, body)
        }
    }
}
