use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const DEMO_CHAIN: &str = "ea35388d2d66edd7e32fa8488fe78d8964bd1165d5dff77ab28650cf4af66844";
const DEMO_STATE: &str = "a8db462fc2b5b9f62df2f289630f493e9b6f2be531411184f2a2a92491e74be3";
const DEMO_AUDIT: &str = "48296f11665acefe30438658a6c96d33683966db4e5148426f46f98003091c37";
const COVID_HASH: &str = "f121dedff2f9ee2a800cfb518190385ab37c125cda4737fc37841ca100802915";

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/demo")
}

/// A scratch home seeded with the demo registry, network and input files.
fn home() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(fixtures()).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
    }
    dir
}

fn run(home: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_consentchain"))
        .arg("--home")
        .arg(home)
        .args(args)
        .current_dir(home)
        .env_remove("CONSENTCHAIN_HOME")
        .output()
        .unwrap()
}

fn ok(home: &Path, args: &[&str]) -> String {
    let out = run(home, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(home: &Path, args: &[&str], name: &str) {
    let out = run(home, args);
    assert_eq!(out.status.code(), Some(1), "{args:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(name), "{args:?}: expected {name}, got {stderr}");
}

fn json(home: &Path, args: &[&str]) -> serde_json::Value {
    let mut all = vec!["--json"];
    all.extend_from_slice(args);
    serde_json::from_str(&ok(home, &all)).unwrap()
}

/// Declares the covid purpose and has ana, bia, caio (north) and duda
/// (south) grant consent, each with one record submitted by the lab.
fn populate(home: &Path) {
    ok(home, &["--now", "1", "prose", "declare", "covid.lprose", "--as", "clinic-gw"]);
    let mut t = 2;
    for s in ["ana", "bia", "caio", "duda"] {
        let subject = format!("citizen-{s}");
        let now = t.to_string();
        ok(home, &["--now", &now, "consent", "request", &subject, "covid.lprose", "--as", "clinic-gw"]);
        let now = (t + 1).to_string();
        ok(home, &["--now", &now, "consent", "grant", "covid.lprose", "--as", &subject]);
        let now = (t + 2).to_string();
        let payload = format!("{s}.payload");
        ok(home, &["--now", &now, "data", "submit", &subject, "covid.lprose", &payload, "--as", "lab-gw"]);
        t += 3;
    }
}

#[test]
fn grant_before_request_is_an_illegal_transition() {
    let h = home();
    ok(h.path(), &["prose", "declare", "covid.lprose", "--as", "clinic-gw"]);
    fails(h.path(), &["consent", "grant", "covid.lprose", "--as", "citizen-ana"], "IllegalTransition");
    let out = run(h.path(), &["--json", "consent", "grant", "covid.lprose", "--as", "citizen-ana"]);
    let body: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(body["error"], "IllegalTransition");
    assert_eq!(body["ok"], false);
}

#[test]
fn pristine_chain_verifies() {
    let h = home();
    populate(h.path());
    assert_eq!(ok(h.path(), &["ledger", "verify"]).trim(), "ok");
}

#[test]
fn tampered_chain_log_is_reported() {
    let h = home();
    populate(h.path());
    let log = h.path().join("chain.log");
    let mut bytes = fs::read(&log).unwrap();
    // Flip one hex digit of the last block's data hash; the JSON stays valid.
    let needle = b"\"data_hash\":\"";
    let at = bytes.windows(needle.len()).rposition(|w| w == needle).unwrap() + needle.len();
    bytes[at] = if bytes[at] == b'0' { b'1' } else { b'0' };
    fs::write(&log, bytes).unwrap();
    let out = run(h.path(), &["ledger", "verify"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("first bad height 13"));
    fails(h.path(), &["ledger", "verify"], "CorruptChain");
}

#[test]
fn json_outputs_are_stable() {
    let h = home();
    populate(h.path());
    assert_eq!(
        json(h.path(), &["prose", "hash", "covid.lprose"]),
        serde_json::json!({ "declaration": "covid-surveillance-2020", "hash": COVID_HASH })
    );
    assert_eq!(
        json(h.path(), &["data", "aggregate", "region", "covid.lprose", "--as", "auditor-1"]),
        serde_json::json!({ "north": 3 })
    );
    let status = json(h.path(), &["consent", "status", "citizen-ana", COVID_HASH]);
    assert_eq!(status["state"], "Granted");
    assert_eq!(status["at"], 13);
    assert_eq!(status["declaration"], COVID_HASH);
    // The subject appears only as a 64-hex pseudonym.
    let subject = status["subject"].as_str().unwrap();
    assert_eq!(subject.len(), 64);
    assert!(!subject.contains("ana"));
    assert_eq!(json(h.path(), &["--now", "3", "consent", "status", "citizen-ana", COVID_HASH])["state"], "Granted");
    assert_eq!(json(h.path(), &["--now", "2", "consent", "status", "citizen-ana", COVID_HASH])["state"], "Requested");
}

#[test]
fn governance_errors_surface_by_name() {
    let h = home();
    populate(h.path());
    let p = h.path();
    fails(
        p,
        &["data", "submit", "citizen-ana", "covid.lprose", "overshare.payload", "--as", "lab-gw"],
        "MinimizationViolation",
    );
    fails(p, &["data", "submit", "citizen-ana", "covid.lprose", "ana.payload", "--as", "citizen-bia"], "RoleDenied");
    fails(p, &["data", "submit", "citizen-ana", "covid.lprose", "ana.payload", "--as", "lab-gw"], "DuplicateRecord");
    fails(p, &["consent", "request", "citizen-ana", "covid.lprose", "--as", "lab-gw"], "NotAController");
    fails(p, &["data", "aggregate", "region", "covid.lprose", "--as", "stranger"], "UnknownActor");
    fails(p, &["data", "aggregate", "home_address", "covid.lprose", "--as", "auditor-1"], "UnknownField");
    fails(p, &["prose", "declare", "covid.lprose", "--as", "clinic-gw"], "DeclarationExists");
    fails(p, &["id", "register", "citizen-ana", "--roles", "DataSubject"], "DuplicateActor");
    fails(p, &["audit", "export", "--from", "5", "--to", "2"], "BadRange");
    // The rejected submissions left nothing behind in the store.
    assert_eq!(fs::read_dir(p.join("store")).unwrap().count(), 4);
}

#[test]
fn revocation_erases_payloads_and_drops_from_aggregate() {
    let h = home();
    populate(h.path());
    let p = h.path();
    let out = ok(p, &["consent", "revoke", "covid.lprose", "--as", "citizen-ana"]);
    assert!(out.contains("erased 1 payload"), "{out}");
    let mine = json(p, &["data", "mine", "--as", "citizen-ana"]);
    assert_eq!(mine[0]["payload"]["status"], "erased");
    assert_eq!(
        json(p, &["data", "aggregate", "region", COVID_HASH, "--as", "auditor-1"]),
        serde_json::json!({ "north": 2 })
    );
    fails(p, &["data", "submit", "citizen-ana", "covid.lprose", "bia.payload", "--as", "lab-gw"], "ConsentRequired");
}

#[test]
fn provenance_and_history() {
    let h = home();
    populate(h.path());
    let p = h.path();
    let mine = json(p, &["data", "mine", "--as", "citizen-bia"]);
    let key = mine[0]["key"].as_str().unwrap().to_string();
    let prov = json(p, &["data", "provenance", &key]);
    assert_eq!(prov[0]["actor"], "lab-gw");
    assert_eq!(prov[0]["action"], "data.submit");
    assert_eq!(prov[0]["validation_code"], "Valid");
    let hist = json(p, &["ledger", "history", &key]);
    assert_eq!(hist.as_array().unwrap().len(), 1);
}

#[test]
fn identity_commands() {
    let h = home();
    let p = h.path();
    let out = ok(p, &["id", "register", "citizen-eva", "--roles", "DataSubject"]);
    assert!(out.starts_with("registered citizen-eva principal="));
    ok(p, &["id", "register", "hospital"]);
    ok(p, &["id", "register", "hospital-gw", "--org", "hospital", "--roles", "DataController"]);
    fails(p, &["id", "register", "rogue", "--roles", "DataController"], "RoleOrgMismatch");
    fails(p, &["id", "register", "x", "--roles", "Overlord"], "UnknownRole");
    let list = ok(p, &["id", "list"]);
    assert!(list.contains("citizen-eva\t-\tDataSubject\t"));
    assert!(list.contains("hospital-gw\thospital\tDataController\thospital-gw"));
    assert_eq!(ok(p, &["prose", "check", "covid.lprose"]).trim(), format!("ok covid-surveillance-2020 {COVID_HASH}"));
}

#[test]
fn usage_errors_exit_2() {
    let h = home();
    assert_eq!(run(h.path(), &["consent", "teleport"]).status.code(), Some(2));
    assert_eq!(run(h.path(), &["consent", "grant", "covid.lprose"]).status.code(), Some(2));
}

#[test]
fn demo_network_converges_to_frozen_digests() {
    let h = home();
    let exported = h.path().join("peer0.chain");
    let out = ok(h.path(), &["net", "run", "demo.workload", "--export-chain", exported.to_str().unwrap()]);
    let peers: Vec<&str> = out.lines().filter(|l| l.starts_with('p')).collect();
    assert_eq!(peers.len(), 3);
    for line in &peers {
        assert!(line.contains(&format!("chain={DEMO_CHAIN}")), "{line}");
        assert!(line.contains(&format!("state={DEMO_STATE}")), "{line}");
    }
    assert!(out.contains("converged=true valid=15 invalid=1 rejected=3"), "{out}");
    assert!(out.contains("rejected w16 at 15: MinimizationViolation"));

    let chain = exported.to_str().unwrap();
    assert_eq!(ok(h.path(), &["--chain", chain, "ledger", "verify"]).trim(), "ok");
    let export = json(h.path(), &["--chain", chain, "audit", "export", "--out", "audit.ndjson"]);
    assert_eq!(export["lines"], 16);
    assert_eq!(export["digest"], DEMO_AUDIT);
    assert_eq!(fs::read_to_string(h.path().join("audit.ndjson")).unwrap().lines().count(), 16);
    assert_eq!(
        json(h.path(), &["--chain", chain, "data", "aggregate", "region", COVID_HASH, "--as", "auditor-1"]),
        serde_json::json!({ "north": 3 })
    );
    // Revoked and rejected payloads were removed from the store.
    assert_eq!(fs::read_dir(h.path().join("store")).unwrap().count(), 3);
}

fn get(addr: &str, path: &str, actor: Option<&str>) -> (u16, serde_json::Value) {
    let mut stream = TcpStream::connect(addr).unwrap();
    let extra = actor.map(|a| format!("X-Actor-Id: {a}\r\n")).unwrap_or_default();
    write!(stream, "GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n{extra}\r\n").unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let status: u16 = raw.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = raw.split("\r\n\r\n").nth(1).unwrap();
    (status, serde_json::from_str(body).unwrap())
}

#[test]
fn serve_answers_queries() {
    let h = home();
    populate(h.path());
    let mut child = Command::new(env!("CARGO_BIN_EXE_consentchain"))
        .arg("--home")
        .arg(h.path())
        .args(["serve", "--addr", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().rsplit("http://").next().unwrap().to_string();

    let (status, block) = get(&addr, "/chain/block/0", None);
    assert_eq!(status, 200);
    assert_eq!(block["payload"]["prev_hash"], "0".repeat(64));
    let (_, verify) = get(&addr, "/chain/verify", None);
    assert_eq!(verify["payload"]["valid"], true);
    let (_, agg) = get(&addr, &format!("/analysis/aggregate?field=region&decl={COVID_HASH}"), Some("auditor-1"));
    assert_eq!(agg["payload"], serde_json::json!({ "north": 3 }));
    let (status, missing) = get(&addr, "/chain/block/999", None);
    assert_eq!((status, missing["error"].as_str()), (400, Some("BadParams")));
    assert_eq!(get(&addr, "/nope", None).0, 404);

    // Blocks committed by another process show up on the next request.
    ok(h.path(), &["consent", "revoke", "covid.lprose", "--as", "citizen-ana"]);
    let (_, consent) = get(&addr, &format!("/consent/citizen-ana/{COVID_HASH}"), None);
    assert_eq!(consent["payload"]["state"], "Revoked");
    child.kill().unwrap();
    let _ = child.wait();
}
