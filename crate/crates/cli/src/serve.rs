//! HTTP front for the read-only query endpoints.

use std::sync::{Arc, RwLock};
use std::thread;

use consentchain::ledger::{ChainLog, Ledger};
use consentchain::nodal::{NodalPoint, QueryRequest};
use consentchain::pipeline::DirStore;

use crate::env::{Failure, Node};

const WORKERS: usize = 4;

/// Picks up blocks appended to the log by other processes since the last
/// request. The writer lock is held only while catching up.
fn refresh(log: &ChainLog, ledger: &RwLock<Ledger>) -> Result<(), Failure> {
    let blocks = log.read_all()?;
    let known = ledger.read().expect("ledger lock").chain().len();
    if blocks.len() > known {
        let mut guard = ledger.write().expect("ledger lock");
        for block in blocks.get(guard.chain().len()..).unwrap_or_default() {
            let mut fresh = block.clone();
            for tx in &mut fresh.txs {
                tx.validation_code = None;
            }
            guard.validate_and_commit_block(fresh)?;
        }
    }
    Ok(())
}

pub fn serve(node: Node, addr: &str) -> Result<(), Failure> {
    let server = tiny_http::Server::http(addr).map_err(|e| Failure::new("Io", e.to_string()))?;
    eprintln!("listening on http://{}", server.server_addr());
    let server = Arc::new(server);
    let log = Arc::new(node.log);
    let store = Arc::new(node.store);
    let ledger = Arc::new(RwLock::new(node.solo.into_ledger()));
    let config = node.net.pipeline;
    let read_mode = node.net.read_mode;

    let workers: Vec<_> = (0..WORKERS)
        .map(|_| {
            let (server, log, store, ledger) = (server.clone(), log.clone(), store.clone(), ledger.clone());
            thread::spawn(move || {
                for request in server.incoming_requests() {
                    let body = match refresh(&log, &ledger) {
                        Ok(()) => {
                            let actor = request
                                .headers()
                                .iter()
                                .find(|h| h.field.equiv("X-Actor-Id"))
                                .map(|h| h.value.as_str().to_string());
                            let query = QueryRequest::from_url(request.url(), actor);
                            let snapshot = ledger.read().expect("ledger lock");
                            let nodal =
                                NodalPoint { ledger: &snapshot, store: store.as_ref() as &DirStore, config, read_mode };
                            nodal.handle_query(&query)
                        }
                        Err(f) => consentchain::nodal::QueryResponse {
                            ok: false,
                            payload: serde_json::Value::Null,
                            error: Some(f.name),
                            detail: Some(f.detail),
                            status: 500,
                        },
                    };
                    let status = body.status;
                    let text = serde_json::to_string(&body).expect("serializable");
                    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                    let response = tiny_http::Response::from_string(text).with_status_code(status).with_header(header);
                    let _ = request.respond(response);
                }
            })
        })
        .collect();
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}
