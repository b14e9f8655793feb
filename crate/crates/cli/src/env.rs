//! On-disk layout and the single-node commit path.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use consentchain::consensus::{Committed, NetworkConfig, SoloNode};
use consentchain::contracts::TxProposal;
use consentchain::digest::Digest;
use consentchain::identity::Registry;
use consentchain::ledger::{ChainLog, Ledger, ValidationCode};
use consentchain::legalprose::PurposeDeclaration;
use consentchain::pipeline::{declaration_on_chain, DirStore};

/// A failed command: the governance error name plus a human message.
#[derive(Debug)]
pub struct Failure {
    pub name: String,
    pub detail: String,
}

impl Failure {
    pub fn new(name: impl Into<String>, detail: impl Into<String>) -> Failure {
        Failure { name: name.into(), detail: detail.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.name, self.detail)
    }
}

macro_rules! named_errors {
    ($($t:ty),* $(,)?) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Failure {
                Failure::new(e.name(), e.to_string())
            }
        }
    )*};
}

named_errors!(
    consentchain::identity::IdentityError,
    consentchain::legalprose::ProseError,
    consentchain::consent::ConsentError,
    consentchain::contracts::ContractError,
    consentchain::ledger::LedgerError,
    consentchain::consensus::ConsensusError,
    consentchain::pipeline::PipelineError,
    consentchain::nodal::NodalError,
);

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::new("Io", e.to_string())
    }
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new("Io", format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct Paths {
    pub registry: PathBuf,
    pub network: PathBuf,
    pub chain: PathBuf,
    pub store: PathBuf,
}

impl Paths {
    pub fn network_config(&self) -> Result<NetworkConfig, Failure> {
        Ok(NetworkConfig::parse(&read_text(&self.network)?)?)
    }

    /// A missing registry file is an empty registry.
    pub fn registry(&self, salt: [u8; 32]) -> Result<Registry, Failure> {
        match fs::read_to_string(&self.registry) {
            Ok(text) => Ok(Registry::parse_bootstrap(&text, salt)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Registry::new(salt)),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save_registry(&self, registry: &Registry) -> Result<(), Failure> {
        fs::write(&self.registry, registry.render_bootstrap())?;
        Ok(())
    }

    pub fn open(&self) -> Result<Node, Failure> {
        let net = self.network_config()?;
        let registry = self.registry(net.salt)?;
        let log = ChainLog::new(&self.chain);
        let ledger = log.open_ledger(net.validation_context(registry))?;
        let store = DirStore::open(&self.store)?;
        Ok(Node { net, log, solo: SoloNode::new(ledger), store })
    }
}

/// The local peer: chain log, world state and payload store.
pub struct Node {
    pub net: NetworkConfig,
    pub log: ChainLog,
    pub solo: SoloNode,
    pub store: DirStore,
}

impl Node {
    pub fn ledger(&self) -> &Ledger {
        self.solo.ledger()
    }

    pub fn registry(&self) -> &Registry {
        self.ledger().registry()
    }

    /// Mutations default to one tick past the tip, reads to the tip itself.
    pub fn write_time(&self, now: Option<u64>) -> u64 {
        now.unwrap_or(self.ledger().tip().timestamp + 1)
    }

    pub fn read_time(&self, now: Option<u64>) -> u64 {
        now.unwrap_or(self.ledger().tip().timestamp)
    }

    pub fn proposal_id(&self, now: u64) -> String {
        format!("cli:{}:{now}", self.ledger().height() + 1)
    }

    /// Principal for an actor id: the pseudonym for data subjects.
    pub fn principal(&self, actor_id: &str) -> String {
        match self.registry().get(actor_id) {
            Some(a) => self.registry().principal_of(a),
            None => actor_id.to_string(),
        }
    }

    /// Endorses, orders and commits one proposal, appending the block to the
    /// log. A transaction committed as invalid is reported as a failure.
    pub fn commit(&mut self, proposal: TxProposal, now: u64) -> Result<Committed, Failure> {
        let before = self.ledger().height();
        let result = self.solo.execute_one(proposal, now)?;
        if self.ledger().height() > before {
            self.log.append(self.ledger().tip())?;
        }
        let committed = result?;
        if committed.code != ValidationCode::Valid {
            return Err(Failure::new(
                committed.code.as_str(),
                format!("transaction {} committed as invalid", committed.tx_id),
            ));
        }
        Ok(committed)
    }

    /// A declaration argument is either a 64-hex hash or a `.lprose` file.
    pub fn declaration_ref(&self, arg: &str) -> Result<(Digest, Option<PurposeDeclaration>), Failure> {
        if let Ok(hash) = Digest::from_hex(arg) {
            return Ok((hash, declaration_on_chain(self.ledger(), &hash)));
        }
        let decl = PurposeDeclaration::parse(&read_text(Path::new(arg))?)?;
        Ok((decl.hash(), Some(decl)))
    }
}
