pub mod consensus;
pub mod consent;
pub mod contracts;
pub mod digest;
pub mod identity;
pub mod ledger;
pub mod legalprose;
pub mod lines;
pub mod nodal;
pub mod pipeline;
