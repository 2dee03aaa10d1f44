//! Decentralized identity management for multi-stakeholder mobile networks.
//!
//! * [`identity`]: keys, DIDs and DID documents.
//! * [`registry`]: the governed, hash-chained verifiable data registry and
//!   its consensus model.
//! * [`agent`]: agents, wallets and mutually authenticated channels.
//! * [`credential`]: verifiable credentials and one-time presentations.
//! * [`scenario`]: trust domains, network entities and end-to-end flows.

pub mod agent;
pub mod codec;
pub mod credential;
pub mod identity;
pub mod registry;
pub mod scenario;
