//! Deterministic simulated-time testbed for synchronous decentralized
//! federated learning over heterogeneous workers.
//!
//! The crate simulates N workers that train local models, gossip them over
//! a peer-to-peer topology and report timing and consensus statistics to a
//! metadata-only coordinator. Three round strategies run on the same
//! harness:
//!
//! * an adaptive strategy that jointly fits per-worker local updating
//!   frequencies and prunes slow links from the topology each round,
//! * fixed-frequency gossip SGD on a static ring,
//! * a schedule alternating local-update rounds with gossip-only rounds.
//!
//! Everything is driven by a virtual clock and a seeded PRNG, so a run is a
//! pure function of its configuration.

pub mod bound;
pub mod consensus;
pub mod control;
pub mod dataprep;
pub mod experiment;
pub mod graphtopo;
pub mod learncore;
pub mod numkit;
pub mod protocol;
pub mod simnet;
