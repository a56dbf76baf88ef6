//! Deterministic simulation and verification of synchronous consensus
//! protocols that tolerate both crash failures and strategic manipulation by
//! colluding rational agents.
//!
//! The crate provides:
//!
//! - three agent state machines (`new-epoch`, `new-epoch2`,
//!   `rand-new-epoch2`) built from message-status tracking, dictator-chain
//!   maintenance and replay-based consistency checking;
//! - a synchronous round engine with failure injection and scripted
//!   adversaries, producing byte-stable transcripts;
//! - verifiers for per-run consensus, deviation legality, manipulation
//!   benefit, bounded resilience sweeps and empirical dictatorship.
//!
//! The narrative guide lives in `book/`; its code snippets are compiled as
//! doc-tests through [`guide`].

pub mod adversary;
pub mod consistency;
pub mod dictator;
pub mod model;
pub mod msggraph;
pub mod protocols;
pub mod scenario;
pub mod simnet;
pub mod transcript;
pub mod verify;
pub mod wire;

mod guide;

pub use model::{
    AgentId, CrashSpec, Decision, FailurePattern, Granularity, MessageId, PatternSpace,
    PreferenceOrder, Round, TypeVector, Value,
};
pub use protocols::{AgentMachine, ProtocolParams, ProtocolVariant};
pub use simnet::{default_horizon, run, EngineConfig, RunResult};
pub use transcript::{RunTranscript, RunVerdict};
