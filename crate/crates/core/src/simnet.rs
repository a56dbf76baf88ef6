//! The synchronous round engine: enforces the round structure, applies the
//! failure pattern to in-flight messages, applies adversary edits, and
//! records the transcript.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::dictator::{Decided, DictatorEvent};
use crate::model::{AgentId, FailurePattern, MessageId, Round, TypeVector};
use crate::msggraph::Label;
use crate::protocols::{assemble, AgentMachine, ProtocolError, ProtocolVariant};
use crate::transcript::{AgentOutcome, RunStats, RunTranscript, RunVerdict};
use crate::wire::Payload;

/// Engine configuration. The horizon default `3 * declared_f + 6` is large
/// enough for every honest run (asserted empirically by the sweeps).
#[derive(Clone, Copy, Debug)]
pub struct EngineConfig {
    pub variant: ProtocolVariant,
    pub declared_f: usize,
    pub tag_bits: u8,
    pub seed: u64,
    pub horizon: Round,
    pub record_transcript: bool,
    pub capture_history: bool,
}

impl EngineConfig {
    pub fn new(variant: ProtocolVariant, declared_f: usize) -> Self {
        EngineConfig {
            variant,
            declared_f,
            tag_bits: 64,
            seed: 0,
            horizon: default_horizon(declared_f),
            record_transcript: false,
            capture_history: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_horizon(mut self, horizon: Round) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_tag_bits(mut self, bits: u8) -> Self {
        self.tag_bits = bits;
        self
    }

    pub fn recording(mut self) -> Self {
        self.record_transcript = true;
        self
    }

    pub fn capturing(mut self) -> Self {
        self.capture_history = true;
        self
    }
}

pub fn default_horizon(declared_f: usize) -> Round {
    3 * declared_f as Round + 6
}

/// Colluder observations shared over the private side channel (when the
/// model grants one): the raw deliveries of the round that just ended.
pub struct ChannelState {
    pub round: Round,
    pub receipts: BTreeMap<AgentId, Vec<(AgentId, Payload)>>,
}

/// Extension points a cheater plan implements. Hooks are invoked only for
/// colluders, which enforces that edits touch only colluders' outgoing
/// payloads and decisions; the alternating send/recv skeleton itself is
/// fixed by the engine.
pub trait AdversaryHooks {
    fn colluders(&self) -> &BTreeSet<AgentId>;
    fn private_channel(&self) -> bool {
        false
    }
    /// Rewrite a colluder's outgoing payload map for round `k`. Entries may
    /// be dropped, replaced, or added (including sends to agents outside the
    /// live set, which only other colluders will ever observe).
    fn modify_sends(
        &mut self,
        a: AgentId,
        k: Round,
        sends: &mut BTreeMap<AgentId, Payload>,
        view: &AgentMachine,
        chan: Option<&ChannelState>,
    );
    /// Rewrite a colluder's received payloads before they are processed:
    /// remove entries to pretend non-receipt, insert entries to fake one.
    fn modify_receipts(
        &mut self,
        a: AgentId,
        k: Round,
        rmsgs: &mut Vec<(AgentId, Payload)>,
        view: &AgentMachine,
        chan: Option<&ChannelState>,
    );
    /// An overriding decision for a colluder, evaluated after its round
    /// step. Must not be issued twice.
    fn decide(
        &mut self,
        a: AgentId,
        k: Round,
        view: &AgentMachine,
        chan: Option<&ChannelState>,
    ) -> Option<Decided>;
}

/// Per-round instrumentation record for the invariant suite.
#[derive(Clone, Debug)]
pub struct RoundRecord {
    pub round: Round,
    pub delivered: Vec<MessageId>,
    /// (agent, message, label) transitions this round.
    pub label_events: Vec<(AgentId, MessageId, Label)>,
    pub dict_events: Vec<(AgentId, DictatorEvent)>,
    /// Raw label arrays per agent after the round; `None` if not stepped.
    pub labels: Vec<Option<Vec<u8>>>,
    pub chains: Vec<Vec<AgentId>>,
    /// Agents whose receive step ran this round.
    pub stepped: Vec<bool>,
    /// Agents that voluntarily terminated this round.
    pub terminated_now: Vec<bool>,
}

#[derive(Clone, Debug, Default)]
pub struct RunHistory {
    pub rounds: Vec<RoundRecord>,
}

impl RunHistory {
    /// Round of the first voluntary termination, bounding the rounds for
    /// which the message-graph lemmas are stated.
    pub fn first_voluntary_termination(&self) -> Option<Round> {
        self.rounds
            .iter()
            .find(|r| r.terminated_now.iter().any(|t| *t))
            .map(|r| r.round)
    }
}

pub struct RunResult {
    pub transcript: RunTranscript,
    pub history: Option<RunHistory>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("horizon must be at least 1")]
    BadHorizon,
}

/// Validated, explicit message-edit request: the low-level contract behind
/// the adversary hooks.
#[derive(Clone, Debug)]
pub struct SendEdit {
    pub agent: AgentId,
    /// Receivers whose payloads are dropped (voluntary omission).
    pub drop_to: Vec<AgentId>,
    /// Extra or replacement payloads.
    pub add: Vec<(AgentId, Payload)>,
    /// Set by strategies that would need the round's incoming messages
    /// before sending; the round model forbids it.
    pub reads_same_round_receipts: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EditError {
    #[error("edit touches non-colluder {0}")]
    NotColluder(AgentId),
    #[error("edits may not read same-round incoming messages before sending")]
    SameRoundRead,
}

/// Applies a validated edit to an outgoing payload map. Cheater receive
/// sets are never edited here; real crashes still apply to added payloads.
pub fn inject(
    colluders: &BTreeSet<AgentId>,
    edit: &SendEdit,
    sends: &mut BTreeMap<AgentId, Payload>,
) -> Result<(), EditError> {
    if !colluders.contains(&edit.agent) {
        return Err(EditError::NotColluder(edit.agent));
    }
    if edit.reads_same_round_receipts {
        return Err(EditError::SameRoundRead);
    }
    for target in &edit.drop_to {
        sends.remove(target);
    }
    for (target, payload) in &edit.add {
        sends.insert(*target, payload.clone());
    }
    Ok(())
}

/// Runs one complete execution.
pub fn run(
    cfg: EngineConfig,
    types: &TypeVector,
    pattern: &FailurePattern,
    mut plan: Option<&mut dyn AdversaryHooks>,
) -> Result<RunResult, EngineError> {
    if cfg.horizon < 1 {
        return Err(EngineError::BadHorizon);
    }
    let n = types.n();
    let mut machines = assemble(
        cfg.variant,
        cfg.declared_f,
        types,
        cfg.tag_bits,
        cfg.seed,
        cfg.horizon,
    )?;
    let colluders: BTreeSet<AgentId> = plan
        .as_ref()
        .map(|p| p.colluders().clone())
        .unwrap_or_default();
    for c in &colluders {
        machines[c.index()].disable_checks();
    }

    let mut rounds_log: Vec<Vec<(MessageId, Vec<u8>)>> = Vec::new();
    let mut history = cfg.capture_history.then(RunHistory::default);
    let mut stats = RunStats::default();
    let mut terminate_round: Vec<Option<Round>> = vec![None; n];
    let mut punish_witness: Vec<Option<String>> = vec![None; n];
    let mut verdict = RunVerdict::Completed;

    let mut k: Round = 0;
    loop {
        let running = (0..n).any(|i| {
            !machines[i].terminated() && pattern.executes_round(AgentId::from_index(i), k + 1)
        });
        if !running {
            break;
        }
        if k == cfg.horizon {
            let undecided_live = (0..n).any(|i| {
                let a = AgentId::from_index(i);
                pattern.is_correct(a) && machines[i].decided().is_none()
            });
            if undecided_live {
                verdict = RunVerdict::HorizonExhausted;
            }
            break;
        }
        k += 1;

        // send phase
        let mut deliveries: Vec<Vec<(AgentId, Payload)>> = vec![Vec::new(); n];
        let mut round_log = Vec::new();
        for i in 0..n {
            let sender = AgentId::from_index(i);
            if machines[i].terminated() || !pattern.executes_round(sender, k) {
                continue;
            }
            let mut sends = machines[i].step_send(k)?;
            if colluders.contains(&sender) {
                if let Some(p) = plan.as_deref_mut() {
                    p.modify_sends(sender, k, &mut sends, &machines[i], None);
                }
            }
            for (target, payload) in sends {
                let m = MessageId::new(sender, target, k);
                if !pattern.is_delivered(m) {
                    continue;
                }
                if pattern.crash_round(target).is_some_and(|cr| cr <= k) {
                    continue;
                }
                if machines[target.index()].terminated() {
                    continue;
                }
                stats.delivered_messages += 1;
                stats.max_payload_bytes = stats.max_payload_bytes.max(payload.encoded_len());
                if cfg.record_transcript {
                    round_log.push((m, payload.encode()));
                }
                deliveries[target.index()].push((sender, payload));
            }
        }
        if cfg.record_transcript {
            round_log.sort_by_key(|(m, _)| (m.sender, m.receiver));
            rounds_log.push(round_log);
        }

        // colluders with a private channel see each other's raw deliveries
        // between the round's receive and the next round's send
        let channel = plan
            .as_ref()
            .filter(|p| p.private_channel())
            .map(|p| ChannelState {
                round: k,
                receipts: p
                    .colluders()
                    .iter()
                    .map(|c| (*c, deliveries[c.index()].clone()))
                    .collect(),
            });

        // receive phase
        let mut record = cfg.capture_history.then(|| RoundRecord {
            round: k,
            delivered: deliveries
                .iter()
                .enumerate()
                .flat_map(|(t, v)| {
                    v.iter()
                        .map(move |(s, _)| MessageId::new(*s, AgentId::from_index(t), k))
                })
                .collect(),
            label_events: Vec::new(),
            dict_events: Vec::new(),
            labels: vec![None; n],
            chains: vec![Vec::new(); n],
            stepped: vec![false; n],
            terminated_now: vec![false; n],
        });
        for i in 0..n {
            let agent = AgentId::from_index(i);
            if machines[i].terminated() || pattern.crash_round(agent).is_some_and(|cr| cr <= k) {
                continue;
            }
            let mut rmsgs = std::mem::take(&mut deliveries[i]);
            if colluders.contains(&agent) {
                if let Some(p) = plan.as_deref_mut() {
                    p.modify_receipts(agent, k, &mut rmsgs, &machines[i], channel.as_ref());
                }
            }
            let events = machines[i].step_recv(&rmsgs, k)?;
            if colluders.contains(&agent) && machines[i].decided().is_none() {
                if let Some(p) = plan.as_deref_mut() {
                    if let Some(d) = p.decide(agent, k, &machines[i], channel.as_ref()) {
                        machines[i].force_decide(d);
                    }
                }
            }
            if events.terminated {
                terminate_round[i] = Some(k);
            }
            if let Some(reason) = &events.punished {
                punish_witness[i] = Some(format!("{reason:?}"));
            }
            if let Some(rec) = record.as_mut() {
                rec.stepped[i] = true;
                rec.terminated_now[i] = events.terminated;
                rec.labels[i] = Some(machines[i].graph().labels_raw().to_vec());
                rec.chains[i] = machines[i].dictator_state().chain().to_vec();
                for (m, l) in &events.labels {
                    rec.label_events.push((agent, *m, *l));
                }
                for e in &events.dictator {
                    rec.dict_events.push((agent, e.clone()));
                }
            }
        }
        if let (Some(h), Some(rec)) = (history.as_mut(), record) {
            h.rounds.push(rec);
        }
    }
    stats.last_round = k;
    stats.last_decide_round = machines
        .iter()
        .filter_map(|m| m.decided().map(|d| d.round))
        .max()
        .unwrap_or(0);

    let outcomes = machines
        .iter()
        .map(|m| AgentOutcome {
            agent: m.id(),
            decision: decision_of(m),
            decide_round: m.decided().map(|d| d.round),
            terminate_round: terminate_round[m.id().index()],
            dictator_chain: m.dictator_state().chain().to_vec(),
            crashed: !pattern.is_correct(m.id()),
            punish_witness: punish_witness[m.id().index()].take(),
        })
        .collect();

    Ok(RunResult {
        transcript: RunTranscript {
            variant: cfg.variant,
            n,
            declared_f: cfg.declared_f,
            seed: cfg.seed,
            horizon: cfg.horizon,
            tag_bits: cfg.tag_bits,
            types: types.clone(),
            pattern: pattern.clone(),
            cheater_note: (!colluders.is_empty()).then(|| {
                colluders
                    .iter()
                    .map(|c| c.0.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            }),
            rounds: rounds_log,
            outcomes,
            verdict,
            stats,
        },
        history,
    })
}

fn decision_of(m: &AgentMachine) -> crate::model::Decision {
    m.decision()
}
