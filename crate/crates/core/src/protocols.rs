//! The agent state machines: message-graph exchange, dictator tracking and
//! consistency checking assembled into the three protocol variants.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::{self, ConsistencyState, PunishReason};
use crate::dictator::{
    self, Decided, DecidedKind, DictatorEvent, DictatorState, EpochContent, EpochRecord,
};
use crate::model::{AgentId, MessageId, Round, TypeVector, Value};
use crate::msggraph::{Label, LiveSet, MsgGraph};
use crate::wire::{value_bits, Part, Payload};

/// The three protocol variants.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum ProtocolVariant {
    /// Whole-value epoch announcements; crash-count checking deters
    /// pretend-crashes while fewer than `n - 1` failures are possible.
    NewEpoch,
    /// Announcements split over two rounds, closing the pretend-crash gap at
    /// `f = n - 1`.
    NewEpoch2,
    /// The split protocol plus per-message random tags and one leading
    /// exchange-only round, deterring faked receipts.
    RandNewEpoch2,
}

impl ProtocolVariant {
    pub fn split(self) -> bool {
        !matches!(self, ProtocolVariant::NewEpoch)
    }

    pub fn randomized(self) -> bool {
        matches!(self, ProtocolVariant::RandNewEpoch2)
    }

    pub fn name(self) -> &'static str {
        match self {
            ProtocolVariant::NewEpoch => "new-epoch",
            ProtocolVariant::NewEpoch2 => "new-epoch2",
            ProtocolVariant::RandNewEpoch2 => "rand-new-epoch2",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "new-epoch" => Some(ProtocolVariant::NewEpoch),
            "new-epoch2" => Some(ProtocolVariant::NewEpoch2),
            "rand-new-epoch2" => Some(ProtocolVariant::RandNewEpoch2),
            _ => None,
        }
    }
}

/// Static parameters of a protocol instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProtocolParams {
    pub variant: ProtocolVariant,
    pub n: usize,
    pub declared_f: usize,
    /// Size of the value domain; at least 3.
    pub domain: usize,
    /// Random-tag width in bits (randomized variant only).
    pub tag_bits: u8,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("at least 3 agents are required, got {0}")]
    TooFewAgents(usize),
    #[error("the value domain must have at least 3 values, got {0}")]
    DomainTooSmall(usize),
    #[error("declared_f = {declared_f} out of range for n = {n}")]
    BadDeclaredF { declared_f: usize, n: usize },
    #[error("send/recv invoked out of turn on agent {0}")]
    WellFormednessViolation(AgentId),
}

/// Everything observable that happened to one agent in one round, for
/// invariant instrumentation.
#[derive(Debug, Default)]
pub struct RoundEvents {
    pub labels: Vec<(MessageId, Label)>,
    pub dictator: Vec<DictatorEvent>,
    pub punished: Option<PunishReason>,
    pub terminated: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Phase {
    Send,
    Recv,
}

/// One agent's complete protocol state.
pub struct AgentMachine {
    id: AgentId,
    params: ProtocolParams,
    /// Own most preferred value; `None` only inside consistency replays
    /// when the replaying agent never learned this agent's proposal.
    value: Option<Value>,
    /// The announcement parts this agent would broadcast as dictator.
    content: EpochContent,
    round: Round,
    phase: Phase,
    graph: MsgGraph,
    live_prev: LiveSet,
    dict: DictatorState,
    epochs: BTreeMap<AgentId, EpochRecord>,
    mhist: Vec<Vec<Option<Payload>>>,
    terminated: bool,
    checks_enabled: bool,
    consistency: Option<Box<ConsistencyState>>,
    rng: Option<ChaCha12Rng>,
    horizon_cap: Round,
}

impl std::fmt::Debug for AgentMachine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentMachine")
            .field("id", &self.id)
            .field("round", &self.round)
            .field("dictator", &self.dict.dictator())
            .field("decided", &self.dict.decided())
            .field("terminated", &self.terminated)
            .finish_non_exhaustive()
    }
}

impl AgentMachine {
    /// A production machine for a real run.
    pub fn new(
        id: AgentId,
        params: ProtocolParams,
        value: Value,
        seed: u64,
        horizon_cap: Round,
    ) -> Self {
        let rng = params.variant.randomized().then(|| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(id.0 as u64);
            rng
        });
        let mut m = Self::bare(
            id,
            params,
            Some(value),
            EpochContent::from_value(value, params.domain),
            horizon_cap,
        );
        m.rng = rng;
        m.consistency = Some(Box::new(ConsistencyState::new()));
        m
    }

    /// A replay machine: no randomness, no nested consistency checking, and
    /// announcement contents restricted to what the replaying agent learned.
    pub fn replay(
        id: AgentId,
        params: ProtocolParams,
        value: Option<Value>,
        content: EpochContent,
        horizon_cap: Round,
    ) -> Self {
        let mut m = Self::bare(id, params, value, content, horizon_cap);
        m.checks_enabled = false;
        m
    }

    fn bare(
        id: AgentId,
        params: ProtocolParams,
        value: Option<Value>,
        content: EpochContent,
        horizon_cap: Round,
    ) -> Self {
        AgentMachine {
            id,
            params,
            value,
            content,
            round: 0,
            phase: Phase::Send,
            graph: MsgGraph::new(id, params.n, horizon_cap),
            live_prev: LiveSet::everyone(params.n, 0),
            dict: DictatorState::new(),
            epochs: BTreeMap::new(),
            mhist: Vec::new(),
            terminated: false,
            checks_enabled: true,
            consistency: None,
            rng: None,
            horizon_cap,
        }
    }

    pub fn id(&self) -> AgentId {
        self.id
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn value(&self) -> Option<Value> {
        self.value
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn graph(&self) -> &MsgGraph {
        &self.graph
    }

    pub fn live_prev(&self) -> &LiveSet {
        &self.live_prev
    }

    pub fn dictator_state(&self) -> &DictatorState {
        &self.dict
    }

    pub fn epochs(&self) -> &BTreeMap<AgentId, EpochRecord> {
        &self.epochs
    }

    pub fn mhist(&self) -> &[Vec<Option<Payload>>] {
        &self.mhist
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    pub fn decided(&self) -> Option<&Decided> {
        self.dict.decided()
    }

    /// Disables the consistency component (used for colluder machines, which
    /// never punish themselves).
    pub fn disable_checks(&mut self) {
        self.checks_enabled = false;
    }

    /// Records an externally scripted decision (adversary strategies).
    pub fn force_decide(&mut self, d: Decided) {
        self.dict.force_decide(d);
    }

    pub fn force_terminate(&mut self) {
        self.terminated = true;
    }

    /// Phase I of round `k`: the outgoing payload map, keyed by receiver.
    ///
    /// The graph snapshot goes to every member of the previous round's live
    /// set; the current dictator piggybacks its NEWEPOCH part; the randomized
    /// variant attaches a fresh tag per message.
    pub fn step_send(&mut self, k: Round) -> Result<BTreeMap<AgentId, Payload>, ProtocolError> {
        if self.terminated || self.phase != Phase::Send || self.round != k - 1 || k > self.horizon_cap
        {
            return Err(ProtocolError::WellFormednessViolation(self.id));
        }
        self.phase = Phase::Recv;
        let graph = Arc::new(self.graph.outgoing_view());
        let newepoch = if self.params.variant.randomized() && k == 1 {
            None
        } else {
            dictator::phase1_send(
                &mut self.dict,
                self.id,
                &self.content,
                self.params.variant.split(),
                self.params.domain,
                k,
            )
        };
        let mut out = BTreeMap::new();
        let targets: Vec<AgentId> = self
            .live_prev
            .members(self.params.n)
            .filter(|t| *t != self.id)
            .collect();
        for target in targets {
            let tag = self.fresh_tag(MessageId::new(self.id, target, k));
            out.insert(
                target,
                Payload {
                    graph: Arc::clone(&graph),
                    newepoch,
                    has_tag: self.params.variant.randomized(),
                    tag,
                },
            );
        }
        Ok(out)
    }

    fn fresh_tag(&mut self, m: MessageId) -> Option<u64> {
        if !self.params.variant.randomized() {
            return None;
        }
        let tag = self.rng.as_mut().map(|rng| {
            let mask = if self.params.tag_bits >= 64 {
                u64::MAX
            } else {
                (1u64 << self.params.tag_bits) - 1
            };
            rng.next_u64() & mask
        });
        self.graph.record_own_tag(m, tag);
        tag
    }

    /// Phase II of round `k`: ingest the delivered payloads, run the
    /// labeling closure, the dictator update and the consistency check.
    pub fn step_recv(
        &mut self,
        delivered: &[(AgentId, Payload)],
        k: Round,
    ) -> Result<RoundEvents, ProtocolError> {
        if self.terminated || self.phase != Phase::Recv || self.round != k - 1 {
            return Err(ProtocolError::WellFormednessViolation(self.id));
        }
        self.phase = Phase::Send;
        self.round = k;
        let mut events = RoundEvents::default();

        debug_assert_eq!(self.mhist.len(), k as usize - 1);
        let mut row = vec![None; self.params.n];
        for (s, p) in delivered {
            row[s.index()] = Some(p.clone());
        }
        self.mhist.push(row);

        for (s, p) in delivered {
            if let Some(ne) = &p.newepoch {
                let rec = self.epochs.entry(*s).or_default();
                let slot = match ne.part {
                    Part::Whole => &mut rec.whole,
                    Part::First => &mut rec.first,
                    Part::Second => &mut rec.second,
                };
                if slot.is_none() {
                    *slot = Some((k, ne.content));
                }
            }
        }

        let graphs: Vec<(AgentId, Arc<crate::wire::GraphWire>)> = delivered
            .iter()
            .map(|(s, p)| (*s, Arc::clone(&p.graph)))
            .collect();
        let closure = self.graph.apply_labeling_closure(&graphs, k);
        events.labels = closure.events;
        self.live_prev = closure.live.clone();

        let mut tag_conflicts = Vec::new();
        if self.params.variant.randomized() {
            let directs: Vec<(MessageId, Option<u64>)> = delivered
                .iter()
                .map(|(s, p)| (MessageId::new(*s, self.id, k), p.tag))
                .collect();
            tag_conflicts = self.graph.merge_tags(&directs, &graphs);
        }

        // an agent that decided last round sends one more round, then stops
        if self.dict.decide_round().is_some_and(|r| r == k - 1) {
            self.terminated = true;
            events.terminated = true;
            return Ok(events);
        }

        events.dictator = dictator::phase2_update(
            &mut self.dict,
            self.id,
            self.value,
            &self.graph,
            &closure.live,
            &self.epochs,
            self.params.variant.split(),
            self.params.domain,
            k,
        );

        if self.checks_enabled {
            let verdict = consistency::check_round(
                self.consistency.as_mut().expect("checker state"),
                consistency::CheckInputs {
                    me: self.id,
                    params: &self.params,
                    graph: &self.graph,
                    mhist: &self.mhist,
                    epochs: &self.epochs,
                    my_value: self.value,
                    horizon_cap: self.horizon_cap,
                    label_conflicts: &closure.conflicts,
                    tag_conflicts: &tag_conflicts,
                },
                k,
            );
            if let Some(reason) = verdict {
                // punishment displaces any decision taken earlier this round
                // and stops all components immediately
                self.dict.punish_overrides(k);
                events.punished = Some(reason);
                self.terminated = true;
                events.terminated = true;
            }
        }
        Ok(events)
    }

    /// The decision as recorded in transcripts. Panics if a replay-only
    /// wildcard value leaked into a real run.
    pub fn decision(&self) -> crate::model::Decision {
        match self.dict.decided() {
            None => crate::model::Decision::Undecided,
            Some(d) => match &d.kind {
                DecidedKind::Punish => crate::model::Decision::Punish,
                DecidedKind::Epoch { source, value } => crate::model::Decision::Value {
                    value: value.expect("decided value known in a real run"),
                    source: *source,
                },
            },
        }
    }
}

/// Builds `n` honest machines with per-agent independent PRNG substreams.
pub fn assemble(
    variant: ProtocolVariant,
    declared_f: usize,
    types: &TypeVector,
    tag_bits: u8,
    seed: u64,
    horizon_cap: Round,
) -> Result<Vec<AgentMachine>, ProtocolError> {
    let n = types.n();
    if n < 3 {
        return Err(ProtocolError::TooFewAgents(n));
    }
    let domain = types.domain_size();
    if domain < 3 {
        return Err(ProtocolError::DomainTooSmall(domain));
    }
    if declared_f > n - 1 {
        return Err(ProtocolError::BadDeclaredF { declared_f, n });
    }
    debug_assert!(value_bits(domain) >= 2);
    let params = ProtocolParams {
        variant,
        n,
        declared_f,
        domain,
        tag_bits,
    };
    Ok((1..=n as u8)
        .map(|i| {
            let id = AgentId(i);
            AgentMachine::new(id, params, types.top(id), seed, horizon_cap)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PreferenceOrder;

    fn types3() -> TypeVector {
        TypeVector::new(
            (0..3)
                .map(|i| PreferenceOrder::top_then_ascending(Value(i), 3))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn assemble_rejects_small_domains() {
        let types = TypeVector::new(
            (0..3)
                .map(|i| PreferenceOrder::top_then_ascending(Value(i % 2), 2))
                .collect(),
        )
        .unwrap();
        assert_eq!(
            assemble(ProtocolVariant::NewEpoch, 1, &types, 64, 0, 12).unwrap_err(),
            ProtocolError::DomainTooSmall(2)
        );
    }

    #[test]
    fn assemble_builds_fresh_machines() {
        let ms = assemble(ProtocolVariant::NewEpoch, 1, &types3(), 64, 7, 12).unwrap();
        assert_eq!(ms.len(), 3);
        assert!(ms.iter().all(|m| m.round() == 0 && !m.terminated()));
    }

    #[test]
    fn first_round_payloads() {
        let mut ms = assemble(ProtocolVariant::NewEpoch, 1, &types3(), 64, 0, 12).unwrap();
        // agent 1 is the initial dictator and announces immediately
        let out = ms[0].step_send(1).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.values().all(|p| p.newepoch.is_some() && !p.has_tag));
        // agent 2 sends only its (empty) graph
        let out = ms[1].step_send(1).unwrap();
        assert!(out.values().all(|p| p.newepoch.is_none()));
    }

    #[test]
    fn randomized_first_round_has_tags_but_no_epoch() {
        let mut ms = assemble(ProtocolVariant::RandNewEpoch2, 1, &types3(), 16, 3, 12).unwrap();
        let out = ms[0].step_send(1).unwrap();
        assert!(out.values().all(|p| p.newepoch.is_none() && p.has_tag));
        // tags are fresh per receiver and bounded by tag_bits
        let tags: Vec<u64> = out.values().map(|p| p.tag.unwrap()).collect();
        assert!(tags.iter().all(|t| *t < (1 << 16)));
    }

    #[test]
    fn out_of_turn_send_is_rejected() {
        let mut ms = assemble(ProtocolVariant::NewEpoch, 1, &types3(), 64, 0, 12).unwrap();
        ms[0].step_send(1).unwrap();
        assert_eq!(
            ms[0].step_send(2).unwrap_err(),
            ProtocolError::WellFormednessViolation(AgentId(1))
        );
    }

    #[test]
    fn terminated_machine_refuses_to_send() {
        let mut ms = assemble(ProtocolVariant::NewEpoch, 1, &types3(), 64, 0, 12).unwrap();
        ms[0].force_terminate();
        assert!(ms[0].step_send(1).is_err());
    }
}
