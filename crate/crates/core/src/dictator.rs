//! Dictator-chain maintenance and the decision rules: who currently speaks
//! for the system, when an agent may follow the announced value, and when
//! dictatorship passes to the lowest-id agent that provably missed a message.

use std::collections::BTreeMap;

use crate::model::{agents, AgentId, Round, Value};
use crate::msggraph::{Label, LiveSet, MsgGraph};
use crate::wire::{join_value, split_value, value_bits, NewEpochWire, Part};

/// What an agent has seen of one sender's NEWEPOCH broadcast.
#[derive(Clone, Debug, Default)]
pub struct EpochRecord {
    pub whole: Option<(Round, Option<u16>)>,
    pub first: Option<(Round, Option<u16>)>,
    pub second: Option<(Round, Option<u16>)>,
}

/// The announcement contents an agent would broadcast as dictator. Real
/// machines know every part of their own value; replay machines carry only
/// the parts the replaying agent actually received, and emit wildcards for
/// the rest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpochContent {
    pub whole: Option<u16>,
    pub first: Option<u16>,
    pub second: Option<u16>,
}

impl EpochContent {
    pub fn from_value(v: Value, domain: usize) -> Self {
        let (first, second) = split_value(v, domain);
        EpochContent {
            whole: Some(v.0 as u16),
            first: Some(first.1),
            second: Some(second.1),
        }
    }

    pub fn unknown() -> Self {
        EpochContent {
            whole: None,
            first: None,
            second: None,
        }
    }

    pub fn from_record(rec: &EpochRecord) -> Self {
        EpochContent {
            whole: rec.whole.and_then(|(_, c)| c),
            first: rec.first.and_then(|(_, c)| c),
            second: rec.second.and_then(|(_, c)| c),
        }
    }
}

/// A decision reached through the dictator component (or the punishment
/// path, recorded by the consistency component).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decided {
    pub round: Round,
    pub kind: DecidedKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecidedKind {
    /// The most preferred value of `source`. `value` is `None` only inside
    /// consistency replays, where the content never reached the replaying
    /// agent and is never compared.
    Epoch {
        source: AgentId,
        value: Option<Value>,
    },
    /// The out-of-domain punishment decision.
    Punish,
}

/// Instrumentation events for the invariant suite.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DictatorEvent {
    Changed {
        from: AgentId,
        to: AgentId,
        witness_round: Round,
        at_round: Round,
    },
    Decided {
        at_round: Round,
        source: AgentId,
    },
    /// The split decide condition passed but a value half was never
    /// recorded. Unreachable in honest runs (the receiver's own slot would
    /// be labeled not-sent); a manipulated run that provokes it is left to
    /// the consistency replay.
    MissingHalf {
        at_round: Round,
        epoch_sender: AgentId,
    },
}

/// Per-agent dictator bookkeeping.
#[derive(Clone, Debug)]
pub struct DictatorState {
    dictator: AgentId,
    chain: Vec<AgentId>,
    /// How many NEWEPOCH rounds this agent has completed as dictator
    /// (1 part for the whole-value protocol, 2 for the split variants).
    parts_sent: u8,
    first_epoch_round: Option<Round>,
    decided: Option<Decided>,
}

impl DictatorState {
    pub fn new() -> Self {
        DictatorState {
            dictator: AgentId(1),
            chain: vec![AgentId(1)],
            parts_sent: 0,
            first_epoch_round: None,
            decided: None,
        }
    }

    pub fn dictator(&self) -> AgentId {
        self.dictator
    }

    pub fn chain(&self) -> &[AgentId] {
        &self.chain
    }

    pub fn decided(&self) -> Option<&Decided> {
        self.decided.as_ref()
    }

    pub fn decide_round(&self) -> Option<Round> {
        self.decided.as_ref().map(|d| d.round)
    }

    pub fn force_decide(&mut self, d: Decided) {
        debug_assert!(self.decided.is_none(), "decision changed twice");
        self.decided = Some(d);
    }

    /// Replaces a tentative decision made earlier in the same round with the
    /// punishment decision. A round's output is emitted only after every
    /// component has run, so this is still a single change of the output
    /// register.
    pub fn punish_overrides(&mut self, round: Round) {
        debug_assert!(
            self.decided.as_ref().map_or(true, |d| d.round == round),
            "punishment may only displace a same-round decision"
        );
        self.decided = Some(Decided {
            round,
            kind: DecidedKind::Punish,
        });
    }
}

impl Default for DictatorState {
    fn default() -> Self {
        Self::new()
    }
}

/// Phase I: the NEWEPOCH part (if any) the agent broadcasts in round `k`.
///
/// Only the current dictator that has never decided emits anything; the
/// split variants emit the value halves in two consecutive rounds. `value`
/// is `None` in consistency replays when the replaying agent never learned
/// this agent's proposal.
pub fn phase1_send(
    st: &mut DictatorState,
    me: AgentId,
    content: &EpochContent,
    split: bool,
    domain: usize,
    k: Round,
) -> Option<NewEpochWire> {
    if st.dictator != me || st.decided.is_some() {
        return None;
    }
    let needed = if split { 2 } else { 1 };
    if st.parts_sent >= needed {
        return None;
    }
    if st.parts_sent == 0 {
        st.first_epoch_round = Some(k);
    }
    st.parts_sent += 1;
    let bits = value_bits(domain);
    let wire = if !split {
        NewEpochWire {
            part: Part::Whole,
            epoch_sender: me,
            bits,
            content: content.whole,
        }
    } else if st.parts_sent == 1 {
        NewEpochWire {
            part: Part::First,
            epoch_sender: me,
            bits: bits - bits / 2,
            content: content.first,
        }
    } else {
        NewEpochWire {
            part: Part::Second,
            epoch_sender: me,
            bits: bits / 2,
            content: content.second,
        }
    };
    Some(wire)
}

/// Phase II: runs the decision / dictator-change loop for round `k`, after
/// the labeling closure. Assumes the caller already handled termination of
/// agents that decided in round `k - 1`.
pub fn phase2_update(
    st: &mut DictatorState,
    me: AgentId,
    my_value: Option<Value>,
    graph: &MsgGraph,
    live: &LiveSet,
    epochs: &BTreeMap<AgentId, EpochRecord>,
    split: bool,
    domain: usize,
    k: Round,
) -> Vec<DictatorEvent> {
    let mut events = Vec::new();
    if st.decided.is_some() {
        return events;
    }
    let needed = if split { 2 } else { 1 };
    // the dictator itself decides once its announcement is complete
    if st.dictator == me && st.parts_sent == needed {
        st.decided = Some(Decided {
            round: k,
            kind: DecidedKind::Epoch {
                source: me,
                value: my_value,
            },
        });
        events.push(DictatorEvent::Decided {
            at_round: k,
            source: me,
        });
        return events;
    }
    loop {
        if st.dictator != me {
            match decide_on_epoch(st.dictator, graph, epochs, split, domain, k) {
                EpochCheck::Decide(value) => {
                    let source = st.dictator;
                    st.decided = Some(Decided {
                        round: k,
                        kind: DecidedKind::Epoch { source, value },
                    });
                    events.push(DictatorEvent::Decided {
                        at_round: k,
                        source,
                    });
                    return events;
                }
                EpochCheck::MissingHalf => {
                    events.push(DictatorEvent::MissingHalf {
                        at_round: k,
                        epoch_sender: st.dictator,
                    });
                }
                EpochCheck::No => {}
            }
        }
        if st.dictator != me && !live.contains(st.dictator) {
            if let Some((to, witness_round)) = next_dictator(st.dictator, graph) {
                events.push(DictatorEvent::Changed {
                    from: st.dictator,
                    to,
                    witness_round,
                    at_round: k,
                });
                st.dictator = to;
                st.chain.push(to);
                continue;
            }
        }
        return events;
    }
}

enum EpochCheck {
    Decide(Option<Value>),
    No,
    MissingHalf,
}

/// The follow-the-dictator decision path: fires iff the agent holds the
/// dictator's complete announcement from earlier rounds and every message of
/// the announcement round(s) is labeled sent or never-known.
///
/// Returns `Some(content)` when the decision fires; the content is `None`
/// only in replays (never compared there).
fn decide_on_epoch(
    d: AgentId,
    graph: &MsgGraph,
    epochs: &BTreeMap<AgentId, EpochRecord>,
    split: bool,
    domain: usize,
    k: Round,
) -> EpochCheck {
    let Some(rec) = epochs.get(&d) else {
        return EpochCheck::No;
    };
    if !split {
        if let Some((k1, content)) = rec.whole {
            if k1 < k && rows_clean(graph, d, &[k1]) {
                return EpochCheck::Decide(content.map(|c| Value(c as u8)));
            }
        }
        return EpochCheck::No;
    }
    let Some((k1, first)) = rec.first else {
        return EpochCheck::No;
    };
    if k1 >= k || !rows_clean(graph, d, &[k1, k1 + 1]) {
        return EpochCheck::No;
    }
    // With both rows clean the receiver's own slots are labeled sent, so
    // both halves were received in honest runs.
    match rec.second {
        Some((k2, second)) if k2 == k1 + 1 => match (first, second) {
            (Some(f), Some(s)) => EpochCheck::Decide(Some(join_value(f, s, domain))),
            _ => EpochCheck::Decide(None),
        },
        _ => EpochCheck::MissingHalf,
    }
}

fn rows_clean(graph: &MsgGraph, d: AgentId, rounds: &[Round]) -> bool {
    rounds.iter().all(|r| {
        agents(graph.n()).filter(|q| *q != d).all(|q| {
            matches!(
                graph.label(crate::model::MessageId::new(d, q, *r)),
                Label::Sent | Label::NeverKnown
            )
        })
    })
}

/// The dictator-change rule: find the earliest round `r` with a not-sent
/// message from the failed dictator; once rounds `r-1` and `r` are fully
/// resolved, the successor is the lowest-id agent that missed a round-`r`
/// message.
fn next_dictator(d: AgentId, graph: &MsgGraph) -> Option<(AgentId, Round)> {
    let r = graph.min_notsent_round(d)?;
    if r > 1 && !graph.row_fully_known(d, r - 1) {
        return None;
    }
    if !graph.row_fully_known(d, r) {
        return None;
    }
    let to = agents(graph.n())
        .find(|q| graph.label(crate::model::MessageId::new(d, *q, r)) == Label::NotSent)
        .expect("a not-sent witness exists at the minimum round");
    Some((to, r))
}
