//! Replay-based inconsistency detection: reconstruct the one failure
//! pattern an honest history could have come from, re-run the protocol under
//! it, and punish on any divergence from the real message history.

use std::collections::BTreeMap;

use crate::dictator::{EpochContent, EpochRecord};
use crate::model::{agents, AgentId, CrashSpec, FailurePattern, MessageId, Round, Value};
use crate::msggraph::{Label, LabelConflict, MsgGraph, TagConflict};
use crate::protocols::{AgentMachine, ProtocolParams};
use crate::wire::Payload;

/// Why an agent punished.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PunishReason {
    /// Two sources asserted incompatible delivery labels for one message.
    LabelConflict(MessageId),
    /// Two different random tags were reported for one message.
    TagConflict(MessageId),
    /// The not-sent labels do not describe any failure pattern.
    InvalidPattern(PatternInvalidity),
    /// The replay under the reconstructed pattern diverged from the real
    /// message history.
    HistoryMismatch {
        round: Round,
        sender: AgentId,
        expected: String,
        actual: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PatternInvalidity {
    /// A sender has a delivered message right after a missed one.
    NotAPattern { sender: AgentId, round: Round },
    /// More crashes than the declared bound.
    CrashOverflow { crashes: usize, declared_f: usize },
}

/// The verdict of one round's check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConsistencyVerdict {
    Ok,
    Punish(PunishReason),
}

/// Cross-round checker state: the cached replay, extended incrementally
/// while the reconstructed pattern and learned contents stay unchanged.
pub struct ConsistencyState {
    cache: Option<ReplayCache>,
    /// Set when a comparison had to wildcard a NEWEPOCH content the real
    /// history carried. Never expected in honest runs.
    pub content_wildcard_used: bool,
    /// Set when a tag value comparison was wildcarded.
    pub tag_wildcard_used: bool,
}

struct ReplayCache {
    f_prime: FailurePattern,
    contents_key: Vec<EpochContent>,
    machines: Vec<AgentMachine>,
    /// Simulated deliveries to the checking agent, per round and sender.
    sim_mhist: Vec<Vec<Option<Payload>>>,
    simulated_to: Round,
}

impl ConsistencyState {
    pub fn new() -> Self {
        ConsistencyState {
            cache: None,
            content_wildcard_used: false,
            tag_wildcard_used: false,
        }
    }
}

impl Default for ConsistencyState {
    fn default() -> Self {
        Self::new()
    }
}

/// Everything the round check reads from the agent.
pub struct CheckInputs<'a> {
    pub me: AgentId,
    pub params: &'a ProtocolParams,
    pub graph: &'a MsgGraph,
    pub mhist: &'a [Vec<Option<Payload>>],
    pub epochs: &'a BTreeMap<AgentId, EpochRecord>,
    pub my_value: Option<Value>,
    pub horizon_cap: Round,
    pub label_conflicts: &'a [LabelConflict],
    pub tag_conflicts: &'a [TagConflict],
}

/// Runs the end-of-round check; `Some(reason)` means: decide the punishment
/// value and stop.
pub fn check_round(
    state: &mut ConsistencyState,
    inputs: CheckInputs<'_>,
    k: Round,
) -> Option<PunishReason> {
    if let Some(c) = inputs.label_conflicts.first() {
        return Some(PunishReason::LabelConflict(c.0));
    }
    if let Some(c) = inputs.tag_conflicts.first() {
        return Some(PunishReason::TagConflict(c.0));
    }
    let f_prime = match reconstruct_pattern(inputs.graph, k, inputs.params.declared_f) {
        Ok(f) => f,
        Err(invalid) => return Some(PunishReason::InvalidPattern(invalid)),
    };
    replay_and_compare(state, &inputs, f_prime, k)
}

/// Builds the candidate failure pattern: a message is missing exactly when
/// it is labeled not-sent. Validity requires that a sender never delivers
/// after a miss and that the crash count stays within the declared bound.
pub fn reconstruct_pattern(
    graph: &MsgGraph,
    k: Round,
    declared_f: usize,
) -> Result<FailurePattern, PatternInvalidity> {
    let n = graph.n();
    for s in agents(n) {
        if let Some(r0) = graph.min_notsent_round(s) {
            for r in r0 + 1..=k {
                let miss_before = agents(n)
                    .filter(|q| *q != s)
                    .any(|q| graph.label(MessageId::new(s, q, r - 1)) == Label::NotSent);
                let delivered_now = agents(n)
                    .filter(|q| *q != s)
                    .any(|q| graph.label(MessageId::new(s, q, r)) != Label::NotSent);
                if miss_before && delivered_now {
                    return Err(PatternInvalidity::NotAPattern { sender: s, round: r });
                }
            }
        }
    }
    let crashes: Vec<AgentId> = graph.notsent_senders().collect();
    if crashes.len() > declared_f {
        return Err(PatternInvalidity::CrashOverflow {
            crashes: crashes.len(),
            declared_f,
        });
    }
    let mut raw = BTreeMap::new();
    for s in crashes {
        let r0 = graph.min_notsent_round(s).expect("crashing sender");
        let delivered: Vec<AgentId> = agents(n)
            .filter(|q| *q != s && graph.label(MessageId::new(s, *q, r0)) != Label::NotSent)
            .collect();
        raw.insert(
            s,
            CrashSpec {
                round: r0,
                delivered,
            },
        );
    }
    Ok(FailurePattern::canonicalize(n, raw.len().max(declared_f), raw)
        .expect("reconstructed pattern is canonical"))
}

fn replay_and_compare(
    state: &mut ConsistencyState,
    inputs: &CheckInputs<'_>,
    f_prime: FailurePattern,
    k: Round,
) -> Option<PunishReason> {
    let contents_key: Vec<EpochContent> = agents(inputs.params.n)
        .map(|j| {
            if j == inputs.me {
                inputs
                    .my_value
                    .map(|v| EpochContent::from_value(v, inputs.params.domain))
                    .unwrap_or_else(EpochContent::unknown)
            } else {
                inputs
                    .epochs
                    .get(&j)
                    .map(EpochContent::from_record)
                    .unwrap_or_else(EpochContent::unknown)
            }
        })
        .collect();

    let cache_valid = state.cache.as_ref().is_some_and(|c| {
        c.f_prime == f_prime && c.contents_key == contents_key && c.simulated_to < k
    });
    if !cache_valid {
        let machines: Vec<AgentMachine> = agents(inputs.params.n)
            .map(|j| {
                let value = if j == inputs.me { inputs.my_value } else { None };
                AgentMachine::replay(
                    j,
                    *inputs.params,
                    value,
                    contents_key[j.index()],
                    inputs.horizon_cap,
                )
            })
            .collect();
        state.cache = Some(ReplayCache {
            f_prime,
            contents_key,
            machines,
            sim_mhist: Vec::new(),
            simulated_to: 0,
        });
    }
    let ConsistencyState {
        cache,
        content_wildcard_used,
        tag_wildcard_used,
    } = state;
    let cache = cache.as_mut().expect("cache just ensured");
    while cache.simulated_to < k {
        let r = cache.simulated_to + 1;
        simulate_round(&mut cache.machines, &cache.f_prime, r, inputs.me, &mut cache.sim_mhist);
        cache.simulated_to = r;
    }

    // Compare the full prefix every round: growing tag knowledge can expose
    // a mismatch in an earlier round's payload.
    for r in 1..=k {
        let real_row = &inputs.mhist[r as usize - 1];
        let sim_row = &cache.sim_mhist[r as usize - 1];
        for j in agents(inputs.params.n) {
            if j == inputs.me {
                continue;
            }
            let real = real_row[j.index()].as_ref();
            let sim = sim_row[j.index()].as_ref();
            match (real, sim) {
                (None, None) => {}
                (Some(real), Some(sim)) => {
                    if let Some(reason) = compare_payload(
                        inputs,
                        real,
                        sim,
                        j,
                        r,
                        content_wildcard_used,
                        tag_wildcard_used,
                    ) {
                        return Some(reason);
                    }
                }
                _ => {
                    return Some(PunishReason::HistoryMismatch {
                        round: r,
                        sender: j,
                        expected: describe_presence(sim.is_some()),
                        actual: describe_presence(real.is_some()),
                    });
                }
            }
        }
    }
    None
}

/// One honest round under the candidate pattern, collecting deliveries to
/// the checking agent.
fn simulate_round(
    machines: &mut [AgentMachine],
    f: &FailurePattern,
    r: Round,
    me: AgentId,
    sim_mhist: &mut Vec<Vec<Option<Payload>>>,
) {
    let n = machines.len();
    let mut deliveries: Vec<Vec<(AgentId, Payload)>> = vec![Vec::new(); n];
    for i in 0..n {
        let sender = AgentId::from_index(i);
        if machines[i].terminated() || !f.executes_round(sender, r) {
            continue;
        }
        let sends = machines[i].step_send(r).expect("replay send in turn");
        for (target, payload) in sends {
            if !f.is_delivered(MessageId::new(sender, target, r)) {
                continue;
            }
            // a crashing agent receives nothing in its crash round
            if f.crash_round(target).is_some_and(|cr| cr <= r) {
                continue;
            }
            if machines[target.index()].terminated() {
                continue;
            }
            deliveries[target.index()].push((sender, payload));
        }
    }
    sim_mhist.push(vec![None; n]);
    for (i, delivered) in deliveries.into_iter().enumerate() {
        let receiver = AgentId::from_index(i);
        if receiver == me {
            let row = sim_mhist.last_mut().expect("row just pushed");
            for (s, p) in &delivered {
                row[s.index()] = Some(p.clone());
            }
        }
        if machines[i].terminated() || f.crash_round(receiver).is_some_and(|cr| cr <= r) {
            continue;
        }
        machines[i]
            .step_recv(&delivered, r)
            .expect("replay recv in turn");
    }
}

fn describe_presence(present: bool) -> String {
    if present { "message" } else { "no message" }.to_string()
}

#[allow(clippy::too_many_arguments)]
fn compare_payload(
    inputs: &CheckInputs<'_>,
    real: &Payload,
    sim: &Payload,
    sender: AgentId,
    round: Round,
    content_wildcard_used: &mut bool,
    tag_wildcard_used: &mut bool,
) -> Option<PunishReason> {
    let mismatch = |what: &str| {
        Some(PunishReason::HistoryMismatch {
            round,
            sender,
            expected: format!("{what}: {}", describe_sim(sim)),
            actual: real.digest(),
        })
    };
    if real.graph.labels != sim.graph.labels {
        return mismatch("graph labels");
    }
    // tag maps must carry the same message set; values compare against what
    // the checker knows, unknown values are wildcards
    if real.graph.tags.len() != sim.graph.tags.len() {
        return mismatch("tag set");
    }
    for ((ri, rv), (si, _)) in real.graph.tags.iter().zip(sim.graph.tags.iter()) {
        if ri != si {
            return mismatch("tag set");
        }
        let m = inputs.graph.message_of_idx(*ri);
        match inputs.graph.known_tag(m) {
            Some(Some(expected)) => {
                if *rv != Some(expected) {
                    return mismatch("tag value");
                }
            }
            _ => *tag_wildcard_used = true,
        }
    }
    match (&real.newepoch, &sim.newepoch) {
        (None, None) => {}
        (Some(re), Some(se)) => {
            if re.part != se.part || re.epoch_sender != se.epoch_sender || re.bits != se.bits {
                return mismatch("epoch announcement");
            }
            match se.content {
                Some(expected) => {
                    if re.content != Some(expected) {
                        return mismatch("epoch content");
                    }
                }
                None => *content_wildcard_used = true,
            }
        }
        _ => return mismatch("epoch presence"),
    }
    if real.has_tag != sim.has_tag {
        return mismatch("tag presence");
    }
    None
}

fn describe_sim(p: &Payload) -> String {
    format!(
        "{} labels, {} tags, epoch {:?}",
        p.graph.labels.len(),
        p.graph.tags.len(),
        p.newepoch.map(|ne| (ne.part, ne.epoch_sender))
    )
}
