//! The cheater-strategy framework and the built-in manipulations: generic
//! pretend-crash and fake-receipt strategies, the scripted counter-example
//! plans, the flood-min baseline cheats, and the private-channel cheat.
//!
//! Colluders share their private types when the plan is formed, but exchange
//! no runtime information unless the plan enables the private side channel.
//! Everything a strategy does is a deterministic function of the colluders'
//! own observable state (plus the channel, when present).

pub mod floodmin;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::dictator::{Decided, DecidedKind};
use crate::model::{
    agents, AgentId, CrashSpec, FailurePattern, MessageId, Round, TypeVector, Value,
};
use crate::msggraph::Label;
use crate::protocols::ProtocolVariant;
use crate::simnet::{AdversaryHooks, ChannelState};
use crate::wire::{split_value, GraphWire, NewEpochWire, Part, Payload};

/// Marker bit width for covert decision notes colluders exchange inside
/// payloads only other colluders ever see.
const NOTE_BITS: u8 = 0x7f;

/// A named deviation and its parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// The cheater stops sending to everyone from a trigger round on, while
    /// still listening; fellow colluders keep it supplied with covert state
    /// and the eventual decision.
    PretendCrash {
        cheater: AgentId,
        trigger: PretendTrigger,
    },
    /// On first miss of a message from `source`, the cheater pretends it
    /// arrived, reconstructing the sender's graph as well as it can.
    FakeReceipt { faker: AgentId, source: AgentId },
    /// The cheater omits one sent label it must carry (a label cheat that
    /// replay checking exposes).
    OmitSentLabel { cheater: AgentId },
    /// Flood-min baseline relay manipulation; only meaningful for the
    /// flood-min fixtures.
    DropRelay { value: Value },
    /// The scripted two-colluder plan against the whole-value protocol:
    /// a pretend-crash timed so the initial dictator's partial announcement
    /// round can never be resolved by the survivors.
    Ce1,
    /// The scripted three-colluder plan against the split protocol: fake
    /// the receipt of the dictator's second value half.
    Ce2,
    /// The scripted three-colluder plan against the randomized protocol
    /// under common knowledge of a smaller failure bound: pretend a crash
    /// after missing the dictator's second half.
    Ce3,
    /// With a private side channel, pretend non-receipt of a message the
    /// channel proves was the sender's last.
    PrivateChannelCheat { pretender: AgentId, partner: AgentId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PretendTrigger {
    AtRound(Round),
    /// Fire the round after the current dictator's message fails to arrive.
    OnMissedDictatorMessage,
}

/// A colluding group's deviation plan.
#[derive(Clone, Debug)]
pub struct CheaterPlan {
    pub colluders: BTreeSet<AgentId>,
    pub strategy: Strategy,
    /// Off by default; the impossibility demonstration turns it on. Plans
    /// with the channel are excluded from resilience claims.
    pub private_channel: bool,
    /// Common knowledge of a smaller failure bound: restricts the pattern
    /// sweeps the plan is judged against.
    pub effective_f: Option<usize>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("colluders must share one most preferred value")]
    DifferingTops,
    #[error("a plan needs at least one colluder")]
    NoColluders,
    #[error("colluders must leave at least one honest agent")]
    TooManyColluders,
    #[error("drop-relay only applies to the flood-min baseline")]
    FloodOnly,
    #[error("unknown fixture name {0:?}")]
    UnknownFixture(String),
}

impl CheaterPlan {
    pub fn new(colluders: impl IntoIterator<Item = AgentId>, strategy: Strategy) -> Self {
        CheaterPlan {
            colluders: colluders.into_iter().collect(),
            strategy,
            private_channel: false,
            effective_f: None,
        }
    }

    pub fn with_private_channel(mut self) -> Self {
        self.private_channel = true;
        self
    }

    pub fn with_effective_f(mut self, f: usize) -> Self {
        self.effective_f = Some(f);
        self
    }

    /// Checks the same-top-value constraint against a concrete type vector.
    pub fn check_tops(&self, types: &TypeVector) -> Result<(), PlanError> {
        let mut tops = self.colluders.iter().map(|c| types.top(*c));
        let Some(first) = tops.next() else {
            return Err(PlanError::NoColluders);
        };
        if tops.any(|t| t != first) {
            return Err(PlanError::DifferingTops);
        }
        Ok(())
    }

    /// Instantiates the runtime strategy for one run.
    pub fn compile(
        &self,
        variant: ProtocolVariant,
        types: &TypeVector,
        seed: u64,
    ) -> Result<CompiledPlan, PlanError> {
        self.check_tops(types)?;
        if self.colluders.len() >= types.n() {
            return Err(PlanError::TooManyColluders);
        }
        if matches!(self.strategy, Strategy::DropRelay { .. }) {
            return Err(PlanError::FloodOnly);
        }
        let shared_top = types.top(*self.colluders.first().expect("nonempty"));
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x636f_6c6c_7564_6572);
        rng.set_stream(0x7061);
        Ok(CompiledPlan {
            colluders: self.colluders.clone(),
            private_channel: self.private_channel,
            variant,
            domain: types.domain_size(),
            shared_top,
            rng,
            state: StrategyState::new(&self.strategy),
            runtime: PlanRuntime::default(),
        })
    }
}

#[derive(Debug)]
enum StrategyState {
    PretendCrash {
        cheater: AgentId,
        trigger: PretendTrigger,
        active_from: Option<Round>,
    },
    FakeReceipt {
        faker: AgentId,
        source: AgentId,
        fired: bool,
    },
    OmitSentLabel {
        cheater: AgentId,
        fired: bool,
    },
    Ce1 {
        mode: Ce1Mode,
    },
    Ce2 {
        fired: bool,
    },
    Ce3 {
        active_from: Option<Round>,
    },
    PrivateChannel {
        pretender: AgentId,
        partner: AgentId,
        fired: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ce1Mode {
    Honest,
    /// Triggered at the end of round 3; silent from round 4.
    Pretending,
    /// Saw both peers in round 4; decide from round 5 information.
    Waiting,
    Done,
}

impl StrategyState {
    fn new(s: &Strategy) -> StrategyState {
        match s {
            Strategy::PretendCrash { cheater, trigger } => StrategyState::PretendCrash {
                cheater: *cheater,
                trigger: *trigger,
                active_from: None,
            },
            Strategy::FakeReceipt { faker, source } => StrategyState::FakeReceipt {
                faker: *faker,
                source: *source,
                fired: false,
            },
            Strategy::OmitSentLabel { cheater } => StrategyState::OmitSentLabel {
                cheater: *cheater,
                fired: false,
            },
            Strategy::Ce1 => StrategyState::Ce1 {
                mode: Ce1Mode::Honest,
            },
            Strategy::Ce2 => StrategyState::Ce2 { fired: false },
            Strategy::Ce3 => StrategyState::Ce3 { active_from: None },
            Strategy::PrivateChannelCheat { pretender, partner } => {
                StrategyState::PrivateChannel {
                    pretender: *pretender,
                    partner: *partner,
                    fired: false,
                }
            }
            Strategy::DropRelay { .. } => unreachable!("flood-only strategy"),
        }
    }
}

/// Cross-round plan memory shared by the strategies.
#[derive(Debug, Default)]
struct PlanRuntime {
    /// Colluder -> first round it stopped sending.
    silent_from: BTreeMap<AgentId, Round>,
    /// Colluder -> first covert decision note it received.
    notes: BTreeMap<AgentId, (Value, AgentId)>,
    /// Intercepted colluder-to-colluder payloads: (round, from, to, payload).
    covert: Vec<(Round, AgentId, AgentId, Payload)>,
}

/// A plan instantiated for one run.
pub struct CompiledPlan {
    colluders: BTreeSet<AgentId>,
    private_channel: bool,
    variant: ProtocolVariant,
    domain: usize,
    /// The colluders' shared most preferred value (plan-time knowledge).
    shared_top: Value,
    rng: ChaCha12Rng,
    state: StrategyState,
    runtime: PlanRuntime,
}

impl CompiledPlan {
    fn is_silent(&self, a: AgentId, k: Round) -> bool {
        self.runtime.silent_from.get(&a).is_some_and(|r| k >= *r)
    }

    fn sustain_enabled(&self) -> bool {
        matches!(
            self.state,
            StrategyState::PretendCrash { .. }
                | StrategyState::FakeReceipt { .. }
                | StrategyState::Ce1 { .. }
                | StrategyState::Ce3 { .. }
        )
    }

    /// The covert payload a colluder keeps supplying to fellow colluders the
    /// live-set rule would cut off: its current graph plus, once decided,
    /// the decision as a marked note.
    fn covert_payload(&self, view: &crate::protocols::AgentMachine) -> Payload {
        let note = view.decided().and_then(|d| match &d.kind {
            DecidedKind::Epoch {
                source,
                value: Some(v),
            } => Some(NewEpochWire {
                part: Part::Whole,
                epoch_sender: *source,
                bits: NOTE_BITS,
                content: Some(v.0 as u16),
            }),
            _ => None,
        });
        Payload {
            graph: Arc::new(view.graph().outgoing_view()),
            newepoch: note,
            has_tag: self.variant.randomized(),
            tag: self.variant.randomized().then_some(0),
        }
    }

    fn note_of(p: &Payload) -> Option<(Value, AgentId)> {
        p.newepoch
            .filter(|ne| ne.bits == NOTE_BITS)
            .and_then(|ne| ne.content.map(|c| (Value(c as u8), ne.epoch_sender)))
    }
}

impl AdversaryHooks for CompiledPlan {
    fn colluders(&self) -> &BTreeSet<AgentId> {
        &self.colluders
    }

    fn private_channel(&self) -> bool {
        self.private_channel
    }

    fn modify_sends(
        &mut self,
        a: AgentId,
        k: Round,
        sends: &mut BTreeMap<AgentId, Payload>,
        view: &crate::protocols::AgentMachine,
        _chan: Option<&ChannelState>,
    ) {
        match &mut self.state {
            StrategyState::PretendCrash {
                cheater,
                trigger,
                active_from,
            } => {
                if a == *cheater {
                    if let PretendTrigger::AtRound(r) = trigger {
                        if k >= *r && active_from.is_none() {
                            *active_from = Some(*r);
                        }
                    }
                    if active_from.is_some_and(|r| k >= r) {
                        self.runtime.silent_from.entry(a).or_insert(k);
                    }
                }
            }
            StrategyState::OmitSentLabel { cheater, fired } => {
                if a == *cheater && k == 2 && !*fired {
                    *fired = true;
                    // omit the sent label of a message received last round;
                    // every receiver's replay still expects it
                    let mut graph = view.graph().outgoing_view();
                    if let Some(pos) = graph.labels.iter().position(|(idx, l)| {
                        *l == Label::Sent as u8
                            && view.graph().message_of_idx(*idx).receiver == a
                            && view.graph().message_of_idx(*idx).round == 1
                    }) {
                        graph.labels.remove(pos);
                    }
                    let shared = Arc::new(graph);
                    for payload in sends.values_mut() {
                        payload.graph = Arc::clone(&shared);
                    }
                }
            }
            StrategyState::Ce1 { mode } => {
                if a == AgentId(5) && !matches!(mode, Ce1Mode::Honest) {
                    self.runtime.silent_from.entry(a).or_insert(k);
                }
            }
            StrategyState::Ce3 { active_from } => {
                if a == AgentId(2) && active_from.is_some_and(|r| k >= r) {
                    self.runtime.silent_from.entry(a).or_insert(k);
                }
            }
            _ => {}
        }
        // a pretend-crash is permanent: once silent, silent for good
        if self.is_silent(a, k) {
            sends.clear();
            return;
        }
        // colluders keep each other informed past the live-set rule
        if self.sustain_enabled() {
            let covert = self.covert_payload(view);
            for b in self.colluders.clone() {
                if b != a && !sends.contains_key(&b) {
                    sends.insert(b, covert.clone());
                }
            }
        }
    }

    fn modify_receipts(
        &mut self,
        a: AgentId,
        k: Round,
        rmsgs: &mut Vec<(AgentId, Payload)>,
        view: &crate::protocols::AgentMachine,
        chan: Option<&ChannelState>,
    ) {
        // intercept covert traffic before the machine sees it
        let mut i = 0;
        while i < rmsgs.len() {
            let (s, p) = &rmsgs[i];
            if self.colluders.contains(s) {
                if let Some(note) = Self::note_of(p) {
                    self.runtime.notes.entry(a).or_insert(note);
                    self.runtime.covert.push((k, *s, a, p.clone()));
                    rmsgs.remove(i);
                    continue;
                }
                if self.is_silent(a, k) {
                    // a pretender consumes colluder payloads covertly,
                    // keeping its machine state crash-faithful
                    self.runtime.covert.push((k, *s, a, p.clone()));
                    rmsgs.remove(i);
                    continue;
                }
            }
            i += 1;
        }
        match &mut self.state {
            StrategyState::PretendCrash {
                cheater,
                trigger: PretendTrigger::OnMissedDictatorMessage,
                active_from,
            } => {
                if a == *cheater && active_from.is_none() {
                    let d = view.dictator_state().dictator();
                    if d != a && !rmsgs.iter().any(|(s, _)| *s == d) {
                        *active_from = Some(k + 1);
                    }
                }
            }
            StrategyState::FakeReceipt {
                faker,
                source,
                fired,
            } => {
                if a == *faker && !*fired && k >= 2 {
                    let missing = !rmsgs.iter().any(|(s, _)| *s == *source);
                    let seen_before = view
                        .mhist()
                        .last()
                        .is_some_and(|row| row[source.index()].is_some());
                    if missing && seen_before {
                        *fired = true;
                        let payload = naive_fake_payload(view, *source, k, self.variant);
                        insert_sorted(rmsgs, *source, payload);
                    }
                }
            }
            StrategyState::Ce2 { fired } => {
                if a == AgentId(2) && !*fired && self.variant.split() {
                    if let Some(payload) = ce2_forged_payload(
                        view,
                        &self.colluders,
                        self.shared_top,
                        self.domain,
                        self.variant,
                        rmsgs,
                        k,
                        &mut self.rng,
                    ) {
                        *fired = true;
                        let d = view.dictator_state().dictator();
                        insert_sorted(rmsgs, d, payload);
                    }
                }
            }
            StrategyState::Ce3 { active_from } => {
                if a == AgentId(2) && active_from.is_none() {
                    let d = view.dictator_state().dictator();
                    let first_half_last_round = view
                        .epochs()
                        .get(&d)
                        .and_then(|r| r.first)
                        .is_some_and(|(r, _)| r == k - 1);
                    let missing_now = !rmsgs.iter().any(|(s, _)| *s == d);
                    if d != a && first_half_last_round && missing_now {
                        *active_from = Some(k + 1);
                    }
                }
            }
            StrategyState::PrivateChannel {
                pretender,
                partner,
                fired,
            } => {
                if a == *pretender && !*fired {
                    if let Some(chan) = chan {
                        let d = view.dictator_state().dictator();
                        let mine = rmsgs.iter().position(|(s, p)| {
                            *s == d
                                && p.newepoch
                                    .is_some_and(|ne| matches!(ne.part, Part::Whole | Part::First))
                        });
                        let partner_missed = chan
                            .receipts
                            .get(partner)
                            .is_some_and(|r| !r.iter().any(|(s, _)| *s == d));
                        if let (Some(pos), true) = (mine, partner_missed) {
                            // the channel proves the sender crashed this
                            // round, so the pretense can never be exposed
                            *fired = true;
                            rmsgs.remove(pos);
                        }
                    }
                }
            }
            _ => {}
        }
    }

    fn decide(
        &mut self,
        a: AgentId,
        k: Round,
        view: &crate::protocols::AgentMachine,
        _chan: Option<&ChannelState>,
    ) -> Option<Decided> {
        // scripted counter-example decisions take precedence over notes
        if let StrategyState::Ce1 { mode } = &mut self.state {
            if a == AgentId(5) {
                match *mode {
                    Ce1Mode::Honest => {
                        if k == 3 && ce1_trigger(view) {
                            *mode = Ce1Mode::Pretending;
                        }
                    }
                    Ce1Mode::Pretending if k == 4 => {
                        let p3 = view.mhist()[3][AgentId(3).index()].as_ref();
                        let p4 = view.mhist()[3][AgentId(4).index()].as_ref();
                        let m433 = view.graph().idx(MessageId::new(AgentId(4), AgentId(3), 3));
                        match (p3, p4) {
                            (Some(p3), _)
                                if graph_label(&p3.graph, m433)
                                    == Some(Label::NotSent as u8) =>
                            {
                                *mode = Ce1Mode::Done;
                                return decide_from_epoch(view, AgentId(1), self.domain, k);
                            }
                            (Some(_), None) => {
                                *mode = Ce1Mode::Done;
                                return decide_from_epoch(view, AgentId(3), self.domain, k);
                            }
                            (Some(_), Some(_)) | (None, Some(_)) => *mode = Ce1Mode::Waiting,
                            (None, None) => {
                                // nobody relevant is left alive; settle on
                                // the initial announcement
                                *mode = Ce1Mode::Done;
                                return decide_from_epoch(view, AgentId(1), self.domain, k);
                            }
                        }
                    }
                    Ce1Mode::Waiting if k == 5 => {
                        *mode = Ce1Mode::Done;
                        let m344 = view.graph().idx(MessageId::new(AgentId(3), AgentId(4), 4));
                        let p4_says_missed = self
                            .runtime
                            .covert
                            .iter()
                            .filter(|(r, from, to, _)| {
                                *r == 5 && *from == AgentId(4) && *to == AgentId(5)
                            })
                            .any(|(_, _, _, p)| {
                                graph_label(&p.graph, m344) == Some(Label::NotSent as u8)
                            });
                        if p4_says_missed {
                            return Some(Decided {
                                round: k,
                                kind: DecidedKind::Epoch {
                                    source: AgentId(4),
                                    value: Some(self.shared_top),
                                },
                            });
                        }
                        return decide_from_epoch(view, AgentId(3), self.domain, k);
                    }
                    _ => {}
                }
            }
        }
        // a covert note carries the decision a cut-off colluder copies
        if let Some((value, source)) = self.runtime.notes.get(&a).copied() {
            if view.decided().is_none() {
                return Some(Decided {
                    round: k,
                    kind: DecidedKind::Epoch {
                        source,
                        value: Some(value),
                    },
                });
            }
        }
        None
    }
}

fn graph_label(g: &GraphWire, idx: u16) -> Option<u8> {
    g.labels
        .binary_search_by_key(&idx, |(i, _)| *i)
        .ok()
        .map(|pos| g.labels[pos].1)
}

fn insert_sorted(rmsgs: &mut Vec<(AgentId, Payload)>, sender: AgentId, payload: Payload) {
    let pos = rmsgs.partition_point(|(s, _)| *s < sender);
    rmsgs.insert(pos, (sender, payload));
}

/// The scripted trigger: the cheater learned this round, through its fellow
/// colluder's relay, that the initial announcement missed someone, while the
/// one honest witness still held the message uncertain.
fn ce1_trigger(view: &crate::protocols::AgentMachine) -> bool {
    let m121 = MessageId::new(AgentId(1), AgentId(2), 1);
    if view.graph().label(m121) != Label::NotSent {
        return false;
    }
    if !view.epochs().contains_key(&AgentId(1)) {
        return false;
    }
    let idx = view.graph().idx(m121);
    let row = &view.mhist()[2];
    let from_p4 = row[AgentId(4).index()]
        .as_ref()
        .is_some_and(|p| graph_label(&p.graph, idx) == Some(Label::NotSent as u8));
    let p3_uncertain = row[AgentId(3).index()]
        .as_ref()
        .is_some_and(|p| graph_label(&p.graph, idx).is_none());
    from_p4 && p3_uncertain
}

fn decide_from_epoch(
    view: &crate::protocols::AgentMachine,
    source: AgentId,
    domain: usize,
    k: Round,
) -> Option<Decided> {
    let rec = view.epochs().get(&source)?;
    let value = if view.params().variant.split() {
        let first = rec.first.and_then(|(_, c)| c)?;
        let second = rec.second.and_then(|(_, c)| c)?;
        crate::wire::join_value(first, second, domain)
    } else {
        Value(rec.whole.and_then(|(_, c)| c)? as u8)
    };
    Some(Decided {
        round: k,
        kind: DecidedKind::Epoch {
            source,
            value: Some(value),
        },
    })
}

/// Best-effort reconstruction of a missed payload: the source's own rows
/// claimed sent, everything else copied from the faker's knowledge. Usually
/// exposed by the receivers' replays, which is the point of keeping it in
/// the catalog.
fn naive_fake_payload(
    view: &crate::protocols::AgentMachine,
    source: AgentId,
    k: Round,
    variant: ProtocolVariant,
) -> Payload {
    let n = view.params().n;
    let mut graph = GraphWire::default();
    let own = view.graph();
    for r in 1..=k - 1 {
        for s in agents(n) {
            for q in agents(n) {
                if s == q {
                    continue;
                }
                let m = MessageId::new(s, q, r);
                let label = if s == source {
                    Label::Sent
                } else if r <= k.saturating_sub(2) {
                    own.label(m)
                } else {
                    Label::Uncertain
                };
                if label != Label::Uncertain {
                    graph.labels.push((own.idx(m), label as u8));
                }
            }
        }
    }
    graph.labels.sort_by_key(|(i, _)| *i);
    Payload {
        graph: Arc::new(graph),
        newepoch: None,
        has_tag: variant.randomized(),
        tag: variant.randomized().then_some(0),
    }
}

/// The forged second-half receipt: fires only when the cheater can
/// reconstruct the dictator's graph provably byte-for-byte (no crash
/// evidence anywhere through the previous round and full attendance now),
/// and only when the dictator is a fellow colluder whose value it knows.
#[allow(clippy::too_many_arguments)]
fn ce2_forged_payload(
    view: &crate::protocols::AgentMachine,
    colluders: &BTreeSet<AgentId>,
    shared_top: Value,
    domain: usize,
    variant: ProtocolVariant,
    rmsgs: &[(AgentId, Payload)],
    k: Round,
    rng: &mut ChaCha12Rng,
) -> Option<Payload> {
    let me = AgentId(2);
    let n = view.params().n;
    let d = view.dictator_state().dictator();
    if d == me || !colluders.contains(&d) {
        return None;
    }
    let first_half_last_round = view
        .epochs()
        .get(&d)
        .and_then(|r| r.first)
        .is_some_and(|(r, _)| r == k - 1);
    if !first_half_last_round || rmsgs.iter().any(|(s, _)| *s == d) {
        return None;
    }
    // full attendance by everyone else
    for x in agents(n) {
        if x == me || x == d {
            continue;
        }
        if !rmsgs.iter().any(|(s, _)| *s == x) {
            return None;
        }
    }
    // no crash evidence anywhere up to the previous round
    if agents(n).any(|s| view.graph().min_notsent_round(s).is_some()) {
        return None;
    }
    for (_, p) in rmsgs {
        for (idx, label) in &p.graph.labels {
            let m = view.graph().message_of_idx(*idx);
            if *label == Label::NotSent as u8 && m.round <= k - 1 {
                return None;
            }
        }
    }

    // the dictator's end-of-(k-1) graph: all earlier rounds fully delivered,
    // the last round known only through its own sends and receipts
    let mut graph = GraphWire::default();
    for r in 1..=k - 1 {
        for s in agents(n) {
            for q in agents(n) {
                if s == q {
                    continue;
                }
                if r < k - 1 || s == d || q == d {
                    graph
                        .labels
                        .push((view.graph().idx(MessageId::new(s, q, r)), Label::Sent as u8));
                }
            }
        }
    }
    graph.labels.sort_by_key(|(i, _)| *i);
    if variant.randomized() {
        // tags the dictator would relay: everything of earlier rounds from
        // other senders, plus its own direct receipts of the last round
        for r in 1..=k - 1 {
            for s in agents(n) {
                if s == d {
                    continue;
                }
                for q in agents(n) {
                    if q == s {
                        continue;
                    }
                    if r == k - 1 && q != d {
                        continue;
                    }
                    let m = MessageId::new(s, q, r);
                    let value = match view.graph().known_tag(m) {
                        Some(Some(v)) => v,
                        // the dictator's private receipts: guess
                        _ => rng.next_u64() & mask(view.params().tag_bits),
                    };
                    graph.tags.push((view.graph().idx(m), Some(value)));
                }
            }
        }
        graph.tags.sort_by_key(|(i, _)| *i);
    }
    let (_, second) = split_value(shared_top, domain);
    Some(Payload {
        graph: Arc::new(graph),
        newepoch: Some(NewEpochWire {
            part: Part::Second,
            epoch_sender: d,
            bits: second.0,
            content: Some(second.1),
        }),
        has_tag: variant.randomized(),
        tag: variant
            .randomized()
            .then(|| rng.next_u64() & mask(view.params().tag_bits)),
    })
}

fn mask(bits: u8) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// Built-in fixture names.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FixtureName {
    Fig1a,
    Fig1b,
    Fig1c,
    Fig1d,
    Ce1,
    Ce2,
    Ce3,
    ImpDemo,
}

impl FixtureName {
    pub const ALL: [FixtureName; 8] = [
        FixtureName::Fig1a,
        FixtureName::Fig1b,
        FixtureName::Fig1c,
        FixtureName::Fig1d,
        FixtureName::Ce1,
        FixtureName::Ce2,
        FixtureName::Ce3,
        FixtureName::ImpDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FixtureName::Fig1a => "fig1a",
            FixtureName::Fig1b => "fig1b",
            FixtureName::Fig1c => "fig1c",
            FixtureName::Fig1d => "fig1d",
            FixtureName::Ce1 => "ce1",
            FixtureName::Ce2 => "ce2",
            FixtureName::Ce3 => "ce3",
            FixtureName::ImpDemo => "impdemo",
        }
    }

    pub fn from_name(s: &str) -> Result<Self, PlanError> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| PlanError::UnknownFixture(s.to_string()))
    }
}

/// A fully pinned scenario: either a flood-min baseline case or an engine
/// scenario with its cheater plan.
#[derive(Clone, Debug)]
pub enum Fixture {
    Flood(FloodFixture),
    Engine(EngineFixture),
}

#[derive(Clone, Debug)]
pub struct FloodFixture {
    pub name: FixtureName,
    pub types: TypeVector,
    pub pattern: FailurePattern,
    pub cheat: floodmin::FloodCheat,
    pub description: &'static str,
}

#[derive(Clone, Debug)]
pub struct EngineFixture {
    pub name: FixtureName,
    pub variant: ProtocolVariant,
    pub declared_f: usize,
    pub tag_bits: u8,
    pub types: TypeVector,
    pub pattern: FailurePattern,
    pub plan: CheaterPlan,
    pub description: &'static str,
    /// Patterns worth probing first when searching for a benefit witness.
    pub benefit_patterns: Vec<FailurePattern>,
}

impl EngineFixture {
    pub fn n(&self) -> usize {
        self.types.n()
    }

    /// The same scenario on a different protocol variant. Crash rounds move
    /// with the variant's announcement calendar (one later on the randomized
    /// protocol, one earlier when leaving it).
    pub fn with_variant(&self, variant: ProtocolVariant) -> EngineFixture {
        let mut fx = self.clone();
        if variant == fx.variant {
            return fx;
        }
        let shift: i32 = match (self.variant.randomized(), variant.randomized()) {
            (false, true) => 1,
            (true, false) => -1,
            _ => 0,
        };
        fx.variant = variant;
        if shift != 0 {
            fx.pattern = shift_pattern(&fx.pattern, shift);
            fx.benefit_patterns = fx
                .benefit_patterns
                .iter()
                .map(|p| shift_pattern(p, shift))
                .collect();
        }
        fx
    }
}

fn shift_pattern(p: &FailurePattern, shift: i32) -> FailurePattern {
    let raw: BTreeMap<AgentId, CrashSpec> = p
        .crashes()
        .iter()
        .map(|(a, c)| {
            (
                *a,
                CrashSpec {
                    round: (c.round as i32 + shift).max(1) as Round,
                    delivered: c.delivered.clone(),
                },
            )
        })
        .collect();
    FailurePattern::canonicalize(p.n(), p.declared_f(), raw).expect("shifted pattern valid")
}

fn pat(n: usize, f: usize, specs: &[(u8, Round, &[u8])]) -> FailurePattern {
    let raw: BTreeMap<AgentId, CrashSpec> = specs
        .iter()
        .map(|(a, r, d)| {
            (
                AgentId(*a),
                CrashSpec {
                    round: *r,
                    delivered: d.iter().map(|x| AgentId(*x)).collect(),
                },
            )
        })
        .collect();
    FailurePattern::canonicalize(n, f, raw).expect("fixture pattern valid")
}

fn tops(t: &[u8], domain: usize) -> TypeVector {
    TypeVector::from_tops(&t.iter().map(|x| Value(*x)).collect::<Vec<_>>(), domain)
}

/// Returns the fully pinned built-in scenario for `name`.
pub fn ce_fixture(name: FixtureName) -> Fixture {
    match name {
        FixtureName::Fig1a => Fixture::Flood(FloodFixture {
            name,
            types: tops(&[0, 1, 2], 3),
            pattern: pat(3, 2, &[(1, 1, &[2])]),
            cheat: floodmin::FloodCheat::DropRelay { value: Value(0) },
            description: "relay drop succeeds: consensus intact, cheater better off",
        }),
        FixtureName::Fig1b => Fixture::Flood(FloodFixture {
            name,
            types: tops(&[0, 1, 2], 3),
            pattern: pat(3, 2, &[(1, 2, &[2])]),
            cheat: floodmin::FloodCheat::SymmetricDropRelay { value: Value(0) },
            description: "independent relay drops collide: uniform agreement violated",
        }),
        FixtureName::Fig1c => Fixture::Flood(FloodFixture {
            name,
            types: tops(&[0, 1, 2], 3),
            pattern: pat(3, 2, &[(1, 2, &[3])]),
            cheat: floodmin::FloodCheat::DropRelay { value: Value(0) },
            description: "relay drop detected: the sender was provably alive",
        }),
        FixtureName::Fig1d => Fixture::Flood(FloodFixture {
            name,
            types: tops(&[0, 1, 2], 3),
            pattern: pat(3, 2, &[(1, 1, &[2])]),
            cheat: floodmin::FloodCheat::PretendCrash,
            description: "pretend-crash succeeds and is indistinguishable from a real crash",
        }),
        FixtureName::Ce1 => Fixture::Engine(EngineFixture {
            name,
            variant: ProtocolVariant::NewEpoch,
            declared_f: 4,
            tag_bits: 64,
            types: tops(&[1, 1, 2, 0, 0], 3),
            pattern: pat(5, 4, &[(1, 1, &[3, 4, 5]), (2, 2, &[4])]),
            plan: CheaterPlan::new([AgentId(4), AgentId(5)], Strategy::Ce1),
            description: "two colluders outlast the crash-count check at f = n-1",
            benefit_patterns: vec![
                pat(5, 4, &[(1, 1, &[3, 4, 5]), (2, 2, &[4])]),
                pat(5, 4, &[(1, 1, &[3, 4, 5]), (2, 2, &[4]), (4, 3, &[5])]),
                pat(5, 4, &[(1, 1, &[3, 4, 5]), (2, 2, &[4]), (4, 3, &[])]),
                pat(5, 4, &[(1, 1, &[3, 4, 5]), (2, 2, &[4]), (4, 4, &[])]),
                pat(5, 4, &[(1, 1, &[3, 4, 5]), (2, 2, &[4]), (3, 4, &[5])]),
                pat(5, 4, &[(1, 1, &[3, 4, 5]), (2, 2, &[4]), (3, 4, &[])]),
                pat(5, 4, &[(1, 1, &[3, 4, 5]), (2, 2, &[4]), (3, 5, &[])]),
            ],
        }),
        FixtureName::Ce2 => Fixture::Engine(EngineFixture {
            name,
            variant: ProtocolVariant::NewEpoch2,
            declared_f: 2,
            tag_bits: 64,
            types: tops(&[0, 0, 1, 0], 3),
            pattern: pat(4, 2, &[(1, 2, &[3, 4]), (2, 4, &[])]),
            plan: CheaterPlan::new([AgentId(1), AgentId(2), AgentId(4)], Strategy::Ce2),
            description: "three colluders fake the second half of the announcement",
            benefit_patterns: vec![
                pat(4, 2, &[(1, 2, &[3, 4]), (2, 4, &[])]),
                pat(4, 2, &[(1, 2, &[3, 4])]),
                pat(4, 2, &[(1, 2, &[3, 4]), (2, 5, &[])]),
            ],
        }),
        FixtureName::Ce3 => Fixture::Engine(EngineFixture {
            name,
            variant: ProtocolVariant::RandNewEpoch2,
            declared_f: 4,
            tag_bits: 64,
            types: tops(&[1, 0, 2, 0, 0], 3),
            pattern: pat(5, 4, &[(1, 3, &[3, 4, 5])]),
            plan: CheaterPlan::new([AgentId(2), AgentId(4), AgentId(5)], Strategy::Ce3)
                .with_effective_f(2),
            description: "pretend-crash under common knowledge of a smaller failure bound",
            benefit_patterns: vec![
                pat(5, 4, &[(1, 3, &[3, 4, 5])]),
                pat(5, 4, &[(1, 3, &[3, 4, 5]), (2, 6, &[])]),
                pat(5, 4, &[(1, 3, &[3, 4, 5]), (2, 7, &[])]),
                pat(5, 4, &[(1, 3, &[3, 4, 5]), (3, 9, &[])]),
            ],
        }),
        FixtureName::ImpDemo => Fixture::Engine(EngineFixture {
            name,
            variant: ProtocolVariant::NewEpoch2,
            declared_f: 1,
            tag_bits: 64,
            types: tops(&[1, 0, 2, 0], 3),
            pattern: pat(4, 1, &[(1, 1, &[2])]),
            plan: CheaterPlan::new(
                [AgentId(2), AgentId(4)],
                Strategy::PrivateChannelCheat {
                    pretender: AgentId(2),
                    partner: AgentId(4),
                },
            )
            .with_private_channel(),
            description: "a private side channel makes receipt-pretense risk-free",
            benefit_patterns: vec![pat(4, 1, &[(1, 1, &[2])])],
        }),
    }
}

