//! Per-agent message-status bookkeeping: the four-state label map, message
//! chains, and the fixpoint labeling closure agents run at the end of every
//! round.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::model::{agents, AgentId, MessageId, Round};
use crate::wire::GraphWire;

/// Delivery status of one message in one agent's view.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
#[repr(u8)]
pub enum Label {
    /// Not known yet; may be learned later.
    Uncertain = 0,
    /// Known to have been delivered.
    Sent = 1,
    /// Known to have been lost to a sender crash.
    NotSent = 2,
    /// Provably never learnable, no matter what happens later.
    NeverKnown = 3,
}

impl Label {
    pub fn from_u8(x: u8) -> Label {
        match x {
            1 => Label::Sent,
            2 => Label::NotSent,
            3 => Label::NeverKnown,
            _ => Label::Uncertain,
        }
    }

    pub fn is_known(self) -> bool {
        self != Label::Uncertain
    }
}

/// Agents from which the owner received a message in `round`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LiveSet {
    pub round: Round,
    mask: u16,
}

impl LiveSet {
    /// Round-0 live set: everybody.
    pub fn everyone(n: usize, round: Round) -> Self {
        LiveSet {
            round,
            mask: (1u16 << n) - 1,
        }
    }

    pub fn from_members(members: impl IntoIterator<Item = AgentId>, round: Round) -> Self {
        let mut mask = 0;
        for a in members {
            mask |= 1 << a.index();
        }
        LiveSet { round, mask }
    }

    pub fn contains(&self, a: AgentId) -> bool {
        self.mask & (1 << a.index()) != 0
    }

    pub fn members(&self, n: usize) -> impl Iterator<Item = AgentId> + '_ {
        agents(n).filter(move |a| self.contains(*a))
    }

    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }
}

/// A label conflict discovered while merging peer graphs: two sources assert
/// incompatible statuses for one message. Honest runs never produce one; the
/// consistency component turns it into a punishment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabelConflict(pub MessageId);

/// A tag conflict: two different random tags reported for one message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TagConflict(pub MessageId);

/// One agent's message-status map, stored sparsely over a dense index space:
/// everything not present is `Uncertain`, and all messages of rounds beyond
/// `as_of_round` are implicitly `Uncertain`.
#[derive(Clone, Debug)]
pub struct MsgGraph {
    owner: AgentId,
    n: usize,
    as_of_round: Round,
    capacity_rounds: Round,
    labels: Vec<u8>,
    /// Earliest round with a not-sent label, per sender. Drives rule 2(b),
    /// dictator succession and failure-pattern reconstruction.
    min_notsent: Vec<Option<Round>>,
    /// Tags learned from peers or direct receipt. Own-generated tags live in
    /// `own_tags` and are stripped from every outgoing copy.
    tags: BTreeMap<u16, Option<u64>>,
    own_tags: BTreeMap<u16, Option<u64>>,
}

impl MsgGraph {
    pub fn new(owner: AgentId, n: usize, capacity_rounds: Round) -> Self {
        MsgGraph {
            owner,
            n,
            as_of_round: 0,
            capacity_rounds,
            labels: vec![0; n * n * capacity_rounds as usize],
            min_notsent: vec![None; n],
            tags: BTreeMap::new(),
            own_tags: BTreeMap::new(),
        }
    }

    #[inline]
    pub fn idx(&self, m: MessageId) -> u16 {
        debug_assert!(m.round >= 1 && m.round <= self.capacity_rounds);
        (((m.round as usize - 1) * self.n + m.sender.index()) * self.n + m.receiver.index()) as u16
    }

    pub fn message_of_idx(&self, idx: u16) -> MessageId {
        let idx = idx as usize;
        let round = (idx / (self.n * self.n)) as Round + 1;
        let sender = AgentId::from_index(idx / self.n % self.n);
        let receiver = AgentId::from_index(idx % self.n);
        MessageId::new(sender, receiver, round)
    }

    pub fn owner(&self) -> AgentId {
        self.owner
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_of_round(&self) -> Round {
        self.as_of_round
    }

    pub fn label(&self, m: MessageId) -> Label {
        if m.round > self.as_of_round {
            return Label::Uncertain;
        }
        Label::from_u8(self.labels[self.idx(m) as usize])
    }

    pub fn min_notsent_round(&self, sender: AgentId) -> Option<Round> {
        self.min_notsent[sender.index()]
    }

    /// All senders with at least one not-sent label: the crash set of the
    /// reconstructed failure pattern.
    pub fn notsent_senders(&self) -> impl Iterator<Item = AgentId> + '_ {
        agents(self.n).filter(|a| self.min_notsent[a.index()].is_some())
    }

    /// Whether every message from `sender` in `round` has a known label.
    pub fn row_fully_known(&self, sender: AgentId, round: Round) -> bool {
        if round > self.as_of_round {
            return false;
        }
        agents(self.n)
            .filter(|q| *q != sender)
            .all(|q| self.label(MessageId::new(sender, q, round)).is_known())
    }

    fn set(&mut self, m: MessageId, label: Label, events: &mut Vec<(MessageId, Label)>) {
        let i = self.idx(m) as usize;
        debug_assert_eq!(self.labels[i], 0, "label set twice for {m:?}");
        self.labels[i] = label as u8;
        if label == Label::NotSent {
            let slot = &mut self.min_notsent[m.sender.index()];
            if slot.map_or(true, |r| m.round < r) {
                *slot = Some(m.round);
            }
        }
        events.push((m, label));
    }

    /// Runs one round's labeling to fixpoint.
    ///
    /// `received` holds the peer graphs delivered this round (in sender
    /// order); every other agent contributes a not-sent label for its
    /// round-`k` message to the owner. Returns the round-`k` live set, the
    /// label transitions that happened (for invariant instrumentation), and
    /// any label conflicts, which the caller surfaces to the consistency
    /// component as grounds for punishment.
    pub fn apply_labeling_closure(
        &mut self,
        received: &[(AgentId, Arc<GraphWire>)],
        k: Round,
    ) -> ClosureOutcome {
        debug_assert_eq!(self.as_of_round, k - 1);
        self.as_of_round = k;
        let mut events = Vec::new();
        let mut conflicts = Vec::new();

        // rule 1(b): own sends of round k
        for q in agents(self.n) {
            if q != self.owner {
                self.set(MessageId::new(self.owner, q, k), Label::Sent, &mut events);
            }
        }
        // rules 1(a) and 2(a): direct receipt evidence for round k
        for j in agents(self.n) {
            if j == self.owner {
                continue;
            }
            let m = MessageId::new(j, self.owner, k);
            if received.iter().any(|(s, _)| *s == j) {
                self.set(m, Label::Sent, &mut events);
            } else {
                self.set(m, Label::NotSent, &mut events);
            }
        }
        // rules 1(c) and 2(c): adopt peer labels; never-known is always
        // recomputed locally rather than copied.
        for (_, graph) in received {
            for (idx, lbl) in &graph.labels {
                let label = Label::from_u8(*lbl);
                if label == Label::NeverKnown {
                    continue;
                }
                let m = self.message_of_idx(*idx);
                if m.round > k {
                    // honest peer snapshots stop at round k-1; anything
                    // beyond the current round is left to the consistency
                    // replay to flag
                    continue;
                }
                match self.label(m) {
                    Label::Uncertain => self.set(m, label, &mut events),
                    old if old == label => {}
                    _ => conflicts.push(LabelConflict(m)),
                }
            }
        }
        // rule 2(b): a missed send silences the whole row afterwards
        for s in agents(self.n) {
            if let Some(r0) = self.min_notsent[s.index()] {
                for r in r0 + 1..=k {
                    for q in agents(self.n) {
                        if q == s {
                            continue;
                        }
                        let m = MessageId::new(s, q, r);
                        match self.label(m) {
                            Label::Uncertain => self.set(m, Label::NotSent, &mut events),
                            Label::NotSent => {}
                            Label::Sent => conflicts.push(LabelConflict(m)),
                            Label::NeverKnown => {
                                // cannot arise from honest inputs: 3(a)(i)
                                // forbids never-known past a silent row
                                conflicts.push(LabelConflict(m));
                            }
                        }
                    }
                }
            }
        }
        self.never_known_fixpoint(k, &mut events);
        let live = LiveSet::from_members(received.iter().map(|(s, _)| *s), k);
        ClosureOutcome {
            live,
            events,
            conflicts,
        }
    }

    /// Rule 3(a) to fixpoint: label a message never-known once the sender's
    /// previous round looks clean and every message chain is dead.
    fn never_known_fixpoint(&mut self, k: Round, events: &mut Vec<(MessageId, Label)>) {
        // Chains die only at not-sent or never-known terminals.
        if !self.labels.iter().any(|l| *l >= 2) {
            return;
        }
        loop {
            let mut found = Vec::new();
            let mut memo = vec![0u8; self.n * self.n * k as usize];
            for idx in 0..self.n * self.n * (k as usize) {
                if self.labels[idx] != 0 {
                    continue;
                }
                let m = self.message_of_idx(idx as u16);
                if m.sender == m.receiver {
                    continue;
                }
                // condition (i)
                let prior_clean = m.round == 1
                    || agents(self.n).filter(|q| *q != m.sender).all(|q| {
                        matches!(
                            self.label(MessageId::new(m.sender, q, m.round - 1)),
                            Label::Sent | Label::NeverKnown
                        )
                    });
                if !prior_clean {
                    continue;
                }
                // condition (ii)
                if !self.chain_alive(m, k, &mut memo) {
                    found.push(m);
                }
            }
            if found.is_empty() {
                return;
            }
            for m in found {
                self.set(m, Label::NeverKnown, events);
            }
        }
    }

    /// Whether some message chain of the (uncertain) message `m` is still
    /// alive at the end of round `k`: it reaches the current round or ends at
    /// a sent label. Memo: 0 unknown, 1 alive, 2 dead.
    fn chain_alive(&self, m: MessageId, k: Round, memo: &mut [u8]) -> bool {
        if m.round == k {
            return true;
        }
        let i = self.idx(m) as usize;
        match memo[i] {
            1 => return true,
            2 => return false,
            _ => {}
        }
        let mut alive = false;
        'outer: for s in [m.sender, m.receiver] {
            for q in agents(self.n) {
                if q == s {
                    continue;
                }
                let next = MessageId::new(s, q, m.round + 1);
                match self.label(next) {
                    Label::Sent => {
                        alive = true;
                        break 'outer;
                    }
                    Label::NotSent | Label::NeverKnown => {}
                    Label::Uncertain => {
                        if self.chain_alive(next, k, memo) {
                            alive = true;
                            break 'outer;
                        }
                    }
                }
            }
        }
        memo[i] = if alive { 1 } else { 2 };
        alive
    }

    /// Every maximal message chain of `m` at the end of round `k`
    /// (Definition: sender-linked, round-incrementing, uncertain interior,
    /// terminating at the current round or at a known label). Exponential;
    /// used by tests and small-scope inspection only.
    pub fn message_chains(&self, m: MessageId, k: Round) -> Vec<Vec<MessageId>> {
        assert_eq!(self.label(m), Label::Uncertain);
        let mut out = Vec::new();
        let mut prefix = vec![m];
        self.chains_rec(m, k, &mut prefix, &mut out);
        out
    }

    fn chains_rec(
        &self,
        last: MessageId,
        k: Round,
        prefix: &mut Vec<MessageId>,
        out: &mut Vec<Vec<MessageId>>,
    ) {
        if last.round == k || (prefix.len() > 1 && self.label(last).is_known()) {
            out.push(prefix.clone());
            return;
        }
        for s in [last.sender, last.receiver] {
            for q in agents(self.n) {
                if q == s {
                    continue;
                }
                let next = MessageId::new(s, q, last.round + 1);
                match self.label(next) {
                    Label::Uncertain if next.round < k => {
                        prefix.push(next);
                        self.chains_rec(next, k, prefix, out);
                        prefix.pop();
                    }
                    // terminal: current round, or a known label
                    _ => out.push({
                        let mut c = prefix.clone();
                        c.push(next);
                        c
                    }),
                }
            }
        }
    }

    /// Records the tags attached to directly received messages plus all tags
    /// carried inside peer graphs. Conflicting values are reported for the
    /// consistency component.
    pub fn merge_tags(
        &mut self,
        directs: &[(MessageId, Option<u64>)],
        peers: &[(AgentId, Arc<GraphWire>)],
    ) -> Vec<TagConflict> {
        let mut conflicts = Vec::new();
        for (m, tag) in directs {
            self.record_tag(*m, *tag, &mut conflicts);
        }
        for (_, graph) in peers {
            for (idx, tag) in &graph.tags {
                let m = self.message_of_idx(*idx);
                self.record_tag(m, *tag, &mut conflicts);
            }
        }
        conflicts
    }

    /// Remembers the tag the owner generated for a message it sent.
    pub fn record_own_tag(&mut self, m: MessageId, tag: Option<u64>) {
        let idx = self.idx(m);
        self.own_tags.insert(idx, tag);
    }

    fn record_tag(&mut self, m: MessageId, tag: Option<u64>, conflicts: &mut Vec<TagConflict>) {
        let idx = self.idx(m);
        let store = if m.sender == self.owner {
            &mut self.own_tags
        } else {
            &mut self.tags
        };
        match store.get(&idx) {
            None => {
                store.insert(idx, tag);
            }
            Some(prev) => {
                if let (Some(a), Some(b)) = (prev, tag) {
                    if *a != b {
                        conflicts.push(TagConflict(m));
                    }
                }
            }
        }
    }

    /// The tag value the owner knows for `m`, from generation or receipt.
    /// `Some(None)` means the tag is known to exist but its value is not
    /// pinned (replay wildcards).
    pub fn known_tag(&self, m: MessageId) -> Option<Option<u64>> {
        let idx = self.idx(m);
        self.own_tags.get(&idx).or_else(|| self.tags.get(&idx)).copied()
    }

    /// Message ids of all tags the owner would relay (own-sent tags removed).
    pub fn relayed_tag_count(&self) -> usize {
        self.tags.len()
    }

    /// Raw label array (dense, index-ordered), for instrumentation.
    pub fn labels_raw(&self) -> &[u8] {
        &self.labels
    }

    /// The copy of the graph handed to the network: every known label, plus
    /// all tags except those of the owner's own messages. Serialization is
    /// index-sorted, i.e. by (round, sender, receiver).
    pub fn outgoing_view(&self) -> GraphWire {
        let upto = self.n * self.n * self.as_of_round as usize;
        let labels: Vec<(u16, u8)> = self.labels[..upto]
            .iter()
            .enumerate()
            .filter(|(_, l)| **l != 0)
            .map(|(i, l)| (i as u16, *l))
            .collect();
        let tags: Vec<(u16, Option<u64>)> = self.tags.iter().map(|(i, t)| (*i, *t)).collect();
        GraphWire { labels, tags }
    }
}

/// Result of one round's labeling closure.
pub struct ClosureOutcome {
    pub live: LiveSet,
    pub events: Vec<(MessageId, Label)>,
    pub conflicts: Vec<LabelConflict>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mid(s: u8, r: u8, round: Round) -> MessageId {
        MessageId::new(AgentId(s), AgentId(r), round)
    }

    /// Brute-force chain enumerator straight off the definition, as an
    /// independent oracle for `message_chains`.
    fn oracle_chains(g: &MsgGraph, m: MessageId, k: Round) -> Vec<Vec<MessageId>> {
        fn extend(g: &MsgGraph, chain: &mut Vec<MessageId>, k: Round, out: &mut Vec<Vec<MessageId>>) {
            let last = *chain.last().unwrap();
            let terminal = last.round == k || (chain.len() > 1 && g.label(last).is_known());
            if terminal {
                out.push(chain.clone());
                return;
            }
            for s in [last.sender, last.receiver] {
                for q in agents(g.n()) {
                    if q == s {
                        continue;
                    }
                    let next = MessageId::new(s, q, last.round + 1);
                    // interior nodes must be uncertain; terminals may be anything
                    if next.round == k || g.label(next).is_known() {
                        let mut c = chain.clone();
                        c.push(next);
                        out.push(c);
                    } else {
                        chain.push(next);
                        extend(g, chain, k, out);
                        chain.pop();
                    }
                }
            }
        }
        let mut out = Vec::new();
        extend(g, &mut vec![m], k, &mut out);
        out
    }

    #[test]
    fn chain_of_current_round_message_is_itself() {
        let mut g = MsgGraph::new(AgentId(3), 3, 8);
        let o = g.apply_labeling_closure(
            &[
                (AgentId(1), Arc::new(GraphWire::default())),
                (AgentId(2), Arc::new(GraphWire::default())),
            ],
            1,
        );
        assert!(o.conflicts.is_empty());
        // (1,2,1) is uncertain on agent 3 at end of round 1
        let chains = g.message_chains(mid(1, 2, 1), 1);
        assert_eq!(chains, vec![vec![mid(1, 2, 1)]]);
    }

    #[test]
    fn chains_match_bruteforce_oracle() {
        // build a graph via two closure rounds with partial receipt
        let mut g = MsgGraph::new(AgentId(4), 4, 8);
        let o1 = g.apply_labeling_closure(
            &[
                (AgentId(1), Arc::new(GraphWire::default())),
                (AgentId(2), Arc::new(GraphWire::default())),
                (AgentId(3), Arc::new(GraphWire::default())),
            ],
            1,
        );
        assert!(o1.conflicts.is_empty());
        // round 2: only agent 3 delivers, carrying its own round-1 view
        let mut peer = MsgGraph::new(AgentId(3), 4, 8);
        peer.apply_labeling_closure(
            &[
                (AgentId(1), Arc::new(GraphWire::default())),
                (AgentId(2), Arc::new(GraphWire::default())),
                (AgentId(4), Arc::new(GraphWire::default())),
            ],
            1,
        );
        let wire = Arc::new(peer.outgoing_view());
        g.apply_labeling_closure(&[(AgentId(3), wire)], 2);
        for m in [mid(1, 2, 2), mid(2, 1, 2), mid(1, 3, 2)] {
            if g.label(m) == Label::Uncertain {
                let mut got = g.message_chains(m, 2);
                let mut want = oracle_chains(&g, m, 2);
                got.sort();
                want.sort();
                assert_eq!(got, want, "chains for {m:?}");
            }
        }
    }

    #[test]
    fn tag_merge_records_and_detects_conflicts() {
        let mut g = MsgGraph::new(AgentId(2), 3, 8);
        g.apply_labeling_closure(
            &[
                (AgentId(1), Arc::new(GraphWire::default())),
                (AgentId(3), Arc::new(GraphWire::default())),
            ],
            1,
        );
        let m = mid(1, 2, 1);
        let c = g.merge_tags(&[(m, Some(7))], &[]);
        assert!(c.is_empty());
        assert_eq!(g.known_tag(m), Some(Some(7)));
        // same value from a peer: fine
        let idx = g.idx(m);
        let wire = Arc::new(GraphWire {
            labels: vec![],
            tags: vec![(idx, Some(7))],
        });
        assert!(g.merge_tags(&[], &[(AgentId(3), wire)]).is_empty());
        // different value: conflict
        let wire = Arc::new(GraphWire {
            labels: vec![],
            tags: vec![(idx, Some(9))],
        });
        let c = g.merge_tags(&[], &[(AgentId(3), wire)]);
        assert_eq!(c, vec![TagConflict(m)]);
    }

    #[test]
    fn empty_merge_leaves_graph_unchanged() {
        let mut g = MsgGraph::new(AgentId(1), 3, 8);
        let before = g.outgoing_view();
        let c = g.merge_tags(&[], &[]);
        assert!(c.is_empty());
        assert_eq!(g.outgoing_view(), before);
    }

    #[test]
    fn outgoing_view_strips_own_tags() {
        let mut g = MsgGraph::new(AgentId(2), 3, 8);
        g.apply_labeling_closure(
            &[
                (AgentId(1), Arc::new(GraphWire::default())),
                (AgentId(3), Arc::new(GraphWire::default())),
            ],
            1,
        );
        g.record_own_tag(mid(2, 1, 1), Some(11));
        g.record_own_tag(mid(2, 3, 1), Some(12));
        assert!(g.outgoing_view().tags.is_empty());
        // a received tag is relayed
        g.merge_tags(&[(mid(1, 2, 1), Some(5))], &[]);
        assert_eq!(g.outgoing_view().tags.len(), 1);
        // but the owner still knows its own values
        assert_eq!(g.known_tag(mid(2, 1, 1)), Some(Some(11)));
    }
}
