//! Domain vocabulary shared by every other module: agents, rounds, messages,
//! values, preferences, failure patterns and decisions.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One-based agent identifier. The system always has agents `1..=n` with `n >= 3`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub u8);

impl AgentId {
    /// Zero-based index into per-agent arrays.
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    #[inline]
    pub fn from_index(i: usize) -> Self {
        AgentId(i as u8 + 1)
    }
}

impl fmt::Debug for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Iterator over all agents of an `n`-agent system.
pub fn agents(n: usize) -> impl Iterator<Item = AgentId> + Clone {
    (1..=n as u8).map(AgentId)
}

/// One-based synchronous round number.
pub type Round = u16;

/// A message slot `(sender, receiver, round)`. The protocols never self-send,
/// so canonical runs only contain ids with `sender != receiver`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MessageId {
    pub round: Round,
    pub sender: AgentId,
    pub receiver: AgentId,
}

impl MessageId {
    pub fn new(sender: AgentId, receiver: AgentId, round: Round) -> Self {
        MessageId {
            round,
            sender,
            receiver,
        }
    }
}

impl fmt::Debug for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}->{} r{})", self.sender, self.receiver, self.round)
    }
}

/// A consensus proposal value, dense in `0..|V|`. The protocols require
/// `|V| >= 3`, which also guarantees proposals need at least two bits.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Value(pub u8);

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// A total order over all values, most preferred first.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreferenceOrder {
    ranking: Vec<Value>,
}

impl PreferenceOrder {
    /// Builds an order from a ranking (most preferred first). Every value of
    /// the domain must appear exactly once.
    pub fn new(ranking: Vec<Value>) -> Result<Self, ModelError> {
        let m = ranking.len();
        let mut seen = vec![false; m];
        for v in &ranking {
            let i = v.0 as usize;
            if i >= m || seen[i] {
                return Err(ModelError::NotAPermutation);
            }
            seen[i] = true;
        }
        Ok(PreferenceOrder { ranking })
    }

    /// The order `top, then remaining values ascending`. Handy canonical
    /// representative: protocol behavior depends on preferences only through
    /// the top value.
    pub fn top_then_ascending(top: Value, domain: usize) -> Self {
        let mut ranking = vec![top];
        ranking.extend((0..domain as u8).map(Value).filter(|v| *v != top));
        PreferenceOrder { ranking }
    }

    pub fn top(&self) -> Value {
        self.ranking[0]
    }

    pub fn domain_size(&self) -> usize {
        self.ranking.len()
    }

    /// 1-based rank of `v`; rank 1 is the most preferred value.
    pub fn rank_of(&self, v: Value) -> usize {
        1 + self.ranking.iter().position(|x| *x == v).expect("value in domain")
    }

    pub fn ranking(&self) -> &[Value] {
        &self.ranking
    }
}

impl fmt::Debug for PreferenceOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.ranking.iter().map(|v| v.0.to_string()).collect();
        write!(f, "{}", s.join(">"))
    }
}

/// The vector of private preference orders, indexed by agent.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct TypeVector {
    prefs: Vec<PreferenceOrder>,
}

impl TypeVector {
    pub fn new(prefs: Vec<PreferenceOrder>) -> Result<Self, ModelError> {
        if prefs.is_empty() {
            return Err(ModelError::EmptyTypeVector);
        }
        let m = prefs[0].domain_size();
        if prefs.iter().any(|p| p.domain_size() != m) {
            return Err(ModelError::MixedDomains);
        }
        Ok(TypeVector { prefs })
    }

    /// Canonical vector where agent `i` most prefers `tops[i]` and is
    /// otherwise ascending.
    pub fn from_tops(tops: &[Value], domain: usize) -> Self {
        TypeVector {
            prefs: tops
                .iter()
                .map(|t| PreferenceOrder::top_then_ascending(*t, domain))
                .collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.prefs.len()
    }

    pub fn domain_size(&self) -> usize {
        self.prefs[0].domain_size()
    }

    pub fn pref(&self, a: AgentId) -> &PreferenceOrder {
        &self.prefs[a.index()]
    }

    pub fn top(&self, a: AgentId) -> Value {
        self.prefs[a.index()].top()
    }

    pub fn tops(&self) -> Vec<Value> {
        self.prefs.iter().map(|p| p.top()).collect()
    }
}

/// How an agent crashes: it fails in `round`, delivering that round's
/// messages only to `delivered`, and sends nothing afterwards.
///
/// Canonical form: `delivered` is a proper subset of the other agents. An
/// agent that delivered its whole round before failing is indistinguishable
/// from one that crashes at the start of the next round, so `canonicalize`
/// rewrites full delivery to `round + 1` with an empty set.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct CrashSpec {
    pub round: Round,
    pub delivered: Vec<AgentId>,
}

/// Ground-truth specification of which transmissions would succeed.
///
/// Stored intensionally as per-agent crash specs; the conceptual triple set
/// is infinite and every protocol-relevant query reduces to [`is_delivered`].
///
/// [`is_delivered`]: FailurePattern::is_delivered
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct FailurePattern {
    n: usize,
    declared_f: usize,
    crashes: BTreeMap<AgentId, CrashSpec>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("ranking is not a permutation of the value domain")]
    NotAPermutation,
    #[error("type vector must have at least one entry")]
    EmptyTypeVector,
    #[error("preference orders cover different value domains")]
    MixedDomains,
    #[error("{crashes} crashing agents exceed declared_f = {declared_f}")]
    TooManyCrashes { crashes: usize, declared_f: usize },
    #[error("declared_f = {declared_f} out of range for n = {n}")]
    BadDeclaredF { declared_f: usize, n: usize },
    #[error("crash spec for agent {agent} is malformed")]
    BadCrashSpec { agent: AgentId },
    #[error("enumeration horizon must be at least 1")]
    BadHorizon,
}

impl FailurePattern {
    /// Builds the failure-free pattern.
    pub fn failure_free(n: usize, declared_f: usize) -> Self {
        FailurePattern {
            n,
            declared_f,
            crashes: BTreeMap::new(),
        }
    }

    /// Canonicalizes and validates a raw crash description.
    ///
    /// Full-delivery crash rounds are advanced by one round with an empty
    /// delivered set; the operation is idempotent. Descriptions with more
    /// than `declared_f` crashing agents are rejected.
    pub fn canonicalize(
        n: usize,
        declared_f: usize,
        raw: BTreeMap<AgentId, CrashSpec>,
    ) -> Result<Self, ModelError> {
        if declared_f > n - 1 {
            return Err(ModelError::BadDeclaredF { declared_f, n });
        }
        if raw.len() > declared_f {
            return Err(ModelError::TooManyCrashes {
                crashes: raw.len(),
                declared_f,
            });
        }
        let mut crashes = BTreeMap::new();
        for (agent, spec) in raw {
            if agent.0 as usize > n || spec.round == 0 {
                return Err(ModelError::BadCrashSpec { agent });
            }
            let mut delivered: Vec<AgentId> = spec.delivered;
            delivered.sort_unstable();
            delivered.dedup();
            if delivered.iter().any(|d| *d == agent || d.0 as usize > n) {
                return Err(ModelError::BadCrashSpec { agent });
            }
            let spec = if delivered.len() == n - 1 {
                CrashSpec {
                    round: spec.round + 1,
                    delivered: Vec::new(),
                }
            } else {
                CrashSpec {
                    round: spec.round,
                    delivered,
                }
            };
            crashes.insert(agent, spec);
        }
        Ok(FailurePattern {
            n,
            declared_f,
            crashes,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn declared_f(&self) -> usize {
        self.declared_f
    }

    pub fn crashes(&self) -> &BTreeMap<AgentId, CrashSpec> {
        &self.crashes
    }

    pub fn crash_count(&self) -> usize {
        self.crashes.len()
    }

    /// Round in which `a` crashes, if it is faulty.
    pub fn crash_round(&self, a: AgentId) -> Option<Round> {
        self.crashes.get(&a).map(|c| c.round)
    }

    /// Whether `a` still executes round `r` (sends at least partially).
    pub fn executes_round(&self, a: AgentId, r: Round) -> bool {
        self.crash_round(a).map_or(true, |cr| r <= cr)
    }

    /// Whether `a` is alive in round `r`, i.e. all of its round-`r` sends
    /// would succeed.
    pub fn alive_in(&self, a: AgentId, r: Round) -> bool {
        self.crash_round(a).map_or(true, |cr| r < cr)
    }

    pub fn is_correct(&self, a: AgentId) -> bool {
        !self.crashes.contains_key(&a)
    }

    /// Whether the transmission `m` would succeed should its sender attempt
    /// it. Total, and independent of protocol behavior.
    pub fn is_delivered(&self, m: MessageId) -> bool {
        debug_assert!(m.round >= 1);
        match self.crashes.get(&m.sender) {
            None => true,
            Some(spec) => {
                m.round < spec.round
                    || (m.round == spec.round && spec.delivered.contains(&m.receiver))
            }
        }
    }

    /// Last round in which any agent crashes (0 when failure-free).
    pub fn last_crash_round(&self) -> Round {
        self.crashes.values().map(|c| c.round).max().unwrap_or(0)
    }

    /// Compact text form used in transcripts, e.g. `1@2!{2,3};4@1!{}`.
    pub fn compact(&self) -> String {
        if self.crashes.is_empty() {
            return "failure-free".to_string();
        }
        self.crashes
            .iter()
            .map(|(a, c)| {
                let d: Vec<String> = c.delivered.iter().map(|x| x.0.to_string()).collect();
                format!("{}@{}!{{{}}}", a.0, c.round, d.join(","))
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Enumeration granularity for failure-pattern sweeps.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Granularity {
    /// Every canonical pattern: all crash rounds up to the horizon and all
    /// proper delivered subsets.
    Fine,
    /// Crash rounds only, with empty delivered sets.
    Coarse,
}

/// Indexable, duplicate-free enumeration of canonical failure patterns with
/// at most `f` crashes and crash rounds bounded by `horizon`.
///
/// Patterns are ordered by (crashing-set size, crashing set, per-agent
/// choices), with the failure-free pattern first, so sweeps can parallelize
/// over indices and still report deterministic first witnesses.
#[derive(Clone, Debug)]
pub struct PatternSpace {
    n: usize,
    f: usize,
    horizon: Round,
    granularity: Granularity,
    /// Cumulative pattern counts per crashing subset, in enumeration order.
    subsets: Vec<(Vec<AgentId>, u64)>,
    per_agent: u64,
    total: u64,
}

impl PatternSpace {
    pub fn new(
        n: usize,
        f: usize,
        horizon: Round,
        granularity: Granularity,
    ) -> Result<Self, ModelError> {
        if horizon < 1 {
            return Err(ModelError::BadHorizon);
        }
        if f > n - 1 {
            return Err(ModelError::BadDeclaredF { declared_f: f, n });
        }
        let subsets_per_agent = match granularity {
            // proper subsets of the other n-1 agents
            Granularity::Fine => (1u64 << (n - 1)) - 1,
            Granularity::Coarse => 1,
        };
        let per_agent = horizon as u64 * subsets_per_agent;
        let mut subsets = Vec::new();
        let mut total = 1u64; // failure-free
        for size in 1..=f {
            let count = per_agent.pow(size as u32);
            let mut combo: Vec<usize> = (0..size).collect();
            loop {
                total += count;
                subsets.push((
                    combo.iter().map(|i| AgentId::from_index(*i)).collect(),
                    total,
                ));
                // next lexicographic size-combination of 0..n
                let mut i = size as isize - 1;
                while i >= 0 && combo[i as usize] == n - size + i as usize {
                    i -= 1;
                }
                if i < 0 {
                    break;
                }
                combo[i as usize] += 1;
                for j in i as usize + 1..size {
                    combo[j] = combo[j - 1] + 1;
                }
            }
        }
        Ok(PatternSpace {
            n,
            f,
            horizon,
            granularity,
            subsets,
            per_agent,
            total,
        })
    }

    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_crashes(&self) -> usize {
        self.f
    }

    pub fn horizon(&self) -> Round {
        self.horizon
    }

    /// Decodes the pattern at `idx`; `idx == 0` is the failure-free pattern.
    pub fn get(&self, idx: u64) -> FailurePattern {
        assert!(idx < self.total, "pattern index out of range");
        if idx == 0 {
            return FailurePattern::failure_free(self.n, self.f);
        }
        // binary search over cumulative counts
        let pos = self.subsets.partition_point(|(_, cum)| *cum <= idx);
        let (set, cum) = &self.subsets[pos];
        let count = self.per_agent.pow(set.len() as u32);
        let mut offset = idx - (cum - count);
        let mut crashes = BTreeMap::new();
        for agent in set {
            let choice = offset % self.per_agent;
            offset /= self.per_agent;
            let round = (choice / self.subset_count()) as Round + 1;
            let subset_idx = choice % self.subset_count();
            let delivered = self.decode_subset(*agent, subset_idx);
            crashes.insert(*agent, CrashSpec { round, delivered });
        }
        FailurePattern {
            n: self.n,
            declared_f: self.f,
            crashes,
        }
    }

    fn subset_count(&self) -> u64 {
        match self.granularity {
            Granularity::Fine => (1u64 << (self.n - 1)) - 1,
            Granularity::Coarse => 1,
        }
    }

    fn decode_subset(&self, agent: AgentId, idx: u64) -> Vec<AgentId> {
        match self.granularity {
            Granularity::Coarse => Vec::new(),
            Granularity::Fine => {
                // idx in 0..2^(n-1)-1 encodes a proper subset of the others
                let others: Vec<AgentId> = agents(self.n).filter(|a| *a != agent).collect();
                let mut out = Vec::new();
                for (bit, other) in others.iter().enumerate() {
                    if idx & (1 << bit) != 0 {
                        out.push(*other);
                    }
                }
                out
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = FailurePattern> + '_ {
        (0..self.total).map(move |i| self.get(i))
    }
}

/// An agent's irrevocable consensus output.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Decision {
    /// No decision yet (or ever, for crashed agents).
    Undecided,
    /// A proposal value, together with the agent whose most preferred value
    /// it is. The provenance lets sweeps reason about every type vector at
    /// once; the concrete value is what the wire carried.
    Value { value: Value, source: AgentId },
    /// The punishment decision: deliberately breaks Validity on detected
    /// inconsistency.
    Punish,
}

impl Decision {
    pub fn is_decided(&self) -> bool {
        !matches!(self, Decision::Undecided)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

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
        FailurePattern::canonicalize(n, f, raw).unwrap()
    }

    #[test]
    fn delivery_follows_crash_spec() {
        // agent 1 crashes in round 2 having delivered only to agent 2
        let f = pat(3, 1, &[(1, 2, &[2])]);
        assert!(f.is_delivered(MessageId::new(AgentId(1), AgentId(2), 2)));
        assert!(!f.is_delivered(MessageId::new(AgentId(1), AgentId(3), 2)));
        assert!(!f.is_delivered(MessageId::new(AgentId(1), AgentId(2), 3)));
        assert!(f.is_delivered(MessageId::new(AgentId(1), AgentId(3), 1)));
    }

    #[test]
    fn failure_free_delivers_everything() {
        let f = FailurePattern::failure_free(4, 2);
        for s in agents(4) {
            for r in agents(4) {
                if s != r {
                    for round in 1..=6 {
                        assert!(f.is_delivered(MessageId::new(s, r, round)));
                    }
                }
            }
        }
    }

    #[test]
    fn deliverable_triple_counts() {
        // n=3, horizon 3, agent 2 crashes at round 1 delivering nothing:
        // no sender-2 triple is deliverable, 12 of 18 remain.
        let f = pat(3, 1, &[(2, 1, &[])]);
        let mut sender2 = 0;
        let mut total = 0;
        for s in agents(3) {
            for r in agents(3) {
                if s == r {
                    continue;
                }
                for round in 1..=3 {
                    if f.is_delivered(MessageId::new(s, r, round)) {
                        total += 1;
                        if s == AgentId(2) {
                            sender2 += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(sender2, 0);
        assert_eq!(total, 12);
    }

    #[test]
    fn missed_send_implies_no_later_sends() {
        let f = pat(4, 2, &[(1, 2, &[3]), (4, 1, &[])]);
        for s in agents(4) {
            for r in agents(4) {
                if s == r {
                    continue;
                }
                for round in 1..=5u16 {
                    if !f.is_delivered(MessageId::new(s, r, round)) {
                        for round2 in round + 1..=6 {
                            for r2 in agents(4) {
                                if r2 != s {
                                    assert!(!f.is_delivered(MessageId::new(s, r2, round2)));
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn canonicalize_advances_full_delivery() {
        // delivering to everyone in round 2 == crashing at the start of round 3
        let f = pat(3, 1, &[(1, 2, &[2, 3])]);
        assert_eq!(f.crash_round(AgentId(1)), Some(3));
        assert!(f.crashes()[&AgentId(1)].delivered.is_empty());
        // already canonical specs are untouched
        let g = pat(3, 1, &[(1, 2, &[2])]);
        assert_eq!(g.crash_round(AgentId(1)), Some(2));
        assert_eq!(g.crashes()[&AgentId(1)].delivered, vec![AgentId(2)]);
    }

    #[test]
    fn canonicalize_is_idempotent() {
        let f = pat(4, 2, &[(1, 2, &[2, 3, 4]), (3, 1, &[1])]);
        let again =
            FailurePattern::canonicalize(4, 2, f.crashes().clone().into_iter().collect()).unwrap();
        assert_eq!(f, again);
    }

    #[test]
    fn canonicalize_rejects_too_many_crashes() {
        let raw: BTreeMap<AgentId, CrashSpec> = [(1u8, 1u16), (2, 2)]
            .iter()
            .map(|(a, r)| {
                (
                    AgentId(*a),
                    CrashSpec {
                        round: *r,
                        delivered: vec![],
                    },
                )
            })
            .collect();
        assert_eq!(
            FailurePattern::canonicalize(4, 1, raw).unwrap_err(),
            ModelError::TooManyCrashes {
                crashes: 2,
                declared_f: 1
            }
        );
    }

    #[test]
    fn fine_enumeration_count_matches_formula() {
        // 1 + n * horizon * (2^(n-1) - 1) for a single allowed crash
        let space = PatternSpace::new(3, 1, 2, Granularity::Fine).unwrap();
        assert_eq!(space.len(), 1 + 3 * 2 * 3);
        let direct: Vec<FailurePattern> = space.iter().collect();
        assert_eq!(direct.len(), 19);
        // duplicate-free
        for (i, a) in direct.iter().enumerate() {
            for b in &direct[i + 1..] {
                assert_ne!(a, b);
            }
        }
        // includes failure-free
        assert!(direct.contains(&FailurePattern::failure_free(3, 1)));
    }

    #[test]
    fn zero_f_enumerates_only_failure_free() {
        let space = PatternSpace::new(3, 0, 5, Granularity::Fine).unwrap();
        assert_eq!(space.len(), 1);
        assert_eq!(space.get(0), FailurePattern::failure_free(3, 0));
    }

    #[test]
    fn coarse_enumeration_counts_crash_sets() {
        // n=4, f=2, horizon=1 coarse: 1 + C(4,1) + C(4,2) = 11
        let space = PatternSpace::new(4, 2, 1, Granularity::Coarse).unwrap();
        assert_eq!(space.len(), 11);
    }

    #[test]
    fn coarse_patterns_are_subset_of_fine() {
        let fine = PatternSpace::new(4, 2, 2, Granularity::Fine).unwrap();
        let coarse = PatternSpace::new(4, 2, 2, Granularity::Coarse).unwrap();
        let all: Vec<FailurePattern> = fine.iter().collect();
        for p in coarse.iter() {
            assert!(all.contains(&p));
        }
    }

    #[test]
    fn rank_and_top() {
        let p = PreferenceOrder::new(vec![Value(2), Value(0), Value(1)]).unwrap();
        assert_eq!(p.top(), Value(2));
        assert_eq!(p.rank_of(Value(2)), 1);
        assert_eq!(p.rank_of(Value(1)), 3);
        assert!(PreferenceOrder::new(vec![Value(0), Value(0), Value(1)]).is_err());
    }
}
