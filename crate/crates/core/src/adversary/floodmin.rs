//! The classic min-value flood protocol, used as the baseline the built-in
//! motivating fixtures manipulate: agents exchange every proposal they have
//! seen for `n - 1` rounds and decide the smallest. It reaches consensus
//! under crashes but is trivially manipulable, which is what the fixtures
//! demonstrate.

use std::collections::BTreeSet;

use crate::model::{agents, AgentId, FailurePattern, Round, TypeVector, Value};

/// The scripted manipulations of the motivating example.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FloodCheat {
    /// No manipulation.
    None,
    /// Agent 2 relays without the initial dictator's value and decides its
    /// own proposal when it can tell agent 3 never saw it.
    DropRelay { value: Value },
    /// Agents 2 and 3 independently run the drop-relay manipulation against
    /// each other.
    SymmetricDropRelay { value: Value },
    /// Agent 2 goes silent in round 2, mimicking a crash, then decides its
    /// own proposal once it can tell agent 3 never saw the dropped value.
    PretendCrash,
}

/// Outcome of a flood-min run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FloodReport {
    pub decisions: Vec<Option<Value>>,
    pub consensus: bool,
    /// Agents whose observations are inconsistent with every failure
    /// pattern (the relay of an agent provably alive in round 2 is missing
    /// a value that agent must have had).
    pub detected_by: Vec<AgentId>,
    /// Colluders strictly better off than in the honest run on the same
    /// pattern (by their own preference order).
    pub beneficiaries: Vec<AgentId>,
}

/// Runs the flood-min protocol under `pattern` with the given cheat script
/// and compares against the honest baseline.
pub fn run_flood(types: &TypeVector, pattern: &FailurePattern, cheat: FloodCheat) -> FloodReport {
    let honest = execute(types, pattern, FloodCheat::None);
    let run = execute(types, pattern, cheat);
    let cheaters: BTreeSet<AgentId> = match cheat {
        FloodCheat::None => BTreeSet::new(),
        FloodCheat::DropRelay { .. } | FloodCheat::PretendCrash => [AgentId(2)].into(),
        FloodCheat::SymmetricDropRelay { .. } => [AgentId(2), AgentId(3)].into(),
    };
    let decisions: Vec<Option<Value>> = run.decisions.clone();
    let consensus = consensus_holds(types, pattern, &decisions);
    let mut beneficiaries = Vec::new();
    for c in &cheaters {
        if !pattern.is_correct(*c) {
            continue;
        }
        if let (Some(now), Some(before)) = (
            decisions[c.index()],
            honest.decisions[c.index()],
        ) {
            if consensus && types.pref(*c).rank_of(now) < types.pref(*c).rank_of(before) {
                beneficiaries.push(*c);
            }
        }
    }
    FloodReport {
        decisions,
        consensus,
        detected_by: run.detected_by,
        beneficiaries,
    }
}

fn consensus_holds(types: &TypeVector, pattern: &FailurePattern, decisions: &[Option<Value>]) -> bool {
    let decided: Vec<Value> = decisions.iter().flatten().copied().collect();
    let agree = decided.windows(2).all(|w| w[0] == w[1]);
    let all_correct_decide = agents(types.n())
        .all(|a| !pattern.is_correct(a) || decisions[a.index()].is_some());
    let valid = decided
        .iter()
        .all(|v| agents(types.n()).any(|a| types.top(a) == *v));
    agree && all_correct_decide && valid
}

struct FloodRun {
    decisions: Vec<Option<Value>>,
    detected_by: Vec<AgentId>,
}

fn execute(types: &TypeVector, pattern: &FailurePattern, cheat: FloodCheat) -> FloodRun {
    let n = types.n();
    let rounds = (n - 1) as Round;
    // per-agent set of (proposer, value) seen so far
    let mut known: Vec<BTreeSet<Value>> = agents(n).map(|a| [types.top(a)].into()).collect();
    // mhist[agent][round][sender] = relayed value set, for the detector
    let mut mhist: Vec<Vec<Vec<Option<BTreeSet<Value>>>>> = vec![Vec::new(); n];
    let v1 = types.top(AgentId(1));

    for r in 1..=rounds {
        let mut inboxes: Vec<Vec<(AgentId, BTreeSet<Value>)>> = vec![Vec::new(); n];
        for s in agents(n) {
            if !pattern.executes_round(s, r) {
                continue;
            }
            for t in agents(n) {
                if t == s || !pattern.is_delivered(crate::model::MessageId::new(s, t, r)) {
                    continue;
                }
                if pattern.crash_round(t).is_some_and(|cr| cr <= r) {
                    continue;
                }
                let mut relay = known[s.index()].clone();
                match cheat {
                    FloodCheat::DropRelay { value } if s == AgentId(2) && t == AgentId(3) => {
                        relay.remove(&value);
                    }
                    FloodCheat::SymmetricDropRelay { value }
                        if (s == AgentId(2) && t == AgentId(3))
                            || (s == AgentId(3) && t == AgentId(2)) =>
                    {
                        relay.remove(&value);
                    }
                    FloodCheat::PretendCrash if s == AgentId(2) && r >= 2 => {
                        continue;
                    }
                    _ => {}
                }
                inboxes[t.index()].push((s, relay));
            }
        }
        for a in agents(n) {
            let mut row = vec![None; n];
            if pattern.crash_round(a).is_some_and(|cr| cr <= r) {
                mhist[a.index()].push(row);
                continue;
            }
            for (s, set) in &inboxes[a.index()] {
                known[a.index()].extend(set.iter().copied());
                row[s.index()] = Some(set.clone());
            }
            mhist[a.index()].push(row);
        }
    }

    // decisions
    let mut decisions: Vec<Option<Value>> = vec![None; n];
    for a in agents(n) {
        if pattern.crash_round(a).is_some_and(|cr| cr <= rounds) {
            continue;
        }
        let honest_min = known[a.index()].iter().min().copied();
        // the manipulation rule: once certain the suppressed value never
        // reached the third agent, decide the minimum of everything else
        let min_without_v1 = known[a.index()]
            .iter()
            .filter(|v| **v != v1)
            .min()
            .copied();
        let is_cheater = match cheat {
            FloodCheat::DropRelay { .. } | FloodCheat::PretendCrash => a == AgentId(2),
            FloodCheat::SymmetricDropRelay { .. } => a == AgentId(2) || a == AgentId(3),
            FloodCheat::None => false,
        };
        decisions[a.index()] = if is_cheater {
            let peer = if a == AgentId(2) { AgentId(3) } else { AgentId(2) };
            let from1 = mhist[a.index()][1][AgentId(1).index()].is_some();
            let peer_has_v1 = mhist[a.index()][1][peer.index()]
                .as_ref()
                .is_some_and(|s| s.contains(&v1));
            if !from1 && !peer_has_v1 {
                min_without_v1
            } else {
                honest_min
            }
        } else {
            honest_min
        };
    }

    // detector: if q's round-2 message arrived anywhere, q was alive in
    // round 2, so q completed round 1 and every round-2 relay must contain
    // q's proposal
    let mut detected_by = Vec::new();
    if rounds >= 2 {
        for a in agents(n) {
            if pattern.crash_round(a).is_some_and(|cr| cr <= 2) {
                continue;
            }
            let row = &mhist[a.index()][1];
            let alive_in_2: Vec<AgentId> = agents(n)
                .filter(|q| row[q.index()].is_some())
                .collect();
            let inconsistent = agents(n).any(|p| {
                row[p.index()].as_ref().is_some_and(|relay| {
                    alive_in_2
                        .iter()
                        .any(|q| *q != p && !relay.contains(&types.top(*q)))
                })
            });
            if inconsistent {
                detected_by.push(a);
            }
        }
    }

    FloodRun {
        decisions,
        detected_by,
    }
}
