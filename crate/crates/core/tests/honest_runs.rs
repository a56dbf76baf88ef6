//! End-to-end honest-run behavior: decision traces, determinism, and the
//! labeling corner cases pinned by the design discussion.

use std::collections::BTreeMap;

use rational_consensus::model::{
    agents, AgentId, CrashSpec, Decision, FailurePattern, TypeVector, Value,
};
use rational_consensus::simnet::{run, EngineConfig};
use rational_consensus::transcript::RunVerdict;
use rational_consensus::ProtocolVariant;

fn tops(tops: &[u8], domain: usize) -> TypeVector {
    TypeVector::from_tops(&tops.iter().map(|t| Value(*t)).collect::<Vec<_>>(), domain)
}

fn pattern(n: usize, f: usize, specs: &[(u8, u16, &[u8])]) -> FailurePattern {
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
fn failure_free_new_epoch_decides_initial_dictator() {
    let types = tops(&[0, 1, 2], 3);
    let f = FailurePattern::failure_free(3, 1);
    let cfg = EngineConfig::new(ProtocolVariant::NewEpoch, 1).recording();
    let r = run(cfg, &types, &f, None).unwrap().transcript;
    assert_eq!(r.verdict, RunVerdict::Completed);
    for a in agents(3) {
        assert_eq!(
            r.outcome(a).decision,
            Decision::Value {
                value: Value(0),
                source: AgentId(1)
            }
        );
    }
    assert_eq!(r.outcome(AgentId(1)).decide_round, Some(1));
    assert_eq!(r.outcome(AgentId(2)).decide_round, Some(2));
    assert_eq!(r.outcome(AgentId(3)).decide_round, Some(2));
    // everyone gone by round 3
    assert!(r.outcomes.iter().all(|o| o.terminate_round <= Some(3)));
    assert_eq!(r.stats.last_round, 3);
}

#[test]
fn failure_free_split_decides_in_three_rounds() {
    let types = tops(&[2, 0, 1], 3);
    let f = FailurePattern::failure_free(3, 1);
    let cfg = EngineConfig::new(ProtocolVariant::NewEpoch2, 1);
    let r = run(cfg, &types, &f, None).unwrap().transcript;
    for a in agents(3) {
        assert_eq!(
            r.outcome(a).decision,
            Decision::Value {
                value: Value(2),
                source: AgentId(1)
            }
        );
    }
    assert_eq!(r.outcome(AgentId(1)).decide_round, Some(2));
    assert_eq!(r.outcome(AgentId(2)).decide_round, Some(3));
}

#[test]
fn failure_free_randomized_shifts_by_one_round() {
    let types = tops(&[1, 2, 0], 3);
    let f = FailurePattern::failure_free(3, 1);
    let cfg = EngineConfig::new(ProtocolVariant::RandNewEpoch2, 1).with_seed(11);
    let r = run(cfg, &types, &f, None).unwrap().transcript;
    for a in agents(3) {
        assert_eq!(
            r.outcome(a).decision,
            Decision::Value {
                value: Value(1),
                source: AgentId(1)
            }
        );
    }
    assert_eq!(r.outcome(AgentId(1)).decide_round, Some(3));
    assert_eq!(r.outcome(AgentId(2)).decide_round, Some(4));
}

#[test]
fn initial_dictator_crash_passes_dictatorship_to_lowest_nonreceiver() {
    // agent 1 crashes at the start: everyone labels its first round not-sent
    // and adopts agent 2
    let types = tops(&[0, 1, 2], 3);
    let f = pattern(3, 1, &[(1, 1, &[])]);
    let cfg = EngineConfig::new(ProtocolVariant::NewEpoch, 1);
    let r = run(cfg, &types, &f, None).unwrap().transcript;
    for a in [AgentId(2), AgentId(3)] {
        assert_eq!(
            r.outcome(a).decision,
            Decision::Value {
                value: Value(1),
                source: AgentId(2)
            }
        );
        assert_eq!(r.outcome(a).dictator_chain, vec![AgentId(1), AgentId(2)]);
    }
    assert_eq!(r.outcome(AgentId(1)).decision, Decision::Undecided);
}

#[test]
fn partial_crash_successor_is_lowest_id_among_non_receivers() {
    // agent 1 crashes in round 1 delivering only to agent 2: the successor
    // is agent 3, the only agent that missed the announcement
    let types = tops(&[0, 1, 2], 3);
    let f = pattern(3, 1, &[(1, 1, &[2])]);
    let cfg = EngineConfig::new(ProtocolVariant::NewEpoch, 1);
    let r = run(cfg, &types, &f, None).unwrap().transcript;
    for a in [AgentId(2), AgentId(3)] {
        assert_eq!(
            r.outcome(a).decision,
            Decision::Value {
                value: Value(2),
                source: AgentId(3)
            },
            "agent {a}"
        );
    }
}

#[test]
fn same_seed_gives_identical_transcripts() {
    let types = tops(&[2, 1, 0, 0], 3);
    let f = pattern(4, 2, &[(1, 2, &[3]), (4, 3, &[])]);
    let cfg = EngineConfig::new(ProtocolVariant::RandNewEpoch2, 2)
        .with_seed(99)
        .recording();
    let a = run(cfg, &types, &f, None).unwrap().transcript;
    for _ in 0..3 {
        let b = run(cfg, &types, &f, None).unwrap().transcript;
        assert_eq!(a.digest(), b.digest());
    }
    let other = run(cfg.with_seed(100), &types, &f, None).unwrap().transcript;
    assert_ne!(a.digest(), other.digest());
}

#[test]
fn staggered_crashes_give_non_prefix_chains_across_crashed_agents() {
    // four agents; 1 crashes in round 1 missing {2,4}, 2 crashes in round 2
    // missing 4, 3 crashes in round 3 missing 4. Agent 4 can never learn
    // whether (1 -> 2, round 1) was delivered, so it takes over itself.
    let types = tops(&[0, 1, 2, 0], 3);
    let f = pattern(4, 3, &[(1, 1, &[3]), (2, 2, &[1, 3]), (3, 3, &[1, 2])]);
    let cfg = EngineConfig::new(ProtocolVariant::NewEpoch, 3).capturing();
    let res = run(cfg, &types, &f, None).unwrap();
    let r = &res.transcript;
    assert_eq!(r.verdict, RunVerdict::Completed);
    // agent 4 ends with the chain 1 -> 4 while agent 3 held 1 -> 2
    assert_eq!(
        r.outcome(AgentId(4)).dictator_chain,
        vec![AgentId(1), AgentId(4)]
    );
    let hist = res.history.unwrap();
    let chain3_end_of_2 = hist.rounds[1].chains[AgentId(3).index()].clone();
    assert_eq!(chain3_end_of_2, vec![AgentId(1), AgentId(2)]);
    // the never-known call lands in round 4: at the end of round 3 a chain
    // through (3, x, 3) is still open
    let change_round = hist
        .rounds
        .iter()
        .find(|rec| {
            rec.dict_events.iter().any(|(a, e)| {
                *a == AgentId(4)
                    && matches!(
                        e,
                        rational_consensus::dictator::DictatorEvent::Changed {
                            to: AgentId(4),
                            ..
                        }
                    )
            })
        })
        .map(|rec| rec.round);
    assert_eq!(change_round, Some(4));
    assert_eq!(
        r.outcome(AgentId(4)).decision,
        Decision::Value {
            value: Value(0),
            source: AgentId(4)
        }
    );
}

#[test]
fn horizon_exhaustion_is_reported() {
    let types = tops(&[0, 1, 2], 3);
    let f = FailurePattern::failure_free(3, 1);
    let cfg = EngineConfig::new(ProtocolVariant::NewEpoch, 1).with_horizon(1);
    let r = run(cfg, &types, &f, None).unwrap().transcript;
    assert_eq!(r.verdict, RunVerdict::HorizonExhausted);
}
