//! The complete record of a run: delivered messages with payload bytes,
//! per-agent outcomes, run statistics, and a stable text serialization with
//! a digest line for quick equality checks.

use std::fmt::Write as _;

use crate::model::{AgentId, Decision, FailurePattern, MessageId, Round, TypeVector};
use crate::protocols::ProtocolVariant;
use crate::wire::hex_digest;

/// How a run ended.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RunVerdict {
    /// Every non-crashed agent terminated.
    Completed,
    /// The round horizon was reached with a live undecided agent.
    HorizonExhausted,
}

/// Outcome block for one agent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentOutcome {
    pub agent: AgentId,
    pub decision: Decision,
    pub decide_round: Option<Round>,
    pub terminate_round: Option<Round>,
    pub dictator_chain: Vec<AgentId>,
    pub crashed: bool,
    /// Human-readable punish witness, when the decision is the punishment.
    pub punish_witness: Option<String>,
}

/// Aggregate statistics used by the complexity criteria.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunStats {
    pub delivered_messages: u64,
    pub max_payload_bytes: usize,
    pub last_decide_round: Round,
    pub last_round: Round,
}

/// The complete record of a run.
#[derive(Clone, Debug)]
pub struct RunTranscript {
    pub variant: ProtocolVariant,
    pub n: usize,
    pub declared_f: usize,
    pub seed: u64,
    pub horizon: Round,
    pub tag_bits: u8,
    pub types: TypeVector,
    pub pattern: FailurePattern,
    pub cheater_note: Option<String>,
    /// Delivered messages per round, in (round, sender, receiver) order,
    /// with encoded payload bytes. Empty when recording was disabled.
    pub rounds: Vec<Vec<(MessageId, Vec<u8>)>>,
    pub outcomes: Vec<AgentOutcome>,
    pub verdict: RunVerdict,
    pub stats: RunStats,
}

impl RunTranscript {
    /// Stable text rendering; every run with equal inputs produces equal
    /// bytes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format: 1");
        let _ = writeln!(out, "variant: {}", self.variant.name());
        let _ = writeln!(out, "n: {}", self.n);
        let _ = writeln!(out, "f: {}", self.declared_f);
        let _ = writeln!(out, "seed: {}", self.seed);
        let _ = writeln!(out, "horizon: {}", self.horizon);
        let _ = writeln!(out, "prng: chacha12");
        let _ = writeln!(out, "tag-bits: {}", self.tag_bits);
        let types: Vec<String> = (1..=self.n as u8)
            .map(|a| {
                self.types
                    .pref(AgentId(a))
                    .ranking()
                    .iter()
                    .map(|v| v.0.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        let _ = writeln!(out, "types: {}", types.join(";"));
        let _ = writeln!(out, "pattern: {}", self.pattern.compact());
        if let Some(note) = &self.cheater_note {
            let _ = writeln!(out, "cheaters: {note}");
        }
        for (i, round) in self.rounds.iter().enumerate() {
            let _ = writeln!(out, "round {}:", i + 1);
            for (m, bytes) in round {
                let _ = writeln!(
                    out,
                    "  {}->{} len={} sha={}",
                    m.sender,
                    m.receiver,
                    bytes.len(),
                    &hex_digest(bytes)[..16]
                );
            }
        }
        for o in &self.outcomes {
            let decision = match &o.decision {
                Decision::Undecided => "undecided".to_string(),
                Decision::Value { value, source } => format!("{value} (top of {source})"),
                Decision::Punish => "punish".to_string(),
            };
            let _ = writeln!(
                out,
                "agent {}: decided={} round={} terminated={} chain={} crashed={}{}",
                o.agent,
                decision,
                o.decide_round.map_or("-".to_string(), |r| r.to_string()),
                o.terminate_round.map_or("-".to_string(), |r| r.to_string()),
                o.dictator_chain
                    .iter()
                    .map(|a| a.0.to_string())
                    .collect::<Vec<_>>()
                    .join(">"),
                o.crashed,
                o.punish_witness
                    .as_ref()
                    .map_or(String::new(), |w| format!(" witness={w}")),
            );
        }
        let _ = writeln!(
            out,
            "verdict: {}",
            match self.verdict {
                RunVerdict::Completed => "completed",
                RunVerdict::HorizonExhausted => "horizon-exhausted",
            }
        );
        let _ = writeln!(
            out,
            "stats: delivered={} max-payload={} last-decide={} last-round={}",
            self.stats.delivered_messages,
            self.stats.max_payload_bytes,
            self.stats.last_decide_round,
            self.stats.last_round
        );
        out
    }

    /// Digest over the rendered form (with the digest line excluded).
    pub fn digest(&self) -> String {
        hex_digest(self.render().as_bytes())
    }

    /// The rendered transcript with its digest line appended.
    pub fn render_with_digest(&self) -> String {
        let mut text = self.render();
        let _ = writeln!(text, "digest: sha256:{}", self.digest());
        text
    }

    pub fn outcome(&self, a: AgentId) -> &AgentOutcome {
        &self.outcomes[a.index()]
    }

    pub fn any_punish(&self) -> bool {
        self.outcomes
            .iter()
            .any(|o| matches!(o.decision, Decision::Punish))
    }
}
