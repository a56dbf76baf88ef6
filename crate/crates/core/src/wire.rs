//! Wire formats: the byte-stable payload framing every round message uses,
//! and the value-split encoding for two-part epoch announcements.
//!
//! A round message is `[graph block][optional NEWEPOCH block][optional tag]`,
//! length-prefixed and serialized big-endian so transcripts are reproducible
//! bit for bit. Graph entries are sorted by (round, sender, receiver).

use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::model::{AgentId, Value};

/// Snapshot of a message graph as shipped to the network: known labels plus
/// relayable tags. Tag values of `None` only occur inside consistency
/// replays, where they compare as wildcards; real payloads always carry
/// concrete values.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GraphWire {
    /// (message index, label), index-sorted.
    pub labels: Vec<(u16, u8)>,
    /// (message index, tag value), index-sorted.
    pub tags: Vec<(u16, Option<u64>)>,
}

/// Which piece of the dictator's value a NEWEPOCH message carries.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
#[repr(u8)]
pub enum Part {
    Whole = 0,
    First = 1,
    Second = 2,
}

/// A NEWEPOCH announcement: the (current) dictator broadcasting its most
/// preferred value, possibly split over two rounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NewEpochWire {
    pub part: Part,
    pub epoch_sender: AgentId,
    /// Number of carried value bits.
    pub bits: u8,
    /// The carried bits; `None` only inside consistency replays (wildcard).
    pub content: Option<u16>,
}

/// One round message from one agent to another.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Payload {
    pub graph: Arc<GraphWire>,
    pub newepoch: Option<NewEpochWire>,
    /// Whether the variant attaches a fresh random tag to this message.
    pub has_tag: bool,
    /// The tag value; `None` only inside consistency replays.
    pub tag: Option<u64>,
}

impl Payload {
    pub fn graph_only(graph: Arc<GraphWire>) -> Self {
        Payload {
            graph,
            newepoch: None,
            has_tag: false,
            tag: None,
        }
    }

    /// Serialized size in bytes, without materializing the encoding.
    pub fn encoded_len(&self) -> usize {
        let mut len = 4 + 3 * self.graph.labels.len() + 4 + 10 * self.graph.tags.len() + 1 + 1;
        if self.newepoch.is_some() {
            len += 1 + 2 + 1 + 2;
        }
        if self.has_tag {
            len += 8;
        }
        len
    }

    /// Deterministic byte encoding. Panics on replay wildcards; only real
    /// payloads are ever serialized.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend((self.graph.labels.len() as u32).to_be_bytes());
        for (idx, label) in &self.graph.labels {
            out.extend(idx.to_be_bytes());
            out.push(*label);
        }
        out.extend((self.graph.tags.len() as u32).to_be_bytes());
        for (idx, tag) in &self.graph.tags {
            out.extend(idx.to_be_bytes());
            out.extend(tag.expect("concrete tag").to_be_bytes());
        }
        match &self.newepoch {
            None => out.push(0),
            Some(ne) => {
                out.push(1);
                out.push(ne.part as u8);
                out.extend((ne.epoch_sender.0 as u16).to_be_bytes());
                out.push(ne.bits);
                out.extend(ne.content.expect("concrete content").to_be_bytes());
            }
        }
        if self.has_tag {
            out.push(1);
            out.extend(self.tag.expect("concrete tag").to_be_bytes());
        } else {
            out.push(0);
        }
        out
    }

    pub fn digest(&self) -> String {
        hex_digest(&self.encode())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let d = h.finalize();
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// Bits needed to represent the value domain; at least 2 since `|V| >= 3`.
pub fn value_bits(domain: usize) -> u8 {
    debug_assert!(domain >= 3);
    let mut bits = 0u8;
    while (1usize << bits) < domain {
        bits += 1;
    }
    bits
}

/// Splits a value into (first, second) parts: the first carries the high
/// `ceil(B/2)` bits, the second the low `floor(B/2)` bits.
pub fn split_value(v: Value, domain: usize) -> ((u8, u16), (u8, u16)) {
    let bits = value_bits(domain);
    let low_bits = bits / 2;
    let high_bits = bits - low_bits;
    let high = (v.0 as u16) >> low_bits;
    let low = (v.0 as u16) & ((1 << low_bits) - 1);
    ((high_bits, high), (low_bits, low))
}

/// Reassembles a value from its two parts.
pub fn join_value(first: u16, second: u16, domain: usize) -> Value {
    let bits = value_bits(domain);
    let low_bits = bits / 2;
    Value(((first << low_bits) | second) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_join_roundtrip() {
        for domain in 3..=8 {
            for v in 0..domain as u8 {
                let ((_, hi), (_, lo)) = split_value(Value(v), domain);
                assert_eq!(join_value(hi, lo, domain), Value(v));
            }
        }
    }

    #[test]
    fn split_is_nontrivial() {
        // with |V| = 4 the two one-bit halves really partition the value
        let ((hb, hi), (lb, lo)) = split_value(Value(0b10), 4);
        assert_eq!((hb, lb), (1, 1));
        assert_eq!((hi, lo), (1, 0));
    }

    #[test]
    fn encoding_is_deterministic_and_sized() {
        let p = Payload {
            graph: Arc::new(GraphWire {
                labels: vec![(0, 1), (5, 2)],
                tags: vec![(3, Some(77))],
            }),
            newepoch: Some(NewEpochWire {
                part: Part::First,
                epoch_sender: AgentId(2),
                bits: 1,
                content: Some(1),
            }),
            has_tag: true,
            tag: Some(42),
        };
        let a = p.encode();
        let b = p.encode();
        assert_eq!(a, b);
        assert_eq!(a.len(), p.encoded_len());
    }
}
