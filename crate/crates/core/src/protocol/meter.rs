use std::collections::BTreeMap;

use serde::Serialize;

use super::message::MsgType;
use crate::error::Party;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Client to server.
    Up,
    /// Server to client.
    Down,
}

impl Direction {
    pub fn of(from: Party) -> Self {
        match from {
            Party::Server => Direction::Down,
            Party::Client(_) => Direction::Up,
        }
    }
}

/// Which phase a message belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    /// Gini initialization.
    Setup,
    Train(u64),
    Predict,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counter {
    pub bytes: u64,
    pub messages: u64,
}

impl Counter {
    fn add(&mut self, other: Counter) {
        self.bytes += other.bytes;
        self.messages += other.messages;
    }
}

/// Byte and message counts per bucket, message type and direction. Counts
/// are the exact serialized frame lengths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommMeter {
    counts: BTreeMap<Bucket, BTreeMap<(MsgType, Direction), Counter>>,
}

impl CommMeter {
    pub fn new() -> Self {
        CommMeter::default()
    }

    pub fn record(&mut self, bucket: Bucket, ty: MsgType, dir: Direction, bytes: usize) {
        let c = self.counts.entry(bucket).or_default().entry((ty, dir)).or_default();
        c.bytes += bytes as u64;
        c.messages += 1;
    }

    pub fn bucket(&self, bucket: Bucket) -> BTreeMap<(MsgType, Direction), Counter> {
        self.counts.get(&bucket).cloned().unwrap_or_default()
    }

    pub fn bytes(&self, bucket: Bucket, dir: Direction) -> u64 {
        self.counts
            .get(&bucket)
            .map(|m| m.iter().filter(|((_, d), _)| *d == dir).map(|(_, c)| c.bytes).sum())
            .unwrap_or(0)
    }

    pub fn by_type(&self) -> BTreeMap<MsgType, Counter> {
        let mut out: BTreeMap<MsgType, Counter> = BTreeMap::new();
        for m in self.counts.values() {
            for ((ty, _), c) in m {
                out.entry(*ty).or_default().add(*c);
            }
        }
        out
    }

    pub fn total(&self) -> Counter {
        let mut t = Counter::default();
        for c in self.by_type().values() {
            t.add(*c);
        }
        t
    }

    pub fn buckets(&self) -> impl Iterator<Item = &Bucket> {
        self.counts.keys()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_are_sums_of_counters() {
        let mut m = CommMeter::new();
        m.record(Bucket::Setup, MsgType::EncIndicator, Direction::Down, 100);
        m.record(Bucket::Train(1), MsgType::EncEmbedding, Direction::Up, 40);
        m.record(Bucket::Train(1), MsgType::EncEmbedding, Direction::Up, 60);
        m.record(Bucket::Train(1), MsgType::NoisyWeightedEnc, Direction::Down, 7);
        assert_eq!(m.bytes(Bucket::Train(1), Direction::Up), 100);
        assert_eq!(m.bytes(Bucket::Train(1), Direction::Down), 7);
        assert_eq!(m.by_type()[&MsgType::EncEmbedding], Counter { bytes: 100, messages: 2 });
        assert_eq!(m.total(), Counter { bytes: 207, messages: 4 });
        assert_eq!(CommMeter::new().total(), Counter::default());
    }
}
