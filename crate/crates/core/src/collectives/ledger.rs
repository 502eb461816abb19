use std::collections::BTreeMap;
use std::fmt::Write;

/// Sent and received element counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub sent: u64,
    pub received: u64,
}

/// Per-rank, per-primitive communication volume in elements.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VolumeLedger {
    ranks: usize,
    entries: BTreeMap<(usize, String), Counts>,
}

impl VolumeLedger {
    pub fn new(ranks: usize) -> Self {
        VolumeLedger { ranks, entries: BTreeMap::new() }
    }

    pub fn ranks(&self) -> usize {
        self.ranks
    }

    pub(crate) fn record_sent(&mut self, rank: usize, primitive: &str, n: u64) {
        self.entries.entry((rank, primitive.to_string())).or_default().sent += n;
    }

    pub(crate) fn record_received(&mut self, rank: usize, primitive: &str, n: u64) {
        self.entries.entry((rank, primitive.to_string())).or_default().received += n;
    }

    pub(crate) fn merge(&mut self, other: &VolumeLedger) {
        self.ranks = self.ranks.max(other.ranks);
        for (key, c) in &other.entries {
            let e = self.entries.entry(key.clone()).or_default();
            e.sent += c.sent;
            e.received += c.received;
        }
    }

    pub fn counts(&self, rank: usize, primitive: &str) -> Counts {
        self.entries.get(&(rank, primitive.to_string())).copied().unwrap_or_default()
    }

    pub fn sent(&self, rank: usize) -> u64 {
        self.rank_entries(rank).map(|c| c.sent).sum()
    }

    pub fn received(&self, rank: usize) -> u64 {
        self.rank_entries(rank).map(|c| c.received).sum()
    }

    fn rank_entries(&self, rank: usize) -> impl Iterator<Item = &Counts> {
        self.entries.iter().filter(move |((r, _), _)| *r == rank).map(|(_, c)| c)
    }

    pub fn total_sent(&self) -> u64 {
        self.entries.values().map(|c| c.sent).sum()
    }

    pub fn total_received(&self) -> u64 {
        self.entries.values().map(|c| c.received).sum()
    }

    /// Distinct primitive labels, sorted.
    pub fn primitives(&self) -> Vec<String> {
        let mut p: Vec<String> = self.entries.keys().map(|(_, p)| p.clone()).collect();
        p.sort();
        p.dedup();
        p
    }

    pub fn primitive_totals(&self, primitive: &str) -> Counts {
        self.entries.iter().filter(|((_, p), _)| p == primitive).fold(Counts::default(), |acc, (_, c)| Counts {
            sent: acc.sent + c.sent,
            received: acc.received + c.received,
        })
    }

    /// `rank,primitive,sent_elements,received_elements`, one row per recorded pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,primitive,sent_elements,received_elements\n");
        for ((rank, prim), c) in &self.entries {
            writeln!(out, "{rank},{prim},{},{}", c.sent, c.received).unwrap();
        }
        out
    }
}
