//! A deterministic virtual cluster.
//!
//! `P` logical ranks run as scoped threads and exchange payloads over FIFO
//! single-producer single-consumer channels. Time is virtual: every rank keeps
//! a compute-stream clock and a communication-stream clock, and a message of
//! `n` elements occupies its channel for `τ(n) = α + n/β`. Numeric results,
//! ledgers and timelines depend only on configuration and inputs, never on
//! thread scheduling.

mod cluster;
mod ledger;
mod ops;
mod timeline;

pub use cluster::{RankCtx, RunRecord, VirtualCluster};
pub use ledger::{Counts, VolumeLedger};
pub use timeline::{TimelineEvent, VirtualTimeline};

use crate::error::{Error, Result};

/// α–β network model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    /// Per-message latency α in virtual seconds.
    pub latency: f64,
    /// Bandwidth β in elements per virtual second.
    pub bandwidth: f64,
    /// Bytes per element; informational only.
    pub element_bytes: usize,
    /// Virtual compute time charged for each in-flight All-Scan block update.
    pub block_update_cost: f64,
}

impl NetConfig {
    pub fn new(latency: f64, bandwidth: f64) -> Result<Self> {
        if !(latency >= 0.0 && latency.is_finite()) {
            return Err(Error::Config(format!("latency must be >= 0, got {latency}")));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!("bandwidth must be > 0, got {bandwidth}")));
        }
        Ok(NetConfig { latency, bandwidth, element_bytes: 8, block_update_cost: 0.0 })
    }

    pub fn with_block_update_cost(mut self, cost: f64) -> Result<Self> {
        if !(cost >= 0.0 && cost.is_finite()) {
            return Err(Error::Config(format!("block update cost must be >= 0, got {cost}")));
        }
        self.block_update_cost = cost;
        Ok(self)
    }

    /// `τ(n) = α + n/β`.
    pub fn tau(&self, elements: f64) -> f64 {
        self.latency + elements / self.bandwidth
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { latency: 0.0, bandwidth: 1e9, element_bytes: 8, block_update_cost: 0.0 }
    }
}

/// Index of a rank in `0..P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RankId(pub usize);

/// Number of blocks All-Scan splits the key dimension into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PipelineConfig {
    num_blocks: usize,
}

impl PipelineConfig {
    pub fn new(num_blocks: usize) -> Result<Self> {
        if num_blocks == 0 {
            return Err(Error::Config("pipeline needs at least one block".into()));
        }
        Ok(PipelineConfig { num_blocks })
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    pub fn check(&self, key_dim: usize) -> Result<()> {
        if !key_dim.is_multiple_of(self.num_blocks) {
            return Err(Error::Config(format!("{} blocks do not divide key_dim {key_dim}", self.num_blocks)));
        }
        Ok(())
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { num_blocks: 1 }
    }
}

/// Scan direction: forward passes towards higher ranks, backward towards lower.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Fwd,
    Bwd,
}

impl Direction {
    pub fn primitive(self) -> &'static str {
        match self {
            Direction::Fwd => "all_scan_fwd",
            Direction::Bwd => "all_scan_bwd",
        }
    }
}

#[cfg(test)]
mod tests;
