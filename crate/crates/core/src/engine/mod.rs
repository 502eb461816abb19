//! Sequence-parallel forward and backward passes over a [`VirtualCluster`].
//!
//! Four strategies share one numeric kernel and differ only in how the
//! boundary state travels between ranks:
//!
//! - `ZeCO`: one pipelined All-Scan, overlapped with intra-chunk work.
//! - `LASP-1`: a serial point-to-point relay; rank `p` waits for rank `p−1`.
//! - `LASP-2`: an all-gather of final local states followed by a local
//!   decay-weighted reduction.
//! - `SingleDevice`: the chunkwise kernel over the whole sequence.

mod artifacts;
mod backward;
mod costs;
mod forward;
mod sequence;

pub use artifacts::{RunArtifacts, SavedRank};
pub use backward::run_backward;
pub use costs::{overlap_schedule, ComputeCosts, PhaseCosts, DEFAULT_FLOP_RATE};
pub use forward::{materialize_states, run_forward};
pub use sequence::GlobalSequence;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::collectives::PipelineConfig;
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "zeco")]
    ZeCO,
    #[serde(rename = "lasp1")]
    Lasp1,
    #[serde(rename = "lasp2")]
    Lasp2,
    #[serde(rename = "single")]
    SingleDevice,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] =
        [StrategyKind::ZeCO, StrategyKind::Lasp1, StrategyKind::Lasp2, StrategyKind::SingleDevice];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::ZeCO => "zeco",
            StrategyKind::Lasp1 => "lasp1",
            StrategyKind::Lasp2 => "lasp2",
            StrategyKind::SingleDevice => "single",
        }
    }

    pub fn is_distributed(self) -> bool {
        self != StrategyKind::SingleDevice
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}; expected zeco, lasp1, lasp2 or single")))
    }
}

/// Knobs shared by forward and backward runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub pipe: PipelineConfig,
    pub costs: ComputeCosts,
    /// Keep every local chunk state from the forward pass instead of
    /// recomputing them in the backward pass.
    pub save_all_states: bool,
}

impl RunOptions {
    pub fn new(pipe: PipelineConfig, costs: ComputeCosts) -> Self {
        RunOptions { pipe, costs, save_all_states: false }
    }
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions::new(PipelineConfig::default(), ComputeCosts::zero())
    }
}
