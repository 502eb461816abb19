//! Sequence-parallel gated linear attention on a simulated cluster.
//!
//! - [`gla`]: recurrent oracle, chunkwise forward/backward kernels and a
//!   finite-difference gradient oracle.
//! - [`collectives`]: a deterministic virtual cluster with FIFO channels, an
//!   α–β network model, a volume ledger and the All-Scan, All-Gather,
//!   All-Reduce and point-to-point primitives.
//! - [`engine`]: ZeCO, LASP-1, LASP-2 and single-device forward/backward runs.
//! - [`cost`]: closed-form latency and volume/compute models.

pub mod collectives;
pub mod cost;
pub mod engine;
mod error;
pub mod gla;
pub mod instance;
pub mod tensor;

pub use collectives::{
    Direction, NetConfig, PipelineConfig, RankCtx, RankId, TimelineEvent, VirtualCluster, VirtualTimeline, VolumeLedger,
};
pub use engine::{GlobalSequence, RunArtifacts, RunOptions, StrategyKind};
pub use error::{Error, Result};
pub use gla::{ChunkScalings, CumDecay, GradShard, ModelDims, SeqShard, ShardLayout, State};
pub use tensor::{Precision, Real, Tensor};
