use crate::collectives::{TimelineEvent, VirtualTimeline};
use crate::error::{Error, Result};
use crate::gla::ModelDims;

/// Default throughput for [`ComputeCosts::from_flops`], in flops per
/// virtual second.
pub const DEFAULT_FLOP_RATE: f64 = 1e12;

/// Virtual compute time charged per chunk (per rank) for each kernel phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputeCosts {
    /// Local chunk state: `K^T V` plus the decayed carry.
    pub chunk_scan: f64,
    /// Intra-chunk masked scores.
    pub chunk_intra: f64,
    /// Inter-chunk `Q S` plus the score–value product.
    pub chunk_output: f64,
    /// One decayed state update `exp(d) ⊙ S + S'`.
    pub state_update: f64,
}

impl ComputeCosts {
    pub fn zero() -> Self {
        ComputeCosts { chunk_scan: 0.0, chunk_intra: 0.0, chunk_output: 0.0, state_update: 0.0 }
    }

    pub fn new(chunk_scan: f64, chunk_intra: f64, chunk_output: f64, state_update: f64) -> Result<Self> {
        let c = ComputeCosts { chunk_scan, chunk_intra, chunk_output, state_update };
        c.validate()?;
        Ok(c)
    }

    /// Multiply-add counts of the chunkwise kernel over `flop_rate`.
    pub fn from_flops(dims: ModelDims, chunk_len: usize, flop_rate: f64) -> Result<Self> {
        if !(flop_rate > 0.0 && flop_rate.is_finite()) {
            return Err(Error::Config(format!("flop rate must be > 0, got {flop_rate}")));
        }
        let (h, ek, ev, c) = (dims.heads as f64, dims.key_dim as f64, dims.value_dim as f64, chunk_len as f64);
        ComputeCosts::new(
            2.0 * h * c * ek * ev / flop_rate,
            2.0 * h * c * c * ek / flop_rate,
            (2.0 * h * c * ek * ev + 2.0 * h * c * c * ev) / flop_rate,
            2.0 * h * ek * ev / flop_rate,
        )
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("chunk_scan", self.chunk_scan),
            ("chunk_intra", self.chunk_intra),
            ("chunk_output", self.chunk_output),
            ("state_update", self.state_update),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::Config(format!("{name} cost must be >= 0, got {x}")));
            }
        }
        Ok(())
    }

    /// Whole-shard forward work of one rank with `n_chunks` chunks,
    /// including the single boundary update.
    pub fn rank_forward(&self, n_chunks: usize) -> f64 {
        n_chunks as f64 * (self.chunk_scan + self.chunk_intra + self.chunk_output) + self.state_update
    }
}

impl Default for ComputeCosts {
    fn default() -> Self {
        ComputeCosts::zero()
    }
}

/// Virtual durations of the four ZeCO forward phases on one rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseCosts {
    pub local_scan: f64,
    pub all_scan: f64,
    pub intra: f64,
    pub outputs: f64,
}

impl PhaseCosts {
    /// Communication not hidden under the intra-chunk phase.
    pub fn exposed_comm(&self) -> f64 {
        (self.all_scan - self.intra).max(0.0)
    }

    pub fn total(&self) -> f64 {
        self.local_scan + self.all_scan.max(self.intra) + self.outputs
    }
}

/// Two-stream ZeCO forward timeline for one rank: the local scan, then the
/// All-Scan on the communication stream alongside the intra-chunk phase,
/// then outputs after both streams meet.
pub fn overlap_schedule(phases: PhaseCosts) -> Result<VirtualTimeline> {
    let PhaseCosts { local_scan, all_scan, intra, outputs } = phases;
    for (name, x) in [("local_scan", local_scan), ("all_scan", all_scan), ("intra", intra), ("outputs", outputs)] {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::Config(format!("phase {name} has cost {x}")));
        }
    }
    let ev =
        |label: &str, start: f64, dur: f64| TimelineEvent { rank: 0, label: label.into(), start, end: start + dur };
    let meet = local_scan + all_scan.max(intra);
    let events = vec![
        ev("compute:local_scan", 0.0, local_scan),
        ev("comm:all_scan", local_scan, all_scan),
        ev("compute:intra", local_scan, intra),
        ev("compute:outputs", meet, outputs),
    ];
    Ok(VirtualTimeline::new(events.into_iter().filter(|e| e.end > e.start).collect()))
}
