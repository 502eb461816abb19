use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::StrategyKind;
use crate::collectives::{VirtualTimeline, VolumeLedger};
use crate::error::{Error, Result};
use crate::gla::{CumDecay, GradShard, State};
use crate::tensor::{Real, Tensor};

/// What one rank keeps from the forward pass for its backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedRank<T> {
    /// Global state entering the rank.
    pub prev: State<T>,
    /// Local cumulative decays `γ̃_[0..=N]`.
    pub cumdecay: Vec<CumDecay<T>>,
    /// Local chunk states, kept only when saving everything.
    pub local_states: Option<Vec<State<T>>>,
}

/// Everything a forward or backward run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts<T> {
    pub strategy: StrategyKind,
    pub ranks: usize,
    /// `[h, P·L, e_v]`, forward runs only.
    pub outputs: Option<Tensor<T>>,
    /// Full-length gradients, backward runs only.
    pub grads: Option<GradShard<T>>,
    pub ledger: VolumeLedger,
    pub timeline: VirtualTimeline,
    /// `P + 1` rank-boundary states: forward global states at each rank
    /// start plus the final one, or backward state gradients in the same
    /// positions.
    pub boundary_states: Vec<State<T>>,
    /// Per-rank forward residue; `None` for backward runs.
    pub saved: Option<Vec<SavedRank<T>>>,
}

impl<T: Real> RunArtifacts<T> {
    pub fn outputs(&self) -> Result<&Tensor<T>> {
        self.outputs.as_ref().ok_or_else(|| Error::State("run produced no outputs".into()))
    }

    pub fn grads(&self) -> Result<&GradShard<T>> {
        self.grads.as_ref().ok_or_else(|| Error::State("run produced no gradients".into()))
    }

    pub fn makespan(&self) -> f64 {
        self.timeline.makespan()
    }

    /// Makespan minus the busiest rank's compute time: the part of the run
    /// spent waiting on communication or on other ranks.
    pub fn comm_exposed(&self) -> f64 {
        let compute = (0..self.ranks).map(|r| self.timeline.busy(r, "compute:")).fold(0.0, f64::max);
        (self.makespan() - compute).max(0.0)
    }

    /// Writes tensors in the binary tensor format plus `ledger.csv` and
    /// `timeline.json` into `dir`; returns the written paths.
    pub fn export(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put_tensor = |name: &str, t: &Tensor<T>| -> Result<()> {
            let path = dir.join(format!("{name}.bin"));
            t.write_binary(BufWriter::new(File::create(&path)?))?;
            written.push(path);
            Ok(())
        };
        if let Some(o) = &self.outputs {
            put_tensor("outputs", o)?;
        }
        if let Some(g) = &self.grads {
            for (name, t) in g.tensors() {
                put_tensor(name, t)?;
            }
        }
        let ledger = dir.join("ledger.csv");
        std::fs::write(&ledger, self.ledger.to_csv())?;
        let timeline = dir.join("timeline.json");
        std::fs::write(&timeline, self.timeline.to_json())?;
        written.extend([ledger, timeline]);
        Ok(written)
    }
}
