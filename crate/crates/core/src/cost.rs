//! Closed-form latency, strategy-time and volume/compute models.
//!
//! All functions are pure. Times are virtual seconds under the same α–β
//! model as the simulator; volumes count elements.

use std::fmt;
use std::str::FromStr;

use crate::collectives::NetConfig;
use crate::engine::ComputeCosts;
use crate::error::{Error, Result};
use crate::gla::ModelDims;

/// Inputs shared by every model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub net: NetConfig,
    pub dims: ModelDims,
    pub ranks: usize,
    pub blocks: usize,
    pub per_chunk: ComputeCosts,
    /// Chunks per rank.
    pub chunks: usize,
    /// Tokens per rank.
    pub seq_per_rank: usize,
}

impl CostParams {
    pub fn new(
        net: NetConfig,
        dims: ModelDims,
        ranks: usize,
        blocks: usize,
        per_chunk: ComputeCosts,
        seq_per_rank: usize,
        chunk_len: usize,
    ) -> Result<Self> {
        if ranks == 0 || blocks == 0 {
            return Err(Error::Config(format!("need P >= 1 and K >= 1, got P={ranks} K={blocks}")));
        }
        if chunk_len == 0 || seq_per_rank == 0 || !seq_per_rank.is_multiple_of(chunk_len) {
            return Err(Error::Layout(format!("chunk {chunk_len} does not divide {seq_per_rank} tokens")));
        }
        per_chunk.validate()?;
        Ok(CostParams { net, dims, ranks, blocks, per_chunk, chunks: seq_per_rank / chunk_len, seq_per_rank })
    }

    /// `S = h · e_k · e_v`.
    pub fn state_elems(&self) -> usize {
        self.dims.state_len()
    }

    /// `τ(S)`.
    pub fn tau_state(&self) -> f64 {
        tau(self.state_elems() as f64, &self.net)
    }

    /// Per-rank compute of a perfectly parallel run.
    pub fn t_ideal(&self) -> f64 {
        let c = &self.per_chunk;
        self.chunks as f64 * (c.chunk_scan + c.chunk_intra + c.chunk_output)
    }

    /// Intra-chunk work available to hide the All-Scan under.
    pub fn overlappable(&self) -> f64 {
        self.chunks as f64 * self.per_chunk.chunk_intra
    }
}

/// `τ(s) = α + s/β`.
pub fn tau(size: f64, net: &NetConfig) -> f64 {
    net.tau(size)
}

/// Pipelined All-Scan latency `(K + P − 1) · τ(S/K)`; zero for one rank.
/// At `α = 0` this is `τ(S) + (P − 1) τ(S)/K`.
pub fn t_allscan(p: &CostParams) -> f64 {
    if p.ranks == 1 {
        return 0.0;
    }
    (p.blocks + p.ranks - 1) as f64 * tau(p.state_elems() as f64 / p.blocks as f64, &p.net)
}

/// Makespan of the chain schedule the simulator runs: the last block leaves
/// rank 0 after `K` transfers and needs `P − 2` more hops, `(K + P − 2) · τ(S/K)`.
/// Differs from [`t_allscan`] by exactly one block transfer.
pub fn t_allscan_chain(p: &CostParams) -> f64 {
    if p.ranks == 1 {
        return 0.0;
    }
    (p.blocks + p.ranks - 2) as f64 * tau(p.state_elems() as f64 / p.blocks as f64, &p.net)
}

/// Strategy-time models plus the volume/compute table for `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub t_allscan: f64,
    pub t_zeco: f64,
    pub t_lasp1: f64,
    pub t_lasp2: f64,
    pub rows: Vec<TableEntry>,
}

impl CostReport {
    pub fn t_model(&self, method: Method) -> Option<f64> {
        match method {
            Method::ZeCO => Some(self.t_zeco),
            Method::Lasp1 => Some(self.t_lasp1),
            Method::Lasp2 => Some(self.t_lasp2),
            Method::Ulysses | Method::MegatronCp => None,
        }
    }
}

/// `t_zeco = t_ideal − t_overlap + τ(S)`, `t_lasp1 = P (t_ideal + τ(S))`,
/// `t_lasp2 = t_ideal + P τ(S)`.
pub fn t_strategies(p: &CostParams, t_ideal: f64, t_overlap: f64) -> Result<CostReport> {
    if !(t_overlap >= 0.0 && t_ideal >= 0.0) {
        return Err(Error::Config(format!("times must be >= 0, got ideal={t_ideal} overlap={t_overlap}")));
    }
    if t_overlap > t_ideal {
        return Err(Error::Config(format!("overlap {t_overlap} exceeds ideal time {t_ideal}")));
    }
    let tau_s = p.tau_state();
    let ranks = p.ranks as f64;
    Ok(CostReport {
        t_allscan: t_allscan(p),
        t_zeco: t_ideal - t_overlap + tau_s,
        t_lasp1: ranks * (t_ideal + tau_s),
        t_lasp2: t_ideal + ranks * tau_s,
        rows: Method::ALL.iter().map(|&m| volume_compute_table(m, p)).collect(),
    })
}

/// [`t_strategies`] with `t_ideal` from the per-chunk costs and the overlap
/// bounded by both the intra-chunk work and the All-Scan latency.
pub fn cost_report(p: &CostParams) -> Result<CostReport> {
    let overlap = p.overlappable().min(t_allscan(p));
    t_strategies(p, p.t_ideal(), overlap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ulysses,
    MegatronCp,
    Lasp1,
    Lasp2,
    ZeCO,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ulysses, Method::MegatronCp, Method::Lasp1, Method::Lasp2, Method::ZeCO];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ulysses => "ulysses",
            Method::MegatronCp => "megatron_cp",
            Method::Lasp1 => "lasp1",
            Method::Lasp2 => "lasp2",
            Method::ZeCO => "zeco",
        }
    }

    /// Whether the simulator implements the method.
    pub fn is_simulated(self) -> bool {
        matches!(self, Method::Lasp1 | Method::Lasp2 | Method::ZeCO)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// `poly + log2_p_coeff · log2(P)` abstract operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComputeCost {
    pub poly: u128,
    pub log2_p_coeff: u128,
    pub ranks: usize,
}

impl ComputeCost {
    pub fn value(&self) -> f64 {
        self.poly as f64 + self.log2_p_coeff as f64 * (self.ranks as f64).log2()
    }

    /// Exact integer value when `log2(P)` is an integer.
    pub fn exact(&self) -> Option<u128> {
        if self.log2_p_coeff == 0 {
            return Some(self.poly);
        }
        self.ranks.is_power_of_two().then(|| self.poly + self.log2_p_coeff * self.ranks.trailing_zeros() as u128)
    }
}

impl fmt::Display for ComputeCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.exact() {
            Some(v) => write!(f, "{v}"),
            None => write!(f, "{}", self.value()),
        }
    }
}

/// One row of the volume/compute comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableEntry {
    pub method: Method,
    /// Table volume in elements.
    pub volume: u128,
    /// Per-rank volume a physical run moves, for the simulated methods:
    /// one state for ZeCO and LASP-1, `P − 1` states received for LASP-2.
    pub physical_volume: Option<u128>,
    pub compute: ComputeCost,
}

/// Table forms with `D = h · e_k` and `e = e_v`, so `De` is one state:
///
/// | method | volume | compute |
/// |---|---|---|
/// | Ulysses | `4LD` | `L²DP` |
/// | Megatron CP | `2PLD` | `L²DP` |
/// | LASP-1 | `PDe` | `PLDe` |
/// | LASP-2 | `PDe` | `LDe + log(P)De + NDe` |
/// | ZeCO | `De` | `LDe + NDe + Nd` |
///
/// The ZeCO `Nd` term takes `d = D`.
pub fn volume_compute_table(method: Method, p: &CostParams) -> TableEntry {
    let l = p.seq_per_rank as u128;
    let pr = p.ranks as u128;
    let n = p.chunks as u128;
    let d = (p.dims.heads * p.dims.key_dim) as u128;
    let de = d * p.dims.value_dim as u128;
    let cost = |poly, log2_p_coeff| ComputeCost { poly, log2_p_coeff, ranks: p.ranks };
    let (volume, physical_volume, compute) = match method {
        Method::Ulysses => (4 * l * d, None, cost(l * l * d * pr, 0)),
        Method::MegatronCp => (2 * pr * l * d, None, cost(l * l * d * pr, 0)),
        Method::Lasp1 => (pr * de, Some(de), cost(pr * l * de, 0)),
        Method::Lasp2 => (pr * de, Some((pr - 1) * de), cost(l * de + n * de, de)),
        Method::ZeCO => (de, Some(de), cost(l * de + n * de + n * d, 0)),
    };
    TableEntry { method, volume, physical_volume, compute }
}

/// Table as CSV: `method,P,L,D,e,N,volume_elements,compute_ops,t_model_seconds`.
/// Methods without a time model leave the last field empty.
pub fn table_csv(p: &CostParams) -> Result<String> {
    let report = cost_report(p)?;
    let mut out = String::from("method,P,L,D,e,N,volume_elements,compute_ops,t_model_seconds\n");
    for row in &report.rows {
        let t = report.t_model(row.method).map(|t| t.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.method,
            p.ranks,
            p.seq_per_rank,
            p.dims.heads * p.dims.key_dim,
            p.dims.value_dim,
            p.chunks,
            row.volume,
            row.compute,
            t
        ));
    }
    Ok(out)
}
