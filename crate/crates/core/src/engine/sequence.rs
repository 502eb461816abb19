use crate::error::{Error, Result};
use crate::gla::{ModelDims, SeqShard, ShardLayout};
use crate::instance::{random_shard_with, DEFAULT_DECAY};
use crate::tensor::Real;

/// A full-length sequence split evenly over `P` ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSequence<T> {
    full: SeqShard<T>,
    ranks: usize,
    rank_layout: ShardLayout,
}

impl<T: Real> GlobalSequence<T> {
    /// `full.layout.chunk_len` is the per-rank chunk length.
    pub fn new(full: SeqShard<T>, ranks: usize) -> Result<Self> {
        if ranks == 0 {
            return Err(Error::Layout("sequence needs at least one rank".into()));
        }
        let total = full.seq_len();
        if !total.is_multiple_of(ranks) {
            return Err(Error::Layout(format!("length {total} does not split over {ranks} ranks")));
        }
        let rank_layout = ShardLayout::new(total / ranks, full.layout.chunk_len)?;
        Ok(GlobalSequence { full, ranks, rank_layout })
    }

    /// Seeded instance of `P · L` tokens with default decay range.
    pub fn random(seed: u64, dims: ModelDims, ranks: usize, seq_per_rank: usize, chunk_len: usize) -> Result<Self> {
        let rank_layout = ShardLayout::new(seq_per_rank, chunk_len)?;
        let total = ShardLayout::new(ranks * rank_layout.seq_len, chunk_len)?;
        GlobalSequence::new(random_shard_with(seed, dims, total, DEFAULT_DECAY), ranks)
    }

    pub fn full(&self) -> &SeqShard<T> {
        &self.full
    }

    pub fn ranks(&self) -> usize {
        self.ranks
    }

    pub fn dims(&self) -> ModelDims {
        self.full.dims
    }

    pub fn rank_layout(&self) -> ShardLayout {
        self.rank_layout
    }

    pub fn total_len(&self) -> usize {
        self.full.seq_len()
    }

    /// Rank `p` owns tokens `[pL, (p+1)L)`.
    pub fn split(&self) -> Result<Vec<SeqShard<T>>> {
        let (l, c) = (self.rank_layout.seq_len, self.rank_layout.chunk_len);
        (0..self.ranks).map(|p| self.full.slice(p * l, l, c)).collect()
    }

    pub fn concat(parts: &[SeqShard<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Layout("concat of zero shards".into()))?;
        if parts.iter().any(|s| s.layout != first.layout) {
            return Err(Error::Layout("shards have different layouts".into()));
        }
        GlobalSequence::new(SeqShard::concat(parts, first.layout.chunk_len)?, parts.len())
    }
}
