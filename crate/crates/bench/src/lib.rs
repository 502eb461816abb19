//! Shared fixtures for the criterion benches.

use zeco_core::gla::{ModelDims, SeqShard, ShardLayout};
use zeco_core::instance::random_shard;
use zeco_core::Real;

/// Seeded shard of `len` tokens with `heads` heads of width `dim`.
pub fn shard<T: Real>(heads: usize, dim: usize, len: usize, chunk: usize) -> SeqShard<T> {
    random_shard(0x5eed, ModelDims::new(heads, dim, dim).unwrap(), ShardLayout::new(len, chunk).unwrap())
}
