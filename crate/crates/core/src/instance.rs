//! Seeded instance generation.
//!
//! Q, K, V are drawn from U(-1, 1). Decays α are drawn so that
//! `ln α ~ U(ln 0.9, ln 0.999)`, which keeps states well-conditioned over
//! thousands of tokens. Streams are ChaCha8 seeded from a `u64`, so the same
//! seed yields the same instance on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gla::{ModelDims, SeqShard, ShardLayout};
use crate::tensor::{Real, Tensor};

/// Default decay interval `[α_lo, α_hi]`.
pub const DEFAULT_DECAY: (f64, f64) = (0.9, 0.999);

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_tensor<T: Real>(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(lo..hi))).collect();
    Tensor::from_vec(shape, data).expect("shape and data agree")
}

pub fn random_shard<T: Real>(seed: u64, dims: ModelDims, layout: ShardLayout) -> SeqShard<T> {
    random_shard_with(seed, dims, layout, DEFAULT_DECAY)
}

pub fn random_shard_with<T: Real>(seed: u64, dims: ModelDims, layout: ShardLayout, decay: (f64, f64)) -> SeqShard<T> {
    assert!(0.0 < decay.0 && decay.0 < decay.1 && decay.1 < 1.0, "decay range must lie in (0, 1)");
    let mut r = rng(seed);
    let ks = [dims.heads, layout.seq_len, dims.key_dim];
    let vs = [dims.heads, layout.seq_len, dims.value_dim];
    let q = uniform_tensor(&mut r, &ks, -1.0, 1.0);
    let k = uniform_tensor(&mut r, &ks, -1.0, 1.0);
    let v = uniform_tensor(&mut r, &vs, -1.0, 1.0);
    let g = uniform_tensor(&mut r, &ks, decay.0.ln(), decay.1.ln());
    SeqShard::new(q, k, v, g, layout, dims).expect("generated shard is valid")
}
