//! Chunkwise forward kernels: local state scan, global correction and
//! per-chunk outputs with lazy correction of the incoming state.

use super::{check_log_decays, decayed_add_rows, ChunkScalings, CumDecay, ModelDims, SeqShard, State};
use crate::error::{dims_err, Result};
use crate::tensor::{Real, Tensor};

/// Inclusive log-space prefix sums of one chunk's decays, `[C * ek]`.
pub(crate) fn chunk_log_prefix<T: Real>(g_head: &[T], t0: usize, chunk: usize, ek: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(chunk * ek);
    let mut acc = vec![T::zero(); ek];
    for j in 0..chunk {
        let g = &g_head[(t0 + j) * ek..(t0 + j + 1) * ek];
        for (a, &x) in acc.iter_mut().zip(g) {
            *a = *a + x;
        }
        out.extend_from_slice(&acc);
    }
    out
}

/// Decay scalings of one chunk given its log-decays `[h, C, ek]`.
pub fn chunk_scalings<T: Real>(g_chunk: &Tensor<T>) -> Result<ChunkScalings<T>> {
    let shape = g_chunk.shape();
    if shape.len() != 3 {
        return Err(dims_err!("chunk log-decays must be [h, C, ek], got {:?}", shape));
    }
    check_log_decays(g_chunk.data())?;
    let (heads, chunk, ek) = (shape[0], shape[1], shape[2]);
    let mut gamma = Tensor::zeros(&[heads, ek]);
    let mut big_gamma = Tensor::zeros(&[heads, chunk, ek]);
    let mut lambda = Tensor::zeros(&[heads, chunk, ek]);
    for h in 0..heads {
        let b = chunk_log_prefix(g_chunk.outer(h), 0, chunk, ek);
        let total = &b[(chunk - 1) * ek..];
        for (x, &t) in gamma.outer_mut(h).iter_mut().zip(total) {
            *x = t.exp();
        }
        let bg = big_gamma.outer_mut(h);
        for j in 0..chunk {
            for c in 0..ek {
                bg[j * ek + c] = (total[c] - b[j * ek + c]).exp();
            }
        }
        for (x, &bj) in lambda.outer_mut(h).iter_mut().zip(&b) {
            *x = bj.exp();
        }
    }
    Ok(ChunkScalings { gamma, big_gamma, lambda })
}

/// Chunk states computed from a zero initial state.
#[derive(Debug, Clone)]
pub struct LocalScan<T> {
    /// `S_[n]`, `n = 0..=N`, with `S_[0] = 0`.
    pub states: Vec<State<T>>,
    /// Log cumulative decay from the shard start to boundary `n`.
    pub cumdecay: Vec<CumDecay<T>>,
}

impl<T: Real> LocalScan<T> {
    pub fn last_state(&self) -> &State<T> {
        self.states.last().expect("scan has N+1 states")
    }

    pub fn total_decay(&self) -> &CumDecay<T> {
        self.cumdecay.last().expect("scan has N+1 decays")
    }
}

/// `S_[n] = (γ_[n]^T 1) ⊙ S_[n-1] + (K_[n] ⊙ Γ_[n])^T V_[n]` from `S_[0] = 0`,
/// together with the log cumulative decays.
pub fn local_state_scan<T: Real>(shard: &SeqShard<T>) -> Result<LocalScan<T>> {
    scan_from(shard, &State::zeros(shard.dims))
}

/// Chunk recurrence from an arbitrary initial state.
pub(crate) fn scan_from<T: Real>(shard: &SeqShard<T>, init: &State<T>) -> Result<LocalScan<T>> {
    shard.check_decays()?;
    init.check_dims(shard.dims)?;
    let ModelDims { heads, key_dim: ek, value_dim: ev } = shard.dims;
    let chunk = shard.layout.chunk_len;
    let n_chunks = shard.layout.num_chunks();

    let mut states = Vec::with_capacity(n_chunks + 1);
    let mut cumdecay = Vec::with_capacity(n_chunks + 1);
    states.push(init.clone());
    cumdecay.push(CumDecay::identity(shard.dims));

    let mut totals = vec![T::zero(); heads * ek];
    for n in 0..n_chunks {
        let t0 = n * chunk;
        let mut next = states[n].clone();
        for h in 0..heads {
            let b = chunk_log_prefix(shard.g.outer(h), t0, chunk, ek);
            let total = &b[(chunk - 1) * ek..];
            totals[h * ek..(h + 1) * ek].copy_from_slice(total);
            let s = &mut next.as_mut_slice()[h * ek * ev..(h + 1) * ek * ev];
            let k = shard.k.outer(h);
            let v = shard.v.outer(h);
            for c in 0..ek {
                let row = &mut s[c * ev..(c + 1) * ev];
                let decay = total[c].exp();
                for x in row.iter_mut() {
                    *x = decay * *x;
                }
                for j in 0..chunk {
                    let kc = k[(t0 + j) * ek + c] * (total[c] - b[j * ek + c]).exp();
                    let vj = &v[(t0 + j) * ev..(t0 + j + 1) * ev];
                    for (x, &vv) in row.iter_mut().zip(vj) {
                        *x = *x + kc * vv;
                    }
                }
            }
        }
        states.push(next);
        cumdecay.push(cumdecay[n].plus(&totals));
    }
    Ok(LocalScan { states, cumdecay })
}

/// Corrects local chunk states into global ones:
/// `out[n] = (exp(cumdecay[n])^T 1) ⊙ prev + states[n]`.
pub fn global_correct<T: Real>(
    states: &[State<T>],
    cumdecay: &[CumDecay<T>],
    prev: &State<T>,
) -> Result<Vec<State<T>>> {
    if states.len() != cumdecay.len() || states.is_empty() {
        return Err(dims_err!("{} states vs {} cumulative decays", states.len(), cumdecay.len()));
    }
    states.iter().zip(cumdecay).map(|(s, d)| s.decayed_add(d, prev)).collect()
}

/// Masked intra-chunk score matrices for every chunk and head, computed
/// ahead of the outputs so they can overlap the state exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct IntraScores<T> {
    heads: usize,
    chunk: usize,
    /// `[n * heads + h]` holds a row-major `C × C` matrix.
    blocks: Vec<Vec<T>>,
}

impl<T: Real> IntraScores<T> {
    pub fn num_chunks(&self) -> usize {
        self.blocks.len() / self.heads.max(1)
    }

    /// Row-major `C × C` scores of chunk `n`, head `h`.
    pub fn block(&self, n: usize, h: usize) -> &[T] {
        &self.blocks[n * self.heads + h]
    }
}

/// Intra-chunk scores `P[j, i] = Σ_c q_jc k_ic exp(b_jc − b_ic)`, `i ≤ j`.
pub fn intra_precompute<T: Real>(shard: &SeqShard<T>) -> Result<IntraScores<T>> {
    shard.check_decays()?;
    let ModelDims { heads, key_dim: ek, .. } = shard.dims;
    let chunk = shard.layout.chunk_len;
    let mut blocks = Vec::with_capacity(shard.layout.num_chunks() * heads);
    for n in 0..shard.layout.num_chunks() {
        let t0 = n * chunk;
        for h in 0..heads {
            let b = chunk_log_prefix(shard.g.outer(h), t0, chunk, ek);
            let mut scores = vec![T::zero(); chunk * chunk];
            intra_scores(&shard.q.outer(h)[t0 * ek..], &shard.k.outer(h)[t0 * ek..], &b, chunk, ek, &mut scores);
            blocks.push(scores);
        }
    }
    Ok(IntraScores { heads, chunk, blocks })
}

/// Per-chunk outputs: `O = (Q⊙Λ)(S_[n-1] + exp(γ̃_[n-1]) ⊙ prev) + [(Q⊙Λ)(K/Λ)^T ⊙ M] V`,
/// with `M` lower-triangular inclusive.
pub fn forward_outputs<T: Real>(
    shard: &SeqShard<T>,
    states: &[State<T>],
    cumdecay: &[CumDecay<T>],
    prev: &State<T>,
) -> Result<Tensor<T>> {
    let scores = intra_precompute(shard)?;
    forward_outputs_with(shard, states, cumdecay, prev, &scores)
}

/// [`forward_outputs`] with intra-chunk scores supplied by the caller.
pub fn forward_outputs_with<T: Real>(
    shard: &SeqShard<T>,
    states: &[State<T>],
    cumdecay: &[CumDecay<T>],
    prev: &State<T>,
    scores: &IntraScores<T>,
) -> Result<Tensor<T>> {
    shard.check_decays()?;
    prev.check_dims(shard.dims)?;
    let n_chunks = shard.layout.num_chunks();
    if states.len() != n_chunks + 1 || cumdecay.len() != n_chunks + 1 {
        return Err(dims_err!(
            "expected {} states and decays, got {} and {}",
            n_chunks + 1,
            states.len(),
            cumdecay.len()
        ));
    }
    let ModelDims { heads, key_dim: ek, value_dim: ev } = shard.dims;
    let chunk = shard.layout.chunk_len;
    if scores.heads != heads || scores.chunk != chunk || scores.num_chunks() != n_chunks {
        return Err(dims_err!("intra scores do not match the shard layout"));
    }
    let mut out = Tensor::zeros(&[heads, shard.seq_len(), ev]);
    let mut corrected = vec![T::zero(); ek * ev];

    for n in 0..n_chunks {
        let t0 = n * chunk;
        for h in 0..heads {
            let hs = h * ek * ev..(h + 1) * ek * ev;
            corrected.copy_from_slice(&states[n].as_slice()[hs.clone()]);
            let decay = &cumdecay[n].log_values().outer(h);
            decayed_add_rows(&mut corrected, decay, &prev.as_slice()[hs], ev);

            let b = chunk_log_prefix(shard.g.outer(h), t0, chunk, ek);
            let q = shard.q.outer(h);
            let v = shard.v.outer(h);
            let scores = scores.block(n, h);

            let o = out.outer_mut(h);
            for j in 0..chunk {
                let oj = &mut o[(t0 + j) * ev..(t0 + j + 1) * ev];
                for c in 0..ek {
                    let qt = q[(t0 + j) * ek + c] * b[j * ek + c].exp();
                    for (x, &s) in oj.iter_mut().zip(&corrected[c * ev..(c + 1) * ev]) {
                        *x = *x + qt * s;
                    }
                }
                for i in 0..=j {
                    let p = scores[j * chunk + i];
                    for (x, &vv) in oj.iter_mut().zip(&v[(t0 + i) * ev..(t0 + i + 1) * ev]) {
                        *x = *x + p * vv;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Masked decayed scores `P[j, i] = Σ_c q_jc k_ic exp(b_jc − b_ic)` for `i ≤ j`;
/// entries above the diagonal are zero. `q`/`k` start at the chunk's first token.
pub(crate) fn intra_scores<T: Real>(q: &[T], k: &[T], b: &[T], chunk: usize, ek: usize, scores: &mut [T]) {
    for j in 0..chunk {
        for i in 0..chunk {
            scores[j * chunk + i] = if i > j {
                T::zero()
            } else {
                (0..ek).map(|c| q[j * ek + c] * k[i * ek + c] * (b[j * ek + c] - b[i * ek + c]).exp()).sum()
            };
        }
    }
}

/// Result of a full chunkwise forward on one shard.
#[derive(Debug, Clone)]
pub struct ChunkwiseForward<T> {
    pub outputs: Tensor<T>,
    pub scan: LocalScan<T>,
}

/// Local scan followed by outputs against the incoming state `prev`.
pub fn chunkwise_forward<T: Real>(shard: &SeqShard<T>, prev: &State<T>) -> Result<ChunkwiseForward<T>> {
    let scan = local_state_scan(shard)?;
    let outputs = forward_outputs(shard, &scan.states, &scan.cumdecay, prev)?;
    Ok(ChunkwiseForward { outputs, scan })
}
