//! Chunkwise backward pass.
//!
//! For every term of the loss the decay enters as `exp(B_t − B_s)` (query at
//! `t`, key at `s`) or `exp(B_t)` against the incoming state, where `B` is the
//! within-shard prefix sum of log-decays. Hence `∂L/∂B_t = q_t⊙dq_t − k_t⊙dk_t`
//! and `dG = revcum(∂L/∂B)`. When a successor consumes this shard's final
//! state, `S_final` also depends on `B_L`; that contributes
//! `rowsum(S_final ⊙ dS_next)` at the last token.

use super::chunk::{chunk_log_prefix, intra_scores, scan_from};
use super::{decayed_add_rows, global_correct, CumDecay, GradShard, ModelDims, SeqShard, State};
use crate::error::{dims_err, Result};
use crate::tensor::{Real, Tensor};

/// Inclusive reverse cumulative sum along the token axis of `[h, L, e]`.
pub fn revcum<T: Real>(da: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = da.shape();
    if shape.len() != 3 {
        return Err(dims_err!("revcum expects [h, L, e], got {:?}", shape));
    }
    let (heads, len, e) = (shape[0], shape[1], shape[2]);
    let mut out = da.clone();
    for h in 0..heads {
        let x = out.outer_mut(h);
        for t in (0..len.saturating_sub(1)).rev() {
            for c in 0..e {
                x[t * e + c] = x[t * e + c] + x[(t + 1) * e + c];
            }
        }
    }
    Ok(out)
}

/// Reverse state-gradient scan that depends only on local data.
#[derive(Debug, Clone)]
pub struct LocalGradScan<T> {
    /// Gradient of the local loss w.r.t. boundary state `n`, `n = 0..=N`;
    /// the last entry is zero.
    pub dstates: Vec<State<T>>,
    /// Log decay from boundary `n` to the shard end; the last entry is zero.
    pub rev_cumdecay: Vec<CumDecay<T>>,
}

impl<T: Real> LocalGradScan<T> {
    pub fn first_dstate(&self) -> &State<T> {
        &self.dstates[0]
    }

    pub fn total_decay(&self) -> &CumDecay<T> {
        &self.rev_cumdecay[0]
    }
}

/// `dS_[n-1] = (γ_[n]^T 1) ⊙ dS_[n] + (Q_[n] ⊙ Λ_[n])^T dO_[n]`, from `dS_[N] = 0`.
pub fn local_grad_scan<T: Real>(shard: &SeqShard<T>, d_out: &Tensor<T>) -> Result<LocalGradScan<T>> {
    check_cotangent(shard, d_out)?;
    shard.check_decays()?;
    let ModelDims { heads, key_dim: ek, value_dim: ev } = shard.dims;
    let chunk = shard.layout.chunk_len;
    let n_chunks = shard.layout.num_chunks();

    let mut dstates = vec![State::zeros(shard.dims); n_chunks + 1];
    let mut rev = vec![CumDecay::identity(shard.dims); n_chunks + 1];
    let mut totals = vec![T::zero(); heads * ek];
    for n in (0..n_chunks).rev() {
        let t0 = n * chunk;
        let mut ds = dstates[n + 1].clone();
        for h in 0..heads {
            let b = chunk_log_prefix(shard.g.outer(h), t0, chunk, ek);
            let total = &b[(chunk - 1) * ek..];
            totals[h * ek..(h + 1) * ek].copy_from_slice(total);
            let s = &mut ds.as_mut_slice()[h * ek * ev..(h + 1) * ek * ev];
            let q = shard.q.outer(h);
            let dout = d_out.outer(h);
            for c in 0..ek {
                let row = &mut s[c * ev..(c + 1) * ev];
                let decay = total[c].exp();
                for x in row.iter_mut() {
                    *x = decay * *x;
                }
                for j in 0..chunk {
                    let qc = q[(t0 + j) * ek + c] * b[j * ek + c].exp();
                    for (x, &d) in row.iter_mut().zip(&dout[(t0 + j) * ev..(t0 + j + 1) * ev]) {
                        *x = *x + qc * d;
                    }
                }
            }
        }
        dstates[n] = ds;
        rev[n] = rev[n + 1].plus(&totals);
    }
    Ok(LocalGradScan { dstates, rev_cumdecay: rev })
}

fn check_cotangent<T: Real>(shard: &SeqShard<T>, d_out: &Tensor<T>) -> Result<()> {
    let want = [shard.dims.heads, shard.seq_len(), shard.dims.value_dim];
    if d_out.shape() != want {
        return Err(dims_err!("dO has shape {:?}, expected {:?}", d_out.shape(), want));
    }
    Ok(())
}

/// Gradients for one shard given its local gradient scan.
///
/// `prev` is the global state entering the shard (saved from the forward pass)
/// and `ds_next` the gradient w.r.t. the shard's final global state coming
/// from the successor. Global boundary states are recomputed from `prev`
/// unless `saved_states` (forward local states and cumulative decays) is
/// supplied, in which case they are corrected instead.
///
/// Returns the input gradients and the gradient w.r.t. `prev`.
#[allow(clippy::needless_range_loop)] // n also indexes the scan and chunk offsets
pub fn backward_from_scan<T: Real>(
    shard: &SeqShard<T>,
    d_out: &Tensor<T>,
    prev: &State<T>,
    ds_next: &State<T>,
    scan: &LocalGradScan<T>,
    saved_states: Option<SavedStates<'_, T>>,
) -> Result<(GradShard<T>, State<T>)> {
    check_cotangent(shard, d_out)?;
    prev.check_dims(shard.dims)?;
    ds_next.check_dims(shard.dims)?;
    let ModelDims { heads, key_dim: ek, value_dim: ev } = shard.dims;
    let chunk = shard.layout.chunk_len;
    let n_chunks = shard.layout.num_chunks();
    if scan.dstates.len() != n_chunks + 1 {
        return Err(dims_err!("gradient scan has {} states, expected {}", scan.dstates.len(), n_chunks + 1));
    }

    let global = match saved_states {
        Some((states, cumdecay)) => global_correct(states, cumdecay, prev)?,
        None => scan_from(shard, prev)?.states,
    };
    if global.len() != n_chunks + 1 {
        return Err(dims_err!("expected {} boundary states, got {}", n_chunks + 1, global.len()));
    }

    let len = shard.seq_len();
    let mut grads = GradShard::zeros(shard.dims, len);
    let mut d_boundary = vec![T::zero(); ek * ev];
    let mut scores = vec![T::zero(); chunk * chunk];
    let mut dscores = vec![T::zero(); chunk * chunk];

    for h in 0..heads {
        let hs = h * ek * ev..(h + 1) * ek * ev;
        let q = shard.q.outer(h);
        let k = shard.k.outer(h);
        let v = shard.v.outer(h);
        let dout = d_out.outer(h);
        let GradShard { dq, dk, dv, .. } = &mut grads;
        let (dq, dk, dv) = (dq.outer_mut(h), dk.outer_mut(h), dv.outer_mut(h));

        for n in 0..n_chunks {
            let t0 = n * chunk;
            let b = chunk_log_prefix(shard.g.outer(h), t0, chunk, ek);
            let total = &b[(chunk - 1) * ek..];
            let s_in = &global[n].as_slice()[hs.clone()];
            // total gradient w.r.t. the state at the chunk end
            d_boundary.copy_from_slice(&scan.dstates[n + 1].as_slice()[hs.clone()]);
            decayed_add_rows(
                &mut d_boundary,
                scan.rev_cumdecay[n + 1].log_values().outer(h),
                &ds_next.as_slice()[hs.clone()],
                ev,
            );

            intra_scores(&q[t0 * ek..], &k[t0 * ek..], &b, chunk, ek, &mut scores);
            for j in 0..chunk {
                for i in 0..chunk {
                    dscores[j * chunk + i] = if i > j {
                        T::zero()
                    } else {
                        dout[(t0 + j) * ev..(t0 + j + 1) * ev]
                            .iter()
                            .zip(&v[(t0 + i) * ev..(t0 + i + 1) * ev])
                            .map(|(&a, &b)| a * b)
                            .sum()
                    };
                }
            }

            for j in 0..chunk {
                let dorow = &dout[(t0 + j) * ev..(t0 + j + 1) * ev];
                for c in 0..ek {
                    let bj = b[j * ek + c];
                    let intra: T = (0..=j)
                        .map(|i| dscores[j * chunk + i] * k[(t0 + i) * ek + c] * (bj - b[i * ek + c]).exp())
                        .sum();
                    let inter: T = dorow.iter().zip(&s_in[c * ev..(c + 1) * ev]).map(|(&a, &s)| a * s).sum();
                    dq[(t0 + j) * ek + c] = intra + bj.exp() * inter;
                }
            }

            for i in 0..chunk {
                let vrow = &v[(t0 + i) * ev..(t0 + i + 1) * ev];
                for c in 0..ek {
                    let bi = b[i * ek + c];
                    let intra: T = (i..chunk)
                        .map(|j| dscores[j * chunk + i] * q[(t0 + j) * ek + c] * (b[j * ek + c] - bi).exp())
                        .sum();
                    let inter: T = vrow.iter().zip(&d_boundary[c * ev..(c + 1) * ev]).map(|(&a, &d)| a * d).sum();
                    dk[(t0 + i) * ek + c] = intra + (total[c] - bi).exp() * inter;
                }
                let dvrow = &mut dv[(t0 + i) * ev..(t0 + i + 1) * ev];
                for j in i..chunk {
                    let p = scores[j * chunk + i];
                    for (x, &d) in dvrow.iter_mut().zip(&dout[(t0 + j) * ev..(t0 + j + 1) * ev]) {
                        *x = *x + p * d;
                    }
                }
                for c in 0..ek {
                    let kc = k[(t0 + i) * ek + c] * (total[c] - b[i * ek + c]).exp();
                    for (x, &d) in dvrow.iter_mut().zip(&d_boundary[c * ev..(c + 1) * ev]) {
                        *x = *x + kc * d;
                    }
                }
            }
        }
    }

    // ∂L/∂B_t, then dG = revcum
    let mut da = Tensor::zeros(&[heads, len, ek]);
    for h in 0..heads {
        let (q, k, dq, dk) = (shard.q.outer(h), shard.k.outer(h), grads.dq.outer(h), grads.dk.outer(h));
        for (idx, x) in da.outer_mut(h).iter_mut().enumerate() {
            *x = q[idx] * dq[idx] - k[idx] * dk[idx];
        }
        let s_final = &global[n_chunks].as_slice()[h * ek * ev..(h + 1) * ek * ev];
        let dsn = &ds_next.as_slice()[h * ek * ev..(h + 1) * ek * ev];
        let last = &mut da.outer_mut(h)[(len - 1) * ek..len * ek];
        for (c, x) in last.iter_mut().enumerate() {
            let r: T = s_final[c * ev..(c + 1) * ev].iter().zip(&dsn[c * ev..(c + 1) * ev]).map(|(&a, &b)| a * b).sum();
            *x = *x + r;
        }
    }
    grads.dg = revcum(&da)?;

    let d_prev = scan.first_dstate().decayed_add(scan.total_decay(), ds_next)?;
    Ok((grads, d_prev))
}

/// Forward local states and cumulative decays saved for reuse in backward.
pub type SavedStates<'a, T> = (&'a [State<T>], &'a [CumDecay<T>]);

/// Full backward for one shard: local gradient scan, then gradients.
pub fn backward<T: Real>(
    shard: &SeqShard<T>,
    d_out: &Tensor<T>,
    prev: &State<T>,
    ds_next: &State<T>,
) -> Result<(GradShard<T>, State<T>)> {
    let scan = local_grad_scan(shard, d_out)?;
    backward_from_scan(shard, d_out, prev, ds_next, &scan, None)
}
