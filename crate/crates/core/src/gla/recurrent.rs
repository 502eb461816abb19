//! Token-by-token reference recurrence.

use super::{ModelDims, SeqShard, State};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct RecurrentForward<T> {
    /// `[heads, L, value_dim]`.
    pub outputs: Tensor<T>,
    /// `S_{nC}` for `n = 0..=N`; entry 0 is the initial state.
    pub boundary_states: Vec<State<T>>,
    pub final_state: State<T>,
}

/// `S_t = (α_t^T 1) ⊙ S_{t-1} + K_t^T V_t`, `O_t = Q_t S_t`, one token at a time.
pub fn recurrent_forward<T: Real>(shard: &SeqShard<T>, init: &State<T>) -> Result<RecurrentForward<T>> {
    let ModelDims { heads, key_dim: ek, value_dim: ev } = shard.dims;
    init.check_dims(shard.dims)?;
    shard.check_decays()?;
    let len = shard.seq_len();
    let chunk = shard.layout.chunk_len;

    let mut state = init.clone();
    let mut outputs = Tensor::zeros(&[heads, len, ev]);
    let mut boundary_states = Vec::with_capacity(shard.layout.num_chunks() + 1);
    boundary_states.push(state.clone());

    for t in 0..len {
        for h in 0..heads {
            let s = &mut state.as_mut_slice()[h * ek * ev..(h + 1) * ek * ev];
            let q = &shard.q.outer(h)[t * ek..(t + 1) * ek];
            let k = &shard.k.outer(h)[t * ek..(t + 1) * ek];
            let g = &shard.g.outer(h)[t * ek..(t + 1) * ek];
            let v = &shard.v.outer(h)[t * ev..(t + 1) * ev];
            for c in 0..ek {
                let a = g[c].exp();
                let row = &mut s[c * ev..(c + 1) * ev];
                for (x, &vj) in row.iter_mut().zip(v) {
                    *x = a * *x + k[c] * vj;
                }
            }
            let o = &mut outputs.outer_mut(h)[t * ev..(t + 1) * ev];
            for c in 0..ek {
                let row = &s[c * ev..(c + 1) * ev];
                for (oj, &x) in o.iter_mut().zip(row) {
                    *oj = *oj + q[c] * x;
                }
            }
        }
        if (t + 1) % chunk == 0 {
            boundary_states.push(state.clone());
        }
    }
    Ok(RecurrentForward { outputs, boundary_states, final_state: state })
}
