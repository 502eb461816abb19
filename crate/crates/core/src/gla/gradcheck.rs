//! Central finite differences through the token-level recurrence.

use super::{recurrent_forward, GradShard, SeqShard, State};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Real, Tensor};

/// Which input tensor an entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GradInput {
    Q,
    K,
    V,
    G,
}

impl GradInput {
    pub const ALL: [GradInput; 4] = [GradInput::Q, GradInput::K, GradInput::V, GradInput::G];

    fn tensor_mut<T: Real>(self, shard: &mut SeqShard<T>) -> &mut Tensor<T> {
        match self {
            GradInput::Q => &mut shard.q,
            GradInput::K => &mut shard.k,
            GradInput::V => &mut shard.v,
            GradInput::G => &mut shard.g,
        }
    }

    pub fn grad<T: Real>(self, g: &GradShard<T>) -> &Tensor<T> {
        match self {
            GradInput::Q => &g.dq,
            GradInput::K => &g.dk,
            GradInput::V => &g.dv,
            GradInput::G => &g.dg,
        }
    }
}

/// One scalar input coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GradEntry {
    pub input: GradInput,
    pub head: usize,
    pub token: usize,
    pub channel: usize,
}

impl GradEntry {
    pub fn flat_index(&self, tensor_shape: &[usize]) -> usize {
        (self.head * tensor_shape[1] + self.token) * tensor_shape[2] + self.channel
    }
}

fn require_f64<T: Real>() -> Result<()> {
    if T::PRECISION != Precision::F64 {
        return Err(Error::Precision(T::PRECISION.name()));
    }
    Ok(())
}

fn loss(shard: &SeqShard<f64>, probe: &[f64], init: &State<f64>) -> Result<f64> {
    let out = recurrent_forward(shard, init)?.outputs;
    Ok(out.data().iter().zip(probe).map(|(a, b)| a * b).sum())
}

/// Gradients of `⟨probe, recurrent_forward(shard, 0).outputs⟩` w.r.t. every
/// entry of Q, K, V and G by central differences. f64 only.
pub fn finite_diff_grad<T: Real>(shard: &SeqShard<T>, probe: &Tensor<T>, step: f64) -> Result<GradShard<f64>> {
    require_f64::<T>()?;
    check_step(step)?;
    let base = cast_shard(shard)?;
    let probe = probe.cast::<f64>();
    let init = State::zeros(base.dims);
    let mut grads = GradShard::zeros(base.dims, base.seq_len());
    for input in GradInput::ALL {
        let n = input.tensor_mut(&mut base.clone()).len();
        for idx in 0..n {
            let mut plus = base.clone();
            input.tensor_mut(&mut plus).data_mut()[idx] += step;
            let mut minus = base.clone();
            input.tensor_mut(&mut minus).data_mut()[idx] -= step;
            let d = (loss(&plus, probe.data(), &init)? - loss(&minus, probe.data(), &init)?) / (2.0 * step);
            match input {
                GradInput::Q => grads.dq.data_mut()[idx] = d,
                GradInput::K => grads.dk.data_mut()[idx] = d,
                GradInput::V => grads.dv.data_mut()[idx] = d,
                GradInput::G => grads.dg.data_mut()[idx] = d,
            }
        }
    }
    Ok(grads)
}

/// Central differences for selected entries only.
///
/// A perturbation at token `t` leaves outputs before `t` untouched, so each
/// difference is evaluated on the suffix starting at `t`, seeded with the
/// recurrent state just before `t`.
pub fn finite_diff_sampled<T: Real>(
    shard: &SeqShard<T>,
    probe: &Tensor<T>,
    step: f64,
    entries: &[GradEntry],
) -> Result<Vec<f64>> {
    require_f64::<T>()?;
    check_step(step)?;
    let base = cast_shard(shard)?;
    let probe = probe.cast::<f64>();
    let len = base.seq_len();

    let mut tokens: Vec<usize> = entries.iter().map(|e| e.token).collect();
    tokens.sort_unstable();
    tokens.dedup();
    let prefix_states = states_before(&base, &tokens)?;

    entries
        .iter()
        .map(|e| {
            let init = &prefix_states[tokens.binary_search(&e.token).expect("token collected")];
            let mut suffix = base.slice(e.token, len - e.token, len - e.token)?;
            let suffix_probe = probe.slice_axis1(e.token, len - e.token)?;
            let local = GradEntry { token: 0, ..*e };
            let idx = local.flat_index(e.input.tensor_mut(&mut suffix).shape());
            let x0 = e.input.tensor_mut(&mut suffix).data()[idx];
            let mut eval = |x: f64| -> Result<f64> {
                e.input.tensor_mut(&mut suffix).data_mut()[idx] = x;
                loss(&suffix, suffix_probe.data(), init)
            };
            Ok((eval(x0 + step)? - eval(x0 - step)?) / (2.0 * step))
        })
        .collect()
}

/// Recurrent state `S_{t-1}` (state before token `t`) for each sorted `t`.
fn states_before(shard: &SeqShard<f64>, tokens: &[usize]) -> Result<Vec<State<f64>>> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut state = State::zeros(shard.dims);
    let mut pos = 0;
    for &t in tokens {
        if t > pos {
            let seg = shard.slice(pos, t - pos, t - pos)?;
            state = recurrent_forward(&seg, &state)?.final_state;
            pos = t;
        }
        out.push(state.clone());
    }
    Ok(out)
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    Ok(())
}

fn cast_shard<T: Real>(s: &SeqShard<T>) -> Result<SeqShard<f64>> {
    Ok(SeqShard { q: s.q.cast(), k: s.k.cast(), v: s.v.cast(), g: s.g.cast(), layout: s.layout, dims: s.dims })
}
