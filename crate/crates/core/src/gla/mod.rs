//! Gated linear attention numerics.
//!
//! Tensors are laid out `[heads, tokens, channels]`. Decay gates are carried as
//! log-decays `G = ln α` (strictly negative), and every cumulative decay is a
//! prefix or suffix sum in log space that is exponentiated only where it is
//! applied. All exponents that reach `exp` are nonpositive.

mod backward;
mod chunk;
mod gradcheck;
mod recurrent;

pub use backward::{backward, backward_from_scan, local_grad_scan, revcum, LocalGradScan, SavedStates};
pub use chunk::{
    chunk_scalings, chunkwise_forward, forward_outputs, forward_outputs_with, global_correct, intra_precompute,
    local_state_scan, ChunkwiseForward, IntraScores, LocalScan,
};
pub use gradcheck::{finite_diff_grad, finite_diff_sampled, GradEntry, GradInput};
pub use recurrent::{recurrent_forward, RecurrentForward};

use crate::error::{dims_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Per-head attention dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelDims {
    pub heads: usize,
    pub key_dim: usize,
    pub value_dim: usize,
}

impl ModelDims {
    pub fn new(heads: usize, key_dim: usize, value_dim: usize) -> Result<Self> {
        if heads == 0 || key_dim == 0 || value_dim == 0 {
            return Err(dims_err!("heads={heads} key_dim={key_dim} value_dim={value_dim} must all be >= 1"));
        }
        Ok(ModelDims { heads, key_dim, value_dim })
    }

    /// Number of elements in one state tensor, `h * e_k * e_v`.
    pub fn state_len(&self) -> usize {
        self.heads * self.key_dim * self.value_dim
    }

    pub fn state_shape(&self) -> [usize; 3] {
        [self.heads, self.key_dim, self.value_dim]
    }
}

/// Token layout of one rank's shard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ShardLayout {
    pub seq_len: usize,
    pub chunk_len: usize,
}

impl ShardLayout {
    pub fn new(seq_len: usize, chunk_len: usize) -> Result<Self> {
        if seq_len == 0 || chunk_len == 0 {
            return Err(Error::Layout(format!("seq_len={seq_len} chunk_len={chunk_len} must be positive")));
        }
        if !seq_len.is_multiple_of(chunk_len) {
            return Err(Error::Layout(format!("seq_len {seq_len} is not a multiple of chunk_len {chunk_len}")));
        }
        Ok(ShardLayout { seq_len, chunk_len })
    }

    pub fn num_chunks(&self) -> usize {
        self.seq_len / self.chunk_len
    }
}

/// One rank's slice of the attention inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqShard<T> {
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    /// Log-decays `ln α`, strictly negative.
    pub g: Tensor<T>,
    pub layout: ShardLayout,
    pub dims: ModelDims,
}

impl<T: Real> SeqShard<T> {
    pub fn new(
        q: Tensor<T>,
        k: Tensor<T>,
        v: Tensor<T>,
        g: Tensor<T>,
        layout: ShardLayout,
        dims: ModelDims,
    ) -> Result<Self> {
        let kshape = [dims.heads, layout.seq_len, dims.key_dim];
        let vshape = [dims.heads, layout.seq_len, dims.value_dim];
        for (name, t, want) in [("Q", &q, &kshape), ("K", &k, &kshape), ("G", &g, &kshape), ("V", &v, &vshape)] {
            if t.shape() != want {
                return Err(dims_err!("{name} has shape {:?}, expected {:?}", t.shape(), want));
            }
        }
        let shard = SeqShard { q, k, v, g, layout, dims };
        shard.check_decays()?;
        Ok(shard)
    }

    pub(crate) fn check_decays(&self) -> Result<()> {
        check_log_decays(self.g.data())
    }

    pub fn seq_len(&self) -> usize {
        self.layout.seq_len
    }

    /// Same inputs with a different chunk length.
    pub fn with_chunk_len(&self, chunk_len: usize) -> Result<Self> {
        let mut s = self.clone();
        s.layout = ShardLayout::new(self.layout.seq_len, chunk_len)?;
        Ok(s)
    }

    /// Tokens `[start, start + len)` as a new shard with the given chunk length.
    pub fn slice(&self, start: usize, len: usize, chunk_len: usize) -> Result<Self> {
        SeqShard::new(
            self.q.slice_axis1(start, len)?,
            self.k.slice_axis1(start, len)?,
            self.v.slice_axis1(start, len)?,
            self.g.slice_axis1(start, len)?,
            ShardLayout::new(len, chunk_len)?,
            self.dims,
        )
    }

    pub fn concat(parts: &[SeqShard<T>], chunk_len: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| dims_err!("concat of zero shards"))?;
        let pick = |f: fn(&SeqShard<T>) -> &Tensor<T>| -> Result<Tensor<T>> {
            Tensor::concat_axis1(&parts.iter().map(f).collect::<Vec<_>>())
        };
        let q = pick(|s| &s.q)?;
        let len = q.shape()[1];
        SeqShard::new(
            q,
            pick(|s| &s.k)?,
            pick(|s| &s.v)?,
            pick(|s| &s.g)?,
            ShardLayout::new(len, chunk_len)?,
            first.dims,
        )
    }
}

pub(crate) fn check_log_decays<T: Real>(g: &[T]) -> Result<()> {
    match g.iter().position(|x| !(x.is_finite() && *x < T::zero())) {
        None => Ok(()),
        Some(i) => Err(Error::Domain(format!("log-decay entry {i} = {:?} must be finite and < 0", g[i]))),
    }
}

/// Linear-attention state, `[heads, key_dim, value_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct State<T>(Tensor<T>);

impl<T: Real> State<T> {
    pub fn zeros(dims: ModelDims) -> Self {
        State(Tensor::zeros(&dims.state_shape()))
    }

    pub fn from_tensor(t: Tensor<T>) -> Result<Self> {
        if t.shape().len() != 3 {
            return Err(dims_err!("state must be 3-d, got {:?}", t.shape()));
        }
        if !t.all_finite() {
            return Err(dims_err!("state has non-finite entries"));
        }
        Ok(State(t))
    }

    pub fn from_vec(dims: ModelDims, data: Vec<T>) -> Result<Self> {
        State::from_tensor(Tensor::from_vec(&dims.state_shape(), data)?)
    }

    pub fn dims(&self) -> ModelDims {
        let s = self.0.shape();
        ModelDims { heads: s[0], key_dim: s[1], value_dim: s[2] }
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn as_slice(&self) -> &[T] {
        self.0.data()
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [T] {
        self.0.data_mut()
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn check_dims(&self, dims: ModelDims) -> Result<()> {
        if self.dims() != dims {
            return Err(dims_err!("state dims {:?} != {:?}", self.dims(), dims));
        }
        Ok(())
    }

    /// `exp(decay) ⊙ prev + self`, with each key-channel row of `prev` scaled
    /// by its decay.
    pub fn decayed_add(&self, decay: &CumDecay<T>, prev: &State<T>) -> Result<State<T>> {
        let dims = self.dims();
        prev.check_dims(dims)?;
        decay.check_dims(dims)?;
        let mut out = self.clone();
        decayed_add_rows(out.as_mut_slice(), decay.log_values().data(), prev.as_slice(), dims.value_dim);
        Ok(out)
    }
}

/// `out[r, :] += exp(log_decay[r]) * prev[r, :]` for every key row `r`.
pub(crate) fn decayed_add_rows<T: Real>(out: &mut [T], log_decay: &[T], prev: &[T], value_dim: usize) {
    for (r, &ld) in log_decay.iter().enumerate() {
        let f = ld.exp();
        let row = r * value_dim..(r + 1) * value_dim;
        for (o, &p) in out[row.clone()].iter_mut().zip(&prev[row]) {
            *o = f * p + *o;
        }
    }
}

/// Cumulative decay in log space, `[heads, key_dim]`, entries ≤ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CumDecay<T>(Tensor<T>);

impl<T: Real> CumDecay<T> {
    /// The multiplicative identity, `ln 1 = 0`.
    pub fn identity(dims: ModelDims) -> Self {
        CumDecay(Tensor::zeros(&[dims.heads, dims.key_dim]))
    }

    pub fn from_tensor(t: Tensor<T>) -> Result<Self> {
        if t.shape().len() != 2 {
            return Err(dims_err!("cumdecay must be 2-d, got {:?}", t.shape()));
        }
        if let Some(x) = t.data().iter().find(|x| !(x.is_finite() && **x <= T::zero())) {
            return Err(Error::Domain(format!("cumulative log-decay {x:?} must be finite and <= 0")));
        }
        Ok(CumDecay(t))
    }

    pub fn log_values(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn check_dims(&self, dims: ModelDims) -> Result<()> {
        if self.0.shape() != [dims.heads, dims.key_dim] {
            return Err(dims_err!("cumdecay shape {:?} != [{}, {}]", self.0.shape(), dims.heads, dims.key_dim));
        }
        Ok(())
    }

    pub(crate) fn plus(&self, other: &[T]) -> Self {
        let mut t = self.0.clone();
        for (a, &b) in t.data_mut().iter_mut().zip(other) {
            *a = *a + b;
        }
        CumDecay(t)
    }
}

/// Intra-chunk decay scalings in linear scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkScalings<T> {
    /// Total chunk decay, `[heads, key_dim]`.
    pub gamma: Tensor<T>,
    /// `b_C / b_j`, `[heads, C, key_dim]`.
    pub big_gamma: Tensor<T>,
    /// `b_j / b_0`, `[heads, C, key_dim]`.
    pub lambda: Tensor<T>,
}

/// Input gradients for one shard.
#[derive(Debug, Clone, PartialEq)]
pub struct GradShard<T> {
    pub dq: Tensor<T>,
    pub dk: Tensor<T>,
    pub dv: Tensor<T>,
    /// Gradient with respect to the log-decays.
    pub dg: Tensor<T>,
}

impl<T: Real> GradShard<T> {
    pub fn zeros(dims: ModelDims, seq_len: usize) -> Self {
        let ks = [dims.heads, seq_len, dims.key_dim];
        GradShard {
            dq: Tensor::zeros(&ks),
            dk: Tensor::zeros(&ks),
            dv: Tensor::zeros(&[dims.heads, seq_len, dims.value_dim]),
            dg: Tensor::zeros(&ks),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor<T>); 4] {
        [("dQ", &self.dq), ("dK", &self.dk), ("dV", &self.dv), ("dG", &self.dg)]
    }

    pub fn concat(parts: &[GradShard<T>]) -> Result<Self> {
        let pick = |f: fn(&GradShard<T>) -> &Tensor<T>| -> Result<Tensor<T>> {
            Tensor::concat_axis1(&parts.iter().map(f).collect::<Vec<_>>())
        };
        Ok(GradShard { dq: pick(|g| &g.dq)?, dk: pick(|g| &g.dk)?, dv: pick(|g| &g.dv)?, dg: pick(|g| &g.dg)? })
    }

    /// Largest per-tensor relative Frobenius error against `reference`.
    pub fn max_rel_err(&self, reference: &GradShard<T>) -> f64 {
        self.tensors().iter().zip(reference.tensors().iter()).map(|((_, a), (_, b))| a.rel_err(b)).fold(0.0, f64::max)
    }
}
