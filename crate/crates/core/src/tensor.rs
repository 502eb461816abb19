//! Dense row-major tensors and the little-endian binary tensor format.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ZGLA"
//! 4       4     u32 rank (number of dims)
//! 8       8     u64 total element count
//! 16      4*r   u32 dims
//! ...     8*n   f64 values, row-major
//! ```

use std::fmt::Debug;
use std::io::{Read, Write};
use std::iter::Sum;

use num_traits::Float;

use crate::error::{dims_err, Error, Result};

/// Floating-point precision tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Scalar types the kernels run on.
pub trait Real: Float + Debug + Default + Sum + Send + Sync + 'static {
    const PRECISION: Precision;
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(dims_err!("shape {:?} needs {} values, got {}", shape, n, data.len()));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Contiguous slice for the leading index `i`.
    pub fn outer(&self, i: usize) -> &[T] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn outer_mut(&mut self, i: usize) -> &mut [T] {
        let stride = self.data.len() / self.shape[0];
        &mut self.data[i * stride..(i + 1) * stride]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|x| U::of(x.as_f64())).collect() }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
    }

    /// ‖self − other‖_F / max(‖other‖_F, tiny). Shapes must agree.
    pub fn rel_err(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape, "rel_err shape mismatch");
        let diff: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = a.as_f64() - b.as_f64();
                d * d
            })
            .sum::<f64>()
            .sqrt();
        let denom = other.frobenius();
        if denom == 0.0 {
            diff
        } else {
            diff / denom
        }
    }

    /// Concatenate 3-d tensors along axis 1.
    pub fn concat_axis1(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| dims_err!("concat of zero tensors"))?;
        let (a, c) = (first.shape[0], first.shape[2]);
        let mut total = 0;
        for p in parts {
            if p.shape.len() != 3 || p.shape[0] != a || p.shape[2] != c {
                return Err(dims_err!("concat shape {:?} vs {:?}", p.shape, first.shape));
            }
            total += p.shape[1];
        }
        let mut data = Vec::with_capacity(a * total * c);
        for i in 0..a {
            for p in parts {
                data.extend_from_slice(p.outer(i));
            }
        }
        Ok(Tensor { shape: vec![a, total, c], data })
    }

    /// Rows `[start, start + len)` along axis 1 of a 3-d tensor.
    pub fn slice_axis1(&self, start: usize, len: usize) -> Result<Self> {
        if self.shape.len() != 3 || start + len > self.shape[1] {
            return Err(dims_err!("slice [{start}, {}) of {:?}", start + len, self.shape));
        }
        let (a, c) = (self.shape[0], self.shape[2]);
        let mut data = Vec::with_capacity(a * len * c);
        for i in 0..a {
            let row = self.outer(i);
            data.extend_from_slice(&row[start * c..(start + len) * c]);
        }
        Ok(Tensor { shape: vec![a, len, c], data })
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"ZGLA")?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        w.write_all(&(self.data.len() as u64).to_le_bytes())?;
        for &d in &self.shape {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("dim {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for x in &self.data {
            w.write_all(&x.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 16];
        r.read_exact(&mut head)?;
        if &head[..4] != b"ZGLA" {
            return Err(Error::Format("bad magic".into()));
        }
        let rank = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut buf4 = [0u8; 4];
        for _ in 0..rank {
            r.read_exact(&mut buf4)?;
            shape.push(u32::from_le_bytes(buf4) as usize);
        }
        if shape.iter().product::<usize>() != count {
            return Err(Error::Format(format!("dims {shape:?} disagree with count {count}")));
        }
        let mut data = Vec::with_capacity(count);
        let mut buf8 = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf8)?;
            data.push(T::of(f64::from_le_bytes(buf8)));
        }
        Ok(Tensor { shape, data })
    }
}
