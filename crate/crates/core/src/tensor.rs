//! Dense row-major tensors.
//!
//! Activations are laid out `N, C, H, W`. Lower-rank tensors (biases, fully
//! connected weights) simply use fewer extents.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;

/// Ordered list of positive extents.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Shape("rank 0 shape".into()));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::Shape(format!("extent {pos} is zero in {dims:?}")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Shape(format!("element count of {dims:?} overflows")))?;
        Ok(Shape(dims.to_vec()))
    }

    /// `N, C, H, W` activation shape.
    pub fn nchw(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        Shape::new(&[n, c, h, w])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Extent `i` counted from the end, 1 when the rank is too small.
    fn from_end(&self, i: usize) -> usize {
        let r = self.0.len();
        if i < r {
            self.0[r - 1 - i]
        } else {
            1
        }
    }

    /// Semantic `(N, C, H, W)` view with leading size-1 extents.
    pub fn as_nchw(&self) -> (usize, usize, usize, usize) {
        let n: usize = if self.rank() > 4 {
            self.0[..self.rank() - 3].iter().product()
        } else {
            self.from_end(3)
        };
        (n, self.from_end(2), self.from_end(1), self.from_end(0))
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Dense tensor with contiguous row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Tensor filled with a constant.
    pub fn new(dims: &[usize], fill: T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![fill; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::new(dims, T::zero())
    }

    pub fn zeros_like(other: &Tensor<T>) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![T::zero(); other.data.len()],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::Shape(format!(
                "{} elements do not fill shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// I.i.d. zero-mean Gaussian entries.
    pub fn rand(dims: &[usize], stddev: T, rng: &mut SeededRng) -> Result<Self> {
        if !(stddev >= T::zero()) {
            return Err(Error::Argument(format!("stddev must be >= 0, got {stddev}")));
        }
        let shape = Shape::new(dims)?;
        let data = (0..shape.numel())
            .map(|_| T::from_f64_lossy(rng.normal()) * stddev)
            .collect();
        Ok(Tensor { shape, data })
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn rand_uniform(dims: &[usize], lo: f64, hi: f64, rng: &mut SeededRng) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = (0..shape.numel())
            .map(|_| T::from_f64_lossy(rng.uniform_range(lo, hi)))
            .collect();
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
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

    /// In-place access.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Same data under a new shape of equal element count.
    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Converts element type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64_lossy(x.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn check_same_shape(&self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape mismatch: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// `c[i] = f(a[i], b[i])`.
    pub fn zip_with(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    /// `self += other`, in place.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Element-wise product summed, used to project outputs onto a scalar.
    pub fn dot(&self, other: &Tensor<T>) -> Result<T> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Fails with a numeric error on the first NaN or infinity.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "{what}: non-finite value {} at flat index {i}",
                self.data[i]
            ))),
        }
    }

    /// Slice of batch item `n` along the leading axis.
    pub fn item(&self, n: usize) -> &[T] {
        let per = self.data.len() / self.dims()[0];
        &self.data[n * per..(n + 1) * per]
    }

    /// Stacks equally shaped tensors along a new leading batch axis; a tensor
    /// of rank 4 is treated as already batched and concatenated.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.check_same_shape(t)?;
            data.extend_from_slice(&t.data);
        }
        let mut dims = first.dims().to_vec();
        if dims.len() == 4 {
            dims[0] *= items.len();
        } else {
            dims.insert(0, items.len());
        }
        Self::from_vec(&dims, data)
    }

    /// Serializes into the raw dump format: magic, rank, extents, elements.
    pub fn write_dump(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(T::DUMP_MAGIC);
        out.extend_from_slice(&(self.shape.rank() as u32).to_le_bytes());
        for &d in self.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.reserve(self.data.len() * T::BYTES);
        for &x in &self.data {
            x.write_le(out);
        }
    }

    pub fn to_dump(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_dump(&mut out);
        out
    }

    /// Parses one dump from the front of `bytes`, returning the tensor and
    /// the number of bytes consumed.
    pub fn read_dump(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut cur = ByteReader::new(bytes);
        let magic = cur.take(8)?;
        if magic != T::DUMP_MAGIC {
            return Err(Error::Format(format!(
                "bad tensor magic {:?}, expected {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(T::DUMP_MAGIC)
            )));
        }
        let rank = cur.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32()? as usize);
        }
        let shape = Shape::new(&dims).map_err(|e| Error::Format(e.to_string()))?;
        let payload = shape
            .numel()
            .checked_mul(T::BYTES)
            .ok_or_else(|| Error::Format("tensor payload size overflows".into()))?;
        let raw = cur.take(payload)?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        Ok((Tensor { shape, data }, cur.pos))
    }

    /// Parses a buffer that holds exactly one dump.
    pub fn from_dump(bytes: &[u8]) -> Result<Self> {
        let (t, used) = Self::read_dump(bytes)?;
        if used != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after tensor dump",
                bytes.len() - used
            )));
        }
        Ok(t)
    }
}

/// Cursor over a little-endian byte buffer.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated: needed {n} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }
}
