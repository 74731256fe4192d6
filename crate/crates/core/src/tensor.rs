//! Dense row-major `f32` tensors and the matrix kernels the layers build on.

use crate::error::{Error, Result};

/// A dense, row-major `f32` tensor. Image batches use NCHW layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// `(n, c, h, w)` of a 4-D tensor.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected NCHW tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    /// Number of elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn item(&self, n: usize) -> &[f32] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Stacks equally sized items into a batch with the given per-item shape.
    pub fn stack<'a, I>(item_shape: &[usize], items: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f32]>,
    {
        let item_len: usize = item_shape.iter().product();
        let mut data = Vec::new();
        let mut n = 0;
        for item in items {
            if item.len() != item_len {
                return Err(Error::Shape(format!(
                    "stack item {n} has {} values, expected {item_len}",
                    item.len()
                )));
            }
            data.extend_from_slice(item);
            n += 1;
        }
        let mut shape = vec![n];
        shape.extend_from_slice(item_shape);
        Ok(Self { shape, data })
    }

    /// Concatenates two NCHW tensors along the batch axis.
    pub fn concat_batch(a: &Tensor, b: &Tensor) -> Result<Self> {
        if a.shape[1..] != b.shape[1..] {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} with {:?}",
                a.shape, b.shape
            )));
        }
        let mut shape = a.shape.clone();
        shape[0] += b.shape[0];
        let mut data = Vec::with_capacity(a.len() + b.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Self { shape, data })
    }

    /// Batch items `start..end`.
    pub fn slice_batch(&self, start: usize, end: usize) -> Self {
        let len = self.item_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Self {
            shape,
            data: self.data[start * len..end * len].to_vec(),
        }
    }

    /// Channels `start..end` of an NCHW tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Self {
        let (n, c, h, w) = self.dims4();
        assert!(start <= end && end <= c);
        let plane = h * w;
        let mut out = Tensor::zeros(&[n, end - start, h, w]);
        for i in 0..n {
            let src = &self.data[(i * c + start) * plane..(i * c + end) * plane];
            out.item_mut(i).copy_from_slice(src);
        }
        out
    }

    /// Concatenates two NCHW tensors along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Self> {
        let (n, ca, h, w) = a.dims4();
        let (nb, cb, hb, wb) = b.dims4();
        if n != nb || h != hb || w != wb {
            return Err(Error::Shape(format!(
                "cannot channel-concatenate {:?} with {:?}",
                a.shape, b.shape
            )));
        }
        let mut out = Tensor::zeros(&[n, ca + cb, h, w]);
        for i in 0..n {
            let dst = out.item_mut(i);
            dst[..ca * h * w].copy_from_slice(a.item(i));
            dst[ca * h * w..].copy_from_slice(b.item(i));
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f32) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` for row-major matrices, where `op`
/// optionally transposes. `op(a)` is `m x k`, `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the bounds above cover every element the strides address.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
