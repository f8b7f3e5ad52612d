//! Minimal dense f32 arrays with bit-deterministic reductions.
//!
//! Everything downstream leans on one contract: reductions accumulate in
//! ascending index order, in single precision, with no reassociation. Batched
//! routines are defined as loops over the row routines, so decoding a row
//! inside a batch and decoding it alone produce bitwise-identical floats.
//!
//! No broadcasting; all shapes are explicit. Rank is limited to 1..=3, which
//! covers vectors, weight matrices / row batches, and [B, T, D] encoder
//! outputs.

use crate::error::{Error, Result};

/// Dense rank-1/2/3 single-precision array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::Shape(format!(
                "rank must be 1..=3, got {}",
                dims.len()
            )));
        }
        let numel: usize = dims.iter().product();
        if data.len() != numel {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {:?} (numel {})",
                data.len(),
                dims,
                numel
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let numel: usize = dims.iter().product();
        Self::new(dims, vec![0.0; numel])
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> Result<&[f32]> {
        if self.rank() != 2 {
            return Err(Error::Shape(format!("row() needs rank 2, got {}", self.rank())));
        }
        let (r, c) = (self.dims[0], self.dims[1]);
        if i >= r {
            return Err(Error::Index(format!("row {i} of {r}")));
        }
        Ok(&self.data[i * c..(i + 1) * c])
    }

    /// Row `[b, t, :]` of a rank-3 tensor.
    pub fn row3(&self, b: usize, t: usize) -> Result<&[f32]> {
        if self.rank() != 3 {
            return Err(Error::Shape(format!("row3() needs rank 3, got {}", self.rank())));
        }
        let (nb, nt, nd) = (self.dims[0], self.dims[1], self.dims[2]);
        if b >= nb || t >= nt {
            return Err(Error::Index(format!("element [{b},{t}] of [{nb},{nt}]")));
        }
        let base = (b * nt + t) * nd;
        Ok(&self.data[base..base + nd])
    }
}

/// One boolean per batch row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoolMask {
    bits: Vec<bool>,
}

impl BoolMask {
    pub fn new_false(len: usize) -> Self {
        Self { bits: vec![false; len] }
    }

    pub fn from_slice(bits: &[bool]) -> Self {
        Self { bits: bits.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.bits[i] = value;
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    pub fn all(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().copied()
    }
}

/// `out[i] = sum_j w[i,j] * x[j]`, accumulated strictly in ascending `j`
/// order in f32. This order is normative; do not "optimize" it into a
/// reassociated or vectorized reduction.
pub fn matvec(w: &Tensor, x: &[f32]) -> Result<Vec<f32>> {
    if w.rank() != 2 {
        return Err(Error::Shape(format!("matvec weight must be rank 2, got {}", w.rank())));
    }
    let (m, n) = (w.dims()[0], w.dims()[1]);
    if x.len() != n {
        return Err(Error::Shape(format!(
            "matvec inner extents disagree: weight [{m},{n}] vs input [{}]",
            x.len()
        )));
    }
    let wd = w.data();
    let mut out = vec![0.0f32; m];
    for i in 0..m {
        let row = &wd[i * n..(i + 1) * n];
        let mut acc = 0.0f32;
        for j in 0..n {
            acc += row[j] * x[j];
        }
        out[i] = acc;
    }
    Ok(out)
}

/// Batched matrix product over row batches, defined as a loop of [`matvec`]
/// so that batched and per-row evaluation agree bitwise.
///
/// `xs` is [B, n]; result is [B, m].
pub fn matmul_rows(w: &Tensor, xs: &Tensor) -> Result<Tensor> {
    if xs.rank() != 2 {
        return Err(Error::Shape(format!("matmul_rows input must be rank 2, got {}", xs.rank())));
    }
    let b = xs.dims()[0];
    let m = w.dims()[0];
    let mut out = Vec::with_capacity(b * m);
    for i in 0..b {
        out.extend_from_slice(&matvec(w, xs.row(i)?)?);
    }
    Tensor::new(&[b, m], out)
}

/// Smallest index attaining the maximum value (ties break to the lowest
/// index).
pub fn argmax_row(v: &[f32]) -> Result<usize> {
    if v.is_empty() {
        return Err(Error::Contract("argmax of empty vector".into()));
    }
    let mut best = 0usize;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    Ok(best)
}

/// `v[i] - (max(v) + ln(sum_j exp(v[j] - max(v))))`, max-subtracted for
/// stability, summed in ascending index order in f32.
pub fn log_softmax_at(v: &[f32], i: usize) -> Result<f32> {
    if v.is_empty() {
        return Err(Error::Contract("log_softmax of empty vector".into()));
    }
    if i >= v.len() {
        return Err(Error::Index(format!("log_softmax index {i} of {}", v.len())));
    }
    let mut max = v[0];
    for &x in &v[1..] {
        if x > max {
            max = x;
        }
    }
    let mut sum = 0.0f32;
    for &x in v {
        sum += (x - max).exp();
    }
    Ok(v[i] - (max + sum.ln()))
}

/// Copy rows of `src` into `dest` wherever the mask is true. Both tensors
/// must have identical shape, with the leading extent equal to the mask
/// length.
pub fn masked_assign(dest: &mut Tensor, mask: &BoolMask, src: &Tensor) -> Result<()> {
    if dest.dims() != src.dims() {
        return Err(Error::Shape(format!(
            "masked_assign shapes disagree: {:?} vs {:?}",
            dest.dims(),
            src.dims()
        )));
    }
    let b = dest.dims()[0];
    if mask.len() != b {
        return Err(Error::Shape(format!(
            "mask length {} vs batch {}",
            mask.len(),
            b
        )));
    }
    if b == 0 {
        return Ok(());
    }
    let stride = dest.numel() / b;
    let sd = src.data();
    let dd = dest.data_mut();
    for i in 0..b {
        if mask.get(i) {
            dd[i * stride..(i + 1) * stride].copy_from_slice(&sd[i * stride..(i + 1) * stride]);
        }
    }
    Ok(())
}

/// `out[b] = enc[b, times[b], :]` for a rank-3 `enc` of shape [B, T, D].
/// Callers are responsible for clamping indices of rows whose result they
/// intend to discard.
pub fn gather_time_rows(enc: &Tensor, times: &[usize]) -> Result<Tensor> {
    if enc.rank() != 3 {
        return Err(Error::Shape(format!(
            "gather_time_rows needs rank 3, got {}",
            enc.rank()
        )));
    }
    let (b, t, d) = (enc.dims()[0], enc.dims()[1], enc.dims()[2]);
    if times.len() != b {
        return Err(Error::Shape(format!(
            "times length {} vs batch {}",
            times.len(),
            b
        )));
    }
    let mut out = Vec::with_capacity(b * d);
    for (i, &ti) in times.iter().enumerate() {
        if ti >= t {
            return Err(Error::Index(format!("time index {ti} of {t} at row {i}")));
        }
        out.extend_from_slice(enc.row3(i, ti)?);
    }
    Tensor::new(&[b, d], out)
}
