//! Dense row-major tensors of `f64`.
//!
//! Every reduction walks its input in row-major order and accumulates
//! left to right, so results are bitwise reproducible for a given shape.

use std::fmt;

use crate::error::{Result, TensorError};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} [{} values]", self.shape, self.data.len())
        }
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(TensorError::InvalidShape { shape });
        }
        if numel(&shape) != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        let data = (0..numel(shape)).map(&mut f).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.shape.clone(),
            });
        }
        Ok(self.data[0])
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.rank());
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of range for axis {i} of {:?}", self.shape);
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.contains(&0) || numel(shape) != self.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.expect_same_shape(other, op)?;
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

    pub(crate) fn expect_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        if other.data.contains(&0.0) {
            return Err(TensorError::Domain {
                op: "div",
                detail: "zero divisor".into(),
            });
        }
        self.zip_map(other, "div", |a, b| a / b)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        self.map(|a| a + s)
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor {
        self.map(|a| a * s)
    }

    pub fn div_scalar(&self, s: f64) -> Result<Tensor> {
        if s == 0.0 {
            return Err(TensorError::Domain {
                op: "div",
                detail: "zero divisor".into(),
            });
        }
        Ok(self.map(|a| a / s))
    }

    pub fn relu(&self) -> Tensor {
        self.map(|a| if a > 0.0 { a } else { 0.0 })
    }

    pub fn exp(&self) -> Tensor {
        self.map(f64::exp)
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some(v) = self.data.iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive input {v}"),
            });
        }
        Ok(self.map(f64::ln))
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if let Some(v) = self.data.iter().find(|&&v| v < 0.0 || v.is_nan()) {
            return Err(TensorError::Domain {
                op: "sqrt",
                detail: format!("negative input {v}"),
            });
        }
        Ok(self.map(f64::sqrt))
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &v| acc + v)
    }

    pub fn mean_all(&self) -> f64 {
        self.sum_all() / self.len() as f64
    }

    fn check_axes(&self, axes: &[usize]) -> Result<Vec<bool>> {
        let mut reduced = vec![false; self.rank()];
        for &a in axes {
            if a >= self.rank() || reduced[a] {
                return Err(TensorError::InvalidAxis {
                    axis: a,
                    rank: self.rank(),
                });
            }
            reduced[a] = true;
        }
        Ok(reduced)
    }

    /// Shape with every reduced axis collapsed to extent 1.
    fn keepdim_shape(&self, reduced: &[bool]) -> Vec<usize> {
        self.shape
            .iter()
            .zip(reduced)
            .map(|(&d, &r)| if r { 1 } else { d })
            .collect()
    }

    fn fold_axes(
        &self,
        axes: &[usize],
        keepdim: bool,
        init: f64,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let reduced = self.check_axes(axes)?;
        let kept = self.keepdim_shape(&reduced);
        let mut out = vec![init; numel(&kept)];
        let out_strides = broadcast_strides(&kept, &self.shape);
        for_each_index(&self.shape, &out_strides, |in_flat, out_flat| {
            out[out_flat] = f(out[out_flat], self.data[in_flat]);
        });
        let shape = if keepdim {
            kept
        } else {
            let s: Vec<usize> = self
                .shape
                .iter()
                .zip(&reduced)
                .filter(|(_, &r)| !r)
                .map(|(&d, _)| d)
                .collect();
            if s.is_empty() {
                vec![1]
            } else {
                s
            }
        };
        Ok(Tensor { shape, data: out })
    }

    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor> {
        self.fold_axes(axes, keepdim, 0.0, |acc, v| acc + v)
    }

    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor> {
        let count: usize = axes.iter().filter_map(|&a| self.shape.get(a)).product();
        let s = self.sum_axes(axes, keepdim)?;
        Ok(s.mul_scalar(1.0 / count as f64))
    }

    pub fn max_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor> {
        self.fold_axes(axes, keepdim, f64::NEG_INFINITY, f64::max)
    }

    /// Mean over the spatial axes of an NCHW tensor, returning N×C.
    pub fn global_avg_pool(&self) -> Result<Tensor> {
        if self.rank() != 4 {
            return Err(TensorError::RankMismatch {
                op: "global_avg_pool",
                expected: 4,
                shape: self.shape.clone(),
            });
        }
        self.mean_axes(&[2, 3], false)
    }

    /// Broadcasts extent-1 axes up to `shape`. Ranks must match.
    pub fn expand_to(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.len() != self.rank()
            || self
                .shape
                .iter()
                .zip(shape)
                .any(|(&s, &t)| s != t && s != 1)
        {
            return Err(TensorError::ShapeMismatch {
                op: "expand",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let strides = broadcast_strides(&self.shape, shape);
        let mut out = vec![0.0; numel(shape)];
        for_each_index(shape, &strides, |o, i| out[o] = self.data[i]);
        Ok(Tensor {
            shape: shape.to_vec(),
            data: out,
        })
    }

    /// Sums a gradient of shape `self.shape` down to `target` (the inverse of `expand_to`).
    pub(crate) fn sum_to(&self, target: &[usize]) -> Result<Tensor> {
        let axes: Vec<usize> = self
            .shape
            .iter()
            .zip(target)
            .enumerate()
            .filter(|(_, (&s, &t))| s != t)
            .map(|(i, _)| i)
            .collect();
        if axes.is_empty() {
            return Ok(self.clone());
        }
        self.sum_axes(&axes, true)
    }

    fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::RankMismatch {
                op,
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.expect_matrix("matmul")?;
        let (k2, n) = other.expect_matrix("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(m, k, n, &self.data, &other.data, &mut out);
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.expect_matrix("transpose")?;
        let mut out = vec![0.0; r * c];
        transpose_into(r, c, &self.data, &mut out);
        Ok(Tensor {
            shape: vec![c, r],
            data: out,
        })
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or(TensorError::Empty { op: "concat" })?;
        if axis >= first.rank() {
            return Err(TensorError::InvalidAxis {
                axis,
                rank: first.rank(),
            });
        }
        for p in &parts[1..] {
            let compatible = p.rank() == first.rank()
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (&a, &b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let mut shape = first.shape.clone();
        shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let chunk = p.len() / outer;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Tensor { shape, data })
    }

    /// Rows (slices along axis 0) picked by `indices`, in order.
    pub fn index_select(&self, indices: &[usize]) -> Result<Tensor> {
        if indices.is_empty() {
            return Err(TensorError::Empty { op: "index_select" });
        }
        let rows = self.shape[0];
        let stride = self.len() / rows;
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange { index: i, len: rows });
            }
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Tensor { shape, data })
    }

    /// Splits along axis 0 into single-row tensors with the leading axis kept.
    pub fn rows(&self) -> Vec<Tensor> {
        let n = self.shape[0];
        let stride = self.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        (0..n)
            .map(|i| Tensor {
                shape: shape.clone(),
                data: self.data[i * stride..(i + 1) * stride].to_vec(),
            })
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
    }
}

/// Strides into a tensor of shape `small` when iterating `big`; axes where
/// `small` has extent 1 get stride 0.
fn broadcast_strides(small: &[usize], big: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; small.len()];
    let mut acc = 1;
    for i in (0..small.len()).rev() {
        strides[i] = if small[i] == 1 && big[i] != 1 { 0 } else { acc };
        acc *= small[i];
    }
    strides
}

/// Visits every index of `shape` in row-major order, passing the flat index
/// and the flat index under `strides`.
fn for_each_index(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let total = numel(shape);
    let inner = shape[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    let mut flat = 0usize;
    while flat < total {
        for k in 0..inner {
            f(flat + k, base + k * inner_stride);
        }
        flat += inner;
        // odometer over the outer axes
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                break;
            }
            axis -= 1;
            idx[axis] += 1;
            base += strides[axis];
            if idx[axis] < shape[axis] {
                break;
            }
            base -= strides[axis] * shape[axis];
            idx[axis] = 0;
        }
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`, accumulating over `k` in order for every
/// output element.
pub(crate) fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn transpose_into(rows: usize, cols: usize, src: &[f64], dst: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_basics() {
        let a = t(&[2], &[1.0, 2.0]);
        let b = t(&[2], &[3.0, 4.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(t(&[3], &[-1.0, 0.0, 2.0]).relu().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(t(&[2], &[2.0, 3.0]).mul_scalar(0.0).data(), &[0.0, 0.0]);
    }

    #[test]
    fn elementwise_errors() {
        let a = t(&[2], &[1.0, 2.0]);
        let b = t(&[3], &[1.0, 2.0, 3.0]);
        assert!(matches!(a.add(&b), Err(TensorError::ShapeMismatch { .. })));
        assert!(matches!(
            a.div(&t(&[2], &[1.0, 0.0])),
            Err(TensorError::Domain { .. })
        ));
        assert!(matches!(
            t(&[2], &[1.0, -1.0]).log(),
            Err(TensorError::Domain { .. })
        ));
    }

    #[test]
    fn construction_invariants() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }

    #[test]
    fn reductions() {
        let a = t(&[2, 2], &[1.0, 3.0, 5.0, 7.0]);
        assert_eq!(a.mean_axes(&[0, 1], false).unwrap().item().unwrap(), 4.0);
        assert_eq!(a.sum_axes(&[0], false).unwrap().data(), &[6.0, 10.0]);
        assert_eq!(a.sum_axes(&[1], true).unwrap().shape(), &[2, 1]);
        assert_eq!(a.max_axes(&[1], false).unwrap().data(), &[3.0, 7.0]);
        let one_hot = t(&[4], &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(one_hot.sum_axes(&[0], false).unwrap().item().unwrap(), 1.0);
        assert!(matches!(
            a.sum_axes(&[2], false),
            Err(TensorError::InvalidAxis { .. })
        ));
        let c = Tensor::full(&[2, 3, 4, 5], 2.5);
        let gap = c.global_avg_pool().unwrap();
        assert_eq!(gap.shape(), &[2, 3]);
        assert!(gap.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn middle_axis_reduction_matches_loops() {
        let a = Tensor::from_fn(&[2, 3, 4], |i| (i as f64).sin());
        let s = a.sum_axes(&[1], false).unwrap();
        for i in 0..2 {
            for k in 0..4 {
                let mut acc = 0.0;
                for j in 0..3 {
                    acc += a.at(&[i, j, k]);
                }
                assert_eq!(s.at(&[i, k]), acc);
            }
        }
    }

    #[test]
    fn expand_and_sum_to_are_adjoint_shapes() {
        let a = t(&[2, 1], &[1.0, 2.0]);
        let e = a.expand_to(&[2, 3]).unwrap();
        assert_eq!(e.data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(e.sum_to(&[2, 1]).unwrap().data(), &[3.0, 6.0]);
        assert!(a.expand_to(&[3, 3]).is_err());
    }

    #[test]
    fn matmul_and_transpose() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let w = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(x.matmul(&w).unwrap().data(), &[1.0, 2.0]);
        let m = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(m.transpose().unwrap().data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert!(m.matmul(&m).is_err());
    }

    #[test]
    fn concat_and_select() {
        let a = t(&[2, 1], &[1.0, 2.0]);
        let b = t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let r = b.index_select(&[1, 1, 0]).unwrap();
        assert_eq!(r.data(), &[5.0, 6.0, 5.0, 6.0, 3.0, 4.0]);
        assert!(b.index_select(&[2]).is_err());
    }
}
