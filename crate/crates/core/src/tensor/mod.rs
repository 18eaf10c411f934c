//! Dense double-precision tensors and the reverse-mode differentiation tape
//! built on top of them.
//!
//! Word matrices use one row per word: an `n`-word sentence with `d`-wide
//! vectors is an `[n, d]` tensor.

mod gradcheck;
mod graph;
mod params;

pub use gradcheck::{check_gradients, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(default)]
    requires_grad: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grad: Option<Vec<f64>>,
}

pub(crate) fn shape_str(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join("×"))
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim(format!(
                "shape {} has a zero extent",
                shape_str(&shape)
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {} needs {} values, got {}",
                shape_str(&shape),
                expected,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::dim("ragged rows"));
        }
        Tensor::new(vec![n, d], rows.concat())
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        assert_eq!(delta.len(), self.data.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(g, d)| *g += d),
            None => self.grad = Some(delta.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.shape[1]
        }
    }

    /// Element of a 2-D tensor.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    fn require_2d(&self, what: &str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::dim(format!(
                "{what} expects a 2-D tensor, got {}",
                shape_str(&self.shape)
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.require_2d("matmul")?;
        let (k2, n) = other.require_2d("matmul")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions disagree: {} × {}",
                shape_str(&self.shape),
                shape_str(&other.shape)
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Tensor::new(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.require_2d("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    fn zip_with(&self, other: &Tensor, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "{what} needs equal shapes, got {} and {}",
                shape_str(&self.shape),
                shape_str(&other.shape)
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.shape.len() {
            return Err(Error::dim(format!(
                "softmax axis {axis} out of range for {}",
                shape_str(&self.shape)
            )));
        }
        let (outer, len, inner) = axis_split(&self.shape, axis);
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len)
                    .map(|k| self.data[idx(k)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (self.data[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[idx(k)] /= total;
                }
            }
        }
        Tensor::new(self.shape.clone(), out)
    }

    /// Log-softmax along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.shape.len() {
            return Err(Error::dim(format!(
                "log_softmax axis {axis} out of range for {}",
                shape_str(&self.shape)
            )));
        }
        let (outer, len, inner) = axis_split(&self.shape, axis);
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len)
                    .map(|k| self.data[idx(k)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = (0..len).map(|k| (self.data[idx(k)] - max).exp()).sum();
                let lse = max + total.ln();
                for k in 0..len {
                    out[idx(k)] = self.data[idx(k)] - lse;
                }
            }
        }
        Tensor::new(self.shape.clone(), out)
    }

    /// Row-wise layer normalization of an `[n, d]` tensor, `eps` inside the
    /// square root.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let (n, d) = self.require_2d("layer_norm")?;
        if gain.len() != d || bias.len() != d {
            return Err(Error::dim(format!(
                "layer_norm gain/bias {} / {} do not match width {d}",
                shape_str(&gain.shape),
                shape_str(&bias.shape)
            )));
        }
        let (normed, _) = normalize_rows(&self.data, n, d, eps);
        let mut out = normed;
        for r in 0..n {
            for c in 0..d {
                out[r * d + c] = out[r * d + c] * gain.data[c] + bias.data[c];
            }
        }
        Tensor::new(vec![n, d], out)
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        if axis >= first.shape.len() {
            return Err(Error::dim(format!(
                "concat axis {axis} out of range for {}",
                shape_str(&first.shape)
            )));
        }
        for p in parts {
            let same_rank = p.shape.len() == first.shape.len();
            let compatible = same_rank
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(k, (a, b))| k == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!(
                    "concat along axis {axis}: {} incompatible with {}",
                    shape_str(&p.shape),
                    shape_str(&first.shape)
                )));
            }
        }
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut shape = first.shape.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                out.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        Tensor::new(shape, out)
    }

    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        if axis >= self.shape.len() || start >= end || end > self.shape[axis] {
            return Err(Error::dim(format!(
                "slice {start}..{end} on axis {axis} invalid for {}",
                shape_str(&self.shape)
            )));
        }
        let (outer, len, inner) = axis_split(&self.shape, axis);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&self.data[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = end - start;
        Tensor::new(shape, out)
    }

    /// Picks rows of a 2-D tensor by index.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor> {
        let (r, c) = self.require_2d("gather_rows")?;
        if ids.is_empty() {
            return Err(Error::dim("gather_rows with no indices"));
        }
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(Error::dim(format!("row {id} out of range for {r} rows")));
            }
            out.extend_from_slice(&self.data[id * c..(id + 1) * c]);
        }
        Tensor::new(vec![ids.len(), c], out)
    }
}

/// `out += a · b` for row-major `[m, k]` × `[k, n]`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Returns the normalized rows and the per-row inverse standard deviations.
pub(crate) fn normalize_rows(x: &[f64], n: usize, d: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; n * d];
    let mut inv_std = vec![0.0; n];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std[r] = inv;
        for c in 0..d {
            out[r * d + c] = (row[c] - mean) * inv;
        }
    }
    (out, inv_std)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }

    #[test]
    fn identity_matmul() {
        let a = Tensor::new(vec![3, 3], (0..9).map(|v| v as f64 * 0.7 - 2.0).collect()).unwrap();
        assert_eq!(Tensor::identity(3).matmul(&a).unwrap(), a);
    }

    #[test]
    fn small_matmul() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2×3] × [2×3]"), "{msg}");
    }

    #[test]
    fn softmax_cases() {
        let z = Tensor::vector(vec![0.0, 0.0, 0.0]).unwrap().softmax(0).unwrap();
        for &v in z.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let one = Tensor::vector(vec![42.0]).unwrap().softmax(0).unwrap();
        assert_eq!(one.data(), &[1.0]);
        let x = 1.0 / 2f64.sqrt();
        let s = Tensor::vector(vec![x, 0.0]).unwrap().softmax(0).unwrap();
        // exp-and-normalize by hand
        let e0 = x.exp();
        let e1 = 1.0;
        assert!((s.data()[0] - e0 / (e0 + e1)).abs() < 1e-15);
        assert!((s.data()[1] - e1 / (e0 + e1)).abs() < 1e-15);
        assert!((s.data()[0] - 0.669_761_549_326_656_9).abs() < 1e-12);
    }

    #[test]
    fn softmax_axis_zero_columns() {
        let t = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, -1.0]]).unwrap();
        let s = t.softmax(0).unwrap();
        assert!((s.at(0, 0) + s.at(1, 0) - 1.0).abs() < 1e-15);
        assert!((s.at(0, 1) + s.at(1, 1) - 1.0).abs() < 1e-15);
        assert!(t.softmax(2).is_err());
    }

    #[test]
    fn relu_values() {
        let r = Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap().relu();
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn layer_norm_constant_row_is_bias() {
        let x = Tensor::full(&[1, 4], 3.5);
        let gain = Tensor::full(&[4], 2.0);
        let bias = Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let y = x.layer_norm(&gain, &bias, 1e-6).unwrap();
        assert_eq!(y.data(), bias.data());
    }

    #[test]
    fn layer_norm_standardized_row_unchanged() {
        // mean 0, population variance 1
        let x = Tensor::from_rows(&[vec![1.0, -1.0, 1.0, -1.0]]).unwrap();
        let y = x
            .layer_norm(&Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]), 1e-6)
            .unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn concat_of_slices_is_identity() {
        let t = Tensor::new(vec![2, 5, 3], (0..30).map(|v| v as f64 / 7.0).collect()).unwrap();
        for axis in 0..3 {
            let len = t.shape()[axis];
            for cut in 1..len {
                let a = t.slice(axis, 0, cut).unwrap();
                let b = t.slice(axis, cut, len).unwrap();
                assert_eq!(Tensor::concat(&[&a, &b], axis).unwrap(), t);
            }
        }
    }

    #[test]
    fn gradient_accumulates_until_reset() {
        let mut t = Tensor::zeros(&[2]).with_requires_grad(true);
        t.accumulate_grad(&[1.0, 2.0]);
        t.accumulate_grad(&[1.0, 2.0]);
        assert_eq!(t.grad().unwrap(), &[2.0, 4.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }
}
