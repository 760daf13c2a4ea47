//! Dense row-major `f32` tensors.
//!
//! Every reduction (matrix products, sums, softmax normalizers) accumulates
//! in `f64` and rounds once to `f32` on store. This is the single precision
//! policy for the whole crate, so results are bitwise reproducible for a
//! fixed summation order.
//!
//! There is no implicit broadcasting. Binary ops require equal shapes; the
//! only scalar form is [`Rhs::Scalar`], and adding a bias row is the explicit
//! [`Tensor::add_row`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    /// `relu_grad_mask(pre, upstream)`: upstream where `pre > 0`, else 0.
    ReluGradMask,
}

#[derive(Debug, Clone, Copy)]
pub enum Rhs<'a> {
    Tensor(&'a Tensor),
    Scalar(f32),
    None,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "dimensions must be non-empty and at least 1".into(),
        });
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("buffer holds {} elements", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn filled(shape: &[usize], value: f32) -> Result<Self> {
        let mut t = Tensor::zeros(shape)?;
        t.data.fill(value);
        Ok(t)
    }

    /// Row-major 2-D tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidShape {
                shape: vec![rows.len(), cols],
                reason: "ragged rows".into(),
            });
        }
        Tensor::from_vec(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Tensor::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
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

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: vec![0, 0],
            }),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let cols = self.len() / self.shape[0];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_vec(vec![c, r], out)
    }

    /// Gathers rows by index into a new `[indices.len() × cols]` tensor.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (r, c) = self.dims2("select_rows")?;
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(Error::InvalidShape {
                    shape: self.shape.clone(),
                    reason: format!("row {i} out of range"),
                });
            }
            out.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        Tensor::from_vec(vec![indices.len(), c], out)
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn zip_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Tensor> {
        self.same_shape(other, op)?;
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

    fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
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

    pub fn scale(&self, s: f32) -> Tensor {
        self.map(|a| a * s)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|a| a.max(0.0))
    }

    /// Passes `upstream` through where `self > 0`; the subgradient at 0 is 0.
    pub fn relu_grad_mask(&self, upstream: &Tensor) -> Result<Tensor> {
        self.zip_with(
            upstream,
            "relu_grad_mask",
            |pre, g| if pre > 0.0 { g } else { 0.0 },
        )
    }

    /// `[n × c] + [c]`, adding the vector to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let (_, c) = self.dims2("add_row")?;
        if bias.shape != [c] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: self.shape.clone(),
                right: bias.shape.clone(),
            });
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(c) {
            for (x, &b) in row.iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
        Ok(out)
    }

    /// Column sums of an `[n × c]` tensor as a `[c]` tensor.
    pub fn column_sums(&self) -> Result<Tensor> {
        let (_, c) = self.dims2("column_sums")?;
        let mut acc = vec![0.0f64; c];
        for row in self.data.chunks_exact(c) {
            for (a, &x) in acc.iter_mut().zip(row) {
                *a += f64::from(x);
            }
        }
        Tensor::from_vec(vec![c], acc.into_iter().map(|a| a as f32).collect())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&x| f64::from(x)).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.fill(0.0);
        for (p, &aip) in a.data[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let aip = f64::from(aip);
            for (s, &bpj) in acc.iter_mut().zip(&b.data[p * n..(p + 1) * n]) {
                *s += aip * f64::from(bpj);
            }
        }
        out.extend(acc.iter().map(|&s| s as f32));
    }
    Tensor::from_vec(vec![m, n], out)
}

pub fn elementwise(op: ElementwiseOp, a: &Tensor, rhs: Rhs<'_>) -> Result<Tensor> {
    match (op, rhs) {
        (ElementwiseOp::Add, Rhs::Tensor(b)) => a.add(b),
        (ElementwiseOp::Sub, Rhs::Tensor(b)) => a.sub(b),
        (ElementwiseOp::Mul, Rhs::Tensor(b)) => a.mul(b),
        (ElementwiseOp::ReluGradMask, Rhs::Tensor(b)) => a.relu_grad_mask(b),
        (ElementwiseOp::Add, Rhs::Scalar(s)) => Ok(a.map(|x| x + s)),
        (ElementwiseOp::Sub, Rhs::Scalar(s)) => Ok(a.map(|x| x - s)),
        (ElementwiseOp::Mul | ElementwiseOp::Scale, Rhs::Scalar(s)) => Ok(a.scale(s)),
        (ElementwiseOp::Relu, _) => Ok(a.relu()),
        (op, _) => Err(Error::InvalidShape {
            shape: a.shape.clone(),
            reason: format!("{op:?} does not accept this operand"),
        }),
    }
}

/// Row-wise softmax of an `[n × c]` logit matrix, max-subtracted.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (_, c) = logits.dims2("softmax_rows")?;
    if c < 2 {
        return Err(Error::InvalidShape {
            shape: logits.shape.clone(),
            reason: "softmax needs at least two columns".into(),
        });
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("softmax_rows"));
    }
    let mut out = Vec::with_capacity(logits.len());
    let mut exps = vec![0.0f64; c];
    for row in logits.data.chunks_exact(c) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut z = 0.0;
        for (e, &x) in exps.iter_mut().zip(row) {
            *e = (f64::from(x) - f64::from(max)).exp();
            z += *e;
        }
        out.extend(exps.iter().map(|e| (e / z) as f32));
    }
    Tensor::from_vec(logits.shape.clone(), out)
}
