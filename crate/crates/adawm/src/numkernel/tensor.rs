//! Dense row-major 64-bit tensors.

use serde::{Deserialize, Serialize};

use super::KernelError;

/// Dense tensor with row-major `f64` storage.
///
/// Rank-1 tensors have shape `[n]`, rank-2 tensors `[rows, cols]`.
/// Scalars are represented as shape `[1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, KernelError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(KernelError::ShapeMismatch {
                op: "Tensor::new".into(),
                detail: format!("shape {:?} implies {} elements, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, KernelError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows when viewed as a matrix; rank-1 tensors are a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Columns when viewed as a matrix.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => self.data.len(),
        }
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.data[idx]
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Frobenius norm: sqrt of the sum of squared entries.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.numel(), other.numel());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn axpy(&mut self, c: f64, other: &Tensor) {
        debug_assert_eq!(self.numel(), other.numel());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }
}

/// `a (m x k) * b (k x n) -> (m x n)`.
pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    debug_assert_eq!(k, k2, "matmul inner dims");
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor { shape: vec![m, n], data: out }
}

/// `a (m x k) * b^T (n x k) -> (m x n)`.
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let (n, k2) = (b.rows(), b.cols());
    debug_assert_eq!(k, k2, "matmul_nt inner dims");
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
    Tensor { shape: vec![m, n], data: out }
}

/// `a^T (k x m) * b (k x n) -> (m x n)`.
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    debug_assert_eq!(k, k2, "matmul_tn inner dims");
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for p in 0..k {
        let arow = &ad[p * m..(p + 1) * m];
        let brow = &bd[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor { shape: vec![m, n], data: out }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frobenius_identity() {
        let m = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((m.frobenius_norm() - 2.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn frobenius_zero_and_345() {
        assert_eq!(Tensor::zeros(&[3, 4]).frobenius_norm(), 0.0);
        let m = Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(m.frobenius_norm(), 5.0);
    }

    #[test]
    fn frobenius_absolute_homogeneity() {
        let m = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, -0.25, 4.0]).unwrap();
        for c in [-3.0, -1.0, 0.0, 0.5, 2.0] {
            let lhs = m.scale(c).frobenius_norm();
            let rhs = c.abs() * m.frobenius_norm();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn matmul_against_triple_loop() {
        // random-ish 4x3 * 3x2 vs a naive triple loop
        let a = Tensor::matrix(4, 3, (0..12).map(|i| (i as f64) * 0.37 - 1.3).collect()).unwrap();
        let b = Tensor::matrix(3, 2, (0..6).map(|i| (i as f64) * -0.53 + 0.9).collect()).unwrap();
        let c = matmul(&a, &b);
        for i in 0..4 {
            for j in 0..2 {
                let mut acc = 0.0;
                for p in 0..3 {
                    acc += a.at(i, p) * b.at(p, j);
                }
                assert!((c.at(i, j) - acc).abs() < 1e-12);
            }
        }
    }
}
