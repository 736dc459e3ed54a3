//! Small dense complex matrices and sparse operators.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::DMatrix;
pub use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Dense complex matrix in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::param("entries", "non-finite value"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::from_vec(rows, cols, data.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Column vector.
    pub fn column(entries: &[C64]) -> Self {
        Self {
            rows: entries.len(),
            cols: 1,
            data: entries.to_vec(),
        }
    }

    pub fn basis(n: usize, k: usize) -> Self {
        let mut v = Self::zeros(n, 1);
        v.data[k] = ONE;
        v
    }

    pub fn diag(entries: &[C64]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, z) in entries.iter().enumerate() {
            m[(i, i)] = *z;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn dagger(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn try_matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self.matmul(other))
    }

    /// Kronecker product.
    pub fn kron(&self, other: &Self) -> Self {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        Self::from_fn(rows, cols, |i, j| {
            self[(i / other.rows, j / other.cols)] * other[(i % other.rows, j % other.cols)]
        })
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest entry of `|A - A†|`.
    pub fn hermitian_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut dev = 0.0f64;
        for i in 0..self.rows {
            for j in i..self.cols {
                dev = dev.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        dev
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `⟨a|b⟩` for column vectors.
    pub fn inner(&self, other: &Self) -> C64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    /// Outer product `|a⟩⟨b|` of column vectors.
    pub fn outer(a: &Self, b: &Self) -> Self {
        Self::from_fn(a.rows, b.rows, |i, j| a.data[i] * b.data[j].conj())
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let n = self.rows;
        let m = DMatrix::from_fn(n, n, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5);
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    /// Matrix exponential by scaling and squaring with a Taylor series.
    pub fn expm(&self) -> Self {
        assert!(self.is_square());
        let n = self.rows;
        let norm1 = (0..n)
            .map(|j| (0..n).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max);
        let mut squarings = 0;
        let mut scale = 1.0;
        while norm1 * scale > 0.25 {
            scale *= 0.5;
            squarings += 1;
        }
        let a = self.scale_real(scale);
        let mut result = Self::identity(n);
        let mut term = Self::identity(n);
        for k in 1..=14 {
            term = term.matmul(&a).scale_real(1.0 / k as f64);
            result = &result + &term;
            if term.max_abs() < 1e-18 {
                break;
            }
        }
        for _ in 0..squarings {
            result = result.matmul(&result);
        }
        result
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: Self) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: Self) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: Self) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

/// Square sparse operator stored as `(row, col, value)` triplets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseOp {
    pub dim: usize,
    pub entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: C64) {
        if value != ZERO {
            self.entries.push((row, col, value));
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_dense(m: &ComplexMatrix) -> Self {
        let mut op = Self::new(m.rows());
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                op.push(i, j, m[(i, j)]);
            }
        }
        op
    }

    pub fn to_dense(&self) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(self.dim, self.dim);
        for &(i, j, z) in &self.entries {
            m[(i, j)] += z;
        }
        m
    }

    pub fn dagger(&self) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|&(i, j, z)| (j, i, z.conj())).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = Self::new(self.dim);
        for &(i, j, z) in &self.entries {
            out.push(i, j, z * s);
        }
        out
    }

    /// Sum with duplicate positions merged.
    pub fn plus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.entries.extend_from_slice(&other.entries);
        out.compact()
    }

    /// Merges duplicate positions and drops zeros.
    pub fn compact(&self) -> Self {
        let mut e = self.entries.clone();
        e.sort_by_key(|&(i, j, _)| (i, j));
        let mut out: Vec<(usize, usize, C64)> = Vec::with_capacity(e.len());
        for (i, j, z) in e {
            match out.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += z,
                _ => out.push((i, j, z)),
            }
        }
        out.retain(|&(_, _, z)| z.norm() > 0.0);
        Self {
            dim: self.dim,
            entries: out,
        }
    }

    /// Product `self * other`.
    pub fn compose(&self, other: &Self) -> Self {
        let mut out = Self::new(self.dim);
        for &(i, k, a) in &self.entries {
            for &(k2, j, b) in &other.entries {
                if k == k2 {
                    out.entries.push((i, j, a * b));
                }
            }
        }
        out.compact()
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.dim];
        for &(i, j, z) in &self.entries {
            out[i] += z * v[j];
        }
        out
    }

    /// `out += s * self * rho` for dense row-major `rho`.
    pub fn left_mul_acc(&self, rho: &[C64], s: C64, out: &mut [C64]) {
        let n = self.dim;
        for &(i, k, z) in &self.entries {
            let f = z * s;
            let src = &rho[k * n..(k + 1) * n];
            let dst = &mut out[i * n..(i + 1) * n];
            for (d, r) in dst.iter_mut().zip(src) {
                *d += f * r;
            }
        }
    }

    /// `out += s * rho * self`.
    pub fn right_mul_acc(&self, rho: &[C64], s: C64, out: &mut [C64]) {
        let n = self.dim;
        for &(k, j, z) in &self.entries {
            let f = z * s;
            for i in 0..n {
                out[i * n + j] += f * rho[i * n + k];
            }
        }
    }

    /// `out += s * self * rho * self†`.
    pub fn sandwich_acc(&self, rho: &[C64], s: C64, out: &mut [C64]) {
        let n = self.dim;
        for &(i, k, a) in &self.entries {
            for &(j, l, b) in &self.entries {
                out[i * n + j] += s * a * rho[k * n + l] * b.conj();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, RandomStream};

    fn random_matrix(rows: usize, cols: usize, s: &mut RandomStream) -> ComplexMatrix {
        ComplexMatrix::from_fn(rows, cols, |_, _| C64::new(s.normal(0.0, 1.0), s.normal(0.0, 1.0)))
    }

    #[test]
    fn kron_identity() {
        let k = ComplexMatrix::identity(2).kron(&ComplexMatrix::identity(3));
        assert_eq!(k, ComplexMatrix::identity(6));
    }

    #[test]
    fn kron_basis_vector() {
        let x = ComplexMatrix::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let e0 = ComplexMatrix::from_real(2, 1, &[1.0, 0.0]).unwrap();
        let k = x.kron(&e0);
        assert_eq!((k.rows(), k.cols()), (4, 2));
        let applied = k.matmul(&ComplexMatrix::basis(2, 0));
        assert_eq!(applied, ComplexMatrix::basis(4, 2));
    }

    #[test]
    fn kron_mixed_product_oracle() {
        let mut s = RandomStream::new(11, Purpose::Test, 0);
        let a = random_matrix(3, 3, &mut s);
        let b = random_matrix(2, 2, &mut s);
        let ab = a.kron(&b);
        for _ in 0..100 {
            let x = random_matrix(3, 1, &mut s);
            let y = random_matrix(2, 1, &mut s);
            let lhs = ab.matmul(&x.kron(&y));
            let rhs = a.matmul(&x).kron(&b.matmul(&y));
            assert!((&lhs - &rhs).max_abs() < 1e-12);
        }
    }

    #[test]
    fn expm_of_rotation_generator() {
        let theta = 0.7;
        let g = ComplexMatrix::from_vec(2, 2, vec![ZERO, -I * theta, -I * theta, ZERO]).unwrap();
        let u = g.expm();
        assert!((u[(0, 0)] - C64::new(theta.cos(), 0.0)).norm() < 1e-13);
        assert!((u[(1, 0)] - C64::new(0.0, -theta.sin())).norm() < 1e-13);
        let big = g.scale_real(40.0).expm();
        let ud = big.matmul(&big.dagger());
        assert!((&ud - &ComplexMatrix::identity(2)).max_abs() < 1e-11);
    }

    #[test]
    fn sparse_products_match_dense() {
        let mut s = RandomStream::new(5, Purpose::Test, 1);
        let a = random_matrix(4, 4, &mut s);
        let rho = random_matrix(4, 4, &mut s);
        let sp = SparseOp::from_dense(&a);
        let mut out = vec![ZERO; 16];
        sp.sandwich_acc(rho.data(), ONE, &mut out);
        let dense = a.matmul(&rho).matmul(&a.dagger());
        let got = ComplexMatrix::from_vec(4, 4, out).unwrap();
        assert!((&got - &dense).max_abs() < 1e-12);

        let mut l = vec![ZERO; 16];
        sp.left_mul_acc(rho.data(), ONE, &mut l);
        sp.right_mul_acc(rho.data(), -ONE, &mut l);
        let comm = &a.matmul(&rho) - &rho.matmul(&a);
        assert!((&ComplexMatrix::from_vec(4, 4, l).unwrap() - &comm).max_abs() < 1e-12);

        let sq = sp.dagger().compose(&sp).to_dense();
        assert!((&sq - &a.dagger().matmul(&a)).max_abs() < 1e-12);
    }

    #[test]
    fn hermitian_checks() {
        let h = ComplexMatrix::from_vec(2, 2, vec![ONE, I, -I, ONE]).unwrap();
        assert!(h.hermitian_deviation() < 1e-15);
        let ev = h.hermitian_eigenvalues();
        assert!((ev[0] - 0.0).abs() < 1e-12 && (ev[1] - 2.0).abs() < 1e-12);
        assert!(ComplexMatrix::from_vec(2, 2, vec![ONE; 3]).is_err());
    }
}
