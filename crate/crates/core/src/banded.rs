//! Symmetric banded matrices and their Cholesky factorization.
//!
//! Storage keeps the lower band row by row: entry `(i, j)` with
//! `i - kd <= j <= i` lives at `data[i * (kd + 1) + (i - j)]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SymBandMatrix {
    n: usize,
    kd: usize,
    data: Vec<f64>,
}

impl SymBandMatrix {
    pub fn zeros(n: usize, kd: usize) -> Self {
        Self {
            n,
            kd,
            data: vec![0.0; n * (kd + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of sub-diagonals kept.
    pub fn bandwidth(&self) -> usize {
        self.kd
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.kd {
            0.0
        } else {
            self.data[i * (self.kd + 1) + (i - j)]
        }
    }

    /// Adds `value` to the symmetric pair `(i, j)` / `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.kd, "entry ({i}, {j}) outside band {}", self.kd);
        self.data[i * (self.kd + 1) + (i - j)] += value;
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_add(1.0, x, &mut y);
        y
    }

    /// `y += alpha * A x`.
    pub fn mul_vec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        let w = self.kd + 1;
        for i in 0..self.n {
            let row = &self.data[i * w..(i + 1) * w];
            let mut acc = row[0] * x[i];
            for k in 1..=self.kd.min(i) {
                let j = i - k;
                acc += row[k] * x[j];
                y[j] += alpha * row[k] * x[i];
            }
            y[i] += alpha * acc;
        }
    }

    /// `x^T A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let w = self.kd + 1;
        let mut total = 0.0;
        for i in 0..self.n {
            let row = &self.data[i * w..(i + 1) * w];
            let mut acc = 0.5 * row[0] * x[i];
            for k in 1..=self.kd.min(i) {
                acc += row[k] * x[i - k];
            }
            total += 2.0 * acc * x[i];
        }
        total
    }

    /// `sum_k c_k A_k` over matrices of equal shape.
    pub fn linear_combination(terms: &[(f64, &SymBandMatrix)]) -> Self {
        let first = terms.first().expect("at least one term").1;
        let mut out = Self::zeros(first.n, first.kd);
        for (c, m) in terms {
            assert_eq!((m.n, m.kd), (first.n, first.kd), "shape mismatch");
            for (o, v) in out.data.iter_mut().zip(&m.data) {
                *o += c * v;
            }
        }
        out
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            n: self.n,
            kd: self.kd,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    /// Dense copy, row-major.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Non-zero entries `(row, col, value)` of the full symmetric matrix, row-major.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kd);
            let hi = (i + self.kd).min(self.n - 1);
            for j in lo..=hi {
                let v = self.get(i, j);
                if v != 0.0 {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    /// Cholesky factorization `A = L L^T` keeping the band structure.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let w = self.kd + 1;
        let mut l = self.data.clone();
        for i in 0..self.n {
            let jmin = i.saturating_sub(self.kd);
            for j in jmin..=i {
                // l[i][j] = (a[i][j] - sum_k l[i][k] l[j][k]) / l[j][j]
                let kmin = jmin.max(j.saturating_sub(self.kd));
                let mut s = l[i * w + (i - j)];
                for k in kmin..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Internal(format!(
                            "matrix not positive definite at pivot {i} (value {s:e})"
                        )));
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Ok(BandCholesky {
            n: self.n,
            kd: self.kd,
            l,
        })
    }
}

/// Lower-triangular banded Cholesky factor.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    kd: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let w = self.kd + 1;
        for i in 0..self.n {
            let mut s = b[i];
            for k in 1..=self.kd.min(i) {
                s -= self.l[i * w + k] * b[i - k];
            }
            b[i] = s / self.l[i * w];
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in 1..=self.kd.min(self.n - 1 - i) {
                s -= self.l[(i + k) * w + k] * b[i + k];
            }
            b[i] = s / self.l[i * w];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn laplacian_like(n: usize) -> SymBandMatrix {
        let mut a = SymBandMatrix::zeros(n, 2);
        for i in 0..n {
            a.add(i, i, 6.0);
            if i >= 1 {
                a.add(i, i - 1, -4.0);
            }
            if i >= 2 {
                a.add(i, i - 2, 1.0);
            }
        }
        a.add(0, 0, 1.0);
        a
    }

    #[test]
    fn symmetric_access_and_matvec() {
        let a = laplacian_like(5);
        assert_eq!(a.get(1, 3), a.get(3, 1));
        assert_eq!(a.get(0, 4), 0.0);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let dense = a.to_dense();
        let y = a.mul_vec(&x);
        for i in 0..5 {
            let expect: f64 = (0..5).map(|j| dense[i][j] * x[j]).sum();
            assert_relative_eq!(y[i], expect, epsilon = 1e-12);
        }
        let q: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert_relative_eq!(a.quad_form(&x), q, epsilon = 1e-12);
    }

    #[test]
    fn triplets_are_row_major() {
        let t = laplacian_like(4).triplets();
        assert!(t.windows(2).all(|w| (w[0].0, w[0].1) < (w[1].0, w[1].1)));
        assert_eq!(t[0], (0, 0, 7.0));
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = SymBandMatrix::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        a.add(1, 0, 2.0);
        assert!(a.cholesky().is_err());
    }

    proptest! {
        #[test]
        fn cholesky_solves_diagonally_dominant_systems(
            n in 1usize..40, kd in 0usize..5, seed in proptest::collection::vec(-1.0f64..1.0, 200),
            rhs in proptest::collection::vec(-10.0f64..10.0, 40),
        ) {
            let mut a = SymBandMatrix::zeros(n, kd);
            let mut it = seed.iter().cycle();
            for i in 0..n {
                a.add(i, i, 2.0 * (kd as f64 + 1.0));
                for k in 1..=kd.min(i) {
                    a.add(i, i - k, *it.next().unwrap());
                }
            }
            let b = &rhs[..n];
            let x = a.cholesky().unwrap().solve(b);
            let r = a.mul_vec(&x);
            for i in 0..n {
                prop_assert!((r[i] - b[i]).abs() <= 1e-10 * (1.0 + b[i].abs()));
            }
        }
    }
}
