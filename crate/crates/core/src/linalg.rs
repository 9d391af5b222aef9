//! Small sparse toolkit: CSR matrices, Jacobi-preconditioned CG, banded
//! Cholesky and extreme-eigenvalue estimates.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SymError};

#[derive(Clone, Debug)]
pub struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    /// Rows given as sorted `(column, value)` lists.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        for row in rows {
            for (c, v) in row {
                indices.push(c);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        Csr { n, indptr, indices, data }
    }

    pub fn from_dense(a: &[f64], n: usize) -> Self {
        let rows = (0..n)
            .map(|i| (0..n).filter(|&j| a[i * n + j] != 0.0).map(|j| (j, a[i * n + j])).collect())
            .collect();
        Self::from_rows(rows)
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.data[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        (0..self.n)
            .into_par_iter()
            .map(|i| self.row(i).map(|(j, v)| (v - self.get(j, i)).abs()).fold(0.0, f64::max))
            .reduce(|| 0.0, f64::max)
    }

    pub fn bandwidth(&self) -> usize {
        (0..self.n).flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j))).max().unwrap_or(0)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients from a zero start.
pub fn pcg(a: &Csr, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, CgStats)> {
    let n = a.n;
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, CgStats { iterations: 0, relative_residual: 0.0 }));
    }
    let dinv: Vec<f64> = a
        .diag()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = a.mul(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(SymError::NotSpd(format!("p·Ap = {pap:e} at iteration {it}")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= rel_tol {
            return Ok((x, CgStats { iterations: it, relative_residual: rel }));
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SymError::Solver(format!("CG did not reach {rel_tol:e} in {max_iter} iterations")))
}

/// Lower-triangular Cholesky factor of a banded SPD matrix.
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // l[i * (bw + 1) + (i - j)] = L_ij for i - bw <= j <= i
    l: Vec<f64>,
}

impl BandedCholesky {
    /// Fails with `NotSpd` at the first non-positive pivot.
    pub fn factor(a: &Csr) -> Result<Self> {
        let (n, bw) = (a.n, a.bandwidth());
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    l[i * w + (i - j)] = v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = l[i * w + (i - j)];
                for k in klo..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if j == i {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(SymError::NotSpd(format!("pivot {s:e} at row {i}")));
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let w = self.bw + 1;
        let mut y = b.to_vec();
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let s: f64 = (lo..i).map(|k| self.l[i * w + (i - k)] * y[k]).sum();
            y[i] = (y[i] - s) / self.l[i * w];
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.bw).min(self.n - 1);
            let s: f64 = (i + 1..=hi).map(|k| self.l[k * w + (k - i)] * y[k]).sum();
            y[i] = (y[i] - s) / self.l[i * w];
        }
        y
    }
}

/// Smallest eigenvalue of an SPD matrix by inverse iteration on its
/// Cholesky factor; returns the Rayleigh quotient.
pub fn smallest_eigenvalue(a: &Csr, chol: &BandedCholesky, iters: usize) -> f64 {
    let n = a.n;
    // deterministic start with components along every direction
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7548776662).fract()).collect();
    let mut rq = f64::INFINITY;
    for _ in 0..iters {
        let nrm = dot(&x, &x).sqrt();
        x.iter_mut().for_each(|v| *v /= nrm);
        let y = chol.solve(&x);
        let ynorm = dot(&y, &y).sqrt();
        let new = dot(&y, &a.mul(&y)) / (ynorm * ynorm);
        x = y;
        if (new - rq).abs() <= 1e-13 * new.abs() {
            return new;
        }
        rq = new;
    }
    rq
}

/// All eigenvalues of a small symmetric matrix, ascending.
pub fn dense_eigenvalues(a: &Csr) -> Vec<f64> {
    let mut ev: Vec<f64> = a.to_dense().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> Csr {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                r.push((i, 2.0));
                if i + 1 < n {
                    r.push((i + 1, -1.0));
                }
                r
            })
            .collect();
        Csr::from_rows(rows)
    }

    #[test]
    fn cg_and_cholesky_agree() {
        let a = laplace_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let (x, stats) = pcg(&a, &b, 1e-12, 1000).unwrap();
        assert!(stats.iterations <= 50);
        let y = BandedCholesky::factor(&a).unwrap().solve(&b);
        assert!(x.iter().zip(&y).all(|(p, q)| (p - q).abs() < 1e-9));
        let r = a.mul(&y);
        assert!(r.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn eigenvalue_estimates() {
        let n = 30;
        let a = laplace_1d(n);
        let exact = 2.0 - 2.0 * (std::f64::consts::PI / (n + 1) as f64).cos();
        let ch = BandedCholesky::factor(&a).unwrap();
        assert!((smallest_eigenvalue(&a, &ch, 500) - exact).abs() < 1e-10);
        assert!((dense_eigenvalues(&a)[0] - exact).abs() < 1e-12);
    }

    #[test]
    fn indefinite_is_rejected() {
        let a = Csr::from_dense(&[1.0, 2.0, 2.0, 1.0], 2);
        assert!(matches!(BandedCholesky::factor(&a), Err(SymError::NotSpd(_))));
        assert_eq!(a.max_asymmetry(), 0.0);
        let (x, s) = pcg(&a, &[0.0, 0.0], 1e-10, 10).unwrap();
        assert_eq!((x, s.iterations), (vec![0.0, 0.0], 0));
    }

    #[test]
    fn cg_iteration_cap() {
        let a = laplace_1d(200);
        let b = vec![1.0; 200];
        assert!(matches!(pcg(&a, &b, 1e-14, 3), Err(SymError::Solver(_))));
    }
}
