//! Pointwise metric algebra: `i`, `j`, `i_ξ`, `j_ξ`, the harmonic
//! decomposition, the trace-free projections and the principal symbol.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, SymError};
use crate::scalar::Scalar;
use crate::symcore::{inner, sym_index, sym_len, sym_product, SymTensor};

/// Metric tensor at a point together with its inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct Metric<S> {
    n: usize,
    g: Vec<S>,
    ginv: Vec<S>,
    identity: bool,
}

pub type MetricPoint = Metric<f64>;

impl<S: Scalar> Metric<S> {
    pub fn identity(n: usize) -> Self {
        let mut g = vec![S::zero(); n * n];
        for i in 0..n {
            g[i * n + i] = S::one();
        }
        Metric { n, ginv: g.clone(), g, identity: true }
    }

    /// Metric from a matrix and a precomputed inverse; no checks.
    pub fn from_parts(n: usize, g: Vec<S>, ginv: Vec<S>) -> Self {
        Metric { n, g, ginv, identity: false }
    }

    /// Inverts by Gauss–Jordan elimination without pivoting, which is safe for
    /// positive definite input.
    pub fn invert_unpivoted(n: usize, g: Vec<S>) -> Self {
        let mut a = g.clone();
        let mut inv = vec![S::zero(); n * n];
        for i in 0..n {
            inv[i * n + i] = S::one();
        }
        for c in 0..n {
            let piv = a[c * n + c].recip();
            for k in 0..n {
                a[c * n + k] = a[c * n + k].clone() * piv.clone();
                inv[c * n + k] = inv[c * n + k].clone() * piv.clone();
            }
            for r in 0..n {
                if r == c {
                    continue;
                }
                let f = a[r * n + c].clone();
                if f.is_exact_zero() {
                    continue;
                }
                for k in 0..n {
                    a[r * n + k] = a[r * n + k].clone() - f.clone() * a[c * n + k].clone();
                    inv[r * n + k] = inv[r * n + k].clone() - f.clone() * inv[c * n + k].clone();
                }
            }
        }
        Metric { n, g, ginv: inv, identity: false }
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn g(&self) -> &[S] {
        &self.g
    }
    pub fn ginv(&self) -> &[S] {
        &self.ginv
    }
    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// The metric as a rank-2 symmetric tensor.
    pub fn g_tensor(&self) -> SymTensor<S> {
        SymTensor::from_fn(self.n, 2, |t| self.g[t[0] as usize * self.n + t[1] as usize].clone())
    }

    /// `ξ^a = g^{ab} ξ_b`.
    pub fn raise(&self, xi: &[S]) -> Vec<S> {
        (0..self.n)
            .map(|a| {
                (0..self.n).fold(S::zero(), |acc, b| acc + self.ginv[a * self.n + b].clone() * xi[b].clone())
            })
            .collect()
    }

    /// `g^{ab} ξ_a ξ_b`.
    pub fn norm_sq_covector(&self, xi: &[S]) -> S {
        self.raise(xi).into_iter().zip(xi).fold(S::zero(), |acc, (a, b)| acc + a * b.clone())
    }

    /// `g_{ab} v^a v^b`.
    pub fn norm_sq_vector(&self, v: &[S]) -> S {
        let n = self.n;
        let mut acc = S::zero();
        for a in 0..n {
            for b in 0..n {
                acc = acc + self.g[a * n + b].clone() * v[a].clone() * v[b].clone();
            }
        }
        acc
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> Metric<T> {
        Metric { n: self.n, g: self.g.iter().map(&f).collect(), ginv: self.ginv.iter().map(&f).collect(), identity: self.identity }
    }
}

impl Metric<f64> {
    /// Validated metric from a row-major symmetric positive definite matrix.
    pub fn new(n: usize, g: Vec<f64>) -> Result<Self> {
        if n == 0 || g.len() != n * n {
            return Err(SymError::Shape(format!("metric needs {} entries", n * n)));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(SymError::NotSpd("non-finite entry".into()));
        }
        let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 0..n {
            for j in 0..i {
                if (g[i * n + j] - g[j * n + i]).abs() > 1e-12 * scale {
                    return Err(SymError::NotSpd(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        let mat = DMatrix::from_row_slice(n, n, &g);
        let chol = mat.clone().cholesky().ok_or_else(|| SymError::NotSpd("Cholesky failed".into()))?;
        let inv = chol.inverse();
        let prod = &mat * &inv;
        let defect = (prod - DMatrix::identity(n, n)).amax();
        if defect > 1e-12 * inv.amax().max(1.0) * scale.max(1.0) {
            return Err(SymError::NotSpd(format!("inverse defect {defect:e}")));
        }
        let mut ginv = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                ginv[i * n + j] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            }
        }
        let identity = (0..n * n).all(|k| g[k] == if k / n == k % n { 1.0 } else { 0.0 });
        Ok(Metric { n, g, ginv, identity })
    }

    /// Lower-triangular `L` with `g = L Lᵀ` (row-major).
    pub fn cholesky_factor(&self) -> Vec<f64> {
        let mat = DMatrix::from_row_slice(self.n, self.n, &self.g);
        let l = mat.cholesky().expect("validated metric").l();
        let mut out = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                out[i * self.n + j] = l[(i, j)];
            }
        }
        out
    }
}

/// The operator `i`: symmetric multiplication by the metric.
pub fn mul_metric<S: Scalar>(u: &SymTensor<S>, g: &Metric<S>) -> SymTensor<S> {
    assert_eq!(u.dim(), g.dim(), "mul_metric: dimension mismatch");
    sym_product(&g.g_tensor(), u)
}

/// `i^k u`.
pub fn mul_metric_pow<S: Scalar>(u: &SymTensor<S>, g: &Metric<S>, k: usize) -> SymTensor<S> {
    (0..k).fold(u.clone(), |acc, _| mul_metric(&acc, g))
}

/// The operator `j`: contraction of the first two indices with `g^{-1}`.
/// Tensors of rank below two are sent to the zero scalar.
pub fn trace<S: Scalar>(u: &SymTensor<S>, g: &Metric<S>) -> SymTensor<S> {
    let n = u.dim();
    assert_eq!(n, g.dim(), "trace: dimension mismatch");
    let m = u.rank();
    if m < 2 {
        return SymTensor::zeros(n, 0);
    }
    let iu = u.index();
    let io = sym_index(n, m - 2);
    let mut buf = vec![0u8; m];
    let comps = io
        .multis
        .iter()
        .map(|jt| {
            let mut acc = S::zero();
            for a in 0..n {
                for b in 0..n {
                    if g.is_identity() && a != b {
                        continue;
                    }
                    let w = &g.ginv()[a * n + b];
                    if w.is_exact_zero() {
                        continue;
                    }
                    buf[0] = a as u8;
                    buf[1] = b as u8;
                    buf[2..].copy_from_slice(jt);
                    let v = u.comps()[iu.position_unsorted(&buf)].clone();
                    acc = if g.is_identity() { acc + v } else { acc + w.clone() * v };
                }
            }
            acc
        })
        .collect();
    SymTensor::from_vec(n, m - 2, comps).expect("shape")
}

/// `j i^k u`.
pub fn ji_apply<S: Scalar>(u: &SymTensor<S>, g: &Metric<S>, k: usize) -> SymTensor<S> {
    trace(&mul_metric_pow(u, g, k), g)
}

/// Right-hand side of the commutation formula for `j i^k`.
pub fn ji_commutation_rhs<S: Scalar>(u: &SymTensor<S>, g: &Metric<S>, k: usize) -> SymTensor<S> {
    assert!(k >= 1);
    let (n, m) = (u.dim() as i64, u.rank() as i64);
    let k_ = k as i64;
    let den = (m + 2 * k_ - 1) * (m + 2 * k_);
    let first = mul_metric_pow(u, g, k - 1).scale_ratio(2 * k_ * (n + 2 * m + 2 * k_ - 2), den);
    if m < 2 {
        return first;
    }
    first + mul_metric_pow(&trace(u, g), g, k).scale_ratio(m * (m - 1), den)
}

/// Factor `c` in `j i^k v = c i^{k-1} v` for trace-free `v` of rank `r`.
fn ji_factor(n: usize, r: usize, k: usize) -> (i64, i64) {
    let (n, r, k) = (n as i64, r as i64, k as i64);
    (2 * k * (n + 2 * r + 2 * k - 2), (r + 2 * k - 1) * (r + 2 * k))
}

/// Eigenvalue of `ji` on `i^k Ker j_{m-2k}` inside rank `m`, as a fraction.
pub fn lambda_k(n: usize, m: usize, k: usize) -> (i64, i64) {
    let (n, m, k) = (n as i64, m as i64, k as i64);
    (2 * (k + 1) * (n + 2 * m - 2 * k), (m + 1) * (m + 2))
}

/// Trace-free parts `u_{m-2k}` with `u = Σ_k i^k u_{m-2k}`.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicParts<S> {
    pub parts: Vec<SymTensor<S>>,
}

impl<S: Scalar> HarmonicParts<S> {
    pub fn reconstruct(&self, g: &Metric<S>) -> SymTensor<S> {
        let mut acc = self.parts[0].clone();
        for (k, p) in self.parts.iter().enumerate().skip(1) {
            acc = acc + mul_metric_pow(p, g, k);
        }
        acc
    }
}

pub fn harmonic_decompose<S: Scalar>(u: &SymTensor<S>, g: &Metric<S>) -> HarmonicParts<S> {
    let (n, m) = (u.dim(), u.rank());
    if m < 2 {
        return HarmonicParts { parts: vec![u.clone()] };
    }
    // j u = Σ_{k≥1} c(k, m-2k) i^{k-1} u_{m-2k}
    let w = harmonic_decompose(&trace(u, g), g);
    let mut parts = vec![u.clone()];
    let mut top = u.clone();
    for (km1, wk) in w.parts.into_iter().enumerate() {
        let k = km1 + 1;
        let (num, den) = ji_factor(n, m - 2 * k, k);
        let part = wk.scale_ratio(den, num);
        top = top - mul_metric_pow(&part, g, k);
        parts.push(part);
    }
    parts[0] = top;
    HarmonicParts { parts }
}

/// `(ji)^{-1}`, applied part by part.
pub fn ji_inverse<S: Scalar>(u: &SymTensor<S>, g: &Metric<S>) -> SymTensor<S> {
    let (n, m) = (u.dim(), u.rank());
    let h = harmonic_decompose(u, g);
    let mut acc: Option<SymTensor<S>> = None;
    for (k, p) in h.parts.iter().enumerate() {
        let (num, den) = lambda_k(n, m, k);
        let t = mul_metric_pow(&p.scale_ratio(den, num), g, k);
        acc = Some(match acc {
            None => t,
            Some(a) => a + t,
        });
    }
    acc.expect("at least one part")
}

/// Projection onto trace-free tensors (identity in ranks 0 and 1).
pub fn project_p<S: Scalar>(u: &SymTensor<S>, g: &Metric<S>) -> SymTensor<S> {
    if u.rank() < 2 {
        return u.clone();
    }
    u.clone() - project_q(u, g)
}

/// `q = i (ji)^{-1} j`.
pub fn project_q<S: Scalar>(u: &SymTensor<S>, g: &Metric<S>) -> SymTensor<S> {
    if u.rank() < 2 {
        return SymTensor::zeros(u.dim(), u.rank());
    }
    mul_metric(&ji_inverse(&trace(u, g), g), g)
}

/// `i_ξ u = σ(ξ ⊗ u)` for a covector `ξ`.
pub fn i_xi<S: Scalar>(u: &SymTensor<S>, xi: &[S]) -> SymTensor<S> {
    assert_eq!(u.dim(), xi.len(), "i_xi: dimension mismatch");
    sym_product(&SymTensor::covector(xi.to_vec()), u)
}

/// `(j_ξ u)_{J} = ξ^a u_{aJ}` with `ξ` raised by `g`; zero scalar for rank 0.
pub fn j_xi<S: Scalar>(u: &SymTensor<S>, xi: &[S], g: &Metric<S>) -> SymTensor<S> {
    let n = u.dim();
    assert_eq!(n, xi.len(), "j_xi: dimension mismatch");
    let m = u.rank();
    if m == 0 {
        return SymTensor::zeros(n, 0);
    }
    let up = g.raise(xi);
    let iu = u.index();
    let mut buf = vec![0u8; m];
    SymTensor::from_fn(n, m - 1, |jt| {
        let mut acc = S::zero();
        for (a, xa) in up.iter().enumerate() {
            buf[0] = a as u8;
            buf[1..].copy_from_slice(jt);
            acc = acc + xa.clone() * u.comps()[iu.position_unsorted(&buf)].clone();
        }
        acc
    })
}

fn metric_key(g: &Metric<f64>, m: usize) -> (usize, usize, Vec<u64>) {
    (g.dim(), m, g.g().iter().map(|x| x.to_bits()).collect())
}

/// Orthonormal basis (for `inner` under `g`) of trace-free rank-`m` tensors,
/// cached per (n, m, g).
pub fn trace_free_basis(g: &Metric<f64>, m: usize) -> Arc<Vec<SymTensor<f64>>> {
    type Cache = RwLock<HashMap<(usize, usize, Vec<u64>), Arc<Vec<SymTensor<f64>>>>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    let key = metric_key(g, m);
    if let Some(b) = cache.read().unwrap().get(&key) {
        return b.clone();
    }
    let basis = Arc::new(build_trace_free_basis(g, m));
    cache.write().unwrap().entry(key).or_insert(basis).clone()
}

fn build_trace_free_basis(g: &Metric<f64>, m: usize) -> Vec<SymTensor<f64>> {
    let n = g.dim();
    let target = sym_len(n, m) - if m >= 2 { sym_len(n, m - 2) } else { 0 };
    let mut basis: Vec<SymTensor<f64>> = Vec::with_capacity(target);
    let ix = sym_index(n, m);
    for (t, c) in ix.multis.iter().zip(&ix.mult) {
        if basis.len() == target {
            break;
        }
        let e = SymTensor::<f64>::unit(n, t).scale(&(1.0 / c.sqrt()));
        let mut v = project_p(&e, g);
        let start = inner(&v, &v, g).unwrap().sqrt();
        for _ in 0..2 {
            for b in &basis {
                let c = inner(b, &v, g).unwrap();
                v = v - b.scale(&c);
            }
        }
        let nv = inner(&v, &v, g).unwrap().sqrt();
        if nv > 1e-8 * start.max(1e-300) && nv > 1e-12 {
            basis.push(v.scale(&(1.0 / nv)));
        }
    }
    debug_assert_eq!(basis.len(), target);
    basis
}

/// Matrix of `f ↦ j_ξ p i_ξ f` on trace-free tensors, in an orthonormal basis.
#[derive(Clone, Debug)]
pub struct SymbolMatrix {
    pub matrix: DMatrix<f64>,
    pub basis: Arc<Vec<SymTensor<f64>>>,
}

impl SymbolMatrix {
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }
}

pub fn symbol_matrix(xi: &[f64], g: &Metric<f64>, m: usize) -> Result<SymbolMatrix> {
    if xi.len() != g.dim() {
        return Err(SymError::DimMismatch(format!("covector of length {} for metric of dim {}", xi.len(), g.dim())));
    }
    if xi.iter().all(|&x| x == 0.0) {
        return Err(SymError::Unsupported("symbol at ξ = 0".into()));
    }
    let basis = trace_free_basis(g, m);
    let d = basis.len();
    let images: Vec<SymTensor<f64>> =
        basis.iter().map(|b| j_xi(&project_p(&i_xi(b, xi), g), xi, g)).collect();
    let mut mat = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            mat[(a, b)] = inner(&basis[a], &images[b], g)?;
        }
    }
    Ok(SymbolMatrix { matrix: mat, basis })
}

/// `(1/(m+1)) (|ξ|²|f|² + m (1 - 2/(n+2m-2)) |j_ξ f|²)` for trace-free `f`.
pub fn symbol_quadratic_form(f: &SymTensor<f64>, xi: &[f64], g: &Metric<f64>) -> f64 {
    let (n, m) = (f.dim() as f64, f.rank() as f64);
    let ff = inner(f, f, g).unwrap();
    let xx = g.norm_sq_covector(xi);
    let jf = j_xi(f, xi, g);
    let second = if f.rank() == 0 { 0.0 } else { m * (1.0 - 2.0 / (n + 2.0 * m - 2.0)) * inner(&jf, &jf, g).unwrap() };
    (xx * ff + second) / (m + 1.0)
}
