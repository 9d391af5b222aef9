//! Polynomials on tangent spaces, restriction to the unit sphere, spherical
//! quadrature and Fourier projection onto trace-free tensors.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SymError};
use crate::metric_ops::{trace, trace_free_basis, Metric};
use crate::scalar::Scalar;
use crate::symcore::{factorial, SymTensor};

/// Unit vector for the fiber metric.
#[derive(Clone, Debug, PartialEq)]
pub struct SpherePoint {
    xi: Vec<f64>,
}

impl SpherePoint {
    pub fn new(xi: Vec<f64>, g: &Metric<f64>) -> Result<Self> {
        if xi.len() != g.dim() {
            return Err(SymError::DimMismatch(format!("vector of length {} for metric of dim {}", xi.len(), g.dim())));
        }
        let nrm = g.norm_sq_vector(&xi);
        if (nrm - 1.0).abs() > 1e-12 {
            return Err(SymError::Shape(format!("|ξ|² = {nrm} is not 1")));
        }
        Ok(SpherePoint { xi })
    }

    /// Normalizes a nonzero vector.
    pub fn normalized(xi: &[f64], g: &Metric<f64>) -> Result<Self> {
        let nrm = g.norm_sq_vector(xi).sqrt();
        if !(nrm > 0.0) {
            return Err(SymError::Shape("zero vector".into()));
        }
        Self::new(xi.iter().map(|x| x / nrm).collect(), g)
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }
}

/// `(κu)(ξ) = u_{i_1..i_m} ξ^{i_1} .. ξ^{i_m}`.
pub fn kappa_eval<S: Scalar>(u: &SymTensor<S>, xi: &[S]) -> S {
    assert_eq!(u.dim(), xi.len(), "kappa_eval: dimension mismatch");
    let ix = u.index();
    let mut acc = S::zero();
    for ((t, c), v) in ix.multis.iter().zip(&ix.mult).zip(u.comps()) {
        let mut term = v.clone().scale(*c as i64, 1);
        for &i in t {
            term = term * xi[i as usize].clone();
        }
        acc = acc + term;
    }
    acc
}

/// Gradient of `κu` in `ξ`.
pub fn kappa_gradient(u: &SymTensor<f64>, xi: &[f64]) -> Vec<f64> {
    let (n, m) = (u.dim(), u.rank());
    if m == 0 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|a| {
            let slice = SymTensor::from_fn(n, m - 1, |t| {
                let mut idx = t.to_vec();
                idx.push(a as u8);
                *u.get(&idx)
            });
            m as f64 * kappa_eval(&slice, xi)
        })
        .collect()
}

/// Homogeneous polynomial in coefficient form: monomial exponents and values.
fn polynomial_of(u: &SymTensor<f64>) -> Vec<(Vec<u32>, f64)> {
    let n = u.dim();
    let ix = u.index();
    ix.multis
        .iter()
        .zip(&ix.mult)
        .zip(u.comps())
        .map(|((t, c), v)| {
            let mut e = vec![0u32; n];
            for &i in t {
                e[i as usize] += 1;
            }
            (e, c * v)
        })
        .collect()
}

fn eval_poly(p: &[(Vec<u32>, f64)], x: &[f64]) -> f64 {
    p.iter().map(|(e, c)| c * e.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product::<f64>()).sum()
}

/// `g^{ab} ∂_a ∂_b` of `κu` at `ξ`, differentiating monomials term by term.
pub fn vertical_laplacian(u: &SymTensor<f64>, g: &Metric<f64>, xi: &[f64]) -> f64 {
    let n = u.dim();
    let poly = polynomial_of(u);
    let mut acc = 0.0;
    for a in 0..n {
        for b in 0..n {
            let w = g.ginv()[a * n + b];
            if w == 0.0 {
                continue;
            }
            let d2: Vec<(Vec<u32>, f64)> = poly
                .iter()
                .filter_map(|(e, c)| {
                    let mut e = e.clone();
                    let mut c = *c;
                    for &v in &[a, b] {
                        if e[v] == 0 {
                            return None;
                        }
                        c *= e[v] as f64;
                        e[v] -= 1;
                    }
                    Some((e, c))
                })
                .collect();
            acc += w * eval_poly(&d2, xi);
        }
    }
    acc
}

fn sample_unit_vectors(g: &Metric<f64>, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..g.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nrm = g.norm_sq_vector(&v).sqrt();
            v.iter().map(|x| x / nrm).collect()
        })
        .collect()
}

/// Largest deviation of `Δ^v κu` from `m(m-1) κ(ju)` over sample unit vectors.
pub fn vertical_laplacian_check(u: &SymTensor<f64>, g: &Metric<f64>) -> f64 {
    let m = u.rank();
    let ju = trace(u, g);
    sample_unit_vectors(g, 16, 0x5eed)
        .iter()
        .map(|xi| {
            let lhs = vertical_laplacian(u, g, xi);
            let rhs = if m >= 2 { (m * (m - 1)) as f64 * kappa_eval(&ju, xi) } else { 0.0 };
            (lhs - rhs).abs()
        })
        .fold(0.0, f64::max)
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    for i in 0..k.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=k {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = k as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[k - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[k - 1 - i] = w;
    }
    (nodes, weights)
}

/// Quadrature rule (points, weights) on the Euclidean unit sphere in R^n,
/// exact for polynomials of degree ≤ `order`.
pub fn sphere_rule(n: usize, order: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    match n {
        2 => {
            let k = order + 2;
            let w = 2.0 * PI / k as f64;
            let pts = (0..k).map(|i| {
                let t = 2.0 * PI * i as f64 / k as f64;
                vec![t.cos(), t.sin()]
            });
            Ok((pts.collect(), vec![w; k]))
        }
        3 => {
            let kz = order / 2 + 1;
            let kp = order + 2;
            let (z, wz) = gauss_legendre(kz);
            let mut pts = Vec::with_capacity(kz * kp);
            let mut ws = Vec::with_capacity(kz * kp);
            for (zi, wi) in z.iter().zip(&wz) {
                let r = (1.0 - zi * zi).sqrt();
                for j in 0..kp {
                    let t = 2.0 * PI * j as f64 / kp as f64;
                    pts.push(vec![r * t.cos(), r * t.sin(), *zi]);
                    ws.push(wi * 2.0 * PI / kp as f64);
                }
            }
            Ok((pts, ws))
        }
        _ => Err(SymError::Unsupported(format!("sphere quadrature in dimension {n}"))),
    }
}

/// `∫_{S^{n-1}} f dω` on the Euclidean unit sphere.
pub fn sphere_quadrature(n: usize, f: &dyn Fn(&[f64]) -> f64, order: usize) -> Result<f64> {
    let (pts, ws) = sphere_rule(n, order)?;
    Ok(pts.iter().zip(&ws).map(|(p, w)| w * f(p)).sum())
}

/// Quadrature rule on the unit sphere of `(R^n, g)` with its induced measure.
pub fn metric_sphere_rule(g: &Metric<f64>, order: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = g.dim();
    let (pts, ws) = sphere_rule(n, order)?;
    // g = L Lᵀ; ξ = L^{-T} η maps the Euclidean sphere isometrically onto it
    let l = g.cholesky_factor();
    let map = |eta: &[f64]| {
        let mut xi = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = eta[i];
            for k in i + 1..n {
                s -= l[k * n + i] * xi[k];
            }
            xi[i] = s / l[i * n + i];
        }
        xi
    };
    Ok((pts.iter().map(|p| map(p)).collect(), ws))
}

/// `Γ(x)` for positive integers and half-integers `x = k/2`.
fn gamma_half(twice: usize) -> f64 {
    if twice % 2 == 0 {
        factorial(twice / 2 - 1) as f64
    } else {
        // Γ(k + 1/2) = (2k)! √π / (4^k k!)
        let k = twice / 2;
        let mut r = PI.sqrt();
        for j in 0..k {
            r *= j as f64 + 0.5;
        }
        r
    }
}

/// `m! π^{n/2} / (2^{m-1} Γ(n/2 + m))`.
pub fn norm_constant(n: usize, m: usize) -> f64 {
    factorial(m) as f64 * PI.powf(n as f64 / 2.0) / (2f64.powi(m as i32 - 1) * gamma_half(n + 2 * m))
}

/// Trace-free tensors `u_0, .., u_M`, one per rank.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicStack {
    pub parts: Vec<SymTensor<f64>>,
}

impl HarmonicStack {
    pub fn max_order(&self) -> usize {
        self.parts.len() - 1
    }

    /// `Σ_m κ(u_m)(ξ)`.
    pub fn eval(&self, xi: &[f64]) -> f64 {
        self.parts.iter().map(|u| kappa_eval(u, xi)).sum()
    }

    /// Largest component difference between two stacks, padding with zeros.
    pub fn max_diff(&self, other: &HarmonicStack) -> f64 {
        let len = self.parts.len().max(other.parts.len());
        (0..len)
            .map(|k| match (self.parts.get(k), other.parts.get(k)) {
                (Some(a), Some(b)) => (a.clone() - b.clone()).max_abs(),
                (Some(a), None) | (None, Some(a)) => a.max_abs(),
                _ => 0.0,
            })
            .fold(0.0, f64::max)
    }
}

/// Fourier coefficients of a function on the unit sphere of `(T_x, g)` with
/// respect to trace-free tensors of rank `0..=M`.
pub fn fourier_project(phi: &dyn Fn(&[f64]) -> f64, g: &Metric<f64>, max_rank: usize) -> Result<HarmonicStack> {
    fourier_project_with_order(phi, g, max_rank, 2 * max_rank + 2)
}

pub fn fourier_project_with_order(
    phi: &dyn Fn(&[f64]) -> f64,
    g: &Metric<f64>,
    max_rank: usize,
    order: usize,
) -> Result<HarmonicStack> {
    if order < 2 * max_rank {
        return Err(SymError::Quadrature { got: order, need: 2 * max_rank });
    }
    let (pts, ws) = metric_sphere_rule(g, order)?;
    let values: Vec<f64> = pts.iter().map(|p| phi(p)).collect();
    let n = g.dim();
    let mut parts = Vec::with_capacity(max_rank + 1);
    for m in 0..=max_rank {
        let basis = trace_free_basis(g, m);
        let nc = norm_constant(n, m);
        let mut u = SymTensor::<f64>::zeros(n, m);
        for e in basis.iter() {
            let c: f64 = pts.iter().zip(&ws).zip(&values).map(|((p, w), v)| w * v * kappa_eval(e, p)).sum();
            u = u + e.scale(&(c / nc));
        }
        parts.push(u);
    }
    Ok(HarmonicStack { parts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric_ops::{harmonic_decompose, mul_metric, project_p};
    use crate::symcore::inner;

    fn random_metric(rng: &mut ChaCha8Rng, n: usize) -> Metric<f64> {
        let a: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    g[i * n + j] += a[i * n + k] * a[j * n + k];
                }
            }
            g[i * n + i] += 0.5;
        }
        Metric::new(n, g).unwrap()
    }

    #[test]
    fn kappa_examples() {
        let a = SymTensor::covector(vec![2.0, -1.0, 0.5]);
        assert_eq!(kappa_eval(&a, &[1.0, 2.0, 4.0]), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_metric(&mut rng, 3);
        let xi = [0.3, -0.7, 1.1];
        assert!((kappa_eval(&g.g_tensor(), &xi) - g.norm_sq_vector(&xi)).abs() < 1e-14);
        // oracle: full triple sum over index tuples
        let u = SymTensor::<f64>::from_fn(2, 3, |_| rng.gen_range(-1.0..1.0));
        let x = [0.4, -1.3];
        let mut brute = 0.0;
        for i in 0..2u8 {
            for j in 0..2u8 {
                for k in 0..2u8 {
                    brute += u.get(&[i, j, k]) * x[i as usize] * x[j as usize] * x[k as usize];
                }
            }
        }
        assert!((kappa_eval(&u, &x) - brute).abs() < 1e-14);
        let iu = mul_metric(&u, &Metric::identity(2));
        let r2 = x[0] * x[0] + x[1] * x[1];
        assert!((kappa_eval(&iu, &x) - r2 * kappa_eval(&u, &x)).abs() < 1e-13);
    }

    #[test]
    fn gradient_by_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = SymTensor::<f64>::from_fn(3, 3, |_| rng.gen_range(-1.0..1.0));
        let x = [0.2, 0.5, -0.4];
        let gr = kappa_gradient(&u, &x);
        for a in 0..3 {
            let h = 1e-6;
            let mut p = x;
            let mut q = x;
            p[a] += h;
            q[a] -= h;
            let fd = (kappa_eval(&u, &p) - kappa_eval(&u, &q)) / (2.0 * h);
            assert!((fd - gr[a]).abs() < 1e-8);
        }
    }

    #[test]
    fn vertical_laplacian_examples() {
        for n in 2..=4 {
            let g = Metric::<f64>::identity(n);
            assert!((vertical_laplacian(&g.g_tensor(), &g, &vec![0.3; n]) - 2.0 * n as f64).abs() < 1e-13);
            assert!(vertical_laplacian_check(&g.g_tensor(), &g) < 1e-13);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_metric(&mut rng, 3);
        let u = SymTensor::<f64>::from_fn(3, 4, |_| rng.gen_range(-1.0..1.0));
        assert!(vertical_laplacian_check(&u, &g) < 1e-12);
        let tf = project_p(&u, &g);
        for xi in sample_unit_vectors(&g, 5, 9) {
            assert!(vertical_laplacian(&tf, &g, &xi).abs() < 1e-12);
        }
        assert_eq!(vertical_laplacian_check(&SymTensor::covector(vec![1.0, 2.0, 3.0]), &g), 0.0);
    }

    #[test]
    fn quadrature_examples() {
        assert!((sphere_quadrature(2, &|_| 1.0, 4).unwrap() - 2.0 * PI).abs() < 1e-12);
        assert!((sphere_quadrature(3, &|_| 1.0, 4).unwrap() - 4.0 * PI).abs() < 1e-12);
        assert!((sphere_quadrature(2, &|p| p[0] * p[0], 2).unwrap() - PI).abs() < 1e-12);
        // ∫ z^4 over S^2 = 4π/5
        assert!((sphere_quadrature(3, &|p| p[2].powi(4), 4).unwrap() - 4.0 * PI / 5.0).abs() < 1e-12);
        assert!(sphere_quadrature(4, &|_| 1.0, 2).is_err());
        let (x, w) = gauss_legendre(5);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let i8: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((i8 - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn norm_constant_values() {
        assert!((norm_constant(2, 0) - 2.0 * PI).abs() < 1e-14);
        assert!((norm_constant(2, 1) - PI).abs() < 1e-14);
        assert!((norm_constant(3, 0) - 4.0 * PI).abs() < 1e-13);
        let u = SymTensor::<f64>::unit(2, &[0]);
        let g = Metric::identity(2);
        let q = sphere_quadrature(2, &|p| kappa_eval(&u, p).powi(2), 4).unwrap();
        assert!((q - norm_constant(2, 1) * inner(&u, &u, &g).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn isometry_on_random_metrics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 2..=3 {
            for m in 0..=4 {
                let g = random_metric(&mut rng, n);
                let u = project_p(&SymTensor::from_fn(n, m, |_| rng.gen_range(-1.0..1.0)), &g);
                let v = project_p(&SymTensor::from_fn(n, m, |_| rng.gen_range(-1.0..1.0)), &g);
                let (pts, ws) = metric_sphere_rule(&g, 2 * m + 2).unwrap();
                let q: f64 = pts.iter().zip(&ws).map(|(p, w)| w * kappa_eval(&u, p) * kappa_eval(&v, p)).sum();
                let expect = norm_constant(n, m) * inner(&u, &v, &g).unwrap();
                let scale = norm_constant(n, m) * inner(&u, &u, &g).unwrap().sqrt() * inner(&v, &v, &g).unwrap().sqrt();
                assert!((q - expect).abs() < 1e-9 * scale, "n={n} m={m}");
            }
        }
    }

    #[test]
    fn fourier_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_metric(&mut rng, 3);
        let u = project_p(&SymTensor::from_fn(3, 2, |_| rng.gen_range(-1.0..1.0)), &g);
        let st = fourier_project(&|p| kappa_eval(&u, p), &g, 3).unwrap();
        assert!((st.parts[2].clone() - u.clone()).max_abs() < 1e-9);
        for k in [0, 1, 3] {
            assert!(st.parts[k].max_abs() < 1e-9);
        }
        let one = fourier_project(&|_| 1.0, &g, 2).unwrap();
        assert!((one.parts[0].comps()[0] - 1.0).abs() < 1e-12);
        assert!(one.parts[1].max_abs() < 1e-12 && one.parts[2].max_abs() < 1e-12);
        assert!(matches!(fourier_project_with_order(&|_| 1.0, &g, 3, 5), Err(SymError::Quadrature { .. })));
    }

    #[test]
    fn fourier_matches_harmonic_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n in 2..=3 {
            for m in 0..=4 {
                let g = random_metric(&mut rng, n);
                let u = SymTensor::<f64>::from_fn(n, m, |_| rng.gen_range(-1.0..1.0));
                let h = harmonic_decompose(&u, &g);
                let st = fourier_project(&|p| kappa_eval(&u, p), &g, m).unwrap();
                for (k, part) in h.parts.iter().enumerate() {
                    assert!((st.parts[m - 2 * k].clone() - part.clone()).max_abs() < 1e-8, "n={n} m={m} k={k}");
                }
            }
        }
    }

    #[test]
    fn lambda_ignores_i() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = random_metric(&mut rng, 3);
        let u = SymTensor::<f64>::from_fn(3, 3, |_| rng.gen_range(-1.0..1.0));
        let iu = mul_metric(&u, &g);
        for xi in sample_unit_vectors(&g, 10, 1) {
            let sp = SpherePoint::new(xi, &g).unwrap();
            assert!((kappa_eval(&iu, sp.xi()) - kappa_eval(&u, sp.xi())).abs() < 1e-12);
        }
        assert!(SpherePoint::new(vec![2.0, 0.0, 0.0], &Metric::identity(3)).is_err());
    }
}
