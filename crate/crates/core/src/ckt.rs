//! Conformal Killing tensors: residual reports, recovery of `v`, exact
//! polynomial kernels on flat space and the two-dimensional reduction to a
//! Cauchy–Riemann system.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use num::{BigInt, One, Zero};
use rayon::prelude::*;

use crate::error::{Result, SymError};
use crate::geom::{delta_op, Chart, ChartRef, FieldRef, LocalGeometry, ScalarFn, SumField, TensorField};
use crate::jet::{max_order, Jet};
use crate::metric_ops::{mul_metric, project_p, trace, Metric};
use crate::scalar::{Rational, Scalar};
use crate::sphere::kappa_eval;
use crate::symcore::{inner, sym_index, sym_product, SymTensor};

/// `Σ_α x^α T_α` with symmetric coefficient tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyField<S: Scalar> {
    n: usize,
    m: usize,
    terms: BTreeMap<Vec<u8>, SymTensor<S>>,
}

impl<S: Scalar> PolyField<S> {
    pub fn zero(n: usize, m: usize) -> Self {
        PolyField { n, m, terms: BTreeMap::new() }
    }

    pub fn monomial(exps: Vec<u8>, t: SymTensor<S>) -> Self {
        let mut p = PolyField::zero(t.dim(), t.rank());
        p.add_term(exps, t);
        p
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn rank(&self) -> usize {
        self.m
    }
    pub fn terms(&self) -> &BTreeMap<Vec<u8>, SymTensor<S>> {
        &self.terms
    }

    pub fn add_term(&mut self, exps: Vec<u8>, t: SymTensor<S>) {
        assert_eq!(exps.len(), self.n);
        assert_eq!((t.dim(), t.rank()), (self.n, self.m));
        let merged = match self.terms.remove(&exps) {
            Some(old) => old + t,
            None => t,
        };
        if !merged.is_zero() {
            self.terms.insert(exps, merged);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> Option<usize> {
        self.terms.keys().map(|e| e.iter().map(|&a| a as usize).sum()).max()
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T + Copy) -> PolyField<T> {
        let mut out = PolyField::zero(self.n, self.m);
        for (e, t) in &self.terms {
            out.add_term(e.clone(), t.map(f));
        }
        out
    }

    fn map_terms(&self, m: usize, f: impl Fn(&[u8], &SymTensor<S>, &mut PolyField<S>)) -> PolyField<S> {
        let mut out = PolyField::zero(self.n, m);
        for (e, t) in &self.terms {
            f(e, t, &mut out);
        }
        out
    }

    /// Flat `d`.
    pub fn d(&self) -> PolyField<S> {
        let n = self.n;
        self.map_terms(self.m + 1, |e, t, out| {
            for j in 0..n {
                if e[j] == 0 {
                    continue;
                }
                let mut ej = vec![S::zero(); n];
                ej[j] = S::one();
                let mut f = e.to_vec();
                f[j] -= 1;
                out.add_term(f, sym_product(&SymTensor::covector(ej), t).scale_ratio(e[j] as i64, 1));
            }
        })
    }

    /// Flat divergence.
    pub fn delta(&self) -> Result<PolyField<S>> {
        if self.m == 0 {
            return Err(SymError::Shape("divergence of a rank-0 field".into()));
        }
        let (n, m) = (self.n, self.m);
        Ok(self.map_terms(m - 1, |e, t, out| {
            for j in 0..n {
                if e[j] == 0 {
                    continue;
                }
                let mut f = e.to_vec();
                f[j] -= 1;
                let mut b = vec![0u8; m];
                let c = SymTensor::from_fn(n, m - 1, |jt| {
                    b[0] = j as u8;
                    b[1..].copy_from_slice(jt);
                    t.get(&b).clone()
                });
                out.add_term(f, c.scale_ratio(e[j] as i64, 1));
            }
        }))
    }

    pub fn trace(&self) -> PolyField<S> {
        let g = Metric::identity(self.n);
        if self.m < 2 {
            return PolyField::zero(self.n, 0);
        }
        self.map_terms(self.m - 2, |e, t, out| out.add_term(e.to_vec(), trace(t, &g)))
    }

    pub fn mul_metric(&self) -> PolyField<S> {
        let g = Metric::identity(self.n);
        self.map_terms(self.m + 2, |e, t, out| out.add_term(e.to_vec(), mul_metric(t, &g)))
    }

    pub fn project_p(&self) -> PolyField<S> {
        let g = Metric::identity(self.n);
        self.map_terms(self.m, |e, t, out| out.add_term(e.to_vec(), project_p(t, &g)))
    }

    pub fn scale(&self, s: &S) -> PolyField<S> {
        self.map_terms(self.m, |e, t, out| out.add_term(e.to_vec(), t.scale(s)))
    }

    pub fn add(&self, o: &PolyField<S>) -> PolyField<S> {
        let mut out = self.clone();
        for (e, t) in &o.terms {
            out.add_term(e.clone(), t.clone());
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> SymTensor<f64> {
        let mut acc = SymTensor::zeros(self.n, self.m);
        for (e, t) in &self.terms {
            let w: f64 = e.iter().zip(x).map(|(&a, &v)| v.powi(a as i32)).product();
            acc = acc + t.map(|c| c.to_f64() * w);
        }
        acc
    }
}

impl<S: Scalar> TensorField for PolyField<S> {
    fn dim(&self) -> usize {
        self.n
    }
    fn rank(&self) -> usize {
        self.m
    }
    fn jet(&self, x0: &[f64], order: usize) -> Result<SymTensor<Jet>> {
        if x0.len() != self.n {
            return Err(SymError::DimMismatch(format!("point of dim {} for field of dim {}", x0.len(), self.n)));
        }
        if order > max_order(self.n) {
            return Err(SymError::JetOrder { need: order, have: max_order(self.n) });
        }
        let x = Jet::coords(x0, order);
        let mut acc = SymTensor::<Jet>::zeros(self.n, self.m);
        for (e, t) in &self.terms {
            let mono = e
                .iter()
                .enumerate()
                .filter(|(_, &a)| a > 0)
                .fold(Jet::constant(1.0), |p, (i, &a)| p * x[i].powi(a as u32));
            acc = acc + t.map(|c| mono.clone() * c.to_f64());
        }
        Ok(acc.map(|j| j.truncate(order)))
    }
}

/// Linear vanishing constraints on polynomial fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constraint {
    /// Vanishes on `x_n = 0`.
    Hyperplane,
    /// Vanishes on the `x_1` axis.
    Line,
    /// All derivatives up to this order vanish at the origin.
    JetOrder(usize),
}

impl Constraint {
    fn kills(&self, exps: &[u8]) -> bool {
        match *self {
            Constraint::Hyperplane => exps[exps.len() - 1] == 0,
            Constraint::Line => exps[1..].iter().all(|&a| a == 0),
            Constraint::JetOrder(l) => exps.iter().map(|&a| a as usize).sum::<usize>() <= l,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KernelOptions {
    /// Largest number of unknowns allowed in one homogeneous block.
    pub max_block_unknowns: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions { max_block_unknowns: 6000 }
    }
}

#[derive(Clone, Debug)]
pub struct KernelResult {
    pub n: usize,
    pub m: usize,
    pub degree: usize,
    pub basis: Vec<PolyField<Rational>>,
    /// Kernel dimension per homogeneous degree: (degree, exact, floating).
    pub blocks: Vec<(usize, usize, usize)>,
}

impl KernelResult {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }
    /// Dimension obtained by the floating-point SVD route.
    pub fn dim_float(&self) -> usize {
        self.blocks.iter().map(|b| b.2).sum()
    }
}

/// Row-reduces in place and returns the pivot columns.
pub fn rational_rref(a: &mut [Vec<Rational>], ncols: usize) -> Vec<usize> {
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..ncols {
        if row == a.len() {
            break;
        }
        let Some(p) = (row..a.len()).find(|&r| !a[r][col].is_zero()) else {
            continue;
        };
        a.swap(row, p);
        let inv = a[row][col].recip();
        for c in col..ncols {
            if !a[row][c].is_zero() {
                a[row][c] = &a[row][c] * &inv;
            }
        }
        let pivot_row = a[row].clone();
        for (r, rowv) in a.iter_mut().enumerate() {
            if r == row || rowv[col].is_zero() {
                continue;
            }
            let f = rowv[col].clone();
            for c in col..ncols {
                if !pivot_row[c].is_zero() {
                    rowv[c] = &rowv[c] - &f * &pivot_row[c];
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    pivots
}

/// Exact kernel basis of a dense rational matrix.
pub fn rational_kernel(mut a: Vec<Vec<Rational>>, ncols: usize) -> Vec<Vec<Rational>> {
    let pivots = rational_rref(&mut a, ncols);
    let mut is_pivot = vec![None; ncols];
    for (r, &c) in pivots.iter().enumerate() {
        is_pivot[c] = Some(r);
    }
    (0..ncols)
        .filter(|&c| is_pivot[c].is_none())
        .map(|free| {
            let mut v = vec![<Rational as Zero>::zero(); ncols];
            v[free] = <Rational as One>::one();
            for (r, &pc) in pivots.iter().enumerate() {
                v[pc] = -a[r][free].clone();
            }
            v
        })
        .collect()
}

/// Nullity by singular values with cutoff `1e-9 σ_max`.
pub fn float_nullity(a: &DMatrix<f64>) -> usize {
    let ncols = a.ncols();
    if a.nrows() == 0 || ncols == 0 {
        return ncols;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return ncols;
    }
    ncols - sv.iter().filter(|&&s| s > 1e-9 * smax).count()
}

fn monomials(n: usize, d: usize) -> Vec<Vec<u8>> {
    sym_index(n, d)
        .multis
        .iter()
        .map(|mi| {
            let mut e = vec![0u8; n];
            for &i in mi {
                e[i as usize] += 1;
            }
            e
        })
        .collect()
}

pub fn poly_ck_kernel(n: usize, m: usize, degree: usize) -> Result<KernelResult> {
    constrained_ck_kernel(n, m, degree, &[])
}

pub fn constrained_ck_kernel(n: usize, m: usize, degree: usize, constraints: &[Constraint]) -> Result<KernelResult> {
    constrained_ck_kernel_with(n, m, degree, constraints, &KernelOptions::default())
}

/// Polynomial solutions of `p du = 0`, `ju = 0` of degree ≤ `degree` on flat
/// space, subject to the constraints. The system is block diagonal in the
/// homogeneous degree, so each block is solved separately.
pub fn constrained_ck_kernel_with(
    n: usize,
    m: usize,
    degree: usize,
    constraints: &[Constraint],
    opts: &KernelOptions,
) -> Result<KernelResult> {
    if n < 2 {
        return Err(SymError::Shape("need n ≥ 2".into()));
    }
    let comps = sym_index(n, m).multis.clone();
    let mut basis = Vec::new();
    let mut blocks = Vec::new();
    for d in 0..=degree {
        let unknowns: Vec<(Vec<u8>, Vec<u8>)> = monomials(n, d)
            .into_iter()
            .filter(|e| !constraints.iter().any(|c| c.kills(e)))
            .flat_map(|e| comps.iter().map(move |c| (e.clone(), c.clone())))
            .collect();
        if unknowns.is_empty() {
            continue;
        }
        if unknowns.len() > opts.max_block_unknowns {
            return Err(SymError::Capacity(format!(
                "degree-{d} block has {} unknowns (cap {})",
                unknowns.len(),
                opts.max_block_unknowns
            )));
        }
        // rows keyed by (monomial, equation, component)
        let mut row_ids: BTreeMap<(Vec<u8>, u8, usize), usize> = BTreeMap::new();
        let mut cols: Vec<Vec<(usize, Rational)>> = Vec::with_capacity(unknowns.len());
        for (e, c) in &unknowns {
            let u = PolyField::monomial(e.clone(), SymTensor::<Rational>::unit(n, c));
            let mut col = Vec::new();
            for (tag, img) in [(0u8, u.d().project_p()), (1u8, u.trace())] {
                if tag == 1 && m < 2 {
                    continue;
                }
                for (mono, t) in img.terms() {
                    for (k, v) in t.comps().iter().enumerate() {
                        if v.is_zero() {
                            continue;
                        }
                        let next = row_ids.len();
                        let r = *row_ids.entry((mono.clone(), tag, k)).or_insert(next);
                        col.push((r, v.clone()));
                    }
                }
            }
            cols.push(col);
        }
        let nrows = row_ids.len();
        let ncols = unknowns.len();
        let mut dense = vec![vec![<Rational as Zero>::zero(); ncols]; nrows];
        let mut fl = DMatrix::<f64>::zeros(nrows, ncols);
        for (j, col) in cols.iter().enumerate() {
            for (r, v) in col {
                dense[*r][j] = v.clone();
                fl[(*r, j)] = v.to_f64();
            }
        }
        let ker = rational_kernel(dense, ncols);
        let fdim = float_nullity(&fl);
        blocks.push((d, ker.len(), fdim));
        for v in ker {
            let mut f = PolyField::zero(n, m);
            for ((e, c), x) in unknowns.iter().zip(&v) {
                if !x.is_zero() {
                    let mut t = SymTensor::<Rational>::zeros(n, m);
                    t.set(c, x.clone());
                    f.add_term(e.clone(), t);
                }
            }
            basis.push(f);
        }
    }
    Ok(KernelResult { n, m, degree, basis, blocks })
}

/// `(n+m−3)!(n+m−2)!(n+2m−2)(n+2m−1)(n+2m) / (m!(m+1)!(n−2)!n!)`.
pub fn ck_dimension_bound(n: usize, m: usize) -> Result<BigInt> {
    if n < 3 {
        return Err(SymError::Unsupported("the bound is stated for n ≥ 3".into()));
    }
    let fact = |k: usize| (1..=k).fold(BigInt::one(), |a, i| a * BigInt::from(i));
    let num = fact(n + m - 3) * fact(n + m - 2) * BigInt::from((n + 2 * m - 2) * (n + 2 * m - 1) * (n + 2 * m));
    let den = fact(m) * fact(m + 1) * fact(n - 2) * fact(n);
    if (&num % &den) != BigInt::zero() {
        return Err(SymError::Solver("dimension bound is not an integer".into()));
    }
    Ok(num / den)
}

/// Residuals of the conformal Killing equation sampled over a lattice.
#[derive(Clone)]
pub struct CkReport {
    /// sup |p du|
    pub pdu: f64,
    /// sup |j u|
    pub ju: f64,
    /// sup |du − i v| with the recovered `v`
    pub du_minus_iv: f64,
    pub v: Option<FieldRef>,
    pub tolerance: f64,
    pub accept: bool,
    pub samples: usize,
}

impl std::fmt::Debug for CkReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CkReport")
            .field("pdu", &self.pdu)
            .field("ju", &self.ju)
            .field("du_minus_iv", &self.du_minus_iv)
            .field("tolerance", &self.tolerance)
            .field("accept", &self.accept)
            .finish()
    }
}

fn gnorm(t: &SymTensor<f64>, g: &Metric<f64>) -> Result<f64> {
    Ok(inner(t, t, g)?.max(0.0).sqrt())
}

pub fn ck_residual(u: FieldRef, chart: ChartRef, tolerance: f64) -> Result<CkReport> {
    ck_residual_on(u, chart, tolerance, 11)
}

/// As [`ck_residual`], with `per_axis` lattice points per axis.
pub fn ck_residual_on(u: FieldRef, chart: ChartRef, tolerance: f64, per_axis: usize) -> Result<CkReport> {
    let (n, m) = (chart.dim(), u.rank());
    if u.dim() != n {
        return Err(SymError::DimMismatch("field and chart dimensions differ".into()));
    }
    let pts = chart.domain().interior_lattice(per_axis);
    let c = if m == 0 { 0.0 } else { m as f64 / (n + 2 * m - 2) as f64 };
    let per_point: Vec<(f64, f64, f64)> = pts
        .par_iter()
        .map(|x| -> Result<(f64, f64, f64)> {
            let geo = LocalGeometry::new(&*chart, x, 1)?;
            let uj = u.jet(x, 1)?;
            let du = geo.d(&uj)?.map(|j| j.value());
            let g = geo.metric_value();
            let pdu = gnorm(&project_p(&du, &g), &g)?;
            let ju = if m >= 2 { gnorm(&trace(&uj.map(|j| j.value()), &g), &g)? } else { 0.0 };
            let res = if m == 0 {
                gnorm(&du, &g)?
            } else {
                let v = geo.delta(&uj)?.map(|j| j.value() * c);
                gnorm(&(du - mul_metric(&v, &g)), &g)?
            };
            Ok((pdu, ju, res))
        })
        .collect::<Result<_>>()?;
    let sup = |f: fn(&(f64, f64, f64)) -> f64| per_point.iter().map(f).fold(0.0, f64::max);
    let (pdu, ju, du_minus_iv) = (sup(|t| t.0), sup(|t| t.1), sup(|t| t.2));
    let pdu = if m == 0 { du_minus_iv } else { pdu };
    let v = if m == 0 { None } else { Some(SumField::new(vec![(c, delta_op(u, chart)?)])?) };
    Ok(CkReport { pdu, ju, du_minus_iv, v, tolerance, accept: pdu <= tolerance && ju <= tolerance, samples: pts.len() })
}

/// `v = m/(n+2m−2) δu` for a trace-free field.
pub fn recover_v(u: FieldRef, chart: ChartRef) -> Result<FieldRef> {
    let (n, m) = (chart.dim(), u.rank());
    if m == 0 {
        return Err(SymError::Shape("recovery of v needs m ≥ 1".into()));
    }
    if m >= 2 {
        for x in chart.domain().interior_lattice(3) {
            let g = chart.metric_at(&x)?;
            let ju = trace(&u.eval(&x)?, &g).max_abs();
            if ju > 1e-9 * (1.0 + u.eval(&x)?.max_abs()) {
                return Err(SymError::NotTraceFree(ju));
            }
        }
    }
    SumField::new(vec![(m as f64 / (n + 2 * m - 2) as f64, delta_op(u, chart)?)])
}

/// Real and imaginary parts of a function of `z = x + iy` on coordinate jets.
pub type ComplexFn = Arc<dyn Fn(&[Jet]) -> (Jet, Jet) + Send + Sync>;

fn cmul(a: &(Jet, Jet), b: &(Jet, Jet)) -> (Jet, Jet) {
    (a.0.clone() * b.0.clone() - a.1.clone() * b.1.clone(), a.0.clone() * b.1.clone() + a.1.clone() * b.0.clone())
}

/// `z^k`.
pub fn z_power(k: u32) -> ComplexFn {
    Arc::new(move |x: &[Jet]| {
        let z = (x[0].clone(), x[1].clone());
        (0..k).fold((Jet::constant(1.0), Jet::constant(0.0)), |acc, _| cmul(&acc, &z))
    })
}

/// `w + eps·z̄`, a non-holomorphic perturbation.
pub fn perturb_conj(w: ComplexFn, eps: f64) -> ComplexFn {
    Arc::new(move |x: &[Jet]| {
        let (a, b) = w(x);
        (a + x[0].clone() * eps, b - x[1].clone() * eps)
    })
}

/// Rank-`m` field on a conformal 2D chart with `λu = a cos mθ + b sin mθ`
/// where `a + ib = e^{mμ} w`.
pub fn ckt_from_complex(mu: ScalarFn, m: usize, w: ComplexFn) -> FieldRef {
    crate::geom::AnalyticField::shared(2, m, move |x| {
        let e = (mu(x) * (2 * m) as f64).exp();
        let (wr, wi) = w(x);
        let (a, b) = (e.clone() * wr, e * wi);
        // u_I for I with k twos is Re((a − ib) i^k) up to the weight e^{mμ} folded above
        SymTensor::from_fn(2, m, |idx| {
            let k = idx.iter().filter(|&&i| i == 1).count();
            match k % 4 {
                0 => a.clone(),
                1 => b.clone(),
                2 => -a.clone(),
                _ => -b.clone(),
            }
        })
    })
}

/// Coefficient `a` (`cos`) or `b` (`sin`) of `λu` for a trace-free field on a
/// conformal 2D chart, extracted by a discrete Fourier transform in θ with
/// `4(m+1)` samples.
pub struct IsothermicCoeff {
    u: FieldRef,
    mu: ScalarFn,
    sine: bool,
}

impl TensorField for IsothermicCoeff {
    fn dim(&self) -> usize {
        2
    }
    fn rank(&self) -> usize {
        0
    }
    fn jet(&self, x0: &[f64], order: usize) -> Result<SymTensor<Jet>> {
        let m = self.u.rank();
        let u = self.u.jet(x0, order)?;
        let x = Jet::coords(x0, order);
        let scale = (self.mu)(&x) * -1.0;
        let s = 4 * (m + 1);
        let mut acc = Jet::constant(0.0);
        for q in 0..s {
            let th = 2.0 * std::f64::consts::PI * q as f64 / s as f64;
            let xi = [scale.exp() * th.cos(), scale.exp() * th.sin()];
            let lu = kappa_eval(&u, &xi);
            let w = if m == 0 {
                if self.sine {
                    0.0
                } else {
                    1.0 / s as f64
                }
            } else if self.sine {
                2.0 * (m as f64 * th).sin() / s as f64
            } else {
                2.0 * (m as f64 * th).cos() / s as f64
            };
            acc = acc + lu * w;
        }
        Ok(SymTensor::scalar(acc.truncate(order), 2))
    }
}

pub fn isothermic_reduce(u: FieldRef, chart: &dyn Chart) -> Result<(FieldRef, FieldRef)> {
    let mu = chart
        .conformal_factor()
        .ok_or_else(|| SymError::Unsupported("isothermic reduction needs a conformal 2D chart".into()))?;
    if chart.dim() != 2 || u.dim() != 2 {
        return Err(SymError::Unsupported("isothermic reduction needs a conformal 2D chart".into()));
    }
    if u.rank() >= 2 {
        for x in chart.domain().interior_lattice(3) {
            let t = u.eval(&x)?;
            let ju = trace(&t, &chart.metric_at(&x)?).max_abs();
            if ju > 1e-9 * (1.0 + t.max_abs()) {
                return Err(SymError::NotTraceFree(ju));
            }
        }
    }
    let a: FieldRef = Arc::new(IsothermicCoeff { u: u.clone(), mu: mu.clone(), sine: false });
    let b: FieldRef = Arc::new(IsothermicCoeff { u, mu, sine: true });
    Ok((a, b))
}

/// Sup over the lattice of both equations
/// `a_x − b_y − m(μ_x a − μ_y b)` and `a_y + b_x − m(μ_y a + μ_x b)`.
pub fn cr_residual(a: &dyn TensorField, b: &dyn TensorField, mu: &ScalarFn, m: usize, chart: &dyn Chart, per_axis: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in chart.domain().interior_lattice(per_axis) {
        let aj = a.jet(&x, 1)?.comps()[0].clone();
        let bj = b.jet(&x, 1)?.comps()[0].clone();
        let muj = mu(&Jet::coords(&x, 1));
        let (av, bv) = (aj.value(), bj.value());
        let (ax, ay) = (aj.coeff(&[1, 0]), aj.coeff(&[0, 1]));
        let (bx, by) = (bj.coeff(&[1, 0]), bj.coeff(&[0, 1]));
        let (mx, my) = (muj.coeff(&[1, 0]), muj.coeff(&[0, 1]));
        let mf = m as f64;
        let e1 = ax - by - mf * (mx * av - my * bv);
        let e2 = ay + bx - mf * (my * av + mx * bv);
        worst = worst.max(e1.abs()).max(e2.abs());
    }
    Ok(worst)
}

/// Coefficients `(c_x, c_y, c_θ)` of the geodesic generator on `e^{2μ}(dx²+dy²)`.
pub fn geodesic_generator_2d(mu: &ScalarFn, x: f64, y: f64, theta: f64) -> [f64; 3] {
    let j = mu(&Jet::coords(&[x, y], 1));
    let e = (-j.value()).exp();
    let (mx, my) = (j.coeff(&[1, 0]), j.coeff(&[0, 1]));
    let (s, c) = theta.sin_cos();
    [e * c, e * s, e * (-mx * s + my * c)]
}

/// `H(λu)` at `(x, θ)` on a conformal 2D chart, from the partial derivatives of
/// the components and the θ-derivative of the trigonometric polynomial.
pub fn h_lambda(u: &dyn TensorField, mu: &ScalarFn, x: &[f64], theta: f64) -> Result<f64> {
    let m = u.rank();
    let uj = u.jet(x, 1)?;
    let muj = mu(&Jet::coords(x, 1));
    let e = (-muj.value()).exp();
    let xi = [e * theta.cos(), e * theta.sin()];
    let u0 = uj.map(|j| j.value());
    let lu = kappa_eval(&u0, &xi);
    let mut partial = [0.0; 2];
    for (a, p) in partial.iter_mut().enumerate() {
        let mut ex = [0u8; 2];
        ex[a] = 1;
        let du = uj.map(|j| j.coeff(&ex));
        // ∂ξ/∂x_a = −μ_a ξ and κ is homogeneous of degree m
        *p = kappa_eval(&du, &xi) - m as f64 * muj.coeff(&ex) * lu;
    }
    let grad = crate::sphere::kappa_gradient(&u0, &xi);
    let dtheta = -grad[0] * xi[1] + grad[1] * xi[0];
    let [cx, cy, ct] = geodesic_generator_2d(mu, x[0], x[1], theta);
    Ok(cx * partial[0] + cy * partial[1] + ct * dtheta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{d_op, AnalyticField, ConformalChart, Domain, EuclideanChart};
    use crate::scalar::rat;

    fn flat(n: usize) -> ChartRef {
        Arc::new(EuclideanChart::new(Domain::cube(n, -1.0, 1.0)))
    }

    fn conformal(mu: ScalarFn) -> ChartRef {
        Arc::new(ConformalChart::new(Domain::cube(2, -1.0, 1.0), mu, "conformal"))
    }

    #[test]
    fn dimension_bound_values() {
        assert_eq!(ck_dimension_bound(3, 1).unwrap(), BigInt::from(10));
        assert_eq!(ck_dimension_bound(3, 2).unwrap(), BigInt::from(35));
        assert_eq!(ck_dimension_bound(4, 1).unwrap(), BigInt::from(15));
        assert_eq!(ck_dimension_bound(3, 0).unwrap(), BigInt::from(1));
        assert!(ck_dimension_bound(2, 1).is_err());
    }

    #[test]
    fn flat_kernels_match_bound() {
        for (n, m, deg) in [(3, 1, 3), (4, 1, 3), (3, 0, 3), (3, 2, 4)] {
            let k = poly_ck_kernel(n, m, deg).unwrap();
            assert_eq!(k.dim(), k.dim_float());
            let bound: usize = ck_dimension_bound(n, m).unwrap().try_into().unwrap();
            assert_eq!(k.dim(), bound, "n={n} m={m}");
            for b in &k.basis {
                assert!(b.d().project_p().is_zero() && b.trace().is_zero());
            }
        }
    }

    #[test]
    fn kernel_degree_saturates() {
        for m in 1..=2 {
            let lo = poly_ck_kernel(3, m, 2 * m).unwrap().dim();
            let hi = poly_ck_kernel(3, m, 2 * m + 2).unwrap().dim();
            assert_eq!(lo, hi);
        }
    }

    #[test]
    fn constrained_kernels() {
        for (n, m) in [(2, 1), (2, 2), (3, 1), (3, 2)] {
            assert_eq!(constrained_ck_kernel(n, m, 2 * m + 2, &[Constraint::Hyperplane]).unwrap().dim(), 0);
        }
        let line = constrained_ck_kernel(3, 2, 6, &[Constraint::Line]).unwrap();
        assert_eq!((line.dim(), line.dim_float()), (10, 10));
        assert_eq!(constrained_ck_kernel(3, 1, 4, &[Constraint::JetOrder(2)]).unwrap().dim(), 0);
        assert!(constrained_ck_kernel(3, 1, 4, &[Constraint::JetOrder(1)]).unwrap().dim() > 0);
        let opts = KernelOptions { max_block_unknowns: 10 };
        assert!(matches!(constrained_ck_kernel_with(3, 2, 4, &[], &opts), Err(SymError::Capacity(_))));
    }

    #[test]
    fn kernel_elements_pass_float_residual() {
        let k = poly_ck_kernel(3, 1, 3).unwrap();
        for b in k.basis {
            let r = ck_residual_on(Arc::new(b), flat(3), 1e-10, 4).unwrap();
            assert!(r.accept, "{r:?}");
        }
    }

    #[test]
    fn rref_kernel_small_cases() {
        let a = vec![vec![rat(1, 1), rat(2, 1), rat(3, 1)], vec![rat(2, 1), rat(4, 1), rat(6, 1)]];
        let ker = rational_kernel(a.clone(), 3);
        assert_eq!(ker.len(), 2);
        for v in &ker {
            for row in &a {
                let s: Rational = row.iter().zip(v).map(|(x, y)| x * y).sum();
                assert!(s.is_zero());
            }
        }
        assert_eq!(float_nullity(&DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0])), 2);
    }

    #[test]
    fn residual_examples() {
        let u = AnalyticField::shared(2, 1, |x| SymTensor::covector(vec![x[0].clone(), x[1].clone()]));
        let r = ck_residual(u.clone(), flat(2), 1e-10).unwrap();
        assert!(r.accept && r.du_minus_iv < 1e-12);
        let v = r.v.unwrap().eval(&[0.3, 0.4]).unwrap();
        assert!((v.comps()[0] - 1.0).abs() < 1e-14);
        let dx = AnalyticField::constant(SymTensor::covector(vec![1.0, 0.0, 0.0]));
        let r = ck_residual(dx.clone(), flat(3), 1e-10).unwrap();
        assert!(r.accept);
        assert!(recover_v(dx, flat(3)).unwrap().eval(&[0.0, 0.0, 0.0]).unwrap().max_abs() == 0.0);
        let bad = AnalyticField::shared(2, 2, |x| {
            let a = x[0].clone() + x[1].clone() * 0.1;
            SymTensor::from_vec(2, 2, vec![a, Jet::constant(0.0), -x[0].clone()]).unwrap()
        });
        assert!(!ck_residual(bad, flat(2), 1e-9).unwrap().accept);
        let radial = AnalyticField::shared(3, 1, |x| SymTensor::covector(x.to_vec()));
        let v = recover_v(radial, flat(3)).unwrap().eval(&[0.1, 0.2, 0.3]).unwrap();
        assert!((v.comps()[0] - 1.0).abs() < 1e-14);
        let g = AnalyticField::constant(Metric::<f64>::identity(2).g_tensor());
        assert!(matches!(recover_v(g, flat(2)), Err(SymError::NotTraceFree(_))));
    }

    #[test]
    fn scalar_field_requires_constant() {
        let r = ck_residual(AnalyticField::shared(2, 0, |x| SymTensor::scalar(x[0].clone(), 2)), flat(2), 1e-9).unwrap();
        assert!(!r.accept);
        let r = ck_residual(AnalyticField::constant(SymTensor::scalar(3.0, 2)), flat(2), 1e-9).unwrap();
        assert!(r.accept);
    }

    #[test]
    fn recovered_v_matches_least_squares() {
        // v from du = i v solved componentwise: for rank 2 in 2D, (iv)_{11} = v_1, (iv)_{12} = v_2/3
        let mu: ScalarFn = Arc::new(|x: &[Jet]| x[0].clone() * 0.3);
        let chart = conformal(mu.clone());
        let u = ckt_from_complex(mu, 2, z_power(2));
        let v = recover_v(u.clone(), chart.clone()).unwrap();
        let x = [0.2, -0.1];
        let du = d_op(u, chart.clone()).unwrap().eval(&x).unwrap();
        let g = chart.metric_at(&x).unwrap();
        let basis: Vec<SymTensor<f64>> = (0..2).map(|k| mul_metric(&SymTensor::covector(if k == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }), &g)).collect();
        let a = DMatrix::from_fn(4, 2, |r, c| basis[c].comps()[r]);
        let b = nalgebra::DVector::from_column_slice(du.comps());
        let sol = a.svd(true, true).solve(&b, 1e-14).unwrap();
        let got = v.eval(&x).unwrap();
        assert!((sol[0] - got.comps()[0]).abs() < 1e-10 && (sol[1] - got.comps()[1]).abs() < 1e-10);
    }

    #[test]
    fn holomorphic_fields_are_conformal_killing() {
        let mus: Vec<ScalarFn> = vec![Arc::new(|_x: &[Jet]| Jet::constant(0.0)), Arc::new(|x: &[Jet]| x[0].clone())];
        for mu in mus {
            let chart = conformal(mu.clone());
            for m in 1..=3 {
                for k in 0..=3 {
                    let u = ckt_from_complex(mu.clone(), m, z_power(k));
                    let r = ck_residual(u.clone(), chart.clone(), 1e-9).unwrap();
                    assert!(r.accept, "m={m} k={k}: {r:?}");
                    let (a, b) = isothermic_reduce(u, &*chart).unwrap();
                    assert!(cr_residual(&*a, &*b, &mu, m, &*chart, 5).unwrap() < 1e-9);
                }
                let bad = ckt_from_complex(mu.clone(), m, perturb_conj(z_power(1), 0.1));
                let r = ck_residual(bad.clone(), chart.clone(), 1e-9).unwrap();
                assert!(r.pdu > 1e-3);
                let (a, b) = isothermic_reduce(bad, &*chart).unwrap();
                assert!(cr_residual(&*a, &*b, &mu, m, &*chart, 5).unwrap() > 1e-3);
            }
        }
    }

    #[test]
    fn isothermic_examples() {
        let zero: ScalarFn = Arc::new(|_x: &[Jet]| Jet::constant(0.0));
        let chart = conformal(zero.clone());
        let u = AnalyticField::shared(2, 1, |x| SymTensor::covector(vec![x[0].clone() + 1.0, x[1].clone() * 2.0]));
        let (a, b) = isothermic_reduce(u, &*chart).unwrap();
        let p = [0.3, 0.7];
        assert!((a.eval(&p).unwrap().comps()[0] - 1.3).abs() < 1e-13);
        assert!((b.eval(&p).unwrap().comps()[0] - 1.4).abs() < 1e-13);
        let u2 = AnalyticField::constant(SymTensor::from_vec(2, 2, vec![1.0, 0.0, -1.0]).unwrap());
        let (a, b) = isothermic_reduce(u2, &*chart).unwrap();
        assert!((a.eval(&p).unwrap().comps()[0] - 1.0).abs() < 1e-13 && b.eval(&p).unwrap().comps()[0].abs() < 1e-13);
        let g = AnalyticField::constant(Metric::<f64>::identity(2).g_tensor());
        assert!(isothermic_reduce(g, &*chart).is_err());
        let three = flat(3);
        assert!(isothermic_reduce(AnalyticField::constant(SymTensor::covector(vec![1.0, 0.0, 0.0])), &*three).is_err());
    }

    #[test]
    fn cauchy_riemann_examples() {
        let zero: ScalarFn = Arc::new(|_x: &[Jet]| Jet::constant(0.0));
        let chart = conformal(zero.clone());
        let sq = AnalyticField::shared(2, 0, |x| SymTensor::scalar(x[0].clone() * x[0].clone(), 2));
        let nothing = AnalyticField::constant(SymTensor::scalar(0.0, 2));
        assert!(cr_residual(&*sq, &*nothing, &zero, 1, &*chart, 5).unwrap() > 0.5);
        let mux: ScalarFn = Arc::new(|x: &[Jet]| x[0].clone());
        let ex = AnalyticField::shared(2, 0, |x| SymTensor::scalar(x[0].exp(), 2));
        assert!(cr_residual(&*ex, &*nothing, &mux, 1, &*chart, 5).unwrap() < 1e-13);
    }

    #[test]
    fn generator_examples_and_lambda_d() {
        let zero: ScalarFn = Arc::new(|_x: &[Jet]| Jet::constant(0.0));
        let [cx, cy, ct] = geodesic_generator_2d(&zero, 0.2, 0.3, 0.7);
        assert!((cx - 0.7f64.cos()).abs() < 1e-15 && (cy - 0.7f64.sin()).abs() < 1e-15 && ct == 0.0);
        let mux: ScalarFn = Arc::new(|x: &[Jet]| x[0].clone());
        let ct = geodesic_generator_2d(&mux, 0.4, 0.3, 0.7)[2];
        assert!((ct + (-0.4f64).exp() * 0.7f64.sin()).abs() < 1e-15);
        let mu: ScalarFn = Arc::new(|x: &[Jet]| x[0].clone() * 0.5 + x[1].clone() * x[1].clone() * 0.25);
        let chart = conformal(mu.clone());
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        for m in 0..=3 {
            let u = crate::geom::random_poly_field(&mut rng, 2, m, 3);
            let du = d_op(u.clone(), chart.clone()).unwrap();
            for (x, th) in [([0.1, 0.2], 0.3), ([-0.4, 0.5], 2.0), ([0.7, -0.6], 4.5)] {
                let lhs = h_lambda(&*u, &mu, &x, th).unwrap();
                let e = (-(0.5 * x[0] + 0.25 * x[1] * x[1])).exp();
                let rhs = kappa_eval(&du.eval(&x).unwrap(), &[e * th.cos(), e * th.sin()]);
                assert!((lhs - rhs).abs() < 1e-8 * (1.0 + rhs.abs()), "m={m}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn poly_field_operations() {
        let u = PolyField::monomial(vec![1, 0], SymTensor::<Rational>::covector(vec![rat(1, 1), rat(0, 1)]))
            .add(&PolyField::monomial(vec![0, 1], SymTensor::covector(vec![rat(0, 1), rat(1, 1)])));
        assert_eq!(u.d().terms().get(&vec![0, 0]).unwrap(), &Metric::<Rational>::identity(2).g_tensor());
        assert_eq!(u.delta().unwrap().terms().get(&vec![0, 0]).unwrap().comps(), &[rat(2, 1)]);
        assert!(u.d().project_p().is_zero());
        assert_eq!(u.degree(), Some(1));
        let j = u.jet(&[0.5, 0.25], 1).unwrap();
        assert_eq!(j.comps()[1].value(), 0.25);
        assert_eq!(u.eval(&[0.5, 0.25]).comps(), &[0.5, 0.25]);
        let s = PolyField::<Rational>::monomial(vec![2, 0], SymTensor::scalar(rat(1, 1), 2));
        assert!(s.delta().is_err());
        assert_eq!(s.d().mul_metric().rank(), 3);
    }
}
