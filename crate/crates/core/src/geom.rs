//! Charts with smooth metrics, covariant differentiation and the operators
//! `d = σ∇`, `δ`, `Δ`, curvature and Green's formula.
//!
//! Everything at a point is computed on jets: the metric is expanded to some
//! order `K`, Christoffel symbols come out at order `K-1` and curvature at
//! `K-2`, so compositions of operators stay exact as long as enough order is
//! requested from the innermost field.

use std::fmt;
use std::sync::Arc;

use crate::error::{Result, SymError};
use crate::jet::{max_order, Jet};
use crate::metric_ops::{mul_metric, project_p, project_q, trace, Metric};
use crate::scalar::Scalar;
use crate::sphere::gauss_legendre;
use crate::symcore::{inner, sym_index, sym_product, RawTensor, SymTensor};

pub type ScalarFn = Arc<dyn Fn(&[Jet]) -> Jet + Send + Sync>;
pub type MetricFn = Arc<dyn Fn(&[Jet]) -> Vec<Jet> + Send + Sync>;

/// Axis-aligned box.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        Domain { lo, hi }
    }

    pub fn cube(n: usize, lo: f64, hi: f64) -> Self {
        Domain { lo: vec![lo; n], hi: vec![hi; n] }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lo.len()
            && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a - 1e-12 && *v <= *b + 1e-12)
    }

    /// Interior lattice with `per_axis` points per axis, avoiding the boundary.
    pub fn interior_lattice(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let n = self.lo.len();
        let total = per_axis.pow(n as u32);
        (0..total)
            .map(|mut flat| {
                let mut x = vec![0.0; n];
                for a in (0..n).rev() {
                    let k = flat % per_axis;
                    flat /= per_axis;
                    x[a] = self.lo[a] + (k as f64 + 1.0) / (per_axis as f64 + 1.0) * (self.hi[a] - self.lo[a]);
                }
                x
            })
            .collect()
    }
}

pub trait Chart: Send + Sync {
    fn dim(&self) -> usize;
    fn domain(&self) -> &Domain;
    /// Metric components (row-major) as functions of coordinate jets.
    fn metric_jet(&self, x: &[Jet]) -> Vec<Jet>;
    fn label(&self) -> String;
    fn is_euclidean(&self) -> bool {
        false
    }
    /// `μ` if the metric is `e^{2μ} δ`.
    fn conformal_factor(&self) -> Option<ScalarFn> {
        None
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() || !self.domain().contains(x) {
            return Err(SymError::OutsideDomain(x.to_vec()));
        }
        Ok(())
    }

    fn metric_at(&self, x: &[f64]) -> Result<Metric<f64>> {
        self.check_point(x)?;
        if self.is_euclidean() {
            return Ok(Metric::identity(self.dim()));
        }
        let g: Vec<f64> = self.metric_jet(&Jet::coords(x, 0)).iter().map(|j| j.value()).collect();
        Metric::new(self.dim(), g)
    }
}

impl fmt::Debug for dyn Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Chart({})", self.label())
    }
}

pub type ChartRef = Arc<dyn Chart>;

pub struct EuclideanChart {
    domain: Domain,
}

impl EuclideanChart {
    pub fn new(domain: Domain) -> Self {
        EuclideanChart { domain }
    }
    pub fn unit_cube(n: usize) -> Self {
        EuclideanChart { domain: Domain::cube(n, 0.0, 1.0) }
    }
}

impl Chart for EuclideanChart {
    fn dim(&self) -> usize {
        self.domain.lo.len()
    }
    fn domain(&self) -> &Domain {
        &self.domain
    }
    fn metric_jet(&self, _x: &[Jet]) -> Vec<Jet> {
        let n = self.dim();
        (0..n * n).map(|k| Jet::constant(if k / n == k % n { 1.0 } else { 0.0 })).collect()
    }
    fn label(&self) -> String {
        "euclidean".into()
    }
    fn is_euclidean(&self) -> bool {
        true
    }
    fn conformal_factor(&self) -> Option<ScalarFn> {
        Some(Arc::new(|_x: &[Jet]| Jet::constant(0.0)))
    }
}

/// `g = e^{2μ} δ`.
pub struct ConformalChart {
    domain: Domain,
    mu: ScalarFn,
    label: String,
}

impl ConformalChart {
    pub fn new(domain: Domain, mu: ScalarFn, label: impl Into<String>) -> Self {
        ConformalChart { domain, mu, label: label.into() }
    }
}

impl Chart for ConformalChart {
    fn dim(&self) -> usize {
        self.domain.lo.len()
    }
    fn domain(&self) -> &Domain {
        &self.domain
    }
    fn metric_jet(&self, x: &[Jet]) -> Vec<Jet> {
        let n = self.dim();
        let e = ((self.mu)(x) * 2.0).exp();
        (0..n * n).map(|k| if k / n == k % n { e.clone() } else { Jet::constant(0.0) }).collect()
    }
    fn label(&self) -> String {
        self.label.clone()
    }
    fn conformal_factor(&self) -> Option<ScalarFn> {
        Some(self.mu.clone())
    }
}

/// Metric given analytically on coordinate jets.
pub struct JetMetricChart {
    domain: Domain,
    f: MetricFn,
    label: String,
}

impl JetMetricChart {
    pub fn new(domain: Domain, f: MetricFn, label: impl Into<String>) -> Self {
        JetMetricChart { domain, f, label: label.into() }
    }

    /// Constant metric.
    pub fn constant(domain: Domain, g: Vec<f64>) -> Self {
        let label = format!("constant{g:?}");
        JetMetricChart::new(domain, Arc::new(move |_x: &[Jet]| g.iter().map(|&v| Jet::constant(v)).collect()), label)
    }
}

impl Chart for JetMetricChart {
    fn dim(&self) -> usize {
        self.domain.lo.len()
    }
    fn domain(&self) -> &Domain {
        &self.domain
    }
    fn metric_jet(&self, x: &[Jet]) -> Vec<Jet> {
        (self.f)(x)
    }
    fn label(&self) -> String {
        self.label.clone()
    }
}

/// Metric given only as a plain function; derivatives up to second order by
/// central differences (with Richardson extrapolation).
pub struct SampledMetricChart {
    domain: Domain,
    f: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    h: f64,
    label: String,
}

impl SampledMetricChart {
    pub fn new(domain: Domain, f: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>, label: impl Into<String>) -> Self {
        let scale = domain.lo.iter().zip(&domain.hi).map(|(a, b)| b - a).fold(0.0, f64::max).max(1.0);
        SampledMetricChart { domain, f, h: 1e-3 * scale, label: label.into() }
    }
}

/// Taylor coefficients of `f` (up to order 2) at `x0` from central differences
/// with one Richardson step.
fn fd_taylor(f: &dyn Fn(&[f64]) -> Vec<f64>, x0: &[f64], h: f64, order: usize) -> Vec<Vec<(Vec<u8>, f64)>> {
    let n = x0.len();
    let f0 = f(x0);
    let comps = f0.len();
    let mut terms: Vec<Vec<(Vec<u8>, f64)>> = (0..comps).map(|c| vec![(vec![0u8; n], f0[c])]).collect();
    let shift = |d: &[(usize, f64)]| {
        let mut x = x0.to_vec();
        for &(a, s) in d {
            x[a] += s;
        }
        f(&x)
    };
    let rich = |coarse: f64, fine: f64| (4.0 * fine - coarse) / 3.0;
    if order >= 1 {
        for a in 0..n {
            let d1 = |h: f64| {
                let (p, m) = (shift(&[(a, h)]), shift(&[(a, -h)]));
                p.iter().zip(&m).map(|(p, m)| (p - m) / (2.0 * h)).collect::<Vec<_>>()
            };
            let (c, fi) = (d1(h), d1(h / 2.0));
            let mut e = vec![0u8; n];
            e[a] = 1;
            for k in 0..comps {
                terms[k].push((e.clone(), rich(c[k], fi[k])));
            }
        }
    }
    if order >= 2 {
        for a in 0..n {
            for b in a..n {
                let d2 = |h: f64| {
                    if a == b {
                        let (p, m) = (shift(&[(a, h)]), shift(&[(a, -h)]));
                        p.iter().zip(&m).zip(&f0).map(|((p, m), z)| (p - 2.0 * z + m) / (h * h)).collect::<Vec<_>>()
                    } else {
                        let pp = shift(&[(a, h), (b, h)]);
                        let pm = shift(&[(a, h), (b, -h)]);
                        let mp = shift(&[(a, -h), (b, h)]);
                        let mm = shift(&[(a, -h), (b, -h)]);
                        (0..comps).map(|k| (pp[k] - pm[k] - mp[k] + mm[k]) / (4.0 * h * h)).collect()
                    }
                };
                let (c, fi) = (d2(h), d2(h / 2.0));
                let mut e = vec![0u8; n];
                e[a] += 1;
                e[b] += 1;
                // Taylor coefficient: ∂²f/2 on the diagonal, ∂²f off it
                let w = if a == b { 0.5 } else { 1.0 };
                for k in 0..comps {
                    terms[k].push((e.clone(), w * rich(c[k], fi[k])));
                }
            }
        }
    }
    terms
}

impl Chart for SampledMetricChart {
    fn dim(&self) -> usize {
        self.domain.lo.len()
    }
    fn domain(&self) -> &Domain {
        &self.domain
    }
    fn metric_jet(&self, x: &[Jet]) -> Vec<Jet> {
        let n = self.dim();
        let x0: Vec<f64> = x.iter().map(|j| j.value()).collect();
        let order = x.iter().filter_map(|j| j.order()).min().unwrap_or(0).min(2);
        fd_taylor(&*self.f, &x0, self.h, order).iter().map(|t| Jet::from_terms(n, order, t)).collect()
    }
    fn label(&self) -> String {
        self.label.clone()
    }
}

/// Tensor with `free` leading unsymmetrized slots and a symmetric tail.
#[derive(Clone, Debug)]
pub struct Mixed<S> {
    pub n: usize,
    pub free: usize,
    pub parts: Vec<SymTensor<S>>,
}

/// Curvature data at a point, with the sign convention
/// `(∇_j ∇_k − ∇_k ∇_j) u_i = R^p_{ikj} u_p`.
#[derive(Clone, Debug)]
pub struct Curvature<S> {
    pub n: usize,
    /// `R^p_{ijk}`, index `((p n + i) n + j) n + k`.
    pub riemann_up: Vec<S>,
    /// `R_{ijkl} = g_{ip} R^p_{jkl}`.
    pub riemann: Vec<S>,
    /// `R_{ij} = g^{kl} R_{kijl}`.
    pub ricci: Vec<S>,
    pub metric: Metric<S>,
}

impl<S: Scalar> Curvature<S> {
    pub fn r(&self, i: usize, j: usize, k: usize, l: usize) -> &S {
        let n = self.n;
        &self.riemann[((i * n + j) * n + k) * n + l]
    }
    pub fn r_up(&self, p: usize, i: usize, j: usize, k: usize) -> &S {
        let n = self.n;
        &self.riemann_up[((p * n + i) * n + j) * n + k]
    }
    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T + Copy) -> Curvature<T> {
        Curvature {
            n: self.n,
            riemann_up: self.riemann_up.iter().map(f).collect(),
            riemann: self.riemann.iter().map(f).collect(),
            ricci: self.ricci.iter().map(f).collect(),
            metric: self.metric.map(f),
        }
    }
}

/// Metric jets and Christoffel symbols around one point.
pub struct LocalGeometry {
    n: usize,
    x0: Vec<f64>,
    order: usize,
    metric: Metric<Jet>,
    gamma: Vec<Jet>,
    flat: bool,
}

impl LocalGeometry {
    /// Expands the metric to `order` (Christoffel symbols to `order - 1`).
    pub fn new(chart: &dyn Chart, x0: &[f64], order: usize) -> Result<Self> {
        chart.check_point(x0)?;
        let n = chart.dim();
        if order > max_order(n) {
            return Err(SymError::JetOrder { need: order, have: max_order(n) });
        }
        if chart.is_euclidean() {
            return Ok(LocalGeometry {
                n,
                x0: x0.to_vec(),
                order,
                metric: Metric::identity(n),
                gamma: vec![Jet::constant(0.0); n * n * n],
                flat: true,
            });
        }
        let coords = Jet::coords(x0, order);
        let g = chart.metric_jet(&coords);
        let metric = Metric::invert_unpivoted(n, g);
        let gamma = if order == 0 {
            vec![Jet::constant(0.0); n * n * n]
        } else {
            christoffel_from(&metric)
        };
        Ok(LocalGeometry { n, x0: x0.to_vec(), order, metric, gamma, flat: false })
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn point(&self) -> &[f64] {
        &self.x0
    }
    pub fn order(&self) -> usize {
        self.order
    }
    pub fn metric(&self) -> &Metric<Jet> {
        &self.metric
    }
    pub fn metric_value(&self) -> Metric<f64> {
        self.metric.map(|j| j.value())
    }
    /// `Γ^i_{jk}`.
    pub fn gamma(&self, i: usize, j: usize, k: usize) -> &Jet {
        &self.gamma[(i * self.n + j) * self.n + k]
    }

    /// Covariant derivative of a mixed tensor; the new slot comes first.
    pub fn nabla_mixed(&self, t: &Mixed<Jet>) -> Result<Mixed<Jet>> {
        let n = self.n;
        let m = t.parts[0].rank();
        let ix = sym_index(n, m);
        let nf = t.parts.len();
        let mut out = Vec::with_capacity(n * nf);
        let mut fidx = vec![0usize; t.free];
        let mut buf = vec![0u8; m];
        for j in 0..n {
            for f in 0..nf {
                decode_free(f, n, &mut fidx);
                let part = &t.parts[f];
                let mut comps = Vec::with_capacity(ix.multis.len());
                for (pos, multi) in ix.multis.iter().enumerate() {
                    let mut v = part.comps()[pos].try_d(j)?;
                    if !self.flat {
                        for s in 0..t.free {
                            for p in 0..n {
                                let gm = self.gamma(p, j, fidx[s]);
                                if gm.is_exact_zero() {
                                    continue;
                                }
                                let mut fi = fidx.clone();
                                fi[s] = p;
                                v = v - gm.clone() * t.parts[encode_free(&fi, n)].comps()[pos].clone();
                            }
                        }
                        for a in 0..m {
                            for p in 0..n {
                                let gm = self.gamma(p, j, multi[a] as usize);
                                if gm.is_exact_zero() {
                                    continue;
                                }
                                buf.copy_from_slice(multi);
                                buf[a] = p as u8;
                                v = v - gm.clone() * part.comps()[ix.position_unsorted(&buf)].clone();
                            }
                        }
                    }
                    comps.push(v);
                }
                out.push(SymTensor::from_vec(n, m, comps)?);
            }
        }
        Ok(Mixed { n, free: t.free + 1, parts: out })
    }

    /// `∇u` as `parts[j] = ∇_j u`.
    pub fn nabla(&self, u: &SymTensor<Jet>) -> Result<Vec<SymTensor<Jet>>> {
        Ok(self.nabla_mixed(&Mixed { n: self.n, free: 0, parts: vec![u.clone()] })?.parts)
    }

    /// `d = σ∇`.
    pub fn d(&self, u: &SymTensor<Jet>) -> Result<SymTensor<Jet>> {
        let parts = self.nabla(u)?;
        Ok(sym_from_parts(&parts))
    }

    /// `(δu)_J = g^{jk} ∇_j u_{kJ}`.
    pub fn delta(&self, u: &SymTensor<Jet>) -> Result<SymTensor<Jet>> {
        let m = u.rank();
        if m == 0 {
            return Err(SymError::Shape("divergence of a rank-0 field".into()));
        }
        let parts = self.nabla(u)?;
        let n = self.n;
        let ix = sym_index(n, m);
        let mut buf = vec![0u8; m];
        let comps = sym_index(n, m - 1)
            .multis
            .iter()
            .map(|jt| {
                let mut acc = Jet::constant(0.0);
                for j in 0..n {
                    for k in 0..n {
                        let w = &self.metric.ginv()[j * n + k];
                        if w.is_exact_zero() {
                            continue;
                        }
                        buf[0] = k as u8;
                        buf[1..].copy_from_slice(jt);
                        acc = acc + w.clone() * parts[j].comps()[ix.position_unsorted(&buf)].clone();
                    }
                }
                acc
            })
            .collect();
        SymTensor::from_vec(n, m - 1, comps)
    }

    /// Rough Laplacian `g^{jk} ∇_j ∇_k u`.
    pub fn laplace(&self, u: &SymTensor<Jet>) -> Result<SymTensor<Jet>> {
        let n = self.n;
        let first = self.nabla_mixed(&Mixed { n, free: 0, parts: vec![u.clone()] })?;
        let second = self.nabla_mixed(&first)?;
        let mut acc = SymTensor::<Jet>::zeros(n, u.rank());
        for j in 0..n {
            for k in 0..n {
                let w = &self.metric.ginv()[j * n + k];
                if w.is_exact_zero() {
                    continue;
                }
                acc = acc + second.parts[j * n + k].scale(w);
            }
        }
        Ok(acc)
    }

    pub fn curvature(&self) -> Result<Curvature<Jet>> {
        let n = self.n;
        if self.flat {
            let z = vec![Jet::constant(0.0); n.pow(4)];
            return Ok(Curvature {
                n,
                riemann_up: z.clone(),
                riemann: z,
                ricci: vec![Jet::constant(0.0); n * n],
                metric: self.metric.clone(),
            });
        }
        if self.order < 2 {
            return Err(SymError::JetOrder { need: 2, have: self.order });
        }
        let mut dgamma = Vec::with_capacity(n.pow(4));
        // dgamma[((m n + r) n + a) n + b] = ∂_m Γ^r_{ab}
        for mm in 0..n {
            for g in &self.gamma {
                dgamma.push(g.try_d(mm)?);
            }
        }
        let dg = |mm: usize, r: usize, a: usize, b: usize| &dgamma[((mm * n + r) * n + a) * n + b];
        let mut up = Vec::with_capacity(n.pow(4));
        for rho in 0..n {
            for sigma in 0..n {
                for mu in 0..n {
                    for nu in 0..n {
                        let mut v = dg(mu, rho, nu, sigma).clone() - dg(nu, rho, mu, sigma).clone();
                        for l in 0..n {
                            v = v + self.gamma(rho, mu, l).clone() * self.gamma(l, nu, sigma).clone()
                                - self.gamma(rho, nu, l).clone() * self.gamma(l, mu, sigma).clone();
                        }
                        up.push(v);
                    }
                }
            }
        }
        let g = self.metric.g();
        let gi = self.metric.ginv();
        let mut low = Vec::with_capacity(n.pow(4));
        for i in 0..n {
            for rest in 0..n.pow(3) {
                let mut v = Jet::constant(0.0);
                for p in 0..n {
                    v = v + g[i * n + p].clone() * up[p * n.pow(3) + rest].clone();
                }
                low.push(v);
            }
        }
        let mut ricci = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let mut v = Jet::constant(0.0);
                for k in 0..n {
                    for l in 0..n {
                        v = v + gi[k * n + l].clone() * low[((k * n + i) * n + j) * n + l].clone();
                    }
                }
                ricci.push(v);
            }
        }
        Ok(Curvature { n, riemann_up: up, riemann: low, ricci, metric: self.metric.clone() })
    }
}

fn decode_free(mut f: usize, n: usize, out: &mut [usize]) {
    for s in (0..out.len()).rev() {
        out[s] = f % n;
        f /= n;
    }
}

fn encode_free(idx: &[usize], n: usize) -> usize {
    idx.iter().fold(0, |a, &i| a * n + i)
}

fn christoffel_from(metric: &Metric<Jet>) -> Vec<Jet> {
    let n = metric.dim();
    let g = metric.g();
    let gi = metric.ginv();
    // dg[(l n + a) n + b] = ∂_l g_{ab}
    let mut dg = Vec::with_capacity(n * n * n);
    for l in 0..n {
        for gab in g {
            dg.push(gab.d(l));
        }
    }
    let d = |l: usize, a: usize, b: usize| dg[(l * n + a) * n + b].clone();
    let mut out = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut v = Jet::constant(0.0);
                for l in 0..n {
                    let w = &gi[i * n + l];
                    if w.is_exact_zero() {
                        continue;
                    }
                    v = v + w.clone() * (d(j, l, k) + d(k, l, j) - d(l, j, k));
                }
                out.push(v * 0.5);
            }
        }
    }
    out
}

/// `σ` of a tensor given as `parts[j] = T_{j I}`.
pub fn sym_from_parts<S: Scalar>(parts: &[SymTensor<S>]) -> SymTensor<S> {
    let n = parts.len();
    let m = parts[0].rank();
    let ix = sym_index(n, m);
    let mut buf = vec![0u8; m];
    SymTensor::from_fn(n, m + 1, |t| {
        let mut acc = S::zero();
        for a in 0..=m {
            buf[..a].copy_from_slice(&t[..a]);
            buf[a..].copy_from_slice(&t[a + 1..]);
            acc = acc + parts[t[a] as usize].comps()[ix.position(&buf)].clone();
        }
        acc.scale(1, m as i64 + 1)
    })
}

/// The zero-order curvature operator `R`.
pub fn curvature_action<S: Scalar>(u: &SymTensor<S>, c: &Curvature<S>) -> SymTensor<S> {
    let (n, m) = (u.dim(), u.rank());
    if m == 0 {
        return SymTensor::zeros(n, 0);
    }
    let gi = c.metric.ginv();
    let ix = u.index();
    let mut buf = vec![0u8; m];
    // ricci with the first index raised
    let mut ric_up = vec![S::zero(); n * n];
    for j in 0..n {
        for b in 0..n {
            let mut v = S::zero();
            for i in 0..n {
                v = v + gi[i * n + j].clone() * c.ricci[i * n + b].clone();
            }
            ric_up[j * n + b] = v;
        }
    }
    // R^{p}_{a}{}^{q}_{b} = g^{ip} g^{jq} R_{i a j b}
    let mut r_up = vec![S::zero(); n.pow(4)];
    if m >= 2 {
        for p in 0..n {
            for a in 0..n {
                for q in 0..n {
                    for b in 0..n {
                        let mut v = S::zero();
                        for i in 0..n {
                            for j in 0..n {
                                let w = gi[i * n + p].clone() * gi[j * n + q].clone();
                                v = v + w * c.r(i, a, j, b).clone();
                            }
                        }
                        r_up[((p * n + a) * n + q) * n + b] = v;
                    }
                }
            }
        }
    }
    SymTensor::from_fn(n, m, |t| {
        let mut acc = S::zero();
        for a in 0..m {
            for j in 0..n {
                buf.copy_from_slice(t);
                buf[a] = j as u8;
                acc = acc + ric_up[j * n + t[a] as usize].clone() * u.comps()[ix.position_unsorted(&buf)].clone();
            }
        }
        for a in 0..m {
            for b in a + 1..m {
                for p in 0..n {
                    for q in 0..n {
                        let w = &r_up[((p * n + t[a] as usize) * n + q) * n + t[b] as usize];
                        if w.is_exact_zero() {
                            continue;
                        }
                        buf.copy_from_slice(t);
                        buf[a] = p as u8;
                        buf[b] = q as u8;
                        acc = acc + (w.clone() * u.comps()[ix.position_unsorted(&buf)].clone()).scale(2, 1);
                    }
                }
            }
        }
        acc
    })
}

/// A symmetric tensor field that can be expanded into jets at any point.
pub trait TensorField: Send + Sync {
    fn dim(&self) -> usize;
    fn rank(&self) -> usize;
    /// Components as jets at `x0`, valid up to `order`.
    fn jet(&self, x0: &[f64], order: usize) -> Result<SymTensor<Jet>>;

    fn eval(&self, x: &[f64]) -> Result<SymTensor<f64>> {
        Ok(self.jet(x, 0)?.map(|j| j.value()))
    }
}

pub type FieldRef = Arc<dyn TensorField>;

/// Field given by a closure on coordinate jets.
pub struct AnalyticField {
    n: usize,
    m: usize,
    f: Arc<dyn Fn(&[Jet]) -> SymTensor<Jet> + Send + Sync>,
}

impl AnalyticField {
    pub fn new(n: usize, m: usize, f: impl Fn(&[Jet]) -> SymTensor<Jet> + Send + Sync + 'static) -> Self {
        AnalyticField { n, m, f: Arc::new(f) }
    }

    pub fn shared(n: usize, m: usize, f: impl Fn(&[Jet]) -> SymTensor<Jet> + Send + Sync + 'static) -> FieldRef {
        Arc::new(Self::new(n, m, f))
    }

    /// Constant field.
    pub fn constant(u: SymTensor<f64>) -> FieldRef {
        let (n, m) = (u.dim(), u.rank());
        Self::shared(n, m, move |_x| u.map(|v| Jet::constant(*v)))
    }
}

impl TensorField for AnalyticField {
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
        let u = (self.f)(&Jet::coords(x0, order));
        if u.dim() != self.n || u.rank() != self.m {
            return Err(SymError::Shape(format!("closure returned rank {} instead of {}", u.rank(), self.m)));
        }
        Ok(u.map(|j| j.truncate(order)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldOp {
    D,
    Delta,
    Laplace,
    Curv,
    P,
    Q,
    I,
    J,
}

impl FieldOp {
    fn extra_order(self) -> usize {
        match self {
            FieldOp::D | FieldOp::Delta => 1,
            FieldOp::Laplace | FieldOp::Curv => 2,
            _ => 0,
        }
    }

    fn rank_after(self, m: usize) -> usize {
        match self {
            FieldOp::D => m + 1,
            FieldOp::Delta => m - 1,
            FieldOp::I => m + 2,
            FieldOp::J => m.saturating_sub(2),
            _ => m,
        }
    }
}

/// A field obtained by applying a differential or algebraic operator.
pub struct DerivedField {
    op: FieldOp,
    inner: FieldRef,
    chart: ChartRef,
}

impl DerivedField {
    pub fn new(op: FieldOp, inner: FieldRef, chart: ChartRef) -> Result<FieldRef> {
        if inner.dim() != chart.dim() {
            return Err(SymError::DimMismatch(format!("field of dim {} on chart of dim {}", inner.dim(), chart.dim())));
        }
        if op == FieldOp::Delta && inner.rank() == 0 {
            return Err(SymError::Shape("divergence of a rank-0 field".into()));
        }
        Ok(Arc::new(DerivedField { op, inner, chart }))
    }
}

impl TensorField for DerivedField {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn rank(&self) -> usize {
        self.op.rank_after(self.inner.rank())
    }
    fn jet(&self, x0: &[f64], order: usize) -> Result<SymTensor<Jet>> {
        let k = order + self.op.extra_order();
        let geo = LocalGeometry::new(&*self.chart, x0, k)?;
        let u = self.inner.jet(x0, k)?;
        let g = geo.metric();
        let out = match self.op {
            FieldOp::D => geo.d(&u)?,
            FieldOp::Delta => geo.delta(&u)?,
            FieldOp::Laplace => geo.laplace(&u)?,
            FieldOp::Curv => curvature_action(&u, &geo.curvature()?),
            FieldOp::P => project_p(&u, g),
            FieldOp::Q => project_q(&u, g),
            FieldOp::I => mul_metric(&u, g),
            FieldOp::J => {
                if u.rank() < 2 {
                    SymTensor::zeros(u.dim(), 0)
                } else {
                    trace(&u, g)
                }
            }
        };
        if let Some(have) = out.comps().iter().filter_map(|j| j.order()).min() {
            if have < order {
                return Err(SymError::JetOrder { need: order, have });
            }
        }
        Ok(out.map(|j| j.truncate(order)))
    }
}

pub fn d_op(u: FieldRef, chart: ChartRef) -> Result<FieldRef> {
    DerivedField::new(FieldOp::D, u, chart)
}
pub fn delta_op(u: FieldRef, chart: ChartRef) -> Result<FieldRef> {
    DerivedField::new(FieldOp::Delta, u, chart)
}
pub fn laplace_op(u: FieldRef, chart: ChartRef) -> Result<FieldRef> {
    DerivedField::new(FieldOp::Laplace, u, chart)
}
pub fn curvature_op(u: FieldRef, chart: ChartRef) -> Result<FieldRef> {
    DerivedField::new(FieldOp::Curv, u, chart)
}
pub fn p_op(u: FieldRef, chart: ChartRef) -> Result<FieldRef> {
    DerivedField::new(FieldOp::P, u, chart)
}
pub fn q_op(u: FieldRef, chart: ChartRef) -> Result<FieldRef> {
    DerivedField::new(FieldOp::Q, u, chart)
}
pub fn i_op(u: FieldRef, chart: ChartRef) -> Result<FieldRef> {
    DerivedField::new(FieldOp::I, u, chart)
}
pub fn j_op(u: FieldRef, chart: ChartRef) -> Result<FieldRef> {
    DerivedField::new(FieldOp::J, u, chart)
}

/// Linear combination `Σ c_k u_k` of fields of equal shape.
pub struct SumField {
    terms: Vec<(f64, FieldRef)>,
}

impl SumField {
    pub fn new(terms: Vec<(f64, FieldRef)>) -> Result<FieldRef> {
        let first = terms.first().ok_or_else(|| SymError::Shape("empty sum".into()))?;
        let (n, m) = (first.1.dim(), first.1.rank());
        if terms.iter().any(|(_, f)| f.dim() != n || f.rank() != m) {
            return Err(SymError::Shape("summands of different shape".into()));
        }
        Ok(Arc::new(SumField { terms }))
    }
}

impl TensorField for SumField {
    fn dim(&self) -> usize {
        self.terms[0].1.dim()
    }
    fn rank(&self) -> usize {
        self.terms[0].1.rank()
    }
    fn jet(&self, x0: &[f64], order: usize) -> Result<SymTensor<Jet>> {
        let mut acc: Option<SymTensor<Jet>> = None;
        for (c, f) in &self.terms {
            let t = f.jet(x0, order)?.scale(&Jet::constant(*c));
            acc = Some(match acc {
                None => t,
                Some(a) => a + t,
            });
        }
        Ok(acc.expect("nonempty"))
    }
}

pub fn christoffel(chart: &dyn Chart, x: &[f64]) -> Result<Vec<f64>> {
    let geo = LocalGeometry::new(chart, x, 1)?;
    Ok(geo.gamma.iter().map(|j| j.value()).collect())
}

/// `∇u` at `x` as a raw tensor with the derivative slot first.
pub fn nabla(field: &dyn TensorField, chart: &dyn Chart, x: &[f64]) -> Result<RawTensor<f64>> {
    let geo = LocalGeometry::new(chart, x, 1)?;
    let parts = geo.nabla(&field.jet(x, 1)?)?;
    let (n, m) = (field.dim(), field.rank());
    Ok(RawTensor::from_fn(n, m + 1, |t| parts[t[0] as usize].get(&t[1..]).value()))
}

pub fn curvature(chart: &dyn Chart, x: &[f64]) -> Result<Curvature<f64>> {
    let geo = LocalGeometry::new(chart, x, 2)?;
    Ok(geo.curvature()?.map(|j| j.value()))
}

/// `R_{1212} / det g` for two-dimensional charts.
pub fn gauss_curvature(chart: &dyn Chart, x: &[f64]) -> Result<f64> {
    if chart.dim() != 2 {
        return Err(SymError::Unsupported("Gauss curvature needs a 2-dimensional chart".into()));
    }
    let c = curvature(chart, x)?;
    let g = c.metric.g();
    Ok(c.r(0, 1, 0, 1) / (g[0] * g[3] - g[1] * g[2]))
}

fn det(a: &[f64], n: usize) -> f64 {
    nalgebra::DMatrix::from_row_slice(n, n, a).determinant()
}

/// `|∫(⟨du,v⟩ + ⟨u,δv⟩) dV − ∫_∂ ⟨i_ν u, v⟩ dV'|` over the chart's box, with a
/// tensor Gauss–Legendre rule of `points` nodes per axis.
pub fn greens_residual(u: &dyn TensorField, v: &dyn TensorField, chart: &dyn Chart, points: usize) -> Result<f64> {
    let n = chart.dim();
    if u.rank() + 1 != v.rank() || u.dim() != n || v.dim() != n {
        return Err(SymError::Shape("need u of rank m-1 and v of rank m on the chart".into()));
    }
    if points == 0 {
        return Err(SymError::Quadrature { got: 0, need: 1 });
    }
    let dom = chart.domain();
    let (gx, gw) = gauss_legendre(points);
    let map = |a: usize, t: f64| 0.5 * (dom.lo[a] + dom.hi[a]) + 0.5 * (dom.hi[a] - dom.lo[a]) * t;
    let half = |a: usize| 0.5 * (dom.hi[a] - dom.lo[a]);

    let integrate = |axes: &[usize], fixed: &[(usize, f64)], f: &dyn Fn(&[f64]) -> Result<f64>| -> Result<f64> {
        let k = axes.len();
        let total = points.pow(k as u32);
        let mut acc = 0.0;
        let mut x = vec![0.0; n];
        for &(a, v) in fixed {
            x[a] = v;
        }
        for mut flat in 0..total {
            let mut w = 1.0;
            for &a in axes.iter().rev() {
                let q = flat % points;
                flat /= points;
                x[a] = map(a, gx[q]);
                w *= gw[q] * half(a);
            }
            acc += w * f(&x)?;
        }
        Ok(acc)
    };

    let all: Vec<usize> = (0..n).collect();
    let volume = integrate(&all, &[], &|x| {
        let geo = LocalGeometry::new(chart, x, 1)?;
        let uj = u.jet(x, 1)?;
        let vj = v.jet(x, 1)?;
        let du = geo.d(&uj)?.map(|j| j.value());
        let dv = geo.delta(&vj)?.map(|j| j.value());
        let g = geo.metric_value();
        let (u0, v0) = (uj.map(|j| j.value()), vj.map(|j| j.value()));
        let vol = det(g.g(), n).sqrt();
        Ok((inner(&du, &v0, &g)? + inner(&u0, &dv, &g)?) * vol)
    })?;

    let mut boundary = 0.0;
    for a in 0..n {
        let others: Vec<usize> = (0..n).filter(|&b| b != a).collect();
        for (side, sign) in [(dom.lo[a], -1.0), (dom.hi[a], 1.0)] {
            boundary += integrate(&others, &[(a, side)], &|x| {
                let g = chart.metric_at(x)?;
                let mut nu = vec![0.0; n];
                nu[a] = sign / g.ginv()[a * n + a].sqrt();
                let iu = sym_product(&SymTensor::covector(nu), &u.eval(x)?);
                let face: Vec<f64> = others.iter().flat_map(|&i| others.iter().map(move |&j| (i, j))).map(|(i, j)| g.g()[i * n + j]).collect();
                let area = if others.is_empty() { 1.0 } else { det(&face, n - 1).sqrt() };
                Ok(inner(&iu, &v.eval(x)?, &g)? * area)
            })?;
        }
    }
    Ok((volume - boundary).abs())
}

/// Random polynomial field of total degree ≤ `deg`.
pub fn random_poly_field<R: rand::Rng>(rng: &mut R, n: usize, m: usize, deg: usize) -> FieldRef {
    let nc = crate::symcore::sym_len(n, m);
    let monos: Vec<Vec<u8>> = (0..=deg)
        .flat_map(|d| sym_index(n, d).multis.clone())
        .collect();
    let coeffs: Vec<Vec<f64>> = (0..nc).map(|_| monos.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    AnalyticField::shared(n, m, move |x| {
        let vals: Vec<Jet> = monos
            .iter()
            .map(|mo| mo.iter().fold(Jet::constant(1.0), |acc, &i| acc * x[i as usize].clone()))
            .collect();
        let comps = coeffs
            .iter()
            .map(|cs| cs.iter().zip(&vals).fold(Jet::constant(0.0), |acc, (c, v)| acc + v.clone() * *c))
            .collect();
        SymTensor::from_vec(n, m, comps).expect("component count")
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::metric_ops::{project_p, project_q};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn conformal(n: usize, mu: impl Fn(&[Jet]) -> Jet + Send + Sync + 'static) -> ChartRef {
        Arc::new(ConformalChart::new(Domain::cube(n, -1.0, 1.0), Arc::new(mu), "test"))
    }

    #[test]
    fn christoffel_examples() {
        let e = EuclideanChart::unit_cube(3);
        assert!(christoffel(&e, &[0.5, 0.5, 0.5]).unwrap().iter().all(|&v| v == 0.0));
        let c = conformal(2, |x| x[0].clone());
        let g = christoffel(&*c, &[0.3, 0.2]).unwrap();
        let at = |i: usize, j: usize, k: usize| g[(i * 2 + j) * 2 + k];
        assert!((at(0, 0, 0) - 1.0).abs() < 1e-13);
        assert!((at(0, 1, 1) + 1.0).abs() < 1e-13);
        assert!((at(1, 0, 1) - 1.0).abs() < 1e-13);
        assert!((at(1, 1, 0) - 1.0).abs() < 1e-13);
        assert!(at(1, 1, 1).abs() < 1e-13 && at(0, 0, 1).abs() < 1e-13);
        let polar = JetMetricChart::new(
            Domain::new(vec![0.5, 0.0], vec![2.0, 1.0]),
            Arc::new(|x: &[Jet]| vec![Jet::constant(1.0), Jet::constant(0.0), Jet::constant(0.0), x[0].clone() * x[0].clone()]),
            "polar",
        );
        let g = christoffel(&polar, &[1.5, 0.5]).unwrap();
        assert!((g[3] + 1.5).abs() < 1e-13); // Γ^1_{22}
        assert!((g[(1 * 2) * 2 + 1] - 1.0 / 1.5).abs() < 1e-13); // Γ^2_{12}
        assert!(christoffel(&polar, &[3.0, 0.5]).is_err());
    }

    #[test]
    fn finite_difference_chart_agrees() {
        let f = Arc::new(|x: &[f64]| vec![1.0, 0.0, 0.0, x[0] * x[0]]);
        let fd = SampledMetricChart::new(Domain::new(vec![0.5, 0.0], vec![2.0, 1.0]), f, "polar-fd");
        let g = christoffel(&fd, &[1.5, 0.5]).unwrap();
        assert!((g[3] + 1.5).abs() < 1e-8);
        assert!((g[5] - 1.0 / 1.5).abs() < 1e-8);
        let sphere = SampledMetricChart::new(
            Domain::new(vec![0.2, 0.0], vec![2.5, 1.0]),
            Arc::new(|x: &[f64]| vec![1.0, 0.0, 0.0, x[0].sin().powi(2)]),
            "sphere-fd",
        );
        assert!((gauss_curvature(&sphere, &[1.0, 0.5]).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sectional_curvature_examples() {
        let sphere = JetMetricChart::new(
            Domain::new(vec![0.2, 0.0], vec![2.5, 1.0]),
            Arc::new(|x: &[Jet]| {
                let s = x[0].sin();
                vec![Jet::constant(1.0), Jet::constant(0.0), Jet::constant(0.0), s.clone() * s]
            }),
            "sphere",
        );
        assert!((gauss_curvature(&sphere, &[1.1, 0.3]).unwrap() - 1.0).abs() < 1e-12);
        let c = conformal(2, |x| (x[0].clone() * x[0].clone() + x[1].clone() * x[1].clone()) * 0.5);
        assert!((gauss_curvature(&*c, &[0.0, 0.0]).unwrap() + 2.0).abs() < 1e-12);
        // oracle: K = -e^{-2μ} Δμ by finite differences of μ
        let x = [0.3, -0.4];
        let mu = |p: [f64; 2]| 0.5 * (p[0] * p[0] + p[1] * p[1]);
        let h = 1e-4;
        let lap = (mu([x[0] + h, x[1]]) + mu([x[0] - h, x[1]]) + mu([x[0], x[1] + h]) + mu([x[0], x[1] - h]) - 4.0 * mu(x)) / (h * h);
        let k = -(-2.0 * mu(x)).exp() * lap;
        assert!((gauss_curvature(&*c, &x).unwrap() - k).abs() < 1e-6);
        let flat = EuclideanChart::unit_cube(2);
        assert_eq!(gauss_curvature(&flat, &[0.5, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn commutator_of_second_derivatives_matches_curvature() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let charts: Vec<ChartRef> = vec![
            conformal(2, |x| (x[0].clone() * x[0].clone() + x[1].clone() * x[1].clone()) * 0.5),
            conformal(3, |x| x[0].clone() * 0.7 + (x[1].clone() * x[2].clone()).sin()),
            Arc::new(JetMetricChart::new(
                Domain::cube(2, -1.0, 1.0),
                Arc::new(|x: &[Jet]| {
                    let a = (x[0].clone() * 0.5).exp() + x[1].clone() * x[1].clone();
                    let b = x[0].clone() * x[1].clone() * 0.3;
                    vec![a, b.clone(), b, x[0].clone().cos() + 1.5]
                }),
                "skew",
            )),
        ];
        for chart in charts {
            let n = chart.dim();
            let u = random_poly_field(&mut rng, n, 1, 3);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let geo = LocalGeometry::new(&*chart, &x, 3).unwrap();
            let uj = u.jet(&x, 3).unwrap();
            let first = geo.nabla_mixed(&Mixed { n, free: 0, parts: vec![uj.clone()] }).unwrap();
            let second = geo.nabla_mixed(&first).unwrap();
            let curv = geo.curvature().unwrap();
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let lhs = second.parts[j * n + k].comps()[i].value() - second.parts[k * n + j].comps()[i].value();
                        let rhs: f64 = (0..n).map(|p| curv.r_up(p, i, k, j).value() * uj.comps()[p].value()).sum();
                        assert!((lhs - rhs).abs() < 1e-11 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
                    }
                }
            }
        }
    }

    #[test]
    fn operator_examples() {
        let flat: ChartRef = Arc::new(EuclideanChart::new(Domain::cube(2, -1.0, 1.0)));
        let u = AnalyticField::shared(2, 1, |x| SymTensor::covector(vec![x[0].clone(), x[1].clone()]));
        let du = d_op(u.clone(), flat.clone()).unwrap().eval(&[0.3, 0.1]).unwrap();
        assert_eq!(du, Metric::<f64>::identity(2).g_tensor());
        let du_div = delta_op(u.clone(), flat.clone()).unwrap().eval(&[0.3, 0.1]).unwrap();
        assert_eq!(du_div.comps(), &[2.0]);
        let r2 = AnalyticField::shared(2, 0, |x| SymTensor::scalar(x[0].clone() * x[0].clone() + x[1].clone() * x[1].clone(), 2));
        assert_eq!(laplace_op(r2.clone(), flat.clone()).unwrap().eval(&[0.2, 0.7]).unwrap().comps(), &[4.0]);
        let grad = d_op(r2.clone(), flat.clone()).unwrap().eval(&[0.2, 0.7]).unwrap();
        assert!((grad.comps()[0] - 0.4).abs() < 1e-15 && (grad.comps()[1] - 1.4).abs() < 1e-15);
        let c = AnalyticField::constant(SymTensor::from_vec(2, 2, vec![1.0, 2.0, 3.0]).unwrap());
        assert!(d_op(c.clone(), flat.clone()).unwrap().eval(&[0.0, 0.0]).unwrap().max_abs() == 0.0);
        assert!(delta_op(r2, flat.clone()).is_err());
        assert!(d_op(c, flat).unwrap().eval(&[3.0, 0.0]).is_err());
    }

    #[test]
    fn covector_nabla_against_difference_oracle() {
        let chart = conformal(2, |x| x[0].clone() * x[1].clone() * 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_poly_field(&mut rng, 2, 1, 3);
        let x = [0.2, -0.3];
        let nab = nabla(&*u, &*chart, &x).unwrap();
        // oracle: central differences of components, Christoffel symbols from
        // the closed form for e^{2μ}δ
        let h = 1e-5;
        let mu_d = [x[1] * 0.5, x[0] * 0.5];
        let gamma = |i: usize, j: usize, k: usize| {
            let dl = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
            dl(i, j) * mu_d[k] + dl(i, k) * mu_d[j] - dl(j, k) * mu_d[i]
        };
        for j in 0..2 {
            let mut p = x;
            let mut q = x;
            p[j] += h;
            q[j] -= h;
            let (up, uq, u0) = (u.eval(&p).unwrap(), u.eval(&q).unwrap(), u.eval(&x).unwrap());
            for i in 0..2 {
                let fd = (up.comps()[i] - uq.comps()[i]) / (2.0 * h);
                let corr: f64 = (0..2).map(|pp| gamma(pp, j, i) * u0.comps()[pp]).sum();
                assert!((nab.get(&[j as u8, i as u8]) - (fd - corr)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn curvature_action_against_index_loop() {
        let sphere = JetMetricChart::new(
            Domain::new(vec![0.2, 0.0], vec![2.5, 1.0]),
            Arc::new(|x: &[Jet]| {
                let s = x[0].sin();
                vec![Jet::constant(1.0), Jet::constant(0.0), Jet::constant(0.0), s.clone() * s]
            }),
            "sphere",
        );
        let c = curvature(&sphere, &[1.0, 0.5]).unwrap();
        let u = SymTensor::from_vec(2, 2, vec![0.3, -1.2, 0.8]).unwrap();
        let got = curvature_action(&u, &c);
        let gi = c.metric.ginv().to_vec();
        for a0 in 0..2u8 {
            for a1 in 0..2u8 {
                let t = [a0 as usize, a1 as usize];
                let mut v = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        v += gi[i * 2 + j] * c.ricci[i * 2 + t[0]] * u.get(&[j as u8, a1]);
                        v += gi[i * 2 + j] * c.ricci[i * 2 + t[1]] * u.get(&[a0, j as u8]);
                        for p in 0..2 {
                            for q in 0..2 {
                                v += 2.0 * gi[i * 2 + p] * gi[j * 2 + q] * c.r(i, t[0], j, t[1]) * u.get(&[p as u8, q as u8]);
                            }
                        }
                    }
                }
                assert!((got.get(&[a0, a1]) - v).abs() < 1e-12);
            }
        }
        let flat = curvature(&EuclideanChart::unit_cube(2), &[0.5, 0.5]).unwrap();
        assert!(curvature_action(&u, &flat).max_abs() == 0.0);
        // m = 1: Ricci with the index raised
        let w = SymTensor::covector(vec![0.4, -0.9]);
        let rw = curvature_action(&w, &c);
        for b in 0..2 {
            let mut v = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    v += gi[i * 2 + j] * c.ricci[i * 2 + b] * w.comps()[j];
                }
            }
            assert!((rw.comps()[b] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn greens_formula() {
        let flat: ChartRef = Arc::new(EuclideanChart::unit_cube(2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_poly_field(&mut rng, 2, 1, 3);
        let v = random_poly_field(&mut rng, 2, 2, 3);
        assert!(greens_residual(&*u, &*v, &*flat, 8).unwrap() < 1e-8);
        // compact support: bump functions vanish with all derivatives on the boundary
        let bump = |x: &Jet| (x.clone() * (x.clone() * -1.0 + 1.0)).powi(4);
        let cu = AnalyticField::shared(2, 0, move |x| SymTensor::scalar(bump(&x[0]) * bump(&x[1]), 2));
        let cv = AnalyticField::shared(2, 1, move |x| {
            let b = bump(&x[0]) * bump(&x[1]);
            SymTensor::covector(vec![b.clone() * x[1].clone(), b * x[0].clone().sin()])
        });
        assert!(greens_residual(&*cu, &*cv, &*flat, 12).unwrap() < 1e-10);
        let curved: ChartRef = Arc::new(ConformalChart::new(
            Domain::cube(2, 0.0, 1.0),
            Arc::new(|x: &[Jet]| x[0].clone() * 0.5 + x[1].clone() * x[1].clone() * 0.25),
            "curved",
        ));
        assert!(greens_residual(&*u, &*v, &*curved, 16).unwrap() < 1e-6);
    }

    #[test]
    fn derived_fields_commute_with_algebra() {
        let chart = conformal(2, |x| x[0].clone() * 0.4 + x[1].clone() * x[0].clone() * 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_poly_field(&mut rng, 2, 2, 4);
        let x = [0.1, 0.25];
        let id = i_op(d_op(u.clone(), chart.clone()).unwrap(), chart.clone()).unwrap().eval(&x).unwrap();
        let di = d_op(i_op(u.clone(), chart.clone()).unwrap(), chart.clone()).unwrap().eval(&x).unwrap();
        assert!((id.clone() - di).max_abs() < 1e-10 * id.max_abs());
        let jd = j_op(delta_op(u.clone(), chart.clone()).unwrap(), chart.clone()).unwrap();
        assert_eq!(jd.rank(), 0);
        let li = laplace_op(i_op(u.clone(), chart.clone()).unwrap(), chart.clone()).unwrap().eval(&x).unwrap();
        let il = i_op(laplace_op(u.clone(), chart.clone()).unwrap(), chart.clone()).unwrap().eval(&x).unwrap();
        assert!((li.clone() - il).max_abs() < 1e-9 * li.max_abs());
        let pu = p_op(u.clone(), chart.clone()).unwrap().eval(&x).unwrap();
        let qu = q_op(u.clone(), chart.clone()).unwrap().eval(&x).unwrap();
        let g = chart.metric_at(&x).unwrap();
        let u0 = u.eval(&x).unwrap();
        assert!((pu - project_p(&u0, &g)).max_abs() < 1e-12);
        assert!((qu - project_q(&u0, &g)).max_abs() < 1e-12);
    }
}
