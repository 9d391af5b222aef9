//! Seeded identity suites shared by the command line and the acceptance run.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::boundary_coeffs::{
    boundary_chain, check_support, normal_derivative_tensors, solve_normal_recurrence, trace_chain_defect, verify_a_identity,
    verify_b_identity, verify_b_identity_odd_denominator, CoeffTable,
};
use crate::ckt::{
    ck_dimension_bound, ck_residual, ckt_from_complex, constrained_ck_kernel, cr_residual, isothermic_reduce, perturb_conj,
    poly_ck_kernel, z_power, Constraint,
};
use crate::decomp::{assemble_bvp, decompose_field, grid_l2_error, manufactured as mf, observed_orders, spd_report};
use crate::error::{Result, SymError};
use crate::geom::{
    curvature_op, d_op, delta_op, greens_residual, i_op, j_op, laplace_op, p_op, q_op, random_poly_field, ChartRef, ConformalChart,
    Domain, EuclideanChart, FieldRef, ScalarFn, SumField,
};
use crate::grid::GridField;
use crate::jet::Jet;
use crate::kinetic::{consistency_residual, random_stack, transport_relations};
use crate::metric_ops::{
    harmonic_decompose, ji_apply, ji_commutation_rhs, ji_inverse, lambda_k, mul_metric, mul_metric_pow, project_p, trace, i_xi, j_xi,
    Metric,
};
use crate::scalar::{rat, Rational};
use crate::sphere::{kappa_eval, metric_sphere_rule, norm_constant, vertical_laplacian_check, SpherePoint};
use crate::symcore::{binomial, factorial, inner, SymTensor};

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub paper_anchor: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, anchor: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        let pass = residual.is_finite() && residual <= tolerance;
        Check { name: name.into(), paper_anchor: anchor.into(), residual, tolerance, pass }
    }

    /// Exact check: residual 0 on success, 1 otherwise.
    pub fn exact(name: impl Into<String>, anchor: impl Into<String>, ok: bool) -> Self {
        Self::new(name, anchor, if ok { 0.0 } else { 1.0 }, 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Algebra,
    Norm,
    Differential,
    FlatExact,
    Coeffs,
    Ck,
    Kinetic,
    Holomorphic,
    Decomp,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::Algebra,
        Suite::Norm,
        Suite::Differential,
        Suite::FlatExact,
        Suite::Coeffs,
        Suite::Ck,
        Suite::Kinetic,
        Suite::Holomorphic,
        Suite::Decomp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Algebra => "algebra",
            Suite::Norm => "norm",
            Suite::Differential => "differential",
            Suite::FlatExact => "flat-exact",
            Suite::Coeffs => "coeffs",
            Suite::Ck => "ck",
            Suite::Kinetic => "kinetic",
            Suite::Holomorphic => "holomorphic",
            Suite::Decomp => "decomp",
        }
    }

    pub fn parse(s: &str) -> Result<Suite> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| SymError::Parse(format!("unknown suite {s:?}")))
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    /// upper rank; each suite clamps it to its own range
    pub m_max: Option<usize>,
    pub cases: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { seed: 7, m_max: None, cases: 200 }
    }
}

impl VerifyConfig {
    fn m_max(&self, default: usize) -> usize {
        self.m_max.unwrap_or(default)
    }
}

pub fn run_suite(suite: Suite, cfg: &VerifyConfig) -> Result<Vec<Check>> {
    match suite {
        Suite::Algebra => algebra_suite(cfg),
        Suite::Norm => norm_suite(cfg),
        Suite::Differential => differential_suite(cfg),
        Suite::FlatExact => flat_exact_suite(cfg),
        Suite::Coeffs => coeffs_suite(cfg),
        Suite::Ck => ck_suite(cfg),
        Suite::Kinetic => kinetic_suite(cfg),
        Suite::Holomorphic => holomorphic_suite(cfg),
        Suite::Decomp => decomp_suite(cfg),
    }
}

pub fn random_metric(rng: &mut ChaCha8Rng, n: usize) -> Metric<f64> {
    loop {
        let a: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum();
            }
            g[i * n + i] += 0.5;
        }
        if let Ok(m) = Metric::new(n, g) {
            return m;
        }
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, n: usize, m: usize) -> SymTensor<f64> {
    SymTensor::from_fn(n, m, |_| rng.gen_range(-1.0..1.0))
}

pub fn random_rational_tensor(rng: &mut ChaCha8Rng, n: usize, m: usize) -> SymTensor<Rational> {
    SymTensor::from_fn(n, m, |_| rat(rng.gen_range(-9..=9), rng.gen_range(1..=5)))
}

/// Diagonally dominant symmetric rational metric.
pub fn random_rational_metric(rng: &mut ChaCha8Rng, n: usize) -> Metric<Rational> {
    let mut g = vec![rat(0, 1); n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rat(rng.gen_range(-2..=2), 7);
            g[i * n + j] = v.clone();
            g[j * n + i] = v;
        }
        g[i * n + i] = rat(rng.gen_range(2..=5), 1);
    }
    Metric::invert_unpivoted(n, g)
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`, zero when both vanish.
pub fn rel_diff(a: &SymTensor<f64>, b: &SymTensor<f64>) -> f64 {
    let scale = a.max_abs().max(b.max_abs());
    if scale == 0.0 {
        return 0.0;
    }
    (a.clone() - b.clone()).max_abs() / scale
}

fn rel_scalar(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

struct Worst {
    entries: Vec<(&'static str, &'static str, f64)>,
}

impl Worst {
    fn new(names: &[(&'static str, &'static str)]) -> Self {
        Worst { entries: names.iter().map(|&(n, a)| (n, a, 0.0)).collect() }
    }
    fn record(&mut self, name: &str, r: f64) {
        let e = self.entries.iter_mut().find(|e| e.0 == name).expect("registered check");
        e.2 = if r.is_nan() { f64::NAN } else { e.2.max(r) };
    }
    fn checks(self, tol: f64) -> Vec<Check> {
        self.entries.into_iter().map(|(n, a, r)| Check::new(n, a, r, tol)).collect()
    }
}

const ALGEBRA_TOL: f64 = 1e-10;

pub fn algebra_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m_max = cfg.m_max(5).min(5);
    let mut w = Worst::new(&[
        ("ji on trace-free tensors", "ji = 2(n+2m)/((m+1)(m+2)) E on Ker j"),
        ("lambda of i", "λ i = λ"),
        ("vertical laplacian", "m(m-1) κ j = Δ^v κ"),
        ("j i_xi commutation", "j i_ξ = 2/(m+1) j_ξ + (m-1)/(m+1) i_ξ j"),
        ("j_xi i_xi commutation", "j_ξ i_ξ f = |ξ|²/(m+1) f + m/(m+1) i_ξ j_ξ f"),
        ("j i^k commutation", "j i^k = 2k(n+2m+2k-2)/((m+2k-1)(m+2k)) i^{k-1} + m(m-1)/((m+2k-1)(m+2k)) i^k j"),
        ("harmonic reconstruction", "S^m = ⊕ i^k Ker j_{m-2k}"),
        ("harmonic parts trace-free", "j u_{m-2k} = 0"),
        ("ji eigenvalues", "λ_k = 2(k+1)(n+2m-2k)/((m+1)(m+2))"),
        ("p i_xi commutation", "p i_ξ = i_ξ p - 2/(m+1) i (ji)^{-1} j_ξ p"),
        ("i j adjointness", "⟨iu, v⟩ = ⟨u, jv⟩"),
    ]);
    for case in 0..cfg.cases {
        let n = 2 + case % 3;
        let m = rng.gen_range(0..=m_max);
        let g = random_metric(&mut rng, n);
        let u = random_tensor(&mut rng, n, m);
        let xi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (ni, mi) = (n as i64, m as i64);

        let u0 = project_p(&u, &g);
        w.record(
            "ji on trace-free tensors",
            rel_diff(&trace(&mul_metric(&u0, &g), &g), &u0.scale_ratio(2 * (ni + 2 * mi), (mi + 1) * (mi + 2))),
        );

        let sp = SpherePoint::normalized(&xi, &g)?;
        w.record("lambda of i", rel_scalar(kappa_eval(&mul_metric(&u, &g), sp.xi()), kappa_eval(&u, sp.xi())));

        w.record("vertical laplacian", vertical_laplacian_check(&u, &g) / (1.0 + u.max_abs() * (m * m) as f64));

        if m >= 1 {
            let lhs = trace(&i_xi(&u, &xi), &g);
            let mut rhs = j_xi(&u, &xi, &g).scale_ratio(2, mi + 1);
            if m >= 2 {
                rhs = rhs + i_xi(&trace(&u, &g), &xi).scale_ratio(mi - 1, mi + 1);
            }
            w.record("j i_xi commutation", rel_diff(&lhs, &rhs));
        }

        let xi2 = g.norm_sq_covector(&xi);
        let lhs = j_xi(&i_xi(&u, &xi), &xi, &g);
        let mut rhs = u.scale(&(xi2 / (m + 1) as f64));
        if m >= 1 {
            rhs = rhs + i_xi(&j_xi(&u, &xi, &g), &xi).scale_ratio(mi, mi + 1);
        }
        w.record("j_xi i_xi commutation", rel_diff(&lhs, &rhs));

        for k in 1..=3 {
            w.record("j i^k commutation", rel_diff(&ji_apply(&u, &g, k), &ji_commutation_rhs(&u, &g, k)));
        }

        let h = harmonic_decompose(&u, &g);
        w.record("harmonic reconstruction", rel_diff(&h.reconstruct(&g), &u));
        for (k, part) in h.parts.iter().enumerate() {
            if part.rank() >= 2 {
                w.record("harmonic parts trace-free", trace(part, &g).max_abs() / (1.0 + u.max_abs()));
            }
            let t = mul_metric_pow(part, &g, k);
            let (num, den) = lambda_k(n, m, k);
            w.record("ji eigenvalues", rel_diff(&ji_apply(&t, &g, 1), &t.scale_ratio(num, den)));
        }

        let lhs = project_p(&i_xi(&u, &xi), &g);
        let pu = project_p(&u, &g);
        let mut rhs = i_xi(&pu, &xi);
        if m >= 1 {
            rhs = rhs - mul_metric(&ji_inverse(&j_xi(&pu, &xi, &g), &g), &g).scale_ratio(2, mi + 1);
        }
        w.record("p i_xi commutation", rel_diff(&lhs, &rhs));

        let v = random_tensor(&mut rng, n, m + 2);
        w.record("i j adjointness", rel_scalar(inner(&mul_metric(&u, &g), &v, &g)?, inner(&u, &trace(&v, &g), &g)?));
    }
    Ok(w.checks(ALGEBRA_TOL))
}

pub fn norm_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4e4f);
    let mut worst = 0.0f64;
    let mut cross = 0.0f64;
    for n in 2..=3 {
        for m in 0..=cfg.m_max(4).min(4) {
            for _ in 0..3 {
                let g = random_metric(&mut rng, n);
                let u = project_p(&random_tensor(&mut rng, n, m), &g);
                let v = project_p(&random_tensor(&mut rng, n, m), &g);
                let (pts, ws) = metric_sphere_rule(&g, 2 * m + 2)?;
                let q = |a: &SymTensor<f64>, b: &SymTensor<f64>| -> f64 {
                    pts.iter().zip(&ws).map(|(p, w)| w * kappa_eval(a, p) * kappa_eval(b, p)).sum()
                };
                let c = norm_constant(n, m);
                let uu = inner(&u, &u, &g)?;
                worst = worst.max(((q(&u, &u) / uu) - c).abs() / c);
                let uv = inner(&u, &v, &g)?;
                let scale = c * uu.sqrt() * inner(&v, &v, &g)?.sqrt();
                cross = cross.max((q(&u, &v) - c * uv).abs() / scale);
            }
        }
    }
    Ok(vec![
        Check::new("norm constant ratio", "⟨λu, λv⟩_ω = m! π^{n/2} / (2^{m-1} Γ(n/2+m)) ⟨u, v⟩", worst, 1e-9),
        Check::new("norm constant cross terms", "⟨λu, λv⟩_ω = m! π^{n/2} / (2^{m-1} Γ(n/2+m)) ⟨u, v⟩", cross, 1e-9),
    ])
}

/// The three two-dimensional test charts on `[−1, 1]²`.
pub fn test_charts() -> Vec<(&'static str, ChartRef)> {
    let dom = || Domain::cube(2, -1.0, 1.0);
    let mu_x: ScalarFn = Arc::new(|x: &[Jet]| x[0].clone());
    let mu_r: ScalarFn = Arc::new(|x: &[Jet]| (x[0].clone() * x[0].clone() + x[1].clone() * x[1].clone()) * 0.5);
    vec![
        ("euclidean", Arc::new(EuclideanChart::new(dom())) as ChartRef),
        ("exp(2x)", Arc::new(ConformalChart::new(dom(), mu_x, "exp(2x)")) as ChartRef),
        ("exp(x^2+y^2)", Arc::new(ConformalChart::new(dom(), mu_r, "exp(x^2+y^2)")) as ChartRef),
    ]
}

/// Operator algebra on fields over a fixed chart.
struct Ops {
    chart: ChartRef,
}

impl Ops {
    fn d(&self, u: &FieldRef) -> Result<FieldRef> {
        d_op(u.clone(), self.chart.clone())
    }
    fn del(&self, u: &FieldRef) -> Result<FieldRef> {
        delta_op(u.clone(), self.chart.clone())
    }
    fn i(&self, u: &FieldRef) -> Result<FieldRef> {
        i_op(u.clone(), self.chart.clone())
    }
    fn j(&self, u: &FieldRef) -> Result<FieldRef> {
        j_op(u.clone(), self.chart.clone())
    }
    fn p(&self, u: &FieldRef) -> Result<FieldRef> {
        p_op(u.clone(), self.chart.clone())
    }
    fn q(&self, u: &FieldRef) -> Result<FieldRef> {
        q_op(u.clone(), self.chart.clone())
    }
    fn lap(&self, u: &FieldRef) -> Result<FieldRef> {
        laplace_op(u.clone(), self.chart.clone())
    }
    fn r(&self, u: &FieldRef) -> Result<FieldRef> {
        curvature_op(u.clone(), self.chart.clone())
    }
    fn pow(&self, u: &FieldRef, k: usize, f: impl Fn(&Self, &FieldRef) -> Result<FieldRef>) -> Result<FieldRef> {
        let mut t = u.clone();
        for _ in 0..k {
            t = f(self, &t)?;
        }
        Ok(t)
    }
    /// Relative sup-norm difference of two fields over sample points.
    fn diff(&self, a: &FieldRef, b: &[(f64, FieldRef)], points: &[Vec<f64>]) -> Result<f64> {
        let rhs = if b.is_empty() {
            None
        } else {
            Some(SumField::new(b.to_vec())?)
        };
        let mut worst = 0.0f64;
        for x in points {
            let l = a.eval(x)?;
            let r = match &rhs {
                Some(r) => r.eval(x)?,
                None => SymTensor::zeros(l.dim(), l.rank()),
            };
            let scale = l.max_abs().max(r.max_abs()).max(1.0);
            worst = worst.max((l - r).max_abs() / scale);
        }
        Ok(worst)
    }
}

const DIFF_TOL: f64 = 1e-8;

pub fn differential_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let m_max = cfg.m_max(3).min(3);
    let names: &[(&'static str, &'static str)] = &[
        ("i d = d i", "id = di"),
        ("j delta = delta j", "jδ = δj"),
        ("p d p = p d", "pdp = pd"),
        ("p delta p = delta p", "pδp = δp"),
        ("q d q = d q", "qdq = dq"),
        ("q delta q = q delta", "qδq = qδ"),
        ("p d q = 0", "pdq = 0"),
        ("q delta p = 0", "qδp = 0"),
        ("delta i", "δi = 2/(m+2) d + m/(m+2) iδ"),
        ("j d", "jd = 2/(m+1) δ + (m-1)/(m+1) dj"),
        ("d q", "dq = qd - m/(n+2m-2) iδp"),
        ("q delta", "qδ = δq - (m-1)/(n+2m-4) pdj"),
        ("d p", "dp = pd + m/(n+2m-2) iδp"),
        ("p delta", "pδ = δp + (m-1)/(n+2m-4) pdj"),
        ("delta d with curvature", "δd = 1/(m+1) (m dδ + Δ - R)"),
    ];
    let jobs: Vec<(usize, &'static str, ChartRef, usize)> = test_charts()
        .into_iter()
        .enumerate()
        .flat_map(|(ci, (label, c))| (0..=m_max).map(move |m| (ci, label, c.clone(), m)))
        .collect();
    let results: Vec<Vec<(&'static str, f64)>> = jobs
        .par_iter()
        .map(|(ci, label, chart, m)| differential_case(chart.clone(), *m, cfg.seed ^ ((*ci as u64) << 8 | *m as u64)).map_err(|e| {
            SymError::Unsupported(format!("{label}, m={m}: {e}"))
        }))
        .collect::<Result<_>>()?;
    let mut w = Worst::new(names);
    for r in results.into_iter().flatten() {
        w.record(r.0, r.1);
    }
    let mut checks = w.checks(DIFF_TOL);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6772);
    let flat = Arc::new(EuclideanChart::unit_cube(2));
    let mut green = 0.0f64;
    for m in 1..=m_max.max(1) {
        let u = random_poly_field(&mut rng, 2, m - 1, 3);
        let v = random_poly_field(&mut rng, 2, m, 3);
        green = green.max(greens_residual(&*u, &*v, &*flat, 8)?);
    }
    checks.push(Check::new("green formula on the unit square", "∫⟨du,v⟩ + ∫⟨u,δv⟩ = ∫_∂ ⟨i_ν u, v⟩", green, DIFF_TOL));
    Ok(checks)
}

fn differential_case(chart: ChartRef, m: usize, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = chart.dim();
    let o = Ops { chart: chart.clone() };
    let u = random_poly_field(&mut rng, n, m, 3);
    let pts = chart.domain().interior_lattice(2);
    let (ni, mf_) = (n as f64, m as f64);
    let mut out = Vec::new();
    out.push(("i d = d i", o.diff(&o.i(&o.d(&u)?)?, &[(1.0, o.d(&o.i(&u)?)?)], &pts)?));
    if m >= 3 {
        out.push(("j delta = delta j", o.diff(&o.j(&o.del(&u)?)?, &[(1.0, o.del(&o.j(&u)?)?)], &pts)?));
    }
    out.push(("p d p = p d", o.diff(&o.p(&o.d(&o.p(&u)?)?)?, &[(1.0, o.p(&o.d(&u)?)?)], &pts)?));
    out.push(("q d q = d q", o.diff(&o.q(&o.d(&o.q(&u)?)?)?, &[(1.0, o.d(&o.q(&u)?)?)], &pts)?));
    out.push(("p d q = 0", o.diff(&o.p(&o.d(&o.q(&u)?)?)?, &[], &pts)?));
    if m >= 1 {
        out.push(("p delta p = delta p", o.diff(&o.p(&o.del(&o.p(&u)?)?)?, &[(1.0, o.del(&o.p(&u)?)?)], &pts)?));
        out.push(("q delta q = q delta", o.diff(&o.q(&o.del(&o.q(&u)?)?)?, &[(1.0, o.q(&o.del(&u)?)?)], &pts)?));
        out.push(("q delta p = 0", o.diff(&o.q(&o.del(&o.p(&u)?)?)?, &[], &pts)?));
    }
    let mut rhs = vec![(2.0 / (mf_ + 2.0), o.d(&u)?)];
    if m >= 1 {
        rhs.push((mf_ / (mf_ + 2.0), o.i(&o.del(&u)?)?));
    }
    out.push(("delta i", o.diff(&o.del(&o.i(&u)?)?, &rhs, &pts)?));
    if m >= 1 {
        let mut rhs = vec![(2.0 / (mf_ + 1.0), o.del(&u)?)];
        if m >= 2 {
            rhs.push(((mf_ - 1.0) / (mf_ + 1.0), o.d(&o.j(&u)?)?));
        }
        out.push(("j d", o.diff(&o.j(&o.d(&u)?)?, &rhs, &pts)?));
        let c = mf_ / (ni + 2.0 * mf_ - 2.0);
        let idp = o.i(&o.del(&o.p(&u)?)?)?;
        out.push(("d q", o.diff(&o.d(&o.q(&u)?)?, &[(1.0, o.q(&o.d(&u)?)?), (-c, idp.clone())], &pts)?));
        out.push(("d p", o.diff(&o.d(&o.p(&u)?)?, &[(1.0, o.p(&o.d(&u)?)?), (c, idp)], &pts)?));
        let mut q_rhs = vec![(1.0, o.del(&o.q(&u)?)?)];
        let mut p_rhs = vec![(1.0, o.del(&o.p(&u)?)?)];
        if m >= 2 {
            let c2 = (mf_ - 1.0) / (ni + 2.0 * mf_ - 4.0);
            let pdj = o.p(&o.d(&o.j(&u)?)?)?;
            q_rhs.push((-c2, pdj.clone()));
            p_rhs.push((c2, pdj));
        }
        out.push(("q delta", o.diff(&o.q(&o.del(&u)?)?, &q_rhs, &pts)?));
        out.push(("p delta", o.diff(&o.p(&o.del(&u)?)?, &p_rhs, &pts)?));
    }
    let k = 1.0 / (mf_ + 1.0);
    let mut rhs = vec![(k, o.lap(&u)?), (-k, o.r(&u)?)];
    if m >= 1 {
        rhs.push((k * mf_, o.d(&o.del(&u)?)?));
    }
    out.push(("delta d with curvature", o.diff(&o.del(&o.d(&u)?)?, &rhs, &pts)?));
    Ok(out)
}

fn ratio(num: u128, den: u128) -> f64 {
    num as f64 / den as f64
}

pub fn flat_exact_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let m_max = cfg.m_max(3).min(3);
    let charts: Vec<ChartRef> = vec![Arc::new(EuclideanChart::new(Domain::cube(2, -1.0, 1.0))), Arc::new(EuclideanChart::new(Domain::cube(3, -1.0, 1.0)))];
    let jobs: Vec<(ChartRef, usize)> = charts.iter().flat_map(|c| (0..=m_max).map(move |m| (c.clone(), m))).collect();
    let results: Vec<Vec<(&'static str, f64)>> = jobs
        .par_iter()
        .map(|(chart, m)| flat_case(chart.clone(), *m, cfg.seed ^ (0x1000 + (chart.dim() * 16 + m) as u64)))
        .collect::<Result<_>>()?;
    let mut w = Worst::new(&[
        ("delta^l d^k", "δ^l d^k u = l!(m+k-l)!/(m+k)! Σ_p C(k,p) C(m,l-p) d^{k-p} Δ^p δ^{l-p} u"),
        (
            "delta^k i",
            "δ^k i u = 1/((m+1)(m+2)) (2k(m-k+2) dδ^{k-1}u + k(k-1) Δδ^{k-2}u + (m-k+1)(m-k+2) iδ^k u)",
        ),
        ("j d^k", "j d^k u = 1/((m+k-1)(m+k)) (2km d^{k-1}δu + k(k-1) d^{k-2}Δu + m(m-1) d^k j u)"),
    ]);
    for r in results.into_iter().flatten() {
        w.record(r.0, r.1);
    }
    Ok(w.checks(DIFF_TOL))
}

fn flat_case(chart: ChartRef, m: usize, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = chart.dim();
    let o = Ops { chart: chart.clone() };
    let u = random_poly_field(&mut rng, n, m, 7);
    let pts = vec![vec![0.3; n], (0..n).map(|a| 0.2 - 0.35 * a as f64).collect()];
    let mut out = Vec::new();
    for k in 0..=3usize {
        for l in 0..=3usize {
            if l > m + k {
                continue;
            }
            let lhs = o.pow(&o.pow(&u, k, Ops::d)?, l, Ops::del)?;
            let pre = ratio(factorial(l) * factorial(m + k - l), factorial(m + k));
            let mut rhs = Vec::new();
            for p in l.saturating_sub(m)..=k.min(l) {
                let c = pre * (binomial(k, p) * binomial(m, l - p)) as f64;
                let t = o.pow(&o.pow(&o.pow(&u, l - p, Ops::del)?, p, Ops::lap)?, k - p, Ops::d)?;
                rhs.push((c, t));
            }
            out.push(("delta^l d^k", o.diff(&lhs, &rhs, &pts)?));
        }
    }
    let mi = m as i64;
    for k in 0..=3usize.min(m + 2) {
        let ki = k as i64;
        let lhs = o.pow(&o.i(&u)?, k, Ops::del)?;
        let den = ((m + 1) * (m + 2)) as f64;
        let mut rhs = Vec::new();
        let c1 = 2 * ki * (mi - ki + 2);
        if c1 != 0 {
            rhs.push((c1 as f64 / den, o.d(&o.pow(&u, k - 1, Ops::del)?)?));
        }
        let c2 = ki * (ki - 1);
        if c2 != 0 {
            rhs.push((c2 as f64 / den, o.lap(&o.pow(&u, k - 2, Ops::del)?)?));
        }
        let c3 = (mi - ki + 1) * (mi - ki + 2);
        if c3 != 0 {
            rhs.push((c3 as f64 / den, o.i(&o.pow(&u, k, Ops::del)?)?));
        }
        out.push(("delta^k i", o.diff(&lhs, &rhs, &pts)?));
    }
    for k in 0..=3usize {
        if m + k < 2 {
            continue;
        }
        let lhs = o.j(&o.pow(&u, k, Ops::d)?)?;
        let den = ((m + k - 1) * (m + k)) as f64;
        let mut rhs = Vec::new();
        if k >= 1 && m >= 1 {
            rhs.push(((2 * k * m) as f64 / den, o.pow(&o.del(&u)?, k - 1, Ops::d)?));
        }
        if k >= 2 {
            rhs.push(((k * (k - 1)) as f64 / den, o.pow(&o.lap(&u)?, k - 2, Ops::d)?));
        }
        if m >= 2 {
            rhs.push(((m * (m - 1)) as f64 / den, o.pow(&o.j(&u)?, k, Ops::d)?));
        }
        out.push(("j d^k", o.diff(&lhs, &rhs, &pts)?));
    }
    Ok(out)
}

pub fn coeffs_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let m_max = cfg.m_max(8).min(8);
    let mut forms = true;
    let mut id_a = true;
    let mut id_b = true;
    for n in 2..=8 {
        for m in 0..=m_max {
            forms &= CoeffTable::closed_form(n, m)? == CoeffTable { provenance: crate::boundary_coeffs::Provenance::ClosedForm, ..CoeffTable::recurrence(n, m)? };
            id_a &= verify_a_identity(n, m)?;
            id_b &= verify_b_identity(n, m)?;
        }
    }
    let odd_fails = !verify_b_identity_odd_denominator(3, 2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0ef);
    let mut routes = true;
    let mut trace_free = true;
    for n in 2..=4 {
        for m in 0..=m_max.min(3) {
            let g = if n >= 3 { random_rational_metric(&mut rng, n - 1) } else { Metric::identity(n - 1) };
            let u2m = random_rational_tensor(&mut rng, n - 1, 2 * m);
            let u2m1 = random_rational_tensor(&mut rng, n - 1, 2 * m + 1);
            let v = normal_derivative_tensors(&u2m, &u2m1, &g, n, m)?;
            let direct = solve_normal_recurrence(&boundary_chain(&u2m, &u2m1, &g)?, &g, n)?;
            routes &= v == direct;
            trace_free &= num::Zero::is_zero(&trace_chain_defect(&v, &g));
        }
    }
    let mut support_zero = true;
    let mut support_ends = true;
    for m in 1..=m_max.min(6) {
        for l in 0..=2 * m {
            for n in 2..=8 {
                let c = check_support(n, m, l)?;
                support_zero &= c.a_outside_zero && c.b_outside_zero;
                if n >= 3 {
                    support_ends &= c.a_ends_nonzero;
                }
            }
        }
    }
    Ok(vec![
        Check::exact("closed forms equal recurrences", "a(s,k), b(s,k) closed forms vs recurrences", forms),
        Check::exact("first coefficient identity", "Σ identity for a(s,k)", id_a),
        Check::exact("second coefficient identity", "Σ identity for b(s,k) with (s+1)(2s+3)", id_b),
        Check::exact("second identity with (s+1)(2s+1) fails at n=3 m=2", "Σ identity for b(s,k) with (s+1)(2s+1)", odd_fails),
        Check::exact("coefficient route equals direct recurrence", "v^(s) = Σ_k a(s,k) i^k j^{m-s+k} u^(2m)", routes),
        Check::exact("normal derivative chain trace-free", "j v^(s) = 0", trace_free),
        Check::exact("a_p, b_p vanish outside their support", "a_p = 0 outside [p1,p2], b_p = 0 outside [p3,p4]", support_zero),
        Check::exact("a_p nonzero at support ends (n>=3)", "a_{p1} ≠ 0, a_{p2} ≠ 0", support_ends),
    ])
}

pub fn ck_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let _ = cfg;
    let mut out = Vec::new();
    for (n, m, deg) in [(3usize, 1usize, 3usize), (4, 1, 3), (3, 2, 4)] {
        let k = poly_ck_kernel(n, m, deg)?;
        let bound: usize = ck_dimension_bound(n, m)?.try_into().map_err(|_| SymError::Capacity("bound too large".into()))?;
        out.push(Check::exact(
            format!("kernel dimension n={n} m={m} is {bound}"),
            "dim Ker = ck_dimension_bound(n, m) on flat space",
            k.dim() == bound && k.dim_float() == bound,
        ));
    }
    for (n, m) in [(2usize, 1usize), (2, 2), (3, 1), (3, 2)] {
        let k = constrained_ck_kernel(n, m, 2 * m + 2, &[Constraint::Hyperplane])?;
        out.push(Check::exact(format!("hyperplane-vanishing kernel n={n} m={m} is trivial"), "u|_Γ = 0 ⇒ u = 0", k.dim() == 0));
    }
    let line = constrained_ck_kernel(3, 2, 6, &[Constraint::Line])?;
    out.push(Check::exact("line-vanishing kernel n=3 m=2 has dimension 10", "dimension equals 10", line.dim() == 10));
    for m in 1..=2usize {
        let kill = constrained_ck_kernel(3, m, 2 * m + 2, &[Constraint::JetOrder(2 * m)])?;
        let keep = constrained_ck_kernel(3, m, 2 * m + 2, &[Constraint::JetOrder(2 * m - 1)])?;
        out.push(Check::exact(format!("jet order {} kills the kernel n=3 m={m}", 2 * m), "j^{2m}u(x0) = 0 ⇒ u = 0", kill.dim() == 0));
        out.push(Check::exact(format!("jet order {} leaves a kernel n=3 m={m}", 2 * m - 1), "order 2m is needed", keep.dim() > 0));
    }
    Ok(out)
}

pub fn kinetic_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let m_max = cfg.m_max(3).min(3);
    let nodes = Domain::cube(2, -1.0, 1.0).interior_lattice(4);
    let mut worst = 0.0f64;
    let mut trace_worst = 0.0f64;
    for (ci, (_, chart)) in test_charts().into_iter().take(2).enumerate() {
        for big_m in 0..=m_max {
            let s = random_stack(chart.clone(), big_m, 3, cfg.seed ^ ((ci as u64) << 4 | big_m as u64))?;
            worst = worst.max(consistency_residual(&s, &nodes)?);
            let f = transport_relations(&s)?;
            for x in &nodes {
                let g = chart.metric_at(x)?;
                for t in f.at(x)?.parts.iter().filter(|t| t.rank() >= 2) {
                    trace_worst = trace_worst.max(trace(t, &g).max_abs());
                }
            }
        }
    }
    Ok(vec![
        Check::new(
            "transport relations match projected H samples",
            "f_m = p d u_{m-1} + (m+1)/(n+2m) δ u_{m+1}",
            worst,
            1e-6,
        ),
        Check::new("transport outputs trace-free", "j f_m = 0", trace_worst, 1e-10),
    ])
}

pub fn holomorphic_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let m_max = cfg.m_max(3).clamp(1, 3);
    let mut pass_worst = 0.0f64;
    let mut cr_worst = 0.0f64;
    let mut fail_least = f64::INFINITY;
    for (_, chart) in test_charts().into_iter().take(2) {
        let mu = chart.conformal_factor().expect("conformal test chart");
        for m in 1..=m_max {
            for k in 0..=3 {
                let u = ckt_from_complex(mu.clone(), m, z_power(k));
                let r = ck_residual(u.clone(), chart.clone(), 1e-9)?;
                pass_worst = pass_worst.max(r.pdu.max(r.ju));
                let (a, b) = isothermic_reduce(u, &*chart)?;
                cr_worst = cr_worst.max(cr_residual(&*a, &*b, &mu, m, &*chart, 5)?);
            }
            let bad = ckt_from_complex(mu.clone(), m, perturb_conj(z_power(1), 0.1));
            fail_least = fail_least.min(ck_residual(bad, chart.clone(), 1e-9)?.pdu);
        }
    }
    Ok(vec![
        Check::new("holomorphic data give conformal Killing tensors", "e^{-mμ}(a+ib) holomorphic ⇔ p du = 0", pass_worst, 1e-9),
        Check::new("Cauchy-Riemann residual of holomorphic data", "e^{-mμ}(a+ib) holomorphic", cr_worst, 1e-9),
        // inverted so that a large residual passes
        Check::new("perturbed data are rejected", "p du ≠ 0 for non-holomorphic data", 1e-3 / fail_least, 1.0 - 1e-12),
    ])
}

/// Manufactured rank-two decomposition over meshes 17, 33, 65.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceStudy {
    pub meshes: Vec<usize>,
    pub v_errors: Vec<f64>,
    pub lambda_errors: Vec<f64>,
    pub f_tilde_errors: Vec<f64>,
    pub min_order: f64,
    /// `max over meshes of max(‖jf̃‖, ‖δf̃‖) / h²`
    pub constraint_over_h2: f64,
    pub smallest_eigenvalue: f64,
    pub spd: bool,
}

pub fn convergence_study(meshes: &[usize]) -> Result<ConvergenceStudy> {
    let mut st = ConvergenceStudy {
        meshes: meshes.to_vec(),
        v_errors: vec![],
        lambda_errors: vec![],
        f_tilde_errors: vec![],
        min_order: f64::INFINITY,
        constraint_over_h2: 0.0,
        smallest_eigenvalue: f64::INFINITY,
        spd: true,
    };
    for &mesh in meshes {
        let f = GridField::square(2, mesh, mf::f)?;
        let r = decompose_field(&f, 1e-10)?;
        st.v_errors.push(grid_l2_error(&r.v, mf::v0));
        st.lambda_errors.push(r.lambda.as_ref().map_or(f64::NAN, |l| l.l2_error(mf::lambda0)));
        st.f_tilde_errors.push(r.f_tilde.l2_error(mf::f_tilde0));
        let h2 = r.h * r.h;
        st.constraint_over_h2 = st.constraint_over_h2.max(r.residuals.trace.max(r.residuals.divergence) / h2);
        let spd = spd_report(&assemble_bvp(&f)?)?;
        st.spd &= spd.factorizable && spd.asymmetry < 1e-9 && spd.smallest_eigenvalue > 0.0;
        st.smallest_eigenvalue = st.smallest_eigenvalue.min(spd.smallest_eigenvalue);
    }
    for e in [&st.v_errors, &st.lambda_errors, &st.f_tilde_errors] {
        for o in observed_orders(e) {
            st.min_order = st.min_order.min(if o.is_nan() { f64::NEG_INFINITY } else { o });
        }
    }
    Ok(st)
}

pub fn decomp_suite(_cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let st = convergence_study(&[17, 33, 65])?;
    Ok(vec![
        Check::new("observed order of the manufactured decomposition", "f = dv + iλ + f̃ with errors O(h²)", 1.8 / st.min_order, 1.0),
        Check::new("constraint residuals over h^2", "δf̃ = 0, jf̃ = 0", st.constraint_over_h2, 10.0),
        Check::exact("assembled operator is symmetric positive definite", "δpd elliptic with zero kernel", st.spd),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyConfig {
        VerifyConfig { seed: 3, m_max: None, cases: 30 }
    }

    fn all_pass(c: &[Check]) {
        for x in c {
            assert!(x.pass, "{x:?}");
        }
    }

    #[test]
    fn algebra() {
        all_pass(&algebra_suite(&small()).unwrap());
    }

    #[test]
    fn norm() {
        all_pass(&norm_suite(&small()).unwrap());
    }

    #[test]
    fn differential() {
        all_pass(&differential_suite(&VerifyConfig { m_max: Some(2), ..small() }).unwrap());
    }

    #[test]
    fn flat_exact() {
        all_pass(&flat_exact_suite(&VerifyConfig { m_max: Some(1), ..small() }).unwrap());
    }

    #[test]
    fn coeffs() {
        all_pass(&coeffs_suite(&VerifyConfig { m_max: Some(4), ..small() }).unwrap());
    }

    #[test]
    fn curvature_term_is_detected() {
        // dropping R must break the δd identity on the curved chart
        let (_, chart) = test_charts().remove(2);
        let o = Ops { chart: chart.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_poly_field(&mut rng, 2, 1, 3);
        let pts = chart.domain().interior_lattice(2);
        let lhs = o.del(&o.d(&u).unwrap()).unwrap();
        let rhs = [(0.5, o.lap(&u).unwrap()), (0.5, o.d(&o.del(&u).unwrap()).unwrap())];
        assert!(o.diff(&lhs, &rhs, &pts).unwrap() > 1e-4);
        let mut full = rhs.to_vec();
        full.push((-0.5, o.r(&u).unwrap()));
        assert!(o.diff(&lhs, &full, &pts).unwrap() < 1e-8);
    }

    #[test]
    fn wrong_coefficient_is_detected() {
        let flat: ChartRef = Arc::new(EuclideanChart::new(Domain::cube(2, -1.0, 1.0)));
        let o = Ops { chart: flat };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_poly_field(&mut rng, 2, 2, 3);
        let pts = vec![vec![0.3, -0.2]];
        let lhs = o.del(&o.i(&u).unwrap()).unwrap();
        let good = [(0.5, o.d(&u).unwrap()), (0.5, o.i(&o.del(&u).unwrap()).unwrap())];
        let bad = [(0.5, o.d(&u).unwrap()), (0.4, o.i(&o.del(&u).unwrap()).unwrap())];
        assert!(o.diff(&lhs, &good, &pts).unwrap() < 1e-10);
        assert!(o.diff(&lhs, &bad, &pts).unwrap() > 1e-3);
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse(s.name()).unwrap(), s);
        }
        assert!(Suite::parse("nope").is_err());
    }

    #[test]
    fn check_constructors() {
        assert!(Check::new("a", "b", 1e-12, 1e-10).pass);
        assert!(!Check::new("a", "b", f64::NAN, 1e-10).pass);
        assert!(!Check::exact("a", "b", false).pass);
        assert_eq!(rel_diff(&SymTensor::scalar(0.0, 2), &SymTensor::scalar(0.0, 2)), 0.0);
    }
}
