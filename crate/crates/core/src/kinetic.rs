//! Fourier coefficients of `HU` for `U = Σ λu_m` and their check against
//! direct application of the geodesic generator.

use rayon::prelude::*;

use crate::ckt::h_lambda;
use crate::error::{Result, SymError};
use crate::geom::{d_op, delta_op, p_op, AnalyticField, ChartRef, FieldRef, SumField};
use crate::metric_ops::trace;
use crate::sphere::{fourier_project_with_order, HarmonicStack};
use crate::symcore::SymTensor;

/// `u_0, …, u_M` on a chart, `u_m` of rank `m`; higher ranks are taken as zero.
#[derive(Clone)]
pub struct KineticStack {
    pub chart: ChartRef,
    pub fields: Vec<FieldRef>,
}

impl KineticStack {
    pub fn new(chart: ChartRef, fields: Vec<FieldRef>) -> Result<Self> {
        let n = chart.dim();
        for (m, f) in fields.iter().enumerate() {
            if f.rank() != m || f.dim() != n {
                return Err(SymError::Shape(format!("stack entry {m} has rank {} and dim {}", f.rank(), f.dim())));
            }
        }
        if fields.is_empty() {
            return Err(SymError::Shape("empty stack".into()));
        }
        Ok(KineticStack { chart, fields })
    }

    pub fn max_order(&self) -> usize {
        self.fields.len() - 1
    }

    /// Fails if some `u_m` has a trace larger than `tol` on a coarse lattice.
    pub fn check_trace_free(&self, tol: f64) -> Result<()> {
        for x in self.chart.domain().interior_lattice(3) {
            let g = self.chart.metric_at(&x)?;
            for f in self.fields.iter().skip(2) {
                let t = f.eval(&x)?;
                let ju = trace(&t, &g).max_abs();
                if ju > tol * (1.0 + t.max_abs()) {
                    return Err(SymError::NotTraceFree(ju));
                }
            }
        }
        Ok(())
    }

    /// The stack of tensors at one point.
    pub fn at(&self, x: &[f64]) -> Result<HarmonicStack> {
        Ok(HarmonicStack { parts: self.fields.iter().map(|f| f.eval(x)).collect::<Result<_>>()? })
    }
}

/// `f_0 = (1/n) δu_1`, `f_{m+1} = p d u_m + (m+2)/(n+2m+2) δu_{m+2}` with
/// `u_m = 0` for `m > M`. The result has ranks `0..=M+1`.
pub fn transport_relations(u: &KineticStack) -> Result<KineticStack> {
    u.check_trace_free(1e-9)?;
    let chart = u.chart.clone();
    let n = chart.dim();
    let big_m = u.max_order();
    let mut out: Vec<FieldRef> = Vec::with_capacity(big_m + 2);
    let f0 = match u.fields.get(1) {
        Some(u1) => SumField::new(vec![(1.0 / n as f64, delta_op(u1.clone(), chart.clone())?)])?,
        None => AnalyticField::constant(SymTensor::zeros(n, 0)),
    };
    out.push(f0);
    for m in 0..=big_m {
        let mut terms = vec![(1.0, p_op(d_op(u.fields[m].clone(), chart.clone())?, chart.clone())?)];
        if let Some(next) = u.fields.get(m + 2) {
            terms.push(((m + 2) as f64 / (n + 2 * m + 2) as f64, delta_op(next.clone(), chart.clone())?));
        }
        out.push(SumField::new(terms)?);
    }
    KineticStack::new(chart, out)
}

/// `HU` at the given `(x, θ)` pairs on a conformal 2D chart.
pub fn sample_hu(u: &KineticStack, points: &[(Vec<f64>, f64)]) -> Result<Vec<f64>> {
    let mu = conformal_2d(u)?;
    points
        .par_iter()
        .map(|(x, th)| u.fields.iter().map(|f| h_lambda(&**f, &mu, x, *th)).sum::<Result<f64>>())
        .collect()
}

fn conformal_2d(u: &KineticStack) -> Result<crate::geom::ScalarFn> {
    if u.chart.dim() != 2 {
        return Err(SymError::Unsupported("direct H sampling needs a 2D chart".into()));
    }
    u.chart.conformal_factor().ok_or_else(|| SymError::Unsupported("direct H sampling needs a conformal chart".into()))
}

/// θ samples used per node.
pub fn theta_samples(max_order: usize) -> usize {
    4 * (max_order + 2)
}

/// Projects `HU(x, ·)` onto trace-free tensors of ranks `0..=M+1` at each node.
pub fn fourier_of_hu(u: &KineticStack, nodes: &[Vec<f64>]) -> Result<Vec<HarmonicStack>> {
    fourier_of_hu_with(u, nodes, theta_samples(u.max_order()))
}

/// As [`fourier_of_hu`] with an explicit number of θ samples.
pub fn fourier_of_hu_with(u: &KineticStack, nodes: &[Vec<f64>], samples: usize) -> Result<Vec<HarmonicStack>> {
    let mu = conformal_2d(u)?;
    let top = u.max_order() + 1;
    if samples < 2 * top + 2 {
        return Err(SymError::Quadrature { got: samples, need: 2 * top + 2 });
    }
    nodes
        .par_iter()
        .map(|x| {
            let g = u.chart.metric_at(x)?;
            let err = std::sync::Mutex::new(None);
            let phi = |xi: &[f64]| {
                let th = xi[1].atan2(xi[0]);
                match u.fields.iter().map(|f| h_lambda(&**f, &mu, x, th)).sum::<Result<f64>>() {
                    Ok(v) => v,
                    Err(e) => {
                        *err.lock().expect("poisoned") = Some(e);
                        f64::NAN
                    }
                }
            };
            // the circle rule uses order + 2 points
            let stack = fourier_project_with_order(&phi, &g, top, samples - 2)?;
            match err.into_inner().expect("poisoned") {
                Some(e) => Err(e),
                None => Ok(stack),
            }
        })
        .collect()
}

/// Sup over nodes of the difference between the transport relations and the
/// projected samples of `HU`.
pub fn consistency_residual(u: &KineticStack, nodes: &[Vec<f64>]) -> Result<f64> {
    let f = transport_relations(u)?;
    let projected = fourier_of_hu(u, nodes)?;
    let mut worst: f64 = 0.0;
    for (x, p) in nodes.iter().zip(&projected) {
        worst = worst.max(f.at(x)?.max_diff(p));
    }
    Ok(worst)
}

/// Trace-free random polynomial stack of ranks `0..=M`.
pub fn random_stack(chart: ChartRef, max_order: usize, degree: usize, seed: u64) -> Result<KineticStack> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = chart.dim();
    let mut fields = Vec::with_capacity(max_order + 1);
    for m in 0..=max_order {
        let raw = crate::geom::random_poly_field(&mut rng, n, m, degree);
        fields.push(if m >= 2 { p_op(raw, chart.clone())? } else { raw });
    }
    KineticStack::new(chart, fields)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{ConformalChart, Domain, EuclideanChart, ScalarFn};
    use crate::jet::Jet;
    use crate::sphere::kappa_eval;
    use std::sync::Arc;

    fn flat2() -> ChartRef {
        Arc::new(EuclideanChart::new(Domain::cube(2, -1.0, 1.0)))
    }

    fn mu_x() -> ChartRef {
        let mu: ScalarFn = Arc::new(|x: &[Jet]| x[0].clone());
        Arc::new(ConformalChart::new(Domain::cube(2, -1.0, 1.0), mu, "mu=x"))
    }

    fn nodes() -> Vec<Vec<f64>> {
        Domain::cube(2, -1.0, 1.0).interior_lattice(4)
    }

    #[test]
    fn constant_covector_gives_zero() {
        let c = flat2();
        let zero = AnalyticField::constant(SymTensor::scalar(0.0, 2));
        let u1 = AnalyticField::constant(SymTensor::covector(vec![0.3, -0.8]));
        let s = KineticStack::new(c, vec![zero, u1]).unwrap();
        let f = transport_relations(&s).unwrap();
        for x in nodes() {
            assert!(f.at(&x).unwrap().parts.iter().all(|p| p.max_abs() < 1e-15));
        }
        let hu = sample_hu(&s, &[(vec![0.1, 0.2], 0.4), (vec![-0.5, 0.3], 2.0)]).unwrap();
        assert!(hu.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn scalar_only_stack() {
        let c = flat2();
        let phi = AnalyticField::shared(2, 0, |x| SymTensor::scalar(x[0].clone() * x[1].clone() + x[0].sin(), 2));
        let s = KineticStack::new(c.clone(), vec![phi.clone()]).unwrap();
        let f = transport_relations(&s).unwrap();
        let dphi = d_op(phi, c).unwrap();
        for x in nodes() {
            let st = f.at(&x).unwrap();
            assert_eq!(st.parts[0].comps(), &[0.0]);
            assert!((st.parts[1].clone() - dphi.eval(&x).unwrap()).max_abs() < 1e-14);
        }
    }

    #[test]
    fn cos_theta_on_mu_x() {
        // u = e^{x} dx gives λu = cosθ
        let c = mu_x();
        let zero = AnalyticField::constant(SymTensor::scalar(0.0, 2));
        let u1 = AnalyticField::shared(2, 1, |x| SymTensor::covector(vec![x[0].exp(), Jet::constant(0.0)]));
        let s = KineticStack::new(c, vec![zero, u1]).unwrap();
        for (x, th) in [([0.2, 0.1], 0.7), ([-0.3, 0.5], 2.5)] {
            let got = sample_hu(&s, &[(x.to_vec(), th)]).unwrap()[0];
            // only the θ-term survives
            let want = (-x[0]).exp() * th.sin() * th.sin();
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn single_covector_populates_ranks_zero_and_two() {
        let c = flat2();
        let zero = AnalyticField::constant(SymTensor::scalar(0.0, 2));
        let u1 = AnalyticField::shared(2, 1, |x| SymTensor::covector(vec![x[0].clone() * x[1].clone(), x[1].clone() * x[1].clone()]));
        let s = KineticStack::new(c, vec![zero, u1]).unwrap();
        for st in fourier_of_hu(&s, &nodes()).unwrap() {
            assert!(st.parts[1].max_abs() < 1e-12);
            assert!(st.parts[0].max_abs() > 1e-6 || st.parts[2].max_abs() > 1e-6);
        }
    }

    #[test]
    fn zero_stack() {
        let c = flat2();
        let s = KineticStack::new(c, vec![AnalyticField::constant(SymTensor::scalar(0.0, 2))]).unwrap();
        for st in fourier_of_hu(&s, &nodes()).unwrap() {
            assert!(st.parts.iter().all(|p| p.max_abs() == 0.0));
        }
    }

    #[test]
    fn transport_relations_match_sampling() {
        for chart in [flat2(), mu_x()] {
            for big_m in 0..=3 {
                let s = random_stack(chart.clone(), big_m, 3, 100 + big_m as u64).unwrap();
                let r = consistency_residual(&s, &nodes()).unwrap();
                assert!(r < 1e-7, "M={big_m}: {r}");
                let f = transport_relations(&s).unwrap();
                assert_eq!(f.max_order(), big_m + 1);
                f.check_trace_free(1e-10).unwrap();
                let top = p_op(d_op(s.fields[big_m].clone(), chart.clone()).unwrap(), chart.clone()).unwrap();
                for x in nodes() {
                    assert!((f.fields[big_m + 1].eval(&x).unwrap() - top.eval(&x).unwrap()).max_abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lambda_d_equals_h_lambda() {
        let chart = mu_x();
        let s = random_stack(chart.clone(), 2, 3, 7).unwrap();
        for m in 0..=2 {
            let du = d_op(s.fields[m].clone(), chart.clone()).unwrap();
            let single = KineticStack::new(chart.clone(), {
                let mut v: Vec<FieldRef> = (0..m).map(|r| AnalyticField::constant(SymTensor::zeros(2, r))).collect();
                v.push(s.fields[m].clone());
                v
            })
            .unwrap();
            for (x, th) in [([0.1, 0.2], 0.3), ([-0.4, 0.6], 4.0)] {
                let h = sample_hu(&single, &[(x.to_vec(), th)]).unwrap()[0];
                let e = (-x[0]).exp();
                let l = kappa_eval(&du.eval(&x).unwrap(), &[e * th.cos(), e * th.sin()]);
                assert!((h - l).abs() < 1e-12 * (1.0 + l.abs()));
            }
        }
    }

    #[test]
    fn errors() {
        let three: ChartRef = Arc::new(EuclideanChart::unit_cube(3));
        let s = KineticStack::new(three, vec![AnalyticField::constant(SymTensor::scalar(1.0, 3))]).unwrap();
        assert!(sample_hu(&s, &[(vec![0.5, 0.5, 0.5], 0.0)]).is_err());
        let c = flat2();
        let s = KineticStack::new(c.clone(), vec![AnalyticField::constant(SymTensor::scalar(1.0, 2))]).unwrap();
        assert!(matches!(fourier_of_hu_with(&s, &nodes(), 2), Err(SymError::Quadrature { .. })));
        let g = AnalyticField::constant(crate::metric_ops::Metric::<f64>::identity(2).g_tensor());
        let bad = KineticStack::new(
            c.clone(),
            vec![AnalyticField::constant(SymTensor::scalar(0.0, 2)), AnalyticField::constant(SymTensor::zeros(2, 1)), g],
        )
        .unwrap();
        assert!(matches!(transport_relations(&bad), Err(SymError::NotTraceFree(_))));
        assert!(KineticStack::new(c, vec![AnalyticField::constant(SymTensor::covector(vec![1.0, 0.0]))]).is_err());
    }
}
