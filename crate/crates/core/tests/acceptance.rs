//! Acceptance run: one PASS/FAIL line per criterion.

use std::time::{Duration, Instant};

use symten::ckt::{ck_dimension_bound, constrained_ck_kernel, poly_ck_kernel, Constraint};
use symten::verify::{
    algebra_suite, coeffs_suite, convergence_study, differential_suite, flat_exact_suite, holomorphic_suite, kinetic_suite,
    norm_suite, Check, VerifyConfig,
};

struct Outcome {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn run(id: usize, title: &'static str, limit: Duration, f: impl FnOnce() -> Result<(bool, String), String>) -> Outcome {
    let t = Instant::now();
    let res = f();
    let el = t.elapsed();
    let (ok, detail) = match res {
        Ok(x) => x,
        Err(e) => (false, format!("error: {e}")),
    };
    let in_time = el <= limit;
    let pass = ok && in_time;
    let detail = format!("{detail}; {:.2}s of {}s{}", el.as_secs_f64(), limit.as_secs(), if in_time { "" } else { " (too slow)" });
    println!("{} criterion {id}: {title}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { id, title, pass, detail }
}

fn summarize(checks: &[Check]) -> (bool, String) {
    let worst = checks.iter().map(|c| c.residual / c.tolerance.max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let ok = failed.is_empty();
    let msg = if ok {
        format!("{} checks, worst residual/tolerance {worst:.3e}", checks.len())
    } else {
        format!("failed: {}", failed.join(", "))
    };
    (ok, msg)
}

fn suite(f: fn(&VerifyConfig) -> symten::Result<Vec<Check>>, cfg: VerifyConfig) -> Result<(bool, String), String> {
    f(&cfg).map(|c| summarize(&c)).map_err(|e| e.to_string())
}

fn cfg(m_max: usize) -> VerifyConfig {
    VerifyConfig { seed: 7, m_max: Some(m_max), cases: 200 }
}

fn main() {
    let secs = Duration::from_secs;
    let mut out = Vec::new();

    out.push(run(1, "algebra suite, 200 cases, n in {2,3,4}, m <= 5, rel <= 1e-10", secs(30), || {
        suite(algebra_suite, cfg(5))
    }));
    out.push(run(2, "norm constant by quadrature, n in {2,3}, m <= 4, 1e-9", secs(10), || suite(norm_suite, cfg(4))));
    out.push(run(3, "differential suite on three metrics, m <= 3, 1e-8, Green < 1e-8", secs(60), || {
        suite(differential_suite, cfg(3))
    }));
    out.push(run(4, "flat commutators delta^l d^k and j d^k, k,l <= 3, 1e-8", secs(60), || {
        suite(flat_exact_suite, cfg(3))
    }));
    out.push(run(5, "flat conformal Killing kernel dimensions 10, 15, 35", secs(300), || {
        let mut ok = true;
        let mut msg = Vec::new();
        for (n, m, deg, want) in [(3usize, 1usize, 3usize, 10usize), (4, 1, 3, 15), (3, 2, 4, 35)] {
            let k = poly_ck_kernel(n, m, deg).map_err(|e| e.to_string())?;
            let bound = ck_dimension_bound(n, m).map_err(|e| e.to_string())?;
            let good = k.dim() == want && bound == want.into() && k.dim_float() == want;
            ok &= good;
            msg.push(format!("({n},{m}) -> {} [bound {bound}]", k.dim()));
        }
        Ok((ok, msg.join(", ")))
    }));
    out.push(run(6, "hyperplane-vanishing kernels trivial, line-vanishing (3,2) is 10", secs(300), || {
        let mut ok = true;
        let mut msg = Vec::new();
        for (n, m) in [(2usize, 1usize), (2, 2), (3, 1), (3, 2)] {
            let d = constrained_ck_kernel(n, m, 2 * m + 2, &[Constraint::Hyperplane]).map_err(|e| e.to_string())?.dim();
            ok &= d == 0;
            msg.push(format!("hyperplane ({n},{m}) -> {d}"));
        }
        let d = constrained_ck_kernel(3, 2, 6, &[Constraint::Line]).map_err(|e| e.to_string())?.dim();
        ok &= d == 10;
        msg.push(format!("line (3,2) -> {d}"));
        Ok((ok, msg.join(", ")))
    }));
    out.push(run(7, "jet order 2m kills the flat kernel, 2m-1 does not, n=3, m <= 2", secs(120), || {
        let mut ok = true;
        let mut msg = Vec::new();
        for m in 1..=2usize {
            let kill = constrained_ck_kernel(3, m, 2 * m + 2, &[Constraint::JetOrder(2 * m)]).map_err(|e| e.to_string())?.dim();
            let keep =
                constrained_ck_kernel(3, m, 2 * m + 2, &[Constraint::JetOrder(2 * m - 1)]).map_err(|e| e.to_string())?.dim();
            ok &= kill == 0 && keep > 0;
            msg.push(format!("m={m}: order {} -> {kill}, order {} -> {keep}", 2 * m, 2 * m - 1));
        }
        Ok((ok, msg.join(", ")))
    }));
    out.push(run(8, "boundary coefficient combinatorics, exact, n <= 8, m <= 8", secs(60), || suite(coeffs_suite, cfg(8))));
    out.push(run(9, "transport relations vs sampled H, flat and mu=x, M <= 3, 1e-6", secs(60), || {
        suite(kinetic_suite, cfg(3))
    }));
    out.push(run(10, "holomorphic data pass (< 1e-9), perturbed fail (> 1e-3)", secs(30), || {
        suite(holomorphic_suite, cfg(3))
    }));
    out.push(run(11, "manufactured decomposition, N in {17,33,65}, order >= 1.8, residuals <= 10h^2, SPD", secs(300), || {
        let st = convergence_study(&[17, 33, 65]).map_err(|e| e.to_string())?;
        let ok = st.min_order >= 1.8 && st.constraint_over_h2 <= 10.0 && st.spd && st.smallest_eigenvalue > 0.0;
        Ok((
            ok,
            format!(
                "min order {:.3}, max constraint/h^2 {:.3e}, smallest eigenvalue {:.3e}",
                st.min_order, st.constraint_over_h2, st.smallest_eigenvalue
            ),
        ))
    }));

    let failed: Vec<String> =
        out.iter().filter(|o| !o.pass).map(|o| format!("{} ({}): {}", o.id, o.title, o.detail)).collect();
    println!("{} of {} criteria pass", out.len() - failed.len(), out.len());
    if !failed.is_empty() {
        eprintln!("failing criteria:\n{}", failed.join("\n"));
        std::process::exit(1);
    }
}
