//! Exact rational coefficients of the boundary construction for trace-free
//! fields and of the jet-determination argument.
//!
//! Parameters: `n` is the ambient dimension, the boundary tensors live in
//! dimension `n − 1`, and the constructed field has odd rank `2m + 1`.

use num::{BigInt, One, Signed, Zero};

use crate::error::{Result, SymError};
use crate::metric_ops::{mul_metric, mul_metric_pow, trace, Metric};
use crate::scalar::{rat, Rational};
use crate::symcore::SymTensor;

/// `k!!` with `(−1)!! = 1`.
pub fn double_factorial(k: i64) -> Result<BigInt> {
    if k < -1 {
        return Err(SymError::Shape(format!("double factorial of {k}")));
    }
    let mut acc = BigInt::one();
    let mut i = k;
    while i > 1 {
        acc *= BigInt::from(i);
        i -= 2;
    }
    Ok(acc)
}

fn fact(k: i64) -> BigInt {
    (1..=k).fold(BigInt::one(), |a, i| a * BigInt::from(i))
}

fn sign(e: i64) -> Rational {
    if e.rem_euclid(2) == 0 {
        rat(1, 1)
    } else {
        rat(-1, 1)
    }
}

fn frac(num: BigInt, den: BigInt) -> Rational {
    Rational::new(num, den)
}

fn check_range(n: usize, m: usize, s: usize, k: usize) -> Result<()> {
    if n < 2 || k > s || s > m {
        return Err(SymError::Shape(format!("coefficient index out of range: n={n} m={m} s={s} k={k}")));
    }
    Ok(())
}

/// Closed form of `a(s,k)`.
pub fn a_coeff(n: usize, m: usize, s: usize, k: usize) -> Result<Rational> {
    check_range(n, m, s, k)?;
    let (n, m, s, k) = (n as i64, m as i64, s as i64, k as i64);
    let num = fact(s) * double_factorial(2 * s - 1)? * fact(m - s) * double_factorial(n + 2 * m + 2 * s - 2 * k - 3)?;
    let den = BigInt::from(2)
        * double_factorial(n + 2 * m + 2 * s - 1)?
        * fact(s - k)
        * fact(m - s + k + 1)
        * double_factorial(2 * s - 2 * k - 1)?;
    Ok(sign(m - s - k) * frac(num, den))
}

/// Closed form of `b(s,k)`.
pub fn b_coeff(n: usize, m: usize, s: usize, k: usize) -> Result<Rational> {
    check_range(n, m, s, k)?;
    let (n, m, s, k) = (n as i64, m as i64, s as i64, k as i64);
    let num = fact(s)
        * double_factorial(2 * s + 1)?
        * double_factorial(2 * m - 2 * s - 1)?
        * BigInt::from(2).pow(k as u32)
        * double_factorial(n + 2 * m + 2 * s - 2 * k - 2)?;
    let den = double_factorial(n + 2 * m + 2 * s)?
        * fact(s - k)
        * double_factorial(2 * m - 2 * s + 2 * k + 1)?
        * double_factorial(2 * s - 2 * k + 1)?;
    Ok(sign(m - s - k) * frac(num, den))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Recurrence,
    ClosedForm,
}

/// `a(s,k)` and `b(s,k)` for `0 ≤ k ≤ s ≤ m`, stored as lower-triangular rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffTable {
    pub n: usize,
    pub m: usize,
    pub a: Vec<Vec<Rational>>,
    pub b: Vec<Vec<Rational>>,
    pub provenance: Provenance,
}

impl CoeffTable {
    /// From the recurrences
    /// `a(s,0) = (−1)^{m−s} / (2(m−s+1)(n+2m+2s−1))`,
    /// `a(s,k) = s(2s−1) / ((m−s+1)(n+2m+2s−1)) · a(s−1,k−1)`,
    /// `b(s,0) = (−1)^{m−s} / ((2m−2s+1)(n+2m+2s))`,
    /// `b(s,k) = 2s(2s+1) / ((2m−2s+1)(n+2m+2s)) · b(s−1,k−1)`.
    pub fn recurrence(n: usize, m: usize) -> Result<Self> {
        check_range(n, m, 0, 0)?;
        let (ni, mi) = (n as i64, m as i64);
        let mut a: Vec<Vec<Rational>> = Vec::with_capacity(m + 1);
        let mut b: Vec<Vec<Rational>> = Vec::with_capacity(m + 1);
        for s in 0..=mi {
            let da = 2 * (mi - s + 1) * (ni + 2 * mi + 2 * s - 1);
            let db = (2 * mi - 2 * s + 1) * (ni + 2 * mi + 2 * s);
            let mut ra = vec![sign(mi - s) * rat(1, da)];
            let mut rb = vec![sign(mi - s) * rat(1, db)];
            for k in 1..=s as usize {
                let prev_a = a[s as usize - 1][k - 1].clone();
                let prev_b = b[s as usize - 1][k - 1].clone();
                ra.push(prev_a * rat(s * (2 * s - 1), (mi - s + 1) * (ni + 2 * mi + 2 * s - 1)));
                rb.push(prev_b * rat(2 * s * (2 * s + 1), db));
            }
            a.push(ra);
            b.push(rb);
        }
        Ok(CoeffTable { n, m, a, b, provenance: Provenance::Recurrence })
    }

    pub fn closed_form(n: usize, m: usize) -> Result<Self> {
        check_range(n, m, 0, 0)?;
        let mut a = Vec::with_capacity(m + 1);
        let mut b = Vec::with_capacity(m + 1);
        for s in 0..=m {
            a.push((0..=s).map(|k| a_coeff(n, m, s, k)).collect::<Result<Vec<_>>>()?);
            b.push((0..=s).map(|k| b_coeff(n, m, s, k)).collect::<Result<Vec<_>>>()?);
        }
        Ok(CoeffTable { n, m, a, b, provenance: Provenance::ClosedForm })
    }

    pub fn a(&self, s: usize, k: usize) -> &Rational {
        &self.a[s][k]
    }
    pub fn b(&self, s: usize, k: usize) -> &Rational {
        &self.b[s][k]
    }

    /// `s,k,numerator,denominator` rows for table `a` or `b`.
    pub fn to_csv(&self, which: char) -> Result<String> {
        let t = match which {
            'a' => &self.a,
            'b' => &self.b,
            _ => return Err(SymError::Parse(format!("unknown table '{which}'"))),
        };
        let mut out = String::from("s,k,numerator,denominator\n");
        for (s, row) in t.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                out.push_str(&format!("{s},{k},{},{}\n", v.numer(), v.denom()));
            }
        }
        Ok(out)
    }
}

/// Residual of the first three-term identity at `(s,k)`:
/// `a(s,k) + (s−k+1)(2s−2k+1)/((s+1)(2s+1)) a(s+1,k) + (k+1)(n+4s−2k−1)/((s+1)(2s+1)) a(s+1,k+1)`.
fn identity_a_term(t: &CoeffTable, s: usize, k: usize) -> Rational {
    let (n, si, ki) = (t.n as i64, s as i64, k as i64);
    let den = (si + 1) * (2 * si + 1);
    let mut v = t.a(s, k).clone() + rat((si - ki + 1) * (2 * si - 2 * ki + 1), den) * t.a(s + 1, k);
    v += rat((ki + 1) * (n + 4 * si - 2 * ki - 1), den) * t.a(s + 1, k + 1);
    v
}

/// Residual of the second identity. With `corrected = true` the last
/// denominator is `(s+1)(2s+3)`; otherwise `(s+1)(2s+1)`, which does not hold in general.
fn identity_b_term(t: &CoeffTable, s: usize, k: usize, corrected: bool) -> Rational {
    let (n, si, ki) = (t.n as i64, s as i64, k as i64);
    let mut v = t.b(s, k).clone() + rat((si - ki + 1) * (2 * si - 2 * ki + 3), (si + 1) * (2 * si + 3)) * t.b(s + 1, k);
    let last_den = if corrected { (si + 1) * (2 * si + 3) } else { (si + 1) * (2 * si + 1) };
    v += rat((ki + 1) * (n + 4 * si - 2 * ki + 1), last_den) * t.b(s + 1, k + 1);
    v
}

fn all_pairs(m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..m).flat_map(|s| (0..=s).map(move |k| (s, k)))
}

pub fn verify_a_identity(n: usize, m: usize) -> Result<bool> {
    let t = CoeffTable::closed_form(n, m)?;
    Ok(all_pairs(m).all(|(s, k)| identity_a_term(&t, s, k).is_zero()))
}

pub fn verify_b_identity(n: usize, m: usize) -> Result<bool> {
    let t = CoeffTable::closed_form(n, m)?;
    Ok(all_pairs(m).all(|(s, k)| identity_b_term(&t, s, k, true).is_zero()))
}

/// The second identity with `(s+1)(2s+1)` as the last denominator; fails for some `(n, m)`.
pub fn verify_b_identity_odd_denominator(n: usize, m: usize) -> Result<bool> {
    let t = CoeffTable::closed_form(n, m)?;
    Ok(all_pairs(m).all(|(s, k)| identity_b_term(&t, s, k, false).is_zero()))
}

fn neg_j_pow(u: &SymTensor<Rational>, g: &Metric<Rational>, p: usize) -> SymTensor<Rational> {
    let mut t = u.clone();
    for _ in 0..p {
        t = -trace(&t, g);
    }
    t
}

/// `v^(0..2m+1)` from `u^(2m)` and `u^(2m+1)` by
/// `v^(2s) = Σ_k a(s,k) i^k j^{m−s+k} u^(2m)` and
/// `v^(2s+1) = Σ_k b(s,k) i^k j^{m−s+k} u^(2m+1)`.
pub fn normal_derivative_tensors(
    u2m: &SymTensor<Rational>,
    u2m1: &SymTensor<Rational>,
    g: &Metric<Rational>,
    n: usize,
    m: usize,
) -> Result<Vec<SymTensor<Rational>>> {
    check_shapes(u2m, u2m1, g, n, m)?;
    let t = CoeffTable::closed_form(n, m)?;
    let mut out = Vec::with_capacity(2 * m + 2);
    for s in 0..=m {
        for (top, coeffs) in [(u2m, &t.a), (u2m1, &t.b)] {
            let mut acc = SymTensor::zeros(g.dim(), top.rank() - 2 * (m - s));
            for k in 0..=s {
                let mut tr = top.clone();
                for _ in 0..(m - s + k) {
                    tr = trace(&tr, g);
                }
                acc = acc + mul_metric_pow(&tr, g, k).scale(&coeffs[s][k]);
            }
            out.push(acc);
        }
    }
    Ok(out)
}

fn check_shapes(u2m: &SymTensor<Rational>, u2m1: &SymTensor<Rational>, g: &Metric<Rational>, n: usize, m: usize) -> Result<()> {
    if g.dim() + 1 != n {
        return Err(SymError::DimMismatch(format!("boundary metric of dim {} for n = {n}", g.dim())));
    }
    if u2m.rank() != 2 * m || u2m1.rank() != 2 * m + 1 || u2m.dim() != g.dim() || u2m1.dim() != g.dim() {
        return Err(SymError::Shape(format!(
            "need ranks {} and {} in dim {}, got {} and {}",
            2 * m,
            2 * m + 1,
            g.dim(),
            u2m.rank(),
            u2m1.rank()
        )));
    }
    Ok(())
}

/// `u^(s)` for `0 ≤ s ≤ R` from the top two tensors via `u^(s) = −j u^(s+2)`.
pub fn boundary_chain(top_even: &SymTensor<Rational>, top_odd: &SymTensor<Rational>, g: &Metric<Rational>) -> Result<Vec<SymTensor<Rational>>> {
    let (re, ro) = (top_even.rank(), top_odd.rank());
    if re % 2 != 0 || ro % 2 != 1 || re.abs_diff(ro) != 1 {
        return Err(SymError::Shape("need one even and one odd rank differing by one".into()));
    }
    let r = re.max(ro);
    Ok((0..=r)
        .map(|s| if s % 2 == 0 { neg_j_pow(top_even, g, (re - s) / 2) } else { neg_j_pow(top_odd, g, (ro - s) / 2) })
        .collect())
}

/// Solves `(R+1−s)(n+R+s−2) v^(s) − s(s−1) i v^(s−2) = u^(s)` upward in `s`,
/// where `R` is the rank of the constructed field.
pub fn solve_normal_recurrence(us: &[SymTensor<Rational>], g: &Metric<Rational>, n: usize) -> Result<Vec<SymTensor<Rational>>> {
    let r = us.len() as i64 - 1;
    let ni = n as i64;
    let mut v: Vec<SymTensor<Rational>> = Vec::with_capacity(us.len());
    for (s, u) in us.iter().enumerate() {
        let si = s as i64;
        if u.rank() != s {
            return Err(SymError::Shape(format!("u^({s}) has rank {}", u.rank())));
        }
        let mut rhs = u.clone();
        if s >= 2 {
            rhs = rhs + mul_metric(&v[s - 2], g).scale_ratio(si * (si - 1), 1);
        }
        let c = (r + 1 - si) * (ni + r + si - 2);
        if c == 0 {
            return Err(SymError::Solver(format!("degenerate recurrence at s = {s}")));
        }
        v.push(rhs.scale_ratio(1, c));
    }
    Ok(v)
}

/// Largest `|v^(s) + j v^(s+2)|` over the chain.
pub fn trace_chain_defect(v: &[SymTensor<Rational>], g: &Metric<Rational>) -> Rational {
    let mut worst = <Rational as Zero>::zero();
    for s in 0..v.len().saturating_sub(2) {
        let d = v[s].clone() + trace(&v[s + 2], g);
        for c in d.comps() {
            if c.abs() > worst {
                worst = c.abs();
            }
        }
    }
    worst
}

/// Even-rank variant (`R = 2m`) obtained by re-indexing the odd construction.
/// Experimental: only the recurrence route exists for it.
pub fn normal_derivative_tensors_even(
    u_even: &SymTensor<Rational>,
    u_odd: &SymTensor<Rational>,
    g: &Metric<Rational>,
    n: usize,
) -> Result<Vec<SymTensor<Rational>>> {
    if u_even.rank() == 0 || u_even.rank() % 2 != 0 || u_odd.rank() + 1 != u_even.rank() {
        return Err(SymError::Shape("need ranks 2m and 2m − 1 with m ≥ 1".into()));
    }
    if g.dim() + 1 != n {
        return Err(SymError::DimMismatch(format!("boundary metric of dim {} for n = {n}", g.dim())));
    }
    solve_normal_recurrence(&boundary_chain(u_even, u_odd, g)?, g, n)
}

/// `C(i, j)` with `C(i, j) = 0` for `j < 0` or `i < j`.
pub fn binom(i: i64, j: i64) -> BigInt {
    if j < 0 || i < j {
        return BigInt::zero();
    }
    (0..j).fold(BigInt::one(), |acc, t| acc * BigInt::from(i - t) / BigInt::from(t + 1))
}

/// `(p_1, p_2, p_3, p_4)`.
pub fn support_limits(m: usize, l: usize) -> (i64, i64, i64, i64) {
    let (m, l) = (m as i64, l as i64);
    ((l - m - 1).max(0), (m - 1).min(l), (l - m + 1).max(0), (m - 1).min(l + 1))
}

fn check_l(m: usize, l: usize) -> Result<()> {
    if m == 0 || l > 2 * m {
        return Err(SymError::Shape(format!("need m ≥ 1 and 0 ≤ l ≤ 2m, got m={m} l={l}")));
    }
    Ok(())
}

/// `a_p = [(n+2m−4)C(m+1,l−p) + 2C(m−1,l−p−1) + C(m−1,l−p−2)] C(m−1,p)
///        − (m−1)[2C(m,l−p) + C(m,l−p−1)] C(m−2,p−1)`.
pub fn ap_coeff(n: usize, m: usize, l: usize, p: i64) -> Result<Rational> {
    check_l(m, l)?;
    let (n, m, l) = (n as i64, m as i64, l as i64);
    let first = (BigInt::from(n + 2 * m - 4) * binom(m + 1, l - p) + BigInt::from(2) * binom(m - 1, l - p - 1) + binom(m - 1, l - p - 2))
        * binom(m - 1, p);
    let second = BigInt::from(m - 1) * (BigInt::from(2) * binom(m, l - p) + binom(m, l - p - 1)) * binom(m - 2, p - 1);
    Ok(Rational::from_integer(first - second))
}

/// `b_p = (m−1) C(m,l−p+1) C(m−2,p−1) − C(m−1,l−p) C(m−1,p)`.
pub fn bp_coeff(m: usize, l: usize, p: i64) -> Result<Rational> {
    check_l(m, l)?;
    let (m, l) = (m as i64, l as i64);
    let v = BigInt::from(m - 1) * binom(m, l - p + 1) * binom(m - 2, p - 1) - binom(m - 1, l - p) * binom(m - 1, p);
    Ok(Rational::from_integer(v))
}

/// Outcome of the support sweep for one `(n, m, l)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportCheck {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub a_outside_zero: bool,
    pub a_ends_nonzero: bool,
    pub b_outside_zero: bool,
}

impl SupportCheck {
    pub fn ok(&self) -> bool {
        self.a_outside_zero && self.a_ends_nonzero && self.b_outside_zero
    }
}

/// Sweeps `p` over `[−2, l + m + 2]`.
pub fn check_support(n: usize, m: usize, l: usize) -> Result<SupportCheck> {
    let (p1, p2, p3, p4) = support_limits(m, l);
    let range = -2..=(l + m + 2) as i64;
    let mut a_out = true;
    let mut b_out = true;
    for p in range {
        if (p < p1 || p > p2) && !ap_coeff(n, m, l, p)?.is_zero() {
            a_out = false;
        }
        if (p < p3 || p > p4) && !bp_coeff(m, l, p)?.is_zero() {
            b_out = false;
        }
    }
    let ends = !ap_coeff(n, m, l, p1)?.is_zero() && !ap_coeff(n, m, l, p2)?.is_zero();
    Ok(SupportCheck { n, m, l, a_outside_zero: a_out, a_ends_nonzero: ends, b_outside_zero: b_out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rational_tensor(rng: &mut ChaCha8Rng, n: usize, m: usize) -> SymTensor<Rational> {
        SymTensor::from_fn(n, m, |_| rat(rng.gen_range(-9..=9), rng.gen_range(1..=5)))
    }

    fn random_rational_metric(rng: &mut ChaCha8Rng, n: usize) -> Metric<Rational> {
        // diagonally dominant symmetric matrix
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

    #[test]
    fn double_factorials() {
        assert_eq!(double_factorial(-1).unwrap(), BigInt::one());
        assert_eq!(double_factorial(0).unwrap(), BigInt::one());
        assert_eq!(double_factorial(7).unwrap(), BigInt::from(105));
        assert_eq!(double_factorial(8).unwrap(), BigInt::from(384));
        assert!(double_factorial(-3).is_err());
    }

    #[test]
    fn closed_forms_match_recurrences() {
        for n in 2..=8 {
            for m in 0..=8 {
                assert_eq!(CoeffTable::closed_form(n, m).unwrap().a, CoeffTable::recurrence(n, m).unwrap().a);
                assert_eq!(CoeffTable::closed_form(n, m).unwrap().b, CoeffTable::recurrence(n, m).unwrap().b);
            }
        }
    }

    #[test]
    fn base_values() {
        for n in 2..=6 {
            for m in 0..=8 {
                for s in 0..=m {
                    let (ni, mi, si) = (n as i64, m as i64, s as i64);
                    let a0 = sign(mi - si) * rat(1, 2 * (mi - si + 1) * (ni + 2 * mi + 2 * si - 1));
                    assert_eq!(a_coeff(n, m, s, 0).unwrap(), a0);
                    let b0 = sign(mi - si) * rat(1, (2 * mi - 2 * si + 1) * (ni + 2 * mi + 2 * si));
                    assert_eq!(b_coeff(n, m, s, 0).unwrap(), b0);
                }
            }
            assert_eq!(a_coeff(n, 0, 0, 0).unwrap(), rat(1, 2 * (n as i64 - 1)));
        }
        assert!(a_coeff(3, 2, 3, 0).is_err());
        assert!(b_coeff(3, 2, 1, 2).is_err());
        assert!(a_coeff(1, 2, 1, 0).is_err());
    }

    #[test]
    fn three_term_identities() {
        for n in 2..=8 {
            for m in 0..=8 {
                assert!(verify_a_identity(n, m).unwrap(), "n={n} m={m}");
                assert!(verify_b_identity(n, m).unwrap(), "n={n} m={m}");
            }
        }
        assert!(verify_a_identity(3, 3).unwrap() && verify_a_identity(2, 1).unwrap() && verify_a_identity(4, 0).unwrap());
        // the (s+1)(2s+1) denominator on the last term breaks the identity
        assert!(!verify_b_identity_odd_denominator(3, 2).unwrap());
    }

    #[test]
    fn zero_data_gives_zero() {
        let g = Metric::<Rational>::identity(2);
        let v = normal_derivative_tensors(&SymTensor::zeros(2, 2), &SymTensor::zeros(2, 3), &g, 3, 1).unwrap();
        assert_eq!(v.len(), 4);
        assert!(v.iter().all(|t| t.is_zero()));
        assert!(normal_derivative_tensors(&SymTensor::zeros(2, 2), &SymTensor::zeros(2, 2), &g, 3, 1).is_err());
        assert!(normal_derivative_tensors(&SymTensor::zeros(2, 2), &SymTensor::zeros(2, 3), &g, 4, 1).is_err());
    }

    #[test]
    fn both_routes_agree_and_chain_is_trace_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in 2..=4 {
            for m in 0..=3 {
                let g = if n == 3 { random_rational_metric(&mut rng, n - 1) } else { Metric::identity(n - 1) };
                let u2m = random_rational_tensor(&mut rng, n - 1, 2 * m);
                let u2m1 = random_rational_tensor(&mut rng, n - 1, 2 * m + 1);
                let v = normal_derivative_tensors(&u2m, &u2m1, &g, n, m).unwrap();
                let us = boundary_chain(&u2m, &u2m1, &g).unwrap();
                let direct = solve_normal_recurrence(&us, &g, n).unwrap();
                assert_eq!(v, direct, "n={n} m={m}");
                assert!(trace_chain_defect(&v, &g).is_zero(), "n={n} m={m}");
                // substituting back into the recurrence
                let r = 2 * m as i64 + 1;
                for s in 0..v.len() {
                    let si = s as i64;
                    let mut lhs = v[s].scale_ratio((r + 1 - si) * (n as i64 + r + si - 2), 1);
                    if s >= 2 {
                        lhs = lhs - mul_metric(&v[s - 2], &g).scale_ratio(si * (si - 1), 1);
                    }
                    assert_eq!(lhs, us[s]);
                }
            }
        }
    }

    #[test]
    fn even_rank_variant_is_trace_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for n in 3..=4 {
            for m in 1..=3 {
                let g = Metric::identity(n - 1);
                let ue = random_rational_tensor(&mut rng, n - 1, 2 * m);
                let uo = random_rational_tensor(&mut rng, n - 1, 2 * m - 1);
                let v = normal_derivative_tensors_even(&ue, &uo, &g, n).unwrap();
                assert!(trace_chain_defect(&v, &g).is_zero(), "n={n} m={m}");
            }
        }
    }

    #[test]
    fn ap_bp_support() {
        for m in 1..=6 {
            for l in 0..=2 * m {
                for n in 2..=8 {
                    let c = check_support(n, m, l).unwrap();
                    if n >= 3 {
                        assert!(c.ok(), "{c:?}");
                    } else {
                        assert!(c.a_outside_zero && c.b_outside_zero, "{c:?}");
                    }
                }
            }
        }
        assert!(ap_coeff(3, 2, 5, 0).is_err());
        assert!(bp_coeff(0, 0, 0).is_err());
        assert_eq!(binom(-1, 0), BigInt::zero());
        assert_eq!(binom(5, 2), BigInt::from(10));
    }

    #[test]
    fn csv_table() {
        let t = CoeffTable::closed_form(3, 1).unwrap();
        let csv = t.to_csv('a').unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "s,k,numerator,denominator");
        assert_eq!(lines.len(), 4);
        // a(0,0) = (−1)^1 / (2·2·4)
        assert_eq!(lines[1], "0,0,-1,16");
        assert!(t.to_csv('z').is_err());
    }

    proptest! {
        #[test]
        fn recurrence_step_holds(n in 2usize..9, m in 1usize..9, s_frac in 0.0f64..1.0) {
            let s = 1 + ((m - 1) as f64 * s_frac) as usize;
            for k in 1..=s {
                let (ni, mi, si) = (n as i64, m as i64, s as i64);
                let a = a_coeff(n, m, s, k).unwrap();
                let prev = a_coeff(n, m, s - 1, k - 1).unwrap();
                prop_assert_eq!(a, prev * rat(si * (2 * si - 1), (mi - si + 1) * (ni + 2 * mi + 2 * si - 1)));
            }
        }
    }
}
