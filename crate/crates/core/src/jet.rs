//! Truncated multivariate Taylor series ("jets") at a point.
//!
//! A jet of order `K` in `n` variables stores the Taylor coefficients of a
//! smooth function up to total degree `K`. Arithmetic truncates to the smaller
//! order of the operands and differentiation lowers the order by one, so any
//! composition of algebraic operations and partial derivatives is exact up to
//! floating point rounding, as long as enough order is requested up front.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

use crate::error::{Result, SymError};
use crate::scalar::{Rational, Scalar};

pub const MAX_VARS: usize = 6;
const CONST_ORDER: u8 = u8::MAX;

/// Largest order supported for a given number of variables.
pub fn max_order(nvars: usize) -> usize {
    match nvars {
        0..=3 => 12,
        4 => 10,
        _ => 6,
    }
}

struct Table {
    max_order: usize,
    exps: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    count: Vec<usize>,
    // product terms (a, b, a*b) sorted by total degree of a*b
    pairs: Vec<(u32, u32, u32)>,
    pair_end: Vec<usize>,
    // up[i][k] = index of monomial k + e_i
    up: Vec<Vec<u32>>,
}

impl Table {
    fn build(nvars: usize) -> Table {
        let max_order = max_order(nvars);
        let mut exps: Vec<Vec<u8>> = Vec::new();
        let mut count = Vec::with_capacity(max_order + 1);
        for deg in 0..=max_order {
            let mut level = Vec::new();
            compositions(nvars, deg, &mut vec![0u8; nvars], 0, &mut level);
            exps.extend(level);
            count.push(exps.len());
        }
        let index: HashMap<Vec<u8>, usize> =
            exps.iter().enumerate().map(|(k, e)| (e.clone(), k)).collect();
        let deg = |e: &[u8]| e.iter().map(|&x| x as usize).sum::<usize>();
        let mut pairs = Vec::new();
        let mut pair_end = Vec::with_capacity(max_order + 1);
        for total in 0..=max_order {
            for (ia, ea) in exps.iter().enumerate() {
                let da = deg(ea);
                if da > total {
                    break;
                }
                let db = total - da;
                let (lo, hi) = (if db == 0 { 0 } else { count[db - 1] }, count[db]);
                for ib in lo..hi {
                    let prod: Vec<u8> = ea.iter().zip(&exps[ib]).map(|(a, b)| a + b).collect();
                    pairs.push((ia as u32, ib as u32, index[&prod] as u32));
                }
            }
            pair_end.push(pairs.len());
        }
        let mut up = vec![vec![u32::MAX; exps.len()]; nvars];
        for (k, e) in exps.iter().enumerate() {
            if deg(e) < max_order {
                for (i, row) in up.iter_mut().enumerate() {
                    let mut f = e.clone();
                    f[i] += 1;
                    row[k] = index[&f] as u32;
                }
            }
        }
        Table { max_order, exps, index, count, pairs, pair_end, up }
    }
}

fn compositions(nvars: usize, deg: usize, cur: &mut Vec<u8>, pos: usize, out: &mut Vec<Vec<u8>>) {
    if pos + 1 == nvars {
        cur[pos] = deg as u8;
        out.push(cur.clone());
        return;
    }
    for a in (0..=deg).rev() {
        cur[pos] = a as u8;
        compositions(nvars, deg - a, cur, pos + 1, out);
    }
    cur[pos] = 0;
}

fn table(nvars: usize) -> &'static Table {
    static TABLES: [OnceLock<Table>; MAX_VARS + 1] = [
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
    ];
    assert!((1..=MAX_VARS).contains(&nvars), "jets support 1..={MAX_VARS} variables");
    TABLES[nvars].get_or_init(|| Table::build(nvars))
}

/// Number of coefficients of a jet with `nvars` variables and order `order`.
pub fn coeff_count(nvars: usize, order: usize) -> usize {
    table(nvars).count[order]
}

#[derive(Clone, PartialEq)]
pub struct Jet {
    nvars: u8,
    order: u8,
    c: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_const() {
            write!(f, "Jet::const({})", self.c[0])
        } else {
            write!(f, "Jet(n={}, K={}, {:?})", self.nvars, self.order, self.c)
        }
    }
}

impl Jet {
    pub fn constant(v: f64) -> Jet {
        Jet { nvars: 0, order: CONST_ORDER, c: vec![v] }
    }

    /// The coordinate function `x0 + t_i` as a jet of the given order.
    pub fn variable(nvars: usize, order: usize, i: usize, x0: f64) -> Jet {
        assert!(i < nvars);
        let t = table(nvars);
        assert!(order <= t.max_order, "jet order {order} above limit {}", t.max_order);
        let mut c = vec![0.0; t.count[order]];
        c[0] = x0;
        if order >= 1 {
            let mut e = vec![0u8; nvars];
            e[i] = 1;
            c[t.index[&e]] = 1.0;
        }
        Jet { nvars: nvars as u8, order: order as u8, c }
    }

    /// All coordinate jets of a point.
    pub fn coords(x0: &[f64], order: usize) -> Vec<Jet> {
        (0..x0.len()).map(|i| Jet::variable(x0.len(), order, i, x0[i])).collect()
    }

    pub fn zero_of(nvars: usize, order: usize) -> Jet {
        Jet { nvars: nvars as u8, order: order as u8, c: vec![0.0; table(nvars).count[order]] }
    }

    /// Builds a jet from coefficients given as (exponents, value) pairs.
    pub fn from_terms(nvars: usize, order: usize, terms: &[(Vec<u8>, f64)]) -> Jet {
        let t = table(nvars);
        let mut j = Jet::zero_of(nvars, order);
        for (e, v) in terms {
            if let Some(&k) = t.index.get(e) {
                if k < j.c.len() {
                    j.c[k] += v;
                }
            }
        }
        j
    }

    pub fn is_const(&self) -> bool {
        self.order == CONST_ORDER
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// `None` for exact constants (infinite order).
    pub fn order(&self) -> Option<usize> {
        if self.is_const() {
            None
        } else {
            Some(self.order as usize)
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars as usize
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    /// Taylor coefficient of the monomial with exponents `e`.
    pub fn coeff(&self, e: &[u8]) -> f64 {
        if self.is_const() {
            return if e.iter().all(|&x| x == 0) { self.c[0] } else { 0.0 };
        }
        let t = table(self.nvars());
        match t.index.get(e) {
            Some(&k) if k < self.c.len() => self.c[k],
            _ => 0.0,
        }
    }

    /// Partial derivative `∂^e f(x0)` (coefficient times factorials).
    pub fn derivative_value(&self, e: &[u8]) -> f64 {
        let fact: f64 = e.iter().map(|&k| (1..=k as u32).product::<u32>() as f64).product();
        self.coeff(e) * fact
    }

    pub fn truncate(&self, order: usize) -> Jet {
        if self.is_const() || order >= self.order as usize {
            return self.clone();
        }
        let t = table(self.nvars());
        Jet { nvars: self.nvars, order: order as u8, c: self.c[..t.count[order]].to_vec() }
    }

    /// Partial derivative in variable `i`; the order drops by one.
    pub fn try_d(&self, i: usize) -> Result<Jet> {
        if self.is_const() {
            return Ok(Jet::constant(0.0));
        }
        if self.order == 0 {
            return Err(SymError::JetOrder { need: 1, have: 0 });
        }
        let t = table(self.nvars());
        let o = self.order as usize - 1;
        let n = t.count[o];
        let mut c = vec![0.0; n];
        for (k, ck) in c.iter_mut().enumerate() {
            *ck = (t.exps[k][i] as f64 + 1.0) * self.c[t.up[i][k] as usize];
        }
        Ok(Jet { nvars: self.nvars, order: o as u8, c })
    }

    pub fn d(&self, i: usize) -> Jet {
        self.try_d(i).expect("differentiated a jet of order 0")
    }

    /// Applies an analytic function given its Taylor coefficients at the
    /// constant term: `taylor[k] = f^(k)(a0) / k!`.
    pub fn compose(&self, taylor: &[f64]) -> Jet {
        if self.is_const() {
            return Jet::constant(taylor[0]);
        }
        let order = self.order as usize;
        assert!(taylor.len() > order, "need {} Taylor coefficients", order + 1);
        let mut h = self.clone();
        h.c[0] = 0.0;
        let mut r = Jet::constant(taylor[order]);
        for k in (0..order).rev() {
            r = r * h.clone();
            r.c[0] += taylor[k];
            if r.is_const() {
                r = Jet::constant(r.c[0]);
            }
        }
        if r.is_const() {
            let mut z = Jet::zero_of(self.nvars(), order);
            z.c[0] = r.c[0];
            return z;
        }
        r
    }

    fn taylor_len(&self) -> usize {
        if self.is_const() {
            1
        } else {
            self.order as usize + 1
        }
    }

    pub fn exp(&self) -> Jet {
        let a = self.value().exp();
        let mut t = vec![a; self.taylor_len()];
        for k in 1..t.len() {
            t[k] = t[k - 1] / k as f64;
        }
        self.compose(&t)
    }

    pub fn ln(&self) -> Jet {
        let a = self.value();
        let mut t = vec![a.ln(); self.taylor_len()];
        for (k, tk) in t.iter_mut().enumerate().skip(1) {
            let s = if k % 2 == 1 { 1.0 } else { -1.0 };
            *tk = s / (k as f64 * a.powi(k as i32));
        }
        self.compose(&t)
    }

    pub fn sin(&self) -> Jet {
        self.trig(0)
    }

    pub fn cos(&self) -> Jet {
        self.trig(1)
    }

    fn trig(&self, shift: usize) -> Jet {
        let a = self.value();
        let cyc = [a.sin(), a.cos(), -a.sin(), -a.cos()];
        let mut t = vec![0.0; self.taylor_len()];
        let mut fact = 1.0;
        for (k, tk) in t.iter_mut().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            *tk = cyc[(k + shift) % 4] / fact;
        }
        self.compose(&t)
    }

    /// `self^p` for real `p`; requires a positive constant term unless `p` is a
    /// nonnegative integer.
    pub fn powf(&self, p: f64) -> Jet {
        let a = self.value();
        let mut t = vec![a.powf(p); self.taylor_len()];
        let mut binom = 1.0;
        for k in 1..t.len() {
            binom *= (p - (k as f64 - 1.0)) / k as f64;
            t[k] = binom * a.powf(p - k as f64);
        }
        self.compose(&t)
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    pub fn powi(&self, p: u32) -> Jet {
        let mut r = Jet::constant(1.0);
        for _ in 0..p {
            r = r * self.clone();
        }
        r
    }

    pub fn inv(&self) -> Jet {
        let a = self.value();
        let mut t = vec![1.0 / a; self.taylor_len()];
        for k in 1..t.len() {
            t[k] = -t[k - 1] / a;
        }
        self.compose(&t)
    }

    pub fn map_coeffs(&self, f: impl Fn(f64) -> f64) -> Jet {
        Jet { nvars: self.nvars, order: self.order, c: self.c.iter().map(|&x| f(x)).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

fn add_jets(a: Jet, b: Jet) -> Jet {
    match (a.is_const(), b.is_const()) {
        (true, true) => Jet::constant(a.c[0] + b.c[0]),
        (false, true) => a + b.c[0],
        (true, false) => b + a.c[0],
        (false, false) => {
            debug_assert_eq!(a.nvars, b.nvars, "mixing jets with different variable counts");
            let (mut lo, hi) = if a.order <= b.order { (a, b) } else { (b, a) };
            for (x, y) in lo.c.iter_mut().zip(&hi.c) {
                *x += y;
            }
            lo
        }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        add_jets(self, rhs)
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        self + (-rhs)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        for x in &mut self.c {
            *x = -*x;
        }
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        if self.is_const() {
            let s = self.c[0];
            return if rhs.is_const() { Jet::constant(s * rhs.c[0]) } else { rhs.map_coeffs(|x| x * s) };
        }
        if rhs.is_const() {
            let s = rhs.c[0];
            return self.map_coeffs(|x| x * s);
        }
        debug_assert_eq!(self.nvars, rhs.nvars, "mixing jets with different variable counts");
        let t = table(self.nvars());
        let o = self.order.min(rhs.order) as usize;
        let mut c = vec![0.0; t.count[o]];
        for &(ia, ib, ic) in &t.pairs[..t.pair_end[o]] {
            c[ic as usize] += self.c[ia as usize] * rhs.c[ib as usize];
        }
        Jet { nvars: self.nvars, order: o as u8, c }
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.map_coeffs(|x| x * rhs)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.c[0] += rhs;
        self
    }
}

impl Scalar for Jet {
    fn zero() -> Self {
        Jet::constant(0.0)
    }
    fn one() -> Self {
        Jet::constant(1.0)
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        Jet::constant(num as f64 / den as f64)
    }
    fn from_rational(r: &Rational) -> Self {
        Jet::constant(f64::from_rational(r))
    }
    fn recip(&self) -> Self {
        self.inv()
    }
    fn is_exact_zero(&self) -> bool {
        self.c.iter().all(|&x| x == 0.0)
    }
    fn magnitude(&self) -> f64 {
        self.max_abs()
    }
    fn to_f64(&self) -> f64 {
        self.value()
    }
    fn scale(&self, num: i64, den: i64) -> Self {
        let s = num as f64 / den as f64;
        self.map_coeffs(|x| x * s)
    }
}
