//! Dense symmetric tensors stored over sorted multi-indices.
//!
//! Indices are 0-based in the API (`0..n`). A rank-`m` symmetric tensor keeps
//! one component per nondecreasing multi-index, in lexicographic order.

use std::collections::HashMap;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, OnceLock, RwLock};

use crate::error::{Result, SymError};
use crate::metric_ops::Metric;
use crate::scalar::Scalar;

/// `C(a, b)` as u128; zero when `b > a`.
pub fn binomial(a: usize, b: usize) -> u128 {
    if b > a {
        return 0;
    }
    let b = b.min(a - b);
    let mut r: u128 = 1;
    for k in 0..b {
        r = r * (a - k) as u128 / (k + 1) as u128;
    }
    r
}

pub fn factorial(k: usize) -> u128 {
    (1..=k as u128).product()
}

/// Number of independent components of a rank-`m` symmetric tensor in dimension `n`.
pub fn dim_sym(n: i64, m: i64) -> Result<usize> {
    if n < 1 {
        return Err(SymError::Shape(format!("dimension must be at least 1, got {n}")));
    }
    if m < 0 {
        return Err(SymError::Shape(format!("rank must be nonnegative, got {m}")));
    }
    Ok(sym_len(n as usize, m as usize))
}

pub(crate) fn sym_len(n: usize, m: usize) -> usize {
    binomial(n + m - 1, m) as usize
}

/// Multinomial count of distinct arrangements of a sorted multi-index.
pub fn multiplicity(sorted: &[u8]) -> u128 {
    let mut r = factorial(sorted.len());
    let mut run = 1usize;
    for k in 1..=sorted.len() {
        if k < sorted.len() && sorted[k] == sorted[k - 1] {
            run += 1;
        } else {
            r /= factorial(run);
            run = 1;
        }
    }
    r
}

/// Enumeration of the sorted multi-indices of one (n, m) pair.
#[derive(Debug)]
pub struct SymIndex {
    pub n: usize,
    pub m: usize,
    pub multis: Vec<Vec<u8>>,
    pub mult: Vec<f64>,
    // binom[a][b] = C(a, b)
    binom: Vec<Vec<usize>>,
}

impl SymIndex {
    fn build(n: usize, m: usize) -> SymIndex {
        let mut multis = Vec::with_capacity(sym_len(n, m));
        let mut cur = vec![0u8; m];
        fn rec(n: usize, pos: usize, lo: u8, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
            if pos == cur.len() {
                out.push(cur.clone());
                return;
            }
            for v in lo..n as u8 {
                cur[pos] = v;
                rec(n, pos + 1, v, cur, out);
            }
        }
        rec(n, 0, 0, &mut cur, &mut multis);
        let mult = multis.iter().map(|t| multiplicity(t) as f64).collect();
        let binom = (0..=n + m)
            .map(|a| (0..=m).map(|b| binomial(a, b) as usize).collect())
            .collect();
        SymIndex { n, m, multis, mult, binom }
    }

    /// Position of a sorted multi-index.
    pub fn position(&self, sorted: &[u8]) -> usize {
        let (n, m) = (self.n, self.m);
        let mut rank = 0;
        let mut prev = 0usize;
        for (t, &it) in sorted.iter().enumerate() {
            let rest = m - t - 1;
            for v in prev..it as usize {
                // tuples continuing with v, then `rest` entries from [v, n)
                rank += self.binom[n - v + rest - 1][rest];
            }
            prev = it as usize;
        }
        rank
    }

    /// Position of an arbitrary (unsorted) index tuple.
    pub fn position_unsorted(&self, idx: &[u8]) -> usize {
        let mut s: Vec<u8> = idx.to_vec();
        s.sort_unstable();
        self.position(&s)
    }
}

/// Shared, cached index tables.
pub fn sym_index(n: usize, m: usize) -> Arc<SymIndex> {
    static CACHE: OnceLock<RwLock<HashMap<(usize, usize), Arc<SymIndex>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(ix) = cache.read().unwrap().get(&(n, m)) {
        return ix.clone();
    }
    let ix = Arc::new(SymIndex::build(n, m));
    cache.write().unwrap().entry((n, m)).or_insert(ix).clone()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymTensor<S> {
    n: usize,
    m: usize,
    comps: Vec<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor<S> {
    n: usize,
    m: usize,
    comps: Vec<S>,
}

impl<S: Scalar> SymTensor<S> {
    pub fn zeros(n: usize, m: usize) -> Self {
        assert!(n >= 1, "dimension must be at least 1");
        SymTensor { n, m, comps: vec![S::zero(); sym_len(n, m)] }
    }

    pub fn scalar(v: S, n: usize) -> Self {
        SymTensor { n, m: 0, comps: vec![v] }
    }

    pub fn from_vec(n: usize, m: usize, comps: Vec<S>) -> Result<Self> {
        if n < 1 || comps.len() != sym_len(n, m) {
            return Err(SymError::Shape(format!(
                "expected {} components for n={n}, m={m}, got {}",
                if n >= 1 { sym_len(n, m) } else { 0 },
                comps.len()
            )));
        }
        Ok(SymTensor { n, m, comps })
    }

    pub fn from_fn(n: usize, m: usize, mut f: impl FnMut(&[u8]) -> S) -> Self {
        let ix = sym_index(n, m);
        SymTensor { n, m, comps: ix.multis.iter().map(|t| f(t)).collect() }
    }

    /// Covector with the given components.
    pub fn covector(c: Vec<S>) -> Self {
        let n = c.len();
        SymTensor { n, m: 1, comps: c }
    }

    /// Basis element `e_{i_1} ... e_{i_m}` in the sorted multi-index sense
    /// (component 1 at the sorted index, 0 elsewhere).
    pub fn unit(n: usize, idx: &[u8]) -> Self {
        let mut t = Self::zeros(n, idx.len());
        let p = sym_index(n, idx.len()).position_unsorted(idx);
        t.comps[p] = S::one();
        t
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn rank(&self) -> usize {
        self.m
    }
    pub fn comps(&self) -> &[S] {
        &self.comps
    }
    pub fn comps_mut(&mut self) -> &mut [S] {
        &mut self.comps
    }
    pub fn into_comps(self) -> Vec<S> {
        self.comps
    }
    pub fn index(&self) -> Arc<SymIndex> {
        sym_index(self.n, self.m)
    }

    /// Component at an index tuple in any order.
    pub fn get(&self, idx: &[u8]) -> &S {
        &self.comps[self.index().position_unsorted(idx)]
    }

    pub fn set(&mut self, idx: &[u8], v: S) {
        let p = self.index().position_unsorted(idx);
        self.comps[p] = v;
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> SymTensor<T> {
        SymTensor { n: self.n, m: self.m, comps: self.comps.iter().map(f).collect() }
    }

    pub fn scale(&self, s: &S) -> Self {
        self.map(|x| x.clone() * s.clone())
    }

    pub fn scale_ratio(&self, num: i64, den: i64) -> Self {
        self.map(|x| x.scale(num, den))
    }

    /// Largest component magnitude.
    pub fn max_abs(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, x| m.max(x.magnitude()))
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(|x| x.is_exact_zero())
    }

    pub fn to_raw(&self) -> RawTensor<S> {
        let ix = self.index();
        let total = self.n.pow(self.m as u32);
        let mut comps = Vec::with_capacity(total);
        let mut tup = vec![0u8; self.m];
        for flat in 0..total {
            decode(flat, self.n, &mut tup);
            comps.push(self.comps[ix.position_unsorted(&tup)].clone());
        }
        RawTensor { n: self.n, m: self.m, comps }
    }

    fn check_same(&self, o: &Self, what: &str) {
        assert!(self.n == o.n && self.m == o.m, "{what}: shape ({},{}) vs ({},{})", self.n, self.m, o.n, o.m);
    }
}

impl SymTensor<f64> {
    /// Euclidean (multiplicity-weighted) coordinates, orthonormal for the
    /// identity metric.
    pub fn to_orthonormal(&self) -> Vec<f64> {
        let ix = self.index();
        self.comps.iter().zip(&ix.mult).map(|(x, c)| x * c.sqrt()).collect()
    }

    pub fn from_orthonormal(n: usize, m: usize, y: &[f64]) -> Self {
        let ix = sym_index(n, m);
        SymTensor { n, m, comps: y.iter().zip(&ix.mult).map(|(x, c)| x / c.sqrt()).collect() }
    }
}

fn decode(mut flat: usize, n: usize, out: &mut [u8]) {
    for s in (0..out.len()).rev() {
        out[s] = (flat % n) as u8;
        flat /= n;
    }
}

fn encode(tup: &[u8], n: usize) -> usize {
    tup.iter().fold(0, |a, &i| a * n + i as usize)
}

impl<S: Scalar> Add for SymTensor<S> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.check_same(&rhs, "add");
        for (a, b) in self.comps.iter_mut().zip(rhs.comps) {
            *a = a.clone() + b;
        }
        self
    }
}

impl<S: Scalar> Sub for SymTensor<S> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self.check_same(&rhs, "sub");
        for (a, b) in self.comps.iter_mut().zip(rhs.comps) {
            *a = a.clone() - b;
        }
        self
    }
}

impl<S: Scalar> Neg for SymTensor<S> {
    type Output = Self;
    fn neg(self) -> Self {
        self.map(|x| -x.clone())
    }
}

impl<S: Scalar> Mul<S> for SymTensor<S> {
    type Output = Self;
    fn mul(self, rhs: S) -> Self {
        self.scale(&rhs)
    }
}

impl<S: Scalar> RawTensor<S> {
    pub fn zeros(n: usize, m: usize) -> Self {
        RawTensor { n, m, comps: vec![S::zero(); n.pow(m as u32)] }
    }

    pub fn from_vec(n: usize, m: usize, comps: Vec<S>) -> Result<Self> {
        if n < 1 || comps.len() != n.pow(m as u32) {
            return Err(SymError::Shape(format!("expected {}^{} raw components, got {}", n, m, comps.len())));
        }
        Ok(RawTensor { n, m, comps })
    }

    pub fn from_fn(n: usize, m: usize, mut f: impl FnMut(&[u8]) -> S) -> Self {
        let total = n.pow(m as u32);
        let mut tup = vec![0u8; m];
        let comps = (0..total)
            .map(|flat| {
                decode(flat, n, &mut tup);
                f(&tup)
            })
            .collect();
        RawTensor { n, m, comps }
    }

    /// Tensor product of covectors / tensors: `(a ⊗ b)_{IJ} = a_I b_J`.
    pub fn tensor(a: &RawTensor<S>, b: &RawTensor<S>) -> Self {
        assert_eq!(a.n, b.n);
        let mut comps = Vec::with_capacity(a.comps.len() * b.comps.len());
        for x in &a.comps {
            for y in &b.comps {
                comps.push(x.clone() * y.clone());
            }
        }
        RawTensor { n: a.n, m: a.m + b.m, comps }
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn rank(&self) -> usize {
        self.m
    }
    pub fn comps(&self) -> &[S] {
        &self.comps
    }
    pub fn get(&self, idx: &[u8]) -> &S {
        &self.comps[encode(idx, self.n)]
    }
    pub fn set(&mut self, idx: &[u8], v: S) {
        let k = encode(idx, self.n);
        self.comps[k] = v;
    }
    pub fn max_abs(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, x| m.max(x.magnitude()))
    }

    /// Reorders slots: `out_j = self_i` where `i[perm[s]] = j[s]`, i.e. slot
    /// `s` of the result is slot `perm[s]` of `self`.
    pub fn permute_slots(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.m);
        let mut src = vec![0u8; self.m];
        RawTensor::from_fn(self.n, self.m, |j| {
            for s in 0..perm.len() {
                src[perm[s]] = j[s];
            }
            self.get(&src).clone()
        })
    }

    pub fn sub(&self, o: &Self) -> Self {
        RawTensor {
            n: self.n,
            m: self.m,
            comps: self.comps.iter().zip(&o.comps).map(|(a, b)| a.clone() - b.clone()).collect(),
        }
    }
}

/// Full symmetrization.
pub fn symmetrize<S: Scalar>(t: &RawTensor<S>) -> SymTensor<S> {
    let ix = sym_index(t.n, t.m);
    let mut comps = vec![S::zero(); ix.multis.len()];
    let mut tup = vec![0u8; t.m];
    for (flat, v) in t.comps.iter().enumerate() {
        decode(flat, t.n, &mut tup);
        tup.sort_unstable();
        let p = ix.position(&tup);
        comps[p] = comps[p].clone() + v.clone();
    }
    for (c, t) in comps.iter_mut().zip(&ix.multis) {
        *c = c.clone() * S::from_ratio(1, multiplicity(t) as i64);
    }
    SymTensor { n: t.n, m: t.m, comps }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Symmetrization over the given slot positions (0-based) only.
pub fn partial_symmetrize<S: Scalar>(t: &RawTensor<S>, group: &[usize]) -> Result<RawTensor<S>> {
    let mut g: Vec<usize> = group.to_vec();
    g.sort_unstable();
    g.dedup();
    if let Some(&bad) = g.iter().find(|&&s| s >= t.m) {
        return Err(SymError::Shape(format!("slot {bad} out of range for rank {}", t.m)));
    }
    if g.len() <= 1 {
        return Ok(t.clone());
    }
    let perms = permutations(g.len());
    let inv = S::from_ratio(1, perms.len() as i64);
    let mut src = vec![0u8; t.m];
    Ok(RawTensor::from_fn(t.n, t.m, |j| {
        let mut acc = S::zero();
        for p in &perms {
            src.copy_from_slice(j);
            for (a, &slot) in g.iter().enumerate() {
                src[slot] = j[g[p[a]]];
            }
            acc = acc + t.get(&src).clone();
        }
        acc * inv.clone()
    }))
}

/// Symmetric product `uv = σ(u ⊗ v)`.
pub fn sym_product<S: Scalar>(u: &SymTensor<S>, v: &SymTensor<S>) -> SymTensor<S> {
    assert_eq!(u.n, v.n, "sym_product: dimension mismatch");
    let n = u.n;
    let (iu, iv, iw) = (u.index(), v.index(), sym_index(n, u.m + v.m));
    let mut acc: Vec<S> = vec![S::zero(); iw.multis.len()];
    let mut merged = vec![0u8; u.m + v.m];
    let mut touched = vec![false; iw.multis.len()];
    for (a, ua) in iu.multis.iter().zip(&u.comps) {
        if ua.is_exact_zero() {
            continue;
        }
        for (b, vb) in iv.multis.iter().zip(&v.comps) {
            if vb.is_exact_zero() {
                continue;
            }
            merge_sorted(a, b, &mut merged);
            let p = iw.position(&merged);
            let w = multiplicity(a) as i64 * multiplicity(b) as i64;
            let term = (ua.clone() * vb.clone()).scale(w, 1);
            acc[p] = if touched[p] { acc[p].clone() + term } else { term };
            touched[p] = true;
        }
    }
    for (c, t) in acc.iter_mut().zip(&iw.multis) {
        *c = c.scale(1, multiplicity(t) as i64);
    }
    SymTensor { n, m: u.m + v.m, comps: acc }
}

pub(crate) fn merge_sorted(a: &[u8], b: &[u8], out: &mut [u8]) {
    let (mut i, mut j) = (0, 0);
    for o in out.iter_mut() {
        if j >= b.len() || (i < a.len() && a[i] <= b[j]) {
            *o = a[i];
            i += 1;
        } else {
            *o = b[j];
            j += 1;
        }
    }
}

/// Applies the matrix `a` (row-major n×n) to every slot:
/// `out_{i_1..i_m} = a_{i_1 j_1} ... a_{i_m j_m} t_{j_1..j_m}`.
pub fn transform_all_slots<S: Scalar>(t: &SymTensor<S>, a: &[S]) -> SymTensor<S> {
    let n = t.n;
    assert_eq!(a.len(), n * n);
    if t.m == 0 {
        return t.clone();
    }
    let mut raw = t.to_raw().comps;
    let total = raw.len();
    for s in 0..t.m {
        let stride = n.pow((t.m - 1 - s) as u32);
        let mut next = vec![S::zero(); total];
        for (flat, slot) in next.iter_mut().enumerate() {
            let i = (flat / stride) % n;
            let base = flat - i * stride;
            let mut acc = S::zero();
            for j in 0..n {
                acc = acc + a[i * n + j].clone() * raw[base + j * stride].clone();
            }
            *slot = acc;
        }
        raw = next;
    }
    let ix = t.index();
    let comps = ix.multis.iter().map(|tup| raw[encode(tup, n)].clone()).collect();
    SymTensor { n, m: t.m, comps }
}

/// Pointwise inner product `u_{i..} v^{i..}` with indices raised by `g`.
pub fn inner<S: Scalar>(u: &SymTensor<S>, v: &SymTensor<S>, g: &Metric<S>) -> Result<S> {
    if u.n != v.n || u.m != v.m || u.n != g.dim() {
        return Err(SymError::DimMismatch(format!(
            "inner of (n={}, m={}) and (n={}, m={}) under metric of dim {}",
            u.n,
            u.m,
            v.n,
            v.m,
            g.dim()
        )));
    }
    let raised;
    let w = if g.is_identity() {
        v
    } else {
        raised = transform_all_slots(v, g.ginv());
        &raised
    };
    let ix = u.index();
    let mut acc = S::zero();
    for ((a, b), t) in u.comps.iter().zip(&w.comps).zip(&ix.multis) {
        acc = acc + (a.clone() * b.clone()).scale(multiplicity(t) as i64, 1);
    }
    Ok(acc)
}

/// Solves `σ(i_1..i_m j_1..j_p) u = f` for `u` with symmetry
/// `(i_1..i_m)(j_1..j_p k_1..k_m)` given `f` of rank `2m+p` symmetric in the
/// first `m+p` and in the last `m` slots.
pub fn invert_partial_symmetrization<S: Scalar>(f: &RawTensor<S>, m: usize, p: usize) -> Result<RawTensor<S>> {
    if m < 1 || p < 1 || f.m != 2 * m + p {
        return Err(SymError::Shape(format!("need rank 2m+p with m,p >= 1, got rank {} for m={m}, p={p}", f.m)));
    }
    let first: Vec<usize> = (0..m + p).collect();
    let last: Vec<usize> = (m + p..2 * m + p).collect();
    let sym_f = partial_symmetrize(&partial_symmetrize(f, &first)?, &last)?;
    let scale = f.max_abs().max(f64::MIN_POSITIVE);
    let defect = f.sub(&sym_f).max_abs() / scale;
    if defect > 1e-9 {
        return Err(SymError::Symmetry(defect));
    }
    let mut acc = RawTensor::<S>::zeros(f.n, f.m);
    for l in 0..=m {
        // u-slot s is f-slot perm[s]: I[..m-l] -> f[..m-l], J -> f[m-l..m-l+p],
        // K -> f[m-l+p..2m-l+p], I[m-l..] -> f[2m-l+p..]
        let mut perm = vec![0usize; f.m];
        for (s, slot) in perm.iter_mut().enumerate() {
            *slot = if s < m - l {
                s
            } else if s < m {
                2 * m + p - l + (s - (m - l))
            } else {
                s - l
            };
        }
        let term = f.permute_slots(&perm);
        let coef = binomial(p + l - 1, l) as i64 * binomial(m + p, m - l) as i64;
        let coef = if l % 2 == 1 { -coef } else { coef };
        for (a, b) in acc.comps.iter_mut().zip(term.comps) {
            *a = a.clone() + b.scale(coef, 1);
        }
    }
    let is: Vec<usize> = (0..m).collect();
    let jk: Vec<usize> = (m..2 * m + p).collect();
    partial_symmetrize(&partial_symmetrize(&acc, &is)?, &jk)
}
