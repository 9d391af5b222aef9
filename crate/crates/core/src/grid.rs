//! Tensor fields sampled on a uniform grid over the unit box, and the `.tf`
//! text format.

use std::fmt::Write as _;

use crate::error::{Result, SymError};
use crate::geom::TensorField;
use crate::jet::Jet;
use crate::symcore::{sym_len, SymTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    n: usize,
    m: usize,
    extents: Vec<usize>,
    values: Vec<SymTensor<f64>>,
}

impl GridField {
    /// Nodes are stored row-major, the last axis fastest.
    pub fn new(n: usize, m: usize, extents: Vec<usize>, values: Vec<SymTensor<f64>>) -> Result<Self> {
        if extents.len() != n || extents.iter().any(|&e| e < 2) {
            return Err(SymError::Shape(format!("grid {extents:?} for a {n}-dimensional field")));
        }
        let count: usize = extents.iter().product();
        if values.len() != count {
            return Err(SymError::Shape(format!("{} node values for {count} nodes", values.len())));
        }
        if let Some(bad) = values.iter().find(|v| v.dim() != n || v.rank() != m) {
            return Err(SymError::Shape(format!("node value of dim {} rank {}", bad.dim(), bad.rank())));
        }
        Ok(GridField { n, m, extents, values })
    }

    pub fn sample(n: usize, m: usize, extents: Vec<usize>, f: impl Fn(&[f64]) -> SymTensor<f64>) -> Result<Self> {
        let count: usize = extents.iter().product();
        let mut values = Vec::with_capacity(count);
        let mut probe = GridField { n, m, extents: extents.clone(), values: Vec::new() };
        for k in 0..count {
            values.push(f(&probe.coords(k)));
        }
        probe.values = values;
        GridField::new(n, m, extents, probe.values)
    }

    pub fn square(m: usize, mesh: usize, f: impl Fn(&[f64]) -> SymTensor<f64>) -> Result<Self> {
        Self::sample(2, m, vec![mesh, mesh], f)
    }

    pub fn from_field(field: &dyn TensorField, extents: Vec<usize>) -> Result<Self> {
        let (n, m) = (field.dim(), field.rank());
        let count: usize = extents.iter().product();
        let probe = GridField { n, m, extents: extents.clone(), values: Vec::new() };
        let values = (0..count).map(|k| field.eval(&probe.coords(k))).collect::<Result<Vec<_>>>()?;
        GridField::new(n, m, extents, values)
    }

    pub fn rank(&self) -> usize {
        self.m
    }
    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn extents(&self) -> &[usize] {
        &self.extents
    }
    pub fn values(&self) -> &[SymTensor<f64>] {
        &self.values
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        1.0 / (self.extents[axis] - 1) as f64
    }

    pub fn multi(&self, mut k: usize) -> Vec<usize> {
        let mut idx = vec![0; self.n];
        for a in (0..self.n).rev() {
            idx[a] = k % self.extents[a];
            k /= self.extents[a];
        }
        idx
    }

    pub fn linear(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.extents).fold(0, |acc, (&i, &e)| acc * e + i)
    }

    pub fn coords(&self, k: usize) -> Vec<f64> {
        self.multi(k).iter().enumerate().map(|(a, &i)| i as f64 * self.spacing(a)).collect()
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        self.multi(k).iter().zip(&self.extents).any(|(&i, &e)| i == 0 || i + 1 == e)
    }

    pub fn at(&self, idx: &[usize]) -> &SymTensor<f64> {
        &self.values[self.linear(idx)]
    }

    /// Node index of `x` if it lies on the grid to rounding.
    fn node_of(&self, x: &[f64]) -> Option<Vec<usize>> {
        let mut idx = Vec::with_capacity(self.n);
        for (a, &xa) in x.iter().enumerate() {
            let t = xa / self.spacing(a);
            let r = t.round();
            if (t - r).abs() > 1e-9 || r < 0.0 || r as usize >= self.extents[a] {
                return None;
            }
            idx.push(r as usize);
        }
        Some(idx)
    }

    /// Multilinear interpolation.
    pub fn interpolate(&self, x: &[f64]) -> Result<SymTensor<f64>> {
        if x.len() != self.n || x.iter().any(|v| !(-1e-12..=1.0 + 1e-12).contains(v)) {
            return Err(SymError::OutsideDomain(x.to_vec()));
        }
        let mut base = Vec::with_capacity(self.n);
        let mut frac = Vec::with_capacity(self.n);
        for (a, &xa) in x.iter().enumerate() {
            let t = (xa / self.spacing(a)).clamp(0.0, (self.extents[a] - 1) as f64);
            let i = (t.floor() as usize).min(self.extents[a] - 2);
            base.push(i);
            frac.push(t - i as f64);
        }
        let mut acc = SymTensor::zeros(self.n, self.m);
        for corner in 0..(1usize << self.n) {
            let mut w = 1.0;
            let mut idx = base.clone();
            for a in 0..self.n {
                if corner >> a & 1 == 1 {
                    idx[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc = acc + self.at(&idx).scale(&w);
            }
        }
        Ok(acc)
    }

    pub fn to_tf(&self) -> String {
        let mut s = String::from("symten v1\n");
        let grid: Vec<String> = self.extents.iter().map(|e| e.to_string()).collect();
        let _ = writeln!(s, "n={} m={} grid={}", self.n, self.m, grid.join("x"));
        for v in &self.values {
            let row: Vec<String> = v.comps().iter().map(|c| format!("{c:?}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn from_tf(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let magic = lines.next().ok_or_else(|| SymError::Parse("empty file".into()))?;
        if magic.trim() != "symten v1" {
            return Err(SymError::Parse(format!("bad header line {magic:?}")));
        }
        let head = lines.next().ok_or_else(|| SymError::Parse("missing shape line".into()))?;
        let (mut n, mut m, mut extents) = (None, None, None);
        for tok in head.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| SymError::Parse(format!("bad token {tok:?}")))?;
            let int = |v: &str| v.parse::<usize>().map_err(|_| SymError::Parse(format!("bad integer {v:?}")));
            match k {
                "n" => n = Some(int(v)?),
                "m" => m = Some(int(v)?),
                "grid" => extents = Some(v.split('x').map(int).collect::<Result<Vec<_>>>()?),
                _ => return Err(SymError::Parse(format!("unknown key {k:?}"))),
            }
        }
        let (n, m, extents) = match (n, m, extents) {
            (Some(n), Some(m), Some(e)) => (n, m, e),
            _ => return Err(SymError::Parse("shape line needs n, m and grid".into())),
        };
        if !(1..=6).contains(&n) || !(2..=3).contains(&extents.len()) {
            return Err(SymError::Parse(format!("unsupported n={n} with grid {extents:?}")));
        }
        let width = sym_len(n, m);
        let mut values = Vec::new();
        for (row, line) in lines.enumerate() {
            let comps = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| SymError::Parse(format!("row {row}: bad number {t:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if comps.len() != width {
                return Err(SymError::Parse(format!("row {row}: {} values, expected {width}", comps.len())));
            }
            if comps.iter().any(|c| !c.is_finite()) {
                return Err(SymError::Parse(format!("row {row}: non-finite value")));
            }
            values.push(SymTensor::from_vec(n, m, comps)?);
        }
        if extents.len() != n {
            return Err(SymError::Parse(format!("grid of {} axes for n={n}", extents.len())));
        }
        GridField::new(n, m, extents, values).map_err(|e| SymError::Parse(e.to_string()))
    }
}

impl TensorField for GridField {
    fn dim(&self) -> usize {
        self.n
    }
    fn rank(&self) -> usize {
        self.m
    }

    /// Order 0 interpolates; order 1 uses central differences at interior nodes.
    fn jet(&self, x0: &[f64], order: usize) -> Result<SymTensor<Jet>> {
        match order {
            0 => Ok(self.interpolate(x0)?.map(|v| Jet::from_terms(self.n, 0, &[(vec![0; self.n], *v)]))),
            1 => {
                let idx = self.node_of(x0).ok_or_else(|| SymError::Unsupported("derivatives only at grid nodes".into()))?;
                if idx.iter().zip(&self.extents).any(|(&i, &e)| i == 0 || i + 1 == e) {
                    return Err(SymError::Unsupported("boundary stencil unavailable".into()));
                }
                let centre = self.at(&idx);
                let mut grads = Vec::with_capacity(self.n);
                for a in 0..self.n {
                    let (mut up, mut dn) = (idx.clone(), idx.clone());
                    up[a] += 1;
                    dn[a] -= 1;
                    grads.push((self.at(&up).clone() - self.at(&dn).clone()).scale(&(0.5 / self.spacing(a))));
                }
                let comps = (0..centre.comps().len())
                    .map(|c| {
                        let mut terms = vec![(vec![0u8; self.n], centre.comps()[c])];
                        for (a, g) in grads.iter().enumerate() {
                            let mut e = vec![0u8; self.n];
                            e[a] = 1;
                            terms.push((e, g.comps()[c]));
                        }
                        Jet::from_terms(self.n, 1, &terms)
                    })
                    .collect();
                SymTensor::from_vec(self.n, self.m, comps)
            }
            _ => Err(SymError::JetOrder { need: order, have: 1 }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{nabla, EuclideanChart};

    fn sample() -> GridField {
        GridField::square(2, 5, |x| SymTensor::from_vec(2, 2, vec![x[0], x[0] * x[1], 1.0 - x[1] / 3.0]).unwrap()).unwrap()
    }

    #[test]
    fn indexing() {
        let g = sample();
        assert_eq!(g.len(), 25);
        assert_eq!(g.multi(7), vec![1, 2]);
        assert_eq!(g.linear(&[1, 2]), 7);
        assert_eq!(g.coords(7), vec![0.25, 0.5]);
        assert!(g.is_boundary(0) && g.is_boundary(4) && !g.is_boundary(6));
    }

    #[test]
    fn tf_round_trip() {
        let g = sample();
        let text = g.to_tf();
        assert!(text.starts_with("symten v1\nn=2 m=2 grid=5x5\n"));
        assert_eq!(GridField::from_tf(&text).unwrap(), g);
    }

    #[test]
    fn tf_errors() {
        assert!(GridField::from_tf("").is_err());
        assert!(GridField::from_tf("symten v2\nn=2 m=0 grid=2x2\n0\n0\n0\n0\n").is_err());
        assert!(GridField::from_tf("symten v1\nn=2 m=0 grid=2x2\n0\n0\n0\n").is_err());
        assert!(GridField::from_tf("symten v1\nn=2 m=0 grid=2x2\n0\n0\n0\nx\n").is_err());
        assert!(GridField::from_tf("symten v1\nn=2 m=1 grid=2x2\n0\n0\n0\n0\n").is_err());
        assert!(GridField::from_tf("symten v1\nn=2 m=0 grid=2x2\n0\n0\n0\n0.5\n").is_ok());
        let g3 = GridField::from_tf("symten v1\nn=3 m=0 grid=2x2x2\n1\n2\n3\n4\n5\n6\n7\n8\n").unwrap();
        assert_eq!(g3.at(&[1, 0, 1]).comps(), &[6.0]);
    }

    #[test]
    fn interpolation_is_exact_for_bilinear() {
        let g = sample();
        let v = g.interpolate(&[0.3, 0.7]).unwrap();
        assert!((v.comps()[1] - 0.21).abs() < 1e-15);
        assert!(g.interpolate(&[1.2, 0.0]).is_err());
    }

    #[test]
    fn nabla_on_grid() {
        let g = sample();
        let chart = EuclideanChart::unit_cube(2);
        let t = nabla(&g, &chart, &[0.5, 0.25]).unwrap();
        // ∂_x of the 12 component is y
        assert!((t.get(&[0, 0, 1]) - 0.25).abs() < 1e-14);
        match nabla(&g, &chart, &[0.0, 0.25]) {
            Err(SymError::Unsupported(msg)) => assert_eq!(msg, "boundary stencil unavailable"),
            other => panic!("{other:?}"),
        }
    }
}
