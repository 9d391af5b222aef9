//! `f = dv + iλ + f̃` on the flat unit square with `v = 0` on the boundary,
//! `jf̃ = 0` and `δf̃ = 0`, for ranks one and two.
//!
//! `v` lives at the nodes, `λ` and `f̃` at cell centres. `d` is the box
//! gradient of the four corners, `δ_h = −dᵀ` under the grid inner products
//! (both weighted by `h²`), and components are stored in multiplicity-scaled
//! coordinates so that the Euclidean product of coordinates is the tensor
//! inner product.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SymError};
use crate::grid::GridField;
use crate::linalg::{dense_eigenvalues, pcg, smallest_eigenvalue, BandedCholesky, CgStats, Csr};
use crate::metric_ops::{ji_inverse, project_p, trace, Metric};
use crate::symcore::{multiplicity, sym_index, sym_product, SymTensor};

pub const CG_TOLERANCE: f64 = 1e-10;
pub const CG_MAX_ITER: usize = 10_000;

const CORNERS: [[usize; 2]; 4] = [[0, 0], [1, 0], [0, 1], [1, 1]];

fn to_coords(u: &SymTensor<f64>) -> Vec<f64> {
    let idx = sym_index(u.dim(), u.rank());
    u.comps().iter().zip(&idx.multis).map(|(c, t)| c * (multiplicity(t) as f64).sqrt()).collect()
}

fn from_coords(n: usize, m: usize, c: &[f64]) -> SymTensor<f64> {
    let idx = sym_index(n, m);
    let comps = c.iter().zip(&idx.multis).map(|(c, t)| c / (multiplicity(t) as f64).sqrt()).collect();
    SymTensor::from_vec(n, m, comps).expect("component count")
}

fn coord_len(m: usize) -> usize {
    m + 1
}

/// Dense row-major matrix of a linear map on rank-`m` coordinates.
fn coord_matrix(m: usize, f: impl Fn(&SymTensor<f64>) -> SymTensor<f64>) -> (usize, Vec<f64>) {
    let c = coord_len(m);
    let mut cols = Vec::with_capacity(c);
    for k in 0..c {
        let mut e = vec![0.0; c];
        e[k] = 1.0;
        cols.push(to_coords(&f(&from_coords(2, m, &e))));
    }
    let rows = cols[0].len();
    let mut a = vec![0.0; rows * c];
    for (k, col) in cols.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            a[r * c + k] = *v;
        }
    }
    (rows, a)
}

fn matvec(a: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    a.chunks(cols).map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

fn matvec_t(a: &[f64], cols: usize, y: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; cols];
    for (row, yr) in a.chunks(cols).zip(y) {
        for (xk, ak) in x.iter_mut().zip(row) {
            *xk += ak * yr;
        }
    }
    x
}

/// Per-cell stencils for rank `m` data and rank `m − 1` unknowns.
#[derive(Clone, Debug)]
pub struct Stencil {
    pub m: usize,
    pub mesh: usize,
    pub h: f64,
    /// `cf × (4·cv)` box gradient; corner blocks in the order of `CORNERS`
    pub d: Vec<f64>,
    /// `cf × cf` trace-free projector
    pub p: Vec<f64>,
    pub cv: usize,
    pub cf: usize,
}

impl Stencil {
    pub fn new(m: usize, mesh: usize) -> Result<Self> {
        if !(1..=2).contains(&m) {
            return Err(SymError::Unsupported(format!("decomposition is implemented for m = 1, 2, not {m}")));
        }
        if mesh < 3 {
            return Err(SymError::Shape(format!("mesh {mesh} has no interior nodes")));
        }
        let h = 1.0 / (mesh - 1) as f64;
        let (cv, cf) = (coord_len(m - 1), coord_len(m));
        let mut d = vec![0.0; cf * 4 * cv];
        for (k, corner) in CORNERS.iter().enumerate() {
            let grad: Vec<f64> = corner.iter().map(|&s| if s == 1 { 0.5 / h } else { -0.5 / h }).collect();
            let cov = SymTensor::covector(grad);
            let (_, block) = coord_matrix(m - 1, |u| sym_product(&cov, u));
            for r in 0..cf {
                for c in 0..cv {
                    d[r * 4 * cv + k * cv + c] = block[r * cv + c];
                }
            }
        }
        let g = Metric::<f64>::identity(2);
        let (_, p) = coord_matrix(m, |u| project_p(u, &g));
        Ok(Stencil { m, mesh, h, d, p, cv, cf })
    }

    pub fn cells(&self) -> usize {
        self.mesh - 1
    }

    fn node(&self, i: usize, j: usize) -> usize {
        i * self.mesh + j
    }

    fn cell_nodes(&self, ci: usize, cj: usize) -> [usize; 4] {
        CORNERS.map(|[a, b]| self.node(ci + a, cj + b))
    }

    fn is_boundary(&self, node: usize) -> bool {
        let (i, j) = (node / self.mesh, node % self.mesh);
        i == 0 || j == 0 || i + 1 == self.mesh || j + 1 == self.mesh
    }

    /// `d v` at every cell, in coordinates.
    pub fn grad(&self, v: &[f64]) -> Vec<Vec<f64>> {
        let nc = self.cells();
        (0..nc * nc)
            .into_par_iter()
            .map(|c| {
                let nodes = self.cell_nodes(c / nc, c % nc);
                let local: Vec<f64> = nodes.iter().flat_map(|&q| v[q * self.cv..(q + 1) * self.cv].iter().copied()).collect();
                matvec(&self.d, 4 * self.cv, &local)
            })
            .collect()
    }

    /// `dᵀ w` at every node, in coordinates.
    pub fn grad_adjoint(&self, w: &[Vec<f64>]) -> Vec<f64> {
        let (nc, cv) = (self.cells(), self.cv);
        let per_node: Vec<Vec<f64>> = (0..self.mesh * self.mesh)
            .into_par_iter()
            .map(|q| {
                let (i, j) = (q / self.mesh, q % self.mesh);
                let mut acc = vec![0.0; cv];
                for (k, [a, b]) in CORNERS.iter().enumerate() {
                    if i < *a || j < *b || i - a >= nc || j - b >= nc {
                        continue;
                    }
                    let full = matvec_t(&self.d, 4 * cv, &w[(i - a) * nc + (j - b)]);
                    for (s, t) in acc.iter_mut().zip(&full[k * cv..(k + 1) * cv]) {
                        *s += t;
                    }
                }
                acc
            })
            .collect();
        per_node.concat()
    }

    pub fn project(&self, w: &[f64]) -> Vec<f64> {
        matvec(&self.p, self.cf, w)
    }

    /// Four-corner average of a node field, in coordinates.
    pub fn average(&self, f: &GridField) -> Vec<Vec<f64>> {
        let nc = self.cells();
        (0..nc * nc)
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![0.0; self.cf];
                for q in self.cell_nodes(c / nc, c % nc) {
                    for (a, b) in acc.iter_mut().zip(to_coords(&f.values()[q])) {
                        *a += 0.25 * b;
                    }
                }
                acc
            })
            .collect()
    }
}

/// `(δpd)` with Dirichlet identity rows, and the right-hand side `−δ_h p f`
/// (signs flipped so that the matrix is positive).
pub struct BvpSystem {
    pub stencil: Stencil,
    pub matrix: Csr,
    pub rhs: Vec<f64>,
    /// per unknown: false on boundary nodes
    pub interior: Vec<bool>,
    cell_f: Vec<Vec<f64>>,
}

pub fn assemble_bvp(f: &GridField) -> Result<BvpSystem> {
    check_input(f)?;
    let st = Stencil::new(f.rank(), f.extents()[0])?;
    let (mesh, cv) = (st.mesh, st.cv);
    // local K = dᵀ p d, identical for every cell
    let w = 4 * cv;
    let mut pd = vec![0.0; st.cf * w];
    for c in 0..w {
        let col: Vec<f64> = (0..st.cf).map(|r| st.d[r * w + c]).collect();
        for (r, v) in st.project(&col).into_iter().enumerate() {
            pd[r * w + c] = v;
        }
    }
    let mut kloc = vec![0.0; w * w];
    for a in 0..w {
        for b in 0..w {
            kloc[a * w + b] = (0..st.cf).map(|r| st.d[r * w + a] * pd[r * w + b]).sum();
        }
    }
    let rows: Vec<Vec<(usize, f64)>> = (0..mesh * mesh * cv)
        .into_par_iter()
        .map(|row| {
            let (q, comp) = (row / cv, row % cv);
            if st.is_boundary(q) {
                return vec![(row, 1.0)];
            }
            let (i, j) = (q / mesh, q % mesh);
            let mut acc = std::collections::BTreeMap::new();
            for (k, [a, b]) in CORNERS.iter().enumerate() {
                let cell_nodes = st.cell_nodes(i - a, j - b);
                for (l, &other) in cell_nodes.iter().enumerate() {
                    if st.is_boundary(other) {
                        continue;
                    }
                    for c2 in 0..cv {
                        *acc.entry(other * cv + c2).or_insert(0.0) += kloc[(k * cv + comp) * w + l * cv + c2];
                    }
                }
            }
            acc.into_iter().filter(|(_, v)| *v != 0.0).collect()
        })
        .collect();
    let matrix = Csr::from_rows(rows);
    let cell_f = st.average(f);
    let pf: Vec<Vec<f64>> = cell_f.iter().map(|w| st.project(w)).collect();
    let mut rhs = st.grad_adjoint(&pf);
    let interior: Vec<bool> = (0..mesh * mesh * cv).map(|r| !st.is_boundary(r / cv)).collect();
    for (r, ok) in rhs.iter_mut().zip(&interior) {
        if !ok {
            *r = 0.0;
        }
    }
    Ok(BvpSystem { stencil: st, matrix, rhs, interior, cell_f })
}

fn check_input(f: &GridField) -> Result<()> {
    let e = f.extents();
    if f.dim() != 2 || e.len() != 2 || e[0] != e[1] {
        return Err(SymError::Unsupported(format!("decomposition needs an N×N grid in 2D, got {e:?}")));
    }
    if !(1..=2).contains(&f.rank()) {
        return Err(SymError::Unsupported(format!("decomposition is implemented for m = 1, 2, not {}", f.rank())));
    }
    Ok(())
}

/// Values at the centres of an `(N−1)×(N−1)` cell grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CellField {
    pub m: usize,
    pub cells: usize,
    pub values: Vec<SymTensor<f64>>,
}

impl CellField {
    pub fn centre(&self, k: usize) -> [f64; 2] {
        let h = 1.0 / self.cells as f64;
        [((k / self.cells) as f64 + 0.5) * h, ((k % self.cells) as f64 + 0.5) * h]
    }

    pub fn l2_norm(&self) -> f64 {
        let h = 1.0 / self.cells as f64;
        (self.values.iter().map(|v| to_coords(v).iter().map(|c| c * c).sum::<f64>()).sum::<f64>() * h * h).sqrt()
    }

    /// Discrete L² distance to a reference sampled at the cell centres.
    pub fn l2_error(&self, exact: impl Fn(&[f64]) -> SymTensor<f64>) -> f64 {
        let h = 1.0 / self.cells as f64;
        let s: f64 = self
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| to_coords(&(v.clone() - exact(&self.centre(k)))).iter().map(|c| c * c).sum::<f64>())
            .sum();
        (s * h * h).sqrt()
    }
}

pub fn grid_l2_norm(f: &GridField) -> f64 {
    let h = f.spacing(0);
    let s: f64 = f.values().iter().map(|v| to_coords(v).iter().map(|c| c * c).sum::<f64>()).sum();
    (s * h.powi(f.dim() as i32)).sqrt()
}

pub fn grid_l2_error(f: &GridField, exact: impl Fn(&[f64]) -> SymTensor<f64>) -> f64 {
    let h = f.spacing(0);
    let s: f64 = (0..f.len())
        .map(|k| to_coords(&(f.values()[k].clone() - exact(&f.coords(k)))).iter().map(|c| c * c).sum::<f64>())
        .sum();
    (s * h.powi(f.dim() as i32)).sqrt()
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct Residuals {
    /// `‖f − dv − iλ − f̃‖` over cells
    pub reconstruct: f64,
    /// `‖jf̃‖` over cells
    pub trace: f64,
    /// `‖δ_h f̃‖` over interior nodes
    pub divergence: f64,
    /// `max |v|` over boundary nodes
    pub boundary: f64,
    pub tol_reconstruct: f64,
    pub tol_constraint: f64,
}

impl Residuals {
    pub fn pass(&self) -> bool {
        self.reconstruct <= self.tol_reconstruct
            && self.trace <= self.tol_constraint
            && self.divergence <= self.tol_constraint
            && self.boundary == 0.0
    }
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct Norms {
    pub f: f64,
    pub v: f64,
    pub lambda: f64,
    pub f_tilde: f64,
}

#[derive(Clone, Debug)]
pub struct DecompositionResult {
    pub m: usize,
    pub mesh: usize,
    pub h: f64,
    pub v: GridField,
    /// absent for `m = 1`
    pub lambda: Option<CellField>,
    pub f_tilde: CellField,
    pub residuals: Residuals,
    pub norms: Norms,
    pub solver: CgStats,
}

pub fn decompose_field(f: &GridField, tol: f64) -> Result<DecompositionResult> {
    let sys = assemble_bvp(f)?;
    let (x, stats) = pcg(&sys.matrix, &sys.rhs, CG_TOLERANCE, CG_MAX_ITER)?;
    let st = &sys.stencil;
    let (m, mesh, h, cv) = (st.m, st.mesh, st.h, st.cv);
    let mut x = x;
    for (v, ok) in x.iter_mut().zip(&sys.interior) {
        if !ok {
            *v = 0.0;
        }
    }
    let g = Metric::<f64>::identity(2);
    let dv = st.grad(&x);
    let rest: Vec<SymTensor<f64>> = sys
        .cell_f
        .iter()
        .zip(&dv)
        .map(|(fc, d)| from_coords(2, m, &fc.iter().zip(d).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .collect();
    let ft: Vec<SymTensor<f64>> = rest.iter().map(|w| project_p(w, &g)).collect();
    let lam: Option<Vec<SymTensor<f64>>> = (m >= 2).then(|| rest.iter().map(|w| ji_inverse(&trace(w, &g), &g)).collect());
    let cells = st.cells();
    let cellsq = |c: f64| c * h * h;
    let mut rec = 0.0;
    let mut tr = 0.0;
    for k in 0..rest.len() {
        let mut back = ft[k].clone();
        if let Some(l) = &lam {
            back = back + crate::metric_ops::mul_metric(&l[k], &g);
        }
        rec += to_coords(&(rest[k].clone() - back)).iter().map(|c| c * c).sum::<f64>();
        if m >= 2 {
            tr += to_coords(&trace(&ft[k], &g)).iter().map(|c| c * c).sum::<f64>();
        }
    }
    let ft_coords: Vec<Vec<f64>> = ft.iter().map(to_coords).collect();
    let div = st.grad_adjoint(&ft_coords);
    let divn: f64 = div.iter().zip(&sys.interior).filter(|(_, ok)| **ok).map(|(d, _)| d * d).sum();
    let v_nodes: Vec<SymTensor<f64>> = x.chunks(cv).map(|c| from_coords(2, m - 1, c)).collect();
    let v = GridField::new(2, m - 1, vec![mesh, mesh], v_nodes)?;
    let boundary = (0..v.len()).filter(|&k| v.is_boundary(k)).map(|k| v.values()[k].max_abs()).fold(0.0, f64::max);
    let f_tilde = CellField { m, cells, values: ft };
    let lambda = lam.map(|values| CellField { m: m - 2, cells, values });
    let tol_r = (10.0 * h * h).max(tol);
    let residuals = Residuals {
        reconstruct: cellsq(rec).sqrt(),
        trace: cellsq(tr).sqrt(),
        divergence: cellsq(divn).sqrt(),
        boundary,
        tol_reconstruct: tol_r,
        tol_constraint: tol_r,
    };
    let norms = Norms {
        f: grid_l2_norm(f),
        v: grid_l2_norm(&v),
        lambda: lambda.as_ref().map_or(0.0, |l| l.l2_norm()),
        f_tilde: f_tilde.l2_norm(),
    };
    Ok(DecompositionResult { m, mesh, h, v, lambda, f_tilde, residuals, norms, solver: stats })
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SpdReport {
    pub unknowns: usize,
    pub asymmetry: f64,
    pub factorizable: bool,
    pub smallest_eigenvalue: f64,
    pub method: &'static str,
}

/// Symmetry and positivity of the matrix restricted to interior unknowns.
/// Dense eigenvalues for small systems, Cholesky plus inverse iteration
/// otherwise.
pub fn spd_report(sys: &BvpSystem) -> Result<SpdReport> {
    let keep: Vec<usize> = (0..sys.matrix.n).filter(|&r| sys.interior[r]).collect();
    let mut pos = vec![usize::MAX; sys.matrix.n];
    for (k, &r) in keep.iter().enumerate() {
        pos[r] = k;
    }
    let rows = keep
        .iter()
        .map(|&r| sys.matrix.row(r).filter(|(c, _)| pos[*c] != usize::MAX).map(|(c, v)| (pos[c], v)).collect())
        .collect();
    let a = Csr::from_rows(rows);
    let asymmetry = a.max_asymmetry();
    let chol = BandedCholesky::factor(&a);
    let factorizable = chol.is_ok();
    let (smallest, method) = if a.n <= 1200 {
        (dense_eigenvalues(&a)[0], "dense")
    } else {
        match &chol {
            Ok(c) => (smallest_eigenvalue(&a, c, 500), "inverse-iteration"),
            Err(_) => (f64::NAN, "inverse-iteration"),
        }
    };
    Ok(SpdReport { unknowns: a.n, asymmetry, factorizable, smallest_eigenvalue: smallest, method })
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct StabilityRow {
    pub mesh: usize,
    pub v_over_f: f64,
    pub lambda_over_f: f64,
    pub f_tilde_over_f: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    /// largest relative spread `(max − min)/max` of each ratio
    pub spread: f64,
    pub bounded: bool,
}

/// Ratio table across refinements; bounded when each ratio stays within 20%.
pub fn stability_report(results: &[DecompositionResult]) -> Result<StabilityReport> {
    if results.len() < 3 {
        return Err(SymError::Shape(format!("{} refinement levels, need at least 3", results.len())));
    }
    let rows: Vec<StabilityRow> = results
        .iter()
        .map(|r| {
            let ratio = |x: f64| if r.norms.f == 0.0 { 0.0 } else { x / r.norms.f };
            StabilityRow {
                mesh: r.mesh,
                v_over_f: ratio(r.norms.v),
                lambda_over_f: ratio(r.norms.lambda),
                f_tilde_over_f: ratio(r.norms.f_tilde),
            }
        })
        .collect();
    let spread_of = |get: fn(&StabilityRow) -> f64| {
        let (lo, hi) = rows.iter().map(get).fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi == 0.0 {
            0.0
        } else {
            (hi - lo) / hi
        }
    };
    let spread = spread_of(|r| r.v_over_f).max(spread_of(|r| r.lambda_over_f)).max(spread_of(|r| r.f_tilde_over_f));
    let finite = rows.iter().all(|r| r.v_over_f.is_finite() && r.lambda_over_f.is_finite() && r.f_tilde_over_f.is_finite());
    Ok(StabilityReport { rows, spread, bounded: finite && spread <= 0.2 })
}

/// Smooth manufactured pieces on the unit square: `v₀` vanishing on the
/// boundary, `λ₀`, and `f̃₀` trace- and divergence-free.
pub mod manufactured {
    use super::*;
    use std::f64::consts::PI;

    pub fn v0(x: &[f64]) -> SymTensor<f64> {
        let (a, b) = (x[0], x[1]);
        SymTensor::covector(vec![(PI * a).sin() * (PI * b).sin(), a * (1.0 - a) * (2.0 * PI * b).sin()])
    }

    /// Symmetrised gradient of `v0`.
    pub fn dv0(x: &[f64]) -> SymTensor<f64> {
        let (a, b) = (x[0], x[1]);
        let v1x = PI * (PI * a).cos() * (PI * b).sin();
        let v1y = PI * (PI * a).sin() * (PI * b).cos();
        let v2x = (1.0 - 2.0 * a) * (2.0 * PI * b).sin();
        let v2y = a * (1.0 - a) * 2.0 * PI * (2.0 * PI * b).cos();
        SymTensor::from_vec(2, 2, vec![v1x, 0.5 * (v1y + v2x), v2y]).expect("rank 2")
    }

    pub fn lambda0(x: &[f64]) -> SymTensor<f64> {
        SymTensor::scalar((x[0] + 2.0 * x[1]).cos(), 2)
    }

    /// `[[a, b], [b, −a]]` with `a − ib = e^z`.
    pub fn f_tilde0(x: &[f64]) -> SymTensor<f64> {
        let (a, b) = (x[0].exp() * x[1].cos(), -x[0].exp() * x[1].sin());
        SymTensor::from_vec(2, 2, vec![a, b, -a]).expect("rank 2")
    }

    pub fn f(x: &[f64]) -> SymTensor<f64> {
        let l = lambda0(x).comps()[0];
        let g = SymTensor::from_vec(2, 2, vec![l, 0.0, l]).expect("rank 2");
        dv0(x) + g + f_tilde0(x)
    }

    /// Scalar potential for rank one: `φ₀ = sin πx · sin 2πy`.
    pub fn phi0(x: &[f64]) -> SymTensor<f64> {
        SymTensor::scalar((PI * x[0]).sin() * (2.0 * PI * x[1]).sin(), 2)
    }

    /// `dφ₀ + (−∂_y ψ, ∂_x ψ)` with `ψ = e^x cos y`.
    pub fn f_rank1(x: &[f64]) -> SymTensor<f64> {
        let dphi = [
            PI * (PI * x[0]).cos() * (2.0 * PI * x[1]).sin(),
            2.0 * PI * (PI * x[0]).sin() * (2.0 * PI * x[1]).cos(),
        ];
        let rot = rot_rank1(x);
        SymTensor::covector(vec![dphi[0] + rot.comps()[0], dphi[1] + rot.comps()[1]])
    }

    pub fn rot_rank1(x: &[f64]) -> SymTensor<f64> {
        SymTensor::covector(vec![x[0].exp() * x[1].sin(), x[0].exp() * x[1].cos()])
    }
}

/// Observed convergence orders `log2(e_k / e_{k+1})` for successive halvings.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}
