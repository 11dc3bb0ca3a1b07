//! Dense brute-force oracles, independent of the sparse production paths:
//! closed-form local matrices assembled into dense matrices, dense LU saddle
//! solves, and a high-order quadrature load.
#![allow(dead_code)] // each test binary uses its own subset

use mdlod::assemble::{Coefficient, CoefficientSet};
use mdlod::dof::DofMap;
use mdlod::mesh::{CoarseTopology, MeshPair};
use nalgebra::{DMatrix, DVector};

pub fn coefficient_at(c: &Coefficient, element: usize, mid: [f64; 2]) -> f64 {
    match c {
        Coefficient::Constant(v) => *v,
        Coefficient::PerElement(v) => v[element],
        Coefficient::Analytic(f) => f(mid[0], mid[1]),
    }
}

/// Closed-form bilinear stiffness on a square (unit coefficient): diagonal
/// 2/3, edge neighbors -1/6, diagonal neighbors -1/3.
const Q1_STIFFNESS: [[f64; 4]; 4] = [
    [2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0],
    [-1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0],
    [-1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0],
    [-1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0],
];

/// Dense assembly of the full coupled form over free DOFs by nested loops.
pub fn dense_operator(dofs: &DofMap, mesh: &MeshPair, coefs: &CoefficientSet) -> DMatrix<f64> {
    let n = dofs.n_free();
    let mut a = DMatrix::zeros(n, n);
    let h = mesh.h;
    for c in 0..mesh.n_cells() {
        let val = coefficient_at(&coefs.a0, c, mesh.cell_center(c));
        let dof = dofs.cell_dofs[c];
        for i in 0..4 {
            for j in 0..4 {
                if let (Some(fi), Some(fj)) = (dofs.free_index[dof[i]], dofs.free_index[dof[j]]) {
                    a[(fi, fj)] += val * Q1_STIFFNESS[i][j];
                }
            }
        }
    }
    for (e, el) in mesh.ifaces.iter().enumerate() {
        let mid = mesh.iface_midpoint(e);
        let a1 = coefficient_at(&coefs.a1, e, mid);
        let b1 = coefficient_at(&coefs.b1, e, mid);
        let idof = dofs.iface_elem_dofs[e];
        let stiff = [[a1 / h, -a1 / h], [-a1 / h, a1 / h]];
        for i in 0..2 {
            for j in 0..2 {
                if let (Some(fi), Some(fj)) = (dofs.free_index[idof[i]], dofs.free_index[idof[j]]) {
                    a[(fi, fj)] += stiff[i][j];
                }
            }
        }
        let mass = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
        for side in 0..2 {
            let Some(bdof) = dofs.iface_side_bulk_dofs[e][side] else { continue };
            if el.owners[side].is_none() {
                continue;
            }
            let all = [bdof[0], bdof[1], idof[0], idof[1]];
            let sgn = [1.0, 1.0, -1.0, -1.0];
            for p in 0..4 {
                for q in 0..4 {
                    if let (Some(fp), Some(fq)) = (dofs.free_index[all[p]], dofs.free_index[all[q]]) {
                        a[(fp, fq)] += sgn[p] * sgn[q] * b1 * mass[p % 2][q % 2];
                    }
                }
            }
        }
    }
    a
}

/// Dense constraint matrix by brute force: row-stacked element averages of
/// the free unit vectors.
pub fn dense_constraints(dofs: &DofMap, mesh: &MeshPair, topo: &CoarseTopology) -> DMatrix<f64> {
    let n = dofs.n_free();
    let rows = topo.n_elements();
    let mut b = DMatrix::zeros(rows, n);
    for fi in 0..n {
        let mut v = vec![0.0; n];
        v[fi] = 1.0;
        let q = mdlod::qoi(dofs, mesh, topo, &v);
        for (t, &val) in q.iter().enumerate() {
            b[(t, fi)] = val;
        }
    }
    b
}

/// Solves the dense saddle system [[A, B'], [B, 0]] [x; y] = [f; g] by LU.
pub fn dense_saddle_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    f: &[f64],
    g: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (n, m) = (a.nrows(), b.nrows());
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(a);
    k.view_mut((n, 0), (m, n)).copy_from(b);
    k.view_mut((0, n), (n, m)).copy_from(&b.transpose());
    let mut rhs = DVector::zeros(n + m);
    for (i, v) in f.iter().enumerate() {
        rhs[i] = *v;
    }
    for (i, v) in g.iter().enumerate() {
        rhs[n + i] = *v;
    }
    let sol = k.lu().solve(&rhs).expect("dense saddle solve");
    (sol.as_slice()[..n].to_vec(), sol.as_slice()[n..].to_vec())
}

const GAUSS_12: [(f64, f64); 12] = [
    (-0.981560634246719, 0.047175336386512),
    (-0.904117256370475, 0.106939325995318),
    (-0.769902674194305, 0.160078328543346),
    (-0.587317954286617, 0.203167426723066),
    (-0.367831498998180, 0.233492536538355),
    (-0.125233408511469, 0.249147045813403),
    (0.125233408511469, 0.249147045813403),
    (0.367831498998180, 0.233492536538355),
    (0.587317954286617, 0.203167426723066),
    (0.769902674194305, 0.160078328543346),
    (0.904117256370475, 0.106939325995318),
    (0.981560634246719, 0.047175336386512),
];

/// High-order quadrature load oracle (12-point Gauss per direction).
pub fn dense_load(
    dofs: &DofMap,
    mesh: &MeshPair,
    f0: &dyn Fn(f64, f64) -> f64,
    f1: &dyn Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let mut load = vec![0.0; dofs.n_free()];
    let h = mesh.h;
    let shape = |xi: f64, eta: f64| {
        [
            0.25 * (1.0 - xi) * (1.0 - eta),
            0.25 * (1.0 + xi) * (1.0 - eta),
            0.25 * (1.0 + xi) * (1.0 + eta),
            0.25 * (1.0 - xi) * (1.0 + eta),
        ]
    };
    for c in 0..mesh.n_cells() {
        let dof = dofs.cell_dofs[c];
        let (ix, iy) = mesh.cell_coords(c);
        let x0 = mesh.origin[0] + ix as f64 * h;
        let y0 = mesh.origin[1] + iy as f64 * h;
        for (xi, wx) in GAUSS_12 {
            for (eta, wy) in GAUSS_12 {
                let x = x0 + 0.5 * h * (1.0 + xi);
                let y = y0 + 0.5 * h * (1.0 + eta);
                let f = f0(x, y) * wx * wy * 0.25 * h * h;
                let n = shape(xi, eta);
                for i in 0..4 {
                    if let Some(fi) = dofs.free_index[dof[i]] {
                        load[fi] += f * n[i];
                    }
                }
            }
        }
    }
    for (e, el) in mesh.ifaces.iter().enumerate() {
        let a = mesh.node_point(el.nodes[0]);
        let b = mesh.node_point(el.nodes[1]);
        let idof = dofs.iface_elem_dofs[e];
        for (t, w) in GAUSS_12 {
            let s = 0.5 * (1.0 + t);
            let x = a[0] + s * (b[0] - a[0]);
            let y = a[1] + s * (b[1] - a[1]);
            let f = f1(x, y) * w * 0.5 * h;
            for (i, n) in [1.0 - s, s].into_iter().enumerate() {
                if let Some(fi) = dofs.free_index[idof[i]] {
                    load[fi] += f * n;
                }
            }
        }
    }
    load
}

/// Max absolute entry difference between a sparse matrix and a dense one.
pub fn max_diff_sparse_dense(sparse: &mdlod::sparse::CsrMatrix, dense: &DMatrix<f64>) -> f64 {
    let mut m = 0.0f64;
    for r in 0..dense.nrows() {
        for c in 0..dense.ncols() {
            m = m.max((sparse.get(r, c) - dense[(r, c)]).abs());
        }
    }
    m
}

/// Deterministic pseudo-random stream for test data.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.max(1))
    }

    pub fn next_unit(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_unit()
    }

    pub fn vector(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.range(-1.0, 1.0)).collect()
    }

    /// Random valid coefficient set, piecewise constant on the fine mesh.
    pub fn coefficient_set(&mut self, mesh: &MeshPair) -> CoefficientSet {
        let a0: Vec<f64> = (0..mesh.n_cells()).map(|_| self.range(0.05, 2.0)).collect();
        let a1: Vec<f64> = (0..mesh.ifaces.len()).map(|_| self.range(0.05, 2.0)).collect();
        let b1: Vec<f64> = (0..mesh.ifaces.len()).map(|_| self.range(0.05, 2.0)).collect();
        CoefficientSet {
            a0: Coefficient::per_element(a0),
            a1: Coefficient::per_element(a1),
            b1: Coefficient::per_element(b1),
        }
    }
}
