//! Assembly of the coupled bilinear form and load functional on the fitted
//! fine space, plus the direct solves and the energy norm.
//!
//! The form has three parts: bulk stiffness with `A0` (bilinear elements on
//! squares, 2x2 Gauss), interface stiffness with `A1` (linear segment
//! elements, 2-point Gauss), and the Robin coupling with `B1` applied once
//! per bulk side of every interface element, using that side's trace.
//! Coefficients given as point functions are sampled at element midpoints;
//! per-element coefficients integrate exactly.

use crate::dof::DofMap;
use crate::mesh::{CoarseTopology, MeshPair};
use crate::sparse::{CsrMatrix, LdlFactorization, SparseError, UpperCsc};
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum FemError {
    #[error("coefficient bound violated: {0} = {1} at ({2}, {3})")]
    CoefficientBound(&'static str, f64, f64, f64),
    #[error("operator is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),
    #[error("sparse solve failed: {0}")]
    Sparse(#[from] SparseError),
    #[error("direct solve residual {0:.3e} exceeds tolerance")]
    ResidualTooLarge(f64),
    #[error("energy form returned negative value {0:.3e}")]
    NegativeEnergy(f64),
    #[error("restriction element {0} out of range")]
    BadRestriction(usize),
}

/// A scalar coefficient field on the bulk or the interfaces.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    /// One value per fine element (bulk cell or interface element).
    PerElement(Arc<Vec<f64>>),
    Analytic(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl Coefficient {
    pub fn constant(v: f64) -> Self {
        Coefficient::Constant(v)
    }

    pub fn per_element(values: Vec<f64>) -> Self {
        Coefficient::PerElement(Arc::new(values))
    }

    pub fn analytic(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Analytic(Arc::new(f))
    }

    fn sample(&self, element: usize, mid: [f64; 2]) -> f64 {
        match self {
            Coefficient::Constant(v) => *v,
            Coefficient::PerElement(v) => v[element],
            Coefficient::Analytic(f) => f(mid[0], mid[1]),
        }
    }
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Constant(v) => write!(f, "Constant({v})"),
            Coefficient::PerElement(v) => write!(f, "PerElement(len {})", v.len()),
            Coefficient::Analytic(_) => write!(f, "Analytic"),
        }
    }
}

/// Diffusion and transfer coefficients of the coupled problem.
#[derive(Clone, Debug)]
pub struct CoefficientSet {
    pub a0: Coefficient,
    pub a1: Coefficient,
    pub b1: Coefficient,
}

impl CoefficientSet {
    pub fn constant(a0: f64, a1: f64, b1: f64) -> Self {
        CoefficientSet {
            a0: Coefficient::constant(a0),
            a1: Coefficient::constant(a1),
            b1: Coefficient::constant(b1),
        }
    }
}

/// Assembled energy operator: the matrix over free DOFs used by all solves,
/// and the unmasked matrix over all DOFs used by structural checks.
#[derive(Debug, Clone)]
pub struct EnergyOperator {
    pub free: CsrMatrix,
    pub full: CsrMatrix,
}

impl EnergyOperator {
    pub fn n_free(&self) -> usize {
        self.free.n_rows
    }
}

const GAUSS_2: [f64; 2] = [-0.577_350_269_189_625_7, 0.577_350_269_189_625_7];

fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ]
}

fn shape_grad(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)],
        [0.25 * (1.0 - eta), -0.25 * (1.0 + xi)],
        [0.25 * (1.0 + eta), 0.25 * (1.0 + xi)],
        [-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)],
    ]
}

/// Local bulk stiffness for a unit coefficient (independent of h in 2D).
pub(crate) fn local_bulk_stiffness() -> [[f64; 4]; 4] {
    let mut k = [[0.0; 4]; 4];
    for &xi in &GAUSS_2 {
        for &eta in &GAUSS_2 {
            let g = shape_grad(xi, eta);
            for i in 0..4 {
                for j in 0..4 {
                    // Physical gradients carry 2/h each, the area element h^2/4.
                    k[i][j] += g[i][0] * g[j][0] * 4.0 + g[i][1] * g[j][1] * 4.0;
                }
            }
        }
    }
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            *v *= 0.25;
        }
    }
    k
}

/// Local interface stiffness for a unit coefficient, scaled by 1/h.
fn local_iface_stiffness(h: f64) -> [[f64; 2]; 2] {
    let v = 1.0 / h;
    [[v, -v], [-v, v]]
}

/// Local coupling mass in the (trace - interface) difference variables.
fn local_coupling_mass(h: f64) -> [[f64; 2]; 2] {
    [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]]
}

fn check_positive(
    name: &'static str,
    value: f64,
    mid: [f64; 2],
) -> Result<f64, FemError> {
    if value <= 0.0 || !value.is_finite() {
        Err(FemError::CoefficientBound(name, value, mid[0], mid[1]))
    } else {
        Ok(value)
    }
}

/// Assembles the energy operator. With `restriction = Some((topology, t0))`
/// only the element-restricted form is assembled: bulk stiffness on `t0`,
/// interface stiffness on the faces of `t0` weighted by one over the number
/// of sharing bulk elements, and the Robin coupling on those faces with the
/// `t0`-side trace, unweighted. The restricted forms sum to the full one.
pub fn assemble_operator(
    dofs: &DofMap,
    mesh: &MeshPair,
    coefs: &CoefficientSet,
    restriction: Option<(&CoarseTopology, usize)>,
) -> Result<EnergyOperator, FemError> {
    let kb = local_bulk_stiffness();
    let ks = local_iface_stiffness(mesh.h);
    let km = local_coupling_mass(mesh.h);

    // (cell list, list of (interface element, stiffness weight, coupled sides)).
    let cells: Vec<usize>;
    let iface_jobs: Vec<(usize, f64, [bool; 2])>;
    match restriction {
        None => {
            cells = (0..mesh.n_cells()).collect();
            iface_jobs = (0..mesh.ifaces.len()).map(|e| (e, 1.0, [true, true])).collect();
        }
        Some((topo, t0)) => {
            if t0 >= topo.n_bulk {
                return Err(FemError::BadRestriction(t0));
            }
            cells = topo.bulk_members[t0].clone();
            let mut jobs = Vec::new();
            for &t1 in &topo.bulk_faces[t0] {
                let w = 1.0 / topo.iface_owners[t1].len() as f64;
                for &e in &topo.iface_members[t1] {
                    let mut sides = [false, false];
                    for (s, owner) in mesh.ifaces[e].owners.iter().enumerate() {
                        if let Some(c) = owner {
                            if topo.cell_parent[*c] == t0 {
                                sides[s] = true;
                            }
                        }
                    }
                    jobs.push((e, w, sides));
                }
            }
            iface_jobs = jobs;
        }
    }

    type Triplets = Vec<(usize, usize, f64)>;
    let cell_triplets: Vec<Result<Triplets, FemError>> = cells
        .par_iter()
        .map(|&c| {
            let mid = mesh.cell_center(c);
            let a = check_positive("A0", coefs.a0.sample(c, mid), mid)?;
            let dof = dofs.cell_dofs[c];
            let mut out = Vec::with_capacity(16);
            for i in 0..4 {
                for j in 0..4 {
                    out.push((dof[i], dof[j], a * kb[i][j]));
                }
            }
            Ok(out)
        })
        .collect();

    let iface_triplets: Vec<Result<Triplets, FemError>> = iface_jobs
        .par_iter()
        .map(|&(e, w, sides)| {
            let mid = mesh.iface_midpoint(e);
            let a1 = check_positive("A1", coefs.a1.sample(e, mid), mid)?;
            let idof = dofs.iface_elem_dofs[e];
            let mut out = Vec::with_capacity(4 + 32);
            for i in 0..2 {
                for j in 0..2 {
                    out.push((idof[i], idof[j], w * a1 * ks[i][j]));
                }
            }
            let b1 = check_positive("B1", coefs.b1.sample(e, mid), mid)?;
            for (s, coupled) in sides.iter().enumerate() {
                if !coupled {
                    continue;
                }
                let Some(bdof) = dofs.iface_side_bulk_dofs[e][s] else {
                    continue;
                };
                // DOFs [bulk0, bulk1, iface0, iface1] with signs (+,+,-,-).
                let all = [bdof[0], bdof[1], idof[0], idof[1]];
                let sgn = [1.0, 1.0, -1.0, -1.0];
                for p in 0..4 {
                    for q in 0..4 {
                        out.push((all[p], all[q], sgn[p] * sgn[q] * b1 * km[p % 2][q % 2]));
                    }
                }
            }
            Ok(out)
        })
        .collect();

    let mut triplets = Vec::new();
    for group in cell_triplets.into_iter().chain(iface_triplets) {
        triplets.extend(group?);
    }

    let n = dofs.n_dofs();
    let full = CsrMatrix::from_triplets(n, n, &triplets);
    let free_triplets: Vec<(usize, usize, f64)> = triplets
        .iter()
        .filter_map(|&(r, c, v)| match (dofs.free_index[r], dofs.free_index[c]) {
            (Some(fr), Some(fc)) => Some((fr, fc, v)),
            _ => None,
        })
        .collect();
    let nf = dofs.n_free();
    let free = CsrMatrix::from_triplets(nf, nf, &free_triplets);
    Ok(EnergyOperator { free, full })
}

const LOAD_GAUSS: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (-0.538_469_310_105_683, 0.478_628_670_499_366_47),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683, 0.478_628_670_499_366_47),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

/// Assembles the load functional over free DOFs with 5-point Gauss rules,
/// accurate well beyond the fine-space resolution for smooth sources.
pub fn assemble_load(
    dofs: &DofMap,
    mesh: &MeshPair,
    f0: &(dyn Fn(f64, f64) -> f64 + Sync),
    f1: &(dyn Fn(f64, f64) -> f64 + Sync),
) -> Vec<f64> {
    let mut load = vec![0.0; dofs.n_free()];
    let h = mesh.h;
    for c in 0..mesh.n_cells() {
        let dof = dofs.cell_dofs[c];
        let (ix, iy) = mesh.cell_coords(c);
        let x0 = mesh.origin[0] + ix as f64 * h;
        let y0 = mesh.origin[1] + iy as f64 * h;
        for (xi, wx) in LOAD_GAUSS {
            for (eta, wy) in LOAD_GAUSS {
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
        for (t, w) in LOAD_GAUSS {
            let s = 0.5 * (1.0 + t);
            let x = a[0] + s * (b[0] - a[0]);
            let y = a[1] + s * (b[1] - a[1]);
            let f = f1(x, y) * w * 0.5 * h;
            let n = [1.0 - s, s];
            for i in 0..2 {
                if let Some(fi) = dofs.free_index[idof[i]] {
                    load[fi] += f * n[i];
                }
            }
        }
    }
    load
}

/// Direct sparse solve of the Dirichlet problem. Fails if the operator is not
/// positive definite or the residual check does not hold.
pub fn solve_dirichlet(op: &EnergyOperator, load: &[f64]) -> Result<Vec<f64>, FemError> {
    let upper = UpperCsc::from_symmetric_csr(&op.free);
    let ldl = LdlFactorization::new(&upper)?;
    if let Some(k) = ldl.pivots().iter().position(|&d| d <= 0.0) {
        return Err(FemError::NotPositiveDefinite(k));
    }
    let u = ldl.solve(load);
    let residual = op
        .free
        .matvec(&u)
        .iter()
        .zip(load)
        .fold(0.0f64, |m, (a, f)| m.max((a - f).abs()));
    let scale = load.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if residual > 1e-10 * scale.max(1e-300) && scale > 0.0 {
        return Err(FemError::ResidualTooLarge(residual));
    }
    Ok(u)
}

/// Energy norm `sqrt(v' A v)` over free DOFs.
pub fn energy_norm(op: &EnergyOperator, v: &[f64]) -> Result<f64, FemError> {
    let av = op.free.matvec(v);
    let q: f64 = av.iter().zip(v).map(|(a, b)| a * b).sum();
    if q >= 0.0 {
        return Ok(q.sqrt());
    }
    let v2: f64 = v.iter().map(|x| x * x).sum();
    let scale = op.free.max_abs() * v2;
    if -q > 1e-12 * scale.max(1e-300) {
        Err(FemError::NegativeEnergy(q))
    } else {
        Ok(0.0)
    }
}

/// Energy inner product `v' A w`.
pub fn energy_inner(op: &EnergyOperator, v: &[f64], w: &[f64]) -> f64 {
    op.free.matvec(w).iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Difference `v - w` as a new vector.
pub fn sub(v: &[f64], w: &[f64]) -> Vec<f64> {
    v.iter().zip(w).map(|(a, b)| a - b).collect()
}

/// Evaluates a free-DOF field of one mesh on the free DOFs of a uniformly
/// refined mesh of the same domain (the spaces are nested).
pub fn prolong_field(
    from: (&MeshPair, &DofMap),
    to: (&MeshPair, &DofMap),
    u: &[f64],
) -> Vec<f64> {
    let (mc, dc) = from;
    let (mf, df) = to;
    let ratio = (mc.h / mf.h).round() as usize;
    assert!(ratio >= 1 && (mc.h - ratio as f64 * mf.h).abs() < 1e-12);
    let full = dc.scatter(u);
    let mut out = vec![0.0; df.n_free()];

    // Coarse bulk DOF lookup per (node, segment).
    let mut lookup = std::collections::HashMap::new();
    for (d, bd) in dc.bulk_dofs.iter().enumerate() {
        lookup.insert((bd.node, bd.segment), d);
    }
    for (d, bd) in df.bulk_dofs.iter().enumerate() {
        let Some(fi) = df.free_index[d] else { continue };
        let (ix, iy) = mf.node_coords(bd.node);
        // Containing coarse cell of this segment.
        let cells = &df.bulk_dof_cells[d];
        let cell = cells[0];
        let (cx, cy) = mf.cell_coords(cell);
        let (ccx, ccy) = (cx / ratio, cy / ratio);
        let sx = ix as f64 / ratio as f64 - ccx as f64;
        let sy = iy as f64 / ratio as f64 - ccy as f64;
        let nodes = [
            mc.node_id(ccx, ccy),
            mc.node_id(ccx + 1, ccy),
            mc.node_id(ccx + 1, ccy + 1),
            mc.node_id(ccx, ccy + 1),
        ];
        let weights = [
            (1.0 - sx) * (1.0 - sy),
            sx * (1.0 - sy),
            sx * sy,
            (1.0 - sx) * sy,
        ];
        let mut val = 0.0;
        for k in 0..4 {
            let cd = lookup[&(nodes[k], bd.segment)];
            val += weights[k] * full[cd];
        }
        out[fi] = val;
    }

    let mut iface_lookup = std::collections::HashMap::new();
    for (k, &node) in dc.iface_dofs.iter().enumerate() {
        iface_lookup.insert(node, dc.n_bulk_dofs + k);
    }
    for (k, &node) in df.iface_dofs.iter().enumerate() {
        let d = df.n_bulk_dofs + k;
        let Some(fi) = df.free_index[d] else { continue };
        // Position along the parent coarse interface element.
        let e = df.iface_dof_elems[k][0];
        let seg = mf.ifaces[e].segment;
        let f0 = mf.iface_seg_offsets[seg];
        let offset = e - f0;
        let coarse_e0 = mc.iface_seg_offsets[seg] + offset / ratio;
        let ca = mc.ifaces[coarse_e0].nodes[0];
        let cb = mc.ifaces[coarse_e0].nodes[1];
        let pa = mc.node_point(ca);
        let pb = mc.node_point(cb);
        let p = mf.node_point(node);
        let len2 = (pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2);
        let t = (((p[0] - pa[0]) * (pb[0] - pa[0]) + (p[1] - pa[1]) * (pb[1] - pa[1])) / len2)
            .clamp(0.0, 1.0);
        let va = full[iface_lookup[&ca]];
        let vb = full[iface_lookup[&cb]];
        out[fi] = (1.0 - t) * va + t * vb;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domain, GeometrySpec};
    use crate::mesh::build_mesh;

    fn setup(n: usize) -> (crate::geometry::MixedDomain, MeshPair, DofMap) {
        let d = build_domain(&GeometrySpec::cross()).unwrap();
        let m = build_mesh(&d, n).unwrap();
        let s = crate::dof::build_space(&m, &d).unwrap();
        (d, m, s)
    }

    #[test]
    fn constants_lie_in_the_kernel() {
        let (_, m, s) = setup(4);
        let op = assemble_operator(&s, &m, &CoefficientSet::constant(1.0, 1.0, 1.0), None).unwrap();
        let ones = vec![1.0; s.n_dofs()];
        let r = op.full.matvec(&ones);
        let max = r.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(max <= 1e-12, "max residual {max}");
    }

    #[test]
    fn operator_is_symmetric() {
        let (_, m, s) = setup(4);
        let op = assemble_operator(&s, &m, &CoefficientSet::constant(2.0, 0.5, 3.0), None).unwrap();
        let mut max = 0.0f64;
        for r in 0..op.free.n_rows {
            let (cols, vals) = op.free.row(r);
            for (c, v) in cols.iter().zip(vals) {
                max = max.max((v - op.free.get(*c, r)).abs());
            }
        }
        assert!(max <= 1e-14 * op.free.max_abs());
    }

    #[test]
    fn coupling_block_is_scaled_mass() {
        // A domain whose interface is a single fine element isolates the
        // local coupling block in the assembled matrix.
        let spec = GeometrySpec {
            domain: [0.0, 0.0, 1.0, 0.5],
            interfaces: vec![vec![[0.5, 0.0], [0.5, 0.5]]],
        };
        let d = build_domain(&spec).unwrap();
        let m = build_mesh(&d, 2).unwrap();
        let s = crate::dof::build_space(&m, &d).unwrap();
        assert_eq!(m.ifaces.len(), 1);
        let op = assemble_operator(&s, &m, &CoefficientSet::constant(1.0, 1.0, 1.0), None).unwrap();
        let h = m.h;
        let idof = s.iface_elem_dofs[0];
        // The bulk-interface off-block is -B1 times the segment mass matrix,
        // for each side's trace copies; the two sides never couple directly.
        let mass = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
        for side in 0..2 {
            let bdof = s.iface_side_bulk_dofs[0][side].unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let got = op.full.get(bdof[i], idof[j]);
                    assert!((got + mass[i][j]).abs() < 1e-14, "side {side} ({i},{j}): {got}");
                    let diag = op.full.get(bdof[i], bdof[j]);
                    let stiff = local_bulk_stiffness();
                    // Bulk block = stiffness of the single cell + coupling mass.
                    // Interface nodes are (SE, NE) of the left cell, (SW, NW) of the right.
                    let local = [[1, 2], [0, 3]][side];
                    let expect = stiff[local[i]][local[j]] + mass[i][j];
                    assert!((diag - expect).abs() < 1e-14, "side {side} bulk ({i},{j})");
                }
            }
        }
        let left = s.iface_side_bulk_dofs[0][0].unwrap();
        let right = s.iface_side_bulk_dofs[0][1].unwrap();
        assert_eq!(op.full.get(left[0], right[0]), 0.0);
        // Interface block: tangential stiffness plus coupling from both sides.
        let expect_ii = [
            [1.0 / h + 2.0 * mass[0][0], -1.0 / h + 2.0 * mass[0][1]],
            [-1.0 / h + 2.0 * mass[1][0], 1.0 / h + 2.0 * mass[1][1]],
        ];
        for i in 0..2 {
            for j in 0..2 {
                let got = op.full.get(idof[i], idof[j]);
                assert!((got - expect_ii[i][j]).abs() < 1e-13, "iface ({i},{j}): {got}");
            }
        }
    }

    #[test]
    fn restricted_forms_sum_to_full() {
        let d = build_domain(&GeometrySpec::cross()).unwrap();
        let h = crate::mesh::MeshHierarchy::build(&d, 2, 2).unwrap();
        let s = crate::dof::build_space(&h.fine, &d).unwrap();
        let coefs = CoefficientSet::constant(1.3, 0.7, 2.1);
        let full = assemble_operator(&s, &h.fine, &coefs, None).unwrap();
        let mut sum = CsrMatrix::zeros(s.n_free(), s.n_free());
        let mut triplets = Vec::new();
        for t0 in 0..h.topology.n_bulk {
            let part = assemble_operator(&s, &h.fine, &coefs, Some((&h.topology, t0))).unwrap();
            for r in 0..part.free.n_rows {
                let (cols, vals) = part.free.row(r);
                for (c, v) in cols.iter().zip(vals) {
                    triplets.push((r, *c, *v));
                }
            }
        }
        sum = CsrMatrix::from_triplets(sum.n_rows, sum.n_cols, &triplets);
        assert!(sum.max_abs_diff(&full.free) <= 1e-12 * full.free.max_abs());
    }

    #[test]
    fn load_of_zero_sources_is_zero() {
        let (_, m, s) = setup(4);
        let f = assemble_load(&s, &m, &|_, _| 0.0, &|_, _| 0.0);
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn load_of_unit_source_on_two_cell_grid() {
        let d = build_domain(&GeometrySpec::unit_square(vec![])).unwrap();
        let m = build_mesh(&d, 2).unwrap();
        let s = crate::dof::build_space(&m, &d).unwrap();
        let f = assemble_load(&s, &m, &|_, _| 1.0, &|_, _| 0.0);
        assert_eq!(f.len(), 1);
        let h = 0.5;
        assert!((f[0] - h * h).abs() < 1e-14);
    }

    #[test]
    fn solve_recovers_prescribed_field() {
        let (_, m, s) = setup(8);
        let op = assemble_operator(&s, &m, &CoefficientSet::constant(1.0, 1.0, 1.0), None).unwrap();
        let w: Vec<f64> = (0..s.n_free()).map(|i| ((i * 7919 % 101) as f64) / 101.0 - 0.5).collect();
        let f = op.free.matvec(&w);
        let u = solve_dirichlet(&op, &f).unwrap();
        let wn: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err: f64 = u.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!(err <= 1e-10 * wn);
        let zero = solve_dirichlet(&op, &vec![0.0; s.n_free()]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn energy_norm_axioms() {
        let (_, m, s) = setup(4);
        let op = assemble_operator(&s, &m, &CoefficientSet::constant(1.0, 2.0, 0.5), None).unwrap();
        assert_eq!(energy_norm(&op, &vec![0.0; s.n_free()]).unwrap(), 0.0);
        let mut state = 0x1234_5678u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for _ in 0..10 {
            let v: Vec<f64> = (0..s.n_free()).map(|_| rnd()).collect();
            let w: Vec<f64> = (0..s.n_free()).map(|_| rnd()).collect();
            let nv = energy_norm(&op, &v).unwrap();
            let v2: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
            assert!((energy_norm(&op, &v2).unwrap() - 2.0 * nv).abs() <= 1e-12 * nv);
            let vw: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
            let lhs = energy_norm(&op, &vw).unwrap();
            let rhs = nv + energy_norm(&op, &w).unwrap();
            assert!(lhs <= rhs + 1e-12 * rhs);
        }
    }

    #[test]
    fn energy_norm_rejects_indefinite_forms() {
        // A corrupted operator with a negative diagonal entry must be caught.
        let (_, m, s) = setup(2);
        let mut op =
            assemble_operator(&s, &m, &CoefficientSet::constant(1.0, 1.0, 1.0), None).unwrap();
        for v in op.free.data.iter_mut() {
            *v = -*v;
        }
        let v = vec![1.0; s.n_free()];
        assert!(matches!(energy_norm(&op, &v), Err(FemError::NegativeEnergy(_))));
    }

    #[test]
    fn bad_coefficient_rejected() {
        let (_, m, s) = setup(4);
        let err = assemble_operator(&s, &m, &CoefficientSet::constant(-1.0, 1.0, 1.0), None);
        assert!(matches!(err, Err(FemError::CoefficientBound("A0", _, _, _))));
    }

    #[test]
    fn prolongation_is_exact_on_nested_spaces() {
        let d = build_domain(&GeometrySpec::cross()).unwrap();
        let mc = build_mesh(&d, 4).unwrap();
        let dc = crate::dof::build_space(&mc, &d).unwrap();
        let mf = build_mesh(&d, 8).unwrap();
        let df = crate::dof::build_space(&mf, &d).unwrap();
        let u: Vec<f64> = (0..dc.n_free()).map(|i| (i as f64 * 0.37).sin()).collect();
        let uf = prolong_field((&mc, &dc), (&mf, &df), &u);
        // Energy norm must be preserved exactly for nested spaces.
        let coefs = CoefficientSet::constant(1.0, 1.0, 1.0);
        let opc = assemble_operator(&dc, &mc, &coefs, None).unwrap();
        let opf = assemble_operator(&df, &mf, &coefs, None).unwrap();
        let nc = energy_norm(&opc, &u).unwrap();
        let nf = energy_norm(&opf, &uf).unwrap();
        assert!((nc - nf).abs() <= 1e-11 * nc.max(1.0), "{nc} vs {nf}");
    }
}
