//! The multiscale machinery: localized saddle-point correctors, the three
//! basis construction variants (global, stabilized, naive), the coarse
//! Galerkin solve, and decay diagnostics.
//!
//! A corrector for a coarse bulk element solves the saddle-point system of
//! the energy form and the quantity-of-interest constraints on the patch,
//! with the element-restricted forms on the right-hand side. The right-hand
//! sides depend on the argument only through its quantities of interest, so
//! basis columns are driven by Kronecker data and no bubble functions appear
//! at runtime. Corrector solves are pure functions of immutable inputs and
//! run on a work pool; results are combined in a fixed element order, so
//! outputs are identical for every thread count.

use crate::assemble::{assemble_operator, CoefficientSet, EnergyOperator, FemError};
use crate::dof::DofMap;
use crate::interp::{InterpError, Interpolator};
use crate::mesh::{CoarseElem, CoarseTopology, MeshPair, Patch};
use crate::sparse::{CsrMatrix, SaddleSolver, SparseError};
use rayon::prelude::*;
use std::io::Write;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum LodError {
    #[error("saddle-point solve failed: {0}")]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error("coarse system is singular (basis defect)")]
    SingularCoarseSystem,
    #[error("coarse Galerkin residual {0:.3e} exceeds tolerance")]
    GalerkinResidual(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything the corrector and basis machinery needs, borrowed immutably.
pub struct LodContext<'a> {
    pub mesh: &'a MeshPair,
    pub dofs: &'a DofMap,
    pub topo: &'a CoarseTopology,
    pub a: &'a EnergyOperator,
    pub b: &'a CsrMatrix,
    /// Element-restricted energy operators, one per coarse bulk element.
    pub restricted: &'a [CsrMatrix],
}

/// Assembles the element-restricted operators for every coarse bulk element.
pub fn build_restricted(
    dofs: &DofMap,
    mesh: &MeshPair,
    coefs: &CoefficientSet,
    topo: &CoarseTopology,
) -> Result<Vec<CsrMatrix>, FemError> {
    (0..topo.n_bulk)
        .into_par_iter()
        .map(|t0| Ok(assemble_operator(dofs, mesh, coefs, Some((topo, t0)))?.free))
        .collect()
}

/// Rows and weights of the element-restricted constraint form: the element's
/// own row with weight one, its faces with weight 1/n.
pub fn restricted_rows(topo: &CoarseTopology, t0: usize) -> Vec<(usize, f64)> {
    let mut rows = vec![(t0, 1.0)];
    for &t1 in &topo.bulk_faces[t0] {
        rows.push((topo.n_bulk + t1, 1.0 / topo.iface_owners[t1].len() as f64));
    }
    rows
}

/// Free DOFs strictly inside the patch: every incident fine element of the
/// DOF must belong to a coarse element of the patch (zero trace on the
/// internal patch boundary).
pub fn patch_free_dofs(dofs: &DofMap, topo: &CoarseTopology, patch: &Patch) -> Vec<usize> {
    let mut bulk_in = vec![false; topo.n_bulk];
    for &t in &patch.bulk {
        bulk_in[t] = true;
    }
    let mut iface_in = vec![false; topo.n_iface];
    for &t in &patch.iface {
        iface_in[t] = true;
    }
    let mut out = Vec::new();
    for (fi, &dof) in dofs.free_dofs.iter().enumerate() {
        let inside = if dofs.is_bulk(dof) {
            dofs.bulk_dof_cells[dof]
                .iter()
                .all(|&c| bulk_in[topo.cell_parent[c]])
        } else {
            dofs.iface_dof_elems[dof - dofs.n_bulk_dofs]
                .iter()
                .all(|&e| iface_in[topo.iface_parent[e]])
        };
        if inside {
            out.push(fi);
        }
    }
    out
}

/// A solved localized corrector: the corrector field (zero outside the
/// patch), the Lagrange multipliers on the patch rows, and the patch.
#[derive(Debug, Clone)]
pub struct CorrectorResult {
    pub corrector: Vec<f64>,
    pub multipliers: Vec<(usize, f64)>,
    pub patch: Patch,
}

struct PatchSystem {
    p: Vec<usize>,
    rows: Vec<usize>,
    solver: SaddleSolver,
}

fn patch_system(ctx: &LodContext, patch: &Patch) -> Result<PatchSystem, LodError> {
    let p = patch_free_dofs(ctx.dofs, ctx.topo, patch);
    let rows = patch.rows(ctx.topo.n_bulk);
    let app = ctx.a.free.submatrix(&p);
    let bmp = ctx.b.extract(&rows, &p);
    let solver = SaddleSolver::new(&app, &bmp)?;
    Ok(PatchSystem { p, rows, solver })
}

/// Right-hand sides of the corrector system for element `t0` given the
/// quantity-of-interest data `qdiff = qoi(v) - qoi(I_H v)` and the
/// interpolation `ihv = I_H v`. Returns `None` when both sides vanish.
fn corrector_rhs(
    ctx: &LodContext,
    t0: usize,
    sys_p: &[usize],
    sys_rows: &[usize],
    qdiff: &[f64],
    ihv: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let aw = ctx.restricted[t0].matvec(ihv);
    let rhs_w: Vec<f64> = sys_p.iter().map(|&fi| aw[fi]).collect();
    let mut rhs_mu = vec![0.0; sys_rows.len()];
    for (row, weight) in restricted_rows(ctx.topo, t0) {
        let pos = sys_rows
            .binary_search(&row)
            .expect("restricted row outside patch rows");
        rhs_mu[pos] = -weight * qdiff[row];
    }
    if rhs_w.iter().all(|&v| v == 0.0) && rhs_mu.iter().all(|&v| v == 0.0) {
        None
    } else {
        Some((rhs_w, rhs_mu))
    }
}

/// Solves the localized corrector problem for coarse bulk element `t0` on its
/// `ell`-th order patch. The argument enters only through `qdiff` and `ihv`.
pub fn corrector_solve(
    ctx: &LodContext,
    t0: usize,
    ell: usize,
    qdiff: &[f64],
    ihv: &[f64],
) -> Result<CorrectorResult, LodError> {
    let patch = ctx.topo.patch(CoarseElem::Bulk(t0), ell);
    let sys = patch_system(ctx, &patch)?;
    let n_free = ctx.dofs.n_free();
    match corrector_rhs(ctx, t0, &sys.p, &sys.rows, qdiff, ihv) {
        None => Ok(CorrectorResult {
            corrector: vec![0.0; n_free],
            multipliers: sys.rows.iter().map(|&r| (r, 0.0)).collect(),
            patch,
        }),
        Some((rhs_w, rhs_mu)) => {
            let (x, lambda) = sys.solver.solve(&rhs_w, &rhs_mu);
            let mut corrector = vec![0.0; n_free];
            for (l, &fi) in sys.p.iter().enumerate() {
                corrector[fi] = x[l];
            }
            Ok(CorrectorResult {
                corrector,
                multipliers: sys.rows.iter().copied().zip(lambda).collect(),
                patch,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisVariant {
    Global,
    Stabilized,
    Naive,
}

impl std::fmt::Display for BasisVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasisVariant::Global => write!(f, "global"),
            BasisVariant::Stabilized => write!(f, "stabilized"),
            BasisVariant::Naive => write!(f, "naive"),
        }
    }
}

/// Multiscale basis: one fine column per coarse element (bulk first), with
/// coarse-element support bookkeeping per column.
pub struct MultiscaleBasis {
    pub variant: BasisVariant,
    pub ell: usize,
    pub columns: Vec<Vec<f64>>,
    pub support: Vec<(Vec<usize>, Vec<usize>)>,
}

impl MultiscaleBasis {
    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    /// Simple column-compressed text dump for debugging; not a stable format.
    pub fn write_debug(&self, path: &std::path::Path) -> Result<(), LodError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "basis {} ell {} columns {}", self.variant, self.ell, self.columns.len())?;
        for (t, col) in self.columns.iter().enumerate() {
            let nnz = col.iter().filter(|v| **v != 0.0).count();
            writeln!(out, "column {t} nnz {nnz}")?;
            for (fi, v) in col.iter().enumerate() {
                if *v != 0.0 {
                    writeln!(out, "{fi} {v:.17e}")?;
                }
            }
        }
        Ok(())
    }
}

fn full_support(topo: &CoarseTopology) -> (Vec<usize>, Vec<usize>) {
    ((0..topo.n_bulk).collect(), (0..topo.n_iface).collect())
}

fn union_support(parts: impl IntoIterator<Item = Patch>, topo: &CoarseTopology) -> (Vec<usize>, Vec<usize>) {
    let mut bulk = vec![false; topo.n_bulk];
    let mut iface = vec![false; topo.n_iface];
    for p in parts {
        for t in p.bulk {
            bulk[t] = true;
        }
        for t in p.iface {
            iface[t] = true;
        }
    }
    (
        (0..topo.n_bulk).filter(|&t| bulk[t]).collect(),
        (0..topo.n_iface).filter(|&t| iface[t]).collect(),
    )
}

/// Builds the multiscale basis.
///
/// Global: one full-domain saddle point per column with Kronecker data.
/// Stabilized: per column, interpolate the Kronecker data and subtract the
/// localized correctors of every bulk element whose right-hand side is
/// nonzero (the first-order patch for bulk columns, the owners of the
/// first-order interface patch for interface columns).
/// Naive: the global column problem truncated to the patch of the element.
pub fn build_basis(
    ctx: &LodContext,
    interp: &Interpolator,
    ell: usize,
    variant: BasisVariant,
) -> Result<MultiscaleBasis, LodError> {
    let n = ctx.topo.n_elements();
    let n_free = ctx.dofs.n_free();
    match variant {
        BasisVariant::Global => {
            let solver = SaddleSolver::new(&ctx.a.free, ctx.b)?;
            let zero = vec![0.0; n_free];
            let columns: Vec<Vec<f64>> = (0..n)
                .map(|t| {
                    let mut e = vec![0.0; n];
                    e[t] = 1.0;
                    solver.solve(&zero, &e).0
                })
                .collect();
            let support = vec![full_support(ctx.topo); n];
            Ok(MultiscaleBasis { variant, ell, columns, support })
        }
        BasisVariant::Naive => {
            type NaiveColumn = (Vec<f64>, (Vec<usize>, Vec<usize>));
            let results: Vec<Result<NaiveColumn, LodError>> = (0..n)
                .into_par_iter()
                .map(|t| {
                    let seed = if t < ctx.topo.n_bulk {
                        CoarseElem::Bulk(t)
                    } else {
                        CoarseElem::Iface(t - ctx.topo.n_bulk)
                    };
                    let patch = ctx.topo.patch(seed, ell);
                    let sys = patch_system(ctx, &patch)?;
                    let mut rhs_mu = vec![0.0; sys.rows.len()];
                    let pos = sys
                        .rows
                        .binary_search(&t)
                        .expect("element missing from its own patch");
                    rhs_mu[pos] = 1.0;
                    let (x, _) = sys.solver.solve(&vec![0.0; sys.p.len()], &rhs_mu);
                    let mut col = vec![0.0; n_free];
                    for (l, &fi) in sys.p.iter().enumerate() {
                        col[fi] = x[l];
                    }
                    Ok((col, (patch.bulk, patch.iface)))
                })
                .collect();
            let mut columns = Vec::with_capacity(n);
            let mut support = Vec::with_capacity(n);
            for r in results {
                let (c, s) = r?;
                columns.push(c);
                support.push(s);
            }
            Ok(MultiscaleBasis { variant, ell, columns, support })
        }
        BasisVariant::Stabilized => {
            // Kronecker data per column.
            let mut ihv = Vec::with_capacity(n);
            let mut qdiff = Vec::with_capacity(n);
            for t in 0..n {
                let mut e = vec![0.0; n];
                e[t] = 1.0;
                let v = interp.apply(&e, n_free);
                let mut qd = ctx.b.matvec(&v);
                for (k, q) in qd.iter_mut().enumerate() {
                    *q = e[k] - *q;
                }
                ihv.push(v);
                qdiff.push(qd);
            }

            // Per bulk element: solve the patch system once for all columns
            // with a nonzero right-hand side there.
            type Solved = Vec<(usize, Vec<f64>, Patch)>;
            let per_element: Vec<Result<Solved, LodError>> = (0..ctx.topo.n_bulk)
                .into_par_iter()
                .map(|k0| {
                    let mut out = Vec::new();
                    let mut sys: Option<(PatchSystem, Patch)> = None;
                    for t in 0..n {
                        if sys.is_none() {
                            // Probe activity cheaply before factorizing.
                            let aw = ctx.restricted[k0].matvec(&ihv[t]);
                            let mu_zero = restricted_rows(ctx.topo, k0)
                                .iter()
                                .all(|&(row, _)| qdiff[t][row] == 0.0);
                            if aw.iter().all(|&v| v == 0.0) && mu_zero {
                                continue;
                            }
                            let patch = ctx.topo.patch(CoarseElem::Bulk(k0), ell);
                            sys = Some((patch_system(ctx, &patch)?, patch));
                        }
                        let (system, patch) = sys.as_ref().unwrap();
                        if let Some((rhs_w, rhs_mu)) =
                            corrector_rhs(ctx, k0, &system.p, &system.rows, &qdiff[t], &ihv[t])
                        {
                            let (x, _) = system.solver.solve(&rhs_w, &rhs_mu);
                            let mut corr = vec![0.0; n_free];
                            for (l, &fi) in system.p.iter().enumerate() {
                                corr[fi] = x[l];
                            }
                            out.push((t, corr, patch.clone()));
                        }
                    }
                    Ok(out)
                })
                .collect();

            let mut columns = ihv;
            let mut parts: Vec<Vec<Patch>> = (0..n)
                .map(|t| {
                    let seed = if t < ctx.topo.n_bulk {
                        CoarseElem::Bulk(t)
                    } else {
                        CoarseElem::Iface(t - ctx.topo.n_bulk)
                    };
                    vec![ctx.topo.patch(seed, 1)]
                })
                .collect();
            for group in per_element {
                for (t, corr, patch) in group? {
                    for (c, v) in columns[t].iter_mut().zip(&corr) {
                        *c -= v;
                    }
                    parts[t].push(patch);
                }
            }
            let support = parts
                .into_iter()
                .map(|p| union_support(p, ctx.topo))
                .collect();
            Ok(MultiscaleBasis { variant, ell, columns, support })
        }
    }
}

/// Coarse Galerkin solve in the span of the basis columns. Returns the coarse
/// coefficients and the fine-space solution.
pub fn solve_multiscale(
    basis: &MultiscaleBasis,
    a: &EnergyOperator,
    load: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), LodError> {
    let n = basis.n_columns();
    let n_free = load.len();
    let a_cols: Vec<Vec<f64>> = basis.columns.iter().map(|c| a.free.matvec(c)).collect();
    let mut g = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] = basis.columns[i]
                .iter()
                .zip(&a_cols[j])
                .map(|(x, y)| x * y)
                .sum();
        }
    }
    let rhs_vec: Vec<f64> = basis
        .columns
        .iter()
        .map(|c| c.iter().zip(load).map(|(x, f)| x * f).sum())
        .collect();
    let rhs = nalgebra::DVector::<f64>::from_vec(rhs_vec.clone());
    let chol = g.cholesky().ok_or(LodError::SingularCoarseSystem)?;
    let c = chol.solve(&rhs);
    let mut u = vec![0.0; n_free];
    for (j, col) in basis.columns.iter().enumerate() {
        let cj = c[j];
        for (ui, v) in u.iter_mut().zip(col) {
            *ui += cj * v;
        }
    }
    // Galerkin residual check.
    let au = a.free.matvec(&u);
    let mut res = 0.0f64;
    let mut scale = 0.0f64;
    for (j, col) in basis.columns.iter().enumerate() {
        let r: f64 = col.iter().zip(au.iter().zip(load)).map(|(x, (a, f))| x * (a - f)).sum();
        res = res.max(r.abs());
        scale = scale.max(rhs_vec[j].abs());
    }
    if res > 1e-10 * scale.max(1e-300) && scale > 0.0 {
        return Err(LodError::GalerkinResidual(res));
    }
    Ok((c.iter().copied().collect(), u))
}

/// Applies the localized projection: interpolate, then subtract the sum of
/// all element correctors. Preserves every quantity of interest.
pub fn apply_rl(
    ctx: &LodContext,
    interp: &Interpolator,
    ell: usize,
    v: &[f64],
) -> Result<Vec<f64>, LodError> {
    let q = ctx.b.matvec(v);
    let ihv = interp.apply(&q, ctx.dofs.n_free());
    let qih = ctx.b.matvec(&ihv);
    let qdiff: Vec<f64> = q.iter().zip(&qih).map(|(a, b)| a - b).collect();
    let results: Vec<Result<Vec<f64>, LodError>> = (0..ctx.topo.n_bulk)
        .into_par_iter()
        .map(|t0| Ok(corrector_solve(ctx, t0, ell, &qdiff, &ihv)?.corrector))
        .collect();
    let mut out = ihv;
    for r in results {
        let corr = r?;
        for (o, c) in out.iter_mut().zip(&corr) {
            *o -= c;
        }
    }
    Ok(out)
}

/// Localized-norm profile of a fine field over shrinking patch complements:
/// for each `m`, the unweighted gradient seminorms outside the `m`-th patch
/// of the seed element plus the jump terms over interface elements whose
/// interface and owning bulk element both lie outside. Nonincreasing in `m`.
pub fn decay_profile(
    ctx: &LodContext,
    column: &[f64],
    seed: CoarseElem,
    max_m: usize,
) -> Vec<f64> {
    let full = ctx.dofs.scatter(column);
    let kb = crate::assemble::local_bulk_stiffness();
    let h = ctx.mesh.h;

    // Per fine cell gradient energy with unit coefficient.
    let mut cell_energy = vec![0.0; ctx.mesh.n_cells()];
    for (c, dof) in ctx.dofs.cell_dofs.iter().enumerate() {
        let vals = [full[dof[0]], full[dof[1]], full[dof[2]], full[dof[3]]];
        let mut e = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                e += vals[i] * kb[i][j] * vals[j];
            }
        }
        cell_energy[c] = e;
    }
    // Per fine interface element gradient energy.
    let mut iface_energy = vec![0.0; ctx.mesh.ifaces.len()];
    for (e, dof) in ctx.dofs.iface_elem_dofs.iter().enumerate() {
        let d = full[dof[0]] - full[dof[1]];
        iface_energy[e] = d * d / h;
    }
    // Jump energies per (interface element, side).
    let jump = |e: usize, side: usize| -> f64 {
        let Some(bdof) = ctx.dofs.iface_side_bulk_dofs[e][side] else {
            return 0.0;
        };
        let idof = ctx.dofs.iface_elem_dofs[e];
        let da = full[bdof[0]] - full[idof[0]];
        let db = full[bdof[1]] - full[idof[1]];
        da * (h / 3.0 * da + h / 6.0 * db) + db * (h / 6.0 * da + h / 3.0 * db)
    };

    let mut profile = Vec::with_capacity(max_m);
    for m in 1..=max_m {
        let patch = ctx.topo.patch(seed, m);
        let mut bulk_in = vec![false; ctx.topo.n_bulk];
        for &t in &patch.bulk {
            bulk_in[t] = true;
        }
        let mut iface_in = vec![false; ctx.topo.n_iface];
        for &t in &patch.iface {
            iface_in[t] = true;
        }
        let mut total = 0.0;
        for (c, &e) in cell_energy.iter().enumerate() {
            if !bulk_in[ctx.topo.cell_parent[c]] {
                total += e;
            }
        }
        for (e, &v) in iface_energy.iter().enumerate() {
            if !iface_in[ctx.topo.iface_parent[e]] {
                total += v;
            }
        }
        for t1 in 0..ctx.topo.n_iface {
            if iface_in[t1] {
                continue;
            }
            for &t0 in &ctx.topo.iface_owners[t1] {
                if bulk_in[t0] {
                    continue;
                }
                for &e in &ctx.topo.iface_members[t1] {
                    for (side, owner) in ctx.mesh.ifaces[e].owners.iter().enumerate() {
                        if owner.map(|c| ctx.topo.cell_parent[c]) == Some(t0) {
                            total += jump(e, side);
                        }
                    }
                }
            }
        }
        profile.push(total.max(0.0).sqrt());
    }
    profile
}
