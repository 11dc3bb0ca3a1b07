//! Quantities of interest (coarse element averages), the constraint operator,
//! and quasi-interpolation onto the coarse scale.
//!
//! Two interpolation modes exist. The nodal mode averages the element
//! quantities of interest around each coarse grid node (zero on the outer
//! boundary) and requires a structured coarse mesh. The partition-of-unity
//! mode weights the quantities of interest with normalized intrinsic-distance
//! functions over first-order patch covers; it works for agglomerated coarse
//! elements as well. Both depend on their argument only through its
//! quantities of interest.

use crate::dof::DofMap;
use crate::mesh::{CoarseTopology, MeshHierarchy, MeshPair};
use crate::sparse::CsrMatrix;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum InterpError {
    #[error("partition of unity denominator vanished at a free DOF")]
    DegenerateCover,
    #[error("nodal interpolation requires a structured coarse mesh")]
    NotStructured,
}

/// Element averages of a free-DOF field, bulk elements first.
pub fn qoi(dofs: &DofMap, mesh: &MeshPair, topo: &CoarseTopology, v: &[f64]) -> Vec<f64> {
    assert_eq!(v.len(), dofs.n_free());
    let mut out = vec![0.0; topo.n_elements()];
    let quarter_cell = 0.25 * mesh.h * mesh.h;
    for (t, members) in topo.bulk_members.iter().enumerate() {
        let mut acc = 0.0;
        for &c in members {
            for &d in &dofs.cell_dofs[c] {
                if let Some(fi) = dofs.free_index[d] {
                    acc += v[fi];
                }
            }
        }
        out[t] = acc * quarter_cell / topo.bulk_measure[t];
    }
    let half_len = 0.5 * mesh.h;
    for (t, members) in topo.iface_members.iter().enumerate() {
        let mut acc = 0.0;
        for &e in members {
            for &d in &dofs.iface_elem_dofs[e] {
                if let Some(fi) = dofs.free_index[d] {
                    acc += v[fi];
                }
            }
        }
        out[topo.n_bulk + t] = acc * half_len / topo.iface_measure[t];
    }
    out
}

/// Assembles the constraint operator: row `T` of the result applied to a
/// free-DOF vector gives the `T`-th quantity of interest.
pub fn assemble_constraints(dofs: &DofMap, mesh: &MeshPair, topo: &CoarseTopology) -> CsrMatrix {
    let mut triplets = Vec::new();
    let quarter_cell = 0.25 * mesh.h * mesh.h;
    for (t, members) in topo.bulk_members.iter().enumerate() {
        let scale = quarter_cell / topo.bulk_measure[t];
        for &c in members {
            for &d in &dofs.cell_dofs[c] {
                if let Some(fi) = dofs.free_index[d] {
                    triplets.push((t, fi, scale));
                }
            }
        }
    }
    let half_len = 0.5 * mesh.h;
    for (t, members) in topo.iface_members.iter().enumerate() {
        let scale = half_len / topo.iface_measure[t];
        for &e in members {
            for &d in &dofs.iface_elem_dofs[e] {
                if let Some(fi) = dofs.free_index[d] {
                    triplets.push((topo.n_bulk + t, fi, scale));
                }
            }
        }
    }
    CsrMatrix::from_triplets(topo.n_elements(), dofs.n_free(), &triplets)
}

/// Nodal quasi-interpolation on a structured coarse mesh, prolonged to the
/// fine free DOFs.
pub struct NodalInterp {
    n_bulk: usize,
    /// Coarse bulk cells around each coarse grid node (empty => boundary node).
    node_cells: Vec<Vec<usize>>,
    /// Coarse interface elements around each coarse interface node.
    iface_node_elems: HashMap<usize, Vec<usize>>,
    /// Free bulk DOF evaluation plan: (free index, 4 coarse nodes, 4 weights).
    plan_bulk: Vec<(usize, [usize; 4], [f64; 4])>,
    /// Free interface DOF plan: (free index, coarse node a, coarse node b, t).
    plan_iface: Vec<(usize, usize, usize, f64)>,
}

impl NodalInterp {
    pub fn build(hier: &MeshHierarchy, dofs: &DofMap) -> NodalInterp {
        let coarse = &hier.coarse;
        let fine = &hier.fine;
        let r = hier.refinement;

        let mut node_cells = vec![Vec::new(); coarse.n_nodes()];
        for nd in 0..coarse.n_nodes() {
            if !coarse.node_on_boundary(nd) {
                node_cells[nd] = coarse.node_cells(nd);
            }
        }

        let mut iface_node_elems: HashMap<usize, Vec<usize>> = HashMap::new();
        for (e, el) in coarse.ifaces.iter().enumerate() {
            for nd in el.nodes {
                if !coarse.node_on_boundary(nd) {
                    iface_node_elems.entry(nd).or_default().push(e);
                }
            }
        }

        let mut plan_bulk = Vec::new();
        for (d, bd) in dofs.bulk_dofs.iter().enumerate() {
            let Some(fi) = dofs.free_index[d] else { continue };
            let (ix, iy) = fine.node_coords(bd.node);
            let ccx = (ix / r).min(coarse.nx - 1);
            let ccy = (iy / r).min(coarse.ny - 1);
            let sx = ix as f64 / r as f64 - ccx as f64;
            let sy = iy as f64 / r as f64 - ccy as f64;
            let nodes = [
                coarse.node_id(ccx, ccy),
                coarse.node_id(ccx + 1, ccy),
                coarse.node_id(ccx + 1, ccy + 1),
                coarse.node_id(ccx, ccy + 1),
            ];
            let weights = [
                (1.0 - sx) * (1.0 - sy),
                sx * (1.0 - sy),
                sx * sy,
                (1.0 - sx) * sy,
            ];
            plan_bulk.push((fi, nodes, weights));
        }

        let mut plan_iface = Vec::new();
        for (k, &node) in dofs.iface_dofs.iter().enumerate() {
            let d = dofs.n_bulk_dofs + k;
            let Some(fi) = dofs.free_index[d] else { continue };
            let e = dofs.iface_dof_elems[k][0];
            let seg = fine.ifaces[e].segment;
            let offset = e - fine.iface_seg_offsets[seg];
            let ce = coarse.iface_seg_offsets[seg] + offset / r;
            let (ca, cb) = (coarse.ifaces[ce].nodes[0], coarse.ifaces[ce].nodes[1]);
            let pa = coarse.node_point(ca);
            let pb = coarse.node_point(cb);
            let p = fine.node_point(node);
            let len2 = (pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2);
            let t = (((p[0] - pa[0]) * (pb[0] - pa[0]) + (p[1] - pa[1]) * (pb[1] - pa[1])) / len2)
                .clamp(0.0, 1.0);
            plan_iface.push((fi, ca, cb, t));
        }

        NodalInterp {
            n_bulk: hier.topology.n_bulk,
            node_cells,
            iface_node_elems,
            plan_bulk,
            plan_iface,
        }
    }

    pub fn apply(&self, q: &[f64], n_free: usize) -> Vec<f64> {
        let mut node_vals = vec![0.0; self.node_cells.len()];
        for (nd, cells) in self.node_cells.iter().enumerate() {
            if !cells.is_empty() {
                node_vals[nd] = cells.iter().map(|&c| q[c]).sum::<f64>() / cells.len() as f64;
            }
        }
        let mut iface_vals: HashMap<usize, f64> = HashMap::new();
        for (nd, elems) in &self.iface_node_elems {
            let v = elems.iter().map(|&e| q[self.n_bulk + e]).sum::<f64>() / elems.len() as f64;
            iface_vals.insert(*nd, v);
        }
        let mut out = vec![0.0; n_free];
        for (fi, nodes, weights) in &self.plan_bulk {
            let mut v = 0.0;
            for k in 0..4 {
                v += weights[k] * node_vals[nodes[k]];
            }
            out[*fi] = v;
        }
        for (fi, ca, cb, t) in &self.plan_iface {
            let va = iface_vals.get(ca).copied().unwrap_or(0.0);
            let vb = iface_vals.get(cb).copied().unwrap_or(0.0);
            out[*fi] = (1.0 - t) * va + t * vb;
        }
        out
    }
}

/// Partition-of-unity quasi-interpolation from intrinsic distance functions
/// over first-order patch covers, evaluated at the fine DOFs.
pub struct PouInterp {
    /// Normalized weight of each coarse element at the free DOFs it covers.
    lambda: Vec<Vec<(usize, f64)>>,
}

impl PouInterp {
    pub fn build(
        mesh: &MeshPair,
        dofs: &DofMap,
        topo: &CoarseTopology,
    ) -> Result<PouInterp, InterpError> {
        let mut raw: Vec<Vec<(usize, f64)>> = Vec::with_capacity(topo.n_elements());

        for t in 0..topo.n_bulk {
            let mut cover_elems = vec![t];
            cover_elems.extend(topo.bulk_neighbors(t).iter().copied());
            let mut in_cover = vec![false; mesh.n_cells()];
            for &ct in &cover_elems {
                for &c in &topo.bulk_members[ct] {
                    in_cover[c] = true;
                }
            }
            raw.push(bulk_distance(mesh, dofs, &in_cover));
        }
        for t in 0..topo.n_iface {
            let mut cover_elems = vec![t];
            cover_elems.extend(topo.iface_element_neighbors(t).iter().copied());
            let mut in_cover = vec![false; mesh.ifaces.len()];
            for &ct in &cover_elems {
                for &e in &topo.iface_members[ct] {
                    in_cover[e] = true;
                }
            }
            raw.push(iface_distance(mesh, dofs, &in_cover));
        }

        // Normalize per codimension.
        let mut denom = vec![0.0; dofs.n_free()];
        for lam in raw.iter().take(topo.n_bulk) {
            for &(fi, v) in lam {
                denom[fi] += v;
            }
        }
        let mut denom_iface = vec![0.0; dofs.n_free()];
        for lam in raw.iter().skip(topo.n_bulk) {
            for &(fi, v) in lam {
                denom_iface[fi] += v;
            }
        }
        for (fi, &dof) in dofs.free_dofs.iter().enumerate() {
            let d = if dofs.is_bulk(dof) { denom[fi] } else { denom_iface[fi] };
            if d <= 0.0 {
                return Err(InterpError::DegenerateCover);
            }
        }
        let mut lambda = raw;
        for (t, lam) in lambda.iter_mut().enumerate() {
            let dn = if t < topo.n_bulk { &denom } else { &denom_iface };
            for (fi, v) in lam.iter_mut() {
                *v /= dn[*fi];
            }
            lam.retain(|&(_, v)| v != 0.0);
        }
        Ok(PouInterp { lambda })
    }

    pub fn apply(&self, q: &[f64], n_free: usize) -> Vec<f64> {
        assert_eq!(q.len(), self.lambda.len());
        let mut out = vec![0.0; n_free];
        for (t, lam) in self.lambda.iter().enumerate() {
            if q[t] == 0.0 {
                continue;
            }
            for &(fi, v) in lam {
                out[fi] += q[t] * v;
            }
        }
        out
    }

}

/// Intrinsic distance of every bulk DOF in the cover to the cover boundary,
/// computed by multi-source Dijkstra on the segment-respecting node graph
/// (axis and diagonal edges within cover cells of the DOF's segment).
fn bulk_distance(mesh: &MeshPair, dofs: &DofMap, in_cover: &[bool]) -> Vec<(usize, f64)> {
    // Cover DOFs and sources.
    let mut local: HashMap<usize, usize> = HashMap::new();
    let mut cover_dofs: Vec<usize> = Vec::new();
    for (d, cells) in dofs.bulk_dof_cells.iter().enumerate() {
        if cells.iter().any(|&c| in_cover[c]) {
            local.insert(d, cover_dofs.len());
            cover_dofs.push(d);
        }
    }
    let mut dist = vec![f64::INFINITY; cover_dofs.len()];
    let mut heap = std::collections::BinaryHeap::new();
    for (l, &d) in cover_dofs.iter().enumerate() {
        let node = dofs.bulk_dofs[d].node;
        let outside = dofs.bulk_dof_cells[d].iter().any(|&c| !in_cover[c]);
        if outside || mesh.node_on_boundary(node) {
            dist[l] = 0.0;
            heap.push((std::cmp::Reverse(ordered(0.0)), l));
        }
    }
    // Edges: core grid edges and diagonals of cover cells.
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); cover_dofs.len()];
    let side = mesh.h;
    let diag = mesh.h * std::f64::consts::SQRT_2;
    for (c, cdofs) in dofs.cell_dofs.iter().enumerate() {
        if !in_cover[c] {
            continue;
        }
        let l: Vec<usize> = cdofs.iter().map(|d| local[d]).collect();
        for (a, b, w) in [
            (0, 1, side),
            (1, 2, side),
            (3, 2, side),
            (0, 3, side),
            (0, 2, diag),
            (1, 3, diag),
        ] {
            adj[l[a]].push((l[b], w));
            adj[l[b]].push((l[a], w));
        }
    }
    while let Some((std::cmp::Reverse(dk), u)) = heap.pop() {
        let du = unordered(dk);
        if du > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = du + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push((std::cmp::Reverse(ordered(nd)), v));
            }
        }
    }
    let mut out = Vec::new();
    for (l, &d) in cover_dofs.iter().enumerate() {
        if let Some(fi) = dofs.free_index[d] {
            if dist[l] > 0.0 && dist[l].is_finite() {
                out.push((fi, dist[l]));
            }
        }
    }
    out
}

/// Intrinsic distance of interface DOFs in the cover to the cover boundary,
/// along the interface graph (continuity across junctions).
fn iface_distance(mesh: &MeshPair, dofs: &DofMap, in_cover: &[bool]) -> Vec<(usize, f64)> {
    let mut local: HashMap<usize, usize> = HashMap::new();
    let mut cover_dofs: Vec<usize> = Vec::new();
    for (k, elems) in dofs.iface_dof_elems.iter().enumerate() {
        if elems.iter().any(|&e| in_cover[e]) {
            local.insert(k, cover_dofs.len());
            cover_dofs.push(k);
        }
    }
    let mut dist = vec![f64::INFINITY; cover_dofs.len()];
    let mut heap = std::collections::BinaryHeap::new();
    for (l, &k) in cover_dofs.iter().enumerate() {
        let node = dofs.iface_dofs[k];
        let outside = dofs.iface_dof_elems[k].iter().any(|&e| !in_cover[e]);
        if outside || mesh.node_on_boundary(node) {
            dist[l] = 0.0;
            heap.push((std::cmp::Reverse(ordered(0.0)), l));
        }
    }
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); cover_dofs.len()];
    for (e, el) in mesh.ifaces.iter().enumerate() {
        if !in_cover[e] {
            continue;
        }
        let a = mesh.node_point(el.nodes[0]);
        let b = mesh.node_point(el.nodes[1]);
        let w = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let ka = dofs.iface_elem_dofs[e][0] - dofs.n_bulk_dofs;
        let kb = dofs.iface_elem_dofs[e][1] - dofs.n_bulk_dofs;
        let (la, lb) = (local[&ka], local[&kb]);
        adj[la].push((lb, w));
        adj[lb].push((la, w));
    }
    while let Some((std::cmp::Reverse(dk), u)) = heap.pop() {
        let du = unordered(dk);
        if du > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = du + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push((std::cmp::Reverse(ordered(nd)), v));
            }
        }
    }
    let mut out = Vec::new();
    for (l, &k) in cover_dofs.iter().enumerate() {
        if let Some(fi) = dofs.free_index[dofs.n_bulk_dofs + k] {
            if dist[l] > 0.0 && dist[l].is_finite() {
                out.push((fi, dist[l]));
            }
        }
    }
    out
}

fn ordered(v: f64) -> u64 {
    // Nonnegative finite distances compare correctly through their bits.
    v.to_bits()
}

fn unordered(bits: u64) -> f64 {
    f64::from_bits(bits)
}

/// Either interpolation mode behind one interface.
pub enum Interpolator {
    Nodal(NodalInterp),
    Pou(PouInterp),
}

impl Interpolator {
    pub fn nodal(hier: &MeshHierarchy, dofs: &DofMap) -> Interpolator {
        Interpolator::Nodal(NodalInterp::build(hier, dofs))
    }

    pub fn pou(
        mesh: &MeshPair,
        dofs: &DofMap,
        topo: &CoarseTopology,
    ) -> Result<Interpolator, InterpError> {
        Ok(Interpolator::Pou(PouInterp::build(mesh, dofs, topo)?))
    }

    /// Quasi-interpolates a field with the given quantities of interest.
    pub fn apply(&self, q: &[f64], n_free: usize) -> Vec<f64> {
        match self {
            Interpolator::Nodal(n) => n.apply(q, n_free),
            Interpolator::Pou(p) => p.apply(q, n_free),
        }
    }
}
