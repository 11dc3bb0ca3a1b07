//! Compatible bulk/interface mesh pairs over a mixed domain, coarse/fine
//! hierarchies, element patches, and agglomerated complex-shaped coarse
//! elements.
//!
//! Bulk elements are axis-aligned squares, interface elements are fine grid
//! edges. A [`CoarseTopology`] is the uniform view of a coarse mesh used by
//! the multiscale machinery: it only knows which fine elements compose each
//! coarse element, so structured coarse meshes and agglomerates share all
//! downstream code paths.

use crate::geometry::MixedDomain;
use thiserror::Error;

const ALIGN_TOL: f64 = 1e-9;

#[derive(Error, Debug)]
pub enum MeshError {
    #[error("domain rectangle is not an integer number of cells at resolution {0}")]
    RectangleUnresolvable(usize),
    #[error("interface {0} is not resolvable by the grid at resolution {1}")]
    UnresolvableInterface(usize, usize),
    #[error("refinement factor must be at least 2, got {0}")]
    RefinementTooSmall(usize),
    #[error("agglomerate assignment has wrong length")]
    BadAssignment,
    #[error("agglomerate {0} is disconnected")]
    Disconnected(usize),
    #[error("agglomerate {0} is not simply connected")]
    NotSimplyConnected(usize),
    #[error("coarse interface element {0} is not contained in a single bulk boundary")]
    InconsistentInterfaceOwners(usize),
    #[error("agglomerate {0} cannot be repaired to the minimum size")]
    UnmergeableFragment(usize),
}

/// One fine interface element: a grid edge with its interface segment tag and
/// the bulk cells on its two sides (`None` on the domain boundary).
#[derive(Debug, Clone, PartialEq)]
pub struct IfaceElem {
    pub nodes: [usize; 2],
    pub segment: usize,
    pub owners: [Option<usize>; 2],
}

/// A compatible bulk + interface mesh at one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshPair {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: [f64; 2],
    /// Bulk segment tag per cell, row-major.
    pub cell_segment: Vec<usize>,
    pub ifaces: Vec<IfaceElem>,
    /// Start offsets of each interface segment's elements in `ifaces`.
    pub iface_seg_offsets: Vec<usize>,
}

impl MeshPair {
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn cell_id(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn cell_coords(&self, c: usize) -> (usize, usize) {
        (c % self.nx, c / self.nx)
    }

    pub fn node_id(&self, ix: usize, iy: usize) -> usize {
        iy * (self.nx + 1) + ix
    }

    pub fn node_coords(&self, n: usize) -> (usize, usize) {
        (n % (self.nx + 1), n / (self.nx + 1))
    }

    pub fn node_point(&self, n: usize) -> [f64; 2] {
        let (ix, iy) = self.node_coords(n);
        [self.origin[0] + ix as f64 * self.h, self.origin[1] + iy as f64 * self.h]
    }

    pub fn cell_center(&self, c: usize) -> [f64; 2] {
        let (ix, iy) = self.cell_coords(c);
        [
            self.origin[0] + (ix as f64 + 0.5) * self.h,
            self.origin[1] + (iy as f64 + 0.5) * self.h,
        ]
    }

    pub fn cell_nodes(&self, c: usize) -> [usize; 4] {
        let (ix, iy) = self.cell_coords(c);
        [
            self.node_id(ix, iy),
            self.node_id(ix + 1, iy),
            self.node_id(ix + 1, iy + 1),
            self.node_id(ix, iy + 1),
        ]
    }

    pub fn node_on_boundary(&self, n: usize) -> bool {
        let (ix, iy) = self.node_coords(n);
        ix == 0 || ix == self.nx || iy == 0 || iy == self.ny
    }

    /// Number of bulk cells sharing an interface element (1 or 2).
    pub fn n_of(&self, e: usize) -> usize {
        self.ifaces[e].owners.iter().filter(|o| o.is_some()).count()
    }

    pub fn iface_midpoint(&self, e: usize) -> [f64; 2] {
        let a = self.node_point(self.ifaces[e].nodes[0]);
        let b = self.node_point(self.ifaces[e].nodes[1]);
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }

    /// Cells incident to a node (up to four).
    pub fn node_cells(&self, n: usize) -> Vec<usize> {
        let (ix, iy) = self.node_coords(n);
        let mut out = Vec::with_capacity(4);
        for dy in 0..2usize {
            for dx in 0..2usize {
                if ix >= dx && iy >= dy {
                    let (cx, cy) = (ix - dx, iy - dy);
                    if cx < self.nx && cy < self.ny {
                        out.push(self.cell_id(cx, cy));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Builds the fitted mesh at `n` cells per unit length. All interfaces must be
/// axis-aligned and lie on grid lines of this resolution.
pub fn build_mesh(domain: &MixedDomain, n: usize) -> Result<MeshPair, MeshError> {
    let [x0, y0, _, _] = domain.rect;
    let w = domain.width();
    let hgt = domain.height();
    let fx = w * n as f64;
    let fy = hgt * n as f64;
    if (fx - fx.round()).abs() > ALIGN_TOL || (fy - fy.round()).abs() > ALIGN_TOL {
        return Err(MeshError::RectangleUnresolvable(n));
    }
    let nx = fx.round() as usize;
    let ny = fy.round() as usize;
    let h = 1.0 / n as f64;

    let snap = |v: f64, o: f64| -> Option<usize> {
        let g = (v - o) / h;
        if (g - g.round()).abs() <= ALIGN_TOL * n as f64 {
            Some(g.round() as usize)
        } else {
            None
        }
    };

    let mut mesh = MeshPair {
        nx,
        ny,
        h,
        origin: [x0, y0],
        cell_segment: vec![0; nx * ny],
        ifaces: Vec::new(),
        iface_seg_offsets: Vec::with_capacity(domain.interfaces.len() + 1),
    };

    for (si, s) in domain.interfaces.iter().enumerate() {
        if !s.is_axis_aligned() {
            return Err(MeshError::UnresolvableInterface(si, n));
        }
        let (gxa, gya) = match (snap(s.a[0], x0), snap(s.a[1], y0)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(MeshError::UnresolvableInterface(si, n)),
        };
        let (gxb, gyb) = match (snap(s.b[0], x0), snap(s.b[1], y0)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(MeshError::UnresolvableInterface(si, n)),
        };
        mesh.iface_seg_offsets.push(mesh.ifaces.len());
        if gxa == gxb {
            let k = gxa;
            let (j0, j1) = (gya.min(gyb), gya.max(gyb));
            for j in j0..j1 {
                let owners = [
                    (k > 0).then(|| mesh.cell_id(k - 1, j)),
                    (k < nx).then(|| mesh.cell_id(k, j)),
                ];
                mesh.ifaces.push(IfaceElem {
                    nodes: [mesh.node_id(k, j), mesh.node_id(k, j + 1)],
                    segment: si,
                    owners,
                });
            }
        } else {
            let k = gya;
            let (i0, i1) = (gxa.min(gxb), gxa.max(gxb));
            for i in i0..i1 {
                let owners = [
                    (k > 0).then(|| mesh.cell_id(i, k - 1)),
                    (k < ny).then(|| mesh.cell_id(i, k)),
                ];
                mesh.ifaces.push(IfaceElem {
                    nodes: [mesh.node_id(i, k), mesh.node_id(i + 1, k)],
                    segment: si,
                    owners,
                });
            }
        }
    }
    mesh.iface_seg_offsets.push(mesh.ifaces.len());

    // Bulk tags require the exact labeling; midpoints never sit on interfaces.
    if domain.alignment_resolution().is_none() && !domain.interfaces.is_empty() {
        return Err(MeshError::UnresolvableInterface(0, n));
    }
    for c in 0..mesh.n_cells() {
        mesh.cell_segment[c] = domain
            .segment_of_point(mesh.cell_center(c))
            .expect("cell center inside domain");
    }
    Ok(mesh)
}

/// Element patch of a coarse topology: bulk and interface parts plus the
/// multiplier rows active on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub level: usize,
    pub bulk: Vec<usize>,
    pub iface: Vec<usize>,
}

impl Patch {
    /// Row indices (bulk first, then interface offset by `n_bulk`).
    pub fn rows(&self, n_bulk: usize) -> Vec<usize> {
        let mut rows = self.bulk.clone();
        rows.extend(self.iface.iter().map(|i| n_bulk + i));
        rows
    }

    pub fn contains_bulk(&self, t: usize) -> bool {
        self.bulk.binary_search(&t).is_ok()
    }

    pub fn contains_iface(&self, t: usize) -> bool {
        self.iface.binary_search(&t).is_ok()
    }
}

/// Seed of a patch: one coarse element of either codimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarseElem {
    Bulk(usize),
    Iface(usize),
}

/// Generic coarse mesh view: members and measures of the coarse elements,
/// face/owner incidences, and the closure-adjacency graphs used for patches.
#[derive(Debug, Clone)]
pub struct CoarseTopology {
    pub n_bulk: usize,
    pub n_iface: usize,
    pub bulk_members: Vec<Vec<usize>>,
    pub iface_members: Vec<Vec<usize>>,
    pub bulk_measure: Vec<f64>,
    pub iface_measure: Vec<f64>,
    /// Coarse bulk elements sharing each coarse interface element.
    pub iface_owners: Vec<Vec<usize>>,
    /// Coarse interface elements on the boundary of each coarse bulk element.
    pub bulk_faces: Vec<Vec<usize>>,
    pub cell_parent: Vec<usize>,
    pub iface_parent: Vec<usize>,
    nb_bulk_of_bulk: Vec<Vec<usize>>,
    nb_iface_of_bulk: Vec<Vec<usize>>,
    nb_bulk_of_iface: Vec<Vec<usize>>,
    nb_iface_of_iface: Vec<Vec<usize>>,
}

impl CoarseTopology {
    /// Builds the view from fine-to-coarse parent maps.
    pub fn build(
        fine: &MeshPair,
        cell_parent: Vec<usize>,
        n_bulk: usize,
        iface_parent: Vec<usize>,
        n_iface: usize,
    ) -> Result<CoarseTopology, MeshError> {
        if cell_parent.len() != fine.n_cells() || iface_parent.len() != fine.ifaces.len() {
            return Err(MeshError::BadAssignment);
        }
        let mut bulk_members = vec![Vec::new(); n_bulk];
        for (c, &p) in cell_parent.iter().enumerate() {
            bulk_members[p].push(c);
        }
        let mut iface_members = vec![Vec::new(); n_iface];
        for (e, &p) in iface_parent.iter().enumerate() {
            iface_members[p].push(e);
        }
        let area = fine.h * fine.h;
        let bulk_measure: Vec<f64> = bulk_members.iter().map(|m| m.len() as f64 * area).collect();
        let iface_measure: Vec<f64> = iface_members.iter().map(|m| m.len() as f64 * fine.h).collect();

        // Owners: the bulk parents of the fine side owners. Every fine element
        // of a coarse interface element must see the same owner set, so the
        // whole coarse element lies on the boundary of each owner.
        let mut iface_owners = vec![Vec::new(); n_iface];
        for (t, members) in iface_members.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let owner_set = |e: usize| -> Vec<usize> {
                let mut s: Vec<usize> = fine.ifaces[e]
                    .owners
                    .iter()
                    .flatten()
                    .map(|&c| cell_parent[c])
                    .collect();
                s.sort_unstable();
                s.dedup();
                s
            };
            let first = owner_set(members[0]);
            for &e in &members[1..] {
                if owner_set(e) != first {
                    return Err(MeshError::InconsistentInterfaceOwners(t));
                }
            }
            iface_owners[t] = first;
        }
        let mut bulk_faces = vec![Vec::new(); n_bulk];
        for (t, owners) in iface_owners.iter().enumerate() {
            for &b in owners {
                bulk_faces[b].push(t);
            }
        }

        // Closure adjacency through shared fine nodes.
        let mut node_bulk: Vec<Vec<usize>> = vec![Vec::new(); fine.n_nodes()];
        for (t, members) in bulk_members.iter().enumerate() {
            for &c in members {
                for nd in fine.cell_nodes(c) {
                    if node_bulk[nd].last() != Some(&t) {
                        node_bulk[nd].push(t);
                    }
                }
            }
        }
        let mut node_iface: Vec<Vec<usize>> = vec![Vec::new(); fine.n_nodes()];
        for (t, members) in iface_members.iter().enumerate() {
            for &e in members {
                for nd in fine.ifaces[e].nodes {
                    if node_iface[nd].last() != Some(&t) {
                        node_iface[nd].push(t);
                    }
                }
            }
        }
        let mut nb_bulk_of_bulk = vec![Vec::new(); n_bulk];
        let mut nb_iface_of_bulk = vec![Vec::new(); n_bulk];
        let mut nb_bulk_of_iface = vec![Vec::new(); n_iface];
        let mut nb_iface_of_iface = vec![Vec::new(); n_iface];
        for nd in 0..fine.n_nodes() {
            for &b in &node_bulk[nd] {
                for &b2 in &node_bulk[nd] {
                    if b2 != b {
                        nb_bulk_of_bulk[b].push(b2);
                    }
                }
                for &i in &node_iface[nd] {
                    nb_iface_of_bulk[b].push(i);
                    nb_bulk_of_iface[i].push(b);
                }
            }
            for &i in &node_iface[nd] {
                for &i2 in &node_iface[nd] {
                    if i2 != i {
                        nb_iface_of_iface[i].push(i2);
                    }
                }
            }
        }
        for lists in [
            &mut nb_bulk_of_bulk,
            &mut nb_iface_of_bulk,
            &mut nb_bulk_of_iface,
            &mut nb_iface_of_iface,
        ] {
            for l in lists.iter_mut() {
                l.sort_unstable();
                l.dedup();
            }
        }

        Ok(CoarseTopology {
            n_bulk,
            n_iface,
            bulk_members,
            iface_members,
            bulk_measure,
            iface_measure,
            iface_owners,
            bulk_faces,
            cell_parent,
            iface_parent,
            nb_bulk_of_bulk,
            nb_iface_of_bulk,
            nb_bulk_of_iface,
            nb_iface_of_iface,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.n_bulk + self.n_iface
    }

    /// Bulk elements sharing a fine node with the given bulk element.
    pub fn bulk_neighbors(&self, t: usize) -> &[usize] {
        &self.nb_bulk_of_bulk[t]
    }

    /// Interface elements sharing a fine node with the given interface element.
    pub fn iface_element_neighbors(&self, t: usize) -> &[usize] {
        &self.nb_iface_of_iface[t]
    }

    /// Grows a set of coarse elements by one closure-adjacency layer.
    fn grow(&self, bulk: &mut [bool], iface: &mut [bool]) {
        let cur_bulk: Vec<usize> = (0..self.n_bulk).filter(|&t| bulk[t]).collect();
        let cur_iface: Vec<usize> = (0..self.n_iface).filter(|&t| iface[t]).collect();
        for &t in &cur_bulk {
            for &b in &self.nb_bulk_of_bulk[t] {
                bulk[b] = true;
            }
            for &i in &self.nb_iface_of_bulk[t] {
                iface[i] = true;
            }
        }
        for &t in &cur_iface {
            for &b in &self.nb_bulk_of_iface[t] {
                bulk[b] = true;
            }
            for &i in &self.nb_iface_of_iface[t] {
                iface[i] = true;
            }
        }
    }

    /// `ell`-th order patch around a coarse element. The first layer around a
    /// bulk element consists of its closure bulk neighborhood and the
    /// interface elements on its faces; subsequent layers grow by closure
    /// adjacency across both codimensions. Saturates at the full mesh.
    pub fn patch(&self, seed: CoarseElem, ell: usize) -> Patch {
        assert!(ell >= 1, "patch level must be at least 1");
        let mut bulk = vec![false; self.n_bulk];
        let mut iface = vec![false; self.n_iface];
        match seed {
            CoarseElem::Bulk(t0) => {
                bulk[t0] = true;
                for &b in &self.nb_bulk_of_bulk[t0] {
                    bulk[b] = true;
                }
                for &f in &self.bulk_faces[t0] {
                    iface[f] = true;
                }
            }
            CoarseElem::Iface(t1) => {
                iface[t1] = true;
                for &i in &self.nb_iface_of_iface[t1] {
                    iface[i] = true;
                }
                for &b in &self.nb_bulk_of_iface[t1] {
                    bulk[b] = true;
                }
            }
        }
        for _ in 1..ell {
            self.grow(&mut bulk, &mut iface);
        }
        Patch {
            level: ell,
            bulk: (0..self.n_bulk).filter(|&t| bulk[t]).collect(),
            iface: (0..self.n_iface).filter(|&t| iface[t]).collect(),
        }
    }

    /// Applies one closure-growth step to an existing patch (the recursion
    /// `N_ell = N_1(N_{ell-1})` used by the patch tests).
    pub fn grow_patch(&self, p: &Patch) -> Patch {
        let mut bulk = vec![false; self.n_bulk];
        let mut iface = vec![false; self.n_iface];
        for &t in &p.bulk {
            bulk[t] = true;
        }
        for &t in &p.iface {
            iface[t] = true;
        }
        self.grow(&mut bulk, &mut iface);
        Patch {
            level: p.level + 1,
            bulk: (0..self.n_bulk).filter(|&t| bulk[t]).collect(),
            iface: (0..self.n_iface).filter(|&t| iface[t]).collect(),
        }
    }

    /// Smallest `ell` at which every patch covers the whole mesh.
    pub fn saturation_level(&self) -> usize {
        let mut ell = 1;
        loop {
            let mut all = true;
            for t in 0..self.n_bulk {
                let p = self.patch(CoarseElem::Bulk(t), ell);
                if p.bulk.len() != self.n_bulk || p.iface.len() != self.n_iface {
                    all = false;
                    break;
                }
            }
            if all {
                for t in 0..self.n_iface {
                    let p = self.patch(CoarseElem::Iface(t), ell);
                    if p.bulk.len() != self.n_bulk || p.iface.len() != self.n_iface {
                        all = false;
                        break;
                    }
                }
            }
            if all {
                return ell;
            }
            ell += 1;
            assert!(ell <= self.n_elements() + 2, "patch growth failed to saturate");
        }
    }
}

/// Coarse/fine mesh hierarchy obtained by uniform refinement.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    pub coarse: MeshPair,
    pub fine: MeshPair,
    pub refinement: usize,
    pub topology: CoarseTopology,
}

impl MeshHierarchy {
    /// Coarse mesh at `n_coarse` cells per unit length, fine mesh refined by `r`.
    pub fn build(domain: &MixedDomain, n_coarse: usize, r: usize) -> Result<MeshHierarchy, MeshError> {
        if r < 2 {
            return Err(MeshError::RefinementTooSmall(r));
        }
        let coarse = build_mesh(domain, n_coarse)?;
        let fine = build_mesh(domain, n_coarse * r)?;
        let mut cell_parent = vec![0usize; fine.n_cells()];
        for c in 0..fine.n_cells() {
            let (ix, iy) = fine.cell_coords(c);
            cell_parent[c] = coarse.cell_id(ix / r, iy / r);
        }
        // Interface elements are enumerated per segment in the same direction
        // on both levels, so the parent is the index within the segment / r.
        let mut iface_parent = vec![0usize; fine.ifaces.len()];
        for si in 0..coarse.iface_seg_offsets.len() - 1 {
            let c0 = coarse.iface_seg_offsets[si];
            let f0 = fine.iface_seg_offsets[si];
            let f1 = fine.iface_seg_offsets[si + 1];
            for k in 0..(f1 - f0) {
                iface_parent[f0 + k] = c0 + k / r;
            }
        }
        let topology = CoarseTopology::build(
            &fine,
            cell_parent,
            coarse.n_cells(),
            iface_parent,
            coarse.ifaces.len(),
        )?;
        Ok(MeshHierarchy { coarse, fine, refinement: r, topology })
    }
}

/// Ball-regularity data of one agglomerated coarse element.
#[derive(Debug, Clone)]
pub struct BallCheck {
    pub inscribed: f64,
    pub circumscribed: f64,
    pub ok: bool,
}

/// Regularity report of an agglomerated coarse mesh.
#[derive(Debug, Clone)]
pub struct RegularityReport {
    pub rho0: f64,
    pub rho1: f64,
    pub h_coarse: f64,
    pub bulk: Vec<BallCheck>,
    pub iface: Vec<BallCheck>,
}

impl RegularityReport {
    pub fn all_ok(&self) -> bool {
        self.bulk.iter().chain(self.iface.iter()).all(|c| c.ok)
    }
}

/// Agglomerated coarse mesh: topology plus regularity report.
#[derive(Debug, Clone)]
pub struct Agglomeration {
    pub topology: CoarseTopology,
    pub report: RegularityReport,
}

/// Builds an agglomerated coarse mesh from a fine-cell assignment. Interface
/// coarse elements are derived as maximal connected runs of fine interface
/// elements with a constant pair of adjacent agglomerates. Each agglomerate is
/// checked for connectivity, simple connectivity, and ball regularity
/// `rho0 * H <= R <= R' <= rho1 * H`.
pub fn agglomerate(
    fine: &MeshPair,
    assignment: &[usize],
    rho0: f64,
    rho1: f64,
    h_coarse: f64,
) -> Result<Agglomeration, MeshError> {
    if assignment.len() != fine.n_cells() {
        return Err(MeshError::BadAssignment);
    }
    let n_bulk = assignment.iter().copied().max().map_or(0, |m| m + 1);

    // Connectivity (edge-adjacent cells of equal label).
    let mut seen = vec![false; fine.n_cells()];
    let mut comp_of = vec![usize::MAX; n_bulk];
    for c in 0..fine.n_cells() {
        if seen[c] {
            continue;
        }
        let label = assignment[c];
        if comp_of[label] != usize::MAX {
            return Err(MeshError::Disconnected(label));
        }
        comp_of[label] = c;
        let mut stack = vec![c];
        seen[c] = true;
        while let Some(cur) = stack.pop() {
            let (ix, iy) = fine.cell_coords(cur);
            let mut push = |jx: usize, jy: usize| {
                let nc = fine.cell_id(jx, jy);
                if !seen[nc] && assignment[nc] == label {
                    seen[nc] = true;
                    stack.push(nc);
                }
            };
            if ix > 0 {
                push(ix - 1, iy);
            }
            if ix + 1 < fine.nx {
                push(ix + 1, iy);
            }
            if iy > 0 {
                push(ix, iy - 1);
            }
            if iy + 1 < fine.ny {
                push(ix, iy + 1);
            }
        }
    }

    // Simple connectivity via the Euler characteristic V - E + F = 1.
    let mut members = vec![Vec::new(); n_bulk];
    for (c, &l) in assignment.iter().enumerate() {
        members[l].push(c);
    }
    for (l, cells) in members.iter().enumerate() {
        let mut verts = std::collections::HashSet::new();
        let mut edges = std::collections::HashSet::new();
        for &c in cells {
            let nd = fine.cell_nodes(c);
            for v in nd {
                verts.insert(v);
            }
            for (a, b) in [(nd[0], nd[1]), (nd[1], nd[2]), (nd[3], nd[2]), (nd[0], nd[3])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let chi = verts.len() as i64 - edges.len() as i64 + cells.len() as i64;
        if chi != 1 {
            return Err(MeshError::NotSimplyConnected(l));
        }
    }

    // Interface agglomerates: constant owner pair, connected runs.
    let pair_of = |e: usize| -> (usize, usize) {
        let o = fine.ifaces[e].owners;
        let a = o[0].map_or(usize::MAX, |c| assignment[c]);
        let b = o[1].map_or(usize::MAX, |c| assignment[c]);
        (a.min(b), a.max(b))
    };
    let mut iface_parent = vec![usize::MAX; fine.ifaces.len()];
    let mut node_elems: std::collections::HashMap<usize, Vec<usize>> = std::collections::HashMap::new();
    for (e, el) in fine.ifaces.iter().enumerate() {
        for nd in el.nodes {
            node_elems.entry(nd).or_default().push(e);
        }
    }
    let mut n_iface = 0usize;
    for e0 in 0..fine.ifaces.len() {
        if iface_parent[e0] != usize::MAX {
            continue;
        }
        let key = pair_of(e0);
        let id = n_iface;
        n_iface += 1;
        let mut stack = vec![e0];
        iface_parent[e0] = id;
        while let Some(e) = stack.pop() {
            for nd in fine.ifaces[e].nodes {
                for &e2 in &node_elems[&nd] {
                    if iface_parent[e2] == usize::MAX && pair_of(e2) == key {
                        iface_parent[e2] = id;
                        stack.push(e2);
                    }
                }
            }
        }
    }

    let topology = CoarseTopology::build(fine, assignment.to_vec(), n_bulk, iface_parent, n_iface)?;

    // Ball regularity. Candidate centers are fine nodes and cell centers of
    // the element; the inscribed and circumscribed radii are each optimized
    // over the candidates.
    let mut bulk_checks = Vec::with_capacity(n_bulk);
    for cells in &topology.bulk_members {
        let in_set: std::collections::HashSet<usize> = cells.iter().copied().collect();
        let mut boundary_edges: Vec<([f64; 2], [f64; 2])> = Vec::new();
        for &c in cells {
            let (ix, iy) = fine.cell_coords(c);
            let p = |gx: usize, gy: usize| fine.node_point(fine.node_id(gx, gy));
            let mut side = |nb: Option<usize>, a: [f64; 2], b: [f64; 2]| {
                if nb.is_none_or(|n| !in_set.contains(&n)) {
                    boundary_edges.push((a, b));
                }
            };
            side((ix > 0).then(|| fine.cell_id(ix - 1, iy)), p(ix, iy), p(ix, iy + 1));
            side(
                (ix + 1 < fine.nx).then(|| fine.cell_id(ix + 1, iy)),
                p(ix + 1, iy),
                p(ix + 1, iy + 1),
            );
            side((iy > 0).then(|| fine.cell_id(ix, iy - 1)), p(ix, iy), p(ix + 1, iy));
            side(
                (iy + 1 < fine.ny).then(|| fine.cell_id(ix, iy + 1)),
                p(ix, iy + 1),
                p(ix + 1, iy + 1),
            );
        }
        let mut candidates: Vec<[f64; 2]> = Vec::new();
        let mut verts: Vec<[f64; 2]> = Vec::new();
        for &c in cells {
            candidates.push(fine.cell_center(c));
            for nd in fine.cell_nodes(c) {
                let p = fine.node_point(nd);
                candidates.push(p);
                verts.push(p);
            }
        }
        let seg_dist = |p: [f64; 2], (a, b): ([f64; 2], [f64; 2])| -> f64 {
            let dx = b[0] - a[0];
            let dy = b[1] - a[1];
            let len2 = dx * dx + dy * dy;
            let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
            let q = [a[0] + t * dx, a[1] + t * dy];
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
        };
        let mut r_in: f64 = 0.0;
        let mut r_out = f64::INFINITY;
        for &cand in &candidates {
            let d_bnd = boundary_edges
                .iter()
                .map(|e| seg_dist(cand, *e))
                .fold(f64::INFINITY, f64::min);
            r_in = r_in.max(d_bnd);
            let d_far = verts
                .iter()
                .map(|v| ((cand[0] - v[0]).powi(2) + (cand[1] - v[1]).powi(2)).sqrt())
                .fold(0.0f64, f64::max);
            r_out = r_out.min(d_far);
        }
        let ok = r_in >= rho0 * h_coarse - 1e-12 && r_out <= rho1 * h_coarse + 1e-12;
        bulk_checks.push(BallCheck { inscribed: r_in, circumscribed: r_out, ok });
    }

    // Interface elements: intrinsic (arc-length) balls along the run.
    let mut iface_checks = Vec::with_capacity(n_iface);
    for members_e in &topology.iface_members {
        let total = members_e.len() as f64 * fine.h;
        // Node positions along the run by BFS from one extreme node.
        let mut incident: std::collections::HashMap<usize, Vec<usize>> = std::collections::HashMap::new();
        for &e in members_e {
            for nd in fine.ifaces[e].nodes {
                incident.entry(nd).or_default().push(e);
            }
        }
        let start = *incident
            .iter()
            .filter(|(_, es)| es.len() == 1)
            .map(|(nd, _)| nd)
            .min()
            .unwrap_or(incident.keys().min().unwrap());
        let mut pos: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
        pos.insert(start, 0.0);
        let mut stack = vec![start];
        while let Some(nd) = stack.pop() {
            for &e in &incident[&nd] {
                for other in fine.ifaces[e].nodes {
                    if !pos.contains_key(&other) {
                        let p = pos[&nd] + fine.h;
                        pos.insert(other, p);
                        stack.push(other);
                    }
                }
            }
        }
        let mut r_in: f64 = 0.0;
        let mut r_out = f64::INFINITY;
        for &s in pos.values() {
            r_in = r_in.max(s.min(total - s));
            r_out = r_out.min(s.max(total - s));
        }
        let ok = r_in >= rho0 * h_coarse - 1e-12 && r_out <= rho1 * h_coarse + 1e-12;
        iface_checks.push(BallCheck { inscribed: r_in, circumscribed: r_out, ok });
    }

    Ok(Agglomeration {
        topology,
        report: RegularityReport {
            rho0,
            rho1,
            h_coarse,
            bulk: bulk_checks,
            iface: iface_checks,
        },
    })
}

const MIN_FRAGMENT_FRACTION: f64 = 0.25;

/// Block-based agglomerate assignment: fine cells are grouped by nominal
/// `H`-blocks intersected with bulk segments, then fragments smaller than a
/// quarter block are merged into the neighboring fragment of the same segment
/// with the longest shared boundary.
pub fn block_assignment(fine: &MeshPair, cells_per_block: usize) -> Result<Vec<usize>, MeshError> {
    let bx = fine.nx.div_ceil(cells_per_block);
    let seg_count = fine.cell_segment.iter().copied().max().unwrap_or(0) + 1;
    let coarse_key = |c: usize| -> usize {
        let (ix, iy) = fine.cell_coords(c);
        let block = (iy / cells_per_block) * bx + ix / cells_per_block;
        block * seg_count + fine.cell_segment[c]
    };

    // Connected components of equal (block, segment) key.
    let mut label = vec![usize::MAX; fine.n_cells()];
    let mut n_label = 0usize;
    for c0 in 0..fine.n_cells() {
        if label[c0] != usize::MAX {
            continue;
        }
        let key = coarse_key(c0);
        let id = n_label;
        n_label += 1;
        let mut stack = vec![c0];
        label[c0] = id;
        while let Some(c) = stack.pop() {
            let (ix, iy) = fine.cell_coords(c);
            let mut push = |jx: usize, jy: usize| {
                let nc = fine.cell_id(jx, jy);
                if label[nc] == usize::MAX && coarse_key(nc) == key {
                    label[nc] = id;
                    stack.push(nc);
                }
            };
            if ix > 0 {
                push(ix - 1, iy);
            }
            if ix + 1 < fine.nx {
                push(ix + 1, iy);
            }
            if iy > 0 {
                push(ix, iy - 1);
            }
            if iy + 1 < fine.ny {
                push(ix, iy + 1);
            }
        }
    }

    // Merge undersized fragments into same-segment neighbors.
    let min_cells = ((cells_per_block * cells_per_block) as f64 * MIN_FRAGMENT_FRACTION).ceil() as usize;
    loop {
        let mut sizes = vec![0usize; n_label];
        for &l in &label {
            sizes[l] += 1;
        }
        let Some(small) = (0..n_label).find(|&l| sizes[l] > 0 && sizes[l] < min_cells) else {
            break;
        };
        // Shared boundary lengths with same-segment neighbors.
        let mut border: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
        for c in 0..fine.n_cells() {
            if label[c] != small {
                continue;
            }
            let (ix, iy) = fine.cell_coords(c);
            let mut look = |jx: usize, jy: usize| {
                let nc = fine.cell_id(jx, jy);
                if label[nc] != small && fine.cell_segment[nc] == fine.cell_segment[c] {
                    *border.entry(label[nc]).or_insert(0) += 1;
                }
            };
            if ix > 0 {
                look(ix - 1, iy);
            }
            if ix + 1 < fine.nx {
                look(ix + 1, iy);
            }
            if iy > 0 {
                look(ix, iy - 1);
            }
            if iy + 1 < fine.ny {
                look(ix, iy + 1);
            }
        }
        let Some((&target, _)) = border.iter().max_by_key(|(l, n)| (**n, usize::MAX - **l)) else {
            return Err(MeshError::UnmergeableFragment(small));
        };
        for l in label.iter_mut() {
            if *l == small {
                *l = target;
            }
        }
    }

    // Compact labels in order of first appearance.
    let mut remap = vec![usize::MAX; n_label];
    let mut next = 0usize;
    for l in label.iter_mut() {
        if remap[*l] == usize::MAX {
            remap[*l] = next;
            next += 1;
        }
        *l = remap[*l];
    }
    Ok(label)
}
