//! Degree-of-freedom layout for the fitted fine space: bulk DOFs are broken
//! along interfaces (one copy per adjacent bulk segment at every node), while
//! interface DOFs are continuous across junction points. Boundary nodes are
//! masked to honor the homogeneous Dirichlet condition.

use crate::geometry::MixedDomain;
use crate::mesh::MeshPair;
use std::collections::HashMap;
use std::io::Write;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum DofError {
    #[error("mesh and domain disagree: {0}")]
    Mismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A bulk DOF is a (node, bulk segment) pair; an interface DOF is a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BulkDof {
    pub node: usize,
    pub segment: usize,
}

#[derive(Debug, Clone)]
pub struct DofMap {
    pub n_bulk_dofs: usize,
    pub n_iface_dofs: usize,
    pub bulk_dofs: Vec<BulkDof>,
    /// Grid node of each interface DOF (offset by `n_bulk_dofs` in DOF ids).
    pub iface_dofs: Vec<usize>,
    /// DOF id -> free index, `None` for Dirichlet-masked DOFs.
    pub free_index: Vec<Option<usize>>,
    /// Free index -> DOF id.
    pub free_dofs: Vec<usize>,
    /// Per fine cell: DOF ids of its four corners (SW, SE, NE, NW order).
    pub cell_dofs: Vec<[usize; 4]>,
    /// Per fine interface element: the two interface DOF ids.
    pub iface_elem_dofs: Vec<[usize; 2]>,
    /// Per fine interface element and side: the matching bulk DOF pair.
    pub iface_side_bulk_dofs: Vec<[Option<[usize; 2]>; 2]>,
    /// Fine cells of the DOF's segment incident to each bulk DOF.
    pub bulk_dof_cells: Vec<Vec<usize>>,
    /// Fine interface elements incident to each interface DOF.
    pub iface_dof_elems: Vec<Vec<usize>>,
}

impl DofMap {
    pub fn n_dofs(&self) -> usize {
        self.n_bulk_dofs + self.n_iface_dofs
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn is_bulk(&self, dof: usize) -> bool {
        dof < self.n_bulk_dofs
    }

    pub fn dof_node(&self, dof: usize) -> usize {
        if dof < self.n_bulk_dofs {
            self.bulk_dofs[dof].node
        } else {
            self.iface_dofs[dof - self.n_bulk_dofs]
        }
    }

    /// Scatter a free-indexed vector to full DOF length (masked entries zero).
    pub fn scatter(&self, free: &[f64]) -> Vec<f64> {
        assert_eq!(free.len(), self.n_free());
        let mut full = vec![0.0; self.n_dofs()];
        for (fi, &dof) in self.free_dofs.iter().enumerate() {
            full[dof] = free[fi];
        }
        full
    }

    /// Writes a solution vector (free-indexed) as `x,y,segment,value` CSV.
    pub fn write_solution_csv(
        &self,
        mesh: &MeshPair,
        free: &[f64],
        path: &std::path::Path,
    ) -> Result<(), DofError> {
        let full = self.scatter(free);
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "x,y,segment,value")?;
        for (d, bd) in self.bulk_dofs.iter().enumerate() {
            let p = mesh.node_point(bd.node);
            writeln!(out, "{},{},{},{:.17e}", p[0], p[1], bd.segment, full[d])?;
        }
        for (k, &node) in self.iface_dofs.iter().enumerate() {
            let p = mesh.node_point(node);
            let seg = self
                .iface_dof_elems[k]
                .first()
                .map(|&e| mesh.ifaces[e].segment)
                .unwrap_or(0);
            writeln!(out, "{},{},{},{:.17e}", p[0], p[1], seg, full[self.n_bulk_dofs + k])?;
        }
        Ok(())
    }
}

/// Builds the DOF map of the fitted space on a mesh. DOFs are ordered by
/// segment id and then by node id, bulk before interface.
pub fn build_space(mesh: &MeshPair, domain: &MixedDomain) -> Result<DofMap, DofError> {
    let n_segments = domain.n_bulk;
    if let Some(&max_tag) = mesh.cell_segment.iter().max() {
        if max_tag >= n_segments {
            return Err(DofError::Mismatch(format!(
                "mesh references bulk segment {max_tag}, domain has {n_segments}"
            )));
        }
    }
    if mesh
        .ifaces
        .iter()
        .any(|e| e.segment >= domain.interfaces.len())
    {
        return Err(DofError::Mismatch("mesh references unknown interface segment".into()));
    }

    // Segments present at each node.
    let mut node_segments: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_nodes()];
    for c in 0..mesh.n_cells() {
        let seg = mesh.cell_segment[c];
        for nd in mesh.cell_nodes(c) {
            if !node_segments[nd].contains(&seg) {
                node_segments[nd].push(seg);
            }
        }
    }

    // Bulk DOFs grouped by segment, node-ordered within each segment.
    let mut bulk_dofs = Vec::new();
    let mut bulk_lookup: HashMap<(usize, usize), usize> = HashMap::new();
    for seg in 0..n_segments {
        for node in 0..mesh.n_nodes() {
            if node_segments[node].contains(&seg) {
                bulk_lookup.insert((node, seg), bulk_dofs.len());
                bulk_dofs.push(BulkDof { node, segment: seg });
            }
        }
    }
    let n_bulk_dofs = bulk_dofs.len();

    // Interface DOFs: one per node on the interface mesh, grouped by the
    // first segment that reaches the node (junction nodes are shared).
    let mut iface_dofs = Vec::new();
    let mut iface_lookup: HashMap<usize, usize> = HashMap::new();
    for e in &mesh.ifaces {
        for nd in e.nodes {
            iface_lookup.entry(nd).or_insert_with(|| {
                iface_dofs.push(nd);
                iface_dofs.len() - 1
            });
        }
    }
    let n_iface_dofs = iface_dofs.len();
    let n_dofs = n_bulk_dofs + n_iface_dofs;

    // Dirichlet mask and free enumeration.
    let mut free_index = vec![None; n_dofs];
    let mut free_dofs = Vec::new();
    for (d, bd) in bulk_dofs.iter().enumerate() {
        if !mesh.node_on_boundary(bd.node) {
            free_index[d] = Some(free_dofs.len());
            free_dofs.push(d);
        }
    }
    for (k, &node) in iface_dofs.iter().enumerate() {
        if !mesh.node_on_boundary(node) {
            free_index[n_bulk_dofs + k] = Some(free_dofs.len());
            free_dofs.push(n_bulk_dofs + k);
        }
    }

    // Element connectivity.
    let mut cell_dofs = Vec::with_capacity(mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let seg = mesh.cell_segment[c];
        let nd = mesh.cell_nodes(c);
        cell_dofs.push([
            bulk_lookup[&(nd[0], seg)],
            bulk_lookup[&(nd[1], seg)],
            bulk_lookup[&(nd[2], seg)],
            bulk_lookup[&(nd[3], seg)],
        ]);
    }
    let mut iface_elem_dofs = Vec::with_capacity(mesh.ifaces.len());
    let mut iface_side_bulk_dofs = Vec::with_capacity(mesh.ifaces.len());
    for e in &mesh.ifaces {
        iface_elem_dofs.push([
            n_bulk_dofs + iface_lookup[&e.nodes[0]],
            n_bulk_dofs + iface_lookup[&e.nodes[1]],
        ]);
        let mut sides = [None, None];
        for (s, owner) in e.owners.iter().enumerate() {
            if let Some(c) = owner {
                let seg = mesh.cell_segment[*c];
                sides[s] = Some([
                    bulk_lookup[&(e.nodes[0], seg)],
                    bulk_lookup[&(e.nodes[1], seg)],
                ]);
            }
        }
        iface_side_bulk_dofs.push(sides);
    }

    // Incidence used for patch membership and intrinsic distances.
    let mut bulk_dof_cells: Vec<Vec<usize>> = vec![Vec::new(); n_bulk_dofs];
    for (c, dofs) in cell_dofs.iter().enumerate() {
        for &d in dofs {
            bulk_dof_cells[d].push(c);
        }
    }
    let mut iface_dof_elems: Vec<Vec<usize>> = vec![Vec::new(); n_iface_dofs];
    for (e, dofs) in iface_elem_dofs.iter().enumerate() {
        for &d in dofs {
            iface_dof_elems[d - n_bulk_dofs].push(e);
        }
    }

    Ok(DofMap {
        n_bulk_dofs,
        n_iface_dofs,
        bulk_dofs,
        iface_dofs,
        free_index,
        free_dofs,
        cell_dofs,
        iface_elem_dofs,
        iface_side_bulk_dofs,
        bulk_dof_cells,
        iface_dof_elems,
    })
}
