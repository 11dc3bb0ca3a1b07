//! Mixed-dimensional geometry: bulk subdomain segments (codim 0), interface
//! segments (codim 1), junction points (codim 2) and their adjacency.
//!
//! Geometry is declared as straight polylines inside a rectangle. Interfaces
//! are split at mutual intersections and kinks; bulk segments are the
//! connected components of the rectangle minus the interfaces; junctions are
//! the points where interfaces meet. Everything downstream (validation,
//! meshing, DOF layout) is derived from this structure.

use serde::Deserialize;
use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

const EPS: f64 = 1e-9;
const KEY_SCALE: f64 = 1e9;

#[derive(Error, Debug)]
pub enum GeometryError {
    #[error("failed to read geometry file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse geometry file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid domain rectangle [{0}, {1}] x [{2}, {3}]")]
    BadRectangle(f64, f64, f64, f64),
    #[error("polyline {0} has fewer than two points")]
    ShortPolyline(usize),
    #[error("polyline {0} has a zero-length piece at point {1}")]
    ZeroLengthPiece(usize, usize),
    #[error("polyline {0} leaves the domain rectangle")]
    OutsideDomain(usize),
    #[error("overlapping or duplicate interface pieces")]
    OverlappingInterfaces,
    #[error("interface endpoint ({0}, {1}) dangles inside the bulk")]
    DanglingEndpoint(f64, f64),
    #[error("interface segment is not straight after splitting")]
    NonStraightSegment,
}

/// Identifier of a subdomain segment: codimension and index within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SegmentId {
    pub codim: u8,
    pub index: usize,
}

impl SegmentId {
    pub fn bulk(index: usize) -> Self {
        SegmentId { codim: 0, index }
    }
    pub fn interface(index: usize) -> Self {
        SegmentId { codim: 1, index }
    }
    pub fn junction(index: usize) -> Self {
        SegmentId { codim: 2, index }
    }
}

/// Declarative geometry input: a rectangle and a list of interface polylines.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    /// `[x0, y0, x1, y1]` corners of the domain rectangle.
    pub domain: [f64; 4],
    /// Each interface is a polyline given by its vertex coordinates.
    pub interfaces: Vec<Vec<[f64; 2]>>,
}

impl GeometrySpec {
    pub fn from_toml_str(text: &str) -> Result<Self, GeometryError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, GeometryError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn unit_square(interfaces: Vec<Vec<[f64; 2]>>) -> Self {
        GeometrySpec { domain: [0.0, 0.0, 1.0, 1.0], interfaces }
    }

    /// The cross: lines x = mid and y = mid through the rectangle.
    pub fn cross() -> Self {
        GeometrySpec::unit_square(vec![
            vec![[0.5, 0.0], [0.5, 1.0]],
            vec![[0.0, 0.5], [1.0, 0.5]],
        ])
    }
}

/// A straight interface segment after splitting, with exact endpoints.
#[derive(Debug, Clone)]
pub struct InterfaceSegment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl InterfaceSegment {
    pub fn length(&self) -> f64 {
        ((self.b[0] - self.a[0]).powi(2) + (self.b[1] - self.a[1]).powi(2)).sqrt()
    }

    pub fn is_axis_aligned(&self) -> bool {
        (self.a[0] - self.b[0]).abs() < EPS || (self.a[1] - self.b[1]).abs() < EPS
    }

    pub fn point_at(&self, t: f64) -> [f64; 2] {
        [
            self.a[0] + t * (self.b[0] - self.a[0]),
            self.a[1] + t * (self.b[1] - self.a[1]),
        ]
    }

    /// Unit normal (one of the two).
    pub fn normal(&self) -> [f64; 2] {
        let dx = self.b[0] - self.a[0];
        let dy = self.b[1] - self.a[1];
        let len = (dx * dx + dy * dy).sqrt();
        [-dy / len, dx / len]
    }
}

/// Adjacency relation between codimensions: `e0` pairs (bulk, interface),
/// `e1` pairs (interface, junction).
#[derive(Debug, Clone, Default)]
pub struct AdjacencyGraph {
    pub e0: Vec<(usize, usize)>,
    pub e1: Vec<(usize, usize)>,
}

/// Label grid used for exact point-to-bulk-segment queries on grid-aligned
/// geometry (and approximate queries otherwise).
#[derive(Debug, Clone)]
pub struct LabelGrid {
    pub n: usize,
    pub labels: Vec<usize>,
    pub exact: bool,
}

/// The mixed-dimensional domain: rectangle, segments of codimension 0/1/2 and
/// their adjacency. Immutable after construction and safe to share.
#[derive(Debug, Clone)]
pub struct MixedDomain {
    pub rect: [f64; 4],
    pub n_bulk: usize,
    pub bulk_areas: Vec<f64>,
    pub interfaces: Vec<InterfaceSegment>,
    pub junctions: Vec<[f64; 2]>,
    pub adjacency: AdjacencyGraph,
    pub(crate) labels: LabelGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Interface endpoint neither on the boundary nor at a junction.
    DanglingInterface { interface: usize, point: [f64; 2] },
    /// Claimed pair (bulk, interface) fails the boundary-containment check.
    AdjacencyMismatch { bulk: usize, interface: usize },
    /// Observed adjacency missing from the graph.
    MissingAdjacency { bulk: usize, interface: usize },
    /// Junction incident to fewer than two interface segments.
    IsolatedJunction { junction: usize },
    /// Bulk areas do not partition the rectangle.
    AreaMismatch { total: f64, expected: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DanglingInterface { interface, point } => write!(
                f,
                "interface {interface} endpoint ({}, {}) dangles in the bulk",
                point[0], point[1]
            ),
            Violation::AdjacencyMismatch { bulk, interface } => write!(
                f,
                "interface {interface} is not contained in the boundary of bulk segment {bulk}"
            ),
            Violation::MissingAdjacency { bulk, interface } => write!(
                f,
                "bulk segment {bulk} borders interface {interface} but the pair is not in E0"
            ),
            Violation::IsolatedJunction { junction } => {
                write!(f, "junction {junction} touches fewer than two interfaces")
            }
            Violation::AreaMismatch { total, expected } => {
                write!(f, "bulk areas sum to {total}, expected {expected}")
            }
        }
    }
}

fn key(p: [f64; 2]) -> (i64, i64) {
    ((p[0] * KEY_SCALE).round() as i64, (p[1] * KEY_SCALE).round() as i64)
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn cross2(ox: f64, oy: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)
}

/// Piece of a polyline between two consecutive or split points.
#[derive(Debug, Clone)]
struct Piece {
    a: [f64; 2],
    b: [f64; 2],
}

impl Piece {
    fn dir(&self) -> [f64; 2] {
        let dx = self.b[0] - self.a[0];
        let dy = self.b[1] - self.a[1];
        let len = (dx * dx + dy * dy).sqrt();
        [dx / len, dy / len]
    }

    /// Parameter of `p` on the piece if it lies on it (interior or endpoint).
    fn param_of(&self, p: [f64; 2]) -> Option<f64> {
        let dx = self.b[0] - self.a[0];
        let dy = self.b[1] - self.a[1];
        let len2 = dx * dx + dy * dy;
        let t = ((p[0] - self.a[0]) * dx + (p[1] - self.a[1]) * dy) / len2;
        if !(-EPS..=1.0 + EPS).contains(&t) {
            return None;
        }
        let proj = [self.a[0] + t * dx, self.a[1] + t * dy];
        if dist2(proj, p) < EPS * EPS {
            Some(t.clamp(0.0, 1.0))
        } else {
            None
        }
    }
}

/// Proper intersection point of two pieces, if any (excluding collinear overlap).
fn piece_intersection(p: &Piece, q: &Piece) -> Result<Option<[f64; 2]>, GeometryError> {
    let d1 = cross2(p.a[0], p.a[1], p.b[0], p.b[1], q.a[0], q.a[1]);
    let d2 = cross2(p.a[0], p.a[1], p.b[0], p.b[1], q.b[0], q.b[1]);
    let lp = dist2(p.a, p.b).sqrt();
    let lq = dist2(q.a, q.b).sqrt();
    let tol = EPS * lp.max(lq);
    if d1.abs() < tol && d2.abs() < tol {
        // Collinear: any interior overlap is an error, shared endpoints are fine.
        let mut shared = 0;
        for e in [q.a, q.b] {
            if let Some(t) = p.param_of(e) {
                if t > EPS && t < 1.0 - EPS {
                    return Err(GeometryError::OverlappingInterfaces);
                }
                shared += 1;
            }
        }
        for e in [p.a, p.b] {
            if let Some(t) = q.param_of(e) {
                if t > EPS && t < 1.0 - EPS {
                    return Err(GeometryError::OverlappingInterfaces);
                }
            }
        }
        if shared == 2 {
            return Err(GeometryError::OverlappingInterfaces);
        }
        return Ok(None);
    }
    if d1 == d2 {
        return Ok(None);
    }
    // Zero crossing of q against the supporting line of p, validated on both.
    let s = d1 / (d1 - d2);
    let cand = [
        q.a[0] + s * (q.b[0] - q.a[0]),
        q.a[1] + s * (q.b[1] - q.a[1]),
    ];
    match (p.param_of(cand), q.param_of(cand)) {
        (Some(_), Some(_)) => Ok(Some(cand)),
        _ => Ok(None),
    }
}

fn on_rect_boundary(p: [f64; 2], rect: [f64; 4]) -> bool {
    let [x0, y0, x1, y1] = rect;
    (p[0] - x0).abs() < EPS || (p[0] - x1).abs() < EPS || (p[1] - y0).abs() < EPS || (p[1] - y1).abs() < EPS
}

/// Builds the mixed-dimensional domain from a declarative geometry spec.
///
/// Interfaces are split at mutual intersections, endpoint touches and kinks;
/// collinear degree-2 joints are merged away. Bulk segments are computed by
/// flood fill on a probe grid that is exact whenever the interfaces are
/// axis-aligned with grid-representable coordinates.
pub fn build_domain(spec: &GeometrySpec) -> Result<MixedDomain, GeometryError> {
    let [x0, y0, x1, y1] = spec.domain;
    if !(x1 > x0 + EPS && y1 > y0 + EPS) || !spec.domain.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::BadRectangle(x0, y0, x1, y1));
    }
    let rect = spec.domain;

    // 1. Polylines -> pieces.
    let mut pieces = Vec::new();
    for (pi, poly) in spec.interfaces.iter().enumerate() {
        if poly.len() < 2 {
            return Err(GeometryError::ShortPolyline(pi));
        }
        for p in poly {
            if p[0] < x0 - EPS || p[0] > x1 + EPS || p[1] < y0 - EPS || p[1] > y1 + EPS {
                return Err(GeometryError::OutsideDomain(pi));
            }
        }
        for w in poly.windows(2) {
            if dist2(w[0], w[1]) < EPS * EPS {
                return Err(GeometryError::ZeroLengthPiece(pi, 0));
            }
            pieces.push(Piece { a: w[0], b: w[1] });
        }
    }

    // 2. Cut points: pairwise intersections and endpoints lying on other pieces.
    let mut cuts: Vec<Vec<f64>> = vec![Vec::new(); pieces.len()];
    for i in 0..pieces.len() {
        for j in (i + 1)..pieces.len() {
            if let Some(p) = piece_intersection(&pieces[i], &pieces[j])? {
                if let Some(t) = pieces[i].param_of(p) {
                    cuts[i].push(t);
                }
                if let Some(t) = pieces[j].param_of(p) {
                    cuts[j].push(t);
                }
            }
            for e in [pieces[j].a, pieces[j].b] {
                if let Some(t) = pieces[i].param_of(e) {
                    cuts[i].push(t);
                }
            }
            for e in [pieces[i].a, pieces[i].b] {
                if let Some(t) = pieces[j].param_of(e) {
                    cuts[j].push(t);
                }
            }
        }
    }

    // 3. Split pieces at cut parameters.
    let mut subs: Vec<Piece> = Vec::new();
    for (i, piece) in pieces.iter().enumerate() {
        let mut ts = cuts[i].clone();
        ts.push(0.0);
        ts.push(1.0);
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let len = dist2(piece.a, piece.b).sqrt();
        ts.dedup_by(|a, b| (*a - *b).abs() * len < EPS);
        let points: Vec<[f64; 2]> = ts
            .iter()
            .map(|&t| {
                [
                    piece.a[0] + t * (piece.b[0] - piece.a[0]),
                    piece.a[1] + t * (piece.b[1] - piece.a[1]),
                ]
            })
            .collect();
        for w in points.windows(2) {
            subs.push(Piece { a: w[0], b: w[1] });
        }
    }

    // Duplicate sub-segments are overlapping interfaces.
    {
        let mut seen = HashMap::new();
        for s in &subs {
            let (ka, kb) = (key(s.a), key(s.b));
            let k = if ka <= kb { (ka, kb) } else { (kb, ka) };
            if seen.insert(k, ()).is_some() {
                return Err(GeometryError::OverlappingInterfaces);
            }
        }
    }

    // 4. Point registry with incidence.
    let mut point_ids: HashMap<(i64, i64), usize> = HashMap::new();
    let mut points: Vec<[f64; 2]> = Vec::new();
    let mut incident: Vec<Vec<usize>> = Vec::new();
    let mut sub_ends: Vec<[usize; 2]> = Vec::new();
    for (si, s) in subs.iter().enumerate() {
        let mut ids = [0usize; 2];
        for (slot, p) in [s.a, s.b].into_iter().enumerate() {
            let id = *point_ids.entry(key(p)).or_insert_with(|| {
                points.push(p);
                incident.push(Vec::new());
                points.len() - 1
            });
            incident[id].push(si);
            ids[slot] = id;
        }
        sub_ends.push(ids);
    }

    // 5. Merge collinear degree-2 joints; the rest are junctions or boundary ends.
    let mut junction_pts: Vec<[f64; 2]> = Vec::new();
    let mut junction_of_point: HashMap<usize, usize> = HashMap::new();
    let mut merge: Vec<usize> = (0..subs.len()).collect();
    fn find(merge: &mut Vec<usize>, i: usize) -> usize {
        if merge[i] != i {
            let r = find(merge, merge[i]);
            merge[i] = r;
            r
        } else {
            i
        }
    }
    for (pid, inc) in incident.iter().enumerate() {
        let p = points[pid];
        let boundary = on_rect_boundary(p, rect);
        if inc.len() == 1 {
            if !boundary {
                return Err(GeometryError::DanglingEndpoint(p[0], p[1]));
            }
            continue;
        }
        let collinear_pair = inc.len() == 2 && {
            let d0 = subs[inc[0]].dir();
            let d1 = subs[inc[1]].dir();
            (d0[0] * d1[1] - d0[1] * d1[0]).abs() < EPS
        };
        if collinear_pair && !boundary {
            let (a, b) = (find(&mut merge, inc[0]), find(&mut merge, inc[1]));
            merge[a] = b;
        } else {
            junction_of_point.insert(pid, 0);
            junction_pts.push(p);
        }
    }
    // Re-number junctions deterministically by coordinate key.
    let mut jorder: Vec<usize> = junction_of_point.keys().copied().collect();
    jorder.sort_by_key(|&pid| key(points[pid]));
    junction_pts.clear();
    for (ji, pid) in jorder.iter().enumerate() {
        junction_pts.push(points[*pid]);
        junction_of_point.insert(*pid, ji);
    }

    // 6. Interface segments = merge groups; each must be a straight chain.
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for si in 0..subs.len() {
        let r = find(&mut merge, si);
        groups.entry(r).or_default().push(si);
    }
    let mut interfaces: Vec<InterfaceSegment> = Vec::new();
    for (_, members) in groups {
        // Chain endpoints: points used an odd number of times within the group.
        let mut count: HashMap<usize, usize> = HashMap::new();
        for &si in &members {
            for pid in sub_ends[si] {
                *count.entry(pid).or_insert(0) += 1;
            }
        }
        let ends: Vec<usize> = count.iter().filter(|(_, c)| **c == 1).map(|(p, _)| *p).collect();
        if ends.len() != 2 {
            return Err(GeometryError::NonStraightSegment);
        }
        let (a, b) = (points[ends[0]], points[ends[1]]);
        let seg = InterfaceSegment { a, b };
        let chord = seg.length();
        let total: f64 = members.iter().map(|&si| dist2(subs[si].a, subs[si].b).sqrt()).sum();
        if (total - chord).abs() > EPS * (1.0 + chord) {
            return Err(GeometryError::NonStraightSegment);
        }
        interfaces.push(seg);
    }
    interfaces.sort_by_key(|s| {
        let (ka, kb) = (key(s.a), key(s.b));
        if ka <= kb {
            (ka, kb)
        } else {
            (kb, ka)
        }
    });
    // Canonical orientation: a <= b by key.
    for s in interfaces.iter_mut() {
        if key(s.a) > key(s.b) {
            std::mem::swap(&mut s.a, &mut s.b);
        }
    }

    // 7. E1: interface endpoints at junctions.
    let mut e1 = Vec::new();
    for (ii, s) in interfaces.iter().enumerate() {
        for p in [s.a, s.b] {
            if let Some(pid) = point_ids.get(&key(p)) {
                if let Some(&ji) = junction_of_point.get(pid) {
                    e1.push((ii, ji));
                }
            }
        }
    }
    e1.sort_unstable();
    e1.dedup();

    // 8. Bulk segments by flood fill on the probe grid.
    let labels = flood_fill(&interfaces, rect);
    let n_bulk = labels.labels.iter().copied().max().map_or(1, |m| m + 1);
    let cell = (x1 - x0) / labels.n as f64;
    let cell_area = cell * ((y1 - y0) / labels.n as f64);
    let mut bulk_areas = vec![0.0; n_bulk];
    for &l in &labels.labels {
        bulk_areas[l] += cell_area;
    }

    // 9. E0 by two-sided sampling along each interface.
    let mut domain = MixedDomain {
        rect,
        n_bulk,
        bulk_areas,
        interfaces,
        junctions: junction_pts,
        adjacency: AdjacencyGraph::default(),
        labels,
    };
    let mut e0 = Vec::new();
    for ii in 0..domain.interfaces.len() {
        for b in domain.sample_adjacent_bulk(ii) {
            e0.push((b, ii));
        }
    }
    e0.sort_unstable();
    e0.dedup();
    domain.adjacency = AdjacencyGraph { e0, e1 };
    Ok(domain)
}

/// Connected components of the rectangle minus the interfaces, on a probe grid.
fn flood_fill(interfaces: &[InterfaceSegment], rect: [f64; 4]) -> LabelGrid {
    let (n, exact) = probe_resolution(interfaces, rect);
    let [x0, y0, x1, y1] = rect;
    let hx = (x1 - x0) / n as f64;
    let hy = (y1 - y0) / n as f64;
    let center = |i: usize, j: usize| [x0 + (i as f64 + 0.5) * hx, y0 + (j as f64 + 0.5) * hy];
    // Strict sign test: the open probe between cell centers properly crosses
    // the interface. Probe endpoints sitting exactly on a line (degenerate for
    // the geometries meshes accept) do not block.
    let blocked = |p: [f64; 2], q: [f64; 2]| {
        for s in interfaces {
            let d1 = cross2(p[0], p[1], q[0], q[1], s.a[0], s.a[1]);
            let d2 = cross2(p[0], p[1], q[0], q[1], s.b[0], s.b[1]);
            let d3 = cross2(s.a[0], s.a[1], s.b[0], s.b[1], p[0], p[1]);
            let d4 = cross2(s.a[0], s.a[1], s.b[0], s.b[1], q[0], q[1]);
            if (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) {
                return true;
            }
            if d1 == 0.0 && d2 == 0.0 && d3 == 0.0 && d4 == 0.0 {
                return true;
            }
        }
        false
    };
    let mut labels = vec![usize::MAX; n * n];
    let mut next = 0usize;
    for start in 0..n * n {
        if labels[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        labels[start] = next;
        while let Some(c) = stack.pop() {
            let (i, j) = (c % n, c / n);
            let mut push = |ni: usize, nj: usize| {
                let nc = nj * n + ni;
                if labels[nc] == usize::MAX && !blocked(center(i, j), center(ni, nj)) {
                    labels[nc] = next;
                    stack.push(nc);
                }
            };
            if i > 0 {
                push(i - 1, j);
            }
            if i + 1 < n {
                push(i + 1, j);
            }
            if j > 0 {
                push(i, j - 1);
            }
            if j + 1 < n {
                push(i, j + 1);
            }
        }
        next += 1;
    }
    LabelGrid { n, labels, exact }
}

/// Smallest grid resolution that puts every axis-aligned interface on grid
/// lines; falls back to a fixed fine probe when the geometry is not aligned.
fn probe_resolution(interfaces: &[InterfaceSegment], rect: [f64; 4]) -> (usize, bool) {
    let [x0, y0, x1, y1] = rect;
    let w = x1 - x0;
    let h = y1 - y0;
    let aligned = interfaces.iter().all(|s| s.is_axis_aligned());
    if aligned {
        'res: for n in 1..=4096usize {
            for s in interfaces {
                for p in [s.a, s.b] {
                    let fx = (p[0] - x0) / w * n as f64;
                    let fy = (p[1] - y0) / h * n as f64;
                    if (fx - fx.round()).abs() > 1e-7 || (fy - fy.round()).abs() > 1e-7 {
                        continue 'res;
                    }
                }
            }
            return (n, true);
        }
    }
    (256, false)
}

impl MixedDomain {
    pub fn width(&self) -> f64 {
        self.rect[2] - self.rect[0]
    }

    pub fn height(&self) -> f64 {
        self.rect[3] - self.rect[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Bulk segment containing the point. Exact for aligned geometry provided
    /// the point does not sit on an interface; approximate otherwise.
    pub fn segment_of_point(&self, p: [f64; 2]) -> Option<usize> {
        let [x0, y0, x1, y1] = self.rect;
        if p[0] < x0 - EPS || p[0] > x1 + EPS || p[1] < y0 - EPS || p[1] > y1 + EPS {
            return None;
        }
        let n = self.labels.n;
        let fx = ((p[0] - x0) / self.width() * n as f64).floor();
        let fy = ((p[1] - y0) / self.height() * n as f64).floor();
        let i = (fx as isize).clamp(0, n as isize - 1) as usize;
        let j = (fy as isize).clamp(0, n as isize - 1) as usize;
        Some(self.labels.labels[j * n + i])
    }

    /// Probe resolution on which the bulk labeling is exact, if any.
    pub fn alignment_resolution(&self) -> Option<usize> {
        if self.labels.exact {
            Some(self.labels.n)
        } else {
            None
        }
    }

    pub fn junction_index(&self, p: [f64; 2]) -> Option<usize> {
        self.junctions.iter().position(|j| dist2(*j, p) < EPS * EPS)
    }

    /// Bulk segments observed on either side of an interface by sampling.
    fn sample_adjacent_bulk(&self, interface: usize) -> Vec<usize> {
        let s = &self.interfaces[interface];
        let nrm = s.normal();
        let delta = 0.25 * self.width().min(self.height()) / self.labels.n as f64;
        let k = 2 * self.labels.n.clamp(8, 128);
        let mut out = Vec::new();
        for step in 0..k {
            let t = (step as f64 + 0.5) / k as f64;
            let p = s.point_at(t);
            for sgn in [1.0, -1.0] {
                let q = [p[0] + sgn * delta * nrm[0], p[1] + sgn * delta * nrm[1]];
                if let Some(b) = self.segment_of_point(q) {
                    out.push(b);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Checks all structural invariants; an empty list means the domain is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();

        // Interface endpoints end on the boundary or at junctions.
        for (ii, s) in self.interfaces.iter().enumerate() {
            for p in [s.a, s.b] {
                if !on_rect_boundary(p, self.rect) && self.junction_index(p).is_none() {
                    v.push(Violation::DanglingInterface { interface: ii, point: p });
                }
            }
        }

        // Junction degree.
        for (ji, jp) in self.junctions.iter().enumerate() {
            let deg = self
                .interfaces
                .iter()
                .filter(|s| dist2(s.a, *jp) < EPS * EPS || dist2(s.b, *jp) < EPS * EPS)
                .count();
            if deg < 2 {
                v.push(Violation::IsolatedJunction { junction: ji });
            }
        }

        // Claimed adjacency: every sample of the interface must see the bulk
        // segment on one of its sides; observed pairs must be claimed.
        for ii in 0..self.interfaces.len() {
            let s = &self.interfaces[ii];
            let nrm = s.normal();
            let delta = 0.25 * self.width().min(self.height()) / self.labels.n as f64;
            let k = 2 * self.labels.n.clamp(8, 128);
            let claimed: Vec<usize> = self
                .adjacency
                .e0
                .iter()
                .filter(|(_, j)| *j == ii)
                .map(|(b, _)| *b)
                .collect();
            let mut observed = Vec::new();
            let mut covered = vec![true; claimed.len()];
            for step in 0..k {
                let t = (step as f64 + 0.5) / k as f64;
                let p = s.point_at(t);
                let mut sides = Vec::new();
                for sgn in [1.0, -1.0] {
                    let q = [p[0] + sgn * delta * nrm[0], p[1] + sgn * delta * nrm[1]];
                    if let Some(b) = self.segment_of_point(q) {
                        sides.push(b);
                        observed.push(b);
                    }
                }
                for (ci, b) in claimed.iter().enumerate() {
                    if !sides.contains(b) {
                        covered[ci] = false;
                    }
                }
            }
            observed.sort_unstable();
            observed.dedup();
            for (ci, b) in claimed.iter().enumerate() {
                if !covered[ci] {
                    v.push(Violation::AdjacencyMismatch { bulk: *b, interface: ii });
                }
            }
            for b in observed {
                if !claimed.contains(&b) {
                    v.push(Violation::MissingAdjacency { bulk: b, interface: ii });
                }
            }
        }

        // Partition of the rectangle.
        let total: f64 = self.bulk_areas.iter().sum();
        if (total - self.area()).abs() > 1e-12 * self.area() {
            v.push(Violation::AreaMismatch { total, expected: self.area() });
        }

        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_interface_list_gives_single_segment() {
        let d = build_domain(&GeometrySpec::unit_square(vec![])).unwrap();
        assert_eq!(d.n_bulk, 1);
        assert_eq!(d.interfaces.len(), 0);
        assert_eq!(d.junctions.len(), 0);
        assert!(d.validate().is_empty());
    }

    #[test]
    fn cross_splits_into_quadrants() {
        let d = build_domain(&GeometrySpec::cross()).unwrap();
        assert_eq!(d.n_bulk, 4);
        assert_eq!(d.interfaces.len(), 4);
        assert_eq!(d.junctions.len(), 1);
        // Every interface borders exactly two quadrants.
        for ii in 0..4 {
            let n = d.adjacency.e0.iter().filter(|(_, j)| *j == ii).count();
            assert_eq!(n, 2, "interface {ii}");
        }
        // All four interfaces meet the single junction.
        assert_eq!(d.adjacency.e1.len(), 4);
        assert!(d.validate().is_empty());
    }

    #[test]
    fn figure_one_layout() {
        // A full-width diagonal line plus a transversal half-line ending on it.
        let spec = GeometrySpec::unit_square(vec![
            vec![[0.0, 0.2], [1.0, 0.8]],
            vec![[0.4, 1.0], [0.5, 0.5]],
        ]);
        let d = build_domain(&spec).unwrap();
        assert_eq!(d.n_bulk, 3);
        assert_eq!(d.interfaces.len(), 3);
        assert_eq!(d.junctions.len(), 1);
        assert!(d.alignment_resolution().is_none());
    }

    #[test]
    fn dangling_endpoint_rejected() {
        let spec = GeometrySpec::unit_square(vec![vec![[0.25, 0.5], [0.75, 0.5]]]);
        assert!(matches!(
            build_domain(&spec),
            Err(GeometryError::DanglingEndpoint(_, _))
        ));
    }

    #[test]
    fn overlapping_interfaces_rejected() {
        let spec = GeometrySpec::unit_square(vec![
            vec![[0.0, 0.5], [1.0, 0.5]],
            vec![[0.25, 0.5], [0.75, 0.5]],
        ]);
        assert!(matches!(build_domain(&spec), Err(GeometryError::OverlappingInterfaces)));
        let dup = GeometrySpec::unit_square(vec![
            vec![[0.0, 0.5], [1.0, 0.5]],
            vec![[0.0, 0.5], [1.0, 0.5]],
        ]);
        assert!(matches!(build_domain(&dup), Err(GeometryError::OverlappingInterfaces)));
    }

    #[test]
    fn splitting_is_idempotent() {
        let once = build_domain(&GeometrySpec::cross()).unwrap();
        let pre_split = GeometrySpec::unit_square(vec![
            vec![[0.5, 0.0], [0.5, 0.5]],
            vec![[0.5, 0.5], [0.5, 1.0]],
            vec![[0.0, 0.5], [0.5, 0.5]],
            vec![[0.5, 0.5], [1.0, 0.5]],
        ]);
        let twice = build_domain(&pre_split).unwrap();
        assert_eq!(once.n_bulk, twice.n_bulk);
        assert_eq!(once.interfaces.len(), twice.interfaces.len());
        assert_eq!(once.junctions.len(), twice.junctions.len());
        assert_eq!(once.adjacency.e0, twice.adjacency.e0);
        assert_eq!(once.adjacency.e1, twice.adjacency.e1);
    }

    #[test]
    fn partition_area_is_exact() {
        for spec in [GeometrySpec::cross(), GeometrySpec::unit_square(vec![vec![[0.0, 0.25], [1.0, 0.25]]])] {
            let d = build_domain(&spec).unwrap();
            let total: f64 = d.bulk_areas.iter().sum();
            assert!((total - d.area()).abs() <= 1e-12 * d.area());
        }
    }

    #[test]
    fn adjacency_sampling_matches_construction() {
        let d = build_domain(&GeometrySpec::cross()).unwrap();
        for (b, i) in &d.adjacency.e0 {
            let seen = d.sample_adjacent_bulk(*i);
            assert!(seen.contains(b));
        }
    }

    #[test]
    fn hand_built_dangling_interface_is_flagged() {
        let mut d = build_domain(&GeometrySpec::unit_square(vec![vec![[0.0, 0.5], [1.0, 0.5]]])).unwrap();
        // Shrink the interface so its right endpoint floats in the bulk.
        d.interfaces[0].b = [0.75, 0.5];
        let viols = d.validate();
        assert!(viols
            .iter()
            .any(|v| matches!(v, Violation::DanglingInterface { interface: 0, .. })));
    }

    #[test]
    fn partial_coverage_adjacency_is_flagged() {
        // Claim adjacency of the left-half interface with the full-height right
        // bulk segment of a T-shaped geometry: samples beyond the T fail.
        let spec = GeometrySpec::unit_square(vec![
            vec![[0.5, 0.0], [0.5, 1.0]],
            vec![[0.0, 0.5], [0.5, 0.5]],
        ]);
        let mut d = build_domain(&spec).unwrap();
        // Right bulk segment index: sample a point clearly on the right.
        let right = d.segment_of_point([0.9, 0.9]).unwrap();
        // Interface index of the left horizontal piece.
        let horiz = d
            .interfaces
            .iter()
            .position(|s| (s.a[1] - 0.5).abs() < 1e-12 && (s.b[1] - 0.5).abs() < 1e-12)
            .unwrap();
        d.adjacency.e0.push((right, horiz));
        d.adjacency.e0.sort_unstable();
        let viols = d.validate();
        assert!(viols
            .iter()
            .any(|v| matches!(v, Violation::AdjacencyMismatch { bulk, interface }
                if *bulk == right && *interface == horiz)));
    }

    #[test]
    fn spec_file_rejects_unknown_keys() {
        let text = "domain = [0.0, 0.0, 1.0, 1.0]\ninterfaces = []\nextra = 1\n";
        assert!(GeometrySpec::from_toml_str(text).is_err());
    }

    #[test]
    fn spec_file_roundtrip() {
        let text = r#"
domain = [0.0, 0.0, 1.0, 1.0]
interfaces = [
  [[0.5, 0.0], [0.5, 1.0]],
  [[0.0, 0.5], [1.0, 0.5]],
]
"#;
        let spec = GeometrySpec::from_toml_str(text).unwrap();
        let d = build_domain(&spec).unwrap();
        assert_eq!(d.n_bulk, 4);
    }

    #[test]
    fn staircase_polyline_builds() {
        // Fine-grid staircase: every kink is a junction, every step a segment.
        let h = 1.0 / 8.0;
        let mut pts = vec![[0.0, 3.0 * h]];
        let mut x = 0.0;
        let mut y = 3.0 * h;
        for k in 0..8 {
            x += h;
            pts.push([x, y]);
            if k % 2 == 1 && k < 7 {
                y += h;
                pts.push([x, y]);
            }
        }
        let d = build_domain(&GeometrySpec::unit_square(vec![pts])).unwrap();
        assert_eq!(d.n_bulk, 2);
        assert!(d.interfaces.len() > 3);
        assert!(d.validate().is_empty());
        assert_eq!(d.alignment_resolution(), Some(8));
    }
}
