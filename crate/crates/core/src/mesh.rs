//! Hierarchical quadrilateral meshes of rectangular domains.
//!
//! Every element of the refinement tree is an axis-aligned square in an
//! integer lattice: a base (level 0) element is `2^LATTICE_BITS` units wide
//! and each refinement halves the width. Integer coordinates make vertex and
//! node identification exact, so hanging-node detection and neighbor lookup
//! never compare floating-point positions.
//!
//! Element ids are stable: refining a mesh appends children to the element
//! list and never renumbers existing elements, so a refined mesh can always
//! be related back to the mesh it came from.
//!
//! Edge convention (counter-clockwise): 0 bottom, 1 right, 2 top, 3 left.
//! Child convention: 0 SW, 1 SE, 2 NW, 3 NE.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

/// Lattice width of a level-0 element, as a power of two.
pub const LATTICE_BITS: u32 = 24;

/// Deepest refinement level. Quadratic nodes and hanging nodes at a quarter
/// of a coarse edge must still land on the lattice.
pub const MAX_LEVEL: u32 = LATTICE_BITS - 2;

pub type ElementId = usize;

/// Axis-aligned rectangular domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Domain {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        if !(xmax > xmin && ymax > ymin) || ![xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!(
                "degenerate domain [{xmin}, {xmax}] x [{ymin}, {ymax}]"
            )));
        }
        Ok(Domain { xmin, xmax, ymin, ymax })
    }

    pub fn unit_square() -> Self {
        Domain { xmin: 0.0, xmax: 1.0, ymin: 0.0, ymax: 1.0 }
    }

    pub fn area(&self) -> f64 {
        (self.xmax - self.xmin) * (self.ymax - self.ymin)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.xmin && p[0] <= self.xmax && p[1] >= self.ymin && p[1] <= self.ymax
    }
}

impl Default for Domain {
    fn default() -> Self {
        Domain::unit_square()
    }
}

#[derive(Clone, Debug)]
pub struct Element {
    /// Lattice coordinates of the lower-left corner.
    pub origin: [i64; 2],
    pub level: u32,
    pub parent: Option<ElementId>,
    pub children: Option<[ElementId; 4]>,
}

impl Element {
    /// Lattice width of the element.
    pub fn size(&self) -> i64 {
        1i64 << (LATTICE_BITS - self.level)
    }

    pub fn corners(&self) -> [[i64; 2]; 4] {
        let [x, y] = self.origin;
        let s = self.size();
        [[x, y], [x + s, y], [x + s, y + s], [x, y + s]]
    }
}

/// A vertex lying in the interior of a coarser leaf's edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HangingVertex {
    pub vertex: usize,
    /// Endpoint vertices of the constraining coarse edge.
    pub edge: [usize; 2],
    /// The coarse leaf owning that edge.
    pub owner: ElementId,
}

/// Set of leaf elements selected for refinement.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MarkSet(BTreeSet<ElementId>);

impl MarkSet {
    pub fn new() -> Self {
        MarkSet(BTreeSet::new())
    }

    pub fn insert(&mut self, id: ElementId) -> bool {
        self.0.insert(id)
    }

    pub fn contains(&self, id: ElementId) -> bool {
        self.0.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ElementId> + '_ {
        self.0.iter().copied()
    }
}

impl FromIterator<ElementId> for MarkSet {
    fn from_iter<T: IntoIterator<Item = ElementId>>(iter: T) -> Self {
        MarkSet(iter.into_iter().collect())
    }
}

const EDGE_OFFSETS: [[i64; 2]; 4] = [[0, -1], [1, 0], [0, 1], [-1, 0]];
const CHILDREN_ON_EDGE: [[usize; 2]; 4] = [[0, 1], [1, 3], [2, 3], [0, 2]];

/// Quadtree mesh. Immutable once built; `refine` returns a new mesh.
#[derive(Clone, Debug)]
pub struct Mesh {
    domain: Domain,
    nx: usize,
    ny: usize,
    elements: Vec<Element>,
    lookup: HashMap<(u32, i64, i64), ElementId>,
    leaves: Vec<ElementId>,
    leaf_pos: Vec<Option<u32>>,
    vertices: Vec<[i64; 2]>,
    vertex_lookup: HashMap<[i64; 2], usize>,
    leaf_vertices: Vec<[usize; 4]>,
    hanging: Vec<HangingVertex>,
}

impl Mesh {
    /// Tensor-product mesh of `nx * ny` congruent rectangles.
    pub fn build_uniform(nx: usize, ny: usize, domain: Domain) -> Result<Mesh> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid(format!("element counts must be positive, got {nx} x {ny}")));
        }
        let domain = Domain::new(domain.xmin, domain.xmax, domain.ymin, domain.ymax)?;
        let s = 1i64 << LATTICE_BITS;
        let mut elements = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                elements.push(Element {
                    origin: [i as i64 * s, j as i64 * s],
                    level: 0,
                    parent: None,
                    children: None,
                });
            }
        }
        Ok(Mesh::from_tree(domain, nx, ny, elements))
    }

    fn from_tree(domain: Domain, nx: usize, ny: usize, elements: Vec<Element>) -> Mesh {
        let lookup = elements
            .iter()
            .enumerate()
            .map(|(id, e)| ((e.level, e.origin[0], e.origin[1]), id))
            .collect();
        let mut mesh = Mesh {
            domain,
            nx,
            ny,
            elements,
            lookup,
            leaves: Vec::new(),
            leaf_pos: Vec::new(),
            vertices: Vec::new(),
            vertex_lookup: HashMap::new(),
            leaf_vertices: Vec::new(),
            hanging: Vec::new(),
        };
        mesh.rebuild_leaf_data();
        mesh
    }

    fn rebuild_leaf_data(&mut self) {
        // depth-first from the base elements gives a locality-friendly order
        let mut leaves = Vec::new();
        let mut stack = Vec::new();
        for base in (0..self.nx * self.ny).rev() {
            stack.push(base);
        }
        while let Some(id) = stack.pop() {
            match self.elements[id].children {
                Some(ch) => stack.extend(ch.iter().rev()),
                None => leaves.push(id),
            }
        }
        let mut leaf_pos = vec![None; self.elements.len()];
        for (k, &id) in leaves.iter().enumerate() {
            leaf_pos[id] = Some(k as u32);
        }
        self.leaves = leaves;
        self.leaf_pos = leaf_pos;

        self.vertices.clear();
        self.vertex_lookup.clear();
        let mut leaf_vertices = Vec::with_capacity(self.leaves.len());
        for &id in &self.leaves {
            let corners = self.elements[id].corners();
            let mut ids = [0usize; 4];
            for (k, c) in corners.iter().enumerate() {
                let next = self.vertices.len();
                let v = *self.vertex_lookup.entry(*c).or_insert(next);
                if v == next {
                    self.vertices.push(*c);
                }
                ids[k] = v;
            }
            leaf_vertices.push(ids);
        }
        self.leaf_vertices = leaf_vertices;

        let mut hanging = Vec::new();
        for (k, &id) in self.leaves.iter().enumerate() {
            for edge in 0..4 {
                let nbrs = self.edge_leaves(id, edge);
                if nbrs.len() == 2 {
                    let e = &self.elements[id];
                    let [a, b] = [e.corners()[edge], e.corners()[(edge + 1) % 4]];
                    let mid = [(a[0] + b[0]) / 2, (a[1] + b[1]) / 2];
                    hanging.push(HangingVertex {
                        vertex: self.vertex_lookup[&mid],
                        edge: [self.leaf_vertices[k][edge], self.leaf_vertices[k][(edge + 1) % 4]],
                        owner: id,
                    });
                }
            }
        }
        self.hanging = hanging;
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Base grid dimensions.
    pub fn base_dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn element(&self, id: ElementId) -> &Element {
        &self.elements[id]
    }

    /// Every element ever created, leaves and interior tree nodes.
    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn leaves(&self) -> &[ElementId] {
        &self.leaves
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_leaf(&self, id: ElementId) -> bool {
        self.leaf_pos.get(id).is_some_and(|p| p.is_some())
    }

    /// Position of a leaf in `leaves()`.
    pub fn leaf_index(&self, id: ElementId) -> Option<usize> {
        self.leaf_pos.get(id).copied().flatten().map(|p| p as usize)
    }

    pub fn vertices(&self) -> &[[i64; 2]] {
        &self.vertices
    }

    /// Corner vertex ids of the k-th leaf, counter-clockwise from lower-left.
    pub fn leaf_vertices(&self, leaf_index: usize) -> [usize; 4] {
        self.leaf_vertices[leaf_index]
    }

    pub fn hanging_vertices(&self) -> &[HangingVertex] {
        &self.hanging
    }

    pub fn max_level(&self) -> u32 {
        self.leaves.iter().map(|&id| self.elements[id].level).max().unwrap_or(0)
    }

    /// Lattice extent of the whole domain.
    pub fn lattice_extent(&self) -> [i64; 2] {
        [(self.nx as i64) << LATTICE_BITS, (self.ny as i64) << LATTICE_BITS]
    }

    pub fn lattice_to_point(&self, q: [i64; 2]) -> [f64; 2] {
        let [ex, ey] = self.lattice_extent();
        let d = &self.domain;
        [
            d.xmin + (d.xmax - d.xmin) * (q[0] as f64 / ex as f64),
            d.ymin + (d.ymax - d.ymin) * (q[1] as f64 / ey as f64),
        ]
    }

    /// Physical width and height of an element.
    pub fn element_extent(&self, id: ElementId) -> [f64; 2] {
        let s = self.elements[id].size() as f64;
        let [ex, ey] = self.lattice_extent();
        [
            (self.domain.xmax - self.domain.xmin) * s / ex as f64,
            (self.domain.ymax - self.domain.ymin) * s / ey as f64,
        ]
    }

    pub fn element_origin(&self, id: ElementId) -> [f64; 2] {
        self.lattice_to_point(self.elements[id].origin)
    }

    pub fn element_area(&self, id: ElementId) -> f64 {
        let [hx, hy] = self.element_extent(id);
        hx * hy
    }

    pub fn centroid(&self, id: ElementId) -> [f64; 2] {
        let o = self.element_origin(id);
        let [hx, hy] = self.element_extent(id);
        [o[0] + 0.5 * hx, o[1] + 0.5 * hy]
    }

    /// Map reference coordinates in [-1,1]^2 to physical coordinates.
    pub fn map_to_physical(&self, id: ElementId, xi: [f64; 2]) -> [f64; 2] {
        let o = self.element_origin(id);
        let [hx, hy] = self.element_extent(id);
        [o[0] + 0.5 * (xi[0] + 1.0) * hx, o[1] + 0.5 * (xi[1] + 1.0) * hy]
    }

    fn inside_lattice(&self, origin: [i64; 2], size: i64) -> bool {
        let [ex, ey] = self.lattice_extent();
        origin[0] >= 0 && origin[1] >= 0 && origin[0] + size <= ex && origin[1] + size <= ey
    }

    /// Leaves across edge `edge` of leaf `id`, ordered by increasing coordinate.
    fn edge_leaves(&self, id: ElementId, edge: usize) -> Vec<ElementId> {
        let e = &self.elements[id];
        let s = e.size();
        let off = EDGE_OFFSETS[edge];
        let origin = [e.origin[0] + off[0] * s, e.origin[1] + off[1] * s];
        if !self.inside_lattice(origin, s) {
            return Vec::new();
        }
        if let Some(&nb) = self.lookup.get(&(e.level, origin[0], origin[1])) {
            let mut out = Vec::new();
            self.collect_facing(nb, (edge + 2) % 4, &mut out);
            return out;
        }
        // neighbor region is covered by a coarser leaf
        for level in (0..e.level).rev() {
            let size = 1i64 << (LATTICE_BITS - level);
            let key = (level, origin[0].div_euclid(size) * size, origin[1].div_euclid(size) * size);
            if let Some(&nb) = self.lookup.get(&key) {
                return if self.is_leaf(nb) { vec![nb] } else { Vec::new() };
            }
        }
        Vec::new()
    }

    fn collect_facing(&self, id: ElementId, facing_edge: usize, out: &mut Vec<ElementId>) {
        match self.elements[id].children {
            None => out.push(id),
            Some(ch) => {
                for k in CHILDREN_ON_EDGE[facing_edge] {
                    self.collect_facing(ch[k], facing_edge, out);
                }
            }
        }
    }

    /// Per edge, the 0, 1 or 2 leaf neighbors of a leaf element.
    pub fn leaf_neighbors(&self, id: ElementId) -> Result<[Vec<ElementId>; 4]> {
        if !self.is_leaf(id) {
            return Err(Error::invalid(format!("element {id} is not a leaf")));
        }
        Ok(std::array::from_fn(|edge| self.edge_leaves(id, edge)))
    }

    /// True when edge-adjacent leaves differ by at most one level.
    pub fn is_one_irregular(&self) -> bool {
        self.leaves.iter().all(|&id| {
            let l = self.elements[id].level as i64;
            (0..4).all(|edge| {
                self.edge_leaves(id, edge)
                    .iter()
                    .all(|&n| (self.elements[n].level as i64 - l).abs() <= 1)
            })
        })
    }

    /// Smallest superset of `marks` whose refinement keeps the mesh 1-irregular.
    pub fn closure(&self, marks: &MarkSet) -> Result<MarkSet> {
        for id in marks.iter() {
            if !self.is_leaf(id) {
                return Err(Error::invalid(format!("marked element {id} is not a current leaf")));
            }
        }
        let mut out = marks.clone();
        let mut work: Vec<ElementId> = marks.iter().collect();
        while let Some(id) = work.pop() {
            let level = self.elements[id].level;
            for edge in 0..4 {
                for n in self.edge_leaves(id, edge) {
                    if self.elements[n].level < level && out.insert(n) {
                        work.push(n);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Split every marked leaf (plus closure) into four children.
    pub fn refine(&self, marks: &MarkSet) -> Result<Mesh> {
        let marks = self.closure(marks)?;
        if marks.is_empty() {
            return Ok(self.clone());
        }
        if let Some(id) = marks.iter().find(|&id| self.elements[id].level >= MAX_LEVEL) {
            return Err(Error::invalid(format!(
                "element {id} is at the maximum refinement level {MAX_LEVEL}"
            )));
        }
        let mut elements = self.elements.clone();
        for id in marks.iter() {
            let parent = &self.elements[id];
            let half = parent.size() / 2;
            let [x, y] = parent.origin;
            let first = elements.len();
            for (dx, dy) in [(0, 0), (half, 0), (0, half), (half, half)] {
                elements.push(Element {
                    origin: [x + dx, y + dy],
                    level: parent.level + 1,
                    parent: Some(id),
                    children: None,
                });
            }
            elements[id].children = Some([first, first + 1, first + 2, first + 3]);
        }
        Ok(Mesh::from_tree(self.domain, self.nx, self.ny, elements))
    }

    /// Refine every leaf once.
    pub fn refine_uniform(&self) -> Result<Mesh> {
        self.refine(&self.leaves.iter().copied().collect())
    }

    /// Leaf containing `p` and the reference coordinates of `p` in it.
    pub fn locate(&self, p: [f64; 2]) -> Option<(ElementId, [f64; 2])> {
        let d = &self.domain;
        let tol = 1e-12 * (d.xmax - d.xmin).max(d.ymax - d.ymin);
        if p[0] < d.xmin - tol || p[0] > d.xmax + tol || p[1] < d.ymin - tol || p[1] > d.ymax + tol {
            return None;
        }
        let [ex, ey] = self.lattice_extent();
        let lx = ((p[0] - d.xmin) / (d.xmax - d.xmin) * ex as f64).clamp(0.0, ex as f64);
        let ly = ((p[1] - d.ymin) / (d.ymax - d.ymin) * ey as f64).clamp(0.0, ey as f64);
        let base = (1i64 << LATTICE_BITS) as f64;
        let i = ((lx / base) as usize).min(self.nx - 1);
        let j = ((ly / base) as usize).min(self.ny - 1);
        let mut id = j * self.nx + i;
        while let Some(ch) = self.elements[id].children {
            let e = &self.elements[id];
            let half = (e.size() / 2) as f64;
            let east = lx >= e.origin[0] as f64 + half;
            let north = ly >= e.origin[1] as f64 + half;
            id = ch[(east as usize) + 2 * (north as usize)];
        }
        let e = &self.elements[id];
        let s = e.size() as f64;
        let xi = [
            (2.0 * (lx - e.origin[0] as f64) / s - 1.0).clamp(-1.0, 1.0),
            (2.0 * (ly - e.origin[1] as f64) / s - 1.0).clamp(-1.0, 1.0),
        ];
        Some((id, xi))
    }

    /// The mesh obtained by discarding all refinement below `level`.
    /// Element ids are unchanged, so the result nests in `self`.
    pub fn truncate(&self, level: u32) -> Mesh {
        let mut elements = self.elements.clone();
        for e in elements.iter_mut() {
            if e.level >= level {
                e.children = None;
            }
        }
        let mut mesh = Mesh::from_tree(self.domain, self.nx, self.ny, elements);
        mesh.lookup.retain(|k, _| k.0 <= level);
        mesh.rebuild_leaf_data();
        mesh
    }

    /// Leaf containing the lattice point `q` and its exact reference
    /// coordinates. Points on shared edges go to the element on the upper side.
    pub fn locate_lattice(&self, q: [i64; 2]) -> Option<(ElementId, [f64; 2])> {
        let [ex, ey] = self.lattice_extent();
        if q[0] < 0 || q[1] < 0 || q[0] > ex || q[1] > ey {
            return None;
        }
        let i = ((q[0] >> LATTICE_BITS) as usize).min(self.nx - 1);
        let j = ((q[1] >> LATTICE_BITS) as usize).min(self.ny - 1);
        let mut id = j * self.nx + i;
        while let Some(ch) = self.elements[id].children {
            let e = &self.elements[id];
            let half = e.size() / 2;
            let east = q[0] >= e.origin[0] + half;
            let north = q[1] >= e.origin[1] + half;
            id = ch[(east as usize) + 2 * (north as usize)];
        }
        let e = &self.elements[id];
        let s = e.size() as f64;
        Some((
            id,
            [
                2.0 * (q[0] - e.origin[0]) as f64 / s - 1.0,
                2.0 * (q[1] - e.origin[1]) as f64 / s - 1.0,
            ],
        ))
    }

    /// True when every leaf of `coarse` is an element of this mesh's tree,
    /// i.e. this mesh was obtained from `coarse` by refinement.
    pub fn is_refinement_of(&self, coarse: &Mesh) -> bool {
        if self.nx != coarse.nx || self.ny != coarse.ny || self.domain != coarse.domain {
            return false;
        }
        coarse.leaves.iter().all(|&id| {
            self.elements.get(id).is_some_and(|e| {
                let c = &coarse.elements[id];
                e.level == c.level && e.origin == c.origin
            })
        })
    }

    /// Closest ancestor-or-self of element `id` that is a leaf of `coarse`.
    pub fn ancestor_leaf_in(&self, id: ElementId, coarse: &Mesh) -> Option<ElementId> {
        let mut cur = Some(id);
        while let Some(c) = cur {
            if coarse.is_leaf(c) {
                return Some(c);
            }
            cur = self.elements[c].parent;
        }
        None
    }

    /// Look up a tree element by level and lattice origin.
    pub fn find(&self, level: u32, origin: [i64; 2]) -> Option<ElementId> {
        self.lookup.get(&(level, origin[0], origin[1])).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf_at(mesh: &Mesh, x: f64, y: f64) -> ElementId {
        mesh.locate([x, y]).unwrap().0
    }

    fn total_area(mesh: &Mesh) -> f64 {
        mesh.leaves().iter().map(|&id| mesh.element_area(id)).sum()
    }

    #[test]
    fn uniform_counts() {
        let m = Mesh::build_uniform(2, 2, Domain::unit_square()).unwrap();
        assert_eq!(m.n_leaves(), 4);
        assert_eq!(m.vertices().len(), 9);
        assert!(m.hanging_vertices().is_empty());

        let m = Mesh::build_uniform(1, 1, Domain::unit_square()).unwrap();
        assert_eq!(m.n_leaves(), 1);
        assert!((m.element_area(m.leaves()[0]) - 1.0).abs() < 1e-15);

        let m = Mesh::build_uniform(4, 2, Domain::new(0.0, 2.0, 0.0, 1.0).unwrap()).unwrap();
        assert_eq!(m.n_leaves(), 8);
        for &id in m.leaves() {
            assert!((m.element_area(id) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(matches!(
            Mesh::build_uniform(0, 3, Domain::unit_square()),
            Err(Error::InvalidArgument(_))
        ));
        assert!(Mesh::build_uniform(3, 0, Domain::unit_square()).is_err());
    }

    #[test]
    fn refine_one_of_four() {
        let m = Mesh::build_uniform(2, 2, Domain::unit_square()).unwrap();
        let sw = leaf_at(&m, 0.1, 0.1);
        let r = m.refine(&[sw].into_iter().collect()).unwrap();
        assert_eq!(r.n_leaves(), 7);
        // four edge midpoints and the center are new; the two interior
        // midpoints hang on the edges shared with the coarse neighbors
        assert_eq!(r.vertices().len(), 9 + 5);
        assert_eq!(r.hanging_vertices().len(), 2);
        for h in r.hanging_vertices() {
            let v = r.vertices()[h.vertex];
            let a = r.vertices()[h.edge[0]];
            let b = r.vertices()[h.edge[1]];
            assert_eq!([2 * v[0], 2 * v[1]], [a[0] + b[0], a[1] + b[1]]);
        }
        assert!(r.is_one_irregular());
        assert!((total_area(&r) - 1.0).abs() < 1e-12);

        // coarse right neighbor sees two fine leaves on its left edge
        let se = leaf_at(&r, 0.75, 0.25);
        let nb = r.leaf_neighbors(se).unwrap();
        assert_eq!(nb[3].len(), 2);
        assert_eq!(r.element(nb[3][0]).level, 1);
    }

    #[test]
    fn empty_marks_is_identity() {
        let m = Mesh::build_uniform(3, 2, Domain::unit_square()).unwrap();
        let r = m.refine(&MarkSet::new()).unwrap();
        assert_eq!(r.leaves(), m.leaves());
        assert_eq!(r.vertices(), m.vertices());
    }

    #[test]
    fn closure_propagates_to_coarse_neighbor() {
        let m = Mesh::build_uniform(2, 1, Domain::new(0.0, 2.0, 0.0, 1.0).unwrap()).unwrap();
        let left = leaf_at(&m, 0.5, 0.5);
        let right = leaf_at(&m, 1.5, 0.5);
        let m1 = m.refine(&[left].into_iter().collect()).unwrap();
        assert!(m1.is_leaf(right));
        let kids: MarkSet = m1.element(left).children.unwrap().into_iter().collect();
        let m2 = m1.refine(&kids).unwrap();
        assert!(!m2.is_leaf(right), "closure must refine the coarse right element");
        assert!(m2.is_one_irregular());
        // brute force: no pair of edge-adjacent leaves two levels apart
        for &a in m2.leaves() {
            for nbrs in m2.leaf_neighbors(a).unwrap() {
                for b in nbrs {
                    assert!(m2.element(a).level.abs_diff(m2.element(b).level) <= 1);
                }
            }
        }
    }

    #[test]
    fn stale_mark_rejected() {
        let m = Mesh::build_uniform(2, 2, Domain::unit_square()).unwrap();
        let r = m.refine_uniform().unwrap();
        let stale = m.leaves()[0];
        assert!(matches!(r.refine(&[stale].into_iter().collect()), Err(Error::InvalidArgument(_))));
        assert!(r.refine(&[10_000].into_iter().collect()).is_err());
    }

    #[test]
    fn neighbor_counts() {
        let m = Mesh::build_uniform(2, 2, Domain::unit_square()).unwrap();
        let corner = leaf_at(&m, 0.1, 0.1);
        let nb = m.leaf_neighbors(corner).unwrap();
        assert_eq!(nb.iter().map(Vec::len).sum::<usize>(), 2);

        let single = Mesh::build_uniform(1, 1, Domain::unit_square()).unwrap();
        let nb = single.leaf_neighbors(single.leaves()[0]).unwrap();
        assert!(nb.iter().all(Vec::is_empty));
    }

    #[test]
    fn closure_is_idempotent_on_legal_mesh() {
        let m = Mesh::build_uniform(2, 2, Domain::unit_square()).unwrap();
        let r = m.refine(&[leaf_at(&m, 0.1, 0.1)].into_iter().collect()).unwrap();
        let c = r.closure(&MarkSet::new()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn locate_round_trip() {
        let m = Mesh::build_uniform(3, 2, Domain::new(-1.0, 2.0, 0.0, 1.0).unwrap()).unwrap();
        let m = m.refine(&[m.leaves()[1]].into_iter().collect()).unwrap();
        for &id in m.leaves() {
            let p = m.map_to_physical(id, [0.3, -0.2]);
            let (found, xi) = m.locate(p).unwrap();
            assert_eq!(found, id);
            assert!((xi[0] - 0.3).abs() < 1e-9 && (xi[1] + 0.2).abs() < 1e-9);
        }
        assert!(m.locate([5.0, 0.5]).is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn random_refinement_keeps_invariants(picks in proptest::collection::vec(0usize..1000, 1..12)) {
                let mut m = Mesh::build_uniform(2, 3, Domain::new(0.0, 1.0, 0.0, 1.5).unwrap()).unwrap();
                for p in picks {
                    let id = m.leaves()[p % m.n_leaves()];
                    let before: Vec<_> = m.leaves().to_vec();
                    let r = m.refine(&[id].into_iter().collect()).unwrap();
                    prop_assert!(r.is_one_irregular());
                    prop_assert!((total_area(&r) - 1.5).abs() <= 1e-12 * 1.5);
                    // leaves only subdivide; children are one level deeper
                    for old in before {
                        if !r.is_leaf(old) {
                            for c in r.element(old).children.unwrap() {
                                prop_assert_eq!(r.element(c).level, r.element(old).level + 1);
                                prop_assert_eq!(r.element(c).parent, Some(old));
                            }
                        }
                    }
                    // each hanging vertex is the midpoint of exactly one coarse edge
                    let mut seen = std::collections::HashSet::new();
                    for h in r.hanging_vertices() {
                        prop_assert!(seen.insert(h.vertex));
                    }
                    prop_assert!(r.closure(&MarkSet::new()).unwrap().is_empty());
                    prop_assert!(r.is_refinement_of(&m));
                    m = r;
                }
            }
        }
    }
}
