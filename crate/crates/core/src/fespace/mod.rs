//! Continuous nodal finite-element spaces on quadtree meshes.
//!
//! A [`Space`] carries `ncomp` scalar components on one set of Lagrange
//! nodes. Nodes are identified by their lattice position, so elements of
//! different size share nodes exactly. Full coefficient vectors store every
//! node (hanging ones included, always kept consistent with their masters)
//! in node-major order: dof `node * ncomp + c`.
//!
//! The free dofs are what the linear algebra sees: non-hanging nodes whose
//! component is not fixed by a boundary condition, numbered node-major so
//! the free components of one node form a contiguous block.

pub mod basis;
pub mod quadrature;
mod transfer;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

pub use basis::{BasisTable, LagrangeBasis};
pub use quadrature::Quadrature;
pub use transfer::{interpolate_from, prolong, prolongation_free};

use crate::error::{Error, Result};
use crate::linsolve::{cg_jacobi, CsrMatrix};
use crate::mesh::Mesh;

/// Master nodes and weights of a constrained node.
type Stencil = Vec<(u32, f64)>;

pub const NO_INDEX: u32 = u32::MAX;

/// Boundary trace for a Dirichlet component.
#[derive(Clone)]
pub struct TraceFn(Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>);

impl TraceFn {
    pub fn new(f: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static) -> Self {
        TraceFn(Arc::new(f))
    }

    pub fn constant(v: f64) -> Self {
        TraceFn::new(move |_| v)
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        (self.0)(x)
    }
}

impl fmt::Debug for TraceFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("TraceFn(..)")
    }
}

#[derive(Clone, Debug)]
pub enum BoundaryCondition {
    Free,
    /// Strongly imposed boundary values.
    Dirichlet(TraceFn),
    /// Mean over the domain removed after each solve.
    ZeroMean,
    /// This unknown is Cartesian component `component` of a vector field
    /// whose tangential trace vanishes: it is fixed to zero on walls
    /// parallel to that axis.
    ZeroTangential { component: usize },
}

/// One boundary condition per scalar unknown.
#[derive(Clone, Debug)]
pub struct BcSpec {
    comps: Vec<BoundaryCondition>,
}

impl BcSpec {
    pub fn new(comps: Vec<BoundaryCondition>) -> Self {
        BcSpec { comps }
    }

    pub fn free(ncomp: usize) -> Self {
        BcSpec { comps: vec![BoundaryCondition::Free; ncomp] }
    }

    pub fn len(&self) -> usize {
        self.comps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps.is_empty()
    }

    pub fn get(&self, c: usize) -> &BoundaryCondition {
        &self.comps[c]
    }

    pub fn set(&mut self, c: usize, bc: BoundaryCondition) {
        self.comps[c] = bc;
    }
}

/// Hanging node expressed through the nodes of the coarse edge it lies on.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub node: u32,
    pub masters: Vec<(u32, f64)>,
}

const WALL_VERTICAL: u8 = 1;
const WALL_HORIZONTAL: u8 = 2;

#[derive(Clone, Debug)]
pub struct Space {
    mesh: Arc<Mesh>,
    degree: usize,
    ncomp: usize,
    bcs: BcSpec,
    basis: LagrangeBasis,
    quad: Quadrature,
    table: BasisTable,
    nodes: Vec<[i64; 2]>,
    node_lookup: HashMap<[i64; 2], u32>,
    elem_nodes: Vec<u32>,
    node_constraint: Vec<u32>,
    constraints: Vec<Constraint>,
    walls: Vec<u8>,
    fixed_values: Vec<f64>,
    free_index: Vec<u32>,
    free_dofs: Vec<u32>,
    block_ptr: Vec<usize>,
    block_node: Vec<u32>,
}

impl Space {
    /// Space of degree `degree` with `bcs.len()` components, using the
    /// default `(p+2)^2` Gauss rule.
    pub fn new(mesh: Arc<Mesh>, degree: usize, bcs: BcSpec) -> Result<Space> {
        Space::with_quadrature(mesh, degree, bcs, degree + 2)
    }

    pub fn with_quadrature(mesh: Arc<Mesh>, degree: usize, bcs: BcSpec, qorder: usize) -> Result<Space> {
        if degree != 1 && degree != 2 {
            return Err(Error::invalid(format!("degree must be 1 or 2, got {degree}")));
        }
        if bcs.is_empty() {
            return Err(Error::invalid("a space needs at least one component"));
        }
        if qorder == 0 {
            return Err(Error::invalid("quadrature order must be positive"));
        }
        let basis = LagrangeBasis::new(degree);
        let quad = Quadrature::tensor_gauss(qorder);
        let table = BasisTable::new(&basis, &quad.points);
        let ncomp = bcs.len();
        let mut space = Space {
            mesh,
            degree,
            ncomp,
            bcs,
            basis,
            quad,
            table,
            nodes: Vec::new(),
            node_lookup: HashMap::new(),
            elem_nodes: Vec::new(),
            node_constraint: Vec::new(),
            constraints: Vec::new(),
            walls: Vec::new(),
            fixed_values: Vec::new(),
            free_index: Vec::new(),
            free_dofs: Vec::new(),
            block_ptr: Vec::new(),
            block_node: Vec::new(),
        };
        space.number_nodes();
        space.find_constraints()?;
        space.number_dofs();
        Ok(space)
    }

    fn number_nodes(&mut self) {
        let p = self.degree as i64;
        let nl = self.basis.n_local();
        let mut elem_nodes = Vec::with_capacity(self.mesh.n_leaves() * nl);
        for &id in self.mesh.leaves() {
            let e = self.mesh.element(id);
            let step = e.size() / p;
            for j in 0..=p {
                for i in 0..=p {
                    let q = [e.origin[0] + i * step, e.origin[1] + j * step];
                    let next = self.nodes.len() as u32;
                    let n = *self.node_lookup.entry(q).or_insert(next);
                    if n == next {
                        self.nodes.push(q);
                    }
                    elem_nodes.push(n);
                }
            }
        }
        self.elem_nodes = elem_nodes;
        let [ex, ey] = self.mesh.lattice_extent();
        self.walls = self
            .nodes
            .iter()
            .map(|q| {
                let mut w = 0;
                if q[0] == 0 || q[0] == ex {
                    w |= WALL_VERTICAL;
                }
                if q[1] == 0 || q[1] == ey {
                    w |= WALL_HORIZONTAL;
                }
                w
            })
            .collect();
    }

    fn find_constraints(&mut self) -> Result<()> {
        self.node_constraint = vec![NO_INDEX; self.nodes.len()];
        let mut constraints = Vec::new();
        for &id in self.mesh.leaves() {
            let nbrs = self.mesh.leaf_neighbors(id)?;
            let corners = self.mesh.element(id).corners();
            for edge in 0..4 {
                if nbrs[edge].len() != 2 {
                    continue;
                }
                let a = corners[edge];
                let b = corners[(edge + 1) % 4];
                let at = |t4: i64| [a[0] + (b[0] - a[0]) * t4 / 4, a[1] + (b[1] - a[1]) * t4 / 4];
                let na = self.node_lookup[&a];
                let nb = self.node_lookup[&b];
                let list: Vec<([i64; 2], Stencil)> = if self.degree == 1 {
                    vec![(at(2), vec![(na, 0.5), (nb, 0.5)])]
                } else {
                    let nm = self.node_lookup[&at(2)];
                    vec![
                        (at(1), vec![(na, 0.375), (nm, 0.75), (nb, -0.125)]),
                        (at(3), vec![(na, -0.125), (nm, 0.75), (nb, 0.375)]),
                    ]
                };
                for (q, masters) in list {
                    let node = *self
                        .node_lookup
                        .get(&q)
                        .ok_or_else(|| Error::InvalidState(format!("missing hanging node at {q:?}")))?;
                    if self.node_constraint[node as usize] == NO_INDEX {
                        self.node_constraint[node as usize] = constraints.len() as u32;
                        constraints.push(Constraint { node, masters });
                    }
                }
            }
        }
        for c in &constraints {
            if c.masters.iter().any(|&(m, _)| self.node_constraint[m as usize] != NO_INDEX) {
                return Err(Error::InvalidState(format!("hanging node {} has a hanging master", c.node)));
            }
        }
        self.constraints = constraints;
        Ok(())
    }

    fn number_dofs(&mut self) {
        let nd = self.nodes.len() * self.ncomp;
        let mut fixed_values = vec![0.0; nd];
        let mut free_index = vec![NO_INDEX; nd];
        let mut free_dofs = Vec::new();
        let mut block_ptr = vec![0];
        let mut block_node = Vec::new();
        for n in 0..self.nodes.len() {
            if self.node_constraint[n] != NO_INDEX {
                continue;
            }
            let x = self.node_point(n);
            let start = free_dofs.len();
            for c in 0..self.ncomp {
                let d = n * self.ncomp + c;
                match self.fixed_value(n, c, x) {
                    Some(v) => fixed_values[d] = v,
                    None => {
                        free_index[d] = free_dofs.len() as u32;
                        free_dofs.push(d as u32);
                    }
                }
            }
            if free_dofs.len() > start {
                block_ptr.push(free_dofs.len());
                block_node.push(n as u32);
            }
        }
        self.fixed_values = fixed_values;
        self.free_index = free_index;
        self.free_dofs = free_dofs;
        self.block_ptr = block_ptr;
        self.block_node = block_node;
        let g = self.expand_free(&vec![0.0; self.n_free()]);
        self.fixed_values = g;
    }

    fn fixed_value(&self, node: usize, c: usize, x: [f64; 2]) -> Option<f64> {
        let w = self.walls[node];
        match self.bcs.get(c) {
            BoundaryCondition::Dirichlet(f) if w != 0 => Some(f.eval(x)),
            BoundaryCondition::ZeroTangential { component: 0 } if w & WALL_HORIZONTAL != 0 => Some(0.0),
            BoundaryCondition::ZeroTangential { component: 1 } if w & WALL_VERTICAL != 0 => Some(0.0),
            _ => None,
        }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn bcs(&self) -> &BcSpec {
        &self.bcs
    }

    pub fn basis(&self) -> &LagrangeBasis {
        &self.basis
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quad
    }

    pub fn basis_table(&self) -> &BasisTable {
        &self.table
    }

    pub fn n_local(&self) -> usize {
        self.basis.n_local()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Length of full coefficient vectors.
    pub fn n_dofs(&self) -> usize {
        self.nodes.len() * self.ncomp
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    #[inline]
    pub fn dof(&self, node: usize, comp: usize) -> usize {
        node * self.ncomp + comp
    }

    pub fn node_lattice(&self, node: usize) -> [i64; 2] {
        self.nodes[node]
    }

    pub fn node_point(&self, node: usize) -> [f64; 2] {
        self.mesh.lattice_to_point(self.nodes[node])
    }

    pub fn find_node(&self, q: [i64; 2]) -> Option<usize> {
        self.node_lookup.get(&q).map(|&n| n as usize)
    }

    /// Global node ids of the k-th leaf, lexicographic local order.
    #[inline]
    pub fn element_nodes(&self, leaf: usize) -> &[u32] {
        let nl = self.basis.n_local();
        &self.elem_nodes[leaf * nl..(leaf + 1) * nl]
    }

    pub fn is_hanging(&self, node: usize) -> bool {
        self.node_constraint[node] != NO_INDEX
    }

    pub fn constraint(&self, node: usize) -> Option<&Constraint> {
        match self.node_constraint[node] {
            NO_INDEX => None,
            k => Some(&self.constraints[k as usize]),
        }
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        self.walls[node] != 0
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.free_index[dof] == NO_INDEX && self.node_constraint[dof / self.ncomp] == NO_INDEX
    }

    /// Free index of a full dof, or `None` for fixed and hanging dofs.
    pub fn free_index(&self, dof: usize) -> Option<usize> {
        match self.free_index[dof] {
            NO_INDEX => None,
            k => Some(k as usize),
        }
    }

    pub fn free_dofs(&self) -> &[u32] {
        &self.free_dofs
    }

    /// Node-block boundaries in free numbering.
    pub fn block_ptr(&self) -> &[usize] {
        &self.block_ptr
    }

    pub fn block_nodes(&self) -> &[u32] {
        &self.block_node
    }

    /// Full vector with only the boundary values set (hanging nodes consistent).
    pub fn fixed_values(&self) -> &[f64] {
        &self.fixed_values
    }

    fn expand_free(&self, x: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_dofs()];
        for (d, v) in full.iter_mut().enumerate() {
            *v = match self.free_index[d] {
                NO_INDEX => self.fixed_values[d],
                k => x[k as usize],
            };
        }
        self.fill_hanging(&mut full);
        full
    }

    /// `C x + g`: free values, boundary values, and hanging nodes from masters.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_free());
        self.expand_free(x)
    }

    /// `C x`: like `expand` with homogeneous boundary values.
    pub fn expand_homogeneous(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_free());
        let mut full = vec![0.0; self.n_dofs()];
        for (k, &d) in self.free_dofs.iter().enumerate() {
            full[d as usize] = x[k];
        }
        self.fill_hanging(&mut full);
        full
    }

    /// Free entries of a full vector.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&d| full[d as usize]).collect()
    }

    /// Recompute hanging values from their masters.
    pub fn fill_hanging(&self, full: &mut [f64]) {
        let nc = self.ncomp;
        for con in &self.constraints {
            for c in 0..nc {
                let v = con.masters.iter().map(|&(m, w)| w * full[m as usize * nc + c]).sum();
                full[con.node as usize * nc + c] = v;
            }
        }
    }

    /// Overwrite boundary-fixed entries with their prescribed values.
    pub fn impose_fixed(&self, full: &mut [f64]) {
        for n in 0..self.nodes.len() {
            if self.node_constraint[n] != NO_INDEX {
                continue;
            }
            for c in 0..self.ncomp {
                let d = n * self.ncomp + c;
                if self.free_index[d] == NO_INDEX {
                    full[d] = self.fixed_values[d];
                }
            }
        }
        self.fill_hanging(full);
    }

    /// Sparse `C` (full x free) with `full = C x + g`.
    pub fn constraint_matrix(&self) -> CsrMatrix {
        let nc = self.ncomp;
        let mut trip = Vec::new();
        for (k, &d) in self.free_dofs.iter().enumerate() {
            trip.push((d as usize, k, 1.0));
        }
        for con in &self.constraints {
            for c in 0..nc {
                for &(m, w) in &con.masters {
                    if let Some(k) = self.free_index(m as usize * nc + c) {
                        trip.push((con.node as usize * nc + c, k, w));
                    }
                }
            }
        }
        CsrMatrix::from_triplets(self.n_dofs(), self.n_free(), trip)
    }

    /// Nodal interpolant of `f`, which fills one value per component.
    /// Hanging nodes take their constrained values, so the result is in the space.
    pub fn interpolate(&self, f: impl Fn([f64; 2], &mut [f64])) -> Vec<f64> {
        let nc = self.ncomp;
        let mut full = vec![0.0; self.n_dofs()];
        for n in 0..self.nodes.len() {
            if self.node_constraint[n] == NO_INDEX {
                f(self.node_point(n), &mut full[n * nc..(n + 1) * nc]);
            }
        }
        self.fill_hanging(&mut full);
        full
    }

    /// Physical origin and extent of the k-th leaf.
    #[inline]
    pub fn leaf_geometry(&self, leaf: usize) -> ([f64; 2], [f64; 2]) {
        let id = self.mesh.leaves()[leaf];
        (self.mesh.element_origin(id), self.mesh.element_extent(id))
    }

    /// Physical quadrature points and weights (with Jacobian) on a leaf.
    pub fn quadrature_on(&self, leaf: usize) -> impl Iterator<Item = ([f64; 2], f64)> + '_ {
        let (o, h) = self.leaf_geometry(leaf);
        let det = 0.25 * h[0] * h[1];
        self.quad.points.iter().zip(&self.quad.weights).map(move |(xi, w)| {
            ([o[0] + 0.5 * (xi[0] + 1.0) * h[0], o[1] + 0.5 * (xi[1] + 1.0) * h[1]], w * det)
        })
    }

    /// Values and physical gradients of all components on leaf `leaf` at
    /// reference point `xi`.
    pub fn eval_on_leaf(&self, coeffs: &[f64], leaf: usize, xi: [f64; 2], vals: &mut [f64], grads: &mut [[f64; 2]]) {
        let nl = self.basis.n_local();
        let mut n = [0.0; 9];
        let mut g = [[0.0; 2]; 9];
        self.basis.eval(xi, &mut n[..nl], &mut g[..nl]);
        let (_, h) = self.leaf_geometry(leaf);
        let s = [2.0 / h[0], 2.0 / h[1]];
        let nc = self.ncomp;
        vals[..nc].iter_mut().for_each(|v| *v = 0.0);
        grads[..nc].iter_mut().for_each(|v| *v = [0.0; 2]);
        for (a, &node) in self.element_nodes(leaf).iter().enumerate() {
            let base = node as usize * nc;
            for c in 0..nc {
                let v = coeffs[base + c];
                vals[c] += v * n[a];
                grads[c][0] += v * g[a][0] * s[0];
                grads[c][1] += v * g[a][1] * s[1];
            }
        }
    }

    /// Evaluate the FE function at a physical point.
    pub fn eval_at(&self, coeffs: &[f64], x: [f64; 2]) -> Option<(Vec<f64>, Vec<[f64; 2]>)> {
        let (id, xi) = self.mesh.locate(x)?;
        let leaf = self.mesh.leaf_index(id)?;
        let mut v = vec![0.0; self.ncomp];
        let mut g = vec![[0.0; 2]; self.ncomp];
        self.eval_on_leaf(coeffs, leaf, xi, &mut v, &mut g);
        Some((v, g))
    }

    /// Evaluate at a lattice point (exact point location).
    pub fn eval_at_lattice(&self, coeffs: &[f64], q: [i64; 2], vals: &mut [f64]) -> Option<()> {
        let (id, xi) = self.mesh.locate_lattice(q)?;
        let leaf = self.mesh.leaf_index(id)?;
        let mut g = vec![[0.0; 2]; self.ncomp];
        self.eval_on_leaf(coeffs, leaf, xi, vals, &mut g);
        Some(())
    }

    /// Integral of component `comp` over the domain.
    pub fn integrate_component(&self, coeffs: &[f64], comp: usize) -> f64 {
        let nc = self.ncomp;
        let mut total = 0.0;
        for leaf in 0..self.mesh.n_leaves() {
            let (_, h) = self.leaf_geometry(leaf);
            let det = 0.25 * h[0] * h[1];
            let nodes = self.element_nodes(leaf);
            for (q, w) in self.quad.weights.iter().enumerate() {
                let (vals, _) = self.table.at(q);
                let v: f64 = nodes.iter().zip(vals).map(|(&n, &b)| coeffs[n as usize * nc + comp] * b).sum();
                total += w * det * v;
            }
        }
        total
    }

    /// Subtract the domain mean from every `ZeroMean` component.
    pub fn project_zero_mean(&self, coeffs: &mut [f64]) {
        let area = self.mesh.domain().area();
        for c in 0..self.ncomp {
            if matches!(self.bcs.get(c), BoundaryCondition::ZeroMean) {
                let mean = self.integrate_component(coeffs, c) / area;
                for n in 0..self.nodes.len() {
                    coeffs[n * self.ncomp + c] -= mean;
                }
            }
        }
    }

    /// L2 projection of the gradient of component `src` into components
    /// `dst[0]`, `dst[1]`, honoring their boundary conditions.
    pub fn project_gradient(&self, coeffs: &mut [f64], src: usize, dst: [usize; 2]) -> Result<()> {
        let nc = self.ncomp;
        let nl = self.basis.n_local();
        for (axis, &comp) in dst.iter().enumerate() {
            // scalar mass system on the free nodes of this component
            let mut trip = Vec::new();
            let mut rhs = vec![0.0; self.n_free()];
            let mut m_loc = vec![0.0; nl * nl];
            let mut b_loc = vec![0.0; nl];
            for leaf in 0..self.mesh.n_leaves() {
                let (_, h) = self.leaf_geometry(leaf);
                let det = 0.25 * h[0] * h[1];
                let scale = 2.0 / h[axis];
                let nodes = self.element_nodes(leaf);
                m_loc.iter_mut().for_each(|v| *v = 0.0);
                b_loc.iter_mut().for_each(|v| *v = 0.0);
                for (q, w) in self.quad.weights.iter().enumerate() {
                    let (vals, grads) = self.table.at(q);
                    let dphi: f64 = nodes
                        .iter()
                        .zip(grads)
                        .map(|(&n, g)| coeffs[n as usize * nc + src] * g[axis] * scale)
                        .sum();
                    for a in 0..nl {
                        b_loc[a] += w * det * dphi * vals[a];
                        for b in 0..nl {
                            m_loc[a * nl + b] += w * det * vals[a] * vals[b];
                        }
                    }
                }
                let expanded: Vec<Vec<(usize, f64)>> = nodes
                    .iter()
                    .map(|&n| self.node_masters(n as usize).into_iter().map(|(m, w)| (m * nc + comp, w)).collect())
                    .collect();
                for a in 0..nl {
                    for &(da, wa) in &expanded[a] {
                        let Some(ia) = self.free_index(da) else { continue };
                        rhs[ia] += wa * b_loc[a];
                        for b in 0..nl {
                            for &(db, wb) in &expanded[b] {
                                match self.free_index(db) {
                                    Some(ib) => trip.push((ia, ib, wa * wb * m_loc[a * nl + b])),
                                    None => rhs[ia] -= wa * wb * m_loc[a * nl + b] * self.fixed_values[db],
                                }
                            }
                        }
                    }
                }
            }
            let m = CsrMatrix::from_triplets(self.n_free(), self.n_free(), trip);
            // other components contribute empty rows: solve on this component only
            let sel: Vec<usize> = (0..self.n_free()).filter(|&k| self.free_dofs[k] as usize % nc == comp).collect();
            let mut pos = vec![usize::MAX; self.n_free()];
            for (i, &k) in sel.iter().enumerate() {
                pos[k] = i;
            }
            let mut sub = Vec::new();
            for (i, &k) in sel.iter().enumerate() {
                let (cols, vals) = m.row(k);
                for (c, v) in cols.iter().zip(vals) {
                    sub.push((i, pos[*c as usize], *v));
                }
            }
            let ms = CsrMatrix::from_triplets(sel.len(), sel.len(), sub);
            let bs: Vec<f64> = sel.iter().map(|&k| rhs[k]).collect();
            let xs = cg_jacobi(&ms, &bs, 1e-13, 10 * sel.len() + 100)?;
            for (i, &k) in sel.iter().enumerate() {
                coeffs[self.free_dofs[k] as usize] = xs[i];
            }
            for n in 0..self.nodes.len() {
                let d = n * nc + comp;
                if self.is_fixed(d) {
                    coeffs[d] = self.fixed_values[d];
                }
            }
        }
        self.fill_hanging(coeffs);
        Ok(())
    }

    /// Non-hanging nodes a node depends on, with weights.
    pub fn node_masters(&self, node: usize) -> Vec<(usize, f64)> {
        match self.node_constraint[node] {
            NO_INDEX => vec![(node, 1.0)],
            k => self.constraints[k as usize].masters.iter().map(|&(m, w)| (m as usize, w)).collect(),
        }
    }

    /// Free indices of every dof an element touches (hanging nodes replaced
    /// by their masters), sorted; one list per leaf.
    pub fn element_patches(&self) -> Vec<Vec<u32>> {
        (0..self.mesh.n_leaves())
            .map(|leaf| {
                let mut idx = Vec::new();
                for &n in self.element_nodes(leaf) {
                    for (m, _) in self.node_masters(n as usize) {
                        for c in 0..self.ncomp {
                            if let Some(k) = self.free_index(m * self.ncomp + c) {
                                idx.push(k as u32);
                            }
                        }
                    }
                }
                idx.sort_unstable();
                idx.dedup();
                idx
            })
            .filter(|p| !p.is_empty())
            .collect()
    }
}

/// Result of eliminating constraints from a full assembled system.
#[derive(Clone, Debug)]
pub struct ConstrainedSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub constraint: CsrMatrix,
    pub offset: Vec<f64>,
}

impl ConstrainedSystem {
    /// Full vector `C x + g` from a reduced solution.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut full = self.constraint.mul_vec(x);
        for (f, g) in full.iter_mut().zip(&self.offset) {
            *f += g;
        }
        full
    }
}

/// Eliminate hanging and boundary-fixed dofs from `A u = b` posed on full
/// vectors: `A_red = C^T A C`, `b_red = C^T (b - A g)` with `u = C x + g`.
pub fn apply_bcs(space: &Space, matrix: &CsrMatrix, rhs: &[f64]) -> ConstrainedSystem {
    let c = space.constraint_matrix();
    let g = space.fixed_values().to_vec();
    let ag = matrix.mul_vec(&g);
    let shifted: Vec<f64> = rhs.iter().zip(&ag).map(|(b, a)| b - a).collect();
    ConstrainedSystem {
        matrix: matrix.galerkin(&c),
        rhs: c.transpose_mul_vec(&shifted),
        constraint: c,
        offset: g,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Domain, MarkSet};

    fn uniform(n: usize) -> Arc<Mesh> {
        Arc::new(Mesh::build_uniform(n, n, Domain::unit_square()).unwrap())
    }

    fn seven_leaf() -> Arc<Mesh> {
        let m = Mesh::build_uniform(2, 2, Domain::unit_square()).unwrap();
        let sw = m.locate([0.25, 0.25]).unwrap().0;
        Arc::new(m.refine(&[sw].into_iter().collect::<MarkSet>()).unwrap())
    }

    #[test]
    fn dof_counts() {
        let s = Space::new(uniform(2), 2, BcSpec::free(1)).unwrap();
        assert_eq!(s.n_dofs(), 25);
        assert_eq!(s.n_free(), 25);
        let s = Space::new(uniform(1), 1, BcSpec::free(1)).unwrap();
        assert_eq!(s.n_dofs(), 4);
        for n in [3, 5] {
            for p in [1, 2] {
                let s = Space::new(uniform(n), p, BcSpec::free(2)).unwrap();
                assert_eq!(s.n_nodes(), (p * n + 1) * (p * n + 1));
                assert_eq!(s.n_free(), 2 * s.n_nodes());
            }
        }
    }

    #[test]
    fn hanging_weights_p1() {
        let s = Space::new(seven_leaf(), 1, BcSpec::free(1)).unwrap();
        assert_eq!(s.constraints().len(), 2);
        for c in s.constraints() {
            assert_eq!(c.masters.len(), 2);
            assert!(c.masters.iter().all(|&(_, w)| w == 0.5));
            let q = s.node_lattice(c.node as usize);
            let a = s.node_lattice(c.masters[0].0 as usize);
            let b = s.node_lattice(c.masters[1].0 as usize);
            assert_eq!([2 * q[0], 2 * q[1]], [a[0] + b[0], a[1] + b[1]]);
        }
    }

    #[test]
    fn hanging_weights_sum_to_one_p2() {
        let s = Space::new(seven_leaf(), 2, BcSpec::free(1)).unwrap();
        assert_eq!(s.constraints().len(), 4);
        for c in s.constraints() {
            let sum: f64 = c.masters.iter().map(|m| m.1).sum();
            assert!((sum - 1.0).abs() < 1e-15);
            for &(m, _) in &c.masters {
                assert!(!s.is_hanging(m as usize));
            }
        }
    }

    #[test]
    fn quadratic_functions_are_continuous_across_hanging_edges() {
        let s = Space::new(seven_leaf(), 2, BcSpec::free(1)).unwrap();
        let f = |x: [f64; 2]| 1.0 + x[0] - 2.0 * x[1] + 3.0 * x[0] * x[0] - x[0] * x[1] + 0.5 * x[1] * x[1];
        let u = s.interpolate(|x, v| v[0] = f(x));
        // the interpolant reproduces the quadratic everywhere
        for &(x, y) in &[(0.37, 0.5), (0.5, 0.13), (0.12, 0.49), (0.5, 0.5), (0.81, 0.27)] {
            let (v, _) = s.eval_at(&u, [x, y]).unwrap();
            assert!((v[0] - f([x, y])).abs() < 1e-13);
        }
    }

    #[test]
    fn boundary_tags() {
        let bcs = BcSpec::new(vec![
            BoundaryCondition::Dirichlet(TraceFn::new(|x| x[0] + 2.0 * x[1])),
            BoundaryCondition::ZeroTangential { component: 0 },
            BoundaryCondition::ZeroTangential { component: 1 },
            BoundaryCondition::ZeroMean,
        ]);
        let s = Space::new(uniform(2), 1, bcs).unwrap();
        // 8 boundary nodes; B1 fixed on top/bottom (6 nodes), B2 on left/right (6)
        assert_eq!(s.n_free(), 1 + 3 + 3 + 9);
        let g = s.fixed_values();
        for n in 0..s.n_nodes() {
            let x = s.node_point(n);
            if s.is_boundary_node(n) {
                assert!((g[s.dof(n, 0)] - (x[0] + 2.0 * x[1])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn apply_bcs_free_is_identity() {
        let s = Space::new(uniform(2), 1, BcSpec::free(1)).unwrap();
        let a = CsrMatrix::from_triplets(9, 9, (0..9).map(|i| (i, i, 2.0 + i as f64)).collect());
        let b: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let sys = apply_bcs(&s, &a, &b);
        assert_eq!(sys.matrix.to_dense(), a.to_dense());
        assert_eq!(sys.rhs, b);
    }

    #[test]
    fn zero_mean_projection() {
        let bcs = BcSpec::new(vec![BoundaryCondition::ZeroMean]);
        let s = Space::new(seven_leaf(), 2, bcs).unwrap();
        let mut u = s.interpolate(|x, v| v[0] = 3.0 + x[0] * x[1]);
        s.project_zero_mean(&mut u);
        assert!(s.integrate_component(&u, 0).abs() < 1e-14);
    }

    #[test]
    fn gradient_projection_reproduces_linear_gradients() {
        let bcs = BcSpec::free(3);
        let s = Space::new(seven_leaf(), 2, bcs).unwrap();
        let mut u = s.interpolate(|x, v| {
            v[0] = x[0] * x[0] - 3.0 * x[0] * x[1];
        });
        s.project_gradient(&mut u, 0, [1, 2]).unwrap();
        for &(x, y) in &[(0.1, 0.2), (0.6, 0.3), (0.9, 0.9)] {
            let (v, _) = s.eval_at(&u, [x, y]).unwrap();
            assert!((v[1] - (2.0 * x - 3.0 * y)).abs() < 1e-9, "{v:?}");
            assert!((v[2] + 3.0 * x).abs() < 1e-9);
        }
    }
}
