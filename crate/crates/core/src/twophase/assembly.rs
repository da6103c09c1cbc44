//! Least-squares Gram matrices `A_ij = <L' phi_j, L' phi_i>` and
//! right-hand sides `b_i = -<R, L' phi_i>`.

use super::{linear_rows, Jet, LinearizedSystem, NEQ, NFIELDS};
use crate::error::{Error, Result};
use crate::fespace::{Space, NO_INDEX};
use crate::linsolve::{CsrMatrix, SparseSystem};

/// Element matrix and vector for one leaf, local dof `a * NFIELDS + f`.
fn element_system(lin: &LinearizedSystem, leaf: usize, k_e: &mut [f64], b_e: &mut [f64]) {
    let space = &lin.space;
    let nl = space.n_local();
    let nd = nl * NFIELDS;
    let nq = space.quadrature().len();
    let table = space.basis_table();
    let (_, h) = space.leaf_geometry(leaf);
    let s = [2.0 / h[0], 2.0 / h[1]];
    let sw: Vec<f64> = lin.params.ls_weights.iter().map(|w| w.sqrt()).collect();
    k_e[..nd * nd].iter_mut().for_each(|v| *v = 0.0);
    b_e[..nd].iter_mut().for_each(|v| *v = 0.0);
    let mut basis = [[0.0; 9]; 3];
    let mut slots = [[0.0; 9]; NFIELDS];
    let mut slot_field = [0usize; NFIELDS];
    for q in 0..nq {
        let k = leaf * nq + q;
        let w = lin.qweights[k];
        let (vals, grads) = table.at(q);
        for a in 0..nl {
            basis[0][a] = vals[a];
            basis[1][a] = grads[a][0] * s[0];
            basis[2][a] = grads[a][1] * s[1];
        }
        let rows = linear_rows(&lin.jets[k], lin.alpha0, &lin.params);
        for (e, row) in rows.iter().enumerate() {
            let mut nslot = 0;
            for &(f, kind, c) in row.terms() {
                let f = f as usize;
                let slot = match slot_field[..nslot].iter().position(|&g| g == f) {
                    Some(s) => s,
                    None => {
                        slot_field[nslot] = f;
                        slots[nslot][..nl].iter_mut().for_each(|v| *v = 0.0);
                        nslot += 1;
                        nslot - 1
                    }
                };
                let c = c * sw[e];
                for a in 0..nl {
                    slots[slot][a] += c * basis[kind as usize][a];
                }
            }
            let r = lin.residuals[k][e] * sw[e];
            for si in 0..nslot {
                let f = slot_field[si];
                let vs = &slots[si];
                for a in 0..nl {
                    let i = a * NFIELDS + f;
                    let wa = w * vs[a];
                    b_e[i] -= wa * r;
                    let krow = &mut k_e[i * nd..(i + 1) * nd];
                    for tj in 0..nslot {
                        let g = slot_field[tj];
                        let vt = &slots[tj];
                        for b in 0..nl {
                            krow[b * NFIELDS + g] += wa * vt[b];
                        }
                    }
                }
            }
        }
    }
}

/// Full system on all dofs (hanging and boundary ones included); pass it to
/// [`crate::fespace::apply_bcs`] to eliminate the constraints.
pub fn assemble(lin: &LinearizedSystem) -> SparseSystem {
    let space = &lin.space;
    let nl = space.n_local();
    let nd = nl * NFIELDS;
    let mut k_e = vec![0.0; nd * nd];
    let mut b_e = vec![0.0; nd];
    let mut trip = Vec::new();
    let mut rhs = vec![0.0; space.n_dofs()];
    for leaf in 0..space.mesh().n_leaves() {
        element_system(lin, leaf, &mut k_e, &mut b_e);
        let nodes = space.element_nodes(leaf);
        let dof = |i: usize| nodes[i / NFIELDS] as usize * NFIELDS + i % NFIELDS;
        for i in 0..nd {
            rhs[dof(i)] += b_e[i];
            for j in 0..nd {
                let v = k_e[i * nd + j];
                if v != 0.0 {
                    trip.push((dof(i), dof(j), v));
                }
            }
        }
    }
    let n = space.n_dofs();
    let matrix = CsrMatrix::from_triplets(n, n, trip);
    let block_ptr = (0..=space.n_nodes()).map(|k| k * NFIELDS).collect();
    SparseSystem { matrix, rhs, block_ptr }
}

/// Sparsity of the constrained (free-dof) system of a space. Built once per
/// grid and reused by every Newton step on it.
#[derive(Clone, Debug)]
pub struct SystemPattern {
    n_free: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    node_first: Vec<u32>,
    node_free: Vec<u16>,
    adj_ptr: Vec<usize>,
    adj_node: Vec<u32>,
    adj_off: Vec<u32>,
}

impl SystemPattern {
    pub fn new(space: &Space) -> Result<SystemPattern> {
        if space.ncomp() != NFIELDS {
            return Err(Error::invalid("system pattern needs the nine-field space"));
        }
        let nn = space.n_nodes();
        let mut node_first = vec![NO_INDEX; nn];
        let mut node_free = vec![0u16; nn];
        for n in 0..nn {
            for c in 0..NFIELDS {
                if let Some(k) = space.free_index(n * NFIELDS + c) {
                    if node_first[n] == NO_INDEX {
                        node_first[n] = k as u32;
                    }
                    node_free[n] |= 1 << c;
                }
            }
        }
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); nn];
        let mut masters = Vec::new();
        for leaf in 0..space.mesh().n_leaves() {
            masters.clear();
            for &n in space.element_nodes(leaf) {
                for (m, _) in space.node_masters(n as usize) {
                    if node_free[m] != 0 {
                        masters.push(m as u32);
                    }
                }
            }
            masters.sort_unstable();
            masters.dedup();
            for &i in &masters {
                adj[i as usize].extend_from_slice(&masters);
            }
        }
        let mut adj_ptr = vec![0usize];
        let mut adj_node = Vec::new();
        let mut adj_off = Vec::new();
        let mut row_ptr = vec![0usize];
        let mut col_idx: Vec<u32> = Vec::new();
        let n_free = space.n_free();
        let mut row_nodes: Vec<usize> = (0..nn).filter(|&n| node_free[n] != 0).collect();
        row_nodes.sort_by_key(|&n| node_first[n]);
        let mut adj_sorted: Vec<Vec<u32>> = vec![Vec::new(); nn];
        for (n, list) in adj.iter_mut().enumerate() {
            list.sort_unstable_by_key(|&m| node_first[m as usize]);
            list.dedup();
            adj_sorted[n] = std::mem::take(list);
        }
        // per-node adjacency in node order, rows in free order
        for n in 0..nn {
            let mut off = 0u32;
            for &m in &adj_sorted[n] {
                adj_node.push(m);
                adj_off.push(off);
                off += node_free[m as usize].count_ones();
            }
            adj_ptr.push(adj_node.len());
        }
        for &n in &row_nodes {
            let mut cols = Vec::new();
            for &m in &adj_sorted[n] {
                let first = node_first[m as usize];
                for r in 0..node_free[m as usize].count_ones() {
                    cols.push(first + r);
                }
            }
            for _ in 0..node_free[n].count_ones() {
                col_idx.extend_from_slice(&cols);
                row_ptr.push(col_idx.len());
            }
        }
        if row_ptr.len() != n_free + 1 {
            return Err(Error::InvalidState("free numbering is not node-major".into()));
        }
        Ok(SystemPattern { n_free, row_ptr, col_idx, node_first, node_free, adj_ptr, adj_node, adj_off })
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    fn offset(&self, i: usize, j: u32) -> u32 {
        let (s, e) = (self.adj_ptr[i], self.adj_ptr[i + 1]);
        let list = &self.adj_node[s..e];
        let key = self.node_first[j as usize];
        let pos = list
            .binary_search_by_key(&key, |&m| self.node_first[m as usize])
            .expect("node pair is in the pattern");
        self.adj_off[s + pos]
    }
}

/// Constrained system for a Newton increment: hanging dofs eliminated and
/// boundary-fixed increments zero. Equal to `C^T A C`, `C^T b` of [`assemble`].
pub fn assemble_constrained(lin: &LinearizedSystem, pattern: &SystemPattern) -> SparseSystem {
    let space = &lin.space;
    let nl = space.n_local();
    let nd = nl * NFIELDS;
    let mut k_e = vec![0.0; nd * nd];
    let mut b_e = vec![0.0; nd];
    let mut values = vec![0.0; pattern.nnz()];
    let mut rhs = vec![0.0; pattern.n_free];
    let mut expanded: Vec<(usize, u32, f64)> = Vec::new();
    for leaf in 0..space.mesh().n_leaves() {
        element_system(lin, leaf, &mut k_e, &mut b_e);
        expanded.clear();
        for (a, &n) in space.element_nodes(leaf).iter().enumerate() {
            for (m, w) in space.node_masters(n as usize) {
                if pattern.node_free[m] != 0 {
                    expanded.push((a, m as u32, w));
                }
            }
        }
        for &(a, ni, wa) in &expanded {
            let free_i = pattern.node_free[ni as usize];
            let first_i = pattern.node_first[ni as usize] as usize;
            let mut ri = 0;
            for f in 0..NFIELDS {
                if free_i & (1 << f) == 0 {
                    continue;
                }
                rhs[first_i + ri] += wa * b_e[a * NFIELDS + f];
                ri += 1;
            }
            for &(b, nj, wb) in &expanded {
                let free_j = pattern.node_free[nj as usize];
                let off = pattern.offset(ni as usize, nj) as usize;
                let w = wa * wb;
                let mut ri = 0;
                for f in 0..NFIELDS {
                    if free_i & (1 << f) == 0 {
                        continue;
                    }
                    let start = pattern.row_ptr[first_i + ri] + off;
                    let krow = &k_e[(a * NFIELDS + f) * nd + b * NFIELDS..(a * NFIELDS + f) * nd + (b + 1) * NFIELDS];
                    let mut rj = 0;
                    for g in 0..NFIELDS {
                        if free_j & (1 << g) == 0 {
                            continue;
                        }
                        values[start + rj] += w * krow[g];
                        rj += 1;
                    }
                    ri += 1;
                }
            }
        }
    }
    let matrix = CsrMatrix::from_parts_unchecked(
        pattern.n_free,
        pattern.n_free,
        pattern.row_ptr.clone(),
        pattern.col_idx.clone(),
        values,
    );
    SparseSystem { matrix, rhs, block_ptr: space.block_ptr().to_vec() }
}

/// `|| L'(u0) d + R(u0) ||^2` for a full increment vector `d`.
pub fn linearized_functional(increment: &[f64], lin: &LinearizedSystem) -> Result<f64> {
    let space = &lin.space;
    if increment.len() != space.n_dofs() {
        return Err(Error::invalid("increment does not match the space"));
    }
    let nq = space.quadrature().len();
    let mut total = 0.0;
    let mut k = 0;
    super::jets_at_quadrature(space, increment, |leaf, q, _, d: &Jet| {
        debug_assert_eq!(k, leaf * nq + q);
        let rows = linear_rows(&lin.jets[k], lin.alpha0, &lin.params);
        let mut s = 0.0;
        for e in 0..NEQ {
            let v = rows[e].apply(d) + lin.residuals[k][e];
            s += lin.params.ls_weights[e] * v * v;
        }
        total += lin.qweights[k] * s;
        k += 1;
    });
    Ok(total)
}
