//! SPD solvers: conjugate gradients preconditioned by a geometric multigrid
//! V-cycle over nested spaces, with work-unit accounting.

mod csr;

pub use csr::{axpy, dot, norm2, CsrMatrix};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Assembled system on free dofs. `block_ptr` groups unknowns that the
/// smoother relaxes together (all free components of one node).
#[derive(Clone, Debug)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub block_ptr: Vec<usize>,
}

impl SparseSystem {
    pub fn new(matrix: CsrMatrix, rhs: Vec<f64>, block_ptr: Vec<usize>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || rhs.len() != matrix.nrows() {
            return Err(Error::invalid("system matrix must be square and match the right-hand side"));
        }
        if block_ptr.first() != Some(&0) || block_ptr.last() != Some(&rhs.len()) {
            return Err(Error::invalid("block partition does not cover the unknowns"));
        }
        Ok(SparseSystem { matrix, rhs, block_ptr })
    }

    /// Point blocks (scalar smoothing).
    pub fn scalar(matrix: CsrMatrix, rhs: Vec<f64>) -> Result<Self> {
        let n = rhs.len();
        SparseSystem::new(matrix, rhs, (0..=n).collect())
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }
}

/// Per-level operation counts, in units of one pass over that level's matrix.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkCounter {
    pub ops: Vec<f64>,
}

impl WorkCounter {
    pub fn new(levels: usize) -> Self {
        WorkCounter { ops: vec![0.0; levels] }
    }

    pub fn add(&mut self, level: usize, count: f64) {
        if self.ops.len() <= level {
            self.ops.resize(level + 1, 0.0);
        }
        self.ops[level] += count;
    }
}

/// Finest-grid matvec equivalents: `sum ops_l * nnz_l / finest_nnz`.
pub fn wu_account(nnz_per_level: &[usize], op_counts: &[f64], finest_nnz: usize) -> Result<f64> {
    if finest_nnz == 0 {
        return Err(Error::invalid("finest level has no nonzeros"));
    }
    if nnz_per_level.len() != op_counts.len() {
        return Err(Error::invalid("one op count per level is required"));
    }
    Ok(nnz_per_level
        .iter()
        .zip(op_counts)
        .map(|(&n, &c)| c * n as f64)
        .sum::<f64>()
        / finest_nnz as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MgOptions {
    /// Symmetric Gauss-Seidel sweeps before and after the coarse correction.
    pub pre_sweeps: usize,
    pub post_sweeps: usize,
    /// Coarse-grid visits per cycle: 1 for a V-cycle, 2 for a W-cycle.
    pub cycle_index: usize,
}

impl Default for MgOptions {
    fn default() -> Self {
        MgOptions { pre_sweeps: 1, post_sweeps: 1, cycle_index: 1 }
    }
}

#[derive(Clone, Debug)]
struct Level {
    matrix: CsrMatrix,
    /// Unknowns relaxed together, possibly overlapping.
    patches: Vec<Vec<u32>>,
    /// Dense inverses of the patch matrices, row-major.
    patch_inv: Vec<Vec<f64>>,
    /// Cost of one sweep in passes over `matrix`.
    sweep_cost: f64,
    /// Prolongation from the next coarser level into this one.
    prolong: Option<CsrMatrix>,
}

/// Largest coarsest level solved by a dense pseudo-inverse.
pub const MAX_COARSE: usize = 4000;

/// Multigrid hierarchy with Galerkin coarse operators. Level 0 is coarsest.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    levels: Vec<Level>,
    coarse_pinv: DMatrix<f64>,
    options: MgOptions,
}

fn sym_pinv(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let cut = 1e-12 * top;
    let inv = eig.eigenvalues.map(|l| if l.abs() > cut { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

fn pseudo_inverse(a: &CsrMatrix) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let (c, v) = a.row(i);
        for (j, x) in c.iter().zip(v) {
            m[(i, *j as usize)] = *x;
        }
    }
    sym_pinv((&m + m.transpose()) * 0.5)
}

fn invert_patch(a: &CsrMatrix, patch: &[u32]) -> Vec<f64> {
    let n = patch.len();
    let mut m = DMatrix::zeros(n, n);
    for (i, &gi) in patch.iter().enumerate() {
        let (c, v) = a.row(gi as usize);
        // both lists are sorted
        let mut k = 0;
        for (j, x) in c.iter().zip(v) {
            while k < n && patch[k] < *j {
                k += 1;
            }
            if k == n {
                break;
            }
            if patch[k] == *j {
                m[(i, k)] = *x;
            }
        }
    }
    let inv = match m.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => sym_pinv(m),
    };
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inv[(i, j)];
        }
    }
    out
}

/// Contiguous blocks `block_ptr[b]..block_ptr[b+1]` as patches.
pub fn blocks_to_patches(block_ptr: &[usize]) -> Vec<Vec<u32>> {
    block_ptr.windows(2).map(|w| (w[0] as u32..w[1] as u32).collect()).collect()
}

impl Hierarchy {
    /// Build from the finest system and the prolongations between
    /// consecutive levels (`prolongations[l]` maps level `l` to `l+1`).
    /// `block_ptrs` lists the smoother blocks of every level, coarsest first.
    pub fn new(
        fine: &SparseSystem,
        prolongations: Vec<CsrMatrix>,
        block_ptrs: Vec<Vec<usize>>,
        options: MgOptions,
    ) -> Result<Hierarchy> {
        let patches = block_ptrs.iter().map(|b| blocks_to_patches(b)).collect();
        Hierarchy::with_patches(fine, prolongations, patches, options)
    }

    /// Like [`Hierarchy::new`] with arbitrary, possibly overlapping,
    /// smoother patches (sorted index lists) on every level.
    pub fn with_patches(
        fine: &SparseSystem,
        prolongations: Vec<CsrMatrix>,
        patches: Vec<Vec<Vec<u32>>>,
        options: MgOptions,
    ) -> Result<Hierarchy> {
        let nlev = prolongations.len() + 1;
        let coarse_n = prolongations.first().map_or(fine.matrix.nrows(), |p| p.ncols());
        if coarse_n > MAX_COARSE {
            return Err(Error::invalid(format!("coarsest level has {coarse_n} unknowns, more than the direct-solve limit {MAX_COARSE}")));
        }
        if patches.len() != nlev {
            return Err(Error::invalid("need one smoother partition per level"));
        }
        let mut mats = vec![fine.matrix.clone()];
        for p in prolongations.iter().rev() {
            let a = mats.last().unwrap();
            if p.nrows() != a.nrows() {
                return Err(Error::invalid("prolongation does not match the finer level"));
            }
            mats.push(a.galerkin(p));
        }
        mats.reverse();
        let mut levels = Vec::with_capacity(nlev);
        let mut prolongs: Vec<Option<CsrMatrix>> = vec![None];
        prolongs.extend(prolongations.into_iter().map(Some));
        for ((matrix, patches), prolong) in mats.into_iter().zip(patches).zip(prolongs) {
            let n = matrix.nrows();
            let mut covered = vec![false; n];
            let mut touched = 0usize;
            for p in &patches {
                if p.windows(2).any(|w| w[0] >= w[1]) || p.last().is_some_and(|&i| i as usize >= n) {
                    return Err(Error::invalid("smoother patches must be sorted index lists within the level"));
                }
                for &i in p {
                    covered[i as usize] = true;
                    touched += matrix.row(i as usize).0.len();
                }
            }
            if covered.iter().any(|c| !c) {
                return Err(Error::invalid("smoother patches do not cover the level"));
            }
            let patch_inv = patches.iter().map(|p| invert_patch(&matrix, p)).collect();
            let sweep_cost = touched as f64 / matrix.nnz().max(1) as f64;
            levels.push(Level { matrix, patches, patch_inv, sweep_cost, prolong });
        }
        let coarse_pinv = pseudo_inverse(&levels[0].matrix);
        Ok(Hierarchy { levels, coarse_pinv, options })
    }

    /// Degenerate hierarchy: a direct solve.
    pub fn single_level(system: &SparseSystem) -> Result<Hierarchy> {
        Hierarchy::new(system, Vec::new(), vec![system.block_ptr.clone()], MgOptions::default())
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn matrix(&self, level: usize) -> &CsrMatrix {
        &self.levels[level].matrix
    }

    pub fn nnz_per_level(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.matrix.nnz()).collect()
    }

    fn sweep(&self, level: usize, rhs: &[f64], x: &mut [f64], forward: bool) {
        let lv = &self.levels[level];
        let a = &lv.matrix;
        let np = lv.patches.len();
        let mut r = Vec::new();
        for k in 0..np {
            let b = if forward { k } else { np - 1 - k };
            let patch = &lv.patches[b];
            let n = patch.len();
            r.clear();
            for &i in patch {
                let (c, v) = a.row(i as usize);
                let mut acc = rhs[i as usize];
                for (j, aij) in c.iter().zip(v) {
                    acc -= aij * x[*j as usize];
                }
                r.push(acc);
            }
            let inv = &lv.patch_inv[b];
            for (i, &gi) in patch.iter().enumerate() {
                let row = &inv[i * n..(i + 1) * n];
                x[gi as usize] += row.iter().zip(r.iter()).map(|(p, q)| p * q).sum::<f64>();
            }
        }
    }

    fn coarse_solve(&self, rhs: &[f64], x: &mut [f64]) {
        let n = rhs.len();
        for i in 0..n {
            x[i] = (0..n).map(|j| self.coarse_pinv[(i, j)] * rhs[j]).sum();
        }
    }

    /// One V-cycle on `level` for `A x = rhs`, improving `x` in place.
    pub fn vcycle(&self, level: usize, rhs: &[f64], x: &mut [f64], work: &mut WorkCounter) {
        if level == 0 {
            self.coarse_solve(rhs, x);
            work.add(0, 1.0);
            return;
        }
        let lv = &self.levels[level];
        for _ in 0..self.options.pre_sweeps {
            self.sweep(level, rhs, x, true);
            self.sweep(level, rhs, x, false);
            work.add(level, 2.0 * lv.sweep_cost);
        }
        let ax = lv.matrix.mul_vec(x);
        work.add(level, 1.0);
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let p = lv.prolong.as_ref().expect("non-coarsest level has a prolongation");
        let rc = p.transpose_mul_vec(&r);
        let mut ec = vec![0.0; rc.len()];
        let visits = if level == 1 { 1 } else { self.options.cycle_index.max(1) };
        for _ in 0..visits {
            self.vcycle(level - 1, &rc, &mut ec, work);
        }
        let e = p.mul_vec(&ec);
        axpy(1.0, &e, x);
        for _ in 0..self.options.post_sweeps {
            self.sweep(level, rhs, x, true);
            self.sweep(level, rhs, x, false);
            work.add(level, 2.0 * lv.sweep_cost);
        }
    }

    /// Apply the V-cycle as a preconditioner from a zero guess.
    pub fn apply(&self, r: &[f64], work: &mut WorkCounter) -> Vec<f64> {
        let mut z = vec![0.0; r.len()];
        self.vcycle(self.levels.len() - 1, r, &mut z, work);
        z
    }
}

pub enum Preconditioner<'a> {
    None,
    Jacobi,
    Multigrid(&'a Hierarchy),
}

/// Stop cycling once the quadratic functional
/// `F(x) = x'Ax - 2x'b + offset` falls by less than `floor * F` per cycle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainStop {
    pub offset: f64,
    pub floor: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PcgOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub gain_stop: Option<GainStop>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub rel_residual: f64,
    /// Geometric mean of the per-iteration residual reduction.
    pub conv_factor: f64,
    pub wu: f64,
    pub converged: bool,
    /// Per-level op counts behind `wu`.
    pub work: WorkCounter,
}

/// Preconditioned conjugate gradients.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    opts: PcgOptions,
    precond: Preconditioner<'_>,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    if a.nrows() != n || a.ncols() != n || x0.len() != n {
        return Err(Error::invalid("pcg dimensions do not match"));
    }
    let (nnz_levels, top) = match &precond {
        Preconditioner::Multigrid(h) => (h.nnz_per_level(), h.n_levels() - 1),
        _ => (vec![a.nnz()], 0),
    };
    let mut work = WorkCounter::new(nnz_levels.len());
    let finish = |x: Vec<f64>, mut st: SolveStats, work: WorkCounter| -> Result<(Vec<f64>, SolveStats)> {
        st.wu = wu_account(&nnz_levels, &work.ops, nnz_levels[top].max(1))?;
        st.work = work;
        Ok((x, st))
    };
    let bnorm = norm2(b);
    let mut x = x0.to_vec();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return finish(x, SolveStats { converged: true, conv_factor: 0.0, ..Default::default() }, work);
    }
    let diag = a.diagonal();
    let apply = |r: &[f64], work: &mut WorkCounter| -> Vec<f64> {
        match &precond {
            Preconditioner::None => r.to_vec(),
            Preconditioner::Jacobi => r.iter().zip(&diag).map(|(r, d)| if *d != 0.0 { r / d } else { *r }).collect(),
            Preconditioner::Multigrid(h) => h.apply(r, work),
        }
    };
    let mut r = a.mul_vec(&x);
    work.add(top, 1.0);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let r0 = norm2(&r);
    let mut rnorm = r0;
    let functional = |x: &[f64], r: &[f64], g: &GainStop| g.offset - dot(x, b) - dot(x, r);
    let mut f_prev = opts.gain_stop.map(|g| functional(&x, &r, &g));
    let mut stats = SolveStats { rel_residual: r0 / bnorm, ..Default::default() };
    if r0 / bnorm <= opts.tol {
        stats.converged = true;
        stats.conv_factor = 0.0;
        return finish(x, stats, work);
    }
    let mut z = apply(&r, &mut work);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=opts.max_iter {
        a.matvec(&p, &mut ap);
        work.add(top, 1.0);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::MatrixNotSpd { iteration: it, curvature: pap });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        rnorm = norm2(&r);
        stats.iterations = it;
        stats.rel_residual = rnorm / bnorm;
        if stats.rel_residual <= opts.tol {
            stats.converged = true;
            break;
        }
        if let (Some(g), Some(fp)) = (opts.gain_stop, f_prev) {
            let f = functional(&x, &r, &g);
            if fp - f < g.floor * fp.abs() {
                break;
            }
            f_prev = Some(f);
        }
        z = apply(&r, &mut work);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    stats.conv_factor = if stats.iterations > 0 && r0 > 0.0 {
        (rnorm / r0).powf(1.0 / stats.iterations as f64)
    } else {
        0.0
    };
    finish(x, stats, work)
}

/// Jacobi-preconditioned CG to a relative residual; errors if it stalls.
pub fn cg_jacobi(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let x0 = vec![0.0; b.len()];
    let (x, st) = pcg(a, b, &x0, PcgOptions { tol, max_iter, gain_stop: None }, Preconditioner::Jacobi)?;
    if !st.converged && st.rel_residual > tol.sqrt() {
        return Err(Error::InvalidState(format!("CG stalled at relative residual {:e}", st.rel_residual)));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn opts(tol: f64, max_iter: usize) -> PcgOptions {
        PcgOptions { tol, max_iter, gain_stop: None }
    }

    #[test]
    fn identity_one_iteration() {
        let a = CsrMatrix::identity(5);
        let b = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let (x, st) = pcg(&a, &b, &[0.0; 5], opts(1e-12, 10), Preconditioner::None).unwrap();
        assert_eq!(st.iterations, 1);
        assert_eq!(x, b);
    }

    #[test]
    fn two_by_two() {
        let a = CsrMatrix::from_dense(&[vec![2.0, -1.0], vec![-1.0, 2.0]]);
        let (x, _) = pcg(&a, &[1.0, 0.0], &[0.0; 2], opts(1e-14, 10), Preconditioner::None).unwrap();
        assert!((x[0] - 2.0 / 3.0).abs() < 1e-14 && (x[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn random_spd_terminates() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let dense: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() / n as f64 + if i == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let a = CsrMatrix::from_dense(&dense);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let (_, st) = pcg(&a, &b, &vec![0.0; n], opts(1e-10, 50), Preconditioner::None).unwrap();
        assert!(st.converged, "{st:?}");
        assert!(st.iterations <= 50);
    }

    #[test]
    fn indefinite_is_reported() {
        let a = CsrMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, -1.0]]);
        let err = pcg(&a, &[0.0, 1.0], &[0.0; 2], opts(1e-12, 10), Preconditioner::None).unwrap_err();
        assert!(matches!(err, Error::MatrixNotSpd { .. }));
    }

    #[test]
    fn work_units() {
        assert_eq!(wu_account(&[1600], &[1.0], 1600).unwrap(), 1.0);
        assert_eq!(wu_account(&[400, 1600], &[1.0, 0.0], 1600).unwrap(), 0.25);
        assert!(wu_account(&[1], &[1.0], 0).is_err());
    }

    #[test]
    fn single_level_vcycle_is_exact() {
        let a = CsrMatrix::from_dense(&[vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 2.0]]);
        let sys = SparseSystem::scalar(a.clone(), vec![1.0, 2.0, 3.0]).unwrap();
        let h = Hierarchy::single_level(&sys).unwrap();
        let mut x = vec![0.0; 3];
        h.vcycle(0, &sys.rhs, &mut x, &mut WorkCounter::new(1));
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&sys.rhs) {
            assert!((ri - bi).abs() < 1e-12);
        }
        let mut z = vec![0.0; 3];
        h.vcycle(0, &[0.0; 3], &mut z, &mut WorkCounter::new(1));
        assert_eq!(z, vec![0.0; 3]);
    }
}
