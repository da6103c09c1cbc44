//! Property checks of the discretization and solver: derivative
//! consistency, steady states, manufactured-solution convergence, norm
//! equivalence of the functional, and multigrid convergence.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fespace::Space;
use crate::linsolve::{pcg, Hierarchy, MgOptions, PcgOptions, Preconditioner, SolveStats};
use crate::mesh::{Domain, Mesh};
use crate::nested_driver::{newton_on_grid, space_hierarchy, DriverConfig, Simulation};
use crate::twophase::{
    assemble_constrained, build_initial_state, linear_rows, linearize, residual_fields, Manufactured, Params, State,
    SystemPattern, TestCase, TimeHistory, NEQ, NFIELDS, PHI,
};

/// Uniform `n x n` mesh of the unit square refined from the 2x2 base grid
/// of the nested iteration (`n` a power of two, at least 2).
pub fn uniform_mesh(n: usize) -> Result<Mesh> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::invalid(format!("grid size must be a power of two >= 2, got {n}")));
    }
    let mut mesh = Mesh::build_uniform(2, 2, Domain::unit_square())?;
    while mesh.n_leaves() < n * n {
        mesh = mesh.refine_uniform()?;
    }
    Ok(mesh)
}

/// Space of the given degree on [`uniform_mesh`]`(n)`.
pub fn uniform_space(n: usize, degree: usize, case: &TestCase) -> Result<Arc<Space>> {
    Ok(Arc::new(Space::new(Arc::new(uniform_mesh(n)?), degree, case.bcs())?))
}

/// Worst case over all samples of the central-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeReport {
    pub samples: usize,
    /// Smallest observed order between the two largest steps, over samples
    /// whose difference error is above rounding.
    pub min_order: f64,
    /// Largest (over samples) of the best relative error over the steps.
    pub max_best_rel_error: f64,
}

fn random_state(space: &Arc<Space>, rng: &mut ChaCha8Rng, scale: f64) -> Result<State> {
    let c = (0..space.n_dofs()).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
    State::new(space.clone(), c, 0.0)
}

/// Compare the linearized rows with central differences of the pointwise
/// residual for random states, directions and points, including random
/// BDF history.
pub fn derivative_check(params: &Params, samples: usize, seed: u64) -> Result<DerivativeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let case = TestCase::Square;
    let space = uniform_space(2, 2, &case)?;
    let steps = [1e-2, 5e-3, 2.5e-3, 1e-3, 1e-4, 1e-5];
    let mut min_order = f64::INFINITY;
    let mut max_best = 0.0f64;
    for _ in 0..samples {
        let state = random_state(&space, &mut rng, 1.0)?;
        let dir = random_state(&space, &mut rng, 1.0)?;
        let prev = random_state(&space, &mut rng, 1.0)?;
        let history = TimeHistory::new(1.0 / params.dt, &[-1.0 / params.dt], vec![prev])?;
        let x = [rng.gen_range(0.01..0.99), rng.gen_range(0.01..0.99)];
        let jet = state.jet_at(x).ok_or_else(|| Error::invalid("sample point outside the mesh"))?;
        let djet = dir.jet_at(x).ok_or_else(|| Error::invalid("sample point outside the mesh"))?;
        let rows = linear_rows(&jet, history.alpha0, params);
        let exact: Vec<f64> = rows.iter().map(|r| r.apply(&djet)).collect();
        let enorm = exact.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let mut errs = Vec::with_capacity(steps.len());
        for &h in &steps {
            let shifted = |s: f64| -> Result<[f64; NEQ]> {
                let c: Vec<f64> = state.coeffs.iter().zip(&dir.coeffs).map(|(a, d)| a + s * d).collect();
                residual_fields(&State::new(space.clone(), c, 0.0)?, &history, params, x)
            };
            let (rp, rm) = (shifted(h)?, shifted(-h)?);
            let e: f64 = (0..NEQ)
                .map(|k| ((rp[k] - rm[k]) / (2.0 * h) - exact[k]).powi(2))
                .sum::<f64>()
                .sqrt();
            errs.push(e / enorm);
        }
        max_best = max_best.max(errs.iter().copied().fold(f64::INFINITY, f64::min));
        if errs[0] > 1e-10 {
            min_order = min_order.min((errs[0] / errs[1]).log2());
        }
    }
    Ok(DerivativeReport { samples, min_order, max_best_rel_error: max_best })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SteadyReport {
    pub max_functional: f64,
    pub max_change: f64,
}

/// Time-step a uniform phase at rest and record the functional and the
/// drift of the coefficients.
pub fn steady_state_check(params: &Params, value: f64, steps: usize, levels: usize) -> Result<SteadyReport> {
    let mut values = [0.0; NFIELDS];
    values[PHI] = value;
    let bcs = crate::twophase::system_bcs(crate::fespace::TraceFn::constant(value));
    let mesh = uniform_mesh(1usize << levels.saturating_sub(1).max(1))?;
    let space = Arc::new(Space::new(Arc::new(mesh), 2, bcs)?);
    let state = State::constant(space, values, 0.0)?;
    let start = state.coeffs.clone();
    let config = DriverConfig { max_time_steps: steps, levels, ..DriverConfig::default() };
    let mut sim = Simulation::from_state(params.clone(), config, TestCase::Square, state)?;
    let mut report = SteadyReport { max_functional: 0.0, max_change: 0.0 };
    while !sim.is_finished() {
        let log = sim.step()?;
        for g in &log.grids {
            report.max_functional = report.max_functional.max(g.g_initial).max(g.g_final);
        }
        let st = sim.state();
        if st.coeffs.len() != start.len() {
            return Err(Error::InvalidState("steady run ended on a different grid".into()));
        }
        let change = st.coeffs.iter().zip(&start).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        report.max_change = report.max_change.max(change);
    }
    Ok(report)
}

/// Squared H1 norm over all fields of `state - exact`.
pub fn h1_error_squared(state: &State, exact: &Manufactured) -> f64 {
    let space = &state.space;
    let mut vals = [0.0; NFIELDS];
    let mut grads = [[0.0; 2]; NFIELDS];
    let mut total = 0.0;
    for leaf in 0..space.mesh().n_leaves() {
        let (o, h) = space.leaf_geometry(leaf);
        for (x, w) in space.quadrature_on(leaf) {
            let xi = [2.0 * (x[0] - o[0]) / h[0] - 1.0, 2.0 * (x[1] - o[1]) / h[1] - 1.0];
            space.eval_on_leaf(&state.coeffs, leaf, xi, &mut vals, &mut grads);
            let j = exact.jet(x);
            for f in 0..NFIELDS {
                total += w * ((vals[f] - j.val[f]).powi(2) + (grads[f][0] - j.dx[f]).powi(2) + (grads[f][1] - j.dy[f]).powi(2));
            }
        }
    }
    total
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub elements: usize,
    pub functional: f64,
    pub h1_error_sq: f64,
}

/// Observed orders `log2(a_k / a_{k+1})` of a sequence on meshes halved each time.
pub fn observed_orders(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Solve the manufactured problem by nested iteration up to each of the
/// given uniform levels (level `L` ends on a `2^(L-1)` square grid).
pub fn manufactured_convergence(
    exact: Manufactured,
    params: &Params,
    base: &DriverConfig,
    levels: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    let mut rows = Vec::new();
    for &l in levels {
        let config = DriverConfig { levels: l, max_time_steps: 1, ..base.clone() };
        let mut sim = Simulation::new(params.clone(), config, TestCase::Manufactured(exact))?;
        let log = sim.step()?.clone();
        let fin = log.finest().ok_or_else(|| Error::InvalidState("empty step".into()))?;
        rows.push(ConvergenceRow {
            elements: fin.elements,
            functional: fin.g_final,
            h1_error_sq: h1_error_squared(sim.state(), &exact),
        });
    }
    Ok(rows)
}

/// Ratio of the linearized functional to the squared H1 error after one
/// Newton step from the interpolant of the exact solution, on uniform
/// `n x n` grids.
pub fn norm_equivalence_probe(exact: Manufactured, params: &Params, base: &DriverConfig, sizes: &[usize]) -> Result<Vec<(usize, f64, f64)>> {
    let case = TestCase::Manufactured(exact);
    let mut out = Vec::new();
    for &n in sizes {
        let space = uniform_space(n, 2, &case)?;
        let mut c = space.interpolate(|x, v| v.copy_from_slice(&exact.values(x)));
        space.impose_fixed(&mut c);
        let start = State::new(space.clone(), c, 0.0)?;
        let alpha0 = 1.0 / params.dt;
        let history = TimeHistory { alpha0, terms: Vec::new(), forcing: Some(exact.forcing(alpha0, params)) };
        let config = DriverConfig { max_newton: 1, solver_gain_floor: 1e-6, solver_tol: 1e-10, max_cycles: 200, ..base.clone() };
        let (state, recs) = newton_on_grid(start, &history, params, &config)?;
        let g_lin = recs.last().map_or(0.0, |r| r.g_lin);
        out.push((n, g_lin, h1_error_squared(&state, &exact)));
    }
    Ok(out)
}

/// Solve the first Newton system of a test case on a uniform `n x n`
/// biquadratic grid with MG-PCG to `tol`, without the gain stop.
pub fn newton_system_solve(case: &TestCase, params: &Params, n: usize, mg: MgOptions, tol: f64, max_cycles: usize) -> Result<SolveStats> {
    let space = uniform_space(n, 2, case)?;
    let state = build_initial_state(space.clone(), case)?;
    let history = match case {
        TestCase::Manufactured(m) => {
            let a = 1.0 / params.dt;
            TimeHistory { alpha0: a, terms: Vec::new(), forcing: Some(m.forcing(a, params)) }
        }
        _ => TimeHistory::new(1.0 / params.dt, &[-1.0 / params.dt], vec![state.clone()])?,
    };
    let lin = linearize(&state, &history, params)?;
    let chain = space_hierarchy(&space)?;
    let pattern = SystemPattern::new(&space)?;
    let sys = assemble_constrained(&lin, &pattern);
    let prolongs = chain
        .windows(2)
        .map(|w| crate::fespace::prolongation_free(&w[0], &w[1]))
        .collect::<Result<Vec<_>>>()?;
    let blocks = chain.iter().map(|s| s.block_ptr().to_vec()).collect();
    let hier = Hierarchy::new(&sys, prolongs, blocks, mg)?;
    let x0 = vec![0.0; sys.rhs.len()];
    let (_, stats) = pcg(
        &sys.matrix,
        &sys.rhs,
        &x0,
        PcgOptions { tol, max_iter: max_cycles, gain_stop: None },
        Preconditioner::Multigrid(&hier),
    )?;
    Ok(stats)
}

/// Driver settings that solve every grid to discretization accuracy:
/// small gain floor and Newton tolerance.
pub fn tight_solver_config() -> DriverConfig {
    DriverConfig { solver_gain_floor: 1e-3, newton_rel_tol: 0.01, max_cycles: 200, ..DriverConfig::default() }
}

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// The property suite run by the `verify` command: quick checks with the
/// given parameters plus the manufactured-solution checks.
pub fn run_suite(params: &Params) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let d = derivative_check(params, 20, 11)?;
    out.push(CheckResult {
        name: "derivative",
        passed: d.min_order >= 1.9 && d.max_best_rel_error <= 1e-6,
        detail: format!("min order {:.3}, worst best-step relative error {:.2e}", d.min_order, d.max_best_rel_error),
    });
    for v in [1.0, -1.0] {
        let s = steady_state_check(params, v, 10, 4)?;
        out.push(CheckResult {
            name: if v > 0.0 { "steady phase +1" } else { "steady phase -1" },
            passed: s.max_functional <= 1e-24 && s.max_change <= 1e-12,
            detail: format!("max functional {:.2e}, max change {:.2e}", s.max_functional, s.max_change),
        });
    }
    let mp = crate::io::manufactured_params();
    let tight = tight_solver_config();
    let probe = norm_equivalence_probe(Manufactured::default(), &mp, &tight, &[4, 8, 16])?;
    let ratios: Vec<f64> = probe.iter().map(|(_, g, e)| g / e).collect();
    let spread = ratios.iter().copied().fold(0.0, f64::max) / ratios.iter().copied().fold(f64::INFINITY, f64::min);
    out.push(CheckResult {
        name: "norm equivalence",
        passed: spread < 10.0,
        detail: format!("G/|e|^2 ratios {ratios:.3?}, spread {spread:.2}"),
    });
    let rows = manufactured_convergence(Manufactured::default(), &mp, &tight, &[4, 5, 6])?;
    let orders = observed_orders(&rows.iter().map(|r| r.functional.sqrt()).collect::<Vec<_>>());
    out.push(CheckResult {
        name: "manufactured convergence",
        passed: orders.iter().all(|o| *o >= 1.8),
        detail: format!("orders of sqrt(G) {orders:.3?}"),
    });
    Ok(out)
}
