//! Time loop, nested iteration over a grid sequence, and the Newton loop.
//!
//! Each time step starts on a 2x2 bilinear grid, raises the degree to 2 on
//! the same mesh, then refines (uniformly or adaptively) until the grid
//! budget or the functional tolerance is reached. Every grid inherits the
//! previous grid's solution through the exact nested embedding, and the
//! grids solved so far form the multigrid hierarchy of the next solve.

use std::sync::Arc;

use crate::adapt::{mark_ace, mark_dorfler, ErrorField, WorkModel};
use crate::energy::{energy_of, EnergyRecord};
use crate::error::{Error, Result};
use crate::fespace::{interpolate_from, prolong, prolongation_free, Space};
use crate::linsolve::{blocks_to_patches, dot, pcg, CsrMatrix, GainStop, Hierarchy, MgOptions, PcgOptions, Preconditioner};
use crate::mesh::{Domain, MarkSet, Mesh};
use crate::twophase::{
    assemble_constrained, build_initial_state, linearize_with, nonlinear_functional_with, Params, State, StepData,
    SystemPattern, TestCase, TimeHistory, TimeScheme, P,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Refinement {
    Uniform,
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Marking {
    /// Efficiency-based marking with work `(N + 3m)^exponent`.
    Ace { work_exponent: f64 },
    Dorfler { theta: f64 },
}

/// Multigrid smoother blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoother {
    /// All free unknowns of one node.
    NodeBlock,
    /// All free unknowns touching one element (overlapping).
    ElementPatch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriverConfig {
    pub max_time_steps: usize,
    /// Newton iterations allowed per grid.
    pub max_newton: usize,
    /// Exit when `|G_lin - G_nl| / max(G_nl, functional_floor)` drops below this.
    pub newton_rel_tol: f64,
    pub functional_floor: f64,
    /// Relative residual at which a linear solve stops regardless of gain.
    pub solver_tol: f64,
    /// Minimum relative drop of the linearized functional per cycle.
    pub solver_gain_floor: f64,
    pub max_cycles: usize,
    /// Number of grids in the nested sequence, the 2x2 bilinear grid included.
    pub levels: usize,
    /// Stop refining once the functional falls below this value.
    pub functional_tol: Option<f64>,
    pub max_elements: usize,
    pub refinement: Refinement,
    pub marking: Marking,
    /// Solve each step on the previous finest grid instead of starting over.
    pub warm_start: bool,
    pub mg: MgOptions,
    pub smoother: Smoother,
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig {
            max_time_steps: 100,
            max_newton: 10,
            newton_rel_tol: 0.1,
            functional_floor: 1e-20,
            solver_tol: 1e-8,
            solver_gain_floor: 0.1,
            max_cycles: 50,
            levels: 5,
            functional_tol: None,
            max_elements: 1 << 16,
            refinement: Refinement::Uniform,
            marking: Marking::Ace { work_exponent: 1.0 },
            warm_start: false,
            mg: MgOptions::default(),
            smoother: Smoother::NodeBlock,
        }
    }
}

impl DriverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("newton_rel_tol", self.newton_rel_tol),
            ("solver_tol", self.solver_tol),
            ("solver_gain_floor", self.solver_gain_floor),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Range(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        if self.max_newton == 0 || self.max_cycles == 0 || self.levels == 0 || self.max_elements == 0 {
            return Err(Error::Range("max_newton, max_cycles, levels and max_elements must be at least 1".into()));
        }
        if let Some(t) = self.functional_tol {
            if !(t > 0.0) {
                return Err(Error::Range(format!("functional_tol must be positive, got {t}")));
            }
        }
        match self.marking {
            Marking::Dorfler { theta } if !(theta > 0.0 && theta <= 1.0) => {
                Err(Error::Range(format!("dorfler theta must lie in (0,1], got {theta}")))
            }
            Marking::Ace { work_exponent } if !(work_exponent > 0.0) => {
                Err(Error::Range(format!("work exponent must be positive, got {work_exponent}")))
            }
            _ => Ok(()),
        }
    }
}

/// BDF coefficients: leading coefficient and weights of the previous
/// states, newest first. Step 1 uses BDF1.
pub fn bdf_coeffs(step_index: usize, dt: f64, scheme: TimeScheme) -> Result<(f64, Vec<f64>)> {
    if step_index == 0 {
        return Err(Error::invalid("time steps are numbered from 1"));
    }
    if step_index == 1 || scheme == TimeScheme::Bdf1 {
        Ok((1.0 / dt, vec![-1.0 / dt]))
    } else {
        Ok((1.5 / dt, vec![-2.0 / dt, 0.5 / dt]))
    }
}

/// One Newton iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonRecord {
    pub level: usize,
    pub iteration: usize,
    pub elements: usize,
    pub g_before: f64,
    pub g_after: f64,
    pub g_lin: f64,
    pub step_scale: f64,
    pub cycles: usize,
    pub conv_factor: f64,
    pub rel_residual: f64,
    /// Work units relative to this grid's matrix.
    pub wu_local: f64,
    pub nnz: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridLog {
    pub level: usize,
    pub degree: usize,
    pub elements: usize,
    pub dofs: usize,
    pub nnz: usize,
    pub newton_steps: usize,
    pub g_initial: f64,
    pub g_final: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub time: f64,
    pub grids: Vec<GridLog>,
    pub records: Vec<NewtonRecord>,
    /// Work units in finest-grid matvecs of this step.
    pub wu: f64,
    pub avg_conv_factor: f64,
    pub finest_nnz: usize,
    /// Elementwise functional on the finest grid, in leaf order.
    pub indicators: Vec<f64>,
}

impl StepLog {
    pub fn finest(&self) -> Option<&GridLog> {
        self.grids.last()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub test_case: String,
    pub steps: Vec<StepLog>,
}

/// Grids of one nested iteration: spaces, sparsity patterns and the
/// free-dof prolongations between consecutive grids.
struct GridStack {
    spaces: Vec<Arc<Space>>,
    patterns: Vec<SystemPattern>,
    prolongs: Vec<CsrMatrix>,
    patches: Vec<Vec<Vec<u32>>>,
    smoother: Smoother,
}

fn smoother_patches(space: &Space, smoother: Smoother) -> Vec<Vec<u32>> {
    match smoother {
        Smoother::NodeBlock => blocks_to_patches(space.block_ptr()),
        Smoother::ElementPatch => space.element_patches(),
    }
}

impl GridStack {
    fn new(space: Arc<Space>, smoother: Smoother) -> Result<Self> {
        let pattern = SystemPattern::new(&space)?;
        let patches = vec![smoother_patches(&space, smoother)];
        Ok(GridStack { spaces: vec![space], patterns: vec![pattern], prolongs: Vec::new(), patches, smoother })
    }

    fn push(&mut self, space: Arc<Space>) -> Result<()> {
        let p = prolongation_free(self.spaces.last().unwrap(), &space)?;
        self.patterns.push(SystemPattern::new(&space)?);
        self.prolongs.push(p);
        self.patches.push(smoother_patches(&space, self.smoother));
        self.spaces.push(space);
        Ok(())
    }

    fn top(&self) -> &Arc<Space> {
        self.spaces.last().unwrap()
    }
}

pub fn coarsest_mesh() -> Result<Arc<Mesh>> {
    Ok(Arc::new(Mesh::build_uniform(2, 2, Domain::unit_square())?))
}

/// Newton iterations on one grid. `stack` supplies the multigrid hierarchy
/// (its top grid is the state's grid).
fn newton_on_stack(
    mut state: State,
    step: &StepData,
    params: &Params,
    stack: &GridStack,
    config: &DriverConfig,
    level: usize,
) -> Result<(State, Vec<NewtonRecord>)> {
    let space = stack.top().clone();
    let pattern = stack.patterns.last().unwrap();
    let mut records = Vec::new();
    let elements = space.mesh().n_leaves();
    for it in 0..config.max_newton {
        let lin = linearize_with(&state, step, params)?;
        let g_nl = lin.g_nl;
        if it == 0 && g_nl <= config.functional_floor {
            break;
        }
        let sys = assemble_constrained(&lin, pattern);
        let hier = Hierarchy::with_patches(&sys, stack.prolongs.clone(), stack.patches.clone(), config.mg)?;
        let opts = PcgOptions {
            tol: config.solver_tol,
            max_iter: config.max_cycles,
            gain_stop: Some(GainStop { offset: g_nl, floor: config.solver_gain_floor }),
        };
        let x0 = vec![0.0; sys.rhs.len()];
        let (x, stats) = pcg(&sys.matrix, &sys.rhs, &x0, opts, Preconditioner::Multigrid(&hier))?;
        let xax = sys.matrix.quadratic_form(&x);
        let xb = dot(&x, &sys.rhs);
        let delta = space.expand_homogeneous(&x);

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=5 {
            let mut trial = state.coeffs.clone();
            for (t, d) in trial.iter_mut().zip(&delta) {
                *t += scale * d;
            }
            space.project_zero_mean(&mut trial);
            let cand = State::new(space.clone(), trial, state.time)?;
            let (g_new, _) = nonlinear_functional_with(&cand, step, params);
            if g_new.is_finite() && g_new <= g_nl * (1.0 + 1e-10) {
                accepted = Some((cand, g_new));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, g_new)) = accepted else {
            return Err(Error::NonConvergence {
                level,
                detail: format!("functional {g_nl:e} did not decrease after 5 step halvings (Newton iteration {})", it + 1),
            });
        };
        let g_lin = (scale * scale * xax - 2.0 * scale * xb + g_nl).max(0.0);
        records.push(NewtonRecord {
            level,
            iteration: it + 1,
            elements,
            g_before: g_nl,
            g_after: g_new,
            g_lin,
            step_scale: scale,
            cycles: stats.iterations,
            conv_factor: stats.conv_factor,
            rel_residual: stats.rel_residual,
            wu_local: stats.wu + 1.0,
            nnz: sys.matrix.nnz(),
        });
        state = next;
        if (g_lin - g_new).abs() / g_new.max(config.functional_floor) < config.newton_rel_tol {
            break;
        }
    }
    Ok((state, records))
}

/// Newton's method on a single grid, with a one-level (direct) hierarchy
/// or the two-level hierarchy of the grid and its coarsest ancestor.
pub fn newton_on_grid(
    state: State,
    history: &TimeHistory,
    params: &Params,
    config: &DriverConfig,
) -> Result<(State, Vec<NewtonRecord>)> {
    let step = StepData::new(&state.space, history)?;
    let stack = single_grid_stack(&state.space, config.smoother)?;
    newton_on_stack(state, &step, params, &stack, config, 0)
}

/// Grid chain below a single space: bilinear and biquadratic spaces on
/// the base mesh, then one biquadratic space per refinement level.
pub fn space_hierarchy(space: &Arc<Space>) -> Result<Vec<Arc<Space>>> {
    let mesh = space.mesh();
    let bcs = space.bcs().clone();
    let top = mesh.max_level();
    if space.degree() == 1 {
        if top > 0 {
            return Err(Error::invalid("bilinear spaces are only used on the base mesh"));
        }
        return Ok(vec![space.clone()]);
    }
    let mut out = vec![Arc::new(Space::new(Arc::new(mesh.truncate(0)), 1, bcs.clone())?)];
    for level in 0..top {
        out.push(Arc::new(Space::new(Arc::new(mesh.truncate(level)), 2, bcs.clone())?));
    }
    out.push(space.clone());
    if out[0].n_free() > crate::linsolve::MAX_COARSE {
        return Err(Error::invalid("base mesh too fine for the direct coarse solve"));
    }
    Ok(out)
}

fn single_grid_stack(space: &Arc<Space>, smoother: Smoother) -> Result<GridStack> {
    let chain = space_hierarchy(space)?;
    let mut stack = GridStack::new(chain[0].clone(), smoother)?;
    for s in &chain[1..] {
        stack.push(s.clone())?;
    }
    Ok(stack)
}

fn refine_space(space: &Space, marks: &MarkSet) -> Result<Arc<Space>> {
    let mesh = Arc::new(space.mesh().refine(marks)?);
    Ok(Arc::new(Space::new(mesh, 2, space.bcs().clone())?))
}

fn transfer(state: &State, to: &Arc<Space>) -> Result<State> {
    let mut c = if to.mesh().is_refinement_of(state.space.mesh()) && to.degree() >= state.space.degree() {
        prolong(&state.space, to, &state.coeffs)?
    } else {
        interpolate_from(&state.space, &state.coeffs, to)?
    };
    to.impose_fixed(&mut c);
    State::new(to.clone(), c, state.time)
}

fn marks_for(state: &State, per_element: &[f64], config: &DriverConfig) -> Result<MarkSet> {
    let mesh = state.space.mesh();
    match config.refinement {
        Refinement::Uniform => Ok(mesh.leaves().iter().copied().collect()),
        Refinement::Adaptive => {
            let err = ErrorField::new(mesh.leaves().to_vec(), per_element.to_vec())?;
            Ok(match config.marking {
                Marking::Ace { work_exponent } => {
                    mark_ace(&err, state.space.degree(), WorkModel { exponent: work_exponent })
                }
                Marking::Dorfler { theta } => mark_dorfler(&err, theta)?,
            })
        }
    }
}

/// One time step of nested iteration. `prev` supplies the initial guess
/// (interpolated onto the coarsest grid); `history` the BDF data.
pub fn nested_iteration_timestep(
    prev: &State,
    history: &TimeHistory,
    params: &Params,
    config: &DriverConfig,
    time: f64,
    step_index: usize,
) -> Result<(State, StepLog)> {
    let first_space = if config.warm_start {
        prev.space.clone()
    } else {
        Arc::new(Space::new(coarsest_mesh()?, 1, prev.space.bcs().clone())?)
    };
    let mut state = transfer(prev, &first_space)?;
    state.time = time;
    let mut stack = if config.warm_start {
        single_grid_stack(&first_space, config.smoother)?
    } else {
        GridStack::new(first_space, config.smoother)?
    };
    let mut grids = Vec::new();
    let mut records = Vec::new();
    let mut indicators = Vec::new();
    let budget = if config.warm_start { 1 } else { config.levels };
    for level in 0..budget {
        let space = stack.top().clone();
        let step = StepData::new(&space, history)?;
        let (g_initial, _) = nonlinear_functional_with(&state, &step, params);
        let (next, recs) = newton_on_stack(state, &step, params, &stack, config, level)?;
        state = next;
        let (g_final, per_element) = nonlinear_functional_with(&state, &step, params);
        grids.push(GridLog {
            level,
            degree: space.degree(),
            elements: space.mesh().n_leaves(),
            dofs: space.n_free(),
            nnz: stack.patterns.last().unwrap().nnz(),
            newton_steps: recs.len(),
            g_initial,
            g_final,
        });
        records.extend(recs);
        indicators = per_element.clone();
        if level + 1 == budget || config.functional_tol.is_some_and(|t| g_final <= t) {
            break;
        }
        let next_space = if space.degree() == 1 {
            Arc::new(Space::new(space.mesh_arc().clone(), 2, space.bcs().clone())?)
        } else {
            let marks = marks_for(&state, &per_element, config)?;
            if marks.is_empty() {
                break;
            }
            let refined = refine_space(&space, &marks)?;
            if refined.mesh().n_leaves() > config.max_elements {
                break;
            }
            refined
        };
        state = transfer(&state, &next_space)?;
        stack.push(next_space)?;
    }
    let finest_nnz = grids.last().map_or(1, |g| g.nnz).max(1);
    let wu = records.iter().map(|r| r.wu_local * r.nnz as f64 / finest_nnz as f64).sum();
    let solves: Vec<f64> = records.iter().filter(|r| r.cycles > 0).map(|r| r.conv_factor).collect();
    let avg_conv_factor = if solves.is_empty() { 0.0 } else { solves.iter().sum::<f64>() / solves.len() as f64 };
    let log = StepLog { step: step_index, time, grids, records, wu, avg_conv_factor, finest_nnz, indicators };
    Ok((state, log))
}

/// Mesh used to represent the initial condition: the finest uniform grid
/// of the nested sequence, or (adaptive runs) a grid refined toward the
/// interface to the same depth.
pub fn initial_space(case: &TestCase, config: &DriverConfig) -> Result<Arc<Space>> {
    let depth = config.levels.saturating_sub(2) as u32;
    let mut mesh = (*coarsest_mesh()?).clone();
    for _ in 0..depth {
        let marks: MarkSet = match (config.refinement, case) {
            (Refinement::Adaptive, TestCase::Coalescence { .. } | TestCase::Square) => mesh
                .leaves()
                .iter()
                .copied()
                .filter(|&id| phase_varies(&mesh, id, case))
                .collect(),
            _ => mesh.leaves().iter().copied().collect(),
        };
        if marks.is_empty() {
            break;
        }
        let next = mesh.refine(&marks)?;
        if next.n_leaves() > config.max_elements {
            break;
        }
        mesh = next;
    }
    Ok(Arc::new(Space::new(Arc::new(mesh), 2, case.bcs())?))
}

fn phase_varies(mesh: &Mesh, id: usize, case: &TestCase) -> bool {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for j in 0..=4 {
        for i in 0..=4 {
            let xi = [-1.0 + 0.5 * i as f64, -1.0 + 0.5 * j as f64];
            let v = case.phi0(mesh.map_to_physical(id, xi));
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    hi - lo > 0.1 || hi.abs().min(lo.abs()) < 0.9
}

/// Time-stepping state of a run.
pub struct Simulation {
    pub params: Params,
    pub config: DriverConfig,
    pub case: TestCase,
    state: State,
    previous: Vec<State>,
    step: usize,
    log: RunLog,
    energy: Vec<EnergyRecord>,
}

impl Simulation {
    pub fn new(params: Params, config: DriverConfig, case: TestCase) -> Result<Simulation> {
        let space = initial_space(&case, &config)?;
        let state = build_initial_state(space, &case)?;
        Simulation::from_state(params, config, case, state)
    }

    /// Start from a given state (its space's boundary conditions are used).
    pub fn from_state(params: Params, config: DriverConfig, case: TestCase, state: State) -> Result<Simulation> {
        params.validate()?;
        config.validate()?;
        let e0 = energy_of(&state, &params, 0.0);
        Ok(Simulation {
            params,
            config,
            case,
            state,
            previous: Vec::new(),
            step: 0,
            log: RunLog { test_case: case.name().to_string(), steps: Vec::new() },
            energy: vec![e0],
        })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn energy(&self) -> &[EnergyRecord] {
        &self.energy
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.max_time_steps
    }

    fn history(&self, step_index: usize) -> Result<TimeHistory> {
        let dt = self.params.dt;
        if let TestCase::Manufactured(m) = self.case {
            let alpha0 = 1.0 / dt;
            return Ok(TimeHistory { alpha0, terms: Vec::new(), forcing: Some(m.forcing(alpha0, &self.params)) });
        }
        let (alpha0, weights) = bdf_coeffs(step_index, dt, self.params.scheme)?;
        let mut states = vec![self.state.clone()];
        if weights.len() > 1 {
            states.extend(self.previous.first().cloned());
        }
        TimeHistory::new(alpha0, &weights, states)
    }

    /// Advance one time step.
    pub fn step(&mut self) -> Result<&StepLog> {
        let n = self.step + 1;
        let time = n as f64 * self.params.dt;
        let history = self.history(n)?;
        let (next, log) = nested_iteration_timestep(&self.state, &history, &self.params, &self.config, time, n)?;
        let prev = std::mem::replace(&mut self.state, next);
        self.previous.insert(0, prev);
        self.previous.truncate(1);
        self.step = n;
        let mut rec = energy_of(&self.state, &self.params, time);
        crate::energy::fill_rate(&self.energy, &mut rec, self.params.dt, self.params.scheme);
        self.energy.push(rec);
        self.log.steps.push(log);
        Ok(self.log.steps.last().unwrap())
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }
}

/// Run the whole time loop.
pub fn run_simulation(params: Params, config: DriverConfig, case: TestCase) -> Result<Simulation> {
    let mut sim = Simulation::new(params, config, case)?;
    sim.run()?;
    Ok(sim)
}

/// Mean of `P` over the domain; zero after every accepted Newton update.
pub fn pressure_mean(state: &State) -> f64 {
    state.space.integrate_component(&state.coeffs, P) / state.space.mesh().domain().area()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bdf_coefficients() {
        assert_eq!(bdf_coeffs(1, 0.01, TimeScheme::Bdf2).unwrap(), (100.0, vec![-100.0]));
        let (a, w) = bdf_coeffs(2, 0.01, TimeScheme::Bdf2).unwrap();
        assert!((a - 150.0).abs() < 1e-12 && (w[0] + 200.0).abs() < 1e-12 && (w[1] - 50.0).abs() < 1e-12);
        assert!(bdf_coeffs(0, 0.01, TimeScheme::Bdf2).is_err());
        // exact on linear data u(t) = 2 + 3t
        let u = |t: f64| 2.0 + 3.0 * t;
        let dt = 0.01;
        let t = 0.5;
        let d = a * u(t) + w[0] * u(t - dt) + w[1] * u(t - 2.0 * dt);
        assert!((d - 3.0).abs() < 1e-10);
    }
}
