//! First-order least-squares form of the Allen-Cahn/Navier-Stokes system.
//!
//! Nine unknowns: velocity `u`, velocity gradient `V` (with `V_ij = d_i u_j`
//! and `V22 = -V11` never stored), pressure `p`, phase `phi` and its
//! gradient `B`. Thirteen residual equations:
//!
//! | row | equation |
//! |-----|----------|
//! | 0-3 | `V - grad u` (entries 11, 12, 21, 22) |
//! | 4-5 | columnwise curl of `V` |
//! | 6   | `div u` |
//! | 7-8 | momentum: `a0 u + h_u + grad p + lam B div B - mu div V [+ (u.grad) u]` |
//! | 9-10 | `B - grad phi` |
//! | 11  | `curl B` |
//! | 12  | phase: `a0 phi + h_phi + u.B - gamma (div B - phi (phi^2-1)/eps^2)` |
//!
//! `a0` and `h` come from the BDF difference; a forcing vector (used by the
//! manufactured solution) is subtracted from every row.

mod assembly;
mod initial;

use std::fmt;
use std::sync::Arc;

pub use assembly::{assemble, assemble_constrained, linearized_functional, SystemPattern};
pub use initial::{build_initial_state, ic_coalescence, ic_square, Manufactured, TestCase};

use crate::error::{Error, Result};
use crate::fespace::{BcSpec, BoundaryCondition, Space, TraceFn};

pub const U1: usize = 0;
pub const U2: usize = 1;
pub const V11: usize = 2;
pub const V12: usize = 3;
pub const V21: usize = 4;
pub const P: usize = 5;
pub const PHI: usize = 6;
pub const B1: usize = 7;
pub const B2: usize = 8;
pub const NFIELDS: usize = 9;
pub const NEQ: usize = 13;

pub const FIELD_NAMES: [&str; NFIELDS] = ["u1", "u2", "V11", "V12", "V21", "p", "phi", "B1", "B2"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeScheme {
    Bdf1,
    Bdf2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub mu: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub eps: f64,
    pub dt: f64,
    pub scheme: TimeScheme,
    pub include_advection: bool,
    pub ls_weights: [f64; NEQ],
    /// Replace the cubic `phi (phi^2 - 1)` by `slope * phi`, which makes the
    /// operator linear when `lambda = 0` and advection is off.
    pub linear_reaction: Option<f64>,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            mu: 1.0,
            lambda: 1e-4,
            gamma: 0.01,
            eps: 0.01,
            dt: 0.01,
            scheme: TimeScheme::Bdf2,
            include_advection: true,
            ls_weights: [1.0; NEQ],
            linear_reaction: None,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu", self.mu), ("gamma", self.gamma), ("eps", self.eps), ("dt", self.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Range(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Range(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if let Some(k) = self.ls_weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Range(format!("least-squares weight {k} must be positive")));
        }
        Ok(())
    }

    /// Reaction term `c(phi)` and its derivative.
    #[inline]
    pub(crate) fn reaction(&self, phi: f64) -> (f64, f64) {
        match self.linear_reaction {
            Some(s) => (s * phi, s),
            None => (phi * (phi * phi - 1.0), 3.0 * phi * phi - 1.0),
        }
    }
}

/// Boundary conditions of the two-phase system; `phi` takes `phi_trace`.
pub fn system_bcs(phi_trace: TraceFn) -> BcSpec {
    let zero = || BoundaryCondition::Dirichlet(TraceFn::constant(0.0));
    BcSpec::new(vec![
        zero(),
        zero(),
        zero(),
        BoundaryCondition::ZeroTangential { component: 0 },
        BoundaryCondition::ZeroTangential { component: 1 },
        BoundaryCondition::ZeroMean,
        BoundaryCondition::Dirichlet(phi_trace),
        BoundaryCondition::ZeroTangential { component: 0 },
        BoundaryCondition::ZeroTangential { component: 1 },
    ])
}

/// Coefficients of all nine fields on a space, at one time level.
#[derive(Clone, Debug)]
pub struct State {
    pub space: Arc<Space>,
    pub coeffs: Vec<f64>,
    pub time: f64,
}

impl State {
    pub fn new(space: Arc<Space>, coeffs: Vec<f64>, time: f64) -> Result<State> {
        if space.ncomp() != NFIELDS {
            return Err(Error::invalid(format!("state space must have {NFIELDS} components")));
        }
        if coeffs.len() != space.n_dofs() {
            return Err(Error::invalid("coefficient vector does not match the space"));
        }
        Ok(State { space, coeffs, time })
    }

    /// Constant fields.
    pub fn constant(space: Arc<Space>, values: [f64; NFIELDS], time: f64) -> Result<State> {
        let c = space.interpolate(|_, v| v.copy_from_slice(&values));
        State::new(space, c, time)
    }

    /// Nodal values of one field.
    pub fn field(&self, f: usize) -> Vec<f64> {
        self.coeffs.iter().skip(f).step_by(NFIELDS).copied().collect()
    }

    pub fn jet_at(&self, x: [f64; 2]) -> Option<Jet> {
        let (v, g) = self.space.eval_at(&self.coeffs, x)?;
        let mut j = Jet::default();
        for f in 0..NFIELDS {
            j.val[f] = v[f];
            j.dx[f] = g[f][0];
            j.dy[f] = g[f][1];
        }
        Some(j)
    }
}

/// Source term of every residual row.
#[derive(Clone)]
pub struct Forcing(Arc<dyn Fn([f64; 2]) -> [f64; NEQ] + Send + Sync>);

impl Forcing {
    pub fn new(f: impl Fn([f64; 2]) -> [f64; NEQ] + Send + Sync + 'static) -> Self {
        Forcing(Arc::new(f))
    }

    pub fn eval(&self, x: [f64; 2]) -> [f64; NEQ] {
        (self.0)(x)
    }
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Forcing(..)")
    }
}

/// Explicit data of one time step: the BDF leading coefficient, weighted
/// previous states, and an optional forcing.
#[derive(Clone, Debug, Default)]
pub struct TimeHistory {
    pub alpha0: f64,
    pub terms: Vec<(f64, State)>,
    pub forcing: Option<Forcing>,
}

impl TimeHistory {
    /// Steady problem: no time derivative.
    pub fn steady() -> Self {
        TimeHistory::default()
    }

    pub fn new(alpha0: f64, weights: &[f64], states: Vec<State>) -> Result<Self> {
        if weights.len() != states.len() {
            return Err(Error::InvalidState(format!(
                "time scheme needs {} previous states, {} available",
                weights.len(),
                states.len()
            )));
        }
        Ok(TimeHistory { alpha0, terms: weights.iter().copied().zip(states).collect(), forcing: None })
    }

    pub fn with_forcing(mut self, forcing: Forcing) -> Self {
        self.forcing = Some(forcing);
        self
    }

    /// `sum_j w_j (u1, u2, phi)_j` at a point.
    pub fn history_at(&self, x: [f64; 2]) -> Result<[f64; 3]> {
        let mut h = [0.0; 3];
        for (w, s) in &self.terms {
            let j = s
                .jet_at(x)
                .ok_or_else(|| Error::InvalidState(format!("history undefined at {x:?}")))?;
            h[0] += w * j.val[U1];
            h[1] += w * j.val[U2];
            h[2] += w * j.val[PHI];
        }
        Ok(h)
    }
}

/// Values and first derivatives of the nine fields at a point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub val: [f64; NFIELDS],
    pub dx: [f64; NFIELDS],
    pub dy: [f64; NFIELDS],
}

/// Pointwise residual (unweighted).
pub fn residual_point(j: &Jet, alpha0: f64, hist: [f64; 3], forcing: &[f64; NEQ], p: &Params) -> [f64; NEQ] {
    let v = &j.val;
    let dx = &j.dx;
    let dy = &j.dy;
    let div_b = dx[B1] + dy[B2];
    let (adv1, adv2) = if p.include_advection {
        (v[U1] * v[V11] + v[U2] * v[V21], v[U1] * v[V12] - v[U2] * v[V11])
    } else {
        (0.0, 0.0)
    };
    let (react, _) = p.reaction(v[PHI]);
    let mut r = [
        v[V11] - dx[U1],
        v[V12] - dx[U2],
        v[V21] - dy[U1],
        -v[V11] - dy[U2],
        dx[V21] - dy[V11],
        -dx[V11] - dy[V12],
        dx[U1] + dy[U2],
        alpha0 * v[U1] + hist[0] + dx[P] + p.lambda * v[B1] * div_b - p.mu * (dx[V11] + dy[V21]) + adv1,
        alpha0 * v[U2] + hist[1] + dy[P] + p.lambda * v[B2] * div_b - p.mu * (dx[V12] - dy[V11]) + adv2,
        v[B1] - dx[PHI],
        v[B2] - dy[PHI],
        dx[B2] - dy[B1],
        alpha0 * v[PHI] + hist[2] + v[U1] * v[B1] + v[U2] * v[B2] - p.gamma * (div_b - react / (p.eps * p.eps)),
    ];
    for (ri, fi) in r.iter_mut().zip(forcing) {
        *ri -= fi;
    }
    r
}

/// Derivative kinds a linearized row can apply to a field.
pub const VAL: u8 = 0;
pub const DX: u8 = 1;
pub const DY: u8 = 2;

/// One row of the linearized operator: `sum c * D_kind(field)`.
#[derive(Clone, Copy, Debug)]
pub struct LinRow {
    pub len: usize,
    pub terms: [(u8, u8, f64); 12],
}

impl LinRow {
    fn new(terms: &[(usize, u8, f64)]) -> Self {
        let mut r = LinRow { len: 0, terms: [(0, 0, 0.0); 12] };
        for &(f, k, c) in terms {
            if c != 0.0 {
                r.terms[r.len] = (f as u8, k, c);
                r.len += 1;
            }
        }
        r
    }

    pub fn terms(&self) -> &[(u8, u8, f64)] {
        &self.terms[..self.len]
    }

    /// Apply to a jet of increments.
    pub fn apply(&self, d: &Jet) -> f64 {
        self.terms()
            .iter()
            .map(|&(f, k, c)| {
                let f = f as usize;
                c * match k {
                    VAL => d.val[f],
                    DX => d.dx[f],
                    _ => d.dy[f],
                }
            })
            .sum()
    }
}

/// Frechet derivative of `residual_point` at `j`.
pub fn linear_rows(j: &Jet, alpha0: f64, p: &Params) -> [LinRow; NEQ] {
    let v = &j.val;
    let div_b = j.dx[B1] + j.dy[B2];
    let lam = p.lambda;
    let mu = p.mu;
    let g = p.gamma;
    let adv = if p.include_advection { 1.0 } else { 0.0 };
    let (_, dreact) = p.reaction(v[PHI]);
    [
        LinRow::new(&[(V11, VAL, 1.0), (U1, DX, -1.0)]),
        LinRow::new(&[(V12, VAL, 1.0), (U2, DX, -1.0)]),
        LinRow::new(&[(V21, VAL, 1.0), (U1, DY, -1.0)]),
        LinRow::new(&[(V11, VAL, -1.0), (U2, DY, -1.0)]),
        LinRow::new(&[(V21, DX, 1.0), (V11, DY, -1.0)]),
        LinRow::new(&[(V11, DX, -1.0), (V12, DY, -1.0)]),
        LinRow::new(&[(U1, DX, 1.0), (U2, DY, 1.0)]),
        LinRow::new(&[
            (U1, VAL, alpha0 + adv * v[V11]),
            (U2, VAL, adv * v[V21]),
            (V11, VAL, adv * v[U1]),
            (V21, VAL, adv * v[U2]),
            (P, DX, 1.0),
            (B1, VAL, lam * div_b),
            (B1, DX, lam * v[B1]),
            (B2, DY, lam * v[B1]),
            (V11, DX, -mu),
            (V21, DY, -mu),
        ]),
        LinRow::new(&[
            (U2, VAL, alpha0 - adv * v[V11]),
            (U1, VAL, adv * v[V12]),
            (V12, VAL, adv * v[U1]),
            (V11, VAL, -adv * v[U2]),
            (P, DY, 1.0),
            (B2, VAL, lam * div_b),
            (B1, DX, lam * v[B2]),
            (B2, DY, lam * v[B2]),
            (V12, DX, -mu),
            (V11, DY, mu),
        ]),
        LinRow::new(&[(B1, VAL, 1.0), (PHI, DX, -1.0)]),
        LinRow::new(&[(B2, VAL, 1.0), (PHI, DY, -1.0)]),
        LinRow::new(&[(B2, DX, 1.0), (B1, DY, -1.0)]),
        LinRow::new(&[
            (PHI, VAL, alpha0 + g * dreact / (p.eps * p.eps)),
            (U1, VAL, v[B1]),
            (U2, VAL, v[B2]),
            (B1, VAL, v[U1]),
            (B2, VAL, v[U2]),
            (B1, DX, -g),
            (B2, DY, -g),
        ]),
    ]
}

/// Residual of the semi-discrete equations at a physical point.
pub fn residual_fields(state: &State, history: &TimeHistory, params: &Params, x: [f64; 2]) -> Result<[f64; NEQ]> {
    let j = state
        .jet_at(x)
        .ok_or_else(|| Error::invalid(format!("point {x:?} outside the domain")))?;
    let h = history.history_at(x)?;
    let f = history.forcing.as_ref().map_or([0.0; NEQ], |f| f.eval(x));
    Ok(residual_point(&j, history.alpha0, h, &f, params))
}

/// History and forcing tabulated at the quadrature points of a space.
/// Fixed for one time step on one grid, so Newton iterations reuse it.
#[derive(Clone, Debug)]
pub struct StepData {
    pub alpha0: f64,
    pub hist: Vec<[f64; 3]>,
    pub forcing: Option<Vec<[f64; NEQ]>>,
}

impl StepData {
    pub fn new(space: &Space, history: &TimeHistory) -> Result<StepData> {
        let nq = space.quadrature().len();
        let nleaf = space.mesh().n_leaves();
        let mut hist = vec![[0.0; 3]; nq * nleaf];
        let mut forcing = history.forcing.as_ref().map(|_| vec![[0.0; NEQ]; nq * nleaf]);
        for leaf in 0..nleaf {
            for (q, (x, _)) in space.quadrature_on(leaf).enumerate() {
                let k = leaf * nq + q;
                if !history.terms.is_empty() {
                    hist[k] = history.history_at(x)?;
                }
                if let (Some(fv), Some(f)) = (forcing.as_mut(), history.forcing.as_ref()) {
                    fv[k] = f.eval(x);
                }
            }
        }
        Ok(StepData { alpha0: history.alpha0, hist, forcing })
    }

    #[inline]
    fn forcing_at(&self, k: usize) -> [f64; NEQ] {
        self.forcing.as_ref().map_or([0.0; NEQ], |f| f[k])
    }
}

/// Jets of a state at every quadrature point, leaf-major.
pub(crate) fn jets_at_quadrature(space: &Space, coeffs: &[f64], mut visit: impl FnMut(usize, usize, f64, &Jet)) {
    let table = space.basis_table();
    let nq = space.quadrature().len();
    for leaf in 0..space.mesh().n_leaves() {
        let (_, h) = space.leaf_geometry(leaf);
        let s = [2.0 / h[0], 2.0 / h[1]];
        let det = 0.25 * h[0] * h[1];
        let nodes = space.element_nodes(leaf);
        for q in 0..nq {
            let (vals, grads) = table.at(q);
            let mut j = Jet::default();
            for (a, &n) in nodes.iter().enumerate() {
                let c = &coeffs[n as usize * NFIELDS..(n as usize + 1) * NFIELDS];
                let (b, gx, gy) = (vals[a], grads[a][0] * s[0], grads[a][1] * s[1]);
                for f in 0..NFIELDS {
                    j.val[f] += c[f] * b;
                    j.dx[f] += c[f] * gx;
                    j.dy[f] += c[f] * gy;
                }
            }
            visit(leaf, q, space.quadrature().weights[q] * det, &j);
        }
    }
}

/// Weighted least-squares functional: total and per leaf.
pub fn nonlinear_functional_with(state: &State, step: &StepData, params: &Params) -> (f64, Vec<f64>) {
    let space = &state.space;
    let nq = space.quadrature().len();
    let mut per = vec![0.0; space.mesh().n_leaves()];
    jets_at_quadrature(space, &state.coeffs, |leaf, q, w, j| {
        let k = leaf * nq + q;
        let r = residual_point(j, step.alpha0, step.hist[k], &step.forcing_at(k), params);
        per[leaf] += w * r.iter().zip(&params.ls_weights).map(|(ri, wi)| wi * ri * ri).sum::<f64>();
    });
    (per.iter().sum(), per)
}

pub fn nonlinear_functional(state: &State, history: &TimeHistory, params: &Params) -> Result<(f64, Vec<f64>)> {
    let step = StepData::new(&state.space, history)?;
    Ok(nonlinear_functional_with(state, &step, params))
}

/// Frozen coefficients and residuals at the quadrature points of a state.
#[derive(Clone, Debug)]
pub struct LinearizedSystem {
    pub space: Arc<Space>,
    pub params: Params,
    pub alpha0: f64,
    /// Jet of the linearization point, leaf-major over quadrature points.
    pub jets: Vec<Jet>,
    /// Unweighted residuals at the same points.
    pub residuals: Vec<[f64; NEQ]>,
    pub qweights: Vec<f64>,
    pub g_nl: f64,
    pub per_element: Vec<f64>,
}

pub fn linearize_with(state: &State, step: &StepData, params: &Params) -> Result<LinearizedSystem> {
    let space = &state.space;
    let nq = space.quadrature().len();
    let n = nq * space.mesh().n_leaves();
    let mut jets = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut qweights = Vec::with_capacity(n);
    let mut per = vec![0.0; space.mesh().n_leaves()];
    let mut finite = true;
    jets_at_quadrature(space, &state.coeffs, |leaf, q, w, j| {
        let k = leaf * nq + q;
        let r = residual_point(j, step.alpha0, step.hist[k], &step.forcing_at(k), params);
        finite &= r.iter().all(|x| x.is_finite());
        per[leaf] += w * r.iter().zip(&params.ls_weights).map(|(ri, wi)| wi * ri * ri).sum::<f64>();
        jets.push(*j);
        residuals.push(r);
        qweights.push(w);
    });
    if !finite {
        return Err(Error::InvalidState("state has non-finite residuals".into()));
    }
    Ok(LinearizedSystem {
        space: state.space.clone(),
        params: params.clone(),
        alpha0: step.alpha0,
        jets,
        residuals,
        qweights,
        g_nl: per.iter().sum(),
        per_element: per,
    })
}

pub fn linearize(state: &State, history: &TimeHistory, params: &Params) -> Result<LinearizedSystem> {
    let step = StepData::new(&state.space, history)?;
    linearize_with(state, &step, params)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_jet(rng: &mut ChaCha8Rng) -> Jet {
        let mut j = Jet::default();
        for f in 0..NFIELDS {
            j.val[f] = rng.gen_range(-1.0..1.0);
            j.dx[f] = rng.gen_range(-1.0..1.0);
            j.dy[f] = rng.gen_range(-1.0..1.0);
        }
        j
    }

    #[test]
    fn constant_half_phase_residual() {
        let mut j = Jet::default();
        j.val[PHI] = 0.5;
        let p = Params { gamma: 0.01, eps: 0.01, ..Params::default() };
        // steady: alpha0 phi + h = 0
        let r = residual_point(&j, 100.0, [0.0, 0.0, -50.0], &[0.0; NEQ], &p);
        for (k, rk) in r.iter().enumerate() {
            if k == 12 {
                assert!((rk + 37.5).abs() < 1e-12, "{rk}");
            } else {
                assert_eq!(*rk, 0.0);
            }
        }
    }

    #[test]
    fn rows_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Params { lambda: 0.3, ..Params::default() };
        for _ in 0..20 {
            let j = random_jet(&mut rng);
            let d = random_jet(&mut rng);
            let rows = linear_rows(&j, 50.0, &p);
            let h = 1e-5;
            let shift = |s: f64| {
                let mut k = j;
                for f in 0..NFIELDS {
                    k.val[f] += s * d.val[f];
                    k.dx[f] += s * d.dx[f];
                    k.dy[f] += s * d.dy[f];
                }
                residual_point(&k, 50.0, [0.1, 0.2, 0.3], &[0.0; NEQ], &p)
            };
            let (rp, rm) = (shift(h), shift(-h));
            for k in 0..NEQ {
                let fd = (rp[k] - rm[k]) / (2.0 * h);
                let an = rows[k].apply(&d);
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "row {k}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn no_coupling_without_lambda_and_advection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = Params { lambda: 0.0, include_advection: false, ..Params::default() };
        let rows = linear_rows(&random_jet(&mut rng), 10.0, &p);
        for k in [7, 8] {
            assert!(rows[k].terms().iter().all(|&(f, _, _)| !matches!(f as usize, PHI | B1 | B2)));
        }
    }

    #[test]
    fn params_validation() {
        assert!(Params::default().validate().is_ok());
        assert!(Params { eps: 0.0, ..Params::default() }.validate().is_err());
        assert!(Params { lambda: -1.0, ..Params::default() }.validate().is_err());
        let mut p = Params::default();
        p.ls_weights[3] = 0.0;
        assert!(p.validate().is_err());
    }
}
