//! Initial conditions of the test problems and a smooth manufactured solution.

use std::f64::consts::PI;
use std::sync::Arc;

use super::{residual_point, system_bcs, Forcing, Jet, Params, State, B1, B2, NEQ, NFIELDS, P, PHI, U1, U2, V11, V12, V21};
use crate::error::Result;
use crate::fespace::{BcSpec, Space, TraceFn};

/// Two osculating bubbles of radius 0.11 centered at (0.38, 0.5) and (0.62, 0.5).
pub fn ic_coalescence(x: [f64; 2], eta: f64) -> f64 {
    let d1 = ((x[0] - 0.38).powi(2) + (x[1] - 0.5).powi(2)).sqrt() - 0.11;
    let d2 = ((x[0] - 0.62).powi(2) + (x[1] - 0.5).powi(2)).sqrt() - 0.11;
    (d1 / (2.0 * eta)).tanh() + (d2 / (2.0 * eta)).tanh() - 1.0
}

/// +1 on the centered square of side 1/2, -1 elsewhere.
pub fn ic_square(x: [f64; 2]) -> f64 {
    if (x[0] - 0.5).abs() <= 0.25 && (x[1] - 0.5).abs() <= 0.25 {
        1.0
    } else {
        -1.0
    }
}

/// Smooth exact solution on the unit square, compatible with the boundary
/// conditions of the system: stream function `A sin^2(pi x) sin^2(pi y)`,
/// `p = a cos(pi x) cos(pi y)`, `phi = c0 + c1 sin(pi x) sin(pi y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Manufactured {
    pub psi_amp: f64,
    pub p_amp: f64,
    pub phi_mean: f64,
    pub phi_amp: f64,
}

impl Default for Manufactured {
    fn default() -> Self {
        Manufactured { psi_amp: 0.1, p_amp: 0.5, phi_mean: 0.2, phi_amp: 0.5 }
    }
}

impl Manufactured {
    /// Exact values and first derivatives of all nine fields. Derivatives of
    /// `V` and `B` are second derivatives of `u` and `phi`.
    pub fn jet(&self, x: [f64; 2]) -> Jet {
        let s = |t: f64| (PI * t).sin().powi(2);
        let s1 = |t: f64| PI * (2.0 * PI * t).sin();
        let s2 = |t: f64| 2.0 * PI * PI * (2.0 * PI * t).cos();
        let s3 = |t: f64| -4.0 * PI.powi(3) * (2.0 * PI * t).sin();
        let (a, b) = (x[0], x[1]);
        let am = self.psi_amp;
        let (sx, cx) = ((PI * a).sin(), (PI * a).cos());
        let (sy, cy) = ((PI * b).sin(), (PI * b).cos());
        let (pa, c0, c1) = (self.p_amp, self.phi_mean, self.phi_amp);
        let mut j = Jet::default();
        let mut set = |f: usize, v: f64, dx: f64, dy: f64| {
            j.val[f] = v;
            j.dx[f] = dx;
            j.dy[f] = dy;
        };
        set(U1, am * s(a) * s1(b), am * s1(a) * s1(b), am * s(a) * s2(b));
        set(U2, -am * s1(a) * s(b), -am * s2(a) * s(b), -am * s1(a) * s1(b));
        set(V11, am * s1(a) * s1(b), am * s2(a) * s1(b), am * s1(a) * s2(b));
        set(V12, -am * s2(a) * s(b), -am * s3(a) * s(b), -am * s2(a) * s1(b));
        set(V21, am * s(a) * s2(b), am * s1(a) * s2(b), am * s(a) * s3(b));
        set(P, pa * cx * cy, -pa * PI * sx * cy, -pa * PI * cx * sy);
        set(PHI, c0 + c1 * sx * sy, c1 * PI * cx * sy, c1 * PI * sx * cy);
        set(B1, c1 * PI * cx * sy, -c1 * PI * PI * sx * sy, c1 * PI * PI * cx * cy);
        set(B2, c1 * PI * sx * cy, c1 * PI * PI * cx * cy, -c1 * PI * PI * sx * sy);
        j
    }

    pub fn values(&self, x: [f64; 2]) -> [f64; NFIELDS] {
        self.jet(x).val
    }

    /// Forcing that makes the exact solution a root of the residual for a
    /// time step with leading coefficient `alpha0` and zero history.
    pub fn forcing(&self, alpha0: f64, params: &Params) -> Forcing {
        let m = *self;
        let p = params.clone();
        Forcing::new(move |x| residual_point(&m.jet(x), alpha0, [0.0; 3], &[0.0; NEQ], &p))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestCase {
    Coalescence { eta: f64 },
    Square,
    Manufactured(Manufactured),
}

impl TestCase {
    pub fn name(&self) -> &'static str {
        match self {
            TestCase::Coalescence { .. } => "coalescence",
            TestCase::Square => "square",
            TestCase::Manufactured(_) => "manufactured",
        }
    }

    /// Phase field of the initial condition (also its boundary trace).
    pub fn phi0(&self, x: [f64; 2]) -> f64 {
        match self {
            TestCase::Coalescence { eta } => ic_coalescence(x, *eta),
            TestCase::Square => ic_square(x),
            TestCase::Manufactured(m) => m.values(x)[PHI],
        }
    }

    pub fn bcs(&self) -> BcSpec {
        let case = *self;
        system_bcs(TraceFn::new(move |x| case.phi0(x)))
    }
}

/// Nodal interpolant of the initial phase, `B` the L2 projection of its
/// gradient, all other fields zero. For the manufactured problem the phase
/// starts at its boundary value.
pub fn build_initial_state(space: Arc<Space>, case: &TestCase) -> Result<State> {
    let mut coeffs = match case {
        TestCase::Manufactured(m) => {
            let c0 = m.phi_mean;
            space.interpolate(|_, v| {
                v.iter_mut().for_each(|x| *x = 0.0);
                v[PHI] = c0;
            })
        }
        _ => space.interpolate(|x, v| {
            v.iter_mut().for_each(|x| *x = 0.0);
            v[PHI] = case.phi0(x);
        }),
    };
    space.impose_fixed(&mut coeffs);
    if !matches!(case, TestCase::Manufactured(_)) {
        space.project_gradient(&mut coeffs, PHI, [B1, B2])?;
    }
    State::new(space, coeffs, 0.0)
}
