//! Energy diagnostics: total energy, dissipation, the discrete energy rate
//! and interface measures of the phase field.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::twophase::{jets_at_quadrature, Params, State, TimeScheme, B1, B2, PHI, U1, U2, V11, V12, V21};

/// One entry of the energy time series. The rate and the mismatch are
/// undefined for the initial record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyRecord {
    pub t: f64,
    pub energy: f64,
    pub dissipation: f64,
    pub rate: Option<f64>,
    pub mismatch: Option<f64>,
}

/// Ginzburg-Landau density `|grad phi|^2 / 2 + (phi^2 - 1)^2 / (4 eps^2)`.
pub fn mixing_energy_density(phi: f64, grad_phi: [f64; 2], eps: f64) -> f64 {
    let w = phi * phi - 1.0;
    0.5 * (grad_phi[0] * grad_phi[0] + grad_phi[1] * grad_phi[1]) + w * w / (4.0 * eps * eps)
}

/// `int |u|^2 / 2 + lambda W(phi)`, with `B` standing in for `grad phi`.
pub fn total_energy(state: &State, params: &Params) -> f64 {
    let mut e = 0.0;
    jets_at_quadrature(&state.space, &state.coeffs, |_, _, w, j| {
        let v = &j.val;
        let kin = 0.5 * (v[U1] * v[U1] + v[U2] * v[U2]);
        e += w * (kin + params.lambda * mixing_energy_density(v[PHI], [v[B1], v[B2]], params.eps));
    });
    e
}

/// Viscous and interfacial parts of the dissipation.
pub fn dissipation_parts(state: &State, params: &Params) -> (f64, f64) {
    let (mut visc, mut inter) = (0.0, 0.0);
    let eps2 = params.eps * params.eps;
    jets_at_quadrature(&state.space, &state.coeffs, |_, _, w, j| {
        let v = &j.val;
        visc += w * params.mu * (2.0 * v[V11] * v[V11] + v[V12] * v[V12] + v[V21] * v[V21]);
        let chem = j.dx[B1] + j.dy[B2] - params.reaction(v[PHI]).0 / eps2;
        inter += w * params.lambda * params.gamma * chem * chem;
    });
    (visc, inter)
}

/// `int mu |grad u|^2 + lambda gamma (div B - c(phi) / eps^2)^2`.
pub fn dissipation(state: &State, params: &Params) -> f64 {
    let (a, b) = dissipation_parts(state, params);
    a + b
}

/// Energy and dissipation of a state; the rate is filled by [`fill_rate`].
pub fn energy_of(state: &State, params: &Params, t: f64) -> EnergyRecord {
    EnergyRecord { t, energy: total_energy(state, params), dissipation: dissipation(state, params), rate: None, mismatch: None }
}

/// Rate of `rec` by the integrator's difference formula applied to the
/// energies of `previous` (oldest first) and `rec`.
pub fn fill_rate(previous: &[EnergyRecord], rec: &mut EnergyRecord, dt: f64, scheme: TimeScheme) {
    let n = previous.len();
    let rate = match (n, scheme) {
        (0, _) => None,
        (1, _) | (_, TimeScheme::Bdf1) => Some((rec.energy - previous[n - 1].energy) / dt),
        _ => Some((1.5 * rec.energy - 2.0 * previous[n - 1].energy + 0.5 * previous[n - 2].energy) / dt),
    };
    rec.rate = rate;
    rec.mismatch = rate.map(|r| r + rec.dissipation);
}

/// Fill rates and mismatches of a whole series in place.
pub fn energy_rate(series: &mut [EnergyRecord], dt: f64, scheme: TimeScheme) -> Result<()> {
    if series.len() < 2 {
        return Err(Error::invalid("an energy rate needs at least two records"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    for k in 0..series.len() {
        let (head, tail) = series.split_at_mut(k);
        fill_rate(head, &mut tail[0], dt, scheme);
    }
    Ok(())
}

/// Summary of how well a series satisfies `dE/dt = -D`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyLawReport {
    /// `|dE/dt + D| / max(max D, floor)` per record (`None` for the first).
    pub relative_mismatch: Vec<Option<f64>>,
    pub max_relative_mismatch: f64,
    pub mean_relative_mismatch: f64,
    pub max_dissipation: f64,
    /// `E` never increases from record 2 on.
    pub nonincreasing_after_startup: bool,
}

pub const DISSIPATION_FLOOR: f64 = 1e-14;

pub fn energy_law_report(series: &[EnergyRecord]) -> EnergyLawReport {
    let max_d = series.iter().map(|r| r.dissipation).fold(0.0, f64::max);
    let scale = max_d.max(DISSIPATION_FLOOR);
    let relative_mismatch: Vec<Option<f64>> = series.iter().map(|r| r.mismatch.map(|m| m.abs() / scale)).collect();
    let defined: Vec<f64> = relative_mismatch.iter().flatten().copied().collect();
    let max_rel = defined.iter().copied().fold(0.0, f64::max);
    let mean_rel = if defined.is_empty() { 0.0 } else { defined.iter().sum::<f64>() / defined.len() as f64 };
    let e0 = series.first().map_or(0.0, |r| r.energy.abs());
    let slack = 1e-13 * e0.max(f64::MIN_POSITIVE);
    let nonincreasing = series.windows(2).skip(2).all(|w| w[1].energy <= w[0].energy + slack);
    EnergyLawReport {
        relative_mismatch,
        max_relative_mismatch: max_rel,
        mean_relative_mismatch: mean_rel,
        max_dissipation: max_d,
        nonincreasing_after_startup: nonincreasing,
    }
}

/// Which side of the zero level set a diagnostic looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Negative,
    Positive,
}

impl Phase {
    fn sign(self) -> f64 {
        match self {
            Phase::Negative => -1.0,
            Phase::Positive => 1.0,
        }
    }
}

/// Measures of one phase region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Topology {
    /// Connected components of the leaves whose centroid lies in the phase.
    pub components: usize,
    pub area: f64,
    /// Length of the zero level set.
    pub perimeter: f64,
    /// Largest axis-aligned width over largest diagonal width of the region;
    /// `1/sqrt 2` for an aligned square, `sqrt 2` for a diamond.
    pub extent_ratio: f64,
}

/// Fraction of leaves on which `|phi| < threshold` somewhere. Each leaf is
/// sampled on a 5x5 reference grid; a sign change between samples also counts.
pub fn band_fraction(state: &State, threshold: f64) -> f64 {
    let space = &state.space;
    let nleaf = space.mesh().n_leaves();
    if nleaf == 0 {
        return 0.0;
    }
    let nc = space.ncomp();
    let mut vals = vec![0.0; nc];
    let mut grads = vec![[0.0; 2]; nc];
    let mut hits = 0;
    for leaf in 0..nleaf {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for j in 0..5 {
            for i in 0..5 {
                let xi = [-1.0 + 0.5 * i as f64, -1.0 + 0.5 * j as f64];
                space.eval_on_leaf(&state.coeffs, leaf, xi, &mut vals, &mut grads);
                lo = lo.min(vals[PHI]);
                hi = hi.max(vals[PHI]);
            }
        }
        if lo < threshold && hi > -threshold {
            hits += 1;
        }
    }
    hits as f64 / nleaf as f64
}

/// Sign-region diagnostics of `phi`. Area and level-set length come from
/// piecewise-linear interpolation on a sub-triangulation of each leaf.
pub fn interface_topology(state: &State, phase: Phase) -> Topology {
    let space = &state.space;
    let mesh = space.mesh();
    let nleaf = mesh.n_leaves();
    let s = phase.sign();
    let nc = space.ncomp();
    let mut vals = vec![0.0; nc];
    let mut grads = vec![[0.0; 2]; nc];
    let mut eval = |leaf: usize, xi: [f64; 2]| {
        space.eval_on_leaf(&state.coeffs, leaf, xi, &mut vals, &mut grads);
        s * vals[PHI]
    };

    let inside: Vec<bool> = (0..nleaf).map(|l| eval(l, [0.0, 0.0]) > 0.0).collect();
    let mut seen = vec![false; nleaf];
    let mut components = 0;
    let mut queue = VecDeque::new();
    for start in 0..nleaf {
        if !inside[start] || seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(l) = queue.pop_front() {
            let id = mesh.leaves()[l];
            for nb in mesh.leaf_neighbors(id).expect("leaf").iter().flatten() {
                let k = mesh.leaf_index(*nb).expect("leaf");
                if inside[k] && !seen[k] {
                    seen[k] = true;
                    queue.push_back(k);
                }
            }
        }
    }

    let nsub = 2 * space.degree();
    let mut area = 0.0;
    let mut perimeter = 0.0;
    let mut ext = Extents::default();
    let mut grid = vec![0.0; (nsub + 1) * (nsub + 1)];
    for leaf in 0..nleaf {
        let (o, h) = space.leaf_geometry(leaf);
        for j in 0..=nsub {
            for i in 0..=nsub {
                let xi = [-1.0 + 2.0 * i as f64 / nsub as f64, -1.0 + 2.0 * j as f64 / nsub as f64];
                grid[j * (nsub + 1) + i] = eval(leaf, xi);
            }
        }
        let pt = |i: usize, j: usize| [o[0] + h[0] * i as f64 / nsub as f64, o[1] + h[1] * j as f64 / nsub as f64];
        for j in 0..nsub {
            for i in 0..nsub {
                let v = |a: usize, b: usize| (pt(a, b), grid[b * (nsub + 1) + a]);
                let (c00, c10, c01, c11) = (v(i, j), v(i + 1, j), v(i, j + 1), v(i + 1, j + 1));
                for tri in [[c00, c10, c11], [c00, c11, c01]] {
                    let (a, l) = clip_triangle(&tri, &mut ext);
                    area += a;
                    perimeter += l;
                }
            }
        }
    }
    Topology { components, area, perimeter, extent_ratio: ext.ratio() }
}

#[derive(Default)]
struct Extents {
    bounds: Option<[[f64; 2]; 4]>,
}

impl Extents {
    fn add(&mut self, p: [f64; 2]) {
        let keys = [p[0], p[1], p[0] + p[1], p[0] - p[1]];
        let b = self.bounds.get_or_insert([[f64::INFINITY, f64::NEG_INFINITY]; 4]);
        for (r, k) in b.iter_mut().zip(keys) {
            r[0] = r[0].min(k);
            r[1] = r[1].max(k);
        }
    }

    fn ratio(&self) -> f64 {
        match self.bounds {
            None => f64::NAN,
            Some(b) => {
                let w = |k: usize| b[k][1] - b[k][0];
                let axis = w(0).max(w(1));
                let diag = w(2).max(w(3)) / std::f64::consts::SQRT_2;
                if diag > 0.0 {
                    axis / diag
                } else {
                    f64::NAN
                }
            }
        }
    }
}

/// Area of `{g > 0}` in a linear triangle and the length of its zero line.
fn clip_triangle(tri: &[([f64; 2], f64); 3], ext: &mut Extents) -> (f64, f64) {
    let mut poly: Vec<[f64; 2]> = Vec::with_capacity(4);
    let mut cut: Vec<[f64; 2]> = Vec::with_capacity(2);
    for k in 0..3 {
        let (p, gp) = tri[k];
        let (q, gq) = tri[(k + 1) % 3];
        if gp > 0.0 {
            poly.push(p);
        }
        if (gp > 0.0) != (gq > 0.0) {
            let t = gp / (gp - gq);
            let x = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
            poly.push(x);
            cut.push(x);
        }
    }
    if poly.len() < 3 {
        return (0.0, 0.0);
    }
    let mut a = 0.0;
    for k in 0..poly.len() {
        let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
        a += p[0] * q[1] - q[0] * p[1];
        ext.add(p);
    }
    let len = if cut.len() == 2 { ((cut[0][0] - cut[1][0]).powi(2) + (cut[0][1] - cut[1][1]).powi(2)).sqrt() } else { 0.0 };
    (0.5 * a.abs(), len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: f64, e: f64) -> EnergyRecord {
        EnergyRecord { t, energy: e, dissipation: 0.0, rate: None, mismatch: None }
    }

    #[test]
    fn mixing_density_values() {
        assert_eq!(mixing_energy_density(1.0, [0.0, 0.0], 0.01), 0.0);
        assert_eq!(mixing_energy_density(-1.0, [0.0, 0.0], 0.01), 0.0);
        assert!((mixing_energy_density(0.0, [0.0, 0.0], 0.01) - 2500.0).abs() < 1e-9);
        assert!((mixing_energy_density(1.0, [3.0, 4.0], 0.5) - 12.5).abs() < 1e-12);
    }

    #[test]
    fn rates_on_polynomials() {
        let dt = 0.01;
        let mut lin: Vec<_> = (0..6).map(|n| rec(n as f64 * dt, 1.0 - n as f64 * dt)).collect();
        energy_rate(&mut lin, dt, TimeScheme::Bdf2).unwrap();
        assert!(lin[0].rate.is_none());
        for r in &lin[1..] {
            assert!((r.rate.unwrap() + 1.0).abs() < 1e-10);
        }
        let mut quad: Vec<_> = (0..6).map(|n| rec(n as f64 * dt, (n as f64 * dt).powi(2))).collect();
        energy_rate(&mut quad, dt, TimeScheme::Bdf2).unwrap();
        for r in &quad[2..] {
            assert!((r.rate.unwrap() - 2.0 * r.t).abs() < 1e-10);
        }
        assert!(energy_rate(&mut quad[..1], dt, TimeScheme::Bdf2).is_err());
    }

    #[test]
    fn clip_full_and_half() {
        let mut ext = Extents::default();
        let tri = [([0.0, 0.0], 1.0), ([1.0, 0.0], 1.0), ([0.0, 1.0], 1.0)];
        assert_eq!(clip_triangle(&tri, &mut ext), (0.5, 0.0));
        // g = 1 - 2x: region x < 1/2 has area 3/8, cut from (1/2,0) to (1/2,1/2)
        let tri = [([0.0, 0.0], 1.0), ([1.0, 0.0], -1.0), ([0.0, 1.0], 1.0)];
        let (a, l) = clip_triangle(&tri, &mut ext);
        assert!((a - 0.375).abs() < 1e-14 && (l - 0.5).abs() < 1e-14);
    }
}
