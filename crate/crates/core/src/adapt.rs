//! Local refinement driven by the elementwise least-squares functional.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fespace::{interpolate_from, Space};
use crate::mesh::{ElementId, MarkSet};
use crate::twophase::State;

/// Nonnegative error indicator per leaf element.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorField {
    ids: Vec<ElementId>,
    values: Vec<f64>,
}

impl ErrorField {
    pub fn new(ids: Vec<ElementId>, values: Vec<f64>) -> Result<Self> {
        if ids.len() != values.len() {
            return Err(Error::invalid("one indicator per element is required"));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("indicator values must be finite and nonnegative, got {v}")));
        }
        Ok(ErrorField { ids, values })
    }

    /// Indicators of a state's leaves, in leaf order.
    pub fn from_per_element(space: &Space, per_element: &[f64]) -> Result<Self> {
        ErrorField::new(space.mesh().leaves().to_vec(), per_element.to_vec())
    }

    pub fn ids(&self) -> &[ElementId] {
        &self.ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Positions sorted by decreasing value, ties by element id.
    fn sorted(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.ids.len()).collect();
        order.sort_by(|&a, &b| {
            self.values[b]
                .partial_cmp(&self.values[a])
                .unwrap()
                .then(self.ids[a].cmp(&self.ids[b]))
        });
        order
    }
}

/// Predicted cost of a refinement: `(N + 3m)^exponent` for `N` current
/// elements and `m` marked ones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkModel {
    pub exponent: f64,
}

impl Default for WorkModel {
    fn default() -> Self {
        WorkModel { exponent: 1.0 }
    }
}

/// Efficiency-based marking. Marking a prefix capturing fraction `r` of the
/// functional is predicted to leave `(1 - r) G + r 2^(-2p) G`; the prefix
/// with the largest log-reduction per predicted work is returned (the
/// smallest one on ties).
pub fn mark_ace(err: &ErrorField, degree: usize, work: WorkModel) -> MarkSet {
    let order = err.sorted();
    let total: f64 = order.iter().map(|&k| err.values[k]).sum();
    if !(total > 0.0) {
        return MarkSet::new();
    }
    let n = err.len() as f64;
    let keep = 1.0 - 0.25f64.powi(degree as i32);
    let mut best = (f64::NEG_INFINITY, 0);
    let mut captured = 0.0;
    for (m, &k) in order.iter().enumerate() {
        captured += err.values[k];
        let r = (captured / total).min(1.0);
        let gain = -(1.0 - r * keep).ln();
        let w = (n + 3.0 * (m + 1) as f64).powf(work.exponent);
        let eff = gain / w;
        if eff > best.0 {
            best = (eff, m + 1);
        }
    }
    order[..best.1].iter().map(|&k| err.ids[k]).collect()
}

/// Smallest prefix of the sorted indicators holding `theta` of the total.
pub fn mark_dorfler(err: &ErrorField, theta: f64) -> Result<MarkSet> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::invalid(format!("theta must lie in (0,1], got {theta}")));
    }
    let order = err.sorted();
    let total: f64 = order.iter().map(|&k| err.values[k]).sum();
    let mut marks = MarkSet::new();
    if !(total > 0.0) {
        return Ok(marks);
    }
    let mut sum = 0.0;
    for &k in &order {
        if sum >= theta * total {
            break;
        }
        sum += err.values[k];
        marks.insert(err.ids[k]);
    }
    Ok(marks)
}

/// Refine the state's mesh and carry the state and its history over.
/// Boundary values are re-imposed on the new space.
pub fn refine_and_transfer(state: &State, history: &[State], marks: &MarkSet) -> Result<(Arc<Space>, State, Vec<State>)> {
    let old = &state.space;
    if marks.is_empty() {
        return Ok((old.clone(), state.clone(), history.to_vec()));
    }
    let mesh = Arc::new(old.mesh().refine(marks)?);
    let space = Arc::new(Space::new(mesh, old.degree(), old.bcs().clone())?);
    let carry = |s: &State| -> Result<State> {
        let mut c = interpolate_from(&s.space, &s.coeffs, &space)?;
        space.impose_fixed(&mut c);
        State::new(space.clone(), c, s.time)
    };
    let new_state = carry(state)?;
    let new_hist = history.iter().map(carry).collect::<Result<Vec<_>>>()?;
    Ok((space, new_state, new_hist))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(values: &[f64]) -> ErrorField {
        ErrorField::new((0..values.len()).collect(), values.to_vec()).unwrap()
    }

    #[test]
    fn dorfler_examples() {
        let m = mark_dorfler(&field(&[1.0, 3.0, 4.0, 2.0]), 0.5).unwrap();
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![1, 2]);
        let m = mark_dorfler(&field(&[1.0, 0.0, 4.0, 2.0]), 1.0).unwrap();
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![0, 2, 3]);
        assert_eq!(mark_dorfler(&field(&[5.0]), 0.3).unwrap().len(), 1);
        assert!(mark_dorfler(&field(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn ace_equal_values_marks_all() {
        for p in [1, 2] {
            assert_eq!(mark_ace(&field(&[1.0; 37]), p, WorkModel::default()).len(), 37);
        }
    }

    #[test]
    fn ace_dominant_element() {
        let mut v = vec![0.001 / 99.0; 100];
        v[42] = 0.999;
        let m = mark_ace(&field(&v), 2, WorkModel::default());
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![42]);
        let m = mark_ace(&field(&[0.9, 0.1]), 2, WorkModel::default());
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn zero_total_marks_nothing() {
        assert!(mark_ace(&field(&[0.0, 0.0]), 2, WorkModel::default()).is_empty());
        assert!(mark_dorfler(&field(&[0.0, 0.0]), 0.5).unwrap().is_empty());
    }
}
