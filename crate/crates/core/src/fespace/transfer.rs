//! Moving finite-element functions between spaces.

use super::{Space, NO_INDEX};
use crate::error::{Error, Result};
use crate::linsolve::CsrMatrix;

/// Nodal interpolation of the FE function `coeffs` (on `from`) into `to`.
///
/// Every non-hanging node of `to` takes the value of the source function at
/// its position; hanging nodes follow from their masters. When `to` is
/// nested in `from` this is the exact embedding.
pub fn interpolate_from(from: &Space, coeffs: &[f64], to: &Space) -> Result<Vec<f64>> {
    if from.ncomp() != to.ncomp() {
        return Err(Error::invalid("spaces have different component counts"));
    }
    if from.mesh().domain() != to.mesh().domain() || from.mesh().base_dims() != to.mesh().base_dims() {
        return Err(Error::invalid("spaces live on different domains"));
    }
    let nc = to.ncomp();
    let mut out = vec![0.0; to.n_dofs()];
    for n in 0..to.n_nodes() {
        if to.is_hanging(n) {
            continue;
        }
        from.eval_at_lattice(coeffs, to.node_lattice(n), &mut out[n * nc..(n + 1) * nc])
            .ok_or_else(|| Error::InvalidState(format!("node {n} lies outside the source mesh")))?;
    }
    to.fill_hanging(&mut out);
    Ok(out)
}

fn check_nested(coarse: &Space, fine: &Space) -> Result<()> {
    if !fine.mesh().is_refinement_of(coarse.mesh()) {
        return Err(Error::invalid("fine mesh is not a refinement of the coarse mesh"));
    }
    if fine.degree() < coarse.degree() || fine.ncomp() != coarse.ncomp() {
        return Err(Error::invalid("fine space does not contain the coarse space"));
    }
    Ok(())
}

/// Exact embedding of a coarse FE function into a nested fine space.
pub fn prolong(coarse: &Space, fine: &Space, coarse_vec: &[f64]) -> Result<Vec<f64>> {
    check_nested(coarse, fine)?;
    interpolate_from(coarse, coarse_vec, fine)
}

/// Prolongation between free-dof vectors of nested spaces with homogeneous
/// boundary values (the Newton-increment setting).
pub fn prolongation_free(coarse: &Space, fine: &Space) -> Result<CsrMatrix> {
    check_nested(coarse, fine)?;
    let nc = fine.ncomp();
    let nl = coarse.n_local();
    let mut vals = vec![0.0; nl];
    let mut grads = vec![[0.0; 2]; nl];
    let mut trip = Vec::new();
    for n in 0..fine.n_nodes() {
        if fine.is_hanging(n) {
            continue;
        }
        let (id, xi) = coarse
            .mesh()
            .locate_lattice(fine.node_lattice(n))
            .ok_or_else(|| Error::InvalidState(format!("fine node {n} outside the coarse mesh")))?;
        let leaf = coarse.mesh().leaf_index(id).expect("located element is a leaf");
        coarse.basis().eval(xi, &mut vals, &mut grads);
        for c in 0..nc {
            let Some(row) = fine.free_index(n * nc + c) else { continue };
            for (a, &cn) in coarse.element_nodes(leaf).iter().enumerate() {
                if vals[a].abs() < 1e-15 {
                    continue;
                }
                for (m, w) in coarse.node_masters(cn as usize) {
                    let k = coarse.free_index[m * nc + c];
                    if k != NO_INDEX {
                        trip.push((row, k as usize, vals[a] * w));
                    }
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(fine.n_free(), coarse.n_free(), trip))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fespace::{BcSpec, BoundaryCondition};
    use crate::mesh::{Domain, MarkSet, Mesh};

    fn uniform(n: usize) -> Mesh {
        Mesh::build_uniform(n, n, Domain::unit_square()).unwrap()
    }

    #[test]
    fn constants_stay_constant() {
        let c = uniform(2);
        let f = c.refine_uniform().unwrap();
        let cs = Space::new(Arc::new(c), 1, BcSpec::free(2)).unwrap();
        let fs = Space::new(Arc::new(f), 2, BcSpec::free(2)).unwrap();
        let v = cs.interpolate(|_, v| {
            v[0] = 3.0;
            v[1] = -1.5;
        });
        let w = prolong(&cs, &fs, &v).unwrap();
        for n in 0..fs.n_nodes() {
            assert_eq!(w[2 * n], 3.0);
            assert_eq!(w[2 * n + 1], -1.5);
        }
    }

    #[test]
    fn bilinear_xy_is_embedded() {
        let c = uniform(1);
        let f = c.refine_uniform().unwrap();
        let cs = Space::new(Arc::new(c), 1, BcSpec::free(1)).unwrap();
        let fs = Space::new(Arc::new(f), 1, BcSpec::free(1)).unwrap();
        let v = cs.interpolate(|x, v| v[0] = x[0] * x[1]);
        let w = prolong(&cs, &fs, &v).unwrap();
        assert_eq!(fs.n_nodes(), 9);
        for n in 0..9 {
            let x = fs.node_point(n);
            assert!((w[n] - x[0] * x[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_is_embedded() {
        let c = uniform(2);
        let sw = c.locate([0.1, 0.1]).unwrap().0;
        let f = c.refine(&[sw].into_iter().collect::<MarkSet>()).unwrap();
        let cs = Space::new(Arc::new(c), 2, BcSpec::free(1)).unwrap();
        let fs = Space::new(Arc::new(f), 2, BcSpec::free(1)).unwrap();
        let v = cs.interpolate(|x, v| v[0] = x[0] * x[0]);
        let w = prolong(&cs, &fs, &v).unwrap();
        for n in 0..fs.n_nodes() {
            let x = fs.node_point(n);
            assert!((w[n] - x[0] * x[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn non_nested_rejected() {
        let cs = Space::new(Arc::new(uniform(2)), 1, BcSpec::free(1)).unwrap();
        let fs = Space::new(Arc::new(uniform(3)), 1, BcSpec::free(1)).unwrap();
        assert!(prolong(&cs, &fs, &vec![0.0; cs.n_dofs()]).is_err());
    }

    #[test]
    fn free_prolongation_matches_full_embedding() {
        let c = uniform(2);
        let sw = c.locate([0.1, 0.1]).unwrap().0;
        let f = c.refine(&[sw].into_iter().collect::<MarkSet>()).unwrap();
        let bcs = || {
            BcSpec::new(vec![
                BoundaryCondition::Dirichlet(crate::fespace::TraceFn::constant(0.0)),
                BoundaryCondition::ZeroTangential { component: 1 },
            ])
        };
        let cs = Space::new(Arc::new(c), 1, bcs()).unwrap();
        let fs = Space::new(Arc::new(f), 2, bcs()).unwrap();
        let p = prolongation_free(&cs, &fs).unwrap();
        let x: Vec<f64> = (0..cs.n_free()).map(|k| (k as f64 * 0.7).sin()).collect();
        let full_c = cs.expand_homogeneous(&x);
        let full_f = prolong(&cs, &fs, &full_c).unwrap();
        let direct = fs.expand_homogeneous(&p.mul_vec(&x));
        for (a, b) in full_f.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
