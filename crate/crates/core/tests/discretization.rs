use std::sync::Arc;

use fosls_twophase::fespace::{apply_bcs, prolong, prolongation_free, BcSpec, Space};
use fosls_twophase::linsolve::{dot, norm2, pcg, CsrMatrix, Hierarchy, MgOptions, PcgOptions, Preconditioner};
use fosls_twophase::mesh::{Domain, MarkSet, Mesh};
use fosls_twophase::nested_driver::space_hierarchy;
use fosls_twophase::twophase::{
    assemble, assemble_constrained, build_initial_state, linearize, linearized_functional, nonlinear_functional,
    Manufactured, Params, State, SystemPattern, TestCase, TimeHistory, NFIELDS,
};
use fosls_twophase::verify::uniform_mesh;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mesh refined `rounds` times at random leaves chosen by `seed`.
fn random_mesh(seed: u64, rounds: usize) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mesh = Mesh::build_uniform(2, 2, Domain::unit_square()).unwrap();
    for _ in 0..rounds {
        let marks: MarkSet = mesh.leaves().iter().copied().filter(|_| rng.gen_bool(0.3)).collect();
        mesh = mesh.refine(&marks).unwrap();
    }
    mesh
}

fn random_state(space: &Arc<Space>, rng: &mut ChaCha8Rng, scale: f64) -> State {
    let mut c: Vec<f64> = (0..space.n_dofs()).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
    space.fill_hanging(&mut c);
    State::new(space.clone(), c, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn refinement_keeps_mesh_invariants(seed in 0u64..10_000, rounds in 1usize..5) {
        let mesh = random_mesh(seed, rounds);
        let area: f64 = mesh.leaves().iter().map(|&id| mesh.element_area(id)).sum();
        prop_assert!((area - 1.0).abs() <= 1e-12);
        prop_assert!(mesh.is_one_irregular());
        for (id, e) in mesh.elements().iter().enumerate() {
            if let Some(ch) = e.children {
                for c in ch {
                    prop_assert_eq!(mesh.element(c).level, e.level + 1);
                    prop_assert_eq!(mesh.element(c).parent, Some(id));
                }
            }
        }
        // closure of a legal mesh's empty mark set changes nothing
        prop_assert!(mesh.closure(&MarkSet::new()).unwrap().is_empty());
        let again = mesh.refine(&MarkSet::new()).unwrap();
        prop_assert_eq!(again.leaves(), mesh.leaves());
    }

    #[test]
    fn prolongation_is_exact_embedding(seed in 0u64..10_000) {
        let coarse_mesh = random_mesh(seed, 2);
        let marks: MarkSet = coarse_mesh.leaves().iter().copied().step_by(3).collect();
        let fine_mesh = coarse_mesh.refine(&marks).unwrap();
        let bcs = BcSpec::free(NFIELDS);
        for (dc, df) in [(1, 2), (2, 2)] {
            let coarse = Space::new(Arc::new(coarse_mesh.clone()), dc, bcs.clone()).unwrap();
            let fine = Space::new(Arc::new(fine_mesh.clone()), df, bcs.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let mut c: Vec<f64> = (0..coarse.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            coarse.fill_hanging(&mut c);
            let f = prolong(&coarse, &fine, &c).unwrap();
            for _ in 0..20 {
                let x = [rng.gen::<f64>(), rng.gen::<f64>()];
                let (a, _) = coarse.eval_at(&c, x).unwrap();
                let (b, _) = fine.eval_at(&f, x).unwrap();
                for k in 0..NFIELDS {
                    prop_assert!((a[k] - b[k]).abs() <= 1e-12, "{} vs {}", a[k], b[k]);
                }
            }
        }
    }

    #[test]
    fn fused_assembly_equals_constrained_product(seed in 0u64..10_000) {
        let case = TestCase::Coalescence { eta: 0.05 };
        let space = Arc::new(Space::new(Arc::new(random_mesh(seed, 2)), 2, case.bcs()).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = random_state(&space, &mut rng, 0.5);
        let prev = random_state(&space, &mut rng, 0.5);
        let params = Params { lambda: 0.2, gamma: 0.3, eps: 0.3, ..Params::default() };
        let hist = TimeHistory::new(10.0, &[-10.0], vec![prev]).unwrap();
        let lin = linearize(&state, &hist, &params).unwrap();
        let fused = assemble_constrained(&lin, &SystemPattern::new(&space).unwrap());
        let full = assemble(&lin);
        // increments vanish on fixed dofs, so eliminate with zero offset
        let c = space.constraint_matrix();
        let reduced = full.matrix.galerkin(&c);
        let rhs = c.transpose_mul_vec(&full.rhs);
        let scale = reduced.max_abs();
        let (a, b) = (fused.matrix.to_dense(), reduced.to_dense());
        for i in 0..a.len() {
            for j in 0..a.len() {
                prop_assert!((a[i][j] - b[i][j]).abs() <= 1e-12 * scale);
            }
            prop_assert!((fused.rhs[i] - rhs[i]).abs() <= 1e-12 * norm2(&rhs).max(1.0));
        }
        prop_assert!(fused.matrix.symmetry_defect() <= 1e-13 * scale);
    }

    #[test]
    fn linearized_functional_is_the_quadratic_form(seed in 0u64..10_000) {
        let case = TestCase::Square;
        let space = Arc::new(Space::new(Arc::new(random_mesh(seed, 1)), 2, case.bcs()).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = random_state(&space, &mut rng, 0.7);
        let params = Params { lambda: 0.5, gamma: 0.2, eps: 0.5, ..Params::default() };
        let hist = TimeHistory::new(5.0, &[-5.0], vec![random_state(&space, &mut rng, 0.7)]).unwrap();
        let lin = linearize(&state, &hist, &params).unwrap();
        let sys = assemble_constrained(&lin, &SystemPattern::new(&space).unwrap());
        let x: Vec<f64> = (0..sys.rhs.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = sys.matrix.quadratic_form(&x) - 2.0 * dot(&x, &sys.rhs) + lin.g_nl;
        let g = linearized_functional(&space.expand_homogeneous(&x), &lin).unwrap();
        prop_assert!((q - g).abs() <= 1e-10 * g.abs().max(1.0), "{q} vs {g}");
        // zero increment leaves the nonlinear functional
        let g0 = linearized_functional(&vec![0.0; space.n_dofs()], &lin).unwrap();
        let (gnl, per) = nonlinear_functional(&state, &hist, &params).unwrap();
        prop_assert!((g0 - gnl).abs() <= 1e-12 * gnl);
        prop_assert!((per.iter().sum::<f64>() - gnl).abs() <= 1e-12 * gnl);
    }
}

#[test]
fn solve_is_the_argmin_of_the_linearized_functional() {
    let case = TestCase::Manufactured(Manufactured::default());
    let params = fosls_twophase::io::manufactured_params();
    let space = Arc::new(Space::new(Arc::new(uniform_mesh(4).unwrap()), 2, case.bcs()).unwrap());
    let state = build_initial_state(space.clone(), &case).unwrap();
    let m = Manufactured::default();
    let hist = TimeHistory { alpha0: 100.0, terms: Vec::new(), forcing: Some(m.forcing(100.0, &params)) };
    let lin = linearize(&state, &hist, &params).unwrap();
    let sys = assemble_constrained(&lin, &SystemPattern::new(&space).unwrap());
    let opts = PcgOptions { tol: 1e-12, max_iter: 5000, gain_stop: None };
    let (x, st) = pcg(&sys.matrix, &sys.rhs, &vec![0.0; sys.rhs.len()], opts, Preconditioner::Jacobi).unwrap();
    assert!(st.converged);
    let r: Vec<f64> = sys.matrix.mul_vec(&x).iter().zip(&sys.rhs).map(|(a, b)| b - a).collect();
    assert!(norm2(&r) <= 1e-10 * norm2(&sys.rhs));
    let g = |v: &[f64]| linearized_functional(&space.expand_homogeneous(v), &lin).unwrap();
    let g_min = g(&x);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let y: Vec<f64> = x.iter().map(|v| v + 1e-3 * rng.gen_range(-1.0..1.0)).collect();
        assert!(g(&y) >= g_min);
    }
}

/// Dense least-norm solve for a small semidefinite system (the constant
/// pressure is in the kernel).
fn dense_solve(a: &CsrMatrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a.get(i, j));
    let eps = 1e-12 * a.max_abs();
    let x = m.svd(true, true).solve(&nalgebra::DVector::from_column_slice(b), eps).unwrap();
    x.as_slice().to_vec()
}

#[test]
fn cg_error_decreases_monotonically_in_energy_norm() {
    let case = TestCase::Coalescence { eta: 0.05 };
    let space = Arc::new(Space::new(Arc::new(uniform_mesh(2).unwrap()), 2, case.bcs()).unwrap());
    let state = build_initial_state(space.clone(), &case).unwrap();
    let params = Params { eps: 0.1, gamma: 0.1, ..Params::default() };
    let hist = TimeHistory::new(100.0, &[-100.0], vec![state.clone()]).unwrap();
    let sys = assemble_constrained(&linearize(&state, &hist, &params).unwrap(), &SystemPattern::new(&space).unwrap());
    let exact = dense_solve(&sys.matrix, &sys.rhs);
    let mut prev = f64::INFINITY;
    for iters in 1..40 {
        let opts = PcgOptions { tol: 1e-300, max_iter: iters, gain_stop: None };
        let (x, _) = pcg(&sys.matrix, &sys.rhs, &vec![0.0; sys.rhs.len()], opts, Preconditioner::None).unwrap();
        let e: Vec<f64> = x.iter().zip(&exact).map(|(a, b)| a - b).collect();
        let en = sys.matrix.quadratic_form(&e);
        assert!(en <= prev * (1.0 + 1e-9), "iteration {iters}: {en} > {prev}");
        prev = en;
    }
}

#[test]
fn multigrid_pcg_needs_no_more_iterations_than_cg() {
    let case = TestCase::Manufactured(Manufactured::default());
    let params = fosls_twophase::io::manufactured_params();
    for n in [4, 8] {
        let space = Arc::new(Space::new(Arc::new(uniform_mesh(n).unwrap()), 2, case.bcs()).unwrap());
        let state = build_initial_state(space.clone(), &case).unwrap();
        let m = Manufactured::default();
        let hist = TimeHistory { alpha0: 100.0, terms: Vec::new(), forcing: Some(m.forcing(100.0, &params)) };
        let sys = assemble_constrained(&linearize(&state, &hist, &params).unwrap(), &SystemPattern::new(&space).unwrap());
        let chain = space_hierarchy(&space).unwrap();
        let prolongs = chain.windows(2).map(|w| prolongation_free(&w[0], &w[1]).unwrap()).collect();
        let blocks = chain.iter().map(|s| s.block_ptr().to_vec()).collect();
        let hier = Hierarchy::new(&sys, prolongs, blocks, MgOptions::default()).unwrap();
        // Galerkin coarse operators
        let p = prolongation_free(&chain[chain.len() - 2], &space).unwrap();
        let coarse = sys.matrix.galerkin(&p);
        let h = hier.matrix(hier.n_levels() - 2);
        let (a, b) = (coarse.to_dense(), h.to_dense());
        let scale = coarse.max_abs();
        for i in 0..a.len() {
            for j in 0..a.len() {
                assert!((a[i][j] - b[i][j]).abs() <= 1e-12 * scale);
            }
        }
        let opts = PcgOptions { tol: 1e-8, max_iter: 20_000, gain_stop: None };
        let x0 = vec![0.0; sys.rhs.len()];
        let (_, plain) = pcg(&sys.matrix, &sys.rhs, &x0, opts, Preconditioner::None).unwrap();
        let (_, mg) = pcg(&sys.matrix, &sys.rhs, &x0, opts, Preconditioner::Multigrid(&hier)).unwrap();
        assert!(plain.converged && mg.converged);
        assert!(mg.iterations <= plain.iterations, "{} > {}", mg.iterations, plain.iterations);
        assert!(mg.conv_factor > 0.0 && mg.conv_factor <= 1.0 && mg.wu >= 0.0);
    }
}

#[test]
fn full_elimination_matches_fused_system_without_hanging_nodes() {
    // with nonzero boundary data the fused system solves for increments
    let case = TestCase::Square;
    let space = Arc::new(Space::new(Arc::new(uniform_mesh(2).unwrap()), 2, case.bcs()).unwrap());
    let state = build_initial_state(space.clone(), &case).unwrap();
    let params = Params::default();
    let lin = linearize(&state, &TimeHistory::new(100.0, &[-100.0], vec![state.clone()]).unwrap(), &params).unwrap();
    let full = assemble(&lin);
    let zero_offset = {
        let c = space.constraint_matrix();
        (full.matrix.galerkin(&c), c.transpose_mul_vec(&full.rhs))
    };
    let elim = apply_bcs(&space, &full.matrix, &full.rhs);
    assert_eq!(elim.matrix.to_dense(), zero_offset.0.to_dense());
    assert_eq!(elim.rhs.len(), zero_offset.1.len());
}
