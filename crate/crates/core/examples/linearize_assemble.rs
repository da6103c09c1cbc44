//! Newton linearization of the two-phase system and assembly of the
//! least-squares normal equations on a uniform grid.
use fosls_twophase::io::RunConfig;
use fosls_twophase::twophase::{
    assemble_constrained, build_initial_state, linearize, linearized_functional, nonlinear_functional, SystemPattern,
    TimeHistory,
};
use fosls_twophase::verify::uniform_space;

fn main() -> fosls_twophase::Result<()> {
    let c = RunConfig::preset("coalescence")?;
    let space = uniform_space(8, 2, &c.case)?;
    let state = build_initial_state(space.clone(), &c.case)?;
    let alpha0 = 1.0 / c.params.dt;
    let history = TimeHistory::new(alpha0, &[-alpha0], vec![state.clone()])?;

    let (g, per_element) = nonlinear_functional(&state, &history, &c.params)?;
    println!("G at the initial state: {g:.6e} over {} elements", per_element.len());
    let lin = linearize(&state, &history, &c.params)?;
    let pattern = SystemPattern::new(&space)?;
    let sys = assemble_constrained(&lin, &pattern);
    println!(
        "constrained system: {} unknowns, {} nonzeros, symmetry defect {:.1e}",
        sys.rhs.len(),
        sys.matrix.nnz(),
        sys.matrix.symmetry_defect()
    );
    let zero = vec![0.0; space.n_dofs()];
    println!("linearized functional at the zero increment: {:.6e}", linearized_functional(&zero, &lin)?);
    Ok(())
}
