//! Multigrid-preconditioned CG on a Newton system, against Jacobi-PCG.
use fosls_twophase::io::RunConfig;
use fosls_twophase::linsolve::MgOptions;
use fosls_twophase::verify::newton_system_solve;

fn main() -> fosls_twophase::Result<()> {
    let c = RunConfig::preset("square")?;
    for n in [8, 16, 32] {
        for (name, mg) in [
            ("V(1,1)", MgOptions::default()),
            ("W(1,1)", MgOptions { cycle_index: 2, ..MgOptions::default() }),
            ("V(2,2)", MgOptions { pre_sweeps: 2, post_sweeps: 2, cycle_index: 1 }),
        ] {
            let s = newton_system_solve(&c.case, &c.params, n, mg, 1e-8, 200)?;
            println!(
                "{n:>3}x{n:<3} {name}: {:>3} cycles, residual {:.1e}, factor {:.3}, {:.1} WU",
                s.iterations, s.rel_residual, s.conv_factor, s.wu
            );
        }
    }
    Ok(())
}
