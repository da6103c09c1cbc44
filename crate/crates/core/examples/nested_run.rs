//! One time step of nested iteration on the coalescence problem, with the
//! per-grid Newton counts and work.
use fosls_twophase::io::RunConfig;
use fosls_twophase::nested_driver::Simulation;

fn main() -> fosls_twophase::Result<()> {
    let mut c = RunConfig::preset("coalescence")?;
    c.driver.levels = 6;
    let mut sim = Simulation::new(c.params, c.driver, c.case)?;
    let log = sim.step()?;
    println!("{:>5} {:>6} {:>8} {:>8} {:>6} {:>12}", "level", "degree", "elements", "dofs", "newton", "functional");
    for g in &log.grids {
        println!("{:>5} {:>6} {:>8} {:>8} {:>6} {:>12.4e}", g.level, g.degree, g.elements, g.dofs, g.newton_steps, g.g_final);
    }
    println!("work: {:.2} WU, mean MG factor {:.3}", log.wu, log.avg_conv_factor);
    Ok(())
}
