//! Uniform against adaptive nested iteration, and the two marking rules on
//! the resulting indicators.
use fosls_twophase::adapt::{mark_ace, mark_dorfler, ErrorField, WorkModel};
use fosls_twophase::energy::band_fraction;
use fosls_twophase::io::RunConfig;
use fosls_twophase::nested_driver::{Refinement, Simulation};

fn main() -> fosls_twophase::Result<()> {
    let c = RunConfig::preset("coalescence")?;
    for refinement in [Refinement::Uniform, Refinement::Adaptive] {
        let mut driver = c.driver.clone();
        driver.levels = 6;
        driver.refinement = refinement;
        let mut sim = Simulation::new(c.params.clone(), driver, c.case)?;
        let log = sim.step()?.clone();
        let fin = log.finest().expect("grids");
        println!(
            "{refinement:?}: {} elements, G {:.4e}, {:.2} WU, {:.0}% of elements in |phi| < 0.9",
            fin.elements,
            fin.g_final,
            log.wu,
            100.0 * band_fraction(sim.state(), 0.9)
        );
        let err = ErrorField::from_per_element(&sim.state().space, &log.indicators)?;
        println!(
            "  next marking: ACE {} elements, Dorfler(0.5) {} elements",
            mark_ace(&err, 2, WorkModel::default()).len(),
            mark_dorfler(&err, 0.5)?.len()
        );
    }
    Ok(())
}
