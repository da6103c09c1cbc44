//! Energy, dissipation and interface diagnostics along a square-bubble run.
use fosls_twophase::energy::{energy_law_report, interface_topology, Phase};
use fosls_twophase::io::RunConfig;
use fosls_twophase::nested_driver::Simulation;

fn main() -> fosls_twophase::Result<()> {
    let mut c = RunConfig::preset("square")?;
    c.driver.levels = 5;
    c.driver.max_time_steps = 10;
    let mut sim = Simulation::new(c.params, c.driver, c.case)?;
    println!("{:>5} {:>11} {:>11} {:>11} {:>8} {:>8} {:>6}", "t", "E", "D", "dE/dt", "area", "length", "ratio");
    loop {
        let e = *sim.energy().last().expect("record");
        let t = interface_topology(sim.state(), Phase::Positive);
        let rate = e.rate.map_or("-".to_string(), |r| format!("{r:.4e}"));
        println!(
            "{:>5.2} {:>11.4e} {:>11.4e} {rate:>11} {:>8.4} {:>8.4} {:>6.3}",
            e.t, e.energy, e.dissipation, t.area, t.perimeter, t.extent_ratio
        );
        if sim.is_finished() {
            break;
        }
        sim.step()?;
    }
    let rep = energy_law_report(sim.energy());
    println!("max |dE/dt + D| / max D = {:.3}", rep.max_relative_mismatch);
    Ok(())
}
