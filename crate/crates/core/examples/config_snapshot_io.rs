//! Config file round trip and a short run writing snapshots, the energy
//! series and the report into a directory.
use fosls_twophase::energy::total_energy;
use fosls_twophase::io::{load_config, load_snapshot, read_energy_series, run_to_dir, write_config, RunConfig};

fn main() -> fosls_twophase::Result<()> {
    let out = std::env::temp_dir().join("fosls-twophase-example");
    std::fs::create_dir_all(&out).map_err(|e| fosls_twophase::Error::Io { path: out.clone(), source: e })?;
    let mut c = RunConfig::preset("coalescence")?;
    c.driver.levels = 4;
    c.driver.max_time_steps = 3;
    let cfg_path = out.join("run.cfg");
    write_config(&c, &cfg_path)?;
    let c = load_config(&cfg_path)?;
    print!("{}", c.to_text());

    let sim = run_to_dir(&c, &out)?;
    let energy = read_energy_series(out.join("energy.csv"))?;
    let snap = load_snapshot(out.join("snapshot_00003.vtk"), c.case.bcs())?;
    println!(
        "logged E {:.17e}, E of the reloaded snapshot {:.17e}",
        energy.last().expect("rows").energy,
        total_energy(&snap.state, &sim.params)
    );
    println!("outputs in {}", out.display());
    Ok(())
}
