//! The property checks behind the `verify` command.
use fosls_twophase::io::RunConfig;
use fosls_twophase::verify::run_suite;

fn main() -> fosls_twophase::Result<()> {
    let c = RunConfig::preset("coalescence")?;
    for r in run_suite(&c.params)? {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    Ok(())
}
