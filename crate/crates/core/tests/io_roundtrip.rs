use std::process::Command;
use std::sync::Arc;

use fosls_twophase::energy::EnergyRecord;
use fosls_twophase::fespace::Space;
use fosls_twophase::io::{
    format_report, load_config, load_snapshot, read_energy_series, run_to_dir, summarize, write_config,
    write_energy_series, write_snapshot, RunConfig, Snapshot, SnapshotFormat,
};
use fosls_twophase::mesh::{Domain, MarkSet, Mesh};
use fosls_twophase::nested_driver::{GridLog, RunLog, StepLog};
use fosls_twophase::twophase::{State, TestCase};
use fosls_twophase::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Biquadratic state with hanging nodes and values that do not have short
/// decimal expansions.
fn graded_snapshot() -> Snapshot {
    let mut mesh = Mesh::build_uniform(2, 2, Domain::unit_square()).unwrap();
    for _ in 0..2 {
        let first: MarkSet = mesh.leaves().iter().copied().take(2).collect();
        mesh = mesh.refine(&first).unwrap();
    }
    let case = TestCase::Square;
    let space = Arc::new(Space::new(Arc::new(mesh), 2, case.bcs()).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let coeffs: Vec<f64> = (0..space.n_dofs()).map(|_| rng.gen::<f64>() * 1e3 - 1.0 / 3.0).collect();
    let indicators = (0..space.mesh().n_leaves()).map(|k| (k as f64 + 0.1).sqrt() * 1e-7).collect();
    Snapshot { state: State::new(space, coeffs, 0.1 + 0.2).unwrap(), indicators }
}

#[test]
fn snapshot_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let snap = graded_snapshot();
    assert!(!snap.state.space.constraints().is_empty(), "test mesh should have hanging nodes");
    for (name, fmt) in [("s.vtk", SnapshotFormat::Vtk), ("s.csv", SnapshotFormat::Csv)] {
        let path = dir.path().join(name);
        write_snapshot(&snap, &path, fmt).unwrap();
        let back = load_snapshot(&path, TestCase::Square.bcs()).unwrap();
        assert_eq!(back.state.time.to_bits(), snap.state.time.to_bits());
        assert_eq!(back.state.space.mesh().n_leaves(), snap.state.space.mesh().n_leaves());
        assert_eq!(back.indicators, snap.indicators);
        // compare node by node through lattice coordinates
        let (a, b) = (&snap.state.space, &back.state.space);
        assert_eq!(a.n_nodes(), b.n_nodes());
        for n in 0..a.n_nodes() {
            let m = b.find_node(a.node_lattice(n)).unwrap();
            for f in 0..9 {
                assert_eq!(snap.state.coeffs[n * 9 + f].to_bits(), back.state.coeffs[m * 9 + f].to_bits());
            }
        }
    }
    assert!(dir.path().join("s_elements.csv").exists());
}

#[test]
fn snapshot_rejects_wrong_indicator_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut snap = graded_snapshot();
    snap.indicators.pop();
    let path = dir.path().join("bad.vtk");
    assert!(write_snapshot(&snap, &path, SnapshotFormat::Vtk).is_err());
    assert!(!path.exists());
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::preset("square").unwrap();
    c.params.gamma = 0.1;
    c.params.ls_weights[12] = 1.0 / 7.0;
    c.driver.levels = 4;
    let path = dir.path().join("run.cfg");
    write_config(&c, &path).unwrap();
    assert_eq!(load_config(&path).unwrap(), c);
    assert!(matches!(load_config(dir.path().join("missing.cfg")), Err(Error::Io { .. })));
}

#[test]
fn energy_series_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let recs = vec![
        EnergyRecord { t: 0.0, energy: 1.0 / 3.0, dissipation: 2.0, rate: None, mismatch: None },
        EnergyRecord { t: 0.01, energy: 0.3, dissipation: 1.5e-300, rate: Some(-3.3333333333333335), mismatch: Some(0.1) },
    ];
    let path = dir.path().join("e.csv");
    write_energy_series(&recs, &path).unwrap();
    assert_eq!(read_energy_series(&path).unwrap(), recs);
}

fn grid(level: usize, elements: usize, newton: usize, g: f64) -> GridLog {
    GridLog { level, degree: if level == 0 { 1 } else { 2 }, elements, dofs: 0, nnz: 0, newton_steps: newton, g_initial: g, g_final: g }
}

#[test]
fn report_averages_are_arithmetic_means() {
    let step = |k: usize, wu: f64, cf: f64, nnz: usize, grids: Vec<GridLog>| StepLog {
        step: k,
        time: k as f64 * 0.01,
        grids,
        records: Vec::new(),
        wu,
        avg_conv_factor: cf,
        finest_nnz: nnz,
        indicators: Vec::new(),
    };
    let log = RunLog {
        test_case: "coalescence".into(),
        steps: vec![
            step(1, 10.0, 0.5, 100, vec![grid(0, 4, 3, 9.0), grid(1, 4, 2, 5.0), grid(2, 16, 2, 1.0)]),
            step(2, 20.0, 0.25, 300, vec![grid(0, 4, 1, 8.0), grid(1, 4, 2, 4.0)]),
            step(3, 3.0, 0.0, 200, vec![grid(0, 4, 2, 7.0), grid(1, 4, 1, 3.0), grid(2, 28, 1, 2.0)]),
        ],
    };
    let s = summarize(&log);
    assert_eq!(s.steps, 3);
    assert_eq!(s.avg_wu, 11.0);
    assert_eq!(s.avg_finest_nnz, 200.0);
    assert_eq!(s.avg_conv_factor, 0.25);
    assert_eq!(s.avg_functional, 7.0 / 3.0);
    assert_eq!(s.avg_finest_elements, 16.0);
    assert_eq!(s.newton_per_level, vec![(0, 4.0, 2.0), (1, 4.0, 5.0 / 3.0), (2, 22.0, 1.5)]);
    let text = format_report(&log, &[]);
    assert!(text.contains("averages over 3 steps"));
    assert!(text.contains("11.00"));
}

#[test]
fn run_to_dir_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::preset("coalescence").unwrap();
    c.driver.max_time_steps = 2;
    c.driver.levels = 3;
    c.snapshot_every = 2;
    let sim = run_to_dir(&c, dir.path()).unwrap();
    assert_eq!(sim.log().steps.len(), 2);
    for f in ["snapshot_00000.vtk", "snapshot_00002.vtk", "energy.csv", "report.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(!dir.path().join("snapshot_00001.vtk").exists());
    let energy = read_energy_series(dir.path().join("energy.csv")).unwrap();
    assert_eq!(energy.len(), 3);
    let last = load_snapshot(dir.path().join("snapshot_00002.vtk"), c.case.bcs()).unwrap();
    assert_eq!(last.state.coeffs.len(), sim.state().coeffs.len());
}

#[test]
fn cli_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_twophase");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "preset = coalescence\nsteps = 1\nlevels = 3\n").unwrap();
    let out = dir.path().join("out");
    let st = Command::new(exe).arg("run").arg(&cfg).arg("--out").arg(&out).arg("--adaptive").status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(out.join("report.txt").exists());

    let st = Command::new(exe).args(["run", "--levels", "x"]).arg(&cfg).status().unwrap();
    assert_eq!(st.code(), Some(1));
    let st = Command::new(exe).arg("run").arg(dir.path().join("none.cfg")).status().unwrap();
    assert_eq!(st.code(), Some(1));
    let st = Command::new(exe).arg("run").arg(&cfg).args(["--uniform", "--adaptive"]).status().unwrap();
    assert_eq!(st.code(), Some(1));
    std::fs::write(&cfg, "preset = coalescence\nmu = 0\n").unwrap();
    let st = Command::new(exe).arg("verify").arg(&cfg).status().unwrap();
    assert_eq!(st.code(), Some(1));
}
