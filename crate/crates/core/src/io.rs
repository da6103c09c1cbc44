//! Run configuration files, snapshots, energy series and run reports.
//!
//! Configuration is a flat `key = value` text file; `#` starts a comment.
//! A `preset` key selects the base configuration and every other key
//! overrides it, regardless of line order.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so every
//! value read back is bit-identical to the value written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::energy::{energy_law_report, EnergyRecord};
use crate::error::{Error, Result};
use crate::fespace::{BcSpec, Space};
use crate::mesh::{Domain, MarkSet, Mesh};
use crate::nested_driver::{DriverConfig, Marking, Refinement, RunLog, Simulation, Smoother};
use crate::twophase::{Manufactured, Params, State, TestCase, TimeScheme, FIELD_NAMES, NEQ, NFIELDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotFormat {
    Vtk,
    Csv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub case: TestCase,
    pub params: Params,
    pub driver: DriverConfig,
    pub out_dir: Option<PathBuf>,
    /// Write a snapshot every this many steps (the initial state is always written).
    pub snapshot_every: usize,
    pub snapshot_format: SnapshotFormat,
}

/// Parameters of the manufactured problem: smooth data with a moderate
/// reaction and diffusion so the exact solution is resolved on coarse grids.
pub fn manufactured_params() -> Params {
    Params { mu: 1.0, lambda: 0.01, gamma: 1.0, eps: 0.2, dt: 0.01, ..Params::default() }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<RunConfig> {
        let driver = DriverConfig::default();
        let base = |case, params| RunConfig {
            case,
            params,
            driver: driver.clone(),
            out_dir: None,
            snapshot_every: 10,
            snapshot_format: SnapshotFormat::Vtk,
        };
        match name {
            "coalescence" => Ok(base(
                TestCase::Coalescence { eta: 0.01 },
                Params { mu: 1.0, lambda: 1e-4, gamma: 0.01, eps: 0.01, dt: 0.01, ..Params::default() },
            )),
            "square" => Ok(base(
                TestCase::Square,
                Params { mu: 0.1, lambda: 0.1, gamma: 0.01, eps: 0.02, dt: 0.01, ..Params::default() },
            )),
            "manufactured" => {
                let mut c = base(TestCase::Manufactured(Manufactured::default()), manufactured_params());
                c.driver.max_time_steps = 1;
                c.driver.levels = 6;
                c.snapshot_every = 1;
                Ok(c)
            }
            other => Err(Error::invalid(format!(
                "unknown preset '{other}' (expected coalescence, square or manufactured)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.driver.validate()?;
        if self.snapshot_every == 0 {
            return Err(Error::Range("snapshot_every must be at least 1".into()));
        }
        if let TestCase::Coalescence { eta } = self.case {
            if !(eta > 0.0) {
                return Err(Error::Range(format!("eta must be positive, got {eta}")));
            }
        }
        Ok(())
    }

    /// Every key, one per line, in a form [`parse_config`] reads back exactly.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let d = &self.driver;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("case", self.case.name().into());
        match self.case {
            TestCase::Coalescence { eta } => kv("eta", eta.to_string()),
            TestCase::Manufactured(m) => {
                kv("psi_amp", m.psi_amp.to_string());
                kv("p_amp", m.p_amp.to_string());
                kv("phi_mean", m.phi_mean.to_string());
                kv("phi_amp", m.phi_amp.to_string());
            }
            TestCase::Square => {}
        }
        kv("mu", p.mu.to_string());
        kv("lambda", p.lambda.to_string());
        kv("gamma", p.gamma.to_string());
        kv("eps", p.eps.to_string());
        kv("dt", p.dt.to_string());
        kv("scheme", if p.scheme == TimeScheme::Bdf1 { "bdf1" } else { "bdf2" }.into());
        kv("advection", p.include_advection.to_string());
        kv("ls_weights", p.ls_weights.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","));
        kv("linear_reaction", p.linear_reaction.map_or("none".into(), |v| v.to_string()));
        kv("steps", d.max_time_steps.to_string());
        kv("max_newton", d.max_newton.to_string());
        kv("newton_rel_tol", d.newton_rel_tol.to_string());
        kv("functional_floor", d.functional_floor.to_string());
        kv("solver_tol", d.solver_tol.to_string());
        kv("solver_gain_floor", d.solver_gain_floor.to_string());
        kv("max_cycles", d.max_cycles.to_string());
        kv("levels", d.levels.to_string());
        kv("functional_tol", d.functional_tol.map_or("none".into(), |v| v.to_string()));
        kv("max_elements", d.max_elements.to_string());
        kv("refinement", if d.refinement == Refinement::Uniform { "uniform" } else { "adaptive" }.into());
        match d.marking {
            Marking::Ace { work_exponent } => {
                kv("marking", "ace".into());
                kv("work_exponent", work_exponent.to_string());
            }
            Marking::Dorfler { theta } => {
                kv("marking", "dorfler".into());
                kv("theta", theta.to_string());
            }
        }
        kv("warm_start", d.warm_start.to_string());
        kv("pre_sweeps", d.mg.pre_sweeps.to_string());
        kv("post_sweeps", d.mg.post_sweeps.to_string());
        kv("cycle_index", d.mg.cycle_index.to_string());
        kv("smoother", if d.smoother == Smoother::NodeBlock { "node" } else { "element" }.into());
        if let Some(o) = &self.out_dir {
            kv("out_dir", o.display().to_string());
        }
        kv("snapshot_every", self.snapshot_every.to_string());
        kv("snapshot_format", if self.snapshot_format == SnapshotFormat::Vtk { "vtk" } else { "csv" }.into());
        s
    }
}

const KEYS: &[&str] = &[
    "preset", "case", "eta", "psi_amp", "p_amp", "phi_mean", "phi_amp", "mu", "lambda", "gamma", "eps", "dt",
    "scheme", "advection", "ls_weights", "linear_reaction", "steps", "max_newton", "newton_rel_tol",
    "functional_floor", "solver_tol", "solver_gain_floor", "max_cycles", "levels", "functional_tol",
    "max_elements", "refinement", "marking", "work_exponent", "theta", "warm_start", "pre_sweeps",
    "post_sweeps", "cycle_index", "smoother", "out_dir", "snapshot_every", "snapshot_format",
];

/// Parse configuration text. `origin` names the source in error messages.
pub fn parse_config(text: &str, origin: &str) -> Result<RunConfig> {
    parse_config_with(text, origin, None)
}

/// Like [`parse_config`], with `preset` replacing any `preset` key of the text.
pub fn parse_config_with(text: &str, origin: &str, preset: Option<&str>) -> Result<RunConfig> {
    let perr = |line: usize, message: String| Error::Parse { path: origin.to_string(), line, message };
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(perr(i + 1, format!("expected 'key = value', got '{line}'")));
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !KEYS.contains(&k.as_str()) {
            return Err(perr(i + 1, format!("unknown key '{k}'")));
        }
        if entries.iter().any(|e| e.1 == k) {
            return Err(perr(i + 1, format!("key '{k}' given twice")));
        }
        entries.push((i + 1, k, v));
    }
    if let Some(p) = preset {
        entries.retain(|e| e.1 != "preset");
        entries.push((0, "preset".into(), p.to_string()));
    }
    let get = |k: &str| entries.iter().find(|e| e.1 == k).map(|e| (e.0, e.2.as_str()));

    let case_name = get("case").or(get("preset")).map_or("coalescence", |(_, v)| v);
    let mut cfg = match get("preset") {
        Some((line, v)) => RunConfig::preset(v).map_err(|e| perr(line, e.to_string()))?,
        None => RunConfig::preset(case_name).map_err(|e| perr(get("case").map_or(0, |c| c.0), e.to_string()))?,
    };
    if let Some((line, v)) = get("case") {
        cfg.case = match v {
            "coalescence" => match cfg.case {
                c @ TestCase::Coalescence { .. } => c,
                _ => TestCase::Coalescence { eta: 0.01 },
            },
            "square" => TestCase::Square,
            "manufactured" => match cfg.case {
                c @ TestCase::Manufactured(_) => c,
                _ => TestCase::Manufactured(Manufactured::default()),
            },
            other => return Err(perr(line, format!("key 'case': unknown test case '{other}'"))),
        };
    }

    for (line, key, value) in &entries {
        let (line, key, value) = (*line, key.as_str(), value.as_str());
        let num = || -> Result<f64> {
            value.parse::<f64>().map_err(|_| perr(line, format!("key '{key}': '{value}' is not a number")))
        };
        let int = || -> Result<usize> {
            value.parse::<usize>().map_err(|_| perr(line, format!("key '{key}': '{value}' is not a nonnegative integer")))
        };
        let flag = || -> Result<bool> {
            match value {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(perr(line, format!("key '{key}': '{value}' is not a boolean"))),
            }
        };
        let opt = || -> Result<Option<f64>> { if value == "none" { Ok(None) } else { num().map(Some) } };
        let bad = |what: &str| perr(line, format!("key '{key}': {what}, got '{value}'"));
        let p = &mut cfg.params;
        let d = &mut cfg.driver;
        match key {
            "preset" | "case" => {}
            "eta" => match &mut cfg.case {
                TestCase::Coalescence { eta } => *eta = num()?,
                _ => return Err(bad("only the coalescence case has an eta")),
            },
            "psi_amp" | "p_amp" | "phi_mean" | "phi_amp" => match &mut cfg.case {
                TestCase::Manufactured(m) => {
                    let v = num()?;
                    match key {
                        "psi_amp" => m.psi_amp = v,
                        "p_amp" => m.p_amp = v,
                        "phi_mean" => m.phi_mean = v,
                        _ => m.phi_amp = v,
                    }
                }
                _ => return Err(bad("only the manufactured case has this key")),
            },
            "mu" => p.mu = num()?,
            "lambda" => p.lambda = num()?,
            "gamma" => p.gamma = num()?,
            "eps" => p.eps = num()?,
            "dt" => p.dt = num()?,
            "scheme" => {
                p.scheme = match value {
                    "bdf1" => TimeScheme::Bdf1,
                    "bdf2" => TimeScheme::Bdf2,
                    _ => return Err(bad("expected bdf1 or bdf2")),
                }
            }
            "advection" => p.include_advection = flag()?,
            "ls_weights" => {
                let w: Vec<f64> = value
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("expected comma-separated numbers"))?;
                if w.len() != NEQ {
                    return Err(bad(&format!("expected {NEQ} weights")));
                }
                p.ls_weights.copy_from_slice(&w);
            }
            "linear_reaction" => p.linear_reaction = opt()?,
            "steps" => d.max_time_steps = int()?,
            "max_newton" => d.max_newton = int()?,
            "newton_rel_tol" => d.newton_rel_tol = num()?,
            "functional_floor" => d.functional_floor = num()?,
            "solver_tol" => d.solver_tol = num()?,
            "solver_gain_floor" => d.solver_gain_floor = num()?,
            "max_cycles" => d.max_cycles = int()?,
            "levels" => d.levels = int()?,
            "functional_tol" => d.functional_tol = opt()?,
            "max_elements" => d.max_elements = int()?,
            "refinement" => {
                d.refinement = match value {
                    "uniform" => Refinement::Uniform,
                    "adaptive" => Refinement::Adaptive,
                    _ => return Err(bad("expected uniform or adaptive")),
                }
            }
            "marking" => {
                d.marking = match value {
                    "ace" => Marking::Ace { work_exponent: 1.0 },
                    "dorfler" => Marking::Dorfler { theta: 0.5 },
                    _ => return Err(bad("expected ace or dorfler")),
                }
            }
            "work_exponent" | "theta" => {}
            "warm_start" => d.warm_start = flag()?,
            "pre_sweeps" => d.mg.pre_sweeps = int()?,
            "post_sweeps" => d.mg.post_sweeps = int()?,
            "cycle_index" => d.mg.cycle_index = int()?,
            "smoother" => {
                d.smoother = match value {
                    "node" => Smoother::NodeBlock,
                    "element" => Smoother::ElementPatch,
                    _ => return Err(bad("expected node or element")),
                }
            }
            "out_dir" => cfg.out_dir = Some(PathBuf::from(value)),
            "snapshot_every" => cfg.snapshot_every = int()?,
            "snapshot_format" => {
                cfg.snapshot_format = match value {
                    "vtk" => SnapshotFormat::Vtk,
                    "csv" => SnapshotFormat::Csv,
                    _ => return Err(bad("expected vtk or csv")),
                }
            }
            _ => unreachable!("key list checked above"),
        }
    }
    // marking parameters apply after the marking kind is known
    if let Some((line, v)) = get("work_exponent") {
        let x: f64 = v.parse().map_err(|_| perr(line, format!("key 'work_exponent': '{v}' is not a number")))?;
        match &mut cfg.driver.marking {
            Marking::Ace { work_exponent } => *work_exponent = x,
            _ => return Err(perr(line, "key 'work_exponent' requires marking = ace".into())),
        }
    }
    if let Some((line, v)) = get("theta") {
        let x: f64 = v.parse().map_err(|_| perr(line, format!("key 'theta': '{v}' is not a number")))?;
        match &mut cfg.driver.marking {
            Marking::Dorfler { theta } => *theta = x,
            _ => return Err(perr(line, "key 'theta' requires marking = dorfler".into())),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    load_config_with(path, None)
}

pub fn load_config_with(path: impl AsRef<Path>, preset: Option<&str>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_with(&text, &path.display().to_string(), preset)
}

pub fn write_config(cfg: &RunConfig, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &cfg.to_text())
}

/// Write `content` to `path`; a partially written file is removed.
fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Err(e) = fs::write(path, content) {
        let _ = fs::remove_file(path);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// A state together with its elementwise functional.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub state: State,
    pub indicators: Vec<f64>,
}

fn vtk_cell(space: &Space, leaf: usize) -> Vec<u32> {
    let n = space.element_nodes(leaf);
    if space.degree() == 1 {
        vec![n[0], n[1], n[3], n[2]]
    } else {
        // corners, edge midpoints (counter-clockwise), center
        vec![n[0], n[2], n[8], n[6], n[1], n[5], n[7], n[3], n[4]]
    }
}

/// Snapshot in legacy ASCII VTK (unstructured grid of Lagrange quads) or
/// CSV. CSV writes nodes to `path` and elements to `<stem>_elements.csv`.
pub fn write_snapshot(snap: &Snapshot, path: impl AsRef<Path>, format: SnapshotFormat) -> Result<()> {
    let path = path.as_ref();
    let state = &snap.state;
    let space = &state.space;
    let mesh = space.mesh();
    if snap.indicators.len() != mesh.n_leaves() {
        return Err(Error::invalid("one indicator per leaf is required"));
    }
    let (nx, ny) = mesh.base_dims();
    let d = mesh.domain();
    let meta = format!(
        "time={} degree={} base={}x{} domain={},{},{},{}",
        state.time,
        space.degree(),
        nx,
        ny,
        d.xmin,
        d.xmax,
        d.ymin,
        d.ymax
    );
    let nn = space.n_nodes();
    let nleaf = mesh.n_leaves();
    let mut s = String::new();
    match format {
        SnapshotFormat::Vtk => {
            s.push_str("# vtk DataFile Version 3.0\n");
            let _ = writeln!(s, "fosls-twophase snapshot {meta}");
            s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
            let _ = writeln!(s, "POINTS {nn} double");
            for n in 0..nn {
                let x = space.node_point(n);
                let _ = writeln!(s, "{} {} 0", x[0], x[1]);
            }
            let per = if space.degree() == 1 { 4 } else { 9 };
            let _ = writeln!(s, "CELLS {nleaf} {}", nleaf * (per + 1));
            for leaf in 0..nleaf {
                let c: Vec<String> = vtk_cell(space, leaf).iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "{per} {}", c.join(" "));
            }
            let _ = writeln!(s, "CELL_TYPES {nleaf}");
            let ty = if space.degree() == 1 { 9 } else { 28 };
            for _ in 0..nleaf {
                let _ = writeln!(s, "{ty}");
            }
            let _ = writeln!(s, "POINT_DATA {nn}");
            let _ = writeln!(s, "FIELD nodes {}", NFIELDS + 1);
            let _ = writeln!(s, "lattice 2 {nn} long");
            for n in 0..nn {
                let q = space.node_lattice(n);
                let _ = writeln!(s, "{} {}", q[0], q[1]);
            }
            for (f, name) in FIELD_NAMES.iter().enumerate() {
                let _ = writeln!(s, "{name} 1 {nn} double");
                for n in 0..nn {
                    let _ = writeln!(s, "{}", state.coeffs[n * NFIELDS + f]);
                }
            }
            let _ = writeln!(s, "CELL_DATA {nleaf}");
            s.push_str("FIELD cells 2\n");
            let _ = writeln!(s, "functional 1 {nleaf} double");
            for v in &snap.indicators {
                let _ = writeln!(s, "{v}");
            }
            let _ = writeln!(s, "tree 3 {nleaf} long");
            for &id in mesh.leaves() {
                let e = mesh.element(id);
                let _ = writeln!(s, "{} {} {}", e.level, e.origin[0], e.origin[1]);
            }
            write_file(path, &s)
        }
        SnapshotFormat::Csv => {
            let _ = writeln!(s, "# {meta}");
            let _ = writeln!(s, "x,y,qx,qy,{}", FIELD_NAMES.join(","));
            for n in 0..nn {
                let x = space.node_point(n);
                let q = space.node_lattice(n);
                let vals: Vec<String> = state.coeffs[n * NFIELDS..(n + 1) * NFIELDS].iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "{},{},{},{},{}", x[0], x[1], q[0], q[1], vals.join(","));
            }
            let mut e = String::new();
            let _ = writeln!(e, "# {meta}");
            e.push_str("level,ox,oy,functional\n");
            for (k, &id) in mesh.leaves().iter().enumerate() {
                let el = mesh.element(id);
                let _ = writeln!(e, "{},{},{},{}", el.level, el.origin[0], el.origin[1], snap.indicators[k]);
            }
            let epath = csv_elements_path(path);
            write_file(path, &s)?;
            if let Err(err) = write_file(&epath, &e) {
                let _ = fs::remove_file(path);
                return Err(err);
            }
            Ok(())
        }
    }
}

fn csv_elements_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map_or("snapshot".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}_elements.csv"))
}

struct Meta {
    time: f64,
    degree: usize,
    base: (usize, usize),
    domain: Domain,
}

fn parse_meta(text: &str) -> Option<Meta> {
    let mut time = None;
    let mut degree = None;
    let mut base = None;
    let mut domain = None;
    for tok in text.split_whitespace() {
        let Some((k, v)) = tok.split_once('=') else { continue };
        match k {
            "time" => time = v.parse().ok(),
            "degree" => degree = v.parse().ok(),
            "base" => {
                let (a, b) = v.split_once('x')?;
                base = Some((a.parse().ok()?, b.parse().ok()?));
            }
            "domain" => {
                let d: Vec<f64> = v.split(',').filter_map(|t| t.parse().ok()).collect();
                if d.len() == 4 {
                    domain = Domain::new(d[0], d[1], d[2], d[3]).ok();
                }
            }
            _ => {}
        }
    }
    Some(Meta { time: time?, degree: degree?, base: base?, domain: domain? })
}

/// Rebuild a mesh from its base grid and the (level, origin) of each leaf.
fn rebuild_mesh(meta: &Meta, leaves: &[(u32, [i64; 2])]) -> Result<Mesh> {
    let target: std::collections::HashSet<(u32, [i64; 2])> = leaves.iter().copied().collect();
    let mut mesh = Mesh::build_uniform(meta.base.0, meta.base.1, meta.domain)?;
    loop {
        let marks: MarkSet = mesh
            .leaves()
            .iter()
            .copied()
            .filter(|&id| {
                let e = mesh.element(id);
                !target.contains(&(e.level, e.origin))
            })
            .collect();
        if marks.is_empty() {
            break;
        }
        if mesh.max_level() > leaves.iter().map(|l| l.0).max().unwrap_or(0) {
            return Err(Error::invalid("snapshot leaves do not form a refinement of the base grid"));
        }
        mesh = mesh.refine(&marks)?;
    }
    if mesh.n_leaves() != target.len() {
        return Err(Error::invalid("snapshot leaves do not form a refinement of the base grid"));
    }
    Ok(mesh)
}

fn fill_coeffs(space: &Space, nodes: &[([i64; 2], [f64; NFIELDS])]) -> Result<Vec<f64>> {
    let mut coeffs = vec![0.0; space.n_dofs()];
    let mut seen = vec![false; space.n_nodes()];
    for (q, v) in nodes {
        let n = space
            .find_node(*q)
            .ok_or_else(|| Error::invalid(format!("snapshot node {q:?} is not a node of the rebuilt space")))?;
        coeffs[n * NFIELDS..(n + 1) * NFIELDS].copy_from_slice(v);
        seen[n] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::invalid("snapshot does not cover every node"));
    }
    Ok(coeffs)
}

/// Read a snapshot written by [`write_snapshot`]. The format is taken from
/// the file contents; `bcs` equips the rebuilt space.
pub fn load_snapshot(path: impl AsRef<Path>, bcs: BcSpec) -> Result<Snapshot> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let perr = |line: usize, message: &str| Error::Parse { path: origin.clone(), line, message: message.to_string() };
    let lines: Vec<&str> = text.lines().collect();
    if lines.first().is_some_and(|l| l.starts_with("# vtk")) {
        let meta = lines.get(1).and_then(|l| parse_meta(l)).ok_or_else(|| perr(2, "missing snapshot header"))?;
        let mut i = 0;
        let mut find = |prefix: &str| -> Result<usize> {
            while i < lines.len() {
                if lines[i].starts_with(prefix) {
                    return Ok(i);
                }
                i += 1;
            }
            Err(perr(lines.len(), &format!("missing section '{prefix}'")))
        };
        let count = |line: usize, k: usize| -> Result<usize> {
            lines[line].split_whitespace().nth(k).and_then(|t| t.parse().ok()).ok_or_else(|| perr(line + 1, "bad count"))
        };
        let l = find("lattice ")?;
        let nn = count(l, 2)?;
        let mut lattice = Vec::with_capacity(nn);
        for k in 0..nn {
            let t: Vec<i64> = lines.get(l + 1 + k).map_or(vec![], |s| s.split_whitespace().filter_map(|t| t.parse().ok()).collect());
            if t.len() != 2 {
                return Err(perr(l + 2 + k, "bad lattice entry"));
            }
            lattice.push([t[0], t[1]]);
        }
        let mut values = vec![[0.0; NFIELDS]; nn];
        for (f, name) in FIELD_NAMES.iter().enumerate() {
            let l = find(&format!("{name} 1 "))?;
            for (k, v) in values.iter_mut().enumerate() {
                v[f] = lines
                    .get(l + 1 + k)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| perr(l + 2 + k, "bad value"))?;
            }
        }
        let l = find("functional 1 ")?;
        let nleaf = count(l, 2)?;
        let mut indicators = Vec::with_capacity(nleaf);
        for k in 0..nleaf {
            indicators.push(lines.get(l + 1 + k).and_then(|s| s.trim().parse().ok()).ok_or_else(|| perr(l + 2 + k, "bad value"))?);
        }
        let l = find("tree 3 ")?;
        let mut leaves = Vec::with_capacity(nleaf);
        for k in 0..nleaf {
            let t: Vec<i64> = lines.get(l + 1 + k).map_or(vec![], |s| s.split_whitespace().filter_map(|t| t.parse().ok()).collect());
            if t.len() != 3 {
                return Err(perr(l + 2 + k, "bad tree entry"));
            }
            leaves.push((t[0] as u32, [t[1], t[2]]));
        }
        let nodes: Vec<_> = lattice.into_iter().zip(values).collect();
        assemble_snapshot(&meta, &leaves, &nodes, indicators, bcs)
    } else {
        let meta = lines.first().and_then(|l| parse_meta(l.trim_start_matches('#'))).ok_or_else(|| perr(1, "missing snapshot header"))?;
        let mut nodes = Vec::new();
        for (k, line) in lines.iter().enumerate().skip(2) {
            let t: Vec<&str> = line.split(',').collect();
            if t.len() != 4 + NFIELDS {
                return Err(perr(k + 1, "wrong number of columns"));
            }
            let q = [t[2].parse().map_err(|_| perr(k + 1, "bad lattice"))?, t[3].parse().map_err(|_| perr(k + 1, "bad lattice"))?];
            let mut v = [0.0; NFIELDS];
            for f in 0..NFIELDS {
                v[f] = t[4 + f].parse().map_err(|_| perr(k + 1, "bad value"))?;
            }
            nodes.push((q, v));
        }
        let epath = csv_elements_path(path);
        let etext = fs::read_to_string(&epath).map_err(|e| Error::io(&epath, e))?;
        let mut leaves = Vec::new();
        let mut indicators = Vec::new();
        for (k, line) in etext.lines().enumerate().skip(2) {
            let t: Vec<&str> = line.split(',').collect();
            let bad = || Error::Parse { path: epath.display().to_string(), line: k + 1, message: "bad element row".into() };
            if t.len() != 4 {
                return Err(bad());
            }
            leaves.push((
                t[0].parse().map_err(|_| bad())?,
                [t[1].parse().map_err(|_| bad())?, t[2].parse().map_err(|_| bad())?],
            ));
            indicators.push(t[3].parse().map_err(|_| bad())?);
        }
        assemble_snapshot(&meta, &leaves, &nodes, indicators, bcs)
    }
}

fn assemble_snapshot(
    meta: &Meta,
    leaves: &[(u32, [i64; 2])],
    nodes: &[([i64; 2], [f64; NFIELDS])],
    indicators: Vec<f64>,
    bcs: BcSpec,
) -> Result<Snapshot> {
    let mesh = rebuild_mesh(meta, leaves)?;
    let space = Arc::new(Space::new(Arc::new(mesh), meta.degree, bcs)?);
    let coeffs = fill_coeffs(&space, nodes)?;
    // indicators follow the written leaf order; map them onto the rebuilt one
    let mut by_leaf = std::collections::HashMap::new();
    for (k, l) in leaves.iter().enumerate() {
        by_leaf.insert(*l, indicators[k]);
    }
    let m = space.mesh();
    let indicators = m
        .leaves()
        .iter()
        .map(|&id| {
            let e = m.element(id);
            by_leaf[&(e.level, e.origin)]
        })
        .collect();
    Ok(Snapshot { state: State::new(space, coeffs, meta.time)?, indicators })
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// CSV with columns `t,E,D,dEdt,mismatch`; undefined rates are empty.
pub fn write_energy_series(records: &[EnergyRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::from("t,E,D,dEdt,mismatch\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{}", r.t, r.energy, r.dissipation, opt_num(r.rate), opt_num(r.mismatch));
    }
    write_file(path.as_ref(), &s)
}

pub fn read_energy_series(path: impl AsRef<Path>) -> Result<Vec<EnergyRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        let bad = || Error::Parse { path: path.display().to_string(), line: k + 1, message: "bad energy row".into() };
        let t: Vec<&str> = line.split(',').collect();
        if t.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        out.push(EnergyRecord { t: num(t[0])?, energy: num(t[1])?, dissipation: num(t[2])?, rate: opt(t[3])?, mismatch: opt(t[4])? });
    }
    Ok(out)
}

/// Run-level averages of a log.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportSummary {
    pub steps: usize,
    pub avg_wu: f64,
    pub avg_finest_nnz: f64,
    pub avg_functional: f64,
    pub avg_conv_factor: f64,
    pub avg_finest_elements: f64,
    /// Per grid level: (level, mean elements, mean Newton steps) over the
    /// steps that reached that level.
    pub newton_per_level: Vec<(usize, f64, f64)>,
}

pub fn summarize(log: &RunLog) -> ReportSummary {
    let n = log.steps.len();
    let mean = |f: &dyn Fn(&crate::nested_driver::StepLog) -> f64| {
        if n == 0 {
            0.0
        } else {
            log.steps.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let depth = log.steps.iter().map(|s| s.grids.len()).max().unwrap_or(0);
    let newton_per_level = (0..depth)
        .map(|l| {
            let rows: Vec<_> = log.steps.iter().filter_map(|s| s.grids.get(l)).collect();
            let m = rows.len().max(1) as f64;
            (
                l,
                rows.iter().map(|g| g.elements as f64).sum::<f64>() / m,
                rows.iter().map(|g| g.newton_steps as f64).sum::<f64>() / m,
            )
        })
        .collect();
    ReportSummary {
        steps: n,
        avg_wu: mean(&|s| s.wu),
        avg_finest_nnz: mean(&|s| s.finest_nnz as f64),
        avg_functional: mean(&|s| s.finest().map_or(0.0, |g| g.g_final)),
        avg_conv_factor: mean(&|s| s.avg_conv_factor),
        avg_finest_elements: mean(&|s| s.finest().map_or(0.0, |g| g.elements as f64)),
        newton_per_level,
    }
}

/// Plain-text report: grid table per step, then run averages.
pub fn format_report(log: &RunLog, energy: &[EnergyRecord]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "test case: {}", log.test_case);
    let _ = writeln!(s, "time steps: {}", log.steps.len());
    for st in &log.steps {
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "step {}  t = {}  WU = {:.2}  avg conv factor = {:.4}  finest nonzeros = {}",
            st.step, st.time, st.wu, st.avg_conv_factor, st.finest_nnz
        );
        let _ = writeln!(s, "  {:>5} {:>6} {:>9} {:>9} {:>6} {:>14}", "level", "degree", "elements", "dofs", "newton", "functional");
        for g in &st.grids {
            let _ = writeln!(
                s,
                "  {:>5} {:>6} {:>9} {:>9} {:>6} {:>14.6e}",
                g.level, g.degree, g.elements, g.dofs, g.newton_steps, g.g_final
            );
        }
    }
    let sum = summarize(log);
    let _ = writeln!(s);
    let _ = writeln!(s, "averages over {} steps", sum.steps);
    let _ = writeln!(s, "  {:>10} {:>14} {:>14} {:>12} {:>14}", "avg WU", "avg nonzeros", "avg functional", "avg conv", "avg elements");
    let _ = writeln!(
        s,
        "  {:>10.2} {:>14.1} {:>14.6e} {:>12.4} {:>14.1}",
        sum.avg_wu, sum.avg_finest_nnz, sum.avg_functional, sum.avg_conv_factor, sum.avg_finest_elements
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "average Newton steps per grid level");
    let _ = writeln!(s, "  {:>5} {:>12} {:>12}", "level", "elements", "newton");
    for (l, e, nw) in &sum.newton_per_level {
        let _ = writeln!(s, "  {:>5} {:>12.1} {:>12.3}", l, e, nw);
    }
    if energy.len() > 1 {
        let rep = energy_law_report(energy);
        let _ = writeln!(s);
        let _ = writeln!(s, "energy law");
        let _ = writeln!(s, "  max |dE/dt + D| / max D  = {:.4e}", rep.max_relative_mismatch);
        let _ = writeln!(s, "  mean |dE/dt + D| / max D = {:.4e}", rep.mean_relative_mismatch);
        let _ = writeln!(s, "  E non-increasing after step 2: {}", rep.nonincreasing_after_startup);
    }
    s
}

pub fn write_report(log: &RunLog, energy: &[EnergyRecord], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &format_report(log, energy))
}

fn snapshot_name(step: usize, format: SnapshotFormat) -> String {
    match format {
        SnapshotFormat::Vtk => format!("snapshot_{step:05}.vtk"),
        SnapshotFormat::Csv => format!("snapshot_{step:05}.csv"),
    }
}

/// Run a configuration, writing snapshots, `energy.csv` and `report.txt`
/// into `out`. On a solver failure the outputs so far are still written
/// before the error is returned.
pub fn run_to_dir(cfg: &RunConfig, out: &Path) -> Result<Simulation> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut sim = Simulation::new(cfg.params.clone(), cfg.driver.clone(), cfg.case)?;
    let initial = Snapshot { state: sim.state().clone(), indicators: vec![0.0; sim.state().space.mesh().n_leaves()] };
    write_snapshot(&initial, out.join(snapshot_name(0, cfg.snapshot_format)), cfg.snapshot_format)?;
    let mut failure = None;
    while !sim.is_finished() {
        match sim.step() {
            Ok(log) => {
                let (step, indicators) = (log.step, log.indicators.clone());
                if step % cfg.snapshot_every == 0 || step == cfg.driver.max_time_steps {
                    let snap = Snapshot { state: sim.state().clone(), indicators };
                    write_snapshot(&snap, out.join(snapshot_name(step, cfg.snapshot_format)), cfg.snapshot_format)?;
                }
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    write_energy_series(sim.energy(), out.join("energy.csv"))?;
    write_report(sim.log(), sim.energy(), out.join("report.txt"))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(sim),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_parameters() {
        let c = RunConfig::preset("coalescence").unwrap();
        assert_eq!(c.case, TestCase::Coalescence { eta: 0.01 });
        assert_eq!((c.params.mu, c.params.eps, c.params.gamma, c.params.lambda), (1.0, 0.01, 0.01, 1e-4));
        assert_eq!((c.params.dt, c.driver.max_time_steps), (0.01, 100));
        let s = RunConfig::preset("square").unwrap();
        assert_eq!((s.params.mu, s.params.eps, s.params.gamma, s.params.lambda), (0.1, 0.02, 0.01, 0.1));
        assert_eq!((s.params.dt, s.driver.max_time_steps), (0.01, 100));
        assert!(RunConfig::preset("bubble").is_err());
    }

    #[test]
    fn config_text_round_trip() {
        for name in ["coalescence", "square", "manufactured"] {
            let mut c = RunConfig::preset(name).unwrap();
            c.params.dt = 0.1 + 0.2;
            c.driver.functional_tol = Some(1.0 / 3.0);
            c.out_dir = Some("out/dir".into());
            let back = parse_config(&c.to_text(), "mem").unwrap();
            assert_eq!(back, c);
        }
        let mut c = RunConfig::preset("coalescence").unwrap();
        c.driver.marking = Marking::Dorfler { theta: 0.3 };
        c.snapshot_format = SnapshotFormat::Csv;
        assert_eq!(parse_config(&c.to_text(), "mem").unwrap(), c);
    }

    #[test]
    fn config_errors_name_line_and_key() {
        let e = parse_config("preset = square\n\nbogus = 1\n", "f.cfg").unwrap_err();
        assert!(matches!(&e, Error::Parse { line: 3, message, .. } if message.contains("bogus")), "{e}");
        let e = parse_config("mu = abc", "f.cfg").unwrap_err();
        assert!(matches!(&e, Error::Parse { line: 1, message, .. } if message.contains("mu")), "{e}");
        let e = parse_config("mu = -1", "f.cfg").unwrap_err();
        assert!(matches!(e, Error::Range(_)), "{e}");
        let e = parse_config("snapshot_every = 0", "f.cfg").unwrap_err();
        assert!(matches!(e, Error::Range(_)));
        // overrides apply regardless of order
        let c = parse_config("dt = 0.005 # smaller\npreset = square\n", "f.cfg").unwrap();
        assert_eq!((c.case, c.params.dt, c.params.mu), (TestCase::Square, 0.005, 0.1));
    }
}
