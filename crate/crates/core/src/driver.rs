//! Experiment drivers behind the command-line binary: mesh statistics,
//! spectral sweeps over frequency or refinement, scattering solves, and RCS
//! comparison against the Mie reference. Commands read a flat key=value
//! configuration, write versioned CSV tables, and return their rows for
//! programmatic use. With the timestamp header suppressed, reruns with the
//! same configuration produce byte-identical files; wall-clock timings are
//! printed, never persisted, for the same reason.

use crate::efie::{assemble_dynamic, combine_t, plane_wave_split, DynamicBlocks, ExcitationSplit};
use crate::farfield::{bistatic_cut, l2_relative_error, mie_rcs, sigma_to_dbsm};
use crate::krylov::{cg_solve, cgs_solve, condition_of_dense, nrm2, DenseOp, SolveReport};
use crate::loopstar::{loop_matrix, star_matrix, PinvBackend};
use crate::mesh::{load_off, make_sphere, make_torus, TriangleMesh};
use crate::precond::{Formulation, PreconditionedSystem, Scalings};
use crate::wavenumber;
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use std::path::PathBuf;

#[derive(Debug)]
pub enum DriverError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl DriverError {
    pub fn exit_code(&self) -> i32 {
        match self {
            DriverError::Config(_) => 2,
            DriverError::Numerical(_) => 3,
            DriverError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for DriverError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DriverError::Config(m) => write!(f, "configuration: {m}"),
            DriverError::Numerical(m) => write!(f, "numerical: {m}"),
            DriverError::Io(m) => write!(f, "i/o: {m}"),
        }
    }
}

impl std::error::Error for DriverError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormulationChoice {
    /// Plain combined operator, no preconditioning.
    None,
    /// Classic rescaled loop-star change of basis (one loop and one star
    /// removed). Simply connected surfaces only.
    LoopStar,
    /// Closed-form sqrt(k) scalings with the dual-weighted star map.
    RfcmpTheory,
    /// Estimated scalings with the bare star projector; the production path.
    RfcmpImpl,
}

impl FormulationChoice {
    pub fn label(&self) -> &'static str {
        match self {
            FormulationChoice::None => "none",
            FormulationChoice::LoopStar => "loop-star",
            FormulationChoice::RfcmpTheory => "rfcmp-theory",
            FormulationChoice::RfcmpImpl => "rfcmp-impl",
        }
    }

    fn parse(s: &str) -> Result<Self, DriverError> {
        match s {
            "none" => Ok(FormulationChoice::None),
            "loop-star" => Ok(FormulationChoice::LoopStar),
            "rfcmp-theory" => Ok(FormulationChoice::RfcmpTheory),
            "rfcmp-impl" => Ok(FormulationChoice::RfcmpImpl),
            other => Err(DriverError::Config(format!("unknown formulation '{other}'"))),
        }
    }

    fn is_hpd(&self) -> bool {
        matches!(self, FormulationChoice::RfcmpTheory | FormulationChoice::RfcmpImpl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Cg,
    Cgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Frequency,
    Refinement,
}

#[derive(Debug, Clone)]
pub enum MeshSpec {
    Sphere { radius: f64, subdivisions: u32 },
    Torus { major: f64, minor: f64, n_major: usize, n_minor: usize },
    Off { path: PathBuf },
}

impl MeshSpec {
    pub fn build(&self) -> Result<TriangleMesh, DriverError> {
        match self {
            MeshSpec::Sphere { radius, subdivisions } => {
                if *radius <= 0.0 {
                    return Err(DriverError::Config("sphere radius must be positive".into()));
                }
                Ok(make_sphere(*radius, *subdivisions))
            }
            MeshSpec::Torus { major, minor, n_major, n_minor } => {
                if !(0.0 < *minor && minor < major) {
                    return Err(DriverError::Config(
                        "torus needs 0 < minor_radius < major_radius".into(),
                    ));
                }
                if *n_major < 3 || *n_minor < 3 {
                    return Err(DriverError::Config(
                        "torus needs at least 3 segments per direction".into(),
                    ));
                }
                Ok(make_torus(*major, *minor, *n_major, *n_minor))
            }
            MeshSpec::Off { path } => {
                load_off(path).map_err(|e| DriverError::Config(e.to_string()))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mesh: MeshSpec,
    pub sweep: SweepKind,
    /// Number of meshes in a refinement sweep (base plus dyadic refinements).
    pub levels: u32,
    pub frequencies: Vec<f64>,
    pub formulations: Vec<FormulationChoice>,
    pub solver: SolverChoice,
    pub tol: f64,
    pub max_iter: usize,
    pub dense_cap: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub timestamp: bool,
    pub direction: [f64; 3],
    pub polarization: [f64; 3],
    pub amplitude: f64,
    pub rcs_step_deg: f64,
    pub mie_only: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mesh: MeshSpec::Sphere { radius: 1.0, subdivisions: 2 },
            sweep: SweepKind::Frequency,
            levels: 3,
            frequencies: vec![1e6],
            formulations: vec![FormulationChoice::RfcmpImpl],
            solver: SolverChoice::Cg,
            tol: 1e-4,
            max_iter: 2000,
            dense_cap: 3000,
            seed: 7,
            out_dir: PathBuf::from("out"),
            timestamp: true,
            direction: [0.0, 0.0, 1.0],
            polarization: [1.0, 0.0, 0.0],
            amplitude: 1.0,
            rcs_step_deg: 1.0,
            mie_only: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, DriverError> {
    value
        .parse()
        .map_err(|_| DriverError::Config(format!("cannot parse '{value}' for key '{key}'")))
}

fn parse_triple(key: &str, value: &str) -> Result<[f64; 3], DriverError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(DriverError::Config(format!("key '{key}' needs three comma-separated values")));
    }
    Ok([parse_num(key, parts[0])?, parse_num(key, parts[1])?, parse_num(key, parts[2])?])
}

impl RunConfig {
    /// Parse a flat key=value text (comments with '#', blank lines ignored)
    /// on top of the defaults.
    pub fn parse(text: &str) -> Result<RunConfig, DriverError> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                DriverError::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Apply one key=value override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), DriverError> {
        match key {
            "mesh.kind" => {
                self.mesh = match value {
                    "sphere" => MeshSpec::Sphere { radius: 1.0, subdivisions: 2 },
                    "torus" => {
                        MeshSpec::Torus { major: 2.0, minor: 1.0, n_major: 12, n_minor: 6 }
                    }
                    "off" => MeshSpec::Off { path: PathBuf::new() },
                    other => {
                        return Err(DriverError::Config(format!("unknown mesh kind '{other}'")))
                    }
                };
            }
            "mesh.radius" => match &mut self.mesh {
                MeshSpec::Sphere { radius, .. } => *radius = parse_num(key, value)?,
                _ => return Err(DriverError::Config("mesh.radius needs mesh.kind=sphere".into())),
            },
            "mesh.subdivisions" => match &mut self.mesh {
                MeshSpec::Sphere { subdivisions, .. } => *subdivisions = parse_num(key, value)?,
                _ => {
                    return Err(DriverError::Config(
                        "mesh.subdivisions needs mesh.kind=sphere".into(),
                    ))
                }
            },
            "mesh.major_radius" => match &mut self.mesh {
                MeshSpec::Torus { major, .. } => *major = parse_num(key, value)?,
                _ => {
                    return Err(DriverError::Config("mesh.major_radius needs mesh.kind=torus".into()))
                }
            },
            "mesh.minor_radius" => match &mut self.mesh {
                MeshSpec::Torus { minor, .. } => *minor = parse_num(key, value)?,
                _ => {
                    return Err(DriverError::Config("mesh.minor_radius needs mesh.kind=torus".into()))
                }
            },
            "mesh.n_major" => match &mut self.mesh {
                MeshSpec::Torus { n_major, .. } => *n_major = parse_num(key, value)?,
                _ => return Err(DriverError::Config("mesh.n_major needs mesh.kind=torus".into())),
            },
            "mesh.n_minor" => match &mut self.mesh {
                MeshSpec::Torus { n_minor, .. } => *n_minor = parse_num(key, value)?,
                _ => return Err(DriverError::Config("mesh.n_minor needs mesh.kind=torus".into())),
            },
            "mesh.path" => match &mut self.mesh {
                MeshSpec::Off { path } => *path = PathBuf::from(value),
                _ => return Err(DriverError::Config("mesh.path needs mesh.kind=off".into())),
            },
            "sweep" => {
                self.sweep = match value {
                    "frequency" => SweepKind::Frequency,
                    "refinement" => SweepKind::Refinement,
                    other => {
                        return Err(DriverError::Config(format!("unknown sweep kind '{other}'")))
                    }
                };
            }
            "levels" => self.levels = parse_num(key, value)?,
            "frequencies" => {
                self.frequencies = value
                    .split(',')
                    .map(|s| parse_num::<f64>(key, s.trim()))
                    .collect::<Result<_, _>>()?;
            }
            "formulations" => {
                self.formulations = value
                    .split(',')
                    .map(|s| FormulationChoice::parse(s.trim()))
                    .collect::<Result<_, _>>()?;
            }
            "solver" => {
                self.solver = match value {
                    "cg" => SolverChoice::Cg,
                    "cgs" => SolverChoice::Cgs,
                    other => return Err(DriverError::Config(format!("unknown solver '{other}'"))),
                };
            }
            "solver.tol" => self.tol = parse_num(key, value)?,
            "solver.max_iter" => self.max_iter = parse_num(key, value)?,
            "dense_cap" => self.dense_cap = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "timestamp" => {
                self.timestamp = match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(DriverError::Config(format!(
                            "timestamp must be true or false, got '{other}'"
                        )))
                    }
                };
            }
            "excitation.direction" => self.direction = parse_triple(key, value)?,
            "excitation.polarization" => self.polarization = parse_triple(key, value)?,
            "excitation.amplitude" => self.amplitude = parse_num(key, value)?,
            "rcs.step_deg" => self.rcs_step_deg = parse_num(key, value)?,
            "rcs.mie_only" => {
                self.mie_only = match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(DriverError::Config(format!(
                            "rcs.mie_only must be true or false, got '{other}'"
                        )))
                    }
                };
            }
            other => return Err(DriverError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    fn validate_common(&self) -> Result<(), DriverError> {
        if self.frequencies.is_empty() {
            return Err(DriverError::Config("frequency list is empty".into()));
        }
        if self.frequencies.iter().any(|f| !(*f > 0.0)) {
            return Err(DriverError::Config("frequencies must be positive".into()));
        }
        if self.formulations.is_empty() {
            return Err(DriverError::Config("formulation list is empty".into()));
        }
        if !(self.tol > 0.0) {
            return Err(DriverError::Config("solver tolerance must be positive".into()));
        }
        if self.solver == SolverChoice::Cg && self.formulations.iter().any(|f| !f.is_hpd()) {
            return Err(DriverError::Config(
                "cg requires an HPD operator; use solver=cgs for none/loop-star".into(),
            ));
        }
        Ok(())
    }
}

/// Writes a CSV file with a schema version line, an optional timestamp line,
/// and optional extra comment lines.
fn write_csv(
    cfg: &RunConfig,
    name: &str,
    schema: &str,
    comments: &[String],
    header: &str,
    rows: &[String],
) -> Result<PathBuf, DriverError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| DriverError::Io(e.to_string()))?;
    let mut text = format!("# schema: {schema}\n");
    if cfg.timestamp {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        text.push_str(&format!("# generated-unix: {now}\n"));
    }
    for c in comments {
        text.push_str(&format!("# {c}\n"));
    }
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    let path = cfg.out_dir.join(name);
    std::fs::write(&path, text).map_err(|e| DriverError::Io(e.to_string()))?;
    Ok(path)
}

fn sanitize(msg: &str) -> String {
    msg.replace([',', '\n'], ";")
}

/// Rescaled loop-star change of basis: loop columns over sqrt(k), star
/// columns times sqrt(k), one of each dropped to fix the constant nullspaces.
/// Spans all of R^N only on simply connected surfaces.
pub fn loop_star_basis(mesh: &TriangleMesh, k: f64) -> Result<Array2<Complex64>, String> {
    if mesh.genus() != 0 {
        return Err(format!(
            "loop-star basis misses the {} harmonic functions of a genus-{} surface",
            2 * mesh.genus(),
            mesh.genus()
        ));
    }
    let n = mesh.n_edges();
    let n_v = mesh.n_vertices();
    let n_c = mesh.n_cells();
    let lambda = loop_matrix(mesh).to_csr().to_dense();
    let sigma = star_matrix(mesh).to_csr().to_dense();
    let mut q = Array2::zeros((n, n_v - 1 + n_c - 1));
    let ls = 1.0 / k.sqrt();
    let ss = k.sqrt();
    for e in 0..n {
        for v in 0..n_v - 1 {
            q[[e, v]] = Complex64::new(lambda[[e, v]] * ls, 0.0);
        }
        for c in 0..n_c - 1 {
            q[[e, n_v - 1 + c]] = Complex64::new(sigma[[e, c]] * ss, 0.0);
        }
    }
    Ok(q)
}

fn build_rfcmp<'a>(
    mesh: &TriangleMesh,
    blocks: &'a DynamicBlocks,
    choice: FormulationChoice,
    seed: u64,
) -> Result<PreconditionedSystem<'a>, DriverError> {
    let formulation = match choice {
        FormulationChoice::RfcmpImpl => Formulation::EstimatedStar,
        FormulationChoice::RfcmpTheory => Formulation::AnalyticDual,
        _ => unreachable!("not a preconditioned formulation"),
    };
    let mut sys = PreconditionedSystem::with_scalings(
        mesh,
        blocks,
        formulation,
        PinvBackend::DirectShifted,
        Scalings::analytic(blocks.k),
    )
    .map_err(|e| DriverError::Numerical(e.to_string()))?;
    if formulation == Formulation::EstimatedStar {
        sys.scalings = sys.estimate_scalings(1e-3, 200, seed);
    }
    Ok(sys)
}

#[derive(Debug, Clone)]
pub struct SpectrumRow {
    pub x_kind: &'static str,
    pub x: f64,
    pub formulation: &'static str,
    pub n_edges: usize,
    pub condition: Option<f64>,
    pub status: String,
}

/// Condition-number sweep over frequency or mesh refinement, one row per
/// point and formulation. Failures are recorded in the row and the sweep
/// continues.
pub fn cmd_spectrum(cfg: &RunConfig) -> Result<Vec<SpectrumRow>, DriverError> {
    cfg.validate_common()?;
    let mut points: Vec<(f64, &'static str, TriangleMesh, f64)> = Vec::new();
    match cfg.sweep {
        SweepKind::Frequency => {
            let mesh = cfg.mesh.build()?;
            for &f_hz in &cfg.frequencies {
                points.push((f_hz, "frequency_hz", mesh.clone(), wavenumber(f_hz)));
            }
        }
        SweepKind::Refinement => {
            if cfg.levels == 0 {
                return Err(DriverError::Config("refinement sweep needs levels >= 1".into()));
            }
            let k = wavenumber(cfg.frequencies[0]);
            let mut mesh = cfg.mesh.build()?;
            for level in 0..cfg.levels {
                if level > 0 {
                    mesh = mesh.refine_structured();
                }
                let h = mesh.edge_stats().avg;
                points.push((1.0 / h, "spectral_index", mesh.clone(), k));
            }
        }
    }

    let mut rows = Vec::new();
    for (x, x_kind, mesh, k) in &points {
        let n = mesh.n_edges();
        if n > cfg.dense_cap {
            return Err(DriverError::Config(format!(
                "mesh with {n} edges exceeds the dense condition cap {}",
                cfg.dense_cap
            )));
        }
        let blocks = assemble_dynamic(mesh, *k);
        for &choice in &cfg.formulations {
            let cond = spectrum_condition(mesh, &blocks, choice, cfg.seed);
            rows.push(SpectrumRow {
                x_kind,
                x: *x,
                formulation: choice.label(),
                n_edges: n,
                condition: cond.as_ref().ok().copied(),
                status: cond.err().map(|e| sanitize(&e)).unwrap_or_else(|| "ok".into()),
            });
        }
    }

    let csv: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{:e},{},{},{},{}",
                r.x_kind,
                r.x,
                r.formulation,
                r.n_edges,
                r.condition.map(|c| format!("{c:e}")).unwrap_or_else(|| "nan".into()),
                r.status
            )
        })
        .collect();
    write_csv(
        cfg,
        "spectrum.csv",
        "rfcmp-spectrum v1",
        &[],
        "x_kind,x_value,formulation,n_edges,condition,status",
        &csv,
    )?;
    Ok(rows)
}

fn spectrum_condition(
    mesh: &TriangleMesh,
    blocks: &DynamicBlocks,
    choice: FormulationChoice,
    seed: u64,
) -> Result<f64, String> {
    match choice {
        FormulationChoice::None => {
            let t = combine_t(blocks);
            condition_of_dense(&t).map_err(|e| e.to_string())
        }
        FormulationChoice::LoopStar => {
            let q = loop_star_basis(mesh, blocks.k)?;
            let t = combine_t(blocks);
            let b = q.t().to_owned().dot(&t).dot(&q);
            condition_of_dense(&b).map_err(|e| e.to_string())
        }
        FormulationChoice::RfcmpImpl | FormulationChoice::RfcmpTheory => {
            let sys = build_rfcmp(mesh, blocks, choice, seed).map_err(|e| e.to_string())?;
            let a = crate::krylov::materialize(&sys);
            condition_of_dense(&a).map_err(|e| e.to_string())
        }
    }
}

#[derive(Debug)]
pub struct SolveOutcome {
    pub frequency: f64,
    pub formulation: &'static str,
    pub n_edges: usize,
    pub report: SolveReport,
    pub converged: bool,
    /// Norm ratio of the non-solenoidal content of the excitation; near zero
    /// for plane waves far below resonance, but never exactly zero on a
    /// discrete mesh.
    pub sigma_te_over_e: f64,
    pub wall_time: f64,
}

/// Assemble, precondition, and solve one scattering problem per frequency
/// and formulation; writes the summary, per-run residual histories, and
/// current coefficient files.
pub fn cmd_solve(cfg: &RunConfig) -> Result<Vec<SolveOutcome>, DriverError> {
    cfg.validate_common()?;
    let mesh = cfg.mesh.build()?;
    let n = mesh.n_edges();
    let mut outcomes = Vec::new();
    let mut summary = Vec::new();

    for (fi, &f_hz) in cfg.frequencies.iter().enumerate() {
        let k = wavenumber(f_hz);
        let blocks = assemble_dynamic(&mesh, k);
        let split = plane_wave_split(&mesh, k, cfg.direction, cfg.polarization, cfg.amplitude)
            .map_err(|e| DriverError::Config(e.to_string()))?;
        let sigma_te =
            nrm2(&star_matrix(&mesh).apply_t(&split.full)) / nrm2(&split.full).max(f64::MIN_POSITIVE);

        for &choice in &cfg.formulations {
            let (report, current) = solve_one(cfg, &mesh, &blocks, &split, choice)
                .map_err(|e| DriverError::Numerical(e.to_string()))?;
            let residual_rows: Vec<String> = report
                .residuals
                .iter()
                .enumerate()
                .map(|(i, r)| format!("{},{:e}", i + 1, r))
                .collect();
            write_csv(
                cfg,
                &format!("residuals_f{fi}_{}.csv", choice.label()),
                "rfcmp-residuals v1",
                &[format!("frequency_hz = {f_hz:e}"), format!("formulation = {}", choice.label())],
                "iteration,residual",
                &residual_rows,
            )?;
            let current_rows: Vec<String> = current
                .iter()
                .enumerate()
                .map(|(i, z)| format!("{},{:e},{:e}", i, z.re, z.im))
                .collect();
            write_csv(
                cfg,
                &format!("current_f{fi}_{}.csv", choice.label()),
                "rfcmp-current v1",
                &[format!("frequency_hz = {f_hz:e}"), format!("formulation = {}", choice.label())],
                "edge,re,im",
                &current_rows,
            )?;

            let final_residual = report.residuals.last().copied().unwrap_or(0.0);
            summary.push(format!(
                "{:e},{},{},{},{},{},{:e},{:e}",
                f_hz,
                choice.label(),
                n,
                report.iterations,
                report.matvec_count,
                report.converged,
                final_residual,
                sigma_te,
            ));
            outcomes.push(SolveOutcome {
                frequency: f_hz,
                formulation: choice.label(),
                n_edges: n,
                converged: report.converged,
                sigma_te_over_e: sigma_te,
                wall_time: report.wall_time,
                report,
            });
        }
    }

    write_csv(
        cfg,
        "solve.csv",
        "rfcmp-solve v1",
        &["wall-clock timings are printed to stdout, not persisted, to keep reruns byte-identical"
            .to_string()],
        "frequency_hz,formulation,n_edges,iterations,matvecs,converged,final_residual,sigma_te_over_e",
        &summary,
    )?;
    Ok(outcomes)
}

fn solve_one(
    cfg: &RunConfig,
    mesh: &TriangleMesh,
    blocks: &DynamicBlocks,
    split: &ExcitationSplit,
    choice: FormulationChoice,
) -> Result<(SolveReport, Array1<Complex64>), crate::krylov::SolveError> {
    match choice {
        FormulationChoice::RfcmpImpl | FormulationChoice::RfcmpTheory => {
            let sys = build_rfcmp(mesh, blocks, choice, cfg.seed)
                .map_err(|e| crate::krylov::SolveError::Backend(e.to_string()))?;
            let b = sys.build_rhs(split);
            let report = match cfg.solver {
                SolverChoice::Cg => cg_solve(&sys, &b, cfg.tol, cfg.max_iter)?,
                SolverChoice::Cgs => cgs_solve(&sys, &b, cfg.tol, cfg.max_iter)?,
            };
            let current = sys.recover_current(&report.x);
            Ok((report, current))
        }
        FormulationChoice::None => {
            let op = DenseOp { a: combine_t(blocks) };
            let b = split.full.mapv(|z| -z);
            let report = cgs_solve(&op, &b, cfg.tol, cfg.max_iter)?;
            let current = report.x.clone();
            Ok((report, current))
        }
        FormulationChoice::LoopStar => {
            let q = loop_star_basis(mesh, blocks.k)
                .map_err(crate::krylov::SolveError::Backend)?;
            let t = combine_t(blocks);
            let a = q.t().to_owned().dot(&t).dot(&q);
            let b = q.t().to_owned().dot(&split.full.mapv(|z| -z));
            let report = cgs_solve(&DenseOp { a }, &b, cfg.tol, cfg.max_iter)?;
            let current = q.dot(&report.x);
            Ok((report, current))
        }
    }
}

#[derive(Debug)]
pub struct RcsRun {
    pub frequency: f64,
    pub error_pct: Option<f64>,
    pub csv_path: PathBuf,
}

/// Solve (with an HPD formulation), radiate, and compare against the Mie
/// reference on the phi = 0 cut; `rcs.mie_only` skips the solve and emits
/// the reference curve alone.
pub fn cmd_rcs(cfg: &RunConfig) -> Result<Vec<RcsRun>, DriverError> {
    cfg.validate_common()?;
    let radius = match &cfg.mesh {
        MeshSpec::Sphere { radius, .. } => *radius,
        _ => {
            return Err(DriverError::Config(
                "rcs comparison needs mesh.kind=sphere (Mie reference)".into(),
            ))
        }
    };
    let choice = cfg.formulations[0];
    if !cfg.mie_only && !choice.is_hpd() {
        return Err(DriverError::Config(
            "rcs solve path supports the rfcmp formulations only".into(),
        ));
    }

    let mesh = cfg.mesh.build()?;
    let mut runs = Vec::new();
    for (fi, &f_hz) in cfg.frequencies.iter().enumerate() {
        let k = wavenumber(f_hz);
        let theta_deg: Vec<f64> = {
            let n = (180.0 / cfg.rcs_step_deg).round() as usize;
            (0..=n).map(|i| i as f64 * cfg.rcs_step_deg).collect()
        };
        let theta_rad: Vec<f64> = theta_deg.iter().map(|t| t.to_radians()).collect();
        let mie = mie_rcs(radius, k, &theta_rad);
        let mie_db = sigma_to_dbsm(&mie);

        let (mom_db, err_pct) = if cfg.mie_only {
            (None, None)
        } else {
            let blocks = assemble_dynamic(&mesh, k);
            let split =
                plane_wave_split(&mesh, k, cfg.direction, cfg.polarization, cfg.amplitude)
                    .map_err(|e| DriverError::Config(e.to_string()))?;
            let sys = build_rfcmp(&mesh, &blocks, choice, cfg.seed)?;
            let b = sys.build_rhs(&split);
            let report = match cfg.solver {
                SolverChoice::Cg => cg_solve(&sys, &b, cfg.tol, cfg.max_iter),
                SolverChoice::Cgs => cgs_solve(&sys, &b, cfg.tol, cfg.max_iter),
            }
            .map_err(|e| DriverError::Numerical(e.to_string()))?;
            if !report.converged {
                return Err(DriverError::Numerical(format!(
                    "solver stopped at {} iterations without reaching {:e}",
                    report.iterations, cfg.tol
                )));
            }
            // Helmholtz components radiate separately; the split keeps the
            // star part relative-accurate deep in the static limit where it
            // would vanish into the rounding of the summed vector.
            let (j_h, j_s) = sys.recover_current_split(&report.x);
            let cut = bistatic_cut(&mesh, &j_h, &j_s, k, cfg.rcs_step_deg);
            let err = l2_relative_error(&cut.sigma, &mie);
            (Some(sigma_to_dbsm(&cut.sigma)), Some(err))
        };

        let rows: Vec<String> = theta_deg
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let (m, e) = match &mom_db {
                    Some(m) => (format!("{:e}", m[i]), format!("{:e}", (m[i] - mie_db[i]).abs())),
                    None => ("nan".into(), "nan".into()),
                };
                format!("{t},{m},{:e},{e}", mie_db[i])
            })
            .collect();
        let mut comments = vec![format!("frequency_hz = {f_hz:e}")];
        if let Some(e) = err_pct {
            comments.push(format!("l2_relative_error_pct = {e:e}"));
        }
        let path = write_csv(
            cfg,
            &format!("rcs_f{fi}.csv"),
            "rfcmp-rcs v1",
            &comments,
            "theta_deg,rcs_dbsm_mom,rcs_dbsm_mie,abs_err_db",
            &rows,
        )?;
        runs.push(RcsRun { frequency: f_hz, error_pct: err_pct, csv_path: path });
    }
    Ok(runs)
}

#[derive(Debug)]
pub struct MeshInfo {
    pub n_vertices: usize,
    pub n_cells: usize,
    pub n_edges: usize,
    pub genus: u32,
    pub h_min: f64,
    pub h_avg: f64,
    pub h_max: f64,
    pub content_hash: String,
}

pub fn cmd_mesh_info(cfg: &RunConfig) -> Result<MeshInfo, DriverError> {
    let mesh = cfg.mesh.build()?;
    let stats = mesh.edge_stats();
    Ok(MeshInfo {
        n_vertices: mesh.n_vertices(),
        n_cells: mesh.n_cells(),
        n_edges: mesh.n_edges(),
        genus: mesh.genus(),
        h_min: stats.min,
        h_avg: stats.avg,
        h_max: stats.max,
        content_hash: mesh.content_hash(),
    })
}
