//! Command implementations shared by the binary and the tests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::assembly::Permeability;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::mesh::{CoarseMesh, DofCounts, EdgeClass, HierMesh};
use crate::output::{csv_string, sig5, vtk_string, write_file, CellFields};
use crate::postproc::{observed_order, recover_flux, ErrorAccumulator, ErrorNorms, PostProcessor};
use crate::problems::{self, ExactSolution, ProblemSpec};
use crate::reference::{Mat2, Vec2};
use crate::solver::{integrate, Discretization, RunStats, SolverSettings, TimeGrid};
use crate::stencil::{build_stencils, dump, validate_stencils, StencilReport};

/// Where the problem comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Named(String),
    Files { mesh: PathBuf, data: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeSpec {
    Tau(f64),
    Steps(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WriteFields {
    Final,
    All,
    None,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: Source,
    pub level: u32,
    pub time: TimeSpec,
    pub t_final: Option<f64>,
    pub settings: SolverSettings,
    pub out: Option<PathBuf>,
    pub write_fields: WriteFields,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_problem(source: &Source) -> Result<ProblemSpec> {
    match source {
        Source::Named(name) => problems::by_name(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown problem '{name}'; available: {}",
                problems::NAMES.join(", ")
            ))
        }),
        Source::Files { mesh, data } => {
            let coarse = CoarseMesh::parse(read(mesh)?.as_bytes())?;
            let text = read(data)?;
            parse_data(&text, coarse).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}: {msg}", data.display())),
                other => other,
            })
        }
    }
}

const DATA_KEYS: [&str; 13] = [
    "name", "t_final", "k", "k11", "k12", "k22", "f", "p0", "g_d", "g_n", "p_exact", "ux_exact", "uy_exact",
];

/// Parse a `key = expression` data file; `#` starts a comment.
///
/// Recognized keys: `name`, `t_final`, `f`, `p0`, `g_d`, `g_n` (default 0),
/// the permeability as `k` or `k11`, `k12`, `k22` (default identity,
/// evaluated at element centroids), and optionally `p_exact` with
/// `ux_exact`, `uy_exact` for error measurement.
pub fn parse_data(text: &str, coarse: CoarseMesh) -> Result<ProblemSpec> {
    let mut entries: Vec<(&str, String, usize)> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", no + 1)))?;
        let key = key.trim();
        if !DATA_KEYS.contains(&key) {
            return Err(Error::Config(format!("line {}: unknown key '{key}'", no + 1)));
        }
        if entries.iter().any(|(k, _, _)| *k == key) {
            return Err(Error::Config(format!("line {}: duplicate key '{key}'", no + 1)));
        }
        entries.push((key, value.trim().to_string(), no + 1));
    }
    let get = |key: &str| entries.iter().find(|(k, _, _)| *k == key);
    let expr = |key: &str| -> Result<Option<Arc<Expr>>> {
        match get(key) {
            None => Ok(None),
            Some((_, v, line)) => Expr::parse(v)
                .map(|e| Some(Arc::new(e)))
                .map_err(|e| Error::Config(format!("line {line}: {key}: {e}"))),
        }
    };
    let space_time = |key: &str| -> Result<problems::SpaceTimeFn> {
        Ok(match expr(key)? {
            Some(e) => Arc::new(move |x: Vec2, t| e.eval(x.x, x.y, t)),
            None => Arc::new(|_, _| 0.0),
        })
    };
    let t_final = match get("t_final") {
        Some((_, v, line)) => {
            let e = Expr::parse(v).map_err(|e| Error::Config(format!("line {line}: t_final: {e}")))?;
            e.eval(0.0, 0.0, 0.0)
        }
        None => 1.0,
    };
    let permeability = if let Some(k) = expr("k")? {
        if ["k11", "k12", "k22"].iter().any(|key| get(key).is_some()) {
            return Err(Error::Config("give either k or k11/k12/k22, not both".into()));
        }
        Permeability::Field(Arc::new(move |x: Vec2| Mat2::identity() * k.eval(x.x, x.y, 0.0)))
    } else if get("k11").is_some() || get("k22").is_some() {
        let one = || Arc::new(Expr::parse("1").expect("literal"));
        let k11 = expr("k11")?.unwrap_or_else(one);
        let k22 = expr("k22")?.unwrap_or_else(one);
        let k12 = expr("k12")?.unwrap_or_else(|| Arc::new(Expr::parse("0").expect("literal")));
        Permeability::Field(Arc::new(move |x: Vec2| {
            let off = k12.eval(x.x, x.y, 0.0);
            Mat2::new(k11.eval(x.x, x.y, 0.0), off, off, k22.eval(x.x, x.y, 0.0))
        }))
    } else {
        Permeability::Uniform(Mat2::identity())
    };
    let p0 = match expr("p0")? {
        Some(e) => Arc::new(move |x: Vec2| e.eval(x.x, x.y, 0.0)) as problems::SpaceFn,
        None => Arc::new(|_| 0.0),
    };
    let exact = match (expr("p_exact")?, expr("ux_exact")?, expr("uy_exact")?) {
        (Some(p), Some(ux), Some(uy)) => Some(ExactSolution {
            p: Arc::new(move |x: Vec2, t| p.eval(x.x, x.y, t)),
            u: Arc::new(move |x: Vec2, t| Vec2::new(ux.eval(x.x, x.y, t), uy.eval(x.x, x.y, t))),
        }),
        (None, None, None) => None,
        _ => return Err(Error::Config("p_exact, ux_exact and uy_exact must be given together".into())),
    };
    Ok(ProblemSpec {
        name: get("name").map_or_else(|| "custom".to_string(), |(_, v, _)| v.clone()),
        coarse,
        permeability,
        f: space_time("f")?,
        p0,
        g_d: space_time("g_d")?,
        g_n: space_time("g_n")?,
        t_final,
        exact,
    })
}

pub fn time_grid(t_final: f64, time: TimeSpec) -> Result<TimeGrid> {
    Ok(match time {
        TimeSpec::Tau(tau) => TimeGrid::from_tau(t_final, tau)?,
        TimeSpec::Steps(n) => TimeGrid::from_steps(t_final, n)?,
    })
}

/// Interface and boundary flux diagnostics at the final time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluxBalance {
    /// Largest difference of the two one-sided normal fluxes on interface edges.
    pub interface_mismatch: f64,
    /// Largest `|U|` on Neumann edges.
    pub neumann_max: f64,
}

pub fn flux_balance(mesh: &HierMesh, u: &nalgebra::DVector<f64>) -> FluxBalance {
    let mut b = FluxBalance {
        interface_mismatch: 0.0,
        neumann_max: 0.0,
    };
    for edge in 0..mesh.num_edges() {
        let (d0, d1) = mesh.edge_dofs(edge);
        match (mesh.edge_class(edge), d1) {
            (EdgeClass::Interface, Some(d1)) => {
                // each DOF normal is outward for its Up element
                let n0 = mesh.dof_normal(d0);
                let n1 = mesh.dof_normal(d1);
                let s = n0.dot(&n1).signum();
                b.interface_mismatch = b.interface_mismatch.max((u[d0] - s * u[d1]).abs());
            }
            (EdgeClass::NeumannBoundary, _) => b.neumann_max = b.neumann_max.max(u[d0].abs()),
            _ => {}
        }
    }
    b
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub problem: String,
    pub level: u32,
    pub subdomains: usize,
    pub grid: TimeGrid,
    pub settings: SolverSettings,
    pub dofs: DofCounts,
    pub stats: RunStats,
    pub threads: usize,
    pub errors: Option<ErrorNorms>,
    pub flux_balance: FluxBalance,
    pub postproc_fallbacks: usize,
    pub field_files: Vec<String>,
}

/// Run one problem and write fields and the summary into `cfg.out`.
pub fn run_solve(cfg: &RunConfig) -> Result<SolveSummary> {
    let mut pb = load_problem(&cfg.source)?;
    if let Some(tf) = cfg.t_final {
        pb.t_final = tf;
    }
    let grid = time_grid(pb.t_final, cfg.time)?;
    let disc = Discretization::new(&pb, cfg.level)?;
    let post = PostProcessor::new(&disc.mesh);
    let mut acc = pb.exact.as_ref().map(|_| ErrorAccumulator::new(&disc.mesh));
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    let mut files = Vec::new();
    let mut write_err: Option<Error> = None;
    let mut last_flux = nalgebra::DVector::zeros(disc.mesh.num_dofs());
    let (_, stats) = integrate(&pb, &disc, &grid, &cfg.settings, |state, data| {
        if let (Some(acc), Some(exact)) = (acc.as_mut(), pb.exact.as_ref()) {
            acc.observe(&disc.mesh, &disc.blocks, exact, state, data);
        }
        let last = state.n == grid.steps;
        let wanted = match cfg.write_fields {
            WriteFields::All => true,
            WriteFields::Final => last,
            WriteFields::None => false,
        };
        if !(last || wanted && cfg.out.is_some()) {
            return;
        }
        let flux = recover_flux(&disc.blocks, state, data);
        if wanted && write_err.is_none() {
            if let Some(dir) = &cfg.out {
                let vel: Vec<Vec2> = (0..disc.mesh.num_elements())
                    .map(|e| post.field(&disc.mesh, &flux.u, e).eval(disc.mesh.element_centroid(e)))
                    .collect();
                let fields = CellFields {
                    t: state.t,
                    pressure: &state.p,
                    velocity: &vel,
                };
                let stem = format!("fields_{:05}", state.n);
                for (ext, text) in [("vtk", vtk_string(&disc.mesh, &fields)), ("csv", csv_string(&disc.mesh, &fields))] {
                    let path = dir.join(format!("{stem}.{ext}"));
                    match write_file(&path, &text) {
                        Ok(()) => files.push(path.display().to_string()),
                        Err(e) => write_err = Some(e),
                    }
                }
            }
        }
        if last {
            last_flux = flux.u;
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let summary = SolveSummary {
        problem: pb.name.clone(),
        level: cfg.level,
        subdomains: disc.mesh.num_subdomains(),
        grid,
        settings: cfg.settings,
        dofs: disc.mesh.dof_counts(),
        stats,
        threads: rayon::current_num_threads(),
        errors: acc.map(|a| a.max),
        flux_balance: flux_balance(&disc.mesh, &last_flux),
        postproc_fallbacks: post.fallback_count(),
        field_files: files,
    };
    if let Some(dir) = &cfg.out {
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        write_file(&dir.join("summary.json"), &json)?;
    }
    Ok(summary)
}

/// One row of a convergence table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub level: u32,
    pub tau: f64,
    pub errors: ErrorNorms,
    /// Orders against the previous level at the same `tau`.
    pub orders: Option<[f64; 4]>,
    pub stats: RunStats,
}

fn as_array(e: &ErrorNorms) -> [f64; 4] {
    [e.pressure, e.pressure_max, e.postproc, e.flux]
}

/// Max-in-time errors for every `(tau, level)` pair.
pub fn run_convergence(
    pb: &ProblemSpec,
    levels: &[u32],
    taus: &[f64],
    settings: &SolverSettings,
) -> Result<Vec<ConvergenceRow>> {
    let Some(exact) = pb.exact.as_ref() else {
        return Err(Error::Config(format!(
            "problem '{}' has no exact solution; convergence studies need one",
            pb.name
        )));
    };
    let discs = levels
        .iter()
        .map(|&l| Discretization::new(pb, l))
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &tau in taus {
        let grid = TimeGrid::from_tau(pb.t_final, tau)?;
        let mut prev: Option<[f64; 4]> = None;
        for (disc, &level) in discs.iter().zip(levels) {
            let mut acc = ErrorAccumulator::new(&disc.mesh);
            let (_, stats) = integrate(pb, disc, &grid, settings, |s, d| {
                acc.observe(&disc.mesh, &disc.blocks, exact, s, d);
            })?;
            let e = as_array(&acc.max);
            let orders = match prev {
                Some(p) => {
                    let mut o = [0.0; 4];
                    for i in 0..4 {
                        o[i] = observed_order(p[i], e[i], 2.0)?;
                    }
                    Some(o)
                }
                None => None,
            };
            prev = Some(e);
            rows.push(ConvergenceRow {
                level,
                tau,
                errors: acc.max,
                orders,
                stats,
            });
        }
    }
    Ok(rows)
}

/// Average of the per-level orders at one `tau`.
pub fn average_orders(rows: &[ConvergenceRow], tau: f64) -> Option<[f64; 4]> {
    let orders: Vec<[f64; 4]> = rows.iter().filter(|r| r.tau == tau).filter_map(|r| r.orders).collect();
    if orders.is_empty() {
        return None;
    }
    let mut avg = [0.0; 4];
    for o in &orders {
        for i in 0..4 {
            avg[i] += o[i] / orders.len() as f64;
        }
    }
    Some(avg)
}

/// Table with one row per run and an average-order row per `tau`.
pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut s = String::from(
        "level,tau,pressure_l2,pressure_linf,flux_postproc,flux_normal,order_pressure_l2,order_pressure_linf,order_flux_postproc,order_flux_normal\n",
    );
    let mut taus: Vec<f64> = Vec::new();
    for r in rows {
        if !taus.contains(&r.tau) {
            taus.push(r.tau);
        }
    }
    for &tau in &taus {
        for r in rows.iter().filter(|r| r.tau == tau) {
            let e = as_array(&r.errors);
            let o = r.orders.map_or([String::new(), String::new(), String::new(), String::new()], |o| o.map(|v| format!("{v:.4}")));
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.level,
                sig5(tau),
                sig5(e[0]),
                sig5(e[1]),
                sig5(e[2]),
                sig5(e[3]),
                o[0],
                o[1],
                o[2],
                o[3]
            )
            .unwrap();
        }
        if let Some(a) = average_orders(rows, tau) {
            writeln!(s, "average,{},,,,,{:.4},{:.4},{:.4},{:.4}", sig5(tau), a[0], a[1], a[2], a[3]).unwrap();
        }
    }
    s
}

/// Stencil dump and, optionally, the comparison with assembled rows.
pub fn stencil_command(pb: &ProblemSpec, level: u32, validate: bool) -> Result<(String, Option<StencilReport>)> {
    let disc = Discretization::new(pb, level)?;
    let stencils = build_stencils(&disc.mesh, &disc.perm);
    if let Some(k) = stencils.iter().position(|s| s.is_none()) {
        return Err(crate::error::AssemblyError::VariablePermeability(k).into());
    }
    let report = if validate {
        Some(validate_stencils(&disc.mesh, &stencils, &disc.blocks)?)
    } else {
        None
    };
    Ok((dump(&stencils), report))
}

#[derive(Debug, Clone, Serialize)]
pub struct MeshInfo {
    pub problem: String,
    pub level: u32,
    pub coarse_vertices: usize,
    pub subdomains: usize,
    pub coarse_edges: usize,
    pub elements_per_subdomain: usize,
    pub edges_per_subdomain: usize,
    pub dofs: DofCounts,
    pub domain_area: f64,
    pub diameter: f64,
}

pub fn mesh_info(pb: &ProblemSpec, level: u32) -> Result<MeshInfo> {
    let mesh = HierMesh::refine(pb.coarse.clone(), level)?;
    Ok(MeshInfo {
        problem: pb.name.clone(),
        level,
        coarse_vertices: pb.coarse.vertices.len(),
        subdomains: pb.coarse.num_subdomains(),
        coarse_edges: pb.coarse.edges.len(),
        elements_per_subdomain: mesh.elements_per_subdomain(),
        edges_per_subdomain: mesh.edges_per_subdomain(),
        dofs: mesh.dof_counts(),
        domain_area: pb.coarse.area(),
        diameter: pb.coarse.diameter(),
    })
}

/// Process exit status for an error: 1 usage or input, 2 solver, 3 validation.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Io { .. } => 1,
        Error::Mesh(crate::error::MeshError::Parse { .. }) => 1,
        Error::Mesh(_) | Error::Assembly(_) => 3,
        Error::Solver(crate::error::SolverError::TimeGrid(_)) => 1,
        Error::Solver(_) | Error::Postproc(_) => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_file_round_trip() {
        let coarse = problems::mackinnon_carey_problem().coarse;
        let text = "# linear pressure\nname = lin\nt_final = 2 * 0.5\nk11 = 2\nk22 = 1\ng_d = 1 - x + t  # trailing\np0 = 1 - x\n";
        let pb = parse_data(text, coarse).unwrap();
        assert_eq!(pb.name, "lin");
        assert_eq!(pb.t_final, 1.0);
        assert_eq!((pb.g_d)(Vec2::new(0.25, 0.0), 1.0), 1.75);
        assert_eq!((pb.p0)(Vec2::new(0.25, 0.0)), 0.75);
        assert_eq!((pb.f)(Vec2::new(0.25, 0.0), 1.0), 0.0);
        match &pb.permeability {
            Permeability::Field(k) => assert_eq!(k(Vec2::new(0.1, 0.1)), Mat2::new(2.0, 0.0, 0.0, 1.0)),
            _ => panic!("expected a field"),
        }
        assert!(pb.exact.is_none());
    }

    #[test]
    fn data_file_errors_name_the_line() {
        let coarse = || problems::mackinnon_carey_problem().coarse;
        for (text, needle) in [
            ("f = 1\nbogus = 2\n", "line 2"),
            ("f = 1 +\n", "line 1"),
            ("f = 1\nf = 2\n", "duplicate"),
            ("just text\n", "key = value"),
            ("p_exact = x\n", "together"),
        ] {
            let err = parse_data(text, coarse()).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?}: {err}");
        }
    }

    #[test]
    fn convergence_refuses_problems_without_exact_solution() {
        let pb = problems::low_perm_regions_problem();
        let err = run_convergence(&pb, &[1], &[0.5], &SolverSettings::default()).unwrap_err();
        assert_eq!(exit_code(&err), 1);
        assert!(err.to_string().contains("exact"));
    }

    #[test]
    fn convergence_table_layout() {
        let pb = problems::mackinnon_carey_problem();
        let rows = run_convergence(&pb, &[1, 2], &[0.5], &SolverSettings::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].orders.is_none() && rows[1].orders.is_some());
        let csv = convergence_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("average,5.0000e-1"));
        assert_eq!(lines[1].split(',').count(), 10);
    }

    #[test]
    fn mesh_info_counts_match() {
        let pb = problems::holes_domain_problem();
        let info = mesh_info(&pb, 2).unwrap();
        assert_eq!(info.subdomains, 20);
        assert_eq!(info.dofs.n_w, 20 * 16);
        assert!((info.domain_area - 0.84).abs() < 1e-12);
    }

    #[test]
    fn stencil_command_refuses_variable_permeability() {
        let mut pb = problems::smooth_polygon_problem();
        pb.permeability = Permeability::Field(Arc::new(|x: Vec2| Mat2::identity() * (1.0 + x.x)));
        let err = stencil_command(&pb, 2, false).unwrap_err();
        assert_eq!(exit_code(&err), 3);
        let (text, report) = stencil_command(&problems::smooth_polygon_problem(), 2, true).unwrap();
        assert!(text.contains("subdomain 8"));
        assert!(report.unwrap().max_relative <= 1e-12);
    }
}
