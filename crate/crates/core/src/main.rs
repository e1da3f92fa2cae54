use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hmfe::problems::ProblemSpec;
use hmfe::runner::{self, RunConfig, Source, TimeSpec, WriteFields};
use hmfe::solver::SolverSettings;
use hmfe::{Error, Result};

const STENCIL_TOL: f64 = 1e-12;

#[derive(Parser)]
#[command(name = "hmfe", version, about = "Mixed finite elements on hierarchical triangular grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one problem in time and write fields and a summary
    Solve(SolveArgs),
    /// Error table over refinement levels and time steps
    Convergence(ConvergenceArgs),
    /// Print the per-subdomain stencils
    Stencil(StencilArgs),
    /// Mesh and degree-of-freedom counts
    MeshInfo(MeshInfoArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "source")]
struct SourceArgs {
    /// Built-in problem: smooth7gon, mackinnon-carey, lowperm, holes
    #[arg(long)]
    problem: Option<String>,
    /// Coarse mesh file (needs --data)
    #[arg(long, requires = "data")]
    mesh: Option<PathBuf>,
}

#[derive(Args)]
struct Common {
    #[command(flatten)]
    source: SourceArgs,
    /// Problem data file of `key = expression` lines
    #[arg(long, requires = "mesh")]
    data: Option<PathBuf>,
    /// Override the final time
    #[arg(long)]
    t_final: Option<f64>,
    /// Relative tolerance of the interface solves
    #[arg(long, default_value_t = 1e-10, value_parser = parse_tol)]
    tol: f64,
    /// Worker threads (default: available parallelism)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct TimeArgs {
    /// Time step
    #[arg(long)]
    tau: Option<f64>,
    /// Number of time steps
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldsArg {
    Final,
    All,
    None,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 3)]
    level: u32,
    #[command(flatten)]
    time: TimeArgs,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "final")]
    write_fields: FieldsArg,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    common: Common,
    /// Levels, e.g. `1..5` or `3,4,5`
    #[arg(long, default_value = "1..4", value_parser = parse_levels)]
    levels: Levels,
    /// Comma-separated time steps
    #[arg(long, value_delimiter = ',', required = true)]
    tau: Vec<f64>,
    /// Output directory for convergence.csv
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StencilArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 2)]
    level: u32,
    /// Compare the stencils with the assembled matrix
    #[arg(long)]
    validate: bool,
}

#[derive(Args)]
struct MeshInfoArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0)]
    level: u32,
}

#[derive(Clone)]
struct Levels(Vec<u32>);

fn parse_levels(s: &str) -> std::result::Result<Levels, String> {
    let bad = || format!("expected a range like 1..5 or a list like 3,4,5, got '{s}'");
    let levels: Vec<u32> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u32, u32) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..=b).collect()
    } else {
        s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect::<std::result::Result<_, _>>()?
    };
    if levels.is_empty() {
        return Err(bad());
    }
    Ok(Levels(levels))
}

fn parse_tol(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: '{s}'"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("tolerance must lie in (0, 1), got {v}"))
    }
}

impl Common {
    fn source(&self) -> Source {
        match (&self.source.problem, &self.source.mesh, &self.data) {
            (Some(name), _, _) => Source::Named(name.clone()),
            (None, Some(mesh), Some(data)) => Source::Files {
                mesh: mesh.clone(),
                data: data.clone(),
            },
            _ => unreachable!("clap enforces the source group"),
        }
    }

    fn problem(&self) -> Result<ProblemSpec> {
        let mut pb = runner::load_problem(&self.source())?;
        if let Some(tf) = self.t_final {
            pb.t_final = tf;
        }
        Ok(pb)
    }

    fn settings(&self) -> SolverSettings {
        SolverSettings {
            tol: self.tol,
            ..SolverSettings::default()
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Solve(a) => {
            let cfg = RunConfig {
                source: a.common.source(),
                level: a.level,
                time: match (a.time.tau, a.time.steps) {
                    (Some(t), _) => TimeSpec::Tau(t),
                    (None, Some(n)) => TimeSpec::Steps(n),
                    _ => unreachable!("clap enforces the time group"),
                },
                t_final: a.common.t_final,
                settings: a.common.settings(),
                out: Some(a.out.clone()),
                write_fields: match a.write_fields {
                    FieldsArg::Final => WriteFields::Final,
                    FieldsArg::All => WriteFields::All,
                    FieldsArg::None => WriteFields::None,
                },
            };
            let s = runner::run_solve(&cfg)?;
            println!(
                "{} level {}: {} steps of {}, N_W = {}, N_L = {}",
                s.problem, s.level, s.grid.steps, s.grid.tau, s.dofs.n_w, s.dofs.n_l
            );
            println!(
                "interface iterations: total {}, max per step {}; max constraint residual {:.3e}; {:.2} s",
                s.stats.cg_iterations_total, s.stats.cg_iterations_max, s.stats.max_constraint_residual, s.stats.wall_seconds
            );
            if let Some(e) = s.errors {
                println!(
                    "errors: pressure l2 {:.4e}, pressure max {:.4e}, post-processed flux {:.4e}, normal flux {:.4e}",
                    e.pressure, e.pressure_max, e.postproc, e.flux
                );
            }
            println!("summary written to {}", a.out.join("summary.json").display());
        }
        Command::Convergence(a) => {
            let pb = a.common.problem()?;
            let rows = runner::run_convergence(&pb, &a.levels.0, &a.tau, &a.common.settings())?;
            let csv = runner::convergence_csv(&rows);
            print!("{csv}");
            if let Some(dir) = &a.out {
                std::fs::create_dir_all(dir).map_err(|source| Error::Io {
                    path: dir.display().to_string(),
                    source,
                })?;
                hmfe::output::write_file(&dir.join("convergence.csv"), &csv)?;
            }
        }
        Command::Stencil(a) => {
            let pb = a.common.problem()?;
            let (text, report) = runner::stencil_command(&pb, a.level, a.validate)?;
            print!("{text}");
            if let Some(r) = report {
                println!("rows checked: {}, max relative discrepancy: {:.3e}", r.rows_checked, r.max_relative);
                if !(r.max_relative <= STENCIL_TOL) {
                    eprintln!("stencil validation failed: worst row {:?}", r.worst);
                    return Ok(ExitCode::from(3));
                }
            }
        }
        Command::MeshInfo(a) => {
            let pb = a.common.problem()?;
            let info = runner::mesh_info(&pb, a.level)?;
            println!("{}", serde_json::to_string_pretty(&info).expect("serializable"));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let threads = match &cli.command {
        Command::Solve(a) => a.common.threads,
        Command::Convergence(a) => a.common.threads,
        Command::Stencil(a) => a.common.threads,
        Command::MeshInfo(a) => a.common.threads,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(runner::exit_code(&e) as u8)
        }
    }
}
