use thiserror::Error;

/// Errors raised while loading or validating meshes and problem data.
#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("degenerate triangle {index} (vertices {vertices:?})")]
    DegenerateTriangle { index: usize, vertices: [usize; 3] },
    #[error("nonconforming edge ({0}, {1}): shared by more than two triangles")]
    NonconformingEdge(usize, usize),
    #[error("boundary edge ({0}, {1}) has no boundary marker")]
    UnmarkedBoundaryEdge(usize, usize),
    #[error("boundary marker on edge ({0}, {1}) which is not a boundary edge")]
    MisplacedMarker(usize, usize),
    #[error("vertex index {index} out of range in {context}")]
    VertexOutOfRange { index: usize, context: String },
    #[error("interface edge of subdomains {0} and {1} does not match geometrically")]
    InterfaceMismatch(usize, usize),
    #[error("structured index out of range: subdomain {subdomain}, (i, j, m) = ({i}, {j}, {m})")]
    IndexOutOfRange {
        subdomain: usize,
        i: usize,
        j: usize,
        m: usize,
    },
}

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("permeability is not symmetric positive definite on subdomain {subdomain}, element {element}")]
    NotSpd { subdomain: usize, element: usize },
    #[error("degenerate element: jacobian {0:e}")]
    DegenerateElement(f64),
    #[error("permeability varies inside subdomain {0}; no constant stencil exists")]
    VariablePermeability(usize),
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("conjugate gradient did not converge: residual {residual:e} after {iterations} iterations (target {target:e})")]
    NoConvergence {
        residual: f64,
        iterations: usize,
        target: f64,
    },
    #[error("factorization of subdomain block {block} failed")]
    Factorization { block: usize },
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<SolverError>,
    },
    #[error("invalid time grid: {0}")]
    TimeGrid(String),
}

#[derive(Debug, Error)]
pub enum PostprocError {
    #[error("observed order needs positive errors, got {0:e} and {1:e}")]
    NonPositiveError(f64, f64),
}

/// Top-level error for the library and CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Postproc(#[from] PostprocError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
