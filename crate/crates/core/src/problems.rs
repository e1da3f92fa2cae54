//! Built-in test problems and their coarse meshes.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::assembly::Permeability;
use crate::mesh::CoarseMesh;
use crate::reference::{Mat2, Vec2};

pub type SpaceTimeFn = Arc<dyn Fn(Vec2, f64) -> f64 + Send + Sync>;
pub type SpaceFn = Arc<dyn Fn(Vec2) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(Vec2, f64) -> Vec2 + Send + Sync>;

/// Closed-form solution used for error measurement.
#[derive(Clone)]
pub struct ExactSolution {
    pub p: SpaceTimeFn,
    pub u: VectorFn,
}

/// Everything needed to set up one run.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub coarse: CoarseMesh,
    pub permeability: Permeability,
    pub f: SpaceTimeFn,
    pub p0: SpaceFn,
    pub g_d: SpaceTimeFn,
    pub g_n: SpaceTimeFn,
    pub t_final: f64,
    pub exact: Option<ExactSolution>,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("subdomains", &self.coarse.num_subdomains())
            .field("t_final", &self.t_final)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

pub const SMOOTH_MESH: &str = include_str!("../fixtures/smooth7gon.mesh");
pub const MC_MESH: &str = include_str!("../fixtures/mackinnon-carey.mesh");
pub const LOWPERM_MESH: &str = include_str!("../fixtures/lowperm.mesh");
pub const HOLES_MESH: &str = include_str!("../fixtures/holes.mesh");

pub const NAMES: [&str; 4] = ["smooth7gon", "mackinnon-carey", "lowperm", "holes"];

fn fixture(text: &str) -> CoarseMesh {
    CoarseMesh::parse(text.as_bytes()).expect("shipped fixture is valid")
}

fn zero() -> SpaceTimeFn {
    Arc::new(|_, _| 0.0)
}

/// Look up a built-in problem by name.
pub fn by_name(name: &str) -> Option<ProblemSpec> {
    match name {
        "smooth7gon" => Some(smooth_polygon_problem()),
        "mackinnon-carey" => Some(mackinnon_carey_problem()),
        "lowperm" => Some(low_perm_regions_problem()),
        "holes" => Some(holes_domain_problem()),
        _ => None,
    }
}

/// `p = sin(πt) sin(πx) sin(πy)` with a full constant tensor on a 7-sided polygon.
pub fn smooth_polygon_problem() -> ProblemSpec {
    let k = Mat2::new(2.0, 1.0, 1.0, 2.0);
    let p: SpaceTimeFn = Arc::new(|x: Vec2, t| (PI * t).sin() * (PI * x.x).sin() * (PI * x.y).sin());
    let u: VectorFn = Arc::new(move |x: Vec2, t| {
        let st = (PI * t).sin();
        let grad = Vec2::new(
            PI * st * (PI * x.x).cos() * (PI * x.y).sin(),
            PI * st * (PI * x.x).sin() * (PI * x.y).cos(),
        );
        -(k * grad)
    });
    let f: SpaceTimeFn = Arc::new(|x: Vec2, t| {
        let (sx, sy) = ((PI * x.x).sin(), (PI * x.y).sin());
        let (cx, cy) = ((PI * x.x).cos(), (PI * x.y).cos());
        PI * (PI * t).cos() * sx * sy + 4.0 * PI * PI * (PI * t).sin() * sx * sy
            - 2.0 * PI * PI * (PI * t).sin() * cx * cy
    });
    ProblemSpec {
        name: "smooth7gon".into(),
        coarse: fixture(SMOOTH_MESH),
        permeability: Permeability::Uniform(k),
        f,
        p0: Arc::new(|_| 0.0),
        g_d: p.clone(),
        g_n: zero(),
        t_final: 2.0,
        exact: Some(ExactSolution { p, u }),
    }
}

/// Coefficients `(a1, b1, a2, b2, c2)` of the piecewise quadratic profile.
pub fn mackinnon_carey_coefficients(k1: f64, k2: f64) -> [f64; 5] {
    let a1 = -1.0 / k1;
    let a2 = -1.0 / k2;
    let b1 = -(3.0 * a2 + a1) / 4.0 * k2 / (k1 + k2);
    let b2 = k1 / k2 * b1;
    let c2 = -b2 - a2 / 2.0;
    [a1, b1, a2, b2, c2]
}

/// Piecewise quadratic solution across a permeability jump at `x = 1/2`.
pub fn mackinnon_carey_problem() -> ProblemSpec {
    let (k1, k2) = (1.0, 2.0);
    let [a1, b1, a2, b2, c2] = mackinnon_carey_coefficients(k1, k2);
    let kval = move |x: f64| if x <= 0.5 { k1 } else { k2 };
    let profile = move |x: f64| {
        if x <= 0.5 {
            a1 * x * x / 2.0 + b1 * x
        } else {
            a2 * x * x / 2.0 + b2 * x + c2
        }
    };
    let slope = move |x: f64| if x <= 0.5 { a1 * x + b1 } else { a2 * x + b2 };
    let p: SpaceTimeFn = Arc::new(move |x: Vec2, t| t * t * profile(x.x));
    let u: VectorFn = Arc::new(move |x: Vec2, t| Vec2::new(-kval(x.x) * t * t * slope(x.x), 0.0));
    // -d/dx(k p_x) = -k a t^2 = t^2 on both sides
    let f: SpaceTimeFn = Arc::new(move |x: Vec2, t| 2.0 * t * profile(x.x) + t * t);
    ProblemSpec {
        name: "mackinnon-carey".into(),
        coarse: fixture(MC_MESH),
        permeability: Permeability::Field(Arc::new(move |x: Vec2| Mat2::identity() * kval(x.x))),
        f,
        p0: Arc::new(|_| 0.0),
        g_d: p.clone(),
        g_n: zero(),
        t_final: 3.0,
        exact: Some(ExactSolution { p, u }),
    }
}

/// Inside test for the two low-permeability strips.
pub fn in_low_perm_region(x: Vec2) -> bool {
    let r1 = x.x > 0.2 && x.x < 0.3 && x.y > 0.0 && x.y < 0.8;
    let r2 = x.x > 0.6 && x.x < 0.7 && x.y > 0.3 && x.y < 1.0;
    r1 || r2
}

/// Flow through the unit square with two nearly impermeable strips.
pub fn low_perm_regions_problem() -> ProblemSpec {
    ProblemSpec {
        name: "lowperm".into(),
        coarse: fixture(LOWPERM_MESH),
        permeability: Permeability::Field(Arc::new(|x: Vec2| {
            Mat2::identity() * if in_low_perm_region(x) { 1e-6 } else { 1.0 }
        })),
        f: zero(),
        p0: Arc::new(|x: Vec2| 1.0 - x.x),
        g_d: Arc::new(|x: Vec2, _| 1.0 - x.x),
        g_n: zero(),
        t_final: 5.0,
        exact: None,
    }
}

/// Flow around two rectangular holes with no-flux walls.
pub fn holes_domain_problem() -> ProblemSpec {
    ProblemSpec {
        name: "holes".into(),
        coarse: fixture(HOLES_MESH),
        permeability: Permeability::Uniform(Mat2::identity()),
        f: zero(),
        p0: Arc::new(|x: Vec2| 1.0 - x.x),
        g_d: Arc::new(|x: Vec2, _| 1.0 - x.x),
        g_n: zero(),
        t_final: 5.0,
        exact: None,
    }
}

/// Steady constant pressure `c` on an arbitrary coarse mesh.
pub fn constant_problem(coarse: CoarseMesh, permeability: Permeability, c: f64, t_final: f64) -> ProblemSpec {
    ProblemSpec {
        name: "constant".into(),
        coarse,
        permeability,
        f: zero(),
        p0: Arc::new(move |_| c),
        g_d: Arc::new(move |_, _| c),
        g_n: zero(),
        t_final,
        exact: Some(ExactSolution {
            p: Arc::new(move |_, _| c),
            u: Arc::new(|_, _| Vec2::zeros()),
        }),
    }
}
