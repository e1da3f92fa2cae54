//! Reference-element kernel: lowest-order Raviart–Thomas basis on the
//! equilateral reference triangle, affine maps, the Piola transform and the
//! quadrature rules used by assembly and error evaluation.
//!
//! The reference triangle has vertices `(-1, 0)`, `(1, 0)` and `(0, sqrt 3)`.
//! Reference edge `m` is the side opposite vertex `m`, and basis function `m`
//! has unit outward normal component on that edge and zero on the others.

use nalgebra::{Matrix2, Vector2};

use crate::error::AssemblyError;

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

pub const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Area of the reference triangle.
pub const REF_AREA: f64 = SQRT3;

pub fn ref_vertices() -> [Vec2; 3] {
    [Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, SQRT3)]
}

pub fn ref_centroid() -> Vec2 {
    let [a, b, c] = ref_vertices();
    (a + b + c) / 3.0
}

/// Midpoints of the reference edges, edge `m` opposite vertex `m`.
pub fn ref_edge_midpoints() -> [Vec2; 3] {
    let [a, b, c] = ref_vertices();
    [(b + c) * 0.5, (a + c) * 0.5, (a + b) * 0.5]
}

/// Evaluate reference basis function `m` (0-based) at `x`.
#[inline]
pub fn ref_basis(m: usize, x: Vec2) -> Vec2 {
    let r = ref_vertices()[m];
    (x - r) / SQRT3
}

/// Divergence of every reference basis function.
pub const REF_BASIS_DIV: f64 = 2.0 / SQRT3;

/// Element orientation inside a three-line mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Orientation {
    Up,
    Down,
}

impl Orientation {
    /// Sign of the global edge normals relative to the element's outward normals.
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Up => 1.0,
            Orientation::Down => -1.0,
        }
    }
}

/// Affine map `x = B x̂ + b` from the reference triangle onto a physical one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub b: Mat2,
    pub shift: Vec2,
    /// `|det B|`.
    pub jac: f64,
}

impl AffineMap {
    /// Build the map sending the reference vertices to `v` in order.
    pub fn new(v: [Vec2; 3]) -> Result<Self, AssemblyError> {
        let b = Mat2::new(
            (v[1].x - v[0].x) / 2.0,
            (2.0 * v[2].x - v[1].x - v[0].x) / (2.0 * SQRT3),
            (v[1].y - v[0].y) / 2.0,
            (2.0 * v[2].y - v[1].y - v[0].y) / (2.0 * SQRT3),
        );
        let shift = Vec2::new((v[0].x + v[1].x) / 2.0, (v[0].y + v[1].y) / 2.0);
        let jac = b.determinant().abs();
        let diam = (v[1] - v[0])
            .norm()
            .max((v[2] - v[1]).norm())
            .max((v[0] - v[2]).norm());
        if !(jac > 1e-14 * diam * diam) {
            return Err(AssemblyError::DegenerateElement(jac));
        }
        Ok(AffineMap { b, shift, jac })
    }

    pub fn apply(&self, xhat: Vec2) -> Vec2 {
        self.b * xhat + self.shift
    }

    pub fn inverse_apply(&self, x: Vec2) -> Vec2 {
        self.b.try_inverse().expect("nondegenerate map") * (x - self.shift)
    }

    /// Piola transform of a reference vector: `(1/J) B v̂`.
    pub fn piola(&self, vhat: Vec2) -> Vec2 {
        self.b * vhat / self.jac
    }

    /// Inverse Piola transform: `J B⁻¹ v`.
    pub fn piola_inverse(&self, v: Vec2) -> Vec2 {
        self.b.try_inverse().expect("nondegenerate map") * v * self.jac
    }
}

/// Vertex/centroid rule on the reference triangle for a pairing of two vector
/// fields: `(|T̂|/6)(Σ q̂(r̂ᵢ)·v̂(r̂ᵢ) + 3 q̂(x̂c)·v̂(x̂c))`.
pub fn quad_vertex_center(q: impl Fn(Vec2) -> Vec2, v: impl Fn(Vec2) -> Vec2) -> f64 {
    let xc = ref_centroid();
    let s: f64 = ref_vertices().iter().map(|&r| q(r).dot(&v(r))).sum();
    REF_AREA / 6.0 * (s + 3.0 * q(xc).dot(&v(xc)))
}

/// Edge-midpoint rule `(|T|/3) Σ g(xₘ)` on a physical triangle; exact for quadratics.
pub fn quad_midpoint_element(g: impl Fn(Vec2) -> f64, tri: [Vec2; 3]) -> f64 {
    let area = triangle_area(tri);
    let m = [
        (tri[1] + tri[2]) * 0.5,
        (tri[0] + tri[2]) * 0.5,
        (tri[0] + tri[1]) * 0.5,
    ];
    area / 3.0 * (g(m[0]) + g(m[1]) + g(m[2]))
}

/// Edge-midpoint rule on the reference triangle.
pub fn quad_midpoint_reference(g: impl Fn(Vec2) -> f64) -> f64 {
    let m = ref_edge_midpoints();
    REF_AREA / 3.0 * (g(m[0]) + g(m[1]) + g(m[2]))
}

/// Simpson's rule on the segment `[a, b]`.
pub fn simpson_edge(g: impl Fn(Vec2) -> f64, a: Vec2, b: Vec2) -> f64 {
    let len = (b - a).norm();
    len / 6.0 * (g(a) + 4.0 * g((a + b) * 0.5) + g(b))
}

pub fn signed_area(tri: [Vec2; 3]) -> f64 {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    0.5 * (e1.x * e2.y - e1.y * e2.x)
}

pub fn triangle_area(tri: [Vec2; 3]) -> f64 {
    signed_area(tri).abs()
}

/// Coefficient table `a[l][m] = (J/4) ∫_T̂ v̂ₗᵀ B⁻¹ K B⁻ᵀ v̂ₘ dx̂`.
///
/// The integrand is quadratic, so the edge-midpoint rule integrates it exactly.
pub fn coefficient_table(b: &Mat2, jac: f64, k: &Mat2) -> [[f64; 3]; 3] {
    let binv = b.try_inverse().expect("nondegenerate map");
    let kt = binv * k * binv.transpose();
    let mut a = [[0.0; 3]; 3];
    for l in 0..3 {
        for m in l..3 {
            let val = jac / 4.0 * quad_midpoint_reference(|x| ref_basis(l, x).dot(&(kt * ref_basis(m, x))));
            a[l][m] = val;
            a[m][l] = val;
        }
    }
    a
}

/// `true` when `k` is symmetric positive definite.
pub fn is_spd(k: &Mat2) -> bool {
    let sym = (k[(0, 1)] - k[(1, 0)]).abs() <= 1e-14 * k.amax().max(f64::MIN_POSITIVE);
    sym && k[(0, 0)] > 0.0 && k.determinant() > 0.0
}
