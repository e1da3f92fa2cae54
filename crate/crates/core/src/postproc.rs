//! Flux recovery, linear post-processing and discrete error norms.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::assembly::{RhsData, SchurBlocks};
use crate::error::PostprocError;
use crate::mesh::HierMesh;
use crate::problems::ExactSolution;
use crate::reference::{Orientation, Vec2};
use crate::solver::SolverState;

/// Normal fluxes at one time level, one value per velocity DOF, oriented by
/// [`HierMesh::dof_normal`].
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredFlux {
    pub t: f64,
    pub u: DVector<f64>,
}

pub fn recover_flux(blocks: &SchurBlocks, state: &SolverState, data: &RhsData) -> RecoveredFlux {
    RecoveredFlux {
        t: state.t,
        u: blocks.recover_flux(&state.p, &state.lambda, &data.g_d),
    }
}

/// Linear vector field `a + B (x − c) / h` on one element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearField {
    pub center: Vec2,
    pub scale: f64,
    pub coeffs: [f64; 6],
}

impl LinearField {
    pub fn eval(&self, x: Vec2) -> Vec2 {
        let z = (x - self.center) / self.scale;
        let c = &self.coeffs;
        Vec2::new(c[0] + c[1] * z.x + c[2] * z.y, c[3] + c[4] * z.x + c[5] * z.y)
    }
}

/// How the field on one element is reconstructed.
#[derive(Debug, Clone)]
enum Recipe {
    /// Least squares over the listed DOFs; `pinv` is 6 × dofs.len().
    Fit { dofs: Vec<usize>, pinv: usize },
    /// Lowest-order Raviart–Thomas field of the element itself.
    Rt0,
}

/// Precomputed least-squares reconstruction of a piecewise linear velocity
/// from normal fluxes on the element and its edge neighbors.
#[derive(Debug, Clone)]
pub struct PostProcessor {
    recipes: Vec<Recipe>,
    pinvs: Vec<DMatrix<f64>>,
    centers: Vec<Vec2>,
    scales: Vec<f64>,
}

const RANK_TOL: f64 = 1e-10;

fn constraint_dofs(mesh: &HierMesh, elem: usize) -> Vec<usize> {
    let own = mesh.element_dofs(elem);
    let mut dofs = own.to_vec();
    for m in 0..3 {
        if let Some(nb) = mesh.neighbor(elem, m) {
            let shared_edge = mesh.dof_edge(own[m]);
            for d in mesh.element_dofs(nb) {
                if mesh.dof_edge(d) != shared_edge {
                    dofs.push(d);
                }
            }
        }
    }
    dofs
}

/// One DOF per distinct edge of the elements within two neighbor steps.
fn two_ring_dofs(mesh: &HierMesh, elem: usize) -> Vec<usize> {
    let mut elems = vec![elem];
    for _ in 0..2 {
        let frontier = elems.clone();
        for e in frontier {
            for m in 0..3 {
                if let Some(nb) = mesh.neighbor(e, m) {
                    if !elems.contains(&nb) {
                        elems.push(nb);
                    }
                }
            }
        }
    }
    let mut edges = Vec::new();
    let mut dofs = Vec::new();
    for e in elems {
        for d in mesh.element_dofs(e) {
            let edge = mesh.dof_edge(d);
            if !edges.contains(&edge) {
                edges.push(edge);
                dofs.push(d);
            }
        }
    }
    dofs
}

fn design_matrix(mesh: &HierMesh, dofs: &[usize], center: Vec2, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(dofs.len(), 6, |r, c| {
        let d = dofs[r];
        let z = (mesh.dof_midpoint(d) - center) / scale;
        let nrm = mesh.dof_normal(d);
        let basis = [1.0, z.x, z.y];
        if c < 3 {
            nrm.x * basis[c]
        } else {
            nrm.y * basis[c - 3]
        }
    })
}

fn pseudo_inverse(a: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.iter().filter(|&&s| s > RANK_TOL * smax).count() < 6 {
        return None;
    }
    svd.pseudo_inverse(RANK_TOL * smax).ok()
}

impl PostProcessor {
    pub fn new(mesh: &HierMesh) -> Self {
        let ne = mesh.num_elements();
        let mut recipes = Vec::with_capacity(ne);
        let mut pinvs = Vec::new();
        let mut centers = Vec::with_capacity(ne);
        let mut scales = Vec::with_capacity(ne);
        // interior elements of one subdomain and orientation share their matrix
        let mut shared: std::collections::HashMap<(usize, bool), usize> = Default::default();
        for elem in 0..ne {
            let center = mesh.element_centroid(elem);
            let scale = mesh.element_area(elem).sqrt();
            centers.push(center);
            scales.push(scale);
            let dofs = constraint_dofs(mesh, elem);
            let k = mesh.element_subdomain(elem);
            let key = mesh
                .is_interior(elem)
                .then(|| (k, mesh.element_orientation(elem) == Orientation::Up));
            if let Some(&idx) = key.as_ref().and_then(|key| shared.get(key)) {
                recipes.push(Recipe::Fit { dofs, pinv: idx });
                continue;
            }
            let fit = pseudo_inverse(design_matrix(mesh, &dofs, center, scale)).map(|p| (dofs, p)).or_else(|| {
                // near the boundary the one-ring can be degenerate: widen to two rings
                let wide = two_ring_dofs(mesh, elem);
                pseudo_inverse(design_matrix(mesh, &wide, center, scale)).map(|p| (wide, p))
            });
            match fit {
                Some((dofs, p)) => {
                    pinvs.push(p);
                    let idx = pinvs.len() - 1;
                    if let Some(key) = key {
                        shared.insert(key, idx);
                    }
                    recipes.push(Recipe::Fit { dofs, pinv: idx });
                }
                None => recipes.push(Recipe::Rt0),
            }
        }
        PostProcessor {
            recipes,
            pinvs,
            centers,
            scales,
        }
    }

    /// Number of elements reconstructed with the element's own fluxes only.
    pub fn fallback_count(&self) -> usize {
        self.recipes.iter().filter(|r| matches!(r, Recipe::Rt0)).count()
    }

    pub fn field(&self, mesh: &HierMesh, flux: &DVector<f64>, elem: usize) -> LinearField {
        let center = self.centers[elem];
        let scale = self.scales[elem];
        match &self.recipes[elem] {
            Recipe::Fit { dofs, pinv } => {
                let rhs = DVector::from_iterator(dofs.len(), dofs.iter().map(|&d| flux[d]));
                let c = &self.pinvs[*pinv] * rhs;
                LinearField {
                    center,
                    scale,
                    coeffs: [c[0], c[1], c[2], c[3], c[4], c[5]],
                }
            }
            Recipe::Rt0 => rt0_field(mesh, flux, elem, center, scale),
        }
    }

    pub fn fields(&self, mesh: &HierMesh, flux: &DVector<f64>) -> Vec<LinearField> {
        (0..self.recipes.len()).map(|e| self.field(mesh, flux, e)).collect()
    }
}

/// `Σ σ U_i l_i / (2|T|) (x − r_i)`, written in the scaled coordinates.
fn rt0_field(mesh: &HierMesh, flux: &DVector<f64>, elem: usize, center: Vec2, scale: f64) -> LinearField {
    let v = mesh.element_vertices(elem);
    let area = mesh.element_area(elem);
    let sigma = mesh.element_orientation(elem).sign();
    let dofs = mesh.element_dofs(elem);
    let mut a = Vec2::zeros();
    let mut s = 0.0;
    for m in 0..3 {
        let w = sigma * flux[dofs[m]] * mesh.dof_length(dofs[m]) / (2.0 * area);
        a += (center - v[m]) * w;
        s += w;
    }
    // u(x) = a + s (x − c) = a + s h z
    LinearField {
        center,
        scale,
        coeffs: [a.x, s * scale, 0.0, a.y, 0.0, s * scale],
    }
}

/// Discrete errors at one time level.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ErrorNorms {
    /// Area-weighted ℓ² error of the element pressures against centroid values.
    pub pressure: f64,
    /// Largest pressure error at a centroid.
    pub pressure_max: f64,
    /// Weighted ℓ² error of the normal fluxes against edge-midpoint values.
    pub flux: f64,
    /// Centroid-rule L² error of the post-processed velocity.
    pub postproc: f64,
}

pub fn pressure_max_error(mesh: &HierMesh, p: &DVector<f64>, exact: &ExactSolution, t: f64) -> f64 {
    (0..mesh.num_elements())
        .map(|e| (p[e] - (exact.p)(mesh.element_centroid(e), t)).abs())
        .fold(0.0, f64::max)
}

pub fn pressure_error(mesh: &HierMesh, p: &DVector<f64>, exact: &ExactSolution, t: f64) -> f64 {
    (0..mesh.num_elements())
        .map(|e| {
            let d = p[e] - (exact.p)(mesh.element_centroid(e), t);
            mesh.element_area(e) * d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Quadrature weight of a velocity DOF: a third of the adjacent element areas
/// in its own subdomain.
pub fn flux_weight(mesh: &HierMesh, dof: usize) -> f64 {
    let (up, down) = mesh.dof_elements(dof);
    (mesh.element_area(up) + down.map_or(0.0, |d| mesh.element_area(d))) / 3.0
}

pub fn flux_error(mesh: &HierMesh, u: &DVector<f64>, exact: &ExactSolution, t: f64) -> f64 {
    (0..mesh.num_dofs())
        .map(|d| {
            let e = u[d] - (exact.u)(mesh.dof_midpoint(d), t).dot(&mesh.dof_normal(d));
            flux_weight(mesh, d) * e * e
        })
        .sum::<f64>()
        .sqrt()
}

pub fn postproc_error(mesh: &HierMesh, fields: &[LinearField], exact: &ExactSolution, t: f64) -> f64 {
    (0..mesh.num_elements())
        .map(|e| {
            let c = mesh.element_centroid(e);
            mesh.element_area(e) * (fields[e].eval(c) - (exact.u)(c, t)).norm_squared()
        })
        .sum::<f64>()
        .sqrt()
}

/// `log(e_coarse / e_fine) / log(ratio)`.
pub fn observed_order(e_coarse: f64, e_fine: f64, ratio: f64) -> Result<f64, PostprocError> {
    if !(e_coarse > 0.0 && e_fine > 0.0) {
        return Err(PostprocError::NonPositiveError(e_coarse, e_fine));
    }
    Ok((e_coarse / e_fine).ln() / ratio.ln())
}

/// Running maximum over time levels of the three error norms.
#[derive(Debug, Clone)]
pub struct ErrorAccumulator {
    post: PostProcessor,
    pub max: ErrorNorms,
    pub last: ErrorNorms,
    pub levels: usize,
}

impl ErrorAccumulator {
    pub fn new(mesh: &HierMesh) -> Self {
        ErrorAccumulator {
            post: PostProcessor::new(mesh),
            max: ErrorNorms::default(),
            last: ErrorNorms::default(),
            levels: 0,
        }
    }

    pub fn postprocessor(&self) -> &PostProcessor {
        &self.post
    }

    /// Measure the errors at one level; `n = 0` is skipped.
    pub fn observe(
        &mut self,
        mesh: &HierMesh,
        blocks: &SchurBlocks,
        exact: &ExactSolution,
        state: &SolverState,
        data: &RhsData,
    ) -> Option<ErrorNorms> {
        if state.n == 0 {
            return None;
        }
        let flux = recover_flux(blocks, state, data);
        let fields = self.post.fields(mesh, &flux.u);
        let e = ErrorNorms {
            pressure: pressure_error(mesh, &state.p, exact, state.t),
            pressure_max: pressure_max_error(mesh, &state.p, exact, state.t),
            flux: flux_error(mesh, &flux.u, exact, state.t),
            postproc: postproc_error(mesh, &fields, exact, state.t),
        };
        self.max.pressure = self.max.pressure.max(e.pressure);
        self.max.pressure_max = self.max.pressure_max.max(e.pressure_max);
        self.max.flux = self.max.flux.max(e.flux);
        self.max.postproc = self.max.postproc.max(e.postproc);
        self.last = e;
        self.levels += 1;
        Some(e)
    }
}
