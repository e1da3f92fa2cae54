//! Discrete operators, right-hand sides and the reduced (Schur) system.

use std::sync::Arc;

use nalgebra::DVector;
use nalgebra_sparse::CsrMatrix;
use rayon::prelude::*;

use crate::error::AssemblyError;
use crate::mesh::{EdgeClass, HierMesh};
use crate::problems::ProblemSpec;
use crate::reference::{coefficient_table, is_spd, quad_midpoint_element, simpson_edge, Mat2, Vec2, SQRT3};
use crate::sparse::{self, block_diag, from_triplets, spmv, vstack};

/// How the permeability tensor is given.
#[derive(Clone)]
pub enum Permeability {
    Uniform(Mat2),
    PerSubdomain(Vec<Mat2>),
    /// Evaluated at element centroids.
    Field(Arc<dyn Fn(Vec2) -> Mat2 + Send + Sync>),
}

impl std::fmt::Debug for Permeability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Permeability::Uniform(k) => write!(f, "Uniform({k:?})"),
            Permeability::PerSubdomain(v) => write!(f, "PerSubdomain({} tensors)", v.len()),
            Permeability::Field(_) => write!(f, "Field"),
        }
    }
}

/// Permeability tensor per element with a per-subdomain constancy flag.
#[derive(Debug, Clone)]
pub struct PermeabilityField {
    values: Vec<Mat2>,
    constant: Vec<Option<Mat2>>,
}

impl PermeabilityField {
    pub fn new(mesh: &HierMesh, perm: &Permeability) -> Result<Self, AssemblyError> {
        let ne = mesh.elements_per_subdomain();
        let mut values = Vec::with_capacity(mesh.num_elements());
        for e in 0..mesh.num_elements() {
            let k = mesh.element_subdomain(e);
            let kt = match perm {
                Permeability::Uniform(k) => *k,
                Permeability::PerSubdomain(v) => v[k],
                Permeability::Field(f) => f(mesh.element_centroid(e)),
            };
            if !is_spd(&kt) {
                return Err(AssemblyError::NotSpd {
                    subdomain: k,
                    element: e,
                });
            }
            values.push(kt);
        }
        let constant = (0..mesh.num_subdomains())
            .map(|k| {
                let block = &values[k * ne..(k + 1) * ne];
                block.iter().all(|v| *v == block[0]).then_some(block[0])
            })
            .collect();
        Ok(PermeabilityField { values, constant })
    }

    pub fn at(&self, elem: usize) -> Mat2 {
        self.values[elem]
    }

    /// The tensor of subdomain `k` when it is constant there.
    pub fn constant_on(&self, k: usize) -> Option<Mat2> {
        self.constant[k]
    }
}

/// Operators of one subdomain (local element and DOF numbering).
#[derive(Debug, Clone)]
pub struct SubdomainSystem {
    pub a1: CsrMatrix<f64>,
    pub a2: DVector<f64>,
    /// Elements × local DOFs.
    pub b: CsrMatrix<f64>,
    /// Local DOFs × all multipliers.
    pub c: CsrMatrix<f64>,
    pub d: DVector<f64>,
}

/// The discrete operators `A1, A2, B, C, D`, stored per subdomain block.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub blocks: Vec<SubdomainSystem>,
    pub n_l: usize,
}

impl SystemMatrices {
    pub fn a1(&self) -> CsrMatrix<f64> {
        block_diag(&self.blocks.iter().map(|b| b.a1.clone()).collect::<Vec<_>>())
    }

    pub fn a2(&self) -> DVector<f64> {
        concat(self.blocks.iter().map(|b| &b.a2))
    }

    pub fn b(&self) -> CsrMatrix<f64> {
        block_diag(&self.blocks.iter().map(|b| b.b.clone()).collect::<Vec<_>>())
    }

    pub fn c(&self) -> CsrMatrix<f64> {
        vstack(&self.blocks.iter().map(|b| b.c.clone()).collect::<Vec<_>>())
    }

    pub fn d(&self) -> DVector<f64> {
        concat(self.blocks.iter().map(|b| &b.d))
    }
}

fn concat<'a>(parts: impl Iterator<Item = &'a DVector<f64>>) -> DVector<f64> {
    let v: Vec<f64> = parts.flat_map(|p| p.iter().copied()).collect();
    DVector::from_vec(v)
}

/// Element matrix of `A1` in family order: `l_i l_j a_{ij}`.
fn element_a1(lengths: &[f64; 3], a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = lengths[i] * lengths[j] * a[i][j];
        }
    }
    out
}

fn assemble_subdomain(mesh: &HierMesh, perm: &PermeabilityField, k: usize) -> SubdomainSystem {
    let g = &mesh.geometry[k];
    let ne = mesh.elements_per_subdomain();
    let nd = mesh.edges_per_subdomain();
    let n_l = mesh.num_multipliers();
    let e0 = k * ne;
    let d0 = k * nd;
    let shared = perm
        .constant_on(k)
        .map(|kt| element_a1(&g.lengths, &coefficient_table(&g.up_b, g.jac, &kt)));

    let mut a1 = Vec::with_capacity(9 * ne);
    let mut a2 = DVector::zeros(nd);
    let mut b = Vec::with_capacity(3 * ne);
    let a2_elem: [f64; 3] = g.lengths.map(|l| SQRT3 / 6.0 * l * l);
    for loc in 0..ne {
        let elem = e0 + loc;
        let local = match shared {
            Some(m) => m,
            None => element_a1(&g.lengths, &coefficient_table(&g.up_b, g.jac, &perm.at(elem))),
        };
        let sign = mesh.element_orientation(elem).sign();
        let edges = mesh.local_element_edges(loc);
        for (r, &er) in edges.iter().enumerate() {
            for (c, &ec) in edges.iter().enumerate() {
                a1.push((er, ec, local[r][c]));
            }
            a2[er] += a2_elem[r];
            b.push((loc, er, sign * g.lengths[r]));
        }
    }
    let mut c = Vec::new();
    for ld in 0..nd {
        if let Some(mu) = mesh.dof_multiplier(d0 + ld) {
            c.push((ld, mu, mesh.dof_length(d0 + ld)));
        }
    }
    SubdomainSystem {
        a1: from_triplets(nd, nd, &a1),
        a2,
        b: from_triplets(ne, nd, &b),
        c: from_triplets(nd, n_l, &c),
        d: DVector::from_element(ne, g.element_area),
    }
}

/// Assemble all subdomain operators; subdomains are processed in parallel.
pub fn assemble_system(mesh: &HierMesh, perm: &PermeabilityField) -> SystemMatrices {
    let blocks = (0..mesh.num_subdomains())
        .into_par_iter()
        .map(|k| assemble_subdomain(mesh, perm, k))
        .collect();
    SystemMatrices {
        blocks,
        n_l: mesh.num_multipliers(),
    }
}

/// Reduced operators of one subdomain.
#[derive(Debug, Clone)]
pub struct SchurBlock {
    /// `B A2⁻¹ A1 A2⁻¹ Bᵀ`.
    pub m: CsrMatrix<f64>,
    /// `-B A2⁻¹ A1 A2⁻¹ C`, elements × multipliers.
    pub q: CsrMatrix<f64>,
    pub qt: CsrMatrix<f64>,
    /// `A2⁻¹ A1 A2⁻¹`.
    pub a_tilde: CsrMatrix<f64>,
    pub b: CsrMatrix<f64>,
    pub bt: CsrMatrix<f64>,
    pub c: CsrMatrix<f64>,
    pub ct: CsrMatrix<f64>,
    pub d: DVector<f64>,
}

/// The reduced system `D P' + M P + Q Λ = S`, `Qᵀ P + N Λ = T`.
#[derive(Debug, Clone)]
pub struct SchurBlocks {
    pub blocks: Vec<SchurBlock>,
    pub n: CsrMatrix<f64>,
    pub n_l: usize,
    pub block_size: usize,
}

/// Form the Schur blocks from the system matrices.
pub fn schur_blocks(sys: &SystemMatrices) -> SchurBlocks {
    let blocks: Vec<SchurBlock> = sys
        .blocks
        .par_iter()
        .map(|s| {
            let inv = s.a2.map(|v| 1.0 / v);
            let mut a_tilde = s.a1.clone();
            let (offsets, cols, vals) = a_tilde.csr_data_mut();
            for i in 0..offsets.len() - 1 {
                for p in offsets[i]..offsets[i + 1] {
                    vals[p] *= inv[i] * inv[cols[p]];
                }
            }
            let bt = s.b.transpose();
            let ab = &a_tilde * &bt;
            let m = &s.b * &ab;
            let ac = &a_tilde * &s.c;
            let q = (&s.b * &ac) * -1.0;
            SchurBlock {
                qt: q.transpose(),
                q,
                m,
                bt,
                ct: s.c.transpose(),
                a_tilde,
                b: s.b.clone(),
                c: s.c.clone(),
                d: s.d.clone(),
            }
        })
        .collect();
    let mut n = CsrMatrix::zeros(sys.n_l, sys.n_l);
    for (blk, s) in blocks.iter().zip(&sys.blocks) {
        let ac = &blk.a_tilde * &s.c;
        n = &n + &(&blk.ct * &ac);
    }
    SchurBlocks {
        block_size: blocks.first().map_or(0, |b| b.m.nrows()),
        blocks,
        n,
        n_l: sys.n_l,
    }
}

impl SchurBlocks {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_w(&self) -> usize {
        self.blocks.len() * self.block_size
    }

    /// Global block-diagonal `M`.
    pub fn m(&self) -> CsrMatrix<f64> {
        block_diag(&self.blocks.iter().map(|b| b.m.clone()).collect::<Vec<_>>())
    }

    pub fn q(&self) -> CsrMatrix<f64> {
        vstack(&self.blocks.iter().map(|b| b.q.clone()).collect::<Vec<_>>())
    }

    pub fn d(&self) -> DVector<f64> {
        concat(self.blocks.iter().map(|b| &b.d))
    }

    pub fn m_mul(&self, p: &DVector<f64>) -> DVector<f64> {
        let s = self.block_size;
        let parts: Vec<DVector<f64>> = self
            .blocks
            .par_iter()
            .enumerate()
            .map(|(k, b)| spmv(&b.m, &p.as_slice()[k * s..(k + 1) * s]))
            .collect();
        concat(parts.iter())
    }

    /// `Q λ`.
    pub fn q_mul(&self, lambda: &DVector<f64>) -> DVector<f64> {
        let parts: Vec<DVector<f64>> = self.blocks.par_iter().map(|b| spmv(&b.q, lambda.as_slice())).collect();
        concat(parts.iter())
    }

    /// `Qᵀ p`, summed over subdomains in order.
    pub fn qt_mul(&self, p: &DVector<f64>) -> DVector<f64> {
        let s = self.block_size;
        let parts: Vec<DVector<f64>> = self
            .blocks
            .par_iter()
            .enumerate()
            .map(|(k, b)| spmv(&b.qt, &p.as_slice()[k * s..(k + 1) * s]))
            .collect();
        let mut out = DVector::zeros(self.n_l);
        for part in &parts {
            out += part;
        }
        out
    }

    pub fn n_mul(&self, lambda: &DVector<f64>) -> DVector<f64> {
        spmv(&self.n, lambda.as_slice())
    }

    /// Reduced right-hand sides `S(t)` and `T(t)`.
    pub fn rhs(&self, data: &RhsData) -> (DVector<f64>, DVector<f64>) {
        let s = self.block_size;
        let nd = data.g_d.len() / self.blocks.len().max(1);
        let parts: Vec<(DVector<f64>, DVector<f64>)> = self
            .blocks
            .par_iter()
            .enumerate()
            .map(|(k, b)| {
                let ag = spmv(&b.a_tilde, &data.g_d.as_slice()[k * nd..(k + 1) * nd]);
                let mut sk = spmv(&b.b, ag.as_slice());
                for i in 0..s {
                    sk[i] += b.d[i] * data.f[k * s + i];
                }
                let tk = spmv(&b.ct, ag.as_slice());
                (sk, tk)
            })
            .collect();
        let s_vec = concat(parts.iter().map(|p| &p.0));
        let mut t_vec = data.g_n.clone();
        for (_, tk) in &parts {
            t_vec -= tk;
        }
        (s_vec, t_vec)
    }

    /// Normal fluxes `U = A2⁻¹ A1 A2⁻¹ (Bᵀ P − C Λ − G_D)`.
    pub fn recover_flux(&self, p: &DVector<f64>, lambda: &DVector<f64>, g_d: &DVector<f64>) -> DVector<f64> {
        let s = self.block_size;
        let nd = g_d.len() / self.blocks.len().max(1);
        let parts: Vec<DVector<f64>> = self
            .blocks
            .par_iter()
            .enumerate()
            .map(|(k, b)| {
                let mut w = spmv(&b.bt, &p.as_slice()[k * s..(k + 1) * s]);
                sparse::spmv_add(&b.c, -1.0, lambda.as_slice(), w.as_mut_slice());
                w -= g_d.rows(k * nd, nd);
                spmv(&b.a_tilde, w.as_slice())
            })
            .collect();
        concat(parts.iter())
    }
}

/// Discretized data at one time level.
#[derive(Debug, Clone)]
pub struct RhsData {
    /// `⟨g_D, v·n⟩` per velocity DOF (Simpson's rule).
    pub g_d: DVector<f64>,
    /// Element averages of `f` (edge-midpoint rule).
    pub f: DVector<f64>,
    /// `-⟨g_N, μ⟩` per multiplier (Simpson's rule).
    pub g_n: DVector<f64>,
}

/// Evaluate the data vectors at time `t`.
pub fn assemble_rhs(mesh: &HierMesh, pb: &ProblemSpec, t: f64) -> RhsData {
    let mut g_d = DVector::zeros(mesh.num_dofs());
    for dof in 0..mesh.num_dofs() {
        if mesh.dof_class(dof) == EdgeClass::DirichletBoundary {
            let [a, b] = mesh.dof_endpoints(dof);
            g_d[dof] = simpson_edge(|x| (pb.g_d)(x, t), a, b);
        }
    }
    let f = DVector::from_iterator(
        mesh.num_elements(),
        (0..mesh.num_elements()).map(|e| element_average(mesh, e, |x| (pb.f)(x, t))),
    );
    let mut g_n = DVector::zeros(mesh.num_multipliers());
    for (mu, &edge) in mesh.multiplier_edges().iter().enumerate() {
        if mesh.edge_class(edge) == EdgeClass::NeumannBoundary {
            let [a, b] = mesh.dof_endpoints(mesh.edge_dofs(edge).0);
            g_n[mu] = -simpson_edge(|x| (pb.g_n)(x, t), a, b);
        }
    }
    RhsData { g_d, f, g_n }
}

fn element_average(mesh: &HierMesh, e: usize, g: impl Fn(Vec2) -> f64) -> f64 {
    let tri = mesh.element_vertices(e);
    quad_midpoint_element(g, tri) / crate::reference::triangle_area(tri)
}

/// Element averages of `p0` by the edge-midpoint rule.
pub fn initial_pressure(mesh: &HierMesh, p0: impl Fn(Vec2) -> f64) -> DVector<f64> {
    DVector::from_iterator(
        mesh.num_elements(),
        (0..mesh.num_elements()).map(|e| {
            let v = mesh.element_vertices(e);
            let m = [(v[1] + v[2]) * 0.5, (v[0] + v[2]) * 0.5, (v[0] + v[1]) * 0.5];
            (p0(m[0]) + p0(m[1]) + p0(m[2])) / 3.0
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoundaryKind, BoundaryMarker, CoarseMesh};
    use crate::problems;
    use crate::reference::{ref_basis, ref_vertices};
    use crate::sparse::to_dense;
    use approx::assert_relative_eq;

    fn single(v: [Vec2; 3], kind: BoundaryKind) -> CoarseMesh {
        let markers = (0..3)
            .map(|i| BoundaryMarker {
                v: [i, (i + 1) % 3],
                kind,
            })
            .collect();
        CoarseMesh::new(v.to_vec(), vec![[0, 1, 2]], markers).unwrap()
    }

    fn square(top: BoundaryKind) -> CoarseMesh {
        let v = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ];
        let d = BoundaryKind::Dirichlet;
        let markers = vec![
            BoundaryMarker { v: [0, 1], kind: d },
            BoundaryMarker { v: [1, 2], kind: d },
            BoundaryMarker { v: [2, 3], kind: top },
            BoundaryMarker { v: [3, 0], kind: d },
        ];
        CoarseMesh::new(v, vec![[0, 1, 2], [0, 2, 3]], markers).unwrap()
    }

    fn setup(c: CoarseMesh, level: u32, k: Mat2) -> (HierMesh, SystemMatrices) {
        let mesh = HierMesh::refine(c, level).unwrap();
        let perm = PermeabilityField::new(&mesh, &Permeability::Uniform(k)).unwrap();
        let sys = assemble_system(&mesh, &perm);
        (mesh, sys)
    }

    #[test]
    fn reference_element_entries() {
        let r = ref_vertices();
        let (mesh, sys) = setup(single(r, BoundaryKind::Dirichlet), 0, Mat2::identity());
        let a2 = sys.a2();
        for i in 0..3 {
            assert_relative_eq!(a2[i], 2.0 * SQRT3 / 3.0, max_relative = 1e-15);
        }
        // A1 = (l_i l_j / 4) ∫ v̂_i·v̂_j with l = 2; oracle: interior three-point
        // Gauss rule, exact for quadratics and independent of the midpoint rule
        let a1 = to_dense(&sys.a1());
        let pts = [(1.0 / 6.0, 1.0 / 6.0), (2.0 / 3.0, 1.0 / 6.0), (1.0 / 6.0, 2.0 / 3.0)];
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = pts
                    .iter()
                    .map(|&(u, v)| {
                        let x = r[0] + (r[1] - r[0]) * u + (r[2] - r[0]) * v;
                        ref_basis(i, x).dot(&ref_basis(j, x))
                    })
                    .sum();
                assert_relative_eq!(a1[(i, j)], s * SQRT3 / 3.0, max_relative = 1e-13);
            }
        }
        assert_eq!(mesh.num_multipliers(), 0);
    }

    #[test]
    fn single_up_element_divergence_row() {
        let r = ref_vertices();
        let (_, sys) = setup(single(r, BoundaryKind::Dirichlet), 0, Mat2::identity());
        let b = to_dense(&sys.b());
        for d in 0..3 {
            assert_relative_eq!(b[(0, d)], 2.0, max_relative = 1e-15);
        }
        // constant field (1,0): normal components at each edge
        let mesh = HierMesh::refine(single(r, BoundaryKind::Dirichlet), 0).unwrap();
        let u: Vec<f64> = (0..3).map(|d| mesh.dof_normal(d).x).collect();
        let div: f64 = (0..3).map(|d| b[(0, d)] * u[d]).sum();
        assert!(div.abs() < 1e-14);
    }

    #[test]
    fn equilateral_areas() {
        let v = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.5, 3f64.sqrt() / 2.0)];
        let (_, sys) = setup(single(v, BoundaryKind::Dirichlet), 1, Mat2::identity());
        for &a in sys.d().iter() {
            assert_relative_eq!(a, SQRT3 / 16.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn structure_of_operators() {
        let k = Mat2::new(2.0, 1.0, 1.0, 2.0);
        let (mesh, sys) = setup(square(BoundaryKind::Neumann), 2, k);
        let a1 = to_dense(&sys.a1());
        assert_relative_eq!(a1.clone(), a1.transpose(), epsilon = 1e-15);
        for i in 0..mesh.num_dofs() {
            for j in 0..mesh.num_dofs() {
                if mesh.dof_subdomain(i) != mesh.dof_subdomain(j) {
                    assert_eq!(a1[(i, j)], 0.0);
                }
            }
        }
        let a2 = sys.a2();
        for d in 0..mesh.num_dofs() {
            let single = SQRT3 / 6.0 * mesh.dof_length(d).powi(2);
            let expect = if mesh.dof_class(d) == EdgeClass::SubdomainInterior { 2.0 } else { 1.0 };
            assert_relative_eq!(a2[d], expect * single, max_relative = 1e-14);
        }
        let b = sys.b();
        for row in b.row_iter() {
            assert_eq!(row.nnz(), 3);
        }
        let c = sys.c();
        let ct = c.transpose();
        for (mu, col) in ct.row_iter().enumerate() {
            let edge = mesh.multiplier_edges()[mu];
            let expect = if mesh.edge_class(edge) == EdgeClass::Interface { 2 } else { 1 };
            assert_eq!(col.nnz(), expect);
        }
    }

    #[test]
    fn schur_blocks_match_dense_products() {
        let k = Mat2::new(2.0, 0.5, 0.5, 1.0);
        let (_, sys) = setup(square(BoundaryKind::Neumann), 2, k);
        let sb = schur_blocks(&sys);
        let a1 = to_dense(&sys.a1());
        let a2inv = nalgebra::DMatrix::from_diagonal(&sys.a2().map(|v| 1.0 / v));
        let at = &a2inv * a1 * &a2inv;
        let b = to_dense(&sys.b());
        let c = to_dense(&sys.c());
        let m = &b * &at * b.transpose();
        let n = c.transpose() * &at * &c;
        let q = -(&b * &at * &c);
        let rel = |x: &nalgebra::DMatrix<f64>, y: &nalgebra::DMatrix<f64>| (x - y).norm() / y.norm();
        assert!(rel(&to_dense(&sb.m()), &m) < 1e-12);
        assert!(rel(&to_dense(&sb.n), &n) < 1e-12);
        assert!(rel(&to_dense(&sb.q()), &q) < 1e-12);
    }

    #[test]
    fn interior_rows_of_m_sum_to_zero() {
        let (mesh, sys) = setup(square(BoundaryKind::Dirichlet), 3, Mat2::new(3.0, 1.0, 1.0, 1.0));
        let sb = schur_blocks(&sys);
        let m = sb.m();
        for (e, row) in m.row_iter().enumerate() {
            if mesh.is_interior(e) {
                assert!(row.nnz() <= 10);
                let s: f64 = row.values().iter().sum();
                let scale: f64 = row.values().iter().map(|v| v.abs()).sum();
                assert!(s.abs() < 1e-13 * scale);
            }
        }
    }

    #[test]
    fn single_subdomain_has_no_multipliers() {
        let v = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.2, 0.9)];
        let (_, sys) = setup(single(v, BoundaryKind::Dirichlet), 2, Mat2::identity());
        let sb = schur_blocks(&sys);
        assert_eq!(sb.n.nrows(), 0);
        assert_eq!(sb.q().ncols(), 0);
    }

    #[test]
    fn rhs_data_quadrature() {
        let c = square(BoundaryKind::Neumann);
        let mesh = HierMesh::refine(c.clone(), 1).unwrap();
        let mut pb = problems::constant_problem(c, Permeability::Uniform(Mat2::identity()), 1.0, 1.0);
        let data = assemble_rhs(&mesh, &pb, 0.0);
        assert!(data.f.iter().all(|&v| v == 0.0));
        assert!(data.g_n.iter().all(|&v| v == 0.0));
        for d in 0..mesh.num_dofs() {
            if mesh.dof_class(d) == EdgeClass::DirichletBoundary {
                assert_relative_eq!(data.g_d[d], mesh.dof_length(d), max_relative = 1e-15);
            } else {
                assert_eq!(data.g_d[d], 0.0);
            }
        }
        pb.g_n = Arc::new(|_, _| 2.0);
        let data = assemble_rhs(&mesh, &pb, 0.0);
        for (mu, &e) in mesh.multiplier_edges().iter().enumerate() {
            if mesh.edge_class(e) == EdgeClass::NeumannBoundary {
                assert_relative_eq!(data.g_n[mu], -2.0 * 0.5, max_relative = 1e-15);
            }
        }
    }

    #[test]
    fn initial_pressure_quadrature() {
        let c = square(BoundaryKind::Dirichlet);
        let mesh = HierMesh::refine(c, 2).unwrap();
        let p = initial_pressure(&mesh, |_| 3.5);
        assert!(p.iter().all(|&v| v == 3.5));
        let p = initial_pressure(&mesh, |x| 1.0 - x.x);
        for e in 0..mesh.num_elements() {
            assert_relative_eq!(p[e], 1.0 - mesh.element_centroid(e).x, epsilon = 1e-15);
        }
        let v = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let mesh = HierMesh::refine(single(v, BoundaryKind::Dirichlet), 0).unwrap();
        let p = initial_pressure(&mesh, |x| x.x * x.x);
        assert_relative_eq!(p[0], (1.0 / 12.0) / 0.5, max_relative = 1e-14);
    }

    #[test]
    fn non_spd_permeability_rejected() {
        let mesh = HierMesh::refine(square(BoundaryKind::Dirichlet), 1).unwrap();
        let bad = Permeability::Uniform(Mat2::new(1.0, 2.0, 2.0, 1.0));
        assert!(matches!(
            PermeabilityField::new(&mesh, &bad),
            Err(AssemblyError::NotSpd { .. })
        ));
    }

    #[test]
    fn variable_field_flags_constancy() {
        let pb = problems::mackinnon_carey_problem();
        let mesh = HierMesh::refine(pb.coarse.clone(), 2).unwrap();
        let perm = PermeabilityField::new(&mesh, &pb.permeability).unwrap();
        for k in 0..4 {
            assert!(perm.constant_on(k).is_some());
        }
        let f = Permeability::Field(Arc::new(|x: Vec2| Mat2::identity() * (1.0 + x.x)));
        let perm = PermeabilityField::new(&mesh, &f).unwrap();
        assert!(perm.constant_on(0).is_none());
    }
}
